"""Plain-text and CSV renderings of evaluation reports and the ablation table."""

from __future__ import annotations

import csv
import io
from typing import Sequence

from .pipeline import AblationRow, EvaluationReport

TARGETS = ("tes", "pcs", "total")
FEATURE_COLUMNS = ("Score", "TES+PCS", "Subscores", "DeltaSubscores", "Segments")


def fmt(value: float | None, digits: int = 3) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


def evaluation_text(report: EvaluationReport) -> str:
    lines = [f"Variant {report.variant} on {report.n_records} records", ""]
    lines.append(f"{'':<10}{'TES':>8}{'PCS':>8}{'Total':>8}")
    for name, d in (("Spearman", report.spearman), ("Pearson", report.pearson)):
        lines.append(f"{name:<10}" + "".join(f"{fmt(d.get(k)):>8}" for k in TARGETS))
    lines += ["", f"Dice {fmt(report.dice)}   IoU {fmt(report.iou)}"]
    if report.tertiles:
        lines += ["", "TES absolute error by IoU tertile"]
        lines.append(f"{'Tertile':<8}{'n':>4}{'IoU range':>18}{'mean |err|':>12}{'stderr':>9}")
        for t in report.tertiles:
            rng = f"{t.iou_min:.3f}-{t.iou_max:.3f}"
            lines.append(f"{t.name:<8}{t.n:>4}{rng:>18}{t.mean_abs_tes_error:>12.3f}{t.stderr:>9.3f}")
    else:
        lines += ["", "IoU tertiles: n/a (no segmentation or no TES predictions)"]
    if report.notes:
        lines += ["", "Notes"] + [f"  - {n}" for n in report.notes]
    return "\n".join(lines) + "\n"


def _csv(rows: Sequence[Sequence[object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def _cell(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def evaluation_csv(report: EvaluationReport) -> str:
    """Long format: ``metric,group,value`` (empty value when undefined)."""
    rows: list[list[object]] = [["metric", "group", "value"]]
    for name, d in (("spearman", report.spearman), ("pearson", report.pearson)):
        rows += [[name, k.upper(), _cell(d.get(k))] for k in TARGETS]
    rows += [["dice", "all", _cell(report.dice)], ["iou", "all", _cell(report.iou)]]
    for t in report.tertiles:
        rows += [
            ["tertile_n", t.name, t.n],
            ["tertile_iou_min", t.name, _cell(t.iou_min)],
            ["tertile_iou_max", t.name, _cell(t.iou_max)],
            ["tertile_mean_abs_tes_error", t.name, _cell(t.mean_abs_tes_error)],
            ["tertile_stderr", t.name, _cell(t.stderr)],
        ]
    return _csv(rows)


def records_csv(report: EvaluationReport) -> str:
    rows: list[list[object]] = [
        ["performance_id", "tes", "pcs", "total", "true_tes", "true_pcs", "true_total", "dice", "iou", "flags"]
    ]
    for r in report.records:
        rows.append(
            [r.performance_id, _cell(r.tes), _cell(r.pcs), _cell(r.total), _cell(r.true_tes), _cell(r.true_pcs),
             _cell(r.true_total), _cell(r.dice), _cell(r.iou), ";".join(r.flags)]
        )
    return _csv(rows)


def ablation_text(rows: Sequence[AblationRow]) -> str:
    feat_w = [max(len(c), 3) + 2 for c in FEATURE_COLUMNS]
    head1 = "".join(f"{c:^{w}}" for c, w in zip(FEATURE_COLUMNS, feat_w))
    lines = [
        f"{'':<{len(head1)}} | {'Spearman':^24} | {'Pearson':^24} |",
        f"{head1} | {'TES':>7} {'PCS':>7} {'Total':>7} | {'TES':>7} {'PCS':>7} {'Total':>7} |",
        "-" * (len(head1) + 56),
    ]
    for row in rows:
        marks = "".join(f"{'x' if row.variant.features[c] else '':^{w}}" for c, w in zip(FEATURE_COLUMNS, feat_w))
        sp = " ".join(f"{fmt(row.report.spearman.get(k)):>7}" for k in TARGETS)
        pe = " ".join(f"{fmt(row.report.pearson.get(k)):>7}" for k in TARGETS)
        lines.append(f"{marks} | {sp} | {pe} | {row.variant.value}")
    return "\n".join(lines) + "\n"


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    header = ["variant", *FEATURE_COLUMNS]
    header += [f"spearman_{k}" for k in TARGETS] + [f"pearson_{k}" for k in TARGETS] + ["dice", "iou", "epochs"]
    out: list[list[object]] = [header]
    for row in rows:
        rep = row.report
        out.append(
            [row.variant.value, *(int(row.variant.features[c]) for c in FEATURE_COLUMNS)]
            + [_cell(rep.spearman.get(k)) for k in TARGETS]
            + [_cell(rep.pearson.get(k)) for k in TARGETS]
            + [_cell(rep.dice), _cell(rep.iou), row.epochs]
        )
    return _csv(out)
