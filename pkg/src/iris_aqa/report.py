"""Static score-sheet rendering of a Judgment, as plain text or HTML.

Every number shown is read from the Judgment and only rounded for display
(two decimals, half-even).  The one derived figure is the displayed total,
which is the sum of the two displayed subtotals so that the sheet adds up
on its face.
"""

from __future__ import annotations

import html
from decimal import ROUND_HALF_EVEN, Decimal

from .data import WINDOW_SECONDS, SegmentLabeling
from .rubric import ActionType, Judgment

NOT_DETECTED = "NOT DETECTED"

COLOURS = {
    ActionType.Transition: "#d9d9d9",
    ActionType.Jump: "#e4572e",
    ActionType.Spin: "#2e86ab",
    ActionType.StepSequence: "#76b041",
}

_CENT = Decimal("0.01")


def money(value: float) -> Decimal:
    """Round to the displayed precision."""
    return Decimal(value).quantize(_CENT, rounding=ROUND_HALF_EVEN)


def displayed_totals(j: Judgment) -> tuple[Decimal, Decimal, Decimal]:
    tes, pcs = money(j.tes_total), money(j.pcs_total)
    return tes, pcs, tes + pcs


def timeline(j: Judgment) -> str:
    """One T/J/S/Q character per window, or an empty string without segments."""
    if not j.segments:
        return ""
    return SegmentLabeling.from_segments(j.segments).timeline()


def render_text(j: Judgment) -> str:
    tes, pcs, total = displayed_totals(j)
    lines = [f"Performance {j.performance_id}", "", "Technical elements"]
    lines.append(f"{'#':>3}  {'Element':<10} {'Type':<13} {'Base':>6} {'GOE':>7} {'Score':>7}")
    for e in j.elements:
        flag = f"  * {NOT_DETECTED}" if e.missing else ""
        lines.append(
            f"{e.seq:>3}  {e.name:<10} {e.action.name:<13} {money(e.base):>6} {money(e.goe):>7} {money(e.tes):>7}{flag}"
        )
    lines.append(f"{'TES':>41} {tes:>7}")
    lines += ["", f"Program components (factor {j.pcs_factor:.2f})"]
    for name, v in zip(j.pcs_component_names, j.pcs_components):
        lines.append(f"   {name:<38} {money(v):>7}")
    lines.append(f"{'PCS':>41} {pcs:>7}")
    lines += ["", f"Total score {total}  (TES {tes} + PCS {pcs})", ""]
    strip = timeline(j)
    if strip:
        lines.append(f"Timeline ({len(strip)} windows of {WINDOW_SECONDS} s; T=Transition J=Jump S=Spin Q=StepSequence)")
        lines.append(strip)
    else:
        lines.append("Timeline: not available (model has no segmentation)")
    if j.warnings:
        lines += ["", "Warnings"] + [f"  - {w}" for w in j.warnings]
    return "\n".join(lines) + "\n"


def _bar(j: Judgment) -> str:
    if not j.segments:
        return "<p>Timeline not available (model has no segmentation).</p>"
    n = sum(s.length for s in j.segments)
    cells = []
    for s in j.segments:
        width = 100.0 * s.length / n
        title = f"{s.action.name} windows {s.start}-{s.end - 1}"
        cells.append(
            f'<div class="seg" title="{title}" data-action="{s.action.code}" data-windows="{s.length}" '
            f'style="width:{width:.4f}%;background:{COLOURS[s.action]}"></div>'
        )
    legend = " ".join(
        f'<span style="background:{c};padding:0 0.6em">&nbsp;</span> {a.name}' for a, c in COLOURS.items()
    )
    return f'<div class="timeline">{"".join(cells)}</div>\n<p class="legend">{legend}</p>'


def render_html(j: Judgment) -> str:
    tes, pcs, total = displayed_totals(j)
    esc = html.escape
    rows = []
    for e in j.elements:
        cls = ' class="missing"' if e.missing else ""
        flag = f" &#9888; {NOT_DETECTED}" if e.missing else ""
        rows.append(
            f"<tr{cls}><td>{e.seq}</td><td>{esc(e.name)}</td><td>{e.action.name}</td>"
            f"<td>{money(e.base)}</td><td>{money(e.goe)}{flag}</td><td>{money(e.tes)}</td></tr>"
        )
    comps = "".join(
        f"<tr><td>{esc(n)}</td><td>{money(v)}</td></tr>" for n, v in zip(j.pcs_component_names, j.pcs_components)
    )
    warnings = "".join(f"<li>{esc(w)}</li>" for w in j.warnings)
    return f"""<!DOCTYPE html>
<html lang="en"><head><meta charset="utf-8"><title>{esc(j.performance_id)}</title>
<style>
body {{ font-family: sans-serif; margin: 2em; }}
table {{ border-collapse: collapse; margin-bottom: 1em; }}
td, th {{ border: 1px solid #999; padding: 0.2em 0.6em; text-align: right; }}
tr.missing td {{ color: #b00; font-weight: bold; }}
.timeline {{ display: flex; height: 2em; width: 100%; border: 1px solid #666; }}
.seg {{ height: 100%; }}
</style></head><body>
<h1>Performance {esc(j.performance_id)}</h1>
<p class="total">Total score <b>{total}</b> (TES {tes} + PCS {pcs})</p>
<h2>Technical elements</h2>
<table><tr><th>#</th><th>Element</th><th>Type</th><th>Base</th><th>GOE</th><th>Score</th></tr>
{"".join(rows)}
<tr><th colspan="5">TES</th><th>{tes}</th></tr></table>
<h2>Program components (factor {j.pcs_factor:.2f})</h2>
<table>{comps}<tr><th>PCS</th><th>{pcs}</th></tr></table>
<h2>Timeline</h2>
{_bar(j)}
{f"<h2>Warnings</h2><ul>{warnings}</ul>" if warnings else ""}
</body></html>
"""


def render(j: Judgment, fmt: str = "text") -> str:
    if fmt == "text":
        return render_text(j)
    if fmt == "html":
        return render_html(j)
    raise ValueError(f"unknown report format {fmt!r}")


def judgment_to_dict(j: Judgment) -> dict:
    """JSON-ready view of a Judgment with unrounded values."""
    return {
        "performance_id": j.performance_id,
        "elements": [
            {"seq": e.seq, "name": e.name, "action": e.action.name, "base": e.base, "goe": e.goe, "tes": e.tes,
             "missing": e.missing}
            for e in j.elements
        ],
        "pcs_components": dict(zip(j.pcs_component_names, j.pcs_components)),
        "pcs_factor": j.pcs_factor,
        "tes_total": j.tes_total,
        "pcs_total": j.pcs_total,
        "total_score": j.total_score,
        "segments": [{"action": s.action.name, "start": s.start, "end": s.end} for s in j.segments],
        "warnings": list(j.warnings),
    }
