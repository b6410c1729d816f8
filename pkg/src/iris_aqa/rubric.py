"""Score-sheet data model, JSON format, and additive score composition.

A score sheet lists the planned technical elements of a program in order,
each with a known base value, plus the five program components.  Scores are
composed exactly:

    element TES = base + GOE
    TES         = sum of element TES
    PCS         = factor * sum of components
    total       = TES + PCS
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

from .errors import ScoreSheetError

GOE_MIN, GOE_MAX = -5.0, 5.0
PCS_MIN, PCS_MAX = 0.0, 10.0
PCS_FACTORS = (1.00, 0.80)
N_COMPONENTS = 5
TOTALS_TOL = 1e-6

DEFAULT_COMPONENTS = (
    "Skating Skills",
    "Transitions",
    "Performance",
    "Composition",
    "Interpretation of the Music",
)


class ActionType(enum.IntEnum):
    """Broad element classes.  The integer value is the segmentation class index."""

    Transition = 0
    Jump = 1
    Spin = 2
    StepSequence = 3

    @property
    def code(self) -> str:
        return "TJSQ"[self.value]

    @classmethod
    def parse(cls, name: str) -> "ActionType":
        try:
            return cls[name]
        except KeyError:
            raise ValueError(f"unknown action type {name!r}") from None

    @classmethod
    def from_code(cls, code: str) -> "ActionType":
        i = "TJSQ".find(code)
        if len(code) != 1 or i < 0:
            raise ValueError(f"unknown action code {code!r}")
        return cls(i)


ELEMENT_TYPES = (ActionType.Jump, ActionType.Spin, ActionType.StepSequence)
N_CLASSES = len(ActionType)


@dataclass(frozen=True)
class PlannedElement:
    seq: int
    name: str
    action: ActionType
    base: float


@dataclass(frozen=True)
class GroundTruth:
    goe: tuple[float, ...]
    pcs: tuple[float, ...]
    tes_total: float | None = None
    pcs_total: float | None = None
    total: float | None = None


@dataclass(frozen=True)
class ScoreSheet:
    performance_id: str
    pcs_factor: float
    elements: tuple[PlannedElement, ...]
    pcs_components: tuple[str, ...] = DEFAULT_COMPONENTS
    truth: GroundTruth | None = None

    @property
    def bases(self) -> list[float]:
        return [e.base for e in self.elements]

    @property
    def actions(self) -> list[ActionType]:
        return [e.action for e in self.elements]

    def without_truth(self) -> "ScoreSheet":
        return replace(self, truth=None)


@dataclass(frozen=True)
class Segment:
    action: ActionType
    start: int
    end: int  # exclusive

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class ElementScore:
    seq: int
    name: str
    action: ActionType
    base: float
    goe: float
    tes: float
    missing: bool = False


@dataclass(frozen=True)
class Judgment:
    performance_id: str
    elements: tuple[ElementScore, ...]
    pcs_components: tuple[float, ...]
    pcs_component_names: tuple[str, ...]
    pcs_factor: float
    tes_total: float
    pcs_total: float
    total_score: float
    segments: tuple[Segment, ...] = ()
    warnings: tuple[str, ...] = field(default=())

    @property
    def goe(self) -> list[float]:
        return [e.goe for e in self.elements]


# --------------------------------------------------------------------------
# parsing


def _require(obj: dict, key: str, where: str) -> Any:
    if key not in obj:
        raise ScoreSheetError("missing_field", f"required field {key!r} is absent", where)
    return obj[key]


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScoreSheetError("bad_value", f"expected a number, got {value!r}", where)
    v = float(value)
    if not math.isfinite(v):
        raise ScoreSheetError("bad_value", "value must be finite", where)
    return v


def _numbers(value: Any, where: str) -> tuple[float, ...]:
    if not isinstance(value, list):
        raise ScoreSheetError("bad_value", f"expected a list of numbers, got {type(value).__name__}", where)
    return tuple(_number(v, f"{where}[{i}]") for i, v in enumerate(value))


def _parse_factor(value: Any) -> float:
    f = _number(value, "pcs_factor")
    for allowed in PCS_FACTORS:
        if abs(f - allowed) < 1e-12:
            return allowed
    raise ScoreSheetError("pcs_factor", f"factor must be 1.00 or 0.80, got {f}", "pcs_factor")


def _parse_element(raw: Any, i: int) -> PlannedElement:
    where = f"elements[{i}]"
    if not isinstance(raw, dict):
        raise ScoreSheetError("bad_value", "element must be an object", where)
    seq = _require(raw, "seq", where)
    if isinstance(seq, bool) or not isinstance(seq, int):
        raise ScoreSheetError("bad_value", f"seq must be an integer, got {seq!r}", f"{where}.seq")
    name = _require(raw, "name", where)
    if not isinstance(name, str):
        raise ScoreSheetError("bad_value", "name must be a string", f"{where}.name")
    action_name = _require(raw, "action", where)
    try:
        action = ActionType.parse(action_name)
    except (ValueError, TypeError):
        raise ScoreSheetError("bad_value", f"unknown action {action_name!r}", f"{where}.action") from None
    if action is ActionType.Transition:
        raise ScoreSheetError("bad_value", "Transition is not a plannable element", f"{where}.action")
    base = _number(_require(raw, "base", where), f"{where}.base")
    if base < 0:
        raise ScoreSheetError("bad_value", f"base value must be >= 0, got {base}", f"{where}.base")
    return PlannedElement(seq, name, action, base)


def _parse_truth(raw: Any, n_elements: int) -> GroundTruth:
    if not isinstance(raw, dict):
        raise ScoreSheetError("bad_value", "truth must be an object", "truth")
    goe = _numbers(_require(raw, "goe", "truth"), "truth.goe")
    if len(goe) != n_elements:
        raise ScoreSheetError("bad_value", f"{len(goe)} GOE values for {n_elements} elements", "truth.goe")
    for i, g in enumerate(goe):
        if not GOE_MIN <= g <= GOE_MAX:
            raise ScoreSheetError("goe_range", f"GOE {g} outside [{GOE_MIN:g}, {GOE_MAX:g}]", f"truth.goe[{i}]")
    pcs = _numbers(_require(raw, "pcs", "truth"), "truth.pcs")
    if len(pcs) != N_COMPONENTS:
        raise ScoreSheetError("component_count", f"expected {N_COMPONENTS} PCS values, got {len(pcs)}", "truth.pcs")
    totals = {}
    for key in ("tes_total", "pcs_total", "total"):
        totals[key] = _number(raw[key], f"truth.{key}") if key in raw else None
    return GroundTruth(goe, pcs, **totals)


def sheet_from_dict(doc: Any) -> ScoreSheet:
    """Validate a decoded JSON object and build a :class:`ScoreSheet`."""
    if not isinstance(doc, dict):
        raise ScoreSheetError("syntax", "top level must be a JSON object")
    pid = _require(doc, "performance_id", "performance_id")
    if not isinstance(pid, str) or not pid:
        raise ScoreSheetError("bad_value", "performance_id must be a non-empty string", "performance_id")
    factor = _parse_factor(_require(doc, "pcs_factor", "pcs_factor"))
    raw_elements = _require(doc, "elements", "elements")
    if not isinstance(raw_elements, list):
        raise ScoreSheetError("bad_value", "elements must be a list", "elements")
    elements = [_parse_element(e, i) for i, e in enumerate(raw_elements)]
    seen: set[int] = set()
    for i, e in enumerate(elements):
        if e.seq in seen:
            raise ScoreSheetError("duplicate_seq", f"sequence index {e.seq} appears twice", f"elements[{i}].seq")
        seen.add(e.seq)
    if sorted(seen) != list(range(1, len(elements) + 1)):
        raise ScoreSheetError("sequence_gap", f"sequence indices must be 1..{len(elements)}, got {sorted(seen)}", "elements")
    # truth GOE follows document order, so permute it together with the elements
    order = sorted(range(len(elements)), key=lambda i: elements[i].seq)
    elements = [elements[i] for i in order]
    names = _require(doc, "pcs_components", "pcs_components")
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise ScoreSheetError("bad_value", "pcs_components must be a list of strings", "pcs_components")
    if len(names) != N_COMPONENTS:
        raise ScoreSheetError("component_count", f"expected {N_COMPONENTS} components, got {len(names)}", "pcs_components")
    truth = _parse_truth(doc["truth"], len(elements)) if doc.get("truth") is not None else None
    if truth is not None:
        truth = replace(truth, goe=tuple(truth.goe[i] for i in order))
    sheet = ScoreSheet(pid, factor, tuple(elements), tuple(names), truth)
    if truth is not None:
        _check_recorded_totals(sheet)
    return sheet


def parse_score_sheet(document: str) -> ScoreSheet:
    """Parse and fully validate a JSON score-sheet document."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ScoreSheetError("syntax", exc.msg, f"line {exc.lineno}, column {exc.colno}") from None
    return sheet_from_dict(doc)


def _check_recorded_totals(sheet: ScoreSheet) -> None:
    truth = sheet.truth
    assert truth is not None
    tes = sum(b + g for b, g in zip(sheet.bases, truth.goe))
    pcs = sheet.pcs_factor * sum(truth.pcs)
    expected = {"tes_total": tes, "pcs_total": pcs, "total": tes + pcs}
    for key, value in expected.items():
        recorded = getattr(truth, key)
        if recorded is not None and abs(recorded - value) > TOTALS_TOL:
            raise ScoreSheetError(
                "totals_mismatch", f"recorded {recorded} but components compose to {value}", f"truth.{key}"
            )


def sheet_to_dict(sheet: ScoreSheet) -> dict:
    doc: dict[str, Any] = {
        "performance_id": sheet.performance_id,
        "pcs_factor": sheet.pcs_factor,
        "elements": [
            {"seq": e.seq, "name": e.name, "action": e.action.name, "base": e.base} for e in sheet.elements
        ],
        "pcs_components": list(sheet.pcs_components),
    }
    if sheet.truth is not None:
        t = sheet.truth
        truth: dict[str, Any] = {"goe": list(t.goe), "pcs": list(t.pcs)}
        for key in ("tes_total", "pcs_total", "total"):
            if getattr(t, key) is not None:
                truth[key] = getattr(t, key)
        doc["truth"] = truth
    return doc


def serialize_score_sheet(sheet: ScoreSheet) -> str:
    return json.dumps(sheet_to_dict(sheet), indent=2) + "\n"


# --------------------------------------------------------------------------
# counting and composition


def element_counts(sheet: ScoreSheet | Sequence[ActionType]) -> dict[ActionType, int]:
    """Number of planned elements of each non-Transition type."""
    actions = sheet.actions if isinstance(sheet, ScoreSheet) else list(sheet)
    counts = {a: 0 for a in ELEMENT_TYPES}
    for a in actions:
        counts[a] += 1
    return counts


def compose_judgment(
    sheet: ScoreSheet,
    goe: Sequence[float],
    pcs: Sequence[float],
    segments: Sequence[Segment] = (),
    missing: Sequence[bool] | None = None,
    warnings: Sequence[str] = (),
) -> Judgment:
    """Assemble per-element and total scores by exact addition.

    No clamping or rounding happens here; the caller supplies already-bounded
    head outputs.
    """
    goe = [float(g) for g in goe]
    pcs = [float(p) for p in pcs]
    if len(goe) != len(sheet.elements):
        raise ValueError(f"{len(goe)} GOE values for {len(sheet.elements)} planned elements")
    if len(pcs) != N_COMPONENTS:
        raise ValueError(f"expected {N_COMPONENTS} PCS values, got {len(pcs)}")
    if not all(math.isfinite(v) for v in goe + pcs):
        raise ValueError("GOE and PCS inputs must be finite")
    flags = list(missing) if missing is not None else [False] * len(goe)
    if len(flags) != len(goe):
        raise ValueError("missing flags must match the element count")
    scored = tuple(
        ElementScore(e.seq, e.name, e.action, e.base, g, e.base + g, bool(m))
        for e, g, m in zip(sheet.elements, goe, flags)
    )
    tes_total = math.fsum(s.tes for s in scored)
    pcs_total = sheet.pcs_factor * math.fsum(pcs)
    return Judgment(
        performance_id=sheet.performance_id,
        elements=scored,
        pcs_components=tuple(pcs),
        pcs_component_names=sheet.pcs_components,
        pcs_factor=sheet.pcs_factor,
        tes_total=tes_total,
        pcs_total=pcs_total,
        total_score=tes_total + pcs_total,
        segments=tuple(segments),
        warnings=tuple(warnings),
    )


def truth_judgment(sheet: ScoreSheet) -> Judgment:
    """The recorded ground truth composed into a judgment."""
    if sheet.truth is None:
        raise ValueError(f"sheet {sheet.performance_id!r} carries no ground truth")
    return compose_judgment(sheet, sheet.truth.goe, sheet.truth.pcs)
