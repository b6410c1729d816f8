"""Joint training, inference and evaluation across model variants."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import heads as H
from . import kernel as K
from . import segmentation as S
from .data import (
    DEFAULT_MAX_SEGMENT_WINDOWS,
    EmbeddingSequence,
    PerformanceRecord,
    SegmentLabeling,
    batch_sequences,
    pad_and_slice,
)
from .errors import DatasetError, DivergenceError, MetricError, VariantError
from .metrics import dice, iou, pearson, spearman, tertile_groups
from .rubric import (
    ELEMENT_TYPES,
    GOE_MAX,
    GOE_MIN,
    N_COMPONENTS,
    ActionType,
    Judgment,
    ScoreSheet,
    Segment,
    compose_judgment,
    element_counts,
)

log = logging.getLogger(__name__)


class ModelVariant(enum.Enum):
    """Ablation variants, from a bare score regressor to the full model."""

    ScoreOnly = "score-only"
    TesPcs = "tes-pcs"
    Subscores = "subscores"
    SubscoresWithSegments = "subscores-seg"
    DeltaSubscores = "delta"
    DeltaSubscoresWithSegments = "full"

    @property
    def uses_segments(self) -> bool:
        return self in (ModelVariant.SubscoresWithSegments, ModelVariant.DeltaSubscoresWithSegments)

    @property
    def element_mode(self) -> str | None:
        if self in (ModelVariant.Subscores, ModelVariant.SubscoresWithSegments):
            return "absolute"
        if self in (ModelVariant.DeltaSubscores, ModelVariant.DeltaSubscoresWithSegments):
            return "delta"
        return None

    @property
    def sequence_targets(self) -> tuple[str, ...]:
        if self is ModelVariant.ScoreOnly:
            return ("total",)
        if self is ModelVariant.TesPcs:
            return ("tes", "pcs")
        return ()

    @property
    def needs_base(self) -> bool:
        return self.element_mode == "delta"

    @property
    def features(self) -> dict[str, bool]:
        """Which interpretability outputs the variant predicts (ablation table columns)."""
        return {
            "Score": True,
            "TES+PCS": self is not ModelVariant.ScoreOnly,
            "Subscores": self.element_mode == "absolute",
            "DeltaSubscores": self.element_mode == "delta",
            "Segments": self.uses_segments,
        }

    @property
    def tag(self) -> int:
        return list(ModelVariant).index(self)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 60
    max_epochs: int = 300
    seg_weight: float = 1.0
    goe_weight: float = 1.0
    pcs_weight: float = 1.0
    score_weight: float = 1.0
    variant: ModelVariant = ModelVariant.DeltaSubscoresWithSegments
    seed: int = 0
    patience: int = 20
    min_delta: float = 1e-6
    max_segment_windows: int = DEFAULT_MAX_SEGMENT_WINDOWS
    mstcn: S.MsTcnConfig = S.MsTcnConfig()
    head: H.HeadConfig = H.HeadConfig()

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ValueError("learning rate, batch size and epoch budget must be positive")
        weights = (self.seg_weight, self.goe_weight, self.pcs_weight, self.score_weight)
        if min(weights) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.max_segment_windows <= 0 or self.patience <= 0:
            raise ValueError("max_segment_windows and patience must be positive")


@dataclass
class ModelParams:
    variant: ModelVariant
    nets: dict[str, K.Params]  # subset of "seg", "elem", "pcs", "seq"
    meta: dict = field(default_factory=dict)

    def flat(self) -> K.Params:
        return {f"{net}/{k}": v for net, p in self.nets.items() for k, v in p.items()}

    @classmethod
    def from_flat(cls, variant: ModelVariant, flat: Mapping[str, np.ndarray], meta: dict) -> "ModelParams":
        nets: dict[str, K.Params] = {}
        for key, value in flat.items():
            net, name = key.split("/", 1)
            nets.setdefault(net, {})[name] = value
        return cls(variant, nets, dict(meta))

    @property
    def dim(self) -> int:
        return int(self.meta["dim"])

    @property
    def max_segment_windows(self) -> int:
        return int(self.meta.get("max_segment_windows", DEFAULT_MAX_SEGMENT_WINDOWS))


def element_range(variant: ModelVariant) -> tuple[float, float]:
    return (GOE_MIN, GOE_MAX) if variant.element_mode == "delta" else (-np.inf, np.inf)


def init_model(rng: np.random.Generator, dim: int, config: TrainConfig) -> ModelParams:
    v = config.variant
    nets: dict[str, K.Params] = {}
    if v.uses_segments:
        nets["seg"] = S.init_mstcn(rng, dim, config.mstcn)
    if v.element_mode:
        nets["elem"] = H.init_head(rng, dim, 1, H.N_CONDITIONS, config.head)
        nets["pcs"] = H.init_head(rng, dim, N_COMPONENTS, 0, config.head)
    if v.sequence_targets:
        nets["seq"] = H.init_head(rng, dim, len(v.sequence_targets), 0, config.head)
    meta = {"dim": dim, "max_segment_windows": config.max_segment_windows}
    return ModelParams(v, nets, meta)


# --------------------------------------------------------------------------
# training data preparation


def uniform_segments(valid_count: int, actions: Sequence[ActionType]) -> list[Segment]:
    """Equal contiguous chunks, one per planned element, for variants without segmentation."""
    n = len(actions)
    if n == 0 or valid_count == 0:
        return []
    edges = [round(i * valid_count / n) for i in range(n + 1)]
    return [Segment(a, edges[i], max(edges[i + 1], edges[i] + 1)) for i, a in enumerate(actions) if edges[i] < valid_count]


@dataclass(frozen=True)
class _Prepared:
    x: np.ndarray
    labels: np.ndarray
    blocks: np.ndarray
    lengths: np.ndarray
    actions: list[ActionType]
    elem_targets: np.ndarray
    pcs_targets: np.ndarray
    seq_targets: np.ndarray


def _prepare(record: PerformanceRecord, variant: ModelVariant, max_windows: int) -> _Prepared:
    sheet = record.sheet
    if sheet.truth is None:
        raise DatasetError("training record carries no ground truth", record.id)
    goe, pcs = H.training_targets(record)
    bases = np.asarray(sheet.bases, dtype=float)
    T = record.embeddings.valid_count
    if variant.uses_segments:
        if record.truth_labels is None:
            raise DatasetError("segmentation variants need window labels", record.id)
        segs = record.truth_labels.element_segments
        labels = record.truth_labels.labels
    else:
        segs = uniform_segments(T, sheet.actions)
        labels = np.zeros(T, dtype=np.int64)
    blocks, lengths = pad_and_slice(record.embeddings, segs, max_windows)
    elem_targets = goe if variant.element_mode == "delta" else bases + goe
    tes = float(np.sum(bases + goe))
    pcs_total = sheet.pcs_factor * float(np.sum(pcs))
    seq = {"total": tes + pcs_total, "tes": tes, "pcs": pcs_total}
    return _Prepared(
        record.embeddings.valid,
        np.asarray(labels, dtype=np.int64),
        blocks,
        lengths,
        [s.action for s in segs],
        elem_targets[: len(segs)],
        pcs,
        np.array([seq[k] for k in variant.sequence_targets]),
    )


def _stack(batch: Sequence[_Prepared]):
    seqs = [EmbeddingSequence.from_valid(p.x) for p in batch]
    x, mask = batch_sequences(seqs)
    labels = np.zeros(mask.shape, dtype=np.int64)
    for i, p in enumerate(batch):
        labels[i, : len(p.labels)] = p.labels
    return x, mask, labels


def loss_and_grads(
    flat: Mapping[str, np.ndarray], batch: Sequence[_Prepared], variant: ModelVariant, config: TrainConfig
) -> tuple[dict[str, float], K.Params]:
    """Weighted joint loss over a batch and its gradient for every trainable array."""
    model = ModelParams.from_flat(variant, flat, {})
    x, mask, labels = _stack(batch)
    losses = {"seg": 0.0, "goe": 0.0, "pcs": 0.0, "score": 0.0}
    grads: K.Params = {}

    def put(net: str, g: K.Params, w: float) -> None:
        for k, v in g.items():
            grads[f"{net}/{k}"] = w * v

    if "seg" in model.nets:
        p = model.nets["seg"]
        outs, cache = S.forward(p, x, mask)
        l, d = S.segmentation_loss(outs, labels, mask, config.mstcn.lambda_smooth, config.mstcn.epsilon)
        losses["seg"] = l
        put("seg", S.backward(p, d, cache), config.seg_weight)
    if "elem" in model.nets:
        p = model.nets["elem"]
        blocks = np.concatenate([b.blocks for b in batch])
        lengths = np.concatenate([b.lengths for b in batch])
        actions = [a for b in batch for a in b.actions]
        targets = np.concatenate([b.elem_targets for b in batch])
        if len(actions):
            # masked tail windows contribute nothing; trimming only saves work
            blocks = blocks[:, : max(int(lengths.max()), 1)]
            lo, hi = element_range(variant)
            out, cache = H.head_forward(p, blocks, H.block_mask(lengths, blocks.shape[1]), H.one_hot_actions(actions), lo, hi)
            l, d = K.mse(out[:, 0], targets)
            losses["goe"] = l
            put("elem", H.head_backward(p, d[:, None], cache), config.goe_weight)
        p = model.nets["pcs"]
        out, cache = H.head_forward(p, x, mask, None, 0.0, 10.0)
        l, d = K.mse(out, np.stack([b.pcs_targets for b in batch]))
        losses["pcs"] = l
        put("pcs", H.head_backward(p, d, cache), config.pcs_weight)
    if "seq" in model.nets:
        p = model.nets["seq"]
        out, cache = H.head_forward(p, x, mask)
        l, d = K.mse(out, np.stack([b.seq_targets for b in batch]))
        losses["score"] = l
        put("seq", H.head_backward(p, d, cache), config.score_weight)
    losses["total"] = (
        config.seg_weight * losses["seg"]
        + config.goe_weight * losses["goe"]
        + config.pcs_weight * losses["pcs"]
        + config.score_weight * losses["score"]
    )
    return losses, grads


LOSS_COLUMNS = ("seg", "goe", "pcs", "score", "total")


@dataclass
class TrainingLog:
    rows: list[dict[str, float]] = field(default_factory=list)
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.rows)

    @staticmethod
    def csv_header() -> str:
        return "epoch," + ",".join(LOSS_COLUMNS) + "\n"

    @staticmethod
    def csv_row(row: Mapping[str, float]) -> str:
        return f"{int(row['epoch'])}," + ",".join(repr(float(row[c])) for c in LOSS_COLUMNS) + "\n"

    def to_csv(self) -> str:
        return self.csv_header() + "".join(self.csv_row(r) for r in self.rows)


def train(
    records: Sequence[PerformanceRecord],
    config: TrainConfig = TrainConfig(),
    on_epoch: Callable[[dict[str, float]], None] | None = None,
) -> tuple[ModelParams, TrainingLog]:
    """Seeded mini-batch Adam on the variant's joint loss.

    Element heads are trained on ground-truth segments; inference uses the
    corrected predicted segments.  Raises :class:`DivergenceError` if a loss
    goes non-finite.
    """
    config.validate()
    if not records:
        raise DatasetError("empty training set")
    variant = config.variant
    rng = np.random.default_rng(config.seed)
    dim = records[0].embeddings.dim
    model = init_model(rng, dim, config)
    prepared = [_prepare(r, variant, config.max_segment_windows) for r in records]

    if "elem" in model.nets:
        model.nets["elem"] = H.fit_normalisation(model.nets["elem"], np.concatenate([p.elem_targets for p in prepared]))
        model.nets["pcs"] = H.fit_normalisation(model.nets["pcs"], np.stack([p.pcs_targets for p in prepared]))
    if "seq" in model.nets:
        model.nets["seq"] = H.fit_normalisation(model.nets["seq"], np.stack([p.seq_targets for p in prepared]))

    flat = model.flat()
    state = K.adam_init(flat, lr=config.learning_rate)
    log_ = TrainingLog()
    best = math.inf
    stale = 0
    n = len(prepared)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        sums = dict.fromkeys(LOSS_COLUMNS, 0.0)
        for start in range(0, n, config.batch_size):
            batch = [prepared[i] for i in order[start : start + config.batch_size]]
            losses, grads = loss_and_grads(flat, batch, variant, config)
            if not all(math.isfinite(v) for v in losses.values()):
                raise DivergenceError(f"non-finite loss at epoch {epoch}: {losses}")
            flat, state = K.adam_step(flat, grads, state)
            for k in LOSS_COLUMNS:
                sums[k] += losses[k] * len(batch)
        row = {"epoch": float(epoch), **{k: v / n for k, v in sums.items()}}
        log_.rows.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if row["total"] < best - config.min_delta:
            best = row["total"]
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                log_.stopped_early = True
                log.info("early stop at epoch %d", epoch)
                break
    for v in flat.values():
        if not np.all(np.isfinite(v)):
            raise DivergenceError("parameters became non-finite")
    return ModelParams.from_flat(variant, flat, model.meta), log_


# --------------------------------------------------------------------------
# inference


def assign_runs(sheet: ScoreSheet, runs: Sequence[Segment]) -> list[Segment | None]:
    """Match detected runs to planned elements, per type, in temporal order."""
    by_type = {a: [r for r in sorted(runs, key=lambda r: r.start) if r.action is a] for a in ELEMENT_TYPES}
    used = dict.fromkeys(ELEMENT_TYPES, 0)
    out: list[Segment | None] = []
    for e in sheet.elements:
        k = used[e.action]
        out.append(by_type[e.action][k] if k < len(by_type[e.action]) else None)
        used[e.action] += 1
    return out


def segment_sequence(params: ModelParams, embeddings: EmbeddingSequence, sheet: ScoreSheet) -> tuple[SegmentLabeling, SegmentLabeling]:
    """Raw decoded labels and their count-corrected version."""
    outs = S.mstcn_forward(embeddings, params.nets["seg"])
    raw = S.decode_labels(outs[-1], embeddings.mask)
    return raw, S.correct_segments(raw, element_counts(sheet))


def _check_dim(params: ModelParams, embeddings: EmbeddingSequence) -> None:
    if embeddings.dim != params.dim:
        raise VariantError(f"model expects embedding dimension {params.dim}, got {embeddings.dim}")


def predict(params: ModelParams, embeddings: EmbeddingSequence, sheet: ScoreSheet) -> Judgment:
    """Score a performance from its embeddings and its planned elements.

    Never reads ground truth from ``sheet``.  Planned elements without a
    detected run are flagged missing and given GOE 0.
    """
    v = params.variant
    if v.element_mode is None:
        raise VariantError(f"variant {v.value!r} does not predict per-element scores")
    _check_dim(params, embeddings)
    sheet = sheet.without_truth()
    notes: list[str] = []
    if v.uses_segments:
        _, corrected = segment_sequence(params, embeddings, sheet)
        assigned = assign_runs(sheet, corrected.element_segments)
        segments = corrected.segments
    else:
        chunks = uniform_segments(embeddings.valid_count, sheet.actions)
        assigned = list(chunks) + [None] * (len(sheet.elements) - len(chunks))
        segments = []
    present = [i for i, s in enumerate(assigned) if s is not None]
    missing = [s is None for s in assigned]
    for e, m in zip(sheet.elements, missing):
        if m:
            notes.append(f"element {e.seq} ({e.name}, {e.action.name}) not detected; GOE set to 0.0")
    lo, hi = element_range(v)
    blocks, lengths = pad_and_slice(embeddings, [assigned[i] for i in present], params.max_segment_windows)
    preds = H.predict_goe_batch(params.nets["elem"], blocks, lengths, [sheet.elements[i].action for i in present], lo, hi)
    goe = [0.0] * len(sheet.elements)
    for i, p in zip(present, preds):
        goe[i] = float(p) if v.element_mode == "delta" else float(p) - sheet.elements[i].base
    pcs = H.predict_pcs(embeddings, params.nets["pcs"])
    for n in notes:
        log.warning("%s: %s", sheet.performance_id, n)
    return compose_judgment(sheet, goe, pcs, segments, missing, notes)


@dataclass(frozen=True)
class ScorePrediction:
    performance_id: str
    total: float
    tes: float | None = None
    pcs: float | None = None
    labels: SegmentLabeling | None = None
    judgment: Judgment | None = None


def predict_scores(params: ModelParams, embeddings: EmbeddingSequence, sheet: ScoreSheet) -> ScorePrediction:
    """Whatever scores the variant can produce (total always)."""
    v = params.variant
    if v.element_mode is not None:
        j = predict(params, embeddings, sheet)
        labels = SegmentLabeling.from_segments(j.segments) if v.uses_segments and j.segments else None
        if v.uses_segments and labels is None:
            labels = SegmentLabeling(np.zeros(0, dtype=np.int64))
        return ScorePrediction(sheet.performance_id, j.total_score, j.tes_total, j.pcs_total, labels, j)
    _check_dim(params, embeddings)
    out, _ = H.head_forward(params.nets["seq"], embeddings.windows[None], embeddings.mask[None])
    out = out[0]
    if v is ModelVariant.ScoreOnly:
        return ScorePrediction(sheet.performance_id, float(out[0]))
    return ScorePrediction(sheet.performance_id, float(out[0] + out[1]), float(out[0]), float(out[1]))


# --------------------------------------------------------------------------
# evaluation

TERTILE_NAMES = ("Low", "Med", "High")


@dataclass(frozen=True)
class TertileRow:
    name: str
    n: int
    iou_min: float
    iou_max: float
    mean_abs_tes_error: float
    stderr: float


@dataclass(frozen=True)
class RecordResult:
    performance_id: str
    tes: float | None
    pcs: float | None
    total: float
    true_tes: float
    true_pcs: float
    true_total: float
    dice: float | None = None
    iou: float | None = None
    flags: tuple[str, ...] = ()


@dataclass
class EvaluationReport:
    variant: str
    n_records: int
    spearman: dict[str, float | None]
    pearson: dict[str, float | None]
    dice: float | None
    iou: float | None
    tertiles: list[TertileRow]
    records: list[RecordResult]
    notes: list[str] = field(default_factory=list)


def _corr(fn, pred, truth, label: str, notes: list[str]) -> float | None:
    try:
        return fn(pred, truth)
    except MetricError as exc:
        notes.append(f"{fn.__name__} {label}: undefined ({exc})")
        return None


def evaluate_predictions(
    predictions: Sequence[ScorePrediction], records: Sequence[PerformanceRecord], variant: str = "full"
) -> EvaluationReport:
    """Compare predictions with the records' ground truth.

    Correlations that are undefined (constant inputs) are reported as None
    with an explanatory note rather than raising.
    """
    if len(records) < 3:
        raise MetricError(f"evaluation needs at least 3 records, got {len(records)}")
    by_id = {p.performance_id: p for p in predictions}
    results: list[RecordResult] = []
    for r in records:
        if r.sheet.truth is None:
            raise DatasetError("evaluation record carries no ground truth", r.id)
        if r.id not in by_id:
            raise DatasetError("no prediction for record", r.id)
        p = by_id[r.id]
        t = r.sheet.truth
        true_tes = math.fsum(b + g for b, g in zip(r.sheet.bases, t.goe))
        true_pcs = r.sheet.pcs_factor * math.fsum(t.pcs)
        d = i = None
        if p.labels is not None and r.truth_labels is not None:
            d, i = dice(p.labels, r.truth_labels), iou(p.labels, r.truth_labels)
        flags = []
        if p.judgment is not None and any(e.missing for e in p.judgment.elements):
            flags.append("missing-elements")
        results.append(RecordResult(r.id, p.tes, p.pcs, p.total, true_tes, true_pcs, true_tes + true_pcs, d, i, tuple(flags)))

    notes: list[str] = []
    sp: dict[str, float | None] = {}
    pe: dict[str, float | None] = {}
    for key in ("tes", "pcs", "total"):
        pred = [getattr(x, key) for x in results]
        truth = [getattr(x, f"true_{key}") for x in results]
        if any(v is None for v in pred):
            sp[key] = pe[key] = None
            continue
        sp[key] = _corr(spearman, pred, truth, key.upper(), notes)
        pe[key] = _corr(pearson, pred, truth, key.upper(), notes)

    dices = [x.dice for x in results if x.dice is not None]
    ious = [x.iou for x in results if x.iou is not None]
    tertiles: list[TertileRow] = []
    if len(ious) == len(results) and all(x.tes is not None for x in results):
        for name, idx in zip(TERTILE_NAMES, tertile_groups(ious)):
            errs = np.array([abs(results[k].tes - results[k].true_tes) for k in idx])
            group_iou = [ious[k] for k in idx]
            se = float(errs.std(ddof=1) / np.sqrt(len(errs))) if len(errs) > 1 else 0.0
            tertiles.append(TertileRow(name, len(idx), min(group_iou), max(group_iou), float(errs.mean()), se))
    return EvaluationReport(
        variant,
        len(results),
        sp,
        pe,
        float(np.mean(dices)) if dices else None,
        float(np.mean(ious)) if ious else None,
        tertiles,
        results,
        notes,
    )


def evaluate(params: ModelParams, records: Sequence[PerformanceRecord]) -> EvaluationReport:
    if len(records) < 3:
        raise MetricError(f"evaluation needs at least 3 records, got {len(records)}")
    preds = [predict_scores(params, r.embeddings, r.sheet) for r in records]
    return evaluate_predictions(preds, records, params.variant.value)


# --------------------------------------------------------------------------
# ablation


@dataclass(frozen=True)
class AblationRow:
    variant: ModelVariant
    report: EvaluationReport
    epochs: int
    stopped_early: bool


def run_ablation(
    train_records: Sequence[PerformanceRecord],
    test_records: Sequence[PerformanceRecord],
    config: TrainConfig = TrainConfig(),
    variants: Sequence[ModelVariant] = tuple(ModelVariant),
    trained: Mapping[ModelVariant, tuple[ModelParams, TrainingLog]] | None = None,
    on_variant: Callable[[ModelVariant], None] | None = None,
) -> list[AblationRow]:
    """Train (or reuse) each variant on the same split and evaluate it on the same test set.

    ``trained`` supplies already-fitted models, keyed by variant, to skip retraining.
    """
    rows = []
    for v in variants:
        if on_variant is not None:
            on_variant(v)
        if trained is not None and v in trained:
            params, tlog = trained[v]
        else:
            params, tlog = train(train_records, replace(config, variant=v))
        rows.append(AblationRow(v, evaluate(params, test_records), len(tlog), tlog.stopped_early))
    return rows
