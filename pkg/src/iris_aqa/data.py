"""Embedding sequences, window labelings, on-disk record formats and slicing.

Dataset layout (one triple per performance ``<id>``)::

    <id>.sheet.json    score sheet (see rubric)
    <id>.emb.f64       uint64 LE T, uint64 LE D, then T*D float64 LE row-major
    <id>.labels.txt    one action name per valid window, newline-terminated
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DatasetError, DimensionError, ScoreSheetError
from .rubric import ELEMENT_TYPES, ActionType, ScoreSheet, Segment, element_counts, parse_score_sheet, serialize_score_sheet

log = logging.getLogger(__name__)

WINDOW_SECONDS = 0.534  # 16 frames at 29.97 fps
MAX_WINDOWS = 356
DEFAULT_MAX_SEGMENT_WINDOWS = 64

_HEADER = struct.Struct("<QQ")


@dataclass(frozen=True)
class EmbeddingSequence:
    """``T x D`` window features; rows at or beyond ``valid_count`` are zero."""

    windows: np.ndarray
    valid_count: int
    window_seconds: float = WINDOW_SECONDS

    def __post_init__(self):
        w = np.asarray(self.windows, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] == 0:
            raise DimensionError(f"embeddings must be T x D with D > 0, got shape {w.shape}")
        if not 0 <= self.valid_count <= w.shape[0]:
            raise DimensionError(f"valid_count {self.valid_count} outside [0, {w.shape[0]}]")
        if np.any(w[self.valid_count :] != 0.0):
            raise DimensionError("padded windows must be exactly zero")
        if not np.all(np.isfinite(w)):
            raise DimensionError("embeddings must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "windows", w)

    @classmethod
    def from_valid(cls, valid: np.ndarray) -> "EmbeddingSequence":
        valid = np.asarray(valid, dtype=np.float64)
        return cls(valid, valid.shape[0])

    @property
    def dim(self) -> int:
        return self.windows.shape[1]

    @property
    def length(self) -> int:
        return self.windows.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return self.windows[: self.valid_count]

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.length, dtype=bool)
        m[: self.valid_count] = True
        return m

    def padded(self, length: int = MAX_WINDOWS) -> "EmbeddingSequence":
        if length < self.valid_count:
            raise DimensionError(f"cannot pad {self.valid_count} valid windows into {length}")
        out = np.zeros((length, self.dim))
        out[: self.valid_count] = self.valid
        return EmbeddingSequence(out, self.valid_count, self.window_seconds)


def labels_to_segments(labels: Sequence[int] | np.ndarray) -> list[Segment]:
    """Maximal runs of equal labels, ``end`` exclusive."""
    labels = [int(v) for v in labels]
    segments: list[Segment] = []
    start = 0
    for t in range(1, len(labels) + 1):
        if t == len(labels) or labels[t] != labels[start]:
            segments.append(Segment(ActionType(labels[start]), start, t))
            start = t
    return segments


def segments_to_labels(segments: Sequence[Segment]) -> np.ndarray:
    """Inverse of :func:`labels_to_segments`; segments must tile ``[0, T)``."""
    pos = 0
    out: list[int] = []
    for i, s in enumerate(segments):
        if s.start != pos or s.end <= s.start:
            raise ValueError(f"segment {i} {s} does not continue the partition at {pos}")
        if i and segments[i - 1].action == s.action:
            raise ValueError(f"adjacent segments {i - 1} and {i} share action {s.action.name}")
        out.extend([int(s.action)] * s.length)
        pos = s.end
    return np.asarray(out, dtype=np.int64)


@dataclass(frozen=True)
class SegmentLabeling:
    """Per-window class indices over the valid region.

    ``deficits`` records element types for which fewer runs were found than
    the plan requires (type -> number missing); it is empty for labelings
    that did not go through count correction or had no shortfall.
    """

    labels: np.ndarray
    deficits: Mapping[ActionType, int] = field(default_factory=dict)

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if lab.size and (lab.min() < 0 or lab.max() >= len(ActionType)):
            raise ValueError("labels must be valid ActionType indices")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @classmethod
    def from_actions(cls, actions: Iterable[ActionType | str]) -> "SegmentLabeling":
        return cls(np.array([int(ActionType.parse(a) if isinstance(a, str) else a) for a in actions], dtype=np.int64))

    @classmethod
    def from_segments(cls, segments: Sequence[Segment]) -> "SegmentLabeling":
        return cls(segments_to_labels(segments))

    @property
    def segments(self) -> list[Segment]:
        return labels_to_segments(self.labels)

    @property
    def element_segments(self) -> list[Segment]:
        return [s for s in self.segments if s.action is not ActionType.Transition]

    def __len__(self) -> int:
        return int(self.labels.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SegmentLabeling):
            return NotImplemented
        return np.array_equal(self.labels, other.labels) and dict(self.deficits) == dict(other.deficits)

    def timeline(self) -> str:
        return "".join(ActionType(v).code for v in self.labels)


@dataclass(frozen=True)
class PerformanceRecord:
    sheet: ScoreSheet
    embeddings: EmbeddingSequence
    truth_labels: SegmentLabeling | None = None

    @property
    def id(self) -> str:
        return self.sheet.performance_id

    def __post_init__(self):
        if self.truth_labels is not None:
            check_labels_against_sheet(self.truth_labels, self.sheet, self.embeddings.valid_count)


def check_labels_against_sheet(labels: SegmentLabeling, sheet: ScoreSheet, valid_count: int) -> None:
    pid = sheet.performance_id
    if len(labels) != valid_count:
        raise DatasetError(f"{len(labels)} labels for {valid_count} valid windows", pid)
    runs = labels.element_segments
    found = element_counts([s.action for s in runs])
    planned = element_counts(sheet)
    for a in ELEMENT_TYPES:
        if found[a] != planned[a]:
            raise DatasetError(
                f"count mismatch for {a.name}: labels contain {found[a]} runs, sheet plans {planned[a]}", pid
            )
    if [s.action for s in runs] != sheet.actions:
        raise DatasetError("labelled element order differs from the sheet's element order", pid)


# --------------------------------------------------------------------------
# file formats


def write_embeddings(path: Path, windows: np.ndarray) -> None:
    w = np.ascontiguousarray(windows, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*w.shape))
        fh.write(w.tobytes(order="C"))


def read_embeddings(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetError("embedding file shorter than its header", str(path))
    T, D = _HEADER.unpack_from(raw)
    expected = _HEADER.size + 8 * T * D
    if len(raw) != expected:
        raise DatasetError(f"header declares {T}x{D} doubles ({expected} bytes), file has {len(raw)}", str(path))
    return np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(T, D).astype(np.float64)


def write_labels(path: Path, labels: SegmentLabeling) -> None:
    text = "".join(ActionType(v).name + "\n" for v in labels.labels)
    Path(path).write_text(text, encoding="utf-8")


def read_labels(path: Path) -> SegmentLabeling:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    try:
        return SegmentLabeling.from_actions(line.strip() for line in lines if line.strip())
    except ValueError as exc:
        raise DatasetError(str(exc), str(path)) from None


def write_record(directory: Path, record: PerformanceRecord) -> None:
    directory = Path(directory)
    pid = record.id
    (directory / f"{pid}.sheet.json").write_text(serialize_score_sheet(record.sheet), encoding="utf-8")
    write_embeddings(directory / f"{pid}.emb.f64", record.embeddings.valid)
    if record.truth_labels is not None:
        write_labels(directory / f"{pid}.labels.txt", record.truth_labels)


def load_record(directory: Path, pid: str, require_labels: bool = True) -> PerformanceRecord:
    directory = Path(directory)
    sheet_path = directory / f"{pid}.sheet.json"
    emb_path = directory / f"{pid}.emb.f64"
    lab_path = directory / f"{pid}.labels.txt"
    for p in (sheet_path, emb_path) + ((lab_path,) if require_labels else ()):
        if not p.exists():
            raise DatasetError("missing pair member", str(p))
    try:
        sheet = parse_score_sheet(sheet_path.read_text(encoding="utf-8"))
    except ScoreSheetError as exc:
        raise DatasetError(str(exc), str(sheet_path)) from exc
    windows = read_embeddings(emb_path)
    labels = read_labels(lab_path) if lab_path.exists() else None
    try:
        emb = EmbeddingSequence.from_valid(windows)
    except DimensionError as exc:
        raise DatasetError(str(exc), str(emb_path)) from exc
    if labels is not None:
        try:
            check_labels_against_sheet(labels, sheet, emb.valid_count)
        except DatasetError as exc:
            raise DatasetError(exc.message, str(lab_path)) from None
    return PerformanceRecord(sheet, emb, labels)


def load_dataset(path: Path, require_labels: bool = True) -> list[PerformanceRecord]:
    """Load and validate every record triple in ``path`` (sorted by id)."""
    path = Path(path)
    if not path.is_dir():
        raise DatasetError("dataset directory does not exist", str(path))
    ids = set()
    for p in path.iterdir():
        for suffix in (".sheet.json", ".emb.f64", ".labels.txt"):
            if p.name.endswith(suffix):
                ids.add(p.name[: -len(suffix)])
    if not ids:
        log.warning("dataset directory %s contains no records", path)
        return []
    records = [load_record(path, pid, require_labels) for pid in sorted(ids)]
    dims = {r.embeddings.dim for r in records}
    if len(dims) > 1:
        raise DatasetError(f"embedding dimensions disagree across records: {sorted(dims)}", str(path))
    return records


def split(records: Sequence[PerformanceRecord], train_count: int = 120, seed: int = 0):
    """Seeded disjoint train/test partition; order within each part follows the permutation."""
    n = len(records)
    if not 0 < train_count < n:
        raise DatasetError(f"cannot take {train_count} training records from {n}")
    perm = np.random.default_rng(seed).permutation(n)
    train = [records[i] for i in perm[:train_count]]
    test = [records[i] for i in perm[train_count:]]
    return train, test


# --------------------------------------------------------------------------
# slicing


def pad_and_slice(
    embeddings: EmbeddingSequence | np.ndarray,
    segments: Sequence[Segment],
    max_segment_windows: int = DEFAULT_MAX_SEGMENT_WINDOWS,
) -> tuple[np.ndarray, np.ndarray]:
    """Cut one fixed-length block per non-Transition segment, in the given order.

    Returns ``(blocks, lengths)`` with blocks shaped ``(n, max_segment_windows, D)``.
    Over-long segments are centre-cropped; short ones are zero-padded at the tail.
    """
    if isinstance(embeddings, EmbeddingSequence):
        valid = embeddings.valid
    else:
        valid = np.asarray(embeddings, dtype=np.float64)
    T, D = valid.shape
    chosen = [s for s in segments if s.action is not ActionType.Transition]
    blocks = np.zeros((len(chosen), max_segment_windows, D))
    lengths = np.zeros(len(chosen), dtype=np.int64)
    for i, s in enumerate(chosen):
        if not 0 <= s.start < s.end <= T:
            raise DimensionError(f"segment {s} outside the valid range [0, {T})")
        n = s.length
        if n > max_segment_windows:
            start = s.start + (n - max_segment_windows) // 2
            n = max_segment_windows
        else:
            start = s.start
        blocks[i, :n] = valid[start : start + n]
        lengths[i] = n
    return blocks, lengths


def batch_sequences(seqs: Sequence[EmbeddingSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Stack sequences into ``(B, T_max, D)`` with a ``(B, T_max)`` validity mask."""
    T = max((s.valid_count for s in seqs), default=0)
    T = max(T, 1)
    D = seqs[0].dim
    x = np.zeros((len(seqs), T, D))
    mask = np.zeros((len(seqs), T))
    for i, s in enumerate(seqs):
        x[i, : s.valid_count] = s.valid
        mask[i, : s.valid_count] = 1.0
    return x, mask
