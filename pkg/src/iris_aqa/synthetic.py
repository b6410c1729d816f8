"""Synthetic performances with known segments, GOE and PCS.

Each window embedding is a class signature plus, inside an element, a quality
offset ``q * u_action`` and isotropic Gaussian noise.  The element quality
``q`` in [-1, 1] maps to GOE by ``goe = 5 q``; PCS components are smooth
functions of the mean element quality.  Transition windows carry a weaker
copy of the mean quality along their own direction, so whole-program pooling
sees the same signal the components are built from.

The first and last ``boundary_blur`` windows of each element have their class
signature blended towards the transition signature, which makes the exact
boundaries ambiguous to a segmenter.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import EmbeddingSequence, PerformanceRecord, SegmentLabeling, write_record
from .errors import DatasetError
from .rubric import (
    DEFAULT_COMPONENTS,
    GOE_MAX,
    N_COMPONENTS,
    ActionType,
    GroundTruth,
    PlannedElement,
    ScoreSheet,
)

# (name, base value) pairs per element class
CATALOG: dict[ActionType, tuple[tuple[str, float], ...]] = {
    ActionType.Jump: (
        ("2A", 3.30), ("3T", 4.20), ("3S", 4.30), ("3Lo", 4.90), ("3F", 5.30), ("3Lz", 5.90),
        ("3A", 8.00), ("3T+3T", 8.40), ("3F+3T", 9.50), ("4T", 9.50), ("3Lz+3T", 10.10),
    ),
    ActionType.Spin: (
        ("FSSp3", 2.60), ("LSp4", 2.70), ("CSSp4", 3.00), ("CCoSp3", 3.00), ("FCSp4", 3.20), ("CCoSp4", 3.50),
    ),
    ActionType.StepSequence: (("StSq2", 2.60), ("StSq3", 3.30), ("StSq4", 3.90)),
}


@dataclass(frozen=True)
class SyntheticConfig:
    n_records: int = 150
    t_valid_range: tuple[int, int] = (80, 120)
    dim: int = 32
    jumps: tuple[int, int] = (2, 3)
    spins: tuple[int, int] = (2, 3)
    steps: tuple[int, int] = (1, 1)
    element_windows: tuple[int, int] = (6, 14)
    min_transition_windows: int = 2
    noise: float = 1.0
    signature_scale: float = 1.0
    quality_scale: float = 2.0
    boundary_blur: int = 2
    world_seed: int = 0

    def validate(self) -> None:
        if self.dim < 8:
            raise DatasetError(f"embedding dimension must be >= 8, got {self.dim}")
        if self.n_records < 0 or self.noise < 0:
            raise DatasetError("n_records and noise must be non-negative")
        lo, hi = self.t_valid_range
        if not 2 <= lo <= hi:
            raise DatasetError(f"bad T_valid range {self.t_valid_range}")
        for name in ("jumps", "spins", "steps", "element_windows"):
            a, b = getattr(self, name)
            if not 0 <= a <= b:
                raise DatasetError(f"bad range for {name}: {(a, b)}")
        if self.element_windows[0] < 1:
            raise DatasetError("elements need at least one window")
        if self.boundary_blur < 0:
            raise DatasetError("boundary_blur must be non-negative")
        n_max = self.jumps[1] + self.spins[1] + self.steps[1]
        need = n_max * self.element_windows[0] + (n_max + 1) * self.min_transition_windows
        if need > lo:
            raise DatasetError(
                f"infeasible configuration: {n_max} elements need at least {need} windows, "
                f"but T_valid can be as small as {lo}"
            )


@dataclass(frozen=True)
class World:
    """Fixed feature geometry shared by every record of a configuration."""

    signatures: np.ndarray  # (4, D) one row per ActionType
    quality_dirs: np.ndarray  # (4, D) unit rows; row 0 is the transition direction


def make_world(config: SyntheticConfig) -> World:
    rng = np.random.default_rng([config.world_seed, 0x5EED])
    D = config.dim
    sig = rng.standard_normal((4, D)) * config.signature_scale
    raw = rng.standard_normal((4, D))
    # quality directions orthogonal to every signature and to each other
    basis = [s / np.linalg.norm(s) for s in np.linalg.qr(sig.T)[0].T]
    dirs = []
    for r in raw:
        v = r.copy()
        for b in basis + dirs:
            v -= (v @ b) * b
        v /= np.linalg.norm(v)
        dirs.append(v)
    return World(sig, np.array(dirs))


def goe_from_quality(q: float) -> float:
    return GOE_MAX * q


def pcs_from_quality(mean_q: float) -> np.ndarray:
    offsets = np.linspace(-0.3, 0.3, N_COMPONENTS)
    return 6.25 + 2.5 * np.tanh(1.5 * mean_q) + offsets * (1.0 + mean_q)


def _plan(rng: np.random.Generator, config: SyntheticConfig) -> list[ActionType]:
    n_j = rng.integers(config.jumps[0], config.jumps[1] + 1)
    n_s = rng.integers(config.spins[0], config.spins[1] + 1)
    n_q = rng.integers(config.steps[0], config.steps[1] + 1)
    actions = [ActionType.Jump] * n_j + [ActionType.Spin] * n_s + [ActionType.StepSequence] * n_q
    return [actions[i] for i in rng.permutation(len(actions))]


def _layout(rng: np.random.Generator, config: SyntheticConfig, n_el: int) -> tuple[int, list[int], list[int]]:
    """Pick T_valid, element lengths and the n_el + 1 transition gaps."""
    lo, hi = config.t_valid_range
    tmin = config.min_transition_windows
    for _ in range(1000):
        T = int(rng.integers(lo, hi + 1))
        lengths = [int(v) for v in rng.integers(config.element_windows[0], config.element_windows[1] + 1, size=n_el)]
        spare = T - sum(lengths) - (n_el + 1) * tmin
        if spare < 0:
            continue
        gaps = rng.multinomial(spare, np.full(n_el + 1, 1.0 / (n_el + 1))) + tmin
        if n_el == 0 or np.all(gaps[1:-1] >= 1):
            return T, lengths, [int(g) for g in gaps]
    raise DatasetError("could not lay out elements within T_valid; widen t_valid_range")


def generate_record(rng: np.random.Generator, config: SyntheticConfig, world: World, pid: str) -> PerformanceRecord:
    actions = _plan(rng, config)
    n = len(actions)
    T, lengths, gaps = _layout(rng, config, n)

    elements = []
    for i, a in enumerate(actions):
        name, base = CATALOG[a][rng.integers(len(CATALOG[a]))]
        elements.append(PlannedElement(i + 1, name, a, base))

    skill = rng.uniform(-0.7, 0.7)
    quality = np.clip(skill + 0.35 * rng.standard_normal(n), -1.0, 1.0)
    mean_q = float(quality.mean()) if n else skill
    goe = [goe_from_quality(float(q)) for q in quality]
    pcs = np.clip(pcs_from_quality(mean_q) + 0.2 * config.noise * rng.standard_normal(N_COMPONENTS), 0.0, 10.0)

    labels = np.zeros(T, dtype=np.int64)
    x = np.empty((T, config.dim))
    filler = world.signatures[0] + 0.5 * config.quality_scale * mean_q * world.quality_dirs[0]
    x[:] = filler
    pos = gaps[0]
    for i, a in enumerate(actions):
        end = pos + lengths[i]
        labels[pos:end] = int(a)
        x[pos:end] = world.signatures[int(a)] + config.quality_scale * quality[i] * world.quality_dirs[int(a)]
        # entry and exit windows fade in from / out to the transition signature;
        # the quality offset stays whole so GOE remains linear in the segment mean
        n_blur = min(config.boundary_blur, lengths[i] // 2)
        towards_t = world.signatures[0] - world.signatures[int(a)]
        for k in range(n_blur):
            fade = 1.0 - (k + 1) / (n_blur + 1)
            x[pos + k] += fade * towards_t
            x[end - 1 - k] += fade * towards_t
        pos = end + gaps[i + 1]
    assert pos == T
    x += config.noise * rng.standard_normal(x.shape)

    factor = float(rng.choice([1.00, 0.80]))
    pcs_t = tuple(float(v) for v in pcs)
    tes_total = math.fsum(e.base + g for e, g in zip(elements, goe))
    pcs_total = factor * math.fsum(pcs_t)
    truth = GroundTruth(tuple(goe), pcs_t, tes_total, pcs_total, tes_total + pcs_total)
    sheet = ScoreSheet(pid, factor, tuple(elements), DEFAULT_COMPONENTS, truth)
    return PerformanceRecord(sheet, EmbeddingSequence.from_valid(x), SegmentLabeling(labels))


def generate_synthetic(config: SyntheticConfig = SyntheticConfig(), seed: int = 0) -> list[PerformanceRecord]:
    """Generate ``config.n_records`` validated records, deterministically from ``seed``."""
    config.validate()
    world = make_world(config)
    rng = np.random.default_rng(seed)
    return [generate_record(rng, config, world, f"perf{i:04d}") for i in range(config.n_records)]


def write_dataset(directory: Path, records: list[PerformanceRecord], config: SyntheticConfig, seed: int) -> Path:
    """Write record triples and ``manifest.json``; the manifest goes last."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for r in records:
        write_record(directory, r)
    manifest = {
        "generator_seed": seed,
        "config": asdict(config),
        "ids": [r.id for r in records],
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path
