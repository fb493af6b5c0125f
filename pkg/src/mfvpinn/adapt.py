"""Marking, child spawning and parent removal for the adaptive loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .geometry import UNIT_SQUARE, Cover, Domain, Patch, cut_patch

# reference child centers for the fixed layouts
FIXED_CENTERS = {
    4: np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]]),
    9: np.array([[x, y] for y in (0.2, 0.5, 0.8) for x in (0.2, 0.5, 0.8)]),
}


@dataclass(frozen=True)
class RefinementConfig:
    strategy: int = 2
    C_M: int = 4
    A_ratio: float = 1.25
    energy_fraction: float = 0.75
    cap_fraction: float = 0.3
    size_jitter: tuple[float, float] = (9 / 10, 10 / 9)
    level_gap: int = 2  # Strategy 3 window: levels <= max level - level_gap
    level_window: int | None = None  # absolute window, overrides level_gap
    scale_residual_scores: bool = True  # Strategy 4: gamma r^2 rather than r^2
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in (1, 2, 3, 4):
            raise ValueError(f"strategy must be 1, 2, 3 or 4, got {self.strategy}")
        if self.C_M not in FIXED_CENTERS:
            raise ValueError(f"C_M must be 4 or 9, got {self.C_M}")
        if self.A_ratio < 1:
            raise ValueError("A_ratio must be >= 1")
        for name in ("energy_fraction", "cap_fraction"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        lo, hi = self.size_jitter
        if not 0 < lo <= hi:
            raise ValueError("size_jitter must be an interval of positive reals")

    @property
    def edge_factor(self) -> float:
        return self.A_ratio / math.sqrt(self.C_M)


def _fraction(x) -> Fraction:
    return Fraction(float(x))


def select_tau(scores, ids=None, energy_fraction: float = 0.75, cap_fraction: float = 0.3):
    """Bulk marking: ``(tau_tilde, tau, marked positions)``.

    ``tau_tilde`` is one more than the number of prefixes of the descending
    ordering whose share of the total stays below ``energy_fraction``;
    ``tau = min(ceil(cap_fraction * n), tau_tilde)``.  Ties are ordered by
    lower id.  Comparisons use exact rational arithmetic, so the result does
    not depend on summation order.
    """
    scores = np.asarray(scores, dtype=float)
    n = len(scores)
    if n == 0:
        raise ValueError("no scores to mark")
    if not np.all(np.isfinite(scores)) or np.any(scores < 0):
        raise ValueError("scores must be finite and non-negative")
    ids = np.arange(n) if ids is None else np.asarray(ids)
    order = sorted(range(n), key=lambda k: (-scores[k], ids[k]))
    cap = math.ceil(_fraction(cap_fraction) * n)
    exact = [_fraction(s) for s in scores]
    total = sum(exact, Fraction(0))
    if total == 0:
        lowest = int(np.argmin(ids))
        return 1, 1, [lowest]
    frac = _fraction(energy_fraction)
    count, acc = 0, Fraction(0)
    for k in order:
        acc += exact[k]
        if acc < frac * total:
            count += 1
        else:
            break
    tau_tilde = count + 1
    tau = min(cap, tau_tilde)
    return tau_tilde, tau, order[:tau]


def clamp_center(center, h):
    """Move a child center so the child (edges ``h``, scalar or per axis) lies in the unit square."""
    c = np.asarray(center, dtype=float)
    half = 0.5 * np.broadcast_to(np.asarray(h, dtype=float), c.shape)
    return np.maximum(np.minimum(c, 1.0 - half), half)


def _child(parent: Patch, center, edges, pid: int) -> Patch:
    edges = np.minimum(np.asarray(edges, dtype=float), 1.0)
    c = clamp_center(center, edges)
    return Patch(pid, (float(c[0]), float(c[1])), (0.5 * float(edges[0]), 0.5 * float(edges[1])), parent.level + 1)


def spawn_random(parent: Patch, config: RefinementConfig, rng: np.random.Generator, new_id) -> list[Patch]:
    """``C_M`` children with uniform random centers and jittered edges."""
    lo, hi = config.size_jitter
    children = []
    for _ in range(config.C_M):
        center = parent.map_point(rng.uniform(0.0, 1.0, size=2))
        lam = rng.uniform(lo, hi)
        children.append(_child(parent, center, lam * config.edge_factor * parent.edges, new_id()))
    return children


def spawn_fixed(parent: Patch, config: RefinementConfig, new_id) -> list[Patch]:
    """``C_M`` children at the mapped reference layout, edges scaled per axis."""
    edges = config.edge_factor * parent.edges
    return [_child(parent, c, edges, new_id()) for c in parent.map_point(FIXED_CENTERS[config.C_M])]


@dataclass
class RefinementRecord:
    generation: int
    strategy: int
    marked: list[int] = field(default_factory=list)
    spawned: list[int] = field(default_factory=list)
    removed: list[int] = field(default_factory=list)
    tau_tilde: int = 0
    tau: int = 0
    cover_size: int = 0

    def row(self) -> dict:
        return {
            "generation": self.generation,
            "strategy": self.strategy,
            "marked_ids": _join(self.marked),
            "spawned_ids": _join(self.spawned),
            "removed_ids": _join(self.removed),
            "cover_size": self.cover_size,
        }


def _join(ids) -> str:
    return " ".join(str(i) for i in ids)


def residual_scores(residuals, gamma, scaled: bool = True) -> np.ndarray:
    r2 = np.asarray(residuals, dtype=float) ** 2
    return np.asarray(gamma) * r2 if scaled else r2


def refine(
    cover: Cover,
    scores,
    config: RefinementConfig,
    rng: np.random.Generator,
    domain: Domain = UNIT_SQUARE,
) -> tuple[Cover, RefinementRecord]:
    """Next cover from one score per patch (η^γ, or residual scores for Strategy 4)."""
    patches = list(cover)
    ids = [p.id for p in patches]
    tau_tilde, tau, marked = select_tau(scores, ids, config.energy_fraction, config.cap_fraction)
    marked = list(marked)
    if config.strategy == 3:
        if config.level_window is not None:
            window = config.level_window
        else:
            window = max(p.level for p in patches) - config.level_gap
        low = [k for k, p in enumerate(patches) if p.level <= window]
        low.sort(key=lambda k: (-float(scores[k]), ids[k]))
        for k in low[: min(tau, len(low))]:
            if k not in marked:
                marked.append(k)
    if not marked:
        raise RuntimeError("refinement marked no patches")

    new = Cover(list(patches), cover.generation + 1, cover.next_id)
    spawned = []
    for k in marked:
        parent = patches[k]
        if config.strategy in (1, 4):
            kids = spawn_random(parent, config, rng, new.new_id)
        else:
            kids = spawn_fixed(parent, config, new.new_id)
        for kid in kids:
            spawned.extend(cut_patch(kid, domain, new.new_id) if domain.holes else [kid])
    removed = []
    if config.strategy == 3:
        removed = [patches[k].id for k in marked]
        gone = set(removed)
        new.patches = [p for p in new.patches if p.id not in gone]
    new.patches.extend(spawned)
    record = RefinementRecord(
        cover.generation,
        config.strategy,
        [patches[k].id for k in marked],
        [p.id for p in spawned],
        removed,
        tau_tilde,
        tau,
        len(new),
    )
    return new, record
