"""Discrete snakes: Gaussian labels along the branches of a conditioned tree."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .trees import (
    DiscreteTree,
    ScalingRegime,
    _pointer_sum,
    _sparse_min_table,
    next_above,
    next_below,
    range_min,
    reroot,
)


@dataclass(frozen=True, eq=False)
class SnakeSample:
    """A tree with raw labels (unit-variance increments, root label 0).

    Rescaled views multiply labels by ``regime.label_scale`` and heights by
    ``regime.height_scale``; the raw arrays are never modified.
    """

    tree: DiscreteTree
    labels: np.ndarray
    regime: ScalingRegime

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=float)
        if lab.shape != (self.tree.n,):
            raise ValueError("one label per vertex required")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @cached_property
    def scaled_labels(self) -> np.ndarray:
        return self.labels * self.regime.label_scale

    @cached_property
    def scaled_heights(self) -> np.ndarray:
        return self.tree.height * self.regime.height_scale

    @cached_property
    def s_star(self) -> int:
        return int(np.argmin(self.labels))

    @property
    def R(self) -> float:
        return float(self.scaled_labels.max())

    @property
    def L(self) -> float:
        return float(self.scaled_labels.min())

    @property
    def sigma(self) -> float:
        """Rescaled lifetime: vertex count over the regime's time scale."""
        return self.tree.n / self.regime.time_scale


def sample_labels(tree: DiscreteTree, rng: np.random.Generator) -> np.ndarray:
    inc = rng.standard_normal(tree.n)
    inc[0] = 0.0
    return _pointer_sum(tree.parent, inc)


def sample_snake(tree: DiscreteTree, regime: ScalingRegime, rng: np.random.Generator) -> SnakeSample:
    return SnakeSample(tree, sample_labels(tree, rng), regime)


def range_stats(snake: SnakeSample) -> tuple[float, float, int]:
    """(R, L, s*) with ties in the argmin broken towards the smaller index."""
    return snake.R, snake.L, snake.s_star


@dataclass(frozen=True)
class OccupationProfile:
    epsilons: np.ndarray
    masses: np.ndarray
    lambda_weight: float = 1.0

    def to_csv(self, header_lines=()) -> str:
        lines = [f"# {h}" for h in header_lines]
        lines.append("epsilon,mass")
        lines += [f"{e!r},{m!r}" for e, m in zip(map(float, self.epsilons), map(float, self.masses))]
        return "\n".join(lines) + "\n"


def occupation_profile(snake: SnakeSample, epsilons, lambda_weight: float = 1.0) -> OccupationProfile:
    """Rescaled time spent within epsilon of the minimum label (vertex mass 1/time_scale)."""
    eps = np.asarray(epsilons, dtype=float)
    if np.any(eps < 0):
        raise ValueError("epsilons must be nonnegative")
    gap = np.sort(snake.scaled_labels - snake.L)
    counts = np.searchsorted(gap, eps, side="right")
    return OccupationProfile(eps, counts / snake.regime.time_scale, lambda_weight)


def reroot_at_min(snake: SnakeSample) -> SnakeSample:
    """Tree re-rooted at the argmin vertex, labels shifted so the new root has label 0."""
    s = snake.s_star
    new_tree, old_ids = reroot(snake.tree, s)
    labels = snake.labels[old_ids] - snake.labels[s]
    return SnakeSample(new_tree, labels, snake.regime)


def scan_increase_points(snake: SnakeSample, delta: float, eta: float, labels=None) -> int:
    """Number of (delta, eta)-increase indices in depth-first order.

    For a start index s the window ends at T, the first later index whose
    height reaches H_s + delta; it is abandoned if the height first drops
    below H_s. The index counts when the window closes at T and every label
    on [s, T] stays above Z_s - eta. ``delta`` and ``eta`` are in rescaled
    units. ``labels`` overrides the raw labels (useful for tests).
    """
    if not (delta > 0 and eta > 0):
        raise ValueError("delta and eta must be positive")
    h = np.asarray(snake.tree.height)
    z = snake.labels if labels is None else np.asarray(labels, dtype=float)
    n = len(h)
    if n < 2:
        return 0
    d_raw = delta / snake.regime.height_scale
    e_raw = eta / snake.regime.label_scale
    s = np.arange(n)
    start = s + 1
    t_up = next_above(h.astype(float), h + d_raw, start)
    t_down = next_below(h, h, start, strict=True)
    ok = t_up < np.minimum(t_down, n)
    if not np.any(ok):
        return 0
    table = _sparse_min_table(z)
    lows = range_min(table, s[ok], t_up[ok] + 1)
    return int(np.count_nonzero(lows >= z[ok] - e_raw))


def hoelder_ratios(snake: SnakeSample, n_pairs: int, exponent: float, rng: np.random.Generator) -> np.ndarray:
    """|Z_t - Z_s| / d(s, t)^exponent in rescaled units for random vertex pairs."""
    from .trees import tree_distance

    n = snake.tree.n
    s = rng.integers(0, n, n_pairs)
    t = rng.integers(0, n, n_pairs)
    keep = s != t
    s, t = s[keep], t[keep]
    d = tree_distance(snake.tree, s, t) * snake.regime.height_scale
    dz = np.abs(snake.scaled_labels[t] - snake.scaled_labels[s])
    return dz / d**exponent


def to_csv(snake: SnakeSample, header_lines=()) -> str:
    """Columns vertex, parent, height, raw_label."""
    lines = [f"# {h}" for h in header_lines]
    lines.append("vertex,parent,height,raw_label")
    par = snake.tree.parent
    h = snake.tree.height
    lines += [f"{i},{int(par[i])},{int(h[i])},{float(snake.labels[i])!r}" for i in range(snake.tree.n)]
    return "\n".join(lines) + "\n"
