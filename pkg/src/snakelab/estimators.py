"""Monte Carlo estimators built on the tree and snake samplers.

Randomness is counter based: work is cut into fixed-size chunks and chunk
``k`` of a run seeded with ``seed`` draws from ``Philox(SeedSequence([seed, k]))``.
The chunking never depends on the number of worker processes, so a report is
bit-identical however many workers produced it.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .stable_core import POWER_TAIL, QuadratureSpec, StableParams, alpha0, integrate_adaptive
from .snake import occupation_profile, sample_labels, scan_increase_points, sample_snake
from .trees import OffspringLaw, ScalingRegime, sample_conditioned_tree
from .vlambda import VTable

CHUNK_TREES = 25
CHUNK_PATHS = 512
N_BATCHES = 32
TRUNCATION_WARN = 0.10


class EstimatorWarning(UserWarning):
    """An estimate was produced but an error budget was exceeded."""


def stream(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def config_digest(config: dict) -> str:
    text = json.dumps(config, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("SNAKELAB_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class EstimateReport:
    name: str
    point: float
    std_error: float
    n_samples: int
    n_tree_size: int
    seed: int
    config_digest: str
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.std_error >= 0:
            raise ValueError("std_error must be nonnegative")

    def z_score(self, target: float) -> float:
        if self.std_error == 0:
            return 0.0 if self.point == target else math.copysign(math.inf, self.point - target)
        return (self.point - target) / self.std_error

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "EstimateReport":
        return cls(**json.loads(line))


def empty_report(name: str, digest: str = "") -> EstimateReport:
    return EstimateReport(name, 0.0, 0.0, 0, 0, 0, digest)


def merge_reports(reports: Sequence[EstimateReport]) -> EstimateReport:
    """Precision-weighted pooling of independent estimates of one quantity."""
    live = [r for r in reports if r.n_samples > 0]
    if not live:
        raise ValueError("nothing to merge")
    names = {r.name for r in live}
    digests = {r.config_digest for r in live}
    if len(names) > 1 or len(digests) > 1:
        raise ValueError("can only merge reports of the same estimator and configuration")
    live.sort(key=lambda r: (r.seed, r.point, r.std_error, r.n_samples))
    if len(live) == 1:
        return live[0]
    if all(r.std_error > 0 for r in live):
        w = np.array([1.0 / r.std_error**2 for r in live])
        se = 1.0 / math.sqrt(w.sum())
    else:
        # degenerate (zero-variance) inputs: fall back to sample-count weights
        w = np.array([float(r.n_samples) for r in live])
        se = 0.0
    point = float(np.dot(w, [r.point for r in live]) / w.sum())
    return EstimateReport(
        live[0].name,
        point,
        se,
        sum(r.n_samples for r in live),
        max(r.n_tree_size for r in live),
        min(r.seed for r in live),
        live[0].config_digest,
    )


def batch_means(values: np.ndarray, n_batches: int = N_BATCHES) -> tuple[float, float]:
    """Mean and batch-means standard error of a sequence of per-sample values."""
    values = np.asarray(values, dtype=float)
    m = len(values)
    if m == 0:
        raise ValueError("no samples")
    mean = float(values.mean())
    k = min(n_batches, m)
    if k < 2:
        return mean, 0.0
    batches = np.array([b.mean() for b in np.array_split(values, k)])
    return mean, float(batches.std(ddof=1) / math.sqrt(k))


def _run_chunks(worker: Callable, jobs: list, threads: int) -> list:
    if threads <= 1 or len(jobs) <= 1:
        return [worker(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, *zip(*jobs)))


def _chunk_sizes(total: int, size: int) -> list[int]:
    out = [size] * (total // size)
    if total % size:
        out.append(total % size)
    return out


# --------------------------------------------------------------------------
# Range statistics


def _range_chunk(alpha: float, n: int, seed: int, index: int, count: int) -> np.ndarray:
    rng = stream(seed, index)
    law = OffspringLaw(alpha)
    out = np.empty((count, 2))
    for i in range(count):
        labels = sample_labels(sample_conditioned_tree(law, n, rng), rng)
        out[i] = labels.max(), labels.min()
    return out


def sample_raw_ranges(alpha: float, n: int, n_trees: int, seed: int, threads: int = 1) -> np.ndarray:
    """Unscaled (max, min) label pairs of ``n_trees`` independent snakes of size ``n``."""
    jobs = [(alpha, n, seed, k, c) for k, c in enumerate(_chunk_sizes(n_trees, CHUNK_TREES))]
    parts = _run_chunks(_range_chunk, jobs, threads)
    return np.concatenate(parts) if parts else np.empty((0, 2))


def _range_config(name, params, regime, n_trees, seed, **extra) -> dict:
    cfg = {
        "estimator": name,
        "alpha": params.alpha,
        "n": regime.n,
        "label_correction": regime.label_correction,
        "n_trees": n_trees,
        "seed": seed,
    }
    cfg.update(extra)
    return cfg


def estimate_range_moment(
    params: StableParams,
    regime: ScalingRegime,
    beta: float,
    n_trees: int,
    seed: int,
    threads: int = 1,
    raw_ranges: Optional[np.ndarray] = None,
) -> EstimateReport:
    """Sample mean of R^beta under the size-n approximation of N^(1)."""
    if not beta >= 0:
        raise ValueError("beta must be nonnegative")
    if raw_ranges is None:
        raw_ranges = sample_raw_ranges(params.alpha, regime.n, n_trees, seed, threads)
    r = raw_ranges[:, 0] * regime.label_scale
    vals = r**beta
    point = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    cfg = _range_config("range_moment", params, regime, n_trees, seed, beta=beta)
    return EstimateReport(f"range_moment[beta={beta:g}]", point, se, len(vals), regime.n, seed, config_digest(cfg))


def estimate_min_ratio(
    params: StableParams,
    regime: ScalingRegime,
    n_trees: int,
    seed: int,
    threads: int = 1,
    raw_ranges: Optional[np.ndarray] = None,
) -> EstimateReport:
    """E[min(R, -L)^p] / E[R^p] with p = 2/(alpha-1); delta-method standard error.

    The ratio does not depend on the label scale, so the raw labels are used.
    """
    if raw_ranges is None:
        raw_ranges = sample_raw_ranges(params.alpha, regime.n, n_trees, seed, threads)
    p = params.range_exponent
    # normalize by the largest value before powering to keep high powers finite
    scale = float(np.max(np.abs(raw_ranges))) or 1.0
    r = raw_ranges[:, 0] / scale
    m = np.minimum(r, -raw_ranges[:, 1] / scale)
    rp, mp = r**p, m**p
    ratio = float(mp.mean() / rp.mean())
    resid = mp - ratio * rp
    k = len(rp)
    se = float(resid.std(ddof=1) / (math.sqrt(k) * rp.mean())) if k > 1 else 0.0
    cfg = _range_config("min_ratio", params, regime, n_trees, seed)
    return EstimateReport("min_ratio", ratio, se, k, regime.n, seed, config_digest(cfg))


def analytic_min_ratio(params: StableParams) -> float:
    p = params.range_exponent
    return 2.0 - alpha0(params) ** p / params.blowup_constant


# --------------------------------------------------------------------------
# Ito size mixture


@dataclass(frozen=True)
class TailCurve:
    """Right-continuous step function u -> P(X >= u) of an empirical sample."""

    atoms: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "atoms", np.sort(np.asarray(self.atoms, dtype=float)))

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        out = 1.0 - np.searchsorted(self.atoms, u, side="left") / len(self.atoms)
        return float(out) if out.ndim == 0 else out


def ito_size_integrate(
    tail_curve: Callable,
    params: StableParams,
    x: float,
    spec: QuadratureSpec = POWER_TAIL,
) -> float:
    """Mix N^(1)(R >= u) over lifetimes with the Ito weight; estimates v0(x).

    The size integral over s is rewritten with u = x s^(-(alpha-1)/(2 alpha)),
    which turns it into x^(-p) / Gamma(1 - 1/alpha) * int_0^inf p u^(p-1) T(u) du.
    Empirical tails are integrated exactly, other callables by quadrature.
    """
    if not x > 0:
        raise ValueError("x must be positive")
    p = params.range_exponent
    if isinstance(tail_curve, TailCurve):
        pos = tail_curve.atoms[tail_curve.atoms > 0]
        moment = float(np.sum(pos**p)) / len(tail_curve.atoms)
    else:
        moment, _ = integrate_adaptive(lambda u: p * u ** (p - 1.0) * float(tail_curve(u)), 0.0, math.inf, spec)
    return x ** (-p) * moment / params.gamma_one_minus_inv_alpha


def ito_weight(params: StableParams, s):
    s = np.asarray(s, dtype=float)
    return s ** (-1.0 - 1.0 / params.alpha) / params.ito_weight_normalizer


# --------------------------------------------------------------------------
# Occupation near the minimum


def _gap_chunk(alpha: float, n: int, label_correction: float, seed: int, index: int, count: int) -> list:
    rng = stream(seed, index)
    law = OffspringLaw(alpha)
    regime = ScalingRegime(n, alpha, label_correction)
    out = []
    for _ in range(count):
        snake = sample_snake(sample_conditioned_tree(law, n, rng), regime, rng)
        out.append(np.sort(snake.scaled_labels - snake.L))
    return out


def _mixture_pieces(params: StableParams, lam: float, eps: float, y_sat: float, y_res: float, n_grid: int):
    """Lifetime grid and weights for the resolved part of the size mixture.

    Returns (s_sat, S, s_grid, weights, saturated, tail_weight): for s <= s_sat
    every gap is below eps*s^(-kappa) so the profile is saturated; s in
    [s_sat, S] is resolved on the grid; beyond S the probe level drops under
    the label resolution ``y_res``.
    """
    a = params.alpha
    kap = (a - 1.0) / (2.0 * a)
    q = params.occupation_exponent
    s_sat = (eps / y_sat) ** (1.0 / kap)
    s_big = (eps / y_res) ** (1.0 / kap)
    w = lambda s: float(ito_weight(params, s)) * -math.expm1(-lam * s)
    spec = QuadratureSpec(1e-14, 1e-10, 500, "power-tail")
    saturated, _ = integrate_adaptive(lambda s: w(s) * s, 0.0, s_sat, spec) if s_sat > 0 else (0.0, 0.0)
    tail_w, _ = integrate_adaptive(lambda t: w(s_big + t), 0.0, math.inf, spec)
    log_s = np.linspace(math.log(s_sat), math.log(s_big), n_grid)
    s = np.exp(log_s)
    # trapezoid weights in log s for the integrand w(s) s g(eps s^-kappa)
    dl = np.diff(log_s)
    trap = np.zeros(n_grid)
    trap[:-1] += 0.5 * dl
    trap[1:] += 0.5 * dl
    weights = trap * ito_weight(params, s) * -np.expm1(-lam * s) * s * s
    probes = eps * s ** (-kap)
    return weights, probes, saturated, tail_w, q


def occupation_scaling_study(
    params: StableParams,
    regime: ScalingRegime,
    lam: float,
    epsilons: Sequence[float],
    n_trees: int,
    seed: int,
    threads: int = 1,
    resolution_steps: float = 2.0,
    n_grid: int = 4000,
) -> list[EstimateReport]:
    """eps^(-2 alpha/(alpha-1)) N_0((1 - e^(-lam sigma)) I([0, eps])) along an eps ladder.

    Size-n snakes stand in for the normalized excursion. A snake of lifetime
    s has the law of a normalized one with time scaled by s and labels by
    s^((alpha-1)/(2 alpha)), so the mass within eps of the minimum under
    lifetime s is s * g(eps s^(-(alpha-1)/(2 alpha))) with g the normalized
    profile. The Ito mixture over s is then a one-dimensional quadrature.
    Below ``resolution_steps`` label increments the discrete profile is not
    trusted; that part is extrapolated with the local exponent
    2 alpha/(alpha-1) and its share is reported as ``truncation``.
    """
    eps = np.asarray(epsilons, dtype=float)
    if np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise ValueError("epsilons must be positive and decreasing")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    cfg = _range_config(
        "occupation", params, regime, n_trees, seed, lam=lam, epsilons=[float(e) for e in eps],
        resolution_steps=resolution_steps,
    )
    digest = config_digest(cfg)
    if lam == 0:
        return [
            EstimateReport(f"occupation[eps={e:g}]", 0.0, 0.0, n_trees, regime.n, seed, digest, {"eps": float(e), "truncation": 0.0})
            for e in eps
        ]
    jobs = [(params.alpha, regime.n, regime.label_correction, seed, k, c) for k, c in enumerate(_chunk_sizes(n_trees, CHUNK_TREES))]
    gaps = [g for part in _run_chunks(_gap_chunk, jobs, threads) for g in part]
    y_sat = max(float(g[-1]) for g in gaps) * (1.0 + 1e-12)
    y_res = resolution_steps * regime.label_scale
    reports = []
    for e in eps:
        weights, probes, saturated, tail_w, q = _mixture_pieces(params, lam, float(e), y_sat, y_res, n_grid)
        per_tree = np.empty(len(gaps))
        tails = np.empty(len(gaps))
        for i, g in enumerate(gaps):
            prof = np.searchsorted(g, probes, side="right") / len(g)
            g_res = np.searchsorted(g, y_res, side="right") / len(g)
            tails[i] = g_res * y_res ** (-q) * tail_w
            per_tree[i] = (saturated + float(np.dot(weights, prof))) * float(e) ** (-q) + tails[i]
        point, se = batch_means(per_tree)
        trunc = float(tails.mean() / point) if point > 0 else 0.0
        if trunc > TRUNCATION_WARN:
            warnings.warn(f"eps={e:g}: extrapolated share {trunc:.2f} exceeds {TRUNCATION_WARN}", EstimatorWarning)
        reports.append(
            EstimateReport(f"occupation[eps={e:g}]", point, se, len(gaps), regime.n, seed, digest, {"eps": float(e), "truncation": trunc})
        )
    return reports


# --------------------------------------------------------------------------
# Bessel representation


@dataclass(frozen=True)
class BesselConfig:
    dim: float
    start: float
    dt: float
    steps_per_doubling: int = 50
    tail_tol: float = 1e-4
    max_doublings: int = 60

    def __post_init__(self):
        if not self.dim > 2:
            raise ValueError("dimension must exceed 2 (transience)")
        if not (self.start > 0 and self.dt > 0):
            raise ValueError("start and dt must be positive")

    @classmethod
    def for_params(cls, params: StableParams, eps: float, **kw) -> "BesselConfig":
        return cls(dim=params.bessel_dim, start=eps, dt=eps * eps / 50.0, **kw)


def bessel_step(x: np.ndarray, dim: float, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Exact Bessel transition over time dt: R^2 is dt times a noncentral chi-square."""
    return np.sqrt(dt * rng.noncentral_chisquare(dim, x * x / dt))


def bessel_negative_moment(dim: float, q: float) -> float:
    """E_0[R_1^(-q)] for a dim-dimensional Bessel process, q < dim."""
    return 2.0 ** (-q / 2.0) * math.exp(math.lgamma((dim - q) / 2.0) - math.lgamma(dim / 2.0))


def _killing_rate(params: StableParams, vtable: VTable, x: np.ndarray, counter: list) -> np.ndarray:
    """psi'(v_lam(x)) - alpha(alpha+1)/((alpha-1)^2 x^2), computed from the relative excess."""
    a = params.alpha
    c = params.inverse_square_coefficient
    grid = vtable.x
    lo, hi = grid[0], grid[-1]
    below = x < lo
    if np.any(below):
        counter[0] += int(np.count_nonzero(below))
    xc = np.clip(x, lo, hi)
    rel = vtable.rel_excess_at(xc)
    out = c / (x * x) * np.expm1((a - 1.0) * np.log1p(rel))
    far = x >= hi
    if np.any(far):
        # beyond the table v_lam equals lam^(1/alpha) to double precision
        out[far] = a * vtable.lam ** ((a - 1.0) / a) - c / (x[far] ** 2)
    return out


def _bessel_chunk(alpha: float, vtable_json: str, cfg: BesselConfig, seed: int, index: int, count: int, horizon_doublings: int):
    params = StableParams(alpha)
    vtable = VTable.from_json(vtable_json)
    rng = stream(seed, index)
    q = params.occupation_exponent
    x = np.full(count, cfg.start)
    counter = [0]
    k_prev = _killing_rate(params, vtable, x, counter)
    j = np.zeros(count)
    f_prev = x ** (-q) * -np.expm1(-j)
    total = np.zeros(count)
    dt = cfg.dt
    for _ in range(horizon_doublings):
        for _ in range(cfg.steps_per_doubling):
            x = bessel_step(x, cfg.dim, dt, rng)
            k_new = _killing_rate(params, vtable, x, counter)
            j += 0.5 * dt * (k_prev + k_new)
            f_new = x ** (-q) * -np.expm1(-j)
            total += 0.5 * dt * (f_prev + f_new)
            k_prev, f_prev = k_new, f_new
        dt *= 2.0
    return total, counter[0]


def bessel_horizon(params: StableParams, cfg: BesselConfig, scale: float) -> tuple[int, float]:
    """Number of dt doublings after which the analytic tail bound drops below
    ``tail_tol * scale``; returns (doublings, tail bound)."""
    q = params.occupation_exponent
    m = bessel_negative_moment(cfg.dim, q)
    t = 0.0
    dt = cfg.dt
    bound = math.inf
    for k in range(1, cfg.max_doublings + 1):
        t += cfg.steps_per_doubling * dt
        dt *= 2.0
        bound = m * t ** (1.0 - q / 2.0) / (q / 2.0 - 1.0)
        if bound < cfg.tail_tol * scale:
            return k, bound
    return cfg.max_doublings, bound


def bessel_moment_formula(
    params: StableParams,
    vtable_lam: VTable,
    eps: float,
    config: Optional[BesselConfig],
    n_paths: int,
    seed: int,
    threads: int = 1,
) -> EstimateReport:
    """int_0^inf da E_eps[R_a^(-q) (1 - exp(-int_0^a k(R_t) dt))], q = 2 alpha/(alpha-1).

    R is a Bessel process of dimension (5 alpha - 1)/(alpha - 1) started at eps,
    k(x) = psi'(v_lam(x)) - alpha(alpha+1)/((alpha-1)^2 x^2). Paths use exact
    transitions on a time grid whose step starts at ``config.dt`` and doubles
    every ``steps_per_doubling`` steps; both time integrals are trapezoidal.
    The horizon is where the bound int_T^inf E_0[R_a^(-q)] da falls below
    ``tail_tol`` times the eps-independent reference E_0[R_1^(-q)]; that bound is
    reported as ``horizon_tail``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    cfg = config or BesselConfig.for_params(params, eps)
    if not math.isclose(cfg.dim, params.bessel_dim, rel_tol=1e-12):
        raise ValueError("Bessel dimension must be (5 alpha - 1)/(alpha - 1)")
    q = params.occupation_exponent
    digest = config_digest(
        {"estimator": "bessel", "alpha": params.alpha, "lam": vtable_lam.lam, "eps": eps, "config": asdict(cfg), "n_paths": n_paths, "seed": seed}
    )
    name = f"bessel[eps={eps:g}]"
    if vtable_lam.lam == 0:
        return EstimateReport(name, 0.0, 0.0, n_paths, 0, seed, digest, {"eps": eps, "clamped": 0, "horizon_tail": 0.0})
    doublings, tail = bessel_horizon(params, cfg, bessel_negative_moment(cfg.dim, q))
    text = vtable_lam.to_json()
    jobs = [(params.alpha, text, cfg, seed, k, c, doublings) for k, c in enumerate(_chunk_sizes(n_paths, CHUNK_PATHS))]
    parts = _run_chunks(_bessel_chunk, jobs, threads)
    values = np.concatenate([p[0] for p in parts])
    clamped = sum(p[1] for p in parts)
    if clamped:
        warnings.warn(f"{clamped} Bessel positions fell below the v_lambda table", EstimatorWarning)
    point, se = batch_means(values)
    return EstimateReport(name, point, se, n_paths, 0, seed, digest, {"eps": eps, "clamped": clamped, "horizon_tail": tail})


# --------------------------------------------------------------------------
# Increase points


def _increase_chunk(alpha: float, n: int, label_correction: float, delta: float, eta: float, seed: int, index: int, count: int) -> np.ndarray:
    rng = stream(seed, index)
    law = OffspringLaw(alpha)
    regime = ScalingRegime(n, alpha, label_correction)
    out = np.empty(count)
    for i in range(count):
        snake = sample_snake(sample_conditioned_tree(law, n, rng), regime, rng)
        out[i] = scan_increase_points(snake, delta, eta) / n
    return out


def increase_frequencies(
    params: StableParams, regime: ScalingRegime, delta: float, eta: float, n_trees: int, seed: int, threads: int = 1
) -> np.ndarray:
    """Per-tree fraction of (delta, eta)-increase indices."""
    jobs = [
        (params.alpha, regime.n, regime.label_correction, delta, eta, seed, k, c)
        for k, c in enumerate(_chunk_sizes(n_trees, CHUNK_TREES))
    ]
    return np.concatenate(_run_chunks(_increase_chunk, jobs, threads))


def increase_median_report(params, regime, delta, eta, n_trees, seed, threads=1) -> EstimateReport:
    """Median per-tree increase frequency; standard error from the batch medians."""
    freq = increase_frequencies(params, regime, delta, eta, n_trees, seed, threads)
    med = float(np.median(freq))
    k = min(N_BATCHES, len(freq))
    meds = np.array([np.median(b) for b in np.array_split(freq, k)]) if k > 1 else np.array([med])
    se = float(meds.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0
    cfg = _range_config("increase", params, regime, n_trees, seed, delta=delta, eta=eta)
    return EstimateReport(f"increase_median[n={regime.n}]", med, se, len(freq), regime.n, seed, config_digest(cfg))
