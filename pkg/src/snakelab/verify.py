"""Acceptance checks A1-A9 at desk scale.

Each check returns a :class:`CriterionResult`; :func:`run_verify` runs a
selection and :func:`format_table` renders the PASS/FAIL lines.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass
from itertools import product
from typing import Callable, Iterable, Optional

import numpy as np

from . import stable_core
from .estimators import (
    BesselConfig,
    EstimatorWarning,
    analytic_min_ratio,
    bessel_moment_formula,
    estimate_min_ratio,
    estimate_range_moment,
    increase_median_report,
    occupation_scaling_study,
    sample_raw_ranges,
)
from .stable_core import StableParams, psi_prime_v0_identity_check, v0_closed_form
from .trees import (
    DiscreteTree,
    OffspringLaw,
    ScalingRegime,
    brute_force_distances,
    enumerate_trees,
    sample_conditioned_tree,
    tree_distance,
)
from .vlambda import (
    GridSpec,
    c_beta,
    decay_length,
    expansion_coefficient,
    f_lambda_log_excess,
    fd_residual,
    lam_root,
    moment_constants,
    moment_from_c_beta,
    v_lambda_halfline,
    v_lambda_log_excess,
    v_lambda_relative_excess,
    vtable_halfline,
)

# Reference values of the gamma function (Legendre duplication / tables).
GAMMA_REFERENCE = {
    0.5: math.sqrt(math.pi),
    1.0 / 3.0: 2.678938534707747633655692940974677644,
    2.0 / 3.0: 1.354117939426400416945288028154513785,
    1.5: 0.5 * math.sqrt(math.pi),
    5.0: 24.0,
}

DEFAULT_SEED = 7
A5_TARGET_N = 2**15
A5_TREES = 2000


@dataclass
class CriterionResult:
    key: str
    passed: bool
    detail: str
    seconds: float = 0.0

    @property
    def line(self) -> str:
        return f"{self.key} {'PASS' if self.passed else 'FAIL'} ({self.seconds:.1f}s) {self.detail}"


def _timed(key: str, fn: Callable[[], tuple[bool, str]]) -> CriterionResult:
    t0 = time.perf_counter()
    passed, detail = fn()
    return CriterionResult(key, bool(passed), detail, time.perf_counter() - t0)


# --------------------------------------------------------------------------
# analytic


def gamma_contract_error() -> float:
    """Largest relative deviation of stable_core.gamma from the reference table."""
    return max(abs(stable_core.gamma(x) / g - 1.0) for x, g in GAMMA_REFERENCE.items())


def check_a1(alphas=(1.2, 1.5, 1.8)) -> tuple[bool, str]:
    x = np.linspace(0.1, 10.0, 200)
    worst = 0.0
    for a in alphas:
        params = StableParams(a)
        res = fd_residual(params, 0.0, lambda z: v0_closed_form(params, z), x, x)
        worst = max(worst, float(np.max(res)))
    g_err = gamma_contract_error()
    return worst < 1e-6 and g_err < 1e-13, f"max FD residual {worst:.2e}, gamma contract {g_err:.1e}"


def check_a2(alphas=(1.2, 1.5, 1.8)) -> tuple[bool, str]:
    x = np.linspace(0.1, 10.0, 200)
    worst = 0.0
    for a in alphas:
        params = StableParams(a)
        err = np.abs(psi_prime_v0_identity_check(params, x)) * x**2 / params.inverse_square_coefficient
        worst = max(worst, float(np.max(err)))
    return worst < 1e-10, f"max relative deviation {worst:.2e}"


def check_a3(alpha: float = 1.5, lams=(0.25, 1.0, 4.0)) -> tuple[bool, str]:
    params = StableParams(alpha)
    xs = np.geomspace(1e-3, 1e3, 61)
    round_trip = 0.0
    boundary = 0.0
    rate = 0.0
    for lam in lams:
        for x in xs:
            le = v_lambda_log_excess(params, lam, float(x))
            round_trip = max(round_trip, abs(f_lambda_log_excess(params, lam, le) - x))
        # points where the inverse map puts the relative excess at 1e-8 and 1e-10
        y0 = lam_root(params, lam)
        x1 = f_lambda_log_excess(params, lam, math.log(y0) + math.log(1e-8))
        x2 = f_lambda_log_excess(params, lam, math.log(y0) + math.log(1e-10))
        for x in (x1, x2):
            boundary = max(boundary, abs(v_lambda_halfline(params, lam, x) / y0 - 1.0))
        # exponential decay rate of the excess against 1/c
        c = decay_length(params, lam)
        slope = (v_lambda_log_excess(params, lam, x2) - v_lambda_log_excess(params, lam, x1)) / (x2 - x1)
        rate = max(rate, abs(-slope * c - 1.0))
    ok = round_trip < 1e-9 and boundary < 1e-6 and rate < 1e-6
    return ok, f"round trip {round_trip:.2e}, boundary {boundary:.2e}, decay-rate error {rate:.2e}"


def check_a4(alphas=(1.5, 1.8), lams=(1.0, 2.0), x: float = 1e-3) -> tuple[bool, str]:
    worst = 0.0
    for a in alphas:
        params = StableParams(a)
        q = params.occupation_exponent
        for lam in lams:
            got = v_lambda_relative_excess(params, lam, x) * x ** (-q)
            worst = max(worst, abs(got / expansion_coefficient(params, lam) - 1.0))
    params = StableParams(1.5)
    beta = params.range_exponent + 1.0
    implied = [moment_from_c_beta(params, beta, lam, c_beta(params, beta, lam)) for lam in (0.5, 1.0, 2.0)]
    spread = (max(implied) - min(implied)) / abs(np.mean(implied))
    return worst < 0.01 and spread < 1e-3, f"coefficient rel. error {worst:.2e}, lambda spread {spread:.2e}"


# --------------------------------------------------------------------------
# stochastic


class _RangeSample:
    """Shared (max, min) sample for A5 and A6."""

    def __init__(self, seed: int, threads: int, n: int, trees: int):
        self.seed, self.threads, self.n, self.trees = seed, threads, n, trees
        self._raw = None

    @property
    def raw(self) -> np.ndarray:
        if self._raw is None:
            self._raw = sample_raw_ranges(1.5, self.n, self.trees, self.seed, self.threads)
        return self._raw


def check_a5(sample: _RangeSample) -> tuple[bool, str]:
    params = StableParams(1.5)
    target = params.gamma_one_minus_inv_alpha * params.blowup_constant
    plain = estimate_range_moment(params, ScalingRegime(sample.n, 1.5), 4.0, sample.trees, sample.seed, raw_ranges=sample.raw)
    cal_regime = ScalingRegime.calibrated(sample.n, 1.5)
    cal = estimate_range_moment(params, cal_regime, 4.0, sample.trees, sample.seed, raw_ranges=sample.raw)
    z0, z1 = plain.z_score(target), cal.z_score(target)
    detail = (
        f"target {target:.3f}; analytic scaling {plain.point:.2f}+-{plain.std_error:.2f} (z={z0:.1f}); "
        f"frozen correction {cal_regime.label_correction:.4f}: {cal.point:.2f}+-{cal.std_error:.2f} (z={z1:.1f})"
    )
    return abs(z0) <= 3 or abs(z1) <= 3, detail


def check_a6(sample: _RangeSample) -> tuple[bool, str]:
    params = StableParams(1.5)
    ratio = estimate_min_ratio(params, ScalingRegime(sample.n, 1.5), sample.trees, sample.seed, raw_ranges=sample.raw)
    r_target = analytic_min_ratio(params)
    z_ratio = ratio.z_score(r_target)
    m1 = moment_constants(params).moment_R_1
    first = estimate_range_moment(params, ScalingRegime.calibrated(sample.n, 1.5), 1.0, sample.trees, sample.seed, raw_ranges=sample.raw)
    z_first = first.z_score(m1)
    detail = (
        f"ratio {ratio.point:.4f}+-{ratio.std_error:.4f} vs {r_target:.4f} (z={z_ratio:.1f}); "
        f"E[R] {first.point:.4f}+-{first.std_error:.4f} vs {m1:.4f} (z={z_first:.1f})"
    )
    return abs(z_ratio) <= 3 and abs(z_first) <= 3, detail


EPS_LADDER = (0.2, 0.1, 0.05, 0.025)


def _bounded(values) -> tuple[bool, float, float]:
    v = np.asarray(values, dtype=float)
    if np.any(v <= 0):
        return False, math.inf, math.inf
    spread = float(v.max() / v.min())
    growth = float(v[-1] / v[0])
    return spread < 10 and growth < 3, spread, growth


def check_a7(seed: int, threads: int, n: int = 2**14, trees: int = 200, paths: int = 4096) -> tuple[bool, str]:
    params = StableParams(1.5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EstimatorWarning)
        occ = occupation_scaling_study(params, ScalingRegime.calibrated(n, 1.5), 1.0, EPS_LADDER, trees, seed, threads)
        table = vtable_halfline(params, 1.0, GridSpec(n_points=256))
        bes = [
            bessel_moment_formula(params, table, e, BesselConfig.for_params(params, e), paths, seed + i, threads)
            for i, e in enumerate(EPS_LADDER)
        ]
    ok_occ, s_occ, g_occ = _bounded([r.point for r in occ])
    ok_bes, s_bes, g_bes = _bounded([r.point for r in bes])
    trunc = max(r.extras["truncation"] for r in occ)
    detail = (
        f"MC occupation max/min {s_occ:.2f} last/first {g_occ:.2f} (extrapolated share up to {trunc:.2f}); "
        f"Bessel max/min {s_bes:.2f} last/first {g_bes:.2f}"
    )
    return ok_occ and ok_bes, detail


def check_a8(seed: int, threads: int, sizes=(2**9, 2**11, 2**13), trees: int = 200) -> tuple[bool, str]:
    params = StableParams(1.5)
    meds = [
        increase_median_report(params, ScalingRegime.calibrated(n, 1.5), 0.3, 0.1, trees, seed, threads).point for n in sizes
    ]
    ok = all(b < a for a, b in zip(meds, meds[1:]))
    return ok, "medians " + ", ".join(f"n={n}: {m:.4f}" for n, m in zip(sizes, meds))


# --------------------------------------------------------------------------
# oracle


def all_plane_trees(n: int) -> list[DiscreteTree]:
    """Every plane tree with n vertices (unary vertices allowed)."""
    out = []
    for counts in product(range(n), repeat=n):
        if sum(counts) != n - 1:
            continue
        steps = np.array(counts) - 1
        walk = np.cumsum(steps)
        if np.all(walk[:-1] >= 0):
            out.append(DiscreteTree(steps))
    return out


def sampler_total_variation(alpha: float, n: int, draws: int, rng: np.random.Generator) -> float:
    law = OffspringLaw(alpha)
    exact = enumerate_trees(law, n)
    counts: dict = {}
    for _ in range(draws):
        key = tuple(int(s) for s in sample_conditioned_tree(law, n, rng).steps)
        counts[key] = counts.get(key, 0) + 1
    keys = set(exact) | set(counts)
    return 0.5 * sum(abs(exact.get(k, 0.0) - counts.get(k, 0) / draws) for k in keys)


def check_a9(seed: int, draws: int = 100_000) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    tv = {n: sampler_total_variation(1.5, n, draws, rng) for n in (1, 3, 4, 5)}
    mismatches = 0
    n_trees = 0
    for n in range(1, 7):
        for tree in all_plane_trees(n):
            n_trees += 1
            s, t = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
            got = tree_distance(tree, s.ravel(), t.ravel()).reshape(n, n)
            mismatches += int(np.count_nonzero(got != brute_force_distances(tree)))
    ok = max(tv.values()) < 0.01 and mismatches == 0
    tv_text = ", ".join(f"n={n}: {v:.4f}" for n, v in tv.items())
    return ok, f"TV {tv_text}; distance mismatches {mismatches} over {n_trees} trees"


# --------------------------------------------------------------------------

SUITES = {
    "analytic": ("A1", "A2", "A3", "A4"),
    "stochastic": ("A5", "A6", "A7", "A8"),
    "oracle": ("A9",),
}


def run_verify(
    only: Optional[Iterable[str]] = None,
    seed: int = DEFAULT_SEED,
    threads: int = 1,
    a5_trees: int = A5_TREES,
    a5_n: int = A5_TARGET_N,
) -> list[CriterionResult]:
    """Run the selected suites (names from SUITES or criterion keys)."""
    wanted: list[str] = []
    for item in only or ("analytic", "stochastic", "oracle"):
        keys = SUITES.get(item, (item,))
        wanted += [k for k in keys if k not in wanted]
    sample = _RangeSample(seed, threads, a5_n, a5_trees)
    checks = {
        "A1": check_a1,
        "A2": check_a2,
        "A3": check_a3,
        "A4": check_a4,
        "A5": lambda: check_a5(sample),
        "A6": lambda: check_a6(sample),
        "A7": lambda: check_a7(seed, threads),
        "A8": lambda: check_a8(seed, threads),
        "A9": lambda: check_a9(seed),
    }
    unknown = [k for k in wanted if k not in checks]
    if unknown:
        raise ValueError(f"unknown criteria or suites: {unknown}")
    return [_timed(k, checks[k]) for k in wanted]


def format_table(results: Iterable[CriterionResult]) -> str:
    return "\n".join(r.line for r in results)
