"""Model constants for the alpha-stable branching mechanism psi(lambda) = lambda**alpha.

Everything here is a pure function of ``alpha`` (and of its arguments), so the
objects can be shared freely between threads and processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate

ALPHA_MIN = 1.05
ALPHA_MAX = 1.95


class DomainError(ValueError):
    """Argument outside the domain of a model function."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message: str, partial: float = math.nan, error: float = math.inf):
        super().__init__(f"{message} (partial={partial!r}, error={error!r})")
        self.partial = partial
        self.error = error


def gamma(x: float) -> float:
    """Real gamma function (stdlib implementation, ~15 significant digits)."""
    return math.gamma(x)


@dataclass(frozen=True)
class StableParams:
    alpha: float
    c_alpha: float = field(init=False)
    small_c_alpha: float = field(init=False)
    gamma_one_minus_inv_alpha: float = field(init=False)
    range_exponent: float = field(init=False)
    occupation_exponent: float = field(init=False)
    bessel_dim: float = field(init=False)
    nu_tilde: float = field(init=False)

    def __post_init__(self):
        a = float(self.alpha)
        if not (ALPHA_MIN <= a <= ALPHA_MAX) or math.isnan(a):
            raise DomainError(f"alpha must lie in [{ALPHA_MIN}, {ALPHA_MAX}], got {self.alpha!r}")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "c_alpha", (a - 1.0) / gamma(2.0 - a))
        object.__setattr__(self, "small_c_alpha", (a - 1.0) ** (-1.0 / (a - 1.0)))
        object.__setattr__(self, "gamma_one_minus_inv_alpha", gamma(1.0 - 1.0 / a))
        object.__setattr__(self, "range_exponent", 2.0 / (a - 1.0))
        object.__setattr__(self, "occupation_exponent", 2.0 * a / (a - 1.0))
        object.__setattr__(self, "bessel_dim", (5.0 * a - 1.0) / (a - 1.0))
        object.__setattr__(self, "nu_tilde", (3.0 * a + 1.0) / (2.0 * (a - 1.0)))

    @property
    def blowup_constant(self) -> float:
        """((alpha+1)/(alpha-1)^2)^(1/(alpha-1)), the prefactor of v0(x) = K x^(-2/(alpha-1))."""
        a = self.alpha
        return ((a + 1.0) / (a - 1.0) ** 2) ** (1.0 / (a - 1.0))

    @property
    def inverse_square_coefficient(self) -> float:
        """alpha(alpha+1)/(alpha-1)^2, so that psi'(v0(x)) = this / x^2."""
        a = self.alpha
        return a * (a + 1.0) / (a - 1.0) ** 2

    @property
    def ito_weight_normalizer(self) -> float:
        """alpha * Gamma(1 - 1/alpha); the Ito size density is s^(-1-1/alpha) / this."""
        return self.alpha * self.gamma_one_minus_inv_alpha

    def jump_density(self, r):
        """Levy measure density alpha*C_alpha*r^(-alpha-1) of the driving process."""
        r = np.asarray(r, dtype=float)
        return self.alpha * self.c_alpha * r ** (-self.alpha - 1.0)

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "c_alpha": self.c_alpha,
            "small_c_alpha": self.small_c_alpha,
            "gamma_one_minus_inv_alpha": self.gamma_one_minus_inv_alpha,
            "range_exponent": self.range_exponent,
            "occupation_exponent": self.occupation_exponent,
            "bessel_dim": self.bessel_dim,
            "nu_tilde": self.nu_tilde,
        }


def _nonnegative(lam, name="lam"):
    arr = np.asarray(lam, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError(f"{name} must be nonnegative, got {lam!r}")
    return arr


def _positive(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0) or np.any(np.isnan(arr)):
        raise DomainError(f"{name} must be positive, got {x!r}")
    return arr


def _scalar_or_array(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def psi(params: StableParams, lam):
    lam = _nonnegative(lam)
    return _scalar_or_array(lam ** params.alpha)


def psi_tilde(params: StableParams, lam):
    lam = _nonnegative(lam)
    return _scalar_or_array(lam ** (params.alpha - 1.0))


def psi_prime(params: StableParams, lam):
    lam = _nonnegative(lam)
    return _scalar_or_array(params.alpha * lam ** (params.alpha - 1.0))


def v0_closed_form(params: StableParams, x):
    """N_x-mass of the event that the snake range contains 0 (no lifetime penalty)."""
    x = _positive(x)
    a = params.alpha
    return _scalar_or_array(params.blowup_constant * x ** (-2.0 / (a - 1.0)))


def psi_prime_v0_identity_check(params: StableParams, x):
    """psi'(v0(x)) - alpha(alpha+1)/((alpha-1)^2 x^2); identically zero."""
    x = _positive(x)
    return _scalar_or_array(
        psi_prime(params, v0_closed_form(params, x)) - params.inverse_square_coefficient / x**2
    )


def ito_lifetime_laplace(params: StableParams, lam):
    """N[1 - exp(-lam * sigma)] = lam^(1/alpha)."""
    lam = _nonnegative(lam)
    return _scalar_or_array(lam ** (1.0 / params.alpha))


def ito_size_density(params: StableParams, s):
    """Density of the lifetime sigma under the Ito measure."""
    s = _positive(s, "s")
    return _scalar_or_array(s ** (-1.0 - 1.0 / params.alpha) / params.ito_weight_normalizer)


# --------------------------------------------------------------------------
# Quadrature


@dataclass(frozen=True)
class QuadratureSpec:
    abs_tol: float = 1e-12
    rel_tol: float = 1e-12
    max_subdivisions: int = 500
    improper_cutoff_policy: str = "exponential-tail"

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("quadrature tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")
        if self.improper_cutoff_policy not in ("exponential-tail", "power-tail"):
            raise ValueError(f"unknown tail policy {self.improper_cutoff_policy!r}")


DEFAULT_QUADRATURE = QuadratureSpec()


def _quad(f, a, b, spec: QuadratureSpec, points=None):
    kwargs = dict(epsabs=spec.abs_tol, epsrel=spec.rel_tol, limit=spec.max_subdivisions, full_output=1)
    if points is not None and math.isfinite(b):
        kwargs["points"] = points
    out = integrate.quad(f, a, b, **kwargs)
    value, err = out[0], out[1]
    ok = len(out) == 3 or err <= max(spec.abs_tol, spec.rel_tol * abs(value))
    if not ok or not math.isfinite(value):
        raise QuadratureError(f"quadrature on [{a}, {b}] did not converge", value, err)
    return value, err


def _find_pivot(f, a, spec: QuadratureSpec, max_doublings: int = 60) -> float:
    target = spec.abs_tol * 1e-2
    p = max(a + 1.0, 2.0 * a if a > 0 else 1.0)
    for _ in range(max_doublings):
        try:
            if abs(f(p)) < target:
                return p
        except (OverflowError, ZeroDivisionError):
            pass
        p *= 2.0
    return p


def integrate_adaptive(
    f: Callable[[float], float],
    a: float,
    b: float,
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
    points=None,
) -> tuple[float, float]:
    """Adaptive Gauss-Kronrod quadrature with an explicit failure mode.

    Returns ``(value, error_estimate)``. For ``b = inf`` the range is split at a
    pivot where ``|f|`` has dropped below ``abs_tol/100``; the tail is then
    integrated directly (exponential tails) or after the substitution
    ``u = pivot * exp(s)`` (power tails, whose decay in ``s`` is exponential).
    Raises :class:`QuadratureError` carrying the partial estimate on failure.
    """
    if not math.isfinite(a):
        raise ValueError("lower limit must be finite")
    if b == a:
        return 0.0, 0.0
    if math.isfinite(b):
        return _quad(f, a, b, spec, points)

    if spec.improper_cutoff_policy == "power-tail":
        pivot = a + 1.0 if a <= 0 else 2.0 * a
    else:
        pivot = _find_pivot(f, a, spec)
    # Cut the head into geometrically growing pieces so that no single
    # Gauss-Kronrod panel has to span many decades.
    edges = [a]
    step = 1.0
    while edges[-1] + step < pivot:
        edges.append(edges[-1] + step)
        step *= 2.0
    edges.append(pivot)
    head = err = 0.0
    for i, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        pts = None
        if i == 0 and points is not None:
            pts = [p for p in points if lo < p < hi] or None
        v, e = _quad(f, lo, hi, spec, pts)
        head += v
        err += e
    if spec.improper_cutoff_policy == "power-tail":

        def g(s):
            if s > 700.0:
                return 0.0
            u = pivot * math.exp(s)
            try:
                return f(u) * u
            except OverflowError:
                return 0.0

        tail, e2 = _quad(g, 0.0, math.inf, spec)
    else:
        tail, e2 = _quad(f, pivot, math.inf, spec)
    return head + tail, err + e2


POWER_TAIL = QuadratureSpec(abs_tol=1e-13, rel_tol=1e-12, max_subdivisions=500, improper_cutoff_policy="power-tail")


def alpha0(params: StableParams, spec: QuadratureSpec = POWER_TAIL) -> float:
    """Cached wrapper of :func:`alpha0_quadrature`."""
    if spec == POWER_TAIL:
        return _alpha0_cached(params.alpha)
    return alpha0_quadrature(params.alpha, spec)


@lru_cache(maxsize=64)
def _alpha0_cached(alpha: float) -> float:
    return alpha0_quadrature(alpha, POWER_TAIL)


def alpha0_quadrature(alpha: float, spec: QuadratureSpec = POWER_TAIL) -> float:
    """alpha_0 = sqrt(alpha+1)/2 * int_1^inf du / sqrt(u^(alpha+1) - 1).

    This is the constant fixing the symmetric two-sided solution with zero
    lifetime penalty, v_{0,-r,r}(0) = (alpha_0 / r)^(2/(alpha-1)).
    """
    k = alpha + 1.0

    def integrand(u):
        lu = k * math.log(u)
        return math.exp(-0.5 * lu) / math.sqrt(-math.expm1(-lu))

    value, _ = integrate_adaptive(integrand, 1.0, math.inf, spec)
    return 0.5 * math.sqrt(k) * value
