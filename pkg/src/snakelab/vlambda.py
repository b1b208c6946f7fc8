"""Solutions of 1/2 v'' = v^alpha - lam and the moment constants built from them.

The half-line solution with blow-up at 0 is obtained by inverting

    F_lam(y) = int_y^inf du / (2 sqrt(g(u))),
    g(u) = u^(alpha+1)/(alpha+1) - lam*u + alpha/(alpha+1) * lam^((alpha+1)/alpha),

which after the substitution u = y0*s (y0 = lam^(1/alpha)) becomes
F_lam(y) = y0^(-m) Phi(y/y0) with m = (alpha-1)/2 and a universal function Phi
of one variable. Phi is tabulated once per alpha with Gauss-Legendre panels in
two coordinates: t = log(w-1) near the double root w = 1 of the radicand, and
sigma = log(w) for w >= 2, where the leading power A*w^(-m) is split off
analytically. The excess v - y0 underflows quickly (it decays like
exp(-x/c)), so it is carried as log(v - y0) wherever that matters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from .stable_core import (
    DEFAULT_QUADRATURE,
    DomainError,
    QuadratureError,
    QuadratureSpec,
    StableParams,
    alpha0,
    gamma,
    integrate_adaptive,
    v0_closed_form,
)

_GL_ORDER = 20
_T_MIN = -40.0
_S_MAX = 60.0
_SERIES_CUTOFF = 0.05
_SERIES_TERMS = 18


class SolverError(RuntimeError):
    """Shooting or root bracketing failed; ``last`` holds the final iterate."""

    def __init__(self, message: str, last=None):
        super().__init__(message)
        self.last = last


def lam_root(params: StableParams, lam: float) -> float:
    """lam^(1/alpha), the limit of v at an infinite endpoint."""
    if lam < 0:
        raise DomainError(f"lam must be nonnegative, got {lam!r}")
    return lam ** (1.0 / params.alpha)


def decay_length(params: StableParams, lam: float) -> float:
    """c = 1/(sqrt(2 alpha) lam^((alpha-1)/(2 alpha))); v - lam^(1/alpha) ~ exp(-x/c)."""
    if lam <= 0:
        raise DomainError("decay length needs lam > 0")
    a = params.alpha
    return 1.0 / (math.sqrt(2.0 * a) * lam ** ((a - 1.0) / (2.0 * a)))


def expansion_coefficient(params: StableParams, lam: float = 1.0) -> float:
    """Coefficient of x^(2 alpha/(alpha-1)) in v_lam(x)/v_0(x) - 1 as x -> 0."""
    a = params.alpha
    return lam * (a - 1.0) ** (2.0 * a / (a - 1.0)) / ((3.0 * a - 1.0) * (a + 1.0) ** (1.0 / (a - 1.0)))


# --------------------------------------------------------------------------
# Universal function Phi


class _PhiTable:
    """Phi(w) = int_w^inf ds / (2 sqrt(q(s))), q(s) = (s^(a+1) - (a+1)s + a)/(a+1)."""

    def __init__(self, alpha: float):
        a = alpha
        self.alpha = a
        self.k = a + 1.0
        self.m = 0.5 * (a - 1.0)
        self.A = math.sqrt(a + 1.0) / (a - 1.0)
        self.c1 = 1.0 / math.sqrt(2.0 * a)
        self.dq_asym = (a + 1.0) ** 1.5 / (2.0 * (3.0 * a - 1.0))
        self.dq_rate = 0.5 * (3.0 * a - 1.0)
        x, w = np.polynomial.legendre.leggauss(_GL_ORDER)
        self._x = x
        self._w = w
        # binomial coefficients C(k, j) for j >= 2, divided by k
        coef = [1.0, self.k]
        for j in range(1, _SERIES_TERMS + 2):
            coef.append(coef[-1] * (self.k - j) / (j + 1))
        self._series = np.array(coef[2 : 2 + _SERIES_TERMS]) / self.k

        self.t_edges = np.arange(_T_MIN, 0.0 + 0.5, 1.0)
        t_cells = self._panel(self._k_near, self.t_edges[:-1], self.t_edges[1:])
        self.t_cum = np.concatenate([np.cumsum(t_cells[::-1])[::-1], [0.0]])

        n_s = int(math.ceil(_S_MAX - math.log(2.0)))
        self.s_edges = np.linspace(math.log(2.0), _S_MAX, n_s + 1)
        s_cells = self._panel(self._dq_integrand, self.s_edges[:-1], self.s_edges[1:])
        tail = self.dq_asym * math.exp(-self.dq_rate * _S_MAX)
        self.s_cum = np.concatenate([np.cumsum(s_cells[::-1])[::-1] + tail, [tail]])

        self.phi2 = self.A * 2.0 ** (-self.m) + self.s_cum[0]
        self.phi_tmin = self.phi2 + self.t_cum[0]

    # integrands -----------------------------------------------------------
    def _q_over_eps2(self, eps):
        eps = np.asarray(eps, dtype=float)
        small = eps < _SERIES_CUTOFF
        out = np.empty_like(eps)
        if np.any(small):
            e = eps[small]
            out[small] = np.polynomial.polynomial.polyval(e, self._series)
        if np.any(~small):
            e = eps[~small]
            out[~small] = (np.expm1(self.k * np.log1p(e)) - self.k * e) / (self.k * e * e)
        return out

    def _k_near(self, t):
        """Integrand of Phi in the coordinate t = log(w - 1)."""
        return 0.5 / np.sqrt(self._q_over_eps2(np.exp(t)))

    def _dq_integrand(self, sig):
        """d/dsigma of the subtracted part Dq in the coordinate sigma = log(w)."""
        sig = np.asarray(sig, dtype=float)
        r = (self.k * np.exp(sig) - self.alpha) * np.exp(-self.k * sig)
        return 0.5 * math.sqrt(self.k) * np.exp((1.0 - 0.5 * self.k) * sig) * np.expm1(-0.5 * np.log1p(-r))

    def _panel(self, f, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        nodes = mid[..., None] + half[..., None] * self._x
        return half * (f(nodes) @ self._w)

    # evaluation -------------------------------------------------------------
    def phi_t(self, t):
        """Phi(1 + e^t) for t <= 0."""
        t = np.asarray(t, dtype=float)
        out = np.empty_like(t)
        deep = t <= _T_MIN
        if np.any(deep):
            td = t[deep]
            out[deep] = self.phi_tmin + self.c1 * (_T_MIN - td) - self.c1 * (self.alpha - 1.0) / 6.0 * (
                math.exp(_T_MIN) - np.exp(td)
            )
        mid = ~deep
        if np.any(mid):
            tm = t[mid]
            idx = np.minimum(np.floor(tm - _T_MIN).astype(int) + 1, len(self.t_edges) - 1)
            right = self.t_edges[idx]
            out[mid] = self.phi2 + self.t_cum[idx] + self._panel(self._k_near, tm, right)
        return out

    def dq(self, sig):
        sig = np.asarray(sig, dtype=float)
        out = np.empty_like(sig)
        far = sig >= _S_MAX
        if np.any(far):
            out[far] = self.dq_asym * np.exp(-self.dq_rate * sig[far])
        near = ~far
        if np.any(near):
            sn = sig[near]
            step = self.s_edges[1] - self.s_edges[0]
            idx = np.minimum(np.floor((sn - self.s_edges[0]) / step).astype(int) + 1, len(self.s_edges) - 1)
            right = self.s_edges[idx]
            out[near] = self.s_cum[idx] + self._panel(self._dq_integrand, sn, right)
        return out

    def phi_sigma(self, sig):
        """Phi(e^sigma) for sigma >= log 2."""
        sig = np.asarray(sig, dtype=float)
        return self.A * np.exp(-self.m * sig) + self.dq(sig)

    def rel_excess_sigma(self, sig):
        """W (xi/A)^(1/m) - 1 where xi = Phi(W), W = e^sigma."""
        sig = np.asarray(sig, dtype=float)
        delta = self.dq(sig) * np.exp(self.m * sig) / self.A
        return np.expm1(np.log1p(delta) / self.m)

    def sqrt_q(self, branch: str, coord: float) -> float:
        """sqrt(q(w)) at w = 1 + e^coord ("t") or w = e^coord ("sigma")."""
        if branch == "t":
            eps = math.exp(coord)
            return eps * math.sqrt(float(self._q_over_eps2(np.array([eps]))[0]))
        r = (self.k * math.exp(coord) - self.alpha) * math.exp(-self.k * coord)
        return math.exp(0.5 * self.k * coord) * math.sqrt((1.0 - r) / self.k)

    def invert(self, xi: float) -> tuple[str, float]:
        """Solve Phi(w) = xi; returns ("t", log(w-1)) or ("sigma", log(w))."""
        if not xi > 0 or not math.isfinite(xi):
            raise DomainError(f"Phi is a bijection onto (0, inf); got {xi!r}")
        if xi >= self.phi_tmin:
            t = _T_MIN - (xi - self.phi_tmin) / self.c1
            for _ in range(3):
                corr = (self.alpha - 1.0) / 6.0 * (math.exp(_T_MIN) - math.exp(t))
                t = _T_MIN - (xi - self.phi_tmin + self.c1 * corr) / self.c1
            return "t", t
        if xi >= self.phi2:
            g = lambda t: float(self.phi_t(t)) - xi
            return "t", optimize.brentq(g, _T_MIN, 0.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        phi_smax = float(self.phi_sigma(_S_MAX))
        base = math.log(self.A / xi) / self.m
        if xi < phi_smax:
            sig = base
            for _ in range(50):
                delta = float(self.dq(sig)) * math.exp(self.m * sig) / self.A
                new = base + math.log1p(delta) / self.m
                if abs(new - sig) <= 4e-16 * abs(new):
                    sig = new
                    break
                sig = new
            return "sigma", sig
        g = lambda s: float(self.phi_sigma(s)) - xi
        lo = max(math.log(2.0), base)
        if g(lo) <= 0:
            # Dq is below rounding of A*w^(-m): the leading term is exact
            return "sigma", lo
        hi = lo + 1.0
        while g(hi) > 0:
            hi = lo + 2.0 * (hi - lo)
        return "sigma", optimize.brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


@lru_cache(maxsize=32)
def _phi_table(alpha: float) -> _PhiTable:
    return _PhiTable(alpha)


def _table(params: StableParams) -> _PhiTable:
    return _phi_table(params.alpha)


# --------------------------------------------------------------------------
# F_lambda and its inverse


def f_lambda(params: StableParams, lam: float, y: float) -> float:
    """F_lam(y) = int_y^inf du / (2 sqrt(g(u))) for y > lam^(1/alpha)."""
    tab = _table(params)
    if lam < 0:
        raise DomainError(f"lam must be nonnegative, got {lam!r}")
    if lam == 0:
        if not y > 0:
            raise DomainError(f"y must be positive when lam = 0, got {y!r}")
        return tab.A * y ** (-tab.m)
    y0 = lam_root(params, lam)
    if not y > y0:
        raise DomainError(f"F_lam needs y > lam^(1/alpha) = {y0!r}, got {y!r}")
    excess = (y - y0) / y0
    if excess <= 1.0:
        phi = float(tab.phi_t(math.log(excess)))
    else:
        phi = float(tab.phi_sigma(math.log(y / y0)))
    return y0 ** (-tab.m) * phi


def f_lambda_log_excess(params: StableParams, lam: float, log_excess: float) -> float:
    """F_lam evaluated at y = lam^(1/alpha) + exp(log_excess)."""
    if lam <= 0:
        raise DomainError("the excess coordinate needs lam > 0")
    tab = _table(params)
    y0 = lam_root(params, lam)
    t = log_excess - math.log(y0)
    if t <= 0:
        phi = float(tab.phi_t(t))
    else:
        phi = float(tab.phi_sigma(np.logaddexp(0.0, t)))
    return y0 ** (-tab.m) * phi


def _solve(params: StableParams, lam: float, x: float):
    if not x > 0 or not math.isfinite(x):
        raise DomainError(f"x must be positive and finite, got {x!r}")
    tab = _table(params)
    y0 = lam_root(params, lam)
    xi = x * y0**tab.m
    try:
        branch, coord = tab.invert(xi)
    except ValueError as exc:
        raise SolverError(f"bracketing failed for x={x!r}, lam={lam!r}") from exc
    return tab, y0, xi, branch, coord


def v_lambda_halfline(params: StableParams, lam: float, x, tol: float = 1e-12):
    """v_lam on (0, inf) with v(0+) = inf and v(inf) = lam^(1/alpha).

    ``tol`` is accepted for interface symmetry; the inversion always runs to
    machine precision in the natural coordinate.
    """
    if lam < 0:
        raise DomainError(f"lam must be nonnegative, got {lam!r}")
    if lam == 0:
        return v0_closed_form(params, x)
    if np.ndim(x):
        return np.array([v_lambda_halfline(params, lam, float(xx), tol) for xx in np.ravel(x)]).reshape(np.shape(x))
    tab, y0, xi, branch, coord = _solve(params, lam, x)
    if branch == "t":
        return y0 * (1.0 + math.exp(coord))
    return y0 * math.exp(coord)


def v_lambda_log_excess(params: StableParams, lam: float, x: float) -> float:
    """log(v_lam(x) - lam^(1/alpha)); finite even where the excess underflows."""
    if lam == 0:
        return math.log(v0_closed_form(params, x))
    tab, y0, xi, branch, coord = _solve(params, lam, x)
    if branch == "t":
        return math.log(y0) + coord
    return math.log(y0) + math.log(math.expm1(coord))


def v_lambda_relative_excess(params: StableParams, lam: float, x: float) -> float:
    """v_lam(x)/v_0(x) - 1, computed without cancellation for small x."""
    if lam == 0:
        return 0.0
    tab, y0, xi, branch, coord = _solve(params, lam, x)
    if branch == "sigma":
        return float(tab.rel_excess_sigma(coord))
    w = 1.0 + math.exp(coord)
    return w * (xi / tab.A) ** (1.0 / tab.m) - 1.0


def v_lambda_slope(params: StableParams, lam: float, x):
    """dv/dx = -2 sqrt(g(v)) of the half-line solution (first integral)."""
    if lam == 0:
        return -params.range_exponent * v0_closed_form(params, x) / np.asarray(x, dtype=float)
    if np.ndim(x):
        return np.array([v_lambda_slope(params, lam, float(xx)) for xx in np.ravel(x)]).reshape(np.shape(x))
    tab, y0, xi, branch, coord = _solve(params, lam, x)
    return -2.0 * y0 ** (0.5 * tab.k) * tab.sqrt_q(branch, coord)


def h_lambda(params: StableParams, lam: float, x):
    """H_lam(x) = v_lam(x) - lam^(1/alpha)."""
    if lam == 0:
        return v0_closed_form(params, x)
    if np.ndim(x):
        return np.array([h_lambda(params, lam, float(xx)) for xx in np.ravel(x)]).reshape(np.shape(x))
    return math.exp(v_lambda_log_excess(params, lam, x))


def v_lambda_expansion(params: StableParams, lam: float, x):
    """Two-term small-x expansion v_0(x) (1 + coef * lam * x^(2 alpha/(alpha-1)))."""
    x_arr = np.asarray(x, dtype=float)
    val = v0_closed_form(params, x_arr) * (
        1.0 + expansion_coefficient(params, lam) * x_arr ** params.occupation_exponent
    )
    return float(val) if np.ndim(val) == 0 else val


# --------------------------------------------------------------------------
# VTable


@dataclass(frozen=True)
class VTable:
    """Tabulated solution x -> v(x) with its metadata.

    When exact slopes are supplied, log v is interpolated by cubic Hermite
    segments; otherwise by monotone (PCHIP) cubics.
    """

    lam: float
    a: float
    b: float
    grid: tuple
    values: tuple
    method: str
    tol: float
    residual: Optional[tuple] = None
    slopes: Optional[tuple] = None
    rel_excess: Optional[tuple] = None
    _interp: object = field(default=None, repr=False, compare=False)

    METHODS = ("closed-form", "F-inversion", "G-inversion", "shooting")

    def __post_init__(self):
        if self.method not in self.METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape or len(g) < 2:
            raise ValueError("grid and values must be 1-d of equal length >= 2")
        if np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing")
        if not (self.a < g[0] and g[-1] < self.b):
            raise ValueError("grid must lie inside (a, b)")
        if np.any(v <= 0):
            raise ValueError("values must be positive")
        if self.slopes is not None:
            dv = np.asarray(self.slopes, dtype=float)
            interp = CubicHermiteSpline(g, np.log(v), dv / v, extrapolate=False)
        else:
            interp = PchipInterpolator(g, np.log(v), extrapolate=False)
        object.__setattr__(self, "_interp", interp)

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.grid)

    @property
    def v(self) -> np.ndarray:
        return np.asarray(self.values)

    def __call__(self, x):
        """Interpolated v; NaN outside the grid hull."""
        out = np.exp(self._interp(np.asarray(x, dtype=float)))
        return float(out) if np.ndim(out) == 0 else out

    def rel_excess_at(self, x):
        """Interpolated v/v_0 - 1 (half-line tables built by F-inversion only)."""
        if self.rel_excess is None:
            raise ValueError("table carries no relative-excess column")
        r = np.asarray(self.rel_excess)
        ok = r > 0
        f = PchipInterpolator(np.log(self.x[ok]), np.log(r[ok]), extrapolate=False)
        out = np.exp(f(np.log(np.asarray(x, dtype=float))))
        return float(out) if np.ndim(out) == 0 else out

    # serialization ---------------------------------------------------------
    def metadata(self) -> dict:
        return {"lam": self.lam, "a": self.a, "b": self.b, "method": self.method, "tol": self.tol}

    _COLUMNS = ("residual", "slopes", "rel_excess")

    def to_json(self) -> str:
        doc = {
            "metadata": {k: _encode_float(v) if isinstance(v, float) else v for k, v in self.metadata().items()},
            "grid": [float(x) for x in self.grid],
            "values": [float(x) for x in self.values],
        }
        for name in self._COLUMNS:
            col = getattr(self, name)
            if col is not None:
                doc[name] = [float(x) for x in col]
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "VTable":
        doc = json.loads(text)
        meta = doc["metadata"]
        extra = {name: tuple(doc[name]) for name in cls._COLUMNS if name in doc}
        return cls(
            lam=_decode_float(meta["lam"]),
            a=_decode_float(meta["a"]),
            b=_decode_float(meta["b"]),
            grid=tuple(doc["grid"]),
            values=tuple(doc["values"]),
            method=meta["method"],
            tol=_decode_float(meta["tol"]),
            **extra,
        )

    def to_csv(self, header_lines=()) -> str:
        lines = [f"# {h}" for h in header_lines]
        meta = self.metadata()
        lines.append("# " + " ".join(f"{k}={meta[k]}" for k in meta))
        cols = ["x", "v"] + [c for c in ("residual", "slopes") if getattr(self, c) is not None]
        lines.append(",".join(cols))
        data = [self.grid, self.values] + [getattr(self, c) for c in cols[2:]]
        for row in zip(*data):
            lines.append(",".join(repr(float(z)) for z in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "VTable":
        meta = {}
        rows = []
        header = None
        for line in text.splitlines():
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, val = tok.split("=", 1)
                        meta[k] = val
                continue
            if header is None:
                header = line.split(",")
                continue
            if line.strip():
                rows.append([float(c) for c in line.split(",")])
        arr = np.array(rows)
        extra = {c: tuple(arr[:, header.index(c)]) for c in ("residual", "slopes") if c in header}
        return cls(
            lam=float(meta["lam"]),
            a=float(meta["a"]),
            b=float(meta["b"]),
            grid=tuple(arr[:, 0]),
            values=tuple(arr[:, 1]),
            method=meta["method"],
            tol=float(meta["tol"]),
            **extra,
        )


def _encode_float(x: float):
    return x if math.isfinite(x) else repr(x)


def _decode_float(x) -> float:
    return float(x)


# --------------------------------------------------------------------------
# Grids and residuals


@dataclass(frozen=True)
class GridSpec:
    n_points: int = 512
    tol: float = 1e-10
    near_fraction: float = 0.5
    v_max: float = 1e8

    def __post_init__(self):
        if self.n_points < 8:
            raise ValueError("n_points must be >= 8")


def _one_sided_grid(length: float, d_min: float, n: int, near_fraction: float = 0.5) -> np.ndarray:
    """Distances from a singular endpoint: geometric near it, linear once the
    geometric step would exceed the linear spacing."""
    lin_step = length / max(2.0, n * (1.0 - near_fraction))
    ratio = (lin_step / d_min) ** (1.0 / max(1.0, n * near_fraction))
    out = [d_min]
    d = d_min
    while True:
        d = d + min(d * (ratio - 1.0), lin_step)
        if d >= length:
            break
        out.append(d)
    out.append(length)
    out = np.array(out)
    # resample along the index so the caller gets exactly n points
    return np.interp(np.linspace(0.0, len(out) - 1.0, n), np.arange(len(out)), out)


def fd_residual(params: StableParams, lam: float, fn: Callable, x: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """|1/2 v'' - v^alpha + lam| / (v^alpha + lam) by fourth-order central differences."""
    x = np.asarray(x, dtype=float)
    h = 1e-3 * np.asarray(dist, dtype=float)
    vm2, vm1, v, vp1, vp2 = (fn(x + j * h) for j in (-2, -1, 0, 1, 2))
    d2 = (-vm2 + 16.0 * vm1 - 30.0 * v + 16.0 * vp1 - vp2) / (12.0 * h * h)
    va = v**params.alpha
    return np.abs(0.5 * d2 - va + lam) / (va + lam)


def _check_tol(table: VTable, exact_fn, grid) -> float:
    """Largest relative interpolation error at cell midpoints."""
    grid = np.asarray(grid)
    mids = 0.5 * (grid[1:] + grid[:-1])
    return float(np.max(np.abs(table(mids) / exact_fn(mids) - 1.0)))


def vtable_halfline(params: StableParams, lam: float, grid_spec: GridSpec = GridSpec(), x_min=None, x_max=None) -> VTable:
    """Half-line table on (0, inf) by F-inversion, with a relative-excess column.

    The grid is geometric from ``x_min`` (default 1e-3 c) up to the point where
    the excess over lam^(1/alpha) drops below 1e-17 of it.
    """
    n = grid_spec.n_points
    if lam == 0:
        grid = np.geomspace(1e-3 if x_min is None else x_min, 1e3 if x_max is None else x_max, n)
        fn = lambda z: v0_closed_form(params, z)
        vals = fn(grid)
        slopes = v_lambda_slope(params, 0.0, grid)
        rel = np.zeros(n)
        meth = "closed-form"
    else:
        c = decay_length(params, lam)
        y0 = lam_root(params, lam)
        x_lo = 1e-3 * c if x_min is None else x_min
        if x_max is None:
            x_max = f_lambda_log_excess(params, lam, math.log(y0) + math.log(1e-17))
        grid = np.geomspace(x_lo, x_max, n)
        fn = lambda z: v_lambda_halfline(params, lam, z)
        vals = fn(grid)
        slopes = v_lambda_slope(params, lam, grid)
        rel = np.array([v_lambda_relative_excess(params, lam, float(g)) for g in grid])
        meth = "F-inversion"
    res = fd_residual(params, lam, fn, grid, grid)
    cols = dict(residual=tuple(res), slopes=tuple(slopes), rel_excess=tuple(rel))
    draft = VTable(lam, 0.0, math.inf, tuple(grid), tuple(vals), meth, 0.0, **cols)
    return VTable(lam, 0.0, math.inf, tuple(grid), tuple(vals), meth, _check_tol(draft, fn, grid), **cols)


# --------------------------------------------------------------------------
# Shooting


def _blowup_distance(params: StableParams, v: float) -> float:
    """Distance to the blow-up point at which the lam = 0 profile equals v."""
    tab = _table(params)
    return tab.A * v ** (-tab.m)


def _rhs(params, lam):
    a = params.alpha

    def f(_x, z):
        return [z[1], 2.0 * (z[0] ** a - lam)]

    return f


def _blowup_event(v_max):
    def ev(_x, z):
        return z[0] - v_max

    ev.terminal = True
    return ev


def _floor_event(y0):
    def ev(_x, z):
        return z[0] - 0.5 * y0

    ev.terminal = True
    return ev


_IVP = dict(method="DOP853", rtol=1e-13, dense_output=True)


def _shoot_halfline(params: StableParams, lam: float, grid_spec: GridSpec):
    """Integrate leftward from the far field; returns (solution, x_blowup, x_far)."""
    y0 = lam_root(params, lam)
    a = params.alpha
    kappa = math.sqrt(2.0 * a * y0 ** (a - 1.0))
    h = 1e-7 * y0
    b2 = (a - 1.0) / (6.0 * y0)
    v_far = y0 + h + b2 * h * h
    dv_far = -kappa * (h + 2.0 * b2 * h * h)
    x_far = 0.0
    span = 60.0 / kappa + 10.0 * _blowup_distance(params, 2.0 * y0 + 1.0)
    sol = integrate.solve_ivp(
        _rhs(params, lam), (x_far, x_far - span), [v_far, dv_far], events=_blowup_event(grid_spec.v_max), atol=1e-20 * y0, **_IVP
    )
    if sol.status != 1 or len(sol.t_events[0]) == 0:
        raise SolverError("half-line shooting did not reach the blow-up level", sol.y[:, -1])
    x_hit = float(sol.t_events[0][0])
    x_blow = x_hit - _blowup_distance(params, grid_spec.v_max)
    return sol, x_blow, x_far


def _shoot_midpoint(params: StableParams, lam: float, theta: float, v_max: float):
    y0 = lam_root(params, lam)
    sol = integrate.solve_ivp(
        _rhs(params, lam),
        (0.0, 1e6),
        [theta, 0.0],
        events=[_blowup_event(v_max)],
        atol=1e-15 * theta,
        **_IVP,
    )
    if sol.status != 1 or len(sol.t_events[0]) == 0:
        raise SolverError(f"midpoint shot from theta={theta!r} did not blow up", sol.y[:, -1])
    return sol, float(sol.t_events[0][0]) + _blowup_distance(params, v_max)


def _asymptotic_blowup(params: StableParams, lam: float, d):
    """Two-term blow-up profile at distance d and its derivative in d."""
    d = np.asarray(d, dtype=float)
    c = expansion_coefficient(params, lam)
    pe = params.occupation_exponent
    v0 = v0_closed_form(params, d)
    val = v0 * (1.0 + c * d**pe)
    dval = v0 * (-params.range_exponent / d * (1.0 + c * d**pe) + c * pe * d ** (pe - 1.0))
    return val, dval


def _symmetric_theta(params: StableParams, lam: float, r: float, v_max: float) -> float:
    """Midpoint value of the solution on (-r, r), found by shooting on log(theta)."""
    y0 = lam_root(params, lam)
    a0 = alpha0(params)
    tab = _table(params)
    # lam = 0 profile: r = alpha0 theta^(-m)
    guess = (a0 / r) ** (1.0 / tab.m)

    def miss(log_th):
        _, reach = _shoot_midpoint(params, lam, math.exp(log_th), v_max)
        return math.log(reach / r)

    hi = math.log(max(guess, y0) * 2.0)
    while miss(hi) > 0:
        hi += 1.0
    lo = math.log(max(guess, y0 * (1.0 + 1e-9)))
    if lam > 0:
        lo = max(lo, math.log(y0) + 1e-12)
        gap = 1e-2
        lo = math.log(y0) + gap
        while miss(lo) < 0:
            gap *= 0.1
            lo = math.log(y0) + gap
            if gap < 1e-14:
                raise SolverError("could not bracket the midpoint value", math.exp(lo))
    else:
        while miss(lo) < 0:
            lo -= 1.0
    log_th = optimize.brentq(miss, lo, hi, xtol=1e-14, rtol=1e-14, maxiter=200)
    return math.exp(log_th)


def _g_integrand(k: float):
    def integrand(u):
        lu = k * math.log(u)
        return math.exp(-0.5 * lu) / math.sqrt(-math.expm1(-lu))

    return integrand


def _g_tail(params: StableParams, s: float) -> float:
    """alpha_0 - G(s) = sqrt(alpha+1)/2 int_s^inf du / sqrt(u^(alpha+1) - 1).

    G is the inverse profile of the lam = 0 solution on a symmetric interval:
    measured from the midpoint, v reaches theta*s after a distance
    theta^(-m) G(s).
    """
    k = params.alpha + 1.0
    integrand = _g_integrand(k)
    if s <= 2.0:
        # u = 1 + e^2 removes the inverse square root singularity at u = 1
        def near(e):
            if e < 1e-8:
                return 2.0 / math.sqrt(k)
            lu = k * math.log1p(e * e)
            return 2.0 * e * math.exp(-0.5 * lu) / math.sqrt(-math.expm1(-lu))

        head, _ = integrate_adaptive(near, 0.0, math.sqrt(s - 1.0))
        return alpha0(params) - 0.5 * math.sqrt(k) * head
    spec = QuadratureSpec(1e-14, 1e-12, 500, "power-tail")
    val, _ = integrate_adaptive(integrand, s, math.inf, spec)
    return 0.5 * math.sqrt(k) * val


def _g_inverse_tail(params: StableParams, target: float) -> float:
    """s with alpha_0 - G(s) = target, bracketed in log(s - 1)."""
    a0 = alpha0(params)
    if target >= a0:
        return 1.0
    k = params.alpha + 1.0
    m = 0.5 * (params.alpha - 1.0)
    f = lambda u: _g_tail(params, 1.0 + math.exp(u)) - target
    # starting guesses from the two ends: G(s) ~ sqrt(s - 1) near s = 1 and
    # alpha_0 - G(s) ~ sqrt(k) s^(-m) / (2m) for large s
    near = 2.0 * math.log(max(a0 - target, 1e-300))
    far_s = (2.0 * m * target / math.sqrt(k)) ** (-1.0 / m)
    guess = near if far_s < 2.0 else math.log(max(far_s - 1.0, 1e-300))
    lo, hi = guess - 0.5, guess + 0.5
    while f(lo) < 0:
        lo -= 2.0 * (hi - lo)
    while f(hi) > 0:
        hi += 2.0 * (hi - lo)
    u = optimize.brentq(f, lo, hi, xtol=1e-14, rtol=1e-14)
    return 1.0 + math.exp(u)


def _halfline_profile(params: StableParams, lam: float, grid_spec: GridSpec):
    """(v, dv/dd) as functions of the distance d to the blow-up point, by shooting."""
    y0 = lam_root(params, lam)
    sol, x_blow, x_far = _shoot_halfline(params, lam, grid_spec)
    c = decay_length(params, lam)
    d_cut = _blowup_distance(params, grid_spec.v_max)
    length = x_far - x_blow

    def profile(d):
        d = np.atleast_1d(np.asarray(d, dtype=float))
        val = np.empty_like(d)
        dval = np.empty_like(d)
        inner = d < d_cut
        if np.any(inner):
            val[inner], dval[inner] = _asymptotic_blowup(params, lam, d[inner])
        mid = (~inner) & (d <= length)
        if np.any(mid):
            z = sol.sol(x_blow + d[mid])
            val[mid], dval[mid] = z[0], z[1]
        far = d > length
        if np.any(far):
            decay = np.exp(-(d[far] - length) / c)
            val[far] = y0 + (sol.y[0, 0] - y0) * decay
            dval[far] = -(sol.y[0, 0] - y0) * decay / c
        return val, dval

    return profile, 1e-3 * c, length


def _interval_profile(params: StableParams, lam: float, r: float, grid_spec: GridSpec, method: str):
    """(v, dv/du) on (-r, r) as functions of the offset u from the midpoint."""
    d_cut = _blowup_distance(params, grid_spec.v_max)
    k = params.alpha + 1.0
    if lam == 0 and method in ("auto", "G-inversion"):
        theta = interval_midpoint_value(params, 0.0, r)
        m_exp = 0.5 * (params.alpha - 1.0)

        def right(u):
            val = np.array([theta * _g_inverse_tail(params, (r - z) * theta**m_exp) for z in u])
            dval = 2.0 * np.sqrt(np.maximum(val**k - theta**k, 0.0) / k)
            return val, dval

        meth = "G-inversion"
    elif method in ("auto", "shooting"):
        theta = _symmetric_theta(params, lam, r, grid_spec.v_max)
        sol, _ = _shoot_midpoint(params, lam, theta, grid_spec.v_max)

        def right(u):
            val = np.empty_like(u)
            dval = np.empty_like(u)
            inner = (r - u) < d_cut
            if np.any(inner):
                val[inner], dd = _asymptotic_blowup(params, lam, r - u[inner])
                dval[inner] = -dd
            if np.any(~inner):
                z = sol.sol(np.minimum(u[~inner], sol.t[-1]))
                val[~inner], dval[~inner] = z[0], z[1]
            return val, dval

        meth = "shooting"
    else:
        raise ValueError(f"method {method!r} not available for finite intervals")

    def profile(u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        val, dval = right(np.abs(u))
        return val, np.sign(u) * dval

    return profile, meth


def solve_bvp_interval(
    params: StableParams,
    lam: float,
    a: float,
    b: float,
    grid_spec: GridSpec = GridSpec(),
    method: str = "auto",
) -> VTable:
    """Solution of 1/2 v'' = v^alpha - lam on (a, b), infinite at finite endpoints.

    Half-lines are solved by shooting from the far-field linearization; finite
    intervals by shooting from the midpoint (or by inverting the G-function
    when lam = 0). Within distance A * v_max^(-m) of a finite endpoint the
    two-term blow-up profile is imposed. The degenerate whole-line case with
    lam > 0 returns the constant solution lam^(1/alpha).
    """
    if lam < 0:
        raise DomainError("lam must be nonnegative")
    if not a < b:
        raise DomainError(f"need a < b, got ({a!r}, {b!r})")
    y0 = lam_root(params, lam)
    n = grid_spec.n_points
    if math.isinf(a) and math.isinf(b):
        if lam == 0:
            raise DomainError("lam = 0 on the whole line gives the trivial solution v = 0")
        grid = np.linspace(-1.0, 1.0, n)
        zeros = tuple(np.zeros(n))
        return VTable(lam, a, b, tuple(grid), tuple(np.full(n, y0)), "closed-form", 0.0, zeros, zeros)

    if math.isinf(b) or math.isinf(a):
        origin = a if math.isinf(b) else b
        sign = 1.0 if math.isinf(b) else -1.0
        if lam == 0:
            if method == "shooting":
                raise DomainError("lam = 0 half-line has no far-field linearization; use the closed form")
            profile = lambda d: (v0_closed_form(params, d), v_lambda_slope(params, 0.0, d))
            dist = np.geomspace(1e-3, 1e3, n)
            meth = "closed-form"
        else:
            if method not in ("auto", "shooting"):
                raise ValueError(f"method {method!r} not available for half-lines in this solver")
            profile, d_min, length = _halfline_profile(params, lam, grid_spec)
            dist = np.geomspace(d_min, length, n)
            meth = "shooting"
        if sign > 0:
            dist_sorted = dist
            to_d = lambda z: np.asarray(z, dtype=float) - origin
        else:
            dist_sorted = dist[::-1]
            to_d = lambda z: origin - np.asarray(z, dtype=float)
        grid = origin + sign * dist_sorted
        fn = lambda z: profile(to_d(z))[0]
        vals, dvals = profile(dist_sorted)
        slopes = sign * dvals
        res = fd_residual(params, lam, fn, grid, dist_sorted)
    else:
        r = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        profile, meth = _interval_profile(params, lam, r, grid_spec, method)
        half = r - _one_sided_grid(r, 1e-3 * r, n // 2, grid_spec.near_fraction)[::-1]
        half = half[half > 0]
        u_grid = np.concatenate([-half[::-1], [0.0], half])
        grid = mid + u_grid
        fn = lambda z: profile(np.asarray(z, dtype=float) - mid)[0]
        vals, slopes = profile(u_grid)
        res = fd_residual(params, lam, fn, grid, np.minimum(r - np.abs(u_grid), 0.5 * r))
    cols = dict(residual=tuple(res), slopes=tuple(slopes))
    draft = VTable(lam, a, b, tuple(grid), tuple(vals), meth, 0.0, **cols)
    tol = max(grid_spec.tol, _check_tol(draft, fn, grid))
    return VTable(lam, a, b, tuple(grid), tuple(vals), meth, tol, **cols)


def interval_midpoint_value(params: StableParams, lam: float, r: float, v_max: float = 1e8) -> float:
    """v_{lam,-r,r}(0) by midpoint shooting (or exactly when lam = 0)."""
    if lam == 0:
        return (alpha0(params) / r) ** (2.0 / (params.alpha - 1.0))
    return _symmetric_theta(params, lam, r, v_max)


def hij_relation(params: StableParams, lam: float, b: float) -> dict:
    """I = v_{lam,-b,b}(0) - lam^(1/alpha), H = H_lam(b), J = 2H - I."""
    i_val = interval_midpoint_value(params, lam, b) - lam_root(params, lam)
    h_val = float(h_lambda(params, lam, b))
    return {"b": b, "I": i_val, "H": h_val, "J": 2.0 * h_val - i_val}


# --------------------------------------------------------------------------
# Moment constants


@dataclass(frozen=True)
class MomentConstants:
    alpha: float
    alpha0: float
    big_c: float
    moment_R_1: float
    moment_R_range_exp: float
    moment_min_RL: float
    c_beta: Callable = field(repr=False, compare=False, default=None)

    def as_dict(self) -> dict:
        return {
            "alpha0": self.alpha0,
            "big_c": self.big_c,
            "moment_R_1": self.moment_R_1,
            "moment_R_range_exp": self.moment_R_range_exp,
            "moment_min_RL": self.moment_min_RL,
        }

    @property
    def min_ratio(self) -> float:
        return self.moment_min_RL / self.moment_R_range_exp


def c_beta(params: StableParams, beta: float, lam: float = 1.0, spec: QuadratureSpec = QuadratureSpec(1e-13, 1e-11)) -> float:
    """C_beta(lam) = int_0^inf y^(beta-1) (v_lam(y) - lam^(1/alpha)) dy, beta > 2/(alpha-1)."""
    p = params.range_exponent
    if not beta > p:
        raise DomainError(f"C_beta needs beta > 2/(alpha-1) = {p!r}")
    if not lam > 0:
        raise DomainError("C_beta needs lam > 0")
    c = decay_length(params, lam)
    # near 0 the integrand behaves like y^(beta - 1 - p): integrate in log y
    u_lo = math.log(c) + math.log(1e-17) / (beta - p)
    f_log = lambda u: math.exp(beta * u + v_lambda_log_excess(params, lam, math.exp(u)))
    try:
        head, _ = integrate_adaptive(f_log, u_lo, math.log(c), spec)
        f_lin = lambda y: math.exp((beta - 1.0) * math.log(y) + v_lambda_log_excess(params, lam, y))
        tail, _ = integrate_adaptive(f_lin, c, math.inf, spec)
    except QuadratureError as exc:
        raise QuadratureError(f"C_beta(beta={beta}, lam={lam}): {exc}", exc.partial, exc.error) from exc
    return head + tail


def moment_from_c_beta(params: StableParams, beta: float, lam: float, cb: float) -> float:
    """N^(1)(R^beta) implied by C_beta(lam)."""
    a = params.alpha
    kap = (beta * (a - 1.0) - 2.0) / (2.0 * a)
    return beta * a * params.gamma_one_minus_inv_alpha * lam**kap * cb / gamma(kap)


def big_c_constant(params: StableParams, spec: QuadratureSpec = QuadratureSpec(1e-13, 1e-11)) -> float:
    """C = int_0^inf (H_0(x) - H_1(x)) dx.

    While v_0(x) > 1 the integrand is 1 - v_0(x) * (v_1(x)/v_0(x) - 1), which
    avoids subtracting two large nearly equal numbers; beyond that point
    v_0 - H_1 is well conditioned.
    """
    x_c = params.blowup_constant ** (1.0 / params.range_exponent)

    def f(x):
        if x < x_c:
            rel = v_lambda_relative_excess(params, 1.0, x)
            if rel <= 0.0:
                return 1.0
            return 1.0 - math.exp(math.log(v0_closed_form(params, x)) + math.log(rel))
        return v0_closed_form(params, x) - h_lambda(params, 1.0, x)

    try:
        head, _ = integrate_adaptive(f, 0.0, x_c, spec)
        tail, _ = integrate_adaptive(f, x_c, math.inf, QuadratureSpec(spec.abs_tol, spec.rel_tol, spec.max_subdivisions, "power-tail"))
    except QuadratureError as exc:
        raise QuadratureError(f"big_c: {exc}", exc.partial, exc.error) from exc
    return head + tail


def moment_constants(params: StableParams, spec: QuadratureSpec = QuadratureSpec(1e-13, 1e-11)) -> MomentConstants:
    a = params.alpha
    g = params.gamma_one_minus_inv_alpha
    k_const = params.blowup_constant
    try:
        a0 = alpha0(params)
    except QuadratureError as exc:
        raise QuadratureError(f"alpha0: {exc}", exc.partial, exc.error) from exc
    cc = big_c_constant(params, spec)
    m1 = cc * (3.0 - a) * g / (2.0 * gamma((3.0 * a - 3.0) / (2.0 * a)))
    mp = g * k_const
    mmin = g * (2.0 * k_const - a0 ** params.range_exponent)
    return MomentConstants(
        alpha=a,
        alpha0=a0,
        big_c=cc,
        moment_R_1=m1,
        moment_R_range_exp=mp,
        moment_min_RL=mmin,
        c_beta=lambda beta, lam=1.0: c_beta(params, beta, lam, spec),
    )
