r"""Radial calculus for functions of :math:`r \ge 0` in the plane.

Operators
---------
:math:`\Delta_n = \partial_{rr} + r^{-1}\partial_r - n^2 r^{-2}` by second
order finite differences, the Green's-function inverse of
:math:`\Delta_1 - 1`,

.. math::
    u(r) = I_1(r)\int_r^\infty K_1(\rho) f(\rho)\rho\,d\rho
         + K_1(r)\int_0^r I_1(\rho) f(\rho)\rho\,d\rho,

and the inverse of :math:`L u = u' + u/r - \lambda u` together with its
cokernel pairing :math:`\int_0^\infty f e^{-\lambda r} r\,dr`.

Diagnostics mirror doubly weighted Sobolev norms

.. math::
    \sum_{|\alpha|\le s}\| m(r)^{\sigma+|\alpha|} D^\alpha u\,
    \langle r\rangle^\gamma \|_{L^2(r\,dr)},\qquad m(r) = r(1-\chi(r)),

and least-squares power-law fits near the origin and in the far field.
"""

import csv
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse
from scipy.integrate import cumulative_trapezoid, simpson
from scipy.interpolate import make_interp_spline

from .errors import (AccuracyError, MeasurementError, PreconditionError,
                     ShapeError, SolvabilityError)
from .specfun import OVERFLOW_CAP, bessel_i1, bessel_k0, bessel_k1

__all__ = [
    "RadialGrid", "RadialProfile", "WeightedNorm", "DecayFit",
    "fd_weights", "derivative", "cutoff", "m_weight", "delta_n_matrix",
    "apply_delta_n", "greens_inverse_delta1", "solve_delta1_minus_one",
    "inverse_first_order", "apply_first_order", "solvability_integral",
    "weighted_norm", "decay_exponent",
]

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


# --------------------------------------------------------------- containers

@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Strictly increasing radial nodes in ``[0, r_max]``."""

    nodes: np.ndarray
    spacing: str = "uniform"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 4:
            raise ShapeError("a radial grid needs at least 4 nodes")
        if nodes[0] < 0 or np.any(np.diff(nodes) <= 0):
            raise ShapeError("radial nodes must be nonnegative and strictly increasing")
        if self.spacing not in ("uniform", "geometric"):
            raise ShapeError(f"unknown spacing {self.spacing!r}")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, r_max, n, include_origin=False):
        """``n`` equispaced nodes ending at ``r_max``; first node at ``h``
        unless ``include_origin``."""
        if include_origin:
            return cls(np.linspace(0.0, r_max, n), "uniform")
        h = r_max / n
        return cls(h * np.arange(1, n + 1), "uniform")

    @classmethod
    def geometric(cls, r_min, r_max, n):
        return cls(np.geomspace(r_min, r_max, n), "geometric")

    @property
    def n(self):
        return self.nodes.size

    @property
    def r_max(self):
        return float(self.nodes[-1])

    @property
    def includes_origin(self):
        return self.nodes[0] == 0.0

    def scaled(self, factor):
        return RadialGrid(self.nodes * factor, self.spacing)


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """A sampled radial function with optional known endpoint behavior."""

    grid: RadialGrid
    values: np.ndarray
    origin_power: float = None
    infinity_limit: complex = None

    def __post_init__(self):
        vals = np.asarray(self.values)
        if not np.issubdtype(vals.dtype, np.complexfloating):
            vals = vals.astype(float)
        if vals.shape != self.grid.nodes.shape:
            raise ShapeError(f"{vals.shape} values on a grid of {self.grid.n} nodes")
        if not np.all(np.isfinite(vals)):
            raise ShapeError("profile values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def r(self):
        return self.grid.nodes

    def with_values(self, values, **kw):
        return replace(self, values=np.asarray(values), **kw)

    def to_csv(self, path):
        """Write columns ``r, re, im``."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "re", "im"])
            vals = self.values.astype(complex)
            for r, v in zip(self.r, vals):
                w.writerow([repr(float(r)), repr(float(v.real)), repr(float(v.imag))])

    @classmethod
    def from_csv(cls, path, spacing="uniform"):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        vals = data[:, 1] + 1j * data[:, 2]
        if not np.any(data[:, 2]):
            vals = data[:, 1]
        return cls(RadialGrid(data[:, 0], spacing), vals)


@dataclass(frozen=True)
class WeightedNorm:
    """Discrete doubly weighted norm and its membership verdict."""

    gamma: float
    sigma: float
    s: int
    value: float
    member: bool
    terms: tuple = ()


@dataclass(frozen=True)
class DecayFit:
    """Power-law fit ``|u| ~ C r**exponent`` on a window."""

    exponent: float
    r2: float
    window: tuple
    n_nodes: int
    gamma_max: float = None
    sigma_min: float = None


# ------------------------------------------------------ finite differences

def fd_weights(x0, xs, m):
    """Finite-difference weights for the ``m``-th derivative at ``x0``
    using stencil ``xs`` (Fornberg's recursion)."""
    xs = np.asarray(xs, dtype=float)
    n = xs.size
    c = np.zeros((n, m + 1))
    c1 = 1.0
    c4 = xs[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = xs[i] - x0
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def derivative(r, u, order):
    """Second-order accurate first or second derivative on a nonuniform grid.

    Interior nodes use three-point stencils, the two end nodes one-sided
    stencils (three points for ``order=1``, four for ``order=2``).
    """
    r = np.asarray(r, dtype=float)
    u = np.asarray(u)
    hm = r[1:-1] - r[:-2]
    hp = r[2:] - r[1:-1]
    out = np.empty_like(u)
    if order == 1:
        out[1:-1] = (-hp / (hm * (hm + hp)) * u[:-2]
                     + (hp - hm) / (hm * hp) * u[1:-1]
                     + hm / (hp * (hm + hp)) * u[2:])
        npts = 3
    elif order == 2:
        out[1:-1] = 2.0 * (hm * u[2:] - (hm + hp) * u[1:-1] + hp * u[:-2]) / (hm * hp * (hm + hp))
        npts = 4
    else:
        raise ValueError("order must be 1 or 2")
    out[0] = fd_weights(r[0], r[:npts], order) @ u[:npts]
    out[-1] = fd_weights(r[-1], r[-npts:], order) @ u[-npts:]
    return out


def _values_of(u):
    if isinstance(u, RadialProfile):
        return u.grid, u.values
    raise ShapeError("expected a RadialProfile")


def _delta_n_core(r, u, n):
    # Delta_n (r^n v) = r^n (v'' + (2n+1) v'/r); exact on regular profiles
    # u = r^n (a + b r^2), which removes the O(h) error of u'/r near r = 0
    v = u / r ** n
    return r ** n * (derivative(r, v, 2) + (2 * n + 1) * derivative(r, v, 1) / r)


def apply_delta_n(u, n):
    r"""Evaluate :math:`\Delta_n u` by second-order finite differences.

    The operator is applied in the factored form
    :math:`r^n(v'' + (2n+1)v'/r)`, :math:`v = u r^{-n}`.

    Parameters
    ----------
    u : RadialProfile
    n : int
        Angular mode, ``n >= 0``.

    Raises
    ------
    PreconditionError
        ``n >= 1`` on a grid containing ``r = 0`` where ``u(0) != 0``.
    """
    grid, vals = _values_of(u)
    if n < 0:
        raise PreconditionError("angular mode must be nonnegative")
    r = grid.nodes
    scale = max(np.max(np.abs(vals)), 1e-300)
    if grid.includes_origin and n >= 1 and abs(vals[0]) > 1e-12 * scale:
        raise PreconditionError(f"mode {n} profile must vanish at r = 0, got {vals[0]!r}")
    out = np.empty_like(vals)
    if grid.includes_origin:
        out[1:] = _delta_n_core(r[1:], vals[1:], n)
        # limits at the origin for regular profiles u ~ r^n
        out[0] = 4.0 * (vals[1] - vals[0]) / r[1] ** 2 if n == 0 else 0.0
    else:
        out[:] = _delta_n_core(r, vals, n)
    return RadialProfile(grid, out)


def delta_n_matrix(grid, n, far="robin"):
    r"""Sparse tridiagonal :math:`\Delta_n` on a grid starting at ``r = h``.

    The origin acts as a ghost node with value zero (regular mode ``n >= 1``
    profiles).  ``far`` selects the closure at ``r_max``: ``"robin"`` uses
    :math:`u' + u/r_{max} = 0` through a mirrored ghost node, ``"dirichlet"``
    leaves the last row as identity (value prescribed by the caller).
    """
    r = grid.nodes
    if grid.includes_origin:
        raise ShapeError("banded operators expect a grid starting at r = h > 0")
    m = r.size
    rl = np.concatenate([[0.0], r[:-1]])
    rr = np.concatenate([r[1:], [2 * r[-1] - r[-2]]])
    hm = r - rl
    hp = rr - r
    # coefficients of u_{i-1}, u_i, u_{i+1} in u'' + u'/r - n^2 u / r^2
    a_m = 2.0 / (hm * (hm + hp)) - hp / (hm * (hm + hp)) / r
    a_0 = -2.0 / (hm * hp) + (hp - hm) / (hm * hp) / r - n * n / r ** 2
    a_p = 2.0 / (hp * (hm + hp)) + hm / (hp * (hm + hp)) / r
    lower = a_m[1:].copy()
    diag = a_0.copy()
    upper = a_p[:-1].copy()
    if far == "robin":
        # ghost u_{m} = u_{m-2} - 2 h u_{m-1} / r_max
        h = hp[-1]
        lower[-1] += a_p[-1]
        diag[-1] += a_p[-1] * (-2.0 * h / r[-1])
    elif far == "dirichlet":
        lower[-1] = 0.0
        diag[-1] = 1.0
    else:
        raise ShapeError(f"unknown far-field closure {far!r}")
    return sparse.diags([lower, diag, upper], [-1, 0, 1], format="csr")


# ------------------------------------------------------ Green's function

def _cumulative_spline(y, x, initial=0.0):
    """Cumulative integral from ``x[0]`` of the quintic interpolant of ``y``.

    Unlike cumulative Simpson its error is smooth from node to node, which
    matters once the result is differentiated twice.
    """
    del initial
    spl = _spline(x, y).antiderivative()
    out = spl(x)
    return out - out[0]


def _first_panel(r, y):
    """Integral of ``y`` over ``[0, r[0]]`` using the quintic interpolant
    extrapolated to the origin."""
    anti = _spline(r, y).antiderivative()
    return float(anti(r[0]) - anti(0.0))


def _tail_cumulative(r, y, cumulative):
    """``int_{r_i}^{r_max} y`` for every node, accumulated from the far end."""
    rev = cumulative(y[::-1], x=-r[::-1], initial=0.0)
    return rev[::-1]


def _greens_core(r, f, cumulative):
    i1 = bessel_i1(r)
    k1 = bessel_k1(r)
    a_int = _tail_cumulative(r, k1 * f * r, cumulative)
    # K1 tail: int_R^inf K1(rho) f rho drho ~ f(R) R K0(R) for slowly varying f*rho
    a_int = a_int + f[-1] * r[-1] * bessel_k0(r[-1])
    b_y = i1 * f * r
    b_int = cumulative(b_y, x=r, initial=0.0)
    if r[0] > 0:
        b_int = b_int + _first_panel(r, b_y)
    # variation of parameters with Wronskian I1'K1 - I1K1' = 1/r
    return -(i1 * a_int + k1 * b_int)


def greens_inverse_delta1(f, tol=1e-2):
    r"""Solve :math:`(\Delta_1 - 1)u = f` through the explicit Green's function.

    Cumulative quadrature of quintic interpolants on the grid; the missing panel
    ``[0, r_0]`` uses a local quadratic, and the far tail is closed with the
    exponential decay of :math:`K_1`.

    Parameters
    ----------
    f : RadialProfile
    tol : float
        Relative disagreement allowed between the quintic and trapezoid
        evaluations before the quadrature is declared under-resolved.

    Raises
    ------
    AccuracyError
        The two quadratures disagree by more than ``tol`` (relative to the
        maximum of the solution); ``estimate`` carries the disagreement.
    """
    grid, vals = _values_of(f)
    r = grid.nodes
    if grid.includes_origin:
        raise PreconditionError("Green's inverse expects a grid starting at r = h > 0")
    if r[-1] > OVERFLOW_CAP:
        raise PreconditionError(f"r_max must not exceed {OVERFLOW_CAP}")
    if not np.any(vals):
        return RadialProfile(grid, np.zeros_like(vals))
    u = _greens_core(r, vals, _cumulative_spline)
    u_trap = _greens_core(r, vals, cumulative_trapezoid)
    est = np.max(np.abs(u - u_trap)) / max(np.max(np.abs(u)), 1e-300)
    if est > tol:
        raise AccuracyError(f"Green's quadrature under-resolved (estimate {est:.3g})", estimate=est)
    return RadialProfile(grid, u)


def solve_delta1_minus_one(f):
    r"""Direct banded finite-difference solve of :math:`(\Delta_1 - 1)u = f`.

    Independent of :func:`greens_inverse_delta1`; uses the ghost-origin /
    Robin closure of :func:`delta_n_matrix`.
    """
    from scipy.sparse.linalg import spsolve

    grid, vals = _values_of(f)
    a = delta_n_matrix(grid, 1, far="robin") - sparse.identity(grid.n, format="csr")
    return RadialProfile(grid, spsolve(a.tocsc(), vals))


# ----------------------------------------------- first-order operator L

def _check_lambda(lam):
    if not (np.isfinite(lam) and lam > 0):
        raise PreconditionError(f"lambda must be positive, got {lam!r}")


def _spline(r, y):
    return make_interp_spline(r, y, k=5 if r.size > 6 else 3)


def _weighted_panels(spl, a, b, lam, ref, absval=False):
    """``int_a^b exp(-lam (s - ref)) y(s) ds`` per panel (8-point Gauss)."""
    a = np.asarray(a)
    b = np.asarray(b)
    half = 0.5 * (b - a)
    s = 0.5 * (a + b)[:, None] + half[:, None] * _GL_X[None, :]
    y = spl(s)
    if absval:
        y = np.abs(y)
    return half * np.sum(_GL_W[None, :] * np.exp(-lam * (s - np.asarray(ref)[:, None])) * y, axis=1)


def _tail_rate(r, y):
    """Exponential decay rate of ``y`` estimated from the last two nodes."""
    if y[-1] != 0 and y[-2] != 0 and np.sign(y[-1]) == np.sign(y[-2]) and abs(y[-1]) < abs(y[-2]):
        return float(np.log(y[-2] / y[-1]) / (r[-1] - r[-2]))
    return 0.0


def solvability_integral(f, lam, absval=False):
    r"""Cokernel pairing :math:`\int_0^\infty f(r)e^{-\lambda r} r\,dr`.

    Quintic-spline Gauss panels on the grid, spline extrapolation on
    ``[0, r_0]`` and an exponential tail closure beyond ``r_max``.
    ``absval=True`` integrates ``|f|`` instead (used as the reference scale).
    """
    _check_lambda(lam)
    grid, vals = _values_of(f)
    r = grid.nodes
    y = vals * r
    if not np.any(y):
        return 0.0
    spl = _spline(r, y)
    a = np.concatenate([[0.0], r[:-1]])
    total = np.sum(_weighted_panels(spl, a, r, lam, np.zeros_like(r), absval))
    mu = _tail_rate(r, np.abs(y) if absval else y)
    yt = abs(y[-1]) if absval else y[-1]
    total += yt * np.exp(-lam * r[-1]) / (lam + mu)
    return float(np.real_if_close(total))


def inverse_first_order(f, lam, branch="from_infinity", tol=1e-8):
    r"""Solve :math:`u' + u/r - \lambda u = f`.

    ``from_infinity`` returns
    :math:`u = -r^{-1}\int_r^\infty e^{-\lambda(s-r)} f(s) s\,ds`.
    ``from_origin`` is :math:`u = r^{-1}\int_0^r e^{-\lambda(s-r)} f s\,ds`;
    it exists as a decaying solution only when the cokernel pairing vanishes,
    in which case the two integral forms coincide and the backward
    (stable) one is evaluated.

    Raises
    ------
    SolvabilityError
        ``from_origin`` with ``|pairing| > tol * int |f| e^{-lambda r} r dr``.
    """
    _check_lambda(lam)
    grid, vals = _values_of(f)
    r = grid.nodes
    if branch not in ("from_infinity", "from_origin"):
        raise PreconditionError(f"unknown branch {branch!r}")
    if not np.any(vals):
        return RadialProfile(grid, np.zeros_like(vals))
    if branch == "from_origin":
        pairing = solvability_integral(f, lam)
        scale = solvability_integral(f, lam, absval=True)
        if abs(pairing) > tol * scale:
            raise SolvabilityError(
                f"f is not in the range: pairing with exp(-lambda r) is {pairing:.6g}",
                integral=pairing)
    y = vals * r
    spl = _spline(r, y)
    panels = _weighted_panels(spl, r[:-1], r[1:], lam, r[:-1])
    decay = np.exp(-lam * np.diff(r))
    t = np.empty_like(y)
    t[-1] = y[-1] / (lam + _tail_rate(r, y))
    for i in range(r.size - 2, -1, -1):
        t[i] = decay[i] * t[i + 1] + panels[i]
    return RadialProfile(grid, -t / r)


def apply_first_order(u, lam):
    """Forward operator ``u' + u/r - lam u``, evaluated as
    ``(r u)'/r - lam u`` with a quintic-spline derivative (``r u`` stays
    smooth even when ``u ~ 1/r`` at the origin)."""
    grid, vals = _values_of(u)
    r = grid.nodes
    d_ru = _spline(r, r * vals).derivative()(r)
    return RadialProfile(grid, d_ru / r - lam * vals)


# ------------------------------------------------------ weighted norms

def cutoff(r, inner=1.0):
    """Smooth cutoff: 0 below ``inner``, 1 above ``2*inner``, quintic bridge
    with vanishing first and second derivatives at both ends."""
    t = np.clip(np.asarray(r, dtype=float) / inner - 1.0, 0.0, 1.0)
    return t ** 3 * (10.0 - 15.0 * t + 6.0 * t * t)


def m_weight(r):
    """Origin weight ``m(r) = r (1 - chi(r))``."""
    r = np.asarray(r, dtype=float)
    return r * (1.0 - cutoff(r))


def weighted_norm(u, gamma, sigma, s=0):
    r"""Discrete doubly weighted norm of a radial profile.

    Sums :math:`\|m^{\sigma+k}\partial_r^k u\,\langle r\rangle^\gamma\|`
    for ``k = 0..s`` with measure ``r dr``.  Where ``m`` vanishes
    (``r >= 2``) the ``k = 0`` weight is ``<r>^gamma`` alone and the
    derivative terms contribute nothing.

    Membership is decided from the radial decay rules: the far-field exponent
    ``alpha`` must satisfy ``alpha < -gamma - 1`` and the origin exponent
    ``alpha0 > -sigma - 1``.
    """
    if s not in (0, 1, 2):
        raise PreconditionError("derivative order s must be 0, 1 or 2")
    grid, vals = _values_of(u)
    r = grid.nodes
    m = m_weight(r)
    bracket = (1.0 + r * r) ** (0.5 * gamma)
    derivs = [vals]
    if s >= 1:
        derivs.append(derivative(r, vals, 1))
    if s >= 2:
        derivs.append(derivative(r, vals, 2))
    terms = []
    for k, dk in enumerate(derivs):
        w = np.zeros_like(r)
        pos = m > 0
        w[pos] = m[pos] ** (sigma + k)
        if k == 0:
            w[~pos] = 1.0
        integrand = np.abs(w * dk * bracket) ** 2 * r
        terms.append(float(np.sqrt(simpson(integrand, x=r))))
    member = True
    if np.any(vals):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                far = decay_exponent(u, "farfield")
                member &= far.exponent < -gamma - 1.0
            except MeasurementError:
                pass
            try:
                org = decay_exponent(u, "origin")
                member &= org.exponent > -sigma - 1.0
            except MeasurementError:
                pass
    return WeightedNorm(gamma, sigma, s, float(sum(terms)), bool(member), tuple(terms))


def decay_exponent(u, region, window=None, dim=2):
    """Least-squares slope of ``log|u|`` against ``log r``.

    Parameters
    ----------
    u : RadialProfile
        ``infinity_limit`` is subtracted for far-field fits when set.
    region : {"origin", "farfield"}
        Origin windows span the first decade of nodes, far-field windows the
        last decade, unless ``window=(r_lo, r_hi)`` is given.

    Returns
    -------
    DecayFit
        Also carries the admissible weights implied by the radial decay rules,
        ``gamma_max = -alpha - d/2`` (far field) or
        ``sigma_min = -alpha - d/2`` (origin).
    """
    grid, vals = _values_of(u)
    r = grid.nodes
    vals = np.asarray(vals)
    if region == "farfield" and u.infinity_limit is not None:
        vals = vals - u.infinity_limit
    if window is None:
        if region == "origin":
            r0 = r[1] if r[0] == 0 else r[0]
            window = (r0, 10.0 * r0)
        elif region == "farfield":
            window = (r[-1] / 10.0, r[-1])
        else:
            raise PreconditionError(f"unknown region {region!r}")
    sel = (r >= window[0] * (1 - 1e-12)) & (r <= window[1] * (1 + 1e-12)) & (r > 0)
    if sel.sum() < 10:
        raise MeasurementError(f"fit window {window} holds {sel.sum()} nodes, need >= 10")
    v = vals[sel]
    if not np.any(v):
        raise MeasurementError("profile vanishes on the fit window")
    if np.isrealobj(v) and (np.any(v > 0) and np.any(v < 0)):
        warnings.warn("sign-changing profile in decay window; fitting |u|", stacklevel=2)
    a = np.abs(v)
    keep = a > 0
    x = np.log(r[sel][keep])
    y = np.log(a[keep])
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss if ss > 0 else 1.0
    bound = -slope - 0.5 * dim
    if region == "origin":
        return DecayFit(float(slope), float(r2), tuple(window), int(sel.sum()), sigma_min=float(bound))
    return DecayFit(float(slope), float(r2), tuple(window), int(sel.sum()), gamma_max=float(bound))
