r"""Asymptotic construction of slowly rotating one-armed spirals.

Pipeline
--------
1. Amplitude profile :math:`\rho_0`: :math:`\Delta_1\rho + (1-\rho^2)\rho = 0`,
   :math:`\rho(0) = 0`, :math:`\rho\to 1`.
2. Inhomogeneity :math:`g(S) = (1-\rho_0(S/\delta)^2)/\delta^2` and its
   core/far split with a smooth cutoff.
3. Viscous eikonal problem
   :math:`\Delta_0\phi + \beta(\phi')^2 + \Omega + \beta g = 0`.  With
   :math:`\phi = \beta^{-1}\log y` it becomes the linear problem
   :math:`\Delta_0 y + (\beta^2 g - b\Omega)y = 0`, :math:`b = -\beta`, whose
   positive (ground-state) solution decays like :math:`K_0(\Lambda S)`,
   :math:`\Lambda = \sqrt{b\Omega}`.
4. Amplitude correction :math:`R_0 = -\tfrac12\rho_0(\partial_S\phi_0)^2`,
   the auxiliary profile :math:`\zeta`, and the Riccati equation solved by
   the Hopf-Cole substitution.
5. Composition of the first-order spiral and evaluation of the residual of
   the polar (amplitude/phase) form of the nonlocal amplitude equation.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.integrate import simpson, solve_ivp
from scipy.interpolate import make_interp_spline
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu

from .errors import (BracketError, ConvergenceError, InvariantError, PoleError,
                     PreconditionError, ResolutionError, SingularSolveError,
                     UnderflowError)
from .kernels import KernelParams
from .radial import (RadialGrid, RadialProfile, cutoff, decay_exponent,
                     delta_n_matrix, derivative)
from .specfun import bessel_k0e, bessel_ratio_k1_k0

__all__ = [
    "Rho0Solution", "EikonalResult", "ZetaSolution", "SpiralAnsatz", "PolarResidual",
    "rho0_far_field", "solve_rho0", "compute_g", "default_d_cut", "split_g",
    "core_mass_a", "solve_eikonal", "compute_R0", "solve_zeta",
    "solve_riccati_hopf_cole", "predict_kappa", "predict_lambda",
    "compose_spiral", "polar_residual", "residual_polar",
]

EULER_GAMMA = 0.5772156649015329
# coefficients of 1 - rho0 ~ sum c_k r^{-2k}
_RHO_FAR = (0.5, 9.0 / 8.0, 161.0 / 16.0)


def rho0_far_field(r, deriv=0):
    r"""Far-field expansion :math:`\rho_0 = 1 - \frac{1}{2r^2} - \frac{9}{8r^4}
    - \frac{161}{16r^6} + \dots` (or its first/second derivative)."""
    r = np.asarray(r, dtype=float)
    c1, c2, c3 = _RHO_FAR
    if deriv == 0:
        return 1.0 - c1 / r ** 2 - c2 / r ** 4 - c3 / r ** 6
    if deriv == 1:
        return 2 * c1 / r ** 3 + 4 * c2 / r ** 5 + 6 * c3 / r ** 7
    if deriv == 2:
        return -6 * c1 / r ** 4 - 20 * c2 / r ** 6 - 42 * c3 / r ** 8
    raise ValueError("deriv must be 0, 1 or 2")


# ================================================================== rho_0

@dataclass(eq=False)
class Rho0Solution:
    """Amplitude profile with its Newton residual and origin slope."""

    profile: RadialProfile
    residual_norm: float
    slope_at_origin: float
    iterations: int = 0
    _spline: object = field(default=None, repr=False)

    def _spl(self):
        if self._spline is None:
            r = np.concatenate([[0.0], self.profile.r])
            v = np.concatenate([[0.0], self.profile.values])
            self._spline = make_interp_spline(r, v, k=5)
        return self._spline

    def evaluate(self, r, deriv=0):
        """Evaluate ``rho0`` (or a derivative) at arbitrary ``r >= 0``;
        beyond the grid the far-field expansion is used."""
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        r_max = self.profile.grid.r_max
        inside = r <= r_max
        if np.any(inside):
            spl = self._spl()
            out[inside] = spl.derivative(deriv)(r[inside]) if deriv else spl(r[inside])
        if np.any(~inside):
            out[~inside] = rho0_far_field(r[~inside], deriv)
        return out

    def core_radius(self, level=0.9):
        """First radius where ``rho0`` exceeds ``level``."""
        r = self.profile.r
        v = self.profile.values
        i = int(np.argmax(v > level))
        if v[i] <= level:
            raise InvariantError(f"rho0 never exceeds {level}")
        if i == 0:
            return float(r[0])
        return float(r[i - 1] + (level - v[i - 1]) * (r[i] - r[i - 1]) / (v[i] - v[i - 1]))


def _rho0_residual(u, h, r, ghost_far):
    # fourth-order stencils; ghosts: u(0) = 0, u(-h) = -u(h), far values prescribed
    ext = np.concatenate([[-u[0], 0.0], u, ghost_far])
    um2, um1, u0, up1, up2 = ext[:-4], ext[1:-3], ext[2:-2], ext[3:-1], ext[4:]
    d2 = (-um2 + 16 * um1 - 30 * u0 + 16 * up1 - up2) / (12 * h * h)
    d1 = (um2 - 8 * um1 + 8 * up1 - up2) / (12 * h)
    return d2 + d1 / r - u0 / r ** 2 + u0 - u0 ** 3


def _rho0_jacobian(u, h, r):
    n = u.size
    c2 = np.array([-1, 16, -30, 16, -1]) / (12 * h * h)
    c1 = np.array([1, -8, 0, 8, -1]) / (12 * h)
    ab = np.zeros((5, n))
    # banded storage: ab[2 + i - j, j] = A[i, j]
    for k, off in enumerate(range(-2, 3)):
        coeff = c2[k] + c1[k] / r
        if off == 0:
            coeff = coeff - 1.0 / r ** 2 + 1.0 - 3.0 * u ** 2
        j = np.arange(n) + off
        ok = (j >= 0) & (j < n)
        ab[2 - off, j[ok]] += coeff[ok]
    # odd reflection u(-h) = -u(h) enters row 0 through column 0
    ab[2, 0] -= c2[0] + c1[0] / r[0]
    return ab


def solve_rho0(grid, tol=1e-10, max_iter=60):
    r"""Solve the amplitude boundary-value problem by Newton's method.

    Fourth-order finite differences on a uniform grid starting at ``h``;
    the origin condition enters through odd reflection, the far end is
    closed with the three-term far-field expansion
    :func:`rho0_far_field` at ``r_max`` and one ghost node beyond it.

    Parameters
    ----------
    grid : RadialGrid
        Uniform, ``r_max >= 50``, ``n >= 2000``.
    tol : float
        Target for the max-norm of the discrete residual.

    Raises
    ------
    ConvergenceError
        Newton fails to reach ``tol``; ``history`` holds residual norms.
    InvariantError
        Result is not strictly increasing or leaves ``(0, 1)``.
    """
    r_all = grid.nodes
    if grid.includes_origin or grid.spacing != "uniform":
        raise PreconditionError("solve_rho0 needs a uniform grid starting at r = h")
    if grid.r_max < 50 or grid.n < 2000:
        raise PreconditionError("solve_rho0 needs r_max >= 50 and n >= 2000")
    h = r_all[1] - r_all[0]
    if not np.allclose(np.diff(r_all), h, rtol=1e-9, atol=0):
        raise PreconditionError("grid is not uniform")
    r_max = r_all[-1]
    r = r_all[:-1]
    ghost = rho0_far_field(np.array([r_max, r_max + h]))
    u = np.tanh(0.6 * r) + (rho0_far_field(r_max) - np.tanh(0.6 * r_max)) * (r / r_max) ** 2
    history = []
    for it in range(1, max_iter + 1):
        res = _rho0_residual(u, h, r, ghost)
        nrm = float(np.max(np.abs(res)))
        history.append(nrm)
        if nrm <= tol:
            break
        du = solve_banded((2, 2), _rho0_jacobian(u, h, r), -res)
        step = 1.0
        while step > 1e-4:
            trial = u + step * du
            if np.max(np.abs(_rho0_residual(trial, h, r, ghost))) < nrm or step < 0.3:
                break
            step *= 0.5
        u = u + step * du
        if not np.all(np.isfinite(u)):
            raise ConvergenceError("Newton iterate became non-finite", history)
    else:
        raise ConvergenceError(f"Newton did not reach {tol:g}", history)
    vals = np.concatenate([u, [ghost[0]]])
    if np.any(vals <= 0) or np.any(vals >= 1):
        raise InvariantError("rho0 left the interval (0, 1)")
    if np.any(np.diff(vals) <= 0):
        raise InvariantError("rho0 is not strictly increasing")
    # slope from rho ~ b r + c r^3 on the first nodes
    m = 6
    basis = np.stack([r[:m], r[:m] ** 3], axis=1)
    b = float(np.linalg.lstsq(basis, u[:m], rcond=None)[0][0])
    prof = RadialProfile(grid, vals, origin_power=1.0, infinity_limit=1.0)
    return Rho0Solution(prof, nrm, b, it)


# ====================================================================== g

def compute_g(rho0, delta, s_grid=None, min_core_nodes=50):
    r"""Inhomogeneity :math:`g(S) = (1 - \rho_0(S/\delta)^2)/\delta^2`.

    The default S-grid is the amplitude grid scaled by ``delta``.

    Raises
    ------
    ResolutionError
        Fewer than ``min_core_nodes`` nodes where ``rho0 < 0.9``.
    """
    if not delta > 0:
        raise PreconditionError("delta must be positive")
    if s_grid is None:
        s_grid = rho0.profile.grid.scaled(delta)
        rho = rho0.profile.values
    else:
        rho = rho0.evaluate(s_grid.nodes / delta)
    core = int(np.sum(rho < 0.9))
    if core < min_core_nodes:
        raise ResolutionError(f"S-grid resolves the core with {core} nodes (< {min_core_nodes})")
    return RadialProfile(s_grid, (1.0 - rho ** 2) / delta ** 2, infinity_limit=0.0)


def default_d_cut(rho0, delta, multiple=5.0):
    """Cutoff scale: ``multiple`` core radii (``rho0 = 0.9``), in S units."""
    return multiple * delta * rho0.core_radius(0.9)


def split_g(g, d_cut):
    """Split ``g`` into ``(1 - chi_D) g`` and ``chi_D g`` where ``chi_D``
    is zero below ``d_cut`` and one above ``2 d_cut``."""
    if not (d_cut > 0 and 2 * d_cut <= g.grid.r_max):
        raise PreconditionError("d_cut must satisfy 0 < 2 d_cut <= S_max")
    chi = cutoff(g.r, inner=d_cut)
    g_far = g.values * chi
    g_core = g.values - g_far
    return (RadialProfile(g.grid, g_core, infinity_limit=0.0),
            RadialProfile(g.grid, g_far, infinity_limit=0.0))


def core_mass_a(g_core, beta):
    r""":math:`a = -\beta^2\int_0^\infty g_c(S) S\,dS` (Simpson on the grid,
    with the panel ``[0, S_0]`` by the trapezoid rule)."""
    s = g_core.r
    y = g_core.values * s
    total = simpson(y, x=s) + 0.5 * s[0] * y[0]
    return float(-beta * beta * total)


# ================================================================ eikonal

@dataclass(eq=False)
class EikonalResult:
    r"""Solution of the viscous eikonal eigenvalue problem.

    ``omega``, ``lam`` (:math:`\Lambda`) and ``kappa`` are in the units of
    the S variable of ``g``.
    """

    omega: float
    lam: float
    kappa: float
    a_core: float
    phi0: RadialProfile
    dphi0: RadialProfile
    beta: float = -1.0
    d_cut: float = None
    s_max: float = None
    x_match: float = None
    iterations: int = 0
    g_model: object = field(default=None, repr=False)
    _splines: dict = field(default_factory=dict, repr=False)

    def _spl(self, which):
        if which not in self._splines:
            prof = self.dphi0 if which == "d" else self.phi0
            self._splines[which] = make_interp_spline(prof.r, prof.values, k=5)
        return self._splines[which]

    def dphi0_at(self, s):
        r"""``d phi0/dS`` anywhere; beyond ``s_max`` the exact
        :math:`\kappa K_1(\Lambda S)/K_0(\Lambda S)` decay is used."""
        s = np.asarray(s, dtype=float)
        if self.lam == 0.0:
            return np.zeros_like(s)
        out = np.empty_like(s)
        inside = s <= self.s_max
        out[inside] = self._spl("d")(s[inside])
        out[~inside] = self.kappa * bessel_ratio_k1_k0(self.lam * s[~inside])
        return out

    def phi0_at(self, s):
        """``phi0`` anywhere (``phi0(0) = 0``)."""
        s = np.asarray(s, dtype=float)
        if self.lam == 0.0:
            return np.zeros_like(s)
        out = np.empty_like(s)
        inside = s <= self.s_max
        out[inside] = self._spl("p")(s[inside])
        if np.any(~inside):
            x = self.lam * s[~inside]
            x0 = self.lam * self.s_max
            log_k0 = np.log(bessel_k0e(x)) - x
            log_k0_0 = np.log(bessel_k0e(x0)) - x0
            out[~inside] = float(self._spl("p")(self.s_max)) + (log_k0 - log_k0_0) / self.beta
        return out

    def to_summary(self, out_dir, prefix="eikonal"):
        """Write ``phi0``/``dphi0`` CSVs and a JSON summary; return the summary."""
        os.makedirs(out_dir, exist_ok=True)
        files = {"phi0": f"{prefix}_phi0.csv", "dphi0": f"{prefix}_dphi0.csv"}
        self.phi0.to_csv(os.path.join(out_dir, files["phi0"]))
        self.dphi0.to_csv(os.path.join(out_dir, files["dphi0"]))
        summ = {"omega": self.omega, "lam": self.lam, "kappa": self.kappa, "a_core": self.a_core,
                "beta": self.beta, "d_cut": self.d_cut, "s_max": self.s_max,
                "x_match": self.x_match, "files": files}
        with open(os.path.join(out_dir, f"{prefix}.json"), "w") as fh:
            json.dump(summ, fh, indent=1)
        return summ

    def nonlinear_residual(self, s_min=None):
        r"""Residual of :math:`\Delta_0\phi + \beta\phi'^2 + \Omega + \beta g`
        with :math:`\phi''` from a quintic spline of the stored
        :math:`\phi'` samples, independent of the linearization."""
        s = self.dphi0.r
        d = self.dphi0.values
        spl = make_interp_spline(s, d, k=5)
        dd = spl.derivative()(s)
        res = dd + d / s + self.beta * d * d + self.omega + self.beta * self.g_model(s)
        sel = slice(None) if s_min is None else s >= s_min
        return RadialProfile(RadialGrid(s[sel], "geometric"), res[sel])


def _g_model(g):
    """Callable extension of a sampled ``g``: quintic spline on the grid,
    ``g(S_end) (S_end/S)^2`` beyond it."""
    s = g.r
    spl = make_interp_spline(s, g.values, k=5)
    s_end = s[-1]
    g_end = float(g.values[-1])

    def model(x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        inside = x <= s_end
        out[inside] = spl(x[inside])
        out[~inside] = g_end * (s_end / x[~inside]) ** 2
        return out

    return model


def _numerov(q, y0, y1, h):
    """Integrate ``y'' = q y`` on a uniform grid; stop at the first node
    where ``y <= 0`` and return ``(y, index_of_node_or_None)``."""
    f = (1.0 - (h * h / 12.0) * q).tolist()
    n = len(f)
    y = [0.0] * n
    y[0] = y0
    y[1] = y1
    ym, yc = y0, y1
    for k in range(1, n - 1):
        yn = ((12.0 - 10.0 * f[k]) * yc - f[k - 1] * ym) / f[k + 1]
        y[k + 1] = yn
        if yn <= 0.0:
            return np.array(y[:k + 2]), k + 1
        ym, yc = yc, yn
    return np.array(y), None


class _EikonalShooter:
    """Two-sided shots of the linearized eikonal problem in ``t = log S``,
    ``y_tt = e^{2t} (Lambda^2 - beta^2 g) y``.

    The regular solution is integrated outward from the origin and the
    decaying one inward from ``Lambda S = x_far``, where it starts as
    ``K_0``; both are stable in their direction.  They meet at
    ``Lambda S = x_join``.  Start-up errors of the inward solution decay
    like ``exp(-2 (x_far - x))``.
    """

    def __init__(self, g_model, beta, s_start, x_match, steps_per_unit, x_join=3.0):
        self.g = g_model
        self.beta = beta
        self.b = -beta
        self.t0 = float(np.log(s_start))
        self.x_match = x_match
        self.x_far = 1.5 * x_match + 10.0
        self.x_join = x_join
        self.spu = steps_per_unit
        self.g0 = float(g_model(np.array([0.0]))[0])

    def shoot(self, omega):
        lam2 = self.b * omega
        lam = np.sqrt(lam2)
        t_far = np.log(self.x_far / lam)
        t_join = np.log(self.x_join / lam)
        if t_join <= self.t0 + 0.5:
            raise BracketError("matching point falls inside the start region", (omega, omega))
        k = int(np.ceil((t_far - self.t0) * self.spu))
        h = (t_far - self.t0) / k
        t = self.t0 + h * np.arange(k + 1)
        s = np.exp(t)
        q = s * s * (lam2 - self.beta ** 2 * self.g(s))
        j = int(round((t_join - self.t0) / h))
        # outward: series start y = 1 + p0 S^2/4 + p0^2 S^4/64
        p0 = lam2 - self.beta ** 2 * self.g0
        c1, c2 = p0 / 4.0, p0 * p0 / 64.0
        y0 = 1.0 + c1 * s[0] ** 2 + c2 * s[0] ** 4
        y1 = 1.0 + c1 * s[1] ** 2 + c2 * s[1] ** 4
        yf, node = _numerov(q[:j + 3], y0, y1, h)
        if node is not None:
            return -1.0
        # inward: K_0 data scaled by exp(x_far)
        x_end = lam * s[-2:]
        start = bessel_k0e(x_end) * np.exp(self.x_far - x_end)
        yb_rev, node = _numerov(q[j - 2:][::-1], start[1], start[0], h)
        if node is not None:
            return -1.0
        yb = yb_rev[::-1]
        ld_f = (yf[j - 2] - 8 * yf[j - 1] + 8 * yf[j + 1] - yf[j + 2]) / (12 * h) / yf[j]
        ld_b = (yb[0] - 8 * yb[1] + 8 * yb[3] - yb[4]) / (12 * h) / yb[2]
        return ld_f - ld_b


def _riccati_profile(shooter, omega, t_out, rtol=1e-13):
    """Log-derivative ``v = y_t/y`` and ``phi = log(y)/beta`` at the nodes
    ``t_out`` for a given ``omega``; also returns the mismatch of ``v``
    at the junction.

    ``v_t = Q - v^2`` is integrated outward to the junction and inward
    from ``x_far`` (``v = -x K_1/K_0`` there); each direction is the
    stable one for the branch it follows.
    """
    beta = shooter.beta
    lam2 = shooter.b * omega
    lam = np.sqrt(lam2)
    g = shooter.g
    t_far = np.log(shooter.x_far / lam)
    t_join = np.log(shooter.x_join / lam)

    def rhs(t, z):
        s = np.exp(t)
        q = s * s * (lam2 - beta * beta * float(g(np.array([s]))[0]))
        return [q - z[0] * z[0], z[0] / beta]

    s0 = np.exp(shooter.t0)
    p0 = lam2 - beta * beta * shooter.g0
    c1, c2 = p0 / 4.0, p0 * p0 / 64.0
    y0 = 1.0 + c1 * s0 ** 2 + c2 * s0 ** 4
    v0 = (2 * c1 * s0 ** 2 + 4 * c2 * s0 ** 4) / y0
    inner = t_out[t_out < t_join]
    fwd = solve_ivp(rhs, (shooter.t0, t_join), [v0, np.log(y0) / beta], method="DOP853",
                    t_eval=np.concatenate([inner, [t_join]]), rtol=rtol, atol=1e-30)
    x = shooter.x_far
    outer = t_out[t_out >= t_join]
    bwd = solve_ivp(rhs, (t_far, t_join), [-x * bessel_ratio_k1_k0(x), 0.0], method="DOP853",
                    t_eval=np.concatenate([outer[::-1], [t_join]]), rtol=rtol, atol=1e-30)
    if not (fwd.success and bwd.success):
        raise ConvergenceError("log-derivative integration failed")
    vf, pf = fwd.y[:, :-1]
    vb, pb = bwd.y[:, :-1][:, ::-1]
    shift = fwd.y[1, -1] - bwd.y[1, -1]
    v = np.concatenate([vf, vb])
    phi = np.concatenate([pf, pb + shift])
    return v, phi, float(fwd.y[0, -1] - bwd.y[0, -1])


def solve_eikonal(g, beta, d_cut, x_match=30.0, steps_per_unit=1500, out_per_unit=250,
                  omega_floor=1e-280, max_iter=200):
    r"""Ground-state eigenvalue :math:`\Omega` of the viscous eikonal problem.

    The Hopf-Cole substitution :math:`\phi_0 = \beta^{-1}\log y` gives
    :math:`\Delta_0 y + (\beta^2 g - b\Omega) y = 0`.  Regular solutions are
    shot from the origin (Numerov in ``log S``) and matched at
    :math:`S_{max} = x_{match}/\Lambda` to the decaying
    :math:`K_0(\Lambda S)` through
    :math:`y'/y = -\Lambda K_1(\Lambda S_{max})/K_0(\Lambda S_{max})`.
    :math:`\Omega` is bisected in ``log`` space; a shot with a zero of
    ``y`` counts as lying below the ground state.

    Parameters
    ----------
    g : RadialProfile
        Nonnegative inhomogeneity on an S-grid, either compactly supported
        or with far-field exponent ``-2 +- 0.2``; beyond the grid it is
        continued as ``g(S_end)(S_end/S)^2``.
    beta : float
        Negative.
    d_cut : float
        Cutoff used for the reported core mass ``a``.
    x_match : float
        :math:`\Lambda S_{max}` where the stored profiles end.
    steps_per_unit, out_per_unit : int
        Integration steps and stored nodes per unit of ``log S``.

    Raises
    ------
    BracketError
        No sign change of the matching function up to the admissible
        ceiling ``beta^2 max(g) / b``.
    UnderflowError
        The root lies below ``omega_floor``.
    """
    if not beta < 0:
        raise PreconditionError("beta must be negative")
    vals = np.asarray(g.values, dtype=float)
    if np.any(vals < 0):
        raise PreconditionError("g must be nonnegative")
    s_grid = g.r
    if not np.any(vals):
        zero = RadialProfile(g.grid, np.zeros_like(vals))
        return EikonalResult(0.0, 0.0, 0.0, 0.0, zero, zero, beta, d_cut, float(s_grid[-1]),
                             x_match, 0, lambda x: np.zeros_like(np.asarray(x, dtype=float)))
    # compactly supported g (e.g. a core part) decays faster than any power
    s_support = s_grid[np.nonzero(vals)[0][-1]]
    if s_support >= 0.5 * s_grid[-1]:
        fit = decay_exponent(g, "farfield")
        if abs(fit.exponent + 2.0) > 0.2:
            raise PreconditionError(f"g far-field exponent {fit.exponent:.3f} not within -2 +- 0.2")
    b = -beta
    g_core, _ = split_g(g, d_cut)
    a = core_mass_a(g_core, beta)
    model = _g_model(g)
    shooter = _EikonalShooter(model, beta, 0.25 * s_grid[0], x_match, steps_per_unit)

    def sign(omega):
        return 1.0 if shooter.shoot(omega) > 0 else -1.0

    ceiling = beta * beta * float(np.max(vals)) / b
    guess = 4.0 * np.exp(-2.0 * EULER_GAMMA) * np.exp(2.0 / a) if a < 0 else ceiling * 1e-3
    guess = float(np.clip(guess, omega_floor * 10, ceiling * 0.5))
    lo = hi = guess
    s_guess = sign(guess)
    n_eval = 1
    if s_guess > 0:
        while True:
            lo = hi / 10.0
            n_eval += 1
            if lo < omega_floor:
                raise UnderflowError(
                    f"eikonal eigenvalue below {omega_floor:g}; rescale beta toward larger |beta|")
            if sign(lo) < 0:
                break
            hi = lo
    else:
        while True:
            if lo >= ceiling:
                raise BracketError("matching function has no sign change below the ceiling",
                                   (guess, ceiling))
            hi = min(lo * 10.0, ceiling)
            n_eval += 1
            if sign(hi) > 0:
                break
            lo = hi
    llo, lhi = np.log(lo), np.log(hi)
    it = 0
    while lhi - llo > 1e-14 * max(1.0, abs(lhi)) and it < max_iter:
        mid = 0.5 * (llo + lhi)
        if sign(np.exp(mid)) > 0:
            lhi = mid
        else:
            llo = mid
        it += 1
    omega = float(np.exp(lhi))
    lam = float(np.sqrt(b * omega))
    t_match = np.log(x_match / lam)
    t_out = np.linspace(shooter.t0, t_match, int(np.ceil((t_match - shooter.t0) * out_per_unit)) + 1)
    # polish omega on the (smooth) junction mismatch of the log-derivative
    o0, o1 = omega, omega * (1.0 + 1e-9)
    m0 = _riccati_profile(shooter, o0, t_out[:2])[2]
    for _ in range(6):
        m1 = _riccati_profile(shooter, o1, t_out[:2])[2]
        if m1 == m0 or m1 == 0.0:
            break
        o2 = o1 - m1 * (o1 - o0) / (m1 - m0)
        if not (np.exp(llo) * 0.999 < o2 < np.exp(lhi) * 1.001):
            break
        o0, m0, o1 = o1, m1, o2
        if abs(o1 - o0) <= 1e-15 * o1:
            break
    omega = o1 if abs(m1) < abs(m0) else o0
    lam = float(np.sqrt(b * omega))
    t_match = np.log(x_match / lam)
    t_out = np.linspace(shooter.t0, t_match, int(np.ceil((t_match - shooter.t0) * out_per_unit)) + 1)
    v, phi, _ = _riccati_profile(shooter, omega, t_out)
    s = np.exp(t_out)
    s_max = float(s[-1])
    dphi = v / s / beta
    lam = float(np.sqrt(b * omega))
    kappa = lam / b
    if np.any(dphi[1:] <= 0):
        raise InvariantError("phase gradient not positive; solution is not the ground state")
    grid = RadialGrid(s, "geometric")
    return EikonalResult(omega, lam, kappa, a, RadialProfile(grid, phi), RadialProfile(grid, dphi),
                         beta, d_cut, float(s_max), x_match, it + n_eval, model)


def compute_R0(rho0, eik, delta):
    r""":math:`R_0(S) = -\tfrac12\rho_0(S/\delta)(\partial_S\phi_0)^2` on the
    eikonal grid."""
    s = eik.dphi0.r
    vals = -0.5 * rho0.evaluate(s / delta) * eik.dphi0.values ** 2
    return RadialProfile(eik.dphi0.grid, vals, infinity_limit=-0.5 * eik.kappa ** 2)


# =================================================================== zeta

@dataclass(frozen=True, eq=False)
class ZetaSolution:
    """``zeta`` on the S-grid, its decaying part ``zeta1 = zeta - 1/2`` and
    the max-norm of the discrete residual."""

    zeta: RadialProfile
    zeta1: RadialProfile
    xi: np.ndarray
    residual_norm: float


def solve_zeta(delta, grid):
    r"""Solve :math:`(\delta^2\Delta_{1,S} - 2)\zeta = -1`, :math:`\zeta(0) = 0`,
    :math:`\zeta\to\tfrac12`.

    Banded second-order solve; the far node carries the asymptotic value
    :math:`\tfrac12 - \delta^2/(4S_{max}^2)`.
    """
    if not delta > 0:
        raise PreconditionError("delta must be positive")
    s = grid.nodes
    lap = delta_n_matrix(grid, 1, far="dirichlet")
    a = (delta ** 2 * lap - 2.0 * sparse.identity(grid.n, format="csr")).tolil()
    rhs = -np.ones(grid.n)
    a[grid.n - 1, :] = 0.0
    a[grid.n - 1, grid.n - 1] = 1.0
    rhs[-1] = 0.5 - delta ** 2 / (4.0 * s[-1] ** 2)
    a = a.tocsc()
    try:
        z = splu(a).solve(rhs)
    except RuntimeError as exc:
        raise SingularSolveError(f"zeta solve failed: {exc}") from exc
    if not np.all(np.isfinite(z)):
        raise SingularSolveError("zeta solve produced non-finite values")
    res = float(np.max(np.abs(a @ z - rhs)))
    xi = np.sqrt(2.0) * s / delta
    return ZetaSolution(RadialProfile(grid, z, origin_power=1.0, infinity_limit=0.5),
                        RadialProfile(RadialGrid(xi, grid.spacing), z - 0.5, infinity_limit=0.0),
                        xi, res)


# ================================================================ Riccati

def solve_riccati_hopf_cole(a, b_fn, c, d, grid, x_start=1e-8, rtol=1e-12):
    r"""Solve :math:`q' + (a/x)q + b(x)q - cq^2 + d/x^2 = 0` regular-singularly.

    With :math:`q = -\frac{1}{c}\,y'/y` the equation becomes
    :math:`y'' + (a/x + b(x))y' - (cd/x^2) y = 0`.  Writing
    :math:`y = x^r z` with :math:`r` the positive root of
    :math:`r^2 + (a-1)r - cd = 0` leaves
    :math:`z'' + ((2r+a)/x + b)z' + (b r/x) z = 0`, started from
    :math:`z(0) = 1`, :math:`z'(0) = -b(0)r/(2r+a)`.

    Returns
    -------
    RadialProfile
        ``q`` on ``grid``; ``origin_power = -1``.

    Raises
    ------
    PoleError
        ``z`` (hence ``y``) vanishes inside the domain.
    """
    if not (a > 0 and c > 0 and d >= 0):
        raise PreconditionError("need a > 0, c > 0, d >= 0")
    x = grid.nodes
    if d == 0:
        return RadialProfile(grid, np.zeros_like(x), infinity_limit=0.0)
    r = 0.5 * (-(a - 1.0) + np.sqrt((a - 1.0) ** 2 + 4.0 * c * d))
    x0 = min(x_start, 0.5 * x[0])
    dz0 = -b_fn(0.0) * r / (2.0 * r + a)

    def rhs(xx, yv):
        z, dz = yv
        bx = b_fn(xx)
        return [dz, -((2.0 * r + a) / xx + bx) * dz - bx * r / xx * z]

    def hit_zero(xx, yv):
        return yv[0]

    hit_zero.terminal = True
    hit_zero.direction = -1
    sol = solve_ivp(rhs, (x0, x[-1]), [1.0 + dz0 * x0, dz0], method="DOP853",
                    t_eval=x, events=hit_zero, rtol=rtol, atol=1e-14)
    if sol.t_events[0].size:
        loc = float(sol.t_events[0][0])
        raise PoleError(f"y vanishes at x = {loc:.6g}; q has a pole", location=loc)
    if not sol.success:
        raise ConvergenceError(f"Riccati transform integration failed: {sol.message}")
    z, dz = sol.y
    q = -(dz / z + r / x) / c
    return RadialProfile(grid, q, origin_power=-1.0, infinity_limit=float(q[-1]))


# ============================================================ predictions

def predict_kappa(eik, beta, delta, p):
    r"""Wavenumber :math:`\kappa = -(\Lambda/\beta)\,\delta/\sqrt{\eta - \varepsilon^2 D}`.

    ``eik`` may be an :class:`EikonalResult` or the value of :math:`\Lambda`.

    Raises
    ------
    BreakdownError
        ``eta - eps^2 D <= 0``.
    """
    d_real = p.require_regime()
    lam = eik.lam if isinstance(eik, EikonalResult) else float(eik)
    return -(lam / beta) * delta / np.sqrt(d_real)


def predict_lambda(beta, delta, omega):
    r"""Rotation frequency :math:`\lambda = \beta + \delta^2\Omega`."""
    return beta + delta * delta * omega


# ========================================================= composed ansatz

@dataclass(eq=False)
class SpiralAnsatz:
    """First-order spiral :math:`\\rho(r), \\phi(r)` with its frequency."""

    delta: float
    beta: float
    params: KernelParams
    lambda_rot: float
    rho: RadialProfile
    phi: RadialProfile
    kappa_pred: float
    omega: float = 0.0
    kappa_s: float = 0.0
    c_n: float = 0.0

    def to_summary(self, out_dir, prefix="spiral"):
        """Write ``rho``/``phi`` CSVs and a JSON summary; return the summary."""
        os.makedirs(out_dir, exist_ok=True)
        files = {"rho": f"{prefix}_rho.csv", "phi": f"{prefix}_phi.csv"}
        self.rho.to_csv(os.path.join(out_dir, files["rho"]))
        self.phi.to_csv(os.path.join(out_dir, files["phi"]))
        p = self.params
        summ = {"delta": self.delta, "beta": self.beta, "eta": p.eta, "dtilde": p.dtilde,
                "lambda_rot": self.lambda_rot, "kappa_pred": self.kappa_pred,
                "omega": self.omega, "kappa_s": self.kappa_s, "c_n": self.c_n, "files": files}
        with open(os.path.join(out_dir, f"{prefix}.json"), "w") as fh:
            json.dump(summ, fh, indent=1)
        return summ


def compose_spiral(rho0, eik, delta, beta, p, grid=None, n=8000, c_n=0.0):
    r"""Compose :math:`\rho = \rho_0(\tilde r) + \delta^2 R_0(\delta\tilde r)`,
    :math:`\phi = \phi_0(\delta\tilde r)`, :math:`\tilde r = r/\sqrt{\eta-\varepsilon^2 D}`.

    The default r-grid is uniform with ``n`` nodes and ends where
    :math:`S = \delta\tilde r` reaches the eikonal matching point.
    """
    d_real = p.require_regime()
    kappa = predict_kappa(eik, beta, delta, p)
    lam_rot = predict_lambda(beta, delta, eik.omega)
    sq = np.sqrt(d_real)
    if grid is None:
        if delta > 0 and eik.lam > 0:
            r_max = sq * eik.s_max / delta
        else:
            r_max = sq * rho0.profile.grid.r_max
        grid = RadialGrid.uniform(r_max, n)
    rt = grid.nodes / sq
    s = delta * rt
    r0 = rho0.evaluate(rt)
    if delta > 0:
        dphi = eik.dphi0_at(s)
        phi = eik.phi0_at(s)
    else:
        dphi = np.zeros_like(s)
        phi = np.full_like(s, float(eik.phi0_at(np.array([0.0]))[0]) if eik.lam else 0.0)
    rho = r0 - 0.5 * delta ** 2 * r0 * dphi ** 2
    return SpiralAnsatz(delta, beta, p, lam_rot,
                        RadialProfile(grid, rho, infinity_limit=1.0 - 0.5 * (delta * eik.kappa) ** 2),
                        RadialProfile(grid, phi), kappa, eik.omega, eik.kappa, c_n)


@dataclass(frozen=True, eq=False)
class PolarResidual:
    res_real: RadialProfile
    res_imag: RadialProfile
    norms: tuple
    window: tuple


def _delta1_complex(y, w):
    return derivative(y, w, 2) + derivative(y, w, 1) / y - w / y ** 2


def polar_residual(y, rho, phi, lam, beta, p, c_n=0.0):
    r"""Residuals of the polar amplitude/phase equations in the rescaled
    variable ``y`` (derivatives taken in ``y``):

    .. math::
        [\Delta_1\rho - \phi'^2\rho] - \alpha[\rho\Delta_0\phi + 2\phi'\rho']
        + \rho - \rho^3 + \mathrm{Re}[\tilde N e^{-i\phi}],

        [\rho\Delta_0\phi + 2\phi'\rho'] + \alpha[\Delta_1\rho - \phi'^2\rho]
        + \lambda\rho - \beta\rho^3 + \mathrm{Im}[\tilde N e^{-i\phi}],

    with :math:`\alpha = -\varepsilon^2 D\lambda/(\eta - \varepsilon^2 D)` and
    :math:`\tilde N = \frac{\varepsilon^2 D}{d_R}(1+i\beta)\Delta_1(|w|^2w)
    + (1 - \frac{\varepsilon^2 D}{d_R}\Delta_1)N`,
    :math:`N = \varepsilon c_N|w|^4 w`.
    """
    d_real = p.require_regime()
    dt = p.dtilde
    alpha = -dt * lam / d_real
    r1 = derivative(y, rho, 1)
    r2 = derivative(y, rho, 2)
    p1 = derivative(y, phi, 1)
    p2 = derivative(y, phi, 2)
    lap1_rho = r2 + r1 / y - rho / y ** 2
    lap0_phi = p2 + p1 / y
    amp = lap1_rho - p1 ** 2 * rho
    ph = rho * lap0_phi + 2.0 * p1 * r1
    res_re = amp - alpha * ph + rho - rho ** 3
    res_im = ph + alpha * amp + lam * rho - beta * rho ** 3
    if dt > 0 or c_n != 0:
        w = rho * np.exp(1j * phi)
        rot = np.exp(-1j * phi)
        extra = np.zeros_like(w)
        if dt > 0:
            extra += (dt / d_real) * (1 + 1j * beta) * _delta1_complex(y, np.abs(w) ** 2 * w)
        if c_n != 0:
            nl = p.epsilon * c_n * np.abs(w) ** 4 * w
            extra += nl - (dt / d_real) * _delta1_complex(y, nl)
        extra = extra * rot
        res_re = res_re + extra.real
        res_im = res_im + extra.imag
    return res_re, res_im


def residual_polar(ans, s_window=None):
    r"""Residual of the composed ansatz and its ``L^2(r dr)`` norms.

    Norms are taken over ``S = delta r/sqrt(eta - eps^2 D)`` in
    ``[1, S_max/2]`` unless ``s_window`` is given.
    """
    p = ans.params
    sq = np.sqrt(p.require_regime())
    r = ans.rho.r
    y = r / sq
    res_re, res_im = polar_residual(y, ans.rho.values, ans.phi.values, ans.lambda_rot,
                                    ans.beta, p, ans.c_n)
    s = ans.delta * y
    if s_window is None:
        s_window = (1.0, 0.5 * s[-1])
    sel = (s >= s_window[0]) & (s <= s_window[1])
    sel[[0, -1]] = False
    norms = (0.0, 0.0)
    if sel.sum() >= 3:
        norms = tuple(float(np.sqrt(simpson(v[sel] ** 2 * r[sel], x=r[sel]))) for v in (res_re, res_im))
    return PolarResidual(RadialProfile(ans.rho.grid, res_re), RadialProfile(ans.rho.grid, res_im),
                         norms, tuple(s_window))
