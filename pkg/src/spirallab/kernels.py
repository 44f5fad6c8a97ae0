r"""Diffusive convolution kernels with a bounded radial Fourier symbol.

.. math::
    \hat K(\xi) = -\frac{\eta\,\xi^2}{1 + \varepsilon^2 D\,\xi^2},
    \qquad
    \hat J(\xi) = \frac{\eta D\,\xi^4}{1 + \varepsilon^2 D\,\xi^2},

so that :math:`\hat K = -\eta\xi^2 + \varepsilon^2\hat J` exactly.  In the
mode-one radial sector the operator is applied through its resolvent form
:math:`K\ast w = \eta(1 - \varepsilon^2 D\Delta_1)^{-1}\Delta_1 w`.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import BreakdownError, ParameterError, SingularSolveError
from .field import Field2D, wavenumber_magnitude
from .radial import RadialProfile, delta_n_matrix

__all__ = ["KernelParams", "SymbolTable", "symbol_K", "symbol_J", "symbol_table",
           "apply_nonlocal_radial", "apply_symbol_2d"]


@dataclass(frozen=True)
class KernelParams:
    """Coupling strength ``eta``, bifurcation parameter ``epsilon`` and
    spread ``dcoef`` (D)."""

    eta: float
    epsilon: float = 0.0
    dcoef: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise ParameterError(f"eta must be positive, got {self.eta!r}")
        if not (np.isfinite(self.dcoef) and self.dcoef > 0):
            raise ParameterError(f"dcoef must be positive, got {self.dcoef!r}")
        if not (np.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ParameterError(f"epsilon must be nonnegative, got {self.epsilon!r}")

    @classmethod
    def from_dtilde(cls, eta, dtilde, epsilon=1.0):
        """Parameters with ``epsilon**2 * dcoef = dtilde``.

        ``dtilde = 0`` is represented as ``epsilon = 0, dcoef = 1``.
        """
        if dtilde < 0:
            raise ParameterError("dtilde must be nonnegative")
        if dtilde == 0:
            return cls(eta, 0.0, 1.0)
        return cls(eta, epsilon, dtilde / epsilon ** 2)

    @property
    def dtilde(self):
        return self.epsilon ** 2 * self.dcoef

    @property
    def d_real(self):
        """Effective diffusion ``eta - eps^2 D``."""
        return self.eta - self.dtilde

    def require_regime(self):
        """Raise :class:`BreakdownError` unless ``eta - eps^2 D > 0``."""
        if not self.d_real > 0:
            raise BreakdownError(
                f"eta - eps^2 D = {self.d_real:.6g} <= 0: wavenumber law does not apply",
                d_real=self.d_real)
        return self.d_real


@dataclass(frozen=True)
class SymbolTable:
    """Tabulated symbols on radial wavenumbers."""

    xi_grid: np.ndarray
    k_hat: np.ndarray
    j_hat: np.ndarray


def symbol_K(xi, p):
    r""":math:`\hat K(\xi) = -\eta\xi^2/(1+\varepsilon^2 D\xi^2)`."""
    xi = np.asarray(xi, dtype=float)
    if np.any(xi < 0):
        raise ParameterError("wavenumber must be nonnegative")
    x2 = xi * xi
    out = -p.eta * x2 / (1.0 + p.dtilde * x2)
    return float(out) if out.ndim == 0 else out


def symbol_J(xi, p):
    r""":math:`\hat J(\xi) = \eta D\xi^4/(1+\varepsilon^2 D\xi^2)`."""
    xi = np.asarray(xi, dtype=float)
    if np.any(xi < 0):
        raise ParameterError("wavenumber must be nonnegative")
    x2 = xi * xi
    out = p.eta * p.dcoef * x2 * x2 / (1.0 + p.dtilde * x2)
    return float(out) if out.ndim == 0 else out


def symbol_table(xi_grid, p):
    xi_grid = np.asarray(xi_grid, dtype=float)
    return SymbolTable(xi_grid, symbol_K(xi_grid, p), symbol_J(xi_grid, p))


def apply_nonlocal_radial(u, p):
    r"""Apply the kernel to a mode-one radial profile.

    Solves :math:`(1 - \varepsilon^2 D\Delta_1)v = \Delta_1 u` with the
    banded second-order :math:`\Delta_1` (ghost origin ``u(0) = 0``, Robin
    far closure ``u' + u/r_max = 0``) and returns :math:`\eta v`.

    Raises
    ------
    SingularSolveError
        The banded factorization fails or produces non-finite values.
    """
    grid = u.grid
    lap = delta_n_matrix(grid, 1, far="robin")
    rhs = lap @ u.values
    if p.dtilde == 0.0:
        return RadialProfile(grid, p.eta * rhs)
    a = (sparse.identity(grid.n, format="csr") - p.dtilde * lap).tocsc()
    try:
        v = splu(a).solve(rhs)
    except RuntimeError as exc:
        raise SingularSolveError(f"resolvent solve failed: {exc}") from exc
    if not np.all(np.isfinite(v)):
        raise SingularSolveError("resolvent solve produced non-finite values")
    return RadialProfile(grid, p.eta * v)


def apply_symbol_2d(f, which, p, symbol=None):
    """Multiply the spectral coefficients of ``f`` by the kernel symbol.

    Parameters
    ----------
    f : Field2D
    which : {"K", "K_plus_identity"}
    p : KernelParams
    symbol : ndarray, optional
        Precomputed ``symbol_K`` on the lattice, shared read-only.
    """
    if which not in ("K", "K_plus_identity"):
        raise ParameterError(f"unknown operator {which!r}")
    if symbol is None:
        symbol = symbol_K(wavenumber_magnitude(f.n, f.length, f.basis), p)
    mult = symbol + 1.0 if which == "K_plus_identity" else symbol
    coeffs = f.spectral() * mult
    return Field2D.from_spectral(coeffs, f.n, f.length, f.basis,
                                 real=not np.iscomplexobj(f.values), t=f.t, step=f.step)
