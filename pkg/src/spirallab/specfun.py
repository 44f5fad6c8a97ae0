r"""Modified Bessel functions :math:`K_0`, :math:`K_1` and :math:`I_1`.

Three evaluation regimes are used, selected by the argument:

``series``      :math:`0 < z \le 2`, ascending power series.
``crossover``   :math:`2 < z < 25`, Steed/Temme continued fraction for
                :math:`K_0, K_1`; the (cancellation free) ascending series
                for :math:`I_1`.
``asymptotic``  :math:`z \ge 25`, Hankel expansions

.. math::
    K_\nu(z) \sim \sqrt{\frac{\pi}{2z}} e^{-z}\sum_k \frac{a_k(\nu)}{z^k},
    \qquad
    I_\nu(z) \sim \frac{e^{z}}{\sqrt{2\pi z}}\sum_k (-1)^k\frac{a_k(\nu)}{z^k}.

All internal work is done on exponentially scaled values
(:math:`e^{z}K_\nu`, :math:`e^{-z}I_\nu`), so ratios and products such as
:math:`I_1(r)K_1(\rho)` never lose precision to overflow or cancellation.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, RangeError

__all__ = [
    "SERIES_MAX",
    "ASYMPTOTIC_MIN",
    "OVERFLOW_CAP",
    "BesselEval",
    "regime",
    "bessel_k0",
    "bessel_k1",
    "bessel_i1",
    "bessel_k0e",
    "bessel_k1e",
    "bessel_i1e",
    "bessel_ratio_k1_k0",
    "bessel_eval",
]

SERIES_MAX = 2.0
ASYMPTOTIC_MIN = 25.0
# exp(700) is the last safe exponent before I_1 overflows / K underflows
OVERFLOW_CAP = 700.0

_EULER = 0.57721566490153286061
_N_SERIES = 26
_N_I1_SERIES = 90
_N_ASYMPTOTIC = 30
_CF_MAXIT = 10000
_CF_EPS = 1e-17


@dataclass(frozen=True)
class BesselEval:
    """Value of a Bessel function together with the regime that produced it."""

    value: float
    regime: str


def _check(z, cap=True, allow_zero=False):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError("Bessel argument must be finite")
    if np.any(z < 0.0) or (not allow_zero and np.any(z == 0.0)):
        raise DomainError(f"Bessel argument must be positive, got min {z.min()!r}")
    if cap and np.any(z > OVERFLOW_CAP):
        raise RangeError(
            f"Bessel argument {z.max()!r} beyond overflow cap {OVERFLOW_CAP}; "
            "use the exponentially scaled variants")
    return z


def regime(z):
    """Name of the evaluation regime used at argument ``z``."""
    z = float(z)
    if z <= SERIES_MAX:
        return "series"
    if z < ASYMPTOTIC_MIN:
        return "crossover"
    return "asymptotic"


# ---------------------------------------------------------------- series

def _series_all(z):
    """Unscaled K0, K1, I1 from ascending series (small z)."""
    q = 0.25 * z * z
    t0 = np.ones_like(z)        # (z^2/4)^k / (k!)^2
    t1 = np.ones_like(z)        # (z^2/4)^k / (k!(k+1)!)
    i0 = np.zeros_like(z)
    s_i1 = np.zeros_like(z)
    s_k0 = np.zeros_like(z)
    s_k1 = np.zeros_like(z)
    harm = 0.0
    for k in range(_N_SERIES):
        if k > 0:
            t0 = t0 * q / (k * k)
            t1 = t1 * q / (k * (k + 1))
            harm += 1.0 / k
        i0 += t0
        s_i1 += t1
        s_k0 += harm * t0
        # psi(k+1) + psi(k+2) = 2 H_k + 1/(k+1) - 2 gamma
        s_k1 += (2.0 * harm + 1.0 / (k + 1) - 2.0 * _EULER) * t1
    lg = np.log(0.5 * z)
    i1 = 0.5 * z * s_i1
    k0 = -(lg + _EULER) * i0 + s_k0
    k1 = 1.0 / z + lg * i1 - 0.25 * z * s_k1
    return k0, k1, i1


def _i1_series_scaled(z):
    q = 0.25 * z * z
    t = 0.5 * z * np.exp(-z)
    s = t.copy()
    for k in range(1, _N_I1_SERIES):
        t = t * q / (k * (k + 1))
        s += t
    return s


# ------------------------------------------------------- continued fraction

def _k_scaled_cf(z):
    """Scaled K0, K1 via the Steed/Temme continued fraction (z >= 2)."""
    x = z
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d.copy()
    delh = d.copy()
    q1 = np.zeros_like(x)
    q2 = np.ones_like(x)
    a1 = 0.25
    q = np.full_like(x, a1)
    c = a1
    a = -a1
    s = 1.0 + q * delh
    done = np.zeros(x.shape, dtype=bool)
    for i in range(2, _CF_MAXIT):
        a -= 2 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1, q2 = q2, qnew
        q = q + c * qnew
        b = b + 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h = h + delh
        dels = q * delh
        s = np.where(done, s, s + dels)
        done |= np.abs(dels / s) < _CF_EPS
        if done.all():
            break
    else:  # pragma: no cover - the fraction converges in < 100 terms for z >= 2
        raise RangeError("Bessel continued fraction did not converge")
    h = a1 * h
    k0e = np.sqrt(np.pi / (2.0 * x)) / s
    k1e = k0e * (x + 0.5 - h) / x
    return k0e, k1e


# ------------------------------------------------------------ asymptotic

def _hankel_sum(z, nu, alternating):
    mu = 4.0 * nu * nu
    term = np.ones_like(z)
    total = np.ones_like(z)
    for k in range(1, _N_ASYMPTOTIC):
        term = term * (mu - (2 * k - 1) ** 2) / (8.0 * k * z)
        total += (-term if (alternating and k % 2) else term)
    return total


def _k_scaled_asym(z, nu):
    return np.sqrt(np.pi / (2.0 * z)) * _hankel_sum(z, nu, False)


def _i_scaled_asym(z, nu):
    return _hankel_sum(z, nu, True) / np.sqrt(2.0 * np.pi * z)


# ------------------------------------------------------------ dispatch

def _scaled(z):
    """Return scaled (K0 e^z, K1 e^z, I1 e^-z) on a validated array."""
    if np.any(z == 0.0):
        # only reachable from the I1 entry points, where I1(0) = 0
        zz = np.where(z == 0.0, 1.0, z)
        k0e, k1e, i1e = _scaled(zz)
        return k0e, k1e, np.where(z == 0.0, 0.0, i1e)
    k0e = np.empty_like(z)
    k1e = np.empty_like(z)
    i1e = np.empty_like(z)
    m_s = z <= SERIES_MAX
    m_a = z >= ASYMPTOTIC_MIN
    m_c = ~(m_s | m_a)
    if m_s.any():
        zs = z[m_s]
        k0, k1, i1 = _series_all(zs)
        k0e[m_s] = k0 * np.exp(zs)
        k1e[m_s] = k1 * np.exp(zs)
        i1e[m_s] = i1 * np.exp(-zs)
    if m_c.any():
        zc = z[m_c]
        k0e[m_c], k1e[m_c] = _k_scaled_cf(zc)
        i1e[m_c] = _i1_series_scaled(zc)
    if m_a.any():
        za = z[m_a]
        k0e[m_a] = _k_scaled_asym(za, 0)
        k1e[m_a] = _k_scaled_asym(za, 1)
        i1e[m_a] = _i_scaled_asym(za, 1)
    return k0e, k1e, i1e


def _out(z_in, value):
    return float(value) if np.ndim(z_in) == 0 else value


def bessel_k0e(z):
    r"""Exponentially scaled :math:`e^{z}K_0(z)`, valid for every ``z > 0``."""
    z_arr = np.atleast_1d(_check(z, cap=False))
    return _out(z, _scaled(z_arr)[0].reshape(np.shape(z)))


def bessel_k1e(z):
    r"""Exponentially scaled :math:`e^{z}K_1(z)`, valid for every ``z > 0``."""
    z_arr = np.atleast_1d(_check(z, cap=False))
    return _out(z, _scaled(z_arr)[1].reshape(np.shape(z)))


def bessel_i1e(z):
    r"""Exponentially scaled :math:`e^{-z}I_1(z)`, valid for every ``z >= 0``."""
    z_arr = np.atleast_1d(_check(z, cap=False, allow_zero=True))
    return _out(z, _scaled(z_arr)[2].reshape(np.shape(z)))


def bessel_k0(z):
    """Modified Bessel function of the second kind, order zero.

    Parameters
    ----------
    z : float or array_like
        Positive argument, at most ``OVERFLOW_CAP``.

    Returns
    -------
    float or ndarray

    Raises
    ------
    DomainError
        ``z <= 0`` or non-finite.
    RangeError
        ``z > OVERFLOW_CAP``.
    """
    z_arr = np.atleast_1d(_check(z))
    return _out(z, (_scaled(z_arr)[0] * np.exp(-z_arr)).reshape(np.shape(z)))


def bessel_k1(z):
    """Modified Bessel function of the second kind, order one.

    Same domain and errors as :func:`bessel_k0`.
    """
    z_arr = np.atleast_1d(_check(z))
    return _out(z, (_scaled(z_arr)[1] * np.exp(-z_arr)).reshape(np.shape(z)))


def bessel_i1(z):
    """Modified Bessel function of the first kind, order one.

    Defined for ``0 <= z <= OVERFLOW_CAP``; ``I1(0) = 0``.
    """
    z_arr = np.atleast_1d(_check(z, allow_zero=True))
    return _out(z, (_scaled(z_arr)[2] * np.exp(z_arr)).reshape(np.shape(z)))


def bessel_ratio_k1_k0(z):
    r"""Ratio :math:`K_1(z)/K_0(z)` for any ``z > 0``.

    Formed from the scaled values, so it stays accurate far beyond the
    overflow cap; for large ``z`` it behaves like
    :math:`1 + 1/(2z) - 1/(8z^2) + 1/(8z^3)`.
    """
    z_arr = np.atleast_1d(_check(z, cap=False))
    k0e, k1e, _ = _scaled(z_arr)
    return _out(z, (k1e / k0e).reshape(np.shape(z)))


_FUNCS = {"k0": bessel_k0, "k1": bessel_k1, "i1": bessel_i1,
          "k0e": bessel_k0e, "k1e": bessel_k1e, "i1e": bessel_i1e,
          "k1/k0": bessel_ratio_k1_k0}


def bessel_eval(name, z):
    """Evaluate ``name`` in ``{'k0','k1','i1','k0e','k1e','i1e','k1/k0'}``
    at scalar ``z`` and report the regime used."""
    try:
        fn = _FUNCS[name]
    except KeyError:
        raise DomainError(f"unknown Bessel function {name!r}") from None
    return BesselEval(value=fn(float(z)), regime=regime(z))
