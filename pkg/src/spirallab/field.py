"""Square 2-D fields with a cached spectral representation.

Two bases are supported.  ``periodic`` uses the complex FFT with wavenumbers
``2*pi*k/L``; ``cosine`` uses the orthonormal type-II DCT (homogeneous
Neumann walls) with wavenumbers ``pi*k/L``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .errors import ShapeError

BASES = ("cosine", "periodic")


def wavenumbers_1d(n, length, basis):
    """Wavenumbers along one axis for the given basis."""
    if basis == "periodic":
        return 2.0 * np.pi * sfft.fftfreq(n, d=1.0 / n) / length
    if basis == "cosine":
        return np.pi * np.arange(n) / length
    raise ShapeError(f"unknown basis {basis!r}")


def wavenumber_magnitude(n, length, basis):
    """|xi| on the full square lattice of modes."""
    k = wavenumbers_1d(n, length, basis)
    return np.sqrt(k[:, None] ** 2 + k[None, :] ** 2)


def forward(values, basis, workers=None):
    """Spectral coefficients of ``values`` (last two axes)."""
    if basis == "periodic":
        return sfft.fft2(values, workers=workers)
    if np.iscomplexobj(values):
        return (sfft.dctn(values.real, type=2, norm="ortho", axes=(-2, -1), workers=workers)
                + 1j * sfft.dctn(values.imag, type=2, norm="ortho", axes=(-2, -1), workers=workers))
    return sfft.dctn(values, type=2, norm="ortho", axes=(-2, -1), workers=workers)


def inverse(coeffs, basis, real=False, workers=None):
    """Inverse of :func:`forward`."""
    if basis == "periodic":
        out = sfft.ifft2(coeffs, workers=workers)
        return out.real if real else out
    if np.iscomplexobj(coeffs):
        out = (sfft.idctn(coeffs.real, type=2, norm="ortho", axes=(-2, -1), workers=workers)
               + 1j * sfft.idctn(coeffs.imag, type=2, norm="ortho", axes=(-2, -1), workers=workers))
        return out.real if real else out
    return sfft.idctn(coeffs, type=2, norm="ortho", axes=(-2, -1), workers=workers)


@dataclass
class Field2D:
    """An ``n x n`` field on a square of side ``length``.

    ``values`` is either a complex ``(n, n)`` array (one complex amplitude)
    or a real ``(2, n, n)`` array (two real components).  The spectral cache
    is filled lazily and dropped whenever ``values`` is replaced through
    :meth:`with_values`.
    """

    n: int
    length: float
    values: np.ndarray
    basis: str = "cosine"
    t: float = 0.0
    step: int = 0
    _spec: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.basis not in BASES:
            raise ShapeError(f"unknown basis {self.basis!r}")
        if self.values.shape[-2:] != (self.n, self.n):
            raise ShapeError(f"values shape {self.values.shape} does not match n={self.n}")
        if self.values.ndim not in (2, 3):
            raise ShapeError("values must be (n, n) complex or (2, n, n) real")

    @property
    def components(self):
        return 1 if self.values.ndim == 2 else self.values.shape[0]

    @property
    def spacing(self):
        """Cell size; cosine nodes sit at cell centres, periodic at cell corners."""
        return self.length / self.n

    def coordinates(self):
        """1-D node coordinates in ``[0, L)``."""
        h = self.spacing
        if self.basis == "cosine":
            return (np.arange(self.n) + 0.5) * h
        return np.arange(self.n) * h

    def spectral(self):
        if self._spec is None:
            self._spec = forward(self.values, self.basis)
        return self._spec

    def with_values(self, values, t=None, step=None):
        return Field2D(self.n, self.length, values, self.basis,
                       self.t if t is None else t,
                       self.step if step is None else step)

    @classmethod
    def from_spectral(cls, coeffs, n, length, basis, real=False, t=0.0, step=0):
        vals = inverse(coeffs, basis, real=real)
        f = cls(n, length, vals, basis, t, step)
        f._spec = coeffs
        return f

    def complex_phase_field(self):
        """Complex field whose argument is the oscillation phase.

        Two-component fields use deviations from the spatial means.
        """
        if self.values.ndim == 2:
            return self.values
        u, v = self.values[0], self.values[1]
        return (u - u.mean()) + 1j * (v - v.mean())
