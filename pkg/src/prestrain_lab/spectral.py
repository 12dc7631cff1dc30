"""Fourier representation of periodic fields on a cubic box [0, L)^3.

Scalar, vector, and matrix fields are stored as half-complex spectra in
the analysis normalization

    f(x) = sum_k  fhat(k) exp(i k . x),      fhat = rfftn(f) / n^3,

so the zero mode is the spatial mean and Parseval reads
int |f|^2 dx = L^3 * sum_k |fhat(k)|^2 (the sum running over the full
spectrum; the half storage carries a multiplicity-2 weight away from the
self-conjugate planes).  Differentiation is exact per mode, products are
formed on the collocation grid and projected back onto the dealias band
(the classical 2/3 rule by default).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as _fft

from .errors import GridMismatchError, NonZeroMeanError
from .threads import fft_workers

__all__ = [
    "Grid",
    "ScalarField",
    "VectorField",
    "MatrixField",
    "gradient",
    "divergence_rowwise",
    "inverse_laplacian",
    "sobolev_norm",
    "truncate_modes",
    "pointwise_map",
    "field_from_bytes",
    "field_from_values",
]

_MAGIC = b"PSF1"
_HEADER = struct.Struct("<4sIdI")


@dataclass(frozen=True)
class Grid:
    """Collocation grid and spectral bookkeeping for one box.

    Parameters
    ----------
    n : int
        Points per dimension (even, >= 4).
    period : float
        Box edge length L.
    dealias_fraction : float
        Fraction of the Nyquist index retained by :meth:`dealias`;
        the retained band is max-norm index <= floor(fraction * n/2).

    Derived arrays (wavevectors, masks, Parseval weights) are computed
    once in ``__post_init__`` and shared by every field on the grid.
    """

    n: int
    period: float = 2.0 * math.pi
    dealias_fraction: float = 2.0 / 3.0

    kvec: np.ndarray = field(init=False, repr=False, compare=False)
    k2: np.ndarray = field(init=False, repr=False, compare=False)
    mode_max_index: np.ndarray = field(init=False, repr=False, compare=False)
    dealias_mask: np.ndarray = field(init=False, repr=False, compare=False)
    parseval_weight: np.ndarray = field(init=False, repr=False, compare=False)
    kmax_retained: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 4 or self.n % 2 != 0:
            raise ValueError(f"grid size must be even and >= 4, got {self.n}")
        if not self.period > 0.0:
            raise ValueError(f"period must be positive, got {self.period}")
        if not 0.0 < self.dealias_fraction <= 1.0:
            raise ValueError(
                f"dealias_fraction must lie in (0, 1], got {self.dealias_fraction}"
            )
        kmax = int(math.floor(self.dealias_fraction * self.n / 2.0))
        if kmax < 1:
            raise ValueError(
                f"dealias_fraction {self.dealias_fraction} retains no modes on n={self.n}"
            )

        n = self.n
        nh = n // 2 + 1
        scale = 2.0 * math.pi / self.period
        m_full = np.fft.fftfreq(n, d=1.0 / n)  # integer mode indices
        m_half = np.arange(nh, dtype=float)
        mx = m_full[:, None, None]
        my = m_full[None, :, None]
        mz = m_half[None, None, :]

        kvec = np.stack(
            [
                np.broadcast_to(mx * scale, (n, n, nh)),
                np.broadcast_to(my * scale, (n, n, nh)),
                np.broadcast_to(mz * scale, (n, n, nh)),
            ]
        ).copy()
        k2 = kvec[0] ** 2 + kvec[1] ** 2 + kvec[2] ** 2
        mode_max = np.maximum(
            np.maximum(np.abs(mx), np.abs(my)), np.abs(mz)
        ).astype(np.int64)
        mode_max = np.broadcast_to(mode_max, (n, n, nh)).copy()

        # multiplicity of each stored mode in the full spectrum
        w = np.where((m_half == 0) | (m_half == n // 2), 1.0, 2.0)
        parseval = np.broadcast_to(w[None, None, :], (n, n, nh)).copy()

        object.__setattr__(self, "kvec", kvec)
        object.__setattr__(self, "k2", k2)
        object.__setattr__(self, "mode_max_index", mode_max)
        object.__setattr__(self, "kmax_retained", kmax)
        object.__setattr__(self, "dealias_mask", mode_max <= kmax)
        object.__setattr__(self, "parseval_weight", parseval)

    # -- basic geometry -------------------------------------------------

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def spectral_shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n // 2 + 1)

    @property
    def dx(self) -> float:
        return self.period / self.n

    @property
    def volume(self) -> float:
        return self.period**3

    def coordinates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Meshgrid of node coordinates, indexing='ij'."""
        x = self.period * np.arange(self.n) / self.n
        return np.meshgrid(x, x, x, indexing="ij")

    # -- transforms ------------------------------------------------------

    def to_spectral(self, values: np.ndarray) -> np.ndarray:
        return _fft.rfftn(values, axes=(-3, -2, -1), workers=fft_workers()) / self.n**3

    def to_physical(self, coeffs: np.ndarray) -> np.ndarray:
        return self.n**3 * _fft.irfftn(
            coeffs, s=self.shape, axes=(-3, -2, -1), workers=fft_workers()
        )

    def integrate(self, values: np.ndarray) -> float:
        """Exact quadrature of trigonometric polynomials below the Nyquist band."""
        return float(self.volume * np.mean(values, axis=(-3, -2, -1)))

    def mode_mask(self, max_index: int) -> np.ndarray:
        return self.mode_max_index <= max_index


def _wrap(grid: Grid, coeffs: np.ndarray):
    if coeffs.shape[-3:] != grid.spectral_shape:
        raise ValueError(f"coefficient shape {coeffs.shape} does not match grid")
    lead = coeffs.shape[:-3]
    if lead == ():
        return ScalarField(grid, coeffs)
    if lead == (3,):
        return VectorField(grid, coeffs)
    if lead == (3, 3):
        return MatrixField(grid, coeffs)
    raise ValueError(f"unsupported component shape {lead}")


class _Field:
    """Shared behaviour of scalar/vector/matrix spectral fields.

    Immutable value objects: arithmetic returns new fields.  The
    component axes (none, (3,), (3,3)) lead; the three spectral axes
    trail.
    """

    comp_shape: tuple[int, ...] = ()

    def __init__(self, grid: Grid, coeffs: np.ndarray):
        expected = self.comp_shape + grid.spectral_shape
        if coeffs.shape != expected:
            raise ValueError(f"expected coefficients {expected}, got {coeffs.shape}")
        self.grid = grid
        self.coeffs = np.asarray(coeffs, dtype=np.complex128)

    # -- constructors ----------------------------------------------------

    @classmethod
    def from_values(cls, grid: Grid, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != cls.comp_shape + grid.shape:
            raise ValueError(
                f"expected values of shape {cls.comp_shape + grid.shape}, got {values.shape}"
            )
        return cls(grid, grid.to_spectral(values))

    @classmethod
    def zeros(cls, grid: Grid):
        return cls(grid, np.zeros(cls.comp_shape + grid.spectral_shape, np.complex128))

    # -- basic queries ----------------------------------------------------

    @property
    def ncomp(self) -> int:
        return int(np.prod(self.comp_shape)) if self.comp_shape else 1

    def values(self) -> np.ndarray:
        return self.grid.to_physical(self.coeffs)

    def mean(self):
        m = self.coeffs[..., 0, 0, 0].real
        return float(m) if self.comp_shape == () else m.copy()

    def check_real(self, tol: float = 1e-12) -> bool:
        """True when the stored spectrum is that of a real field.

        The half-complex layout enforces most of the conjugate symmetry
        structurally; the self-conjugate planes are verified by a
        transform round trip.
        """
        back = self.grid.to_spectral(self.values())
        ref = np.sqrt(np.sum(np.abs(self.coeffs) ** 2))
        return float(np.sqrt(np.sum(np.abs(back - self.coeffs) ** 2))) <= tol * max(ref, 1.0)

    # -- algebra -----------------------------------------------------------

    def _require_same_grid(self, other):
        if other.grid is not self.grid and other.grid != self.grid:
            raise GridMismatchError(
                f"grids differ: n={self.grid.n},L={self.grid.period} vs "
                f"n={other.grid.n},L={other.grid.period}"
            )
        if type(other) is not type(self):
            raise GridMismatchError(
                f"field kinds differ: {type(self).__name__} vs {type(other).__name__}"
            )

    def __add__(self, other):
        self._require_same_grid(other)
        return type(self)(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._require_same_grid(other)
        return type(self)(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float):
        return type(self)(self.grid, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return type(self)(self.grid, -self.coeffs)

    # -- norms --------------------------------------------------------------

    def sobolev_norm(self, k: int) -> float:
        return sobolev_norm(self, k)

    def l2_norm(self) -> float:
        return sobolev_norm(self, 0)

    # -- band operations ------------------------------------------------------

    def dealiased(self):
        return type(self)(self.grid, self.coeffs * self.grid.dealias_mask)

    def truncated(self, max_index: int):
        return truncate_modes(self, max_index)

    # -- serialization -----------------------------------------------------------

    def to_bytes(self) -> bytes:
        """Binary blob: little-endian header (n, L, ncomp) + complex coefficients."""
        header = _HEADER.pack(_MAGIC, self.grid.n, self.grid.period, self.ncomp)
        payload = np.ascontiguousarray(self.coeffs).astype("<c16").tobytes()
        return header + payload

    def norms_json(self, orders: tuple[int, ...] = (0, 1, 2, 3, 4)) -> str:
        summary = {
            "kind": type(self).__name__,
            "n": self.grid.n,
            "period": self.grid.period,
            "norms": {f"H{k}": self.sobolev_norm(k) for k in orders},
        }
        return json.dumps(summary, sort_keys=True)


class ScalarField(_Field):
    comp_shape = ()


class VectorField(_Field):
    comp_shape = (3,)

    def component(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.coeffs[i].copy())


class MatrixField(_Field):
    comp_shape = (3, 3)

    def entry(self, i: int, j: int) -> ScalarField:
        return ScalarField(self.grid, self.coeffs[i, j].copy())


def field_from_values(grid: Grid, values: np.ndarray):
    """Build the field kind matching ``values``'s component shape."""
    values = np.asarray(values, dtype=np.float64)
    lead = values.shape[:-3]
    for cls in (ScalarField, VectorField, MatrixField):
        if lead == cls.comp_shape:
            return cls.from_values(grid, values)
    raise ValueError(f"unsupported component shape {lead}")


def field_from_bytes(data: bytes, grid: Grid | None = None, dealias_fraction: float = 2.0 / 3.0):
    """Inverse of ``Field.to_bytes``.

    A grid may be supplied to share cached wavevector tables; it must
    agree with the header.  Otherwise one is constructed with the given
    dealias fraction.
    """
    magic, n, period, ncomp = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if grid is None:
        grid = Grid(n=n, period=period, dealias_fraction=dealias_fraction)
    elif grid.n != n or grid.period != period:
        raise GridMismatchError(
            f"blob has n={n}, L={period}; grid has n={grid.n}, L={grid.period}"
        )
    cls = {1: ScalarField, 3: VectorField, 9: MatrixField}.get(ncomp)
    if cls is None:
        raise ValueError(f"unsupported component count {ncomp}")
    shape = cls.comp_shape + grid.spectral_shape
    payload = np.frombuffer(data, dtype="<c16", offset=_HEADER.size)
    if payload.size != int(np.prod(shape)):
        raise ValueError("payload size does not match header")
    return cls(grid, payload.reshape(shape).astype(np.complex128))


# ---------------------------------------------------------------------------
# spectral calculus
# ---------------------------------------------------------------------------


def gradient(f: ScalarField | VectorField):
    """Exact spectral gradient.

    For a scalar the result is the vector (d_1 f, d_2 f, d_3 f); for a
    vector u the result is the matrix with row i equal to grad(u_i),
    i.e. entry (i, j) = d_j u_i.
    """
    g = f.grid
    ik = 1j * g.kvec
    if isinstance(f, ScalarField):
        return VectorField(g, ik * f.coeffs[None])
    if isinstance(f, VectorField):
        return MatrixField(g, ik[None, :] * f.coeffs[:, None])
    raise TypeError(f"gradient of {type(f).__name__} is not defined")


def divergence_rowwise(m: MatrixField) -> VectorField:
    """Row-wise divergence: component i is sum_j d_j M_ij.

    Adjoint (up to sign) of the vector gradient, so single-mode
    identities div(grad u) = Laplacian u hold exactly per mode.
    """
    g = m.grid
    ik = 1j * g.kvec
    return VectorField(g, np.einsum("jxyz,ijxyz->ixyz", ik, m.coeffs))


def inverse_laplacian(f: ScalarField, mean_tol: float = 1e-12) -> ScalarField:
    """Solve -Laplacian(psi) = f on mean-zero data; psi is mean-zero.

    Raises NonZeroMeanError when |mean(f)| exceeds mean_tol * max(1, ||f||_L2):
    the zero mode is not invertible on the torus.
    """
    g = f.grid
    mean = float(f.coeffs[0, 0, 0].real)
    scale = max(1.0, f.l2_norm())
    if abs(mean) > mean_tol * scale:
        raise NonZeroMeanError(mean, mean_tol * scale)
    k2 = g.k2.copy()
    k2[0, 0, 0] = 1.0
    out = f.coeffs / k2
    out[0, 0, 0] = 0.0
    return ScalarField(g, out)


def sobolev_norm(f: _Field, k: int) -> float:
    """H^k norm via Fourier weights (1 + |kappa|^2)^k, all components summed.

    Matches the physical L^2 integral over the box: for k = 0 this is
    sqrt(int |f|^2 dx).
    """
    if k < 0:
        raise ValueError(f"norm order must be >= 0, got {k}")
    g = f.grid
    weight = (1.0 + g.k2) ** k * g.parseval_weight
    total = np.sum(weight * np.abs(f.coeffs) ** 2, axis=(-3, -2, -1))
    return float(np.sqrt(g.volume * np.sum(total)))


def truncate_modes(f: _Field, max_index: int):
    """Zero every mode with max-norm integer index above ``max_index``."""
    g = f.grid
    if not 1 <= max_index <= g.n // 2:
        raise ValueError(f"max_index must lie in [1, {g.n // 2}], got {max_index}")
    return type(f)(g, f.coeffs * g.mode_mask(max_index))


def pointwise_map(fn, *fields: _Field):
    """Apply ``fn`` to collocation values and project back onto the dealias band.

    ``fn`` receives one physical array per input field (component axes
    leading) and must return an array shaped like a scalar, vector, or
    matrix field's values; the output kind is inferred from that shape.
    """
    if not fields:
        raise ValueError("pointwise_map needs at least one field")
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid is not g and f.grid != g:
            raise GridMismatchError("pointwise_map inputs live on different grids")
    result = np.asarray(fn(*[f.values() for f in fields]), dtype=np.float64)
    if result.shape[-3:] != g.shape:
        raise ValueError(f"fn returned shape {result.shape}, expected trailing {g.shape}")
    out = _wrap(g, g.to_spectral(result))
    return out.dealiased()
