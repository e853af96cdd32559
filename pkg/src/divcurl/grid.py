"""Periodic sampling of fields on an N-dimensional box and spectral calculus.

``R^N`` is modelled by the flat torus ``prod_a [-L_a/2, L_a/2)`` sampled at
``x_a = -L_a/2 + m * L_a / n_a``. The box is centred on the origin, so the
origin is always a grid point (dims are even) and compactly supported test
objects centred there never wrap.

Coefficients are indexed by integer frequency vectors ``k`` in
``numpy.fft.fftfreq`` order; the physical frequency is ``xi = 2 pi k / L``.
Every linear operator in this package is a Fourier multiplier evaluated at
these frequencies, so compositions of multipliers are exact up to roundoff.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Union

import numpy as np

from .elliptic import EllipticSystem, NotEllipticError, laplacian_symbol, symbol

__all__ = [
    "GridSpec",
    "GridError",
    "GridMismatchError",
    "ScalarField",
    "VectorField",
    "MatrixField",
    "make_grid",
    "forward_transform",
    "inverse_transform",
    "apply_multiplier",
    "inverse_laplacian",
    "integrate",
    "mean",
    "DEFAULT_MAX_POINTS",
]

#: Largest number of grid points accepted by :func:`make_grid`.
DEFAULT_MAX_POINTS = 2**24


class GridError(ValueError):
    """Invalid grid description."""


class GridMismatchError(ValueError):
    """Fields or systems live on incompatible grids."""


@dataclass(frozen=True)
class GridSpec:
    N: int
    dims: tuple[int, ...]
    box: tuple[float, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.box, self.dims))

    @property
    def volume(self) -> float:
        return float(np.prod(self.box))

    @property
    def cell_volume(self) -> float:
        return self.volume / self.size

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        """1-D coordinate arrays, one per axis."""
        out = []
        for L, n in zip(self.box, self.dims):
            x = -L / 2 + np.arange(n) * (L / n)
            x.setflags(write=False)
            out.append(x)
        return tuple(out)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Sparse (broadcastable) coordinate meshes."""
        return tuple(np.meshgrid(*self.axes, indexing="ij", sparse=True))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Integer frequencies per axis in FFT order."""
        out = []
        for n in self.dims:
            k = np.fft.fftfreq(n, d=1.0 / n)
            k.setflags(write=False)
            out.append(k)
        return tuple(out)

    @cached_property
    def frequencies(self) -> tuple[np.ndarray, ...]:
        """Sparse meshes of physical frequencies ``2 pi k / L``."""
        per_axis = [2 * np.pi * k / L for k, L in zip(self.wavenumbers, self.box)]
        return tuple(np.meshgrid(*per_axis, indexing="ij", sparse=True))

    def dense_frequencies(self) -> np.ndarray:
        """Physical frequencies as a dense ``(N, *dims)`` array."""
        return np.stack(np.broadcast_arrays(*self.frequencies))

    def radius(self, center=None) -> np.ndarray:
        """Euclidean distance from ``center`` (no wrapping), shape ``dims``."""
        center = np.zeros(self.N) if center is None else np.asarray(center, float)
        r2 = sum((x - c) ** 2 for x, c in zip(self.coords, center))
        return np.sqrt(np.broadcast_to(r2, self.dims))

    def index_of(self, point) -> tuple[int, ...]:
        """Index of the grid point nearest to ``point``."""
        idx = []
        for x0, L, n in zip(point, self.box, self.dims):
            idx.append(int(round((x0 + L / 2) / (L / n))) % n)
        return tuple(idx)

    def to_dict(self) -> dict:
        return {"N": self.N, "dims": list(self.dims), "box": list(self.box)}


def make_grid(N: int, dims, box, max_points: int | None = None) -> GridSpec:
    """Validate and build a :class:`GridSpec`.

    Every axis needs at least 4 samples and an even count (so the origin is a
    grid point); every box length must be positive.
    """
    N = int(N)
    dims = tuple(int(d) for d in np.atleast_1d(dims))
    box = tuple(float(b) for b in np.atleast_1d(box))
    if N < 1:
        raise GridError(f"dimension must be positive, got {N}")
    if len(dims) != N or len(box) != N:
        raise GridError(f"need {N} dims and {N} box lengths, got {len(dims)} and {len(box)}")
    for a, d in enumerate(dims):
        if d < 4:
            raise GridError(f"dims[{a}] = {d} < 4")
        if d % 2:
            raise GridError(f"dims[{a}] = {d} must be even")
    for a, b in enumerate(box):
        if not (b > 0 and np.isfinite(b)):
            raise GridError(f"box[{a}] = {b} must be positive")
    cap = DEFAULT_MAX_POINTS if max_points is None else int(max_points)
    total = int(np.prod(dims))
    if total > cap:
        raise GridError(f"{total} grid points exceed the cap of {cap}")
    return GridSpec(N=N, dims=dims, box=box)


def _spatial_axes(grid: GridSpec) -> tuple[int, ...]:
    return tuple(range(-grid.N, 0))


def fft(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.fft.fftn(values, axes=_spatial_axes(grid))


def ifft(coeffs: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.fft.ifftn(coeffs, axes=_spatial_axes(grid))


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.complex128, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Complex samples of a scalar function on a grid."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = _readonly(np.broadcast_to(self.values, self.grid.dims))
        object.__setattr__(self, "values", vals)

    def conj(self) -> "ScalarField":
        return ScalarField(self.grid, np.conj(self.values))

    def _other(self, other):
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise GridMismatchError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, self._other(other) - self.values)

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ScalarField(self.grid, self.values / self._other(other))


@dataclass(frozen=True, eq=False)
class VectorField:
    """``n`` scalar components sharing one grid; ``components`` is ``(n, *dims)``."""

    grid: GridSpec
    components: np.ndarray = field(repr=False)

    def __post_init__(self):
        comps = np.asarray(self.components)
        if comps.ndim != self.grid.N + 1 or comps.shape[1:] != self.grid.dims:
            raise GridMismatchError(
                f"components must have shape (n, *{self.grid.dims}), got {comps.shape}"
            )
        object.__setattr__(self, "components", _readonly(comps))

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    def component(self, j: int) -> ScalarField:
        return ScalarField(self.grid, self.components[j])

    @classmethod
    def stack(cls, fields) -> "VectorField":
        fields = list(fields)
        grid = fields[0].grid
        if any(f.grid != grid for f in fields):
            raise GridMismatchError("components live on different grids")
        return cls(grid, np.stack([f.values for f in fields]))

    @classmethod
    def basis(cls, f: ScalarField, j: int, n: int) -> "VectorField":
        """The field ``f e_j`` with ``n`` components."""
        comps = np.zeros((n, *f.grid.dims), dtype=np.complex128)
        comps[j] = f.values
        return cls(f.grid, comps)

    def modulus(self) -> np.ndarray:
        """Pointwise Euclidean length of the component vector."""
        c = self.components
        return np.sqrt(np.sum(c.real**2 + c.imag**2, axis=0))

    def _other(self, other):
        if isinstance(other, VectorField):
            if other.grid != self.grid or other.n_components != self.n_components:
                raise GridMismatchError("vector fields have different shapes")
            return other.components
        return other

    def __add__(self, other):
        return VectorField(self.grid, self.components + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return VectorField(self.grid, self.components - self._other(other))

    def __neg__(self):
        return VectorField(self.grid, -self.components)

    def __mul__(self, scalar):
        if isinstance(scalar, ScalarField):
            return VectorField(self.grid, self.components * scalar.values)
        return VectorField(self.grid, self.components * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return VectorField(self.grid, self.components / scalar)


@dataclass(frozen=True, eq=False)
class MatrixField:
    """``n x n`` matrix of scalar fields; ``entries`` is ``(n, n, *dims)``."""

    grid: GridSpec
    entries: np.ndarray = field(repr=False)
    antisymmetric: bool = False

    def __post_init__(self):
        ent = np.asarray(self.entries)
        if ent.ndim != self.grid.N + 2 or ent.shape[2:] != self.grid.dims:
            raise GridMismatchError(
                f"entries must have shape (n, n, *{self.grid.dims}), got {ent.shape}"
            )
        if ent.shape[0] != ent.shape[1]:
            raise GridMismatchError("matrix field must be square")
        object.__setattr__(self, "entries", _readonly(ent))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def entry(self, i: int, j: int) -> ScalarField:
        return ScalarField(self.grid, self.entries[i, j])

    def modulus(self) -> np.ndarray:
        """Pointwise Frobenius norm."""
        e = self.entries
        return np.sqrt(np.sum(e.real**2 + e.imag**2, axis=(0, 1)))


AnyField = Union[ScalarField, VectorField, MatrixField]


def field_values(f: AnyField) -> np.ndarray:
    if isinstance(f, ScalarField):
        return f.values
    if isinstance(f, VectorField):
        return f.components
    return f.entries


def field_modulus(f: AnyField) -> np.ndarray:
    if isinstance(f, ScalarField):
        return np.abs(f.values)
    return f.modulus()


def forward_transform(f: ScalarField) -> np.ndarray:
    """Fourier coefficients ``c_k`` with ``f(x_m) = sum_k c_k exp(2 pi i k.m / n)``.

    Phases are relative to the first grid point ``x_0 = -L/2``; a constant
    field has the single coefficient ``c_0`` equal to that constant.
    """
    return fft(f.values, f.grid) / f.grid.size


def inverse_transform(coeffs: np.ndarray, grid: GridSpec) -> ScalarField:
    """Exact inverse of :func:`forward_transform`."""
    coeffs = np.asarray(coeffs)
    if coeffs.shape != grid.dims:
        raise GridMismatchError(f"coefficients must have shape {grid.dims}")
    return ScalarField(grid, ifft(coeffs * grid.size, grid))


Multiplier = Union[Callable[..., np.ndarray], np.ndarray]


def evaluate_multiplier(mult: Multiplier, grid: GridSpec) -> np.ndarray:
    """Sample a multiplier at the grid frequencies.

    ``mult`` is either an array broadcastable to ``dims`` or a callable that
    receives the ``N`` sparse frequency meshes as positional arguments.
    """
    if callable(mult):
        vals = mult(*grid.frequencies)
    else:
        vals = mult
    vals = np.broadcast_to(np.asarray(vals, dtype=np.complex128), grid.dims)
    if not np.all(np.isfinite(vals)):
        raise ValueError("multiplier is not finite at every grid frequency")
    return vals


def apply_multiplier(f, mult: Multiplier):
    """Multiply the Fourier coefficients of ``f`` by ``mult(xi)``.

    Works on scalar and vector fields (componentwise).
    """
    m = evaluate_multiplier(mult, f.grid)
    if isinstance(f, ScalarField):
        return ScalarField(f.grid, ifft(m * fft(f.values, f.grid), f.grid))
    if isinstance(f, VectorField):
        return VectorField(f.grid, ifft(m * fft(f.components, f.grid), f.grid))
    raise TypeError(f"cannot apply a multiplier to {type(f).__name__}")


def check_system(sys: EllipticSystem, grid: GridSpec) -> None:
    if sys.N != grid.N:
        raise GridMismatchError(f"system lives on R^{sys.N}, grid on R^{grid.N}")


@lru_cache(maxsize=32)
def symbol_on_grid(sys: EllipticSystem, grid: GridSpec) -> np.ndarray:
    """``lambda_j`` at every grid frequency, shape ``(n, *dims)``, read-only."""
    check_system(sys, grid)
    lam = symbol(sys, grid.dense_frequencies())
    lam.setflags(write=False)
    return lam


@lru_cache(maxsize=32)
def laplacian_on_grid(sys: EllipticSystem, grid: GridSpec) -> np.ndarray:
    check_system(sys, grid)
    s = np.asarray(laplacian_symbol(sys, grid.dense_frequencies()), dtype=np.float64)
    s.setflags(write=False)
    return s


def inverse_laplacian(sys: EllipticSystem, f: ScalarField) -> ScalarField:
    """Solve ``Delta_L u = f - mean(f)`` with ``mean(u) = 0``.

    Periodic stand-in for convolution with the fundamental solution: the
    coefficients are divided by ``sum_j |lambda_j(xi)|^2`` and the zero mode
    is dropped.

    Raises
    ------
    NotEllipticError
        If the symbol vanishes at a nonzero grid frequency.
    """
    s = laplacian_on_grid(sys, f.grid)
    zero = (0,) * f.grid.N
    nonzero = np.ones(f.grid.dims, dtype=bool)
    nonzero[zero] = False
    smax = s.max()
    if smax == 0 or s[nonzero].min() <= 1e-14 * smax:
        raise NotEllipticError(
            "Delta_L symbol vanishes at a nonzero frequency of this grid"
        )
    coeffs = fft(f.values, f.grid)
    denom = np.where(nonzero, s, 1.0)
    coeffs = np.where(nonzero, coeffs / denom, 0.0)
    return ScalarField(f.grid, ifft(coeffs, f.grid))


def mean(f: ScalarField) -> complex:
    return complex(np.mean(f.values))


def integrate(f: ScalarField) -> complex:
    """Box integral, computed as mean times volume."""
    if not isinstance(f, ScalarField):
        raise TypeError("integrate expects a ScalarField")
    return complex(np.mean(f.values) * f.grid.volume)
