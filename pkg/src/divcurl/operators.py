"""First-order calculus of a system: grad_L, div_{L*}, curl_L and pairings."""
from __future__ import annotations

from enum import Enum

import numpy as np

from .elliptic import EllipticSystem, symbol
from .grid import (
    GridMismatchError,
    MatrixField,
    ScalarField,
    VectorField,
    check_system,
    fft,
    ifft,
    symbol_on_grid,
)

__all__ = [
    "Pairing",
    "grad_L",
    "div_Lstar",
    "curl_L",
    "commutator_symbol",
    "apply_L",
    "apply_Lstar",
    "plain_gradient",
    "dot",
    "div_residual",
    "curl_residual",
]


class Pairing(str, Enum):
    """Pointwise pairing of two vector fields.

    ``SESQUILINEAR`` is ``sum_i V_i conj(W_i)``; ``BILINEAR`` is
    ``sum_i V_i W_i``.
    """

    SESQUILINEAR = "sesquilinear"
    BILINEAR = "bilinear"

    @classmethod
    def parse(cls, value) -> "Pairing":
        if isinstance(value, cls):
            return value
        aliases = {"sesq": cls.SESQUILINEAR, "bilin": cls.BILINEAR}
        try:
            return aliases.get(value) or cls(value)
        except ValueError:
            raise ValueError(f"unknown pairing convention {value!r}") from None


def _check_vector(sys: EllipticSystem, V: VectorField) -> None:
    check_system(sys, V.grid)
    if V.n_components != sys.n:
        raise GridMismatchError(
            f"expected {sys.n} components, got {V.n_components}"
        )


def _dmult(sys, grid):
    # multiplier of L_j, shape (n, *dims)
    return 1j * symbol_on_grid(sys, grid)


def grad_L(sys: EllipticSystem, u: ScalarField) -> VectorField:
    """``(L_1 u, ..., L_n u)``."""
    check_system(sys, u.grid)
    uhat = fft(u.values, u.grid)
    return VectorField(u.grid, ifft(_dmult(sys, u.grid) * uhat, u.grid))


def apply_L(sys: EllipticSystem, j: int, u: ScalarField) -> ScalarField:
    """``L_j u`` for a single index ``j`` (0-based)."""
    check_system(sys, u.grid)
    m = _dmult(sys, u.grid)[j]
    return ScalarField(u.grid, ifft(m * fft(u.values, u.grid), u.grid))


def apply_Lstar(sys: EllipticSystem, j: int, u: ScalarField) -> ScalarField:
    """``L_j^* u = -conj(L_j) u`` for a single index ``j`` (0-based)."""
    check_system(sys, u.grid)
    m = np.conj(_dmult(sys, u.grid)[j])
    return ScalarField(u.grid, ifft(m * fft(u.values, u.grid), u.grid))


def div_Lstar(sys: EllipticSystem, V: VectorField) -> ScalarField:
    """``sum_j L_j^* V_j``.

    ``L_j^*`` acts as the multiplier ``-i conj(lambda_j(xi))``, which is the
    complex conjugate of the multiplier ``i lambda_j(xi)`` of ``L_j``.
    """
    _check_vector(sys, V)
    mult = np.conj(_dmult(sys, V.grid))
    vhat = fft(V.components, V.grid)
    return ScalarField(V.grid, ifft(np.sum(mult * vhat, axis=0), V.grid))


def _derivative_table(sys, W: VectorField) -> np.ndarray:
    # D[i, j] = L_i W_j
    what = fft(W.components, W.grid)
    m = _dmult(sys, W.grid)
    return ifft(m[:, None] * what[None, :], W.grid)


def curl_L(sys: EllipticSystem, W: VectorField) -> MatrixField:
    """``(L_i W_j - L_j W_i)_{ij}``; antisymmetric by construction."""
    _check_vector(sys, W)
    D = _derivative_table(sys, W)
    return MatrixField(W.grid, D - np.swapaxes(D, 0, 1), antisymmetric=True)


def commutator_symbol(sys: EllipticSystem, i: int, j: int):
    """Multiplier of ``[L_i, L_j] = L_i L_j - L_j L_i`` (0-based indices).

    Returns a callable of the frequency meshes. For constant coefficients it
    vanishes identically.
    """
    if not (0 <= i < sys.n and 0 <= j < sys.n):
        raise IndexError(f"indices must lie in [0, {sys.n}), got ({i}, {j})")

    def mult(*xi):
        xi = np.stack(np.broadcast_arrays(*xi))
        lam = symbol(sys, xi)
        li, lj = 1j * lam[i], 1j * lam[j]
        return li * lj - lj * li

    return mult


def plain_gradient(u: ScalarField) -> VectorField:
    """The ordinary gradient ``(d_1 u, ..., d_N u)``."""
    grid = u.grid
    uhat = fft(u.values, grid)
    comps = [ifft(1j * xi * uhat, grid) for xi in grid.frequencies]
    return VectorField(grid, np.stack(comps))


def dot(V: VectorField, W: VectorField, conv=Pairing.SESQUILINEAR) -> ScalarField:
    """Pointwise pairing ``V . W`` under the given convention."""
    conv = Pairing.parse(conv)
    if V.grid != W.grid:
        raise GridMismatchError("fields live on different grids")
    if V.n_components != W.n_components:
        raise GridMismatchError(
            f"component counts differ: {V.n_components} vs {W.n_components}"
        )
    w = np.conj(W.components) if conv is Pairing.SESQUILINEAR else W.components
    return ScalarField(V.grid, np.sum(V.components * w, axis=0))


def _l2(a: np.ndarray) -> float:
    return float(np.sqrt(np.sum(a.real**2 + a.imag**2)))


def div_residual(sys: EllipticSystem, V: VectorField) -> float:
    """``||div_{L*} V||_2 / sum_j ||L_j^* V_j||_2``; zero for ``V = 0``.

    Measures how well the individual terms cancel, independent of the
    overall size and frequency content of ``V``.
    """
    _check_vector(sys, V)
    mult = np.conj(_dmult(sys, V.grid))
    terms = ifft(mult * fft(V.components, V.grid), V.grid)
    scale = sum(_l2(t) for t in terms)
    if scale == 0:
        return 0.0
    return _l2(np.sum(terms, axis=0)) / scale


def curl_residual(sys: EllipticSystem, W: VectorField) -> float:
    """``||curl_L W||_2 / sum_{i != j} ||L_i W_j||_2``; zero for ``W = 0``."""
    _check_vector(sys, W)
    D = _derivative_table(sys, W)
    n = sys.n
    scale = sum(_l2(D[i, j]) for i in range(n) for j in range(n) if i != j)
    if scale == 0:
        return 0.0
    return _l2(D - np.swapaxes(D, 0, 1)) / scale
