"""Splitting a vector field into a div_{L*}-free part and an exact part."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .elliptic import EllipticSystem
from .grid import ScalarField, VectorField, inverse_laplacian
from .operators import _check_vector, div_Lstar, grad_L

__all__ = ["HodgeResult", "hodge_decompose"]


@dataclass(frozen=True)
class HodgeResult:
    """Output of :func:`hodge_decompose`.

    ``V1`` is div_{L*}-free, ``V2 = grad_L(phi2)`` and ``V1 + V2 = V``.
    ``residual_div`` is ``||div_{L*} V1||_2 / ||V||_2`` and ``norm_ratios``
    maps each requested ``p`` to ``(||V1||_p / ||V||_p, ||V2||_p / ||V||_p)``.
    """

    V1: VectorField
    V2: VectorField
    phi2: ScalarField
    residual_div: float
    norm_ratios: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "residual_div": self.residual_div,
            "norm_ratios": {
                f"{p:g}": {"V1": r1, "V2": r2}
                for p, (r1, r2) in sorted(self.norm_ratios.items())
            },
        }


def _l2(a: np.ndarray) -> float:
    return float(np.sqrt(np.sum(a.real**2 + a.imag**2)))


def hodge_decompose(sys: EllipticSystem, V: VectorField, p_list=()) -> HodgeResult:
    """Decompose ``V = V1 + V2`` with ``div_{L*} V1 = 0`` and ``V2 = grad_L phi2``.

    ``phi2 = Delta_L^{-1} div_{L*} V`` with the zero mode projected out; the
    mean of ``div_{L*} V`` vanishes on the torus anyway.

    Raises
    ------
    NotEllipticError
        If ``Delta_L`` cannot be inverted on this grid.
    """
    from .norms import lp_norm

    _check_vector(sys, V)
    phi2 = inverse_laplacian(sys, div_Lstar(sys, V))
    V2 = grad_L(sys, phi2)
    V1 = V - V2
    scale = _l2(V.components)
    res = 0.0 if scale == 0 else _l2(div_Lstar(sys, V1).values) / scale
    ratios = {}
    for p in p_list:
        p = float(p)
        nv = lp_norm(V, p)
        if nv == 0:
            ratios[p] = (0.0, 0.0)
        else:
            ratios[p] = (lp_norm(V1, p) / nv, lp_norm(V2, p) / nv)
    return HodgeResult(V1=V1, V2=V2, phi2=phi2, residual_div=res, norm_ratios=ratios)
