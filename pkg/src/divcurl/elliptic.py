"""Constant-coefficient systems of complex vector fields in normal form.

A system ``{L_1, ..., L_n}`` on ``R^N`` is stored through its coefficient
matrix ``a`` (shape ``n x m`` with ``m = N - n``)::

    L_j = d/dx_j + sum_k a[j, k] d/dx_{n+k}

Acting on a plane wave ``exp(i xi.x)`` the operator ``L_j`` multiplies by
``i * lambda_j(xi)`` where ``lambda_j(xi) = xi_j + sum_k a[j, k] xi_{n+k}``.
The adjoint ``L_j^* = -conj(L_j)`` multiplies by ``-i * conj(lambda_j(xi))``
and ``Delta_L = sum_j L_j^* L_j`` has the nonnegative symbol
``sum_j |lambda_j(xi)|^2``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize, stats
from scipy.stats import qmc

__all__ = [
    "SystemDefinitionError",
    "DimensionMismatchError",
    "EllipticConstraintError",
    "NotEllipticError",
    "EllipticSystem",
    "EllipticityCertificate",
    "new_system",
    "gradient_system",
    "symbol",
    "laplacian_symbol",
    "certify_ellipticity",
    "sphere_points",
    "system_to_dict",
    "system_from_dict",
    "load_system",
    "save_system",
    "MIN_SPHERE_RESOLUTION",
]

#: Fewest sphere samples accepted by :func:`certify_ellipticity`.
MIN_SPHERE_RESOLUTION = 16


class SystemDefinitionError(ValueError):
    """Raised for an invalid system definition."""


class DimensionMismatchError(SystemDefinitionError):
    """Coefficient matrix or frequency vector has the wrong shape."""


class EllipticConstraintError(SystemDefinitionError):
    """The count of vector fields violates ``N/2 <= n <= N``."""


class NotEllipticError(ValueError):
    """The symbol of ``Delta_L`` vanishes at a nonzero frequency."""


@dataclass(frozen=True)
class EllipticSystem:
    """System ``{L_1, ..., L_n}`` in normal form on ``R^N``.

    Build instances with :func:`new_system`; the constructor does not
    validate. ``coeffs`` is a tuple of rows so that systems are hashable.
    """

    n: int
    N: int
    coeffs: tuple[tuple[complex, ...], ...]

    @property
    def m(self) -> int:
        return self.N - self.n

    @property
    def a(self) -> np.ndarray:
        """Coefficient matrix as a read-only ``(n, m)`` complex array."""
        arr = np.array(self.coeffs, dtype=np.complex128).reshape(self.n, self.m)
        arr.setflags(write=False)
        return arr

    @property
    def symbol_matrix(self) -> np.ndarray:
        """Complex ``(n, N)`` matrix ``A`` with ``lambda(xi) = A @ xi``."""
        return np.hstack([np.eye(self.n, dtype=np.complex128), self.a])

    @property
    def coefficient_bound(self) -> float:
        """``max{1, |a_jk|}`` over all coefficients."""
        if self.m == 0:
            return 1.0
        return float(max(1.0, np.abs(self.a).max()))

    def __str__(self) -> str:
        rows = []
        for j in range(self.n):
            terms = [f"d{j + 1}"]
            for k in range(self.m):
                c = self.coeffs[j][k]
                if c != 0:
                    terms.append(f"({c:g}) d{self.n + k + 1}")
            rows.append(f"L{j + 1} = " + " + ".join(terms))
        return "; ".join(rows)


@dataclass(frozen=True)
class EllipticityCertificate:
    """Outcome of :func:`certify_ellipticity`.

    ``constant`` is the minimum of ``sum_j |lambda_j(xi)|^2`` found over the
    unit sphere; the system is declared elliptic when it exceeds ``tol``.
    """

    constant: float
    sphere_samples: int
    elliptic: bool
    witness_direction: tuple[float, ...]
    tol: float

    def to_dict(self) -> dict:
        return {
            "constant": self.constant,
            "sphere_samples": self.sphere_samples,
            "elliptic": self.elliptic,
            "witness_direction": list(self.witness_direction),
            "tol": self.tol,
        }


def new_system(n: int, N: int, coeffs=None) -> EllipticSystem:
    """Validate and build a system in normal form.

    Parameters
    ----------
    n, N : int
        Number of vector fields and ambient dimension.
    coeffs : array_like, optional
        Complex ``n x (N - n)`` matrix. May be omitted when ``n == N``.

    Raises
    ------
    SystemDefinitionError
        If ``n < 2`` or ``N < 2``.
    EllipticConstraintError
        If ``n > N`` or ``n < N/2``.
    DimensionMismatchError
        If ``coeffs`` does not have shape ``(n, N - n)``.
    """
    n, N = int(n), int(N)
    if n < 2:
        raise SystemDefinitionError(f"need at least two vector fields, got n={n}")
    if N < 2:
        raise SystemDefinitionError(f"ambient dimension must be >= 2, got N={N}")
    if n > N or 2 * n < N:
        raise EllipticConstraintError(
            f"normal form requires N/2 <= n <= N, got n={n}, N={N}"
        )
    m = N - n
    if coeffs is None:
        coeffs = np.zeros((n, m), dtype=np.complex128)
    arr = np.asarray(coeffs, dtype=np.complex128)
    if arr.size == 0 and m == 0:
        arr = arr.reshape(n, 0)
    if arr.shape != (n, m):
        raise DimensionMismatchError(
            f"coefficient matrix must have shape {(n, m)}, got {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise SystemDefinitionError("coefficients must be finite")
    rows = tuple(tuple(complex(v) for v in row) for row in arr)
    return EllipticSystem(n=n, N=N, coeffs=rows)


def gradient_system(N: int = 2) -> EllipticSystem:
    """The standard gradient ``L_j = d/dx_j`` on ``R^N``."""
    return new_system(N, N)


def symbol(sys: EllipticSystem, xi) -> np.ndarray:
    """Evaluate ``lambda(xi)``.

    ``xi`` has shape ``(N,)`` or ``(N, ...)``; the result has shape
    ``(n,)`` or ``(n, ...)`` correspondingly.
    """
    xi = np.asarray(xi, dtype=np.float64)
    if xi.ndim == 0 or xi.shape[0] != sys.N:
        raise DimensionMismatchError(
            f"frequency must have leading length N={sys.N}, got shape {xi.shape}"
        )
    lam = xi[: sys.n].astype(np.complex128)
    if sys.m:
        lam = lam + np.tensordot(sys.a, xi[sys.n :], axes=(1, 0))
    return lam


def laplacian_symbol(sys: EllipticSystem, xi) -> np.ndarray | float:
    """``sum_j |lambda_j(xi)|^2``, the symbol of ``Delta_L``."""
    lam = symbol(sys, xi)
    out = np.sum(lam.real**2 + lam.imag**2, axis=0)
    return float(out) if np.ndim(out) == 0 else out


def sphere_points(N: int, count: int) -> np.ndarray:
    """Deterministic low-discrepancy points on the unit sphere ``S^{N-1}``.

    Returns an array of shape ``(count, N)``. For ``N == 2`` the points are
    equally spaced angles on a half circle (all symbols here are even in
    ``xi`` up to modulus); otherwise unscrambled Halton points are pushed
    through the Gaussian quantile function and normalized.
    """
    if N == 2:
        theta = np.pi * np.arange(count) / count
        return np.column_stack([np.cos(theta), np.sin(theta)])
    sampler = qmc.Halton(d=N, scramble=False)
    sampler.fast_forward(1)
    u = np.clip(sampler.random(count), 1e-12, 1 - 1e-12)
    g = stats.norm.ppf(u)
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _rayleigh(sys: EllipticSystem, v: np.ndarray) -> float:
    nv = np.dot(v, v)
    if nv == 0:
        return np.inf
    return laplacian_symbol(sys, v) / nv


def certify_ellipticity(
    sys: EllipticSystem, sphere_resolution: int = 10_000, tol: float = 1e-9
) -> EllipticityCertificate:
    """Estimate ``inf_{|xi|=1} sum_j |lambda_j(xi)|^2`` and decide ellipticity.

    The sphere is sampled deterministically, then the best sample is refined
    with a local BFGS minimization of the Rayleigh quotient.
    """
    if sphere_resolution < MIN_SPHERE_RESOLUTION:
        raise ValueError(
            f"sphere_resolution must be >= {MIN_SPHERE_RESOLUTION}, "
            f"got {sphere_resolution}"
        )
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    pts = sphere_points(sys.N, sphere_resolution)
    vals = laplacian_symbol(sys, pts.T)
    best = int(np.argmin(vals))
    x0 = pts[best]
    res = optimize.minimize(
        lambda v: _rayleigh(sys, v), x0, method="BFGS", options={"gtol": 1e-13}
    )
    direction = x0
    constant = float(vals[best])
    if res.x is not None and np.all(np.isfinite(res.x)):
        refined = _rayleigh(sys, res.x)
        if refined < constant:
            constant = float(refined)
            direction = res.x / np.linalg.norm(res.x)
    constant = max(constant, 0.0)
    # fix the sign so the reported direction is reproducible
    lead = np.flatnonzero(np.abs(direction) > 1e-12)
    if lead.size and direction[lead[0]] < 0:
        direction = -direction
    return EllipticityCertificate(
        constant=constant,
        sphere_samples=sphere_resolution,
        elliptic=constant > tol,
        witness_direction=tuple(float(v) for v in direction),
        tol=tol,
    )


def system_to_dict(sys: EllipticSystem) -> dict:
    """JSON-ready dict ``{"n", "N", "coeffs": [[re, im], ...]}`` (row-major)."""
    flat = [[float(c.real), float(c.imag)] for row in sys.coeffs for c in row]
    return {"n": sys.n, "N": sys.N, "coeffs": flat}


def system_from_dict(data: dict) -> EllipticSystem:
    try:
        n, N = int(data["n"]), int(data["N"])
        flat = data.get("coeffs", [])
    except (KeyError, TypeError) as exc:
        raise SystemDefinitionError(f"malformed system definition: {exc}") from exc
    m = N - n
    if n < 2 or N < 2 or m < 0 or 2 * n < N:
        return new_system(n, N, None)  # raises the matching error
    if len(flat) != n * m:
        raise DimensionMismatchError(
            f"expected {n * m} coefficients for n={n}, N={N}, got {len(flat)}"
        )
    try:
        vals = [complex(float(re), float(im)) for re, im in flat]
    except (TypeError, ValueError) as exc:
        raise SystemDefinitionError(f"coefficients must be [re, im] pairs: {exc}") from exc
    return new_system(n, N, np.array(vals, dtype=np.complex128).reshape(n, m))


def load_system(path) -> EllipticSystem:
    with open(path) as fh:
        return system_from_dict(json.load(fh))


def save_system(sys: EllipticSystem, path) -> None:
    Path(path).write_text(json.dumps(system_to_dict(sys), indent=2) + "\n")
