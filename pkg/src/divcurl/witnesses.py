"""Explicit (V, W) witness pairs with machine-checked certificates.

All constructions follow the same pattern: a smooth cutoff ``eta`` equal to 1
on a ball ``B`` and vanishing outside ``2B``, a coordinate factor multiplied
by that cutoff, and a test function ``u`` or ``phi`` supported in ``B``.
Every pair carries a :class:`Certificate` listing each defining property as
``value <= bound``; :func:`verify` recomputes the certificate from scratch.

The cutoff profile is ``1 - ramp(|x - c| / r - 1)`` with the erf-log ramp
``ramp(t) = (1 + erf(a (t - 1/2) / sqrt(t (1 - t)))) / 2`` on ``(0, 1)``.
It is C-infinity, flat at both ends, and its spectral derivatives converge
fast enough for the product identities to hold to ~1e-12 at 64 cells per
unit radius.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import optimize
from scipy.special import erf

from .elliptic import EllipticSystem, sphere_points, symbol
from .grid import GridSpec, ScalarField, VectorField, check_system, fft
from .norms import BallSpec, lp_norm, lp_norm_refined, unit_ball_volume
from .operators import (
    Pairing,
    curl_L,
    curl_residual,
    div_Lstar,
    div_residual,
    dot,
    grad_L,
    plain_gradient,
)

__all__ = [
    "RAMP_SHARPNESS",
    "VANISH_TOL",
    "BUDGET_TOL",
    "PRODUCT_TOL",
    "FACTOR_TOL",
    "SUPPORT_TOL",
    "DRIFT_TOL",
    "ramp",
    "ramp_derivative",
    "ramp_derivative_max",
    "symbol_l1_max",
    "CutoffSpec",
    "make_cutoff",
    "bump_field",
    "gradient_norm",
    "normalized_bump",
    "CertificateEntry",
    "Certificate",
    "WitnessPair",
    "WitnessError",
    "witness_small_p",
    "witness_large_p",
    "witness_unit_ball",
    "factorize_phi",
    "scale_into_family",
    "rescale_to_ball",
    "resample",
    "verify",
]

RAMP_SHARPNESS = 4.0
VANISH_TOL = 1e-9
BUDGET_TOL = 1e-6
PRODUCT_TOL = 1e-8
FACTOR_TOL = 1e-9
SUPPORT_TOL = 1e-6
DRIFT_TOL = 1e-8


class WitnessError(ValueError):
    """Invalid input to a witness construction."""


# ---------------------------------------------------------------- cutoffs


def ramp(t, a: float = RAMP_SHARPNESS) -> np.ndarray:
    """Smooth monotone step: 0 for ``t <= 0``, 1 for ``t >= 1``."""
    t = np.asarray(t, dtype=np.float64)
    out = np.where(t >= 1, 1.0, 0.0)
    mid = (t > 0) & (t < 1)
    tm = t[mid]
    out[mid] = 0.5 * (1 + erf(a * (tm - 0.5) / np.sqrt(tm * (1 - tm))))
    return out


def ramp_derivative(t, a: float = RAMP_SHARPNESS) -> np.ndarray:
    """``d ramp / dt = a exp(-z^2) / (4 sqrt(pi) (t (1 - t))^{3/2})``."""
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    mid = (t > 0) & (t < 1)
    tm = t[mid]
    s = tm * (1 - tm)
    z = a * (tm - 0.5) / np.sqrt(s)
    out[mid] = a * np.exp(-z * z) / (4 * np.sqrt(np.pi) * s**1.5)
    return out


@lru_cache(maxsize=None)
def ramp_derivative_max(a: float = RAMP_SHARPNESS) -> float:
    """``max_t ramp'(t)``, located on a fine grid and polished."""
    t = np.linspace(0, 1, 20001)
    d = ramp_derivative(t, a)
    k = int(np.argmax(d))
    lo, hi = t[max(k - 1, 0)], t[min(k + 1, len(t) - 1)]
    res = optimize.minimize_scalar(
        lambda s: -float(ramp_derivative(np.array([s]), a)[0]),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return float(max(d[k], -res.fun))


@lru_cache(maxsize=64)
def symbol_l1_max(sys: EllipticSystem) -> float:
    """``max_{|w| = 1} sum_k |lambda_k(w)|``.

    For a radial cutoff ``eta(x) = h(|x|)`` one has
    ``sum_k |L_k eta| = |h'| sum_k |lambda_k(x/|x|)|``, so this times
    ``max |h'|`` is ``||grad_L eta||_inf`` in the l1 sense used by the
    witness constants.
    """

    def f(w):
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        return float(np.sum(np.abs(symbol(sys, w / nw))))

    pts = sphere_points(sys.N, 4096)
    vals = np.sum(np.abs(symbol(sys, pts.T)), axis=0)
    best = pts[int(np.argmax(vals))]
    res = optimize.minimize(lambda w: -f(w), best, method="Nelder-Mead",
                            options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
    return float(max(vals.max(), -res.fun))


@dataclass(frozen=True)
class CutoffSpec:
    """``eta = 1`` on ``B(center, r)``, ``eta = 0`` outside ``B(center, 2r)``."""

    center: tuple[float, ...]
    inner_radius: float
    sharpness: float = RAMP_SHARPNESS

    @property
    def outer_radius(self) -> float:
        return 2 * self.inner_radius

    def values(self, grid: GridSpec) -> np.ndarray:
        s = grid.radius(self.center) / self.inner_radius
        return 1.0 - ramp(s - 1.0, self.sharpness)

    def grad_bound(self, sys: EllipticSystem) -> float:
        """``sup_x sum_k |L_k eta(x)|``."""
        return ramp_derivative_max(self.sharpness) * symbol_l1_max(sys) / self.inner_radius


def _check_fits(grid: GridSpec, center, radius: float, what: str) -> None:
    center = np.asarray(center, dtype=float)
    if center.shape != (grid.N,):
        raise WitnessError(f"{what}: center must have {grid.N} coordinates")
    for c, L in zip(center, grid.box):
        if abs(c) + radius > L / 2 * (1 + 1e-12):
            raise WitnessError(
                f"{what}: ball of radius {radius} at {tuple(center)} leaves the box {grid.box}"
            )


def make_cutoff(grid: GridSpec, center, r: float, sharpness: float = RAMP_SHARPNESS) -> ScalarField:
    """Sample the cutoff of :class:`CutoffSpec` on ``grid``.

    Raises
    ------
    WitnessError
        If ``B(center, 2r)`` does not fit in the box.
    """
    if not r > 0:
        raise WitnessError(f"radius must be positive, got {r}")
    _check_fits(grid, center, 2 * r, "cutoff")
    spec = CutoffSpec(tuple(float(c) for c in center), float(r), sharpness)
    return ScalarField(grid, spec.values(grid))


def bump_field(grid: GridSpec, center, radius: float, mass: float | None = None,
               sharpness: float = RAMP_SHARPNESS) -> ScalarField:
    """Smooth bump ``1 - ramp(|x - c| / radius)`` supported in ``B(c, radius)``.

    With ``mass`` given the bump is rescaled so its box integral equals it.
    """
    if not radius > 0:
        raise WitnessError(f"radius must be positive, got {radius}")
    _check_fits(grid, center, radius, "bump")
    vals = 1.0 - ramp(grid.radius(center) / radius, sharpness)
    if mass is not None:
        vals = vals * (mass / (vals.mean() * grid.volume))
    return ScalarField(grid, vals)


def gradient_norm(u: ScalarField, q: float) -> float:
    """``||grad u||_q`` with the plain Euclidean gradient."""
    return lp_norm(plain_gradient(u), q)


def normalized_bump(grid: GridSpec, center, radius: float, q: float = 2.0,
                    phase: complex = 1.0) -> ScalarField:
    """Bump in ``B(center, radius)`` scaled to ``||grad u||_q = 1``."""
    u = bump_field(grid, center, radius)
    return u * (phase / abs(phase) / gradient_norm(u, q))


# ---------------------------------------------------------- certificates


@dataclass(frozen=True)
class CertificateEntry:
    name: str
    value: float
    bound: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.bound)

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "bound": self.bound,
                "passed": self.passed}


@dataclass(frozen=True)
class Certificate:
    entries: tuple[CertificateEntry, ...]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def __getitem__(self, name: str) -> CertificateEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def failures(self) -> list[CertificateEntry]:
        return [e for e in self.entries if not e.passed]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "entries": [e.to_dict() for e in self.entries]}


@dataclass(frozen=True, eq=False)
class WitnessPair:
    """A pair ``(V, W)`` with its certificate.

    ``kind`` is one of ``small_p``, ``large_p``, ``unit_ball``,
    ``factor_grad``, ``factor_div``. ``meta`` holds everything needed to
    recompute the certificate (system, ball, indices, test function, and for
    rescaled pairs the source pair and the affine map).
    """

    V: VectorField
    W: VectorField
    kind: str
    p: float
    pairing: Pairing
    certificate: Certificate | None = None
    constants: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def q(self) -> float:
        """Conjugate exponent ``p'``."""
        return self.p / (self.p - 1)

    @property
    def product(self) -> ScalarField:
        return dot(self.V, self.W, self.pairing)

    @property
    def family(self) -> str:
        """``"0,1"`` when ``div V = 0`` is the vanishing side, else ``"1,0"``."""
        return "0,1" if self.kind in ("small_p", "large_p", "unit_ball", "factor_div") else "1,0"

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "p": self.p,
            "pairing": self.pairing.value,
            "family": self.family,
            "constants": dict(sorted(self.constants.items())),
            "certificate": self.certificate.to_dict() if self.certificate else None,
        }


def _sup(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if a.size else 0.0


def _rel_sup(a: np.ndarray, ref: np.ndarray) -> float:
    scale = _sup(ref)
    err = _sup(a - ref)
    return err / scale if scale > 0 else err


def _outside_mass(mod: np.ndarray, grid: GridSpec, center, radius: float) -> float:
    # relative L2 mass of a modulus field outside the closed ball
    out = grid.radius(center) > radius * (1 + 1e-9)
    total = float(np.sum(mod**2))
    if total == 0:
        return 0.0
    return float(np.sqrt(np.sum(mod[out] ** 2) / total))


def _coordinate_cutoff(grid: GridSpec, center, R: float, j: int) -> ScalarField:
    # (x_j - x_j^0) eta_B
    eta = CutoffSpec(tuple(center), R).values(grid)
    xj = grid.coords[j] - center[j]
    return ScalarField(grid, np.broadcast_to(xj, grid.dims) * eta)


def _apply_Lstar_scalar(sys, psi: ScalarField):
    # (L_1^* psi, ..., L_n^* psi)
    from .grid import ifft, symbol_on_grid

    m = np.conj(1j * symbol_on_grid(sys, psi.grid))
    return ifft(m * fft(psi.values, psi.grid)[None], psi.grid)


def _check_indices(sys, i, j):
    if not (0 <= i < sys.n and 0 <= j < sys.n):
        raise WitnessError(f"indices must lie in [0, {sys.n}), got ({i}, {j})")
    if i == j:
        raise WitnessError("indices i and j must differ")


def _check_p(p, lo, hi, lo_open=True, hi_open=False):
    p = float(p)
    ok_lo = p > lo if lo_open else p >= lo
    ok_hi = p < hi if hi_open else p <= hi
    if not (ok_lo and ok_hi):
        raise WitnessError(f"p={p} outside the admissible range for this construction")
    return p


def _ball(B) -> BallSpec:
    return B if isinstance(B, BallSpec) else BallSpec(*B)


# ------------------------------------------------------------ constructions


def _base_constants(sys: EllipticSystem) -> dict:
    eta_grad = CutoffSpec((0.0,) * sys.N, 1.0).grad_bound(sys)
    return {
        "coef_bound": sys.coefficient_bound,
        "grad_compare": sys.N * np.sqrt(sys.n) * sys.coefficient_bound,
        "eta_grad_inf": eta_grad,
    }


def witness_small_p(sys: EllipticSystem, u: ScalarField, B, i: int, j: int, p: float,
                    pairing=Pairing.SESQUILINEAR) -> WitnessPair:
    """Witness pair for ``1 < p <= 2`` on the ball ``B``.

    ``V = |B|^{1/2-1/p} / (2C) (conj(L_i u) e_j - conj(L_j u) e_i)`` and
    ``W = gamma |B|^{-1/p'} grad_L((x_j - x_j^0) eta_B)`` with
    ``C = max{1, |a_jk|}`` and
    ``gamma = 2^{-N/p'} (2 ||grad_L eta||_inf + n C)^{-1}``.
    On ``B`` the product is ``gamma / (2C) |B|^{-1/2} conj(L_i u)``.
    Indices are 0-based.
    """
    check_system(sys, u.grid)
    B = _ball(B)
    p = _check_p(p, 1, 2)
    _check_indices(sys, i, j)
    _check_fits(u.grid, B.center, 2 * B.radius, "witness_small_p")
    q = p / (p - 1)
    k = _base_constants(sys)
    C = k["coef_bound"]
    gamma = 2 ** (-sys.N / q) / (2 * k["eta_grad_inf"] + sys.n * C)
    vol = B.volume
    Lu = grad_L(sys, u).components
    comps = np.zeros((sys.n, *u.grid.dims), dtype=np.complex128)
    c = vol ** (0.5 - 1 / p) / (2 * C)
    comps[j] = c * np.conj(Lu[i])
    comps[i] = -c * np.conj(Lu[j])
    V = VectorField(u.grid, comps)
    W = grad_L(sys, _coordinate_cutoff(u.grid, B.center, B.radius, j)) * (gamma * vol ** (-1 / q))
    k.update(C=C, gamma=gamma, product_constant=gamma / (2 * C) * vol**-0.5)
    pair = WitnessPair(V, W, "small_p", p, Pairing.parse(pairing), None, k,
                       {"sys": sys, "ball": B, "i": i, "j": j, "u": u})
    return replace(pair, certificate=_certify(pair))


def _large_V(sys, grid, B: BallSpec, i, j, p, gamma_p):
    psi = _coordinate_cutoff(grid, B.center, B.radius, j)
    Ls = _apply_Lstar_scalar(sys, psi)
    comps = np.zeros((sys.n, *grid.dims), dtype=np.complex128)
    c = gamma_p * B.volume ** (-1 / p)
    comps[j] = c * Ls[i]
    comps[i] = -c * Ls[j]
    return VectorField(grid, comps)


def witness_large_p(sys: EllipticSystem, u: ScalarField, B, i: int, j: int, p: float,
                    pairing=Pairing.SESQUILINEAR) -> WitnessPair:
    """Witness pair for ``p > 2`` on the ball ``B``.

    ``V = gamma' |B|^{-1/p} (L_i^* psi e_j - L_j^* psi e_i)`` with
    ``psi = (x_j - x_j^0) eta_B`` and ``W = |B|^{1/2 - 1/p'} / C grad_L u``,
    where ``C = N sqrt(n) max{1, |a_jk|}`` and
    ``gamma' = 2^{-N/p} (1 + 4 ||grad_L eta||_inf)^{-1}``.
    """
    check_system(sys, u.grid)
    B = _ball(B)
    p = float(p)
    if not (2 < p < np.inf):
        raise WitnessError(f"witness_large_p needs p > 2, got {p}")
    _check_indices(sys, i, j)
    _check_fits(u.grid, B.center, 2 * B.radius, "witness_large_p")
    q = p / (p - 1)
    k = _base_constants(sys)
    C = k["grad_compare"]
    gamma_p = 2 ** (-sys.N / p) / (1 + 4 * k["eta_grad_inf"])
    vol = B.volume
    V = _large_V(sys, u.grid, B, i, j, p, gamma_p)
    W = grad_L(sys, u) * (vol ** (0.5 - 1 / q) / C)
    k.update(C=C, gamma_prime=gamma_p, product_constant=gamma_p / C * vol**-0.5)
    pair = WitnessPair(V, W, "large_p", p, Pairing.parse(pairing), None, k,
                       {"sys": sys, "ball": B, "i": i, "j": j, "u": u})
    return replace(pair, certificate=_certify(pair))


def witness_unit_ball(sys: EllipticSystem, u: ScalarField, i: int, j: int, p: float,
                      pairing=Pairing.SESQUILINEAR) -> WitnessPair:
    """Witness pair on ``B_1 = B(0, 1)`` for any ``1 < p < inf``.

    Requires ``||grad u||_{p'} <= 1``. ``V`` is as in :func:`witness_large_p`
    with ``B = B_1`` and ``W = C^{-1} grad_L u``; on ``B_1`` the product is
    ``gamma' / C |B_1|^{-1/p} conj(L_i u)``.
    """
    check_system(sys, u.grid)
    p = float(p)
    if not (1 < p < np.inf):
        raise WitnessError(f"witness_unit_ball needs 1 < p < inf, got {p}")
    _check_indices(sys, i, j)
    B = BallSpec((0.0,) * sys.N, 1.0)
    _check_fits(u.grid, B.center, 2.0, "witness_unit_ball")
    k = _base_constants(sys)
    C = k["grad_compare"]
    gamma_p = 2 ** (-sys.N / p) / (1 + 4 * k["eta_grad_inf"])
    V = _large_V(sys, u.grid, B, i, j, p, gamma_p)
    W = grad_L(sys, u) * (1 / C)
    ct = gamma_p / C * B.volume ** (-1 / p)
    k.update(C=C, gamma_prime=gamma_p, C_tilde=ct, product_constant=ct)
    pair = WitnessPair(V, W, "unit_ball", p, Pairing.parse(pairing), None, k,
                       {"sys": sys, "ball": B, "i": i, "j": j, "u": u})
    return replace(pair, certificate=_certify(pair))


def factorize_phi(sys: EllipticSystem, phi: ScalarField, side: str, p: float = 2.0,
                  pairing=Pairing.SESQUILINEAR) -> WitnessPair:
    """Write ``phi = V . W`` for ``phi`` supported in ``B(0, 1)``.

    ``side="grad"``: ``V = phi e_1`` and ``W = grad_L(x_1 eta)``, so ``W`` is
    curl-free. ``side="div"``: ``V = L_2^*(x_1 eta) e_1 - L_1^*(x_1 eta) e_2``
    is div-free and equals ``e_2`` on ``B(0, 1)``; ``W = conj(phi) e_2`` for
    the sesquilinear pairing and ``phi e_2`` for the bilinear one.
    """
    check_system(sys, phi.grid)
    if side not in ("grad", "div"):
        raise WitnessError(f"side must be 'grad' or 'div', got {side!r}")
    p = float(p)
    if not (1 < p < np.inf):
        raise WitnessError(f"need 1 < p < inf, got {p}")
    conv = Pairing.parse(pairing)
    grid = phi.grid
    origin = (0.0,) * sys.N
    _check_fits(grid, origin, 2.0, "factorize_phi")
    if _outside_mass(np.abs(phi.values), grid, origin, 1.0) > SUPPORT_TOL:
        raise WitnessError("phi is not supported in B(0, 1)")
    q = p / (p - 1)
    k = _base_constants(sys)
    vol1s = unit_ball_volume(sys.N) * 2.0**sys.N
    psi = _coordinate_cutoff(grid, origin, 1.0, 0)
    n = sys.n
    if side == "grad":
        V = VectorField.basis(phi, 0, n)
        W = grad_L(sys, psi)
        k["C1"] = vol1s ** (1 / q) * (1 + 2 * k["eta_grad_inf"])
        kind = "factor_grad"
    else:
        Ls = _apply_Lstar_scalar(sys, psi)
        comps = np.zeros((n, *grid.dims), dtype=np.complex128)
        comps[0] = Ls[1]
        comps[1] = -Ls[0]
        V = VectorField(grid, comps)
        w = phi.conj() if conv is Pairing.SESQUILINEAR else phi
        W = VectorField.basis(w, 1, n)
        k["C2"] = (2 * k["eta_grad_inf"] + 1) * vol1s ** (1 / p)
        kind = "factor_div"
    pair = WitnessPair(V, W, kind, p, conv, None, k, {"sys": sys, "phi": phi, "side": side})
    return replace(pair, certificate=_certify(pair))


def scale_into_family(pair: WitnessPair) -> WitnessPair:
    """Divide ``V`` and ``W`` by their budgets so the pair joins its family.

    Factorizations are scaled by the constants of their construction
    (``C1`` or ``C2``) on the bounded side and by the measured norms of
    ``phi`` on the other; other kinds are scaled by their measured budgets
    if those exceed 1. The product scale is stored in ``constants``.
    """
    sys = pair.meta.get("sys") or pair.meta["source"].meta["sys"]
    p, q = pair.p, pair.q
    if pair.kind == "factor_grad":
        sV = max(lp_norm(pair.V, p), lp_norm(div_Lstar(sys, pair.V), p))
        sW = pair.constants["C1"]
    elif pair.kind == "factor_div":
        sV = pair.constants["C2"]
        sW = max(lp_norm(pair.W, q), lp_norm(curl_L(sys, pair.W), q))
    else:
        sV = max(1.0, lp_norm(pair.V, p))
        sW = max(1.0, lp_norm(pair.W, q))
        if pair.family == "1,0":
            sV = max(sV, lp_norm(div_Lstar(sys, pair.V), p))
        else:
            sW = max(sW, lp_norm(curl_L(sys, pair.W), q))
    consts = dict(pair.constants, family_scale=1.0 / (sV * sW))
    meta = dict(pair.meta, scaled=True, scale_v=sV, scale_w=sW)
    out = replace(pair, V=pair.V / sV, W=pair.W / sW, constants=consts, meta=meta)
    return replace(out, certificate=_certify(out))


# ---------------------------------------------------------------- rescaling


def resample(values: np.ndarray, grid: GridSpec, x0, R: float) -> np.ndarray:
    """Evaluate the trigonometric interpolant of ``values`` at ``(x - x0) / R``.

    ``values`` has shape ``(..., *dims)``; the map is separable, so it is
    applied axis by axis as a dense matrix.
    """
    N = grid.N
    c = fft(values, grid) / grid.size
    lead = values.ndim - N
    for a in range(N):
        x = grid.axes[a]
        L = grid.box[a]
        y = (x - x0[a]) / R
        k = grid.wavenumbers[a]
        E = np.exp(2j * np.pi * np.outer(y + L / 2, k) / L)
        c = np.moveaxis(np.tensordot(E, c, axes=([1], [lead + a])), 0, lead + a)
    return c


def rescale_to_ball(pair: WitnessPair, x0, R: float, tests=None) -> WitnessPair:
    """``V(x) = R^{-N/p} V~((x - x0)/R)`` and ``W(x) = R^{-N/p'} W~((x - x0)/R)``.

    The source pair must be centred at the origin. ``tests`` is a list of
    callables ``g(*coords)`` used to check the change-of-variables identity;
    by default ``g = 1`` and a plane wave are used.

    Raises
    ------
    WitnessError
        If the rescaled support leaves the box or ``R < 1``.
    """
    R = float(R)
    if not R >= 1:
        raise WitnessError(f"R must be >= 1, got {R}")
    grid = pair.V.grid
    x0 = tuple(float(v) for v in np.atleast_1d(x0))
    if len(x0) != grid.N:
        raise WitnessError(f"x0 must have {grid.N} coordinates")
    src_center, src_radius = _support_of(pair)
    if any(abs(c) > 1e-12 for c in src_center):
        raise WitnessError("rescale_to_ball expects a pair centred at the origin")
    _check_fits(grid, x0, R * src_radius, "rescale_to_ball")
    N, p, q = grid.N, pair.p, pair.q
    V = VectorField(grid, resample(pair.V.components, grid, x0, R) * R ** (-N / p))
    W = VectorField(grid, resample(pair.W.components, grid, x0, R) * R ** (-N / q))
    meta = {"source": pair, "x0": x0, "R": R, "tests": tests}
    out = WitnessPair(V, W, pair.kind, p, pair.pairing, None, dict(pair.constants), meta)
    return replace(out, certificate=_certify(out))


def _support_of(pair: WitnessPair) -> tuple[tuple[float, ...], float]:
    # centre and radius of a ball containing supp V and supp W
    if "source" in pair.meta:
        c0, r0 = _support_of(pair.meta["source"])
        x0, R = pair.meta["x0"], pair.meta["R"]
        return tuple(x + R * c for x, c in zip(x0, c0)), R * r0
    if "ball" in pair.meta:
        B = pair.meta["ball"]
        return B.center, 2 * B.radius
    return (0.0,) * pair.V.grid.N, 2.0


def _default_tests(grid: GridSpec):
    w = [2 * np.pi / L for L in grid.box]
    return [
        lambda *x: np.ones(np.broadcast_shapes(*[np.shape(v) for v in x])),
        lambda *x: np.exp(1j * sum(wa * (a + 1) * xa for a, (wa, xa) in enumerate(zip(w, x)))),
    ]


# ---------------------------------------------------------------- certify


def _certify(pair: WitnessPair) -> Certificate:
    if "source" in pair.meta:
        return _certify_rescaled(pair)
    if pair.kind in ("factor_grad", "factor_div"):
        return _certify_factor(pair)
    return _certify_ball(pair)


def _budget_entries(pair, sys, entries):
    if not pair.meta.get("scaled"):
        return
    p, q = pair.p, pair.q
    entries.append(CertificateEntry("family_norm_V", lp_norm(pair.V, p), 1 + BUDGET_TOL))
    entries.append(CertificateEntry("family_norm_W", lp_norm(pair.W, q), 1 + BUDGET_TOL))
    if pair.family == "1,0":
        entries.append(CertificateEntry(
            "family_div_V", lp_norm(div_Lstar(sys, pair.V), p), 1 + BUDGET_TOL))
    else:
        entries.append(CertificateEntry(
            "family_curl_W", lp_norm(curl_L(sys, pair.W), q), 1 + BUDGET_TOL))


def _certify_ball(pair: WitnessPair) -> Certificate:
    sys, B, i, j, u = (pair.meta[k] for k in ("sys", "ball", "i", "j", "u"))
    grid = u.grid
    p, q = pair.p, pair.q
    k = pair.constants
    scale = 1.0 / k.get("family_scale", 1.0)
    Lu = grad_L(sys, u).components
    base = np.conj(Lu[i])
    if pair.kind != "small_p" and pair.pairing is Pairing.BILINEAR:
        base = Lu[i]
    target = k["product_constant"] * base / scale
    prod = pair.product.values
    inside = grid.radius(B.center) <= B.radius * (1 + 1e-9)
    entries = [
        CertificateEntry("div_V", div_residual(sys, pair.V), VANISH_TOL),
        CertificateEntry("curl_W", curl_residual(sys, pair.W), VANISH_TOL),
        CertificateEntry("norm_V", lp_norm(pair.V, p), 1 + BUDGET_TOL),
        CertificateEntry("norm_W", lp_norm(pair.W, q), 1 + BUDGET_TOL),
        CertificateEntry("product", _rel_sup(prod, target), PRODUCT_TOL),
        CertificateEntry("support_u", _outside_mass(np.abs(u.values), grid, B.center, B.radius),
                         SUPPORT_TOL),
    ]
    hyp_q = q if pair.kind == "unit_ball" else 2.0
    entries.append(CertificateEntry("hypothesis_grad_u", gradient_norm(u, hyp_q), 1 + BUDGET_TOL))
    if pair.kind == "small_p":
        entries.append(CertificateEntry(
            "support_V", _outside_mass(pair.V.modulus(), grid, B.center, B.radius), SUPPORT_TOL))
        entries.append(CertificateEntry(
            "support_W", _outside_mass(pair.W.modulus(), grid, B.center, 2 * B.radius),
            SUPPORT_TOL))
        plateau = np.zeros((sys.n,))
        plateau[j] = k["gamma"] * B.volume ** (-1 / q) / scale_w(pair)
        Wc = pair.W.components[:, inside]
        err = np.max(np.abs(Wc - plateau[:, None])) / plateau[j]
        entries.append(CertificateEntry("plateau_W", float(err), PRODUCT_TOL))
    else:
        entries.append(CertificateEntry(
            "support_V", _outside_mass(pair.V.modulus(), grid, B.center, 2 * B.radius),
            SUPPORT_TOL))
        entries.append(CertificateEntry(
            "support_W", _outside_mass(pair.W.modulus(), grid, B.center, B.radius), SUPPORT_TOL))
        plateau = np.zeros((sys.n,))
        plateau[i] = k["gamma_prime"] * B.volume ** (-1 / p) / scale_v(pair)
        Vc = pair.V.components[:, inside]
        err = np.max(np.abs(Vc - plateau[:, None])) / plateau[i]
        entries.append(CertificateEntry("plateau_V", float(err), PRODUCT_TOL))
    _budget_entries(pair, sys, entries)
    return Certificate(tuple(entries))


def _certify_factor(pair: WitnessPair) -> Certificate:
    sys, phi = pair.meta["sys"], pair.meta["phi"]
    grid = phi.grid
    p, q = pair.p, pair.q
    origin = (0.0,) * grid.N
    scale = 1.0 / pair.constants.get("family_scale", 1.0)
    prod = pair.product.values
    slack = 1 + FACTOR_TOL
    entries = [
        CertificateEntry("product", _rel_sup(prod * scale, phi.values), FACTOR_TOL),
    ]
    from .operators import apply_Lstar

    if pair.kind == "factor_grad":
        sV = lp_norm(phi, p)
        nV = lp_norm(pair.V, p)
        lstar = np.stack([apply_Lstar(sys, a, phi).values for a in range(sys.n)])
        grad_star = lp_norm(VectorField(grid, lstar), p)
        ratio = nV / sV if sV > 0 else 0.0
        entries += [
            CertificateEntry("curl_W", curl_residual(sys, pair.W), VANISH_TOL),
            CertificateEntry("norm_V_rel_phi", abs(ratio * scale_v(pair) - 1) if sV > 0 else 0.0,
                             FACTOR_TOL),
            CertificateEntry("div_V_bound", lp_norm(div_Lstar(sys, pair.V), p) * scale_v(pair),
                             grad_star * slack),
            CertificateEntry("norm_W_bound", lp_norm(pair.W, q) * scale_w(pair),
                             pair.constants["C1"]),
            CertificateEntry("support_V", _outside_mass(pair.V.modulus(), grid, origin, 1.0),
                             SUPPORT_TOL),
            CertificateEntry("support_W", _outside_mass(pair.W.modulus(), grid, origin, 2.0),
                             SUPPORT_TOL),
        ]
    else:
        nW = lp_norm(pair.W, q)
        sW = lp_norm(phi, q)
        w = phi.conj() if pair.pairing is Pairing.SESQUILINEAR else phi
        grad_w = lp_norm(grad_L(sys, w), q)
        ratio = nW / sW if sW > 0 else 0.0
        entries += [
            CertificateEntry("div_V", div_residual(sys, pair.V), VANISH_TOL),
            CertificateEntry("norm_W_rel_phi", abs(ratio * scale_w(pair) - 1) if sW > 0 else 0.0,
                             FACTOR_TOL),
            CertificateEntry("curl_W_bound", lp_norm(curl_L(sys, pair.W), q) * scale_w(pair),
                             2 * grad_w * slack),
            CertificateEntry("norm_V_bound", lp_norm(pair.V, p) * scale_v(pair),
                             pair.constants["C2"]),
            CertificateEntry("support_V", _outside_mass(pair.V.modulus(), grid, origin, 2.0),
                             SUPPORT_TOL),
            CertificateEntry("support_W", _outside_mass(pair.W.modulus(), grid, origin, 1.0),
                             SUPPORT_TOL),
        ]
    _budget_entries(pair, sys, entries)
    return Certificate(tuple(entries))


def scale_v(pair: WitnessPair) -> float:
    """Factor by which ``V`` was divided in :func:`scale_into_family` (1 if unscaled)."""
    return pair.meta.get("scale_v", 1.0)


def scale_w(pair: WitnessPair) -> float:
    """Factor by which ``W`` was divided in :func:`scale_into_family` (1 if unscaled)."""
    return pair.meta.get("scale_w", 1.0)


# budget entries that are plain norms of V or W, carried over by rescaling
_NORM_ENTRIES = {
    "norm_V": "V", "norm_W": "W", "norm_V_bound": "V", "norm_W_bound": "W",
    "family_norm_V": "V", "family_norm_W": "W",
}


def _certify_rescaled(pair: WitnessPair) -> Certificate:
    src = pair.meta["source"]
    x0, R = pair.meta["x0"], pair.meta["R"]
    sys = src.meta.get("sys") or src.meta["source"].meta["sys"]
    grid = pair.V.grid
    p, q = pair.p, pair.q
    entries = []
    if pair.family == "0,1":
        entries.append(CertificateEntry("div_V", div_residual(sys, pair.V), VANISH_TOL))
    if pair.kind != "factor_div":
        entries.append(CertificateEntry("curl_W", curl_residual(sys, pair.W), VANISH_TOL))
    for name, new, old, e in (("V", pair.V, src.V, p), ("W", pair.W, src.W, q)):
        n_old = lp_norm_refined(old, e)
        n_new = lp_norm_refined(new, e)
        drift = abs(n_new - n_old) / n_old if n_old > 0 else n_new
        entries.append(CertificateEntry(f"drift_norm_{name}", drift, DRIFT_TOL))
    norms = {"V": (lp_norm(pair.V, p), lp_norm(src.V, p)),
             "W": (lp_norm(pair.W, q), lp_norm(src.W, q))}
    for e in src.certificate.entries:
        side = _NORM_ENTRIES.get(e.name)
        if side is None:
            continue
        new, old = norms[side]
        val = e.value * new / old if old > 0 else e.value
        entries.append(CertificateEntry(e.name, val, e.bound))
    center, radius = _support_of(pair)
    entries.append(CertificateEntry(
        "support_V", _outside_mass(pair.V.modulus(), grid, center, radius), SUPPORT_TOL))
    entries.append(CertificateEntry(
        "support_W", _outside_mass(pair.W.modulus(), grid, center, radius), SUPPORT_TOL))
    tests = pair.meta.get("tests") or _default_tests(grid)
    prod_new = pair.product.values
    prod_old = src.product.values
    ref = float(np.mean(np.abs(prod_old)) * grid.volume)
    for k, g in enumerate(tests):
        lhs = np.mean(g(*grid.coords) * np.conj(prod_new)) * grid.volume
        ys = [x0[a] + R * grid.coords[a] for a in range(grid.N)]
        rhs = np.mean(g(*ys) * np.conj(prod_old)) * grid.volume
        err = abs(lhs - rhs) / ref if ref > 0 else abs(lhs - rhs)
        entries.append(CertificateEntry(f"change_of_variables_{k}", float(err), DRIFT_TOL))
    return Certificate(tuple(entries))


def verify(pair: WitnessPair) -> Certificate:
    """Recompute the certificate of ``pair`` from its fields and metadata."""
    return _certify(pair)
