"""Seeded random ensembles and ratio experiments for the div-curl constants.

Every random field is a trigonometric polynomial ``sum_k c_k exp(i xi_k . x)``
over the integer modes ``|k| <= band_limit``. The coefficients are complex
Gaussians drawn from ``SeedSequence([seed, stream, index])`` in a fixed mode
order, so the same polynomial is produced on every grid that resolves it.
That is what makes refinement studies meaningful.

Experiments return an :class:`ExperimentReport` whose JSON form is
byte-identical for a fixed config, independent of the thread count; only the
``timestamp`` field changes between runs.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .elliptic import EllipticSystem, SystemDefinitionError, gradient_system, system_from_dict, system_to_dict
from .grid import GridError, GridSpec, ScalarField, VectorField, fft, ifft, laplacian_on_grid, make_grid
from .hodge import hodge_decompose
from .norms import MollifierSpec, bmo_norm, h1_norm, lp_norm, make_ball_family
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
from .witnesses import (
    WitnessError,
    bump_field,
    factorize_phi,
    make_cutoff,
    normalized_bump,
    witness_large_p,
    witness_small_p,
    witness_unit_ball,
)

__all__ = [
    "FIELD_KINDS",
    "EXPERIMENTS",
    "DEFAULT_P",
    "DEGENERATE_TOL",
    "HYPOTHESIS_TOL",
    "HarnessError",
    "DegenerateTrialError",
    "HypothesisError",
    "ConfigError",
    "EnsembleSpec",
    "mode_list",
    "random_field",
    "ratio_theorem_A",
    "ratio_theorem_12",
    "ratio_theorem_13",
    "ratio_calderon",
    "calderon_oracle",
    "drop_nyquist",
    "FamilyWitness",
    "family_witnesses",
    "thmB_lower",
    "thmb_suite",
    "ExperimentReport",
    "default_config",
    "resolve_config",
    "run_experiment",
    "report_schema",
]

FIELD_KINDS = ("scalar", "vector", "grad_exact", "div_free")
EXPERIMENTS = ("thm-a", "thm-12", "thm-13", "lemma-21", "thm-b")
DEFAULT_P = (4 / 3, 2.0, 4.0)
DEGENERATE_TOL = 1e-12
HYPOTHESIS_TOL = 1e-9
CROSS_CHECK_TOL = 1e-9
CROSS_CHECK_TRIALS = 10
UNITY_TOL = 1e-10
# allowed relative change of the reported constants under refinement
REFINE_TOL = {"thm-a": 0.25, "thm-12": 0.25, "thm-13": 0.25, "lemma-21": 0.10, "thm-b": 0.20}
BAND_WIDEN = 0.25

# independent random streams per role
STREAM_V, STREAM_W, STREAM_PHI, STREAM_G = 0, 1, 2, 3


class HarnessError(ValueError):
    """Invalid input to a ratio or experiment."""


class DegenerateTrialError(HarnessError):
    """The right-hand side of a ratio vanishes."""


class HypothesisError(HarnessError):
    """An input violates the hypothesis of the estimate being measured."""


class ConfigError(HarnessError):
    """Malformed experiment configuration."""


# ------------------------------------------------------------- ensembles


@dataclass(frozen=True)
class EnsembleSpec:
    """Seeded family of random band-limited fields.

    ``localization`` multiplies each draw by a smooth cutoff equal to 1 on the
    ball of radius ``box/8`` and vanishing outside radius ``box/4`` (the
    central half-box), before the ``field_kind`` post-processing.
    """

    seed: int = 42
    count: int = 100
    band_limit: int = 8
    field_kind: str = "vector"
    localization: bool = False

    def __post_init__(self):
        if self.field_kind not in FIELD_KINDS:
            raise ConfigError(f"field_kind must be one of {FIELD_KINDS}, got {self.field_kind!r}")
        if int(self.count) < 0:
            raise ConfigError(f"count must be >= 0, got {self.count}")
        if int(self.band_limit) < 0:
            raise ConfigError(f"band_limit must be >= 0, got {self.band_limit}")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "count", int(self.count))
        object.__setattr__(self, "band_limit", int(self.band_limit))
        object.__setattr__(self, "localization", bool(self.localization))

    def to_dict(self) -> dict:
        return {"seed": self.seed, "count": self.count, "band_limit": self.band_limit,
                "kind": self.field_kind, "localize": self.localization}


@lru_cache(maxsize=16)
def mode_list(N: int, band_limit: int) -> np.ndarray:
    """Integer vectors ``k`` with ``|k| <= band_limit``, lexicographic order."""
    b = int(band_limit)
    ks = [k for k in itertools.product(range(-b, b + 1), repeat=N)
          if sum(c * c for c in k) <= b * b]
    out = np.array(ks, dtype=np.int64).reshape(-1, N)
    out.setflags(write=False)
    return out


def _check_band(grid: GridSpec, band: int) -> None:
    for a, n in enumerate(grid.dims):
        if band >= n // 2:
            raise HarnessError(
                f"band_limit {band} exceeds the Nyquist limit of axis {a} ({n // 2 - 1})"
            )


def _draw(grid: GridSpec, spec: EnsembleSpec, index: int, stream: int, ncomp: int) -> np.ndarray:
    _check_band(grid, spec.band_limit)
    modes = mode_list(grid.N, spec.band_limit)
    M = len(modes)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, stream, int(index)]))
    c = (rng.standard_normal((ncomp, M)) + 1j * rng.standard_normal((ncomp, M))) / np.sqrt(2 * M)
    # grid index 0 sits at x = -L/2, hence the factor (-1)^{sum k}
    c = c * np.where(modes.sum(axis=1) % 2 == 0, 1.0, -1.0)
    idx = tuple(modes[:, a] % grid.dims[a] for a in range(grid.N))
    coeffs = np.zeros((ncomp, *grid.dims), dtype=np.complex128)
    coeffs[(slice(None), *idx)] = c
    return ifft(coeffs, grid) * grid.size


def random_field(grid: GridSpec, spec: EnsembleSpec, index: int,
                 sys: EllipticSystem | None = None, stream: int = STREAM_V):
    """Member ``index`` of the ensemble ``spec`` on ``grid``.

    ``scalar`` returns a :class:`ScalarField`; the other kinds need ``sys`` and
    return an ``n``-component :class:`VectorField`. ``grad_exact`` applies
    ``grad_L`` to a scalar draw and ``div_free`` keeps the div-free part of
    the Hodge decomposition of a vector draw. ``stream`` separates
    independent roles (``V``, ``W``, ``phi``) that share an index.

    Raises
    ------
    HarnessError
        If the band limit is not below the Nyquist frequency of ``grid``.
    """
    kind = spec.field_kind
    if kind != "scalar" and sys is None:
        raise HarnessError(f"field_kind {kind!r} needs a system")
    ncomp = sys.n if kind in ("vector", "div_free") else 1
    vals = _draw(grid, spec, index, stream, ncomp)
    if spec.localization:
        r = min(grid.box) / 8
        vals = vals * make_cutoff(grid, (0.0,) * grid.N, r).values
    if kind == "scalar":
        return ScalarField(grid, vals[0])
    if kind == "grad_exact":
        return grad_L(sys, ScalarField(grid, vals[0]))
    V = VectorField(grid, vals)
    if kind == "div_free":
        return hodge_decompose(sys, V).V1
    return V


# ---------------------------------------------------------------- ratios


def _conjugate(p) -> tuple[float, float]:
    p = float(p)
    if not (1 < p < np.inf):
        raise HarnessError(f"need 1 < p < inf, got {p}")
    return p, p / (p - 1)


def _sup(f) -> float:
    v = f.values if isinstance(f, ScalarField) else f.components
    return float(np.max(np.abs(v))) if v.size else 0.0


def _ratio(lhs: float, rhs: float, scale: float) -> tuple[float, float, float]:
    if not (np.isfinite(rhs) and rhs > DEGENERATE_TOL * scale and rhs > 0):
        raise DegenerateTrialError(f"degenerate denominator {rhs:.3e} (scale {scale:.3e})")
    return lhs, rhs, lhs / rhs


def terms_theorem_A(sys, V, W, p, m: MollifierSpec, pairing=Pairing.SESQUILINEAR):
    """``(lhs, rhs, ratio)`` of :func:`ratio_theorem_A`."""
    p, q = _conjugate(p)
    nV, nW = lp_norm(V, p), lp_norm(W, q)
    rhs = nV * nW + lp_norm(div_Lstar(sys, V), p) * nW + nV * lp_norm(curl_L(sys, W), q)
    lhs = h1_norm(dot(V, W, pairing), m)
    return _ratio(lhs, rhs, _sup(V) * _sup(W) * V.grid.volume)


def ratio_theorem_A(sys: EllipticSystem, V: VectorField, W: VectorField, p: float,
                    m: MollifierSpec, pairing=Pairing.SESQUILINEAR) -> float:
    """``||V . W||_{h1} / (||V||_p ||W||_p' + ||div V||_p ||W||_p' + ||V||_p ||curl W||_p')``.

    The curl norm is the ``L^{p'}`` norm of the pointwise Frobenius modulus.

    Raises
    ------
    DegenerateTrialError
        If the denominator vanishes relative to ``sup|V| sup|W| vol``.
    """
    return terms_theorem_A(sys, V, W, p, m, pairing)[2]


def terms_theorem_12(sys, V, phi, p, m: MollifierSpec, pairing=Pairing.SESQUILINEAR):
    """``(lhs, rhs, ratio)`` of :func:`ratio_theorem_12`."""
    p, q = _conjugate(p)
    G = grad_L(sys, phi)
    rhs = (lp_norm(V, p) + lp_norm(div_Lstar(sys, V), p)) * lp_norm(G, q)
    lhs = h1_norm(dot(V, G, pairing), m)
    return _ratio(lhs, rhs, _sup(V) * _sup(G) * V.grid.volume)


def ratio_theorem_12(sys: EllipticSystem, V: VectorField, phi: ScalarField, p: float,
                     m: MollifierSpec, pairing=Pairing.SESQUILINEAR) -> float:
    """``||V . grad_L phi||_{h1} / ((||V||_p + ||div V||_p) ||grad_L phi||_p')``."""
    return terms_theorem_12(sys, V, phi, p, m, pairing)[2]


def terms_theorem_13(sys, V, W, p, m: MollifierSpec, pairing=Pairing.SESQUILINEAR):
    """``(lhs, rhs, ratio)`` of :func:`ratio_theorem_13`."""
    p, q = _conjugate(p)
    res = div_residual(sys, V)
    if res > HYPOTHESIS_TOL:
        raise HypothesisError(f"V is not div-free: residual {res:.3e} > {HYPOTHESIS_TOL}")
    rhs = lp_norm(V, p) * (lp_norm(W, q) + lp_norm(curl_L(sys, W), q))
    lhs = h1_norm(dot(V, W, pairing), m)
    return _ratio(lhs, rhs, _sup(V) * _sup(W) * V.grid.volume)


def ratio_theorem_13(sys: EllipticSystem, V: VectorField, W: VectorField, p: float,
                     m: MollifierSpec, pairing=Pairing.SESQUILINEAR) -> float:
    """``||V . W||_{h1} / (||V||_p (||W||_p' + ||curl W||_p'))`` for div-free ``V``.

    Raises
    ------
    HypothesisError
        If ``div_residual(sys, V)`` exceeds ``HYPOTHESIS_TOL``.
    """
    return terms_theorem_13(sys, V, W, p, m, pairing)[2]


def terms_calderon(sys, phi, p):
    """``(lhs, rhs, ratio)`` of :func:`ratio_calderon`."""
    p, _ = _conjugate(p)
    G = plain_gradient(phi)
    lhs = lp_norm(G, p)
    rhs = lp_norm(grad_L(sys, phi), p)
    return _ratio(lhs, rhs, _sup(G) * phi.grid.volume ** (1 / p))


def ratio_calderon(sys: EllipticSystem, phi: ScalarField, p: float) -> float:
    """``||grad phi||_p / ||grad_L phi||_p`` with the plain gradient on top."""
    return terms_calderon(sys, phi, p)[2]


def calderon_oracle(sys: EllipticSystem, phi: ScalarField, rel: float = 1e-13) -> float:
    """``max |xi| / sqrt(sum_j |lambda_j(xi)|^2)`` over the modes present in ``phi``.

    By Parseval this bounds :func:`ratio_calderon` at ``p = 2``. Modes whose
    coefficient is below ``rel`` times the largest one are ignored, as is the
    zero mode.
    """
    c = np.abs(fft(phi.values, phi.grid))
    c.flat[0] = 0.0
    top = c.max()
    if top == 0:
        raise DegenerateTrialError("phi is constant")
    mask = c > rel * top
    xi2 = np.sum(phi.grid.dense_frequencies() ** 2, axis=0)
    lap = laplacian_on_grid(sys, phi.grid)
    return float(np.sqrt(np.max(xi2[mask] / lap[mask])))


# ------------------------------------------------------------- theorem B


@dataclass(frozen=True, eq=False)
class FamilyWitness:
    """Product ``f = V . W`` of a witness pair scaled into its family.

    ``scale_v`` and ``scale_w`` are the measured budgets the pair was divided
    by; ``residual`` is the vanishing-side residual of the unscaled pair.
    """

    label: str
    kind: str
    family: str
    p: float
    f: ScalarField
    scale_v: float
    scale_w: float
    residual: float


def drop_nyquist(F):
    """Remove every Fourier mode with ``|k_a| = n_a / 2`` on some axis.

    On those modes the grid multiplier of ``L_j`` does not commute with
    complex conjugation, so identities between conjugated fields fail there.
    The projection commutes with every ``L_j`` and ``L_j^*``.
    """
    grid = F.grid
    keep = np.ones(grid.dims, dtype=bool)
    for a, n in enumerate(grid.dims):
        sl = [slice(None)] * grid.N
        sl[a] = n // 2
        keep[tuple(sl)] = False
    vals = F.values if isinstance(F, ScalarField) else F.components
    out = ifft(fft(vals, grid) * keep, grid)
    return ScalarField(grid, out) if isinstance(F, ScalarField) else VectorField(grid, out)


def _into_family(sys, pair, label) -> FamilyWitness:
    p, q = pair.p, pair.q
    pair = replace(pair, V=drop_nyquist(pair.V), W=drop_nyquist(pair.W))
    if pair.family == "0,1":
        res = div_residual(sys, pair.V)
        sV = lp_norm(pair.V, p)
        sW = max(lp_norm(pair.W, q), lp_norm(curl_L(sys, pair.W), q))
    else:
        res = curl_residual(sys, pair.W)
        sV = max(lp_norm(pair.V, p), lp_norm(div_Lstar(sys, pair.V), p))
        sW = lp_norm(pair.W, q)
    if res > HYPOTHESIS_TOL:
        raise HarnessError(f"witness {label} fails its vanishing constraint ({res:.3e})")
    if not (sV > 0 and sW > 0):
        raise HarnessError(f"witness {label} is zero")
    f = dot(pair.V, pair.W, pair.pairing) * (1.0 / (sV * sW))
    return FamilyWitness(label, pair.kind, pair.family, p, f, sV, sW, res)


def family_witnesses(sys: EllipticSystem, grid: GridSpec, p: float,
                     radii=(0.5, 1.0, 2.0), phi_radii=(0.5, 1.0),
                     pairing=Pairing.SESQUILINEAR) -> list[FamilyWitness]:
    """Witness products centred at the origin, each scaled into its family.

    Ball witnesses (``small_p`` for ``p <= 2``, ``large_p`` otherwise) use
    ``B(0, r)`` and a bump ``u`` on ``B`` normalized to ``||grad u||_2 = 1``,
    for both index orders ``(1, 2)`` and ``(2, 1)``; ``unit_ball`` pairs use
    bumps of radius ``r <= 1`` normalized to ``||grad u||_p' = 1``. Both factorizations are applied to a
    unit-mass bump of each radius in ``phi_radii``. ``V`` and ``W`` are
    passed through :func:`drop_nyquist`; membership is then checked by
    measurement: the vanishing side must hold to ``HYPOTHESIS_TOL`` and the
    pair is divided by its measured budgets.
    """
    p, q = _conjugate(p)
    origin = (0.0,) * grid.N
    out = []
    for r in radii:
        u2 = normalized_bump(grid, origin, r, 2.0)
        uq = normalized_bump(grid, origin, r, q)
        for i, j in ((0, 1), (1, 0)):
            if p <= 2:
                w = witness_small_p(sys, u2, (origin, r), i, j, p, pairing)
            else:
                w = witness_large_p(sys, u2, (origin, r), i, j, p, pairing)
            out.append(_into_family(sys, w, f"{w.kind}(r={r:g},i={i + 1},j={j + 1})"))
            if r <= 1:
                w = witness_unit_ball(sys, uq, i, j, p, pairing)
                out.append(_into_family(sys, w, f"unit_ball(r={r:g},i={i + 1},j={j + 1})"))
    for rho in phi_radii:
        phi = bump_field(grid, origin, rho, mass=1.0)
        for side in ("grad", "div"):
            w = factorize_phi(sys, phi, side, p, pairing)
            out.append(_into_family(sys, w, f"{w.kind}(rho={rho:g})"))
    return out


def thmB_lower(sys: EllipticSystem, g: ScalarField, p: float, witnesses) -> float:
    """``max |pair(g, f(. - s))|`` over the witness products and all grid shifts ``s``.

    The families are translation invariant, so every torus translate of a
    witness is a witness; the shifted pairings are one cross-correlation.

    Raises
    ------
    HarnessError
        If ``witnesses`` is empty or built for another exponent or grid.
    """
    return _thmB_terms(g, p, witnesses)[0]


def _thmB_terms(g, p, witnesses):
    witnesses = list(witnesses)
    if not witnesses:
        raise HarnessError("empty witness family")
    ghat = fft(g.values, g.grid)
    best, label = 0.0, witnesses[0].label
    for w in witnesses:
        if w.f.grid != g.grid:
            raise HarnessError(f"witness {w.label} lives on another grid")
        if abs(w.p - float(p)) > 1e-12:
            raise HarnessError(f"witness {w.label} was built for p={w.p}, not {p}")
        corr = ifft(ghat * np.conj(fft(w.f.values, g.grid)), g.grid) * g.grid.cell_volume
        v = float(np.max(np.abs(corr)))
        if v > best:
            best, label = v, w.label
    return best, label


def thmb_suite(grid: GridSpec, spec: EnsembleSpec) -> list[tuple[str, ScalarField]]:
    """The test functions ``g`` of the thm-b experiment.

    A constant, three real plane waves along the first axis (1, 2 and 4
    periods across the box) and real parts of seeded random fields, for
    ``spec.count`` functions in total.
    """
    out = [("constant", ScalarField(grid, np.ones(grid.dims, dtype=np.complex128)))]
    x = grid.coords[0]
    L = grid.box[0]
    for k in (1, 2, 4):
        vals = np.broadcast_to(np.cos(2 * np.pi * k * x / L), grid.dims).astype(np.complex128)
        out.append((f"cos{k}", ScalarField(grid, vals)))
    scalar = EnsembleSpec(spec.seed, spec.count, spec.band_limit, "scalar", spec.localization)
    i = 0
    while len(out) < spec.count:
        g = random_field(grid, scalar, i, stream=STREAM_G)
        out.append((f"random{i}", ScalarField(grid, g.values.real.astype(np.complex128))))
        i += 1
    return out[: spec.count]


# --------------------------------------------------------------- reports


@dataclass
class ExperimentReport:
    """Outcome of :func:`run_experiment`.

    ``trials`` holds one row ``{trial, p, lhs, rhs, ratio}`` per retained
    trial; degenerate trials are listed in ``excluded``. ``assertions`` maps
    a name to ``{passed, value, bound}``.
    """

    theorem_id: str
    config: dict
    grid: dict
    conventions: dict
    trials: list
    excluded: list
    summary: dict
    assertions: dict
    refinement: dict | None = None
    extra: dict = field(default_factory=dict)
    timestamp: str = ""

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.assertions.values())

    def to_dict(self, timestamp: bool = True) -> dict:
        d = {
            "theorem_id": self.theorem_id,
            "config": self.config,
            "grid": self.grid,
            "conventions": self.conventions,
            "trials": self.trials,
            "excluded": self.excluded,
            "summary": self.summary,
            "assertions": self.assertions,
            "refinement": self.refinement,
            "extra": self.extra,
            "passed": self.passed,
        }
        if timestamp:
            d["timestamp"] = self.timestamp
        return d

    def to_json(self, timestamp: bool = True) -> str:
        return json.dumps(self.to_dict(timestamp), sort_keys=True, indent=2, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "p", "lhs", "rhs", "ratio"])
        for r in self.trials:
            w.writerow([r["trial"], repr(r["p"]), repr(r["lhs"]), repr(r["rhs"]), repr(r["ratio"])])
        return buf.getvalue()


def report_schema() -> dict:
    """The JSON schema every report validates against."""
    text = resources.files("divcurl").joinpath("schemas/report.schema.json").read_text()
    return json.loads(text)


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- config


_DEFAULT_SCALES = [0.5, 0.25, 0.125, 0.0625]


def default_config(experiment: str) -> dict:
    """Configuration used when a key is missing from the supplied config."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    base = {
        "system": system_to_dict(gradient_system(2)),
        "grid": {"dims": [64, 64], "box": [1.0, 1.0]},
        "ensemble": {"seed": 42, "count": 100, "band_limit": 8,
                     "kind": "vector", "localize": True},
        "p_list": list(DEFAULT_P),
        "scales": list(_DEFAULT_SCALES),
        "ball": {"stride": 2, "radii": None},
        "pairing": Pairing.SESQUILINEAR.value,
    }
    if experiment == "thm-13":
        base["ensemble"]["kind"] = "div_free"
    if experiment == "lemma-21":
        base["ensemble"].update(kind="scalar", localize=False)
    if experiment == "thm-b":
        base["grid"] = {"dims": [64, 64], "box": [8.0, 8.0]}
        base["ensemble"] = {"seed": 42, "count": 10, "band_limit": 2,
                            "kind": "scalar", "localize": False}
        base["ball"] = {"stride": 1, "radii": [0.25, 0.5, 1.0, 2.0, 4.0]}
        base["witness"] = {"radii": [0.5, 1.0, 2.0], "phi_radii": [0.5, 1.0]}
    return base


_TOP_KEYS = {"experiment", "system", "grid", "ensemble", "p_list", "scales", "ball",
             "pairing", "witness"}


def resolve_config(config: dict, experiment: str | None = None) -> dict:
    """Merge ``config`` over the defaults of its experiment and validate it.

    Raises
    ------
    ConfigError
        On unknown keys, wrong types or values out of range.
    """
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    experiment = experiment or config.get("experiment")
    if experiment is None:
        raise ConfigError("config names no experiment")
    if config.get("experiment", experiment) != experiment:
        raise ConfigError(
            f"config is for {config['experiment']!r}, not {experiment!r}")
    unknown = set(config) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    out = default_config(experiment)
    for key, val in config.items():
        if key in ("grid", "ensemble", "ball", "witness") and val is not None:
            if not isinstance(val, dict):
                raise ConfigError(f"{key} must be an object")
            allowed = set(out.get(key) or {})
            extra = set(val) - allowed
            if extra:
                raise ConfigError(f"unknown keys in {key}: {sorted(extra)}")
            out[key] = dict(out.get(key) or {}, **val)
        else:
            out[key] = val
    out["experiment"] = experiment
    _validate(out)
    return out


def _validate(cfg: dict) -> None:
    try:
        _system(cfg)
        _grid(cfg)
        _ensemble(cfg)
        ps = [float(p) for p in cfg["p_list"]]
        if not ps or any(not (1 < p < np.inf) for p in ps):
            raise ConfigError(f"p_list must be non-empty with 1 < p < inf, got {ps}")
        MollifierSpec(tuple(float(t) for t in cfg["scales"]))
        int(cfg["ball"]["stride"])
        Pairing.parse(cfg["pairing"])
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError, SystemDefinitionError, GridError) as exc:
        raise ConfigError(str(exc)) from exc


def _system(cfg) -> EllipticSystem:
    s = cfg["system"]
    if not isinstance(s, dict):
        raise ConfigError("system must be an object {n, N, coeffs}")
    return system_from_dict(s)


def _grid(cfg, factor: int = 1) -> GridSpec:
    g = cfg["grid"]
    dims = [int(d) * factor for d in g["dims"]]
    return make_grid(len(dims), dims, g["box"])


def _ensemble(cfg) -> EnsembleSpec:
    e = cfg["ensemble"]
    return EnsembleSpec(e["seed"], e["count"], e["band_limit"], e["kind"], e["localize"])


# ---------------------------------------------------------- experiments


def _map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _ratio_trial(exp, sys, grid, spec, m, ps, pairing, index):
    """Rows and exclusions of one ensemble member."""
    rows, excluded, extra = [], [], {}
    if exp == "lemma-21":
        phi = random_field(grid, EnsembleSpec(spec.seed, spec.count, spec.band_limit,
                                              "scalar", spec.localization), index, sys, STREAM_PHI)
        phi = phi - complex(np.mean(phi.values))
        try:
            extra["oracle"] = calderon_oracle(sys, phi)
        except DegenerateTrialError:
            extra["oracle"] = None
    else:
        vkind = "div_free" if exp == "thm-13" else spec.field_kind
        if vkind == "scalar":
            raise ConfigError(f"{exp} needs a vector ensemble kind")
        V = random_field(grid, EnsembleSpec(spec.seed, spec.count, spec.band_limit,
                                            vkind, spec.localization), index, sys, STREAM_V)
        other = EnsembleSpec(spec.seed, spec.count, spec.band_limit,
                             "scalar" if exp == "thm-12" else "vector", spec.localization)
        W = random_field(grid, other, index, sys, STREAM_PHI if exp == "thm-12" else STREAM_W)
    for p in ps:
        try:
            if exp == "thm-a":
                lhs, rhs, r = terms_theorem_A(sys, V, W, p, m, pairing)
            elif exp == "thm-12":
                lhs, rhs, r = terms_theorem_12(sys, V, W, p, m, pairing)
            elif exp == "thm-13":
                lhs, rhs, r = terms_theorem_13(sys, V, W, p, m, pairing)
            else:
                lhs, rhs, r = terms_calderon(sys, phi, p)
        except DegenerateTrialError as exc:
            excluded.append({"trial": index, "p": p, "reason": str(exc)})
            continue
        row = {"trial": index, "p": p, "lhs": lhs, "rhs": rhs, "ratio": r}
        if exp == "lemma-21":
            row["oracle"] = extra["oracle"] if p == 2.0 else None
        rows.append(row)
    return rows, excluded


def _cross_check(sys, grid, spec, m, ps, pairing, index):
    """Relative spread of the three ratios on a div-free ``V`` and ``W = grad_L phi``."""
    V = random_field(grid, EnsembleSpec(spec.seed, spec.count, spec.band_limit,
                                        "div_free", spec.localization), index, sys, STREAM_V)
    phi = random_field(grid, EnsembleSpec(spec.seed, spec.count, spec.band_limit,
                                          "scalar", spec.localization), index, sys, STREAM_PHI)
    W = grad_L(sys, phi)
    worst = 0.0
    for p in ps:
        a = ratio_theorem_A(sys, V, W, p, m, pairing)
        b = ratio_theorem_12(sys, V, phi, p, m, pairing)
        c = ratio_theorem_13(sys, V, W, p, m, pairing)
        worst = max(worst, abs(a - b) / a, abs(a - c) / a)
    return worst


def _summarize(rows, excluded, ps) -> dict:
    out = {}
    for p in ps:
        r = [row["ratio"] for row in rows if row["p"] == p]
        out[f"{p:.6g}"] = {
            "retained": len(r),
            "excluded": sum(1 for e in excluded if e["p"] == p),
            "max_ratio": max(r) if r else None,
            "median_ratio": float(np.median(r)) if r else None,
            "min_ratio": min(r) if r else None,
        }
    return out


def _assert(value, bound, passed=None) -> dict:
    if passed is None:
        passed = value is not None and bool(np.isfinite(value)) and value <= bound
    return {"passed": bool(passed), "value": value, "bound": bound}


def _run_ratio_grid(exp, cfg, factor, threads):
    sys = _system(cfg)
    grid = _grid(cfg, factor)
    spec = _ensemble(cfg)
    if spec.count == 0:
        raise ConfigError("empty ensemble")
    m = MollifierSpec(tuple(float(t) for t in cfg["scales"]))
    ps = [float(p) for p in cfg["p_list"]]
    pairing = Pairing.parse(cfg["pairing"])
    results = _map(lambda i: _ratio_trial(exp, sys, grid, spec, m, ps, pairing, i),
                   range(spec.count), threads)
    rows = [r for rs, _ in results for r in rs]
    excluded = [e for _, es in results for e in es]
    summary = _summarize(rows, excluded, ps)
    assertions = {}
    maxes = [s["max_ratio"] for s in summary.values()]
    assertions["finite_max_ratio"] = _assert(
        None if None in maxes else max(maxes), float("inf"),
        passed=None not in maxes and all(np.isfinite(maxes)))
    extra = {}
    if exp in ("thm-a", "thm-12", "thm-13"):
        k = min(CROSS_CHECK_TRIALS, spec.count)
        spreads = _map(lambda i: _cross_check(sys, grid, spec, m, ps, pairing, i), range(k), threads)
        extra["cross_check"] = {"trials": k, "max_rel_diff": max(spreads)}
        assertions["cross_check"] = _assert(max(spreads), CROSS_CHECK_TOL)
    if exp == "lemma-21":
        if all(c == 0 for row in sys.coeffs for c in row):
            dev = max((abs(r["ratio"] - 1) for r in rows), default=None)
            assertions["gradient_ratio_unity"] = _assert(dev, UNITY_TOL)
        elif 2.0 in ps:
            gaps = [r["ratio"] / r["oracle"] - 1 for r in rows if r["p"] == 2.0 and r["oracle"]]
            assertions["oracle_bound"] = _assert(max(gaps, default=None), UNITY_TOL)
    return grid, rows, excluded, summary, assertions, extra


def _rel_change(a, b) -> float | None:
    if a is None or b is None or a == 0:
        return None
    return abs(b - a) / abs(a)


def _run_thmb_grid(cfg, factor, threads):
    sys = _system(cfg)
    grid = _grid(cfg, factor)
    spec = _ensemble(cfg)
    if spec.count == 0:
        raise ConfigError("empty test suite")
    ps = [float(p) for p in cfg["p_list"]]
    pairing = Pairing.parse(cfg["pairing"])
    wcfg = cfg.get("witness") or {}
    radii = tuple(float(r) for r in wcfg.get("radii", (0.5, 1.0, 2.0)))
    phi_radii = tuple(float(r) for r in wcfg.get("phi_radii", (0.5, 1.0)))
    ball = cfg["ball"]
    balls = make_ball_family(grid, int(ball["stride"]) * factor, ball.get("radii"))
    try:
        fams = {p: family_witnesses(sys, grid, p, radii, phi_radii, pairing) for p in ps}
    except WitnessError as exc:
        raise ConfigError(f"witness family does not fit the grid: {exc}") from exc
    suite = thmb_suite(grid, spec)

    def trial(i):
        name, g = suite[i]
        b = bmo_norm(g, balls)
        rows, best = [], {}
        for p in ps:
            lower, label = _thmB_terms(g, p, fams[p])
            rows.append({"trial": i, "p": p, "lhs": lower, "rhs": b, "ratio": lower / b,
                         "g": name, "best_witness": label})
        return rows

    rows = [r for rs in _map(trial, range(len(suite)), threads) for r in rs]
    summary = _summarize(rows, [], ps)
    for p, s in zip(ps, summary.values()):
        s["C_grid"] = s["max_ratio"]
        s["band"] = [s["min_ratio"], s["max_ratio"]]
        s["witnesses"] = len(fams[p])
    assertions = {"finite_max_ratio": _assert(
        max(s["max_ratio"] for s in summary.values()), float("inf"))}
    extra = {"suite": [name for name, _ in suite],
             "witness_labels": {f"{p:.6g}": [w.label for w in fams[p]] for p in ps}}
    return grid, rows, [], summary, assertions, extra


def _refinement(exp, coarse, fine, c_rows, f_rows) -> tuple[dict, dict]:
    table, assertions = [], {}
    tol = REFINE_TOL[exp]
    worst = 0.0
    for key, cs in coarse.items():
        fs = fine[key]
        if exp == "thm-b":
            ch = _rel_change(cs["C_grid"], fs["C_grid"])
            table.append({"p": key, "coarse_C_grid": cs["C_grid"], "fine_C_grid": fs["C_grid"],
                          "rel_change": ch})
        else:
            ch = _rel_change(cs["max_ratio"], fs["max_ratio"])
            table.append({"p": key, "coarse_max_ratio": cs["max_ratio"],
                          "fine_max_ratio": fs["max_ratio"], "rel_change": ch})
        worst = float("inf") if ch is None else max(worst, ch)
    name = "refine_C_grid" if exp == "thm-b" else "refine_max_ratio"
    assertions[name] = _assert(worst, tol)
    out = {"table": table}
    if exp == "thm-b":
        fine_by = {(r["trial"], r["p"]): r for r in f_rows}
        pairs, band_ok, worst_pair = [], True, 0.0
        bands = {}
        for key, cs in coarse.items():
            lo, hi = cs["band"]
            bands[key] = [lo * (1 - BAND_WIDEN), hi * (1 + BAND_WIDEN)]
        for r in c_rows:
            fr = fine_by[(r["trial"], r["p"])]
            ch = _rel_change(r["ratio"], fr["ratio"])
            lo, hi = bands[f"{r['p']:.6g}"]
            inside = lo <= r["ratio"] <= hi and lo <= fr["ratio"] <= hi
            band_ok &= inside
            worst_pair = max(worst_pair, ch if ch is not None else float("inf"))
            pairs.append({"trial": r["trial"], "p": r["p"], "coarse_ratio": r["ratio"],
                          "fine_ratio": fr["ratio"], "rel_change": ch, "in_band": inside})
        out["pairs"] = pairs
        out["bands"] = bands
        assertions["band"] = _assert(None, None, passed=band_ok)
        assertions["refine_ratio"] = _assert(worst_pair, BAND_WIDEN)
    else:
        c_by = {(r["trial"], r["p"]): r["ratio"] for r in c_rows}
        out["pairs"] = [{"trial": r["trial"], "p": r["p"], "coarse_ratio": c_by.get((r["trial"], r["p"])),
                         "fine_ratio": r["ratio"]} for r in f_rows]
    return out, assertions


def run_experiment(config: dict, experiment: str | None = None, threads: int = 1,
                   refine: bool = False) -> ExperimentReport:
    """Run a named experiment over its ensemble.

    ``experiment`` is one of ``EXPERIMENTS`` and overrides nothing in
    ``config`` except a missing ``experiment`` key. With ``refine`` the
    experiment is repeated on a grid twice as fine per axis (ball strides
    doubled, so the sampled centres stay the same physical points) and the
    paired-grid table plus stability assertions are added. ``threads`` only
    changes the wall time; the report is identical.

    Raises
    ------
    ConfigError
        On an invalid config or an empty ensemble.
    """
    cfg = resolve_config(config, experiment)
    exp = cfg["experiment"]
    threads = max(1, int(threads))
    runner = (lambda f: _run_thmb_grid(cfg, f, threads)) if exp == "thm-b" else (
        lambda f: _run_ratio_grid(exp, cfg, f, threads))
    grid, rows, excluded, summary, assertions, extra = runner(1)
    refinement = None
    if refine:
        fgrid, frows, fexcl, fsummary, fassert, _ = runner(2)
        table, rassert = _refinement(exp, summary, fsummary, rows, frows)
        refinement = {"coarse_grid": grid.to_dict(), "fine_grid": fgrid.to_dict(),
                      "fine_summary": fsummary, "fine_excluded": fexcl, **table}
        assertions.update({f"fine_{k}": v for k, v in fassert.items()})
        assertions.update(rassert)
    conventions = {"pairing": Pairing.parse(cfg["pairing"]).value,
                   "curl_norm": "frobenius",
                   "degenerate_tol": DEGENERATE_TOL,
                   "hypothesis_tol": HYPOTHESIS_TOL}
    return ExperimentReport(
        theorem_id=exp,
        config=_jsonable(cfg),
        grid=grid.to_dict(),
        conventions=conventions,
        trials=_jsonable(rows),
        excluded=_jsonable(excluded),
        summary=_jsonable(summary),
        assertions=_jsonable(assertions),
        refinement=_jsonable(refinement),
        extra=_jsonable(extra),
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
