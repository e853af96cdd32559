import csv
import io
import json

import jsonschema
import numpy as np
import pytest

from divcurl import (
    EnsembleSpec,
    calderon_oracle,
    family_witnesses,
    make_grid,
    random_field,
    ratio_calderon,
    ratio_theorem_12,
    ratio_theorem_13,
    ratio_theorem_A,
    run_experiment,
    thmB_lower,
)
from divcurl.grid import ScalarField, VectorField
from divcurl.harness import (
    EXPERIMENTS,
    ConfigError,
    DegenerateTrialError,
    HarnessError,
    HypothesisError,
    default_config,
    drop_nyquist,
    report_schema,
    resolve_config,
    terms_theorem_12,
    terms_theorem_13,
    terms_theorem_A,
    thmb_suite,
)
from divcurl.norms import MollifierSpec, pair
from divcurl.operators import div_residual, grad_L

P_LIST = [4 / 3, 2.0, 4.0]
M = MollifierSpec((0.5, 0.25, 0.125, 0.0625))
SYSTEMS = ["grad2", "cr3"]


def spec(kind, seed=42, band=3, localize=True, count=10):
    return EnsembleSpec(seed=seed, count=count, band_limit=band, field_kind=kind, localization=localize)


@pytest.fixture(scope="module")
def grid64():
    return make_grid(2, [64, 64], [1.0, 1.0])


# ------------------------------------------------------------- ensembles


@pytest.mark.parametrize("kind", ["scalar", "vector", "grad_exact", "div_free"])
def test_random_field_deterministic(grad2, grid64, kind):
    a = random_field(grid64, spec(kind), 3, grad2)
    b = random_field(grid64, spec(kind), 3, grad2)
    va = a.values if isinstance(a, ScalarField) else a.components
    vb = b.values if isinstance(b, ScalarField) else b.components
    assert np.array_equal(va, vb)
    c = random_field(grid64, spec(kind), 4, grad2)
    vc = c.values if isinstance(c, ScalarField) else c.components
    assert not np.array_equal(va, vc)


def test_random_field_grid_independent(grad2):
    # the same trigonometric polynomial sampled on two grids
    s = spec("scalar", localize=False)
    a = random_field(make_grid(2, [32, 32], [1, 1]), s, 0)
    b = random_field(make_grid(2, [64, 64], [1, 1]), s, 0)
    assert np.max(np.abs(b.values[::2, ::2] - a.values)) < 1e-13


@pytest.mark.parametrize("name", SYSTEMS)
def test_div_free_kind(systems, name):
    sys, g = systems[name]
    for i in range(5):
        assert div_residual(sys, random_field(g, spec("div_free", localize=False), i, sys)) <= 1e-10


def test_band_zero_is_constant(grid64):
    f = random_field(grid64, spec("scalar", band=0, localize=False), 0)
    assert np.ptp(f.values.real) == 0 and np.ptp(f.values.imag) == 0


def test_band_limit_respected(grid64):
    f = random_field(grid64, spec("scalar", band=3, localize=False), 0)
    c = np.abs(np.fft.fft2(f.values))
    k = np.fft.fftfreq(64, 1 / 64)
    kk = np.hypot(*np.meshgrid(k, k, indexing="ij"))
    assert c[kk > 3].max() < 1e-10 * c.max()


def test_band_limit_too_large(grid64):
    with pytest.raises(HarnessError):
        random_field(grid64, spec("scalar", band=32), 0)


def test_vector_kinds_need_system(grid64):
    with pytest.raises(HarnessError):
        random_field(grid64, spec("vector"), 0)


def test_localization_support(grad2, grid64):
    f = random_field(grid64, spec("vector"), 0, grad2)
    outside = grid64.radius() > 0.25
    assert np.all(f.components[:, outside] == 0)


# ---------------------------------------------------------------- ratios


def _fields(sys, g, i=0):
    V = random_field(g, spec("vector"), i, sys)
    W = random_field(g, spec("vector"), i, sys, stream=1)
    Vf = random_field(g, spec("div_free"), i, sys)
    phi = random_field(g, spec("scalar"), i, sys, stream=2)
    return V, W, Vf, phi


def test_degenerate_pair_raises(grad2, grid64):
    Z = VectorField(grid64, np.zeros((2, 64, 64)))
    with pytest.raises(DegenerateTrialError):
        ratio_theorem_A(grad2, Z, Z, 2.0, M)
    _, _, Vf, _ = _fields(grad2, grid64)
    with pytest.raises(DegenerateTrialError):
        ratio_theorem_12(grad2, Vf, ScalarField(grid64, np.zeros((64, 64))), 2.0, M)
    with pytest.raises(DegenerateTrialError):
        ratio_calderon(grad2, ScalarField(grid64, np.ones((64, 64))), 2.0)


def test_thm13_gates_hypothesis(grad2, grid64):
    V, W, _, _ = _fields(grad2, grid64)
    with pytest.raises(HypothesisError):
        ratio_theorem_13(grad2, V, W, 2.0, M)


@pytest.mark.parametrize("p", P_LIST)
def test_cross_check_on_shared_inputs(grad2, grid64, p):
    _, _, Vf, phi = _fields(grad2, grid64, 1)
    W = grad_L(grad2, phi)
    a = ratio_theorem_A(grad2, Vf, W, p, M)
    b = ratio_theorem_12(grad2, Vf, phi, p, M)
    c = ratio_theorem_13(grad2, Vf, W, p, M)
    assert np.isfinite(a)
    assert abs(a - b) <= 1e-9 * a and abs(a - c) <= 1e-9 * a


@pytest.mark.parametrize("name", SYSTEMS)
def test_theorem_A_denominator_dominates(systems, name):
    sys, g = systems[name]
    V, W, Vf, phi = _fields(sys, g, 2)
    G = grad_L(sys, phi)
    m = MollifierSpec((0.5, 0.25))
    for p in P_LIST:
        # V arbitrary, W = grad_L phi: A and 1.2 share the numerator
        _, rA, _ = terms_theorem_A(sys, V, G, p, m)
        _, r12, _ = terms_theorem_12(sys, V, phi, p, m)
        assert rA >= r12 * (1 - 1e-9)
        # V div-free, W arbitrary: A and 1.3 share the numerator
        _, rA, _ = terms_theorem_A(sys, Vf, W, p, m)
        _, r13, _ = terms_theorem_13(sys, Vf, W, p, m)
        assert rA >= r13 * (1 - 1e-9)


@pytest.mark.parametrize("name", SYSTEMS)
def test_ratios_homogeneous(systems, name):
    sys, g = systems[name]
    V, W, Vf, phi = _fields(sys, g, 3)
    m = MollifierSpec((0.5, 0.25))
    lam, mu = 2.5 - 1j, -0.3j
    for p in (4 / 3, 4.0):
        a = ratio_theorem_A(sys, V, W, p, m)
        assert abs(ratio_theorem_A(sys, V * lam, W * mu, p, m) - a) <= 1e-9 * a
        b = ratio_theorem_12(sys, V, phi, p, m)
        assert abs(ratio_theorem_12(sys, V * lam, phi * mu, p, m) - b) <= 1e-9 * b
        c = ratio_theorem_13(sys, Vf, W, p, m)
        assert abs(ratio_theorem_13(sys, Vf * lam, W * mu, p, m) - c) <= 1e-9 * c
        d = ratio_calderon(sys, phi, p)
        assert abs(ratio_calderon(sys, phi * mu, p) - d) <= 1e-9 * d


@pytest.mark.parametrize("seed", range(10))
def test_calderon_gradient_is_one(grad2, grid64, seed):
    phi = random_field(grid64, spec("scalar", localize=False, band=8), seed)
    for p in P_LIST:
        assert abs(ratio_calderon(grad2, phi, p) - 1) <= 1e-10


@pytest.mark.parametrize("seed", range(10))
def test_calderon_cr_below_oracle(cr3, seed):
    g = make_grid(3, [16, 16, 16], [1, 1, 1])
    phi = random_field(g, spec("scalar", localize=False, band=4), seed)
    r = ratio_calderon(cr3, phi, 2.0)
    assert r <= calderon_oracle(cr3, phi) * (1 + 1e-10)
    # the CR symbol satisfies sum |lambda|^2 = |xi|^2, so both are 1
    assert abs(r - 1) <= 1e-10


def test_calderon_oracle_independent(cr3):
    # oracle evaluated directly from the mode list of a two-mode field
    g = make_grid(3, [8, 8, 8], [1, 2, 1])
    x = g.coords
    phi = ScalarField(g, np.exp(2j * np.pi * (x[0] + x[2])) + 0.5 * np.exp(2j * np.pi * x[1] / 2))
    lam2 = lambda xi: abs(xi[0] + 1j * xi[2]) ** 2 + xi[1] ** 2  # noqa: E731
    modes = [np.array([2 * np.pi, 0, 2 * np.pi]), np.array([0, np.pi, 0])]
    want = max(np.sqrt(np.dot(k, k) / lam2(k)) for k in modes)
    assert abs(calderon_oracle(cr3, phi) - want) < 1e-12


def test_calderon_oracle_strict_for_skewed_system():
    from divcurl import new_system

    s = new_system(2, 3, [[0.5], [0.5j]])
    g = make_grid(3, [16, 16, 16], [1, 1, 1])
    for i in range(5):
        phi = random_field(g, spec("scalar", localize=False, band=4), i)
        assert ratio_calderon(s, phi, 2.0) <= calderon_oracle(s, phi) * (1 + 1e-10)


# -------------------------------------------------------------- theorem B


@pytest.fixture(scope="module")
def thmb_setup(grad2):
    g = make_grid(2, [64, 64], [8.0, 8.0])
    return g, {p: family_witnesses(grad2, g, p) for p in (2.0, 4.0)}


def test_witness_families(thmb_setup):
    g, fams = thmb_setup
    for p, fam in fams.items():
        kinds = {w.kind for w in fam}
        assert {"unit_ball", "factor_grad", "factor_div"} <= kinds
        assert ("small_p" if p <= 2 else "large_p") in kinds
        assert {w.family for w in fam} == {"0,1", "1,0"}
        assert all(w.residual <= 1e-9 for w in fam)


def test_thmB_zero_and_empty(grad2, thmb_setup):
    g, fams = thmb_setup
    assert thmB_lower(grad2, ScalarField(g, np.zeros(g.dims)), 2.0, fams[2.0]) == 0
    with pytest.raises(HarnessError):
        thmB_lower(grad2, ScalarField(g, np.ones(g.dims)), 2.0, [])
    with pytest.raises(HarnessError):
        thmB_lower(grad2, ScalarField(g, np.ones(g.dims)), 4.0, fams[2.0])


def test_thmB_constant(grad2, thmb_setup):
    g, fams = thmb_setup
    c = 1.5 - 2j
    G = ScalarField(g, np.full(g.dims, c))
    fam = fams[2.0]
    # for g = c the pairing is c conj(int f), independent of shifts; factorizations
    # of a unit-mass bump give int f = 1 / (scale_v scale_w), up to the sampling
    # error of a radius-0.5 bump at 8 cells per unit
    for w in fam:
        if w.kind.startswith("factor"):
            want = abs(c) / (w.scale_v * w.scale_w)
            assert abs(abs(pair(G, w.f)) - want) <= 5e-3 * want
    want = max(abs(pair(G, w.f)) for w in fam)
    assert abs(thmB_lower(grad2, G, 2.0, fam) - want) <= 1e-12 * want
    assert abs(thmB_lower(grad2, G * 2, 2.0, fam) - 2 * want) <= 1e-12 * want


def test_thmB_includes_translates(grad2, thmb_setup):
    g, fams = thmb_setup
    fam = fams[2.0]
    G = random_field(g, spec("scalar", band=2, localize=False), 0)
    best = thmB_lower(grad2, G, 2.0, fam)
    # brute force over a few explicit shifts of every witness
    for w in fam:
        for s in [(0, 0), (3, -5), (17, 8)]:
            f = ScalarField(g, np.roll(w.f.values, s, axis=(0, 1)))
            assert abs(pair(G, f)) <= best * (1 + 1e-12)


def test_drop_nyquist_commutes(grad2):
    g = make_grid(2, [16, 16], [1, 1])
    u = ScalarField(g, np.random.default_rng(0).standard_normal((16, 16)))
    a = grad_L(grad2, drop_nyquist(u)).components
    b = drop_nyquist(grad_L(grad2, u)).components
    assert np.max(np.abs(a - b)) < 1e-12
    c = np.fft.fft2(drop_nyquist(u).values)
    assert np.all(np.abs(c[8, :]) < 1e-12) and np.all(np.abs(c[:, 8]) < 1e-12)


def test_thmb_suite_layout():
    g = make_grid(2, [32, 32], [8, 8])
    suite = thmb_suite(g, spec("scalar", band=2, localize=False, count=10))
    names = [n for n, _ in suite]
    assert names[:4] == ["constant", "cos1", "cos2", "cos4"] and len(names) == 10
    assert all(np.all(f.values.imag == 0) for _, f in suite)


# ---------------------------------------------------------------- config


def test_default_configs_resolve():
    for exp in EXPERIMENTS:
        cfg = resolve_config({}, exp)
        assert cfg["experiment"] == exp


@pytest.mark.parametrize(
    "config",
    [
        {"bogus": 1},
        {"grid": {"dims": [63, 64]}},
        {"grid": {"size": 3}},
        {"p_list": [1.0]},
        {"p_list": []},
        {"scales": [2.0]},
        {"pairing": "hermitian"},
        {"system": {"n": 2}},
        {"experiment": "thm-13"},
        {"ensemble": {"kind": "matrix"}},
    ],
)
def test_config_errors(config):
    with pytest.raises(ConfigError):
        resolve_config(config, "thm-a")


def test_unknown_experiment():
    with pytest.raises(ConfigError):
        default_config("thm-z")
    with pytest.raises(ConfigError):
        resolve_config({})


def test_empty_ensemble():
    with pytest.raises(ConfigError):
        run_experiment({"ensemble": {"count": 0}}, "thm-a")


# ---------------------------------------------------------------- reports


def _small(exp, **over):
    cfg = {"grid": {"dims": [32, 32], "box": [1.0, 1.0]},
           "ensemble": {"count": 4, "band_limit": 4}, "scales": [0.5, 0.25, 0.125]}
    if exp == "thm-b":
        cfg = {"grid": {"dims": [32, 32], "box": [8.0, 8.0]}, "ensemble": {"count": 5},
               "ball": {"stride": 2, "radii": [0.5, 1.0, 2.0]},
               "witness": {"radii": [1.0, 2.0], "phi_radii": [1.0]}}
    cfg.update(over)
    return cfg


@pytest.mark.parametrize("exp", EXPERIMENTS)
def test_report_schema_and_determinism(exp):
    r1 = run_experiment(_small(exp), exp)
    r2 = run_experiment(_small(exp), exp, threads=3)
    assert r1.to_json(timestamp=False) == r2.to_json(timestamp=False)
    d = json.loads(r1.to_json())
    jsonschema.validate(d, report_schema())
    assert d["theorem_id"] == exp and "timestamp" in d
    assert d["config"]["experiment"] == exp
    rows = list(csv.reader(io.StringIO(r1.to_csv())))
    assert rows[0] == ["trial", "p", "lhs", "rhs", "ratio"]
    assert len(rows) - 1 == len(d["trials"])


def test_report_refinement_table():
    r = run_experiment(_small("thm-a"), "thm-a", refine=True)
    d = r.to_dict()
    assert d["refinement"]["coarse_grid"]["dims"] == [32, 32]
    assert d["refinement"]["fine_grid"]["dims"] == [64, 64]
    assert {row["p"] for row in d["refinement"]["table"]} == {"1.33333", "2", "4"}
    assert "refine_max_ratio" in d["assertions"]
    jsonschema.validate(json.loads(r.to_json()), report_schema())


def test_lemma21_cr_oracle_assertion():
    from divcurl.elliptic import system_to_dict
    from divcurl import cr_system

    cfg = {"system": system_to_dict(cr_system()),
           "grid": {"dims": [16, 16, 16], "box": [1.0, 1.0, 1.0]},
           "ensemble": {"count": 3, "band_limit": 4}}
    r = run_experiment(cfg, "lemma-21")
    assert "oracle_bound" in r.assertions and r.passed
    assert all(row["oracle"] is not None for row in r.trials if row["p"] == 2.0)
