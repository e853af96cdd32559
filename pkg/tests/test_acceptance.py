"""Acceptance criteria, one test each, with a one-line PASS/FAIL summary per criterion."""
import math

import numpy as np
import pytest
from conftest import random_scalar, random_vector
from test_norms import brute_ball_stats

from divcurl import (
    MollifierSpec,
    bmo_norm,
    certify_ellipticity,
    cr_system,
    dyadic_scales,
    factorize_phi,
    grand_maximal,
    gradient_system,
    h1_norm,
    hl_maximal,
    hodge_decompose,
    lp_norm,
    make_ball_family,
    make_grid,
    new_system,
    pair,
    rescale_to_ball,
    run_experiment,
    witness_large_p,
    witness_small_p,
    witness_unit_ball,
)
from divcurl.elliptic import system_to_dict
from divcurl.grid import ScalarField, integrate
from divcurl.norms import bmo_terms
from divcurl.operators import curl_L, div_Lstar, grad_L
from divcurl.witnesses import bump_field, normalized_bump

P_LIST = [4 / 3, 2.0, 4.0]


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\ncriterion {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else ""))
        assert ok, detail

    return emit


def _rel(a, b):
    return abs(a - b) / abs(b)


def test_criterion_1_ellipticity(report):
    c_grad = certify_ellipticity(gradient_system(2))
    c_cr = certify_ellipticity(cr_system())
    c_bad = certify_ellipticity(new_system(2, 3, [[0], [0]]))
    ok = (c_grad.elliptic and abs(c_grad.constant - 1) <= 1e-6
          and c_cr.elliptic and abs(c_cr.constant - 1) <= 1e-6 and not c_bad.elliptic)
    report(1, "ellipticity certificates", ok,
           f"grad2 {c_grad.constant:.12g}, cr3 {c_cr.constant:.12g}, degenerate elliptic={c_bad.elliptic}")


def test_criterion_2_calculus_identities(report, systems):
    worst_curl = worst_adj = 0.0
    antisym = True
    for sys, g in systems.values():
        for seed in range(20):
            u = random_scalar(g, seed, band=3)
            V = random_vector(sys, g, seed + 100, band=3)
            Gu = grad_L(sys, u)
            C = curl_L(sys, Gu)
            worst_curl = max(worst_curl, np.abs(C.entries).max() / np.abs(Gu.components).max())
            lhs = np.sum(Gu.components * np.conj(V.components))
            rhs = np.sum(u.values * np.conj(div_Lstar(sys, V).values))
            worst_adj = max(worst_adj, abs(lhs - rhs) / abs(lhs))
            CV = curl_L(sys, V).entries
            antisym &= bool(np.array_equal(CV, -np.swapaxes(CV, 0, 1)))
    ok = worst_curl <= 1e-10 and worst_adj <= 1e-10 and antisym
    report(2, "calculus identities on 20 fields per system", ok,
           f"curl(grad) {worst_curl:.2e}, adjointness {worst_adj:.2e}, antisymmetry exact={antisym}")


def test_criterion_3_hodge(report, systems):
    worst = dict(sum=0.0, div=0.0, idem=0.0, lin=0.0)
    a, b = 0.7 - 1.3j, -2.1 + 0.4j
    for sys, g in systems.values():
        for seed in range(100):
            V = random_vector(sys, g, seed)
            U = random_vector(sys, g, seed + 1000)
            H, HU = hodge_decompose(sys, V), hodge_decompose(sys, U)
            nV = np.abs(V.components).max()
            worst["sum"] = max(worst["sum"], np.abs((H.V1 + H.V2).components - V.components).max() / nV)
            worst["div"] = max(worst["div"], H.residual_div)
            l2 = np.linalg.norm(V.components)
            worst["idem"] = max(worst["idem"],
                                np.linalg.norm(hodge_decompose(sys, H.V1).V2.components) / l2,
                                np.linalg.norm(hodge_decompose(sys, H.V2).V1.components) / l2)
            Hs = hodge_decompose(sys, V * a + U * b)
            for part in ("V1", "V2"):
                want = getattr(H, part).components * a + getattr(HU, part).components * b
                err = np.abs(getattr(Hs, part).components - want).max() / np.abs(want).max()
                worst["lin"] = max(worst["lin"], err)
    ok = worst["sum"] <= 1e-12 and worst["div"] <= 1e-9 and worst["idem"] <= 1e-9 and worst["lin"] <= 1e-10
    report(3, "Hodge decomposition over 100 trials on both systems", ok,
           ", ".join(f"{k} {v:.2e}" for k, v in worst.items()))


def test_criterion_4_witness_certificates(report):
    sys = gradient_system(2)
    # the cutoff ramp needs about 64 cells per unit for 1e-9 residuals
    g = make_grid(2, [768, 768], [12.0, 12.0])
    phi = bump_field(g, (0.0, 0.0), 0.5)
    ball = ((0.0, 0.0), 1.0)
    failures, checked = [], 0
    for p in P_LIST:
        q = p / (p - 1)
        u2 = normalized_bump(g, (0.0, 0.0), 1.0, 2.0)
        pairs = [witness_small_p(sys, u2, ball, 0, 1, p) if p <= 2
                 else witness_large_p(sys, u2, ball, 0, 1, p),
                 witness_unit_ball(sys, normalized_bump(g, (0.0, 0.0), 1.0, q), 0, 1, p),
                 factorize_phi(sys, phi, "grad", p),
                 factorize_phi(sys, phi, "div", p)]
        for P in pairs:
            variants = [("base", P)] + [(f"R={R}", rescale_to_ball(P, x0, R))
                                         for R, x0 in ((1.0, (1.0, -1.0)), (2.0, (0.5, 0.0)))]
            for tag, Q in variants:
                checked += 1
                for e in Q.certificate.failures():
                    failures.append(f"p={p:.4g} {Q.kind} {tag} {e.name}={e.value:.2e}")
    report(4, "witness certificates incl. rescale R in {1, 2}", not failures,
           f"{checked} certificates" + (f"; failed: {failures}" if failures else ""))


def test_criterion_5_norm_oracles(report):
    g16 = make_grid(3, [16, 16, 16], [4.0, 4.0, 4.0])
    errs = {}
    f = random_scalar(g16, 0, band=4)
    balls = make_ball_family(g16, stride=2)
    _, pts, stats = brute_ball_stats(f, 2, balls.radii)
    want = np.zeros(len(pts))
    for inside, avg_abs, _ in stats.values():
        want = np.maximum(want, np.max(np.where(inside.T, avg_abs[None, :], 0.0), axis=1))
    errs["hl"] = np.max(np.abs(hl_maximal(f, balls).values.real.ravel() - want)) / want.max()
    vol = lambda r: 4 / 3 * np.pi * r**3  # noqa: E731
    osc = max(stats[r][2].max() for r in balls.radii if vol(r) <= 1)
    big = max(stats[r][1].max() for r in balls.radii if vol(r) > 1)
    got_osc, got_big = bmo_terms(f, balls)
    errs["bmo"] = max(_rel(got_osc, osc), _rel(got_big, big), _rel(bmo_norm(f, balls), osc + big))
    dv = g16.cell_volume
    h = random_scalar(g16, 1, band=4)
    errs["lp"] = max(_rel(lp_norm(f, p), (math.fsum(np.abs(f.values.ravel()) ** p) * dv) ** (1 / p))
                     for p in P_LIST)
    prod = (h.values * np.conj(f.values)).ravel()
    errs["pair"] = _rel(pair(h, f), complex(math.fsum(prod.real), math.fsum(prod.imag)) * dv)
    s = complex(math.fsum(f.values.real.ravel()), math.fsum(f.values.imag.ravel())) * dv
    errs["integral"] = abs(integrate(f) - s) / max(abs(s), np.abs(f.values).max() * dv)
    m = dyadic_scales(g16, min_cells=2)
    errs["h1"] = _rel(h1_norm(f, m), math.fsum(grand_maximal(f, m).values.real.ravel()) * dv)
    b3 = bmo_norm(ScalarField(g16, np.full(g16.dims, 3.0)), balls)
    g64 = make_grid(2, [64, 64], [1, 1])
    small = MollifierSpec((0.25, 0.0625))
    large = MollifierSpec((0.5, 0.25, 0.125, 0.0625))
    monotone = all(
        np.all(grand_maximal(u, large).values.real >= grand_maximal(u, small).values.real)
        for u in (random_scalar(g64, seed, band=8) for seed in range(20)))
    ok = max(errs.values()) <= 1e-12 and abs(b3 - 3) <= 1e-12 and g16.volume == 64 and monotone
    report(5, "norm estimators against brute force", ok,
           ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
           + f", bmo(3) = {b3:.15g}, monotone on 20 trials={monotone}")


@pytest.mark.parametrize("exp", ["thm-a", "thm-12", "thm-13"])
def test_criterion_6_ratio_stability(report, exp):
    r = run_experiment({"ensemble": {"seed": 42, "count": 100, "band_limit": 8},
                        "grid": {"dims": [64, 64], "box": [1.0, 1.0]},
                        "p_list": P_LIST}, exp, refine=True)
    a = r.assertions
    ok = (a["finite_max_ratio"]["passed"] and a["fine_finite_max_ratio"]["passed"]
          and a["cross_check"]["value"] <= 1e-9 and a["fine_cross_check"]["value"] <= 1e-9
          and a["refine_max_ratio"]["value"] <= 0.25)
    maxes = ", ".join(f"p={row['p']}: {row['coarse_max_ratio']:.4g} -> {row['fine_max_ratio']:.4g}"
                      for row in r.refinement["table"])
    report(6, f"{exp} ratio stability 64^2 -> 128^2", ok,
           f"{maxes}; cross-check {a['cross_check']['value']:.1e}; "
           f"refine change {a['refine_max_ratio']['value']:.2%}")


def test_criterion_7_calderon(report):
    rg = run_experiment({"ensemble": {"count": 100}}, "lemma-21")
    dev = max(abs(row["ratio"] - 1) for row in rg.trials)
    cr = run_experiment({"system": system_to_dict(cr_system()),
                         "grid": {"dims": [32, 32, 32], "box": [1.0, 1.0, 1.0]},
                         "ensemble": {"count": 100, "band_limit": 8}}, "lemma-21")
    at2 = [row for row in cr.trials if row["p"] == 2.0]
    gap = max(row["ratio"] / row["oracle"] - 1 for row in at2)
    ok = (len(rg.trials) == 300 and dev <= 1e-10 and len(at2) == 100
          and gap <= 1e-10 and cr.assertions["finite_max_ratio"]["passed"])
    report(7, "Calderon ratio: gradient unity, CR below oracle", ok,
           f"gradient max |ratio - 1| {dev:.1e} over {len(rg.trials)} rows; "
           f"CR max ratio/oracle - 1 {gap:.1e} over {len(at2)} trials")


def test_criterion_8_theorem_b(report):
    r = run_experiment({}, "thm-b", refine=True)
    a = r.assertions
    # the C_grid bound itself, re-derived from the rows
    bound_ok = all(row["lhs"] <= r.summary[f"{row['p']:.6g}"]["C_grid"] * row["rhs"] * (1 + 1e-12)
                   for row in r.trials)
    ok = (bound_ok and a["refine_C_grid"]["value"] <= 0.20 and a["band"]["passed"]
          and a["refine_ratio"]["value"] <= 0.25 and len(r.refinement["pairs"]) == 30)
    cg = ", ".join(f"p={row['p']}: {row['coarse_C_grid']:.4f} -> {row['fine_C_grid']:.4f}"
                   for row in r.refinement["table"])
    report(8, "thm-b two-sided bmo bound over a 10-field suite", ok,
           f"C_grid {cg}; C_grid change {a['refine_C_grid']['value']:.2%}, "
           f"per-field change {a['refine_ratio']['value']:.2%}, band held={a['band']['passed']}")


def test_criterion_9_reproducibility(report):
    same = {}
    for exp in ("thm-a", "lemma-21", "thm-b"):
        cfg = {} if exp == "thm-b" else {"ensemble": {"seed": 7, "count": 20}}
        one = run_experiment(cfg, exp, threads=1).to_json(timestamp=False)
        four = run_experiment(cfg, exp, threads=4).to_json(timestamp=False)
        same[exp] = one == four
    report(9, "byte-identical reports across threads {1, 4}", all(same.values()), str(same))
