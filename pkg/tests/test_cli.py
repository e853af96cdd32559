import json
import shutil
import subprocess

import jsonschema
import numpy as np
import pytest

from divcurl import cr_system, gradient_system, make_grid, new_system
from divcurl.cli import main
from divcurl.cvf import read_field
from divcurl.elliptic import system_to_dict
from divcurl.harness import report_schema
from divcurl.grid import integrate
from divcurl.norms import lp_norm


@pytest.fixture
def sysfiles(tmp_path):
    out = {}
    for name, s in [("grad2", gradient_system(2)), ("cr3", cr_system())]:
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(system_to_dict(s)))
        out[name] = str(path)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(system_to_dict(new_system(2, 3, [[0], [0]]))))
    out["degenerate"] = str(bad)
    return out


def run(*argv):
    return main([str(a) for a in argv])


def test_elliptic_check(sysfiles, tmp_path, capsys):
    assert run("elliptic", "check", "--system", sysfiles["grad2"], "--json", tmp_path / "c.json") == 0
    assert "constant 1:" in capsys.readouterr().out
    cert = json.loads((tmp_path / "c.json").read_text())["certificate"]
    assert abs(cert["constant"] - 1) <= 1e-6
    assert run("elliptic", "check", "--system", sysfiles["cr3"]) == 0


def test_non_elliptic_exit_status(sysfiles):
    assert run("elliptic", "check", "--system", sysfiles["degenerate"]) == 1


@pytest.mark.parametrize(
    "argv",
    [
        ["frobnicate"],
        [],
        ["elliptic"],
        ["norm", "sup", "--in", "x.cvf"],
        ["verify", "thm-z"],
        ["field", "gen", "--dims", "16", "--box", "1", "2", "--out", "x.cvf"],
        ["field", "gen", "--dims", "15", "--box", "1", "--out", "x.cvf"],
        ["norm", "lp", "--in", "missing.cvf"],
        ["elliptic", "check", "--system", "missing.json"],
    ],
)
def test_usage_errors(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "verify" in capsys.readouterr().out


def test_bump_mass(tmp_path):
    f = tmp_path / "bump.cvf"
    assert run("field", "gen", "--kind", "bump", "--dims", 128, 128, "--box", 4, 4,
               "--radius", 1.0, "--mass", 2.5, "--out", f) == 0
    u = read_field(f)
    # independent quadrature: plain cell sum
    dx = (4 / 128) ** 2
    assert abs(np.sum(u.values) * dx - 2.5) <= 1e-6
    assert abs(integrate(u) - 2.5) <= 1e-6


def test_plane_wave_round_trip(tmp_path):
    a, b = tmp_path / "a.cvf", tmp_path / "b.cvf"
    assert run("field", "gen", "--kind", "plane-wave", "--k", 2, -1, "--dims", 16, 8,
               "--box", 1, 2, "--out", a) == 0
    u = read_field(a)
    g = make_grid(2, [16, 8], [1, 2])
    x, y = g.coords
    assert np.max(np.abs(u.values - np.exp(2j * np.pi * (2 * x - y / 2)))) < 1e-14
    from divcurl.cvf import write_field

    write_field(u, b)
    assert a.read_bytes() == b.read_bytes()


def test_overwrite_needs_force(tmp_path, capsys):
    f = tmp_path / "u.cvf"
    argv = ["field", "gen", "--band", 4, "--dims", 16, 16, "--box", 1, 1, "--out", f]
    assert run(*argv) == 0
    before = f.read_bytes()
    assert run(*argv, "--seed", 7) == 2
    assert "--force" in capsys.readouterr().err
    assert f.read_bytes() == before
    assert run(*argv, "--seed", 7, "--force") == 0
    assert f.read_bytes() != before


def test_random_field_deterministic(tmp_path, sysfiles):
    a, b = tmp_path / "a.cvf", tmp_path / "b.cvf"
    for f in (a, b):
        assert run("field", "gen", "--system", sysfiles["grad2"], "--field-kind", "div_free",
                   "--band", 4, "--index", 3, "--dims", 32, 32, "--box", 1, 1, "--out", f) == 0
    assert a.read_bytes() == b.read_bytes()


def test_op_pipeline(tmp_path, sysfiles):
    u, V, d, C, s = (tmp_path / n for n in ("u.cvf", "V.cvf", "d.cvf", "C.cvf", "s.cvf"))
    sysf = sysfiles["cr3"]
    assert run("field", "gen", "--band", 3, "--dims", 16, 16, 16, "--box", 1, 1, 1, "--out", u) == 0
    assert run("op", "grad", "--system", sysf, "--in", u, "--out", V) == 0
    assert run("op", "curl", "--system", sysf, "--in", V, "--out", C) == 0
    # matrix fields are stored as n*n flattened components
    assert np.abs(read_field(C).components).max() <= 1e-10 * np.abs(read_field(V).components).max()
    assert run("op", "div", "--system", sysf, "--in", V, "--out", d) == 0
    assert run("op", "dot", "--in", V, V, "--out", s, "--pairing", "sesq") == 0
    vv = read_field(s).values
    assert np.abs(vv.imag).max() <= 1e-15 * np.abs(vv).max()
    # type errors are usage errors and write nothing
    assert run("op", "div", "--system", sysf, "--in", u, "--out", tmp_path / "x.cvf") == 2
    assert run("op", "dot", "--in", V, "--out", tmp_path / "x.cvf") == 2
    assert not (tmp_path / "x.cvf").exists()


def test_hodge_command(tmp_path, sysfiles):
    V = tmp_path / "V.cvf"
    assert run("field", "gen", "--system", sysfiles["grad2"], "--field-kind", "vector",
               "--dims", 32, 32, "--box", 1, 1, "--out", V) == 0
    args = ["hodge", "--system", sysfiles["grad2"], "--in", V, "--out1", tmp_path / "V1.cvf",
            "--out2", tmp_path / "V2.cvf", "--report", tmp_path / "h.json", "--p", 2, 4]
    assert run(*args) == 0
    rep = json.loads((tmp_path / "h.json").read_text())
    assert rep["passed"] and rep["residual_div"] <= 1e-9
    V0, V1, V2 = (read_field(tmp_path / n) for n in ("V.cvf", "V1.cvf", "V2.cvf"))
    assert np.abs(V1.components + V2.components - V0.components).max() <= 1e-12 * np.abs(V0.components).max()
    # outputs exist now, so a rerun without --force is refused
    assert run(*args) == 2


def test_norm_command(tmp_path, capsys):
    f = tmp_path / "u.cvf"
    # a volume-16 box has balls on both sides of volume 1
    assert run("field", "gen", "--band", 4, "--dims", 64, 64, "--box", 4, 4, "--out", f) == 0
    capsys.readouterr()
    assert run("norm", "lp", "--in", f, "--p", 3, "--json") == 0
    info = json.loads(capsys.readouterr().out)
    assert abs(info["value"] - lp_norm(read_field(f), 3)) <= 1e-15 * info["value"]
    for kind in ("h1", "bmo"):
        assert run("norm", kind, "--in", f, "--json", tmp_path / f"{kind}.json") == 0
        assert json.loads((tmp_path / f"{kind}.json").read_text())["value"] > 0


@pytest.mark.parametrize("kind", ["small-p", "large-p", "unit", "factor-grad", "factor-div"])
def test_witness_command(tmp_path, sysfiles, kind):
    p = 4 if kind == "large-p" else 1.5
    cert = tmp_path / "cert.json"
    assert run("witness", kind, "--system", sysfiles["grad2"], "--p", p, "--dims", 256, 256,
               "--box", 4, 4, "--out-v", tmp_path / "V.cvf", "--out-w", tmp_path / "W.cvf",
               "--cert", cert) == 0
    d = json.loads(cert.read_text())
    assert d["certificate"]["passed"]
    assert read_field(tmp_path / "V.cvf").grid.dims == (256, 256)


def test_witness_bad_indices(sysfiles):
    assert run("witness", "small-p", "--system", sysfiles["grad2"], "--i", 1, "--j", 1,
               "--dims", 32, 32, "--box", 4, 4) == 2


def test_verify_twice_identical(tmp_path):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"grid": {"dims": [32, 32], "box": [1, 1]},
                               "ensemble": {"seed": 42, "count": 5, "band_limit": 4}}))
    outs = []
    for k, threads in enumerate((1, 4)):
        r = tmp_path / f"r{k}.json"
        assert run("verify", "thm-a", "--config", cfg, "--json", r, "--csv", tmp_path / "r.csv",
                   "--threads", threads) == 0
        d = json.loads(r.read_text())
        jsonschema.validate(d, report_schema())
        d.pop("timestamp")
        outs.append(d)
    assert outs[0] == outs[1]
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "trial,p,lhs,rhs,ratio"


def test_verify_config_error(tmp_path):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"ensemble": {"count": 0}}))
    assert run("verify", "thm-a", "--config", cfg, "--json", tmp_path / "r.json") == 2
    assert not (tmp_path / "r.json").exists()


def test_failed_certificate_exit_one(tmp_path, sysfiles, capsys):
    # 8 cells per unit cannot resolve the cutoff ramp, so the certificate fails
    cert = tmp_path / "cert.json"
    assert run("witness", "small-p", "--system", sysfiles["grad2"], "--dims", 32, 32,
               "--box", 4, 4, "--cert", cert) == 1
    assert "FAIL" in capsys.readouterr().out
    assert not json.loads(cert.read_text())["certificate"]["passed"]


@pytest.mark.skipif(shutil.which("divcurl") is None, reason="console script not installed")
def test_console_script(sysfiles):
    res = subprocess.run(["divcurl", "elliptic", "check", "--system", sysfiles["grad2"]],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "elliptic" in res.stdout
