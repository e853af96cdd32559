"""Command line entry point: ``divcurl <command> ...``.

Exit status is 0 on success, 1 when a declared check fails (ellipticity,
certificate, Hodge residual, experiment assertion) and 2 on usage, config or
IO errors. Output files are staged and renamed into place only after every
computation has finished, so a failing run leaves no partial files behind.
Options from a ``--config`` file override the corresponding flags.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import cvf
from .elliptic import (
    EllipticSystem,
    NotEllipticError,
    SystemDefinitionError,
    certify_ellipticity,
    gradient_system,
    load_system,
    system_to_dict,
)
from .grid import GridError, GridMismatchError, ScalarField, make_grid
from .harness import EXPERIMENTS, EnsembleSpec, HarnessError, random_field, run_experiment
from .hodge import hodge_decompose
from .norms import bmo_terms, dyadic_scales, h1_norm, lp_norm, make_ball_family
from .operators import Pairing, curl_L, div_Lstar, dot, grad_L
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

__all__ = ["main", "build_parser", "UsageError"]

HODGE_TOL = 1e-9
WITNESS_KINDS = {"small-p": "small_p", "large-p": "large_p", "unit": "unit_ball",
                 "factor-grad": "grad", "factor-div": "div"}


class UsageError(ValueError):
    """Inconsistent or missing command line arguments."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- outputs


class Outputs:
    """Files to write once the command has succeeded."""

    def __init__(self, force: bool = False):
        self.force = force
        self.items: list[tuple[Path, bytes]] = []

    def claim(self, path, guarded: bool = True) -> Path:
        """Register ``path`` early; field files may not be overwritten without ``--force``."""
        path = Path(path)
        if guarded and path.exists() and not self.force:
            raise FileExistsError(f"{path} exists (pass --force to overwrite)")
        if not path.parent.exists():
            raise FileNotFoundError(f"directory {path.parent} does not exist")
        return path

    def add(self, path, data) -> None:
        if isinstance(data, str):
            data = data.encode()
        self.items.append((Path(path), data))

    def commit(self) -> None:
        staged = []
        try:
            for path, data in self.items:
                fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                staged.append((tmp, path))
            for tmp, path in staged:
                os.replace(tmp, path)
        finally:
            for tmp, _ in staged:
                if os.path.exists(tmp):
                    os.unlink(tmp)


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _say(args, *lines) -> None:
    if not args.quiet:
        for line in lines:
            print(line)


def _resolved(args) -> dict:
    skip = {"handler", "threads", "quiet", "tol_report", "force"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# ----------------------------------------------------------------- inputs


def _system(args) -> EllipticSystem:
    if getattr(args, "system", None):
        return load_system(args.system)
    return gradient_system(2)


def _read(path, kind="auto"):
    return cvf.read_field(path, kind)


def _grid(args, default_dims=None, default_box=None):
    box = args.box or default_box
    dims = args.dims or default_dims
    if box is None or dims is None:
        raise UsageError("--dims and --box are required")
    if len(dims) != len(box):
        raise UsageError("--dims and --box need the same number of entries")
    return make_grid(len(dims), dims, box)


def _indices(args, sys):
    i, j = args.i - 1, args.j - 1
    if not (0 <= i < sys.n and 0 <= j < sys.n) or i == j:
        raise UsageError(f"--i and --j must be distinct indices in 1..{sys.n}")
    return i, j


# --------------------------------------------------------------- commands


def cmd_elliptic_check(args) -> int:
    sys_ = _system(args)
    cert = certify_ellipticity(sys_, sphere_resolution=args.samples)
    out = Outputs(force=True)
    if args.json:
        out.claim(args.json, guarded=False)
        out.add(args.json, _json({"system": system_to_dict(sys_), "certificate": cert.to_dict(),
                                  "config": _resolved(args)}))
    out.commit()
    verdict = "elliptic" if cert.elliptic else "NOT elliptic"
    _say(args, f"{sys_}", f"constant {cert.constant:.12g}: {verdict}")
    return 0 if cert.elliptic else 1


def cmd_field_gen(args) -> int:
    out = Outputs(args.force)
    out.claim(args.out)
    grid = _grid(args)
    kind = args.kind
    if kind == "random":
        sys_ = _system(args) if args.field_kind != "scalar" else None
        spec = EnsembleSpec(args.seed, args.index + 1, args.band, args.field_kind, args.localize)
        f = random_field(grid, spec, args.index, sys_)
    elif kind == "plane-wave":
        k = args.k or [1] + [0] * (grid.N - 1)
        if len(k) != grid.N:
            raise UsageError(f"--k needs {grid.N} integers")
        phase = sum(2 * np.pi * kk * x / L for kk, x, L in zip(k, grid.coords, grid.box))
        f = ScalarField(grid, np.exp(1j * phase))
    else:
        center = args.center or [0.0] * grid.N
        if len(center) != grid.N:
            raise UsageError(f"--center needs {grid.N} coordinates")
        if kind == "bump":
            f = bump_field(grid, center, args.radius, mass=args.mass)
        else:
            f = make_cutoff(grid, center, args.radius)
    out.add(args.out, cvf.encode(f))
    out.commit()
    _say(args, f"wrote {kind} field on {grid.dims} to {args.out}")
    return 0


def cmd_op(args) -> int:
    out = Outputs(args.force)
    out.claim(args.out)
    sys_ = _system(args)
    op = args.op
    if op == "dot":
        if len(args.inputs) != 2:
            raise UsageError("dot needs two inputs: --in V.cvf W.cvf")
        V, W = (_read(p, "vector") for p in args.inputs)
        res = dot(V, W, Pairing.parse(args.pairing))
    else:
        if len(args.inputs) != 1:
            raise UsageError(f"{op} takes one input")
        if op == "grad":
            res = grad_L(sys_, _read(args.inputs[0], "scalar"))
        elif op == "div":
            res = div_Lstar(sys_, _read(args.inputs[0], "vector"))
        else:
            res = curl_L(sys_, _read(args.inputs[0], "vector"))
    out.add(args.out, cvf.encode(res))
    out.commit()
    _say(args, f"{op}: wrote {type(res).__name__} to {args.out}")
    return 0


def cmd_hodge(args) -> int:
    out = Outputs(args.force)
    out.claim(args.out1)
    out.claim(args.out2)
    if args.report:
        out.claim(args.report, guarded=False)
    sys_ = _system(args)
    V = _read(args.inputs, "vector")
    res = hodge_decompose(sys_, V, args.p or ())
    ok = res.residual_div <= HODGE_TOL
    out.add(args.out1, cvf.encode(res.V1))
    out.add(args.out2, cvf.encode(res.V2))
    if args.report:
        rep = dict(res.to_dict(), tolerance=HODGE_TOL, passed=ok, config=_resolved(args))
        out.add(args.report, _json(rep))
    out.commit()
    _say(args, f"div residual of V1: {res.residual_div:.3e} (tolerance {HODGE_TOL:g})")
    for p, (r1, r2) in sorted(res.norm_ratios.items()):
        _say(args, f"p={p:g}: |V1|/|V| = {r1:.6g}, |V2|/|V| = {r2:.6g}")
    return 0 if ok else 1


def cmd_norm(args) -> int:
    out = Outputs(force=True)
    if args.json and args.json != "-":
        out.claim(args.json, guarded=False)
    f = _read(args.inputs)
    info = {"norm": args.kind, "config": _resolved(args)}
    if args.kind == "lp":
        info["value"] = lp_norm(f, args.p)
    else:
        if not isinstance(f, ScalarField):
            raise UsageError(f"{args.kind} needs a scalar field")
        if args.kind == "h1":
            m = dyadic_scales(f.grid, count=args.scales)
            info["scales"] = list(m.scales)
            info["value"] = h1_norm(f, m)
        else:
            balls = make_ball_family(f.grid, args.stride)
            osc, big = bmo_terms(f, balls)
            info.update(value=osc + big, oscillation=osc, large_average=big,
                        radii=list(balls.radii))
    if args.json == "-":
        sys.stdout.write(_json(info))
    elif args.json:
        out.add(args.json, _json(info))
    out.commit()
    if args.json != "-":
        _say(args, f"{args.kind} norm: {info['value']:.12g}")
    return 0


def cmd_witness(args) -> int:
    out = Outputs(args.force)
    for path in (args.out_v, args.out_w):
        if path:
            out.claim(path)
    if args.cert:
        out.claim(args.cert, guarded=False)
    sys_ = _system(args)
    N = sys_.N
    grid = _grid(args, [384] * N, [6.0] * N)
    p = args.p
    if not (1 < p < np.inf):
        raise UsageError(f"--p must satisfy 1 < p < inf, got {p}")
    q = p / (p - 1)
    kind = WITNESS_KINDS[args.kind]
    pairing = Pairing.parse(args.pairing)
    origin = [0.0] * N
    if kind in ("grad", "div"):
        phi = bump_field(grid, origin, args.radius, mass=1.0)
        pair = factorize_phi(sys_, phi, kind, p, pairing)
    else:
        i, j = _indices(args, sys_)
        center = args.center or origin
        if len(center) != N:
            raise UsageError(f"--center needs {N} coordinates")
        # unit-ball pairs need ||grad u||_p' <= 1, the others ||grad u||_2 <= 1
        u = normalized_bump(grid, center, args.radius, q if kind == "unit_ball" else 2.0)
        if kind == "small_p":
            pair = witness_small_p(sys_, u, (center, args.radius), i, j, p, pairing)
        elif kind == "large_p":
            pair = witness_large_p(sys_, u, (center, args.radius), i, j, p, pairing)
        else:
            pair = witness_unit_ball(sys_, u, i, j, p, pairing)
    cert = pair.certificate
    if args.out_v:
        out.add(args.out_v, cvf.encode(pair.V))
    if args.out_w:
        out.add(args.out_w, cvf.encode(pair.W))
    if args.cert:
        out.add(args.cert, _json(dict(pair.summary(), system=system_to_dict(sys_),
                                      grid=grid.to_dict(), config=_resolved(args))))
    out.commit()
    _say(args, f"{pair.kind} witness, p={p:g}: certificate {'passed' if cert.passed else 'FAILED'}")
    if args.tol_report or not cert.passed:
        for e in cert.entries:
            _say(args, f"  {'ok  ' if e.passed else 'FAIL'} {e.name}: {e.value:.3e} <= {e.bound:.3e}")
    return 0 if cert.passed else 1


def cmd_verify(args) -> int:
    out = Outputs(force=True)
    for path in (args.json, args.csv):
        if path:
            out.claim(path, guarded=False)
    config = {}
    if args.config:
        config = json.loads(Path(args.config).read_text())
        if not isinstance(config, dict):
            raise UsageError(f"{args.config} must contain a JSON object")
    config = dict(config)
    # flags fill in what the config leaves open
    if args.system and "system" not in config:
        config["system"] = system_to_dict(load_system(args.system))
    if args.seed is not None:
        ens = dict(config.get("ensemble") or {})
        ens.setdefault("seed", args.seed)
        config["ensemble"] = ens
    report = run_experiment(config, args.experiment, threads=args.threads, refine=args.refine)
    if args.json:
        out.add(args.json, report.to_json())
    if args.csv:
        out.add(args.csv, report.to_csv())
    out.commit()
    _say(args, f"{report.theorem_id} on grid {report.grid['dims']}:")
    for key, s in report.summary.items():
        _say(args, f"  p={key}: max ratio {s['max_ratio']}, median {s['median_ratio']}, "
                   f"retained {s['retained']}, excluded {s['excluded']}")
    for name, a in report.assertions.items():
        if args.tol_report or not a["passed"]:
            _say(args, f"  {'ok  ' if a['passed'] else 'FAIL'} {name}: {a['value']} <= {a['bound']}")
    _say(args, "PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


# ----------------------------------------------------------------- parser


def _globals(defaults: bool) -> argparse.ArgumentParser:
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--seed", type=int, default=d(None), help="seed for all randomness")
    g.add_argument("--threads", type=int, default=d(1), help="worker threads")
    g.add_argument("--tol-report", action="store_true", default=d(False),
                   help="print every checked quantity with its tolerance")
    g.add_argument("--quiet", action="store_true", default=d(False),
                   help="suppress the human-readable summary")
    return g


def _floats(s):
    return [float(v) for v in s]


def build_parser() -> argparse.ArgumentParser:
    common = _globals(False)
    top = _Parser(prog="divcurl", parents=[_globals(True)],
                  description="Spectral laboratory for div-curl estimates.")
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def leaf(parent, name, handler, help_):
        p = parent.add_parser(name, parents=[common], help=help_, description=help_)
        p.set_defaults(handler=handler)
        return p

    def add_system(p, required=False):
        p.add_argument("--system", required=required, help="system JSON {n, N, coeffs}")

    def add_grid(p):
        p.add_argument("--dims", type=int, nargs="+", help="grid points per axis (even)")
        p.add_argument("--box", type=float, nargs="+", help="box side lengths")

    ell = sub.add_parser("elliptic", help="ellipticity checks").add_subparsers(
        dest="action", required=True, parser_class=_Parser)
    p = leaf(ell, "check", cmd_elliptic_check, "certify that a system is elliptic")
    add_system(p, required=True)
    p.add_argument("--samples", type=int, default=10_000, help="sphere samples")
    p.add_argument("--json", help="write the certificate here")

    fld = sub.add_parser("field", help="field files").add_subparsers(
        dest="action", required=True, parser_class=_Parser)
    p = leaf(fld, "gen", cmd_field_gen, "write a random or analytic field to a CVF1 file")
    p.add_argument("--kind", choices=["random", "plane-wave", "bump", "cutoff"], default="random")
    add_grid(p)
    add_system(p)
    p.add_argument("--field-kind", choices=["scalar", "vector", "grad_exact", "div_free"],
                   default="scalar")
    p.add_argument("--band", type=int, default=8, help="band limit of random fields")
    p.add_argument("--index", type=int, default=0, help="ensemble member")
    p.add_argument("--localize", action="store_true")
    p.add_argument("--k", type=int, nargs="+", help="plane-wave mode")
    p.add_argument("--center", type=float, nargs="+")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--mass", type=float, help="rescale the bump to this integral")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true", help="overwrite an existing file")

    p = sub.add_parser("op", parents=[common], help="apply grad_L, div_L*, curl_L or a pairing")
    p.set_defaults(handler=cmd_op)
    p.add_argument("op", choices=["grad", "div", "curl", "dot"])
    add_system(p)
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pairing", default="sesq", choices=["sesq", "bilin"])
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("hodge", parents=[common], help="Hodge decomposition V = V1 + V2")
    p.set_defaults(handler=cmd_hodge)
    add_system(p)
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--out1", required=True)
    p.add_argument("--out2", required=True)
    p.add_argument("--report")
    p.add_argument("--p", type=float, nargs="*", help="exponents for norm ratios")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("norm", parents=[common], help="L^p, h^1 or bmo norm of a field")
    p.set_defaults(handler=cmd_norm)
    p.add_argument("kind", choices=["lp", "h1", "bmo"])
    p.add_argument("--in", dest="inputs", required=True)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--scales", type=int, default=5, help="number of dyadic scales")
    p.add_argument("--stride", type=int, default=2, help="ball centre stride in cells")
    p.add_argument("--json", nargs="?", const="-", help="write JSON here (stdout if no path)")

    p = sub.add_parser("witness", parents=[common], help="build a certified witness pair")
    p.set_defaults(handler=cmd_witness)
    p.add_argument("kind", choices=list(WITNESS_KINDS))
    add_system(p)
    add_grid(p)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--i", type=int, default=1, help="first index (1-based)")
    p.add_argument("--j", type=int, default=2, help="second index (1-based)")
    p.add_argument("--radius", type=float, default=1.0, help="ball or bump radius")
    p.add_argument("--center", type=float, nargs="+")
    p.add_argument("--pairing", default="sesq", choices=["sesq", "bilin"])
    p.add_argument("--out-v")
    p.add_argument("--out-w")
    p.add_argument("--cert")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("verify", parents=[common], help="run a ratio experiment")
    p.set_defaults(handler=cmd_verify)
    p.add_argument("experiment", choices=list(EXPERIMENTS))
    add_system(p)
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--json")
    p.add_argument("--csv")
    p.add_argument("--refine", action="store_true", help="repeat on a grid twice as fine")
    return top


_USAGE_ERRORS = (UsageError, HarnessError, WitnessError, SystemDefinitionError, NotEllipticError,
                 GridError, GridMismatchError, cvf.CVFError, OSError, json.JSONDecodeError,
                 ValueError)


def main(argv=None) -> int:
    """Run the command line tool and return its exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    for key, val in (("seed", None), ("threads", 1), ("tol_report", False), ("quiet", False)):
        if not hasattr(args, key):
            setattr(args, key, val)
    if args.seed is None and args.handler is cmd_field_gen:
        args.seed = 42
    try:
        return args.handler(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
