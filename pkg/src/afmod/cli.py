"""afmod command line.

    afmod verify-fiber|solve|verify-af|holonomy|report [--config PATH]
          [--seed N] [--threads N] [--out DIR]

Exit codes: 0 all checks pass, 1 verification failure, 2 the solve left
the almost-Fuchsian regime or stalled, 3 usage, config or missing-artifact
error.  Every artifact is written with sorted keys and no timestamps, so a
rerun with the same config and seed reproduces it byte for byte.
"""

import argparse
import contextlib
import copy
import filecmp
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import jsonschema
import numpy as np

from . import af3d, criteria, germ, higgs, surface
from .errors import (AfmodError, ArtifactNotFound, ConfigError, ContinuationStall,
                     LeavesAlmostFuchsianRegime)

SCHEMA_ID = "afmod-config-v1"
GUARD_TOL = 1e-8
SOLVE_FILES = ("mesh.json", "sigma.json", "u.csv", "trace.csv", "summary.json")

DEFAULTS = {
    "schema": SCHEMA_ID,
    "seed": 0,
    "threads": 1,
    "mesh": {"level": 4},
    "series": {"seed_poly": [1.0, 0.5, 0.3, 0.2], "radius": 13.0, "peak": 0.3},
    "sigma_scale": 1.0,
    "solver": {},
    "fiber": {"samples": 1000, "fd_h": 1e-5},
    "af": {"samples": 20, "t_range": [-3.0, 3.0]},
    "holonomy": {"n_steps": 256, "basepoint": [0.0, 0.0], "relator_tol": None},
}

_pos = {"type": "number", "exclusiveMinimum": 0}
_complex = {"oneOf": [{"type": "number"},
                      {"type": "array", "items": {"type": "number"}, "minItems": 2,
                       "maxItems": 2}]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema"],
    "properties": {
        "schema": {"const": SCHEMA_ID},
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 1},
        "mesh": {"type": "object", "additionalProperties": False,
                 "properties": {"level": {"type": "integer", "minimum": 1, "maximum": 7}}},
        "series": {"type": "object", "additionalProperties": False,
                   "properties": {"seed_poly": {"type": "array", "items": _complex,
                                                "minItems": 1},
                                  "radius": _pos, "peak": _pos}},
        "sigma_scale": {"type": "number", "minimum": 0},
        "solver": {"type": "object", "additionalProperties": False,
                   "properties": {"newton_tol": _pos, "max_newton_iters": {"type": "integer",
                                                                           "minimum": 1},
                                  "dt_init": _pos, "dt_min": _pos, "cg_tol": _pos,
                                  "fd_h": _pos}},
        "fiber": {"type": "object", "additionalProperties": False,
                  "properties": {"samples": {"type": "integer", "minimum": 1}, "fd_h": _pos}},
        "af": {"type": "object", "additionalProperties": False,
               "properties": {"samples": {"type": "integer", "minimum": 1},
                              "t_range": {"type": "array", "items": {"type": "number"},
                                          "minItems": 2, "maxItems": 2}}},
        "holonomy": {"type": "object", "additionalProperties": False,
                     "properties": {"n_steps": {"type": "integer", "minimum": 8},
                                    "basepoint": {"type": "array",
                                                  "items": {"type": "number"},
                                                  "minItems": 2, "maxItems": 2},
                                    "relator_tol": {"oneOf": [_pos, {"type": "null"}]}}},
    },
}

HELP_EPILOG = """\
defaults (used for any key the config omits):
  seed 0, threads 1, mesh.level 4,
  series.seed_poly [1, 0.5, 0.3, 0.2], series.radius 13, series.peak 0.3,
  sigma_scale 1, solver: newton_tol 1e-10, max_newton_iters 30, dt_init 0.25,
  dt_min 1e-4, cg_tol 1e-12, fd_h 1e-6,
  fiber.samples 1000, fiber.fd_h 1e-5, af.samples 20, af.t_range [-3, 3],
  holonomy.n_steps 256, holonomy.basepoint [0, 0],
  holonomy.relator_tol null (1e-6 when sigma = 0, else 10x the Gauss floor).
A config file must carry "schema": "afmod-config-v1".  --seed and --threads
override the config; AFMOD_OUT overrides --out (default ./afmod-out).
"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="afmod", description="Almost-Fuchsian germ solver and verifier.",
                epilog=HELP_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON config (schema afmod-config-v1)")
    p.add_argument("--seed", type=int, help="RNG seed for all randomized sweeps (default 0)")
    p.add_argument("--threads", type=int, help="worker cap (default 1, bit-reproducible)")
    p.add_argument("--out", default="afmod-out", help="artifact directory")
    return p


# ---------------------------------------------------------------- config

def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(path=None, seed=None, threads=None):
    user = {"schema": SCHEMA_ID}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
    try:
        jsonschema.validate(user, SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(x) for x in e.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {e.message}") from None
    cfg = _merge(DEFAULTS, user)
    if seed is not None:
        if seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg["seed"] = seed
    if threads is not None:
        if threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg["threads"] = threads
    lo, hi = cfg["af"]["t_range"]
    if not lo < hi:
        raise ConfigError("af.t_range must be increasing")
    germ.SolverConfig.from_dict(cfg["solver"])
    return cfg


def _seed_poly(cfg):
    return tuple(complex(*c) if isinstance(c, list) else complex(c)
                 for c in cfg["series"]["seed_poly"])


# ---------------------------------------------------------------- artifacts

def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(out, name, text):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _read(out, name):
    path = out / name
    if not path.is_file():
        raise ArtifactNotFound(f"{path} is missing; run the command that produces it first")
    return path.read_text()


def sigma_to_json(sigma, cfg):
    doc = {"coeffs": [[float(c.real), float(c.imag)] for c in sigma.coeffs],
           "radius": float(sigma.radius), "n_terms": int(sigma.n_terms),
           "automorphy_residual": float(sigma.automorphy_residual),
           "seed_poly": [[c.real, c.imag] for c in _seed_poly(cfg)],
           "peak": cfg["series"]["peak"], "sigma_scale": cfg["sigma_scale"]}
    return _dump(doc)


def sigma_from_json(text):
    d = json.loads(text)
    coeffs = np.array([complex(a, b) for a, b in d["coeffs"]])
    return surface.QuadDiffField(coeffs, d["radius"], d["n_terms"], d["automorphy_residual"])


def u_to_csv(mesh, u):
    lines = ["class,x,y,u"]
    for k, (z, v) in enumerate(zip(mesh.class_positions, u)):
        lines.append(f"{k},{z.real:.17g},{z.imag:.17g},{v:.17g}")
    return "\n".join(lines) + "\n"


def u_from_csv(text, n):
    rows = [ln.split(",") for ln in text.strip().splitlines()[1:]]
    if len(rows) != n:
        raise ArtifactNotFound(f"u.csv has {len(rows)} rows, the mesh has {n} classes")
    return np.array([float(r[3]) for r in rows])


def load_germ(out, G):
    """(GermPair, summary) from the solve artifacts in ``out``."""
    summary = json.loads(_read(out, "summary.json"))
    if summary.get("status") != "ok":
        raise ArtifactNotFound(f"no solved state in {out} (solve status {summary.get('status')})")
    mesh, _ = surface.mesh_from_json(G, _read(out, "mesh.json"))
    sigma = sigma_from_json(_read(out, "sigma.json"))
    u = u_from_csv(_read(out, "u.csv"), mesh.n_classes)
    return germ.GermPair(mesh, u, sigma, 1.0), summary


def _guard(pair):
    """max |F(u)|; tampered or foreign u fields fail here."""
    return float(np.abs(germ.residual_gauss(pair.mesh, pair.u, pair.sigma, pair.t)).max())


def _build_sigma(G, cfg):
    s = surface.build_quad_diff(G, _seed_poly(cfg), radius=cfg["series"]["radius"],
                                normalize_to=cfg["series"]["peak"])
    return s.scaled(cfg["sigma_scale"])


def _verdict(checks):
    return 0 if all(c.passed for c in checks) else 1


# ---------------------------------------------------------------- commands

def cmd_verify_fiber(cfg, out):
    rng = np.random.default_rng(cfg["seed"])
    suites = criteria.fiber_suites(rng, cfg["fiber"]["samples"], cfg["fiber"]["fd_h"],
                                   criteria.ordered_map(cfg["threads"]))
    doc = {"seed": cfg["seed"], "suites": [s.to_dict() for s in suites],
           "status": "pass" if _verdict(suites) == 0 else "fail"}
    _write(out, "fiber_report.json", _dump(doc))
    for s in suites:
        print(f"{s.name}: {'pass' if s.passed else 'FAIL'}")
    return _verdict(suites)


def cmd_solve(cfg, out):
    G = surface.build_bolza_group()
    mesh = surface.build_mesh(G, cfg["mesh"]["level"])
    sigma = _build_sigma(G, cfg)
    scfg = germ.SolverConfig.from_dict(cfg["solver"])
    _write(out, "mesh.json", mesh.to_json() + "\n")
    _write(out, "sigma.json", sigma_to_json(sigma, cfg))
    (out / "u.csv").unlink(missing_ok=True)
    summary = {"level": mesh.level, "n_classes": mesh.n_classes,
               "sigma_scale": cfg["sigma_scale"], "sigma_is_zero": bool(sigma.is_zero())}
    try:
        pair, trace = germ.continuation_solve(mesh, sigma, scfg)
    except (LeavesAlmostFuchsianRegime, ContinuationStall) as e:
        _write(out, "trace.csv", e.trace.to_csv() if e.trace is not None else "")
        summary.update(status="regime_exit", error_code=e.code, message=str(e),
                       last_good_t=e.last_good_t)
        _write(out, "summary.json", _dump(summary))
        print(f"solve: {e.code} (last good t = {e.last_good_t:.6g})")
        return e.exit_code
    except AfmodError as e:
        summary.update(status="error", error_code=e.code, message=str(e))
        _write(out, "summary.json", _dump(summary))
        raise
    _write(out, "u.csv", u_to_csv(mesh, pair.u))
    _write(out, "trace.csv", trace.to_csv())
    summary.update(status="ok", error_code=None, final_t=trace.records[-1].t,
                   steps=len(trace), newton_residual=_guard(pair),
                   max_sigma_norm=float(pair.sigma_norm().max()),
                   u_sup=float(np.abs(pair.u).max()))
    _write(out, "summary.json", _dump(summary))
    print(f"solve: ok in {len(trace)} steps, max |sigma|_g = {summary['max_sigma_norm']:.6g}")
    return 0


def _guarded_germ(out, G, report_name):
    pair, _ = load_germ(out, G)
    res = _guard(pair)
    if res > GUARD_TOL:
        _write(out, report_name, _dump({"status": "gauss_guard_failed", "gauss_residual": res,
                                        "guard_tolerance": GUARD_TOL}))
        print(f"Gauss residual {res:.3e} exceeds {GUARD_TOL:.0e}; nothing evaluated")
        return pair, None
    return pair, criteria.germ_from_pair(pair, G)


def cmd_verify_af(cfg, out):
    G = surface.build_bolza_group()
    pair, g = _guarded_germ(out, G, "af_summary.json")
    if g is None:
        return 1
    rng = np.random.default_rng(cfg["seed"])
    mapper = criteria.ordered_map(cfg["threads"])
    n, t_range = cfg["af"]["samples"], tuple(cfg["af"]["t_range"])
    fuchsian = g.lam is surface.lambda0
    floor = criteria.gauss_floor(g, rng, n)
    rows = af3d.curvature_sweep(g, n, rng, t_range, mapper)
    mean = af3d.mean_curvature_sweep(g, n, rng, t_range, mapper)
    pts = af3d.sample_octagon(rng, n)
    eig = criteria.boundary_eigen_error(g, pts)
    cons = af3d.fiber_consistency_check(g, pts)
    _write(out, "curvature.csv", af3d.rows_to_csv(rows))
    _write(out, "mean_curvature.csv", af3d.rows_to_csv(mean))
    _write(out, "boundary.json", _dump({
        "points": [[z.real, z.imag] for z in pts],
        "eigenvalue_error": eig,
        "deviation_plus": cons.deviation_plus.tolist(),
        "deviation_minus": cons.deviation_minus.tolist(),
        "swap_deviation": cons.swap_deviation}))
    tol = 1e-4 if fuchsian else 10 * floor
    K = np.array([r[3] for r in rows])
    checks = [
        criteria.Check("sectional_curvature", np.abs(K + 1).max() <= tol,
                       {"max_deviation": np.abs(K + 1).max(), "mean": K.mean(),
                        "max_fd_error": max(r[4] for r in rows), "gauss_floor": floor},
                       {"max_deviation": tol}),
        criteria.Check("mean_curvature", max(r[4] for r in mean) < 1e-4,
                       {"max_fd_difference": max(r[4] for r in mean)}, {"max_fd_difference": 1e-4}),
        criteria.Check("boundary", eig < 1e-10 and cons.sup_deviation < 1e-8,
                       {"eigenvalue_error": eig, "consistency_deviation": cons.sup_deviation},
                       {"eigenvalue_error": 1e-10, "consistency_deviation": 1e-8}),
    ]
    if fuchsian:
        checks.append(criteria.Check(
            "fd_error_estimate", max(r[4] for r in rows) < 1e-4,
            {"max_fd_error": max(r[4] for r in rows)}, {"max_fd_error": 1e-4}))
    status = "pass" if _verdict(checks) == 0 else "fail"
    _write(out, "af_summary.json", _dump({"status": status, "fuchsian": fuchsian,
                                          "gauss_residual": _guard(pair),
                                          "checks": [c.to_dict() for c in checks]}))
    for c in checks:
        print(f"{c.name}: {'pass' if c.passed else 'FAIL'}")
    return _verdict(checks)


def cmd_holonomy(cfg, out):
    G = surface.build_bolza_group()
    pair, g = _guarded_germ(out, G, "holonomy_summary.json")
    if g is None:
        return 1
    hcfg = cfg["holonomy"]
    fuchsian = g.lam is surface.lambda0
    floor = criteria.gauss_floor(g, np.random.default_rng(cfg["seed"]))
    tol = hcfg["relator_tol"]
    if tol is None:
        tol = higgs.RELATOR_TOL if fuchsian else 10 * floor
    H = higgs.build_higgs(g, G)
    rep = higgs.generator_holonomies(H, G, complex(*hcfg["basepoint"]), hcfg["n_steps"],
                                     tol=np.inf)
    _write(out, "holonomy.json", rep.to_json() + "\n")
    res, orders = criteria.plaquette_orders(higgs.flat_connection(H))
    tr = rep.traces
    checks = [
        criteria.Check("relator", rep.relator_residual <= tol,
                       {"relator_residual": rep.relator_residual, "relator_sign": rep.relator_sign,
                        "gauss_floor": floor}, {"relator_residual": tol}),
        criteria.Check("unimodular", rep.det_residual < 1e-8,
                       {"det_residual": rep.det_residual}, {"det_residual": 1e-8}),
    ]
    if fuchsian:
        checks.append(criteria.Check(
            "fuchsian_traces",
            np.abs(tr.imag).max() < 1e-6 and np.abs(np.abs(tr) - criteria.TRACE).max() < 1e-4,
            {"trace_imag_max": np.abs(tr.imag).max(),
             "abs_trace_deviation": np.abs(np.abs(tr) - criteria.TRACE).max()},
            {"trace_imag_max": 1e-6, "abs_trace_deviation": 1e-4}))
        checks.append(criteria.Check("plaquette_order", min(orders) >= 1.9,
                                     {"residuals": res, "orders": orders}, {"order_min": 1.9}))
    status = "pass" if _verdict(checks) == 0 else "fail"
    _write(out, "holonomy_summary.json", _dump({
        "status": status, "fuchsian": fuchsian, "refinement_change": rep.refinement_change,
        "checks": [c.to_dict() for c in checks]}))
    for c in checks:
        print(f"{c.name}: {'pass' if c.passed else 'FAIL'}")
    return _verdict(checks)


CRITERIA_TITLES = {
    1: "Hyperkaehler algebra on the fibre",
    2: "Closedness and Kaehler potentials",
    3: "Moment-map equations on the fibre",
    4: "Hodge map",
    5: "Surface group and mesh",
    6: "Poincare series quadratic differential",
    7: "Gauss-equation solver",
    8: "Moment-map equivalence on the surface",
    9: "3-metric curvature",
    10: "Boundary data",
    11: "Holonomy representation",
    12: "Area and Weil-Petersson pairing",
    13: "Determinism",
}


def _determinism(cfg, out):
    """Re-run solve into a scratch directory and compare every file."""
    with tempfile.TemporaryDirectory() as tmp:
        rerun = dict(cfg, threads=1)
        with contextlib.redirect_stdout(io.StringIO()):
            cmd_solve(rerun, Path(tmp))
        same = {name: filecmp.cmp(out / name, Path(tmp) / name, shallow=False)
                for name in SOLVE_FILES}
    return criteria.Check("determinism", all(same.values()),
                          {f"identical_{k.replace('.', '_')}": v for k, v in same.items()},
                          {"all_identical": True})


def cmd_report(cfg, out):
    G = surface.build_bolza_group()
    pair, g = _guarded_germ(out, G, "report.json")
    if g is None:
        return 1
    mapper = criteria.ordered_map(cfg["threads"])
    seed = cfg["seed"]
    fine = surface.build_mesh(G, pair.mesh.level + 1)
    scfg = germ.SolverConfig.from_dict(cfg["solver"])
    fib = criteria.fiber_suites(np.random.default_rng(seed), cfg["fiber"]["samples"],
                                cfg["fiber"]["fd_h"], mapper)
    by = {c.name: c for c in fib}

    def merged(name, parts):
        return criteria.Check(name, all(by[p].passed for p in parts),
                              {p: by[p].to_dict()["measured"] for p in parts},
                              {p: by[p].to_dict()["thresholds"] for p in parts})

    sigma = pair.sigma
    series_sigma = sigma if not sigma.is_zero() else _build_sigma(G, dict(cfg, sigma_scale=1.0))
    checks = {
        1: by["quaternion"],
        2: merged("closedness_potential", ["closedness", "potential_2", "potential_3"]),
        3: by["moment_map"],
        4: merged("hodge", ["hodge_equivariance", "hodge_intertwining", "hodge_zero_section"]),
        5: criteria.check_surface(G, pair.mesh),
        6: criteria.check_series(G, series_sigma, pair.mesh, fine),
        7: criteria.check_solver(pair.mesh, fine, sigma, scfg),
        8: criteria.check_moment_equivalence(pair.mesh, fine, series_sigma),
        9: criteria.check_curvature(g, seed, cfg["af"]["samples"], mapper),
        10: criteria.check_boundary(g, seed, cfg["af"]["samples"]),
        11: criteria.check_holonomy(G, cfg["holonomy"]["n_steps"]),
        12: criteria.check_area_wp(G, pair.mesh, series_sigma, seed=seed),
        13: _determinism(cfg, out),
    }
    rows = [{"id": k, "title": CRITERIA_TITLES[k], **c.to_dict()} for k, c in checks.items()]
    stages = {}
    for name in ("fiber_report.json", "af_summary.json", "holonomy_summary.json"):
        path = out / name
        stages[name] = json.loads(path.read_text()).get("status") if path.is_file() else None
    status = "pass" if all(r["passed"] for r in rows) else "fail"
    _write(out, "report.json", _dump({"status": status, "seed": seed,
                                      "level": pair.mesh.level, "criteria": rows,
                                      "stage_status": stages}))
    _write(out, "report.md", render_markdown(rows, status, stages))
    for r in rows:
        print(f"criterion {r['id']:2d} {r['title']}: {'pass' if r['passed'] else 'FAIL'}")
    return 0 if status == "pass" else 1


def render_markdown(rows, status, stages):
    lines = ["# afmod report", "", f"Overall: **{status}**", "",
             "| # | criterion | result | measured |", "|---|---|---|---|"]
    for r in rows:
        meas = "; ".join(f"{k} = {_fmt(v)}" for k, v in _flatten(r["measured"]))
        lines.append(f"| {r['id']} | {r['title']} | {'pass' if r['passed'] else 'FAIL'} "
                     f"| {meas} |")
    lines += ["", "Runtimes are not recorded here so that reruns stay byte-identical.", "",
              "## Stage artifacts", ""]
    for name, st in stages.items():
        lines.append(f"- {name}: {st if st is not None else 'not present'}")
    return "\n".join(lines) + "\n"


def _flatten(d, prefix=""):
    for k, v in d.items():
        if isinstance(v, dict):
            yield from _flatten(v, f"{prefix}{k}.")
        else:
            yield f"{prefix}{k}", v


def _fmt(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, int):
        return str(v)
    return f"{v:.3g}"


COMMANDS = {
    "verify-fiber": cmd_verify_fiber,
    "solve": cmd_solve,
    "verify-af": cmd_verify_af,
    "holonomy": cmd_holonomy,
    "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.threads)
        out = Path(os.environ.get("AFMOD_OUT") or args.out)
        return COMMANDS[args.command](cfg, out)
    except AfmodError as e:
        print(f"afmod: {e.code}: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
