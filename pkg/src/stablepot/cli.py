"""Batch command line: JSON configs in, CSV tables and JSON summaries out.

Usage::

    stablepot <command> --config run.json --out results/ [--threads k]

Exit status is 0 on success, 2 on validation errors and 3 on numerical
failures (non-contraction, non-gaugeable potentials, envelope failures,
failed invariants).  Every artifact is written to a temporary file and
renamed into place; floats carry 17 significant digits.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import jsonschema
import numpy as np

from . import checks, conditioned, kernels, martin, quad, representation, rng, sampler, schrodinger
from .errors import NumericalFailure, StablePotError, ValidationError
from .geometry import Ball, StableIndex, as_points, domain_from_dict

log = logging.getLogger("stablepot")

COMMANDS = ("kernel", "wos", "martin", "cond", "gauge", "represent", "check")
SCHEMA_VERSION = 1

_point = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_points = {"oneOf": [_point, {"type": "array", "items": _point, "minItems": 1}]}
_domain = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["ball", "box", "polytope"]},
        "center": _point,
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "min": _point,
        "max": _point,
        "halfspaces": {"type": "array", "items": {
            "type": "object", "required": ["a", "b"],
            "properties": {"a": _point, "b": {"type": "number"}},
        }},
    },
}
_phi_object = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["constant", "halfspace", "gaussian", "coordinate", "mesh_file"]},
        "path": {"type": "string"},
        "value": {"type": "number"},
        "normal": _point,
        "offset": {"type": "number"},
        "width": {"type": "number", "exclusiveMinimum": 0},
        "index": {"type": "integer", "minimum": 0},
    },
}
_phi = {"oneOf": [{"enum": ["one", "halfspace", "gaussian", "coordinate"]}, _phi_object]}
_potential = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["constant", "radial_power", "mesh_file"]},
        "c": {"type": "number"},
        "center": _point,
        "beta": {"type": "number", "exclusiveMinimum": 0},
        "path": {"type": "string"},
    },
}

_common = {
    "command": {"enum": list(COMMANDS)},
    "domain": _domain,
    "alpha": {"type": "number"},
    "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
}


def _schema(required, props):
    return {
        "type": "object",
        "required": ["seed"] + required,
        "properties": {**_common, **props},
        "additionalProperties": False,
    }


SCHEMAS = {
    "kernel": _schema(["domain", "alpha", "query", "x"], {
        "query": {"enum": ["green", "poisson", "martin", "exit_time", "green_whole"]},
        "x": _points, "y": _points, "z": _points, "w": _points,
    }),
    "wos": _schema(["domain", "alpha", "x", "phi", "samples"], {
        "x": _points, "phi": _phi,
        "samples": {"type": "integer", "minimum": 2},
        "shrink": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "max_steps": {"type": "integer", "minimum": 1},
    }),
    "martin": _schema(["domain", "alpha", "x0", "x", "z"], {
        "x0": _point, "x": _points, "z": _points,
        "t0": {"type": "number", "exclusiveMinimum": 0},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "n_samples": {"type": "integer", "minimum": 100},
        "method": {"enum": ["auto", "mc", "closed"]},
        "max_levels": {"type": "integer", "minimum": 3},
    }),
    "cond": _schema(["domain", "alpha", "x", "paths"], {
        "x": _point, "z": _point,
        "measure": {"type": "object", "properties": {
            "path": {"type": "string"},
            "nodes": {"type": "array", "items": _point},
            "weights": {"type": "array", "items": {"type": "number", "minimum": 0}},
            "uniform_resolution": {"type": "integer", "minimum": 4},
        }},
        "patches": {"type": "integer", "minimum": 4},
        "paths": {"type": "integer", "minimum": 1},
        "shrink": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "eps_stop": {"type": "number", "exclusiveMinimum": 0},
        "max_steps": {"type": "integer", "minimum": 1},
    }),
    "gauge": _schema(["domain", "alpha", "q", "resolution"], {
        "q": _potential,
        "resolution": {"type": "integer", "minimum": 3},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "n_samples": {"type": "integer", "minimum": 100},
        "conditional": {"type": "object", "required": ["x", "z"], "properties": {"x": _points, "z": _points}},
    }),
    "represent": _schema(["domain", "alpha", "f", "boundary_resolution"], {
        "f": {"type": "object", "properties": {
            "exterior": {"enum": ["zero", "inverse_quadratic", "gaussian"]},
            "martin": {"type": "array", "items": {"type": "object", "required": ["z", "a"],
                                                  "properties": {"z": _point, "a": {"type": "number"}}}},
            "green": {"type": "array", "items": {"type": "object", "required": ["y", "a"],
                                                 "properties": {"y": _point, "a": {"type": "number"}}}},
        }},
        "boundary_resolution": {"type": "integer", "minimum": 4},
        "allow_interior_charge": {"type": "boolean"},
    }),
    "check": _schema([], {"names": {"type": "array", "items": {"type": "string"}}}),
}


# --------------------------------------------------------------------------
# serialisation
# --------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return format(v, ".17g")


def to_json(obj, indent: int = 0) -> str:
    """JSON text with every float at 17 significant digits."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(to_json(v) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent + 1) for v in seq) + "\n" + end + "]"
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    return _fmt(obj)


def to_csv(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else _fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# config handling
# --------------------------------------------------------------------------


def load_config(command: str, path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    if cfg.get("command", command) != command:
        raise ValidationError(f"config is for command {cfg['command']!r}, not {command!r}")
    if "seed" not in cfg:
        raise ValidationError("config must set 'seed': there is no default seed")
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "config"
        raise ValidationError(f"{where}: {exc.message}") from exc
    return cfg


def _setup(cfg):
    domain = domain_from_dict(cfg["domain"])
    idx = StableIndex(domain.n, cfg["alpha"])
    return domain, idx


def _metadata(cfg) -> dict:
    from . import __version__

    text = json.dumps(cfg, sort_keys=True)
    return {
        "stablepot_version": __version__,
        "schema_version": SCHEMA_VERSION,
        "seed": cfg["seed"],
        "config_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "config": cfg,
    }


def _points_arg(p, n):
    return as_points(p, n)


# --------------------------------------------------------------------------
# commands; each returns {filename: text}
# --------------------------------------------------------------------------


def cmd_kernel(cfg):
    domain, idx = _setup(cfg)
    q = cfg["query"]
    x = _points_arg(cfg["x"], domain.n)
    other_key = {"green": "y", "green_whole": "y", "poisson": "z", "martin": "w"}.get(q)
    if q != "green_whole" and not isinstance(domain, Ball):
        raise ValidationError("closed-form kernels are available on balls; use martin or wos elsewhere")
    if other_key:
        if other_key not in cfg:
            raise ValidationError(f"query {q!r} needs '{other_key}'")
        y = _points_arg(cfg[other_key], domain.n)
        if len(y) != len(x) and len(y) != 1 and len(x) != 1:
            raise ValidationError("x and the second argument must have matching lengths (or length 1)")
        x, y = np.broadcast_arrays(x, y)
    fn = {
        "green": lambda: kernels.green_ball(idx, domain, x, y),
        "green_whole": lambda: kernels.green_whole(idx, x, y),
        "poisson": lambda: kernels.poisson_ball(idx, domain, x, y),
        "martin": lambda: kernels.martin_ball(idx, domain, x, y),
        "exit_time": lambda: kernels.mean_exit_time_ball(idx, domain, x),
    }[q]
    vals = np.atleast_1d(fn())
    n = domain.n
    header = [f"x{i}" for i in range(n)] + ([f"{other_key}{i}" for i in range(n)] if other_key else []) + ["value"]
    rows = [list(x[k]) + (list(y[k]) if other_key else []) + [vals[k]] for k in range(len(x))]
    summary = {"query": q, "count": len(rows)}
    return {"kernel.csv": to_csv(header, rows)}, summary


_PHI_NAMES = {"one": {"type": "constant", "value": 1.0}, "halfspace": {"type": "halfspace"},
              "gaussian": {"type": "gaussian"}, "coordinate": {"type": "coordinate"}}


def _read_table(path, n, what):
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2, skiprows=1)
    except (OSError, ValueError) as exc:
        raise ValidationError(f"cannot read {what} file {path}: {exc}") from exc
    if data.shape[1] != n + 1:
        raise ValidationError(f"{what} file needs columns x0..x{n - 1} plus one value column")
    return data[:, :n], data[:, n]


def _phi_fn(spec, n):
    spec = _PHI_NAMES[spec] if isinstance(spec, str) else spec
    kind = spec["type"]
    if kind == "constant":
        v = float(spec.get("value", 1.0))
        return lambda z: np.full(len(z), v)
    if kind == "halfspace":
        nu = np.asarray(spec.get("normal", [1.0] + [0.0] * (n - 1)), dtype=float)
        c = float(spec.get("offset", 0.0))
        return lambda z: (z @ nu > c).astype(float)
    if kind == "gaussian":
        s = float(spec.get("width", 1.0))
        return lambda z: np.exp(-np.sum(z * z, axis=1) / (2 * s * s))
    if kind == "coordinate":
        i = int(spec.get("index", 0))
        if i >= n:
            raise ValidationError("coordinate index out of range")
        # unbounded data: the mean needs alpha > 1 and the variance alpha > 2
        return lambda z: z[:, i]
    if kind == "mesh_file":
        from scipy.spatial import cKDTree

        nodes, values = _read_table(spec.get("path", ""), n, "phi")
        tree = cKDTree(nodes)
        return lambda z: values[tree.query(z)[1]]
    raise ValidationError(f"unknown phi type {kind!r}")


def cmd_wos(cfg):
    domain, idx = _setup(cfg)
    xs = _points_arg(cfg["x"], domain.n)
    spec = cfg["phi"]
    phi = _phi_fn(spec, domain.n)
    kind = spec if isinstance(spec, str) else spec["type"]
    if kind == "coordinate" and idx.alpha <= 1:
        raise ValidationError("coordinate data has no finite mean for alpha <= 1")
    base = rng.RngStream(cfg["seed"], (0x776F,))
    rows = []
    for k, x in enumerate(xs):
        est = sampler.harmonic_measure(domain, idx, x, phi, cfg["samples"], base.child(k),
                                       cfg.get("shrink", sampler.DEFAULT_SHRINK),
                                       cfg.get("max_steps", sampler.DEFAULT_MAX_STEPS))
        rows.append(list(x) + [est.value, est.std_error, est.n_samples, cfg["seed"], est.flagged])
    header = [f"x{i}" for i in range(domain.n)] + ["value", "std_error", "n", "seed", "flagged"]
    summary = {"points": len(rows), "values": [r[domain.n] for r in rows],
               "std_errors": [r[domain.n + 1] for r in rows]}
    return {"wos.csv": to_csv(header, rows)}, summary


def cmd_martin(cfg):
    domain, idx = _setup(cfg)
    n = domain.n
    xs = _points_arg(cfg["x"], n)
    zs = _points_arg(cfg["z"], n)
    x0 = np.asarray(cfg["x0"], dtype=float)
    t0 = cfg.get("t0", 0.25 * domain.inradius)
    method = cfg.get("method", "auto")
    closed_ok = isinstance(domain, Ball) and np.allclose(x0, domain.center)
    rows, sequences = [], []
    for j, z in enumerate(zs):
        stream = rng.RngStream(cfg["seed"], (0x6D72, j))
        if method == "closed" or (method == "auto" and closed_ok):
            ests = [martin.martin_estimate(domain, idx, x0, x, z, t0, stream, method="closed") for x in xs]
        else:
            ests = martin.martin_estimates(domain, idx, x0, xs, z, t0, stream, tol=cfg.get("tol", 5e-3),
                                           n_samples=cfg.get("n_samples", 100_000),
                                           max_levels=cfg.get("max_levels", martin.MAX_LEVELS))
        for e in ests:
            rows.append(list(z) + list(e.x) + [e.value, e.error_bound, e.std_error, e.levels, e.contraction])
            sequences.append(list(e.sequence_values))
    header = ([f"z{i}" for i in range(n)] + [f"x{i}" for i in range(n)]
              + ["value", "error_bound", "std_error", "levels", "contraction"])
    summary = {"x0": x0.tolist(), "sequences": sequences}
    return {"martin.csv": to_csv(header, rows)}, summary


def _measure(cfg, domain):
    from .geometry import BoundaryMesh

    m = cfg["measure"]
    if "uniform_resolution" in m:
        return representation.DiscreteBoundaryMeasure.surface(domain.boundary_mesh(m["uniform_resolution"]))
    if "path" in m:
        nodes, weights = _read_table(m["path"], domain.n, "measure")
    else:
        nodes = np.asarray(m.get("nodes", []), dtype=float)
        weights = m.get("weights", [])
    if nodes.ndim != 2 or nodes.shape[1] != domain.n or len(nodes) == 0:
        raise ValidationError("measure nodes must be points of the domain's dimension")
    return representation.DiscreteBoundaryMeasure(BoundaryMesh(nodes, np.ones(len(nodes))), weights)


def cmd_cond(cfg):
    domain, idx = _setup(cfg)
    x = np.asarray(cfg["x"], dtype=float)
    kw = dict(shrink=cfg.get("shrink", sampler.DEFAULT_SHRINK), eps_stop=cfg.get("eps_stop"),
              max_steps=cfg.get("max_steps", conditioned.DEFAULT_MAX_STEPS))
    stream = rng.RngStream(cfg["seed"], (0x636E,))
    summary = {}
    if ("z" in cfg) == ("measure" in cfg):
        raise ValidationError("cond needs exactly one of 'z' or 'measure'")
    if "z" in cfg:
        h = conditioned.martin_pole(domain, idx, cfg["z"])
        paths = conditioned.simulate_conditioned_paths(domain, idx, x, h, cfg["paths"], stream, **kw)
    else:
        measure = _measure(cfg, domain)
        patches = domain.boundary_mesh(cfg["patches"]) if "patches" in cfg else None
        law = conditioned.boundary_limit_law(domain, idx, x, measure, cfg["paths"], stream,
                                             patches=patches, **kw)
        paths = law.paths
        summary["histogram"] = law.empirical.tolist()
        summary["analytic_node_law"] = law.analytic.tolist()
        summary["chi_square_p"] = law.p_value
        summary["flagged"] = law.flagged
    steps = np.array([q.steps for q in paths], dtype=float)
    ok = np.array([q.stopped_reason == "pole" for q in paths])
    summary.update({
        "n_paths": len(paths),
        "success_rate": float(ok.mean()),
        "max_steps_reached": int((~ok).sum()),
        "mean_steps": float(steps.mean()),
        "mean_steps_std_error": float(steps.std(ddof=1) / math.sqrt(len(steps))) if len(steps) > 1 else 0.0,
    })
    header = [f"t{i}" for i in range(domain.n)] + ["steps", "stopped_reason"]
    rows = [list(q.terminal) + [q.steps, q.stopped_reason] for q in paths]
    return {"terminal.csv": to_csv(header, rows)}, summary


def _potential(spec, n):
    kind = spec["type"]
    if kind == "constant":
        return schrodinger.constant_potential(spec.get("c", 0.0))
    if kind == "radial_power":
        if "beta" not in spec:
            raise ValidationError("radial_power needs 'beta'")
        return schrodinger.radial_power(spec.get("c", 1.0), spec.get("center", [0.0] * n), spec["beta"])
    if "path" not in spec:
        raise ValidationError("mesh_file potential needs 'path'")
    return schrodinger.tabulated_potential(*_read_table(spec["path"], n, "potential"))


def cmd_gauge(cfg):
    domain, idx = _setup(cfg)
    q = _potential(cfg["q"], domain.n)
    op = quad.green_operator(domain, idx, cfg["resolution"], n_samples=cfg.get("n_samples", 4000),
                             seed=cfg["seed"])
    sol = schrodinger.gauge(domain, idx, q, op, tol=cfg.get("tol", 1e-10))
    summary = {"gaugeable": sol.gaugeable, "status": sol.status,
               "spectral_radius_estimate": sol.spectral_radius_estimate,
               "series_terms_used": sol.series_terms_used, "residual": sol.residual,
               "mesh_nodes": len(op.mesh.nodes)}
    if sol.values is None:
        from .errors import NotGaugeable

        raise NotGaugeable(f"(D, q) is not gaugeable (spectral radius {sol.spectral_radius_estimate:.4f})")
    n = domain.n
    files = {"gauge.csv": to_csv([f"x{i}" for i in range(n)] + ["weight", "g"],
                                 [list(p) + [w, g] for p, w, g in zip(op.mesh.nodes, op.mesh.weights, sol.values)])}
    if "conditional" in cfg:
        xs = _points_arg(cfg["conditional"]["x"], n)
        zs = _points_arg(cfg["conditional"]["z"], n)
        R = None if q.is_zero else schrodinger._Resolvent(domain, idx, q, op)
        rows = [list(x) + list(z) + [schrodinger.conditional_gauge(domain, idx, q, op, x, z, _resolvent=R)]
                for x in xs for z in zs]
        vals = [r[-1] for r in rows]
        summary["conditional_gauge_min"] = min(vals)
        summary["conditional_gauge_max"] = max(vals)
        files["conditional_gauge.csv"] = to_csv([f"x{i}" for i in range(n)] + [f"z{i}" for i in range(n)]
                                                + ["value"], rows)
    return files, summary


def cmd_represent(cfg):
    domain, idx = _setup(cfg)
    if not isinstance(domain, Ball):
        raise ValidationError("synthetic representation recipes are built from ball closed forms")
    spec = cfg["f"]
    ext = {
        "zero": lambda z: np.zeros(len(z)),
        "inverse_quadratic": lambda z: 1.0 / (1.0 + np.sum(z * z, axis=1)),
        "gaussian": lambda z: np.exp(-np.sum(z * z, axis=1)),
    }[spec.get("exterior", "inverse_quadratic")]
    poles = [(np.asarray(m["z"], dtype=float), float(m["a"])) for m in spec.get("martin", [])]
    charges = [(np.asarray(g["y"], dtype=float), float(g["a"])) for g in spec.get("green", [])]
    if any(a < 0 for _, a in poles + charges):
        raise ValidationError("synthetic masses must be nonnegative")

    def f(pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = ext(pts)
        for i, p in enumerate(pts):
            if domain.contains(p):
                v = representation.harmonic_extension(domain, idx, ext, p)
                v += sum(a * kernels.martin_ball(idx, domain, p, z) for z, a in poles)
                v += sum(a * kernels.green_ball(idx, domain, p, y) for y, a in charges)
                out[i] = v
        return out

    mesh = domain.boundary_mesh(cfg["boundary_resolution"])
    probes = representation.probe_points(domain, mesh)
    dec = representation.decompose(domain, idx, f, probes, mesh,
                                   allow_interior_charge=cfg.get("allow_interior_charge", False), rng=cfg["seed"])
    n = domain.n
    files = {"mu.csv": to_csv([f"z{i}" for i in range(n)] + ["mu"],
                              [list(z) + [w] for z, w in zip(mesh.nodes, dec.martin_measure.weights)])}
    summary = {"mu_total_mass": dec.martin_measure.total_mass, "fit_residual": dec.fit_residual,
               "mu": dec.martin_measure.weights.tolist()}
    if dec.interior_charge is not None:
        files["nu.csv"] = to_csv([f"y{i}" for i in range(n)] + ["nu"],
                                 [list(y) + [v] for y, v in zip(dec.interior_nodes, dec.interior_charge)])
        summary["nu_total_mass"] = float(dec.interior_charge.sum())
        summary["nu"] = dec.interior_charge.tolist()
    return files, summary


def cmd_check(cfg):
    results = checks.run_checks(cfg["seed"], cfg.get("names"))
    rows = [[r.name, "pass" if r.passed else "fail", r.value, r.threshold] for r in results]
    summary = {"passed": all(r.passed for r in results), "checks": [r.to_dict() for r in results]}
    return {"checks.csv": to_csv(["name", "status", "value", "threshold"], rows)}, summary


DISPATCH = {
    "kernel": cmd_kernel, "wos": cmd_wos, "martin": cmd_martin, "cond": cmd_cond,
    "gauge": cmd_gauge, "represent": cmd_represent, "check": cmd_check,
}


def dispatch(command: str, cfg: dict, out: Path) -> int:
    """Run ``command`` and write its artifacts under ``out``; returns the exit status."""
    meta = _metadata(cfg)
    try:
        files, summary = DISPATCH[command](cfg)
    except ValidationError as exc:
        _write_error(out, meta, exc)
        return 2
    except (NumericalFailure, np.linalg.LinAlgError) as exc:
        _write_error(out, meta, exc)
        return 3
    for name, text in sorted(files.items()):
        write_atomic(out / name, text)
    status = 0
    if command == "check" and not summary["passed"]:
        status = 3
    write_atomic(out / "summary.json", to_json({**meta, "command": command, "status": status,
                                                "result": summary}) + "\n")
    return status


def _write_error(out: Path, meta: dict, exc: Exception) -> None:
    diag = {}
    for attr in ("sequence", "stats", "worst", "last_iterates"):
        v = getattr(exc, attr, None)
        if v is not None:
            diag[attr] = v
    if getattr(exc, "trajectory", None) is not None:
        diag["trajectory_tail"] = np.asarray(exc.trajectory)[-10:].tolist()
    write_atomic(out / "error.json", to_json({**meta, "error": type(exc).__name__, "message": str(exc),
                                              "diagnostic": diag}) + "\n")
    print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stablepot", description="Potential theory of symmetric stable processes")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "kernel": "closed-form Green, Poisson, Martin kernels and exit times",
        "wos": "harmonic measure by walk-on-spheres",
        "martin": "Martin kernel as a boundary ratio limit",
        "cond": "z-conditioned paths and boundary limit laws",
        "gauge": "gauge function and conditional gauge",
        "represent": "Martin/Green decomposition of a synthetic harmonic function",
        "check": "run the invariant suite",
    }
    for name in COMMANDS:
        s = sub.add_parser(name, help=helps[name])
        s.add_argument("--config", required=True, help="JSON run configuration")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--threads", type=int, default=None, help="worker threads for Monte Carlo chunks")
        s.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        if args.threads is not None:
            rng.set_threads(args.threads)
        cfg = load_config(args.command, args.config)
        cfg = {**cfg, "command": args.command}
    except ValidationError as exc:
        _write_error(out, {"seed": None}, exc)
        return 2
    except StablePotError as exc:
        _write_error(out, {"seed": None}, exc)
        return 3
    return dispatch(args.command, cfg, out)


if __name__ == "__main__":
    sys.exit(main())
