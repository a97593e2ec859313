"""``rmlab`` command line: JSON config in, CSV tables plus a checksummed manifest out."""

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
import warnings
from datetime import datetime, timezone
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import ConfigError, RmlabError

SUBCOMMANDS = ("mde", "density", "sample", "audit", "locallaw", "spectra", "universality",
               "cumulant-check", "diagrams")
EXIT_OK, EXIT_ERROR, EXIT_WARN = 0, 1, 2

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_complex = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}

MODEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "N"],
    "properties": {
        "kind": {"enum": ["wigner", "deformed", "gaussian_metric_decay", "block_copy", "fourfold",
                          "custom", "zero"]},
        "N": {"type": "integer", "minimum": 2},
        "symmetry": {"enum": ["real", "complex"]},
        "A": {"type": ["string", "null"]},
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "scale": _pos,
                "entries": {"enum": ["gaussian", "rademacher"]},
                "n_blocks": {"type": "integer", "minimum": 1},
                "s": _pos,
                "tensor": {"type": "string"},
                "A_bound": _pos,
            },
        },
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "subcommand": {"enum": list(SUBCOMMANDS)},
        "model": MODEL_SCHEMA,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "samples": {"type": "integer", "minimum": 1},
        "N_list": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
        "E": _num,
        "etas": {"type": "array", "items": _pos, "minItems": 1},
        "eta_exponents": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0,
                                                     "exclusiveMaximum": 1}, "minItems": 1},
        "z": {"type": "array", "items": _complex, "minItems": 1},
        "E_grid": {"type": "object", "additionalProperties": False, "required": ["start", "stop", "step"],
                   "properties": {"start": _num, "stop": _num, "step": _pos}},
        "eta": _pos,
        "margin": {"type": "number", "minimum": 0},
        "outside_z": _complex,
        "d2": {"type": "object", "additionalProperties": False,
               "properties": {"z": _complex, "samples": {"type": "integer", "minimum": 1}}},
        "edge_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
        "p": {"type": "integer", "minimum": 1},
        "R": {"type": "integer", "minimum": 2},
        "pR": {"type": "array", "items": {"type": "array", "items": {"type": "integer"},
                                          "minItems": 2, "maxItems": 2}},
        "modes": {"type": "array", "items": {"enum": ["av", "iso"]}, "minItems": 1},
        "tolerances": {"type": "object", "additionalProperties": False,
                       "properties": {"mde_tol": _pos, "mde_max_iter": {"type": "integer", "minimum": 1},
                                      "identity_tol": _pos}},
    },
}


# --- config handling ------------------------------------------------------------------

def _line_of(text, key):
    for i, line in enumerate(text.splitlines(), 1):
        if f'"{key}"' in line:
            return i
    return None


def load_config(path):
    """Parse and validate a config file; diagnostics name the line and field."""
    if path is None:
        return {}, None
    text = Path(path).read_text()
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    validate_config(config, text, path)
    return config, Path(path).resolve().parent


def validate_config(config, text=None, path="<config>"):
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if not errors:
        return
    msgs = []
    for err in errors:
        field_path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        key = next((str(p) for p in reversed(err.absolute_path) if isinstance(p, str)), None)
        if err.validator == "additionalProperties":
            extra = [k for k in err.instance if k not in err.schema.get("properties", {})]
            key = extra[0] if extra else key
        line = _line_of(text, key) if (text and key) else None
        where = f"{path}:{line}" if line else str(path)
        msgs.append(f"{where}: field {field_path}: {err.message}")
    raise ConfigError("\n".join(msgs))


def config_hash(subcommand, config):
    text = json.dumps({"subcommand": subcommand, "config": config}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _model(config, base_dir):
    from .ensembles import CorrelationModel

    if "model" not in config:
        raise ConfigError("this subcommand needs a 'model' section")
    return CorrelationModel.from_config(config["model"], base_dir)


def _opts(config):
    from .mde import MdeOptions

    tol = config.get("tolerances", {})
    opts = MdeOptions()
    if "mde_tol" in tol:
        opts.tol = tol["mde_tol"]
    if "mde_max_iter" in tol:
        opts.max_iter = tol["mde_max_iter"]
    return opts


def _zs(config, default=((0.0, 1.0),)):
    return [complex(a, b) for a, b in config.get("z", default)]


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _f(x):
    return repr(float(x))


# --- results --------------------------------------------------------------------------

class Result:
    """Files produced by one subcommand: ``suffix -> text or bytes``, plus bookkeeping."""

    def __init__(self):
        self.files = {}
        self.tasks = {}
        self.failures = []
        self.warnings = []
        self.summary = ""

    def add(self, suffix, content):
        self.files[suffix] = content


def run_mde(config, base_dir, args):
    from .mde import density_profile, solve_mde, stability_norm

    model = _model(config, base_dir)
    opts = _opts(config)
    A = _expectation(model)
    res = Result()
    rows, sidecar = [], []
    for z in _zs(config):
        sol = solve_mde(A, model.kernel, z, opts)
        stab = stability_norm(sol.M, model.kernel) if model.N <= 64 else None
        m = sol.trace_avg
        rows.append([_f(z.real), _f(z.imag), _f(m.real), _f(m.imag), _f(sol.density), _f(sol.residual),
                     sol.iterations, _f(sol.im_min)])
        sidecar.append(dict(sol.sidecar(), stability_norm=stab))
    res.add(".csv", _csv_text(["z_re", "z_im", "m_re", "m_im", "rho", "residual", "iterations", "im_min"],
                              rows))
    if "E_grid" in config:
        g = config["E_grid"]
        grid = np.arange(g["start"], g["stop"] + g["step"] / 2, g["step"])
        prof = density_profile(A, model.kernel, grid, config.get("eta", 1e-3), opts)
        res.add("-density.csv", prof.to_csv())
        res.failures += [{"E": float(e), "reason": "no convergence"}
                         for e, ok in zip(prof.E, prof.converged) if not ok]
    res.add(".json", json.dumps({"model": model.model_id(), "solutions": sidecar}, indent=2, sort_keys=True))
    res.summary = "\n".join(f"z = {r[0]}+{r[1]}i  <M> = {r[2]}+{r[3]}i  residual {r[5]}" for r in rows)
    return res


def _expectation(model):
    from .ensembles import expectation_matrix

    A = expectation_matrix(model)
    return None if not np.any(A) else A


def run_density(config, base_dir, args):
    from .locallaw import model_density
    from .mde import density_profile

    model = _model(config, base_dir)
    eta = config.get("eta", 1e-3)
    if "E_grid" in config:
        g = config["E_grid"]
        grid = np.arange(g["start"], g["stop"] + g["step"] / 2, g["step"])
        prof = density_profile(_expectation(model), model.kernel, grid, eta, _opts(config))
    else:
        prof = model_density(model, eta=eta, opts=_opts(config))
    res = Result()
    res.add(".csv", prof.to_csv())
    res.failures += [{"E": float(e), "reason": "no convergence"}
                     for e, ok in zip(prof.E, prof.converged) if not ok]
    info = {"model": model.model_id(), "eta": eta, "mass": prof.mass(), "support": prof.support}
    res.add(".json", json.dumps(info, indent=2, sort_keys=True))
    res.summary = f"mass {info['mass']:.6f}  support {prof.support}"
    return res


def run_sample(config, base_dir, args):
    from .ensembles import sample_matrix, sample_seed

    model = _model(config, base_dir)
    seed = config.get("seed", 0)
    res = Result()
    rows = []
    for i in range(config.get("samples", 1)):
        H = sample_matrix(model, sample_seed(seed, i))
        lam = np.linalg.eigvalsh(H)
        rows += [[i, k + 1, _f(v)] for k, v in enumerate(lam)]
        res.add(f"-{i}.mdem", _matrix_bytes(H))
    res.add(".csv", _csv_text(["sample", "k", "lambda"], rows))
    res.summary = f"{config.get('samples', 1)} matrices of size {model.N}"
    return res


def _matrix_bytes(H):
    import tempfile

    from .ensembles import write_matrix

    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "m.mdem"
        write_matrix(p, H)
        return p.read_bytes()


def run_audit(config, base_dir, args):
    from .audit import audit_model

    model = _model(config, base_dir)
    report = audit_model(model, config.get("seed", 0))
    res = Result()
    res.add(".csv", _csv_text(["assumption", "status", "detail"], report.table()))
    res.add(".json", report.to_json())
    res.warnings = list(report.warnings)
    res.summary = "\n".join(f"{a:2s} {s:5s} {d}" for a, s, d in report.table())
    return res


def run_locallaw(config, base_dir, args):
    from .locallaw import error_sweep, gaussian_D2_check, outside_sweep

    model = _model(config, base_dir)
    N_list = config.get("N_list", [model.N])
    samples = config.get("samples", 20)
    seed = config.get("seed", 0)
    kw = {"eta_exponents": config["eta_exponents"]} if "eta_exponents" in config else \
        {"etas": config.get("etas", [0.1])}
    sweep = error_sweep(model, N_list, E=config.get("E", 0.0), samples=samples, seed=seed,
                        jobs=args.jobs, opts=_opts(config), **kw)
    res = Result()
    res.add(".csv", sweep.to_csv())
    info = {"model": model.model_id(), "avg_slope": sweep.avg_slope, "iso_slope": sweep.iso_slope}
    if "outside_z" in config:
        z = complex(*config["outside_z"])
        rows = outside_sweep(model, N_list, z, samples, seed, args.jobs, _opts(config))
        info["outside"] = [{k: (v if not isinstance(v, complex) else [v.real, v.imag])
                            for k, v in r.items()} for r in _plain(rows)]
    if "d2" in config:
        d2 = config["d2"]
        chk = gaussian_D2_check(model, complex(*d2.get("z", [0.0, 1.0])), d2.get("samples", 500), seed,
                                args.jobs)
        info["d2"] = {"formula": [chk.formula.real, chk.formula.imag], "mc": [chk.mc.real, chk.mc.imag],
                      "mc_stderr": chk.mc_stderr, "bound_constant": chk.bound_constant}
    res.add(".json", json.dumps(info, indent=2, sort_keys=True))
    res.summary = f"avg slope {sweep.avg_slope:.3f}  iso slope {sweep.iso_slope:.3f}"
    return res


def _plain(rows):
    return [{k: (float(v) if isinstance(v, (np.floating, np.integer)) else v) for k, v in r.items()}
            for r in rows]


def run_spectra(config, base_dir, args):
    from .locallaw import outlier_check, rigidity_and_delocalization

    model = _model(config, base_dir)
    samples, seed = config.get("samples", 10), config.get("seed", 0)
    ef = config.get("edge_fraction", 0.1)
    stats = rigidity_and_delocalization(model, samples, seed, ef, args.jobs)
    out = outlier_check(model, samples, seed, config.get("margin", 0.2), jobs=args.jobs)
    res = Result()
    res.add(".csv", stats.to_csv())
    info = {"model": model.model_id(), "rigidity": stats.rigidity.tolist(),
            "delocalization": stats.delocalization.tolist(),
            "median_rigidity": stats.median_rigidity, "max_delocalization": stats.max_delocalization,
            "support": out.support, "margin": out.margin, "outliers": out.counts}
    res.add(".json", json.dumps(info, indent=2, sort_keys=True))
    res.summary = (f"median rigidity {stats.median_rigidity:.3f}  max delocalization "
                   f"{stats.max_delocalization:.3f}  outliers {out.total}")
    return res


def run_universality(config, base_dir, args):
    from .locallaw import poisson_gap_ratios, universality_comparison

    model = _model(config, base_dir)
    samples, seed = config.get("samples", 50), config.get("seed", 0)
    rec = universality_comparison(model, samples, seed, jobs=args.jobs)
    pois = poisson_gap_ratios(model.N, samples, seed)
    rows = [[name, _f(s.mean), _f(s.stderr), s.count] for name, s in
            (("model", rec.model), ("oracle", rec.oracle), ("poisson", pois))]
    res = Result()
    res.add(".csv", _csv_text(["source", "mean", "stderr", "count"], rows))
    info = {"model": model.model_id(), "difference": rec.difference,
            "histograms": {name: s.histogram.tolist() for name, s in
                           (("model", rec.model), ("oracle", rec.oracle), ("poisson", pois))},
            "edges": rec.model.edges.tolist()}
    res.add(".json", json.dumps(info, indent=2, sort_keys=True))
    res.summary = f"|model - oracle| = {rec.difference:.4f}  poisson {pois.mean:.4f}"
    return res


def run_cumulant_check(config, base_dir, args):
    from .checks import CHECK_HEADER, TOL, identity_suite

    tol = config.get("tolerances", {}).get("identity_tol", TOL)
    records = identity_suite(config.get("seed", 0))
    for r in records:
        r.tol = tol
    rows = [[r.suite, r.case, _f(r.residual), int(r.passed)] for r in records]
    res = Result()
    res.add(".csv", _csv_text(CHECK_HEADER, rows))
    bad = [r for r in records if not r.passed]
    res.failures += [{"suite": r.suite, "case": r.case, "residual": r.residual} for r in bad]
    res.summary = f"{len(records) - len(bad)}/{len(records)} identity checks passed"
    return res


def run_diagrams(config, base_dir, args):
    from .diagrams import SUMMARY_HEADER, bound_invariant_check

    if args.p is not None or args.R is not None:
        pairs = [(args.p or config.get("p", 2), args.R or config.get("R", 2))]
    elif "pR" in config:
        pairs = [tuple(x) for x in config["pR"]]
    else:
        pairs = [(config.get("p", 2), config.get("R", 2))]
    modes = config.get("modes", ["av", "iso"])
    reports = [bound_invariant_check(p, R, mode, strict=False) for p, R in pairs for mode in modes]
    res = Result()
    res.add(".csv", "\n".join([SUMMARY_HEADER] + [r.summary_row() for r in reports]) + "\n")
    info = [{"mode": r.mode, "p": r.p, "R": r.R, "graph_count": r.graph_count,
             "labeled_count": r.labeled_count, "violations": r.violations} for r in reports]
    res.add(".json", json.dumps(info, indent=2, sort_keys=True))
    res.failures += [{"mode": r.mode, "p": r.p, "R": r.R, "graph": g, "violations": m}
                     for r in reports for g, m in r.violations]
    res.summary = res.files[".csv"].rstrip()
    return res


RUNNERS = {"mde": run_mde, "density": run_density, "sample": run_sample, "audit": run_audit,
           "locallaw": run_locallaw, "spectra": run_spectra, "universality": run_universality,
           "cumulant-check": run_cumulant_check, "diagrams": run_diagrams}


# --- output ---------------------------------------------------------------------------

def _atomic_write(path, content):
    data = content.encode() if isinstance(content, str) else content
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    return data


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_outputs(result, out_dir, stem, force=False):
    """Write every result file as ``{stem}{suffix}``; on failure remove what was written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    targets = {suffix: out_dir / f"{stem}{suffix}" for suffix in result.files}
    existing = [p for p in targets.values() if p.exists()]
    if existing and not force:
        raise FileExistsError(f"{existing[0]} exists; pass --force to overwrite")
    written, listing = [], []
    try:
        for suffix, path in targets.items():
            data = _atomic_write(path, result.files[suffix])
            written.append(path)
            listing.append({"file": path.name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
    except OSError:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return listing


def verify_manifest(path):
    """Names of listed files whose checksum no longer matches (empty when all are intact)."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    return [f["file"] for f in manifest["files"]
            if not (path.parent / f["file"]).exists() or sha256_file(path.parent / f["file"]) != f["sha256"]]


def _out_dir(args):
    return Path(args.out or os.environ.get("RMLAB_OUT") or "rmlab-out")


def build_parser():
    parser = argparse.ArgumentParser(prog="rmlab", description="Matrix Dyson equation and local-law experiments")
    parser.add_argument("--version", action="version", version=f"rmlab {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="base seed (overrides the config)")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="worker processes; results do not depend on it")
        p.add_argument("--out", help="output directory (default $RMLAB_OUT or ./rmlab-out)")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        if name == "diagrams":
            p.add_argument("--p", type=int)
            p.add_argument("--R", type=int)
    return parser


def run(argv=None):
    args = build_parser().parse_args(argv)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    try:
        config, base_dir = load_config(args.config)
        if "subcommand" in config and config["subcommand"] != args.subcommand:
            raise ConfigError(f"config is for '{config['subcommand']}', not '{args.subcommand}'")
        if args.seed is not None:
            config["seed"] = args.seed
            validate_config(config)
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        digest = config_hash(args.subcommand, config)
        stem = f"{args.subcommand}-{digest[:8]}"
        out_dir = _out_dir(args)
        if (out_dir / f"{stem}.csv").exists() and not args.force:
            raise FileExistsError(f"{out_dir / (stem + '.csv')} exists; pass --force to overwrite")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            result = RUNNERS[args.subcommand](config, base_dir, args)
        result.warnings += [str(w.message) for w in caught]
        listing = write_outputs(result, out_dir, stem, args.force)
        manifest = {
            "subcommand": args.subcommand,
            "config_hash": digest,
            "config": config,
            "seeds": {"base": config.get("seed", 0), "per_sample": "base XOR sample index"},
            "start": started.isoformat(),
            "end": datetime.now(timezone.utc).isoformat(),
            "wall_time": time.perf_counter() - t0,
            "version": __version__,
            "jobs": args.jobs,
            "status": "failed" if result.failures else "ok",
            "warnings": result.warnings,
            "failures": result.failures,
            "files": listing,
        }
        _atomic_write(out_dir / f"{stem}.manifest.json", json.dumps(manifest, indent=2, sort_keys=True, default=str))
    except (RmlabError, jsonschema.ValidationError, OSError, ValueError) as exc:
        print(f"rmlab {args.subcommand}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if result.summary:
        print(result.summary)
    print(f"wrote {len(listing)} files to {out_dir} ({stem})")
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if result.failures:
        return EXIT_ERROR
    if args.subcommand == "audit" and result.warnings:
        return EXIT_WARN
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
