"""Command-line driver: ``hullopt <subcommand> [options]``.

Every subcommand reads one JSON run configuration (``--config`` or the
``HULLOPT_CONFIG`` environment variable), applies command-line overrides on
top and writes its artifacts under ``--workdir``. Precedence, lowest first:
built-in defaults, configuration file, flags.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure,
3 I/O failure. Failures print a one-line JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .asga import AsgaConfig, optimize, write_history
from .errors import BindingError, ConfigurationError, EnrichmentError, ObjectiveError, SolverError
from .ffd import build_dtc_lattice
from .fixtures import hull_fixture, volume_fixture
from .fom import SnapshotDb, SyntheticFomSpec, generate_snapshots, sample_parameters
from .geometry import MeshError, MeshParseError, WatertightError, read_surface_mesh, read_vmesh, write_obj, \
    write_stl, write_vmesh
from .objective import HullCondition
from .pipeline import HullDesign
from .rbf_morph import RbfConfig
from .rom import FIELD_KINDS, build_rom, enrich, load_rom, save_rom

__all__ = ["main", "DEFAULT_CONFIG", "load_config"]

logger = logging.getLogger("hullopt")

CONFIG_ENV = "HULLOPT_CONFIG"

DEFAULT_CONFIG = {
    "paths": {"hull": None, "volume": None, "workdir": "hullopt-run"},
    "ffd": {"sections": [10, 12, 14, 16, 18, 20, 22], "n_stations": 21, "bounds": [-0.2, 0.2]},
    "rbf": {"radius": None, "subsample": 1},
    "rom": {"modes": 20, "exponent": "unsquared", "nugget": 1e-8, "restarts": 8},
    "asga": {"population": 100, "offspring": 20, "generations": 150, "p_c": 0.5, "p_m": 0.5,
             "back_map": 2, "as_dim": 1, "method": "asga", "history": "full", "sampler": "projected",
             "reduced_bounds": "zonotope", "restart": "continue"},
    "fom": {"c1": 0.1, "c2": 0.05, "c3": 2.0, "gamma": 0.3, "length": None, "w_seed": 2024},
    "condition": {"rho": 998.8, "speed": 1.668, "waterline_z": 0.0},
    "sampling": {"count": 200, "scheme": "uniform"},
    "seeds": {"sampling": 0, "asga": 0},
    "workers": None,
}

_NUMERIC = (SolverError, ObjectiveError, WatertightError, EnrichmentError, BindingError, FloatingPointError,
            np.linalg.LinAlgError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# Configuration ---------------------------------------------------------------
def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in out:
            raise ConfigurationError(f"unknown configuration key {k!r}")
        if isinstance(out[k], dict):
            if not isinstance(v, dict):
                raise ConfigurationError(f"section {k!r} must be an object")
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None):
    """Defaults overlaid with the JSON file at ``path`` (or ``$HULLOPT_CONFIG``)."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: configuration must be a JSON object")
    return _merge(DEFAULT_CONFIG, data)


def config_hash(cfg):
    return hashlib.sha1(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _design(cfg, with_volume=False):
    paths = cfg["paths"]
    hull = read_surface_mesh(paths["hull"]) if paths["hull"] else hull_fixture()
    volume = None
    if with_volume:
        volume = read_vmesh(paths["volume"]) if paths["volume"] else volume_fixture()
    c = cfg["condition"]
    cond = HullCondition(c["rho"], c["speed"], c["waterline_z"])
    f = cfg["ffd"]
    lattice, pmap = build_dtc_lattice(hull, tuple(f["sections"]), f["n_stations"], cond.waterline_z)
    fc = dict(cfg["fom"])
    if fc["length"] is None:
        lo, hi = hull.bbox
        fc["length"] = float(hi[0] - lo[0])
    spec = SyntheticFomSpec(c1=fc["c1"], c2=fc["c2"], c3=fc["c3"], gamma=fc["gamma"], length=fc["length"],
                            n_params=pmap.n_params, w_seed=fc["w_seed"])
    r = cfg["rbf"]
    rbf = RbfConfig(radius=r["radius"], subsample=r["subsample"])
    return HullDesign(hull, lattice, pmap, volume, spec, cond, tuple(f["bounds"]), rbf)


def _gp_options(cfg):
    r = cfg["rom"]
    return {"exponent": r["exponent"], "nugget": r["nugget"], "n_restarts": r["restarts"]}


def _asga_config(cfg):
    a = cfg["asga"]
    return AsgaConfig(population=a["population"], offspring=a["offspring"], generations=a["generations"],
                      p_c=a["p_c"], p_m=a["p_m"], back_map=a["back_map"], as_dim=a["as_dim"],
                      seed=cfg["seeds"]["asga"], history=a["history"], sampler=a["sampler"],
                      reduced_bounds=a["reduced_bounds"])


# Small I/O helpers -----------------------------------------------------------
def _write_json(path, payload, metadata=None):
    """Deterministic JSON; volatile fields only inside the ``metadata`` block."""
    out = dict(payload)
    if metadata is not None:
        out["metadata"] = metadata
    Path(path).write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"missing stage input {path}") from None


def _metadata():
    from . import __version__

    return {"created": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "version": __version__}


def _write_matrix(path, X):
    Path(path).write_text("".join(" ".join(f"{v:.17g}" for v in row) + "\n" for row in np.atleast_2d(X)))


def _read_matrix(path):
    return np.loadtxt(path, ndmin=2)


def _parse_mu(text, design):
    if text is None:
        return None
    p = Path(text)
    values = _read_matrix(p)[0] if p.exists() else np.array([float(v) for v in text.split(",")])
    if values.shape != (design.n_params,):
        raise ConfigurationError(f"expected {design.n_params} parameter values, got {values.size}")
    if np.any(values < design.lower) or np.any(values > design.upper):
        raise ConfigurationError("parameter vector outside the design bounds")
    return values


def _open_db(cfg, design, work):
    return SnapshotDb(work / "db", design.hull.topology_hash, design.hull.n_vertices, design.spec.hash)


def _load_roms(work, design):
    roms = {k: load_rom(work / "rom" / k) for k in FIELD_KINDS}
    for rom in roms.values():
        if rom.mesh_binding != design.hull.topology_hash:
            raise BindingError("ROM was built on a different surface mesh")
    return roms


def _rom_error(roms, design, mu, p, tau):
    pr = roms["pressure"].predict(mu)
    tr = roms["shear"].predict(mu)
    ct_fom = design.ct_from_fields(mu[None], p[None], tau[None, :, 0])["ct"][0]
    ct_rom = design.rom_ct(roms, mu[None])[0]
    return {
        "pressure_field": float(np.linalg.norm(pr - p) / np.linalg.norm(p)),
        "shear_field": float(np.linalg.norm(tr - tau.reshape(-1)) / np.linalg.norm(tau)),
        "ct_fom": float(ct_fom),
        "ct_rom": float(ct_rom),
        "ct_relative": float(abs(ct_rom - ct_fom) / abs(ct_fom)),
    }


# Subcommands -----------------------------------------------------------------
def cmd_fixture(cfg, args, work):
    out = work / "fixture"
    out.mkdir(parents=True, exist_ok=True)
    hull = hull_fixture()
    write_stl(hull, out / "hull.stl", name="hull")
    write_obj(hull, out / "hull.obj")
    write_vmesh(volume_fixture(), out / "volume.vmesh")
    _write_json(out / "fixture.json", {"hull_hash": hull.topology_hash, "n_vertices": hull.n_vertices,
                                       "n_triangles": hull.n_triangles})
    return {"directory": str(out)}


def cmd_sample(cfg, args, work):
    design = _design(cfg)
    s = cfg["sampling"]
    count = args.count or s["count"]
    X = sample_parameters(count, (design.lower, design.upper), cfg["seeds"]["sampling"], s["scheme"],
                          design.n_params)
    _write_matrix(work / "samples.txt", X)
    return {"samples": str(work / "samples.txt"), "count": int(len(X))}


def cmd_snapshots(cfg, args, work):
    design = _design(cfg, with_volume=args.morph)
    X = _read_matrix(args.samples or work / "samples.txt")
    db = _open_db(cfg, design, work)
    before = len(db)
    generate_snapshots(X, design, db, morph=args.morph, workers=cfg["workers"] or os.cpu_count() or 1)
    return {"database": str(db.directory), "added": len(db) - before, "total": len(db),
            "failed": len(db.manifest["failed"]), "db_hash": db.content_hash()}


def cmd_rom_build(cfg, args, work):
    design = _design(cfg)
    db = _open_db(cfg, design, work)
    if len(db) == 0:
        raise FileNotFoundError(f"snapshot database {db.directory} is empty")
    info = {}
    for kind in FIELD_KINDS:
        rom = build_rom(db.snapshot_matrix(kind), cfg["rom"]["modes"], db.mesh_hash, **_gp_options(cfg))
        save_rom(rom, work / "rom" / kind)
        info[kind] = {"modes": rom.basis.n_modes,
                      "singular_values": [float(v) for v in rom.basis.singular_values]}
    _write_json(work / "rom" / "rom_build.json", {"db_hash": db.content_hash(), "roms": info})
    return {"rom": str(work / "rom"), "snapshots": len(db)}


def cmd_rom_eval(cfg, args, work):
    design = _design(cfg)
    roms = _load_roms(work, design)
    mu = _parse_mu(args.mu, design)
    if mu is None:
        mu = np.zeros(design.n_params)
    ct = design.rom_ct(roms, mu[None], breakdown=True)
    out = {"mu": mu.tolist(), "ct_rom": float(ct["ct"][0]), "pressure_force": float(ct["pressure"][0]),
           "friction_force": float(ct["friction"][0]), "S": float(ct["S"][0]), "Delta": float(ct["Delta"][0])}
    db = _open_db(cfg, design, work)
    if db.has(mu):
        tag = next(e["tag"] for e in db.manifest["entries"] if np.array_equal(e["mu"], mu))
        p = db.column(tag, "pressure")
        tau = db.column(tag, "shear").reshape(-1, 3)
        out["database_error"] = _rom_error(roms, design, mu, p, tau)
    _write_json(work / "rom_eval.json", out)
    return out


def cmd_morph(cfg, args, work):
    design = _design(cfg, with_volume=True)
    mu = _parse_mu(args.mu, design)
    if mu is None:
        mu = np.zeros(design.n_params)
    mesh, report = design.morph(mu)
    out_dir = work / "morph"
    out_dir.mkdir(parents=True, exist_ok=True)
    write_vmesh(mesh, out_dir / "volume.vmesh")
    write_stl(design.deform(mu), out_dir / "hull.stl", name="hull")
    payload = {"mu": mu.tolist(), "topology_hash": mesh.topology_hash,
               "topology_preserved": mesh.topology_hash == design.volume.topology_hash,
               "quality": report.as_dict(), "rbf_radius": design.rbf_radius}
    _write_json(out_dir / "morph.json", payload)
    return payload


def cmd_optimize(cfg, args, work):
    design = _design(cfg)
    roms = _load_roms(work, design)
    acfg = _asga_config(cfg)
    restart = cfg["asga"]["restart"]
    if restart not in ("continue", "fresh"):
        raise ConfigurationError("asga.restart must be 'continue' or 'fresh'")
    seed_path = work / "restart_population.txt"
    initial = _read_matrix(seed_path) if restart == "continue" and seed_path.exists() else None
    res = optimize(lambda P: design.rom_ct(roms, P), (design.lower, design.upper), acfg,
                   method=cfg["asga"]["method"], vectorized=True, initial=initial)
    _write_matrix(work / "final_population.txt", res.population)
    baseline = float(design.rom_ct(roms, np.zeros((1, design.n_params)))[0])
    write_history(work / "history.csv", res.history)
    payload = {
        "best_mu": res.best_parameters.tolist(),
        "best_genes": res.best.genes.tolist(),
        "ct_rom": res.best.fitness,
        "ct_rom_baseline": baseline,
        "evaluations": res.n_evaluations,
        "flags": res.flags,
        "eigenvalues": None if res.eigenvalues is None else [float(v) for v in res.eigenvalues],
        "seed": acfg.seed,
        "method": cfg["asga"]["method"],
        "restarted_from_population": initial is not None,
        "rom_hash": _read_json(work / "rom" / "rom_build.json")["db_hash"],
    }
    _write_json(work / "optimize.json", payload)
    return {k: payload[k] for k in ("best_mu", "ct_rom", "ct_rom_baseline", "evaluations")}


def cmd_validate(cfg, args, work):
    design = _design(cfg)
    roms = _load_roms(work, design)
    opt = _read_json(work / "optimize.json")
    mu = np.array(opt["best_mu"], dtype=float)
    p, tau = design.fom_fields(mu[None])
    p, tau = p[0], tau[0]
    err = _rom_error(roms, design, mu, p, tau)
    base = design.fom_ct(np.zeros((1, design.n_params)))[0]
    record = {"run": args.run, "mu": mu.tolist(), "rom_error": err, "ct_fom_baseline": float(base),
              "ct_reduction": float((base - err["ct_fom"]) / base), "enriched": False}
    if args.enrich:
        # the next optimize run continues from this run's final population
        final = work / "final_population.txt"
        if final.exists():
            (work / "restart_population.txt").write_bytes(final.read_bytes())
        db = _open_db(cfg, design, work)
        if db.has(mu):
            logger.info("optimum already in the database; enrichment skipped")
            record["enriched"] = "already present"
        else:
            roms = enrich(db, mu, (p, tau), cfg["rom"]["modes"], **_gp_options(cfg))
            for kind, rom in roms.items():
                save_rom(rom, work / "rom" / kind)
            build = _read_json(work / "rom" / "rom_build.json")
            build["db_hash"] = db.content_hash()
            _write_json(work / "rom" / "rom_build.json", build)
            record["enriched"] = True
        record["db_size"] = len(db)
    path = work / "validation.json"
    runs = _read_json(path)["runs"] if path.exists() else []
    runs = [r for r in runs if r["run"] != args.run] + [record]
    runs.sort(key=lambda r: r["run"])
    _write_json(path, {"runs": runs})
    return record


def _plots(work, opt, history, validation, spectra):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "hullopt"
    files = {}

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(history["evaluations"], history["best"], label="best")
    ax.plot(history["evaluations"], history["mean"], label="population mean", alpha=0.7)
    ax.set_xlabel("fitness evaluations")
    ax.set_ylabel("C_t (ROM)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(work / "history.svg", metadata={"Date": None})
    plt.close(fig)
    files["history"] = "history.svg"

    if opt.get("eigenvalues"):
        lam = np.array(opt["eigenvalues"])
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.semilogy(np.arange(1, len(lam) + 1), np.maximum(lam, 1e-300), "o-")
        ax.set_xlabel("index")
        ax.set_ylabel("eigenvalue")
        fig.tight_layout()
        fig.savefig(work / "eigenvalues.svg", metadata={"Date": None})
        plt.close(fig)
        files["eigenvalues"] = "eigenvalues.svg"

    if validation or spectra:
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
        if validation:
            runs = [r["run"] for r in validation]
            axes[0].semilogy(runs, [r["rom_error"]["ct_relative"] for r in validation], "o-", label="C_t")
            axes[0].semilogy(runs, [r["rom_error"]["pressure_field"] for r in validation], "s--",
                             label="pressure field")
            axes[0].set_xlabel("run")
            axes[0].set_ylabel("relative ROM error at optimum")
            axes[0].legend()
        for kind, sv in spectra.items():
            axes[1].semilogy(np.arange(1, len(sv) + 1), sv, label=kind)
        axes[1].set_xlabel("mode")
        axes[1].set_ylabel("singular value")
        if spectra:
            axes[1].legend()
        fig.tight_layout()
        fig.savefig(work / "rom_error.svg", metadata={"Date": None})
        plt.close(fig)
        files["rom_error"] = "rom_error.svg"
    return files


def cmd_report(cfg, args, work):
    opt = _read_json(work / "optimize.json")
    rows = np.genfromtxt(work / "history.csv", delimiter=",", names=True)
    history = {k: np.atleast_1d(rows[k]) for k in ("evaluations", "best", "mean")}
    vpath = work / "validation.json"
    validation = _read_json(vpath)["runs"] if vpath.exists() else []
    build = _read_json(work / "rom" / "rom_build.json")
    spectra = {k: v["singular_values"] for k, v in build["roms"].items()}
    files = _plots(work, opt, history, validation, spectra)
    last = validation[-1] if validation else None
    summary = {
        "config_hash": config_hash(cfg),
        "config": cfg,
        "seeds": {"sampling": cfg["seeds"]["sampling"], "asga": opt["seed"]},
        "db_hash": build["db_hash"],
        "optimum": {"mu": opt["best_mu"], "ct_rom": opt["ct_rom"], "evaluations": opt["evaluations"],
                    "flags": opt["flags"]},
        "ct_rom_baseline": opt["ct_rom_baseline"],
        "eigenvalues": opt["eigenvalues"],
        "validation": validation,
        "ct_reduction": None if last is None else last["ct_reduction"],
        "rom_error_at_optimum": None if last is None else last["rom_error"]["ct_relative"],
        "reseeding": ("runs after an enrichment continue from the previous final population"
                      if cfg["asga"]["restart"] == "continue"
                      else "fresh random population from the configured seed for every run"),
        "plots": files,
    }
    _write_json(work / "report.json", summary, metadata=_metadata())
    return {k: summary[k] for k in ("config_hash", "db_hash", "ct_reduction", "rom_error_at_optimum", "plots")}


COMMANDS = {
    "fixture": cmd_fixture,
    "sample": cmd_sample,
    "snapshots": cmd_snapshots,
    "rom-build": cmd_rom_build,
    "rom-eval": cmd_rom_eval,
    "morph": cmd_morph,
    "optimize": cmd_optimize,
    "validate": cmd_validate,
    "report": cmd_report,
}


def build_parser():
    p = _Parser(prog="hullopt", description="Hull shape optimization with FFD, POD-GPR and ASGA.")
    p.add_argument("--config", help=f"JSON run configuration (default: ${CONFIG_ENV})")
    p.add_argument("--workdir", help="directory for all stage artifacts")
    p.add_argument("--workers", type=int, help="worker threads (default: machine parallelism)")
    p.add_argument("--seed", type=int, help="seed for both sampling and the optimizer")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("fixture", help="write the bundled hull and volume mesh")
    s = sub.add_parser("sample", help="sample the design box")
    s.add_argument("--count", type=int)
    s.add_argument("--scheme", choices=["uniform", "latin-hypercube"])
    s = sub.add_parser("snapshots", help="evaluate the synthetic full-order model")
    s.add_argument("--samples", help="parameter file (default: <workdir>/samples.txt)")
    s.add_argument("--morph", action="store_true", help="also morph the volume mesh for each sample")
    s = sub.add_parser("rom-build", help="build the pressure and shear POD-GPR models")
    s.add_argument("--modes", type=int)
    s.add_argument("--exponent", choices=["unsquared", "standard"])
    s = sub.add_parser("rom-eval", help="ROM C_t at one parameter vector")
    s.add_argument("--mu", help="comma-separated values or a parameter file")
    s = sub.add_parser("morph", help="morph the volume mesh at one parameter vector")
    s.add_argument("--mu", help="comma-separated values or a parameter file")
    s = sub.add_parser("optimize", help="run the optimizer on the ROM objective")
    s.add_argument("--method", choices=["asga", "ga"])
    s.add_argument("--generations", type=int)
    s = sub.add_parser("validate", help="check the optimum against the full-order model")
    s.add_argument("--run", type=int, default=1, help="run index recorded with the result")
    s.add_argument("--enrich", action="store_true", help="add the optimum to the database and rebuild")
    sub.add_parser("report", help="write report.json and SVG plots")
    return p


def _apply_flags(cfg, args):
    if args.workdir:
        cfg["paths"]["workdir"] = args.workdir
    if args.workers:
        cfg["workers"] = args.workers
    if args.seed is not None:
        cfg["seeds"] = {"sampling": args.seed, "asga": args.seed}
    for flag, (section, key) in {"count": ("sampling", "count"), "scheme": ("sampling", "scheme"),
                                 "modes": ("rom", "modes"), "exponent": ("rom", "exponent"),
                                 "method": ("asga", "method"),
                                 "generations": ("asga", "generations")}.items():
        v = getattr(args, flag, None)
        if v is not None:
            cfg[section][key] = v
    return cfg


def _fail(code, exc):
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(1, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_flags(load_config(args.config), args)
        work = Path(cfg["paths"]["workdir"])
        work.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command](cfg, args, work)
    except (ConfigurationError, UsageError) as exc:
        return _fail(1, exc)
    except _NUMERIC as exc:
        return _fail(2, exc)
    except (OSError, MeshParseError) as exc:
        return _fail(3, exc)
    except MeshError as exc:
        return _fail(2, exc)
    except (ValueError, KeyError, TypeError) as exc:
        return _fail(1, exc)
    print(json.dumps(result, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
