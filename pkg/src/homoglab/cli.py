"""Experiment driver.

Parses a config (flags or JSON file), dispatches to the library, and writes
reproducible CSV/JSON artifacts plus a run manifest.  Outputs are written
atomically (temp file + rename), numeric CSV cells carry 17 significant
digits, and aggregation runs in fixed sample order, so an identical config
produces byte-identical files at any thread count.

Exit codes: 0 success, 1 replay mismatch, 2 solver failure, 3 config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .lattice import BoxSpec
from .ensembles import EnsembleError, EnsembleSpec, SampleId, sample
from .elliptic import SolverConfig, SolverError, collecting_reports
from .correctors import ahom_cell, ahom_rve, corrector_set, verify_ahom_properties
from .twoscale import two_scale_experiment
from .quant import (
    birkhoff_rate,
    corrector_growth,
    green_decay,
    meyers_probe,
    semigroup_decay,
    sg_check,
)
from . import oned as oned_mod

EXIT_OK = 0
EXIT_REPLAY_MISMATCH = 1
EXIT_SOLVER_FAILURE = 2
EXIT_CONFIG_ERROR = 3

EXPERIMENTS = (
    "oned", "cell", "ahom", "corrector", "twoscale",
    "growth", "sg", "semigroup", "green", "meyers", "birkhoff",
)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    params: dict
    ensemble: EnsembleSpec | None = None
    box: BoxSpec | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    out: str = "out"

    def to_json(self) -> dict:
        return {
            "experiment": self.experiment,
            "params": self.params,
            "ensemble": self.ensemble.to_json() if self.ensemble else None,
            "box": self.box.to_json() if self.box else None,
            "solver": {
                "tol": self.solver.tol,
                "max_iter": self.solver.max_iter,
                "anchor": self.solver.anchor,
                "preconditioner": self.solver.preconditioner,
            },
            "out": self.out,
        }

    @staticmethod
    def from_json(obj: dict) -> "ExperimentConfig":
        try:
            experiment = obj["experiment"]
            if experiment not in EXPERIMENTS:
                raise ConfigError(f"unknown experiment {experiment!r}")
            ens = obj.get("ensemble")
            box = obj.get("box")
            sol = obj.get("solver") or {}
            return ExperimentConfig(
                experiment=experiment,
                params=dict(obj.get("params") or {}),
                ensemble=EnsembleSpec.from_json(ens) if ens else None,
                box=BoxSpec.from_json(box) if box else None,
                solver=SolverConfig(
                    tol=float(sol.get("tol", 1e-10)),
                    max_iter=sol.get("max_iter"),
                    anchor=sol.get("anchor", "mean-zero"),
                    preconditioner=sol.get("preconditioner", "none"),
                ),
                out=obj.get("out", "out"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _csv_text(header: list[str], rows: list[list]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _map_fn(threads: int):
    if threads <= 1:
        return map, None
    pool = ThreadPoolExecutor(max_workers=threads)
    return pool.map, pool


# ---------------------------------------------------------------------------
# 1d profile / forcing catalog (declarative so configs stay data-only)
# ---------------------------------------------------------------------------


def profile_from_config(p: dict) -> "oned_mod.Profile1D":
    a_cfg = p.get("a", {"kind": "shifted-sine", "offset": 2.0, "amplitude": 1.0})
    f_cfg = p.get("f", {"kind": "linear-odd", "scale": 3.0})

    kind = a_cfg.get("kind")
    if kind == "constant":
        val = float(a_cfg["value"])
        a_unit = lambda y: np.full_like(np.asarray(y, dtype=np.float64), val)
    elif kind == "shifted-sine":
        off, amp = float(a_cfg.get("offset", 2.0)), float(a_cfg.get("amplitude", 1.0))
        if off - abs(amp) <= 0:
            raise ConfigError("shifted-sine profile must stay positive")
        a_unit = lambda y: off + amp * np.sin(2.0 * np.pi * np.asarray(y, dtype=np.float64))
    elif kind == "layered":
        lo, hi = float(a_cfg["alpha"]), float(a_cfg["beta"])
        frac = float(a_cfg.get("fraction", 0.5))
        if not (0 < lo and 0 < hi and 0 < frac < 1):
            raise ConfigError("layered profile needs positive values and 0 < fraction < 1")
        # nodes on a jump carry the harmonic midpoint: the pipeline
        # integrates 1/a, and this convention keeps the trapezoid rule exact
        mid = 2.0 / (1.0 / lo + 1.0 / hi)

        def a_unit(y):
            yy = np.asarray(y, dtype=np.float64) % 1.0
            out = np.where(yy < frac, lo, hi)
            at_jump = np.isclose(yy, frac) | np.isclose(yy, 0.0) | np.isclose(yy, 1.0)
            return np.where(at_jump, mid, out)
    else:
        raise ConfigError(f"unknown 1d conductivity kind {kind!r}")

    fkind = f_cfg.get("kind")
    if fkind == "one":
        f = lambda x: np.ones_like(np.asarray(x, dtype=np.float64))
    elif fkind == "constant":
        fv = float(f_cfg["value"])
        f = lambda x: np.full_like(np.asarray(x, dtype=np.float64), fv)
    elif fkind == "linear-odd":
        sc = float(f_cfg.get("scale", 3.0))
        f = lambda x: -sc * (2.0 * np.asarray(x, dtype=np.float64) - 1.0)
    elif fkind == "sine":
        k = int(f_cfg.get("k", 1))
        f = lambda x: np.sin(2.0 * np.pi * k * np.asarray(x, dtype=np.float64))
    else:
        raise ConfigError(f"unknown 1d forcing kind {fkind!r}")

    eps_list = p.get("eps_list", [1 / 8, 1 / 16, 1 / 32, 1 / 64, 1 / 128])
    ppp = int(p.get("points_per_period", 64))
    return oned_mod.Profile1D(a_unit=a_unit, f=f, eps=float(max(eps_list)),
                              points_per_period=ppp), [float(e) for e in eps_list]


# ---------------------------------------------------------------------------
# runners: each returns {filename: text}
# ---------------------------------------------------------------------------


def _require(cfg: ExperimentConfig, *what: str) -> None:
    for item in what:
        if item == "ensemble" and cfg.ensemble is None:
            raise ConfigError(f"{cfg.experiment}: --ensemble is required")
        if item == "box" and cfg.box is None:
            raise ConfigError(f"{cfg.experiment}: --L (and --d) are required")


def _run_oned(cfg: ExperimentConfig, map_fn) -> dict[str, str]:
    from dataclasses import replace

    profile, eps_list = profile_from_config(cfg.params)
    sup = oned_mod.sup_error_check(profile, eps_list)
    rows = []
    for eps in sorted(eps_list, reverse=True):
        ts = oned_mod.two_scale_check_1d(replace(profile, eps=eps))
        k = int(np.argmin(np.abs(sup.eps - eps)))
        rows.append([eps, sup.sup_errors[k], ts.error, ts.bound_statement, ts.ratio_statement])
    return {cfg.out: _csv_text(
        ["eps", "sup_error", "h1_twoscale_error", "bound_rhs", "ratio"], rows)}


def _run_cell(cfg: ExperimentConfig, map_fn) -> dict[str, str]:
    _require(cfg, "ensemble", "box")
    idx = int(cfg.params.get("sample", 0))
    a = sample(cfg.ensemble, cfg.box, SampleId(idx))
    t = ahom_cell(a, cfg.solver)
    props = verify_ahom_properties(t, lam=cfg.ensemble.lam)
    return {cfg.out: _json_text({
        **t.to_json(),
        "sample": idx,
        "seed": cfg.ensemble.master_seed,
        "properties": props.to_json(),
        "config": cfg.to_json(),
    })}


def _run_ahom(cfg: ExperimentConfig, map_fn) -> dict[str, str]:
    _require(cfg, "ensemble", "box")
    n = int(cfg.params.get("samples", 16))
    with collecting_reports() as collector:
        t = ahom_rve(cfg.ensemble, cfg.box, n, cfg.solver, map_fn=map_fn)
    props = verify_ahom_properties(t, lam=cfg.ensemble.lam)
    return {cfg.out: _json_text({
        **t.to_json(),
        "seed": cfg.ensemble.master_seed,
        "properties": props.to_json(),
        "solver_reports": collector.summary(),
        "config": cfg.to_json(),
    })}


def _run_corrector(cfg: ExperimentConfig, map_fn) -> dict[str, str]:
    _require(cfg, "ensemble", "box")
    idx = int(cfg.params.get("sample", 0))
    direction = int(cfg.params.get("dir", 0))
    a = sample(cfg.ensemble, cfg.box, SampleId(idx))
    cs = corrector_set(a, direction, cfg.solver)
    box = cs.phi.box
    coords = box.coordinate_arrays()
    header = (["site"] + [f"x{k+1}" for k in range(box.d)] + ["phi"]
              + [f"q_{j+1}" for j in range(box.d)]
              + [f"sigma_{j+1}{k+1}" for j in range(box.d) for k in range(j + 1, box.d)])
    rows = []
    for i in range(box.n_sites):
        row = [i, *coords[i], cs.phi.values[i]]
        row += list(cs.q.values[i])
        row += [cs.sigma.values[i, j, k] for j in range(box.d) for k in range(j + 1, box.d)]
        rows.append(row)
    meta = {
        "direction": direction,
        "sample": idx,
        "seed": cfg.ensemble.master_seed,
        "ahom_row": [float(v) for v in cs.ahom_row],
        "solver_reports": [r.to_json() for r in cs.reports],
    }
    return {cfg.out: _csv_text(header, rows),
            cfg.out + ".meta.json": _json_text(meta)}


def _run_twoscale(cfg: ExperimentConfig, map_fn) -> dict[str, str]:
    _require(cfg, "ensemble", "box")
    n = int(cfg.params.get("samples", 50))
    alpha = float(cfg.params.get("alpha", 0.1))
    reports = two_scale_experiment(cfg.ensemble, cfg.box, alpha, n,
                                   cfg=cfg.solver, map_fn=map_fn)
    rows = [[r.sample, r.lhs, r.rhs_phi, r.rhs_sigma, r.ratio] for r in reports]
    return {cfg.out: _csv_text(["sample", "lhs", "rhs_phi", "rhs_sigma", "ratio"], rows)}


def _run_growth(cfg: ExperimentConfig, map_fn) -> dict[str, str]:
    _require(cfg, "ensemble", "box")
    radii = [int(r) for r in cfg.params.get("radii", [4, 8, 16, 32])]
    p = int(cfg.params.get("p", 1))
    n = int(cfg.params.get("samples", 100))
    fit = corrector_growth(cfg.ensemble, cfg.box, radii, p=p, n=n,
                           cfg=cfg.solver, map_fn=map_fn)
    return {cfg.out: _json_text({
        **fit.to_json(),
        "seed": cfg.ensemble.master_seed,
        "box": cfg.box.to_json(),
        "n": n,
        "config": cfg.to_json(),
    })}


def _run_sg(cfg: ExperimentConfig, map_fn) -> dict[str, str]:
    _require(cfg, "ensemble", "box")
    n = int(cfg.params.get("samples", 500))
    reports = sg_check(cfg.ensemble, cfg.box, n, map_fn=map_fn)
    return {cfg.out: _json_text({
        "reports": [r.to_json() for r in reports],
        "seed": cfg.ensemble.master_seed,
        "box": cfg.box.to_json(),
        "n": n,
        "config": cfg.to_json(),
    })}


def _run_semigroup(cfg: ExperimentConfig, map_fn) -> dict[str, str]:
    _require(cfg, "ensemble", "box")
    n = int(cfg.params.get("samples", 500))
    t_grid = [float(t) for t in cfg.params.get("t_grid", [1, 4, 16, 64])]
    rep = semigroup_decay(cfg.ensemble, cfg.box, t_grid, n=n, map_fn=map_fn)
    return {cfg.out: _json_text({
        **rep.to_json(),
        "seed": cfg.ensemble.master_seed,
        "box": cfg.box.to_json(),
        "n": n,
        "config": cfg.to_json(),
    })}


def _run_green(cfg: ExperimentConfig, map_fn) -> dict[str, str]:
    _require(cfg, "ensemble", "box")
    n = int(cfg.params.get("samples", 20))
    radii = cfg.params.get("radii")
    radii = [int(r) for r in radii] if radii else None
    rep = green_decay(cfg.ensemble, cfg.box, n, radii=radii,
                      cfg=cfg.solver, map_fn=map_fn)
    return {cfg.out: _json_text({
        **rep.to_json(),
        "seed": cfg.ensemble.master_seed,
        "box": cfg.box.to_json(),
        "n": n,
        "config": cfg.to_json(),
    })}


def _run_meyers(cfg: ExperimentConfig, map_fn) -> dict[str, str]:
    _require(cfg, "ensemble", "box")
    n = int(cfg.params.get("samples", 50))
    q = float(cfg.params.get("q", 1.1))
    alpha_w = float(cfg.params.get("alpha_w", 0.1))
    rep = meyers_probe(cfg.ensemble, cfg.box, n=n, q=q, alpha_w=alpha_w,
                       cfg=cfg.solver, map_fn=map_fn)
    return {cfg.out: _json_text({
        **rep.to_json(),
        "seed": cfg.ensemble.master_seed,
        "box": cfg.box.to_json(),
        "n": n,
        "config": cfg.to_json(),
    })}


def _run_birkhoff(cfg: ExperimentConfig, map_fn) -> dict[str, str]:
    _require(cfg, "ensemble", "box")
    n = int(cfg.params.get("samples", 200))
    R_list = [int(R) for R in cfg.params.get("R_list", [4, 8, 16, 32])]
    rep = birkhoff_rate(cfg.ensemble, cfg.box, R_list, n=n, map_fn=map_fn)
    return {cfg.out: _json_text({
        **rep.to_json(),
        "seed": cfg.ensemble.master_seed,
        "box": cfg.box.to_json(),
        "n": n,
        "config": cfg.to_json(),
    })}


_RUNNERS = {
    "oned": _run_oned,
    "cell": _run_cell,
    "ahom": _run_ahom,
    "corrector": _run_corrector,
    "twoscale": _run_twoscale,
    "growth": _run_growth,
    "sg": _run_sg,
    "semigroup": _run_semigroup,
    "green": _run_green,
    "meyers": _run_meyers,
    "birkhoff": _run_birkhoff,
}


def run(cfg: ExperimentConfig, threads: int = 1, write: bool = True) -> dict:
    """Execute an experiment config; returns the manifest dictionary.

    Output files and ``<out>.manifest.json`` are written atomically next to
    the configured paths when ``write`` is true.
    """
    config_json = cfg.to_json()
    config_blob = json.dumps(config_json, sort_keys=True).encode()
    map_fn, pool = _map_fn(threads)
    t0 = time.monotonic()
    try:
        with collecting_reports() as collector:
            outputs = _RUNNERS[cfg.experiment](cfg, map_fn)
    finally:
        if pool is not None:
            pool.shutdown()
    wall = time.monotonic() - t0
    manifest = {
        "artifact_version": __version__,
        "experiment": cfg.experiment,
        "config": config_json,
        "config_sha256": _sha256_hex(config_blob),
        "seed": cfg.ensemble.master_seed if cfg.ensemble else None,
        "outputs": {name: _sha256_hex(text.encode()) for name, text in sorted(outputs.items())},
        "wall_time_s": wall,
        "solver_summary": collector.summary(),
    }
    if write:
        for name, text in sorted(outputs.items()):
            _atomic_write(name, text)
        _atomic_write(cfg.out + ".manifest.json", _json_text(manifest))
    manifest["_outputs_text"] = outputs  # in-memory copy for replay diffing
    return manifest


def replay(manifest_path: str, threads: int = 1) -> tuple[bool, dict]:
    """Re-run a manifest's config and diff against the recorded outputs.

    Returns (match, report).  Under fixed-order aggregation the diff must be
    empty at any thread count; numeric deviation is reported for diagnosis.
    """
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    cfg = ExperimentConfig.from_json(manifest["config"])
    fresh = run(cfg, threads=threads, write=False)
    report = {"files": {}, "max_abs_deviation": 0.0, "match": True}
    for name, sha in manifest["outputs"].items():
        new_text = fresh["_outputs_text"].get(name)
        entry = {"recorded_sha256": sha}
        if new_text is None:
            entry["status"] = "missing"
            report["match"] = False
        else:
            new_sha = _sha256_hex(new_text.encode())
            entry["recomputed_sha256"] = new_sha
            entry["status"] = "identical" if new_sha == sha else "differs"
            if new_sha != sha:
                report["match"] = False
                if os.path.exists(name):
                    with open(name) as fh:
                        old_text = fh.read()
                    dev = _numeric_deviation(old_text, new_text)
                    entry["max_abs_deviation"] = dev
                    report["max_abs_deviation"] = max(report["max_abs_deviation"], dev)
        report["files"][name] = entry
    return report["match"], report


def _numeric_deviation(old: str, new: str) -> float:
    def numbers(text: str) -> list[float]:
        out = []
        for tok in text.replace(",", " ").replace(":", " ").split():
            try:
                out.append(float(tok.strip('"[]{}')))
            except ValueError:
                pass
        return out

    a, b = numbers(old), numbers(new)
    if len(a) != len(b):
        return float("inf")
    return float(max((abs(x - y) for x, y in zip(a, b)), default=0.0))


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="full experiment config JSON (flags override)")
    p.add_argument("--ensemble", help="ensemble spec JSON file")
    p.add_argument("--L", type=int, help="box side length")
    p.add_argument("--d", type=int, default=2, help="box dimension (default 2)")
    p.add_argument("--seed", type=int, help="override the ensemble master seed")
    p.add_argument("--samples", type=int, help="Monte Carlo sample count")
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get("HOMOGLAB_THREADS", "1")))
    p.add_argument("--tol", type=float, help="CG relative residual target")
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--precond", choices=["none", "spectral"],
                   help="CG preconditioner (results unchanged beyond tol)")
    p.add_argument("--out", help="output file path")
    p.add_argument("--gnuplot-script", action="store_true",
                   help="also emit a gnuplot script next to CSV outputs")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="homoglab",
        description="homogenization laboratory on periodic lattice boxes",
    )
    ap.add_argument("--version", action="version", version=f"homoglab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        _add_common(p)
        if name == "corrector":
            p.add_argument("--dir", type=int, default=0, help="corrector direction")
            p.add_argument("--sample", type=int, default=0)
        if name == "cell":
            p.add_argument("--sample", type=int, default=0)
        if name == "twoscale":
            p.add_argument("--alpha", type=float, default=0.1)
        if name == "growth":
            p.add_argument("--radii", type=int, nargs="+")
            p.add_argument("--p", type=int, default=1)
        if name == "green":
            p.add_argument("--radii", type=int, nargs="+")
        if name == "semigroup":
            p.add_argument("--t-grid", type=float, nargs="+", dest="t_grid")
        if name == "meyers":
            p.add_argument("--q", type=float, default=1.1)
            p.add_argument("--alpha-w", type=float, default=0.1, dest="alpha_w")
        if name == "birkhoff":
            p.add_argument("--R-list", type=int, nargs="+", dest="R_list")
    rp = sub.add_parser("replay")
    rp.add_argument("manifest", help="manifest JSON produced by a previous run")
    rp.add_argument("--threads", type=int,
                    default=int(os.environ.get("HOMOGLAB_THREADS", "1")))
    return ap


_PARAM_FLAGS = {
    "samples": "samples", "alpha": "alpha", "radii": "radii", "p": "p",
    "t_grid": "t_grid", "q": "q", "alpha_w": "alpha_w", "R_list": "R_list",
    "dir": "dir", "sample": "sample",
}


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        with open(args.config) as fh:
            cfg = ExperimentConfig.from_json(json.load(fh))
        if cfg.experiment != args.command:
            raise ConfigError(
                f"config is for {cfg.experiment!r}, invoked as {args.command!r}")
    else:
        cfg = ExperimentConfig(experiment=args.command, params={})
    if args.ensemble:
        cfg.ensemble = EnsembleSpec.load(args.ensemble)
    if args.seed is not None:
        if cfg.ensemble is None:
            raise ConfigError("--seed needs an ensemble")
        cfg.ensemble = EnsembleSpec(cfg.ensemble.kind, cfg.ensemble.params,
                                    cfg.ensemble.lam, args.seed)
    if args.L is not None:
        cfg.box = BoxSpec(d=args.d, L=args.L)
    solver_kwargs = {
        "tol": args.tol if args.tol is not None else cfg.solver.tol,
        "max_iter": args.max_iter if args.max_iter is not None else cfg.solver.max_iter,
        "anchor": cfg.solver.anchor,
        "preconditioner": args.precond if args.precond else cfg.solver.preconditioner,
    }
    cfg.solver = SolverConfig(**solver_kwargs)
    for attr, key in _PARAM_FLAGS.items():
        val = getattr(args, attr, None)
        if val is not None:
            cfg.params[key] = val
    if args.out:
        cfg.out = args.out
    return cfg


_GNUPLOT = """set datafile separator ','
set logscale xy
set key autotitle columnhead
plot '{csv}' using 1:2 with linespoints
"""


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "replay":
        try:
            ok, report = replay(args.manifest, threads=args.threads)
        except (OSError, ConfigError, json.JSONDecodeError) as exc:
            print(f"replay error: {exc}", file=sys.stderr)
            return EXIT_CONFIG_ERROR
        print(json.dumps(report, indent=2, sort_keys=True))
        return EXIT_OK if ok else EXIT_REPLAY_MISMATCH
    try:
        cfg = config_from_args(args)
        manifest = run(cfg, threads=args.threads)
    except (ConfigError, EnsembleError, FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE
    if getattr(args, "gnuplot_script", False) and cfg.out.endswith(".csv"):
        _atomic_write(cfg.out + ".gp", _GNUPLOT.format(csv=cfg.out))
    print(f"wrote {', '.join(sorted(manifest['outputs']))} "
          f"(manifest {cfg.out}.manifest.json)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
