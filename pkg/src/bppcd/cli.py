"""Command-line entry point: ``bppcd {detect,simulate,benchmark,gibbs}``.

Exit codes: 0 success, 2 invalid input, 3 numeric failure, 4 output location
not writable. ``BPP_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import platform
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import NUMBA_ENABLED
from .config import RunConfig
from .errors import InvalidInputError, NumericFailureError
from .inference import detect, log_transitions
from .io import format_time, read_series

log = logging.getLogger("bppcd")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_UNWRITABLE = 0, 2, 3, 4


class UnwritableError(OSError):
    pass


def schema_path() -> Path:
    """Location of the JSON schema for ``detect`` output."""
    return Path(str(resources.files("bppcd") / "schemas" / "detect_output.schema.json"))


def _dump_json(obj, path: Path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    _write_text(path, text)


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise UnwritableError(f"cannot write {path}: {exc}") from exc


def _ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UnwritableError(f"cannot create {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise UnwritableError(f"directory {path} is not writable")
    return path


# --------------------------------------------------------------------------
# configuration

def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON object of model settings")
    p.add_argument("--kmax", type=int, help="maximum number of segments")
    p.add_argument("--harmonics", type=int, help="number of seasonal harmonics")
    p.add_argument("--nu", type=float, help="t degrees of freedom")
    p.add_argument("--no-trend", action="store_true", help="drop the linear trend")
    p.add_argument("--no-contrasts", action="store_true", help="drop interannual contrasts")
    p.add_argument("--gaussian", action="store_true", help="Gaussian instead of t errors")
    p.add_argument("--prior", choices=["noninformative", "equal-volume"])
    p.add_argument("--seed", type=int)


def run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if args.kmax is not None:
        changes["K_max"] = args.kmax
    if args.harmonics is not None:
        changes["H"] = args.harmonics
    if args.nu is not None:
        changes["nu"] = args.nu
    if args.no_trend:
        changes["trend"] = False
    if args.no_contrasts or (changes.get("H", cfg.H) < 2 and cfg.contrasts):
        changes["contrasts"] = False
    if args.gaussian:
        changes["likelihood"] = "gaussian"
    if args.prior:
        changes["prior_variant"] = args.prior.replace("-", "_")
    if args.seed is not None:
        changes["seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


# --------------------------------------------------------------------------
# commands

def cmd_detect(args) -> int:
    cfg = run_config(args)
    series = read_series(args.input)
    out = Path(args.output)
    _ensure_dir(out.parent)
    report = detect(series.values, series.times, cfg)
    fit = report.fits[report.map_k - 1]
    grid = report.grid

    fitted_path = out.with_name(out.stem + ".fitted.csv")
    lines = ["time,y,fitted,state"]
    for i in range(len(grid)):
        lines.append(",".join([
            str(format_time(series.times[i])), repr(float(series.values[i])),
            repr(float(report.fitted[i])), str(int(report.map_path.states[i])),
        ]))
    _write_text(fitted_path, "\n".join(lines) + "\n")

    segments = []
    z = report.map_path.states
    for j in np.unique(z):
        idx = np.flatnonzero(z == j)
        segments.append({
            "state": int(j),
            "theta": [float(v) for v in fit.params.theta[j - 1]],
            "start": format_time(series.times[idx[0]]),
            "end": format_time(series.times[idx[-1]]),
            "n_obs": int(idx.size),
        })
    doc = {
        "config": cfg.to_dict(),
        "n": int(grid.n),
        "n_obs": len(grid),
        "posterior_over_k": [float(v) for v in report.posterior_k],
        "map_k": int(report.map_k),
        "changes": [
            {"raw_time": format_time(c.raw_time), "std_time": c.std_time,
             "from": c.from_state, "to": c.to_state}
            for c in report.change_times
        ],
        "segments": segments,
        "sigma2": float(fit.params.sigma2),
        "phi": [float(v) for v in fit.params.phi],
        "converged": [bool(f.converged) for f in report.fits],
        "fitted": fitted_path.name,
    }
    _dump_json(doc, out)
    log.info("k=%d, %d change(s); wrote %s", report.map_k, report.n_changes, out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simstudy import FactorialSetting, derive_seed, generate_dataset

    setting = FactorialSetting(args.time_dist, args.sigma2, args.noise_nu, args.delta,
                               args.k_true, args.n_obs, args.span_years, args.replicate)
    out = _ensure_dir(Path(args.out_dir))
    seed = derive_seed(args.seed, setting.setting_id, setting.replicate)
    data = generate_dataset(setting, seed)
    stem = setting.dataset_id
    rows = ["time,value"] + [f"{float(t)!r},{float(v)!r}" for t, v in zip(data.raw_days, data.y)]
    _write_text(out / f"{stem}.csv", "\n".join(rows) + "\n")
    _dump_json({
        "dataset_id": stem,
        "true_change_times": data.true_change_times,
        "true_change_indices": [int(i) for i in data.true_path.change_indices()],
        "setting": setting.columns() | {"replicate": setting.replicate},
        "global_seed": int(args.seed),
        "seed": int(seed),
    }, out / f"{stem}.truth.json")
    print(out / f"{stem}.csv")
    return EXIT_OK


def _study_settings(spec: dict):
    from .simstudy import FactorialSetting

    if "settings" in spec:
        return [FactorialSetting(**s) for s in spec["settings"]]
    grid = spec.get("grid", {})
    keys = sorted(grid)
    values = [grid[k] if isinstance(grid[k], list) else [grid[k]] for k in keys]
    return [FactorialSetting(**dict(zip(keys, combo))) for combo in itertools.product(*values)]


def cmd_benchmark(args) -> int:
    from . import simstudy

    try:
        spec = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read study config {args.config}: {exc}") from exc
    if not isinstance(spec, dict):
        raise InvalidInputError("study config must be a JSON object")
    try:
        settings = _study_settings(spec)
    except TypeError as exc:
        raise InvalidInputError(f"bad setting in study config: {exc}") from exc
    seed = args.seed if args.seed is not None else int(spec.get("seed", 0))
    window = args.window if args.window is not None else float(spec.get("window", simstudy.DEFAULT_WINDOW))
    external = {name: simstudy.read_external_detections(p)
                for name, p in spec.get("external", {}).items()}
    models = list(spec.get("models", ["bpp_robust"])) + [m for m in external if m not in spec.get("models", [])]
    out = Path(args.output)
    _ensure_dir(out.parent)
    if out.exists() and not os.access(out, os.W_OK):
        raise UnwritableError(f"{out} is not writable")
    start = time.perf_counter()
    rows = simstudy.run_factorial(
        settings, int(spec.get("replicates", 1)), models, seed, args.jobs, out,
        args.resume, external, window, int(spec.get("K_max", 6)),
    )
    meta = {
        "bppcd_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba_enabled": NUMBA_ENABLED,
        "seed": seed,
        "window": window,
        "models": models,
        "replicates": int(spec.get("replicates", 1)),
        "n_settings": len(settings),
        "n_rows": len(rows),
        "wall_seconds": round(time.perf_counter() - start, 3),
        "fpr_definition": "bins of width `window` tiling [0,1]: bins holding a false positive "
                          "and no true change, over bins holding no true change",
    }
    _dump_json(meta, out.with_name(out.stem + ".meta.json"))
    return EXIT_OK


def cmd_gibbs(args) -> int:
    from .chain import TimeGrid
    from .gibbs import gibbs_run
    from .model import HarmonicSpec, RobustConfig, build_design

    cfg = run_config(args)
    series = read_series(args.input)
    out = Path(args.output)
    _ensure_dir(out.parent)
    k = args.k
    if k is None:
        k = detect(series.values, series.times, cfg).map_k
    grid = TimeGrid.from_raw(series.times)
    spec = HarmonicSpec.for_grid(grid, cfg.H, cfg.trend, cfg.contrasts)
    bundle = build_design(grid, spec, cfg.beta_precision, cfg.psi, cfg.lam)
    trace = gibbs_run(series.values, grid, bundle, k, RobustConfig(cfg.nu, cfg.likelihood),
                      args.iters, args.burnin, args.thin, cfg.seed,
                      log_trans=log_transitions(k, grid, cfg.chain))
    try:
        trace.to_csv(out, grid)
    except OSError as exc:
        raise UnwritableError(f"cannot write {out}: {exc}") from exc
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bppcd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="detect change points in a time,value CSV")
    p.add_argument("input")
    p.add_argument("-o", "--output", default="detect.json")
    _model_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("simulate", help="write one synthetic dataset and its truth")
    p.add_argument("--time-dist", default="uniform_grid",
                   choices=["uniform_grid", "beta_half", "beta_two"])
    p.add_argument("--sigma2", type=float, default=0.1)
    p.add_argument("--noise-nu", type=float, default=3.0)
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--k-true", type=int, default=1)
    p.add_argument("--n-obs", type=int, default=500)
    p.add_argument("--span-years", type=float, default=20.0)
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="run the factorial simulation study")
    p.add_argument("--config", required=True, help="JSON study description")
    p.add_argument("-o", "--output", default="results.csv")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--window", type=float)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("gibbs", help="posterior simulation for a fixed number of segments")
    p.add_argument("input")
    p.add_argument("-o", "--output", default="trace.csv")
    p.add_argument("--k", type=int, help="number of segments (default: posterior mode)")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--burnin", type=int, default=500)
    p.add_argument("--thin", type=int, default=2)
    _model_flags(p)
    p.set_defaults(func=cmd_gibbs)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("BPP_LOG", "WARNING").upper()
    logging.basicConfig(level=level if isinstance(logging.getLevelName(level), int) else "WARNING",
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericFailureError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except UnwritableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNWRITABLE


if __name__ == "__main__":
    sys.exit(main())
