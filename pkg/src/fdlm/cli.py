"""
Command line front end: ``fdlm {simulate,fit,filter,smooth,summarize,verify}``.

The CLI always uses the functional local level model (F = G = identity on the
configured grid). Every run writes ``manifest.json`` next to its outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .checks import run_checks
from .errors import ConfigError, FdlmError
from .io import DRAWS_HEADER, fmt_float, ingest, read_draws_csv, write_csv, write_json, write_series_csv
from .config import RunConfig, load_config
from .kalman import kalman_filter, smooth
from .mcmc import PosteriorDraws, posterior_bands, run_sampler, summarize_chains
from .statespace import FunctionalSeries, local_level_spec, simulate

log = logging.getLogger("fdlm")

COMMANDS = ("simulate", "fit", "filter", "smooth", "summarize", "verify")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdlm", description="Functional dynamic linear models on grids.")
    parser.add_argument("--version", action="version", version=f"fdlm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="TOML run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--output", type=Path, help="output directory")
        p.add_argument("--chains", type=int)
        p.add_argument("--log-transform", action="store_true", default=None)
        p.add_argument("--input", type=Path, help="input CSV (overrides data.input)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "summarize":
            p.add_argument("draws", nargs="*", type=Path, help="draws CSV files")
        if name == "verify":
            p.add_argument("--full", action="store_true", help="also run the slow parameter-recovery checks")
    return parser


def _overrides(args):
    ov = {
        "seed": args.seed,
        "output": str(args.output) if args.output else None,
        "sampler.chains": args.chains,
        "log_transform": args.log_transform,
        "data.input": str(args.input) if args.input else None,
    }
    if getattr(args, "draws", None):
        ov["summarize.draws"] = [str(p) for p in args.draws]
    if args.seed is not None:
        ov["sampler.seed"] = args.seed
    return ov


def _manifest(cfg: RunConfig, command, files):
    return {
        "command": command,
        "seed": cfg.seed,
        "config_sha256": cfg.hash(),
        "config": cfg.raw,
        "outputs": sorted(files),
        "versions": {
            "fdlm": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }


def _finish(cfg, command, files):
    write_json(cfg.output / "manifest.json", _jsonable(_manifest(cfg, command, files)))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return str(obj)


def _fixed_spec(cfg: RunConfig, command):
    for name, block in (("model.v", cfg.v), ("model.w", cfg.w)):
        if block.estimate:
            raise ConfigError(name, f"{command} needs fixed sigma2 and beta, not estimate = true")
    return local_level_spec(cfg.grid, cfg.c0.params, cfg.w.params, cfg.v.params, cfg.m0)


def _load_data(cfg: RunConfig):
    if cfg.input is None:
        raise ConfigError("data.input", "an input CSV is required (config data.input or --input)")
    if not cfg.input.is_file():
        raise ConfigError("data.input", f"{cfg.input} does not exist")
    series, report = ingest(cfg.input, len(cfg.grid), cfg.log_transform)
    if series.grid != cfg.grid:
        raise ConfigError("grid", "ingested grid differs from the configured grid; use grid.size")
    for day, n in report.incomplete_days:
        log.warning("dropped incomplete day %s (%d readings)", day, n)
    return series, report


def cmd_simulate(cfg: RunConfig):
    spec = _fixed_spec(cfg, "simulate")
    states, data = simulate(spec, cfg.days, cfg.seed)
    cfg.output.mkdir(parents=True, exist_ok=True)
    write_series_csv(cfg.output / "data.csv", data, cfg.start)
    grid = cfg.grid.points
    write_csv(
        cfg.output / "states.csv",
        ("t", "grid_index", "grid_point", "value"),
        ((t, j, float(grid[j]), float(x)) for t, row in enumerate(states.curves) for j, x in enumerate(row)),
    )
    truth = {
        "sigma2_v": cfg.v.params.sigma2,
        "log_beta_v": cfg.v.params.log_beta,
        "sigma2_w": cfg.w.params.sigma2,
        "log_beta_w": cfg.w.params.log_beta,
        "days": cfg.days,
        "grid_size": len(cfg.grid),
    }
    write_json(cfg.output / "truth.json", truth)
    _finish(cfg, "simulate", ["data.csv", "states.csv", "truth.json"])
    print(f"simulated {cfg.days} days on {len(cfg.grid)} grid points -> {cfg.output}")
    return 0


def _write_draws(path, draws: PosteriorDraws):
    write_csv(
        path,
        DRAWS_HEADER,
        ([int(it), *map(float, row)] for it, row in zip(draws.iterations, draws.draws)),
    )


def _summary_files(cfg, summary):
    (cfg.output / "summary.txt").write_text(summary.to_table() + "\n")
    (cfg.output / "summary.json").write_text(summary.to_json() + "\n")
    return ["summary.txt", "summary.json"]


def cmd_fit(cfg: RunConfig):
    series, report = _load_data(cfg)
    prior = cfg.prior
    start_v = cfg.v.start(prior.ig_shape_v, prior.ig_rate_v, prior.logbeta_mean_v)
    start_w = cfg.w.start(prior.ig_shape_w, prior.ig_rate_w, prior.logbeta_mean_w)
    template = local_level_spec(cfg.grid, cfg.c0.params, start_w, start_v, cfg.m0)

    if cfg.chains == 1:
        seeds = [cfg.sampler.seed]
    else:
        seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg.sampler.seed).spawn(cfg.chains)]
    chains = []
    for k, seed in enumerate(seeds):
        log.info("chain %d/%d (seed %d): %d iterations", k + 1, len(seeds), seed, cfg.sampler.iterations)
        chains.append(run_sampler(template, series, prior, dataclasses.replace(cfg.sampler, seed=seed)))
    summary = summarize_chains(chains)

    cfg.output.mkdir(parents=True, exist_ok=True)
    files = []
    for k, draws in enumerate(chains):
        name = "draws.csv" if len(chains) == 1 else f"draws_chain{k}.csv"
        _write_draws(cfg.output / name, draws)
        files.append(name)
    files += _summary_files(cfg, summary)
    write_json(cfg.output / "ingest.json", report.to_dict())
    files.append("ingest.json")

    if cfg.sampler.save_states:
        state_draws = np.concatenate([c.state_draws for c in chains])
        np.save(cfg.output / "state_draws.npy", state_draws, allow_pickle=False)
        files.append("state_draws.npy")
        bands = posterior_bands(state_draws, cfg.band_level)
        grid = cfg.grid.points
        labels = series.time_labels or tuple(range(1, len(series) + 1))
        rows = []
        for t in range(1, len(series) + 1):
            for j in range(len(grid)):
                rows.append(
                    (t, labels[t - 1], j, float(grid[j]), float(series.curves[t - 1, j]),
                     float(bands.median[t, j]), float(bands.lower[t, j]), float(bands.upper[t, j]))
                )
        write_csv(
            cfg.output / "bands.csv",
            ("t", "label", "grid_index", "grid_point", "observed", "median", "lower", "upper"),
            rows,
        )
        files.append("bands.csv")
    _finish(cfg, "fit", files)
    print(summary.to_table())
    return 0


def cmd_filter(cfg: RunConfig):
    spec = _fixed_spec(cfg, "filter")
    series, report = _load_data(cfg)
    fo = kalman_filter(spec, series)
    grid = cfg.grid.points
    rows = []
    for t, st in enumerate(fo.steps, start=1):
        R, Q, C = np.diag(st.R), np.diag(st.Q), np.diag(st.C)
        for j in range(len(grid)):
            rows.append(
                (t, j, float(grid[j]), float(series.curves[t - 1, j]), float(st.a[j]), float(R[j]),
                 float(st.f[j]), float(Q[j]), float(st.m[j]), float(C[j]))
            )
    cfg.output.mkdir(parents=True, exist_ok=True)
    write_csv(
        cfg.output / "filter.csv",
        ("t", "grid_index", "grid_point", "observed", "a", "R_diag", "f", "Q_diag", "m", "C_diag"),
        rows,
    )
    write_json(cfg.output / "filter.json", {"loglik": fo.loglik, "days": len(series), "ingest": report.to_dict()})
    _finish(cfg, "filter", ["filter.csv", "filter.json"])
    print(f"filtered {len(series)} days, log-likelihood {fmt_float(fo.loglik)}")
    return 0


def cmd_smooth(cfg: RunConfig):
    spec = _fixed_spec(cfg, "smooth")
    series, _ = _load_data(cfg)
    sm = smooth(kalman_filter(spec, series))
    grid = cfg.grid.points
    rows = []
    for t, st in enumerate(sm):
        S = np.diag(st.S)
        for j in range(len(grid)):
            rows.append((t, j, float(grid[j]), float(st.s[j]), float(S[j])))
    cfg.output.mkdir(parents=True, exist_ok=True)
    write_csv(cfg.output / "smooth.csv", ("t", "grid_index", "grid_point", "s", "S_diag"), rows)
    _finish(cfg, "smooth", ["smooth.csv"])
    print(f"smoothed {len(series)} days -> {cfg.output / 'smooth.csv'}")
    return 0


def cmd_summarize(cfg: RunConfig):
    if not cfg.draws_inputs:
        raise ConfigError("summarize.draws", "at least one draws CSV is required")
    chains = []
    for path in cfg.draws_inputs:
        if not path.is_file():
            raise ConfigError("summarize.draws", f"{path} does not exist")
        iters, draws = read_draws_csv(path)
        chains.append(PosteriorDraws(draws, (float("nan"), float("nan")), iters))
    summary = summarize_chains(chains)
    cfg.output.mkdir(parents=True, exist_ok=True)
    files = _summary_files(cfg, summary)
    _finish(cfg, "summarize", files)
    print(summary.to_table())
    return 0


def cmd_verify(cfg: RunConfig, full=False):
    lines = []

    def emit(line):
        print(line, flush=True)
        lines.append(line)

    results = run_checks(full=full, log=emit)
    passed = all(r.passed for r in results)
    emit(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    if cfg.raw.get("output") is not None:
        cfg.output.mkdir(parents=True, exist_ok=True)
        # timings vary run to run, so the report keeps only name and verdict
        write_json(
            cfg.output / "verify.json",
            {"passed": passed, "checks": [{"name": r.name, "passed": r.passed} for r in results]},
        )
        _finish(cfg, "verify", ["verify.json"])
    return 0 if passed else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "verify":
            return cmd_verify(cfg, full=args.full)
        return globals()[f"cmd_{args.command}"](cfg)
    except ConfigError as exc:
        print(f"fdlm {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except FdlmError as exc:
        print(f"fdlm {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
