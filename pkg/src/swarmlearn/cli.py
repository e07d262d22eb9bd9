"""Command-line entry point for the full experiment workflow.

Subcommands: generate, train, eval, gridsearch, scale, plot. Exit codes are
a stable contract for scripting: 0 success, 2 configuration/validation
failure, 3 numerical failure. Every command honors --seed, which fully
determines its outputs. SWARMLEARN_LOG sets log verbosity (DEBUG/INFO/...).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import io_formats as iof
from .config import ExperimentConfig, parse_config_file
from .errors import (
    ConfigError,
    FormatError,
    IntegrationFailureError,
    SimulationDivergenceError,
    SwarmLearnError,
    TrainingDivergenceError,
)
from .knode_controller import predict_rollout
from .metrics_eval import (
    GridSpec,
    amd,
    avd,
    confidence_interval,
    grid_search,
    pod_energies,
    pod_kld,
    scaled_initial_state,
    scaling_eval,
    tail_mean,
)
from .sim_core import RngSpec, SwarmState, Trajectory
from .sim_groundtruth import BoidsParams, boids_rollout, generate_dataset
from .trainer import TrainConfig, meta_from_config_dict, train

log = logging.getLogger("swarmlearn.cli")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

POD_MODES = 10


def _setup_logging() -> None:
    level = os.environ.get("SWARMLEARN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _config_with_seed(path, seed: Optional[int]) -> ExperimentConfig:
    cfg = parse_config_file(path)
    if seed is not None:
        cfg.seed = seed
    return cfg


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _config_with_seed(args.config, args.seed)
    log.info("generating %d %s trajectories", cfg.traj_count, cfg.space)
    dataset = generate_dataset(cfg)
    written = iof.save_dataset(dataset, args.out)
    print(f"wrote {len(written)} files to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _config_with_seed(args.config, args.seed)
    dataset = iof.load_dataset(args.data)
    data_space = dataset.manifest["config"]["space"]
    if data_space != cfg.space:
        raise ConfigError(f"config space {cfg.space!r} does not match "
                          f"dataset space {data_space!r}")
    meta = meta_from_config_dict({k: getattr(cfg, k) for k in (
        "space", "k", "d_cr", "tau", "hidden", "d0_neighbor", "d0_wall",
        "gain_form", "a")})
    initial = None
    epoch_offset = 0
    history = None
    if args.resume:
        initial, epoch_offset = iof.load_checkpoint(args.resume)
        hist_path = Path(str(args.resume) + ".history.csv")
        if hist_path.exists():
            history = iof.load_history_csv(hist_path)
        log.info("resuming from %s at epoch %d", args.resume, epoch_offset)
    tc = TrainConfig(lr=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch_size,
                     seed=cfg.seed)
    params, hist = train(tc, dataset, meta=meta, initial=initial,
                         epoch_offset=epoch_offset)
    if history is not None:
        history.epochs.extend(hist.epochs)
        history.train_loss.extend(hist.train_loss)
        history.holdout_loss.extend(hist.holdout_loss)
        history.phi_neighbor.extend(hist.phi_neighbor)
        history.phi_wall.extend(hist.phi_wall)
        history.wall_clock.extend(hist.wall_clock)
        hist = history
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    iof.save_checkpoint(params, out, epochs_completed=epoch_offset + cfg.epochs)
    iof.save_history_csv(hist, Path(str(out) + ".history.csv"))
    print(f"wrote {out} (best holdout loss "
          f"{min(hist.holdout_loss):.6g}, {len(hist.epochs)} epochs)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _rollout_like(params, truth: Trajectory) -> Trajectory:
    """Closed-loop rollout from the test trajectory's initial conditions."""
    tau = params.meta.tau
    if truth.m < tau + 2:
        raise ConfigError("test trajectory too short for the controller delay")
    history = [truth.snapshot(j) for j in range(tau)]
    Z0 = truth.snapshot(tau)
    steps = truth.m - 1 - tau
    return predict_rollout(params, Z0, steps=steps, h=truth.dt,
                           delay_history=history or None)


def cmd_eval(args) -> int:
    params, _ = iof.load_checkpoint(args.model)
    dataset = iof.load_dataset(args.data)
    data_space = dataset.manifest["config"]["space"]
    if data_space != params.meta.space:
        raise ConfigError(f"model space {params.meta.space!r} does not match "
                          f"dataset space {data_space!r}")
    tests = dataset.test
    if not tests:
        raise ConfigError("dataset has no test trajectories")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    is_2d = params.meta.space == "2d"
    tail = args.tail

    amd_runs, avd_runs, summary_rows = [], [], []
    for idx, truth in enumerate(tests):
        pred = _rollout_like(params, truth)
        amd_series = amd(pred)
        amd_runs.append(amd_series)
        row = {"traj": idx, "amd_tail": tail_mean(amd_series, tail)}
        if is_2d:
            avd_series = avd(pred)
            avd_runs.append(avd_series)
            row["avd_tail"] = tail_mean(avd_series, tail)
        else:
            offset = truth.m - pred.m
            truth_aligned = Trajectory(truth.states[offset:], dt=truth.dt,
                                       t0=0.0, space_tag=truth.space_tag)
            row["pod_kld"] = pod_kld(pred, truth_aligned, POD_MODES)
        summary_rows.append(row)
        log.info("evaluated test trajectory %d/%d", idx + 1, len(tests))

    shortest = min(len(s) for s in amd_runs)
    amd_mat = np.stack([s[:shortest] for s in amd_runs])
    amd_mean, amd_lo, amd_hi = confidence_interval(amd_mat)
    columns = {"step": np.arange(shortest),
               "amd_mean": amd_mean, "amd_lo": amd_lo, "amd_hi": amd_hi}
    if is_2d:
        avd_mat = np.stack([s[:shortest] for s in avd_runs])
        avd_mean, avd_lo, avd_hi = confidence_interval(avd_mat)
        columns.update({"avd_mean": avd_mean, "avd_lo": avd_lo, "avd_hi": avd_hi})

    names = list(columns)
    lines = [",".join(names)]
    for i in range(shortest):
        lines.append(",".join(
            str(int(columns[c][i])) if c == "step" else repr(float(columns[c][i]))
            for c in names))
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")

    sum_names = list(summary_rows[0])
    sum_lines = [",".join(sum_names)]
    for row in summary_rows:
        sum_lines.append(",".join(
            str(row[c]) if c == "traj" else repr(float(row[c])) for c in sum_names))
    (out / "summary.csv").write_text("\n".join(sum_lines) + "\n")

    if not args.no_plots:
        from . import plots
        x = np.arange(shortest)
        plots.series_plot_svg(out / "amd.svg", x,
                              {"amd": {"mean": amd_mean, "lo": amd_lo, "hi": amd_hi}},
                              "step", "average min distance")
        if is_2d:
            plots.series_plot_svg(out / "avd.svg", x,
                                  {"avd": {"mean": avd_mean, "lo": avd_lo,
                                           "hi": avd_hi}},
                                  "step", "average velocity difference")
        else:
            spectra = np.stack([pod_energies(_rollout_like(params, t), POD_MODES)
                                for t in tests[:1]])
            truth_spec = pod_energies(tests[0], POD_MODES)
            plots.series_plot_svg(out / "pod.svg", np.arange(1, POD_MODES + 1),
                                  {"prediction": {"mean": spectra[0]},
                                   "ground truth": {"mean": truth_spec}},
                                  "mode", "normalized energy")
    print(f"wrote evaluation of {len(tests)} test trajectories to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gridsearch
# ---------------------------------------------------------------------------


def _grid_cell(cfg_dict: dict, data_dir: str, d_cr: float, k: int, runs: int,
               steps: int, tail: int, seed: int) -> dict:
    """Train and evaluate one (d_cr, k) cell; safe to run in a worker process."""
    dataset = iof.load_dataset(data_dir)
    cfg = dict(cfg_dict)
    cfg.update({"d_cr": d_cr, "k": k})
    meta = meta_from_config_dict(cfg)
    tc = TrainConfig(lr=cfg["lr"], epochs=cfg["epochs"],
                     batch_size=cfg["batch_size"], seed=seed)

    def pipeline(d_cr_inner, k_inner):
        params, _ = train(tc, dataset, meta=meta)
        h = cfg["dt"]
        space = cfg["space"]
        values = {"amd": []}
        if space == "2d":
            values["avd"] = []
        else:
            values["pod_kld"] = []
        for run in range(runs):
            rng = RngSpec(seed, 5000 + run)
            Z0 = scaled_initial_state(space, cfg["n"], rng)
            pred = predict_rollout(params, Z0, steps=steps, h=h)
            values["amd"].append(tail_mean(amd(pred), tail))
            if space == "2d":
                values["avd"].append(tail_mean(avd(pred), tail))
            else:
                truth = boids_rollout(Z0, BoidsParams(dt=h), frames=steps + 1)
                values["pod_kld"].append(pod_kld(pred, truth, POD_MODES))
        return values

    rows = grid_search(GridSpec([d_cr], [k], seeds_per_cell=runs, steps=steps,
                                tail_window=tail), pipeline)
    return rows[0]


def cmd_gridsearch(args) -> int:
    cfg = _config_with_seed(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cells_dir = out / "cells"
    cells_dir.mkdir(exist_ok=True)

    if args.data:
        data_dir = args.data
    else:
        data_dir = out / "dataset"
        if not (Path(data_dir) / "manifest.json").exists():
            log.info("generating dataset for the grid into %s", data_dir)
            iof.save_dataset(generate_dataset(cfg), data_dir)
    d_cr_values = [float(v) for v in args.dcr.split(",")] if args.dcr else [cfg.d_cr]
    k_values = [int(v) for v in args.k.split(",")] if args.k else [cfg.k]

    cfg_dict = {key: getattr(cfg, key) for key in (
        "space", "n", "d_cr", "k", "tau", "hidden", "noise_var", "steps",
        "traj_count", "train_count", "dt", "d0_neighbor", "d0_wall",
        "gain_form", "a", "lr", "epochs", "batch_size", "seed")}

    pending = []
    for d_cr in d_cr_values:
        for k in k_values:
            cell_file = cells_dir / f"cell_dcr{d_cr:g}_k{k}.json"
            if cell_file.exists():
                log.info("cell %s already done, skipping", cell_file.name)
                continue
            pending.append((d_cr, k, cell_file))

    def run_cell(job):
        d_cr, k, cell_file = job
        row = _grid_cell(cfg_dict, str(data_dir), d_cr, k, args.runs,
                         args.steps, args.tail, cfg.seed)
        cell_file.write_text(json.dumps(row, indent=2, sort_keys=True) + "\n")
        return cell_file

    if args.jobs > 1 and len(pending) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(_grid_cell_entry,
                          [(cfg_dict, str(data_dir), d, k, args.runs, args.steps,
                            args.tail, cfg.seed, str(f)) for d, k, f in pending]))
    else:
        for job in pending:
            run_cell(job)

    rows = []
    for d_cr in d_cr_values:
        for k in k_values:
            cell_file = cells_dir / f"cell_dcr{d_cr:g}_k{k}.json"
            rows.append(json.loads(cell_file.read_text()))
    all_names = sorted({name for row in rows for name in row})
    front = [n for n in ("d_cr", "k") if n in all_names]
    names = front + [n for n in all_names if n not in front]
    lines = [",".join(names)]
    for row in rows:
        lines.append(",".join(str(row.get(n, "")) for n in names))
    (out / "grid.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {len(rows)} grid cells to {out / 'grid.csv'}")
    return EXIT_OK


def _grid_cell_entry(packed) -> str:
    """Module-level worker so the process pool can pickle it."""
    cfg_dict, data_dir, d_cr, k, runs, steps, tail, seed, cell_file = packed
    row = _grid_cell(cfg_dict, data_dir, d_cr, k, runs, steps, tail, seed)
    Path(cell_file).write_text(json.dumps(row, indent=2, sort_keys=True) + "\n")
    return cell_file


# ---------------------------------------------------------------------------
# scale
# ---------------------------------------------------------------------------


def cmd_scale(args) -> int:
    params, _ = iof.load_checkpoint(args.model)
    sizes = [int(v) for v in args.sizes.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stats = scaling_eval(params, sizes=sizes, runs_per_size=args.runs,
                         steps=args.steps, h=args.dt, seed=args.seed or 0,
                         tail_window=args.tail)
    metrics = sorted(next(iter(stats.values())).keys())
    lines = ["size,metric,min,q1,median,q3,max,values"]
    for size in sizes:
        for metric in metrics:
            box = stats[size][metric]
            vals = ";".join(repr(v) for v in box["values"])
            lines.append(f"{size},{metric},{box['min']!r},{box['q1']!r},"
                         f"{box['median']!r},{box['q3']!r},{box['max']!r},{vals}")
    (out / "scale.csv").write_text("\n".join(lines) + "\n")

    if not args.no_plots:
        from . import plots
        for metric in metrics:
            plots.box_plot_svg(out / f"scale_{metric}.svg", sizes,
                               [stats[s][metric]["values"] for s in sizes],
                               "swarm size", metric)
    if args.snapshot_size:
        from . import plots
        Z0 = scaled_initial_state(params.meta.space, args.snapshot_size,
                                  RngSpec(args.seed or 0, 999))
        traj = predict_rollout(params, Z0, steps=args.steps, h=args.dt)
        marks = [0, args.steps // 4, args.steps // 2, args.steps]
        plots.snapshots_plot_svg(out / "snapshots.svg", traj, marks,
                                 f"{args.snapshot_size} robots")
    print(f"wrote scaling stats for sizes {sizes} to {out / 'scale.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# plot
# ---------------------------------------------------------------------------


def cmd_plot(args) -> int:
    from . import plots
    src = Path(args.input)
    if not src.exists():
        raise ConfigError(f"no such input file: {src}")
    out_dir = Path(args.out) if args.out else src.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = src.read_text().splitlines()
    if not lines:
        raise FormatError(f"{src} is empty")
    header = lines[0].split(",")
    made = []
    if header[0] == "step":
        cols = {name: np.array([float(l.split(",")[i]) for l in lines[1:]])
                for i, name in enumerate(header)}
        x = cols["step"]
        for metric in ("avd", "amd"):
            if f"{metric}_mean" in cols:
                curves = {metric: {"mean": cols[f"{metric}_mean"],
                                   "lo": cols[f"{metric}_lo"],
                                   "hi": cols[f"{metric}_hi"]}}
                made.append(plots.series_plot_svg(
                    out_dir / f"{src.stem}_{metric}.svg", x, curves, "step", metric))
    elif header[0] == "size":
        rows = [l.split(",") for l in lines[1:]]
        metrics = sorted({r[1] for r in rows})
        sizes = sorted({int(r[0]) for r in rows})
        for metric in metrics:
            values = []
            for size in sizes:
                row = next(r for r in rows if int(r[0]) == size and r[1] == metric)
                values.append([float(v) for v in row[7].split(";")])
            made.append(plots.box_plot_svg(out_dir / f"{src.stem}_{metric}.svg",
                                           sizes, values, "swarm size", metric))
    elif "d_cr" in header and "k" in header:
        rows = [dict(zip(header, l.split(","))) for l in lines[1:]]
        d_cr_values = sorted({float(r["d_cr"]) for r in rows})
        k_values = sorted({int(r["k"]) for r in rows})
        for metric in [c for c in header if c.endswith("_mean") or c.endswith("_median")]:
            mat = np.full((len(k_values), len(d_cr_values)), np.nan)
            for r in rows:
                if r.get(metric):
                    mat[k_values.index(int(r["k"])),
                        d_cr_values.index(float(r["d_cr"]))] = float(r[metric])
            flag = 3.0 if metric.startswith("amd") else None
            made.append(plots.grid_plot_svg(out_dir / f"{src.stem}_{metric}.svg",
                                            d_cr_values, k_values, mat, metric,
                                            flag_above=flag))
    else:
        raise FormatError(f"unrecognized CSV layout in {src}")
    print(f"wrote {len(made)} plot(s) to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="swarmlearn",
        description="Learn decentralized swarm controllers from trajectories.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train a controller on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a controller on test trajectories")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--tail", type=int, default=10)
    e.add_argument("--no-plots", action="store_true")
    e.set_defaults(fn=cmd_eval)

    gs = sub.add_parser("gridsearch", help="sweep (d_cr, k) cells")
    gs.add_argument("--config", required=True)
    gs.add_argument("--out", required=True)
    gs.add_argument("--data", help="reuse an existing dataset directory")
    gs.add_argument("--dcr", help="comma-separated communication radii")
    gs.add_argument("--k", help="comma-separated neighbor counts")
    gs.add_argument("--runs", type=int, default=20)
    gs.add_argument("--steps", type=int, default=2000)
    gs.add_argument("--tail", type=int, default=10)
    gs.add_argument("--jobs", type=int, default=1)
    gs.add_argument("--seed", type=int)
    gs.set_defaults(fn=cmd_gridsearch)

    s = sub.add_parser("scale", help="evaluate a controller across swarm sizes")
    s.add_argument("--model", required=True)
    s.add_argument("--sizes", required=True)
    s.add_argument("--runs", type=int, default=15)
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--dt", type=float, default=0.01)
    s.add_argument("--tail", type=int, default=10)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--no-plots", action="store_true")
    s.add_argument("--snapshot-size", type=int,
                   help="also export snapshot figures at this swarm size")
    s.set_defaults(fn=cmd_scale)

    p = sub.add_parser("plot", help="render SVG figures from result CSVs")
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_plot)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FormatError, FileNotFoundError, NotADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingDivergenceError, IntegrationFailureError,
            SimulationDivergenceError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SwarmLearnError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
