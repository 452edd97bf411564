"""Command-line entry point.

Subcommands::

    ratio-forge filter   --input traces.jsonl --output filtered.jsonl
    ratio-forge analyze  --input filtered.jsonl --output dynamics.csv [--plot DIR]
    ratio-forge loss     --input traces.jsonl --output loss.csv [--method grpo]
    ratio-forge simulate --method kpo_clipped --steps 300 --seed 42 --output metrics.csv [--plot DIR]
    ratio-forge report   a.csv b.csv --output combined.csv

Settings resolve as: command-line flag > ``--config`` file (or the file named
by ``RATIO_FORGE_CONFIG``) > built-in defaults.

Exit codes: 0 success, 1 usage error, 2 input validation error,
3 numeric error (saturation or divergence).
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import (
    classify_token_states,
    dynamics_report,
    sample_dynamics,
    summarize_dynamics,
    window_offpolicy_frequency,
)
from .errors import DivergenceError, InputError, NumericError
from .objectives import (
    KPO_CLIP,
    group_relative_advantage,
    grpo_objective,
    kpo_objective,
    sequence_level_objective,
)
from .ratio_filter import compute_log_ratios, kalman_filter_sequence, to_ratio_space
from .svg import write_line_chart
from .toy_sim import METHODS, default_clip, run_training
from .trace_io import (
    env_config_path,
    load_config,
    read_filtered,
    read_rows_csv,
    read_traces,
    write_filtered,
    write_report_csv,
    write_rows_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3

LOSS_COLUMNS = ("method", "group_id", "responses", "tokens", "degenerate", "advantages", "loss", "clip_fraction")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _add_common(p, *, kalman=False, clip=False, analysis=False, train=False):
    p.add_argument("--config", help="TOML config file (default: $RATIO_FORGE_CONFIG)")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: available CPUs); never changes output bytes")
    if kalman:
        p.add_argument("--q", type=float, help="process-noise variance (default 1e-6)")
        p.add_argument("--v", type=float, help="observation-noise variance (default 1)")
        p.add_argument("--p0", type=float, help="prior variance (default 1)")
        p.add_argument("--rho0", type=float, help="prior mean of the log-ratio (default 0)")
    if clip:
        p.add_argument("--eps-lo", type=float, dest="eps_lo", help="lower clip offset")
        p.add_argument("--eps-hi", type=float, dest="eps_hi", help="upper clip offset")
    if analysis:
        p.add_argument("--window", type=int, help="window length in tokens (default 50)")
        p.add_argument("--kc", type=int, help="low-frequency cutoff bin (default T // 20 per sample)")
        p.add_argument("--representation", choices=("ratio", "log_ratio"),
                       help="series analysed for LFR and variances (default ratio)")
        p.add_argument("--raw-exact", action="store_true", default=None,
                       help="label raw tokens On only when log-ratio == 0 (within 1e-12)")
    if train:
        p.add_argument("--steps", type=int, help="training steps")


def build_parser():
    parser = _Parser(prog="ratio-forge", description="Kalman-filtered importance ratios for policy optimization")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("filter", help="filter trace log-ratios with the causal Kalman filter")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    _add_common(p, kalman=True)

    p = sub.add_parser("analyze", help="token-state dynamics report (raw vs filtered)")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--plot", metavar="DIR", help="also write SVG line charts into DIR")
    _add_common(p, clip=True, analysis=True)

    p = sub.add_parser("loss", help="evaluate surrogate objectives per group")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--method", choices=METHODS + ("all",), default="all")
    _add_common(p, kalman=True, clip=True)

    p = sub.add_parser("simulate", help="run the toy policy-optimization simulator")
    p.add_argument("--output", required=True)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--plot", metavar="DIR", help="also write the four training-dynamics SVG panels into DIR")
    _add_common(p, kalman=True, clip=True, train=True)

    p = sub.add_parser("report", help="merge CSV reports into one labelled table")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--output", required=True)
    p.add_argument("--labels", help="comma-separated run labels (default: file stems)")
    return parser


def _resolve_config(args):
    overrides = {}
    for key in ("q", "v", "p0", "rho0"):
        if hasattr(args, key):
            overrides[f"kalman.{key}"] = getattr(args, key)
    eps = (getattr(args, "eps_lo", None), getattr(args, "eps_hi", None))
    if any(e is not None for e in eps):
        overrides["clip.eps_lo"], overrides["clip.eps_hi"] = eps
    for flag, key in (("window", "analysis.window"), ("kc", "analysis.kc"),
                      ("representation", "analysis.representation"), ("raw_exact", "analysis.raw_exact"),
                      ("steps", "train.steps"), ("seed", "train.seed")):
        if getattr(args, flag, None) is not None:
            overrides[key] = getattr(args, flag)
    if getattr(args, "command", None) == "simulate" and args.method is not None:
        overrides["train.method"] = args.method
    path = args.config if args.config is not None else env_config_path()
    return load_config(path, overrides)


@contextmanager
def _mapper(threads):
    n = threads if threads is not None else (os.cpu_count() or 1)
    if n < 1:
        raise UsageError("--threads must be >= 1")
    if n == 1:
        yield map
        return
    with ThreadPoolExecutor(max_workers=n) as pool:
        yield pool.map


def cmd_filter(args, out):
    cfg = _resolve_config(args)
    traces = read_traces(args.input)
    with _mapper(args.threads) as pmap:
        filtered = list(pmap(lambda tr: kalman_filter_sequence(compute_log_ratios(tr), cfg.kalman), traces))
    ratios = [to_ratio_space(f) for f in filtered]
    write_filtered(args.output, traces, filtered, ratios)
    n_tokens = sum(t.num_valid for t in traces)
    gains = np.concatenate([f.gain[f.mask] for f in filtered]) if filtered else np.zeros(0)
    mean_gain = float(gains.mean()) if gains.size else 0.0
    print(f"sequences={len(traces)} tokens={n_tokens} mean_gain={mean_gain:.6g}", file=out)


def _plot_analysis(plot_dir, raw, filt, band, raw_band, window):
    plot_dir = Path(plot_dir)
    plot_dir.mkdir(parents=True, exist_ok=True)
    series = {}
    for label, items, b in (("before", raw, raw_band), ("after", filt, band)):
        if items is None:
            continue
        states = [classify_token_states(r, b, mask=m) for r, m in items]
        wf = window_offpolicy_frequency(states, window)
        series[label] = (np.arange(len(wf.mean)), wf.mean)
    write_line_chart(plot_dir / "window_frequency.svg", series, "Window-wise off-policy frequency",
                     f"window index ({window} tokens)", "mean (up+down)/window")
    traj = {}
    r, m = raw[0] if raw else (np.zeros(0), np.zeros(0, dtype=bool))
    idx = np.flatnonzero(m)
    traj["raw ratio"] = (np.arange(idx.size), r[idx])
    if filt is not None:
        traj["filtered ratio"] = (np.arange(idx.size), filt[0][0][idx])
    write_line_chart(plot_dir / "ratio_trajectory.svg", traj, "Ratio trajectory (first sample)",
                     "token position", "importance ratio")


def cmd_analyze(args, out):
    cfg = _resolve_config(args)
    records = read_filtered(args.input)
    if not records:
        raise InputError(f"{args.input}: no records to analyze")
    has_filtered = [f is not None for _, f in records]
    if any(has_filtered) and not all(has_filtered):
        raise InputError(f"{args.input}: mix of raw and filtered records")
    band = cfg.clip or KPO_CLIP
    raw_band = None if cfg.analysis.raw_exact else band
    a = cfg.analysis
    raw = []
    for trace, _ in records:
        z = compute_log_ratios(trace)
        raw.append((np.exp(z.values), trace.mask))
    filt = [(f["filtered_ratio"], t.mask) for t, f in records] if all(has_filtered) else None
    with _mapper(args.threads) as pmap:
        if filt is not None:
            paired = dynamics_report(raw, filt, band, a.window, a.kc, a.representation, raw_band=raw_band, map_fn=pmap)
            write_report_csv(args.output, paired)
        else:
            reps = list(pmap(lambda item: sample_dynamics(item[0], raw_band, a.window, a.kc, item[1], a.representation),
                             raw))
            write_report_csv(args.output, [("raw", summarize_dynamics(reps))])
    if args.plot:
        _plot_analysis(args.plot, raw, filt, band, raw_band, a.window)
    print(f"samples={len(records)} rows={2 if filt is not None else 1}", file=out)


def _group_traces(traces):
    groups = {}
    for t in traces:
        groups.setdefault(t.group_id, []).append(t)
    return groups


def cmd_loss(args, out):
    cfg = _resolve_config(args)
    traces = read_traces(args.input)
    if not traces:
        raise InputError(f"{args.input}: no traces")
    groups = _group_traces(traces)
    advs = {}
    for gid, members in groups.items():
        if len(members) < 2:
            raise InputError(f"group {gid!r} has {len(members)} response(s); at least 2 are required")
        advs[gid] = group_relative_advantage([t.score for t in members])
    methods = METHODS if args.method == "all" else (args.method,)
    log_ratios = {gid: [compute_log_ratios(t) for t in members] for gid, members in groups.items()}
    with _mapper(args.threads) as pmap:
        filtered = {
            gid: list(pmap(lambda z: kalman_filter_sequence(z, cfg.kalman), zs)) for gid, zs in log_ratios.items()
        }
    rows = []
    for method in methods:
        clip = cfg.clip or default_clip(method)

        def evaluate(gids):
            if method == "grpo":
                return grpo_objective([(log_ratios[g], advs[g]) for g in gids], clip)
            if method == "seq_level":
                return sequence_level_objective([(log_ratios[g], advs[g]) for g in gids], clip)
            mode = "clipped" if method == "kpo_clipped" else "unclipped"
            items = [([(to_ratio_space(f), f.mask) for f in filtered[g]], advs[g]) for g in gids]
            return kpo_objective(items, mode, clip)

        for gid in groups:
            rep = evaluate([gid])
            rows.append(_loss_row(method, gid, groups[gid], advs[gid], rep))
        rep = evaluate(list(groups))
        rows.append({
            "method": method, "group_id": "*", "responses": len(traces), "tokens": rep.token_count,
            "degenerate": all(a.degenerate for a in advs.values()), "advantages": "",
            "loss": rep.loss, "clip_fraction": rep.clip_fraction,
        })
    write_rows_csv(args.output, LOSS_COLUMNS, rows)
    print(f"groups={len(groups)} methods={','.join(methods)}", file=out)


def _loss_row(method, gid, members, adv, rep):
    return {
        "method": method, "group_id": gid, "responses": len(members), "tokens": rep.token_count,
        "degenerate": adv.degenerate, "advantages": " ".join(repr(float(a)) for a in adv.per_response),
        "loss": rep.loss, "clip_fraction": rep.clip_fraction,
    }


def _plot_metrics(plot_dir, metrics):
    plot_dir = Path(plot_dir)
    plot_dir.mkdir(parents=True, exist_ok=True)
    steps = metrics.column("step")
    label = metrics.config.method if metrics.config else "run"
    for name, title in (("reward_mean", "Mean reward"), ("entropy", "Entropy"),
                        ("clip_fraction", "Clip fraction"), ("pg_loss", "Policy gradient loss")):
        write_line_chart(plot_dir / f"{name}.svg", {label: (steps, metrics.column(name))}, title, "step", name)


def cmd_simulate(args, out):
    cfg = _resolve_config(args)
    config = cfg.train
    with _mapper(args.threads) as pmap:
        try:
            metrics = run_training(config, map_fn=pmap)
        except DivergenceError as exc:
            if exc.metrics is not None:
                write_report_csv(args.output, exc.metrics)
            raise
    write_report_csv(args.output, metrics)
    if args.plot:
        _plot_metrics(args.plot, metrics)
    final = metrics.records[-1].reward_mean if metrics.records else float("nan")
    print(f"method={config.method} steps={len(metrics)} final_reward_mean={final:.6g}", file=out)


def cmd_report(args, out):
    labels = args.labels.split(",") if args.labels else [Path(p).stem for p in args.inputs]
    if len(labels) != len(args.inputs):
        raise UsageError(f"{len(labels)} labels for {len(args.inputs)} inputs")
    header = None
    rows = []
    for label, path in zip(labels, args.inputs):
        cols, body = read_rows_csv(path)
        if header is None:
            header = cols
        elif cols != header:
            first = next((i for i in range(max(len(cols), len(header)))
                          if i >= len(cols) or i >= len(header) or cols[i] != header[i]))
            got = cols[first] if first < len(cols) else "<missing>"
            want = header[first] if first < len(header) else "<missing>"
            raise InputError(f"{path}: column {first + 1} is {got!r}, expected {want!r}")
        for row in body:
            if len(row) != len(cols):
                raise InputError(f"{path}: row has {len(row)} cells, expected {len(cols)}")
            rows.append([label] + row)
    write_rows_csv(args.output, ["run"] + header, rows)
    print(f"inputs={len(args.inputs)} rows={len(rows)}", file=out)


COMMANDS = {
    "filter": cmd_filter,
    "analyze": cmd_analyze,
    "loss": cmd_loss,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def main(argv=None, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(str(exc), file=err)
        return EXIT_USAGE
    except NumericError as exc:
        step = getattr(exc, "step", None)
        suffix = f" (halted at step {step})" if step is not None else ""
        print(f"numeric error: {exc}{suffix}", file=err)
        return EXIT_NUMERIC
    except InputError as exc:
        print(f"input error: {exc}", file=err)
        return EXIT_INPUT
    except OSError as exc:
        print(f"I/O error: {exc}", file=err)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
