"""``circletrack`` command line.

Subcommands::

    simulate     synthetic meetings -> <out>/<name>.segments.jsonl + .truth.json
    fit          EM fit of (kappa_z, kappa_phi) -> params.json, em_trace.tsv
    diarize      AHC clustering -> <out>/<meeting>.rttm (+ dendrogram JSON)
    eval         RTTM vs truth -> report.tsv
    sweep        affinity/weight/threshold grid over meetings -> sweep.tsv
    denominator  SSL denominator profiles -> denominator.tsv, flatness.tsv

Each command also renders a PNG figure next to its table unless
``figures: false`` is set in the config or ``--no-figures`` is given.

Exit codes: 0 success, 1 bad input data, 2 configuration error,
3 no usable sequence for fitting.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ahc import cluster
from .config import AFFINITY_KINDS, AffinitySection, ConfigError, RunConfig, load_config
from .em import fit
from .evaluate import score
from .meeting import (
    format_rttm,
    parse_rttm,
    read_segments,
    read_truth,
    rttm_to_clustering,
    write_segments,
    write_truth,
)
from .sim import simulate_meeting
from .ssl import BinLayout, denominator_profile, flatness, ssl_to_doa
from .tracker import KalmanParams, Measurement

log = logging.getLogger("circletrack")

EXIT_DATA = 1
EXIT_CONFIG = 2
EXIT_NO_SEQUENCE = 3


class CliError(Exception):
    def __init__(self, message, code=EXIT_DATA):
        super().__init__(message)
        self.code = code


def _fmt(x) -> str:
    return f"{x:.6f}" if isinstance(x, float) else str(x)


def _write_tsv(path, header, rows):
    with open(path, "w") as fh:
        fh.write("\t".join(header) + "\n")
        for r in rows:
            fh.write("\t".join(_fmt(v) for v in r) + "\n")


def _meeting_name(path) -> str:
    name = Path(path).name
    for suffix in (".segments.jsonl", ".jsonl", ".rttm", ".truth.json", ".json"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return Path(path).stem


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _figures(args, cfg: RunConfig) -> bool:
    return cfg.figures and not args.no_figures


def _load_segments(path):
    try:
        return read_segments(path)
    except OSError as exc:
        raise CliError(f"cannot read segments {path}: {exc.strerror}") from exc
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _load_truth(path):
    try:
        return read_truth(path)
    except OSError as exc:
        raise CliError(f"cannot read truth {path}: {exc.strerror}") from exc
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _kalman(args, cfg: RunConfig) -> KalmanParams:
    """Filter parameters: a ``fit`` output file if given, else the config."""
    if getattr(args, "params", None) is None:
        return cfg.kalman
    try:
        doc = json.loads(Path(args.params).read_text())
        return KalmanParams(float(doc["kappa_z"]), float(doc["kappa_phi"]))
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise CliError(f"cannot read params {args.params}: {exc}", EXIT_CONFIG) from exc


def _affinity_section(args, cfg: RunConfig) -> AffinitySection:
    sec = cfg.affinity
    changes = {}
    if args.affinity is not None:
        changes["kind"] = args.affinity
    if args.weights is not None:
        try:
            ws = tuple(float(w) for w in args.weights.split(","))
        except ValueError as exc:
            raise CliError(f"--weights: {exc}", EXIT_CONFIG) from exc
        changes["weights"] = ws
    if args.threshold is not None:
        changes["threshold"] = args.threshold
    try:
        return dataclasses.replace(sec, **changes)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc


# --- commands ---------------------------------------------------------------


def cmd_simulate(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    root = np.random.SeedSequence(cfg.seed)
    seeds = root.spawn(cfg.meetings)
    for k in range(cfg.meetings):
        name = f"m{k:03d}" if cfg.meetings > 1 else "meeting"
        # one named sub-stream per meeting
        sim_seed = int(seeds[k].generate_state(1)[0]) if cfg.meetings > 1 else cfg.sim.seed
        try:
            segments, truth = simulate_meeting(dataclasses.replace(cfg.sim, seed=sim_seed), name)
        except RuntimeError as exc:
            raise CliError(str(exc), EXIT_CONFIG) from exc
        write_segments(out / f"{name}.segments.jsonl", segments)
        write_truth(out / f"{name}.truth.json", truth)
        log.info("%s: %d segments", name, len(segments))
    return 0


def _sequences(segments, feature: str):
    """One frame-indexed observation list per segment."""
    seqs = []
    layout = None
    for seg in segments:
        frames = []
        for f in seg.frames:
            if f.ssl is not None:
                layout = layout if layout is not None and layout.n_bins == len(f.ssl) else BinLayout(len(f.ssl))
                if feature == "doa":
                    frames.append([Measurement.doa(float(ssl_to_doa(f.ssl, layout)))])
                else:
                    frames.append([Measurement.from_ssl(f.ssl, layout)])
            elif f.doa is not None:
                frames.append([Measurement.doa(f.doa)])
            else:
                frames.append([])
        seqs.append(frames)
    return seqs


def cmd_fit(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    segments = []
    for p in args.segments:
        segments.extend(_load_segments(p))
    seqs = _sequences(segments, cfg.em.feature)
    init = KalmanParams(*(float(v) for v in cfg.em.init))
    try:
        params, trace = fit(seqs, init, cfg.em.to_em())
    except ValueError as exc:
        raise CliError(str(exc), EXIT_NO_SEQUENCE) from exc
    doc = {"kappa_z": params.kappa_z, "kappa_phi": params.kappa_phi, "iterations": len(trace)}
    (out / "params.json").write_text(json.dumps(doc, indent=1) + "\n")
    _write_tsv(out / "em_trace.tsv", ["iteration", "kappa_z", "kappa_phi", "log_likelihood"], trace.rows())
    if _figures(args, cfg):
        from .plotting import plot_em_trace

        plot_em_trace(trace, out / "em_trace.png")
    print(f"kappa_z\t{params.kappa_z:.6f}\nkappa_phi\t{params.kappa_phi:.6f}")
    return 0


def cmd_diarize(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    segments = _load_segments(args.segments)
    if not segments:
        raise CliError(f"{args.segments}: no segments")
    sec = _affinity_section(args, cfg)
    try:
        aff = sec.to_affinity(_kalman(args, cfg))
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    result = cluster(segments, aff)
    meeting = _meeting_name(args.segments)
    (out / f"{meeting}.rttm").write_text(format_rttm(meeting, segments, result.labels))
    if args.dendrogram:
        merges = [[s, a, b, round(v, 10)] for s, a, b, v in result.merges]
        (out / f"{meeting}.dendrogram.json").write_text(json.dumps(merges) + "\n")
    if _figures(args, cfg):
        from .plotting import plot_diarization

        plot_diarization(segments, result.labels, out / f"{meeting}.png")
    log.info("%s: %d segments -> %d clusters", meeting, len(segments), result.n_clusters)
    return 0


def _report_text(report) -> str:
    lines = ["category\terror_rate\tframes"]
    lines += [f"{name}\t{err:.6f}\t{n}" for name, err, n in report.as_rows()]
    lines.append(f"# cluster_count_delta\t{report.cluster_count_delta}")
    return "\n".join(lines) + "\n"


def cmd_eval(args, cfg: RunConfig) -> int:
    truth = _load_truth(args.truth)
    try:
        rows = parse_rttm(Path(args.rttm).read_text())
        report = score(rttm_to_clustering(rows, truth), truth)
    except OSError as exc:
        raise CliError(f"cannot read {args.rttm}: {exc.strerror}") from exc
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    text = _report_text(report)
    sys.stdout.write(text)
    if args.out is not None:
        out = _out_dir(args)
        (out / "report.tsv").write_text(text)
        if _figures(args, cfg):
            from .plotting import plot_report

            plot_report(report, out / "report.png", truth.meeting)
    return 0


def _meeting_pairs(paths):
    pairs = []
    for p in paths:
        p = Path(p)
        files = sorted(p.glob("*.segments.jsonl")) if p.is_dir() else [p]
        for seg_path in files:
            truth_path = seg_path.with_name(_meeting_name(seg_path) + ".truth.json")
            if not truth_path.exists():
                raise CliError(f"no truth file next to {seg_path}")
            pairs.append((seg_path, truth_path))
    if not pairs:
        raise CliError("no meetings found")
    return pairs


def sweep_rows(meetings, grid, thresholds, params, feature="ssl"):
    """Average error of every (affinity, weights, threshold) point.

    Each weight setting is clustered once to the end; thresholds are cuts
    of that merge sequence, identical to running with the threshold set.
    """
    rows = []
    for kind, ws, wl in grid:
        sec = AffinitySection(kind, (ws, wl), -np.inf, feature)
        errs = np.zeros((len(meetings), len(thresholds)))
        cats = {"stationary": np.full_like(errs, np.nan), "moving": np.full_like(errs, np.nan)}
        for mi, (segments, truth) in enumerate(meetings):
            result = cluster(segments, sec.to_affinity(params, -np.inf))
            for ti, th in enumerate(thresholds):
                rep = score(result.labels_at(th), truth)
                errs[mi, ti] = rep.frame_error_rate
                for c in cats:
                    if c in rep.category_error:
                        cats[c][mi, ti] = rep.category_error[c]
        for ti, th in enumerate(thresholds):
            row = {"affinity": kind, "w_speaker": ws, "w_location": wl, "threshold": float(th), "error": float(errs[:, ti].mean())}
            for c, m in cats.items():
                col = m[:, ti][~np.isnan(m[:, ti])]
                row[f"{c}_error"] = float(col.mean()) if len(col) else float("nan")
            rows.append(row)
    return rows


def cmd_sweep(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    pairs = _meeting_pairs(args.data)
    meetings = [(_load_segments(s), _load_truth(t)) for s, t in pairs]
    try:
        thresholds = cfg.sweep.threshold_grid()
    except (ConfigError, ValueError) as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    rows = sweep_rows(meetings, cfg.sweep.grid(), thresholds, _kalman(args, cfg), cfg.affinity.feature)
    header = ["affinity", "w_speaker", "w_location", "threshold", "error", "stationary_error", "moving_error"]
    _write_tsv(out / "sweep.tsv", header, [[r[h] for h in header] for r in rows])
    best = min(rows, key=lambda r: (r["error"], rows.index(r)))
    print("best\t" + "\t".join(_fmt(best[h]) for h in header))
    if _figures(args, cfg):
        from .plotting import plot_sweep

        plot_sweep(rows, out / "sweep.png")
    return 0


def cmd_denominator(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    curves = {}
    rows, flat = [], []
    for kappa in args.kappas:
        for n_bins in args.bins:
            if kappa < 0 or n_bins < 1 or args.n_eval < 2:
                raise CliError("kappas must be >= 0, bins >= 1 and n-eval >= 2", EXIT_CONFIG)
            z, prof = denominator_profile(kappa, BinLayout(n_bins), args.n_eval)
            curves[(kappa, n_bins)] = (z, prof)
            rows.extend((kappa, n_bins, float(zi), float(pi)) for zi, pi in zip(z, prof))
            flat.append((kappa, n_bins, flatness(prof)))
    _write_tsv(out / "denominator.tsv", ["kappa", "n_bins", "z", "denominator"], rows)
    with open(out / "flatness.tsv", "w") as fh:
        fh.write("kappa\tn_bins\tflatness\n")
        for kappa, n_bins, f in flat:
            fh.write(f"{kappa:g}\t{n_bins}\t{f:.6e}\n")
    if _figures(args, cfg):
        from .plotting import plot_denominator

        plot_denominator(curves, out / "denominator.png")
    return 0


# --- argument parsing -------------------------------------------------------


def _common(p, out_required=True):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="circletrack", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic meetings")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="EM fit of the filter concentrations")
    p.add_argument("segments", nargs="+", help="segments JSON-lines file(s)")
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("diarize", help="cluster the segments of one meeting")
    p.add_argument("segments", help="segments JSON-lines file")
    _common(p)
    p.add_argument("--affinity", choices=sorted(AFFINITY_KINDS))
    p.add_argument("--weights", help="w_speaker,w_location")
    p.add_argument("--threshold", type=float, help="stopping threshold")
    p.add_argument("--params", help="params.json written by 'fit'")
    p.add_argument("--dendrogram", action="store_true", help="also write the merge list as JSON")
    p.set_defaults(func=cmd_diarize)

    p = sub.add_parser("eval", help="score an RTTM file against ground truth")
    p.add_argument("rttm")
    p.add_argument("truth")
    _common(p, out_required=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="error over an affinity/threshold grid")
    p.add_argument("data", nargs="+", help="directories or segments files with .truth.json siblings")
    _common(p)
    p.add_argument("--params", help="params.json written by 'fit'")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("denominator", help="SSL denominator flatness profiles")
    _common(p)
    p.add_argument("--kappas", type=float, nargs="+", default=[0.0, 1.0, 10.0, 100.0])
    p.add_argument("--bins", type=int, nargs="+", default=[8, 360])
    p.add_argument("--n-eval", type=int, default=360)
    p.set_defaults(func=cmd_denominator)
    return parser


def _setup_logging():
    level = os.environ.get("CIRCLETRACK_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_seed(args.seed)
    except ConfigError as exc:
        print(f"circletrack: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args, cfg)
    except CliError as exc:
        print(f"circletrack {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
