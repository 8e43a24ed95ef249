"""Command-line entry point: ``sscpic {synth,cluster,ssc,score,compare}``.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
Every subcommand accepts ``--config FILE``, a flat ``key = value`` file whose
keys are long flag names; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .data import (
    FormatError,
    Recording,
    SynthConfig,
    load_embeddings,
    load_rttm,
    load_segments,
    save_embeddings,
    save_segments,
    synth_recording,
    write_rttm,
)
from .engine import SYSTEMS, SscConfig, SscTrace, run_system
from .scoring import der, partition_to_annotation

log = logging.getLogger("sscpic")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flags, config values or missing inputs (exit code 2)."""


# --------------------------------------------------------------------------
# config files
# --------------------------------------------------------------------------

def read_config(path: str | Path) -> list[tuple[str, str]]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    items = []
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            key, _, value = line.partition(" ")
        key = key.strip().replace("_", "-")
        if not key:
            raise UsageError(f"{path}: line {lineno}: missing key")
        items.append((key, value.strip()))
    return items


def _config_argv(parser: argparse.ArgumentParser, items) -> list[str]:
    """Turn config entries into flag tokens that precede the real argv."""
    known = {}
    for action in parser._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                known[opt[2:]] = action
    argv = []
    for key, value in items:
        action = known.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(action, argparse.BooleanOptionalAction):
            flag = value.lower()
            if flag in ("1", "true", "yes", "on"):
                argv.append(f"--{key}")
            elif flag in ("0", "false", "no", "off"):
                argv.append(f"--no-{key}")
            else:
                raise UsageError(f"config key {key!r}: expected a boolean, got {value!r}")
        elif action.nargs in ("+", "*"):
            argv += [f"--{key}", *value.replace(",", " ").split()]
        else:
            argv += [f"--{key}", value]
    return argv


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _ssc_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("clustering")
    g.add_argument("--linkage", choices=("single", "complete", "average"), default="average")
    g.add_argument("--knn", type=int, default=30, metavar="K")
    g.add_argument("--sigma", type=float, default=0.1)
    g.add_argument("--threshold", type=float, default=0.0,
                   help="AHC stopping threshold (unknown speaker count)")
    g.add_argument("--temporal", action=argparse.BooleanOptionalAction, default=False)
    g.add_argument("--beta", type=float, default=0.95)
    g.add_argument("--nb", type=int, default=2)
    n = g.add_mutually_exclusive_group()
    n.add_argument("--num-speakers", type=int, default=None)
    n.add_argument("--estimate-speakers", action="store_true",
                   help="estimate the speaker count (default when --num-speakers is absent)")
    g.add_argument("--phi", type=float, default=0.7)
    t = p.add_argument_group("training")
    t.add_argument("--alpha", type=float, default=0.6)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--eta", type=float, default=0.5)
    t.add_argument("--max-epochs", type=int, default=15)
    t.add_argument("--q-max", type=int, default=10)
    t.add_argument("--sampling", choices=("random", "hard", "easy"), default="random")
    t.add_argument("--whitening", choices=("center", "recording", "none"), default="center")
    t.add_argument("--pca-energy", type=float, default=None)
    t.add_argument("--pca-dim", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)


def _synth_flags(p: argparse.ArgumentParser, seed: bool = True) -> None:
    g = p.add_argument_group("synthetic data")
    g.add_argument("--speakers", type=int, default=3)
    g.add_argument("--dim", type=int, default=16)
    g.add_argument("--separation", type=float, default=10.0,
                   help="minimum distance between speaker means")
    g.add_argument("--within-std", type=float, default=1.0)
    g.add_argument("--turn", type=float, default=8.0, help="expected turn length in windows")
    g.add_argument("--windows", type=int, default=300)
    if seed:
        p.add_argument("--seed", type=int, default=0)


def _input_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("inputs")
    g.add_argument("--embeddings", required=True)
    g.add_argument("--format", choices=("csv", "raw"), default=None,
                   help="embedding file format (default: from the file suffix)")
    g.add_argument("--segments", required=True)
    g.add_argument("--reference", default=None, help="reference RTTM, to report DER")
    g.add_argument("--recording-id", default=None)
    g.add_argument("--out", required=True, help="hypothesis RTTM path")
    g.add_argument("--collar", type=float, default=0.25)
    g.add_argument("--ignore-overlap", action=argparse.BooleanOptionalAction, default=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sscpic", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic recording")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", choices=("csv", "raw"), default="csv")
    _synth_flags(p)

    p = sub.add_parser("cluster", help="cluster a recording with one system")
    p.add_argument("--config")
    p.add_argument("--system", choices=SYSTEMS, default="pic")
    _input_flags(p)
    _ssc_flags(p)

    p = sub.add_parser("ssc", help="self-supervised clustering with an iteration trace")
    p.add_argument("--config")
    p.add_argument("--system", choices=("ssc-pic", "ssc-ahc"), default="ssc-pic")
    p.add_argument("--trace", default=None, help="trace path (default: <out>.trace.jsonl)")
    _input_flags(p)
    _ssc_flags(p)

    p = sub.add_parser("score", help="diarization error rate of a hypothesis RTTM")
    p.add_argument("--config")
    p.add_argument("--reference", required=True)
    p.add_argument("--hypothesis", required=True)
    p.add_argument("--recording-id", default=None)
    p.add_argument("--collar", type=float, default=0.25)
    p.add_argument("--ignore-overlap", action=argparse.BooleanOptionalAction, default=True)

    p = sub.add_parser("compare", help="mean DER of several systems over synthetic seeds")
    p.add_argument("--config")
    p.add_argument("--systems", nargs="+", choices=SYSTEMS, default=["pic", "ssc-pic"])
    p.add_argument("--seeds", nargs="+", type=int, default=[0])
    p.add_argument("--out", default=None, help="CSV output path")
    p.add_argument("--jobs", type=int, default=None, help="worker threads")
    p.add_argument("--collar", type=float, default=0.25)
    p.add_argument("--ignore-overlap", action=argparse.BooleanOptionalAction, default=True)
    _synth_flags(p, seed=False)
    _ssc_flags(p)
    return parser


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        extra = _config_argv(sub, read_config(args.config))
        i = argv.index(args.command)
        args = parser.parse_args(argv[:i + 1] + extra + argv[i + 1:])
    return args


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def ssc_config(args: argparse.Namespace, seed: int | None = None) -> SscConfig:
    energy = args.pca_energy
    if energy is None and args.pca_dim is None:
        energy = 0.5
    try:
        return SscConfig(
            K=args.knn, sigma=args.sigma, alpha=args.alpha, learning_rate=args.lr,
            eta=args.eta, max_epochs=args.max_epochs, sampling=args.sampling,
            temporal=args.temporal, beta=args.beta, n_b=args.nb, phi=args.phi,
            n_speakers=args.num_speakers, q_max=args.q_max, ahc_threshold=args.threshold,
            linkage=args.linkage, whitening=args.whitening, pca_energy=energy,
            pca_dim=args.pca_dim, seed=args.seed if seed is None else seed)
    except ValueError as e:
        raise UsageError(str(e)) from None


def synth_config(args: argparse.Namespace, seed: int) -> SynthConfig:
    try:
        return SynthConfig(num_speakers=args.speakers, dim=args.dim,
                           mean_separation=args.separation, within_std=args.within_std,
                           expected_turn_windows=args.turn, total_windows=args.windows,
                           seed=seed)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _require(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise UsageError(f"no such file: {p}")


def load_recording(args: argparse.Namespace) -> Recording:
    _require(args.embeddings, args.segments, args.reference)
    fmt = args.format
    if fmt is None:
        fmt = "raw" if Path(args.embeddings).suffix in (".bin", ".raw") else "csv"
    X = load_embeddings(args.embeddings, fmt)
    windows = load_segments(args.segments)
    rid = args.recording_id or Path(args.embeddings).stem
    return Recording(rid, windows, X)


def _run_and_write(args, system: str) -> tuple[Recording, SscTrace | None, list[str]]:
    config = ssc_config(args)
    rec = load_recording(args)
    t0 = time.perf_counter()
    partition, trace = run_system(rec, system, config)
    elapsed = time.perf_counter() - t0
    hyp = partition_to_annotation(rec, partition)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_rttm(hyp, rec.id, out)

    mode = "known" if config.n_speakers is not None else "estimated"
    lines = [f"recording={rec.id} windows={rec.num_windows} system={system}",
             f"speakers={partition.num_clusters} ({mode})"]
    if trace is not None:
        lines.append("counts=" + ",".join(map(str, trace.counts)))
    if args.reference:
        ref = load_rttm(args.reference, rec.id if args.recording_id else None)
        lines.append(der(ref, hyp, args.collar, args.ignore_overlap).format())
    # wall-clock time goes to stderr so stdout stays reproducible
    print(f"time={elapsed:.2f}s", file=sys.stderr)
    return rec, trace, lines


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    rec, ref = synth_recording(synth_config(args, args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = "embeddings.bin" if args.format == "raw" else "embeddings.csv"
    save_embeddings(out / name, rec.embeddings, args.format)
    save_segments(out / "segments.txt", rec.windows)
    write_rttm(ref, rec.id, out / "reference.rttm")
    print(f"wrote {rec.num_windows} windows, {len(ref.speakers)} speakers to {out}")
    return EXIT_OK


def cmd_cluster(args: argparse.Namespace) -> int:
    _, _, lines = _run_and_write(args, args.system)
    print("\n".join(lines))
    return EXIT_OK


def cmd_ssc(args: argparse.Namespace) -> int:
    _, trace, lines = _run_and_write(args, args.system)
    trace_path = Path(args.trace) if args.trace else Path(args.out).with_suffix(".trace.jsonl")
    trace_path.write_text(trace.to_jsonl())
    print("\n".join(lines))
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    _require(args.reference, args.hypothesis)
    ref = load_rttm(args.reference, args.recording_id)
    hyp = load_rttm(args.hypothesis, args.recording_id)
    print(der(ref, hyp, args.collar, args.ignore_overlap).format())
    return EXIT_OK


def _compare_cell(args, system: str, seed: int) -> float:
    rec, ref = synth_recording(synth_config(args, seed))
    partition, _ = run_system(rec, system, ssc_config(args, seed))
    hyp = partition_to_annotation(rec, partition)
    return der(ref, hyp, args.collar, args.ignore_overlap).der


def compare_table(systems, seeds, cells: dict) -> list[list[str]]:
    """Rows ``system, der@seed..., mean, std``; failed cells read ``ERR``."""
    rows = [["system", *[f"seed{s}" for s in seeds], "mean", "std"]]
    for system in systems:
        vals = [cells[system, s] for s in seeds]
        row = [system] + ["ERR" if v is None else f"{v:.6f}" for v in vals]
        if any(v is None for v in vals):
            row += ["ERR", "ERR"]
        else:
            row += [f"{np.mean(vals):.6f}", f"{np.std(vals):.6f}"]
        rows.append(row)
    return rows


def cmd_compare(args: argparse.Namespace) -> int:
    ssc_config(args)
    synth_config(args, 0)
    jobs = args.jobs or min(4, os.cpu_count() or 1)
    keys = [(system, seed) for system in args.systems for seed in args.seeds]
    cells: dict = {}
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = {k: pool.submit(_compare_cell, args, *k) for k in keys}
        for k in keys:
            try:
                cells[k] = futures[k].result()
            except Exception as e:  # a failed cell must not sink the table
                log.error("%s seed %d failed: %s", k[0], k[1], e)
                cells[k] = None
    rows = compare_table(args.systems, args.seeds, cells)

    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(buf.getvalue())
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    for r in rows:
        print("  ".join(v.ljust(w) if c == 0 else v.rjust(w)
                        for c, (v, w) in enumerate(zip(r, widths))).rstrip())
    return EXIT_RUNTIME if any(v is None for v in cells.values()) else EXIT_OK


COMMANDS = {"synth": cmd_synth, "cluster": cmd_cluster, "ssc": cmd_ssc,
            "score": cmd_score, "compare": cmd_compare}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    level = os.environ.get("SSC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as e:
        return int(e.code or 0)
    except UsageError as e:
        print(f"sscpic: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ValueError, RuntimeError, OSError, AssertionError) as e:
        print(f"sscpic: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
