"""Command-line interface: ``detect``, ``simulate``, ``calibrate`` and ``report``.

Every option can also come from a flat ``key = value`` config file passed
with ``--config``; command-line flags win over the file.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .betting import BettingConfig, PrecomputedDensity, calibrate_precomputed
from .core import CalibrationError, ConfigError, InputError, RngHandle
from .martingale import TRACE_COLUMNS, conformal_pvalues, run_icm
from .ncm import NcmConfig, TrainingSet
from .simgen import (
    GRID_MU1,
    GRID_THETAS,
    DetectorSpec,
    ExperimentConfig,
    ExtrapolationError,
    calibration_density,
    interpolate_at_fa,
    preset_specs,
    read_results_csv,
    run_grid,
    write_results_csv,
)

EXIT_OK, EXIT_ERROR, EXIT_ALARM = 0, 1, 2
MIN_CALIBRATION_LENGTH = 10


def _floats(text: str) -> list[float]:
    return [float(x) for x in re.split(r"[,\s]+", str(text).strip()) if x]


def _ints(text: str) -> list[int]:
    return [int(x) for x in re.split(r"[,\s]+", str(text).strip()) if x]


def _names(text: str) -> list[str]:
    return [x for x in re.split(r"[,\s]+", str(text).strip()) if x]


# key -> (parser, default); shared across commands, each command picks its subset.
OPTIONS = {
    "seed": (int, 0),
    "jobs": (int, 1),
    "out": (str, None),
    "ncm": (str, "knn"),
    "k": (int, 7),
    "mu_r": (float, 1.0),
    "sigma2": (float, 1.0),
    "sigma2_r": (float, 1.0),
    "betting": (str, "constant"),
    "window": (int, 100),
    "density": (str, None),
    "h": (float, math.log(100.0)),
    "train_rows": (int, None),
    "train": (str, None),
    "preset": (str, None),
    "detectors": (_names, None),
    "thetas": (_ints, list(GRID_THETAS)),
    "mu1s": (_floats, list(GRID_MU1)),
    "m": (int, 200),
    "replications": (int, 2000),
    "extra_horizon": (int, 2500),
    "h_grid": (_floats, None),
    "geom_p": (float, 0.01),
    "grid_size": (int, 1001),
    "length": (int, 1000),
    "cp": (int, 500),
    "mu1": (float, 1.0),
    "stream": (str, None),
    "fa": (_floats, [0.05, 0.10]),
    "curves": (str, None),
}

COMMAND_KEYS = {
    "detect": ("seed", "out", "ncm", "k", "mu_r", "sigma2", "sigma2_r", "betting",
               "window", "density", "h", "train_rows", "train"),
    "simulate": ("seed", "jobs", "out", "preset", "detectors", "thetas", "mu1s", "m", "k",
                 "mu_r", "sigma2", "sigma2_r", "window", "replications", "extra_horizon",
                 "h_grid", "geom_p", "grid_size"),
    "calibrate": ("seed", "out", "ncm", "k", "mu_r", "sigma2", "sigma2_r", "m", "grid_size",
                  "length", "cp", "mu1", "stream", "train"),
    "report": ("out", "fa", "curves"),
}


def read_config_file(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def resolve_options(command: str, args: argparse.Namespace) -> argparse.Namespace:
    """Merge defaults < config file < flags and validate every field."""
    allowed = COMMAND_KEYS[command]
    file_values = read_config_file(args.config) if args.config else {}
    unknown = sorted(set(file_values) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    for key in allowed:
        parse, default = OPTIONS[key]
        flag = getattr(args, key, None)
        if flag is not None:
            continue
        if key in file_values:
            try:
                setattr(args, key, parse(file_values[key]))
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from exc
        else:
            setattr(args, key, default)
    return args


def read_observations(path, dim: int | None = None) -> np.ndarray:
    """One observation per line; comma/whitespace separated floats; ``#`` comments."""
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                row = [float(x) for x in re.split(r"[,\s]+", line) if x]
            except ValueError:
                raise InputError(f"{path}: line {lineno}: malformed row {raw.strip()!r}") from None
            if not all(math.isfinite(x) for x in row):
                raise InputError(f"{path}: line {lineno}: non-finite value")
            if dim is None:
                dim = len(row)
            elif len(row) != dim:
                raise InputError(f"{path}: line {lineno}: expected {dim} values, found {len(row)}")
            rows.append(row)
    if not rows:
        raise InputError(f"{path}: no observations")
    return np.asarray(rows, dtype=float)


def _ncm(args) -> NcmConfig:
    return NcmConfig(args.ncm, args.k, args.mu_r, args.sigma2, args.sigma2_r)


def cmd_detect(args) -> int:
    data = read_observations(args.input)
    if args.train is not None:
        training = read_observations(args.train, data.shape[1])
        stream = data
    elif args.train_rows is not None:
        if not 1 <= args.train_rows < data.shape[0]:
            raise ConfigError("--train-rows must leave at least one stream observation")
        training, stream = data[: args.train_rows], data[args.train_rows:]
    else:
        raise ConfigError("designate the training portion with --train-rows or --train")
    if args.h < 0:
        raise ConfigError("threshold h must be nonnegative")
    density = PrecomputedDensity.read(args.density) if args.betting == "precomputed" else None
    if args.betting == "precomputed" and density is None:
        raise ConfigError("precomputed betting needs --density")
    rng = RngHandle(args.seed)
    train = TrainingSet(training, rng=rng.substream(2))
    result = run_icm(
        train, stream, _ncm(args), BettingConfig(args.betting, args.window, density),
        args.h, rng.substream(1), trace=True,
    )
    out = args.out or "trace.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for n, z, alpha, p, log_s, c in result.trace:
            writer.writerow([n, z, repr(float(alpha)), repr(p), repr(log_s), repr(c)])
    if result.alarmed:
        print(f"ALARM at n={result.tau}")
        return EXIT_ALARM
    print("NO ALARM")
    return EXIT_OK


def _experiment_base(args) -> ExperimentConfig:
    return ExperimentConfig(
        DetectorSpec("cusum"),
        m=args.m,
        extra_horizon=args.extra_horizon,
        replications=args.replications,
        h_grid=tuple(args.h_grid) if args.h_grid else None,
        seed=args.seed,
        k=args.k,
        mu_r=args.mu_r,
        sigma2=args.sigma2,
        sigma2_r=args.sigma2_r,
        window=args.window,
        geom_p=args.geom_p,
        grid_size=args.grid_size,
    )


def simulate_specs(args) -> list[DetectorSpec]:
    specs = preset_specs(args.preset) if args.preset else []
    specs += [DetectorSpec.parse(s) for s in (args.detectors or [])]
    if not specs:
        raise ConfigError("no detectors: give --preset or --detectors")
    return list(dict.fromkeys(specs))


def cmd_simulate(args) -> int:
    specs = simulate_specs(args)
    base = _experiment_base(args)
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    sweeps = run_grid(base, specs, args.thetas, args.mu1s, args.jobs,
                      progress=lambda msg: print(msg, file=sys.stderr, flush=True))
    out = args.out or "results.csv"
    write_results_csv(out, sweeps)
    print(f"wrote {sum(len(s.thresholds) for s in sweeps)} rows to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    ncm = _ncm(args)
    if args.stream is not None:
        stream = read_observations(args.stream, 1)[:, 0]
        if stream.size < MIN_CALIBRATION_LENGTH:
            raise CalibrationError(
                f"calibration stream has {stream.size} observations; need at least {MIN_CALIBRATION_LENGTH}")
        if args.train is None:
            raise ConfigError("--stream needs a --train file")
        rng = RngHandle(args.seed)
        train = TrainingSet(read_observations(args.train, 1), rng=rng.substream(2))
        density = calibrate_precomputed(conformal_pvalues(train, stream, ncm, rng.substream(1)), args.grid_size)
    else:
        if args.length < MIN_CALIBRATION_LENGTH:
            raise CalibrationError(f"calibration length must be at least {MIN_CALIBRATION_LENGTH}")
        spec = DetectorSpec("icm", ncm.kind, "precomputed")
        cfg = ExperimentConfig(
            spec, m=args.m, k=args.k, mu_r=args.mu_r, sigma2=args.sigma2, sigma2_r=args.sigma2_r,
            grid_size=args.grid_size, calibration_length=args.length, calibration_theta=args.cp,
            calibration_mu1=args.mu1, seed=args.seed,
        )
        density = calibration_density(cfg)
    out = args.out or "density.txt"
    density.write(out)
    print(f"wrote {density.grid_size}-point betting density to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    sweeps = read_results_csv(args.results)
    targets = args.fa
    if not targets or any(not 0 < t < 1 for t in targets):
        raise ConfigError("--fa targets must lie in (0, 1)")
    cols = [f"delay_fa_{t:g}" for t in targets]
    rows = []
    for sweep in sweeps:
        row = {
            "detector": sweep.spec.detector,
            "ncm": sweep.spec.ncm,
            "betting": sweep.spec.betting,
            "theta": sweep.theta,
            "mu1": f"{sweep.mu1:g}",
        }
        for t, col in zip(targets, cols):
            try:
                row[col] = repr(interpolate_at_fa(sweep, t))
            except ExtrapolationError as exc:
                print(f"warning: {sweep.spec.label} theta={sweep.theta} mu1={sweep.mu1:g}: {exc}", file=sys.stderr)
                row[col] = "n/a"
        rows.append(row)

    out = args.out or "report.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["detector", "ncm", "betting", "theta", "mu1", *cols],
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)

    curves = args.curves or str(Path(out).with_name(Path(out).stem + "_curves.csv"))
    with open(curves, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["detector", "ncm", "betting", "theta", "mu1", "h", "fa_prob", "mean_delay"])
        for sweep in sweeps:
            order = np.argsort(sweep.fa_prob, kind="stable")
            for i in order:
                writer.writerow([sweep.spec.detector, sweep.spec.ncm, sweep.spec.betting, sweep.theta,
                                 f"{sweep.mu1:g}", repr(float(sweep.thresholds[i])),
                                 repr(float(sweep.fa_prob[i])), repr(float(sweep.mean_delay[i]))])

    print(format_table(rows, targets, cols))
    return EXIT_OK


def _cell(value: str) -> str:
    try:
        return f"{float(value):.2f}"
    except ValueError:
        return value


def format_table(rows: list[dict], targets, cols) -> str:
    """Delay table: one line per (theta, mu1), delay columns per FA level."""
    labels = list(dict.fromkeys(
        f"{r['detector']}:{r['ncm']}:{r['betting']}" if r["ncm"] != "none" else r["detector"]
        for r in rows))
    cells = {}
    for r in rows:
        label = f"{r['detector']}:{r['ncm']}:{r['betting']}" if r["ncm"] != "none" else r["detector"]
        cells[(r["theta"], r["mu1"], label)] = r
    keys = list(dict.fromkeys((r["theta"], r["mu1"]) for r in rows))
    width = max(12, *(len(lb) for lb in labels))
    lines = []
    for t, col in zip(targets, cols):
        lines.append(f"Mean delay at FA = {t:g}")
        lines.append(f"{'theta, mu1':<16}" + "".join(f"{lb:>{width + 2}}" for lb in labels))
        for theta, mu1 in keys:
            vals = [_cell(cells.get((theta, mu1, lb), {}).get(col, "")) for lb in labels]
            lines.append(f"{f'{theta}, {mu1}':<16}" + "".join(f"{v:>{width + 2}}" for v in vals))
        lines.append("")
    return "\n".join(lines).rstrip()


class _Parser(argparse.ArgumentParser):
    # Exit status 2 is reserved for "alarm raised".
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cpmartingale", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def shared(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int)
        p.add_argument("--out")

    def ncm_flags(p):
        p.add_argument("--ncm", choices=("knn", "lr", "mean-distance"))
        p.add_argument("--k", type=int)
        p.add_argument("--mu-r", dest="mu_r", type=float)
        p.add_argument("--sigma2", type=float)
        p.add_argument("--sigma2-r", dest="sigma2_r", type=float)

    p = sub.add_parser("detect", help="run the ICM detector on an observation file")
    shared(p)
    ncm_flags(p)
    p.add_argument("input")
    p.add_argument("--betting", choices=("constant", "mixture", "kernel", "precomputed"))
    p.add_argument("--window", type=int)
    p.add_argument("--density", help="precomputed betting density file")
    p.add_argument("--h", type=float, help="alarm threshold on the cut statistic")
    p.add_argument("--train-rows", dest="train_rows", type=int)
    p.add_argument("--train", help="separate training observation file")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("simulate", help="Monte Carlo false-alarm / delay sweeps")
    shared(p)
    p.add_argument("--preset", choices=("table1", "table2", "table3", "table4", "table5", "fig3"))
    p.add_argument("--detectors", type=_names, help="comma list, e.g. icm:lr:constant,cusum-oracle")
    p.add_argument("--thetas", type=_ints)
    p.add_argument("--mu1s", type=_floats)
    p.add_argument("--m", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--mu-r", dest="mu_r", type=float)
    p.add_argument("--sigma2", type=float)
    p.add_argument("--sigma2-r", dest="sigma2_r", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--extra-horizon", dest="extra_horizon", type=int)
    p.add_argument("--h-grid", dest="h_grid", type=_floats)
    p.add_argument("--geom-p", dest="geom_p", type=float)
    p.add_argument("--grid-size", dest="grid_size", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="fit the precomputed kernel betting density")
    shared(p)
    ncm_flags(p)
    p.add_argument("--m", type=int)
    p.add_argument("--grid-size", dest="grid_size", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--cp", type=int)
    p.add_argument("--mu1", type=float)
    p.add_argument("--stream", help="user calibration stream (1-D)")
    p.add_argument("--train", help="training file for --stream")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("report", help="interpolate mean delays at target FA levels")
    shared(p)
    p.add_argument("results")
    p.add_argument("--fa", type=_floats)
    p.add_argument("--curves")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        resolve_options(args.command, args)
        return args.func(args)
    except (ConfigError, InputError, CalibrationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
