"""Experiment harness: data ingestion, chain runs, ACF tables and spectral reports.

Subcommands::

    ngshrink simulate --n 10 --p 15 --seed 1 --out data/
    ngshrink run [--config exp.ini] [--x-csv X.csv --y-csv Y.csv] --chains three_block,two_block,haar_pxda ...
    ngshrink spectral --a-values 0.3,0.5,0.75,1.5 --out results/
    ngshrink bench --n 10 --p 15

Exit codes: 0 success, 1 configuration error, 2 runtime or numerical error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .chains import ChainKind, RunConfig, run_chain
from .diagnostics import autocorrelation, effective_sample_size, functional_series
from .model import Dataset, Hyperparams
from .rand_dists import RngStream
from .spectral import TraceGrid, small_beta_asymptotics_check, trace_probe, unit_instance

__all__ = [
    "SimulateSource",
    "CsvSource",
    "ExperimentSpec",
    "ConfigError",
    "CsvFormatError",
    "simulate_dataset",
    "load_csv",
    "write_csv_dataset",
    "run_experiment",
    "run_spectral_probe",
    "main",
]

SCHEMA_VERSION = 1
# Stream reserved for simulated designs so they never overlap chain streams.
_DATA_STREAM = 1000

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 1)."""


class CsvFormatError(ValueError):
    """Malformed CSV input; ``row`` and ``column`` are 1-based."""

    def __init__(self, path, row: int, column: Optional[int], message: str):
        where = f"row {row}" + (f", column {column}" if column is not None else "")
        super().__init__(f"{path}: {where}: {message}")
        self.path = str(path)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class SimulateSource:
    n: int
    p: int
    seed: int = 1


@dataclass(frozen=True)
class CsvSource:
    path_x: str
    path_y: str
    skip_header: bool = False


@dataclass
class ExperimentSpec:
    """Everything needed to reproduce one ACF table."""

    dataset_source: Union[SimulateSource, CsvSource]
    hyper: Hyperparams
    chains: list = field(default_factory=lambda: list(ChainKind))
    iterations: int = 100_000
    burn_in: int = 10_000
    thin: int = 1
    max_lag: int = 10
    replicate_seeds: list = field(default_factory=lambda: list(range(1, 11)))
    output_dir: str = "results"
    envelope: str = "stepped"

    def __post_init__(self) -> None:
        if not self.chains:
            raise ConfigError("at least one chain kind is required")
        try:
            self.chains = [c if isinstance(c, ChainKind) else ChainKind.parse(str(c)) for c in self.chains]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.max_lag < 1:
            raise ConfigError(f"max_lag must be at least 1, got {self.max_lag}")
        if not self.replicate_seeds:
            raise ConfigError("at least one replicate seed is required")
        if isinstance(self.dataset_source, SimulateSource):
            if self.dataset_source.n < 1 or self.dataset_source.p < 1:
                raise ConfigError("simulate requires n >= 1 and p >= 1")
        try:
            RunConfig(ChainKind.TwoBlock, self.iterations, self.burn_in, self.thin, envelope=self.envelope)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        kept = (self.iterations - self.burn_in) // self.thin
        if kept <= 3 * self.max_lag:
            raise ConfigError(f"{kept} kept draws are too few for max_lag={self.max_lag}")
        if ChainKind.HaarPxDa in self.chains and not self.hyper.pxda_allowed:
            raise ConfigError("the haar_pxda chain requires xi > 0")


def simulate_dataset(n: int, p: int, seed: int) -> Dataset:
    """``X`` (n x p) and ``Y`` (n) with iid standard normal entries from a seeded stream."""
    if n < 1 or p < 1:
        raise ConfigError(f"simulate requires n >= 1 and p >= 1, got n={n}, p={p}")
    rng = RngStream(seed, _DATA_STREAM).generator()
    X = rng.standard_normal((n, p))
    Y = rng.standard_normal(n)
    return Dataset(X, Y)


def _read_matrix(path, skip_header: bool) -> np.ndarray:
    rows = []
    width = None
    with open(path, newline="") as fh:
        for i, rec in enumerate(csv.reader(fh), start=1):
            if skip_header and i == 1:
                continue
            if not rec or all(not c.strip() for c in rec):
                continue
            if width is None:
                width = len(rec)
            elif len(rec) != width:
                raise CsvFormatError(path, i, None, f"expected {width} fields, found {len(rec)}")
            vals = []
            for j, cell in enumerate(rec, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise CsvFormatError(path, i, j, f"non-numeric value {cell.strip()!r}") from None
                if not math.isfinite(v):
                    raise CsvFormatError(path, i, j, f"non-finite value {cell.strip()!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise CsvFormatError(path, 1, None, "no data rows")
    return np.array(rows, dtype=float)


def load_csv(path_x, path_y, skip_header: bool = False, expect_binary: bool = False) -> Dataset:
    """Read a design matrix and a one-column response from comma-separated files.

    With ``expect_binary`` a warning (not an error) is issued when ``X`` has
    entries other than 0 and 1.
    """
    X = _read_matrix(path_x, skip_header)
    Ym = _read_matrix(path_y, skip_header)
    if Ym.shape[1] != 1:
        raise CsvFormatError(path_y, 1, 2, f"response file must have one column, found {Ym.shape[1]}")
    Y = Ym[:, 0]
    if X.shape[0] != Y.shape[0]:
        first_extra = min(X.shape[0], Y.shape[0]) + 1 + int(skip_header)
        raise CsvFormatError(path_y, first_extra, None,
                             f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    if expect_binary and not np.all((X == 0) | (X == 1)):
        warnings.warn(f"{path_x}: design matrix has entries other than 0/1", stacklevel=2)
    return Dataset(X, Y)


def _fmt(v: float) -> str:
    return "nan" if not math.isfinite(v) else repr(float(v))


def write_csv_dataset(data: Dataset, out_dir) -> tuple[Path, Path]:
    """Write ``X.csv`` and ``Y.csv`` (full precision, no header)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    px, py = out / "X.csv", out / "Y.csv"
    with open(px, "w", newline="") as fh:
        for row in data.X:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    with open(py, "w", newline="") as fh:
        for v in data.Y:
            fh.write(_fmt(v) + "\n")
    return px, py


def _load_source(src) -> Dataset:
    if isinstance(src, SimulateSource):
        return simulate_dataset(src.n, src.p, src.seed)
    return load_csv(src.path_x, src.path_y, src.skip_header)


def _write_lines(path: Path, lines: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("".join(line + "\n" for line in lines))


def run_experiment(spec: ExperimentSpec, data: Dataset | None = None) -> dict:
    """Run every (chain, seed) cell and write ``acf_*.csv``, ``summary.json``, ``table.csv``.

    Wall-clock times go to ``timing.json`` so the other outputs are
    byte-identical across runs of the same spec.  A failing cell is recorded
    in ``summary.json`` and the remaining cells still run.
    """
    data = _load_source(spec.dataset_source) if data is None else data
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    timing = {}
    for kind in spec.chains:
        for seed in spec.replicate_seeds:
            cfg = RunConfig(kind, spec.iterations, spec.burn_in, spec.thin, int(seed), envelope=spec.envelope)
            t0 = time.perf_counter()
            cell = {"chain": kind.value, "seed": int(seed)}
            try:
                trace = run_chain(cfg, data, spec.hyper)
                series = functional_series(trace.beta, trace.sigma2, data)
                acf = autocorrelation(series, spec.max_lag)
                cell.update(
                    status="ok",
                    acf=[float(v) for v in acf.acf],
                    ess=effective_sample_size(series),
                    n_samples=int(series.size),
                    functional_mean=float(acf.series_mean),
                    pxda_acceptance_rate=trace.pxda_acceptance_rate,
                )
                _write_lines(out / f"acf_{kind.value}_{seed}.csv",
                             ["lag,acf"] + [f"{k},{v:.4f}" for k, v in zip(acf.lags, acf.acf)])
            except Exception as exc:  # a failed cell must not stop the others
                log.warning("chain %s seed %s failed: %s", kind.value, seed, exc)
                cell.update(status="error", error=f"{type(exc).__name__}: {exc}")
            timing[f"{kind.value}_{seed}"] = time.perf_counter() - t0
            cells.append(cell)

    header = "chain," + ",".join(f"lag{k}" for k in range(1, spec.max_lag + 1))
    rows = [header]
    medians = {}
    for kind in spec.chains:
        acfs = [c["acf"] for c in cells if c["chain"] == kind.value and c["status"] == "ok"]
        med = np.median(np.array(acfs), axis=0) if acfs else np.full(spec.max_lag, np.nan)
        medians[kind.value] = [float(v) for v in med]
        rows.append(kind.value + "," + ",".join(f"{v:.4f}" if math.isfinite(v) else "nan" for v in med))
    _write_lines(out / "table.csv", rows)

    src = spec.dataset_source
    summary = {
        "schema_version": SCHEMA_VERSION,
        "dataset": {"n": data.n, "p": data.p,
                    "source": ({"simulate": {"n": src.n, "p": src.p, "seed": src.seed}}
                               if isinstance(src, SimulateSource)
                               else {"csv": {"x": str(src.path_x), "y": str(src.path_y)}})},
        "hyper": {"a": spec.hyper.a, "b": spec.hyper.b, "alpha": spec.hyper.alpha, "xi": spec.hyper.xi},
        "run": {"iterations": spec.iterations, "burn_in": spec.burn_in, "thin": spec.thin,
                "max_lag": spec.max_lag, "seeds": [int(s) for s in spec.replicate_seeds],
                "envelope": spec.envelope},
        "cells": cells,
        "median_acf": medians,
        "wall_time_file": "timing.json",
    }
    with open(out / "summary.json", "w", newline="") as fh:
        fh.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    with open(out / "timing.json", "w", newline="") as fh:
        fh.write(json.dumps({"wall_time_seconds": timing}, indent=2, sort_keys=True) + "\n")
    return summary


def run_spectral_probe(a_values: Sequence[float], output_dir, hp_rest: Hyperparams | None = None,
                       grid: TraceGrid | None = None) -> dict:
    """Trace-class probe and small-``beta`` slope per ``a`` on the unit instance; writes ``spectral.json``."""
    if not a_values:
        raise ConfigError("at least one a value is required")
    for a in a_values:
        if not (a > 0 and math.isfinite(a)):
            raise ConfigError(f"a must be positive, got {a}")
    hp_rest = hp_rest if hp_rest is not None else Hyperparams(a=1.0, b=1.0, alpha=1.0, xi=1.0)
    entries = []
    for a in a_values:
        entry = {"a": float(a)}
        try:
            entry["probe"] = trace_probe(a, unit_instance(), hp_rest, grid).to_dict()
            entry["small_beta_slope"] = small_beta_asymptotics_check(a, hp_rest, 1.0).slope
            entry["status"] = "ok"
        except Exception as exc:
            log.warning("spectral probe failed for a=%s: %s", a, exc)
            entry.update(status="error", error=f"{type(exc).__name__}: {exc}")
        entries.append(entry)
    report = {
        "schema_version": SCHEMA_VERSION,
        "instance": {"n": 1, "p": 1, "X": 1.0, "Y": 1.0},
        "hyper_rest": {"b": hp_rest.b, "alpha": hp_rest.alpha, "xi": hp_rest.xi},
        "entries": entries,
    }
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "spectral.json", "w", newline="") as fh:
        fh.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _int_list(text: str) -> list[int]:
    out = []
    for t in text.split(","):
        t = t.strip()
        if not t:
            continue
        if "-" in t[1:]:
            lo, hi = t.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(t))
    return out


_RUN_KEYS = {
    # flag dest: (ini section, type)
    "n": ("data", int), "p": ("data", int), "data_seed": ("data", int),
    "x_csv": ("data", str), "y_csv": ("data", str), "skip_header": ("data", "bool"),
    "a": ("prior", float), "b": ("prior", float), "xi": ("prior", float), "alpha": ("prior", float),
    "chains": ("run", str), "iters": ("run", int), "burn_in": ("run", int), "thin": ("run", int),
    "max_lag": ("run", int), "seeds": ("run", str), "out": ("run", str), "envelope": ("run", str),
}
_RUN_DEFAULTS = {
    "n": 10, "p": 15, "data_seed": 1, "x_csv": None, "y_csv": None, "skip_header": False,
    "a": 0.75, "b": 2.0, "xi": 100.0, "alpha": 0.0,
    "chains": "three_block,two_block,haar_pxda", "iters": 100_000, "burn_in": 10_000, "thin": 1,
    "max_lag": 10, "seeds": "1-10", "out": "results", "envelope": "stepped",
}


def _read_config(path) -> dict:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise ConfigError(f"cannot read config file {path}")
    values = {}
    for dest, (section, typ) in _RUN_KEYS.items():
        key = dest.replace("_", "-")
        for k in (key, dest):
            if cp.has_option(section, k):
                try:
                    if typ == "bool":
                        values[dest] = cp.getboolean(section, k)
                    else:
                        values[dest] = typ(cp.get(section, k))
                except ValueError as exc:
                    raise ConfigError(f"{path}: [{section}] {k}: {exc}") from None
    for section in cp.sections():
        for k in cp.options(section):
            dest = k.replace("-", "_")
            if dest not in _RUN_KEYS or _RUN_KEYS[dest][0] != section:
                raise ConfigError(f"{path}: unknown key [{section}] {k}")
    return values


def _spec_from_args(args) -> ExperimentSpec:
    values = dict(_RUN_DEFAULTS)
    if args.config:
        values.update(_read_config(args.config))
    for dest in _RUN_KEYS:
        v = getattr(args, dest, None)
        if v is not None:
            values[dest] = v
    try:
        hyper = Hyperparams(a=values["a"], b=values["b"], alpha=values["alpha"], xi=values["xi"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if (values["x_csv"] is None) != (values["y_csv"] is None):
        raise ConfigError("--x-csv and --y-csv must be given together")
    if values["x_csv"] is not None:
        source = CsvSource(values["x_csv"], values["y_csv"], bool(values["skip_header"]))
    else:
        source = SimulateSource(values["n"], values["p"], values["data_seed"])
    chains = [c for c in str(values["chains"]).split(",") if c.strip()]
    try:
        seeds = _int_list(str(values["seeds"]))
    except ValueError as exc:
        raise ConfigError(f"bad seed list: {exc}") from None
    return ExperimentSpec(
        dataset_source=source, hyper=hyper, chains=chains, iterations=values["iters"],
        burn_in=values["burn_in"], thin=values["thin"], max_lag=values["max_lag"],
        replicate_seeds=seeds, output_dir=values["out"], envelope=values["envelope"],
    )


def _cmd_simulate(args) -> int:
    data = simulate_dataset(args.n, args.p, args.seed)
    px, py = write_csv_dataset(data, args.out)
    print(f"wrote {px} and {py}")
    return 0


def _cmd_run(args) -> int:
    spec = _spec_from_args(args)
    try:
        data = _load_source(spec.dataset_source)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    summary = run_experiment(spec, data)
    failed = [c for c in summary["cells"] if c["status"] != "ok"]
    with open(Path(spec.output_dir) / "table.csv") as fh:
        sys.stdout.write(fh.read())
    if failed:
        for c in failed:
            print(f"cell {c['chain']} seed {c['seed']} failed: {c['error']}", file=sys.stderr)
        return 2
    return 0


def _cmd_spectral(args) -> int:
    try:
        hp_rest = Hyperparams(a=1.0, b=args.b, alpha=args.alpha, xi=args.xi)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    report = run_spectral_probe(args.a_values, args.out, hp_rest)
    status = 0
    for e in report["entries"]:
        if e["status"] == "ok":
            print(f"a={e['a']}: {e['probe']['verdict']} (log slope {e['probe']['log_slope']:.4g}"
                  f" +/- {e['probe']['log_slope_se']:.2g}; small-beta slope {e['small_beta_slope']:.4f})")
        else:
            print(f"a={e['a']}: failed: {e['error']}", file=sys.stderr)
            status = 2
    return status


def _cmd_bench(args) -> int:
    try:
        hyper = Hyperparams(a=args.a, b=args.b, alpha=args.alpha, xi=args.xi)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    data = simulate_dataset(args.n, args.p, args.seed)
    for kind in ChainKind:
        if kind is ChainKind.HaarPxDa and not hyper.pxda_allowed:
            continue
        run_chain(RunConfig(kind, 20, 0, seed=args.seed), data, hyper)  # compile
        t0 = time.perf_counter()
        trace = run_chain(RunConfig(kind, args.iters, 0, seed=args.seed), data, hyper)
        dt = time.perf_counter() - t0
        extra = f", PX-DA acceptance {trace.pxda_acceptance_rate:.3f}" if trace.pxda_acceptance_rate else ""
        print(f"{kind.value}: {1e6 * dt / args.iters:.1f} us/step{extra}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ngshrink", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("simulate", help="write an iid N(0,1) design to X.csv and Y.csv")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--out", default=".")
    sp.set_defaults(func=_cmd_simulate)

    rp = sub.add_parser("run", help="run chains and write ACF tables")
    rp.add_argument("--config", help="INI file with [data], [prior] and [run] sections")
    rp.add_argument("--n", type=int)
    rp.add_argument("--p", type=int)
    rp.add_argument("--data-seed", type=int)
    rp.add_argument("--x-csv")
    rp.add_argument("--y-csv")
    rp.add_argument("--skip-header", action="store_true", default=None)
    rp.add_argument("--a", type=float)
    rp.add_argument("--b", type=float)
    rp.add_argument("--xi", type=float)
    rp.add_argument("--alpha", type=float)
    rp.add_argument("--chains", help="comma-separated: three_block,two_block,haar_pxda")
    rp.add_argument("--iters", type=int)
    rp.add_argument("--burn-in", type=int)
    rp.add_argument("--thin", type=int)
    rp.add_argument("--max-lag", type=int)
    rp.add_argument("--seeds", help="comma-separated seeds or ranges, e.g. 1-10")
    rp.add_argument("--out")
    rp.add_argument("--envelope", choices=["stepped", "gamma"])
    rp.set_defaults(func=_cmd_run)

    pp = sub.add_parser("spectral", help="trace-class probe on the p=1 unit instance")
    pp.add_argument("--a-values", type=_float_list, default=[0.3, 0.5, 0.75, 1.5])
    pp.add_argument("--b", type=float, default=1.0)
    pp.add_argument("--xi", type=float, default=1.0)
    pp.add_argument("--alpha", type=float, default=1.0)
    pp.add_argument("--out", default="results")
    pp.set_defaults(func=_cmd_spectral)

    bp = sub.add_parser("bench", help="time one step of each chain")
    bp.add_argument("--n", type=int, default=10)
    bp.add_argument("--p", type=int, default=15)
    bp.add_argument("--a", type=float, default=0.75)
    bp.add_argument("--b", type=float, default=2.0)
    bp.add_argument("--xi", type=float, default=100.0)
    bp.add_argument("--alpha", type=float, default=0.0)
    bp.add_argument("--iters", type=int, default=20_000)
    bp.add_argument("--seed", type=int, default=1)
    bp.set_defaults(func=_cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors exit 1, --help exits 0
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
