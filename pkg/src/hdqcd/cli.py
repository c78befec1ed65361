"""Command line front end.

Subcommands: detect, estimate-cov, divergence, spectra, simulate-arl,
simulate-wadd, experiment. Emits deterministic CSV/JSON so downstream
plotting and pipelines can diff outputs byte for byte.

Exit codes: 0 success, 2 usage, 3 data/parse, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import struct
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .detect import DetectorConfig, resolve_estimator, wlcusum_run
from .divergence import GaussianParams, inverse_stein_loss, kl_gaussian, nhdkl_finite
from .errors import (
    DimensionMismatchError,
    ExhaustedStreamError,
    HdqcdError,
    InsufficientWarmupError,
    InvalidInputError,
    NumericalGuardError,
    StreamParseError,
    UsageError,
)
from .estimators import (
    DataWindow,
    ShrinkageRule,
    apply_shrinkage,
    lwise_estimate,
    sample_covariance,
)
from .sim import ExperimentPlan, run_experiment
from .spectra import eig_sym, esdf

HDW1_MAGIC = b"HDW1"
HDW1_HEADER = struct.Struct("<4sII")

RESULT_COLUMNS = ("p", "n", "b", "estimator", "metric", "value", "stderr",
                  "reps", "censored", "note", "seed", "version")


@dataclass
class CliConfig:
    """Resolved invocation: flags merged over any config file."""

    subcommand: str
    input: str | None = None
    output: str | None = None
    fmt: str = "csv"
    estimator: str | None = None
    b: float | None = None
    window: int | None = None
    cap: int = 1_000_000
    seed: int | None = None
    reps: int | None = None
    gamma: float | None = None
    p: int | None = None
    n: int | None = None
    trace: str | None = None
    as_window: bool = False
    mean_a: str | None = None
    cov_a: str | None = None
    mean_b: str | None = None
    cov_b: str | None = None
    plan: ExperimentPlan | None = None
    resolved: dict = field(default_factory=dict)


@dataclass
class ResultRecord:
    """One output row; every row carries the master seed and tool version."""

    p: int
    n: int
    b: float
    estimator: str
    metric: str
    value: float
    stderr: float
    reps: int
    censored: int
    note: str
    seed: int
    version: str


def _fmt(value) -> str:
    """Shortest round-trip text for a cell."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ---------------------------------------------------------------------------
# stream and matrix I/O


def _parse_csv_rows(path: str) -> np.ndarray:
    rows = []
    width = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                row = [float(part) for part in parts]
            except ValueError as exc:
                raise StreamParseError(f"{path}: line {lineno}: {exc}") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DimensionMismatchError(
                    f"{path}: line {lineno}: expected {width} fields, got {len(row)}"
                )
            rows.append(row)
    if not rows:
        raise StreamParseError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def _read_hdw1(path: str) -> np.ndarray:
    """Read a binary window: 12-byte header, then column-major float64."""
    with open(path, "rb") as fh:
        header = fh.read(HDW1_HEADER.size)
        if len(header) != HDW1_HEADER.size:
            raise StreamParseError(f"{path}: truncated header ({len(header)} bytes)")
        magic, p, n = HDW1_HEADER.unpack(header)
        if magic != HDW1_MAGIC:
            raise StreamParseError(f"{path}: bad magic {magic!r}")
        payload = fh.read()
    expected = 8 * p * n
    if len(payload) != expected:
        raise StreamParseError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    data = np.frombuffer(payload, dtype="<f8")
    return data.reshape((p, n), order="F")


def ingest_stream(path: str, fmt: str = "csv") -> np.ndarray:
    """Load a sample stream as an (n_samples, p) array.

    CSV carries one sample per line; the binary format stores the p x n
    window column-major behind an HDW1 header.
    """
    if fmt == "csv":
        return _parse_csv_rows(path)
    if fmt == "binary":
        return _read_hdw1(path).T.copy()
    raise UsageError(f"unknown stream format {fmt!r}")


def read_window(path: str, fmt: str = "csv") -> DataWindow:
    """Load a data window (rows = variables, columns = samples)."""
    if fmt == "csv":
        return DataWindow(_parse_csv_rows(path))
    if fmt == "binary":
        return DataWindow(_read_hdw1(path).copy())
    raise UsageError(f"unknown window format {fmt!r}")


def write_stream(path: str, samples: np.ndarray, fmt: str = "csv") -> None:
    """Write an (n_samples, p) stream; inverse of ingest_stream."""
    samples = np.asarray(samples, dtype=float)
    if fmt == "csv":
        with open(path, "w", encoding="ascii") as fh:
            for row in samples:
                fh.write(",".join(_fmt(float(v)) for v in row) + "\n")
        return
    if fmt == "binary":
        n, p = samples.shape
        with open(path, "wb") as fh:
            fh.write(HDW1_HEADER.pack(HDW1_MAGIC, p, n))
            fh.write(samples.T.astype("<f8").tobytes(order="F"))
        return
    raise UsageError(f"unknown stream format {fmt!r}")


def _read_vector(path: str) -> np.ndarray:
    arr = _parse_csv_rows(path)
    if 1 not in arr.shape:
        raise StreamParseError(f"{path}: expected a vector, got shape {arr.shape}")
    return arr.reshape(-1)


def _write_matrix(path: str, matrix: np.ndarray) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for row in matrix:
            fh.write(",".join(_fmt(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# result emission


def emit_results(records: list[ResultRecord], path: str,
                 manifest_extra: dict | None = None) -> None:
    """Write records as sorted CSV plus a JSON manifest alongside.

    Row order is deterministic (sorted by key fields) and floats use their
    shortest round-trip representation, so identical inputs give byte-
    identical outputs.
    """
    if not records:
        raise InvalidInputError("no result records to emit")
    ordered = sorted(records, key=lambda r: (r.p, r.n, r.b, r.estimator, r.metric))
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(RESULT_COLUMNS) + "\n")
        for rec in ordered:
            row = asdict(rec)
            fh.write(",".join(_fmt(row[col]) for col in RESULT_COLUMNS) + "\n")
    manifest = {
        "version": __version__,
        "rows": len(ordered),
        "output": path,
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    with open(path + ".manifest.json", "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdqcd", description=__doc__)
    parser.add_argument("--version", action="version", version=f"hdqcd {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    detect = sub.add_parser("detect", help="run the window-limited detector on a stream")
    detect.add_argument("--input", required=True)
    detect.add_argument("--format", choices=("csv", "binary"), default="csv")
    detect.add_argument("--b", type=float, required=True)
    detect.add_argument("--window", type=int, required=True)
    detect.add_argument("--estimator", default="lwise")
    detect.add_argument("--cap", type=int, default=1_000_000)
    detect.add_argument("--trace", help="write per-step (t, llr, Y) CSV here")
    detect.add_argument("--output", help="stopping record JSON (default stdout)")

    cov = sub.add_parser("estimate-cov", help="estimate a covariance from a window file")
    cov.add_argument("--input", required=True)
    cov.add_argument("--format", choices=("csv", "binary"), default="csv")
    cov.add_argument("--estimator", default="lwise")
    cov.add_argument("--output", required=True)

    div = sub.add_parser("divergence", help="divergences between two parameter files")
    div.add_argument("--mean-a", required=True)
    div.add_argument("--cov-a", required=True)
    div.add_argument("--mean-b", required=True)
    div.add_argument("--cov-b", required=True)
    div.add_argument("--output", help="JSON output path (default stdout)")

    spec = sub.add_parser("spectra", help="dump the empirical spectral CDF of a matrix")
    spec.add_argument("--input", required=True)
    spec.add_argument("--as-window", action="store_true",
                      help="input is a data window; decompose its sample covariance")
    spec.add_argument("--output", required=True)

    for name in ("simulate-arl", "simulate-wadd", "experiment"):
        sim = sub.add_parser(name, help=f"{name} cells of a JSON plan")
        sim.add_argument("--config", help="JSON plan file")
        sim.add_argument("--gamma", type=float)
        sim.add_argument("--p", type=int)
        sim.add_argument("--n", type=int)
        sim.add_argument("--b", type=float)
        sim.add_argument("--reps", type=int)
        sim.add_argument("--seed", type=int)
        sim.add_argument("--cap", type=int)
        sim.add_argument("--estimator", action="append",
                         help="estimator id; repeat for several")
        sim.add_argument("--output", required=True)
    return parser


_PLAN_DEFAULTS = {
    "spectrum": [[1.0, 1.0]],
    "mean_norm": float(np.sqrt(2.0)),
    "estimators": ["lwise"],
    "reps": 100,
    "seed": 0,
}


def _resolve_plan(args: argparse.Namespace) -> tuple[ExperimentPlan, dict]:
    raw: dict = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise StreamParseError(f"{args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise StreamParseError(f"{args.config}: plan must be a JSON object")
    for key in ("gamma", "b", "reps", "seed", "cap"):
        value = getattr(args, key)
        if value is not None:
            raw[key] = value
            if key == "b":
                raw.pop("b_schedule", None)
    if args.estimator:
        raw["estimators"] = list(args.estimator)
    p, n = args.p, args.n
    if p is not None or n is not None:
        gamma = raw.get("gamma")
        if p is None or n is None:
            if gamma is None:
                raise UsageError("need --gamma to infer the missing one of --p/--n")
            if p is None:
                p = int(round(n * gamma))
            else:
                n = int(round(p / gamma))
        raw["sizes"] = [[p, n]]
        raw.setdefault("gamma", p / n)
    for key, default in _PLAN_DEFAULTS.items():
        raw.setdefault(key, default)
    if "sizes" not in raw:
        raise UsageError("no problem sizes: give --p/--n or a config file with sizes")
    if "b" not in raw and "b_schedule" not in raw:
        raise UsageError("no threshold: give --b or a config file with b/b_schedule")
    try:
        plan = ExperimentPlan.from_dict(raw)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None
    return plan, plan.to_dict()


def parse_config(argv, config_file: str | None = None) -> CliConfig:
    """Parse flags (and for simulation commands, merge a JSON plan file).

    Flags override file values; unknown plan keys are rejected.
    """
    parser = _build_parser()
    args = parser.parse_args(argv)
    cfg = CliConfig(subcommand=args.subcommand)
    for name in ("input", "output", "estimator", "b", "cap", "seed", "reps",
                 "gamma", "p", "n", "trace", "window"):
        if hasattr(args, name) and getattr(args, name) is not None:
            setattr(cfg, name, getattr(args, name))
    if hasattr(args, "format"):
        cfg.fmt = args.format
    if hasattr(args, "as_window"):
        cfg.as_window = args.as_window
    for name in ("mean_a", "cov_a", "mean_b", "cov_b"):
        if hasattr(args, name):
            setattr(cfg, name, getattr(args, name))
    if args.subcommand in ("simulate-arl", "simulate-wadd", "experiment"):
        if config_file is not None and not args.config:
            args.config = config_file
        cfg.plan, cfg.resolved = _resolve_plan(args)
        cfg.seed = cfg.plan.seed
    return cfg


# ---------------------------------------------------------------------------
# subcommand handlers


def _estimator_from_flag(flag: str):
    if flag.startswith("table:"):
        knots = _parse_csv_rows(flag.split(":", 1)[1])
        if knots.shape[1] != 2:
            raise StreamParseError("shrinkage table needs two columns (x, delta)")
        return ShrinkageRule.from_table(knots[:, 0], knots[:, 1])
    if flag in ("sample", "lwise", "identity"):
        return flag
    raise UsageError(f"unknown estimator {flag!r}")


def _cmd_detect(cfg: CliConfig) -> int:
    stream = ingest_stream(cfg.input, cfg.fmt)
    config = DetectorConfig(threshold=cfg.b, window=cfg.window, cap=cfg.cap)
    estimator = resolve_estimator(_estimator_from_flag(cfg.estimator))
    record = wlcusum_run(stream, config, estimator, collect_trace=bool(cfg.trace))
    if cfg.trace:
        with open(cfg.trace, "w", encoding="ascii") as fh:
            fh.write("t,llr,Y\n")
            for t, llr, Y in record.trace or []:
                fh.write(f"{t},{_fmt(float(llr))},{_fmt(float(Y))}\n")
    payload = json.dumps(
        {"time": record.time, "statistic": record.statistic,
         "censored": record.censored, "threshold": cfg.b, "window": cfg.window,
         "estimator": cfg.estimator, "version": __version__},
        indent=2, sort_keys=True,
    )
    if cfg.output:
        with open(cfg.output, "w", encoding="ascii") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)
    return 0


def _cmd_estimate_cov(cfg: CliConfig) -> int:
    window = read_window(cfg.input, cfg.fmt)
    spec = _estimator_from_flag(cfg.estimator)
    if spec == "sample":
        est = sample_covariance(window)
    elif spec == "lwise":
        est = lwise_estimate(window)
    elif spec == "identity":
        est = apply_shrinkage(window, ShrinkageRule.constant(1.0))
    else:
        est = apply_shrinkage(window, spec)
    _write_matrix(cfg.output, est.matrix)
    return 0


def _cmd_divergence(cfg: CliConfig) -> int:
    a = GaussianParams(_read_vector(cfg.mean_a), _parse_csv_rows(cfg.cov_a))
    b = GaussianParams(_read_vector(cfg.mean_b), _parse_csv_rows(cfg.cov_b))
    breakdown = nhdkl_finite(a, b)
    payload = json.dumps(
        {
            "kl": kl_gaussian(a, b),
            "kl_normalized": breakdown.normalized,
            "inverse_stein_loss": inverse_stein_loss(b.covariance, a.covariance),
            "breakdown": asdict(breakdown),
            "version": __version__,
        },
        indent=2, sort_keys=True,
    )
    if cfg.output:
        with open(cfg.output, "w", encoding="ascii") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)
    return 0


def _cmd_spectra(cfg: CliConfig) -> int:
    if cfg.as_window:
        matrix = sample_covariance(read_window(cfg.input, cfg.fmt)).matrix
    else:
        matrix = _parse_csv_rows(cfg.input)
    decomposition = eig_sym(matrix)
    lam = decomposition.eigenvalues[::-1]  # ascending for the CDF dump
    with open(cfg.output, "w", encoding="ascii") as fh:
        fh.write("eigenvalue,esdf\n")
        for value in lam:
            fh.write(f"{_fmt(float(value))},{_fmt(esdf(lam, float(value)))}\n")
    return 0


_SIM_METRICS = {
    "simulate-arl": ("arl",),
    "simulate-wadd": ("wadd",),
    "experiment": ("arl", "wadd", "diagnostics"),
}


def _cmd_simulate(cfg: CliConfig) -> int:
    rows = run_experiment(cfg.plan, metrics=_SIM_METRICS[cfg.subcommand])
    records = [
        ResultRecord(p=r.p, n=r.n, b=r.b, estimator=r.estimator, metric=r.metric,
                     value=r.value, stderr=r.stderr, reps=r.reps, censored=r.censored,
                     note=r.note, seed=cfg.plan.seed, version=__version__)
        for r in rows
    ]
    emit_results(records, cfg.output, manifest_extra={
        "config": cfg.resolved, "seed": cfg.plan.seed, "subcommand": cfg.subcommand,
    })
    return 0


_HANDLERS = {
    "detect": _cmd_detect,
    "estimate-cov": _cmd_estimate_cov,
    "divergence": _cmd_divergence,
    "spectra": _cmd_spectra,
    "simulate-arl": _cmd_simulate,
    "simulate-wadd": _cmd_simulate,
    "experiment": _cmd_simulate,
}


def main(argv=None) -> int:
    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
        return _HANDLERS[cfg.subcommand](cfg)
    except SystemExit as exc:  # argparse errors already printed usage
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (StreamParseError, DimensionMismatchError, ExhaustedStreamError,
            InsufficientWarmupError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NumericalGuardError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except HdqcdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
