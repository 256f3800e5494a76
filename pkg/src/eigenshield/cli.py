"""``eigenshield`` command line.

Exit codes: 0 success, 1 validation failure, 2 input error, 3 numeric or
calibration failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import metrics
from .defense import CalibrationConfig, calibrate, filter_input, load_calibration
from .errors import CalibrationError, DimensionMismatchError, EigenShieldError, NumericError
from .fileio import atomic_write_text, dumps, load_matrix_any, write_matrix
from .rmt import (
    mp_bulk_edges,
    mp_pdf,
    sample_spiked_dataset,
    sample_wigner,
    semicircle_moment,
    spiked_outlier_location,
    wigner_pdf,
)
from .spectral import covariance

EXIT_OK = 0
EXIT_VALIDATION_FAILED = 1
EXIT_INPUT_ERROR = 2
EXIT_NUMERIC_ERROR = 3

THREADS_ENV = "ESHIELD_THREADS"


class InputError(EigenShieldError, ValueError):
    """Bad command-line parameters or configuration values."""


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of calibrate/filter, with defaults applied."""

    seed: int = 0
    gamma: float = 0.75
    folds: int = 10
    lower_q: float = 0.10
    patch_side: int = 8
    hidden_width: int = 16
    epochs: int = 200
    step_size: float = 0.01
    slack: float = 0.01
    feature_dim: int = 16
    mode: str = "per_input"
    rows_per_input: int | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise InputError("config must be a JSON object")
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(doc) - set(known))
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(unknown)}")
        values = {}
        for key, value in doc.items():
            default = getattr(cls, key)
            if key == "mode":
                if value not in ("per_input", "global"):
                    raise InputError(f"mode must be per_input or global, got {value!r}")
            elif key == "rows_per_input":
                if value is not None and (not isinstance(value, int) or isinstance(value, bool) or value < 2):
                    raise InputError(f"rows_per_input must be an integer >= 2, got {value!r}")
            elif isinstance(default, bool) or not isinstance(value, (int, float)) or isinstance(value, bool):
                raise InputError(f"config key {key!r} must be numeric, got {value!r}")
            elif isinstance(default, int) and not isinstance(value, int):
                raise InputError(f"config key {key!r} must be an integer, got {value!r}")
            values[key] = value
        cfg = cls(**values)
        if not 0 < cfg.gamma <= 1:
            raise InputError(f"gamma must lie in (0, 1], got {cfg.gamma}")
        if not 0 <= cfg.lower_q <= 0.5:
            raise InputError(f"lower_q must lie in [0, 0.5], got {cfg.lower_q}")
        for key in ("folds", "patch_side", "hidden_width", "epochs", "feature_dim"):
            if getattr(cfg, key) < 1:
                raise InputError(f"{key} must be positive")
        if cfg.folds < 2:
            raise InputError("folds must be at least 2")
        return cfg

    def calibration_config(self, threads: int = 1) -> CalibrationConfig:
        return CalibrationConfig(
            gamma=self.gamma,
            folds=self.folds,
            lower_q=self.lower_q,
            slack=self.slack,
            feature_dim=self.feature_dim,
            patch_side=self.patch_side,
            epochs=self.epochs,
            step_size=self.step_size,
            hidden_width=self.hidden_width,
            seed=self.seed,
            threads=threads,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def thread_cap() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        value = int(raw)
    except ValueError as exc:
        raise InputError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, value)


def _emit(doc: dict, out: str | None) -> None:
    text = dumps(doc)
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _histogram(eigs: np.ndarray, bins: int, density) -> dict:
    counts, edges = np.histogram(eigs, bins=bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return {"edges": edges.tolist(), "counts": counts.tolist(), "predicted_density": density(centers).tolist()}


def _rel(value: float, reference: float) -> float:
    return abs(value - reference) / abs(reference) if reference != 0 else math.inf


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise InputError(message)


def _simulate_mp(args) -> dict:
    _require(args.n >= 2 and args.p >= 2, "--n and --p must be at least 2")
    _require(args.sigma2 > 0 and args.bins > 0, "--sigma2 and --bins must be positive")
    x, _ = sample_spiked_dataset(args.n, args.p, (), args.sigma2, args.seed)
    eigs = np.linalg.eigvalsh(covariance(x, center=False))
    model = mp_bulk_edges(args.sigma2, args.p / args.n)
    nonzero = eigs[-min(args.n, args.p) :]
    return {
        "command": "simulate",
        "kind": "mp",
        "run_config": {"n": args.n, "p": args.p, "sigma2": args.sigma2, "seed": args.seed, "bins": args.bins},
        "predicted": {"lambda_minus": model.lambda_minus, "lambda_plus": model.lambda_plus, "c": model.c},
        "empirical": {"min": float(nonzero[0]), "max": float(eigs[-1])},
        "relative_error": {"min": _rel(float(nonzero[0]), model.lambda_minus), "max": _rel(float(eigs[-1]), model.lambda_plus)},
        "histogram": _histogram(eigs, args.bins, lambda t: mp_pdf(t, model)),
    }


def _simulate_wigner(args) -> dict:
    _require(args.p >= 2, "--p must be at least 2")
    _require(args.sigma > 0 and args.bins > 0, "--sigma and --bins must be positive")
    m = sample_wigner(args.p, args.sigma, args.seed) / math.sqrt(args.p)
    eigs = np.linalg.eigvalsh(m)
    moments = {}
    for k in (2, 4):
        empirical = float(np.mean(eigs**k))
        exact = semicircle_moment(k, args.sigma)
        moments[str(k)] = {"empirical": empirical, "predicted": exact, "relative_error": _rel(empirical, exact)}
    edge = 2.0 * args.sigma
    return {
        "command": "simulate",
        "kind": "wigner",
        "run_config": {"p": args.p, "sigma": args.sigma, "seed": args.seed, "bins": args.bins},
        "predicted": {"lower_edge": -edge, "upper_edge": edge},
        "empirical": {"min": float(eigs[0]), "max": float(eigs[-1])},
        "relative_error": {"min": _rel(float(eigs[0]), -edge), "max": _rel(float(eigs[-1]), edge)},
        "moments": moments,
        "histogram": _histogram(eigs, args.bins, lambda t: wigner_pdf(t, args.sigma)),
    }


def _simulate_spike(args) -> dict:
    _require(args.n >= 2, "--n must be at least 2")
    _require(args.c > 0 and args.sigma2 > 0 and args.bins > 0, "--c, --sigma2 and --bins must be positive")
    p = int(round(args.c * args.n))
    betas = sorted((float(b) for b in args.beta), reverse=True)
    _require(all(b > 0 for b in betas), "--beta values must be positive")
    _require(2 <= p and len(betas) < p, f"c * n = {p} dimensions cannot carry {len(betas)} spikes")
    c = p / args.n
    x, _ = sample_spiked_dataset(args.n, p, [b * args.sigma2 for b in betas], args.sigma2, args.seed)
    eigs = np.linalg.eigvalsh(covariance(x, center=False))[::-1]
    model = mp_bulk_edges(args.sigma2, c)
    spikes = []
    for i, beta in enumerate(betas):
        pred = spiked_outlier_location(beta * args.sigma2, args.sigma2, c)
        target = pred.outlier_location if pred.supercritical else model.lambda_plus
        spikes.append(
            {
                "beta": beta,
                "supercritical": pred.supercritical,
                "predicted_location": target,
                "empirical": float(eigs[i]),
                "relative_error": _rel(float(eigs[i]), target),
            }
        )
    return {
        "command": "simulate",
        "kind": "spike",
        "run_config": {"beta": betas, "c": args.c, "n": args.n, "p": p, "sigma2": args.sigma2, "seed": args.seed, "bins": args.bins},
        "predicted": {"lambda_minus": model.lambda_minus, "lambda_plus": model.lambda_plus, "c": c},
        "spikes": spikes,
        "eigenvalues_beyond_edge_3pct": int(np.sum(eigs > 1.03 * model.lambda_plus)),
        "histogram": _histogram(eigs, args.bins, lambda t: mp_pdf(t, model)),
    }


def cmd_simulate(args) -> int:
    runner = {"mp": _simulate_mp, "wigner": _simulate_wigner, "spike": _simulate_spike}[args.kind]
    _emit(runner(args), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# calibrate / filter
# ---------------------------------------------------------------------------


def _load_run_config(path: str | None) -> RunConfig:
    if not path:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: config is not valid JSON ({exc})") from exc
    return RunConfig.from_dict(doc)


def _split_inputs(data: np.ndarray, rows_per_input: int | None) -> list[np.ndarray]:
    if rows_per_input is None:
        return [data]
    if data.shape[0] % rows_per_input:
        raise InputError(f"{data.shape[0]} rows are not a multiple of rows_per_input={rows_per_input}")
    return [data[i : i + rows_per_input] for i in range(0, data.shape[0], rows_per_input)]


def cmd_calibrate(args) -> int:
    cfg = _load_run_config(args.config)
    _require(cfg.rows_per_input is not None, "calibration needs rows_per_input in the config to split the data")
    inputs = _split_inputs(load_matrix_any(args.data), cfg.rows_per_input)
    try:
        calib = calibrate(inputs, config=cfg.calibration_config(thread_cap()))
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        if exc.spectrum is not None:
            sys.stderr.write(dumps({"spectrum": exc.spectrum.tolist(), **exc.diagnostics}))
        return EXIT_NUMERIC_ERROR
    doc = calib.to_dict()
    doc["run_config"] = cfg.to_dict()
    atomic_write_text(args.out, dumps(doc))
    print(
        f"tau_star={calib.tau_star!r} t_hat={calib.t_hat!r} log_t_hat={calib.log_t_hat!r} "
        f"outliers={len(calib.directions)} causal={len(calib.causal_indices)}"
    )
    return EXIT_OK


def cmd_filter(args) -> int:
    calib = load_calibration(args.calib)
    stored = json.loads(Path(args.calib).read_text()).get("run_config") or {}
    cfg = RunConfig.from_dict(stored) if stored else RunConfig()
    mode = args.mode or cfg.mode
    rows = args.rows_per_input if args.rows_per_input is not None else cfg.rows_per_input
    data = load_matrix_any(args.data)
    if data.shape[1] != calib.p:
        raise DimensionMismatchError(f"data has {data.shape[1]} columns, calibration expects {calib.p}")
    outputs, reports = [], []
    for i, chunk in enumerate(_split_inputs(data, rows)):
        out, report = filter_input(chunk, calib, mode=mode, input_id=str(i))
        outputs.append(out)
        reports.append(report.to_dict())
    write_matrix(args.out, np.vstack(outputs))
    reports_path = args.reports or f"{args.out}.reports.json"
    doc = {
        "command": "filter",
        "run_config": {**cfg.to_dict(), "mode": mode, "rows_per_input": rows},
        "calibration": str(args.calib),
        "tau_star": calib.tau_star,
        "reports": reports,
    }
    atomic_write_text(reports_path, dumps(doc))
    kept = sum(not r["passthrough"] for r in reports)
    print(f"filtered {len(reports)} inputs ({kept} projected, {len(reports) - kept} passed through)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate / metrics
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    from .validation import run_suite

    results = run_suite(args.suite, seed=args.seed, on_result=lambda r: print(r.line(), flush=True))
    doc = {
        "command": "validate",
        "run_config": {"suite": args.suite, "seed": args.seed},
        "passed": all(r.passed for r in results),
        "checks": [r.to_dict() for r in results],
    }
    if args.out:
        atomic_write_text(args.out, dumps(doc))
    else:
        sys.stdout.write(dumps(doc))
    return EXIT_OK if doc["passed"] else EXIT_VALIDATION_FAILED


def cmd_metrics(args) -> int:
    if args.kind == "asr":
        value = metrics.attack_success_rate(metrics.read_indicator_file(args.input))
        print(f"ASR = {value!r} (fraction of examples)")
        doc = {"metric": "asr", "value": value, "units": "fraction"}
    else:
        table = metrics.read_joint_table(args.input)
        value = metrics.mutual_information(table)
        print(f"MI = {value!r} bits")
        doc = {
            "metric": "mi",
            "value": value,
            "units": "bits",
            "entropy_x": metrics.entropy(table.marginal_x),
            "conditional_entropy": metrics.conditional_entropy(table),
        }
    doc = {"command": "metrics", "run_config": {"kind": args.kind, "input": str(args.input)}, **doc}
    _emit(doc, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eigenshield", description="Spectral causal-subspace defense toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Monte Carlo check of a spectral law")
    sim_kinds = sim.add_subparsers(dest="kind", required=True)
    mp = sim_kinds.add_parser("mp", help="white Gaussian sample covariance")
    mp.add_argument("--n", type=int, required=True)
    mp.add_argument("--p", type=int, required=True)
    mp.add_argument("--sigma2", type=float, default=1.0)
    wig = sim_kinds.add_parser("wigner", help="symmetric Gaussian matrix")
    wig.add_argument("--p", type=int, required=True)
    wig.add_argument("--sigma", type=float, default=1.0)
    spk = sim_kinds.add_parser("spike", help="spiked sample covariance")
    spk.add_argument("--beta", type=float, nargs="+", required=True)
    spk.add_argument("--c", type=float, required=True)
    spk.add_argument("--n", type=int, required=True)
    spk.add_argument("--sigma2", type=float, default=1.0)
    for p in (mp, wig, spk):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--bins", type=int, default=50)
        p.add_argument("--out", help="report path (stdout when omitted)")
    sim.set_defaults(func=cmd_simulate)

    cal = sub.add_parser("calibrate", help="fit the causal eigenvalue threshold")
    cal.add_argument("--data", required=True, help="ESMX or CSV matrix with all validation rows stacked")
    cal.add_argument("--config", help="JSON run config")
    cal.add_argument("--out", required=True)
    cal.set_defaults(func=cmd_calibrate)

    flt = sub.add_parser("filter", help="project inputs onto their causal subspace")
    flt.add_argument("--data", required=True)
    flt.add_argument("--calib", required=True)
    flt.add_argument("--out", required=True)
    flt.add_argument("--mode", choices=("per_input", "global"))
    flt.add_argument("--rows-per-input", type=int)
    flt.add_argument("--reports", help="report path (default: <out>.reports.json)")
    flt.set_defaults(func=cmd_filter)

    val = sub.add_parser("validate", help="run the acceptance checks")
    val.add_argument("--suite", choices=("rmt", "rbns", "all"), default="all")
    val.add_argument("--seed", type=int, default=0)
    val.add_argument("--out")
    val.set_defaults(func=cmd_validate)

    met = sub.add_parser("metrics", help="attack success rate or mutual information")
    met.add_argument("kind", choices=("asr", "mi"))
    met.add_argument("--input", required=True)
    met.add_argument("--out")
    met.set_defaults(func=cmd_metrics)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (CalibrationError, NumericError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC_ERROR
    except (EigenShieldError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
