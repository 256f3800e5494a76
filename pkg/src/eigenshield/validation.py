"""Acceptance checks shared by ``eigenshield validate`` and the test suite.

Each check returns a :class:`CheckResult` whose ``margin`` is the distance to
the failure boundary in the check's own units (positive means passing).
"""

from __future__ import annotations

import contextlib
import io
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import metrics
from .defense import CalibrationConfig, calibrate, filter_input, rethreshold
from .rbns import derive_seed, diag_gaussian_kl
from .rmt import (
    RmtFit,
    fit_rmt_decomposition,
    mp_bulk_edges,
    random_orthonormal_frame,
    rmt_loss,
    sample_spiked_dataset,
    sample_wigner,
    semicircle_moment,
    spiked_outlier_location,
)
from .spectral import build_projector, covariance, project, projector_from_vectors, symmetric_eig
from .synthetic import clean_input, planted_inputs

TRIALS = 20


@dataclass
class CheckResult:
    criterion: int
    name: str
    passed: bool
    margin: float
    seconds: float = 0.0
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.criterion:>2} {self.name}: margin={self.margin:.6g} ({self.seconds:.1f}s)"

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "name": self.name,
            "passed": self.passed,
            "margin": self.margin,
            "seconds": self.seconds,
            "detail": self.detail,
        }


def _timed(criterion: int, name: str, body: Callable[[], tuple[bool, float, dict]]) -> CheckResult:
    start = time.perf_counter()
    passed, margin, detail = body()
    return CheckResult(criterion, name, bool(passed), float(margin), time.perf_counter() - start, detail)


# ---------------------------------------------------------------------------
# Random-matrix checks
# ---------------------------------------------------------------------------


def check_mp_edges(seed: int = 0, n: int = 4000, p: int = 1000) -> CheckResult:
    def body():
        model = mp_bulk_edges(1.0, p / n)
        top_err, bottom_err = [], []
        for t in range(TRIALS):
            x, _ = sample_spiked_dataset(n, p, (), 1.0, derive_seed(seed, 1, t))
            eigs = np.linalg.eigvalsh(covariance(x, center=False))
            top_err.append(abs(eigs[-1] - model.lambda_plus) / model.lambda_plus)
            bottom_err.append(abs(eigs[0] - model.lambda_minus) / model.lambda_minus)
        margin = min(0.03 - max(top_err), 0.05 - max(bottom_err))
        return margin > 0, margin, {"max_top_rel_err": max(top_err), "max_bottom_rel_err": max(bottom_err)}

    result = _timed(1, "Marchenko-Pastur edges", body)
    if result.seconds >= 60:
        result.passed = False
    return result


def check_spike_location(seed: int = 0, n: int = 4000, c: float = 0.25) -> CheckResult:
    p = int(round(c * n))

    def body():
        predicted = spiked_outlier_location(9.0, 1.0, c).outlier_location
        errs = []
        for t in range(TRIALS):
            x, _ = sample_spiked_dataset(n, p, (9.0,), 1.0, derive_seed(seed, 2, t))
            top = np.linalg.eigvalsh(covariance(x, center=False))[-1]
            errs.append(abs(top - predicted) / predicted)
        cutoff = mp_bulk_edges(1.0, c).lambda_plus * 1.03
        quiet, tops = 0, []
        for t in range(TRIALS):
            x, _ = sample_spiked_dataset(n, p, (2.0,), 1.0, derive_seed(seed, 2, 100 + t))
            top = np.linalg.eigvalsh(covariance(x, center=False))[-1]
            tops.append(float(top))
            quiet += top <= cutoff
        margin = min(0.05 - max(errs), (quiet - 18) / TRIALS)
        ok = max(errs) < 0.05 and quiet >= 18
        return ok, margin, {
            "predicted": predicted,
            "max_rel_err_beta9": max(errs),
            "beta2_seeds_without_outlier": int(quiet),
            "beta2_cutoff": cutoff,
            "beta2_top_eigenvalues": tops,
        }

    result = _timed(2, "spiked outlier location", body)
    if result.seconds >= 60:
        result.passed = False
    return result


def check_eigenvector_alignment(seed: int = 0, n: int = 2000, c: float = 0.25) -> CheckResult:
    p = int(round(c * n))

    def body():
        overlaps = []
        for t in range(TRIALS):
            x, frame = sample_spiked_dataset(n, p, (16.0,), 1.0, derive_seed(seed, 3, t))
            top = symmetric_eig(covariance(x, center=False)).eigenvectors[:, 0]
            overlaps.append(abs(float(top @ frame[:, 0])))
        margin = min(overlaps) - 0.9
        return margin > 0, margin, {"min_overlap": min(overlaps)}

    return _timed(3, "top eigenvector alignment", body)


def check_semicircle_moments(seed: int = 0, p: int = 2000) -> CheckResult:
    def body():
        worst, detail = -math.inf, {}
        for i, sigma in enumerate((1.0, 2.0)):
            m = sample_wigner(p, sigma, derive_seed(seed, 4, i)) / math.sqrt(p)
            m2 = m @ m
            empirical = {2: np.trace(m2) / p, 4: np.sum(m2 * m2) / p}
            for k, value in empirical.items():
                exact = semicircle_moment(k, sigma)
                err = abs(value - exact) / exact
                worst = max(worst, err)
                detail[f"sigma={sigma} k={k}"] = {"empirical": float(value), "quadrature": exact, "rel_err": err}
        return worst < 0.05, 0.05 - worst, detail

    return _timed(4, "semicircle moments", body)


def _candidate_losses(cov: np.ndarray, r: int, fit: RmtFit, count: int, rng: np.random.Generator) -> np.ndarray:
    """Losses of random low-rank-plus-isotropic models with non-negative parameters."""
    p = cov.shape[0]
    top = float(np.linalg.eigvalsh(cov)[-1])
    half = count // 2
    frames = np.linalg.qr(rng.standard_normal((count, p, r)))[0]
    # the second half perturbs the fitted model to probe its neighbourhood
    frames[half:] = np.linalg.qr(fit.basis + 0.05 * rng.standard_normal((count - half, p, r)))[0]
    lam = rng.uniform(0.0, top, size=(count, r))
    lam[half:] = np.abs(fit.signal_eigs * (1 + 0.05 * rng.standard_normal((count - half, r))))
    s2 = rng.uniform(0.0, top, size=count)
    s2[half:] = np.abs(fit.sigma2 * (1 + 0.05 * rng.standard_normal(count - half)))
    models = np.einsum("npr,nr,nqr->npq", frames, lam, frames) + s2[:, None, None] * np.eye(p)
    return np.sum((cov - models) ** 2, axis=(1, 2))


def check_rmt_minimizer(seed: int = 0, p: int = 4, count: int = 10_000) -> CheckResult:
    def body():
        rng = np.random.default_rng(derive_seed(seed, 5))
        gaps, residuals = [], []
        for _ in range(50):
            a = rng.standard_normal((p, p + 2))
            cov = a @ a.T / (p + 2)
            r = int(rng.integers(1, p))
            fit = fit_rmt_decomposition(cov, r)
            losses = _candidate_losses(cov, r, fit, count, rng)
            gaps.append(float(losses.min() - fit.loss))
        for _ in range(50):
            r = int(rng.integers(1, p))
            u = random_orthonormal_frame(p, r, rng)
            lam = rng.uniform(0.5, 5.0, size=r)
            s2 = float(rng.uniform(0.1, 2.0))
            cov = (u * lam) @ u.T + s2 * np.eye(p)
            fit = fit_rmt_decomposition(cov, r)
            residuals.append(math.sqrt(rmt_loss(cov, fit)))
        margin = min(min(gaps), 1e-10 - max(residuals))
        ok = min(gaps) >= 0 and max(residuals) < 1e-10
        return ok, margin, {"min_oracle_gap": min(gaps), "max_planted_residual": max(residuals)}

    return _timed(5, "low-rank-plus-isotropic minimizer", body)


def check_projector_algebra(seed: int = 0) -> CheckResult:
    def body():
        rng = np.random.default_rng(derive_seed(seed, 6))
        worst = {"idempotency": 0.0, "symmetry": 0.0, "trace": 0.0}
        contraction_violations = 0
        for i in range(100):
            p = int(rng.integers(2, 40))
            k = int(rng.integers(1, p + 1))
            if i % 2 == 0:
                a = rng.standard_normal((p, p))
                decomp = symmetric_eig(a + a.T)
                proj = build_projector(decomp, rng.choice(p, size=k, replace=False))
            else:
                proj = projector_from_vectors(random_orthonormal_frame(p, k, rng))
            pm = proj.matrix
            worst["idempotency"] = max(worst["idempotency"], float(np.max(np.abs(pm @ pm - pm))))
            worst["symmetry"] = max(worst["symmetry"], float(np.max(np.abs(pm - pm.T))))
            worst["trace"] = max(worst["trace"], abs(float(np.trace(pm)) - k))
            for e in rng.standard_normal((100, p)):
                contraction_violations += np.linalg.norm(project(e, proj)) > np.linalg.norm(e)
        margin = min(1e-8 - worst["idempotency"], 1e-10 - worst["symmetry"], 1e-8 - worst["trace"])
        ok = margin > 0 and contraction_violations == 0
        return ok, margin, {**worst, "contraction_violations": int(contraction_violations)}

    return _timed(6, "projector algebra", body)


# ---------------------------------------------------------------------------
# Calibration and filtering checks
# ---------------------------------------------------------------------------


def check_rbns_separation(seed: int = 0) -> CheckResult:
    def body():
        wins, slowest, gaps = 0, 0.0, []
        for t in range(TRIALS):
            data = planted_inputs(derive_seed(seed, 7, t))
            start = time.perf_counter()
            calib = calibrate(data.inputs, config=CalibrationConfig(seed=derive_seed(seed, 7, t)))
            slowest = max(slowest, time.perf_counter() - start)
            overlaps = [abs(float(d.vector @ data.signal[:, 0])) for d in calib.directions]
            causal = int(np.argmax(overlaps))
            others = [d.rho for i, d in enumerate(calib.directions) if i != causal]
            gap = min(others) - calib.directions[causal].rho if others else -math.inf
            gaps.append(gap)
            wins += gap > 0
        ok = wins >= 18 and slowest < 300
        return ok, (wins - 18) / TRIALS, {"wins": int(wins), "trials": TRIALS, "slowest_seconds": slowest, "rho_gaps": gaps}

    return _timed(7, "RbNS separates causal from spurious", body)


def check_threshold_semantics(seed: int = 0) -> CheckResult:
    def body():
        grid = np.linspace(0.05, 1.0, 20)
        exact_gamma_one, nested, monotone = True, True, True
        for t in range(10):
            data = planted_inputs(derive_seed(seed, 8, t))
            full = calibrate(data.inputs, gamma=1.0, config=CalibrationConfig(seed=derive_seed(seed, 8, t)))
            all_idx = [d.index for d in full.directions]
            exact_gamma_one &= full.causal_indices == all_idx
            exact_gamma_one &= full.tau_star == min(d.eigenvalue for d in full.directions)
            prev_set, prev_tau = None, math.inf
            for g in grid:
                res = rethreshold(full, float(g))
                current = set(res.causal_indices)
                if prev_set is not None:
                    nested &= prev_set <= current
                    monotone &= res.tau_star <= prev_tau
                prev_set, prev_tau = current, res.tau_star
        ok = exact_gamma_one and nested and monotone
        return ok, 1.0 if ok else -1.0, {"gamma_one_exact": exact_gamma_one, "nested": nested, "monotone": monotone}

    return _timed(8, "coverage threshold semantics", body)


FILTER_FIXTURE = {"rows": 256, "spikes": (16.0, 12.0), "spurious": (7.0, 6.0), "prevalence": 0.4}


def check_end_to_end_filter(seed: int = 0, datasets: int = 5, probes: int = 3) -> CheckResult:
    def body():
        worst_off, worst_sig, worst_repeat = 0.0, 1.0, 0.0
        for t in range(datasets):
            data = planted_inputs(derive_seed(seed, 9, t), **FILTER_FIXTURE)
            calib = calibrate(data.inputs, config=CalibrationConfig(seed=derive_seed(seed, 9, t)))
            frame = data.signal
            proj = frame @ frame.T
            for k in range(probes):
                x = clean_input(derive_seed(seed, 9, t, k), frame, FILTER_FIXTURE["spikes"], FILTER_FIXTURE["rows"])
                out, _ = filter_input(x, calib)
                xc, oc = x - x.mean(axis=0), out - out.mean(axis=0)
                signal_kept = np.sum((oc @ proj) ** 2) / np.sum((xc @ proj) ** 2)
                off_kept = np.sum((oc - oc @ proj) ** 2) / np.sum((xc - xc @ proj) ** 2)
                again, _ = filter_input(out, calib)
                repeat = np.linalg.norm(again - out) / np.linalg.norm(out)
                worst_off = max(worst_off, float(off_kept))
                worst_sig = min(worst_sig, float(signal_kept))
                worst_repeat = max(worst_repeat, float(repeat))
        margin = min(0.2 - worst_off, worst_sig - 0.9, 1e-6 - worst_repeat)
        return margin > 0, margin, {
            "max_off_signal_energy_kept": worst_off,
            "min_signal_energy_kept": worst_sig,
            "max_double_filter_change": worst_repeat,
        }

    return _timed(9, "end-to-end filtering", body)


# ---------------------------------------------------------------------------
# Metric and reproducibility checks
# ---------------------------------------------------------------------------


def check_information_identities(seed: int = 0) -> CheckResult:
    def body():
        rng = np.random.default_rng(derive_seed(seed, 10))
        worst_identity, min_mi = 0.0, math.inf
        for _ in range(1000):
            shape = tuple(rng.integers(1, 6, size=2))
            table = rng.random(shape) * (rng.random(shape) > 0.2)
            if table.sum() == 0:
                table[0, 0] = 1.0
            table = metrics.JointTable(table / table.sum())
            mi = metrics.mutual_information(table)
            gap = abs(mi - (metrics.entropy(table.marginal_x) - metrics.conditional_entropy(table)))
            worst_identity = max(worst_identity, gap)
            min_mi = min(min_mi, mi)
        uniform = metrics.entropy(np.full(4, 0.25))
        kl = float(diag_gaussian_kl(0.0, 1.0, 1.0, 1.0))
        hand = max(abs(uniform - 2.0), abs(kl - 0.5))
        margin = min(1e-12 - worst_identity, min_mi + 1e-12, 1e-9 - hand)
        return margin > 0, margin, {"max_identity_gap": worst_identity, "min_mi": min_mi, "hand_case_error": hand}

    return _timed(10, "information identities", body)


def check_attack_success_rate(seed: int = 0) -> CheckResult:
    def body():
        exact = metrics.attack_success_rate([1, 0, 0, 1]) == 0.5
        rng = np.random.default_rng(derive_seed(seed, 11))
        invariant = True
        for _ in range(200):
            ind = rng.integers(0, 2, size=int(rng.integers(1, 200)))
            invariant &= metrics.attack_success_rate(ind) == metrics.attack_success_rate(rng.permutation(ind))
        ok = exact and invariant
        return ok, 1.0 if ok else -1.0, {"half_exact": exact, "permutation_invariant": invariant}

    return _timed(11, "attack success rate", body)


def check_reproducibility(seed: int = 0) -> CheckResult:
    from .cli import main
    from .fileio import read_csv_matrix, read_matrix, write_csv_matrix, write_matrix

    def body():
        with tempfile.TemporaryDirectory() as tmp:
            d = Path(tmp)
            data = planted_inputs(derive_seed(seed, 12), n_inputs=40)
            write_matrix(d / "data.esmx", np.vstack(data.inputs))
            (d / "cfg.json").write_text(f'{{"seed": {seed}, "rows_per_input": 256, "epochs": 50}}')
            codes = []
            quiet = contextlib.redirect_stdout(io.StringIO())
            with quiet, contextlib.redirect_stderr(io.StringIO()):
                for i in (1, 2):
                    calib_args = ["--data", str(d / "data.esmx"), "--config", str(d / "cfg.json")]
                    codes.append(main(["calibrate", *calib_args, "--out", str(d / f"cal{i}.json")]))
                    sim_args = ["--n", "400", "--p", "100", "--seed", str(seed)]
                    codes.append(main(["simulate", "mp", *sim_args, "--out", str(d / f"sim{i}.json")]))
            same_cal = (d / "cal1.json").read_bytes() == (d / "cal2.json").read_bytes()
            same_sim = (d / "sim1.json").read_bytes() == (d / "sim2.json").read_bytes()
            rng = np.random.default_rng(derive_seed(seed, 12, 1))
            m = rng.standard_normal((37, 11)) * 10.0 ** rng.integers(-300, 300, size=(37, 11))
            write_matrix(d / "m.esmx", m)
            back = read_matrix(d / "m.esmx")
            bit_exact = back.tobytes() == m.astype("<f8").tobytes()
            write_csv_matrix(d / "m.csv", m)
            csv_back = read_csv_matrix(d / "m.csv")
            csv_agree = bool(np.all(np.abs(csv_back - back) <= 1e-15 * np.abs(back)))
        ok = codes == [0, 0, 0, 0] and same_cal and same_sim and bit_exact and csv_agree
        return ok, 1.0 if ok else -1.0, {
            "exit_codes": codes,
            "calibration_identical": same_cal,
            "simulation_identical": same_sim,
            "matrix_bit_exact": bit_exact,
            "csv_agrees": csv_agree,
        }

    return _timed(12, "reproducible artifacts", body)


SUITES: dict[str, tuple[Callable[..., CheckResult], ...]] = {
    "rmt": (
        check_mp_edges,
        check_spike_location,
        check_eigenvector_alignment,
        check_semicircle_moments,
        check_rmt_minimizer,
        check_projector_algebra,
    ),
    "rbns": (check_rbns_separation, check_threshold_semantics, check_end_to_end_filter),
}
SUITES["all"] = SUITES["rmt"] + SUITES["rbns"] + (
    check_information_identities,
    check_attack_success_rate,
    check_reproducibility,
)


def run_suite(name: str, seed: int = 0, on_result: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    if name not in SUITES:
        raise KeyError(name)
    results = []
    for check in SUITES[name]:
        res = check(seed=seed)
        results.append(res)
        if on_result:
            on_result(res)
    return results
