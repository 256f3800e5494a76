from __future__ import annotations

import json

import numpy as np
import pytest

from eigenshield.defense import (
    PIPELINE_VERSION,
    CalibrationConfig,
    calibrate,
    calibration_from_dict,
    filter_input,
    load_calibration,
    rethreshold,
    save_calibration,
)
from eigenshield.errors import (
    CalibrationError,
    CorruptFileError,
    DegenerateInputError,
    DimensionMismatchError,
    DomainError,
    VersionMismatchError,
)
from eigenshield.fileio import dumps
from eigenshield.spectral import SampleMatrix, patch_matrix, reassemble
from eigenshield.synthetic import clean_input, planted_inputs


def noise_input(seed: int, rows: int = 256, p: int = 64) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((rows, p))


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


def test_three_spike_threshold_sits_between_bulk_and_planted_spikes():
    hits = 0
    for seed in range(20):
        data = planted_inputs(seed, spikes=(16.0, 9.0, 4.0), spurious=())
        calib = calibrate(data.inputs, config=CalibrationConfig(seed=seed))
        overlaps = [np.linalg.norm(data.signal.T @ d.vector) for d in calib.directions]
        planted = [d.eigenvalue for d, o in zip(calib.directions, overlaps) if o > 0.5]
        hits += calib.mp_model.lambda_plus < calib.tau_star <= min(planted)
    assert hits >= 18


def test_full_coverage_admits_every_outlier(planted_data):
    calib = calibrate(planted_data.inputs, gamma=1.0, config=CalibrationConfig(seed=0))
    assert calib.causal_indices == [d.index for d in calib.directions]
    assert calib.tau_star == min(d.eigenvalue for d in calib.directions)


def test_calibration_is_byte_identical_across_runs():
    data = planted_inputs(3, n_inputs=40)
    cfg = CalibrationConfig(seed=3, epochs=40)
    assert dumps(calibrate(data.inputs, config=cfg).to_dict()) == dumps(calibrate(data.inputs, config=cfg).to_dict())


def test_calibration_result_invariants(planted_calibration):
    calib = planted_calibration
    assert calib.tau_star > calib.mp_model.lambda_plus
    for d in calib.directions:
        assert np.linalg.norm(d.vector) == pytest.approx(1.0, abs=1e-12)
        assert d.alpha >= 1.0
        assert d.performances.shape == (10,)


def test_calibration_rejects_bad_coverage(planted_data):
    for gamma in (0.0, 1.5):
        with pytest.raises(DomainError):
            calibrate(planted_data.inputs, gamma=gamma)


def test_calibration_needs_twenty_inputs(planted_data):
    with pytest.raises(DegenerateInputError):
        calibrate(planted_data.inputs[:19])


def test_pure_noise_calibration_fails_with_spectrum():
    inputs = [noise_input(s) for s in range(30)]
    with pytest.raises(CalibrationError) as info:
        calibrate(inputs, config=CalibrationConfig(epochs=10))
    assert info.value.spectrum.shape == (64,)


def test_mixed_dimensions_rejected(planted_data):
    inputs = list(planted_data.inputs[:25]) + [noise_input(0, p=32)]
    with pytest.raises(DimensionMismatchError):
        calibrate(inputs)


def test_coverage_is_monotone(planted_calibration):
    previous_set, previous_tau = set(), np.inf
    for gamma in np.linspace(0.05, 1.0, 20):
        calib = rethreshold(planted_calibration, gamma)
        current = set(calib.causal_indices)
        assert previous_set <= current
        assert calib.tau_star <= previous_tau
        previous_set, previous_tau = current, calib.tau_star


def test_rethreshold_matches_fresh_calibration(planted_data, planted_calibration):
    fresh = calibrate(planted_data.inputs, gamma=0.4, config=CalibrationConfig(seed=0))
    assert dumps(rethreshold(planted_calibration, 0.4).to_dict()) == dumps(fresh.to_dict())


# ---------------------------------------------------------------------------
# filtering
# ---------------------------------------------------------------------------


def test_pure_noise_input_passes_through(planted_calibration):
    x = noise_input(11)
    out, report = filter_input(x, planted_calibration)
    assert report.passthrough
    assert report.retained_rank == 0
    np.testing.assert_array_equal(out, x)


def test_single_spike_input_keeps_rank_one(planted_data, planted_calibration):
    x = clean_input(5, planted_data.signal[:, :1], (16.0,))
    out, report = filter_input(x, planted_calibration)
    assert report.retained_rank == 1
    assert not report.passthrough
    s = np.linalg.svd(out - out.mean(axis=0), compute_uv=False)
    assert s[1] < 1e-10 * s[0]


def test_double_filter_changes_little(planted_data, planted_calibration):
    x = clean_input(6, planted_data.signal, (16.0, 12.0))
    once, _ = filter_input(x, planted_calibration)
    twice, _ = filter_input(once, planted_calibration)
    assert np.linalg.norm(twice - once) / np.linalg.norm(once) < 1e-6


@pytest.mark.parametrize("mode", ["per_input", "global"])
def test_filter_is_contractive_and_reports_energy(planted_data, planted_calibration, mode):
    for seed in range(5):
        x = planted_data.inputs[seed]
        out, report = filter_input(x, planted_calibration, mode=mode)
        xc, oc = x - x.mean(axis=0), out - out.mean(axis=0)
        assert np.all(np.sum(oc**2, axis=1) <= np.sum(xc**2, axis=1))
        assert 0.0 <= report.energy_retained <= 1.0
        assert report.energy_retained == pytest.approx(np.sum(oc**2) / np.sum(xc**2), abs=1e-9)
        assert report.passthrough == (report.retained_rank == 0)


def test_global_mode_uses_stored_causal_directions(planted_data, planted_calibration):
    out, report = filter_input(planted_data.inputs[0], planted_calibration, mode="global")
    assert report.retained_rank == len(planted_calibration.causal_directions)
    basis = np.column_stack([d.vector for d in planted_calibration.causal_directions])
    oc = out - out.mean(axis=0)
    np.testing.assert_allclose(oc - oc @ basis @ basis.T, 0.0, atol=1e-10)


def test_filter_rejects_dimension_mismatch(planted_calibration):
    with pytest.raises(DimensionMismatchError):
        filter_input(noise_input(0, p=32), planted_calibration)


def test_filter_rejects_unknown_mode(planted_calibration):
    with pytest.raises(DomainError):
        filter_input(noise_input(0), planted_calibration, mode="sideways")


def test_filter_reduces_off_signal_energy(planted_data, planted_calibration):
    proj = planted_data.signal @ planted_data.signal.T
    x = clean_input(7, planted_data.signal, (16.0, 12.0))
    out, _ = filter_input(x, planted_calibration)
    xc, oc = x - x.mean(axis=0), out - out.mean(axis=0)
    assert np.sum((oc - oc @ proj) ** 2) <= 0.2 * np.sum((xc - xc @ proj) ** 2)
    assert np.sum((oc @ proj) ** 2) >= 0.9 * np.sum((xc @ proj) ** 2)


def test_filter_is_deterministic(planted_data, planted_calibration):
    a, ra = filter_input(planted_data.inputs[1], planted_calibration)
    b, rb = filter_input(planted_data.inputs[1], planted_calibration)
    np.testing.assert_array_equal(a, b)
    assert ra == rb


def test_image_inputs_round_trip_through_patches():
    rng = np.random.default_rng(0)
    pattern = rng.standard_normal(16)
    pattern /= np.linalg.norm(pattern)
    images = []
    template = patch_matrix(np.zeros((32, 32, 1)), 4)
    for _ in range(40):
        rows = rng.standard_normal((64, 16)) + rng.normal(scale=4.0, size=(64, 1)) * pattern
        images.append(reassemble(SampleMatrix(rows, provenance="image_patches", patch_geometry=template.patch_geometry)))
    calib = calibrate(images, config=CalibrationConfig(seed=0, patch_side=4, epochs=40))
    assert calib.feature_config["patch_side"] == 4
    out, report = filter_input(images[0], calib)
    assert out.shape == images[0].shape
    assert report.retained_rank >= 1
    sample_out = filter_input(patch_matrix(images[0], 4), calib)[0]
    np.testing.assert_allclose(patch_matrix(out, 4).data, sample_out.data, atol=1e-12)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def test_save_load_round_trip(tmp_path, planted_calibration):
    path = tmp_path / "calib.json"
    save_calibration(planted_calibration, path)
    loaded = load_calibration(path)
    assert dumps(loaded.to_dict()) == dumps(planted_calibration.to_dict())
    assert loaded.tau_star == planted_calibration.tau_star
    for a, b in zip(loaded.directions, planted_calibration.directions):
        np.testing.assert_array_equal(a.vector, b.vector)


def test_truncated_file_is_corrupt(tmp_path, planted_calibration):
    path = tmp_path / "calib.json"
    save_calibration(planted_calibration, path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(CorruptFileError):
        load_calibration(path)


def test_version_bump_is_rejected(planted_calibration):
    doc = planted_calibration.to_dict()
    doc["version"] = PIPELINE_VERSION + 1
    with pytest.raises(VersionMismatchError):
        calibration_from_dict(doc)


def test_inconsistent_direction_dimensions_rejected(planted_calibration):
    doc = json.loads(dumps(planted_calibration.to_dict()))
    doc["directions"][1]["vector"] = doc["directions"][1]["vector"][:-1]
    with pytest.raises(DimensionMismatchError):
        calibration_from_dict(doc)


def test_missing_field_is_corrupt(planted_calibration):
    doc = planted_calibration.to_dict()
    del doc["tau_star"]
    with pytest.raises(CorruptFileError):
        calibration_from_dict(doc)
