import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liveptycho.analysis import (
    ReconReport,
    central_region,
    e0_metric,
    evaluate,
    overlap_ratio,
    probe_diameter,
    psnr,
    psnr_amplitude,
    remove_phase_ramp,
)
from liveptycho.errors import InvalidInputError
from liveptycho.synth import smooth_texture

from conftest import crandn


def smooth_object(seed, size=48):
    rng = np.random.default_rng(seed)
    amp = 0.6 + 0.4 * smooth_texture(size, rng)
    return amp * np.exp(1j * 1.5 * smooth_texture(size, rng))


def ramp(shape, uy, ux):
    H, W = shape
    y, x = np.arange(H)[:, None], np.arange(W)[None, :]
    return np.exp(2j * np.pi * (uy * y / H + ux * x / W))


def same_up_to_phase(a, b):
    c = np.vdot(a, b) / abs(np.vdot(a, b))
    return np.max(np.abs(a * c - b))


# -- phase ramps ---------------------------------------------------------------

def test_positive_real_input_is_unchanged():
    rng = np.random.default_rng(0)
    x = 1 + rng.uniform(0, 1, (20, 24))
    np.testing.assert_allclose(remove_phase_ramp(x), x, atol=1e-8)


def test_integer_ramp_is_removed():
    obj = smooth_object(1)
    out = remove_phase_ramp(obj * ramp(obj.shape, 3, 2))
    assert same_up_to_phase(out, remove_phase_ramp(obj)) <= 1e-6
    rel = remove_phase_ramp(obj * ramp(obj.shape, 3, 2), reference=obj)
    assert same_up_to_phase(rel, obj) <= 1e-6


@pytest.mark.parametrize("uy, ux", [(0.37, -1.8), (-4.25, 2.6), (0.0, 0.5)])
def test_fractional_ramp_relative_to_reference(uy, ux):
    obj = smooth_object(2)
    rel = remove_phase_ramp(2.5j * obj * ramp(obj.shape, uy, ux), reference=obj)
    assert same_up_to_phase(rel, 2.5 * obj) <= 1e-6


def test_ramp_removal_is_idempotent():
    obj = smooth_object(3) * ramp((48, 48), 1.3, -2.2)
    once = remove_phase_ramp(obj)
    np.testing.assert_allclose(remove_phase_ramp(once), once, atol=1e-8)


def test_ramp_removal_rejects_zero():
    with pytest.raises(InvalidInputError):
        remove_phase_ramp(np.zeros((4, 4)))


# -- E0 -----------------------------------------------------------------------

def test_e0_identical_is_zero():
    obj = smooth_object(4)
    assert e0_metric(obj, obj) <= 1e-20


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 100), st.floats(-np.pi, np.pi), st.integers(0, 100))
def test_e0_invariant_to_complex_scale(scale, phase, seed):
    obj = smooth_object(seed, 24)
    assert e0_metric(obj, scale * np.exp(1j * phase) * obj) <= 1e-12


def test_e0_invariant_to_linear_ramp():
    obj = smooth_object(5)
    assert e0_metric(obj, 0.3j * obj * ramp(obj.shape, 2.3, -1.1)) <= 1e-6
    est = obj + 0.2 * crandn(np.random.default_rng(1), 48, 48)
    base = e0_metric(obj, est)
    assert abs(e0_metric(obj, est * ramp(obj.shape, -3, 4)) - base) <= 1e-8


def test_e0_orthogonal_perturbation_closed_form():
    # est = O + delta with delta*conj(O) real and zero-mean: no ramp is fitted, and
    # the optimal scalar gives E0 = |delta|^2 / (|O|^2 + |delta|^2)
    rng = np.random.default_rng(6)
    obj = np.exp(2j * np.pi * rng.uniform(size=(32, 32)))
    r = rng.uniform(-0.5, 0.5, (32, 32))
    r -= r.mean()
    delta = r * obj
    a, d = np.sum(np.abs(obj) ** 2), np.sum(np.abs(delta) ** 2)
    assert e0_metric(obj, obj + delta) == pytest.approx(d / (a + d), rel=1e-10)


def test_e0_zero_truth_region_rejected():
    truth = np.zeros((10, 10), complex)
    truth[0, 0] = 1
    with pytest.raises(InvalidInputError):
        e0_metric(truth, np.ones((10, 10)), region=4)
    with pytest.raises(InvalidInputError):
        e0_metric(truth, np.ones((9, 10)))


def test_e0_zero_estimate_is_one():
    obj = smooth_object(7, 16)
    assert e0_metric(obj, np.zeros_like(obj)) == 1.0


def test_central_region_matches_loop_mask():
    for shape, n in [((512, 512), 300), ((256, 256), 150), ((11, 14), 5)]:
        sl = central_region(shape, n)
        mask = np.zeros(shape, bool)
        mask[sl] = True
        loop = np.zeros(shape, bool)
        y0, x0 = (shape[0] - n) // 2, (shape[1] - n) // 2
        for y in range(shape[0]):
            for x in range(shape[1]):
                loop[y, x] = y0 <= y < y0 + n and x0 <= x < x0 + n
        np.testing.assert_array_equal(mask, loop)
        assert mask.sum() == n * n
    with pytest.raises(InvalidInputError):
        central_region((10, 10), 11)


def test_central_e0_only_sees_region():
    obj = smooth_object(8)
    est = obj.copy()
    est[:5] = 0  # damage outside the centred 30x30 window
    assert e0_metric(obj, est, 30) <= 1e-20
    assert e0_metric(obj, est) > 0.01


# -- PSNR ------------------------------------------------------------------------

def test_psnr_identical_is_inf():
    obj = smooth_object(9, 16)
    assert psnr_amplitude(obj, obj) == math.inf
    assert psnr(np.abs(obj), np.abs(obj)) == math.inf


def test_psnr_constant_offset_is_20db():
    amp = np.abs(smooth_object(10, 16))
    assert psnr(amp, amp + 0.1 * amp.max()) == pytest.approx(20.0, abs=1e-9)


def test_psnr_amplitude_direct_oracle():
    rng = np.random.default_rng(11)
    obj = smooth_object(11, 32)
    est = obj * (1 + 0.1 * rng.uniform(-1, 1, obj.shape))
    gamma = np.sum(np.abs(obj) ** 2 * (est / obj).real) / np.sum(np.abs(est) ** 2)
    mse = np.mean((np.abs(obj) - gamma * np.abs(est)) ** 2)
    expected = 10 * math.log10(np.abs(obj).max() ** 2 / mse)
    assert psnr_amplitude(obj, est) == pytest.approx(expected, abs=1e-9)


# -- overlap -------------------------------------------------------------------

def test_overlap_examples():
    assert overlap_ratio([(3, 3), (3, 3), (3, 3)], 10) == 1.0
    assert overlap_ratio([(0, 0), (0, 10)], 10) == 0.0
    assert overlap_ratio([(0, 0), (0, 5), (0, 10)], 10) == 0.5
    assert overlap_ratio([(0, 0), (0, 30)], 10) == 0.0
    with pytest.raises(InvalidInputError):
        overlap_ratio([(0, 0)], 10)
    with pytest.raises(InvalidInputError):
        overlap_ratio([(0, 0), (1, 1)], 0)


def test_probe_diameter_of_uniform_disk():
    yy, xx = np.indices((201, 201)) - 100
    disk = (np.hypot(yy, xx) <= 60).astype(float)
    assert probe_diameter(disk) == pytest.approx(2 * 60 * math.sqrt(0.9), rel=0.02)
    with pytest.raises(InvalidInputError):
        probe_diameter(np.zeros((4, 4)))


# -- reports -------------------------------------------------------------------

def test_report_json_round_trip():
    obj = smooth_object(12, 32)
    rep = evaluate(obj, obj, central=16, positions=[(0, 0), (2, 2)], probe=np.ones((8, 8)))
    assert rep.psnr_amp_full == math.inf and rep.e0_central <= 1e-20
    text = json.dumps(rep.to_json_dict())
    assert '"inf"' in text
    back = ReconReport.from_json_dict(json.loads(text))
    assert back == rep
    assert 0 <= rep.overlap_ratio <= 1
