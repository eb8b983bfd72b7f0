import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handball.exceptions import SingularScalingError
from handball.quantization import (aqnm_distortion_ratio, aqnm_model, bussgang_check,
                                   bussgang_model, distortion_factor, ideal_model,
                                   quantization_model, quantize)


def random_b(rng, n_rf=6, n_users=3):
    return (rng.standard_normal((n_rf, n_users))
            + 1j * rng.standard_normal((n_rf, n_users))) / math.sqrt(2)


seeds = st.integers(0, 2 ** 32 - 1)


def assert_hermitian_psd(S, tol=1e-10):
    np.testing.assert_allclose(S, S.conj().T, atol=1e-12)
    assert np.linalg.eigvalsh(S).min() >= -tol


# --- distortion factor ----------------------------------------------------

def test_distortion_factor_one_bit():
    assert distortion_factor(1) == pytest.approx(math.pi * math.sqrt(3) * 2 ** -3, rel=1e-15)
    assert distortion_factor(1) == pytest.approx(0.68017, abs=5e-6)


def test_distortion_factor_four_bits():
    assert distortion_factor(4) == pytest.approx(math.pi * math.sqrt(3) / 2 / 256, rel=1e-15)
    assert distortion_factor(4) == pytest.approx(0.010628, abs=5e-7)


def test_distortion_factor_vanishes_at_infinite_resolution():
    assert distortion_factor(math.inf) == 0.0
    assert distortion_factor(30) < 1e-17
    np.testing.assert_array_equal(ideal_model(4).gain, np.eye(4))


def test_distortion_factor_rejects_zero_bits():
    with pytest.raises(ValueError):
        distortion_factor(0)


# --- AQNM -----------------------------------------------------------------

def test_aqnm_unit_rows():
    B = np.eye(3, dtype=complex)
    m = aqnm_model(B, 2, p_s=2.0, n_users=3)
    np.testing.assert_allclose(m.distortion_cov, 2.0 * distortion_factor(2) / 3 * np.eye(3))
    np.testing.assert_allclose(m.gain, math.sqrt(1 - distortion_factor(2)) * np.eye(3))


def test_aqnm_zero_precoder():
    m = aqnm_model(np.zeros((6, 3)), 3, 1.0, 3)
    assert not np.any(m.distortion_cov)
    np.testing.assert_allclose(m.gain, math.sqrt(1 - distortion_factor(3)) * np.eye(6))


def test_aqnm_trace_identity():
    B = random_b(np.random.default_rng(0))
    m = aqnm_model(B, 3, 1.0, 3)
    assert np.trace(m.distortion_cov).real == pytest.approx(
        distortion_factor(3) / 3 * np.linalg.norm(B) ** 2, rel=1e-12)


@given(seeds)
def test_aqnm_trace_decreases_with_bits(seed):
    B = random_b(np.random.default_rng(seed))
    traces = [np.trace(aqnm_model(B, b, 1.0, 3).distortion_cov).real for b in range(1, 9)]
    assert all(a > b for a, b in zip(traces, traces[1:]))


# --- Bussgang -------------------------------------------------------------

def test_bussgang_uncorrelated_rails():
    B = 0.7 * np.eye(3, dtype=complex)
    m = bussgang_model(B, 1.0, 3)
    np.testing.assert_allclose(m.output_cov, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(m.distortion_cov, (1 - 2 / math.pi) * np.eye(3), atol=1e-15)


def test_bussgang_fully_correlated_rails():
    B = np.array([[1.0], [1.0]], dtype=complex)
    m = bussgang_model(B, 1.0, 1)
    np.testing.assert_allclose(m.input_cov, np.ones((2, 2)))
    np.testing.assert_allclose(m.output_cov, np.ones((2, 2)), atol=1e-15)
    # identical rails share one distortion draw: rank one, not zero
    np.testing.assert_allclose(m.distortion_cov, (1 - 2 / math.pi) * np.ones((2, 2)), atol=1e-15)
    # Monte-Carlo oracle with the actual quantizer
    rng = np.random.default_rng(0)
    s = (rng.standard_normal(100_000) + 1j * rng.standard_normal(100_000)) / math.sqrt(2)
    x = B @ s[None, :]
    q = quantize(x, 1)
    d = q - m.gain @ x
    np.testing.assert_allclose(q @ q.conj().T / s.size, m.output_cov, atol=1e-2)
    np.testing.assert_allclose(d @ d.conj().T / s.size, m.distortion_cov, atol=1e-2)


@settings(max_examples=50)
@given(seeds, st.floats(0.01, 100.0))
def test_bussgang_structure(seed, scale):
    B = scale * random_b(np.random.default_rng(seed))
    m = bussgang_model(B, 1.0, 3)
    np.testing.assert_allclose(np.diag(m.output_cov), 1.0, atol=1e-15)
    assert_hermitian_psd(m.distortion_cov)
    assert m.bits == 1 and m.kind == "bussgang"
    diag = np.diag(m.gain)
    np.testing.assert_array_equal(m.gain, np.diag(diag))
    assert np.all(np.isreal(diag)) and np.all(diag.real > 0)
    D = np.diag(np.random.default_rng(seed).standard_normal(6))
    np.testing.assert_allclose(m.gain @ D, D @ m.gain)


@given(seeds)
def test_bussgang_is_scale_invariant(seed):
    B = random_b(np.random.default_rng(seed))
    a, b = bussgang_model(B, 1.0, 3), bussgang_model(5.0 * B, 1.0, 3)
    np.testing.assert_allclose(a.distortion_cov, b.distortion_cov, atol=1e-12)
    np.testing.assert_allclose(a.gain @ B, b.gain @ (5.0 * B), atol=1e-12)


def test_bussgang_zero_row_is_an_error():
    B = random_b(np.random.default_rng(1))
    B[2] = 0
    with pytest.raises(SingularScalingError):
        bussgang_model(B, 1.0, 3)


def test_bussgang_zero_rows_allowed_at_endpoints():
    B = random_b(np.random.default_rng(1))
    B[3:] = 0
    m = bussgang_model(B, 1.0, 3, allow_zero_rows=True)
    assert not np.any(m.gain[3:, :]) and not np.any(m.distortion_cov[3:, :])
    assert not np.any(m.distortion_cov[:, 3:])
    full = bussgang_model(B[:3], 1.0, 3)
    np.testing.assert_allclose(m.distortion_cov[:3, :3], full.distortion_cov)


@pytest.mark.parametrize("bits", [1, 2, 3, 4, math.inf])
def test_quantization_model_dispatch(bits):
    B = random_b(np.random.default_rng(2))
    m = quantization_model(B, bits, 1.0, 3)
    assert m.kind == {1: "bussgang", math.inf: "ideal"}.get(bits, "aqnm")
    assert_hermitian_psd(m.distortion_cov)


def test_rescaled_model_power():
    B = random_b(np.random.default_rng(3))
    m = bussgang_model(B, 1.0, 3)
    r = m.rescaled(0.5)
    assert r.transmit_power(B, 1.0, 3) == pytest.approx(0.25 * m.transmit_power(B, 1.0, 3))
    assert r.output_scale == 0.5


# --- true quantizer -------------------------------------------------------

def test_one_bit_sign():
    np.testing.assert_allclose(quantize(np.array([3 - 4j]), 1), [(1 - 1j) / math.sqrt(2)])


def test_one_bit_zero_maps_positive():
    np.testing.assert_allclose(quantize(np.array([0j]), 1), [(1 + 1j) / math.sqrt(2)])


@given(st.lists(st.complex_numbers(max_magnitude=1e6, allow_nan=False), min_size=1, max_size=8))
def test_infinite_resolution_is_identity(values):
    x = np.array(values)
    np.testing.assert_array_equal(quantize(x, math.inf), x)


def test_one_bit_bussgang_gain():
    rng = np.random.default_rng(4)
    x = (rng.standard_normal(200_000) + 1j * rng.standard_normal(200_000)) / math.sqrt(2)
    corr = np.mean(quantize(x, 1) * x.conj())
    assert abs(corr - math.sqrt(2 / math.pi) * np.mean(np.abs(x) ** 2)) < 1e-2


@pytest.mark.parametrize("bits", [2, 3, 4])
def test_midrise_quantizer_levels_and_power(bits):
    rng = np.random.default_rng(bits)
    x = 2.0 * (rng.standard_normal(200_000) + 1j * rng.standard_normal(200_000)) / math.sqrt(2)
    q = quantize(x, bits, std=2.0)
    assert np.unique(q.real).size == 2 ** bits
    assert np.mean(np.abs(q) ** 2) == pytest.approx(4.0, rel=2e-2)


def test_midrise_zero_input():
    np.testing.assert_array_equal(quantize(np.zeros(4, dtype=complex), 3), np.zeros(4))


@pytest.mark.parametrize("bits", [2, 3, 4])
def test_aqnm_energy_band(bits):
    ratio = aqnm_distortion_ratio(bits, 200_000, np.random.default_rng(bits))
    assert 0.5 <= ratio <= 2.0


def test_bussgang_monte_carlo_consistency():
    rng = np.random.default_rng(9)
    for _ in range(3):
        chk = bussgang_check(random_b(rng), 1.0, 3, 100_000, rng)
        assert chk.passed(3.0), chk
