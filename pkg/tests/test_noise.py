import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special, stats

from stablemkv.noise import (
    Atomic, DegenerateMeasureError, Isotropic, StableParams, characteristic_exponent, estimate_kappa,
    radial_constant, sample_decomposed, sample_increment, spectral_from_dict,
)

from conftest import cauchy_axis, ecf_check, half_axis, iso2


def _radial_quadrature(alpha):
    head = integrate.quad(lambda u: (1 - math.cos(u)) * u ** (-1 - alpha), 0, 1, limit=200)[0]
    tail = integrate.quad(lambda u: u ** (-1 - alpha), 1, np.inf)[0]
    osc = integrate.quad(lambda u: u ** (-1 - alpha), 1, np.inf, weight="cos", wvar=1.0)[0]
    return head + tail - osc


@pytest.mark.parametrize("alpha", [0.5, 0.8, 1.0, 1.3, 1.5])
def test_radial_constant_matches_quadrature(alpha):
    assert radial_constant(alpha) == pytest.approx(_radial_quadrature(alpha), rel=1e-7)


@pytest.mark.parametrize("alpha", [0.3, 0.9, 1.1, 1.7, 1.95])
def test_radial_constant_gamma_identity(alpha):
    assert radial_constant(alpha) == pytest.approx(-special.gamma(-alpha) * math.cos(math.pi * alpha / 2),
                                                   rel=1e-12)


def test_exponent_at_zero():
    assert characteristic_exponent(StableParams(1.3, 1), half_axis(), np.zeros((1, 1)))[0] == 0.0


def test_exponent_half_weight_cauchy_value():
    # |2| * pi/2 * (1/2 + 1/2)
    v = characteristic_exponent(StableParams(1.0, 1), half_axis(), np.array([[2.0]]))[0]
    assert v == pytest.approx(-math.pi, abs=1e-12)


def test_exponent_unit_mass_atoms_give_scale_pi():
    v = characteristic_exponent(StableParams(1.0, 1), cauchy_axis(), np.array([[2.0]]))[0]
    assert v == pytest.approx(-2 * math.pi, abs=1e-12)


def test_isotropic_exponent_direction_free(rng):
    p = StableParams(1.5, 2)
    th = rng.uniform(0, 2 * np.pi, 20)
    z = np.c_[np.cos(th), np.sin(th)] * 1.7
    ratio = characteristic_exponent(p, iso2(), z) / 1.7 ** 1.5
    assert np.ptp(ratio) < 1e-6


@settings(max_examples=30, deadline=None)
@given(alpha=st.floats(0.2, 1.95), lam=st.floats(0.1, 10.0), z=st.floats(-5, 5))
def test_exponent_homogeneous(alpha, lam, z):
    p = StableParams(alpha, 1)
    a = characteristic_exponent(p, half_axis(), np.array([[lam * z]]))[0]
    b = lam ** alpha * characteristic_exponent(p, half_axis(), np.array([[z]]))[0]
    assert a == pytest.approx(b, rel=1e-10, abs=1e-12)


def test_zero_step_is_zero(rng):
    assert np.all(sample_increment(StableParams(1.5, 2), iso2(), 0.0, rng, size=7) == 0)


def test_cauchy_ks(rng):
    z = sample_increment(StableParams(1.0, 1), cauchy_axis(), 1.0, rng, size=100_000)[:, 0]
    assert stats.kstest(z, stats.cauchy(scale=math.pi).cdf).pvalue > 0.01


def test_isotropic_ecf(rng):
    p = StableParams(1.5, 2)
    z = sample_increment(p, iso2(), 0.5, rng, size=100_000)
    probes = rng.normal(size=(10, 2))
    assert all(ecf_check(z, probes, characteristic_exponent(p, iso2(), probes), 0.5))


@pytest.mark.parametrize("alpha", [0.7, 1.5])
def test_symmetry_of_increments(alpha, rng):
    z = sample_increment(StableParams(alpha, 1), half_axis(), 1.0, rng, size=40_000)[:, 0]
    assert stats.ks_2samp(z[:20_000], -z[20_000:]).pvalue > 1e-3


def test_time_scaling(rng):
    p = StableParams(1.2, 1)
    a = sample_increment(p, half_axis(), 0.3, rng, size=30_000)[:, 0]
    b = 0.3 ** (1 / 1.2) * sample_increment(p, half_axis(), 1.0, rng, size=30_000)[:, 0]
    assert stats.ks_2samp(a, b).pvalue > 1e-3


def test_decomposition_infinite_threshold_has_no_large_jumps(rng):
    dec = sample_decomposed(StableParams(1.5, 1), half_axis(), 0.1, rng, size=1000, threshold=1e12)
    assert np.all(dec.large == 0)


def test_decomposition_matches_full_increment(rng):
    p = StableParams(1.5, 1)
    dec = sample_decomposed(p, half_axis(), 0.25, rng, size=100_000)
    full = sample_increment(p, half_axis(), 0.25, rng, size=100_000)
    assert stats.ks_2samp(dec.total[:, 0], full[:, 0]).statistic < 0.02


def test_kappa_one_dimensional_exact():
    assert estimate_kappa(half_axis(), StableParams(1.3, 1)) == pytest.approx((1.0, 1.0))


def test_kappa_isotropic_ratio_close_to_one():
    ratios = [np.divide(*estimate_kappa(iso2(), StableParams(1.5, 2), n)[::-1]) for n in (64, 256, 1024, 4096)]
    assert np.all(np.diff(ratios) < 0)
    assert ratios[-1] < 1.002


def test_degenerate_measure_rejected():
    om = Atomic(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([0.5, 0.5]))
    with pytest.raises(DegenerateMeasureError):
        estimate_kappa(om, StableParams(1.5, 2))


def test_invalid_alpha():
    with pytest.raises(ValueError):
        StableParams(2.5, 1)


def test_spectral_from_dict_roundtrip():
    om = spectral_from_dict(half_axis().to_dict())
    z = np.array([[0.3], [-2.0]])
    p = StableParams(1.1, 1)
    assert np.array_equal(characteristic_exponent(p, om, z), characteristic_exponent(p, half_axis(), z))
    assert isinstance(spectral_from_dict({"kind": "isotropic", "dim": 2}), Isotropic)
