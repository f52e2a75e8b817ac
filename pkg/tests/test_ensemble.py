import math

import numpy as np
import pytest
from scipy import integrate, stats

from ensemble import (
    FWHM_TO_SIGMA,
    CombSpec,
    IonPopulation,
    SpinDecayModel,
    ToothShape,
    coherence_trace,
    collective_coherence,
    comb_cdf,
    comb_density,
    derive_seeds,
    echo_amplitude,
    rephasing_efficiency_bound,
    sample_ions,
    spin_coherence_after_echo,
    spin_free_decay,
    spin_storage_factor,
    write_coherence_trace,
)
from ensemble.comb import weighted_phase_sum
from errors import ConfigurationError, DomainError


@pytest.fixture(scope="module")
def comb():
    return CombSpec(period_inv_delta=20.0, finesse=4.0, bandwidth=5.0)


@pytest.fixture(scope="module")
def ions(comb):
    return sample_ions(comb, 27.0, 10_000, seed=1)


def test_comb_spec_invariants():
    with pytest.raises(ConfigurationError, match="period_inv_delta"):
        CombSpec(period_inv_delta=0.0)
    with pytest.raises(ConfigurationError, match="finesse"):
        CombSpec(finesse=1.0)
    with pytest.raises(ConfigurationError, match="bandwidth"):
        CombSpec(period_inv_delta=20.0, bandwidth=0.04)
    with pytest.raises(ConfigurationError, match="effective_optical_depth"):
        CombSpec(effective_optical_depth=-0.1)
    with pytest.raises(ConfigurationError, match="tooth_shape"):
        CombSpec(tooth_shape="lorentzian")


def test_comb_spec_geometry(comb):
    assert comb.spacing == pytest.approx(0.05)
    assert comb.tooth_fwhm == pytest.approx(0.0125)
    assert comb.tooth_centers.size == 101
    assert comb.tooth_centers[0] == pytest.approx(-2.5)
    assert CombSpec(finesse=math.inf).tooth_fwhm == 0.0


def test_sample_ions_normalized_and_deterministic(comb, ions):
    again = sample_ions(comb, 27.0, 10_000, seed=1)
    assert len(ions) == 10_000
    assert np.sum(ions.weights**2) == pytest.approx(1.0, abs=1e-9)
    assert np.array_equal(ions.optical_detunings, again.optical_detunings)
    assert np.array_equal(ions.spin_detunings, again.spin_detunings)
    assert np.all(np.abs(ions.optical_detunings) <= comb.bandwidth / 2.0)
    with pytest.raises(ValueError):
        ions.optical_detunings[0] = 1.0


def test_sample_ions_errors(comb):
    with pytest.raises(DomainError):
        sample_ions(comb, 27.0, 0, seed=1)
    with pytest.raises(DomainError):
        sample_ions(comb, -1.0, 10, seed=1)


def test_population_rejects_bad_weights():
    with pytest.raises(ConfigurationError, match="weights"):
        IonPopulation([0.0, 0.1], [0.0, 0.0], [1.0, 1.0], seed=None)
    with pytest.raises(ConfigurationError, match="differ in length"):
        IonPopulation([0.0, 0.1], [0.0], [math.sqrt(0.5)] * 2, seed=None)


def test_sampled_detunings_follow_comb_density(comb, ions):
    result = stats.kstest(ions.optical_detunings, lambda x: comb_cdf(comb, x))
    critical = 1.63 / math.sqrt(len(ions))
    assert result.statistic < critical


def test_comb_density_integrates_to_one(comb):
    x = np.linspace(-2.6, 2.6, 20_001)
    density = comb_density(comb, x)
    assert integrate.trapezoid(density, x) == pytest.approx(1.0, abs=1e-3)
    assert comb_cdf(comb, -2.5) == pytest.approx(0.0, abs=1e-12)
    assert comb_cdf(comb, 2.5) == pytest.approx(1.0, abs=1e-12)


def test_square_comb_density_is_flat_inside_teeth():
    square = CombSpec(finesse=4.0, tooth_shape=ToothShape.SQUARE)
    assert comb_density(square, 0.0) > 0
    assert comb_density(square, 0.025) == 0.0
    with pytest.raises(DomainError):
        comb_density(CombSpec(finesse=math.inf), 0.0)


def test_collective_coherence_at_zero(ions):
    value = collective_coherence(ions, 0.0)
    assert value.real == pytest.approx(1.0, abs=1e-12)
    assert value.imag == pytest.approx(0.0, abs=1e-12)


def test_collective_coherence_bounded(ions):
    trace = coherence_trace(ions, np.linspace(0.0, 60.0, 601))
    assert np.all(trace <= 1.0 + 1e-12)


def test_collective_coherence_matches_direct_sum(ions):
    t = 20.0
    direct = np.sum(ions.weights**2 * np.exp(-2j * np.pi * ions.optical_detunings * t))
    assert collective_coherence(ions, t) == pytest.approx(complex(direct), abs=1e-9)


def test_weighted_phase_sum_keeps_shape(ions):
    t = np.array([[0.0, 0.5], [1.0, 1.5]])
    sums = weighted_phase_sum(ions.spin_detunings, ions.weights**2, t, 1e-3)
    assert sums.shape == (2, 2)
    direct = np.sum(ions.weights**2 * np.exp(-2j * np.pi * 1e-3 * ions.spin_detunings * 1.5))
    assert sums[1, 1] == pytest.approx(complex(direct), abs=1e-9)


def test_delta_comb_rephases_periodically():
    ions = sample_ions(CombSpec(finesse=math.inf), 27.0, 10_000, seed=2)
    assert np.allclose(ions.optical_detunings / 0.05, np.round(ions.optical_detunings / 0.05))
    for k in (1, 2, 3):
        assert abs(collective_coherence(ions, 20.0 * k)) > 0.999


def test_dephasing_between_echoes(ions):
    times = np.linspace(5.0, 15.0, 201)
    assert np.all(coherence_trace(ions, times) < 0.05)
    assert np.all(coherence_trace(ions, times + 20.0) < 0.05)


def test_echo_amplitude_timing(ions):
    assert echo_amplitude(ions, 0.0).time_us == pytest.approx(20.0, abs=0.01)
    assert echo_amplitude(ions, 5.0).time_us == pytest.approx(15.0, abs=0.01)
    with pytest.raises(DomainError):
        echo_amplitude(ions, 20.0)


def test_echo_amplitude_matches_direct_sum(ions):
    peak = echo_amplitude(ions, 0.0)
    direct = abs(np.sum(ions.weights**2 * np.exp(-2j * np.pi * ions.optical_detunings * peak.time_us))) ** 2
    assert peak.value == pytest.approx(direct, rel=0.02)
    assert peak.value == pytest.approx(rephasing_efficiency_bound(CombSpec()), abs=0.05)


def test_echo_peak_non_decreasing_in_finesse():
    peaks = []
    for finesse in (2.0, 4.0, 8.0, 16.0):
        population = sample_ions(CombSpec(finesse=finesse), 27.0, 10_000, seed=3)
        peaks.append(abs(collective_coherence(population, 20.0)) ** 2)
    slack = 1.0 / math.sqrt(10_000)
    assert all(b >= a - slack for a, b in zip(peaks, peaks[1:]))


def test_rephasing_efficiency_bound():
    assert rephasing_efficiency_bound(CombSpec(finesse=4.0)) == pytest.approx(0.64, abs=0.005)
    assert rephasing_efficiency_bound(CombSpec(finesse=math.inf)) == 1.0
    square = CombSpec(finesse=4.0, tooth_shape=ToothShape.SQUARE)
    assert rephasing_efficiency_bound(square) == pytest.approx((math.sin(math.pi / 4) / (math.pi / 4)) ** 2)


def test_derive_seeds_are_independent():
    first, second = derive_seeds(7, 2)
    a = sample_ions(CombSpec(), 27.0, 100, seed=first)
    b = sample_ions(CombSpec(), 27.0, 100, seed=second)
    assert not np.array_equal(a.optical_detunings, b.optical_detunings)


def test_write_coherence_trace(tmp_path, ions):
    path = tmp_path / "trace.tsv"
    times = np.array([0.0, 10.0, 20.0])
    write_coherence_trace(str(path), times, coherence_trace(ions, times))
    lines = path.read_text().splitlines()
    assert lines[0] == "time_us\tmagnitude_squared"
    assert len(lines) == 4
    assert float(lines[1].split("\t")[1]) == pytest.approx(1.0)


def test_spin_storage_factor():
    assert spin_storage_factor("exponential", 1.0, 0.0) == 1.0
    assert spin_storage_factor(SpinDecayModel.EXPONENTIAL, 1.0, 1.0) == pytest.approx(0.3679, abs=1e-4)
    assert spin_storage_factor("exponential", 1.0, 0.5) == pytest.approx(0.6065, abs=1e-4)
    assert spin_storage_factor("gaussian", 1.0, 1.0) == pytest.approx(math.exp(-1.0))
    values = [spin_storage_factor("gaussian", 1.0, t) for t in np.linspace(0.0, 3.0, 31)]
    assert all(b <= a for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("args", [("exponential", 0.0, 1.0), ("exponential", 1.0, -1.0), ("cubic", 1.0, 1.0)])
def test_spin_storage_factor_errors(args):
    with pytest.raises(DomainError):
        spin_storage_factor(*args)


def test_spin_free_decay_follows_gaussian_line(ions):
    sigma_mhz = 27.0e-3 / FWHM_TO_SIGMA
    for t in (5.0, 10.0, 20.0):
        expected = math.exp(-((2.0 * math.pi * sigma_mhz * t) ** 2))
        assert spin_free_decay(ions, t) == pytest.approx(expected, abs=0.02)
    assert spin_free_decay(ions, 0.0) == pytest.approx(1.0)
    assert spin_free_decay(ions, 50.0) < 0.01


def test_spin_echo_refocuses(ions):
    refocused = spin_coherence_after_echo(ions, 1000.0, 1000.0)
    assert refocused == pytest.approx(math.exp(-1.0))
    assert spin_coherence_after_echo(ions, 1000.0, 1000.0, refocus_offset=30.0) < 0.05 * refocused
