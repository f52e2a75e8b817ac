"""
comb.py
-------
This module models the spectrally tailored ensemble: the atomic frequency comb
(CombSpec), a sampled population of ions (IonPopulation), and the collective
optical coherence A(t) = sum_j |c_j|^2 exp(-i 2 pi delta_j t) that rephases at
multiples of the comb period 1/Delta.

Units: optical detunings in MHz, spin detunings in kHz, times in microseconds,
so that 2 pi * delta[MHz] * t[us] is a phase in radians.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np
from scipy import stats

import logger.logger as log
from errors import ConfigurationError, DomainError

logger = log.get_logger(__name__)

FWHM_TO_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

# complex entries evaluated per chunk in collective_coherence
_CHUNK_ELEMENTS = 1 << 22


class ToothShape(str, Enum):
    SQUARE = "square"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class CombSpec:
    """
    Spectral comb prepared on the optical transition.

    Args:
        period_inv_delta (float): Rephasing time 1/Delta in us.
        finesse (float): Tooth spacing over tooth FWHM. ``math.inf`` gives
            delta-function teeth.
        bandwidth (float): Total comb extent in MHz, centered on zero.
        effective_optical_depth (float): Effective optical depth d~.
        tooth_shape (ToothShape): Shape of each tooth.
    """

    period_inv_delta: float = 20.0
    finesse: float = 4.0
    bandwidth: float = 5.0
    effective_optical_depth: float = 1.0
    tooth_shape: ToothShape = ToothShape.GAUSSIAN

    def __post_init__(self):
        try:
            object.__setattr__(self, "tooth_shape", ToothShape(self.tooth_shape))
        except ValueError:
            raise ConfigurationError(
                "unknown tooth shape %r" % (self.tooth_shape,), field="tooth_shape"
            )
        if not self.period_inv_delta > 0:
            raise ConfigurationError("must be > 0", field="period_inv_delta")
        if not self.finesse > 1:
            raise ConfigurationError("must be > 1", field="finesse")
        if not self.bandwidth > self.spacing:
            raise ConfigurationError(
                "must exceed the tooth spacing %.6g MHz" % self.spacing,
                field="bandwidth",
            )
        if not self.effective_optical_depth >= 0:
            raise ConfigurationError("must be >= 0", field="effective_optical_depth")

    @property
    def spacing(self) -> float:
        """Tooth spacing Delta in MHz."""
        return 1.0 / self.period_inv_delta

    @property
    def tooth_fwhm(self) -> float:
        """Tooth FWHM in MHz, 0 for an infinite finesse."""
        if math.isinf(self.finesse):
            return 0.0
        return self.spacing / self.finesse

    @property
    def tooth_centers(self) -> np.ndarray:
        half = self.bandwidth / 2.0
        k_max = math.floor(half / self.spacing + 1e-9)
        return np.arange(-k_max, k_max + 1) * self.spacing


@dataclass(frozen=True, eq=False)
class IonPopulation:
    """
    Sampled ions with their optical detunings (MHz), spin detunings (kHz) and
    coupling weights c_j. Arrays are read-only.
    """

    optical_detunings: np.ndarray
    spin_detunings: np.ndarray
    weights: np.ndarray
    seed: object
    comb: CombSpec = field(default_factory=CombSpec)

    def __post_init__(self):
        for name in ("optical_detunings", "spin_detunings", "weights"):
            array = np.array(getattr(self, name), dtype=float)
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        n = self.optical_detunings.size
        if n < 1:
            raise DomainError("population needs at least one ion")
        if self.spin_detunings.size != n or self.weights.size != n:
            raise ConfigurationError(
                "optical_detunings, spin_detunings and weights differ in length",
                field="weights",
            )
        norm = float(np.sum(self.weights**2))
        if abs(norm - 1.0) > 1e-9:
            raise ConfigurationError(
                "sum of |c_j|^2 is %.12g, expected 1" % norm, field="weights"
            )

    def __len__(self):
        return self.optical_detunings.size


class EchoPeak(NamedTuple):
    time_us: float
    value: float


def derive_seeds(seed, count: int) -> list:
    """Split one seed into independent child seeds for parallel sampling."""
    return np.random.SeedSequence(seed).spawn(count)


def _tooth_offsets(comb: CombSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    width = comb.tooth_fwhm
    if width == 0.0:
        return np.zeros(size)
    if comb.tooth_shape is ToothShape.GAUSSIAN:
        return rng.normal(0.0, width / FWHM_TO_SIGMA, size)
    return rng.uniform(-width / 2.0, width / 2.0, size)


def sample_ions(
    comb: CombSpec,
    spin_fwhm: float,
    n: int,
    seed=None,
) -> IonPopulation:
    """
    Draw n ions from the comb spectral density.

    A tooth is picked uniformly, an offset is drawn from the tooth shape, and
    the draw is repeated (tooth included) whenever the detuning falls outside
    the comb bandwidth. Spin detunings are Gaussian with the given FWHM (kHz).
    Weights are uniform, 1/sqrt(n).

    Args:
        comb (CombSpec): Comb to sample from.
        spin_fwhm (float): Spin inhomogeneous FWHM in kHz.
        n (int): Number of ions.
        seed: Integer seed or ``numpy.random.SeedSequence``.

    Returns:
        IonPopulation: The sampled ions.
    """
    if n < 1:
        raise DomainError("n must be >= 1, got %d" % n)
    if spin_fwhm < 0:
        raise DomainError("spin_fwhm must be >= 0")

    rng = np.random.default_rng(seed)
    centers = comb.tooth_centers
    half = comb.bandwidth / 2.0

    optical = np.empty(n)
    filled = 0
    while filled < n:
        need = n - filled
        picks = centers[rng.integers(0, centers.size, need)]
        draws = picks + _tooth_offsets(comb, rng, need)
        draws = draws[np.abs(draws) <= half]
        optical[filled : filled + draws.size] = draws
        filled += draws.size

    spin = rng.normal(0.0, spin_fwhm / FWHM_TO_SIGMA, n)
    weights = np.full(n, 1.0 / math.sqrt(n))
    logger.debug("Sampled %d ions over %d teeth" % (n, centers.size))

    return IonPopulation(
        optical_detunings=optical,
        spin_detunings=spin,
        weights=weights,
        seed=seed,
        comb=comb,
    )


def weighted_phase_sum(detunings: np.ndarray, weights_sq: np.ndarray, t: np.ndarray, scale: float):
    """
    sum_j w_j exp(-i 2 pi scale delta_j t) for every entry of ``t``.

    Evaluated in chunks so the phase matrix stays bounded in memory.

    Args:
        detunings (numpy.ndarray): Per-ion detunings.
        weights_sq (numpy.ndarray): Per-ion weights w_j, already squared.
        t (numpy.ndarray): Times of any shape.
        scale (float): Converts detuning times ``t`` to cycles, for example 1e-3 for kHz and us.

    Returns:
        numpy.ndarray: Complex sums with the shape of ``t``.
    """
    out = np.empty(t.shape, dtype=complex)
    flat = t.ravel()
    result = out.reshape(-1)
    chunk = max(1, _CHUNK_ELEMENTS // max(1, detunings.size))
    for start in range(0, flat.size, chunk):
        stop = start + chunk
        phase = np.outer(flat[start:stop], detunings) * (2.0 * math.pi * scale)
        result[start:stop] = np.exp(-1j * phase) @ weights_sq
    return out


def collective_coherence(ions: IonPopulation, t):
    """
    A(t) = sum_j |c_j|^2 exp(-i 2 pi delta_j t).

    Args:
        ions (IonPopulation): Sampled ions.
        t (float | array): Time(s) in us.

    Returns:
        complex | numpy.ndarray: A(t) with the shape of ``t``.
    """
    times = np.asarray(t, dtype=float)
    values = weighted_phase_sum(ions.optical_detunings, ions.weights**2, np.atleast_1d(times), 1.0)
    if times.ndim == 0:
        return complex(values[0])
    return values.reshape(times.shape)


def coherence_trace(ions: IonPopulation, times) -> np.ndarray:
    """|A(t)|^2 over an array of times."""
    return np.abs(collective_coherence(ions, np.asarray(times, dtype=float))) ** 2


def echo_amplitude(ions: IonPopulation, t_s: float, step: float = 0.01) -> EchoPeak:
    """
    Locate the rephasing echo seen after a Stokes emission at T_S.

    Scans t' over (0, 1/Delta] in steps of ``step`` us and returns the t'
    maximizing |A(T_S + t')|^2. Points with T_S + t' < 1/(2 Delta) are skipped:
    the ensemble has not dephased yet there, so they are no echo.

    Args:
        ions (IonPopulation): Sampled ions.
        t_s (float): Stokes emission time in us, 0 <= T_S < 1/Delta.
        step (float): Scan step in us.

    Returns:
        EchoPeak: (t' of the peak, peak |A|^2).
    """
    period = ions.comb.period_inv_delta
    if not 0 <= t_s < period:
        raise DomainError("T_S must satisfy 0 <= T_S < 1/Delta = %g us" % period)
    if not step > 0:
        raise DomainError("scan step must be > 0")

    points = max(1, int(round(period / step)))
    t_prime = period * np.arange(1, points + 1) / points
    t_prime = t_prime[t_s + t_prime >= period / 2.0]
    values = coherence_trace(ions, t_s + t_prime)
    best = int(np.argmax(values))
    return EchoPeak(float(t_prime[best]), float(values[best]))


def rephasing_efficiency_bound(comb: CombSpec) -> float:
    """|A(1/Delta)|^2 in the many-ion limit, neglecting the band truncation."""
    if math.isinf(comb.finesse):
        return 1.0
    if comb.tooth_shape is ToothShape.GAUSSIAN:
        return math.exp(-((2.0 * math.pi / (FWHM_TO_SIGMA * comb.finesse)) ** 2))
    x = math.pi / comb.finesse
    return (math.sin(x) / x) ** 2


def _tooth_cdfs(comb: CombSpec, x: np.ndarray) -> np.ndarray:
    centers = comb.tooth_centers
    shifted = x[..., None] - centers
    width = comb.tooth_fwhm
    if width == 0.0:
        return (shifted >= 0).astype(float)
    if comb.tooth_shape is ToothShape.GAUSSIAN:
        return stats.norm.cdf(shifted, scale=width / FWHM_TO_SIGMA)
    return np.clip(shifted / width + 0.5, 0.0, 1.0)


def comb_cdf(comb: CombSpec, x):
    """Cumulative distribution of the band-truncated comb density at x (MHz)."""
    half = comb.bandwidth / 2.0
    x = np.clip(np.asarray(x, dtype=float), -half, half)
    edges = _tooth_cdfs(comb, np.array([-half, half]))
    low = edges[0].sum()
    norm = edges[1].sum() - low
    return (_tooth_cdfs(comb, x).sum(axis=-1) - low) / norm


def comb_density(comb: CombSpec, x):
    """Spectral density of the band-truncated comb at x (MHz); square and gaussian teeth."""
    if comb.tooth_fwhm == 0.0:
        raise DomainError("a delta-function comb has no density")
    half = comb.bandwidth / 2.0
    x = np.asarray(x, dtype=float)
    shifted = x[..., None] - comb.tooth_centers
    width = comb.tooth_fwhm
    if comb.tooth_shape is ToothShape.GAUSSIAN:
        pdf = stats.norm.pdf(shifted, scale=width / FWHM_TO_SIGMA)
    else:
        pdf = (np.abs(shifted) <= width / 2.0) / width
    edges = _tooth_cdfs(comb, np.array([-half, half]))
    norm = edges[1].sum() - edges[0].sum()
    return np.where(np.abs(x) <= half, pdf.sum(axis=-1) / norm, 0.0)


def write_coherence_trace(path: str, times, values):
    """Write a (time_us, magnitude_squared) trace as tab separated text."""
    table = np.column_stack([np.asarray(times, dtype=float), np.asarray(values, dtype=float)])
    np.savetxt(
        path,
        table,
        delimiter="\t",
        header="time_us\tmagnitude_squared",
        comments="",
        fmt="%.10g",
    )
    logger.info("Wrote coherence trace to %s" % path)
