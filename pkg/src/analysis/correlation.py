"""
correlation.py
--------------
Normalized second-order correlations built from coincidence histograms:
g_SaS(tau), the zero-delay auto-correlations of each channel, the
Cauchy-Schwarz parameter and the conditional readout efficiency.

Errors are 1 sigma, propagated from Poisson counting on both the coincidence
counts and the accidental estimate.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

import logger.logger as log
from errors import AnalysisError, DomainError
from protocol import ProtocolConfig
from source import Channel, as_record_array

from .histogram import (
    AccidentalEstimate,
    ChannelTimes,
    CoincidenceHistogram,
    accidental_estimate,
    coincidence_histogram,
    split_channels,
)

logger = log.get_logger(__name__)


class Estimate(NamedTuple):
    value: float
    error: float


@dataclass(eq=False)
class CorrelationResult:
    """
    g(tau) per bin. Bins with no accidental expectation are undefined: their
    ``g_values`` and ``g_errors`` are NaN and ``defined`` is False.
    """

    taus: np.ndarray
    g_values: np.ndarray
    g_errors: np.ndarray
    accidentals: np.ndarray
    counts: np.ndarray | None = None
    bin_width_ns: float = 100.0

    def __post_init__(self):
        sizes = {np.size(self.taus), np.size(self.g_values), np.size(self.g_errors), np.size(self.accidentals)}
        if len(sizes) != 1:
            raise AnalysisError("correlation arrays differ in length")

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.g_values)

    def index_of(self, tau: float) -> int:
        half = self.bin_width_ns * 1e-3 / 2.0
        index = int(np.argmin(np.abs(self.taus - tau)))
        if abs(self.taus[index] - tau) > half + 1e-9:
            raise AnalysisError("tau = %g us is outside the correlation range" % tau)
        return index

    def at(self, tau: float) -> Estimate:
        index = self.index_of(tau)
        if not self.defined[index]:
            raise AnalysisError("g is undefined at tau = %g us (no accidentals)" % tau)
        return Estimate(float(self.g_values[index]), float(self.g_errors[index]))


def cross_correlation(hist: CoincidenceHistogram, acc: AccidentalEstimate) -> CorrelationResult:
    """
    g(tau) = counts(tau) / acc(tau).

    Error: sigma_g = g sqrt(1 / counts + relative accidental variance); a bin
    with zero counts gets sigma_g = 1 / acc.
    """
    if acc.expected.size != hist.n_bins:
        raise AnalysisError(
            "accidental estimate has %d bins, histogram %d" % (acc.expected.size, hist.n_bins)
        )
    counts = hist.counts.astype(float)
    expected = acc.expected
    defined = expected > 0
    g = np.full(hist.n_bins, math.nan)
    err = np.full(hist.n_bins, math.nan)
    g[defined] = counts[defined] / expected[defined]

    with np.errstate(divide="ignore", invalid="ignore"):
        relative = np.where(counts > 0, 1.0 / counts, 0.0) + acc.relative_variance
        propagated = g * np.sqrt(relative)
    nonzero = defined & (counts > 0)
    zero = defined & (counts == 0)
    err[nonzero] = propagated[nonzero]
    err[zero] = 1.0 / expected[zero]

    undefined = int(np.count_nonzero(~defined))
    if undefined:
        logger.debug("%d tau bins have no accidental expectation, g undefined" % undefined)
    return CorrelationResult(hist.taus, g, err, expected, hist.counts.copy(), hist.bin_width_ns)


def _window_sums(per_trial: np.ndarray, window: int):
    """Sum and count of the other trials within +/- window of every trial."""
    n = per_trial.size
    index = np.arange(n)
    lo = np.maximum(index - window, 0)
    hi = np.minimum(index + window, n - 1)
    cumulative = np.concatenate([[0], np.cumsum(per_trial)])
    return cumulative[hi + 1] - cumulative[lo] - per_trial, hi - lo


def auto_correlation(
    records,
    channel,
    config: ProtocolConfig,
    n_trials: int | None = None,
    first_photon_only: bool | None = None,
) -> Estimate:
    """
    Zero-delay auto-correlation g_XX of one channel over its whole gate.

    Same-trial unordered photon pairs, sum_i n_i (n_i - 1) / 2, normalized by
    the pair expectation of independent trials taken from trials within
    ``pairing_window_trials`` of each trial.

    Args:
        records: Record array, iterable of chunks, or ChannelTimes.
        channel (Channel | str): Channel to analyze.
        config (ProtocolConfig): Gates and pairing window.
        n_trials (int | None): Trials covered by the stream.
    """
    channel = Channel.parse(channel) if isinstance(channel, str) else Channel(channel)
    times = records if isinstance(records, ChannelTimes) else split_channels(
        records, config, n_trials, first_photon_only
    )
    trial = times.stokes_trial if channel is Channel.STOKES else times.anti_stokes_trial
    if trial.size == 0:
        raise AnalysisError("no %s singles in the stream" % channel.label)
    if times.n_trials < 2:
        raise AnalysisError("auto-correlation needs at least 2 trials")

    n = np.bincount(trial, minlength=times.n_trials).astype(np.int64)
    same_trial = float(np.sum(n * (n - 1)) / 2.0)
    window = min(config.pairing_window_trials, times.n_trials - 1)
    others, partners = _window_sums(n, window)
    raw_pairs = float(np.sum(n * others)) / 2.0
    expected = 0.5 * float(np.sum(n * others / np.maximum(partners, 1)))
    if expected <= 0:
        raise AnalysisError("no inter-trial %s pairs to normalize by" % channel.label)

    g = same_trial / expected
    if same_trial > 0:
        error = g * math.sqrt(1.0 / same_trial + 1.0 / raw_pairs)
    else:
        error = 1.0 / expected
    logger.debug(
        "g_%s: %d same-trial pairs, %.4g expected" % (channel.label, same_trial, expected)
    )
    return Estimate(g, error)


@dataclass(frozen=True)
class CauchySchwarzResult:
    """R = g_SaS^2 / (g_SS g_aSaS) with asymmetric bounds R exp(-/+ sigma_lnR)."""

    r: float
    lower: float
    upper: float
    sigma_log: float

    @property
    def nonclassical(self) -> bool:
        return self.r > 1.0

    @property
    def violation_sigma(self) -> float:
        """Distance of R from 1 in units of the error toward 1."""
        if self.r > 1.0:
            spread = self.r - self.lower
        else:
            spread = self.upper - self.r
        if spread <= 0:
            return math.inf if self.r != 1.0 else 0.0
        return (self.r - 1.0) / spread


def _as_estimate(value) -> Estimate:
    if isinstance(value, tuple):
        return Estimate(float(value[0]), float(value[1]))
    return Estimate(float(value), 0.0)


def cauchy_schwarz(g_sas, g_ss, g_as_as) -> CauchySchwarzResult:
    """
    Cauchy-Schwarz parameter with log-space error propagation.

    Args:
        g_sas: Cross-correlation, a float or an Estimate.
        g_ss: Stokes auto-correlation, a float or an Estimate.
        g_as_as: Anti-Stokes auto-correlation, a float or an Estimate.
    """
    cross, stokes, anti_stokes = (_as_estimate(v) for v in (g_sas, g_ss, g_as_as))
    for name, estimate in (("g_SaS", cross), ("g_SS", stokes), ("g_aSaS", anti_stokes)):
        if not estimate.value > 0:
            raise DomainError("%s must be > 0, got %r" % (name, estimate.value))
        if estimate.error < 0:
            raise DomainError("%s error must be >= 0" % name)

    r = cross.value**2 / (stokes.value * anti_stokes.value)
    sigma_log = math.sqrt(
        (2.0 * cross.error / cross.value) ** 2
        + (stokes.error / stokes.value) ** 2
        + (anti_stokes.error / anti_stokes.value) ** 2
    )
    return CauchySchwarzResult(r, r * math.exp(-sigma_log), r * math.exp(sigma_log), sigma_log)


def readout_window_mask(taus: np.ndarray, config: ProtocolConfig, window=None) -> np.ndarray:
    """
    Bins used for the readout efficiency.

    Args:
        window: ``bin`` for the central bin, ``two_tau_c`` for bins whose
            centers lie within tau_c of the peak, or a total width in us.
            Defaults to ``config.readout_window``.
    """
    window = config.readout_window if window is None else window
    distance = np.abs(taus - config.tau_peak_us)
    if window == "bin":
        half = config.bin_width_us / 2.0
    elif window == "two_tau_c":
        half = config.pair_coherence_fwhm_us
    else:
        try:
            half = float(window) / 2.0
        except (TypeError, ValueError):
            raise AnalysisError("unknown readout window %r" % (window,))
    mask = distance <= half + 1e-9
    if not mask.any():
        mask[int(np.argmin(distance))] = True
    return mask


def readout_efficiency_from_probabilities(p_coinc: float, p_acc: float, p_s: float) -> float:
    """eta_R = (p_coinc - p_acc) / p_S."""
    if not p_s > 0:
        raise AnalysisError("Stokes probability estimate is zero")
    return (p_coinc - p_acc) / p_s


def readout_efficiency(
    records,
    config: ProtocolConfig,
    n_trials: int | None = None,
    window=None,
    histogram: CoincidenceHistogram | None = None,
    accidentals: AccidentalEstimate | None = None,
) -> Estimate:
    """
    Conditional readout efficiency (C - A) / N_S over the central window.

    Args:
        records: Record stream, or None when ``histogram`` and
            ``accidentals`` are given.
        config (ProtocolConfig): Gates, bin width and default window.
        n_trials (int | None): Trials covered by the stream.
        window: See ``readout_window_mask``.
        histogram (CoincidenceHistogram | None): Precomputed histogram.
        accidentals (AccidentalEstimate | None): Precomputed accidentals.
    """
    if histogram is None or accidentals is None:
        times = split_channels(as_record_array(records), config, n_trials)
        histogram = histogram or coincidence_histogram(times, config)
        accidentals = accidentals or accidental_estimate(times, config)

    n_s = histogram.n_stokes
    if n_s == 0:
        raise AnalysisError("no Stokes detections, readout efficiency undefined")
    mask = readout_window_mask(histogram.taus, config, window)
    coincidences = float(histogram.counts[mask].sum())
    expected = float(accidentals.expected[mask].sum())
    variance = coincidences + float(np.sum(accidentals.errors[mask] ** 2))

    eta = readout_efficiency_from_probabilities(
        coincidences / histogram.n_trials, expected / histogram.n_trials, n_s / histogram.n_trials
    )
    error = math.sqrt(variance / n_s**2 + eta**2 / n_s)
    return Estimate(eta, error)
