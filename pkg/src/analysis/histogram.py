"""
histogram.py
------------
Coincidence histograms over tau = T_S + T_aS and the accidental-coincidence
background they are normalized by.

Bins are aligned so that the expected peak T_spin + 1/Delta is a bin center
and the bins cover the reachable range [min gate sum, max gate sum].
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import partial

import numpy as np

import logger.logger as log
from errors import AnalysisError, DataError
from protocol import ProtocolConfig
from source import Channel, as_record_array, check_order
from threadpool.threadpool import ThreadPoolManager

logger = log.get_logger(__name__)


class AccidentalMethod(str, Enum):
    INTER_TRIAL = "inter_trial"
    ANALYTIC_TRIANGLE = "analytic_triangle"


def histogram_binning(config: ProtocolConfig) -> tuple[float, int]:
    """
    Returns:
        tuple: (left edge of the first bin in us, number of bins)
    """
    width = config.bin_width_us
    stokes, anti_stokes = config.stokes_window, config.anti_stokes_window
    low, high = stokes.start + anti_stokes.start, stokes.end + anti_stokes.end
    center = config.tau_peak_us
    below = max(0, math.ceil((center - width / 2.0 - low) / width - 1e-9))
    above = max(0, math.ceil((high - center - width / 2.0) / width - 1e-9))
    return center - width / 2.0 - below * width, below + above + 1


@dataclass(eq=False)
class CoincidenceHistogram:
    """
    Same-trial Stokes/anti-Stokes pair counts binned by tau.

    Histograms over disjoint trial ranges merge exactly with ``merge``.
    """

    bin_width_ns: float
    tau_origin_us: float
    counts: np.ndarray
    n_trials: int
    n_stokes: int
    n_anti_stokes: int

    def __post_init__(self):
        if not self.bin_width_ns > 0:
            raise AnalysisError("histogram bin width must be > 0")
        self.counts = np.asarray(self.counts, dtype=np.int64)

    @property
    def bin_width_us(self) -> float:
        return self.bin_width_ns * 1e-3

    @property
    def n_bins(self) -> int:
        return self.counts.size

    @property
    def edges(self) -> np.ndarray:
        return self.tau_origin_us + self.bin_width_us * np.arange(self.n_bins + 1)

    @property
    def taus(self) -> np.ndarray:
        """Bin centers in us."""
        return self.tau_origin_us + self.bin_width_us * (np.arange(self.n_bins) + 0.5)

    def index_of(self, tau: float) -> int:
        index = int(math.floor((tau - self.tau_origin_us) / self.bin_width_us))
        if not 0 <= index < self.n_bins:
            raise AnalysisError("tau = %g us is outside the histogram range" % tau)
        return index

    def merge(self, other: "CoincidenceHistogram") -> "CoincidenceHistogram":
        if (
            other.n_bins != self.n_bins
            or not math.isclose(other.bin_width_ns, self.bin_width_ns)
            or not math.isclose(other.tau_origin_us, self.tau_origin_us)
        ):
            raise AnalysisError("cannot merge histograms with different binning")
        return CoincidenceHistogram(
            self.bin_width_ns,
            self.tau_origin_us,
            self.counts + other.counts,
            self.n_trials + other.n_trials,
            self.n_stokes + other.n_stokes,
            self.n_anti_stokes + other.n_anti_stokes,
        )


@dataclass(frozen=True, eq=False)
class ChannelTimes:
    """Per-channel trial ids (int64, sorted) and timestamps of a validated stream."""

    stokes_trial: np.ndarray
    stokes_time: np.ndarray
    anti_stokes_trial: np.ndarray
    anti_stokes_time: np.ndarray
    n_trials: int


def _first_photon(trial: np.ndarray, time: np.ndarray):
    order = np.lexsort((time, trial))
    trial, time = trial[order], time[order]
    first = np.ones(trial.size, dtype=bool)
    first[1:] = trial[1:] != trial[:-1]
    return trial[first], time[first]


def split_channels(
    records,
    config: ProtocolConfig,
    n_trials: int | None = None,
    first_photon_only: bool | None = None,
) -> ChannelTimes:
    """
    Validate a record stream against the gates and split it by channel.

    Args:
        records: Record array or iterable of record chunks.
        config (ProtocolConfig): Gates and analysis knobs.
        n_trials (int | None): Number of trials the stream covers; inferred
            from the largest trial_id when None.
        first_photon_only (bool | None): Keep only the first detection per
            trial and channel; defaults to ``config.first_photon_only``.
    """
    records = as_record_array(records)
    check_order(records)
    if records.size == 0 and n_trials is None:
        raise AnalysisError("empty record stream")

    trial = records["trial_id"].astype(np.int64)
    channel = records["channel"]
    time = records["timestamp_us"]

    if n_trials is None:
        n_trials = int(trial[-1]) + 1
        logger.warning("n_trials not given, using max(trial_id) + 1 = %d" % n_trials)
    elif records.size and trial[-1] >= n_trials:
        raise DataError(
            "trial_id exceeds the declared %d trials" % n_trials, trial_id=int(trial[-1])
        )
    if n_trials < 1:
        raise AnalysisError("stream covers no trials")

    gates = {Channel.STOKES: config.stokes_window, Channel.ANTI_STOKES: config.anti_stokes_window}
    split = []
    for ch, gate in gates.items():
        mask = channel == ch
        ch_trial, ch_time = trial[mask], time[mask]
        outside = np.flatnonzero(~gate.contains(ch_time))
        if outside.size:
            k = outside[0]
            raise DataError(
                "%s record at %r us lies outside its gate [%g, %g]"
                % (ch.label, float(ch_time[k]), gate.start, gate.end),
                trial_id=int(ch_trial[k]),
            )
        use_first = config.first_photon_only if first_photon_only is None else first_photon_only
        if use_first:
            ch_trial, ch_time = _first_photon(ch_trial, ch_time)
        split += [ch_trial, ch_time]
    return ChannelTimes(*split, n_trials=n_trials)


def _expand(lo: np.ndarray, hi: np.ndarray):
    """Index pairs (i, k) for every i and every k in [lo[i], hi[i])."""
    lengths = np.maximum(hi - lo, 0)
    total = int(lengths.sum())
    left = np.repeat(np.arange(lo.size), lengths)
    starts = np.cumsum(lengths) - lengths
    right = np.repeat(lo, lengths) + (np.arange(total) - np.repeat(starts, lengths))
    return left, right


def _bin_index(tau: np.ndarray, origin: float, width: float, n_bins: int) -> np.ndarray:
    index = np.floor((tau - origin) / width).astype(np.int64)
    return np.clip(index, 0, n_bins - 1)


def _partitions(trials: np.ndarray, parts: int) -> list[tuple[int, int]]:
    """Split an index range at trial boundaries into up to ``parts`` slices."""
    if parts <= 1 or trials.size == 0:
        return [(0, trials.size)]
    cuts = np.linspace(0, trials.size, parts + 1).astype(np.int64)
    cuts = np.searchsorted(trials, trials[np.minimum(cuts[1:-1], trials.size - 1)], "left")
    bounds = np.unique(np.concatenate([[0], cuts, [trials.size]]))
    return list(zip(bounds[:-1], bounds[1:]))


def _same_trial_counts(times: ChannelTimes, origin: float, width: float, n_bins: int, span):
    start, stop = span
    s_trial = times.stokes_trial[start:stop]
    a_trial = times.anti_stokes_trial
    lo = np.searchsorted(a_trial, s_trial, "left")
    hi = np.searchsorted(a_trial, s_trial, "right")
    left, right = _expand(lo, hi)
    tau = times.stokes_time[start:stop][left] + times.anti_stokes_time[right]
    return np.bincount(_bin_index(tau, origin, width, n_bins), minlength=n_bins)


def coincidence_histogram(
    records,
    config: ProtocolConfig,
    n_trials: int | None = None,
    threadpool: ThreadPoolManager | None = None,
    first_photon_only: bool | None = None,
) -> CoincidenceHistogram:
    """
    Count every same-trial (stokes, anti_stokes) combination in the bin holding
    T_S + T_aS.

    Args:
        records: Record array or iterable of record chunks.
        config (ProtocolConfig): Gates, bin width and analysis knobs.
        n_trials (int | None): Trials covered by the stream.
        threadpool (ThreadPoolManager | None): Histogram trial ranges in
            parallel; partial histograms are merged in order.
        first_photon_only (bool | None): Override of ``config.first_photon_only``.
    """
    times = records if isinstance(records, ChannelTimes) else split_channels(
        records, config, n_trials, first_photon_only
    )
    origin, n_bins = histogram_binning(config)
    width = config.bin_width_us

    parts = 1 if threadpool is None else threadpool.max_workers
    spans = _partitions(times.stokes_trial, parts)
    task = partial(_same_trial_counts, times, origin, width, n_bins)
    partial_counts = [task(s) for s in spans] if threadpool is None else threadpool.map_ordered(task, spans)

    counts = np.zeros(n_bins, dtype=np.int64)
    for part in partial_counts:
        counts += part
    histogram = CoincidenceHistogram(
        config.bin_width_ns,
        origin,
        counts,
        times.n_trials,
        int(times.stokes_trial.size),
        int(times.anti_stokes_trial.size),
    )
    logger.info(
        "Histogrammed %d trials: %d Stokes, %d anti-Stokes, %d coincidences"
        % (histogram.n_trials, histogram.n_stokes, histogram.n_anti_stokes, counts.sum())
    )
    return histogram


@dataclass(eq=False)
class AccidentalEstimate:
    """
    Expected accidental counts per tau bin.

    Args:
        method (AccidentalMethod): Estimator that produced the values.
        expected (np.ndarray): Expected accidental counts per bin.
        relative_variance (np.ndarray): Squared relative 1 sigma error per bin;
            inf where nothing was sampled.
        pair_counts (np.ndarray | None): Raw inter-trial pair counts per bin.
    """

    method: AccidentalMethod
    expected: np.ndarray
    relative_variance: np.ndarray
    pair_counts: np.ndarray | None = None
    tau_origin_us: float = 0.0
    bin_width_ns: float = 100.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def errors(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.where(self.expected > 0, self.expected * np.sqrt(self.relative_variance), 0.0)


def _ramp2(x):
    x = np.maximum(x, 0.0)
    return 0.5 * x * x


def _triangle_cdf(tau, config: ProtocolConfig):
    s, a = config.stokes_window, config.anti_stokes_window
    total = (
        _ramp2(tau - s.start - a.start)
        - _ramp2(tau - s.end - a.start)
        - _ramp2(tau - s.start - a.end)
        + _ramp2(tau - s.end - a.end)
    )
    return total / (s.width * a.width)


def triangle_density(tau, config: ProtocolConfig):
    """Density of T_S + T_aS for independent uniform photons in the two gates."""
    s, a = config.stokes_window, config.anti_stokes_window
    tau = np.asarray(tau, dtype=float)
    ramp = partial(np.maximum, 0.0)
    value = (
        ramp(tau - s.start - a.start)
        - ramp(tau - s.end - a.start)
        - ramp(tau - s.start - a.end)
        + ramp(tau - s.end - a.end)
    ) / (s.width * a.width)
    return float(value) if value.ndim == 0 else value


def _inter_trial_counts(times: ChannelTimes, window: int, origin, width, n_bins, span):
    start, stop = span
    s_trial = times.stokes_trial[start:stop]
    s_time = times.stokes_time[start:stop]
    a_trial = times.anti_stokes_trial
    n = times.n_trials
    partners = np.minimum(s_trial + window, n - 1) - np.maximum(s_trial - window, 0)
    weight_of = 1.0 / np.maximum(partners, 1)

    weighted = np.zeros(n_bins)
    raw = np.zeros(n_bins, dtype=np.int64)
    for lo_offset, hi_offset in ((-window, -1), (1, window)):
        lo = np.searchsorted(a_trial, s_trial + lo_offset, "left")
        hi = np.searchsorted(a_trial, s_trial + hi_offset, "right")
        left, right = _expand(lo, hi)
        index = _bin_index(s_time[left] + times.anti_stokes_time[right], origin, width, n_bins)
        weighted += np.bincount(index, weights=weight_of[left], minlength=n_bins)
        raw += np.bincount(index, minlength=n_bins)
    return weighted, raw


def accidental_estimate(
    records,
    config: ProtocolConfig,
    method=AccidentalMethod.INTER_TRIAL,
    n_trials: int | None = None,
    threadpool: ThreadPoolManager | None = None,
    first_photon_only: bool | None = None,
) -> AccidentalEstimate:
    """
    Expected accidental coincidences per tau bin.

    ``inter_trial`` pairs the Stokes records of trial i with the anti-Stokes
    records of trials j in [i - W, i + W], j != i (W = ``pairing_window_trials``),
    weighting each pair by the inverse number of partner trials of i.
    ``analytic_triangle`` convolves two uniform gate densities scaled by the
    measured singles, N_S N_aS / N.

    Args:
        records: Record array, iterable of chunks, or ChannelTimes.
        config (ProtocolConfig): Gates, bin width and pairing window.
        method (AccidentalMethod | str): Estimator.
        n_trials (int | None): Trials covered by the stream.
        threadpool (ThreadPoolManager | None): Parallel inter-trial pairing.
    """
    method = AccidentalMethod(method)
    times = records if isinstance(records, ChannelTimes) else split_channels(
        records, config, n_trials, first_photon_only
    )
    origin, n_bins = histogram_binning(config)
    width = config.bin_width_us
    n_s, n_as, n = times.stokes_trial.size, times.anti_stokes_trial.size, times.n_trials

    if method is AccidentalMethod.ANALYTIC_TRIANGLE:
        edges = origin + width * np.arange(n_bins + 1)
        probability = np.diff(_triangle_cdf(edges, config))
        expected = n_s * n_as / n * probability
        relative = np.full(n_bins, math.inf)
        if n_s and n_as:
            relative[:] = 1.0 / n_s + 1.0 / n_as
        return AccidentalEstimate(method, expected, relative, None, origin, config.bin_width_ns)

    if n < 2:
        raise AnalysisError("inter-trial accidentals need at least 2 trials, got %d" % n)
    window = min(config.pairing_window_trials, n - 1)
    parts = 1 if threadpool is None else threadpool.max_workers
    spans = _partitions(times.stokes_trial, parts)
    task = partial(_inter_trial_counts, times, window, origin, width, n_bins)
    results = [task(s) for s in spans] if threadpool is None else threadpool.map_ordered(task, spans)

    expected = np.zeros(n_bins)
    raw = np.zeros(n_bins, dtype=np.int64)
    for weighted, counts in results:
        expected += weighted
        raw += counts
    with np.errstate(divide="ignore"):
        relative = np.where(raw > 0, 1.0 / np.maximum(raw, 1), math.inf)
    logger.debug(
        "Inter-trial accidentals: window %d trials, %d raw pairs" % (window, raw.sum())
    )
    return AccidentalEstimate(
        method, expected, relative, raw, origin, config.bin_width_ns, {"window_trials": window}
    )
