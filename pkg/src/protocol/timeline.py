"""
timeline.py
-----------
This module lays out one preparation block of the experiment as a validated
timeline: comb preparation, then ``repetitions_per_prep`` cycles of write
pulse, Stokes gate, RF echo sequence, read pulse, anti-Stokes gate and repump.
It also holds the timing law of the AFC-DLCZ emission, the phase-matching
check and the temporal mode count.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

import logger.logger as log
from errors import ConfigurationError, DomainError

from .config import ProtocolConfig

logger = log.get_logger(__name__)


class Label(str, Enum):
    PREPARE = "prepare"
    WRITE = "write"
    STOKES_GATE = "stokes_gate"
    RF_PULSE = "rf_pulse"
    READ = "read"
    ANTI_STOKES_GATE = "anti_stokes_gate"
    REPUMP = "repump"


@dataclass(frozen=True)
class Interval:
    label: Label
    start: float
    end: float
    cycle: int = -1
    phase_deg: float | None = None

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def center(self) -> float:
        return (self.start + self.end) / 2.0


@dataclass(frozen=True)
class Timeline:
    """
    Ordered, non-overlapping intervals in us from the start of the preparation.
    """

    intervals: tuple[Interval, ...]

    def __post_init__(self):
        object.__setattr__(self, "intervals", tuple(self.intervals))
        previous = None
        for interval in self.intervals:
            if not interval.end > interval.start:
                raise ConfigurationError(
                    "%s interval has non-positive length" % interval.label.value
                )
            if previous is not None and interval.start < previous.end - 1e-9:
                raise ConfigurationError(
                    "%s overlaps %s in cycle %d"
                    % (interval.label.value, previous.label.value, interval.cycle)
                )
            previous = interval

        for k in range(self.cycles):
            cycle = self.cycle(k)
            write = _single(cycle, Label.WRITE)
            read = _single(cycle, Label.READ)
            if _single(cycle, Label.STOKES_GATE).start < write.end:
                raise ConfigurationError("Stokes gate opens before the write pulse ends")
            if _single(cycle, Label.ANTI_STOKES_GATE).start < read.end:
                raise ConfigurationError("anti-Stokes gate opens before the read pulse ends")

    @property
    def cycles(self) -> int:
        return len({i.cycle for i in self.intervals if i.cycle >= 0})

    @property
    def duration_us(self) -> float:
        return self.intervals[-1].end - self.intervals[0].start

    def cycle(self, k: int) -> list[Interval]:
        return [i for i in self.intervals if i.cycle == k]

    def of(self, label) -> list[Interval]:
        label = Label(label)
        return [i for i in self.intervals if i.label is label]


def _single(intervals, label):
    return next(i for i in intervals if i.label is label)


def rf_centers(config: ProtocolConfig) -> list[float]:
    """
    RF pulse centers relative to the write-pulse center, in us.

    By default the n pulses sit at T_spin * (2k + 1) / (2n): each inversion is
    preceded and followed by equal free evolution, so the inhomogeneous spin
    phase refocuses at the read time.
    """
    count = len(config.rf_fwhm_us)
    fractions = config.rf_center_fractions
    if fractions is None:
        fractions = [(2 * k + 1) / (2 * count) for k in range(count)]
    return [f * config.t_spin_us for f in fractions]


def build_timeline(config: ProtocolConfig) -> Timeline:
    """
    Lay out one preparation block.

    Args:
        config (ProtocolConfig): Validated protocol parameters.

    Returns:
        Timeline: prepare, then ``repetitions_per_prep`` cycles.
    """
    write = config.write_window
    read = config.read_window
    stokes = config.stokes_window
    anti_stokes = config.anti_stokes_window
    write_center = (write.start + write.end) / 2.0

    rf = []
    for center, pulse in zip(rf_centers(config), config.rf_sequence):
        center += write_center
        start, end = center - pulse.fwhm_us / 2.0, center + pulse.fwhm_us / 2.0
        if start < stokes.end or end > read.start:
            raise ConfigurationError(
                "RF pulse centered at %g us does not fit between the Stokes gate and the read pulse"
                % center,
                field="rf_fwhm_us",
            )
        if rf and start < rf[-1][1]:
            raise ConfigurationError(
                "RF pulses centered at %g us overlap" % center, field="rf_center_fractions"
            )
        rf.append((start, end, pulse.phase_deg))

    intervals = [Interval(Label.PREPARE, 0.0, config.prepare_ms * 1e3)]
    cursor = intervals[0].end
    for k in range(config.repetitions_per_prep):
        # trial time zero: the Stokes gate opens
        origin = cursor - write.start
        intervals.append(Interval(Label.WRITE, origin + write.start, origin + write.end, k))
        intervals.append(
            Interval(Label.STOKES_GATE, origin + stokes.start, origin + stokes.end, k)
        )
        for start, end, phase in rf:
            intervals.append(Interval(Label.RF_PULSE, origin + start, origin + end, k, phase))
        intervals.append(Interval(Label.READ, origin + read.start, origin + read.end, k))
        intervals.append(
            Interval(
                Label.ANTI_STOKES_GATE, origin + anti_stokes.start, origin + anti_stokes.end, k
            )
        )
        repump_start = origin + anti_stokes.end
        intervals.append(
            Interval(Label.REPUMP, repump_start, repump_start + config.repump_ms * 1e3, k)
        )
        cursor = intervals[-1].end

    timeline = Timeline(tuple(intervals))
    logger.debug(
        "Built timeline with %d cycles over %.3f ms"
        % (timeline.cycles, timeline.duration_us * 1e-3)
    )
    return timeline


def trials_per_second(config: ProtocolConfig) -> float:
    """Average trial rate including the preparation overhead."""
    timeline = build_timeline(config)
    return config.repetitions_per_prep / (timeline.duration_us * 1e-6)


def expected_anti_stokes_time(t_s: float, config: ProtocolConfig) -> float:
    """
    Emission time of the anti-Stokes partner: T_aS = T_spin + 1/Delta - T_S.

    Args:
        t_s (float): Stokes emission time in us, 0 <= T_S <= 1/Delta.
        config (ProtocolConfig): Protocol parameters.
    """
    if not 0.0 <= t_s <= config.inv_delta_us:
        raise DomainError(
            "T_S = %g us lies outside [0, 1/Delta = %g us]" % (t_s, config.inv_delta_us)
        )
    return config.t_spin_us + config.inv_delta_us - t_s


def check_phase_matching(k_w, k_r, k_s, k_as, tolerance: float = 1e-9) -> bool:
    """True iff |k_W + k_R - k_S - k_aS| <= tolerance."""
    mismatch = (
        np.asarray(k_w, dtype=float)
        + np.asarray(k_r, dtype=float)
        - np.asarray(k_s, dtype=float)
        - np.asarray(k_as, dtype=float)
    )
    return bool(np.linalg.norm(mismatch) <= tolerance)


def phase_matched_geometry(angle_deg: float = 3.0, wavelength_nm: float = 580.04):
    """
    Counter-propagating write/read beams with the Stokes/anti-Stokes modes at
    a small angle, wave-vectors in rad/um.

    Returns:
        tuple: (k_W, k_R, k_S, k_aS), with k_W = -k_R and k_S = -k_aS.
    """
    k = 2.0 * math.pi / (wavelength_nm * 1e-3)
    theta = math.radians(angle_deg)
    k_w = np.array([k, 0.0, 0.0])
    k_s = k * np.array([math.cos(theta), math.sin(theta), 0.0])
    return k_w, -k_w, k_s, -k_s


def mode_count(tau_g: float, tau_c: float) -> int:
    """Number of temporal modes of duration 2 tau_c fitting in the gate."""
    if not tau_g > 0 or not tau_c > 0:
        raise DomainError("tau_g and tau_c must be > 0")
    return math.floor(tau_g / (2.0 * tau_c) + 1e-9)


def config_mode_count(config: ProtocolConfig) -> int:
    if config.n_modes is not None:
        return config.n_modes
    return max(1, mode_count(config.gate_duration_us, config.pair_coherence_fwhm_us))
