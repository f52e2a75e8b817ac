"""
config.py
---------
This module provides ProtocolConfig, the validated parameter set of one
experimental cycle (timing, efficiencies, noise, analysis knobs), and its flat
``key = value`` file format. Keys carry their unit as a suffix, for example
``t_spin_us = 1000``.
"""

import dataclasses
import io
import math
import typing
from dataclasses import dataclass
from typing import NamedTuple

from dotenv import dotenv_values
from dotenv.parser import parse_stream

import logger.logger as log
from ensemble import CombSpec, SpinDecayModel, ToothShape
from errors import ConfigurationError

logger = log.get_logger(__name__)

READOUT_WINDOWS = ("two_tau_c", "bin")
PER_BIN_KEYS = ("eta_r_per_bin", "p_n_per_bin")

_COMB_FIELDS = {
    "period_inv_delta": "inv_delta_us",
    "finesse": "comb_finesse",
    "bandwidth": "comb_bandwidth_mhz",
    "effective_optical_depth": "comb_effective_od",
    "tooth_shape": "comb_tooth_shape",
}


class RFPulse(NamedTuple):
    fwhm_us: float
    phase_deg: float
    chirp_khz: float


class Window(NamedTuple):
    start: float
    end: float

    @property
    def width(self) -> float:
        return self.end - self.start

    def contains(self, t, tolerance: float = 1e-9):
        return (t >= self.start - tolerance) & (t <= self.end + tolerance)


@dataclass(frozen=True)
class ProtocolConfig:
    """
    All timing, efficiency and noise parameters of one experimental cycle.

    Times are in the unit named by the suffix. Trial times are measured from the
    opening of the Stokes gate. Probabilities and efficiencies are in [0, 1].
    ``eta_r_per_bin`` and ``p_n_per_bin`` refer to a bin of ``bin_width_ns``.
    Optional fields left to None are derived: ``beta`` from the
    spontaneous-emission formula, ``eta_r_total`` from ``eta_r_per_bin`` and the
    pair coherence width, ``n_modes`` from the gate and the pair coherence
    width, the RF pulse centers from a uniform echo placement.
    """

    inv_delta_us: float = 20.0
    gate_duration_us: float = 10.0
    t_spin_us: float = 1000.0
    write_bandwidth_mhz: float = 2.0
    read_transfer: float = 0.75
    rf_fwhm_us: tuple[float, ...] = (45.0, 90.0, 45.0)
    rf_phase_deg: tuple[float, ...] = (0.0, 90.0, 0.0)
    rf_chirp_khz: tuple[float, ...] = (100.0, 100.0, 100.0)
    rf_center_fractions: tuple[float, ...] | None = None
    p_s: float = 0.002
    eta_r_per_bin: float = 0.0045
    p_n_per_bin: float = 0.0012
    bin_width_ns: float = 100.0
    pair_coherence_fwhm_us: float = 0.41
    repetitions_per_prep: int = 14
    t1_optical_ms: float = 1.97
    gamma_es: float = 0.75
    gamma_eg: float = 0.2
    t2_spin_ms: float = 1.0
    spin_decay_model: str = SpinDecayModel.EXPONENTIAL.value
    pulse_duration_us: float = 8.0
    pulse_chirp_mhz: float = 2.0
    stokes_gate_delay_us: float = 1.0
    prepare_ms: float = 575.0
    repump_ms: float = 10.0
    beta: float | None = None
    eta_r_total: float | None = None
    eta_r_reference_t_spin_us: float | None = None
    n_modes: int | None = None
    detector_dead_time_us: float = 0.0
    pairing_window_trials: int = 100
    first_photon_only: bool = False
    readout_window: str = "two_tau_c"
    comb_finesse: float = 4.0
    comb_bandwidth_mhz: float = 5.0
    comb_effective_od: float = 1.0
    comb_tooth_shape: str = ToothShape.GAUSSIAN.value
    spin_fwhm_khz: float = 27.0
    n_ions: int = 10000

    def __post_init__(self):
        for name in ("rf_fwhm_us", "rf_phase_deg", "rf_chirp_khz", "rf_center_fractions"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(float(v) for v in value))
        self._validate()

    def _validate(self):
        positive = (
            "inv_delta_us",
            "gate_duration_us",
            "t_spin_us",
            "write_bandwidth_mhz",
            "pulse_duration_us",
            "bin_width_ns",
            "t1_optical_ms",
            "t2_spin_ms",
            "prepare_ms",
            "repump_ms",
            "spin_fwhm_khz",
        )
        for name in positive:
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigurationError("must be a positive time, got %r" % (value,), field=name)

        for name in ("pair_coherence_fwhm_us", "stokes_gate_delay_us", "detector_dead_time_us"):
            if not getattr(self, name) >= 0:
                raise ConfigurationError("must be >= 0", field=name)

        probabilities = (
            "read_transfer",
            "p_s",
            "eta_r_per_bin",
            "p_n_per_bin",
            "gamma_es",
            "gamma_eg",
            "beta",
            "eta_r_total",
        )
        for name in probabilities:
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ConfigurationError("must lie in [0, 1], got %r" % (value,), field=name)
        if self.gamma_es + self.gamma_eg > 1.0 + 1e-12:
            raise ConfigurationError("gamma_es + gamma_eg must not exceed 1", field="gamma_eg")

        if not self.gate_duration_us < self.inv_delta_us:
            raise ConfigurationError(
                "Stokes gate (%g us) must be shorter than 1/Delta (%g us)"
                % (self.gate_duration_us, self.inv_delta_us),
                field="gate_duration_us",
            )

        count = len(self.rf_fwhm_us)
        if count % 2 == 0:
            raise ConfigurationError(
                "RF sequence needs an odd number of pulses, got %d" % count,
                field="rf_fwhm_us",
            )
        for name in ("rf_phase_deg", "rf_chirp_khz", "rf_center_fractions"):
            value = getattr(self, name)
            if value is not None and len(value) != count:
                raise ConfigurationError("expected %d entries" % count, field=name)
        if any(not fwhm > 0 for fwhm in self.rf_fwhm_us):
            raise ConfigurationError("pulse durations must be > 0", field="rf_fwhm_us")
        if self.rf_center_fractions is not None and any(
            not 0.0 < f < 1.0 for f in self.rf_center_fractions
        ):
            raise ConfigurationError("fractions must lie in (0, 1)", field="rf_center_fractions")

        for name in ("repetitions_per_prep", "pairing_window_trials", "n_ions"):
            if getattr(self, name) < 1:
                raise ConfigurationError("must be >= 1", field=name)
        if self.n_modes is not None and self.n_modes < 1:
            raise ConfigurationError("must be >= 1", field="n_modes")
        if self.n_modes is None and self.pair_coherence_fwhm_us == 0:
            raise ConfigurationError(
                "a zero pair coherence width needs an explicit n_modes",
                field="pair_coherence_fwhm_us",
            )
        if self.eta_r_reference_t_spin_us is not None and self.eta_r_reference_t_spin_us < 0:
            raise ConfigurationError("must be >= 0", field="eta_r_reference_t_spin_us")

        try:
            SpinDecayModel(self.spin_decay_model)
        except ValueError:
            raise ConfigurationError(
                "unknown model %r" % (self.spin_decay_model,), field="spin_decay_model"
            )
        if self.readout_window not in READOUT_WINDOWS:
            raise ConfigurationError(
                "must be one of %s" % ", ".join(READOUT_WINDOWS), field="readout_window"
            )
        self.comb_spec()

    @property
    def stokes_window(self) -> Window:
        """Stokes gate [0, tau_g]: trial time is measured from its opening, in us."""
        return Window(0.0, self.gate_duration_us)

    @property
    def anti_stokes_window(self) -> Window:
        """Conjugate gate: T_aS = T_spin + 1/Delta - T_S maps the Stokes gate onto it."""
        stokes = self.stokes_window
        return Window(self.tau_peak_us - stokes.end, self.tau_peak_us - stokes.start)

    @property
    def write_window(self) -> Window:
        """Write pulse, ending ``stokes_gate_delay_us`` before the Stokes gate opens."""
        end = -self.stokes_gate_delay_us
        return Window(end - self.pulse_duration_us, end)

    @property
    def read_window(self) -> Window:
        """Read pulse, T_spin after the write pulse."""
        write = self.write_window
        return Window(write.start + self.t_spin_us, write.end + self.t_spin_us)

    @property
    def tau_peak_us(self) -> float:
        """Expected correlation peak T_spin + 1/Delta."""
        return self.t_spin_us + self.inv_delta_us

    @property
    def bin_width_us(self) -> float:
        return self.bin_width_ns * 1e-3

    @property
    def rf_sequence(self) -> list[RFPulse]:
        return [
            RFPulse(fwhm, phase, chirp)
            for fwhm, phase, chirp in zip(self.rf_fwhm_us, self.rf_phase_deg, self.rf_chirp_khz)
        ]

    def comb_spec(self) -> CombSpec:
        values = {name: getattr(self, key) for name, key in _COMB_FIELDS.items()}
        try:
            return CombSpec(**values)
        except ConfigurationError as e:
            raise ConfigurationError(str(e).split(": ", 1)[-1], field=_COMB_FIELDS.get(e.field))

    def replace(self, **changes) -> "ProtocolConfig":
        unknown = set(changes) - {f.name for f in dataclasses.fields(self)}
        if unknown:
            raise ConfigurationError("unknown field(s) %s" % ", ".join(sorted(unknown)))
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}


def stokes_gate(config: ProtocolConfig) -> Window:
    return config.stokes_window


def anti_stokes_gate(config: ProtocolConfig) -> Window:
    return config.anti_stokes_window


def _split_hint(hint):
    args = typing.get_args(hint)
    if type(None) in args:
        return next(a for a in args if a is not type(None)), True
    return hint, False


_HINTS = typing.get_type_hints(ProtocolConfig)


def sweepable_fields() -> list[str]:
    """Numeric scalar fields that a parameter sweep may vary."""
    names = []
    for name, hint in _HINTS.items():
        base, _ = _split_hint(hint)
        if base in (float, int):
            names.append(name)
    return names


def parse_value(name: str, text: str):
    """Convert the text of one config entry to the type of field ``name``."""
    if name not in _HINTS:
        raise ConfigurationError("unknown configuration key", field=name)
    base, optional = _split_hint(_HINTS[name])
    text = text.strip()
    if optional and text.lower() in ("none", ""):
        return None
    try:
        if base is bool:
            lowered = text.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return lowered in ("true", "1", "yes")
        if base is int:
            return int(text)
        if base is float:
            return float(text)
        if typing.get_origin(base) is tuple:
            return tuple(float(v) for v in text.split(",") if v.strip())
        return text
    except ValueError:
        raise ConfigurationError("cannot parse %r" % text, field=name)


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def _line_of(binding) -> int:
    # the parser folds blank lines into the next binding
    text = binding.original.string
    return binding.original.line + text[: len(text) - len(text.lstrip())].count("\n")


def parse_config(text: str, source: str = "<string>") -> ProtocolConfig:
    """
    Parse ``key = value`` lines into a ProtocolConfig.

    Args:
        text (str): File contents. ``#`` starts a comment.
        source (str): Name used in error messages.
    """
    seen = set()
    for binding in parse_stream(io.StringIO(text)):
        if binding.error or (binding.key is not None and binding.value is None):
            raise ConfigurationError("%s:%d: expected 'key = value'" % (source, _line_of(binding)))
        if binding.key is None:
            continue
        if binding.key in seen:
            raise ConfigurationError("%s:%d: duplicate key" % (source, _line_of(binding)), field=binding.key)
        seen.add(binding.key)

    raw = dotenv_values(stream=io.StringIO(text), interpolate=False)
    values = {key: parse_value(key, value) for key, value in raw.items()}

    if any(key in values for key in PER_BIN_KEYS) and "bin_width_ns" not in values:
        raise ConfigurationError(
            "%s sets per-bin quantities without a bin width tag" % source,
            field="bin_width_ns",
        )
    return ProtocolConfig(**values)


def load_config(path: str | None) -> ProtocolConfig:
    """Load a config file; None gives the defaults."""
    if path is None:
        return ProtocolConfig()
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigurationError("cannot read config file %s: %s" % (path, e))
    config = parse_config(text, source=path)
    logger.debug("Loaded config from %s" % path)
    return config


def dump_config(config: ProtocolConfig) -> str:
    return "".join("%s = %s\n" % (k, format_value(v)) for k, v in config.to_dict().items())


def save_config(config: ProtocolConfig, path: str):
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_config(config))
