"""
report.py
---------
This module runs the full analysis of one record stream and writes its
plot-ready outputs: the coincidence histogram, g(tau) with errors and a
``key = value`` summary block.
"""

import math
from dataclasses import dataclass

import numpy as np

import logger.logger as log
from errors import AnalysisError
from protocol import ProtocolConfig, config_mode_count, mode_count
from source import Channel
from threadpool.threadpool import ThreadPoolManager

from .correlation import (
    CorrelationResult,
    auto_correlation,
    cauchy_schwarz,
    cross_correlation,
    readout_efficiency,
)
from .fit import PeakFit, fit_peak
from .histogram import (
    AccidentalEstimate,
    AccidentalMethod,
    CoincidenceHistogram,
    accidental_estimate,
    coincidence_histogram,
    split_channels,
)

logger = log.get_logger(__name__)

UNDEFINED = "undefined"
FIT_WINDOW_US = 2.0


@dataclass(eq=False)
class AnalysisReport:
    histogram: CoincidenceHistogram
    accidentals: AccidentalEstimate
    correlation: CorrelationResult
    peak: PeakFit | None
    summary: dict


def _peak_tau(histogram: CoincidenceHistogram, accidentals: AccidentalEstimate) -> float:
    excess = histogram.counts - accidentals.expected
    return float(histogram.taus[int(np.argmax(excess))])


def summarize(
    records,
    config: ProtocolConfig,
    n_trials: int | None = None,
    method=AccidentalMethod.INTER_TRIAL,
    threadpool: ThreadPoolManager | None = None,
) -> AnalysisReport:
    """
    Histogram, accidentals, g(tau), auto-correlations, R, eta_R and the peak
    fit of one stream.

    Quantities that cannot be computed from the stream are reported as None
    in the summary and logged; an empty stream or one without Stokes
    detections raises AnalysisError.
    """
    method = AccidentalMethod(method)
    times = split_channels(records, config, n_trials)
    if times.stokes_trial.size == 0:
        raise AnalysisError("stream holds no Stokes detections")
    histogram = coincidence_histogram(times, config, threadpool=threadpool)
    accidentals = accidental_estimate(times, config, method, threadpool=threadpool)
    correlation = cross_correlation(histogram, accidentals)

    summary = {
        "n_trials": histogram.n_trials,
        "n_stokes": histogram.n_stokes,
        "n_anti_stokes": histogram.n_anti_stokes,
        "bin_width_ns": histogram.bin_width_ns,
        "accidental_method": method.value,
        "expected_peak_tau_us": config.tau_peak_us,
        "peak_tau_us": _peak_tau(histogram, accidentals),
    }

    central = None
    try:
        central = correlation.at(config.tau_peak_us)
    except AnalysisError as e:
        logger.warning("Central g undefined: %s" % e)
    summary["g_central"] = central.value if central else None
    summary["g_central_err"] = central.error if central else None

    autos = {}
    for channel, key in ((Channel.STOKES, "g_ss"), (Channel.ANTI_STOKES, "g_as_as")):
        try:
            autos[key] = auto_correlation(times, channel, config)
        except AnalysisError as e:
            logger.warning("g_%s not computable: %s" % (channel.label, e))
        summary[key] = autos[key].value if key in autos else None
        summary[key + "_err"] = autos[key].error if key in autos else None

    cs = None
    if central is not None and central.value > 0 and all(
        k in autos and autos[k].value > 0 for k in ("g_ss", "g_as_as")
    ):
        cs = cauchy_schwarz(central, autos["g_ss"], autos["g_as_as"])
    summary["r"] = cs.r if cs else None
    summary["r_lower"] = cs.lower if cs else None
    summary["r_upper"] = cs.upper if cs else None
    summary["r_violation_sigma"] = cs.violation_sigma if cs else None

    eta = readout_efficiency(None, config, histogram=histogram, accidentals=accidentals)
    summary["eta_r"] = eta.value
    summary["eta_r_err"] = eta.error
    summary["eta_r_window"] = config.readout_window

    peak = None
    try:
        peak = fit_peak(correlation, center_hint=config.tau_peak_us, window_us=FIT_WINDOW_US)
    except AnalysisError as e:
        logger.warning("Peak fit failed: %s" % e)
    summary["peak_center_us"] = peak.center if peak else None
    summary["tau_c_fit_us"] = peak.fwhm if peak else None
    summary["tau_c_fit_err_us"] = peak.fwhm_error if peak else None
    if peak is not None and peak.fwhm > 0:
        summary["mode_count"] = mode_count(config.gate_duration_us, peak.fwhm)
    else:
        summary["mode_count"] = config_mode_count(config)

    logger.info(
        "Analysis: g_central %s, R %s, eta_R %.4g"
        % (_format(summary["g_central"]), _format(summary["r"]), eta.value)
    )
    return AnalysisReport(histogram, accidentals, correlation, peak, summary)


def _format(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return UNDEFINED
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_histogram(path: str, histogram: CoincidenceHistogram, accidentals: AccidentalEstimate | None = None):
    with open(path, "w", encoding="utf-8") as f:
        f.write("# n_trials = %d\n" % histogram.n_trials)
        f.write("# n_stokes = %d\n" % histogram.n_stokes)
        f.write("# n_anti_stokes = %d\n" % histogram.n_anti_stokes)
        f.write("# bin_width_ns = %r\n" % float(histogram.bin_width_ns))
        f.write("tau_us\tcounts\taccidentals\n")
        expected = accidentals.expected if accidentals is not None else np.full(histogram.n_bins, math.nan)
        for tau, count, acc in zip(histogram.taus, histogram.counts, expected):
            f.write("%r\t%d\t%s\n" % (float(tau), count, _format(float(acc))))
    logger.debug("Wrote histogram to %s" % path)


def write_correlation(path: str, correlation: CorrelationResult):
    counts = correlation.counts if correlation.counts is not None else np.zeros(correlation.taus.size, dtype=int)
    with open(path, "w", encoding="utf-8") as f:
        f.write("tau_us\tcounts\taccidentals\tg\tg_err\n")
        for tau, count, acc, g, err in zip(
            correlation.taus, counts, correlation.accidentals, correlation.g_values, correlation.g_errors
        ):
            f.write(
                "%r\t%d\t%r\t%s\t%s\n"
                % (float(tau), count, float(acc), _format(float(g)), _format(float(err)))
            )
    logger.debug("Wrote correlation to %s" % path)


def write_summary(path: str, summary: dict):
    with open(path, "w", encoding="utf-8") as f:
        for key, value in summary.items():
            f.write("%s = %s\n" % (key, _format(value)))
    logger.debug("Wrote summary to %s" % path)


def read_summary(path: str) -> dict:
    """Parse a summary block back into a dict of floats, ints and strings."""
    summary = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if "=" not in line:
                continue
            key, text = (part.strip() for part in line.split("=", 1))
            if text == UNDEFINED:
                summary[key] = None
                continue
            for kind in (int, float):
                try:
                    summary[key] = kind(text)
                    break
                except ValueError:
                    continue
            else:
                summary[key] = text
    return summary
