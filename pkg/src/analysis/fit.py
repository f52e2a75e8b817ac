"""
fit.py
------
Gaussian-plus-baseline fit of the g(tau) correlation peak. The fitted FWHM is
the pair coherence time tau_c.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

import logger.logger as log
from ensemble import FWHM_TO_SIGMA
from errors import AnalysisError

from .correlation import CorrelationResult

logger = log.get_logger(__name__)

MIN_FIT_BINS = 5


@dataclass(frozen=True)
class PeakFit:
    center: float
    fwhm: float
    amplitude: float
    baseline: float
    fit_rms: float
    center_error: float = math.nan
    fwhm_error: float = math.nan


def gaussian_peak(tau, center, sigma, amplitude, baseline):
    return baseline + amplitude * np.exp(-0.5 * ((tau - center) / sigma) ** 2)


def fit_peak(
    result: CorrelationResult,
    center_hint: float | None = None,
    window_us: float | None = None,
) -> PeakFit:
    """
    Least-squares Gaussian-plus-baseline fit over the defined bins.

    Args:
        result (CorrelationResult): g(tau) with errors; bins with a positive
            error are weighted by it.
        center_hint (float | None): Expected peak position; defaults to the
            maximum of g.
        window_us (float | None): Only fit bins within this distance of the
            hint.

    Returns:
        PeakFit: center and FWHM in us, amplitude and baseline in units of g.
    """
    taus = np.asarray(result.taus, dtype=float)
    values = np.asarray(result.g_values, dtype=float)
    errors = np.asarray(result.g_errors, dtype=float)
    use = np.isfinite(values)
    if not use.any():
        raise AnalysisError("no defined bins to fit")
    if center_hint is None:
        center_hint = float(taus[use][np.argmax(values[use])])
    if window_us is not None:
        use &= np.abs(taus - center_hint) <= window_us
    if np.count_nonzero(use) < MIN_FIT_BINS:
        raise AnalysisError(
            "peak fit needs at least %d defined bins, got %d" % (MIN_FIT_BINS, np.count_nonzero(use))
        )

    x, y, sigma = taus[use], values[use], errors[use]
    weighted = bool(np.all(np.isfinite(sigma)) and np.all(sigma > 0))
    baseline = float(np.median(y))
    peak = int(np.argmax(y))
    amplitude = float(y[peak] - baseline)
    step = float(np.median(np.diff(x))) if x.size > 1 else 1.0
    above = np.count_nonzero(y - baseline > amplitude / 2.0)
    width = max(above * step, step) / FWHM_TO_SIGMA
    p0 = [float(x[peak]), width, amplitude if amplitude != 0 else 1.0, baseline]

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", OptimizeWarning)
            popt, pcov = curve_fit(
                gaussian_peak,
                x,
                y,
                p0=p0,
                sigma=sigma if weighted else None,
                absolute_sigma=weighted,
                maxfev=10000,
                ftol=1e-12,
                xtol=1e-12,
            )
    except (RuntimeError, OptimizeWarning, ValueError) as e:
        raise AnalysisError(
            "peak fit did not converge (%s); start center %.4g us, width %.3g us, %d bins"
            % (e, p0[0], p0[1] * FWHM_TO_SIGMA, x.size)
        )

    center, fitted_sigma, fitted_amplitude, fitted_baseline = (float(v) for v in popt)
    fwhm = FWHM_TO_SIGMA * abs(fitted_sigma)
    if not (math.isfinite(fwhm) and fwhm > 0 and taus.min() <= center <= taus.max()):
        raise AnalysisError(
            "peak fit diverged: center %.6g us, FWHM %.4g us" % (center, fwhm)
        )
    residual = y - gaussian_peak(x, *popt)
    with np.errstate(invalid="ignore"):
        perr = np.sqrt(np.diag(pcov)) if np.all(np.isfinite(pcov)) else np.full(4, math.nan)
    fit = PeakFit(
        center=center,
        fwhm=fwhm,
        amplitude=fitted_amplitude,
        baseline=fitted_baseline,
        fit_rms=float(np.sqrt(np.mean(residual**2))),
        center_error=float(perr[0]),
        fwhm_error=float(FWHM_TO_SIGMA * perr[1]),
    )
    logger.debug("Peak fit: center %.4f us, FWHM %.4f us" % (fit.center, fit.fwhm))
    return fit
