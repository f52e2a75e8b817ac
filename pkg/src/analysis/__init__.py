"""
__init__.py
-----------
This package turns detection record streams into coincidence histograms, accidental estimates, normalized correlations, the Cauchy-Schwarz test, peak fits and readout efficiencies.
"""

from .correlation import (
    CauchySchwarzResult,
    CorrelationResult,
    Estimate,
    auto_correlation,
    cauchy_schwarz,
    cross_correlation,
    readout_efficiency,
    readout_efficiency_from_probabilities,
    readout_window_mask,
)
from .fit import PeakFit, fit_peak, gaussian_peak
from .histogram import (
    AccidentalEstimate,
    AccidentalMethod,
    ChannelTimes,
    CoincidenceHistogram,
    accidental_estimate,
    coincidence_histogram,
    histogram_binning,
    split_channels,
    triangle_density,
)
from .report import (
    AnalysisReport,
    read_summary,
    summarize,
    write_correlation,
    write_histogram,
    write_summary,
)
