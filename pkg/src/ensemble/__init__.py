"""
__init__.py
-----------
This package models the rare-earth ensemble shaped into an atomic frequency comb: ion sampling, collective optical coherence and its echoes, and spin-storage dephasing.
"""

from .comb import (
    FWHM_TO_SIGMA,
    CombSpec,
    EchoPeak,
    IonPopulation,
    ToothShape,
    coherence_trace,
    collective_coherence,
    comb_cdf,
    comb_density,
    derive_seeds,
    echo_amplitude,
    rephasing_efficiency_bound,
    sample_ions,
    write_coherence_trace,
)
from .spin import (
    SpinDecayModel,
    spin_coherence_after_echo,
    spin_free_decay,
    spin_storage_factor,
)
