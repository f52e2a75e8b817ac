"""
spin.py
-------
Spin-storage dephasing. The 34.5 MHz spin line is inhomogeneously broadened
(about 27 kHz); without rephasing the spin wave dies within roughly 10 us. An
odd-count RF echo refocuses that broadening at the read time, leaving a
residual homogeneous decay with time constant T2 (about 1 ms).
"""

import math
from enum import Enum

import numpy as np

from errors import DomainError

from .comb import IonPopulation, weighted_phase_sum


class SpinDecayModel(str, Enum):
    EXPONENTIAL = "exponential"
    GAUSSIAN = "gaussian"


def spin_storage_factor(model, t2_spin: float, t_spin: float) -> float:
    """
    Residual storage efficiency after the echo sequence.

    Args:
        model (SpinDecayModel | str): ``exponential`` gives exp(-T/T2),
            ``gaussian`` gives exp(-(T/T2)^2).
        t2_spin (float): Residual coherence time, same unit as ``t_spin``.
        t_spin (float): Spin storage time.

    Returns:
        float: Efficiency in [0, 1], 1 at T_spin = 0.
    """
    try:
        model = SpinDecayModel(model)
    except ValueError:
        raise DomainError("unknown spin decay model %r" % (model,))
    if not t2_spin > 0:
        raise DomainError("T2_spin must be > 0")
    if t_spin < 0:
        raise DomainError("T_spin must be >= 0")

    ratio = t_spin / t2_spin
    if model is SpinDecayModel.EXPONENTIAL:
        return math.exp(-ratio)
    return math.exp(-(ratio**2))


def spin_free_decay(ions: IonPopulation, t):
    """
    Spin coherence |sum_j |c_j|^2 exp(-i 2 pi s_j t)|^2 without any echo.

    Args:
        ions (IonPopulation): Sampled ions, spin detunings in kHz.
        t (float | array): Storage time(s) in us.
    """
    times = np.asarray(t, dtype=float)
    values = weighted_phase_sum(ions.spin_detunings, ions.weights**2, np.atleast_1d(times), 1e-3)
    values = np.abs(values) ** 2
    if times.ndim == 0:
        return float(values[0])
    return values.reshape(times.shape)


def spin_coherence_after_echo(
    ions: IonPopulation,
    t_spin: float,
    t2_spin: float,
    model=SpinDecayModel.EXPONENTIAL,
    refocus_offset: float = 0.0,
) -> float:
    """
    Spin coherence at the read pulse after an odd-count echo sequence.

    The echo cancels the inhomogeneous phase exactly at its refocusing time; a
    read pulse ``refocus_offset`` us away from it sees the free decay over the
    offset on top of the residual homogeneous decay.

    Args:
        ions (IonPopulation): Sampled ions.
        t_spin (float): Storage time in us.
        t2_spin (float): Residual coherence time in us.
        model (SpinDecayModel | str): Residual decay shape.
        refocus_offset (float): Read time minus echo refocusing time, in us.
    """
    residual = spin_storage_factor(model, t2_spin, t_spin)
    return residual * float(spin_free_decay(ions, abs(refocus_offset)))
