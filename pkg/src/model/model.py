"""
model.py
--------
Closed-form models of the photon-pair source: the cross-correlation of a
two-mode squeezed vacuum with finite readout and uncorrelated noise, the
write-induced spontaneous-emission fraction beta, and the goodness-of-fit
check of measured points against a model curve. No parameter is ever fitted.
"""

import math
from dataclasses import dataclass, field

import numpy as np

import logger.logger as log
from errors import ConfigurationError, DomainError

logger = log.get_logger(__name__)


@dataclass(frozen=True)
class ModelParams:
    """
    Parameters of the cross-correlation model, for a bin of ``bin_width_ns``.

    Args:
        p_s (float): Probability to emit at least one Stokes photon.
        eta_r (float): Conditional readout efficiency per bin.
        beta (float): Write-induced excited population fraction.
        p_n (float): Uncorrelated anti-Stokes noise probability per bin.
        bin_width_ns (float): Bin the per-bin quantities refer to.
    """

    p_s: float
    eta_r: float
    beta: float
    p_n: float
    bin_width_ns: float = 100.0

    def __post_init__(self):
        for name in ("p_s", "eta_r", "beta", "p_n"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError("must lie in [0, 1], got %r" % (value,), field=name)
        if not self.bin_width_ns > 0:
            raise ConfigurationError("must be > 0", field="bin_width_ns")


@dataclass(frozen=True)
class BetaInputs:
    """
    Inputs of the spontaneous-emission fraction.

    Args:
        t_spin (float): Spin storage time in ms.
        t1 (float): Optical excited state lifetime in ms.
        gamma_es (float): Branching ratio |e> -> |s>.
        gamma_eg (float): Branching ratio |e> -> |g>.
        eta_t (float): Read-pulse transfer efficiency.
    """

    t_spin: float
    t1: float = 1.9
    gamma_es: float = 0.75
    gamma_eg: float = 0.2
    eta_t: float = 0.75

    def __post_init__(self):
        if not self.t1 > 0:
            raise ConfigurationError("must be > 0", field="t1")
        if self.t_spin < 0:
            raise ConfigurationError("must be >= 0", field="t_spin")
        for name in ("gamma_es", "gamma_eg", "eta_t"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError("must lie in [0, 1], got %r" % (value,), field=name)
        if self.gamma_es + self.gamma_eg > 1.0 + 1e-12:
            raise ConfigurationError("gamma_es + gamma_eg must not exceed 1", field="gamma_eg")


def g_model(params: ModelParams) -> float:
    """g_SaS = 1 + eta_R / ((eta_R + beta) p_S + p_n)."""
    denominator = (params.eta_r + params.beta) * params.p_s + params.p_n
    if denominator <= 0:
        raise DomainError("model denominator (eta_R + beta) p_S + p_n is zero")
    return 1.0 + params.eta_r / denominator


def g_ideal(p_s: float) -> float:
    """Noiseless, lossless-noise limit 1 + 1/p_S."""
    if not 0.0 < p_s <= 1.0:
        raise DomainError("p_S must lie in (0, 1]")
    return 1.0 + 1.0 / p_s


def compute_beta(inputs: BetaInputs) -> float:
    """
    Fraction of the write-induced excited population emitting in the
    anti-Stokes gate.

    Two contributions: ions still in |e> after the read pulse (weight 1 - eta_T,
    decayed over T_spin), and ions that decayed into the state holding the
    excitation (|s> for the first half of the storage, |g> for the second after
    the population inversion) and are re-excited by the read pulse.
    """
    half = math.exp(-inputs.t_spin / (2.0 * inputs.t1))
    full = math.exp(-inputs.t_spin / inputs.t1)
    decayed = (1.0 - half) * (inputs.gamma_es + half * inputs.gamma_eg) * inputs.eta_t
    remaining = (1.0 - inputs.eta_t) * inputs.gamma_es * full
    return decayed + remaining


@dataclass(frozen=True, eq=False)
class ModelCurve:
    """g_SaS evaluated over a p_S grid, with the parameters that produced it."""

    p_s: np.ndarray
    g: np.ndarray
    eta_r: float
    beta: float
    p_n: float
    bin_width_ns: float = 100.0
    provenance: dict = field(default_factory=dict)

    def evaluate(self, p_s: float) -> float:
        return g_model(ModelParams(p_s, self.eta_r, self.beta, self.p_n, self.bin_width_ns))

    def write(self, path: str):
        header = [
            "# eta_r = %r" % self.eta_r,
            "# beta = %r" % self.beta,
            "# p_n = %r" % self.p_n,
            "# bin_width_ns = %r" % self.bin_width_ns,
        ]
        header += ["# %s = %s" % (k, v) for k, v in self.provenance.items()]
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(header) + "\n")
            f.write("p_s\tg\n")
            for p, g in zip(self.p_s, self.g):
                f.write("%r\t%r\n" % (float(p), float(g)))
        logger.info("Wrote model curve (%d points) to %s" % (self.p_s.size, path))


def model_curve(
    p_s_grid,
    eta_r: float,
    beta: float,
    p_n: float,
    bin_width_ns: float = 100.0,
    provenance: dict | None = None,
) -> ModelCurve:
    """Pointwise g_model over a non-empty p_S grid."""
    grid = np.atleast_1d(np.asarray(p_s_grid, dtype=float))
    if grid.size == 0:
        raise DomainError("p_S grid is empty")
    values = np.array(
        [g_model(ModelParams(float(p), eta_r, beta, p_n, bin_width_ns)) for p in grid]
    )
    return ModelCurve(grid, values, eta_r, beta, p_n, bin_width_ns, dict(provenance or {}))


def predicted_cauchy_schwarz(params: ModelParams, g_ss: float = 2.0, g_as_as: float = 2.0) -> float:
    """R = g_SaS^2 / (g_SS g_aSaS) with thermal marginals by default."""
    if g_ss <= 0 or g_as_as <= 0:
        raise DomainError("auto-correlations must be > 0")
    return g_model(params) ** 2 / (g_ss * g_as_as)


@dataclass(frozen=True, eq=False)
class ModelComparison:
    chi_square: float
    dof: int
    pulls: np.ndarray

    @property
    def reduced_chi_square(self) -> float:
        return self.chi_square / self.dof if self.dof else math.nan


def compare_model_to_analysis(curve: ModelCurve, measured) -> ModelComparison:
    """
    Chi-square of measured (p_S, g, sigma) points against the curve.

    The curve is evaluated at each measured p_S from its own parameters; the
    number of degrees of freedom is the number of points since nothing is fitted.
    """
    points = [tuple(map(float, m)) for m in measured]
    if not points:
        raise DomainError("need at least one measured point")
    pulls = []
    for p_s, g, sigma in points:
        if not sigma > 0:
            raise DomainError("measured sigma must be > 0, got %r at p_S = %r" % (sigma, p_s))
        pulls.append((g - curve.evaluate(p_s)) / sigma)
    pulls = np.array(pulls)
    return ModelComparison(float(np.sum(pulls**2)), len(points), pulls)
