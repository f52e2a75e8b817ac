"""
source.py
---------
This module provides the stochastic photon-pair source. Each trial emits a
thermal number of Stokes photons per temporal mode of the Stokes gate; each
Stokes photon heralds one spin excitation that is read out as an anti-Stokes
photon at T_spin + 1/Delta - T_S (plus Gaussian timing jitter) with the total
retrieval efficiency. Write-induced fluorescence and readout noise add
uncorrelated anti-Stokes detections spread over the anti-Stokes gate.

Trials are simulated in fixed blocks. Every block draws from its own
``SeedSequence(seed, spawn_key=(stream, block))`` generator, so the output for
a seed does not depend on how many worker threads run the blocks.
"""

import asyncio
import math
import warnings
from dataclasses import dataclass
from functools import partial
from typing import NamedTuple

import numpy as np
from pyee.asyncio import AsyncIOEventEmitter
from scipy import special

import logger.logger as log
from ensemble import FWHM_TO_SIGMA, spin_storage_factor
from errors import ConfigurationError, DomainError, SingleExcitationWarning
from model import BetaInputs, compute_beta
from protocol import ProtocolConfig, Window, config_mode_count
from threadpool.threadpool import ThreadPoolManager

from .records import (
    NOISE_DTYPE,
    PAIR_DTYPE,
    RECORD_DTYPE,
    Channel,
    NoiseOrigin,
    SourceTruth,
    empty_records,
)

logger = log.get_logger(__name__)

TRIALS_PER_BLOCK = 1 << 16
SINGLE_EXCITATION_LIMIT = 0.1


def thermal_sample(mean: float, rng: np.random.Generator, size=None):
    """
    Draw from the thermal (Bose-Einstein) distribution P(n) = mu^n / (1 + mu)^(n+1).

    Args:
        mean (float): Mean photon number mu >= 0.
        rng (np.random.Generator): Random source.
        size: Output shape, None for a scalar.
    """
    if not mean >= 0 or not math.isfinite(mean):
        raise DomainError("thermal mean must be finite and >= 0, got %r" % (mean,))
    if mean == 0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    return rng.geometric(1.0 / (1.0 + mean), size) - 1


def resolved_beta(config: ProtocolConfig) -> float:
    """The configured beta, or the one derived from the atomic parameters."""
    if config.beta is not None:
        return config.beta
    return compute_beta(
        BetaInputs(
            t_spin=config.t_spin_us * 1e-3,
            t1=config.t1_optical_ms,
            gamma_es=config.gamma_es,
            gamma_eg=config.gamma_eg,
            eta_t=config.read_transfer,
        )
    )


def central_bin_fraction(config: ProtocolConfig) -> float:
    """Share of a Gaussian correlation peak that falls in the bin centered on it."""
    sigma = config.pair_coherence_fwhm_us / FWHM_TO_SIGMA
    if sigma == 0:
        return 1.0
    return float(special.erf(config.bin_width_us / (2.0 * math.sqrt(2.0) * sigma)))


def effective_readout(config: ProtocolConfig) -> float:
    """
    Total retrieval efficiency of a heralded excitation.

    ``eta_r_total`` wins when set. Otherwise the per-bin efficiency is divided
    by the central-bin fraction of the peak. With ``eta_r_reference_t_spin_us``
    set, the value is taken to hold at that storage time and is rescaled by the
    spin storage factor to ``t_spin_us``.
    """
    if config.eta_r_total is not None:
        total = config.eta_r_total
    else:
        total = config.eta_r_per_bin / central_bin_fraction(config)

    if config.eta_r_reference_t_spin_us is not None:
        t2_us = config.t2_spin_ms * 1e3
        total *= spin_storage_factor(
            config.spin_decay_model, t2_us, config.t_spin_us
        ) / spin_storage_factor(config.spin_decay_model, t2_us, config.eta_r_reference_t_spin_us)

    if total > 1.0:
        raise ConfigurationError(
            "implies a total retrieval efficiency of %g > 1" % total, field="eta_r_per_bin"
        )
    return total


@dataclass(frozen=True)
class SourcePlan:
    """Per-trial rates derived once from a config."""

    n_modes: int
    mode_width_us: float
    mean_per_mode: float
    eta_total: float
    jitter_sigma_us: float
    stokes: Window
    anti_stokes: Window
    tau_peak_us: float
    write_noise_mean: float
    readout_noise_mean: float
    dead_time_us: float

    @classmethod
    def from_config(cls, config: ProtocolConfig) -> "SourcePlan":
        n_modes = config_mode_count(config)
        bins_per_gate = config.gate_duration_us / config.bin_width_us
        return cls(
            n_modes=n_modes,
            mode_width_us=config.gate_duration_us / n_modes,
            mean_per_mode=config.p_s / n_modes,
            eta_total=effective_readout(config),
            jitter_sigma_us=config.pair_coherence_fwhm_us / FWHM_TO_SIGMA,
            stokes=config.stokes_window,
            anti_stokes=config.anti_stokes_window,
            tau_peak_us=config.tau_peak_us,
            write_noise_mean=resolved_beta(config) * config.p_s * bins_per_gate,
            readout_noise_mean=config.p_n_per_bin * bins_per_gate,
            dead_time_us=config.detector_dead_time_us,
        )


class SimulationResult(NamedTuple):
    records: np.ndarray
    truth: SourceTruth | None
    n_trials: int


def _dead_time_mask(trial, channel, timestamp, dead_time: float) -> np.ndarray:
    """
    Records surviving a non-paralyzable dead time per (trial, channel). Input
    is sorted by (trial, time).
    """
    keep = np.ones(trial.size, dtype=bool)
    if dead_time <= 0 or trial.size < 2:
        return keep
    order = np.lexsort((timestamp, channel, trial))
    t, tr, ch = timestamp[order], trial[order], channel[order]
    same = (tr[1:] == tr[:-1]) & (ch[1:] == ch[:-1])
    if not np.any(same & (np.diff(t) < dead_time)):
        return keep
    last = -math.inf
    for k in range(t.size):
        if k > 0 and not same[k - 1]:
            last = -math.inf
        if t[k] - last < dead_time:
            keep[order[k]] = False
        else:
            last = t[k]
    return keep


def simulate_block(
    plan: SourcePlan,
    seed: int,
    stream: int,
    block: int,
    n_trials: int,
    with_truth: bool = False,
):
    """
    Simulate trials ``[block * TRIALS_PER_BLOCK, ...)`` of one stream.

    The full block is always drawn and then truncated, so a trial's content
    depends only on (seed, stream, trial_id).

    Returns:
        tuple: (records, SourceTruth | None)
    """
    first = block * TRIALS_PER_BLOCK
    limit = min(TRIALS_PER_BLOCK, n_trials - first)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, block)))
    size = TRIALS_PER_BLOCK
    modes = plan.n_modes

    counts = thermal_sample(plan.mean_per_mode, rng, (size, modes)).ravel()
    slots = np.repeat(np.arange(size * modes), counts)
    pair_trial = slots // modes
    mode = slots % modes
    t_s = plan.stokes.start + (mode + rng.random(slots.size)) * plan.mode_width_us
    survived = rng.random(slots.size) < plan.eta_total
    jitter = rng.normal(0.0, plan.jitter_sigma_us, slots.size) if plan.jitter_sigma_us > 0 else 0.0
    t_as = plan.tau_peak_us - t_s + jitter
    in_gate = (t_as >= plan.anti_stokes.start) & (t_as <= plan.anti_stokes.end)

    n_write = rng.poisson(plan.write_noise_mean, size)
    n_read = rng.poisson(plan.readout_noise_mean, size)
    write_trial = np.repeat(np.arange(size), n_write)
    read_trial = np.repeat(np.arange(size), n_read)
    write_t = rng.uniform(plan.anti_stokes.start, plan.anti_stokes.end, write_trial.size)
    read_t = rng.uniform(plan.anti_stokes.start, plan.anti_stokes.end, read_trial.size)

    pair_keep = pair_trial < limit
    pair_trial, t_s, t_as = pair_trial[pair_keep], t_s[pair_keep], t_as[pair_keep]
    survived, in_gate = survived[pair_keep], in_gate[pair_keep]
    emitted = survived & in_gate
    write_keep, read_keep = write_trial < limit, read_trial < limit
    noise_trial = np.concatenate([write_trial[write_keep], read_trial[read_keep]])
    noise_t = np.concatenate([write_t[write_keep], read_t[read_keep]])
    noise_origin = np.concatenate(
        [
            np.full(int(write_keep.sum()), NoiseOrigin.WRITE_INDUCED_FLUORESCENCE, dtype=np.uint8),
            np.full(int(read_keep.sum()), NoiseOrigin.READOUT_NOISE, dtype=np.uint8),
        ]
    )

    # kind: 0 Stokes of a pair, 1 anti-Stokes of a pair, 2 noise
    emitted_index = np.flatnonzero(emitted)
    trial = np.concatenate([pair_trial, pair_trial[emitted_index], noise_trial])
    channel = np.concatenate(
        [
            np.full(pair_trial.size, Channel.STOKES, dtype=np.uint8),
            np.full(emitted_index.size + noise_trial.size, Channel.ANTI_STOKES, dtype=np.uint8),
        ]
    )
    timestamp = np.concatenate([t_s, t_as[emitted_index], noise_t])
    kind = np.concatenate(
        [
            np.zeros(pair_trial.size, dtype=np.uint8),
            np.ones(emitted_index.size, dtype=np.uint8),
            np.full(noise_trial.size, 2, dtype=np.uint8),
        ]
    )
    ref = np.concatenate([np.arange(pair_trial.size), emitted_index, np.arange(noise_trial.size)])

    order = np.lexsort((timestamp, trial))
    trial, channel, timestamp, kind, ref = (
        trial[order],
        channel[order],
        timestamp[order],
        kind[order],
        ref[order],
    )
    keep = _dead_time_mask(trial, channel, timestamp, plan.dead_time_us)

    records = np.empty(int(keep.sum()), dtype=RECORD_DTYPE)
    records["trial_id"] = trial[keep].astype(np.uint64) + np.uint64(first)
    records["channel"] = channel[keep]
    records["timestamp_us"] = timestamp[keep]

    truth = None
    if with_truth:
        pairs = np.zeros(pair_trial.size, dtype=PAIR_DTYPE)
        pairs["trial_id"] = pair_trial.astype(np.uint64) + np.uint64(first)
        pairs["t_s"] = t_s
        pairs["t_as"] = t_as
        pairs["survived_readout"] = survived
        pairs["stokes_detected"][ref[keep & (kind == 0)]] = True
        pairs["anti_stokes_detected"][ref[keep & (kind == 1)]] = True
        noise = np.zeros(noise_trial.size, dtype=NOISE_DTYPE)
        noise["trial_id"] = noise_trial.astype(np.uint64) + np.uint64(first)
        noise["channel"] = Channel.ANTI_STOKES
        noise["timestamp_us"] = noise_t
        noise["origin"] = noise_origin
        noise["detected"][ref[keep & (kind == 2)]] = True
        truth = SourceTruth(pairs, np.sort(noise, order=["trial_id", "timestamp_us"]))
    return records, truth


class PhotonSource(AsyncIOEventEmitter):
    """
    Seeded photon-pair source for one configuration.

    Emits ``block`` with (index, records) for every block in trial order and
    ``finished`` with the SimulationResult once all blocks are in.

    Args:
        config (ProtocolConfig): Protocol parameters.
        seed (int): Root seed.
        stream (int): Independent stream index under the same seed.
        threadpool (ThreadPoolManager | None): Pool that runs the blocks.
        with_truth (bool): Keep the SourceTruth of generated events.
    """

    def __init__(
        self,
        config: ProtocolConfig,
        seed: int,
        stream: int = 0,
        threadpool: ThreadPoolManager | None = None,
        with_truth: bool = False,
    ):
        super().__init__()
        if seed < 0:
            raise DomainError("seed must be >= 0")
        self.config = config
        self.seed = seed
        self.stream = stream
        self.threadpool = threadpool
        self.with_truth = with_truth
        self.plan = SourcePlan.from_config(config)

        if self.plan.mean_per_mode > SINGLE_EXCITATION_LIMIT:
            warnings.warn(
                "mean photon number per mode %.3g exceeds %.2g; multi-pair events dominate"
                % (self.plan.mean_per_mode, SINGLE_EXCITATION_LIMIT),
                SingleExcitationWarning,
                stacklevel=2,
            )

    def _blocks(self, n_trials: int) -> list[int]:
        if n_trials < 1:
            raise DomainError("n_trials must be >= 1, got %r" % (n_trials,))
        return list(range(math.ceil(n_trials / TRIALS_PER_BLOCK)))

    def _task(self, n_trials: int):
        return partial(simulate_block, self.plan, self.seed, self.stream, n_trials=n_trials, with_truth=self.with_truth)

    def _collect(self, results, n_trials: int) -> SimulationResult:
        for index, (records, _) in enumerate(results):
            self.emit("block", index, records)
        records = np.concatenate([r for r, _ in results]) if results else empty_records()
        truth = SourceTruth.concatenate(t for _, t in results) if self.with_truth else None
        result = SimulationResult(records, truth, n_trials)
        logger.info(
            "Simulated %d trials (stream %d): %d records"
            % (n_trials, self.stream, records.size)
        )
        self.emit("finished", result)
        return result

    def generate(self, n_trials: int) -> SimulationResult:
        blocks = self._blocks(n_trials)
        task = self._task(n_trials)
        logger.debug(
            "Simulating %d trials in %d blocks, %d modes, eta %.4g"
            % (n_trials, len(blocks), self.plan.n_modes, self.plan.eta_total)
        )
        if self.threadpool is None:
            results = [task(block) for block in blocks]
        else:
            results = self.threadpool.map_ordered(task, blocks)
        return self._collect(results, n_trials)

    async def agenerate(self, n_trials: int) -> SimulationResult:
        blocks = self._blocks(n_trials)
        task = self._task(n_trials)
        if self.threadpool is None:
            loop = asyncio.get_running_loop()
            results = [await loop.run_in_executor(None, task, block) for block in blocks]
        else:
            results = await self.threadpool.gather_ordered(task, blocks)
        return self._collect(list(results), n_trials)


def run_trials(
    config: ProtocolConfig,
    n_trials: int,
    seed: int,
    stream: int = 0,
    threadpool: ThreadPoolManager | None = None,
    with_truth: bool = False,
) -> SimulationResult:
    """
    Simulate ``n_trials`` trials.

    Args:
        config (ProtocolConfig): Protocol parameters.
        n_trials (int): Number of trials, >= 1.
        seed (int): Root seed; equal seeds give byte-identical records.
        stream (int): Independent stream index, used by sweeps.
        threadpool (ThreadPoolManager | None): Optional worker pool.
        with_truth (bool): Also return the SourceTruth.
    """
    source = PhotonSource(config, seed, stream, threadpool, with_truth)
    return source.generate(n_trials)
