"""Link-level and beampattern evaluation plus seeded Monte-Carlo sweeps."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .array_model import (Dictionary, PathParameters, SystemConfig, UserChannel,
                          build_dictionary, channel_from_paths, generate_channels,
                          generate_sensing_snapshot, steering_matrix)
from .beamforming import HybridBeamformer, design, unconstrained_pair
from .exceptions import DegenerateChannelError, HandballError
from .quantization import QuantizationModel

__all__ = [
    "LinkMetrics",
    "Beampattern",
    "SweepAxis",
    "SweepResult",
    "TrialResult",
    "AXES",
    "siqnr_per_user",
    "sum_rate",
    "link_metrics",
    "transmit_covariance",
    "transmit_beampattern",
    "local_maxima",
    "fd_benchmark",
    "directional_scenario",
    "dictionary_for",
    "apply_axis",
    "trial_rng",
    "run_trial",
    "run_sweep",
]

#: Sweepable axes and the stable stream id each one contributes to trial seeds.
AXES = {"snr_db": 1, "bits": 2, "eta": 3, "n_users": 4, "n_targets": 5}


@dataclass(frozen=True)
class LinkMetrics:
    siqnr: np.ndarray
    sum_rate: float
    per_user_rate: np.ndarray


@dataclass(frozen=True)
class Beampattern:
    angles: np.ndarray
    gain_db: np.ndarray

    @property
    def angles_deg(self) -> np.ndarray:
        return np.degrees(self.angles)


@dataclass(frozen=True)
class SweepAxis:
    name: str
    values: tuple

    def __post_init__(self):
        if self.name not in AXES:
            raise ValueError(f"unknown sweep axis {self.name!r}; expected one of {sorted(AXES)}")
        values = tuple(self.values)
        if not values:
            raise ValueError("sweep axis needs at least one value")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class TrialResult:
    sum_rate: float
    fd_rate: float
    metrics: Optional[LinkMetrics] = None
    beamformer: Optional[HybridBeamformer] = None


@dataclass(frozen=True)
class SweepResult:
    """Mean/std spectral efficiency per axis value.

    ``trial_se`` and ``trial_fd`` keep the per-trial samples (NaN marks a
    skipped trial); ``n_valid`` counts the trials behind each mean.
    """

    axis_name: str
    axis_values: tuple
    mean_se: np.ndarray
    std_se: np.ndarray
    n_trials: int
    config_snapshot: SystemConfig
    n_valid: np.ndarray = field(default=None)
    mean_fd: np.ndarray = field(default=None)
    trial_se: np.ndarray = field(default=None, repr=False)
    trial_fd: np.ndarray = field(default=None, repr=False)
    skipped: tuple = ()

    def to_dict(self) -> dict:
        return {
            "axis_name": self.axis_name,
            "axis_values": [_jsonable(v) for v in self.axis_values],
            "mean_se": [_jsonable(v) for v in self.mean_se],
            "std_se": [_jsonable(v) for v in self.std_se],
            "mean_fd": [_jsonable(v) for v in self.mean_fd],
            "n_valid": [int(v) for v in self.n_valid],
            "n_trials": int(self.n_trials),
            "config_snapshot": self.config_snapshot.to_dict(),
            "skipped": [[_jsonable(s[0]), int(s[1]), s[2]] for s in self.skipped],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SweepResult":
        def arr(key):
            return np.array([_unjson(v) for v in data[key]], dtype=float)
        return cls(
            axis_name=data["axis_name"],
            axis_values=tuple(_unjson(v) for v in data["axis_values"]),
            mean_se=arr("mean_se"),
            std_se=arr("std_se"),
            n_trials=int(data["n_trials"]),
            config_snapshot=SystemConfig(**data["config_snapshot"]),
            n_valid=np.array(data["n_valid"], dtype=int),
            mean_fd=arr("mean_fd"),
            skipped=tuple((_unjson(s[0]), int(s[1]), s[2]) for s in data.get("skipped", [])),
        )


def _jsonable(v):
    v = float(v) if not isinstance(v, (int, np.integer)) else int(v)
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


def _unjson(v):
    if isinstance(v, str):
        return float(v)
    return v


def _model(beamformer, model):
    model = model if model is not None else beamformer.quantization
    if model is None or beamformer.baseband is None:
        raise ValueError("beamformer has no baseband design; run design_baseband first")
    return model


def siqnr_per_user(beamformer: HybridBeamformer, channels: Sequence[UserChannel],
                   model: Optional[QuantizationModel], config: SystemConfig,
                   strict: bool = False) -> np.ndarray:
    """Signal to interference, quantization and noise ratio of every user.

    The quantization term is the linearized distortion power
    ``c_u^H H_u A Sigma A^H H_u^H c_u``. ``strict=True`` drops it and keeps
    only the gain ``W`` inside the signal and interference terms.
    """
    model = _model(beamformer, model)
    A = beamformer.analog
    awb = A @ model.gain @ beamformer.baseband
    p = config.p_s / config.n_users
    out = np.empty(len(channels))
    for u, ch in enumerate(channels):
        c = beamformer.combiners[:, u]
        row = c.conj() @ ch.matrix
        gains = np.abs(row @ awb) ** 2
        signal = p * gains[u]
        interference = p * (gains.sum() - gains[u])
        noise = config.noise_var * np.vdot(c, c).real
        distortion = 0.0
        if not strict:
            ra = row @ A
            distortion = float(np.real(ra @ model.distortion_cov @ ra.conj()))
        out[u] = signal / (interference + distortion + noise)
    return out


def sum_rate(siqnr) -> LinkMetrics:
    siqnr = np.asarray(siqnr, dtype=float)
    rates = np.log2(1.0 + siqnr)
    return LinkMetrics(siqnr=siqnr, sum_rate=float(rates.sum()), per_user_rate=rates)


def link_metrics(beamformer, channels, config, model=None, strict=False) -> LinkMetrics:
    return sum_rate(siqnr_per_user(beamformer, channels, model, config, strict=strict))


def transmit_covariance(beamformer: HybridBeamformer, model: Optional[QuantizationModel],
                        config: SystemConfig) -> np.ndarray:
    """``(p_s/U) A W B B^H W^H A^H + A Sigma A^H``."""
    model = _model(beamformer, model)
    A = beamformer.analog
    awb = A @ model.gain @ beamformer.baseband
    cov = config.p_s / config.n_users * (awb @ awb.conj().T)
    cov += A @ model.distortion_cov @ A.conj().T
    return cov


def transmit_beampattern(beamformer: HybridBeamformer, model: Optional[QuantizationModel],
                         config: SystemConfig, grid=None) -> Beampattern:
    """Radiated power versus angle, normalized to a 0 dB peak.

    ``grid`` defaults to 1 degree steps over [0, 180] degrees.
    """
    if grid is None:
        grid = np.radians(np.arange(0.0, 181.0, 1.0))
    grid = np.asarray(grid, dtype=float)
    cov = transmit_covariance(beamformer, model, config)
    a = steering_matrix(grid, config.n_tx)
    power = np.real(np.sum(a.conj() * (cov @ a), axis=0))
    power = np.maximum(power, 0.0)
    peak = power.max()
    if peak <= 0.0:
        raise ValueError("transmit covariance radiates no power")
    with np.errstate(divide="ignore"):
        gain_db = 10.0 * np.log10(power / peak)
    return Beampattern(angles=grid, gain_db=gain_db)


def local_maxima(pattern: Beampattern, floor_db: float = -np.inf) -> np.ndarray:
    """Angles (radians) of interior and edge local maxima at or above ``floor_db``."""
    g = pattern.gain_db
    left = np.concatenate(([-np.inf], g[:-1]))
    right = np.concatenate((g[1:], [-np.inf]))
    mask = (g >= left) & (g >= right) & (g >= floor_db)
    return pattern.angles[mask]


def fd_benchmark(channels: Sequence[UserChannel], config: SystemConfig) -> float:
    """Sum SE of interference-free fully digital SVD/MMSE transmission with ideal DACs."""
    total = 0.0
    p = config.p_s / config.n_users
    for ch in channels:
        try:
            pair = unconstrained_pair(ch, config.p_s, config.noise_var)
        except DegenerateChannelError:
            continue
        v, f = pair.combiner, pair.precoder
        gain = abs(np.vdot(v, ch.matrix @ f)) ** 2
        total += math.log2(1.0 + p * gain / (config.noise_var * np.vdot(v, v).real))
    return total


def directional_scenario(config: SystemConfig, user_angles, target_angles,
                         rng: np.random.Generator):
    """Single-path users and point targets at fixed directions.

    User ``u`` gets a unit-gain path leaving and arriving at ``user_angles[u]``;
    targets get unit-modulus reflection coefficients with random phase.
    ``config`` must already have matching ``n_users`` and ``n_targets``.
    """
    user_angles = np.asarray(user_angles, dtype=float)
    if user_angles.size != config.n_users or len(target_angles) != config.n_targets:
        raise ValueError("direction lists must match n_users and n_targets")
    channels = [channel_from_paths([PathParameters(1.0 + 0j, float(th), float(th))],
                                   config.n_rx, config.n_tx) for th in user_angles]
    rcs = np.exp(2j * np.pi * rng.random(len(target_angles)))
    scene = generate_sensing_snapshot(config, target_angles, rng, rcs=rcs)
    return channels, scene


def apply_axis(config: SystemConfig, name: str, value) -> SystemConfig:
    """Config with one sweep axis set; SNR is realized through ``noise_var``."""
    if name == "snr_db":
        return config.replace(noise_var=config.p_s / 10.0 ** (float(value) / 10.0))
    if name == "bits":
        return config.replace(bits=value)
    if name == "eta":
        return config.replace(eta=float(value))
    if name in ("n_users", "n_targets"):
        return config.replace(**{name: int(value)})
    raise ValueError(f"unknown sweep axis {name!r}; expected one of {sorted(AXES)}")


def trial_rng(seed: int, axis_name: str, trial: int) -> np.random.Generator:
    """Independent PCG64 stream for one trial.

    Every value along an axis reuses the same stream for a given trial, so
    comparisons across axis values see common channel and scene draws.
    """
    return np.random.default_rng([int(seed), AXES[axis_name], int(trial)])


@lru_cache(maxsize=32)
def _dictionary(n_tx, n_rx, grid_size, grid_span) -> Dictionary:
    cfg = SystemConfig(n_tx=n_tx, n_rx=n_rx, n_users=1, n_targets=1, grid_size=grid_size,
                       grid_span=grid_span)
    return build_dictionary(cfg)


def dictionary_for(config: SystemConfig) -> Dictionary:
    if config.grid_size < config.n_rf:
        raise ValueError(f"grid_size ({config.grid_size}) must be at least n_rf ({config.n_rf})")
    return _dictionary(config.n_tx, config.n_rx, config.grid_size, config.grid_span)


def run_trial(config: SystemConfig, rng: np.random.Generator, strict: bool = False,
              power_rule: str = "budget", keep: bool = False) -> TrialResult:
    """Draw users and targets, design the hybrid beamformer, and score it."""
    channels = generate_channels(config, rng)
    targets = rng.uniform(0.0, np.pi, config.n_targets)
    scene = generate_sensing_snapshot(config, targets, rng)
    fd = fd_benchmark(channels, config)
    bf = design(channels, scene, dictionary_for(config), config, power_rule=power_rule)
    metrics = link_metrics(bf, channels, config, strict=strict)
    return TrialResult(sum_rate=metrics.sum_rate, fd_rate=fd,
                       metrics=metrics if keep else None, beamformer=bf if keep else None)


def _run_cell(args):
    config, axis_name, trial, strict, power_rule = args
    try:
        res = run_trial(config, trial_rng(config.seed, axis_name, trial), strict=strict,
                        power_rule=power_rule)
    except HandballError as exc:
        return math.nan, math.nan, f"{type(exc).__name__}: {exc}"
    return res.sum_rate, res.fd_rate, None


def run_sweep(config: SystemConfig, axis: SweepAxis, n_trials: int = 200, strict: bool = False,
              power_rule: str = "budget", n_jobs: int = 1) -> SweepResult:
    """Monte-Carlo spectral efficiency along one axis.

    Trials that fail in the design (for example an infeasible power budget)
    are excluded from the statistics and listed in ``skipped`` as
    ``(axis_value, trial, reason)``. The result only depends on ``config``,
    ``axis`` and ``n_trials``; ``n_jobs > 1`` runs trials in worker processes.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    configs = [apply_axis(config, axis.name, v) for v in axis.values]
    tasks = [(cfg, axis.name, t, strict, power_rule) for cfg in configs for t in range(n_trials)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_cell, tasks, chunksize=max(1, len(tasks) // (4 * n_jobs))))
    else:
        results = [_run_cell(t) for t in tasks]

    se = np.array([r[0] for r in results], dtype=float).reshape(len(configs), n_trials)
    fd = np.array([r[1] for r in results], dtype=float).reshape(len(configs), n_trials)
    skipped = tuple((axis.values[i // n_trials], i % n_trials, r[2])
                    for i, r in enumerate(results) if r[2] is not None)
    n_valid = np.sum(~np.isnan(se), axis=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(se, axis=1)
        std = np.nanstd(se, axis=1)
        mean_fd = np.nanmean(fd, axis=1)
    return SweepResult(axis_name=axis.name, axis_values=axis.values, mean_se=mean, std_se=std,
                       n_trials=n_trials, config_snapshot=config, n_valid=n_valid,
                       mean_fd=mean_fd, trial_se=se, trial_fd=fd, skipped=skipped)

