"""Uniform linear array model: steering vectors, channels, sensing echoes, dictionaries.

All angles are in radians. Array responses use half-wavelength spacing, so a
direction enters only through ``sin(angle)``; ``theta`` and ``pi - theta``
therefore produce identical steering vectors.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "SystemConfig",
    "PathParameters",
    "UserChannel",
    "SensingScene",
    "Dictionary",
    "steering_vector",
    "steering_matrix",
    "channel_from_paths",
    "generate_channel",
    "generate_channels",
    "generate_sensing_snapshot",
    "build_dictionary",
    "crandn",
]

GRID_SPANS = ("pi", "2pi")


@dataclass(frozen=True)
class SystemConfig:
    """Scenario dimensions, powers and design knobs.

    Defaults follow the desk-scale version of the narrowband ISAC scenario:
    128 transmit antennas, 10 receive antennas per user, 3 users, 3 targets,
    5 scattering paths per user, unit symbol power and power budget, and an
    SNR of 10 dB (``noise_var = 0.1``). The 512-point angle grid keeps the
    dictionary spacing in ``sin`` below one beamwidth of the 128-element array.

    ``n_rf`` may be omitted, in which case it is set to ``n_users + n_targets``.
    ``bits`` is a positive integer or ``math.inf`` for an ideal DAC.
    """

    n_tx: int = 128
    n_rx: int = 10
    n_users: int = 3
    n_targets: int = 3
    n_rf: Optional[int] = None
    n_paths: int = 5
    grid_size: int = 512
    bits: Union[int, float] = 1
    p_s: float = 1.0
    p_max: float = 1.0
    noise_var: float = 0.1
    eta: float = 0.5
    seed: int = 0
    grid_span: str = "pi"
    per_path_gains: bool = False

    def __post_init__(self):
        if self.n_rf is None:
            object.__setattr__(self, "n_rf", self.n_users + self.n_targets)
        for name in ("n_tx", "n_rx", "n_users", "n_targets", "n_paths", "grid_size"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.n_rf != self.n_users + self.n_targets:
            raise ValueError(
                f"n_rf must equal n_users + n_targets ({self.n_users + self.n_targets}), "
                f"got {self.n_rf}")
        object.__setattr__(self, "bits", _normalize_bits(self.bits))
        for name in ("p_s", "p_max", "noise_var"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float, np.floating)) and math.isfinite(value)
                    and value > 0):
                raise ValueError(f"{name} must be a finite positive number, got {value!r}")
        if not (0.0 <= self.eta <= 1.0):
            raise ValueError(f"eta must lie in [0, 1], got {self.eta!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) \
                or self.seed < 0:
            raise ValueError(f"seed must be an unsigned integer, got {self.seed!r}")
        if self.grid_span not in GRID_SPANS:
            raise ValueError(f"grid_span must be one of {GRID_SPANS}, got {self.grid_span!r}")

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(self.p_s / self.noise_var)

    def replace(self, **changes) -> "SystemConfig":
        """Copy with ``changes`` applied; ``n_rf`` is re-derived unless given."""
        if "n_rf" not in changes and ({"n_users", "n_targets"} & changes.keys()):
            changes["n_rf"] = None
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        if math.isinf(out["bits"]):
            out["bits"] = "inf"
        return out


def _normalize_bits(bits):
    if isinstance(bits, str):
        if bits.strip().lower() in ("inf", "infinity", "∞"):
            return math.inf
        try:
            bits = int(bits)
        except ValueError:
            raise ValueError(f"bits must be a positive integer or 'inf', got {bits!r}") from None
    if isinstance(bits, bool):
        raise ValueError(f"bits must be a positive integer or 'inf', got {bits!r}")
    if isinstance(bits, (float, np.floating)):
        if math.isinf(bits) and bits > 0:
            return math.inf
        if not bits.is_integer():
            raise ValueError(f"bits must be a positive integer or 'inf', got {bits!r}")
        bits = int(bits)
    if not isinstance(bits, (int, np.integer)) or bits < 1:
        raise ValueError(f"bits must be a positive integer or 'inf', got {bits!r}")
    return int(bits)


@dataclass(frozen=True)
class PathParameters:
    gain: complex
    aoa: float
    aod: float


@dataclass(frozen=True)
class UserChannel:
    """One user's ``n_rx x n_tx`` channel matrix and the paths that built it."""

    matrix: np.ndarray
    paths: tuple = field(default_factory=tuple)

    @property
    def n_rx(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_tx(self) -> int:
        return self.matrix.shape[1]

    def reconstruct(self) -> np.ndarray:
        return channel_from_paths(self.paths, self.n_rx, self.n_tx).matrix


@dataclass(frozen=True)
class SensingScene:
    target_angles: np.ndarray
    rcs: np.ndarray
    echoes: np.ndarray
    snapshot: np.ndarray


@dataclass(frozen=True)
class Dictionary:
    """Transmit/receive steering codebooks sampled on a common angle grid."""

    tx_codebook: np.ndarray
    rx_codebook: np.ndarray
    grid: np.ndarray

    @property
    def size(self) -> int:
        return self.grid.size


def crandn(rng: np.random.Generator, *shape) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def steering_vector(angle: float, n_elements: int) -> np.ndarray:
    """ULA response toward ``angle``.

    Entry ``n`` (zero based) is ``exp(-1j*pi*n*sin(angle)) / sqrt(n_elements)``.
    """
    return steering_matrix(np.array([angle], dtype=float), n_elements)[:, 0]


def steering_matrix(angles, n_elements: int) -> np.ndarray:
    """Stack of steering vectors, one column per angle (``n_elements x len(angles)``)."""
    if isinstance(n_elements, bool) or int(n_elements) != n_elements or n_elements < 1:
        raise ValueError(f"n_elements must be a positive integer, got {n_elements!r}")
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    n = np.arange(int(n_elements))[:, None]
    return np.exp(-1j * np.pi * n * np.sin(angles)[None, :]) / math.sqrt(n_elements)


def channel_from_paths(paths: Sequence[PathParameters], n_rx: int, n_tx: int) -> UserChannel:
    """Assemble ``kappa * sum_l gain_l * a_R(aoa_l) a_T(aod_l)^H``, ``kappa = sqrt(n_rx*n_tx/L)``."""
    paths = tuple(paths)
    if not paths:
        raise ValueError("at least one path is required")
    kappa = math.sqrt(n_rx * n_tx / len(paths))
    a_r = steering_matrix([p.aoa for p in paths], n_rx)
    a_t = steering_matrix([p.aod for p in paths], n_tx)
    gains = np.array([p.gain for p in paths], dtype=complex)
    matrix = kappa * (a_r * gains[None, :]) @ a_t.conj().T
    return UserChannel(matrix=matrix, paths=paths)


def generate_channel(config: SystemConfig, rng: np.random.Generator) -> UserChannel:
    """Draw one NLoS multipath user channel.

    Angles are uniform on ``[0, pi)``. By default a single complex gain is
    shared by all paths of the user; ``config.per_path_gains`` draws one gain
    per path instead.
    """
    L = config.n_paths
    aoa = rng.uniform(0.0, np.pi, L)
    aod = rng.uniform(0.0, np.pi, L)
    if config.per_path_gains:
        gains = crandn(rng, L)
    else:
        gains = np.full(L, crandn(rng, 1)[0])
    paths = tuple(PathParameters(complex(g), float(r), float(t))
                  for g, r, t in zip(gains, aoa, aod))
    return channel_from_paths(paths, config.n_rx, config.n_tx)


def generate_channels(config: SystemConfig, rng: np.random.Generator) -> list:
    return [generate_channel(config, rng) for _ in range(config.n_users)]


def generate_sensing_snapshot(config: SystemConfig, target_angles, rng: np.random.Generator,
                              rcs=None, echoes=None, noise_var=None) -> SensingScene:
    """Array output collected from point targets plus white noise.

    ``rcs`` defaults to standard complex Gaussian draws and ``echoes`` to
    unit-modulus symbols with uniform random phase. ``noise_var`` overrides
    ``config.noise_var`` (zero gives a noiseless snapshot).
    """
    angles = np.atleast_1d(np.asarray(target_angles, dtype=float))
    if angles.ndim != 1:
        raise ValueError("target_angles must be one-dimensional")
    if np.any(~np.isfinite(angles)) or np.any(angles < 0.0) or np.any(angles >= np.pi):
        raise ValueError("target angles must lie in [0, pi)")
    T = angles.size
    if rcs is None:
        rcs = crandn(rng, T)
    if echoes is None:
        echoes = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, T))
    rcs = np.broadcast_to(np.asarray(rcs, dtype=complex), (T,)).copy()
    echoes = np.broadcast_to(np.asarray(echoes, dtype=complex), (T,)).copy()
    sigma2 = config.noise_var if noise_var is None else float(noise_var)
    if sigma2 < 0:
        raise ValueError("noise_var must be non-negative")

    snapshot = np.zeros(config.n_tx, dtype=complex)
    if T:
        snapshot += steering_matrix(angles, config.n_tx) @ (rcs * echoes)
    if sigma2 > 0:
        snapshot += math.sqrt(sigma2) * crandn(rng, config.n_tx)
    return SensingScene(target_angles=angles, rcs=rcs, echoes=echoes, snapshot=snapshot)


def build_dictionary(config: SystemConfig) -> Dictionary:
    """Steering codebooks on a uniform grid of ``grid_size`` angles.

    ``grid_span="pi"`` samples ``[0, pi)`` as ``pi*k/K``; ``"2pi"`` samples
    ``[0, 2*pi)`` as ``2*pi*k/K``.
    """
    K = config.grid_size
    if K < config.n_rf:
        raise ValueError(f"grid_size ({K}) must be at least n_rf ({config.n_rf})")
    span = np.pi if config.grid_span == "pi" else 2.0 * np.pi
    grid = span * np.arange(K) / K
    return Dictionary(tx_codebook=steering_matrix(grid, config.n_tx),
                      rx_codebook=steering_matrix(grid, config.n_rx),
                      grid=grid)
