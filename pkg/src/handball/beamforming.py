"""Hybrid analog/digital beamformer design for ISAC with low-resolution DACs.

The analog stage picks constant-modulus columns from steering dictionaries:
one (precoder, combiner) pair per user by correlating with the unconstrained
SVD/MMSE solution, and one precoder column per target by greedy matching
pursuit on the sensing snapshot. The baseband stage zero-forces the effective
channel, splits power between communication and sensing rows, and scales the
result to the transmit budget using the DAC quantization model.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .array_model import Dictionary, SensingScene, SystemConfig, UserChannel
from .exceptions import DegenerateChannelError, InfeasiblePowerError, SingularScalingError
from .quantization import QuantizationModel, quantization_model

__all__ = [
    "HybridBeamformer",
    "UnconstrainedPair",
    "unconstrained_precoder",
    "unconstrained_combiner",
    "unconstrained_pair",
    "pair_scores",
    "select_user_beams",
    "select_target_beams",
    "design_analog",
    "effective_channel",
    "split_baseband",
    "design_baseband",
    "design",
    "POWER_RULES",
]

#: Scores within this relative distance of the maximum count as ties (lowest index wins).
TIE_RTOL = 1e-10

POWER_RULES = ("budget", "literal")


@dataclass(frozen=True)
class UnconstrainedPair:
    precoder: np.ndarray
    combiner: np.ndarray


@dataclass(frozen=True)
class HybridBeamformer:
    """Analog precoder ``A = [A_C A_S]``, user combiners ``C`` and baseband ``B``.

    ``baseband`` and ``quantization`` stay ``None`` until :func:`design_baseband`
    has run. ``diagnostics`` collects non-fatal observations (duplicate
    dictionary picks, residual norms, rank deficiency, radiated power).
    """

    analog_comm: np.ndarray
    analog_sense: np.ndarray
    combiners: np.ndarray
    selected_tx_indices: tuple
    selected_rx_indices: tuple
    baseband: Optional[np.ndarray] = None
    quantization: Optional[QuantizationModel] = None
    diagnostics: dict = field(default_factory=dict)
    analog: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "analog", np.hstack([self.analog_comm, self.analog_sense]))

    @property
    def n_users(self) -> int:
        return self.analog_comm.shape[1]

    @property
    def n_targets(self) -> int:
        return self.analog_sense.shape[1]


def _matrix(channel) -> np.ndarray:
    return channel.matrix if isinstance(channel, UserChannel) else np.asarray(channel)


def _fix_phase(vec: np.ndarray) -> np.ndarray:
    mags = np.abs(vec)
    k = int(np.flatnonzero(mags > 1e-12 * mags.max())[0])
    out = vec * (np.conj(vec[k]) / mags[k])
    out[k] = mags[k]
    return out


def _argmax_first(scores: np.ndarray) -> int:
    """Flat index of the maximum; near-ties resolve to the lowest index."""
    flat = np.ravel(scores)
    top = flat.max()
    return int(np.flatnonzero(flat >= top * (1.0 - TIE_RTOL))[0])


def unconstrained_precoder(channel) -> np.ndarray:
    """Dominant right singular vector of the channel, first nonzero entry real positive."""
    H = _matrix(channel)
    if not np.any(H):
        raise DegenerateChannelError("channel matrix is identically zero")
    _, _, vh = np.linalg.svd(H, full_matrices=False)
    return _fix_phase(vh[0].conj())


def unconstrained_combiner(channel, precoder, p_s: float, noise_var: float) -> np.ndarray:
    """Single-stream MMSE combiner ``(1/p_s) (|H f|^2 + noise_var/p_s)^-1 H f``."""
    hf = _matrix(channel) @ np.asarray(precoder)
    return hf / (p_s * (np.vdot(hf, hf).real + noise_var / p_s))


def unconstrained_pair(channel, p_s: float, noise_var: float) -> UnconstrainedPair:
    f = unconstrained_precoder(channel)
    return UnconstrainedPair(precoder=f, combiner=unconstrained_combiner(channel, f, p_s, noise_var))


def pair_scores(g: np.ndarray, dictionary: Dictionary) -> np.ndarray:
    """``|psi_{p,q}^H g|`` for every dictionary pair, as a ``K x K`` array.

    ``psi_{p,q} = conj(Psi_A[:, p]) kron Psi_C[:, q]``. Reshaping ``g`` to the
    ``n_tx x n_rx`` matrix ``G`` turns the correlation into the bilinear form
    ``Psi_A^T G conj(Psi_C)``, so the ``K^2``-column dictionary is never built.
    """
    n_tx = dictionary.tx_codebook.shape[0]
    n_rx = dictionary.rx_codebook.shape[0]
    G = np.asarray(g).reshape(n_tx, n_rx)
    return np.abs((dictionary.tx_codebook.T @ G) @ dictionary.rx_codebook.conj())


def select_user_beams(pairs: Sequence[UnconstrainedPair], dictionary: Dictionary):
    """Best dictionary (precoder, combiner) index pair for each user."""
    K = dictionary.size
    picks = []
    for pair in pairs:
        g = np.kron(pair.precoder.conj(), pair.combiner)
        p, q = divmod(_argmax_first(pair_scores(g, dictionary)), K)
        picks.append((p, q))
    return picks


def select_target_beams(snapshot: np.ndarray, dictionary: Dictionary, n_targets: int):
    """Greedy matching pursuit over the transmit dictionary.

    Returns the chosen column indices and the residual norm before the first
    pick and after every deflation.
    """
    psi = dictionary.tx_codebook
    residual = np.asarray(snapshot, dtype=complex).copy()
    if residual.shape != (psi.shape[0],):
        raise ValueError(f"snapshot must have length {psi.shape[0]}, got {residual.shape}")
    picks = []
    norms = [float(np.linalg.norm(residual))]
    for _ in range(n_targets):
        z = _argmax_first(np.abs(psi.conj().T @ residual))
        col = psi[:, z]
        residual = residual - col * (np.vdot(col, residual) / np.vdot(col, col).real)
        picks.append(z)
        norms.append(float(np.linalg.norm(residual)))
    return picks, norms


def design_analog(channels: Sequence[UserChannel], sensing: SensingScene,
                  dictionary: Dictionary, config: SystemConfig) -> HybridBeamformer:
    """Greedy analog precoder and combiner selection for users and targets."""
    if len(channels) != config.n_users:
        raise ValueError(f"expected {config.n_users} channels, got {len(channels)}")
    pairs = [unconstrained_pair(ch, config.p_s, config.noise_var) for ch in channels]
    user_picks = select_user_beams(pairs, dictionary)
    target_picks, norms = select_target_beams(sensing.snapshot, dictionary, config.n_targets)

    tx_idx = tuple(p for p, _ in user_picks) + tuple(target_picks)
    rx_idx = tuple(q for _, q in user_picks)
    duplicates = sorted({i for i in tx_idx if tx_idx.count(i) > 1})
    diagnostics = {"sensing_residual_norms": norms, "duplicate_tx_indices": duplicates}
    return HybridBeamformer(
        analog_comm=dictionary.tx_codebook[:, [p for p, _ in user_picks]],
        analog_sense=dictionary.tx_codebook[:, target_picks],
        combiners=dictionary.rx_codebook[:, list(rx_idx)],
        selected_tx_indices=tx_idx,
        selected_rx_indices=rx_idx,
        diagnostics=diagnostics,
    )


def effective_channel(beamformer: HybridBeamformer, channels: Sequence[UserChannel]) -> np.ndarray:
    """Stack of ``c_u^H H_u A`` rows, shape ``(U, n_rf)``."""
    A = beamformer.analog
    C = beamformer.combiners
    return np.vstack([C[:, u].conj() @ _matrix(ch) @ A for u, ch in enumerate(channels)])


def split_baseband(b_bar: np.ndarray, n_users: int, eta: float) -> np.ndarray:
    """Scale communication rows to Frobenius norm ``eta`` and sensing rows to ``1 - eta``."""
    out = np.array(b_bar, dtype=complex)
    for rows, weight in ((slice(0, n_users), eta), (slice(n_users, None), 1.0 - eta)):
        block = out[rows]
        if weight == 0.0:
            block[...] = 0.0
            continue
        norm = np.linalg.norm(block)
        if norm == 0.0:
            raise SingularScalingError("cannot normalize an all-zero baseband block")
        block *= weight / norm
    return out


def design_baseband(beamformer: HybridBeamformer, channels: Sequence[UserChannel],
                    config: SystemConfig, power_rule: str = "budget") -> HybridBeamformer:
    """Zero-forcing baseband precoder with trade-off split and power normalization.

    ``power_rule="budget"`` (default) scales the design so that
    ``(p_s/U) ||W B||_F^2 + tr(Sigma) = p_max`` with ``W`` and ``Sigma``
    evaluated at the final ``B``:

    * ideal and AQNM DACs: ``B = c B_hat`` with
      ``c^2 = p_max / ((p_s/U) ||W B_hat||^2 + tr Sigma(B_hat))``
      (``W`` is scale free and ``Sigma`` quadratic in ``B``);
    * one-bit DACs: ``W B`` and ``Sigma`` do not depend on the scale of
      ``B``, so the one-bit output amplitude is set instead.

    ``power_rule="literal"`` applies
    ``c^2 = (p_max - tr Sigma(B_hat)) / ((p_s/U) ||W(B_hat) B_hat||^2)`` and
    keeps the model evaluated at ``B_hat``; it raises
    :class:`InfeasiblePowerError` when the distortion alone exceeds ``p_max``.
    """
    if power_rule not in POWER_RULES:
        raise ValueError(f"power_rule must be one of {POWER_RULES}, got {power_rule!r}")
    U = config.n_users
    if beamformer.analog.shape[1] != U + config.n_targets:
        raise ValueError("analog precoder width must equal n_users + n_targets")
    diagnostics = dict(beamformer.diagnostics)

    h_eff = effective_channel(beamformer, channels)
    rank = np.linalg.matrix_rank(h_eff)
    if rank < U:
        warnings.warn(f"effective channel is rank deficient ({rank} < {U})", RuntimeWarning,
                      stacklevel=2)
        diagnostics["rank_deficient"] = True
    b_bar = np.linalg.pinv(h_eff)
    b_hat = split_baseband(b_bar, U, config.eta)
    endpoint = config.eta in (0.0, 1.0)
    p_scale = config.p_s / U

    model_hat = quantization_model(b_hat, config.bits, config.p_s, U, allow_zero_rows=endpoint)
    if power_rule == "literal":
        headroom = config.p_max - np.trace(model_hat.distortion_cov).real
        wb = model_hat.gain @ b_hat
        if headroom <= 0.0:
            raise InfeasiblePowerError(
                f"distortion power {config.p_max - headroom:.6g} >= p_max {config.p_max:.6g}")
        scale = math.sqrt(headroom / (p_scale * np.vdot(wb, wb).real))
        baseband = scale * b_hat
        model = model_hat
    elif model_hat.kind == "bussgang":
        scale = math.sqrt(config.p_max / (p_scale * np.vdot(b_hat, b_hat).real))
        baseband = scale * b_hat
        unit = quantization_model(baseband, 1, config.p_s, U, allow_zero_rows=endpoint)
        model = unit.rescaled(math.sqrt(config.p_max / unit.transmit_power(baseband, config.p_s, U)))
    else:
        scale = math.sqrt(config.p_max / model_hat.transmit_power(b_hat, config.p_s, U))
        baseband = scale * b_hat
        model = quantization_model(baseband, config.bits, config.p_s, U)

    A = beamformer.analog
    awb = A @ model.gain @ baseband
    diagnostics["rf_power"] = model.transmit_power(baseband, config.p_s, U)
    diagnostics["radiated_power"] = float(
        p_scale * np.vdot(awb, awb).real
        + np.trace(A @ model.distortion_cov @ A.conj().T).real)
    diagnostics["semi_unitary_error"] = float(
        np.linalg.norm(A.conj().T @ A - np.eye(A.shape[1]), 2))
    return replace(beamformer, baseband=baseband, quantization=model, diagnostics=diagnostics)


def design(channels: Sequence[UserChannel], sensing: SensingScene, dictionary: Dictionary,
           config: SystemConfig, power_rule: str = "budget") -> HybridBeamformer:
    """Run the analog and then the baseband stage."""
    analog = design_analog(channels, sensing, dictionary, config)
    return design_baseband(analog, channels, config, power_rule=power_rule)
