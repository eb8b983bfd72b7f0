"""Low-resolution DAC quantizer and its linearized models.

Two linearizations are provided for the baseband signal ``x = B s`` with
``E[s s^H] = (p_s/U) I``:

* AQNM (any ``b >= 1``): ``Q(x) ~ sqrt(1 - eps_b) x + d`` with a diagonal
  distortion covariance.
* Bussgang (``b = 1``): ``Q(x) = W x + d`` with ``W`` the per-rail LMMSE gain
  and the distortion covariance obtained from the complex arcsine law.

:func:`quantize` is the actual nonlinearity; it is used to validate the
models by Monte-Carlo simulation and never inside the design path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .exceptions import SingularScalingError

__all__ = [
    "QuantizationModel",
    "distortion_factor",
    "aqnm_model",
    "bussgang_model",
    "ideal_model",
    "quantization_model",
    "quantize",
    "CLIP_STDS",
    "BussgangCheck",
    "bussgang_check",
    "aqnm_distortion_ratio",
]

#: Few-bit quantizer clips each rail at this many rail standard deviations.
CLIP_STDS = 3.0


@dataclass(frozen=True)
class QuantizationModel:
    """Linear gain plus additive distortion describing ``Q(B s)``.

    Attributes
    ----------
    kind : {"aqnm", "bussgang", "ideal"}
    gain : ndarray, shape (n_rf, n_rf)
        Real diagonal gain ``W``.
    distortion_cov : ndarray, shape (n_rf, n_rf)
        Hermitian PSD covariance ``Sigma`` of the additive distortion.
    bits : int or float
        DAC resolution, ``math.inf`` for the ideal model.
    distortion_factor : float or None
        ``eps_b`` (AQNM only).
    input_cov : ndarray or None
        Covariance of the unquantized rails ``(p_s/U) B B^H``.
    output_cov : ndarray or None
        Covariance of the quantizer output (Bussgang only).
    output_scale : float
        Amplitude applied to the one-bit DAC output; 1 gives unit-power rails.
    """

    kind: str
    gain: np.ndarray
    distortion_cov: np.ndarray
    bits: float
    distortion_factor: Optional[float] = None
    input_cov: Optional[np.ndarray] = None
    output_cov: Optional[np.ndarray] = None
    output_scale: float = 1.0

    @property
    def n_rf(self) -> int:
        return self.gain.shape[0]

    def rescaled(self, amplitude: float) -> "QuantizationModel":
        """Model of ``amplitude * Q(x)``: gain scales linearly, covariances quadratically."""
        a = float(amplitude)
        return replace(
            self,
            gain=a * self.gain,
            distortion_cov=a * a * self.distortion_cov,
            output_cov=None if self.output_cov is None else a * a * self.output_cov,
            output_scale=a * self.output_scale,
        )

    def transmit_power(self, baseband: np.ndarray, p_s: float, n_users: int) -> float:
        """``(p_s/U) ||W B||_F^2 + tr(Sigma)``, the RF-chain space power of ``Q(B s)``."""
        wb = self.gain @ baseband
        return float(p_s / n_users * np.vdot(wb, wb).real + np.trace(self.distortion_cov).real)


def distortion_factor(bits: int) -> float:
    """AQNM distortion factor ``eps_b = (pi*sqrt(3)/2) * 2**(-2b)``."""
    if isinstance(bits, bool) or not isinstance(bits, (int, np.integer, float)) or bits < 1:
        raise ValueError(f"bits must be >= 1, got {bits!r}")
    if math.isinf(bits):
        return 0.0
    return math.pi * math.sqrt(3.0) / 2.0 * 2.0 ** (-2.0 * bits)


def _input_cov(baseband, p_s, n_users):
    B = np.asarray(baseband, dtype=complex)
    if B.ndim != 2:
        raise ValueError("baseband must be a 2-D matrix")
    return B, (p_s / n_users) * (B @ B.conj().T)


def aqnm_model(baseband, bits: int, p_s: float, n_users: int) -> QuantizationModel:
    B, cov_x = _input_cov(baseband, p_s, n_users)
    eps = distortion_factor(bits)
    if eps >= 1.0:
        raise ArithmeticError(f"distortion factor {eps} >= 1")
    n_rf = B.shape[0]
    rail_power = np.sum(np.abs(B) ** 2, axis=1)
    return QuantizationModel(
        kind="aqnm",
        gain=math.sqrt(1.0 - eps) * np.eye(n_rf),
        distortion_cov=np.diag(p_s * eps / n_users * rail_power).astype(complex),
        bits=int(bits),
        distortion_factor=eps,
        input_cov=cov_x,
    )


def bussgang_model(baseband, p_s: float, n_users: int,
                   allow_zero_rows: bool = False) -> QuantizationModel:
    """One-bit Bussgang decomposition for unit-power output rails.

    With ``D = diag(Sigma_x)`` the gain is ``sqrt(2/pi) D^{-1/2}`` and the
    output covariance is
    ``(2/pi) [arcsin(D^-1/2 Re(Sigma_x) D^-1/2) + j arcsin(D^-1/2 Im(Sigma_x) D^-1/2)]``.

    Rows of ``baseband`` that are identically zero make ``D`` singular and
    raise :class:`SingularScalingError`, unless ``allow_zero_rows`` is set;
    then those rails are excluded and carry zero gain and zero distortion.
    """
    B, cov_x = _input_cov(baseband, p_s, n_users)
    n_rf = B.shape[0]
    power = cov_x.diagonal().real.copy()
    active = power > 0.0
    if not np.all(active) and not allow_zero_rows:
        raise SingularScalingError(
            f"baseband rows {np.flatnonzero(~active).tolist()} are zero; "
            "one-bit Bussgang gain is undefined")

    gain = np.zeros((n_rf, n_rf))
    out_cov = np.zeros((n_rf, n_rf), dtype=complex)
    idx = np.flatnonzero(active)
    if idx.size:
        inv_sqrt = 1.0 / np.sqrt(power[idx])
        sub = cov_x[np.ix_(idx, idx)]
        norm = sub * inv_sqrt[:, None] * inv_sqrt[None, :]
        # rounding can push normalized correlations a hair past +-1
        rho_re = np.clip(norm.real, -1.0, 1.0)
        rho_im = np.clip(norm.imag, -1.0, 1.0)
        # arcsin is ill-conditioned at 1; the diagonal is exact by construction
        np.fill_diagonal(rho_re, 1.0)
        np.fill_diagonal(rho_im, 0.0)
        out_cov[np.ix_(idx, idx)] = 2.0 / np.pi * (np.arcsin(rho_re) + 1j * np.arcsin(rho_im))
        gain[idx, idx] = math.sqrt(2.0 / np.pi) * inv_sqrt

    dist = out_cov - gain @ cov_x @ gain
    dist = 0.5 * (dist + dist.conj().T)
    return QuantizationModel(
        kind="bussgang",
        gain=gain,
        distortion_cov=dist,
        bits=1,
        input_cov=cov_x,
        output_cov=out_cov,
    )


def ideal_model(n_rf: int) -> QuantizationModel:
    return QuantizationModel(kind="ideal", gain=np.eye(n_rf),
                             distortion_cov=np.zeros((n_rf, n_rf), dtype=complex),
                             bits=math.inf, distortion_factor=0.0)


def quantization_model(baseband, bits, p_s: float, n_users: int,
                       allow_zero_rows: bool = False) -> QuantizationModel:
    """Pick the linearization used by the baseband design for ``bits``.

    Bussgang for one bit, AQNM for few bits, the identity for ``math.inf``.
    """
    if math.isinf(bits):
        return ideal_model(np.asarray(baseband).shape[0])
    if bits == 1:
        return bussgang_model(baseband, p_s, n_users, allow_zero_rows=allow_zero_rows)
    return aqnm_model(baseband, int(bits), p_s, n_users)


def _midrise_levels(bits: int) -> np.ndarray:
    """Reconstruction levels of the clipped midrise quantizer for a unit-variance rail."""
    n_levels = 2 ** bits
    step = 2.0 * CLIP_STDS / n_levels
    return -CLIP_STDS + step * (np.arange(n_levels) + 0.5)


def _midrise_output_rms(bits: int) -> float:
    levels = _midrise_levels(bits)
    step = levels[1] - levels[0]
    edges = np.concatenate(([-np.inf], levels[:-1] + step / 2.0, [np.inf]))
    pmf = np.diff(ndtr(edges))
    return math.sqrt(float(pmf @ levels ** 2))


def quantize(signal, bits, std=None) -> np.ndarray:
    """Apply a ``bits``-bit DAC independently to the real and imaginary rails.

    Parameters
    ----------
    signal : array_like of complex
    bits : int or float
        ``1`` maps each element to ``(sign(Re) + 1j*sign(Im)) / sqrt(2)``
        (zero maps to ``+1``). ``math.inf`` returns the input unchanged.
        Otherwise a uniform midrise quantizer with ``2**bits`` levels per rail
        is used, clipping at ``+-3`` rail standard deviations, with the output
        rescaled so a Gaussian input keeps its expected power.
    std : float or array_like, optional
        RMS value ``sqrt(E|x|^2)`` of the input, broadcast against ``signal``.
        Defaults to the RMS over all elements of ``signal``. Only used for
        ``bits > 1``.
    """
    x = np.asarray(signal, dtype=complex)
    if math.isinf(bits):
        return x.copy()
    if isinstance(bits, bool) or bits < 1 or int(bits) != bits:
        raise ValueError(f"bits must be a positive integer or inf, got {bits!r}")
    bits = int(bits)
    if bits == 1:
        re = np.where(x.real >= 0.0, 1.0, -1.0)
        im = np.where(x.imag >= 0.0, 1.0, -1.0)
        return (re + 1j * im) / math.sqrt(2.0)

    if std is None:
        std = math.sqrt(float(np.mean(np.abs(x) ** 2))) if x.size else 0.0
    rail_std = np.broadcast_to(np.asarray(std, dtype=float), x.shape) / math.sqrt(2.0)
    levels = _midrise_levels(bits)
    gain = 1.0 / _midrise_output_rms(bits)
    n_levels = levels.size
    step = levels[1] - levels[0]
    safe = np.where(rail_std > 0.0, rail_std, 1.0)

    def rail(v):
        u = v / safe
        k = np.clip(np.floor((u + CLIP_STDS) / step), 0, n_levels - 1).astype(int)
        return np.where(rail_std > 0.0, levels[k] * gain * rail_std, 0.0)

    return rail(x.real) + 1j * rail(x.imag)


@dataclass(frozen=True)
class BussgangCheck:
    """Monte-Carlo agreement of the one-bit quantizer with its Bussgang model.

    ``output_z`` is the largest ``|empirical - model| / standard_error`` over
    the entries of the output covariance, ``residual_z`` the same for the
    cross-covariance between the distortion and the input (model value 0).
    """

    output_z: float
    residual_z: float
    n_samples: int

    def passed(self, n_std: float = 3.0) -> bool:
        return self.output_z <= n_std and self.residual_z <= n_std


def _entry_z(samples: np.ndarray, expected: np.ndarray) -> np.ndarray:
    # samples: (..., n); complex standard error of each entry's sample mean
    n = samples.shape[-1]
    mean = samples.mean(axis=-1)
    se = np.sqrt(np.mean(np.abs(samples - mean[..., None]) ** 2, axis=-1) / n)
    # entries that are deterministic (se == 0) must match to rounding
    err = np.maximum(np.abs(mean - expected) - 1e-12, 0.0)
    return np.where(se > 0.0, err / np.where(se > 0.0, se, 1.0), np.where(err > 0.0, np.inf, 0.0))


def bussgang_check(baseband, p_s: float, n_users: int, n_samples: int,
                   rng: np.random.Generator) -> BussgangCheck:
    """Simulate ``quantize(B s, 1)`` and compare with :func:`bussgang_model`."""
    B = np.asarray(baseband, dtype=complex)
    model = bussgang_model(B, p_s, n_users)
    amp = math.sqrt(p_s / n_users / 2.0)
    s = amp * (rng.standard_normal((n_users, n_samples))
               + 1j * rng.standard_normal((n_users, n_samples)))
    x = B @ s
    q = quantize(x, 1)
    out = _entry_z(q[:, None, :] * q[None, :, :].conj(), model.output_cov)
    d = q - model.gain @ x
    res = _entry_z(d[:, None, :] * x[None, :, :].conj(), np.zeros(model.gain.shape))
    return BussgangCheck(output_z=float(out.max()), residual_z=float(res.max()),
                         n_samples=n_samples)


def aqnm_distortion_ratio(bits: int, n_samples: int, rng: np.random.Generator) -> float:
    """Empirical ``E|Q(x) - sqrt(1-eps_b) x|^2 / (eps_b E|x|^2)`` for Gaussian ``x``."""
    x = (rng.standard_normal(n_samples) + 1j * rng.standard_normal(n_samples)) / math.sqrt(2.0)
    eps = distortion_factor(bits)
    d = quantize(x, bits, std=1.0) - math.sqrt(1.0 - eps) * x
    return float(np.mean(np.abs(d) ** 2) / (eps * np.mean(np.abs(x) ** 2)))
