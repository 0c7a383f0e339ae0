"""Spectral efficiency and the composite training loss.

Per subchannel k the rate is

    rate_k = log2 det( I + (rho/Ns) * Omega[k]^-1 Lambda[k] Lambda[k]^H )

with effective channel Lambda[k] = W_BB[k]^H W_RF^H H[k] F_RF F_BB[k] and
combined noise covariance Omega[k] = sigma_n2 * W_BB[k]^H W_RF^H W_RF W_BB[k].
The reported spectral efficiency is the mean over subchannels, in bits/s/Hz
(base-2 logarithm).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .config import SystemConfig

__all__ = [
    "RateReport",
    "SpectralEfficiencyError",
    "rates_per_subchannel",
    "spectral_efficiency",
    "total_loss",
]

# Relative ridge added to Omega only when its Cholesky factorization fails.
RIDGE_REL = 1e-12


class SpectralEfficiencyError(RuntimeError):
    """Omega[k] is singular beyond the ridge rescue."""


@dataclass(frozen=True)
class RateReport:
    """Per-subchannel rates (bits/s/Hz) and their mean."""

    per_subchannel: np.ndarray
    mean: float


def _logdet_rate(lam: torch.Tensor, omega: torch.Tensor, snr_scale: float) -> torch.Tensor:
    """log2 det(I + snr_scale * Omega^-1 Lam Lam^H) for batched Ns x Ns blocks.

    Uses the Cholesky factor of Omega to form a Hermitian positive-definite
    matrix with the same determinant, retrying with a trace-scaled ridge on
    the blocks whose factorization fails.
    """
    ns = lam.shape[-1]
    chol, info = torch.linalg.cholesky_ex(omega)
    if bool((info != 0).any()):
        trace = torch.diagonal(omega, dim1=-2, dim2=-1).real.sum(-1) / ns
        bad = (info != 0).reshape(trace.shape)
        ridge = torch.where(bad, RIDGE_REL * trace, torch.zeros_like(trace))
        eye = torch.eye(ns, dtype=omega.dtype, device=omega.device)
        omega = omega + ridge[..., None, None] * eye
        chol, info = torch.linalg.cholesky_ex(omega)
        if bool((info != 0).any()):
            bad_k = torch.nonzero(info.reshape(-1) != 0)[0].item()
            raise SpectralEfficiencyError(
                f"noise covariance is singular beyond ridge rescue at block {bad_k}"
            )
    g = torch.linalg.solve_triangular(chol, lam, upper=False)
    eye = torch.eye(ns, dtype=lam.dtype, device=lam.device)
    s = eye + snr_scale * (g @ g.mH)
    sign, logabsdet = torch.linalg.slogdet(s)
    return logabsdet / math.log(2.0)


def rates_per_subchannel(
    h: torch.Tensor,
    f_rf: torch.Tensor,
    f_bb: torch.Tensor,
    w_rf: torch.Tensor,
    w_bb: torch.Tensor,
    rho: float,
    sigma_n2: float,
) -> torch.Tensor:
    """Batched per-subchannel rates, shape (..., K). Differentiable.

    Shapes: h (..., K, Nr, Nt); f_rf (..., Nt, NRFt); f_bb (..., K, NRFt, Ns);
    w_rf (..., Nr, NRFr); w_bb (..., K, NRFr, Ns).
    """
    ns = f_bb.shape[-1]
    f_eff = f_rf.unsqueeze(-3) @ f_bb  # (..., K, Nt, Ns)
    w_eff = w_rf.unsqueeze(-3) @ w_bb  # (..., K, Nr, Ns)
    lam = w_eff.mH @ h @ f_eff  # (..., K, Ns, Ns)
    omega = sigma_n2 * (w_eff.mH @ w_eff)
    return _logdet_rate(lam, omega, rho / ns)


def spectral_efficiency(
    h: torch.Tensor | np.ndarray,
    f_rf: torch.Tensor | np.ndarray,
    f_bb: torch.Tensor | np.ndarray,
    w_rf: torch.Tensor | np.ndarray,
    w_bb: torch.Tensor | np.ndarray,
    rho: float,
    sigma_n2: float,
    cfg: SystemConfig | None = None,
) -> RateReport:
    """Spectral efficiency of one (channel, beamformer, combiner) triple."""
    tensors = [
        torch.as_tensor(np.asarray(x), dtype=torch.complex128)
        for x in (h, f_rf, f_bb, w_rf, w_bb)
    ]
    h, f_rf, f_bb, w_rf, w_bb = tensors
    if cfg is not None and h.shape != (cfg.K, cfg.Nr, cfg.Nt):
        raise ValueError(
            f"channel shape {tuple(h.shape)} does not match config "
            f"(K={cfg.K}, Nr={cfg.Nr}, Nt={cfg.Nt})"
        )
    with torch.no_grad():
        rates = rates_per_subchannel(h, f_rf, f_bb, w_rf, w_bb, rho, sigma_n2)
    per = rates.cpu().numpy()
    return RateReport(per_subchannel=per, mean=float(per.mean()))


def total_loss(l_v: torch.Tensor | float, rate: torch.Tensor | float, alpha: float):
    """Composite objective alpha * L_V - R (minimized during training)."""
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    return alpha * l_v - rate
