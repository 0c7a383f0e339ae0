"""Trainable downlink pilot stage.

The analog sounding beams are parameterized by phase-shift tensors so the
constant-modulus constraints hold by construction; the pilot symbols carry an
explicit power budget enforced by projection after each optimizer step.

Forward model per pilot transmission l and pilot subchannel k_p:

    y_l[k_p] = sqrt(rho_p) * W_l^H H[k_p] F_l s_l + W_l^H n_l[k_p]

with n ~ CN(0, sigma_n2 * I) and F_l, W_l the frequency-flat analog sounding
matrices of that transmission.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .config import SystemConfig, pilot_subchannels

__all__ = [
    "analog_from_phases",
    "project_pilot_power",
    "PilotNetwork",
    "transmit_pilots",
    "complex_normal",
]

DTYPE = torch.float64
CDTYPE = torch.complex128


def analog_from_phases(phases: torch.Tensor, scale: float) -> torch.Tensor:
    """Constant-modulus matrix scale * (cos(phases) + j sin(phases)).

    Differentiable in the phases; every entry has modulus exactly `scale`.
    """
    return scale * torch.complex(torch.cos(phases), torch.sin(phases))


def project_pilot_power(s_l: torch.Tensor, budget: float) -> torch.Tensor:
    """Project a pilot symbol vector onto the ball ||s||^2 <= budget.

    Interior points pass through unchanged; over-budget vectors are rescaled
    onto the boundary.
    """
    power = (s_l.real**2 + s_l.imag**2).sum(dim=-1, keepdim=True)
    # clamp keeps the unselected branch finite for zero-power inputs
    scale = torch.where(
        power > budget,
        torch.sqrt(budget / power.clamp_min(torch.finfo(power.dtype).tiny)),
        torch.ones_like(power),
    )
    return s_l * scale


def complex_normal(
    shape, sigma2: float, generator: torch.Generator | None = None
) -> torch.Tensor:
    """CN(0, sigma2) samples: real/imag each N(0, sigma2/2)."""
    re = torch.randn(shape, dtype=DTYPE, generator=generator)
    im = torch.randn(shape, dtype=DTYPE, generator=generator)
    return math.sqrt(sigma2 / 2.0) * torch.complex(re, im)


class PilotNetwork(nn.Module):
    """Trainable pilot parameters: BS/UE phase shifts and pilot symbols.

    Parameters:
        theta: (L, Nt, NRFt) BS-side phases.
        phi:   (L, Nr, NRFr) UE-side phases.
        s:     (L, NRFt, 2) real/imag parts of the pilot symbols.

    Phases are initialized uniformly on [0, 2pi); pilot symbols as unit-power
    complex Gaussians projected onto the power budget.
    """

    def __init__(self, cfg: SystemConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        two_pi = 2 * math.pi
        self.theta = nn.Parameter(
            two_pi * torch.rand((cfg.L, cfg.Nt, cfg.NRFt), dtype=DTYPE, generator=generator)
        )
        self.phi = nn.Parameter(
            two_pi * torch.rand((cfg.L, cfg.Nr, cfg.NRFr), dtype=DTYPE, generator=generator)
        )
        s0 = complex_normal((cfg.L, cfg.NRFt), 1.0, generator)
        s0 = project_pilot_power(s0, float(cfg.NRFt))
        self.s = nn.Parameter(torch.view_as_real(s0).contiguous())

    @property
    def pilot_symbols(self) -> torch.Tensor:
        """Complex view of the pilot symbols, shape (L, NRFt)."""
        return torch.view_as_complex(self.s)

    def bs_analog(self) -> torch.Tensor:
        """Sounding beamformers F_l, shape (L, Nt, NRFt)."""
        return analog_from_phases(self.theta, 1.0 / math.sqrt(self.cfg.Nt))

    def ue_analog(self) -> torch.Tensor:
        """Sounding combiners W_l, shape (L, Nr, NRFr)."""
        return analog_from_phases(self.phi, 1.0 / math.sqrt(self.cfg.Nr))

    @torch.no_grad()
    def project_power(self) -> None:
        """Re-impose ||s_l||^2 <= NRFt; call after every optimizer step."""
        s = torch.view_as_complex(self.s)
        self.s.copy_(torch.view_as_real(project_pilot_power(s, float(self.cfg.NRFt))))


def transmit_pilots(
    h: torch.Tensor,
    pilots: PilotNetwork,
    cfg: SystemConfig,
    noise: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Received pilot tensor Y of shape (..., Kp, NRFr, L).

    h is the channel (..., K, Nr, Nt); only pilot-bearing subchannels are
    sounded. Pass either a pre-drawn noise tensor of shape
    (..., Kp, L, Nr) or a generator to draw CN(0, sigma_n2) noise; both
    default to noiseless.
    """
    if h.shape[-3:] != (cfg.K, cfg.Nr, cfg.Nt):
        raise ValueError(
            f"channel shape {tuple(h.shape)} does not match config "
            f"(K={cfg.K}, Nr={cfg.Nr}, Nt={cfg.Nt})"
        )
    h = h.to(CDTYPE)
    kp_idx = torch.as_tensor(pilot_subchannels(cfg), device=h.device)
    h_p = h.index_select(-3, kp_idx)  # (..., Kp, Nr, Nt)

    f = pilots.bs_analog()  # (L, Nt, NRFt)
    w = pilots.ue_analog()  # (L, Nr, NRFr)
    s = pilots.pilot_symbols  # (L, NRFt)
    x = torch.einsum("ltc,lc->lt", f, s)  # transmitted vector per l, (L, Nt)

    # sqrt(rho_p) * H[k_p] F_l s_l for every (k_p, l)
    z = math.sqrt(cfg.rho_p) * torch.einsum("...knt,lt->...kln", h_p, x)
    if noise is None and generator is not None and cfg.sigma_n2 > 0:
        noise = complex_normal(z.shape, cfg.sigma_n2, generator)
    if noise is not None:
        z = z + noise.to(z.dtype)
    # combine: y[..., k_p, :, l] = W_l^H z[..., k_p, l, :]
    y = torch.einsum("lnc,...kln->...kcl", w.conj(), z)
    return y
