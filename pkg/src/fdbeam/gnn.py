"""Graph-structured beamformer/combiner networks.

The hybrid beamformer is represented as a star graph: one analog node (the
shared analog beamformer) and K digital nodes (one per-subchannel digital
beamformer). States are initialized from the received pilot groups, updated
by G rounds of aggregation/combination message passing, read out as the
real/imaginary planes of the beamformer matrices, and projected onto the
feasible set (constant-modulus analog entries, total digital power).

The same network shape serves both ends of the link: (N, NRF) = (Nt, NRFt)
at the BS, (Nr, NRFr) at the UE. Only the BS side carries the digital power
constraint.
"""

from __future__ import annotations

import logging
import math
from typing import NamedTuple

import torch
from torch import nn

from .config import SystemConfig

__all__ = [
    "NodeStates",
    "HybridBeamformer",
    "HybridCombiner",
    "DegenerateBeamformerError",
    "order_invariant_mean",
    "pack_received_groups",
    "project_unit_modulus",
    "normalize_beamformer",
    "normalize_combiner",
    "readout_matrices",
    "BeamformerGNN",
    "hb_gnn_forward",
    "hc_gnn_forward",
]

logger = logging.getLogger(__name__)

DTYPE = torch.float64


class NodeStates(NamedTuple):
    """Digital-node states c (..., K, dim_c) and analog-node state v (..., dim_v)."""

    c: torch.Tensor
    v: torch.Tensor


class HybridBeamformer(NamedTuple):
    """Analog beamformer (..., Nt, NRFt) and digital stack (..., K, NRFt, Ns)."""

    f_rf: torch.Tensor
    f_bb: torch.Tensor


class HybridCombiner(NamedTuple):
    """Analog combiner (..., Nr, NRFr) and digital stack (..., K, NRFr, Ns)."""

    w_rf: torch.Tensor
    w_bb: torch.Tensor


class DegenerateBeamformerError(RuntimeError):
    """The digital stack has zero power and cannot be normalized."""


def order_invariant_mean(x: torch.Tensor, dim: int) -> torch.Tensor:
    """Mean along `dim`, identical (bit-for-bit) under any permutation of it.

    Sorting fixes the summation order, so the permutation-invariance contract
    holds exactly in floating point; the gradient is that of a plain mean.
    """
    return x.sort(dim=dim).values.mean(dim=dim)


def pack_received_groups(y: torch.Tensor) -> torch.Tensor:
    """Real feature vector per pilot group: (..., Kp, NRFr, L) -> (..., Kp, 2*NRFr*L).

    Real plane before imaginary plane, row-major within each plane, matching
    the package-wide complex packing convention.
    """
    batch = y.shape[:-2]
    return torch.cat([y.real.reshape(*batch, -1), y.imag.reshape(*batch, -1)], dim=-1)


def project_unit_modulus(x: torch.Tensor, scale: float) -> torch.Tensor:
    """Entry-wise projection onto modulus `scale`; zero entries get phase 0."""
    zero = x == 0
    if bool(zero.any()):
        logger.warning(
            "unit-modulus projection hit %d zero entries; substituting phase 0",
            int(zero.sum()),
        )
        x = torch.where(zero, torch.ones_like(x), x)
    return scale * x / x.abs()


def readout_matrices(states: NodeStates, n_antennas: int, n_rf: int, ns: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Unpack node states into raw (analog, digital) complex matrices.

    v holds [Re plane, Im plane] of the (n_antennas, n_rf) analog matrix;
    each c_k holds the planes of the (n_rf, ns) digital matrix.
    """
    c, v = states
    half_v = n_antennas * n_rf
    batch = v.shape[:-1]
    a_re = v[..., :half_v].reshape(*batch, n_antennas, n_rf)
    a_im = v[..., half_v:].reshape(*batch, n_antennas, n_rf)
    half_c = n_rf * ns
    cbatch = c.shape[:-1]
    d_re = c[..., :half_c].reshape(*cbatch, n_rf, ns)
    d_im = c[..., half_c:].reshape(*cbatch, n_rf, ns)
    return torch.complex(a_re, a_im), torch.complex(d_re, d_im)


def pack_matrices(analog: torch.Tensor, digital: torch.Tensor) -> NodeStates:
    """Inverse of :func:`readout_matrices` (used by tests)."""
    abatch = analog.shape[:-2]
    v = torch.cat(
        [analog.real.reshape(*abatch, -1), analog.imag.reshape(*abatch, -1)], dim=-1
    )
    dbatch = digital.shape[:-2]
    c = torch.cat(
        [digital.real.reshape(*dbatch, -1), digital.imag.reshape(*dbatch, -1)], dim=-1
    )
    return NodeStates(c=c, v=v)


def normalize_beamformer(
    f_rf_raw: torch.Tensor, f_bb_raw: torch.Tensor, cfg: SystemConfig
) -> HybridBeamformer:
    """Project raw outputs onto the feasible beamformer set.

    Analog entries onto modulus 1/sqrt(Nt); the whole digital stack scaled by
    one factor so sum_k ||F_RF F_BB[k]||_F^2 = K * Ns.
    """
    f_rf = project_unit_modulus(f_rf_raw, 1.0 / math.sqrt(cfg.Nt))
    f_eff = f_rf.unsqueeze(-3) @ f_bb_raw
    power = (f_eff.real**2 + f_eff.imag**2).sum(dim=(-3, -2, -1))
    if bool((power == 0).any()):
        raise DegenerateBeamformerError("degenerate beamformer: digital stack has zero power")
    scale = torch.sqrt(cfg.K * cfg.Ns / power)
    f_bb = f_bb_raw * scale[..., None, None, None]
    return HybridBeamformer(f_rf=f_rf, f_bb=f_bb)


def normalize_combiner(
    w_rf_raw: torch.Tensor, w_bb_raw: torch.Tensor, cfg: SystemConfig
) -> HybridCombiner:
    """Project the analog combiner onto modulus 1/sqrt(Nr); W_BB is free."""
    w_rf = project_unit_modulus(w_rf_raw, 1.0 / math.sqrt(cfg.Nr))
    return HybridCombiner(w_rf=w_rf, w_bb=w_bb_raw)


def _affine(in_dim: int, out_dim: int, generator: torch.Generator | None) -> nn.Linear:
    """Linear layer with fan-in-scaled uniform init drawn from `generator`."""
    layer = nn.Linear(in_dim, out_dim, dtype=DTYPE)
    bound = 1.0 / math.sqrt(in_dim)
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound, generator=generator)
        layer.bias.uniform_(-bound, bound, generator=generator)
    return layer


class _PassLayer(nn.Module):
    """One aggregation/combination round over the star graph."""

    def __init__(self, dim_c: int, dim_v: int, last: bool,
                 generator: torch.Generator | None):
        super().__init__()
        self.f1 = _affine(dim_v, dim_v, generator)
        self.f2 = _affine(dim_c, dim_v, generator)
        self.f3 = _affine(dim_c, dim_c, generator)
        self.f4 = _affine(dim_v, dim_c, generator)
        self.act = nn.Identity() if last else nn.SiLU()

    def forward(self, states: NodeStates) -> NodeStates:
        c, v = states
        c_mean = order_invariant_mean(c, -2)
        v_next = self.act(self.f1(v)) + self.act(self.f2(c_mean))
        c_next = self.act(self.f3(c)) + self.act(self.f4(v)).unsqueeze(-2)
        return NodeStates(c=c_next, v=v_next)


class BeamformerGNN(nn.Module):
    """Star-graph network emitting one analog and K digital matrices.

    Args:
        cfg: system configuration.
        n_antennas, n_rf: dimensions of the side this network serves
            ((Nt, NRFt) at the BS, (Nr, NRFr) at the UE).
    """

    def __init__(self, cfg: SystemConfig, n_antennas: int, n_rf: int,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        self.n_antennas = n_antennas
        self.n_rf = n_rf
        self.dim_c = 2 * n_rf * cfg.Ns
        self.dim_v = 2 * n_rf * n_antennas
        in_dim = 2 * cfg.NRFr * cfg.L
        self.i_bb = _affine(in_dim, cfg.M * self.dim_c, generator)
        self.i_rf = _affine(in_dim, self.dim_v, generator)
        self.act = nn.SiLU()
        self.layers = nn.ModuleList(
            _PassLayer(self.dim_c, self.dim_v, last=(g == cfg.G - 1), generator=generator)
            for g in range(cfg.G)
        )

    def init_nodes(self, y: torch.Tensor) -> NodeStates:
        """Initial states from the received pilot tensor (..., Kp, NRFr, L).

        One shared map turns each pilot group into the M states of its
        subchannels; the analog state starts from the group-wise mean.
        """
        cfg = self.cfg
        feats = pack_received_groups(y)  # (..., Kp, 2*NRFr*L)
        c0 = self.act(self.i_bb(feats))  # (..., Kp, M*dim_c)
        c0 = c0.reshape(*feats.shape[:-2], cfg.K, self.dim_c)
        v0 = self.act(self.i_rf(order_invariant_mean(feats, -2)))
        return NodeStates(c=c0, v=v0)

    def message_pass(self, states: NodeStates, g: int) -> NodeStates:
        """Apply round g (1-based) of aggregation/combination."""
        if not 1 <= g <= self.cfg.G:
            raise ValueError(f"layer index {g} outside 1..{self.cfg.G}")
        return self.layers[g - 1](states)

    def forward(self, y: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Raw (analog, digital) matrices before constraint normalization."""
        states = self.init_nodes(y)
        for layer in self.layers:
            states = layer(states)
        return readout_matrices(states, self.n_antennas, self.n_rf, self.cfg.Ns)


def hb_gnn_forward(y_hat: torch.Tensor, net: BeamformerGNN, cfg: SystemConfig) -> HybridBeamformer:
    """Quantized received pilots -> feasible hybrid beamformer."""
    raw_rf, raw_bb = net(y_hat)
    return normalize_beamformer(raw_rf, raw_bb, cfg)


def hc_gnn_forward(y: torch.Tensor, net: BeamformerGNN, cfg: SystemConfig) -> HybridCombiner:
    """Received pilots -> feasible hybrid combiner."""
    raw_rf, raw_bb = net(y)
    return normalize_combiner(raw_rf, raw_bb, cfg)
