"""Vector-quantized limited feedback.

The received pilot tensor is flattened to a real vector (real plane before
imaginary plane, subchannel-major / RF-chain / pilot-index within each
plane), chunked into segments of length V, and each segment is replaced by
its nearest codeword from a trained D x V codebook. Only the codeword
indices travel over the feedback link, packed big-endian at log2(D) bits
each, for exactly B bits total.

Training uses the standard two-term quantization loss with stop-gradients
(codebook term + beta * commitment term) and passes straight-through values
downstream so the encoder path receives the identity Jacobian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import SystemConfig, feedback_bits

__all__ = [
    "FeedbackMessage",
    "Codebook",
    "num_segments",
    "split_received",
    "unsplit_received",
    "nearest_codeword",
    "encode",
    "decode",
    "pack_indices",
    "unpack_indices",
    "vq_loss",
    "quantize_straight_through",
]

DTYPE = torch.float64
CDTYPE = torch.complex128


@dataclass(frozen=True)
class FeedbackMessage:
    """Codeword indices plus their fixed-width big-endian bit packing."""

    indices: np.ndarray  # (num_segments,) ints in [0, D)
    bits: np.ndarray  # (B,) values in {0, 1}


def num_segments(cfg: SystemConfig) -> int:
    total = 2 * cfg.Kp * cfg.NRFr * cfg.L
    if total % cfg.V != 0:
        raise ValueError(f"2*Kp*NRFr*L = {total} is not divisible by V = {cfg.V}")
    return total // cfg.V


def split_received(y: torch.Tensor, cfg: SystemConfig) -> torch.Tensor:
    """Chunk a received pilot tensor (..., Kp, NRFr, L) into V-length segments.

    Returns (..., num_segments, V) real. Inverted by :func:`unsplit_received`.
    """
    if y.shape[-3:] != (cfg.Kp, cfg.NRFr, cfg.L):
        raise ValueError(
            f"received tensor shape {tuple(y.shape)} does not match config "
            f"(Kp={cfg.Kp}, NRFr={cfg.NRFr}, L={cfg.L})"
        )
    batch = y.shape[:-3]
    flat = torch.cat(
        [y.real.reshape(*batch, -1), y.imag.reshape(*batch, -1)], dim=-1
    )
    return flat.reshape(*batch, num_segments(cfg), cfg.V)


def unsplit_received(segments: torch.Tensor, cfg: SystemConfig) -> torch.Tensor:
    """Rebuild the complex (..., Kp, NRFr, L) tensor from its segments."""
    n_seg = num_segments(cfg)
    if segments.shape[-2:] != (n_seg, cfg.V):
        raise ValueError(
            f"segment tensor shape {tuple(segments.shape)} does not match "
            f"({n_seg}, {cfg.V})"
        )
    batch = segments.shape[:-2]
    half = cfg.Kp * cfg.NRFr * cfg.L
    flat = segments.reshape(*batch, 2 * half)
    re = flat[..., :half].reshape(*batch, cfg.Kp, cfg.NRFr, cfg.L)
    im = flat[..., half:].reshape(*batch, cfg.Kp, cfg.NRFr, cfg.L)
    return torch.complex(re, im)


class Codebook(nn.Module):
    """Learnable codeword matrix of shape (D, V)."""

    def __init__(self, D: int, V: int, generator: torch.Generator | None = None):
        super().__init__()
        if D < 2:
            raise ValueError(f"codebook needs at least 2 codewords, got D={D}")
        self.codewords = nn.Parameter(
            torch.randn((D, V), dtype=DTYPE, generator=generator)
        )

    @torch.no_grad()
    def init_from_segments(self, segments: torch.Tensor,
                           generator: torch.Generator | None = None) -> None:
        """Seed the codebook with D distinct rows drawn from training segments."""
        flat = segments.reshape(-1, segments.shape[-1])
        d = self.codewords.shape[0]
        if flat.shape[0] < d:
            raise ValueError(
                f"need at least {d} segments to initialize the codebook, got {flat.shape[0]}"
            )
        perm = torch.randperm(flat.shape[0], generator=generator)[:d]
        self.codewords.copy_(flat[perm].to(self.codewords.dtype))

    @torch.no_grad()
    def reseed_dead(self, dead: torch.Tensor, segments: torch.Tensor,
                    generator: torch.Generator | None = None) -> int:
        """Replace codewords flagged dead with random training segments."""
        n_dead = int(dead.sum())
        if n_dead == 0:
            return 0
        flat = segments.reshape(-1, segments.shape[-1])
        pick = torch.randint(0, flat.shape[0], (n_dead,), generator=generator)
        self.codewords[dead] = flat[pick].to(self.codewords.dtype)
        return n_dead


def nearest_codeword(segments: torch.Tensor, codewords: torch.Tensor) -> torch.Tensor:
    """Index of the nearest codeword per segment; ties go to the lowest index.

    Distances are computed by direct broadcasting (not a Gram-matrix trick)
    so exact ties stay exact and argmin's first-minimum rule applies.
    """
    d2 = ((segments.unsqueeze(-2) - codewords) ** 2).sum(dim=-1)
    return d2.argmin(dim=-1)


def pack_indices(indices: np.ndarray, bits_per_index: int) -> np.ndarray:
    """Fixed-width big-endian bit packing, most significant bit first."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.min(initial=0) < 0 or indices.max(initial=0) >= 2**bits_per_index:
        raise ValueError(f"index out of range for {bits_per_index}-bit packing")
    shifts = np.arange(bits_per_index - 1, -1, -1)
    bits = (indices[:, None] >> shifts[None, :]) & 1
    return bits.reshape(-1).astype(np.uint8)


def unpack_indices(bits: np.ndarray, bits_per_index: int) -> np.ndarray:
    """Invert :func:`pack_indices`."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size % bits_per_index != 0:
        raise ValueError(
            f"bit stream length {bits.size} is not a multiple of {bits_per_index}"
        )
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bit stream contains values other than 0/1")
    grouped = bits.reshape(-1, bits_per_index)
    shifts = np.arange(bits_per_index - 1, -1, -1)
    return (grouped << shifts[None, :]).sum(axis=1)


def encode(y: torch.Tensor, codebook: Codebook, cfg: SystemConfig) -> FeedbackMessage:
    """Quantize one received pilot tensor (Kp, NRFr, L) to its bit stream."""
    segments = split_received(y, cfg)
    idx = nearest_codeword(segments, codebook.codewords).cpu().numpy()
    bits_per_index = int(math.log2(cfg.D))
    bits = pack_indices(idx, bits_per_index)
    expected = feedback_bits(cfg.Kp, cfg.NRFr, cfg.L, cfg.V, cfg.D)
    assert bits.size == expected == cfg.B
    return FeedbackMessage(indices=idx, bits=bits)


def decode(msg: FeedbackMessage, codebook: Codebook, cfg: SystemConfig) -> torch.Tensor:
    """Reconstruct the (Kp, NRFr, L) tensor from a feedback message.

    The bit stream is authoritative (it is what crosses the feedback link).
    """
    bits_per_index = int(math.log2(cfg.D))
    idx = unpack_indices(msg.bits, bits_per_index)
    d = codebook.codewords.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= d):
        raise ValueError(f"codeword index out of range [0, {d}) in bit stream")
    selected = codebook.codewords[torch.as_tensor(idx)]
    return unsplit_received(selected, cfg)


def quantize_straight_through(
    segments: torch.Tensor, codewords: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Quantized segments with the identity backward, plus the chosen indices.

    The returned tensor equals the selected codewords in the forward pass but
    carries d(out)/d(segments) = I, so downstream gradients reach the encoder
    path unchanged.
    """
    idx = nearest_codeword(segments.detach(), codewords)
    selected = codewords[idx]
    # (z - sg(z)) + sg(e) is exactly e in the forward pass (z - z cancels
    # bit-for-bit) while keeping d(out)/dz = I and blocking gradient into e
    quantized = (segments - segments.detach()) + selected.detach()
    return quantized, idx


def vq_loss(
    segments: torch.Tensor,
    codewords: torch.Tensor,
    beta: float = 0.25,
    indices: torch.Tensor | None = None,
) -> torch.Tensor:
    """Mean over segments of ||sg(z) - e||^2 + beta * ||z - sg(e)||^2.

    The first term moves only the codebook, the second only the encoder path.
    Norms are full squared Euclidean distances of V-length segments.
    """
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    if indices is None:
        indices = nearest_codeword(segments.detach(), codewords)
    selected = codewords[indices]
    codebook_term = ((segments.detach() - selected) ** 2).sum(dim=-1)
    commitment_term = ((segments - selected.detach()) ** 2).sum(dim=-1)
    return (codebook_term + beta * commitment_term).mean()
