"""System configuration and shared conventions.

Conventions fixed here and relied on everywhere else:

* Powers (``rho``, ``rho_p``, ``sigma_n2``) are linear milliwatts. dBm only
  appears at the CLI boundary.
* Complex matrices are packed into real vectors as the flattened real plane
  followed by the flattened imaginary plane, row-major within each plane
  (see :func:`pack_complex` / :func:`unpack_complex`).
* All randomness is derived from ``SystemConfig.seed`` through
  :func:`child_seed`, so equal configs reproduce bit-identical datasets and
  initial parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, asdict, replace

import numpy as np

__all__ = [
    "ConfigError",
    "SystemConfig",
    "validate",
    "noise_power_from_psd",
    "dbm_to_mw",
    "mw_to_dbm",
    "feedback_bits",
    "pilot_subchannels",
    "child_seed",
    "pack_complex",
    "unpack_complex",
]


class ConfigError(ValueError):
    """A SystemConfig invariant does not hold."""


def dbm_to_mw(p_dbm: float) -> float:
    return 10.0 ** (p_dbm / 10.0)


def mw_to_dbm(p_mw: float) -> float:
    if p_mw <= 0:
        raise ValueError(f"power must be positive to express in dBm, got {p_mw}")
    return 10.0 * math.log10(p_mw)


@dataclass(frozen=True)
class SystemConfig:
    """Dimensional and physical parameters of the single-user MIMO-OFDM link.

    Attributes:
        Nt, Nr: antenna counts at the BS and the UE.
        NRFt, NRFr: RF-chain counts at the BS and the UE.
        Ns: number of parallel data streams.
        K: number of subchannels.
        Kp: number of pilot-bearing subchannels.
        M: subchannel interval between pilot subchannels (K = Kp * M).
        L: pilot length (number of pilot transmissions).
        rho: data transmit power, linear mW.
        rho_p: pilot transmit power, linear mW.
        sigma_n2: per-subchannel noise power, linear mW.
        B: feedback budget in bits.
        D: codebook size (power of two).
        V: codeword length (real entries per quantized segment).
        G: number of aggregation/combination layers in the beamformer GNNs.
        alpha: weight of the quantization loss in the training objective.
        seed: master RNG seed.
    """

    Nt: int = 16
    Nr: int = 2
    NRFt: int = 4
    NRFr: int = 2
    Ns: int = 2
    K: int = 32
    Kp: int = 8
    M: int = 4
    L: int = 8
    rho: float = 10.0
    rho_p: float = 10.0
    sigma_n2: float = 1.0
    B: int = 256
    D: int = 16
    V: int = 4
    G: int = 4
    alpha: float = 0.2
    seed: int = 0

    def replace(self, **changes) -> "SystemConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


def feedback_bits(Kp: int, NRFr: int, L: int, V: int, D: int) -> int:
    """Bit budget implied by the quantizer geometry.

    The quantized tensor has ``2 * Kp * NRFr * L`` real entries, split into
    segments of length ``V``, each encoded as a ``log2(D)``-bit index.
    """
    total = 2 * Kp * NRFr * L
    if total % V != 0:
        raise ConfigError(f"2*Kp*NRFr*L = {total} is not divisible by V = {V}")
    bits_per_index = int(math.log2(D))
    if 2**bits_per_index != D:
        raise ConfigError(f"codebook size D = {D} is not a power of two")
    return (total // V) * bits_per_index


def validate(config: SystemConfig) -> SystemConfig:
    """Check every SystemConfig invariant; return the config unchanged.

    Raises:
        ConfigError: naming the violated invariant.
    """
    c = config
    for name in ("Nt", "Nr", "NRFt", "NRFr", "Ns", "K", "Kp", "M", "L", "D", "V", "G"):
        v = getattr(c, name)
        if not isinstance(v, (int, np.integer)) or v < 1:
            raise ConfigError(f"{name} must be a positive integer, got {v!r}")
    if c.Ns > c.NRFt:
        raise ConfigError(f"Ns exceeds NRFt ({c.Ns} > {c.NRFt})")
    if c.Ns > c.NRFr:
        raise ConfigError(f"Ns exceeds NRFr ({c.Ns} > {c.NRFr})")
    # equality is tolerated so small bench configs with square analog stages
    # remain expressible; the hybrid architecture degenerates gracefully
    if c.Nt < c.NRFt:
        raise ConfigError(f"Nt must be at least NRFt ({c.Nt} < {c.NRFt})")
    if c.Nr < c.NRFr:
        raise ConfigError(f"Nr must be at least NRFr ({c.Nr} < {c.NRFr})")
    if c.K != c.Kp * c.M:
        raise ConfigError(f"K != Kp*M ({c.K} != {c.Kp}*{c.M})")
    for name in ("rho", "rho_p"):
        if getattr(c, name) <= 0:
            raise ConfigError(f"{name} must be positive, got {getattr(c, name)}")
    if c.sigma_n2 < 0:
        raise ConfigError(f"sigma_n2 must be non-negative, got {c.sigma_n2}")
    if c.alpha < 0:
        raise ConfigError(f"alpha must be non-negative, got {c.alpha}")
    expected_b = feedback_bits(c.Kp, c.NRFr, c.L, c.V, c.D)
    if c.B != expected_b:
        raise ConfigError(
            f"B = {c.B} inconsistent with (Kp, NRFr, L, V, D): expected "
            f"B = 2*Kp*NRFr*L/V * log2(D) = {expected_b}"
        )
    return config


def noise_power_from_psd(psd_dbm_per_hz: float, bandwidth_hz: float, K: int) -> float:
    """Per-subchannel noise power in dBm from a noise PSD and total bandwidth.

    Each of the K subchannels spans bandwidth_hz / K, so its noise power is
    PSD * (bandwidth / K), i.e. psd_dbm_per_hz + 10*log10(bandwidth_hz / K).
    """
    if bandwidth_hz <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth_hz}")
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    return psd_dbm_per_hz + 10.0 * math.log10(bandwidth_hz / K)


def pilot_subchannels(config: SystemConfig) -> np.ndarray:
    """Zero-based indices of the Kp uniformly spaced pilot subchannels."""
    return np.arange(config.Kp) * config.M


# Stream tags for deriving independent child seeds from the master seed.
SEED_CHANNEL = 1
SEED_PARAMS = 2
SEED_TRAIN = 3
SEED_EVAL_NOISE = 4
SEED_SPLIT = 5


def child_seed(master_seed: int, tag: int, index: int = 0) -> int:
    """Deterministic, well-separated child seed for (master, tag, index).

    Built on numpy's SeedSequence spawning so streams for different tags or
    indices are statistically independent and stable across platforms.
    """
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(tag, index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def pack_complex(a: np.ndarray) -> np.ndarray:
    """Pack a complex array into a real vector: real plane, then imag plane.

    Both planes are flattened row-major (C order). This is the vectorization
    the GNN readout and the feedback split rely on.
    """
    a = np.asarray(a)
    return np.concatenate([a.real.ravel(), a.imag.ravel()])


def unpack_complex(v: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Invert :func:`pack_complex` for the given complex shape."""
    v = np.asarray(v)
    n = int(np.prod(shape))
    if v.shape != (2 * n,):
        raise ValueError(f"packed vector has length {v.shape}, expected {(2 * n,)}")
    return (v[:n] + 1j * v[n:]).reshape(shape)
