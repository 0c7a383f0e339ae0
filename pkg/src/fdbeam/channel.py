"""Synthetic clustered frequency-selective MIMO channels and dataset I/O.

The generator produces sparse-angular, frequency-selective channels with the
same structure a ray-traced scenario would exhibit: a few clusters of rays,
Laplacian intra-cluster angle spread, per-cluster delays, uniform linear
arrays with half-wavelength spacing at both ends.

Per subchannel k the frequency response is

    H[k] = sqrt(Nt*Nr / (Nc*Np)) * sum_{c,p} g_cp * a_r(phi_cp) a_t(theta_cp)^H
           * exp(-2j*pi * tau_c * f_k)

with unit-norm steering vectors, i.i.d. unit-variance complex Gaussian ray
gains g_cp, and f_k the baseband offset of subchannel k, so that
E[||H[k]||_F^2] = Nt*Nr for every k.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig, SEED_CHANNEL, child_seed

__all__ = [
    "ClusterParams",
    "DatasetFormatError",
    "steering_vector",
    "generate_clustered_channel",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
]

MAGIC = b"FDCH"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")  # magic, version, K, Nr, Nt, count


class DatasetFormatError(IOError):
    """Dataset file violates the binary layout."""


@dataclass(frozen=True)
class ClusterParams:
    """Geometry and statistics of the clustered channel generator."""

    num_clusters: int = 4
    rays_per_cluster: int = 5
    angle_spread_deg: float = 7.5
    max_delay_s: float = 100e-9
    carrier_hz: float = 60e9
    bandwidth_hz: float = 100e6

    def __post_init__(self):
        if self.num_clusters < 1:
            raise ValueError(f"num_clusters must be >= 1, got {self.num_clusters}")
        if self.rays_per_cluster < 1:
            raise ValueError(f"rays_per_cluster must be >= 1, got {self.rays_per_cluster}")
        if self.max_delay_s < 0:
            raise ValueError(f"max_delay_s must be >= 0, got {self.max_delay_s}")


def steering_vector(angles_rad: np.ndarray, n_antennas: int) -> np.ndarray:
    """Unit-norm ULA steering vectors (half-wavelength spacing), one per angle.

    Returns an array of shape (len(angles), n_antennas).
    """
    angles_rad = np.atleast_1d(np.asarray(angles_rad, dtype=np.float64))
    n = np.arange(n_antennas)
    phase = np.pi * np.outer(np.sin(angles_rad), n)
    return np.exp(1j * phase) / np.sqrt(n_antennas)


def generate_clustered_channel(
    cfg: SystemConfig, params: ClusterParams, seed: int
) -> np.ndarray:
    """One channel realization H of shape (K, Nr, Nt), complex128."""
    rng = np.random.default_rng(seed)
    nc, np_ = params.num_clusters, params.rays_per_cluster
    n_rays = nc * np_

    # Cluster centers uniform over the full angular range; rays offset by a
    # Laplacian with scale set by the per-cluster angle spread.
    spread = np.deg2rad(params.angle_spread_deg)
    aod_centers = rng.uniform(-np.pi / 2, np.pi / 2, size=nc)
    aoa_centers = rng.uniform(-np.pi / 2, np.pi / 2, size=nc)
    aod = np.repeat(aod_centers, np_) + rng.laplace(scale=spread, size=n_rays)
    aoa = np.repeat(aoa_centers, np_) + rng.laplace(scale=spread, size=n_rays)

    # Per-cluster delays, shared by the cluster's rays.
    tau = np.repeat(rng.uniform(0.0, params.max_delay_s, size=nc), np_)

    gains = (rng.standard_normal(n_rays) + 1j * rng.standard_normal(n_rays)) / np.sqrt(2)

    a_t = steering_vector(aod, cfg.Nt)  # (n_rays, Nt)
    a_r = steering_vector(aoa, cfg.Nr)  # (n_rays, Nr)

    f_k = (np.arange(cfg.K) / cfg.K) * params.bandwidth_hz
    phase = np.exp(-2j * np.pi * np.outer(f_k, tau))  # (K, n_rays)

    scale = np.sqrt(cfg.Nt * cfg.Nr / n_rays)
    # H[k] = scale * sum_r (g_r * phase[k, r]) a_r[r] a_t[r]^H
    h = scale * np.einsum("kr,rn,rm->knm", phase * gains, a_r, a_t.conj())
    # complex64 is the dataset's canonical precision (it is what the file
    # format stores, so the save/load round trip stays bit-exact).
    return np.ascontiguousarray(h.astype(np.complex64))


def generate_dataset(
    cfg: SystemConfig, params: ClusterParams, num_samples: int
) -> np.ndarray:
    """Stack of independent realizations, shape (num_samples, K, Nr, Nt).

    Each sample uses its own child seed derived from cfg.seed and the sample
    index, so generation order (or parallelization) cannot change the data.
    """
    out = np.empty((num_samples, cfg.K, cfg.Nr, cfg.Nt), dtype=np.complex64)
    for i in range(num_samples):
        out[i] = generate_clustered_channel(
            cfg, params, child_seed(cfg.seed, SEED_CHANNEL, i)
        )
    return out


def save_dataset(path, realizations: np.ndarray) -> None:
    """Write realizations (N, K, Nr, Nt) in the binary dataset format.

    Layout: header (magic, version, K, Nr, Nt, count as little-endian u32)
    followed by complex values in C order over (sample, k, nr, nt), each as
    little-endian float32 real then imaginary. Input with more precision than
    complex64 is rounded once on write.
    """
    h = np.asarray(realizations)
    if h.ndim != 4:
        raise ValueError(f"expected (N, K, Nr, Nt) array, got shape {h.shape}")
    n, k, nr, nt = h.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, k, nr, nt, n))
        interleaved = np.empty((h.size, 2), dtype="<f4")
        flat = h.reshape(-1)
        interleaved[:, 0] = flat.real
        interleaved[:, 1] = flat.imag
        f.write(interleaved.tobytes())


def load_dataset(path, cfg: SystemConfig | None = None) -> np.ndarray:
    """Read a dataset file back as a complex64 array of shape (N, K, Nr, Nt).

    If cfg is given, the stored (K, Nr, Nt) must match it.
    """
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise DatasetFormatError(f"{path}: truncated header")
        magic, version, k, nr, nt, n = _HEADER.unpack(header)
        if magic != MAGIC:
            raise DatasetFormatError(f"{path}: bad magic bytes {magic!r}")
        if version != FORMAT_VERSION:
            raise DatasetFormatError(
                f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})"
            )
        payload = f.read()
    expected = 2 * 4 * n * k * nr * nt
    if len(payload) != expected:
        raise DatasetFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    if cfg is not None and (k, nr, nt) != (cfg.K, cfg.Nr, cfg.Nt):
        raise DatasetFormatError(
            f"{path}: stored shape (K={k}, Nr={nr}, Nt={nt}) does not match config "
            f"(K={cfg.K}, Nr={cfg.Nr}, Nt={cfg.Nt})"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(-1, 2)
    h = values[:, 0].astype(np.complex64)
    h += 1j * values[:, 1].astype(np.float32)
    return h.reshape(n, k, nr, nt)
