"""Input validation helpers for array-facing entry points."""

from __future__ import annotations

import numpy as np

from .config import SystemConfig

__all__ = ["check_channel_array"]


def check_channel_array(X, cfg: SystemConfig, min_samples: int = 1) -> np.ndarray:
    """Validate a stack of channel realizations against the configuration.

    Accepts anything array-like of shape (n_samples, K, Nr, Nt); returns a
    contiguous complex array. Raises ValueError on wrong rank, mismatched
    dimensions, non-finite entries, or too few samples.
    """
    X = np.asarray(X)
    if not np.iscomplexobj(X):
        raise ValueError(f"channel array must be complex, got dtype {X.dtype}")
    if X.ndim != 4:
        raise ValueError(
            f"channel array must have shape (n_samples, K, Nr, Nt); got ndim={X.ndim}"
        )
    if X.shape[1:] != (cfg.K, cfg.Nr, cfg.Nt):
        raise ValueError(
            f"channel array shape {X.shape[1:]} does not match config "
            f"(K={cfg.K}, Nr={cfg.Nr}, Nt={cfg.Nt})"
        )
    if X.shape[0] < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {X.shape[0]}")
    if not np.isfinite(X.real).all() or not np.isfinite(X.imag).all():
        raise ValueError("channel array contains non-finite entries")
    return np.ascontiguousarray(X)
