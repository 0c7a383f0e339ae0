import numpy as np
import pytest
import torch

from fdbeam.channel import ClusterParams, generate_dataset
from fdbeam.config import SystemConfig, validate


@pytest.fixture
def tiny_cfg():
    """Gradient-check scale: Nt=8, K=4, Kp=2."""
    return validate(SystemConfig(
        Nt=8, Nr=2, NRFt=2, NRFr=2, Ns=2, K=4, Kp=2, M=2, L=4,
        rho=10.0, rho_p=10.0, sigma_n2=1.0, B=16, D=4, V=4, G=2, alpha=0.2, seed=0,
    ))


@pytest.fixture
def grad_cfg():
    """Gradient-check scale with Ns < NRFr so the rate depends on every
    parameter group (a square digital combiner drops out of the rate)."""
    return validate(SystemConfig(
        Nt=8, Nr=2, NRFt=2, NRFr=2, Ns=1, K=4, Kp=2, M=2, L=4,
        rho=10.0, rho_p=10.0, sigma_n2=1.0, B=16, D=4, V=4, G=2, alpha=0.2, seed=0,
    ))


@pytest.fixture
def desk_cfg():
    """Bench scale used throughout the acceptance suite."""
    return validate(SystemConfig())


@pytest.fixture
def paper_scale_cfg():
    """Reference dimensions (64 BS antennas, 128 subchannels, 512-bit budget)."""
    return validate(SystemConfig(
        Nt=64, Nr=4, NRFt=4, NRFr=2, Ns=2, K=128, Kp=16, M=8, L=16,
        B=512, D=16, V=8, G=4, alpha=0.2, seed=0,
    ))


@pytest.fixture
def make_channels():
    def _make(cfg, n, **params):
        return generate_dataset(cfg, ClusterParams(**params), n)

    return _make


def sampled_fd_grad(loss_fn, param: torch.Tensor, n_probe: int = 8,
                    eps: float = 1e-4, rng_seed: int = 0):
    """Central finite differences of loss_fn at a deterministic entry sample.

    Returns (fd_values, entry_indices); loss_fn takes no arguments and reads
    `param` by reference.
    """
    rng = np.random.default_rng(rng_seed)
    flat = param.detach().reshape(-1)
    n = flat.numel()
    picks = rng.choice(n, size=min(n_probe, n), replace=False)
    fd = []
    with torch.no_grad():
        for i in picks:
            orig = flat[i].item()
            flat[i] = orig + eps
            f_plus = float(loss_fn())
            flat[i] = orig - eps
            f_minus = float(loss_fn())
            flat[i] = orig
            fd.append((f_plus - f_minus) / (2 * eps))
    return np.asarray(fd), picks


def assert_grad_matches_fd(loss_fn, params: dict[str, torch.Tensor],
                           rtol: float = 1e-4, n_probe: int = 8,
                           fd_fns: dict | None = None):
    """Autograd vs central differences for every named parameter tensor.

    fd_fns can override the function differenced for a given parameter (used
    where stop-gradients make the full loss non-differentiable in it).
    """
    for p in params.values():
        if p.grad is not None:
            p.grad = None
    loss = loss_fn()
    loss.backward()
    for name, p in params.items():
        assert p.grad is not None, f"no gradient reached {name}"
        fd_fn = (fd_fns or {}).get(name, loss_fn)
        fd, picks = sampled_fd_grad(fd_fn, p, n_probe=n_probe)
        analytic = p.grad.detach().reshape(-1).numpy()[picks]
        denom = max(float(np.linalg.norm(fd)), 1e-12)
        rel = float(np.linalg.norm(fd - analytic)) / denom
        assert rel <= rtol, f"{name}: FD mismatch, relative error {rel:.3e}"
