import math

import numpy as np
import pytest
import scipy.linalg
import torch

from conftest import assert_grad_matches_fd
from fdbeam.objective import (
    SpectralEfficiencyError,
    rates_per_subchannel,
    spectral_efficiency,
    total_loss,
)


def _random_complex(shape, gen):
    return torch.complex(
        torch.randn(shape, dtype=torch.float64, generator=gen),
        torch.randn(shape, dtype=torch.float64, generator=gen),
    )


def _random_setup(cfg, gen):
    h = _random_complex((cfg.K, cfg.Nr, cfg.Nt), gen)
    f_rf = _random_complex((cfg.Nt, cfg.NRFt), gen)
    f_bb = _random_complex((cfg.K, cfg.NRFt, cfg.Ns), gen)
    w_rf = _random_complex((cfg.Nr, cfg.NRFr), gen)
    w_bb = _random_complex((cfg.K, cfg.NRFr, cfg.Ns), gen)
    return h, f_rf, f_bb, w_rf, w_bb


def test_zero_channel_zero_rate(tiny_cfg):
    cfg = tiny_cfg
    gen = torch.Generator().manual_seed(0)
    h = torch.zeros((cfg.K, cfg.Nr, cfg.Nt), dtype=torch.complex128)
    _, f_rf, f_bb, w_rf, w_bb = _random_setup(cfg, gen)
    report = spectral_efficiency(h, f_rf, f_bb, w_rf, w_bb, cfg.rho, cfg.sigma_n2, cfg)
    assert report.mean == 0.0
    np.testing.assert_array_equal(report.per_subchannel, np.zeros(cfg.K))


def test_scalar_case_matches_hand_formula():
    h_val = 0.8 - 0.4j
    rho, sigma2 = 5.0, 0.7
    one = torch.ones((1, 1), dtype=torch.complex128)
    h = torch.full((1, 1, 1), h_val, dtype=torch.complex128)
    report = spectral_efficiency(h, one, one.reshape(1, 1, 1), one,
                                 one.reshape(1, 1, 1), rho, sigma2)
    expected = math.log2(1 + rho * abs(h_val) ** 2 / sigma2)
    assert report.mean == pytest.approx(expected, rel=1e-14)


def test_logdet_agrees_with_generalized_eigenvalue_oracle():
    # independent numpy oracle on 2x2 instances:
    # rate = sum log2(1 + (rho/Ns) * geneig(Lam Lam^H, Omega))
    rng = np.random.default_rng(7)
    rho, sigma2, ns = 3.7, 0.9, 2
    eye = torch.eye(2, dtype=torch.complex128)
    worst = 0.0
    for _ in range(1000):
        h = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        w_bb = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        lam = w_bb.conj().T @ h
        omega = sigma2 * (w_bb.conj().T @ w_bb)
        mu = scipy.linalg.eigvals(lam @ lam.conj().T, omega)
        oracle = float(np.sum(np.log2(1 + (rho / ns) * mu.real)))
        got = rates_per_subchannel(
            torch.as_tensor(h).reshape(1, 2, 2),
            eye,
            eye.reshape(1, 2, 2),
            eye,
            torch.as_tensor(w_bb).reshape(1, 2, 2),
            rho,
            sigma2,
        )
        worst = max(worst, abs(float(got[0]) - oracle))
    assert worst < 1e-10


def test_rate_monotone_in_power(tiny_cfg):
    gen = torch.Generator().manual_seed(1)
    h, f_rf, f_bb, w_rf, w_bb = _random_setup(tiny_cfg, gen)
    rhos = [0.1, 0.5, 1.0, 5.0, 25.0, 100.0]
    rates = [
        spectral_efficiency(h, f_rf, f_bb, w_rf, w_bb, r, tiny_cfg.sigma_n2).mean
        for r in rhos
    ]
    assert all(b >= a for a, b in zip(rates, rates[1:]))


def test_combiner_scale_invariance(tiny_cfg):
    gen = torch.Generator().manual_seed(2)
    h, f_rf, f_bb, w_rf, w_bb = _random_setup(tiny_cfg, gen)
    a = _random_complex((tiny_cfg.Ns, tiny_cfg.Ns), gen) + 2 * torch.eye(
        tiny_cfg.Ns, dtype=torch.complex128
    )
    base = spectral_efficiency(h, f_rf, f_bb, w_rf, w_bb, 4.0, 1.3)
    scaled = spectral_efficiency(h, f_rf, f_bb, w_rf, w_bb @ a, 4.0, 1.3)
    np.testing.assert_allclose(scaled.per_subchannel, base.per_subchannel,
                               rtol=1e-8, atol=1e-10)


def test_mean_invariant_to_subchannel_order(tiny_cfg):
    gen = torch.Generator().manual_seed(3)
    h, f_rf, f_bb, w_rf, w_bb = _random_setup(tiny_cfg, gen)
    perm = torch.randperm(tiny_cfg.K, generator=gen)
    base = spectral_efficiency(h, f_rf, f_bb, w_rf, w_bb, 4.0, 1.0)
    shuffled = spectral_efficiency(h[perm], f_rf, f_bb[perm], w_rf, w_bb[perm], 4.0, 1.0)
    assert shuffled.mean == pytest.approx(base.mean, rel=1e-12)
    np.testing.assert_allclose(
        shuffled.per_subchannel, base.per_subchannel[perm.numpy()], rtol=1e-12
    )


def test_rate_gradient_wrt_digital_beamformer(tiny_cfg):
    gen = torch.Generator().manual_seed(4)
    h, f_rf, f_bb, w_rf, w_bb = _random_setup(tiny_cfg, gen)
    f_bb_param = torch.view_as_real(f_bb).clone().requires_grad_()

    def loss_fn():
        rates = rates_per_subchannel(
            h, f_rf, torch.view_as_complex(f_bb_param), w_rf, w_bb,
            tiny_cfg.rho, tiny_cfg.sigma_n2,
        )
        return rates.mean()

    assert_grad_matches_fd(loss_fn, {"f_bb": f_bb_param})


def test_per_subchannel_rates_are_non_negative(tiny_cfg):
    for seed in range(5):
        gen = torch.Generator().manual_seed(seed)
        h, f_rf, f_bb, w_rf, w_bb = _random_setup(tiny_cfg, gen)
        report = spectral_efficiency(h, f_rf, f_bb, w_rf, w_bb, 2.0, 1.0)
        assert (report.per_subchannel >= 0).all()
        assert report.mean == pytest.approx(report.per_subchannel.mean())


def test_singular_noise_covariance_raises(tiny_cfg):
    gen = torch.Generator().manual_seed(5)
    h, f_rf, f_bb, w_rf, _ = _random_setup(tiny_cfg, gen)
    w_bb = torch.zeros((tiny_cfg.K, tiny_cfg.NRFr, tiny_cfg.Ns), dtype=torch.complex128)
    with pytest.raises(SpectralEfficiencyError, match="block"):
        spectral_efficiency(h, f_rf, f_bb, w_rf, w_bb, 1.0, 1.0)


def test_total_loss_values():
    assert total_loss(1.0, 3.0, alpha=0.2) == pytest.approx(-2.8)
    assert total_loss(7.0, 3.0, alpha=0.0) == -3.0
    assert total_loss(0.0, 3.0, alpha=0.9) == -3.0
    with pytest.raises(ValueError):
        total_loss(1.0, 1.0, alpha=-0.5)


def test_rate_report_shape_check(tiny_cfg, desk_cfg):
    gen = torch.Generator().manual_seed(6)
    h, f_rf, f_bb, w_rf, w_bb = _random_setup(tiny_cfg, gen)
    with pytest.raises(ValueError, match="does not match config"):
        spectral_efficiency(h, f_rf, f_bb, w_rf, w_bb, 1.0, 1.0, desk_cfg)
