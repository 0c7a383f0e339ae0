import math

import pytest
import torch

from conftest import assert_grad_matches_fd
from fdbeam.config import SystemConfig, validate
from fdbeam.pilot import (
    PilotNetwork,
    analog_from_phases,
    complex_normal,
    project_pilot_power,
    transmit_pilots,
)


def _pilots(cfg, seed=0):
    return PilotNetwork(cfg, torch.Generator().manual_seed(seed))


def test_zero_phases_give_real_constant():
    out = analog_from_phases(torch.zeros((3, 2), dtype=torch.float64), 0.25)
    expected = torch.full((3, 2), 0.25, dtype=torch.float64)
    assert torch.equal(out.real, expected)
    assert torch.equal(out.imag, torch.zeros_like(expected))


def test_modulus_equals_scale_for_any_phase():
    gen = torch.Generator().manual_seed(1)
    phases = 20 * torch.randn((5, 7), dtype=torch.float64, generator=gen)
    out = analog_from_phases(phases, 1 / math.sqrt(16))
    mod2 = out.real**2 + out.imag**2
    assert float((mod2 * 16 - 1).abs().max()) < 1e-14


def test_quarter_turn_entry():
    phases = torch.zeros((2, 2), dtype=torch.float64)
    phases[0, 0] = math.pi / 2
    out = analog_from_phases(phases, 1 / math.sqrt(4))
    assert complex(out[0, 0]) == pytest.approx(0.5j, abs=1e-15)


def test_power_projection_interior_point_unchanged():
    s = torch.tensor([1.0 + 0j, 1j], dtype=torch.complex128)  # power 2
    out = project_pilot_power(s, 4.0)
    assert torch.equal(out, s)


def test_power_projection_boundary():
    s = torch.tensor([4.0 + 0j, 0j], dtype=torch.complex128)  # power 16
    out = project_pilot_power(s, 4.0)
    assert float((out.abs() ** 2).sum()) == pytest.approx(4.0, rel=1e-14)


def test_power_projection_direction_preserved():
    s = torch.tensor([2.0 + 0j, 2.0j], dtype=torch.complex128)  # power 8
    out = project_pilot_power(s, 4.0)
    expected = torch.tensor([math.sqrt(2), math.sqrt(2) * 1j], dtype=torch.complex128)
    assert torch.allclose(out, expected, atol=1e-14)


def test_zero_channel_zero_noise_gives_zero_output(desk_cfg):
    pilots = _pilots(desk_cfg)
    h = torch.zeros((2, desk_cfg.K, desk_cfg.Nr, desk_cfg.Nt), dtype=torch.complex128)
    y = transmit_pilots(h, pilots, desk_cfg)
    assert y.shape == (2, desk_cfg.Kp, desk_cfg.NRFr, desk_cfg.L)
    assert float(y.detach().abs().max()) == 0.0


def test_scalar_link_reduces_to_scaled_channel():
    cfg = validate(SystemConfig(Nt=1, Nr=1, NRFt=1, NRFr=1, Ns=1, K=1, Kp=1, M=1,
                                L=1, rho_p=9.0, sigma_n2=0.0, B=4, D=4, V=1))
    pilots = _pilots(cfg)
    with torch.no_grad():
        pilots.theta.zero_()
        pilots.phi.zero_()
        pilots.s.copy_(torch.tensor([[[1.0, 0.0]]]))
    h_val = 0.3 - 0.7j
    h = torch.full((1, 1, 1, 1), h_val, dtype=torch.complex128)
    y = transmit_pilots(h, pilots, cfg).detach()
    assert complex(y[0, 0, 0]) == pytest.approx(3.0 * h_val, abs=1e-14)


def test_noiseless_map_is_homogeneous_in_pilot_power(desk_cfg):
    pilots = _pilots(desk_cfg)
    gen = torch.Generator().manual_seed(2)
    h = torch.complex(
        torch.randn((3, desk_cfg.K, desk_cfg.Nr, desk_cfg.Nt), dtype=torch.float64, generator=gen),
        torch.randn((3, desk_cfg.K, desk_cfg.Nr, desk_cfg.Nt), dtype=torch.float64, generator=gen),
    )
    y1 = transmit_pilots(h, pilots, desk_cfg)
    cfg2 = desk_cfg.replace(rho_p=2 * desk_cfg.rho_p)
    y2 = transmit_pilots(h, pilots, cfg2)
    assert torch.allclose(y2, math.sqrt(2) * y1, rtol=1e-13, atol=0)


def test_channel_shape_mismatch_rejected(desk_cfg, tiny_cfg):
    pilots = _pilots(desk_cfg)
    h = torch.zeros((1, tiny_cfg.K, tiny_cfg.Nr, tiny_cfg.Nt), dtype=torch.complex128)
    with pytest.raises(ValueError, match="does not match config"):
        transmit_pilots(h, pilots, desk_cfg)


def test_received_energy_gradients_match_finite_differences(tiny_cfg):
    pilots = _pilots(tiny_cfg)
    gen = torch.Generator().manual_seed(3)
    h = torch.complex(
        torch.randn((2, tiny_cfg.K, tiny_cfg.Nr, tiny_cfg.Nt), dtype=torch.float64, generator=gen),
        torch.randn((2, tiny_cfg.K, tiny_cfg.Nr, tiny_cfg.Nt), dtype=torch.float64, generator=gen),
    )
    noise = complex_normal((2, tiny_cfg.Kp, tiny_cfg.L, tiny_cfg.Nr), tiny_cfg.sigma_n2,
                           torch.Generator().manual_seed(4))

    def loss_fn():
        y = transmit_pilots(h, pilots, tiny_cfg, noise=noise)
        return (y.real**2 + y.imag**2).sum()

    assert_grad_matches_fd(
        loss_fn, {"theta": pilots.theta, "phi": pilots.phi, "s": pilots.s}
    )


def test_constraints_survive_projected_training_steps(tiny_cfg):
    pilots = _pilots(tiny_cfg)
    opt = torch.optim.Adam(pilots.parameters(), lr=0.3)
    gen = torch.Generator().manual_seed(5)
    h = torch.complex(
        torch.randn((4, tiny_cfg.K, tiny_cfg.Nr, tiny_cfg.Nt), dtype=torch.float64, generator=gen),
        torch.randn((4, tiny_cfg.K, tiny_cfg.Nr, tiny_cfg.Nt), dtype=torch.float64, generator=gen),
    )
    for _ in range(25):
        y = transmit_pilots(h, pilots, tiny_cfg, generator=gen)
        loss = -(y.real**2 + y.imag**2).sum()  # pushes pilot power up
        opt.zero_grad()
        loss.backward()
        opt.step()
        pilots.project_power()
        f_mod = pilots.bs_analog().abs() ** 2 * tiny_cfg.Nt
        w_mod = pilots.ue_analog().abs() ** 2 * tiny_cfg.Nr
        assert float((f_mod - 1).abs().max()) < 1e-14
        assert float((w_mod - 1).abs().max()) < 1e-14
        s_power = (pilots.pilot_symbols.abs() ** 2).sum(dim=-1)
        assert float(s_power.max()) <= tiny_cfg.NRFt + 1e-12


def test_noise_covariance_matches_combined_statistics(tiny_cfg):
    # with H = 0 the output is W^H n, so its covariance is sigma_n2 * W^H W
    cfg = tiny_cfg.replace(sigma_n2=2.5)
    pilots = _pilots(cfg)
    n_draws = 60_000
    h = torch.zeros((n_draws, cfg.K, cfg.Nr, cfg.Nt), dtype=torch.complex128)
    y = transmit_pilots(h, pilots, cfg, generator=torch.Generator().manual_seed(6))
    w = pilots.ue_analog().detach()
    for l in (0, cfg.L - 1):
        samples = y[:, 0, :, l].detach()  # (n_draws, NRFr)
        cov = torch.einsum("ni,nj->ij", samples, samples.conj()) / n_draws
        expected = cfg.sigma_n2 * (w[l].mH @ w[l])
        assert torch.allclose(cov, expected, atol=0.05 * cfg.sigma_n2)


def test_initial_symbols_respect_budget(desk_cfg):
    for seed in range(5):
        pilots = _pilots(desk_cfg, seed)
        power = (pilots.pilot_symbols.abs() ** 2).sum(dim=-1)
        assert float(power.max()) <= desk_cfg.NRFt + 1e-12


def test_identical_seed_identical_parameters(desk_cfg):
    a = _pilots(desk_cfg, 9)
    b = _pilots(desk_cfg, 9)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
