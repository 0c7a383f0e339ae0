"""Classical reference schemes and the MLP ablation network.

* fully-digital SVD beamforming with perfect CSI (performance upper bound),
* OMP sparse channel estimation over an angular dictionary, driven by the
  same received pilots as the learned pipeline,
* alternating hybrid factorization: exact least-squares digital stages and
  Riemannian conjugate-gradient steps on the constant-modulus manifold,
* an MLP that replaces the graph network layer stack while sharing the
  readout and normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .channel import steering_vector
from .config import SystemConfig, pilot_subchannels
from .gnn import NodeStates, readout_matrices, _affine
from .objective import RateReport, rates_per_subchannel
from .pilot import PilotNetwork

__all__ = [
    "AngleDictionary",
    "fully_digital_svd",
    "omp_recover",
    "omp_channel_estimate",
    "mo_hybrid",
    "MoResult",
    "MlpBeamformer",
]


def fully_digital_svd(
    h: np.ndarray, rho: float, sigma_n2: float, cfg: SystemConfig
) -> RateReport:
    """Genie-aided fully digital beamforming: per-subchannel SVD, equal power.

    F[k] / W[k] are the top-Ns right/left singular vectors of H[k]; the rate
    runs through the same log-det machinery with identity analog stages.
    """
    h = np.asarray(h, dtype=np.complex128)
    if h.shape != (cfg.K, cfg.Nr, cfg.Nt):
        raise ValueError(f"expected H of shape {(cfg.K, cfg.Nr, cfg.Nt)}, got {h.shape}")
    u, _, vh = np.linalg.svd(h)
    f_bb = vh.conj().transpose(0, 2, 1)[:, :, : cfg.Ns]  # (K, Nt, Ns)
    w_bb = u[:, :, : cfg.Ns]  # (K, Nr, Ns)
    rates = rates_per_subchannel(
        torch.as_tensor(h),
        torch.eye(cfg.Nt, dtype=torch.complex128),
        torch.as_tensor(f_bb),
        torch.eye(cfg.Nr, dtype=torch.complex128),
        torch.as_tensor(w_bb),
        rho,
        sigma_n2,
    )
    per = rates.numpy()
    return RateReport(per_subchannel=per, mean=float(per.mean()))


@dataclass(frozen=True)
class AngleDictionary:
    """Array-response dictionaries on uniform angle grids (unit-norm columns)."""

    a_t: np.ndarray  # (Nt, Gt)
    a_r: np.ndarray  # (Nr, Gr)

    @classmethod
    def uniform(cls, cfg: SystemConfig, gt: int | None = None, gr: int | None = None
                ) -> "AngleDictionary":
        gt = 2 * cfg.Nt if gt is None else gt
        gr = 2 * cfg.Nr if gr is None else gr
        t_angles = -np.pi / 2 + np.pi * (np.arange(gt) + 0.5) / gt
        r_angles = -np.pi / 2 + np.pi * (np.arange(gr) + 0.5) / gr
        return cls(
            a_t=steering_vector(t_angles, cfg.Nt).T.astype(np.complex128),
            a_r=steering_vector(r_angles, cfg.Nr).T.astype(np.complex128),
        )


def _sensing_matrix(pilots: PilotNetwork, dictionary: AngleDictionary,
                    cfg: SystemConfig) -> np.ndarray:
    """Map from angular-domain gains to the stacked received pilot vector.

    Column (i, j) collects, over pilot transmissions l and UE RF chains c,
    sqrt(rho_p) * (W_l^H a_r_i)_c * (a_t_j^H F_l s_l); rows are ordered
    (l, c) to match the stacking of the received tensor.
    """
    with torch.no_grad():
        w = pilots.ue_analog().numpy()  # (L, Nr, NRFr)
        f = pilots.bs_analog().numpy()  # (L, Nt, NRFt)
        s = pilots.pilot_symbols.numpy()  # (L, NRFt)
    x = np.einsum("ltc,lc->lt", f, s)  # (L, Nt)
    rx_proj = np.einsum("lnc,ng->lcg", w.conj(), dictionary.a_r)  # (L, NRFr, Gr)
    tx_proj = np.einsum("ng,ln->lg", dictionary.a_t.conj(), x)  # (L, Gt)
    phi = math.sqrt(cfg.rho_p) * np.einsum("lcg,lt->lcgt", rx_proj, tx_proj)
    gr = dictionary.a_r.shape[1]
    gt = dictionary.a_t.shape[1]
    return phi.reshape(cfg.L * cfg.NRFr, gr * gt)


def omp_recover(y: np.ndarray, phi: np.ndarray, n_paths: int
                ) -> tuple[np.ndarray, np.ndarray]:
    """Greedy sparse recovery: atom selection by normalized correlation,
    gains by least squares over the selected support.

    Returns the dense gain vector and the residual-norm trace (initial norm
    followed by one entry per iteration).
    """
    col_norm = np.linalg.norm(phi, axis=0)
    col_norm[col_norm == 0] = 1.0
    support: list[int] = []
    residual = y.copy()
    res_norms = [float(np.linalg.norm(residual))]
    gains = np.zeros(phi.shape[1], dtype=np.complex128)
    for _ in range(n_paths):
        corr = np.abs(phi.conj().T @ residual) / col_norm
        corr[support] = -1.0  # do not reselect
        support.append(int(np.argmax(corr)))
        sub = phi[:, support]
        g, *_ = np.linalg.lstsq(sub, y, rcond=None)
        residual = y - sub @ g
        res_norms.append(float(np.linalg.norm(residual)))
    gains[support] = g
    return gains, np.asarray(res_norms)


def omp_channel_estimate(
    y: np.ndarray | torch.Tensor,
    pilots: PilotNetwork,
    dictionary: AngleDictionary,
    n_paths: int,
    cfg: SystemConfig,
) -> np.ndarray:
    """Sparse channel estimate on all K subchannels from pilot observations.

    Per pilot subchannel, OMP over the angular dictionary recovers n_paths
    atom pairs and gains; the per-atom gains are interpolated linearly over
    the subchannel index (flat beyond the last pilot subchannel) and mapped
    back through the dictionary.
    """
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    if n_paths > cfg.L * cfg.NRFr:
        raise ValueError(
            f"sensing matrix has only {cfg.L * cfg.NRFr} rows; cannot recover "
            f"{n_paths} paths (pilot length too short)"
        )
    y = np.asarray(torch.as_tensor(y).detach().cpu().numpy(), dtype=np.complex128)
    if y.shape != (cfg.Kp, cfg.NRFr, cfg.L):
        raise ValueError(
            f"expected received pilots of shape {(cfg.Kp, cfg.NRFr, cfg.L)}, got {y.shape}"
        )
    phi = _sensing_matrix(pilots, dictionary, cfg)
    gr = dictionary.a_r.shape[1]
    gt = dictionary.a_t.shape[1]

    pilot_gains = np.zeros((cfg.Kp, gr * gt), dtype=np.complex128)
    for p in range(cfg.Kp):
        # stack rows in (l, c) order to match the sensing matrix
        y_vec = y[p].T.reshape(-1)
        pilot_gains[p], _ = omp_recover(y_vec, phi, n_paths)

    # linear interpolation of every angular gain across the subchannel axis,
    # flat extrapolation past the last pilot subchannel
    kp_idx = pilot_subchannels(cfg).astype(np.float64)
    all_k = np.arange(cfg.K, dtype=np.float64)
    gains_k = np.empty((cfg.K, gr * gt), dtype=np.complex128)
    gains_k.real = _interp_columns(all_k, kp_idx, pilot_gains.real)
    gains_k.imag = _interp_columns(all_k, kp_idx, pilot_gains.imag)

    g_mats = gains_k.reshape(cfg.K, gr, gt)
    return np.einsum("ng,kgq,mq->knm", dictionary.a_r, g_mats, dictionary.a_t.conj())


def _interp_columns(x: np.ndarray, xp: np.ndarray, fp: np.ndarray) -> np.ndarray:
    """np.interp along axis 0 of a 2-D table (clamps beyond the endpoints)."""
    return np.stack([np.interp(x, xp, fp[:, j]) for j in range(fp.shape[1])], axis=1)


@dataclass(frozen=True)
class MoResult:
    """Alternating-minimization output: beamformer, combiner, diagnostics."""

    f_rf: np.ndarray
    f_bb: np.ndarray
    w_rf: np.ndarray
    w_bb: np.ndarray
    objective_bs: np.ndarray
    objective_ue: np.ndarray
    converged: bool


def _riemannian_factorize(
    targets: np.ndarray,
    n_rf: int,
    radius: float,
    iters: int,
    tol: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """Fit targets[k] ~= X @ B[k] with |X_ij| = radius, B[k] free.

    Alternates the exact least-squares update of B with one Armijo-backtracked
    Riemannian conjugate-gradient step on X, so the objective never increases.
    Returns (X, B, objective trace, converged flag).
    """
    k, n, ns = targets.shape
    x = radius * np.exp(2j * np.pi * rng.random((n, n_rf)))
    r2 = radius * radius

    def ls_digital(xc):
        return np.linalg.pinv(xc) @ targets  # (K, n_rf, ns), broadcast pinv

    def objective(xc, b):
        diff = targets - xc @ b
        return float(np.sum(diff.real**2 + diff.imag**2))

    def egrad(xc, b):
        diff = targets - xc @ b
        return -np.sum(diff @ b.conj().transpose(0, 2, 1), axis=0)

    def project(xc, g):
        return g - (g * xc.conj()).real / r2 * xc

    def retract(xc, step_dir):
        z = xc + step_dir
        mag = np.abs(z)
        mag[mag == 0] = 1.0
        return radius * z / mag

    b = ls_digital(x)
    obj = [objective(x, b)]
    grad_prev = None
    direction = None
    converged = False
    for _ in range(iters):
        grad = project(x, egrad(x, b))
        grad_norm2 = float(np.sum(grad.real**2 + grad.imag**2))
        if grad_norm2 < 1e-30:
            converged = True
            break
        if direction is None:
            direction = -grad
        else:
            prev_t = project(x, grad_prev)
            beta = max(
                0.0,
                float(np.sum((grad.conj() * (grad - prev_t)).real)) /
                float(np.sum(prev_t.real**2 + prev_t.imag**2) + 1e-300),
            )
            direction = -grad + beta * project(x, direction)
            if float(np.sum((direction.conj() * grad).real)) >= 0:
                direction = -grad
        # Armijo backtracking on the retracted step
        slope = float(np.sum((direction.conj() * grad).real))
        step = 1.0
        f0 = obj[-1]
        accepted = False
        for _ in range(40):
            x_new = retract(x, step * direction)
            b_new = ls_digital(x_new)
            f_new = objective(x_new, b_new)
            if f_new <= f0 + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break  # no descent step found; keep the best iterate
        x, b = x_new, b_new
        obj.append(f_new)
        grad_prev = grad
        if f0 - f_new <= tol * max(f0, 1e-300):
            converged = True
            break
    return x, b, np.asarray(obj), converged


def mo_hybrid(
    h_est: np.ndarray,
    cfg: SystemConfig,
    iters: int = 200,
    tol: float = 1e-6,
    seed: int | None = None,
) -> MoResult:
    """Hybrid beamformer/combiner by alternating factorization of the
    per-subchannel SVD targets.

    Digital power is rescaled at the end so the beamformer meets the total
    power constraint exactly; the combiner carries no power constraint.
    """
    h_est = np.asarray(h_est, dtype=np.complex128)
    if h_est.shape != (cfg.K, cfg.Nr, cfg.Nt):
        raise ValueError(
            f"expected H on all K subchannels {(cfg.K, cfg.Nr, cfg.Nt)}, got {h_est.shape}"
        )
    u, _, vh = np.linalg.svd(h_est)
    f_opt = vh.conj().transpose(0, 2, 1)[:, :, : cfg.Ns]
    w_opt = u[:, :, : cfg.Ns]
    rng = np.random.default_rng(cfg.seed if seed is None else seed)

    f_rf, f_bb, obj_bs, conv_bs = _riemannian_factorize(
        f_opt, cfg.NRFt, 1.0 / math.sqrt(cfg.Nt), iters, tol, rng
    )
    w_rf, w_bb, obj_ue, conv_ue = _riemannian_factorize(
        w_opt, cfg.NRFr, 1.0 / math.sqrt(cfg.Nr), iters, tol, rng
    )

    power = float(np.sum(np.abs(f_rf @ f_bb) ** 2))
    if power == 0:
        raise ValueError("degenerate beamformer: digital stack has zero power")
    f_bb = f_bb * math.sqrt(cfg.K * cfg.Ns / power)
    return MoResult(
        f_rf=f_rf,
        f_bb=f_bb,
        w_rf=w_rf,
        w_bb=w_bb,
        objective_bs=obj_bs,
        objective_ue=obj_ue,
        converged=conv_bs and conv_ue,
    )


class MlpBeamformer(nn.Module):
    """Fully-connected replacement for the graph network layer stack.

    The flattened pilot tensor passes through G+1 affine stages (the last one
    purely affine, like the graph network's readout convention), producing the
    packed node states consumed by the shared readout and normalization.
    """

    def __init__(self, cfg: SystemConfig, n_antennas: int, n_rf: int,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        self.n_antennas = n_antennas
        self.n_rf = n_rf
        self.dim_c = 2 * n_rf * cfg.Ns
        self.dim_v = 2 * n_rf * n_antennas
        in_dim = 2 * cfg.Kp * cfg.NRFr * cfg.L
        out_dim = cfg.K * self.dim_c + self.dim_v
        dims = [in_dim] + [out_dim] * (cfg.G + 1)
        self.stages = nn.ModuleList(
            _affine(dims[i], dims[i + 1], generator) for i in range(cfg.G + 1)
        )
        self.act = nn.SiLU()

    def forward(self, y: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Raw (analog, digital) matrices before constraint normalization."""
        cfg = self.cfg
        batch = y.shape[:-3]
        feats = torch.cat(
            [y.real.reshape(*batch, -1), y.imag.reshape(*batch, -1)], dim=-1
        )
        for stage in self.stages[:-1]:
            feats = self.act(stage(feats))
        feats = self.stages[-1](feats)
        c = feats[..., : cfg.K * self.dim_c].reshape(*batch, cfg.K, self.dim_c)
        v = feats[..., cfg.K * self.dim_c :]
        return readout_matrices(
            NodeStates(c=c, v=v), self.n_antennas, self.n_rf, cfg.Ns
        )
