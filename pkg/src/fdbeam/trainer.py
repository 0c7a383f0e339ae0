"""End-to-end training of pilots, feedback codebook, and beamformer networks.

One forward pass per batch: sound the channel with the learned pilots (fresh
noise every epoch), quantize the received tensor with straight-through
gradients, decode at the BS, run the BS network on the reconstruction and
the UE network on the raw reception, and score the resulting beamformers by
mean spectral efficiency. The optimizer minimizes alpha * L_V - R; the pilot
power projection runs after every step.

Evaluation draws per-sample noise from fixed child seeds, so results are
reproducible bit-for-bit from (config, checkpoint, split).
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import torch
from torch import nn

from .baselines import AngleDictionary, MlpBeamformer, fully_digital_svd, mo_hybrid, omp_channel_estimate
from .config import (
    SEED_EVAL_NOISE,
    SEED_PARAMS,
    SEED_SPLIT,
    SEED_TRAIN,
    SystemConfig,
    child_seed,
    validate,
)
from .feedback import (
    Codebook,
    quantize_straight_through,
    split_received,
    unsplit_received,
    vq_loss,
)
from .gnn import (
    BeamformerGNN,
    DegenerateBeamformerError,
    HybridBeamformer,
    HybridCombiner,
    normalize_beamformer,
    normalize_combiner,
)
from .objective import SpectralEfficiencyError, rates_per_subchannel, total_loss
from .pilot import CDTYPE, PilotNetwork, complex_normal, transmit_pilots

__all__ = [
    "ARCHITECTURES",
    "TrainingDiverged",
    "CheckpointMismatch",
    "SplitIndices",
    "ForwardResult",
    "JointPipeline",
    "split_dataset",
    "TrainState",
    "train",
    "evaluate",
    "evaluate_baseline",
    "eval_noise_for_samples",
    "check_hard_constraints",
    "config_hash",
    "save_checkpoint",
    "load_checkpoint",
]

ARCHITECTURES = ("gnn", "mlp")
COMMITMENT_BETA = 0.25
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


class CheckpointMismatch(RuntimeError):
    """Checkpoint was produced under a different configuration."""


class SplitIndices(NamedTuple):
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def split_dataset(num_samples: int, seed: int) -> SplitIndices:
    """Deterministic disjoint 60/20/20 train/validation/test split."""
    if num_samples < 5:
        raise ValueError(f"need at least 5 samples to split 60/20/20, got {num_samples}")
    rng = np.random.default_rng(child_seed(seed, SEED_SPLIT))
    perm = rng.permutation(num_samples)
    n_train = int(round(0.6 * num_samples))
    n_val = int(round(0.2 * num_samples))
    return SplitIndices(
        train=np.sort(perm[:n_train]),
        val=np.sort(perm[n_train : n_train + n_val]),
        test=np.sort(perm[n_train + n_val :]),
    )


class ForwardResult(NamedTuple):
    received: torch.Tensor  # Y at the UE, (..., Kp, NRFr, L)
    reconstructed: torch.Tensor  # Y-hat at the BS after feedback
    vq: torch.Tensor  # quantization loss L_V (scalar)
    beamformer: HybridBeamformer
    combiner: HybridCombiner
    rates: torch.Tensor  # (..., K)
    indices: torch.Tensor | None  # chosen codewords per segment


class JointPipeline(nn.Module):
    """Pilot network + quantized feedback + BS/UE beamforming networks."""

    def __init__(self, cfg: SystemConfig, arch: str = "gnn",
                 generator: torch.Generator | None = None):
        super().__init__()
        if arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
        validate(cfg)
        self.cfg = cfg
        self.arch = arch
        if generator is None:
            generator = torch.Generator().manual_seed(child_seed(cfg.seed, SEED_PARAMS))
        self.pilots = PilotNetwork(cfg, generator)
        self.codebook = Codebook(cfg.D, cfg.V, generator)
        net_cls = BeamformerGNN if arch == "gnn" else MlpBeamformer
        self.bs_net = net_cls(cfg, cfg.Nt, cfg.NRFt, generator)
        self.ue_net = net_cls(cfg, cfg.Nr, cfg.NRFr, generator)

    def forward(
        self,
        h: torch.Tensor,
        noise: torch.Tensor | None = None,
        generator: torch.Generator | None = None,
        quantize: bool = True,
    ) -> ForwardResult:
        """Full differentiable pass for a channel batch (..., K, Nr, Nt)."""
        cfg = self.cfg
        h = h.to(CDTYPE)
        y = transmit_pilots(h, self.pilots, cfg, noise=noise, generator=generator)
        segments = split_received(y, cfg)
        if quantize:
            quantized, idx = quantize_straight_through(segments, self.codebook.codewords)
            lv = vq_loss(segments, self.codebook.codewords, COMMITMENT_BETA, idx)
            y_hat = unsplit_received(quantized, cfg)
        else:
            idx = None
            lv = torch.zeros((), dtype=segments.dtype)
            y_hat = y
        f = normalize_beamformer(*self.bs_net(y_hat), cfg)
        w = normalize_combiner(*self.ue_net(y), cfg)
        rates = rates_per_subchannel(
            h, f.f_rf, f.f_bb, w.w_rf, w.w_bb, cfg.rho, cfg.sigma_n2
        )
        return ForwardResult(
            received=y, reconstructed=y_hat, vq=lv, beamformer=f, combiner=w,
            rates=rates, indices=idx,
        )


def check_hard_constraints(
    f: HybridBeamformer, w: HybridCombiner, pilots: PilotNetwork, cfg: SystemConfig
) -> None:
    """Raise AssertionError unless every hard constraint holds.

    Modulus constraints are checked to double-precision roundoff; the total
    beamformer power to 1e-6 relative; the pilot power budget with 1e-12
    slack.
    """
    mod_tol = 1e-12
    f_mod = (f.f_rf.real**2 + f.f_rf.imag**2).detach()
    assert float((f_mod * cfg.Nt - 1).abs().max()) <= mod_tol, "analog beamformer modulus"
    w_mod = (w.w_rf.real**2 + w.w_rf.imag**2).detach()
    assert float((w_mod * cfg.Nr - 1).abs().max()) <= mod_tol, "analog combiner modulus"
    f_eff = f.f_rf.unsqueeze(-3) @ f.f_bb
    power = (f_eff.real**2 + f_eff.imag**2).sum(dim=(-3, -2, -1)).detach()
    target = cfg.K * cfg.Ns
    assert float((power / target - 1).abs().max()) <= 1e-6, "beamformer power"
    s_power = (pilots.pilot_symbols.detach().abs() ** 2).sum(dim=-1)
    assert float(s_power.max()) <= cfg.NRFt + 1e-12, "pilot symbol power budget"

    # Sounding-stage analog matrices carry the same modulus constraints.
    fp = (pilots.bs_analog().detach().abs() ** 2 * cfg.Nt - 1).abs().max()
    wp = (pilots.ue_analog().detach().abs() ** 2 * cfg.Nr - 1).abs().max()
    assert float(fp) <= mod_tol and float(wp) <= mod_tol, "sounding analog modulus"


@dataclass
class TrainState:
    """Everything needed to continue or evaluate a training run."""

    cfg: SystemConfig
    arch: str
    pipeline: JointPipeline
    optimizer: torch.optim.Optimizer
    generator: torch.Generator
    epoch: int = 0
    best_val_se: float = -math.inf
    best_model: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def best_pipeline(self) -> JointPipeline:
        """Pipeline loaded with the best-validation parameters."""
        pipe = JointPipeline(self.cfg, self.arch)
        pipe.load_state_dict(self.best_model if self.best_model else self.pipeline.state_dict())
        return pipe


def _new_state(cfg: SystemConfig, arch: str, lr: float) -> TrainState:
    generator = torch.Generator().manual_seed(child_seed(cfg.seed, SEED_TRAIN))
    param_gen = torch.Generator().manual_seed(child_seed(cfg.seed, SEED_PARAMS))
    pipeline = JointPipeline(cfg, arch, param_gen)
    optimizer = torch.optim.Adam(pipeline.parameters(), lr=lr)
    return TrainState(cfg=cfg, arch=arch, pipeline=pipeline, optimizer=optimizer,
                      generator=generator)


def eval_noise_for_samples(
    cfg: SystemConfig, sample_indices: np.ndarray
) -> torch.Tensor:
    """Fixed evaluation noise, one CN(0, sigma_n2) block per dataset index."""
    blocks = []
    for i in sample_indices:
        gen = torch.Generator().manual_seed(child_seed(cfg.seed, SEED_EVAL_NOISE, int(i)))
        blocks.append(complex_normal((cfg.Kp, cfg.L, cfg.Nr), cfg.sigma_n2, gen))
    return torch.stack(blocks)


def train(
    cfg: SystemConfig,
    dataset: np.ndarray,
    epochs: int = 500,
    batch_size: int = 128,
    lr: float = 1e-3,
    arch: str = "gnn",
    state: TrainState | None = None,
    train_codebook: bool = True,
    assert_constraints: bool = False,
) -> tuple[TrainState, list]:
    """Joint optimization over the 60/20/20-split dataset.

    Returns the final state (with the best-validation snapshot retained) and
    the per-epoch history of train loss / L_V / rate and validation SE.
    Passing a previously returned `state` resumes training.
    """
    validate(cfg)
    dataset = np.asarray(dataset)
    split = split_dataset(dataset.shape[0], cfg.seed)
    h_train = torch.as_tensor(dataset[split.train]).to(CDTYPE)
    h_val = torch.as_tensor(dataset[split.val]).to(CDTYPE)

    if state is None:
        state = _new_state(cfg, arch, lr)
        if train_codebook:
            with torch.no_grad():
                probe = h_train[: min(len(h_train), 4 * cfg.D)]
                y = transmit_pilots(probe, state.pipeline.pilots, cfg,
                                    generator=state.generator)
                state.pipeline.codebook.init_from_segments(
                    split_received(y, cfg), state.generator
                )
    pipeline, optimizer, generator = state.pipeline, state.optimizer, state.generator

    n_train = len(h_train)
    val_noise = eval_noise_for_samples(cfg, split.val)
    d = cfg.D

    for _ in range(epochs):
        pipeline.train()
        order = torch.randperm(n_train, generator=generator)
        used = torch.zeros(d, dtype=torch.bool)
        epoch_loss = epoch_lv = epoch_rate = 0.0
        n_batches = 0
        last_segments = None
        for start in range(0, n_train, batch_size):
            idx = order[start : start + batch_size]
            h = h_train[idx]
            noise = complex_normal((len(idx), cfg.Kp, cfg.L, cfg.Nr), cfg.sigma_n2,
                                   generator)
            try:
                out = pipeline(h, noise=noise)
            except (SpectralEfficiencyError, DegenerateBeamformerError) as e:
                raise TrainingDiverged(
                    f"forward pass degenerated at epoch {state.epoch + 1}: {e}"
                ) from e
            rate = out.rates.mean()
            loss = total_loss(out.vq, rate, cfg.alpha)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {state.epoch + 1}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            pipeline.pilots.project_power()
            if assert_constraints:
                with torch.no_grad():
                    post = pipeline(h, noise=noise)
                check_hard_constraints(post.beamformer, post.combiner,
                                       pipeline.pilots, cfg)
            if out.indices is not None:
                used[out.indices.reshape(-1)] = True
                last_segments = split_received(out.received.detach(), cfg)
            epoch_loss += float(loss.detach())
            epoch_lv += float(out.vq.detach())
            epoch_rate += float(rate.detach())
            n_batches += 1

        if train_codebook and last_segments is not None and not bool(used.all()):
            pipeline.codebook.reseed_dead(~used, last_segments, generator)

        state.epoch += 1
        pipeline.eval()
        with torch.no_grad():
            val_se = _mean_se(pipeline, h_val, val_noise)
        record = {
            "epoch": state.epoch,
            "train_loss": epoch_loss / n_batches,
            "train_lv": epoch_lv / n_batches,
            "train_rate": epoch_rate / n_batches,
            "val_se": val_se,
        }
        state.history.append(record)
        if val_se > state.best_val_se:
            state.best_val_se = val_se
            state.best_model = copy.deepcopy(pipeline.state_dict())

    if not state.best_model:
        state.best_model = copy.deepcopy(pipeline.state_dict())
        pipeline.eval()
        with torch.no_grad():
            state.best_val_se = _mean_se(pipeline, h_val, val_noise)
    return state, state.history


def _mean_se(pipeline: JointPipeline, h: torch.Tensor, noise: torch.Tensor) -> float:
    out = pipeline(h, noise=noise)
    return float(out.rates.mean())


def evaluate(
    pipeline: JointPipeline,
    dataset: np.ndarray,
    sample_indices: np.ndarray,
    rho_list_mw,
    cfg: SystemConfig | None = None,
) -> list[dict]:
    """Mean SE (with standard error) of a learned pipeline per transmit power.

    Beamformers depend only on the pilot observations, so one forward pass
    serves every power point. Noise comes from the fixed per-sample seeds.
    """
    cfg = pipeline.cfg if cfg is None else cfg
    sample_indices = np.asarray(sample_indices)
    if sample_indices.size == 0:
        raise ValueError("empty evaluation split")
    h = torch.as_tensor(np.asarray(dataset)[sample_indices]).to(CDTYPE)
    noise = eval_noise_for_samples(cfg, sample_indices)
    pipeline.eval()
    with torch.no_grad():
        out = pipeline(h, noise=noise)
        rows = []
        for rho in rho_list_mw:
            rates = rates_per_subchannel(
                h, out.beamformer.f_rf, out.beamformer.f_bb,
                out.combiner.w_rf, out.combiner.w_bb, float(rho), cfg.sigma_n2,
            )
            per_sample = rates.mean(dim=-1).numpy()
            rows.append(_se_row(float(rho), per_sample))
    return rows


def _se_row(rho: float, per_sample: np.ndarray) -> dict:
    n = per_sample.size
    stderr = float(per_sample.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return {"rho": rho, "mean_se": float(per_sample.mean()), "stderr": stderr, "n": n}


def evaluate_baseline(
    method: str,
    dataset: np.ndarray,
    sample_indices: np.ndarray,
    rho_list_mw,
    cfg: SystemConfig,
    pipeline: JointPipeline | None = None,
    mo_iters: int = 200,
    mo_tol: float = 1e-6,
    n_paths: int = 8,
) -> list[dict]:
    """Mean SE per transmit power for a named classical baseline.

    Methods: "fully_digital" (PCSI upper bound), "mo_pcsi", "mo_omp".
    mo_omp sounds the channel with the supplied pipeline's pilot stage and
    the same fixed evaluation noise the learned methods see.
    """
    sample_indices = np.asarray(sample_indices)
    if sample_indices.size == 0:
        raise ValueError("empty evaluation split")
    h_all = np.asarray(dataset)[sample_indices].astype(np.complex128)
    rho_list_mw = list(rho_list_mw)

    per_sample = np.zeros((len(rho_list_mw), len(h_all)))
    if method == "fully_digital":
        for i, h in enumerate(h_all):
            for j, rho in enumerate(rho_list_mw):
                per_sample[j, i] = fully_digital_svd(h, float(rho), cfg.sigma_n2, cfg).mean
    elif method in ("mo_pcsi", "mo_omp"):
        if method == "mo_omp":
            if pipeline is None:
                raise ValueError("mo_omp needs a pipeline for its pilot stage")
            noise = eval_noise_for_samples(cfg, sample_indices)
            with torch.no_grad():
                y = transmit_pilots(
                    torch.as_tensor(h_all).to(CDTYPE), pipeline.pilots, cfg,
                    noise=noise,
                )
            dictionary = AngleDictionary.uniform(cfg)
        for i, h in enumerate(h_all):
            if method == "mo_omp":
                h_input = omp_channel_estimate(y[i], pipeline.pilots, dictionary,
                                               n_paths, cfg)
            else:
                h_input = h
            mo = mo_hybrid(h_input, cfg, iters=mo_iters, tol=mo_tol,
                           seed=child_seed(cfg.seed, SEED_EVAL_NOISE, int(sample_indices[i])))
            # the beamformers are fixed; only the rate depends on the power
            for j, rho in enumerate(rho_list_mw):
                r = rates_per_subchannel(
                    torch.as_tensor(h),
                    torch.as_tensor(mo.f_rf), torch.as_tensor(mo.f_bb),
                    torch.as_tensor(mo.w_rf), torch.as_tensor(mo.w_bb),
                    float(rho), cfg.sigma_n2,
                )
                per_sample[j, i] = float(r.mean())
    else:
        raise ValueError(f"unknown baseline {method!r}")
    return [
        _se_row(float(rho), per_sample[j]) for j, rho in enumerate(rho_list_mw)
    ]


def config_hash(cfg: SystemConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(state: TrainState, path) -> None:
    """Serialize a TrainState (parameters, optimizer, RNG, best snapshot)."""
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "config": state.cfg.to_dict(),
            "config_hash": config_hash(state.cfg),
            "arch": state.arch,
            "epoch": state.epoch,
            "model": state.pipeline.state_dict(),
            "optimizer": state.optimizer.state_dict(),
            "generator": state.generator.get_state(),
            "best_val_se": state.best_val_se,
            "best_model": state.best_model,
            "history": state.history,
        },
        path,
    )


def load_checkpoint(path, cfg: SystemConfig | None = None, lr: float = 1e-3) -> TrainState:
    """Restore a TrainState; refuses to load against a mismatched config."""
    blob = torch.load(path, weights_only=False)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointMismatch(f"unsupported checkpoint version {blob.get('version')}")
    stored_cfg = SystemConfig.from_dict(blob["config"])
    if cfg is not None and config_hash(cfg) != blob["config_hash"]:
        raise CheckpointMismatch(
            "checkpoint was trained under a different configuration"
        )
    state = _new_state(stored_cfg, blob["arch"], lr)
    state.pipeline.load_state_dict(blob["model"])
    state.optimizer.load_state_dict(blob["optimizer"])
    state.generator.set_state(blob["generator"])
    state.epoch = blob["epoch"]
    state.best_val_se = blob["best_val_se"]
    state.best_model = blob["best_model"]
    state.history = list(blob["history"])
    return state
