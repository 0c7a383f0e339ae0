"""scikit-learn style front end for the learned transceiver.

`fit` trains the joint pilot/feedback/beamforming pipeline on a stack of
channel realizations, `predict` returns feasible beamformers and combiners
for new channels, and `score` reports mean spectral efficiency, so the model
drops into sklearn tooling (cloning, grid search over the config, pipelines
of channel preprocessors).
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator

from .config import SystemConfig, validate
from .trainer import eval_noise_for_samples, evaluate, split_dataset, train
from .validation import check_channel_array

__all__ = ["HybridBeamformingEstimator"]


class HybridBeamformingEstimator(BaseEstimator):
    """End-to-end learned hybrid beamforming as an sklearn estimator.

    Parameters
    ----------
    config : SystemConfig or None
        Link dimensions, powers, and quantizer geometry. None uses the
        package defaults.
    arch : {"gnn", "mlp"}
        Beamforming network family.
    epochs, batch_size, lr : training hyperparameters.
    assert_constraints : verify all hard constraints after every step.

    Attributes
    ----------
    state_ : TrainState from the underlying trainer.
    pipeline_ : trained pipeline with the best-validation parameters.
    history_ : per-epoch training records.
    split_ : train/validation/test indices used during fit.
    """

    def __init__(
        self,
        config: SystemConfig | None = None,
        arch: str = "gnn",
        epochs: int = 100,
        batch_size: int = 128,
        lr: float = 1e-3,
        assert_constraints: bool = False,
    ):
        self.config = config
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.assert_constraints = assert_constraints

    def _cfg(self) -> SystemConfig:
        return validate(self.config if self.config is not None else SystemConfig())

    def fit(self, X, y=None):
        """Train on channel realizations X of shape (n_samples, K, Nr, Nt)."""
        cfg = self._cfg()
        X = check_channel_array(X, cfg, min_samples=5)
        state, history = train(
            cfg,
            X,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            arch=self.arch,
            assert_constraints=self.assert_constraints,
        )
        self.state_ = state
        self.pipeline_ = state.best_pipeline()
        self.history_ = history
        self.split_ = split_dataset(X.shape[0], cfg.seed)
        return self

    def predict(self, X) -> dict:
        """Feasible beamformers/combiners for channels X.

        Returns arrays keyed "f_rf" (n, Nt, NRFt), "f_bb" (n, K, NRFt, Ns),
        "w_rf" (n, Nr, NRFr), "w_bb" (n, K, NRFr, Ns).
        """
        self._check_fitted()
        cfg = self._cfg()
        X = check_channel_array(X, cfg)
        h = torch.as_tensor(X).to(torch.complex128)
        noise = eval_noise_for_samples(cfg, np.arange(X.shape[0]))
        self.pipeline_.eval()
        with torch.no_grad():
            out = self.pipeline_(h, noise=noise)
        return {
            "f_rf": out.beamformer.f_rf.numpy(),
            "f_bb": out.beamformer.f_bb.numpy(),
            "w_rf": out.combiner.w_rf.numpy(),
            "w_bb": out.combiner.w_bb.numpy(),
        }

    def score(self, X, y=None) -> float:
        """Mean spectral efficiency (bits/s/Hz) over the given channels."""
        self._check_fitted()
        cfg = self._cfg()
        X = check_channel_array(X, cfg)
        rows = evaluate(self.pipeline_, X, np.arange(X.shape[0]), [cfg.rho], cfg)
        return rows[0]["mean_se"]

    def _check_fitted(self):
        if not hasattr(self, "pipeline_"):
            raise RuntimeError("estimator is not fitted; call fit first")
