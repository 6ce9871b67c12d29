"""Scikit-learn style estimator wrapping the full train/predict pipeline.

``ActionLocalizer`` follows the usual conventions: the constructor stores
hyperparameters verbatim (so ``get_params``/``set_params``/``clone`` work),
``fit`` learns from a list of ``VideoSample`` values and sets trailing
underscore attributes, and ``predict`` emits temporal proposals.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from . import losses
from .config import RunConfig
from .evidence import mass_audit
from .fileio import read_checkpoint, write_checkpoint
from .localization import (DEFAULT_PROPOSAL_THRESHOLDS, MetricReport, Proposal,
                           evaluate, generate_proposals, nms)
from .network import ModelParams, forward
from .records import VideoSample
from .training import train, video_label_vector
from .validation import ValidationError, require

__all__ = ["ActionLocalizer"]


class ActionLocalizer(BaseEstimator):
    """Weakly supervised temporal action localizer.

    Trains from video-level labels only and predicts scored (start, end,
    class) segments per video.  All randomness flows from ``seed``; two fits
    with identical settings produce identical parameters and loss logs.

    Parameters mirror ``RunConfig``; see the README for the full list.
    """

    def __init__(self, num_classes: int = 3, feature_dim: int = 16, heads: int = 4,
                 snippet_cap: int = 320, learning_rate: float = 5e-5,
                 iterations: int = 5000, batch_size: int = 10,
                 lambda_comp: float = 0.8, lambda_evid: float = 1.0,
                 amplitude: float = 0.7, topk_ratio: float = 0.125,
                 proposal_thresholds: tuple = DEFAULT_PROPOSAL_THRESHOLDS,
                 nms_iou: float = 0.5, class_gate: float = 0.1,
                 use_cross_attention: bool = True, use_evidential_fusion: bool = True,
                 check_masses: bool = False, checkpoint_interval: int = 0,
                 seed: int | None = None):
        self.num_classes = num_classes
        self.feature_dim = feature_dim
        self.heads = heads
        self.snippet_cap = snippet_cap
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.batch_size = batch_size
        self.lambda_comp = lambda_comp
        self.lambda_evid = lambda_evid
        self.amplitude = amplitude
        self.topk_ratio = topk_ratio
        self.proposal_thresholds = proposal_thresholds
        self.nms_iou = nms_iou
        self.class_gate = class_gate
        self.use_cross_attention = use_cross_attention
        self.use_evidential_fusion = use_evidential_fusion
        self.check_masses = check_masses
        self.checkpoint_interval = checkpoint_interval
        self.seed = seed

    # ------------------------------------------------------------------
    # configuration plumbing

    def _run_config(self) -> RunConfig:
        return RunConfig(
            num_classes=self.num_classes,
            feature_dim=self.feature_dim,
            heads=self.heads,
            snippet_cap=self.snippet_cap,
            learning_rate=self.learning_rate,
            iterations=self.iterations,
            batch_size=self.batch_size,
            lambda_comp=self.lambda_comp,
            lambda_evid=self.lambda_evid,
            amplitude=self.amplitude,
            topk_ratio=self.topk_ratio,
            proposal_thresholds=tuple(self.proposal_thresholds),
            nms_iou=self.nms_iou,
            class_gate=self.class_gate,
            use_cross_attention=self.use_cross_attention,
            use_evidential_fusion=self.use_evidential_fusion,
            check_masses=self.check_masses,
            checkpoint_interval=self.checkpoint_interval,
            seed=self.seed,
        )

    @classmethod
    def from_config(cls, config: RunConfig) -> "ActionLocalizer":
        return cls(
            num_classes=config.num_classes,
            feature_dim=config.feature_dim,
            heads=config.heads,
            snippet_cap=config.snippet_cap,
            learning_rate=config.learning_rate,
            iterations=config.iterations,
            batch_size=config.batch_size,
            lambda_comp=config.lambda_comp,
            lambda_evid=config.lambda_evid,
            amplitude=config.amplitude,
            topk_ratio=config.topk_ratio,
            proposal_thresholds=config.proposal_thresholds,
            nms_iou=config.nms_iou,
            class_gate=config.class_gate,
            use_cross_attention=config.use_cross_attention,
            use_evidential_fusion=config.use_evidential_fusion,
            check_masses=config.check_masses,
            checkpoint_interval=config.checkpoint_interval,
            seed=config.seed,
        )

    # ------------------------------------------------------------------
    # fitting

    def fit(self, X: Sequence[VideoSample], y=None) -> "ActionLocalizer":
        """Train on a list of video samples (labels live on the samples)."""
        samples = self._check_samples(X, require_labels=True)
        config = self._run_config()
        if self.check_masses:
            with mass_audit() as audit:
                result = train(samples, config)
            self.mass_audit_ = audit
        else:
            result = train(samples, config)
        self.params_ = result.params
        self.loss_log_ = result.loss_log
        self.total_epochs_ = result.total_epochs
        return self

    def _check_samples(self, X, require_labels: bool) -> list[VideoSample]:
        require(len(X) >= 1, "need at least one video sample")
        for sample in X:
            if not isinstance(sample, VideoSample):
                raise ValidationError(
                    f"expected VideoSample inputs, got {type(sample).__name__}")
            if require_labels:
                video_label_vector(sample.labels, self.num_classes)
        return list(X)

    def _require_fitted(self) -> ModelParams:
        if not hasattr(self, "params_"):
            raise NotFittedError(
                "this ActionLocalizer is not fitted yet; call fit or load a checkpoint")
        return self.params_

    # ------------------------------------------------------------------
    # inference

    def _forward_arrays(self, sample: VideoSample):
        params = self._require_fitted()
        with ad.no_grad():
            out = forward(params, sample.flow, sample.rgb,
                          use_cross_attention=self.use_cross_attention,
                          use_evidential_fusion=self.use_evidential_fusion)
            count = losses.topk_snippet_count(sample.num_snippets, self.topk_ratio)
            video_scores = losses.aggregate_video_scores(out.cas, out.attention, count)
        return out.attention.data, out.cas.data, video_scores.data

    def predict_video_scores(self, X: Sequence[VideoSample]) -> np.ndarray:
        """Video-level class probabilities, one row per sample."""
        samples = self._check_samples(X, require_labels=False)
        return np.stack([self._forward_arrays(s)[2] for s in samples])

    def predict(self, X: Sequence[VideoSample]) -> list[Proposal]:
        """Scored temporal proposals after non-maximum suppression."""
        samples = self._check_samples(X, require_labels=False)
        pool: list[Proposal] = []
        for sample in samples:
            attention, cas, video_scores = self._forward_arrays(sample)
            pool.extend(generate_proposals(
                attention, cas, video_scores,
                video_id=sample.video_id,
                thresholds=tuple(self.proposal_thresholds),
                class_gate=self.class_gate))
        return nms(pool, self.nms_iou)

    def label_accuracy(self, X: Sequence[VideoSample]) -> float:
        """Fraction of videos whose top predicted action class is labeled."""
        samples = self._check_samples(X, require_labels=True)
        scores = self.predict_video_scores(samples)
        hits = sum(1 for sample, row in zip(samples, scores)
                   if int(row[:self.num_classes].argmax()) in sample.labels)
        return hits / len(samples)

    def evaluate(self, X: Sequence[VideoSample]) -> MetricReport:
        """Localization metric report against the samples' ground truth."""
        samples = self._check_samples(X, require_labels=False)
        ground_truth = {s.video_id: s.ground_truth() for s in samples}
        require(any(ground_truth.values()),
                "evaluation needs ground-truth segments on the samples")
        return evaluate(self.predict(samples), ground_truth)

    def score(self, X: Sequence[VideoSample], y=None) -> float:
        """Mean of mAP over the 0.1 to 0.7 overlap grid."""
        return self.evaluate(X).avg_01_07

    # ------------------------------------------------------------------
    # persistence

    def save_checkpoint(self, path) -> None:
        params = self._require_fitted()
        write_checkpoint(path, self.num_classes, self.feature_dim, self.heads,
                         {name: t.data for name, t in params.named().items()})

    def load_checkpoint(self, path) -> "ActionLocalizer":
        """Load parameters, overriding the model-dimension hyperparameters."""
        num_classes, feature_dim, heads, tensors = read_checkpoint(path)
        self.num_classes = num_classes
        self.feature_dim = feature_dim
        self.heads = heads
        self.params_ = ModelParams.from_named(
            num_classes, feature_dim, heads,
            {name: ad.Tensor(arr) for name, arr in tensors.items()})
        return self
