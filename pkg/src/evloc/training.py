"""Mini-batch training loop with adaptive-moment gradient descent.

Each iteration samples a batch of videos, accumulates the mean gradient of
the combined objective across them (sequentially, in sorted video order, so
runs are deterministic per seed), and applies one optimizer step.  The epoch
counter that drives the complementarity schedule is derived from how many
passes over the training set the configured iteration budget amounts to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses
from .autodiff import Tensor
from .config import RunConfig
from .network import ModelParams, forward
from .records import VideoSample
from .validation import ValidationError, require

__all__ = [
    "AdamOptimizer",
    "TrainingError",
    "TrainResult",
    "train",
    "derive_total_epochs",
    "epoch_at",
    "cap_snippets",
    "video_label_vector",
]


class TrainingError(RuntimeError):
    """Training aborted; carries the iteration and video that caused it."""

    def __init__(self, message: str, iteration: int, video_id: str):
        super().__init__(message)
        self.iteration = iteration
        self.video_id = video_id


@dataclass
class AdamOptimizer:
    """Classic adaptive-moment estimation over named parameter arrays."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, values: dict[str, np.ndarray],
             grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        updated: dict[str, np.ndarray] = {}
        for name, value in values.items():
            g = grads[name]
            m = self.first_moment.get(name)
            v = self.second_moment.get(name)
            m = self.beta1 * m + (1.0 - self.beta1) * g if m is not None else (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g if v is not None else (1.0 - self.beta2) * g * g
            self.first_moment[name] = m
            self.second_moment[name] = v
            m_hat = m / correction1
            v_hat = v / correction2
            updated[name] = value - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
        return updated


def derive_total_epochs(iterations: int, batch_size: int, num_videos: int) -> int:
    """Optimizer passes over the training set implied by the iteration budget."""
    require(num_videos >= 1, "need at least one training video")
    return max(1, math.ceil(iterations * batch_size / num_videos))


def epoch_at(iteration: int, batch_size: int, num_videos: int, total_epochs: int) -> int:
    """1-based epoch of the given 1-based iteration, clamped to the total."""
    return min(total_epochs, max(1, math.ceil(iteration * batch_size / num_videos)))


def cap_snippets(sample: VideoSample, cap: int) -> VideoSample:
    """Uniformly subsample snippets down to the cap (training-time only)."""
    width = sample.num_snippets
    if width <= cap:
        return sample
    idx = np.floor(np.arange(cap) * (width / cap)).astype(int)
    return VideoSample(
        video_id=sample.video_id,
        rgb=sample.rgb[:, idx],
        flow=sample.flow[:, idx],
        labels=sample.labels,
        segments=None,
        fps=sample.fps,
    )


def video_label_vector(labels, num_classes: int) -> np.ndarray:
    """Normalized multi-hot label vector over classes plus a zero background."""
    require(len(labels) >= 1, "training videos need a non-empty label set")
    vec = np.zeros(num_classes + 1)
    for class_id in labels:
        require(0 <= class_id < num_classes,
                f"label {class_id} out of range for {num_classes} classes")
        vec[class_id] = 1.0
    return vec / vec.sum()


@dataclass
class TrainResult:
    params: ModelParams
    loss_log: list[dict[str, float]]
    total_epochs: int


def _video_objective(params: ModelParams, sample: VideoSample, config: RunConfig,
                     epoch: int, total_epochs: int) -> tuple[Tensor, dict[str, float]]:
    out = forward(params, sample.flow, sample.rgb,
                  use_cross_attention=config.use_cross_attention,
                  use_evidential_fusion=config.use_evidential_fusion)
    width = sample.num_snippets
    label_vec = video_label_vector(sample.labels, config.num_classes)
    count = losses.topk_snippet_count(width, config.topk_ratio)
    video_scores = losses.aggregate_video_scores(out.cas, out.attention, count)
    cla = losses.classification_loss(video_scores, label_vec)

    amplitude = config.amplitude if config.use_evidential_fusion else 0.0
    if config.lambda_comp > 0:
        comp = losses.complementarity_loss(out.attention, out.cas, out.fused_thetas,
                                           epoch, total_epochs, amplitude)
    else:
        comp = None
    if config.lambda_evid > 0 and config.use_evidential_fusion:
        evid = losses.evidential_loss(out.evidence_raw, label_vec[:config.num_classes]
                                      / label_vec[:config.num_classes].sum())
    else:
        evid = None

    total = cla
    if comp is not None:
        total = total + comp * config.lambda_comp
    if evid is not None:
        total = total + evid * config.lambda_evid
    parts = {
        "classification": cla.item(),
        "complementarity": comp.item() if comp is not None else 0.0,
        "evidential": evid.item() if evid is not None else 0.0,
        "total": total.item(),
    }
    return total, parts


def train(samples: list[VideoSample], config: RunConfig,
          checkpoint_path=None, checkpoint_writer=None) -> TrainResult:
    """Run the full optimization loop and return parameters plus the loss log.

    ``checkpoint_writer(path, params)`` is invoked every
    ``checkpoint_interval`` iterations and at the end when a path is given.
    Aborts with ``TrainingError`` if any video produces a non-finite value.
    """
    require(len(samples) >= 1, "training needs at least one video")
    seed = config.require_seed()
    for sample in samples:
        require(sample.rgb.shape[0] == config.feature_dim,
                f"video {sample.video_id!r} has {sample.rgb.shape[0]} channels, "
                f"config expects {config.feature_dim}")
    capped = [cap_snippets(s, config.snippet_cap) for s in samples]
    rng = np.random.default_rng(seed)
    params = ModelParams.initialize(config.num_classes, config.feature_dim,
                                    config.heads, rng)
    optimizer = AdamOptimizer(learning_rate=config.learning_rate)
    num_videos = len(capped)
    total_epochs = derive_total_epochs(config.iterations, config.batch_size, num_videos)
    loss_log: list[dict[str, float]] = []

    def _write_checkpoint() -> None:
        if checkpoint_path is not None and checkpoint_writer is not None:
            checkpoint_writer(checkpoint_path, params)

    for iteration in range(1, config.iterations + 1):
        epoch = epoch_at(iteration, config.batch_size, num_videos, total_epochs)
        batch_size = min(config.batch_size, num_videos)
        chosen = np.sort(rng.choice(num_videos, size=batch_size, replace=False))
        named = params.named()
        ad.zero_grads(named.values())
        sums = {"classification": 0.0, "complementarity": 0.0,
                "evidential": 0.0, "total": 0.0}
        for video_index in chosen:
            sample = capped[video_index]
            try:
                objective, parts = _video_objective(params, sample, config,
                                                    epoch, total_epochs)
            except ValidationError as exc:
                raise TrainingError(
                    f"non-finite value at iteration {iteration} on video "
                    f"{sample.video_id!r}: {exc}", iteration, sample.video_id) from exc
            if not np.isfinite(parts["total"]):
                raise TrainingError(
                    f"non-finite loss at iteration {iteration} on video "
                    f"{sample.video_id!r}", iteration, sample.video_id)
            scaled = objective * (1.0 / batch_size)
            scaled.backward()
            for key in sums:
                sums[key] += parts[key] / batch_size
        grads = {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
                 for name, t in named.items()}
        values = {name: t.data for name, t in named.items()}
        updated = optimizer.step(values, grads)
        params = ModelParams.from_named(
            config.num_classes, config.feature_dim, config.heads,
            {name: Tensor(arr, requires_grad=True) for name, arr in updated.items()})
        loss_log.append({"iteration": float(iteration), **sums})
        if (config.checkpoint_interval > 0
                and iteration % config.checkpoint_interval == 0):
            _write_checkpoint()
    _write_checkpoint()
    return TrainResult(params=params, loss_log=loss_log, total_epochs=total_epochs)
