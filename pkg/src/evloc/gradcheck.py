"""Analytic-versus-numeric gradient checks for every training objective.

Each check rebuilds the objective as a pure function of raw arrays, asks the
central-difference oracle for the numeric gradient, and compares it with the
reverse-mode result coordinate by coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses
from .autodiff import Tensor, finite_diff, grad, relative_gradient_error
from .config import RunConfig
from .network import ModelParams
from .training import _video_objective
from .records import VideoSample

__all__ = ["GradCheckResult", "loss_gradient_errors", "end_to_end_gradient_error",
           "run_gradient_suite"]

FD_STEP = 1e-5


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    seed: int
    max_relative_error: float


def _random_inputs(seed: int, width: int, num_classes: int):
    rng = np.random.default_rng(seed)
    cas = rng.normal(0.0, 1.0, (width, num_classes + 1))
    attention = rng.uniform(0.05, 0.95, width)
    thetas = rng.uniform(0.05, 0.95, width)
    labels = np.zeros(num_classes)
    labels[rng.integers(0, num_classes)] = 1.0
    return cas, attention, thetas, labels


def loss_gradient_errors(seed: int, width: int = 8,
                         num_classes: int = 3) -> list[GradCheckResult]:
    """Per-loss gradient checks on random class scores and attention."""
    cas, attention, thetas, labels = _random_inputs(seed, width, num_classes)
    count = losses.topk_snippet_count(width, 0.25)
    label_vec = np.concatenate([labels, [0.0]])
    results = []

    def cla_value(arrays):
        with ad.no_grad():
            scores = losses.aggregate_video_scores(Tensor(arrays[0]), attention, count)
            return losses.classification_loss(scores, label_vec).item()

    z = Tensor(cas, requires_grad=True)
    loss = losses.classification_loss(
        losses.aggregate_video_scores(z, attention, count), label_vec)
    analytic = grad(loss, [z])
    numeric = finite_diff(cla_value, [cas], FD_STEP)
    results.append(GradCheckResult("classification", seed,
                                   relative_gradient_error(analytic, numeric)))

    def comp_value(arrays):
        with ad.no_grad():
            return losses.complementarity_loss(
                Tensor(arrays[1]), Tensor(arrays[0]), thetas, 3, 4, 0.7).item()

    z = Tensor(cas, requires_grad=True)
    a = Tensor(attention, requires_grad=True)
    loss = losses.complementarity_loss(a, z, thetas, 3, 4, 0.7)
    analytic = grad(loss, [z, a])
    numeric = finite_diff(comp_value, [cas, attention], FD_STEP)
    results.append(GradCheckResult("complementarity", seed,
                                   relative_gradient_error(analytic, numeric)))

    def evid_value(arrays):
        with ad.no_grad():
            evidence = ad.exp_clipped(ad.slice_cols(Tensor(arrays[0]), 0, num_classes))
            return losses.evidential_loss(evidence, labels).item()

    z = Tensor(cas, requires_grad=True)
    evidence = ad.exp_clipped(ad.slice_cols(z, 0, num_classes))
    loss = losses.evidential_loss(evidence, labels)
    analytic = grad(loss, [z])
    numeric = finite_diff(evid_value, [cas], FD_STEP)
    results.append(GradCheckResult("evidential", seed,
                                   relative_gradient_error(analytic, numeric)))
    return results


def end_to_end_gradient_error(seed: int, width: int = 8, num_classes: int = 3,
                              feature_dim: int = 6) -> GradCheckResult:
    """Gradient check of the full per-video objective over every parameter."""
    rng = np.random.default_rng(seed)
    params = ModelParams.initialize(num_classes, feature_dim, 4, rng)
    sample = VideoSample(
        video_id=f"gradcheck_{seed}",
        rgb=rng.normal(0.0, 1.0, (feature_dim, width)),
        flow=rng.normal(0.0, 1.0, (feature_dim, width)),
        labels=(int(rng.integers(0, num_classes)),),
    )
    config = RunConfig(num_classes=num_classes, feature_dim=feature_dim,
                       iterations=1, seed=seed)
    named = params.named()
    names = list(named)
    tensors = [named[name] for name in names]

    objective, _ = _video_objective(params, sample, config, epoch=1, total_epochs=1)
    analytic = grad(objective, tensors)

    def value(arrays) -> float:
        rebuilt = ModelParams.from_named(
            num_classes, feature_dim, 4,
            {name: Tensor(arr) for name, arr in zip(names, arrays)})
        with ad.no_grad():
            out, _ = _video_objective(rebuilt, sample, config,
                                      epoch=1, total_epochs=1)
            return out.item()

    numeric = finite_diff(value, [t.data for t in tensors], FD_STEP)
    return GradCheckResult("end_to_end", seed,
                           relative_gradient_error(analytic, numeric))


def run_gradient_suite(seeds=range(10), width: int = 8, num_classes: int = 3,
                       feature_dim: int = 6,
                       include_end_to_end: bool = True) -> list[GradCheckResult]:
    results: list[GradCheckResult] = []
    for seed in seeds:
        results.extend(loss_gradient_errors(seed, width, num_classes))
        if include_end_to_end:
            results.append(end_to_end_gradient_error(seed, width, num_classes,
                                                     feature_dim))
    return results
