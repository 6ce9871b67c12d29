"""Training objectives: video classification, attention-background
complementarity with an uncertainty-driven schedule, and the
uncertainty-weighted evidential term.

All losses return scalar tensors wired into the autodiff graph.  The
complementarity schedule depends on snippet uncertainties only through their
descending rank, so those weights enter the graph as constants; everything
else (class scores, attention, evidence) is differentiated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .validation import as_float_vector, as_probability_vector, require

__all__ = [
    "LossConfig",
    "topk_snippet_count",
    "aggregate_video_scores",
    "classification_loss",
    "schedule_weight",
    "uncertainty_ranks",
    "complementarity_loss",
    "evidential_loss",
    "total_loss",
]

LOG_FLOOR = 1e-12
EVIDENCE_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    """Weights and schedule settings for the combined objective."""

    lambda_comp: float = 0.8
    lambda_evid: float = 1.0
    amplitude: float = 0.7
    total_epochs: int = 1
    topk_ratio: float = 0.125

    def __post_init__(self) -> None:
        require(self.lambda_comp >= 0 and self.lambda_evid >= 0,
                "loss weights must be non-negative")
        require(0.0 <= self.amplitude <= 1.0,
                f"amplitude must lie in [0, 1], got {self.amplitude}")
        require(self.total_epochs >= 1,
                f"total_epochs must be at least 1, got {self.total_epochs}")
        require(0.0 < self.topk_ratio <= 1.0,
                f"topk_ratio must lie in (0, 1], got {self.topk_ratio}")


def topk_snippet_count(num_snippets: int, ratio: float = 0.125) -> int:
    """Number of snippets aggregated into the video prediction."""
    require(num_snippets >= 1, f"need at least one snippet, got {num_snippets}")
    return max(1, int(num_snippets * ratio))


def aggregate_video_scores(cas: Tensor, attention, count: int) -> Tensor:
    """Video-level class probabilities from the most attended snippets.

    The ``count`` snippets with the largest attention (ties to the lower
    index) are selected, their score rows averaged, and the average softmaxed
    over all classes including background.  Selection depends only on the
    attention ordering, so any strictly monotone rescaling leaves the result
    unchanged.
    """
    require(cas.ndim == 2, f"class scores must be a matrix, got shape {cas.shape}")
    width = cas.shape[0]
    require(1 <= count <= width, f"count={count} out of range for {width} snippets")
    att = attention.data if isinstance(attention, Tensor) else np.asarray(attention)
    require(att.shape == (width,),
            f"attention shape {att.shape} does not match {width} snippets")
    chosen = ad.topk_indices(att, count)
    pooled = ad.sum_axis(ad.take_rows(cas, chosen), 0) * (1.0 / count)
    return ad.softmax(pooled)


def classification_loss(video_scores: Tensor, label_vector) -> Tensor:
    """Cross entropy between predicted and ground-truth video label vectors.

    Predictions are floored at 1e-12 inside the log so supported classes with
    vanishing score stay finite.
    """
    labels = as_probability_vector(label_vector, "label_vector")
    require(video_scores.shape == labels.shape,
            f"score shape {video_scores.shape} does not match labels {labels.shape}")
    weighted = ad.mul(Tensor(labels), ad.log_floored(video_scores, LOG_FLOOR))
    return ad.sum_all(weighted) * -1.0


def schedule_weight(epoch: int, total_epochs: int, rank: int, num_snippets: int,
                    amplitude: float) -> float:
    """Per-snippet weight steering complementarity over the training run.

    ``amplitude * tanh(progress * position) + 1`` where progress runs from -1
    at the first epoch to +1 at the last and position runs from near -1 for
    the most uncertain snippet (rank 1) to +1 for the least uncertain (rank
    num_snippets).  Always within [1 - amplitude*tanh(1), 1 + amplitude*tanh(1)].
    """
    require(1 <= epoch <= total_epochs,
            f"epoch {epoch} out of range 1..{total_epochs}")
    require(1 <= rank <= num_snippets,
            f"rank {rank} out of range 1..{num_snippets}")
    progress = 2.0 * epoch / total_epochs - 1.0
    position = 2.0 * rank / num_snippets - 1.0
    return amplitude * math.tanh(progress * position) + 1.0


def uncertainty_ranks(thetas) -> np.ndarray:
    """1-based ranks of snippets by descending uncertainty, ties to lower index."""
    arr = as_float_vector(thetas, "thetas")
    order = np.argsort(-arr, kind="stable")
    ranks = np.empty(arr.size, dtype=np.int64)
    ranks[order] = np.arange(1, arr.size + 1)
    return ranks


def complementarity_loss(attention: Tensor, cas: Tensor, fused_thetas,
                         epoch: int, total_epochs: int, amplitude: float) -> Tensor:
    """Scheduled deviation of attention plus background probability from one.

    Each snippet contributes ``weight * |1 - attention - background|`` where
    the background probability comes from the softmaxed score row and the
    weight follows ``schedule_weight`` at the snippet's uncertainty rank.
    """
    width = attention.shape[0]
    require(cas.ndim == 2 and cas.shape[0] == width,
            f"class scores shape {cas.shape} does not match {width} snippets")
    thetas = as_float_vector(fused_thetas, "fused_thetas")
    require(thetas.size == width,
            f"uncertainty length {thetas.size} does not match {width} snippets")
    ranks = uncertainty_ranks(thetas)
    weights = np.array([
        schedule_weight(epoch, total_epochs, int(rank), width, amplitude)
        for rank in ranks
    ])
    background = ad.reshape(
        ad.slice_cols(ad.softmax(cas), cas.shape[1] - 1, cas.shape[1]), (width,))
    residual = ad.absolute(ad.add(attention, background) * -1.0 + 1.0)
    return ad.sum_all(ad.mul(Tensor(weights), residual))


def evidential_loss(evidence: Tensor, class_probs) -> Tensor:
    """Uncertainty-weighted Dirichlet regression toward the label distribution.

    Per snippet, with ``alpha = evidence + 1`` and ``strength = sum(alpha)``:
    label-over-evidence ratios (evidence floored at 1e-12) are normalized into
    weights, each weight multiplies ``log(strength) - log(alpha_j)``, and the
    snippet total is scaled by one minus its uncertainty so vacuous snippets
    contribute nothing.  Non-negative because ``alpha_j <= strength``.
    """
    require(evidence.ndim == 2,
            f"evidence must be a matrix, got shape {evidence.shape}")
    width, num_classes = evidence.shape
    probs = as_probability_vector(class_probs, "class_probs")
    require(probs.size == num_classes,
            f"label length {probs.size} does not match {num_classes} classes")
    alpha = ad.add(evidence, 1.0)
    strength = ad.sum_axis(alpha, 1)
    uncertainty = ad.reciprocal(strength) * float(num_classes)
    certainty = uncertainty * -1.0 + 1.0
    label_matrix = Tensor(np.tile(probs, (width, 1)))
    ratio = ad.mul(label_matrix,
                   ad.reciprocal(ad.maximum_scalar(evidence, EVIDENCE_FLOOR)))
    ratio_sums = ad.sum_axis(ratio, 1)
    weights = ad.mul(ratio, ad.tile_cols(ad.reciprocal(ratio_sums), num_classes))
    gaps = ad.sub(ad.tile_cols(ad.log(strength), num_classes), ad.log(alpha))
    per_snippet = ad.sum_axis(ad.mul(weights, gaps), 1)
    return ad.sum_all(ad.mul(certainty, per_snippet))


def total_loss(classification, complementarity, evidential, config: LossConfig):
    """Weighted sum of the three parts; works on tensors and plain floats."""
    return (classification
            + complementarity * config.lambda_comp
            + evidential * config.lambda_evid)
