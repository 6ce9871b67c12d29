"""Inference-side localization: proposal generation, suppression, and
mAP evaluation over a grid of temporal IoU thresholds.

Segments are half-open snippet-index intervals.  Proposal generation scans a
ladder of thresholds over the product of attention and per-snippet class
probability, scores each contiguous run by its outer-inner contrast plus the
video-level class score, and leaves overlap resolution to per-video,
per-class greedy non-maximum suppression.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .validation import as_float_matrix, as_float_vector, require

__all__ = [
    "Segment",
    "Proposal",
    "tiou",
    "generate_proposals",
    "nms",
    "average_precision",
    "MetricReport",
    "evaluate",
    "DEFAULT_PROPOSAL_THRESHOLDS",
    "EVAL_TIOU_GRID",
]

DEFAULT_PROPOSAL_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(1, 10))
EVAL_TIOU_GRID = tuple(round(0.1 * i, 1) for i in range(1, 8))

# Flank fraction for the outer-inner contrast score.
_FLANK_FRACTION = 0.25


@dataclass(frozen=True)
class Segment:
    """Half-open snippet interval [start, end)."""

    start: int
    end: int

    def __post_init__(self) -> None:
        require(0 <= self.start < self.end,
                f"segment [{self.start}, {self.end}) must satisfy 0 <= start < end")

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class Proposal:
    """A scored class-specific segment prediction for one video."""

    video_id: str
    segment: Segment
    class_id: int
    score: float

    def __post_init__(self) -> None:
        require(np.isfinite(self.score), "proposal score must be finite")
        require(self.class_id >= 0, f"class_id must be non-negative, got {self.class_id}")


def tiou(a: Segment, b: Segment) -> float:
    """Temporal intersection over union of two segments, in [0, 1]."""
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    union = (a.end - a.start) + (b.end - b.start) - inter
    return inter / union


def _runs_at_least(values: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Contiguous index runs where values >= threshold, as [start, end) pairs."""
    mask = values >= threshold
    runs: list[tuple[int, int]] = []
    start = None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, mask.size))
    return runs


def _contrast_score(values: np.ndarray, start: int, end: int) -> float:
    """Mean inside the run minus the mean over flanking regions.

    Flanks extend one quarter of the run length (at least one snippet) on
    each side, clamped to the sequence; missing flanks contribute nothing.
    """
    inner = float(values[start:end].mean())
    flank = max(1, round(_FLANK_FRACTION * (end - start)))
    left = values[max(0, start - flank):start]
    right = values[end:min(values.size, end + flank)]
    outer = np.concatenate([left, right])
    outer_mean = float(outer.mean()) if outer.size else 0.0
    return inner - outer_mean


def generate_proposals(attention, cas, video_scores, *, video_id: str,
                       thresholds: Sequence[float] = DEFAULT_PROPOSAL_THRESHOLDS,
                       class_gate: float = 0.1) -> list[Proposal]:
    """Candidate segments for every confidently predicted class.

    For each action class whose video-level score clears ``class_gate`` and
    each threshold, contiguous runs of ``attention * class_probability`` at or
    above the threshold become segments; the per-snippet class probability is
    the softmax of the action columns.  Scores combine the outer-inner
    contrast of the run with the video-level class score, and duplicate
    (class, segment) pairs from different thresholds are emitted once.
    """
    att = as_float_vector(attention, "attention")
    require(att.size >= 1, "attention must cover at least one snippet")
    scores = as_float_matrix(cas, "cas")
    require(scores.shape[0] == att.size,
            f"cas shape {scores.shape} does not match {att.size} snippets")
    num_classes = scores.shape[1] - 1
    require(num_classes >= 1, "cas needs at least one action column plus background")
    video = as_float_vector(video_scores, "video_scores")
    require(video.size == num_classes + 1,
            f"video scores length {video.size} does not match {num_classes + 1} classes")
    for threshold in thresholds:
        require(0.0 < threshold < 1.0, f"thresholds must lie in (0, 1), got {threshold}")

    action = scores[:, :num_classes]
    shifted = action - action.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / exps.sum(axis=1, keepdims=True)

    proposals: list[Proposal] = []
    seen: set[tuple[int, int, int]] = set()
    for class_id in range(num_classes):
        if video[class_id] <= class_gate:
            continue
        combined = att * probs[:, class_id]
        for threshold in thresholds:
            for start, end in _runs_at_least(combined, threshold):
                key = (class_id, start, end)
                if key in seen:
                    continue
                seen.add(key)
                score = _contrast_score(combined, start, end) + float(video[class_id])
                proposals.append(Proposal(video_id=video_id,
                                          segment=Segment(start, end),
                                          class_id=class_id,
                                          score=score))
    return proposals


def nms(proposals: Sequence[Proposal], iou_threshold: float = 0.5) -> list[Proposal]:
    """Greedy per-video, per-class suppression of overlapping proposals.

    Within each group the highest score survives and everything overlapping
    it at or above the threshold is dropped; the survivors come back sorted
    by descending score (stable for ties).
    """
    groups: dict[tuple[str, int], list[Proposal]] = {}
    for p in proposals:
        groups.setdefault((p.video_id, p.class_id), []).append(p)
    kept: list[Proposal] = []
    for _, group in sorted(groups.items()):
        remaining = sorted(group, key=lambda p: -p.score)
        while remaining:
            best = remaining.pop(0)
            kept.append(best)
            remaining = [p for p in remaining
                         if tiou(best.segment, p.segment) < iou_threshold]
    kept.sort(key=lambda p: -p.score)
    return kept


def _match_flags(ranked: Sequence[Proposal],
                 truths: Sequence[tuple[str, Segment]],
                 iou_threshold: float) -> list[bool]:
    """True-positive flags for score-ranked proposals against one class's truth.

    Each proposal greedily claims the unmatched same-video instance with the
    highest overlap (ties to the earlier instance); each instance matches at
    most once.
    """
    matched = [False] * len(truths)
    flags: list[bool] = []
    for proposal in ranked:
        best_iou = 0.0
        best_idx = -1
        for idx, (video_id, segment) in enumerate(truths):
            if matched[idx] or video_id != proposal.video_id:
                continue
            overlap = tiou(proposal.segment, segment)
            if overlap > best_iou:
                best_iou = overlap
                best_idx = idx
        if best_idx >= 0 and best_iou >= iou_threshold:
            matched[best_idx] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def average_precision(proposals: Sequence[Proposal],
                      truths: Sequence[tuple[str, Segment]],
                      iou_threshold: float) -> float | None:
    """All-point average precision for one class at one overlap threshold.

    Returns None when the class has no ground-truth instances so callers can
    skip it in the mean.
    """
    if not truths:
        return None
    ranked = sorted(proposals, key=lambda p: -p.score)
    flags = _match_flags(ranked, truths, iou_threshold)
    true_positives = 0
    precision_sum = 0.0
    for rank, flag in enumerate(flags, start=1):
        if flag:
            true_positives += 1
            precision_sum += true_positives / rank
    return precision_sum / len(truths)


@dataclass(frozen=True)
class MetricReport:
    """mAP at each threshold of the evaluation grid plus the three averages."""

    map_by_threshold: dict[float, float]
    avg_01_05: float
    avg_03_07: float
    avg_01_07: float

    def format_table(self) -> str:
        headers = [f"{t:.1f}" for t in sorted(self.map_by_threshold)]
        values = [f"{100.0 * self.map_by_threshold[t]:5.1f}"
                  for t in sorted(self.map_by_threshold)]
        headers += ["AVG 0.1-0.5", "AVG 0.3-0.7", "AVG 0.1-0.7"]
        values += [f"{100.0 * self.avg_01_05:5.1f}",
                   f"{100.0 * self.avg_03_07:5.1f}",
                   f"{100.0 * self.avg_01_07:5.1f}"]
        width = [max(len(h), len(v)) for h, v in zip(headers, values)]
        head = " | ".join(h.rjust(w) for h, w in zip(headers, width))
        body = " | ".join(v.rjust(w) for v, w in zip(values, width))
        rule = "-+-".join("-" * w for w in width)
        return f"mAP@tIoU (%)\n{head}\n{rule}\n{body}"

    def to_dict(self) -> dict:
        return {
            "map_by_threshold": {f"{t:.1f}": v for t, v in self.map_by_threshold.items()},
            "avg_01_05": self.avg_01_05,
            "avg_03_07": self.avg_03_07,
            "avg_01_07": self.avg_01_07,
        }


def evaluate(proposals: Sequence[Proposal],
             ground_truth: Mapping[str, Iterable[tuple[Segment, int]]],
             thresholds: Sequence[float] = EVAL_TIOU_GRID) -> MetricReport:
    """Mean average precision over classes at each threshold.

    ``ground_truth`` maps video ids to (segment, class) instances.  Classes
    absent from the ground truth are skipped; with no ground truth at all the
    report is zero everywhere.
    """
    truths_by_class: dict[int, list[tuple[str, Segment]]] = {}
    for video_id, instances in ground_truth.items():
        for segment, class_id in instances:
            truths_by_class.setdefault(class_id, []).append((video_id, segment))
    proposals_by_class: dict[int, list[Proposal]] = {}
    for p in proposals:
        proposals_by_class.setdefault(p.class_id, []).append(p)

    map_by_threshold: dict[float, float] = {}
    for threshold in thresholds:
        scores = []
        for class_id in sorted(truths_by_class):
            ap = average_precision(proposals_by_class.get(class_id, []),
                                   truths_by_class[class_id], threshold)
            if ap is not None:
                scores.append(ap)
        map_by_threshold[round(float(threshold), 1)] = (
            float(np.mean(scores)) if scores else 0.0)

    def _avg(lo: float, hi: float) -> float:
        vals = [v for t, v in map_by_threshold.items() if lo - 1e-9 <= t <= hi + 1e-9]
        return float(np.mean(vals)) if vals else 0.0

    return MetricReport(
        map_by_threshold=map_by_threshold,
        avg_01_05=_avg(0.1, 0.5),
        avg_03_07=_avg(0.3, 0.7),
        avg_01_07=_avg(0.1, 0.7),
    )
