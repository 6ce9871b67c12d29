"""Synthetic two-stream snippet datasets with planted action segments.

Each video is a sequence of snippets.  One to three non-overlapping segments
are planted per video; inside a segment both streams draw from a
class-specific mean vector plus Gaussian noise, while background snippets
draw from a shared background mean.  A fraction of background snippets
additionally receive distractor spikes on a per-video random channel subset,
which makes parts of the background resemble salient activity.  Video labels
are the union of planted segment classes and everything is deterministic per
seed.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .fileio import write_features
from .records import VideoRecord, save_manifest
from .validation import ValidationError, require

__all__ = ["SynthConfig", "synthesize_dataset", "class_means", "nearest_mean_accuracy"]


@dataclass(frozen=True)
class SynthConfig:
    """Generation settings for one synthetic dataset."""

    num_classes: int = 3
    feature_dim: int = 16
    snippets: int = 50
    train_videos: int = 40
    test_videos: int = 20
    min_segments: int = 1
    max_segments: int = 3
    min_segment_len: int = 5
    max_segment_len: int = 12
    mean_scale: float = 1.5
    noise_std: float = 0.3
    distractor_std: float = 1.5
    distractor_prob: float = 0.5
    fps: float = 25.0

    def __post_init__(self) -> None:
        require(self.num_classes >= 2, f"need at least 2 classes, got {self.num_classes}")
        require(self.snippets >= 10, f"need at least 10 snippets, got {self.snippets}")
        require(self.feature_dim >= 1, "feature_dim must be positive")
        require(self.train_videos >= 1 and self.test_videos >= 0,
                "video counts must be sensible")
        require(1 <= self.min_segments <= self.max_segments,
                "segment counts must satisfy 1 <= min <= max")
        require(1 <= self.min_segment_len <= self.max_segment_len,
                "segment lengths must satisfy 1 <= min <= max")
        if self.max_segments * self.max_segment_len > self.snippets:
            raise ValidationError(
                f"{self.max_segments} segments of up to {self.max_segment_len} "
                f"snippets cannot fit into {self.snippets} snippets")
        require(self.noise_std >= 0 and self.distractor_std >= 0,
                "noise levels must be non-negative")
        require(0.0 <= self.distractor_prob <= 1.0,
                "distractor_prob must lie in [0, 1]")

    @staticmethod
    def from_mapping(mapping: dict[str, str]) -> "SynthConfig":
        kwargs: dict = {}
        for f in fields(SynthConfig):
            if f.name not in mapping:
                continue
            raw = mapping[f.name]
            try:
                kwargs[f.name] = int(raw) if f.type == "int" else float(raw)
            except ValueError as exc:
                raise ValidationError(
                    f"config key {f.name!r} expects a number, got {raw!r}") from exc
        return SynthConfig(**kwargs)

    @staticmethod
    def known_keys() -> set[str]:
        return {f.name for f in fields(SynthConfig)}


def class_means(config: SynthConfig, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class and background mean vectors, one row pair per stream.

    Returns (means, background) with shapes (num_classes, 2, feature_dim) and
    (2, feature_dim).  Deterministic per seed and shared by both splits.
    """
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, 1.0, (config.num_classes, 2, config.feature_dim))
    background = rng.normal(0.0, 1.0, (2, config.feature_dim))
    return means * config.mean_scale, background * config.mean_scale


def _plant_segments(rng: np.random.Generator, config: SynthConfig
                    ) -> list[tuple[int, int, int]]:
    count = int(rng.integers(config.min_segments, config.max_segments + 1))
    lengths = rng.integers(config.min_segment_len, config.max_segment_len + 1,
                           size=count)
    free = config.snippets - int(lengths.sum())
    gaps = rng.multinomial(free, np.full(count + 1, 1.0 / (count + 1)))
    segments = []
    cursor = 0
    for i in range(count):
        cursor += int(gaps[i])
        start = cursor
        cursor += int(lengths[i])
        class_id = int(rng.integers(0, config.num_classes))
        segments.append((start, cursor, class_id))
    return segments


def _video_features(rng: np.random.Generator, config: SynthConfig,
                    means: np.ndarray, background: np.ndarray,
                    segments: list[tuple[int, int, int]]) -> np.ndarray:
    d, w = config.feature_dim, config.snippets
    feats = background[:, :, None] + rng.normal(0.0, config.noise_std, (2, d, w))
    action_mask = np.zeros(w, dtype=bool)
    for start, end, class_id in segments:
        feats[:, :, start:end] = (means[class_id][:, :, None]
                                  + rng.normal(0.0, config.noise_std, (2, d, end - start)))
        action_mask[start:end] = True
    # Distractor spikes on a per-video channel subset of background snippets.
    channels = rng.choice(d, size=max(1, d // 4), replace=False)
    for t in np.flatnonzero(~action_mask):
        if config.distractor_prob > 0 and rng.random() < config.distractor_prob:
            feats[:, channels, t] += rng.normal(0.0, config.distractor_std,
                                                (2, channels.size))
    return feats


def synthesize_dataset(config: SynthConfig, out_dir, seed: int
                       ) -> tuple[Path, Path]:
    """Generate feature files plus train and test manifests under ``out_dir``.

    Returns the two manifest paths.  Identical (config, seed) pairs produce
    byte-identical trees.
    """
    out = Path(out_dir)
    feature_dir = out / "features"
    feature_dir.mkdir(parents=True, exist_ok=True)
    means, background = class_means(config, seed)
    rng = np.random.default_rng(seed + 1)
    manifests: dict[str, list[VideoRecord]] = {"train": [], "test": []}
    counts = {"train": config.train_videos, "test": config.test_videos}
    for split in ("train", "test"):
        for index in range(counts[split]):
            video_id = f"{split}_{index:03d}"
            segments = _plant_segments(rng, config)
            feats = _video_features(rng, config, means, background, segments)
            rgb_name = f"features/{video_id}_rgb.feat"
            flow_name = f"features/{video_id}_flow.feat"
            write_features(out / rgb_name, feats[0])
            write_features(out / flow_name, feats[1])
            labels = tuple(sorted({class_id for _, _, class_id in segments}))
            manifests[split].append(VideoRecord(
                video_id=video_id,
                rgb_path=rgb_name,
                flow_path=flow_name,
                labels=labels,
                segments=tuple(segments),
                fps=config.fps,
            ))
    train_path = out / "train.jsonl"
    test_path = out / "test.jsonl"
    save_manifest(train_path, manifests["train"])
    save_manifest(test_path, manifests["test"])
    return train_path, test_path


def nearest_mean_accuracy(features: np.ndarray, segments, config: SynthConfig,
                          means: np.ndarray, background: np.ndarray) -> float:
    """Fraction of snippets a nearest-mean classifier labels correctly.

    Independent sanity oracle for separability: assigns each snippet to the
    closest of the background and class means (concatenating both streams)
    and compares against the planted layout.
    """
    truth = np.full(config.snippets, -1)
    for start, end, class_id in segments:
        truth[start:end] = class_id
    stacked = np.concatenate([features[0], features[1]], axis=0)
    candidates = [np.concatenate([background[0], background[1]])]
    for class_id in range(config.num_classes):
        candidates.append(np.concatenate([means[class_id][0], means[class_id][1]]))
    table = np.stack(candidates)
    distances = ((stacked.T[:, None, :] - table[None, :, :]) ** 2).sum(axis=2)
    predicted = distances.argmin(axis=1) - 1
    return float((predicted == truth).mean())
