"""Line-oriented data files: dataset manifests, proposal exports, loss logs.

Every format is JSON Lines with sorted keys so outputs are diffable and byte
deterministic.

Manifest keys: ``video_id``, ``rgb``, ``flow`` (feature paths relative to the
manifest), ``labels`` (0-based class indices), ``fps``, optional ``segments``
as [start, end, class] triples in snippet units.

Proposal keys: ``video_id``, ``start``, ``end`` (snippets), ``class_id``,
``score``, ``start_sec``, ``end_sec`` (snippets times 16 frames over fps).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .fileio import read_features
from .localization import Proposal, Segment
from .validation import ValidationError, require

__all__ = [
    "VideoRecord",
    "VideoSample",
    "save_manifest",
    "load_manifest",
    "load_sample",
    "load_samples",
    "write_proposals",
    "read_proposals",
    "format_loss_line",
    "write_loss_log",
    "FRAMES_PER_SNIPPET",
]

FRAMES_PER_SNIPPET = 16


@dataclass(frozen=True)
class VideoRecord:
    """Manifest entry: where a video's features live and what it contains."""

    video_id: str
    rgb_path: str
    flow_path: str
    labels: tuple[int, ...]
    segments: tuple[tuple[int, int, int], ...] | None = None
    fps: float = 25.0

    def to_json(self) -> str:
        payload: dict = {
            "video_id": self.video_id,
            "rgb": self.rgb_path,
            "flow": self.flow_path,
            "labels": list(self.labels),
            "fps": self.fps,
        }
        if self.segments is not None:
            payload["segments"] = [list(seg) for seg in self.segments]
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "VideoRecord":
        payload = json.loads(line)
        for key in ("video_id", "rgb", "flow", "labels"):
            require(key in payload, f"manifest line is missing key {key!r}")
        segments = payload.get("segments")
        return VideoRecord(
            video_id=str(payload["video_id"]),
            rgb_path=str(payload["rgb"]),
            flow_path=str(payload["flow"]),
            labels=tuple(int(c) for c in payload["labels"]),
            segments=(tuple(tuple(int(v) for v in seg) for seg in segments)
                      if segments is not None else None),
            fps=float(payload.get("fps", 25.0)),
        )


@dataclass
class VideoSample:
    """A video loaded into memory: two feature streams plus supervision."""

    video_id: str
    rgb: np.ndarray
    flow: np.ndarray
    labels: tuple[int, ...]
    segments: tuple[tuple[int, int, int], ...] | None = None
    fps: float = 25.0

    @property
    def num_snippets(self) -> int:
        return int(self.rgb.shape[1])

    def ground_truth(self) -> list[tuple[Segment, int]]:
        if not self.segments:
            return []
        return [(Segment(start, end), class_id)
                for start, end, class_id in self.segments]


def save_manifest(path, records: Sequence[VideoRecord]) -> None:
    lines = [record.to_json() for record in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_manifest(path) -> list[VideoRecord]:
    """Parse a manifest, rejecting duplicate video ids."""
    records: list[VideoRecord] = []
    seen: set[str] = set()
    for number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = VideoRecord.from_json(line)
        except (json.JSONDecodeError, ValueError) as exc:
            raise ValidationError(f"manifest line {number} is invalid: {exc}") from exc
        require(record.video_id not in seen,
                f"duplicate video id {record.video_id!r} at manifest line {number}")
        seen.add(record.video_id)
        records.append(record)
    return records


def load_sample(record: VideoRecord, root) -> VideoSample:
    """Load one record's feature files, checking the streams agree on shape."""
    base = Path(root)
    rgb = read_features(base / record.rgb_path)
    flow = read_features(base / record.flow_path)
    require(rgb.shape == flow.shape,
            f"video {record.video_id!r}: rgb shape {rgb.shape} "
            f"does not match flow shape {flow.shape}")
    return VideoSample(
        video_id=record.video_id,
        rgb=rgb,
        flow=flow,
        labels=record.labels,
        segments=record.segments,
        fps=record.fps,
    )


def load_samples(records: Sequence[VideoRecord], root) -> list[VideoSample]:
    return [load_sample(record, root) for record in records]


def write_proposals(path, proposals: Sequence[Proposal],
                    fps_by_video: Mapping[str, float] | None = None) -> None:
    """Export proposals, converting snippet indices to seconds per video fps."""
    lines = []
    for p in proposals:
        fps = float(fps_by_video.get(p.video_id, 25.0)) if fps_by_video else 25.0
        seconds = FRAMES_PER_SNIPPET / fps
        lines.append(json.dumps({
            "video_id": p.video_id,
            "start": p.segment.start,
            "end": p.segment.end,
            "class_id": p.class_id,
            "score": p.score,
            "start_sec": p.segment.start * seconds,
            "end_sec": p.segment.end * seconds,
        }, sort_keys=True))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_proposals(path) -> list[Proposal]:
    proposals: list[Proposal] = []
    for number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
            proposals.append(Proposal(
                video_id=str(payload["video_id"]),
                segment=Segment(int(payload["start"]), int(payload["end"])),
                class_id=int(payload["class_id"]),
                score=float(payload["score"]),
            ))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ValidationError(f"proposal line {number} is invalid: {exc}") from exc
    return proposals


def format_loss_line(iteration: int, classification: float, complementarity: float,
                     evidential: float, total: float) -> str:
    return json.dumps({
        "iteration": iteration,
        "classification": classification,
        "complementarity": complementarity,
        "evidential": evidential,
        "total": total,
    }, sort_keys=True)


def write_loss_log(path, entries: Iterable[Mapping[str, float]]) -> None:
    lines = [format_loss_line(int(e["iteration"]), e["classification"],
                              e["complementarity"], e["evidential"], e["total"])
             for e in entries]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
