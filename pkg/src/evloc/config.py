"""Flat key=value configuration files.

One ``key = value`` pair per line; ``#`` starts a comment and blank lines are
ignored.  Booleans are ``true``/``false``, threshold lists are comma
separated.  ``RunConfig`` drives training and inference, ``SynthConfig`` (in
``synthetic``) drives dataset generation; both may share one file.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .validation import ValidationError, require

__all__ = ["RunConfig", "parse_config_text", "load_config_file", "RUN_CONFIG_DEFAULTS"]


def parse_config_text(text: str) -> dict[str, str]:
    mapping: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        require("=" in line, f"config line {number} is not a key=value pair: {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        require(bool(key), f"config line {number} has an empty key")
        require(key not in mapping, f"duplicate config key {key!r} at line {number}")
        mapping[key] = value.strip()
    return mapping


def load_config_file(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text())


def _parse_bool(value: str, key: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValidationError(f"config key {key!r} expects a boolean, got {value!r}")


def _parse_floats(value: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in value.split(",") if part.strip())
    except ValueError as exc:
        raise ValidationError(f"config key {key!r} expects floats: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    """Training and inference settings with literature defaults.

    ``seed`` has no default on purpose: every run must pin one.
    """

    num_classes: int = 3
    feature_dim: int = 16
    heads: int = 4
    snippet_cap: int = 320
    learning_rate: float = 5e-5
    iterations: int = 5000
    batch_size: int = 10
    lambda_comp: float = 0.8
    lambda_evid: float = 1.0
    amplitude: float = 0.7
    topk_ratio: float = 0.125
    proposal_thresholds: tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(1, 10))
    nms_iou: float = 0.5
    class_gate: float = 0.1
    use_cross_attention: bool = True
    use_evidential_fusion: bool = True
    check_masses: bool = False
    checkpoint_interval: int = 0
    seed: int | None = None

    def __post_init__(self) -> None:
        require(self.num_classes >= 1, "num_classes must be positive")
        require(self.feature_dim >= 1, "feature_dim must be positive")
        require(self.heads >= 1, "heads must be positive")
        require(self.snippet_cap >= 1, "snippet_cap must be positive")
        require(self.learning_rate > 0, "learning_rate must be positive")
        require(self.iterations >= 0, "iterations must be non-negative")
        require(self.batch_size >= 1, "batch_size must be positive")
        require(self.lambda_comp >= 0 and self.lambda_evid >= 0,
                "loss weights must be non-negative")
        require(0.0 <= self.amplitude <= 1.0, "amplitude must lie in [0, 1]")
        require(0.0 < self.topk_ratio <= 1.0, "topk_ratio must lie in (0, 1]")
        require(all(0.0 < t < 1.0 for t in self.proposal_thresholds),
                "proposal thresholds must lie in (0, 1)")
        require(0.0 < self.nms_iou <= 1.0, "nms_iou must lie in (0, 1]")
        require(0.0 <= self.class_gate < 1.0, "class_gate must lie in [0, 1)")
        require(self.checkpoint_interval >= 0,
                "checkpoint_interval must be non-negative")

    def require_seed(self) -> int:
        require(self.seed is not None, "a seed is mandatory; set one in the "
                                       "config file or pass --seed")
        return int(self.seed)

    @staticmethod
    def known_keys() -> set[str]:
        return {f.name for f in fields(RunConfig)}

    @staticmethod
    def from_mapping(mapping: dict[str, str]) -> "RunConfig":
        """Build a config from string key=value pairs, ignoring foreign keys."""
        kwargs: dict = {}
        for f in fields(RunConfig):
            if f.name not in mapping:
                continue
            raw = mapping[f.name]
            if f.name == "proposal_thresholds":
                kwargs[f.name] = _parse_floats(raw, f.name)
            elif f.type in ("bool",):
                kwargs[f.name] = _parse_bool(raw, f.name)
            elif f.name == "seed":
                kwargs[f.name] = int(raw)
            elif f.type in ("int",):
                try:
                    kwargs[f.name] = int(raw)
                except ValueError as exc:
                    raise ValidationError(
                        f"config key {f.name!r} expects an integer, got {raw!r}") from exc
            else:
                try:
                    kwargs[f.name] = float(raw)
                except ValueError as exc:
                    raise ValidationError(
                        f"config key {f.name!r} expects a number, got {raw!r}") from exc
        return RunConfig(**kwargs)

    def to_text(self) -> str:
        lines = []
        for f in fields(RunConfig):
            value = getattr(self, f.name)
            if value is None:
                continue
            if f.name == "proposal_thresholds":
                value = ",".join(f"{t:g}" for t in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


RUN_CONFIG_DEFAULTS = RunConfig()
