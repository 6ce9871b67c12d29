"""Evidential fusion and two-stream attention for weakly supervised
temporal action localization, with a self-contained autodiff core and a
desk-scale training harness."""

from .autodiff import Tensor, finite_diff, grad, no_grad
from .config import RunConfig
from .estimator import ActionLocalizer
from .evidence import (BeliefMass, DirichletParams, TotalConflictError, combine,
                       combine_many, conflict, dirichlet_from_evidence, mass_audit,
                       masses_from_evidence, oracle_combine, vacuous)
from .localization import (MetricReport, Proposal, Segment, average_precision,
                           evaluate, generate_proposals, nms, tiou)
from .losses import (LossConfig, aggregate_video_scores, classification_loss,
                     complementarity_loss, evidential_loss, schedule_weight,
                     total_loss)
from .network import ForwardOutput, ModelParams, forward
from .records import VideoRecord, VideoSample, load_manifest, load_samples
from .synthetic import SynthConfig, synthesize_dataset
from .training import TrainingError, train
from .validation import ValidationError

__version__ = "0.1.0"

__all__ = [
    "ActionLocalizer",
    "BeliefMass",
    "DirichletParams",
    "ForwardOutput",
    "LossConfig",
    "MetricReport",
    "ModelParams",
    "Proposal",
    "RunConfig",
    "Segment",
    "SynthConfig",
    "Tensor",
    "TotalConflictError",
    "TrainingError",
    "ValidationError",
    "VideoRecord",
    "VideoSample",
    "aggregate_video_scores",
    "average_precision",
    "classification_loss",
    "combine",
    "combine_many",
    "complementarity_loss",
    "conflict",
    "dirichlet_from_evidence",
    "evaluate",
    "evidential_loss",
    "finite_diff",
    "forward",
    "generate_proposals",
    "grad",
    "load_manifest",
    "load_samples",
    "mass_audit",
    "masses_from_evidence",
    "nms",
    "no_grad",
    "oracle_combine",
    "schedule_weight",
    "synthesize_dataset",
    "tiou",
    "total_loss",
    "train",
    "vacuous",
]
