"""Two-stream attention network with snippet-level evidence fusion.

The forward pass takes optical-flow and RGB feature matrices (feature_dim x
num_snippets), runs both through one shared multi-head self-attention stack
to get per-snippet scalar weights, gates each stream by the sigmoid of the
elementwise product of the two weight vectors, extracts filtered attention
from a shared three-layer conv stack, concatenates the gated streams, and
classifies every snippet into num_classes action columns plus one background
column.  Action logits become evidence through a clamped exponential; the
attention-reweighted copy of that evidence is fused with the original per
snippet, and the fused uncertainty feeds the training schedule.

No positional encoding is used anywhere; the self-attention stage is
permutation equivariant over snippets, while the conv stacks intentionally
mix neighboring snippets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .evidence import TOTAL_CONFLICT_EPS, BeliefMass, TotalConflictError
from .validation import ValidationError, as_float_matrix, require

__all__ = [
    "ModelParams",
    "ForwardOutput",
    "stream_attention",
    "cross_gate",
    "filter_attention",
    "fuse_streams",
    "classify",
    "snippet_evidence",
    "reweight_evidence",
    "fuse_snippet_evidence",
    "forward",
]


def _glorot(rng: np.random.Generator, shape: tuple[int, ...],
            fan_in: int, fan_out: int) -> Tensor:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return Tensor(rng.normal(0.0, std, shape), requires_grad=True)


def _zeros(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


@dataclass
class ModelParams:
    """All learnable weights, shared between the two input streams.

    Attention projections are per head; the filter stack maps features to one
    sigmoid channel; the classifier emits num_classes + 1 channels with the
    background score in the last column.
    """

    num_classes: int
    feature_dim: int
    heads: int
    head_dim: int
    attn_query: list[Tensor]
    attn_key: list[Tensor]
    attn_value: list[Tensor]
    attn_out: Tensor
    attn_score: Tensor
    filt_w1: Tensor
    filt_b1: Tensor
    filt_w2: Tensor
    filt_b2: Tensor
    filt_w3: Tensor
    filt_b3: Tensor
    cls_w1: Tensor
    cls_b1: Tensor
    cls_w2: Tensor
    cls_b2: Tensor
    cls_w3: Tensor
    cls_b3: Tensor

    @staticmethod
    def initialize(num_classes: int, feature_dim: int, heads: int,
                   rng: np.random.Generator) -> "ModelParams":
        require(num_classes >= 1, f"num_classes must be positive, got {num_classes}")
        require(feature_dim >= 1, f"feature_dim must be positive, got {feature_dim}")
        require(heads >= 1, f"heads must be positive, got {heads}")
        d = feature_dim
        head_dim = max(1, d // heads)
        attn_query = [_glorot(rng, (head_dim, d), d, head_dim) for _ in range(heads)]
        attn_key = [_glorot(rng, (head_dim, d), d, head_dim) for _ in range(heads)]
        attn_value = [_glorot(rng, (head_dim, d), d, head_dim) for _ in range(heads)]
        joined = heads * head_dim
        wide = 2 * d
        out = num_classes + 1
        return ModelParams(
            num_classes=num_classes,
            feature_dim=d,
            heads=heads,
            head_dim=head_dim,
            attn_query=attn_query,
            attn_key=attn_key,
            attn_value=attn_value,
            attn_out=_glorot(rng, (d, joined), joined, d),
            attn_score=_glorot(rng, (1, d), d, 1),
            filt_w1=_glorot(rng, (d, d, 3), d * 3, d * 3),
            filt_b1=_zeros((d,)),
            filt_w2=_glorot(rng, (d, d, 3), d * 3, d * 3),
            filt_b2=_zeros((d,)),
            filt_w3=_glorot(rng, (1, d, 1), d, 1),
            filt_b3=_zeros((1,)),
            cls_w1=_glorot(rng, (wide, wide, 3), wide * 3, wide * 3),
            cls_b1=_zeros((wide,)),
            cls_w2=_glorot(rng, (wide, wide, 3), wide * 3, wide * 3),
            cls_b2=_zeros((wide,)),
            cls_w3=_glorot(rng, (out, wide, 1), wide, out),
            cls_b3=_zeros((out,)),
        )

    def named(self) -> dict[str, Tensor]:
        """Stable name-to-tensor mapping used for optimization and storage."""
        table: dict[str, Tensor] = {}
        for h in range(self.heads):
            table[f"attn.query.{h}"] = self.attn_query[h]
            table[f"attn.key.{h}"] = self.attn_key[h]
            table[f"attn.value.{h}"] = self.attn_value[h]
        table["attn.out"] = self.attn_out
        table["attn.score"] = self.attn_score
        for name in ("filt_w1", "filt_b1", "filt_w2", "filt_b2", "filt_w3", "filt_b3",
                     "cls_w1", "cls_b1", "cls_w2", "cls_b2", "cls_w3", "cls_b3"):
            table[name.replace("_", ".", 1)] = getattr(self, name)
        return table

    @staticmethod
    def from_named(num_classes: int, feature_dim: int, heads: int,
                   tensors: dict[str, Tensor]) -> "ModelParams":
        head_dim = max(1, feature_dim // heads)
        try:
            return ModelParams(
                num_classes=num_classes,
                feature_dim=feature_dim,
                heads=heads,
                head_dim=head_dim,
                attn_query=[tensors[f"attn.query.{h}"] for h in range(heads)],
                attn_key=[tensors[f"attn.key.{h}"] for h in range(heads)],
                attn_value=[tensors[f"attn.value.{h}"] for h in range(heads)],
                attn_out=tensors["attn.out"],
                attn_score=tensors["attn.score"],
                filt_w1=tensors["filt.w1"],
                filt_b1=tensors["filt.b1"],
                filt_w2=tensors["filt.w2"],
                filt_b2=tensors["filt.b2"],
                filt_w3=tensors["filt.w3"],
                filt_b3=tensors["filt.b3"],
                cls_w1=tensors["cls.w1"],
                cls_b1=tensors["cls.b1"],
                cls_w2=tensors["cls.w2"],
                cls_b2=tensors["cls.b2"],
                cls_w3=tensors["cls.w3"],
                cls_b3=tensors["cls.b3"],
            )
        except KeyError as exc:
            raise ValidationError(f"parameter table is missing tensor {exc}") from exc

    def tensors(self) -> list[Tensor]:
        return list(self.named().values())


@dataclass
class ForwardOutput:
    """Everything one forward pass produces for a single video."""

    features: Tensor          # (2 * feature_dim, num_snippets)
    attention: Tensor         # (num_snippets,), entries in (0, 1)
    cas: Tensor               # (num_snippets, num_classes + 1), raw scores
    evidence_raw: Tensor      # (num_snippets, num_classes), non-negative
    evidence_reweighted: Tensor
    fused_masses: list[BeliefMass] | None
    fused_thetas: np.ndarray  # (num_snippets,)


def stream_attention(x: Tensor, params: ModelParams) -> Tensor:
    """Per-snippet scalar weights from shared multi-head self-attention.

    Self-attention runs over snippet positions, heads are concatenated and
    projected back to the feature dimension, and a learned scalar head maps
    each snippet to one raw weight.  Both streams call this with the same
    parameters.
    """
    require(x.ndim == 2, f"stream features must be a matrix, got shape {x.shape}")
    require(x.shape[0] == params.feature_dim,
            f"stream has {x.shape[0]} channels, parameters expect {params.feature_dim}")
    width = x.shape[1]
    scale = 1.0 / math.sqrt(params.head_dim)
    head_outputs: list[Tensor] = []
    for wq, wk, wv in zip(params.attn_query, params.attn_key, params.attn_value):
        q = ad.matmul(wq, x)
        k = ad.matmul(wk, x)
        v = ad.matmul(wv, x)
        scores = ad.matmul(ad.transpose(q), k) * scale
        weights = ad.softmax(scores)
        head_outputs.append(ad.matmul(v, ad.transpose(weights)))
    stacked = head_outputs[0]
    for piece in head_outputs[1:]:
        stacked = ad.concat_rows(stacked, piece)
    projected = ad.matmul(params.attn_out, stacked)
    return ad.reshape(ad.matmul(params.attn_score, projected), (width,))


def cross_gate(x_flow: Tensor, x_rgb: Tensor,
               a_flow: Tensor, a_rgb: Tensor) -> tuple[Tensor, Tensor]:
    """Gate both streams by the sigmoid of the product of their raw weights.

    The elementwise product is symmetric, so one shared gate scales every
    channel of both streams.
    """
    require(x_flow.shape == x_rgb.shape,
            f"stream shapes differ: {x_flow.shape} vs {x_rgb.shape}")
    require(a_flow.shape == a_rgb.shape == (x_flow.shape[1],),
            f"attention lengths {a_flow.shape}, {a_rgb.shape} do not match "
            f"{x_flow.shape[1]} snippets")
    gate = ad.sigmoid(ad.mul(a_flow, a_rgb))
    spread = ad.tile_rows(gate, x_flow.shape[0])
    return ad.mul(x_flow, spread), ad.mul(x_rgb, spread)


def filter_attention(x: Tensor, params: ModelParams) -> Tensor:
    """Filtered attention in (0, 1) from a shared three-layer conv stack."""
    require(x.shape[0] == params.feature_dim,
            f"filter input has {x.shape[0]} channels, expected {params.feature_dim}")
    h = ad.relu(ad.conv1d(x, params.filt_w1, params.filt_b1, padding="same"))
    h = ad.relu(ad.conv1d(h, params.filt_w2, params.filt_b2, padding="same"))
    h = ad.conv1d(h, params.filt_w3, params.filt_b3, padding="same")
    return ad.sigmoid(ad.reshape(h, (x.shape[1],)))


def fuse_streams(x_flow: Tensor, x_rgb: Tensor,
                 a_flow: Tensor, a_rgb: Tensor) -> tuple[Tensor, Tensor]:
    """Concatenate gated streams along channels and average their attention."""
    require(x_flow.shape == x_rgb.shape,
            f"stream shapes differ: {x_flow.shape} vs {x_rgb.shape}")
    require(a_flow.shape == a_rgb.shape,
            f"attention shapes differ: {a_flow.shape} vs {a_rgb.shape}")
    fused = ad.concat_rows(x_flow, x_rgb)
    attention = ad.mul(ad.add(a_flow, a_rgb), 0.5)
    return fused, attention


def classify(features: Tensor, params: ModelParams) -> Tensor:
    """Per-snippet class scores, shape (num_snippets, num_classes + 1).

    The last column is the background score; probabilities are formed by the
    consumers that need them.
    """
    require(features.shape[0] == 2 * params.feature_dim,
            f"classifier input has {features.shape[0]} channels, "
            f"expected {2 * params.feature_dim}")
    h = ad.relu(ad.conv1d(features, params.cls_w1, params.cls_b1, padding="same"))
    h = ad.relu(ad.conv1d(h, params.cls_w2, params.cls_b2, padding="same"))
    h = ad.conv1d(h, params.cls_w3, params.cls_b3, padding="same")
    return ad.transpose(h)


def snippet_evidence(cas: Tensor, num_classes: int) -> Tensor:
    """Evidence counts from action logits via a clamped exponential.

    The background column is excluded; the clamp keeps strengths bounded.
    """
    require(cas.ndim == 2 and cas.shape[1] == num_classes + 1,
            f"class scores must have {num_classes + 1} columns, got shape {cas.shape}")
    return ad.exp_clipped(ad.slice_cols(cas, 0, num_classes))


def reweight_evidence(evidence: Tensor, attention: Tensor) -> Tensor:
    """Scale each snippet's evidence row by its attention weight."""
    require(attention.ndim == 1 and attention.shape[0] == evidence.shape[0],
            f"attention length {attention.shape} does not match "
            f"{evidence.shape[0]} evidence rows")
    return ad.mul(evidence, ad.tile_cols(attention, evidence.shape[1]))


def fuse_snippet_evidence(evidence_raw: np.ndarray,
                          evidence_reweighted: np.ndarray) -> list[BeliefMass]:
    """Fuse the original and reweighted evidence of every snippet.

    Equivalent to converting each snippet row to masses and combining the
    pair, but computed for all rows at once.  With a positive attention
    weight both masses share support and the fusion always succeeds; a
    totally conflicting snippet raises with its index.
    """
    e1 = as_float_matrix(evidence_raw, "evidence_raw")
    e2 = as_float_matrix(evidence_reweighted, "evidence_reweighted")
    require(e1.shape == e2.shape,
            f"evidence shapes differ: {e1.shape} vs {e2.shape}")
    require(bool(e1.min() >= 0) and bool(e2.min() >= 0),
            "evidence entries must be non-negative")
    num_classes = e1.shape[1]
    s1 = e1.sum(axis=1, keepdims=True) + num_classes
    s2 = e2.sum(axis=1, keepdims=True) + num_classes
    m1, t1 = e1 / s1, num_classes / s1[:, 0]
    m2, t2 = e2 / s2, num_classes / s2[:, 0]
    con = m1.sum(axis=1) * m2.sum(axis=1) - (m1 * m2).sum(axis=1)
    np.clip(con, 0.0, 1.0, out=con)
    blocked = np.flatnonzero(con >= 1.0 - TOTAL_CONFLICT_EPS)
    if blocked.size:
        t = int(blocked[0])
        raise TotalConflictError(
            f"total conflict at snippet {t}: conflict coefficient {con[t]!r}")
    scale = 1.0 / (1.0 - con)
    fused = (m1 * m2 + m1 * t2[:, None] + t1[:, None] * m2) * scale[:, None]
    thetas = t1 * t2 * scale
    return [BeliefMass(singletons=fused[t], theta=thetas[t])
            for t in range(e1.shape[0])]


def forward(params: ModelParams, flow, rgb, *,
            use_cross_attention: bool = True,
            use_evidential_fusion: bool = True) -> ForwardOutput:
    """Full forward pass over one video's two feature streams.

    ``use_cross_attention=False`` bypasses the self-attention and gating
    stages and feeds the raw streams to the filter stack.  With
    ``use_evidential_fusion=False`` no masses are fused and every snippet
    reports a flat uncertainty of 0.5.
    """
    flow_arr = as_float_matrix(flow, "flow features")
    rgb_arr = as_float_matrix(rgb, "rgb features")
    require(flow_arr.shape == rgb_arr.shape,
            f"stream shapes differ: {flow_arr.shape} vs {rgb_arr.shape}")
    x_flow = Tensor(flow_arr)
    x_rgb = Tensor(rgb_arr)
    if use_cross_attention:
        raw_flow = stream_attention(x_flow, params)
        raw_rgb = stream_attention(x_rgb, params)
        x_flow, x_rgb = cross_gate(x_flow, x_rgb, raw_flow, raw_rgb)
    a_flow = filter_attention(x_flow, params)
    a_rgb = filter_attention(x_rgb, params)
    features, attention = fuse_streams(x_flow, x_rgb, a_flow, a_rgb)
    cas = classify(features, params)
    evidence_raw = snippet_evidence(cas, params.num_classes)
    evidence_reweighted = reweight_evidence(evidence_raw, attention)
    if use_evidential_fusion:
        fused = fuse_snippet_evidence(evidence_raw.data, evidence_reweighted.data)
        thetas = np.array([m.theta for m in fused])
    else:
        fused = None
        thetas = np.full(flow_arr.shape[1], 0.5)
    return ForwardOutput(
        features=features,
        attention=attention,
        cas=cas,
        evidence_raw=evidence_raw,
        evidence_reweighted=evidence_reweighted,
        fused_masses=fused,
        fused_thetas=thetas,
    )


def parameter_count(params: ModelParams) -> int:
    return sum(t.size for t in params.tensors())
