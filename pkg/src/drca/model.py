"""End-to-end video model: patch embedding, a full-resolution stage, the
compression split, resolution-aligned layers, and a pooled head.

Configurations follow the DRCA-<variant>-K<saliency frames> naming, e.g.
DRCA-S-K4 is the small width with 4 saliency frames kept.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import numerics
from .numerics import F32, RandomStream, ShapeError
from .ranking import PerturbConfig, SoftRankMatrix, hard_rank
from .dccm import (
    CompressorParams,
    DccmParams,
    ScoreNetParams,
    dccm_forward,
    full_res_sequence,
    score_net_forward,
)
from .rat import RatLayerParams, rat_layer_forward

_NAME_RE = re.compile(r"^DRCA-([BS])-K(\d+)$")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "S"
    embed_dim: int = 384
    depth: int = 12
    head_count: int = 6
    patch_size: int = 16
    frames: int = 8
    height: int = 224
    width: int = 224
    saliency_count: int = 4
    compression_factor: int = 2
    dccm_insert_after: int = 3
    head_mode: str = "classification"
    num_classes: int = 400
    embed_out: int = 0  # retrieval output width; 0 means embed_dim

    def __post_init__(self) -> None:
        if self.height % self.patch_size or self.width % self.patch_size:
            raise ShapeError(
                f"patch size {self.patch_size} must divide {self.height}x{self.width}"
            )
        m, n = self.grid
        if m % self.compression_factor or n % self.compression_factor:
            raise ShapeError(
                f"compression factor {self.compression_factor} must divide the "
                f"token grid {m}x{n}"
            )
        if not (1 <= self.saliency_count <= self.frames):
            raise ShapeError(
                f"saliency_count must be in [1, {self.frames}], got {self.saliency_count}"
            )
        if not (0 <= self.dccm_insert_after <= self.depth):
            raise ShapeError(
                f"dccm_insert_after must be in [0, {self.depth}], got {self.dccm_insert_after}"
            )
        if self.embed_dim % self.head_count:
            raise ShapeError(
                f"head count {self.head_count} must divide width {self.embed_dim}"
            )
        if self.head_mode not in ("classification", "retrieval"):
            raise ShapeError(f"unknown head mode {self.head_mode!r}")

    @property
    def grid(self) -> tuple[int, int]:
        return self.height // self.patch_size, self.width // self.patch_size

    @property
    def out_dim(self) -> int:
        if self.head_mode == "retrieval":
            return self.embed_out or self.embed_dim
        return self.num_classes

    # score-net widths: narrow enough that scoring every frame stays a
    # small fraction of what the compression saves
    @property
    def score_mid(self) -> int:
        return max(self.embed_dim // 24, 4)

    @property
    def score_hidden(self) -> int:
        return max(self.embed_dim // 2, 8)

    @property
    def name(self) -> str:
        return f"DRCA-{self.variant}-K{self.saliency_count}"

    def baseline(self) -> "ModelConfig":
        """The uncompressed twin: every frame kept, no grid reduction."""
        return replace(self, saliency_count=self.frames, compression_factor=1)

    @classmethod
    def small(cls, **over) -> "ModelConfig":
        return cls(**{"variant": "S", "embed_dim": 384, "head_count": 6, **over})

    @classmethod
    def base(cls, **over) -> "ModelConfig":
        return cls(**{"variant": "B", "embed_dim": 768, "head_count": 12, **over})

    @classmethod
    def toy(cls, **over) -> "ModelConfig":
        """A seconds-scale configuration for tests and demos."""
        defaults = dict(
            variant="toy", embed_dim=16, depth=4, head_count=4, patch_size=16,
            frames=8, height=64, width=64, saliency_count=4,
            compression_factor=2, dccm_insert_after=1, num_classes=5,
        )
        return cls(**{**defaults, **over})

    @classmethod
    def from_name(cls, name: str, **over) -> "ModelConfig":
        """Parse DRCA-<B|S>-K<count> into a configuration."""
        m = _NAME_RE.match(name)
        if not m:
            raise ValueError(f"cannot parse model name {name!r} (want DRCA-<B|S>-K<n>)")
        variant, k = m.group(1), int(m.group(2))
        maker = cls.base if variant == "B" else cls.small
        return maker(saliency_count=k, **over)


@dataclass(frozen=True)
class DrcaParams:
    patch_w: np.ndarray        # [patch*patch*3, C]
    patch_b: np.ndarray        # [C]
    pos_spatial: np.ndarray    # [M*N, C]
    pos_temporal: np.ndarray   # [T, C]
    stage1: tuple[RatLayerParams, ...]
    dccm: DccmParams
    rat: tuple[RatLayerParams, ...]
    head_w: np.ndarray         # [C, out]
    head_b: np.ndarray         # [out]


@dataclass(frozen=True)
class ModelOutput:
    output: np.ndarray          # [num_classes] logits or unit-norm embedding
    scores: np.ndarray          # [T] frame saliency scores
    selected_times: np.ndarray  # int64 [K], time indices kept at full resolution
    soft: Optional[SoftRankMatrix] = None


def init_params(config: ModelConfig, seed: int = 0, scale: float = 0.02) -> DrcaParams:
    """All weights gaussian at the given scale from one seeded stream;
    biases zero, norm gains one."""
    stream = RandomStream(seed)
    c = config.embed_dim
    m, n = config.grid
    s = F32(scale)
    return DrcaParams(
        patch_w=stream.gaussian((config.patch_size * config.patch_size * 3, c)) * s,
        patch_b=np.zeros(c, F32),
        pos_spatial=stream.gaussian((m * n, c)) * s,
        pos_temporal=stream.gaussian((config.frames, c)) * s,
        stage1=tuple(
            RatLayerParams.init(c, config.head_count, stream)
            for _ in range(config.dccm_insert_after)
        ),
        dccm=DccmParams(
            score=ScoreNetParams.init(c, config.score_mid, config.score_hidden, stream),
            compressor=CompressorParams.init(c, stream),
        ),
        rat=tuple(
            RatLayerParams.init(c, config.head_count, stream)
            for _ in range(config.depth - config.dccm_insert_after)
        ),
        head_w=stream.gaussian((c, config.out_dim)) * s,
        head_b=np.zeros(config.out_dim, F32),
    )


def named_params(params: DrcaParams) -> dict[str, np.ndarray]:
    """Flatten the parameter tree into name -> tensor, stable order."""
    out: dict[str, np.ndarray] = {
        "patch.weight": params.patch_w,
        "patch.bias": params.patch_b,
        "pos.spatial": params.pos_spatial,
        "pos.temporal": params.pos_temporal,
    }

    def add_layer(prefix: str, layer: RatLayerParams) -> None:
        for block_name, block in (("temporal", layer.temporal), ("spatial", layer.spatial)):
            out[f"{prefix}.{block_name}.wq"] = block.wq
            out[f"{prefix}.{block_name}.wk"] = block.wk
            out[f"{prefix}.{block_name}.wv"] = block.wv
            out[f"{prefix}.{block_name}.wo"] = block.wo
            out[f"{prefix}.{block_name}.ln_gain"] = block.ln_gain
            out[f"{prefix}.{block_name}.ln_shift"] = block.ln_shift
        out[f"{prefix}.ffn.w1"] = layer.ffn.w1
        out[f"{prefix}.ffn.b1"] = layer.ffn.b1
        out[f"{prefix}.ffn.w2"] = layer.ffn.w2
        out[f"{prefix}.ffn.b2"] = layer.ffn.b2
        out[f"{prefix}.ffn.ln_gain"] = layer.ffn.ln_gain
        out[f"{prefix}.ffn.ln_shift"] = layer.ffn.ln_shift

    for i, layer in enumerate(params.stage1):
        add_layer(f"stage1.{i}", layer)
    out["score.conv_kernel"] = params.dccm.score.conv_kernel
    out["score.w1"] = params.dccm.score.w1
    out["score.b1"] = params.dccm.score.b1
    out["score.w2"] = params.dccm.score.w2
    out["score.b2"] = params.dccm.score.b2
    out["compressor.w_a"] = params.dccm.compressor.w_a
    out["compressor.w_b"] = params.dccm.compressor.w_b
    out["compressor.w_c"] = params.dccm.compressor.w_c
    for i, layer in enumerate(params.rat):
        add_layer(f"rat.{i}", layer)
    out["head.weight"] = params.head_w
    out["head.bias"] = params.head_b
    return out


def params_from_named(config: ModelConfig, named: dict[str, np.ndarray]) -> DrcaParams:
    """Rebuild the parameter tree for a configuration from named tensors,
    demanding an exact key match."""
    from .rat import AttentionParams, FeedForwardParams

    def attention(prefix: str) -> AttentionParams:
        return AttentionParams(
            wq=named[f"{prefix}.wq"], wk=named[f"{prefix}.wk"],
            wv=named[f"{prefix}.wv"], wo=named[f"{prefix}.wo"],
            ln_gain=named[f"{prefix}.ln_gain"], ln_shift=named[f"{prefix}.ln_shift"],
        )

    def layer(prefix: str) -> RatLayerParams:
        return RatLayerParams(
            temporal=attention(f"{prefix}.temporal"),
            spatial=attention(f"{prefix}.spatial"),
            ffn=FeedForwardParams(
                w1=named[f"{prefix}.ffn.w1"], b1=named[f"{prefix}.ffn.b1"],
                w2=named[f"{prefix}.ffn.w2"], b2=named[f"{prefix}.ffn.b2"],
                ln_gain=named[f"{prefix}.ffn.ln_gain"],
                ln_shift=named[f"{prefix}.ffn.ln_shift"],
            ),
            head_count=config.head_count,
        )

    try:
        params = DrcaParams(
            patch_w=named["patch.weight"],
            patch_b=named["patch.bias"],
            pos_spatial=named["pos.spatial"],
            pos_temporal=named["pos.temporal"],
            stage1=tuple(layer(f"stage1.{i}") for i in range(config.dccm_insert_after)),
            dccm=DccmParams(
                score=ScoreNetParams(
                    conv_kernel=named["score.conv_kernel"],
                    w1=named["score.w1"], b1=named["score.b1"],
                    w2=named["score.w2"], b2=named["score.b2"],
                ),
                compressor=CompressorParams(
                    w_a=named["compressor.w_a"],
                    w_b=named["compressor.w_b"],
                    w_c=named["compressor.w_c"],
                ),
            ),
            rat=tuple(
                layer(f"rat.{i}")
                for i in range(config.depth - config.dccm_insert_after)
            ),
            head_w=named["head.weight"],
            head_b=named["head.bias"],
        )
    except KeyError as missing:
        raise ValueError(f"parameter set is missing tensor {missing}") from None
    extra = set(named) - set(named_params(params))
    if extra:
        raise ValueError(f"parameter set has unexpected tensors: {sorted(extra)}")
    return params


def patch_embed(video: np.ndarray, params: DrcaParams, config: ModelConfig) -> np.ndarray:
    """Non-overlapping patch projection plus separable position embeddings.

    video: [T, H, W, 3] -> tokens [T, M, N, C].
    """
    video = np.asarray(video, dtype=F32)
    expect = (config.frames, config.height, config.width, 3)
    if video.shape != expect:
        raise ShapeError(f"video shape {video.shape} does not match configured {expect}")
    t, hgt, wid, _ = video.shape
    p = config.patch_size
    m, n = config.grid
    patches = (
        video.reshape(t, m, p, n, p, 3)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(t, m, n, p * p * 3)
    )
    tokens = numerics.linear(patches, params.patch_w, params.patch_b)
    c = config.embed_dim
    tokens = tokens + params.pos_spatial.reshape(1, m, n, c)
    tokens = tokens + params.pos_temporal.reshape(t, 1, 1, c)
    return tokens


def _head(seq, params: DrcaParams, config: ModelConfig) -> np.ndarray:
    c = config.embed_dim
    all_tokens = np.concatenate(
        [seq.saliency.reshape(-1, c), seq.non_saliency.reshape(-1, c)], axis=0
    )
    pooled = numerics.mean_pool(all_tokens, axes=(0,))
    out = numerics.linear(pooled, params.head_w, params.head_b)
    if config.head_mode == "retrieval":
        out = numerics.l2_normalize(out)
    return out


def forward(video: np.ndarray, params: DrcaParams, config: ModelConfig,
            mode: str = "infer", perturb: PerturbConfig | None = None) -> ModelOutput:
    """Full pipeline with the compression split after `dccm_insert_after`
    full-resolution layers."""
    tokens = patch_embed(video, params, config)
    seq = full_res_sequence(tokens)
    for layer in params.stage1:
        seq = rat_layer_forward(seq, layer)
    # stage-1 times are the identity, so storage order is time order
    result = dccm_forward(
        seq.saliency, params.dccm, config.saliency_count,
        config.compression_factor, mode, perturb,
    )
    seq = result.sequence
    for layer in params.rat:
        seq = rat_layer_forward(seq, layer)
    return ModelOutput(
        output=_head(seq, params, config),
        scores=result.scores,
        selected_times=result.sequence.times.saliency,
        soft=result.soft,
    )


def baseline_forward(video: np.ndarray, params: DrcaParams,
                     config: ModelConfig) -> ModelOutput:
    """The same parameters with no split: every layer runs full-resolution
    divided space-time attention.  The score-net still runs, purely as a
    diagnostic."""
    tokens = patch_embed(video, params, config)
    seq = full_res_sequence(tokens)
    for layer in params.stage1:
        seq = rat_layer_forward(seq, layer)
    scores = score_net_forward(seq.saliency, params.dccm.score)
    for layer in params.rat:
        seq = rat_layer_forward(seq, layer)
    order = hard_rank(scores).order
    return ModelOutput(
        output=_head(seq, params, config),
        scores=scores,
        selected_times=order[: config.saliency_count].copy(),
    )
