"""Context-aware frame compression.

A small score-net rates every frame's saliency, frames are split into a
top-K saliency part kept at native resolution and a non-saliency part,
and the non-saliency part is compressed to a coarser grid by
cross-attending to the saliency frames (queries from the non-saliency
tokens, keys/values from the saliency tokens, all three pooled to the
target grid) plus a pooled residual.  Training reaches the score-net
through the smoothed ranking of the ranking module; the token path
itself stays hard.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import numerics
from .numerics import F32, RandomStream, ShapeError
from .ranking import (
    PerturbConfig,
    SoftRankMatrix,
    TimeIndexMap,
    hard_rank,
    perturbed_objective,
    perturbed_rank,
    topk_split,
)


@dataclass(frozen=True)
class ScoreNetParams:
    """Saliency score-net: 3-D conv, global spatial mean, two linear maps."""

    conv_kernel: np.ndarray  # [kt, kh, kw, C, C_mid]
    w1: np.ndarray           # [C_mid, C_hidden]
    b1: np.ndarray           # [C_hidden]
    w2: np.ndarray           # [C_hidden, 1]
    b2: np.ndarray           # [1]

    @classmethod
    def init(cls, channels: int, mid: int, hidden: int, stream: RandomStream,
             scale: float = 0.02, zero_final: bool = False) -> "ScoreNetParams":
        s = F32(scale)
        w2 = np.zeros((hidden, 1), F32) if zero_final else stream.gaussian((hidden, 1)) * s
        return cls(
            conv_kernel=stream.gaussian((3, 3, 3, channels, mid)) * s,
            w1=stream.gaussian((mid, hidden)) * s,
            b1=np.zeros(hidden, F32),
            w2=w2,
            b2=np.zeros(1, F32),
        )


@dataclass(frozen=True)
class ScoreNetGrads:
    conv_kernel: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class CompressorParams:
    """Projection weights for the saliency-reference cross-attention."""

    w_a: np.ndarray  # [C, C] queries, from non-saliency tokens
    w_b: np.ndarray  # [C, C] keys, from saliency tokens
    w_c: np.ndarray  # [C, C] values, from saliency tokens

    @classmethod
    def init(cls, channels: int, stream: RandomStream, scale: float = 0.02) -> "CompressorParams":
        s = F32(scale)
        return cls(
            w_a=stream.gaussian((channels, channels)) * s,
            w_b=stream.gaussian((channels, channels)) * s,
            w_c=stream.gaussian((channels, channels)) * s,
        )


@dataclass(frozen=True)
class DccmParams:
    score: ScoreNetParams
    compressor: CompressorParams


@dataclass(frozen=True)
class MultiResSequence:
    """A video split into a full-resolution saliency part and a coarser
    non-saliency part, each in rank order, with the original time index of
    every frame.  The two parts always partition 0..T-1."""

    saliency: np.ndarray      # [K, M, N, C]
    non_saliency: np.ndarray  # [T-K, M/h, N/h, C]
    times: TimeIndexMap
    h: int

    def __post_init__(self) -> None:
        sal, non = self.saliency, self.non_saliency
        if sal.ndim != 4 or non.ndim != 4:
            raise ShapeError("sequence parts must be [frames, M, N, C]")
        if sal.shape[0] < 1:
            raise ShapeError("saliency part must hold at least one frame")
        if self.h < 1:
            raise ShapeError(f"alignment factor must be >= 1, got {self.h}")
        k, m, n, c = sal.shape
        r, ml, nl, cl = non.shape
        if cl != c:
            raise ShapeError(f"channel mismatch between parts: {c} vs {cl}")
        if ml * self.h != m or nl * self.h != n:
            raise ShapeError(
                f"non-saliency grid {ml}x{nl} times h={self.h} must equal saliency grid {m}x{n}"
            )
        if self.times.saliency.shape != (k,) or self.times.non_saliency.shape != (r,):
            raise ShapeError("time index map extents do not match the parts")
        all_times = np.concatenate([self.times.saliency, self.times.non_saliency])
        if not np.array_equal(np.sort(all_times), np.arange(k + r)):
            raise ShapeError("time indices must form a partition of 0..T-1")

    @property
    def frame_count(self) -> int:
        return self.saliency.shape[0] + self.non_saliency.shape[0]

    @property
    def channels(self) -> int:
        return self.saliency.shape[-1]

    @property
    def full_grid(self) -> tuple[int, int]:
        return self.saliency.shape[1], self.saliency.shape[2]

    @property
    def low_grid(self) -> tuple[int, int]:
        return self.saliency.shape[1] // self.h, self.saliency.shape[2] // self.h

    @property
    def token_count(self) -> int:
        return int(self.saliency[..., 0].size + self.non_saliency[..., 0].size)


def full_res_sequence(tokens: np.ndarray) -> MultiResSequence:
    """Wrap an unsplit video as an all-saliency sequence (h=1, K=T)."""
    tokens = np.asarray(tokens, dtype=F32)
    if tokens.ndim != 4:
        raise ShapeError(f"tokens must be [T, M, N, C], got {tokens.shape}")
    t, m, n, c = tokens.shape
    return MultiResSequence(
        saliency=tokens,
        non_saliency=np.zeros((0, m, n, c), F32),
        times=TimeIndexMap(np.arange(t, dtype=np.int64), np.zeros(0, dtype=np.int64)),
        h=1,
    )


def score_net_forward(tokens: np.ndarray, p: ScoreNetParams) -> np.ndarray:
    """Per-frame saliency scores from a [T, M, N, C] token video."""
    tokens = np.asarray(tokens, dtype=F32)
    if tokens.ndim != 4:
        raise ShapeError(f"score-net input must be [T, M, N, C], got {tokens.shape}")
    conv_out = numerics.conv3d(tokens, p.conv_kernel)          # [T, M, N, C_mid]
    pooled = numerics.mean_pool(conv_out, axes=(1, 2))         # [T, C_mid]
    hidden = numerics.relu(numerics.linear(pooled, p.w1, p.b1))
    scores = numerics.linear(hidden, p.w2, p.b2)               # [T, 1]
    return scores[:, 0]


def score_net_backward(tokens: np.ndarray, p: ScoreNetParams,
                       upstream: np.ndarray) -> ScoreNetGrads:
    """Reverse-mode parameter gradients of sum(upstream * scores).

    Recomputes the forward intermediates (they are tiny) and walks the
    chain backwards by hand; the relu subgradient at exactly zero is zero.
    """
    tokens = np.asarray(tokens, dtype=F32)
    upstream = np.asarray(upstream, dtype=F32)
    t, m, n, _ = tokens.shape
    if upstream.shape != (t,):
        raise ShapeError(f"upstream gradient must be [{t}], got {upstream.shape}")

    conv_out = numerics.conv3d(tokens, p.conv_kernel)
    pooled = conv_out.mean(axis=(1, 2), dtype=F32)
    pre = pooled @ p.w1 + p.b1
    hidden = np.maximum(pre, F32(0))

    d_scores = upstream[:, None]                       # [T, 1]
    d_w2 = hidden.T @ d_scores
    d_b2 = d_scores.sum(axis=0)
    d_hidden = d_scores @ p.w2.T
    d_pre = d_hidden * (pre > 0)
    d_w1 = pooled.T @ d_pre
    d_b1 = d_pre.sum(axis=0)
    d_pooled = d_pre @ p.w1.T                          # [T, C_mid]
    # mean over M*N spatial positions spreads the gradient uniformly
    d_conv = np.broadcast_to(
        d_pooled[:, None, None, :] / F32(m * n), conv_out.shape
    ).astype(F32)

    kt, kh, kw, _, _ = p.conv_kernel.shape
    padded = np.pad(tokens, ((kt // 2,) * 2, (kh // 2,) * 2, (kw // 2,) * 2, (0, 0)))
    d_kernel = np.zeros_like(p.conv_kernel)
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                window = padded[dt:dt + t, dh:dh + m, dw:dw + n, :]
                d_kernel[dt, dh, dw] = np.einsum(
                    "tmnc,tmno->co", window, d_conv, dtype=F32, casting="same_kind"
                )
    return ScoreNetGrads(d_kernel, d_w1, d_b1, d_w2, d_b2)


def compress(saliency: np.ndarray, non_saliency: np.ndarray,
             p: CompressorParams, h: int) -> np.ndarray:
    """Compress non-saliency frames to the 1/h grid by cross-attending to
    the saliency frames, plus a pooled residual of the inputs.

    Queries come from the projected non-saliency tokens, keys and values
    from the projected saliency tokens; all three are mean-pooled to the
    target grid before a single-head attention with 1/sqrt(C) scaling.
    """
    saliency = np.asarray(saliency, dtype=F32)
    non_saliency = np.asarray(non_saliency, dtype=F32)
    if saliency.ndim != 4 or non_saliency.ndim != 4:
        raise ShapeError("compress expects [frames, M, N, C] parts")
    if saliency.shape[0] < 1:
        raise ShapeError("compressor needs at least one saliency reference frame")
    if saliency.shape[1:] != non_saliency.shape[1:]:
        raise ShapeError(
            f"part grids differ: {saliency.shape[1:]} vs {non_saliency.shape[1:]}"
        )
    k, m, n, c = saliency.shape
    r = non_saliency.shape[0]
    ml, nl = m // h, n // h
    if r == 0:
        return np.zeros((0, ml, nl, c), F32)

    q = numerics.avgpool_downsample(numerics.linear(non_saliency, p.w_a), h)
    keys = numerics.avgpool_downsample(numerics.linear(saliency, p.w_b), h)
    vals = numerics.avgpool_downsample(numerics.linear(saliency, p.w_c), h)

    q = q.reshape(r, ml * nl, c)
    keys = keys.reshape(k * ml * nl, c)
    vals = vals.reshape(k * ml * nl, c)

    att = numerics.matmul(q, keys.T)                   # [R, g, K*g]
    att = att / F32(np.sqrt(c))
    att = numerics.softmax_lastdim(att)
    mixed = numerics.matmul(att, vals).reshape(r, ml, nl, c)
    return mixed + numerics.avgpool_downsample(non_saliency, h)


class DccmResult(NamedTuple):
    sequence: MultiResSequence
    scores: np.ndarray               # float32 [T]
    soft: SoftRankMatrix | None      # only in train mode


def dccm_forward(tokens: np.ndarray, params: DccmParams, k: int, h: int,
                 mode: str = "infer", perturb: PerturbConfig | None = None) -> DccmResult:
    """Score, rank, split and compress one token video.

    The token path is hard in both modes; train mode additionally returns
    the smoothed ranking matrix for loss terms.  At h == 1 the two parts
    already share a grid and the compressor is skipped entirely, which
    keeps K=T/h=1 configurations bit-comparable to an unsplit pipeline.
    """
    if mode not in ("infer", "train"):
        raise ValueError(f"mode must be 'infer' or 'train', got {mode!r}")
    if mode == "train" and perturb is None:
        raise ValueError("train mode needs a PerturbConfig")
    tokens = np.asarray(tokens, dtype=F32)
    if tokens.ndim != 4:
        raise ShapeError(f"tokens must be [T, M, N, C], got {tokens.shape}")

    scores = score_net_forward(tokens, params.score)
    perm = hard_rank(scores)
    sal, non, times = topk_split(tokens, perm, k)
    if h == 1:
        compressed = non
    else:
        compressed = compress(sal, non, params.compressor, h)
    seq = MultiResSequence(saliency=sal, non_saliency=compressed, times=times, h=h)
    soft = perturbed_rank(scores, perturb) if mode == "train" else None
    return DccmResult(seq, scores, soft)


# --- planted-saliency toy problem -------------------------------------

@dataclass(frozen=True)
class PlantedVideo:
    tokens: np.ndarray         # [T, M, N, C]
    salient_times: np.ndarray  # int64, sorted, the planted high-energy frames
    target_matrix: np.ndarray  # [T, T] permutation putting planted frames first


class TraceRow(NamedTuple):
    step: int
    loss: float
    accuracy: float


def make_planted_dataset(count: int, frames: int = 8, salient_count: int = 2,
                         grid: int = 2, channels: int = 8,
                         energy_ratio: float = 3.0, seed: int = 0) -> list[PlantedVideo]:
    """Random token videos where `salient_count` frames carry a fixed
    direction offset giving them `energy_ratio` times the background
    per-token energy.  The target permutation lists the planted frames in
    time order, then the background frames in time order."""
    if not (1 <= salient_count < frames):
        raise ValueError(f"salient_count must be in [1, {frames}), got {salient_count}")
    if energy_ratio <= 1:
        raise ValueError("energy_ratio must exceed 1")
    stream = RandomStream(seed)
    direction = stream.gaussian(channels)
    direction = direction / np.sqrt(np.sum(direction * direction))
    amplitude = F32(np.sqrt((energy_ratio - 1.0) * channels))

    videos = []
    for _ in range(count):
        tokens = stream.gaussian((frames, grid, grid, channels))
        salient = np.sort(stream.permutation(frames)[:salient_count]).astype(np.int64)
        tokens[salient] += amplitude * direction
        background = np.setdiff1d(np.arange(frames, dtype=np.int64), salient)
        order = np.concatenate([salient, background])
        target = np.zeros((frames, frames), F32)
        target[order, np.arange(frames)] = F32(1)
        videos.append(PlantedVideo(tokens, salient, target))
    return videos


def selection_accuracy(p: ScoreNetParams, videos: list[PlantedVideo], k: int) -> float:
    """Mean fraction of planted frames recovered by the hard top-k split."""
    hits = 0.0
    for v in videos:
        order = hard_rank(score_net_forward(v.tokens, p)).order
        hits += len(np.intersect1d(order[:k], v.salient_times)) / k
    return hits / len(videos)


def _video_config(cfg: PerturbConfig, vid: int) -> PerturbConfig:
    # one frozen draw per video, shared by the loss and its VJP and reused
    # across steps: full-batch descent then walks a fixed sampled objective,
    # which keeps the loss trace smooth instead of resampling jitter
    return replace(cfg, seed=cfg.seed + vid)


def toy_train_scorenet(train: list[PlantedVideo], holdout: list[PlantedVideo],
                       p: ScoreNetParams, k: int, steps: int, lr: float,
                       cfg: PerturbConfig) -> tuple[ScoreNetParams, list[TraceRow]]:
    """Full-batch gradient descent of the score-net against the planted
    permutations, through the smoothed ranking.

    The per-step loss is the mean over videos of -<target, smoothed
    ranking of the scores>.  Returns the final parameters and a trace with
    one row per step plus the initial row; accuracy is measured on the
    holdout split with the hard top-k."""
    if len(train) >= 100_000:
        raise ValueError("training set too large for the seed derivation")
    trace = []
    for step in range(steps + 1):
        loss_sum = 0.0
        grads_sum = None
        for vid, v in enumerate(train):
            scores = score_net_forward(v.tokens, p)
            loss_v, d_scores = perturbed_objective(
                scores, _video_config(cfg, vid), -v.target_matrix
            )
            loss_sum += loss_v
            g = score_net_backward(v.tokens, p, d_scores)
            if grads_sum is None:
                grads_sum = [g.conv_kernel, g.w1, g.b1, g.w2, g.b2]
            else:
                for acc, part in zip(grads_sum, (g.conv_kernel, g.w1, g.b1, g.w2, g.b2)):
                    acc += part
        scale = F32(1.0 / len(train))
        loss = loss_sum / len(train)
        trace.append(TraceRow(step, loss, selection_accuracy(p, holdout, k)))
        if step == steps:
            break
        rate = F32(lr)
        p = ScoreNetParams(
            conv_kernel=p.conv_kernel - rate * scale * grads_sum[0],
            w1=p.w1 - rate * scale * grads_sum[1],
            b1=p.b1 - rate * scale * grads_sum[2],
            w2=p.w2 - rate * scale * grads_sum[3],
            b2=p.b2 - rate * scale * grads_sum[4],
        )
    return p, trace
