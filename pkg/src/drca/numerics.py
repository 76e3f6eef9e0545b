"""Dense float32 numeric kernels shared by every other module.

All public operations take and return float32 arrays and are pure
functions of their inputs; the only stateful object is RandomStream,
which advances explicitly.  Video tokens follow the layout convention
[..., M, N, C] with the channel axis last.

Every kernel that performs arithmetic reports its cost to any active
FlopCounter using one fixed convention (a matmul of shape m x k x n
costs 2*m*k*n flops, softmax 5 per element, normalisation 4 per
element, pooling 1 per input element, elementwise nonlinearities 1 per
element).  Residual additions, scalar scalings, position-embedding adds
and data movement are never counted, on either the instrumented or the
analytic side.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

F32 = np.float32

MACS_TO_FLOPS = 2
SOFTMAX_FLOPS_PER_ELEMENT = 5
NORM_FLOPS_PER_ELEMENT = 4
POOL_FLOPS_PER_ELEMENT = 1
NONLINEARITY_FLOPS_PER_ELEMENT = 1

# self-test fault-injection hook: a nonzero value is added to every softmax
# output, deliberately breaking row normalisation so the harness can prove
# it notices.  Never set outside `drca selftest --inject-softmax-fault`.
_SOFTMAX_FAULT = 0.0


class ShapeError(ValueError):
    """Operand extents violate an operation's contract."""


_ACTIVE_COUNTERS: list["FlopCounter"] = []


class FlopCounter:
    """Accumulates the flop cost of every kernel executed inside its
    ``with`` block.

    >>> with FlopCounter() as fc:
    ...     matmul(a, b)
    >>> fc.total
    """

    def __init__(self) -> None:
        self.total = 0

    def __enter__(self) -> "FlopCounter":
        _ACTIVE_COUNTERS.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _ACTIVE_COUNTERS.remove(self)
        return False


def _count(flops: int) -> None:
    if _ACTIVE_COUNTERS:
        for counter in _ACTIVE_COUNTERS:
            counter.total += int(flops)


def as_f32(x) -> np.ndarray:
    """Coerce to a C-contiguous float32 array."""
    return np.ascontiguousarray(x, dtype=F32)


class RandomStream:
    """Deterministic Gaussian source (PCG64); identical seeds give
    identical draws on every platform for a fixed numpy version."""

    algorithm = "pcg64"

    def __init__(self, seed: int) -> None:
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def gaussian(self, shape) -> np.ndarray:
        """Standard-normal float32 samples; draws are not flop-counted."""
        return self._gen.standard_normal(size=shape).astype(F32)

    def gaussian64(self, shape) -> np.ndarray:
        """Same stream at float64, for the ranking path (see ranking module)."""
        return self._gen.standard_normal(size=shape)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with 32-bit accumulation.

    2-D operands give the ordinary m x k @ k x n product; additional
    leading axes broadcast as a stack of matrices.
    """
    a = np.asarray(a, dtype=F32)
    b = np.asarray(b, dtype=F32)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
    out = np.matmul(a, b)
    batch = 1
    if out.ndim > 2:
        batch = int(np.prod(out.shape[:-2], dtype=np.int64))
    _count(MACS_TO_FLOPS * batch * out.shape[-2] * a.shape[-1] * out.shape[-1])
    return out


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Affine map along the channel (last) axis: x @ weight + bias."""
    x = np.asarray(x, dtype=F32)
    weight = np.asarray(weight, dtype=F32)
    if weight.ndim != 2:
        raise ShapeError(f"linear weight must be 2-D, got {weight.shape}")
    if x.ndim < 1 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear input channels {x.shape} do not match weight {weight.shape}")
    c_in, c_out = weight.shape
    tokens = x.size // c_in if c_in else 0
    out = np.matmul(x.reshape(-1, c_in), weight)
    flops = MACS_TO_FLOPS * tokens * c_in * c_out
    if bias is not None:
        bias = np.asarray(bias, dtype=F32)
        if bias.shape != (c_out,):
            raise ShapeError(f"linear bias shape {bias.shape} does not match out width {c_out}")
        out = out + bias
        flops += tokens * c_out
    _count(flops)
    return out.reshape(x.shape[:-1] + (c_out,))


def softmax_lastdim(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, stabilised by max subtraction."""
    x = np.asarray(x, dtype=F32)
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ShapeError(f"softmax needs a non-empty last axis, got {x.shape}")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True, dtype=F32)
    if _SOFTMAX_FAULT:
        out = out + F32(_SOFTMAX_FAULT)
    _count(SOFTMAX_FLOPS_PER_ELEMENT * x.size)
    return out


def layer_norm(x: np.ndarray, gain: np.ndarray, shift: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Per-token normalisation over the channel axis (population variance)."""
    x = np.asarray(x, dtype=F32)
    gain = np.asarray(gain, dtype=F32)
    shift = np.asarray(shift, dtype=F32)
    if x.ndim < 1:
        raise ShapeError("layer_norm needs at least one axis")
    c = x.shape[-1]
    if gain.shape != (c,) or shift.shape != (c,):
        raise ShapeError(f"layer_norm gain/shift must have shape ({c},)")
    if eps <= 0:
        raise ShapeError("layer_norm eps must be positive")
    mu = x.mean(axis=-1, keepdims=True, dtype=F32)
    centred = x - mu
    var = np.mean(centred * centred, axis=-1, keepdims=True, dtype=F32)
    out = centred / np.sqrt(var + F32(eps)) * gain + shift
    _count(NORM_FLOPS_PER_ELEMENT * x.size)
    return out


def avgpool_downsample(t: np.ndarray, h: int) -> np.ndarray:
    """Mean over non-overlapping h x h spatial blocks (axes -3, -2)."""
    t = np.asarray(t, dtype=F32)
    if t.ndim < 3:
        raise ShapeError(f"avgpool needs [..., M, N, C], got {t.shape}")
    h = int(h)
    if h < 1:
        raise ShapeError(f"pool factor must be >= 1, got {h}")
    m, n, c = t.shape[-3:]
    if m % h or n % h:
        raise ShapeError(f"pool factor {h} does not divide grid {m}x{n}")
    lead = t.shape[:-3]
    blocks = t.reshape(*lead, m // h, h, n // h, h, c)
    out = blocks.mean(axis=(-4, -2), dtype=F32)
    _count(POOL_FLOPS_PER_ELEMENT * t.size)
    return out


def nearest_upsample(t: np.ndarray, h: int) -> np.ndarray:
    """Replicate each grid cell into an h x h block; pure copy, zero flops."""
    t = np.asarray(t, dtype=F32)
    if t.ndim < 3:
        raise ShapeError(f"upsample needs [..., M, N, C], got {t.shape}")
    h = int(h)
    if h < 1:
        raise ShapeError(f"upsample factor must be >= 1, got {h}")
    if h == 1:
        return t.copy()
    return t.repeat(h, axis=-3).repeat(h, axis=-2)


def mean_pool(x: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    """Mean over the given axes, counted as pooling (1 flop per input element)."""
    x = np.asarray(x, dtype=F32)
    if not axes:
        raise ShapeError("mean_pool needs at least one axis")
    out = x.mean(axis=tuple(axes), dtype=F32)
    _count(POOL_FLOPS_PER_ELEMENT * x.size)
    return out


def conv3d(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Same-padded cross-correlation over (time, height, width).

    x: [T, M, N, C_in], kernel: [kt, kh, kw, C_in, C_out] with odd
    spatial/temporal extents.  Returns [T, M, N, C_out].
    """
    x = np.asarray(x, dtype=F32)
    kernel = np.asarray(kernel, dtype=F32)
    if x.ndim != 4:
        raise ShapeError(f"conv3d input must be [T, M, N, C], got {x.shape}")
    if kernel.ndim != 5:
        raise ShapeError(f"conv3d kernel must be [kt, kh, kw, Cin, Cout], got {kernel.shape}")
    kt, kh, kw, c_in, c_out = kernel.shape
    if kt % 2 == 0 or kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv3d kernel extents must be odd, got {(kt, kh, kw)}")
    if x.shape[-1] != c_in:
        raise ShapeError(f"conv3d channels {x.shape[-1]} do not match kernel {c_in}")
    t, m, n, _ = x.shape
    xp = np.pad(x, ((kt // 2,) * 2, (kh // 2,) * 2, (kw // 2,) * 2, (0, 0)))
    out = np.zeros((t, m, n, c_out), dtype=F32)
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                window = xp[dt:dt + t, dh:dh + m, dw:dw + n, :]
                out += np.matmul(window, kernel[dt, dh, dw])
    _count(MACS_TO_FLOPS * out.size * kt * kh * kw * c_in)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=F32)
    out = np.maximum(x, F32(0))
    _count(NONLINEARITY_FLOPS_PER_ELEMENT * x.size)
    return out


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) GELU."""
    x = np.asarray(x, dtype=F32)
    out = F32(0.5) * x * (F32(1) + erf(x * F32(1 / np.sqrt(2))))
    _count(NONLINEARITY_FLOPS_PER_ELEMENT * x.size)
    return out.astype(F32, copy=False)


def l2_normalize(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Scale the last axis to unit Euclidean norm."""
    x = np.asarray(x, dtype=F32)
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ShapeError(f"l2_normalize needs a non-empty last axis, got {x.shape}")
    norm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True, dtype=F32))
    out = x / np.maximum(norm, F32(eps))
    _count(NORM_FLOPS_PER_ELEMENT * x.size)
    return out
