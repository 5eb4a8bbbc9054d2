"""Dense-array differentiable primitives with hand-paired backward rules.

Every operation is a forward/backward pair: the forward computes the value,
the backward maps an output cotangent to exact input cotangents using values
cached from the forward.  There is no autodiff tape; callers wire the pairs
together explicitly.

Arrays are numpy ndarrays in C (row-major) order with (row, col, channel)
axis order for spatial maps.  One floating dtype is used per run: float64
("wide", required for gradient checking) or float32 ("narrow").
"""

import numpy as np

from .errors import ConfigError, DimensionError, InputTooSmallError, LabelError

WIDE = np.float64
NARROW = np.float32


def resolve_dtype(precision):
    """Map a precision name ("wide" | "narrow") to a numpy dtype."""
    if precision == "wide":
        return WIDE
    if precision == "narrow":
        return NARROW
    raise ConfigError(f"unknown precision {precision!r}, expected 'wide' or 'narrow'")


# --------------------------------------------------------------------------
# matmul
# --------------------------------------------------------------------------

def matmul(w, x):
    """Matrix-vector product: out[r] = sum_c w[r, c] * x[c]."""
    if w.ndim != 2 or x.ndim != 1 or w.shape[1] != x.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {w.shape} and {x.shape}")
    return w @ x


def matmul_backward(d_out, w, x):
    """Adjoints of matmul: dW = d_out outer x, dx = W^T d_out."""
    return np.outer(d_out, x), w.T @ d_out


# --------------------------------------------------------------------------
# pointwise nonlinearities
# --------------------------------------------------------------------------

def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_POINTWISE = {
    "sigmoid": sigmoid,
    "tanh": np.tanh,
    "relu": lambda x: np.maximum(x, 0.0),
}


def pointwise(kind, x):
    """Elementwise nonlinearity; returns the mapped array."""
    try:
        fn = _POINTWISE[kind]
    except KeyError:
        raise ConfigError(f"unknown pointwise kind {kind!r}") from None
    return fn(x)


def pointwise_backward(kind, d_out, y):
    """Backward of `pointwise` using the cached forward value y.

    sigmoid': y(1-y); tanh': 1-y^2; relu': 1 where y > 0.
    """
    if kind == "sigmoid":
        return d_out * (y * (1.0 - y))
    if kind == "tanh":
        return d_out * (1.0 - y * y)
    if kind == "relu":
        return d_out * (y > 0)
    raise ConfigError(f"unknown pointwise kind {kind!r}")


# --------------------------------------------------------------------------
# hadamard
# --------------------------------------------------------------------------

def hadamard(a, b):
    """Elementwise product of two same-shaped arrays."""
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    return a * b


def hadamard_backward(d_out, a, b):
    """Adjoints: da = d_out * b, db = d_out * a."""
    return d_out * b, d_out * a


# --------------------------------------------------------------------------
# 2-D convolution (cross-correlation), stride 1, zero same-padding
# --------------------------------------------------------------------------

def conv2d(image, kernels):
    """Cross-correlate a map with a kernel bank.

    image: [H, W, Cin]; kernels: [Cout, k, k, Cin] with k in {1, 3}.
    Output [H, W, Cout]; borders are zero-padded by (k-1)/2.
    """
    if kernels.ndim != 4 or kernels.shape[1] != kernels.shape[2]:
        raise DimensionError(f"conv2d: kernel bank must be [Cout, k, k, Cin], got {kernels.shape}")
    k = kernels.shape[1]
    if k not in (1, 3):
        raise ConfigError(f"conv2d: unsupported kernel size {k}, expected 1 or 3")
    if image.ndim != 3 or image.shape[2] != kernels.shape[3]:
        raise DimensionError(
            f"conv2d: image {image.shape} incompatible with kernels {kernels.shape}")
    h, w = image.shape[:2]
    pad = (k - 1) // 2
    padded = np.pad(image, ((pad, pad), (pad, pad), (0, 0)))
    out = np.zeros((h, w, kernels.shape[0]), dtype=image.dtype)
    for a in range(k):
        for b in range(k):
            out += padded[a:a + h, b:b + w, :] @ kernels[:, a, b, :].T
    return out


def conv2d_backward(d_out, image, kernels):
    """Exact adjoints of conv2d: returns (d_image, d_kernels)."""
    k = kernels.shape[1]
    h, w = image.shape[:2]
    pad = (k - 1) // 2
    padded = np.pad(image, ((pad, pad), (pad, pad), (0, 0)))
    d_padded = np.zeros_like(padded)
    d_kernels = np.zeros_like(kernels)
    for a in range(k):
        for b in range(k):
            d_kernels[:, a, b, :] = np.einsum("hwo,hwc->oc", d_out, padded[a:a + h, b:b + w, :])
            d_padded[a:a + h, b:b + w, :] += d_out @ kernels[:, a, b, :]
    if pad:
        d_image = d_padded[pad:-pad, pad:-pad, :]
    else:
        d_image = d_padded
    return np.ascontiguousarray(d_image), d_kernels


# --------------------------------------------------------------------------
# nine-grid max pooling
# --------------------------------------------------------------------------

def grid_bounds(extent):
    """Half-open [start, stop) bounds of the three grid bands along one axis."""
    return [(g * extent // 3, (g + 1) * extent // 3) for g in range(3)]


def grid_max_pool(feature_map):
    """Max-pool a [H, W, d] map over a fixed 3x3 partition of the image.

    Grid g along an axis of extent S covers [floor(g*S/3), floor((g+1)*S/3));
    ties break to the smallest row, then smallest column, so the backward
    routing is deterministic.  Returns (pooled [3, 3, d], argmax [3, 3, d, 2]).
    """
    if feature_map.ndim != 3:
        raise DimensionError(f"grid_max_pool: expected [H, W, d], got {feature_map.shape}")
    h, w, d = feature_map.shape
    if h < 3 or w < 3:
        raise InputTooSmallError(
            f"grid_max_pool: map {h}x{w} too small, nine non-empty grids need at least 3x3")
    pooled = np.empty((3, 3, d), dtype=feature_map.dtype)
    argmax = np.empty((3, 3, d, 2), dtype=np.int64)
    channels = np.arange(d)
    for gr, (r0, r1) in enumerate(grid_bounds(h)):
        for gc, (c0, c1) in enumerate(grid_bounds(w)):
            block = feature_map[r0:r1, c0:c1, :].reshape(-1, d)
            # argmax over C-ordered cells = first maximum = smallest row, then col
            flat = np.argmax(block, axis=0)
            pooled[gr, gc] = block[flat, channels]
            rows, cols = np.divmod(flat, c1 - c0)
            argmax[gr, gc, :, 0] = r0 + rows
            argmax[gr, gc, :, 1] = c0 + cols
    return pooled, argmax


def grid_max_pool_backward(d_pooled, argmax, map_shape):
    """Scatter each pooled cotangent onto its recorded argmax cell."""
    d_map = np.zeros(map_shape, dtype=d_pooled.dtype)
    d = map_shape[2]
    chan = np.tile(np.arange(d), 9)
    np.add.at(d_map, (argmax[..., 0].ravel(), argmax[..., 1].ravel(), chan), d_pooled.ravel())
    return d_map


# --------------------------------------------------------------------------
# softmax cross-entropy
# --------------------------------------------------------------------------

def softmax_xent(logits, label):
    """Loss and logit gradient for one C-way pixel.

    loss = -log softmax(logits)[label], computed with max-subtraction;
    d_logits = softmax(logits) - onehot(label).
    """
    c = logits.shape[0]
    if not 0 <= label < c:
        raise LabelError(f"label {label} out of range for {c} classes")
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    total = exp.sum()
    loss = float(np.log(total) - shifted[label])
    d_logits = exp / total
    d_logits[label] -= 1.0
    return loss, d_logits


def softmax_xent_map(logits, labels):
    """Vectorized per-pixel cross-entropy over a [H, W, C] logit map.

    Returns (mean loss over pixels, gradient of that mean w.r.t. logits).
    """
    h, w, c = logits.shape
    if labels.shape != (h, w):
        raise DimensionError(f"labels {labels.shape} do not match logits {logits.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise LabelError(f"labels outside [0, {c})")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=-1)
    picked = np.take_along_axis(shifted, labels[..., None], axis=-1)[..., 0]
    losses = np.log(total) - picked
    d_logits = exp / total[..., None]
    rows, cols = np.indices((h, w))
    d_logits[rows, cols, labels] -= 1.0
    d_logits /= h * w
    return float(losses.mean()), d_logits
