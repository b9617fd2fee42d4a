"""Dense layer kernels, their adjoints, and the ADAM optimizer.

Tensors are plain ``numpy.ndarray`` objects with dtype float32. Reductions
(convolution and dense products, the softmax normalizer) accumulate in
float64 and round back to float32 at the end.

Every forward function is pure. Backward functions take whatever the forward
pass saved (the input, the pooling argmax, ...) and return gradients; nothing
here holds hidden state except :class:`AdamState`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

FLOAT = np.float32
ACCUM = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=FLOAT)


# --------------------------------------------------------------------------
# convolution (stride 1, zero padding, cross-correlation)
# --------------------------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, pad: int) -> np.ndarray:
    """Column matrix of shape (C*kH*kW, N*H'*W') in float64.

    Filling one (di, dj) plane at a time keeps every write contiguous, which
    is several times faster than reshaping a strided window view.
    """
    n, c, h, w = x.shape
    ho, wo = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    xp = np.zeros((c, n, h + 2 * pad, w + 2 * pad), dtype=ACCUM)
    xp[:, :, pad:pad + h, pad:pad + w] = x.transpose(1, 0, 2, 3)
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=ACCUM)
    for di in range(kh):
        for dj in range(kw):
            cols[:, di, dj] = xp[:, :, di:di + ho, dj:dj + wo]
    return cols.reshape(c * kh * kw, n * ho * wo)


def _col2im(dcols: np.ndarray, x_shape, kh: int, kw: int, pad: int) -> np.ndarray:
    n, c, h, w = x_shape
    ho, wo = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    dcols = dcols.reshape(c, kh, kw, n, ho, wo)
    dxp = np.zeros((c, n, h + 2 * pad, w + 2 * pad), dtype=ACCUM)
    for di in range(kh):
        for dj in range(kw):
            dxp[:, :, di:di + ho, dj:dj + wo] += dcols[:, di, dj]
    return np.ascontiguousarray(dxp[:, :, pad:pad + h, pad:pad + w].transpose(1, 0, 2, 3), dtype=FLOAT)


def _check_conv(x_shape, k_shape, pad: int) -> tuple[int, int]:
    if len(x_shape) != 4:
        raise ShapeError(f"conv2d input must be N,C,H,W; got shape {tuple(x_shape)}")
    if len(k_shape) != 4:
        raise ShapeError(f"conv2d kernels must be Cout,Cin,kH,kW; got shape {tuple(k_shape)}")
    if pad < 0:
        raise ShapeError(f"padding must be non-negative, got {pad}")
    _, c, h, w = x_shape
    _, cin, kh, kw = k_shape
    if c != cin:
        raise ShapeError(
            f"input has {c} channels but kernels expect {cin} "
            f"(input {tuple(x_shape)}, kernels {tuple(k_shape)})"
        )
    ho, wo = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    return ho, wo


def conv2d_forward_cols(x, kernels, bias=None, pad: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`conv2d_forward` but also returns the column matrix for reuse in backward."""
    x = np.asarray(x, dtype=FLOAT)
    kernels = np.asarray(kernels, dtype=FLOAT)
    ho, wo = _check_conv(x.shape, kernels.shape, pad)
    n = x.shape[0]
    cout, _, kh, kw = kernels.shape
    cols = _im2col(x, kh, kw, pad)
    out = kernels.reshape(cout, -1).astype(ACCUM) @ cols
    if bias is not None:
        bias = np.asarray(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"bias shape {bias.shape} does not match {cout} output channels")
        out += bias.astype(ACCUM)[:, None]
    out = out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out, dtype=FLOAT), cols


def conv2d_forward(x, kernels, bias=None, pad: int = 0) -> np.ndarray:
    """Stride-1 cross-correlation of ``x`` (N,C,H,W) with ``kernels`` (Cout,C,kH,kW).

    Output is (N, Cout, H+2*pad-kH+1, W+2*pad-kW+1). No kernel flip.
    Single-channel to single-channel convolutions (the front filters) go
    through ``scipy.ndimage.correlate``, which avoids building a column
    matrix per image.
    """
    x = np.asarray(x, dtype=FLOAT)
    kernels = np.asarray(kernels, dtype=FLOAT)
    ho, wo = _check_conv(x.shape, kernels.shape, pad)
    cout, cin, kh, kw = kernels.shape
    if cout != 1 or cin != 1:
        return conv2d_forward_cols(x, kernels, bias, pad)[0]
    if bias is not None and np.shape(bias) != (1,):
        raise ShapeError(f"bias shape {np.shape(bias)} does not match 1 output channel")
    xp = np.pad(x[:, 0].astype(ACCUM), ((0, 0), (pad, pad), (pad, pad)))
    full = ndimage.correlate(xp, kernels[0, 0].astype(ACCUM)[None], mode="constant", cval=0.0)
    # ndimage centres the kernel; shift back to the top-left anchored window
    r0, c0 = kh // 2, kw // 2
    out = full[:, r0:r0 + ho, c0:c0 + wo]
    if bias is not None:
        out = out + float(np.asarray(bias)[0])
    return np.ascontiguousarray(out[:, None], dtype=FLOAT)


def conv2d_backward(grad_out, saved_input, kernels, pad: int = 0, need_input_grad: bool = True, cols=None):
    """Adjoint of :func:`conv2d_forward`.

    Returns ``(grad_input, grad_kernels, grad_bias)``; ``grad_input`` is None
    when ``need_input_grad`` is false. ``cols`` may be the column matrix from
    :func:`conv2d_forward_cols` to skip rebuilding it.
    """
    x_shape = np.shape(saved_input)
    kernels = np.asarray(kernels, dtype=FLOAT)
    g = np.asarray(grad_out, dtype=FLOAT)
    ho, wo = _check_conv(x_shape, kernels.shape, pad)
    n, c, h, w = x_shape
    cout, _, kh, kw = kernels.shape
    if g.shape != (n, cout, ho, wo):
        raise ShapeError(f"upstream gradient shape {g.shape} != forward output shape {(n, cout, ho, wo)}")

    if cols is None and cout == c == 1:
        return _conv1_backward(g, saved_input, kernels, pad, need_input_grad)

    g2 = g.transpose(1, 0, 2, 3).reshape(cout, -1).astype(ACCUM)
    if cols is None:
        cols = _im2col(np.asarray(saved_input, dtype=FLOAT), kh, kw, pad)
    grad_k = (g2 @ cols.T).reshape(kernels.shape).astype(FLOAT)
    grad_b = g2.sum(axis=1).astype(FLOAT)

    grad_x = None
    if need_input_grad:
        dcols = kernels.reshape(cout, -1).T.astype(ACCUM) @ g2
        grad_x = _col2im(dcols, x_shape, kh, kw, pad)
    return grad_x, grad_k, grad_b


def _conv1_backward(g, saved_input, kernels, pad, need_input_grad):
    # one input and one output channel: a loop over the kh*kw kernel offsets
    # is cheaper than building and multiplying a column matrix
    _, _, kh, kw = kernels.shape
    ho, wo = g.shape[2:]
    g0 = g[:, 0].astype(ACCUM)
    xp = np.pad(np.asarray(saved_input, dtype=FLOAT)[:, 0].astype(ACCUM), ((0, 0), (pad, pad), (pad, pad)))
    k = kernels[0, 0].astype(ACCUM)
    grad_k = np.empty((kh, kw), dtype=ACCUM)
    grad_xp = np.zeros_like(xp) if need_input_grad else None
    for i in range(kh):
        for j in range(kw):
            grad_k[i, j] = np.einsum("npq,npq->", xp[:, i:i + ho, j:j + wo], g0)
            if need_input_grad:
                grad_xp[:, i:i + ho, j:j + wo] += k[i, j] * g0
    grad_x = None
    if need_input_grad:
        h, w = xp.shape[1] - 2 * pad, xp.shape[2] - 2 * pad
        grad_x = grad_xp[:, None, pad:pad + h, pad:pad + w].astype(FLOAT)
    return grad_x, grad_k.reshape(kernels.shape).astype(FLOAT), np.array([g0.sum()], dtype=FLOAT)


# --------------------------------------------------------------------------
# pooling
# --------------------------------------------------------------------------

def maxpool2x2_forward(x) -> tuple[np.ndarray, np.ndarray]:
    """2x2/stride-2 max pooling.

    The argmax is the index 0..3 inside each window in row-major order; ties
    go to the first maximal entry.
    """
    x = np.asarray(x, dtype=FLOAT)
    if x.ndim != 4:
        raise ShapeError(f"maxpool input must be N,C,H,W; got {x.shape}")
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    out = x[:, :, 0::2, 0::2].copy()
    idx = np.zeros(out.shape, dtype=np.uint8)
    for k, (di, dj) in enumerate(((0, 1), (1, 0), (1, 1)), start=1):
        cand = x[:, :, di::2, dj::2]
        better = cand > out  # strict: earlier index wins ties
        out[better] = cand[better]
        idx[better] = k
    return out, idx


def maxpool2x2_backward(grad_out, argmax) -> np.ndarray:
    g = np.asarray(grad_out, dtype=FLOAT)
    argmax = np.asarray(argmax)
    if g.shape != argmax.shape:
        raise ShapeError(f"gradient shape {g.shape} != argmax shape {argmax.shape}")
    n, c, ho, wo = g.shape
    grad_x = np.zeros((n, c, 2 * ho, 2 * wo), dtype=FLOAT)
    for k in range(4):
        grad_x[:, :, k // 2::2, k % 2::2] = np.where(argmax == k, g, FLOAT(0))
    return grad_x


# --------------------------------------------------------------------------
# dense, relu, loss
# --------------------------------------------------------------------------

def _check_dense(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> None:
    if x.ndim != 2 or weights.ndim != 2:
        raise ShapeError(f"dense expects 2-d input and weights, got {x.shape} and {weights.shape}")
    if x.shape[1] != weights.shape[1]:
        raise ShapeError(f"input features {x.shape[1]} != weight columns {weights.shape[1]}")
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} != ({weights.shape[0]},)")


def dense_forward(x, weights, bias) -> np.ndarray:
    x = np.asarray(x, dtype=FLOAT)
    weights = np.asarray(weights, dtype=FLOAT)
    bias = np.asarray(bias, dtype=FLOAT)
    _check_dense(x, weights, bias)
    out = x.astype(ACCUM) @ weights.T.astype(ACCUM) + bias.astype(ACCUM)
    return out.astype(FLOAT)


def dense_backward(grad_out, saved_input, weights, need_input_grad: bool = True):
    """Returns ``(grad_input, grad_weights, grad_bias)``."""
    x = np.asarray(saved_input, dtype=FLOAT)
    weights = np.asarray(weights, dtype=FLOAT)
    g = np.asarray(grad_out, dtype=FLOAT)
    if g.shape != (x.shape[0], weights.shape[0]):
        raise ShapeError(f"upstream gradient shape {g.shape} != {(x.shape[0], weights.shape[0])}")
    g64 = g.astype(ACCUM)
    grad_w = (g64.T @ x.astype(ACCUM)).astype(FLOAT)
    grad_b = g64.sum(axis=0).astype(FLOAT)
    grad_x = (g64 @ weights.astype(ACCUM)).astype(FLOAT) if need_input_grad else None
    return grad_x, grad_w, grad_b


def relu_forward(x) -> np.ndarray:
    x = np.asarray(x, dtype=FLOAT)
    return np.maximum(x, FLOAT(0))


def relu_backward(grad_out, saved_input) -> np.ndarray:
    # subgradient at exactly 0 is 0
    g = np.asarray(grad_out, dtype=FLOAT)
    return np.where(np.asarray(saved_input) > 0, g, FLOAT(0))


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    z = np.asarray(logits, dtype=ACCUM)
    if z.ndim != 2:
        raise ShapeError(f"logits must be N,K; got {z.shape}")
    n, k = z.shape
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != n:
        raise ShapeError(f"{y.shape[0]} labels for {n} rows of logits")
    if n and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}); got range [{y.min()}, {y.max()}]")
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(lse - z[rows, y]))
    p = np.exp(z - lse[:, None])
    p[rows, y] -= 1.0
    return loss, (p / n).astype(FLOAT)


# --------------------------------------------------------------------------
# parameters and ADAM
# --------------------------------------------------------------------------

@dataclass
class Parameter:
    value: np.ndarray
    trainable: bool = True
    name: str = ""
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = as_tensor(self.value)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad.fill(0)

    @property
    def size(self) -> int:
        return int(self.value.size)


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def adam_step(params, state: AdamState) -> None:
    """One bias-corrected ADAM update, in place.

    Moments are keyed by position in ``params``, so pass the same list in the
    same order every step. Frozen parameters are skipped entirely. All
    gradients are zeroed afterwards.
    """
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for i, p in enumerate(params):
        if p.grad.shape != p.value.shape:
            raise ShapeError(f"gradient shape {p.grad.shape} != value shape {p.value.shape} for {p.name!r}")
        if not p.trainable:
            p.zero_grad()
            continue
        g = p.grad.astype(ACCUM)
        m = state.first_moment.get(i)
        v = state.second_moment.get(i)
        if m is None:
            m = np.zeros_like(p.value)
            v = np.zeros_like(p.value)
        elif m.shape != p.value.shape or v.shape != p.value.shape:
            raise ShapeError(f"moment shape {m.shape} != parameter shape {p.value.shape}")
        m = b1 * m.astype(ACCUM) + (1.0 - b1) * g
        v = b2 * v.astype(ACCUM) + (1.0 - b2) * (g * g)
        state.first_moment[i] = m.astype(FLOAT)
        state.second_moment[i] = v.astype(FLOAT)
        update = state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        p.value[...] = (p.value.astype(ACCUM) - update).astype(FLOAT)
        p.zero_grad()
