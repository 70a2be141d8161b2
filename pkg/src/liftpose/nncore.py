"""Minimal reverse-mode numeric core in float64.

Layers cache what their backward pass needs during ``forward`` and return the
input gradient from ``backward`` while accumulating parameter gradients into
``Param.grad``. Activations for temporal layers are laid out (batch,
channels, time).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NumericalError, ShapeError

BN_EPS = 1e-5
MPJPE_ZERO = 1e-12


def derive_seed(*keys):
    """Stable u64 seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


class Param:
    __slots__ = ("name", "value", "grad", "adam_m", "adam_v", "step_count")

    def __init__(self, name, value):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.step_count = 0

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape})"


def kaiming_init(shape, fan_in, seed):
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)


# --- functional ops ----------------------------------------------------------


def linear_forward(x, W, b):
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {W.shape} / bias {b.shape}")
    return x @ W + b


def linear_backward(x, W, dy):
    return dy @ W.T, x.T @ dy, dy.sum(axis=0)


def conv1d_out_len(t, kernel, stride, dilation):
    return (t - (kernel - 1) * dilation - 1) // stride + 1


def _conv_check(x, W, b, stride, dilation):
    if x.ndim != 3 or W.ndim != 3 or x.shape[1] != W.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with weight {W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise ShapeError(f"conv1d: bias {b.shape} does not match weight {W.shape}")
    if stride < 1 or dilation < 1:
        raise ShapeError(f"conv1d: stride and dilation must be >= 1, got {stride}, {dilation}")
    kernel = W.shape[2]
    need = (kernel - 1) * dilation + 1
    if x.shape[2] < need:
        raise ShapeError(f"conv1d: input length {x.shape[2]} shorter than receptive footprint {need}")
    return conv1d_out_len(x.shape[2], kernel, stride, dilation)


def _conv_cols(x, W, stride, dilation, t_out):
    n = x.shape[0]
    cols = kernels.im2col_1d(x, W.shape[2], stride, dilation, t_out)
    return cols.reshape(n * t_out, -1)


def conv1d_forward(x, W, b, stride=1, dilation=1):
    """Valid cross-correlation: out[o, t] = sum_{c,k} W[o,c,k] x[c, t*stride + k*dilation] + b[o]."""
    t_out = _conv_check(x, W, b, stride, dilation)
    cols = _conv_cols(x, W, stride, dilation, t_out)
    y = cols @ W.reshape(W.shape[0], -1).T
    if b is not None:
        y += b
    return np.ascontiguousarray(y.reshape(x.shape[0], t_out, W.shape[0]).transpose(0, 2, 1))


def conv1d_backward(x, W, dy, stride=1, dilation=1, cols=None):
    n, o, t_out = dy.shape
    if cols is None:
        cols = _conv_cols(x, W, stride, dilation, t_out)
    dyr = dy.transpose(0, 2, 1).reshape(n * t_out, o)
    w2 = W.reshape(o, -1)
    dW = (dyr.T @ cols).reshape(W.shape)
    db = dyr.sum(axis=0)
    dcols = (dyr @ w2).reshape(n, t_out, W.shape[1], W.shape[2])
    dx = kernels.col2im_1d(dcols, x.shape[2], stride, dilation)
    return dx, dW, db


def mpjpe(pred, target):
    """Mean over samples and keypoints of the per-joint Euclidean error.

    Arrays are (N, K, D); (N, K) is read as D = 1.
    """
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mpjpe: prediction {pred.shape} vs target {target.shape}")
    if pred.ndim == 2:
        return float(np.mean(np.abs(pred - target)))
    return float(np.mean(np.linalg.norm(pred - target, axis=-1)))


def mpjpe_backward(pred, target):
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mpjpe: prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    count = pred.shape[0] * pred.shape[1]
    if pred.ndim == 2:
        g = np.sign(diff)
        g[np.abs(diff) < MPJPE_ZERO] = 0.0
        return g / count
    norm = np.linalg.norm(diff, axis=-1, keepdims=True)
    safe = np.where(norm < MPJPE_ZERO, 1.0, norm)
    return np.where(norm < MPJPE_ZERO, 0.0, diff / safe) / count


def relu(x):
    return np.maximum(x, 0.0)


def dropout_mask(shape, p, seed, call_index):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(call_index)]))
    return (rng.random(shape) >= p) / (1.0 - p)


def dropout(x, p, seed, call_index=0, training=True):
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return x
    return x * dropout_mask(x.shape, p, seed, call_index)


# --- layers ------------------------------------------------------------------


class Layer:
    training = True

    def params(self):
        return []

    def state(self):
        """Non-trainable tensors to persist, as (suffix, array) pairs."""
        return []

    def train(self, mode=True):
        self.training = mode


class Linear(Layer):
    def __init__(self, name, n_in, n_out, seed):
        self.W = Param(f"{name}.W", kaiming_init((n_in, n_out), n_in, seed))
        self.b = Param(f"{name}.b", np.zeros(n_out))
        self._x = None

    def params(self):
        return [self.W, self.b]

    def forward(self, x):
        self._x = x
        return linear_forward(x, self.W.value, self.b.value)

    def backward(self, dy):
        dx, dW, db = linear_backward(self._x, self.W.value, dy)
        self.W.grad += dW
        self.b.grad += db
        return dx


class Conv1d(Layer):
    def __init__(self, name, c_in, c_out, kernel, seed, stride=1):
        self.W = Param(f"{name}.W", kaiming_init((c_out, c_in, kernel), c_in * kernel, seed))
        self.b = Param(f"{name}.b", np.zeros(c_out))
        self.stride = stride
        self._x = None
        self._cols = None

    @property
    def kernel(self):
        return self.W.value.shape[2]

    def params(self):
        return [self.W, self.b]

    def forward(self, x, dilation=1, stride=None):
        stride = self.stride if stride is None else stride
        W = self.W.value
        t_out = _conv_check(x, W, self.b.value, stride, dilation)
        cols = _conv_cols(x, W, stride, dilation, t_out)
        y = cols @ W.reshape(W.shape[0], -1).T + self.b.value
        self._x, self._cols, self._cfg = x, cols, (stride, dilation)
        return np.ascontiguousarray(y.reshape(x.shape[0], t_out, W.shape[0]).transpose(0, 2, 1))

    def backward(self, dy):
        stride, dilation = self._cfg
        dx, dW, db = conv1d_backward(self._x, self.W.value, dy, stride, dilation, cols=self._cols)
        self.W.grad += dW
        self.b.grad += db
        return dx


class BatchNorm(Layer):
    """Per-channel batch normalization over (N,) or (N, T) positions."""

    def __init__(self, name, channels, momentum=0.1, eps=BN_EPS):
        self.gamma = Param(f"{name}.gamma", np.ones(channels))
        self.beta = Param(f"{name}.beta", np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps
        self.name = name
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def state(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def _shape(self, x):
        if x.ndim == 2:
            return (0,), (1, -1)
        if x.ndim == 3:
            return (0, 2), (1, -1, 1)
        raise ShapeError(f"batchnorm expects 2D or 3D input, got {x.shape}")

    def update_running(self, mean, var, momentum=None):
        m = self.momentum if momentum is None else momentum
        self.running_mean[...] = (1.0 - m) * self.running_mean + m * mean
        self.running_var[...] = (1.0 - m) * self.running_var + m * var

    def forward(self, x):
        axes, bshape = self._shape(x)
        g = self.gamma.value.reshape(bshape)
        b = self.beta.value.reshape(bshape)
        if not self.training:
            inv = (1.0 / np.sqrt(self.running_var + self.eps)).reshape(bshape)
            xhat = (x - self.running_mean.reshape(bshape)) * inv
            self._cache = ("eval", xhat, inv, axes, None)
            return xhat * g + b
        count = x.size // x.shape[1]
        if count < 2:
            raise ShapeError(f"batchnorm in train mode needs >= 2 values per channel, got {count}")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bshape)) * inv.reshape(bshape)
        self.update_running(mean, var)
        self._cache = ("train", xhat, inv.reshape(bshape), axes, count)
        return xhat * g + b

    def backward(self, dy):
        mode, xhat, inv, axes, count = self._cache
        bshape = inv.shape
        self.gamma.grad += (dy * xhat).sum(axis=axes)
        self.beta.grad += dy.sum(axis=axes)
        dxhat = dy * self.gamma.value.reshape(bshape)
        if mode == "eval":
            return dxhat * inv
        return (inv / count) * (
            count * dxhat
            - dxhat.sum(axis=axes).reshape(bshape)
            - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
        )


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class Dropout(Layer):
    """Inverted dropout whose mask depends only on (seed, call index)."""

    def __init__(self, p, seed):
        if not 0 <= p < 1:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.seed = seed
        self.calls = 0
        self._mask = None

    def forward(self, x):
        if not self.training or self.p == 0:
            self._mask = None
            return x
        self._mask = dropout_mask(x.shape, self.p, self.seed, self.calls)
        self.calls += 1
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


def batchnorm_forward(x, bn):
    return bn.forward(x)


def batchnorm_backward(dy, bn):
    return bn.backward(dy)


# --- optimizer ---------------------------------------------------------------


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient in parameter {p.name!r}; step aborted")
    for p in params:
        p.step_count += 1
        t = p.step_count
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * p.grad
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * (p.grad * p.grad)
        m_hat = p.adam_m / (1.0 - beta1**t)
        v_hat = p.adam_v / (1.0 - beta2**t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.zero_grad()


# --- gradient checking -------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    per_param: dict
    worst: str

    def __str__(self):
        return f"max relative error {self.max_rel_err:.3e} (worst: {self.worst})"


def rel_error(analytic, numeric):
    """Max absolute deviation scaled by the larger gradient magnitude."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def numeric_grad(f, x, eps=1e-5):
    """Central differences of scalar f() with respect to array x (in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def grad_check(model, inputs, targets, eps=1e-5):
    """Compare backprop parameter gradients with central differences of MPJPE.

    The model is switched to eval mode so the loss is deterministic.
    """
    model.eval()
    params = model.params()
    for p in params:
        p.zero_grad()
    pred = model.forward(inputs)
    model.backward(mpjpe_backward(pred, targets))
    analytic = {p.name: p.grad.copy() for p in params}
    for p in params:
        p.zero_grad()

    def loss():
        return mpjpe(model.forward(inputs), targets)

    per = {}
    for p in params:
        per[p.name] = rel_error(analytic[p.name], numeric_grad(loss, p.value, eps))
    worst = max(per, key=per.get)
    return GradCheckReport(per[worst], per, worst)
