"""Pure-Python/numpy implementations of the hot kernels.

Each function here has a twin in ``_ckernels.pyx`` with identical floating
point operation order, so both backends produce bit-identical results.
"""

import numpy as np


def ewma_pass(values, present, alpha, reverse=False):
    """One directional EWMA pass over a gappy series.

    The state is seeded by the first present value met in the pass direction
    and only updated on present slots. Slots before that first value stay NaN.
    """
    values = np.asarray(values, dtype=np.float64)
    present = np.asarray(present, dtype=bool)
    n = values.shape[0]
    out = np.empty(n, dtype=np.float64)
    state = 0.0
    seeded = False
    order = range(n - 1, -1, -1) if reverse else range(n)
    for i in order:
        if present[i]:
            if seeded:
                state = alpha * values[i] + (1.0 - alpha) * state
            else:
                state = values[i]
                seeded = True
        out[i] = state if seeded else np.nan
    return out


def ewma_fill(values, present, alpha):
    values = np.asarray(values, dtype=np.float64)
    present = np.asarray(present, dtype=bool)
    fwd = ewma_pass(values, present, alpha, False)
    bwd = ewma_pass(values, present, alpha, True)
    out = values.copy()
    for i in range(values.shape[0]):
        if present[i]:
            continue
        f, b = fwd[i], bwd[i]
        if f != f:
            out[i] = b
        elif b != b:
            out[i] = f
        else:
            out[i] = 0.5 * (f + b)
    return out


def im2col_1d(x, kernel, stride, dilation, t_out):
    """Gather (N, C, T) into columns shaped (N, t_out, C, kernel)."""
    x = np.asarray(x, dtype=np.float64)
    n, c, t = x.shape
    if stride == kernel and dilation == 1 and t == kernel * t_out:
        return np.ascontiguousarray(x.reshape(n, c, t_out, kernel).transpose(0, 2, 1, 3))
    idx = (np.arange(t_out) * stride)[:, None] + (np.arange(kernel) * dilation)[None, :]
    return np.ascontiguousarray(x[:, :, idx].transpose(0, 2, 1, 3))


def col2im_1d(cols, t, stride, dilation):
    """Scatter-add columns (N, t_out, C, kernel) back to (N, C, t)."""
    cols = np.asarray(cols, dtype=np.float64)
    n, t_out, c, kernel = cols.shape
    dx = np.zeros((n, c, t), dtype=np.float64)
    span = stride * (t_out - 1) + 1
    for k in range(kernel):
        start = k * dilation
        dx[:, :, start:start + span:stride] += cols[:, :, :, k].transpose(0, 2, 1)
    return dx


def horner2d(coeffs, v, d):
    """Evaluate sum_ij c[i, j] v**i d**j with nested Horner in v then d."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    nv, nd = coeffs.shape
    out = np.zeros(np.broadcast(v, d).shape, dtype=np.float64)
    for i in range(nv - 1, -1, -1):
        row = np.zeros_like(out)
        for j in range(nd - 1, -1, -1):
            row = row * d + coeffs[i, j]
        out = out * v + row
    return out
