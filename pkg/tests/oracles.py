"""Independent reference implementations used by the tests.

Each oracle is written from the defining formula with plain loops or exact
arithmetic and shares no code with the package.
"""

import math
import statistics
from fractions import Fraction

import numpy as np


def recount_coverage(detections, rig, threshold):
    """Fraction of frames where every keypoint has a qualifying side detection."""
    side = {c.camera_id for c in rig.side_cameras}
    frames = {}
    for d in detections:
        frames.setdefault(d.frame_index, set())
        if d.camera_id in side and d.confidence > threshold:
            frames[d.frame_index].add(d.keypoint)
    full = sum(1 for kps in frames.values() if set(rig.keypoints) <= kps)
    return full / len(frames)


def solve_exact(a, b):
    """Gauss-Jordan on Fractions; a is a list of lists, b a list."""
    n = len(a)
    m = [[Fraction(x) for x in row] + [Fraction(y)] for row, y in zip(a, b)]
    for col in range(n):
        piv = next(r for r in range(col, n) if m[r][col] != 0)
        m[col], m[piv] = m[piv], m[col]
        p = m[col][col]
        m[col] = [x / p for x in m[col]]
        for r in range(n):
            if r != col and m[r][col] != 0:
                f = m[r][col]
                m[r] = [x - f * y for x, y in zip(m[r], m[col])]
    return [row[-1] for row in m]


def normal_equations_fit(samples, degree_v, degree_d):
    """Brute-force least squares: exact rational solve of (A^T A) c = A^T z."""
    rows, z = [], []
    for s in samples:
        v, d = Fraction(s.v_px), Fraction(s.distance_mm)
        rows.append([v**i * d**j for i in range(degree_v + 1) for j in range(degree_d + 1)])
        z.append(Fraction(s.z_mm))
    n = len(rows[0])
    ata = [[sum(r[i] * r[j] for r in rows) for j in range(n)] for i in range(n)]
    atz = [sum(r[i] * zz for r, zz in zip(rows, z)) for i in range(n)]
    c = solve_exact(ata, atz)
    return np.array([float(x) for x in c]).reshape(degree_v + 1, degree_d + 1)


def ewma_fill_loop(series, alpha):
    """Zero-phase EWMA gap fill written as two explicit state machines."""
    n = len(series)

    def one_pass(order):
        out = [None] * n
        state = None
        for i in order:
            x = series[i]
            if x is not None:
                state = x if state is None else alpha * x + (1 - alpha) * state
            out[i] = state
        return out

    fwd = one_pass(range(n))
    bwd = one_pass(range(n - 1, -1, -1))
    out = []
    for i in range(n):
        if series[i] is not None:
            out.append(series[i])
        elif fwd[i] is None:
            out.append(bwd[i])
        elif bwd[i] is None:
            out.append(fwd[i])
        else:
            out.append(0.5 * (fwd[i] + bwd[i]))
    return out


def conv1d_loops(x, w, b, stride=1, dilation=1):
    """Direct-sum valid cross-correlation over (N, C, T)."""
    n, c, t = x.shape
    o, _, k = w.shape
    t_out = (t - (k - 1) * dilation - 1) // stride + 1
    y = np.zeros((n, o, t_out))
    for ni in range(n):
        for oi in range(o):
            for ti in range(t_out):
                acc = b[oi] if b is not None else 0.0
                for ci in range(c):
                    for ki in range(k):
                        acc += w[oi, ci, ki] * x[ni, ci, ti * stride + ki * dilation]
                y[ni, oi, ti] = acc
    return y


def central_difference(f, x, h=1e-6):
    """Gradient of scalar f at array x by central differences (copies x)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def adam_scalar(theta, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar Adam trajectory for a sequence of gradients (lr may be a list)."""
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        step_lr = lr[t - 1] if isinstance(lr, (list, tuple)) else lr
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mh = m / (1 - beta1**t)
        vh = v / (1 - beta2**t)
        theta = theta - step_lr * mh / (math.sqrt(vh) + eps)
        out.append(theta)
    return out


def mean_and_sample_std(values):
    vals = [float(v) for v in values]
    if len(vals) == 1:
        return vals[0], 0.0
    return statistics.fmean(vals), statistics.stdev(vals)


def batchnorm_train_loops(x, gamma, beta, eps):
    """Per-channel normalization of a 2-D batch with explicit loops."""
    n, c = x.shape
    y = np.empty_like(x)
    for j in range(c):
        col = [x[i, j] for i in range(n)]
        mu = sum(col) / n
        var = sum((v - mu) ** 2 for v in col) / n
        for i in range(n):
            y[i, j] = gamma[j] * (x[i, j] - mu) / math.sqrt(var + eps) + beta[j]
    return y


def linear_count(k, c, blocks=1):
    """Hand count for the residual MLP with 2K inputs and K outputs."""
    first = 2 * k * c + c + 2 * c
    block = 2 * (c * c + c + 2 * c)
    return first + blocks * block + c * k + k


def temporal_count(k, c, widths):
    """Hand count for the strided temporal model (conv biases included)."""
    total = 2 * k * c * widths[0] + c + 2 * c
    for w in widths[1:]:
        total += c * c * w + c + 2 * c
        total += c * c + c + 2 * c
    return total + c * k + k


def _rel(a, n):
    return float(np.max(np.abs(a - n)) / max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-12))


def layer_check(layer, x, rng, reset=lambda: None):
    """Finite-difference check of input and parameter gradients for L = sum(r * y)."""
    reset()
    y = layer.forward(x)
    r = rng.normal(size=y.shape)
    for p in layer.params():
        p.zero_grad()
    dx = layer.backward(r)

    def loss(v=None):
        reset()
        return float(np.sum(r * layer.forward(x if v is None else v)))

    errs = [_rel(dx, central_difference(loss, x))]
    for p in layer.params():
        analytic = p.grad.copy()
        orig = p.value.copy()

        def lp(v, p=p):
            p.value[...] = v
            return loss()

        errs.append(_rel(analytic, central_difference(lp, orig)))
        p.value[...] = orig
    return max(errs)
