"""Independent oracles used across the test suite.

Everything here is deliberately naive (nested loops, central differences,
Monte-Carlo quantiles) and never calls the implementation paths it checks.
"""

import numpy as np

from lrsim.rng import Rng
from lrsim.tensor import Tensor


def conv2d_loops(x, w, stride, padding):
    """Direct quadruple-nested-loop cross-correlation, float64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    p, s = padding, stride
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    ho = (h + 2 * p - kh) // s + 1
    wo = (wd + 2 * p - kw) // s + 1
    out = np.zeros((n, f, ho, wo))
    for ni in range(n):
        for fi in range(f):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for a in range(kh):
                            for b in range(kw):
                                acc += xp[ni, ci, i * s + a, j * s + b] * w[fi, ci, a, b]
                    out[ni, fi, i, j] = acc
    return out


def deconv2d_loops(y, k, stride, padding, output_padding):
    """Direct transposed convolution by scatter, float64."""
    y = np.asarray(y, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    n, c, h, w = y.shape
    _, f, kh, kw = k.shape
    s, p, op = stride, padding, output_padding
    ho = (h - 1) * s - 2 * p + kh + op
    wo = (w - 1) * s - 2 * p + kw + op
    buf = np.zeros((n, f, ho + 2 * p, wo + 2 * p))
    for ni in range(n):
        for ci in range(c):
            for i in range(h):
                for j in range(w):
                    for fi in range(f):
                        for a in range(kh):
                            for b in range(kw):
                                buf[ni, fi, i * s + a, j * s + b] += y[ni, ci, i, j] * k[ci, fi, a, b]
    return buf[:, :, p : p + ho, p : p + wo]


def fd_gradient(f, arrays, which, eps=1e-4, coords=None):
    """Central finite differences of scalar f(arrays) w.r.t. arrays[which].

    Returns (coords, fd_values). `coords` defaults to every element.
    Arrays are float64 and are restored after probing.
    """
    target = arrays[which]
    flat = target.reshape(-1)
    if coords is None:
        coords = range(flat.size)
    coords = list(coords)
    vals = np.zeros(len(coords))
    for n, idx in enumerate(coords):
        orig = flat[idx]
        flat[idx] = orig + eps
        fp = f(arrays)
        flat[idx] = orig - eps
        fm = f(arrays)
        flat[idx] = orig
        vals[n] = (fp - fm) / (2 * eps)
    return coords, vals


def check_gradients(builder, shapes, seed, eps=1e-4, rtol=1e-4, atol=1e-7, max_coords=None):
    """Compare autodiff gradients of a scalar loss against central differences.

    `builder(tensors) -> loss Tensor` runs the graph under test;
    `shapes` lists the float64 leaf shapes. Each leaf is probed at every
    coordinate (or a deterministic subsample of `max_coords`).
    """
    rng = Rng(seed)
    leaves = [Tensor(rng.gaussian(s, dtype=np.float64), requires_grad=True) for s in shapes]
    loss = builder(leaves)
    loss.backward()
    analytic = [lf.grad if lf.grad is not None else np.zeros_like(lf.data) for lf in leaves]

    def scalar(arrs):
        frozen = [Tensor(a.copy()) for a in arrs]
        return float(builder(frozen).data)

    arrays = [lf.data.copy() for lf in leaves]
    worst = 0.0
    for wi, grad in enumerate(analytic):
        size = arrays[wi].size
        if max_coords is not None and size > max_coords:
            idx = Rng(seed + 1000 + wi).integers(0, size, (max_coords,))
            coords = sorted(set(int(i) for i in idx))
        else:
            coords = None
        coords, fd = fd_gradient(scalar, arrays, wi, eps, coords)
        an = grad.reshape(-1)[list(coords)]
        err = np.abs(an - fd) / np.maximum(np.maximum(np.abs(an), np.abs(fd)), atol / rtol)
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return worst


def mc_norm_quantiles(dim, p_lo, p_hi, n_samples, seed, chunk=200_000):
    """Empirical quantiles of ||N(0, I_dim)|| by direct sampling."""
    rng = Rng(seed)
    norms = np.empty(n_samples)
    done = 0
    per = max(1, chunk // max(dim, 1))
    while done < n_samples:
        take = min(per, n_samples - done)
        z = rng.gaussian((take, dim), dtype=np.float64)
        norms[done : done + take] = np.sqrt((z * z).sum(axis=1))
        done += take
    return float(np.quantile(norms, p_lo)), float(np.quantile(norms, p_hi))
