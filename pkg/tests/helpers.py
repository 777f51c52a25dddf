"""Shared oracles for the test suite."""

import numpy as np

from pcgvae.autodiff import Tensor


def numeric_grad(f, arrays, i, eps=1e-3, entries=None):
    """Central differences of scalar ``f(*arrays)`` w.r.t. ``arrays[i]``."""
    x = arrays[i]
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    idx = range(flat.size) if entries is None else entries
    for j in idx:
        old = flat[j]
        flat[j] = old + eps
        up = f(*arrays)
        flat[j] = old - eps
        down = f(*arrays)
        flat[j] = old
        g.reshape(-1)[j] = (up - down) / (2 * eps)
    return g


def rel_err(analytic, numeric, entries=None):
    """max |a - n| / max |n| over the checked entries."""
    a, n = analytic.reshape(-1), numeric.reshape(-1)
    if entries is not None:
        a, n = a[entries], n[entries]
    scale = max(np.abs(n).max(), 1e-12)
    return float(np.abs(a - n).max() / scale)


def gradcheck(op, arrays, seed=0, eps=1e-3, wrt=None):
    """Largest per-input relative error of ``op``'s backward vs central differences.

    ``op`` maps Tensors to a Tensor; the scalar checked is a fixed random
    projection of its output so that every output entry contributes.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    wrt = range(len(arrays)) if wrt is None else wrt
    rng = np.random.default_rng(seed)
    proj = None

    def scalar(*xs):
        nonlocal proj
        out = op(*[Tensor(x, dtype=np.float64) for x in xs]).data
        if proj is None:
            proj = rng.standard_normal(out.shape)
        return float((out * proj).sum())

    scalar(*arrays)
    ts = [Tensor(x.copy(), requires_grad=True, dtype=np.float64) for x in arrays]
    out = op(*ts)
    out.backward(proj.copy())
    worst = 0.0
    for i in wrt:
        num = numeric_grad(scalar, arrays, i, eps)
        ana = ts[i].grad if ts[i].grad is not None else np.zeros_like(arrays[i])
        worst = max(worst, rel_err(ana, num))
    return worst


def dense_chain_precision(diag, off):
    """Dense ``L L^T`` for one lower-bidiagonal factor."""
    T = len(diag)
    L = np.diag(np.asarray(diag, dtype=np.float64))
    for t in range(T - 1):
        L[t + 1, t] = off[t]
    return L, L @ L.T


def sine(freq, fs=4000.0, n=8000, amp=1.0):
    t = np.arange(n) / fs
    return amp * np.sin(2 * np.pi * freq * t)


def single_bin_amplitude(x, freq, fs=4000.0):
    """Amplitude of ``freq`` in ``x`` via one DFT bin, O(n)."""
    n = len(x)
    t = np.arange(n) / fs
    return 2.0 * abs(np.sum(x * np.exp(-2j * np.pi * freq * t))) / n
