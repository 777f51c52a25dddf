"""Latent posterior models, divergences and the MMD regulariser.

Two posteriors are supported on codes shaped ``[batch, channels, steps]``:
independent Gaussians (diagonal covariance) and Gaussian chains whose
per-channel precision over time is tridiagonal, ``J = L L^T`` with ``L``
lower-bidiagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.tensor import ShapeError, Tensor, record

CHAIN_DIAG_FLOOR = 1e-4


class ConfigurationError(ValueError):
    pass


@dataclass
class GaussianIndependent:
    mean: Tensor
    log_var: Tensor


@dataclass
class GaussianChain:
    mean: Tensor
    chol_diag_raw: Tensor
    chol_off_raw: Tensor

    def diag(self) -> Tensor:
        """Positive diagonal of the Cholesky factor, softplus(raw) + floor."""
        return ops.add_scalar(ops.softplus(self.chol_diag_raw), CHAIN_DIAG_FLOOR)


# ---------------------------------------------------------------- sampling

def sample_gi(q: GaussianIndependent, noise: np.ndarray) -> Tensor:
    """Reparameterised draw ``mean + exp(log_var / 2) * noise``."""
    eps = Tensor(noise, dtype=q.mean.dtype)
    std = ops.exp(ops.scale(q.log_var, 0.5))
    return ops.add(q.mean, ops.mul(std, eps))


def bidiag_solve(diag: Tensor, off: Tensor, rhs: np.ndarray) -> Tensor:
    """Solve ``L^T y = rhs`` along the last axis by back substitution.

    ``L`` is lower-bidiagonal with ``diag`` on the diagonal and ``off`` on
    the first sub-diagonal, so ``L^T`` is upper-bidiagonal. Runs in O(T).
    """
    d, o = diag.data, off.data
    T = d.shape[-1]
    if o.shape[-1] != max(T - 1, 0) or o.shape[:-1] != d.shape[:-1] or rhs.shape != d.shape:
        raise ShapeError(f"bidiag_solve: diag {d.shape}, off {o.shape}, rhs {rhs.shape}")
    rhs = np.asarray(rhs, dtype=d.dtype)
    y = np.empty_like(d)
    y[..., T - 1] = rhs[..., T - 1] / d[..., T - 1]
    for t in range(T - 2, -1, -1):
        y[..., t] = (rhs[..., t] - o[..., t] * y[..., t + 1]) / d[..., t]

    def backward(g):
        lam = np.empty_like(g)
        lam[..., 0] = g[..., 0] / d[..., 0]
        for t in range(1, T):
            lam[..., t] = (g[..., t] - o[..., t - 1] * lam[..., t - 1]) / d[..., t]
        return -lam * y, -lam[..., :-1] * y[..., 1:]

    return record(y, (diag, off), backward, "bidiag_solve")


def sample_gc(q: GaussianChain, noise: np.ndarray) -> Tensor:
    """Draw ``mean + L^{-T} noise`` so that ``Cov(z) = (L L^T)^{-1}``."""
    return ops.add(q.mean, bidiag_solve(q.diag(), q.chol_off_raw, noise))


# ------------------------------------------------------------- chain algebra

def chain_inverse_diag(diag: np.ndarray, off: np.ndarray) -> np.ndarray:
    """Diagonal of ``(L L^T)^{-1}`` via the O(T) backward recursion."""
    T = diag.shape[-1]
    s = np.empty(np.shape(diag), dtype=np.float64)
    s[..., T - 1] = 1.0 / diag[..., T - 1] ** 2
    for t in range(T - 2, -1, -1):
        s[..., t] = (1.0 + off[..., t] ** 2 * s[..., t + 1]) / diag[..., t] ** 2
    return s


def chain_inverse_trace(diag: Tensor, off: Tensor) -> Tensor:
    """Per-chain ``tr((L L^T)^{-1})``, reduced over the last axis."""
    d = diag.data.astype(np.float64)
    o = off.data.astype(np.float64)
    s = chain_inverse_diag(d, o)
    T = d.shape[-1]

    def backward(g):
        g = np.asarray(g, dtype=np.float64)
        adj = np.empty_like(s)
        adj[..., 0] = 1.0
        for t in range(1, T):
            adj[..., t] = 1.0 + adj[..., t - 1] * o[..., t - 1] ** 2 / d[..., t - 1] ** 2
        gd = g[..., None] * adj * (-2.0 * s / d)
        go = g[..., None] * adj[..., :-1] * (2.0 * o * s[..., 1:] / d[..., :-1] ** 2)
        return gd.astype(diag.dtype), go.astype(off.dtype)

    return record(s.sum(axis=-1).astype(diag.dtype), (diag, off), backward, "chain_inverse_trace")


# ---------------------------------------------------------- KL divergences

def kl_gi(q: GaussianIndependent) -> Tensor:
    """KL(q || N(0, I)) summed over channels, averaged per (batch, step)."""
    B, _, T = q.mean.shape
    var = ops.exp(q.log_var)
    terms = ops.sub(ops.add(var, ops.square(q.mean)), ops.add_scalar(q.log_var, 1.0))
    return ops.scale(ops.sum_(terms), 0.5 / (B * T))


def kl_gc(q: GaussianChain) -> Tensor:
    """KL(q || N(0, I)) for independent chains, normalised like :func:`kl_gi`.

    Per chain: ``0.5 * (tr(J^-1) + |m|^2 - T + 2 * sum(log L_tt))``.
    """
    B, C, T = q.mean.shape
    d = q.diag()
    trace = ops.sum_(chain_inverse_trace(d, q.chol_off_raw))
    msq = ops.sum_(ops.square(q.mean))
    logdet = ops.scale(ops.sum_(ops.log_(d)), 2.0)
    total = ops.add_scalar(ops.add(ops.add(trace, msq), logdet), -float(B * C * T))
    return ops.scale(total, 0.5 / (B * T))


# --------------------------------------------------------------------- MMD

def kernel_matrix(a: np.ndarray, b: np.ndarray, kernel: str, sigma2: float = 4.0) -> np.ndarray:
    """Pairwise kernel values ``k(a_i, b_j)`` in float64."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = a[:, None, :] - b[None, :, :]
    if kernel == "gaussian":
        return np.exp(-np.einsum("ijk,ijk->ij", diff, diff) / (2.0 * sigma2))
    if kernel == "module":
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        return dist - np.linalg.norm(a, axis=1)[:, None] - np.linalg.norm(b, axis=1)[None, :]
    raise ConfigurationError(f"unknown MMD kernel {kernel!r}")


def _kernel_grads(a, b, kernel, sigma2):
    """Gradients of ``sum_ij k(a_i, b_j)`` with respect to ``a`` and ``b``."""
    diff = a[:, None, :] - b[None, :, :]
    if kernel == "gaussian":
        K = np.exp(-np.einsum("ijk,ijk->ij", diff, diff) / (2.0 * sigma2))
        w = K[:, :, None] * diff / sigma2
        return -w.sum(axis=1), w.sum(axis=0)
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    safe = np.where(dist > 0, dist, 1.0)
    unit = np.where((dist > 0)[:, :, None], diff / safe[:, :, None], 0.0)
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    ua = np.where(na > 0, a / np.where(na > 0, na, 1.0), 0.0)
    ub = np.where(nb > 0, b / np.where(nb > 0, nb, 1.0), 0.0)
    return unit.sum(axis=1) - b.shape[0] * ua, -unit.sum(axis=0) - a.shape[0] * ub


def mmd(q_samples, p_samples, kernel: str = "gaussian", sigma2: float = 4.0) -> Tensor:
    """Biased (V-statistic) squared MMD between two sample sets.

    ``mean k(p, p') - 2 mean k(q, p) + mean k(q, q')``, where each row is
    one sample. Either argument may be a Tensor (differentiable) or array.
    """
    q = q_samples if isinstance(q_samples, Tensor) else Tensor(q_samples, dtype=np.float64)
    p = p_samples if isinstance(p_samples, Tensor) else Tensor(p_samples, dtype=np.float64)
    if q.ndim != 2 or p.ndim != 2 or q.shape[1] != p.shape[1]:
        raise ShapeError(f"mmd: sample sets must be [n, dim]; got {q.shape} and {p.shape}")
    N, M = q.shape[0], p.shape[0]
    if N == 0 or M == 0:
        raise ValueError("mmd needs non-empty sample sets")
    qd = q.data.astype(np.float64)
    pd = p.data.astype(np.float64)
    val = (kernel_matrix(pd, pd, kernel, sigma2).mean()
           - 2.0 * kernel_matrix(qd, pd, kernel, sigma2).mean()) + kernel_matrix(qd, qd, kernel, sigma2).mean()

    def backward(g):
        g = np.asarray(g).item()
        gq_qp, gp_qp = _kernel_grads(qd, pd, kernel, sigma2)
        gq = -2.0 / (N * M) * gq_qp
        gp = -2.0 / (N * M) * gp_qp
        if q.requires_grad:
            a1, a2 = _kernel_grads(qd, qd, kernel, sigma2)
            gq = gq + (a1 + a2) / N ** 2
        if p.requires_grad:
            b1, b2 = _kernel_grads(pd, pd, kernel, sigma2)
            gp = gp + (b1 + b2) / M ** 2
        return (g * gq).astype(q.dtype), (g * gp).astype(p.dtype)

    return record(np.asarray(val, dtype=q.dtype), (q, p), backward, f"mmd[{kernel}]")


def steps_as_samples(z: Tensor) -> Tensor:
    """``[batch, channels, steps]`` -> ``[batch*steps, channels]``; one sample per step."""
    B, C, T = z.shape
    return ops.reshape(ops.transpose(z, (0, 2, 1)), (B * T, C))


# --------------------------------------------------------- divergence config

@dataclass(frozen=True)
class DivergenceConfig:
    kind: str  # "none", "kl" or "mmd"
    kernel: str | None = None
    sigma2: float = 4.0
    weight: float = 1.0


def divergence_for(model: str, train_on: str, divergence: str = "auto", kernel: str = "auto",
                   sigma2: float = 4.0, weight: float = 1.0) -> DivergenceConfig:
    """Resolve the latent regulariser for a model/regime pair.

    Defaults: AE has none; GI uses MMD with the Gaussian kernel; GC uses
    the Gaussian kernel when trained on normal records only and the module
    kernel when trained on all records.
    """
    model = model.upper()
    if model not in ("AE", "GI", "GC") or train_on not in ("all", "normal_only"):
        raise ConfigurationError(f"unknown model/regime combination ({model}, {train_on})")
    if model == "AE":
        if divergence not in ("auto", "none"):
            raise ConfigurationError(f"AE has no latent distribution; divergence {divergence!r} is invalid")
        return DivergenceConfig("none", weight=weight)
    if divergence == "auto":
        divergence = "mmd"
    if divergence == "kl":
        return DivergenceConfig("kl", sigma2=sigma2, weight=weight)
    if divergence == "none":
        return DivergenceConfig("none", weight=weight)
    if divergence != "mmd":
        raise ConfigurationError(f"unknown divergence {divergence!r}")
    if kernel == "auto":
        kernel = "module" if (model == "GC" and train_on == "all") else "gaussian"
    if kernel not in ("gaussian", "module"):
        raise ConfigurationError(f"unknown MMD kernel {kernel!r}")
    return DivergenceConfig("mmd", kernel=kernel, sigma2=sigma2, weight=weight)
