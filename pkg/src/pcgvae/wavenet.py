"""WaveNet autoencoder: non-causal dilated encoder, conditional causal decoder."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import latent
from .autodiff import Adam, Tensor, load_tensors, no_grad, ops, save_tensors
from .autodiff.ops import BatchNormStats
from .autodiff.tensor import ShapeError
from .latent import ConfigurationError, DivergenceConfig, GaussianChain, GaussianIndependent
from .preprocessing import CLASSES, mulaw_decode, mulaw_encode

log = logging.getLogger(__name__)

HEAD_CHANNELS = {"AE": 1, "GI": 2, "GC": 3}
_CHAIN_DIAG_BIAS = float(np.log(np.e - 1.0))  # softplus^-1(1)


@dataclass
class ArchConfig:
    stages: int = 2
    layers_per_stage: int = 5
    dilations: tuple | None = None
    encoder_kernel: int = 3
    decoder_kernel: int = 2
    residual_channels: int = 32
    skip_channels: int = 64
    latent_channels: int = 4
    pool_stride: int = 64
    latent_model: str = "GI"
    encoder_batch_norm: bool = False
    classes: int = 256

    def __post_init__(self):
        self.latent_model = self.latent_model.upper()
        if self.latent_model not in HEAD_CHANNELS:
            raise ConfigurationError(f"latent_model must be AE, GI or GC, not {self.latent_model!r}")
        if self.dilations is None:
            self.dilations = tuple(2 ** i for i in range(self.layers_per_stage))
        self.dilations = tuple(int(d) for d in self.dilations)
        if len(self.dilations) != self.layers_per_stage:
            raise ConfigurationError("one dilation per layer of a stage is required")
        if self.encoder_kernel % 2 == 0:
            raise ConfigurationError("encoder kernel must be odd (non-causal, centred)")

    def layer_dilations(self) -> list[int]:
        return list(self.dilations) * self.stages

    @property
    def head_channels(self) -> int:
        return HEAD_CHANNELS[self.latent_model] * self.latent_channels

    def decoder_receptive_field(self) -> int:
        return 1 + (self.decoder_kernel - 1) * sum(self.layer_dilations())

    def encoder_half_width(self) -> int:
        return (self.encoder_kernel - 1) // 2 * sum(self.layer_dilations())


@dataclass
class LatentCode:
    mean: Tensor
    sample: Tensor
    posterior: GaussianIndependent | GaussianChain | None = None


class WaveNetAE:
    """Parameters, batch-norm statistics and step counter of one model."""

    def __init__(self, arch: ArchConfig, params: dict[str, Tensor], bn: dict[str, BatchNormStats] | None = None,
                 step: int = 0):
        self.arch = arch
        self.params = params
        self.bn = bn or {}
        self.step = step

    @classmethod
    def init(cls, arch: ArchConfig, seed: int = 0, dtype=np.float32) -> WaveNetAE:
        rng = np.random.default_rng(seed)
        R, S, Lc = arch.residual_channels, arch.skip_channels, arch.latent_channels
        params: dict[str, Tensor] = {}
        bn = {}

        def weight(name, shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dtype, name=name)

        def bias(name, n, value=0.0):
            params[name] = Tensor(np.full(n, value), requires_grad=True, dtype=dtype, name=name)

        n_layers = len(arch.layer_dilations())
        ke, kd = arch.encoder_kernel, arch.decoder_kernel
        weight("enc.in.w", (R, 1), 1)
        bias("enc.in.b", R)
        for i in range(n_layers):
            p = f"enc.l{i}"
            weight(f"{p}.conv.w", (R, R, ke), R * ke)
            bias(f"{p}.conv.b", R)
            if arch.encoder_batch_norm:
                bias(f"{p}.bn.gamma", R, 1.0)
                bias(f"{p}.bn.beta", R)
                bn[p] = BatchNormStats(R)
            if i < n_layers - 1:
                weight(f"{p}.res.w", (R, R), R)
                bias(f"{p}.res.b", R)
            weight(f"{p}.skip.w", (S, R), R)
            bias(f"{p}.skip.b", S)
        weight("enc.out.w", (S, S), S)
        bias("enc.out.b", S)
        weight("enc.head.w", (arch.head_channels, S), S)
        head_b = np.zeros(arch.head_channels)
        if arch.latent_model == "GC":
            head_b[Lc:2 * Lc] = _CHAIN_DIAG_BIAS
        params["enc.head.b"] = Tensor(head_b, requires_grad=True, dtype=dtype, name="enc.head.b")

        weight("dec.in.w", (R, 1), 1)
        bias("dec.in.b", R)
        for i in range(n_layers):
            p = f"dec.l{i}"
            weight(f"{p}.fg.w", (2 * R, R, kd), R * kd)
            bias(f"{p}.fg.b", 2 * R)
            weight(f"{p}.cond.w", (2 * R, Lc), Lc)
            if i < n_layers - 1:
                weight(f"{p}.res.w", (R, R), R)
                bias(f"{p}.res.b", R)
            weight(f"{p}.skip.w", (S, R), R)
            bias(f"{p}.skip.b", S)
        weight("dec.out1.w", (S, S), S)
        bias("dec.out1.b", S)
        weight("dec.out2.w", (arch.classes, S), S)
        bias("dec.out2.b", arch.classes)
        return cls(arch, params, bn)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: t.data for name, t in self.params.items()}
        for name, st in self.bn.items():
            out[f"{name}.bn.running_mean"] = st.mean
            out[f"{name}.bn.running_var"] = st.var
        return out

    def save(self, path, extra: dict | None = None):
        path = Path(path)
        save_tensors(path, self.state_dict())
        meta = {"arch": asdict(self.arch), "step": self.step,
                "bn_updates": {k: v.updates for k, v in self.bn.items()}}
        meta.update(extra or {})
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> WaveNetAE:
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        arch_d = meta["arch"]
        arch_d["dilations"] = tuple(arch_d["dilations"])
        arch = ArchConfig(**arch_d)
        tensors = load_tensors(path)
        bn = {}
        params = {}
        for name, arr in tensors.items():
            if name.endswith(".bn.running_mean") or name.endswith(".bn.running_var"):
                continue
            params[name] = Tensor(arr, requires_grad=True, dtype=np.float32, name=name)
        for layer, updates in meta.get("bn_updates", {}).items():
            st = BatchNormStats(arch.residual_channels)
            st.mean = tensors[f"{layer}.bn.running_mean"].astype(np.float64)
            st.var = tensors[f"{layer}.bn.running_var"].astype(np.float64)
            st.updates = updates
            bn[layer] = st
        return cls(arch, params, bn, step=meta.get("step", 0))


# ----------------------------------------------------------------- encoder

def _as_input(crops, dtype) -> Tensor:
    x = crops if isinstance(crops, Tensor) else Tensor(np.asarray(crops), dtype=dtype)
    if x.ndim == 2:
        x = ops.reshape(x, (x.shape[0], 1, x.shape[1]))
    if x.ndim != 3 or x.shape[1] != 1:
        raise ShapeError(f"expected crops [batch, T] or [batch, 1, T], got {x.shape}")
    return x


def encode(model: WaveNetAE, crops, training: bool = False, noise: np.ndarray | None = None,
           rng: np.random.Generator | None = None) -> LatentCode:
    """Map crops to latent parameters and a code.

    Without ``noise`` or ``rng`` the code is the posterior mean, which is
    what frozen-feature extraction uses.
    """
    a, P = model.arch, model.params
    dtype = P["enc.in.w"].dtype
    x = _as_input(crops, dtype)
    if x.shape[2] % a.pool_stride:
        raise ShapeError(f"crop length {x.shape[2]} not divisible by pooling stride {a.pool_stride}")
    h = ops.dense(x, P["enc.in.w"], P["enc.in.b"])
    skip = None
    layers = a.layer_dilations()
    for i, d in enumerate(layers):
        p = f"enc.l{i}"
        y = ops.conv1d(ops.relu(h), P[f"{p}.conv.w"], P[f"{p}.conv.b"], dilation=d, mode="same")
        if a.encoder_batch_norm:
            y = ops.batch_norm1d(y, P[f"{p}.bn.gamma"], P[f"{p}.bn.beta"], model.bn[p], training=training)
        y = ops.relu(y)
        skip = ops.dense(y, P[f"{p}.skip.w"], P[f"{p}.skip.b"], residual=skip)
        if i < len(layers) - 1:
            h = ops.dense(y, P[f"{p}.res.w"], P[f"{p}.res.b"], residual=h)
    out = ops.relu(ops.dense(ops.relu(skip), P["enc.out.w"], P["enc.out.b"]))
    pooled = ops.avg_pool1d(out, a.pool_stride)
    head = ops.dense(pooled, P["enc.head.w"], P["enc.head.b"])
    Lc = a.latent_channels
    if a.latent_model == "AE":
        return LatentCode(head, head)
    mean = ops.getitem(head, (slice(None), slice(0, Lc)))
    if noise is None and rng is not None:
        noise = rng.standard_normal(mean.shape)
    if a.latent_model == "GI":
        q = GaussianIndependent(mean, ops.getitem(head, (slice(None), slice(Lc, 2 * Lc))))
        sample = mean if noise is None else latent.sample_gi(q, noise)
    else:
        T_z = head.shape[2]
        q = GaussianChain(mean, ops.getitem(head, (slice(None), slice(Lc, 2 * Lc))),
                          ops.getitem(head, (slice(None), slice(2 * Lc, 3 * Lc), slice(0, T_z - 1))))
        sample = mean if noise is None else latent.sample_gc(q, noise)
    return LatentCode(mean, sample, q)


# ----------------------------------------------------------------- decoder

def shifted_input(quantized: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Mu-law decoded targets delayed by one step, zero at t = 0; ``[B, 1, T]``."""
    q = np.asarray(quantized)
    s = np.zeros((q.shape[0], 1, q.shape[1]), dtype=dtype)
    s[:, 0, 1:] = mulaw_decode(q[:, :-1])
    return s


def _conditioning(model: WaveNetAE, z: Tensor) -> list[Tensor]:
    """Per-layer latent projections at the latent rate.

    Nearest-neighbour upsampling commutes with the 1x1 projection, so the
    repeat to audio rate happens inside the convolution that consumes it.
    """
    P = model.params
    return [ops.dense(z, P[f"dec.l{i}.cond.w"]) for i in range(len(model.arch.layer_dilations()))]


def _decoder_skip(model: WaveNetAE, s: Tensor, cond: list[Tensor]) -> Tensor:
    P, a = model.params, model.arch
    R = a.residual_channels
    h = ops.dense(s, P["dec.in.w"], P["dec.in.b"])
    skip = None
    layers = a.layer_dilations()
    for i, d in enumerate(layers):
        p = f"dec.l{i}"
        fg = ops.conv1d(h, P[f"{p}.fg.w"], P[f"{p}.fg.b"], dilation=d, mode="causal", cond=cond[i])
        y = ops.gated_unit(ops.getitem(fg, (slice(None), slice(0, R))), ops.getitem(fg, (slice(None), slice(R, 2 * R))))
        skip = ops.dense(y, P[f"{p}.skip.w"], P[f"{p}.skip.b"], residual=skip)
        if i < len(layers) - 1:
            h = ops.dense(y, P[f"{p}.res.w"], P[f"{p}.res.b"], residual=h)
    return skip


def _decoder_head(model: WaveNetAE, skip: Tensor) -> Tensor:
    P = model.params
    h = ops.relu(ops.dense(ops.relu(skip), P["dec.out1.w"], P["dec.out1.b"]))
    return ops.dense(h, P["dec.out2.w"], P["dec.out2.b"])


def decode_teacher_forced(model: WaveNetAE, quantized: np.ndarray, z: Tensor) -> Tensor:
    """Logits ``[B, classes, T]`` for every step given the true past."""
    q = np.asarray(quantized)
    a = model.arch
    if q.ndim != 2 or z.ndim != 3 or q.shape[0] != z.shape[0] or q.shape[1] != a.pool_stride * z.shape[2]:
        raise ShapeError(f"quantized {q.shape} does not match latent {z.shape} at stride {a.pool_stride}")
    dtype = model.params["dec.in.w"].dtype
    s = Tensor(shifted_input(q, dtype), dtype=dtype)
    return _decoder_head(model, _decoder_skip(model, s, _conditioning(model, z)))


# -------------------------------------------------------------------- loss

def loss(model: WaveNetAE, crops, div: DivergenceConfig, rng: np.random.Generator | None = None,
         noise: dict | None = None, training: bool = True) -> tuple[Tensor, dict]:
    """Total objective ``nll + weight * divergence`` and its parts.

    ``noise`` may hold fixed ``posterior`` (``[B, C, T_z]``) and ``prior``
    (``[B*T_z, C]``) draws; otherwise they come from ``rng``.
    """
    a = model.arch
    if a.latent_model == "AE" and div.kind != "none":
        raise ConfigurationError("the AE model has no latent distribution to regularise")
    crops = crops.data if isinstance(crops, Tensor) else np.asarray(crops)
    x2 = crops.reshape(crops.shape[0], -1)
    q = mulaw_encode(x2)
    noise = dict(noise or {})
    T_z = x2.shape[1] // a.pool_stride
    if a.latent_model != "AE" and "posterior" not in noise:
        if rng is None:
            raise ValueError("loss needs an rng or explicit noise for the posterior sample")
        noise["posterior"] = rng.standard_normal((x2.shape[0], a.latent_channels, T_z))
    code = encode(model, Tensor(x2, dtype=model.params["enc.in.w"].dtype), training=training,
                  noise=noise.get("posterior"))
    logits = decode_teacher_forced(model, q, code.sample)
    nll = ops.softmax_cross_entropy(logits, q)
    if div.kind == "none" or div.weight == 0:
        divergence = _divergence(code, div, noise, rng) if div.kind != "none" else None
        return nll, {"nll": nll.item(), "divergence": 0.0 if divergence is None else divergence.item()}
    divergence = _divergence(code, div, noise, rng)
    total = ops.add(nll, ops.scale(divergence, div.weight))
    return total, {"nll": nll.item(), "divergence": divergence.item()}


def _divergence(code: LatentCode, div: DivergenceConfig, noise: dict, rng) -> Tensor:
    if div.kind == "kl":
        return latent.kl_gi(code.posterior) if isinstance(code.posterior, GaussianIndependent) \
            else latent.kl_gc(code.posterior)
    samples = latent.steps_as_samples(code.sample)
    prior = noise.get("prior")
    if prior is None:
        if rng is None:
            raise ValueError("MMD needs an rng or explicit prior draws")
        prior = rng.standard_normal(samples.shape)
    return latent.mmd(samples, Tensor(prior, dtype=samples.dtype), div.kernel, div.sigma2)


# ------------------------------------------------------------------- train

@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 10
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    save_every: int = 1000
    seed: int = 0
    train_on: str = "all"


@dataclass
class TrainResult:
    checkpoints: list = field(default_factory=list)
    history: list = field(default_factory=list)
    crops_by_class: dict = field(default_factory=dict)


LOG_COLUMNS = ["step", "nll", "divergence", "total"]


def train(model: WaveNetAE, crops: np.ndarray, labels, div: DivergenceConfig, cfg: TrainConfig,
          out_dir=None, checkpoint_extra: dict | None = None) -> TrainResult:
    """Adam on shuffled minibatches; optional checkpoints and CSV log in ``out_dir``.

    ``labels`` gives the class of every crop; with ``train_on='normal_only'``
    only Normal crops are used.
    """
    crops = np.asarray(crops, dtype=np.float32)
    labels = np.asarray(labels)
    if cfg.train_on == "normal_only":
        keep = labels == "Normal"
        crops, labels = crops[keep], labels[keep]
    elif cfg.train_on != "all":
        raise ConfigurationError(f"train_on must be 'all' or 'normal_only', not {cfg.train_on!r}")
    if len(crops) == 0:
        raise ConfigurationError("no training crops")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    result = TrainResult()
    consumed = {c: 0 for c in CLASSES}
    log_fh = writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "train_log.csv", "a", newline="")
        writer = csv.writer(log_fh)
        if log_fh.tell() == 0:
            writer.writerow(LOG_COLUMNS)
    order: list[int] = []
    try:
        for _ in range(cfg.steps):
            if len(order) < min(cfg.batch_size, len(crops)):
                order.extend(rng.permutation(len(crops)).tolist())
            n = min(cfg.batch_size, len(crops))
            idx, order = order[:n], order[n:]
            for lab in labels[idx]:
                consumed[str(lab)] += 1
            opt.zero_grad()
            total, parts = loss(model, crops[idx], div, rng=rng, training=True)
            total.backward()
            opt.step()
            model.step += 1
            row = (model.step, parts["nll"], parts["divergence"], total.item())
            result.history.append(row)
            if writer is not None:
                writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
                if model.step % cfg.save_every == 0 or model.step == cfg.steps:
                    path = out_dir / "checkpoints" / f"step_{model.step:07d}.ckpt"
                    model.save(path, checkpoint_extra)
                    result.checkpoints.append(path)
                    log_fh.flush()
    finally:
        if log_fh is not None:
            log_fh.close()
    result.crops_by_class = consumed
    return result


# ------------------------------------------------------------- generation

def reconstruct(model: WaveNetAE, z, steps: int | None = None, greedy: bool = True,
                rng: np.random.Generator | None = None, return_indices: bool = False):
    """Autoregressively generate audio conditioned on latent ``z`` ``[B, C, T_z]``.

    Each step only evaluates the decoder's receptive field, so the cost is
    linear in ``steps``.
    """
    a = model.arch
    z = z if isinstance(z, Tensor) else Tensor(np.asarray(z), dtype=model.params["dec.in.w"].dtype)
    if z.ndim == 2:
        z = ops.reshape(z, (1,) + z.shape)
    full = a.pool_stride * z.shape[2]
    steps = full if steps is None else steps
    if steps > full:
        raise ShapeError(f"latent covers {full} steps, {steps} requested")
    if not greedy and rng is None:
        raise ValueError("sampling needs an rng")
    B = z.shape[0]
    rf = a.decoder_receptive_field()
    dtype = z.dtype
    out = np.zeros((B, steps), dtype=np.int64)
    s = np.zeros((B, 1, steps), dtype=dtype)
    with no_grad():
        cond = [np.repeat(c.data, a.pool_stride, axis=2) for c in _conditioning(model, z)]
        for t in range(steps):
            lo = max(0, t - rf + 1)
            window = Tensor(s[:, :, lo:t + 1], dtype=dtype)
            cw = [Tensor(c[:, :, lo:t + 1], dtype=dtype) for c in cond]
            skip = _decoder_skip(model, window, cw)
            last = Tensor(skip.data[:, :, -1:], dtype=dtype)
            logits = _decoder_head(model, last).data[:, :, 0].astype(np.float64)
            if greedy:
                k = logits.argmax(axis=1)
            else:
                p = np.exp(logits - logits.max(axis=1, keepdims=True))
                p /= p.sum(axis=1, keepdims=True)
                k = np.array([rng.choice(len(row), p=row) for row in p])
            out[:, t] = k
            if t + 1 < steps:
                s[:, 0, t + 1] = mulaw_decode(k)
    return out if return_indices else mulaw_decode(out)
