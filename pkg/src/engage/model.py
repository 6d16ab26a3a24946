"""Residual feed-forward engagement model, trained with AdamW.

Input row: sketch | Fourier-encoded numerics | categorical embeddings |
community strengths. Hidden blocks are linear -> batch norm -> leaky ReLU;
every block after the first adds its input back (identity skip). Four
sigmoid outputs, one per reaction, trained on the unweighted sum of the
per-reaction binary cross-entropies.

Training runs in float32 with the loss accumulated in float64. For
inference, batch norm is folded into the preceding linear layer
(``InferenceNet``).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from . import fourier
from .features.assemble import AssembledFeatures, FeatureBatch, FeatureLayout
from .records import LogFormatError

MODEL_HEADER = "#engage-model v1"
PROB_EPS = 1e-15


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"non-finite loss {loss} at step {step}")


@dataclass
class ModelConfig:
    hidden_width: int = 1500
    hidden_layers: int = 3
    leaky_relu_slope: float = 0.01
    embedding_dim_cap: int = 16
    batch_size: int = 256
    lr: float = 1e-4
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs_stage1: int = 2
    epochs_stage2: int = 3
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    fourier_scales: tuple[int, ...] = fourier.DEFAULT_SCALES
    fourier_log1p: bool = False
    seed: int = 0

    def __post_init__(self):
        self.fourier_scales = fourier.check_scales(self.fourier_scales)
        if self.hidden_width <= 0 or self.hidden_layers < 0 or self.batch_size < 2:
            raise ValueError("hidden_width > 0, hidden_layers >= 0 and batch_size >= 2 required")
        if not 0.0 < self.leaky_relu_slope < 1.0:
            raise ValueError("leaky_relu_slope must lie in (0, 1)")
        if not (0.0 < self.adam_beta1 < 1.0 and 0.0 < self.adam_beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fourier_scales"] = list(self.fourier_scales)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if "fourier_scales" in d:
            d["fourier_scales"] = tuple(d["fourier_scales"])
        return cls(**d)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def bce_sum(logits: np.ndarray, targets: np.ndarray) -> float:
    """Sum over reactions of the batch-mean binary cross-entropy (float64)."""
    z = logits.astype(np.float64)
    y = targets.astype(np.float64)
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(per.mean(axis=0).sum())


@dataclass
class _Cache:
    x: np.ndarray
    cat: np.ndarray
    blocks: list = field(default_factory=list)
    h_last: np.ndarray | None = None


class EngageNet:
    """Trainable parameters plus the feature layout they expect."""

    def __init__(self, layout: FeatureLayout, config: ModelConfig, params: dict | None = None,
                 dtype=np.float32):
        self.layout = layout
        self.config = config
        self.dtype = np.dtype(dtype)
        self.emb_dims = [min(config.embedding_dim_cap, vocab) for _, vocab in layout.categorical]
        self.fourier_width = len(layout.numeric) * fourier.encoded_width(config.fourier_scales)
        self.input_width = layout.sketch_size + self.fourier_width + sum(self.emb_dims) + layout.n_strengths
        self.params = params if params is not None else self._init_params()
        if params is not None:
            self._check_shapes()

    # -- parameters ---------------------------------------------------------

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for i, (_, vocab) in enumerate(self.layout.categorical):
            shapes[f"emb{i}"] = (vocab, self.emb_dims[i])
        width_in = self.input_width
        H = self.config.hidden_width
        for j in range(self.config.hidden_layers):
            shapes[f"block{j}.weight"] = (width_in, H)
            shapes[f"block{j}.bias"] = (H,)
            shapes[f"block{j}.gamma"] = (H,)
            shapes[f"block{j}.beta"] = (H,)
            shapes[f"block{j}.running_mean"] = (H,)
            shapes[f"block{j}.running_var"] = (H,)
            width_in = H
        shapes["out.weight"] = (width_in, 4)
        shapes["out.bias"] = (4,)
        return shapes

    @staticmethod
    def is_buffer(name: str) -> bool:
        return name.endswith(".running_mean") or name.endswith(".running_var")

    def _init_params(self) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(self.config.seed)
        params = {}
        for name, shape in self.param_shapes().items():
            if name.startswith("emb"):
                p = rng.standard_normal(shape)
            elif name.endswith(".weight"):
                bound = 1.0 / math.sqrt(shape[0])
                p = rng.uniform(-bound, bound, size=shape)
            elif name.endswith(".bias"):
                fan_in = self.param_shapes()[name.replace(".bias", ".weight")][0]
                bound = 1.0 / math.sqrt(fan_in)
                p = rng.uniform(-bound, bound, size=shape)
            elif name.endswith(".gamma") or name.endswith(".running_var"):
                p = np.ones(shape)
            else:
                p = np.zeros(shape)
            params[name] = p.astype(self.dtype)
        return params

    def _check_shapes(self) -> None:
        expected = self.param_shapes()
        if set(expected) != set(self.params):
            raise ValueError("parameter names do not match the model layout")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name}: shape {self.params[name].shape}, expected {shape}")

    def trainable(self) -> list[str]:
        return [n for n in self.params if not self.is_buffer(n)]

    def copy(self, dtype=None) -> "EngageNet":
        dtype = self.dtype if dtype is None else np.dtype(dtype)
        return EngageNet(self.layout, self.config,
                         {k: v.astype(dtype, copy=True) for k, v in self.params.items()}, dtype)

    # -- forward / backward -------------------------------------------------

    def inputs(self, batch: FeatureBatch) -> np.ndarray:
        if batch.sketch.shape[1] != self.layout.sketch_size:
            raise ValueError(f"sketch width {batch.sketch.shape[1]} != layout {self.layout.sketch_size}")
        if batch.numeric.shape[1] != len(self.layout.numeric):
            raise ValueError("numeric width does not match the model layout")
        if batch.categorical.shape[1] != len(self.layout.categorical):
            raise ValueError("categorical width does not match the model layout")
        parts = [
            batch.sketch.astype(self.dtype, copy=False),
            fourier.encode_matrix(batch.numeric, self.config.fourier_scales,
                                  self.config.fourier_log1p).astype(self.dtype),
        ]
        for i, (_, vocab) in enumerate(self.layout.categorical):
            ids = batch.categorical[:, i]
            if ids.size and (ids.min() < 0 or ids.max() >= vocab):
                raise ValueError(f"categorical column {i} out of range")
            parts.append(self.params[f"emb{i}"][ids])
        parts.append(batch.community_strengths.astype(self.dtype, copy=False))
        return np.concatenate(parts, axis=1)

    def forward(self, batch: FeatureBatch, train: bool = False, update_stats: bool = True,
                x: np.ndarray | None = None):
        """Logits ``(n, 4)`` and, in train mode, the cache for ``backward``.

        Train mode normalises with batch statistics (and, when
        ``update_stats``, moves the running averages); eval mode uses the
        frozen running statistics.
        """
        cfg = self.config
        p = self.params
        if x is None:
            x = self.inputs(batch)
        cache = _Cache(x, batch.categorical) if train else None
        h = x
        slope = self.dtype.type(cfg.leaky_relu_slope)
        for j in range(cfg.hidden_layers):
            z = h @ p[f"block{j}.weight"] + p[f"block{j}.bias"]
            if train:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                if update_stats:
                    m = cfg.bn_momentum
                    n = z.shape[0]
                    unbiased = var * (n / max(n - 1, 1))
                    p[f"block{j}.running_mean"] *= 1 - m
                    p[f"block{j}.running_mean"] += m * mu
                    p[f"block{j}.running_var"] *= 1 - m
                    p[f"block{j}.running_var"] += m * unbiased
            else:
                mu = p[f"block{j}.running_mean"]
                var = p[f"block{j}.running_var"]
            inv_std = 1.0 / np.sqrt(var + cfg.bn_eps)
            zhat = (z - mu) * inv_std
            pre = p[f"block{j}.gamma"] * zhat + p[f"block{j}.beta"]
            act = np.where(pre > 0, pre, slope * pre)
            if cache is not None:
                cache.blocks.append((h, zhat, inv_std, pre))
            h = act + h if j > 0 else act
        logits = h @ p["out.weight"] + p["out.bias"]
        if cache is not None:
            cache.h_last = h
        if not np.all(np.isfinite(logits)):
            raise FloatingPointError("non-finite activation in forward pass")
        return logits, cache

    def backward(self, cache: _Cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        cfg = self.config
        p = self.params
        grads: dict[str, np.ndarray] = {}
        grads["out.weight"] = cache.h_last.T @ dlogits
        grads["out.bias"] = dlogits.sum(axis=0)
        dh = dlogits @ p["out.weight"].T
        slope = self.dtype.type(cfg.leaky_relu_slope)
        for j in reversed(range(cfg.hidden_layers)):
            h_in, zhat, inv_std, pre = cache.blocks[j]
            dpre = dh * np.where(pre > 0, 1, slope).astype(self.dtype)
            grads[f"block{j}.gamma"] = (dpre * zhat).sum(axis=0)
            grads[f"block{j}.beta"] = dpre.sum(axis=0)
            dzhat = dpre * p[f"block{j}.gamma"]
            n = dzhat.shape[0]
            dz = (inv_std / n) * (n * dzhat - dzhat.sum(axis=0) - zhat * (dzhat * zhat).sum(axis=0))
            grads[f"block{j}.weight"] = h_in.T @ dz
            grads[f"block{j}.bias"] = dz.sum(axis=0)
            dh_in = dz @ p[f"block{j}.weight"].T
            dh = dh_in + dh if j > 0 else dh_in
        dx = dh
        off = self.layout.sketch_size + self.fourier_width
        for i, d in enumerate(self.emb_dims):
            g = np.zeros_like(p[f"emb{i}"])
            np.add.at(g, cache.cat[:, i], dx[:, off:off + d])
            grads[f"emb{i}"] = g
            off += d
        return grads

    def loss_and_grads(self, batch: FeatureBatch, targets: np.ndarray, update_stats: bool = True):
        logits, cache = self.forward(batch, train=True, update_stats=update_stats)
        loss = bce_sum(logits, targets)
        dlogits = ((_sigmoid(logits) - targets) / logits.shape[0]).astype(self.dtype)
        return loss, self.backward(cache, dlogits)

    def predict(self, batch: FeatureBatch) -> np.ndarray:
        """Probabilities ``(n, 4)`` using frozen statistics."""
        return InferenceNet(self).predict_batch(batch)


class InferenceNet:
    """Float32 forward path with batch norm folded into the linear layers."""

    def __init__(self, net: EngageNet):
        cfg = net.config
        p = net.params
        f32 = np.float32
        self.layout = net.layout
        self.scales = np.array([2.0**s for s in cfg.fourier_scales])
        self.log1p = cfg.fourier_log1p
        self.slope = f32(cfg.leaky_relu_slope)
        self.emb = [p[f"emb{i}"].astype(f32) for i in range(len(net.emb_dims))]
        self.vocab = [v for _, v in net.layout.categorical]
        self.layers = []
        for j in range(cfg.hidden_layers):
            scale = p[f"block{j}.gamma"].astype(np.float64) / np.sqrt(
                p[f"block{j}.running_var"].astype(np.float64) + cfg.bn_eps)
            w = p[f"block{j}.weight"].astype(np.float64) * scale
            b = (p[f"block{j}.bias"].astype(np.float64) - p[f"block{j}.running_mean"]) * scale \
                + p[f"block{j}.beta"]
            self.layers.append((np.ascontiguousarray(w, dtype=f32), b.astype(f32)))
        self.out_w = np.ascontiguousarray(p["out.weight"], dtype=f32)
        self.out_b = p["out.bias"].astype(f32)
        self.input_width = net.input_width

    def _fourier(self, numeric: np.ndarray) -> np.ndarray:
        v = np.asarray(numeric, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise ValueError("cannot encode non-finite values")
        if self.log1p:
            v = np.sign(v) * np.log1p(np.abs(v))
        v = np.clip(v, -fourier.MAX_ABS_INPUT, fourier.MAX_ABS_INPUT)
        z = v[..., None] / self.scales
        return np.concatenate([np.sin(z), np.cos(z)], axis=-1).reshape(v.shape[:-1] + (-1,))

    def _hidden(self, x: np.ndarray) -> np.ndarray:
        h = x
        for j, (w, b) in enumerate(self.layers):
            pre = h @ w
            pre += b
            act = np.maximum(pre, self.slope * pre)
            h = act + h if j > 0 else act
        logits = h @ self.out_w + self.out_b
        if not np.all(np.isfinite(logits)):
            raise FloatingPointError("non-finite activation in forward pass")
        p = 1.0 / (1.0 + np.exp(-logits.astype(np.float64)))
        return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)

    def _check_ids(self, cat: np.ndarray) -> None:
        for i, vocab in enumerate(self.vocab):
            c = cat[..., i]
            if np.any(c < 0) or np.any(c >= vocab):
                raise ValueError(f"categorical column {i} out of range")

    def predict_one(self, feats: AssembledFeatures) -> np.ndarray:
        if feats.sketch.shape[0] != self.layout.sketch_size:
            raise ValueError("feature layout does not match the model")
        cat = feats.categorical
        self._check_ids(cat)
        x = np.concatenate(
            [feats.sketch.astype(np.float32, copy=False), self._fourier(feats.numeric).astype(np.float32)]
            + [self.emb[i][cat[i]] for i in range(len(self.emb))]
            + [feats.community_strengths.astype(np.float32, copy=False)]
        )
        return self._hidden(x[None, :])[0]

    def predict_batch(self, batch: FeatureBatch) -> np.ndarray:
        if batch.sketch.shape[1] != self.layout.sketch_size:
            raise ValueError("feature layout does not match the model")
        cat = batch.categorical
        self._check_ids(cat)
        x = np.concatenate(
            [batch.sketch.astype(np.float32, copy=False), self._fourier(batch.numeric).astype(np.float32)]
            + [self.emb[i][cat[:, i]] for i in range(len(self.emb))]
            + [batch.community_strengths.astype(np.float32, copy=False)],
            axis=1,
        )
        return self._hidden(x)


# -- training -----------------------------------------------------------------


@dataclass
class TrainLog:
    stage: int
    epoch: int
    mean_loss: float
    steps: int


class AdamW:
    def __init__(self, params: dict[str, np.ndarray], names: Sequence[str], cfg: ModelConfig):
        self.names = list(names)
        self.cfg = cfg
        self.m = {n: np.zeros_like(params[n]) for n in self.names}
        self.v = {n: np.zeros_like(params[n]) for n in self.names}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        cfg = self.cfg
        self.t += 1
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for n in self.names:
            g = grads[n]
            m, v = self.m[n], self.v[n]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p = params[n]
            # decoupled weight decay
            p *= 1.0 - lr * cfg.weight_decay
            p -= (lr / c1) * m / (np.sqrt(v / c2) + cfg.adam_eps)


Part = tuple[FeatureBatch, np.ndarray]


def _concat_parts(parts: Sequence[Part]) -> Part:
    return FeatureBatch.concat([b for b, _ in parts]), np.concatenate([y for _, y in parts])


def run_stage(net: EngageNet, parts: Sequence[Part], epochs: int, stage: int, rng,
              on_epoch: Optional[Callable[[TrainLog], None]] = None) -> list[TrainLog]:
    """Train over ``parts`` for ``epochs`` with a fresh optimiser and linear LR decay to 0."""
    if epochs <= 0 or not parts:
        return []
    cfg = net.config
    batch, targets = _concat_parts(parts)
    targets = targets.astype(net.dtype)
    n = len(batch)
    bs = cfg.batch_size
    steps_per_epoch = sum(1 for s in range(0, n, bs) if min(bs, n - s) >= 2)
    total = max(1, epochs * steps_per_epoch)
    opt = AdamW(net.params, net.trainable(), cfg)
    logs = []
    step = 0
    for epoch in range(epochs):
        perm = rng.permutation(n)
        losses = []
        for s in range(0, n, bs):
            idx = perm[s:s + bs]
            if len(idx) < 2:
                continue
            loss, grads = net.loss_and_grads(batch.take(idx), targets[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(step, loss)
            lr = cfg.lr * (1.0 - step / total)
            opt.step(net.params, grads, lr)
            losses.append(loss)
            step += 1
        log = TrainLog(stage, epoch, float(np.mean(losses)) if losses else float("nan"), len(losses))
        logs.append(log)
        if on_epoch is not None:
            on_epoch(log)
    return logs


def train(stage1: Sequence[Part], stage2: Sequence[Part], config: ModelConfig, layout: FeatureLayout,
          on_epoch: Optional[Callable[[TrainLog], None]] = None) -> tuple[EngageNet, list[TrainLog]]:
    """Two-stage training; stage 2 continues from the stage-1 weights."""
    if not stage1:
        raise ValueError("stage 1 needs at least one part")
    net = EngageNet(layout, config)
    rng = np.random.default_rng(config.seed + 1)
    logs = run_stage(net, stage1, config.epochs_stage1, 1, rng, on_epoch)
    logs += run_stage(net, stage2, config.epochs_stage2, 2, rng, on_epoch)
    return net, logs


def prior_loss(targets: np.ndarray) -> float:
    """Loss of the constant predictor that outputs each reaction's base rate."""
    y = np.asarray(targets, dtype=np.float64)
    rate = np.clip(y.mean(axis=0), 1e-12, 1 - 1e-12)
    ent = -(rate * np.log(rate) + (1 - rate) * np.log(1 - rate))
    return float(ent.sum())


# -- gradient check -------------------------------------------------------------


def gradient_check(net: EngageNet, batch: FeatureBatch, targets: np.ndarray, n_checks: int = 200,
                   h: float = 1e-5, seed: int = 0, floor: float = 1e-6) -> float:
    """Max relative error between backprop and central differences.

    Runs on a float64 copy in train mode (batch statistics, running
    statistics untouched). Entries whose perturbation flips the sign of
    any leaky-ReLU input are skipped, which keeps the check off the kink.
    The relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor
    keeps exactly-zero gradients (a bias feeding batch norm) from turning
    float rounding in the difference quotient into a huge ratio.
    """
    net64 = net.copy(np.float64)
    y = np.asarray(targets, dtype=np.float64)
    _, grads = net64.loss_and_grads(batch, y, update_stats=False)
    rng = np.random.default_rng(seed)
    names = net64.trainable()
    sizes = np.array([net64.params[n].size for n in names])
    base_signs = _signs(net64, batch)
    worst = 0.0
    for _ in range(n_checks):
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        arr = net64.params[name].reshape(-1)
        if name.startswith("emb"):
            # only rows that appear in the batch have non-trivial gradients
            col = int(name[3:])
            row = int(rng.choice(batch.categorical[:, col]))
            width = net64.params[name].shape[1]
            k = row * width + int(rng.integers(width))
        else:
            k = int(rng.integers(arr.size))
        old = arr[k]
        arr[k] = old + h
        lp = bce_sum(net64.forward(batch, train=True, update_stats=False)[0], y)
        sp = _signs(net64, batch)
        arr[k] = old - h
        lm = bce_sum(net64.forward(batch, train=True, update_stats=False)[0], y)
        sm = _signs(net64, batch)
        arr[k] = old
        if not (_same(sp, base_signs) and _same(sm, base_signs)):
            continue
        num = (lp - lm) / (2 * h)
        ana = float(grads[name].reshape(-1)[k])
        rel = abs(ana - num) / max(abs(ana), abs(num), floor)
        worst = max(worst, rel)
    return worst


def _signs(net: EngageNet, batch: FeatureBatch) -> list[np.ndarray]:
    _, cache = net.forward(batch, train=True, update_stats=False)
    return [blk[3] > 0 for blk in cache.blocks]


def _same(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


# -- model file -------------------------------------------------------------------


def save_model(path, net: EngageNet, meta: str | None = None) -> None:
    header = {"config": net.config.to_dict(), "layout": net.layout.to_dict()}
    digest = hashlib.sha256()
    with open(path, "wb") as fh:
        def put(data: bytes):
            digest.update(data)
            fh.write(data)

        put((MODEL_HEADER + "\n").encode())
        if meta is not None:
            put(f"#config {meta}\n".encode())
        put(("#model " + json.dumps(header, sort_keys=True) + "\n").encode())
        put(f"#tensors {len(net.params)}\n".encode())
        for name, arr in net.params.items():
            data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            shape = ",".join(str(s) for s in arr.shape)
            put(f"{name} f4 {shape} {len(data)}\n".encode())
            put(data)
            put(b"\n")
        fh.write(f"#checksum sha256 {digest.hexdigest()}\n".encode())


def load_model(path) -> EngageNet:
    if not os.path.exists(path):
        raise FileNotFoundError(f"model file not found: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    tail = blob.rstrip(b"\n").rsplit(b"\n", 1)
    if len(tail) != 2 or not tail[1].startswith(b"#checksum sha256 "):
        raise LogFormatError("missing checksum line (truncated file?)", path)
    body = blob[: len(tail[0]) + 1]
    if hashlib.sha256(body).hexdigest() != tail[1].split()[2].decode():
        raise LogFormatError("checksum mismatch", path)
    pos = 0

    def line() -> str:
        nonlocal pos
        end = body.index(b"\n", pos)
        out = body[pos:end].decode()
        pos = end + 1
        return out

    if line() != MODEL_HEADER:
        raise LogFormatError("bad header", path, 1)
    text = line()
    if text.startswith("#config "):
        text = line()
    if not text.startswith("#model "):
        raise LogFormatError("missing #model line", path)
    header = json.loads(text[len("#model "):])
    n = int(line().split()[1])
    params = {}
    for _ in range(n):
        name, dtype, shape, nbytes = line().split()
        if dtype != "f4":
            raise LogFormatError(f"unsupported dtype {dtype}", path)
        nbytes = int(nbytes)
        arr = np.frombuffer(body, dtype="<f4", count=nbytes // 4, offset=pos)
        dims = tuple(int(s) for s in shape.split(",") if s)
        params[name] = arr.reshape(dims).astype(np.float32)
        pos += nbytes + 1
    return EngageNet(FeatureLayout.from_dict(header["layout"]), ModelConfig.from_dict(header["config"]),
                     params)
