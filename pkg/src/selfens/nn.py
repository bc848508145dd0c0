"""Dense-tensor network core with reverse-mode differentiation.

Supports exactly the layer zoo the training recipes need: additive
Gaussian input noise, 2-D convolution (stride 1, same/valid padding),
leaky ReLU, non-overlapping max pooling, inverted dropout, dense layers,
global average pooling and softmax, with optional weight normalization
and mean-only batch normalization on the data layers.

`forward` returns the output plus an activation tape; `backward` walks the
tape and produces one gradient per trainable tensor. Both are pure given
(params, ctx); all stochastic draws go through the context so they can be
recorded and replayed bit-exactly (finite-difference checks rely on this).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensorio
from .errors import ConfigurationError, DivergenceError
from .optimize import AdamState
from .zoo import Layer, chain_shapes


@dataclass
class EvalContext:
    """Stochastic evaluation context for one forward pass.

    mode 'eval' draws no masks and adds no noise. In 'train' mode the
    noise and dropout layers draw from their own generators; with
    `record` set the draws are appended to `recorded`, and a context
    carrying `replay` reproduces a recorded draw sequence exactly
    (the cursor rewinds at every `forward`, so one replay context can
    serve many evaluations). `update_stats` gates the running-mean
    updates of mean-only batch normalization.
    """

    mode: str = "eval"
    noise_rng: np.random.Generator | None = None
    dropout_rng: np.random.Generator | None = None
    record: bool = False
    replay: list[np.ndarray] | None = None
    update_stats: bool = True
    recorded: list[np.ndarray] = field(default_factory=list)
    _cursor: int = 0

    @property
    def train(self) -> bool:
        return self.mode == "train"

    def draw(self, kind: str, draw_fn: Callable[[], np.ndarray]) -> np.ndarray:
        if self.replay is not None:
            if self._cursor >= len(self.replay):
                raise ConfigurationError("replay context exhausted; layer zoo changed?")
            out = self.replay[self._cursor]
            self._cursor += 1
            return out
        out = draw_fn()
        if self.record:
            self.recorded.append(out)
        return out

    def rng_for(self, kind: str) -> np.random.Generator:
        rng = self.noise_rng if kind == "noise" else self.dropout_rng
        if rng is None:
            raise ConfigurationError(
                f"train-mode forward with a stochastic {kind} layer needs a generator")
        return rng


def train_context(seed: int = 0, **kwargs) -> EvalContext:
    """Convenience train-mode context with both generators from one seed."""
    ss = np.random.SeedSequence(seed)
    noise_ss, dropout_ss = ss.spawn(2)
    return EvalContext(mode="train", noise_rng=np.random.default_rng(noise_ss),
                       dropout_rng=np.random.default_rng(dropout_ss), **kwargs)


@dataclass
class NetworkParams:
    """Trainable tensors plus the non-trainable normalization state.

    `tensors` holds weights/biases and the per-unit weight-norm scales;
    `stats`/`counts` hold the running means of mean-only batch norm and
    their update counts (the eval-time mean is served bias-corrected,
    running / (1 - momentum^count)).
    """

    tensors: dict[str, np.ndarray]
    stats: dict[str, np.ndarray]
    counts: dict[str, int]
    dtype: Any = np.float32

    def gradient_slots(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def copy(self) -> "NetworkParams":
        return NetworkParams(tensors={k: v.copy() for k, v in self.tensors.items()},
                             stats={k: v.copy() for k, v in self.stats.items()},
                             counts=dict(self.counts), dtype=self.dtype)


@dataclass
class Tape:
    """Activation records from one train-mode forward, enough for backward."""

    layers: tuple[Layer, ...]
    params: NetworkParams
    records: list[dict]
    mode: str
    output_shape: tuple[int, ...]


def _fan_in(layer: Layer, in_shape: tuple[int, ...]) -> int:
    if layer.kind == "conv":
        return in_shape[0] * layer.kernel * layer.kernel
    flat = 1
    for extent in in_shape:
        flat *= extent
    return flat


def _wn_norms(v: np.ndarray) -> np.ndarray:
    axes = tuple(range(1, v.ndim)) if v.ndim == 4 else (0,)
    return np.sqrt(np.sum(np.square(v), axis=axes))


def _effective_weight(v: np.ndarray, g: np.ndarray, norms: np.ndarray) -> np.ndarray:
    scale = g / norms
    if v.ndim == 4:
        return v * scale[:, None, None, None]
    return v * scale[None, :]


def init_params(layers: tuple[Layer, ...], input_shape: tuple[int, ...],
                rng: np.random.Generator, dtype=np.float32) -> NetworkParams:
    """Fan-in-scaled Gaussian init; weight-norm scales start at the raw
    direction norms so the effective weights equal the Gaussian draw."""
    shapes = chain_shapes(layers, input_shape)
    tensors: dict[str, np.ndarray] = {}
    stats: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    prev = tuple(input_shape)
    for i, layer in enumerate(layers):
        if layer.kind in ("conv", "dense"):
            if layer.kind == "conv":
                out_c, k = layer.channels, layer.kernel
                shape = (out_c, prev[0], k, k)
            else:
                out_c = layer.width
                shape = (_fan_in(layer, prev), out_c)
            std = np.sqrt(2.0 / _fan_in(layer, prev))
            v = rng.normal(0.0, std, size=shape).astype(dtype)
            name = f"layer{i}"
            if layer.weight_norm:
                tensors[f"{name}.V"] = v
                tensors[f"{name}.g"] = _wn_norms(v).astype(dtype)
            else:
                tensors[f"{name}.W"] = v
            tensors[f"{name}.b"] = np.zeros(out_c, dtype=dtype)
            if layer.mean_bn:
                stats[f"{name}.bn_mean"] = np.zeros(out_c, dtype=dtype)
                counts[f"{name}.bn_mean"] = 0
        prev = shapes[i]
    return NetworkParams(tensors=tensors, stats=stats, counts=counts, dtype=dtype)


def _layer_weight(params: NetworkParams, i: int, layer: Layer):
    name = f"layer{i}"
    b = params.tensors[f"{name}.b"]
    if layer.weight_norm:
        v = params.tensors[f"{name}.V"]
        g = params.tensors[f"{name}.g"]
        norms = _wn_norms(v)
        return _effective_weight(v, g, norms), b, v, g, norms
    return params.tensors[f"{name}.W"], b, None, None, None


def _conv2d(x: np.ndarray, w: np.ndarray, padding: str) -> tuple[np.ndarray, np.ndarray]:
    """Stride-1 cross-correlation. Returns (output, padded input)."""
    k = w.shape[2]
    if x.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ConfigurationError(
            f"conv expects (B, {w.shape[1]}, H, W) input, got {x.shape}")
    if padding == "same":
        if k % 2 == 0:
            raise ConfigurationError("same padding requires an odd kernel")
        p = (k - 1) // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    else:
        xp = x
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))
    y = np.einsum("bihwkl,oikl->bohw", windows, w, optimize=True)
    return y, xp


def _conv2d_backward(g: np.ndarray, xp: np.ndarray, w: np.ndarray,
                     padding: str) -> tuple[np.ndarray, np.ndarray]:
    """Gradients (dW, dx) of the stride-1 cross-correlation."""
    k = w.shape[2]
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))
    dw = np.einsum("bihwkl,bohw->oikl", windows, g, optimize=True)
    dxp = np.zeros_like(xp)
    ho, wo = g.shape[2], g.shape[3]
    for dy in range(k):
        for dx in range(k):
            dxp[:, :, dy:dy + ho, dx:dx + wo] += np.einsum(
                "bohw,oi->bihw", g, w[:, :, dy, dx], optimize=True)
    if padding == "same" and k > 1:
        p = (k - 1) // 2
        return dw, dxp[:, :, p:-p, p:-p]
    return dw, dxp


def _bn_reduce_axes(y: np.ndarray) -> tuple[int, ...]:
    return (0, 2, 3) if y.ndim == 4 else (0,)


def _expand(vec: np.ndarray, like: np.ndarray) -> np.ndarray:
    return vec[None, :, None, None] if like.ndim == 4 else vec[None, :]


def forward(params: NetworkParams, layers: tuple[Layer, ...], x: np.ndarray,
            ctx: EvalContext) -> tuple[np.ndarray, Tape]:
    """Run the network on a batch. Returns (output, tape).

    The tape from a train-mode call is sufficient for `backward`; eval
    mode is deterministic and mask-free.
    """
    ctx._cursor = 0
    x = np.asarray(x, dtype=params.dtype)
    records: list[dict] = []
    for i, layer in enumerate(layers):
        rec: dict = {"i": i}
        kind = layer.kind
        if kind == "gaussian_noise":
            if ctx.train and layer.sigma > 0:
                noise = ctx.draw("noise", lambda: ctx.rng_for("noise").normal(
                    0.0, layer.sigma, size=x.shape).astype(params.dtype))
                x = x + noise
        elif kind == "dropout":
            if ctx.train and layer.rate > 0:
                keep = 1.0 - layer.rate

                def draw_mask(shape=x.shape, keep=keep):
                    # Inverted scaling: kept units divided by the keep
                    # probability at train time, eval needs no rescale.
                    mask = (ctx.rng_for("dropout").random(shape) < keep)
                    mask = mask.astype(params.dtype)
                    mask /= keep
                    return mask

                mask = ctx.draw("dropout", draw_mask)
                rec["mask"] = mask
                x = x * mask
        elif kind == "leaky_relu":
            nonneg = x >= 0
            rec["nonneg"] = nonneg
            x = np.where(nonneg, x, layer.slope * x)
        elif kind == "softmax":
            shifted = x - x.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            x = e / e.sum(axis=1, keepdims=True)
            rec["probs"] = x
        elif kind == "max_pool":
            k = layer.kernel
            b, c, h, w = x.shape
            if h % k or w % k:
                raise ConfigurationError(
                    f"layer {i}: {h}x{w} not divisible by pool size {k}")
            tiles = x.reshape(b, c, h // k, k, w // k, k)
            tiles = tiles.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // k, w // k, k * k)
            arg = tiles.argmax(axis=-1)
            rec.update(arg=arg, in_shape=x.shape)
            x = np.take_along_axis(tiles, arg[..., None], axis=-1)[..., 0]
        elif kind == "global_avg_pool":
            rec["in_shape"] = x.shape
            x = x.mean(axis=(2, 3))
        elif kind == "conv":
            w_eff, b_vec, v, g, norms = _layer_weight(params, i, layer)
            y, xp = _conv2d(x, w_eff, layer.padding)
            rec.update(xp=xp, w=w_eff, v=v, g=g, norms=norms)
            x = _apply_bias_bn(params, layer, i, y, b_vec, ctx, rec)
        elif kind == "dense":
            w_eff, b_vec, v, g, norms = _layer_weight(params, i, layer)
            in_shape = x.shape
            xf = x.reshape(x.shape[0], -1)
            if xf.shape[1] != w_eff.shape[0]:
                raise ConfigurationError(
                    f"layer {i} (dense): expects {w_eff.shape[0]} features, "
                    f"got {xf.shape[1]}")
            y = xf @ w_eff
            rec.update(xf=xf, in_shape=in_shape, w=w_eff, v=v, g=g, norms=norms)
            x = _apply_bias_bn(params, layer, i, y, b_vec, ctx, rec)
        else:
            raise ConfigurationError(f"layer {i}: unknown kind '{kind}'")
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite activation after layer {i} ({kind})")
        records.append(rec)
    tape = Tape(layers=layers, params=params, records=records, mode=ctx.mode,
                output_shape=x.shape)
    return x, tape


def _apply_bias_bn(params: NetworkParams, layer: Layer, i: int, y: np.ndarray,
                   b_vec: np.ndarray, ctx: EvalContext, rec: dict) -> np.ndarray:
    if not layer.mean_bn:
        rec["bn"] = False
        return y + _expand(b_vec, y)
    rec["bn"] = True
    key = f"layer{i}.bn_mean"
    if ctx.train:
        mu = y.mean(axis=_bn_reduce_axes(y))
        if ctx.update_stats:
            mom = layer.bn_momentum
            params.stats[key] = (mom * params.stats[key]
                                 + (1.0 - mom) * mu).astype(params.dtype)
            params.counts[key] += 1
    else:
        count = params.counts[key]
        if count > 0:
            mu = params.stats[key] / (1.0 - layer.bn_momentum ** count)
        else:
            mu = np.zeros_like(params.stats[key])
    return y - _expand(mu.astype(params.dtype), y) + _expand(b_vec, y)


def backward(tape: Tape, loss_grad: np.ndarray) -> dict[str, np.ndarray]:
    """Walk the tape in reverse; returns one gradient per trainable tensor."""
    if tape.mode != "train":
        raise ConfigurationError("backward needs a tape from a train-mode forward")
    g = np.asarray(loss_grad, dtype=tape.params.dtype)
    if g.shape != tape.output_shape:
        raise ConfigurationError(
            f"loss gradient shape {g.shape} does not match output {tape.output_shape}")
    grads = tape.params.gradient_slots()
    for rec, layer in zip(reversed(tape.records), reversed(tape.layers)):
        kind = layer.kind
        i = rec["i"]
        if kind == "gaussian_noise":
            continue
        if kind == "dropout":
            if "mask" in rec:
                g = g * rec["mask"]
        elif kind == "leaky_relu":
            g = g * np.where(rec["nonneg"], 1.0, layer.slope).astype(g.dtype)
        elif kind == "softmax":
            p = rec["probs"]
            g = p * (g - np.sum(g * p, axis=1, keepdims=True))
        elif kind == "max_pool":
            k = layer.kernel
            b, c, h, w = rec["in_shape"]
            tiles = np.zeros((b, c, h // k, w // k, k * k), dtype=g.dtype)
            np.put_along_axis(tiles, rec["arg"][..., None], g[..., None], axis=-1)
            g = (tiles.reshape(b, c, h // k, w // k, k, k)
                 .transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w))
        elif kind == "global_avg_pool":
            b, c, h, w = rec["in_shape"]
            g = np.broadcast_to(g[:, :, None, None] / (h * w), (b, c, h, w)).astype(g.dtype)
        elif kind in ("conv", "dense"):
            g, dw = _linear_backward(layer, rec, g, grads, i)
            _store_weight_grads(layer, rec, dw, grads, i)
    return grads


def _linear_backward(layer: Layer, rec: dict, g: np.ndarray,
                     grads: dict[str, np.ndarray], i: int):
    axes = _bn_reduce_axes(g)
    grads[f"layer{i}.b"] = g.sum(axis=axes)
    if rec["bn"]:
        g = g - g.mean(axis=axes, keepdims=True)
    if layer.kind == "conv":
        dw, dx = _conv2d_backward(g, rec["xp"], rec["w"], layer.padding)
        return dx, dw
    dw = rec["xf"].T @ g
    dx = (g @ rec["w"].T).reshape(rec["in_shape"])
    return dx, dw


def _store_weight_grads(layer: Layer, rec: dict, dw: np.ndarray,
                        grads: dict[str, np.ndarray], i: int) -> None:
    if not layer.weight_norm:
        grads[f"layer{i}.W"] = dw
        return
    v, g_scale, norms = rec["v"], rec["g"], rec["norms"]
    if v.ndim == 4:
        axes = (1, 2, 3)
        shape = (-1, 1, 1, 1)
    else:
        axes = (0,)
        shape = (1, -1)
    v_hat = v / norms.reshape(shape)
    dot = np.sum(dw * v_hat, axis=axes)
    grads[f"layer{i}.g"] = dot
    scale = (g_scale / norms).reshape(shape)
    grads[f"layer{i}.V"] = scale * (dw - dot.reshape(shape) * v_hat)


def calibrate_scales(params: NetworkParams, layers: tuple[Layer, ...],
                     batch: np.ndarray) -> None:
    """Data-dependent init: rescale weight-norm layers so their first-batch
    pre-activations have unit variance per unit (and zero mean where no
    mean-only BN follows). Deterministic clean pass: no noise, no dropout,
    no running-stat updates."""
    x = np.asarray(batch, dtype=params.dtype)
    eps = 1e-8
    for i, layer in enumerate(layers):
        kind = layer.kind
        if kind in ("gaussian_noise", "dropout"):
            continue
        if kind == "leaky_relu":
            x = np.where(x >= 0, x, layer.slope * x)
        elif kind == "softmax":
            e = np.exp(x - x.max(axis=1, keepdims=True))
            x = e / e.sum(axis=1, keepdims=True)
        elif kind == "max_pool":
            k = layer.kernel
            b, c, h, w = x.shape
            tiles = x.reshape(b, c, h // k, k, w // k, k)
            x = tiles.max(axis=(3, 5))
        elif kind == "global_avg_pool":
            x = x.mean(axis=(2, 3))
        elif kind in ("conv", "dense"):
            name = f"layer{i}"
            w_eff, b_vec, _, _, _ = _layer_weight(params, i, layer)
            if kind == "conv":
                t, _ = _conv2d(x, w_eff, layer.padding)
            else:
                t = x.reshape(x.shape[0], -1) @ w_eff
            axes = _bn_reduce_axes(t)
            mu = t.mean(axis=axes)
            sd = t.std(axis=axes) + eps
            if layer.weight_norm:
                params.tensors[f"{name}.g"] = (
                    params.tensors[f"{name}.g"] / sd).astype(params.dtype)
                t = t / _expand(sd.astype(params.dtype), t)
                mu = mu / sd
                if not layer.mean_bn:
                    params.tensors[f"{name}.b"] = (-mu).astype(params.dtype)
                    b_vec = params.tensors[f"{name}.b"]
            if layer.mean_bn:
                x = t - _expand(mu.astype(params.dtype), t) + _expand(b_vec, t)
            else:
                x = t + _expand(b_vec, t)


def save_checkpoint(path: str, params: NetworkParams,
                    adam: AdamState | None = None) -> None:
    """Persist parameters (and optionally optimizer state) as float32 records."""
    records: dict[str, np.ndarray] = {}
    for k, v in params.tensors.items():
        records[f"param.{k}"] = v
    for k, v in params.stats.items():
        records[f"stat.{k}"] = v
        records[f"count.{k}"] = np.array([params.counts[k]], dtype=np.float32)
    if adam is not None:
        for k, v in adam.m.items():
            records[f"adam.m.{k}"] = v
        for k, v in adam.v.items():
            records[f"adam.v.{k}"] = v
        records["adam.meta"] = np.array([adam.t, adam.beta2, adam.eps], dtype=np.float32)
    tensorio.save_tensors(path, records)


def load_checkpoint(path: str, dtype=np.float32) -> tuple[NetworkParams, AdamState | None]:
    raw = tensorio.load_tensors(path)
    params = NetworkParams(tensors={}, stats={}, counts={}, dtype=dtype)
    adam: AdamState | None = None
    for key, value in raw.items():
        arr = value.astype(dtype)
        if key.startswith("param."):
            params.tensors[key[6:]] = arr
        elif key.startswith("stat."):
            params.stats[key[5:]] = arr
        elif key.startswith("count."):
            params.counts[key[6:]] = int(value[0])
        elif key.startswith("adam."):
            if adam is None:
                adam = AdamState()
            if key == "adam.meta":
                adam.t, adam.beta2, adam.eps = int(value[0]), float(value[1]), float(value[2])
            elif key.startswith("adam.m."):
                adam.m[key[7:]] = arr
            elif key.startswith("adam.v."):
                adam.v[key[7:]] = arr
    return params, adam
