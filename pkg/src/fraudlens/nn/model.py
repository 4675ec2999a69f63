"""Layer stack, parameter initialization, exact backprop, and Adam updates.

The architecture is two conv blocks (conv3x3 xC, conv3x3 xC, maxpool 2x2,
dropout 0.25) with C doubling between blocks, then flatten, a hidden dense
layer with ReLU and dropout 0.5, and a single sigmoid output unit trained
with binary cross entropy.

Layers work on NHWC arrays; convolution and pooling dispatch to the
compiled kernels, dense layers to BLAS. Every layer exposes an exact
backward pass, and dropout masks replay from per-layer seeded streams, so
gradients check out against central finite differences to float64
precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .ops import _sigmoid

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

MODE_ROWS = {"ExPost": 13, "ExAnte": 12}


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and optimizer configuration.

    Kernels are fixed 3x3 with same padding; the second block always doubles
    the first block's channel count. dtype "float64" is for verification
    builds (gradient checks); training uses float32.
    """

    input_h: int
    input_w: int
    channels: tuple = (32, 64)
    dense_hidden: int = 128
    conv_dropout: float = 0.25
    dense_dropout: float = 0.5
    lr: float = 0.0005
    batch_size: int = 64
    epochs: int = 8
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.input_h < 4 or self.input_w < 4:
            raise ShapeError("input too small for two 2x2 pools")
        if self.channels[1] != 2 * self.channels[0]:
            raise ValueError("second block must double the channels")
        if not (0 <= self.conv_dropout < 1 and 0 <= self.dense_dropout < 1):
            raise ValueError("dropout rates must be in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def flat_size(self) -> int:
        h = self.input_h // 2 // 2
        w = self.input_w // 2 // 2
        return h * w * self.channels[1]


def _he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D:
    """3x3 same-padding stride-1 convolution (cross-correlation), NHWC.

    Forward and both gradients run through the compiled kernels; the padded
    input is kept in the cache for the weight gradient. Semantics match
    ops.xcorr2d applied per (input channel, output channel) pair with
    padding 1, which the tests assert directly.
    """

    def __init__(self, name: str, c_in: int, c_out: int, rng, dtype):
        self.name = name
        self.c_in = c_in
        self.c_out = c_out
        self.W = _he_uniform(rng, (3, 3, c_in, c_out), 9 * c_in, dtype)
        self.b = np.zeros(c_out, dtype=dtype)

    @property
    def params(self):
        return {f"{self.name}.W": self.W, f"{self.name}.b": self.b}

    def forward(self, x, training, rng):
        if x.ndim != 4 or x.shape[3] != self.c_in:
            raise ShapeError(f"{self.name}: expected (B,H,W,{self.c_in}), got {x.shape}")
        b, h, w, _ = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        y = np.empty((b, h, w, self.c_out), dtype=x.dtype)
        kernels.conv3x3_fwd(xp, self.W, self.b, y)
        return y, xp

    def backward(self, dy, x, xp, grads, need_dx: bool = True):
        dy = np.ascontiguousarray(dy)
        dw9 = np.zeros((9, self.c_in, self.c_out), dtype=self.W.dtype)
        kernels.conv3x3_dw(xp, dy, dw9)
        grads[f"{self.name}.W"] = dw9.reshape(3, 3, self.c_in, self.c_out)
        grads[f"{self.name}.b"] = dy.sum(axis=(0, 1, 2))
        if not need_dx:
            return None
        w_flip = np.ascontiguousarray(self.W[::-1, ::-1].transpose(0, 1, 3, 2))
        dyp = np.pad(dy, ((0, 0), (1, 1), (1, 1), (0, 0)))
        dx = np.empty_like(x)
        kernels.conv3x3_fwd(dyp, w_flip, np.zeros(self.c_in, dtype=x.dtype), dx)
        return dx


class ReLU:
    name = "relu"
    params: dict = {}

    def forward(self, x, training, rng):
        return np.maximum(x, 0), None

    def backward(self, dy, x, extra, grads):
        if x.ndim > 2:
            dx = np.empty_like(dy)
            kernels.relu_bwd(dy.ravel(), x.ravel(), dx.ravel())
            return dx
        return dy * (x > 0)


class MaxPool2:
    """2x2 stride-2 max pool; odd trailing row/column dropped, zero gradient.

    First maximum in window order (top-left, top-right, bottom-left,
    bottom-right) wins ties; matches ops.maxpool2d values.
    """

    name = "pool"
    params: dict = {}

    def forward(self, x, training, rng):
        b, h, w, c = x.shape
        if h < 2 or w < 2:
            raise ShapeError("pooling needs spatial dims >= 2")
        oh, ow = h // 2, w // 2
        y = np.empty((b, oh, ow, c), dtype=x.dtype)
        arg = np.empty((b, oh, ow, c), dtype=np.int8)
        kernels.maxpool2_fwd(x, y, arg)
        return y, arg

    def backward(self, dy, x, arg, grads):
        dx = np.zeros_like(x)
        kernels.maxpool2_bwd(np.ascontiguousarray(dy), arg, dx)
        return dx


class Dropout:
    def __init__(self, name: str, p: float):
        self.name = name
        self.p = p
        self.params: dict = {}

    def forward(self, x, training, rng):
        if not training or self.p == 0.0:
            return x, None
        keep = rng.random(x.shape) >= self.p
        mask = keep.astype(x.dtype) / (1.0 - self.p)
        return x * mask, mask

    def backward(self, dy, x, mask, grads):
        return dy if mask is None else dy * mask


class Flatten:
    name = "flatten"
    params: dict = {}

    def forward(self, x, training, rng):
        return x.reshape(x.shape[0], -1), None

    def backward(self, dy, x, extra, grads):
        return dy.reshape(x.shape)


class Dense:
    def __init__(self, name: str, n_in: int, n_out: int, rng, dtype):
        self.name = name
        self.W = _he_uniform(rng, (n_in, n_out), n_in, dtype)
        self.b = np.zeros(n_out, dtype=dtype)

    @property
    def params(self):
        return {f"{self.name}.W": self.W, f"{self.name}.b": self.b}

    def forward(self, x, training, rng):
        if x.shape[1] != self.W.shape[0]:
            raise ShapeError(f"{self.name}: expected {self.W.shape[0]} inputs, got {x.shape[1]}")
        return x @ self.W + self.b, None

    def backward(self, dy, x, extra, grads):
        grads[f"{self.name}.W"] = x.T @ dy
        grads[f"{self.name}.b"] = dy.sum(axis=0)
        return dy @ self.W.T


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


@dataclass
class Cache:
    """Per-layer inputs (acts[i] feeds layer i), extras (pool argmax,
    dropout masks), and the pre-sigmoid logits."""

    acts: list
    extras: list
    logits: np.ndarray
    training: bool


class Model:
    def __init__(self, config: ModelConfig):
        self.config = config
        dtype = config.np_dtype
        c1, c2 = config.channels
        streams = np.random.SeedSequence(config.seed).spawn(6)
        rngs = [np.random.default_rng(s) for s in streams]
        self.layers = [
            Conv2D("conv1", 1, c1, rngs[0], dtype),
            ReLU(),
            Conv2D("conv2", c1, c1, rngs[1], dtype),
            ReLU(),
            MaxPool2(),
            Dropout("drop1", config.conv_dropout),
            Conv2D("conv3", c1, c2, rngs[2], dtype),
            ReLU(),
            Conv2D("conv4", c2, c2, rngs[3], dtype),
            ReLU(),
            MaxPool2(),
            Dropout("drop2", config.conv_dropout),
            Flatten(),
            Dense("dense1", config.flat_size, config.dense_hidden, rngs[4], dtype),
            ReLU(),
            Dropout("drop3", config.dense_dropout),
            Dense("dense2", config.dense_hidden, 1, rngs[5], dtype),
        ]
        #: index of the layer whose output is the final conv-stage feature
        #: map (block-2 pool output) used by Grad-CAM.
        self.feature_layer = 10
        #: conv layers in network order, 1-based addressing for explain.
        self.conv_layers = (0, 2, 6, 8)
        self.adam = AdamState(
            m={k: np.zeros_like(v) for k, v in self.params().items()},
            v={k: np.zeros_like(v) for k, v in self.params().items()},
        )

    def params(self) -> dict:
        out: dict = {}
        for layer in self.layers:
            out.update(layer.params)
        return out

    def set_params(self, values: dict) -> None:
        for layer in self.layers:
            for key in layer.params:
                np.copyto(layer.params[key], values[key])


def build_model(mode: str, f: int, **overrides) -> Model:
    """Paper-architecture model for one prediction mode and feature count.

    ExPost inputs are 13 x F, ExAnte 12 x F, both single channel.
    """
    if mode not in MODE_ROWS:
        raise ValueError(f"mode must be one of {tuple(MODE_ROWS)}")
    if f < 4:
        raise ShapeError("need at least 4 feature columns")
    cfg = ModelConfig(input_h=MODE_ROWS[mode], input_w=f, **overrides)
    return Model(cfg)


def _as_batch(model: Model, batch: np.ndarray) -> np.ndarray:
    x = np.asarray(batch, dtype=model.config.np_dtype)
    if x.ndim == 3:
        x = x[..., None]
    cfg = model.config
    if x.ndim != 4 or x.shape[1:] != (cfg.input_h, cfg.input_w, 1):
        raise ShapeError(
            f"batch shape {x.shape} does not match ({cfg.input_h}, {cfg.input_w}, 1)"
        )
    return x


def forward(model: Model, batch: np.ndarray, training: bool = False, seed: int = 0):
    """Run the stack; returns (probs, cache).

    Dropout draws one RNG stream per layer from (seed, layer index), so a
    fixed seed replays identical masks. Inference is deterministic and pure.
    """
    x = _as_batch(model, batch)
    acts = [x]
    extras = []
    for i, layer in enumerate(model.layers):
        rng = None
        if training and isinstance(layer, Dropout):
            rng = np.random.default_rng(np.random.SeedSequence([seed & 0x7FFFFFFF, i]))
        x, extra = layer.forward(x, training, rng)
        acts.append(x)
        extras.append(extra)
    logits = x[:, 0]
    probs = _sigmoid(logits.astype(np.float64))
    return probs, Cache(acts=acts, extras=extras, logits=logits, training=training)


def forward_from(model: Model, layer_index: int, x: np.ndarray) -> np.ndarray:
    """Inference logits obtained by feeding ``x`` into layer ``layer_index``."""
    for layer in model.layers[layer_index:]:
        x, _ = layer.forward(x, False, None)
    return x[:, 0]


def backward(model: Model, cache: Cache, y: np.ndarray) -> dict:
    """Exact BCE gradients for every parameter, replaying cached masks.

    Uses the sigmoid+BCE shortcut d(loss)/d(logit) = (p - y) / N; the
    gradient matches finite differences of bce_loss(y, forward(...)) as long
    as no probability hits the clamp.
    """
    if cache is None:
        raise ValueError("missing forward cache")
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != cache.logits.shape[0]:
        raise ShapeError("labels do not match cached batch")
    p = _sigmoid(cache.logits.astype(np.float64))
    dy = ((p - y) / y.shape[0]).astype(model.config.np_dtype)[:, None]
    grads: dict = {}
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        if i == 0 and isinstance(layer, Conv2D):
            layer.backward(dy, cache.acts[i], cache.extras[i], grads, need_dx=False)
            break
        dy = layer.backward(dy, cache.acts[i], cache.extras[i], grads)
    return grads


def backprop_to_layer(model: Model, cache: Cache, dy_logit: np.ndarray, stop_layer: int) -> np.ndarray:
    """Gradient of the pre-sigmoid logit w.r.t. the output of ``stop_layer``.

    Walks backward from the head down to (but not through) ``stop_layer``.
    With an inference cache, dropout layers pass gradients unchanged.
    """
    dy = np.asarray(dy_logit, dtype=model.config.np_dtype)[:, None]
    grads: dict = {}
    for i in range(len(model.layers) - 1, stop_layer, -1):
        dy = model.layers[i].backward(dy, cache.acts[i], cache.extras[i], grads)
    return dy


def adam_step(model: Model, grads: dict, lr: float) -> Model:
    """One bias-corrected Adam update (beta1 0.9, beta2 0.999, eps 1e-8)."""
    params = model.params()
    if set(grads) != set(params):
        raise ShapeError("gradient names do not match parameters")
    state = model.adam
    state.t += 1
    b1c = 1.0 - ADAM_BETA1 ** state.t
    b2c = 1.0 - ADAM_BETA2 ** state.t
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape mismatch for {key}")
        m = state.m[key]
        v = state.v[key]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p -= lr * (m / b1c) / (np.sqrt(v / b2c) + ADAM_EPS)
    return model
