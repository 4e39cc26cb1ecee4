"""A small convolutional network written directly in numpy.

Default architecture (input ``(1, 32, 32)``)::

    Conv 64@5x5 -> ReLU -> MaxPool2 -> Conv 128@3x3 -> ReLU -> MaxPool2
    -> Conv 128@2x2 -> ReLU -> GlobalAveragePool -> Dense 4

which carries 1664 + 73856 + 65664 + 516 = 141700 trainable parameters.
Tensors are batched as ``(N, C, H, W)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ArgumentError, ShapeError

N_CLASSES = 4


# -- architecture ------------------------------------------------------------


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel_h: int
    kernel_w: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    pass


@dataclass(frozen=True)
class GlobalAveragePool:
    pass


@dataclass(frozen=True)
class Dense:
    out_features: int


LAYER_TYPES = {cls.__name__: cls for cls in (Conv, ReLU, MaxPool, GlobalAveragePool, Dense)}

DEFAULT_ARCHITECTURE = (
    Conv(64, 5, 5),
    ReLU(),
    MaxPool(),
    Conv(128, 3, 3),
    ReLU(),
    MaxPool(),
    Conv(128, 2, 2),
    ReLU(),
    GlobalAveragePool(),
    Dense(N_CLASSES),
)
INPUT_SHAPE = (1, 32, 32)


def layer_to_record(layer):
    return {"type": type(layer).__name__, **asdict(layer)}


def layer_from_record(rec):
    rec = dict(rec)
    cls = LAYER_TYPES[rec.pop("type")]
    return cls(**rec)


def shape_trace(arch=DEFAULT_ARCHITECTURE, input_shape=INPUT_SHAPE):
    """Output shape after each layer; raises ShapeError if the chain breaks."""
    shape = tuple(input_shape)
    trace = [shape]
    for layer in arch:
        if isinstance(layer, Conv):
            if len(shape) != 3:
                raise ShapeError(f"Conv needs a (C, H, W) input, got {shape}")
            c, h, w = shape
            if layer.kernel_h > h or layer.kernel_w > w:
                raise ShapeError(f"{layer.kernel_h}x{layer.kernel_w} kernel does not fit a {h}x{w} input")
            shape = (layer.out_channels, h - layer.kernel_h + 1, w - layer.kernel_w + 1)
        elif isinstance(layer, MaxPool):
            if len(shape) != 3 or shape[1] % 2 or shape[2] % 2:
                raise ShapeError(f"MaxPool needs even spatial dims, got {shape}")
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif isinstance(layer, GlobalAveragePool):
            if len(shape) != 3:
                raise ShapeError(f"GlobalAveragePool needs a (C, H, W) input, got {shape}")
            shape = (shape[0],)
        elif isinstance(layer, Dense):
            if len(shape) != 1:
                raise ShapeError(f"Dense needs a flat input, got {shape}")
            shape = (layer.out_features,)
        trace.append(shape)
    return trace


def param_shapes(arch=DEFAULT_ARCHITECTURE, input_shape=INPUT_SHAPE):
    """Per layer, ``(weight_shape, bias_shape)`` or None for parameter-free layers."""
    trace = shape_trace(arch, input_shape)
    shapes = []
    for layer, in_shape in zip(arch, trace):
        if isinstance(layer, Conv):
            shapes.append(((layer.out_channels, in_shape[0], layer.kernel_h, layer.kernel_w), (layer.out_channels,)))
        elif isinstance(layer, Dense):
            shapes.append(((layer.out_features, in_shape[0]), (layer.out_features,)))
        else:
            shapes.append(None)
    return shapes


def param_count(arch=DEFAULT_ARCHITECTURE, input_shape=INPUT_SHAPE):
    """Trainable parameters per layer (weights + biases; 0 for the rest)."""
    return [0 if s is None else math.prod(s[0]) + math.prod(s[1]) for s in param_shapes(arch, input_shape)]


# -- layer primitives --------------------------------------------------------


def conv2d(x, w, b):
    """Valid, stride-1 cross-correlation. Returns ``(out, cols)``."""
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"kernel expects {ci} input channels, got {c}")
    if kh > h or kw > wd:
        raise ShapeError(f"{kh}x{kw} kernel does not fit a {h}x{wd} input")
    ho, wo = h - kh + 1, wd - kw + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))  # n,c,ho,wo,kh,kw
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = cols @ w.reshape(o, -1).T + b
    return out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2), cols


def conv2d_backward(dout, x_shape, cols, w, need_dx=True):
    n, c, h, wd = x_shape
    o, _, kh, kw = w.shape
    ho, wo = h - kh + 1, wd - kw + 1
    d2 = dout.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(o, -1)).reshape(n, ho, wo, c, kh, kw)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for u in range(kh):
        for v in range(kw):
            dx[:, :, u : u + ho, v : v + wo] += dcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    return dx, dw, db


def maxpool2(x):
    """2x2 / stride-2 max pool. Returns ``(out, argmax)`` where argmax is the
    row-major position (0..3) of the winner inside each window; ties go to
    the first position."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool2_backward(dout, arg):
    n, c, hh, ww = dout.shape
    grid = np.zeros((n, c, hh, ww, 4), dtype=dout.dtype)
    np.put_along_axis(grid, arg[..., None], dout[..., None], axis=-1)
    return grid.reshape(n, c, hh, ww, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, hh * 2, ww * 2)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


# -- model -------------------------------------------------------------------


@dataclass(frozen=True)
class CnnConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    optimizer: str = "adam"  # or "sgd"
    seed: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class CnnModel:
    architecture: tuple
    input_shape: tuple
    params: list  # per layer: [W, b] or None
    seed: int = 0
    config: CnnConfig = field(default_factory=CnnConfig)
    dtype: str = "float32"
    optimizer_state: dict = field(default_factory=dict)

    def copy(self):
        return CnnModel(
            self.architecture,
            self.input_shape,
            [None if p is None else [a.copy() for a in p] for p in self.params],
            self.seed,
            self.config,
            self.dtype,
            {},
        )

    def flat_params(self):
        return [a for p in self.params if p is not None for a in p]


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def to_dict(self):
        return asdict(self)


def init_model(arch=DEFAULT_ARCHITECTURE, input_shape=INPUT_SHAPE, seed=0, init="he", dtype="float32", config=None):
    """Build a model with He-normal weights (``init="he"``) or all zeros.

    Weights are drawn from PCG-64 seeded with ``seed``; biases start at 0.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0])))
    params = []
    for shapes in param_shapes(arch, input_shape):
        if shapes is None:
            params.append(None)
            continue
        wshape, bshape = shapes
        if init == "zeros":
            w = np.zeros(wshape, dtype=dtype)
        elif init == "he":
            fan_in = math.prod(wshape[1:])
            w = (rng.standard_normal(wshape) * math.sqrt(2.0 / fan_in)).astype(dtype)
        else:
            raise ArgumentError(f"unknown init {init!r}")
        params.append([w, np.zeros(bshape, dtype=dtype)])
    return CnnModel(tuple(arch), tuple(input_shape), params, int(seed), config or CnnConfig(seed=int(seed)), dtype)


def _as_batch(model, batch):
    x = np.asarray(batch, dtype=model.dtype)
    if x.shape == model.input_shape:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != model.input_shape:
        raise ShapeError(f"expected inputs of shape {model.input_shape}, got {x.shape}")
    return x


def forward(model: CnnModel, batch):
    """Logits (pre-softmax) for a batch, plus the cache needed by backward."""
    x = _as_batch(model, batch)
    cache = []
    for layer, p in zip(model.architecture, model.params):
        if isinstance(layer, Conv):
            out, cols = conv2d(x, p[0], p[1])
            cache.append((x.shape, cols))
        elif isinstance(layer, ReLU):
            out = np.maximum(x, 0)
            cache.append(x > 0)
        elif isinstance(layer, MaxPool):
            out, arg = maxpool2(x)
            cache.append(arg)
        elif isinstance(layer, GlobalAveragePool):
            out = x.mean(axis=(2, 3))
            cache.append(x.shape)
        elif isinstance(layer, Dense):
            out = x @ p[0].T + p[1]
            cache.append(x)
        else:
            raise ArgumentError(f"unsupported layer {layer!r}")
        x = out
    return x, cache


def backward(model: CnnModel, cache, dlogits, need_input_grad=False):
    """Reverse pass. Returns ``(grads, dinput)`` with grads aligned to params."""
    grads = [None] * len(model.params)
    d = dlogits
    last = len(model.architecture) - 1
    for idx in range(last, -1, -1):
        layer, p, c = model.architecture[idx], model.params[idx], cache[idx]
        need_dx = need_input_grad or idx > 0
        if isinstance(layer, Conv):
            x_shape, cols = c
            d, dw, db = conv2d_backward(d, x_shape, cols, p[0], need_dx)
            grads[idx] = [dw, db]
        elif isinstance(layer, ReLU):
            d = d * c
        elif isinstance(layer, MaxPool):
            d = maxpool2_backward(d, c)
        elif isinstance(layer, GlobalAveragePool):
            n, ch, h, w = c
            d = np.broadcast_to(d[:, :, None, None] / (h * w), c).copy()
        elif isinstance(layer, Dense):
            grads[idx] = [d.T @ c, d.sum(axis=0)]
            d = d @ p[0]
    return grads, d


def loss_and_grads(model: CnnModel, batch, labels):
    """Mean cross-entropy over the batch and its gradient for every parameter."""
    labels = np.asarray(labels, dtype=np.int64)
    n_out = shape_trace(model.architecture, model.input_shape)[-1][0]
    if labels.ndim != 1 or (labels.size and (labels.min() < 0 or labels.max() >= n_out)):
        raise ArgumentError(f"labels must lie in [0, {n_out})")
    logits, cache = forward(model, batch)
    if len(logits) != len(labels):
        raise ArgumentError(f"{len(logits)} inputs but {len(labels)} labels")
    loss, dlogits = cross_entropy(logits, labels)
    grads, _ = backward(model, cache, dlogits.astype(logits.dtype))
    return loss, grads


def cnn_predict(model: CnnModel, x):
    """Return ``(class, probabilities)`` for one ``(1, 32, 32)`` input."""
    x = np.asarray(x)
    if x.shape != model.input_shape:
        raise ShapeError(f"expected input shape {model.input_shape}, got {x.shape}")
    logits, _ = forward(model, x[None])
    probs = softmax(logits.astype(np.float64))[0]
    return int(np.argmax(probs)), probs


def predict_proba(model: CnnModel, X, batch_size=256):
    X = _as_batch(model, X)
    out = []
    for s in range(0, len(X), batch_size):
        logits, _ = forward(model, X[s : s + batch_size])
        out.append(softmax(logits.astype(np.float64)))
    return np.concatenate(out) if out else np.zeros((0, N_CLASSES))


def predict(model: CnnModel, X, batch_size=256):
    return np.argmax(predict_proba(model, X, batch_size), axis=1)


def evaluate_loss(model, X, y, batch_size=256):
    """Mean loss and accuracy over ``(X, y)``; NaN for an empty set."""
    if len(X) == 0:
        return float("nan"), float("nan")
    total, correct = 0.0, 0
    for s in range(0, len(X), batch_size):
        logits, _ = forward(model, X[s : s + batch_size])
        loss, _ = cross_entropy(logits.astype(np.float64), y[s : s + batch_size])
        total += loss * len(logits)
        correct += int(np.sum(np.argmax(logits, axis=1) == y[s : s + batch_size]))
    return total / len(X), correct / len(X)


class _Adam:
    def __init__(self, params, cfg: CnnConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            p -= (c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.eps)).astype(p.dtype)


class _Sgd:
    def __init__(self, params, cfg: CnnConfig):
        self.cfg = cfg

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= (self.cfg.learning_rate * g).astype(p.dtype)


def train(model: CnnModel, X_train, y_train, X_val=None, y_val=None, config: CnnConfig | None = None, on_epoch=None):
    """Mini-batch training; returns ``(model, history)``.

    The model is updated in place. Epoch ``e`` shuffles with PCG-64 seeded by
    ``(config.seed, 1, e)``; gradients are reduced over each batch in sample
    order, so a fixed seed reproduces the run exactly.
    """
    cfg = config or model.config
    X_train = _as_batch(model, X_train)
    y_train = np.asarray(y_train, dtype=np.int64)
    if len(X_train) == 0:
        raise ArgumentError("training set is empty")
    if len(X_train) != len(y_train):
        raise ArgumentError(f"{len(X_train)} training inputs but {len(y_train)} labels")
    if X_val is not None and len(X_val):
        X_val = _as_batch(model, X_val)
        y_val = np.asarray(y_val, dtype=np.int64)
    else:
        X_val, y_val = np.zeros((0,) + model.input_shape, dtype=model.dtype), np.zeros(0, dtype=np.int64)
    model.config = cfg
    flat = model.flat_params()
    opt = _Adam(flat, cfg) if cfg.optimizer == "adam" else _Sgd(flat, cfg)
    history = TrainingHistory()
    n = len(X_train)
    for epoch in range(cfg.epochs):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(cfg.seed), 1, epoch])))
        order = rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            xb, yb = X_train[idx], y_train[idx]
            logits, cache = forward(model, xb)
            loss, dlogits = cross_entropy(logits, yb)
            grads, _ = backward(model, cache, dlogits.astype(logits.dtype))
            opt.step(flat, [g for gp in grads if gp is not None for g in gp])
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == yb))
        history.train_loss.append(loss_sum / n)
        history.train_accuracy.append(correct / n)
        vl, va = evaluate_loss(model, X_val, y_val)
        history.val_loss.append(vl)
        history.val_accuracy.append(va)
        if on_epoch is not None:
            on_epoch(epoch, history)
    if isinstance(opt, _Adam):
        model.optimizer_state = {"t": opt.t}
    return model, history
