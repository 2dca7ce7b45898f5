"""From-scratch convolutional patch classifier: forward, backprop, SGD.

Layers are valid (no-padding) stride-1 convolutions, 2x2/stride-2 max pooling,
ReLU, dense, and a final sigmoid producing one boundary probability.  All
arithmetic is float64; model files store parameters as float32.

The default stack mirrors the two-conv architecture (20 then 50 filters,
5x5 kernels) whose shape chain runs 16x16x9 -> 12x12x20 -> 6x6x20 -> 2x2x50
-> 1x1x50 -> 64 -> 1.  Other stacks (e.g. the three-conv 30/60/60 variant)
are expressed as architecture strings, see parse_architecture().

Batches enter as (B, 16, 16, C) channel-last stacks, matching the dataset
layout; internally layers run channel-first.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

MODEL_MAGIC = b"CFM1"
MODEL_VERSION = 1

# Which dataset channels feed the network: the full multi-scale stack or one scale.
SCALE_MODES = {"multi": slice(0, 9), "s16": slice(0, 3), "s32": slice(3, 6), "s64": slice(6, 9)}
_KIND_CODES = {"conv": 1, "maxpool": 2, "relu": 3, "dense": 4, "sigmoid": 5}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}

DEFAULT_ARCH = "conv:20x5,relu,maxpool,conv:50x5,relu,maxpool,dense:64,relu,dense:1,sigmoid"
THREE_LAYER_ARCH = "conv:30x3,relu,maxpool,conv:60x3,relu,conv:60x3,relu,dense:64,relu,dense:1,sigmoid"


@dataclass
class LayerSpec:
    kind: str
    filters: int = 0  # conv
    kernel: int = 0  # conv
    in_channels: int = 0  # conv
    in_features: int = 0  # dense
    out_features: int = 0  # dense
    window: int = 2  # maxpool
    stride: int = 2  # maxpool


@dataclass
class TrainConfig:
    learning_rate: float = 0.2
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    weight_init_std: float = 0.01
    arch: str = DEFAULT_ARCH
    scale_mode: str = "multi"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.scale_mode not in SCALE_MODES:
            raise ValueError(f"scale_mode must be one of {sorted(SCALE_MODES)}")


@dataclass
class NetworkModel:
    """Ordered layer stack with parameters and shape metadata."""

    specs: list[LayerSpec]
    weights: list  # per layer: ndarray or None
    biases: list
    input_shape: tuple[int, int, int]  # (h, w, c), channel-last
    scale_mode: str = "multi"

    @property
    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            if w is not None:
                out.append((w, b))
        return out

    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in self.parameters)

    def channel_slice(self) -> slice:
        return SCALE_MODES[self.scale_mode]


def parse_architecture(arch: str) -> list[LayerSpec]:
    """Parse 'conv:FxK,relu,maxpool,dense:N,sigmoid' strings into layer specs.

    Dense in_features and conv in_channels are inferred later from the shape
    chain, so strings stay compact.
    """
    specs = []
    for token in arch.split(","):
        token = token.strip()
        if token.startswith("conv:"):
            try:
                f, k = token[5:].split("x")
                specs.append(LayerSpec("conv", filters=int(f), kernel=int(k)))
            except ValueError:
                raise ValueError(f"bad conv token {token!r}, expected conv:FILTERSxKERNEL") from None
        elif token.startswith("dense:"):
            specs.append(LayerSpec("dense", out_features=int(token[6:])))
        elif token in ("relu", "sigmoid", "maxpool"):
            specs.append(LayerSpec(token))
        else:
            raise ValueError(f"unknown layer token {token!r}")
    return specs


def default_architecture() -> list[LayerSpec]:
    """The two-conv stack: conv20-5x5, conv50-5x5, dense 64, dense 1, sigmoid."""
    return parse_architecture(DEFAULT_ARCH)


def infer_shapes(specs: list[LayerSpec], input_shape: tuple[int, int, int]):
    """Chain layer output shapes, filling conv in_channels / dense in_features.

    Shapes are (c, h, w) tuples or (features,) once flattened.  Raises when a
    layer cannot consume its input.
    """
    h, w, c = input_shape
    shape: tuple = (c, h, w)
    shapes = [shape]
    for spec in specs:
        if spec.kind == "conv":
            if len(shape) != 3:
                raise ValueError("conv after flattening is not supported")
            ci, hi, wi = shape
            if spec.kernel < 1 or spec.kernel > min(hi, wi):
                raise ValueError(f"conv kernel {spec.kernel} does not fit {hi}x{wi} input")
            spec.in_channels = ci
            shape = (spec.filters, hi - spec.kernel + 1, wi - spec.kernel + 1)
        elif spec.kind == "maxpool":
            ci, hi, wi = shape
            if hi < spec.window or wi < spec.window:
                raise ValueError(f"maxpool window {spec.window} does not fit {hi}x{wi} input")
            shape = (ci, hi // spec.stride, wi // spec.stride)
        elif spec.kind == "dense":
            feats = int(np.prod(shape))
            spec.in_features = feats
            shape = (spec.out_features,)
        elif spec.kind in ("relu", "sigmoid"):
            pass
        else:
            raise ValueError(f"unknown layer kind {spec.kind!r}")
        shapes.append(shape)
    return shapes


def build_model(
    specs: list[LayerSpec] | None = None,
    input_shape: tuple[int, int, int] = (16, 16, 9),
    scale_mode: str = "multi",
    weight_init_std: float = 0.01,
    seed: int = 0,
) -> NetworkModel:
    """Instantiate a model: zero biases, seeded Gaussian weights (std as given)."""
    if specs is None:
        specs = default_architecture()
    infer_shapes(specs, input_shape)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for spec in specs:
        if spec.kind == "conv":
            weights.append(rng.normal(0.0, weight_init_std, size=(spec.filters, spec.in_channels, spec.kernel, spec.kernel)))
            biases.append(np.zeros(spec.filters))
        elif spec.kind == "dense":
            weights.append(rng.normal(0.0, weight_init_std, size=(spec.in_features, spec.out_features)))
            biases.append(np.zeros(spec.out_features))
        else:
            weights.append(None)
            biases.append(None)
    return NetworkModel(specs, weights, biases, input_shape, scale_mode)


# ---------------------------------------------------------------------------
# layer forward/backward


def _conv_cols(x: np.ndarray, k: int) -> np.ndarray:
    """im2col: (B, C, H, W) -> (B*OH*OW, C*k*k) patch matrix."""
    b, c, h, w = x.shape
    oh, ow = h - k + 1, w - k + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * k * k)
    return np.ascontiguousarray(cols)


def _conv_forward(x, w, b):
    f, c, k, _ = w.shape
    bsz, _, h, wd = x.shape
    oh, ow = h - k + 1, wd - k + 1
    cols = _conv_cols(x, k)
    out = cols @ w.reshape(f, -1).T + b
    return out.reshape(bsz, oh, ow, f).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, x_shape, w):
    f, c, k, _ = w.shape
    bsz, _, h, wd = x_shape
    oh, ow = h - k + 1, wd - k + 1
    dflat = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (dflat.T @ cols).reshape(w.shape)
    db = dflat.sum(axis=0)
    dcols = (dflat @ w.reshape(f, -1)).reshape(bsz, oh, ow, c, k, k)
    dx = np.zeros(x_shape)
    for a in range(k):
        for b2 in range(k):
            dx[:, :, a : a + oh, b2 : b2 + ow] += dcols[:, :, :, :, a, b2].transpose(0, 3, 1, 2)
    return dx, dw, db


def _pool_forward(x, window, stride):
    b, c, h, w = x.shape
    oh, ow = h // stride, w // stride
    xr = x[:, :, : oh * stride, : ow * stride]
    xr = xr.reshape(b, c, oh, window, ow, window).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, window * window)
    idx = xr.argmax(axis=-1)  # first maximum wins on ties
    out = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(dout, idx, x_shape, window, stride):
    b, c, h, w = x_shape
    oh, ow = h // stride, w // stride
    dxr = np.zeros((b, c, oh, ow, window * window))
    np.put_along_axis(dxr, idx[..., None], dout[..., None], axis=-1)
    dx = np.zeros(x_shape)
    dx[:, :, : oh * stride, : ow * stride] = (
        dxr.reshape(b, c, oh, ow, window, window).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh * stride, ow * stride)
    )
    return dx


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _run_layers(model: NetworkModel, x: np.ndarray, keep_caches: bool):
    """Channel-first forward pass; caches hold what backward needs."""
    caches = []
    for spec, w, b in zip(model.specs, model.weights, model.biases):
        if spec.kind == "conv":
            out, cols = _conv_forward(x, w, b)
            caches.append(("conv", cols if keep_caches else None, x.shape, w))
            x = out
        elif spec.kind == "maxpool":
            out, idx = _pool_forward(x, spec.window, spec.stride)
            caches.append(("maxpool", idx, x.shape, spec))
            x = out
        elif spec.kind == "relu":
            caches.append(("relu", x > 0, None, None))
            x = np.maximum(x, 0.0)
        elif spec.kind == "dense":
            flat = x.reshape(x.shape[0], -1)
            caches.append(("dense", flat if keep_caches else None, x.shape, w))
            x = flat @ w + b
        elif spec.kind == "sigmoid":
            caches.append(("sigmoid", None, None, None))
            x = _sigmoid(x)
    return x, caches


def forward(model: NetworkModel, batch: np.ndarray) -> np.ndarray:
    """Boundary probabilities, one per batch row of (B, h, w, c) inputs."""
    x = _prepare_batch(model, batch)
    out, _ = _run_layers(model, x, keep_caches=False)
    return out.reshape(out.shape[0], -1)[:, 0] if out.ndim > 1 else out


def _prepare_batch(model: NetworkModel, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 3:
        batch = batch[None]
    h, w, c = model.input_shape
    if batch.shape[1:] != (h, w, c):
        raise ValueError(f"batch shape {batch.shape[1:]} does not match model input {(h, w, c)}")
    if not np.all(np.isfinite(batch)):
        raise ValueError("batch contains NaN or Inf")
    return batch.transpose(0, 3, 1, 2)


def loss_and_gradients(model: NetworkModel, batch: np.ndarray, labels: np.ndarray):
    """Mean binary cross-entropy and backprop gradients for every parameter.

    The final sigmoid and the cross-entropy are fused for the backward pass,
    so the pre-sigmoid gradient is (p - y) / B; the loss value clamps p to
    [1e-12, 1 - 1e-12].  Returns (loss, grads) with grads a list of (dW, db)
    or None per layer, shaped exactly like the parameters.
    """
    loss, grads, _ = _loss_grads_probs(model, batch, labels)
    return loss, grads


def _loss_grads_probs(model: NetworkModel, batch, labels):
    if model.specs[-1].kind != "sigmoid":
        raise ValueError("training requires a sigmoid output layer")
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    x = _prepare_batch(model, batch)
    if x.shape[0] != y.size:
        raise ValueError("labels do not match batch size")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    out, caches = _run_layers(model, x, keep_caches=True)
    p = out.reshape(-1)
    pc = np.clip(p, 1e-12, 1.0 - 1e-12)
    loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))

    grads: list = [None] * len(model.specs)
    delta = ((p - y) / y.size).reshape(out.shape)  # fused sigmoid + BCE
    for i in range(len(model.specs) - 2, -1, -1):
        kind, cache, shape, aux = caches[i]
        if kind == "conv":
            delta, dw, db = _conv_backward(delta, cache, shape, aux)
            grads[i] = (dw, db)
        elif kind == "maxpool":
            delta = _pool_backward(delta, cache, shape, aux.window, aux.stride)
        elif kind == "relu":
            delta = delta * cache
        elif kind == "dense":
            dw = cache.T @ delta
            db = delta.sum(axis=0)
            delta = (delta @ aux.T).reshape(shape)
            grads[i] = (dw, db)
        elif kind == "sigmoid":
            raise ValueError("sigmoid must be the final layer")
    return loss, grads, p


def init_velocities(model: NetworkModel):
    return [
        (np.zeros_like(w), np.zeros_like(b)) if w is not None else None
        for w, b in zip(model.weights, model.biases)
    ]


def sgd_step(model: NetworkModel, grads, config: TrainConfig, velocities=None) -> NetworkModel:
    """v <- momentum*v - lr*g; param <- param + v.  Mutates model (and velocities) in place."""
    if velocities is None:
        velocities = init_velocities(model)
    for i, g in enumerate(grads):
        if g is None:
            continue
        dw, db = g
        vw, vb = velocities[i]
        vw *= config.momentum
        vw -= config.learning_rate * dw
        vb *= config.momentum
        vb -= config.learning_rate * db
        model.weights[i] += vw
        model.biases[i] += vb
    return model


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float | None = None
    val_acc: float | None = None


def _dataset_arrays(manifest, channel_slice: slice):
    stacks = np.stack([s.stack for s in manifest.samples])[:, :, :, channel_slice]
    labels = np.array([s.label for s in manifest.samples], dtype=np.float64)
    return stacks, labels


def evaluate(model: NetworkModel, stacks: np.ndarray, labels: np.ndarray, batch_size: int = 256):
    """Mean BCE loss and accuracy over a dataset, batched."""
    losses = []
    correct = 0
    for i in range(0, len(stacks), batch_size):
        xb, yb = stacks[i : i + batch_size], labels[i : i + batch_size]
        p = forward(model, xb)
        pc = np.clip(p, 1e-12, 1.0 - 1e-12)
        losses.append(-np.sum(yb * np.log(pc) + (1.0 - yb) * np.log(1.0 - pc)))
        correct += int(np.sum((p >= 0.5) == (yb == 1.0)))
    return float(np.sum(losses) / len(stacks)), correct / len(stacks)


def train(manifest, config: TrainConfig, val_manifest=None, model: NetworkModel | None = None):
    """Seeded mini-batch SGD over a dataset manifest.

    Returns (model, [EpochMetrics...]).  Deterministic for a fixed config:
    weight init, shuffling, and batch order all come from config.seed.
    """
    if not manifest.samples:
        raise ValueError("dataset is empty")
    ch = SCALE_MODES[config.scale_mode]
    n_channels = ch.stop - ch.start
    if model is None:
        model = build_model(
            parse_architecture(config.arch),
            input_shape=(16, 16, n_channels),
            scale_mode=config.scale_mode,
            weight_init_std=config.weight_init_std,
            seed=config.seed,
        )
    stacks, labels = _dataset_arrays(manifest, model.channel_slice())
    val = _dataset_arrays(val_manifest, model.channel_slice()) if val_manifest is not None else None
    rng = np.random.default_rng(config.seed + 1)
    velocities = init_velocities(model)
    history = []
    n = len(stacks)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for i in range(0, n, config.batch_size):
            sel = order[i : i + config.batch_size]
            xb, yb = stacks[sel], labels[sel]
            loss, grads, p = _loss_grads_probs(model, xb, yb)  # metrics from pre-update outputs
            correct += int(np.sum((p >= 0.5) == (yb == 1.0)))
            loss_sum += loss * len(sel)
            sgd_step(model, grads, config, velocities)
        m = EpochMetrics(epoch, loss_sum / n, correct / n)
        if val is not None:
            m.val_loss, m.val_acc = evaluate(model, *val)
        history.append(m)
    return model, history


# ---------------------------------------------------------------------------
# model file ("CFM1")

_SCALE_CODES = {"multi": 0, "s16": 1, "s32": 2, "s64": 3}
_CODE_SCALES = {v: k for k, v in _SCALE_CODES.items()}


def save_model(model: NetworkModel, path) -> None:
    """Write magic, version, scale mode, input shape, layer table, then float32 params."""
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        h, w, c = model.input_shape
        fh.write(struct.pack("<IIIII", MODEL_VERSION, _SCALE_CODES[model.scale_mode], h, w, c))
        fh.write(struct.pack("<I", len(model.specs)))
        for spec in model.specs:
            dims = (0, 0, 0, 0)
            if spec.kind == "conv":
                dims = (spec.filters, spec.kernel, spec.in_channels, 0)
            elif spec.kind == "dense":
                dims = (spec.in_features, spec.out_features, 0, 0)
            elif spec.kind == "maxpool":
                dims = (spec.window, spec.stride, 0, 0)
            fh.write(struct.pack("<IIIII", _KIND_CODES[spec.kind], *dims))
        for w_, b_ in zip(model.weights, model.biases):
            if w_ is not None:
                fh.write(w_.astype("<f4").tobytes())
                fh.write(b_.astype("<f4").tobytes())


def load_model(path) -> NetworkModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MODEL_MAGIC:
        raise DataError(f"{path}: bad magic {data[:4]!r}")
    try:
        version, scale_code, h, w, c = struct.unpack("<IIIII", data[4:24])
        (n_layers,) = struct.unpack("<I", data[24:28])
    except struct.error:
        raise DataError(f"{path}: truncated header") from None
    if version != MODEL_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    if scale_code not in _CODE_SCALES:
        raise DataError(f"{path}: unknown scale mode {scale_code}")
    pos = 28
    specs = []
    for _ in range(n_layers):
        try:
            kind_code, d0, d1, d2, _d3 = struct.unpack("<IIIII", data[pos : pos + 20])
        except struct.error:
            raise DataError(f"{path}: truncated layer table") from None
        pos += 20
        if kind_code not in _CODE_KINDS:
            raise DataError(f"{path}: unknown layer kind {kind_code}")
        kind = _CODE_KINDS[kind_code]
        if kind == "conv":
            specs.append(LayerSpec("conv", filters=d0, kernel=d1, in_channels=d2))
        elif kind == "dense":
            specs.append(LayerSpec("dense", in_features=d0, out_features=d1))
        elif kind == "maxpool":
            specs.append(LayerSpec("maxpool", window=d0, stride=d1))
        else:
            specs.append(LayerSpec(kind))
    weights, biases = [], []
    for spec in specs:
        if spec.kind == "conv":
            wshape: tuple = (spec.filters, spec.in_channels, spec.kernel, spec.kernel)
            bshape = (spec.filters,)
        elif spec.kind == "dense":
            wshape = (spec.in_features, spec.out_features)
            bshape = (spec.out_features,)
        else:
            weights.append(None)
            biases.append(None)
            continue
        nw, nb = int(np.prod(wshape)), int(np.prod(bshape))
        need = 4 * (nw + nb)
        if len(data) - pos < need:
            raise DataError(f"{path}: truncated parameters")
        weights.append(np.frombuffer(data, dtype="<f4", count=nw, offset=pos).reshape(wshape).astype(np.float64))
        pos += 4 * nw
        biases.append(np.frombuffer(data, dtype="<f4", count=nb, offset=pos).reshape(bshape).astype(np.float64))
        pos += 4 * nb
    if pos != len(data):
        raise DataError(f"{path}: {len(data) - pos} trailing bytes")
    model = NetworkModel(specs, weights, biases, (h, w, c), _CODE_SCALES[scale_code])
    infer_shapes(model.specs, model.input_shape)  # validates the stored chain
    return model
