"""Minimal dense/convolutional network engine with manual backpropagation.

Everything runs in float64 on plain numpy arrays.  A model is an ordered
list of layers drawn from five kinds:

    dense    z = x @ W.T + b           W: (out, in), b: (out,)
    conv     valid 2-D convolution     W: (filters, in_ch, kh, kw), b: (filters,)
    maxpool  non-overlapping max, stride == kernel, trailing cells dropped
    relu     elementwise max(x, 0)
    softmax  final probability layer (must be last, appears exactly once)

A model carries at most one conv layer; when present it is the designated
layer whose output feature maps back the class-activation weighting used
by the feature-map amplifier.  The loss is mean softmax cross-entropy.

Conventions:
  * ``forward`` records each layer's input so ``backward`` can replay the
    graph without autodiff.
  * A client "update" is ``W_before - W_after``; the server applies it as
    ``W - scale * update``, so with scale 1 the server lands exactly on the
    client's trained weights.
  * Feature-map gradients are d y / d A summed over the batch, where y is
    the pre-softmax logit of each sample's true class, summed over the
    batch.  Capturing them never touches the parameter gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

LAYER_KINDS = ("dense", "conv", "maxpool", "relu", "softmax")


@dataclass
class Layer:
    kind: str
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    pool: int = 2  # kernel == stride for maxpool layers


@dataclass
class ModelParams:
    """Ordered layer list plus shape bookkeeping."""

    layers: list[Layer]

    def __post_init__(self) -> None:
        conv_count = 0
        for layer in self.layers:
            if layer.kind not in LAYER_KINDS:
                raise ConfigError(f"unknown layer kind {layer.kind!r}")
            if layer.kind == "conv":
                conv_count += 1
        if conv_count > 1:
            raise ConfigError("at most one conv layer is supported")
        if not self.layers or self.layers[-1].kind != "softmax":
            raise ConfigError("model must end with a softmax layer")

    def conv_index(self) -> int | None:
        for i, layer in enumerate(self.layers):
            if layer.kind == "conv":
                return i
        return None

    def param_count(self) -> int:
        total = 0
        for layer in self.layers:
            if layer.weight is not None:
                total += layer.weight.size
            if layer.bias is not None:
                total += layer.bias.size
        return total

    def copy(self) -> "ModelParams":
        layers = [
            Layer(
                l.kind,
                None if l.weight is None else l.weight.copy(),
                None if l.bias is None else l.bias.copy(),
                l.pool,
            )
            for l in self.layers
        ]
        return ModelParams(layers)


@dataclass
class ForwardTrace:
    """Activations recorded during ``forward``.

    ``inputs[i]`` is the array fed into layer i.  ``feature_maps`` is the
    designated conv layer's output summed over the batch (None for pure
    dense models); ``logits`` are the pre-softmax scores.
    """

    inputs: list[np.ndarray]
    logits: np.ndarray
    probs: np.ndarray
    feature_maps: np.ndarray | None = None


@dataclass
class GradientSet:
    """Per-layer (dW, db) pairs aligned with a model's layer list.

    Parameter-free layers hold (None, None).  ``feature_map_grads`` rides
    along only when backward ran with capture enabled; it is auxiliary and
    excluded from the vector view and all arithmetic.
    """

    layers: list[tuple[np.ndarray | None, np.ndarray | None]]
    feature_map_grads: np.ndarray | None = None

    def to_vector(self) -> np.ndarray:
        chunks = []
        for dw, db in self.layers:
            if dw is not None:
                chunks.append(dw.ravel())
            if db is not None:
                chunks.append(db.ravel())
        if not chunks:
            return np.zeros(0)
        return np.concatenate(chunks)

    def norm(self) -> float:
        return float(np.linalg.norm(self.to_vector()))

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet(
            [
                (None if dw is None else factor * dw, None if db is None else factor * db)
                for dw, db in self.layers
            ]
        )

    def plus(self, other: "GradientSet") -> "GradientSet":
        if len(self.layers) != len(other.layers):
            raise ConfigError("gradient sets come from different models")
        out = []
        for (aw, ab), (bw, bb) in zip(self.layers, other.layers):
            out.append(
                (
                    None if aw is None else aw + bw,
                    None if ab is None else ab + bb,
                )
            )
        return GradientSet(out)

    def copy(self) -> "GradientSet":
        return GradientSet(
            [
                (None if dw is None else dw.copy(), None if db is None else db.copy())
                for dw, db in self.layers
            ],
            None if self.feature_map_grads is None else self.feature_map_grads.copy(),
        )


def zero_grads(model: ModelParams) -> GradientSet:
    out = []
    for layer in model.layers:
        out.append(
            (
                None if layer.weight is None else np.zeros_like(layer.weight),
                None if layer.bias is None else np.zeros_like(layer.bias),
            )
        )
    return GradientSet(out)


def grads_from_vector(model: ModelParams, vec: np.ndarray) -> GradientSet:
    """Inverse of ``GradientSet.to_vector`` for a given model layout."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.size != model.param_count():
        raise ConfigError(
            f"vector has {vec.size} entries, model has {model.param_count()} parameters"
        )
    out = []
    pos = 0
    for layer in model.layers:
        dw = db = None
        if layer.weight is not None:
            n = layer.weight.size
            dw = vec[pos : pos + n].reshape(layer.weight.shape).copy()
            pos += n
        if layer.bias is not None:
            n = layer.bias.size
            db = vec[pos : pos + n].reshape(layer.bias.shape).copy()
            pos += n
        out.append((dw, db))
    return GradientSet(out)


def grads_like(template: GradientSet, vec: np.ndarray) -> GradientSet:
    """Reshape a flat vector into the template's layer layout."""
    vec = np.asarray(vec, dtype=np.float64)
    out = []
    pos = 0
    for dw, db in template.layers:
        w = b = None
        if dw is not None:
            w = vec[pos : pos + dw.size].reshape(dw.shape).copy()
            pos += dw.size
        if db is not None:
            b = vec[pos : pos + db.size].reshape(db.shape).copy()
            pos += db.size
        out.append((w, b))
    if pos != vec.size:
        raise ConfigError(f"vector has {vec.size} entries, template wants {pos}")
    return GradientSet(out)


def mean_grads(grads: list[GradientSet]) -> GradientSet:
    if not grads:
        raise ConfigError("cannot average an empty gradient list")
    acc = grads[0].copy()
    acc.feature_map_grads = None
    for g in grads[1:]:
        acc = acc.plus(g)
    return acc.scaled(1.0 / len(grads))


# ---------------------------------------------------------------------------
# model builders


def _rng(seed: int | np.random.Generator) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def mlp_model(in_dim: int, hidden: int, num_classes: int, seed: int | np.random.Generator) -> ModelParams:
    """dense -> relu -> dense -> softmax; hidden == 0 collapses to logistic."""
    rng = _rng(seed)
    layers: list[Layer] = []

    def dense(fan_in: int, fan_out: int) -> Layer:
        w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in))
        return Layer("dense", w, np.zeros(fan_out))

    if hidden > 0:
        layers.append(dense(in_dim, hidden))
        layers.append(Layer("relu"))
        layers.append(dense(hidden, num_classes))
    else:
        layers.append(dense(in_dim, num_classes))
    layers.append(Layer("softmax"))
    return ModelParams(layers)


def conv_model(
    in_shape: tuple[int, int, int],
    num_classes: int,
    seed: int | np.random.Generator,
    filters: int = 8,
    kernel: int = 3,
    pool: int = 2,
) -> ModelParams:
    """conv -> relu -> maxpool -> dense -> softmax on (channels, H, W) input."""
    rng = _rng(seed)
    c, h, w = in_shape
    if h < kernel or w < kernel:
        raise ConfigError(f"input {h}x{w} smaller than conv kernel {kernel}")
    fan_in = c * kernel * kernel
    cw = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(filters, c, kernel, kernel))
    ho, wo = h - kernel + 1, w - kernel + 1
    hp, wp = ho // pool, wo // pool
    if hp < 1 or wp < 1:
        raise ConfigError("feature maps vanish after pooling; shrink kernel or pool")
    flat = filters * hp * wp
    dw = rng.normal(0.0, 1.0 / np.sqrt(flat), size=(num_classes, flat))
    return ModelParams(
        [
            Layer("conv", cw, np.zeros(filters)),
            Layer("relu"),
            Layer("maxpool", pool=pool),
            Layer("dense", dw, np.zeros(num_classes)),
            Layer("softmax"),
        ]
    )


# ---------------------------------------------------------------------------
# forward / backward


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, c, h, width = x.shape
    f, _, kh, kw = w.shape
    ho, wo = h - kh + 1, width - kw + 1
    if ho < 1 or wo < 1:
        raise ConfigError(f"conv input {h}x{width} smaller than kernel {kh}x{kw}")
    out = np.zeros((n, f, ho, wo))
    for a in range(kh):
        for bcol in range(kw):
            out += np.einsum(
                "nchw,fc->nfhw", x[:, :, a : a + ho, bcol : bcol + wo], w[:, :, a, bcol]
            )
    return out + b[None, :, None, None]


def _pool_blocks(x: np.ndarray, k: int) -> tuple[np.ndarray, int, int]:
    n, c, h, w = x.shape
    ho, wo = h // k, w // k
    if ho < 1 or wo < 1:
        raise ConfigError(f"maxpool kernel {k} larger than input {h}x{w}")
    cropped = x[:, :, : ho * k, : wo * k]
    blocks = cropped.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5)
    return blocks.reshape(n, c, ho, wo, k * k), ho, wo


def forward(model: ModelParams, x: np.ndarray) -> ForwardTrace:
    """Run the batch through every layer, recording inputs along the way."""
    act = np.asarray(x, dtype=np.float64)
    inputs: list[np.ndarray] = []
    feature_maps = None
    logits = None
    for layer in model.layers:
        inputs.append(act)
        if layer.kind == "dense":
            flat = act.reshape(act.shape[0], -1)
            if flat.shape[1] != layer.weight.shape[1]:
                raise ConfigError(
                    f"dense layer expects {layer.weight.shape[1]} inputs, got {flat.shape[1]}"
                )
            act = flat @ layer.weight.T + layer.bias
        elif layer.kind == "conv":
            act = _conv_forward(act, layer.weight, layer.bias)
            feature_maps = act.sum(axis=0)
        elif layer.kind == "maxpool":
            blocks, ho, wo = _pool_blocks(act, layer.pool)
            act = blocks.max(axis=-1)
        elif layer.kind == "relu":
            act = np.maximum(act, 0.0)
        elif layer.kind == "softmax":
            logits = act
            shifted = act - act.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            act = e / e.sum(axis=1, keepdims=True)
    return ForwardTrace(inputs=inputs, logits=logits, probs=act, feature_maps=feature_maps)


def _backprop(
    model: ModelParams,
    trace: ForwardTrace,
    dlogits: np.ndarray,
    want_params: bool,
    stop_after: int | None = None,
) -> tuple[list[tuple[np.ndarray | None, np.ndarray | None]], np.ndarray | None]:
    """Push dlogits back through the graph.

    Returns (per-layer parameter grads, gradient w.r.t. the output of layer
    ``stop_after``).  When want_params is False the parameter slots stay
    None; when stop_after is None the walk continues to the model input.
    """
    grads: list[tuple[np.ndarray | None, np.ndarray | None]] = [
        (None, None) for _ in model.layers
    ]
    d = dlogits
    captured = None
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        x = trace.inputs[i]
        if layer.kind == "softmax":
            # dlogits is already the gradient at this layer's input.
            pass
        elif layer.kind == "dense":
            flat = x.reshape(x.shape[0], -1)
            if want_params:
                grads[i] = (d.T @ flat, d.sum(axis=0))
            d = (d @ layer.weight).reshape(x.shape)
        elif layer.kind == "relu":
            d = d * (x > 0.0)
        elif layer.kind == "maxpool":
            blocks, ho, wo = _pool_blocks(x, layer.pool)
            idx = blocks.argmax(axis=-1)
            dblocks = np.zeros_like(blocks)
            np.put_along_axis(dblocks, idx[..., None], d[..., None], axis=-1)
            k = layer.pool
            n, c = x.shape[0], x.shape[1]
            dx = np.zeros_like(x)
            dx[:, :, : ho * k, : wo * k] = (
                dblocks.reshape(n, c, ho, wo, k, k)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, ho * k, wo * k)
            )
            d = dx
        elif layer.kind == "conv":
            w = layer.weight
            f, cin, kh, kw = w.shape
            ho, wo = d.shape[2], d.shape[3]
            if want_params:
                dw = np.zeros_like(w)
                for a in range(kh):
                    for bcol in range(kw):
                        dw[:, :, a, bcol] = np.einsum(
                            "nfij,ncij->fc", d, x[:, :, a : a + ho, bcol : bcol + wo]
                        )
                grads[i] = (dw, d.sum(axis=(0, 2, 3)))
            dx = np.zeros_like(x)
            for a in range(kh):
                for bcol in range(kw):
                    dx[:, :, a : a + ho, bcol : bcol + wo] += np.einsum(
                        "nfij,fc->ncij", d, w[:, :, a, bcol]
                    )
            d = dx
        if stop_after is not None and i == stop_after + 1:
            # d is now the gradient w.r.t. layer stop_after's output.
            captured = d
            if not want_params:
                break
    if stop_after is not None and captured is None:
        captured = d if stop_after == len(model.layers) - 1 else None
    return grads, captured


def backward(
    model: ModelParams,
    trace: ForwardTrace,
    labels: np.ndarray,
    capture_feature_grads: bool = False,
) -> GradientSet:
    """Mean cross-entropy gradients for the traced batch.

    With capture enabled (conv models only) a second pass computes
    d y / d A for the conv layer's output A, where y is the summed
    true-class logit; the result lands in ``feature_map_grads`` summed over
    the batch and leaves the parameter gradients untouched.
    """
    labels = np.asarray(labels)
    n, m = trace.probs.shape
    if labels.shape[0] != n:
        raise ConfigError(f"{labels.shape[0]} labels for a batch of {n}")
    onehot = np.zeros((n, m))
    onehot[np.arange(n), labels] = 1.0
    dlogits = (trace.probs - onehot) / n
    grads, _ = _backprop(model, trace, dlogits, want_params=True)
    gset = GradientSet(grads)
    if capture_feature_grads:
        ci = model.conv_index()
        if ci is None:
            raise ConfigError("feature-map capture needs a conv layer")
        _, dmaps = _backprop(model, trace, onehot, want_params=False, stop_after=ci)
        gset.feature_map_grads = dmaps.sum(axis=0)
    return gset


def loss_value(trace: ForwardTrace, labels: np.ndarray) -> float:
    """Mean cross-entropy of a traced batch (probabilities floored at 1e-300)."""
    labels = np.asarray(labels)
    picked = trace.probs[np.arange(trace.probs.shape[0]), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


def predict(model: ModelParams, features: np.ndarray) -> np.ndarray:
    return np.argmax(forward(model, features).logits, axis=1)


# ---------------------------------------------------------------------------
# training and parameter updates


def apply_update(model: ModelParams, update: GradientSet, scale: float) -> ModelParams:
    """W - scale * update per layer; raises on any shape mismatch."""
    if len(update.layers) != len(model.layers):
        raise ConfigError("update layer count differs from model")
    out = []
    for layer, (dw, db) in zip(model.layers, update.layers):
        w, b = layer.weight, layer.bias
        if (w is None) != (dw is None) or (b is None) != (db is None):
            raise ConfigError(f"update does not match {layer.kind} layer parameters")
        if w is not None:
            if w.shape != dw.shape:
                raise ConfigError(f"weight shape {dw.shape} != {w.shape}")
            w = w - scale * dw
        if b is not None:
            if b.shape != db.shape:
                raise ConfigError(f"bias shape {db.shape} != {b.shape}")
            b = b - scale * db
        out.append(Layer(layer.kind, w, b, layer.pool))
    return ModelParams(out)


def local_train(
    model: ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int | np.random.Generator,
) -> GradientSet:
    """Plain SGD for a client; returns W_before - W_after as a GradientSet.

    Batch order is drawn from the given seed only, so a round's clients can
    run in any order (or in parallel) without changing their updates.
    """
    n = len(labels)
    if n == 0:
        raise ConfigError("cannot train on an empty shard")
    if epochs < 1 or batch_size < 1 or lr <= 0:
        raise ConfigError("epochs and batch_size must be >= 1 and lr positive")
    rng = _rng(seed)
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    work = model.copy()
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            trace = forward(work, features[batch])
            grads = backward(work, trace, labels[batch])
            work = apply_update(work, grads, lr)
    out = []
    for before, after in zip(model.layers, work.layers):
        out.append(
            (
                None if before.weight is None else before.weight - after.weight,
                None if before.bias is None else before.bias - after.bias,
            )
        )
    return GradientSet(out)
