"""Small dense regression networks, trained from scratch with numpy.

Hidden layers are rectified-linear, the output is affine. Inputs and the
training target are standardized; the constants travel with the model so a
saved model is a pure deterministic function of its feature vector.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"VMLP"
FORMAT_VERSION = 1


@dataclass
class MlpModel:
    widths: tuple[int, ...]
    weights: list[np.ndarray]  # weights[i]: (widths[i], widths[i+1])
    biases: list[np.ndarray]  # biases[i]: (widths[i+1],)
    in_mean: np.ndarray
    in_scale: np.ndarray
    out_mean: float
    out_scale: float
    train_loss: float = field(default=float("nan"))
    val_loss: float = field(default=float("nan"))

    def __post_init__(self) -> None:
        if len(self.widths) < 2:
            raise ValueError("model needs at least input and output widths")
        if self.widths[-1] != 1:
            raise ValueError("output width must be 1")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.widths[i], self.widths[i + 1])
            if w.shape != expect or b.shape != (self.widths[i + 1],):
                raise ValueError(f"layer {i}: shapes {w.shape}/{b.shape} do not match {expect}")
        if not (np.all(np.isfinite(self.in_mean)) and np.all(np.isfinite(self.in_scale))):
            raise ValueError("normalization constants must be finite")

    @property
    def input_width(self) -> int:
        return self.widths[0]


def forward_batch(model: MlpModel, features: np.ndarray) -> np.ndarray:
    """Forward pass on an (N, D) batch; returns (N,) predictions."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_width:
        raise ValueError(f"expected (N, {model.input_width}) features, got {x.shape}")
    h = (x - model.in_mean) / model.in_scale
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w + b
        if i < last:
            np.maximum(h, 0.0, out=h)
    return h[:, 0] * model.out_scale + model.out_mean


def mlp_forward(model: MlpModel, features) -> float:
    """Forward pass on a single feature vector."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.input_width:
        raise ValueError(f"expected {model.input_width} features, got shape {x.shape}")
    return float(forward_batch(model, x[None, :])[0])


def r_squared(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Coefficient of determination; 0.0 when the target has no variance."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        return 0.0
    ss_res = float(np.sum((y_true - y_pred) ** 2))
    return 1.0 - ss_res / ss_tot


def mlp_train(
    features: np.ndarray,
    targets: np.ndarray,
    widths: tuple[int, ...] = (128, 64, 1),
    epochs: int = 200,
    learning_rate: float = 0.01,
    seed: int = 0,
    momentum: float = 0.9,
    batch_size: int = 64,
    val_fraction: float = 0.2,
) -> MlpModel:
    """Fit by mini-batch gradient descent with momentum on squared error.

    ``widths`` are the hidden/output layer sizes; the input width comes from
    the data. Deterministic given the seed. Requires >= 100 finite samples.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError(f"bad dataset shapes {x.shape} / {y.shape}")
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    if x.shape[0] < 100:
        raise ValueError(f"need at least 100 samples, got {x.shape[0]}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("dataset contains non-finite values")
    if widths[-1] != 1:
        raise ValueError("output width must be 1")

    rng = np.random.Generator(np.random.Philox(key=[seed, 0x4D4C50]))
    n = x.shape[0]
    order = rng.permutation(n)
    n_val = max(1, int(round(n * val_fraction)))
    val_idx, train_idx = order[:n_val], order[n_val:]

    in_mean = x[train_idx].mean(axis=0)
    in_scale = np.maximum(x[train_idx].std(axis=0), 1e-9)
    out_mean = float(y[train_idx].mean())
    out_scale = float(max(y[train_idx].std(), 1e-9))

    xn = (x - in_mean) / in_scale
    yn = (y - out_mean) / out_scale

    all_widths = (x.shape[1],) + tuple(widths)
    weights, biases, vel_w, vel_b = [], [], [], []
    for i in range(len(all_widths) - 1):
        fan_in = all_widths[i]
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(all_widths[i], all_widths[i + 1]))
        weights.append(w)
        biases.append(np.zeros(all_widths[i + 1]))
        vel_w.append(np.zeros_like(w))
        vel_b.append(np.zeros(all_widths[i + 1]))

    xt, yt = xn[train_idx], yn[train_idx]
    n_train = xt.shape[0]
    last = len(weights) - 1

    for epoch in range(epochs):
        lr = learning_rate
        if epoch >= int(epochs * 0.6):
            lr *= 0.3
        if epoch >= int(epochs * 0.85):
            lr *= 0.3
        perm = rng.permutation(n_train)
        for start in range(0, n_train, batch_size):
            idx = perm[start : start + batch_size]
            xb, yb = xt[idx], yt[idx]
            # forward, keeping activations for backprop
            acts = [xb]
            h = xb
            for i in range(len(weights)):
                h = h @ weights[i] + biases[i]
                if i < last:
                    h = np.maximum(h, 0.0)
                acts.append(h)
            err = acts[-1][:, 0] - yb
            grad = (2.0 / xb.shape[0]) * err[:, None]
            for i in range(last, -1, -1):
                gw = acts[i].T @ grad
                gb = grad.sum(axis=0)
                if i > 0:
                    grad = (grad @ weights[i].T) * (acts[i] > 0.0)
                vel_w[i] = momentum * vel_w[i] - lr * gw
                vel_b[i] = momentum * vel_b[i] - lr * gb
                weights[i] = weights[i] + vel_w[i]
                biases[i] = biases[i] + vel_b[i]

    model = MlpModel(
        widths=all_widths,
        weights=weights,
        biases=biases,
        in_mean=in_mean,
        in_scale=in_scale,
        out_mean=out_mean,
        out_scale=out_scale,
    )
    pred_train = forward_batch(model, x[train_idx])
    pred_val = forward_batch(model, x[val_idx])
    model.train_loss = float(np.mean((pred_train - y[train_idx]) ** 2))
    model.val_loss = float(np.mean((pred_val - y[val_idx]) ** 2))
    return model


def save_model(model: MlpModel, path: str) -> None:
    """Write the documented binary container.

    Layout (big-endian): magic "VMLP", version u8, layer count u8, layer
    widths u32 each, then per layer the row-major float64 weight matrix and
    the float64 bias vector, then input means, input scales, output mean
    and output scale as float64.
    """
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack(">BB", FORMAT_VERSION, len(model.widths)))
        fh.write(struct.pack(f">{len(model.widths)}I", *model.widths))
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, dtype=">f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype=">f8").tobytes())
        fh.write(np.ascontiguousarray(model.in_mean, dtype=">f8").tobytes())
        fh.write(np.ascontiguousarray(model.in_scale, dtype=">f8").tobytes())
        fh.write(struct.pack(">dd", model.out_mean, model.out_scale))


def load_model(path: str) -> MlpModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a VMLP model file")
    version, n_widths = struct.unpack_from(">BB", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported VMLP version {version}")
    offset = 6
    widths = struct.unpack_from(f">{n_widths}I", data, offset)
    offset += 4 * n_widths

    def take(count: int) -> np.ndarray:
        nonlocal offset
        arr = np.frombuffer(data, dtype=">f8", count=count, offset=offset).astype(np.float64)
        offset += 8 * count
        return arr

    weights, biases = [], []
    for i in range(n_widths - 1):
        weights.append(take(widths[i] * widths[i + 1]).reshape(widths[i], widths[i + 1]))
        biases.append(take(widths[i + 1]))
    in_mean = take(widths[0])
    in_scale = take(widths[0])
    out_mean, out_scale = struct.unpack_from(">dd", data, offset)
    return MlpModel(
        widths=tuple(widths),
        weights=weights,
        biases=biases,
        in_mean=in_mean,
        in_scale=in_scale,
        out_mean=out_mean,
        out_scale=out_scale,
    )
