"""A small numpy CNN-FC engine with hand-written backward passes.

Arrays are channels-last: a batch is (batch, time, channels). Every layer is
a pair of functions, ``<layer>_forward`` returning ``(output, cache)`` and
``<layer>_backward`` consuming the cache, so each can be checked against
finite differences on its own.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DataError, ParameterError

# ---------------------------------------------------------------- layers


def conv1d_forward(x, w, b):
    """Same-padded 1D convolution. x: (B, T, C), w: (F, C, K), b: (F,)."""
    n, t, c = x.shape
    f, _, k = w.shape
    left = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (left, k - 1 - left), (0, 0)))
    cols = np.stack([xp[:, i : i + t, :] for i in range(k)], axis=2).reshape(n * t, k * c)
    wmat = w.transpose(2, 1, 0).reshape(k * c, f)
    out = (cols @ wmat).reshape(n, t, f) + b
    return out, (cols, wmat, x.shape, w.shape)


def conv1d_backward(dout, cache, need_dx=True):
    cols, wmat, (n, t, c), (f, _, k) = cache
    d2 = dout.reshape(n * t, f)
    dw = (cols.T @ d2).reshape(k, c, f).transpose(2, 1, 0)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ wmat.T).reshape(n, t, k, c)
    left = (k - 1) // 2
    dxp = np.zeros((n, t + k - 1, c), dtype=dout.dtype)
    for i in range(k):
        dxp[:, i : i + t, :] += dcols[:, :, i, :]
    return dxp[:, left : left + t, :], dw, db


def maxpool_forward(x, size=2):
    """Non-overlapping max pooling over time; a ragged tail is dropped."""
    n, t, c = x.shape
    t_out = t // size
    xr = x[:, : t_out * size, :].reshape(n, t_out, size, c)
    out = xr[:, :, 0, :]
    idx = np.zeros(out.shape, dtype=np.int8)
    for s in range(1, size):
        v = xr[:, :, s, :]
        take = v > out  # ties keep the earliest position
        out = np.maximum(out, v)
        idx = np.where(take, np.int8(s), idx)
    return out, (idx, x.shape, size)


def maxpool_backward(dout, cache):
    """Route each incoming gradient to the position that won the max."""
    idx, (n, t, c), size = cache
    t_out = dout.shape[1]
    won = idx[:, :, None, :] == np.arange(size, dtype=np.int8)[None, None, :, None]
    routed = (dout[:, :, None, :] * won).reshape(n, t_out * size, c)
    if t_out * size == t:
        return routed
    dx = np.zeros((n, t, c), dtype=dout.dtype)
    dx[:, : t_out * size, :] = routed
    return dx


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training,
                      momentum=0.99, eps=1e-3):
    """Per-channel normalization over batch and time.

    In training mode the running statistics are updated in place.
    """
    axes = tuple(range(x.ndim - 1))
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma, training)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, training = cache
    axes = tuple(range(dout.ndim - 1))
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma
    if not training:
        return dxhat * inv_std, dgamma, dbeta
    m = dout.size // dout.shape[-1]
    dx = inv_std / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


def dropout_forward(x, rate, rng):
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.dtype) / x.dtype.type(keep)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout * mask


def dense_forward(x, w, b):
    return x @ w + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    p = softmax(logits)
    n = logits.shape[0]
    rows = np.arange(n)
    loss = -np.mean(np.log(np.maximum(p[rows, labels], np.finfo(p.dtype).tiny)))
    dz = p.copy()
    dz[rows, labels] -= 1
    return float(loss), dz / n


# --------------------------------------------------------------- network


@dataclass(frozen=True)
class NetworkSpec:
    input_length: int = 500
    input_channels: int = 3
    filters: tuple[int, ...] = (32, 64, 64, 128, 256, 512)
    kernel_size: int = 3
    pool_size: int = 2
    batchnorm_after: tuple[int, ...] = (2, 3)  # 1-based conv indices
    dropout_after: tuple[int, ...] = (1,)
    dropout_rate: float = 0.2
    dense_units: int = 256
    n_classes: int = 2
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-3

    def time_lengths(self) -> list[int]:
        lengths = [self.input_length]
        for _ in self.filters:
            lengths.append(lengths[-1] // self.pool_size)
        return lengths

    @property
    def flatten_size(self) -> int:
        return self.time_lengths()[-1] * self.filters[-1]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        c = self.input_channels
        for i, f in enumerate(self.filters, 1):
            shapes[f"conv{i}.weight"] = (f, c, self.kernel_size)
            shapes[f"conv{i}.bias"] = (f,)
            if i in self.batchnorm_after:
                shapes[f"bn{i}.gamma"] = (f,)
                shapes[f"bn{i}.beta"] = (f,)
            c = f
        shapes["dense1.weight"] = (self.flatten_size, self.dense_units)
        shapes["dense1.bias"] = (self.dense_units,)
        shapes["dense2.weight"] = (self.dense_units, self.n_classes)
        shapes["dense2.bias"] = (self.n_classes,)
        return shapes

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())


PAPER_NETWORK = NetworkSpec()


@dataclass
class AdadeltaState:
    lr: float = 1.0
    rho: float = 0.95
    eps: float = 1e-6
    sq_grad: dict[str, np.ndarray] = field(default_factory=dict)
    sq_delta: dict[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0


@dataclass
class NetworkState:
    spec: NetworkSpec
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]  # batch-norm running statistics
    optimizer: AdadeltaState
    training: bool = False

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def copy(self) -> "NetworkState":
        return copy.deepcopy(self)


def build_network(seed: int, spec: NetworkSpec = PAPER_NETWORK, dtype=np.float32) -> NetworkState:
    """He-uniform weights, zero biases, unit batch-norm gain."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
            limit = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
        elif name.endswith(".gamma"):
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    buffers = {}
    for i in spec.batchnorm_after:
        f = spec.filters[i - 1]
        buffers[f"bn{i}.running_mean"] = np.zeros(f, dtype=dtype)
        buffers[f"bn{i}.running_var"] = np.ones(f, dtype=dtype)
    optimizer = AdadeltaState(
        sq_grad={k: np.zeros_like(v) for k, v in params.items()},
        sq_delta={k: np.zeros_like(v) for k, v in params.items()},
    )
    return NetworkState(spec=spec, params=params, buffers=buffers, optimizer=optimizer)


def forward(state: NetworkState, batch, training: bool = False, rng: np.random.Generator | None = None):
    """Class probabilities for a (B, T, C) batch plus the cache for ``backward``.

    Training mode uses batch statistics (and updates the running ones) and,
    when ``rng`` is given, inverted dropout.
    """
    spec, p = state.spec, state.params
    x = np.asarray(batch, dtype=state.dtype)
    if not np.isfinite(x).all():
        raise DataError("network input contains non-finite values")
    expected = (spec.input_length, spec.input_channels)
    if x.ndim != 3 or x.shape[1:] != expected:
        raise DataError(f"expected batch of shape (B, {expected[0]}, {expected[1]}), got {x.shape}")
    state.training = training
    caches = []
    for i in range(1, len(spec.filters) + 1):
        x, c = conv1d_forward(x, p[f"conv{i}.weight"], p[f"conv{i}.bias"])
        caches.append(("conv", i, c))
        if i in spec.batchnorm_after:
            x, c = batchnorm_forward(
                x, p[f"bn{i}.gamma"], p[f"bn{i}.beta"],
                state.buffers[f"bn{i}.running_mean"], state.buffers[f"bn{i}.running_var"],
                training, spec.bn_momentum, spec.bn_epsilon,
            )
            caches.append(("bn", i, c))
        x, c = relu_forward(x)
        caches.append(("relu", i, c))
        x, c = maxpool_forward(x, spec.pool_size)
        caches.append(("pool", i, c))
        if training and rng is not None and i in spec.dropout_after:
            x, c = dropout_forward(x, spec.dropout_rate, rng)
            caches.append(("dropout", i, c))
    caches.append(("flatten", 0, x.shape))
    x = x.reshape(x.shape[0], -1)
    x, c = dense_forward(x, p["dense1.weight"], p["dense1.bias"])
    caches.append(("dense", 1, c))
    x, c = relu_forward(x)
    caches.append(("relu", 0, c))
    logits, c = dense_forward(x, p["dense2.weight"], p["dense2.bias"])
    caches.append(("dense", 2, c))
    return softmax(logits), (logits, caches)


def backward(state: NetworkState, cache, labels) -> tuple[dict[str, np.ndarray], float]:
    """Gradients of mean softmax cross-entropy for every trainable parameter."""
    logits, caches = cache
    labels = np.asarray(labels, dtype=np.intp)
    loss, d = softmax_cross_entropy(logits, labels)
    grads = {}
    for kind, i, c in reversed(caches):
        if kind == "dense":
            d, grads[f"dense{i}.weight"], grads[f"dense{i}.bias"] = dense_backward(d, c)
        elif kind == "relu":
            d = relu_backward(d, c)
        elif kind == "flatten":
            d = d.reshape(c)
        elif kind == "dropout":
            d = dropout_backward(d, c)
        elif kind == "pool":
            d = maxpool_backward(d, c)
        elif kind == "bn":
            d, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = batchnorm_backward(d, c)
        elif kind == "conv":
            d, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = conv1d_backward(d, c, i > 1)
    return {k: grads[k] for k in state.params}, loss


def adadelta_step(state: NetworkState, grads: dict[str, np.ndarray]) -> NetworkState:
    opt = state.optimizer
    for name, g in grads.items():
        theta = state.params[name]
        if g.shape != theta.shape:
            raise ParameterError(f"gradient for {name} has shape {g.shape}, expected {theta.shape}")
        eg = opt.sq_grad[name]
        ed = opt.sq_delta[name]
        eg *= opt.rho
        eg += (1 - opt.rho) * g * g
        delta = -np.sqrt(ed + opt.eps) / np.sqrt(eg + opt.eps) * g
        ed *= opt.rho
        ed += (1 - opt.rho) * delta * delta
        theta += opt.lr * delta
    opt.steps += 1
    return state


# -------------------------------------------------------------- training


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def predict_proba(state: NetworkState, x, batch_size: int = 256) -> np.ndarray:
    x = np.asarray(x)
    out = [forward(state, x[s : s + batch_size])[0] for s in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.empty((0, state.spec.n_classes))


def predict(state: NetworkState, x, batch_size: int = 256) -> np.ndarray:
    """Arg-max class; ties resolve to class 0."""
    return np.argmax(predict_proba(state, x, batch_size), axis=1)


def evaluate(state: NetworkState, x, y, batch_size: int = 256) -> tuple[float, float]:
    """Mean cross-entropy and accuracy in inference mode."""
    probs = predict_proba(state, x, batch_size).astype(np.float64)
    y = np.asarray(y, dtype=np.intp)
    loss = -np.mean(np.log(np.maximum(probs[np.arange(len(y)), y], 1e-300)))
    return float(loss), float(np.mean(np.argmax(probs, axis=1) == y))


def train_network(state: NetworkState, train, validation, max_epochs: int = 100,
                  batch_size: int = 64, patience: int = 10, seed: int = 0):
    """Mini-batch Adadelta with early stopping on validation loss.

    ``train`` and ``validation`` are ``(x, y)`` pairs with y in {0, 1}.
    Returns the state holding the lowest-validation-loss parameters and the
    per-epoch history.
    """
    x_tr, y_tr = np.asarray(train[0], dtype=state.dtype), np.asarray(train[1], dtype=np.intp)
    x_va, y_va = np.asarray(validation[0], dtype=state.dtype), np.asarray(validation[1], dtype=np.intp)
    if len(x_tr) == 0 or len(x_va) == 0:
        raise DataError("training and validation sets must be non-empty")
    rng = np.random.default_rng(seed)
    history: list[EpochRecord] = []
    best_loss = np.inf
    best = None
    since_best = 0
    for epoch in range(max_epochs):
        losses = []
        for idx in _batches(len(x_tr), batch_size, rng):
            _, cache = forward(state, x_tr[idx], training=True, rng=rng)
            grads, loss = backward(state, cache, y_tr[idx])
            adadelta_step(state, grads)
            losses.append(loss * len(idx))
        val_loss, val_acc = evaluate(state, x_va, y_va)
        history.append(EpochRecord(epoch, float(np.sum(losses) / len(x_tr)), val_loss, val_acc))
        if val_loss < best_loss:
            best_loss, best, since_best = val_loss, state.copy(), 0
        else:
            since_best += 1
        if since_best >= patience:
            break
    best.training = False
    return best, history


# ------------------------------------------------------------ checkpoint

MAGIC = "mijoint-checkpoint-v1"


def _checkpoint_arrays(state: NetworkState) -> dict[str, np.ndarray]:
    arrays = dict(state.params)
    arrays.update(state.buffers)
    arrays.update({f"adadelta.sq_grad.{k}": v for k, v in state.optimizer.sq_grad.items()})
    arrays.update({f"adadelta.sq_delta.{k}": v for k, v in state.optimizer.sq_delta.items()})
    return arrays


def save_checkpoint(state: NetworkState, path: str | Path) -> None:
    """One JSON manifest line, then little-endian float32 arrays in manifest order."""
    arrays = _checkpoint_arrays(state)
    opt = state.optimizer
    manifest = {
        "format": MAGIC,
        "spec": asdict(state.spec),
        "optimizer": {"lr": opt.lr, "rho": opt.rho, "eps": opt.eps, "steps": opt.steps},
        "arrays": [[k, list(v.shape)] for k, v in arrays.items()],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest).encode("utf-8") + b"\n")
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> NetworkState:
    with open(path, "rb") as fh:
        manifest = json.loads(fh.readline().decode("utf-8"))
        if manifest.get("format") != MAGIC:
            raise DataError(f"{path} is not a checkpoint file")
        spec_fields = manifest["spec"]
        for k, v in spec_fields.items():
            if isinstance(v, list):
                spec_fields[k] = tuple(v)
        state = build_network(0, NetworkSpec(**spec_fields))
        arrays = {}
        for name, shape in manifest["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(4 * count)
            if len(buf) != 4 * count:
                raise DataError(f"checkpoint truncated while reading {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32)
    for name in state.params:
        state.params[name] = arrays[name]
    for name in state.buffers:
        state.buffers[name] = arrays[name]
    opt = state.optimizer
    opt.lr, opt.rho, opt.eps, opt.steps = (manifest["optimizer"][k] for k in ("lr", "rho", "eps", "steps"))
    opt.sq_grad = {k: arrays[f"adadelta.sq_grad.{k}"] for k in state.params}
    opt.sq_delta = {k: arrays[f"adadelta.sq_delta.{k}"] for k in state.params}
    return state


def parameter_count(spec: NetworkSpec = PAPER_NETWORK) -> int:
    return spec.n_params()

