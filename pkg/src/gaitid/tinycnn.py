"""Four-layer gait CNN in plain numpy.

Layer stack (NHWC, one input channel)::

    rows x cols x 1 -> conv 3x3 same, 32 filters -> ReLU -> maxpool 2x2/2
    -> flatten -> dense 256 -> ReLU -> dense 128 -> ReLU -> dense 32 -> ReLU
    -> dense n_classes -> softmax

Inputs are standardised per feature by a fixed affine stage
(``input_shift``, ``input_scale``) that ``train`` fits on the training split;
it holds no trainable parameters. All array functions work on a batch axis in
front and in whatever float dtype the parameters carry, so the same code
serves float32 training and float64 gradient checks.
"""

import struct
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (ConfigError, DatasetError, DegenerateInputError,
                     FormatError, ShapeError, UnsupportedVersionError)

GMDL_MAGIC = b"GMDL"
GMDL_VERSION = 1
KIND_FLOAT = 0
KIND_INT8 = 1

# Label for non-walking windows; trained toward a uniform output, never predicted.
BACKGROUND = -1


@dataclass(frozen=True)
class ModelConfig:
    input_rows: int = 13
    input_cols: int = 6
    conv_filters: int = 32
    conv_kernel: tuple = (3, 3)
    pool: int = 2
    dense_units: tuple = (256, 128, 32)
    n_classes: int = 24

    def __post_init__(self):
        object.__setattr__(self, "conv_kernel", tuple(int(k) for k in self.conv_kernel))
        object.__setattr__(self, "dense_units", tuple(int(u) for u in self.dense_units))
        dims = (self.input_rows, self.input_cols, self.conv_filters, self.pool,
                *self.conv_kernel, *self.dense_units)
        if any(d <= 0 for d in dims):
            raise ConfigError(f"all model dimensions must be positive: {self}")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be at least 2")
        if any(k % 2 == 0 for k in self.conv_kernel):
            raise ConfigError("'same' padding needs odd kernel sizes")
        if self.pool_shape[0] == 0 or self.pool_shape[1] == 0:
            raise ConfigError("input too small for pooling")

    @property
    def conv_shape(self):
        return (self.input_rows, self.input_cols, self.conv_filters)

    @property
    def pool_shape(self):
        return (self.input_rows // self.pool, self.input_cols // self.pool,
                self.conv_filters)

    @property
    def flat_size(self):
        r, c, f = self.pool_shape
        return r * c * f

    def param_shapes(self):
        """``(name, shape)`` for every tensor, in declaration order."""
        kh, kw = self.conv_kernel
        shapes = [("conv_w", (kh, kw, 1, self.conv_filters)),
                  ("conv_b", (self.conv_filters,))]
        widths = [self.flat_size, *self.dense_units, self.n_classes]
        for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            shapes += [(f"dense{i}_w", (n_in, n_out)), (f"dense{i}_b", (n_out,))]
        return shapes


@dataclass(eq=False)
class ModelParams:
    config: ModelConfig
    tensors: List[np.ndarray]
    input_shift: Optional[np.ndarray] = None
    input_scale: Optional[np.ndarray] = None

    def __post_init__(self):
        shape = (self.config.input_rows, self.config.input_cols)
        dtype = self.tensors[0].dtype
        if self.input_shift is None:
            self.input_shift = np.zeros(shape, dtype=dtype)
        if self.input_scale is None:
            self.input_scale = np.ones(shape, dtype=dtype)

    @property
    def names(self):
        return [name for name, _ in self.config.param_shapes()]

    def __getitem__(self, name):
        return self.tensors[self.names.index(name)]

    @property
    def n_params(self):
        return sum(t.size for t in self.tensors)

    @property
    def dtype(self):
        return self.tensors[0].dtype

    def astype(self, dtype):
        return ModelParams(self.config, [t.astype(dtype) for t in self.tensors],
                           self.input_shift.astype(dtype), self.input_scale.astype(dtype))

    def copy(self):
        return ModelParams(self.config, [t.copy() for t in self.tensors],
                           self.input_shift.copy(), self.input_scale.copy())

    def normalize(self, X):
        return (X - self.input_shift) / self.input_scale

    def predict_proba(self, X):
        return predict_proba(self, X)


def build_model(config=ModelConfig(), seed=0):
    """He-uniform weights, zero biases; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    tensors = []
    for name, shape in config.param_shapes():
        if name.endswith("_b"):
            tensors.append(np.zeros(shape, dtype=np.float32))
        else:
            fan_in = int(np.prod(shape[:-1]))
            limit = np.sqrt(6.0 / fan_in)
            tensors.append(rng.uniform(-limit, limit, size=shape).astype(np.float32))
    return ModelParams(config, tensors)


# ------------------------------------------------------------ kernels ----

def _as_batch(params, X):
    cfg = params.config
    if hasattr(X, "values"):
        X = X.values
    X = np.asarray(X, dtype=params.dtype)
    if X.ndim == 2:
        X = X[None]
    if X.shape[1:] != (cfg.input_rows, cfg.input_cols):
        raise ShapeError(f"input grid {X.shape[1:]} does not match model "
                         f"{(cfg.input_rows, cfg.input_cols)}")
    return X


def im2col_same(x, kh, kw):
    """Patches of a zero-padded (B, R, C) array -> (B, R, C, kh*kw)."""
    b, r, c = x.shape
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    return sliding_window_view(xp, (kh, kw), axis=(1, 2)).reshape(b, r, c, kh * kw)


def maxpool_forward(a, p):
    """Max over non-overlapping p x p windows (floor); returns (out, argmax)."""
    b, r, c, f = a.shape
    rp, cp = r // p, c // p
    win = (a[:, :rp * p, :cp * p]
           .reshape(b, rp, p, cp, p, f)
           .transpose(0, 1, 3, 5, 2, 4)
           .reshape(b, rp, cp, f, p * p))
    idx = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool_backward(grad, idx, in_shape, p):
    """Route each pooled gradient to the single input that won the max."""
    b, r, c, f = in_shape
    rp, cp = r // p, c // p
    win = np.zeros((b, rp, cp, f, p * p), dtype=grad.dtype)
    np.put_along_axis(win, idx[..., None], grad[..., None], axis=-1)
    full = np.zeros(in_shape, dtype=grad.dtype)
    full[:, :rp * p, :cp * p] = (win.reshape(b, rp, cp, f, p, p)
                                 .transpose(0, 1, 4, 2, 5, 3)
                                 .reshape(b, rp * p, cp * p, f))
    return full


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(params, X):
    cfg = params.config
    kh, kw = cfg.conv_kernel
    t = params.tensors
    cols = im2col_same(params.normalize(X), kh, kw)
    z0 = cols @ t[0].reshape(kh * kw, -1) + t[1]
    a0 = np.maximum(z0, 0)
    pooled, pidx = maxpool_forward(a0, cfg.pool)
    h = pooled.reshape(X.shape[0], -1)
    cache = {"cols": cols, "z0": z0, "pidx": pidx, "acts": [h], "pre": []}
    n_dense = len(t) // 2 - 1
    for i in range(n_dense):
        z = h @ t[2 + 2 * i] + t[3 + 2 * i]
        cache["pre"].append(z)
        h = np.maximum(z, 0) if i < n_dense - 1 else z
        if i < n_dense - 1:
            cache["acts"].append(h)
    return h, cache


def logits(params, X):
    return _forward(params, _as_batch(params, X))[0]


def predict_proba(params, X):
    """Class probabilities, shape (batch, n_classes)."""
    return softmax(logits(params, X))


def forward(params, grid):
    """Probability vector for a single feature grid."""
    X = _as_batch(params, grid)
    if X.shape[0] != 1:
        raise ShapeError("forward takes one grid; use predict_proba for batches")
    return predict_proba(params, X)[0]


def _targets(y, n_classes, dtype):
    """One-hot rows; ``BACKGROUND`` labels get the uniform distribution."""
    target = np.zeros((len(y), n_classes), dtype=dtype)
    fg = y != BACKGROUND
    target[np.flatnonzero(fg), y[fg]] = 1.0
    target[~fg] = 1.0 / n_classes
    return target


def cross_entropy(z, y):
    """Mean cross-entropy of logits ``z`` against integer labels ``y``."""
    y = np.asarray(y)
    z = z - z.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return -(logp * _targets(y, z.shape[-1], z.dtype)).sum(axis=-1).mean()


def loss_and_grads(params, X, y):
    """Mean softmax cross-entropy over the batch and its parameter gradients."""
    X = _as_batch(params, X)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise DegenerateInputError("empty batch")
    if len(y) != X.shape[0]:
        raise ShapeError("labels and inputs differ in length")
    cfg = params.config
    if y.min() < BACKGROUND or y.max() >= cfg.n_classes:
        raise DatasetError("label out of range")
    t = params.tensors
    out, cache = _forward(params, X)
    loss = cross_entropy(out, y)

    b = X.shape[0]
    grad = (softmax(out) - _targets(y, cfg.n_classes, out.dtype)) / b

    grads = [None] * len(t)
    n_dense = len(t) // 2 - 1
    for i in reversed(range(n_dense)):
        h = cache["acts"][i]
        grads[2 + 2 * i] = h.T @ grad
        grads[3 + 2 * i] = grad.sum(axis=0)
        grad = grad @ t[2 + 2 * i].T
        if i > 0:
            grad = grad * (cache["pre"][i - 1] > 0)

    z0 = cache["z0"]
    grad = grad.reshape(b, *cfg.pool_shape)
    grad = maxpool_backward(grad, cache["pidx"], z0.shape, cfg.pool)
    grad = grad * (z0 > 0)
    kh, kw = cfg.conv_kernel
    f = cfg.conv_filters
    grads[0] = (cache["cols"].reshape(-1, kh * kw).T @ grad.reshape(-1, f)
                ).reshape(kh, kw, 1, f)
    grads[1] = grad.reshape(-1, f).sum(axis=0)
    return float(loss), [g.astype(params.dtype) for g in grads]


# ----------------------------------------------------------- training ----

def fit_normalization(X, min_std=1e-6):
    """Per-feature mean and standard deviation (floored) of a batch of grids."""
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std < min_std, 1.0, std)
    return mean.astype(np.float32), std.astype(np.float32)


class Adam:
    """Adam optimizer updating a list of arrays in place."""

    def __init__(self, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-7):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, tensors, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in tensors]
            self.v = [np.zeros_like(p) for p in tensors]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for p, g, m, v in zip(tensors, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (lr_t * m / (np.sqrt(v) + self.eps)).astype(p.dtype)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 5e-4
    batch_size: int = 32
    val_fraction: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")


def stratified_split(y, val_fraction, rng):
    """Split indices so each class gives ~val_fraction of its samples to validation.

    The total validation size is ``round(len(y) * val_fraction)``; per-class
    shares are apportioned by largest remainder.
    """
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    n_val = int(round(len(y) * val_fraction))
    quota = counts * val_fraction
    take = np.floor(quota).astype(int)
    short = n_val - take.sum()
    if short > 0:
        order = np.argsort(-(quota - take), kind="stable")
        take[order[:short]] += 1
    train_idx, val_idx = [], []
    for cls, k in zip(classes, take):
        idx = rng.permutation(np.flatnonzero(y == cls))
        val_idx.append(idx[:k])
        train_idx.append(idx[k:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(val_idx))


def _loss_acc(params, X, y, batch=1024):
    """Mean loss over all samples; accuracy over foreground samples only."""
    losses, hits = 0.0, 0
    for s in range(0, len(y), batch):
        z = logits(params, X[s:s + batch])
        losses += cross_entropy(z.astype(np.float64), y[s:s + batch]) * len(z)
        hits += int((np.argmax(z, axis=1) == y[s:s + batch]).sum())
    return losses / len(y), hits / max(1, int((y != BACKGROUND).sum()))


def train(X, y, train_config=TrainConfig(), model_config=None, log=None):
    """Fit the CNN; returns ``(best_params, history)``.

    Samples labelled ``BACKGROUND`` are pulled toward a uniform output and
    do not count toward accuracy.

    ``history`` holds one dict per epoch with train/val loss and accuracy.
    The returned parameters are those of the epoch with the highest
    validation accuracy (earliest on ties).
    """
    X = np.asarray(X, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    if model_config is None:
        model_config = ModelConfig(input_rows=X.shape[1], input_cols=X.shape[2],
                                   n_classes=int(y.max()) + 1)
    missing = set(range(model_config.n_classes)) - set(np.unique(y[y >= 0]).tolist())
    if missing:
        raise DatasetError(f"classes without samples: {sorted(missing)}")
    if y.max() >= model_config.n_classes:
        raise DatasetError("label exceeds n_classes")

    rng = np.random.default_rng(train_config.seed)
    tr, va = stratified_split(y, train_config.val_fraction, rng)
    params = build_model(model_config, seed=train_config.seed)
    params.input_shift, params.input_scale = fit_normalization(X[tr])
    opt = Adam(train_config.learning_rate, train_config.beta1,
               train_config.beta2, train_config.epsilon)
    history = []
    best, best_acc = params.copy(), -1.0
    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(tr)
        for s in range(0, len(order), train_config.batch_size):
            batch = order[s:s + train_config.batch_size]
            _, grads = loss_and_grads(params, X[batch], y[batch])
            opt.step(params.tensors, grads)
        tr_loss, tr_acc = _loss_acc(params, X[tr], y[tr])
        va_loss, va_acc = _loss_acc(params, X[va], y[va])
        history.append({"epoch": epoch, "train_loss": tr_loss, "train_acc": tr_acc,
                        "val_loss": va_loss, "val_acc": va_acc})
        if log:
            log(f"epoch {epoch:2d}  loss {tr_loss:.4f}  acc {tr_acc:.4f}  "
                f"val_loss {va_loss:.4f}  val_acc {va_acc:.4f}")
        if va_acc > best_acc:
            best, best_acc = params.copy(), va_acc
    return best, history


# --------------------------------------------------------- evaluation ----

@dataclass(eq=False)
class EvalReport:
    accuracy: float
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    def format(self):
        lines = [f"accuracy {self.accuracy:.3f}", "confusion (rows=true, cols=pred):"]
        width = max(3, len(str(int(self.confusion.max(initial=0)))))
        for i, row in enumerate(self.confusion):
            lines.append(f"{i:3d} | " + " ".join(f"{v:{width}d}" for v in row))
        lines.append("class precision recall")
        for i, (p, r) in enumerate(zip(self.precision, self.recall)):
            lines.append(f"{i:5d} {p:9.3f} {r:6.3f}")
        return "\n".join(lines)


def report_from_predictions(pred, y, n_classes):
    pred = np.asarray(pred, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (y, pred), 1)
    diag = np.diag(conf).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.nan_to_num(diag / conf.sum(axis=0))
        recall = np.nan_to_num(diag / conf.sum(axis=1))
    return EvalReport(float(diag.sum() / len(y)), conf, precision, recall)


def evaluate(model, X, y):
    """Accuracy and confusion matrix; ties in argmax go to the lower class."""
    y = np.asarray(y)
    if len(y) == 0:
        raise DegenerateInputError("empty evaluation set")
    probs = model.predict_proba(X)
    return report_from_predictions(np.argmax(probs, axis=1), y, probs.shape[1])


# -------------------------------------------------------------- GMDL -----

def pack_header(config, kind):
    kh, kw = config.conv_kernel
    head = struct.pack("<4sHBHHHBBBB", GMDL_MAGIC, GMDL_VERSION, kind,
                       config.input_rows, config.input_cols, config.conv_filters,
                       kh, kw, config.pool, len(config.dense_units))
    head += struct.pack(f"<{len(config.dense_units)}HH", *config.dense_units,
                        config.n_classes)
    return head


class Reader:
    """Bounds-checked little-endian cursor over a byte string."""

    def __init__(self, raw):
        self.raw = raw
        self.off = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.off + size > len(self.raw):
            raise FormatError("unexpected end of file", offset=self.off)
        vals = struct.unpack_from(fmt, self.raw, self.off)
        self.off += size
        return vals

    def array(self, dtype, shape):
        n = int(np.prod(shape))
        size = n * np.dtype(dtype).itemsize
        if self.off + size > len(self.raw):
            raise FormatError("unexpected end of file", offset=self.off)
        a = np.frombuffer(self.raw, dtype=dtype, count=n, offset=self.off)
        self.off += size
        return a.reshape(shape).copy()

    def done(self):
        if self.off != len(self.raw):
            raise FormatError("trailing bytes after model", offset=self.off)


def unpack_header(reader, expected_kind):
    magic, version, kind = reader.take("<4sHB")
    if magic != GMDL_MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != GMDL_VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}", offset=4)
    if kind != expected_kind:
        raise FormatError(f"model kind {kind}, expected {expected_kind}", offset=6)
    rows, cols, filters, kh, kw, pool, n_dense = reader.take("<HHHBBBB")
    *units, n_classes = reader.take(f"<{n_dense}HH")
    try:
        return ModelConfig(rows, cols, filters, (kh, kw), pool, tuple(units), n_classes)
    except ConfigError as exc:
        raise FormatError(f"invalid model config: {exc}", offset=7) from None


def save_model(params, path):
    with open(path, "wb") as fh:
        fh.write(pack_header(params.config, KIND_FLOAT))
        for t in [*params.tensors, params.input_shift, params.input_scale]:
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        reader = Reader(fh.read())
    config = unpack_header(reader, KIND_FLOAT)
    tensors = [reader.array("<f4", shape).astype(np.float32)
               for _, shape in config.param_shapes()]
    grid = (config.input_rows, config.input_cols)
    shift = reader.array("<f4", grid).astype(np.float32)
    scale = reader.array("<f4", grid).astype(np.float32)
    reader.done()
    return ModelParams(config, tensors, shift, scale)
