"""Post-training INT8 quantization and integer-only inference.

Weights are quantized per tensor and symmetrically (zero point 0);
activations asymmetrically over their calibrated range. Every layer
accumulates in int32 and is requantized to int8 by a fixed-point
multiplier ``mantissa * 2**-shift`` with round-half-to-even. The last dense
layer skips requantization: its int32 accumulator is scaled straight to
float logits for the softmax.
"""

import json
import math
import struct
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import CalibrationError, FormatError, ShapeError
from .tinycnn import (KIND_INT8, ModelConfig, Reader, _as_batch, im2col_same,
                      maxpool_forward, pack_header, softmax, unpack_header)

MIN_CALIBRATION_SAMPLES = 32
MIN_SPAN = 1e-6
QMIN, QMAX = -128, 127


# --------------------------------------------------------- calibration ----

def calibrate(params, X):
    """Min/max of every activation over float forward passes.

    Returns a dict keyed by ``input`` (measured after the model's input
    normalization), ``conv_pre``, ``conv``, ``dense{i}_pre`` and ``dense{i}``;
    the unsuffixed keys are post-activation. Every range contains 0 and spans
    at least ``MIN_SPAN``.
    """
    if X is None or len(X) == 0:
        raise CalibrationError("empty calibration set")
    X = _as_batch(params, X)
    if X.shape[0] < MIN_CALIBRATION_SAMPLES:
        raise CalibrationError(
            f"need >= {MIN_CALIBRATION_SAMPLES} calibration samples, got {X.shape[0]}")
    X = params.astype(np.float64).normalize(X.astype(np.float64))
    cfg = params.config
    t = [w.astype(np.float64) for w in params.tensors]
    kh, kw = cfg.conv_kernel
    ranges = {"input": X}
    z = im2col_same(X, kh, kw) @ t[0].reshape(kh * kw, -1) + t[1]
    ranges["conv_pre"] = z
    a = np.maximum(z, 0)
    ranges["conv"] = a
    h = maxpool_forward(a, cfg.pool)[0].reshape(len(X), -1)
    n_dense = len(t) // 2 - 1
    for i in range(n_dense):
        z = h @ t[2 + 2 * i] + t[3 + 2 * i]
        h = np.maximum(z, 0) if i < n_dense - 1 else z
        ranges[f"dense{i}_pre"] = z
        ranges[f"dense{i}"] = h
    return {k: _widen(float(v.min()), float(v.max())) for k, v in ranges.items()}


def _widen(lo, hi):
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    if hi - lo < MIN_SPAN:
        hi = lo + MIN_SPAN
    return lo, hi


# -------------------------------------------------------- primitives -----

@dataclass(eq=False)
class QuantTensor:
    values: np.ndarray
    scale: float
    zero_point: int = 0

    def dequantize(self):
        return self.scale * (self.values.astype(np.float64) - self.zero_point)


def quantize_weights(w):
    """Symmetric per-tensor int8: scale = max|w| / 127 (1.0 for all-zero)."""
    w = np.asarray(w, dtype=np.float64)
    amax = float(np.abs(w).max()) if w.size else 0.0
    scale = amax / 127.0 if amax > 0 else 1.0
    q = np.clip(np.round(w / scale), -127, 127).astype(np.int8)
    return QuantTensor(q, scale, 0)


def activation_params(lo, hi):
    """Asymmetric int8 ``(scale, zero_point)`` covering ``[lo, hi]``."""
    scale = (hi - lo) / (QMAX - QMIN)
    zp = int(np.clip(round(QMIN - lo / scale), QMIN, QMAX))
    return scale, zp


def quantize_activation(x, scale, zero_point):
    q = np.round(np.asarray(x, dtype=np.float64) / scale) + zero_point
    return np.clip(q, QMIN, QMAX).astype(np.int8)


def quantize_multiplier(real):
    """Split a positive real into ``(mantissa, shift)`` with
    ``real ~= mantissa * 2**-shift`` and ``2**30 <= mantissa < 2**31``."""
    if not real > 0:
        raise ValueError(f"multiplier must be positive, got {real}")
    m, e = math.frexp(real)
    mantissa = int(round(m * (1 << 31)))
    if mantissa == 1 << 31:
        mantissa //= 2
        e += 1
    shift = 31 - e
    if shift < 1 or shift > 62:
        raise ValueError(f"multiplier {real} outside the representable range")
    return mantissa, shift


def rounding_shift(acc, mantissa, shift):
    """``round_half_even(acc * mantissa / 2**shift)`` in exact int64 arithmetic."""
    prod = np.asarray(acc, dtype=np.int64) * np.int64(mantissa)
    q = prod >> shift
    rem = prod - (q << shift)
    half = np.int64(1) << (shift - 1)
    q += (rem > half) | ((rem == half) & ((q & 1) == 1))
    return q


def _int_matmul(a, b):
    # Exact: operands are small integers and every partial sum stays far below
    # 2**53, so float64 BLAS reproduces the int32 accumulation bit for bit.
    return np.rint(a.astype(np.float64) @ b.astype(np.float64)).astype(np.int64)


# --------------------------------------------------------------- model ----

@dataclass(eq=False)
class QuantLayer:
    kind: str                      # "conv" | "maxpool" | "dense"
    in_shape: tuple
    out_shape: tuple
    weight: Optional[QuantTensor] = None
    bias: Optional[np.ndarray] = None  # int32, scale = in_scale * weight.scale
    in_scale: float = 1.0
    in_zp: int = 0
    out_scale: float = 1.0
    out_zp: int = 0
    mantissa: int = 0
    shift: int = 0
    relu: bool = False
    final: bool = False            # emits int32 accumulators instead of int8
    pool: int = 2

    @property
    def out_itemsize(self):
        return 4 if self.final else 1

    @property
    def real_multiplier(self):
        return self.in_scale * self.weight.scale / self.out_scale


@dataclass(eq=False)
class QuantModel:
    input_shape: tuple
    input_scale: float
    input_zp: int
    layers: List[QuantLayer]
    config: Optional[ModelConfig] = None
    norm_shift: Optional[np.ndarray] = None   # float stage ahead of input quantization
    norm_scale: Optional[np.ndarray] = None

    @property
    def n_classes(self):
        return self.layers[-1].out_shape[-1]

    def predict_proba(self, X):
        return q_predict_proba(self, X)


def _requant_layer(kind, w, b, in_scale, in_zp, out_range, relu, in_shape, out_shape):
    wq = quantize_weights(w)
    acc_scale = in_scale * wq.scale
    bias = np.round(np.asarray(b, dtype=np.float64) / acc_scale).astype(np.int32)
    layer = QuantLayer(kind, in_shape, out_shape, wq, bias, in_scale, in_zp, relu=relu)
    if out_range is None:
        layer.final = True
        layer.out_scale = acc_scale
    else:
        layer.out_scale, layer.out_zp = activation_params(*out_range)
        layer.mantissa, layer.shift = quantize_multiplier(layer.real_multiplier)
    return layer


def quantize(params, ranges):
    """Build the integer model from float parameters and calibrated ranges."""
    cfg = params.config
    t = [w.astype(np.float64) for w in params.tensors]
    in_shape = (cfg.input_rows, cfg.input_cols, 1)
    s_in, zp_in = activation_params(*ranges["input"])
    layers = []
    conv = _requant_layer("conv", t[0], t[1], s_in, zp_in, ranges["conv"], True,
                          in_shape, cfg.conv_shape)
    layers.append(conv)
    # max pooling commutes with the monotone int8 mapping: scale and zp pass through
    layers.append(QuantLayer("maxpool", cfg.conv_shape, cfg.pool_shape,
                             in_scale=conv.out_scale, in_zp=conv.out_zp,
                             out_scale=conv.out_scale, out_zp=conv.out_zp,
                             pool=cfg.pool))
    s, zp = conv.out_scale, conv.out_zp
    n_dense = len(t) // 2 - 1
    width = cfg.flat_size
    for i in range(n_dense):
        last = i == n_dense - 1
        w, b = t[2 + 2 * i], t[3 + 2 * i]
        layer = _requant_layer("dense", w, b, s, zp,
                               None if last else ranges[f"dense{i}"], not last,
                               (width,), (w.shape[1],))
        layers.append(layer)
        s, zp, width = layer.out_scale, layer.out_zp, w.shape[1]
    return QuantModel(in_shape, s_in, zp_in, layers, cfg,
                      params.input_shift.astype(np.float32).copy(),
                      params.input_scale.astype(np.float32).copy())


# ------------------------------------------------------------ kernels ----

def _requantize(acc, layer):
    q = rounding_shift(acc, layer.mantissa, layer.shift) + layer.out_zp
    lo = max(QMIN, layer.out_zp) if layer.relu else QMIN
    return np.clip(q, lo, QMAX).astype(np.int8)


def conv_accumulate(xq, layer):
    """int32 accumulators of a same-padded conv over int8 input (B, R, C)."""
    kh, kw = layer.weight.values.shape[:2]
    x = xq.astype(np.int64) - layer.in_zp   # zero padding == real-valued zero
    cols = im2col_same(x, kh, kw)
    acc = _int_matmul(cols, layer.weight.values.reshape(kh * kw, -1))
    return acc + layer.bias


def dense_accumulate(xq, layer):
    x = xq.astype(np.int64) - layer.in_zp
    return _int_matmul(x, layer.weight.values) + layer.bias


def q_logits(qmodel, X):
    """Float logits of the integer pipeline for a batch of grids."""
    X = np.asarray(getattr(X, "values", X), dtype=np.float64)
    rows_cols = tuple(qmodel.input_shape[:2]) if len(qmodel.input_shape) == 3 else None
    if rows_cols is not None:
        if X.ndim == 2:
            X = X[None]
        if X.shape[1:] != rows_cols:
            raise ShapeError(f"input grid {X.shape[1:]} does not match model {rows_cols}")
    else:
        if X.ndim == 1:
            X = X[None]
        if X.shape[1:] != tuple(qmodel.input_shape):
            raise ShapeError(f"input {X.shape[1:]} does not match model {qmodel.input_shape}")
    if qmodel.norm_shift is not None:
        X = (X - qmodel.norm_shift) / qmodel.norm_scale
    h = quantize_activation(X, qmodel.input_scale, qmodel.input_zp)
    for layer in qmodel.layers:
        if layer.kind == "conv":
            h = _requantize(conv_accumulate(h, layer), layer)
        elif layer.kind == "maxpool":
            h = maxpool_forward(h, layer.pool)[0]
            h = h.reshape(len(h), -1)
        else:
            if h.ndim > 2:
                h = h.reshape(len(h), -1)
            acc = dense_accumulate(h, layer)
            if layer.final:
                return acc.astype(np.float64) * layer.out_scale
            h = _requantize(acc, layer)
    raise ValueError("quantized model has no final layer")


def q_predict_proba(qmodel, X):
    return softmax(q_logits(qmodel, X))


def q_forward(qmodel, grid):
    """Probability vector of the integer pipeline for one feature grid."""
    p = q_predict_proba(qmodel, grid)
    if p.shape[0] != 1:
        raise ShapeError("q_forward takes one grid; use q_predict_proba for batches")
    return p[0]


# ------------------------------------------------------------- memory ----

LAYER_META_BYTES = 8 + 8 + 4 + 4 + 4   # weight scale, out scale, zp, mantissa, shift


@dataclass
class MemoryReport:
    flash_bytes: int
    arena_bytes: int
    layers: list = field(default_factory=list)

    @property
    def weight_bytes(self):
        return sum(l["weight_bytes"] + l["bias_bytes"] for l in self.layers)

    def to_json(self):
        return json.dumps({"flash_bytes": self.flash_bytes,
                           "weight_payload_bytes": self.weight_bytes,
                           "arena_bytes": self.arena_bytes,
                           "layers": self.layers}, indent=2)


def _scratch_bytes(layer):
    if layer.kind == "conv":
        kh, kw = layer.weight.values.shape[:2]
        return kh * kw * layer.in_shape[-1] * 2   # one int16 im2col column
    return 0


def header_bytes(qmodel):
    """Model header, input quantization record and normalization constants."""
    size = 8 + 4
    if qmodel.config is not None:
        size += len(pack_header(qmodel.config, KIND_INT8))
    if qmodel.norm_shift is not None:
        size += 4 * (qmodel.norm_shift.size + qmodel.norm_scale.size)
    return size


def memory_report(qmodel):
    """Flash payload and peak activation arena of the integer model.

    The arena follows a two-buffer schedule: while a layer runs, only its
    input, its output and its scratch are live.
    """
    rows = []
    flash = header_bytes(qmodel)
    for i, layer in enumerate(qmodel.layers):
        wbytes = layer.weight.values.size if layer.weight is not None else 0
        bbytes = layer.bias.size * 4 if layer.bias is not None else 0
        meta = LAYER_META_BYTES if layer.weight is not None else 0
        in_b = int(np.prod(layer.in_shape))
        out_b = int(np.prod(layer.out_shape)) * layer.out_itemsize
        scratch = _scratch_bytes(layer)
        rows.append({"index": i, "kind": layer.kind,
                     "in_shape": list(layer.in_shape), "out_shape": list(layer.out_shape),
                     "weight_bytes": wbytes, "bias_bytes": bbytes, "meta_bytes": meta,
                     "in_bytes": in_b, "out_bytes": out_b, "scratch_bytes": scratch,
                     "live_bytes": in_b + out_b + scratch})
        flash += wbytes + bbytes + meta
    arena = max(r["live_bytes"] for r in rows) if rows else 0
    return MemoryReport(flash, arena, rows)


# ------------------------------------------------------------ accuracy ---

def accuracy_delta(params, qmodel, X, y):
    """``(float_acc, int8_acc, float_acc - int8_acc)`` on the same grids."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty test set")
    f_acc = float(np.mean(np.argmax(params.predict_proba(X), axis=1) == y))
    q_acc = float(np.mean(np.argmax(qmodel.predict_proba(X), axis=1) == y))
    return f_acc, q_acc, f_acc - q_acc


# ------------------------------------------------------------- GMDL-Q ----

def save_quant_model(qmodel, path):
    """GMDL header (kind int8), then input and per-layer quantization records."""
    if qmodel.config is None:
        raise FormatError("only models built from a ModelConfig can be saved")
    with open(path, "wb") as fh:
        fh.write(pack_header(qmodel.config, KIND_INT8))
        fh.write(struct.pack("<di", qmodel.input_scale, qmodel.input_zp))
        grid = (qmodel.config.input_rows, qmodel.config.input_cols)
        shift = np.zeros(grid) if qmodel.norm_shift is None else qmodel.norm_shift
        scale = np.ones(grid) if qmodel.norm_scale is None else qmodel.norm_scale
        for a in (shift, scale):
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
        for layer in qmodel.layers:
            if layer.weight is None:
                continue
            fh.write(struct.pack("<d", layer.weight.scale))
            fh.write(layer.weight.values.astype(np.int8).tobytes())
            fh.write(layer.bias.astype("<i4").tobytes())
            fh.write(struct.pack("<diii", layer.out_scale, layer.out_zp,
                                 layer.mantissa, layer.shift))


def load_quant_model(path):
    with open(path, "rb") as fh:
        reader = Reader(fh.read())
    cfg = unpack_header(reader, KIND_INT8)
    s_in, zp_in = reader.take("<di")
    grid = (cfg.input_rows, cfg.input_cols)
    norm_shift = reader.array("<f4", grid).astype(np.float32)
    norm_scale = reader.array("<f4", grid).astype(np.float32)
    shapes = cfg.param_shapes()
    weighted = []
    for k in range(0, len(shapes), 2):
        (w_scale,) = reader.take("<d")
        w = reader.array(np.int8, shapes[k][1])
        b = reader.array("<i4", shapes[k + 1][1]).astype(np.int32)
        out_scale, out_zp, mantissa, shift = reader.take("<diii")
        weighted.append((QuantTensor(w, w_scale, 0), b, out_scale, out_zp, mantissa, shift))
    reader.done()

    in_shape = (cfg.input_rows, cfg.input_cols, 1)
    layers = []
    s, zp = s_in, zp_in
    widths = [cfg.flat_size, *cfg.dense_units, cfg.n_classes]
    for k, (wq, b, out_scale, out_zp, mantissa, shift) in enumerate(weighted):
        last = k == len(weighted) - 1
        if k == 0:
            shape_in, shape_out = in_shape, cfg.conv_shape
        else:
            shape_in, shape_out = (widths[k - 1],), (widths[k],)
        layer = QuantLayer("conv" if k == 0 else "dense", shape_in, shape_out, wq, b,
                           s, zp, out_scale, out_zp, mantissa, shift,
                           relu=not last, final=last)
        layers.append(layer)
        if k == 0:
            layers.append(QuantLayer("maxpool", cfg.conv_shape, cfg.pool_shape,
                                     in_scale=out_scale, in_zp=out_zp,
                                     out_scale=out_scale, out_zp=out_zp, pool=cfg.pool))
        s, zp = out_scale, out_zp
    return QuantModel(in_shape, s_in, zp_in, layers, cfg, norm_shift, norm_scale)
