from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import ref_conv_same

from gaitid import tinycnn
from gaitid.errors import CalibrationError, FormatError, ShapeError
from gaitid.quant import (MIN_SPAN, QuantLayer, QuantModel, QuantTensor, accuracy_delta,
                          calibrate, conv_accumulate, dense_accumulate, load_quant_model,
                          memory_report, q_forward, q_logits, quantize, quantize_multiplier,
                          quantize_weights, rounding_shift, save_quant_model)
from gaitid.tinycnn import ModelConfig, ModelParams, build_model

CFG = ModelConfig()


def zero_model(cfg=CFG):
    return ModelParams(cfg, [np.zeros(s, np.float32) for _, s in cfg.param_shapes()])


def grids(n, seed=0, cols=6):
    return np.random.default_rng(seed).normal(size=(n, 13, cols)).astype(np.float32)


# ---------------------------------------------------------- calibration ---

def test_degenerate_ranges_are_widened():
    ranges = calibrate(zero_model(), np.zeros((32, 13, 6)))
    assert all(r == (0.0, MIN_SPAN) for r in ranges.values())


def test_relu_ranges_start_at_zero():
    ranges = calibrate(build_model(seed=1), grids(64))
    for key in ("conv", "dense0", "dense1", "dense2"):
        assert ranges[key][0] == 0.0
    assert ranges["dense3"][0] < 0 < ranges["dense3"][1]


def test_doubling_inputs_doubles_first_layer_ranges():
    p = build_model(seed=2)
    X = grids(40, 2)
    a, b = calibrate(p, X), calibrate(p, 2 * X)
    assert b["conv_pre"] == (2 * a["conv_pre"][0], 2 * a["conv_pre"][1])
    assert b["input"] == (2 * a["input"][0], 2 * a["input"][1])


def test_too_few_calibration_samples():
    with pytest.raises(CalibrationError):
        calibrate(build_model(), grids(31))
    with pytest.raises(CalibrationError):
        calibrate(build_model(), np.zeros((0, 13, 6)))


# -------------------------------------------------------------- weights ---

def test_weight_scale_formula():
    w = np.array([0.5, -0.25, 0.1])
    q = quantize_weights(w)
    assert q.scale == pytest.approx(0.0039370, abs=1e-7)
    assert q.scale == 0.5 / 127 and q.zero_point == 0
    assert quantize_weights(np.zeros(4)).scale == 1.0


@given(st.lists(st.integers(-127, 127), min_size=1, max_size=50), st.floats(1e-4, 10))
def test_on_grid_values_recover_exactly(ks, scale):
    ks = np.array([127] + ks)          # pin max|k| = 127 so the grid is the tensor's own
    w = ks * (scale / 127)
    q = quantize_weights(w)
    assert np.array_equal(q.values, ks)
    assert np.allclose(q.dequantize(), w, rtol=1e-15, atol=0)


@given(st.integers(0, 2**32 - 1), st.integers(1, 500))
def test_rounding_error_is_at_most_half_a_step(seed, n):
    w = np.random.default_rng(seed).uniform(-1, 1, n)
    q = quantize_weights(w)
    assert np.abs(q.dequantize() - w).max() <= q.scale / 2 * (1 + 1e-12)


# ---------------------------------------------------------- requantizer ---

def test_multiplier_reconstruction_for_1e5_scales():
    rng = np.random.default_rng(0)
    reals = 10.0 ** rng.uniform(-9, 2, 100_000)
    worst = 0.0
    for r in reals:
        m, s = quantize_multiplier(r)
        assert 2**30 <= m < 2**31
        worst = max(worst, abs(m * 2.0 ** -s - r) / r)
    assert worst <= 2.0 ** -24


def test_multiplier_rejects_non_positive():
    for bad in (0.0, -1.0, float("nan")):
        with pytest.raises(ValueError):
            quantize_multiplier(bad)


@given(st.lists(st.integers(-2**31, 2**31 - 1), min_size=1, max_size=20),
       st.integers(2**30, 2**31 - 1), st.integers(1, 62))
def test_rounding_shift_is_exact_half_even(acc, mantissa, shift):
    got = rounding_shift(np.array(acc), mantissa, shift)
    expect = [round(Fraction(a * mantissa, 2**shift)) for a in acc]   # banker's rounding
    assert got.tolist() == expect


def test_rounding_shift_ties():
    assert rounding_shift(np.array([1, 3, 5, -1, -3]), 2**30, 31).tolist() == [0, 2, 2, 0, -2]


# ---------------------------------------------------------- int kernels ---

@given(st.integers(0, 2**32 - 1), st.integers(1, 9), st.integers(1, 7), st.integers(1, 6),
       st.integers(-128, 127))
def test_integer_conv_matches_64bit_oracle(seed, rows, cols, filters, zp):
    rng = np.random.default_rng(seed)
    xq = rng.integers(-128, 128, (2, rows, cols)).astype(np.int8)
    wq = rng.integers(-127, 128, (3, 3, 1, filters)).astype(np.int8)
    bias = rng.integers(-2**20, 2**20, filters).astype(np.int32)
    layer = QuantLayer("conv", (rows, cols, 1), (rows, cols, filters),
                       QuantTensor(wq, 0.01), bias, 0.02, zp)
    got = conv_accumulate(xq, layer)
    expect = ref_conv_same(xq.astype(np.float64) - zp, wq[:, :, 0].astype(np.float64),
                           bias.astype(np.float64))
    assert got.dtype == np.int64
    assert np.array_equal(got, expect.astype(np.int64))
    # scaled back, it is the float conv of the dequantized operands
    real = ref_conv_same(0.02 * (xq.astype(np.float64) - zp), 0.01 * wq[:, :, 0], 0.0002 * bias)
    assert np.allclose(got * 0.0002, real, rtol=1e-12, atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(1, 600), st.integers(1, 64), st.integers(-128, 127))
def test_integer_dense_matches_int64_matmul(seed, n_in, n_out, zp):
    rng = np.random.default_rng(seed)
    xq = rng.integers(-128, 128, (3, n_in)).astype(np.int8)
    wq = rng.integers(-127, 128, (n_in, n_out)).astype(np.int8)
    bias = rng.integers(-2**24, 2**24, n_out).astype(np.int32)
    layer = QuantLayer("dense", (n_in,), (n_out,), QuantTensor(wq, 1.0), bias, 1.0, zp)
    expect = (xq.astype(np.int64) - zp) @ wq.astype(np.int64) + bias
    assert np.array_equal(dense_accumulate(xq, layer), expect)


# ------------------------------------------------------------ inference ---

def test_zero_weights_give_uniform_output():
    q = quantize(zero_model(), calibrate(zero_model(), grids(32)))
    assert np.allclose(q_forward(q, grids(1)[0]), 1 / 24, atol=1e-12)


def test_q_forward_shape_checks():
    p = build_model(seed=3)
    q = quantize(p, calibrate(p, grids(32)))
    assert q_forward(q, grids(1)[0]).sum() == pytest.approx(1, abs=1e-6)
    with pytest.raises(ShapeError):
        q_forward(q, np.zeros((13, 3)))
    with pytest.raises(ShapeError):
        q_forward(q, grids(2))


def test_quantized_path_is_deterministic():
    p = build_model(seed=4)
    X = grids(50, 4)
    q1 = quantize(p, calibrate(p, X))
    q2 = quantize(p, calibrate(p, X))
    a, b = q_logits(q1, X), q_logits(q2, X)
    assert a.tobytes() == b.tobytes() == q_logits(q1, X).tobytes()


def test_trained_model_agreement_and_logit_deviation(model, splits):
    rng = np.random.default_rng(0)
    idx = rng.choice(len(splits["y_test"]), 500, replace=False)
    X = splits["X_test"][idx]
    q = quantize(model, calibrate(model, X))
    zf, zq = tinycnn.logits(model, X), q_logits(q, X)
    agree = np.mean(zf.argmax(1) == zq.argmax(1))
    dev = float(np.abs(zf - zq).max())
    print(f"argmax agreement {agree:.4f}, max logit deviation {dev:.4f}, "
          f"logit span {zf.max() - zf.min():.2f}")
    assert agree >= 0.95
    # recorded regression baseline for per-tensor min/max calibration
    assert dev <= 0.6


# --------------------------------------------------------------- memory ---

def test_default_memory_report():
    p = build_model()
    rep = memory_report(quantize(p, calibrate(p, grids(32))))
    assert rep.weight_bytes == 185_376 + 4 * 472
    assert 150_000 <= rep.flash_bytes <= 260_000
    assert rep.arena_bytes <= 8 * 1024
    conv = rep.layers[0]
    assert conv["out_bytes"] == 13 * 6 * 32 == 2496
    pool = rep.layers[1]
    # the peak is the pooling step: full conv output in, pooled map out
    assert rep.arena_bytes == pool["in_bytes"] + pool["out_bytes"] == 2496 + 576
    assert rep.arena_bytes == max(l["in_bytes"] + l["out_bytes"] + l["scratch_bytes"]
                                  for l in rep.layers)
    assert '"arena_bytes"' in rep.to_json()


@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_arena_ignores_weight_values(seed, gain):
    p = build_model(seed=seed % 10_000)
    p.tensors = [gain * t for t in p.tensors]
    base = memory_report(quantize(build_model(), calibrate(build_model(), grids(32))))
    rep = memory_report(quantize(p, calibrate(p, grids(32, seed % 7))))
    assert rep.arena_bytes == base.arena_bytes
    assert rep.flash_bytes == base.flash_bytes


def test_single_dense_layer_arena():
    layer = QuantLayer("dense", (10,), (10,), QuantTensor(np.zeros((10, 10), np.int8), 1.0),
                       np.zeros(10, np.int32), relu=True)
    rep = memory_report(QuantModel((10,), 1.0, 0, [layer]))
    assert rep.arena_bytes == 10 + 10 + 0
    final = QuantLayer("dense", (10,), (10,), layer.weight, layer.bias, final=True)
    assert memory_report(QuantModel((10,), 1.0, 0, [final])).arena_bytes == 10 + 40


# -------------------------------------------------------------- deltas ---

def test_accuracy_delta_cases():
    p = build_model(seed=5)
    X = grids(64, 5)
    q = quantize(p, calibrate(p, X))
    y = np.argmax(tinycnn.predict_proba(p, X), axis=1)
    f_acc, q_acc, delta = accuracy_delta(p, q, X, y)
    assert f_acc == 1.0 and delta == f_acc - q_acc
    assert accuracy_delta(p, q, X, y) == (f_acc, q_acc, delta)
    assert accuracy_delta(p, q, X, np.full(64, 99)) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        accuracy_delta(p, q, X[:0], [])


# --------------------------------------------------------- persistence ---

@pytest.mark.parametrize("cols", [3, 6])
def test_quant_model_round_trip(tmp_path, cols):
    cfg = ModelConfig(input_cols=cols)
    p = build_model(cfg, seed=6)
    p.input_shift = np.full((13, cols), 0.5, np.float32)
    X = grids(40, 6, cols)
    q = quantize(p, calibrate(p, X))
    save_quant_model(q, tmp_path / "q.gmdl")
    r = load_quant_model(tmp_path / "q.gmdl")
    assert q_logits(r, X).tobytes() == q_logits(q, X).tobytes()
    assert memory_report(r).flash_bytes == memory_report(q).flash_bytes
    with pytest.raises(FormatError) as err:
        tinycnn.load_model(tmp_path / "q.gmdl")
    assert err.value.offset == 6
    raw = (tmp_path / "q.gmdl").read_bytes()
    (tmp_path / "t.gmdl").write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        load_quant_model(tmp_path / "t.gmdl")
