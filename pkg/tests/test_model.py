import numpy as np
import pytest

from scaleformer import tensor as T
from scaleformer.tensor import Tensor, Tape, backward, grad_check
from scaleformer.model import (
    MisregistrationError,
    ModelConfig,
    TokenLayout,
    attention,
    cross_block,
    encode,
    forward,
    init_params,
    sequence_attention_probs,
    single_block,
)
from scaleformer.patchify import bicubic_resize


TOY = ModelConfig(channels=8, heads=2, n_single=1, n_cross=1, ms_bands=4)


def toy_features(seed, layout, cfg, scale=1.0):
    rng = np.random.default_rng(seed)
    n = layout.batch * layout.seq_len
    return Tensor(
        rng.normal(size=(n, cfg.channels, layout.window, layout.window)).astype(np.float32)
        * scale
    )


# ---------------------------------------------------------------------------
# config / params

def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(channels=30, heads=4).validate()
    with pytest.raises(ValueError):
        ModelConfig(channels=4, heads=4).validate()  # head_dim 1 is odd
    with pytest.raises(ValueError):
        ModelConfig(n_single=0).validate()


def test_param_shapes_config_only():
    a = init_params(TOY, seed=0)
    b = init_params(TOY, seed=99)
    assert a.names() == b.names()
    for name in a.names():
        assert a[name].shape == b[name].shape


def test_params_finite_and_unique():
    params = init_params(TOY, seed=1)
    params.check_finite()
    assert len(set(params.names())) == len(params.names())


def test_output_projections_start_zero():
    params = init_params(TOY, seed=2)
    assert not params["single.ms.0.spa.wo"].data.any()
    assert not params["single.pan.0.ffn_b.w2"].data.any()
    assert not params["cross.0.seq.wo"].data.any()
    assert not params["head.w"].data.any()


# ---------------------------------------------------------------------------
# encoder

def test_encode_output_shape():
    cfg = ModelConfig(channels=32, heads=4, ms_bands=4)
    params = init_params(cfg, seed=3)
    x5d = Tensor(np.random.default_rng(0).random((2, 4, 4, 8, 8)).astype(np.float32))
    out = encode(x5d, params, cfg, "ms")
    assert out.shape == (8, 32, 8, 8)


def test_encode_zero_weights_zero_output():
    params = init_params(TOY, seed=4)
    for name in ("enc.ms.conv1.w", "enc.ms.conv1.b", "enc.ms.conv2.w", "enc.ms.conv2.b"):
        params[name].data[...] = 0.0
    x5d = Tensor(np.random.default_rng(1).random((1, 2, 4, 4, 4)).astype(np.float32))
    out = encode(x5d, params, TOY, "ms")
    assert not out.data.any()


def test_encode_gradient_vs_fd():
    cfg = ModelConfig(channels=4, heads=2, n_single=1, n_cross=1, ms_bands=2)
    params = init_params(cfg, seed=5, dtype=np.float64)
    x5d = Tensor(np.random.default_rng(2).random((1, 2, 2, 4, 4)), dtype=np.float64)
    wname = "enc.ms.conv1.w"

    def f(_):
        return T.tsum(T.gelu(encode(x5d, params, cfg, "ms")))

    report = grad_check(f, params[wname], h=1e-5, tol=1e-5, sample=20)
    assert report.passed, report


# ---------------------------------------------------------------------------
# attention

@pytest.mark.parametrize("axis", ["spatial", "sequence"])
@pytest.mark.parametrize("cross", [False, True])
def test_attention_preserves_shape(axis, cross):
    layout = TokenLayout(batch=2, seq_len=4, window=4)
    params = init_params(TOY, seed=6)
    f = toy_features(7, layout, TOY)
    g = toy_features(8, layout, TOY) if cross else f
    out = attention(f, g, axis, params, "single.ms.0.spa", TOY, layout, rope=(axis == "sequence"))
    assert out.shape == f.shape


def test_attention_single_token_sequence():
    # T=1: softmax over one token is 1, so the output is the value path of
    # that token alone
    layout = TokenLayout(batch=1, seq_len=1, window=2)
    cfg = ModelConfig(channels=4, heads=2, n_single=1, n_cross=1, ms_bands=2)
    params = init_params(cfg, seed=9)
    prefix = "single.ms.0.spa"
    params[f"{prefix}.wo"].data[...] = np.eye(4)
    f = toy_features(10, layout, cfg)
    out = attention(f, f, "sequence", params, prefix, cfg, layout, rope=True)
    tok = f.data.reshape(1, 4, 4).transpose(0, 2, 1)  # [(b ph pw)=4? no: n,l,c]
    # manual: value projection + output projection (identity), single token
    toks = f.data.reshape(1, 4, 2, 2).transpose(0, 2, 3, 1).reshape(4, 1, 4)
    want = toks @ params[f"{prefix}.wv"].data + params[f"{prefix}.bv"].data
    got = out.data.reshape(1, 4, 2, 2).transpose(0, 2, 3, 1).reshape(4, 1, 4)
    np.testing.assert_allclose(got, want + params[f"{prefix}.bo"].data, atol=1e-5)


def test_sequence_scores_invariant_to_position_shift():
    layout = TokenLayout(batch=1, seq_len=6, window=4)
    cfg = ModelConfig(channels=8, heads=2, n_single=1, n_cross=1, ms_bands=4)
    params = init_params(cfg, seed=11)
    f = toy_features(12, layout, cfg)
    base_positions = list(range(6))
    p0 = sequence_attention_probs(f, params, cfg, layout, "single.ms.0", base_positions)
    p7 = sequence_attention_probs(
        f, params, cfg, layout, "single.ms.0", [p + 7 for p in base_positions]
    )
    np.testing.assert_allclose(p0, p7, atol=1e-5)


def test_attention_layout_mismatch_rejected():
    layout = TokenLayout(batch=1, seq_len=4, window=4)
    params = init_params(TOY, seed=13)
    f = toy_features(14, layout, TOY)
    g = Tensor(np.zeros((4, TOY.channels, 2, 2), dtype=np.float32))
    with pytest.raises(T.ShapeError):
        attention(f, g, "spatial", params, "single.ms.0.spa", TOY, layout, rope=False)


# ---------------------------------------------------------------------------
# blocks

def test_single_block_identity_at_init():
    layout = TokenLayout(batch=1, seq_len=4, window=4)
    params = init_params(TOY, seed=15)
    f = toy_features(16, layout, TOY)
    out = single_block(f, params, TOY, layout, "ms", 0)
    assert out.data.tobytes() == f.data.tobytes()


def test_single_block_finite_for_moderate_inputs():
    layout = TokenLayout(batch=1, seq_len=4, window=4)
    params = init_params(TOY, seed=17)
    # leave the zero-init regime
    for name in params.names():
        if name.endswith((".wo", ".w2")):
            params[name].data[...] = np.random.default_rng(18).normal(
                scale=0.05, size=params[name].shape
            )
    f = toy_features(19, layout, TOY, scale=3.0)
    out = single_block(f, params, TOY, layout, "ms", 0)
    assert np.isfinite(out.data).all()


def test_single_block_gradient_vs_fd():
    layout = TokenLayout(batch=1, seq_len=2, window=2)
    cfg = ModelConfig(channels=4, heads=2, n_single=1, n_cross=1, ms_bands=2)
    params = init_params(cfg, seed=20, dtype=np.float64)
    rng = np.random.default_rng(21)
    for name in params.names():
        if name.endswith((".wo", ".w2")):
            params[name].data[...] = rng.normal(scale=0.1, size=params[name].shape)
    f = Tensor(rng.normal(size=(2, 4, 2, 2)), requires_grad=True, dtype=np.float64)
    w = rng.normal(size=f.shape)

    def loss(_):
        out = single_block(f, params, cfg, layout, "ms", 0)
        return T.tsum(T.mul(out, Tensor(w, dtype=np.float64)))

    report = grad_check(loss, f, h=1e-5, tol=1e-4)
    assert report.passed, report
    for name in ("single.ms.0.spa.wq", "single.ms.0.ffn_a.w1", "single.ms.0.ln1.g"):
        rep = grad_check(loss, params[name], h=1e-5, tol=1e-4, sample=8)
        assert rep.passed, (name, rep)


def test_cross_block_identity_at_init():
    layout = TokenLayout(batch=1, seq_len=4, window=4)
    params = init_params(TOY, seed=22)
    f_ms = toy_features(23, layout, TOY)
    f_pan = toy_features(24, layout, TOY)
    out = cross_block(f_ms, f_pan, params, TOY, layout, 0)
    assert out.data.tobytes() == f_ms.data.tobytes()


def test_cross_block_zero_pan_still_runs_ffn():
    layout = TokenLayout(batch=1, seq_len=2, window=2)
    cfg = ModelConfig(channels=4, heads=2, n_single=1, n_cross=1, ms_bands=2)
    params = init_params(cfg, seed=25)
    rng = np.random.default_rng(26)
    # open the FFN path but keep attention value output at zero
    params["cross.0.ffn_a.w2"].data[...] = rng.normal(scale=0.1, size=(8, 4))
    params["cross.0.spa.bv"].data[...] = 0.0
    params["cross.0.spa.wo"].data[...] = rng.normal(scale=0.1, size=(4, 4))
    params["cross.0.spa.bo"].data[...] = 0.0
    f_ms = toy_features(27, layout, cfg)
    f_pan = Tensor(np.zeros_like(f_ms.data))
    out = cross_block(f_ms, f_pan, params, cfg, layout, 0)
    # attention contribution is zero (v = 0), so out = ms + ffn residuals only
    assert not np.array_equal(out.data, f_ms.data)  # ffn acted
    params["cross.0.ffn_a.w2"].data[...] = 0.0
    out2 = cross_block(f_ms, f_pan, params, cfg, layout, 0)
    np.testing.assert_allclose(out2.data, f_ms.data, atol=1e-6)


def test_cross_block_gradients_both_inputs():
    layout = TokenLayout(batch=1, seq_len=2, window=2)
    cfg = ModelConfig(channels=4, heads=2, n_single=1, n_cross=1, ms_bands=2)
    params = init_params(cfg, seed=28, dtype=np.float64)
    rng = np.random.default_rng(29)
    for name in params.names():
        if name.endswith((".wo", ".w2")):
            params[name].data[...] = rng.normal(scale=0.1, size=params[name].shape)
    f_ms = Tensor(rng.normal(size=(2, 4, 2, 2)), requires_grad=True, dtype=np.float64)
    f_pan = Tensor(rng.normal(size=(2, 4, 2, 2)), requires_grad=True, dtype=np.float64)
    w = rng.normal(size=f_ms.shape)

    def loss(_):
        out = cross_block(f_ms, f_pan, params, cfg, layout, 0)
        return T.tsum(T.mul(out, Tensor(w, dtype=np.float64)))

    assert grad_check(loss, f_ms, h=1e-5, tol=1e-4).passed
    assert grad_check(loss, f_pan, h=1e-5, tol=1e-4).passed


# ---------------------------------------------------------------------------
# forward

def _toy_inputs(seed, bsz=1, cms=4, h=16, w=16, r=2):
    rng = np.random.default_rng(seed)
    pan = Tensor(rng.random((bsz, 1, h, w)).astype(np.float32))
    lrms = Tensor(rng.random((bsz, cms, h // r, w // r)).astype(np.float32))
    return pan, lrms


def test_forward_shape_contract():
    cfg = ModelConfig(channels=8, heads=2, n_single=1, n_cross=1, ms_bands=4)
    params = init_params(cfg, seed=30)
    pan, lrms = _toy_inputs(31, bsz=2, h=32, w=32)
    out = forward(pan, lrms, 2, params, cfg, window=8)
    assert out.shape == (2, 4, 32, 32)


def test_forward_residual_identity_at_init():
    cfg = ModelConfig(channels=8, heads=2, n_single=1, n_cross=1, ms_bands=4)
    params = init_params(cfg, seed=32)
    pan, lrms = _toy_inputs(33, h=20, w=24)  # exercises padding too
    out = forward(pan, lrms, 2, params, cfg, window=8)
    up = bicubic_resize(lrms, 20, 24)
    assert out.data.tobytes() == up.data.tobytes()


def test_forward_no_residual_is_head_only_at_init():
    cfg = ModelConfig(channels=8, heads=2, n_single=1, n_cross=1, ms_bands=4,
                      global_residual=False)
    params = init_params(cfg, seed=34)
    pan, lrms = _toy_inputs(35)
    out = forward(pan, lrms, 2, params, cfg, window=8)
    assert not out.data.any()


def test_forward_misregistration_rejected():
    cfg = ModelConfig(channels=8, heads=2, n_single=1, n_cross=1, ms_bands=4)
    params = init_params(cfg, seed=36)
    pan = Tensor(np.zeros((1, 1, 16, 16), dtype=np.float32))
    lrms = Tensor(np.zeros((1, 4, 7, 8), dtype=np.float32))
    with pytest.raises(MisregistrationError):
        forward(pan, lrms, 2, params, cfg, window=8)


def _randomized_params(cfg, seed):
    params = init_params(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for name in params.names():
        if name.endswith((".wo", ".w2")) or name == "head.w":
            params[name].data[...] = rng.normal(scale=0.05, size=params[name].shape)
    return params


def test_forward_windows_share_parameters():
    cfg = ModelConfig(channels=8, heads=2, n_single=1, n_cross=1, ms_bands=4)
    params = _randomized_params(cfg, 37)
    pan, lrms = _toy_inputs(38, h=64, w=64)
    out8 = forward(pan, lrms, 2, params, cfg, window=8)
    out16 = forward(pan, lrms, 2, params, cfg, window=16)
    assert out8.shape == out16.shape == (1, 4, 64, 64)
    assert np.isfinite(out8.data).all() and np.isfinite(out16.data).all()


def test_forward_no_weight_dim_tracks_sequence_length():
    # sequence lengths chosen to avoid colliding with any architectural dim
    cfg = ModelConfig(channels=8, heads=2, n_single=1, n_cross=1, ms_bands=4)
    params = init_params(cfg, seed=39)
    for h in (40, 48, 56):
        pan, lrms = _toy_inputs(40, h=h, w=h)
        out = forward(pan, lrms, 2, params, cfg, window=8)
        assert out.shape[-1] == h
        t = (h // 8) ** 2
        for name in params.names():
            assert t not in params[name].shape, (name, t)


def test_forward_deterministic():
    cfg = ModelConfig(channels=8, heads=2, n_single=1, n_cross=1, ms_bands=4)
    params = _randomized_params(cfg, 41)
    pan, lrms = _toy_inputs(42)
    a = forward(pan, lrms, 2, params, cfg, window=8)
    b = forward(pan, lrms, 2, params, cfg, window=8)
    assert a.data.tobytes() == b.data.tobytes()


def test_forward_gradient_full_toy_model():
    # end-to-end: mean-absolute loss through the whole network
    cfg = ModelConfig(channels=4, heads=2, n_single=1, n_cross=1, ms_bands=2)
    params = _randomized_params(cfg, 43).astype(np.float64)
    rng = np.random.default_rng(44)
    pan = Tensor(rng.random((1, 1, 8, 8)), dtype=np.float64)
    lrms = Tensor(rng.random((1, 2, 4, 4)), dtype=np.float64)
    gt = Tensor(rng.random((1, 2, 8, 8)), dtype=np.float64)

    def loss(_):
        out = forward(pan, lrms, 2, params, cfg, window=4)
        diff = T.absval(T.sub(out, gt))
        return T.tmean(diff)

    for name in ("enc.ms.conv1.w", "single.pan.0.spa.wq", "cross.0.seq.wv", "head.w"):
        report = grad_check(loss, params[name], h=1e-4, tol=1e-3, sample=6, seed=5)
        assert report.passed, (name, report)
