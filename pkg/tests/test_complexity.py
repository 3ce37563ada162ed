import numpy as np
import pytest

from scaleformer import tensor as T
from scaleformer.complexity import flop_count, memory_estimate
from scaleformer.data import make_multiscale_testset
from scaleformer.model import ModelConfig, init_params
from scaleformer.tiling import infer_pair


CFG = ModelConfig(channels=32, heads=4, n_single=2, n_cross=2, ms_bands=4)


def test_doubling_extents_quadruples_tokens():
    a = flop_count(CFG, 64, 64, 2, 16)
    b = flop_count(CFG, 128, 128, 2, 16)
    assert b.tokens == 4 * a.tokens


def test_spatial_stage_exactly_linear_in_tokens():
    a = flop_count(CFG, 64, 64, 2, 16)   # T
    b = flop_count(CFG, 128, 64, 2, 16)  # 2T
    assert b.tokens == 2 * a.tokens
    assert b.stages["spatial_attention"] == 2 * a.stages["spatial_attention"]
    assert b.stages["cross_spatial"] == 2 * a.stages["cross_spatial"]


def test_sequence_stage_exactly_quadratic_in_tokens():
    a = flop_count(CFG, 64, 64, 2, 16)
    b = flop_count(CFG, 128, 64, 2, 16)
    assert b.stages["sequence_attention"] == 4 * a.stages["sequence_attention"]
    assert b.stages["cross_sequence"] == 4 * a.stages["cross_sequence"]


def test_total_is_stage_sum_and_nonnegative():
    rep = flop_count(CFG, 100, 60, 2, 16)  # exercises padding
    assert rep.total == sum(rep.stages.values())
    assert all(v >= 0 for v in rep.stages.values())


@pytest.mark.parametrize("n", [64, 128, 256])
def test_windowed_model_beats_global_attention(n):
    rep = flop_count(CFG, n, n, 2, 16)
    assert rep.total < rep.global_attention_total


def test_ratio_matches_hand_derivation_at_256():
    # independent closed-form derivation with the documented conventions
    h = w = 256
    p, c, heads, ratio_ffn, bands = 16, 32, 4, 2, 4
    n_single, n_cross = 2, 2
    t = (h // p) * (w // p)
    s = p * p
    lp = h * w
    n_tok = t * s

    ln = 5 * n_tok * c
    proj = 4 * n_tok * c * c
    rope = 8 * n_tok * c
    spa = 2 * t * s * s * c + 5 * heads * t * s * s
    seq = 2 * s * t * t * c + 5 * heads * s * t * t
    f = ratio_ffn * c
    ffn = 2 * n_tok * c * f + 5 * n_tok * f
    enc = (9 * lp * c * 1 + 9 * lp * c * c + 5 * lp * c) + (
        9 * lp * c * bands + 9 * lp * c * c + 5 * lp * c
    )
    head = 9 * lp * bands * c
    stacks = 2 * n_single
    total = enc + head
    total += stacks * (2 * proj + rope + spa + seq + 2 * ffn + 4 * ln)
    total += n_cross * (2 * proj + rope + spa + seq + 2 * ffn + 6 * ln)

    glob_attn = 4 * lp * c * c + 2 * lp * lp * c + 5 * heads * lp * lp
    glob = enc + head
    glob += stacks * (2 * glob_attn + 2 * ffn + 4 * ln)
    glob += n_cross * (2 * glob_attn + 2 * ffn + 6 * ln)

    rep = flop_count(CFG, h, w, 2, p)
    assert rep.total == total
    assert rep.global_attention_total == glob
    assert rep.total / rep.global_attention_total == total / glob


def test_seq_to_spa_ablation_moves_counts():
    cfg = ModelConfig(channels=32, heads=4, n_single=2, n_cross=2, ms_bands=4,
                      use_seq_transformer=False)
    rep = flop_count(cfg, 64, 64, 2, 16)
    assert rep.stages["sequence_attention"] == 0
    assert rep.stages["cross_sequence"] == 0
    base = flop_count(CFG, 64, 64, 2, 16)
    assert rep.stages["spatial_attention"] == 2 * base.stages["spatial_attention"]


def test_memory_linear_in_batch():
    one = memory_estimate(CFG, 64, 64, 16, batch=1)
    two = memory_estimate(CFG, 64, 64, 16, batch=2)
    assert two == 2 * one


def test_memory_monotone_in_resolution():
    sizes = [memory_estimate(CFG, n, n, 16, 1) for n in (32, 64, 128, 256)]
    assert all(a < b for a, b in zip(sizes, sizes[1:]))


@pytest.mark.parametrize("scale,window", [(32, 8), (64, 16)])
def test_memory_estimate_within_2x_of_measured(scale, window):
    cfg = ModelConfig(channels=16, heads=2, n_single=1, n_cross=1, ms_bands=3)
    params = init_params(cfg, seed=0)
    pair = make_multiscale_testset(1, [scale], 3, 2, 1)[0]
    with T.allocation_tracker() as tracker:
        out = infer_pair(params, cfg, pair, window=window)
        del out
    measured = tracker.peak
    estimate = memory_estimate(cfg, scale, scale, window, 1)
    assert measured <= 2 * estimate, (measured, estimate)
    assert estimate <= 2 * measured, (measured, estimate)


def test_report_rendering():
    lines = flop_count(CFG, 64, 64, 2, 16).to_lines()
    text = "\n".join(lines)
    assert "total" in text and "global-attention" in text and "MAC" in text
