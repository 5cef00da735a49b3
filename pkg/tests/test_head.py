import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srpose.head import SRHead, SRHeadConfig, deconv_head_param_count, param_count, sr_head_forward
from srpose.tensor import ShapeError, conv2d


def make(cfg, seed=0, dtype=np.float64):
    return SRHead(cfg, np.random.default_rng(seed), dtype)


def enumerate_params(in_ch, n, e, l, k, bias):
    """Count elements of freshly built weight arrays, independent of the closed form."""
    arrays = [np.empty((n * e, in_ch, 1, 1)), np.empty((n * l * l, e, k, k))]
    if bias:
        arrays += [np.empty(n * e), np.empty(n * l * l)]
    return sum(a.size for a in arrays)


def enumerate_deconv(in_ch, ch, layers, k, n):
    arrays = []
    c = in_ch
    for _ in range(layers):
        arrays += [np.empty((c, ch, k, k)), np.empty(ch)]
        c = ch
    arrays += [np.empty((n, c, 1, 1)), np.empty(n)]
    return sum(a.size for a in arrays)


def test_encoder_shape():
    head = make(SRHeadConfig(32, 17, 8))
    assert head.keypoint_encode(np.zeros((1, 32, 8, 6))).shape == (1, 136, 8, 6)


def test_zero_feature_zero_bias_gives_zero_embeddings():
    head = make(SRHeadConfig(6, 3, 4))
    head.encoder.bias.data[:] = 0
    assert np.all(head.keypoint_encode(np.zeros((2, 6, 5, 5))) == 0)


def test_single_keypoint_encoder_is_plain_conv():
    head = make(SRHeadConfig(5, 1, 3))
    x = np.random.default_rng(1).standard_normal((1, 5, 4, 4))
    ref = conv2d(x, head.encoder.weight.data, head.encoder.bias.data)
    np.testing.assert_array_equal(head.keypoint_encode(x), ref)


def test_lkc_channel_count():
    cfg = SRHeadConfig(32, 17, 8, upscale=4, kernel=9)
    assert make(cfg).lkc_decode(np.zeros((1, 136, 6, 5))).shape == (1, 272, 6, 5)
    cfg1 = SRHeadConfig(8, 3, 2, upscale=1, kernel=3)
    assert make(cfg1).lkc_decode(np.zeros((1, 6, 4, 4))).shape == (1, 3, 4, 4)


def test_even_kernel_rejected():
    with pytest.raises(ValueError, match="odd"):
        SRHeadConfig(8, 2, kernel=4)


def test_channel_mismatch_rejected():
    head = make(SRHeadConfig(8, 2, 2))
    with pytest.raises(ShapeError):
        head(np.zeros((1, 7, 4, 4)))
    with pytest.raises(ShapeError):
        head.lkc_decode(np.zeros((1, 5, 4, 4)))


def test_forward_shape_and_scale():
    head = make(SRHeadConfig(32, 5, 8, upscale=4, kernel=9), dtype=np.float32)
    st_ = sr_head_forward(head, np.zeros((1, 32, 16, 12), np.float32), feature_stride=16)
    assert st_.maps.shape == (1, 5, 64, 48)
    assert st_.scale == 4.0


@given(l=st.integers(1, 4), h=st.integers(1, 6), w=st.integers(1, 6))
@settings(max_examples=30, deadline=None)
def test_output_resolution_is_input_times_l(l, h, w):
    head = make(SRHeadConfig(3, 2, 2, upscale=l, kernel=3))
    assert head(np.zeros((1, 3, h, w))).shape == (1, 2, l * h, l * w)


def test_group_isolation():
    cfg = SRHeadConfig(4, 3, 2, upscale=2, kernel=5)
    head = make(cfg)
    emb = np.random.default_rng(2).standard_normal((1, 6, 5, 5))
    base = head.lkc_decode(emb)
    for j in range(3):
        pert = emb.copy()
        pert[:, j * 2:(j + 1) * 2] += 10.0
        out = head.lkc_decode(pert)
        for i in range(3):
            same = np.array_equal(out[:, i * 4:(i + 1) * 4], base[:, i * 4:(i + 1) * 4])
            assert same == (i != j)


def test_degenerate_simple_head():
    cfg = SRHeadConfig(6, 4, embed_channels=1, upscale=1, kernel=1, bias=False)
    # one extra scalar per keypoint from the 1x1 grouped LKC on top of in*N
    assert param_count(cfg) == 6 * 4 + 4 == enumerate_params(6, 4, 1, 1, 1, False)
    head = make(cfg)
    x = np.random.default_rng(3).standard_normal((1, 6, 3, 3))
    # composing two 1x1 convs equals one 1x1 conv with the product weights
    w = head.lkc.weight.data[:, :, 0, 0][:, 0][:, None] * head.encoder.weight.data[:, :, 0, 0]
    np.testing.assert_allclose(head(x), conv2d(x, w[:, :, None, None]), atol=1e-12)


def test_default_param_count():
    cfg = SRHeadConfig(32, 17, 8, upscale=4, kernel=9)
    assert param_count(cfg) == 4488 + 176_528 == 181_016
    assert make(cfg).num_params() == 181_016


@pytest.mark.parametrize("seed", range(20))
def test_param_count_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    in_ch, n, e = (int(v) for v in rng.integers(1, 20, 3))
    l, k = int(rng.integers(1, 5)), int(rng.choice([1, 3, 5, 7]))
    bias = bool(rng.integers(0, 2))
    cfg = SRHeadConfig(in_ch, n, e, l, k, bias)
    expected = enumerate_params(in_ch, n, e, l, k, bias)
    assert param_count(cfg) == expected
    assert make(cfg).num_params() == expected


def test_deconv_head_is_much_larger():
    deconv = deconv_head_param_count(2048, 256, 3, 4, 17)
    assert deconv == enumerate_deconv(2048, 256, 3, 4, 17)
    assert deconv > 10 * param_count(SRHeadConfig(32, 17, 8, 4, 9))
