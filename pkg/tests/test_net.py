import time

import numpy as np
import pytest

from srpose import data
from srpose.heatmap import HeatmapStack, PoseInstance
from srpose.net import (
    AssociativeEmbedding,
    ConfigError,
    NetConfig,
    SRPoseNet,
    bottom_up_ae,
    fuse,
    loss_and_grads,
    make_targets,
    total_loss,
)
from srpose.tensor import ShapeError
from srpose.train import Adam, TrainSettings, TrainingDiverged, train

TOY = NetConfig(head_kernels=(3, 5, 5, 7), embed_channels=4, backbone_widths=(8, 16, 24, 32), neck_width=16)
MICRO = NetConfig(
    image_size=(32, 32),
    num_keypoints=2,
    backbone_widths=(2, 2, 3, 3),
    neck_width=2,
    embed_channels=1,
    head_kernels=(1, 1, 3, 3),
)


@pytest.fixture(scope="module")
def toy_net():
    return SRPoseNet(TOY, seed=0)


def rand_images(n, cfg=TOY, seed=0, dtype=np.float32):
    return np.random.default_rng(seed).random((n, cfg.in_channels, *cfg.image_size)).astype(dtype)


# -- config --------------------------------------------------------------------

def test_upscales_forced_by_strides():
    assert NetConfig().head_upscales == (8, 4, 2, 4)
    assert NetConfig(k=0.25).head_upscales == (8, 4, 2, 1)
    assert NetConfig(k=0.5).final_stride == 2


@pytest.mark.parametrize(
    "kw",
    [
        dict(head_upscales=(4, 4, 2, 4)),
        dict(k=0.3),
        dict(image_size=(31, 48)),
        dict(head_kernels=(5, 7, 9, 10)),
        dict(loss_weights=(1, 1, 1)),
    ],
)
def test_invalid_configs_rejected(kw):
    with pytest.raises(ConfigError):
        NetConfig(**kw)


# -- backbone / neck -------------------------------------------------------------

def test_feature_sizes_follow_ceil_strides(toy_net):
    feats = toy_net.backbone_forward(rand_images(2))
    for k, f in zip((2, 3, 4, 5), feats.levels()):
        assert f.shape[2:] == (-(-64 // 2**k), -(-48 // 2**k))
    assert feats.F5.shape[2:] == (2, 2)
    assert feats.M_LR.shape == (2, 5, 2, 2)


def test_odd_image_size_ceil():
    cfg = TOY.replace(image_size=(45, 37))
    net = SRPoseNet(cfg, seed=0)
    feats = net.backbone_forward(rand_images(1, cfg))
    assert [f.shape[2:] for f in feats.levels()] == [cfg.feature_size(k) for k in (2, 3, 4, 5)]
    outs = net.forward_train(rand_images(1, cfg))
    assert [o.shape[2:] for o in outs] == [cfg.head_output_size(i) for i in range(4)]


def test_small_image_rejected(toy_net):
    with pytest.raises(ShapeError):
        toy_net.backbone_forward(np.zeros((1, 1, 30, 48), np.float32))


def test_zero_image_zero_bias_gives_zero_features():
    net = SRPoseNet(TOY, seed=1)
    for name, p in net.named_params():
        if name.endswith("bias"):
            p.data[:] = 0
    feats = net.backbone_forward(np.zeros((1, 1, 64, 48), np.float32))
    assert all(np.all(f == 0) for f in feats.levels() + [feats.M_LR])
    assert np.all(net.fuses[0](feats.F5, feats.M_LR) == 0)


def test_backbone_deterministic():
    x = rand_images(2, seed=3)
    a = SRPoseNet(TOY, seed=5).backbone_forward(x)
    b = SRPoseNet(TOY, seed=5).backbone_forward(x)
    for fa, fb in zip(a.levels() + [a.M_LR], b.levels() + [b.M_LR]):
        assert fa.tobytes() == fb.tobytes()


def test_neck_stride_chain(toy_net):
    feats = toy_net.backbone_forward(rand_images(1))
    ms = toy_net.neck_forward(feats)
    assert [m.shape[2:] for m in ms] == [TOY.feature_size(k) for k in (5, 4, 3, 2)]


def test_fuse_rejects_mismatched_resolution(toy_net):
    with pytest.raises(ShapeError):
        fuse(toy_net.fuses[1], np.zeros((1, 24, 4, 3), np.float32), np.zeros((1, 16, 4, 4), np.float32))


# -- forward modes -----------------------------------------------------------------

def test_forward_train_shapes(toy_net):
    outs = toy_net.forward_train(rand_images(2))
    assert [o.shape for o in outs] == [(2, 5, 16, 12)] * 3 + [(2, 5, 64, 48)]
    stacks = toy_net.stacks(outs)
    assert [s.scale for s in stacks] == [4, 4, 4, 1.0]


def test_forward_infer_matches_train_bit_exact(toy_net):
    rng = np.random.default_rng(7)
    for _ in range(50):
        x = rng.random((1, 1, 64, 48)).astype(np.float32)
        assert toy_net.forward_infer(x).tobytes() == toy_net.forward_train(x)[3].tobytes()


def test_forward_infer_does_less_work(toy_net):
    x = rand_images(8)
    toy_net.head_evals = 0
    toy_net.forward_train(x)
    n_train = toy_net.head_evals
    toy_net.head_evals = 0
    toy_net.forward_infer(x)
    assert (n_train, toy_net.head_evals) == (4, 1)

    def best(fn):
        ts = []
        for _ in range(5):
            t0 = time.perf_counter()
            fn(x)
            ts.append(time.perf_counter() - t0)
        return min(ts)

    assert best(toy_net.forward_infer) < best(toy_net.forward_train)


def test_information_flows_top_down_only(toy_net):
    feats = toy_net.backbone_forward(rand_images(1, seed=4))
    base = toy_net.forward_from_features(feats)
    feats.F3 = feats.F3 + 0.5
    pert = toy_net.forward_from_features(feats)
    assert np.array_equal(base[0], pert[0]) and np.array_equal(base[1], pert[1])
    assert not np.array_equal(base[2], pert[2]) and not np.array_equal(base[3], pert[3])


# -- loss ---------------------------------------------------------------------------

def _records(n, cfg=TOY, seed=0):
    return data.generate(n, cfg.image_size, cfg.num_keypoints, seed=seed)


def test_total_loss_zero_at_targets_and_linear_in_weights(toy_net):
    recs = _records(3)
    insts = [r.instance for r in recs]
    targets = make_targets(TOY, insts)
    assert total_loss(targets, insts, TOY) == 0.0
    outs = toy_net.forward_train(data.as_batch(recs)[0])
    base = total_loss(outs, insts, TOY)
    doubled = total_loss(outs, insts, TOY.replace(loss_weights=(2, 2, 2, 2)))
    assert doubled == pytest.approx(2 * base, rel=1e-12)
    with pytest.raises(ConfigError):
        total_loss(outs[:3], insts, TOY)


def test_invisible_keypoints_do_not_contribute():
    insts = [PoseInstance([(10, 10, 2), (20, 30, 0)])]
    cfg = MICRO
    targets = make_targets(cfg, insts)
    outs = [t.maps.copy() for t in targets]
    for o in outs:
        o[:, 1] += 3.0  # garbage on the invisible channel
    assert total_loss(outs, insts, cfg) == 0.0


def test_micro_net_total_loss_gradient():
    net = SRPoseNet(MICRO, seed=3, dtype=np.float64)
    rng = np.random.default_rng(0)
    x = rng.random((2, 1, 32, 32))
    insts = [PoseInstance(np.c_[rng.uniform(4, 28, (2, 2)), [2, 2]], area=100.0) for _ in range(2)]
    targets = make_targets(MICRO, insts, dtype=np.float64)

    def loss():
        return loss_and_grads(MICRO, net.forward_train(x), targets)[0]

    outs = net.forward_train(x)
    _, grads, dlr = loss_and_grads(MICRO, outs, targets, net._feats.M_LR)
    net.zero_grad()
    net.backward(grads, dlr)
    eps = 1e-6
    worst = 0.0
    for name, p in net.named_params():
        flat = p.data.reshape(-1)
        for i in rng.choice(flat.size, size=min(6, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss()
            flat[i] = orig - eps
            fm = loss()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            ana = p.grad.reshape(-1)[i]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-5))
    assert worst < 1e-4


def test_disabled_heads_get_exactly_zero_lkc_grads():
    cfg = TOY.replace(loss_weights=(0, 0, 0, 1))
    net = SRPoseNet(cfg, seed=0)
    recs = _records(4)
    images, insts = data.as_batch(recs)
    outs = net.forward_train(images)
    _, grads, dlr = loss_and_grads(cfg, outs, make_targets(cfg, insts), net._feats.M_LR)
    net.zero_grad()
    net.backward(grads, dlr)
    for i in range(3):
        assert np.all(net.heads[i].lkc.weight.grad == 0)
        assert np.all(net.heads[i].encoder.weight.grad == 0)
    assert np.any(net.heads[3].lkc.weight.grad != 0)


def test_supervise_lr_adds_target():
    cfg = TOY.replace(supervise_lr=True)
    insts = [r.instance for r in _records(2)]
    tg = make_targets(cfg, insts)
    assert len(tg) == 5 and tg[4].maps.shape[2:] == (2, 2)


# -- training ----------------------------------------------------------------------------

def _one_sample_run(steps, lr=1e-3):
    recs = _records(1)
    images, insts = data.as_batch(recs)
    net = SRPoseNet(TOY, seed=0)
    opt = Adam(net.params(), lr)
    targets = make_targets(TOY, insts)
    losses = []
    for _ in range(steps):
        outs = net.forward_train(images)
        loss, grads, dlr = loss_and_grads(TOY, outs, targets, net._feats.M_LR)
        net.zero_grad()
        net.backward(grads, dlr)
        opt.step()
        losses.append(loss)
    return np.array(losses)


def test_loss_monotone_first_20_steps():
    losses = _one_sample_run(21)
    assert np.all(np.diff(losses) < 0)


@pytest.mark.slow
def test_single_sample_memorized():
    assert _one_sample_run(300)[-1] < 1e-3


def test_train_is_deterministic_and_returns_best(tmp_path):
    recs = _records(40)
    tr, va = data.split(recs, "train"), data.split(recs, "val")
    st = TrainSettings(epochs=2, batch_size=8, lr=2e-3)
    a = train(tr, va, TOY, st, seed=4)
    b = train(tr, va, TOY, st, seed=4)
    assert a.trace == b.trace
    assert a.best_error == min(e for _, _, e in a.trace)
    for k in a.state:
        assert a.state[k].tobytes() == b.state[k].tobytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_is_reported():
    recs = _records(10)
    with pytest.raises(TrainingDiverged, match="loss became"):
        train(recs, [], TOY, TrainSettings(epochs=3, batch_size=4, lr=1e30), seed=0)


def test_train_rejects_empty():
    with pytest.raises(ValueError):
        train([], [], TOY)


# -- associative embedding --------------------------------------------------------------------

def test_ae_shapes_and_identity():
    ae = AssociativeEmbedding(8, 3, np.random.default_rng(0), np.float64)
    f2 = np.random.default_rng(1).standard_normal((1, 8, 5, 4))
    assert bottom_up_ae(f2, 1, ae).shape == (1, 3, 5, 4)
    assert np.array_equal(bottom_up_ae(f2, 1, ae), ae.conv(f2))
    assert bottom_up_ae(f2, 4, ae).shape == (1, 3, 20, 16)


def test_ae_constant_preserved():
    ae = AssociativeEmbedding(4, 2, np.random.default_rng(0), np.float64)
    out = ae(np.full((1, 4, 3, 3), 0.3), 4)
    for c in range(2):
        np.testing.assert_allclose(out[0, c], out[0, c, 0, 0], atol=1e-12)


def test_heatmap_stack_scale_times_width(toy_net):
    stacks = toy_net.stacks(toy_net.forward_train(rand_images(1)))
    for s in stacks:
        assert isinstance(s, HeatmapStack)
        assert abs(s.scale * s.maps.shape[3] - 48) <= s.scale
