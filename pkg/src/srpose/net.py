"""Coarse-to-fine pose network with super-resolution heads.

A strided-conv backbone produces features at strides 4..32 plus a low-res
heatmap ``M_LR``. An FPN-style neck fuses them top-down into M5..M2, and one
SR head per neck level predicts heatmaps. The first three heads upsample to
the supervision stride and only exist for training; the last one produces
the final output at stride ``1/k``.
"""
from dataclasses import dataclass, replace

import numpy as np

from .head import SRHead, SRHeadConfig
from .heatmap import HeatmapStack, encode_batch, sigma_for_resolution
from .nn import Conv2d, Module
from .tensor import (
    ShapeError,
    bilinear_backward,
    bilinear_interpolate,
    crop,
    crop_backward,
    mse_loss,
    mse_loss_grad,
    relu,
    relu_backward,
)

HEAD_STRIDES = (32, 16, 8, 4)


class ConfigError(ValueError):
    pass


def _ceil_div(a, b):
    return -(-a // b)


@dataclass
class NetConfig:
    image_size: tuple = (64, 48)
    in_channels: int = 1
    num_keypoints: int = 5
    backbone_widths: tuple = (16, 32, 48, 64)
    neck_width: int = 32
    embed_channels: int = 8
    head_kernels: tuple = (5, 7, 9, 11)  # coarse to fine
    head_bias: bool = True
    supervision_stride: int = 4
    k: float = 1.0
    loss_weights: tuple = (1.0, 1.0, 1.0, 1.0)
    sigma_base: float = 2.0
    supervise_lr: bool = False
    lr_loss_weight: float = 1.0
    head_upscales: tuple | None = None  # derived; explicit values are validated

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.backbone_widths = tuple(int(v) for v in self.backbone_widths)
        self.head_kernels = tuple(int(v) for v in self.head_kernels)
        self.loss_weights = tuple(float(v) for v in self.loss_weights)
        h, w = self.image_size
        if h < 32 or w < 32:
            raise ConfigError(f"image_size {self.image_size} must be at least 32x32")
        if len(self.backbone_widths) != 4 or len(self.head_kernels) != 4:
            raise ConfigError("backbone_widths and head_kernels need exactly 4 entries")
        if len(self.loss_weights) != 4:
            raise ConfigError(f"loss_weights needs 4 entries, got {len(self.loss_weights)}")
        if any(k % 2 == 0 for k in self.head_kernels):
            raise ConfigError(f"head_kernels must be odd: {self.head_kernels}")
        ss = self.supervision_stride
        if ss < 1 or 8 % ss:
            raise ConfigError(f"supervision_stride {ss} must divide 8")
        final = 4 * self.k
        if final < 1 or abs(final - round(final)) > 1e-9:
            raise ConfigError(f"k={self.k} must make 4*k a positive integer")
        derived = tuple(s // ss for s in HEAD_STRIDES[:3]) + (int(round(final)),)
        if self.head_upscales is not None and tuple(self.head_upscales) != derived:
            raise ConfigError(
                f"head_upscales {tuple(self.head_upscales)} contradict stride arithmetic, expected {derived}"
            )
        self.head_upscales = derived

    @property
    def final_stride(self):
        return 4 / self.head_upscales[3]

    @property
    def head_output_strides(self):
        return (self.supervision_stride,) * 3 + (self.final_stride,)

    def feature_size(self, level):
        h, w = self.image_size
        return _ceil_div(h, 2 ** level), _ceil_div(w, 2 ** level)

    def head_output_size(self, i):
        h, w = self.image_size
        if i < 3:
            return _ceil_div(h, self.supervision_stride), _ceil_div(w, self.supervision_stride)
        l = self.head_upscales[3]
        return _ceil_div(h * l, 4), _ceil_div(w * l, 4)

    def head_config(self, i):
        return SRHeadConfig(
            self.neck_width,
            self.num_keypoints,
            self.embed_channels,
            self.head_upscales[i],
            self.head_kernels[i],
            self.head_bias,
        )

    def replace(self, **changes):
        return replace(self, head_upscales=None, **changes)


@dataclass
class MultiScaleFeatures:
    F2: np.ndarray
    F3: np.ndarray
    F4: np.ndarray
    F5: np.ndarray
    M_LR: np.ndarray

    def levels(self):
        return [self.F2, self.F3, self.F4, self.F5]


class ConvReLU(Module):
    def __init__(self, conv):
        self.conv = conv
        self._y = None

    def forward(self, x):
        self._y = relu(self.conv(x))
        return self._y

    def backward(self, dy):
        return self.conv.backward(relu_backward(dy, self._y))


class Stage(Module):
    """Strided conv + conv, both followed by ReLU."""

    def __init__(self, cin, cout, rng, stride, kernel, dtype):
        self.down = ConvReLU(Conv2d.same(cin, cout, kernel, rng, stride=stride, dtype=dtype))
        self.body = ConvReLU(Conv2d.same(cout, cout, 3, rng, dtype=dtype))

    def forward(self, x):
        return self.body(self.down(x))

    def backward(self, dy):
        return self.down.backward(self.body.backward(dy))


class Backbone(Module):
    """Plain strided CNN standing in for a real backbone; F_k has stride 2**k."""

    def __init__(self, cfg, rng, dtype=np.float32):
        w = cfg.backbone_widths
        self.stem = Stage(cfg.in_channels, w[0], rng, stride=4, kernel=5, dtype=dtype)
        self.stages = [Stage(w[i - 1], w[i], rng, stride=2, kernel=3, dtype=dtype) for i in range(1, 4)]
        self.lr_head = Conv2d.same(w[3], cfg.num_keypoints, 1, rng, dtype=dtype)

    def forward(self, image):
        f = [self.stem(image)]
        for st in self.stages:
            f.append(st(f[-1]))
        return MultiScaleFeatures(*f, self.lr_head(f[3]))

    def backward(self, dF, dmlr):
        """``dF`` is a list of 4 gradients (None for no signal) for F2..F5."""
        dF = list(dF)
        if dmlr is not None:
            g = self.lr_head.backward(dmlr)
            dF[3] = g if dF[3] is None else dF[3] + g
        for i in range(3, 0, -1):
            if dF[i] is None:
                continue
            g = self.stages[i - 1].backward(dF[i])
            dF[i - 1] = g if dF[i - 1] is None else dF[i - 1] + g
        return self.stem.backward(dF[0]) if dF[0] is not None else None


class TopFuse(Module):
    """Level-5 fusion: concat(F5, M_LR) then a 3x3 conv."""

    def __init__(self, cin_feat, n_lr, width, rng, dtype):
        self.split = cin_feat
        self.conv = Conv2d.same(cin_feat + n_lr, width, 3, rng, dtype=dtype)

    def forward(self, feat, m_next):
        if feat.shape[2:] != m_next.shape[2:]:
            raise ShapeError(f"F5 {feat.shape[2:]} and M_LR {m_next.shape[2:]} differ in size")
        return self.conv(np.concatenate([feat, m_next], axis=1))

    def backward(self, dy):
        d = self.conv.backward(dy)
        return d[:, :self.split], d[:, self.split:]


class Fuse(Module):
    """Lateral 1x1 + 2x bilinear upsample of the coarser level, add, 3x3 conv, ReLU."""

    def __init__(self, cin_feat, width, rng, dtype):
        self.lateral = Conv2d.same(cin_feat, width, 1, rng, dtype=dtype)
        self.smooth = ConvReLU(Conv2d.same(width, width, 3, rng, dtype=dtype))
        self._shapes = None

    def forward(self, feat, m_next):
        h, w = feat.shape[2:]
        hn, wn = m_next.shape[2:]
        if 2 * hn - h not in (0, 1) or 2 * wn - w not in (0, 1):
            raise ShapeError(f"coarse map {hn}x{wn} is not the half-resolution of {h}x{w}")
        self._shapes = (hn, wn, h, w)
        up = crop(bilinear_interpolate(m_next, 2 * hn, 2 * wn, align_corners=False), h, w)
        return self.smooth(self.lateral(feat) + up)

    def backward(self, dy):
        hn, wn, h, w = self._shapes
        ds = self.smooth.backward(dy)
        dfeat = self.lateral.backward(ds)
        dm = bilinear_backward(crop_backward(ds, 2 * hn, 2 * wn), hn, wn, align_corners=False)
        return dfeat, dm


def fuse(module, feat, m_next):
    """Apply a fusion module; level 5 takes (F5, M_LR), lower levels take (F_i, M_{i+1})."""
    return module(feat, m_next)


class SRPoseNet(Module):
    def __init__(self, cfg, seed=0, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        w = cfg.backbone_widths
        d = cfg.neck_width
        self.backbone = Backbone(cfg, rng, dtype)
        # index 0 is level 5, index 3 is level 2
        self.fuses = [TopFuse(w[3], cfg.num_keypoints, d, rng, dtype)] + [
            Fuse(w[i], d, rng, dtype) for i in (2, 1, 0)
        ]
        self.heads = [SRHead(cfg.head_config(i), rng, dtype) for i in range(4)]
        self.head_evals = 0
        self._full_sizes = None

    # -- forward ---------------------------------------------------------
    def backbone_forward(self, image):
        if image.ndim != 4 or image.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"image must be (n, {self.cfg.in_channels}, H, W), got {image.shape}")
        if image.shape[2] < 32 or image.shape[3] < 32:
            raise ShapeError(f"image {image.shape[2:]} smaller than 32x32")
        return self.backbone(image)

    def neck_forward(self, feats):
        """Returns [M5, M4, M3, M2]."""
        levels = feats.levels()
        m = [self.fuses[0](levels[3], feats.M_LR)]
        for j, lvl in zip((1, 2, 3), (2, 1, 0)):
            m.append(self.fuses[j](levels[lvl], m[-1]))
        return m

    def _run_head(self, i, m):
        self.head_evals += 1
        out = self.heads[i](m)
        self._full_sizes[i] = out.shape[2:]
        return crop(out, *self.cfg.head_output_size(i))

    def forward_from_features(self, feats, heads=(0, 1, 2, 3)):
        self._full_sizes = [None] * 4
        ms = self.neck_forward(feats)
        return [self._run_head(i, ms[i]) if i in heads else None for i in range(4)]

    def forward_train(self, image):
        """All four head outputs as arrays (heads 0-2 at supervision stride, head 3 final)."""
        self._feats = self.backbone_forward(image)
        return self.forward_from_features(self._feats)

    def forward_infer(self, image):
        """Final head only."""
        feats = self.backbone_forward(image)
        return self.forward_from_features(feats, heads=(3,))[3]

    def stacks(self, outputs):
        return [
            HeatmapStack(o, s, sigma_for_resolution(self.cfg.sigma_base, s))
            for o, s in zip(outputs, self.cfg.head_output_strides)
            if o is not None
        ]

    # -- backward --------------------------------------------------------
    def backward(self, dmaps, dmlr=None):
        """Backprop head-output gradients (None to skip a head) into all parameters."""
        dms = [None] * 4
        for i, d in enumerate(dmaps):
            if d is None:
                continue
            d = crop_backward(d, *self._full_sizes[i])
            dms[i] = self.heads[i].backward(d)
        dF = [None] * 4
        # neck top-down in reverse: level 2 first
        for j, lvl in zip((3, 2, 1), (0, 1, 2)):
            if dms[j] is None:
                continue
            df, dm_next = self.fuses[j].backward(dms[j])
            dF[lvl] = df
            dms[j - 1] = dm_next if dms[j - 1] is None else dms[j - 1] + dm_next
        if dms[0] is not None:
            df5, dl = self.fuses[0].backward(dms[0])
            dF[3] = df5
            dmlr = dl if dmlr is None else dmlr + dl
        return self.backbone.backward(dF, dmlr)


def make_targets(cfg, instances, dtype=np.float32):
    """Target stacks for the four heads (plus M_LR when supervised)."""
    out = []
    for i, stride in enumerate(cfg.head_output_strides):
        out.append(
            encode_batch(instances, cfg.head_output_size(i), stride, sigma_for_resolution(cfg.sigma_base, stride), dtype)
        )
    if cfg.supervise_lr:
        out.append(encode_batch(instances, cfg.feature_size(5), 32, sigma_for_resolution(cfg.sigma_base, 32), dtype))
    return out


def loss_and_grads(cfg, outputs, targets, m_lr=None):
    """Weighted per-head MSE. Returns ``(loss, head_grads, lr_grad)``."""
    if len(outputs) != len(cfg.loss_weights):
        raise ConfigError(f"{len(outputs)} head outputs but {len(cfg.loss_weights)} loss weights")
    total = 0.0
    grads = []
    for w, pred, tgt in zip(cfg.loss_weights, outputs, targets):
        if w == 0 or pred is None:
            grads.append(None)
            continue
        total += w * mse_loss(pred, tgt.maps, tgt.weights)
        grads.append(w * mse_loss_grad(pred, tgt.maps, tgt.weights))
    dlr = None
    if cfg.supervise_lr and m_lr is not None:
        tgt = targets[4]
        total += cfg.lr_loss_weight * mse_loss(m_lr, tgt.maps, tgt.weights)
        dlr = cfg.lr_loss_weight * mse_loss_grad(m_lr, tgt.maps, tgt.weights)
    return total, grads, dlr


def total_loss(stacks, instances, cfg):
    """Weighted sum of per-head MSE against freshly rendered targets."""
    outputs = [s.maps if isinstance(s, HeatmapStack) else s for s in stacks]
    if len(outputs) != len(cfg.loss_weights):
        raise ConfigError(f"{len(outputs)} stacks but {len(cfg.loss_weights)} loss weights")
    return loss_and_grads(replace(cfg, supervise_lr=False), outputs, make_targets(cfg, instances))[0]


class AssociativeEmbedding(Module):
    """1x1 conv on the stride-4 feature to N tag maps, bilinearly resized by ``l``."""

    def __init__(self, in_channels, num_keypoints, rng, dtype=np.float32):
        self.conv = Conv2d.same(in_channels, num_keypoints, 1, rng, dtype=dtype)
        self._size = None

    def forward(self, f2, l):
        ae = self.conv(f2)
        h, w = ae.shape[2:]
        self._size = (h, w)
        if l == 1:
            return ae
        return bilinear_interpolate(ae, l * h, l * w, align_corners=False)

    def backward(self, dy):
        return self.conv.backward(bilinear_backward(dy, *self._size, align_corners=False))


def bottom_up_ae(f2, l, module):
    return module(f2, l)
