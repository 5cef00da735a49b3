"""Super-resolution heatmap head.

A 1x1 keypoint encoder splits the feature into N embeddings of E channels,
a grouped large-kernel convolution turns each embedding into l*l low-res
maps, and pixel shuffle interleaves those into one (l*h, l*w) map per
keypoint.
"""
from dataclasses import dataclass

import numpy as np

from .heatmap import HeatmapStack
from .nn import Conv2d, Module
from .tensor import ConvSpec, ShapeError, pixel_shuffle, pixel_unshuffle


@dataclass(frozen=True)
class SRHeadConfig:
    in_channels: int
    num_keypoints: int
    embed_channels: int = 8
    upscale: int = 4
    kernel: int = 9
    bias: bool = True

    def __post_init__(self):
        for name in ("in_channels", "num_keypoints", "embed_channels", "upscale", "kernel"):
            if getattr(self, name) < 1:
                raise ValueError(f"SRHeadConfig.{name} must be positive")
        if self.kernel % 2 == 0:
            raise ValueError(f"LKC kernel must be odd, got {self.kernel}")

    @property
    def maps_per_keypoint(self):
        return self.upscale * self.upscale

    @property
    def encoder_spec(self):
        return ConvSpec(self.in_channels, self.num_keypoints * self.embed_channels, 1, has_bias=self.bias)

    @property
    def lkc_spec(self):
        n = self.num_keypoints
        return ConvSpec.same(self.embed_channels * n, self.maps_per_keypoint * n, self.kernel, groups=n, has_bias=self.bias)


class SRHead(Module):
    def __init__(self, cfg, rng, dtype=np.float32):
        self.cfg = cfg
        self.encoder = Conv2d(cfg.encoder_spec, rng, dtype)
        self.lkc = Conv2d(cfg.lkc_spec, rng, dtype)

    def keypoint_encode(self, feature):
        if feature.ndim != 4 or feature.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"feature shape {feature.shape} does not match in_channels={self.cfg.in_channels}")
        return self.encoder(feature)

    def lkc_decode(self, embeddings):
        n_e = self.cfg.num_keypoints * self.cfg.embed_channels
        if embeddings.shape[1] != n_e:
            raise ShapeError(f"embeddings have {embeddings.shape[1]} channels, expected N*E = {n_e}")
        return self.lkc(embeddings)

    def forward(self, feature):
        """(n, in, h, w) feature -> (n, N, l*h, l*w) heatmaps."""
        return pixel_shuffle(self.lkc_decode(self.keypoint_encode(feature)), self.cfg.upscale)

    def backward(self, dmaps):
        d = pixel_unshuffle(dmaps, self.cfg.upscale)
        return self.encoder.backward(self.lkc.backward(d))


def sr_head_forward(head, feature, feature_stride):
    """Run ``head`` and wrap the result with its image scale (``feature_stride / l``)."""
    return HeatmapStack(head(feature), feature_stride / head.cfg.upscale)


def param_count(cfg):
    n, e, l2, k = cfg.num_keypoints, cfg.embed_channels, cfg.maps_per_keypoint, cfg.kernel
    b = 1 if cfg.bias else 0
    encoder = cfg.in_channels * n * e + b * n * e
    lkc = n * (e * l2 * k * k) + b * n * l2
    return encoder + lkc


def deconv_head_param_count(in_channels, deconv_channels, num_layers, deconv_kernel, num_keypoints, bias=True):
    """Parameters of a stacked-deconvolution head followed by a 1x1 prediction conv."""
    b = 1 if bias else 0
    total = 0
    c = in_channels
    for _ in range(num_layers):
        total += c * deconv_channels * deconv_kernel * deconv_kernel + b * deconv_channels
        c = deconv_channels
    return total + c * num_keypoints + b * num_keypoints
