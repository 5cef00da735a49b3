"""Gaussian heatmap targets and argmax decoding.

Map pixel ``(i, j)`` is centred on image coordinate ``(j * scale, i * scale)``;
encoding and both decoders share that convention.
"""
from dataclasses import dataclass, field

import numpy as np

from .tensor import backend

CLAMP = 1e-8


@dataclass
class PoseInstance:
    keypoints: np.ndarray  # (N, 3): x, y, visibility
    area: float = 1.0
    head_size: float | None = None
    score: float | None = None
    image_id: int = 0

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 3)

    @property
    def num_keypoints(self):
        return len(self.keypoints)

    @property
    def visible(self):
        return self.keypoints[:, 2] > 0


@dataclass
class HeatmapStack:
    maps: np.ndarray  # (n, N, h, w)
    scale: float  # image px per map px
    sigma: float = 0.0  # map px
    weights: np.ndarray | None = None  # (n, N) loss weights
    flags: np.ndarray | None = None  # (n, N) keypoint fell off the map

    def __post_init__(self):
        if self.maps.ndim == 3:
            self.maps = self.maps[None]
        if self.maps.ndim != 4:
            raise ValueError(f"heatmaps must be (n, N, h, w), got {self.maps.shape}")
        n, k = self.maps.shape[:2]
        if self.weights is None:
            self.weights = np.ones((n, k))
        if self.flags is None:
            self.flags = np.zeros((n, k), dtype=bool)

    @property
    def shape(self):
        return self.maps.shape


@dataclass
class DecodeResult:
    x: np.ndarray  # (n, N) image px
    y: np.ndarray
    score: np.ndarray
    method: str = "naive"
    s: int = 1
    candidates: int = 0
    flags: np.ndarray | None = field(default=None, repr=False)  # all-zero channels

    def coords(self):
        return np.stack([self.x, self.y], axis=-1)


def sigma_for_resolution(base_sigma, target_stride):
    """Gaussian width that keeps supervision consistent across resolutions.

    ``base_sigma`` is given in map pixels at stride 4 and scales inversely with
    the target stride, so 2 px at stride 4 becomes 8 px at stride 1.
    """
    if base_sigma <= 0 or target_stride <= 0:
        raise ValueError("base_sigma and target_stride must be positive")
    return base_sigma * (4.0 / target_stride)


def encode_targets(instance, map_size, scale, sigma, dtype=np.float32):
    """Render one unnormalized Gaussian per keypoint at continuous centre ``kp / scale``."""
    return encode_batch([instance], map_size, scale, sigma, dtype)


def encode_batch(instances, map_size, scale, sigma, dtype=np.float32):
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    h, w = map_size
    kps = np.stack([inst.keypoints for inst in instances])  # (n, N, 3)
    mu = kps[..., :2] / scale
    vis = kps[..., 2] > 0
    inside = (mu[..., 0] >= -0.5) & (mu[..., 0] <= w - 0.5) & (mu[..., 1] >= -0.5) & (mu[..., 1] <= h - 0.5)
    dx2 = np.square(np.arange(w)[None, None, :] - mu[..., 0:1])  # (n, N, w)
    dy2 = np.square(np.arange(h)[None, None, :] - mu[..., 1:2])  # (n, N, h)
    maps = np.exp(-(dy2[..., :, None] + dx2[..., None, :]) / (2.0 * sigma * sigma))
    maps[maps < CLAMP] = 0.0
    keep = vis & inside
    maps *= keep[..., None, None]
    return HeatmapStack(
        maps.astype(dtype),
        float(scale),
        float(sigma),
        weights=vis.astype(np.float64),
        flags=vis & ~inside,
    )


def _argmax_flat(maps):
    n, k, h, w = maps.shape
    flat = np.ascontiguousarray(maps.reshape(n * k, h * w))
    if flat.dtype not in (np.float32, np.float64):
        flat = flat.astype(np.float64)
    return backend.kernels.argmax_rows(flat).reshape(n, k)


def quarter_shift(maps, px, py):
    """Move each peak 0.25 px toward its larger axis neighbour; no move at borders or ties."""
    n, k, h, w = maps.shape
    ni, ki = np.indices((n, k))
    dx = np.zeros((n, k))
    dy = np.zeros((n, k))
    ix = (px > 0) & (px < w - 1)
    iy = (py > 0) & (py < h - 1)
    right = maps[ni, ki, py, np.minimum(px + 1, w - 1)].astype(np.float64)
    left = maps[ni, ki, py, np.maximum(px - 1, 0)].astype(np.float64)
    down = maps[ni, ki, np.minimum(py + 1, h - 1), px].astype(np.float64)
    up = maps[ni, ki, np.maximum(py - 1, 0), px].astype(np.float64)
    dx[ix] = 0.25 * np.sign(right - left)[ix]
    dy[iy] = 0.25 * np.sign(down - up)[iy]
    return dx, dy


def decode_naive(stack, post_shift=False):
    """Full-map row-major argmax per channel, optionally with the quarter-pixel shift."""
    maps = stack.maps
    n, k, h, w = maps.shape
    if n * k == 0 or h * w == 0:
        raise ValueError("empty heatmap stack")
    idx = _argmax_flat(maps)
    py, px = np.divmod(idx, w)
    score = np.take_along_axis(maps.reshape(n, k, h * w), idx[..., None], axis=-1)[..., 0]
    xm, ym = px.astype(np.float64), py.astype(np.float64)
    if post_shift:
        dx, dy = quarter_shift(maps, px, py)
        xm, ym = xm + dx, ym + dy
    empty = ~maps.reshape(n, k, -1).any(axis=-1)
    xm[empty] = (w - 1) / 2.0
    ym[empty] = (h - 1) / 2.0
    return DecodeResult(
        xm * stack.scale,
        ym * stack.scale,
        score.astype(np.float64),
        method="naive+shift" if post_shift else "naive",
        s=1,
        candidates=h * w,
        flags=empty,
    )


def write_pgm(path, heatmap):
    """8-bit binary graymap of a single 2-D map, values scaled by 255 and clipped."""
    hm = np.asarray(heatmap, dtype=np.float64)
    if hm.ndim != 2:
        raise ValueError("write_pgm expects a 2-D map")
    pix = np.clip(np.rint(hm * 255.0), 0, 255).astype(np.uint8)
    h, w = pix.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pix.tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    return np.frombuffer(data[-w * h:], dtype=np.uint8).reshape(h, w)
