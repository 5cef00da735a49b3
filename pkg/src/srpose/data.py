"""Deterministic stick-figure images with sub-pixel keypoint labels.

Each record is regenerated from ``(seed, index)`` alone. Pixel ``(r, c)``
is centred on image coordinate ``(x=c, y=r)``, the same convention the
heatmap codec uses at scale 1.
"""
import hashlib
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from .heatmap import PoseInstance
from .tensor import srt4

log = logging.getLogger(__name__)

MARGIN = 2.0
MAX_TRIES = 20
BACKGROUND = 0.1
NOISE = 0.03
LIMB_LEVEL = 0.3
SPLITS = ("train",) * 8 + ("val", "test")


class DatasetError(ValueError):
    pass


@dataclass
class DatasetRecord:
    image: np.ndarray  # (H, W) float32 in [0, 1]
    instance: PoseInstance
    split: str
    seed: tuple  # (seed, index, attempt)

    @property
    def index(self):
        return self.seed[1]


def skeleton(n):
    """Fixed tree topology and rest pose for ``n`` joints.

    Joint j hangs off joint (j - 1) // 2. Returns ``(parents, template)``
    with the template normalised to [-1, 1].
    """
    if n < 2:
        raise ValueError("need at least 2 joints")
    rng = np.random.default_rng(7919 + n)
    parents = np.array([-1] + [(j - 1) // 2 for j in range(1, n)])
    pts = np.zeros((n, 2))
    for j in range(1, n):
        for _ in range(200):
            theta = rng.uniform(0, 2 * np.pi)
            cand = pts[parents[j]] + 0.6 * np.array([np.cos(theta), np.sin(theta)])
            if np.min(np.linalg.norm(pts[:j] - cand, axis=1)) > 0.35:
                break
        pts[j] = cand
    pts -= pts.mean(axis=0)
    pts /= np.abs(pts).max()
    return parents, pts


def joint_style(n):
    """Per-joint disk radius (px) and amplitude; varied so joints are tellable apart."""
    j = np.arange(n)
    radius = 1.0 + 0.5 * (j % 3)
    amp = 0.35 + 0.25 * j / max(n - 1, 1)
    return radius, amp


def _segment_dist(px, py, a, b):
    d = b - a
    L2 = float(d @ d)
    t = np.zeros_like(px) if L2 == 0 else np.clip(((px - a[0]) * d[0] + (py - a[1]) * d[1]) / L2, 0, 1)
    return np.hypot(px - (a[0] + t * d[0]), py - (a[1] + t * d[1]))


def render(kps, parents, size, rng):
    h, w = size
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    img = BACKGROUND + NOISE * rng.standard_normal((h, w))
    for j, p in enumerate(parents):
        if p < 0:
            continue
        cov = np.clip(1.0 - _segment_dist(xs, ys, kps[p], kps[j]), 0, 1)  # ~1 px wide line
        img = np.maximum(img, BACKGROUND + LIMB_LEVEL * cov)
    radius, amp = joint_style(len(kps))
    for (x, y), r, a in zip(kps, radius, amp):
        cov = np.clip(r + 0.5 - np.hypot(xs - x, ys - y), 0, 1)
        img += a * cov
    return np.clip(img, 0, 1).astype(np.float32)


def _place(rng, template, size):
    h, w = size
    ang = np.deg2rad(rng.uniform(-30, 30))
    rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    radius = rng.uniform(0.3, 0.45) * min(h, w)
    pts = template + rng.normal(0, 0.06, template.shape)
    pts = (pts @ rot.T) * radius
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span_x = (w - 1 - MARGIN) - MARGIN - (hi[0] - lo[0])
    span_y = (h - 1 - MARGIN) - MARGIN - (hi[1] - lo[1])
    if span_x < 0 or span_y < 0:
        return None
    off = np.array([MARGIN - lo[0] + rng.uniform(0, span_x), MARGIN - lo[1] + rng.uniform(0, span_y)])
    return pts + off, radius


def make_record(seed, index, image_size, n):
    parents, template = skeleton(n)
    for attempt in range(1000):
        rng = np.random.default_rng([seed, index, attempt])
        placed = None
        for _ in range(MAX_TRIES):
            placed = _place(rng, template, image_size)
            if placed is not None:
                break
        if placed is not None:
            break
        log.info("record %d: placement failed, regenerating with attempt %d", index, attempt + 1)
    else:
        raise DatasetError(f"could not place a skeleton in {image_size}")
    kps, radius = placed
    image = render(kps, parents, image_size, rng)
    area = float((2 * radius) ** 2)  # object scale S^2 for OKS: squared figure diameter
    head = float(np.linalg.norm(kps[0] - kps[1]))
    inst = PoseInstance(np.c_[kps, np.full(n, 2.0)], area=area, head_size=head, image_id=index)
    return DatasetRecord(image, inst, SPLITS[index % 10], (seed, index, attempt))


def generate(count, image_size=(64, 48), n=5, seed=0):
    if n < 2:
        raise ValueError("need N >= 2 keypoints")
    if min(image_size) < 32:
        raise ValueError(f"image_size {image_size} must be at least 32x32")
    return [make_record(seed, i, tuple(image_size), n) for i in range(count)]


def split(records, name):
    return [r for r in records if r.split == name]


def as_batch(records):
    """(n, 1, H, W) images and the matching instances."""
    return np.stack([r.image for r in records])[:, None], [r.instance for r in records]


# -- on-disk format ----------------------------------------------------------

def _sha256(buf):
    return hashlib.sha256(buf).hexdigest()


def write_dataset(path, records):
    os.makedirs(os.path.join(path, "images"), exist_ok=True)
    with open(os.path.join(path, "index.jsonl"), "w") as idx:
        for r in records:
            rel = f"images/{r.index:06d}.srt4"
            blob = srt4.to_bytes(r.image[None, None])
            with open(os.path.join(path, rel), "wb") as f:
                f.write(blob)
            inst = r.instance
            row = {
                "index": r.index,
                "image": rel,
                "sha256": _sha256(blob),
                "split": r.split,
                "seed": list(r.seed),
                "keypoints": inst.keypoints.tolist(),
                "area": inst.area,
                "head_size": inst.head_size,
            }
            idx.write(json.dumps(row) + "\n")


def read_dataset(path):
    records = []
    with open(os.path.join(path, "index.jsonl")) as idx:
        for line in idx:
            row = json.loads(line)
            fname = os.path.join(path, row["image"])
            with open(fname, "rb") as f:
                blob = f.read()
            if _sha256(blob) != row["sha256"]:
                raise DatasetError(f"checksum mismatch for {fname}")
            image = srt4.from_bytes(blob, fname)[0, 0]
            inst = PoseInstance(row["keypoints"], area=row["area"], head_size=row["head_size"], image_id=row["index"])
            records.append(DatasetRecord(image, inst, row["split"], tuple(row["seed"])))
    return records
