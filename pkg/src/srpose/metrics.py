"""OKS-based average precision and PCKh."""
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

RECALL_GRID = np.linspace(0.0, 1.0, 101)


@dataclass
class OksParams:
    sigmas: np.ndarray
    thresholds: np.ndarray = field(default_factory=lambda: np.round(np.arange(0.50, 0.951, 0.05), 2))

    def __post_init__(self):
        self.sigmas = np.asarray(self.sigmas, dtype=np.float64)
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        if np.any(self.sigmas <= 0):
            raise ValueError("OKS sigmas must be positive")
        t = self.thresholds
        if t.size == 0 or np.any(np.diff(t) <= 0) or t[0] <= 0 or t[-1] > 1:
            raise ValueError(f"thresholds must be strictly increasing in (0, 1]: {t}")

    @classmethod
    def uniform(cls, n, sigma=0.079, **kw):
        return cls(np.full(n, sigma), **kw)


def oks(pred, gt, params):
    """Visibility-masked mean of exp(-d^2 / (2 S^2 sigma_i^2)) with S^2 = gt area.

    Returns None when the ground truth has no visible keypoint.
    """
    p, g = pred.keypoints, gt.keypoints
    if p.shape != g.shape:
        raise ValueError(f"keypoint count mismatch: {len(p)} vs {len(g)}")
    vis = g[:, 2] > 0
    if not vis.any():
        return None
    d2 = np.sum(np.square(p[:, :2] - g[:, :2]), axis=1)
    e = np.exp(-d2 / (2.0 * gt.area * np.square(params.sigmas)))
    return float(e[vis].mean())


@dataclass
class APResult:
    ap: float
    per_threshold: dict  # threshold -> (ap, precision, recall)


def _interp_ap(tp, npos):
    if len(tp) == 0:
        return 0.0, np.zeros(0), np.zeros(0)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / npos
    precision = ctp / (ctp + cfp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    pos = np.searchsorted(recall, RECALL_GRID, side="left")
    q = np.where(pos < len(envelope), envelope[np.minimum(pos, len(envelope) - 1)], 0.0)
    return float(q.mean()), precision, recall


def average_precision(preds, gts, params):
    """COCO-style AP averaged over OKS thresholds.

    Predictions are visited by descending score and greedily matched to the
    unmatched ground truth of the same ``image_id`` with highest OKS; a match
    counts when that OKS reaches the threshold. Precision is read off a
    101-point recall grid from the monotone precision envelope.
    """
    gts = [g for g in gts if np.any(g.keypoints[:, 2] > 0)]
    if not gts:
        log.warning("average_precision: no ground truth with visible keypoints, AP undefined")
        return APResult(math.nan, {})
    order = sorted(range(len(preds)), key=lambda i: -(preds[i].score if preds[i].score is not None else 0.0))
    by_image = {}
    for j, g in enumerate(gts):
        by_image.setdefault(g.image_id, []).append(j)
    sims = []
    for i in order:
        cand = by_image.get(preds[i].image_id, [])
        sims.append([(j, oks(preds[i], gts[j], params)) for j in cand])

    per = {}
    for t in params.thresholds:
        matched = np.zeros(len(gts), dtype=bool)
        tp = np.zeros(len(order), dtype=bool)
        for r, cands in enumerate(sims):
            best_j, best = -1, -1.0
            for j, o in cands:
                if not matched[j] and o > best:
                    best_j, best = j, o
            if best_j >= 0 and best >= t:
                matched[best_j] = True
                tp[r] = True
        per[float(t)] = _interp_ap(tp, len(gts))
    ap = float(np.mean([v[0] for v in per.values()]))
    return APResult(ap, per)


def pckh(preds, gts, alpha=0.5):
    """Fraction of visible keypoints within ``alpha * head_size`` of the ground truth."""
    correct = total = 0
    for p, g in zip(preds, gts):
        if g.head_size is None:
            warnings.warn(f"instance {g.image_id} has no head_size; skipped")
            continue
        vis = g.keypoints[:, 2] > 0
        d = np.hypot(*(p.keypoints[:, :2] - g.keypoints[:, :2]).T)
        correct += int(np.sum(d[vis] <= alpha * g.head_size))
        total += int(vis.sum())
    return correct / total if total else math.nan
