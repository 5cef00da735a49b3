"""Minibatch Adam training on synthetic records with per-epoch validation."""
import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import as_batch
from .heatmap import HeatmapStack, decode_naive
from .net import SRPoseNet, loss_and_grads, make_targets

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


def cosine_lr(base, step, total):
    return 0.5 * base * (1 + math.cos(math.pi * min(step, total) / max(total, 1)))


@dataclass
class TrainSettings:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.0
    cosine: bool = True
    eval_batch: int = 128


@dataclass
class TrainResult:
    state: dict
    trace: list = field(default_factory=list)  # (epoch, train_loss, val_mean_px_error)
    best_epoch: int = -1
    best_error: float = math.inf
    net: object = field(default=None, repr=False)


def predict(net, images, batch=128):
    """Final-head heatmaps for ``images`` as one HeatmapStack."""
    outs = [net.forward_infer(images[i:i + batch]) for i in range(0, len(images), batch)]
    return HeatmapStack(np.concatenate(outs), net.cfg.final_stride)


def mean_px_error(result, instances):
    """Mean Euclidean distance over visible keypoints, in image px."""
    gt = np.stack([inst.keypoints for inst in instances])
    vis = gt[..., 2] > 0
    d = np.hypot(result.x - gt[..., 0], result.y - gt[..., 1])
    return float(d[vis].mean())


def evaluate(net, records, decoder=decode_naive, batch=128):
    images, insts = as_batch(records)
    return mean_px_error(decoder(predict(net, images, batch)), insts)


def train(train_records, val_records, cfg, settings=None, seed=0, on_epoch=None):
    if not train_records:
        raise ValueError("empty training set")
    settings = settings or TrainSettings()
    net = SRPoseNet(cfg, seed=seed)
    opt = Adam(net.params(), settings.lr, weight_decay=settings.weight_decay)
    rng = np.random.default_rng([seed, 1])
    images, insts = as_batch(train_records)
    n = len(images)
    bs = min(settings.batch_size, n)
    steps_per_epoch = math.ceil(n / bs)
    total = settings.epochs * steps_per_epoch
    result = TrainResult(net.state_dict())
    step = 0
    for epoch in range(1, settings.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * bs:(b + 1) * bs]
            batch_insts = [insts[i] for i in idx]
            outs = net.forward_train(images[idx])
            targets = make_targets(cfg, batch_insts)
            loss, grads, dlr = loss_and_grads(cfg, outs, targets, net._feats.M_LR)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch} step {b} (lr {opt.lr})")
            net.zero_grad()
            net.backward(grads, dlr)
            lr = cosine_lr(settings.lr, step, total) if settings.cosine else settings.lr
            opt.step(lr)
            step += 1
            losses.append(loss)
        train_loss = float(np.mean(losses))
        val_err = evaluate(net, val_records, batch=settings.eval_batch) if val_records else math.nan
        result.trace.append((epoch, train_loss, val_err))
        log.info("epoch %d loss %.6g val_err %.4f px", epoch, train_loss, val_err)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_err)
        if not val_records or val_err < result.best_error:
            result.best_error = val_err
            result.best_epoch = epoch
            result.state = net.state_dict()
    net.load_state_dict(result.state)
    result.net = net
    return result


def write_trace(path, trace):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "val_mean_px_error"])
        for epoch, loss, err in trace:
            w.writerow([epoch, repr(loss), repr(err)])
