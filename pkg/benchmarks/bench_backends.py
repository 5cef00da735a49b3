"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_backends.py [--repeats 5] [--csv out.csv]

Each row times one workload under both backends (best of ``--repeats``)
and checks that the outputs are bit-identical.
"""
import argparse
import csv
import sys
import time

import numpy as np

from srpose import data
from srpose.decode import pooled_decode
from srpose.heatmap import HeatmapStack, decode_naive
from srpose.net import NetConfig, SRPoseNet, loss_and_grads, make_targets
from srpose.tensor import backend, conv2d_backward, conv2d_forward
from srpose.tensor.ops import ConvSpec


def _best(fn, repeats):
    best, out = None, None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        dt = time.perf_counter() - t0
        best = dt if best is None else min(best, dt)
    return best, out


def _flatten(out):
    if isinstance(out, np.ndarray):
        return [out]
    if isinstance(out, (tuple, list)):
        return [a for o in out for a in _flatten(o)]
    if hasattr(out, "x"):
        return [out.x, out.y, out.score]
    return [np.asarray(out)]


def workloads(rng):
    cols = rng.standard_normal((8, 32, 16, 12, 3, 3)).astype(np.float32)
    maps = rng.random((64, 5, 256, 192), dtype=np.float32)
    x = rng.standard_normal((16, 32, 16, 12)).astype(np.float32)
    spec = ConvSpec.same(32, 32, 3)
    w = rng.standard_normal(spec.weight_shape).astype(np.float32) * 0.1
    b = np.zeros(32, np.float32)
    dy = rng.standard_normal((16, 32, 16, 12)).astype(np.float32)

    def conv():
        y, cache = conv2d_forward(x, w, b, spec)
        return y, conv2d_backward(dy, cache)

    cfg = NetConfig(head_kernels=(3, 5, 5, 7), embed_channels=4, backbone_widths=(8, 16, 24, 32), neck_width=16)
    recs = data.generate(32, cfg.image_size, cfg.num_keypoints, seed=0)
    images, insts = data.as_batch(recs)
    targets = make_targets(cfg, insts)

    def step():
        net = SRPoseNet(cfg, seed=0)
        outs = net.forward_train(images)
        loss, grads, dlr = loss_and_grads(cfg, outs, targets, net._feats.M_LR)
        net.backward(grads, dlr)
        return np.array(loss), [p.grad for p in net.params()]

    stack = HeatmapStack(maps, 1.0)
    return [
        ("col2im 8x32x16x12 k3", lambda: backend.kernels.col2im(cols, 18, 14, 1)),
        ("max_pool 64x5x256x192 s16", lambda: backend.kernels.max_pool_with_indices(maps, 16)),
        ("argmax_rows 320x49152", lambda: backend.kernels.argmax_rows(maps.reshape(320, -1))),
        ("conv3x3 fwd+bwd 16x32x16x12", conv),
        ("train step batch 32", step),
        ("decode naive 64x5x256x192", lambda: decode_naive(stack)),
        ("decode pooled s16 64x5x256x192", lambda: pooled_decode(stack, 16)),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--csv", default=None)
    args = ap.parse_args(argv)
    if "compiled" not in backend.BACKENDS:
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1
    rows = []
    for name, fn in workloads(np.random.default_rng(0)):
        with backend.use("compiled"):
            tc, oc = _best(fn, args.repeats)
        with backend.use("python"):
            tp, op = _best(fn, args.repeats)
        same = all(np.array_equal(a, b) for a, b in zip(_flatten(oc), _flatten(op)))
        rows.append(dict(workload=name, compiled_ms=tc * 1e3, python_ms=tp * 1e3, speedup=tp / tc, identical=same))
    print(f"{'workload':34s} {'compiled ms':>12s} {'python ms':>10s} {'speedup':>8s}  identical")
    for r in rows:
        print(f"{r['workload']:34s} {r['compiled_ms']:12.3f} {r['python_ms']:10.3f} {r['speedup']:8.2f}  {r['identical']}")
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            wr = csv.DictWriter(f, fieldnames=list(rows[0]))
            wr.writeheader()
            wr.writerows(rows)
    return 0 if all(r["identical"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
