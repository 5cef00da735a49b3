"""Random-shape gradient checks for every differentiable op and block.

Each builder takes an rng and returns ``(fn, inputs)`` ready for
:func:`srpose.tensor.grad_check`. Module parameters are passed as extra
inputs so they get checked too.
"""
import numpy as np

from .head import SRHead, SRHeadConfig
from .net import Fuse, TopFuse
from .tensor import (
    ConvSpec,
    bilinear_backward,
    bilinear_interpolate,
    conv2d_backward,
    conv2d_forward,
    grad_check,
    mse_loss,
    mse_loss_grad,
    pixel_shuffle,
    pixel_unshuffle,
)


def conv_case(rng):
    g = int(rng.choice([1, 2, 3]))
    cin, cout = g * int(rng.integers(1, 3)), g * int(rng.integers(1, 3))
    k = int(rng.choice([1, 3, 5]))
    stride = int(rng.choice([1, 2]))
    n, h, w = int(rng.integers(1, 3)), int(rng.integers(k, 8)), int(rng.integers(k, 8))
    spec = ConvSpec(cin, cout, k, stride, int(rng.integers(0, k // 2 + 1)), g)

    def fn(x, wt, b):
        y, cache = conv2d_forward(x, wt, b, spec)
        return y, lambda d: conv2d_backward(d, cache)

    return fn, [rng.standard_normal((n, cin, h, w)), rng.standard_normal(spec.weight_shape), rng.standard_normal(cout)]


def shuffle_case(rng):
    l = int(rng.integers(1, 4))
    shape = (int(rng.integers(1, 3)), l * l * int(rng.integers(1, 3)), int(rng.integers(1, 5)), int(rng.integers(1, 5)))

    def fn(x):
        return pixel_shuffle(x, l), lambda d: (pixel_unshuffle(d, l),)

    return fn, [rng.standard_normal(shape)]


def bilinear_case(rng):
    h, w = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    oh, ow = int(rng.integers(1, 9)), int(rng.integers(1, 9))
    align = bool(rng.integers(0, 2))

    def fn(x):
        return bilinear_interpolate(x, oh, ow, align), lambda d: (bilinear_backward(d, h, w, align),)

    return fn, [rng.standard_normal((int(rng.integers(1, 3)), int(rng.integers(1, 3)), h, w))]


def mse_case(rng):
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 5)))
    mask = rng.random(shape[1])
    target = rng.standard_normal(shape)

    def fn(p):
        return mse_loss(p, target, mask), lambda d: (d * mse_loss_grad(p, target, mask),)

    return fn, [rng.standard_normal(shape)]


def _module_fn(module, forward, backward):
    params = module.params()

    def fn(*arrays):
        x, *ps = arrays
        for p, a in zip(params, ps):
            p.data = a
            p.grad = np.zeros_like(a)
        out = forward(x)

        def back(d):
            dx = backward(d)
            return (dx, *[p.grad.copy() for p in params])

        return out, back

    return fn, [p.data.copy() for p in params]


def sr_head_case(rng):
    cfg = SRHeadConfig(
        in_channels=int(rng.integers(1, 4)),
        num_keypoints=int(rng.integers(1, 4)),
        embed_channels=int(rng.integers(1, 3)),
        upscale=int(rng.integers(1, 4)),
        kernel=int(rng.choice([1, 3, 5])),
    )
    head = SRHead(cfg, rng, dtype=np.float64)
    fn, ps = _module_fn(head, head.forward, head.backward)
    x = rng.standard_normal((1, cfg.in_channels, int(rng.integers(1, 5)), int(rng.integers(1, 5))))
    return fn, [x, *ps]


def fuse_case(rng):
    """Lower-level fuse block; the coarse map arrives as a second input."""
    cin, width = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    hn, wn = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    h, w = 2 * hn - int(rng.integers(0, 2)), 2 * wn - int(rng.integers(0, 2))
    if rng.integers(0, 4) == 0:
        block = TopFuse(cin, width, width, rng, np.float64)
        h, w = hn, wn
    else:
        block = Fuse(cin, width, rng, np.float64)
    feat = rng.standard_normal((1, cin, h, w))
    coarse = rng.standard_normal((1, width, hn, wn))
    params = block.params()

    def fn(f, m, *ps):
        for p, a in zip(params, ps):
            p.data = a
            p.grad = np.zeros_like(a)
        out = block(f, m)

        def back(d):
            df, dm = block.backward(d)
            return (df, dm, *[p.grad.copy() for p in params])

        return out, back

    return fn, [feat, coarse, *[p.data.copy() for p in params]]


SUITE = {
    "conv2d": conv_case,
    "pixel_shuffle": shuffle_case,
    "bilinear_interpolate": bilinear_case,
    "mse_loss": mse_case,
    "sr_head_forward": sr_head_case,
    "fuse": fuse_case,
}


def run_suite(n_shapes=10, eps=1e-5, tol=1e-4, seed=0, max_checks=64, names=None):
    """``{op: [GradCheckReport, ...]}`` over ``n_shapes`` random shapes per op."""
    out = {}
    for name in names or SUITE:
        rng = np.random.default_rng([seed, sorted(SUITE).index(name)])
        reports = []
        for i in range(n_shapes):
            fn, inputs = SUITE[name](rng)
            reports.append(grad_check(fn, inputs, eps=eps, tol=tol, max_checks=max_checks, seed=i))
        out[name] = reports
    return out
