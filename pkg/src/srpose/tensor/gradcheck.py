"""Central finite-difference checks for the hand-written backward passes."""
from dataclasses import dataclass

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    worst_input: int = -1
    worst_index: tuple = ()
    checked: int = 0
    message: str = ""

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        where = f" at input {self.worst_input}{list(self.worst_index)}" if self.worst_input >= 0 else ""
        tail = f" ({self.message})" if self.message else ""
        return f"{verdict} max_rel_err={self.max_rel_error:.3e}{where} over {self.checked} entries{tail}"


def grad_check(fn, inputs, eps=1e-5, tol=1e-4, floor=1e-5, max_checks=None, seed=0):
    """Compare analytic and numerical gradients of ``fn``.

    ``fn(*inputs)`` must return ``(out, backward)`` where ``backward(dout)``
    yields one gradient per input (None to skip an input). The scalar probed
    is ``sum(out * dout)`` for a fixed random ``dout`` drawn from nonzero
    multiples of 1/8. Relative error per
    entry is ``|a - n| / max(|a|, |n|, floor)``.

    ``max_checks`` caps the number of perturbed entries per input; they are
    sampled without replacement.
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    rng = np.random.default_rng(seed)
    out, backward = fn(*inputs)
    out = np.asarray(out, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        bad = np.unravel_index(np.argmax(~np.isfinite(out)), out.shape)
        return GradCheckReport(np.inf, False, -1, tuple(int(i) for i in bad), 0, "non-finite forward output")
    # nonzero multiples of 1/8: exact products, so pure permutations check to 0 error
    dout = rng.integers(1, 9, out.shape) * rng.choice([-1.0, 1.0], out.shape) / 8 if out.ndim else np.float64(1.0)
    grads = backward(dout)

    def probe():
        o, _ = fn(*inputs)
        return float(np.sum(np.asarray(o, dtype=np.float64) * dout))

    worst = (0.0, -1, ())
    checked = 0
    for k, (x, ga) in enumerate(zip(inputs, grads)):
        if ga is None:
            continue
        ga = np.asarray(ga, dtype=np.float64)
        if ga.shape != x.shape:
            return GradCheckReport(np.inf, False, k, (), checked, f"gradient shape {ga.shape} != input {x.shape}")
        flat_idx = np.arange(x.size)
        if max_checks is not None and x.size > max_checks:
            flat_idx = rng.choice(x.size, size=max_checks, replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(int(fi), x.shape)
            orig = x[idx]
            x[idx] = orig + eps
            fp = probe()
            x[idx] = orig - eps
            fm = probe()
            x[idx] = orig
            num = (fp - fm) / (2 * eps)
            ana = ga[idx]
            loc = tuple(int(i) for i in idx)
            if not (np.isfinite(num) and np.isfinite(ana)):
                return GradCheckReport(np.inf, False, k, loc, checked, "non-finite gradient")
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            checked += 1
            if err > worst[0]:
                worst = (err, k, loc)
    return GradCheckReport(worst[0], worst[0] < tol, worst[1], worst[2], checked)
