"""Parameter containers and the convolution layer used by the heads and network."""
import numpy as np

from .tensor import ConvSpec, conv2d_backward, conv2d_forward


class Param:
    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = data
        self.grad = np.zeros_like(data)

    @property
    def size(self):
        return self.data.size


class Module:
    """Named parameter tree. Children and params are discovered from attributes in assignment order."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_params(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Param):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_params(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield from v.named_params(f"{prefix}{name}.{i}.")

    def params(self):
        return [p for _, p in self.named_params()]

    def zero_grad(self):
        for p in self.params():
            p.grad[...] = 0

    def num_params(self):
        return sum(p.size for p in self.params())

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_params()}

    def load_state_dict(self, state):
        own = dict(self.named_params())
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"missing parameters: {missing}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.size != p.data.size:
                raise ValueError(f"{name}: size {value.size} != {p.data.size}")
            p.data[...] = value.reshape(p.data.shape)


class Conv2d(Module):
    """Convolution with uniform(+-1/sqrt(fan_in)) init and a cached backward."""

    def __init__(self, spec, rng, dtype=np.float32):
        self.spec = spec
        fan_in = (spec.in_channels // spec.groups) * spec.kernel[0] * spec.kernel[1]
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = Param(rng.uniform(-bound, bound, spec.weight_shape).astype(dtype))
        if spec.has_bias:
            self.bias = Param(rng.uniform(-bound, bound, spec.out_channels).astype(dtype))
        else:
            self.bias = None
        self._cache = None

    @classmethod
    def same(cls, in_ch, out_ch, kernel, rng, groups=1, stride=1, bias=True, dtype=np.float32):
        return cls(ConvSpec.same(in_ch, out_ch, kernel, groups, bias, stride), rng, dtype)

    def forward(self, x):
        y, self._cache = conv2d_forward(x, self.weight.data, self.bias.data if self.bias else None, self.spec)
        return y

    def backward(self, dy):
        dx, dw, db = conv2d_backward(dy, self._cache)
        self.weight.grad += dw
        if self.bias is not None:
            self.bias.grad += db
        return dx
