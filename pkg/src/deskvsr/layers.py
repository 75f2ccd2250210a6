"""Parameter containers: a tiny Module base, Conv2d and ResidualBlock."""
from __future__ import annotations

import numpy as np

from . import functional as F
from .errors import ShapeMismatchError
from .tensor import Tensor, add


class Module:
    """Attribute-walking parameter registry.

    Parameters are leaf tensors stored as attributes; submodules are found in
    attributes and lists. Names are dotted paths in declaration order.
    """

    def named_parameters(self, prefix=""):
        for name, val in vars(self).items():
            if name.startswith("_"):
                continue
            path = f"{prefix}{name}"
            if isinstance(val, Tensor):
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(path + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return int(np.sum([p.size for p in self.parameters()], dtype=np.int64))

    def state_dict(self):
        return {k: v.data for k, v in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch; missing={missing[:5]} unexpected={extra[:5]}")
        for k, p in own.items():
            arr = np.asarray(state[k].data if isinstance(state[k], Tensor) else state[k])
            if arr.shape != p.shape:
                raise ShapeMismatchError(f"load {k}", p.shape, arr.shape)
            p.data = np.array(arr, dtype=p.dtype, order="C")

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(arr, dtype):
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


class Conv2d(Module):
    """k x k convolution; Kaiming fan-in normal init, zero bias.

    ``init_scale`` multiplies the initial weights (0 gives a zero-initialised layer).
    """

    def __init__(self, cin, cout, k=3, rng=None, stride=1, padding=None, init_scale=1.0, dtype=np.float32):
        if k % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {k}")
        self._cin, self._cout, self._k = cin, cout, k
        self._stride = stride
        self._padding = (k - 1) // 2 if padding is None else padding
        fan_in = cin * k * k
        if init_scale == 0 or rng is None:
            w = np.zeros((cout, cin, k, k))
        else:
            w = rng.standard_normal((cout, cin, k, k)) * np.sqrt(2.0 / fan_in) * init_scale
        self.weight = _param(w, dtype)
        self.bias = _param(np.zeros(cout), dtype)

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self._stride, self._padding)

    @staticmethod
    def count(cin, cout, k=3):
        return cout * cin * k * k + cout


class ResidualBlock(Module):
    """x + conv(relu(conv(x))), no normalisation. Second conv starts at 0.1x scale."""

    def __init__(self, channels, rng=None, dtype=np.float32, k=3):
        self._c = channels
        self.conv1 = Conv2d(channels, channels, k, rng, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, k, rng, init_scale=0.1, dtype=dtype)

    def forward(self, x):
        if x.shape[1] != self._c:
            raise ShapeMismatchError("residual_block", x.shape, (self._c,), detail="channel mismatch")
        return add(x, self.conv2(F.relu(self.conv1(x))))

    @staticmethod
    def count(channels, k=3):
        return 2 * Conv2d.count(channels, channels, k)


def residual_block_forward(x, block):
    return block(x)
