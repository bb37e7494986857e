"""Network building blocks on top of the autodiff engine.

Initialization is Kaiming-uniform over fan-in for conv/linear weights and
zeros for biases, drawn from an explicit seeded generator so model
construction is reproducible.
"""

import numpy as np

from . import autodiff as ad
from .errors import ContractError


class Module:
    """Named tree of parameters and buffers with a train/eval flag."""

    def __init__(self):
        self._params = {}
        self._buffers = {}
        self._children = {}
        self.training = True

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self.__dict__.setdefault("_children", {})[name] = value
        super().__setattr__(name, value)

    def add_param(self, name, tensor):
        self._params[name] = tensor
        return tensor

    def add_buffer(self, name, array):
        self._buffers[name] = array
        return array

    def parameters(self):
        out = list(self._params.values())
        for child in self._children.values():
            out.extend(child.parameters())
        return out

    def named_state(self, prefix=""):
        """Flat name -> float32 ndarray map of parameters and buffers."""
        state = {}
        for name, p in self._params.items():
            state[prefix + name] = p.data
        for name, b in self._buffers.items():
            state[prefix + name] = b
        for cname, child in self._children.items():
            state.update(child.named_state(prefix + cname + "."))
        return state

    def load_state(self, state, prefix=""):
        for name, p in self._params.items():
            key = prefix + name
            if key not in state:
                raise ContractError(f"checkpoint missing parameter '{key}'")
            if state[key].shape != p.data.shape:
                raise ContractError(f"shape mismatch for '{key}'")
            p.data = state[key].astype(p.data.dtype, copy=True)
        for name in self._buffers:
            key = prefix + name
            if key not in state:
                raise ContractError(f"checkpoint missing buffer '{key}'")
            self._buffers[name] = state[key].astype(self._buffers[name].dtype, copy=True)
        for cname, child in self._children.items():
            child.load_state(state, prefix + cname + ".")

    def train(self, mode=True):
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def kaiming_uniform(rng, shape, fan_in, dtype=np.float32):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, pad=0, bias=True):
        super().__init__()
        self.stride = stride
        self.pad = pad
        self.weight = self.add_param(
            "weight", ad.parameter(kaiming_uniform(rng, (cout, cin, k, k), cin * k * k))
        )
        self.bias = None
        if bias:
            self.bias = self.add_param("bias", ad.parameter(np.zeros(cout, dtype=np.float32)))

    def __call__(self, x):
        out = ad.conv2d(x, self.weight, stride=self.stride, pad=self.pad)
        if self.bias is not None:
            b = ad.reshape(self.bias, (1, -1, 1, 1))
            out = ad.add(out, ad.broadcast_to(b, out.shape))
        return out


class Conv3d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, pad=0, bias=True):
        super().__init__()
        self.stride = stride
        self.pad = pad
        self.weight = self.add_param(
            "weight",
            ad.parameter(kaiming_uniform(rng, (cout, cin, k, k, k), cin * k**3)),
        )
        self.bias = None
        if bias:
            self.bias = self.add_param("bias", ad.parameter(np.zeros(cout, dtype=np.float32)))

    def __call__(self, x):
        out = ad.conv3d(x, self.weight, stride=self.stride, pad=self.pad)
        if self.bias is not None:
            b = ad.reshape(self.bias, (1, -1, 1, 1, 1))
            out = ad.add(out, ad.broadcast_to(b, out.shape))
        return out


class ConvTranspose3d(Module):
    """Stride-2 up-convolution (kernel 2, no padding doubles each spatial dim)."""

    def __init__(self, cin, cout, rng, k=2, stride=2, pad=0, bias=True):
        super().__init__()
        self.stride = stride
        self.pad = pad
        self.weight = self.add_param(
            "weight",
            ad.parameter(kaiming_uniform(rng, (cin, cout, k, k, k), cin * k**3)),
        )
        self.bias = None
        if bias:
            self.bias = self.add_param("bias", ad.parameter(np.zeros(cout, dtype=np.float32)))

    def __call__(self, x):
        out = ad.conv_transpose3d(x, self.weight, stride=self.stride, pad=self.pad)
        if self.bias is not None:
            b = ad.reshape(self.bias, (1, -1, 1, 1, 1))
            out = ad.add(out, ad.broadcast_to(b, out.shape))
        return out


class BatchNorm(Module):
    """Per-channel normalization over batch + spatial axes (channel axis 1).

    Training mode normalizes with batch statistics and blends them into the
    running buffers with momentum 0.9; eval mode uses the running buffers.
    """

    def __init__(self, channels, momentum=0.9, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.add_param("gamma", ad.parameter(np.ones(channels, dtype=np.float32)))
        self.beta = self.add_param("beta", ad.parameter(np.zeros(channels, dtype=np.float32)))
        self.add_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.add_buffer("running_var", np.ones(channels, dtype=np.float32))

    def __call__(self, x):
        ndim = len(x.shape)
        axes = (0,) + tuple(range(2, ndim))
        cshape = (1, x.shape[1]) + (1,) * (ndim - 2)
        if self.training:
            mu = ad.mean(x, axis=axes, keepdims=True)
            dev = ad.sub(x, ad.broadcast_to(mu, x.shape))
            var = ad.mean(ad.mul(dev, dev), axis=axes, keepdims=True)
            m = self.momentum
            self._buffers["running_mean"] = (
                m * self._buffers["running_mean"] + (1 - m) * mu.data.reshape(-1)
            ).astype(np.float32)
            self._buffers["running_var"] = (
                m * self._buffers["running_var"] + (1 - m) * var.data.reshape(-1)
            ).astype(np.float32)
            denom = ad.exp(ad.mul(ad.log(ad.add(var, self.eps)), -0.5))
            xn = ad.mul(dev, ad.broadcast_to(denom, x.shape))
        else:
            rm = self._buffers["running_mean"].reshape(cshape)
            rv = self._buffers["running_var"].reshape(cshape)
            scale = (1.0 / np.sqrt(rv + self.eps)).astype(np.float32)
            xn = ad.mul(
                ad.sub(x, ad.broadcast_to(ad.Tensor(rm), x.shape)),
                ad.broadcast_to(ad.Tensor(scale), x.shape),
            )
        g = ad.broadcast_to(ad.reshape(self.gamma, cshape), x.shape)
        b = ad.broadcast_to(ad.reshape(self.beta, cshape), x.shape)
        return ad.add(ad.mul(xn, g), b)


class Linear(Module):
    def __init__(self, cin, cout, rng, bias=True):
        super().__init__()
        self.weight = self.add_param(
            "weight", ad.parameter(kaiming_uniform(rng, (cin, cout), cin))
        )
        self.bias = None
        if bias:
            self.bias = self.add_param("bias", ad.parameter(np.zeros(cout, dtype=np.float32)))

    def __call__(self, x):
        out = ad.matmul(x, self.weight)
        if self.bias is not None:
            b = ad.reshape(self.bias, (1, -1))
            out = ad.add(out, ad.broadcast_to(b, out.shape))
        return out


class ParamSet:
    """Named parameter groups with immutable shapes after creation."""

    def __init__(self, seed):
        self.seed = seed
        self.groups = {}
        self._shapes = {}

    def register(self, name, params):
        if name in self.groups:
            raise ContractError(f"parameter group '{name}' already registered")
        self.groups[name] = list(params)
        self._shapes[name] = [p.data.shape for p in params]
        return self.groups[name]

    def __getitem__(self, name):
        return self.groups[name]

    def check_shapes(self):
        for name, params in self.groups.items():
            for p, s in zip(params, self._shapes[name]):
                if p.data.shape != s:
                    raise ContractError(f"parameter shape changed in group '{name}'")
        return True
