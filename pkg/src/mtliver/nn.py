"""Network building blocks, parameter bookkeeping and the Adam optimizer."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor


class ParameterSet:
    """Named trainable tensors with deterministic (lexicographic) iteration."""

    def __init__(self):
        self._params = {}

    def add(self, name, array):
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(array, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return sorted(self._params)

    def items(self):
        for name in sorted(self._params):
            yield name, self._params[name]

    def zero_grads(self):
        for p in self._params.values():
            p.grad = np.zeros_like(p.data)

    def num_values(self):
        return sum(p.data.size for p in self._params.values())


class AdamState:
    """Per-parameter first/second moments plus the shared step count."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8, lr=1e-4):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.lr = lr
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}


class Adam:
    """Adam with bias correction; updates parameters in place."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.state = AdamState(params, beta1, beta2, eps, lr)

    def zero_grad(self):
        self.params.zero_grads()

    def step(self):
        s = self.state
        s.t += 1
        bc1 = 1.0 - s.beta1 ** s.t
        bc2 = 1.0 - s.beta2 ** s.t
        for name, p in self.params.items():
            if p.grad is None:
                raise ContractError(f"missing gradient for parameter {name!r}")
            g = p.grad
            m = s.m[name]
            v = s.v[name]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * (g * g)
            p.data -= s.lr * (m / bc1) / (np.sqrt(v / bc2) + s.eps)


def he_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class BatchNorm:
    """Learned scale/shift with running statistics (momentum 0.1)."""

    def __init__(self, ps, prefix, channels):
        self.gamma = ps.add(f"{prefix}.gamma", np.ones(channels))
        self.beta = ps.add(f"{prefix}.beta", np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def __call__(self, x, training, update_running=None):
        return T.batchnorm2d(x, self.gamma, self.beta,
                             self.running_mean, self.running_var, training,
                             update_running=update_running)

    def buffers(self, prefix):
        return [(f"{prefix}.running_mean", self.running_mean),
                (f"{prefix}.running_var", self.running_var)]


class ConvBlock:
    """3x3 conv + batch norm + ReLU + 2x2 max pool; halves H and W."""

    def __init__(self, ps, prefix, c_in, c_out, rng):
        self.w = ps.add(f"{prefix}.w", he_uniform(rng, (c_out, c_in, 3, 3), c_in * 9))
        self.b = ps.add(f"{prefix}.b", np.zeros(c_out))
        self.bn = BatchNorm(ps, f"{prefix}.bn", c_out)
        self.prefix = prefix

    def __call__(self, x, training, update_running=None):
        h, w = x.data.shape[1:]
        if h % 2 or w % 2:
            raise ShapeError(f"conv block needs even extents, got {h}x{w}")
        y = T.conv2d(x, self.w, self.b)
        y = self.bn(y, training, update_running)
        return T.maxpool2d(T.relu(y))


class DeconvBlock:
    """4x4 stride-2 transposed conv + batch norm + ReLU; doubles H and W."""

    def __init__(self, ps, prefix, c_in, c_out, rng):
        self.w = ps.add(f"{prefix}.w", he_uniform(rng, (c_in, c_out, 4, 4), c_in * 16))
        self.b = ps.add(f"{prefix}.b", np.zeros(c_out))
        self.bn = BatchNorm(ps, f"{prefix}.bn", c_out)
        self.prefix = prefix

    def __call__(self, x, training, update_running=None):
        y = T.conv_transpose2d(x, self.w, self.b)
        return T.relu(self.bn(y, training, update_running))


class Linear:
    """Affine map out = W x + b for a rank-1 input (or rows of a rank-2 one)."""

    def __init__(self, ps, prefix, d_in, d_out, rng, bias_init=0.0,
                 weight_scale=1.0):
        self.w = ps.add(f"{prefix}.w",
                        weight_scale * he_uniform(rng, (d_out, d_in), d_in))
        self.b = ps.add(f"{prefix}.b", np.full(d_out, float(bias_init)))

    def __call__(self, x):
        if x.data.ndim == 1:
            d = x.data.shape[0]
            if d != self.w.data.shape[1]:
                raise ShapeError(
                    f"linear expects input of size {self.w.data.shape[1]}, got {d}")
            y = T.matmul(T.reshape(x, (1, d)), T.transpose2d(self.w))
            return T.reshape(y + self.b, (self.w.data.shape[0],))
        if x.data.shape[1] != self.w.data.shape[1]:
            raise ShapeError(
                f"linear expects rows of size {self.w.data.shape[1]}, got {x.data.shape[1]}")
        return T.matmul(x, T.transpose2d(self.w)) + self.b


def positional_encoding(n_tokens, dim):
    """Deterministic sinusoidal encoding; row p holds interleaved
    sin/cos of p scaled by 10000^(2i/dim)."""
    if dim % 2:
        raise ConfigError(f"positional encoding dimension must be even, got {dim}")
    pos = np.arange(n_tokens, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    pe = np.empty((n_tokens, dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


class TransformerBlock:
    """Multi-head attention and feed-forward sublayers with pre-layer-norm
    residual connections: the residual stream is never normalized, so token
    content (and its mean) survives to the output."""

    def __init__(self, ps, prefix, dim, heads=1, d_k=None, ff_hidden=None, rng=None):
        if d_k is None:
            if dim % heads:
                raise ConfigError(f"token dim {dim} not divisible by {heads} heads")
            d_k = dim // heads
        self.dim = dim
        self.heads = heads
        self.d_k = d_k
        ff_hidden = ff_hidden or 4 * dim
        proj = heads * d_k
        self.wq = ps.add(f"{prefix}.wq", he_uniform(rng, (proj, dim), dim))
        self.wk = ps.add(f"{prefix}.wk", he_uniform(rng, (proj, dim), dim))
        self.wv = ps.add(f"{prefix}.wv", he_uniform(rng, (proj, dim), dim))
        self.wo = ps.add(f"{prefix}.wo", he_uniform(rng, (dim, proj), proj))
        self.bo = ps.add(f"{prefix}.bo", np.zeros(dim))
        self.ln1_g = ps.add(f"{prefix}.ln1.gamma", np.ones(dim))
        self.ln1_b = ps.add(f"{prefix}.ln1.beta", np.zeros(dim))
        self.w1 = ps.add(f"{prefix}.ff1.w", he_uniform(rng, (ff_hidden, dim), dim))
        self.b1 = ps.add(f"{prefix}.ff1.b", np.zeros(ff_hidden))
        self.w2 = ps.add(f"{prefix}.ff2.w", he_uniform(rng, (dim, ff_hidden), ff_hidden))
        self.b2 = ps.add(f"{prefix}.ff2.b", np.zeros(dim))
        self.ln2_g = ps.add(f"{prefix}.ln2.gamma", np.ones(dim))
        self.ln2_b = ps.add(f"{prefix}.ln2.beta", np.zeros(dim))

    def attention(self, tokens):
        """Returns (attended tokens, list of per-head attention matrices)."""
        q = T.matmul(tokens, T.transpose2d(self.wq))
        k = T.matmul(tokens, T.transpose2d(self.wk))
        v = T.matmul(tokens, T.transpose2d(self.wv))
        scale = 1.0 / math.sqrt(self.d_k)
        outs = []
        attns = []
        for h in range(self.heads):
            qh = T.narrow(q, 1, h * self.d_k, self.d_k)
            kh = T.narrow(k, 1, h * self.d_k, self.d_k)
            vh = T.narrow(v, 1, h * self.d_k, self.d_k)
            a = T.softmax(T.matmul(qh, T.transpose2d(kh)) * scale, axis=-1)
            attns.append(a)
            outs.append(T.matmul(a, vh))
        merged = outs[0] if len(outs) == 1 else T.concat(outs, axis=1)
        return T.matmul(merged, T.transpose2d(self.wo)) + self.bo, attns

    def __call__(self, tokens, return_attn=False):
        att, attns = self.attention(T.layernorm(tokens, self.ln1_g, self.ln1_b))
        x = tokens + att
        h = T.layernorm(x, self.ln2_g, self.ln2_b)
        f = T.matmul(T.relu(T.matmul(h, T.transpose2d(self.w1)) + self.b1),
                     T.transpose2d(self.w2)) + self.b2
        out = x + f
        if return_attn:
            return out, attns
        return out
