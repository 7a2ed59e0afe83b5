"""Fully connected networks with exact first- and second-order derivatives.

Inputs are laid out column-wise: ``x`` has shape ``(in_dim, batch)``. Hidden
layers apply the activation, the output layer is affine.

Besides the usual forward/backward pair, the consistency losses need the
input Jacobian-vector product ``J(x) v`` and gradients *of* that product, so
:func:`forward_jvp` propagates a primal and a tangent together and
:func:`backward_jvp` runs reverse mode through both.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .exceptions import OptimizerError


class Activation(str, Enum):
    TANH = "tanh"
    ELU = "elu"


def _act(kind, h):
    """Activation value and its first two derivatives at ``h``."""
    if kind is Activation.TANH:
        t = np.tanh(h)
        d1 = 1.0 - t * t
        return t, d1, -2.0 * t * d1
    pos = h > 0
    e = np.exp(np.minimum(h, 0.0))
    val = np.where(pos, h, e - 1.0)
    d1 = np.where(pos, 1.0, e)
    # f'' jumps at 0; the left limit exp(0) = 1 is used there.
    d2 = np.where(pos, 0.0, e)
    return val, d1, d2


@dataclass
class Mlp:
    """A dense network ``layer_sizes[0] -> ... -> layer_sizes[-1]``."""

    layer_sizes: list
    weights: list
    biases: list
    activation: Activation = Activation.TANH

    def __post_init__(self):
        self.activation = Activation(self.activation)
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("need one weight matrix and bias per layer transition")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if w.shape != shape or b.shape != (shape[0],):
                raise ValueError(f"layer {i}: expected W{shape}, b({shape[0]},), "
                                 f"got W{w.shape}, b{b.shape}")

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    @property
    def params(self):
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def param_names(self):
        names = []
        for i in range(len(self.weights)):
            names += [f"W{i}", f"b{i}"]
        return names

    @property
    def n_params(self):
        return sum(p.size for p in self.params)

    def copy(self):
        return Mlp(list(self.layer_sizes), [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.activation)

    def __call__(self, x):
        return forward(self, x)


def init(layer_sizes, activation="tanh", seed=None):
    """Glorot-uniform weights, zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ValueError("layer_sizes needs at least an input and an output size")
    if min(sizes) < 1:
        raise ValueError(f"layer sizes must be >= 1, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(sizes, weights, biases, activation)


def _check_input(net, x, name="x"):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, np.newaxis]
    if x.ndim != 2 or x.shape[0] != net.in_dim:
        raise ValueError(f"{name} must have shape ({net.in_dim}, batch), got {x.shape}")
    return x


def forward(net, x):
    """Network output for column inputs ``x``."""
    a = _check_input(net, x)
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = w @ a + b[:, None]
        a = h if i == last else _act(net.activation, h)[0]
    return a


@dataclass
class JvpCache:
    """Intermediate values of :func:`forward_jvp` needed by :func:`backward_jvp`."""

    acts: list = field(default_factory=list)
    tangents: list = field(default_factory=list)
    tangent_pre: list = field(default_factory=list)
    d1: list = field(default_factory=list)
    d2: list = field(default_factory=list)


def forward_jvp(net, x, v):
    """Output ``y = net(x)`` and tangent ``dy = J(x) v`` with a backward cache."""
    a = _check_input(net, x)
    t = _check_input(net, v, "v")
    if a.shape != t.shape:
        raise ValueError(f"x and v shapes differ: {a.shape} vs {t.shape}")
    cache = JvpCache()
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        cache.acts.append(a)
        cache.tangents.append(t)
        h = w @ a + b[:, None]
        th = w @ t
        if i == last:
            a, t = h, th
        else:
            a, d1, d2 = _act(net.activation, h)
            cache.d1.append(d1)
            cache.d2.append(d2)
            cache.tangent_pre.append(th)
            t = d1 * th
    return a, t, cache


def jvp_input(net, x, v):
    """Directional derivative of the network at ``x`` along ``v``."""
    return forward_jvp(net, x, v)[1]


def backward_jvp(net, cache, grad_y=None, grad_dy=None):
    """Reverse mode through :func:`forward_jvp`.

    Parameters
    ----------
    grad_y, grad_dy : ndarray or None
        Upstream gradients for the output and for the tangent output.

    Returns
    -------
    grads : list of ndarray
        Parameter gradients in :attr:`Mlp.params` order.
    grad_x, grad_v : ndarray
    """
    batch = cache.acts[0].shape[1]
    shape = (net.out_dim, batch)
    ga = np.zeros(shape) if grad_y is None else np.asarray(grad_y, dtype=float)
    gt = np.zeros(shape) if grad_dy is None else np.asarray(grad_dy, dtype=float)
    if ga.shape != shape or gt.shape != shape:
        raise ValueError(f"upstream gradients must have shape {shape}")
    n_layers = len(net.weights)
    grads = [None] * (2 * n_layers)
    for i in range(n_layers - 1, -1, -1):
        if i == n_layers - 1:
            gh, gth = ga, gt
        else:
            d1, d2 = cache.d1[i], cache.d2[i]
            gth = d1 * gt
            gh = d1 * ga + d2 * cache.tangent_pre[i] * gt
        w = net.weights[i]
        grads[2 * i] = gh @ cache.acts[i].T + gth @ cache.tangents[i].T
        grads[2 * i + 1] = gh.sum(axis=1)
        ga = w.T @ gh
        gt = w.T @ gth
    return grads, ga, gt


def backward(net, x, upstream):
    """Gradients of ``sum(upstream * net(x))`` w.r.t. parameters and ``x``."""
    x = _check_input(net, x)
    _, _, cache = forward_jvp(net, x, np.zeros_like(x))
    grads, gx, _ = backward_jvp(net, cache, grad_y=upstream)
    return grads, gx


def backward_through_jvp(net, x, v, upstream):
    """Gradients of ``sum(upstream * J(x) v)`` w.r.t. parameters, ``x`` and ``v``."""
    _, _, cache = forward_jvp(net, x, v)
    return backward_jvp(net, cache, grad_dy=upstream)


@dataclass
class AdamState:
    """Bias-corrected ADAM moments for a list of parameter arrays."""

    m: list
    v: list
    step: int = 0
    eta: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, eta=1e-3, **kwargs):
        return cls([np.zeros_like(p) for p in params],
                   [np.zeros_like(p) for p in params], 0, eta, **kwargs)


def adam_step(state, params, grads, names=None):
    """One ADAM update, applied in place to ``params`` and ``state``.

    Raises
    ------
    OptimizerError
        If any gradient has a non-finite entry; nothing is updated then.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state must have matching lengths")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            name = names[i] if names is not None else f"#{i}"
            raise OptimizerError(f"non-finite gradient in tensor {name}", tensor=name)
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.eta * (m / c1) / (np.sqrt(v / c2) + state.eps)
    for i, p in enumerate(params):
        if not np.all(np.isfinite(p)):
            name = names[i] if names is not None else f"#{i}"
            raise OptimizerError(f"update left non-finite entries in tensor {name}", tensor=name)
    return params, state
