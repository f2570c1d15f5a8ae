"""Signed-distance generator MLP, adversarial discriminator, and the
differentiation machinery both need.

Differentiation here is specialized to this fixed architecture rather than a
general autodiff framework. Three sweeps cover everything training needs:

1. forward with per-layer caches,
2. a reverse sweep producing the gradient of the output with respect to the
   *input coordinates* (needed by the query projection),
3. a reverse sweep over sweep 2 itself, yielding parameter gradients of any
   loss that consumes both the value f(q) and the input gradient grad f(q).

Sweep 3 is the double-backprop path: losses seed it with (value_bar,
grad_bar) and it accumulates into ParamGradients. Hidden activations are a
centered softplus (log(1 + exp(beta*z)) - log 2)/beta with beta=100, which
is smooth (the second-order path through sweep 2 needs a nonzero second
derivative) and zero at the origin so the geometric start passes exactly
through -r there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericalError

GRAD_EPS = 1e-8
_LN2 = float(np.log(2.0))


_EXP_FLOOR = -87.0  # keeps exp() away from subnormals, which stall the FPU


def _exp_neg_abs(u: np.ndarray) -> np.ndarray:
    return np.exp(np.maximum(-np.abs(u), u.dtype.type(_EXP_FLOOR)))


def _sigmoid(u: np.ndarray) -> np.ndarray:
    # q = sigmoid(|u|); copysign folds it back to the requested branch
    e = _exp_neg_abs(u)
    q = 1.0 / (1.0 + e)
    return 0.5 + np.copysign(q - 0.5, u)


def _act_pair(z: np.ndarray, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Centered softplus activation and its derivative (the sigmoid), sharing
    one exponential per element."""
    beta = z.dtype.type(beta)
    u = beta * z
    e = _exp_neg_abs(u)
    q = 1.0 / (1.0 + e)
    p = 0.5 + np.copysign(q - 0.5, u)
    a = (np.maximum(u, 0) + np.log(1.0 + e) - z.dtype.type(_LN2)) / beta
    return a, p


def _softplus(z: np.ndarray, beta: float) -> np.ndarray:
    return _act_pair(z, beta)[0]


def _softplus_prime(z: np.ndarray, beta: float) -> np.ndarray:
    return _sigmoid(z.dtype.type(beta) * z)


def _second_from_prime(p: np.ndarray, beta: float) -> np.ndarray:
    return p.dtype.type(beta) * p * (1.0 - p)


@dataclass
class PositionalEncoding:
    """Sinusoidal input lift: [q, sin(2^0 pi q), cos(2^0 pi q), ...,
    sin(2^{L-1} pi q), cos(2^{L-1} pi q)], each applied per axis."""

    num_frequencies: int = 6
    include_input: bool = True

    def __post_init__(self):
        if self.num_frequencies < 0:
            raise InputError("num_frequencies must be >= 0")
        if self.num_frequencies == 0 and not self.include_input:
            raise InputError("encoding with no frequencies must include the input")

    @property
    def encoded_dim(self) -> int:
        return 3 * ((1 if self.include_input else 0) + 2 * self.num_frequencies)

    def encode(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x))
        parts = [x] if self.include_input else []
        for f in range(self.num_frequencies):
            w = x.dtype.type((2.0 ** f) * np.pi)
            parts.append(np.sin(w * x))
            parts.append(np.cos(w * x))
        return np.concatenate(parts, axis=1)

    def derivative_factors(self, x: np.ndarray) -> np.ndarray:
        """d(encoded column)/d(its own axis), laid out like encode()."""
        x = np.atleast_2d(np.asarray(x))
        parts = [np.ones_like(x)] if self.include_input else []
        for f in range(self.num_frequencies):
            w = x.dtype.type((2.0 ** f) * np.pi)
            parts.append(w * np.cos(w * x))
            parts.append(-w * np.sin(w * x))
        return np.concatenate(parts, axis=1)


def positional_encode(cfg: PositionalEncoding, q) -> np.ndarray:
    """Encode one point (or a batch) under ``cfg``."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim == 1:
        return cfg.encode(q[None, :])[0]
    return cfg.encode(q)


class SdfNetwork:
    """Fully connected coordinate network f: R^3 -> R.

    ``weights[i]`` has shape (out_i, in_i); hidden layers share one width and
    the input (encoded if an encoding is set) is re-concatenated at
    ``skip_layer``. Hidden activation is the centered softplus at ``beta``;
    the output layer is linear.
    """

    def __init__(self, weights, biases, skip_layer: int | None, beta: float = 100.0,
                 encoding: PositionalEncoding | None = None):
        self.weights = [np.ascontiguousarray(w) for w in weights]
        self.biases = [np.ascontiguousarray(b) for b in biases]
        self.skip_layer = skip_layer
        self.beta = float(beta)
        self.encoding = encoding
        self.dtype = self.weights[0].dtype
        if len(self.weights) != len(self.biases) or len(self.weights) < 2:
            raise InputError("network needs matching weights/biases for >= 2 layers")
        if self.weights[-1].shape[0] != 1:
            raise InputError("output layer must produce a single scalar")
        if skip_layer is not None and not 1 <= skip_layer < len(self.weights) - 1:
            raise InputError(f"skip_layer {skip_layer} out of range")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def hidden_width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def encoded_dim(self) -> int:
        return self.weights[0].shape[1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def astype(self, dtype) -> "SdfNetwork":
        return SdfNetwork([w.astype(dtype) for w in self.weights],
                          [b.astype(dtype) for b in self.biases],
                          self.skip_layer, self.beta, self.encoding)


@dataclass
class DualValue:
    """Batched network evaluation: values (n,) with input gradients (n, 3)."""

    value: np.ndarray
    input_gradient: np.ndarray


@dataclass
class ParamGradients:
    """Per-parameter accumulators mirroring a network's weights/biases."""

    weights: list
    biases: list

    @staticmethod
    def zeros_like(net) -> "ParamGradients":
        return ParamGradients([np.zeros_like(w) for w in net.weights],
                              [np.zeros_like(b) for b in net.biases])

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def init_geometric(seed: int, r: float = 0.5, hidden_layers: int = 8, width: int = 256,
                   skip_layer: int | None = 4, beta: float = 100.0,
                   encoding: PositionalEncoding | None = None,
                   dtype=np.float64) -> SdfNetwork:
    """Network initialized to approximate the signed distance of an r-sphere.

    Hidden weights ~ N(0, 2/fan_out), zero biases; output weights
    ~ N(sqrt(pi/fan_in), 1e-5) with bias -r. Encoded-input columns beyond the
    raw coordinates are zeroed at the first and skip layers so the start is a
    function of the raw point alone.
    """
    if not r > 0:
        raise InputError(f"init radius must be positive, got {r}")
    if encoding is not None and not encoding.include_input:
        raise InputError("geometric init requires the encoding to include the raw input")
    e = encoding.encoded_dim if encoding is not None else 3
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i in range(hidden_layers):
        fan_in = e if i == 0 else width
        if skip_layer is not None and i == skip_layer:
            fan_in = width + e
        w = rng.normal(0.0, np.sqrt(2.0) / np.sqrt(width), size=(width, fan_in))
        if encoding is not None and i == 0:
            w[:, 3:] = 0.0
        if encoding is not None and skip_layer is not None and i == skip_layer:
            w[:, width + 3:] = 0.0
        weights.append(w.astype(dtype))
        biases.append(np.zeros(width, dtype=dtype))
    w_out = rng.normal(np.sqrt(np.pi) / np.sqrt(width), 1e-5, size=(1, width))
    weights.append(w_out.astype(dtype))
    biases.append(np.array([-r], dtype=dtype))
    return SdfNetwork(weights, biases, skip_layer, beta, encoding)


class _ForwardCache:
    __slots__ = ("x", "e", "ins", "zs", "ps")

    def __init__(self, x, e, ins, zs, ps):
        self.x = x
        self.e = e
        self.ins = ins
        self.zs = zs
        self.ps = ps  # hidden-layer activation derivatives, reused by every sweep

    @property
    def values(self) -> np.ndarray:
        return self.zs[-1][:, 0]


class _GradCache:
    __slots__ = ("us", "cs", "g_enc", "dfactors")

    def __init__(self, us, cs, g_enc, dfactors):
        self.us = us
        self.cs = cs
        self.g_enc = g_enc
        self.dfactors = dfactors


def _check_inputs(net: SdfNetwork, qs) -> np.ndarray:
    x = np.atleast_2d(np.asarray(qs, dtype=net.dtype))
    if x.ndim != 2 or x.shape[1] != 3:
        raise InputError(f"query batch must have shape (n, 3), got {x.shape}")
    if not np.isfinite(x).all():
        raise InputError("query batch contains non-finite coordinates")
    return x


def _forward(net: SdfNetwork, x: np.ndarray) -> _ForwardCache:
    e = net.encoding.encode(x) if net.encoding is not None else x
    a = e
    ins, zs, ps = [], [], []
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inp = np.concatenate([a, e], axis=1) if i == net.skip_layer else a
        z = inp @ w.T + b
        ins.append(inp)
        zs.append(z)
        if i < last:
            a, p = _act_pair(z, net.beta)
            ps.append(p)
    return _ForwardCache(x, e, ins, zs, ps)


def _input_gradient(net: SdfNetwork, cache: _ForwardCache) -> tuple[np.ndarray, _GradCache]:
    n = cache.x.shape[0]
    last = net.n_layers - 1
    w_hidden = net.hidden_width
    us: list = [None] * net.n_layers
    cs: list = [None] * net.n_layers
    u = np.ones((n, 1), dtype=net.dtype)
    us[last] = u
    for i in range(last, 0, -1):
        c = u @ net.weights[i]
        cs[i] = c
        u = cache.ps[i - 1] * c[:, :w_hidden]
        us[i - 1] = u
    cs[0] = us[0] @ net.weights[0]
    g_enc = cs[0]
    if net.skip_layer is not None:
        g_enc = g_enc + cs[net.skip_layer][:, w_hidden:]
    if net.encoding is not None:
        dfactors = net.encoding.derivative_factors(cache.x)
        g = (g_enc * dfactors).reshape(n, -1, 3).sum(axis=1)
    else:
        dfactors = None
        g = g_enc
    return g, _GradCache(us, cs, g_enc, dfactors)


def _double_backprop(net: SdfNetwork, cache: _ForwardCache, gcache: _GradCache | None,
                     value_bar: np.ndarray | None, grad_bar: np.ndarray | None) -> ParamGradients:
    """Parameter gradients of sum_j [value_bar_j * f(q_j) + grad_bar_j . grad f(q_j)].

    The grad_bar part reverses the input-gradient sweep (accumulating weight
    terms and second-order seeds on the pre-activations), then a standard
    reverse pass carries both parts down through the forward graph.
    """
    n = cache.x.shape[0]
    last = net.n_layers - 1
    w_hidden = net.hidden_width
    grads = ParamGradients.zeros_like(net)
    z2bar: list = [None] * last

    if grad_bar is not None:
        if gcache is None:
            raise InputError("grad_bar given without an input-gradient cache")
        if net.encoding is not None:
            blocks = net.encoded_dim // 3
            gbar_enc = np.tile(grad_bar, (1, blocks)) * gcache.dfactors
        else:
            gbar_enc = np.asarray(grad_bar, dtype=net.dtype)
        cbar = gbar_enc
        grads.weights[0] += gcache.us[0].T @ cbar
        ubar = cbar @ net.weights[0].T
        for i in range(1, net.n_layers):
            sp1 = cache.ps[i - 1]
            z2bar[i - 1] = _second_from_prime(sp1, net.beta) \
                * gcache.cs[i][:, :w_hidden] * ubar
            a_part = sp1 * ubar
            if i == net.skip_layer:
                cbar = np.concatenate([a_part, gbar_enc], axis=1)
            else:
                cbar = a_part
            grads.weights[i] += gcache.us[i].T @ cbar
            if i < last:
                ubar = cbar @ net.weights[i].T

    if value_bar is not None:
        d = np.asarray(value_bar, dtype=net.dtype).reshape(n, 1)
    else:
        d = np.zeros((n, 1), dtype=net.dtype)
    abar = None
    for i in range(last, -1, -1):
        if i < last:
            d = cache.ps[i] * abar
            if z2bar[i] is not None:
                d = d + z2bar[i]
        grads.weights[i] += d.T @ cache.ins[i]
        grads.biases[i] += d.sum(axis=0)
        if i > 0:
            abar = (d @ net.weights[i])[:, :w_hidden]
    return grads


def forward_batch(net: SdfNetwork, qs) -> np.ndarray:
    """Evaluate f on a batch of points; identical to per-point evaluation."""
    x = _check_inputs(net, qs)
    return _forward(net, x).values.copy()


def forward_with_input_gradient(net: SdfNetwork, qs) -> DualValue:
    """Evaluate f and its exact gradient with respect to the raw coordinates."""
    x = _check_inputs(net, qs)
    cache = _forward(net, x)
    g, _ = _input_gradient(net, cache)
    return DualValue(cache.values.copy(), g)


def param_gradients(net: SdfNetwork, qs, loss_vjp) -> tuple[float, ParamGradients]:
    """Parameter gradients of a scalar loss built from f(q) and grad f(q).

    ``loss_vjp(values, grads) -> (loss, value_bar, grad_bar)`` supplies the
    loss and its partials with respect to the network outputs; either bar may
    be None when the loss does not use that output.
    """
    x = _check_inputs(net, qs)
    cache = _forward(net, x)
    g, gcache = _input_gradient(net, cache)
    loss, value_bar, grad_bar = loss_vjp(cache.values.copy(), g)
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite loss {loss!r}; aborting step", stage="train")
    return float(loss), _double_backprop(net, cache, gcache, value_bar, grad_bar)


class Discriminator:
    """Small fully connected classifier over SDF scalars.

    Leaky-rectifier hidden layers (slope 0.2) and a sigmoid output; consumes
    each scalar independently when ``input_dim`` is 1, or a whole batch
    vector when constructed with ``input_dim`` equal to the batch size.
    """

    def __init__(self, weights, biases, slope: float = 0.2):
        self.weights = [np.ascontiguousarray(w) for w in weights]
        self.biases = [np.ascontiguousarray(b) for b in biases]
        self.slope = float(slope)
        self.dtype = self.weights[0].dtype

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def init_discriminator(seed: int, input_dim: int = 1, width: int = 64,
                       n_layers: int = 4, slope: float = 0.2, dtype=np.float64) -> Discriminator:
    """He-style start; the sigmoid output begins near 0.5 (uninformative)."""
    rng = np.random.default_rng(seed)
    dims = [input_dim] + [width] * (n_layers - 1) + [1]
    weights, biases = [], []
    for i in range(n_layers):
        std = np.sqrt(2.0 / dims[i]) if i < n_layers - 1 else 1.0 / np.sqrt(dims[i])
        weights.append(rng.normal(0.0, std, size=(dims[i + 1], dims[i])).astype(dtype))
        biases.append(np.zeros(dims[i + 1], dtype=dtype))
    return Discriminator(weights, biases, slope)


class _DiscCache:
    __slots__ = ("x", "ins", "zs", "y")

    def __init__(self, x, ins, zs, y):
        self.x = x
        self.ins = ins
        self.zs = zs
        self.y = y


def _leaky(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0, z, z.dtype.type(slope) * z)


def _leaky_prime(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0, z.dtype.type(1.0), z.dtype.type(slope))


def _disc_forward(d: Discriminator, values: np.ndarray) -> _DiscCache:
    values = np.asarray(values, dtype=d.dtype)
    if d.input_dim == 1:
        x = values.reshape(-1, 1)
    else:
        if values.size != d.input_dim:
            raise InputError(
                f"batch-input discriminator expects {d.input_dim} values, got {values.size}"
            )
        x = values.reshape(1, -1)
    a = x
    ins, zs = [], []
    for i, (w, b) in enumerate(zip(d.weights, d.biases)):
        ins.append(a)
        z = a @ w.T + b
        zs.append(z)
        if i < d.n_layers - 1:
            a = _leaky(z, d.slope)
    y = _sigmoid(zs[-1][:, 0])
    return _DiscCache(x, ins, zs, y)


def discriminator_forward(d: Discriminator, sdf_values) -> np.ndarray:
    """Confidence in (0, 1) per input (per scalar, or per batch vector)."""
    y = _disc_forward(d, np.asarray(sdf_values)).y
    tiny = np.finfo(d.dtype).eps
    return np.clip(y, tiny, 1.0 - tiny)


def _disc_vjp(d: Discriminator, cache: _DiscCache, y_bar: np.ndarray) -> tuple[ParamGradients, np.ndarray]:
    """Parameter gradients and input gradient of sum_j y_bar_j * D_j."""
    grads = ParamGradients.zeros_like(d)
    y = cache.y
    cur = (np.asarray(y_bar, dtype=d.dtype) * y * (1.0 - y))[:, None]
    for i in range(d.n_layers - 1, -1, -1):
        grads.weights[i] += cur.T @ cache.ins[i]
        grads.biases[i] += cur.sum(axis=0)
        inbar = cur @ d.weights[i]
        if i > 0:
            cur = _leaky_prime(cache.zs[i - 1], d.slope) * inbar
    if d.input_dim == 1:
        return grads, inbar[:, 0]
    return grads, inbar[0]
