"""Small float64 dense-network library with Adam and gradient checking.

Networks are lists of dense layers ``y = act(x @ W + b)`` evaluated on
row-major batches. Everything is deterministic given the seeds involved.
"""
import io
import struct
from dataclasses import dataclass

import numpy as np

from imit2d.errors import DimensionMismatch, NonFiniteGradient

ACTIVATIONS = ("relu", "linear", "softmax")
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}
MAGIC = b"IMIT2DNN"
VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    # "constant" or "cosine" (decays to min_lr_ratio * learning_rate by the last epoch)
    lr_schedule: str = "constant"
    min_lr_ratio: float = 0.01

    def __post_init__(self):
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine'")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def lr_at(self, epoch):
        if self.lr_schedule == "constant" or self.epochs == 1:
            return self.learning_rate
        frac = epoch / (self.epochs - 1)
        lo = self.min_lr_ratio * self.learning_rate
        return lo + 0.5 * (self.learning_rate - lo) * (1.0 + np.cos(np.pi * frac))


# Appendix-style defaults per policy family.
DIFFUSION_DEFAULTS = dict(learning_rate=2e-5, weight_decay=0.0, epochs=1000)
FCR_DEFAULTS = dict(learning_rate=1e-3, weight_decay=0.0, epochs=1000)
AE_FCR_DEFAULTS = dict(learning_rate=1e-3, weight_decay=0.75, epochs=500)
PREDICTION_HORIZON = 18
HISTORY_LENGTH = 32


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "linear"

    @property
    def n_in(self):
        return self.W.shape[0]

    @property
    def n_out(self):
        return self.W.shape[1]


class DenseNet:
    def __init__(self, layers, rng_seed=0):
        for a, b in zip(layers, layers[1:]):
            if a.n_out != b.n_in:
                raise DimensionMismatch(f"layer sizes {a.n_out} and {b.n_in} do not chain")
        for layer in layers:
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
        for layer in layers[:-1]:
            if layer.activation == "softmax":
                raise ValueError("softmax is only allowed on the output layer")
        self.layers = list(layers)
        self.rng_seed = rng_seed

    @classmethod
    def build(cls, sizes, hidden="relu", output="linear", seed=0):
        """Xavier-uniform initialised MLP with layer widths ``sizes``."""
        rng = np.random.default_rng(seed)
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            limit = np.sqrt(6.0 / (n_in + n_out))
            W = rng.uniform(-limit, limit, size=(n_in, n_out))
            act = output if i == len(sizes) - 2 else hidden
            layers.append(Layer(W, np.zeros(n_out), act))
        return cls(layers, rng_seed=seed)

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def n_out(self):
        return self.layers[-1].n_out

    @property
    def sizes(self):
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    def params(self):
        out = []
        for layer in self.layers:
            out.extend([layer.W, layer.b])
        return out

    def n_params(self):
        return sum(p.size for p in self.params())

    def copy(self):
        return DenseNet([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers], self.rng_seed)

    def __call__(self, x):
        return forward(self, x)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _activate(z, act):
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "softmax":
        return _softmax(z)
    return z


def _as_batch(net, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.n_in:
        raise DimensionMismatch(f"expected input width {net.n_in}, got shape {x.shape}")
    return X, single


def forward_cached(net, x):
    """Forward pass returning the output and the per-layer activations."""
    X, single = _as_batch(net, x)
    acts = [X]
    for layer in net.layers:
        X = _activate(X @ layer.W + layer.b, layer.activation)
        acts.append(X)
    return (X[0] if single else X), acts


def forward(net, x):
    return forward_cached(net, x)[0]


def backward(net, x, grad_out, cache=None):
    """Reverse-mode gradients of ``sum(grad_out * net(x))``.

    Returns ``(param_grads, grad_in)`` with param_grads ordered like
    ``net.params()``.
    """
    if cache is None:
        _, cache = forward_cached(net, x)
    G = np.asarray(grad_out, dtype=float)
    single = G.ndim == 1
    if single:
        G = G[None, :]
    if G.shape != cache[-1].shape:
        raise DimensionMismatch(f"grad_out shape {np.shape(grad_out)} does not match output {cache[-1].shape}")
    grads = [None] * (2 * len(net.layers))
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        out = cache[k + 1]
        if layer.activation == "relu":
            G = G * (out > 0.0)
        elif layer.activation == "softmax":
            G = out * (G - (G * out).sum(axis=1, keepdims=True))
        grads[2 * k] = cache[k].T @ G
        grads[2 * k + 1] = G.sum(axis=0)
        G = G @ layer.W.T
    return grads, (G[0] if single else G)


# -- losses: each returns (loss, d loss / d prediction) -------------------------

def squared_error_loss(pred, target):
    """Batch mean of per-sample squared Euclidean error."""
    pred = np.atleast_2d(pred)
    diff = pred - np.atleast_2d(target)
    n = pred.shape[0]
    return float((diff**2).sum() / n), 2.0 * diff / n


def binary_cross_entropy(p_hit, y, eps=1e-12):
    """-[y log p + (1 - y) log(1 - p)] per sample, elementwise."""
    p = np.clip(np.asarray(p_hit, dtype=float), eps, 1.0 - eps)
    y = np.asarray(y, dtype=float)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def softmax_bce_loss(probs, y):
    """Binary cross-entropy applied to the hit-class column of a 2-way softmax."""
    probs = np.atleast_2d(probs)
    y = np.asarray(y, dtype=float).reshape(-1)
    n = probs.shape[0]
    p = np.clip(probs[:, 1], 1e-12, 1.0 - 1e-12)
    loss = float(binary_cross_entropy(p, y).mean())
    grad = np.zeros_like(probs)
    grad[:, 1] = (-y / p + (1.0 - y) / (1.0 - p)) / n
    return loss, grad


# -- optimiser ------------------------------------------------------------------

class Adam:
    """Adam with bias correction and decoupled weight decay on weights only."""

    def __init__(self, cfg, beta1=0.9, beta2=0.999, eps=1e-8):
        self.cfg = cfg
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0
        self.lr = cfg.learning_rate

    def step(self, net, grads):
        self.t += 1
        return adam_step(net, grads, self.cfg, self.t, self, self.lr)


def adam_step(net, grads, cfg, t, state=None, lr=None):
    """One in-place Adam update at step index ``t >= 1``; returns ``net``."""
    if t < 1:
        raise ValueError("step index must be >= 1")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient contains NaN or inf")
    if state is None:
        state = Adam(cfg)
    params = net.params()
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    lr = cfg.learning_rate if lr is None else lr
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    shrink = 1.0 - lr * cfg.weight_decay
    for k, (p, g) in enumerate(zip(params, grads)):
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if k % 2 == 0 and cfg.weight_decay:
            p *= shrink
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net


def fit(net, n_samples, make_batch, loss_fn, cfg, on_epoch=None):
    """Minibatch Adam training loop.

    ``make_batch(indices, rng)`` returns ``(inputs, targets)``; ``loss_fn``
    returns ``(loss, grad_wrt_output)``. Returns per-epoch mean losses.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg)
    curve = []
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        order = rng.permutation(n_samples)
        total = 0.0
        for start in range(0, n_samples, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            X, Y = make_batch(idx, rng)
            out, cache = forward_cached(net, X)
            loss, g = loss_fn(out, Y)
            grads, _ = backward(net, X, g, cache)
            opt.step(net, grads)
            total += loss * len(idx)
        curve.append(total / n_samples)
        if on_epoch is not None:
            on_epoch(epoch, curve[-1])
    return curve


# -- verification -----------------------------------------------------------------

def _relu_pattern(net, acts):
    return [acts[k + 1] > 0.0 for k, layer in enumerate(net.layers) if layer.activation == "relu"]


def _same_pattern(a, b):
    return all(np.array_equal(u, v) for u, v in zip(a, b))


@dataclass
class GradientCheck:
    worst: float
    checked: int
    kinks: int


def gradient_check_report(net, x, loss_fn, target, h=1e-5, floor=1e-6, max_per_param=None, seed=0):
    """Relative error between backprop and central differences, with ReLU kinks accounted for.

    Every parameter entry is probed unless ``max_per_param`` caps the number of
    seeded random entries checked per weight or bias array. A probe whose +-h
    evaluations switch any ReLU on or off straddles a non-differentiable point;
    it is counted in ``kinks`` and excluded from ``worst``. The denominator is
    floored where round-off in the differenced loss alone (about eps |L| / h)
    would reach 1e-4 relative, so vanishing gradients are compared in absolute terms.
    """
    out, cache = forward_cached(net, x)
    base = _relu_pattern(net, cache)
    loss, g = loss_fn(out, target)
    floor = max(floor, np.finfo(float).eps * abs(loss) / h / 1e-4)
    grads, _ = backward(net, x, g, cache)
    rng = np.random.default_rng(seed)
    worst, checked, kinks = 0.0, 0, 0
    for p, gp in zip(net.params(), grads):
        flat = p.reshape(-1)
        gflat = gp.reshape(-1)
        probe = range(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            probe = rng.choice(flat.size, max_per_param, replace=False)
        for i in probe:
            old = flat[i]
            flat[i] = old + h
            op, ap = forward_cached(net, x)
            flat[i] = old - h
            om, am = forward_cached(net, x)
            flat[i] = old
            if not (_same_pattern(base, _relu_pattern(net, ap)) and _same_pattern(base, _relu_pattern(net, am))):
                kinks += 1
                continue
            num = (loss_fn(op, target)[0] - loss_fn(om, target)[0]) / (2.0 * h)
            worst = max(worst, abs(num - gflat[i]) / max(abs(num), abs(gflat[i]), floor))
            checked += 1
    return GradientCheck(worst, checked, kinks)


def gradient_check(net, x, loss_fn, target, h=1e-5, floor=1e-6, max_per_param=None, seed=0):
    """Max relative error between backprop and central differences (see ``gradient_check_report``)."""
    return gradient_check_report(net, x, loss_fn, target, h, floor, max_per_param, seed).worst


# -- checkpoints --------------------------------------------------------------------

def write_net(net, fp):
    fp.write(MAGIC)
    fp.write(struct.pack("<HI", VERSION, len(net.layers)))
    for layer in net.layers:
        fp.write(struct.pack("<IIB", layer.n_in, layer.n_out, _ACT_CODE[layer.activation]))
    for layer in net.layers:
        fp.write(np.ascontiguousarray(layer.W, dtype="<f8").tobytes())
        fp.write(np.ascontiguousarray(layer.b, dtype="<f8").tobytes())


def read_net(fp):
    if fp.read(len(MAGIC)) != MAGIC:
        raise ValueError("not a network checkpoint")
    version, n_layers = struct.unpack("<HI", fp.read(6))
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    dims = [struct.unpack("<IIB", fp.read(9)) for _ in range(n_layers)]
    layers = []
    for n_in, n_out, code in dims:
        W = np.frombuffer(fp.read(8 * n_in * n_out), dtype="<f8").reshape(n_in, n_out).astype(float)
        b = np.frombuffer(fp.read(8 * n_out), dtype="<f8").astype(float)
        layers.append(Layer(W, b, ACTIVATIONS[code]))
    return DenseNet(layers)


def net_to_bytes(net):
    buf = io.BytesIO()
    write_net(net, buf)
    return buf.getvalue()


def net_from_bytes(data):
    return read_net(io.BytesIO(data))
