"""Small from-scratch neural network substrate (numpy).

Every trainable model in the toolkit follows the same informal protocol:

* ``params``: list of float arrays, updated in place by the optimizer

Networks are built in float64; the trainer may run them in float32 (see
``cast_network``) and casts them back before returning.
* ``forward(X) -> (logits, cache)`` with logits of shape (batch, tasks)
* ``backward(cache, dlogits) -> grads`` aligned with ``params``

The output sigmoid is folded into the loss so that the gradient with respect
to the logits is simply ``(p - y) / (batch * tasks)``.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidArgument, TrainingDiverged

ACTIVATIONS = ("relu", "sigmoid", "identity", "softmax", "sparse_softmax")
BCE_EPS = 1e-7


def glorot_init(n_in: int, n_out: int, seed=None) -> np.ndarray:
    """Uniform on [-L, L] with L = sqrt(6 / (n_in + n_out)).

    ``seed`` may be an int or an existing ``numpy.random.Generator``.
    """
    if n_in < 1 or n_out < 1:
        raise InvalidArgument("layer sizes must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


def floating(a):
    """``a`` as an array, keeping float32/float64 and promoting anything else to float64."""
    a = np.asarray(a)
    return a if a.dtype.kind == "f" else a.astype(np.float64)


def cast_network(net, dtype):
    """Re-type every floating array held by ``net`` (layers and lists included) in place."""
    def conv(v):
        if isinstance(v, np.ndarray):
            return v.astype(dtype) if v.dtype.kind == "f" else v
        if isinstance(v, (list, tuple)):
            return type(v)(conv(x) for x in v)
        if hasattr(v, "__dict__") and not isinstance(v, type):
            cast_network(v, dtype)
        return v

    for name, value in vars(net).items():
        setattr(net, name, conv(value))
    return net


def sigmoid(z):
    z = floating(z)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    z = floating(z)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def sparse_softmax(w, tau: float = 1e-4):
    """Softmax with every entry below ``tau`` set to exactly zero, not renormalised."""
    s = softmax(w)
    return np.where(s < tau, 0.0, s)


def bce_loss(predictions, labels, eps: float = BCE_EPS) -> float:
    p = np.clip(np.asarray(predictions, dtype=np.float64), eps, 1 - eps)
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log1p(-p))))


def bce_with_logits(z, y, mask=None):
    """Mean BCE of sigmoid(z) against y and its gradient w.r.t. z.

    Computed from the logits (softplus form), so no clamping is needed.  With
    a 0/1 ``mask`` of the same shape the loss is the mean over columns of the
    per-column mean over unmasked rows; columns with no rows are skipped.
    """
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    per = np.logaddexp(0.0, z) - y * z
    if mask is None:
        return float(np.mean(per)), (sigmoid(z) - y) / z.size
    mask = np.asarray(mask, dtype=np.float64).reshape(z.shape)
    counts = mask.sum(axis=0)
    live = counts > 0
    scale = np.where(live, 1.0 / np.maximum(counts, 1), 0.0) / max(int(live.sum()), 1)
    loss = float(np.sum(per * mask * scale))
    return loss, (sigmoid(z) - y) * mask * scale


def activate(z, activation, tau=0.0):
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return sigmoid(z)
    if activation == "identity":
        return z
    if activation == "softmax":
        return softmax(z)
    if activation == "sparse_softmax":
        return sparse_softmax(z, tau)
    raise InvalidArgument(f"unknown activation {activation!r}")


def activate_backward(z, a, g, activation):
    """Gradient w.r.t. pre-activation ``z`` given output ``a`` and upstream ``g``.

    For the sparse softmax the zeroing mask is held constant: masked entries
    pass no gradient and survivors use the plain softmax Jacobian.
    """
    if activation == "relu":
        return g * (z > 0)
    if activation == "sigmoid":
        return g * a * (1.0 - a)
    if activation == "identity":
        return g
    if activation in ("softmax", "sparse_softmax"):
        s = softmax(z)
        u = g * (a > 0) if activation == "sparse_softmax" else g
        return s * (u - np.sum(s * u, axis=-1, keepdims=True))
    raise InvalidArgument(f"unknown activation {activation!r}")


class Dense:
    def __init__(self, n_in, n_out, activation="relu", tau=0.0, rng=None, W=None, b=None):
        if activation not in ACTIVATIONS:
            raise InvalidArgument(f"unknown activation {activation!r}")
        self.n_in, self.n_out = n_in, n_out
        self.activation = activation
        self.tau = tau
        self.W = glorot_init(n_in, n_out, rng) if W is None else np.array(W, dtype=np.float64)
        self.b = np.zeros(n_out) if b is None else np.array(b, dtype=np.float64)
        if self.W.shape != (n_in, n_out) or self.b.shape != (n_out,):
            raise InvalidArgument(f"parameter shapes do not match {n_in}x{n_out}")

    @property
    def params(self):
        return [self.W, self.b]

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise InvalidArgument(f"expected {self.n_in} input features, got {x.shape[-1]}")
        z = x @ self.W + self.b
        a = activate(z, self.activation, self.tau)
        return a, (x, z, a)

    def backward(self, cache, g):
        x, z, a = cache
        dz = activate_backward(z, a, g, self.activation)
        return dz @ self.W.T, [x.T @ dz, dz.sum(axis=0)]


class Sequential:
    """Stack of dense layers; the last layer's output is taken as logits."""

    def __init__(self, layers):
        self.layers = list(layers)

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    def forward(self, X):
        caches, a = [], X
        for layer in self.layers:
            a, c = layer.forward(a)
            caches.append(c)
        return a, caches

    def backward(self, caches, g):
        grads = []
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            g, gp = layer.backward(c, g)
            grads = gp + grads
        return grads


def predict_proba(net, X, batch: int = 65536) -> np.ndarray:
    out = []
    for i in range(0, len(X), batch):
        logits, _ = net.forward(np.asarray(X[i:i + batch], dtype=np.float64))
        out.append(sigmoid(logits))
    return np.concatenate(out) if out else np.empty((0, 1))


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params, grads):
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged("non-finite gradient")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
            raise InvalidArgument("gradient shapes do not match parameters")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


def adam_step(state: Adam, params, grads):
    state.step(params, grads)
    return params


@dataclass
class GradCheckReport:
    max_relative_error: float
    block_errors: list

    @property
    def ok(self):
        return self.max_relative_error <= 1e-4


def grad_check(net, X, Y, h: float = 1e-5, blocks=None) -> GradCheckReport:
    """Compare backprop gradients with central finite differences.

    The error of each parameter block is ``|a - n| / (|a| + |n|)`` in the
    Euclidean norm; ``blocks`` restricts the check to those indices.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64).reshape(len(X), -1)

    def loss():
        return bce_with_logits(net.forward(X)[0], Y)[0]

    logits, cache = net.forward(X)
    _, dlogits = bce_with_logits(logits, Y)
    analytic = net.backward(cache, dlogits)
    errors = []
    for bi, (p, a) in enumerate(zip(net.params, analytic)):
        if blocks is not None and bi not in blocks:
            continue
        num = np.zeros_like(p)
        flat, nflat = p.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss()
            flat[i] = old - h
            down = loss()
            flat[i] = old
            nflat[i] = (up - down) / (2 * h)
        denom = np.linalg.norm(a) + np.linalg.norm(num)
        errors.append(0.0 if denom == 0 else float(np.linalg.norm(a - num) / denom))
    return GradCheckReport(max(errors) if errors else 0.0, errors)


CKPT_MAGIC = b"NNCK"
CKPT_VERSION = 1


def save_checkpoint(path, architecture: dict, params) -> None:
    """Versioned blob: magic, version, JSON architecture (shapes, activations, tau), float64 LE arrays."""
    arch = dict(architecture)
    arch["shapes"] = [list(p.shape) for p in params]
    head = json.dumps(arch, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC + struct.pack("<BI", CKPT_VERSION, len(head)) + head)
        for p in params:
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return (architecture dict, list of parameter arrays)."""
    data = open(path, "rb").read()
    if data[:4] != CKPT_MAGIC:
        raise FormatError("bad checkpoint magic", offset=0)
    if len(data) < 9:
        raise FormatError("truncated checkpoint header", offset=len(data))
    version, hlen = struct.unpack_from("<BI", data, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    try:
        arch = json.loads(data[9:9 + hlen])
    except ValueError as e:
        raise FormatError(f"unreadable architecture header: {e}", offset=9) from None
    buf = io.BytesIO(data[9 + hlen:])
    params = []
    for shape in arch["shapes"]:
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        raw = buf.read(nbytes)
        if len(raw) != nbytes:
            raise FormatError("truncated parameter data", offset=9 + hlen + buf.tell())
        params.append(np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64))
    if buf.read(1):
        raise FormatError("trailing bytes in checkpoint", offset=9 + hlen + buf.tell() - 1)
    return arch, params
