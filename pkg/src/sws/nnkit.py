r"""Minimal dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array.  Every operation returns a new tensor
remembering its parents and a closure that propagates the output gradient to
them; :meth:`Tensor.backward` visits the graph in reverse topological order.

Broadcasting is restricted to leading (batch) dimensions: the shape of the
smaller operand must be a suffix of the larger one.

Arrays are created with the default precision (float32) unless a
:func:`precision` context selects float64, which gradient checks require.

>>> w = Parameter(np.array([1.0, -2.0, 3.0]))
>>> loss = sum(w * w)
>>> loss.backward()
>>> w.grad
array([ 2., -4.,  6.], dtype=float32)
"""
from contextlib import contextmanager
import builtins
import collections
import dataclasses
import logging
import math

import numpy as np
from scipy import special

from . import errors
from . import interfaces
from . import storage

__all__ = [
    "Tensor",
    "Parameter",
    "precision",
    "default_dtype",
    "no_grad",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "concat",
    "split",
    "reshape",
    "transpose",
    "relu",
    "gelu",
    "sigmoid",
    "softmax",
    "layer_norm",
    "dropout",
    "mean",
    "sum",
    "masked_fill",
    "embedding",
    "pairwise_concat",
    "pairwise_difference",
    "cross_entropy",
    "mse",
    "Module",
    "Linear",
    "LayerNorm",
    "Dropout",
    "Embedding",
    "FeedForward",
    "MultiHeadSelfAttention",
    "TransformerEncoderLayer",
    "TransformerEncoder",
    "grad_check",
    "AdamState",
    "adam_step",
    "Adam",
    "save_checkpoint",
    "load_checkpoint",
]

_LOGGER = logging.getLogger(__name__)

_DTYPES = [np.float32]
_GRAD = [True]

CHECKPOINT_MAGIC = b"CKPT"
CHECKPOINT_VERSION = 1


@contextmanager
def precision(dtype):
    """Context selecting the floating point type of new tensors."""
    _DTYPES.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPES.pop()


def default_dtype():
    return _DTYPES[-1]


@contextmanager
def no_grad():
    """Context in which operations do not record a graph."""
    _GRAD.append(False)
    try:
        yield
    finally:
        _GRAD.pop()


######################################################################
# Tensor
class Tensor(object):
    """Array with an optional gradient and a recorded backward closure."""

    def __init__(self, data, requires_grad=False, parents=(), op=""):
        data = np.asarray(data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(default_dtype())
        self.data = data
        self.grad = None
        self.op = op
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        if _GRAD[-1]:
            self._parents = tuple(p for p in parents if p.requires_grad)
            self.requires_grad = self.requires_grad or bool(self._parents)

    shape = property(lambda self: self.data.shape)
    ndim = property(lambda self: self.data.ndim)
    size = property(lambda self: self.data.size)
    dtype = property(lambda self: self.data.dtype)

    def __repr__(self):
        return "Tensor(shape={}, op={!r})".format(self.shape, self.op)

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad):
        if not self.requires_grad:
            return
        grad = _unbroadcast(np.asarray(grad), self.shape)
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.dtype)
        else:
            self.grad = self.grad + grad

    def _graph(self):
        """Return the recorded graph in topological order (inputs first)."""
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents if id(p) not in seen)
        return order

    def backward(self, grad=None):
        """Accumulate gradients of this tensor into all graph leaves."""
        if grad is None:
            if self.size != 1:
                raise errors.ContractError(
                    "backward() without a gradient needs a scalar, got {}".format(
                        self.shape
                    )
                )
            grad = np.ones(self.shape, dtype=self.dtype)
        graph = self._graph()
        for node in graph:
            if node._backward is not None:
                node.grad = None
        self._accumulate(grad)
        for node in reversed(graph):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)


class Parameter(Tensor):
    """Trainable leaf tensor."""

    def __init__(self, data):
        data = np.asarray(data)
        Tensor.__init__(self, data.astype(default_dtype()), requires_grad=True)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_suffix(name, a, b):
    short, long = sorted((a.shape, b.shape), key=len)
    if tuple(long[len(long) - len(short):]) != tuple(short):
        raise errors.ShapeError("{}: incompatible shapes".format(name), a.shape, b.shape)


def _result(data, parents, op, backward):
    out = Tensor(data, parents=parents, op=op)
    if out._parents:
        out._backward = backward
    return out


######################################################################
# Elementwise and linear ops
def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix("add", a, b)

    def backward(g):
        a._accumulate(g)
        b._accumulate(g)

    return _result(a.data + b.data, (a, b), "add", backward)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix("sub", a, b)

    def backward(g):
        a._accumulate(g)
        b._accumulate(-g)

    return _result(a.data - b.data, (a, b), "sub", backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix("mul", a, b)

    def backward(g):
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)

    return _result(a.data * b.data, (a, b), "mul", backward)


def scale(a, s):
    s = float(s)

    def backward(g):
        a._accumulate(g * s)

    return _result(a.data * a.dtype.type(s), (a,), "scale", backward)


def neg(a):
    return scale(a, -1.0)


def matmul(a, b):
    """Batched matrix product `(..., m, k) @ (..., k, n)`."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise errors.ShapeError("matmul: incompatible shapes", a.shape, b.shape)

    def backward(g):
        a._accumulate(np.matmul(g, np.swapaxes(b.data, -1, -2)))
        b._accumulate(np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _result(np.matmul(a.data, b.data), (a, b), "matmul", backward)


######################################################################
# Shape ops
def _getitem(a, index):
    basic = all(
        isinstance(i, (slice, int, np.integer))
        for i in (index if isinstance(index, tuple) else (index,))
    )

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        a._accumulate(full)

    return _result(a.data[index], (a,), "getitem", backward)


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[k] != tensors[0].shape[k] for k in range(ndim) if k != axis
        ):
            raise errors.ShapeError("concat: incompatible shapes", tensors[0].shape, t.shape)
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        for t, part in zip(tensors, np.split(g, np.cumsum(sizes)[:-1], axis=axis)):
            t._accumulate(part)

    return _result(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        "concat",
        backward,
    )


def split(a, sizes, axis=-1):
    """Return consecutive pieces of `a` of the given `sizes` along `axis`."""
    axis = axis % a.ndim
    if builtins.sum(sizes) != a.shape[axis]:
        raise errors.ShapeError(
            "split: sizes {} do not add up".format(list(sizes)), a.shape
        )
    pieces, start = [], 0
    for n in sizes:
        index = (slice(None),) * axis + (slice(start, start + n),)
        pieces.append(a[index])
        start += n
    return pieces


def reshape(a, shape):
    shape = tuple(shape)

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise errors.ShapeError("reshape: cannot reshape", a.shape, shape)
    return _result(data, (a,), "reshape", backward)


def transpose(a, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a._accumulate(g.transpose(inverse))

    return _result(a.data.transpose(axes), (a,), "transpose", backward)


######################################################################
# Non-linearities
def relu(a):
    def backward(g):
        a._accumulate(g * (a.data > 0))

    return _result(np.maximum(a.data, 0), (a,), "relu", backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """Gaussian error linear unit (tanh approximation)."""
    x = a.data
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))

    def backward(g):
        dt = (1 - t * t) * _GELU_C * (1 + 3 * 0.044715 * x * x)
        a._accumulate(g * (0.5 * (1 + t) + 0.5 * x * dt))

    return _result(0.5 * x * (1 + t), (a,), "gelu", backward)


def sigmoid(a):
    s = special.expit(a.data)

    def backward(g):
        a._accumulate(g * s * (1 - s))

    return _result(s, (a,), "sigmoid", backward)


def softmax(a, axis=-1):
    s = special.softmax(a.data, axis=axis)

    def backward(g):
        a._accumulate(s * (g - np.sum(g * s, axis=axis, keepdims=True)))

    return _result(s, (a,), "softmax", backward)


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalize over the last axis, then apply the affine `gamma, beta`."""
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise errors.ShapeError("layer_norm: bad affine shape", x.shape, gamma.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.data.var(axis=-1, keepdims=True) + eps)
    xhat = (x.data - mu) * inv

    def backward(g):
        gx = g * gamma.data
        x._accumulate(
            inv
            * (
                gx
                - gx.mean(axis=-1, keepdims=True)
                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            )
        )
        gamma._accumulate(g * xhat)
        beta._accumulate(g)

    return _result(xhat * gamma.data + beta.data, (x, gamma, beta), "layer_norm", backward)


def dropout(a, p, rng, frozen=False):
    """Inverted dropout with keep mask drawn from `rng`."""
    if not 0 <= p < 1:
        raise errors.ConfigError("Dropout rate must be in [0, 1), got {}".format(p))
    mask = (rng.random(a.shape) >= p) / (1.0 - p)

    def backward(g):
        a._accumulate(g * mask)

    out = _result(a.data * mask.astype(a.dtype), (a,), "dropout", backward)
    out.frozen = frozen
    return out


######################################################################
# Reductions and masking
def mean(a, axis=None):
    n = a.size if axis is None else a.shape[axis]

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g / n, a.shape))

    return _result(a.data.mean(axis=axis), (a,), "mean", backward)


def sum(a, axis=None):
    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _result(a.data.sum(axis=axis), (a,), "sum", backward)


def masked_fill(a, mask, value):
    """Replace the entries where the constant boolean `mask` is true."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)

    def backward(g):
        a._accumulate(np.where(mask, 0, g))

    return _result(np.where(mask, a.dtype.type(value), a.data), (a,), "masked_fill", backward)


def embedding(table, ids):
    """Return the rows `table[ids]`."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise errors.ShapeError("embedding: ids outside table", ids.shape, table.shape)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        table._accumulate(full)

    return _result(table.data[ids], (table,), "embedding", backward)


def pairwise_concat(v):
    """Return `[v_i; v_j; v_i - v_j]` for all pairs: `(..., N, F)` to
    `(..., N, N, 3F)`."""
    F = v.shape[-1]
    vi = np.expand_dims(v.data, -2)
    vj = np.expand_dims(v.data, -3)
    shape = v.shape[:-1] + (v.shape[-2], F)
    data = np.concatenate(
        [np.broadcast_to(vi, shape), np.broadcast_to(vj, shape), vi - vj], axis=-1
    )

    def backward(g):
        gi, gj, gd = g[..., :F], g[..., F:2 * F], g[..., 2 * F:]
        v._accumulate((gi + gd).sum(axis=-2) + (gj - gd).sum(axis=-3))

    return _result(data, (v,), "pairwise_concat", backward)


def pairwise_difference(x):
    """Return `x_i - x_j`: `(..., N, D)` to `(..., N, N, D)`."""

    def backward(g):
        x._accumulate(g.sum(axis=-2) - g.sum(axis=-3))

    data = np.expand_dims(x.data, -2) - np.expand_dims(x.data, -3)
    return _result(data, (x,), "pairwise_difference", backward)


######################################################################
# Losses
def _loss_mask(mask, shape):
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), shape)
    if not mask.any():
        raise errors.EmptyLoss("The loss mask removes every element")
    return mask


def cross_entropy(logits, targets, axis=-1, mask=None):
    """Mean cross-entropy over unmasked cells.

    `targets` are class indices with the shape of `logits` minus the class
    `axis`.

    >>> logits = Tensor(np.zeros((2, 4)))
    >>> round(cross_entropy(logits, [0, 3]).item(), 6) == round(np.log(4), 6)
    True
    """
    axis = axis % logits.ndim
    targets = np.asarray(targets, dtype=np.int64)
    z = np.moveaxis(logits.data, axis, -1)
    if z.shape[:-1] != targets.shape:
        raise errors.ShapeError("cross_entropy: targets", logits.shape, targets.shape)
    C = z.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= C):
        raise errors.InvalidClass("Target class outside 0..{}".format(C - 1))
    mask = _loss_mask(mask, targets.shape)
    n = mask.sum()
    logp = special.log_softmax(z, axis=-1)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -np.sum(np.where(mask, picked, 0)) / n

    def backward(g):
        grad = np.exp(logp)
        np.put_along_axis(
            grad, targets[..., None],
            np.take_along_axis(grad, targets[..., None], axis=-1) - 1, axis=-1,
        )
        grad = grad * (mask[..., None] * (g / n))
        logits._accumulate(np.moveaxis(grad, -1, axis))

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), "cross_entropy",
                   backward)


def mse(pred, target, mask=None):
    """Mean squared error over unmasked elements.

    >>> x = Tensor(np.ones(3), requires_grad=True)
    >>> loss = mse(x, np.ones(3))
    >>> loss.item(), loss.backward(), x.grad.tolist()
    (0.0, None, [0.0, 0.0, 0.0])
    """
    target = np.asarray(target)
    if target.shape != pred.shape:
        raise errors.ShapeError("mse: shapes differ", pred.shape, target.shape)
    mask = _loss_mask(mask, pred.shape)
    n = mask.sum()
    diff = np.where(mask, pred.data - target, 0)

    def backward(g):
        pred._accumulate(2 * g * diff / n)

    return _result(np.asarray(np.sum(diff * diff) / n, dtype=pred.dtype), (pred,), "mse",
                   backward)


######################################################################
# Modules
@interfaces.implementer(interfaces.IModule)
class Module(object):
    """Base class: parameters and sub-modules are discovered from attributes
    (in assignment order)."""

    training = True

    def named_parameters(self, prefix=""):
        res = []
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                res.append((prefix + name, value))
            elif isinstance(value, Module):
                res.extend(value.named_parameters(prefix + name + "."))
            elif isinstance(value, (list, tuple)):
                for n, m in enumerate(value):
                    if isinstance(m, Module):
                        res.extend(m.named_parameters("{}{}.{}.".format(prefix, name, n)))
        return res

    def parameters(self):
        return [p for (_, p) in self.named_parameters()]

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                for m in value.modules():
                    yield m
            elif isinstance(value, (list, tuple)):
                for m in value:
                    if isinstance(m, Module):
                        for mm in m.modules():
                            yield mm

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self):
        return builtins.sum(p.size for p in self.parameters())

    def state_dict(self):
        return collections.OrderedDict(
            (name, p.data.copy()) for (name, p) in self.named_parameters()
        )

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unknown = sorted(set(state) - set(params))
        if missing or unknown:
            raise errors.ConfigError(
                "State mismatch: missing {}, unknown {}".format(missing, unknown)
            )
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise errors.ShapeError("Parameter {}".format(name), p.shape, value.shape)
            p.data = value.astype(p.dtype)

    def __call__(self, *args, **kw):
        return self.forward(*args, **kw)


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """Affine map `x @ weight + bias` with weights uniform in
    `±1/sqrt(fan_in)`."""

    def __init__(self, fan_in, fan_out, rng):
        bound = 1.0 / math.sqrt(fan_in)
        self.weight = Parameter(_uniform(rng, bound, (fan_in, fan_out)))
        self.bias = Parameter(_uniform(rng, bound, (fan_out,)))

    def forward(self, x):
        x = _as_tensor(x)
        if x.shape[-1] != self.weight.shape[0]:
            raise errors.ShapeError("Linear: input", x.shape, self.weight.shape)
        return matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def forward(self, x):
        return layer_norm(x, self.gamma, self.beta)


class Dropout(Module):
    """Dropout with its own seeded generator.

    With `frozen` the same mask is drawn on every call, which keeps the
    computation a deterministic function of the parameters.
    """

    def __init__(self, p=0.0, seed=0, frozen=False):
        self.p = p
        self.seed = seed
        self.frozen = frozen
        self._rng = np.random.default_rng(seed)

    def forward(self, x):
        if not self.training or self.p == 0:
            return x
        rng = np.random.default_rng(self.seed) if self.frozen else self._rng
        return dropout(x, self.p, rng, frozen=self.frozen)


class Embedding(Module):
    def __init__(self, num, dim, rng):
        self.table = Parameter(rng.normal(0.0, 0.02, size=(num, dim)))

    def forward(self, ids):
        return embedding(self.table, ids)


_ACTIVATIONS = {"gelu": gelu, "relu": relu}


def activation(name):
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise errors.ConfigError(
            "Unknown activation {!r}; expected one of {}".format(
                name, sorted(_ACTIVATIONS)
            )
        )


class FeedForward(Module):
    """Two affine layers with a non-linearity in between."""

    def __init__(self, fan_in, hidden, fan_out, rng, act="gelu"):
        self.act = activation(act)
        self.fc1 = Linear(fan_in, hidden, rng)
        self.fc2 = Linear(hidden, fan_out, rng)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention over `(B, M, H)` or `(M, H)`.

    `key_mask` (shape `(B, M)`) marks valid positions; invalid keys get no
    attention weight.
    """

    def __init__(self, dim, heads, rng):
        if heads < 1 or dim % heads:
            raise errors.ConfigError(
                "Hidden size {} not divisible by {} heads".format(dim, heads)
            )
        self.heads = heads
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)

    def forward(self, x, key_mask=None):
        squeeze = x.ndim == 2
        if squeeze:
            x = reshape(x, (1,) + x.shape)
            key_mask = None if key_mask is None else np.asarray(key_mask)[None]
        B, M, H = x.shape
        dh = H // self.heads

        def heads(t):
            return transpose(reshape(t, (B, M, self.heads, dh)), (0, 2, 1, 3))

        q, k, v = heads(self.query(x)), heads(self.key(x)), heads(self.value(x))
        scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        if key_mask is not None:
            invalid = ~np.asarray(key_mask, dtype=bool)[:, None, None, :]
            scores = masked_fill(scores, invalid, -1e9)
        attn = softmax(scores, axis=-1)
        ctx = reshape(transpose(matmul(attn, v), (0, 2, 1, 3)), (B, M, H))
        out = self.out(ctx)
        return reshape(out, (M, H)) if squeeze else out


class TransformerEncoderLayer(Module):
    """Self-attention and feed-forward sub-layers, each followed by a
    residual connection and layer normalization."""

    def __init__(self, dim, heads, rng, act="gelu", ffn_mult=4, dropout=0.0, seed=0):
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.norm1 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_mult * dim, dim, rng, act=act)
        self.norm2 = LayerNorm(dim)
        self.drop = Dropout(dropout, seed=seed)

    def forward(self, x, key_mask=None):
        x = self.norm1(x + self.drop(self.attn(x, key_mask)))
        return self.norm2(x + self.drop(self.ffn(x)))


class TransformerEncoder(Module):
    def __init__(self, num_layers, dim, heads, rng, act="gelu", dropout=0.0, seed=0):
        self.layers = [
            TransformerEncoderLayer(dim, heads, rng, act=act, dropout=dropout,
                                    seed=seed + n)
            for n in range(num_layers)
        ]

    def forward(self, x, key_mask=None):
        for layer in self.layers:
            x = layer(x, key_mask)
        return x


######################################################################
# Gradient verification
def grad_check(f, params, epsilon=1e-4, fraction=0.05, seed=0, floor=1e-8):
    """Return the max relative error between autodiff and central finite
    difference gradients of the scalar `f()` on a random sample of
    coordinates of `params`.

    The relative error of one coordinate is
    `|g_ad - g_fd| / max(|g_ad|, |g_fd|, floor)`.

    >>> with precision(np.float64):
    ...     w = Parameter(np.random.default_rng(0).normal(size=20))
    >>> grad_check(lambda: sum(w * w), [w], fraction=1.0) < 1e-7
    True
    """
    params = list(params)
    if any(p.dtype != np.float64 for p in params):
        raise errors.ContractError("grad_check requires float64 parameters")
    out = f()
    if out.size != 1:
        raise errors.ContractError("grad_check needs a scalar, got {}".format(out.shape))
    if any(n.op == "dropout" and not n.frozen for n in out._graph()):
        raise errors.ContractError("Active dropout: use a frozen seed or eval mode")
    for p in params:
        p.zero_grad()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = max(1, int(math.ceil(fraction * flat.size)))
        for k in rng.choice(flat.size, size=n, replace=False):
            orig = flat[k]
            flat[k] = orig + epsilon
            fp = f().item()
            flat[k] = orig - epsilon
            fm = f().item()
            flat[k] = orig
            fd = (fp - fm) / (2 * epsilon)
            ga = g.reshape(-1)[k]
            err = abs(ga - fd) / max(abs(ga), abs(fd), floor)
            worst = max(worst, err)
    return worst


######################################################################
# Optimization
@dataclasses.dataclass
class AdamState(object):
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = dataclasses.field(default_factory=list)
    v: list = dataclasses.field(default_factory=list)


def adam_step(params, grads, state):
    """Apply one bias-corrected Adam update to `params` in place.

    >>> w = Parameter(np.zeros(1))
    >>> state = AdamState(lr=0.01)
    >>> for _ in range(5000):
    ...     state = adam_step([w], [2 * (w.data - 3)], state)
    >>> abs(float(w.data[0]) - 3) < 0.01
    True
    """
    grads = [np.asarray(g) for g in grads]
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise errors.ShapeError("adam_step: gradient", p.shape, g.shape)
        if not np.all(np.isfinite(g)):
            raise errors.NumericalError(
                "Non-finite gradient at step {} (shape {})".format(state.step + 1, p.shape)
            )
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data = (p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(
            p.dtype
        )
    return state


class Adam(object):
    """Adam over the gradients accumulated in `params`."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        adam_step(self.params, grads, self.state)


######################################################################
# Checkpoints
def save_checkpoint(filename, module, header, keep=False):
    """Write the parameters of `module` as a ``CKPT`` file."""
    arrays = list(module.state_dict().items())
    storage.write_container(
        filename, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, header, arrays, keep=keep
    )
    _LOGGER.info("Saved checkpoint %s", filename)


def load_checkpoint(filename):
    """Return `(header, state)` from a ``CKPT`` file."""
    version, header, arrays = storage.read_container(
        filename, CHECKPOINT_MAGIC, {CHECKPOINT_VERSION}, error=errors.DataError
    )
    return header, collections.OrderedDict(arrays)
