"""
A small dense tensor engine with reverse-mode automatic differentiation, enough for an encoder-decoder Transformer.

Tensors hold 64-bit numpy arrays. Every op that touches a tensor requiring gradients records its parents and a
backward function; backward() orders the recorded nodes topologically (the tape) and walks them once in reverse,
accumulating gradients into the leaves. Broadcasting follows numpy, and gradients are summed back to each input's
shape.
"""

import threading
import contextlib
import numpy as np
from scipy.special import log_softmax
from helpers.errors import RuntimeFailure, ShapeMismatch

MASK_FILL = -1e9

_state = threading.local()
DEBUG_CHECKS = {'enabled': False}


class NonFiniteValue(RuntimeFailure):
    """NaN or infinity produced while debug checks are on."""


class NonScalarLoss(RuntimeFailure):
    """backward() called on something that is not a single number."""


def grad_enabled():
    return getattr(_state, 'grad_enabled', True)


@contextlib.contextmanager
def no_grad():
    """Within this block, ops record nothing; use for evaluation and decoding."""
    previous = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def set_debug_checks(enabled):
    """Turn on (or off) the NaN / infinity check after every op."""
    DEBUG_CHECKS['enabled'] = bool(enabled)


class Tensor:

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op='leaf'):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    def __repr__(self):
        return '<Tensor %s shape=%s grad=%s>' % (self.op, self.shape, self.requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return self.backward_fn is None

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def record(data, parents, backward_fn, op):
    """
    Wrap an op's output, recording it on the tape when any parent needs gradients.

    :param data: np.ndarray, the forward value
    :param parents: tuple of Tensors the value was computed from
    :param backward_fn: callable, output gradient -> tuple of parent gradients (None where not needed)
    :param op: str, op name, for debugging
    :return: Tensor
    """
    if DEBUG_CHECKS['enabled'] and not np.all(np.isfinite(data)):
        raise NonFiniteValue('non-finite value produced by %s' % op)
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)
    return Tensor(data, op=op)


def unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the shape of the input it flows into."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch('%s: shapes %s and %s do not broadcast' % (op, a.shape, b.shape))


# ELEMENTWISE #

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a, b, 'add')

    def backward_fn(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)
    return record(a.data + b.data, (a, b), backward_fn, 'add')


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a, b, 'mul')

    def backward_fn(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)
    return record(a.data * b.data, (a, b), backward_fn, 'mul')


def scale(a, c):
    c = float(c)

    def backward_fn(g):
        return (g * c,)
    return record(a.data * c, (a,), backward_fn, 'scale')


def relu(a):
    positive = a.data > 0

    def backward_fn(g):
        return (g * positive,)
    return record(np.where(positive, a.data, 0.0), (a,), backward_fn, 'relu')


def sum_all(a):
    def backward_fn(g):
        return (np.broadcast_to(g, a.shape).copy(),)
    return record(np.array(a.data.sum()), (a,), backward_fn, 'sum')


# SHAPES #

def reshape(a, shape):
    def backward_fn(g):
        return (g.reshape(a.shape),)
    return record(a.data.reshape(shape), (a,), backward_fn, 'reshape')


def permute(a, axes):
    inverse = np.argsort(axes)

    def backward_fn(g):
        return (np.transpose(g, inverse),)
    return record(np.transpose(a.data, axes), (a,), backward_fn, 'permute')


def transpose_last2(a):
    def backward_fn(g):
        return (np.swapaxes(g, -1, -2),)
    return record(np.swapaxes(a.data, -1, -2), (a,), backward_fn, 'transpose')


# LINEAR ALGEBRA #

def matmul(a, b):
    """
    Batched matrix product over the last two dims; leading (batch, heads) dims broadcast.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch('matmul: %s @ %s' % (a.shape, b.shape))

    def backward_fn(g):
        grad_a = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        grad_b = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return grad_a, grad_b
    return record(a.data @ b.data, (a, b), backward_fn, 'matmul')


def take_lastdim(a, index):
    """
    out[..., i, j] = a[..., i, index[i, j]]; how relative-position logits are laid out over (query, key) pairs.

    :param a: Tensor, (..., T_q, C)
    :param index: int array, (T_q, T_k), values in 0..C-1
    :return: Tensor, (..., T_q, T_k)
    """
    index = np.asarray(index)
    if a.shape[-2] != index.shape[0] or index.max(initial=0) >= a.shape[-1]:
        raise ShapeMismatch('take_lastdim: %s with index %s' % (a.shape, index.shape))
    full_index = np.broadcast_to(index, a.shape[:-1] + (index.shape[1],))
    onehot = np.eye(a.shape[-1])[index]

    def backward_fn(g):
        return (np.einsum('...ij,ijc->...ic', g, onehot),)
    return record(np.take_along_axis(a.data, full_index, axis=-1), (a,), backward_fn, 'take')


# NORMALISATION AND ATTENTION PIECES #

def softmax_lastdim(a):
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / exps.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        return (probs * (g - (g * probs).sum(axis=-1, keepdims=True)),)
    return record(probs, (a,), backward_fn, 'softmax')


def masked_fill(a, mask, value=MASK_FILL):
    """
    Replace entries where mask is 1 by value; gradients do not flow through replaced entries.

    :param a: Tensor
    :param mask: binary array broadcastable to a's shape
    :param value: float
    """
    mask = np.asarray(mask, dtype=bool)
    try:
        if np.broadcast_shapes(mask.shape, a.shape) != a.shape:
            raise ValueError
    except ValueError:
        raise ShapeMismatch('masked_fill: mask %s against %s' % (mask.shape, a.shape))
    keep = ~mask

    def backward_fn(g):
        return (g * keep,)
    return record(np.where(mask, value, a.data), (a,), backward_fn, 'masked_fill')


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalise over the last dim, then gain * x + bias."""
    mean = a.data.mean(axis=-1, keepdims=True)
    centred = a.data - mean
    inv_std = 1.0 / np.sqrt((centred ** 2).mean(axis=-1, keepdims=True) + eps)
    normed = centred * inv_std

    def backward_fn(g):
        g_normed = g * gain.data
        grad_a = inv_std * (g_normed - g_normed.mean(axis=-1, keepdims=True)
                            - normed * (g_normed * normed).mean(axis=-1, keepdims=True))
        grad_gain = (g * normed).reshape(-1, a.shape[-1]).sum(axis=0)
        grad_bias = g.reshape(-1, a.shape[-1]).sum(axis=0)
        return grad_a, grad_gain, grad_bias
    return record(normed * gain.data + bias.data, (a, gain, bias), backward_fn, 'layer_norm')


def embedding_lookup(table, ids):
    """
    Rows of table picked by integer ids.

    :param table: Tensor, (V, d)
    :param ids: int array of any shape
    :return: Tensor, ids.shape + (d,)
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeMismatch('embedding ids outside 0..%d' % (table.shape[0] - 1))

    def backward_fn(g):
        grad_table = np.zeros_like(table.data)
        np.add.at(grad_table, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (grad_table,)
    return record(table.data[ids], (table,), backward_fn, 'embedding')


def dropout(a, p, rng_seed):
    """
    Inverted dropout: zero each entry with probability p, scale the kept ones by 1 / (1 - p). The mask comes from a
    counter-based generator keyed by rng_seed, so a given seed always drops the same entries.

    :param a: Tensor
    :param p: float in [0, 1)
    :param rng_seed: int or sequence of ints
    :return: Tensor; a itself when p == 0
    """
    if p == 0:
        return a
    if not 0 <= p < 1:
        raise ValueError('dropout probability must be in [0, 1), got %r' % p)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(rng_seed)))
    keep = (rng.random(a.shape) >= p) / (1.0 - p)

    def backward_fn(g):
        return (g * keep,)
    return record(a.data * keep, (a,), backward_fn, 'dropout')


def cross_entropy(logits, targets, ignore_id, label_smoothing=0.0):
    """
    Mean negative log-likelihood over the targets that are not ignore_id. With smoothing eps, each target's
    distribution is (1 - eps) * onehot + eps / V.

    :param logits: Tensor, (N, V)
    :param targets: int array, (N,)
    :param ignore_id: int, targets equal to it contribute nothing
    :param label_smoothing: float in [0, 1)
    :return: scalar Tensor
    """
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if logits.data.ndim != 2 or logits.shape[0] != targets.shape[0]:
        raise ShapeMismatch('cross_entropy: logits %s against %d targets' % (logits.shape, targets.shape[0]))
    n_vocab = logits.shape[1]
    log_probs = log_softmax(logits.data, axis=-1)
    valid = (targets != ignore_id).astype(np.float64)
    count = max(valid.sum(), 1.0)
    rows = np.arange(targets.shape[0])
    nll = -log_probs[rows, targets]
    smooth = -log_probs.mean(axis=-1)
    per_token = (1.0 - label_smoothing) * nll + label_smoothing * smooth
    loss = (per_token * valid).sum() / count

    def backward_fn(g):
        target_dist = np.full(logits.shape, label_smoothing / n_vocab)
        target_dist[rows, targets] += 1.0 - label_smoothing
        return ((np.exp(log_probs) - target_dist) * (valid / count)[:, None] * g,)
    return record(np.array(loss), (logits,), backward_fn, 'cross_entropy')


# BACKWARD #

class Tape:
    """
    The recorded ops behind one output, in topological order (parents before children). Walking it in reverse visits
    every node exactly once.
    """

    def __init__(self, output):
        self.nodes = []
        seen = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node.parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

    def __len__(self):
        return len(self.nodes)

    def run(self, output_grad):
        grads = {id(self.nodes[-1]): output_grad}
        for node in reversed(self.nodes):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node.is_leaf:
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            for parent, parent_grad in zip(node.parents, node.backward_fn(grad)):
                if not parent.requires_grad or parent_grad is None:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad


def backward(loss, leaves=()):
    """
    Accumulate d loss / d leaf into .grad of every leaf that requires gradients. Calling it twice without zeroing
    adds the gradients up. Afterwards every leaf on the tape, and every leaf passed in, holds a gradient array; where
    the loss does not depend on a leaf that array is zeros.

    :param loss: scalar Tensor
    :param leaves: iterable of Tensor, e.g. all model parameters
    :return: None
    """
    if loss.data.size != 1:
        raise NonScalarLoss('loss must be a scalar, got shape %s' % (loss.shape,))
    leaves = list(leaves)
    if loss.requires_grad:
        tape = Tape(loss)
        tape.run(np.ones_like(loss.data))
        leaves += [node for node in tape.nodes if node.is_leaf]
    for leaf in leaves:
        if leaf.requires_grad and leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
