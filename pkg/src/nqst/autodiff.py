"""Reverse-mode automatic differentiation on numpy arrays.

A minimal tape for the primitive set the wavefunction model needs:
affine maps, layer norm, softmax/log-softmax, tanh, embeddings, and
shape plumbing.  Every op works on batched arrays and also runs with
tape=None for recording-free inference.  Adjoint seeds may be complex;
all Jacobians here are real, so a complex seed propagates to a complex
gradient whose real and imaginary parts are the gradients of the real
and imaginary parts of the seeded scalar.
"""

import numpy as np


class TapeConsumedError(RuntimeError):
    pass


class Tape:
    """Records primitive ops of one forward pass for a single backward."""

    __slots__ = ("nodes", "consumed", "meta")

    def __init__(self):
        self.nodes = []
        self.consumed = False
        self.meta = {}

    def add(self, fn):
        self.nodes.append(fn)

    def backward(self, seeds):
        """Accumulate adjoints from (Var, seed array) pairs.

        The node list is already topologically ordered (execution order),
        so one reverse sweep visits each node exactly once.
        """
        if self.consumed:
            raise TapeConsumedError("tape already consumed by a backward pass")
        self.consumed = True
        for var, g in seeds:
            var.accumulate(np.asarray(g))
        for fn in reversed(self.nodes):
            fn()


class Var:
    __slots__ = ("data", "tape", "grad")

    def __init__(self, data, tape=None):
        self.data = np.asarray(data)
        self.tape = tape
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g):
        if self.grad is None:
            dtype = np.result_type(np.float64, g.dtype)
            self.grad = np.zeros(self.data.shape, dtype=dtype)
        elif np.iscomplexobj(g) and not np.iscomplexobj(self.grad):
            self.grad = self.grad.astype(np.complex128)
        self.grad += g


def _data(x):
    return x.data if isinstance(x, Var) else np.asarray(x)


def _tape(*xs):
    for x in xs:
        if isinstance(x, Var) and x.tape is not None:
            return x.tape
    return None


def _unbroadcast(g, shape):
    # sum the adjoint back down to the operand's broadcast source shape
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    ad, bd = _data(a), _data(b)
    out = Var(ad + bd, _tape(a, b))
    if out.tape is not None:

        def backward():
            if out.grad is None:
                return
            if isinstance(a, Var):
                a.accumulate(_unbroadcast(out.grad, ad.shape))
            if isinstance(b, Var):
                b.accumulate(_unbroadcast(out.grad, bd.shape))

        out.tape.add(backward)
    return out


def mul(a, b):
    ad, bd = _data(a), _data(b)
    out = Var(ad * bd, _tape(a, b))
    if out.tape is not None:

        def backward():
            if out.grad is None:
                return
            if isinstance(a, Var):
                a.accumulate(_unbroadcast(out.grad * bd, ad.shape))
            if isinstance(b, Var):
                b.accumulate(_unbroadcast(out.grad * ad, bd.shape))

        out.tape.add(backward)
    return out


def matmul(a, b):
    ad, bd = _data(a), _data(b)
    out = Var(ad @ bd, _tape(a, b))
    if out.tape is not None:

        def backward():
            if out.grad is None:
                return
            g = out.grad
            if isinstance(a, Var):
                a.accumulate(_unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape))
            if isinstance(b, Var):
                b.accumulate(_unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape))

        out.tape.add(backward)
    return out


def tanh(a):
    y = np.tanh(_data(a))
    out = Var(y, _tape(a))
    if out.tape is not None:

        def backward():
            if out.grad is not None:
                a.accumulate(out.grad * (1.0 - y * y))

        out.tape.add(backward)
    return out


def clamp(a, lo, hi):
    ad = _data(a)
    y = np.clip(ad, lo, hi)
    out = Var(y, _tape(a))
    if out.tape is not None:
        mask = (ad > lo) & (ad < hi)

        def backward():
            if out.grad is not None:
                a.accumulate(out.grad * mask)

        out.tape.add(backward)
    return out


def reshape(a, shape):
    ad = _data(a)
    out = Var(ad.reshape(shape), _tape(a))
    if out.tape is not None:

        def backward():
            if out.grad is not None:
                a.accumulate(out.grad.reshape(ad.shape))

        out.tape.add(backward)
    return out


def transpose(a, axes):
    ad = _data(a)
    out = Var(ad.transpose(axes), _tape(a))
    if out.tape is not None:
        inv = np.argsort(axes)

        def backward():
            if out.grad is not None:
                a.accumulate(out.grad.transpose(inv))

        out.tape.add(backward)
    return out


def take(a, index):
    """Basic slice/index selection; index must select a view-shaped block."""
    ad = _data(a)
    out = Var(ad[index], _tape(a))
    if out.tape is not None:

        def backward():
            if out.grad is None:
                return
            g = np.zeros(ad.shape, dtype=out.grad.dtype)
            g[index] = out.grad
            a.accumulate(g)

        out.tape.add(backward)
    return out


def sum_axis(a, axis):
    ad = _data(a)
    out = Var(ad.sum(axis=axis), _tape(a))
    if out.tape is not None:

        def backward():
            if out.grad is None:
                return
            g = np.expand_dims(out.grad, axis)
            a.accumulate(np.broadcast_to(g, ad.shape).copy())

        out.tape.add(backward)
    return out


def softmax(a):
    ad = _data(a)
    shifted = ad - ad.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Var(y, _tape(a))
    if out.tape is not None:

        def backward():
            if out.grad is None:
                return
            g = out.grad
            a.accumulate(y * (g - (g * y).sum(axis=-1, keepdims=True)))

        out.tape.add(backward)
    return out


def log_softmax(a):
    ad = _data(a)
    shifted = ad - ad.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    out = Var(y, _tape(a))
    if out.tape is not None:
        p = np.exp(y)

        def backward():
            if out.grad is None:
                return
            g = out.grad
            a.accumulate(g - p * g.sum(axis=-1, keepdims=True))

        out.tape.add(backward)
    return out


def layer_norm(a, gamma, beta, eps=1e-5):
    ad = _data(a)
    mu = ad.mean(axis=-1, keepdims=True)
    centered = ad - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Var(_data(gamma) * xhat + _data(beta), _tape(a, gamma, beta))
    if out.tape is not None:

        def backward():
            if out.grad is None:
                return
            g = out.grad
            if isinstance(beta, Var):
                beta.accumulate(_unbroadcast(g, _data(beta).shape))
            if isinstance(gamma, Var):
                gamma.accumulate(_unbroadcast(g * xhat, _data(gamma).shape))
            dxhat = g * _data(gamma)
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            a.accumulate(inv * (dxhat - m1 - xhat * m2))

        out.tape.add(backward)
    return out


def embedding(table, index):
    """table: Var (V, D); index: integer array. Output index.shape + (D,)."""
    td = _data(table)
    out = Var(td[index], _tape(table))
    if out.tape is not None:

        def backward():
            if out.grad is None:
                return
            g = np.zeros(td.shape, dtype=out.grad.dtype)
            np.add.at(g, index, out.grad)
            table.accumulate(g)

        out.tape.add(backward)
    return out


def gather_last(a, index):
    """Pick one entry along the final axis; index shape = a.shape[:-1]."""
    ad = _data(a)
    idx = index[..., None]
    out = Var(np.take_along_axis(ad, idx, axis=-1)[..., 0], _tape(a))
    if out.tape is not None:

        def backward():
            if out.grad is None:
                return
            g = np.zeros(ad.shape, dtype=out.grad.dtype)
            # one slot per row, so put is the same as scatter-add
            np.put_along_axis(g, idx, out.grad[..., None], axis=-1)
            a.accumulate(g)

        out.tape.add(backward)
    return out
