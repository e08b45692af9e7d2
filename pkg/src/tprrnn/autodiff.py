"""Tape-based reverse-mode differentiation over numpy arrays.

A :class:`Tape` records every differentiable operation as it runs. Each
primitive below computes its forward value and returns a closure mapping
the upstream gradient to gradients for its inputs. ``Tape.backward`` walks
the nodes once, in reverse.

Primitives accept an optional leading batch axis; where a primitive
broadcasts an operand over the batch, the gradient is summed back to the
operand's shape.
"""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from . import kernels


class TapeError(RuntimeError):
    """Variables from different tapes were combined, or the tape is misused."""


class Variable:
    """A value on a tape together with its accumulated gradient."""

    __slots__ = ("value", "_grad", "node_id", "requires_grad", "tape")

    def __init__(self, value, tape: "Tape", node_id: int, requires_grad: bool):
        self.value = value
        self._grad = None
        self.node_id = node_id
        self.requires_grad = requires_grad
        self.tape = tape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value, dtype=np.float64)
        return self._grad

    @property
    def shape(self):
        return np.shape(self.value)

    def _accumulate(self, g):
        g = _unbroadcast(g, np.shape(self.value))
        if self._grad is None:
            self._grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self._grad += g

    def __repr__(self):
        return f"Variable(node={self.node_id}, shape={self.shape})"


class Tape:
    """Ordered record of operations for one forward/backward pass."""

    def __init__(self):
        self.nodes: list[tuple[str, tuple[Variable, ...], Callable | None, Variable]] = []
        self._leaves = 0

    def variable(self, value, requires_grad: bool = True) -> Variable:
        """Register a leaf (a parameter or a constant input)."""
        self._leaves += 1
        return Variable(np.asarray(value, dtype=np.float64), self, -self._leaves,
                        requires_grad)

    def constant(self, value) -> Variable:
        return self.variable(value, requires_grad=False)

    def record(self, op_kind: str, inputs, forward_fn: Callable) -> Variable:
        """Run ``forward_fn`` on the input values and append the node.

        ``forward_fn(*values)`` returns ``(output_value, vjp)`` where
        ``vjp(upstream)`` returns one gradient (or ``None``) per input.
        """
        inputs = tuple(inputs)
        for v in inputs:
            if v.tape is not self:
                raise TapeError(f"{op_kind}: input {v!r} belongs to another tape")
        value, vjp = forward_fn(*(v.value for v in inputs))
        needs = any(v.requires_grad for v in inputs)
        out = Variable(value, self, len(self.nodes), needs)
        self.nodes.append((op_kind, inputs, vjp if needs else None, out))
        return out

    def backward(self, loss: Variable) -> None:
        if loss.tape is not self:
            raise TapeError("loss belongs to another tape")
        if np.ndim(loss.value) != 0:
            raise TapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        loss._grad = np.ones((), dtype=np.float64)
        for op_kind, inputs, vjp, out in reversed(self.nodes[: loss.node_id + 1]):
            if vjp is None or out._grad is None:
                continue
            grads = vjp(out._grad)
            for v, g in zip(inputs, grads):
                if g is not None and v.requires_grad:
                    v._accumulate(g)


def _unbroadcast(g, shape):
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise ---------------------------------------------------------------

def add(a: Variable, b: Variable) -> Variable:
    return a.tape.record("add", (a, b), lambda x, y: (x + y, lambda g: (g, g)))


def sub(a: Variable, b: Variable) -> Variable:
    return a.tape.record("sub", (a, b), lambda x, y: (x - y, lambda g: (g, -g)))


def scale(a: Variable, c: float) -> Variable:
    c = float(c)
    return a.tape.record("scale", (a,), lambda x: (x * c, lambda g: (g * c,)))


def hadamard(a: Variable, b: Variable) -> Variable:
    def fwd(x, y):
        return x * y, lambda g: (g * y, g * x)
    return a.tape.record("hadamard", (a, b), fwd)


def dot(a: Variable, b: Variable) -> Variable:
    def fwd(x, y):
        return np.asarray(x @ y), lambda g: (g * y, g * x)
    return a.tape.record("dot", (a, b), fwd)


def tanh(a: Variable) -> Variable:
    def fwd(x):
        y = np.tanh(x)
        return y, lambda g: (g * (1.0 - y * y),)
    return a.tape.record("tanh", (a,), fwd)


def sum(a: Variable, axis=None) -> Variable:  # noqa: A001 - mirrors numpy
    def fwd(x):
        y = np.sum(x, axis=axis)

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, x.shape),)
            return (np.broadcast_to(np.expand_dims(g, axis), x.shape),)
        return np.asarray(y), vjp
    return a.tape.record("sum", (a,), fwd)


def mean(a: Variable) -> Variable:
    def fwd(x):
        n = x.size
        return np.asarray(x.mean()), lambda g: (np.full(x.shape, g / n),)
    return a.tape.record("mean", (a,), fwd)


# linear maps ---------------------------------------------------------------

def matvec(W: Variable, x: Variable) -> Variable:
    """``x @ W.T`` for ``x`` of shape (..., n) and ``W`` of shape (m, n)."""
    def fwd(w, xv):
        def vjp(g):
            lead = list(range(g.ndim - 1))
            gw = np.tensordot(g, xv, axes=(lead, lead)) if lead else np.outer(g, xv)
            return gw, g @ w
        return xv @ w.T, vjp
    return W.tape.record("matvec", (W, x), fwd)


matmul = matvec


def affine(x: Variable, W: Variable, b: Variable) -> Variable:
    """``x @ W.T + b``."""
    def fwd(xv, w, bv):
        def vjp(g):
            lead = list(range(g.ndim - 1))
            gw = np.tensordot(g, xv, axes=(lead, lead)) if lead else np.outer(g, xv)
            gb = g.sum(axis=tuple(lead)) if lead else g
            return g @ w, gw, gb
        return xv @ w.T + bv, vjp
    return x.tape.record("affine", (x, W, b), fwd)


# tensor products -----------------------------------------------------------

def outer2(a: Variable, b: Variable) -> Variable:
    def fwd(x, y):
        out = x[..., :, None] * y[..., None, :]

        def vjp(g):
            return (g * y[..., None, :]).sum(-1), (g * x[..., :, None]).sum(-2)
        return out, vjp
    return a.tape.record("outer2", (a, b), fwd)


def unbind2(T: Variable, u: Variable) -> Variable:
    def fwd(t, uv):
        out = np.einsum("...ij,...j->...i", t, uv)

        def vjp(g):
            return g[..., :, None] * uv[..., None, :], np.einsum("...ij,...i->...j", t, g)
        return out, vjp
    return T.tape.record("unbind2", (T, u), fwd)


def outer3(a: Variable, b: Variable, c: Variable) -> Variable:
    def fwd(x, y, z):
        unb = x.ndim == 1
        xb, yb, zb = (v[None] if unb else v for v in (x, y, z))
        out = kernels.outer3(xb, yb, zb)

        def vjp(g):
            gb = g[None] if unb else g
            ga = np.einsum("nijk,nj,nk->ni", gb, yb, zb)
            gy = np.einsum("nijk,ni,nk->nj", gb, xb, zb)
            gz = kernels.unbind3(np.ascontiguousarray(gb), xb, yb)
            if unb:
                return ga[0], gy[0], gz[0]
            return ga, gy, gz
        return (out[0] if unb else out), vjp
    return a.tape.record("outer3", (a, b, c), fwd)


def unbind3(F: Variable, e: Variable, r: Variable) -> Variable:
    """Target fiber ``sum_ij F[..., i, j, k] e[..., i] r[..., j]``."""
    def fwd(f, ev, rv):
        unb = f.ndim == 3
        fb, eb, rb = (f[None], ev[None], rv[None]) if unb else (f, ev, rv)
        out = kernels.unbind3(fb, eb, rb)

        def vjp(g):
            gb = g[None] if unb else g
            dF, de, dr = kernels.unbind3_backward(fb, eb, rb, gb)
            if unb:
                return dF[0], de[0], dr[0]
            return dF, de, dr
        return (out[0] if unb else out), vjp
    return F.tape.record("unbind3", (F, e, r), fwd)


def tpr_step(F: Variable, e1: Variable, e2: Variable, r1: Variable,
             r2: Variable, r3: Variable, mask, use_write=True, use_move=True,
             use_backlink=True) -> Variable:
    """Fused batched write/move/backlink update (see ``kernels.tpr_step``).

    ``mask`` is a constant array of shape (B,).
    """
    mask = np.ascontiguousarray(mask, dtype=np.float64)
    flags = (bool(use_write), bool(use_move), bool(use_backlink))

    def fwd(f, a1, a2, b1, b2, b3):
        out, w, m, b = kernels.tpr_step(f, a1, a2, b1, b2, b3, mask, *flags)

        def vjp(g):
            return kernels.tpr_step_backward(
                np.ascontiguousarray(g), f, a1, a2, b1, b2, b3, w, m, b, mask, *flags)
        return out, vjp
    return F.tape.record("tpr_step", (F, e1, e2, r1, r2, r3), fwd)


# normalisation and loss ----------------------------------------------------

def layer_norm(x: Variable, gamma: Variable, beta: Variable,
               epsilon: float = 1e-6) -> Variable:
    """Normalise the last axis; ``gamma`` and ``beta`` are scalars."""
    def fwd(xv, gv, bv):
        mu = xv.mean(axis=-1, keepdims=True)
        xc = xv - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + epsilon)
        xhat = xc * inv
        out = gv * xhat + bv

        def vjp(g):
            gx_hat = g * gv
            gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
            return gx, np.sum(g * xhat), np.sum(g)
        return out, vjp
    return x.tape.record("layer_norm", (x, gamma, beta), fwd)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Variable, targets) -> Variable:
    """Mean cross-entropy over the batch (a single row is allowed).

    Gradient is ``(softmax - one_hot) / batch``.
    """
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))

    def fwd(z):
        zb = z[None] if z.ndim == 1 else z
        logp = log_softmax(zb)
        n = zb.shape[0]
        rows = np.arange(n)
        loss = -logp[rows, targets].mean()

        def vjp(g):
            p = np.exp(logp)
            p[rows, targets] -= 1.0
            p *= g / n
            return (p[0] if z.ndim == 1 else p,)
        return np.asarray(loss), vjp
    return logits.tape.record("softmax_cross_entropy", (logits,), fwd)


def embedding_gather(table: Variable, ids, frozen_rows=(0,)) -> Variable:
    """Rows ``table[ids]``; gradients scatter-add back into the table.

    Ids listed in ``frozen_rows`` (the padding id by default) gather a zero
    vector and their table rows never receive gradient.
    """
    ids = np.asarray(ids, dtype=np.int64)
    frozen = np.isin(ids, list(frozen_rows))

    def fwd(t):
        out = t[ids]
        out[frozen] = 0.0

        def vjp(g):
            gt = np.zeros_like(t)
            keep = ~frozen
            np.add.at(gt, ids[keep], g[keep])
            return (gt,)
        return out, vjp
    return table.tape.record("embedding_gather", (table,), fwd)


# gradient checking ---------------------------------------------------------

def grad_check(f: Callable[[Tape, Mapping[str, Variable]], Variable],
               params: Mapping[str, np.ndarray], eps: float = 1e-5) -> float:
    """Worst relative error between tape gradients and central differences.

    ``f(tape, variables)`` must build a scalar loss from the variables.
    The relative error of one entry is ``|a - n| / max(|a|, |n|)``; when
    both magnitudes are below 1e-8 the absolute error is used instead.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate(values):
        tape = Tape()
        vs = {k: tape.variable(v) for k, v in values.items()}
        loss = f(tape, vs)
        val = float(loss.value)
        if not np.isfinite(val):
            raise FloatingPointError("grad_check: f is not finite")
        return tape, vs, loss, val

    tape, vs, loss, _ = evaluate(base)
    tape.backward(loss)
    worst = 0.0
    for name, arr in base.items():
        analytic = vs[name].grad
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            fp = evaluate(base)[3]
            arr[idx] = orig - eps
            fm = evaluate(base)[3]
            arr[idx] = orig
            numeric = (fp - fm) / (2.0 * eps)
            a = analytic[idx]
            denom = max(abs(a), abs(numeric))
            err = abs(a - numeric) if denom < 1e-8 else abs(a - numeric) / denom
            worst = max(worst, err)
    return worst
