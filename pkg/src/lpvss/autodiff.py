"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Every recorded value is an array whose last two axes are the matrix
dimensions; any leading axes are batch axes (for instance trajectories and
time steps). Elementwise operations require identical shapes and raise
:class:`ShapeMismatch` when the operation is recorded, so bias terms and
shared scalars are expanded with the explicit :meth:`Var.broadcast_to`.
Matrix products and linear solves follow numpy's batch broadcasting; their
adjoints sum the gradient back down to the operand's shape.

Typical use::

    tape = Tape()
    w = tape.param(w0)
    loss = (w @ x).relu().sum()
    grads = tape.backward(loss)   # {w.id: dL/dw}
"""

import numpy as np

from .errors import ShapeMismatch, SingularMatrix


def _sum_to_shape(g, shape):
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _mT(a):
    return np.swapaxes(a, -1, -2)


class _Indexed:
    """Sparse gradient contribution: ``value`` lands at ``index`` of the parent."""

    __slots__ = ("index", "value", "basic")

    def __init__(self, index, value):
        self.index = index
        self.value = value
        parts = index if isinstance(index, tuple) else (index,)
        # basic indices never repeat a location, so += is safe and fast
        self.basic = all(isinstance(i, (int, np.integer, slice, type(Ellipsis))) or i is None
                         for i in parts)

    def add_into(self, buf):
        if self.basic:
            buf[self.index] += self.value
        else:
            np.add.at(buf, self.index, self.value)


class _Node:
    __slots__ = ("value", "parents", "vjp", "needs_grad", "is_param")

    def __init__(self, value, parents, vjp, needs_grad, is_param=False):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.needs_grad = needs_grad
        self.is_param = is_param


class Tape:
    """Append-only record of operations.

    Nodes are stored in creation order, so parents always precede children
    and a single reverse sweep visits every node once.
    """

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def _push(self, value, parents=(), vjp=None, is_param=False):
        needs = is_param or any(self.nodes[p].needs_grad for p in parents)
        self.nodes.append(_Node(value, parents, vjp if needs else None, needs, is_param))
        return Var(self, len(self.nodes) - 1)

    def param(self, value):
        """Record a trainable leaf."""
        return self._push(np.array(value, dtype=np.float64), is_param=True)

    def const(self, value):
        """Record a leaf that never receives a gradient."""
        return self._push(np.asarray(value, dtype=np.float64))

    def backward(self, loss):
        """Gradients of a scalar ``loss`` with respect to every parameter leaf.

        Returns ``{node_id: gradient}``; leaves that do not influence the loss
        get an all-zero gradient.
        """
        if loss.tape is not self:
            raise ValueError("loss belongs to another tape")
        if loss.shape not in ((1, 1), (1,), ()):
            raise ShapeMismatch(f"loss must be scalar, got shape {loss.shape}")
        grads = {loss.id: np.ones(loss.shape)}
        nodes = self.nodes
        for i in range(loss.id, -1, -1):
            g = grads.get(i)
            node = nodes[i]
            if g is None or node.vjp is None:
                continue
            if not node.is_param:
                del grads[i]
            contribs = node.vjp(g)
            for pid, c in zip(node.parents, contribs):
                if c is None or not nodes[pid].needs_grad:
                    continue
                if isinstance(c, _Indexed):
                    buf = grads.get(pid)
                    if buf is None:
                        buf = np.zeros(nodes[pid].value.shape)
                        grads[pid] = buf
                    c.add_into(buf)
                else:
                    prev = grads.get(pid)
                    # copy on first store: vjp results may alias other buffers
                    grads[pid] = np.array(c, dtype=np.float64) if prev is None else prev + c
        return {
            i: grads.get(i, np.zeros(n.value.shape))
            for i, n in enumerate(nodes)
            if n.is_param
        }

    def grad(self, loss, wrt):
        """Gradients of ``loss`` for the listed parameter Vars, in order."""
        g = self.backward(loss)
        return [g[v.id] for v in wrt]


def _check_same(op, a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


class Var:
    """Handle to a recorded value."""

    __slots__ = ("tape", "id")
    __array_priority__ = 100

    def __init__(self, tape, node_id):
        self.tape = tape
        self.id = node_id

    @property
    def value(self):
        return self.tape.nodes[self.id].value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape})"

    def _lift(self, other):
        return other if isinstance(other, Var) else self.tape.const(other)

    # elementwise ------------------------------------------------------
    def __add__(self, other):
        other = self._lift(other)
        _check_same("add", self, other)
        return self.tape._push(self.value + other.value, (self.id, other.id), lambda g: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        other = self._lift(other)
        _check_same("sub", self, other)
        return self.tape._push(self.value - other.value, (self.id, other.id), lambda g: (g, -g))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __neg__(self):
        return self.tape._push(-self.value, (self.id,), lambda g: (-g,))

    def __mul__(self, other):
        if np.isscalar(other):
            return self.scale(other)
        other = self._lift(other)
        _check_same("mul", self, other)
        a, b = self.value, other.value
        return self.tape._push(a * b, (self.id, other.id), lambda g: (g * b, g * a))

    def __rmul__(self, other):
        return self.__mul__(other)

    def scale(self, c):
        c = float(c)
        return self.tape._push(c * self.value, (self.id,), lambda g: (c * g,))

    def exp(self):
        out = np.exp(self.value)
        return self.tape._push(out, (self.id,), lambda g: (g * out,))

    def relu(self):
        mask = self.value > 0.0
        return self.tape._push(np.where(mask, self.value, 0.0), (self.id,), lambda g: (g * mask,))

    def sigmoid(self):
        out = 0.5 * (1.0 + np.tanh(0.5 * self.value))
        return self.tape._push(out, (self.id,), lambda g: (g * out * (1.0 - out),))

    # linear algebra ---------------------------------------------------
    def __matmul__(self, other):
        other = self._lift(other)
        a, b = self.value, other.value
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeMismatch(f"matmul: shapes {a.shape} and {b.shape}")
        try:
            out = np.matmul(a, b)
        except ValueError as exc:
            raise ShapeMismatch(f"matmul: {exc}") from None
        sa, sb = a.shape, b.shape

        def vjp(g):
            return _sum_to_shape(g @ _mT(b), sa), _sum_to_shape(_mT(a) @ g, sb)

        return self.tape._push(out, (self.id, other.id), vjp)

    def __rmatmul__(self, other):
        return self._lift(other) @ self

    @property
    def T(self):
        return self.tape._push(_mT(self.value), (self.id,), lambda g: (_mT(g),))

    def sum(self):
        """Sum of all entries as a ``(1, 1)`` Var."""
        shape = self.shape
        return self.tape._push(
            np.array([[self.value.sum()]]), (self.id,), lambda g: (np.broadcast_to(g[0, 0], shape),)
        )

    def broadcast_to(self, shape):
        shape = tuple(shape)
        try:
            out = np.broadcast_to(self.value, shape)
        except ValueError as exc:
            raise ShapeMismatch(f"broadcast_to: {exc}") from None
        src = self.shape
        return self.tape._push(out, (self.id,), lambda g: (_sum_to_shape(g, src),))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        src = self.shape
        try:
            out = self.value.reshape(shape)
        except ValueError as exc:
            raise ShapeMismatch(f"reshape: {exc}") from None
        return self.tape._push(out, (self.id,), lambda g: (g.reshape(src),))

    def __getitem__(self, index):
        out = self.value[index]
        return self.tape._push(out, (self.id,), lambda g: (_Indexed(index, g),))


def concat(vars_, axis=-1):
    """Concatenate Vars along an existing axis (block assembly)."""
    tape = vars_[0].tape
    vals = [v.value for v in vars_]
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {exc}") from None
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return tape._push(out, tuple(v.id for v in vars_), vjp)


def block(rows):
    """Assemble a block matrix from a nested list of Vars."""
    return concat([concat(list(r), axis=-1) for r in rows], axis=-2)


def stack(vars_, axis=0):
    tape = vars_[0].tape
    try:
        out = np.stack([v.value for v in vars_], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"stack: {exc}") from None
    n = len(vars_)

    def vjp(g):
        return tuple(np.take(g, k, axis=axis) for k in range(n))

    return tape._push(out, tuple(v.id for v in vars_), vjp)


def diag(v):
    """Diagonal matrix from a vector Var of shape ``(..., n)`` or ``(..., n, 1)``."""
    vec = v.value
    col = vec.ndim >= 2 and vec.shape[-1] == 1
    d = vec[..., 0] if col else vec
    n = d.shape[-1]
    out = d[..., :, None] * np.eye(n)
    src = vec.shape

    def vjp(g):
        return (np.diagonal(g, axis1=-2, axis2=-1).reshape(src),)

    return v.tape._push(out, (v.id,), vjp)


def solve(a, b):
    """``a^{-1} b`` with batch broadcasting over leading axes."""
    av, bv = a.value, b.value
    if av.shape[-1] != av.shape[-2] or av.shape[-1] != bv.shape[-2]:
        raise ShapeMismatch(f"solve: shapes {av.shape} and {bv.shape}")
    try:
        x = np.linalg.solve(av, bv)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(str(exc)) from None
    if not np.all(np.isfinite(x)):
        raise SingularMatrix("solve produced non-finite values")
    sa, sb = av.shape, bv.shape

    def vjp(g):
        gb = np.linalg.solve(_mT(av), g)
        ga = -gb @ _mT(x)
        return _sum_to_shape(ga, sa), _sum_to_shape(gb, sb)

    return a.tape._push(x, (a.id, b.id), vjp)


def linear_solve_adjoint(a, x, grad_out):
    """Adjoint of ``x = a^{-1} b``: returns ``(grad_a, grad_b)``."""
    gb = np.linalg.solve(_mT(a), grad_out)
    return -gb @ _mT(x), gb


def eye_like(tape, n, batch_shape=()):
    return tape.const(np.broadcast_to(np.eye(n), tuple(batch_shape) + (n, n)))
