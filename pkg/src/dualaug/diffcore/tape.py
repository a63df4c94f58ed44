"""Reverse-mode differentiation over numpy arrays.

Math is written once against the op functions below. Plain ndarrays flow
straight through numpy; as soon as a Node is involved the op records onto
that Node's tape. Vector-Jacobian products are themselves expressed with
these ops, so running a backward pass with ``create_graph=True`` produces
gradients that are Nodes on the same tape — double backward (gradient
penalties) and second-order meta updates reuse the exact same machinery.

Everything is float64. Shapes stay at vector/matrix rank plus an optional
leading batch axis; there is no GPU path and none is planned.
"""

from __future__ import annotations

import numpy as np

from ..errors import NonScalarError

Array = np.ndarray


class Node:
    """One recorded value: the op that made it, its inputs, and a vjp."""

    __slots__ = ("value", "tape", "index", "op", "inputs", "vjp")

    def __init__(self, value: Array, tape: "Tape", op: str, inputs: tuple, vjp):
        self.value = value
        self.tape = tape
        self.index = len(tape.nodes)
        self.op = op
        self.inputs = inputs
        self.vjp = vjp
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"<Node #{self.index} {self.op} {self.value.shape}>"

    # Arithmetic sugar; heavy lifting stays in the module-level ops.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, c):
        return pow_const(self, c)

    def __getitem__(self, idx):
        return getitem(self, idx)


class Tape:
    """Append-only node list; creation order is a topological order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._bound: dict[int, dict[str, Node]] = {}
        self._bound_refs: list = []

    def leaf(self, value) -> Node:
        arr = np.asarray(value, dtype=np.float64)
        return Node(arr, self, "leaf", (), None)

    def constant(self, value) -> Array:
        # Constants never enter the graph; kept for call-site symmetry.
        return np.asarray(value, dtype=np.float64)

    def bind(self, store) -> dict[str, Node]:
        """Leaf nodes for every segment of a ParamStore, memoized per store.

        Repeated binds of the same store within one tape return the same
        leaves so gradients accumulate across multiple forward passes.
        Values are copied: mutating the store mid-tape will not corrupt
        recorded math.
        """
        key = id(store)
        if key not in self._bound:
            self._bound[key] = {
                name: self.leaf(store.segment(name).copy()) for name in store.names()
            }
            self._bound_refs.append(store)
        return self._bound[key]


def raw(x):
    """Underlying ndarray of a Node, or the input unchanged."""
    return x.value if isinstance(x, Node) else x


def _shape_of(x):
    return x.shape if isinstance(x, Node) else np.shape(x)


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Node):
            if tape is None:
                tape = x.tape
            elif tape is not x.tape:
                raise ValueError("cannot mix nodes from different tapes")
    return tape


def _record(tape, value, op, inputs, vjp) -> Node:
    return Node(np.asarray(value, dtype=np.float64), tape, op, inputs, vjp)


def _sum_to(g, shape):
    """Reduce an adjoint back to a broadcast operand's shape."""
    gshape = _shape_of(g)
    if gshape == tuple(shape):
        return g
    extra = len(gshape) - len(shape)
    if extra > 0:
        g = sum_axis(g, tuple(range(extra)), keepdims=False)
    axes = tuple(
        i for i, (gd, sd) in enumerate(zip(_shape_of(g), shape)) if sd == 1 and gd != 1
    )
    if axes:
        g = sum_axis(g, axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Primitive ops. Each vjp receives (g, inputs, out, needed) where inputs/out
# are Nodes when differentiating with create_graph and raw arrays otherwise;
# entries of the returned tuple may be None wherever needed[i] is False.
# ---------------------------------------------------------------------------


def add(a, b):
    t = _tape_of(a, b)
    if t is None:
        return np.add(a, b)

    def vjp(g, inputs, out, needed):
        ia, ib = inputs
        ga = _sum_to(g, _shape_of(ia)) if needed[0] else None
        gb = _sum_to(g, _shape_of(ib)) if needed[1] else None
        return ga, gb

    return _record(t, np.add(raw(a), raw(b)), "add", (a, b), vjp)


def sub(a, b):
    t = _tape_of(a, b)
    if t is None:
        return np.subtract(a, b)

    def vjp(g, inputs, out, needed):
        ia, ib = inputs
        ga = _sum_to(g, _shape_of(ia)) if needed[0] else None
        gb = _sum_to(neg(g), _shape_of(ib)) if needed[1] else None
        return ga, gb

    return _record(t, np.subtract(raw(a), raw(b)), "sub", (a, b), vjp)


def neg(a):
    if not isinstance(a, Node):
        return np.negative(a)

    def vjp(g, inputs, out, needed):
        return (neg(g),)

    return _record(a.tape, np.negative(a.value), "neg", (a,), vjp)


def mul(a, b):
    t = _tape_of(a, b)
    if t is None:
        return np.multiply(a, b)

    def vjp(g, inputs, out, needed):
        ia, ib = inputs
        ga = _sum_to(mul(g, ib), _shape_of(ia)) if needed[0] else None
        gb = _sum_to(mul(g, ia), _shape_of(ib)) if needed[1] else None
        return ga, gb

    return _record(t, np.multiply(raw(a), raw(b)), "mul", (a, b), vjp)


def div(a, b):
    t = _tape_of(a, b)
    if t is None:
        return np.divide(a, b)

    def vjp(g, inputs, out, needed):
        ia, ib = inputs
        ga = _sum_to(div(g, ib), _shape_of(ia)) if needed[0] else None
        gb = (
            _sum_to(neg(div(mul(g, out), ib)), _shape_of(ib)) if needed[1] else None
        )
        return ga, gb

    return _record(t, np.divide(raw(a), raw(b)), "div", (a, b), vjp)


def matmul(a, b):
    """Matrix product with numpy batch broadcasting; operands must be >= 2-D."""
    t = _tape_of(a, b)
    if t is None:
        return np.matmul(a, b)

    def vjp(g, inputs, out, needed):
        ia, ib = inputs
        ga = _sum_to(matmul(g, swap_last(ib)), _shape_of(ia)) if needed[0] else None
        gb = _sum_to(matmul(swap_last(ia), g), _shape_of(ib)) if needed[1] else None
        return ga, gb

    return _record(t, np.matmul(raw(a), raw(b)), "matmul", (a, b), vjp)


def swap_last(a):
    if not isinstance(a, Node):
        return np.swapaxes(a, -1, -2)

    def vjp(g, inputs, out, needed):
        return (swap_last(g),)

    return _record(a.tape, np.swapaxes(a.value, -1, -2), "swap_last", (a,), vjp)


def pow_const(a, c: float):
    if not isinstance(a, Node):
        return np.power(a, c)
    c = float(c)

    def vjp(g, inputs, out, needed):
        (ia,) = inputs
        return (mul(g, mul(pow_const(ia, c - 1.0), c)),)

    return _record(a.tape, np.power(a.value, c), "pow", (a,), vjp)


def sqrt(a):
    if not isinstance(a, Node):
        return np.sqrt(a)

    def vjp(g, inputs, out, needed):
        return (div(g, mul(out, 2.0)),)

    return _record(a.tape, np.sqrt(a.value), "sqrt", (a,), vjp)


def exp(a):
    if not isinstance(a, Node):
        return np.exp(a)

    def vjp(g, inputs, out, needed):
        return (mul(g, out),)

    return _record(a.tape, np.exp(a.value), "exp", (a,), vjp)


def tanh(a):
    if not isinstance(a, Node):
        return np.tanh(a)

    def vjp(g, inputs, out, needed):
        return (mul(g, sub(1.0, mul(out, out))),)

    return _record(a.tape, np.tanh(a.value), "tanh", (a,), vjp)


def sin(a):
    if not isinstance(a, Node):
        return np.sin(a)

    def vjp(g, inputs, out, needed):
        (ia,) = inputs
        return (mul(g, cos(ia)),)

    return _record(a.tape, np.sin(a.value), "sin", (a,), vjp)


def cos(a):
    if not isinstance(a, Node):
        return np.cos(a)

    def vjp(g, inputs, out, needed):
        (ia,) = inputs
        return (neg(mul(g, sin(ia))),)

    return _record(a.tape, np.cos(a.value), "cos", (a,), vjp)


def leaky_relu(a, slope: float = 0.01):
    if not isinstance(a, Node):
        return np.where(a > 0, a, slope * a)
    mask = np.where(a.value > 0, 1.0, slope)

    def vjp(g, inputs, out, needed):
        return (mul(g, mask),)

    value = np.where(a.value > 0, a.value, slope * a.value)
    return _record(a.tape, value, "leaky_relu", (a,), vjp)


def cross3(a, b):
    """Cross product over the last axis (length 3)."""
    t = _tape_of(a, b)
    if t is None:
        return np.cross(a, b)

    def vjp(g, inputs, out, needed):
        ia, ib = inputs
        ga = _sum_to(cross3(ib, g), _shape_of(ia)) if needed[0] else None
        gb = _sum_to(cross3(g, ia), _shape_of(ib)) if needed[1] else None
        return ga, gb

    return _record(t, np.cross(raw(a), raw(b)), "cross3", (a, b), vjp)


def sum_all(a):
    if not isinstance(a, Node):
        return np.sum(a)
    shape = a.value.shape

    def vjp(g, inputs, out, needed):
        return (mul(g, np.ones(shape)),)

    return _record(a.tape, np.sum(a.value), "sum_all", (a,), vjp)


def sum_axis(a, axis, keepdims: bool = False):
    if not isinstance(a, Node):
        return np.sum(a, axis=axis, keepdims=keepdims)
    shape = a.value.shape
    axes = (axis,) if isinstance(axis, int) else tuple(axis)

    def vjp(g, inputs, out, needed):
        if not keepdims:
            kshape = list(shape)
            for ax in axes:
                kshape[ax] = 1
            g = reshape(g, tuple(kshape))
        return (mul(g, np.ones(shape)),)

    value = np.sum(a.value, axis=axes, keepdims=keepdims)
    return _record(a.tape, value, "sum_axis", (a,), vjp)


def mean_all(a):
    n = float(np.prod(_shape_of(a))) if _shape_of(a) else 1.0
    return mul(sum_all(a), 1.0 / n)


def reshape(a, shape):
    if not isinstance(a, Node):
        return np.reshape(a, shape)
    old = a.value.shape

    def vjp(g, inputs, out, needed):
        return (reshape(g, old),)

    return _record(a.tape, np.reshape(a.value, shape), "reshape", (a,), vjp)


def concat(parts, axis: int = -1):
    t = _tape_of(*parts)
    if t is None:
        return np.concatenate(parts, axis=axis)
    sizes = [_shape_of(p)[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)
    ndim = len(_shape_of(parts[0]))
    ax = axis % ndim

    def vjp(g, inputs, out, needed):
        grads = []
        for i in range(len(inputs)):
            if not needed[i]:
                grads.append(None)
                continue
            idx = tuple(
                slice(offsets[i], offsets[i + 1]) if d == ax else slice(None)
                for d in range(ndim)
            )
            grads.append(getitem(g, idx))
        return tuple(grads)

    value = np.concatenate([raw(p) for p in parts], axis=axis)
    return _record(t, value, "concat", tuple(parts), vjp)


def getitem(a, idx):
    """Basic (non-fancy) indexing; adjoint scatters back into zeros."""
    if not isinstance(a, Node):
        return a[idx]
    shape = a.value.shape

    def vjp(g, inputs, out, needed):
        return (unslice(g, shape, idx),)

    return _record(a.tape, a.value[idx], "getitem", (a,), vjp)


def unslice(g, shape, idx):
    """Embed g into zeros of the given shape at a basic-slice location."""
    if not isinstance(g, Node):
        out = np.zeros(shape)
        out[idx] = g
        return out

    def vjp(gg, inputs, out, needed):
        return (getitem(gg, idx),)

    value = np.zeros(shape)
    value[idx] = g.value
    return _record(g.tape, value, "unslice", (g,), vjp)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def backward(loss: Node, wrt, create_graph: bool = False):
    """Gradients of a scalar node with respect to the given leaf nodes.

    Returns one array per wrt entry (zeros where the loss does not depend
    on it). With create_graph=True the returned gradients may themselves
    be Nodes, differentiable with respect to anything upstream; the tape
    gains the nodes created along the way but existing nodes are untouched,
    so the pass is re-runnable.
    """
    if not isinstance(loss, Node):
        raise NonScalarError("loss must be a recorded node")
    if loss.value.shape != ():
        raise NonScalarError(f"loss must be scalar, got shape {loss.value.shape}")
    wrt = list(wrt)
    nodes = loss.tape.nodes

    # Ancestors of the loss, by index.
    ancestors: set[int] = set()
    stack = [loss]
    while stack:
        n = stack.pop()
        if n.index in ancestors:
            continue
        ancestors.add(n.index)
        for inp in n.inputs:
            if isinstance(inp, Node):
                stack.append(inp)

    # Which ancestors can reach a wrt leaf (restricts the adjoint sweep).
    depends: set[int] = {w.index for w in wrt if w.index in ancestors}
    for idx in sorted(ancestors):
        if idx in depends:
            continue
        node = nodes[idx]
        if any(isinstance(i, Node) and i.index in depends for i in node.inputs):
            depends.add(idx)

    adjoint = {loss.index: np.ones(())}
    for idx in sorted(ancestors, reverse=True):
        if idx not in adjoint:
            continue
        node = nodes[idx]
        if node.op == "leaf":
            continue
        g = adjoint.pop(idx)
        needed = tuple(
            isinstance(i, Node) and i.index in depends for i in node.inputs
        )
        if not any(needed):
            continue
        if create_graph:
            contribs = node.vjp(g, node.inputs, node, needed)
        else:
            contribs = node.vjp(
                g, tuple(raw(i) for i in node.inputs), node.value, needed
            )
        for inp, c in zip(node.inputs, contribs):
            if c is None:
                continue
            if inp.index in adjoint:
                adjoint[inp.index] = add(adjoint[inp.index], c)
            else:
                adjoint[inp.index] = c

    return [adjoint.get(w.index, np.zeros(w.value.shape)) for w in wrt]


def grad_norm(output: Node, wrt_inputs):
    """Euclidean norm of d(output)/d(inputs), itself differentiable.

    The inner gradient is built with create_graph=True, so the returned
    scalar can be backpropagated again (e.g. to network parameters).
    """
    grads = backward(output, wrt_inputs, create_graph=True)
    total = None
    for g in grads:
        term = sum_all(mul(g, g))
        total = term if total is None else add(total, term)
    return sqrt(total)
