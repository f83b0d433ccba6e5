"""Dense float64 tensors with reverse-mode gradient propagation.

Values are C-contiguous float64 ndarrays living on graph nodes. Shape
coercion is deliberately strict: elementwise operations accept equal
shapes or a size-1 (scalar) operand, nothing else; every other
rearrangement is an explicit op (transpose, reshape, repeat_rows, ...).
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Incompatible operand shapes; carries the offending shapes."""

    def __init__(self, message: str, *shapes):
        super().__init__(f"{message}: {' vs '.join(str(tuple(s)) for s in shapes)}"
                         if shapes else message)
        self.shapes = tuple(tuple(s) for s in shapes)


def as_tensor(x) -> np.ndarray:
    """Coerce to the canonical tensor representation (contiguous float64)."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    return arr


class Node:
    """One value in the computation graph.

    `grad` (same shape as `value`) is allocated lazily during backward;
    accumulation is additive, so a node consumed by k downstream ops
    receives the sum of k contributions. `needs_grad` marks nodes on a
    path from a parameter, letting backward skip constant subgraphs.
    """

    __slots__ = ("value", "grad", "_parents", "_backward", "needs_grad")

    def __init__(self, value: np.ndarray, parents=(), backward=None,
                 needs_grad: bool | None = None):
        self.value = value
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward
        if needs_grad is None:
            needs_grad = any(p.needs_grad for p in parents)
        self.needs_grad = needs_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape}, needs_grad={self.needs_grad})"


def _entry_check(arr: np.ndarray, kind: str) -> None:
    # Missing values must be resolved before graph entry.
    if not np.isfinite(arr).all():
        raise ValueError(f"non-finite values entering the graph via {kind}")


def constant(x) -> Node:
    arr = as_tensor(x)
    _entry_check(arr, "constant")
    return Node(arr, needs_grad=False)


def parameter(x) -> Node:
    arr = as_tensor(x)
    _entry_check(arr, "parameter")
    return Node(arr, needs_grad=True)


def _node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _acc(node: Node, g: np.ndarray) -> None:
    if not node.needs_grad:
        return
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    # Only the scalar-broadcast case can make grad and operand shapes differ.
    if g.shape == tuple(shape):
        return g
    return np.asarray(g.sum()).reshape(shape)


def _ew_shapes(a: Node, b: Node, opname: str) -> None:
    if a.value.shape == b.value.shape:
        return
    if a.value.size == 1 or b.value.size == 1:
        return
    raise ShapeError(f"{opname}: shapes differ and neither is scalar",
                     a.value.shape, b.value.shape)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Node:
    a, b = _node(a), _node(b)
    _ew_shapes(a, b, "add")
    out = Node(a.value + b.value, (a, b))

    def back():
        _acc(a, _unbroadcast(out.grad, a.value.shape))
        _acc(b, _unbroadcast(out.grad, b.value.shape))
    out._backward = back
    return out


def sub(a, b) -> Node:
    a, b = _node(a), _node(b)
    _ew_shapes(a, b, "sub")
    out = Node(a.value - b.value, (a, b))

    def back():
        _acc(a, _unbroadcast(out.grad, a.value.shape))
        _acc(b, _unbroadcast(-out.grad, b.value.shape))
    out._backward = back
    return out


def mul(a, b) -> Node:
    a, b = _node(a), _node(b)
    _ew_shapes(a, b, "mul")
    out = Node(a.value * b.value, (a, b))

    def back():
        _acc(a, _unbroadcast(out.grad * b.value, a.value.shape))
        _acc(b, _unbroadcast(out.grad * a.value, b.value.shape))
    out._backward = back
    return out


def neg(a) -> Node:
    a = _node(a)
    out = Node(-a.value, (a,))

    def back():
        _acc(a, -out.grad)
    out._backward = back
    return out


def tanh(a) -> Node:
    a = _node(a)
    out = Node(np.tanh(a.value), (a,))

    def back():
        _acc(a, out.grad * (1.0 - out.value * out.value))
    out._backward = back
    return out


def sigmoid(a) -> Node:
    a = _node(a)
    x = a.value
    # Split by sign so exp never overflows.
    val = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Node(val, (a,))

    def back():
        _acc(a, out.grad * out.value * (1.0 - out.value))
    out._backward = back
    return out


def relu(a) -> Node:
    a = _node(a)
    out = Node(np.maximum(a.value, 0.0), (a,))

    def back():
        # Subgradient at 0 chosen as 0.
        _acc(a, out.grad * (a.value > 0.0))
    out._backward = back
    return out


def square(a) -> Node:
    a = _node(a)
    out = Node(a.value * a.value, (a,))

    def back():
        _acc(a, out.grad * 2.0 * a.value)
    out._backward = back
    return out


def exp(a) -> Node:
    a = _node(a)
    out = Node(np.exp(a.value), (a,))

    def back():
        _acc(a, out.grad * out.value)
    out._backward = back
    return out


def log(a) -> Node:
    a = _node(a)
    out = Node(np.log(a.value), (a,))

    def back():
        _acc(a, out.grad / a.value)
    out._backward = back
    return out


def sqrt(a) -> Node:
    a = _node(a)
    out = Node(np.sqrt(a.value), (a,))

    def back():
        _acc(a, out.grad * 0.5 / out.value)
    out._backward = back
    return out


_EW_OPS = {"add": add, "sub": sub, "mul": mul, "tanh": tanh,
           "sigmoid": sigmoid, "relu": relu, "square": square}


def elementwise(op: str, *args) -> Node:
    """Dispatch by name over the supported pointwise operations."""
    try:
        fn = _EW_OPS[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# structural / reduction ops


def matmul(a, b) -> Node:
    a, b = _node(a), _node(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeError("matmul: operands must be 2-d",
                         a.value.shape, b.value.shape)
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError("matmul: inner dimensions disagree",
                         a.value.shape, b.value.shape)
    out = Node(a.value @ b.value, (a, b))

    def back():
        _acc(a, out.grad @ b.value.T)
        _acc(b, a.value.T @ out.grad)
    out._backward = back
    return out


def transpose(a) -> Node:
    a = _node(a)
    out = Node(np.ascontiguousarray(a.value.T), (a,))

    def back():
        _acc(a, out.grad.T)
    out._backward = back
    return out


def reshape(a, shape) -> Node:
    a = _node(a)
    out = Node(a.value.reshape(shape), (a,))

    def back():
        _acc(a, out.grad.reshape(a.value.shape))
    out._backward = back
    return out


def repeat_rows(a, n: int) -> Node:
    """Tile a 1×k row to n×k (explicit row broadcast)."""
    a = _node(a)
    if a.value.ndim != 2 or a.value.shape[0] != 1:
        raise ShapeError("repeat_rows: expected a 1×k row", a.value.shape)
    out = Node(np.repeat(a.value, n, axis=0), (a,))

    def back():
        _acc(a, out.grad.sum(axis=0, keepdims=True))
    out._backward = back
    return out


def concat_cols(nodes) -> Node:
    """Concatenate m×k_i blocks along columns."""
    nodes = [_node(x) for x in nodes]
    if not nodes:
        raise ShapeError("concat_cols: empty input")
    rows = nodes[0].value.shape[0]
    for x in nodes:
        if x.value.ndim != 2 or x.value.shape[0] != rows:
            raise ShapeError("concat_cols: row counts differ",
                             nodes[0].value.shape, x.value.shape)
    out = Node(np.concatenate([x.value for x in nodes], axis=1), tuple(nodes))
    widths = [x.value.shape[1] for x in nodes]

    def back():
        off = 0
        for x, w in zip(nodes, widths):
            _acc(x, out.grad[:, off:off + w])
            off += w
    out._backward = back
    return out


def slice_cols(a, start: int, stop: int) -> Node:
    """Columns [start, stop) of an m×n matrix."""
    a = _node(a)
    if a.value.ndim != 2 or not (0 <= start < stop <= a.value.shape[1]):
        raise ShapeError(f"slice_cols: bad range [{start}, {stop})", a.value.shape)
    out = Node(np.ascontiguousarray(a.value[:, start:stop]), (a,))

    def back():
        if a.needs_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.value)
            a.grad[:, start:stop] += out.grad
    out._backward = back
    return out


def sum_rows(a) -> Node:
    """Row sums of an m×n matrix, as m×1."""
    a = _node(a)
    if a.value.ndim != 2:
        raise ShapeError("sum_rows: expected 2-d input", a.value.shape)
    out = Node(a.value.sum(axis=1, keepdims=True), (a,))

    def back():
        _acc(a, np.broadcast_to(out.grad, a.value.shape))
    out._backward = back
    return out


def scale_rows(a, s) -> Node:
    """Scale each row of m×n `a` by the matching entry of m×1 `s`."""
    a, s = _node(a), _node(s)
    if a.value.ndim != 2 or s.value.shape != (a.value.shape[0], 1):
        raise ShapeError("scale_rows: need m×n and m×1",
                         a.value.shape, s.value.shape)
    out = Node(a.value * s.value, (a, s))

    def back():
        _acc(a, out.grad * s.value)
        _acc(s, (out.grad * a.value).sum(axis=1, keepdims=True))
    out._backward = back
    return out


def sum_all(a) -> Node:
    a = _node(a)
    out = Node(np.asarray(a.value.sum()), (a,))

    def back():
        _acc(a, np.broadcast_to(out.grad, a.value.shape))
    out._backward = back
    return out


def mean_all(a) -> Node:
    a = _node(a)
    n = a.value.size
    out = Node(np.asarray(a.value.mean()), (a,))

    def back():
        _acc(a, np.broadcast_to(out.grad / n, a.value.shape))
    out._backward = back
    return out


def softmax(a) -> Node:
    """Row-wise softmax with max subtraction for stability."""
    a = _node(a)
    if a.value.ndim != 2 or a.value.shape[1] < 1:
        raise ShapeError("softmax: expected a nonempty 2-d input", a.value.shape)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    val = e / e.sum(axis=1, keepdims=True)
    out = Node(val, (a,))

    def back():
        y, g = out.value, out.grad
        _acc(a, y * (g - (g * y).sum(axis=1, keepdims=True)))
    out._backward = back
    return out


# ---------------------------------------------------------------------------
# backward pass


def _topo(root: Node):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Reverse topological sweep from a scalar loss.

    Every reachable node with `needs_grad` receives its total derivative.
    """
    if loss.value.size != 1:
        raise ShapeError("backward: loss must be scalar", loss.value.shape)
    order = _topo(loss)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None and node.needs_grad:
            node._backward()


# ---------------------------------------------------------------------------
# finite-difference gradient checking


class GradCheckReport:
    """Per-group worst relative errors from a central-difference sweep."""

    def __init__(self, tol: float):
        self.tol = tol
        self.max_rel_err: dict[str, float] = {}
        self.flagged: list[tuple[str, tuple, str]] = []
        self.worst: tuple[str, tuple, float] | None = None

    @property
    def passed(self) -> bool:
        return all(e < self.tol for e in self.max_rel_err.values())

    def __repr__(self):
        lines = [f"grad_check tol={self.tol:g} passed={self.passed}"]
        for name, err in sorted(self.max_rel_err.items()):
            lines.append(f"  {name}: max rel err {err:.3e}")
        for name, idx, reason in self.flagged:
            lines.append(f"  flagged {name}{list(idx)}: {reason}")
        return "\n".join(lines)


def grad_check(f, params: dict, step: float = 1e-5, tol: float = 1e-4,
               kink_tol: float = 1e-3) -> GradCheckReport:
    """Compare analytic gradients of `f` against central differences.

    `f` maps {name: parameter Node} to a scalar loss Node. Relative error
    uses a max(|analytic|, |numeric|, 1e-8) denominator. Entries where the
    two one-sided slopes disagree (nonsmooth point, e.g. a relu kink) or
    where f evaluates non-finite are flagged rather than failed.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")

    nodes = {k: parameter(v) for k, v in params.items()}
    loss = f(nodes)
    backward(loss)
    f0 = loss.value.item()
    analytic = {k: (n.grad if n.grad is not None else np.zeros_like(n.value))
                for k, n in nodes.items()}

    work = {k: as_tensor(v).copy() for k, v in params.items()}

    def evaluate() -> float:
        return f({k: parameter(v) for k, v in work.items()}).value.item()

    report = GradCheckReport(tol)
    for name, arr in work.items():
        worst = 0.0
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            f_plus = evaluate()
            arr[idx] = orig - step
            f_minus = evaluate()
            arr[idx] = orig

            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                report.flagged.append((name, idx, "non-finite evaluation"))
                continue
            slope_p = (f_plus - f0) / step
            slope_m = (f0 - f_minus) / step
            if abs(slope_p - slope_m) > kink_tol * (1.0 + abs(slope_p) + abs(slope_m)):
                report.flagged.append((name, idx, "one-sided slopes disagree"))
                continue

            fd = (f_plus - f_minus) / (2.0 * step)
            an = float(analytic[name][idx])
            err = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            if err > worst:
                worst = err
                if report.worst is None or err > report.worst[2]:
                    report.worst = (name, idx, err)
        report.max_rel_err[name] = worst
    return report
