"""Static reverse-mode autodiff over time-series values.

A :class:`Graph` is built once by appending nodes whose inputs already
exist, so insertion order is a topological order. ``forward`` evaluates
the ancestors of the requested output in that order; ``backward`` sweeps
them in reverse, accumulating adjoints additively across fan-out.

Values are float64 arrays. Signals are time-major ``(T, c)``; parameter and
scalar-expression nodes may have any shape, and the elementwise node kinds
apply to whatever shape they receive.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import lti
from .errors import GraphError, ShapeError


class Node:
    kind = "node"

    def __init__(self, name, inputs=()):
        self.name = name
        self.inputs = tuple(inputs)
        self.value = None
        self.grad = None
        self.requires_grad = any(n.requires_grad for n in self.inputs)

    def forward(self, *xs):
        raise NotImplementedError

    def backward(self, g, *xs):
        """Return one adjoint per input (``None`` where not needed)."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class Input(Node):
    kind = "input"

    def __init__(self, name, channels, requires_grad=True):
        super().__init__(name)
        self.channels = channels
        self.requires_grad = requires_grad


class Param(Node):
    """Leaf holding a parameter array.

    ``group`` selects the initialisation policy (``"lti"``, ``"static"`` or
    ``None`` for values that are never re-initialised).
    """

    kind = "param"

    def __init__(self, name, value, trainable=True, group=None, fan_in=None):
        super().__init__(name)
        self.value = np.array(value, dtype=np.float64)
        self.trainable = trainable
        self.requires_grad = trainable
        self.group = group
        self.fan_in = fan_in


class GBlock(Node):
    kind = "gblock"

    def __init__(self, name, u, b, a):
        super().__init__(name, (u, b, a))
        self._entries = None

    def forward(self, u, b, a):
        op = lti.MimoOperator(b, a)
        self._entries = lti.mimo_entry_outputs(u, op)
        return self._entries.sum(axis=2)

    def backward(self, g, u, b, a):
        nu, nb, na = (n.requires_grad for n in self.inputs)
        grads = lti.mimo_backward(u, lti.MimoOperator(b, a), g, self._entries, nu, nb, na)
        return grads.u_bar, grads.b_bar, grads.a_bar


class Fir(Node):
    kind = "fir"

    def __init__(self, name, u, b):
        super().__init__(name, (u, b))

    def forward(self, u, b):
        return lti.mimo_fir_forward(u, b)

    def backward(self, g, u, b):
        b_bar, u_bar = lti.mimo_fir_backward(u, b, g)
        return u_bar, b_bar


class Affine(Node):
    """Per-time-step dense map ``x @ W.T + bias``."""

    kind = "affine"

    def __init__(self, name, x, weight, bias):
        super().__init__(name, (x, weight, bias))

    def forward(self, x, w, bias):
        if x.shape[-1] != w.shape[1]:
            raise ShapeError(f"{self.name}: input has {x.shape[-1]} channels, weight expects {w.shape[1]}")
        return x @ w.T + bias

    def backward(self, g, x, w, bias):
        return g @ w, g.T @ x, g.sum(axis=0)


class Elementwise(Node):
    def __init__(self, name, x):
        super().__init__(name, (x,))


class Tanh(Elementwise):
    kind = "tanh"

    def forward(self, x):
        return np.tanh(x)

    def backward(self, g, x):
        return (g * (1.0 - self.value**2),)


class Sigmoid(Elementwise):
    kind = "sigmoid"

    def forward(self, x):
        return expit(x)

    def backward(self, g, x):
        s = self.value
        return (g * s * (1.0 - s),)


class Cos(Elementwise):
    kind = "cos"

    def forward(self, x):
        return np.cos(x)

    def backward(self, g, x):
        return (-g * np.sin(x),)


class Abs(Elementwise):
    """``|x|`` with subgradient 0 at the origin."""

    kind = "abs"

    def forward(self, x):
        return np.abs(x)

    def backward(self, g, x):
        return (g * np.sign(x),)


class Scale(Elementwise):
    """Fixed affine map ``factor * x + offset``."""

    kind = "scale"

    def __init__(self, name, x, factor=1.0, offset=0.0):
        super().__init__(name, x)
        self.factor = float(factor)
        self.offset = float(offset)

    def forward(self, x):
        return self.factor * x + self.offset

    def backward(self, g, x):
        return (self.factor * g,)


class Add(Node):
    kind = "add"

    def forward(self, *xs):
        shapes = {x.shape for x in xs}
        if len(shapes) != 1:
            raise ShapeError(f"{self.name}: cannot add shapes {sorted(shapes)}")
        out = xs[0].copy()
        for x in xs[1:]:
            out += x
        return out

    def backward(self, g, *xs):
        return tuple(g for _ in xs)


class Mul(Node):
    kind = "mul"

    def __init__(self, name, x, y):
        super().__init__(name, (x, y))

    def forward(self, x, y):
        return x * y

    def backward(self, g, x, y):
        return g * y, g * x


class Concat(Node):
    """Concatenation along the last axis (channels)."""

    kind = "concat"

    def forward(self, *xs):
        self._sizes = [x.shape[-1] for x in xs]
        return np.concatenate(xs, axis=-1)

    def backward(self, g, *xs):
        cuts = np.cumsum(self._sizes)[:-1]
        return tuple(np.split(g, cuts, axis=-1))


class Split(Node):
    """Channel slice ``x[..., start:stop]``."""

    kind = "split"

    def __init__(self, name, x, start, stop):
        super().__init__(name, (x,))
        self.start, self.stop = start, stop

    def forward(self, x):
        if not 0 <= self.start < self.stop <= x.shape[-1]:
            raise ShapeError(f"{self.name}: slice [{self.start}:{self.stop}] out of range for {x.shape[-1]} channels")
        return x[..., self.start:self.stop].copy()

    def backward(self, g, x):
        out = np.zeros_like(x)
        out[..., self.start:self.stop] = g
        return (out,)


class MseLoss(Node):
    kind = "mse"

    def __init__(self, name, pred, target):
        super().__init__(name, (pred, target))

    def forward(self, pred, target):
        if pred.shape != target.shape:
            raise ShapeError(f"{self.name}: prediction {pred.shape} and target {target.shape} differ")
        return np.array(np.mean((pred - target) ** 2))

    def backward(self, g, pred, target):
        d = (2.0 / pred.size) * (pred - target) * g
        return d, -d


class Graph:
    def __init__(self):
        self.nodes: list[Node] = []
        self.by_name: dict[str, Node] = {}
        self.output: Node | None = None
        self._evaluated: Node | None = None
        self._order_cache: dict[int, list[Node]] = {}

    # construction ---------------------------------------------------------

    def add(self, node: Node) -> Node:
        if node.name is None:
            node.name = f"{node.kind}{len(self.nodes)}"
        if node.name in self.by_name:
            raise GraphError(f"duplicate node name {node.name!r}")
        for n in node.inputs:
            if self.by_name.get(n.name) is not n:
                raise GraphError(f"{node.name}: input {n.name!r} does not belong to this graph")
        self.nodes.append(node)
        self.by_name[node.name] = node
        self._order_cache.clear()
        self.output = node
        return node

    def __getitem__(self, name) -> Node:
        return self.by_name[name]

    def input(self, name, channels, requires_grad=True):
        return self.add(Input(name, channels, requires_grad))

    def param(self, name, value, trainable=True, group=None, fan_in=None):
        return self.add(Param(name, value, trainable, group, fan_in))

    def gblock(self, u, b, a, name=None):
        return self.add(GBlock(name, u, b, a))

    def integrator(self, u, channels=1, name=None):
        """Frozen ``1 / (1 - q^-1)`` on each of ``channels`` signals."""
        base = name or f"integrator{len(self.nodes)}"
        b = np.eye(channels)[:, :, None]
        a = -np.ones((channels, channels, 1))
        bn = self.param(f"{base}.b", b, trainable=False)
        an = self.param(f"{base}.a", a, trainable=False)
        return self.gblock(u, bn, an, name=base)

    def fir(self, u, b, name=None):
        return self.add(Fir(name, u, b))

    def affine(self, x, weight, bias, name=None):
        return self.add(Affine(name, x, weight, bias))

    def tanh(self, x, name=None):
        return self.add(Tanh(name, x))

    def sigmoid(self, x, name=None):
        return self.add(Sigmoid(name, x))

    def cos(self, x, name=None):
        return self.add(Cos(name, x))

    def abs(self, x, name=None):
        return self.add(Abs(name, x))

    def scale(self, x, factor=1.0, offset=0.0, name=None):
        return self.add(Scale(name, x, factor, offset))

    def sum(self, *xs, name=None):
        return self.add(Add(name, xs))

    def mul(self, x, y, name=None):
        return self.add(Mul(name, x, y))

    def concat(self, *xs, name=None):
        return self.add(Concat(name, xs))

    def split(self, x, start, stop, name=None):
        return self.add(Split(name, x, start, stop))

    def mse_loss(self, pred, target, name=None):
        return self.add(MseLoss(name, pred, target))

    # queries --------------------------------------------------------------

    @property
    def inputs(self) -> dict[str, Input]:
        return {n.name: n for n in self.nodes if isinstance(n, Input)}

    @property
    def parameters(self) -> dict[str, Param]:
        """Trainable parameter leaves by name."""
        return {n.name: n for n in self.nodes if isinstance(n, Param) and n.trainable}

    @property
    def all_params(self) -> dict[str, Param]:
        return {n.name: n for n in self.nodes if isinstance(n, Param)}

    def param_values(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.parameters.items()}

    def set_param_values(self, values):
        params = self.all_params
        for k, v in values.items():
            if k not in params:
                raise KeyError(f"unknown parameter {k!r}")
            v = np.asarray(v, dtype=np.float64)
            if v.shape != params[k].value.shape:
                raise ShapeError(f"parameter {k!r}: expected shape {params[k].value.shape}, got {v.shape}")
            params[k].value = v.copy()

    def order(self, output: Node) -> list[Node]:
        """Ancestors of ``output`` (inclusive) in topological order."""
        key = id(output)
        if key not in self._order_cache:
            needed = {id(output)}
            for node in reversed(self.nodes):
                if id(node) in needed:
                    needed.update(id(n) for n in node.inputs)
            self._order_cache[key] = [n for n in self.nodes if id(n) in needed]
        return self._order_cache[key]

    # evaluation -----------------------------------------------------------

    def forward(self, inputs, output: Node | str | None = None):
        output = self._resolve(output)
        for node in self.order(output):
            if isinstance(node, Input):
                if node.name not in inputs:
                    raise GraphError(f"missing input {node.name!r}")
                x = np.asarray(inputs[node.name], dtype=np.float64)
                if x.ndim == 1:
                    x = x[:, None]
                if x.ndim != 2 or x.shape[1] != node.channels:
                    raise ShapeError(f"input {node.name!r}: expected (T, {node.channels}), got {x.shape}")
                node.value = x
            elif not isinstance(node, Param):
                try:
                    node.value = node.forward(*(n.value for n in node.inputs))
                except ShapeError as exc:
                    if str(exc).startswith(f"{node.name}:"):
                        raise
                    raise ShapeError(f"{node.name}: {exc}") from exc
        self._evaluated = output
        return output.value

    def backward(self, output: Node | str | None = None) -> dict[str, np.ndarray]:
        """Reverse sweep from a scalar output; returns adjoints of trainable parameters.

        Adjoints of every node (inputs included) are left in ``node.grad``.
        """
        output = self._resolve(output)
        if self._evaluated is None or output not in self.order(self._evaluated):
            raise GraphError("backward called before forward")
        order = self.order(output)
        for node in order:
            node.grad = None
        output.grad = np.ones_like(output.value)
        for node in reversed(order):
            if node.grad is None or not node.inputs or not node.requires_grad:
                continue
            grads = node.backward(node.grad, *(n.value for n in node.inputs))
            for src, g in zip(node.inputs, grads):
                if g is None or not src.requires_grad:
                    continue
                if src.grad is None:
                    src.grad = np.array(g, dtype=np.float64)
                else:
                    src.grad = src.grad + g
        out = {}
        for name, p in self.parameters.items():
            if p in order:
                out[name] = p.grad if p.grad is not None else np.zeros_like(p.value)
        return out

    def _resolve(self, output):
        if output is None:
            output = self.output
        if isinstance(output, str):
            output = self.by_name[output]
        if output is None:
            raise GraphError("graph has no output node")
        return output


# gradient checking ----------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol=1e-5) -> bool:
        return self.max_error <= tol

    def __str__(self):
        lines = [f"{name:<32s} {err:.3e}" for name, err in self.errors.items()]
        lines.append(f"{'max':<32s} {self.max_error:.3e}")
        return "\n".join(lines)


def relative_error(analytic, numeric) -> float:
    """Max-norm error scaled by the larger max-norm of the two gradients."""
    analytic = np.ravel(analytic)
    numeric = np.ravel(numeric)
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def numeric_grad(f, x, rel_step=1e-6):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        h = rel_step * max(1.0, abs(orig))
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def grad_check(graph: Graph, inputs, rel_step=1e-6, output=None, check_inputs=False) -> GradCheckReport:
    """Compare analytic gradients of a scalar output with central differences.

    One entry per trainable parameter (and per input when ``check_inputs``).
    Frozen parameters are not reported.
    """
    output = graph._resolve(output)
    inputs = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    graph.forward(inputs, output)
    analytic = graph.backward(output)
    input_grads = {}
    if check_inputs:
        for name, node in graph.inputs.items():
            if node in graph.order(output) and node.requires_grad:
                input_grads[name] = np.zeros_like(node.value) if node.grad is None else node.grad.copy()

    # backward seeds ones, so a non-scalar output is checked through its sum
    def loss():
        return float(np.sum(graph.forward(inputs, output)))

    report = GradCheckReport()
    for name, g in analytic.items():
        p = graph.parameters[name]
        report.errors[name] = relative_error(g, numeric_grad(loss, p.value, rel_step))
    for name, g in input_grads.items():
        x = inputs[name]
        if x.ndim == 1:
            x = inputs[name] = x[:, None]
        report.errors[f"input:{name}"] = relative_error(g, numeric_grad(loss, x, rel_step))
    graph.forward(inputs, output)
    return report
