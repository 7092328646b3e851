"""Model configurations and their compilation into computation graphs.

A model config is a mapping::

    input: {name: u, channels: 1}
    output: g2
    blocks:
      - {name: g1, kind: gblock, in_channels: 1, out_channels: 1, n_a: 3, n_b: 3}
      - {name: f, kind: affine, in_channels: 1, out_channels: 1, hidden_units: 20}
      - {name: g2, kind: gblock, in_channels: 1, out_channels: 1, n_a: 3, n_b: 3}
    connections: [[u, g1], [g1, f], [f, g2]]

``add`` and ``concat`` blocks take several incoming connections (concat
order follows the connection list); every other block takes exactly one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import stability
from .autodiff import Graph, Node
from .errors import ConfigError

KINDS = ("gblock", "fir", "affine", "tanh", "sigmoid", "cos", "abs", "scale",
         "integrator", "add", "concat", "split")
ELEMENTWISE = ("tanh", "sigmoid", "cos", "abs", "scale")
MULTI_INPUT = ("add", "concat")


@dataclass
class BlockConfig:
    name: str
    kind: str
    in_channels: int | None = None
    out_channels: int | None = None
    n_a: int = 0
    n_b: int = 0
    hidden_units: int | None = None
    parametrization: str = "raw"
    trainable: bool = True
    b: list | None = None
    a: list | None = None
    factor: float = 1.0
    offset: float = 0.0
    start: int = 0
    stop: int | None = None


@dataclass
class ModelConfig:
    blocks: list[BlockConfig]
    connections: list[tuple[str, str]]
    input_name: str = "u"
    input_channels: int = 1
    output: str = ""
    raw: dict = field(default_factory=dict, repr=False)


def _int(value, path, minimum=0):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(path, f"must be >= {minimum}")
    return value


def parse_model_config(raw: dict, prefix="model") -> ModelConfig:
    """Validate a model mapping; errors name the offending field path."""
    if not isinstance(raw, dict):
        raise ConfigError(prefix, "expected a mapping")
    inp = raw.get("input", {"name": "u", "channels": 1})
    if not isinstance(inp, dict) or "name" not in inp:
        raise ConfigError(f"{prefix}.input", "expected {name, channels}")
    in_name = str(inp["name"])
    in_ch = _int(inp.get("channels", 1), f"{prefix}.input.channels", 1)

    blocks_raw = raw.get("blocks")
    if not isinstance(blocks_raw, list) or not blocks_raw:
        raise ConfigError(f"{prefix}.blocks", "expected a non-empty list")
    known = set(BlockConfig.__dataclass_fields__)
    blocks, names = [], {in_name}
    for i, b in enumerate(blocks_raw):
        path = f"{prefix}.blocks[{i}]"
        if not isinstance(b, dict):
            raise ConfigError(path, "expected a mapping")
        extra = set(b) - known
        if extra:
            raise ConfigError(f"{path}.{sorted(extra)[0]}", "unknown field")
        if "name" not in b:
            raise ConfigError(f"{path}.name", "missing")
        if "kind" not in b:
            raise ConfigError(f"{path}.kind", "missing")
        blk = BlockConfig(**b)
        if blk.name in names:
            raise ConfigError(f"{path}.name", f"duplicate name {blk.name!r}")
        names.add(blk.name)
        if blk.kind not in KINDS:
            raise ConfigError(f"{path}.kind", f"unknown kind {blk.kind!r}; expected one of {', '.join(KINDS)}")
        for key in ("in_channels", "out_channels", "hidden_units"):
            if getattr(blk, key) is not None:
                _int(getattr(blk, key), f"{path}.{key}", 1)
        _int(blk.n_a, f"{path}.n_a")
        _int(blk.n_b, f"{path}.n_b")
        if blk.parametrization not in stability.PARAMETRIZATIONS:
            raise ConfigError(f"{path}.parametrization",
                              f"expected one of {', '.join(stability.PARAMETRIZATIONS)}")
        if blk.parametrization != "raw" and (blk.kind != "gblock" or blk.n_a != 2):
            raise ConfigError(f"{path}.parametrization", "stable parametrizations need a gblock with n_a = 2")
        if blk.kind in ("fir",) and blk.n_a:
            raise ConfigError(f"{path}.n_a", "FIR blocks have no denominator")
        blocks.append(blk)

    conns_raw = raw.get("connections")
    if not isinstance(conns_raw, list) or not conns_raw:
        raise ConfigError(f"{prefix}.connections", "expected a non-empty list of [from, to] pairs")
    conns = []
    for i, c in enumerate(conns_raw):
        path = f"{prefix}.connections[{i}]"
        if not isinstance(c, (list, tuple)) or len(c) != 2:
            raise ConfigError(path, "expected a [from, to] pair")
        src, dst = str(c[0]), str(c[1])
        if src not in names:
            raise ConfigError(path, f"unknown source {src!r}")
        if dst not in names or dst == in_name:
            raise ConfigError(path, f"unknown destination {dst!r}")
        conns.append((src, dst))

    output = raw.get("output")
    if output is None:
        raise ConfigError(f"{prefix}.output", "missing")
    if str(output) not in names:
        raise ConfigError(f"{prefix}.output", f"unknown block {output!r}")

    cfg = ModelConfig(blocks, conns, in_name, in_ch, str(output), raw)
    _resolve_channels(cfg, prefix)
    return cfg


def _topo_order(cfg: ModelConfig, prefix):
    incoming = {b.name: [] for b in cfg.blocks}
    for src, dst in cfg.connections:
        incoming[dst].append(src)
    done, order = {cfg.input_name}, []
    pending = list(cfg.blocks)
    while pending:
        ready = [b for b in pending if all(s in done for s in incoming[b.name])]
        if not ready:
            cyc = ", ".join(b.name for b in pending)
            raise ConfigError(f"{prefix}.connections", f"cycle or unreachable blocks: {cyc}")
        for b in ready:
            done.add(b.name)
            order.append(b)
        pending = [b for b in pending if b.name not in done]
    return order, incoming


def _resolve_channels(cfg: ModelConfig, prefix):
    """Fill in and check channel counts along every edge."""
    order, incoming = _topo_order(cfg, prefix)
    out_ch = {cfg.input_name: cfg.input_channels}
    index = {b.name: i for i, b in enumerate(cfg.blocks)}
    for b in order:
        path = f"{prefix}.blocks[{index[b.name]}]"
        srcs = incoming[b.name]
        if not srcs:
            raise ConfigError(path, f"block {b.name!r} has no incoming connection")
        if b.kind not in MULTI_INPUT and len(srcs) != 1:
            raise ConfigError(path, f"block {b.name!r} takes one input, got {len(srcs)}")
        src_ch = [out_ch[s] for s in srcs]
        if b.kind == "add":
            if len(set(src_ch)) != 1:
                raise ConfigError(path, f"add inputs have different channel counts {src_ch}")
            got = src_ch[0]
        elif b.kind == "concat":
            got = sum(src_ch)
        else:
            got = src_ch[0]
        if b.in_channels is None:
            b.in_channels = got
        elif b.in_channels != got:
            raise ConfigError(f"{path}.in_channels", f"declared {b.in_channels}, but producers give {got}")
        if b.kind in ELEMENTWISE or b.kind in ("add", "concat", "integrator"):
            if b.out_channels is not None and b.out_channels != b.in_channels:
                raise ConfigError(f"{path}.out_channels", f"{b.kind} keeps the channel count {b.in_channels}")
            b.out_channels = b.in_channels
        elif b.kind == "split":
            stop = b.in_channels if b.stop is None else b.stop
            if not 0 <= b.start < stop <= b.in_channels:
                raise ConfigError(f"{path}.stop", f"slice [{b.start}:{stop}] out of range")
            b.stop = stop
            b.out_channels = stop - b.start
        elif b.out_channels is None:
            raise ConfigError(f"{path}.out_channels", "missing")
        if b.kind in ("gblock", "fir"):
            _check_coeffs(b, path)
        out_ch[b.name] = b.out_channels
    return order, incoming


def _check_coeffs(b: BlockConfig, path):
    m, p = b.out_channels, b.in_channels
    for key, n in (("b", b.n_b + 1), ("a", b.n_a)):
        val = getattr(b, key)
        if val is None:
            continue
        arr = np.asarray(val, dtype=np.float64)
        if arr.ndim == 1 and m == p == 1:
            arr = arr.reshape(1, 1, -1)
        if arr.shape != (m, p, n):
            raise ConfigError(f"{path}.{key}", f"expected shape {(m, p, n)}, got {arr.shape}")


def _coeffs(values, m, p, n):
    arr = np.asarray(values, dtype=np.float64)
    return arr.reshape(m, p, n)


def build_graph(cfg: ModelConfig, graph: Graph | None = None, input_requires_grad=True):
    """Compile a validated config; returns ``(graph, input_node, output_node)``."""
    g = graph or Graph()
    order, incoming = _topo_order(cfg, "model")
    nodes: dict[str, Node] = {
        cfg.input_name: g.input(cfg.input_name, cfg.input_channels, input_requires_grad)
    }
    for b in order:
        srcs = [nodes[s] for s in incoming[b.name]]
        x = srcs[0]
        m, p = b.out_channels, b.in_channels
        if b.kind == "gblock":
            nodes[b.name] = _build_gblock(g, b, x)
        elif b.kind == "fir":
            coeffs = np.zeros((m, p, b.n_b + 1)) if b.b is None else _coeffs(b.b, m, p, b.n_b + 1)
            bp = g.param(f"{b.name}.b", coeffs, b.trainable, "lti" if b.b is None else None)
            nodes[b.name] = g.fir(x, bp, name=b.name)
        elif b.kind == "affine":
            nodes[b.name] = _build_affine(g, b, x)
        elif b.kind == "integrator":
            nodes[b.name] = g.integrator(x, channels=p, name=b.name)
        elif b.kind == "scale":
            nodes[b.name] = g.scale(x, b.factor, b.offset, name=b.name)
        elif b.kind in ("tanh", "sigmoid", "cos", "abs"):
            nodes[b.name] = getattr(g, b.kind)(x, name=b.name)
        elif b.kind == "add":
            nodes[b.name] = g.sum(*srcs, name=b.name)
        elif b.kind == "concat":
            nodes[b.name] = g.concat(*srcs, name=b.name)
        elif b.kind == "split":
            nodes[b.name] = g.split(x, b.start, b.stop, name=b.name)
    return g, nodes[cfg.input_name], nodes[cfg.output]


def _build_gblock(g: Graph, b: BlockConfig, x: Node) -> Node:
    m, p = b.out_channels, b.in_channels
    explicit_b = b.b is not None
    bvals = _coeffs(b.b, m, p, b.n_b + 1) if explicit_b else np.zeros((m, p, b.n_b + 1))
    bp = g.param(f"{b.name}.b", bvals, b.trainable, None if explicit_b else "lti")
    if b.parametrization == "raw":
        explicit_a = b.a is not None
        avals = _coeffs(b.a, m, p, b.n_a) if explicit_a else np.zeros((m, p, b.n_a))
        ap = g.param(f"{b.name}.a", avals, b.trainable, None if explicit_a else "lti")
    elif b.parametrization == "conj":
        rho = g.param(f"{b.name}.rho", np.zeros((m, p, 1)), b.trainable, "lti")
        psi = g.param(f"{b.name}.psi", np.zeros((m, p, 1)), b.trainable, "lti")
        ap = stability.conj_coeffs(g, rho, psi, name=f"{b.name}.conj")
    else:
        a1 = g.param(f"{b.name}.alpha1", np.zeros((m, p, 1)), b.trainable, "lti")
        a2 = g.param(f"{b.name}.alpha2", np.zeros((m, p, 1)), b.trainable, "lti")
        ap = stability.full_coeffs(g, a1, a2, name=f"{b.name}.full")
    return g.gblock(x, bp, ap, name=b.name)


def _build_affine(g: Graph, b: BlockConfig, x: Node) -> Node:
    """Single affine map, or a one-hidden-layer tanh network when ``hidden_units`` is set."""
    p, m = b.in_channels, b.out_channels
    if b.hidden_units is None:
        w = g.param(f"{b.name}.weight", np.zeros((m, p)), b.trainable, "static", fan_in=p)
        c = g.param(f"{b.name}.bias", np.zeros(m), b.trainable, "static", fan_in=p)
        return g.affine(x, w, c, name=b.name)
    h = b.hidden_units
    w0 = g.param(f"{b.name}.w0", np.zeros((h, p)), b.trainable, "static", fan_in=p)
    c0 = g.param(f"{b.name}.b0", np.zeros(h), b.trainable, "static", fan_in=p)
    hidden = g.tanh(g.affine(x, w0, c0, name=f"{b.name}.hidden"), name=f"{b.name}.act")
    w1 = g.param(f"{b.name}.w1", np.zeros((m, h)), b.trainable, "static", fan_in=h)
    c1 = g.param(f"{b.name}.b1", np.zeros(m), b.trainable, "static", fan_in=h)
    return g.affine(hidden, w1, c1, name=b.name)


class Model:
    """A compiled model with an MSE loss against a ``target`` input."""

    TARGET = "__target__"

    def __init__(self, cfg: ModelConfig | dict):
        if isinstance(cfg, dict):
            cfg = parse_model_config(cfg)
        self.config = cfg
        self.graph, self.input, self.output = build_graph(cfg, input_requires_grad=False)
        out_ch = next((b.out_channels for b in cfg.blocks if b.name == cfg.output), cfg.input_channels)
        self.target = self.graph.input(self.TARGET, out_ch, requires_grad=False)
        self.loss = self.graph.mse_loss(self.output, self.target, name="__loss__")
        self.graph.output = self.loss

    @property
    def output_channels(self) -> int:
        return self.target.channels

    def simulate(self, u) -> np.ndarray:
        return self.graph.forward({self.input.name: u}, self.output).copy()

    def loss_and_grads(self, u, y):
        loss = self.graph.forward({self.input.name: u, self.TARGET: y}, self.loss)
        return float(loss), self.graph.backward(self.loss)
