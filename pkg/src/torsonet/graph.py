"""The radiograph-sorting network as an explicit layer DAG.

The graph is built block by block (fire, 313, trunk, reduction, 31C, head).
Node ids are stable dotted names such as ``fire.squeeze`` or
``reduction.c12``; they key parameters, gradients and the weight archive.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ops
from .errors import ArgumentError, BuildError, NumericError, ShapeError, StateError
from .ops import ConvParams, DenseParams, PoolSpec

INPUT_SHAPE = (224, 224, 1)
ACTIVATIONS = ("relu", "swish")
PARAM_KINDS = ("conv", "dense")


@dataclass
class LayerNode:
    id: str
    kind: str  # input|conv|maxpool|avgpool|concat|flatten|dropout|dense
    inputs: list = field(default_factory=list)
    activation: str = "none"
    kernel: Optional[tuple] = None
    units: Optional[int] = None  # conv filters or dense width
    pool: Optional[PoolSpec] = None
    rate: Optional[float] = None
    label: str = ""
    block: str = ""
    output_shape: tuple = ()


class ModelGraph:
    """Topologically ordered layer nodes plus their parameters."""

    def __init__(self, input_shape=INPUT_SHAPE, num_classes=4, conv_activation="relu",
                 dropout_rate=0.2, dtype=np.float32, class_names=None):
        if conv_activation not in ACTIVATIONS:
            raise ArgumentError(f"conv_activation must be one of {ACTIVATIONS}")
        if int(num_classes) != num_classes or num_classes < 2:
            raise ArgumentError(f"num_classes must be an integer >= 2, got {num_classes}")
        self.input_shape = tuple(int(v) for v in input_shape)
        self.num_classes = int(num_classes)
        self.conv_activation = conv_activation
        self.dropout_rate = float(dropout_rate)
        self.dtype = np.dtype(dtype)
        if class_names is not None and len(class_names) != self.num_classes:
            raise ArgumentError(f"{len(class_names)} class names for {num_classes} classes")
        self.class_names = list(class_names) if class_names is not None else \
            [f"class{i}" for i in range(self.num_classes)]
        self.nodes: list[LayerNode] = []
        self.params: dict = {}
        self._by_id: dict = {}

    def __repr__(self):
        return (f"ModelGraph(input_shape={self.input_shape}, num_classes={self.num_classes}, "
                f"conv_activation={self.conv_activation!r}, params={self.param_count()})")

    def node(self, node_id) -> LayerNode:
        return self._by_id[node_id]

    def __contains__(self, node_id):
        return node_id in self._by_id

    @property
    def output_id(self):
        return self.nodes[-1].id

    def consumers(self, node_id):
        return [n.id for n in self.nodes if node_id in n.inputs]

    def add(self, node: LayerNode) -> str:
        if node.id in self._by_id:
            raise BuildError(f"duplicate node id {node.id!r}")
        for src in node.inputs:
            if src not in self._by_id:
                raise BuildError(f"node {node.id!r} reads unknown node {src!r}")
        if node.kind == "input":
            if any(n.kind == "input" for n in self.nodes):
                raise BuildError("graph already has an input node")
            node.output_shape = self.input_shape
        else:
            node.output_shape = self._infer_shape(node)
        self.nodes.append(node)
        self._by_id[node.id] = node
        return node.id

    def _infer_shape(self, node):
        shapes = [self._by_id[s].output_shape for s in node.inputs]
        if node.kind == "concat":
            if len(shapes) < 2 or len({s[:-1] for s in shapes}) != 1:
                raise ShapeError(f"{node.id}: cannot concatenate {shapes}")
            return (*shapes[0][:-1], sum(s[-1] for s in shapes))
        if len(shapes) != 1:
            raise BuildError(f"{node.id}: {node.kind} takes exactly one input")
        (shape,) = shapes
        if node.kind == "conv":
            if len(shape) != 3:
                raise ShapeError(f"{node.id}: conv needs a feature map, got {shape}")
            return (shape[0], shape[1], node.units)
        if node.kind in ("maxpool", "avgpool"):
            return (*node.pool.output_hw(shape[0], shape[1]), shape[2])
        if node.kind == "flatten":
            return (int(np.prod(shape)),)
        if node.kind == "dropout":
            return shape
        if node.kind == "dense":
            if len(shape) != 1:
                raise ShapeError(f"{node.id}: dense needs a vector, got {shape}")
            return (node.units,)
        raise BuildError(f"unknown node kind {node.kind!r}")

    def add_conv(self, node_id, src, kernel, filters, label, block="", activation=None):
        return self.add(LayerNode(node_id, "conv", [src], activation or self.conv_activation,
                                  kernel=tuple(kernel), units=filters, label=label, block=block))

    def add_pool(self, node_id, src, pool: PoolSpec, label, block=""):
        kind = "maxpool" if pool.kind == "max" else "avgpool"
        return self.add(LayerNode(node_id, kind, [src], pool=pool, label=label, block=block))

    def add_concat(self, node_id, srcs, label, block=""):
        return self.add(LayerNode(node_id, "concat", list(srcs), label=label, block=block))

    # -- parameters ---------------------------------------------------------

    def param_shapes(self, node: LayerNode):
        """Weight and bias shapes for a parameterised node (empty otherwise)."""
        if node.kind == "conv":
            cin = self._by_id[node.inputs[0]].output_shape[-1]
            return [(*node.kernel, cin, node.units), (node.units,)]
        if node.kind == "dense":
            fin = self._by_id[node.inputs[0]].output_shape[0]
            return [(fin, node.units), (node.units,)]
        return []

    def node_param_count(self, node: LayerNode):
        return sum(int(np.prod(s)) for s in self.param_shapes(node))

    def param_count(self):
        return sum(self.node_param_count(n) for n in self.nodes)

    def init_params(self, seed):
        """He-normal weights (std sqrt(2 / fan_in)) and zero biases, in node order."""
        rng = np.random.default_rng(seed)
        self.params = {}
        for node in self.nodes:
            shapes = self.param_shapes(node)
            if not shapes:
                continue
            wshape, bshape = shapes
            fan_in = int(np.prod(wshape[:-1]))
            w = rng.standard_normal(wshape) * np.sqrt(2.0 / fan_in)
            b = np.zeros(bshape)
            self.params[node.id] = _make_params(node.kind, w.astype(self.dtype), b.astype(self.dtype))

    def param_items(self):
        """Yield ``(node_id, [weights, bias])`` in declaration order."""
        for node in self.nodes:
            if node.id in self.params:
                yield node.id, self.params[node.id].arrays()

    def astype(self, dtype):
        other = self.copy()
        other.dtype = np.dtype(dtype)
        other.params = {k: _make_params(self.node(k).kind, p.weights.astype(dtype), p.bias.astype(dtype))
                        for k, p in self.params.items()}
        return other

    def copy(self):
        other = ModelGraph(self.input_shape, self.num_classes, self.conv_activation,
                           self.dropout_rate, self.dtype, self.class_names)
        for n in self.nodes:
            other.add(LayerNode(n.id, n.kind, list(n.inputs), n.activation, n.kernel, n.units,
                                n.pool, n.rate, n.label, n.block))
        other.params = {k: _make_params(self.node(k).kind, p.weights.copy(), p.bias.copy())
                        for k, p in self.params.items()}
        return other


def _make_params(kind, w, b):
    return ConvParams(w, b) if kind == "conv" else DenseParams(w, b)


# ---------------------------------------------------------------------------
# blocks

def build_fire_block(graph: ModelGraph, input_id):
    """Squeeze 1x1 -> (Expand1 1x1 | Expand2 3x3) -> concat."""
    sq = graph.add_conv("fire.squeeze", input_id, (1, 1), 4, "Squeeze", "Fire block")
    e1 = graph.add_conv("fire.expand1", sq, (1, 1), 8, "Expand1", "Fire block")
    e2 = graph.add_conv("fire.expand2", sq, (3, 3), 8, "Expand2", "Fire block")
    return graph.add_concat("concat1", [e1, e2], "Concatenate 1")


def build_block_313(graph: ModelGraph, input_id):
    """Two parallel 1x3 -> 3x1 towers, concatenated."""
    c1 = graph.add_conv("b313.c1", input_id, (1, 3), 32, "C1", "313 block")
    c2 = graph.add_conv("b313.c2", input_id, (1, 3), 32, "C2", "313 block")
    c11 = graph.add_conv("b313.c11", c1, (3, 1), 32, "C11", "313 block")
    c21 = graph.add_conv("b313.c21", c2, (3, 1), 32, "C21", "313 block")
    return graph.add_concat("concat2", [c11, c21], "Concatenate 2")


def build_trunk(graph: ModelGraph, input_id):
    pool = graph.add_pool("maxpool1", input_id, PoolSpec(4, 4, kind="max"), "Max pooling 1")
    return graph.add_conv("conv", pool, (3, 3), 32, "Convolution")


def build_reduction_block(graph: ModelGraph, input_id):
    """Branching block wired exactly as the layer table lists it.

    The 1x1 pool over C2 is an identity, so the concat carries C2 twice.
    """
    blk = "Reduction block"
    c = graph.add_conv("reduction.c", input_id, (1, 1), 8, "C", blk)
    c1 = graph.add_conv("reduction.c1", c, (1, 1), 32, "C1", blk)
    c2 = graph.add_conv("reduction.c2", c, (3, 3), 32, "C2", blk)
    c11 = graph.add_conv("reduction.c11", c1, (3, 3), 32, "C11", blk)
    c12 = graph.add_conv("reduction.c12", c11, (3, 3), 32, "C12", blk)
    mp = graph.add_pool("reduction.maxpool2", c2, PoolSpec(1, 1, kind="max"), "Max pooling 2", blk)
    return graph.add_concat("concat3", [mp, c2, c12], "Concatenate 3")


def build_block_31c(graph: ModelGraph, input_id):
    blk = "31C block"
    mp = graph.add_pool("b31c.maxpool3", input_id, PoolSpec(4, 4, kind="max"), "Max pooling 3", blk)
    c1 = graph.add_conv("b31c.c1", mp, (1, 3), 32, "C1", blk)
    c2 = graph.add_conv("b31c.c2", mp, (1, 3), 32, "C2", blk)
    return graph.add_concat("concat4", [c1, c2], "Concatenate 4", blk)


def build_head(graph: ModelGraph, input_id):
    ap = graph.add_pool("avgpool", input_id, PoolSpec(2, 2, 4, 4, kind="average"), "Average pooling")
    fl = graph.add(LayerNode("flatten", "flatten", [ap], label="Flatten"))
    dr = graph.add(LayerNode("dropout", "dropout", [fl], rate=graph.dropout_rate, label="Dropout"))
    d1 = graph.add(LayerNode("dense1", "dense", [dr], "relu", units=64, label="Dense 1"))
    d2 = graph.add(LayerNode("dense2", "dense", [d1], "relu", units=64, label="Dense 2"))
    return graph.add(LayerNode("dense3", "dense", [d2], "softmax", units=graph.num_classes,
                               label="Dense 3"))


def build_model(num_classes=4, conv_activation="relu", dropout_rate=0.2, seed=0,
                input_shape=INPUT_SHAPE, dtype=np.float32, class_names=None) -> ModelGraph:
    """Assemble and initialise the full network.

    ``input_shape`` other than (224, 224, 1) keeps the identical topology;
    it exists for the reduced-size gradient check.
    """
    if not 0 <= dropout_rate < 1:
        raise ArgumentError(f"dropout_rate must lie in [0, 1), got {dropout_rate}")
    g = ModelGraph(input_shape, num_classes, conv_activation, dropout_rate, dtype, class_names)
    x = g.add(LayerNode("input", "input", label="Input"))
    x = build_fire_block(g, x)
    x = build_block_313(g, x)
    x = build_trunk(g, x)
    x = build_reduction_block(g, x)
    x = build_block_31c(g, x)
    build_head(g, x)
    g.init_params(seed)
    return g


# ---------------------------------------------------------------------------
# execution

class Cache(dict):
    """Per-node intermediates from a forward pass, keyed by node id."""


def forward(model: ModelGraph, image, training=False, rng=None, keep_cache=None,
            check_finite=True):
    """Evaluate the graph; returns ``(probs, cache)``.

    ``image`` is (H, W, C) or a batch (N, H, W, C). ``cache`` is None unless
    ``training`` (or ``keep_cache``) is set. Dropout only draws from ``rng``
    in training mode.
    """
    if keep_cache is None:
        keep_cache = training
    x = np.asarray(image)
    squeezed = x.ndim == 3
    if squeezed:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != model.input_shape:
        raise ShapeError(f"expected input shape {model.input_shape}, got {np.shape(image)}")
    x = x.astype(model.dtype, copy=False)

    remaining = {n.id: len(model.consumers(n.id)) for n in model.nodes}
    outputs = {}
    cache = Cache() if keep_cache else None
    for node in model.nodes:
        entry = {}
        srcs = [outputs[s] for s in node.inputs]
        if node.kind == "input":
            y = x
        elif node.kind == "conv":
            pre = ops.conv2d_forward(srcs[0], model.params[node.id])
            y = ops.activation(pre, node.activation)
            entry["pre"] = pre
        elif node.kind in ("maxpool", "avgpool"):
            y, entry["state"] = ops.pool_forward(srcs[0], node.pool)
        elif node.kind == "concat":
            y = ops.concat_channels(srcs)
        elif node.kind == "flatten":
            y = ops.flatten(srcs[0])
        elif node.kind == "dropout":
            y, entry["mask"] = ops.dropout(srcs[0], node.rate, rng, training)
        elif node.kind == "dense":
            pre = ops.dense_forward(srcs[0], model.params[node.id])
            if node.activation == "softmax":
                entry["logits"] = pre
                y = ops.softmax(pre)
            else:
                y = ops.activation(pre, node.activation)
                entry["pre"] = pre
        else:
            raise StateError(f"cannot execute node kind {node.kind!r}")
        if check_finite and not np.isfinite(y).all():
            raise NumericError(f"non-finite values produced at node {node.id!r}", node=node.id)
        outputs[node.id] = y
        if cache is not None:
            entry["out"] = y
            cache[node.id] = entry
        else:
            for s in node.inputs:
                remaining[s] -= 1
                if remaining[s] == 0:
                    del outputs[s]
    probs = outputs[model.output_id]
    if cache is not None:
        cache.batched = not squeezed
    return (probs[0] if squeezed else probs), cache


def backward(model: ModelGraph, cache, grad_logits):
    """Back-propagate ``grad_logits`` (gradient w.r.t. the final logits).

    Returns a dict mapping each parameterised node id to ``[grad_w, grad_b]``
    plus ``"input"`` mapped to the gradient w.r.t. the image. Gradients of
    nodes with several consumers are summed.
    """
    if cache is None or not isinstance(cache, Cache) or model.output_id not in cache:
        raise StateError("backward needs the cache of a forward pass run with training/keep_cache")
    g = np.asarray(grad_logits, dtype=model.dtype)
    if not cache.batched:
        g = g[None]
    upstream = {model.output_id: g}
    grads = {}
    for node in reversed(model.nodes):
        gout = upstream.pop(node.id, None)
        if gout is None:
            continue
        entry = cache[node.id]
        if node.kind == "input":
            grads["input"] = gout if cache.batched else gout[0]
            continue
        if node.kind == "conv":
            gpre = gout * ops.activation_grad(entry["pre"], node.activation)
            src = cache[node.inputs[0]]["out"]
            gx, gw, gb = ops.conv2d_backward(src, model.params[node.id], gpre)
            grads[node.id] = [gw, gb]
            gins = [gx]
        elif node.kind == "dense":
            if node.activation == "softmax":
                gpre = gout
            else:
                gpre = gout * ops.activation_grad(entry["pre"], node.activation)
            src = cache[node.inputs[0]]["out"]
            gx, gw, gb = ops.dense_backward(src, model.params[node.id], gpre)
            grads[node.id] = [gw, gb]
            gins = [gx]
        elif node.kind in ("maxpool", "avgpool"):
            gins = [ops.pool_backward(node.pool, entry["state"], gout)]
        elif node.kind == "concat":
            sizes = [model.node(s).output_shape[-1] for s in node.inputs]
            gins = ops.split_channels(gout, sizes)
        elif node.kind == "flatten":
            gins = [gout.reshape(cache[node.inputs[0]]["out"].shape)]
        elif node.kind == "dropout":
            gins = [ops.dropout_backward(gout, entry["mask"])]
        else:
            raise StateError(f"cannot differentiate node kind {node.kind!r}")
        for src, gi in zip(node.inputs, gins):
            if src in upstream:
                upstream[src] = upstream[src] + gi
            else:
                upstream[src] = gi
    return grads


def predict(model: ModelGraph, images, batch_size=16):
    """Inference-mode probabilities for a stack of images, (N, K)."""
    images = np.asarray(images)
    out = [forward(model, images[i:i + batch_size])[0] for i in range(0, len(images), batch_size)]
    return np.concatenate(out, axis=0)


# ---------------------------------------------------------------------------
# summary

@dataclass
class SummaryRow:
    name: str
    kernel: str
    activation: str
    output_shape: str
    params: int
    connected_to: str
    node_id: str = ""
    block: str = ""


_ACT_LABELS = {"relu": "ReLU", "swish": "Swish", "softmax": "SoftMax", "none": ""}


def _shape_label(node):
    s = node.output_shape
    if node.kind == "dense":
        return f"(None, {s[0]})"
    if len(s) == 1:
        return str(s[0])
    return "(" + ", ".join(str(v) for v in s) + ")"


def _kernel_label(node):
    if node.kind == "conv":
        return f"{node.kernel[0]}*{node.kernel[1]}"
    if node.kind in ("maxpool", "avgpool"):
        p = node.pool
        text = f"Pool size=({p.pool_h},{p.pool_w})"
        if (p.stride_h, p.stride_w) != (p.pool_h, p.pool_w):
            text += f", stride={p.stride_h}" if p.stride_h == p.stride_w \
                else f", stride=({p.stride_h},{p.stride_w})"
        return text
    if node.kind == "concat":
        return "Axis=3"
    if node.kind == "dropout":
        return f"Rate={node.rate:g}"
    return ""


def summary(model: ModelGraph):
    """Layer-table rows plus ``{"total", "trainable", "non_trainable"}`` counts."""
    rows = []
    for node in model.nodes:
        name = node.label
        if node.kind == "conv":
            name += " (Conv2D)"
        rows.append(SummaryRow(
            name=name,
            kernel=_kernel_label(node),
            activation=_ACT_LABELS.get(node.activation, node.activation),
            output_shape=_shape_label(node),
            params=model.node_param_count(node),
            connected_to=" & ".join(model.node(s).label for s in node.inputs) or "",
            node_id=node.id,
            block=node.block,
        ))
    total = sum(r.params for r in rows)
    return rows, {"total": total, "trainable": total, "non_trainable": 0}


def format_summary(model: ModelGraph) -> str:
    rows, totals = summary(model)
    header = ("Block", "Layer (type)", "Kernel size", "Activation", "Output Shape", "Parameters",
              "Connected to")
    table = [header] + [(r.block, r.name, r.kernel, r.activation, r.output_shape,
                         str(r.params), r.connected_to) for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = []
    for k, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if k == 0:
            lines.append("=" * len(lines[0]))
    lines.append("=" * len(lines[0]))
    lines.append(f"Total params: {totals['total']:,}")
    lines.append(f"Trainable params: {totals['trainable']:,}")
    lines.append(f"Non-trainable params: {totals['non_trainable']:,}")
    return "\n".join(lines)
