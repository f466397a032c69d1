"""Reverse-mode differentiation tape over the tensor primitives.

Each recorded node stores its op kind, parent node ids and whatever the
forward saved.  Backward rules are looked up in :data:`VJP` at backward time,
so a rule can be swapped out (tests use this to prove :func:`grad_check`
catches a broken rule).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError
from .tensor import ConvGeometry, check_finite, col2im, im2col


class Node:
    __slots__ = ("id", "op", "value", "parents", "saved", "attrs", "trainable", "name")

    def __init__(self, id, op, value, parents=(), saved=None, attrs=None, trainable=False, name=None):
        self.id = id
        self.op = op
        self.value = value
        self.parents = tuple(parents)
        self.saved = saved
        self.attrs = attrs or {}
        self.trainable = trainable
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node({self.id}, {self.op}{label}, shape={self.value.shape})"


# --- forward rules: (*input values, **attrs) -> (value, saved) ---------------

def _conv2d_fwd(x, w, geom):
    N, _, _, Ci = x.shape
    K, Co = geom.kernel, w.shape[3]
    Ho, Wo = geom.output_hw(x.shape[1], x.shape[2])
    if w.shape[:3] != (K, K, Ci):
        raise ShapeError(f"weights {w.shape} do not fit input {x.shape} with kernel {K}")
    cols = im2col(np.ascontiguousarray(x), geom)
    out = (cols @ w.reshape(K * K * Ci, Co)).reshape(N, Ho, Wo, Co)
    return out, cols


def _pointwise_fwd(x, w):
    if w.shape[:2] != (1, 1) or x.shape[-1] != w.shape[2]:
        raise ShapeError(f"point-wise weights {w.shape} do not fit input {x.shape}")
    return x @ w[0, 0], None


def _channel_matmul_fwd(a, b):
    m = b.reshape(b.shape[-2], b.shape[-1])
    if a.shape[-1] != m.shape[0]:
        raise ShapeError(f"cannot contract {a.shape} with {b.shape}")
    return a @ m, None


def _mul_const_fwd(x, const):
    return x * const, None


def _mul_fwd(a, b):
    return a * b, None


def _add_fwd(a, b):
    return a + b, None


def _scale_fwd(x, factor):
    return x * x.dtype.type(factor), None


def _relu_fwd(x):
    return np.maximum(x, 0), None


def _sum_fwd(x):
    return np.asarray(x.sum(), dtype=x.dtype), None


def _mse_fwd(a, b):
    d = a - b
    return np.asarray(np.mean(d * d), dtype=a.dtype), d


def _gap_fwd(x):
    return x.mean(axis=(1, 2)), None


def _flatten_fwd(x):
    return x.reshape(x.shape[0], -1), None


def _linear_fwd(x, w, b):
    return x @ w + b, None


def _softmax_ce_fwd(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    n = logits.shape[0]
    loss = np.mean(logsumexp - z[np.arange(n), labels])
    probs = np.exp(z - logsumexp[:, None])
    return np.asarray(loss, dtype=logits.dtype), probs


# --- backward rules: (g, node, *input values) -> tuple of input grads --------

def _conv2d_vjp(g, node, x, w):
    geom = node.attrs["geom"]
    K, Ci, Co = geom.kernel, x.shape[3], w.shape[3]
    g2 = g.reshape(-1, Co)
    dw = (node.saved.T @ g2).reshape(w.shape)
    dcols = g2 @ w.reshape(K * K * Ci, Co).T
    dx = col2im(dcols, x.shape, geom)
    return dx, dw


def _pointwise_vjp(g, node, x, w):
    Cc, Co = w.shape[2], w.shape[3]
    dw = (x.reshape(-1, Cc).T @ g.reshape(-1, Co)).reshape(w.shape)
    return g @ w[0, 0].T, dw


def _channel_matmul_vjp(g, node, a, b):
    m = b.reshape(b.shape[-2], b.shape[-1])
    da = g @ m.T
    db = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
    return da, db.reshape(b.shape)


def _mul_const_vjp(g, node, x):
    return (_unbroadcast(g * node.attrs["const"], x.shape),)


def _mul_vjp(g, node, a, b):
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _add_vjp(g, node, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _scale_vjp(g, node, x):
    return (g * g.dtype.type(node.attrs["factor"]),)


def _relu_vjp(g, node, x):
    return (g * (x > 0),)


def _sum_vjp(g, node, x):
    return (np.full(x.shape, g, dtype=x.dtype),)


def _mse_vjp(g, node, a, b):
    d = node.saved * (2.0 * g / node.saved.size)
    return d, -d


def _gap_vjp(g, node, x):
    _, H, W, _ = x.shape
    return (np.broadcast_to(g[:, None, None, :] / (H * W), x.shape).astype(x.dtype),)


def _flatten_vjp(g, node, x):
    return (g.reshape(x.shape),)


def _linear_vjp(g, node, x, w, b):
    return g @ w.T, x.T @ g, g.sum(axis=0)


def _softmax_ce_vjp(g, node, logits):
    labels = node.attrs["labels"]
    n = logits.shape[0]
    d = node.saved.copy()
    d[np.arange(n), labels] -= 1
    return (d * (g / n),)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


FORWARD = {
    "conv2d": _conv2d_fwd,
    "pointwise_conv": _pointwise_fwd,
    "channel_matmul": _channel_matmul_fwd,
    "mul_const": _mul_const_fwd,
    "mul": _mul_fwd,
    "add": _add_fwd,
    "scale": _scale_fwd,
    "relu": _relu_fwd,
    "sum": _sum_fwd,
    "mse": _mse_fwd,
    "global_avg_pool": _gap_fwd,
    "flatten": _flatten_fwd,
    "linear": _linear_fwd,
    "softmax_cross_entropy": _softmax_ce_fwd,
}

VJP = {
    "conv2d": _conv2d_vjp,
    "pointwise_conv": _pointwise_vjp,
    "channel_matmul": _channel_matmul_vjp,
    "mul_const": _mul_const_vjp,
    "mul": _mul_vjp,
    "add": _add_vjp,
    "scale": _scale_vjp,
    "relu": _relu_vjp,
    "sum": _sum_vjp,
    "mse": _mse_vjp,
    "global_avg_pool": _gap_vjp,
    "flatten": _flatten_vjp,
    "linear": _linear_vjp,
    "softmax_cross_entropy": _softmax_ce_vjp,
}


class Tape:
    """Append-only record of one forward pass.

    One tape belongs to one training step; it is not thread-safe.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Node] = []
        self.grads: dict[int, np.ndarray] = {}

    # -- construction --

    def leaf(self, value, trainable=False, name=None) -> Node:
        value = np.array(value, dtype=self.dtype)
        node = Node(len(self.nodes), "leaf", value, trainable=trainable, name=name)
        self.nodes.append(node)
        return node

    def param(self, value, name=None) -> Node:
        return self.leaf(value, trainable=True, name=name)

    def apply(self, op, *inputs: Node, **attrs) -> Node:
        for node in inputs:
            if not (0 <= node.id < len(self.nodes) and self.nodes[node.id] is node):
                raise ValueError(f"{node!r} does not belong to this tape")
        value, saved = FORWARD[op](*(n.value for n in inputs), **attrs)
        value = np.asarray(value, dtype=self.dtype)
        check_finite(value, f"output of {op}")
        node = Node(len(self.nodes), op, value, [n.id for n in inputs], saved, attrs)
        self.nodes.append(node)
        return node

    def conv2d(self, x, w, geom: ConvGeometry):
        return self.apply("conv2d", x, w, geom=geom)

    def pointwise_conv(self, x, w):
        return self.apply("pointwise_conv", x, w)

    def channel_matmul(self, a, b):
        return self.apply("channel_matmul", a, b)

    def mul_const(self, x, const):
        return self.apply("mul_const", x, const=np.asarray(const, dtype=self.dtype))

    def mul(self, a, b):
        return self.apply("mul", a, b)

    def add(self, a, b):
        return self.apply("add", a, b)

    def scale(self, x, factor):
        return self.apply("scale", x, factor=float(factor))

    def activation(self, x, kind):
        if kind == "identity":
            return x
        if kind == "relu":
            return self.apply("relu", x)
        raise ValueError(f"unknown activation {kind!r}")

    def sum(self, x):
        return self.apply("sum", x)

    def mse(self, a, b):
        return self.apply("mse", a, b)

    def global_avg_pool(self, x):
        return self.apply("global_avg_pool", x)

    def flatten(self, x):
        return self.apply("flatten", x)

    def linear(self, x, w, b):
        return self.apply("linear", x, w, b)

    def softmax_cross_entropy(self, logits, labels):
        labels = np.asarray(labels, dtype=np.int64)
        n, classes = logits.value.shape
        if labels.shape != (n,):
            raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= classes):
            raise ValueError(f"labels must lie in [0, {classes})")
        return self.apply("softmax_cross_entropy", logits, labels=labels)

    # -- differentiation --

    def backward(self, loss: Node) -> dict[int, np.ndarray]:
        """Populate :attr:`grads` for every node up to ``loss``.

        Trainable leaves not reachable from ``loss`` get exact zeros.
        """
        if loss.value.size != 1 or loss.value.ndim != 0:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        grads: dict[int, np.ndarray] = {loss.id: np.ones((), dtype=self.dtype)}
        for node in reversed(self.nodes[: loss.id + 1]):
            g = grads.get(node.id)
            if g is None or node.op == "leaf":
                continue
            assert all(p < node.id for p in node.parents), "tape is not topologically ordered"
            parent_vals = [self.nodes[p].value for p in node.parents]
            parent_grads = VJP[node.op](g, node, *parent_vals)
            for pid, pg in zip(node.parents, parent_grads):
                pg = np.asarray(pg, dtype=self.dtype)
                if pg.shape != self.nodes[pid].value.shape:
                    raise ShapeError(f"{node.op} rule produced grad {pg.shape} for {self.nodes[pid]!r}")
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
        for node in self.nodes:
            if node.trainable and node.id not in grads:
                grads[node.id] = np.zeros_like(node.value)
        for nid, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient at {self.nodes[nid]!r}")
        self.grads = grads
        return grads

    def grad(self, node: Node) -> np.ndarray:
        g = self.grads.get(node.id)
        return np.zeros_like(node.value) if g is None else g

    def parameters(self):
        return [n for n in self.nodes if n.trainable]


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-3
    checked: int = 0
    skipped_kinks: int = 0

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        detail = ", ".join(f"{k}={v:.2e}" for k, v in self.errors.items())
        return (f"grad_check {status} (tol={self.tol:g}, {self.checked} coords, "
                f"{self.skipped_kinks} skipped at ReLU kinks): {detail}")


def _relu_pattern(tape):
    return b"".join(np.packbits(tape.nodes[n.parents[0]].value > 0).tobytes()
                    for n in tape.nodes if n.op == "relu")


def grad_check(f, params: dict, eps=1e-3, tol=1e-3, skip_kinks=True) -> GradCheckReport:
    """Compare tape gradients with central differences in 64-bit.

    ``f(tape, leaves)`` must build a scalar loss node from ``leaves``, a dict of
    trainable leaves created from ``params``.  The step for coordinate ``i`` is
    ``eps * max(1, |p_i|)``.  The per-parameter error is the largest absolute
    disagreement divided by the largest gradient magnitude of that parameter.

    With ``skip_kinks`` a coordinate whose +/- probe flips the sign pattern of
    any ReLU input is left out: the difference quotient there straddles a
    non-differentiable point and says nothing about the backward rule.
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate(values):
        tape = Tape(np.float64)
        leaves = {k: tape.param(v, name=k) for k, v in values.items()}
        return tape, leaves, f(tape, leaves)

    tape, leaves, loss = evaluate(base)
    tape.backward(loss)
    pattern = _relu_pattern(tape)
    report = GradCheckReport(tol=tol)
    for name, value in base.items():
        analytic = tape.grad(leaves[name])
        numeric = np.zeros_like(value)
        valid = np.ones(value.shape, dtype=bool)
        for idx in np.ndindex(value.shape):
            h = eps * max(1.0, abs(value[idx]))
            probe = dict(base)
            shifted = value.copy()
            probe[name] = shifted
            shifted[idx] = value[idx] + h
            up_tape, _, up = evaluate(probe)
            shifted[idx] = value[idx] - h
            down_tape, _, down = evaluate(probe)
            numeric[idx] = (float(up.value) - float(down.value)) / (2 * h)
            if skip_kinks and (_relu_pattern(up_tape) != pattern or _relu_pattern(down_tape) != pattern):
                valid[idx] = False
        report.checked += int(valid.sum())
        report.skipped_kinks += int((~valid).sum())
        scale = max(np.abs(numeric).max(initial=0.0), np.abs(analytic).max(initial=0.0), 1e-10)
        report.errors[name] = float(np.abs(analytic - numeric)[valid].max(initial=0.0) / scale)
    return report
