"""Dense-matrix reverse-mode differentiation and Adam.

Every value is a 2-D float64 ``numpy`` array.  Operations accept either plain
arrays or :class:`Node` objects; when at least one input is a ``Node`` the
result is recorded on that node's :class:`Tape`, otherwise the plain array is
returned.  This lets one forward implementation serve both training (taped)
and inference (untaped, no bookkeeping).

Example::

    store = ParamStore()
    store.add("w", np.array([[1.0, 2.0]]))
    tape = Tape()
    w = tape.watch(store)["w"]
    loss = sum_of_squares(w)
    tape.backward(loss, store)
    store.grads["w"]  # [[2., 4.]]
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DimensionError

_SIG_HI = np.nextafter(1.0, 0.0)
_SIG_LO = np.nextafter(0.0, 1.0)


def as_matrix(x, name="matrix"):
    """Coerce ``x`` to a finite 2-D float64 array (scalars become 1x1, vectors 1xk)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if a.size == 0:
        raise DimensionError(f"{name} must be non-empty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


class Node:
    """One recorded value on a tape."""

    __slots__ = ("value", "parents", "backward_fn", "tape", "index", "name")

    def __init__(self, tape, value, parents=(), backward_fn=None, name=None):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(#{self.index}, shape={self.value.shape})"


class Tape:
    """Append-only record of operations; node order is a topological order."""

    def __init__(self):
        self.nodes: list[Node] = []

    def leaf(self, value, name=None) -> Node:
        return Node(self, as_matrix(value, name or "leaf"), name=name)

    def watch(self, store: "ParamStore") -> dict[str, Node]:
        """Register every parameter of ``store`` as a leaf and return name -> node."""
        return {name: Node(self, value, name=name) for name, value in store.params.items()}

    def backward(self, loss: Node, store: "ParamStore | None" = None) -> dict[str, np.ndarray]:
        """Back-propagate from a 1x1 ``loss``.

        Gradients are written into ``store.grads`` (zeroed first, so parameters
        the loss never touched end with zero gradient) and also returned keyed
        by leaf name.
        """
        if not isinstance(loss, Node) or loss.tape is not self:
            raise ContractError("loss must be a node recorded on this tape")
        if loss.value.shape != (1, 1):
            raise ContractError(f"loss must be scalar (1x1), got shape {loss.value.shape}")
        if store is not None:
            store.zero_grad()

        grads: list = [None] * (loss.index + 1)
        grads[loss.index] = np.ones((1, 1))
        named: dict[str, np.ndarray] = {}
        for i in range(loss.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self.nodes[i]
            if node.backward_fn is None:
                if node.name is not None:
                    named[node.name] = g
                continue
            needs = tuple(isinstance(p, Node) for p in node.parents)
            for parent, pg in zip(node.parents, node.backward_fn(g, needs)):
                if pg is None or not isinstance(parent, Node):
                    continue
                j = parent.index
                grads[j] = pg if grads[j] is None else grads[j] + pg

        if store is not None:
            for name, g in named.items():
                if name in store.grads:
                    store.grads[name] = store.grads[name] + g
        return named


def value_of(x):
    return x.value if isinstance(x, Node) else x


def _record(value, parents, backward_fn):
    for p in parents:
        if isinstance(p, Node):
            return Node(p.tape, value, parents, backward_fn)
    return value


def _unbroadcast(g, shape):
    # only row-vector bias broadcasting is supported
    if g.shape == shape:
        return g
    return g.sum(axis=0, keepdims=True)


# ---------------------------------------------------------------- primitives

def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {av.shape} x {bv.shape}")

    def back(g, needs):
        return (g @ bv.T if needs[0] else None, av.T @ g if needs[1] else None)

    return _record(av @ bv, (a, b), back)


def add(a, b):
    """Elementwise sum; ``b`` may be a 1xc row broadcast over the rows of ``a``."""
    av, bv = value_of(a), value_of(b)
    if av.shape != bv.shape and not (bv.shape[0] == 1 and bv.shape[1] == av.shape[1]):
        raise DimensionError(f"add shape mismatch: {av.shape} + {bv.shape}")
    bshape = bv.shape

    def back(g, needs):
        return (g if needs[0] else None, _unbroadcast(g, bshape) if needs[1] else None)

    return _record(av + bv, (a, b), back)


def sub(a, b):
    return add(a, scale(b, -1.0))


def hadamard(a, b):
    av, bv = value_of(a), value_of(b)
    if av.shape != bv.shape:
        raise DimensionError(f"hadamard shape mismatch: {av.shape} * {bv.shape}")

    def back(g, needs):
        return (g * bv if needs[0] else None, g * av if needs[1] else None)

    return _record(av * bv, (a, b), back)


def scale(a, c: float):
    av = value_of(a)
    c = float(c)
    return _record(av * c, (a,), lambda g, needs: (g * c,))


def concat_columns(*parts):
    vals = [value_of(p) for p in parts]
    rows = {v.shape[0] for v in vals}
    if len(rows) != 1:
        raise DimensionError(f"concat_columns row mismatch: {[v.shape for v in vals]}")
    edges = np.cumsum([0] + [v.shape[1] for v in vals])

    def back(g, needs):
        return tuple(g[:, edges[k]:edges[k + 1]] if needs[k] else None for k in range(len(vals)))

    return _record(np.concatenate(vals, axis=1), tuple(parts), back)


def sigmoid(x):
    xv = value_of(x)
    out = np.empty_like(xv)
    pos = xv >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
    ez = np.exp(xv[~pos])
    out[~pos] = ez / (1.0 + ez)
    np.clip(out, _SIG_LO, _SIG_HI, out=out)
    return _record(out, (x,), lambda g, needs: (g * out * (1.0 - out),))


def tanh(x):
    out = np.clip(np.tanh(value_of(x)), -_SIG_HI, _SIG_HI)
    return _record(out, (x,), lambda g, needs: (g * (1.0 - out * out),))


def relu(x):
    xv = value_of(x)
    mask = xv > 0
    return _record(xv * mask, (x,), lambda g, needs: (g * mask,))


def activation(x, kind: str):
    try:
        fn = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}") from None
    return fn(x)


def mse(pred, target):
    """Mean of squared differences, as a 1x1 value."""
    pv, tv = value_of(pred), value_of(target)
    if pv.shape != tv.shape:
        raise DimensionError(f"mse shape mismatch: {pv.shape} vs {tv.shape}")
    diff = pv - tv
    k = 2.0 / diff.size

    def back(g, needs):
        gd = g[0, 0] * k * diff
        return (gd if needs[0] else None, -gd if needs[1] else None)

    return _record(np.array([[np.mean(diff * diff)]]), (pred, target), back)


def sum_of_squares(x):
    xv = value_of(x)
    return _record(np.array([[np.sum(xv * xv)]]), (x,), lambda g, needs: (2.0 * g[0, 0] * xv,))


def graph_propagate(p: np.ndarray, x):
    """Left-multiply each n-row block of ``x`` by the constant n x n matrix ``p``.

    ``x`` stacks B graph signals of n nodes as (B*n) x F rows; the result equals
    ``kron(I_B, p) @ x`` without materialising the block-diagonal matrix.
    """
    xv = value_of(x)
    n = p.shape[0]
    if xv.shape[0] % n:
        raise DimensionError(f"graph_propagate: {xv.shape[0]} rows is not a multiple of {n} nodes")
    b, f = xv.shape[0] // n, xv.shape[1]
    out = np.matmul(p, xv.reshape(b, n, f)).reshape(b * n, f)
    pt = p.T

    def back(g, needs):
        return (None, np.matmul(pt, g.reshape(b, n, f)).reshape(b * n, f))

    return _record(out, (p, x), back)


# ---------------------------------------------------------------- parameters

class ParamStore:
    """Named parameters with same-shaped gradient slots.

    Parameters added with ``bias=True`` are excluded from :func:`l2_penalty`.
    """

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.biases: set[str] = set()

    def add(self, name, value, bias=False):
        value = as_matrix(value, name).copy()
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        if bias:
            self.biases.add(name)
        return value

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def weight_names(self):
        return [k for k in self.params if k not in self.biases]

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def size(self):
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, v in self.params.items():
            out.add(k, v, bias=k in self.biases)
        return out

    def state_dict(self):
        return {k: v.copy() for k, v in self.params.items()}

    def load_state_dict(self, weights):
        for k in self.params:
            if k not in weights:
                raise ValueError(f"missing parameter {k!r}")
            v = np.asarray(weights[k], dtype=np.float64)
            if v.shape != self.params[k].shape:
                raise DimensionError(f"parameter {k!r}: expected {self.params[k].shape}, got {v.shape}")
            self.params[k] = v.copy()


def l2_penalty(params: ParamStore) -> float:
    """Sum of squared entries over weight matrices; biases are excluded."""
    return float(sum(np.sum(params[k] ** 2) for k in params.weight_names()))


def l2_node(nodes: dict, params: ParamStore):
    """Taped version of :func:`l2_penalty` over watched parameter nodes."""
    total = None
    for k in params.weight_names():
        term = sum_of_squares(nodes[k])
        total = term if total is None else add(total, term)
    return total if total is not None else np.zeros((1, 1))


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParamStore, state: AdamState, lr: float) -> ParamStore:
    """One bias-corrected Adam update in place, using ``params.grads``."""
    if not lr > 0:
        raise ConfigError(f"learning rate must be > 0, got {lr}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, w in params.params.items():
        g = params.grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        w -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def finite_difference_grads(loss_fn, params: ParamStore, step=1e-5) -> dict[str, np.ndarray]:
    """Central finite-difference gradient of ``loss_fn(params) -> float``."""
    out = {}
    for name, w in params.params.items():
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + step
            hi = loss_fn(params)
            w[idx] = orig - step
            lo = loss_fn(params)
            w[idx] = orig
            g[idx] = (hi - lo) / (2.0 * step)
        out[name] = g
    return out
