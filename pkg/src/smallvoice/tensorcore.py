"""Reverse-mode autodiff engine for the speech-command CNNs.

Provides exactly the layer set the classifiers need: 1x1/3x1 convolutions,
ELU, inverted dropout, stride-2 average pooling, temporal max pooling, a
fully connected layer, softmax cross-entropy, plus the Adam optimizer.
All math runs at float64 so analytic gradients can be checked against
central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeMismatch(ValueError):
    """Operand shapes are inconsistent with the operation."""


class InvalidRate(ValueError):
    """Dropout rate outside [0, 1)."""


class InputTooShort(ValueError):
    """Sequence has too few frames for the operation."""


class EmptySequence(ValueError):
    """All frames are masked out."""


class BadTarget(IndexError):
    """Class index outside [0, K)."""


class NonScalarLoss(ValueError):
    """backward() requires a scalar loss node."""


class Node:
    """A value in the computation graph.

    `values` and `grad` are same-shaped float64 arrays; `grad` is all zero
    until a backward pass populates it and accumulates across repeated
    backward calls until `zero_grad`.
    """

    __slots__ = ("values", "grad", "_parents", "_backprop")

    def __init__(self, values, _parents=(), _backprop=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)
        self._parents: tuple = tuple(_parents)
        self._backprop: Optional[Callable] = _backprop

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Node(shape={self.values.shape})"


class FrameMask:
    """Boolean validity per frame; real frames always form a prefix."""

    __slots__ = ("flags",)

    def __init__(self, flags):
        flags = np.asarray(flags, dtype=bool)
        if flags.ndim != 1:
            raise ShapeMismatch("mask must be one-dimensional")
        n = int(flags.sum())
        if not flags[:n].all():
            raise ValueError("padding frames must be a suffix")
        self.flags = flags

    @classmethod
    def full(cls, length: int) -> "FrameMask":
        return cls(np.ones(length, dtype=bool))

    @classmethod
    def prefix(cls, real: int, total: int) -> "FrameMask":
        if real > total:
            raise ShapeMismatch(f"real length {real} exceeds total {total}")
        flags = np.zeros(total, dtype=bool)
        flags[:real] = True
        return cls(flags)

    @property
    def count(self) -> int:
        return int(self.flags.sum())

    def __len__(self):
        return len(self.flags)


@dataclass
class ParameterGroup:
    """A named trainable weight (and optional bias)."""

    name: str
    weight: Node
    bias: Optional[Node] = None

    def nodes(self):
        yield f"{self.name}.weight", self.weight
        if self.bias is not None:
            yield f"{self.name}.bias", self.bias


@dataclass
class AdamState:
    """Bias-corrected Adam optimizer state."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Layer operations


def conv1d(x: Node, weight: Node, bias: Node, padding: str = "same") -> Node:
    """1-D convolution over [C_in, T] with a [C_out, C_in, k] kernel.

    k must be 1 or 3. With padding="same" a k=3 kernel pads one zero frame
    on each side so T is preserved; k=1 preserves T either way.
    """
    if x.values.ndim != 2 or weight.values.ndim != 3:
        raise ShapeMismatch("conv1d expects x [C_in,T] and weight [C_out,C_in,k]")
    c_out, c_in, k = weight.values.shape
    if k not in (1, 3):
        raise ShapeMismatch(f"kernel size must be 1 or 3, got {k}")
    if x.values.shape[0] != c_in:
        raise ShapeMismatch(
            f"input has {x.values.shape[0]} channels, kernel expects {c_in}"
        )
    if bias.values.shape != (c_out,):
        raise ShapeMismatch(f"bias must have shape ({c_out},)")
    if padding not in ("same", "none"):
        raise ValueError(f"unknown padding {padding!r}")

    pad = 1 if (padding == "same" and k == 3) else 0
    t_out = x.values.shape[1] + 2 * pad - k + 1
    if t_out < 1:
        raise InputTooShort("sequence shorter than the unpadded kernel")

    xp = np.pad(x.values, ((0, 0), (pad, pad)))
    windows = sliding_window_view(xp, k, axis=1)  # [C_in, T_out, k]
    out = np.einsum("oik,itk->ot", weight.values, windows) + bias.values[:, None]

    def backprop(dout):
        db = dout.sum(axis=1)
        dw = np.einsum("ot,itk->oik", dout, windows)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dxp[:, j : j + t_out] += np.einsum("ot,oi->it", dout, weight.values[:, :, j])
        dx = dxp[:, pad : dxp.shape[1] - pad] if pad else dxp
        return dx, dw, db

    return Node(out, (x, weight, bias), backprop)


def elu(x: Node) -> Node:
    """Exponential linear unit with alpha=1."""
    v = x.values
    pos = v > 0
    out = np.where(pos, v, np.expm1(v))

    def backprop(dout):
        return (dout * np.where(pos, 1.0, np.exp(v)),)

    return Node(out, (x,), backprop)


def dropout(x: Node, rate: float, training: bool, rng: np.random.Generator) -> Node:
    """Inverted dropout: zero with probability `rate`, scale survivors by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise InvalidRate(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return Node(x.values, (x,), lambda dout: (dout,))

    keep = rng.random(x.values.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    mask = keep * scale

    def backprop(dout):
        return (dout * mask,)

    return Node(x.values * mask, (x,), backprop)


def avgpool2(x: Node, mask: FrameMask) -> tuple[Node, FrameMask]:
    """Average pooling with kernel 2 / stride 2; an odd trailing frame is dropped.

    The pooled mask is true only where both source frames were true.
    """
    if x.values.ndim != 2:
        raise ShapeMismatch("avgpool2 expects [C, T]")
    t = x.values.shape[1]
    if t < 2:
        raise InputTooShort(f"avgpool2 needs T >= 2, got {t}")
    if len(mask) != t:
        raise ShapeMismatch("mask length must match T")

    half = t // 2
    out = 0.5 * (x.values[:, 0 : 2 * half : 2] + x.values[:, 1 : 2 * half : 2])
    pooled = FrameMask(mask.flags[0 : 2 * half : 2] & mask.flags[1 : 2 * half : 2])

    def backprop(dout):
        dx = np.zeros_like(x.values)
        dx[:, 0 : 2 * half : 2] = 0.5 * dout
        dx[:, 1 : 2 * half : 2] = 0.5 * dout
        return (dx,)

    return Node(out, (x,), backprop), pooled


def temporal_maxpool(x: Node, mask: FrameMask) -> Node:
    """Max over unmasked frames per channel; gradient flows to the first argmax."""
    if x.values.ndim != 2:
        raise ShapeMismatch("temporal_maxpool expects [C, T]")
    if len(mask) != x.values.shape[1]:
        raise ShapeMismatch("mask length must match T")
    n = mask.count
    if n == 0:
        raise EmptySequence("all frames are masked")

    window = x.values[:, :n]  # real frames are a prefix
    idx = np.argmax(window, axis=1)  # first occurrence on ties
    out = window[np.arange(window.shape[0]), idx]

    def backprop(dout):
        dx = np.zeros_like(x.values)
        dx[np.arange(dx.shape[0]), idx] = dout
        return (dx,)

    return Node(out, (x,), backprop)


def linear(x: Node, weight: Node, bias: Node) -> Node:
    """Fully connected layer: weight [K, D] @ x [D] + bias [K]."""
    if x.values.ndim != 1 or weight.values.ndim != 2:
        raise ShapeMismatch("linear expects x [D] and weight [K,D]")
    k, d = weight.values.shape
    if x.values.shape[0] != d:
        raise ShapeMismatch(f"x has dim {x.values.shape[0]}, weight expects {d}")
    if bias.values.shape != (k,):
        raise ShapeMismatch(f"bias must have shape ({k},)")

    out = weight.values @ x.values + bias.values

    def backprop(dout):
        return weight.values.T @ dout, np.outer(dout, x.values), dout

    return Node(out, (x, weight, bias), backprop)


def softmax_cross_entropy(logits: Node, target) -> Node:
    """Cross-entropy of softmax(logits) against an integer class target.

    Accepts [K] logits with a scalar target or [B, K] logits with a length-B
    target sequence (mean loss). Computed with max-subtraction for stability.
    """
    v = logits.values
    if v.ndim == 1:
        k = v.shape[0]
        t = int(target)
        if not 0 <= t < k:
            raise BadTarget(f"target {t} outside [0, {k})")
        z = v - v.max()
        lse = np.log(np.exp(z).sum())
        loss = lse - z[t]
        probs = np.exp(z - lse)

        def backprop(dout):
            g = probs.copy()
            g[t] -= 1.0
            return (dout * g,)

        return Node(np.float64(loss), (logits,), backprop)

    if v.ndim == 2:
        b, k = v.shape
        targets = np.asarray(target, dtype=np.int64)
        if targets.shape != (b,):
            raise ShapeMismatch(f"need {b} targets, got shape {targets.shape}")
        if ((targets < 0) | (targets >= k)).any():
            raise BadTarget(f"targets outside [0, {k})")
        z = v - v.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        loss = (lse - z[np.arange(b), targets]).mean()
        probs = np.exp(z - lse[:, None])

        def backprop(dout):
            g = probs.copy()
            g[np.arange(b), targets] -= 1.0
            return (dout * g / b,)

        return Node(np.float64(loss), (logits,), backprop)

    raise ShapeMismatch("logits must be [K] or [B, K]")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain numerically stable softmax over the last axis (no graph)."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Graph plumbing


def concat(nodes: Sequence[Node]) -> Node:
    """Concatenate 1-D nodes into one vector."""
    for n in nodes:
        if n.values.ndim != 1:
            raise ShapeMismatch("concat expects 1-D nodes")
    sizes = [n.values.shape[0] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def backprop(dout):
        return tuple(np.split(dout, splits))

    return Node(np.concatenate([n.values for n in nodes]), tuple(nodes), backprop)


def stack(nodes: Sequence[Node]) -> Node:
    """Stack same-shape 1-D nodes into a [B, K] batch."""
    shape = nodes[0].values.shape
    for n in nodes:
        if n.values.shape != shape:
            raise ShapeMismatch("stack expects same-shape nodes")

    def backprop(dout):
        return tuple(dout[i] for i in range(len(nodes)))

    return Node(np.stack([n.values for n in nodes]), tuple(nodes), backprop)


def pick(x: Node, index: int) -> Node:
    """Select one element of a 1-D node as a scalar node."""
    if x.values.ndim != 1:
        raise ShapeMismatch("pick expects a 1-D node")
    if not 0 <= index < x.values.shape[0]:
        raise BadTarget(f"index {index} outside [0, {x.values.shape[0]})")

    def backprop(dout):
        dx = np.zeros_like(x.values)
        dx[index] = dout
        return (dx,)

    return Node(np.float64(x.values[index]), (x,), backprop)


def backward(loss: Node) -> None:
    """Reverse-mode accumulation from a scalar loss into .grad of reachable nodes.

    Repeated calls without zeroing accumulate.
    """
    if loss.values.ndim != 0:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.values.shape}")

    order: list[Node] = []
    seen: set[int] = set()
    stack_ = [(loss, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack_.append((parent, False))

    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    by_id = {id(n): n for n in order}
    for node in reversed(order):
        a = adjoint.get(id(node))
        if a is None or node._backprop is None:
            continue
        for parent, contrib in zip(node._parents, node._backprop(a)):
            prev = adjoint.get(id(parent))
            if prev is None:
                adjoint[id(parent)] = np.array(contrib, dtype=np.float64)
            else:
                prev += contrib

    for nid, a in adjoint.items():
        by_id[nid].grad += a


def zero_grads(groups: Sequence[ParameterGroup]) -> None:
    for g in groups:
        for _, node in g.nodes():
            node.zero_grad()


def adam_step(groups: Sequence[ParameterGroup], state: AdamState) -> None:
    """Bias-corrected Adam update over all parameter groups, then zero grads."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for g in groups:
        for key, node in g.nodes():
            m = state.m.get(key)
            if m is None:
                m = state.m[key] = np.zeros_like(node.values)
            v = state.v.get(key)
            if v is None:
                v = state.v[key] = np.zeros_like(node.values)
            m *= b1
            m += (1.0 - b1) * node.grad
            v *= b2
            v += (1.0 - b2) * node.grad**2
            node.values -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
            node.zero_grad()
