"""Atomic gadget networks: the hat function, squaring and multiplication.

Every gadget comes in two independent forms: an explicit weight-matrix
network and a plain-arithmetic mirror (``*_ref``). The mirrors repeat the
same recurrences in ordinary floating point and serve as the wiring oracle
for everything built on top.

The multiplication gadget realizes the polarization identity

    mult(x, y) = 2*Q^2 * (sq(|x+y|/2Q) - sq(|x|/2Q) - sq(|y|/2Q)),

where sq approximates t^2 on [-1, 1] by the sawtooth-composition scheme with
per-stage interpolation error 4^-(m+1). The squaring tolerance eps/(6*Q^2)
makes the end-to-end multiplication error at most eps on [-Q, Q]^2, and
mult(x, 0) = mult(0, y) = 0 exactly because the squaring branches cancel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import (
    IDENTITY,
    RELU,
    ContractError,
    LayerSpec,
    ReluNetwork,
    ShapeArray,
    compose_serial,
    stack_padded,
    zeros,
)


@dataclass(frozen=True)
class MultGadgetConfig:
    """Parameters of one multiplication gadget.

    Q bounds the inputs (|x|, |y| <= Q); eps is the target multiplication
    error; delta_sq = eps / (6 * Q^2) is the tolerance handed to the three
    squaring branches so that 2*Q^2 * 3 * delta_sq <= eps.
    """

    q: float
    eps: float
    delta_sq: float = field(init=False)

    def __post_init__(self):
        if self.q < 1.0:
            raise ContractError(f"Q must be >= 1, got {self.q}")
        if not 0.0 < self.eps < 1.0:
            raise ContractError(f"eps must lie in (0,1), got {self.eps}")
        object.__setattr__(self, "delta_sq", self.eps / (6.0 * self.q * self.q))

    @property
    def stages(self) -> int:
        return squaring_stages(self.delta_sq)


def squaring_stages(delta: float) -> int:
    """Sawtooth stages m with interpolation error 4^-(m+1) in [delta/4, delta)."""
    if not 0.0 < delta < 1.0:
        raise ContractError(f"delta must lie in (0,1), got {delta}")
    return max(1, math.floor(math.log2(1.0 / delta) / 2.0))


def psi_ref(t):
    """Closed form of the trapezoid: 1 on |t|<1, 2-|t| on [1,2], 0 beyond."""
    a = np.abs(np.asarray(t, dtype=float))
    return np.maximum(2.0 - a, 0.0) - np.maximum(1.0 - a, 0.0)


def build_psi() -> ReluNetwork:
    """Exact hat network: relu(2-relu(t)-relu(-t)) - relu(1-relu(t)-relu(-t))."""
    l1 = LayerSpec(np.array([[1.0], [-1.0]]), np.zeros(2), RELU)
    l2 = LayerSpec(np.array([[-1.0, -1.0], [-1.0, -1.0]]), np.array([2.0, 1.0]), RELU)
    out = LayerSpec(np.array([[1.0, -1.0]]), np.zeros(1), IDENTITY)
    return ReluNetwork(1, [l1, l2, out])


def hat_ref(t):
    """One sawtooth iterate: 2*relu(t) - 4*relu(t-1/2) + 2*relu(t-1)."""
    t = np.asarray(t, dtype=float)
    return (2.0 * np.maximum(t, 0.0)
            - 4.0 * np.maximum(t - 0.5, 0.0)
            + 2.0 * np.maximum(t - 1.0, 0.0))


def sq_ref_stages(t, stages: int):
    """Mirror of the squaring network: |t| minus the dyadic sawtooth series."""
    t = np.asarray(t, dtype=float)
    a = np.maximum(t, 0.0) + np.maximum(-t, 0.0)
    h = a
    acc = a
    for s in range(1, stages + 1):
        h = hat_ref(h)
        acc = acc - h * 4.0 ** (-s)
    return acc


def sq_ref(t, delta: float):
    return sq_ref_stages(t, squaring_stages(delta))


def build_squaring(delta: float) -> ReluNetwork:
    """Squaring network g with g(0)=0 and |g(t) - t^2| < delta on [-1, 1].

    Layer plan: one |t| layer (width 2), then ``stages`` sawtooth layers of
    width 4 carrying (p1, p2, p3, accumulator); the output layer forms
    acc - hat/4^m. Depth is 1 + stages = O(log(1/delta)).
    """
    stages = squaring_stages(delta)
    layers = [LayerSpec(np.array([[1.0], [-1.0]]), np.zeros(2), RELU)]
    # stage 1 reads (u, v) with |t| = u + v; both sawtooth input and
    # accumulator start at |t|.
    w = np.array([
        [1.0, 1.0],
        [1.0, 1.0],
        [1.0, 1.0],
        [1.0, 1.0],
    ])
    b = np.array([0.0, -0.5, -1.0, 0.0])
    layers.append(LayerSpec(w, b, RELU))
    for s in range(2, stages + 1):
        # previous units (p1, p2, p3, q); hat = 2p1 - 4p2 + 2p3
        c = 4.0 ** (-(s - 1))
        w = np.array([
            [2.0, -4.0, 2.0, 0.0],
            [2.0, -4.0, 2.0, 0.0],
            [2.0, -4.0, 2.0, 0.0],
            [-2.0 * c, 4.0 * c, -2.0 * c, 1.0],
        ])
        b = np.array([0.0, -0.5, -1.0, 0.0])
        layers.append(LayerSpec(w, b, RELU))
    c = 4.0 ** (-stages)
    out = LayerSpec(np.array([[-2.0 * c, 4.0 * c, -2.0 * c, 1.0]]), np.zeros(1), IDENTITY)
    layers.append(out)
    return ReluNetwork(1, layers)


def build_mult(cfg: MultGadgetConfig, shape_only: bool = False) -> ReluNetwork:
    """Two-input multiplication gadget, fully connected with width 12.

    Three squaring branches run in lockstep on (x+y)/2Q, x/2Q and y/2Q
    (4 units each after the shared first |.| layer of width 6); the output
    layer applies the 2*Q^2 polarization read-out.
    """
    stages = cfg.stages
    s = 1.0 / (2.0 * cfg.q)
    c_out = 2.0 * cfg.q * cfg.q
    if shape_only:
        layers = [LayerSpec(ShapeArray((6, 2)), ShapeArray((6,)), RELU)]
        layers += [LayerSpec(ShapeArray((12, 6 if i == 0 else 12)), ShapeArray((12,)), RELU)
                   for i in range(stages)]
        layers.append(LayerSpec(ShapeArray((1, 12)), ShapeArray((1,)), IDENTITY))
        return ReluNetwork(2, layers)
    # abs layer: (u, v) pairs for the three branch arguments
    w1 = np.array([
        [s, s], [-s, -s],
        [s, 0.0], [-s, 0.0],
        [0.0, s], [0.0, -s],
    ])
    layers = [LayerSpec(w1, np.zeros(6), RELU)]
    # first sawtooth stage per branch reads its (u, v) pair
    w = np.zeros((12, 6))
    b = np.zeros(12)
    for br in range(3):
        rows = slice(4 * br, 4 * br + 4)
        w[rows, 2 * br:2 * br + 2] = 1.0
        b[4 * br:4 * br + 4] = [0.0, -0.5, -1.0, 0.0]
    layers.append(LayerSpec(w, b, RELU))
    for st in range(2, stages + 1):
        c = 4.0 ** (-(st - 1))
        w = np.zeros((12, 12))
        b = np.zeros(12)
        for br in range(3):
            o = 4 * br
            for r in range(3):
                w[o + r, o:o + 3] = [2.0, -4.0, 2.0]
            w[o + 3, o:o + 4] = [-2.0 * c, 4.0 * c, -2.0 * c, 1.0]
            b[o:o + 4] = [0.0, -0.5, -1.0, 0.0]
        layers.append(LayerSpec(w, b, RELU))
    c = 4.0 ** (-stages)
    row = np.zeros((1, 12))
    for br, sign in ((0, 1.0), (1, -1.0), (2, -1.0)):
        o = 4 * br
        row[0, o:o + 4] = sign * c_out * np.array([-2.0 * c, 4.0 * c, -2.0 * c, 1.0])
    layers.append(LayerSpec(row, np.zeros(1), IDENTITY))
    return ReluNetwork(2, layers)


def mult_ref(x, y, cfg: MultGadgetConfig):
    """Plain-arithmetic mirror of the multiplication gadget."""
    s = 1.0 / (2.0 * cfg.q)
    stages = cfg.stages
    a = sq_ref_stages(np.asarray(x, float) * s + np.asarray(y, float) * s, stages)
    b = sq_ref_stages(np.asarray(x, float) * s, stages)
    c = sq_ref_stages(np.asarray(y, float) * s, stages)
    return 2.0 * cfg.q * cfg.q * (a - b - c)


def pair_mult(first: ReluNetwork, second: ReluNetwork, cfg: MultGadgetConfig,
              shape_only: bool = False) -> ReluNetwork:
    """Network computing mult(first(x), second(x)) on a shared input."""
    stacked = stack_padded([first, second], shared_input=True)
    return compose_serial(stacked, build_mult(cfg, shape_only=shape_only))


def build_product_chain(factors, cfg: MultGadgetConfig,
                        shape_only: bool = False) -> ReluNetwork:
    """Right-nested gadget chain approximating the product of the factors.

    chain(f1..fk) = mult(f1, mult(f2, ... mult(f_{k-1}, f_k))). A single
    factor is returned unchanged. Because mult(x,0) = mult(0,y) = 0 exactly,
    any factor that evaluates to zero forces the whole chain to zero,
    regardless of the other factors' magnitudes.
    """
    factors = list(factors)
    if not factors:
        raise ContractError("product chain needs at least one factor")
    if len({f.input_dim for f in factors}) != 1:
        raise ContractError("chain factors must share an input dimension")
    net = factors[-1]
    for f in reversed(factors[:-1]):
        net = pair_mult(f, net, cfg, shape_only=shape_only)
    return net


def chain_ref(values, cfg: MultGadgetConfig) -> float:
    """Mirror of build_product_chain on already-evaluated factor values."""
    values = list(values)
    if not values:
        raise ContractError("product chain needs at least one factor")
    if any(v == 0.0 for v in values):
        # mult(x, 0) = mult(0, y) = 0 exactly, so the chain collapses.
        return 0.0
    r = float(values[-1])
    for v in reversed(values[:-1]):
        r = float(mult_ref(v, r, cfg))
    return r
