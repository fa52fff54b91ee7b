"""Dense ReLU feedforward networks as explicit weight matrices.

A network is an immutable chain of dense affine layers. Hidden layers apply
ReLU component-wise; the final layer is affine only. Block structure (e.g.
parallel sub-networks) is stored as explicit zeros, so every object built
here is literally a fully connected architecture and the parameter count
``sum_l (H_l*H_{l+1} + H_{l+1})`` is unambiguous.

Evaluation is pure and safe to call from multiple threads; construction of a
single network is single-threaded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

RELU = "relu"
IDENTITY = "identity"

FORMAT_VERSION = 1

# Pointwise-identity claims (pad_depth, affine_combine) hold to this slack,
# absorbing double-precision rounding.
EXACTNESS_TOL = 1e-10


class NetworkError(Exception):
    """Base class for network construction and evaluation errors."""


class DimensionError(NetworkError):
    """Input or layer dimensions do not chain."""


class ContractError(NetworkError):
    """A combinator precondition was violated."""


class FormatError(NetworkError):
    """Malformed serialized network. Carries the offending layer index."""

    def __init__(self, message: str, layer_index: int | None = None):
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)
        self.layer_index = layer_index


class ShapeArray:
    """Shape-tracking stand-in for an ndarray.

    Used for dry-run builds: all combinators work unchanged, but no weight
    storage is allocated, so architecture statistics can be computed for
    networks far too large to materialize.
    """

    __slots__ = ("shape",)
    __array_ufunc__ = None

    def __init__(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        self.shape = tuple(int(s) for s in shape)

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def size(self):
        return int(np.prod(self.shape)) if self.shape else 1

    def _shape_of(self, other):
        return other.shape if hasattr(other, "shape") else np.shape(other)

    def __matmul__(self, other):
        o = self._shape_of(other)
        if self.shape[-1] != o[0]:
            raise DimensionError(f"matmul mismatch {self.shape} @ {o}")
        return ShapeArray(self.shape[:-1] + tuple(o[1:]))

    def __rmatmul__(self, other):
        o = self._shape_of(other)
        if o[-1] != self.shape[0]:
            raise DimensionError(f"matmul mismatch {o} @ {self.shape}")
        return ShapeArray(tuple(o[:-1]) + self.shape[1:])

    def __add__(self, other):
        o = self._shape_of(other)
        if tuple(o) not in (self.shape, ()):
            raise DimensionError(f"add mismatch {self.shape} + {o}")
        return ShapeArray(self.shape)

    __radd__ = __add__

    def __neg__(self):
        return ShapeArray(self.shape)

    def __mul__(self, other):
        return ShapeArray(self.shape)

    __rmul__ = __mul__

    def __setitem__(self, key, value):
        pass

    def __repr__(self):
        return f"ShapeArray{self.shape}"


def is_shape_only(x) -> bool:
    return isinstance(x, ShapeArray)


def zeros(shape, shape_only: bool = False):
    """Allocate a zero weight block, or just its shape in dry-run mode."""
    return ShapeArray(shape) if shape_only else np.zeros(shape, dtype=float)


def eye(n: int, shape_only: bool = False):
    return ShapeArray((n, n)) if shape_only else np.eye(n, dtype=float)


@dataclass(frozen=True)
class LayerSpec:
    """One dense affine layer: ``h -> act(weights @ h + biases)``."""

    weights: object  # (out_dim, in_dim) ndarray or ShapeArray
    biases: object   # (out_dim,) ndarray or ShapeArray
    activation: str  # RELU or IDENTITY

    def __post_init__(self):
        if self.activation not in (RELU, IDENTITY):
            raise ContractError(f"unknown activation {self.activation!r}")
        if getattr(self.weights, "ndim", None) != 2:
            raise DimensionError("weights must be a 2-d matrix")
        if getattr(self.biases, "ndim", None) != 1:
            raise DimensionError("biases must be a vector")
        if self.weights.shape[0] != self.biases.shape[0]:
            raise DimensionError(
                f"weights rows {self.weights.shape[0]} != biases {self.biases.shape[0]}"
            )
        if isinstance(self.weights, np.ndarray):
            if not np.all(np.isfinite(self.weights)) or not np.all(np.isfinite(self.biases)):
                raise ContractError("layer parameters must be finite")

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]


class ReluNetwork:
    """Immutable fully connected ReLU network.

    All hidden layers use ReLU; the final layer is affine (Identity).
    Zero-hidden-layer networks (plain affine maps) are permitted as
    combinator identities.
    """

    __slots__ = ("input_dim", "layers")

    def __init__(self, input_dim: int, layers: Sequence[LayerSpec]):
        if input_dim < 1:
            raise DimensionError("input_dim must be positive")
        layers = tuple(layers)
        if not layers:
            raise ContractError("a network needs at least one (output) layer")
        prev = input_dim
        for i, layer in enumerate(layers):
            if layer.in_dim != prev:
                raise DimensionError(
                    f"layer {i} expects input {layer.in_dim}, got {prev}"
                )
            prev = layer.out_dim
        for layer in layers[:-1]:
            if layer.activation != RELU:
                raise ContractError("hidden layers must use ReLU")
        if layers[-1].activation != IDENTITY:
            raise ContractError("the output layer must be affine (Identity)")
        object.__setattr__(self, "input_dim", int(input_dim))
        object.__setattr__(self, "layers", layers)

    def __setattr__(self, name, value):
        raise AttributeError("ReluNetwork is immutable")

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def depth(self) -> int:
        """Number of hidden layers."""
        return len(self.layers) - 1

    @property
    def shape_only(self) -> bool:
        return is_shape_only(self.layers[-1].weights)

    def __repr__(self):
        sizes = [self.input_dim] + [l.out_dim for l in self.layers]
        return f"ReluNetwork({'->'.join(map(str, sizes))})"


@dataclass(frozen=True)
class NetworkStats:
    """Depth L, width H and dense parameter count W of a network."""

    depth: int
    width: int
    weight_count: int


def stats(net: ReluNetwork) -> NetworkStats:
    """Exact dense parameter accounting: W = sum_l (H_l*H_{l+1} + H_{l+1})."""
    hidden = [l.out_dim for l in net.layers[:-1]]
    width = max(hidden) if hidden else 0
    count = sum(l.out_dim * l.in_dim + l.out_dim for l in net.layers)
    return NetworkStats(depth=net.depth, width=width, weight_count=count)


def eval_batch(net: ReluNetwork, xs, chunk_size: int = 2048) -> np.ndarray:
    """Forward pass over a batch of points, shape (n, input_dim) -> (n, out)."""
    if net.shape_only:
        raise ContractError("cannot evaluate a shape-only (dry-run) network")
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if xs.shape[1] != net.input_dim:
        raise DimensionError(
            f"input has dimension {xs.shape[1]}, network expects {net.input_dim}"
        )
    if not np.all(np.isfinite(xs)):
        raise DimensionError("inputs must be finite")
    out = np.empty((xs.shape[0], net.output_dim), dtype=float)
    for start in range(0, xs.shape[0], chunk_size):
        h = xs[start:start + chunk_size]
        for layer in net.layers:
            z = h @ layer.weights.T
            z += layer.biases
            if layer.activation == RELU:
                np.maximum(z, 0.0, out=z)
            h = z
        out[start:start + h.shape[0]] = h
    return out


def eval_forward(net: ReluNetwork, x) -> np.ndarray:
    """Forward pass for a single point; returns the output vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionError("eval_forward expects a 1-d point")
    return eval_batch(net, x[None, :])[0]


def eval_scalar(net: ReluNetwork, x) -> float:
    """Forward pass of a scalar-output network at one point."""
    y = eval_forward(net, x)
    if y.shape != (1,):
        raise DimensionError("network output is not scalar")
    return float(y[0])


# ---------------------------------------------------------------------------
# combinators
# ---------------------------------------------------------------------------


def affine_network(weights, biases=None) -> ReluNetwork:
    """Zero-hidden-layer network computing ``x -> W x + b``."""
    if not is_shape_only(weights):
        weights = np.atleast_2d(np.asarray(weights, dtype=float))
        if biases is None:
            biases = np.zeros(weights.shape[0])
        biases = np.asarray(biases, dtype=float).reshape(-1)
    return ReluNetwork(weights.shape[1], [LayerSpec(weights, biases, IDENTITY)])


def identity_network(dim: int, shape_only: bool = False) -> ReluNetwork:
    b = ShapeArray((dim,)) if shape_only else np.zeros(dim)
    return ReluNetwork(dim, [LayerSpec(eye(dim, shape_only), b, IDENTITY)])


def compose_serial(first: ReluNetwork, second: ReluNetwork) -> ReluNetwork:
    """Network computing ``second(first(x))``.

    The junction fuses first's final affine map into second's first layer
    (their matrices multiply), so no layer is wasted and
    depth = depth(first) + depth(second).
    """
    if first.output_dim != second.input_dim:
        raise DimensionError(
            f"cannot compose: {first.output_dim} outputs into {second.input_dim} inputs"
        )
    a_last = first.layers[-1]
    b_first = second.layers[0]
    fused = LayerSpec(
        b_first.weights @ a_last.weights,
        b_first.weights @ a_last.biases + b_first.biases,
        b_first.activation,
    )
    return ReluNetwork(first.input_dim, first.layers[:-1] + (fused,) + second.layers[1:])


def _block_layer(blocks: list[LayerSpec], stack_inputs: bool, shape_only: bool) -> LayerSpec:
    acts = {b.activation for b in blocks}
    if len(acts) != 1:
        raise ContractError("parallel layers must share an activation")
    rows = sum(b.out_dim for b in blocks)
    if shape_only:
        cols = blocks[0].in_dim if stack_inputs else sum(b.in_dim for b in blocks)
        return LayerSpec(ShapeArray((rows, cols)), ShapeArray((rows,)), acts.pop())
    if stack_inputs:
        # All blocks read the same (shared) input: stack vertically.
        cols = blocks[0].in_dim
        w = zeros((rows, cols), shape_only)
        b = zeros((rows,), shape_only)
        r = 0
        for blk in blocks:
            w[r:r + blk.out_dim, :] = blk.weights
            b[r:r + blk.out_dim] = blk.biases
            r += blk.out_dim
    else:
        cols = sum(b.in_dim for b in blocks)
        w = zeros((rows, cols), shape_only)
        b = zeros((rows,), shape_only)
        r = c = 0
        for blk in blocks:
            w[r:r + blk.out_dim, c:c + blk.in_dim] = blk.weights
            b[r:r + blk.out_dim] = blk.biases
            r += blk.out_dim
            c += blk.in_dim
    return LayerSpec(w, b, acts.pop())


def stack_parallel(nets: Sequence[ReluNetwork], shared_input: bool) -> ReluNetwork:
    """Run networks side by side; output is the concatenation of outputs.

    Requires equal depths (pad_depth first otherwise). The block-diagonal
    weight structure is stored densely, with explicit zeros off the blocks.
    """
    if not nets:
        raise ContractError("cannot stack an empty list")
    depths = {n.depth for n in nets}
    if len(depths) != 1:
        raise ContractError(f"stack_parallel requires equal depths, got {sorted(depths)}")
    if shared_input and len({n.input_dim for n in nets}) != 1:
        raise DimensionError("shared_input requires equal input dims")
    shape_only = any(n.shape_only for n in nets)
    n_layers = len(nets[0].layers)
    layers = []
    for i in range(n_layers):
        blocks = [n.layers[i] for n in nets]
        layers.append(_block_layer(blocks, stack_inputs=shared_input and i == 0,
                                   shape_only=shape_only))
    input_dim = nets[0].input_dim if shared_input else sum(n.input_dim for n in nets)
    return ReluNetwork(input_dim, layers)


def pad_depth(net: ReluNetwork, target_depth: int) -> ReluNetwork:
    """Deepen a network without changing its function.

    Each padding layer carries every output signal v through the pair
    (relu(v), relu(-v)) and the new output layer recombines them, so the
    padded network agrees with the original exactly in real arithmetic.
    """
    k = target_depth - net.depth
    if k < 0:
        raise ContractError(f"target depth {target_depth} < current {net.depth}")
    if k == 0:
        return net
    shape_only = net.shape_only
    o = net.output_dim
    last = net.layers[-1]
    first_pad = LayerSpec(
        _vstack(last.weights, shape_only),
        _signed_concat(last.biases, shape_only),
        RELU,
    )
    carry = LayerSpec(eye(2 * o, shape_only), zeros((2 * o,), shape_only), RELU)
    if shape_only:
        out_w = ShapeArray((o, 2 * o))
    else:
        out_w = np.hstack([np.eye(o), -np.eye(o)])
    out = LayerSpec(out_w, zeros((o,), shape_only), IDENTITY)
    return ReluNetwork(
        net.input_dim,
        net.layers[:-1] + (first_pad,) + (carry,) * (k - 1) + (out,),
    )


def _vstack(w, shape_only):
    if shape_only:
        return ShapeArray((2 * w.shape[0], w.shape[1]))
    return np.vstack([w, -w])


def _signed_concat(b, shape_only):
    if shape_only:
        return ShapeArray((2 * b.shape[0],))
    return np.concatenate([b, -b])


def carry_network(dim: int, depth: int, shape_only: bool = False) -> ReluNetwork:
    """Identity on ``dim`` signals realized with ``depth`` hidden layers."""
    return pad_depth(identity_network(dim, shape_only), depth)


def stack_padded(nets: Sequence[ReluNetwork], shared_input: bool) -> ReluNetwork:
    """stack_parallel after padding all networks to the maximum depth."""
    depth = max(n.depth for n in nets)
    # repeated identical sub-networks (common in dry runs) pad once
    cache: dict = {}
    padded = [cache.setdefault(id(n), pad_depth(n, depth)) for n in nets]
    return stack_parallel(padded, shared_input)


def affine_combine(nets: Sequence[ReluNetwork], coeffs, offset: float = 0.0) -> ReluNetwork:
    """Network computing ``offset + sum_j coeffs[j] * nets[j](x)``.

    One affine read-out row is appended to the parallel stack; no hidden
    layers are added beyond the stack itself.
    """
    coeffs = np.asarray(coeffs, dtype=float).reshape(-1)
    if len(coeffs) != len(nets):
        raise ContractError(f"{len(nets)} networks but {len(coeffs)} coefficients")
    if any(n.output_dim != 1 for n in nets):
        raise DimensionError("affine_combine requires scalar-output networks")
    if len({n.input_dim for n in nets}) != 1:
        raise DimensionError("affine_combine requires equal input dims")
    stacked = stack_padded(nets, shared_input=True)
    if stacked.shape_only:
        row = ShapeArray((1, len(nets)))
        return compose_serial(stacked, ReluNetwork(
            len(nets), [LayerSpec(row, ShapeArray((1,)), IDENTITY)]))
    return compose_serial(stacked, affine_network(coeffs[None, :], [offset]))


def scale_output(net: ReluNetwork, factor: float, offset: float = 0.0) -> ReluNetwork:
    """Scale (and shift) a scalar-output network without adding depth."""
    if net.output_dim != 1:
        raise DimensionError("scale_output requires a scalar output")
    if net.shape_only:
        return net
    return compose_serial(net, affine_network([[factor]], [offset]))


# ---------------------------------------------------------------------------
# fully connected report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FullyConnectedReport:
    """Structural checks: dense chaining, the W identity and W <= 3H^2L + 3H."""

    ok: bool
    depth: int
    width: int
    weight_count: int
    formula_weight_count: int
    dense_bound: int
    dense_bound_ok: bool
    chained: bool


def assert_fully_connected(net: ReluNetwork) -> FullyConnectedReport:
    """Verify the dense representation invariants and parameter bounds.

    ``weight_count`` is recounted from the raw matrices and compared with the
    layer-size formula; the dense bound uses C = 3 (see NetworkStats). For
    zero-hidden-layer networks the bound is vacuous and reported as passing.
    """
    s = stats(net)
    raw = 0
    chained = True
    prev = net.input_dim
    for layer in net.layers:
        raw += layer.weights.shape[0] * layer.weights.shape[1] + layer.biases.shape[0]
        chained = chained and layer.in_dim == prev
        prev = layer.out_dim
    h, l = s.width, s.depth
    bound = 3 * h * h * l + 3 * h
    bound_ok = l == 0 or s.weight_count <= bound
    ok = chained and raw == s.weight_count and bound_ok
    return FullyConnectedReport(
        ok=ok,
        depth=s.depth,
        width=s.width,
        weight_count=s.weight_count,
        formula_weight_count=raw,
        dense_bound=bound,
        dense_bound_ok=bound_ok,
        chained=chained,
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def serialize(net: ReluNetwork) -> str:
    """JSON text for a network; floats round-trip exactly."""
    if net.shape_only:
        raise ContractError("cannot serialize a shape-only network")
    doc = {
        "version": FORMAT_VERSION,
        "input_dim": net.input_dim,
        "layers": [
            {
                "activation": layer.activation,
                "weights": layer.weights.tolist(),
                "biases": layer.biases.tolist(),
            }
            for layer in net.layers
        ],
    }
    return json.dumps(doc)


def deserialize(text: str | bytes) -> ReluNetwork:
    """Parse a serialized network, validating structure layer by layer."""
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError("document is not an object")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version!r}")
    try:
        input_dim = int(doc["input_dim"])
        raw_layers = doc["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"missing or malformed field: {exc}") from exc
    layers = []
    for i, raw in enumerate(raw_layers):
        try:
            w = np.asarray(raw["weights"], dtype=float)
            b = np.asarray(raw["biases"], dtype=float)
            act = raw["activation"]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(str(exc), layer_index=i) from exc
        try:
            layers.append(LayerSpec(w, b, act))
        except NetworkError as exc:
            raise FormatError(str(exc), layer_index=i) from exc
    try:
        return ReluNetwork(input_dim, layers)
    except NetworkError as exc:
        raise FormatError(str(exc)) from exc


def save_network(net: ReluNetwork, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(net))


def load_network(path) -> ReluNetwork:
    with open(path, "r", encoding="utf-8") as fh:
        return deserialize(fh.read())
