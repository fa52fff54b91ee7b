"""Narrow fully connected approximators with explicit weights.

The construction localizes a smooth target with a partition of unity, takes
degree-(beta-1) local polynomials, and realizes every product with the
multiplication gadget. Width stays near (2N+1)^(d/2) instead of (2N+1)^d by
splitting the coordinates in half and pairing the two half-product banks
through one gadget bank:

* even d: half products over x^1 and x^2, weighted sums over the left bank
  fused into the pairing gadgets' first layer;
* odd d > 1: the center coordinate's 2N+1 cells are factored into about
  sqrt(2N+1) residue groups and sqrt(2N+1) band indicators; group sums pair
  with the left bank, band indicators with the right bank, and the leftover
  center cells (at most 3*ceil(sqrt(2N+1)) of them) fold into the left half;
* d = 1: an exact ReLU staircase recenters x inside its band, so one shared
  bank of about sqrt(N) cell networks serves every band, gated by exact
  trapezoid band indicators.

Builders accept ``shape_only=True`` to produce dry-run networks whose layer
shapes (hence NetworkStats) are exact but whose weights are never
materialized; coefficient evaluation is skipped in that mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gadgets import (
    MultGadgetConfig,
    build_mult,
    build_product_chain,
    build_psi,
)
from .network import (
    IDENTITY,
    RELU,
    ContractError,
    LayerSpec,
    NetworkStats,
    ReluNetwork,
    ShapeArray,
    affine_network,
    carry_network,
    compose_serial,
    stack_padded,
    stack_parallel,
    stats,
    zeros,
)
from .partition import (
    PARITY_EVEN,
    PARITY_ODD,
    PARITY_ONE,
    ConstructionPlan,
    F1Evaluator,
    InfeasibleConstructionError,
    enumerate_alphas,
    grid_cells,
    make_plan,
)
from .targets import TargetFunction


def default_width_budget(d: int) -> int:
    """Desk-scale width ceiling keeping builds evaluable in about a minute.

    Never binds for d <= 2 at the accuracy ranges exercised here; for d >= 3
    the formula grid would produce multi-gigabyte dense networks, so N is
    capped and the plan records it. Raise the budget to trade time and
    memory for a finer grid.
    """
    return 4096 if d <= 2 else 1536


# ---------------------------------------------------------------------------
# factor networks
# ---------------------------------------------------------------------------


def psi_factor_net(d_in: int, coord: int, n: int, m: int,
                   shape_only: bool = False) -> ReluNetwork:
    """Network computing psi(3N*x_coord - 3m) on a d_in-dimensional input."""
    if shape_only:
        return ReluNetwork(d_in, [
            LayerSpec(ShapeArray((2, d_in)), ShapeArray((2,)), RELU),
            LayerSpec(ShapeArray((2, 2)), ShapeArray((2,)), RELU),
            LayerSpec(ShapeArray((1, 2)), ShapeArray((1,)), IDENTITY),
        ])
    row = np.zeros((1, d_in))
    row[0, coord] = 3.0 * n
    return compose_serial(affine_network(row, [-3.0 * m]), build_psi())


LIN_SHIFT = 3.0  # keeps x_coord - c + shift nonnegative for |x|<=1, |c|<=1
                 # and for the 1-d staircase output, so relu passes exactly


def lin_factor_net(d_in: int, coord: int, c: float,
                   shape_only: bool = False) -> ReluNetwork:
    """Network computing x_coord - c via relu(x_coord - c + shift) - shift."""
    if shape_only:
        return ReluNetwork(d_in, [
            LayerSpec(ShapeArray((1, d_in)), ShapeArray((1,)), RELU),
            LayerSpec(ShapeArray((1, 1)), ShapeArray((1,)), IDENTITY),
        ])
    row = np.zeros((1, d_in))
    row[0, coord] = 1.0
    l1 = LayerSpec(row, np.array([LIN_SHIFT - c]), RELU)
    out = LayerSpec(np.array([[1.0]]), np.array([-LIN_SHIFT]), IDENTITY)
    return ReluNetwork(d_in, [l1, out])


_SHAPE_CHAIN_CACHE: dict = {}


def cell_chain_net(d_in: int, coords, m, alpha, n: int, cfg: MultGadgetConfig,
                   shape_only: bool = False) -> ReluNetwork:
    """Gadget chain for phi-cell m with linear powers alpha on ``coords``.

    Factor order is all psi factors first (coordinate-ascending), then the
    linear factors; with the right-nested chain this keeps every gadget
    input inside [-Q, Q] and forces an exact zero off the cell's support.
    """
    if shape_only:
        # layer shapes depend only on the factor counts and the gadget depth
        key = (d_in, len(coords), sum(alpha), cfg.stages)
        if key not in _SHAPE_CHAIN_CACHE:
            _SHAPE_CHAIN_CACHE[key] = _chain_net(d_in, coords, m, alpha, n, cfg, True)
        return _SHAPE_CHAIN_CACHE[key]
    return _chain_net(d_in, coords, m, alpha, n, cfg, False)


def _chain_net(d_in, coords, m, alpha, n, cfg, shape_only):
    factors = [psi_factor_net(d_in, k, n, mk, shape_only)
               for k, mk in zip(coords, m)]
    for k, mk, p in zip(coords, m, alpha):
        factors.extend(lin_factor_net(d_in, k, mk / n, shape_only)
                       for _ in range(p))
    return build_product_chain(factors, cfg, shape_only=shape_only)


# ---------------------------------------------------------------------------
# generic pairing combinator
# ---------------------------------------------------------------------------


def mlp_convert(left_parts, right_parts, coeffs, cfg: MultGadgetConfig,
                pre_scale: float = 1.0, post_scale: float = 1.0,
                offset: float = 0.0, shape_only: bool = False) -> ReluNetwork:
    """Fully connected net for post_scale * sum_j mult(u_j, right_j) + offset,
    where u_j = pre_scale * sum_i coeffs[j][i] * left_i(x).

    All parts are padded to a common depth and stacked; the weighted sums are
    fused into the gadget bank's first affine map, so the conversion adds no
    hidden layers beyond the gadget depth.
    """
    left_parts = list(left_parts)
    right_parts = list(right_parts)
    if not left_parts or not right_parts:
        raise ContractError("mlp_convert needs nonempty part lists")
    dims = {p.input_dim for p in left_parts + right_parts}
    if len(dims) != 1:
        raise ContractError("parts must share an input dimension")
    if any(p.output_dim != 1 for p in left_parts + right_parts):
        raise ContractError("parts must have scalar outputs")
    kl, kr = len(left_parts), len(right_parts)
    bank = stack_padded(left_parts + right_parts, shared_input=True)
    pre = zeros((2 * kr, kl + kr), shape_only)
    pre_b = zeros((2 * kr,), shape_only)
    if not shape_only:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (kr, kl):
            raise ContractError(f"coeffs must be ({kr}, {kl}), got {coeffs.shape}")
        pre[0::2, :kl] = pre_scale * coeffs
        pre[1::2, kl:] = np.eye(kr)
    gadgets = stack_parallel([build_mult(cfg, shape_only)] * kr, shared_input=False)
    head = compose_serial(compose_serial(bank, affine_network(pre, pre_b)), gadgets)
    out_w = zeros((1, kr), shape_only)
    out_b = zeros((1,), shape_only)
    if not shape_only:
        out_w[0, :] = post_scale
        out_b[0] = offset
    return compose_serial(head, ReluNetwork(kr, [LayerSpec(out_w, out_b, IDENTITY)]))


# ---------------------------------------------------------------------------
# grid grouping (odd-d center coordinate)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridGrouping:
    """Residue groups G_g = {-N + i*A + g} of the center grid, A = ceil(sqrt(2N+1)).

    ``groups`` holds the raw formula members (which may exceed N); the
    g1/g2 unions and the band decomposition m = (-N + g) + A*b cover the
    actual grid {-N..N}.
    """

    n: int
    a: int
    groups: tuple

    @property
    def g1_union(self) -> frozenset:
        return self.groups[0] | self.groups[1] | self.groups[self.a - 1]

    @property
    def g2_union(self) -> frozenset:
        out = frozenset()
        for g in range(2, self.a - 1):
            out |= self.groups[g]
        return out

    def band_of(self, m: int):
        """(b, g) for m in the g2 union, with m = -N + g + A*b."""
        g = (m + self.n) % self.a
        b = (m + self.n) // self.a
        if not 2 <= g <= self.a - 2:
            raise ContractError(f"{m} is not in the g2 union")
        assert -self.n + 1 + self.a * b <= m <= -self.n + self.a * b + self.a - 1
        return b, g


def build_grouping(n: int) -> GridGrouping:
    """Group the center-coordinate cells and validate the selection property."""
    if n < 4:
        raise ContractError(f"grouping requires N >= 4, got {n}")
    a = math.ceil(math.sqrt(2 * n + 1))
    groups = tuple(
        frozenset(-n + i * a + g for i in range(a)) for g in range(a)
    )
    grouping = GridGrouping(n=n, a=a, groups=groups)
    # disjointness and coverage
    for g in range(a):
        for g2 in range(g + 1, a):
            assert not (groups[g] & groups[g2])
    covered = set()
    for g in range(a):
        covered |= groups[g]
    assert covered >= set(range(-n, n + 1))
    # selection property: at any x at most two cells are active and they have
    # distinct residues, so each group contributes at most one active bump.
    for x in np.linspace(-1.0, 1.0, 8 * n + 3):
        active = [j for j in range(-n, n + 1) if abs(n * x - j) < 2.0 / 3.0]
        assert len(active) <= 2
        assert len({(j + n) % a for j in active}) == len(active)
    return grouping


def kappa_members(b: int, n: int, a: int) -> list:
    """Grid cells summed by the band function kappa_b, clipped to [-N, N]."""
    return [j for j in range(-n + a * b + 1, -n + a * b + a) if -n <= j <= n]


def build_kappa(b: int, plan: ConstructionPlan) -> ReluNetwork:
    """Band selector kappa_b = sum of the A-1 bumps inside band b (1-d input)."""
    if not 0 <= b <= plan.a - 1:
        raise ContractError(f"band index {b} outside 0..{plan.a - 1}")
    members = kappa_members(b, plan.n, plan.a)
    if not members:
        raise ContractError(f"band {b} has no cells on the grid")
    nets = [psi_factor_net(1, 0, plan.n, j) for j in members]
    stackednet = stack_padded(nets, shared_input=True)
    row = np.ones((1, len(nets)))
    return compose_serial(stackednet, affine_network(row, [0.0]))


def kappa_ref(b: int, plan: ConstructionPlan, x: float) -> float:
    from .gadgets import psi_ref

    return float(sum(psi_ref(3.0 * plan.n * x - 3.0 * j)
                     for j in kappa_members(b, plan.n, plan.a)))


# ---------------------------------------------------------------------------
# layouts: deterministic cell enumerations shared with the reference mirror
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvenLayout:
    plan: ConstructionPlan
    left_coords: tuple
    right_coords: tuple
    cells_left: tuple   # ((m, alpha), ...) on the left half
    cells_right: tuple


def make_even_layout(plan: ConstructionPlan) -> EvenLayout:
    d2 = plan.d // 2
    alphas = enumerate_alphas(d2, plan.beta)
    cells = tuple((m, al) for m in grid_cells(plan.n, d2) for al in alphas)
    return EvenLayout(
        plan=plan,
        left_coords=tuple(range(d2)),
        right_coords=tuple(range(d2, plan.d)),
        cells_left=cells,
        cells_right=cells,
    )


@dataclass(frozen=True)
class OddLayout:
    plan: ConstructionPlan
    grouping: GridGrouping
    center: int
    left_coords: tuple
    right_coords: tuple
    cells_left: tuple
    cells_right: tuple
    g_values: tuple          # residues with nonempty on-grid membership
    g_members: dict          # g -> on-grid member cells of G_g
    ac_values: tuple         # center linear powers 0..beta-1
    bands: tuple             # band indices with on-grid kappa members
    band_members: dict       # b -> kappa member cells
    g1_members: tuple        # on-grid cells of the g1 union
    fold_cells: tuple        # ((m1, mc, alpha_fold), ...) for the g1 branch
    b1_cells: tuple          # ((i_left, g, ac), ...)
    b2_cells: tuple          # ((j_right, b), ...)


def make_odd_layout(plan: ConstructionPlan) -> OddLayout:
    d = plan.d
    c = (d - 1) // 2
    dl = c
    grouping = build_grouping(plan.n)
    a = grouping.a
    left_coords = tuple(range(dl))
    right_coords = tuple(range(c + 1, d))
    alphas_half = enumerate_alphas(dl, plan.beta)
    cells_l = tuple((m, al) for m in grid_cells(plan.n, dl) for al in alphas_half)
    cells_r = cells_l
    g_members = {}
    for g in range(2, a - 1):
        members = sorted(j for j in grouping.groups[g] if -plan.n <= j <= plan.n)
        if members:
            g_members[g] = members
    g_values = tuple(sorted(g_members))
    ac_values = tuple(range(plan.beta))
    band_members = {}
    for b in range(a):
        members = kappa_members(b, plan.n, a)
        if members:
            band_members[b] = members
    bands = tuple(sorted(band_members))
    g1_members = tuple(sorted(j for j in grouping.g1_union if -plan.n <= j <= plan.n))
    alphas_fold = enumerate_alphas(dl + 1, plan.beta)
    fold_cells = tuple(
        (m1, mc, af)
        for m1 in grid_cells(plan.n, dl)
        for mc in g1_members
        for af in alphas_fold
    )
    b1_cells = tuple((i, g, ac)
                     for i in range(len(cells_l))
                     for g in g_values
                     for ac in ac_values)
    b2_cells = tuple((j, b) for j in range(len(cells_r)) for b in bands)
    return OddLayout(
        plan=plan, grouping=grouping, center=c,
        left_coords=left_coords, right_coords=right_coords,
        cells_left=cells_l, cells_right=cells_r,
        g_values=g_values, g_members=g_members, ac_values=ac_values,
        bands=bands, band_members=band_members,
        g1_members=g1_members, fold_cells=fold_cells,
        b1_cells=b1_cells, b2_cells=b2_cells,
    )


@dataclass(frozen=True)
class OneDimLayout:
    plan: ConstructionPlan
    grouping: GridGrouping
    bases: tuple         # base cells -N+g for usable residues g in [2, A-2]
    alphas: tuple        # linear powers 0..beta-1
    bands: tuple         # bands owning at least one valid shifted cell
    g1_members: tuple
    inner_cells: tuple   # ((m_base, alpha), ...) evaluated on the recentered input
    g1_cells: tuple      # ((m, alpha), ...) evaluated on x directly


def make_one_dim_layout(plan: ConstructionPlan) -> OneDimLayout:
    grouping = build_grouping(plan.n)
    a = grouping.a
    bases = tuple(-plan.n + g for g in range(2, a - 1))
    alphas = tuple(range(plan.beta))
    bands = tuple(
        b for b in range(a)
        if any(-plan.n <= mb + a * b <= plan.n for mb in bases)
    )
    g1_members = tuple(sorted(j for j in grouping.g1_union if -plan.n <= j <= plan.n))
    inner_cells = tuple((mb, al) for mb in bases for al in alphas)
    g1_cells = tuple((m, al) for m in g1_members for al in alphas)
    return OneDimLayout(plan=plan, grouping=grouping, bases=bases, alphas=alphas,
                        bands=bands, g1_members=g1_members,
                        inner_cells=inner_cells, g1_cells=g1_cells)


def band_knots(b: int, n: int, a: int) -> tuple:
    """Breakpoints (x-scale) of the exact trapezoid band indicator Psi_b."""
    j0 = -n + a * b + 1
    j1 = -n + a * b + a - 1
    return ((j0 - 2.0 / 3.0) / n, (j0 - 1.0 / 3.0) / n,
            (j1 + 1.0 / 3.0) / n, (j1 + 2.0 / 3.0) / n)


def build_band_indicator(b: int, plan: ConstructionPlan,
                         d_in: int = 1, coord: int = 0,
                         shape_only: bool = False) -> ReluNetwork:
    """Psi_b as a width-4, depth-1 trapezoid; equals kappa_b pointwise."""
    if shape_only:
        return ReluNetwork(d_in, [
            LayerSpec(ShapeArray((4, d_in)), ShapeArray((4,)), RELU),
            LayerSpec(ShapeArray((1, 4)), ShapeArray((1,)), IDENTITY),
        ])
    a1, a2, a3, a4 = band_knots(b, plan.n, plan.a)
    w = np.zeros((4, d_in))
    w[:, coord] = 1.0
    l1 = LayerSpec(w, np.array([-a1, -a2, -a3, -a4]), RELU)
    out = LayerSpec(3.0 * plan.n * np.array([[1.0, -1.0, -1.0, 1.0]]),
                    np.zeros(1), IDENTITY)
    return ReluNetwork(d_in, [l1, out])


def band_indicator_ref(b: int, plan: ConstructionPlan, x):
    a1, a2, a3, a4 = band_knots(b, plan.n, plan.a)
    x = np.asarray(x, dtype=float)
    r = np.maximum
    return 3.0 * plan.n * (r(x - a1, 0.0) - r(x - a2, 0.0)
                           - r(x - a3, 0.0) + r(x - a4, 0.0))


def staircase_gaps(n: int, a: int) -> list:
    """Ramp windows of the recentering staircase, one per interior band edge.

    Each window sits strictly inside the dead zone between adjacent band
    indicators, so the recentered input is exact wherever any Psi_b is
    nonzero.
    """
    return [((-n + a * b - 1.0 / 3.0) / n, (-n + a * b + 1.0 / 3.0) / n)
            for b in range(1, a)]


def build_staircase(plan: ConstructionPlan, shape_only: bool = False) -> ReluNetwork:
    """Depth-1 net mapping x to (x - A*band(x)/N, x), exact on band supports."""
    n, a = plan.n, plan.a
    gaps = staircase_gaps(n, a)
    k = len(gaps)
    if shape_only:
        return ReluNetwork(1, [
            LayerSpec(ShapeArray((2 * k + 2, 1)), ShapeArray((2 * k + 2,)), RELU),
            LayerSpec(ShapeArray((2, 2 * k + 2)), ShapeArray((2,)), IDENTITY),
        ])
    w1 = np.ones((2 * k + 2, 1))
    b1 = np.zeros(2 * k + 2)
    for i, (lo, hi) in enumerate(gaps):
        b1[2 * i] = -lo
        b1[2 * i + 1] = -hi
    w1[2 * k + 1, 0] = -1.0  # (u, v) carry pair for x itself
    out = np.zeros((2, 2 * k + 2))
    ramp = 3.0 * n / 2.0  # 1 / (gap width); each completed step subtracts A/N
    for i in range(k):
        out[0, 2 * i] = -(a / n) * ramp
        out[0, 2 * i + 1] = (a / n) * ramp
    out[0, 2 * k] = 1.0
    out[0, 2 * k + 1] = -1.0
    out[1, 2 * k] = 1.0
    out[1, 2 * k + 1] = -1.0
    return ReluNetwork(1, [LayerSpec(w1, b1, RELU),
                           LayerSpec(out, np.zeros(2), IDENTITY)])


def staircase_ref(plan: ConstructionPlan, x):
    n, a = plan.n, plan.a
    x = np.asarray(x, dtype=float)
    w = x.astype(float).copy()
    ramp = 3.0 * n / 2.0
    for lo, hi in staircase_gaps(n, a):
        w = w - (a / n) * ramp * (np.maximum(x - lo, 0.0) - np.maximum(x - hi, 0.0))
    return w


# ---------------------------------------------------------------------------
# coefficient access
# ---------------------------------------------------------------------------


class CoeffTable:
    """Taylor coefficients of the full grid keyed by (cell, multi-index).

    Entries with |alpha| >= beta are zero by the pairing rule; lookups simply
    miss the per-cell dictionary then.
    """

    def __init__(self, target: TargetFunction, plan: ConstructionPlan):
        self._f1 = F1Evaluator(target, plan)

    def get(self, m, alpha) -> float:
        return self._f1.coeffs(tuple(m)).get(tuple(alpha), 0.0)


# ---------------------------------------------------------------------------
# parity-case builders
# ---------------------------------------------------------------------------


def build_even(target, plan: ConstructionPlan,
               shape_only: bool = False) -> ReluNetwork:
    """Even-d pairing of the two half-product banks."""
    if plan.parity != PARITY_EVEN:
        raise ContractError(f"build_even called for parity {plan.parity}")
    layout = make_even_layout(plan)
    cfg = plan.gadget_cfg
    d = plan.d
    chains_l = [cell_chain_net(d, layout.left_coords, m, al, plan.n, cfg, shape_only)
                for m, al in layout.cells_left]
    chains_r = [cell_chain_net(d, layout.right_coords, m, al, plan.n, cfg, shape_only)
                for m, al in layout.cells_right]
    s = plan.scaling
    coeffs = None
    if not shape_only:
        table = CoeffTable(target, plan)
        coeffs = np.zeros((len(chains_r), len(chains_l)))
        for j, (m2, a2) in enumerate(layout.cells_right):
            for i, (m1, a1) in enumerate(layout.cells_left):
                coeffs[j, i] = table.get(m1 + m2, a1 + a2)
    return mlp_convert(chains_l, chains_r, coeffs, cfg,
                       pre_scale=1.0 / s, post_scale=s * plan.scale,
                       shape_only=shape_only)


def odd_coeff_first(table: CoeffTable, layout: OddLayout, cellL, g, ac, cellR, b):
    """a for the grouped branch: center cell m_(b,g) = -N + g + A*b."""
    plan = layout.plan
    mc = -plan.n + g + layout.grouping.a * b
    if not -plan.n <= mc <= plan.n:
        return 0.0
    (m1, a1), (m2, a2) = cellL, cellR
    return table.get(m1 + (mc,) + m2, a1 + (ac,) + a2)


def odd_coeff_fold(table: CoeffTable, layout: OddLayout, fold_cell, cellR):
    m1, mc, af = fold_cell
    m2, a2 = cellR
    return table.get(m1 + (mc,) + m2, af + a2)


def build_odd(target, plan: ConstructionPlan,
              shape_only: bool = False) -> ReluNetwork:
    """Odd-d (d > 1) construction with the sqrt grouping of the center cells."""
    if plan.parity != PARITY_ODD:
        raise ContractError(f"build_odd called for parity {plan.parity}")
    layout = make_odd_layout(plan)
    cfg = plan.gadget_cfg
    d, n = plan.d, plan.n
    c = layout.center
    table = None if shape_only else CoeffTable(target, plan)

    # phase A: every primitive value, in one parallel bank on the raw input
    members_a = []
    pos = {}

    def add(name, net):
        pos[name] = len(members_a)
        members_a.append(net)

    for i, (m, al) in enumerate(layout.cells_left):
        add(("L", i), cell_chain_net(d, layout.left_coords, m, al, n, cfg, shape_only))
    for j, (m, al) in enumerate(layout.cells_right):
        add(("R", j), cell_chain_net(d, layout.right_coords, m, al, n, cfg, shape_only))
    for g in layout.g_values:
        for ac in layout.ac_values:
            for i_cell in layout.g_members[g]:
                add(("G", g, ac, i_cell),
                    cell_chain_net(d, (c,), (i_cell,), (ac,), n, cfg, shape_only))
    for b in layout.bands:
        for j_cell in layout.band_members[b]:
            add(("K", b, j_cell), psi_factor_net(d, c, n, j_cell, shape_only))
    for k, (m1, mc, af) in enumerate(layout.fold_cells):
        add(("F", k),
            cell_chain_net(d, layout.left_coords + (c,), m1 + (mc,), af, n, cfg,
                           shape_only))
    phase_a = stack_padded(members_a, shared_input=True)
    width_a = len(members_a)

    # phase B: group-sum and band pairings, carrying fold and right values
    kb1, kb2 = len(layout.b1_cells), len(layout.b2_cells)
    n_carry = len(layout.fold_cells) + len(layout.cells_right)
    pre_rows = 2 * (kb1 + kb2) + n_carry
    pre = zeros((pre_rows, width_a), shape_only)
    if not shape_only:
        for r, (i, g, ac) in enumerate(layout.b1_cells):
            for i_cell in layout.g_members[g]:
                pre[2 * r, pos[("G", g, ac, i_cell)]] = 1.0
            pre[2 * r + 1, pos[("L", i)]] = 1.0
        base = 2 * kb1
        for r, (j, b) in enumerate(layout.b2_cells):
            pre[base + 2 * r, pos[("R", j)]] = 1.0
            for j_cell in layout.band_members[b]:
                pre[base + 2 * r + 1, pos[("K", b, j_cell)]] = 1.0
        base = 2 * (kb1 + kb2)
        for k in range(len(layout.fold_cells)):
            pre[base + k, pos[("F", k)]] = 1.0
        base += len(layout.fold_cells)
        for j in range(len(layout.cells_right)):
            pre[base + j, pos[("R", j)]] = 1.0
    gadget = build_mult(cfg, shape_only)
    parts_b = [gadget] * (kb1 + kb2)
    parts_b.append(carry_network(n_carry, gadget.depth, shape_only))
    phase_b = stack_parallel(parts_b, shared_input=False)
    net = compose_serial(compose_serial(phase_a, affine_network(pre, zeros((pre_rows,), shape_only))),
                         phase_b)

    # phase C: outer pairings against the coefficient table
    s = plan.scaling
    kc1, kc2 = kb2, len(layout.cells_right)
    width_b = kb1 + kb2 + n_carry
    pre_rows = 2 * (kc1 + kc2)
    pre = zeros((pre_rows, width_b), shape_only)
    if not shape_only:
        for r, (j, b) in enumerate(layout.b2_cells):
            for q, (i, g, ac) in enumerate(layout.b1_cells):
                a = odd_coeff_first(table, layout, layout.cells_left[i], g, ac,
                                    layout.cells_right[j], b)
                if a:
                    pre[2 * r, q] = a / s
            pre[2 * r + 1, kb1 + r] = 1.0
        base = 2 * kc1
        carry_f = kb1 + kb2
        carry_r = carry_f + len(layout.fold_cells)
        for j in range(len(layout.cells_right)):
            pre[base + 2 * j, carry_r + j] = 1.0
            for k, fold_cell in enumerate(layout.fold_cells):
                a = odd_coeff_fold(table, layout, fold_cell, layout.cells_right[j])
                if a:
                    pre[base + 2 * j + 1, carry_f + k] = a / s
    phase_c = stack_parallel([gadget] * (kc1 + kc2), shared_input=False)
    net = compose_serial(compose_serial(net, affine_network(pre, zeros((pre_rows,), shape_only))),
                         phase_c)

    out_w = zeros((1, kc1 + kc2), shape_only)
    if not shape_only:
        out_w[0, :] = s * plan.scale
    return compose_serial(net, ReluNetwork(kc1 + kc2,
                                           [LayerSpec(out_w, zeros((1,), shape_only), IDENTITY)]))


def build_one_dim(target, plan: ConstructionPlan,
                  shape_only: bool = False) -> ReluNetwork:
    """1-d construction: staircase recentering plus banded pairing, O(sqrt N) wide."""
    if plan.parity != PARITY_ONE:
        raise ContractError(f"build_one_dim called for parity {plan.parity}")
    layout = make_one_dim_layout(plan)
    cfg = plan.gadget_cfg
    n, a = plan.n, plan.a
    table = None if shape_only else CoeffTable(target, plan)

    stair = build_staircase(plan, shape_only)  # outputs (w, x)

    members = []
    pos = {}

    def add(name, net):
        pos[name] = len(members)
        members.append(net)

    for mb, al in layout.inner_cells:
        add(("I", mb, al), cell_chain_net(2, (0,), (mb,), (al,), n, cfg, shape_only))
    for m, al in layout.g1_cells:
        add(("J", m, al), cell_chain_net(2, (1,), (m,), (al,), n, cfg, shape_only))
    for b in layout.bands:
        add(("P", b), build_band_indicator(b, plan, d_in=2, coord=1, shape_only=shape_only))
    phase_a = compose_serial(stair, stack_padded(members, shared_input=True))
    width_a = len(members)

    s = plan.scaling  # 2 * d^beta = 2
    nb = len(layout.bands)
    pre_rows = 2 * nb + 1
    pre = zeros((pre_rows, width_a), shape_only)
    if not shape_only:
        for r, b in enumerate(layout.bands):
            pre[2 * r, pos[("P", b)]] = 1.0
            for mb, al in layout.inner_cells:
                mc = mb + a * b
                if -n <= mc <= n:
                    coeff = table.get((mc,), (al,))
                    if coeff:
                        pre[2 * r + 1, pos[("I", mb, al)]] = coeff / s
        for m, al in layout.g1_cells:
            coeff = table.get((m,), (al,))
            if coeff:
                pre[2 * nb, pos[("J", m, al)]] = coeff
    gadget = build_mult(cfg, shape_only)
    parts = [gadget] * nb + [carry_network(1, gadget.depth, shape_only)]
    phase_b = stack_parallel(parts, shared_input=False)
    net = compose_serial(compose_serial(phase_a, affine_network(pre, zeros((pre_rows,), shape_only))),
                         phase_b)
    out_w = zeros((1, nb + 1), shape_only)
    if not shape_only:
        out_w[0, :nb] = s * plan.scale
        out_w[0, nb] = plan.scale
    return compose_serial(net, ReluNetwork(nb + 1,
                                           [LayerSpec(out_w, zeros((1,), shape_only), IDENTITY)]))


def build_naive(target, plan: ConstructionPlan,
                shape_only: bool = False) -> ReluNetwork:
    """Flat wide construction: one chain per full grid cell, affinely combined.

    Width grows like (2N+1)^d; kept as the comparison baseline for the
    narrowing claims.
    """
    cfg = plan.gadget_cfg
    d, n = plan.d, plan.n
    alphas = enumerate_alphas(d, plan.beta)
    cells = [(m, al) for m in grid_cells(n, d) for al in alphas]
    chains = [cell_chain_net(d, tuple(range(d)), m, al, n, cfg, shape_only)
              for m, al in cells]
    bank = stack_padded(chains, shared_input=True)
    row = zeros((1, len(cells)), shape_only)
    if not shape_only:
        table = CoeffTable(target, plan)
        for i, (m, al) in enumerate(cells):
            row[0, i] = table.get(m, al) * plan.scale
    return compose_serial(bank, ReluNetwork(len(cells),
                                            [LayerSpec(row, zeros((1,), shape_only), IDENTITY)]))


_CASE_BUILDERS = {
    PARITY_EVEN: build_even,
    PARITY_ODD: build_odd,
    PARITY_ONE: build_one_dim,
}


def build_for_plan(target, plan: ConstructionPlan,
                   shape_only: bool = False) -> ReluNetwork:
    return _CASE_BUILDERS[plan.parity](target, plan, shape_only=shape_only)


def plan_stats(plan: ConstructionPlan, naive: bool = False) -> NetworkStats:
    """Exact architecture statistics from a dry-run (no weights materialized)."""
    builder = build_naive if naive else _CASE_BUILDERS[plan.parity]
    return stats(builder(None, plan, shape_only=True))


# ---------------------------------------------------------------------------
# entry point with desk-scale feasibility capping
# ---------------------------------------------------------------------------


def feasible_plan(target: TargetFunction, eps: float, *,
                  width_budget: int | None = None,
                  n_override: int | None = None) -> ConstructionPlan:
    """Plan for the target, shrinking N if the predicted width exceeds budget.

    The formula N is always recorded (``n_formula``); when the cap binds the
    plan is marked ``capped`` and the measured-error gates remain the honest
    arbiter of accuracy.
    """
    scale = target.sobolev_scale
    if n_override is not None:
        return make_plan(eps, target.beta, target.dim, scale=scale,
                         n_override=n_override)
    if width_budget is None:
        width_budget = default_width_budget(target.dim)
    plan = make_plan(eps, target.beta, target.dim, scale=scale)
    if plan_stats(plan).width <= width_budget:
        return plan
    lo = 4 if plan.parity != PARITY_EVEN else 1
    hi = plan.n
    if plan_stats(make_plan(eps, target.beta, target.dim, scale=scale,
                            n_override=lo)).width > width_budget:
        raise InfeasibleConstructionError(
            f"even N = {lo} exceeds the width budget {width_budget} for d = {target.dim}"
        )
    while hi - lo > 1:
        mid = (lo + hi) // 2
        candidate = make_plan(eps, target.beta, target.dim, scale=scale,
                              n_override=mid)
        if plan_stats(candidate).width <= width_budget:
            lo = mid
        else:
            hi = mid
    return make_plan(eps, target.beta, target.dim, scale=scale, n_override=lo)


def build_approximator(target: TargetFunction, eps: float, *,
                       width_budget: int | None = None,
                       n_override: int | None = None) -> ReluNetwork:
    """One fully connected ReLU network approximating the target to eps."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0,1), got {eps}")
    plan = feasible_plan(target, eps, width_budget=width_budget,
                         n_override=n_override)
    return build_for_plan(target.in_ball(), plan)


def build_with_plan(target: TargetFunction, eps: float, *,
                    width_budget: int | None = None,
                    n_override: int | None = None):
    """(network, plan) pair; the plan is what manifests and oracles consume."""
    plan = feasible_plan(target, eps, width_budget=width_budget,
                         n_override=n_override)
    return build_for_plan(target.in_ball(), plan), plan


def build_manifest(net: ReluNetwork, plan: ConstructionPlan,
                   target_name: str | None = None) -> dict:
    from .network import assert_fully_connected

    s = stats(net)
    gadget_width = stats(build_mult(plan.gadget_cfg, shape_only=True)).width
    report = assert_fully_connected(net)
    return {
        "target": target_name,
        "eps": plan.requested_eps,
        "effective_eps": plan.eps,
        "beta": plan.beta,
        "d": plan.d,
        "N": plan.n,
        "N_formula": plan.n_formula,
        "A": plan.a,
        "delta": plan.delta,
        "Q": plan.q,
        "parity_case": {"even": "Even", "odd": "OddGt1", "one": "One"}[plan.parity],
        "sobolev_scale": plan.scale,
        "capped": plan.capped,
        "measured_stats": {"depth": s.depth, "width": s.width,
                           "weight_count": s.weight_count},
        "bound_checks": [
            {"name": "mult_width_le_12", "measured": gadget_width,
             "pass": gadget_width <= 12},
            {"name": "dense_weight_bound", "claimed_form": "W <= 3*H^2*L + 3*H",
             "measured": s.weight_count, "threshold": report.dense_bound,
             "pass": report.dense_bound_ok},
        ],
    }
