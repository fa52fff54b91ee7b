"""Plain-arithmetic mirrors of the built networks.

These interpreters recompute the builders' formulas with the same gadget
recurrences, the same tolerances and the same term ordering, but in ordinary
floating point with no weight matrices. Agreement between a built network
and its mirror is therefore a pure wiring check, independent of the
approximation error. Cells whose bump factors vanish are skipped: the gadget
annihilates exactly on a zero argument, so skipping is value-preserving, and
at most 2^d cells are active at any point.
"""

from __future__ import annotations

import numpy as np

from .builder import (
    CoeffTable,
    OddLayout,
    OneDimLayout,
    band_indicator_ref,
    make_even_layout,
    make_odd_layout,
    make_one_dim_layout,
    staircase_ref,
)
from .gadgets import chain_ref, mult_ref, psi_ref
from .partition import (
    PARITY_EVEN,
    PARITY_ODD,
    ConstructionPlan,
    active_cells,
    active_indices,
    enumerate_alphas,
)
from .targets import TargetFunction


def _chain_value(x, coords, m, alpha, n, cfg):
    """Factor values in builder order (bumps first, then linear factors)."""
    vals = [float(psi_ref(3.0 * n * x[k] - 3.0 * mk)) for k, mk in zip(coords, m)]
    for k, mk, p in zip(coords, m, alpha):
        vals.extend([x[k] - mk / n] * p)
    return chain_ref(vals, cfg)


class ReferenceEvaluator:
    """Mirror of the approximator built for (target, plan)."""

    def __init__(self, target: TargetFunction, plan: ConstructionPlan,
                 naive: bool = False):
        self.plan = plan
        self.table = CoeffTable(target.in_ball(), plan)
        self.cfg = plan.gadget_cfg
        self.naive = naive
        if naive:
            self._layout = None
        elif plan.parity == PARITY_EVEN:
            self._layout = make_even_layout(plan)
        elif plan.parity == PARITY_ODD:
            self._layout = make_odd_layout(plan)
        else:
            self._layout = make_one_dim_layout(plan)

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.plan.d:
            raise ValueError(f"point has dim {x.shape[0]}, plan expects {self.plan.d}")
        if self.naive:
            return self._naive(x)
        if self.plan.parity == PARITY_EVEN:
            return self._even(x)
        if self.plan.parity == PARITY_ODD:
            return self._odd(x)
        return self._one(x)

    def batch(self, xs) -> np.ndarray:
        return np.array([self(x) for x in np.atleast_2d(xs)])

    # -- flat baseline ------------------------------------------------------

    def _naive(self, x):
        plan, cfg = self.plan, self.cfg
        coords = tuple(range(plan.d))
        alphas = enumerate_alphas(plan.d, plan.beta)
        total = 0.0
        for m in active_cells(x, plan.n):
            for al in alphas:
                a = self.table.get(m, al)
                if a == 0.0:
                    continue
                total += a * _chain_value(x, coords, m, al, plan.n, cfg)
        return plan.scale * total

    # -- even d ------------------------------------------------------------

    def _even(self, x):
        plan, cfg, lay = self.plan, self.cfg, self._layout
        n, s = plan.n, plan.scaling
        d2 = plan.d // 2
        alphas = enumerate_alphas(d2, plan.beta)
        left = []
        for m1 in active_cells(x[:d2], n):
            for a1 in alphas:
                v = _chain_value(x, lay.left_coords, m1, a1, n, cfg)
                if v != 0.0:
                    left.append((m1, a1, v))
        total = 0.0
        for m2 in active_cells(x[d2:], n):
            for a2 in alphas:
                rv = _chain_value(x, lay.right_coords, m2, a2, n, cfg)
                if rv == 0.0:
                    continue
                u = 0.0
                for m1, a1, v in left:
                    c = self.table.get(m1 + m2, a1 + a2)
                    if c:
                        u += (c / s) * v
                if u == 0.0:
                    continue
                total += float(mult_ref(u, rv, cfg))
        return s * plan.scale * total

    # -- odd d > 1 ----------------------------------------------------------

    def _odd(self, x):
        plan, cfg = self.plan, self.cfg
        lay: OddLayout = self._layout
        n, s, a = plan.n, plan.scaling, lay.grouping.a
        c = lay.center
        xc = float(x[c])
        alphas = enumerate_alphas(len(lay.left_coords), plan.beta)
        act_c = set(active_indices(xc, n))

        left = {}
        for m1 in active_cells(x[list(lay.left_coords)], n):
            for a1 in alphas:
                v = _chain_value(x, lay.left_coords, m1, a1, n, cfg)
                if v != 0.0:
                    left[(m1, a1)] = v
        right = {}
        for m2 in active_cells(x[list(lay.right_coords)], n):
            for a2 in alphas:
                v = _chain_value(x, lay.right_coords, m2, a2, n, cfg)
                if v != 0.0:
                    right[(m2, a2)] = v

        gsum = {}
        for g in lay.g_values:
            for ac in lay.ac_values:
                v = 0.0
                for i in lay.g_members[g]:
                    if i in act_c:
                        v += _chain_value(x, (c,), (i,), (ac,), n, cfg)
                if v != 0.0:
                    gsum[(g, ac)] = v
        kap = {}
        for b in lay.bands:
            v = 0.0
            for j in lay.band_members[b]:
                if j in act_c:
                    v += float(psi_ref(3.0 * n * xc - 3.0 * j))
            if v != 0.0:
                kap[b] = v

        b1 = {}
        for i, (cellL) in enumerate(lay.cells_left):
            lv = left.get(cellL)
            if lv is None:
                continue
            for g in lay.g_values:
                for ac in lay.ac_values:
                    gv = gsum.get((g, ac))
                    if gv is None:
                        continue
                    b1[(i, g, ac)] = float(mult_ref(gv, lv, cfg))

        total = 0.0
        for j, cellR in enumerate(lay.cells_right):
            rv = right.get(cellR)
            if rv is None:
                continue
            for b in lay.bands:
                kv = kap.get(b)
                if kv is None:
                    continue
                b2 = float(mult_ref(rv, kv, cfg))
                if b2 == 0.0:
                    continue
                u = 0.0
                for key, bv in b1.items():
                    i, g, ac = key
                    mc = -n + g + a * b
                    if not -n <= mc <= n:
                        continue
                    m1, a1 = lay.cells_left[i]
                    m2, a2 = cellR
                    coeff = self.table.get(m1 + (mc,) + m2, a1 + (ac,) + a2)
                    if coeff:
                        u += (coeff / s) * bv
                if u == 0.0:
                    continue
                total += float(mult_ref(u, b2, cfg))

        fold_alphas = enumerate_alphas(len(lay.left_coords) + 1, plan.beta)
        fold_coords = lay.left_coords + (c,)
        fold_vals = {}
        for m1 in active_cells(x[list(lay.left_coords)], n):
            for mc in lay.g1_members:
                if mc not in act_c:
                    continue
                for af in fold_alphas:
                    v = _chain_value(x, fold_coords, m1 + (mc,), af, n, cfg)
                    if v != 0.0:
                        fold_vals[(m1, mc, af)] = v
        for cellR, rv in right.items():
            m2, a2 = cellR
            v = 0.0
            for (m1, mc, af), fv in fold_vals.items():
                coeff = self.table.get(m1 + (mc,) + m2, af + a2)
                if coeff:
                    v += (coeff / s) * fv
            if v == 0.0:
                continue
            total += float(mult_ref(rv, v, cfg))
        return s * plan.scale * total

    # -- d = 1 ---------------------------------------------------------------

    def _one(self, x):
        plan, cfg = self.plan, self.cfg
        lay: OneDimLayout = self._layout
        n, a, s = plan.n, plan.a, plan.scaling
        t = float(x[0])
        w = float(staircase_ref(plan, t))
        wx = np.array([w, t])

        inner = {}
        for mb, al in lay.inner_cells:
            v = _chain_value(wx, (0,), (mb,), (al,), n, cfg)
            if v != 0.0:
                inner[(mb, al)] = v
        total = 0.0
        for b in lay.bands:
            pb = float(band_indicator_ref(b, plan, t))
            if pb == 0.0:
                continue
            u = 0.0
            for (mb, al), v in inner.items():
                mc = mb + a * b
                if -n <= mc <= n:
                    coeff = self.table.get((mc,), (al,))
                    if coeff:
                        u += (coeff / s) * v
            if u == 0.0:
                continue
            total += float(mult_ref(pb, u, cfg))
        extra = 0.0
        act = set(active_indices(t, n))
        for m, al in lay.g1_cells:
            if m not in act:
                continue
            coeff = self.table.get((m,), (al,))
            if coeff:
                extra += coeff * _chain_value(wx, (1,), (m,), (al,), n, cfg)
        return plan.scale * (s * total + extra)


def make_reference(target: TargetFunction, plan: ConstructionPlan,
                   naive: bool = False) -> ReferenceEvaluator:
    return ReferenceEvaluator(target, plan, naive=naive)


def eval_ftilde_reference(target: TargetFunction, plan: ConstructionPlan, x) -> float:
    """One-shot mirror value; use make_reference for sweeps (it caches)."""
    return ReferenceEvaluator(target, plan)(x)
