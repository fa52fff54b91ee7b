"""Measurement harness: sup-norm error sweeps, bound conformance, oracles.

Sup norms are estimated on dense grids plus random samples (exact sup-norm
over a ReLU net is a mixed-integer program; out of scope), so reports record
the resolution and sample counts that produced every number. All growth-rate
checks are one-sided: the theory's constants are unknown, only exponents are
falsifiable.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .network import NetworkStats, ReluNetwork, eval_batch, stats
from .targets import TargetFunction

ORACLE_GATE = 1e-8


def default_resolution(d: int) -> int:
    """Per-axis grid sizes keeping a check near a minute on a workstation."""
    return {1: 4096, 2: 256, 3: 48}.get(d, 0)


def grid_points(d: int, resolution: int) -> np.ndarray:
    """Tensor-product grid on [-1,1]^d; full grids only for d <= 3."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2 per axis")
    if d > 3:
        raise ValueError("full grids are limited to d <= 3; use random sampling")
    axis = np.linspace(-1.0, 1.0, resolution)
    if d == 1:
        return axis[:, None]
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def refine_resolution(resolution: int) -> int:
    """Nested refinement: linspace(-1,1,2r-1) contains linspace(-1,1,r)."""
    return 2 * resolution - 1


def sup_error(net: ReluNetwork, target: TargetFunction, *,
              resolution: int | None = None, n_random: int = 2000,
              seed: int = 0) -> tuple:
    """(grid max, random max) of |net - f|; deterministic given the seed."""
    d = target.dim
    if resolution is None:
        resolution = default_resolution(d)
    grid_max = None
    if d <= 3 and resolution:
        pts = grid_points(d, resolution)
        grid_max = 0.0
        step = 65536 // max(1, d)
        for start in range(0, pts.shape[0], step):
            chunk = pts[start:start + step]
            dev = np.abs(eval_batch(net, chunk)[:, 0] - target.evaluate_batch(chunk))
            grid_max = max(grid_max, float(dev.max()))
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, size=(n_random, d))
    dev = np.abs(eval_batch(net, pts)[:, 0] - target.evaluate_batch(pts))
    return grid_max, float(dev.max())


def oracle_compare(net: ReluNetwork, reference, n_points: int = 1000,
                   seed: int = 0, d: int | None = None) -> float:
    """Max |net(x) - reference(x)| over uniform points; gate is 1e-8."""
    if d is None:
        d = net.input_dim
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, size=(n_points, d))
    net_vals = eval_batch(net, pts)[:, 0]
    ref_vals = np.array([float(reference(p)) for p in pts])
    return float(np.max(np.abs(net_vals - ref_vals)))


@dataclass(frozen=True)
class BoundCheck:
    name: str
    claimed_form: str
    measured: float
    threshold: float
    passed: bool

    def as_dict(self) -> dict:
        return {"name": self.name, "claimed_form": self.claimed_form,
                "measured": self.measured, "threshold": self.threshold,
                "pass": self.passed}


def _fit_slope(eps_values, sizes) -> float:
    x = np.log(1.0 / np.asarray(eps_values, dtype=float))
    y = np.log(np.asarray(sizes, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def check_bounds(series, d: int, beta: int) -> list:
    """Growth-exponent checks over an eps series of measured stats.

    series: list of (eps, NetworkStats), at least three eps values in
    geometric progression. One-sided slope tests: width slope <= d/(2 beta)
    + 0.15, weight slope (after dividing out the claimed ln(1/eps)+1 factor)
    <= d/beta + 0.2, and depth increments per halving bounded by a constant
    (one stage per serial gadget level).
    """
    if len(series) < 3:
        raise ValueError("need at least 3 eps values")
    series = sorted(series, key=lambda t: -t[0])
    eps_values = [e for e, _ in series]
    width_slope = _fit_slope(eps_values, [max(s.width, 1) for _, s in series])
    # the weight claim carries a log factor; divide it out before fitting,
    # otherwise the power-law fit is biased upward by ~1/ln(1/eps)
    weight_slope = _fit_slope(
        eps_values,
        [s.weight_count / (math.log(1.0 / e) + 1.0) for e, s in series])
    depths = [s.depth for _, s in series]
    max_inc = max((b - a for a, b in zip(depths, depths[1:])), default=0)
    depth_cap = 2 * (d + beta) + 4
    return [
        BoundCheck("width_exponent", f"H <= c * eps^(-{d}/(2*{beta}))",
                   width_slope, d / (2.0 * beta) + 0.15,
                   width_slope <= d / (2.0 * beta) + 0.15),
        BoundCheck("weight_exponent", f"W <= c * eps^(-{d}/{beta}) * log(1/eps)",
                   weight_slope, d / beta + 0.2,
                   weight_slope <= d / beta + 0.2),
        BoundCheck("depth_increment", "L <= c * (ln(1/eps) + 1)",
                   float(max_inc), float(depth_cap), max_inc <= depth_cap),
    ]


def gadget_width_check(net: ReluNetwork) -> BoundCheck:
    """Flags any excess of the multiplication gadget over width 12."""
    w = stats(net).width
    return BoundCheck("mult_width_le_12", "gadget width <= 12", float(w), 12.0,
                      w <= 12)


@dataclass
class VerificationReport:
    sup_error_grid: float | None
    sup_error_random: float
    n_samples: int
    resolution: int | None
    stats: NetworkStats
    bound_checks: list = field(default_factory=list)
    oracle_max_dev: float | None = None
    seed: int = 0
    eps: float | None = None

    @property
    def passed(self) -> bool:
        ok = all(c.passed for c in self.bound_checks)
        if self.oracle_max_dev is not None:
            ok = ok and self.oracle_max_dev <= ORACLE_GATE
        if self.eps is not None:
            worst = max(v for v in (self.sup_error_grid, self.sup_error_random)
                        if v is not None)
            ok = ok and worst <= self.eps
        return ok

    def to_json(self) -> str:
        doc = {
            "sup_error_grid": self.sup_error_grid,
            "sup_error_random": self.sup_error_random,
            "n_samples": self.n_samples,
            "resolution": self.resolution,
            "stats": {"depth": self.stats.depth, "width": self.stats.width,
                      "weight_count": self.stats.weight_count},
            "bound_checks": [c.as_dict() for c in self.bound_checks],
            "oracle_max_dev": self.oracle_max_dev,
            "seed": self.seed,
            "eps": self.eps,
            "pass": self.passed,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def bound_checks_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["name", "claimed_form", "measured", "threshold", "pass"])
        for c in self.bound_checks:
            writer.writerow([c.name, c.claimed_form, f"{c.measured:.6g}",
                             f"{c.threshold:.6g}", int(c.passed)])
        return buf.getvalue()


def verify_network(net: ReluNetwork, target: TargetFunction, *,
                   eps: float | None = None, reference=None,
                   resolution: int | None = None, n_random: int = 2000,
                   seed: int = 0) -> VerificationReport:
    """Full report: sup errors, stats, and (optionally) the wiring oracle."""
    grid_max, rand_max = sup_error(net, target, resolution=resolution,
                                   n_random=n_random, seed=seed)
    dev = None
    if reference is not None:
        dev = oracle_compare(net, reference, n_points=1000, seed=seed,
                             d=target.dim)
    return VerificationReport(
        sup_error_grid=grid_max,
        sup_error_random=rand_max,
        n_samples=n_random,
        resolution=resolution if resolution is not None else default_resolution(target.dim),
        stats=stats(net),
        oracle_max_dev=dev,
        seed=seed,
        eps=eps,
    )
