"""Acceptance suite: one test per criterion, printed pass/fail lines.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
summary lines. Builds are shared between the end-to-end and wiring-oracle
criteria through module-scoped fixtures.
"""

import math
import time

import numpy as np
import pytest

from narrownet.builder import build_with_plan, plan_stats
from narrownet.composite import (
    build_composite,
    composite_reference,
    eval_composite,
    pair_interaction_graph,
)
from narrownet.experiment import (
    RULE_OPTIMAL,
    RULE_SUBOPTIMAL,
    ExperimentConfig,
    gradient_check,
    run_rate_study,
    size_architecture,
)
from narrownet.gadgets import MultGadgetConfig, build_mult
from narrownet.network import eval_batch, eval_scalar, stats
from narrownet.partition import make_plan, phi_sum
from narrownet.reference import make_reference
from narrownet.targets import make_target
from narrownet.verify import check_bounds, oracle_compare, sup_error


def report(criterion, passed, detail):
    status = "PASS" if passed else "FAIL"
    print(f"\n[criterion {criterion}] {status}: {detail}")
    assert passed, f"criterion {criterion}: {detail}"


# ---------------------------------------------------------------------------
# shared builds (criteria 4, 5, 6, 7)
# ---------------------------------------------------------------------------

END_TO_END_CASES = [
    # (d, beta, eps, two library targets)
    (1, 1, 0.4, ("poly_mix", "const")),
    (1, 2, 0.3, ("sin_scaled", "gauss_bump")),
    (2, 1, 0.4, ("prod_pair", "poly_mix")),
    (3, 1, 0.5, ("gauss_bump", "prod_pair")),
]


@pytest.fixture(scope="module")
def end_to_end_builds():
    builds = []
    for d, beta, eps, names in END_TO_END_CASES:
        for name in names:
            target = make_target(name, d, beta)
            net, plan = build_with_plan(target, eps)
            builds.append((name, d, beta, eps, target, net, plan))
    return builds


@pytest.fixture(scope="module")
def odd_case_build():
    target = make_target("prod_pair", 3, 1)
    net, plan = build_with_plan(target, 0.5, n_override=4)
    return target, net, plan


def test_criterion_1_gadget_accuracy():
    t0 = time.time()
    worst = {}
    for q, eps in ((2.0, 0.05), (3.0, 0.01), (5.0, 0.005)):
        cfg = MultGadgetConfig(q=q, eps=eps)
        net = build_mult(cfg)
        rng = np.random.default_rng(17)
        pts = rng.uniform(-q, q, size=(10_000, 2))
        err = float(np.abs(eval_batch(net, pts)[:, 0] - pts[:, 0] * pts[:, 1]).max())
        zero_dev = max(
            max(abs(eval_scalar(net, [x, 0.0])) for x in rng.uniform(-q, q, 30)),
            max(abs(eval_scalar(net, [0.0, y])) for y in rng.uniform(-q, q, 30)),
        )
        worst[(q, eps)] = (err, zero_dev)
        assert err <= eps and zero_dev <= 1e-10
    detail = ", ".join(f"(Q={q},eps={e}): err={v[0]:.2e}, zero={v[1]:.1e}"
                       for (q, e), v in worst.items())
    report(1, True, f"{detail} [{time.time()-t0:.1f}s]")


def test_criterion_2_gadget_width():
    widths = {}
    for q, eps in ((2.0, 0.05), (3.0, 0.01), (5.0, 0.005)):
        widths[(q, eps)] = stats(build_mult(MultGadgetConfig(q=q, eps=eps))).width
    passed = all(w <= 12 for w in widths.values())
    report(2, passed, f"gadget widths {sorted(set(widths.values()))} (bound 12)")


def test_criterion_3_partition_of_unity():
    t0 = time.time()
    worst = 0.0
    for d in (1, 2, 3):
        rng = np.random.default_rng(100 + d)
        xs = rng.uniform(-1.0, 1.0, size=(10_000, d))
        for n in (2, 4, 8):
            dev = float(np.abs(phi_sum(n, xs) - 1.0).max())
            worst = max(worst, dev)
    report(3, worst <= 1e-10,
           f"max |sum phi - 1| = {worst:.2e} over d in 1..3, N in (2,4,8) "
           f"[{time.time()-t0:.1f}s]")


def test_criterion_4_end_to_end(end_to_end_builds):
    t0 = time.time()
    lines = []
    passed = True
    for name, d, beta, eps, target, net, plan in end_to_end_builds:
        grid_max, rand_max = sup_error(net, target, n_random=2000, seed=31)
        worst = max(grid_max, rand_max)
        ok = worst <= eps
        passed = passed and ok
        lines.append(f"{name}(d={d},b={beta},eps={eps}): sup={worst:.3g}"
                     f"{'' if ok else ' EXCEEDS'}")
    report(4, passed, "; ".join(lines) + f" [{time.time()-t0:.0f}s]")


def test_criterion_5_wiring_oracle(end_to_end_builds, odd_case_build):
    t0 = time.time()
    devs = []
    passed = True
    for name, d, beta, eps, target, net, plan in end_to_end_builds:
        dev = oracle_compare(net, make_reference(target, plan),
                             n_points=1000, seed=53)
        devs.append(f"{name}/d{d}: {dev:.1e}")
        passed = passed and dev <= 1e-8
    target, net, plan = odd_case_build
    dev = oracle_compare(net, make_reference(target, plan), n_points=1000, seed=54)
    devs.append(f"odd-N4: {dev:.1e}")
    passed = passed and dev <= 1e-8
    report(5, passed, "; ".join(devs) + f" [{time.time()-t0:.0f}s]")


def test_criterion_6_narrowness_exponents():
    t0 = time.time()
    results = []
    passed = True
    for d, beta, eps_series, target_name in (
        (2, 1, (0.4, 0.2, 0.1), "prod_pair"),
        (1, 2, (0.3, 0.15, 0.075), "sin_scaled"),
    ):
        target = make_target(target_name, d, beta)
        series = []
        for eps in eps_series:
            net, plan = build_with_plan(target, eps)
            s = stats(net)
            ref = make_reference(target, plan)
            dev = oracle_compare(net, ref, n_points=200, seed=61)
            assert dev <= 1e-8  # every built network stays oracle-clean
            series.append((eps, s))
            del net
        checks = {c.name: c for c in check_bounds(series, d, beta)}
        wc, pc, dc = (checks["width_exponent"], checks["weight_exponent"],
                      checks["depth_increment"])
        ok = wc.passed and pc.passed and dc.passed
        passed = passed and ok
        results.append(
            f"d={d},b={beta}: width slope {wc.measured:.2f}<={wc.threshold:.2f},"
            f" weight slope {pc.measured:.2f}<={pc.threshold:.2f},"
            f" depth inc {dc.measured:.0f}<={dc.threshold:.0f}")
    report(6, passed, "; ".join(results) + f" [{time.time()-t0:.0f}s]")


def test_criterion_7_odd_case_narrowing(odd_case_build):
    target, net, plan = odd_case_build
    assert plan.n == 4
    narrow_width = stats(net).width
    wide_width = plan_stats(plan, naive=True).width
    factor = wide_width / narrow_width
    bound = math.sqrt(2 * plan.n + 1) / 4.0
    grid_max, rand_max = sup_error(target=target, net=net, resolution=31,
                                   n_random=1000, seed=71)
    ok = factor >= bound and max(grid_max, rand_max) <= 0.5
    report(7, ok,
           f"narrow width {narrow_width} vs wide {wide_width}: factor "
           f"{factor:.2f} >= {bound:.2f}; sup err {max(grid_max, rand_max):.3g}")


def test_criterion_8_composite_scaling():
    t0 = time.time()
    beta = 1
    eps_pair = (0.8, 0.4)
    graph = pair_interaction_graph(4, beta)
    comp_widths = []
    for eps in eps_pair:
        build = build_composite(graph, eps)
        s = stats(build.net)
        ref = composite_reference(build)
        dev = oracle_compare(build.net, ref, n_points=300, seed=83)
        assert dev <= 1e-8
        rng = np.random.default_rng(84)
        pts = rng.uniform(-1, 1, size=(1500, 4))
        truth = np.array([eval_composite(graph, p) for p in pts])
        err = float(np.abs(eval_batch(build.net, pts)[:, 0] - truth).max())
        assert err <= eps
        comp_widths.append(s.width)
        del build
    comp_slope = math.log(comp_widths[1] / comp_widths[0]) / math.log(2.0)
    flat_widths = [plan_stats(make_plan(eps, beta, 4)).width for eps in eps_pair]
    flat_slope = math.log(flat_widths[1] / flat_widths[0]) / math.log(2.0)
    bound = 2 / (2.0 * beta) + 0.2  # d_* = 2
    ok = comp_slope <= bound and comp_slope < flat_slope
    report(8, ok,
           f"composite widths {comp_widths} slope {comp_slope:.2f} <= {bound:.2f}; "
           f"flat widths {flat_widths} slope {flat_slope:.2f} "
           f"[{time.time()-t0:.0f}s]")


def test_criterion_9_rate_trend():
    t0 = time.time()
    config = ExperimentConfig(
        d=1, beta=2, target_name="sin_scaled", noise_sd=0.1,
        n_grid=(512, 1024, 2048, 4096, 8192),
        sizing_rule=RULE_OPTIMAL, n_seeds=5, n_test=100_000, seed=0)
    result = run_rate_study(config)
    medians = [result.median_mse[n] for n in config.n_grid]
    decreasing = all(b < a for a, b in zip(medians, medians[1:]))
    in_band = -1.15 <= result.slope <= -0.45
    sizing_gap = all(
        size_architecture(RULE_OPTIMAL, n, 1, 2)[0]
        < size_architecture(RULE_SUBOPTIMAL, n, 1, 2)[0]
        for n in config.n_grid)
    ok = decreasing and in_band and sizing_gap
    report(9, ok,
           f"medians {['%.2e' % m for m in medians]} decreasing={decreasing}; "
           f"slope {result.slope:.3f} in [-1.15,-0.45] (theory -0.8); "
           f"H_opt < H_subopt at every n: {sizing_gap} [{time.time()-t0:.0f}s]")


def test_criterion_10_gradient_oracle():
    t0 = time.time()
    worst = 0.0
    for n in (512, 1024, 2048, 4096, 8192):
        h, l = size_architecture(RULE_OPTIMAL, n, 1, 2)
        worst = max(worst, gradient_check(1, h, l, n_weights=20, seed=7))
    report(10, worst <= 1e-5,
           f"max backprop-vs-FD relative error {worst:.2e} <= 1e-5 "
           f"[{time.time()-t0:.0f}s]")
