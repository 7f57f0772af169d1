"""Acceptance suite: one test per shipped guarantee, each printing a PASS/FAIL line.

Run with  pytest tests/test_acceptance.py -v -s

Note on 3b: the curvature certificate of the per-vehicle inclusion cost is
positive on its whole domain (that is 3a, and it is what convexity needs), but
it is NOT monotone there: it diverges at both the zero-rate and the capacity
endpoint, so the grid check of the textbook "non-increasing" claim fails by
construction.  The test states the claim faithfully and is expected to stay
red; see the runtime print for a concrete counterexample.
"""

import math
import time

import numpy as np
import pytest

from instances import random_context
from oracles import grid_min_two_vehicle, mc_success_probability
from vflsim import cli, fl_core, scheduler
from vflsim.channel import OutageCoefficients, success_probability
from vflsim.config import parse_config
from vflsim.scheduler import bcd_solve, curvature_certificate, power_ratios
from vflsim.sim import Experiment


def report(tag, ok, detail):
    print(f"\nACCEPTANCE {tag}: {'PASS' if ok else 'FAIL'} ({detail})")


def test_criterion_1_outage_closed_form():
    t0 = time.monotonic()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(50):
        a = float(rng.uniform(0.02, 4.0))
        b = float(rng.uniform(0.0, 2.5))
        h2 = float(rng.uniform(0.0, 5.0))
        closed = success_probability(OutageCoefficients(a, b), h2)
        mc = mc_success_probability(a, b, h2, rng, n=100_000)
        worst = max(worst, abs(closed - mc))
    dt = time.monotonic() - t0
    ok = worst <= 0.01 and dt < 10.0
    report("1 outage closed form vs Monte Carlo", ok,
           f"max |closed - MC| = {worst:.4f} over 50 triples, {dt:.1f}s")
    assert worst <= 0.01
    assert dt < 10.0


def test_criterion_2_channel_statistics():
    t0 = time.monotonic()
    rng = np.random.default_rng(102)
    worst_corr = worst_power = 0.0
    n = 100_000
    for eps in (0.2, 0.5, 0.9):
        h_est = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(0.5)
        h_err = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(0.5)
        h = eps * h_est + math.sqrt(1 - eps**2) * h_err
        worst_corr = max(worst_corr, abs(float(np.mean(h * np.conj(h_est)).real) - eps))
        worst_power = max(worst_power, abs(float(np.mean(np.abs(h) ** 2)) - 1.0))
    dt = time.monotonic() - t0
    ok = worst_corr <= 0.02 and worst_power <= 0.02 and dt < 5.0
    report("2 fading correlation and power", ok,
           f"max |corr err| = {worst_corr:.4f}, max |power err| = {worst_power:.4f}, {dt:.1f}s")
    assert worst_corr <= 0.02 and worst_power <= 0.02
    assert dt < 5.0


def _curvature_instances():
    rng = np.random.default_rng(103)
    for _ in range(100):
        ctx = random_context(rng, 2, alpha=float(rng.uniform(0.1, 0.9)))
        v = int(rng.integers(ctx.size))
        yield rng, ctx, v


def test_criterion_3a_inclusion_cost_convexity_and_certificate_positivity():
    t0 = time.monotonic()
    worst_curv = math.inf
    min_cert = math.inf
    for rng, ctx, v in _curvature_instances():
        grid = np.linspace(ctx.r_min[v], ctx.r_max[v], 1002)[1:-1]
        theta = scheduler.inclusion_cost_summand(grid, v, float(rng.uniform(0.1, 1.0)), ctx)
        scale = float(np.abs(theta).max())
        worst_curv = min(worst_curv, float(np.diff(theta, 2).min()) / scale)
        xi1, xi3 = power_ratios(ctx.eps2[v], ctx.h_est_sq[v], ctx.gain[v],
                                ctx.tx_power, ctx.bandwidth, ctx.noise_density)
        f = 1.0 + (xi3 / xi1) * np.linspace(1e-9, 1 - 1e-9, 1001)
        min_cert = min(min_cert, float(np.min(curvature_certificate(f, xi1, xi3))))
    dt = time.monotonic() - t0
    ok = worst_curv >= -1e-6 and min_cert > 0.0 and dt < 30.0
    report("3a inclusion-cost convexity and certificate positivity", ok,
           f"min scaled 2nd diff = {worst_curv:.2e}, min certificate = {min_cert:.4g}, {dt:.1f}s")
    assert worst_curv >= -1e-6
    assert min_cert > 0.0
    assert dt < 30.0


def test_criterion_3b_certificate_monotonicity_as_claimed():
    """Certificate non-increasing across (1, 1 + xi3/xi1): known to be false."""
    t0 = time.monotonic()
    worst_rise = 0.0
    example = None
    for _, ctx, v in _curvature_instances():
        xi1, xi3 = power_ratios(ctx.eps2[v], ctx.h_est_sq[v], ctx.gain[v],
                                ctx.tx_power, ctx.bandwidth, ctx.noise_density)
        f = 1.0 + (xi3 / xi1) * np.linspace(1e-9, 1 - 1e-9, 1001)
        lam = curvature_certificate(f, xi1, xi3)
        rise = float(np.max(np.diff(lam)))
        if rise > worst_rise:
            worst_rise = rise
            example = (xi1, xi3)
    dt = time.monotonic() - t0
    ok = worst_rise <= 1e-9
    report("3b certificate non-increasing over its domain", ok,
           f"largest single-step rise = {worst_rise:.3g} at (noise/error, signal/error) = "
           f"({example[0]:.3g}, {example[1]:.3g}); the certificate diverges at the "
           f"capacity endpoint, {dt:.1f}s")
    assert ok, "curvature certificate rises toward the capacity endpoint by construction"


def test_criterion_4_bcd_matches_grid_minimum():
    t0 = time.monotonic()
    rng = np.random.default_rng(104)
    worst_gap = -math.inf
    monotone = True
    for _ in range(50):
        ctx = random_context(rng, 2, alpha=float(rng.uniform(0.05, 0.95)))
        plan, rep = bcd_solve(ctx)
        grid = grid_min_two_vehicle(ctx, ctx.alpha, n_u=200, n_r=200)
        worst_gap = max(worst_gap, (plan.objective_value - grid) / abs(grid))
        diffs = np.diff(np.array(rep.objective_trace))
        monotone &= bool(np.all(diffs <= 1e-12))
    dt = time.monotonic() - t0
    ok = worst_gap <= 1e-3 and monotone and dt < 300.0
    report("4 solver vs 200^4 grid minimum", ok,
           f"worst relative gap = {worst_gap:.2e} over 50 instances, "
           f"traces monotone = {monotone}, {dt:.1f}s")
    assert worst_gap <= 1e-3
    assert monotone
    assert dt < 300.0


def test_criterion_5_analytic_block_limits():
    t0 = time.monotonic()
    rng = np.random.default_rng(105)
    worst = 0.0
    for _ in range(20):
        ctx = random_context(rng, int(rng.integers(2, 9)))
        plan1, _ = bcd_solve(ctx, alpha=1.0)
        r1 = np.array([plan1.rates[i] for i in plan1.ids])
        worst = max(worst, float(np.max(np.abs(r1 - ctx.r_min) / ctx.r_min)))
        plan0, _ = bcd_solve(ctx, alpha=0.0)
        r0 = np.array([plan0.rates[i] for i in plan0.ids])
        u0 = np.array([plan0.inclusion_probs[i] for i in plan0.ids])
        worst = max(worst, float(np.max(np.abs(r0 - ctx.r_max) / ctx.r_max)))
        worst = max(worst, float(np.max(np.abs(u0 - ctx.u_min) / ctx.u_min)))
    dt = time.monotonic() - t0
    ok = worst <= 1e-6
    report("5 analytic limits at alpha in {0, 1}", ok,
           f"worst relative deviation = {worst:.2e} over 20 instances, {dt:.1f}s")
    assert worst <= 1e-6


def test_criterion_6_anchored_aggregation_unbiased():
    t0 = time.monotonic()
    rng = np.random.default_rng(206)
    n, dim, trials = 10, 5, 10_000
    w_prev = rng.standard_normal(dim)
    locals_ = rng.standard_normal((n, dim))
    d = rng.integers(50, 250, size=n).astype(float)
    u = rng.uniform(0.3, 0.9, n)
    p = rng.uniform(0.4, 0.95, n)
    target = w_prev + (d / d.sum()) @ (locals_ - w_prev)
    scale = d / (d.sum() * u * p)
    included = rng.uniform(size=(trials, n)) < u
    succeeded = rng.uniform(size=(trials, n)) < p
    ind = (included & succeeded).astype(float)
    samples = w_prev + (ind * scale) @ (locals_ - w_prev)
    # cross-check the vectorization against the aggregation routine itself
    for k in range(25):
        upds = [fl_core.ClientUpdate(v, locals_[v], int(d[v]), float(u[v]), float(p[v]))
                for v in range(n) if ind[k, v]]
        direct = fl_core.aggregate(upds, float(d.sum()), w_prev, anchored=True)
        assert np.allclose(direct, samples[k], rtol=1e-12, atol=1e-12)
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(trials)
    z = np.abs(mean - target) / se
    dt = time.monotonic() - t0
    ok = bool(np.all(z <= 2.0))
    report("6 anchored aggregation unbiasedness", ok,
           f"max |mean - target| / SE = {float(z.max()):.2f} over {dim} coordinates, {dt:.1f}s")
    assert ok


def _desk_config(sched):
    cfg = parse_config()
    cfg.traffic.arrival_rate_per_lane = 0.05
    cfg.physical.feedback_delay_s = 1e-4
    cfg.learning.feature_dim = 30
    cfg.learning.class_separation = 1.2
    cfg.learning.partitioning = "noniid"
    cfg.learning.lr_base = 0.01
    cfg.learning.aggregation = "anchored"
    cfg.learning.test_samples_per_class = 200
    cfg.run.rounds = 200
    cfg.run.scheduler = sched
    return cfg


def test_criterion_7_end_to_end_time_to_accuracy():
    t0 = time.monotonic()
    seeds = (11, 12, 13)
    reductions = []
    strict_all = True
    details = []
    for seed in seeds:
        runs = {s: Experiment(_desk_config(s), seed=seed).run()
                for s in ("vrvfl", "scheme1", "scheme2")}
        finals = {s: float(np.mean([r.accuracy for r in recs[-10:]]))
                  for s, recs in runs.items()}
        threshold = 0.9 * min(finals.values())

        def crossing(records):
            for r in records:
                if r.accuracy >= threshold:
                    return r.time_cum
            return math.inf

        t_cross = {s: crossing(recs) for s, recs in runs.items()}
        best_baseline = min(t_cross["scheme1"], t_cross["scheme2"])
        strict = t_cross["vrvfl"] < t_cross["scheme1"] and t_cross["vrvfl"] < t_cross["scheme2"]
        strict_all &= strict
        reductions.append(1.0 - t_cross["vrvfl"] / best_baseline)
        details.append(f"seed {seed}: {t_cross['vrvfl']:.0f}s vs {best_baseline:.0f}s")
    median_red = float(np.median(reductions))
    dt = time.monotonic() - t0
    ok = strict_all and median_red >= 0.20 and dt < 900.0
    report("7 end-to-end time to 90%-of-final accuracy", ok,
           f"strict on every seed = {strict_all}, median reduction = {median_red:.1%} "
           f"[{'; '.join(details)}], {dt:.0f}s")
    assert strict_all
    assert median_red >= 0.20
    assert dt < 900.0


def test_criterion_8_compare_determinism(tmp_path):
    t0 = time.monotonic()
    base = ["compare", "--rounds", "5", "--seed", "21",
            "--set", "traffic.arrival_rate_per_lane=0.03",
            "--set", "learning.samples_per_class=5",
            "--set", "learning.test_samples_per_class=20"]
    assert cli.main(base + ["--out-dir", str(tmp_path / "a")]) == 0
    assert cli.main(base + ["--out-dir", str(tmp_path / "b")]) == 0
    files_a = sorted((tmp_path / "a").glob("*.csv"))
    files_b = sorted((tmp_path / "b").glob("*.csv"))
    names_ok = [p.name for p in files_a] == [p.name for p in files_b]
    bytes_ok = all(x.read_bytes() == y.read_bytes() for x, y in zip(files_a, files_b))
    dt = time.monotonic() - t0
    ok = names_ok and bytes_ok and len(files_a) == 4  # 3 schedulers + merged table
    report("8 compare reruns byte-identical", ok,
           f"{len(files_a)} CSV files compared, identical = {bytes_ok}, {dt:.1f}s")
    assert ok


def test_criterion_9_gradient_correctness():
    t0 = time.monotonic()
    from oracles import central_diff_gradient
    rng = np.random.default_rng(109)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(5, 40))
        d = int(rng.integers(2, 7))
        c = int(rng.integers(2, 6))
        x = rng.standard_normal((n, d))
        y = rng.integers(0, c, size=n)
        w = rng.standard_normal(c * d + c)
        ref = rng.standard_normal(c * d + c)
        mu = float(rng.uniform(0.0, 0.1))
        _, grad = fl_core.loss_and_grad(w, x, y, c, ref=ref, mu=mu)
        fd = central_diff_gradient(
            lambda v: fl_core.loss_and_grad(v, x, y, c, ref=ref, mu=mu)[0], w)
        worst = max(worst, float(np.linalg.norm(grad - fd)
                                 / max(np.linalg.norm(grad), 1e-12)))
    dt = time.monotonic() - t0
    ok = worst <= 1e-5
    report("9 training gradient vs central differences", ok,
           f"worst relative error = {worst:.2e} over 20 instances, {dt:.1f}s")
    assert ok
