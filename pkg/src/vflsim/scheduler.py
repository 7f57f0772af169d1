"""Per-round client inclusion and rate selection.

Each round solves, over the feasible vehicles,

    min_{u, R}  sum_v alpha * D_v / (D * u_v * p_v(R_v))
                + (1 - alpha) * max_v u_v * exp(-(2^(R_v/W) - 1))
    s.t.        sum_v u_v <= N,   u_min <= u_v <= 1,
                R_min_v <= R_v <= R_max_v,

where p_v(R) is the closed-form success probability of rate R given the fading
estimate.  The problem is convex in each block (u or R) with the other fixed,
so it is solved by block coordinate descent.  Each block collapses exactly to
a one-dimensional convex problem in the epigraph ceiling of the max term: for
a fixed ceiling the optimal R is the smallest rate meeting it (the inclusion
cost grows with rate) and the optimal u is a box-capped water-filling of the
inverse-probability cost.  A scalar golden-section search over the ceiling
therefore yields the exact block optimum, including the nonsmooth points where
several vehicles tie at the max.

All block solvers are pure functions of their inputs; iteration order is
vehicle-id ascending for reproducibility.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .mobility import nearest_rsu_distance, remaining_sojourn

_LN2 = math.log(2.0)
_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_RESTART_SCALES = (0.7, 0.85, 1.2, 1.4)


# ---------------------------------------------------------------------------
# scheduling context
# ---------------------------------------------------------------------------

@dataclass
class SchedulingContext:
    """Arrays over the feasible vehicles (ascending id) plus problem constants."""

    ids: np.ndarray  # int
    data_sizes: np.ndarray  # D_v
    epsilon: np.ndarray  # signed correlation
    h_est_sq: np.ndarray  # |h_est|^2
    gain: np.ndarray  # large-scale linear gain
    sojourn: np.ndarray  # s
    r_min: np.ndarray  # bit/s
    r_max: np.ndarray  # bit/s
    alpha: float
    u_min: float
    n_blocks: float
    bandwidth: float  # per-vehicle W
    noise_density: float
    tx_power: float
    model_bits: float
    d_total: float
    block_iters: int = 120
    budget_dropped: tuple = ()  # ids removed so |V| * u_min <= N

    def __post_init__(self):
        eps2 = self.epsilon**2
        self.eps2 = eps2
        self.xi1 = (self.bandwidth * self.noise_density
                    / (self.tx_power * self.gain * (1.0 - eps2)))
        self.xi3 = self.h_est_sq * eps2 / (1.0 - eps2)

    @property
    def size(self):
        return len(self.ids)

    def success_prob(self, rates):
        """Vectorized success probability of per-vehicle rates given the estimates."""
        f1 = np.expm1(np.asarray(rates, dtype=float) * _LN2 / self.bandwidth)
        with np.errstate(divide="ignore", over="ignore"):
            arg = self.xi1 - self.xi3 / f1
        return np.where(arg < 0.0, -np.expm1(np.minimum(arg, 0.0)), 0.0)


def rate_bounds(vehicle, geometry, cfg):
    """(R_min, R_max) for one vehicle.

    R_max is the capacity under a perfectly known channel (zero realized
    error); R_min is the slowest rate that still ships the model within the
    round-time cap and the vehicle's remaining time in coverage.
    """
    ch = vehicle.channel
    sojourn = remaining_sojourn(vehicle, geometry)
    if sojourn <= 0:
        raise ValueError(f"vehicle {vehicle.id} has no remaining time in coverage")
    w = cfg.block_bandwidth_hz
    snr = (cfg.tx_power_w * ch.large_scale_gain * ch.epsilon**2 * ch.h_est_power
           / (w * cfg.noise_density_w_hz))
    r_max = w * math.log1p(snr) / _LN2
    r_min = cfg.physical.model_bits / min(cfg.optimization.round_time_cap_s, sojourn)
    return r_min, r_max


def compute_feasible_set(vehicles, geometry, cfg):
    """Ids of vehicles whose rate box is non-empty (strictly R_min < R_max)."""
    feasible = set()
    for v in vehicles:
        if v.position >= geometry.road_length:
            continue
        r_lo, r_hi = rate_bounds(v, geometry, cfg)
        if r_lo < r_hi:
            feasible.add(v.id)
    return feasible


def build_context(vehicles, geometry, cfg):
    """Feasible-set context from live vehicle states; handles the u_min budget shrink."""
    rows = []
    coverage_data = 0
    for v in sorted(vehicles, key=lambda x: x.id):
        d_size = v.dataset.size if v.dataset is not None else 0
        coverage_data += d_size
        if v.position >= geometry.road_length:
            continue
        soj = remaining_sojourn(v, geometry)
        r_lo, r_hi = rate_bounds(v, geometry, cfg)
        if not r_lo < r_hi:
            continue
        ch = v.channel
        rows.append((v.id, d_size, ch.epsilon, ch.h_est_power, ch.large_scale_gain,
                     soj, r_lo, r_hi))
    opt = cfg.optimization
    dropped = []
    # shrink until every feasible vehicle can get its u_min share of the budget
    while rows and len(rows) * opt.u_min > cfg.physical.n_blocks:
        worst = min(range(len(rows)), key=lambda i: (rows[i][7], rows[i][0]))
        dropped.append(rows[worst][0])
        rows.pop(worst)
    cols = list(zip(*rows)) if rows else [[]] * 8
    data = np.array(cols[1], dtype=float)
    d_total = float(data.sum()) if opt.d_total_mode == "feasible" else float(coverage_data)
    return SchedulingContext(
        ids=np.array(cols[0], dtype=int),
        data_sizes=data,
        epsilon=np.array(cols[2], dtype=float),
        h_est_sq=np.array(cols[3], dtype=float),
        gain=np.array(cols[4], dtype=float),
        sojourn=np.array(cols[5], dtype=float),
        r_min=np.array(cols[6], dtype=float),
        r_max=np.array(cols[7], dtype=float),
        alpha=opt.alpha,
        u_min=opt.u_min,
        n_blocks=float(cfg.physical.n_blocks),
        bandwidth=cfg.block_bandwidth_hz,
        noise_density=cfg.noise_density_w_hz,
        tx_power=cfg.tx_power_w,
        model_bits=cfg.physical.model_bits,
        d_total=max(d_total, 1.0),
        block_iters=opt.block_iters,
        budget_dropped=tuple(dropped),
    )


# ---------------------------------------------------------------------------
# objective and block solvers
# ---------------------------------------------------------------------------

def objective(u, rates, ctx: SchedulingContext, alpha=None):
    """Problem objective at (u, R); +inf when any success probability hits zero."""
    alpha = ctx.alpha if alpha is None else alpha
    u = np.asarray(u, dtype=float)
    rates = np.asarray(rates, dtype=float)
    term1 = 0.0
    if alpha > 0.0:
        p = ctx.success_prob(rates)
        if np.any(p <= 0.0):
            return math.inf
        term1 = float(np.sum(alpha * ctx.data_sizes / (ctx.d_total * u * p)))
    term2 = 0.0
    if alpha < 1.0:
        f1 = np.expm1(rates * _LN2 / ctx.bandwidth)
        term2 = (1.0 - alpha) * float(np.exp(np.max(np.log(u) - f1)))
    return term1 + term2


def _golden_min(fn, lo, hi, iters):
    """Scalar minimization on [lo, hi]; returns the best evaluated point."""
    best = [math.inf, lo]

    def ev(x):
        f = fn(x)
        if f < best[0]:
            best[0], best[1] = f, x
        return f

    ev(lo)
    ev(hi)
    a, b = lo, hi
    c = b - _PHI * (b - a)
    d = a + _PHI * (b - a)
    fc, fd = ev(c), ev(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _PHI * (b - a)
            fc = ev(c)
        else:
            a, c, fc = c, d, fd
            d = a + _PHI * (b - a)
            fd = ev(d)
        if b - a <= 1e-14 * max(1.0, abs(a), abs(b)):
            break
    return best[1], best[0], b - a


def solve_rate_block(u, ctx: SchedulingContext, alpha=None, iters=None):
    """Exact rate-block minimizer for fixed inclusion probabilities.

    Parameterized by the ceiling s of the max term: every vehicle whose
    pressure exceeds s raises its rate just enough to meet it, never more,
    because the inclusion cost strictly grows with rate.  The reduced
    objective is convex in log s.
    """
    alpha = ctx.alpha if alpha is None else alpha
    iters = ctx.block_iters if iters is None else iters
    if ctx.size == 0:
        return np.array([])
    if alpha >= 1.0:
        return ctx.r_min.copy()
    if alpha <= 0.0:
        return ctx.r_max.copy()
    u = np.asarray(u, dtype=float)
    ln_u = np.log(u)
    w = ctx.bandwidth
    f1_min = np.expm1(ctx.r_min * _LN2 / w)
    f1_max = np.expm1(ctx.r_max * _LN2 / w)
    ell_lo = float(np.max(ln_u - f1_max))
    ell_hi = float(np.max(ln_u - f1_min))

    def rates_at(ell):
        f1_req = ln_u - ell
        r_req = np.where(f1_req > 0.0, w * np.log1p(np.maximum(f1_req, 0.0)) / _LN2, 0.0)
        return np.minimum(np.maximum(r_req, ctx.r_min), ctx.r_max)

    def phi(ell):
        r = rates_at(ell)
        p = ctx.success_prob(r)
        if np.any(p <= 0.0):
            return math.inf
        cost = float(np.sum(alpha * ctx.data_sizes / (ctx.d_total * u * p)))
        return cost + (1.0 - alpha) * math.exp(ell)

    if not ell_hi > ell_lo:
        return rates_at(ell_hi)
    ell_star, _, _ = _golden_min(phi, ell_lo, ell_hi, iters)
    return rates_at(ell_star)


def _waterfill(cost, lo, caps, budget):
    """min sum cost_v/u_v  s.t.  sum u <= budget, lo <= u_v <= caps_v.

    Exact KKT solve: u_v(mu) = clip(sqrt(cost_v/mu), lo, caps_v) with the
    multiplier found by a vectorized scan over its breakpoints.
    """
    caps = np.maximum(caps, lo)
    cost = np.where(np.isfinite(cost), cost, 1e300)
    u_free = np.where(cost > 0.0, caps, lo)
    total = float(u_free.sum())
    if total <= budget * (1.0 + 1e-12):
        return u_free
    act = cost > 0.0
    ca = cost[act]
    ha = caps[act]
    n_lo_fixed = int((~act).sum())
    sq = np.sqrt(ca)
    mu_hi = ca / ha**2  # below: pinned at cap
    mu_lo = ca / lo**2  # above: pinned at floor
    ev_mu = np.concatenate([mu_hi, mu_lo])
    ev_dhi = np.concatenate([-ha, np.zeros_like(ca)])
    ev_dsq = np.concatenate([sq, -sq])
    ev_dnlo = np.concatenate([np.zeros_like(ca), np.ones_like(ca)])
    order = np.argsort(ev_mu, kind="stable")
    ev_mu = ev_mu[order]
    sum_hi = float(ha.sum()) + np.cumsum(ev_dhi[order])
    sum_sq = np.maximum(np.cumsum(ev_dsq[order]), 0.0)
    n_lo = np.cumsum(ev_dnlo[order]) + n_lo_fixed
    lowers = ev_mu
    uppers = np.append(ev_mu[1:], np.inf)
    rhs = budget - sum_hi - lo * n_lo
    with np.errstate(divide="ignore", invalid="ignore"):
        mu_cand = (sum_sq / rhs) ** 2
    ok = (rhs > 0.0) & (sum_sq > 0.0) & (mu_cand >= lowers * (1 - 1e-12)) & (mu_cand <= uppers * (1 + 1e-12))
    idx = np.flatnonzero(ok)
    if len(idx) > 0:
        mu = float(mu_cand[idx[0]])
    else:
        # degenerate ties: fall back to bisection on the monotone budget curve
        mu_a, mu_b = float(ev_mu[0]) * 0.5, float(ev_mu[-1]) * 2.0
        for _ in range(200):
            mu = math.sqrt(mu_a * mu_b)
            if np.minimum(np.maximum(np.sqrt(ca / mu), lo), ha).sum() + n_lo_fixed * lo > budget:
                mu_a = mu
            else:
                mu_b = mu
        mu = mu_b
    u = np.where(act, np.minimum(np.maximum(np.sqrt(np.where(act, cost, 1.0) / mu), lo),
                                 caps), lo)
    return u


def solve_inclusion_block(rates, ctx: SchedulingContext, alpha=None, iters=None):
    """Exact inclusion-block minimizer for fixed rates.

    For a given ceiling s of the max term each u_v is capped at min(1, s/e_v);
    under the block budget the inverse costs water-fill against those caps.
    The reduced objective is convex in log s.
    """
    alpha = ctx.alpha if alpha is None else alpha
    iters = ctx.block_iters if iters is None else iters
    if ctx.size == 0:
        return np.array([])
    if alpha <= 0.0:
        return np.full(ctx.size, ctx.u_min)
    rates = np.asarray(rates, dtype=float)
    p = ctx.success_prob(rates)
    with np.errstate(divide="ignore"):
        cost = np.where(p > 0.0, alpha * ctx.data_sizes / (ctx.d_total * p), np.inf)
    if alpha >= 1.0:
        return _waterfill(cost, ctx.u_min, np.ones(ctx.size), ctx.n_blocks)
    ln_e = -np.expm1(rates * _LN2 / ctx.bandwidth)  # log of exp(-(2^(R/W)-1))
    top = float(np.max(ln_e))
    ell_lo = math.log(ctx.u_min) + top
    ell_hi = top

    def u_at(ell):
        caps = np.exp(np.minimum(0.0, ell - ln_e))
        return _waterfill(cost, ctx.u_min, caps, ctx.n_blocks)

    def psi(ell):
        u = u_at(ell)
        return float(np.sum(cost / u)) + (1.0 - alpha) * math.exp(ell)

    ell_star, _, _ = _golden_min(psi, ell_lo, ell_hi, iters)
    return u_at(ell_star)


# ---------------------------------------------------------------------------
# block coordinate descent and baselines
# ---------------------------------------------------------------------------

@dataclass
class SolverReport:
    iterations: int = 0
    objective_trace: list = field(default_factory=list)
    converged: bool = False
    block_residuals: list = field(default_factory=list)


def _ceiling_scan(ctx: SchedulingContext, alpha, n_grid=1500, n_scan=1400):
    """Globally-informed candidate for the joint problem when the budget is slack.

    Conditioned on the max-term ceiling s, the problem separates per vehicle:
    either u = 1 with the smallest rate whose pressure meets the ceiling, or u
    rides the ceiling (u = s * e^(f-1)), where the cost becomes
    (alpha*d/(D*s)) * q(R) with q = exp(-(f-1))/p independent of s.  Scanning
    log s (geometric pass plus a local refinement) with sliding-window minima
    of log q locates the global optimum up to grid resolution, ignoring the
    sum(u) <= N budget; the caller discards the candidate if that budget turns
    out violated.
    """
    w = ctx.bandwidth
    xi1 = ctx.xi1
    xi3 = ctx.xi3
    f1_lo = np.expm1(ctx.r_min * _LN2 / w)
    f1_hi = np.expm1(ctx.r_max * _LN2 / w)
    ln_umin = math.log(ctx.u_min)
    # per-vehicle log-spaced f1 grids, endpoint pulled off the zero-success edge
    grids = [np.exp(np.linspace(math.log(f1_lo[v]), math.log(f1_hi[v] * (1 - 1e-9)), n_grid))
             for v in range(ctx.size)]
    ln_q = []
    for v in range(ctx.size):
        p = -np.expm1(np.minimum(xi1[v] - xi3[v] / grids[v], 0.0))
        ln_q.append(-grids[v] - np.log(np.maximum(p, 1e-300)))
    ln_cd = np.log(alpha * np.maximum(ctx.data_sizes, 1e-300) / ctx.d_total)

    # sparse tables for O(1) range-minimum queries over each log-q grid
    tables = []
    for v in range(ctx.size):
        levels = [ln_q[v]]
        span = 1
        while 2 * span <= n_grid:
            prev = levels[-1]
            levels.append(np.minimum(prev[:-span], prev[span:]))
            span *= 2
        tables.append(levels)

    def range_min(v, left, right):
        """Vectorized min of ln_q[v][left:right] per query; inf on empty windows."""
        span = right - left
        out = np.full(len(left), np.inf)
        ok = span >= 1
        if not ok.any():
            return out
        k = np.zeros(len(left), dtype=int)
        k[ok] = np.floor(np.log2(span[ok])).astype(int)
        for level in np.unique(k[ok]):
            sel = ok & (k == level)
            tab = tables[v][level]
            width = 1 << level
            out[sel] = np.minimum(tab[left[sel]], tab[right[sel] - width])
        return out

    def phi_branches(v, ells):
        hi_f = -ells
        f1_a = np.maximum(f1_lo[v], hi_f)
        feasible = f1_a <= f1_hi[v] * (1.0 - 1e-12)
        with np.errstate(divide="ignore"):
            p_a = -np.expm1(np.minimum(xi1[v] - xi3[v] / f1_a, 0.0))
        phi_a = np.where(feasible & (p_a > 0),
                         alpha * ctx.data_sizes[v] / (ctx.d_total * np.maximum(p_a, 1e-300)),
                         np.inf)
        g = grids[v]
        left = np.searchsorted(g, ln_umin - ells, side="left")
        right = np.searchsorted(g, hi_f, side="right")
        phi_b = np.exp(np.minimum(ln_cd[v] - ells + range_min(v, left, right), 700.0))
        return phi_a, phi_b

    def scan_totals(ells):
        totals = (1.0 - alpha) * np.exp(ells)
        for v in range(ctx.size):
            phi_a, phi_b = phi_branches(v, ells)
            totals += np.minimum(phi_a, phi_b)
        return totals

    ell_lo = float(np.max(ln_umin - f1_hi))
    ell_hi = float(np.max(-f1_lo))
    if not ell_hi > ell_lo:
        return None
    t_min = max(-ell_hi, 1e-9)
    t_max = max(-ell_lo, t_min * (1.0 + 1e-9))
    coarse = -np.geomspace(t_min, t_max, n_scan)
    totals = scan_totals(coarse)
    k = int(np.argmin(totals))
    if not math.isfinite(totals[k]):
        return None
    fine = np.linspace(coarse[max(k - 1, 0)], coarse[min(k + 1, n_scan - 1)], 400)
    totals_fine = scan_totals(fine)
    kf = int(np.argmin(totals_fine))
    ell = float(fine[kf]) if totals_fine[kf] <= totals[k] else float(coarse[k])

    u = np.empty(ctx.size)
    ell_arr = np.array([ell])
    for v in range(ctx.size):
        phi_a, phi_b = phi_branches(v, ell_arr)
        if not (math.isfinite(phi_a[0]) or math.isfinite(phi_b[0])):
            return None
        if phi_b[0] < phi_a[0]:
            g = grids[v]
            mask = (g >= ln_umin - ell) & (g <= -ell)
            j = int(np.flatnonzero(mask)[np.argmin(ln_q[v][mask])])
            u[v] = min(1.0, math.exp(ell + g[j]))
        else:
            u[v] = 1.0
    if u.sum() > ctx.n_blocks:
        return None
    return np.clip(u, ctx.u_min, 1.0)


@dataclass
class RoundPlan:
    """Inclusion probabilities and rates for one round, plus realized outcomes."""

    ids: tuple = ()
    inclusion_probs: dict = field(default_factory=dict)
    rates: dict = field(default_factory=dict)
    success_probs: dict = field(default_factory=dict)
    feasible_set: frozenset = frozenset()
    selected_set: set = field(default_factory=set)
    round_time: float = 0.0
    objective_value: float = math.nan
    trim_events: int = 0
    budget_dropped: tuple = ()

    @property
    def is_empty(self):
        return len(self.ids) == 0


def _plan_from(ctx, u, rates, obj):
    p = ctx.success_prob(rates)
    ids = [int(i) for i in ctx.ids]
    return RoundPlan(
        ids=tuple(ids),
        inclusion_probs={i: float(v) for i, v in zip(ids, u)},
        rates={i: float(r) for i, r in zip(ids, rates)},
        success_probs={i: float(x) for i, x in zip(ids, p)},
        feasible_set=frozenset(ids),
        objective_value=obj,
        budget_dropped=ctx.budget_dropped,
    )


def _start_points(ctx, trimmed=False):
    """Deterministic BCD starting points covering the main partial-optimum basins.

    Besides uniform/floor/data-proportional, "parking" starts pin the weakest
    links (by signal-to-error ratio) at u_min with the budget shared among the
    rest; basins where poor channels are soft-excluded are unreachable from
    symmetric starts.
    """
    uniform = np.full(ctx.size, min(1.0, ctx.n_blocks / ctx.size))
    uniform = np.clip(uniform, ctx.u_min, 1.0)
    floor = np.full(ctx.size, ctx.u_min)
    total = ctx.data_sizes.sum()
    if total > 0:
        # u_min plus a data-proportional share of the leftover budget: always feasible
        extra = max(0.0, ctx.n_blocks - ctx.size * ctx.u_min)
        prop = np.minimum(ctx.u_min + ctx.data_sizes / total * extra, 1.0)
    else:
        prop = uniform
    starts = [uniform, floor] if trimmed else [uniform, floor, prop]
    quality = ctx.xi3
    order = np.argsort(quality, kind="stable")
    for frac in ((0.5,) if trimmed else (0.25, 0.5)):
        k = int(math.ceil(frac * ctx.size))
        if not 0 < k < ctx.size:
            continue
        u = np.full(ctx.size, ctx.u_min)
        share = (ctx.n_blocks - k * ctx.u_min) / (ctx.size - k)
        u[order[k:]] = np.clip(share, ctx.u_min, 1.0)
        starts.append(u)
    seen = set()
    unique = []
    for u in starts:
        key = tuple(np.round(u, 12))
        if key not in seen:
            seen.add(key)
            unique.append(u)
    return unique


def bcd_solve(ctx: SchedulingContext, alpha=None, tol=1e-6, max_outer=50):
    """Alternate exact block solves until the relative decrease stalls.

    Runs from a small set of deterministic starting points (biconvex problems
    can have several partially optimal points) and keeps the best.  The
    reported trace is the winning run's accepted objective values, which are
    non-increasing by construction: a block candidate is only accepted when it
    does not worsen the objective.
    """
    alpha = ctx.alpha if alpha is None else alpha
    if ctx.size == 0:
        return RoundPlan(), SolverReport()

    def feasible(u0):
        u0 = np.clip(u0, ctx.u_min, 1.0)
        total = u0.sum()
        floor_total = ctx.size * ctx.u_min
        if total > ctx.n_blocks and total > floor_total:
            shrink = (ctx.n_blocks - floor_total) / (total - floor_total)
            u0 = ctx.u_min + (u0 - ctx.u_min) * max(0.0, min(1.0, shrink))
        return u0

    def alternate(u0, trace):
        u = feasible(u0)
        rates = ctx.r_min.copy()
        if not trace:
            trace.append(objective(u, rates, ctx, alpha))
        converged = False
        residuals = [math.inf, math.inf]
        outer = 0
        for outer in range(1, max_outer + 1):
            prev = trace[-1]
            r_new = solve_rate_block(u, ctx, alpha)
            o_r = objective(u, r_new, ctx, alpha)
            if o_r <= trace[-1]:
                rates = r_new
                trace.append(o_r)
            else:
                trace.append(trace[-1])
            residuals[0] = trace[-2] - trace[-1]
            u_new = solve_inclusion_block(rates, ctx, alpha)
            o_u = objective(u_new, rates, ctx, alpha)
            if o_u <= trace[-1]:
                u = u_new
                trace.append(o_u)
            else:
                trace.append(trace[-1])
            residuals[1] = trace[-2] - trace[-1]
            if prev - trace[-1] <= tol * max(1e-300, abs(prev)):
                converged = True
                break
        return trace[-1], u, rates, converged, outer, residuals

    if not 0.0 < alpha < 1.0:
        # both block solves are start-independent at the endpoints
        starts = _start_points(ctx)[:1]
        scales = ()
        scanned = None
    else:
        scanned = _ceiling_scan(ctx, alpha)
    if scanned is not None:
        # the scan already located the global basin; a light polish suffices
        starts = [scanned, _start_points(ctx, trimmed=True)[0]]
        scales = ()
    elif 0.0 < alpha < 1.0:
        # binding budget: cover the partial-optimum basins the hard way
        starts = _start_points(ctx, trimmed=True)
        scales = (0.8, 1.25)
    best = None
    for u0 in starts:
        trace = []
        cand = alternate(u0, trace)
        # the max term couples the blocks along a nonsmooth ridge with several
        # blockwise-optimal points; rescaled warm restarts walk along it
        for scale in scales:
            again = alternate(cand[1] * scale, trace)
            if again[0] < cand[0]:
                cand = again
        if best is None or cand[0] < best[0]:
            best = (*cand, trace)
    obj, u, rates, converged, outer, residuals, trace = best
    plan = _plan_from(ctx, u, rates, obj)
    report = SolverReport(iterations=outer, objective_trace=trace,
                          converged=converged, block_residuals=residuals)
    return plan, report


def scheme1_baseline(ctx: SchedulingContext):
    """Uniform inclusion over the feasible set plus reliability-first rates.

    u_v = min(1, N/|V|) for everyone; rates solve the inclusion-cost-only rate
    block (the round-time pressure term is not part of this baseline), which
    lands on the per-vehicle minimum rates.
    """
    if ctx.size == 0:
        return RoundPlan(), SolverReport()
    u = np.full(ctx.size, min(1.0, ctx.n_blocks / ctx.size))
    rates = solve_rate_block(u, ctx, alpha=1.0)
    obj = objective(u, rates, ctx)
    plan = _plan_from(ctx, u, rates, obj)
    return plan, SolverReport(iterations=1, objective_trace=[obj], converged=True,
                              block_residuals=[0.0, 0.0])


def scheme2_baseline(ctx: SchedulingContext, tol=1e-6, max_outer=50):
    """The inclusion-cost-only special case: the full solve at alpha = 1."""
    return bcd_solve(ctx, alpha=1.0, tol=tol, max_outer=max_outer)


def realize_selection(plan: RoundPlan, rng, n_blocks):
    """Independent Bernoulli(u_v) inclusion; overflow beyond the block budget keeps
    the vehicles with the largest u_v * p_v (most valuable expected updates)."""
    if plan.is_empty:
        plan.selected_set = set()
        return plan.selected_set
    ids = np.array(plan.ids)
    u = np.array([plan.inclusion_probs[i] for i in plan.ids])
    draws = rng.uniform(size=len(ids))
    chosen = ids[draws < u]
    if len(chosen) > n_blocks:
        score = np.array([plan.inclusion_probs[i] * plan.success_probs[i] for i in chosen])
        keep = chosen[np.lexsort((chosen, -score))][: int(n_blocks)]
        plan.trim_events = len(chosen) - len(keep)
        chosen = keep
    plan.selected_set = {int(i) for i in chosen}
    return plan.selected_set


def round_time(plan: RoundPlan, successful_ids, model_bits, round_time_cap):
    """Duration of a round: the whole model at the slowest successful rate."""
    rates = [plan.rates[i] for i in successful_ids]
    if not rates:
        return round_time_cap
    return model_bits / min(rates)


# ---------------------------------------------------------------------------
# convexity diagnostics for the inclusion cost
# ---------------------------------------------------------------------------

def power_ratios(eps2, h_est_sq, gain, tx_power, bandwidth, noise_density):
    """Noise-to-error and signal-to-error power ratios of one link.

    xi1 = W*N0 / (P*L*(1-eps^2)),  xi3 = |h_est|^2 * eps^2 / (1-eps^2).
    The success probability at rate R is 1 - exp(xi1 - xi3/(2^(R/W)-1)) and the
    perfect-CSI capacity corresponds to 2^(R/W) = 1 + xi3/xi1.
    """
    xi1 = bandwidth * noise_density / (tx_power * gain * (1.0 - eps2))
    xi3 = h_est_sq * eps2 / (1.0 - eps2)
    return xi1, xi3


def inclusion_cost_summand(rates, v, u_v, ctx: SchedulingContext, alpha=None):
    """The vehicle-v summand of the objective's first term as a function of rate."""
    alpha = ctx.alpha if alpha is None else alpha
    f1 = np.expm1(np.asarray(rates, dtype=float) * _LN2 / ctx.bandwidth)
    xi1, xi3 = power_ratios(ctx.eps2[v], ctx.h_est_sq[v], ctx.gain[v],
                            ctx.tx_power, ctx.bandwidth, ctx.noise_density)
    with np.errstate(divide="ignore"):
        p = -np.expm1(np.minimum(xi1 - xi3 / f1, 0.0))
    with np.errstate(divide="ignore"):
        return alpha * ctx.data_sizes[v] / (ctx.d_total * u_v * p)


def curvature_certificate(f, xi1, xi3):
    """Scaled curvature factor of the inclusion cost versus the SNR demand f = 2^(R/W).

    Positive on 1 < f < 1 + xi3/xi1 exactly where the per-vehicle inclusion
    cost is convex in the rate.  Note it diverges at both ends of that
    interval: near f = 1 through the 1/(f^2-1) factor and near the capacity
    endpoint where the success probability vanishes, so it is not monotone.
    """
    f = np.asarray(f, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        e = np.exp(xi1 - xi3 / (f - 1.0))
        return f / (f**2 - 1.0) * (1.0 + e) / (1.0 - e) - 1.0 / xi3


# ---------------------------------------------------------------------------
# instance dump (offline solver debugging)
# ---------------------------------------------------------------------------

def dump_instance(ctx: SchedulingContext, path):
    """Write the per-vehicle scheduling inputs as a flat text record."""
    buf = io.StringIO()
    buf.write("# vflsim instance 1\n")
    buf.write(f"# alpha {ctx.alpha!r} u_min {ctx.u_min!r} n_blocks {ctx.n_blocks!r} "
              f"bandwidth {ctx.bandwidth!r} noise_density {ctx.noise_density!r} "
              f"tx_power {ctx.tx_power!r} model_bits {ctx.model_bits!r} d_total {ctx.d_total!r}\n")
    buf.write("# columns: id data_size epsilon h_est_sq large_scale_gain sojourn_s r_min r_max\n")
    for k in range(ctx.size):
        buf.write(" ".join([
            str(int(ctx.ids[k])), repr(float(ctx.data_sizes[k])), repr(float(ctx.epsilon[k])),
            repr(float(ctx.h_est_sq[k])), repr(float(ctx.gain[k])), repr(float(ctx.sojourn[k])),
            repr(float(ctx.r_min[k])), repr(float(ctx.r_max[k])),
        ]) + "\n")
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    return text


def load_instance(path_or_text):
    """Read back a dumped instance into a SchedulingContext."""
    if "\n" in str(path_or_text):
        text = path_or_text
    else:
        with open(path_or_text, "r", encoding="utf-8") as f:
            text = f.read()
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# vflsim instance 1"):
        raise ValueError("not a vflsim instance dump")
    meta_parts = lines[1][1:].split()
    meta = {meta_parts[i]: float(meta_parts[i + 1]) for i in range(0, len(meta_parts), 2)}
    rows = [ln.split() for ln in lines[3:] if ln.strip()]
    cols = list(zip(*rows)) if rows else [[]] * 8
    return SchedulingContext(
        ids=np.array([int(x) for x in cols[0]]),
        data_sizes=np.array([float(x) for x in cols[1]]),
        epsilon=np.array([float(x) for x in cols[2]]),
        h_est_sq=np.array([float(x) for x in cols[3]]),
        gain=np.array([float(x) for x in cols[4]]),
        sojourn=np.array([float(x) for x in cols[5]]),
        r_min=np.array([float(x) for x in cols[6]]),
        r_max=np.array([float(x) for x in cols[7]]),
        alpha=meta["alpha"],
        u_min=meta["u_min"],
        n_blocks=meta["n_blocks"],
        bandwidth=meta["bandwidth"],
        noise_density=meta["noise_density"],
        tx_power=meta["tx_power"],
        model_bits=meta["model_bits"],
        d_total=meta["d_total"],
    )
