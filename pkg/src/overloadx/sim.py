"""Exact discrete-event simulation of the pre-limit X-model CTMC.

State is the six integer counts (Q1, Q2, Z11, Z12, Z21, Z22).  Events
compete as exponentials: class arrivals at the integer rates of the scaled
system, abandonments at theta_i * Q_i (patience is exponential, so the
per-customer timers can be aggregated), and service completions at
mu_ij * Z_ij.  Each event consumes exactly two uniforms: one for the holding
time, one for the category, selected by inverse CDF over the rate partition
in a fixed order (arr1, arr2, ab1, ab2, s11, s12, s21, s22).  This makes
runs bit-reproducible for a given seed.

Routing follows the threshold control driven by the two weighted queue
differences

    D12 = Q1 - k12 - r12 Q2,        D21 = r21 Q2 - k21 - Q1,

evaluated in exact integer arithmetic.  Sharing is one-way: a pool may only
take the other class while no agent of its own class is held by the other
pool.  Freed agents prefer cross-class assignment only when the
corresponding difference process is strictly positive and the one-way guard
holds; otherwise they take their own queue, then the other queue (guard
permitting), then idle.  Arrivals enter service immediately when an
own-pool agent is idle; cross-pool entry on arrival follows the same
rule as freed agents.

``run`` simulates until a target number of arrivals, discards a warm-up
prefix (measured in arrivals, which is proportional to elapsed time at the
constant total arrival rate), and accumulates time-weighted statistics over
the remainder.  ``replicate`` aggregates independent-stream runs into
t-based confidence intervals.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .params import ModelParams, ScaledSystem
from .fluid import stationary_point

__all__ = [
    "SimState", "RunStats", "SimEstimate", "QuantityEstimate",
    "init_state", "step", "run", "replicate", "aggregate_runs",
    "difference_jump_rates", "indicator_integral",
]

_EVENTS = ("arr1", "arr2", "ab1", "ab2", "s11", "s12", "s21", "s22")

QUANTITIES = ("mean_q1", "mean_q2", "mean_qs", "mean_z12",
              "std_q1", "std_q2", "std_qs", "std_z12", "frac_d_positive")


@dataclass
class SimState:
    """Integer state of the CTMC plus the simulation clock."""

    q1: int
    q2: int
    z11: int
    z12: int
    z21: int
    z22: int
    clock: float = 0.0

    def check_invariants(self, sys: ScaledSystem):
        ok = (self.q1 >= 0 and self.q2 >= 0
              and 0 <= self.z11 and 0 <= self.z12
              and 0 <= self.z21 and 0 <= self.z22
              and self.z11 + self.z21 <= sys.m1n
              and self.z12 + self.z22 <= sys.m2n
              and not (self.z12 > 0 and self.z21 > 0))
        if not ok:
            raise AssertionError(f"state invariant violated: {self}")
        return self

    def in_system(self) -> tuple[int, int]:
        return (self.q1 + self.z11 + self.z12, self.q2 + self.z21 + self.z22)


@dataclass
class RunStats:
    """Time-weighted statistics from one run's measurement window."""

    n: int
    seed: int
    start_mode: str
    warmup_fraction: float
    window_start: float
    window_end: float
    degenerate: bool
    events: int
    one_way_violations: int
    mean_q1: float
    mean_q2: float
    mean_qs: float
    mean_z12: float
    std_q1: float
    std_q2: float
    std_qs: float
    std_z12: float
    mean_d: float
    std_d: float
    frac_d_positive: float
    frac_pool_shortfall: float
    arrivals: tuple[int, int]
    services: tuple[int, int]
    abandonments: tuple[int, int]
    initial_in_system: tuple[int, int]
    final_in_system: tuple[int, int]

    @property
    def window_length(self) -> float:
        return self.window_end - self.window_start

    def conservation_residual(self) -> tuple[int, int]:
        """arrivals - services - abandonments - (final - initial), per class."""
        return tuple(
            self.arrivals[i] - self.services[i] - self.abandonments[i]
            - (self.final_in_system[i] - self.initial_in_system[i])
            for i in (0, 1)
        )

    def value(self, name: str) -> float:
        return getattr(self, name)


@dataclass(frozen=True)
class QuantityEstimate:
    mean: float
    std: float
    halfwidth: float


@dataclass
class SimEstimate:
    """Cross-replication summary: mean, sample std, 95% t half-width."""

    n: int
    replications: int
    base_seed: int
    t_multiplier: float
    quantities: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> QuantityEstimate:
        return self.quantities[name]

    def ci(self, name: str) -> tuple[float, float]:
        q = self.quantities[name]
        return q.mean - q.halfwidth, q.mean + q.halfwidth


def init_state(sys: ScaledSystem, mode: str = "fluid") -> SimState:
    """Initial CTMC state: all-empty, or the rounded stationary fluid point.

    Fluid mode fills both pools (Z11 = m1n, Z12 + Z22 = m2n) and rounds the
    stationary point of the system's realized threshold offset k12n / n.
    """
    if mode == "empty":
        return SimState(0, 0, 0, 0, 0, 0)
    if mode == "fluid":
        p_eff = sys.parent.with_kappa12(sys.kappa_eff)
        sp = stationary_point(p_eff)
        n = sys.n
        z12 = min(int(math.floor(n * sp.z12 + 0.5)), sys.m2n)
        return SimState(
            q1=max(int(math.floor(n * sp.q1 + 0.5)), 0),
            q2=max(int(math.floor(n * sp.q2 + 0.5)), 0),
            z11=sys.m1n, z12=z12, z21=0, z22=sys.m2n - z12,
        ).check_invariants(sys)
    raise ValueError(f"unknown start mode {mode!r}")


def _d12_positive(sys: ScaledSystem, q1: int, q2: int) -> bool:
    num, den = sys.parent.r12.numerator, sys.parent.r12.denominator
    return den * q1 - den * sys.k12n - num * q2 > 0


def _d21_positive(sys: ScaledSystem, q1: int, q2: int) -> bool:
    num, den = sys.parent.r21.numerator, sys.parent.r21.denominator
    return num * q2 - den * sys.k21n - den * q1 > 0


def step(sys: ScaledSystem, state: SimState, rng: np.random.Generator):
    """One transition of the CTMC; returns (new_state, event_name, dt).

    Reference implementation of the event logic; ``run`` uses an inlined
    copy of the same rules for speed, and the two are held together by an
    equivalence test on a shared uniform stream.
    """
    p = sys.parent
    rates = (
        float(sys.lambda1n), float(sys.lambda2n),
        p.theta1 * state.q1, p.theta2 * state.q2,
        p.mu11 * state.z11, p.mu12 * state.z12,
        p.mu21 * state.z21, p.mu22 * state.z22,
    )
    total = sum(rates)
    dt = -math.log(1.0 - rng.random()) / total
    u = rng.random() * total
    idx = 0
    acc = rates[0]
    while u >= acc and idx < 7:
        idx += 1
        acc += rates[idx]
    event = _EVENTS[idx]
    s = SimState(state.q1, state.q2, state.z11, state.z12, state.z21,
                 state.z22, state.clock + dt)
    apply_event(sys, s, event)
    return s, event, dt


def apply_event(sys: ScaledSystem, s: SimState, event: str):
    """Apply one event's routing rules in place."""
    if event == "arr1":
        if s.z11 + s.z21 < sys.m1n:
            s.z11 += 1
        elif (s.z12 + s.z22 < sys.m2n and s.z21 == 0
              and _d12_positive(sys, s.q1, s.q2)):
            s.z12 += 1
        else:
            s.q1 += 1
    elif event == "arr2":
        if s.z12 + s.z22 < sys.m2n:
            s.z22 += 1
        elif (s.z11 + s.z21 < sys.m1n and s.z12 == 0
              and _d21_positive(sys, s.q1, s.q2)):
            s.z21 += 1
        else:
            s.q2 += 1
    elif event == "ab1":
        s.q1 -= 1
    elif event == "ab2":
        s.q2 -= 1
    elif event in ("s11", "s21"):
        if event == "s11":
            s.z11 -= 1
        else:
            s.z21 -= 1
        # freed pool-1 agent
        if _d21_positive(sys, s.q1, s.q2) and s.z12 == 0 and s.q2 > 0:
            s.z21 += 1
            s.q2 -= 1
        elif s.q1 > 0:
            s.z11 += 1
            s.q1 -= 1
        elif s.q2 > 0 and s.z12 == 0:
            s.z21 += 1
            s.q2 -= 1
    else:  # "s12" or "s22"
        if event == "s12":
            s.z12 -= 1
        else:
            s.z22 -= 1
        # freed pool-2 agent
        if _d12_positive(sys, s.q1, s.q2) and s.z21 == 0 and s.q1 > 0:
            s.z12 += 1
            s.q1 -= 1
        elif s.q2 > 0:
            s.z22 += 1
            s.q2 -= 1
        elif s.q1 > 0 and s.z21 == 0:
            s.z12 += 1
            s.q1 -= 1
    return s


def default_warmup(start_mode: str) -> float:
    """20% of the run after a fluid start, 50% after an empty start."""
    return 0.2 if start_mode == "fluid" else 0.5


def run(sys: ScaledSystem, horizon_arrivals: int, warmup_fraction=None,
        seed=0, start: str = "fluid",
        uniforms: np.ndarray | None = None) -> RunStats:
    """Simulate until ``horizon_arrivals`` total arrivals; time-weighted stats.

    The first ``warmup_fraction`` of arrivals (a proxy for elapsed time) is
    discarded.  Runs are deterministic given the seed.  ``uniforms`` is a
    testing hook: a pre-drawn uniform stream consumed two per event.
    """
    if horizon_arrivals < 1:
        raise ValueError("horizon must be at least one arrival")
    if warmup_fraction is None:
        warmup_fraction = default_warmup(start)
    if not 0.0 <= warmup_fraction < 1.0:
        raise ValueError("warmup fraction must lie in [0, 1)")
    state = init_state(sys, start)
    p = sys.parent
    lam1n, lam2n = float(sys.lambda1n), float(sys.lambda2n)
    m1n, m2n = sys.m1n, sys.m2n
    th1, th2 = p.theta1, p.theta2
    mu11, mu12, mu21, mu22 = p.mu11, p.mu12, p.mu21, p.mu22
    r12n, r12d = p.r12.numerator, p.r12.denominator
    r21n, r21d = p.r21.numerator, p.r21.denominator
    k12, k21 = sys.k12n, sys.k21n
    q1, q2 = state.q1, state.q2
    z11, z12, z21, z22 = state.z11, state.z12, state.z21, state.z22
    init_sys = state.in_system()

    if uniforms is None:
        rng = np.random.default_rng(seed)
        buf = rng.random(1 << 15)
    else:
        rng = None
        buf = uniforms
    bi = 0

    warm_arrivals = math.ceil(warmup_fraction * horizon_arrivals)
    arrivals = 0
    arr1 = arr2 = 0
    ab1 = ab2 = sv1 = sv2 = 0
    events = 0
    violations = 0
    t = 0.0
    t0 = None
    T = 0.0
    s_q1 = s_q2 = s_qs = s_z = s_d = 0.0
    s2_q1 = s2_q2 = s2_qs = s2_z = s2_d = 0.0
    t_pos = t_short = 0.0
    log = math.log

    while arrivals < horizon_arrivals:
        r_ab1 = th1 * q1
        r_ab2 = th2 * q2
        r_s11 = mu11 * z11
        r_s12 = mu12 * z12
        r_s21 = mu21 * z21
        r_s22 = mu22 * z22
        total = lam1n + lam2n + r_ab1 + r_ab2 + r_s11 + r_s12 + r_s21 + r_s22
        if bi >= buf.size - 2:
            if rng is None:
                raise RuntimeError("uniform stream exhausted")
            buf = rng.random(1 << 15)
            bi = 0
        dt = -log(1.0 - buf[bi]) / total
        u = buf[bi + 1] * total
        bi += 2
        events += 1
        if z12 > 0 and z21 > 0:
            violations += 1

        d12s = r12d * q1 - r12d * k12 - r12n * q2   # r12d * D12, exact
        pos12 = d12s > 0
        measuring = arrivals >= warm_arrivals
        if measuring:
            if t0 is None:
                t0 = t
            T += dt
            qs = q1 + q2
            d = d12s / r12d
            s_q1 += q1 * dt
            s_q2 += q2 * dt
            s_qs += qs * dt
            s_z += z12 * dt
            s_d += d * dt
            s2_q1 += q1 * q1 * dt
            s2_q2 += q2 * q2 * dt
            s2_qs += qs * qs * dt
            s2_z += z12 * z12 * dt
            s2_d += d * d * dt
            if pos12:
                t_pos += dt
            if z11 < m1n or z12 + z22 < m2n:
                t_short += dt
        t += dt

        if u < lam1n:
            arrivals += 1
            arr1 += 1
            if z11 + z21 < m1n:
                z11 += 1
            elif z12 + z22 < m2n and z21 == 0 and pos12:
                z12 += 1
            else:
                q1 += 1
        elif u < lam1n + lam2n:
            arrivals += 1
            arr2 += 1
            if z12 + z22 < m2n:
                z22 += 1
            elif (z11 + z21 < m1n and z12 == 0
                  and r21n * q2 - r21d * k21 - r21d * q1 > 0):
                z21 += 1
            else:
                q2 += 1
        else:
            u -= lam1n + lam2n
            if u < r_ab1:
                q1 -= 1
                ab1 += 1
            elif u < r_ab1 + r_ab2:
                q2 -= 1
                ab2 += 1
            else:
                u -= r_ab1 + r_ab2
                if u < r_s11 + r_s21:
                    if u < r_s11:
                        z11 -= 1
                        sv1 += 1
                    else:
                        z21 -= 1
                        sv2 += 1
                    if (r21n * q2 - r21d * k21 - r21d * q1 > 0
                            and z12 == 0 and q2 > 0):
                        z21 += 1
                        q2 -= 1
                    elif q1 > 0:
                        z11 += 1
                        q1 -= 1
                    elif q2 > 0 and z12 == 0:
                        z21 += 1
                        q2 -= 1
                else:
                    u -= r_s11 + r_s21
                    if u < r_s12:
                        z12 -= 1
                        sv1 += 1
                    else:
                        z22 -= 1
                        sv2 += 1
                    if (r12d * q1 - r12d * k12 - r12n * q2 > 0
                            and z21 == 0 and q1 > 0):
                        z12 += 1
                        q1 -= 1
                    elif q2 > 0:
                        z22 += 1
                        q2 -= 1
                    elif q1 > 0 and z21 == 0:
                        z12 += 1
                        q1 -= 1

    degenerate = T <= 0.0
    if degenerate:
        nan = float("nan")
        means = dict(mean_q1=nan, mean_q2=nan, mean_qs=nan, mean_z12=nan,
                     std_q1=nan, std_q2=nan, std_qs=nan, std_z12=nan,
                     mean_d=nan, std_d=nan, frac_d_positive=nan,
                     frac_pool_shortfall=nan)
        t0 = t
    else:
        def std_of(s, s2):
            return math.sqrt(max(s2 / T - (s / T) ** 2, 0.0))

        means = dict(
            mean_q1=s_q1 / T, mean_q2=s_q2 / T, mean_qs=s_qs / T,
            mean_z12=s_z / T,
            std_q1=std_of(s_q1, s2_q1), std_q2=std_of(s_q2, s2_q2),
            std_qs=std_of(s_qs, s2_qs), std_z12=std_of(s_z, s2_z),
            mean_d=s_d / T, std_d=std_of(s_d, s2_d),
            frac_d_positive=t_pos / T,
            frac_pool_shortfall=t_short / T,
        )
    final = SimState(q1, q2, z11, z12, z21, z22, t).in_system()
    return RunStats(
        n=sys.n, seed=seed if isinstance(seed, int) else -1,
        start_mode=start, warmup_fraction=warmup_fraction,
        window_start=t0 if t0 is not None else t, window_end=t,
        degenerate=degenerate, events=events, one_way_violations=violations,
        arrivals=(arr1, arr2), services=(sv1, sv2), abandonments=(ab1, ab2),
        initial_in_system=init_sys, final_in_system=final,
        **means,
    )


def _replication_seed(base_seed: int, index: int) -> np.random.SeedSequence:
    """Documented stream split: child index i of SeedSequence(base_seed)."""
    return np.random.SeedSequence(entropy=base_seed, spawn_key=(index,))


def _run_one(args):
    sys, horizon, warmup, base_seed, index, start = args
    rng_seed = _replication_seed(base_seed, index)
    stats = run(sys, horizon, warmup, seed=rng_seed, start=start)
    stats.seed = base_seed
    return stats


def aggregate_runs(stats: list, base_seed: int = -1) -> SimEstimate:
    """Cross-replication aggregation: mean, sample std, 95% t half-width."""
    R = len(stats)
    if R < 2:
        raise ValueError("need at least two replications for an interval")
    tmult = float(scipy.stats.t.ppf(0.975, R - 1))
    est = SimEstimate(n=stats[0].n, replications=R, base_seed=base_seed,
                      t_multiplier=tmult)
    for name in QUANTITIES:
        vals = np.array([s.value(name) for s in stats])
        mean = float(vals.mean())
        sd = float(vals.std(ddof=1))
        est.quantities[name] = QuantityEstimate(
            mean=mean, std=sd, halfwidth=tmult * sd / math.sqrt(R))
    est.runs = stats
    return est


def replicate(sys: ScaledSystem, R: int, horizon_arrivals: int,
              base_seed: int, warmup_fraction=None, start: str = "fluid",
              threads: int | None = None) -> SimEstimate:
    """R independent-stream runs aggregated into t confidence intervals.

    Half-widths are t_{0.975, R-1} * s / sqrt(R).  Replications may execute
    in parallel (``threads`` or the OVERLOADX_THREADS environment variable);
    results do not depend on the scheduling.
    """
    if R < 2:
        raise ValueError("need at least two replications for an interval")
    if threads is None:
        threads = int(os.environ.get("OVERLOADX_THREADS", "1"))
    jobs = [(sys, horizon_arrivals, warmup_fraction, base_seed, i, start)
            for i in range(R)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            stats = list(pool.map(_run_one, jobs))
    else:
        stats = [_run_one(job) for job in jobs]
    return aggregate_runs(stats, base_seed)


def difference_jump_rates(sys: ScaledSystem, state: SimState) -> dict:
    """Aggregate rates of each D12 jump size at a state, in D units.

    Enumerates every CTMC transition at ``state``, applies the routing rules,
    and classifies the resulting change of D12 = Q1 - k12 - r12 Q2.  Serves
    as the cross-model oracle tying the simulator's generator to the
    fast-process rates: at a pools-full state n*gamma the values divided by n
    must reproduce the per-regime jump rates exactly.
    """
    p = sys.parent
    r12 = p.r12
    events = {
        "arr1": float(sys.lambda1n), "arr2": float(sys.lambda2n),
        "ab1": p.theta1 * state.q1, "ab2": p.theta2 * state.q2,
        "s11": p.mu11 * state.z11, "s12": p.mu12 * state.z12,
        "s21": p.mu21 * state.z21, "s22": p.mu22 * state.z22,
    }
    out: dict = {}
    for event, rate in events.items():
        if rate <= 0.0:
            continue
        nxt = apply_event(
            sys, SimState(state.q1, state.q2, state.z11, state.z12,
                          state.z21, state.z22, 0.0), event)
        jump = (nxt.q1 - state.q1) - r12 * (nxt.q2 - state.q2)
        if jump != 0:
            out[jump] = out.get(jump, 0.0) + rate
    return out


def indicator_integral(sys: ScaledSystem, t_end: float, seed,
                       pi_ref: float, start: str = "fluid") -> float:
    """sqrt(n) * integral over [0, t_end] of (1{D12 > 0} - pi_ref) ds.

    The diffusion-scale cumulative routing-indicator fluctuation; its
    variance across replications is the empirical counterpart of the
    fast-process time change gamma3.
    """
    if t_end <= 0.0:
        raise ValueError("t_end must be positive")
    state = init_state(sys, start)
    rng = np.random.default_rng(seed)
    p = sys.parent
    r12n, r12d = p.r12.numerator, p.r12.denominator
    integral = 0.0
    t = 0.0
    buf = rng.random(1 << 13)
    bi = 0
    while t < t_end:
        rates = (
            float(sys.lambda1n), float(sys.lambda2n),
            p.theta1 * state.q1, p.theta2 * state.q2,
            p.mu11 * state.z11, p.mu12 * state.z12,
            p.mu21 * state.z21, p.mu22 * state.z22,
        )
        total = sum(rates)
        if bi >= buf.size - 2:
            buf = rng.random(1 << 13)
            bi = 0
        dt = -math.log(1.0 - buf[bi]) / total
        u = buf[bi + 1] * total
        bi += 2
        pos = r12d * state.q1 - r12d * sys.k12n - r12n * state.q2 > 0
        seg = min(dt, t_end - t)
        integral += ((1.0 if pos else 0.0) - pi_ref) * seg
        t += dt
        idx = 0
        acc = rates[0]
        while u >= acc and idx < 7:
            idx += 1
            acc += rates[idx]
        apply_event(sys, state, _EVENTS[idx])
    return math.sqrt(sys.n) * integral
