"""The fast-time-scale process (FTSP) attached to a fluid state.

Around a fluid state gamma = (q1, q2, z12) the weighted queue difference
D = Q1 - k - r*Q2 fluctuates at rate O(n) while gamma itself barely moves.
Expanding time by n turns the difference into a limiting pure-jump Markov
process D(gamma, .) whose jumps come from classifying every transition of
the original chain by its effect on D:

* class-1 events (arrival, abandonment, any service completion taken from
  queue 1) move D by +-1;
* class-2 events move D by -+r.

The routing rule makes the jump *rates* depend only on the sign of D: when
D > 0 every completing agent (both pools) takes the head of queue 1, when
D <= 0 pool-2 agents take queue 2 and pool-1 agents queue 1.  With r = j/k
in lowest terms, k*D is an integer lattice walk with jumps {+-k, +-j} and
two rate regimes, i.e. a quasi-birth-and-death (QBD) process; for r = 1 it
is a plain birth-and-death process whose excursions above and below 0 are
M/M/1 busy periods.

Everything downstream needs two functionals of this process: pi12(gamma),
the stationary probability that D is positive (the fraction of pool-2
completions routed to class 1), and sigma2(gamma), the asymptotic variance
of the time-integrated centered positivity indicator.  Several routes to
each are implemented and cross-checked, because the available closed forms
disagree (see ``asymptotic_variance``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import spsolve

from .params import ModelParams

__all__ = [
    "FluidState", "FtspRates", "QbdModel", "FtspSummary", "FtspMcStats",
    "BusyPeriodMoments", "ftsp_rates", "drift_rates", "is_positive_recurrent",
    "busy_period_moments", "pi_12", "pi_12_stationary", "asymptotic_variance",
    "simulate_ftsp", "ftsp_summary",
]


@dataclass(frozen=True)
class FluidState:
    """A point of the fluid state space S = [0, inf)^2 x [0, m2]."""

    q1: float
    q2: float
    z12: float

    def validate(self, p: ModelParams):
        if self.q1 < 0 or self.q2 < 0:
            raise ValueError(f"queue coordinates must be non-negative: {self}")
        if not 0.0 <= self.z12 <= p.m2:
            raise ValueError(f"z12 must lie in [0, m2={p.m2}]: {self}")
        return self

    def as_array(self):
        return np.array([self.q1, self.q2, self.z12])


@dataclass(frozen=True)
class FtspRates:
    """Birth-death rates of the FTSP when r = 1.

    In the positive region the walk moves up at ``lam1`` and down at ``mu1``;
    in the non-positive region it moves away from the boundary (down) at
    ``lam2`` and back toward it (up) at ``mu2``.
    """

    lam1: float
    mu1: float
    lam2: float
    mu2: float

    @property
    def total_rate(self) -> float:
        return self.lam1 + self.mu1  # identical in both regions


@dataclass(frozen=True)
class QbdModel:
    """Lattice representation of the FTSP for rational r = j/k.

    The walk lives on the integer lattice of k*D (step 1/k in D units).
    ``pos_rates`` / ``neg_rates`` map signed lattice jumps to rates for the
    two regimes (origin state > 0, origin state <= 0).  Class-1 events jump
    +-k, class-2 events +-j.
    """

    j: int
    k: int
    pos_rates: dict
    neg_rates: dict

    @property
    def step(self) -> float:
        return 1.0 / self.k

    @property
    def block_size(self) -> int:
        return max(self.j, self.k)

    def blocks(self, side: str):
        """Level-transition blocks (up, local, down) for one homogeneous side.

        Levels are blocks of ``block_size`` consecutive lattice states; with
        jumps bounded by the block size every transition moves at most one
        level, giving the QBD block-tridiagonal structure.
        """
        rates = self.pos_rates if side == "pos" else self.neg_rates
        b = self.block_size
        up = np.zeros((b, b))
        local = np.zeros((b, b))
        down = np.zeros((b, b))
        for i in range(b):
            total = 0.0
            for jump, rate in rates.items():
                dl, ph = divmod(i + jump, b)
                {1: up, 0: local, -1: down}[dl][i, ph] += rate
                total += rate
            local[i, i] -= total
        return up, local, down

    def truncated_generator(self, nmax: int):
        """Sparse generator on lattice states -nmax..nmax.

        Jumps that would overshoot the truncation boundary are redirected to
        the boundary state, preserving zero row sums; the stationary
        distribution has geometric tails, so the redirection washes out as
        nmax grows.
        """
        states = np.arange(-nmax, nmax + 1)
        pos_mask = states > 0
        rows, cols, vals = [], [], []
        for regime_mask, rates in ((pos_mask, self.pos_rates),
                                   (~pos_mask, self.neg_rates)):
            src = states[regime_mask]
            for jump, rate in rates.items():
                dst = np.clip(src + jump, -nmax, nmax)
                moved = dst != src
                rows.append(src[moved] + nmax)
                cols.append(dst[moved] + nmax)
                vals.append(np.full(moved.sum(), rate))
                # balance the diagonal for every attempted jump that moved
                rows.append(src[moved] + nmax)
                cols.append(src[moved] + nmax)
                vals.append(np.full(moved.sum(), -rate))
        size = 2 * nmax + 1
        gen = coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(size, size))
        gen.sum_duplicates()
        return gen.tocsr()


class BusyPeriodMoments(NamedTuple):
    mean: float
    second_moment: float
    variance: float


@dataclass(frozen=True)
class FtspSummary:
    """Averaging quantities of the FTSP at one fluid state."""

    delta_plus: float
    delta_minus: float
    recurrent: bool
    pi12: float
    et1: float | None
    et2: float | None
    var_t1: float | None
    var_t2: float | None
    sigma2: float | None
    method: str

    def to_dict(self) -> dict:
        return {
            "delta_plus": self.delta_plus, "delta_minus": self.delta_minus,
            "recurrent": self.recurrent, "pi12": self.pi12,
            "et1": self.et1, "et2": self.et2,
            "var_t1": self.var_t1, "var_t2": self.var_t2,
            "sigma2": self.sigma2, "method": self.method,
        }


@dataclass(frozen=True)
class FtspMcStats:
    """Monte Carlo summary of one simulated FTSP path.

    ``sigma2`` is the headline asymptotic-variance estimate: for r = 1 it is
    the variance of the centered integral over regeneration-cycle batches
    divided by the mean cycle length (unbiased); otherwise it equals
    ``sigma2_time_batches``, the classical fixed-length batch-means value,
    which carries an O(1/batch_length) bias.
    """

    time_avg_positive: float
    sigma2: float
    sigma2_time_batches: float
    n_batches: int
    batch_length: float
    n_cycles: int
    horizon: float
    seed: int

    @property
    def time_avg_stderr(self) -> float:
        """Standard error of the time average, from the sigma2 estimate."""
        return math.sqrt(self.sigma2 / self.horizon)


# ---------------------------------------------------------------------------
# rate construction
# ---------------------------------------------------------------------------

def _pool2_rate(p: ModelParams, z12: float) -> float:
    return p.mu12 * z12 + p.mu22 * (p.m2 - z12)


def ftsp_rates(p: ModelParams, gamma: FluidState):
    """Jump rates of D(gamma, .); BD rates for r = 1, a QbdModel otherwise.

    The rates are the instantaneous transition rates of the pre-limit chain
    at state n*gamma (pools full, no class-2 agents in pool 1), divided by n
    and classified by their effect on the queue difference.
    """
    gamma.validate(p)
    pool2 = _pool2_rate(p, gamma.z12)
    down1 = p.theta1 * gamma.q1 + p.mu11 * p.m1          # class-1 events down
    up1 = p.lambda1                                       # class-1 arrival
    up2 = p.theta2 * gamma.q2                             # class-2 abandonment
    down2 = p.lambda2                                     # class-2 arrival
    if p.r == 1:
        return FtspRates(
            lam1=up1 + up2,
            mu1=down1 + down2 + pool2,
            lam2=down1 + down2,
            mu2=up1 + up2 + pool2,
        )
    return _lattice(p, gamma)


def _lattice(p: ModelParams, gamma: FluidState) -> QbdModel:
    """QbdModel for any rational r (including r = 1, for cross-checks)."""
    j, k = p.r.numerator, p.r.denominator
    pool2 = _pool2_rate(p, gamma.z12)
    down1 = p.theta1 * gamma.q1 + p.mu11 * p.m1
    pos, neg = {}, {}

    def add(d, jump, rate):
        if rate > 0.0:
            d[jump] = d.get(jump, 0.0) + rate

    # positive regime: every completion takes the head of queue 1
    add(pos, +k, p.lambda1)
    add(pos, -k, down1 + pool2)
    add(pos, +j, p.theta2 * gamma.q2)
    add(pos, -j, p.lambda2)
    # non-positive regime: pool-2 completions take the head of queue 2
    add(neg, +k, p.lambda1)
    add(neg, -k, down1)
    add(neg, +j, p.theta2 * gamma.q2 + pool2)
    add(neg, -j, p.lambda2)
    return QbdModel(j=j, k=k, pos_rates=pos, neg_rates=neg)


def drift_rates(model) -> tuple[float, float]:
    """Regime drifts (delta_plus, delta_minus) in original D units.

    delta_plus is the mean velocity of D in the positive region;
    delta_minus the mean velocity in the non-positive region, so
    delta_minus > 0 means drift back toward the positive region.
    """
    if isinstance(model, FtspRates):
        return model.lam1 - model.mu1, model.mu2 - model.lam2
    d_plus = sum(jump * rate for jump, rate in model.pos_rates.items()) / model.k
    d_minus = sum(jump * rate for jump, rate in model.neg_rates.items()) / model.k
    return d_plus, d_minus


def is_positive_recurrent(p: ModelParams, gamma: FluidState) -> bool:
    """Drift test: strictly toward the boundary from both sides."""
    d_plus, d_minus = drift_rates(ftsp_rates(p, gamma))
    return d_plus < 0.0 and d_minus > 0.0


# ---------------------------------------------------------------------------
# busy periods (r = 1)
# ---------------------------------------------------------------------------

def busy_period_moments(lam: float, mu: float) -> BusyPeriodMoments:
    """First two moments of an M/M/1 busy period.

    E[T] = m/(1-rho) and E[T^2] = 2 m^2/(1-rho)^3 with m = 1/mu, rho = lam/mu.
    """
    if lam >= mu:
        raise ValueError(f"busy period requires lam < mu, got {lam} >= {mu}")
    m = 1.0 / mu
    rho = lam / mu
    mean = m / (1.0 - rho)
    second = 2.0 * m * m / (1.0 - rho) ** 3
    return BusyPeriodMoments(mean, second, second - mean * mean)


# ---------------------------------------------------------------------------
# pi12
# ---------------------------------------------------------------------------

def pi_12(p: ModelParams, gamma: FluidState, method: str = "auto") -> float:
    """Stationary probability that the FTSP is positive.

    For r = 1 this is the alternating-renewal ratio E[T1]/(E[T1]+E[T2]) of
    the two busy-period means; for general rational r it is the mass of the
    QBD stationary distribution on lattice states > 0.  Degenerate states
    (not positive recurrent) return exactly 0.0 or 1.0 according to the
    escape direction.

    ``method``: "auto" (busy periods for r = 1, else matrix-geometric),
    "matrix_geometric", or "truncated".
    """
    model = ftsp_rates(p, gamma)
    d_plus, d_minus = drift_rates(model)
    if not (d_plus < 0.0 and d_minus > 0.0):
        # delta_minus >= delta_plus always, so the escape direction is
        # unambiguous except at the measure-zero double-null boundary.
        return 1.0 if d_plus >= 0.0 else 0.0
    if method == "auto":
        method = "busy_period" if isinstance(model, FtspRates) else "matrix_geometric"
    if method == "busy_period":
        if not isinstance(model, FtspRates):
            raise ValueError("busy-period form only applies when r = 1")
        et1 = busy_period_moments(model.lam1, model.mu1).mean
        et2 = busy_period_moments(model.lam2, model.mu2).mean
        return et1 / (et1 + et2)
    lattice = model if isinstance(model, QbdModel) else _lattice(p, gamma)
    if method == "matrix_geometric":
        return _pi_matrix_geometric(lattice)
    if method == "truncated":
        return _pi_truncated(lattice)
    raise ValueError(f"unknown pi12 method {method!r}")


def pi_12_stationary(p: ModelParams, z12_star: float) -> float:
    """pi12 at a stationary fluid point, in closed form.

    pi* = mu12 z* / (mu12 z* + mu22 (m2 - z*)): the fraction of pool-2
    completion work attached to class-1 customers.
    """
    if not 0.0 <= z12_star <= p.m2:
        raise ValueError(f"z12_star must lie in [0, m2]: {z12_star}")
    num = p.mu12 * z12_star
    den = num + p.mu22 * (p.m2 - z12_star)
    return num / den


def _stationary_truncated(lattice: QbdModel, nmax: int) -> np.ndarray:
    gen = lattice.truncated_generator(nmax)
    size = 2 * nmax + 1
    a = gen.T.tolil()
    a[size - 1, :] = 1.0   # replace one balance equation by normalization
    rhs = np.zeros(size)
    rhs[-1] = 1.0
    return spsolve(a.tocsr(), rhs)


def _pi_truncated(lattice: QbdModel, tol: float = 1e-10,
                  n0: int = 64, nmax_cap: int = 8192) -> float:
    """Positive mass of the stationary law, truncation doubled to convergence."""
    nmax = n0
    prev = None
    change = math.inf
    while nmax <= nmax_cap:
        dist = _stationary_truncated(lattice, nmax)
        val = dist[nmax + 1:].sum()
        if prev is not None:
            change = abs(val - prev)
            if change < tol:
                return val
        prev = val
        nmax *= 2
    raise RuntimeError("truncated stationary solve did not converge "
                       f"(last radius {nmax // 2}, change {change:.2e})")


def _mg_rate_matrix(a0, a1, a2, tol=1e-14, itmax=200000) -> np.ndarray:
    """Minimal solution R of A0 + R A1 + R^2 A2 = 0 by fixed-point iteration."""
    a1_inv = np.linalg.inv(a1)
    r = np.zeros_like(a0)
    for _ in range(itmax):
        r_next = -(a0 + r @ r @ a2) @ a1_inv
        if np.max(np.abs(r_next - r)) < tol:
            return r_next
        r = r_next
    raise RuntimeError("matrix-geometric iteration did not converge")


def _pi_matrix_geometric(lattice: QbdModel) -> float:
    """Positive mass via level-geometric stationary structure.

    Level l holds lattice states {l*b+1, ..., l*b+b}; levels >= 0 are the
    positive side, levels <= -1 the non-positive side.  On each side the
    chain is level-homogeneous, so pi_l = pi_0 Rp^l upward and
    pi_{-1-m} = pi_{-1} Rm^m downward; the two boundary levels are obtained
    from their balance equations plus normalization.
    """
    b = lattice.block_size
    a0, a1, a2 = lattice.blocks("pos")     # up / local / down, positive side
    c0, c1, c2 = lattice.blocks("neg")     # up (toward 0) / local / down (away)
    rp = _mg_rate_matrix(a0, a1, a2)
    rm = _mg_rate_matrix(c2, c1, c0)       # roles swapped: "away" is downward
    # balance at levels -1 and 0, unknown row vector u = [pi_{-1}, pi_0]
    m = np.zeros((2 * b, 2 * b))
    m[:b, :b] = c1 + rm @ c0
    m[b:, :b] = a2
    m[:b, b:] = c0
    m[b:, b:] = a1 + rp @ a2
    # u @ m = 0: take the null vector of m^T
    _, _, vt = np.linalg.svd(m.T)
    u = vt[-1]
    if u.sum() < 0.0:   # sign of the SVD null vector is arbitrary
        u = -u
    pim1, pi0 = u[:b], u[b:]
    eye = np.eye(b)
    w_neg = pim1 @ np.linalg.solve(eye - rm, np.ones(b))
    w_pos = pi0 @ np.linalg.solve(eye - rp, np.ones(b))
    return float(w_pos / (w_pos + w_neg))


# ---------------------------------------------------------------------------
# asymptotic variance
# ---------------------------------------------------------------------------

def asymptotic_variance(p: ModelParams, gamma: FluidState,
                        method: str = "poisson_numeric", *,
                        horizon: float = 2.0e6, seed: int = 20240901,
                        batch_length: float = 1000.0,
                        tol: float = 1e-6) -> float:
    """Asymptotic variance sigma2(gamma) of the centered positivity indicator.

    Methods:

    * ``"paper_r1"``: Var(T1) / (E[T1] + E[T2]) -- the closed form the
      reference arithmetic uses for r = 1, retained verbatim so that its
      numbers can be reproduced exactly;
    * ``"regenerative"``: Var((1-pi) T1 - pi T2) / (E[T1] + E[T2]), the
      regenerative-cycle formula with independent busy periods (r = 1);
    * ``"poisson_numeric"``: 2 * sum_i pi_i (f_i - pi) g_i with g solving the
      Poisson equation G g = -(f - pi) on a truncated lattice, truncation
      doubled until the value changes by less than ``tol``.  Works for any
      rational r and is the default;
    * ``"monte_carlo"``: estimate from a simulated path -- variance of the
      centered integral over regeneration-cycle batches for r = 1, fixed
      time batches otherwise (see :func:`simulate_ftsp`).

    The first two formulas disagree; the numeric and Monte Carlo routes agree
    with ``regenerative``, which is therefore the one to trust when the value
    itself matters (``paper_r1`` exists for reproducing reference numbers).
    """
    model = ftsp_rates(p, gamma)
    d_plus, d_minus = drift_rates(model)
    if not (d_plus < 0.0 and d_minus > 0.0):
        raise ValueError("asymptotic variance requires a positive recurrent state")
    if method in ("paper_r1", "regenerative"):
        if not isinstance(model, FtspRates):
            raise ValueError(f"{method} requires r = 1")
        bp1 = busy_period_moments(model.lam1, model.mu1)
        bp2 = busy_period_moments(model.lam2, model.mu2)
        cycle = bp1.mean + bp2.mean
        if method == "paper_r1":
            return bp1.variance / cycle
        pi = bp1.mean / cycle
        var_y = (1.0 - pi) ** 2 * bp1.variance + pi ** 2 * bp2.variance
        return var_y / cycle
    if method == "poisson_numeric":
        lattice = model if isinstance(model, QbdModel) else _lattice(p, gamma)
        return _sigma2_poisson(lattice, tol=tol)
    if method == "monte_carlo":
        stats = simulate_ftsp(p, gamma, horizon=horizon, seed=seed,
                              batch_length=batch_length)
        return stats.sigma2
    raise ValueError(f"unknown sigma2 method {method!r}")


def _sigma2_poisson_at(lattice: QbdModel, nmax: int) -> float:
    size = 2 * nmax + 1
    gen = lattice.truncated_generator(nmax)
    dist = _stationary_truncated(lattice, nmax)
    f = np.zeros(size)
    f[nmax + 1:] = 1.0
    fbar = f - dist @ f
    # solve G g = -fbar, anchored by g(0) = 0 (state 0 is index nmax)
    gg = gen.tolil()
    rhs = -fbar.copy()
    gg[:, nmax] = 0.0
    gg[nmax, :] = 0.0
    gg[nmax, nmax] = 1.0
    rhs[nmax] = 0.0
    g = spsolve(gg.tocsr(), rhs)
    return float(2.0 * np.sum(dist * fbar * g))


def _sigma2_poisson(lattice: QbdModel, tol: float = 1e-6,
                    n0: int = 64, nmax_cap: int = 8192) -> float:
    nmax = n0
    prev = None
    change = math.inf
    while nmax <= nmax_cap:
        val = _sigma2_poisson_at(lattice, nmax)
        if prev is not None:
            change = abs(val - prev)
            if change < tol:
                return val
        prev = val
        nmax *= 2
    raise RuntimeError("Poisson-equation truncation did not converge "
                       f"(last radius {nmax // 2}, change {change:.2e})")


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

def _busy_period_batch(lam: float, mu: float, count: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Durations of ``count`` independent M/M/1 busy periods, vectorized.

    Walkers start at level 1; each step draws an Exp(lam+mu) holding time and
    moves up with probability lam/(lam+mu).  Finished walkers are compacted
    away so total work is proportional to the total number of events.
    """
    total = lam + mu
    p_up = lam / total
    durations = np.zeros(count)
    level = np.ones(count, dtype=np.int64)
    alive = np.arange(count)
    while alive.size:
        k = alive.size
        durations[alive] += rng.exponential(1.0 / total, size=k)
        level[alive] += np.where(rng.random(k) < p_up, 1, -1)
        alive = alive[level[alive] > 0]
    return durations


def simulate_ftsp(p: ModelParams, gamma: FluidState, horizon: float,
                  seed: int, batch_length: float = 1000.0) -> FtspMcStats:
    """Simulate D(gamma, .) from state 0 and summarize it.

    Returns the time average of 1{D > 0}, a batch-means estimate of the
    asymptotic variance, and the number of completed boundary cycles.
    Deterministic for a given seed.

    For r = 1 the path only matters through its alternating excursion
    durations (below / above the boundary), which are independent busy
    periods; those are sampled directly, vectorized.  Other ratios fall back
    to event-by-event simulation of the lattice walk.
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    model = ftsp_rates(p, gamma)
    rng = np.random.default_rng(seed)
    bd_recurrent = (isinstance(model, FtspRates)
                    and model.mu1 > model.lam1 and model.mu2 > model.lam2)
    if bd_recurrent:
        spent = 0.0
        # starting at the boundary state 0, the first excursion is a T2
        segs_t2, segs_t1 = [], []
        mean_cycle = (1.0 / (model.mu1 - model.lam1)
                      + 1.0 / (model.mu2 - model.lam2))
        chunk = max(1024, int(1.1 * horizon / mean_cycle / 2) + 64)
        while spent < horizon:
            t2 = _busy_period_batch(model.lam2, model.mu2, chunk, rng)
            t1 = _busy_period_batch(model.lam1, model.mu1, chunk, rng)
            segs_t2.append(t2)
            segs_t1.append(t1)
            spent += float(t2.sum() + t1.sum())
        t2 = np.concatenate(segs_t2)
        t1 = np.concatenate(segs_t1)
        # alternating timeline T2, T1, T2, T1, ...
        durations = np.empty(t1.size + t2.size)
        durations[0::2] = t2
        durations[1::2] = t1
        positive = np.zeros_like(durations)
        positive[1::2] = t1
        ends = np.cumsum(durations)
        pos_cum = np.concatenate([[0.0], np.cumsum(positive)])
        starts = ends - durations

        def pos_time_at(t: float) -> float:
            i = int(np.searchsorted(ends, t, side="left"))
            base = pos_cum[i]
            if i % 2 == 1:  # inside a positive stretch
                base += t - starts[i]
            return base

        total_pos = pos_time_at(horizon)
        n_cycles = int(np.searchsorted(ends[1::2], horizon, side="right"))
        sigma2_cycles = None
        if n_cycles >= 2:
            tau = t2[:n_cycles] + t1[:n_cycles]
            y_c = t1[:n_cycles] - (total_pos / horizon) * tau
            sigma2_cycles = float(y_c.var(ddof=1) / tau.mean())
    else:
        # general rational r, or a transient state: walk the lattice directly
        lattice = model if isinstance(model, QbdModel) else _lattice(p, gamma)
        total_pos, pos_time_at, n_cycles = _simulate_lattice(lattice, horizon, rng)
        sigma2_cycles = None

    n_batches = int(horizon // batch_length)
    if n_batches < 2:
        raise ValueError("horizon too short for the requested batch length")
    pi_hat = total_pos / horizon
    edges = batch_length * np.arange(n_batches + 1)
    pos_at_edges = np.array([pos_time_at(t) for t in edges])
    y = np.diff(pos_at_edges) - pi_hat * batch_length
    sigma2_tb = float(np.sum(y * y) / ((n_batches - 1) * batch_length))
    return FtspMcStats(time_avg_positive=pi_hat,
                       sigma2=sigma2_cycles if sigma2_cycles is not None else sigma2_tb,
                       sigma2_time_batches=sigma2_tb,
                       n_batches=n_batches, batch_length=batch_length,
                       n_cycles=n_cycles, horizon=horizon, seed=seed)


def _simulate_lattice(lattice: QbdModel, horizon: float,
                      rng: np.random.Generator):
    """Event-by-event walk on the k*D lattice; used for r != 1."""
    pos_jumps = sorted(lattice.pos_rates.items())
    neg_jumps = sorted(lattice.neg_rates.items())
    pos_total = sum(r for _, r in pos_jumps)
    neg_total = sum(r for _, r in neg_jumps)
    state = 0
    t = 0.0
    change_times = [0.0]       # times at which the sign of the state changes
    sign_positive = [False]    # sign on [change_times[i], change_times[i+1])
    cycles = 0
    buf = rng.random(1 << 15)
    bi = 0
    log = math.log
    while t < horizon:
        if bi >= buf.size - 2:
            buf = rng.random(1 << 15)
            bi = 0
        if state > 0:
            jumps, total = pos_jumps, pos_total
        else:
            jumps, total = neg_jumps, neg_total
        t += -log(1.0 - buf[bi]) / total
        u = buf[bi + 1] * total
        bi += 2
        acc = 0.0
        for jump, rate in jumps:
            acc += rate
            if u < acc:
                new_state = state + jump
                break
        else:
            new_state = state + jumps[-1][0]
        if (new_state > 0) != (state > 0):
            change_times.append(min(t, horizon))
            sign_positive.append(new_state > 0)
            if new_state > 0:
                cycles += 1
        state = new_state
    times = np.array(change_times + [horizon])
    pos_flags = np.array(sign_positive, dtype=float)
    seg = np.diff(times)
    pos_cum = np.concatenate([[0.0], np.cumsum(seg * pos_flags)])

    def pos_time_at(x: float) -> float:
        i = int(np.searchsorted(times, x, side="right") - 1)
        i = min(i, seg.size - 1)
        return pos_cum[i] + (x - times[i]) * pos_flags[i]

    return pos_time_at(horizon), pos_time_at, cycles


# ---------------------------------------------------------------------------
# summary
# ---------------------------------------------------------------------------

def ftsp_summary(p: ModelParams, gamma: FluidState,
                 sigma2_method: str = "poisson_numeric", **sigma2_kwargs) -> FtspSummary:
    """Bundle the per-state averaging quantities into one record."""
    model = ftsp_rates(p, gamma)
    d_plus, d_minus = drift_rates(model)
    recurrent = d_plus < 0.0 and d_minus > 0.0
    pi = pi_12(p, gamma)
    et1 = et2 = vt1 = vt2 = None
    if isinstance(model, FtspRates) and recurrent:
        bp1 = busy_period_moments(model.lam1, model.mu1)
        bp2 = busy_period_moments(model.lam2, model.mu2)
        et1, vt1 = bp1.mean, bp1.variance
        et2, vt2 = bp2.mean, bp2.variance
    sigma2 = None
    if recurrent:
        sigma2 = asymptotic_variance(p, gamma, sigma2_method, **sigma2_kwargs)
    return FtspSummary(delta_plus=d_plus, delta_minus=d_minus,
                       recurrent=recurrent, pi12=pi,
                       et1=et1, et2=et2, var_t1=vt1, var_t2=vt2,
                       sigma2=sigma2, method=sigma2_method)
