"""Gaussian refinement of the fluid limit: time changes, BOU, covariances.

The diffusion-scale limit of (total queue, class-1 content of pool 2) is
driven by independent Brownian motions run through seven deterministic time
changes (cumulative integrals along the fluid path).  When the fluid sits at
its stationary point the limit is a bivariate Ornstein-Uhlenbeck process,
whose steady-state covariance is available in closed form and from a
2x2 Lyapunov equation; both are implemented and must agree.

Two internal inconsistencies of the reference constants are surfaced rather
than hidden, each behind an explicit flag:

* ``sigma2_method``: which asymptotic-variance formula feeds the xi2 / gamma2
  terms (see :func:`overloadx.ftsp.asymptotic_variance`); reproducing the
  reference arithmetic requires ``"paper_r1"``, the numerically validated
  value is ``"regenerative"`` / ``"poisson_numeric"``.
* ``psi_convention``: the service-mix weight is mu22 (m2 - z12) + mu12 z12
  (``"plus"``, the form consistent with the martingale decomposition) while
  the reference worked example uses the minus combination (``"paper-sec10"``).

No silent defaults: both flags are mandatory in every operation where they
matter, and every report carries them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .params import ModelParams, scale
from .ftsp import FluidState, asymptotic_variance
from .fluid import FluidPath, stationary_point, integrate_fluid

__all__ = [
    "TimeChanges", "BouModel", "SteadyStateCov", "OuParams", "GaussianApprox",
    "psi_mix", "time_changes", "bou_matrices", "steady_state_covariance",
    "solve_lyapunov", "sde_drift_matrix", "transient_covariance",
    "pool_dependent_reduction", "gaussian_queue_approx",
]

PSI_CONVENTIONS = ("plus", "paper-sec10")
SIGMA2_METHODS = ("paper_r1", "regenerative", "poisson_numeric", "monte_carlo")


def psi_mix(p: ModelParams, z12, convention: str = "plus"):
    """Pool-2 service mix weight entering the FTSP noise terms."""
    if convention == "plus":
        return p.mu22 * (p.m2 - z12) + p.mu12 * z12
    if convention == "paper-sec10":
        return p.mu22 * (p.m2 - z12) - p.mu12 * z12
    raise ValueError(f"unknown psi convention {convention!r}")


def queue_split(p: ModelParams) -> tuple[float, float]:
    """Diffusion-scale queue weights (p1, p2) = (r, 1)/(1+r)."""
    r = float(p.r12)
    return r / (1.0 + r), 1.0 / (1.0 + r)


@dataclass(frozen=True)
class TimeChanges:
    """The seven deterministic Brownian time changes along a fluid path.

    All are nondecreasing and start at zero.  gamma1 carries arrivals,
    abandonments and pool-1 completions; phi_i2 / gamma_i2 split the pool-2
    completion streams by routing regime; gamma2 and gamma3 carry the
    fast-process noise with and without the psi weight.
    """

    t: np.ndarray
    gamma1: np.ndarray
    phi12: np.ndarray
    phi22: np.ndarray
    gamma12: np.ndarray
    gamma22: np.ndarray
    gamma2: np.ndarray
    gamma3: np.ndarray
    psi: np.ndarray
    sigma2: np.ndarray
    sigma2_method: str
    psi_convention: str

    def all_functions(self) -> dict:
        return {"gamma1": self.gamma1, "phi12": self.phi12,
                "phi22": self.phi22, "gamma12": self.gamma12,
                "gamma22": self.gamma22, "gamma2": self.gamma2,
                "gamma3": self.gamma3}


@dataclass(frozen=True)
class BouModel:
    """Drift and diffusion matrices of the stationary-fluid OU limit."""

    M: np.ndarray
    S: np.ndarray
    xi1: float
    xi12: float
    xi22: float
    eta12: float
    eta22: float
    xi2: float
    xi3: float
    xi4: float
    xi5: float
    p1: float
    p2: float
    z12_star: float
    pi_star: float
    sigma2_method: str
    psi_convention: str

    @property
    def V(self) -> np.ndarray:
        return self.S @ self.S.T


@dataclass(frozen=True)
class SteadyStateCov:
    """Steady-state covariance of (qs-hat, z12-hat) with its named addends."""

    var_qs: float
    var_z: float
    cov_qz: float
    q1_addend: float
    q2_addend: float
    z1_addend: float
    z2_addend: float
    std_qs: float
    std_q1: float
    std_q2: float

    def matrix(self) -> np.ndarray:
        return np.array([[self.var_qs, self.cov_qz],
                         [self.cov_qz, self.var_z]])


@dataclass(frozen=True)
class OuParams:
    """One-dimensional reductions under pool-dependent service rates."""

    eta1: float
    eta2: float
    nu: float
    t: np.ndarray
    gamma1_tilde: np.ndarray
    gamma2_tilde: np.ndarray


@dataclass(frozen=True)
class GaussianApprox:
    """Gaussian steady-state approximation for the n-th system."""

    n: int
    kappa_eff: float
    mean_q1: float
    mean_q2: float
    mean_qs: float
    mean_z12: float
    std_q1: float
    std_q2: float
    std_qs: float
    std_z12: float
    sigma2_method: str
    psi_convention: str


class _Sigma2Cache:
    """sigma2(x) along a path, recomputed only when x moves more than tol."""

    def __init__(self, p: ModelParams, method: str, tol: float = 1e-4):
        self.p = p
        self.method = method
        self.tol = tol
        self._state = None
        self._value = None

    def __call__(self, arr) -> float:
        if (self._state is not None
                and np.max(np.abs(arr - self._state)) <= self.tol):
            return self._value
        value = asymptotic_variance(self.p, FluidState(*arr), self.method)
        self._state = np.array(arr)
        self._value = value
        return value


def _integrand_rows(p: ModelParams, path: FluidPath, sigma2_method: str,
                    psi_convention: str):
    """Pointwise derivatives of the seven time changes along the path."""
    p1, p2 = queue_split(p)
    q1, q2, z = path.q1, path.q2, path.z12
    pi = path.pi
    qs = q1 + q2
    cache = _Sigma2Cache(p, sigma2_method)
    sig = np.array([cache(s) for s in path.states])
    psi = psi_mix(p, z, psi_convention)
    rows = {
        "gamma1": (p.lambda1 + p.lambda2 + p.m1 * p.mu11)
                  + (p1 * p.theta1 + p2 * p.theta2) * qs,
        "phi12": p.mu12 * (1.0 - pi) * z,
        "phi22": p.mu22 * pi * (p.m2 - z),
        "gamma12": p.mu12 * pi * z,
        "gamma22": p.mu22 * (1.0 - pi) * (p.m2 - z),
        "gamma2": psi * psi * sig,
        "gamma3": sig,
    }
    return rows, psi, sig


def _cumtrapz(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


def time_changes(p: ModelParams, path: FluidPath, sigma2_method: str,
                 psi_convention: str = "plus") -> TimeChanges:
    """Trapezoidal cumulative integrals of the seven time-change integrands."""
    if path.pi is None or len(path.pi) != len(path.t):
        raise ValueError("path must carry a pi value per step")
    rows, psi, sig = _integrand_rows(p, path, sigma2_method, psi_convention)
    cum = {name: _cumtrapz(vals if isinstance(vals, np.ndarray)
                           else np.full_like(path.t, vals), path.t)
           for name, vals in rows.items()}
    return TimeChanges(t=path.t, gamma1=cum["gamma1"], phi12=cum["phi12"],
                       phi22=cum["phi22"], gamma12=cum["gamma12"],
                       gamma22=cum["gamma22"], gamma2=cum["gamma2"],
                       gamma3=cum["gamma3"], psi=psi, sigma2=sig,
                       sigma2_method=sigma2_method,
                       psi_convention=psi_convention)


def bou_matrices(p: ModelParams, x_star: FluidState | None = None, *,
                 sigma2_method: str, psi_convention: str) -> BouModel:
    """Drift matrix M and diffusion matrix S at the stationary fluid point.

    All entries follow the stationary specialization of the time changes:
    the xi / eta constants are their slopes, S11^2 sums to 2(lambda1+lambda2)
    exactly, and the off-diagonal S entries vanish because the two pool-2
    completion streams balance at stationarity.
    """
    sp = stationary_point(p)
    if x_star is None:
        x_star = sp.as_state()
    z = x_star.z12
    if not 0.0 < z < p.m2:
        raise ValueError("stationary z12 must be interior to (0, m2)")
    p1, p2 = queue_split(p)
    pi_star = sp.pi_star
    mix_plus = p.mu12 * z + p.mu22 * (p.m2 - z)
    sigma2 = asymptotic_variance(p, x_star, sigma2_method)
    psi = psi_mix(p, z, psi_convention)
    xi1 = 2.0 * (p.lambda1 + p.lambda2) - mix_plus
    xi12 = p.mu12 * pi_star * z
    xi22 = p.mu22 * (1.0 - pi_star) * (p.m2 - z)
    eta12 = p.mu12 * (1.0 - pi_star) * z
    eta22 = p.mu22 * pi_star * (p.m2 - z)
    xi2 = psi * psi * sigma2
    xi4 = 2.0 * p.mu12 * p.mu22 * z * (p.m2 - z) / mix_plus
    m11 = -(p1 * p.theta1 + p2 * p.theta2)
    m12 = p.mu22 - p.mu12
    m22 = -p.mu12 * p.mu22 * p.m2 * z / mix_plus
    xi5 = m12 / abs(m11 + m22)
    s = np.array([
        [math.sqrt(xi1 + xi12 + xi22 + eta12 + eta22), 0.0],
        [0.0, math.sqrt(xi2 + xi4)],
    ])
    m = np.array([[m11, m12], [0.0, m22]])
    return BouModel(M=m, S=s, xi1=xi1, xi12=xi12, xi22=xi22, eta12=eta12,
                    eta22=eta22, xi2=xi2, xi3=sigma2, xi4=xi4, xi5=xi5,
                    p1=p1, p2=p2, z12_star=z, pi_star=pi_star,
                    sigma2_method=sigma2_method, psi_convention=psi_convention)


def steady_state_covariance(model: BouModel) -> SteadyStateCov:
    """Closed-form steady-state covariance of the OU limit.

    Computed in the order var_z -> cov_qz -> var_qs, which is how the
    triangular drift matrix decouples the Lyapunov equation.
    """
    m11, m12 = model.M[0, 0], model.M[0, 1]
    m22 = model.M[1, 1]
    if m11 >= 0.0 or m22 >= 0.0:
        raise ValueError("drift matrix must be stable")
    z1 = model.xi4 / (2.0 * abs(m22))
    z2 = model.xi2 / (2.0 * abs(m22))
    var_z = z1 + z2
    cov_qz = model.xi5 * var_z
    q1 = model.S[0, 0] ** 2 / (2.0 * abs(m11))
    q2 = m12 * cov_qz / abs(m11)
    var_qs = q1 + q2
    std_qs = math.sqrt(var_qs)
    return SteadyStateCov(var_qs=var_qs, var_z=var_z, cov_qz=cov_qz,
                          q1_addend=q1, q2_addend=q2,
                          z1_addend=z1, z2_addend=z2,
                          std_qs=std_qs,
                          std_q1=model.p1 * std_qs,
                          std_q2=model.p2 * std_qs)


def solve_lyapunov(M: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Stationary covariance from M Sigma + Sigma M^T = -V."""
    eig = np.linalg.eigvals(M)
    if np.any(eig.real >= 0.0):
        raise ValueError(f"drift matrix is not stable: eigenvalues {eig}")
    return scipy.linalg.solve_continuous_lyapunov(M, -np.asarray(V))


def sde_drift_matrix(p: ModelParams, pi: float) -> np.ndarray:
    """Instantaneous drift matrix of the diffusion-scale pair.

    Rows follow the two drift integrands of the limit equations:
    the total queue relaxes at the split-weighted abandonment rate and feels
    z12-hat through mu22 - mu12; z12-hat relaxes at
    (mu22 - mu12) pi + mu12 = pi mu22 + (1 - pi) mu12.

    At a stationary point the (2,2) entry equals -mu12 mu22 m2 / mix_plus,
    which differs from the M22 entry of :func:`bou_matrices` (that one is
    kept in its reference form, for reproducing that arithmetic chain).
    """
    p1, p2 = queue_split(p)
    return np.array([
        [-(p1 * p.theta1 + p2 * p.theta2), p.mu22 - p.mu12],
        [0.0, -((p.mu22 - p.mu12) * pi + p.mu12)],
    ])


def transient_covariance(p: ModelParams, path: FluidPath, sigma0: np.ndarray,
                         T: float | None = None, *, sigma2_method: str,
                         psi_convention: str) -> tuple[np.ndarray, np.ndarray]:
    """Covariance of the diffusion pair along the fluid path.

    Integrates dSigma/dt = A(t) Sigma + Sigma A(t)^T + V(t) by RK4, where
    A(t) is :func:`sde_drift_matrix` at pi(x(t)) and V(t) assembles the
    time-change derivatives:

    * variance rate of qs-hat: gamma1' + gamma12' + gamma22' + phi12' + phi22'
    * variance rate of z12-hat: phi12' + phi22' + gamma2'
    * covariance rate: phi12' - phi22' (the two shared pool-2 streams enter
      the queue equation negatively and the z12 equation with opposite signs).

    Returns times and an (n, 2, 2) array of covariance matrices.
    """
    sigma0 = np.asarray(sigma0, dtype=float)
    eig = np.linalg.eigvalsh(0.5 * (sigma0 + sigma0.T))
    if np.any(eig < -1e-12):
        raise ValueError("initial covariance must be positive semidefinite")
    rows, _, _ = _integrand_rows(p, path, sigma2_method, psi_convention)
    g1 = np.broadcast_to(rows["gamma1"], path.t.shape)
    v11 = g1 + rows["gamma12"] + rows["gamma22"] + rows["phi12"] + rows["phi22"]
    v22 = rows["phi12"] + rows["phi22"] + rows["gamma2"]
    v12 = rows["phi12"] - rows["phi22"]
    pis = path.pi
    t = path.t
    if T is not None:
        keep = t <= T + 1e-12
        t = t[keep]
        v11, v22, v12, pis = v11[keep], v22[keep], v12[keep], pis[keep]
    n = len(t)
    out = np.empty((n, 2, 2))
    out[0] = sigma0
    sig = sigma0.copy()

    def rhs(sigma_mat, a_mat, v_mat):
        return a_mat @ sigma_mat + sigma_mat @ a_mat.T + v_mat

    for i in range(n - 1):
        h = t[i + 1] - t[i]
        a0 = sde_drift_matrix(p, pis[i])
        a1 = sde_drift_matrix(p, pis[i + 1])
        am = sde_drift_matrix(p, 0.5 * (pis[i] + pis[i + 1]))
        v0 = np.array([[v11[i], v12[i]], [v12[i], v22[i]]])
        v1 = np.array([[v11[i + 1], v12[i + 1]], [v12[i + 1], v22[i + 1]]])
        vm = 0.5 * (v0 + v1)
        k1 = rhs(sig, a0, v0)
        k2 = rhs(sig + 0.5 * h * k1, am, vm)
        k3 = rhs(sig + 0.5 * h * k2, am, vm)
        k4 = rhs(sig + h * k3, a1, v1)
        sig = sig + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i + 1] = sig
    return t, out


def pool_dependent_reduction(p: ModelParams, path: FluidPath, *,
                             sigma2_method: str,
                             psi_convention: str = "plus") -> OuParams:
    """One-dimensional time changes when both classes share one pool-2 rate.

    With mu12 = mu22 = nu the queue equation decouples:
    qs-hat relaxes at eta2 = p1 theta1 + p2 theta2 with Brownian time change

        gamma1~(t) = 2 (lambda1+lambda2) t + (qs(0) - eta1/eta2)(1 - e^{-eta2 t}),

    the transient term carrying the extra abandonment noise of starting away
    from the stationary level eta1/eta2 (eta1 = lambda1+lambda2 - m1 mu11
    - m2 nu).  The z12 time change keeps the fast-process term:

        gamma2~(t) = nu * int [m2 pi + z12 - 2 pi z12] du + gamma2(t).
    """
    if not math.isclose(p.mu12, p.mu22, rel_tol=0.0, abs_tol=1e-12):
        raise ValueError("pool-dependent reduction requires mu12 == mu22")
    nu = p.mu22
    p1, p2 = queue_split(p)
    eta1 = p.lambda1 + p.lambda2 - p.m1 * p.mu11 - p.m2 * nu
    eta2 = p1 * p.theta1 + p2 * p.theta2
    qs0 = path.qs[0]
    g1t = (2.0 * (p.lambda1 + p.lambda2) * path.t
           + (qs0 - eta1 / eta2) * (1.0 - np.exp(-eta2 * path.t)))
    rows, _, _ = _integrand_rows(p, path, sigma2_method, psi_convention)
    z, pi = path.z12, path.pi
    mix_integrand = nu * (p.m2 * pi + z - 2.0 * pi * z)
    g2t = _cumtrapz(mix_integrand, path.t) + _cumtrapz(rows["gamma2"], path.t)
    return OuParams(eta1=eta1, eta2=eta2, nu=nu, t=path.t,
                    gamma1_tilde=g1t, gamma2_tilde=g2t)


def gaussian_queue_approx(p: ModelParams, n: int, *, sigma2_method: str,
                          psi_convention: str,
                          threshold_scheme: str | None = None) -> GaussianApprox:
    """Gaussian steady-state approximation of the n-th system.

    Means are n times the stationary fluid point; standard deviations are
    sqrt(n) times the diffusion values.  With ``threshold_scheme`` set, the
    stationary point is evaluated at the realized threshold offset
    k_n / n of the integer-rounded system (the n-th system's actual control),
    which matters at small n; with None the fluid-scale kappa is used as is,
    so n = 1 returns the fluid and diffusion values themselves.
    """
    if threshold_scheme is not None:
        kappa_eff = scale(p, n, threshold_scheme).kappa_eff
        p_eff = p.with_kappa12(kappa_eff)
    else:
        kappa_eff = p.kappa12
        p_eff = p
    sp = stationary_point(p_eff)
    model = bou_matrices(p_eff, sigma2_method=sigma2_method,
                         psi_convention=psi_convention)
    cov = steady_state_covariance(model)
    rt = math.sqrt(n)
    return GaussianApprox(
        n=n, kappa_eff=kappa_eff,
        mean_q1=n * sp.q1, mean_q2=n * sp.q2,
        mean_qs=n * (sp.q1 + sp.q2), mean_z12=n * sp.z12,
        std_q1=rt * cov.std_q1, std_q2=rt * cov.std_q2,
        std_qs=rt * cov.std_qs, std_z12=rt * math.sqrt(cov.var_z),
        sigma2_method=sigma2_method, psi_convention=psi_convention)
