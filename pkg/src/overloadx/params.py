"""Parameter set of the overloaded X model and its many-server scaling.

The model has two customer classes and two server pools.  Class-i customers
arrive at rate lambda_i, abandon from queue at rate theta_i each, and are
served by a pool-j agent at rate mu_ij.  Pool j holds m_j agents.  Sharing
(class-1 customers served in pool 2, or vice versa) is governed by the
queue-ratio parameters r12, r21 and by activation thresholds; at fluid scale
the thresholds are expressed through the offsets kappa12, kappa21.

The ratio parameters are kept as exact rationals: the queue-difference
process analyzed in :mod:`overloadx.ftsp` lives on a lattice whose geometry
is j/k in lowest terms, and a floating-point ratio would corrupt it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction


def _as_ratio(value) -> Fraction:
    """Coerce a ratio given as Fraction, int, or a strict "j/k" string."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        parts = value.split("/")
        if len(parts) != 2:
            raise ValueError(
                f"ratio must be written as 'j/k' with integer j, k; got {value!r}"
            )
        try:
            num, den = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValueError(
                f"ratio must be written as 'j/k' with integer j, k; got {value!r}"
            ) from None
        return Fraction(num, den)
    raise TypeError(f"cannot interpret {value!r} as an exact ratio")


def _round_half_up(x: float) -> int:
    """Nearest integer, ties rounded up. Fixed once for reproducibility."""
    return math.floor(x + 0.5)


@dataclass(frozen=True)
class ModelParams:
    """Fluid-scale parameters of the X model.

    Attributes:
        lambda1, lambda2: arrival rates (customers per unit time).
        theta1, theta2: abandonment rates (per waiting customer per unit time).
        mu11, mu12, mu21, mu22: service rates; mu_ij is the rate at which one
            pool-j agent serves a class-i customer.
        m1, m2: pool capacities (agents, fluid scale).
        r12, r21: queue-ratio parameters, exact rationals with r12 >= r21.
        kappa12, kappa21: fluid-scale threshold offsets (>= 0).  kappa = 0
            corresponds to sublinearly scaled thresholds that vanish at fluid
            scale.
    """

    lambda1: float
    lambda2: float
    theta1: float
    theta2: float
    mu11: float
    mu12: float
    mu21: float
    mu22: float
    m1: float = 1.0
    m2: float = 1.0
    r12: Fraction = field(default=Fraction(1))
    r21: Fraction = field(default=Fraction(1))
    kappa12: float = 0.0
    kappa21: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "r12", _as_ratio(self.r12))
        object.__setattr__(self, "r21", _as_ratio(self.r21))
        for name in ("lambda1", "lambda2", "theta1", "theta2",
                     "mu11", "mu12", "mu21", "mu22", "m1", "m2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.r12 <= 0 or self.r21 <= 0:
            raise ValueError("queue ratios must be positive rationals")
        if self.r12 < self.r21:
            raise ValueError("queue ratios must satisfy r12 >= r21")
        if self.kappa12 < 0 or self.kappa21 < 0:
            raise ValueError("threshold offsets must be non-negative")

    @property
    def r(self) -> Fraction:
        """The active sharing ratio r12 (class 1 receiving help)."""
        return self.r12

    @property
    def kappa(self) -> float:
        return self.kappa12

    def with_kappa12(self, kappa: float) -> "ModelParams":
        return replace(self, kappa12=kappa)

    # --- JSON config schema -------------------------------------------------

    @classmethod
    def from_config_dict(cls, d: dict) -> "ModelParams":
        """Build from the config mapping used by the CLI.

        Expected shape::

            {"lambda": [1.3, 0.9], "theta": [0.2, 0.2],
             "mu": [[1.0, 0.8], [0.8, 1.0]], "m": [1.0, 1.0],
             "r12": "1/1", "r21": "1/1", "kappa12": 0.1, "kappa21": 0.1}

        Ratios must be strings "j/k"; unknown keys are rejected.
        """
        known = {"lambda", "theta", "mu", "m", "r12", "r21", "kappa12", "kappa21"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"params: unknown keys {sorted(unknown)}")
        missing = {"lambda", "theta", "mu", "m"} - set(d)
        if missing:
            raise ValueError(f"params: missing keys {sorted(missing)}")
        lam = d["lambda"]
        theta = d["theta"]
        mu = d["mu"]
        m = d["m"]
        for name, v, length in (("lambda", lam, 2), ("theta", theta, 2), ("m", m, 2)):
            if not isinstance(v, (list, tuple)) or len(v) != length:
                raise ValueError(f"params.{name}: expected a list of {length} numbers")
        if (not isinstance(mu, (list, tuple)) or len(mu) != 2
                or any(not isinstance(row, (list, tuple)) or len(row) != 2 for row in mu)):
            raise ValueError("params.mu: expected a 2x2 matrix [[mu11,mu12],[mu21,mu22]]")
        ratios = {}
        for key in ("r12", "r21"):
            if key in d:
                if not isinstance(d[key], str):
                    raise ValueError(f"params.{key}: ratio must be a string 'j/k'")
                try:
                    ratios[key] = _as_ratio(d[key])
                except ValueError as exc:
                    raise ValueError(f"params.{key}: {exc}") from None
        return cls(
            lambda1=float(lam[0]), lambda2=float(lam[1]),
            theta1=float(theta[0]), theta2=float(theta[1]),
            mu11=float(mu[0][0]), mu12=float(mu[0][1]),
            mu21=float(mu[1][0]), mu22=float(mu[1][1]),
            m1=float(m[0]), m2=float(m[1]),
            r12=ratios.get("r12", Fraction(1)),
            r21=ratios.get("r21", ratios.get("r12", Fraction(1))),
            kappa12=float(d.get("kappa12", 0.0)),
            kappa21=float(d.get("kappa21", d.get("kappa12", 0.0))),
        )

    def to_config_dict(self) -> dict:
        return {
            "lambda": [self.lambda1, self.lambda2],
            "theta": [self.theta1, self.theta2],
            "mu": [[self.mu11, self.mu12], [self.mu21, self.mu22]],
            "m": [self.m1, self.m2],
            "r12": f"{self.r12.numerator}/{self.r12.denominator}",
            "r21": f"{self.r21.numerator}/{self.r21.denominator}",
            "kappa12": self.kappa12,
            "kappa21": self.kappa21,
        }


@dataclass(frozen=True)
class OfferedLoad:
    """Traffic intensities and isolated stationary fluid queues.

    qa_i is the stationary fluid queue of class i when the pools do not help
    each other: qa_i = (lambda_i - mu_ii * m_i)^+ / theta_i.
    """

    rho1: float
    rho2: float
    qa1: float
    qa2: float


@dataclass(frozen=True)
class OverloadVerdict:
    """Result of the overload test (class 1 more overloaded).

    Condition 1: theta1*qa1 > mu12*m2*(1-rho2)^+  (pool 2 gets overloaded once
    it helps).  Condition 2: qa1 > r12*qa2 (class 1 is the one needing help).
    Margins are left-hand side minus right-hand side.
    """

    cond1: bool
    cond2: bool
    margin1: float
    margin2: float

    @property
    def overloaded(self) -> bool:
        return self.cond1 and self.cond2


@dataclass(frozen=True)
class ScaledSystem:
    """Parameters of the n-th pre-limit system.

    Pool sizes and thresholds are integer counts; the arrival intensities
    are exactly n times the fluid rates (a Poisson rate need not be an
    integer, and rounding it shifts small systems visibly).
    """

    n: int
    lambda1n: float
    lambda2n: float
    m1n: int
    m2n: int
    k12n: int
    k21n: int
    parent: ModelParams

    @property
    def kappa_eff(self) -> float:
        """Realized fluid-scale threshold offset k12n / n."""
        return self.k12n / self.n

    def total_service_capacity(self) -> float:
        return self.parent.mu11 * self.m1n + self.parent.mu22 * self.m2n


def offered_loads(p: ModelParams) -> OfferedLoad:
    """Per-pool traffic intensities and isolated fluid queues."""
    rho1 = p.lambda1 / (p.m1 * p.mu11)
    rho2 = p.lambda2 / (p.m2 * p.mu22)
    qa1 = max(p.lambda1 - p.mu11 * p.m1, 0.0) / p.theta1
    qa2 = max(p.lambda2 - p.mu22 * p.m2, 0.0) / p.theta2
    return OfferedLoad(rho1=rho1, rho2=rho2, qa1=qa1, qa2=qa2)


def check_overload(p: ModelParams) -> OverloadVerdict:
    """Check the two overload conditions; returns a verdict, never raises."""
    ol = offered_loads(p)
    lhs1 = p.theta1 * ol.qa1
    rhs1 = p.mu12 * p.m2 * max(1.0 - ol.rho2, 0.0)
    lhs2 = ol.qa1
    rhs2 = float(p.r12) * ol.qa2
    return OverloadVerdict(
        cond1=lhs1 > rhs1,
        cond2=lhs2 > rhs2,
        margin1=lhs1 - rhs1,
        margin2=lhs2 - rhs2,
    )


def scale(p: ModelParams, n: int, threshold_scheme: str = "proportional",
          c: float | None = None, a: float | None = None) -> ScaledSystem:
    """Produce the n-th system.

    Pool sizes are rounded to the nearest integer (ties up), which keeps the
    rounding error o(sqrt(n)); arrival rates scale exactly.  Thresholds
    follow ``threshold_scheme``:

    * ``"proportional"``: k_n = ceil(kappa * n), the choice that makes
      different system sizes directly comparable;
    * ``"sublinear"``: k_n = ceil(c * n**a) with 1/2 < a < 1, the regime the
      limit theory assumes.
    """
    if n < 1:
        raise ValueError("scale parameter n must be >= 1")
    if threshold_scheme == "proportional":
        k12n = math.ceil(p.kappa12 * n)
        k21n = math.ceil(p.kappa21 * n)
    elif threshold_scheme == "sublinear":
        if c is None or a is None:
            raise ValueError("sublinear thresholds need both c and a")
        if not 0.5 < a < 1.0:
            raise ValueError("sublinear exponent must satisfy 1/2 < a < 1")
        k12n = k21n = math.ceil(c * n ** a)
    else:
        raise ValueError(f"unknown threshold scheme {threshold_scheme!r}")
    return ScaledSystem(
        n=n,
        lambda1n=n * p.lambda1,
        lambda2n=n * p.lambda2,
        m1n=_round_half_up(n * p.m1),
        m2n=_round_half_up(n * p.m2),
        k12n=k12n,
        k21n=k21n,
        parent=p,
    )
