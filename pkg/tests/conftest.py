import numpy as np
import pytest

from overloadx.params import ModelParams, check_overload
from overloadx.fluid import stationary_point


@pytest.fixture(scope="session")
def base_params() -> ModelParams:
    """The reference scenario: class-1 overload, unit ratio, 0.1 threshold."""
    return ModelParams(lambda1=1.3, lambda2=0.9, theta1=0.2, theta2=0.2,
                       mu11=1.0, mu12=0.8, mu21=0.8, mu22=1.0,
                       m1=1.0, m2=1.0, r12="1/1", r21="1/1",
                       kappa12=0.1, kappa21=0.1)


def random_admissible_params(rng: np.random.Generator, count: int,
                             ratio="1/1", interior_margin: float = 0.02):
    """Sample parameter sets that pass the overload test with interior z*.

    Rejection sampling over a box of rates; kept sets have both overload
    conditions holding, a strictly interior stationary z12, and positive
    stationary queues.
    """
    out = []
    while len(out) < count:
        p = ModelParams(
            lambda1=float(rng.uniform(1.1, 2.2)),
            lambda2=float(rng.uniform(0.5, 1.3)),
            theta1=float(rng.uniform(0.1, 0.6)),
            theta2=float(rng.uniform(0.1, 0.6)),
            mu11=float(rng.uniform(0.7, 1.3)),
            mu12=float(rng.uniform(0.5, 1.1)),
            mu21=float(rng.uniform(0.5, 1.1)),
            mu22=float(rng.uniform(0.7, 1.3)),
            m1=1.0, m2=1.0, r12=ratio, r21=ratio,
            kappa12=float(rng.uniform(0.0, 0.15)),
            kappa21=float(rng.uniform(0.0, 0.15)),
        )
        if not check_overload(p).overloaded:
            continue
        sp = stationary_point(p)
        if not (interior_margin < sp.z12 < p.m2 - interior_margin):
            continue
        if sp.q1 <= 0.01 or sp.q2 <= 0.01:
            continue
        out.append(p)
    return out
