import os

import numpy as np
from hypothesis import HealthCheck, settings

from delaymargin.model import DelaySystem, norm2

settings.register_profile("default", deadline=None, max_examples=25, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_stable_retarded(rng: np.random.Generator, n: int | None = None, p: int | None = None,
                           delays: int | None = None) -> DelaySystem:
    """A + sum A_j e^{-h_j s} with log-norm(A) + sum ||A_j|| < 0: stable for every delay value."""
    n = n or int(rng.integers(1, 4))
    p = p or int(rng.integers(1, 3))
    k = delays if delays is not None else int(rng.integers(1, 3))
    terms = []
    load = 0.0
    for _ in range(k):
        M = rng.standard_normal((n, n))
        M *= rng.uniform(0.2, 1.0) / norm2(M)
        terms.append((float(rng.uniform(0.2, 2.0)), M))
        load += norm2(M)
    R = rng.standard_normal((n, n))
    lognorm = float(np.max(np.linalg.eigvalsh(0.5 * (R + R.T))))
    A = R - (lognorm + load + rng.uniform(0.3, 1.5)) * np.eye(n)
    B = rng.standard_normal((n, p))
    return DelaySystem(A, B, discrete=terms)
