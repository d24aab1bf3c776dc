"""Independent oracles used by the tests: closed-form first-passage law of
drifted Brownian motion and randomized cascade states."""

from __future__ import annotations

import math

import numpy as np

from contagion_lab import FeedbackSpec, SystemState


def norm_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def first_passage_prob(x0: float, drift: float, sigma: float, t: float) -> float:
    """P(min_{s<=t} (x0 + drift s + sigma W_s) <= 0) for x0 > 0."""
    if t <= 0.0:
        return 0.0
    sd = sigma * math.sqrt(t)
    return norm_cdf((-x0 - drift * t) / sd) + math.exp(
        -2.0 * drift * x0 / sigma ** 2
    ) * norm_cdf((-x0 + drift * t) / sd)


def first_passage_mixture(x_values, weights, drift, sigma, t) -> float:
    """First-passage probability of a discrete mixture of start points."""
    return float(sum(
        w * first_passage_prob(float(x), drift, sigma, t)
        for x, w in zip(x_values, weights) if w > 0
    ))


def random_cascade_state(rng: np.random.Generator, n: int):
    """Randomized left-limit state with nonnegative exposures; pins a bank
    at the boundary often enough to exercise multi-round cascades."""
    k = int(rng.integers(1, min(n, 4) + 1))
    u = rng.uniform(0.0, 1.5, size=(n, k))
    v = rng.uniform(0.0, 1.5, size=(k, n))
    x = rng.uniform(-0.05, 1.2, size=n)
    if rng.uniform() < 0.7:
        x[int(rng.integers(0, n))] = 0.0
    alive = rng.uniform(size=n) < 0.9
    state = SystemState(
        t=float(rng.uniform(0.0, 0.9)),
        X=x,
        alive=alive,
        losses=rng.uniform(0.0, 0.2, size=k),
        feedback_integrals=np.zeros(n),
        default_times=np.where(alive, np.inf, 0.0),
        u=u,
        v=v,
        channel_g_integrals=rng.uniform(0.0, 0.1, size=k),
    )
    if rng.uniform() < 0.5:
        feedback = FeedbackSpec.linear(float(rng.uniform(0.2, 2.0)), "linear_decay", 1.0)
    else:
        feedback = FeedbackSpec.log1p_scaled(rng.uniform(0.3, 3.0, size=n), "linear_decay", 1.0)
    return state, feedback
