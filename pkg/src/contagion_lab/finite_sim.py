"""Finite-network simulation of dynamic default contagion.

Banks hold geometric Brownian external assets marked to market, owe each
other at constant rates, and default the first time their balance-sheet
capital turns nonpositive.  A default shocks every creditor instantly; if
the shock pushes further banks under, the whole instantaneous cascade is
resolved round by round before time moves on.  The resolution implemented
here selects the outcome with the fewest defaults, which a brute-force
clearing oracle can verify on small systems.

Internally every bank is tracked through two numbers: the log of its marked
assets and its effective liability (net liabilities plus accumulated
default losses).  The distance-to-default is their log-ratio whenever the
effective liability is positive; banks with nonpositive effective liability
cannot default and carry an infinite distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .feedback import FeedbackSpec
from .network import LiabilityNetwork
from .rngstreams import (
    CommonNoisePath,
    TAG_IDIOSYNCRATIC,
    brownian_common_path,
    philox_stream,
)


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class PiecewiseConstant:
    """Right-continuous piecewise-constant function of time."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size == 0:
            raise ValueError("times and values must be matching nonempty 1-d arrays")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("breakpoints must start at 0 and increase")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def const(cls, value: float) -> "PiecewiseConstant":
        return cls(np.array([0.0]), np.array([float(value)]))

    @property
    def is_constant(self) -> bool:
        return self.values.size == 1

    def __call__(self, t: float) -> float:
        ix = int(np.searchsorted(self.times, t, side="right")) - 1
        return float(self.values[max(ix, 0)])

    def integral(self, a: float, b: float) -> float:
        if b < a:
            return -self.integral(b, a)
        edges = np.concatenate([[a], self.times[(self.times > a) & (self.times < b)], [b]])
        mids = 0.5 * (edges[:-1] + edges[1:])
        vals = np.array([self(m) for m in mids])
        return float(np.sum(vals * np.diff(edges)))


def _as_pw(x) -> PiecewiseConstant:
    return x if isinstance(x, PiecewiseConstant) else PiecewiseConstant.const(float(x))


@dataclass(frozen=True)
class BankParams:
    """Per-bank coefficients of the asset and liability dynamics.

    ``rho`` (common-noise loading) and ``r2`` (post-default recovery rate)
    must be shared by all banks in one simulation.  A nonpositive
    ``net_liability_rate`` is legal but leaves the bank without a defined
    distance-to-default until counterparty losses accumulate.
    """

    x0: float
    mu: PiecewiseConstant | float
    sigma: PiecewiseConstant | float
    net_liability_rate: float
    rho: float
    r2: float
    horizon: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mu", _as_pw(self.mu))
        object.__setattr__(self, "sigma", _as_pw(self.sigma))
        if self.x0 <= 0:
            raise ValueError("initial external assets must be positive")
        if not -1.0 < self.rho < 1.0:
            raise ValueError("common-noise loading must lie in (-1, 1)")
        if not 0.0 <= self.r2 <= 1.0:
            raise ValueError("recovery rate must lie in [0, 1]")
        if np.any(self.sigma.values < 0):
            raise ValueError("volatility must be nonnegative")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")


def bank_params_from_network(net: LiabilityNetwork, x0, mu, sigma, rho: float, r2: float) -> list[BankParams]:
    """One BankParams per bank, net liability rates read off the network.
    Scalar coefficients broadcast to all banks."""
    lam = net.net_liability_rates()
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (net.n,))
    mus = mu if isinstance(mu, (list, tuple)) else [mu] * net.n
    sigmas = sigma if isinstance(sigma, (list, tuple)) else [sigma] * net.n
    return [
        BankParams(
            x0=float(x0[i]), mu=mus[i], sigma=sigmas[i],
            net_liability_rate=float(lam[i]), rho=rho, r2=r2, horizon=net.horizon,
        )
        for i in range(net.n)
    ]


@dataclass(frozen=True)
class SimConfig:
    dt: float
    horizon: float
    seed: int = 0
    common_seed: int = 0
    common_path: CommonNoisePath | None = None

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0:
            raise ValueError("dt and horizon must be positive")
        steps = round(self.horizon / self.dt)
        if steps < 1 or abs(steps * self.dt - self.horizon) > 1e-9 * self.horizon:
            raise ValueError("dt must divide the horizon")

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.dt)


# ---------------------------------------------------------------------------
# state and reports


@dataclass
class SystemState:
    """Snapshot of the interacting system at one instant (left limits when
    used during cascade resolution).

    ``X`` may contain ``inf`` for banks whose effective liability is
    nonpositive.  ``channel_g_integrals`` holds the k history integrals of
    g against the channel losses; the per-bank feedback integrals are their
    combinations through the exposure columns.
    """

    t: float
    X: np.ndarray
    alive: np.ndarray
    losses: np.ndarray                 # (k,) channel losses
    feedback_integrals: np.ndarray     # (n,) integral of g d(felt loss), per bank
    default_times: np.ndarray
    u: np.ndarray                      # (n, k) contribution loadings
    v: np.ndarray                      # (k, n) exposure loadings
    channel_g_integrals: np.ndarray | None = None

    def __post_init__(self):
        if self.channel_g_integrals is None:
            self.channel_g_integrals = np.zeros(self.losses.shape)

    @property
    def n(self) -> int:
        return self.X.size


@dataclass
class CascadeReport:
    """Rounds of one instantaneous cascade and the implied loss jumps.

    ``round_jumps[m]`` is the per-bank felt jump once rounds 0..m have
    defaulted; it is nondecreasing in m because defaults only accumulate.
    """

    time: float
    rounds: list[np.ndarray]
    round_jumps: list[np.ndarray]
    final_jumps: np.ndarray

    @property
    def defaulted(self) -> np.ndarray:
        if not self.rounds:
            return np.zeros(0, dtype=int)
        return np.sort(np.concatenate(self.rounds))

    def round_of(self, bank: int) -> int:
        for m, r in enumerate(self.rounds):
            if bank in r:
                return m
        return -1

    def to_jsonable(self) -> dict:
        return {
            "time": self.time,
            "rounds": [np.asarray(r).tolist() for r in self.rounds],
            "round_jumps": [np.asarray(j).tolist() for j in self.round_jumps],
            "final_jumps": np.asarray(self.final_jumps).tolist(),
        }


@dataclass
class Trajectory:
    grid: np.ndarray
    X_paths: np.ndarray          # (n_steps + 1, n), absorbed at default
    K_paths: np.ndarray
    default_times: np.ndarray
    cascade_reports: list[CascadeReport]
    felt_loss_paths: np.ndarray  # (n_steps + 1, n) cumulative felt losses
    seed_manifest: dict


# ---------------------------------------------------------------------------
# pointwise formulas


def capital(t: float, x_t: float, params: BankParams, defaulted=()) -> float:
    """Mark-to-market capital: marked assets minus total net liabilities
    minus the unrecovered remainder of obligations from banks defaulted by
    time t.  ``defaulted`` lists (default_time, rate_owed_to_this_bank)."""
    T = params.horizon
    marked = x_t * math.exp(params.mu.integral(t, T))
    loss = sum((T - tau) * lam_ji for tau, lam_ji in defaulted)
    return marked - params.net_liability_rate * T - (1.0 - params.r2) * loss


def to_distance(x_t: float, t: float, params: BankParams, feedback_integral: float) -> float:
    """Logarithmic distance-to-default.

    ``feedback_integral`` is the integral of (1 - s/T) against the felt
    loss process up to t.  The sign of the result agrees with the sign of
    the capital at the same state.
    """
    if x_t <= 0:
        raise ValueError("external assets must be positive")
    T = params.horizon
    marked = x_t * math.exp(params.mu.integral(t, T))
    denom = T * (params.net_liability_rate + (1.0 - params.r2) * feedback_integral)
    if denom <= 0:
        raise ValueError("effective liability is nonpositive; distance undefined")
    return math.log(marked / denom)


# ---------------------------------------------------------------------------
# cascade machinery


def _f_family(feedback: FeedbackSpec, z: np.ndarray, params: np.ndarray) -> np.ndarray:
    """Evaluate the F family elementwise, treating non-finite per-bank
    parameters as 'never shiftable' (their shift is zero; those banks carry
    an infinite distance anyway)."""
    p = np.broadcast_to(params, z.shape)
    ok = np.isfinite(p)
    safe = np.where(ok, p, 0.0)
    out = feedback._f_scalar(z, safe)
    return np.where(ok, out, 0.0)


def theta_shift(t: float, jump_value: float, v: np.ndarray, state: SystemState,
                feedback: FeedbackSpec, bank: int | None = None) -> float:
    """Downward shift of a v-type distance-to-default implied by a felt loss
    jump of ``jump_value`` at time t, on top of the losses already absorbed."""
    prior = float(np.asarray(v, dtype=float) @ state.channel_g_integrals)
    g_t = float(feedback.g(t))
    p = np.asarray(feedback.f_param, dtype=float)
    param = p if p.ndim == 0 else (p[bank] if bank is not None else p)
    val = _f_family(feedback, np.array([prior + g_t * jump_value, prior]), np.asarray(param))
    return float(val[0] - val[1])


def _theta_all(t: float, jumps: np.ndarray, state: SystemState, feedback: FeedbackSpec) -> np.ndarray:
    prior = state.v.T @ state.channel_g_integrals
    g_t = float(feedback.g(t))
    p = np.asarray(feedback.f_param, dtype=float)
    return _f_family(feedback, prior + g_t * jumps, p) - _f_family(feedback, prior, p)


def xi_map(t: float, jumps: np.ndarray, target_v: np.ndarray, state: SystemState,
           feedback: FeedbackSpec) -> float:
    """Additional loss a target_v-type bank feels if every alive bank whose
    left-limit distance lies at or below its implied shift defaults.
    Monotone in the candidate jumps."""
    theta = _theta_all(t, np.asarray(jumps, dtype=float), state, feedback)
    hit = state.alive & (state.X <= theta)
    channel = state.u[hit].sum(axis=0) / state.n
    return float(np.asarray(target_v, dtype=float) @ channel)


def _felt_jump(state: SystemState, defaulted: np.ndarray) -> np.ndarray:
    """Per-bank loss jump when the flagged set defaults (rates the
    defaulters owe each bank, recombined through the channels)."""
    channel = state.u[defaulted].sum(axis=0) / state.n
    return state.v.T @ channel


def resolve_cascade(state: SystemState, feedback: FeedbackSpec) -> CascadeReport:
    """Resolve an instantaneous cascade from the left-limit state.

    Round zero defaults every alive bank at or under the boundary; each
    later round defaults the alive banks pushed under by the shifts the
    previous rounds imply.  Stops at the first empty round, a fixed point
    of the jump map, after at most n rounds.  The surviving set is the
    largest consistent one (fewest defaults).
    """
    alive = state.alive
    d0 = np.nonzero(alive & (state.X <= 0.0))[0]
    if d0.size == 0:
        return CascadeReport(time=state.t, rounds=[], round_jumps=[],
                             final_jumps=np.zeros(state.n))
    rounds = [d0]
    defaulted = np.zeros(state.n, dtype=bool)
    defaulted[d0] = True
    jumps = _felt_jump(state, defaulted)
    round_jumps = [jumps]
    for _ in range(state.n):
        theta = _theta_all(state.t, jumps, state, feedback)
        new = np.nonzero(alive & ~defaulted & (state.X - theta <= 0.0))[0]
        if new.size == 0:
            break
        rounds.append(new)
        defaulted[new] = True
        jumps = _felt_jump(state, defaulted)
        round_jumps.append(jumps)
    return CascadeReport(time=state.t, rounds=rounds, round_jumps=round_jumps,
                         final_jumps=jumps)


def greatest_clearing_oracle(state: SystemState, feedback: FeedbackSpec,
                             max_banks: int = 20) -> np.ndarray:
    """Brute-force clearing check: enumerate every default set among the
    alive banks and return the smallest consistent one.

    A set D is consistent when every member sits at or below the shift its
    defaults imply and every alive non-member sits strictly above.  By
    monotonicity of the shifts the smallest consistent set is unique and
    matches the round-by-round cascade resolution.
    """
    alive_ix = np.nonzero(state.alive)[0]
    c = alive_ix.size
    if c > max_banks:
        raise ValueError(f"oracle enumeration refused for {c} alive banks (max {max_banks})")
    prior = state.v.T @ state.channel_g_integrals
    g_t = float(feedback.g(state.t))
    p = np.asarray(feedback.f_param, dtype=float)
    f_prior = _f_family(feedback, prior, p)
    u_alive = state.u[alive_ix]

    best = None
    best_count = 0
    chunk = 1 << 14
    total = 1 << c
    bits = np.arange(c, dtype=np.uint64)
    for start in range(0, total, chunk):
        masks_int = np.arange(start, min(start + chunk, total), dtype=np.uint64)
        masks = (masks_int[:, None] >> bits) & np.uint64(1)  # (M, c) membership
        channel = (masks.astype(float) @ u_alive) / state.n    # (M, k)
        felt = channel @ state.v                               # (M, n)
        theta = _f_family(feedback, prior + g_t * felt, p) - f_prior
        under = (state.X - theta) <= 0.0                       # (M, n)
        under_alive = under[:, alive_ix]
        member = masks.astype(bool)
        consistent = np.all(~member | under_alive, axis=1) & np.all(member | ~under_alive, axis=1)
        for row in np.nonzero(consistent)[0]:
            members = alive_ix[member[row]]
            if best is None or members.size < best.size:
                best, best_count = members, 1
            elif members.size == best.size and not np.array_equal(members, best):
                best_count += 1
    if best is None:
        raise RuntimeError("no consistent default set exists; state is inconsistent")
    if best_count > 1:
        raise RuntimeError("clearing oracle found two minimal consistent sets")
    return best


# ---------------------------------------------------------------------------
# simulation


def simulate(
    network: LiabilityNetwork,
    params: list[BankParams],
    config: SimConfig,
    feedback: FeedbackSpec | None = None,
) -> Trajectory:
    """Simulate the interacting default system on a uniform grid.

    Log asset increments are exact for piecewise-constant coefficients, so
    only default timing carries the O(sqrt(dt)) grid bias.  Whenever an
    alive bank's distance reaches zero at a grid time, the left-limit state
    is frozen and the instantaneous cascade is resolved before stepping on.
    Identical seeds reproduce the trajectory bit for bit.
    """
    n = network.n
    if len(params) != n:
        raise ValueError("need one BankParams per bank")
    T = config.horizon
    if abs(network.horizon - T) > 1e-12 * max(T, 1.0):
        raise ValueError("network horizon and simulation horizon disagree")
    r2 = params[0].r2
    rho = params[0].rho
    for p in params:
        if p.r2 != r2 or p.rho != rho:
            raise ValueError("recovery rate and common-noise loading must be systemwide")
        if abs(p.horizon - T) > 1e-12 * max(T, 1.0):
            raise ValueError("bank horizon and simulation horizon disagree")
    if feedback is not None and feedback.f_name != "log1p_scaled":
        raise ValueError(
            "the capital system prescribes the log feedback; general maps "
            "apply to the cascade operations, not to simulate()"
        )

    lam = np.array([p.net_liability_rate for p in params])
    mu_int = np.array([p.mu.integral(0.0, T) for p in params])
    a = np.log([p.x0 for p in params]) + mu_int  # log marked assets
    defaultable = lam > 0
    bound = np.where(defaultable, np.log(np.where(defaultable, lam * T, 1.0)), -np.inf)
    if np.any(a[defaultable] <= bound[defaultable]):
        bad = np.nonzero(defaultable & (a <= bound))[0]
        raise ValueError(f"banks {bad.tolist()} start at or under the default boundary")

    n_steps = config.n_steps
    grid = np.linspace(0.0, T, n_steps + 1)
    rng = philox_stream(config.seed, TAG_IDIOSYNCRATIC)
    dB = rng.standard_normal((n_steps, n)) * math.sqrt(config.dt)
    if config.common_path is not None:
        dB0 = config.common_path.increments(grid)
    else:
        dB0 = brownian_common_path(config.common_seed, grid).increments(grid)

    # per-step volatilities, exact for breakpoints aligned with the grid
    sig = np.empty((n_steps, n))
    for i, p in enumerate(params):
        if p.sigma.is_constant:
            sig[:, i] = p.sigma.values[0]
        else:
            sig[:, i] = [p.sigma(t) for t in grid[:-1]]

    e_base = lam * T
    feedback_int = np.zeros(n)     # per-bank integral of (1 - s/T) d(felt loss)
    felt_total = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    default_times = np.full(n, np.inf)
    rates = network.rates

    X_paths = np.empty((n_steps + 1, n))
    K_paths = np.empty((n_steps + 1, n))
    felt_paths = np.empty((n_steps + 1, n))
    reports: list[CascadeReport] = []

    def distances():
        e = e_base + T * (1.0 - r2) * feedback_int
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(e > 0, a - np.log(np.where(e > 0, e, 1.0)), np.inf)

    def record(k, fresh_mask):
        e = e_base + T * (1.0 - r2) * feedback_int
        X_paths[k] = distances()
        K_paths[k] = np.exp(a) - e
        felt_paths[k] = felt_total
        if k > 0:
            frozen = ~alive & ~fresh_mask
            X_paths[k, frozen] = X_paths[k - 1, frozen]
            K_paths[k, frozen] = K_paths[k - 1, frozen]

    def settle_defaults(t_now):
        """Detect boundary hits at t_now and resolve the full cascade on the
        effective-liability scale (valid for any sign of net liabilities)."""
        nonlocal feedback_int
        if not np.any(alive & (distances() <= 0.0)):
            return None, np.zeros(n, dtype=bool)
        rounds = []
        round_jumps = []
        defaulted_now = np.zeros(n, dtype=bool)
        felt = np.zeros(n)
        g_t = 1.0 - t_now / T
        while True:
            e_cand = e_base + T * (1.0 - r2) * (feedback_int + g_t * felt)
            with np.errstate(divide="ignore", invalid="ignore"):
                x_cand = np.where(e_cand > 0, a - np.log(np.where(e_cand > 0, e_cand, 1.0)), np.inf)
            new = np.nonzero(alive & ~defaulted_now & (x_cand <= 0.0))[0]
            if new.size == 0:
                break
            rounds.append(new)
            defaulted_now[new] = True
            felt = rates[defaulted_now].sum(axis=0)
            round_jumps.append(felt.copy())
        if not rounds:
            return None, defaulted_now
        alive[defaulted_now] = False
        default_times[defaulted_now] = t_now
        feedback_int = feedback_int + g_t * felt
        felt_total[:] += felt
        report = CascadeReport(time=t_now, rounds=rounds, round_jumps=round_jumps,
                               final_jumps=felt)
        return report, defaulted_now

    record(0, np.zeros(n, dtype=bool))

    for k in range(n_steps):
        s = sig[k]
        dW = rho * dB0[k] + math.sqrt(1.0 - rho * rho) * dB[k]
        a[alive] += -0.5 * s[alive] ** 2 * config.dt + s[alive] * dW[alive]
        if not np.all(np.isfinite(a[alive])):
            raise FloatingPointError(f"non-finite log assets at step {k + 1}")
        report, fresh = settle_defaults(grid[k + 1])
        if report is not None:
            reports.append(report)
        record(k + 1, fresh)

    manifest = {
        "seed": config.seed,
        "common_seed": config.common_seed,
        "dt": config.dt,
        "horizon": T,
        "n_steps": n_steps,
        "used_external_common_path": config.common_path is not None,
    }
    return Trajectory(
        grid=grid,
        X_paths=X_paths,
        K_paths=K_paths,
        default_times=default_times,
        cascade_reports=reports,
        felt_loss_paths=felt_paths,
        seed_manifest=manifest,
    )


def empirical_losses(traj: Trajectory, fac) -> np.ndarray:
    """Piecewise-constant channel loss paths of a trajectory: channel l at
    time t holds the sum of u_jl / n over banks defaulted by t."""
    n = traj.default_times.size
    defaults = traj.default_times[None, :] <= traj.grid[:, None] + 1e-15
    return defaults.astype(float) @ fac.U / n
