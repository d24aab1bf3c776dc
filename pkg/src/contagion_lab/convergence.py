"""Convergence harness: finite systems against the mean-field limit, and
full networks against their reduced low-rank approximations.

The scaling study grows one block network by multipliers m, simulates each
size with the same common-noise path the density solver consumed, and
measures how fast the per-type empirical loss paths approach the
mean-field ones.  The full/reduced comparison couples two networks through
identical Brownian paths and reports default-time differences.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .finite_sim import BankParams, SimConfig, simulate
from .mean_field import MeanFieldSolver, MFConfig, MixtureSpec, TypeSpec
from .network import BlockSpec, LiabilityNetwork, NoiseSpec, build_block_matrix, scale_network
from .rngstreams import CommonNoisePath, TAG_INITIAL_ASSETS, TAG_NETWORK_NOISE, brownian_common_path, philox_stream


# ---------------------------------------------------------------------------
# loss-path distance


def loss_distance(path_a, path_b, dt: float, horizon: float | None = None) -> float:
    """Discretised Levy-type distance between two paths on a shared grid.

    Minimises sup|a - b(. + h)| + |h| over integer shifts h up to the
    horizon (default 10 dt), evaluating the shifted sup in both
    orientations so the result is exactly symmetric.  Zero iff the paths
    agree pointwise at zero shift.  Paths are extended flat beyond the
    grid, the natural continuation for cumulative loss paths.
    """
    a = np.asarray(path_a, dtype=float)
    b = np.asarray(path_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paths must share one time grid")
    n = a.size
    max_cells = n - 1 if horizon is None else min(n - 1, int(round(horizon / dt)))
    ix = np.arange(n)
    best = np.inf
    for h in range(-max_cells, max_cells + 1):
        shifted = np.clip(ix + h, 0, n - 1)
        back = np.clip(ix - h, 0, n - 1)
        d = max(np.abs(a - b[shifted]).max(), np.abs(a[back] - b).max()) + abs(h) * dt
        if d < best:
            best = d
    return float(best)


# ---------------------------------------------------------------------------
# scaling study


@dataclass(frozen=True)
class StudyTypeParams:
    """Per-type coefficients of a scaling study: initial assets uniform on
    (x0_lo, x0_hi), constant drift and volatility."""

    x0_lo: float
    x0_hi: float
    mu: float
    sigma: float

    def __post_init__(self):
        if not 0 < self.x0_lo < self.x0_hi:
            raise ValueError("need 0 < x0_lo < x0_hi")


@dataclass(frozen=True)
class StudySpec:
    """Base system of a scaling study.

    ``target_net_rates`` pins each type's net liability rate; the societal
    column of every generated network is adjusted per bank so the rate holds
    exactly for every noise draw, keeping the finite systems and the
    mean-field spec on identical liability footing.
    """

    block: BlockSpec
    type_params: tuple[StudyTypeParams, ...]
    target_net_rates: tuple[float, ...]
    r2: float
    rho: float
    horizon: float
    theta: NoiseSpec = field(default_factory=NoiseSpec.dirac)

    def __post_init__(self):
        L = self.block.num_core + len(self.block.groups)
        if len(self.type_params) != L or len(self.target_net_rates) != L:
            raise ValueError("need per-type parameters for every block type")
        if any(r <= 0 for r in self.target_net_rates):
            raise ValueError("target net liability rates must be positive")


@dataclass
class ScalingStudy:
    m_list: list[int]
    seeds_per_m: int
    common_seed: int
    distances: np.ndarray        # (len(m_list), seeds, num_types)
    mf_loss_paths: np.ndarray    # (n_steps + 1, num_types), theta-weighted
    grid: np.ndarray

    def mean_distance(self) -> np.ndarray:
        """Per-m mean over seeds of the across-type average distance."""
        return self.distances.mean(axis=2).mean(axis=1)

    def standard_error(self) -> np.ndarray:
        per_seed = self.distances.mean(axis=2)
        return per_seed.std(axis=1, ddof=1) / math.sqrt(per_seed.shape[1])

    def loglog_slope(self) -> float:
        """Least-squares slope of log mean distance against log m."""
        x = np.log(np.asarray(self.m_list, dtype=float))
        y = np.log(self.mean_distance())
        return float(np.polyfit(x, y, 1)[0])

    def rows(self):
        for mi, m in enumerate(self.m_list):
            for s in range(self.seeds_per_m):
                yield (m, s, *self.distances[mi, s].tolist())


def _study_mixture(spec: StudySpec) -> MixtureSpec:
    base = build_block_matrix(spec.block, horizon=spec.horizon)
    sizes = spec.block.type_sizes()
    weights = sizes / sizes.sum()
    labels = spec.block.type_labels()
    L = weights.size
    # physically consistent interaction: source weight times pairwise rate
    expo = np.zeros((L, L))
    reps = [np.nonzero(labels == t)[0][0] for t in range(L)]
    for i in range(L):
        for l in range(L):
            expo[i, l] = sizes[i] * base.rates[reps[i], reps[l]]
    types = []
    for t in range(L):
        p = spec.type_params[t]
        lam = spec.target_net_rates[t]
        # exact distance distribution of uniform initial assets
        bnd = lam * spec.horizon * math.exp(-p.mu * spec.horizon)
        if p.x0_lo <= bnd:
            raise ValueError(
                f"type {t}: x0_lo must exceed the boundary asset value {bnd:.6g}"
            )

        def cdf(x, lo=p.x0_lo, hi=p.x0_hi, A=bnd):
            return min(1.0, max(0.0, (A * math.exp(x) - lo) / (hi - lo)))

        types.append(TypeSpec(
            weight=float(weights[t]),
            sigma=p.sigma,
            net_liability_rate=lam,
            mu=p.mu,
            distance_cdf=cdf,
        ))
    return MixtureSpec(
        types=tuple(types),
        horizon=spec.horizon,
        r2=spec.r2,
        rho=spec.rho,
        theta=spec.theta,
        exposure=expo,
    )


def _study_network(spec: StudySpec, m: int, run_seed: int):
    """Grow the base network, draw the type-structured noise (one theta per
    bank scaling its row and column), and pin per-bank net liability rates
    through the societal column."""
    base = build_block_matrix(spec.block, horizon=spec.horizon)
    net = scale_network(base, m)
    labels = np.tile(spec.block.type_labels(), m)
    rng = philox_stream(run_seed, TAG_NETWORK_NOISE)
    theta = spec.theta.sample(net.n, rng)
    rates = net.rates * np.outer(1.0 + theta, 1.0 + theta)
    np.fill_diagonal(rates, 0.0)
    lam_target = np.asarray(spec.target_net_rates, dtype=float)[labels]
    societal = lam_target - (rates.sum(axis=1) - rates.sum(axis=0))
    if np.any(societal < 0):
        raise ValueError(
            "target net liability rates too small to realise with a "
            "nonnegative societal column; raise them"
        )
    noisy = LiabilityNetwork(n=net.n, rates=rates, societal=societal, horizon=spec.horizon)
    return noisy, labels, theta


def _run_one(spec: StudySpec, m: int, seed: int, dt: float, common: CommonNoisePath):
    net, labels, theta = _study_network(spec, m, seed)
    rng_x0 = philox_stream(seed, TAG_INITIAL_ASSETS)
    x0 = np.empty(net.n)
    mus = []
    sigmas = []
    for i in range(net.n):
        p = spec.type_params[labels[i]]
        x0[i] = rng_x0.uniform(p.x0_lo, p.x0_hi)
        mus.append(p.mu)
        sigmas.append(p.sigma)
    params = [
        BankParams(
            x0=float(x0[i]), mu=mus[i], sigma=sigmas[i],
            net_liability_rate=float(spec.target_net_rates[labels[i]]),
            rho=spec.rho, r2=spec.r2, horizon=spec.horizon,
        )
        for i in range(net.n)
    ]
    cfg = SimConfig(dt=dt, horizon=spec.horizon, seed=seed, common_path=common)
    traj = simulate(net, params, cfg)
    L = len(spec.type_params)
    emp = np.zeros((traj.grid.size, L))
    for t in range(L):
        members = np.nonzero(labels == t)[0]
        w = 1.0 + theta[members]
        ind = (traj.default_times[members][None, :] <= traj.grid[:, None] + 1e-15)
        emp[:, t] = (ind * w[None, :]).sum(axis=1) / members.size
    return emp


def run_scaling_study(
    spec: StudySpec,
    m_list,
    seeds_per_m: int,
    dt: float,
    mf_config: MFConfig,
    common_seed: int = 0,
    distance_horizon: float | None = None,
    workers: int = 1,
) -> ScalingStudy:
    """Simulate every (multiplier, seed) pair against one mean-field solve.

    All runs and the density solver share the common-noise path drawn from
    ``common_seed`` on the simulation grid; idiosyncratic draws come from
    per-seed counter streams, so the whole table reruns bit-identically.
    """
    T = spec.horizon
    n_steps = round(T / dt)
    grid = np.linspace(0.0, T, n_steps + 1)
    common = brownian_common_path(common_seed, grid)
    mix = _study_mixture(spec)
    solver = MeanFieldSolver(mix, mf_config)
    out = solver.solve(common)
    mf_on_grid = out.losses_at(grid, weighted=True)
    L = mix.num_types
    m_list = list(m_list)
    dist = np.zeros((len(m_list), seeds_per_m, L))
    jobs = [(mi, s) for mi in range(len(m_list)) for s in range(seeds_per_m)]
    job_fn = _StudyJob(spec, m_list, dt, common, mf_on_grid, distance_horizon)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for mi, s, row in pool.map(job_fn, jobs):
                dist[mi, s] = row
    else:
        for job in jobs:
            mi, s, row = job_fn(job)
            dist[mi, s] = row
    return ScalingStudy(
        m_list=m_list, seeds_per_m=seeds_per_m, common_seed=common_seed,
        distances=dist, mf_loss_paths=mf_on_grid, grid=grid,
    )


class _StudyJob:
    """Picklable per-run worker for process pools."""

    def __init__(self, spec, m_list, dt, common, mf_on_grid, distance_horizon):
        self.spec = spec
        self.m_list = m_list
        self.dt = dt
        self.common = common
        self.mf = mf_on_grid
        self.distance_horizon = distance_horizon

    def __call__(self, job):
        mi, s = job
        emp = _run_one(self.spec, self.m_list[mi], s, self.dt, self.common)
        row = np.array([
            loss_distance(emp[:, t], self.mf[:, t], self.dt, horizon=self.distance_horizon)
            for t in range(emp.shape[1])
        ])
        return mi, s, row


# ---------------------------------------------------------------------------
# full vs reduced networks


@dataclass
class FullReducedReport:
    seeds: list[int]
    norm_diffs: np.ndarray
    survivor_agreement: np.ndarray  # bool per seed
    default_times_full: np.ndarray  # (seeds, n)
    default_times_reduced: np.ndarray

    @property
    def median_norm_diff(self) -> float:
        return float(np.median(self.norm_diffs))

    @property
    def agreement_rate(self) -> float:
        return float(self.survivor_agreement.mean())

    def rows(self):
        for i, s in enumerate(self.seeds):
            yield (s, float(self.norm_diffs[i]), int(self.survivor_agreement[i]))


def compare_full_reduced(
    full: LiabilityNetwork,
    reduced: LiabilityNetwork,
    params_full: list[BankParams],
    params_reduced: list[BankParams],
    seeds,
    dt: float,
    common_seed: int = 0,
) -> FullReducedReport:
    """Simulate both networks under identical Brownian paths seed by seed.

    The reported norm is the Euclidean distance between default-time
    vectors over the banks that default in both runs; survivors are
    excluded from the norm and compared as sets instead.
    """
    if full.n != reduced.n:
        raise ValueError("networks must have equal size")
    T = full.horizon
    seeds = list(seeds)
    n = full.n
    taus_f = np.empty((len(seeds), n))
    taus_r = np.empty((len(seeds), n))
    norms = np.empty(len(seeds))
    agree = np.zeros(len(seeds), dtype=bool)
    for i, seed in enumerate(seeds):
        cfg = SimConfig(dt=dt, horizon=T, seed=seed, common_seed=common_seed + seed)
        tf = simulate(full, params_full, cfg).default_times
        tr = simulate(reduced, params_reduced, cfg).default_times
        taus_f[i] = tf
        taus_r[i] = tr
        both = np.isfinite(tf) & np.isfinite(tr)
        norms[i] = float(np.linalg.norm(tf[both] - tr[both])) if both.any() else 0.0
        agree[i] = bool(np.array_equal(np.isfinite(tf), np.isfinite(tr)))
    return FullReducedReport(
        seeds=seeds, norm_diffs=norms, survivor_agreement=agree,
        default_times_full=taus_f, default_times_reduced=taus_r,
    )
