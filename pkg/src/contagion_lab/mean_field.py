"""Mean-field limit of the interbank system: coupled density evolution with
an absorbing boundary, loss-driven transport, common-noise transport, and
instantaneous cascades resolved by a vanishing-shock iteration.

Each bank type carries a density of distances-to-default on the positive
half line.  Mass leaving through the origin is that type's loss; losses
feed back as an extra leftward transport of every exposed type's density.
When the transport becomes self-reinforcing the losses jump: the jump size
is the limit of iterating the loss-response map seeded with a small
artificial shock, over a decreasing schedule of shock sizes.

The solver steps with operator splitting: explicit diffusion plus drift,
then a common-noise shift, then an inner fixed point for the within-step
loss coupling, then absorption at the origin.  All mass bookkeeping is
exact by construction (whatever leaves the grid is added to the losses),
so conservation holds to rounding error; accuracy against the continuum is
governed by dx and dt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .feedback import FeedbackSpec
from .finite_sim import PiecewiseConstant, _as_pw
from .network import NoiseSpec, TypeAtlas, interaction_matrix
from .rngstreams import CommonNoisePath, brownian_common_path

__all__ = [
    "TypeSpec",
    "MixtureSpec",
    "MFConfig",
    "DensityField",
    "MFOutput",
    "MFCascadeResult",
    "MeanFieldSolver",
    "init_density",
    "boundary_asset_value",
    "loss_from_density",
    "check_initial_decay",
    "DecayFit",
    "solve",
    "picard_solve",
]


# ---------------------------------------------------------------------------
# specifications


@dataclass(frozen=True)
class TypeSpec:
    """One component of the type mixture.

    The drift ``b`` acts on the distance-to-default itself; ``None`` selects
    the mark-to-market value -sigma^2/2.  ``mu`` is the asset drift, used
    only to transform an initial asset density into a distance density.
    Exactly one of ``asset_density`` (callable on asset values),
    ``distance_density`` (callable on distances, or a grid array), and
    ``distance_cdf`` (callable cumulative distribution of the initial
    distance; initialised by exact cell averages, which keeps even
    discontinuous densities second-order accurate) must be given.
    """

    weight: float
    sigma: PiecewiseConstant | float
    net_liability_rate: float
    b: PiecewiseConstant | float | None = None
    mu: PiecewiseConstant | float = 0.0
    u_vec: np.ndarray | None = None
    v_vec: np.ndarray | None = None
    asset_density: object = None
    distance_density: object = None
    distance_cdf: object = None

    def __post_init__(self):
        object.__setattr__(self, "sigma", _as_pw(self.sigma))
        object.__setattr__(self, "mu", _as_pw(self.mu))
        if self.b is not None:
            object.__setattr__(self, "b", _as_pw(self.b))
        if self.weight < 0:
            raise ValueError("type weight must be nonnegative")
        given = sum(x is not None for x in
                    (self.asset_density, self.distance_density, self.distance_cdf))
        if given != 1:
            raise ValueError(
                "give exactly one of asset_density, distance_density, distance_cdf"
            )

    def drift(self, t: float) -> float:
        if self.b is None:
            s = self.sigma(t)
            return -0.5 * s * s
        return self.b(t)


@dataclass(frozen=True)
class MixtureSpec:
    """Type mixture, shared noise structure, and feedback constants.

    The exposure matrix (entry (i, l): loss a type-l bank feels per unit
    default proportion of type i) is taken from ``exposure`` when given,
    otherwise computed as w_i * (u_i . v_l) from the principal loading
    pairs.  ``theta`` adds scalar heterogeneity: each bank's loadings are
    scaled by (1 + theta), handled by quadrature over the distribution.
    """

    types: tuple[TypeSpec, ...]
    horizon: float
    r2: float = 0.0
    rho: float = 0.0
    theta: NoiseSpec = None
    theta_quadrature: int = 5
    exposure: np.ndarray | None = None
    feedback: FeedbackSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(self.types))
        if self.theta is None:
            object.__setattr__(self, "theta", NoiseSpec.dirac())
        if self.exposure is not None:
            object.__setattr__(self, "exposure", np.asarray(self.exposure, dtype=float))
        w = np.array([t.weight for t in self.types])
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("type weights must sum to 1")
        if not 0.0 <= self.r2 <= 1.0:
            raise ValueError("recovery rate must lie in [0, 1]")
        if not -1.0 < self.rho < 1.0:
            raise ValueError("common-noise loading must lie in (-1, 1)")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        L = len(self.types)
        if self.exposure is not None and self.exposure.shape != (L, L):
            raise ValueError("exposure matrix must be num_types x num_types")

    @property
    def num_types(self) -> int:
        return len(self.types)

    def exposure_matrix(self) -> np.ndarray:
        if self.exposure is not None:
            return self.exposure
        L = self.num_types
        out = np.zeros((L, L))
        for i, ti in enumerate(self.types):
            for l, tl in enumerate(self.types):
                if ti.u_vec is None or tl.v_vec is None:
                    raise ValueError("need loading vectors or an explicit exposure matrix")
                out[i, l] = ti.weight * float(np.dot(ti.u_vec, tl.v_vec))
        if np.any(out < -1e-12):
            raise ValueError("exposures must be nonnegative")
        return np.maximum(out, 0.0)


def mixture_from_atlas(atlas: TypeAtlas, type_specs, horizon, r2, rho,
                       theta: NoiseSpec | None = None, theta_quadrature: int = 5) -> MixtureSpec:
    """Assemble a MixtureSpec whose exposure matrix matches the finite
    system the atlas came from."""
    return MixtureSpec(
        types=tuple(type_specs),
        horizon=horizon,
        r2=r2,
        rho=rho,
        theta=theta,
        theta_quadrature=theta_quadrature,
        exposure=interaction_matrix(atlas),
    )


@dataclass(frozen=True)
class MFConfig:
    """Discretisation and tolerance knobs of the mean-field solver.

    The shock schedule runs from ``eps0`` down to ``eps_min`` by the decay
    factor.  Both default to grid-proportional values: a shock whose induced
    shift is far below one cell cannot be resolved, so shrinking epsilon
    past the grid scale collapses the cascade map spuriously.
    """

    dx: float
    dt: float
    x_max: float
    eps0: float | None = None
    eps_decay: float = 0.5
    eps_min: float | None = None
    inner_tol: float = 1e-10
    cascade_tol: float = 1e-9
    mass_tol: float = 1e-6
    explosion_threshold: float | None = None
    max_inner: int = 50
    snapshot_times: tuple = ()
    tail_tol: float = 1e-6

    def __post_init__(self):
        for name in ("dx", "dt", "x_max", "eps_decay",
                     "inner_tol", "cascade_tol", "mass_tol", "tail_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("eps0", "eps_min"):
            val = getattr(self, name)
            if val is not None and val <= 0:
                raise ValueError(f"{name} must be positive")
        if self.eps_decay >= 1.0:
            raise ValueError("eps_decay must shrink the shock")
        if self.eps0 is not None and self.eps_min is not None and self.eps_min > self.eps0:
            raise ValueError("eps_min must not exceed eps0")

    @property
    def n_cells(self) -> int:
        return round(self.x_max / self.dx)

    def eps_schedule(self, eps0: float, eps_min: float) -> list[float]:
        out = [eps0]
        while out[-1] * self.eps_decay >= eps_min * (1 - 1e-12):
            out.append(out[-1] * self.eps_decay)
        if out[-1] > eps_min:
            out.append(eps_min)
        return out


# ---------------------------------------------------------------------------
# state


@dataclass
class DensityField:
    """Per-sub-type grid densities and the loss bookkeeping.

    Sub-types are (type, theta-node) pairs; ``q_weights`` are quadrature
    weights within each type (summing to 1 per type).  ``g_integrals`` holds
    the per-type history integral of g against the aggregate felt loss.
    """

    t: float
    x: np.ndarray                 # (J+1,)
    V: np.ndarray                 # (S, J+1)
    type_of: np.ndarray           # (S,)
    thetas: np.ndarray            # (S,)
    q_weights: np.ndarray         # (S,)
    sub_losses: np.ndarray        # (S,)
    g_integrals: np.ndarray       # (L,)

    def copy(self) -> "DensityField":
        return DensityField(
            t=self.t, x=self.x, V=self.V.copy(), type_of=self.type_of,
            thetas=self.thetas, q_weights=self.q_weights,
            sub_losses=self.sub_losses.copy(), g_integrals=self.g_integrals.copy(),
        )

    @property
    def num_types(self) -> int:
        return int(self.type_of.max()) + 1

    def type_losses(self, weighted: bool = False) -> np.ndarray:
        scale = self.q_weights * (1.0 + self.thetas) if weighted else self.q_weights
        out = np.zeros(self.num_types)
        np.add.at(out, self.type_of, scale * self.sub_losses)
        return out

    def type_density(self, l: int, weighted: bool = False) -> np.ndarray:
        mask = self.type_of == l
        scale = self.q_weights * (1.0 + self.thetas) if weighted else self.q_weights
        return (scale[mask, None] * self.V[mask]).sum(axis=0)


def _trap_weights(x: np.ndarray) -> np.ndarray:
    dx = x[1] - x[0]
    w = np.full(x.size, dx)
    w[0] = w[-1] = dx / 2
    return w


def loss_from_density(state: DensityField) -> np.ndarray:
    """Per-type mass unaccounted for on the grid: 1 minus the trapezoidal
    integral of the type density, clipped to [0, 1]."""
    w = _trap_weights(state.x)
    out = np.zeros(state.num_types)
    np.add.at(out, state.type_of, state.q_weights * (state.V @ w))
    return np.clip(1.0 - out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# initial conditions


def boundary_asset_value(net_liability_rate: float, mu_integral: float, horizon: float) -> float:
    """Asset value that maps to distance zero: Lambda * T * exp(-int mu)."""
    return net_liability_rate * horizon * math.exp(-mu_integral)


def init_density(asset_density, net_liability_rate: float, mu, horizon: float,
                 x: np.ndarray, mass_tol: float = 1e-6) -> np.ndarray:
    """Transform an initial asset density into a distance-to-default density
    on the grid: V0(x) = v0(A e^x) A e^x with A the boundary asset value.

    Raises when the transformed density has mass at or below the boundary
    (the asset density must be supported above A) or when it fails to
    integrate to 1 within ``mass_tol`` on the grid.
    """
    mu = _as_pw(mu)
    A = boundary_asset_value(net_liability_rate, mu.integral(0.0, horizon), horizon)
    if A <= 0:
        raise ValueError("boundary asset value must be positive (net liabilities positive)")
    a_below = A * np.exp(np.linspace(-3.0, 0.0, 31))
    if any(asset_density(float(av)) > 0 for av in a_below):
        raise ValueError("asset density has mass at or below the default boundary")
    assets = A * np.exp(x)
    vals = np.array([asset_density(float(av)) for av in assets]) * assets
    if np.any(vals < 0):
        raise ValueError("asset density must be nonnegative")
    mass = float(vals @ _trap_weights(x))
    if abs(mass - 1.0) > mass_tol:
        raise ValueError(
            f"transformed density integrates to {mass:.8f}, not 1 within {mass_tol}; "
            "widen the grid or check the support"
        )
    return vals


@dataclass(frozen=True)
class DecayFit:
    beta: float
    c_star: float
    x_star: float
    d_star: float
    holds: bool


def check_initial_decay(v0: np.ndarray, x: np.ndarray, beta: float = 1.0,
                        x_star: float | None = None) -> DecayFit:
    """Fit the boundary-decay envelope V0(x) <= C* x^beta below x*, D* above.

    On a finite grid a finite C* always exists, so "holds" is judged by the
    near-boundary ratios not blowing past the ratios seen at moderate x: the
    envelope fails when sup V0/x^beta over (0, x*] exceeds twice the sup over
    (x*/4, x*].  A density with positive boundary limit fails for every
    beta in (0, 1]; one vanishing like x^beta passes with C* close to its
    slope coefficient.
    """
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    v0 = np.asarray(v0, dtype=float)
    if np.any(v0 < 0):
        raise ValueError("density must be nonnegative")
    support = np.nonzero(v0 > 0)[0]
    if support.size == 0:
        return DecayFit(beta=beta, c_star=0.0, x_star=x_star or float(x[-1]),
                        d_star=0.0, holds=True)
    if x_star is None:
        x_star = max(0.2 * float(x[support[-1]]), float(x[min(10, x.size - 1)]))
    inner = (x > 0) & (x <= x_star)
    outer = x >= x_star
    ratios = v0[inner] / x[inner] ** beta
    c_star = float(ratios.max(initial=0.0))
    d_star = float(v0[outer].max(initial=0.0))
    mid = (x > x_star / 4) & (x <= x_star)
    mid_sup = float((v0[mid] / x[mid] ** beta).max(initial=0.0))
    holds = c_star <= 2.0 * mid_sup if c_star > 0 else True
    return DecayFit(beta=beta, c_star=c_star, x_star=float(x_star), d_star=d_star, holds=holds)


# ---------------------------------------------------------------------------
# cascade result / jump log


@dataclass
class MFCascadeResult:
    time: float
    aggregate_jumps: np.ndarray       # (L,) fixed point of the loss-response map
    type_mass_jumps: np.ndarray       # (L,) plain per-type defaulted mass
    weighted_mass_jumps: np.ndarray   # (L,) theta-weighted defaulted mass
    eps_diagnostics: list             # [(eps, aggregate vector), ...]
    no_jump: bool

    def to_jsonable(self) -> dict:
        return {
            "time": self.time,
            "delta": self.type_mass_jumps.tolist(),
            "delta_weighted": self.weighted_mass_jumps.tolist(),
            "aggregate": self.aggregate_jumps.tolist(),
            "no_jump": bool(self.no_jump),
            "eps_diagnostics": [
                {"eps": e, "aggregate": d.tolist()} for e, d in self.eps_diagnostics
            ],
        }


@dataclass
class MFOutput:
    t_grid: np.ndarray
    loss_paths: np.ndarray            # (n_steps + 1, L), plain per-type
    weighted_loss_paths: np.ndarray
    jumps: list[MFCascadeResult]
    snapshots: list                   # [(t, (L, J+1) per-type densities)]
    x: np.ndarray
    common_path: CommonNoisePath
    exploded: bool
    t_star: float | None
    loss_speed_l2: np.ndarray         # (L,) accumulated integral of (dL/dt)^2

    def losses_at(self, times, weighted: bool = False) -> np.ndarray:
        src = self.weighted_loss_paths if weighted else self.loss_paths
        ix = np.searchsorted(self.t_grid, np.asarray(times) + 1e-12, side="right") - 1
        return src[np.clip(ix, 0, len(self.t_grid) - 1)]


class _Explosion(Exception):
    def __init__(self, increments):
        super().__init__("within-step loss increment exceeded the explosion threshold")
        self.increments = increments


# ---------------------------------------------------------------------------
# solver


class MeanFieldSolver:
    """Owns the grids and coefficient tables of one mean-field problem."""

    def __init__(self, spec: MixtureSpec, config: MFConfig):
        self.spec = spec
        self.config = config
        J = config.n_cells
        self.x = np.linspace(0.0, config.x_max, J + 1)
        self.expo = spec.exposure_matrix()          # (L, L): (source, target)
        nodes, qw = spec.theta.quadrature(spec.theta_quadrature)
        L = spec.num_types
        self.type_of = np.repeat(np.arange(L), nodes.size)
        self.thetas = np.tile(nodes, L)
        self.q_weights = np.tile(qw, L)
        S = self.type_of.size
        # feedback: per-sub-type scale (1 + theta) * base scale
        fb = spec.feedback
        if fb is None:
            lam = np.array([t.net_liability_rate for t in spec.types])
            if np.any(lam <= 0):
                raise ValueError("mean-field types need positive net liability rates")
            base = (1.0 - spec.r2) / lam
            self.f_name = "log1p_scaled"
            self.g = FeedbackSpec.log1p_scaled(1.0, "linear_decay", spec.horizon).g
        else:
            base = np.broadcast_to(np.asarray(fb.f_param, dtype=float), (L,)).copy()
            self.f_name = fb.f_name
            self.g = fb.g
        self.c_sub = (1.0 + self.thetas) * base[self.type_of]
        self.sigma_specs = [spec.types[l].sigma for l in self.type_of]
        self.sigma_const = all(s.is_constant for s in self.sigma_specs)
        self._sigma0 = np.array([s.values[0] for s in self.sigma_specs])
        self.drift_specs = [spec.types[l] for l in self.type_of]
        self.trap = _trap_weights(self.x)
        self._validate_stability()
        self._initial = self._build_initial()
        thr = config.explosion_threshold
        if thr is None:
            v_scale = max(1.0, float(self._initial.V.max(initial=0.0)))
            speed = max(float(self._sigma0.max(initial=0.0)), 1e-3)
            thr = 10.0 * math.sqrt(config.dt) * speed * v_scale
        self.explosion_threshold = thr

    # -- coefficient helpers -------------------------------------------------

    def _validate_stability(self):
        c = self.config
        sig_max = max(float(np.max(s.values)) for s in self.sigma_specs)
        ratio = sig_max ** 2 * c.dt / c.dx ** 2
        if ratio > 0.5 + 1e-12:
            raise NumericalError(
                f"diffusion stability violated: max sigma^2 dt/dx^2 = {ratio:.4f} > 1/2"
            )
        b_max = max(abs(ts.drift(t)) for ts in self.spec.types for t in (0.0, self.spec.horizon / 2, self.spec.horizon))
        if b_max * c.dt / c.dx > 1.0 + 1e-12:
            raise NumericalError(
                f"advection stability violated: max |b| dt/dx = {b_max * c.dt / c.dx:.4f} > 1"
            )

    def _sigmas(self, t: float) -> np.ndarray:
        if self.sigma_const:
            return self._sigma0
        return np.array([s(t) for s in self.sigma_specs])

    def _drifts(self, t: float) -> np.ndarray:
        return np.array([ts.drift(t) for ts in self.drift_specs])

    def _f(self, z):
        z = np.asarray(z, dtype=float)
        if self.f_name == "linear":
            return self.c_sub * z
        return np.log1p(self.c_sub * z)

    def _shift_values(self, z_old: np.ndarray, z_new: np.ndarray) -> np.ndarray:
        """Per-sub-type downward shift between two aggregate-integral levels."""
        return self._f(z_new[self.type_of]) - self._f(z_old[self.type_of])

    # -- initial state --------------------------------------------------------

    def _build_initial(self) -> DensityField:
        S = self.type_of.size
        V = np.empty((S, self.x.size))
        for s in range(S):
            ts = self.spec.types[self.type_of[s]]
            if ts.distance_density is not None:
                dd = ts.distance_density
                if isinstance(dd, np.ndarray):
                    if dd.shape != self.x.shape:
                        raise ValueError("distance density array must match the grid")
                    V[s] = dd
                else:
                    V[s] = np.array([dd(float(xx)) for xx in self.x])
            elif ts.distance_cdf is not None:
                h = self.config.dx
                cdf = ts.distance_cdf
                edges = np.concatenate([[0.0], self.x[:-1] + h / 2, [self.x[-1]]])
                F = np.array([cdf(float(e)) for e in edges])
                if np.any(np.diff(F) < -1e-12):
                    raise ValueError("distance_cdf must be nondecreasing")
                if F[0] > 1e-9:
                    raise ValueError("distance_cdf carries mass at or below the boundary")
                if 1.0 - F[-1] > self.config.tail_tol * 10:
                    raise ValueError("distance_cdf has mass beyond the grid; enlarge x_max")
                V[s] = np.diff(F) / np.diff(edges)
            else:
                V[s] = init_density(
                    ts.asset_density, ts.net_liability_rate, ts.mu,
                    self.spec.horizon, self.x, mass_tol=2e-2,
                )
            if np.any(V[s] < 0):
                raise ValueError("initial density must be nonnegative")
            V[s, 0] = 0.0
            mass = float(V[s] @ self.trap)
            if mass <= 0:
                raise ValueError("initial density carries no mass on the grid")
            V[s] /= mass  # exact discrete normalisation anchors conservation
        return DensityField(
            t=0.0, x=self.x, V=V, type_of=self.type_of, thetas=self.thetas,
            q_weights=self.q_weights, sub_losses=np.zeros(S),
            g_integrals=np.zeros(self.spec.num_types),
        )

    def initial_field(self) -> DensityField:
        return self._initial.copy()

    # -- elementary operations -------------------------------------------------

    def _shift_rows(self, V: np.ndarray, shifts: np.ndarray) -> np.ndarray:
        """Translate each row left by its shift (positive = toward the
        boundary) with linear interpolation; mass crossing either edge is
        dropped here and picked up by the caller's bookkeeping."""
        out = np.empty_like(V)
        for s in range(V.shape[0]):
            d = shifts[s]
            if d == 0.0:
                out[s] = V[s]
            else:
                out[s] = np.interp(self.x + d, self.x, V[s], left=0.0, right=0.0)
        return out

    def _diffuse_advect(self, V: np.ndarray, t: float) -> np.ndarray:
        c = self.config
        sig = self._sigmas(t)
        b = self._drifts(t)
        dx, dt = c.dx, c.dt
        out = V.copy()
        half_sig2 = 0.5 * sig[:, None] ** 2
        lap = np.empty_like(V)
        lap[:, 1:-1] = (V[:, 2:] - 2.0 * V[:, 1:-1] + V[:, :-2]) / dx ** 2
        lap[:, 0] = 0.0
        lap[:, -1] = (V[:, -2] - V[:, -1]) / dx ** 2  # reflecting right edge
        out += dt * half_sig2 * lap
        adv = np.zeros_like(V)
        for s in range(V.shape[0]):
            if b[s] < 0:
                adv[s, :-1] = -b[s] * (V[s, 1:] - V[s, :-1]) / dx
                adv[s, -1] = 0.0
            elif b[s] > 0:
                adv[s, 1:] = -b[s] * (V[s, 1:] - V[s, :-1]) / dx
                adv[s, 0] = 0.0
        out += dt * adv
        return out

    # -- stepping ----------------------------------------------------------------

    def step(self, state: DensityField, db0: float, allow_explosion_check: bool = True) -> DensityField:
        """Advance one dt: diffusion/drift, common-noise shift, the inner
        loss-coupling fixed point, then absorption at the origin.  Raises
        _Explosion when the coupled loss increment exceeds the threshold
        (the caller then resolves a cascade on the pre-step state)."""
        c = self.config
        t = state.t
        w = self.trap
        L = self.spec.num_types
        mass0 = state.V @ w

        V1 = self._diffuse_advect(state.V, t)
        sig = self._sigmas(t)
        noise_shift = -self.spec.rho * sig * db0  # displacement toward boundary
        V2 = self._shift_rows(V1, noise_shift) if db0 != 0.0 else V1
        if np.any(V2[:, -1] * c.dx > c.tail_tol):
            raise NumericalError("mass reached the right edge of the grid; enlarge x_max")

        g_t = float(self.g(t))
        scale = self.q_weights * (1.0 + self.thetas)

        def type_increments(V_cand):
            # per-sub outflow so far, the boundary cell counted as lost
            out_sub = mass0 - V_cand @ w + V_cand[:, 0] * w[0]
            inc = np.zeros(L)
            np.add.at(inc, self.type_of, scale * out_sub)
            return inc

        has_coupling = np.any(self.expo > 0) and np.any(self.c_sub > 0)
        delta = type_increments(V2)
        V3 = V2
        dz = np.zeros(L)
        if has_coupling:
            def respond(cand):
                dz_c = g_t * (self.expo.T @ cand)
                shifts = self._shift_values(state.g_integrals, state.g_integrals + dz_c)
                V_c = self._shift_rows(V2, shifts)
                return type_increments(V_c), dz_c, V_c

            converged = False
            prev_rmax = None
            for _ in range(c.max_inner):
                new_delta, dz, V3 = respond(delta)
                if allow_explosion_check and np.any(new_delta > self.explosion_threshold):
                    raise _Explosion(new_delta)
                resid = new_delta - delta
                rmax = float(np.abs(resid).max())
                if rmax < c.inner_tol:
                    delta = new_delta
                    converged = True
                    break
                # geometric tail extrapolation once the contraction ratio is
                # visible; only accepted when verified as a fixed point
                if prev_rmax is not None and 0.0 < rmax < prev_rmax:
                    q = rmax / prev_rmax
                    if q < 0.999:
                        guess = new_delta + resid * q / (1.0 - q)
                        check, dz_c, V_c = respond(guess)
                        if allow_explosion_check and np.any(check > self.explosion_threshold):
                            raise _Explosion(check)
                        if np.abs(check - guess).max() < c.inner_tol:
                            delta, dz, V3 = check, dz_c, V_c
                            converged = True
                            break
                prev_rmax = rmax
                delta = new_delta
            if not converged and allow_explosion_check:
                # the inner iterates increase monotonically, so exhausting the
                # cap means the coupling is at or past criticality: let the
                # cascade condition decide whether this is a jump
                raise _Explosion(delta)
        elif allow_explosion_check and np.any(delta > self.explosion_threshold):
            raise _Explosion(delta)

        V4 = V3.copy()
        V4[:, 0] = 0.0
        out_sub = mass0 - V4 @ w
        if np.any(out_sub < -1e-10):
            raise NumericalError("negative loss increment; scheme instability")
        new = DensityField(
            t=t + c.dt, x=state.x, V=V4, type_of=state.type_of, thetas=state.thetas,
            q_weights=state.q_weights, sub_losses=state.sub_losses + np.maximum(out_sub, 0.0),
            g_integrals=state.g_integrals + dz,
        )
        drift = np.abs(new.V @ w + new.sub_losses - 1.0).max()
        if drift > c.mass_tol:
            raise NumericalError(f"mass conservation violated by {drift:.3e}")
        return new

    # -- cascades -----------------------------------------------------------------

    def theta_mf(self, t: float, z: float, l: int, state: DensityField, theta: float = 0.0) -> float:
        """Shift of type l's density implied by an aggregate felt-loss jump z
        at time t, given the history integrals in ``state``."""
        if z < 0:
            raise ValueError("candidate jump must be nonnegative")
        hits = np.nonzero((self.type_of == l) & (self.thetas == theta))[0]
        if hits.size == 0:
            raise ValueError(f"no quadrature node at theta={theta} for type {l}")
        c = self.c_sub[hits[0]]
        g_t = float(self.g(t))
        z_old = state.g_integrals[l]
        if self.f_name == "linear":
            return c * g_t * z
        return math.log1p(c * (z_old + g_t * z)) - math.log1p(c * z_old)

    def _xi(self, state: DensityField, cum: np.ndarray, z_cand: np.ndarray) -> np.ndarray:
        """Loss-response map: mass each type would lose if every density is
        shifted by the amount its candidate aggregate jump implies."""
        g_t = float(self.g(state.t))
        shifts = self._shift_values(state.g_integrals, state.g_integrals + g_t * z_cand)
        lost_sub = np.array([
            float(np.interp(shifts[s], self.x, cum[s])) for s in range(cum.shape[0])
        ])
        weighted = np.zeros(self.spec.num_types)
        np.add.at(weighted, self.type_of, self.q_weights * (1.0 + self.thetas) * lost_sub)
        return self.expo.T @ weighted

    def resolve_cascade(self, state: DensityField) -> MFCascadeResult:
        """Size an instantaneous cascade from the left-limit state.

        For every shock size in the schedule the loss-response map is
        iterated from the shocked start until it stabilises (the iterates
        increase monotonically); the converged sizes decrease as the shock
        shrinks, and the value at the smallest shock is reported.  A result
        within the no-jump band (twice the smallest shock times the largest
        exposure column sum) is declared to be no jump at all.

        The smallest shock defaults to the one whose implied shift is a
        single grid cell: shocks that move the densities by much less than
        a cell cannot be resolved on the grid and collapse spuriously.
        """
        c = self.config
        L = self.spec.num_types
        g_t = float(self.g(state.t))
        lip_g = float(self.c_sub.max(initial=0.0)) * max(g_t, 0.0)
        if lip_g <= 0.0 or not np.any(self.expo > 0):
            zero = np.zeros(L)
            return MFCascadeResult(
                time=state.t, aggregate_jumps=zero, type_mass_jumps=zero.copy(),
                weighted_mass_jumps=zero.copy(), eps_diagnostics=[], no_jump=True,
            )
        eps_min = c.eps_min if c.eps_min is not None else c.dx / lip_g
        eps0 = c.eps0 if c.eps0 is not None else 16.0 * eps_min
        cum = np.concatenate([
            np.zeros((state.V.shape[0], 1)),
            np.cumsum(0.5 * (state.V[:, 1:] + state.V[:, :-1]) * c.dx, axis=1),
        ], axis=1)
        diagnostics = []
        prev = None
        for eps in c.eps_schedule(eps0, eps_min):
            delta = self._xi(state, cum, np.full(L, eps))
            prev_rmax = None
            for _ in range(10000):
                new = self._xi(state, cum, eps + delta)
                if np.any(new < delta - 100 * c.cascade_tol):
                    raise NumericalError("cascade iterates decreased; monotonicity violated")
                resid = new - delta
                rmax = float(np.abs(resid).max())
                if rmax < c.cascade_tol:
                    delta = new
                    break
                if prev_rmax is not None and 0.0 < rmax < prev_rmax:
                    q = rmax / prev_rmax
                    if q < 0.999:
                        guess = new + resid * q / (1.0 - q)
                        check = self._xi(state, cum, eps + guess)
                        if np.abs(check - guess).max() < c.cascade_tol and np.all(check >= delta - 100 * c.cascade_tol):
                            delta = check
                            break
                prev_rmax = rmax
                delta = new
            else:
                raise NumericalError("cascade iteration failed to converge")
            if prev is not None and np.any(delta > prev + 1e3 * c.cascade_tol):
                raise NumericalError("cascade sizes increased as the shock shrank")
            diagnostics.append((eps, delta.copy()))
            prev = delta
        final = diagnostics[-1][1]
        max_col = float(self.expo.sum(axis=0).max(initial=0.0))
        no_jump = bool(np.max(final, initial=0.0) <= 2.0 * eps_min * max(max_col, 1.0))
        shifts = self._shift_values(state.g_integrals, state.g_integrals + g_t * final)
        lost_sub = np.array([
            float(np.interp(shifts[s], self.x, cum[s])) for s in range(cum.shape[0])
        ])
        plain = np.zeros(L)
        weighted = np.zeros(L)
        np.add.at(plain, self.type_of, self.q_weights * lost_sub)
        np.add.at(weighted, self.type_of, self.q_weights * (1.0 + self.thetas) * lost_sub)
        return MFCascadeResult(
            time=state.t, aggregate_jumps=final, type_mass_jumps=plain,
            weighted_mass_jumps=weighted, eps_diagnostics=diagnostics, no_jump=no_jump,
        )

    def apply_jump(self, state: DensityField, jumps: MFCascadeResult) -> DensityField:
        """Shift every density left by its implied amount and book the mass
        that crossed the boundary.  The boundary value is deliberately left
        nonzero; the next continuous step re-establishes absorption."""
        g_t = float(self.g(state.t))
        z_new = state.g_integrals + g_t * jumps.aggregate_jumps
        shifts = self._shift_values(state.g_integrals, z_new)
        w = self.trap
        mass0 = state.V @ w
        V = self._shift_rows(state.V, shifts)
        out_sub = mass0 - V @ w
        return DensityField(
            t=state.t, x=state.x, V=V, type_of=state.type_of, thetas=state.thetas,
            q_weights=state.q_weights, sub_losses=state.sub_losses + out_sub,
            g_integrals=z_new,
        )

    # -- condition checkers ---------------------------------------------------------

    def check_no_jump(self, state: DensityField, t: float, window_cells: int = 10):
        """Sufficient condition ruling out a jump at time t: the exposure-
        weighted boundary densities stay below the reciprocal of the
        feedback slope near the origin.  Returns (passed, margin, per-type
        margins)."""
        L = self.spec.num_types
        g_t = float(self.g(t))
        win = slice(1, 1 + window_cells)
        dens_w = np.zeros((L, window_cells))
        scale = self.q_weights * (1.0 + self.thetas)
        for s in range(state.V.shape[0]):
            dens_w[self.type_of[s]] += scale[s] * state.V[s, win]
        lip = np.zeros(L)
        np.maximum.at(lip, self.type_of, self.c_sub)
        margins = np.empty(L)
        for l in range(L):
            quantity = lip[l] * g_t * float((self.expo[:, l][:, None] * dens_w).sum(axis=0).max(initial=0.0))
            margins[l] = 1.0 - quantity
        return bool(np.all(margins > 0)), float(margins.min()), margins

    def check_smallness(self, state: DensityField | None = None):
        """Weak-feedback condition from the initial profile: feedback slope
        times g(0) times exposure-weighted sup norms stays below 1.
        Returns (passed, margin, per-type margins)."""
        if state is None:
            state = self.initial_field()
        L = self.spec.num_types
        g0 = float(self.g(0.0))
        sup_w = np.zeros(L)
        scale = self.q_weights * (1.0 + self.thetas)
        for s in range(state.V.shape[0]):
            sup_w[self.type_of[s]] += scale[s] * float(state.V[s].max(initial=0.0))
        lip = np.zeros(L)
        np.maximum.at(lip, self.type_of, self.c_sub)
        margins = np.empty(L)
        for l in range(L):
            margins[l] = 1.0 - lip[l] * g0 * float(self.expo[:, l] @ sup_w)
        return bool(np.all(margins > 0)), float(margins.min()), margins

    # -- full solves -------------------------------------------------------------------

    def solve(self, noise: CommonNoisePath | int | None = None) -> MFOutput:
        """Step to the horizon, resolving cascades whenever a step's loss
        coupling explodes.  At a cascade the pre-step state is the left
        limit: the jump is sized and applied there, then the step is retried
        with the trigger disabled so the violated boundary drains smoothly.
        """
        c = self.config
        T = self.spec.horizon
        n_steps = round(T / c.dt)
        if abs(n_steps * c.dt - T) > 1e-9 * T:
            raise ValueError("dt must divide the horizon")
        grid = np.linspace(0.0, T, n_steps + 1)
        if isinstance(noise, CommonNoisePath):
            path = noise
        else:
            path = brownian_common_path(0 if noise is None else int(noise), grid)
        db0 = path.increments(grid) if self.spec.rho != 0.0 else np.zeros(n_steps)

        field = self.initial_field()
        L = self.spec.num_types
        loss = np.zeros((n_steps + 1, L))
        wloss = np.zeros((n_steps + 1, L))
        jumps: list[MFCascadeResult] = []
        snapshots = []
        speed_l2 = np.zeros(L)
        snap_times = sorted(set(float(s) for s in c.snapshot_times))
        next_snap = 0

        def maybe_snapshot(fld):
            nonlocal next_snap
            while next_snap < len(snap_times) and snap_times[next_snap] <= fld.t + 1e-12:
                dens = np.stack([fld.type_density(l) for l in range(L)])
                snapshots.append((snap_times[next_snap], dens))
                next_snap += 1

        loss[0] = field.type_losses()
        wloss[0] = field.type_losses(weighted=True)
        maybe_snapshot(field)
        for k in range(n_steps):
            try:
                new = self.step(field, float(db0[k]))
            except _Explosion:
                result = self.resolve_cascade(field)
                if not result.no_jump:
                    field = self.apply_jump(field, result)
                    jumps.append(result)
                new = self.step(field, float(db0[k]), allow_explosion_check=False)
            inc = new.type_losses() - field.type_losses()
            speed_l2 += inc ** 2 / c.dt
            field = new
            loss[k + 1] = field.type_losses()
            wloss[k + 1] = field.type_losses(weighted=True)
            maybe_snapshot(field)
        return MFOutput(
            t_grid=grid, loss_paths=loss, weighted_loss_paths=wloss, jumps=jumps,
            snapshots=snapshots, x=self.x, common_path=path,
            exploded=bool(jumps), t_star=jumps[0].time if jumps else None,
            loss_speed_l2=speed_l2,
        )

    # -- Picard solver (no common noise) --------------------------------------------------

    def _evolve_under_shift(self, shift_paths: np.ndarray, n_steps: int) -> np.ndarray:
        """Evolve every sub-type under a fixed deterministic shift schedule
        (a linear absorbed problem) and return per-sub loss paths."""
        field = self.initial_field()
        S = field.V.shape[0]
        w = self.trap
        V = field.V.copy()
        losses = np.zeros((n_steps + 1, S))
        t = 0.0
        for k in range(n_steps):
            mass0 = V @ w
            V = self._diffuse_advect(V, t)
            ds = shift_paths[k + 1] - shift_paths[k]
            if np.any(ds != 0.0):
                V = self._shift_rows(V, ds)
            V[:, 0] = 0.0
            losses[k + 1] = losses[k] + (mass0 - V @ w)
            t += self.config.dt
        return losses

    def picard_solve(self, tol: float = 1e-6, max_iter: int = 30):
        """Iterate the loss-to-loss map to its fixed point (no common noise).

        Each pass freezes the candidate loss paths, evolves every type under
        the deterministic shift they imply, and reads off the new losses.
        Returns (weighted loss paths on the grid, plain loss paths, residual
        history, converged flag).
        """
        if self.spec.rho != 0.0:
            raise ValueError("the fixed-point solver requires zero common-noise loading")
        c = self.config
        T = self.spec.horizon
        n_steps = round(T / c.dt)
        grid = np.linspace(0.0, T, n_steps + 1)
        L = self.spec.num_types
        S = self.type_of.size
        g_vals = np.asarray(self.g(grid), dtype=float)
        scale = self.q_weights * (1.0 + self.thetas)

        ell = np.zeros((n_steps + 1, L))
        residuals = []
        converged = False
        plain = None
        for _ in range(max_iter):
            # left-point Stieltjes integral of g against the aggregate losses
            agg = ell @ self.expo  # (n+1, L): aggregate felt by each type
            z = np.zeros_like(agg)
            z[1:] = np.cumsum(g_vals[:-1, None] * np.diff(agg, axis=0), axis=0)
            shift_paths = self._f(z[:, self.type_of])  # (n+1, S)
            sub_losses = self._evolve_under_shift(shift_paths, n_steps)
            new_ell = np.zeros_like(ell)
            for l in range(L):
                mask = self.type_of == l
                new_ell[:, l] = sub_losses[:, mask] @ scale[mask]
            res = float(np.abs(new_ell - ell).max())
            residuals.append(res)
            plain_new = np.zeros_like(ell)
            for l in range(L):
                mask = self.type_of == l
                plain_new[:, l] = sub_losses[:, mask] @ self.q_weights[mask]
            ell, plain = new_ell, plain_new
            if res < tol:
                converged = True
                break
        return PicardResult(
            t_grid=grid, weighted_loss_paths=ell, loss_paths=plain,
            residuals=residuals, converged=converged,
        )


@dataclass
class PicardResult:
    t_grid: np.ndarray
    weighted_loss_paths: np.ndarray
    loss_paths: np.ndarray
    residuals: list
    converged: bool


def solve(spec: MixtureSpec, config: MFConfig, noise=None) -> MFOutput:
    return MeanFieldSolver(spec, config).solve(noise)


def picard_solve(spec: MixtureSpec, config: MFConfig, tol: float = 1e-6, max_iter: int = 30) -> PicardResult:
    return MeanFieldSolver(spec, config).picard_solve(tol=tol, max_iter=max_iter)
