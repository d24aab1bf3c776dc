"""Construction and factorization of interbank liability networks.

A network is a matrix of constant obligation rates (money per unit time)
between n banks, plus a column of rates owed to a societal node that never
owes anything back.  Core-periphery networks are assembled from a block
specification, grown by an integer multiplier that splits every bank into
m identical sub-entities, and optionally perturbed by multiplicative row
and column noise.  The rank factorization splits the scaled matrix
n * rates into contribution loadings U (one row per bank) and exposure
loadings V (one column per bank), the contagion channels used throughout
the rest of the library.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .rngstreams import philox_stream, TAG_NETWORK_NOISE


# ---------------------------------------------------------------------------
# specifications


@dataclass(frozen=True)
class PeripheryGroup:
    """One group of identical peripheral banks.

    ``core_to_group[c]`` is the rate each core bank c owes to every member,
    ``group_to_core[c]`` the rate every member owes to core bank c.
    """

    size: int
    core_to_group: np.ndarray
    group_to_core: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "core_to_group", np.asarray(self.core_to_group, dtype=float))
        object.__setattr__(self, "group_to_core", np.asarray(self.group_to_core, dtype=float))
        if self.size < 0:
            raise ValueError("group size must be nonnegative")
        if np.any(self.core_to_group < 0) or np.any(self.group_to_core < 0):
            raise ValueError("obligation rates must be nonnegative")


@dataclass(frozen=True)
class BlockSpec:
    """Core-periphery block description of a liability network."""

    core: np.ndarray
    groups: tuple[PeripheryGroup, ...] = ()
    societal_rate: float = 0.0

    def __post_init__(self):
        core = np.asarray(self.core, dtype=float)
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "groups", tuple(self.groups))
        if core.ndim != 2 or core.shape[0] != core.shape[1]:
            raise ValueError("core matrix must be square")
        if np.any(np.diag(core) != 0):
            raise ValueError("core matrix diagonal must be exactly zero")
        if np.any(core < 0):
            raise ValueError("obligation rates must be nonnegative")
        if self.societal_rate < 0:
            raise ValueError("societal rate must be nonnegative")
        mc = core.shape[0]
        for g in self.groups:
            if g.core_to_group.shape != (mc,) or g.group_to_core.shape != (mc,):
                raise ValueError("group rate vectors must have one entry per core bank")

    @property
    def num_core(self) -> int:
        return self.core.shape[0]

    @property
    def total_size(self) -> int:
        return self.num_core + sum(g.size for g in self.groups)

    def type_sizes(self) -> np.ndarray:
        """Multiplicity of each type: 1 per core bank, group size per group."""
        return np.array([1] * self.num_core + [g.size for g in self.groups])

    def type_labels(self) -> np.ndarray:
        """Type index of every bank in build order."""
        labels = list(range(self.num_core))
        for t, g in enumerate(self.groups):
            labels += [self.num_core + t] * g.size
        return np.array(labels, dtype=int)


@dataclass(frozen=True)
class NoiseSpec:
    """Mean-zero multiplicative noise distribution with support in [-1, 1]."""

    distribution: str  # "dirac_zero" | "uniform" | "discrete"
    half_width: float = 0.0
    points: np.ndarray | None = None
    weights: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.distribution == "dirac_zero":
            pass
        elif self.distribution == "uniform":
            if not 0.0 <= self.half_width <= 1.0:
                raise ValueError("uniform half-width must lie in [0, 1]")
        elif self.distribution == "discrete":
            pts = np.asarray(self.points, dtype=float)
            wts = np.asarray(self.weights, dtype=float)
            if pts.shape != wts.shape or pts.ndim != 1:
                raise ValueError("points and weights must be matching 1-d arrays")
            if np.any(np.abs(pts) > 1.0) or np.any(wts < 0):
                raise ValueError("support must lie in [-1, 1] with nonnegative weights")
            if abs(wts.sum() - 1.0) > 1e-12:
                raise ValueError("weights must sum to 1")
            if abs(float(pts @ wts)) > 1e-12:
                raise ValueError("distribution must have mean zero")
            object.__setattr__(self, "points", pts)
            object.__setattr__(self, "weights", wts)
        else:
            raise ValueError(f"unknown noise distribution {self.distribution!r}")

    @classmethod
    def dirac(cls) -> "NoiseSpec":
        return cls("dirac_zero")

    @classmethod
    def uniform(cls, half_width: float, seed: int = 0) -> "NoiseSpec":
        return cls("uniform", half_width=half_width, seed=seed)

    @classmethod
    def discrete(cls, points, weights, seed: int = 0) -> "NoiseSpec":
        return cls("discrete", points=points, weights=weights, seed=seed)

    def sample(self, size: int, rng: np.random.Generator | None = None) -> np.ndarray:
        if rng is None:
            rng = philox_stream(self.seed, TAG_NETWORK_NOISE)
        if self.distribution == "dirac_zero":
            return np.zeros(size)
        if self.distribution == "uniform":
            return rng.uniform(-self.half_width, self.half_width, size)
        return rng.choice(self.points, size=size, p=self.weights)

    def quadrature(self, num_nodes: int = 5) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights integrating this distribution exactly (discrete,
        dirac) or by Gauss-Legendre rescaling (uniform)."""
        if self.distribution == "dirac_zero":
            return np.array([0.0]), np.array([1.0])
        if self.distribution == "discrete":
            return self.points.copy(), self.weights.copy()
        nodes, wts = np.polynomial.legendre.leggauss(num_nodes)
        return nodes * self.half_width, wts / 2.0


# ---------------------------------------------------------------------------
# networks


@dataclass(frozen=True)
class LiabilityNetwork:
    """Interbank obligation rates plus the societal column.

    The societal node owes nothing, so it has no row: only the n-vector of
    rates owed to it is stored.
    """

    n: int
    rates: np.ndarray
    societal: np.ndarray
    horizon: float = 1.0

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        societal = np.asarray(self.societal, dtype=float)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "societal", societal)
        if rates.shape != (self.n, self.n):
            raise ValueError("rates must be an n x n matrix")
        if societal.shape != (self.n,):
            raise ValueError("societal must be an n-vector")
        if np.any(np.diag(rates) != 0):
            raise ValueError("self-obligations are not allowed")
        if np.any(rates < 0) or np.any(societal < 0):
            raise ValueError("obligation rates must be nonnegative")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")

    def net_liability_rates(self) -> np.ndarray:
        """Lambda_i: societal plus interbank obligations net of interbank assets."""
        return self.societal + self.rates.sum(axis=1) - self.rates.sum(axis=0)

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "T": self.horizon,
                "rates": self.rates.tolist(),
                "societal": self.societal.tolist(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "LiabilityNetwork":
        data = json.loads(text)
        return cls(
            n=int(data["n"]),
            rates=np.array(data["rates"], dtype=float),
            societal=np.array(data["societal"], dtype=float),
            horizon=float(data["T"]),
        )


def build_block_matrix(spec: BlockSpec, horizon: float = 1.0) -> LiabilityNetwork:
    """Assemble the block liability matrix: a dense core, core-periphery
    links, and a zero periphery-periphery block."""
    mc = spec.num_core
    n = spec.total_size
    rates = np.zeros((n, n))
    rates[:mc, :mc] = spec.core
    offset = mc
    for g in spec.groups:
        cols = slice(offset, offset + g.size)
        rates[:mc, cols] = g.core_to_group[:, None]
        rates[cols, :mc] = g.group_to_core[None, :]
        offset += g.size
    societal = np.full(n, spec.societal_rate)
    return LiabilityNetwork(n=n, rates=rates, societal=societal, horizon=horizon)


def scale_network(base: LiabilityNetwork, m: int) -> LiabilityNetwork:
    """Grow a network by the multiplier m: every bank splits into m copies,
    pairwise rates are tiled and divided by m so each copy keeps the row and
    column totals of its original, and the societal rate is replicated
    unscaled.  Bank ``a * n0 + i`` of the result is copy a of base bank i.
    """
    if m < 1:
        raise ValueError("multiplier must be at least 1")
    if m == 1:
        return base
    # Tiling replicates the base diagonal zeros, so copies of a single bank
    # owe each other nothing (no self-dealing within a split bank) while
    # every other pair of copies trades at the original rate over m.
    rates = np.tile(base.rates, (m, m)) / m
    societal = np.tile(base.societal, m)
    return LiabilityNetwork(n=m * base.n, rates=rates, societal=societal, horizon=base.horizon)


def apply_noise(net: LiabilityNetwork, noise: NoiseSpec):
    """Multiply every rate by (1 + eps_i)(1 + delta_j) with i.i.d. samples.

    Returns the perturbed network together with the sampled vectors so a
    study can reproduce or reuse them.
    """
    rng = philox_stream(noise.seed, TAG_NETWORK_NOISE)
    eps = noise.sample(net.n, rng)
    delta = noise.sample(net.n, rng)
    rates = net.rates * np.outer(1.0 + eps, 1.0 + delta)
    noisy = LiabilityNetwork(n=net.n, rates=rates, societal=net.societal.copy(), horizon=net.horizon)
    return noisy, eps, delta


def net_liability(net: LiabilityNetwork, i: int) -> float:
    """Total obligations (societal and interbank) net of interbank assets
    over the horizon.  Warns when nonpositive: such a bank can never default
    until counterparty losses push its effective liabilities positive."""
    if not 0 <= i < net.n:
        raise IndexError(f"bank index {i} out of range for n={net.n}")
    value = net.horizon * float(net.net_liability_rates()[i])
    if value <= 0:
        warnings.warn(
            f"bank {i} has nonpositive net liability {value:.6g}; "
            "the distance-to-default transform is undefined for it",
            stacklevel=2,
        )
    return value


# ---------------------------------------------------------------------------
# rank factorization


@dataclass(frozen=True)
class RankFactorization:
    """Channels of contagion: n * rates = U V with k retained channels.

    Row i of U says how strongly bank i feeds each channel when it defaults;
    column i of V says how exposed bank i is to each channel.  Singular
    values are folded into the rows of V, and each U column's first
    significantly nonzero entry is made positive so repeated factorizations
    agree bit for bit.
    """

    k: int
    U: np.ndarray
    V: np.ndarray
    singular_values: np.ndarray
    tol: float

    def contribution(self, i: int) -> np.ndarray:
        return self.U[i]

    def exposure(self, i: int) -> np.ndarray:
        return self.V[:, i]

    def reconstruction(self) -> np.ndarray:
        return self.U @ self.V

    def max_residual(self, scaled_rates: np.ndarray) -> float:
        return float(np.abs(scaled_rates - self.reconstruction()).max(initial=0.0))


def rank_factorize(net: LiabilityNetwork, rel_tol: float = 1e-9) -> RankFactorization:
    """SVD-based channel factorization of n * rates.

    Channels with singular value below ``rel_tol`` times the largest are
    dropped.  If truncation at that cutoff leaves a max-norm residual above
    rel_tol times the largest entry, channels are added back until the
    reconstruction bound holds, so the factorization always satisfies its
    residual contract.
    """
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")
    scaled = net.n * net.rates
    max_entry = float(np.abs(scaled).max(initial=0.0))
    if max_entry == 0.0:
        return RankFactorization(
            k=0,
            U=np.zeros((net.n, 0)),
            V=np.zeros((0, net.n)),
            singular_values=np.zeros(0),
            tol=rel_tol,
        )
    u_full, s, vt_full = np.linalg.svd(scaled, full_matrices=False)
    k = int(np.sum(s >= rel_tol * s[0]))
    while k < s.size:
        approx = (u_full[:, :k] * s[:k]) @ vt_full[:k]
        if np.abs(scaled - approx).max() <= rel_tol * max_entry:
            break
        k += 1
    u_k = u_full[:, :k].copy()
    vt_k = vt_full[:k].copy()
    for col in range(k):
        nz = np.nonzero(np.abs(u_k[:, col]) > 1e-12 * np.abs(u_k[:, col]).max())[0]
        if nz.size and u_k[nz[0], col] < 0:
            u_k[:, col] = -u_k[:, col]
            vt_k[col] = -vt_k[col]
    return RankFactorization(
        k=k,
        U=u_k,
        V=s[:k, None] * vt_k,
        singular_values=s[:k].copy(),
        tol=rel_tol,
    )


# ---------------------------------------------------------------------------
# type structure


@dataclass(frozen=True)
class TypeAtlas:
    """Per-type summary of a factorized network.

    Every bank belongs to a type; banks of one type share a principal
    loading pair up to the scalar factor (1 + theta_i).  ``weights`` are the
    mass fractions of the types.
    """

    labels: np.ndarray
    thetas: np.ndarray
    principal_u: np.ndarray  # (num_types, k)
    principal_v: np.ndarray  # (num_types, k)
    weights: np.ndarray

    def __post_init__(self):
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("type weights must sum to 1")

    @property
    def num_types(self) -> int:
        return self.weights.size


def atlas_from_labels(
    fac: RankFactorization,
    labels,
    thetas=None,
    check_tol: float = 1e-6,
) -> TypeAtlas:
    """Build a type atlas from a factorization and per-bank type labels.

    The principal pair of each type is the loading pair of its first member
    rescaled by 1/(1 + theta); every other member is checked to match its
    type's pair within ``check_tol`` relative to the largest loading.
    """
    labels = np.asarray(labels, dtype=int)
    n = labels.size
    if thetas is None:
        thetas = np.zeros(n)
    thetas = np.asarray(thetas, dtype=float)
    num_types = int(labels.max()) + 1 if n else 0
    pu = np.zeros((num_types, fac.k))
    pv = np.zeros((num_types, fac.k))
    weights = np.zeros(num_types)
    scale = max(np.abs(fac.U).max(initial=0.0), np.abs(fac.V).max(initial=0.0), 1e-300)
    for t in range(num_types):
        members = np.nonzero(labels == t)[0]
        if members.size == 0:
            raise ValueError(f"type {t} has no members")
        first = members[0]
        pu[t] = fac.U[first] / (1.0 + thetas[first])
        pv[t] = fac.V[:, first] / (1.0 + thetas[first])
        weights[t] = members.size / n
        for i in members:
            du = np.abs(fac.U[i] - (1.0 + thetas[i]) * pu[t]).max(initial=0.0)
            dv = np.abs(fac.V[:, i] - (1.0 + thetas[i]) * pv[t]).max(initial=0.0)
            if max(du, dv) > check_tol * scale:
                raise ValueError(
                    f"bank {i} does not match the principal pair of type {t}"
                )
    return TypeAtlas(labels=labels, thetas=thetas, principal_u=pu, principal_v=pv, weights=weights)


def effective_exposures(atlas: TypeAtlas, m0: int) -> np.ndarray:
    """Aggregate exposure matrix between whole type collections.

    Entry (i, j) is m0 * w_i * w_j * (u_i . v_j): the principal pairwise
    rate scaled up by both collections' multiplicities, i.e. the total
    obligation rate from all banks of type i to all banks of type j in the
    initialising system of size m0.
    """
    gram = atlas.principal_u @ atlas.principal_v.T  # (i, j) -> u_i . v_j
    return m0 * np.outer(atlas.weights, atlas.weights) * gram


def interaction_matrix(atlas: TypeAtlas) -> np.ndarray:
    """Feedback matrix of the mean-field limit: entry (i, l) = w_i (u_i . v_l)
    is the loss a type-l bank suffers per unit default proportion of type i.
    It weights sources by their own mass fraction only; this is the matrix
    that matches the finite system as it grows."""
    gram = atlas.principal_u @ atlas.principal_v.T
    return atlas.weights[:, None] * gram
