"""Feedback maps that translate accumulated counterparty losses into
downward shifts of the distance-to-default.

A feedback specification is a pair (F, g): losses are accumulated through
the time weight g and pushed through the increasing map F.  Two F families
are supported:

* ``log1p_scaled(C)``: z -> log(1 + C z).  This is the map produced by the
  mark-to-market capital system, with C = (1 - R2) / Lambda per bank.
* ``linear(alpha)``: z -> alpha z.

and two g families: ``linear_decay(T)``: s -> 1 - s/T (remaining-maturity
weight) and ``constant(c)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_F_NAMES = ("log1p_scaled", "linear")
_G_NAMES = ("linear_decay", "constant")


@dataclass(frozen=True)
class FeedbackSpec:
    """Named feedback pair (F, g).

    ``f_param`` may be a scalar or a per-bank array; a per-bank array means
    each bank has its own scale constant (the capital system gives each bank
    C_i = (1 - R2) / Lambda_i).  Entries that are not finite mark banks for
    which the map is undefined (non-positive net liabilities); evaluating F
    for those banks raises.
    """

    f_name: str
    f_param: float | np.ndarray
    g_name: str
    g_param: float

    def __post_init__(self):
        if self.f_name not in _F_NAMES:
            raise ValueError(f"unknown F family {self.f_name!r}")
        if self.g_name not in _G_NAMES:
            raise ValueError(f"unknown g family {self.g_name!r}")
        p = np.asarray(self.f_param, dtype=float)
        finite = p[np.isfinite(p)]
        if finite.size and np.any(finite < 0):
            raise ValueError("F scale parameters must be nonnegative")
        if self.g_name == "linear_decay" and self.g_param <= 0:
            raise ValueError("linear_decay horizon must be positive")
        if self.g_name == "constant" and self.g_param < 0:
            raise ValueError("constant g must be nonnegative")
        # F(0) = 0 holds for both families by construction; monotonicity is
        # checked on a coarse grid so misuse fails loudly.
        z = np.linspace(0.0, 1.0, 5)
        param = float(finite[0]) if finite.size else 0.0
        fz = self._f_scalar(z, param)
        if np.any(np.diff(fz) < -1e-12):
            raise ValueError("F must be nondecreasing")
        if abs(self._f_scalar(np.array([0.0]), param)[0]) > 0:
            raise ValueError("F(0) must be 0")

    # -- constructors ------------------------------------------------------

    @classmethod
    def linear(cls, alpha: float, g_name: str = "constant", g_param: float = 1.0) -> "FeedbackSpec":
        return cls("linear", float(alpha), g_name, float(g_param))

    @classmethod
    def log1p_scaled(cls, C, g_name: str = "linear_decay", g_param: float = 1.0) -> "FeedbackSpec":
        return cls("log1p_scaled", C, g_name, float(g_param))

    @classmethod
    def eisenberg_noe(cls, r2: float, net_liability_rates, horizon: float) -> "FeedbackSpec":
        """Feedback of the capital system: C_i = (1 - R2)/Lambda_i, g = 1 - s/T.

        Banks with Lambda_i <= 0 get a non-finite C marker; they cannot be
        shifted through F and are handled by the simulator on the effective
        liability scale instead.
        """
        lam = np.asarray(net_liability_rates, dtype=float)
        C = np.where(lam > 0, (1.0 - r2) / np.where(lam > 0, lam, 1.0), np.nan)
        if np.ndim(net_liability_rates) == 0:
            C = float(C)
        return cls("log1p_scaled", C, "linear_decay", float(horizon))

    # -- evaluation --------------------------------------------------------

    def g(self, t):
        if self.g_name == "linear_decay":
            return 1.0 - np.asarray(t, dtype=float) / self.g_param
        return np.full_like(np.asarray(t, dtype=float), self.g_param)

    def _f_scalar(self, z, param):
        if self.f_name == "linear":
            return param * z
        return np.log1p(param * z)

    def f(self, z, bank=None):
        """Evaluate F at z. With per-bank parameters, ``bank`` selects one
        bank's map; ``bank=None`` broadcasts elementwise over banks."""
        p = np.asarray(self.f_param, dtype=float)
        if p.ndim == 0:
            param = float(p)
        elif bank is not None:
            param = float(p[bank])
        else:
            param = p
        if np.any(~np.isfinite(np.asarray(param))):
            raise ValueError("F is undefined for banks with nonpositive net liabilities")
        return self._f_scalar(np.asarray(z, dtype=float), param)

    @property
    def lipschitz_bound(self) -> float:
        p = np.asarray(self.f_param, dtype=float)
        finite = p[np.isfinite(p)]
        return float(np.max(finite)) if finite.size else 0.0
