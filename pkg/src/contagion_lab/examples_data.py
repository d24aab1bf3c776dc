"""Bundled demonstration systems.

Two fixtures used by the reproduction scenarios and the test suite: a
3-bank fully connected ring whose initial capital is exactly 1 per bank,
and a 10-bank core-periphery pair (a dense variant and a reduced variant
with the periphery-periphery entries zeroed, which drops the rank to 4).
"""

from __future__ import annotations

import math

import numpy as np

from .finite_sim import BankParams, bank_params_from_network
from .network import BlockSpec, LiabilityNetwork, PeripheryGroup

THREE_BANK_RATES = np.array([
    [0.0, 2.0, 2.0],
    [2.0, 0.0, 2.0],
    [2.0, 2.0, 0.0],
])

CORE_PERIPHERY_FULL = np.array([
    [0.00, 15.01, 0.00, 0.00, 0.00, 0.00, 3.43, 2.87, 2.87, 2.80],
    [45.35, 0.00, 3.08, 2.36, 2.78, 2.80, 1.13, 0.94, 0.94, 0.92],
    [4.54, 2.23, 0.00, 0.04, 0.00, 0.05, 0.06, 0.05, 0.05, 0.00],
    [5.90, 2.90, 0.00, 0.00, 0.00, 0.06, 0.07, 0.00, 0.00, 0.00],
    [4.67, 2.29, 0.05, 0.04, 0.00, 0.00, 0.00, 0.05, 0.00, 0.05],
    [4.40, 2.16, 0.05, 0.04, 0.00, 0.00, 0.05, 0.05, 0.05, 0.00],
    [3.64, 4.47, 0.00, 0.04, 0.00, 0.05, 0.00, 0.00, 0.00, 0.05],
    [3.41, 4.18, 0.00, 0.04, 0.04, 0.04, 0.05, 0.00, 0.00, 0.04],
    [3.25, 3.99, 0.00, 0.00, 0.00, 0.00, 0.05, 0.04, 0.00, 0.00],
    [4.31, 5.29, 0.00, 0.05, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00],
])


def three_bank_network() -> LiabilityNetwork:
    return LiabilityNetwork(n=3, rates=THREE_BANK_RATES.copy(), societal=np.ones(3), horizon=1.0)


def three_bank_params() -> list[BankParams]:
    """Identical banks with initial capital exactly 1: x0 = 2/e, unit drift,
    volatility 1/2, pairwise asset correlation 1/2 realised through the
    common-noise loading sqrt(1/2), recovery 0.1."""
    return bank_params_from_network(
        three_bank_network(), x0=2.0 * math.exp(-1.0), mu=1.0, sigma=0.5,
        rho=math.sqrt(0.5), r2=0.1,
    )


def core_periphery_block_spec() -> BlockSpec:
    """Clean two-core block structure underlying the 10-bank example:
    two groups of four peripheral banks."""
    return BlockSpec(
        core=np.array([[0.0, 15.0], [45.0, 0.0]]),
        groups=(
            PeripheryGroup(size=4, core_to_group=[0.0, 3.0], group_to_core=[5.0, 2.0]),
            PeripheryGroup(size=4, core_to_group=[3.0, 1.0], group_to_core=[4.0, 3.0]),
        ),
        societal_rate=1.0,
    )


def core_periphery_full() -> LiabilityNetwork:
    return LiabilityNetwork(n=10, rates=CORE_PERIPHERY_FULL.copy(), societal=np.ones(10), horizon=1.0)


def core_periphery_reduced() -> LiabilityNetwork:
    rates = CORE_PERIPHERY_FULL.copy()
    rates[2:, 2:] = 0.0
    return LiabilityNetwork(n=10, rates=rates, societal=np.ones(10), horizon=1.0)


def core_periphery_params(net: LiabilityNetwork, solvency_ratio: float = 1.5,
                          mu: float = 0.1, sigma: float = 0.5, rho: float = 0.5,
                          r2: float = 0.5) -> list[BankParams]:
    """Parameters that keep every bank initially solvent on either variant:
    initial assets are the solvency ratio times the discounted net
    liabilities (floored for net lenders, who cannot default early)."""
    lam = net.net_liability_rates()
    T = net.horizon
    floor = 0.5
    x0 = solvency_ratio * np.maximum(lam * T, floor) * math.exp(-mu * T)
    return bank_params_from_network(net, x0=x0, mu=mu, sigma=sigma, rho=rho, r2=r2)
