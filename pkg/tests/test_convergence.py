import math

import numpy as np
import pytest

import contagion_lab as cl
from contagion_lab.convergence import (
    StudySpec,
    StudyTypeParams,
    _run_one,
    _study_mixture,
    compare_full_reduced,
    loss_distance,
    run_scaling_study,
)
from contagion_lab.examples_data import (
    core_periphery_full,
    core_periphery_params,
    core_periphery_reduced,
)
from contagion_lab.mean_field import MFConfig


class TestLossDistance:
    def test_identical_paths(self):
        a = np.cumsum(np.random.default_rng(0).uniform(0, 0.05, 50))
        assert loss_distance(a, a.copy(), dt=0.01) == 0.0

    def test_constant_offset(self):
        a = np.linspace(0.0, 0.5, 40)
        b = a + 0.07
        assert loss_distance(a, b, dt=0.01) == pytest.approx(0.07)

    def test_shift_absorbs_jump(self):
        n = 60
        a = np.zeros(n); a[30:] = 1.0
        b = np.zeros(n); b[31:] = 1.0
        assert loss_distance(a, b, dt=0.01) <= 0.01 + 1e-12

    def test_grid_mismatch_rejected(self):
        with pytest.raises(ValueError):
            loss_distance(np.zeros(5), np.zeros(6), dt=0.1)

    def _random_monotone(self, rng, n):
        incr = rng.uniform(0.0, 0.05, n - 1) * (rng.uniform(size=n - 1) < 0.3)
        return np.concatenate([[0.0], np.cumsum(incr)])

    @pytest.mark.parametrize("horizon", [None, 0.1])
    def test_pseudometric_properties(self, horizon):
        rng = np.random.default_rng(12)
        dt = 0.01
        for _ in range(300):
            n = 40
            a = self._random_monotone(rng, n)
            b = self._random_monotone(rng, n)
            c = self._random_monotone(rng, n)
            dab = loss_distance(a, b, dt, horizon)
            dba = loss_distance(b, a, dt, horizon)
            assert dab == pytest.approx(dba, abs=1e-14)
            dac = loss_distance(a, c, dt, horizon)
            dbc = loss_distance(b, c, dt, horizon)
            assert dac <= dab + dbc + 1e-12


def single_type_study(rho=0.0, r2=1.0):
    block = cl.BlockSpec(core=np.zeros((1, 1)), societal_rate=1.0)
    return StudySpec(
        block=block,
        type_params=(StudyTypeParams(x0_lo=0.56, x0_hi=1.1, mu=0.0, sigma=0.45),),
        target_net_rates=(1.0,),
        r2=r2,
        rho=rho,
        horizon=0.5,
    )


class TestScalingStudy:
    def test_zero_contagion_empirical_loss_is_indicator_mean(self):
        spec = single_type_study()
        grid = np.linspace(0.0, 0.5, 251)
        common = cl.brownian_common_path(5, grid)
        emp = _run_one(spec, 8, seed=3, dt=0.5 / 250, common=common)
        # direct recomputation from an identical simulation
        from contagion_lab.convergence import _study_network
        from contagion_lab.rngstreams import TAG_INITIAL_ASSETS, philox_stream

        net, labels, theta = _study_network(spec, 8, 3)
        rng_x0 = philox_stream(3, TAG_INITIAL_ASSETS)
        x0 = np.array([rng_x0.uniform(0.56, 1.1) for _ in range(net.n)])
        params = [cl.BankParams(x0=float(x0[i]), mu=0.0, sigma=0.45,
                                net_liability_rate=1.0, rho=0.0, r2=1.0, horizon=0.5)
                  for i in range(net.n)]
        traj = cl.simulate(net, params, cl.SimConfig(dt=0.5 / 250, horizon=0.5, seed=3, common_path=common))
        direct = (traj.default_times[None, :] <= grid[:, None] + 1e-15).mean(axis=1)
        assert np.array_equal(emp[:, 0], direct)

    def test_study_reruns_bit_identically(self):
        spec = single_type_study()
        cfg = MFConfig(dx=5e-3, dt=0.5 / 9000, x_max=3.2)
        a = run_scaling_study(spec, [2, 4], 3, dt=0.5 / 250, mf_config=cfg, common_seed=1)
        b = run_scaling_study(spec, [2, 4], 3, dt=0.5 / 250, mf_config=cfg, common_seed=1)
        assert np.array_equal(a.distances, b.distances)
        assert np.array_equal(a.mf_loss_paths, b.mf_loss_paths)

    def test_distances_shrink_with_size(self):
        spec = single_type_study()
        cfg = MFConfig(dx=4e-3, dt=0.5 / 14000, x_max=3.2)
        study = run_scaling_study(spec, [2, 32], 8, dt=0.5 / 250, mf_config=cfg, common_seed=2)
        means = study.mean_distance()
        assert means[1] < means[0]


class TestFullVsReduced:
    def test_reduced_against_itself_is_zero(self):
        net = core_periphery_reduced()
        params = core_periphery_params(net)
        report = compare_full_reduced(net, net, params, params, seeds=[0, 1, 2], dt=1 / 500)
        assert np.all(report.norm_diffs == 0.0)
        assert report.agreement_rate == 1.0

    def test_tiny_perturbation_is_noop(self):
        net = core_periphery_reduced()
        params = core_periphery_params(net)
        rates = net.rates.copy()
        rates[rates > 0] += 5e-9
        bumped = cl.LiabilityNetwork(n=net.n, rates=rates, societal=net.societal, horizon=1.0)
        report = compare_full_reduced(net, bumped, params, params, seeds=[0, 1, 2, 3], dt=1 / 500)
        assert np.all(report.norm_diffs == 0.0)
        assert report.agreement_rate == 1.0

    def test_printed_networks_stay_close(self):
        full = core_periphery_full()
        reduced = core_periphery_reduced()
        pf = core_periphery_params(full)
        pr = core_periphery_params(reduced)
        report = compare_full_reduced(full, reduced, pf, pr, seeds=range(10), dt=1 / 1000)
        assert report.median_norm_diff < 0.1
        assert report.agreement_rate >= 0.7
        # defaults actually occur in these runs
        assert np.isfinite(report.default_times_full).any()
