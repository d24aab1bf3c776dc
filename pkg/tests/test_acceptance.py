"""Acceptance suite: one test per criterion, each printing a PASS line with
the measured quantity so the run doubles as a report."""

import json
import math
import time

import numpy as np
import pytest

import contagion_lab as cl
from contagion_lab import cli
from contagion_lab.convergence import (
    StudySpec,
    StudyTypeParams,
    compare_full_reduced,
    run_scaling_study,
)
from contagion_lab.examples_data import (
    core_periphery_block_spec,
    core_periphery_full,
    core_periphery_params,
    core_periphery_reduced,
    three_bank_params,
)
from contagion_lab.mean_field import MeanFieldSolver, MFConfig

from oracles import first_passage_mixture, random_cascade_state


def report(name: str, detail: str) -> None:
    print(f"\nACCEPTANCE PASS: {name} ({detail})")


def stable_config(dx, sigma, T, x_max, **kw):
    dt = 0.45 * dx * dx / (sigma * sigma)
    n = max(1, round(T / dt))
    return MFConfig(dx=dx, dt=T / n, x_max=x_max, **kw)


def uniform_density(lo, hi):
    return lambda x: 1.0 / (hi - lo) if lo < x < hi else 0.0


def test_three_bank_initial_capital():
    params = three_bank_params()
    x0 = 2.0 * math.exp(-1.0)
    worst = max(abs(cl.capital(0.0, x0, p) - 1.0) for p in params)
    assert worst <= 1e-12
    report("3-bank initial capital", f"max |K(0) - 1| = {worst:.2e}")


def test_reduced_network_rank():
    fac = cl.rank_factorize(core_periphery_reduced(), rel_tol=1e-9)
    assert fac.k == 4
    report("reduced-network rank", f"k = {fac.k}")


def test_effective_exposure_matrix():
    spec = core_periphery_block_spec()
    net = cl.build_block_matrix(spec)
    fac = cl.rank_factorize(net)
    atlas = cl.atlas_from_labels(fac, spec.type_labels())
    eff = cl.effective_exposures(atlas, net.n)
    expected = np.array([
        [0.0, 15.0, 0.0, 12.0],
        [45.0, 0.0, 12.0, 4.0],
        [20.0, 8.0, 0.0, 0.0],
        [16.0, 12.0, 0.0, 0.0],
    ])
    worst = np.abs(eff - expected).max()
    assert worst <= 1e-8
    report("effective exposure matrix", f"max entry error = {worst:.2e}")


def test_cascade_oracle_equivalence():
    rng = np.random.default_rng(2024)
    trials = 10_000
    start = time.time()
    for trial in range(trials):
        n = int(rng.integers(2, 9))
        state, feedback = random_cascade_state(rng, n)
        got = np.sort(cl.resolve_cascade(state, feedback).defaulted)
        want = np.sort(cl.greatest_clearing_oracle(state, feedback))
        assert np.array_equal(got, want), f"disagreement at trial {trial}"
    elapsed = time.time() - start
    assert elapsed < 300.0
    report("cascade-oracle equivalence", f"{trials} trials, 100% agreement, {elapsed:.1f}s")


def _solvent_core_periphery():
    """Clean block network with the societal column lifted so every bank has
    strictly positive net liabilities (finite distances throughout)."""
    base = cl.build_block_matrix(core_periphery_block_spec())
    lam0 = base.net_liability_rates() - base.societal
    societal = np.maximum(1.0, -lam0 + 2.0)
    return cl.LiabilityNetwork(n=base.n, rates=base.rates, societal=societal, horizon=1.0)


def test_sign_equivalence():
    net = _solvent_core_periphery()
    mu = 0.1
    params = cl.bank_params_from_network(
        net, x0=1.3 * net.net_liability_rates() * math.exp(-mu), mu=mu,
        sigma=0.5, rho=0.4, r2=0.4,
    )
    violations = 0
    points = 0
    for seed in range(100):
        cfg = cl.SimConfig(dt=1 / 2000, horizon=1.0, seed=seed, common_seed=seed + 7)
        traj = cl.simulate(net, params, cfg)
        finite = np.isfinite(traj.X_paths)
        violations += int(np.sum((traj.X_paths[finite] <= 0) != (traj.K_paths[finite] <= 0)))
        points += int(finite.sum())
    assert violations == 0
    report("sign equivalence", f"{points} grid points, {violations} violations")


def test_mean_field_conservation():
    expo = np.array([
        [0.0, 1.0, 0.0, 0.8],
        [1.5, 0.0, 0.8, 0.3],
        [1.0, 0.5, 0.0, 0.0],
        [0.8, 0.6, 0.0, 0.0],
    ])
    sigmas = (0.05, 0.06, 0.055, 0.045)
    drifts = (-0.3, -0.25, -0.28, -0.35)
    types = tuple(
        cl.TypeSpec(weight=0.25, sigma=s, net_liability_rate=2.0, b=b,
                    distance_density=uniform_density(0.15 + 0.05 * i, 1.6 + 0.1 * i))
        for i, (s, b) in enumerate(zip(sigmas, drifts))
    )
    spec = cl.MixtureSpec(types=types, horizon=1.0, r2=0.3, rho=0.3, exposure=expo)
    J, n_steps = 2000, 2000
    cfg = MFConfig(dx=4.0 / J, dt=1.0 / n_steps, x_max=4.0)
    solver = MeanFieldSolver(spec, cfg)
    grid = np.linspace(0.0, 1.0, n_steps + 1)
    db0 = cl.brownian_common_path(3, grid).increments(grid)
    field = solver.initial_field()
    w = solver.trap
    worst = 0.0
    for k in range(n_steps):
        field = solver.step(field, float(db0[k]))
        per_type = np.zeros(spec.num_types)
        np.add.at(per_type, field.type_of, field.q_weights * (field.V @ w))
        drift = np.abs(per_type + field.type_losses() - 1.0).max()
        worst = max(worst, drift)
    assert worst <= 1e-4
    report("mean-field conservation",
           f"J={J}, steps={n_steps}, worst |mass+loss-1| = {worst:.2e}")


def test_feedback_free_scheme_accuracy():
    sigma, T, center, half = 0.4, 0.5, 0.45, 0.05
    dens = lambda x: max(0.0, 1.0 - abs(x - center) / half) / half
    spec = cl.MixtureSpec(
        types=(cl.TypeSpec(weight=1.0, sigma=sigma, net_liability_rate=1.0,
                           distance_density=dens),),
        horizon=T, r2=0.0, rho=0.0, exposure=np.zeros((1, 1)),
    )
    cfg = stable_config(1e-3, sigma, T, 2.4)
    start = time.time()
    solver = MeanFieldSolver(spec, cfg)
    out = solver.solve()
    elapsed = time.time() - start
    f0 = solver.initial_field()
    weights = f0.V[0] * solver.trap
    times = out.t_grid[:: max(1, out.t_grid.size // 100)]
    oracle = np.array([
        first_passage_mixture(f0.x, weights, -sigma ** 2 / 2.0, sigma, t) for t in times
    ])
    pde = out.losses_at(times)[:, 0]
    sup_err = float(np.abs(pde - oracle).max())
    assert sup_err <= 0.02
    assert elapsed < 60.0
    report("feedback-free scheme accuracy",
           f"sup error = {sup_err:.2e} (terminal loss {pde[-1]:.3f}), {elapsed:.1f}s")


def weak_feedback_spec(rho=0.0):
    expo = np.array([[0.2, 0.3], [0.3, 0.2]])
    return cl.MixtureSpec(
        types=(cl.TypeSpec(weight=0.6, sigma=0.4, net_liability_rate=2.0,
                           distance_density=uniform_density(0.4, 2.0)),
               cl.TypeSpec(weight=0.4, sigma=0.35, net_liability_rate=2.5,
                           distance_density=uniform_density(0.5, 2.2))),
        horizon=0.5, r2=0.3, rho=rho, exposure=expo,
    )


def test_picard_stepper_cross_validation():
    spec = weak_feedback_spec()
    cfg = stable_config(4e-3, 0.4, 0.5, 3.5)
    solver = MeanFieldSolver(spec, cfg)
    ok, margin, _ = solver.check_smallness()
    assert ok and margin >= 0.3
    pic = solver.picard_solve(tol=1e-9)
    assert pic.converged
    out = solver.solve()
    diff = float(np.abs(out.loss_paths[-1] - pic.loss_paths[-1]).max())
    assert diff <= 0.04  # 2x the 2% per-scheme tolerance
    ratios = [b / a for a, b in zip(pic.residuals, pic.residuals[1:]) if a > 0]
    assert ratios and all(r < 1.0 for r in ratios[1:])
    report("picard/stepper cross-validation",
           f"margin {margin:.2f}, terminal diff {diff:.2e}, tail ratio {ratios[-1]:.3f}")


def test_jump_reproduction():
    mixture = cli.heatplot_mixture()
    cfg = stable_config(4e-3, 0.35, 1.0, 3.9)
    solver = MeanFieldSolver(mixture, cfg)
    out = solver.solve(noise=11)
    assert len(out.jumps) == 1
    jump = out.jumps[0]
    d = jump.type_mass_jumps
    assert d[0] > 0.1 and d[3] > 0.1
    assert d[2] <= 0.02
    report("jump reproduction",
           f"one jump at t={jump.time:.3f}, type losses {np.round(d, 3).tolist()}")


def test_no_jump_guarantee():
    rng = np.random.default_rng(77)
    accepted = 0
    attempts = 0
    worst_inc = 0.0
    while accepted < 50:
        attempts += 1
        assert attempts < 500, "spec generator failed to find smallness-passing specs"
        L = int(rng.integers(1, 3))
        sigmas = rng.uniform(0.25, 0.45, L)
        lams = rng.uniform(1.5, 3.0, L)
        los = rng.uniform(0.25, 0.5, L)
        widths = rng.uniform(0.8, 1.5, L)
        weights = rng.uniform(0.3, 1.0, L)
        weights = weights / weights.sum()
        expo = rng.uniform(0.0, 0.6, (L, L))
        types = tuple(
            cl.TypeSpec(weight=float(weights[i]), sigma=float(sigmas[i]),
                        net_liability_rate=float(lams[i]),
                        distance_density=uniform_density(float(los[i]), float(los[i] + widths[i])))
            for i in range(L)
        )
        spec = cl.MixtureSpec(types=types, horizon=0.3, r2=float(rng.uniform(0.2, 0.8)),
                              rho=float(rng.uniform(0.0, 0.5)), exposure=expo)
        cfg = stable_config(8e-3, float(sigmas.max()), 0.3, 3.4)
        solver = MeanFieldSolver(spec, cfg)
        ok, margin, _ = solver.check_smallness()
        if not ok or margin < 0.05:
            continue
        accepted += 1
        out = solver.solve(noise=int(rng.integers(0, 1 << 30)))
        assert len(out.jumps) == 0
        max_inc = float(np.diff(out.loss_paths, axis=0).max(initial=0.0))
        assert max_inc < solver.explosion_threshold
        worst_inc = max(worst_inc, max_inc / solver.explosion_threshold)
    report("no-jump guarantee",
           f"50 smallness-passing specs, zero jumps, worst increment "
           f"{worst_inc:.3f} of threshold")


def test_convergence_trend():
    start = time.time()
    # feedback-free single type: CLT rate in the multiplier
    single = StudySpec(
        block=cl.BlockSpec(core=np.zeros((1, 1)), societal_rate=1.0),
        type_params=(StudyTypeParams(x0_lo=0.56, x0_hi=1.1, mu=0.0, sigma=0.45),),
        target_net_rates=(1.0,),
        r2=1.0, rho=0.0, horizon=0.5,
    )
    cfg = MFConfig(dx=4e-3, dt=0.5 / 14000, x_max=3.2)
    study = run_scaling_study(single, [4, 16, 64], 20, dt=0.5 / 250,
                              mf_config=cfg, common_seed=2)
    slope = study.loglog_slope()
    means = study.mean_distance()
    assert -0.65 <= slope <= -0.35
    assert means[-1] < means[0]

    # weak feedback, four types, shared common noise: monotone decrease
    block = core_periphery_block_spec()
    lams = (80.0, 80.0, 30.0, 30.0)
    tparams = tuple(
        StudyTypeParams(x0_lo=lam * 0.5 * math.exp(0.12), x0_hi=lam * 0.5 * math.exp(0.9),
                        mu=0.0, sigma=0.5)
        for lam in lams
    )
    weak = StudySpec(block=block, type_params=tparams, target_net_rates=lams,
                     r2=0.6, rho=0.4, horizon=0.5)
    cfg4 = MFConfig(dx=4e-3, dt=0.5 / 16000, x_max=2.9)
    study4 = run_scaling_study(weak, [4, 16, 64], 20, dt=0.5 / 250,
                               mf_config=cfg4, common_seed=5)
    m4 = study4.mean_distance()
    assert m4[0] > m4[1] > m4[2]
    elapsed = time.time() - start
    assert elapsed < 600.0
    report("convergence trend",
           f"slope {slope:.3f}; weak-feedback means {np.round(m4, 4).tolist()}; {elapsed:.0f}s")


def test_full_vs_reduced():
    full = core_periphery_full()
    reduced = core_periphery_reduced()
    pf = core_periphery_params(full)
    pr = core_periphery_params(reduced)
    rep = compare_full_reduced(full, reduced, pf, pr, seeds=range(100), dt=1 / 2000)
    assert rep.median_norm_diff < 0.05
    assert rep.agreement_rate >= 0.80
    assert np.isfinite(rep.default_times_full).any()
    report("full vs reduced",
           f"median norm diff {rep.median_norm_diff:.4f}, "
           f"survivor agreement {rep.agreement_rate:.0%}")


def test_determinism(tmp_path):
    scenarios = [
        {"mode": "reproduce-3bank", "common_seed": 100, "dt": 1 / 500},
        {"mode": "cascade-test", "trials": 200, "n_min": 2, "n_max": 6},
        {
            "mode": "solve-mf",
            "mixture": {
                "types": [{"weight": 1.0, "sigma": 0.4, "net_liability_rate": 1.0,
                           "density": {"kind": "uniform_distance", "lo": 0.3, "hi": 1.3}}],
                "horizon": 0.2, "r2": 0.2, "rho": 0.4, "exposure": [[0.5]],
            },
            "grid": {"dx": 0.01, "x_max": 3.0, "snapshot_count": 3},
            "common_seed": 9,
        },
    ]
    compared = 0
    for i, scenario in enumerate(scenarios):
        cfg = cli.parse_config(scenario)
        out1 = cli.run(cfg, tmp_path / f"a{i}")
        out2 = cli.run(cfg, tmp_path / f"b{i}")
        files1 = sorted(p.name for p in out1.iterdir())
        files2 = sorted(p.name for p in out2.iterdir())
        assert files1 == files2
        for name in files1:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
            compared += 1
    report("determinism", f"{compared} files byte-identical across reruns")
