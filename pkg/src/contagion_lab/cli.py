"""Scenario runner: parse one JSON config, dispatch to the simulators, and
emit the documented CSV/JSON outputs plus a manifest with content hashes.

Exit codes: 0 success, 1 validation problem, 2 numerical failure, 3 I/O
failure.  Identical configs produce byte-identical output trees.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .convergence import (
    StudySpec,
    StudyTypeParams,
    compare_full_reduced,
    loss_distance,
    run_scaling_study,
)
from .errors import ConfigError, NumericalError
from .examples_data import (
    core_periphery_full,
    core_periphery_params,
    core_periphery_reduced,
    three_bank_network,
    three_bank_params,
)
from .feedback import FeedbackSpec
from .finite_sim import (
    BankParams,
    SimConfig,
    SystemState,
    Trajectory,
    bank_params_from_network,
    greatest_clearing_oracle,
    resolve_cascade,
    simulate,
)
from .mean_field import MeanFieldSolver, MFConfig, MixtureSpec, TypeSpec, check_initial_decay
from .network import BlockSpec, LiabilityNetwork, NoiseSpec, PeripheryGroup, rank_factorize
from .outputs import write_csv, write_json, write_manifest
from .rngstreams import philox_stream

MODES = (
    "simulate-finite",
    "solve-mf",
    "picard",
    "cascade-test",
    "scaling-study",
    "full-vs-reduced",
    "reproduce-3bank",
    "reproduce-coreperiphery",
    "reproduce-heatplots",
)


@dataclass
class ScenarioConfig:
    mode: str
    seed: int
    common_seed: int
    out: str
    body: dict
    raw: dict


# ---------------------------------------------------------------------------
# validation helpers


def _expect_keys(d: dict, allowed: set, path: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"unknown key {path}{name}")


def _get(d: dict, key: str, path: str, required: bool = True, default=None):
    if key not in d:
        if required:
            raise ConfigError(f"missing key {path}{key}")
        return default
    return d[key]


def _number(d: dict, key: str, path: str, required: bool = True, default=None,
            lo=None, hi=None, lo_open=False):
    val = _get(d, key, path, required, default)
    if val is None:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{path}{key} must be a number")
    v = float(val)
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(f"{path}{key} must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and v > hi:
        raise ConfigError(f"{path}{key} must be <= {hi}")
    return v


def _int(d: dict, key: str, path: str, required: bool = True, default=None, lo=None):
    val = _get(d, key, path, required, default)
    if val is None:
        return None
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"{path}{key} must be an integer")
    if lo is not None and val < lo:
        raise ConfigError(f"{path}{key} must be >= {lo}")
    return val


def _matrix(d: dict, key: str, path: str, required: bool = True):
    val = _get(d, key, path, required)
    if val is None:
        return None
    try:
        arr = np.array(val, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}{key} must be a numeric matrix") from exc
    if arr.ndim != 2:
        raise ConfigError(f"{path}{key} must be a 2-d matrix")
    return arr


# ---------------------------------------------------------------------------
# sub-parsers


def _parse_network(d, path: str) -> LiabilityNetwork:
    if not isinstance(d, dict):
        raise ConfigError(f"{path} must be an object")
    if "file" in d:
        _expect_keys(d, {"file"}, path + ".")
        try:
            text = Path(d["file"]).read_text()
        except OSError as exc:
            raise ConfigError(f"{path}.file: cannot read {d['file']}: {exc}") from exc
        return LiabilityNetwork.from_json(text)
    _expect_keys(d, {"n", "T", "rates", "societal"}, path + ".")
    rates = _matrix(d, "rates", path + ".")
    n = _int(d, "n", path + ".", lo=1)
    societal = np.array(_get(d, "societal", path + "."), dtype=float)
    T = _number(d, "T", path + ".", lo=0, lo_open=True)
    try:
        return LiabilityNetwork(n=n, rates=rates, societal=societal, horizon=T)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_block(d, path: str) -> BlockSpec:
    _expect_keys(d, {"core", "groups", "societal_rate"}, path + ".")
    core = _matrix(d, "core", path + ".")
    groups = []
    for gi, g in enumerate(_get(d, "groups", path + ".", default=[], required=False) or []):
        gpath = f"{path}.groups[{gi}]."
        _expect_keys(g, {"size", "core_to_group", "group_to_core"}, gpath)
        groups.append(PeripheryGroup(
            size=_int(g, "size", gpath, lo=0),
            core_to_group=np.array(_get(g, "core_to_group", gpath), dtype=float),
            group_to_core=np.array(_get(g, "group_to_core", gpath), dtype=float),
        ))
    rate = _number(d, "societal_rate", path + ".", lo=0.0)
    try:
        return BlockSpec(core=core, groups=tuple(groups), societal_rate=rate)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_theta(d, path: str) -> NoiseSpec:
    if d is None:
        return NoiseSpec.dirac()
    _expect_keys(d, {"distribution", "half_width", "points", "weights"}, path + ".")
    kind = _get(d, "distribution", path + ".")
    try:
        if kind == "dirac_zero":
            return NoiseSpec.dirac()
        if kind == "uniform":
            return NoiseSpec.uniform(_number(d, "half_width", path + ".", lo=0.0, hi=1.0))
        if kind == "discrete":
            return NoiseSpec.discrete(_get(d, "points", path + "."), _get(d, "weights", path + "."))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raise ConfigError(f"{path}.distribution must be dirac_zero, uniform, or discrete")


def _density_from_config(d, path: str):
    _expect_keys(d, {"kind", "lo", "hi", "center", "half_width"}, path + ".")
    kind = _get(d, "kind", path + ".")
    if kind == "uniform_assets":
        lo = _number(d, "lo", path + ".", lo=0.0, lo_open=True)
        hi = _number(d, "hi", path + ".")
        if hi <= lo:
            raise ConfigError(f"{path}.hi must exceed lo")
        return "asset", (lambda a, lo=lo, hi=hi: 1.0 / (hi - lo) if lo < a < hi else 0.0)
    if kind == "uniform_distance":
        lo = _number(d, "lo", path + ".", lo=0.0)
        hi = _number(d, "hi", path + ".")
        if hi <= lo:
            raise ConfigError(f"{path}.hi must exceed lo")
        return "distance", (lambda x, lo=lo, hi=hi: 1.0 / (hi - lo) if lo < x < hi else 0.0)
    if kind == "triangle_distance":
        c = _number(d, "center", path + ".", lo=0.0, lo_open=True)
        w = _number(d, "half_width", path + ".", lo=0.0, lo_open=True)
        return "distance", (lambda x, c=c, w=w: max(0.0, 1.0 - abs(x - c) / w) / w)
    raise ConfigError(f"{path}.kind must be uniform_assets, uniform_distance, or triangle_distance")


def _parse_mixture(d, path: str) -> MixtureSpec:
    _expect_keys(d, {"types", "horizon", "r2", "rho", "exposure", "theta", "theta_quadrature"}, path + ".")
    types = []
    raw_types = _get(d, "types", path + ".")
    if not isinstance(raw_types, list) or not raw_types:
        raise ConfigError(f"{path}.types must be a nonempty list")
    for ti, t in enumerate(raw_types):
        tpath = f"{path}.types[{ti}]."
        _expect_keys(t, {"weight", "sigma", "net_liability_rate", "b", "mu", "density"}, tpath)
        kind, dens = _density_from_config(_get(t, "density", tpath), tpath + "density")
        types.append(TypeSpec(
            weight=_number(t, "weight", tpath, lo=0.0),
            sigma=_number(t, "sigma", tpath, lo=0.0, lo_open=True),
            net_liability_rate=_number(t, "net_liability_rate", tpath, lo=0.0, lo_open=True),
            b=_number(t, "b", tpath, required=False),
            mu=_number(t, "mu", tpath, required=False, default=0.0),
            asset_density=dens if kind == "asset" else None,
            distance_density=dens if kind == "distance" else None,
        ))
    expo = _matrix(d, "exposure", path + ".", required=False)
    try:
        return MixtureSpec(
            types=tuple(types),
            horizon=_number(d, "horizon", path + ".", lo=0.0, lo_open=True),
            r2=_number(d, "r2", path + ".", lo=0.0, hi=1.0),
            rho=_number(d, "rho", path + ".", required=False, default=0.0),
            theta=_parse_theta(d.get("theta"), path + ".theta"),
            theta_quadrature=_int(d, "theta_quadrature", path + ".", required=False, default=5, lo=1),
            exposure=expo,
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_grid(d, path: str, sigma_max: float, horizon: float) -> MFConfig:
    _expect_keys(d, {"dx", "dt", "x_max", "snapshot_count", "explosion_threshold"}, path + ".")
    dx = _number(d, "dx", path + ".", lo=0.0, lo_open=True)
    x_max = _number(d, "x_max", path + ".", lo=0.0, lo_open=True)
    dt = _number(d, "dt", path + ".", required=False)
    if dt is None:
        dt = 0.45 * dx * dx / (sigma_max * sigma_max)
        dt = horizon / max(1, round(horizon / dt))
    snaps = _int(d, "snapshot_count", path + ".", required=False, default=0, lo=0)
    snapshot_times = tuple(np.linspace(0.0, horizon, snaps).tolist()) if snaps else ()
    thr = _number(d, "explosion_threshold", path + ".", required=False)
    return MFConfig(dx=dx, dt=dt, x_max=x_max, snapshot_times=snapshot_times,
                    explosion_threshold=thr)


# ---------------------------------------------------------------------------
# config parsing


_TOP_KEYS = {
    "simulate-finite": {"network", "params", "dt"},
    "solve-mf": {"mixture", "grid", "loss_output_points"},
    "picard": {"mixture", "grid", "tol", "max_iter", "loss_output_points"},
    "cascade-test": {"trials", "n_min", "n_max"},
    "scaling-study": {"study", "m_list", "seeds_per_m", "dt", "mf_grid", "distance_horizon"},
    "full-vs-reduced": {"num_seeds", "dt", "params"},
    "reproduce-3bank": {"dt"},
    "reproduce-coreperiphery": {"dt", "params"},
    "reproduce-heatplots": {"grid"},
}


def parse_config(source) -> ScenarioConfig:
    """Validate a scenario config from a path, JSON text, or dict.

    Fills the documented defaults (seed 0, dt = T/2000) and rejects unknown
    keys with their field path.
    """
    if isinstance(source, (str, Path)) and not str(source).lstrip().startswith("{"):
        try:
            data = json.loads(Path(source).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    elif isinstance(source, (str, Path)):
        try:
            data = json.loads(str(source))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    else:
        data = dict(source)
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    mode = data.get("mode")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {', '.join(MODES)}")
    allowed = {"mode", "seed", "common_seed", "out"} | _TOP_KEYS[mode]
    _expect_keys(data, allowed, "")
    seed = _int(data, "seed", "", required=False, default=0, lo=0)
    common_seed = _int(data, "common_seed", "", required=False, default=0, lo=0)
    out = _get(data, "out", "", required=False, default="out")
    body = {k: v for k, v in data.items() if k in _TOP_KEYS[mode]}
    return ScenarioConfig(mode=mode, seed=seed, common_seed=common_seed,
                          out=str(out), body=body, raw=data)


# ---------------------------------------------------------------------------
# emission helpers


def _emit_trajectory(out_dir: Path, traj: Trajectory, net: LiabilityNetwork) -> list[Path]:
    files = []
    n = net.n
    rows = []
    for k, t in enumerate(traj.grid):
        for b in range(n):
            alive = 1 if traj.default_times[b] > t else 0
            rows.append((t, b, traj.X_paths[k, b], traj.K_paths[k, b], alive))
    p = out_dir / "trajectories.csv"
    write_csv(p, ["t", "bank", "X", "K", "alive"], rows)
    files.append(p)

    def round_of(bank):
        for rep in traj.cascade_reports:
            r = rep.round_of(bank)
            if r >= 0:
                return r
        return -1

    p = out_dir / "defaults.csv"
    write_csv(p, ["bank", "tau", "cascade_round"],
              [(b, traj.default_times[b], round_of(b)) for b in range(n)])
    files.append(p)

    fac = rank_factorize(net)
    from .finite_sim import empirical_losses

    channel = empirical_losses(traj, fac)
    rows = []
    for k, t in enumerate(traj.grid):
        for c in range(fac.k):
            rows.append((t, c, channel[k, c]))
    p = out_dir / "losses.csv"
    write_csv(p, ["t", "channel", "value"], rows)
    files.append(p)

    p = out_dir / "cascades.json"
    write_json(p, [rep.to_jsonable() for rep in traj.cascade_reports])
    files.append(p)
    return files


def _emit_mf(out_dir: Path, solver: MeanFieldSolver, out, loss_output_points: int = 2001) -> list[Path]:
    files = []
    stride = max(1, (out.t_grid.size - 1) // max(1, loss_output_points - 1))
    rows = []
    for k in range(0, out.t_grid.size, stride):
        for l in range(out.loss_paths.shape[1]):
            rows.append((out.t_grid[k], l, out.loss_paths[k, l]))
    p = out_dir / "mf_losses.csv"
    write_csv(p, ["t", "type", "loss"], rows)
    files.append(p)

    p = out_dir / "mf_jumps.json"
    write_json(p, [j.to_jsonable() for j in out.jumps])
    files.append(p)

    rows = []
    for t, dens in out.snapshots:
        for l in range(dens.shape[0]):
            for j, x in enumerate(out.x):
                rows.append((t, l, x, dens[l, j]))
    p = out_dir / "mf_density.csv"
    write_csv(p, ["t", "type", "x", "value"], rows)
    files.append(p)

    f0 = solver.initial_field()
    small_ok, small_margin, small_per = solver.check_smallness(f0)
    nj_ok, nj_margin, nj_per = solver.check_no_jump(f0, 0.0)
    decay = []
    for l in range(solver.spec.num_types):
        fit = check_initial_decay(f0.type_density(l), solver.x)
        decay.append({
            "type": l, "beta": fit.beta, "c_star": fit.c_star,
            "x_star": fit.x_star, "d_star": fit.d_star, "holds": fit.holds,
        })
    p = out_dir / "mf_checks.json"
    write_json(p, {
        "smallness": {"passed": small_ok, "margin": small_margin, "per_type": list(small_per)},
        "no_jump_t0": {"passed": nj_ok, "margin": nj_margin, "per_type": list(nj_per)},
        "initial_decay": decay,
    })
    files.append(p)
    return files


# ---------------------------------------------------------------------------
# mode runners


def _run_simulate_finite(cfg: ScenarioConfig, out_dir: Path, net=None, params=None) -> list[Path]:
    body = cfg.body
    if net is None:
        net = _parse_network(_get(body, "network", ""), "network")
        pd = _get(body, "params", "")
        _expect_keys(pd, {"x0", "mu", "sigma", "rho", "r2"}, "params.")
        x0 = _get(pd, "x0", "params.")
        params = bank_params_from_network(
            net,
            x0=np.array(x0, dtype=float) if isinstance(x0, list) else _number(pd, "x0", "params.", lo=0, lo_open=True),
            mu=_number(pd, "mu", "params."),
            sigma=_number(pd, "sigma", "params.", lo=0.0),
            rho=_number(pd, "rho", "params.", lo=-1.0, hi=1.0),
            r2=_number(pd, "r2", "params.", lo=0.0, hi=1.0),
        )
    dt = _number(body, "dt", "", required=False, default=net.horizon / 2000.0)
    sim_cfg = SimConfig(dt=dt, horizon=net.horizon, seed=cfg.seed, common_seed=cfg.common_seed)
    traj = simulate(net, params, sim_cfg)
    return _emit_trajectory(out_dir, traj, net)


def _run_solve_mf(cfg: ScenarioConfig, out_dir: Path, mixture=None, grid_cfg=None) -> list[Path]:
    body = cfg.body
    if mixture is None:
        mixture = _parse_mixture(_get(body, "mixture", ""), "mixture")
        sig_max = max(float(np.max(t.sigma.values)) for t in mixture.types)
        grid_cfg = _parse_grid(_get(body, "grid", ""), "grid", sig_max, mixture.horizon)
    solver = MeanFieldSolver(mixture, grid_cfg)
    out = solver.solve(cfg.common_seed)
    points = _int(body, "loss_output_points", "", required=False, default=2001, lo=2)
    return _emit_mf(out_dir, solver, out, points)


def _run_picard(cfg: ScenarioConfig, out_dir: Path) -> list[Path]:
    body = cfg.body
    mixture = _parse_mixture(_get(body, "mixture", ""), "mixture")
    if mixture.rho != 0.0:
        raise ConfigError("mixture.rho must be 0 for the fixed-point solver")
    sig_max = max(float(np.max(t.sigma.values)) for t in mixture.types)
    grid_cfg = _parse_grid(_get(body, "grid", ""), "grid", sig_max, mixture.horizon)
    solver = MeanFieldSolver(mixture, grid_cfg)
    tol = _number(body, "tol", "", required=False, default=1e-6, lo=0.0, lo_open=True)
    max_iter = _int(body, "max_iter", "", required=False, default=30, lo=1)
    res = solver.picard_solve(tol=tol, max_iter=max_iter)
    if not res.converged:
        raise NumericalError(
            f"fixed-point iteration did not reach {tol} in {max_iter} passes; "
            f"final residual {res.residuals[-1]:.3e}"
        )
    files = []
    points = _int(body, "loss_output_points", "", required=False, default=2001, lo=2)
    stride = max(1, (res.t_grid.size - 1) // (points - 1))
    rows = []
    for k in range(0, res.t_grid.size, stride):
        for l in range(res.loss_paths.shape[1]):
            rows.append((res.t_grid[k], l, res.loss_paths[k, l]))
    p = out_dir / "mf_losses.csv"
    write_csv(p, ["t", "type", "loss"], rows)
    files.append(p)
    p = out_dir / "picard_history.json"
    write_json(p, {"residuals": res.residuals, "converged": res.converged})
    files.append(p)
    return files


def _run_cascade_test(cfg: ScenarioConfig, out_dir: Path) -> list[Path]:
    body = cfg.body
    trials = _int(body, "trials", "", required=False, default=1000, lo=1)
    n_min = _int(body, "n_min", "", required=False, default=2, lo=2)
    n_max = _int(body, "n_max", "", required=False, default=8, lo=n_min)
    rng = philox_stream(cfg.seed, 0xCA5)
    rows = []
    mismatches = 0
    for trial in range(trials):
        n = int(rng.integers(n_min, n_max + 1))
        state, feedback = _random_cascade_state(rng, n)
        got = resolve_cascade(state, feedback)
        want = greatest_clearing_oracle(state, feedback)
        agree = bool(np.array_equal(np.sort(got.defaulted), np.sort(want)))
        mismatches += not agree
        rows.append((trial, n, int(agree)))
    p = out_dir / "cascade_equiv.csv"
    write_csv(p, ["trial", "n", "agree"], rows)
    if mismatches:
        raise NumericalError(f"{mismatches} cascade/oracle disagreements out of {trials}")
    return [p]


def _random_cascade_state(rng: np.random.Generator, n: int):
    """Randomized left-limit state with nonnegative pairwise exposures and a
    bank pinned near the boundary often enough to exercise cascades."""
    k = int(rng.integers(1, min(n, 4) + 1))
    u = rng.uniform(0.0, 1.5, size=(n, k))
    v = rng.uniform(0.0, 1.5, size=(k, n))
    x = rng.uniform(-0.05, 1.2, size=n)
    if rng.uniform() < 0.7:
        x[int(rng.integers(0, n))] = 0.0
    alive = rng.uniform(size=n) < 0.9
    losses = rng.uniform(0.0, 0.2, size=k)
    state = SystemState(
        t=float(rng.uniform(0.0, 0.9)), X=x, alive=alive, losses=losses,
        feedback_integrals=np.zeros(n), default_times=np.where(alive, np.inf, 0.0),
        u=u, v=v, channel_g_integrals=rng.uniform(0.0, 0.1, size=k),
    )
    if rng.uniform() < 0.5:
        feedback = FeedbackSpec.linear(float(rng.uniform(0.2, 2.0)), "linear_decay", 1.0)
    else:
        feedback = FeedbackSpec.log1p_scaled(rng.uniform(0.3, 3.0, size=n), "linear_decay", 1.0)
    return state, feedback


def _run_scaling_study(cfg: ScenarioConfig, out_dir: Path) -> list[Path]:
    body = cfg.body
    sd = _get(body, "study", "")
    _expect_keys(sd, {"block", "type_params", "target_net_rates", "r2", "rho", "horizon", "theta"}, "study.")
    block = _parse_block(_get(sd, "block", "study."), "study.block")
    tps = []
    for ti, tp in enumerate(_get(sd, "type_params", "study.")):
        tpath = f"study.type_params[{ti}]."
        _expect_keys(tp, {"x0_lo", "x0_hi", "mu", "sigma"}, tpath)
        tps.append(StudyTypeParams(
            x0_lo=_number(tp, "x0_lo", tpath, lo=0.0, lo_open=True),
            x0_hi=_number(tp, "x0_hi", tpath, lo=0.0, lo_open=True),
            mu=_number(tp, "mu", tpath),
            sigma=_number(tp, "sigma", tpath, lo=0.0, lo_open=True),
        ))
    spec = StudySpec(
        block=block,
        type_params=tuple(tps),
        target_net_rates=tuple(float(x) for x in _get(sd, "target_net_rates", "study.")),
        r2=_number(sd, "r2", "study.", lo=0.0, hi=1.0),
        rho=_number(sd, "rho", "study.", lo=-1.0, hi=1.0),
        horizon=_number(sd, "horizon", "study.", lo=0.0, lo_open=True),
        theta=_parse_theta(sd.get("theta"), "study.theta"),
    )
    m_list = _get(body, "m_list", "")
    seeds_per_m = _int(body, "seeds_per_m", "", lo=1)
    dt = _number(body, "dt", "", lo=0.0, lo_open=True)
    gd = _get(body, "mf_grid", "")
    sig_max = max(tp.sigma for tp in tps)
    grid_cfg = _parse_grid(gd, "mf_grid", sig_max, spec.horizon)
    horizon = _number(body, "distance_horizon", "", required=False)
    study = run_scaling_study(
        spec, m_list, seeds_per_m, dt, grid_cfg,
        common_seed=cfg.common_seed, distance_horizon=horizon,
        workers=worker_count(),
    )
    L = len(tps)
    p = out_dir / "scaling_study.csv"
    write_csv(p, ["m", "seed"] + [f"distance_type_{t}" for t in range(L)], study.rows())
    files = [p]
    p = out_dir / "study_manifest.json"
    write_json(p, {
        "m_list": study.m_list, "seeds_per_m": seeds_per_m,
        "common_seed": cfg.common_seed, "seed": cfg.seed,
        "mean_distance": study.mean_distance().tolist(),
        "standard_error": study.standard_error().tolist(),
        "loglog_slope": study.loglog_slope(),
    })
    files.append(p)
    return files


def _fullred_params(body) -> tuple:
    pd = _get(body, "params", "", required=False, default={}) or {}
    _expect_keys(pd, {"solvency_ratio", "mu", "sigma", "rho", "r2"}, "params.")
    kwargs = dict(
        solvency_ratio=_number(pd, "solvency_ratio", "params.", required=False, default=1.5, lo=1.0, lo_open=True),
        mu=_number(pd, "mu", "params.", required=False, default=0.1),
        sigma=_number(pd, "sigma", "params.", required=False, default=0.5, lo=0.0, lo_open=True),
        rho=_number(pd, "rho", "params.", required=False, default=0.5, lo=-1.0, hi=1.0),
        r2=_number(pd, "r2", "params.", required=False, default=0.5, lo=0.0, hi=1.0),
    )
    full = core_periphery_full()
    reduced = core_periphery_reduced()
    return full, reduced, core_periphery_params(full, **kwargs), core_periphery_params(reduced, **kwargs)


def _run_full_vs_reduced(cfg: ScenarioConfig, out_dir: Path) -> list[Path]:
    body = cfg.body
    num_seeds = _int(body, "num_seeds", "", required=False, default=100, lo=1)
    dt = _number(body, "dt", "", required=False, default=1.0 / 2000, lo=0.0, lo_open=True)
    full, reduced, pf, pr = _fullred_params(body)
    report = compare_full_reduced(
        full, reduced, pf, pr, seeds=range(cfg.seed, cfg.seed + num_seeds),
        dt=dt, common_seed=cfg.common_seed,
    )
    p = out_dir / "full_vs_reduced.csv"
    write_csv(p, ["seed", "norm_diff", "survivor_agreement"], report.rows())
    files = [p]
    p = out_dir / "study_manifest.json"
    write_json(p, {
        "num_seeds": num_seeds, "seed": cfg.seed, "common_seed": cfg.common_seed,
        "median_norm_diff": report.median_norm_diff,
        "agreement_rate": report.agreement_rate,
    })
    files.append(p)
    return files


def _run_reproduce_3bank(cfg: ScenarioConfig, out_dir: Path) -> list[Path]:
    net = three_bank_network()
    params = three_bank_params()
    return _run_simulate_finite(cfg, out_dir, net=net, params=params)


def _run_reproduce_coreperiphery(cfg: ScenarioConfig, out_dir: Path) -> list[Path]:
    body = cfg.body
    dt = _number(body, "dt", "", required=False, default=1.0 / 2000, lo=0.0, lo_open=True)
    full, reduced, pf, pr = _fullred_params(body)
    sim_cfg = SimConfig(dt=dt, horizon=full.horizon, seed=cfg.seed, common_seed=cfg.common_seed)
    tf = simulate(full, pf, sim_cfg)
    tr = simulate(reduced, pr, sim_cfg)
    files = []
    for tag, traj in (("full", tf), ("reduced", tr)):
        p = out_dir / f"defaults_{tag}.csv"

        def round_of(bank, reports=traj.cascade_reports):
            for rep in reports:
                r = rep.round_of(bank)
                if r >= 0:
                    return r
            return -1

        write_csv(p, ["bank", "tau", "cascade_round"],
                  [(b, traj.default_times[b], round_of(b)) for b in range(full.n)])
        files.append(p)
    both = np.isfinite(tf.default_times) & np.isfinite(tr.default_times)
    norm = float(np.linalg.norm(tf.default_times[both] - tr.default_times[both])) if both.any() else 0.0
    agree = bool(np.array_equal(np.isfinite(tf.default_times), np.isfinite(tr.default_times)))
    p = out_dir / "full_vs_reduced.csv"
    write_csv(p, ["seed", "norm_diff", "survivor_agreement"], [(cfg.seed, norm, int(agree))])
    files.append(p)
    return files


def heatplot_mixture() -> MixtureSpec:
    """Four-type system tuned to reproduce the qualitative cascade story:
    the low tails of types 0 and 3 hit the boundary together, wiping both
    out; type 1 is downgraded but mostly survives; type 2 is exposed only
    to type 1 and barely moves."""
    expo = np.array([
        [0.0, 15.0, 0.0, 12.0],
        [45.0, 0.0, 12.0, 4.0],
        [20.0, 8.0, 0.0, 0.0],
        [16.0, 12.0, 0.0, 0.0],
    ])

    def uniform(lo, hi):
        return lambda x: 1.0 / (hi - lo) if lo < x < hi else 0.0

    types = (
        TypeSpec(weight=0.1, sigma=0.35, net_liability_rate=3.0, b=-0.3,
                 distance_density=uniform(0.12, 1.2)),
        TypeSpec(weight=0.1, sigma=0.35, net_liability_rate=30.0, b=0.05,
                 distance_density=uniform(0.7, 2.0)),
        TypeSpec(weight=0.4, sigma=0.3, net_liability_rate=30.0, b=0.05,
                 distance_density=uniform(0.8, 2.0)),
        TypeSpec(weight=0.4, sigma=0.3, net_liability_rate=3.0, b=-0.3,
                 distance_density=uniform(0.12, 1.2)),
    )
    return MixtureSpec(types=types, horizon=1.0, r2=0.5, rho=0.45, exposure=expo)


def _run_reproduce_heatplots(cfg: ScenarioConfig, out_dir: Path) -> list[Path]:
    body = cfg.body
    mixture = heatplot_mixture()
    gd = _get(body, "grid", "", required=False, default={}) or {}
    if "dx" not in gd:
        gd = dict(gd, dx=4e-3)
    if "x_max" not in gd:
        gd = dict(gd, x_max=3.9)
    if "snapshot_count" not in gd:
        gd = dict(gd, snapshot_count=120)
    grid_cfg = _parse_grid(gd, "grid", 0.35, mixture.horizon)
    return _run_solve_mf(cfg, out_dir, mixture=mixture, grid_cfg=grid_cfg)


_RUNNERS = {
    "simulate-finite": _run_simulate_finite,
    "solve-mf": _run_solve_mf,
    "picard": _run_picard,
    "cascade-test": _run_cascade_test,
    "scaling-study": _run_scaling_study,
    "full-vs-reduced": _run_full_vs_reduced,
    "reproduce-3bank": _run_reproduce_3bank,
    "reproduce-coreperiphery": _run_reproduce_coreperiphery,
    "reproduce-heatplots": _run_reproduce_heatplots,
}


def worker_count() -> int:
    raw = os.environ.get("CONTAGION_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run(config: ScenarioConfig, out_dir: str | Path | None = None) -> Path:
    """Execute one scenario and write its outputs plus manifest.json.

    Re-running the same config overwrites the directory with byte-identical
    files.
    """
    target = Path(out_dir) if out_dir is not None else Path(config.out)
    target.mkdir(parents=True, exist_ok=True)
    files = _RUNNERS[config.mode](config, target)
    write_manifest(target, config.raw, files, versions={
        "contagion-lab": __version__, "numpy": np.__version__,
    })
    return target


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="contagion-lab",
        description="default contagion scenarios: finite networks and the mean-field limit",
    )
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", required=True, help="path to the scenario JSON")
    parser.add_argument("--out", default=None, help="output directory (default from config)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if cfg.mode != args.mode:
            raise ConfigError(f"config mode {cfg.mode!r} does not match command {args.mode!r}")
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.raw = dict(cfg.raw, seed=args.seed)
        run(cfg, args.out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
