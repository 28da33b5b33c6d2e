"""Config-driven data generation, training and evaluation.

These functions are what the command-line interface runs; they are also
usable directly from Python.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np

from .config import RunConfig
from .evaluation import EvalReport, evaluate
from .integrators import Dataset, IntegratorConfig, Normalization, Trajectory, generate_dataset, integrate
from .persistence import read_trajectory_csv
from .systems import jacobian_function, rhs_function, sample_initial_conditions, sech_initial_state
from .training import ModelBundle, TrainResult, train


def data_integrator(cfg: RunConfig) -> IntegratorConfig:
    d = cfg.data
    return IntegratorConfig(dt=d.dt, newton_tol=d.newton_tol,
                            newton_max_iter=d.newton_max_iter, jacobian_mode=d.jacobian_mode)


def initial_conditions(cfg: RunConfig, count: int, seed: int) -> list[np.ndarray]:
    system = cfg.system
    if system.is_pde:
        return [sech_initial_state(system) for _ in range(count)]
    return sample_initial_conditions(system, count, cfg.data.box(system.kind),
                                     cfg.data.window(system.kind), rng_seed=seed)


def generate(cfg: RunConfig) -> Dataset:
    """Training data for ``cfg``; ``data.train_fraction`` keeps a leading part of each trajectory."""
    d = cfg.data
    ics = initial_conditions(cfg, d.num_trajectories, d.seed)
    meta = {"preset": cfg.name, "seed": d.seed, "T": d.T, "dt": d.step()}
    ds = generate_dataset(cfg.system, ics, d.T, data_integrator(cfg), num_points=d.num_points,
                          meta=meta)
    if d.train_fraction < 1:
        keep = [tr.head(int(math.floor(d.train_fraction * (len(tr) - 1) + 1e-9)) + 1)
                for tr in ds.trajectories]
        ds = Dataset(keep, ds.system, meta=ds.meta)
    if d.normalize:
        ds.normalization = Normalization.fit(ds.snapshots()[0])
    return ds


def with_overrides(cfg: RunConfig, *, mode: str | None = None, lambda2: float | None = None,
                   seed: int | None = None, epochs: int | None = None) -> RunConfig:
    """Copy of ``cfg`` with command-line overrides applied."""
    train_kw = {}
    if mode is not None:
        train_kw["mode"] = mode
    if seed is not None:
        train_kw["seed"] = seed
    if epochs is not None:
        train_kw["epochs"] = epochs
    train_cfg = dataclasses.replace(cfg.train, **train_kw) if train_kw else cfg.train
    weights = cfg.weights
    if mode is not None and mode != cfg.train.mode:
        weights = None
    if lambda2 is not None:
        w = weights or cfg.loss_weights()
        weights = dataclasses.replace(w, lambda2=lambda2)
    return dataclasses.replace(cfg, train=train_cfg, weights=weights)


def fit(cfg: RunConfig, dataset: Dataset, callback=None) -> TrainResult:
    return train(dataset, cfg.train, cfg.loss_weights(), callback=callback)


def eval_spacing(cfg: RunConfig) -> float:
    """Sample spacing of evaluation grids: the training sample spacing."""
    return cfg.data.step()


def eval_points(cfg: RunConfig, horizon: float) -> int:
    return int(math.floor(horizon / eval_spacing(cfg) + 1e-9)) + 1


def eval_horizon(cfg: RunConfig) -> float:
    return cfg.eval.horizon if cfg.eval.horizon is not None else 2.0 * cfg.data.T


def ground_truth(cfg: RunConfig, count: int | None = None, seed: int | None = None,
                 horizon: float | None = None) -> list[Trajectory]:
    """Reference solutions from fresh initial conditions (seed distinct from training)."""
    count = cfg.eval.num_trajectories if count is None else count
    if count == 0:
        return []
    if seed is None:
        seed = cfg.eval.seed if cfg.eval.seed is not None else cfg.data.seed + 1000
    horizon = eval_horizon(cfg) if horizon is None else horizon
    n = eval_points(cfg, horizon)
    horizon = (n - 1) * eval_spacing(cfg)
    f, jac = rhs_function(cfg.system), jacobian_function(cfg.system)
    return [integrate(f, x0, horizon, data_integrator(cfg), jac=jac, num_points=n)
            for x0 in initial_conditions(cfg, count, seed)]


def run_eval(cfg: RunConfig, bundle: ModelBundle, truths: list[Trajectory] | None = None,
             external: str | None = None) -> EvalReport:
    """Roll the bundle along each reference solution (or an external CSV trajectory)."""
    external = external or cfg.eval.trajectory
    if truths is None:
        truths = [read_trajectory_csv(external)] if external else ground_truth(cfg)
    rollout_cfg = IntegratorConfig(dt=cfg.eval.dt or cfg.data.dt, newton_tol=cfg.eval.newton_tol,
                                   jacobian_mode="analytic")
    system = cfg.system if all(t.dim == cfg.system.dimension for t in truths) else None
    meta = {k: v for k, v in cfg.to_dict().items() if k != "paths"}
    if external:
        meta["external_trajectory"] = external
    return evaluate(bundle, system, truths, None if external else rollout_cfg, meta)
