"""Rollouts of trained bundles, energy traces, error metrics and report export.

Report layout written by :func:`export_report`::

    <dir>/summary.json                 aggregate metrics + per-trajectory summaries
    <dir>/traj_000/truth.csv           t, x_0 .. x_{D-1}
    <dir>/traj_000/predicted.csv       t, x_0 .. x_{D-1}   (decoded rollout)
    <dir>/traj_000/abs_error.csv       t, e_0 .. e_{D-1}
    <dir>/traj_000/hamiltonians.csv    t, H_truth, H_latent, H_decoded
    <dir>/traj_000/latent.csv          t, z_0 .. z_{L-1}
    <dir>/traj_000/summary.json        final_mae, h_drift_*, symp_residual_*
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .integrators import IntegratorConfig, Trajectory, integrate
from .systems import SystemSpec, hamiltonian, symplectic_identity
from .training import ModelBundle

SUMMARY_KEYS = ("final_mae", "h_drift_truth", "h_drift_latent", "h_drift_decoded",
                "symp_residual_mean", "symp_residual_max")


def default_rollout_config(dt: float) -> IntegratorConfig:
    return IntegratorConfig(dt=dt, newton_tol=1e-8, jacobian_mode="analytic")


def rollout(bundle: ModelBundle, x0, T: float, cfg: IntegratorConfig,
            *, num_points: int | None = None) -> tuple[Trajectory, Trajectory]:
    """Encode ``x0``, integrate the latent model with implicit midpoint, decode every sample.

    Returns ``(decoded, latent)`` trajectories on the same time grid.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (bundle.state_dim,):
        raise ValueError(f"initial state must have shape ({bundle.state_dim},)")
    z0 = bundle.encode(x0)
    latent = integrate(bundle.latent_rhs, z0, T, cfg, jac=bundle.latent_jacobian,
                       num_points=num_points)
    decoded = Trajectory(latent.times, bundle.decode(latent.states))
    return decoded, latent


def drift(trace: np.ndarray) -> float:
    """``max_t |h(t) - h(0)|``."""
    trace = np.asarray(trace, dtype=np.float64)
    if trace.size == 0 or not np.all(np.isfinite(trace)):
        return math.nan
    return float(np.max(np.abs(trace - trace[0])))


def relative_drift(trace: np.ndarray) -> float:
    trace = np.asarray(trace, dtype=np.float64)
    d = drift(trace)
    return d / max(abs(float(trace[0])), 1e-12) if trace.size else math.nan


@dataclass
class HamiltonianReport:
    times: np.ndarray
    h_truth: np.ndarray
    h_latent: np.ndarray
    h_decoded: np.ndarray

    @property
    def drift_truth(self) -> float:
        return drift(self.h_truth)

    @property
    def drift_latent(self) -> float:
        return drift(self.h_latent)

    @property
    def drift_decoded(self) -> float:
        return drift(self.h_decoded)

    @property
    def latent_offset(self) -> float:
        """Mean difference between latent and ground-truth energy (a free null level)."""
        return float(np.mean(self.h_latent - self.h_truth))


def hamiltonian_report(bundle: ModelBundle, system: SystemSpec | None, truth: Trajectory,
                       decoded: Trajectory, latent: Trajectory) -> HamiltonianReport:
    n = len(latent)
    nan = np.full(n, math.nan)
    if system is not None:
        h_truth = np.asarray(hamiltonian(system, truth.states), dtype=float).reshape(-1)[:n]
        h_dec = np.asarray(hamiltonian(system, decoded.states), dtype=float).reshape(-1)
    else:
        h_truth, h_dec = nan[:len(truth)], nan
    h_lat = nan if bundle.is_koopman else np.asarray(
        bundle.latent_hamiltonian(latent.states), dtype=float).reshape(-1)
    return HamiltonianReport(latent.times, h_truth, h_lat, h_dec)


@dataclass
class ResidualStats:
    mean: float
    max: float
    mean_squared: float


def symplecticity_residual(bundle: ModelBundle, points, mode: str | None = None, *,
                           points_are_latent: bool = False) -> ResidualStats:
    """Frobenius norm of ``M^T J M - J`` for the encoder (lifting) or decoder (reduction) Jacobian.

    ``points`` are states; for the decoder they are encoded first unless
    ``points_are_latent``.
    """
    mode = mode or bundle.mode
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if mode == "reduction":
        z = pts if points_are_latent else bundle.encode(pts)
        jac = bundle.decoder_jacobian(z)
    else:
        jac = bundle.encoder_jacobian(pts)
    return residual_stats(jac)


def residual_stats(jac: np.ndarray) -> ResidualStats:
    """Statistics of the symplecticity residual for a batch of Jacobians ``(B, rows, k)``."""
    jac = np.asarray(jac, dtype=np.float64)
    if jac.ndim == 2:
        jac = jac[None]
    rows, k = jac.shape[1:]
    gram = np.swapaxes(jac, 1, 2) @ symplectic_identity(rows) @ jac
    norms = np.linalg.norm(gram - symplectic_identity(k), axis=(1, 2))
    return ResidualStats(float(norms.mean()), float(norms.max()), float(np.mean(norms**2)))


def error_metrics(predicted, truth) -> dict:
    predicted = np.asarray(predicted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predicted.shape != truth.shape:
        raise ValueError(f"grid mismatch: {predicted.shape} vs {truth.shape}")
    err = np.abs(predicted - truth)
    return {"abs_error": err, "mae": float(err.mean()) if err.size else 0.0,
            "max_error": float(err.max()) if err.size else 0.0}


@dataclass
class TrajectoryReport:
    times: np.ndarray
    truth: np.ndarray
    predicted: np.ndarray
    latent: np.ndarray
    abs_error: np.ndarray
    hamiltonians: HamiltonianReport
    symplecticity: ResidualStats

    def summary(self) -> dict:
        return {
            "final_mae": float(np.mean(self.abs_error[-1])),
            "mae": float(np.mean(self.abs_error)),
            "max_error": float(np.max(self.abs_error)),
            "h_drift_truth": self.hamiltonians.drift_truth,
            "h_drift_latent": self.hamiltonians.drift_latent,
            "h_drift_decoded": self.hamiltonians.drift_decoded,
            "h_latent_offset": self.hamiltonians.latent_offset,
            "symp_residual_mean": self.symplecticity.mean,
            "symp_residual_max": self.symplecticity.max,
        }


@dataclass
class EvalReport:
    trajectories: list[TrajectoryReport] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def summary(self) -> dict:
        per = [t.summary() for t in self.trajectories]
        agg = {}
        for key in SUMMARY_KEYS:
            vals = [p[key] for p in per]
            agg[key] = float(np.mean(vals)) if vals else None
        return {"num_trajectories": len(per), **agg, "trajectories": per, "meta": self.meta}


def evaluate_trajectory(bundle: ModelBundle, system: SystemSpec | None, truth: Trajectory,
                        cfg: IntegratorConfig | None = None) -> TrajectoryReport:
    """Roll the bundle from ``truth``'s first state across ``truth``'s time grid."""
    times = truth.times
    if cfg is None:
        dt = float(times[1] - times[0]) if times.size > 1 else 1.0
        cfg = default_rollout_config(dt)
    T = float(times[-1] - times[0])
    decoded, latent = rollout(bundle, truth.states[0], T, cfg, num_points=times.size)
    metrics = error_metrics(decoded.states, truth.states)
    hams = hamiltonian_report(bundle, system, truth, decoded, latent)
    symp = symplecticity_residual(bundle, truth.states if bundle.mode != "reduction" else latent.states,
                                  points_are_latent=bundle.mode == "reduction")
    return TrajectoryReport(times, truth.states, decoded.states, latent.states,
                            metrics["abs_error"], hams, symp)


def evaluate(bundle: ModelBundle, system: SystemSpec | None, truths: Sequence[Trajectory],
             cfg: IntegratorConfig | None = None, meta: dict | None = None) -> EvalReport:
    return EvalReport([evaluate_trajectory(bundle, system, tr, cfg) for tr in truths],
                      dict(meta or {}))


def _fmt(v) -> str:
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def _write_table(path, header: Sequence[str], columns: Sequence[np.ndarray]) -> None:
    cols = [np.asarray(c, dtype=np.float64).reshape(len(columns[0]), -1) for c in columns]
    block = np.concatenate(cols, axis=1)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in block:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _clean(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, list):
        return [_clean(v) for v in o]
    return o


def config_hash(meta: dict) -> str:
    blob = json.dumps(meta, sort_keys=True, default=_json_default).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def export_report(report: EvalReport, path) -> list[str]:
    """Write CSV traces and JSON summaries; returns the written file paths."""
    os.makedirs(path, exist_ok=True)
    written = []
    for k, tr in enumerate(report.trajectories):
        sub = os.path.join(path, f"traj_{k:03d}")
        os.makedirs(sub, exist_ok=True)
        d = tr.truth.shape[1]
        xs = [f"x_{i}" for i in range(d)]
        files = {
            "truth.csv": (["t", *xs], [tr.times, tr.truth]),
            "predicted.csv": (["t", *xs], [tr.times, tr.predicted]),
            "abs_error.csv": (["t", *[f"e_{i}" for i in range(d)]], [tr.times, tr.abs_error]),
            "hamiltonians.csv": (["t", "H_truth", "H_latent", "H_decoded"],
                                 [tr.times, tr.hamiltonians.h_truth, tr.hamiltonians.h_latent,
                                  tr.hamiltonians.h_decoded]),
            "latent.csv": (["t", *[f"z_{i}" for i in range(tr.latent.shape[1])]],
                           [tr.times, tr.latent]),
        }
        for name, (header, cols) in files.items():
            _write_table(os.path.join(sub, name), header, cols)
            written.append(os.path.join(sub, name))
        with open(os.path.join(sub, "summary.json"), "w") as fh:
            json.dump(_clean(tr.summary()), fh, indent=2, sort_keys=True, default=_json_default)
        written.append(os.path.join(sub, "summary.json"))
    summary = report.summary()
    summary["config_hash"] = config_hash(report.meta)
    with open(os.path.join(path, "summary.json"), "w") as fh:
        json.dump(_clean(summary), fh, indent=2, sort_keys=True, default=_json_default)
    written.append(os.path.join(path, "summary.json"))
    return written
