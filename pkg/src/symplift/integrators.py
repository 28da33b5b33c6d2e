"""Implicit midpoint integration, an RK4 reference, and trajectory datasets."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .systems import SystemSpec, jacobian_function, rhs, rhs_function

RhsFunction = Callable[[np.ndarray], np.ndarray]
JacFunction = Callable[[np.ndarray], np.ndarray]


class NewtonConvergenceError(RuntimeError):
    """Newton's method did not solve the midpoint equation within the iteration cap."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    jacobian_mode: str = "finite-difference"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be at least 1")
        if self.jacobian_mode not in ("finite-difference", "analytic"):
            raise ValueError("jacobian_mode must be 'finite-difference' or 'analytic'")


def fd_jacobian(f: RhsFunction, x: np.ndarray, fx: np.ndarray | None = None) -> np.ndarray:
    """Forward-difference Jacobian with steps ``sqrt(eps) * (1 + |x_i|)``."""
    fx = f(x) if fx is None else fx
    steps = math.sqrt(np.finfo(float).eps) * (1.0 + np.abs(x))
    jac = np.empty((fx.size, x.size))
    for i in range(x.size):
        xi = x.copy()
        xi[i] += steps[i]
        jac[:, i] = (f(xi) - fx) / steps[i]
    return jac


def implicit_midpoint_step(f: RhsFunction, x, cfg: IntegratorConfig, *,
                           jac: JacFunction | None = None, dt: float | None = None) -> np.ndarray:
    """Solve ``y = x + dt f((x + y) / 2)`` by Newton's method.

    ``jac`` is used when ``cfg.jacobian_mode == "analytic"``; otherwise the
    Jacobian of ``f`` is approximated by forward differences.  ``dt``
    overrides ``cfg.dt`` (negative values step backwards in time).
    """
    x = np.asarray(x, dtype=np.float64)
    h = cfg.dt if dt is None else dt
    use_analytic = cfg.jacobian_mode == "analytic" and jac is not None
    y = x + h * f(x)
    eye = np.eye(x.size)
    for it in range(cfg.newton_max_iter):
        mid = 0.5 * (x + y)
        fm = f(mid)
        res = y - x - h * fm
        if not np.all(np.isfinite(res)):
            break
        if np.max(np.abs(res)) <= cfg.newton_tol:
            return y
        dfm = jac(mid) if use_analytic else fd_jacobian(f, mid, fm)
        try:
            delta = sla.solve(eye - 0.5 * h * dfm, res, check_finite=False)
        except (sla.LinAlgError, ValueError):
            break
        y = y - delta
    else:
        mid = 0.5 * (x + y)
        res = y - x - h * f(mid)
        if np.all(np.isfinite(res)) and np.max(np.abs(res)) <= cfg.newton_tol:
            return y
    raise NewtonConvergenceError(
        f"implicit midpoint: Newton did not reach tol {cfg.newton_tol:g} in "
        f"{cfg.newton_max_iter} iterations (dt={h:g})")


def rk4_step(f: RhsFunction, x, dt: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass
class Trajectory:
    """Equidistant samples of one solution; ``derivs[k] = f(states[k])`` when known."""

    times: np.ndarray
    states: np.ndarray
    derivs: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        if self.derivs is not None:
            self.derivs = np.atleast_2d(np.asarray(self.derivs, dtype=np.float64))
            if self.derivs.shape != self.states.shape:
                raise ValueError("derivs must have the same shape as states")
        if self.states.shape[0] != self.times.size:
            raise ValueError("need one state per sample time")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("sample times must be strictly increasing")

    def __len__(self) -> int:
        return self.times.size

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def has_derivs(self) -> bool:
        return self.derivs is not None

    def head(self, count: int) -> "Trajectory":
        d = None if self.derivs is None else self.derivs[:count]
        return Trajectory(self.times[:count], self.states[:count], d)


@dataclass
class Normalization:
    """Per-dimension affine scaling ``x_n = (x - shift) / scale``."""

    shift: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.shift = np.asarray(self.shift, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)
        if self.shift.shape != self.scale.shape:
            raise ValueError("shift and scale must have equal shapes")
        if np.any(self.scale == 0) or not np.all(np.isfinite(self.scale)):
            raise ValueError("normalization scales must be finite and nonzero")

    @classmethod
    def identity(cls, dim: int) -> "Normalization":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, states: np.ndarray, floor: float = 1e-3) -> "Normalization":
        """Standardize each dimension; scales below ``floor * max scale`` are raised to it."""
        shift = states.mean(axis=0)
        scale = states.std(axis=0)
        top = scale.max() if scale.size and scale.max() > 0 else 1.0
        scale = np.maximum(scale, floor * top)
        return cls(shift, scale)

    def apply(self, x):
        return (np.asarray(x) - self.shift) / self.scale

    def invert(self, xn):
        return np.asarray(xn) * self.scale + self.shift

    def to_dict(self) -> dict:
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Normalization":
        return cls(d["shift"], d["scale"])


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    system: Optional[SystemSpec] = None
    normalization: Optional[Normalization] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.trajectories:
            raise ValueError("a dataset needs at least one trajectory")
        dims = {tr.dim for tr in self.trajectories}
        if len(dims) != 1:
            raise ValueError(f"trajectories have inconsistent dimensions {sorted(dims)}")
        if self.system is not None and dims != {self.system.dimension}:
            raise ValueError("trajectory dimension does not match the system")
        if self.normalization is not None and self.normalization.shift.size != self.dim:
            raise ValueError("normalization does not match the state dimension")

    @property
    def dim(self) -> int:
        return self.trajectories[0].dim

    @property
    def num_samples(self) -> int:
        return sum(len(tr) for tr in self.trajectories)

    @property
    def has_derivs(self) -> bool:
        return all(tr.has_derivs for tr in self.trajectories)

    def snapshots(self) -> tuple[np.ndarray, np.ndarray | None]:
        """All samples pooled across trajectories: ``(states, derivs)``."""
        x = np.concatenate([tr.states for tr in self.trajectories])
        if not self.has_derivs:
            return x, None
        return x, np.concatenate([tr.derivs for tr in self.trajectories])


def num_steps(T: float, dt: float) -> int:
    """Whole time steps of length ``dt`` that fit into ``[0, T]``."""
    return int(math.floor(T / dt + 1e-9))


def integrate(f: RhsFunction, x0, T: float, cfg: IntegratorConfig, *,
              jac: JacFunction | None = None, num_points: int | None = None) -> Trajectory:
    """Equidistant implicit-midpoint trajectory on ``[0, T]`` including ``t = 0``.

    Without ``num_points`` every step of length ``cfg.dt`` is recorded and the
    final time is the last whole step not exceeding ``T``.  With
    ``num_points`` the samples are spaced ``h = T / (num_points - 1)`` apart
    and ``cfg.dt`` is the largest internal step: each sample interval is
    split into ``ceil(h / cfg.dt)`` equal midpoint steps.
    """
    if not T >= 0:
        raise ValueError("final time must be nonnegative")
    x = np.asarray(x0, dtype=np.float64).copy()
    if num_points is not None:
        if num_points < 1:
            raise ValueError("num_points must be positive")
        samples = num_points - 1
        spacing = T / samples if samples else cfg.dt
        substeps = max(1, math.ceil(spacing / cfg.dt - 1e-9))
    else:
        spacing = cfg.dt
        samples = num_steps(T, spacing)
        substeps = 1
    h = spacing / substeps
    states = np.empty((samples + 1, x.size))
    states[0] = x
    for k in range(samples):
        for j in range(substeps):
            try:
                x = implicit_midpoint_step(f, x, cfg, jac=jac, dt=h)
            except NewtonConvergenceError as exc:
                t = k * spacing + j * h
                raise NewtonConvergenceError(f"{exc} at t={t:g}", time=t) from None
        states[k + 1] = x
    times = spacing * np.arange(samples + 1)
    derivs = np.array([f(s) for s in states])
    return Trajectory(times, states, derivs)


def generate_dataset(system: SystemSpec, ics: Sequence, T: float, cfg: IntegratorConfig, *,
                     num_points: int | None = None, normalize: bool = False,
                     meta: dict | None = None) -> Dataset:
    """One trajectory per initial condition; derivatives are evaluated from the exact RHS.

    With ``normalize`` the per-dimension standardization is computed and stored
    (not applied).
    """
    if len(ics) == 0:
        raise ValueError("need at least one initial condition")
    f = rhs_function(system)
    jac = jacobian_function(system)
    trajs = [integrate(f, x0, T, cfg, jac=jac, num_points=num_points) for x0 in ics]
    ds = Dataset(trajs, system, meta=dict(meta or {}))
    if normalize:
        ds.normalization = Normalization.fit(ds.snapshots()[0])
    return ds


def exact_derivs(system: SystemSpec, states: np.ndarray) -> np.ndarray:
    return rhs(system, states)
