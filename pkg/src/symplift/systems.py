"""Ground-truth canonical Hamiltonian benchmark systems.

States are flat vectors ``x = (q, p)`` of length ``2N``.  For the two
semi-discretized PDEs the grid is periodic with spacing ``dx = L / N`` and
``hamiltonian`` returns the Riemann sum of the energy density, so that
``rhs(x) = J grad H(x) / dx``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

KINDS = ("pendulum", "lotka_volterra", "oscillator", "wave", "nls")

_ALIASES = {
    "lotkavolterra": "lotka_volterra",
    "lv": "lotka_volterra",
    "anharmonic_oscillator": "oscillator",
    "anharmonicoscillator": "oscillator",
    "linear_wave": "wave",
    "linearwave": "wave",
    "schrodinger": "nls",
}

_DEFAULT_DOMAIN = {"wave": (-5.0, 5.0), "nls": (-10.0, 10.0)}


class InfeasibleWindowError(RuntimeError):
    """Rejection sampling could not find enough states inside the energy window."""


@dataclass(frozen=True)
class SystemSpec:
    """A benchmark Hamiltonian system.

    ``n_grid`` is the number of grid points ``N`` for the PDE kinds (state
    dimension ``2N``) and ignored for the planar systems.
    """

    kind: str
    n_grid: int = 1
    c: float = 1.0
    alpha: float = 0.5
    beta: float = 1.0
    domain: tuple[float, float] | None = None

    def __post_init__(self):
        kind = _ALIASES.get(self.kind.lower(), self.kind.lower())
        if kind not in KINDS:
            raise ValueError(f"unknown system kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind in ("wave", "nls"):
            if self.n_grid < 3:
                raise ValueError("PDE systems need at least 3 grid points")
            if self.domain is None:
                object.__setattr__(self, "domain", _DEFAULT_DOMAIN[kind])
            lo, hi = self.domain
            object.__setattr__(self, "domain", (float(lo), float(hi)))
            if hi <= lo:
                raise ValueError("domain must satisfy lo < hi")
        else:
            object.__setattr__(self, "n_grid", 1)
            object.__setattr__(self, "domain", None)

    @property
    def is_pde(self) -> bool:
        return self.kind in ("wave", "nls")

    @property
    def dimension(self) -> int:
        return 2 * self.n_grid

    @property
    def dx(self) -> float:
        if not self.is_pde:
            return 1.0
        lo, hi = self.domain
        return (hi - lo) / self.n_grid

    def grid(self) -> np.ndarray:
        lo, _ = self.domain
        return lo + self.dx * np.arange(self.n_grid)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.is_pde:
            d.update(n_grid=self.n_grid, domain=list(self.domain))
            if self.kind == "wave":
                d["c"] = self.c
            else:
                d.update(alpha=self.alpha, beta=self.beta)
        return d

    @classmethod
    def from_dict(cls, d) -> "SystemSpec":
        kwargs = dict(d)
        if "domain" in kwargs and kwargs["domain"] is not None:
            kwargs["domain"] = tuple(kwargs["domain"])
        return cls(**kwargs)


def _check(system: SystemSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != system.dimension:
        raise ValueError(f"{system.kind}: expected state dimension {system.dimension}, "
                         f"got {x.shape[-1]}")
    return x


def laplacian(n: int, dx: float) -> sp.csr_matrix:
    """Periodic three-point second-difference matrix."""
    if n < 3:
        raise ValueError("periodic Laplacian needs n >= 3")
    main = -2.0 * np.ones(n)
    off = np.ones(n - 1)
    d = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    d[0, n - 1] = 1.0
    d[n - 1, 0] = 1.0
    return (d / dx**2).tocsr()


def _lap_apply(u: np.ndarray, dx: float) -> np.ndarray:
    return (np.roll(u, -1, axis=-1) - 2.0 * u + np.roll(u, 1, axis=-1)) / dx**2


def wave_operator(n: int, dx: float, c: float = 1.0) -> np.ndarray:
    """Dense ``K = [[0, I], [c Dxx, 0]]`` of the semi-discrete wave equation."""
    if n < 3:
        raise ValueError("wave operator needs N >= 3")
    if dx <= 0:
        raise ValueError("dx must be positive")
    dxx = laplacian(n, dx).toarray()
    k = np.zeros((2 * n, 2 * n))
    k[:n, n:] = np.eye(n)
    k[n:, :n] = c * dxx
    return k


def rhs(system: SystemSpec, x) -> np.ndarray:
    """Time derivative ``J grad H`` (works on a single state or a batch)."""
    x = _check(system, x)
    n = system.n_grid
    q, p = x[..., :n], x[..., n:]
    kind = system.kind
    if kind == "pendulum":
        dq, dp = p, -np.sin(q)
    elif kind == "lotka_volterra":
        dq, dp = 1.0 - np.exp(p), np.exp(q) - 2.0
    elif kind == "oscillator":
        dq, dp = p, -(q + q**3)
    elif kind == "wave":
        dq, dp = p, system.c * _lap_apply(q, system.dx)
    else:
        a, b, dx = system.alpha, system.beta, system.dx
        r = q * q + p * p
        dq = -a * _lap_apply(p, dx) - b * r * p
        dp = a * _lap_apply(q, dx) + b * r * q
    return np.concatenate([dq, dp], axis=-1)


def rhs_jacobian(system: SystemSpec, x) -> np.ndarray:
    """Analytic Jacobian of :func:`rhs` at a single state."""
    x = _check(system, x)
    n = system.n_grid
    q, p = x[:n], x[n:]
    kind = system.kind
    if kind == "pendulum":
        return np.array([[0.0, 1.0], [-math.cos(q[0]), 0.0]])
    if kind == "lotka_volterra":
        return np.array([[0.0, -math.exp(p[0])], [math.exp(q[0]), 0.0]])
    if kind == "oscillator":
        return np.array([[0.0, 1.0], [-(1.0 + 3.0 * q[0] ** 2), 0.0]])
    if kind == "wave":
        return wave_operator(n, system.dx, system.c)
    a, b = system.alpha, system.beta
    dxx = laplacian(n, system.dx).toarray()
    r = q * q + p * p
    jac = np.empty((2 * n, 2 * n))
    jac[:n, :n] = np.diag(-2.0 * b * q * p)
    jac[:n, n:] = -a * dxx - np.diag(b * (r + 2.0 * p * p))
    jac[n:, :n] = a * dxx + np.diag(b * (r + 2.0 * q * q))
    jac[n:, n:] = np.diag(2.0 * b * q * p)
    return jac


def hamiltonian(system: SystemSpec, x):
    """Energy of a state (or of each state in a batch)."""
    x = _check(system, x)
    n = system.n_grid
    q, p = x[..., :n], x[..., n:]
    kind = system.kind
    if kind == "pendulum":
        h = 0.5 * p**2 + 1.0 - np.cos(q)
    elif kind == "lotka_volterra":
        h = p - np.exp(p) + 2.0 * q - np.exp(q)
    elif kind == "oscillator":
        h = 0.5 * p**2 + 0.5 * q**2 + 0.25 * q**4
    else:
        dx = system.dx
        qx = (np.roll(q, -1, axis=-1) - q) / dx
        if kind == "wave":
            density = 0.5 * (system.c * qx**2 + p**2)
        else:
            px = (np.roll(p, -1, axis=-1) - p) / dx
            a, b = system.alpha, system.beta
            density = 0.5 * (a * qx**2 + a * px**2 - 0.5 * b * (q * q + p * p) ** 2)
        return np.sum(density, axis=-1) * dx
    h = h[..., 0]
    return float(h) if np.ndim(h) == 0 else h


def symplectic_identity(dim: int) -> np.ndarray:
    """Canonical ``J = [[0, I], [-I, 0]]`` of size ``dim``."""
    if dim % 2:
        raise ValueError("canonical structure needs an even dimension")
    n = dim // 2
    j = np.zeros((dim, dim))
    j[:n, n:] = np.eye(n)
    j[n:, :n] = -np.eye(n)
    return j


@dataclass(frozen=True)
class Box:
    lower: tuple[float, ...]
    upper: tuple[float, ...]


DEFAULT_BOXES = {
    "pendulum": Box((-2.0, -2.0), (2.0, 2.0)),
    "lotka_volterra": Box((-2.0, -2.0), (2.0, 2.0)),
    "oscillator": Box((-1.0, -1.0), (1.0, 1.0)),
}

DEFAULT_WINDOWS = {
    "pendulum": (-math.inf, 2.0),
    "lotka_volterra": (-4.0, 4.0),
    "oscillator": (0.0, 1.0),
}


def sample_initial_conditions(system: SystemSpec, count: int, bounds: Box | None = None,
                              energy_window: tuple[float, float] | None = None,
                              rng_seed: int = 0, max_draws: int = 100_000) -> list[np.ndarray]:
    """Uniform rejection sampling of states whose energy lies in ``energy_window``.

    The window is half-open, ``lo <= H < hi``.  Raises
    :class:`InfeasibleWindowError` after ``max_draws`` candidate states.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    if system.is_pde:
        raise ValueError("random box sampling is only defined for planar systems")
    bounds = bounds or DEFAULT_BOXES[system.kind]
    lo, hi = energy_window or DEFAULT_WINDOWS[system.kind]
    rng = np.random.default_rng(rng_seed)
    lower, upper = np.asarray(bounds.lower, float), np.asarray(bounds.upper, float)
    out: list[np.ndarray] = []
    draws = 0
    while len(out) < count:
        if draws >= max_draws:
            raise InfeasibleWindowError(
                f"only {len(out)}/{count} states with H in [{lo}, {hi}) after {draws} draws")
        x = rng.uniform(lower, upper)
        draws += 1
        h = hamiltonian(system, x)
        if lo <= h < hi:
            out.append(x)
    return out


def sech_initial_state(system: SystemSpec) -> np.ndarray:
    """``u0 = sech(x)`` on the grid: for the wave ``q = u0, p = 0``; for NLS ``Re u = sech, Im u = 0``."""
    if not system.is_pde:
        raise ValueError("sech initial state is defined for PDE systems")
    u0 = 1.0 / np.cosh(system.grid())
    return np.concatenate([u0, np.zeros_like(u0)])


def rhs_function(system: SystemSpec) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: rhs(system, x)


def jacobian_function(system: SystemSpec) -> Callable[[np.ndarray], np.ndarray]:
    if system.kind == "wave":
        k = wave_operator(system.n_grid, system.dx, system.c)
        return lambda x: k
    return lambda x: rhs_jacobian(system, x)
