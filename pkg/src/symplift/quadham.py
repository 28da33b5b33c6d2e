"""Quadratic latent systems that are Hamiltonian by construction.

The latent Hamiltonian is the cubic

    H(z) = alpha.z + 1/2 z.S z + 1/3 sum_ijk T_ijk z_i z_j z_k

with ``S`` symmetric and ``T`` fully symmetric.  Only the unique entries of
``S`` and ``T`` are stored, so the induced quadratic system

    dz/dt = A + B z + C (z kron z),   A = J alpha,  B = J S,  C = J T_u

satisfies the Hamiltonian criterion exactly for every parameter value.
Kronecker convention: ``(z kron z)[i * d + j] = z_i z_j``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .nn import autodiff as ad
from .nn.autodiff import Tensor
from .systems import symplectic_identity


def num_sym2(d: int) -> int:
    return d * (d + 1) // 2


def num_sym3(d: int) -> int:
    return d * (d + 1) * (d + 2) // 6


@lru_cache(maxsize=None)
def sym2_index(d: int) -> np.ndarray:
    """``(d, d)`` map from matrix entries to upper-triangular storage positions."""
    idx = np.empty((d, d), dtype=np.intp)
    pos = 0
    for i in range(d):
        for j in range(i, d):
            idx[i, j] = idx[j, i] = pos
            pos += 1
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=None)
def sym3_index(d: int) -> np.ndarray:
    """``(d, d, d)`` map from tensor entries to unique-entry storage positions."""
    idx = np.empty((d, d, d), dtype=np.intp)
    for pos, combo in enumerate(itertools.combinations_with_replacement(range(d), 3)):
        for i, j, k in set(itertools.permutations(combo)):
            idx[i, j, k] = pos
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=None)
def _unfold_t_index(d: int) -> np.ndarray:
    # (d*d, d) layout of T_u^T: row a*d + b, column i -> storage of T[i, a, b]
    t3 = sym3_index(d)
    out = np.ascontiguousarray(t3.transpose(1, 2, 0).reshape(d * d, d))
    out.setflags(write=False)
    return out


def kron2(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return (z[..., :, None] * z[..., None, :]).reshape(z.shape[:-1] + (z.shape[-1] ** 2,))


def unfold_frontal(t: np.ndarray) -> np.ndarray:
    """Mode-1 unfolding ``[T[:, :, 0], T[:, :, 1], ...]`` (frontal slices side by side)."""
    d = t.shape[0]
    return np.concatenate([t[:, :, k] for k in range(t.shape[2])], axis=1).reshape(d, -1)


@dataclass
class QuadHamParams:
    """Free vector ``alpha``, upper-triangular ``S`` storage and unique ``T`` entries."""

    dim: int
    alpha: np.ndarray
    s_upper: np.ndarray
    t_sym: np.ndarray

    def __post_init__(self):
        d = self.dim
        if d < 2 or d % 2:
            raise ValueError("latent dimension must be even and >= 2")
        self.alpha = np.array(self.alpha, dtype=np.float64).reshape(-1)
        self.s_upper = np.array(self.s_upper, dtype=np.float64).reshape(-1)
        self.t_sym = np.array(self.t_sym, dtype=np.float64).reshape(-1)
        expected = (d, num_sym2(d), num_sym3(d))
        got = (self.alpha.size, self.s_upper.size, self.t_sym.size)
        if got != expected:
            raise ValueError(f"storage sizes {got} do not match {expected} for dim {d}")

    @classmethod
    def zeros(cls, dim: int) -> "QuadHamParams":
        return cls(dim, np.zeros(dim), np.zeros(num_sym2(dim)), np.zeros(num_sym3(dim)))

    @classmethod
    def random(cls, dim: int, rng: np.random.Generator, scale: float = 1.0) -> "QuadHamParams":
        return cls(dim, scale * rng.standard_normal(dim),
                   scale * rng.standard_normal(num_sym2(dim)),
                   scale * rng.standard_normal(num_sym3(dim)))

    @classmethod
    def from_dense(cls, alpha, s, t) -> "QuadHamParams":
        """Pack a symmetric ``S`` and symmetric ``T`` (only entries with sorted indices are read)."""
        s = np.asarray(s, float)
        t = np.asarray(t, float)
        d = s.shape[0]
        s_upper = np.array([s[i, j] for i in range(d) for j in range(i, d)])
        t_sym = np.array([t[c] for c in itertools.combinations_with_replacement(range(d), 3)])
        return cls(d, alpha, s_upper, t_sym)

    # -- materialization --------------------------------------------------
    def S(self) -> np.ndarray:
        return self.s_upper[sym2_index(self.dim)]

    def T(self) -> np.ndarray:
        return self.t_sym[sym3_index(self.dim)]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.s_upper, self.t_sym])

    def copy(self) -> "QuadHamParams":
        return QuadHamParams(self.dim, self.alpha.copy(), self.s_upper.copy(), self.t_sym.copy())

    # -- dynamics ---------------------------------------------------------
    def rhs(self, z) -> np.ndarray:
        return quad_rhs(self, z)

    def hamiltonian(self, z):
        return latent_hamiltonian(self, z)

    def gradient(self, z) -> np.ndarray:
        z = _check(self, z)
        return self.alpha + z @ self.S() + kron2(z) @ _tu_t(self)

    def jacobian(self, z) -> np.ndarray:
        """Analytic Jacobian ``J (S + 2 T.z)`` of the RHS at a single state."""
        z = _check(self, z)
        hess = self.S() + 2.0 * np.tensordot(self.T(), z, axes=([2], [0]))
        return symplectic_identity(self.dim) @ hess


def _check(p: QuadHamParams, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != p.dim:
        raise ValueError(f"expected latent dimension {p.dim}, got {z.shape[-1]}")
    return z


def _tu_t(p: QuadHamParams) -> np.ndarray:
    return p.t_sym[_unfold_t_index(p.dim)]


def build_operators(p: QuadHamParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(A, B, C)`` with ``A = J alpha``, ``B = J S``, ``C = J T_u``."""
    j = symplectic_identity(p.dim)
    return j @ p.alpha, j @ p.S(), j @ unfold_frontal(p.T())


def quad_rhs(p: QuadHamParams, z) -> np.ndarray:
    """``A + B z + C (z kron z)`` for one state or a batch."""
    g = p.gradient(z)
    n = p.dim // 2
    return np.concatenate([g[..., n:], -g[..., :n]], axis=-1)


def latent_hamiltonian(p: QuadHamParams, z):
    z = _check(p, z)
    lin = z @ p.alpha
    quad = 0.5 * np.einsum("...i,ij,...j->...", z, p.S(), z)
    cub = np.einsum("ijk,...i,...j,...k->...", p.T(), z, z, z) / 3.0
    h = lin + quad + cub
    return float(h) if np.ndim(h) == 0 else h


@dataclass
class HamiltonianCheck:
    is_hamiltonian: bool
    b_residual: float
    c_residual: float


def fit_check_is_hamiltonian(A, B, C, tol: float = 1e-10) -> HamiltonianCheck:
    """Test whether ``dz/dt = A + B z + C (z kron z)`` is canonical Hamiltonian.

    ``J^T B`` must be symmetric, and the part of ``J^T C`` that acts on ``z kron z``
    (its symmetrization in the two Kronecker indices) must be a fully
    symmetric 3-tensor.  ``A`` is unconstrained.
    """
    B = np.asarray(B, float)
    C = np.asarray(C, float)
    d = B.shape[0]
    if B.shape != (d, d) or C.shape != (d, d * d) or np.asarray(A).shape != (d,):
        raise ValueError("inconsistent operator shapes")
    jt = symplectic_identity(d).T
    m = jt @ B
    b_res = float(np.linalg.norm(m - m.T))
    # column a*d + b acts on z_a z_b
    t = (jt @ C).reshape(d, d, d)
    t = 0.5 * (t + t.transpose(0, 2, 1))
    full = sum(t.transpose(perm) for perm in itertools.permutations(range(3))) / 6.0
    c_res = float(np.linalg.norm(t - full))
    return HamiltonianCheck(b_res <= tol and c_res <= tol, b_res, c_res)


# -- recorded (differentiable) evaluation ----------------------------------

def quad_rhs_tensor(alpha: Tensor, s_upper: Tensor, t_sym: Tensor, z: Tensor) -> Tensor:
    """Batched ``quad_rhs`` on the tape; ``z`` has shape ``(B, d)``."""
    b, d = z.shape
    s = ad.take(s_upper, sym2_index(d))
    tu_t = ad.take(t_sym, _unfold_t_index(d))
    zz = ad.reshape(ad.reshape(z, (b, d, 1)) * ad.reshape(z, (b, 1, d)), (b, d * d))
    grad = z @ s + zz @ tu_t + ad.reshape(alpha, (1, d))
    return ad.jt(grad)


def generating_function_oscillator() -> QuadHamParams:
    """Cubic latent model of the anharmonic oscillator obtained from a type-1 generating function.

    ``H(qh, ph) = 2 qh^2 ph + ph / 2 + ph^2 / 4`` in coordinates ``z = (qh, ph)``.
    """
    alpha = np.array([0.0, 0.5])
    s = np.array([[0.0, 0.0], [0.0, 0.5]])
    t = np.zeros((2, 2, 2))
    for idx in set(itertools.permutations((0, 0, 1))):
        t[idx] = 2.0
    return QuadHamParams.from_dense(alpha, s, t)
