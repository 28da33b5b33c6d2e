import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from symplift.systems import (
    Box, InfeasibleWindowError, SystemSpec, hamiltonian, laplacian, rhs, rhs_jacobian,
    sample_initial_conditions, sech_initial_state, symplectic_identity, wave_operator)

from conftest import central_gradient

PLANAR = ["pendulum", "lotka_volterra", "oscillator"]


def all_systems():
    return [SystemSpec(k) for k in PLANAR] + [
        SystemSpec("wave", n_grid=16), SystemSpec("nls", n_grid=16)]


def test_rhs_examples():
    assert np.allclose(rhs(SystemSpec("pendulum"), [0.0, 0.0]), [0.0, 0.0])
    assert np.allclose(rhs(SystemSpec("oscillator"), [1.0, 0.0]), [0.0, -2.0])
    assert np.allclose(rhs(SystemSpec("lotka_volterra"), [0.0, 0.0]), [0.0, -1.0])
    assert np.all(rhs(SystemSpec("wave", n_grid=8), np.zeros(16)) == 0.0)


def test_hamiltonian_examples():
    assert hamiltonian(SystemSpec("oscillator"), [0.0, 0.0]) == 0.0
    assert hamiltonian(SystemSpec("oscillator"), [1.0, 1.0]) == pytest.approx(1.25, abs=1e-15)
    assert hamiltonian(SystemSpec("lotka_volterra"), [0.0, 0.0]) == pytest.approx(-2.0, abs=1e-15)


def test_pendulum_energy_resolution():
    # p^2/2 + 1 - cos q is conserved by q' = p, p' = -sin q
    s = SystemSpec("pendulum")
    assert hamiltonian(s, [0.0, 0.0]) == 0.0
    assert hamiltonian(s, [math.pi, 0.0]) == pytest.approx(2.0)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        rhs(SystemSpec("pendulum"), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        hamiltonian(SystemSpec("wave", n_grid=8), np.zeros(10))


def test_spec_defaults_and_aliases():
    nls = SystemSpec("NLS", n_grid=32)
    assert (nls.alpha, nls.beta, nls.domain) == (0.5, 1.0, (-10.0, 10.0))
    assert nls.dx == pytest.approx(20.0 / 32)
    wave = SystemSpec("LinearWave", n_grid=10)
    assert wave.kind == "wave" and wave.domain == (-5.0, 5.0) and wave.dimension == 20
    assert SystemSpec("AnharmonicOscillator").kind == "oscillator"
    assert SystemSpec("LotkaVolterra").dimension == 2
    with pytest.raises(ValueError):
        SystemSpec("duffing")
    assert SystemSpec.from_dict(nls.to_dict()) == nls


def test_wave_operator_small():
    k = wave_operator(3, 1.0, 1.0)
    dxx = k[3:, :3]
    assert np.array_equal(dxx, [[-2, 1, 1], [1, -2, 1], [1, 1, -2]])
    assert np.array_equal(k[:3, 3:], np.eye(3))
    assert np.array_equal(dxx, dxx.T)
    x = np.concatenate([np.full(3, 0.7), np.zeros(3)])
    assert np.allclose(k @ x, 0.0)
    with pytest.raises(ValueError):
        wave_operator(2, 1.0)


def test_wave_operator_matches_rhs(rng):
    s = SystemSpec("wave", n_grid=12, c=1.7)
    x = rng.standard_normal(24)
    assert np.allclose(wave_operator(12, s.dx, 1.7) @ x, rhs(s, x), rtol=1e-13, atol=1e-12)
    lap = laplacian(12, s.dx).toarray()
    assert np.allclose(lap.sum(axis=1), 0.0)


@pytest.mark.parametrize("system", all_systems(), ids=lambda s: s.kind)
def test_rhs_is_symplectic_gradient(system, rng):
    # PDE energies are Riemann sums with weight dx, so rhs = J grad H / dx
    j = symplectic_identity(system.dimension)
    for _ in range(5):
        x = 0.8 * rng.standard_normal(system.dimension)
        grad = central_gradient(lambda y: hamiltonian(system, y), x) / system.dx
        f = rhs(system, x)
        assert np.max(np.abs(f - j @ grad)) < 1e-6 * (1 + np.max(np.abs(f)))


@pytest.mark.parametrize("system", all_systems(), ids=lambda s: s.kind)
def test_rhs_jacobian_matches_fd(system, rng):
    x = 0.5 * rng.standard_normal(system.dimension)
    jac = rhs_jacobian(system, x)
    eps = 1e-6
    for i in range(system.dimension):
        e = np.zeros_like(x)
        e[i] = eps
        col = (rhs(system, x + e) - rhs(system, x - e)) / (2 * eps)
        assert np.allclose(jac[:, i], col, atol=1e-5)


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**32 - 1))
def test_wave_rhs_linear(a, b, seed):
    s = SystemSpec("wave", n_grid=9)
    r = np.random.default_rng(seed)
    x, y = r.standard_normal(18), r.standard_normal(18)
    lhs = rhs(s, a * x + b * y)
    assert np.allclose(lhs, a * rhs(s, x) + b * rhs(s, y), rtol=1e-12, atol=1e-10)


@given(seed=st.integers(0, 2**32 - 1))
def test_nls_energy_stationary_along_flow(seed):
    s = SystemSpec("nls", n_grid=10)
    x = np.random.default_rng(seed).uniform(-1, 1, 20)
    grad = central_gradient(lambda y: hamiltonian(s, y), x)
    assert abs(grad @ rhs(s, x)) < 1e-6


def test_batched_rhs_and_energy(rng):
    for s in all_systems():
        xs = 0.5 * rng.standard_normal((4, s.dimension))
        assert np.allclose(rhs(s, xs), np.stack([rhs(s, x) for x in xs]))
        assert np.allclose(hamiltonian(s, xs), [hamiltonian(s, x) for x in xs])


def test_sampling_pendulum_window():
    s = SystemSpec("pendulum")
    ics = sample_initial_conditions(s, 10, Box((-2, -2), (2, 2)), (-math.inf, 2.0), rng_seed=0)
    assert len(ics) == 10
    for x in ics:
        assert hamiltonian(s, x) < 2.0
        assert np.all(np.abs(x) <= 2.0)


def test_sampling_infeasible_window():
    with pytest.raises(InfeasibleWindowError):
        sample_initial_conditions(SystemSpec("oscillator"), 3, Box((-1, -1), (1, 1)),
                                  (1e9, 1e9 + 1), rng_seed=0, max_draws=2000)


def test_sampling_deterministic():
    s = SystemSpec("lotka_volterra")
    a = sample_initial_conditions(s, 5, rng_seed=3)
    b = sample_initial_conditions(s, 5, rng_seed=3)
    c = sample_initial_conditions(s, 5, rng_seed=4)
    assert np.array_equal(np.array(a), np.array(b))
    assert not np.array_equal(np.array(a), np.array(c))
    for x in a:
        assert -4.0 <= hamiltonian(s, x) < 4.0


def test_sampling_rejects_pde_and_bad_count():
    with pytest.raises(ValueError):
        sample_initial_conditions(SystemSpec("wave", n_grid=8), 1)
    with pytest.raises(ValueError):
        sample_initial_conditions(SystemSpec("pendulum"), 0)


def test_sech_state():
    s = SystemSpec("wave", n_grid=64)
    x = sech_initial_state(s)
    assert x.shape == (128,)
    assert np.all(x[64:] == 0.0)
    assert x[:64].max() == pytest.approx(1.0, abs=1e-2)
    with pytest.raises(ValueError):
        sech_initial_state(SystemSpec("pendulum"))
