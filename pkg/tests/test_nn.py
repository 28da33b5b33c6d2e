import numpy as np
import pytest
from hypothesis import given, strategies as st

from symplift.nn import autodiff as ad
from symplift.nn import (
    SELU_ALPHA, SELU_SCALE, ConvAEConfig, ConvDecoder, ConvEncoder, ConvLayer, LinearMap, Mlp,
    Tensor, conv_decode, conv_encode, grad_params, input_jacobian, mlp_forward,
    network_from_architecture, param_leaves, selu)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def fd_param_grad(net, scalar_fn, name):
    """Central differences of ``scalar_fn(net)`` w.r.t. every entry of ``net.params[name]``."""
    p = net.params[name]
    g = np.empty_like(p)
    for idx in np.ndindex(p.shape):
        old = p[idx]
        h = 1e-6 * (1.0 + abs(old))
        p[idx] = old + h
        fp = scalar_fn(net)
        p[idx] = old - h
        fm = scalar_fn(net)
        p[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def small_conv(seed=0):
    cfg = ConvAEConfig(16, 2, 2, [ConvLayer(3, 3, 2, 1), ConvLayer(4, 3, 2, 1)])
    return ConvEncoder(cfg, seed=seed), ConvDecoder(cfg, seed=seed + 1)


# -- activation -----------------------------------------------------------------

def test_selu_values():
    assert selu(0.0) == 0.0
    assert selu(1.0) == 1.0507009873554805
    assert selu(-1e3) == pytest.approx(-1.7580993408473766, rel=1e-15)
    assert SELU_ALPHA == 1.6732632423543772 and SELU_SCALE == 1.0507009873554805
    assert np.allclose(selu(np.array([-1.0, 2.0])),
                       [SELU_SCALE * SELU_ALPHA * (np.exp(-1.0) - 1), 2 * SELU_SCALE])


@given(x=st.floats(-5, 5))
def test_selu_derivatives(x):
    h = 1e-6
    if abs(x) < 1e-5:
        return
    slope = ad.selu_slope(np.array(x))
    assert slope == pytest.approx((selu(x + h) - selu(x - h)) / (2 * h), rel=1e-6)
    curv = ad.selu_curvature(np.array(x))
    fd = (ad.selu_slope(np.array(x + h)) - ad.selu_slope(np.array(x - h))) / (2 * h)
    assert curv == pytest.approx(fd, rel=1e-5, abs=1e-9)


# -- forward passes ---------------------------------------------------------------

def test_mlp_zero_weights():
    net = Mlp(3, [5, 5, 5], 2)
    for k in net.params:
        net.params[k][...] = 0.0
    assert np.array_equal(mlp_forward(net, [1.0, -2.0, 3.0]), np.zeros(2))


def test_mlp_identity_hand_computation():
    net = Mlp(2, [2, 2, 2], 2)
    for k, v in net.params.items():
        v[...] = np.eye(2) if k.startswith("W") else 0.0
    x = np.array([0.5, 2.0])
    lam = SELU_SCALE
    h1 = lam * x
    h2 = lam * h1 + h1
    h3 = lam * h2 + h2
    assert np.allclose(mlp_forward(net, x), h3, rtol=1e-15)
    assert np.allclose(mlp_forward(net, x), lam * (1 + lam) ** 2 * x, rtol=1e-14)


def test_mlp_without_skip_differs():
    a = Mlp(2, [4, 4, 4], 1, seed=3)
    b = Mlp(2, [4, 4, 4], 1, seed=3, skip=False)
    x = np.array([0.3, -0.7])
    assert not np.allclose(a(x), b(x))


def test_mlp_skip_only_between_equal_widths():
    net = Mlp(2, [3, 5, 5], 2, seed=0)
    assert net.widths == [2, 3, 5, 5, 2]
    y = net(np.ones(2))
    assert y.shape == (2,)


def test_batched_forward_matches_single(rng):
    nets = [Mlp(2, [8, 8, 8], 4, seed=1), small_conv()[0], small_conv()[1]]
    for net in nets:
        xs = rng.standard_normal((6, net.d_in))
        batched = net(xs)
        single = np.stack([net(x) for x in xs])
        assert np.max(np.abs(batched - single)) < 1e-12


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        Mlp(2, [4, 4, 4], 3)(np.ones(3))
    with pytest.raises(ValueError):
        small_conv()[0](np.ones(10))


def test_conv_zero_input_bias_propagation():
    enc, dec = small_conv()
    for net in (enc, dec):
        for k in net.params:
            if k.endswith(".b"):
                net.params[k][...] = 0.3
        out = net(np.zeros((4, net.d_in)))
        assert np.all(out == out[0])


@pytest.mark.parametrize("dim", [256, 512, 1024])
def test_conv_shape_round_trip(dim):
    cfg = ConvAEConfig(dim, 4)
    enc, dec = ConvEncoder(cfg), ConvDecoder(cfg, seed=1)
    x = np.random.default_rng(dim).standard_normal(dim)
    z = conv_encode(enc, x)
    assert z.shape == (4,)
    assert conv_decode(dec, z).shape == (dim,)


def test_conv_rejects_incompatible_layout():
    bad = ConvAEConfig(200, 4, 2, [ConvLayer(4, 3, 2, 1)] * 4)
    with pytest.raises(ValueError):
        ConvEncoder(bad)
    with pytest.raises(ValueError):
        ConvAEConfig(15, 2, 2).validate()


def test_degenerate_kernel_is_positionwise_dense(rng):
    x = rng.standard_normal((3, 1, 7))
    w = np.array([[[2.5]]])
    assert np.allclose(ad.conv1d(Tensor(x), Tensor(w)).data, 2.5 * x)
    x2 = rng.standard_normal((2, 3, 5))
    w2 = rng.standard_normal((4, 3, 1))
    expect = np.einsum("oc,bcl->bol", w2[:, :, 0], x2)
    assert np.allclose(ad.conv1d(Tensor(x2), Tensor(w2)).data, expect)


@given(k=st.integers(1, 4), s=st.integers(1, 3), p=st.integers(0, 2), length=st.integers(5, 12),
       seed=st.integers(0, 1000))
def test_conv1d_matches_naive(k, s, p, length, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, 3, length))
    w = r.standard_normal((4, 3, k))
    lout = ad.conv_output_length(length, k, s, p)
    if lout < 1:
        return
    xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
    naive = np.zeros((2, 4, lout))
    for o in range(lout):
        naive[:, :, o] = np.einsum("bck,ock->bo", xp[:, :, o * s:o * s + k], w)
    assert np.allclose(ad.conv1d(Tensor(x), Tensor(w), s, p).data, naive)


@given(k=st.integers(1, 4), s=st.integers(1, 3), p=st.integers(0, 1), length=st.integers(3, 9),
       seed=st.integers(0, 1000))
def test_conv_transpose_is_adjoint(k, s, p, length, seed):
    # <conv(x), y> == <x, conv_T(y)> with matching lengths
    r = np.random.default_rng(seed)
    lout = ad.conv_output_length(length, k, s, p)
    if lout < 1:
        return
    op = length - ad.conv_transpose_output_length(lout, k, s, p, 0)
    if not (op == 0 or 0 < op < s):
        return
    x = r.standard_normal((1, 2, length))
    w = r.standard_normal((3, 2, k))
    y = r.standard_normal((1, 3, lout))
    lhs = np.sum(ad.conv1d(Tensor(x), Tensor(w), s, p).data * y)
    back = ad.conv_transpose1d(Tensor(y), Tensor(w), s, p, op).data
    assert back.shape == x.shape
    assert lhs == pytest.approx(np.sum(x * back), rel=1e-10, abs=1e-10)


# -- gradients ------------------------------------------------------------------

def test_grad_hand_example():
    net = LinearMap.identity(2)
    leaves = param_leaves(net)
    y, _ = net.apply(Tensor(np.array([[1.0, 2.0]])), params=leaves)
    g = grad_params(ad.sum_(ad.square(y)), leaves)
    assert np.array_equal(g["W"], [[2.0, 4.0], [4.0, 8.0]])
    assert np.array_equal(g["b"], [2.0, 4.0])


def test_constant_loss_zero_gradient():
    net = Mlp(2, [3, 3, 3], 1)
    leaves = param_leaves(net)
    loss = ad.sum_(Tensor(np.array([1.0, 2.0])))
    g = grad_params(loss, leaves)
    assert all(np.all(v == 0) for v in g.values())


def test_non_scalar_record_rejected():
    net = LinearMap.identity(2)
    leaves = param_leaves(net)
    y, _ = net.apply(Tensor(np.ones((1, 2))), params=leaves)
    with pytest.raises(ValueError):
        grad_params(y, leaves)


def _output_loss(net, x, params=None):
    y, _ = net.apply(Tensor(x), params=params)
    return ad.sum_(ad.square(y) * 0.5 + y)


@pytest.mark.parametrize("which", ["mlp", "enc", "dec"])
def test_param_gradients_match_fd(which, rng):
    net = {"mlp": Mlp(3, [5, 5, 5], 2, seed=4), "enc": small_conv(2)[0],
           "dec": small_conv(2)[1]}[which]
    x = rng.standard_normal((3, net.d_in))
    leaves = param_leaves(net)
    g = grad_params(_output_loss(net, x, leaves), leaves)
    for name in net.params:
        fd = fd_param_grad(net, lambda n: _output_loss(n, x).item(), name)
        assert rel_err(g[name], fd) < 1e-5, name


def _jac_norm(net, x, params=None):
    jac = input_jacobian(net, x, params)
    return ad.sum_(ad.square(jac))


@pytest.mark.parametrize("which", ["mlp", "enc", "dec"])
def test_jacobian_norm_gradient_matches_fd(which, rng):
    net = {"mlp": Mlp(2, [4, 4, 4], 4, seed=5), "enc": small_conv(6)[0],
           "dec": small_conv(6)[1]}[which]
    x = rng.standard_normal((2, net.d_in))
    leaves = param_leaves(net)
    g = grad_params(_jac_norm(net, x, leaves), leaves)
    for name in net.params:
        fd = fd_param_grad(net, lambda n: _jac_norm(n, x).item(), name)
        assert rel_err(g[name], fd) < 1e-4, name


@given(seed=st.integers(0, 10_000), width=st.integers(2, 6), d_in=st.integers(1, 3),
       d_out=st.integers(1, 3))
def test_random_mlp_gradients_property(seed, width, d_in, d_out):
    net = Mlp(d_in, [width] * 3, d_out, seed=seed)
    x = np.random.default_rng(seed + 1).standard_normal((2, d_in))
    leaves = param_leaves(net)
    g = grad_params(_output_loss(net, x, leaves), leaves)
    for name in ("W0", "W2", "b3"):
        fd = fd_param_grad(net, lambda n: _output_loss(n, x).item(), name)
        assert rel_err(g[name], fd) < 1e-5


# -- input Jacobians ------------------------------------------------------------------

def test_linear_jacobian_exact(rng):
    w = rng.standard_normal((3, 2))
    net = LinearMap(2, 3, weight=w)
    assert np.array_equal(net.jacobian(np.array([0.4, -1.0])), w)


@pytest.mark.parametrize("which", ["mlp", "enc", "dec"])
def test_jacobian_columns_match_fd(which, rng):
    net = {"mlp": Mlp(2, [6, 6, 6], 4, seed=8), "enc": small_conv(1)[0],
           "dec": small_conv(1)[1]}[which]
    x = rng.standard_normal(net.d_in)
    jac = net.jacobian(x)
    assert jac.shape == (net.d_out, net.d_in)
    for i in range(net.d_in):
        h = 1e-6 * (1 + abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        col = (net(x + e) - net(x - e)) / (2 * h)
        assert rel_err(jac[:, i], col) < 1e-5
    batched = net.jacobian(np.stack([x, x]))
    assert np.allclose(batched[1], jac, atol=1e-14)
    assert np.allclose(input_jacobian(net, x).data[0], jac, atol=1e-14)


def test_jacobian_chain_rule_along_trajectory():
    from symplift.integrators import IntegratorConfig, integrate
    from symplift.systems import SystemSpec, rhs_function

    net = Mlp(2, [8, 8, 8], 4, seed=2)
    f = rhs_function(SystemSpec("pendulum"))
    tr = integrate(f, [1.0, 0.0], 1.0, IntegratorConfig(dt=0.1))
    for x, xdot in zip(tr.states, tr.derivs):
        h = 1e-5
        lhs = (net(x + h * xdot) - net(x - h * xdot)) / (2 * h)
        assert rel_err(net.jacobian(x) @ xdot, lhs) < 1e-6


def test_architecture_round_trip():
    for net in [Mlp(2, [4, 4, 4], 4, seed=9), LinearMap(3, 2), *small_conv(3)]:
        clone = network_from_architecture(net.architecture())
        assert type(clone) is type(net) and clone.d_in == net.d_in and clone.d_out == net.d_out
        assert list(clone.params) == list(net.params)
        assert all(clone.params[k].shape == v.shape for k, v in net.params.items())
    with pytest.raises(ValueError):
        network_from_architecture({"kind": "rnn"})


def test_initialization_bounds():
    net = Mlp(4, [16, 16, 16], 2, seed=0)
    assert np.all(np.abs(net.params["W0"]) <= 0.5)
    assert np.all(net.params["b0"] == 0)
    assert np.array_equal(Mlp(4, [16, 16, 16], 2, seed=0).params["W1"], net.params["W1"])
