"""Encoder/decoder networks with forward tangent propagation.

Every network implements ``apply(x, tangents=None, params=None)``:

* ``x`` has shape ``(B, d_in)``;
* ``tangents`` (optional) has shape ``(B, m, d_in)``: ``m`` input directions
  per sample;
* ``params`` maps parameter names to :class:`Tensor` leaves; when omitted the
  stored arrays are used as constants.

It returns ``(y, ty)`` with ``y`` of shape ``(B, d_out)`` and ``ty`` of shape
``(B, m, d_out)`` holding the directional derivatives ``Df(x) @ t``.  Both are
recorded on the tape, so losses built from Jacobians are differentiable with
respect to the parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Network:
    """Base class: ordered parameter arrays plus an ``apply`` method."""

    kind = "network"

    def __init__(self, d_in: int, d_out: int):
        self.d_in = d_in
        self.d_out = d_out
        self.params: dict[str, np.ndarray] = {}

    # subclasses fill ``self.params`` in declaration order
    def apply(self, x, tangents=None, params: Mapping[str, Tensor] | None = None):
        raise NotImplementedError

    def architecture(self) -> dict:
        raise NotImplementedError

    def _p(self, params, name: str) -> Tensor:
        if params is not None:
            return params[name]
        return Tensor(self.params[name])

    def __call__(self, x) -> np.ndarray:
        """Evaluate on a single sample or a batch, returning plain arrays."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        y, _ = self.apply(Tensor(np.atleast_2d(x)))
        return y.data[0] if single else y.data

    def jacobian(self, x) -> np.ndarray:
        """Exact input Jacobian ``(d_out, d_in)`` (or batched ``(B, d_out, d_in)``)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        _check_dim(xb, self.d_in)
        basis = np.broadcast_to(np.eye(self.d_in), (xb.shape[0], self.d_in, self.d_in))
        _, ty = self.apply(Tensor(xb), Tensor(basis))
        jac = np.swapaxes(ty.data, -1, -2)
        return jac[0] if single else jac

    def num_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))


def _check_dim(x: np.ndarray, d: int) -> None:
    if x.shape[-1] != d:
        raise ValueError(f"expected input dimension {d}, got {x.shape[-1]}")


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _dense(x: Tensor, t: Tensor | None, w: Tensor, b: Tensor):
    wt = w.mT
    y = x @ wt + b
    ty = None if t is None else t @ wt
    return y, ty


def _act(y: Tensor, ty: Tensor | None):
    h = ad.selu(y)
    if ty is None:
        return h, None
    slope = ad.selu_grad(y)
    return h, ty * ad.reshape(slope, (slope.shape[0], 1, slope.shape[1]))


class LinearMap(Network):
    """Affine map ``y = W x + b``; mostly for fixtures and baselines."""

    kind = "linear"

    def __init__(self, d_in: int, d_out: int, weight=None, bias=None, seed: int = 0):
        super().__init__(d_in, d_out)
        rng = np.random.default_rng(seed)
        w = _uniform(rng, (d_out, d_in), d_in) if weight is None else np.array(weight, dtype=float)
        b = np.zeros(d_out) if bias is None else np.array(bias, dtype=float)
        if w.shape != (d_out, d_in) or b.shape != (d_out,):
            raise ValueError("weight/bias shapes do not match (d_out, d_in)")
        self.params = {"W": w, "b": b}

    @classmethod
    def identity(cls, d: int) -> "LinearMap":
        return cls(d, d, weight=np.eye(d))

    def apply(self, x, tangents=None, params=None):
        x = ad.as_tensor(x)
        _check_dim(x.data, self.d_in)
        t = None if tangents is None else ad.as_tensor(tangents)
        return _dense(x, t, self._p(params, "W"), self._p(params, "b"))

    def architecture(self) -> dict:
        return {"kind": self.kind, "d_in": self.d_in, "d_out": self.d_out}


class Mlp(Network):
    """Dense SELU network with residual skips between equal-width hidden layers.

    ``h1 = selu(W1 x + b1)``, ``h_k = selu(W_k h_{k-1} + b_k) + h_{k-1}`` when
    widths match, and a linear output head.
    """

    kind = "mlp"

    def __init__(self, d_in: int, hidden: Sequence[int], d_out: int, seed: int = 0,
                 skip: bool = True):
        super().__init__(d_in, d_out)
        self.hidden = [int(h) for h in hidden]
        self.skip = skip
        self.seed = seed
        rng = np.random.default_rng(seed)
        widths = [d_in, *self.hidden, d_out]
        for k in range(len(widths) - 1):
            self.params[f"W{k}"] = _uniform(rng, (widths[k + 1], widths[k]), widths[k])
            self.params[f"b{k}"] = np.zeros(widths[k + 1])

    @property
    def widths(self) -> list[int]:
        return [self.d_in, *self.hidden, self.d_out]

    def apply(self, x, tangents=None, params=None):
        x = ad.as_tensor(x)
        _check_dim(x.data, self.d_in)
        t = None if tangents is None else ad.as_tensor(tangents)
        h, th = x, t
        nlayers = len(self.hidden) + 1
        for k in range(nlayers - 1):
            y, ty = _dense(h, th, self._p(params, f"W{k}"), self._p(params, f"b{k}"))
            a, ta = _act(y, ty)
            if self.skip and k > 0 and self.hidden[k] == self.hidden[k - 1]:
                a = a + h
                if ta is not None:
                    ta = ta + th
            h, th = a, ta
        k = nlayers - 1
        return _dense(h, th, self._p(params, f"W{k}"), self._p(params, f"b{k}"))

    def architecture(self) -> dict:
        return {"kind": self.kind, "d_in": self.d_in, "d_out": self.d_out,
                "hidden": self.hidden, "skip": self.skip, "seed": self.seed}


@dataclass
class ConvLayer:
    out_channels: int
    kernel: int
    stride: int
    padding: int


@dataclass
class ConvAEConfig:
    """Layout of the 1D convolutional autoencoder.

    The state vector of length ``2N`` is viewed as ``in_channels`` channels of
    length ``2N / in_channels`` (default: positions and momenta as two
    channels).  The decoder mirrors the encoder with transposed convolutions
    using ``output_padding``.
    """

    state_dim: int
    latent_dim: int
    in_channels: int = 2
    layers: list[ConvLayer] = field(default_factory=lambda: [
        ConvLayer(8, 3, 2, 1), ConvLayer(16, 3, 2, 1),
        ConvLayer(32, 3, 2, 1), ConvLayer(32, 3, 2, 1)])
    output_padding: int = 1

    def lengths(self) -> list[int]:
        """Spatial lengths after each encoder layer, starting with the input length."""
        if self.state_dim % self.in_channels:
            raise ValueError(f"state dimension {self.state_dim} not divisible by "
                             f"{self.in_channels} channels")
        lens = [self.state_dim // self.in_channels]
        for layer in self.layers:
            n = ad.conv_output_length(lens[-1], layer.kernel, layer.stride, layer.padding)
            if n < 1:
                raise ValueError(f"convolution {layer} leaves no output for length {lens[-1]}")
            lens.append(n)
        return lens

    def validate(self) -> None:
        lens = self.lengths()
        cur = lens[-1]
        for layer, target in zip(reversed(self.layers), reversed(lens[:-1])):
            op = self.output_padding if layer.stride > 1 else 0
            cur = ad.conv_transpose_output_length(cur, layer.kernel, layer.stride,
                                                  layer.padding, op)
            if cur != target:
                raise ValueError(
                    f"decoder cannot mirror encoder: transposed convolution gives length "
                    f"{cur}, expected {target} (layer {layer})")
            if op > 0 and op >= layer.stride:
                raise ValueError("output padding must be smaller than the stride")

    def to_dict(self) -> dict:
        return {"state_dim": self.state_dim, "latent_dim": self.latent_dim,
                "in_channels": self.in_channels, "output_padding": self.output_padding,
                "layers": [[l.out_channels, l.kernel, l.stride, l.padding] for l in self.layers]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConvAEConfig":
        return cls(int(d["state_dim"]), int(d["latent_dim"]), int(d.get("in_channels", 2)),
                   [ConvLayer(*map(int, l)) for l in d["layers"]],
                   int(d.get("output_padding", 1)))


def _fold_batch(t: Tensor, channels: int, length: int) -> Tensor:
    # (B, m, C*L) -> (B*m, C, L)
    return ad.reshape(t, (t.shape[0] * t.shape[1], channels, length))


class ConvEncoder(Network):
    """Convolutions (SELU after each) followed by a linear dense map to the latent space."""

    kind = "conv_encoder"

    def __init__(self, config: ConvAEConfig, seed: int = 0):
        config.validate()
        super().__init__(config.state_dim, config.latent_dim)
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        cin = config.in_channels
        for i, layer in enumerate(config.layers):
            fan_in = cin * layer.kernel
            self.params[f"conv{i}.w"] = _uniform(rng, (layer.out_channels, cin, layer.kernel), fan_in)
            self.params[f"conv{i}.b"] = np.zeros(layer.out_channels)
            cin = layer.out_channels
        flat = cin * config.lengths()[-1]
        self.params["dense.w"] = _uniform(rng, (config.latent_dim, flat), flat)
        self.params["dense.b"] = np.zeros(config.latent_dim)

    def apply(self, x, tangents=None, params=None):
        cfg = self.config
        x = ad.as_tensor(x)
        _check_dim(x.data, self.d_in)
        t = None if tangents is None else ad.as_tensor(tangents)
        b = x.shape[0]
        m = 0 if t is None else t.shape[1]
        lens = cfg.lengths()
        h = ad.reshape(x, (b, cfg.in_channels, lens[0]))
        th = None if t is None else _fold_batch(t, cfg.in_channels, lens[0])
        for i, layer in enumerate(cfg.layers):
            w = self._p(params, f"conv{i}.w")
            bias = self._p(params, f"conv{i}.b")
            y = ad.conv1d(h, w, layer.stride, layer.padding)
            y = y + ad.reshape(bias, (1, layer.out_channels, 1))
            h = ad.selu(y)
            if th is not None:
                ty = ad.conv1d(th, w, layer.stride, layer.padding)
                slope = ad.selu_grad(y)
                # (B*m, C, L) * (B, 1, C, L) via a 4D view
                ty4 = ad.reshape(ty, (b, m) + ty.shape[1:])
                ty4 = ty4 * ad.reshape(slope, (b, 1) + slope.shape[1:])
                th = ad.reshape(ty4, ty.shape)
        flat = h.shape[1] * h.shape[2]
        hf = ad.reshape(h, (b, flat))
        thf = None if th is None else ad.reshape(th, (b, m, flat))
        return _dense(hf, thf, self._p(params, "dense.w"), self._p(params, "dense.b"))

    def architecture(self) -> dict:
        return {"kind": self.kind, "config": self.config.to_dict(), "seed": self.seed}


class ConvDecoder(Network):
    """Dense map from the latent space, then transposed convolutions mirroring the encoder."""

    kind = "conv_decoder"

    def __init__(self, config: ConvAEConfig, seed: int = 0):
        config.validate()
        super().__init__(config.latent_dim, config.state_dim)
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        lens = config.lengths()
        chans = [config.in_channels] + [l.out_channels for l in config.layers]
        flat = chans[-1] * lens[-1]
        self.params["dense.w"] = _uniform(rng, (flat, config.latent_dim), config.latent_dim)
        self.params["dense.b"] = np.zeros(flat)
        nl = len(config.layers)
        for j in range(nl):
            i = nl - 1 - j  # mirrored encoder layer
            layer = config.layers[i]
            cin, cout = chans[i + 1], chans[i]
            fan_in = cin * layer.kernel
            self.params[f"convT{j}.w"] = _uniform(rng, (cin, cout, layer.kernel), fan_in)
            self.params[f"convT{j}.b"] = np.zeros(cout)

    def apply(self, x, tangents=None, params=None):
        cfg = self.config
        x = ad.as_tensor(x)
        _check_dim(x.data, self.d_in)
        t = None if tangents is None else ad.as_tensor(tangents)
        b = x.shape[0]
        m = 0 if t is None else t.shape[1]
        lens = cfg.lengths()
        chans = [cfg.in_channels] + [l.out_channels for l in cfg.layers]
        y, ty = _dense(x, t, self._p(params, "dense.w"), self._p(params, "dense.b"))
        h, th = _act(y, ty)
        h = ad.reshape(h, (b, chans[-1], lens[-1]))
        if th is not None:
            th = ad.reshape(th, (b * m, chans[-1], lens[-1]))
        nl = len(cfg.layers)
        for j in range(nl):
            i = nl - 1 - j
            layer = cfg.layers[i]
            op = cfg.output_padding if layer.stride > 1 else 0
            w = self._p(params, f"convT{j}.w")
            bias = self._p(params, f"convT{j}.b")
            y = ad.conv_transpose1d(h, w, layer.stride, layer.padding, op)
            y = y + ad.reshape(bias, (1, chans[i], 1))
            ty = None if th is None else ad.conv_transpose1d(th, w, layer.stride, layer.padding, op)
            if j < nl - 1:
                h = ad.selu(y)
                if ty is not None:
                    slope = ad.selu_grad(y)
                    ty4 = ad.reshape(ty, (b, m) + ty.shape[1:])
                    ty4 = ty4 * ad.reshape(slope, (b, 1) + slope.shape[1:])
                    ty = ad.reshape(ty4, ty.shape)
            else:
                h = y
            th = ty
        out = ad.reshape(h, (b, self.d_out))
        tout = None if th is None else ad.reshape(th, (b, m, self.d_out))
        return out, tout

    def architecture(self) -> dict:
        return {"kind": self.kind, "config": self.config.to_dict(), "seed": self.seed}


def network_from_architecture(arch: Mapping) -> Network:
    kind = arch["kind"]
    if kind == "mlp":
        return Mlp(arch["d_in"], arch["hidden"], arch["d_out"], seed=arch.get("seed", 0),
                   skip=arch.get("skip", True))
    if kind == "linear":
        return LinearMap(arch["d_in"], arch["d_out"])
    if kind == "conv_encoder":
        return ConvEncoder(ConvAEConfig.from_dict(arch["config"]), seed=arch.get("seed", 0))
    if kind == "conv_decoder":
        return ConvDecoder(ConvAEConfig.from_dict(arch["config"]), seed=arch.get("seed", 0))
    raise ValueError(f"unknown network kind {kind!r}")


# -- functional surface ----------------------------------------------------

def selu(x):
    """Scaled exponential linear unit (elementwise)."""
    out = ad.selu_value(np.asarray(x, dtype=np.float64))
    return float(out) if np.ndim(out) == 0 else out


def mlp_forward(net: Mlp, x) -> np.ndarray:
    return net(x)


def conv_encode(encoder: ConvEncoder, x) -> np.ndarray:
    return encoder(x)


def conv_decode(decoder: ConvDecoder, z) -> np.ndarray:
    return decoder(z)


def input_jacobian(net: Network, x, params: Mapping[str, Tensor] | None = None) -> Tensor:
    """Input Jacobian as a recorded tensor of shape ``(B, d_out, d_in)``.

    Pass ``params`` (leaves) to make scalar functions of the Jacobian
    differentiable with respect to the network parameters.
    """
    xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _check_dim(xb, net.d_in)
    basis = np.broadcast_to(np.eye(net.d_in), (xb.shape[0], net.d_in, net.d_in))
    _, ty = net.apply(Tensor(xb), Tensor(basis), params=params)
    return ty.mT


def param_leaves(net: Network) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=True) for k, v in net.params.items()}


def grad_params(loss: Tensor, leaves: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Reverse-mode gradient of a scalar record with respect to ``leaves``."""
    if loss.data.size != 1:
        raise ValueError(f"gradient needs a scalar record, got shape {loss.shape}")
    for leaf in leaves.values():
        leaf.grad = None
    loss.backward()
    return {k: (np.zeros_like(v.data) if v.grad is None else v.grad) for k, v in leaves.items()}
