"""Joint training of autoencoder and latent dynamics.

Three modes share one loop:

``lifting``
    MLP autoencoder from the state space to a latent space of at least the
    same dimension; the *encoder* Jacobian is pushed towards symplecticity.
``reduction``
    Convolutional autoencoder to a smaller latent space; the *decoder*
    Jacobian is pushed towards symplecticity.
``koopman``
    Linear latent dynamics ``dz/dt = K z`` without any symplectic loss.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .integrators import Dataset, Normalization
from .nn import autodiff as ad
from .nn.autodiff import Tensor
from .nn.networks import ConvAEConfig, ConvDecoder, ConvEncoder, ConvLayer, Mlp, Network
from .quadham import QuadHamParams, build_operators, fit_check_is_hamiltonian, quad_rhs_tensor
from .systems import SystemSpec, symplectic_identity

MODES = ("lifting", "reduction", "koopman")


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, components: dict):
        parts = ", ".join(f"{k}={v:.3e}" for k, v in components.items())
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: {parts}")
        self.epoch = epoch
        self.batch = batch
        self.components = components


class MissingDerivativesError(ValueError):
    """Training needs time derivatives of the states."""


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.1
    lambda2: float = 1.0
    lambda3: float = 1.0

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be nonnegative")

    @classmethod
    def lifting(cls) -> "LossWeights":
        return cls(0.1, 1.0, 1.0)

    @classmethod
    def reduction(cls) -> "LossWeights":
        return cls(1.0, 0.1, 0.1)

    @classmethod
    def koopman(cls) -> "LossWeights":
        return cls(1.0, 0.0, 1.0)

    @classmethod
    def for_mode(cls, mode: str) -> "LossWeights":
        return {"lifting": cls.lifting, "reduction": cls.reduction, "koopman": cls.koopman}[mode]()


@dataclass
class TrainConfig:
    mode: str = "lifting"
    latent_dim: int = 4
    learning_rate: float = 3e-3
    batch_size: int = 5
    epochs: int = 100
    weight_decay: float = 1e-5
    lr_decay_factor: float = 0.1
    lr_decay_step: Optional[int] = None
    seed: int = 0
    mae_recon_weight: float = 0.5
    param_penalty_weight: float = 1e-5
    stop_tolerance: Optional[float] = None
    architecture: Optional[str] = None
    hidden: list[int] = field(default_factory=lambda: [64, 64, 64])
    conv_in_channels: int = 2
    conv_layers: list[list[int]] = field(default_factory=lambda: [
        [8, 3, 2, 1], [16, 3, 2, 1], [32, 3, 2, 1], [32, 3, 2, 1]])
    normalize: Optional[bool] = None
    train_autoencoder: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.latent_dim < 2 or self.latent_dim % 2:
            raise ValueError("latent_dim must be even and >= 2")
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("need learning_rate >= 0, batch_size >= 1, epochs >= 1")
        if self.weight_decay < 0 or self.param_penalty_weight < 0 or self.mae_recon_weight < 0:
            raise ValueError("regularization weights must be nonnegative")
        if not 0 < self.lr_decay_factor <= 1:
            raise ValueError("lr_decay_factor must lie in (0, 1]")
        if self.lr_decay_step is not None and self.lr_decay_step < 1:
            raise ValueError("lr_decay_step must be positive")
        if self.architecture is None:
            self.architecture = "conv" if self.mode == "reduction" else "mlp"
        if self.architecture not in ("mlp", "conv"):
            raise ValueError("architecture must be 'mlp' or 'conv'")

    @property
    def decay_step(self) -> int:
        return self.lr_decay_step or math.ceil(self.epochs / 2)

    def learning_rate_at(self, epoch: int) -> float:
        return self.learning_rate * self.lr_decay_factor ** (epoch // self.decay_step)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class KoopmanDynamics:
    """Linear latent dynamics ``dz/dt = K z``."""

    K: np.ndarray

    def __post_init__(self):
        self.K = np.array(self.K, dtype=np.float64)
        if self.K.ndim != 2 or self.K.shape[0] != self.K.shape[1]:
            raise ValueError("K must be square")

    @property
    def dim(self) -> int:
        return self.K.shape[0]

    @classmethod
    def zeros(cls, dim: int) -> "KoopmanDynamics":
        return cls(np.zeros((dim, dim)))

    def rhs(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) @ self.K.T

    def jacobian(self, z) -> np.ndarray:
        return self.K

    def flat(self) -> np.ndarray:
        return self.K.reshape(-1)


@dataclass
class ModelBundle:
    """Encoder, decoder and latent dynamics, with the normalization they were trained on."""

    encoder: Network
    decoder: Network
    dynamics: QuadHamParams | KoopmanDynamics
    mode: str
    system: Optional[SystemSpec] = None
    normalization: Optional[Normalization] = None
    config: Optional[TrainConfig] = None

    def __post_init__(self):
        if not (self.encoder.d_out == self.dynamics.dim == self.decoder.d_in):
            raise ValueError("encoder output, latent dynamics and decoder input dimensions differ")
        if self.encoder.d_in != self.decoder.d_out:
            raise ValueError("encoder input and decoder output dimensions differ")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.normalization is None:
            self.normalization = Normalization.identity(self.state_dim)

    @property
    def state_dim(self) -> int:
        return self.encoder.d_in

    @property
    def latent_dim(self) -> int:
        return self.encoder.d_out

    @property
    def is_koopman(self) -> bool:
        return isinstance(self.dynamics, KoopmanDynamics)

    def encode(self, x) -> np.ndarray:
        return self.encoder(self.normalization.apply(x))

    def decode(self, z) -> np.ndarray:
        return self.normalization.invert(self.decoder(z))

    def encoder_jacobian(self, x) -> np.ndarray:
        """Jacobian of the physical-coordinate encoder, ``(L, D)`` or batched."""
        return self.encoder.jacobian(self.normalization.apply(x)) / self.normalization.scale

    def decoder_jacobian(self, z) -> np.ndarray:
        jac = self.decoder.jacobian(z)
        return jac * self.normalization.scale[:, None]

    def latent_rhs(self, z) -> np.ndarray:
        return self.dynamics.rhs(z)

    def latent_jacobian(self, z) -> np.ndarray:
        return self.dynamics.jacobian(z)

    def latent_hamiltonian(self, z):
        if self.is_koopman:
            raise TypeError("linear-embedding bundles carry no latent Hamiltonian")
        return self.dynamics.hamiltonian(z)

    def structure_residuals(self):
        if self.is_koopman:
            return None
        return fit_check_is_hamiltonian(*build_operators(self.dynamics), tol=1e-14)


# -- losses -------------------------------------------------------------------

@dataclass
class Batch:
    states: np.ndarray
    derivs: Optional[np.ndarray] = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        if self.derivs is not None:
            self.derivs = np.atleast_2d(np.asarray(self.derivs, dtype=np.float64))
        if self.states.shape[0] == 0:
            raise ValueError("empty batch")


def _as_batch(batch) -> Batch:
    if isinstance(batch, Batch):
        return batch
    if isinstance(batch, tuple):
        return Batch(*batch)
    return Batch(batch)


def _dyn_tensors(dynamics, leaves: dict | None) -> dict[str, Tensor]:
    if leaves is not None:
        return leaves
    if isinstance(dynamics, KoopmanDynamics):
        return {"K": Tensor(dynamics.K)}
    return {"alpha": Tensor(dynamics.alpha), "s_upper": Tensor(dynamics.s_upper),
            "t_sym": Tensor(dynamics.t_sym)}


def _latent_rhs_tensor(dynamics, dyn: dict[str, Tensor], z: Tensor) -> Tensor:
    if isinstance(dynamics, KoopmanDynamics):
        return z @ dyn["K"].mT
    return quad_rhs_tensor(dyn["alpha"], dyn["s_upper"], dyn["t_sym"], z)


def _gram_residual(t: Tensor) -> Tensor:
    """Squared Frobenius norm of ``M^T J M - J`` per sample, ``t`` holding ``M^T`` as (B, k, D)."""
    k = t.shape[1]
    gram = ad.neg(ad.jt(t)) @ t.mT  # M^T J M with t = M^T
    r = gram - symplectic_identity(k)
    return ad.sum_(ad.square(r), axis=(1, 2))


def loss_terms(bundle: ModelBundle, batch, *, mode: str | None = None,
               weights: LossWeights | None = None, params: dict | None = None,
               need: tuple[str, ...] = ("encdec", "symp", "zdot")) -> dict[str, Tensor]:
    """All loss components as recorded tensors.

    ``params`` maps ``"encoder"``, ``"decoder"`` and ``"dynamics"`` to leaf
    dictionaries; missing groups are treated as constants.
    """
    batch = _as_batch(batch)
    mode = mode or bundle.mode
    cfg = bundle.config or TrainConfig(mode=mode, latent_dim=bundle.latent_dim)
    params = params or {}
    pe, pd = params.get("encoder"), params.get("decoder")
    norm = bundle.normalization
    x = batch.states
    if x.shape[1] != bundle.state_dim:
        raise ValueError(f"batch dimension {x.shape[1]} does not match model {bundle.state_dim}")
    if "symp" in need and mode != "koopman" and (bundle.state_dim % 2 or bundle.latent_dim % 2):
        raise ValueError("symplectic loss needs even state and latent dimensions")
    xn = Tensor(norm.apply(x))
    b, d = x.shape
    want_zdot = "zdot" in need
    if want_zdot and batch.derivs is None:
        raise MissingDerivativesError("the derivative-matching loss needs time derivatives")
    out: dict[str, Tensor] = {}

    if mode == "lifting" and "symp" in need:
        basis = np.broadcast_to(np.diag(1.0 / norm.scale), (b, d, d))
        z, tz = bundle.encoder.apply(xn, Tensor(basis), params=pe)
        out["symp"] = ad.mean(_gram_residual(tz))
        if want_zdot:
            xdot = Tensor(batch.derivs.reshape(b, 1, d))
            zdot = ad.reshape(xdot @ tz, (b, bundle.latent_dim))
    elif want_zdot:
        xdot = Tensor((batch.derivs / norm.scale).reshape(b, 1, d))
        z, tz = bundle.encoder.apply(xn, xdot, params=pe)
        zdot = ad.reshape(tz, (b, bundle.latent_dim))
    else:
        z, _ = bundle.encoder.apply(xn, params=pe)

    if mode == "reduction" and "symp" in need:
        lat = bundle.latent_dim
        basis = np.broadcast_to(np.eye(lat), (b, lat, lat))
        xr, tx = bundle.decoder.apply(z, Tensor(basis), params=pd)
        txp = tx * norm.scale.reshape(1, 1, d)
        out["symp"] = ad.mean(_gram_residual(txp))
    else:
        xr, _ = bundle.decoder.apply(z, params=pd)

    if "encdec" in need:
        r = xr - xn
        out["encdec"] = ad.mean(ad.square(r)) + cfg.mae_recon_weight * ad.mean(ad.abs_(r))

    if want_zdot:
        dyn = _dyn_tensors(bundle.dynamics, params.get("dynamics"))
        f = _latent_rhs_tensor(bundle.dynamics, dyn, z)
        fit = ad.mean(ad.square(zdot - f))
        count = sum(v.data.size for v in dyn.values())
        l1 = None
        for v in dyn.values():
            s = ad.sum_(ad.abs_(v))
            l1 = s if l1 is None else l1 + s
        out["zdot"] = fit + (cfg.param_penalty_weight / count) * l1

    if weights is not None:
        total = weights.lambda1 * out["encdec"] + weights.lambda3 * out["zdot"]
        if mode != "koopman":
            total = total + weights.lambda2 * out["symp"]
        out["total"] = total
    return out


def loss_encdec(bundle: ModelBundle, batch) -> float:
    """Mean squared plus weighted mean absolute reconstruction error."""
    return loss_terms(bundle, batch, need=("encdec",))["encdec"].item()


def loss_symp(bundle: ModelBundle, batch, mode: str | None = None) -> float:
    """Mean over the batch of the squared Frobenius symplecticity residual."""
    mode = mode or bundle.mode
    if mode == "koopman":
        mode = "lifting"
    return loss_terms(bundle, batch, mode=mode, need=("symp",))["symp"].item()


def loss_zdot(bundle: ModelBundle, batch, mode: str | None = None) -> float:
    return loss_terms(bundle, batch, mode=mode, need=("zdot",))["zdot"].item()


def total_loss(bundle: ModelBundle, batch, weights: LossWeights, mode: str | None = None) -> float:
    return loss_terms(bundle, batch, mode=mode, weights=weights)["total"].item()


# -- optimization ---------------------------------------------------------------

class ParamStore:
    """Packs trainable arrays into one flat vector; the owners keep views into it."""

    def __init__(self):
        self.entries: list[tuple[str, dict, str, tuple, int]] = []
        self.size = 0
        self.flat = np.zeros(0)

    def add_group(self, group: str, arrays: dict):
        for name, arr in arrays.items():
            self.entries.append((group, arrays, name, arr.shape, self.size))
            self.size += arr.size

    def pack(self) -> None:
        flat = np.empty(self.size)
        for _, arrays, name, shape, off in self.entries:
            n = int(np.prod(shape))
            flat[off:off + n] = arrays[name].reshape(-1)
        self.flat = flat
        for _, arrays, name, shape, off in self.entries:
            n = int(np.prod(shape))
            arrays[name] = flat[off:off + n].reshape(shape)

    def mask(self, groups: set[str]) -> np.ndarray:
        m = np.zeros(self.size)
        for group, _, _, shape, off in self.entries:
            if group in groups:
                m[off:off + int(np.prod(shape))] = 1.0
        return m

    def leaves(self) -> dict[str, dict[str, Tensor]]:
        out: dict[str, dict[str, Tensor]] = {}
        for group, arrays, name, _, _ in self.entries:
            out.setdefault(group, {})[name] = Tensor(arrays[name], requires_grad=True)
        return out

    def gather(self, leaves: dict[str, dict[str, Tensor]]) -> np.ndarray:
        g = np.zeros(self.size)
        for group, _, name, shape, off in self.entries:
            leaf = leaves[group][name]
            if leaf.grad is not None:
                g[off:off + int(np.prod(shape))] = leaf.grad.reshape(-1)
        return g


class _DynView(dict):
    """Dict facade over the latent-dynamics storage so ParamStore can rebind it."""

    def __init__(self, dynamics):
        self.dynamics = dynamics
        if isinstance(dynamics, KoopmanDynamics):
            super().__init__(K=dynamics.K)
        else:
            super().__init__(alpha=dynamics.alpha, s_upper=dynamics.s_upper, t_sym=dynamics.t_sym)

    def __setitem__(self, key, value):
        super().__setitem__(key, value)
        setattr(self.dynamics, key, value)


class Adam:
    """Adam with decoupled weight decay applied where ``decay_mask`` is one."""

    def __init__(self, size: int, decay_mask: np.ndarray, weight_decay: float,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.decay = weight_decay * decay_mask

    def step(self, theta: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1.0 - b1) * grad
        self.v *= b2
        self.v += (1.0 - b2) * grad * grad
        mhat = self.m / (1.0 - b1**self.t)
        vhat = self.v / (1.0 - b2**self.t)
        theta -= lr * (self.decay * theta)
        theta -= lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class LossHistory:
    epoch: list[int] = field(default_factory=list)
    encdec: list[float] = field(default_factory=list)
    symp: list[float] = field(default_factory=list)
    zdot: list[float] = field(default_factory=list)
    total: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epoch)

    def append(self, epoch: int, encdec: float, symp: float, zdot: float, total: float):
        self.epoch.append(epoch)
        self.encdec.append(encdec)
        self.symp.append(symp)
        self.zdot.append(zdot)
        self.total.append(total)

    def final(self) -> dict[str, float]:
        return {"encdec": self.encdec[-1], "symp": self.symp[-1], "zdot": self.zdot[-1],
                "total": self.total[-1]}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "L_encdec", "L_symp", "L_zdot", "total"])
            for row in zip(self.epoch, self.encdec, self.symp, self.zdot, self.total):
                w.writerow([row[0]] + ["" if math.isnan(v) else repr(float(v)) for v in row[1:]])

    @classmethod
    def read_csv(cls, path) -> "LossHistory":
        h = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                vals = [float(row[k]) if row[k] != "" else math.nan
                        for k in ("L_encdec", "L_symp", "L_zdot", "total")]
                h.append(int(row["epoch"]), *vals)
        return h


@dataclass
class TrainResult:
    bundle: ModelBundle
    history: LossHistory


def build_bundle(dim: int, config: TrainConfig, system: SystemSpec | None = None,
                 normalization: Normalization | None = None) -> ModelBundle:
    """Freshly initialized networks and zero latent dynamics for ``config``."""
    lat = config.latent_dim
    if config.architecture == "mlp":
        enc = Mlp(dim, config.hidden, lat, seed=config.seed)
        dec = Mlp(lat, config.hidden, dim, seed=config.seed + 1)
    else:
        conv = ConvAEConfig(dim, lat, config.conv_in_channels,
                            [ConvLayer(*map(int, l)) for l in config.conv_layers])
        enc = ConvEncoder(conv, seed=config.seed)
        dec = ConvDecoder(conv, seed=config.seed + 1)
    dyn = KoopmanDynamics.zeros(lat) if config.mode == "koopman" else QuadHamParams.zeros(lat)
    return ModelBundle(enc, dec, dyn, config.mode, system, normalization, config)


def _batches(n: int, size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, size):
        yield perm[start:start + size]


def train(dataset: Dataset, config: TrainConfig, weights: LossWeights | None = None, *,
          bundle: ModelBundle | None = None, callback=None) -> TrainResult:
    """Minimize the weighted loss with Adam, step learning-rate decay and shuffled batches.

    An existing ``bundle`` may be passed to continue training or to start from
    hand-built networks.  ``callback(epoch, row)`` is called after every epoch.
    """
    weights = weights or LossWeights.for_mode(config.mode)
    if not dataset.has_derivs:
        raise MissingDerivativesError("training data must carry time derivatives")
    x_all, dx_all = dataset.snapshots()
    if bundle is None:
        normalize = config.normalize if config.normalize is not None else config.mode == "reduction"
        norm = dataset.normalization
        if normalize and norm is None:
            norm = Normalization.fit(x_all)
        bundle = build_bundle(dataset.dim, config, dataset.system, norm if normalize else None)
    else:
        bundle = replace(bundle, mode=config.mode, config=config)
    if bundle.state_dim != dataset.dim:
        raise ValueError("bundle and dataset dimensions differ")

    store = ParamStore()
    if config.train_autoencoder:
        store.add_group("encoder", bundle.encoder.params)
        store.add_group("decoder", bundle.decoder.params)
    store.add_group("dynamics", _DynView(bundle.dynamics))
    store.pack()
    opt = Adam(store.size, store.mask({"encoder", "decoder"}), config.weight_decay)
    rng = np.random.default_rng(config.seed)
    history = LossHistory()
    n = x_all.shape[0]
    koop = config.mode == "koopman"
    need = ("encdec", "zdot") if koop else ("encdec", "symp", "zdot")

    for epoch in range(config.epochs):
        lr = config.learning_rate_at(epoch)
        sums = np.zeros(4)
        seen = 0
        for bi, idx in enumerate(_batches(n, config.batch_size, rng)):
            leaves = store.leaves()
            terms = loss_terms(bundle, Batch(x_all[idx], dx_all[idx]), mode=config.mode,
                               weights=weights, params=leaves, need=need)
            vals = [terms["encdec"].item(), math.nan if koop else terms["symp"].item(),
                    terms["zdot"].item(), terms["total"].item()]
            checked = vals[:1] + vals[2:] if koop else vals
            if not all(math.isfinite(v) for v in checked):
                raise TrainingDivergedError(epoch, bi, dict(zip(
                    ("L_encdec", "L_symp", "L_zdot", "total"), vals)))
            terms["total"].backward()
            grad = store.gather(leaves)
            opt.step(store.flat, grad, lr)
            sums += len(idx) * np.array(vals)
            seen += len(idx)
        row = sums / seen
        history.append(epoch, *row.tolist())
        if callback is not None:
            callback(epoch, row)
        if config.stop_tolerance is not None and row[3] < config.stop_tolerance:
            break
    return TrainResult(bundle, history)


def train_koopman(dataset: Dataset, config: TrainConfig, weights: LossWeights | None = None,
                  **kwargs) -> TrainResult:
    """Deep linear embedding baseline: same autoencoder, linear latent dynamics."""
    if config.mode != "koopman":
        config = replace(config, mode="koopman")
    return train(dataset, config, weights or LossWeights.koopman(), **kwargs)
