"""Softplus MLP dual proxy with hand-written backprop, Adam, and the training loop."""

from __future__ import annotations

import enum
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from dualprox import baselines
from dualprox.completion import Regularizer, complete_unregularized
from dualprox.lp_core import DualPoint, ParametricLpInstance, dual_objective
from dualprox.loss_grad import s3l_loss_and_grad

logger = logging.getLogger(__name__)


class Head(enum.Enum):
    DUAL_Y = "y"
    DUAL_Y_ZL = "y_zl"
    DUAL_Y_ZL_ZU = "y_zl_zu"


class Method(enum.Enum):
    S3L = "s3l"
    DLL = "dll"
    DC3 = "dc3"
    PENALTY = "penalty"

    @property
    def head(self) -> Head:
        return {
            Method.S3L: Head.DUAL_Y,
            Method.DLL: Head.DUAL_Y,
            Method.DC3: Head.DUAL_Y_ZL,
            Method.PENALTY: Head.DUAL_Y_ZL_ZU,
        }[self]


def softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


@dataclass
class MlpModel:
    weights: list
    biases: list
    head: Head
    m: int
    n: int
    feature_mean: np.ndarray
    feature_std: np.ndarray
    y_scale: Optional[np.ndarray] = None

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.head,
            self.m,
            self.n,
            self.feature_mean.copy(),
            self.feature_std.copy(),
            None if self.y_scale is None else self.y_scale.copy(),
        )


def head_width(head: Head, m: int, n: int) -> int:
    return m + {Head.DUAL_Y: 0, Head.DUAL_Y_ZL: n, Head.DUAL_Y_ZL_ZU: 2 * n}[head]


def init_model(
    input_dim: int,
    m: int,
    n: int,
    head: Head,
    rng: np.random.Generator,
    hidden_dim: int = 128,
    n_layers: int = 4,
    feature_mean=None,
    feature_std=None,
    y_scale=None,
) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    dims = [input_dim] + [hidden_dim] * (n_layers - 1) + [head_width(head, m, n)]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    mean = np.zeros(input_dim) if feature_mean is None else np.asarray(feature_mean, dtype=np.float64)
    std = np.ones(input_dim) if feature_std is None else np.asarray(feature_std, dtype=np.float64)
    return MlpModel(weights, biases, head, m, n, mean, std, y_scale)


def feature_stats(features):
    """Per-feature mean and std; constant features get std 1."""
    features = np.asarray(features, dtype=np.float64)
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    return mean, np.where(std > 1e-12 * (1.0 + np.abs(mean)), std, 1.0)


@dataclass
class HeadOutput:
    y: np.ndarray
    zl: Optional[np.ndarray] = None
    zu: Optional[np.ndarray] = None


@dataclass
class ForwardCache:
    inputs: list  # input to each affine layer
    pre: list  # pre-activation of each affine layer
    params_id: int


def forward(model: MlpModel, features):
    """Head outputs for a ``(batch, input_dim)`` matrix, or a single feature vector.

    A 1-D input is run as a batch of one and its outputs lose the batch axis;
    the cache keeps the batch axis.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        out, cache = forward(model, features[None, :])
        return HeadOutput(*(None if v is None else v[0] for v in (out.y, out.zl, out.zu))), cache
    if features.ndim != 2 or features.shape[1] != model.input_dim:
        raise ValueError(f"features must have shape (batch, {model.input_dim}), got {features.shape}")
    a = (features - model.feature_mean) / model.feature_std
    inputs, pre = [], []
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(a)
        h = a @ W + b
        pre.append(h)
        a = h if k == last else softplus(h)
    m, n = model.m, model.n
    y = a[:, :m] if model.y_scale is None else a[:, :m] * model.y_scale
    out = HeadOutput(y)
    if model.head is not Head.DUAL_Y:
        out.zl = softplus(a[:, m : m + n])
    if model.head is Head.DUAL_Y_ZL_ZU:
        out.zu = softplus(a[:, m + n :])
    return out, ForwardCache(inputs, pre, _params_token(model))


def _params_token(model: MlpModel) -> int:
    return hash(tuple(id(p) for p in model.params()))


class StaleCacheError(RuntimeError):
    pass


def backward(model: MlpModel, cache: ForwardCache, grad_y, grad_zl=None, grad_zu=None) -> list:
    """Gradients of ``mean_i (g_i' y_i + gl_i' zl_i + gu_i' zu_i)`` in ``params()`` order."""
    if cache.params_id != _params_token(model):
        raise StaleCacheError("forward cache belongs to different parameters")
    m, n = model.m, model.n
    out_pre = cache.pre[-1]
    batch = out_pre.shape[0]
    d = np.zeros_like(out_pre)
    d[:, :m] = grad_y if model.y_scale is None else grad_y * model.y_scale
    if model.head is not Head.DUAL_Y:
        d[:, m : m + n] = (0.0 if grad_zl is None else grad_zl) * expit(out_pre[:, m : m + n])
    if model.head is Head.DUAL_Y_ZL_ZU:
        d[:, m + n :] = (0.0 if grad_zu is None else grad_zu) * expit(out_pre[:, m + n :])
    d /= batch
    grads = [None] * (2 * len(model.weights))
    for k in range(len(model.weights) - 1, -1, -1):
        grads[2 * k] = cache.inputs[k].T @ d
        grads[2 * k + 1] = d.sum(axis=0)
        if k:
            d = (d @ model.weights[k].T) * expit(cache.pre[k - 1])
    return grads


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_model(cls, model: MlpModel, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        ps = model.params()
        return cls(lr, beta1, beta2, eps, 0, [np.zeros_like(p) for p in ps], [np.zeros_like(p) for p in ps])

    def apply(self, params: list, grads: list) -> None:
        """In-place descent step on ``params``."""
        self.step += 1
        c1 = 1.0 - self.beta1**self.step
        c2 = 1.0 - self.beta2**self.step
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainConfig:
    method: str = "s3l"
    epochs: int = 500
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    mu0: float = 1.0
    mu_decay: float = 0.99
    mu_floor: float = 0.0
    hidden_dim: int = 128
    penalty_weight: Optional[float] = None  # None: 100 x running mean |dual objective|
    dc3_steps: int = 10
    dc3_lr: float = 1e-2
    dc3_momentum: float = 0.5
    output_scaling: bool = False

    def __post_init__(self):
        method = Method(self.method)
        if not 0.0 < self.mu_decay <= 1.0:
            raise ValueError("mu_decay must lie in (0, 1]")
        if self.mu0 < 0 or self.mu_floor < 0:
            raise ValueError("mu0 and mu_floor must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if method is Method.DLL:
            self.mu0 = 0.0
        if self.penalty_weight is not None and self.penalty_weight < 0:
            raise ValueError("penalty_weight must be non-negative")

    @property
    def method_enum(self) -> Method:
        return Method(self.method)

    def to_dict(self) -> dict:
        return asdict(self)


def mu_schedule_step(mu: float, decay: float) -> float:
    if mu < 0 or not 0.0 < decay <= 1.0:
        raise ValueError("need mu >= 0 and decay in (0, 1]")
    return decay * mu


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Parameters and LP data only; optimal solutions are deliberately absent."""

    features: np.ndarray
    family: ParametricLpInstance  # batched right-hand sides, one row per sample

    def __post_init__(self):
        if not self.family.batched or self.family.b.shape[0] != self.features.shape[0]:
            raise ValueError("family must carry one right-hand side per feature row")
        if self.features.shape[0] == 0:
            raise ValueError("training set is empty")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, idx) -> "TrainingSet":
        return TrainingSet(self.features[idx], self.family.with_rhs(self.family.b[idx]))


class TrainingDivergence(FloatingPointError):
    def __init__(self, epoch, batch, mu, max_abs_z):
        self.epoch, self.batch, self.mu, self.max_abs_z = epoch, batch, mu, max_abs_z
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch} (mu={mu:.3e}, max |z|={max_abs_z:.3e})"
        )


def predict_dual(model: MlpModel, features, family: ParametricLpInstance, cfg: TrainConfig) -> DualPoint:
    """Full inference path of a method: head, then its completion or correction.

    S3L and DLL complete with the unregularized closed form so that the
    reported point is the one whose objective is the certified bound.
    """
    out, _ = forward(model, features)
    method = cfg.method_enum
    if method in (Method.S3L, Method.DLL):
        comp = complete_unregularized(family, out.y)
        return DualPoint(out.y, comp.zl, comp.zu)
    if method is Method.DC3:
        y, zl, zu, _ = baselines.dc3_correct(
            family, out.y, out.zl, steps=cfg.dc3_steps, lr=cfg.dc3_lr, momentum=cfg.dc3_momentum
        )
        return DualPoint(y, zl, zu)
    return DualPoint(out.y, out.zl, out.zu)


class _PenaltyWeight:
    """Fixed weight, or 100 x the running mean of |dual objective| seen so far."""

    def __init__(self, fixed):
        self.fixed = fixed
        self.total = 0.0
        self.count = 0

    def __call__(self, dual_obj) -> float:
        if self.fixed is not None:
            return float(self.fixed)
        self.total += float(np.sum(np.abs(dual_obj)))
        self.count += np.size(dual_obj)
        return 100.0 * self.total / self.count


def batch_step(model, batch: TrainingSet, cfg: TrainConfig, mu: float, weight_fn):
    """Loss (maximization form, per sample) and parameter gradients of ``-mean loss``."""
    method = cfg.method_enum
    out, cache = forward(model, batch.features)
    fam = batch.family
    if method in (Method.S3L, Method.DLL):
        val, gy = s3l_loss_and_grad(fam, out.y, Regularizer.from_mu(mu))
        return val.total, backward(model, cache, -gy)
    if method is Method.PENALTY:
        dp = DualPoint(out.y, out.zl, out.zu)
        obj = dual_objective(fam, dp)
        w = weight_fn(obj)
        val = baselines.penalty_loss(fam, dp, w)
        gy, gzl, gzu = baselines.penalty_grads(fam, dp, w)
        return val.total, backward(model, cache, -gy, -gzl, -gzu)
    y, zl, _, state = baselines.dc3_correct(
        fam, out.y, out.zl, steps=cfg.dc3_steps, lr=cfg.dc3_lr, momentum=cfg.dc3_momentum
    )
    obj = np.sum(fam.b * y, axis=-1) + zl @ fam.l - baselines.dc3_complete(fam, y, zl) @ fam.u
    w = weight_fn(obj)
    val, gy, gzl = baselines.dc3_objective(fam, y, zl, w)
    gy0, gzl0 = baselines.dc3_backward(fam, state, gy, gzl)
    return val.total, backward(model, cache, -gy0, -gzl0)


@dataclass
class TrainResult:
    model: MlpModel
    history: list


def train(
    model: MlpModel,
    dataset: TrainingSet,
    cfg: TrainConfig,
    validate: Optional[Callable[[MlpModel], tuple]] = None,
    callbacks: tuple = (),
) -> TrainResult:
    """Minibatch Adam on ``-loss`` with per-epoch mu decay.

    ``validate(model) -> (mean_gstar, max_gstar)`` feeds the learning curves;
    each callback is called as ``cb(epoch, record, model)``.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    method = cfg.method_enum
    if model.head is not method.head:
        raise ValueError(f"{method.value} needs head {method.head.value}, model has {model.head.value}")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    opt = AdamState.for_model(model, lr=cfg.learning_rate)
    weight_fn = _PenaltyWeight(cfg.penalty_weight)
    mu = cfg.mu0 if method is Method.S3L else 0.0
    history = []
    params = model.params()
    N = len(dataset)
    for epoch in range(cfg.epochs):
        order = rng.permutation(N)
        losses = []
        for bi, start in enumerate(range(0, N, cfg.batch_size)):
            batch = dataset.subset(order[start : start + cfg.batch_size])
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = batch_step(model, batch, cfg, mu, weight_fn)
            if not (np.all(np.isfinite(loss)) and all(np.all(np.isfinite(g)) for g in grads)):
                out, _ = forward(model, batch.features)
                z = batch.family.c - out.y @ batch.family.A
                raise TrainingDivergence(epoch, bi, mu, float(np.nanmax(np.abs(z))))
            opt.apply(params, grads)
            losses.append(float(np.mean(loss)))
        record = {"epoch": epoch, "mu": mu, "loss": float(np.mean(losses))}
        if validate is not None:
            mean_g, max_g = validate(model)
            record["val_mean_gstar"] = float(mean_g)
            record["val_max_gstar"] = float(max_g)
        history.append(record)
        for cb in callbacks:
            cb(epoch, record, model)
        if method is Method.S3L:
            mu = max(mu_schedule_step(mu, cfg.mu_decay), cfg.mu_floor)
    return TrainResult(model, history)
