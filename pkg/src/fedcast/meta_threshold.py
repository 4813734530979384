"""Server-side threshold generator.

A one-hidden-layer MLP maps the clients' training losses to a threshold in
``(0, theta_max)``. Selection by threshold is piecewise constant, so the
derivative of validation loss with respect to the threshold is estimated by
a symmetric two-point difference over shared validation batches and then
chained through the (exactly differentiated) MLP into an Adam step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .config import MetaConfig
from .errors import FedcastError
from .model_engine import Engine, LossReport
from .selection import PartialUpdate, threshold_names
from .synth_task import Dataset
from .tensor_core import DeviationProfile, ParameterSet

ADAM_B1, ADAM_B2, ADAM_EPS = 0.9, 0.999, 1e-8
THETA_MARGIN = 1e-6
PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass
class MetaModule:
    W1: np.ndarray  # (H, K)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (H,)
    b2: np.ndarray  # shape ()
    theta_max: float = 1.0
    lr: float = 1e-2
    batches: int = 16
    eps_fd: float = 1e-2
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    calibrated: bool = False

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def num_inputs(self) -> int:
        return self.W1.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self) -> "MetaModule":
        return replace(self, **{k: np.array(v) for k, v in self.params().items()},
                       m={k: np.array(v) for k, v in self.m.items()},
                       v={k: np.array(v) for k, v in self.v.items()})


def init_meta(num_inputs: int, config: MetaConfig | None = None, seed: int = 0) -> MetaModule:
    """Glorot-uniform weights and zero biases, Adam moments at zero."""
    cfg = config or MetaConfig()
    cfg.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    H = cfg.hidden
    a1 = math.sqrt(6.0 / (num_inputs + H))
    a2 = math.sqrt(6.0 / (H + 1))
    mod = MetaModule(
        W1=rng.uniform(-a1, a1, size=(H, num_inputs)), b1=np.zeros(H),
        W2=rng.uniform(-a2, a2, size=H), b2=np.zeros(()),
        theta_max=cfg.theta_max, lr=cfg.lr, batches=cfg.batches, eps_fd=cfg.eps_fd,
    )
    mod.m = {k: np.zeros_like(v) for k, v in mod.params().items()}
    mod.v = {k: np.zeros_like(v) for k, v in mod.params().items()}
    return mod


def calibrate(module: MetaModule, losses: Sequence[float], target: float) -> MetaModule:
    """Shift the output bias so the current losses map to ``target`` exactly.

    Used once, on the first round with selection, to start the threshold
    inside the observed deviation distribution instead of at ``theta_max/2``.
    """
    lo, hi = THETA_MARGIN, module.theta_max - THETA_MARGIN
    p = min(max(target, lo), hi) / module.theta_max
    x = _features(module, losses)
    z = float(module.W2 @ np.tanh(module.W1 @ x + module.b1) + module.b2)
    new = module.copy()
    new.b2 = np.array(float(module.b2) + math.log(p / (1.0 - p)) - z)
    new.calibrated = True
    return new


def _features(module: MetaModule, losses: Sequence[float]) -> np.ndarray:
    x = np.asarray(losses, dtype=np.float64)
    if x.shape != (module.num_inputs,):
        raise FedcastError(f"expected {module.num_inputs} losses, got {x.shape}")
    if not np.isfinite(x).all() or (x < 0).any():
        raise FedcastError("losses must be finite and non-negative")
    return np.log1p(x)


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def meta_forward(module: MetaModule, losses: Sequence[float]) -> float:
    """Threshold ``theta_max * sigmoid(W2 . tanh(W1 log(1+L) + b1) + b2)``."""
    x = _features(module, losses)
    h = np.tanh(module.W1 @ x + module.b1)
    z = float(module.W2 @ h + module.b2)
    return module.theta_max * _sigmoid(z)


def theta_gradient(module: MetaModule, losses: Sequence[float]) -> tuple[float, dict[str, np.ndarray]]:
    """Threshold and its exact gradient with respect to every MLP parameter."""
    x = _features(module, losses)
    h = np.tanh(module.W1 @ x + module.b1)
    z = float(module.W2 @ h + module.b2)
    s = _sigmoid(z)
    dz = module.theta_max * s * (1.0 - s)
    da = dz * module.W2 * (1.0 - h * h)
    grads = {"W1": np.outer(da, x), "b1": da, "W2": dz * h, "b2": np.array(dz)}
    return module.theta_max * s, grads


def meta_update(module: MetaModule, losses: Sequence[float], dloss_dtheta: float) -> MetaModule:
    """One Adam step on ``dloss_dtheta * d(theta)/d(phi)``; returns a new module."""
    if not math.isfinite(dloss_dtheta):
        raise FedcastError("dloss_dtheta must be finite")
    _, dtheta = theta_gradient(module, losses)
    new = module.copy()
    new.step += 1
    t = new.step
    for k in PARAM_NAMES:
        g = dloss_dtheta * dtheta[k]
        new.m[k] = ADAM_B1 * new.m[k] + (1 - ADAM_B1) * g
        new.v[k] = ADAM_B2 * new.v[k] + (1 - ADAM_B2) * g * g
        mhat = new.m[k] / (1 - ADAM_B1 ** t)
        vhat = new.v[k] / (1 - ADAM_B2 ** t)
        setattr(new, k, getattr(new, k) - new.lr * mhat / (np.sqrt(vhat) + ADAM_EPS))
    return new


# -- validation-loss estimate ------------------------------------------------

def sample_val_batches(validation: Dataset, count: int, batch_size: int, seed: int) -> list[Dataset]:
    """``count`` disjoint random batches (drawn with replacement if the set is small)."""
    n = len(validation)
    if n == 0:
        raise FedcastError("validation set is empty")
    rng = np.random.Generator(np.random.PCG64(seed))
    total = count * batch_size
    idx = rng.choice(n, size=total, replace=total > n)
    return [validation[idx[i * batch_size:(i + 1) * batch_size]] for i in range(count)]


def eval_val_loss(engine: Engine, params: ParameterSet, batches: Sequence[Dataset]) -> LossReport:
    """Mean of per-batch losses."""
    if not batches:
        raise FedcastError("no validation batches")
    losses = [engine.forward_loss(params, b).loss for b in batches]
    return LossReport(sum(losses) / len(losses), sum(len(b) for b in batches))


def perturbed_thresholds(theta: float, eps: float, theta_max: float) -> tuple[float, float]:
    lo_bound, hi_bound = THETA_MARGIN, theta_max - THETA_MARGIN
    return min(max(theta - eps, lo_bound), hi_bound), min(max(theta + eps, lo_bound), hi_bound)


def central_difference(loss_at: Callable[[float], float], theta: float, eps: float,
                       theta_max: float = 1.0) -> float:
    """``(L(theta+eps) - L(theta-eps)) / span`` after clamping both points into range."""
    lo, hi = perturbed_thresholds(theta, eps, theta_max)
    if hi <= lo:
        return 0.0
    return (loss_at(hi) - loss_at(lo)) / (hi - lo)


@dataclass
class MetaEvalContext:
    """Everything needed to re-run selection and aggregation at a trial threshold."""

    engine: Engine
    client_params: list[ParameterSet]
    profiles: list[DeviationProfile]
    n_k: list[int]
    train_losses: list[float]
    aggregate: Callable[[list[PartialUpdate]], ParameterSet]
    batches: list[Dataset]
    mode: str = "g"

    def selections(self, theta: float) -> list[tuple[str, ...]]:
        return [tuple(threshold_names(p.devs, theta, self.mode)) for p in self.profiles]

    def partials(self, theta: float) -> list[PartialUpdate]:
        out = []
        for params, prof, nk, loss in zip(self.client_params, self.profiles, self.n_k, self.train_losses):
            names = threshold_names(prof.devs, theta, self.mode)
            out.append(PartialUpdate(prof.client_id, prof.round, {n: params[n] for n in names}, nk, loss))
        return out

    def loss_at(self, theta: float) -> float:
        return eval_val_loss(self.engine, self.aggregate(self.partials(theta)), self.batches).loss


def estimate_dloss_dtheta(ctx: MetaEvalContext, theta: float, eps: float = 1e-2,
                          theta_max: float = 1.0) -> float:
    """Two-point estimate of dL_val/dtheta; exactly 0 on a selection plateau."""
    if not ctx.client_params:
        raise FedcastError("meta evaluation needs at least one client")
    lo, hi = perturbed_thresholds(theta, eps, theta_max)
    if ctx.selections(lo) == ctx.selections(hi):
        return 0.0
    return central_difference(ctx.loss_at, theta, eps, theta_max)
