"""Bi-level training loop and the two comparison regimes.

``implicit``     inner SGD on the auxiliary loss, then one phi step along the
                 implicit hypergradient.
``alternating``  same schedule, but phi follows only the explicit gradient of
                 the primary loss (the biased min-max update).
``mbce``         the inference network alone, trained on the likelihood loss.

All three share batching and seeding so their runs are directly comparable.
"""

import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .implicit import IhvpConfig, biased_grad_phi, implicit_grad_phi
from .tensor import THETA, NumericalError

REGIMES = ("implicit", "alternating", "mbce")
METRIC_COLUMNS = (
    "outer_iter", "theta_updates", "phi_updates", "aux_loss", "prim_loss",
    "hypergrad_norm", "explicit_norm", "implicit_norm", "ihvp_residual", "inner_grad_norm",
    "valid_example_f1", "valid_micro_f1", "valid_macro_f1", "valid_token_accuracy",
)
METRICS_VERSION = 1


class TrainingAborted(NumericalError):
    """A loss or update went non-finite; ``metrics`` holds the records so far."""

    def __init__(self, message, metrics=(), **diagnostics):
        super().__init__(message, **diagnostics)
        self.metrics = list(metrics)


@dataclass(frozen=True)
class TrainConfig:
    t_inner: int = 5
    t_outer: int = 200
    eta_inner: float = 0.1
    eta_outer: float = 0.01
    lam: float = 1.0
    lam_rank: float = 0.0
    loss: str = "cd"
    k_cd: int = 5
    relaxed_negative: bool = True
    ihvp: IhvpConfig = field(default_factory=IhvpConfig)
    batch_size: int = 32
    seed: int = 0
    eval_every: int = 10
    momentum: float = 0.0
    patience: int = 10
    fresh_outer_batch: bool = False

    def __post_init__(self):
        for name in ("t_inner", "t_outer", "batch_size", "eval_every", "k_cd"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.eta_inner < 0 or self.eta_outer < 0:
            raise ValueError("step sizes must be non-negative")
        if self.lam < 0 or self.lam_rank < 0:
            raise ValueError("lam and lam_rank must be non-negative")
        if self.loss not in ("ssvm", "cd"):
            raise ValueError(f"loss must be 'ssvm' or 'cd', got {self.loss!r}")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 or None")
        if isinstance(self.ihvp, dict):
            object.__setattr__(self, "ihvp", IhvpConfig(**self.ihvp))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "ihvp" in d and isinstance(d["ihvp"], dict):
            d["ihvp"] = IhvpConfig(**d["ihvp"])
        return cls(**d)


@dataclass
class MetricsRecord:
    outer_iter: int
    theta_updates: int
    phi_updates: int
    aux_loss: float
    prim_loss: float = 0.0
    hypergrad_norm: float = 0.0
    explicit_norm: float = 0.0
    implicit_norm: float = 0.0
    ihvp_residual: float = 0.0
    inner_grad_norm: float = 0.0
    valid_example_f1: float = None
    valid_micro_f1: float = None
    valid_macro_f1: float = None
    valid_token_accuracy: float = None
    wall_seconds: float = 0.0

    def row(self):
        return {c: getattr(self, c) for c in METRIC_COLUMNS}


@dataclass
class TrainState:
    theta: object
    phi: object
    outer_iter: int = 0
    theta_updates: int = 0
    phi_updates: int = 0
    metrics: list = field(default_factory=list)
    batch_rng: object = None
    sample_rng: object = None
    order: np.ndarray = None
    cursor: int = 0
    theta_velocity: np.ndarray = None
    phi_velocity: np.ndarray = None
    started: float = 0.0


@dataclass
class TrainResult:
    theta: object
    phi: object
    metrics: list
    state: TrainState
    best_iter: int = None
    stopped_early: bool = False


def seeded_rngs(seed):
    """Independent streams for theta init, phi init, batching and sampling."""
    return tuple(np.random.default_rng([seed, k]) for k in range(4))


def init_state(task, cfg):
    rng_theta, rng_phi, rng_batch, rng_sample = seeded_rngs(cfg.seed)
    theta, phi = task.init_params(rng_theta, rng_phi)
    return TrainState(theta=theta, phi=phi, batch_rng=rng_batch, sample_rng=rng_sample,
                      started=time.perf_counter())


def next_batch_indices(state, n, batch_size):
    """Cycle through shuffled epochs; a batch never straddles two epochs."""
    if n == 0:
        raise ValueError("empty training set")
    if state.order is None or state.cursor >= n:
        state.order = state.batch_rng.permutation(n)
        state.cursor = 0
    idx = state.order[state.cursor:state.cursor + batch_size]
    state.cursor += len(idx)
    return np.sort(idx)


def _sgd(params, g, eta, momentum, velocity):
    if momentum:
        velocity = g.copy() if velocity is None else momentum * velocity + g
        return params.add(velocity, -eta), velocity
    return params.add(g, -eta), velocity


def inner_loop(state, fn, batch, t_inner, eta_inner, momentum=0.0, hook=None):
    """``t_inner`` descent steps on ``fn`` wrt theta; phi is read, never written.

    Returns ``(theta, last_loss)`` and advances ``state.theta_updates``.
    """
    theta = state.theta
    loss = float("nan")
    for step in range(t_inner):
        loss, grads = fn.value_and_grad(theta, state.phi, batch)
        g = grads[THETA]
        if not (np.isfinite(loss) and np.all(np.isfinite(g))):
            raise TrainingAborted(
                "non-finite inner loss", state.metrics, outer_iter=state.outer_iter,
                inner_step=step, theta_norm=theta.norm(), loss=loss)
        theta, state.theta_velocity = _sgd(theta, g, eta_inner, momentum, state.theta_velocity)
        state.theta_updates += 1
        if hook is not None:
            hook("theta_update", state, theta)
    state.theta = theta
    return theta, loss


def outer_step(state, task, data, cfg, regime="implicit", hook=None, fns=None):
    """One outer iteration: inner loop on theta, then (except for mbce) one phi step."""
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}, got {regime!r}")
    if fns is None:
        fns = build_objectives(task, cfg, regime)
    n = len(data) if data is not None else 1
    batch = task.make_batch(data, next_batch_indices(state, n, cfg.batch_size))
    if hook is not None:
        hook("outer_start", state, state.theta)

    inner_fn = fns["mle"] if regime == "mbce" else fns["aux"]
    theta, aux_value = inner_loop(state, inner_fn, batch, cfg.t_inner, cfg.eta_inner,
                                  cfg.momentum, hook)
    record = MetricsRecord(outer_iter=state.outer_iter + 1, theta_updates=state.theta_updates,
                           phi_updates=state.phi_updates, aux_loss=aux_value)

    if regime != "mbce":
        prim_batch = batch
        if cfg.fresh_outer_batch:
            prim_batch = task.make_batch(data, next_batch_indices(state, n, cfg.batch_size))
        if cfg.loss == "cd":
            prim_batch = task.with_negatives(theta, prim_batch, cfg.k_cd, state.sample_rng)
        if regime == "implicit":
            report = implicit_grad_phi(fns["prim"], fns["aux"], theta, state.phi, batch,
                                       cfg.ihvp, prim_batch=prim_batch)
            g = report.total
            record.prim_loss = report.prim_loss
            record.inner_grad_norm = report.inner_grad_norm
            for k, v in report.norms().items():
                setattr(record, k, v)
        else:
            record.prim_loss = fns["prim"](theta, state.phi, prim_batch)
            g = biased_grad_phi(fns["prim"], theta, state.phi, prim_batch)
            record.hypergrad_norm = record.explicit_norm = float(np.linalg.norm(g))
        if not (np.isfinite(record.prim_loss) and np.all(np.isfinite(g))):
            raise TrainingAborted(
                "non-finite primary loss or hypergradient", state.metrics,
                outer_iter=state.outer_iter, theta_norm=theta.norm(),
                phi_norm=state.phi.norm(), loss=record.prim_loss)
        state.phi, state.phi_velocity = _sgd(state.phi, g, cfg.eta_outer, cfg.momentum,
                                             state.phi_velocity)
        state.phi_updates += 1
        record.phi_updates = state.phi_updates
        if hook is not None:
            hook("phi_update", state, theta)

    state.outer_iter += 1
    record.wall_seconds = time.perf_counter() - state.started
    state.metrics.append(record)
    if hook is not None:
        hook("outer_end", state, state.theta)
    return state


def build_objectives(task, cfg, regime):
    fns = {"mle": task.mle_fn()}
    if regime != "mbce":
        fns["aux"] = task.aux_fn(cfg.lam)
        fns["prim"] = task.prim_fn(cfg.loss, cfg.lam_rank, cfg.relaxed_negative)
    return fns


def _score_fields(scores):
    out = {}
    for key, value in scores.items():
        col = f"valid_{key}"
        if col in METRIC_COLUMNS:
            out[col] = value
    return out


def train(task, data, cfg, regime="implicit", valid=None, hook=None):
    """Run ``cfg.t_outer`` outer iterations of ``regime``.

    With a validation set, scores are recorded every ``cfg.eval_every``
    iterations (and at the last one), training stops after ``cfg.patience``
    evaluations without improvement, and the best-scoring parameters are
    returned.
    """
    if data is not None:
        task.check_data(data)
    if valid is not None:
        task.check_data(valid)
    state = init_state(task, cfg)
    fns = build_objectives(task, cfg, regime)
    best = None
    stale = 0
    stopped = False
    for t in range(cfg.t_outer):
        outer_step(state, task, data, cfg, regime, hook, fns)
        last = t == cfg.t_outer - 1
        if valid is not None and ((t + 1) % cfg.eval_every == 0 or last):
            scores = task.evaluate(state.theta, valid)
            record = state.metrics[-1]
            for k, v in _score_fields(scores).items():
                setattr(record, k, v)
            score = scores[task.score_key]
            if best is None or score > best[0]:
                best = (score, state.outer_iter, state.theta, state.phi)
                stale = 0
            else:
                stale += 1
                if cfg.patience is not None and stale >= cfg.patience:
                    stopped = not last
                    break
    if best is not None:
        return TrainResult(best[2], best[3], state.metrics, state, best[1], stopped)
    return TrainResult(state.theta, state.phi, state.metrics, state)


def train_implicit(task, data, cfg, valid=None, hook=None):
    return train(task, data, cfg, "implicit", valid, hook)


def train_alternating(task, data, cfg, valid=None, hook=None):
    return train(task, data, cfg, "alternating", valid, hook)


def train_mbce(task, data, cfg, valid=None, hook=None):
    return train(task, data, cfg, "mbce", valid, hook)


def config_fields():
    return [f.name for f in fields(TrainConfig)]


def with_overrides(cfg, **kw):
    return replace(cfg, **kw)
