"""Learning-rate schedules and small training loops.

The loops here are plain SGD (with-replacement batches by default) and
full-batch GD on the half squared error used everywhere else. They exist to
drive the alignment and escape experiments, not to be a general trainer: no
momentum, no weight decay, no schedules beyond constant and triangular
cyclical.
"""

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import models
from .datagen import Dataset
from .errors import ValidationError
from .geometry import loss_state
from .linalg import RngStream, as_generator

# an infinity-norm excursion past this marks the run as diverged
DIVERGENCE_LIMIT = 1e150


@dataclass(frozen=True)
class LRSchedule:
    kind: str               # "constant" or "cyclical"
    base_lr: float = 0.0
    min_lr: float = 0.0
    max_lr: float = 0.0
    period: int = 0


def constant_schedule(lr: float) -> LRSchedule:
    if not lr > 0:
        raise ValidationError(f"learning rate must be positive, got {lr}")
    return LRSchedule(kind="constant", base_lr=float(lr))


def cyclical_schedule(min_lr: float, max_lr: float, period: int) -> LRSchedule:
    """Triangular wave: min -> max over the first half of each period,
    back down over the second half."""
    if not 0 < min_lr <= max_lr:
        raise ValidationError(
            f"need 0 < min_lr <= max_lr, got {min_lr}, {max_lr}")
    if period < 2:
        raise ValidationError(f"period must be at least 2, got {period}")
    return LRSchedule(kind="cyclical", min_lr=float(min_lr),
                      max_lr=float(max_lr), period=int(period))


def lr_at(schedule: LRSchedule, t: int) -> float:
    if t < 0:
        raise ValidationError(f"step index must be >= 0, got {t}")
    if schedule.kind == "constant":
        return schedule.base_lr
    phase = t % schedule.period
    half = schedule.period / 2.0
    span = schedule.max_lr - schedule.min_lr
    if phase <= half:
        return schedule.min_lr + span * (phase / half)
    return schedule.max_lr - span * ((phase - half) / half)


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str                      # "sgd" or "gd"
    schedule: LRSchedule
    steps: int
    batch_size: int = 1
    with_replacement: bool = True
    rng: RngStream | None = None   # required for sgd
    record_stride: int = 1
    record_params: bool = False


def _validate_config(config: OptimizerConfig, n: int) -> None:
    if config.kind not in ("sgd", "gd"):
        raise ValidationError(f"kind must be sgd or gd, got {config.kind!r}")
    if config.steps < 0:
        raise ValidationError(f"steps must be >= 0, got {config.steps}")
    if config.record_stride < 1:
        raise ValidationError(
            f"record_stride must be >= 1, got {config.record_stride}")
    if config.kind == "sgd":
        if not 1 <= config.batch_size <= n:
            raise ValidationError(
                f"need 1 <= batch_size <= n, got {config.batch_size}, n={n}")
        if config.rng is None:
            raise ValidationError("sgd needs an rng for batch sampling")


@dataclass
class Trajectory:
    steps: np.ndarray
    lrs: np.ndarray
    losses: np.ndarray
    observables: dict = field(default_factory=dict)
    params: np.ndarray | None = None   # (records, p) when requested
    theta_final: np.ndarray | None = None
    diverged: bool = False

    def to_csv(self, path) -> None:
        names = list(self.observables)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "loss", "lr"] + names)
            for i in range(len(self.steps)):
                row = [int(self.steps[i]), repr(float(self.losses[i])),
                       repr(float(self.lrs[i]))]
                row += [repr(float(self.observables[name][i])) for name in names]
                writer.writerow(row)


def _draw_batch(gen, n: int, b: int, with_replacement: bool) -> np.ndarray:
    if with_replacement:
        return gen.integers(0, n, size=b)
    if b == n:
        return np.arange(n)  # exhaustive mode reduces to the full gradient
    return np.sort(gen.choice(n, size=b, replace=False))


def sgd_step(model: models.Model, dataset: Dataset, theta, lr: float, b: int,
             rng, with_replacement: bool = True) -> np.ndarray:
    """One step on the mean half squared error of b sampled rows."""
    if not 1 <= b <= dataset.n:
        raise ValidationError(f"need 1 <= b <= n, got b={b}, n={dataset.n}")
    theta = np.asarray(theta, dtype=float)
    idx = _draw_batch(as_generator(rng), dataset.n, b, with_replacement)
    X = dataset.inputs[idx]
    u = models.predict_batch(model, theta, X) - dataset.targets[idx]
    grad = models.grad_matrix(model, theta, X).T @ u / b
    return theta - lr * grad


def gd_step(model: models.Model, dataset: Dataset, theta, lr: float) -> np.ndarray:
    state = loss_state(model, dataset, theta)
    return state.theta - lr * state.grad


def run(model: models.Model, dataset: Dataset, theta0,
        config: OptimizerConfig, observers=None) -> Trajectory:
    """Run the configured loop, recording loss and observer values every
    record_stride steps (state before the step) plus the final state.

    observers maps a column name to a callable (model, dataset, theta, t)
    -> float. The whole trajectory is reproducible from (theta0, config)
    because batch sampling reads config.rng, a pure stream.
    """
    _validate_config(config, dataset.n)
    observers = observers or {}
    gen = as_generator(config.rng) if config.rng is not None else None
    theta = np.asarray(theta0, dtype=float).copy()
    if theta.shape != (model.param_dim,):
        raise ValidationError(
            f"theta0 has shape {theta.shape}, expected ({model.param_dim},)")

    steps, lrs, losses, snaps = [], [], [], []
    columns = {name: [] for name in observers}
    diverged = False

    def record(t):
        steps.append(t)
        lrs.append(lr_at(config.schedule, t))
        losses.append(loss_state(model, dataset, theta).loss)
        for name, fn in observers.items():
            columns[name].append(float(fn(model, dataset, theta, t)))
        if config.record_params:
            snaps.append(theta.copy())

    for t in range(config.steps):
        if t % config.record_stride == 0:
            record(t)
        lr = lr_at(config.schedule, t)
        if config.kind == "sgd":
            idx = _draw_batch(gen, dataset.n, config.batch_size,
                              config.with_replacement)
            X = dataset.inputs[idx]
            u = models.predict_batch(model, theta, X) - dataset.targets[idx]
            grad = models.grad_matrix(model, theta, X).T @ u / len(idx)
            theta = theta - lr * grad
        else:
            theta = gd_step(model, dataset, theta, lr)
        if not np.all(np.isfinite(theta)) or \
                float(np.max(np.abs(theta))) > DIVERGENCE_LIMIT:
            diverged = True
            break
    if not diverged:
        record(config.steps)

    return Trajectory(
        steps=np.array(steps, dtype=int),
        lrs=np.array(lrs),
        losses=np.array(losses),
        observables={name: np.array(vals) for name, vals in columns.items()},
        params=np.array(snaps) if config.record_params else None,
        theta_final=theta,
        diverged=diverged)


# ---------------------------------------------------------------------------
# cyclical-LR toy
# ---------------------------------------------------------------------------

@dataclass
class CLRToyTrace:
    steps: np.ndarray
    lrs: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    diverged: bool = False

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "lr", "w1", "w2"])
            for i in range(len(self.steps)):
                writer.writerow([int(self.steps[i]),
                                 repr(float(self.lrs[i])),
                                 repr(float(self.w1[i])),
                                 repr(float(self.w2[i]))])


def clr_toy_run(w0, schedule: LRSchedule, steps: int, mode: str = "sgd",
                rng=None, record_stride: int = 1) -> CLRToyTrace:
    """Online runs of the two-parameter scale/output toy under a cyclical
    schedule.

    Each step uses a fresh scalar input x ~ N(0,1) against target 0, so the
    single-sample gradient is x^2 times the population gradient. mode="gd"
    follows the population gradient exactly (E[x^2] = 1), which is the
    infinite-batch limit.
    """
    if mode not in ("sgd", "gd"):
        raise ValidationError(f"mode must be sgd or gd, got {mode!r}")
    if steps < 0:
        raise ValidationError(f"steps must be >= 0, got {steps}")
    if record_stride < 1:
        raise ValidationError(f"record_stride must be >= 1, got {record_stride}")
    if mode == "sgd" and rng is None:
        raise ValidationError("sgd mode needs an rng for input sampling")
    gen = as_generator(rng) if rng is not None else None
    theta = np.asarray(w0, dtype=float).copy()
    if theta.shape != (2,):
        raise ValidationError(f"w0 has shape {theta.shape}, expected (2,)")

    recs, lrs, w1s, w2s = [], [], [], []
    diverged = False

    def record(t):
        recs.append(t)
        lrs.append(lr_at(schedule, t))
        w1s.append(theta[0])
        w2s.append(theta[1])

    for t in range(steps):
        if t % record_stride == 0:
            record(t)
        lr = lr_at(schedule, t)
        grad = models.clr_population_grad(theta)
        if mode == "sgd":
            x = gen.standard_normal()
            grad = (x * x) * grad
        theta = theta - lr * grad
        if not np.all(np.isfinite(theta)) or \
                float(np.max(np.abs(theta))) > DIVERGENCE_LIMIT:
            diverged = True
            break
    if not diverged:
        record(steps)

    return CLRToyTrace(steps=np.array(recs, dtype=int), lrs=np.array(lrs),
                       w1=np.array(w1s), w2=np.array(w2s), diverged=diverged)


def with_record_params(config: OptimizerConfig) -> OptimizerConfig:
    return dataclasses.replace(config, record_params=True)
