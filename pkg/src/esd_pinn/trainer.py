"""Physics-informed training of the network against the ESD system.

Each epoch evaluates the four equation residuals on the full collocation
grid plus the initial-condition mismatch, forms

    total = alpha * (eq1 + eq2 + eq3 + eq4) + beta * initial

and takes one Adam (or plain gradient-descent) step. Training stops when
``total <= epsilon_stop`` or after ``max_epochs`` updates.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field, fields, replace
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from . import diff_engine
from .esd_model import EsdParameters, default_chaotic_params, default_initial_state, rhs_array
from .mlp import MlpNetwork, flatten, forward, init_network, input_scaling, unflatten
from .solution import SolutionTable

log = logging.getLogger(__name__)

# Collocation points per gradient block. The partition is fixed so that the
# summation order, and hence every bit of the result, is independent of the
# number of worker threads.
CHUNK_POINTS = 512

HISTORY_HEADER = ("epoch", "loss_eq1", "loss_eq2", "loss_eq3", "loss_eq4", "loss_initial",
                  "loss_total", "lr")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, component: str, value: float):
        super().__init__(f"non-finite loss at epoch {epoch}: {component} = {value}")
        self.epoch = epoch
        self.component = component


@dataclass(frozen=True, eq=False)
class CollocationGrid:
    times: np.ndarray

    def __len__(self):
        return self.times.size


def make_grid(t_span, n: int) -> CollocationGrid:
    """``n`` equispaced points covering ``t_span``, both ends included."""
    a, b = float(t_span[0]), float(t_span[1])
    if n < 2:
        raise ValueError(f"collocation grid needs at least 2 points, got {n}")
    if not a < b:
        raise ValueError(f"empty time span ({a}, {b})")
    times = a + np.arange(n) * ((b - a) / (n - 1))
    times[-1] = b
    times.flags.writeable = False
    return CollocationGrid(times)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 10.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0 and self.beta == 0):
            raise ValueError("loss weights must be nonnegative and not both zero")


@dataclass(frozen=True)
class LossBreakdown:
    eq1: float
    eq2: float
    eq3: float
    eq4: float
    initial: float
    total: float

    def as_row(self) -> tuple[float, ...]:
        return (self.eq1, self.eq2, self.eq3, self.eq4, self.initial, self.total)


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters. Defaults reproduce the full-scale experiment."""

    t_span: tuple[float, float] = (0.0, 100.0)
    n_points: int = 20000
    hidden_layers: int = 16
    hidden_width: int = 100
    seed: int = 0
    alpha: float = 10.0
    beta: float = 1.0
    lr_initial: float = 8e-5
    lr_floor: float = 1e-6
    max_epochs: int = 175000
    epsilon_stop: float = 1e-7
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    optimizer: str = "adam"
    checkpoint_every: int = 1000
    t_initial: float = 0.0
    initial_state: tuple[float, float, float, float] = tuple(default_initial_state())
    esd_params: EsdParameters = field(default_factory=default_chaotic_params)
    # None: rescale the input to [-1, 1] only when the span is wider than 10
    input_scaling: bool | None = None

    def __post_init__(self):
        object.__setattr__(self, "t_span", tuple(float(v) for v in self.t_span))
        object.__setattr__(self, "initial_state", tuple(float(v) for v in self.initial_state))
        errors = self.problems()
        if errors:
            raise ValueError("; ".join(errors))

    def problems(self) -> list[str]:
        out = []
        a, b = self.t_span
        if not a < b:
            out.append(f"t_span: start {a} must be below end {b}")
        if self.n_points < 2:
            out.append("n_points: must be >= 2")
        if self.hidden_layers < 1 or self.hidden_width < 1:
            out.append("hidden_layers/hidden_width: must be >= 1")
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0 and self.beta == 0):
            out.append("alpha/beta: must be nonnegative and not both zero")
        if not 0 < self.lr_floor <= self.lr_initial:
            out.append("lr_floor: must satisfy 0 < lr_floor <= lr_initial")
        if self.max_epochs < 1:
            out.append("max_epochs: must be >= 1")
        if not self.epsilon_stop > 0:
            out.append("epsilon_stop: must be > 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            out.append("adam: need 0 <= beta1, beta2 < 1 and eps > 0")
        if self.optimizer not in ("adam", "gd"):
            out.append(f"optimizer: expected 'adam' or 'gd', got {self.optimizer!r}")
        if self.checkpoint_every < 0:
            out.append("checkpoint_every: must be >= 0")
        if len(self.initial_state) != 4:
            out.append("initial_state: needs 4 components")
        return out

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta)

    @property
    def uses_input_scaling(self) -> bool:
        if self.input_scaling is None:
            return self.t_span[1] - self.t_span[0] > 10
        return self.input_scaling

    def loss_spec(self) -> diff_engine.LossSpec:
        return diff_engine.LossSpec.total(self.esd_params, self.initial_state, self.t_initial,
                                          self.alpha, self.beta)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["t_span"] = list(self.t_span)
        d["initial_state"] = list(self.initial_state)
        d["esd_params"] = self.esd_params.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise KeyError(f"unknown training fields: {', '.join(unknown)}")
        kw = dict(data)
        if "esd_params" in kw and not isinstance(kw["esd_params"], EsdParameters):
            kw["esd_params"] = EsdParameters.from_dict(kw["esd_params"])
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def fresh(cls, n: int) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n), 0)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    losses: LossBreakdown
    lr: float


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, rec: EpochRecord) -> None:
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("history epochs must be strictly increasing")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(HISTORY_HEADER) + "\n")
        for r in self.records:
            vals = (*r.losses.as_row(), r.lr)
            buf.write(f"{r.epoch}," + ",".join(f"{v:.17g}" for v in vals) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainingHistory":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != HISTORY_HEADER:
            raise ValueError("bad history header")
        hist = cls()
        for row in rows[1:]:
            if not row:
                continue
            vals = [float(v) for v in row[1:]]
            hist.append(EpochRecord(int(row[0]), LossBreakdown(*vals[:6]), vals[6]))
        return hist


@dataclass(frozen=True, eq=False)
class TrainedModel:
    network: MlpNetwork
    best_network: MlpNetwork
    best_epoch: int
    best_loss: float
    optimizer: OptimizerState
    epochs_run: int
    """Number of updates applied in total, including resumed ones."""


def residual_losses(net: MlpNetwork, params: EsdParameters, grid) -> tuple[float, float, float, float]:
    """Mean squared residual of each ESD equation over the grid."""
    times = np.asarray(getattr(grid, "times", grid), dtype=np.float64).reshape(-1)
    if times.size == 0:
        raise ValueError("empty collocation grid")
    value, tangent = diff_engine.forward_with_tangent(net, times)
    r = tangent - rhs_array(params, value)
    return tuple(float(v) for v in np.mean(r * r, axis=0))


def initial_loss(net: MlpNetwork, cfg: TrainingConfig) -> float:
    dev = forward(net, float(cfg.t_initial)) - np.asarray(cfg.initial_state)
    return float(np.sum(dev * dev))


def total_loss(parts, w: LossWeights) -> float:
    eq1, eq2, eq3, eq4, init = parts
    return w.alpha * (eq1 + eq2 + eq3 + eq4) + w.beta * init


def loss_breakdown(net: MlpNetwork, cfg: TrainingConfig, grid) -> LossBreakdown:
    parts = (*residual_losses(net, cfg.esd_params, grid), initial_loss(net, cfg))
    return LossBreakdown(*parts, total_loss(parts, cfg.weights))


def adam_step(opt: OptimizerState, params, grad, lr: float, cfg: TrainingConfig):
    """One bias-corrected Adam update. Returns ``(new_state, new_params)``."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if not (params.shape == grad.shape == opt.m.shape):
        raise ValueError(f"length mismatch: params {params.shape}, grad {grad.shape}, "
                         f"state {opt.m.shape}")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    step = opt.step + 1
    m = b1 * opt.m + (1.0 - b1) * grad
    v = b2 * opt.v + (1.0 - b2) * (grad * grad)
    m_hat = m / (1.0 - b1 ** step)
    v_hat = v / (1.0 - b2 ** step)
    new = params - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return OptimizerState(m, v, step), new


def gd_step(opt: OptimizerState, params, grad, lr: float, cfg: TrainingConfig = None):
    """Plain gradient descent, ``w <- w - lr * dL/dw``."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ValueError(f"length mismatch: params {params.shape}, grad {grad.shape}")
    return replace(opt, step=opt.step + 1), params - lr * grad


def lr_schedule(epoch: int, cfg: TrainingConfig) -> float:
    """Exponential decay from ``lr_initial`` reaching ``lr_floor`` at ``max_epochs``."""
    if epoch <= 0:
        return cfg.lr_initial
    if epoch >= cfg.max_epochs:
        return cfg.lr_floor
    ratio = cfg.lr_floor / cfg.lr_initial
    return max(cfg.lr_floor, cfg.lr_initial * ratio ** (epoch / cfg.max_epochs))


def initial_network(cfg: TrainingConfig) -> MlpNetwork:
    scale, shift = input_scaling(cfg.t_span) if cfg.uses_input_scaling else (1.0, 0.0)
    return init_network(cfg.hidden_layers, cfg.hidden_width, cfg.seed, scale, shift)


@dataclass(frozen=True, eq=False)
class ResumeState:
    network: MlpNetwork
    optimizer: OptimizerState
    epoch: int
    best_network: MlpNetwork | None = None
    best_epoch: int = -1
    best_loss: float = np.inf


def train(
    cfg: TrainingConfig,
    resume: ResumeState | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
    on_checkpoint: Callable[[TrainedModel], None] | None = None,
    workers: int = 1,
) -> tuple[TrainedModel, TrainingHistory]:
    """Full-batch training loop.

    Epoch ``e`` evaluates the loss at the current parameters, records it
    with the learning rate ``lr_schedule(e)``, and applies one update unless
    the loss is already at or below ``epsilon_stop``. With ``resume``,
    numbering continues from ``resume.epoch``.

    ``workers`` threads evaluate blocks of ``CHUNK_POINTS`` collocation
    points; BLAS itself is held to one thread, since its multithreaded
    kernels change the reduction order with the thread count.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    grid = make_grid(cfg.t_span, cfg.n_points)
    spec = cfg.loss_spec()
    step_fn = adam_step if cfg.optimizer == "adam" else gd_step

    if resume is None:
        net = initial_network(cfg)
        opt = OptimizerState.fresh(net.n_params)
        start = 0
        best_net, best_epoch, best_loss = net, -1, np.inf
    else:
        net, opt, start = resume.network, resume.optimizer, resume.epoch
        best_net = resume.best_network or net
        best_epoch, best_loss = resume.best_epoch, resume.best_loss

    params = flatten(net)
    history = TrainingHistory()
    epoch = start
    with threadpool_limits(limits=1), (
            ThreadPoolExecutor(workers) if workers > 1 else nullcontext()) as pool:
        map_fn = pool.map if pool is not None else map
        while epoch < cfg.max_epochs:
            with np.errstate(over="ignore", invalid="ignore"):
                loss, parts, grad = diff_engine.loss_and_parts_gradient(
                    net, grid, spec, CHUNK_POINTS, map_fn)
            for name, value in zip(diff_engine.LOSS_NAMES + ("total",), (*parts, loss)):
                if not np.isfinite(value):
                    raise TrainingDiverged(epoch, name, value)
            lr = lr_schedule(epoch, cfg)
            rec = EpochRecord(epoch, LossBreakdown(*(float(p) for p in parts), loss), lr)
            history.append(rec)
            if on_epoch is not None:
                on_epoch(rec)
            if loss < best_loss:
                best_net, best_epoch, best_loss = net, epoch, loss
            if loss <= cfg.epsilon_stop:
                log.info("epoch %d: total loss %.3e reached epsilon_stop", epoch, loss)
                break
            opt, params = step_fn(opt, params, grad, lr, cfg)
            net = unflatten(net, params)
            epoch += 1
            if on_checkpoint is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                on_checkpoint(TrainedModel(net, best_net, best_epoch, best_loss, opt, epoch))

    model = TrainedModel(net, best_net, best_epoch, best_loss, opt, epoch)
    return model, history


def predict(model: TrainedModel, times, use_best: bool = True) -> SolutionTable:
    """Evaluate the trained network at arbitrary times."""
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    net = model.best_network if use_best else model.network
    return SolutionTable(times, forward(net, times))


def checkpoint_dict(model: TrainedModel, cfg: TrainingConfig | None = None) -> dict:
    from .mlp import checkpoint_dict as net_dict

    out = {
        "network": net_dict(model.network),
        "best_network": net_dict(model.best_network),
        "best_epoch": model.best_epoch,
        "best_loss": model.best_loss,
        "epoch": model.epochs_run,
        "optimizer": {
            "m": model.optimizer.m.tolist(),
            "v": model.optimizer.v.tolist(),
            "step": model.optimizer.step,
        },
    }
    if cfg is not None:
        out["config"] = cfg.to_dict()
    return out


def resume_from_dict(data: dict) -> ResumeState:
    from .mlp import network_from_dict

    opt = data["optimizer"]
    return ResumeState(
        network=network_from_dict(data["network"]),
        optimizer=OptimizerState(np.array(opt["m"], dtype=np.float64),
                                 np.array(opt["v"], dtype=np.float64), int(opt["step"])),
        epoch=int(data["epoch"]),
        best_network=network_from_dict(data["best_network"]),
        best_epoch=int(data["best_epoch"]),
        best_loss=float(data["best_loss"]),
    )
