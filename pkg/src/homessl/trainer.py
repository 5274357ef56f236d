"""Training loop: views -> encoder/projector -> HOME loss -> backward -> SGD."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .data import DataParams, SyntheticDataset, ViewConfig, generate, make_views, split
from .loss import LossConfig, home_loss
from .model import MlpModel, NonFiniteActivation, backward, build_model, forward
from .optim import SGD, Schedule, lr_at
from .parallel import blas_threads
from .variants import LossPlan, build_plan

_BATCH_STREAM = 0x42415443


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "T2-O3-Self-All"
    seed: int = 0
    encoder_widths: tuple[int, ...] = (256, 128)
    proj_dim: int = 64
    batch_size: int = 256
    epochs: int = 200
    base_lr: float = 0.05
    final_lr: float = 0.002
    warmup_epochs: int = 10
    momentum: float = 0.9
    weight_decay: float = 5e-4
    test_fraction: float = 0.25
    loss: LossConfig = LossConfig()
    data: DataParams = DataParams()
    views: ViewConfig = ViewConfig()

    def resolved(self) -> "TrainConfig":
        """Copy with unset data/view seeds replaced by the run seed."""
        data = self.data if self.data.seed is not None else replace(self.data, seed=self.seed)
        views = self.views if self.views.seed is not None else replace(self.views, seed=self.seed)
        return replace(self, data=data, views=views)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("epochs must be >= 1 and batch_size >= 2")
        if self.base_lr < 0 or self.final_lr < 0:
            raise ValueError("learning rates must be non-negative")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError("warmup_epochs must lie in 0..epochs")


@dataclass
class TrainState:
    model: MlpModel
    initial_model: MlpModel
    optimizer: SGD
    plan: LossPlan
    config: TrainConfig
    schedule: Schedule
    dataset: SyntheticDataset
    train_idx: np.ndarray
    test_idx: np.ndarray
    step: int = 0
    epoch_losses: list = field(default_factory=list)


def prepare(config: TrainConfig, dataset: SyntheticDataset | None = None) -> TrainState:
    """Build model, optimizer, plan and split without taking any step."""
    config = config.resolved()
    if dataset is None:
        dataset = generate(config.data)
    train_idx, test_idx = split(dataset, config.test_fraction, config.seed)
    batch = min(config.batch_size, len(train_idx))
    steps = max(1, len(train_idx) // batch)
    model = build_model(dataset.samples.shape[1], config.encoder_widths, config.proj_dim, config.seed)
    optimizer = SGD(model.parameters(), config.momentum, config.weight_decay, model.decay_mask())
    schedule = Schedule(config.base_lr, config.final_lr, config.warmup_epochs, config.epochs, steps)
    plan = build_plan(config.variant, config.seed)
    return TrainState(model, model.copy(), optimizer, plan, config, schedule, dataset, train_idx, test_idx)


def train_step(state: TrainState, x: np.ndarray, epoch: int) -> dict:
    cfg = state.config
    it = state.step
    views = make_views(x, cfg.views, it, state.plan.T)
    try:
        fwd = [forward(state.model, v) for v in views]
    except NonFiniteActivation as err:
        raise DivergenceError(f"iteration {it}: {err}") from err
    value = home_loss([f[1] for f in fwd], state.plan, cfg.loss, iteration=it)
    if not np.isfinite(value.total):
        raise DivergenceError(f"non-finite loss at iteration {it}")
    grads = None
    for (_, _, cache), g in zip(fwd, value.gradient):
        pg = backward(state.model, cache, g)
        grads = pg if grads is None else [a + b for a, b in zip(grads, pg)]
    lr = lr_at(it, state.schedule)
    state.optimizer.step(state.model.parameters(), grads, lr)
    state.model.version += 1
    state.step += 1
    return {
        "iteration": it,
        "epoch": epoch,
        "lr": lr,
        "loss_total": value.total,
        "loss_invariance": value.invariance_term,
        "loss_redundancy_per_view": list(value.redundancy_terms),
    }


def train(config: TrainConfig, dataset: SyntheticDataset | None = None,
          sink: Callable[[dict], None] | None = None,
          timing_sink: Callable[[dict], None] | None = None) -> TrainState:
    """Run the full schedule.

    ``sink`` receives one metrics record per iteration. Wall-clock time goes
    to ``timing_sink`` only, keeping metric streams reproducible.
    """
    state = prepare(config, dataset)
    config = state.config
    steps = state.schedule.steps_per_epoch
    batch = min(config.batch_size, len(state.train_idx))
    x_all = state.dataset.samples
    with blas_threads(config.loss.threads):
        for epoch in range(1, config.epochs + 1):
            order = np.random.default_rng([_BATCH_STREAM, config.seed, epoch]).permutation(state.train_idx)
            losses = []
            for b in range(steps):
                t0 = time.perf_counter()
                rec = train_step(state, x_all[order[b * batch:(b + 1) * batch]], epoch)
                losses.append(rec["loss_total"])
                if sink is not None:
                    sink(rec)
                if timing_sink is not None:
                    timing_sink({"iteration": rec["iteration"],
                                 "wall_ms": (time.perf_counter() - t0) * 1e3})
            state.epoch_losses.append(float(np.mean(losses)))
    return state


def representations(model: MlpModel, x: np.ndarray) -> np.ndarray:
    return forward(model, x)[0]


def embeddings(model: MlpModel, x: np.ndarray) -> np.ndarray:
    return forward(model, x)[1]
