"""
Auto-encoder training: Adam, kind-balanced batches and early stopping.
"""

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union
import numpy as np
from tqdm import tqdm
from .cae import CaeModel, forward_backward, reconstruction_loss
from .config import TrainingConfig
from .random_streams import derive_rng
from .logging import get_logger, TrainingMetricsLogger


logger = get_logger("training")


class TrainingError(Exception):
    """Custom exception for training errors."""
    pass


@dataclass
class TrainingData:
    """Fixed-size unit barkgrams of one partition, split by clip kind."""
    imitations: np.ndarray
    samples: np.ndarray

    def __post_init__(self):
        self.imitations = np.asarray(self.imitations)
        self.samples = np.asarray(self.samples)

    def check(self, partition: str) -> None:
        for kind, data in (("imitation", self.imitations), ("sample", self.samples)):
            if data.ndim != 3 or data.shape[0] == 0:
                raise TrainingError(f"empty kind partition: {partition} set has no {kind} barkgrams")

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.imitations, self.samples], axis=0)

    def __len__(self) -> int:
        return int(self.imitations.shape[0] + self.samples.shape[0])


class Adam:
    """Adam with bias-corrected moments, applied in place."""

    def __init__(self, learning_rate: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name in sorted(grads):
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            update = self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.epsilon)
            params[name] -= update.astype(params[name].dtype, copy=False)


class BalancedBatchSampler:
    """Half of every batch from each kind, by per-kind shuffled cycling.

    Each kind walks through its own permutation and reshuffles when exhausted,
    so a batch always holds batch_size / 2 imitations and batch_size / 2 samples.
    """

    def __init__(self, n_imitations: int, n_samples: int, batch_size: int, rng: np.random.Generator):
        if batch_size < 2 or batch_size % 2:
            raise TrainingError(f"batch size must be even and at least 2, got {batch_size}")
        if n_imitations < 1 or n_samples < 1:
            raise TrainingError("empty kind partition: both kinds need at least one example")
        self.half = batch_size // 2
        self.rng = rng
        self._sizes = {"imitation": n_imitations, "sample": n_samples}
        self._order = {kind: rng.permutation(n) for kind, n in self._sizes.items()}
        self._pos = {kind: 0 for kind in self._sizes}

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(max(self._sizes.values()) / self.half)

    def _draw(self, kind: str) -> np.ndarray:
        picked = []
        while len(picked) < self.half:
            if self._pos[kind] == self._sizes[kind]:
                self._order[kind] = self.rng.permutation(self._sizes[kind])
                self._pos[kind] = 0
            take = min(self.half - len(picked), self._sizes[kind] - self._pos[kind])
            picked.extend(self._order[kind][self._pos[kind]:self._pos[kind] + take])
            self._pos[kind] += take
        return np.asarray(picked, dtype=np.int64)

    def next_batch(self) -> Tuple[np.ndarray, np.ndarray]:
        """(imitation indices, sample indices) of the next batch."""
        return self._draw("imitation"), self._draw("sample")


class EarlyStopping:
    """Track the best validation loss; stop after `patience` epochs without strict improvement."""

    def __init__(self, patience: int = 10):
        if patience < 1:
            raise TrainingError(f"patience must be at least 1, got {patience}")
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch = 0
        self.epochs_without_improvement = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record an epoch's validation loss; True when it is a new best."""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.epochs_without_improvement = 0
            return True
        self.epochs_without_improvement += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.epochs_without_improvement >= self.patience


@dataclass
class TrainingHistory:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.val_loss)

    def write_csv(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "val_loss", "best"])
            for epoch, (tr, va) in enumerate(zip(self.train_loss, self.val_loss), start=1):
                writer.writerow([epoch, repr(tr), repr(va), int(epoch == self.best_epoch)])


def train(
    model: CaeModel,
    train_set: TrainingData,
    val_set: TrainingData,
    config: Optional[TrainingConfig] = None,
    progress: bool = False,
) -> Tuple[CaeModel, TrainingHistory]:
    """Fit the auto-encoder and return it holding its best-validation parameters."""
    config = config or TrainingConfig()
    train_set.check("training")
    val_set.check("validation")

    dtype = model.dtype
    imitations = train_set.imitations.astype(dtype, copy=False)
    samples = train_set.samples.astype(dtype, copy=False)
    val_data = val_set.stacked().astype(dtype, copy=False)

    model.bn_momentum = config.bn_momentum
    model.bn_epsilon = config.bn_epsilon
    model.seed = config.seed

    sampler = BalancedBatchSampler(
        imitations.shape[0], samples.shape[0], config.batch_size,
        derive_rng(config.seed, f"{model.architecture.name}-batches"),
    )
    optimizer = Adam(config.learning_rate, config.beta1, config.beta2, config.epsilon)
    stopper = EarlyStopping(config.patience)
    history = TrainingHistory()
    metrics = TrainingMetricsLogger(model.architecture.name)
    best_params, best_state = model.copy_parameters()

    logger.info(
        f"🏋️ Training {model.architecture.name}: {len(train_set)} train / {len(val_set)} val barkgrams, "
        f"{sampler.steps_per_epoch} steps per epoch"
    )
    epochs = range(1, config.max_epochs + 1)
    for epoch in tqdm(epochs, desc=model.architecture.name, unit="epoch", disable=not progress):
        epoch_start = time.time()
        batch_losses = []
        for _ in range(sampler.steps_per_epoch):
            imit_idx, samp_idx = sampler.next_batch()
            batch = np.concatenate([imitations[imit_idx], samples[samp_idx]], axis=0)
            loss, grads, stats = forward_backward(model, batch)
            if not math.isfinite(loss):
                raise TrainingError(f"{model.architecture.name} diverged: non-finite loss at epoch {epoch}")
            optimizer.step(model.params, grads)
            model.state.update(stats)
            batch_losses.append(loss)

        train_loss = float(np.mean(batch_losses))
        val_loss = reconstruction_loss(model, val_data, config.eval_chunk)
        if not math.isfinite(val_loss):
            raise TrainingError(f"{model.architecture.name} diverged: non-finite validation loss at epoch {epoch}")

        improved = stopper.update(epoch, val_loss)
        if improved:
            best_params, best_state = model.copy_parameters()
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        metrics.log_epoch(epoch, train_loss, val_loss, sampler.steps_per_epoch, time.time() - epoch_start, improved)

        if stopper.should_stop:
            history.stopped_early = True
            metrics.log_early_stop(epoch, config.patience)
            break

    history.best_epoch = stopper.best_epoch
    model.params, model.state = best_params, best_state
    model.epochs_run = history.epochs_run
    model.best_epoch = stopper.best_epoch
    model.best_val_loss = stopper.best_loss
    model.history = history
    metrics.log_summary()
    return model, history
