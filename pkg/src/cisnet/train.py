"""Training recipe: paired mini-batches, Adam with layer-wise rates, exponential decay,
bias calibration at start-up and curriculum over decreasing payloads."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import GROUPS, CISNet, NetworkConfig, build_network, calibrate_biases
from .rng import rng_for
from .tensor import Tensor, no_grad, softmax, softmax_cross_entropy

logger = logging.getLogger(__name__)

DEFAULT_LEARNING_RATES = {"hpf": 5e-6, "fusion": 1e-2, "type1": 1e-3, "type2": 1e-4, "fc": 1e-4}


@dataclass
class TrainConfig:
    pairs_per_batch: int = 8
    learning_rates: dict = field(default_factory=lambda: dict(DEFAULT_LEARNING_RATES))
    decay: float = 0.985
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 20
    init_pairs: int = 50
    curriculum: tuple = (0.4,)
    augment: bool = False
    seed: int = 0

    def __post_init__(self):
        missing = set(GROUPS) - set(self.learning_rates)
        if missing:
            raise ValueError(f"learning rates missing for groups {sorted(missing)}")

    def rates_at(self, epoch: int) -> dict[str, float]:
        return {g: self.learning_rates[g] * self.decay ** epoch for g in GROUPS}


@dataclass
class PairSet:
    """Stacked cover/stego arrays, (n, 1, H, W) float64, aligned by index."""

    covers: np.ndarray
    stegos: np.ndarray
    names: list[str]
    prob_maps: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.covers)

    @classmethod
    def from_pairs(cls, pairs) -> "PairSet":
        pairs = list(pairs)
        return cls(
            covers=np.stack([p.cover for p in pairs]).astype(np.float64),
            stegos=np.stack([p.stego for p in pairs]).astype(np.float64),
            names=[p.name for p in pairs],
            prob_maps=np.stack([p.prob_map for p in pairs]),
        )

    def subset(self, idx) -> "PairSet":
        idx = np.asarray(idx)
        return PairSet(
            self.covers[idx], self.stegos[idx], [self.names[i] for i in idx],
            None if self.prob_maps is None else self.prob_maps[idx],
        )


def paired_batch(covers: np.ndarray, stegos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stack covers then their own stegos; labels 0 for cover, 1 for stego."""
    if covers.shape != stegos.shape:
        raise ValueError("every cover needs its stego in the batch")
    x = np.concatenate([covers, stegos])
    labels = np.concatenate([np.zeros(len(covers), np.int64), np.ones(len(stegos), np.int64)])
    return x, labels


def epoch_batches(n_pairs: int, pairs_per_batch: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled pair indices per batch; the incomplete tail is dropped."""
    order = rng_for(seed, "shuffle", epoch).permutation(n_pairs)
    n_full = n_pairs // pairs_per_batch
    return [order[i * pairs_per_batch:(i + 1) * pairs_per_batch] for i in range(n_full)]


class Adam:
    def __init__(self, params: dict[str, Tensor], groups: dict[str, str], cfg: TrainConfig):
        self.params = params
        self.groups = groups
        self.beta1, self.beta2, self.eps = cfg.beta1, cfg.beta2, cfg.eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self, rates: dict[str, float]) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name, t in self.params.items():
            if t.grad is None:
                continue
            g = t.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            lr = rates[self.groups[name]]
            t.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_step(net: CISNet, batch: tuple[np.ndarray, np.ndarray], optimizer: Adam,
               rates: dict[str, float]) -> float:
    """One Adam update on a paired batch; returns the mean cross-entropy."""
    x, labels = paired_batch(*batch)
    net.zero_grad()
    loss = softmax_cross_entropy(net(Tensor(x)), labels)
    value = loss.item()
    if not math.isfinite(value):
        raise FloatingPointError(f"loss became {value} at optimizer step {optimizer.step_count + 1}")
    loss.backward()
    optimizer.step(rates)
    return value


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    rates: dict[str, float]


class Trainer:
    """Owns a network, its optimizer and the epoch counter."""

    def __init__(self, net: CISNet, cfg: TrainConfig):
        self.net = net
        self.cfg = cfg
        self.optimizer = Adam(net.named_parameters(), net.parameter_groups(), cfg)
        self.epoch = 0
        self.history: list[EpochRecord] = []
        self.step_losses: list[float] = []

    def rates(self) -> dict[str, float]:
        return self.cfg.rates_at(self.epoch)

    def calibrate(self, data: PairSet) -> dict[str, float]:
        """Bias calibration on ``init_pairs`` randomly chosen training pairs."""
        k = min(self.cfg.init_pairs, len(data))
        idx = np.sort(rng_for(self.cfg.seed, "init-set").choice(len(data), k, replace=False))
        x, _ = paired_batch(data.covers[idx], data.stegos[idx])
        return calibrate_biases(self.net, x)

    def run_epoch(self, data: PairSet) -> float:
        rates = self.rates()
        losses = []
        for idx in epoch_batches(len(data), self.cfg.pairs_per_batch, self.cfg.seed, self.epoch):
            losses.append(train_step(self.net, (data.covers[idx], data.stegos[idx]), self.optimizer, rates))
        self.step_losses.extend(losses)
        mean = float(np.mean(losses))
        self.history.append(EpochRecord(self.epoch, mean, rates))
        self.epoch += 1
        return mean

    def fit(self, data: PairSet, epochs: int | None = None,
            callback: Callable[["Trainer"], None] | None = None) -> list[EpochRecord]:
        target = self.cfg.epochs if epochs is None else epochs
        while self.epoch < target:
            loss = self.run_epoch(data)
            logger.info("epoch %d loss %.5f", self.epoch, loss)
            if callback is not None:
                callback(self)
        return self.history


def predict_scores(net: CISNet, images, chunk: int = 50) -> np.ndarray:
    """Softmax probability of the stego class per image."""
    x = np.asarray(images, dtype=np.float64)
    out = []
    with no_grad():
        for i in range(0, len(x), chunk):
            out.append(softmax(net(Tensor(x[i:i + chunk])).data)[:, 1])
    return np.concatenate(out) if out else np.zeros(0)


def pair_scores(net: CISNet, data: PairSet) -> tuple[np.ndarray, np.ndarray]:
    x, labels = paired_batch(data.covers, data.stegos)
    return predict_scores(net, x), labels


def train_new(data: PairSet, net_cfg: NetworkConfig, cfg: TrainConfig,
              epochs: int | None = None, callback=None) -> Trainer:
    """Build, initialise, calibrate and train a network from scratch."""
    net = build_network(net_cfg)
    trainer = Trainer(net, cfg)
    trainer.calibrate(data)
    trainer.fit(data, epochs, callback)
    return trainer


def train_curriculum(chain: Sequence[float], datasets: dict, net_cfg: NetworkConfig,
                     cfg: TrainConfig, epochs_per_stage: int | None = None) -> list:
    """Train the highest payload from scratch, then refine stage by stage.

    ``datasets`` maps payload -> PairSet (training split). All stages must use
    the same covers in the same order. Each later stage starts from the
    previous stage's final weights with a fresh optimizer and schedule.
    Returns one :class:`~cisnet.checkpoint.Checkpoint` per stage.
    """
    from .checkpoint import Checkpoint

    chain = [float(p) for p in chain]
    if not chain:
        raise ValueError("empty curriculum")
    if any(b >= a for a, b in zip(chain, chain[1:])):
        raise ValueError(f"payloads must be strictly decreasing, got {chain}")
    names = datasets[chain[0]].names
    for p in chain[1:]:
        if datasets[p].names != names:
            raise ValueError(f"cover split of payload {p} differs from payload {chain[0]}")

    checkpoints = []
    trainer = None
    for stage, payload in enumerate(chain):
        if trainer is None:
            trainer = Trainer(build_network(net_cfg), cfg)
            trainer.calibrate(datasets[payload])
        else:
            trainer = Trainer(trainer.net, cfg)
        trainer.fit(datasets[payload], epochs_per_stage)
        checkpoints.append(Checkpoint.capture(trainer, stage=stage, payload=payload))
    return checkpoints


def augment_rotations(covers) -> np.ndarray:
    """Originals followed by their 90, 180 and 270 degree counter-clockwise rotations.

    Applied to covers before embedding; input (N, 1, H, W) with H == W.
    """
    x = np.asarray(covers)
    if x.ndim != 4 or x.shape[2] != x.shape[3]:
        raise ValueError(f"square (N, 1, H, W) covers required, got shape {x.shape}")
    return np.concatenate([np.rot90(x, k, axes=(2, 3)) for k in range(4)])
