"""Adversarial training with SGD + momentum and epoch-end spectral-norm clipping."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, adversarial_accuracy, attack_batch
from .errors import InvalidConfigError, InvalidInputError, TrainingError, UndefinedMetricError
from .losses import cross_entropy_batch, margins
from .model import Network, backward_batch, init_network, logits_batch
from .numerics import SeededRng, spectral_norm

log = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "train_loss", "test_loss", "train_err", "test_err", "adv_acc"]


@dataclass
class TrainConfig:
    widths: list[int] = field(default_factory=lambda: [64, 256, 128, 10])
    epochs: int = 40
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    lr_decay_epochs: list[int] = field(default_factory=lambda: [25, 35])
    lr_decay_factor: float = 0.1
    attack: AttackConfig = field(default_factory=AttackConfig)
    sn_clip: float | None = None
    seed: int = 0
    dataset: str = "blobs"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfigError("epochs and batch_size must be >= 1")
        if self.lr <= 0 or not 0 <= self.momentum < 1:
            raise InvalidConfigError("need lr > 0 and momentum in [0, 1)")
        if self.sn_clip is not None and self.sn_clip <= 0:
            raise InvalidConfigError("sn.clip must be > 0")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``; decays once per milestone reached."""
        return self.lr * self.lr_decay_factor ** sum(epoch >= d for d in self.lr_decay_epochs)

    def to_dict(self) -> dict:
        return asdict(self)


def sgd_momentum_step(net: Network, grads, velocity, lr: float, momentum: float):
    """``v <- momentum * v + g``; ``W <- W - lr * v``. Updates in place and returns both."""
    if len(grads) != net.depth or len(velocity) != net.depth:
        raise InvalidInputError("gradient/velocity list length does not match the network")
    for i, (w, g, v) in enumerate(zip(net.weights, grads, velocity)):
        if g.shape != w.shape or v.shape != w.shape:
            raise InvalidInputError(f"layer {i + 1}: shape mismatch {g.shape} / {v.shape} vs {w.shape}")
        v *= momentum
        v += g
        w -= lr * v
    return net, velocity


def spectral_normalize(net: Network, c: float) -> Network:
    """Scale down every layer whose spectral norm exceeds ``c`` (in place)."""
    if c <= 0:
        raise InvalidConfigError("spectral-norm ceiling must be > 0")
    for w in net.weights:
        s = spectral_norm(w)
        if s > c:
            w *= c / s
    return net


def evaluate(net: Network, data) -> tuple[float, float]:
    """Mean cross-entropy and 0-1 error (ties count as errors)."""
    logits = logits_batch(net, data.inputs)
    ce, _ = cross_entropy_batch(logits, data.labels)
    err = np.mean(margins(logits, data.labels) <= 0)
    return float(ce.mean()), float(err)


def train_adversarial(cfg: TrainConfig, train, test=None, eval_attack: AttackConfig | None = None):
    """Train from a seeded init; returns ``(network, log_rows)``.

    Batch ``b`` of epoch ``e`` is attacked with ``SeededRng(seed).child(1, e, b)``.
    ``eval_attack`` (default: the training attack) sets the per-epoch
    ``adv_acc`` column, measured on ``test`` when given.
    """
    if cfg.widths[0] != train.dim or cfg.widths[-1] != train.num_classes:
        raise InvalidConfigError(
            f"widths {cfg.widths} do not fit data of dim {train.dim} with {train.num_classes} classes"
        )
    root = SeededRng(cfg.seed)
    net = init_network(cfg.widths, root.child(0))
    velocity = [np.zeros_like(w) for w in net.weights]
    eps = cfg.attack.epsilon
    eval_attack = eval_attack or cfg.attack
    n = len(train)
    rows = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        perm = root.child(2, epoch).permutation(n)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            X, y = train.inputs[idx], train.labels[idx]
            if eps > 0:
                xa = attack_batch(net, X, y, cfg.attack, root.child(1, epoch, b))
                if np.max(np.abs(xa - X)) > eps + 1e-12:
                    raise TrainingError("attack left the epsilon ball", epoch=epoch)
                X = xa
            grads, _, losses = backward_batch(net, X, y)
            if not np.isfinite(losses).all():
                raise TrainingError(f"loss diverged in epoch {epoch}", epoch=epoch)
            sgd_momentum_step(net, grads, velocity, lr, cfg.momentum)
        if cfg.sn_clip is not None:
            spectral_normalize(net, cfg.sn_clip)
        if not all(np.isfinite(w).all() for w in net.weights):
            raise TrainingError(f"weights diverged in epoch {epoch}", epoch=epoch)
        train_loss, train_err = evaluate(net, train)
        row = {"epoch": epoch, "train_loss": train_loss, "train_err": train_err,
               "test_loss": float("nan"), "test_err": float("nan"), "adv_acc": float("nan")}
        if test is not None:
            row["test_loss"], row["test_err"] = evaluate(net, test)
        if not np.isfinite(train_loss):
            raise TrainingError(f"loss diverged in epoch {epoch}", epoch=epoch)
        if eval_attack.epsilon > 0:
            try:
                row["adv_acc"] = adversarial_accuracy(net, test if test is not None else train, eval_attack)
            except UndefinedMetricError:
                pass
        log.info("epoch %d lr %.4g train %.4f/%.3f test %.4f/%.3f adv %.3f", epoch, lr,
                 row["train_loss"], row["train_err"], row["test_loss"], row["test_err"], row["adv_acc"])
        rows.append(row)
    return net, rows


def write_log_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r["epoch"]] + [repr(float(r[k])) for k in LOG_COLUMNS[1:]])


# -- config files ---------------------------------------------------------

def parse_kv(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _ints(v: str) -> list[int]:
    return [int(t) for t in v.replace(",", " ").split()]


def _floats(v: str) -> list[float]:
    return [float(t) for t in v.replace(",", " ").split()]


TRAIN_KEYS = {"widths", "dataset", "seed", "epochs", "batch", "lr", "momentum", "decay_epochs",
              "decay_factor", "adv.method", "adv.eps", "adv.alpha", "adv.steps", "adv.random_start",
              "sn.clip"}


def train_config_from_kv(kv: dict[str, str], strict: bool = True) -> TrainConfig:
    if strict:
        unknown = set(kv) - TRAIN_KEYS
        if unknown:
            raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = TrainConfig()
    seed = int(kv.get("seed", cfg.seed))
    eps = float(kv.get("adv.eps", 0.0))
    attack = AttackConfig(
        method=kv.get("adv.method", "pgd"),
        epsilon=eps,
        alpha=float(kv["adv.alpha"]) if "adv.alpha" in kv else None,
        steps=int(kv.get("adv.steps", 10)),
        random_start=kv.get("adv.random_start", "true").lower() in ("1", "true", "yes"),
        seed=seed,
    )
    return TrainConfig(
        widths=_ints(kv["widths"]) if "widths" in kv else cfg.widths,
        epochs=int(kv.get("epochs", cfg.epochs)),
        batch_size=int(kv.get("batch", cfg.batch_size)),
        lr=float(kv.get("lr", cfg.lr)),
        momentum=float(kv.get("momentum", cfg.momentum)),
        lr_decay_epochs=_ints(kv["decay_epochs"]) if "decay_epochs" in kv else cfg.lr_decay_epochs,
        lr_decay_factor=float(kv.get("decay_factor", cfg.lr_decay_factor)),
        attack=attack,
        sn_clip=float(kv["sn.clip"]) if kv.get("sn.clip", "none").lower() != "none" else None,
        seed=seed,
        dataset=kv.get("dataset", cfg.dataset),
    )


def load_train_config(path) -> TrainConfig:
    return train_config_from_kv(parse_kv(Path(path).read_text()))
