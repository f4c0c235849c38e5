"""Untargeted l-infinity FGSM and PGD on inputs living in [0, 1]^d."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidConfigError, InvalidInputError, UndefinedMetricError
from .losses import margins
from .model import Network, input_gradients, logits_batch
from .numerics import SeededRng


@dataclass(frozen=True)
class AttackConfig:
    method: str = "pgd"
    epsilon: float = 0.0
    alpha: float | None = None  # None -> epsilon / 4
    steps: int = 10
    random_start: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("fgsm", "pgd"):
            raise InvalidConfigError(f"unknown attack method {self.method!r}")
        if self.epsilon < 0:
            raise InvalidConfigError("epsilon must be >= 0")
        if self.method == "pgd" and self.steps < 1:
            raise InvalidConfigError("pgd needs steps >= 1")
        if self.alpha is not None and self.alpha <= 0:
            raise InvalidConfigError("alpha must be > 0")

    @property
    def step_size(self) -> float:
        return self.alpha if self.alpha is not None else self.epsilon / 4.0

    @property
    def epsilon_255(self) -> float:
        return 255.0 * self.epsilon


@dataclass
class AttackResult:
    x_adv: np.ndarray
    delta: np.ndarray
    success: bool


def _prepare(net: Network, x, y):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.input_dim:
        raise InvalidInputError(f"input has dimension {x.shape[-1]}, network expects {net.input_dim}")
    return np.atleast_2d(x), np.atleast_1d(np.asarray(y, dtype=np.int64))


def fgsm_batch(net: Network, X, y, epsilon: float) -> np.ndarray:
    X, y = _prepare(net, X, y)
    if epsilon == 0:
        return X.copy()
    g, _ = input_gradients(net, X, y)
    return np.clip(X + epsilon * np.sign(g), 0.0, 1.0)


def random_starts(X: np.ndarray, epsilon: float, rng: SeededRng, sample_ids=None) -> np.ndarray:
    """Uniform per-coordinate start in the epsilon cube, clipped to [0, 1].

    With ``sample_ids`` each row draws from ``rng.child(sample_id)`` so the
    result does not depend on batching.
    """
    if epsilon == 0:
        return X.copy()
    if sample_ids is None:
        noise = rng.uniform(-epsilon, epsilon, X.shape)
    else:
        noise = np.stack([rng.child(int(i)).uniform(-epsilon, epsilon, X.shape[1]) for i in sample_ids])
    return np.clip(X + noise, 0.0, 1.0)


def pgd_iterates(net: Network, X, y, cfg: AttackConfig, start: np.ndarray):
    """Yield each PGD iterate (after step, projection and clipping)."""
    X, y = _prepare(net, X, y)
    eps, alpha = cfg.epsilon, cfg.step_size
    xa = np.asarray(start, dtype=np.float64).copy()
    for _ in range(cfg.steps):
        g, _ = input_gradients(net, xa, y)
        xa = xa + alpha * np.sign(g)
        xa = np.clip(np.clip(xa, X - eps, X + eps), 0.0, 1.0)
        yield xa


def pgd_batch(net: Network, X, y, cfg: AttackConfig, rng: SeededRng | None = None, sample_ids=None) -> np.ndarray:
    X, y = _prepare(net, X, y)
    if cfg.epsilon == 0:
        return X.copy()
    rng = rng if rng is not None else SeededRng(cfg.seed)
    start = random_starts(X, cfg.epsilon, rng, sample_ids) if cfg.random_start else X.copy()
    xa = start
    for xa in pgd_iterates(net, X, y, cfg, start):
        pass
    return xa


def attack_batch(net: Network, X, y, cfg: AttackConfig, rng: SeededRng | None = None, sample_ids=None) -> np.ndarray:
    if cfg.method == "fgsm":
        return fgsm_batch(net, X, y, cfg.epsilon)
    return pgd_batch(net, X, y, cfg, rng, sample_ids)


def _result(net: Network, x: np.ndarray, x_adv: np.ndarray) -> AttackResult:
    before, after = logits_batch(net, np.stack([x, x_adv])).argmax(axis=1)
    return AttackResult(x_adv=x_adv, delta=x_adv - x, success=bool(before != after))


def fgsm(net: Network, x, y: int, cfg: AttackConfig) -> AttackResult:
    if cfg.method != "fgsm":
        raise InvalidConfigError("fgsm called with a non-fgsm config")
    x = np.asarray(x, dtype=np.float64)
    return _result(net, x, fgsm_batch(net, x, [y], cfg.epsilon)[0])


def pgd(net: Network, x, y: int, cfg: AttackConfig) -> AttackResult:
    if cfg.method != "pgd":
        raise InvalidConfigError("pgd called with a non-pgd config")
    x = np.asarray(x, dtype=np.float64)
    return _result(net, x, pgd_batch(net, x, [y], cfg)[0])


def adversarial_accuracy(net: Network, data, cfg: AttackConfig, batch_size: int = 512) -> float:
    """Fraction of originally correct samples that stay correct under attack.

    Sample ``i`` draws its PGD start from ``SeededRng(cfg.seed).child(i)``.
    """
    if len(data) == 0:
        raise InvalidInputError("adversarial accuracy of an empty dataset")
    ok = margins(logits_batch(net, data.inputs), data.labels) > 0
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        raise UndefinedMetricError("no correctly classified samples to attack")
    if cfg.epsilon == 0:
        return 1.0
    rng = SeededRng(cfg.seed)
    survived = 0
    for b in range(0, idx.size, batch_size):
        ids = idx[b:b + batch_size]
        X, y = data.inputs[ids], data.labels[ids]
        xa = attack_batch(net, X, y, cfg, rng, sample_ids=ids)
        survived += int(np.sum(margins(logits_batch(net, xa), y) > 0))
    return survived / idx.size


def with_epsilon(cfg: AttackConfig, epsilon: float) -> AttackConfig:
    return replace(cfg, epsilon=epsilon)
