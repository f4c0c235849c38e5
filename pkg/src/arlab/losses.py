"""Margin operator, ramp loss/risk and cross-entropy with estimated probabilities."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, InvalidInputError
from .model import Network, logits_batch


@dataclass(frozen=True)
class RampConfig:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise InvalidConfigError(f"ramp width gamma must be > 0, got {self.gamma}")


@dataclass
class MarginRecord:
    sample_id: int
    split: str
    logits: np.ndarray
    margin: float
    prob_y: float
    ce_loss: float
    correct: bool


def margin_operator(logits, y: int) -> float:
    s = np.asarray(logits, dtype=np.float64)
    if s.ndim != 1 or s.shape[0] < 2:
        raise InvalidInputError("margin needs at least two classes")
    if not 0 <= y < s.shape[0]:
        raise InvalidInputError(f"label {y} out of range")
    return float(s[y] - np.max(np.delete(s, y)))


def margins(logits: np.ndarray, y) -> np.ndarray:
    """Row-wise margin operator for an (n, C) logit matrix."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    if logits.shape[1] < 2:
        raise InvalidInputError("margin needs at least two classes")
    rows = np.arange(logits.shape[0])
    true = logits[rows, y]
    other = logits.copy()
    other[rows, y] = -np.inf
    return true - other.max(axis=1)


def ramp_loss(r, cfg: RampConfig):
    """0 for r < -gamma, 1 + r/gamma on [-gamma, 0], 1 for r > 0."""
    r = np.asarray(r, dtype=np.float64)
    out = np.clip(1.0 + r / cfg.gamma, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def ramp_risk(net: Network, data, cfg: RampConfig) -> float:
    if len(data) == 0:
        raise InvalidInputError("ramp risk of an empty dataset")
    m = margins(logits_batch(net, data.inputs), data.labels)
    return float(np.mean(ramp_loss(-m, cfg)))


def cross_entropy_and_prob(logits, y: int) -> tuple[float, float]:
    s = np.asarray(logits, dtype=np.float64)
    if not 0 <= y < s.shape[0]:
        raise InvalidInputError(f"label {y} out of range")
    shifted = s - s.max()
    log_prob = shifted[y] - np.log(np.exp(shifted).sum())
    return float(-log_prob), float(np.exp(log_prob))


def cross_entropy_batch(logits: np.ndarray, y) -> tuple[np.ndarray, np.ndarray]:
    """Per-row ``(ce_loss, prob_y)``."""
    logits = np.atleast_2d(logits)
    y = np.asarray(y, dtype=np.int64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_prob = shifted[np.arange(len(y)), y] - np.log(np.exp(shifted).sum(axis=1))
    return -log_prob, np.exp(log_prob)


def margin_records(net: Network, data, split: str) -> list[MarginRecord]:
    logits = logits_batch(net, data.inputs)
    m = margins(logits, data.labels)
    ce, prob = cross_entropy_batch(logits, data.labels)
    return [
        MarginRecord(i, split, logits[i], float(m[i]), float(prob[i]), float(ce[i]), bool(m[i] > 0))
        for i in range(len(m))
    ]


MARGIN_COLUMNS = ["sample_id", "split", "margin", "prob_y", "ce_loss", "correct"]


def write_margins_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MARGIN_COLUMNS)
        for r in records:
            w.writerow([r.sample_id, r.split, repr(r.margin), repr(r.prob_y), repr(r.ce_loss), int(r.correct)])


def read_margins_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["sample_id"] = int(r["sample_id"])
        for k in ("margin", "prob_y", "ce_loss"):
            r[k] = float(r[k])
        r["correct"] = bool(int(r["correct"]))
    return rows
