"""Measurements on trained networks: spectra, margin/probability/loss
histograms, generalization gaps, loss variation under attack, and the
margin-based generalization bound."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .attacks import AttackConfig, pgd_iterates, random_starts
from .errors import InvalidConfigError, InvalidInputError
from .geometry import boundary_distance
from .losses import MarginRecord, RampConfig, cross_entropy_batch, margin_records, margins, ramp_loss
from .model import Network, logits_batch
from .numerics import SeededRng, svd

# -- singular spectra -------------------------------------------------------


@dataclass
class LayerSpectrum:
    sigma: np.ndarray
    std: float
    spectral_norm: float
    sigma_min: float


@dataclass
class SpectralReport:
    layers: list[LayerSpectrum]
    spectral_complexity: float

    @property
    def stds(self) -> np.ndarray:
        return np.array([l.std for l in self.layers])

    def summary(self) -> dict:
        return {
            "spectral_complexity": self.spectral_complexity,
            "layers": [
                {"layer": i + 1, "std": l.std, "spectral_norm": l.spectral_norm,
                 "sigma_min": l.sigma_min, "count": int(l.sigma.size)}
                for i, l in enumerate(self.layers)
            ],
        }


def singular_spectra_report(net: Network) -> SpectralReport:
    layers = []
    for i, w in enumerate(net.weights):
        try:
            s = svd(w).sigma
        except ArithmeticError as exc:
            raise type(exc)(f"layer {i + 1}: {exc}") from exc
        layers.append(LayerSpectrum(s, float(np.std(s)), float(s[0]), float(s[-1])))
    sc = float(np.prod([l.spectral_norm for l in layers]))
    return SpectralReport(layers, sc)


def std_shift_summary(weak: SpectralReport, strong: SpectralReport) -> dict:
    """Split layers by whether their singular-value STD dropped from ``weak`` to ``strong``.

    Returns the summed and mean STD change of each group, as magnitudes.
    """
    if len(weak.layers) != len(strong.layers):
        raise InvalidInputError("reports describe networks of different depth")
    diff = weak.stds - strong.stds
    dec, inc = diff[diff > 0], -diff[diff <= 0]
    return {
        "decreased_layers": int(dec.size), "decrease_sum": float(dec.sum()),
        "decrease_mean": float(dec.mean()) if dec.size else 0.0,
        "increased_layers": int(inc.size), "increase_sum": float(inc.sum()),
        "increase_mean": float(inc.mean()) if inc.size else 0.0,
    }


def write_spectra_csv(report: SpectralReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "index", "sigma"])
        for i, l in enumerate(report.layers):
            for j, s in enumerate(l.sigma):
                w.writerow([i + 1, j, repr(float(s))])


# -- histograms -------------------------------------------------------------


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    underflow: int = 0
    overflow: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.underflow + self.overflow

    def rows(self):
        yield (-math.inf, float(self.edges[0]), self.underflow)
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            yield (float(lo), float(hi), int(c))
        yield (float(self.edges[-1]), math.inf, self.overflow)


def histogram(values, bins: int, lo: float, hi: float, closed_right: bool = False) -> Histogram:
    """Fixed-width bins on ``[lo, hi)`` (``[lo, hi]`` if ``closed_right``) plus under/overflow."""
    if bins < 1 or not lo < hi:
        raise InvalidInputError("need bins >= 1 and lo < hi")
    v = np.asarray(values, dtype=np.float64)
    edges = np.linspace(lo, hi, bins + 1)
    under = int(np.sum(v < lo))
    over = int(np.sum(v > hi)) if closed_right else int(np.sum(v >= hi))
    inside = v[(v >= lo) & ((v <= hi) if closed_right else (v < hi))]
    idx = np.floor((inside - lo) / (hi - lo) * bins).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    return Histogram(edges, counts, under, over)


def write_histogram_csv(h: Histogram, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in h.rows():
            w.writerow([repr(lo), repr(hi), c])


def read_histogram_csv(path) -> Histogram:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    edges = [float(r["bin_lo"]) for r in rows[1:-1]] + [float(rows[-1]["bin_lo"])]
    counts = np.array([int(r["count"]) for r in rows[1:-1]])
    return Histogram(np.array(edges), counts, int(rows[0]["count"]), int(rows[-1]["count"]))


@dataclass
class MarginDistribution:
    histogram: Histogram
    records: list[MarginRecord]
    median: float
    q25: float
    q75: float
    frac_within_gamma: float | None

    @property
    def iqr(self) -> float:
        return self.q75 - self.q25


def margin_distribution(net: Network, data, bins: int = 61, range: tuple[float, float] = (-15.0, 15.0),
                        gamma: float | None = None, split: str = "test") -> MarginDistribution:
    if len(data) == 0:
        raise InvalidInputError("margin distribution of an empty dataset")
    recs = margin_records(net, data, split)
    m = np.array([r.margin for r in recs])
    q25, med, q75 = np.percentile(m, [25, 50, 75])
    within = float(np.mean(np.abs(m) < gamma)) if gamma is not None else None
    return MarginDistribution(histogram(m, bins, *range), recs, float(med), float(q25), float(q75), within)


def probability_and_loss_histograms(net: Network, data, bins: int = 10, loss_cap: float = 10.0):
    """Histograms of the true-class softmax probability on [0, 1] and of the CE loss on [0, cap]."""
    if len(data) == 0:
        raise InvalidInputError("histograms of an empty dataset")
    ce, prob = cross_entropy_batch(logits_batch(net, data.inputs), data.labels)
    return histogram(prob, bins, 0.0, 1.0, closed_right=True), histogram(ce, bins, 0.0, loss_cap, closed_right=True)


# -- generalization gaps ----------------------------------------------------


@dataclass
class GeReport:
    train_loss: float
    test_loss: float
    loss_gap: float
    train_err: float
    test_err: float
    err_gap: float
    gamma: float
    ramp_train: float
    ramp_test: float
    ramp_gap: float

    def to_dict(self) -> dict:
        return asdict(self)


def _split_stats(net: Network, data, ramp: RampConfig):
    logits = logits_batch(net, data.inputs)
    m = margins(logits, data.labels)
    ce, _ = cross_entropy_batch(logits, data.labels)
    return float(ce.mean()), float(np.mean(m <= 0)), float(np.mean(ramp_loss(-m, ramp)))


def ge_report(net: Network, train, test, gamma: float) -> GeReport:
    if len(train) == 0 or len(test) == 0:
        raise InvalidInputError("both splits must be non-empty")
    ramp = RampConfig(gamma)
    trl, tre, trr = _split_stats(net, train, ramp)
    tel, tee, ter = _split_stats(net, test, ramp)
    return GeReport(trl, tel, tel - trl, tre, tee, tee - tre, gamma, trr, ter, ter - trr)


# -- loss variation ---------------------------------------------------------


def loss_variation(net: Network, data, cfg: AttackConfig, batch_size: int = 512) -> tuple[float, float]:
    """Mean and population STD over samples of the largest |CE change| along PGD iterates.

    Sample ``i`` starts from ``SeededRng(cfg.seed).child(i)``.
    """
    if cfg.method != "pgd":
        raise InvalidConfigError("loss variation is measured with PGD")
    if len(data) == 0:
        raise InvalidInputError("loss variation of an empty dataset")
    if cfg.epsilon == 0:
        return 0.0, 0.0
    rng = SeededRng(cfg.seed)
    out = np.empty(len(data))
    for b in range(0, len(data), batch_size):
        ids = np.arange(b, min(b + batch_size, len(data)))
        X, y = data.inputs[ids], data.labels[ids]
        base, _ = cross_entropy_batch(logits_batch(net, X), y)
        start = random_starts(X, cfg.epsilon, rng, sample_ids=ids) if cfg.random_start else X.copy()
        best = np.zeros(ids.size)
        for xa in pgd_iterates(net, X, y, cfg, start):
            ce, _ = cross_entropy_batch(logits_batch(net, xa), y)
            best = np.maximum(best, np.abs(ce - base))
        out[ids] = best
    return float(out.mean()), float(out.std())


# -- generalization bound ---------------------------------------------------


@dataclass(frozen=True)
class BoundInputs:
    gamma: float
    epsilon: float
    c_x: float
    k: int
    m: int
    eta: float

    def __post_init__(self):
        if min(self.gamma, self.epsilon, self.c_x) <= 0 or self.k < 1 or self.m < 1:
            raise InvalidConfigError("gamma, epsilon, C_X must be > 0 and k, m >= 1")
        if not 0 < self.eta < 1:
            raise InvalidConfigError("eta must lie in (0, 1)")


def margin_term(u_min: float, gamma: float) -> float:
    return max(0.0, 1.0 - u_min / gamma)


def covering_term(inputs: BoundInputs) -> float:
    k = inputs.k
    return math.sqrt(2 * math.log(2) * inputs.c_x ** k / (inputs.epsilon ** k * inputs.m)
                     + 2 * math.log(1 / inputs.eta) / inputs.m)


@dataclass
class BoundReport:
    sigma_min_list: list[float]
    w_pair_min: float
    v_min_hat: float
    u_min: float
    term1: float
    term2: float
    bound: float
    gamma: float
    n_probes: int
    n_converged: int
    v_unreliable: bool
    degenerate: bool
    min_train_margin: float
    v_is_estimate: bool = True
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def class_row_min_distance(w_last: np.ndarray) -> float:
    """min over class pairs of the l2 distance between rows of the last weight matrix."""
    d = np.linalg.norm(w_last[:, None, :] - w_last[None, :, :], axis=-1)
    iu = np.triu_indices(w_last.shape[0], k=1)
    return float(d[iu].min())


def assemble_bound(sigma_min_list, w_pair_min: float, v_min_hat: float, inputs: BoundInputs):
    """``(u_min, term1, term2, bound)`` from the geometric ingredients."""
    u_min = w_pair_min * float(np.prod(sigma_min_list)) * v_min_hat
    t1 = margin_term(u_min, inputs.gamma)
    t2 = covering_term(inputs)
    return u_min, t1, t2, t1 + t2


def bound_evaluate(net: Network, data, inputs: BoundInputs, sample_size: int | None = 256,
                   seed: int = 0) -> BoundReport:
    """Evaluate the bound, with v_min estimated over a (seeded) subsample of ``data``.

    Each boundary probe over-estimates the distance it measures, so
    ``v_min_hat`` is an estimate and is labelled as such.
    """
    if net.depth < 2:
        raise InvalidInputError("the bound needs at least one hidden layer")
    if len(data) == 0:
        raise InvalidInputError("empty v-estimation set")
    spectra = singular_spectra_report(net)
    sig = [l.sigma_min for l in spectra.layers[:-1]]
    wmin = class_row_min_distance(net.weights[-1])
    idx = np.arange(len(data))
    if sample_size is not None and sample_size < len(data):
        idx = np.sort(SeededRng(seed).permutation(len(data))[:sample_size])
    vs, conv = [], 0
    for i in idx:
        p = boundary_distance(net, data.inputs[i])
        if p.converged:
            conv += 1
            vs.append(p.v)
    notes = []
    unreliable = conv < idx.size
    if unreliable:
        notes.append(f"{idx.size - conv} of {idx.size} boundary probes did not converge")
    v_min = float(min(vs)) if vs else float("nan")
    degenerate = any(s == 0.0 for s in sig)
    if degenerate:
        notes.append("a hidden layer has sigma_min = 0")
        u_min = 0.0
        t1, t2 = margin_term(0.0, inputs.gamma), covering_term(inputs)
        bound = t1 + t2
    elif not vs:
        u_min, t2 = float("nan"), covering_term(inputs)
        t1 = 1.0
        bound = t1 + t2
    else:
        u_min, t1, t2, bound = assemble_bound(sig, wmin, v_min, inputs)
    m_train = margins(logits_batch(net, data.inputs), data.labels)
    return BoundReport(sig, wmin, v_min, u_min, t1, t2, bound, inputs.gamma, int(idx.size), conv,
                       unreliable, degenerate, float(m_train.min()), True, notes)
