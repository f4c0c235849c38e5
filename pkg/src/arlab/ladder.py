"""Experiment ladder: one adversarially trained network per (epsilon, seed),
each followed by the full diagnostic pass."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, adversarial_accuracy
from .data import Dataset, default_blobs, gen_two_moons, load_dataset, split_dataset
from .diagnostics import (BoundInputs, bound_evaluate, ge_report, loss_variation, margin_distribution,
                          probability_and_loss_histograms, singular_spectra_report, write_histogram_csv,
                          write_spectra_csv)
from .errors import InvalidConfigError, UndefinedMetricError
from .losses import margins, write_margins_csv
from .model import Network, logits_batch, save_checkpoint
from .numerics import SeededRng
from .training import TRAIN_KEYS, TrainConfig, _floats, _ints, parse_kv, train_adversarial, train_config_from_kv, write_log_csv

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["eps", "eps_255", "seed", "train_loss", "test_loss", "loss_gap", "train_err", "test_err",
                   "err_gap", "adv_acc", "margin_iqr", "margin_median", "mean_sv_std", "spectral_complexity",
                   "loss_variation_mean", "u_min", "bound", "status"]

LADDER_KEYS = {"ladder.eps", "ladder.seeds", "eval.eps", "probe.eps", "gamma", "bound.eps", "bound.cx",
               "bound.k", "bound.eta", "bound.samples", "hist.bins", "data.seed"}


@dataclass
class LadderConfig:
    base: TrainConfig = field(default_factory=TrainConfig)
    ar_strengths: list[float] = field(default_factory=lambda: [0.0, 0.05, 0.1, 0.2])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    eval_eps: float = 0.1        # adversarial accuracy column
    probe_eps: float = 0.02      # loss-variation probe
    gamma: float | None = None   # None: median training margin of the smallest-eps net of the same seed
    bound_eps: float = 0.1
    bound_cx: float = 1.0
    bound_k: int = 1
    bound_eta: float = 0.05
    bound_samples: int = 256
    hist_bins: int = 61
    data_seed: int = 0

    def __post_init__(self):
        if not self.ar_strengths:
            raise InvalidConfigError("ladder needs at least one AR strength")
        if list(self.ar_strengths) != sorted(self.ar_strengths):
            raise InvalidConfigError("AR strengths must be sorted ascending")
        if not self.seeds:
            raise InvalidConfigError("ladder needs at least one seed")


def load_ladder_config(path) -> LadderConfig:
    kv = parse_kv(Path(path).read_text())
    unknown = set(kv) - TRAIN_KEYS - LADDER_KEYS
    if unknown:
        raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
    base = train_config_from_kv({k: v for k, v in kv.items() if k in TRAIN_KEYS})
    d = LadderConfig(base=base)
    return LadderConfig(
        base=base,
        ar_strengths=_floats(kv["ladder.eps"]) if "ladder.eps" in kv else d.ar_strengths,
        seeds=_ints(kv["ladder.seeds"]) if "ladder.seeds" in kv else d.seeds,
        eval_eps=float(kv.get("eval.eps", d.eval_eps)),
        probe_eps=float(kv.get("probe.eps", d.probe_eps)),
        gamma=float(kv["gamma"]) if "gamma" in kv else None,
        bound_eps=float(kv.get("bound.eps", d.bound_eps)),
        bound_cx=float(kv.get("bound.cx", d.bound_cx)),
        bound_k=int(kv.get("bound.k", d.bound_k)),
        bound_eta=float(kv.get("bound.eta", d.bound_eta)),
        bound_samples=int(kv.get("bound.samples", d.bound_samples)),
        hist_bins=int(kv.get("hist.bins", d.hist_bins)),
        data_seed=int(kv.get("data.seed", d.data_seed)),
    )


def resolve_dataset(name: str, seed: int = 0) -> tuple[Dataset, Dataset]:
    """``blobs``, ``moons`` or a directory holding ``train.ard`` and ``test.ard``."""
    if name == "blobs":
        return default_blobs(seed)
    if name == "moons":
        return split_dataset(gen_two_moons(500, 0.1, SeededRng(seed)), 0.8, SeededRng(seed).child(2))
    p = Path(name)
    if p.is_dir():
        return load_dataset(p / "train.ard", "train"), load_dataset(p / "test.ard", "test")
    raise InvalidConfigError(f"unknown dataset {name!r}")


def diagnose(net: Network, train: Dataset, test: Dataset, gamma: float, out_dir: Path | None = None,
             bins: int = 61) -> dict:
    """GE report, spectra and histograms; writes the CSV artifacts when ``out_dir`` is given."""
    ge = ge_report(net, train, test, gamma)
    spectra = singular_spectra_report(net)
    md_test = margin_distribution(net, test, bins=bins, gamma=gamma, split="test")
    md_train = margin_distribution(net, train, bins=bins, gamma=gamma, split="train")
    prob_h, loss_h = probability_and_loss_histograms(net, test)
    report = {
        "ge": ge.to_dict(),
        "spectra": spectra.summary(),
        "margins": {"test_median": md_test.median, "test_iqr": md_test.iqr,
                    "test_frac_within_gamma": md_test.frac_within_gamma,
                    "train_median": md_train.median, "train_iqr": md_train.iqr},
    }
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_margins_csv(md_train.records + md_test.records, out_dir / "margins.csv")
        write_spectra_csv(spectra, out_dir / "spectra.csv")
        write_histogram_csv(md_test.histogram, out_dir / "hist_margin.csv")
        write_histogram_csv(prob_h, out_dir / "hist_prob.csv")
        write_histogram_csv(loss_h, out_dir / "hist_loss.csv")
        (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    report["_spectra"] = spectra
    return report


def median_train_margin(net: Network, train: Dataset) -> float:
    return float(np.median(margins(logits_batch(net, train.inputs), train.labels)))


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def run_cell(cfg: LadderConfig, eps: float, seed: int, train: Dataset, test: Dataset, out_dir: Path | None,
             gamma: float | None = None) -> tuple[dict, Network]:
    attack = replace(cfg.base.attack, epsilon=eps, seed=seed)
    tcfg = replace(cfg.base, attack=attack, seed=seed)
    eval_attack = AttackConfig("pgd", cfg.eval_eps, None, 10, True, seed)
    net, rows = train_adversarial(tcfg, train, test, eval_attack=eval_attack)
    if gamma is None:
        gamma = median_train_margin(net, train)
        if not gamma > 0:
            gamma = 1.0
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        meta = {"seed": seed, "ar_strength": eps, "ar_strength_255": 255 * eps, "gamma": gamma,
                "train_config": tcfg.to_dict()}
        save_checkpoint(net, out_dir / "model.ckpt", meta)
        write_log_csv(rows, out_dir / "log.csv")
    rep = diagnose(net, train, test, gamma, out_dir, cfg.hist_bins)
    spectra = rep.pop("_spectra")
    try:
        adv = adversarial_accuracy(net, test, eval_attack)
    except UndefinedMetricError:
        adv = float("nan")
    lv_mean, lv_std = loss_variation(net, test, AttackConfig("pgd", cfg.probe_eps, None, 10, True, seed))
    binp = BoundInputs(gamma, cfg.bound_eps, cfg.bound_cx, cfg.bound_k, len(train), cfg.bound_eta)
    bound = bound_evaluate(net, train, binp, sample_size=cfg.bound_samples, seed=seed)
    if out_dir is not None:
        (out_dir / "bound.json").write_text(json.dumps(_jsonable(bound.to_dict()), indent=2, sort_keys=True) + "\n")
    ge = rep["ge"]
    row = {
        "eps": eps, "eps_255": 255 * eps, "seed": seed,
        "train_loss": ge["train_loss"], "test_loss": ge["test_loss"], "loss_gap": ge["loss_gap"],
        "train_err": ge["train_err"], "test_err": ge["test_err"], "err_gap": ge["err_gap"],
        "adv_acc": adv, "margin_iqr": rep["margins"]["test_iqr"], "margin_median": rep["margins"]["test_median"],
        "mean_sv_std": float(np.mean(spectra.stds)), "spectral_complexity": spectra.spectral_complexity,
        "loss_variation_mean": lv_mean, "u_min": bound.u_min, "bound": bound.bound, "status": "ok",
        # extra fields, not written to the summary CSV
        "sv_stds": spectra.stds.tolist(), "loss_variation_std": lv_std, "gamma": gamma,
    }
    return row, net


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def run_ladder(cfg: LadderConfig, output_dir=None) -> list[dict]:
    """Train and diagnose every (eps, seed) cell in (eps, seed) order.

    A failing cell is recorded as a row whose ``status`` holds the error;
    the remaining cells still run.
    """
    out = Path(output_dir) if output_dir is not None else None
    train, test = resolve_dataset(cfg.base.dataset, cfg.data_seed)
    gammas: dict[int, float] = {}
    rows = []
    for eps in cfg.ar_strengths:
        for seed in cfg.seeds:
            cell_dir = out / f"eps{eps:g}_seed{seed}" if out is not None else None
            gamma = cfg.gamma if cfg.gamma is not None else gammas.get(seed)
            try:
                row, net = run_cell(cfg, eps, seed, train, test, cell_dir, gamma)
                if cfg.gamma is None and seed not in gammas:
                    gammas[seed] = row["gamma"]
            except Exception as exc:  # recorded per row; the ladder carries on
                log.exception("cell eps=%g seed=%d failed", eps, seed)
                row = {c: float("nan") for c in SUMMARY_COLUMNS}
                row.update(eps=eps, eps_255=255 * eps, seed=seed, status=f"error: {type(exc).__name__}: {exc}")
            rows.append(row)
            log.info("cell eps=%g seed=%d: %s", eps, seed, row["status"])
    if out is not None:
        write_summary_csv(rows, out / "ladder_summary.csv")
    return rows


def write_summary_csv(rows, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in SUMMARY_COLUMNS])


def read_summary_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in SUMMARY_COLUMNS:
            if k == "status":
                continue
            r[k] = int(r[k]) if k == "seed" else float(r[k])
    return rows
