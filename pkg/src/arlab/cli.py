"""``arlab`` command line: train, attack, diagnose, trace, bound, ladder, gen-data.

Output paths are resolved against ``--output-dir``. Input paths are taken
as given, falling back to ``--output-dir`` when they do not exist relative
to the working directory.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, adversarial_accuracy, attack_batch
from .data import Dataset, gen_blobs, gen_two_moons, load_dataset, load_idx, save_dataset, split_dataset
from .diagnostics import BoundInputs, bound_evaluate
from .errors import UndefinedMetricError
from .geometry import trace_segment, verify_lemma1
from .ladder import _jsonable, diagnose, load_ladder_config, resolve_dataset, run_ladder
from .losses import margins
from .model import load_checkpoint, logits_batch, save_checkpoint
from .numerics import SeededRng
from .training import load_train_config, train_adversarial, write_log_csv

log = logging.getLogger("arlab")


class UsageError(Exception):
    pass


def _in(args, p: str) -> Path:
    path = Path(p)
    if path.exists():
        return path
    alt = Path(args.output_dir) / path
    if alt.exists():
        return alt
    raise UsageError(f"no such file: {p}")


def _out(args, p: str) -> Path:
    path = Path(args.output_dir) / p
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _data(args, spec: str) -> Dataset:
    """An ARD1 file, or ``blobs``/``moons`` with an optional ``:train``/``:test`` suffix."""
    name, _, part = spec.partition(":")
    if name in ("blobs", "moons"):
        if part not in ("", "train", "test"):
            raise UsageError(f"bad dataset split {part!r}")
        train, test = resolve_dataset(name, 0)
        return test if part == "test" else train
    return load_dataset(_in(args, spec))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


# -- subcommands ------------------------------------------------------------

def cmd_train(args) -> None:
    cfg = load_train_config(_in(args, args.config))
    train, test = resolve_dataset(cfg.dataset, args.data_seed)
    net, rows = train_adversarial(cfg, train, test)
    ckpt = _out(args, args.out)
    save_checkpoint(net, ckpt, {"train_config": cfg.to_dict(), "ar_strength": cfg.attack.epsilon,
                                "ar_strength_255": 255 * cfg.attack.epsilon})
    write_log_csv(rows, ckpt.parent / "log.csv")


def cmd_attack(args) -> None:
    net = load_checkpoint(_in(args, args.ckpt))
    data = _data(args, args.data)
    cfg = AttackConfig(args.method, args.eps, args.alpha, args.steps, not args.no_random_start, args.seed)
    x_adv = attack_batch(net, data.inputs, data.labels, cfg, SeededRng(cfg.seed))
    m_clean = margins(logits_batch(net, data.inputs), data.labels)
    m_adv = margins(logits_batch(net, x_adv), data.labels)
    try:
        acc = adversarial_accuracy(net, data, cfg)
    except UndefinedMetricError:
        acc = float("nan")
    with open(_out(args, "attack.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "label", "margin_clean", "margin_adv", "success", "linf"])
        for i in range(len(data)):
            w.writerow([i, int(data.labels[i]), repr(float(m_clean[i])), repr(float(m_adv[i])),
                        int(m_clean[i] > 0 and m_adv[i] <= 0),
                        repr(float(np.max(np.abs(x_adv[i] - data.inputs[i]))))])
    _write_json(_out(args, "attack.json"), {"method": cfg.method, "eps": cfg.epsilon, "eps_255": cfg.epsilon_255,
                                            "alpha": cfg.step_size, "steps": cfg.steps, "seed": cfg.seed,
                                            "adv_acc": acc, "clean_err": float(np.mean(m_clean <= 0))})


def cmd_diagnose(args) -> None:
    net = load_checkpoint(_in(args, args.ckpt))
    train, test = _data(args, args.train), _data(args, args.test)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    diagnose(net, train, test, args.gamma, out, args.bins)


def cmd_trace(args) -> None:
    net = load_checkpoint(_in(args, args.ckpt))
    data = _data(args, args.data)
    n = len(data)
    if not (0 <= args.i < n and 0 <= args.j < n):
        raise UsageError(f"sample index out of range 0..{n - 1}")
    x, x2 = data.inputs[args.i], data.inputs[args.j]
    dec = trace_segment(net, x, x2, args.layer)
    chk = verify_lemma1(net, x, x2, args.layer)
    with open(_out(args, "segments.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "s_j", "e_j", "per_segment_norm"])
        for j, ((s, e), nrm) in enumerate(zip(dec.breakpoints, dec.per_segment_norm)):
            w.writerow([j, repr(s), repr(e), repr(float(nrm))])
    _write_json(_out(args, "lemma1.json"), chk._asdict())
    print(f"lhs={chk.lhs!r} rhs={chk.rhs!r} rel_err={chk.rel_err!r} chord_rel_err={chk.chord_rel_err!r} "
          f"segments={chk.n_segments}")


def cmd_bound(args) -> None:
    net = load_checkpoint(_in(args, args.ckpt))
    data = _data(args, args.data)
    inputs = BoundInputs(args.gamma, args.eps, args.cx, args.k, len(data), args.eta)
    rep = bound_evaluate(net, data, inputs, sample_size=args.sample_size or None, seed=args.seed)
    _write_json(_out(args, "bound.json"), rep.to_dict())


def cmd_ladder(args) -> None:
    cfg = load_ladder_config(_in(args, args.config))
    if args.eps is not None:
        cfg = replace(cfg, ar_strengths=sorted(args.eps))
    if args.seeds is not None:
        cfg = replace(cfg, seeds=list(args.seeds))
    rows = run_ladder(cfg, args.output_dir)
    failed = [r for r in rows if r["status"] != "ok"]
    if failed:
        raise RuntimeError(f"{len(failed)} ladder cell(s) failed; see ladder_summary.csv")


def cmd_gen_data(args) -> None:
    rng = SeededRng(args.seed)
    if args.kind == "blobs":
        full = gen_blobs(args.classes, args.dim, args.per_class, args.separation, args.std, rng,
                         signal_dims=args.signal_dims)
    elif args.kind == "moons":
        full = gen_two_moons(args.per_class, args.noise, rng)
    else:
        if not (args.images and args.labels):
            raise UsageError("--kind idx needs --images and --labels")
        full = load_idx(_in(args, args.images), _in(args, args.labels))
    train, test = split_dataset(full, args.train_fraction, rng.child(2))
    save_dataset(train, _out(args, "train.ard"))
    save_dataset(test, _out(args, "test.ard"))


# -- parser -----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="arlab", description="Adversarial-robustness generalization lab.")
    p.add_argument("--output-dir", default=".", help="base directory for all outputs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", help="adversarially train one network")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--data-seed", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("attack", help="attack a dataset and report adversarial accuracy")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", default="blobs:test")
    s.add_argument("--method", choices=["fgsm", "pgd"], default="pgd")
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--alpha", type=float, default=None)
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-random-start", action="store_true")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("diagnose", help="GE gaps, spectra, margin/probability/loss histograms")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--train", default="blobs:train")
    s.add_argument("--test", default="blobs:test")
    s.add_argument("--gamma", type=float, required=True)
    s.add_argument("--bins", type=int, default=61)
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("trace", help="linear-region decomposition of a segment between two samples")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", default="blobs:test")
    s.add_argument("--i", type=int, required=True)
    s.add_argument("--j", type=int, required=True)
    s.add_argument("--layer", type=int, required=True)
    s.set_defaults(func=cmd_trace)

    s = sub.add_parser("bound", help="evaluate the margin/covering generalization bound")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", default="blobs:train")
    s.add_argument("--gamma", type=float, required=True)
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--cx", type=float, required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--eta", type=float, required=True)
    s.add_argument("--sample-size", type=int, default=256, help="0 probes every sample")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_bound)

    s = sub.add_parser("ladder", help="train and diagnose one network per (eps, seed)")
    s.add_argument("--config", required=True)
    s.add_argument("--eps", type=float, nargs="+", default=None, help="override ladder.eps")
    s.add_argument("--seeds", type=int, nargs="+", default=None, help="override ladder.seeds")
    s.set_defaults(func=cmd_ladder)

    s = sub.add_parser("gen-data", help="write train.ard / test.ard")
    s.add_argument("--kind", choices=["blobs", "moons", "idx"], default="blobs")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--classes", type=int, default=10)
    s.add_argument("--dim", type=int, default=64)
    s.add_argument("--per-class", type=int, default=600)
    s.add_argument("--separation", type=float, default=4.0)
    s.add_argument("--std", type=float, default=1.0)
    s.add_argument("--signal-dims", type=int, default=6)
    s.add_argument("--noise", type=float, default=0.1, help="moons noise std")
    s.add_argument("--images")
    s.add_argument("--labels")
    s.add_argument("--train-fraction", type=float, default=5 / 6)
    s.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"arlab: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"arlab: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"arlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
