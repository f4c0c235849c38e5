import csv
import json

import numpy as np
import pytest

from arlab.cli import main
from arlab.diagnostics import read_histogram_csv
from arlab.ladder import SUMMARY_COLUMNS, read_summary_csv
from arlab.losses import read_margins_csv
from arlab.model import load_checkpoint, load_metadata

TRAIN = """
widths = 8 12 3
dataset = {data}
epochs = 2
batch = 32
lr = 0.05
decay_epochs = 1
adv.eps = 0.05
adv.steps = 3
"""
TINY = TRAIN + """ladder.eps = {eps}
ladder.seeds = {seeds}
bound.samples = 8
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["--output-dir", str(root / "data"), "gen-data", "--classes", "3", "--dim", "8",
                 "--per-class", "40", "--signal-dims", "4"]) == 0
    return root


def write_cfg(root, name, eps="0", seeds="0"):
    p = root / name
    p.write_text(TINY.format(data=root / "data", eps=eps, seeds=seeds))
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert len({len(r) for r in rows}) == 1, "field count must be constant"
    return rows


def test_gen_data(workdir):
    assert (workdir / "data" / "train.ard").exists() and (workdir / "data" / "test.ard").exists()


def test_train_writes_checkpoint_and_log(workdir):
    cfg = workdir / "train.cfg"
    cfg.write_text(TRAIN.format(data=workdir / "data"))
    assert main(["--output-dir", str(workdir / "t"), "train", "--config", str(cfg), "--out", "m.ckpt"]) == 0
    net = load_checkpoint(workdir / "t" / "m.ckpt")
    assert net.widths == [8, 12, 3]
    assert load_metadata(workdir / "t" / "m.ckpt")["ar_strength_255"] == pytest.approx(12.75)
    rows = read_csv(workdir / "t" / "log.csv")
    assert rows[0] == ["epoch", "train_loss", "test_loss", "train_err", "test_err", "adv_acc"] and len(rows) == 3


def test_single_cell_ladder_and_diagnose(workdir):
    out = workdir / "l1"
    assert main(["--output-dir", str(out), "ladder", "--config", str(write_cfg(workdir, "l1.cfg"))]) == 0
    rows = read_summary_csv(out / "ladder_summary.csv")
    assert len(rows) == 1 and rows[0]["status"] == "ok"
    assert read_csv(out / "ladder_summary.csv")[0] == SUMMARY_COLUMNS
    cell = out / "eps0_seed0"
    assert sorted(p.name for p in cell.glob("*.ckpt")) == ["model.ckpt"]

    dg = workdir / "diag"
    data = workdir / "data"
    assert main(["--output-dir", str(dg), "diagnose", "--ckpt", str(cell / "model.ckpt"),
                 "--train", str(data / "train.ard"), "--test", str(data / "test.ard"), "--gamma", "0.5"]) == 0
    rep = json.loads((dg / "report.json").read_text())
    ge = rep["ge"]
    margins = read_margins_csv(dg / "margins.csv")
    by = {s: [r for r in margins if r["split"] == s] for s in ("train", "test")}
    loss = {s: np.mean([r["ce_loss"] for r in by[s]]) for s in by}
    err = {s: np.mean([not r["correct"] for r in by[s]]) for s in by}
    assert ge["loss_gap"] == pytest.approx(loss["test"] - loss["train"], abs=1e-12)
    assert ge["err_gap"] == pytest.approx(err["test"] - err["train"], abs=1e-12)
    assert ge["loss_gap"] == pytest.approx(ge["test_loss"] - ge["train_loss"], abs=1e-15)
    for name in ("hist_margin.csv", "hist_prob.csv", "hist_loss.csv"):
        h = read_histogram_csv(dg / name)
        assert h.total == len(by["test"])
        assert read_csv(dg / name)[0] == ["bin_lo", "bin_hi", "count"]
    assert read_csv(dg / "spectra.csv")[0] == ["layer", "index", "sigma"]


def test_ladder_is_bitwise_reproducible(workdir):
    cfg = write_cfg(workdir, "l2.cfg", eps="0 0.05", seeds="0 1")
    outs = [workdir / "ra", workdir / "rb"]
    for o in outs:
        assert main(["--output-dir", str(o), "ladder", "--config", str(cfg)]) == 0
    a, b = outs
    assert (a / "ladder_summary.csv").read_bytes() == (b / "ladder_summary.csv").read_bytes()
    ckpts = sorted(p.relative_to(a) for p in a.rglob("model.ckpt"))
    assert len(ckpts) == 4
    assert all((a / c).read_bytes() == (b / c).read_bytes() for c in ckpts)
    rows = read_summary_csv(a / "ladder_summary.csv")
    assert [(r["eps"], r["seed"]) for r in rows] == [(0, 0), (0, 1), (0.05, 0), (0.05, 1)]
    assert rows[2]["eps_255"] == pytest.approx(12.75)


def test_trace_attack_bound(workdir):
    ckpt = workdir / "l1" / "eps0_seed0" / "model.ckpt"
    test = workdir / "data" / "test.ard"
    out = workdir / "misc"
    assert main(["--output-dir", str(out), "trace", "--ckpt", str(ckpt), "--data", str(test),
                 "--i", "0", "--j", "1", "--layer", "1"]) == 0
    seg = read_csv(out / "segments.csv")
    assert seg[0] == ["j", "s_j", "e_j", "per_segment_norm"]
    assert float(seg[1][1]) == 0.0 and float(seg[-1][2]) == 1.0
    lem = json.loads((out / "lemma1.json").read_text())
    assert {"lhs", "rhs", "rel_err"} <= set(lem)
    assert main(["--output-dir", str(out), "attack", "--ckpt", str(ckpt), "--data", str(test),
                 "--method", "fgsm", "--eps", "0.03"]) == 0
    att = json.loads((out / "attack.json").read_text())
    assert att["eps_255"] == pytest.approx(7.65)
    assert main(["--output-dir", str(out), "bound", "--ckpt", str(ckpt), "--data", str(test), "--gamma", "1",
                 "--eps", "1", "--cx", "1", "--k", "1", "--eta", "0.5", "--sample-size", "5"]) == 0
    bd = json.loads((out / "bound.json").read_text())
    assert bd["n_probes"] == 5 and bd["v_is_estimate"] is True


def test_usage_errors(workdir, capsys):
    assert main([]) == 2
    assert main(["train", "--bogus"]) == 2
    assert main(["--output-dir", str(workdir), "diagnose", "--ckpt", "missing.ckpt", "--gamma", "1"]) == 2
    assert main(["frobnicate"]) == 2
    bad = workdir / "bad.cfg"
    bad.write_text("nonsense_key = 1\n")
    assert main(["--output-dir", str(workdir / "x"), "ladder", "--config", str(bad)]) == 1
    assert "usage" in capsys.readouterr().err


def test_partial_ladder_failure_is_recorded(workdir):
    cfg = workdir / "fail.cfg"
    # widths that do not fit the 8-dim data make every cell fail
    cfg.write_text(TINY.format(data=workdir / "data", eps="0 0.05", seeds="0").replace("widths = 8 12 3",
                                                                                      "widths = 9 12 3"))
    out = workdir / "fail"
    assert main(["--output-dir", str(out), "ladder", "--config", str(cfg)]) == 1
    rows = read_summary_csv(out / "ladder_summary.csv")
    assert len(rows) == 2 and all(r["status"].startswith("error") for r in rows)
