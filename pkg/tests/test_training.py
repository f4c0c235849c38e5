import numpy as np
import pytest

from arlab.attacks import AttackConfig
from arlab.data import gen_blobs, split_dataset
from arlab.errors import InvalidConfigError, InvalidInputError
from arlab.model import Network
from arlab.numerics import SeededRng, spectral_norm
from arlab.training import (TrainConfig, load_train_config, parse_kv, sgd_momentum_step, spectral_normalize,
                            train_adversarial, train_config_from_kv, write_log_csv)

from conftest import random_net


@pytest.fixture(scope="module")
def blobs():
    d = gen_blobs(3, 8, 60, separation=4.0, std=1.0, rng=SeededRng(0))
    return split_dataset(d, 0.75, SeededRng(1))


def small_cfg(**kw):
    base = dict(widths=[8, 16, 3], epochs=4, batch_size=16, lr=0.05, lr_decay_epochs=[3])
    base.update(kw)
    return TrainConfig(**base)


def test_sgd_step_examples():
    w0 = np.array([[1.0, -2.0]])
    g = np.array([[0.5, 0.25]])
    net = Network([w0.copy()])
    v = [np.zeros_like(w0)]
    sgd_momentum_step(net, [g], v, 0.0, 0.9)
    assert np.array_equal(net.weights[0], w0)
    net = Network([w0.copy()])
    sgd_momentum_step(net, [g], [np.zeros_like(w0)], 0.1, 0.0)
    assert np.allclose(net.weights[0], w0 - 0.1 * g)
    net, v = Network([w0.copy()]), [np.zeros_like(w0)]
    for _ in range(2):
        sgd_momentum_step(net, [g], v, 0.1, 0.9)
    assert np.allclose(net.weights[0], w0 - 0.1 * (g + (0.9 * g + g)), atol=1e-15)
    with pytest.raises(InvalidInputError):
        sgd_momentum_step(net, [g, g], v, 0.1, 0.9)


def test_spectral_normalize_examples():
    net = Network([np.diag([5.0, 1.0]), np.diag([0.5, 0.1])])
    spectral_normalize(net, 1.0)
    assert spectral_norm(net.weights[0]) == pytest.approx(1.0, abs=1e-9)
    assert np.array_equal(net.weights[1], np.diag([0.5, 0.1]))
    r = random_net(3, widths=[10, 20, 20, 5])
    for w in r.weights:
        w *= 4
    spectral_normalize(r, 2.0)
    norms = [spectral_norm(w) for w in r.weights]
    assert max(norms) <= 2 + 1e-9
    assert np.prod(norms) <= 2.0 ** r.depth * (1 + 1e-9)
    with pytest.raises(InvalidConfigError):
        spectral_normalize(r, 0.0)


def test_lr_schedule():
    cfg = TrainConfig()
    assert [cfg.lr_at(e) for e in (0, 24, 25, 34, 35)] == pytest.approx([0.1, 0.1, 0.01, 0.01, 0.001])


def test_standard_training_decreases_loss(blobs):
    train, test = blobs
    _, rows = train_adversarial(small_cfg(epochs=3), train, test)
    losses = [r["train_loss"] for r in rows]
    assert losses[0] > losses[1] > losses[2]
    assert all(np.isnan(r["adv_acc"]) for r in rows)


def test_adversarial_training_is_deterministic(blobs, tmp_path):
    train, test = blobs
    cfg = small_cfg(attack=AttackConfig("pgd", 0.1, steps=3), sn_clip=1.5)
    a, rows = train_adversarial(cfg, train, test)
    b, _ = train_adversarial(cfg, train, test)
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert max(spectral_norm(w) for w in a.weights) <= 1.5 * (1 + 1e-9)
    assert all(0 <= r["adv_acc"] <= 1 for r in rows)
    write_log_csv(rows, tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,test_loss,train_err,test_err,adv_acc"
    assert len(lines) == cfg.epochs + 1


def test_fgsm_training_runs(blobs):
    train, _ = blobs
    net, rows = train_adversarial(small_cfg(epochs=1, attack=AttackConfig("fgsm", 0.05)), train)
    assert np.isfinite(rows[0]["train_loss"])


def test_width_mismatch_rejected(blobs):
    with pytest.raises(InvalidConfigError):
        train_adversarial(small_cfg(widths=[7, 16, 3]), blobs[0])


def test_config_parsing(tmp_path):
    text = """
    # comment
    widths = 8 16 3
    epochs = 2
    adv.method = fgsm
    adv.eps = 0.03
    sn.clip = none
    decay_epochs = 1, 2
    """
    p = tmp_path / "c.cfg"
    p.write_text(text)
    cfg = load_train_config(p)
    assert cfg.widths == [8, 16, 3] and cfg.epochs == 2
    assert cfg.attack.method == "fgsm" and cfg.attack.epsilon == 0.03
    assert cfg.sn_clip is None and cfg.lr_decay_epochs == [1, 2]
    with pytest.raises(InvalidConfigError, match="unknown"):
        train_config_from_kv({"bogus": "1"})
    with pytest.raises(InvalidConfigError):
        parse_kv("no equals sign")
    with pytest.raises(InvalidConfigError):
        train_config_from_kv({"lr": "-1"})
