import numpy as np
import pytest

from pufexperts.dataset import generate_crps
from pufexperts.errors import InvalidArgument, TrainingDiverged
from pufexperts.mope import MopeConfig, build_mope
from pufexperts.nn import Dense, Sequential
from pufexperts.puf import parse_spec
from pufexperts.training import BATCH_CAP, TrainConfig, batch_size_for, fit


@pytest.mark.parametrize("n,want", [(1, 1), (19_999, 19_999), (20_000, 20_000), (20_001, 20_000),
                                    (2_400_000, 20_000)])
def test_batch_rule(n, want):
    assert batch_size_for(n) == want
    assert BATCH_CAP == 20_000


def test_batch_rule_rejects_empty():
    with pytest.raises(InvalidArgument):
        batch_size_for(0)


def test_config_validation():
    with pytest.raises(InvalidArgument):
        TrainConfig(val_fraction=0.0)
    with pytest.raises(InvalidArgument):
        TrainConfig(lr=-1)
    for bad in (dict(monitor="auc"), dict(precision="float16"), dict(warmup_epochs=-1)):
        with pytest.raises(InvalidArgument):
            TrainConfig(**bad)


def _data():
    s = generate_crps([parse_spec("apuf", 16, 3)], 4, 800)
    return s.features(), s.responses


def test_training_is_deterministic():
    X, Y = _data()
    runs = []
    for _ in range(2):
        net = build_mope(16, MopeConfig(seed=5))
        res = fit(net, X, Y, TrainConfig(max_epochs=5, seed=2))
        runs.append(([p.copy() for p in net.params], res.val_losses))
    assert runs[0][1] == runs[1][1]
    assert all(np.array_equal(a, b) for a, b in zip(runs[0][0], runs[1][0]))


def test_best_loss_parameters_are_restored():
    X, Y = _data()
    net = build_mope(16)
    res = fit(net, X, Y, TrainConfig(max_epochs=15, lr=0.05, seed=1, monitor="loss"))
    assert res.best_val_loss == pytest.approx(min([res.val_losses[res.best_epoch - 1]] + res.val_losses))


def test_accuracy_monitor_keeps_most_accurate_epoch():
    X, Y = _data()
    net = build_mope(16)
    res = fit(net, X, Y, TrainConfig(max_epochs=30, lr=0.05, seed=1))
    best = res.val_accuracies[res.best_epoch - 1]
    assert best == max(res.val_accuracies)
    # ties go to the lower loss
    tied = [i for i, a in enumerate(res.val_accuracies) if a == best]
    assert res.best_val_loss == min(res.val_losses[i] for i in tied)


@pytest.mark.parametrize("precision", ["float32", "float64"])
def test_network_comes_back_in_float64(precision):
    X, Y = _data()
    net = build_mope(16)
    fit(net, X, Y, TrainConfig(max_epochs=3, precision=precision))
    assert all(p.dtype == np.float64 for p in net.params)


def test_float32_steps_track_float64():
    X, Y = _data()
    accs = []
    for precision in ("float32", "float64"):
        net = build_mope(16, MopeConfig(seed=5))
        accs.append(fit(net, X, Y, TrainConfig(max_epochs=20, precision=precision)).val_accuracies)
    assert np.allclose(accs[0], accs[1], atol=0.02)


def test_warmup_scales_first_update():
    X, Y = _data()
    net = Sequential([Dense(16, 1, "identity", rng=np.random.default_rng(0))])
    before = net.layers[0].W.copy()
    # 800 rows, 40 held out: one full-batch step per epoch
    fit(net, X, Y, TrainConfig(max_epochs=1, lr=0.01, warmup_epochs=10, precision="float64"))
    # Adam's first bias-corrected step moves every weight by ~lr in magnitude
    assert np.max(np.abs(net.layers[0].W - before)) == pytest.approx(0.001, rel=1e-3)


def test_early_stop_and_lr_decay():
    X, Y = _data()
    rng = np.random.default_rng(0)
    Y = rng.integers(0, 2, Y.shape)  # noise labels: validation never improves for long
    net = Sequential([Dense(16, 8, "relu", rng=rng), Dense(8, 1, "identity", rng=rng)])
    cfg = TrainConfig(max_epochs=500, lr=0.05, plateau_patience=3, early_stop_patience=7, warmup_epochs=0)
    res = fit(net, X, Y, cfg)
    assert res.epochs < 500
    assert res.epochs - res.best_epoch == 7
    assert res.final_lr < cfg.lr


def test_no_stopping_or_decay_during_warmup():
    X, Y = _data()
    rng = np.random.default_rng(0)
    Y = rng.integers(0, 2, Y.shape)
    net = Sequential([Dense(16, 8, "relu", rng=rng), Dense(8, 1, "identity", rng=rng)])
    cfg = TrainConfig(max_epochs=500, lr=0.05, plateau_patience=3, early_stop_patience=7, warmup_epochs=20)
    res = fit(net, X, Y, cfg)
    assert res.epochs - max(res.best_epoch, 20) == 7


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises():
    X, Y = _data()
    net = Sequential([Dense(16, 1, "identity", W=np.full((16, 1), 1e308))])
    with pytest.raises(TrainingDiverged):
        fit(net, X, Y, TrainConfig(max_epochs=2))
