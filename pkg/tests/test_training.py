import math
from dataclasses import replace

import numpy as np
import pytest

from trendlab.data import separable_samples
from trendlab.errors import ConfigurationError, DimensionError, TrainingAborted
from trendlab.evaluation import evaluate
from trendlab.models import KINDS, Model, ModelConfig
from trendlab.training import (RunManifest, RunSpec, TrainConfig, adam_step, clip_global_norm, repeat_runs,
                               run_once, sgd_step, train)


def toy_sets(n_train=20, n_val=20, p=4, F=2, seed=0):
    s = separable_samples(n_train + n_val, p, F, seed=seed)
    return s[:n_train], s[n_train:]


# -- optimizers --------------------------------------------------------------------

def test_adam_zero_grad_no_change():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, {}, 0.1)
    assert p["w"].tolist() == [1.0, -2.0]


def test_adam_first_step_magnitude_lr():
    p = {"w": np.array([1.0, 1.0, 1.0])}
    g = np.array([0.3, -2.0, 1e-3])
    adam_step(p, {"w": g}, {}, 0.01)
    step = p["w"] - 1.0
    assert np.allclose(step, -np.sign(g) * 0.01, rtol=1e-4)


def test_adam_groups_independent():
    p = {"a": np.array([1.0]), "b": np.array([2.0])}
    state = {}
    adam_step(p, {"a": np.array([0.5])}, state, 0.1)
    assert p["b"].tolist() == [2.0] and "b" not in state
    q = {"a": np.array([1.0])}
    adam_step(q, {"a": np.array([0.5])}, {}, 0.1)
    assert p["a"].tolist() == q["a"].tolist()


def test_adam_shape_mismatch():
    with pytest.raises(DimensionError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, {}, 0.1)
    with pytest.raises(DimensionError):
        sgd_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, 0.1)


def test_adam_matches_textbook_two_steps():
    w = np.array([0.5])
    p = {"w": w.copy()}
    state = {}
    m = v = 0.0
    for t, g in enumerate([0.2, -0.1], start=1):
        adam_step(p, {"w": np.array([g])}, state, 0.05)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.05 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert p["w"][0] == pytest.approx(w[0], abs=1e-15)


def test_clip_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_global_norm(g, 1.0) == 5.0
    assert np.allclose([g["a"][0], g["b"][0]], [0.6, 0.8])
    g = {"a": np.array([0.3])}
    clip_global_norm(g, 1.0)
    assert g["a"][0] == 0.3


# -- config ---------------------------------------------------------------------------

@pytest.mark.parametrize("bad", [dict(learning_rate=0), dict(batch_size=0), dict(patience=-1),
                                 dict(optimizer="rmsprop"), dict(loss="mse"), dict(max_epochs=0)])
def test_train_config_validation(bad):
    with pytest.raises(ConfigurationError):
        TrainConfig(**bad).validate()


def test_loss_binding():
    assert TrainConfig().resolved_loss("weighted_attention") == "weighted_ce"
    assert TrainConfig().resolved_loss("attention") == "ce"
    assert TrainConfig(loss="ce").resolved_loss("weighted_attention") == "ce"


def test_empty_sets_rejected():
    tr, va = toy_sets()
    with pytest.raises(ConfigurationError):
        train(Model(ModelConfig.toy("mlp", n_factors=2)), tr, [])


# -- train ---------------------------------------------------------------------------

def test_separable_toy_reaches_095():
    tr, va = toy_sets()
    m = Model(ModelConfig("mlp", 4, 2))
    m, man = train(m, tr, va, TrainConfig(max_epochs=200, patience=200))
    best = man.history[man.best_epoch - 1]
    assert max(h["train_hit_ratio"] for h in man.history) >= 0.95
    assert best["val_hit_ratio"] == man.best_val_hit_ratio


@pytest.mark.parametrize("kind", KINDS)
def test_loss_decreases_by_epoch_50(kind):
    tr, va = toy_sets()
    m = Model(ModelConfig(kind, 4, 2, conv_layers=((2, 32), (2, 64))))
    _, man = train(m, tr, va, TrainConfig(max_epochs=50, patience=100))
    assert man.history[49]["train_loss"] < man.history[0]["train_loss"]


def test_patience_zero_one_epoch_past_best():
    tr, va = toy_sets(seed=2)
    _, man = train(Model(ModelConfig("mlp", 4, 2)), tr, va, TrainConfig(max_epochs=300, patience=0))
    assert len(man.history) == man.best_epoch + 1 or len(man.history) == 300


@pytest.mark.parametrize("patience", [0, 3, 7])
def test_stop_rule(patience):
    tr, va = toy_sets(seed=3)
    _, man = train(Model(ModelConfig("mlp", 4, 2)), tr, va, TrainConfig(max_epochs=400, patience=patience))
    hist = [h["val_hit_ratio"] for h in man.history]
    if len(hist) < 400:
        assert len(hist) - man.best_epoch == patience + 1
    assert man.best_val_hit_ratio == max(hist)
    # earliest epoch wins ties
    assert man.best_epoch == hist.index(max(hist)) + 1


def test_returned_model_holds_best_parameters():
    tr, va = toy_sets(seed=4)
    m, man = train(Model(ModelConfig("mlp", 4, 2)), tr, va, TrainConfig(max_epochs=60, patience=60))
    assert evaluate(m, va).hit_ratio == man.best_val_hit_ratio


def test_training_deterministic():
    tr, va = toy_sets(seed=5)
    out = []
    for _ in range(2):
        m, man = train(Model(ModelConfig("attention", 4, 2, seed=1)), tr, va, TrainConfig(max_epochs=8, seed=3))
        out.append((man.to_json(), {k: a.tobytes() for k, a in m.state_arrays().items()}))
    assert out[0] == out[1]


def test_input_scale_recorded():
    tr, va = toy_sets()
    m, man = train(Model(ModelConfig("mlp", 4, 2)), tr, va, TrainConfig(max_epochs=2))
    X = np.stack([s.window for s in tr])
    assert m.input_scale == man.input_scale == 1.0 / float(X.std())
    m2, _ = train(Model(ModelConfig("mlp", 4, 2)), tr, va, TrainConfig(max_epochs=2, normalize_inputs=False))
    assert m2.input_scale == 1.0


def test_sgd_runs():
    tr, va = toy_sets()
    _, man = train(Model(ModelConfig("mlp", 4, 2)), tr, va, TrainConfig(optimizer="sgd", max_epochs=3,
                                                                        learning_rate=0.1))
    assert man.status == "complete" and len(man.history) == 3


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_non_finite_aborts_with_manifest():
    tr, va = toy_sets()
    m = Model(ModelConfig("mlp", 4, 2))
    for k in ("dense0", "dense1", "dense2"):
        m.layers[k].W.data[...] = 1e200   # activations overflow to inf by the third layer
    with pytest.raises(TrainingAborted) as exc:
        train(m, tr, va, TrainConfig(max_epochs=3, normalize_inputs=False))
    man = exc.value.manifest
    assert man.status == "aborted" and "epoch 1" in man.error


def test_manifest_roundtrip(tmp_path):
    tr, va = toy_sets()
    _, man = train(Model(ModelConfig("mlp", 4, 2)), tr, va, TrainConfig(max_epochs=2))
    man.save(tmp_path / "m.json")
    back = RunManifest.load(tmp_path / "m.json")
    assert back.to_json() == man.to_json()
    assert '"schema": "TRENDLAB-RUN v1"' in man.to_json()
    assert man.loss == "ce" and man.n_train == 20 and man.n_val == 20


# -- repeat_runs ------------------------------------------------------------------------

def make_spec(seed=0, **train_kw):
    s = separable_samples(90, 4, 2, seed=seed)
    cfg = TrainConfig(max_epochs=4, **train_kw)
    return RunSpec(ModelConfig("mlp", 4, 2), cfg, s[:40], s[40:60], s[60:], name="toy")


def test_repeat_one_equals_single_run():
    spec = make_spec()
    (agg,) = repeat_runs([spec], 1)
    _, _, report = run_once(spec)
    assert agg["mean_hit_ratio"] == report.hit_ratio and agg["std_hit_ratio"] == 0.0


def test_forced_identical_seeds_zero_std():
    (agg,) = repeat_runs([make_spec()], 3, vary_seed=False)
    assert agg["std_hit_ratio"] == 0.0 and agg["n_ok"] == 3


def test_five_repeats_finite_std():
    (agg,) = repeat_runs([make_spec()], 5)
    hits = [r["test_hit_ratio"] for r in agg["runs"]]
    assert agg["std_hit_ratio"] == pytest.approx(float(np.std(hits)), abs=0)
    assert math.isfinite(agg["std_hit_ratio"])
    assert [r["offset"] for r in agg["runs"]] == [0, 1, 2, 3, 4]


def test_parallel_matches_serial():
    specs = [make_spec(0), make_spec(1)]
    assert repeat_runs(specs, 2, jobs=2) == repeat_runs(specs, 2, jobs=1)


def test_failed_runs_recorded():
    bad = replace(make_spec(), val_samples=[])
    agg = repeat_runs([bad, make_spec()], 2)
    assert agg[0]["n_failed"] == 2 and agg[0]["mean_hit_ratio"] is None
    assert "ConfigurationError" in agg[0]["runs"][0]["error"]
    assert agg[1]["n_ok"] == 2
    with pytest.raises(ConfigurationError):
        repeat_runs([make_spec()], 0)
