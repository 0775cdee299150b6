import datetime as dt
import json

import pytest

from trendlab.data import SplitSpec, SynthConfig, align, make_samples, split, synthesize
from trendlab.errors import ConfigurationError
from trendlab.evaluation import evaluate
from trendlab.models import ModelConfig
from trendlab.sweep import PAPER_LOOKBACKS, paper_grid, parse_grid, prediction_grid, sweep
from trendlab.training import RunSpec, TrainConfig, run_once

SPLIT = SplitSpec((dt.date(2000, 1, 1), dt.date(2000, 9, 30)), (dt.date(2000, 10, 1), dt.date(2001, 6, 30)))


@pytest.fixture(scope="module")
def panel():
    target, factors = synthesize(SynthConfig(n_days=300, n_factors=2), 0)
    return align(target, factors)


def test_prediction_grids():
    assert prediction_grid(5) == [1, 2, 3, 4, 5]
    assert prediction_grid(10) == list(range(1, 11))
    assert prediction_grid(15) == [1, 5, 10, 15]
    assert prediction_grid(20) == [1, 5, 10, 15, 20]
    assert prediction_grid(30) == [1, 5, 10, 15, 20, 25, 30]
    assert prediction_grid(60) == [1] + list(range(5, 61, 5))
    assert prediction_grid(12) == [1, 5, 10, 12]


def test_paper_grid():
    g = paper_grid()
    assert sorted({p for p, _ in g}) == list(PAPER_LOOKBACKS) == [5, 10, 15, 20, 30, 60]
    assert (60, 40) in g
    assert len(g) == 5 + 10 + 4 + 5 + 7 + 13
    assert parse_grid("paper") == g


def test_parse_grid_forms():
    assert parse_grid("60:40") == [(60, 40)]
    assert parse_grid("60:1,5,40") == [(60, 1), (60, 5), (60, 40)]
    assert parse_grid("10:1-3") == [(10, 1), (10, 2), (10, 3)]
    assert parse_grid("5") == [(5, q) for q in range(1, 6)]
    assert parse_grid("5;15:1") == [(5, q) for q in range(1, 6)] + [(15, 1)]
    for bad in ("", "x", "5:0", "a:b"):
        with pytest.raises(ConfigurationError):
            parse_grid(bad)


def test_sweep_p5_has_five_cells_per_kind(panel):
    t = sweep(parse_grid("5"), ["mlp", "cnn1d"], panel, SPLIT, TrainConfig(max_epochs=1))
    assert [(c["kind"], c["lookback"], c["horizon"]) for c in t.cells] == \
        [(k, 5, q) for k in ("mlp", "cnn1d") for q in range(1, 6)]
    assert all(c["status"] == "ok" for c in t.cells)


def test_sweep_flags_infeasible(panel):
    with pytest.warns(UserWarning, match="too short"):
        t = sweep([(5, 1), (400, 1), (2, 1)], ["mlp", "cnn1d"], panel, SPLIT, TrainConfig(max_epochs=1))
    status = {(c["kind"], c["lookback"]): c["status"] for c in t.cells}
    assert status[("mlp", 5)] == "ok" and status[("mlp", 400)] == "infeasible"
    assert status[("cnn1d", 2)] == "infeasible"           # two size-3 convolutions need p >= 5
    assert len(t.ok_cells()) == 3


def test_single_cell_equals_plain_run(panel):
    cfg = TrainConfig(max_epochs=3)
    t = sweep([(10, 5)], ["attention"], panel, SPLIT, cfg)
    tr, va, te = split(make_samples(panel, 10, 5), SPLIT)
    _, _, rep = run_once(RunSpec(ModelConfig("attention", 10, panel.n_factors), cfg, tr, va, te))
    (cell,) = t.cells
    assert cell["mean_hit_ratio"] == rep.hit_ratio
    assert cell["runs"][0]["report"] == rep.summary()


def test_sweep_repeats_table_and_json(panel):
    t = sweep([(5, 2)], ["mlp"], panel, SPLIT, TrainConfig(max_epochs=2), repeats=3)
    assert "std" in t.table().splitlines()[0]
    d = json.loads(t.to_json())
    assert d["schema"] == "TRENDLAB-EVAL v1" and d["kind"] == "sweep" and d["repeats"] == 3
    assert len(d["cells"][0]["runs"]) == 3
    assert "std" not in sweep([(5, 2)], ["mlp"], panel, SPLIT, TrainConfig(max_epochs=1)).table().splitlines()[0]


def test_sweep_parallel_same_table(panel):
    args = ([(5, 1), (5, 2)], ["mlp"], panel, SPLIT, TrainConfig(max_epochs=2))
    assert sweep(*args, jobs=2).to_json() == sweep(*args, jobs=1).to_json()
