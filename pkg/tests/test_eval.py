import itertools
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from owrlab.datagen import build_schedule, build_validation_splits, generate_benchmark
from owrlab.errors import ConfigurationError, ContractError, ParseError
from owrlab.eval import (CellConfig, RunResult, StepResult, aggregate, closed_world_accuracy, evaluate_candidate,
                         open_set_accuracy, owr_harmonic, read_results_csv, report_table, run_experiment,
                         validate_hyperparameters, write_results_csv)
from owrlab.owr import UNKNOWN, MethodConfig


# metrics --------------------------------------------------------------------------------------

def test_closed_world_example():
    pred, labels = [0, 1, 2, UNKNOWN, 1], [0, 1, 2, 3, 0]
    assert closed_world_accuracy(pred, labels) == pytest.approx(0.6)


def test_open_set_example():
    assert open_set_accuracy([UNKNOWN] * 7 + [1, 2, 0]) == pytest.approx(0.7)


def test_harmonic_example():
    assert owr_harmonic(0.6, 0.4) == pytest.approx(0.48)
    assert owr_harmonic(0.0, 0.0) == 0.0


def test_metric_contracts():
    with pytest.raises(ContractError):
        closed_world_accuracy([], [])
    with pytest.raises(ContractError):
        open_set_accuracy([])
    with pytest.raises(ContractError):
        closed_world_accuracy([UNKNOWN], [0], with_rejection=False)


@settings(max_examples=80, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_harmonic_lies_between_min_and_mean(a, b):
    h = owr_harmonic(a, b)
    assert min(a, b) - 1e-12 <= h <= (a + b) / 2 + 1e-12
    assert h == pytest.approx(owr_harmonic(b, a))


# runner ---------------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small():
    return {0: generate_benchmark(6, 3, 4, seed=4)}


def tiny_method(variant="deepnno", **kw):
    return MethodConfig.for_variant(variant, hidden=(16,), feature_dim=4, epochs_base=2, epochs_incremental=1, **kw)


def test_base_only_schedule_gives_one_step(small):
    schedule = build_schedule(range(6), 0.5, 3, 0)
    res = run_experiment(CellConfig(tiny_method(), test_domains=(0,)), schedule, small)
    assert len(res[0].steps) == 1 and res[0].steps[0].step == 0


def test_runs_are_deterministic(small, tmp_path):
    schedule = build_schedule(range(6), 0.5, 1, 1)
    cell = CellConfig(tiny_method("bdoc"), "rsda", {"update_frequency": 2}, seed=3, test_domains=(0,))
    a = run_experiment(cell, schedule, small)
    b = run_experiment(cell, schedule, small, checkpoint_dir=tmp_path)
    assert a[0].steps == b[0].steps and len(a[0].steps) == 3


def test_resume_from_checkpoint_matches_uninterrupted_run(small, tmp_path):
    schedule = build_schedule(range(6), 0.5, 1, 1)
    cell = CellConfig(tiny_method("deepnno"), seed=1, test_domains=(0,))
    full = run_experiment(cell, schedule, small)
    run_experiment(cell, schedule, small, checkpoint_dir=tmp_path)
    for p in tmp_path.glob("step_2*"):
        p.unlink()
    resumed = run_experiment(cell, schedule, small, checkpoint_dir=tmp_path)
    assert resumed[0].steps == full[0].steps


def test_missing_class_is_reported(small):
    schedule = build_schedule(range(8), 0.5, 4, 0)
    with pytest.raises(ConfigurationError, match=r"lacks classes \[6, 7\]|lacks classes"):
        run_experiment(CellConfig(tiny_method(), test_domains=(0,)), schedule, small)


def test_missing_domain_is_reported(small):
    with pytest.raises(ConfigurationError, match="domain 2"):
        run_experiment(CellConfig(tiny_method(), test_domains=(0, 2)), build_schedule(range(6), 0.5, 3, 0), small)


def test_metrics_stay_in_unit_interval(small):
    res = run_experiment(CellConfig(tiny_method("nno"), test_domains=(0,)), build_schedule(range(6), 0.5, 2, 1), small)
    for s in res[0].steps:
        for v in (s.closed_world_no_reject, s.closed_world_with_reject, s.open_set_acc, s.owr_h):
            assert 0.0 <= v <= 1.0
        assert s.closed_world_with_reject <= s.closed_world_no_reject + 1e-12


# validation ------------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def val_data(small):
    train, _ = small[0].split_by_instance()
    return train, build_validation_splits(range(6), 1, seed=0)


def test_singleton_grids_return_the_base_config(val_data):
    data, trials = val_data
    base = tiny_method(lam=0.2, neg_weight=2.0)
    res = validate_hyperparameters("deepnno", data, {"lam": [0.2], "neg_weight": [2.0]}, trials, base=base)
    assert res.config == base
    assert len(res.stage1) == 1 and len(res.stage2) == 1


def test_grid_search_matches_exhaustive_oracle(val_data):
    data, trials = val_data
    base = tiny_method()
    grids = {"lr": [0.05, 0.2], "neg_weight": [0.5, 4.0]}
    res = validate_hyperparameters("deepnno", data, grids, trials, base=base)
    s1 = [(lr, evaluate_candidate(replace(base, lr=lr), data, trials, "closed_world_no_reject")) for lr in grids["lr"]]
    lr = max(s1, key=lambda t: t[1])[0]  # max keeps the first of equal scores
    s2 = [(nw, evaluate_candidate(replace(base, lr=lr, neg_weight=nw), data, trials, "owr_h"))
          for nw in grids["neg_weight"]]
    nw = max(s2, key=lambda t: t[1])[0]
    assert (res.config.lr, res.config.neg_weight) == (lr, nw)
    assert [s for _, s in res.stage1] == [s for _, s in s1]
    assert [s for _, s in res.stage2] == [s for _, s in s2]


def test_stage_one_ignores_rejection_parameters(val_data):
    data, trials = val_data
    a = validate_hyperparameters("deepnno", data, {"lr": [0.05, 0.1], "neg_weight": [1.0]}, trials, base=tiny_method())
    b = validate_hyperparameters("deepnno", data, {"lr": [0.05, 0.1], "neg_weight": [3.0]}, trials, base=tiny_method())
    assert a.stage1 == b.stage1
    assert all(set(c) == {"lr"} for c, _ in a.stage1)


def test_candidates_enumerate_the_full_product(val_data):
    data, trials = val_data
    grids = {"lr": [0.05, 0.1], "weight_decay": [0.0, 1e-4]}
    res = validate_hyperparameters("nno", data, grids, trials, base=tiny_method("nno"))
    assert [c for c, _ in res.stage1] == [dict(zip(grids, v)) for v in itertools.product(*grids.values())]


def test_validation_errors(val_data):
    data, trials = val_data
    with pytest.raises(ConfigurationError, match="empty"):
        validate_hyperparameters("nno", data, {"lr": []}, trials)
    with pytest.raises(ConfigurationError, match="epochs_base"):
        validate_hyperparameters("nno", data, {"epochs_base": [1]}, trials)
    with pytest.raises(ConfigurationError):
        validate_hyperparameters("nno", data, {}, [])


# results files -------------------------------------------------------------------------------------------

def _result(method, seed, domain, values):
    steps = [StepResult(i, v, v / 2, 1 - v, owr_harmonic(v / 2, 1 - v)) for i, v in enumerate(values)]
    return RunResult(f"{method}-s{seed}-d{domain}", method, "none", 0, domain, seed, steps)


def test_results_csv_roundtrip_is_exact(tmp_path):
    results = [_result("nno", 0, 1, [0.1, 1 / 3]), _result("bdoc", 1, 0, [0.7])]
    write_results_csv(results, tmp_path / "r.csv")
    rows = read_results_csv(tmp_path / "r.csv")
    assert [r["fingerprint"] for r in rows] == ["bdoc-s1-d0", "nno-s0-d1", "nno-s0-d1"]
    assert rows[2]["closed_world_no_reject"] == 1 / 3


def test_results_csv_rejects_foreign_header(tmp_path):
    (tmp_path / "r.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ParseError, match="header"):
        read_results_csv(tmp_path / "r.csv")


def test_aggregate_averages_steps_then_seeds(tmp_path):
    results = [_result("nno", 0, 0, [0.2, 0.4]), _result("nno", 1, 0, [0.6]), _result("nno", 0, 1, [0.5])]
    write_results_csv(results, tmp_path / "r.csv")
    table = aggregate(read_results_csv(tmp_path / "r.csv"))
    assert table[("nno", "none", 0)][0]["closed_world_no_reject"] == pytest.approx((0.3 + 0.6) / 2)
    header, body = report_table(read_results_csv(tmp_path / "r.csv"))
    assert header[:3] == ["method", "dg", "train_domain"] and "owr_h_d1" in header
    assert len(body) == 1
