import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from owrlab.datagen import generate_benchmark
from owrlab.dg import make_plugin
from owrlab.errors import ConfigurationError, ContractError
from owrlab.eval.metrics import owr_harmonic
from owrlab.numerics import tensor
from owrlab.owr import (UNKNOWN, VARIANT_DEFAULTS, ClassModel, MethodConfig, OwrModel, bce_loss, bdoc_classify,
                        bdoc_learn_thresholds, bdoc_scores, classify, deepnno_classify, deepnno_scores,
                        deepnno_update_threshold, distillation_loss, incremental_step, load_checkpoint,
                        nno_classify, nno_scores, save_checkpoint, select_exemplars, select_nno_threshold,
                        snnl_loss, update_centroids_online)

coords = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def toy_model(variant="deepnno", centroids=None, **cls_kwargs):
    cfg = MethodConfig.for_variant(variant, hidden=(), feature_dim=2)
    model = OwrModel.create(cfg, (1, 1, 2))
    centroids = centroids or {0: [0.0, 0.0], 1: [4.0, 0.0]}
    model.classes = ClassModel({c: np.array(v, float) for c, v in centroids.items()}, **cls_kwargs)
    model.known = sorted(centroids)
    return model


# centroids ---------------------------------------------------------------------------------

def test_online_centroids_are_exact_means():
    cm = ClassModel()
    z = np.array([[1.0, 1.0], [3.0, 1.0], [5.0, 5.0]])
    update_centroids_online(cm, z[:2], [0, 0])
    update_centroids_online(cm, z[2:], [0])
    assert np.allclose(cm.centroids[0], z.mean(0))
    assert cm.counts[0] == 3


def test_online_centroids_reject_foreign_classes():
    with pytest.raises(ContractError, match="class 7"):
        update_centroids_online(ClassModel(), np.zeros((1, 2)), [7], allowed={0, 1})


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (9, 3), elements=coords), st.integers(1, 8))
def test_online_centroids_are_order_free(z, cut):
    labels = np.zeros(9, dtype=int)
    a = update_centroids_online(ClassModel(), z, labels)
    b = update_centroids_online(update_centroids_online(ClassModel(), z[:cut], labels[:cut]), z[cut:], labels[cut:])
    assert np.allclose(a.centroids[0], b.centroids[0], atol=1e-12)


# NNO ---------------------------------------------------------------------------------------------

def test_nno_score_example():
    assert nno_scores([[1.0, 0.0]], [[0.0, 0.0]], 2.0)[0, 0] == pytest.approx(0.5)


def test_nno_rejects_at_the_boundary():
    model = toy_model("nno", tau=2.0)
    assert nno_classify(model, [1.0, 0.0])[1] == 0
    assert nno_classify(model, [-2.0, 0.0])[1] == UNKNOWN
    assert nno_classify(model, [-2.0, 0.0], reject=False)[1] == 0


def test_nno_threshold_must_be_positive():
    with pytest.raises(ConfigurationError):
        nno_scores([[0.0]], [[0.0]], 0.0)


def test_nno_threshold_separates_clean_distances():
    tau = select_nno_threshold([0.5, 0.6, 0.7], [True] * 3, [2.0, 2.5])
    assert 0.7 < tau <= 2.0


def test_nno_threshold_degenerate_tie_picks_smallest():
    tau = select_nno_threshold([1.0, 1.0], [True, True], [1.0, 1.0])
    assert tau == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 5), min_size=1, max_size=10), st.lists(st.booleans(), min_size=10, max_size=10),
       st.lists(st.floats(0.01, 5), min_size=1, max_size=10))
def test_nno_threshold_is_optimal_over_observed_distances(kd, correct, ud):
    kc = np.array(correct[:len(kd)])
    kd, ud = np.array(kd), np.array(ud)

    def h(t):
        return owr_harmonic(float(np.mean(kc & (kd < t))), float(np.mean(ud >= t)))

    candidates = list(np.unique(np.concatenate([kd, ud]))) + [max(kd.max(), ud.max()) * 1.0001 + 1e-9]
    best = max(h(t) for t in candidates)
    assert h(select_nno_threshold(kd, kc, ud)) == pytest.approx(best, abs=1e-12)


# DeepNNO ---------------------------------------------------------------------------------------

def test_deepnno_score_example():
    assert deepnno_scores([[1.0, 0.0]], [[0.0, 0.0]])[0, 0] == pytest.approx(math.exp(-0.5), abs=1e-5)
    assert deepnno_scores([[1.0, 0.0]], [[0.0, 0.0]])[0, 0] == pytest.approx(0.60653, abs=1e-5)


def test_deepnno_threshold_one_rejects_everything():
    model = toy_model("deepnno", tau=1.0)
    _, pred = deepnno_classify(model, np.array([[0.0, 0.0], [4.0, 0.0], [9.0, 9.0]]))
    assert pred.tolist() == [UNKNOWN] * 3


def test_deepnno_threshold_zero_accepts_everything():
    model = toy_model("deepnno", tau=0.0)
    _, pred = deepnno_classify(model, np.array([[0.1, 0.0], [3.9, 0.0]]))
    assert pred.tolist() == [0, 1]


def test_deepnno_threshold_update_examples():
    cm = ClassModel()
    assert deepnno_update_threshold(cm, [0.8, 0.6], [True, True], 1.0) == pytest.approx(0.7)
    cm = ClassModel()
    assert deepnno_update_threshold(cm, [0.8, 0.2], [True, False], 3.0) == pytest.approx((0.8 + 0.6) / 4)
    # accumulates across batches
    assert deepnno_update_threshold(cm, [0.4], [True], 3.0) == pytest.approx((0.8 + 0.6 + 0.4) / 5)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 12, elements=st.floats(0, 1)), st.lists(st.booleans(), min_size=12, max_size=12),
       st.floats(0, 5))
def test_deepnno_threshold_stays_in_unit_interval(scores, correct, neg_weight):
    assert 0.0 <= deepnno_update_threshold(ClassModel(), scores, correct, neg_weight) <= 1.0


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 2), elements=coords), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_raising_the_deepnno_threshold_only_adds_rejections(z, t1, t2):
    lo, hi = sorted((t1, t2))
    _, p_lo = deepnno_classify(toy_model("deepnno", tau=lo), z)
    _, p_hi = deepnno_classify(toy_model("deepnno", tau=hi), z)
    assert np.all((p_lo != UNKNOWN) | (p_hi == UNKNOWN))


# losses ----------------------------------------------------------------------------------------------

def test_bce_at_one_half_is_ln2():
    assert float(bce_loss(tensor(np.full((3, 4), 0.5)), np.eye(4)[[0, 1, 2]]).data) == pytest.approx(math.log(2))


def test_bce_is_invariant_to_class_permutation(rng):
    p, t = rng.uniform(0.05, 0.95, size=(5, 4)), np.eye(4)[rng.integers(0, 4, size=5)]
    perm = rng.permutation(4)
    assert float(bce_loss(tensor(p), t).data) == pytest.approx(float(bce_loss(tensor(p[:, perm]), t[:, perm]).data))


def test_distillation_example_and_homogeneity():
    z = tensor([[3.0, 0.0], [0.0, 1.0]])
    assert float(distillation_loss(z, [[0.0, 0.0], [0.0, -1.0]]).data) == pytest.approx(2.5)
    assert float(distillation_loss(tensor([[2.0, 0.0]]), [[0.0, 0.0]]).data) == pytest.approx(2.0)
    a = float(distillation_loss(tensor([[1.0, 2.0]]), [[0.5, -1.0]]).data)
    b = float(distillation_loss(tensor([[3.0, 6.0]]), [[1.5, -3.0]]).data)
    assert b == pytest.approx(3 * a)


def test_distillation_needs_previous_features():
    with pytest.raises(ContractError):
        distillation_loss(tensor([[1.0]]), None)


def test_snnl_well_separated_pairs_are_near_zero():
    z = tensor([[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.1, 0.0]])
    assert float(snnl_loss(z, [0, 0, 1, 1], 1.0).data) < 1e-6


def test_snnl_identical_points_give_log_ratio():
    # all points coincide: each anchor has 1 peer out of 3 others
    z = tensor(np.zeros((4, 2)))
    assert float(snnl_loss(z, [0, 0, 1, 1], 1.0).data) == pytest.approx(math.log(3))


def test_snnl_without_peers_warns_and_returns_zero():
    with pytest.warns(RuntimeWarning):
        assert float(snnl_loss(tensor(np.eye(3)), [0, 1, 2], 1.0).data) == 0.0


# B-DOC -----------------------------------------------------------------------------------------------

def test_bdoc_score_example():
    assert bdoc_scores([[2.0, 0.0]], [[0.0, 0.0]], 0.5)[0, 0] == pytest.approx(8.0)


def test_bdoc_predicts_nearest_and_rejects_above_all_thresholds():
    model = toy_model("bdoc", class_tau={0: 1.0, 1: 1.0})
    _, pred = bdoc_classify(model, np.array([[0.5, 0.0], [3.5, 0.0], [2.0, 5.0]]))
    assert pred.tolist() == [0, 1, UNKNOWN]


def test_bdoc_requires_a_threshold_per_class():
    with pytest.raises(ContractError, match=r"\[1\]"):
        bdoc_classify(toy_model("bdoc", class_tau={0: 1.0}), [0.0, 0.0])


def test_bdoc_thresholds_cover_in_class_scores():
    model = toy_model("bdoc")
    z = np.array([[0.1, 0.0], [-0.2, 0.1], [0.0, 0.3], [4.1, 0.0], [3.8, 0.2], [4.0, -0.3]])
    taus = bdoc_learn_thresholds(model, z, [0, 0, 0, 1, 1, 1], tau_lr=0.05, epochs=50)
    s = bdoc_scores(z, model.classes.centroid_matrix([0, 1]), 1.0)
    for j, c in enumerate((0, 1)):
        rows = np.arange(3) + 3 * j
        assert s[rows, j].max() <= taus[c] < s[np.setdiff1d(np.arange(6), rows), j].min()


def test_bdoc_threshold_for_class_without_samples_warns():
    model = toy_model("bdoc", class_tau={1: 0.7})
    with pytest.warns(RuntimeWarning, match="class 0"):
        taus = bdoc_learn_thresholds(model, np.array([[4.0, 0.0]]), [1], 0.05, 10)
    assert 0 in taus


# exemplars --------------------------------------------------------------------------------------------

def test_exemplars_are_nearest_to_centroid():
    f = np.array([[3.0, 0.0], [0.5, 0.0], [1.0, 0.0], [0.1, 0.0]])
    assert select_exemplars(f, np.zeros(2), 2).tolist() == [3, 1]
    assert select_exemplars(f, np.zeros(2), 0).tolist() == []
    assert len(select_exemplars(f, np.zeros(2), 10)) == 4


# incremental training ------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_data():
    return generate_benchmark(6, 3, 6, seed=3)


def small_config(variant):
    return MethodConfig.for_variant(variant, hidden=(32,), feature_dim=8, epochs_base=6, epochs_incremental=4)


@pytest.mark.parametrize("variant", ["nno", "deepnno", "bdoc"])
def test_incremental_steps_learn_separable_classes(toy_data, variant):
    train, test = toy_data.split_by_instance()
    model = OwrModel.create(small_config(variant), train.image_shape, seed=0)
    incremental_step(model, train.of_classes([0, 1, 2, 3]), seed=0)
    incremental_step(model, train.of_classes([4, 5]), seed=0)
    assert model.known == [0, 1, 2, 3, 4, 5] and model.step == 2
    _, pred = classify(model, model.features(test.flat()), reject=False)
    assert np.mean(pred == test.class_ids) > 0.5
    assert set(model.memory.stored) == set(range(6))


def test_relearning_a_class_is_a_contract_error(toy_data):
    model = OwrModel.create(small_config("nno"), toy_data.image_shape)
    incremental_step(model, toy_data.of_classes([0, 1]))
    with pytest.raises(ContractError, match=r"\[1\]"):
        incremental_step(model, toy_data.of_classes([1, 2]))


def test_checkpoint_roundtrip(tmp_path, toy_data):
    plugin = make_plugin("rsda", update_frequency=5)
    model = OwrModel.create(small_config("bdoc"), toy_data.image_shape, seed=1)
    incremental_step(model, toy_data.of_classes([0, 1, 2]), plugin, seed=1)
    save_checkpoint(model, tmp_path / "ck", plugin)
    fresh = make_plugin("rsda", update_frequency=5)
    back = load_checkpoint(tmp_path / "ck", fresh)
    z = toy_data.flat()[:10]
    assert np.array_equal(back.features(z), model.features(z))
    assert back.classes.class_tau == model.classes.class_tau
    assert back.known == model.known and back.step == model.step
    assert np.array_equal(back.memory.arrays()[0], model.memory.arrays()[0])
    assert fresh.state() == plugin.state()


def test_variant_defaults_resolve():
    assert MethodConfig.for_variant("bdoc").lr == VARIANT_DEFAULTS["bdoc"]["lr"]
    assert MethodConfig.for_variant("bdoc", lr=0.3).lr == 0.3
    with pytest.raises(ConfigurationError):
        MethodConfig.for_variant("deepnno", tau_reset="sometimes")
