import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cellpheno.classify import (CLASS_NAMES, CellType, CnnConfig, LabeledPatch, TinyCnn, TrainConfig,
                                TrainingDiverged, balance_bootstrap, balance_downsample, class_counts, class_weights,
                                classification_report, confusion_from_rates, confusion_matrix, ensemble_predict,
                                ensemble_predict_batch, f_measure, forward, train)
from cellpheno.classify.cnn import backward, to_input
from cellpheno.detect import FocalParams

from gradcheck import jitter_biases, relative_errors

CURATED_COUNTS = (1359, 2577, 478, 1576, 1539)


def make_data(counts, side=4):
    data = []
    for c, n in enumerate(counts):
        data += [LabeledPatch(np.full((side, side, 3), c, np.uint8), CellType(c), f"{c}/{i}") for i in range(n)]
    return data


def test_celltype_order_and_parse():
    assert CLASS_NAMES == ["CYT", "FIB", "HOF", "SYN", "VAS"]
    assert CellType.parse("hof") is CellType.HOF
    with pytest.raises(ValueError):
        CellType.parse("XYZ")


# -- balancing ----------------------------------------------------------------------

def test_bootstrap_and_downsample_curated_counts():
    data = make_data(CURATED_COUNTS, side=1)
    boot = balance_bootstrap(data, 0)
    assert class_counts(boot).tolist() == [2577] * 5
    assert all(int(d.label) == int(d.source_id.split("/")[0]) for d in boot)
    assert class_counts(balance_downsample(data, 0)).tolist() == [478] * 5
    w = class_weights(data)
    assert w[2] == pytest.approx(sum(CURATED_COUNTS) / (5 * 478), abs=1e-9)


def test_balancing_determinism_and_balanced_input():
    data = make_data((3, 3, 3, 3, 3))
    a, b = balance_bootstrap(data, 7), balance_bootstrap(data, 7)
    assert [d.source_id for d in a] == [d.source_id for d in b]
    assert class_counts(a).tolist() == [3] * 5
    assert np.allclose(class_weights(data), 1.0)


def test_class_weight_example():
    assert class_weights(make_data((100, 100, 100, 100, 50)))[4] == pytest.approx(1.8)


@pytest.mark.parametrize("fn", [balance_bootstrap, balance_downsample, class_weights])
def test_empty_class_rejected(fn):
    with pytest.raises(ValueError):
        fn(make_data((2, 2, 0, 2, 2)))


@given(st.lists(st.integers(1, 12), min_size=5, max_size=5), st.integers(0, 1000))
def test_balancing_never_crosses_classes(counts, seed):
    data = make_data(counts)
    for out, target in ((balance_bootstrap(data, seed), max(counts)), (balance_downsample(data, seed), min(counts))):
        assert class_counts(out).tolist() == [target] * 5
        assert all(int(d.label) == int(d.source_id.split("/")[0]) for d in out)
    down = balance_downsample(data, seed)
    assert len({d.source_id for d in down}) == len(down)


# -- network ------------------------------------------------------------------------

def small_model(seed=0, zero_output=False, dropout=0.5):
    return TinyCnn.init(CnnConfig(widths=(2, 3), hidden=4, input_size=8, dropout=dropout), seed, zero_output)


def test_zero_output_layer_gives_uniform_posterior():
    m = TinyCnn.init(CnnConfig(), seed=1, zero_output=True)
    x = to_input(np.random.default_rng(0).integers(0, 256, (3, 32, 32, 3), dtype=np.uint8))
    probs, _ = forward(m, x)
    assert np.allclose(probs, 0.2)


def test_inference_rows_valid_and_deterministic():
    m = TinyCnn.init(CnnConfig(), seed=2)
    img = np.random.default_rng(1).integers(0, 256, (200, 200, 3), dtype=np.uint8)
    post = m.predict_posteriors([img, img, np.flipud(img)])
    assert np.allclose(post.sum(axis=1), 1.0, atol=1e-9)
    assert np.array_equal(post[0], post[1])
    assert np.array_equal(post, m.predict_posteriors([img, img, np.flipud(img)]))
    assert m.embed([img]).shape == (1, 128)


def test_non_finite_parameters_rejected():
    m = small_model()
    m.params["fc1_b"][0] = np.nan
    with pytest.raises(FloatingPointError):
        forward(m, np.zeros((1, 3, 8, 8)))


def test_bad_shapes_rejected():
    m = small_model()
    with pytest.raises(ValueError):
        forward(m, np.zeros((1, 1, 8, 8)))
    _, cache = forward(m, np.zeros((2, 3, 8, 8)), train=True, rng=0)
    with pytest.raises(ValueError):
        backward(m, cache, [0, 1, 2])


@pytest.mark.parametrize("focal", [FocalParams(0.25, 2.0), FocalParams(0.9, 0.5)])
def test_gradient_check_small(focal):
    rng = np.random.default_rng(3)
    m = jitter_biases(small_model(seed=4))
    x = rng.uniform(0, 1, (3, 3, 8, 8))
    errs = relative_errors(m, x, np.array([0, 2, 4]), {"cross_entropy": None, "focal": focal}, dropout_seed=5)
    for per_tensor in errs.values():
        assert max(per_tensor.values()) < 1e-6, errs


def test_focal_identity_gradients():
    m = small_model(seed=6)
    x = np.random.default_rng(2).uniform(0, 1, (4, 3, 8, 8))
    y = np.array([1, 2, 3, 4])
    _, cache = forward(m, x, train=True, rng=1)
    _, g_ce = backward(m, cache, y, "cross_entropy")
    _, g_fl = backward(m, cache, y, "focal", FocalParams(1.0, 0.0))
    for k in g_ce:
        assert np.allclose(g_ce[k], g_fl[k], atol=1e-12)


def test_confident_prediction_has_no_output_gradient():
    m = small_model(seed=0, dropout=0.0)
    m.params["fc2_w"][:] = 0
    m.params["fc2_b"][:] = [200.0, 0, 0, 0, 0]  # softmax saturates to one-hot class 0
    _, cache = forward(m, np.random.default_rng(0).uniform(0, 1, (2, 3, 8, 8)), train=True, rng=0)
    _, g = backward(m, cache, [0, 0])
    assert np.abs(g["fc2_w"]).max() < 1e-12 and np.abs(g["fc2_b"]).max() < 1e-12


def test_model_save_load(tmp_path):
    m = TinyCnn.init(CnnConfig(widths=(12, 24)), seed=9)
    m.save(tmp_path / "m.cnn")
    back = TinyCnn.load(tmp_path / "m.cnn")
    assert back.config == m.config
    assert all(np.array_equal(back.params[k], m.params[k]) for k in m.params)


# -- training -----------------------------------------------------------------------

def colour_patches(n_per_class, seed=0):
    """Tiny separable dataset: a dark square whose colour encodes the class."""
    colours = [(60, 20, 140), (40, 140, 40), (150, 40, 40), (20, 20, 60), (120, 60, 10)]
    rng = np.random.default_rng(seed)
    out = []
    for c, col in enumerate(colours):
        for i in range(n_per_class):
            img = np.full((16, 16, 3), 235, np.uint8)
            y, x = rng.integers(2, 9, size=2)
            img[y:y + 6, x:x + 6] = col
            out.append(LabeledPatch(img, CellType(c), f"{c}/{i}"))
    return out


def test_lr_zero_keeps_parameters():
    m = TinyCnn.init(CnnConfig(input_size=16), seed=1)
    data = colour_patches(4)
    best, hist = train(m, data, data, TrainConfig(epochs=2, lr=0.0, batch_size=8), rng_seed=0)
    assert all(np.array_equal(best.params[k], m.params[k]) for k in m.params)
    assert len({h["val_acc"] for h in hist}) == 1


def test_training_is_reproducible_and_learns():
    m = TinyCnn.init(CnnConfig(input_size=16, dropout=0.0), seed=3)
    data = colour_patches(12)
    cfg = TrainConfig(epochs=12, batch_size=10, lr=0.05, augment=False)
    a, ha = train(m, data, data, cfg, rng_seed=4)
    b, hb = train(m, data, data, cfg, rng_seed=4)
    assert ha == hb
    assert max(h["val_acc"] for h in ha) >= 0.8
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_training_divergence_reports_epoch():
    m = TinyCnn.init(CnnConfig(input_size=16), seed=1)
    m.params["fc2_w"] *= 1e200
    data = colour_patches(2)
    with pytest.raises(TrainingDiverged) as exc:
        train(m, data, data, TrainConfig(epochs=2, lr=1e200, augment=False), rng_seed=0)
    assert exc.value.epoch == 1


def test_empty_training_sets_rejected():
    with pytest.raises(ValueError):
        train(small_model(), [], colour_patches(1))


# -- ensemble -----------------------------------------------------------------------

def test_ensemble_examples():
    a = [0.6, 0.1, 0.1, 0.1, 0.1]
    b = [0.025, 0.9, 0.025, 0.025, 0.025]
    assert ensemble_predict([a, b]) == (CellType.FIB, 0.9)
    assert ensemble_predict([a, a])[0] is CellType.CYT
    assert ensemble_predict([b])[0] is CellType.FIB
    with pytest.raises(ValueError):
        ensemble_predict([])
    with pytest.raises(ValueError):
        ensemble_predict([[0.5, 0.6, 0, 0, 0]])


def test_ensemble_ties_and_batch():
    tie = [0.4, 0.4, 0.2, 0.0, 0.0]
    assert ensemble_predict([tie])[0] is CellType.CYT
    assert ensemble_predict([[0.1, 0.5, 0.4, 0, 0], [0.5, 0.1, 0.4, 0, 0]])[0] is CellType.FIB


@given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 10_000))
def test_batch_matches_scalar_and_order_invariance(m, n, seed):
    rng = np.random.default_rng(seed)
    post = rng.dirichlet(np.ones(5), size=(m, n))
    cls, conf = ensemble_predict_batch(post)
    for i in range(n):
        c, v = ensemble_predict(post[:, i])
        assert (cls[i], conf[i]) == (int(c), v)
        assert v == post[:, i].max()
    cls_rev, conf_rev = ensemble_predict_batch(post[::-1])
    assert np.array_equal(conf, conf_rev)


# -- metrics ------------------------------------------------------------------------

TABLE = {"precision": [0.748, 0.875, 0.960, 0.965, 0.899], "recall": [0.905, 0.945, 0.725, 0.975, 0.850],
         "f1": [0.819, 0.909, 0.826, 0.970, 0.874]}


def test_f_measure_examples():
    assert f_measure(0.748, 0.905) == pytest.approx(0.819, abs=5e-4)
    assert f_measure(0.0, 0.0) == 0.0


def test_report_from_published_rates():
    cm = confusion_from_rates(TABLE["precision"], TABLE["recall"], 200)
    assert (cm >= 0).all() and cm.sum(axis=1).tolist() == [200] * 5
    rep = classification_report(cm)
    assert np.allclose(rep.f1, TABLE["f1"], atol=1e-3)
    assert rep.avg_precision == pytest.approx(0.890, abs=1e-3)
    assert rep.avg_recall == pytest.approx(0.880, abs=1e-3)
    assert rep.avg_f1 == pytest.approx(0.880, abs=1e-3)


def test_perfect_and_degenerate_reports():
    rep = classification_report(np.diag([3, 4, 5, 6, 7]))
    assert np.all(rep.precision == 1) and rep.avg_f1 == 1.0 and rep.accuracy == 1.0
    cm = np.zeros((5, 5), int)
    cm[0, 1] = 4
    rep = classification_report(cm)
    assert rep.precision[0] == 0 and rep.recall[2] == 0 and rep.warnings
    with pytest.raises(ValueError):
        classification_report(np.zeros((5, 5)))


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=80))
def test_report_against_pair_count_oracle(pairs):
    y_true, y_pred = zip(*pairs)
    cm = confusion_matrix(y_true, y_pred)
    assert cm.sum() == len(pairs)
    rep = classification_report(cm)
    assert rep.accuracy == pytest.approx(np.trace(cm) / cm.sum())
    for c in range(5):
        tp = sum(1 for t, p in pairs if t == c and p == c)
        npred = sum(1 for _, p in pairs if p == c)
        ntrue = sum(1 for t, _ in pairs if t == c)
        assert rep.precision[c] == pytest.approx(tp / npred if npred else 0.0)
        assert rep.recall[c] == pytest.approx(tp / ntrue if ntrue else 0.0)
        assert 0 <= rep.f1[c] <= 1


def test_report_matches_sklearn():
    from sklearn.metrics import precision_recall_fscore_support
    rng = np.random.default_rng(5)
    y_true, y_pred = rng.integers(0, 5, 300), rng.integers(0, 5, 300)
    rep = classification_report(confusion_matrix(y_true, y_pred))
    p, r, f, _ = precision_recall_fscore_support(y_true, y_pred, labels=range(5), zero_division=0)
    assert np.allclose(rep.precision, p) and np.allclose(rep.recall, r) and np.allclose(rep.f1, f)
    pw, rw, fw, _ = precision_recall_fscore_support(y_true, y_pred, average="weighted", zero_division=0)
    assert (rep.avg_precision, rep.avg_recall, rep.avg_f1) == pytest.approx((pw, rw, fw))


def test_inconsistent_rates_rejected():
    with pytest.raises(ValueError):
        confusion_from_rates([0.9] * 5, [1.0, 1.0, 1.0, 1.0, 0.5], 200)
