import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.exceptions import NotFittedError

from crosstune.adapter import AdapterModel, LinearAdapter
from crosstune.core import NON_POI
from crosstune.metrics import (
    ReportError,
    cmc_curve,
    confusion_matrix,
    identify,
    labeling_metrics,
    noise_report,
)
from crosstune.simulation import SimConfig, generate, inject_false_alarm_faces, synth_dataset

from conftest import make_dataset


def test_perfect_labels():
    m = labeling_metrics([0, 1, 2], [0, 1, 2])
    assert m["f1"] == 1.0 and m["accuracy"] == 1.0


def test_half_f1():
    # tp=1 (first), fp=1 (wrong id), fn=1 (unlabeled POI)
    m = labeling_metrics([0, 2, -1], [0, 1, 1])
    assert (m["tp"], m["fp"], m["fn"]) == (1, 1, 1)
    assert m["f1"] == pytest.approx(0.5)


def test_no_predicted_positives():
    m = labeling_metrics([-1, -1], [0, 1])
    assert m["precision"] == 0.0 and m["f1"] == 0.0


def test_non_poi_handling():
    m = labeling_metrics([-1, 0], [NON_POI, NON_POI])
    assert (m["tn"], m["fp"]) == (1, 1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(-1, 3), st.integers(-1, 3)), min_size=1, max_size=30))
def test_counts_partition_samples(pairs):
    pred, truth = zip(*pairs)
    m = labeling_metrics(pred, truth)
    assert m["tp"] + m["fp"] + m["fn"] + m["tn"] == len(pairs)


def test_confusion_examples():
    assert np.array_equal(confusion_matrix([0, 1, 2], [0, 1, 2], 3), np.eye(3))
    assert np.array_equal(confusion_matrix([1, 0], [0, 1], 2), [[0, 1], [1, 0]])
    cm = confusion_matrix([0, 0, 1], [0, 2, 1], 3)
    assert cm[2, 2] == 0.0 and cm[2].sum() == 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40))
def test_confusion_rows_sum_to_one(pairs):
    pred, truth = map(np.array, zip(*pairs))
    cm = confusion_matrix(pred, truth, 4)
    for k in range(4):
        assert cm[k].sum() == pytest.approx(1.0 if np.any(truth == k) else 0.0, abs=1e-9)


def cmc_by_enumeration(scores, truth, k):
    hits = 0
    for row, t in zip(scores, truth):
        order = sorted(range(len(row)), key=lambda j: (-row[j], j))
        hits += t in order[:k]
    return hits / len(truth)


def test_cmc_toy_case():
    scores = np.array([[0.9, 0.1, 0.0], [0.2, 0.5, 0.3], [0.4, 0.4, 0.2]])
    truth = np.array([0, 2, 1])
    curve = cmc_curve(scores, truth)
    assert curve.tolist() == [1 / 3, 1.0, 1.0]
    assert curve.tolist() == [cmc_by_enumeration(scores, truth, k) for k in (1, 2, 3)]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_cmc_properties(seed):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 4, (15, 5)).astype(float)
    truth = rng.integers(0, 5, 15)
    curve = cmc_curve(scores, truth)
    assert np.all(np.diff(curve) >= 0)
    assert curve[-1] == 1.0
    assert curve[0] == pytest.approx(np.mean(np.argmax(scores, axis=1) == truth))
    assert curve.tolist() == pytest.approx([cmc_by_enumeration(scores, truth, k) for k in range(1, 6)])


def test_noise_report_examples():
    clean = synth_dataset(SimConfig(m_poi=4, dim=6, events=20, seed=0))
    assert not noise_report(clean.dataset).any()
    noisy = inject_false_alarm_faces(clean.dataset, 0.3, seed=0)
    report = noise_report(noisy, clean.clean_attendance)
    deleted = (clean.dataset.attendance - noisy.attendance).sum(axis=1)
    assert np.array_equal(report[:, 0], deleted)


def test_noise_report_counts_nonpoi():
    ds = make_dataset([(0, 0, [1, 0], 0), (1, 1, [0, 1], NON_POI), (2, 1, [0, 1], NON_POI), (3, 1, [0, 1], NON_POI)], [[1, 0], [0, 0]])
    assert noise_report(ds)[:, 2].tolist() == [0, 3]


def test_noise_report_bookkeeping_matches_log():
    res = generate(SimConfig(m_poi=5, n_nonpoi=3, dim=6, events=40, false_alarm_face_rate=0.2, false_alarm_device_rate=0.2, seed=2))
    report = noise_report(res.dataset, res.clean_attendance)
    assert report[:, 2].sum() == len(res.noise.nonpoi_samples)
    # a face deletion on top of a device deletion leaves no trace at all
    gone = {(d["day"], d["slot"], d["identity"]) for d in res.noise.deleted_devices}
    visible = [f for f in res.noise.deleted_faces if (f["day"], f["slot"], f["identity"]) not in gone]
    assert report[:, 1].sum() == len(visible)


def test_noise_report_needs_truth():
    ds = make_dataset([(0, 0, [1, 0], None)], [[1, 0]])
    with pytest.raises(ReportError):
        noise_report(ds)


def test_identify():
    with pytest.raises(NotFittedError):
        identify(np.ones((1, 2)), None)
    model = AdapterModel(np.eye(2), np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros(2))
    scores = identify(np.array([[2.0, 0.1], [2.0, 0.1], [0.0, 5.0]]), model)
    assert np.array_equal(scores[0], scores[1])
    assert np.argmax(scores, axis=1).tolist() == [0, 0, 1]
    swapped = AdapterModel(model.A, model.W[::-1], model.b[::-1])
    assert np.allclose(identify(np.array([[2.0, 0.1]]), swapped), scores[:1, ::-1])
    X = np.vstack([np.eye(3)[k] + 0.01 * i for k in range(3) for i in range(10)])
    est = LinearAdapter(epochs=40, learning_rate=0.5).fit(X, np.repeat(np.arange(3), 10))
    assert np.array_equal(np.argmax(identify(X, est), axis=1), np.repeat(np.arange(3), 10))
