"""Scikit-learn style facade: parameter plumbing, clone compatibility,
fit/predict shapes, and validation helpers."""

import numpy as np
import pytest
from sklearn.base import clone

from dpcsearch.errors import StateError, ValidationError
from dpcsearch.estimators import DenseCellSearch, DenseCellSegmenter
from dpcsearch.space import aspp_genotype, encode
from dpcsearch.validation import (
    as_genotype,
    check_images,
    check_labels,
    check_matching,
    infer_num_classes,
)

# --- validation helpers ---


def test_check_images_accepts_valid(small_dataset):
    check_images(small_dataset.images)


def test_check_images_rejects_bad():
    with pytest.raises(ValidationError):
        check_images(np.zeros((2, 3, 8), dtype=np.float32))
    out = check_images(np.zeros((2, 3, 8, 8), dtype=np.float64))
    assert out.dtype == np.float32
    bad = np.zeros((1, 3, 4, 4), dtype=np.float32)
    bad[0, 0, 0, 0] = np.inf
    with pytest.raises(ValidationError):
        check_images(bad)


def test_check_labels_coerces_integral_floats():
    labels = np.zeros((1, 4, 4), dtype=np.float32)
    out = check_labels(labels)
    assert out.dtype == np.int64
    with pytest.raises(ValidationError):
        check_labels(np.full((1, 4, 4), 0.5, dtype=np.float32))
    with pytest.raises(ValidationError):
        check_labels(np.full((1, 4, 4), -2, dtype=np.int64))


def test_check_matching():
    images = np.zeros((2, 3, 8, 8), dtype=np.float32)
    labels = np.zeros((2, 8, 8), dtype=np.int64)
    check_matching(images, labels)
    with pytest.raises(ValidationError):
        check_matching(images, np.zeros((3, 8, 8), dtype=np.int64))
    with pytest.raises(ValidationError):
        check_matching(images, np.zeros((2, 4, 4), dtype=np.int64))


def test_infer_num_classes():
    labels = np.array([[[0, 1], [4, 255]]], dtype=np.int64)
    assert infer_num_classes(labels) == 5
    assert infer_num_classes(np.zeros((1, 2, 2), dtype=np.int64)) == 2
    with pytest.raises(ValidationError):
        infer_num_classes(np.full((1, 2, 2), 255, dtype=np.int64))


def test_as_genotype_forms():
    assert as_genotype(None) == aspp_genotype()
    assert as_genotype(encode(aspp_genotype())) == aspp_genotype()
    assert as_genotype(aspp_genotype()) == aspp_genotype()
    with pytest.raises(ValidationError):
        as_genotype(42)


# --- segmenter ---


@pytest.fixture(scope="module")
def fit_data():
    from dpcsearch.proxy.data import SyntheticDatasetConfig, generate_dataset

    ds = generate_dataset(SyntheticDatasetConfig(num_images=25, seed=31))
    return ds.images, ds.labels


def test_segmenter_get_set_params_round_trip():
    est = DenseCellSegmenter(steps=12, filters=8)
    params = est.get_params()
    assert params["steps"] == 12
    est2 = clone(est)
    assert est2.get_params() == params


def test_segmenter_fit_predict_score(fit_data):
    images, labels = fit_data
    est = DenseCellSegmenter(steps=15, filters=8, backbone_channels=16, random_state=0)
    est.fit(images, labels)
    assert est.num_classes_ == 5
    assert encode(est.genotype_) == encode(aspp_genotype())
    assert 0.0 <= est.val_miou_ <= 1.0
    preds = est.predict(images[:3])
    assert preds.shape == (3, 64, 64)
    assert preds.dtype == np.int64
    assert set(np.unique(preds)) <= set(range(5))
    score = est.score(images[:3], labels[:3])
    assert 0.0 <= score <= 1.0


def test_segmenter_predict_before_fit_raises(fit_data):
    images, _ = fit_data
    with pytest.raises(StateError):
        DenseCellSegmenter().predict(images[:1])


def test_segmenter_fit_is_deterministic(fit_data):
    images, labels = fit_data
    a = DenseCellSegmenter(steps=8, filters=8, backbone_channels=16, random_state=3)
    b = DenseCellSegmenter(steps=8, filters=8, backbone_channels=16, random_state=3)
    a.fit(images, labels)
    b.fit(images, labels)
    assert a.val_miou_ == b.val_miou_
    np.testing.assert_array_equal(a.predict(images[:2]), b.predict(images[:2]))


def test_segmenter_accepts_genotype_text(fit_data):
    images, labels = fit_data
    from dpcsearch.space import top1_genotype

    est = DenseCellSegmenter(
        genotype=encode(top1_genotype()), steps=6, filters=8, backbone_channels=16
    )
    est.fit(images, labels)
    assert est.genotype_ == top1_genotype()


# --- search estimator ---


def test_search_estimator_end_to_end(fit_data):
    images, labels = fit_data
    est = DenseCellSearch(
        budget=6,
        rerank_k=2,
        proxy_steps=10,
        filters=8,
        backbone_channels=16,
        random_state=1,
    )
    est.fit(images, labels)
    assert len(est.trials_) == 6
    assert len(est.rerank_results_) == 2
    assert est.best_genotype_ is not None
    assert 0.0 <= est.best_score_ <= 1.0
    assert est.full_steps is None  # constructor args stay untouched
    preds = est.predict(images[:2])
    assert preds.shape == (2, 64, 64)
    assert 0.0 <= est.score(images[:4], labels[:4]) <= 1.0
    # winner refit reproduces the rerank score exactly
    best = [r for r in est.rerank_results_ if encode(r.genotype) == encode(est.best_genotype_)][0]
    assert est.val_miou_ == best.rerank_score


def test_search_estimator_clone_and_params():
    est = DenseCellSearch(budget=9, exploit_prob=0.25)
    est2 = clone(est)
    assert est2.get_params()["budget"] == 9
    assert est2.get_params()["exploit_prob"] == 0.25


def test_search_estimator_predict_before_fit(fit_data):
    images, _ = fit_data
    with pytest.raises(StateError):
        DenseCellSearch().predict(images[:1])
