"""Scikit-learn style front door.

``DenseCellSegmenter`` trains one cell (plus backbone) end to end on
(images, labels) and predicts label maps. ``DenseCellSearch`` runs the
whole search pipeline inside ``fit``: freeze a backbone, cache features
in memory, random-search genotypes on the proxy task, rerank the top
candidates with full training, and keep the winner as a fitted model.

Constructor arguments are stored verbatim (so ``get_params``/``clone``
behave); all work happens in ``fit``. Fitted attributes carry the usual
trailing underscore.
"""

from __future__ import annotations

from dataclasses import replace
from typing import List, Optional

import numpy as np
from sklearn.base import BaseEstimator

from .analysis import FidelityReport, fidelity_report
from .cells import ExecutableCell
from .engine.tensor import Tensor
from .errors import CorrelationUndefinedError, StateError
from .proxy.backbone import Backbone, BackboneConfig
from .proxy.cache import CachedFeatures, forward_features
from .proxy.metrics import IGNORE_LABEL, evaluate_miou
from .proxy.training import TrainConfig, predict_from_features, train_full
from .search import (
    CandidateEvaluator,
    FullTrainContext,
    SearchConfig,
    TrialRecord,
    best_so_far,
    rerank,
    run_search,
    select_top_k,
)
from .seeding import derive_seed
from .space import Genotype, SearchSpaceConfig, encode
from .validation import (
    as_genotype,
    check_images,
    check_labels,
    check_matching,
    infer_num_classes,
)


def _check_fitted(estimator, attr: str) -> None:
    if not hasattr(estimator, attr):
        raise StateError(
            f"{type(estimator).__name__} is not fitted yet; call fit first"
        )


def _predict_maps(cell: ExecutableCell, backbone: Backbone, X: np.ndarray) -> np.ndarray:
    """Label maps at image resolution, one image at a time."""
    out = np.empty((X.shape[0], X.shape[2], X.shape[3]), dtype=np.int64)
    for i in range(X.shape[0]):
        feats = backbone.forward(Tensor(X[i : i + 1])).data
        logits = predict_from_features(cell, feats, (X.shape[2], X.shape[3]))
        out[i] = logits.argmax(axis=1)[0]
    return out


class DenseCellSegmenter(BaseEstimator):
    """Semantic segmentation with one dense prediction cell.

    Parameters mirror the training configuration; ``genotype`` may be a
    Genotype, canonical JSON text, or None for the parallel baseline
    cell.
    """

    def __init__(
        self,
        genotype=None,
        filters: int = 32,
        backbone_channels: int = 32,
        backbone_stride: int = 4,
        steps: int = 300,
        batch_size: int = 4,
        base_lr: float = 0.01,
        lr_power: float = 0.9,
        momentum: float = 0.9,
        backbone_lr_scale: float = 1.0,
        random_state: int = 0,
    ) -> None:
        self.genotype = genotype
        self.filters = filters
        self.backbone_channels = backbone_channels
        self.backbone_stride = backbone_stride
        self.steps = steps
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.lr_power = lr_power
        self.momentum = momentum
        self.backbone_lr_scale = backbone_lr_scale
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.steps,
            batch_size=self.batch_size,
            base_lr=self.base_lr,
            lr_power=self.lr_power,
            momentum=self.momentum,
            backbone_lr_scale=self.backbone_lr_scale,
            seed=self.random_state,
        )

    def fit(self, X, y) -> "DenseCellSegmenter":
        X = check_images(X)
        y = check_labels(y)
        check_matching(X, y)
        genotype = as_genotype(self.genotype)
        num_classes = infer_num_classes(y)
        backbone = Backbone(
            BackboneConfig(
                in_channels=X.shape[1],
                out_channels=self.backbone_channels,
                stride=self.backbone_stride,
                seed=self.random_state,
            ),
            frozen=False,
        )
        cell, backbone, miou = train_full(
            genotype, X, y, num_classes, backbone, self._train_config(), self.filters
        )
        self.genotype_ = genotype
        self.cell_ = cell
        self.backbone_ = backbone
        self.num_classes_ = num_classes
        self.val_miou_ = float(miou)
        return self

    def predict(self, X) -> np.ndarray:
        _check_fitted(self, "cell_")
        X = check_images(X)
        return _predict_maps(self.cell_, self.backbone_, X)

    def score(self, X, y) -> float:
        """Mean IOU of predictions against y (void label ignored)."""
        _check_fitted(self, "cell_")
        X = check_images(X)
        y = check_labels(y)
        check_matching(X, y)

        def predict(batch: np.ndarray) -> np.ndarray:
            return _predict_maps(self.cell_, self.backbone_, batch)

        return evaluate_miou(predict, X, y, self.num_classes_, IGNORE_LABEL).miou


class DenseCellSearch(BaseEstimator):
    """Architecture search as an estimator: ``fit`` searches, reranks,
    and keeps the winning cell trained end to end."""

    def __init__(
        self,
        budget: int = 32,
        exploit_prob: float = 0.5,
        top_k: int = 10,
        rerank_k: int = 5,
        num_branches: int = 5,
        filters: int = 32,
        backbone_channels: int = 32,
        backbone_stride: int = 4,
        proxy_steps: int = 300,
        full_steps: Optional[int] = None,
        batch_size: int = 4,
        base_lr: float = 0.01,
        lr_power: float = 0.9,
        momentum: float = 0.9,
        random_state: int = 0,
        parallelism: int = 1,
    ) -> None:
        self.budget = budget
        self.exploit_prob = exploit_prob
        self.top_k = top_k
        self.rerank_k = rerank_k
        self.num_branches = num_branches
        self.filters = filters
        self.backbone_channels = backbone_channels
        self.backbone_stride = backbone_stride
        self.proxy_steps = proxy_steps
        self.full_steps = full_steps
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.lr_power = lr_power
        self.momentum = momentum
        self.random_state = random_state
        self.parallelism = parallelism

    def fit(self, X, y) -> "DenseCellSearch":
        X = check_images(X)
        y = check_labels(y)
        check_matching(X, y)
        num_classes = infer_num_classes(y)

        frozen = Backbone(
            BackboneConfig(
                in_channels=X.shape[1],
                out_channels=self.backbone_channels,
                stride=self.backbone_stride,
                seed=self.random_state,
            ),
            frozen=True,
        )
        cache = CachedFeatures(
            features=forward_features(X, frozen),
            labels=y,
            num_classes=num_classes,
            fingerprint="in-memory",
        )
        proxy_cfg = TrainConfig(
            steps=self.proxy_steps,
            batch_size=self.batch_size,
            base_lr=self.base_lr,
            lr_power=self.lr_power,
            momentum=self.momentum,
            seed=self.random_state,
        )
        space_cfg = SearchSpaceConfig(num_branches=self.num_branches, filters=self.filters)
        search_cfg = SearchConfig(
            budget=self.budget,
            exploit_prob=self.exploit_prob,
            top_k=self.top_k,
            rerank_k=self.rerank_k,
            seed=self.random_state,
            parallelism=self.parallelism,
        )
        evaluator = CandidateEvaluator(cache, proxy_cfg, self.filters)
        records = run_search(space_cfg, search_cfg, evaluator)

        top = select_top_k(records, self.rerank_k)
        full_steps = self.full_steps if self.full_steps is not None else 4 * self.proxy_steps
        full_cfg = replace(proxy_cfg, steps=full_steps)
        ctx = FullTrainContext(
            images=X,
            labels=y,
            num_classes=num_classes,
            backbone=frozen,
            train_cfg=full_cfg,
            filters=self.filters,
            seed=self.random_state,
        )
        reranked = rerank([t.genotype for t in top], ctx)

        score_by_key = {encode(r.genotype): r.rerank_score for r in reranked}
        try:
            self.fidelity_report_: Optional[FidelityReport] = fidelity_report(
                [t.proxy_score for t in top],
                [score_by_key[encode(t.genotype)] for t in top],
                [t.genotype for t in top],
            )
            self.fidelity_rho_ = self.fidelity_report_.rho
        except CorrelationUndefinedError:
            self.fidelity_report_ = None
            self.fidelity_rho_ = float("nan")

        winner = reranked[0]
        winner_seed = derive_seed(self.random_state, "rerank", encode(winner.genotype))
        cell, backbone, miou = train_full(
            winner.genotype,
            X,
            y,
            num_classes,
            frozen.trainable_copy(),
            replace(full_cfg, seed=winner_seed),
            self.filters,
        )

        self.trials_: List[TrialRecord] = records
        self.history_ = best_so_far(records)
        self.rerank_results_ = reranked
        self.best_genotype_ = winner.genotype
        self.best_score_ = winner.rerank_score
        self.num_classes_ = num_classes
        self.cell_ = cell
        self.backbone_ = backbone
        self.val_miou_ = float(miou)
        return self

    def predict(self, X) -> np.ndarray:
        _check_fitted(self, "cell_")
        X = check_images(X)
        return _predict_maps(self.cell_, self.backbone_, X)

    def score(self, X, y) -> float:
        _check_fitted(self, "cell_")
        X = check_images(X)
        y = check_labels(y)
        check_matching(X, y)

        def predict(batch: np.ndarray) -> np.ndarray:
            return _predict_maps(self.cell_, self.backbone_, batch)

        return evaluate_miou(predict, X, y, self.num_classes_, IGNORE_LABEL).miou
