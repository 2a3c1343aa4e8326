"""Random search with exploitation, trial logging, and reranking.

Each trial is drawn by a generator derived from (master seed, sample
index), so the schedule is stateless: a run resumes by replaying its log
and continuing from the next sample index, and at parallelism=1 two runs
with the same seed produce byte-identical logs. With probability
exploit_prob (once any usable trial exists) a sample mutates a uniform
pick from the current top-k instead of sampling the whole space.

Failed trials (non-finite loss) keep their slot with score 0 so the
budget accounting stays exact. Repeated genotypes are evaluated anyway
but flagged as duplicates.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, replace
from pathlib import Path
from random import Random
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericalError, ValidationError
from .proxy.backbone import Backbone
from .proxy.cache import CachedFeatures
from .proxy.training import TrainConfig, train_candidate, train_full
from .seeding import derive_seed
from .space import (
    Genotype,
    SearchSpaceConfig,
    encode,
    from_obj,
    mutate,
    sample_uniform,
    to_obj,
)


@dataclass(frozen=True)
class SearchConfig:
    budget: int = 200
    exploit_prob: float = 0.5
    top_k: int = 10
    rerank_k: int = 10
    seed: int = 0
    parallelism: int = 1

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise ConfigError(f"budget must be >= 1, got {self.budget}")
        if not 0 <= self.exploit_prob <= 1:
            raise ConfigError(f"exploit_prob must be in [0, 1], got {self.exploit_prob}")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if not 1 <= self.rerank_k <= self.budget:
            raise ConfigError(
                f"rerank_k must be in [1, budget={self.budget}], got {self.rerank_k}"
            )
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.parallelism < 1:
            raise ConfigError(f"parallelism must be >= 1, got {self.parallelism}")


@dataclass
class EvalOutcome:
    score: float
    steps: int
    wall_ms: int
    failed: bool


@dataclass
class TrialRecord:
    trial_id: int
    sample_index: int
    origin: str  # "uniform" | "near_best"
    parent_id: Optional[int]
    genotype: Genotype
    proxy_score: float
    seed: int
    steps: int
    wall_ms: int
    failed: bool
    duplicate: bool = False


@dataclass
class CandidateEvaluator:
    """Proxy-task scorer: trains a candidate on cached features.

    Picklable (the cache is plain arrays), so the same object drives
    in-process search and process-pool workers.
    """

    cache: CachedFeatures
    train_cfg: TrainConfig
    filters: int = 32

    def __call__(self, genotype: Genotype, seed: int) -> EvalOutcome:
        cfg = replace(self.train_cfg, seed=seed)
        start = time.perf_counter()
        try:
            _, miou = train_candidate(genotype, self.cache, cfg, self.filters)
            score, failed = float(miou), False
        except NumericalError:
            score, failed = 0.0, True
        wall_ms = int((time.perf_counter() - start) * 1000)
        return EvalOutcome(score=score, steps=cfg.steps, wall_ms=wall_ms, failed=failed)


def _usable_sorted(records: Sequence[TrialRecord]) -> List[TrialRecord]:
    usable = [r for r in records if not r.failed]
    return sorted(usable, key=lambda r: (-r.proxy_score, r.trial_id))


def select_top_k(records: Sequence[TrialRecord], k: int) -> List[TrialRecord]:
    """Best k usable trials, descending score, ties to the older trial."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    usable = _usable_sorted(records)
    if k > len(usable):
        raise ValidationError(
            f"k={k} exceeds the {len(usable)} usable (non-failed) trials"
        )
    return usable[:k]


def best_so_far(records: Sequence[TrialRecord]) -> List[float]:
    """Prefix maxima of proxy_score in trial order (failed trials count
    with their recorded 0)."""
    if not records:
        raise ValidationError("best_so_far needs a non-empty log")
    out = []
    best = float("-inf")
    for r in records:
        best = max(best, r.proxy_score)
        out.append(best)
    return out


def _sample_candidate(
    space_cfg: SearchSpaceConfig,
    search_cfg: SearchConfig,
    sample_index: int,
    records: Sequence[TrialRecord],
):
    """Draw genotype + origin + parent for one sample index. The pool is
    a snapshot of the top-k at sampling time."""
    rng = Random(derive_seed(search_cfg.seed, "sample", sample_index))
    pool = _usable_sorted(records)[: search_cfg.top_k]
    # the coin is drawn unconditionally so the uniform stream does not
    # depend on whether any trial has completed yet (pool snapshot lag
    # under parallelism must not perturb exploit_prob=0 schedules)
    coin = rng.random()
    if pool and coin < search_cfg.exploit_prob:
        parent = pool[rng.randrange(len(pool))]
        return mutate(parent.genotype, rng, space_cfg), "near_best", parent.trial_id
    return sample_uniform(rng, space_cfg), "uniform", None


def _guarded_eval(evaluate, genotype: Genotype, seed: int) -> EvalOutcome:
    try:
        return evaluate(genotype, seed)
    except NumericalError:
        return EvalOutcome(score=0.0, steps=0, wall_ms=0, failed=True)


_WORKER_EVALUATE = None


def _init_worker(evaluate) -> None:
    global _WORKER_EVALUATE
    _WORKER_EVALUATE = evaluate


def _run_worker(genotype: Genotype, seed: int) -> EvalOutcome:
    return _guarded_eval(_WORKER_EVALUATE, genotype, seed)


def run_search(
    space_cfg: SearchSpaceConfig,
    search_cfg: SearchConfig,
    evaluate: Callable[[Genotype, int], EvalOutcome],
    existing: Sequence[TrialRecord] = (),
    on_record: Optional[Callable[[TrialRecord], None]] = None,
) -> List[TrialRecord]:
    """Run (or resume) a search to exactly ``budget`` trials.

    ``existing`` is a previously recorded prefix (log replay);
    ``on_record`` fires once per new record, in append order, from the
    coordinating process only.
    """
    records = list(existing)
    if len(records) > search_cfg.budget:
        raise ValidationError(
            f"log already holds {len(records)} trials, budget is {search_cfg.budget}"
        )
    seen = set()
    for r in records:
        key = encode(r.genotype)
        expected = key in seen
        seen.add(key)
        if r.duplicate != expected:
            raise DataError(
                f"trial {r.trial_id} duplicate flag does not match replayed history"
            )
    next_sample = max((r.sample_index for r in records), default=-1) + 1

    def finish(genotype, origin, parent_id, sample_index, seed, outcome):
        key = encode(genotype)
        record = TrialRecord(
            trial_id=len(records),
            sample_index=sample_index,
            origin=origin,
            parent_id=parent_id,
            genotype=genotype,
            proxy_score=outcome.score,
            seed=seed,
            steps=outcome.steps,
            wall_ms=outcome.wall_ms,
            failed=outcome.failed,
            duplicate=key in seen,
        )
        seen.add(key)
        records.append(record)
        if on_record is not None:
            on_record(record)

    if search_cfg.parallelism == 1:
        while len(records) < search_cfg.budget:
            genotype, origin, parent_id = _sample_candidate(
                space_cfg, search_cfg, next_sample, records
            )
            seed = derive_seed(search_cfg.seed, "trial", next_sample)
            outcome = _guarded_eval(evaluate, genotype, seed)
            finish(genotype, origin, parent_id, next_sample, seed, outcome)
            next_sample += 1
        return records

    with ProcessPoolExecutor(
        max_workers=search_cfg.parallelism,
        initializer=_init_worker,
        initargs=(evaluate,),
    ) as executor:
        pending = {}
        while len(records) < search_cfg.budget or pending:
            while (
                len(records) + len(pending) < search_cfg.budget
                and len(pending) < search_cfg.parallelism
            ):
                genotype, origin, parent_id = _sample_candidate(
                    space_cfg, search_cfg, next_sample, records
                )
                seed = derive_seed(search_cfg.seed, "trial", next_sample)
                fut = executor.submit(_run_worker, genotype, seed)
                pending[fut] = (next_sample, genotype, origin, parent_id, seed)
                next_sample += 1
            done, _ = wait(pending, return_when=FIRST_COMPLETED)
            for fut in sorted(done, key=lambda f: pending[f][0]):
                sample_index, genotype, origin, parent_id, seed = pending.pop(fut)
                finish(genotype, origin, parent_id, sample_index, seed, fut.result())
    return records


@dataclass
class FullTrainContext:
    """Everything rerank needs to train one genotype end to end.

    ``backbone`` is a frozen template; each genotype trains a fresh
    unfrozen copy. ``train_cfg.steps`` should already be the full-train
    step count (conventionally 4x the proxy steps).
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    backbone: Backbone
    train_cfg: TrainConfig
    filters: int = 32
    seed: int = 0


@dataclass
class RerankResult:
    genotype: Genotype
    rerank_score: float
    failed: bool
    seed: int


def rerank(genotypes: Sequence[Genotype], ctx: FullTrainContext) -> List[RerankResult]:
    """Train every genotype fully and sort by the resulting mIOU.

    Per-genotype seeds derive from (context seed, canonical encoding), so
    the outcome does not depend on list order.
    """
    if not genotypes:
        raise ValidationError("rerank needs a non-empty genotype list")
    results = []
    for genotype in genotypes:
        seed = derive_seed(ctx.seed, "rerank", encode(genotype))
        cfg = replace(ctx.train_cfg, seed=seed)
        trainable = ctx.backbone.trainable_copy()
        try:
            _, _, miou = train_full(
                genotype,
                ctx.images,
                ctx.labels,
                ctx.num_classes,
                trainable,
                cfg,
                ctx.filters,
            )
            results.append(RerankResult(genotype, float(miou), False, seed))
        except NumericalError:
            results.append(RerankResult(genotype, 0.0, True, seed))
    return sorted(results, key=lambda r: -r.rerank_score)


def record_to_line(record: TrialRecord) -> str:
    """One JSON Lines record. wall_ms is written as 0 so logs from
    identically seeded runs are byte-identical; measured times live in
    memory and in the run summary, not the log."""
    obj = {
        "trial_id": record.trial_id,
        "sample_index": record.sample_index,
        "origin": record.origin,
        "parent_id": record.parent_id,
        "genotype": to_obj(record.genotype),
        "proxy_score": record.proxy_score,
        "seed": record.seed,
        "steps": record.steps,
        "wall_ms": 0,
        "failed": record.failed,
        "duplicate": record.duplicate,
    }
    return json.dumps(obj, separators=(",", ":"))


def record_from_line(line: str) -> TrialRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"bad trial log line: {exc}") from exc
    try:
        return TrialRecord(
            trial_id=obj["trial_id"],
            sample_index=obj["sample_index"],
            origin=obj["origin"],
            parent_id=obj["parent_id"],
            genotype=from_obj(obj["genotype"]),
            proxy_score=obj["proxy_score"],
            seed=obj["seed"],
            steps=obj["steps"],
            wall_ms=obj["wall_ms"],
            failed=obj["failed"],
            duplicate=obj.get("duplicate", False),
        )
    except KeyError as exc:
        raise DataError(f"trial log line missing field {exc}") from exc


def load_log(path) -> List[TrialRecord]:
    """Replay a JSONL trial log; trial ids must be dense from 0."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"trial log missing: {path}")
    records = []
    for lineno, line in enumerate(path.read_text().splitlines()):
        if not line.strip():
            continue
        record = record_from_line(line)
        if record.trial_id != len(records):
            raise DataError(
                f"{path}:{lineno + 1}: trial_id {record.trial_id}, expected {len(records)}"
            )
        records.append(record)
    return records
