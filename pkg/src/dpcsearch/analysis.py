"""Post-hoc reporting: rank correlation, fidelity tables, score
histograms, branch importance, and cost comparisons."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .cells import ExecutableCell, cost_summary
from .errors import CorrelationUndefinedError, StateError, ValidationError
from .space import Genotype, genotype_hash


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks of ascending order; tied values share the mean of
    the rank positions they occupy."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(len(v), dtype=np.float64)
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pearson correlation of tie-averaged ranks."""
    if len(xs) != len(ys):
        raise ValidationError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise CorrelationUndefinedError(f"need >= 2 points, got {len(xs)}")
    rx = average_ranks(xs)
    ry = average_ranks(ys)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    vx = float((dx * dx).sum())
    vy = float((dy * dy).sum())
    if vx == 0.0 or vy == 0.0:
        raise CorrelationUndefinedError("zero rank variance (all values tied)")
    rho = float((dx * dy).sum() / np.sqrt(vx * vy))
    return max(-1.0, min(1.0, rho))


def _descending_positions(values: Sequence[float]) -> List[int]:
    """1-based position of each entry when sorted by value descending;
    ties keep input order."""
    order = sorted(range(len(values)), key=lambda i: (-values[i], i))
    position = [0] * len(values)
    for pos, idx in enumerate(order, start=1):
        position[idx] = pos
    return position


@dataclass
class FidelityRow:
    genotype_hash: str
    proxy_score: float
    rerank_score: float
    proxy_rank: int
    rerank_rank: int


@dataclass
class FidelityReport:
    rho: float
    rows: List[FidelityRow]
    winner_hash: str
    winner_proxy_rank: int

    def to_csv(self) -> str:
        lines = ["genotype_hash,proxy_score,rerank_score,proxy_rank,rerank_rank"]
        for r in self.rows:
            lines.append(
                f"{r.genotype_hash},{r.proxy_score!r},{r.rerank_score!r},"
                f"{r.proxy_rank},{r.rerank_rank}"
            )
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        out = [
            "# Proxy fidelity",
            "",
            f"Spearman rho (proxy vs full training): **{self.rho:.4f}** "
            f"over {len(self.rows)} candidates.",
            "",
            f"Full-training winner `{self.winner_hash}` was proxy rank "
            f"{self.winner_proxy_rank}.",
            "",
            "| genotype | proxy mIOU | full mIOU | proxy rank | full rank |",
            "|---|---|---|---|---|",
        ]
        for r in self.rows:
            out.append(
                f"| `{r.genotype_hash}` | {r.proxy_score:.4f} | {r.rerank_score:.4f} "
                f"| {r.proxy_rank} | {r.rerank_rank} |"
            )
        return "\n".join(out) + "\n"


def fidelity_report(
    proxy_scores: Sequence[float],
    rerank_scores: Sequence[float],
    genotypes: Sequence[Genotype],
) -> FidelityReport:
    """Scatter table + Spearman rho for aligned proxy/full scores."""
    if not len(proxy_scores) == len(rerank_scores) == len(genotypes):
        raise ValidationError(
            f"misaligned inputs: {len(proxy_scores)} proxy scores, "
            f"{len(rerank_scores)} rerank scores, {len(genotypes)} genotypes"
        )
    rho = spearman_rho(proxy_scores, rerank_scores)
    proxy_pos = _descending_positions(proxy_scores)
    rerank_pos = _descending_positions(rerank_scores)
    rows = [
        FidelityRow(
            genotype_hash=genotype_hash(g),
            proxy_score=float(p),
            rerank_score=float(f),
            proxy_rank=pp,
            rerank_rank=fp,
        )
        for g, p, f, pp, fp in zip(
            genotypes, proxy_scores, rerank_scores, proxy_pos, rerank_pos
        )
    ]
    winner_idx = rerank_pos.index(1)
    return FidelityReport(
        rho=rho,
        rows=rows,
        winner_hash=rows[winner_idx].genotype_hash,
        winner_proxy_rank=rows[winner_idx].proxy_rank,
    )


@dataclass
class Histogram:
    edges: np.ndarray  # bins + 1 edges over [0, 1]
    counts: np.ndarray

    def to_csv(self) -> str:
        lines = ["bin_lo,bin_hi,count"]
        for i in range(len(self.counts)):
            lines.append(f"{self.edges[i]!r},{self.edges[i + 1]!r},{int(self.counts[i])}")
        return "\n".join(lines) + "\n"


def score_histogram(records, bins: int) -> Histogram:
    """Counts of usable (non-failed) trial scores over [0, 1] split into
    equal bins; 1.0 falls in the last bin."""
    if bins < 1:
        raise ValidationError(f"bins must be >= 1, got {bins}")
    if not records:
        raise ValidationError("score_histogram needs a non-empty log")
    scores = [r.proxy_score for r in records if not r.failed]
    counts, edges = np.histogram(scores, bins=bins, range=(0.0, 1.0))
    return Histogram(edges=edges, counts=counts)


@dataclass
class BranchScore:
    branch_index: int  # 1-based
    input: int
    op: str
    l1_norm: float


def branch_l1_norms(cell: ExecutableCell) -> List[BranchScore]:
    """Importance of each branch as the mean |weight| of the classifier
    head over that branch's block of head-input channels (pooled over
    classes)."""
    head = getattr(cell, "head", None)
    if head is None or head.weight is None:
        raise StateError("cell has no classifier head")
    weights = head.weight.data
    b = cell.genotype.num_branches
    if weights.ndim != 2 or weights.shape[1] != b * cell.filters:
        raise StateError(
            f"head weights {weights.shape} do not cover {b} branches x {cell.filters} filters"
        )
    out = []
    for i, spec in enumerate(cell.genotype.branches):
        block = weights[:, i * cell.filters : (i + 1) * cell.filters]
        out.append(
            BranchScore(
                branch_index=i + 1,
                input=spec.input,
                op=spec.op.describe(),
                l1_norm=float(np.abs(block).mean()),
            )
        )
    return out


def importance_csv(scores: Sequence[BranchScore]) -> str:
    lines = ["branch_index,input,op,l1_norm"]
    for s in scores:
        lines.append(f"{s.branch_index},{s.input},{s.op},{s.l1_norm!r}")
    return "\n".join(lines) + "\n"


@dataclass
class CostRow:
    genotype_hash: str
    params: int
    madds: int
    params_ratio: float
    madds_ratio: float


def cost_comparison(
    genotypes: Sequence[Genotype],
    in_channels: int,
    filters: int,
    h: int,
    w: int,
) -> List[CostRow]:
    """Branch-only costs per genotype, with ratios relative to the first
    row (conventionally the parallel baseline)."""
    if not genotypes:
        raise ValidationError("cost_comparison needs at least one genotype")
    summaries = [cost_summary(g, in_channels, filters, h, w) for g in genotypes]
    base = summaries[0]
    rows = []
    for g, s in zip(genotypes, summaries):
        rows.append(
            CostRow(
                genotype_hash=genotype_hash(g),
                params=s.params,
                madds=s.madds,
                params_ratio=s.params / base.params,
                madds_ratio=s.madds / base.madds,
            )
        )
    return rows


def costs_csv(
    rows: Sequence[CostRow], in_channels: int, filters: int, h: int, w: int
) -> str:
    lines = ["genotype_hash,in_channels,filters,h,w,params,madds"]
    for r in rows:
        lines.append(
            f"{r.genotype_hash},{in_channels},{filters},{h},{w},{r.params},{r.madds}"
        )
    return "\n".join(lines) + "\n"


def cost_markdown(rows: Sequence[CostRow]) -> str:
    out = [
        "| genotype | params | madds | params ratio | madds ratio |",
        "|---|---|---|---|---|",
    ]
    for r in rows:
        out.append(
            f"| `{r.genotype_hash}` | {r.params} | {r.madds} "
            f"| {r.params_ratio:.3f} | {r.madds_ratio:.3f} |"
        )
    return "\n".join(out) + "\n"
