"""Command-line entry point.

Subcommands cover the whole pipeline: gen-data, cache, search, rerank,
cost, analyze. One config file (TOML or JSON) drives everything; flags
override seeds/parallelism; all outputs land under --out.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python 3.10: stdlib has no tomllib
    import tomli as _toml

from .analysis import (
    branch_l1_norms,
    cost_comparison,
    cost_markdown,
    costs_csv,
    fidelity_report,
    importance_csv,
    score_histogram,
)
from .errors import ConfigError, DataError, DPCSearchError
from .proxy.backbone import Backbone, BackboneConfig
from .proxy.cache import build_cache, load_cache
from .proxy.data import SyntheticDatasetConfig, generate_dataset, load_dataset, save_dataset
from .proxy.training import TrainConfig, train_candidate
from .search import (
    CandidateEvaluator,
    FullTrainContext,
    SearchConfig,
    load_log,
    record_to_line,
    rerank,
    run_search,
    select_top_k,
)
from .space import SearchSpaceConfig, aspp_genotype, decode, encode, genotype_hash


@dataclass(frozen=True)
class RunConfig:
    dataset: SyntheticDatasetConfig
    backbone: BackboneConfig
    space: SearchSpaceConfig
    train: TrainConfig
    search: SearchConfig
    rerank_steps: int = 0  # 0 means 4x train.steps
    histogram_bins: int = 20

    def resolved_rerank_steps(self) -> int:
        return self.rerank_steps if self.rerank_steps > 0 else 4 * self.train.steps


_SECTIONS = {
    "dataset": (SyntheticDatasetConfig, ()),
    "backbone": (BackboneConfig, ("in_channels",)),
    "space": (SearchSpaceConfig, ()),
    "train": (TrainConfig, ()),
    "search": (SearchConfig, ()),
    "analyze": (None, ()),
}


def _build_section(name: str, cls, reserved, data: dict):
    allowed = {f.name for f in dataclasses.fields(cls)} - set(reserved)
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}"
        )
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad [{name}] section: {exc}") from exc


def load_config(path=None) -> RunConfig:
    """Build the run configuration from an optional TOML/JSON file; every
    omitted key keeps its documented default."""
    raw = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file missing: {path}")
        text = path.read_text()
        try:
            if path.suffix.lower() == ".json":
                raw = json.loads(text)
            else:
                raw = _toml.loads(text)
        except (json.JSONDecodeError, _toml.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table/object")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    for name, section in raw.items():
        if not isinstance(section, dict):
            raise ConfigError(f"config section [{name}] must be a table/object")

    search_raw = dict(raw.get("search", {}))
    rerank_steps = search_raw.pop("rerank_steps", 0)
    if not isinstance(rerank_steps, int) or rerank_steps < 0:
        raise ConfigError(f"search.rerank_steps must be an int >= 0, got {rerank_steps!r}")
    analyze_raw = dict(raw.get("analyze", {}))
    bins = analyze_raw.pop("bins", 20)
    if analyze_raw:
        raise ConfigError(
            f"unknown key(s) in [analyze]: {', '.join(sorted(analyze_raw))}"
        )
    if not isinstance(bins, int) or bins < 1:
        raise ConfigError(f"analyze.bins must be an int >= 1, got {bins!r}")

    return RunConfig(
        dataset=_build_section("dataset", SyntheticDatasetConfig, (), raw.get("dataset", {})),
        backbone=_build_section(
            "backbone", BackboneConfig, ("in_channels",), raw.get("backbone", {})
        ),
        space=_build_section("space", SearchSpaceConfig, (), raw.get("space", {})),
        train=_build_section("train", TrainConfig, (), raw.get("train", {})),
        search=_build_section("search", SearchConfig, (), search_raw),
        rerank_steps=rerank_steps,
        histogram_bins=bins,
    )


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg = replace(
            cfg,
            dataset=replace(cfg.dataset, seed=args.seed),
            backbone=replace(cfg.backbone, seed=args.seed),
            train=replace(cfg.train, seed=args.seed),
            search=replace(cfg.search, seed=args.seed),
        )
    if args.parallelism is not None:
        cfg = replace(cfg, search=replace(cfg.search, parallelism=args.parallelism))
    return cfg


def _prepare(args):
    cfg = _apply_overrides(load_config(args.config), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.config is not None:
        src = Path(args.config)
        (out / f"config{src.suffix.lower()}").write_text(src.read_text())
    (out / "config.resolved.json").write_text(
        json.dumps(dataclasses.asdict(cfg), indent=1, sort_keys=True)
    )
    return cfg, out


def cmd_gen_data(args) -> int:
    cfg, out = _prepare(args)
    dataset = generate_dataset(cfg.dataset)
    save_dataset(dataset, out / "dataset")
    print(
        f"wrote {len(dataset)} images "
        f"({cfg.dataset.image_h}x{cfg.dataset.image_w}, "
        f"{dataset.num_classes} classes) to {out / 'dataset'}"
    )
    return 0


def cmd_cache(args) -> int:
    cfg, out = _prepare(args)
    dataset_dir = out / "dataset"
    if not (dataset_dir / "manifest.json").exists():
        raise DataError(f"no dataset at {dataset_dir}; run gen-data first")
    dataset = load_dataset(dataset_dir)
    backbone = Backbone(cfg.backbone, frozen=True)
    cache = build_cache(dataset, backbone, out / "cache", force=args.force)
    n, c, fh, fw = cache.features.shape
    print(f"cached {n} feature maps ({c}x{fh}x{fw}) under {out / 'cache'}")
    return 0


def cmd_search(args) -> int:
    cfg, out = _prepare(args)
    cache_dir = out / "cache"
    if not (cache_dir / "manifest.json").exists():
        raise DataError(f"no feature cache at {cache_dir}; run cache first")
    cache = load_cache(cache_dir)
    log_path = out / "trials.jsonl"
    existing = load_log(log_path) if log_path.exists() else []
    if len(existing) > cfg.search.budget:
        raise ConfigError(
            f"existing log has {len(existing)} trials but budget is {cfg.search.budget}"
        )
    evaluator = CandidateEvaluator(cache, cfg.train, cfg.space.filters)
    start = time.perf_counter()
    with open(log_path, "a") as log_file:

        def on_record(record) -> None:
            log_file.write(record_to_line(record) + "\n")
            log_file.flush()

        records = run_search(cfg.space, cfg.search, evaluator, existing, on_record)
    elapsed = time.perf_counter() - start
    best = select_top_k(records, 1)[0]
    (out / "best.json").write_text(encode(best.genotype) + "\n")
    lines = ["trial_id,best_score"]
    running = float("-inf")
    for r in records:
        running = max(running, r.proxy_score)
        lines.append(f"{r.trial_id},{running!r}")
    (out / "best_so_far.csv").write_text("\n".join(lines) + "\n")
    failed = sum(r.failed for r in records)
    print(
        f"{len(records)} trials ({len(records) - len(existing)} new, {failed} failed) "
        f"in {elapsed:.1f}s; best proxy mIOU {best.proxy_score:.4f} "
        f"(trial {best.trial_id}); log {log_path}"
    )
    return 0


def cmd_rerank(args) -> int:
    cfg, out = _prepare(args)
    records = load_log(out / "trials.jsonl")
    k = args.k if args.k is not None else cfg.search.rerank_k
    top = select_top_k(records, k)
    dataset = load_dataset(out / "dataset")
    full_cfg = replace(cfg.train, steps=cfg.resolved_rerank_steps())
    ctx = FullTrainContext(
        images=dataset.images,
        labels=dataset.labels,
        num_classes=dataset.num_classes,
        backbone=Backbone(cfg.backbone, frozen=True),
        train_cfg=full_cfg,
        filters=cfg.space.filters,
        seed=cfg.search.seed,
    )
    results = rerank([t.genotype for t in top], ctx)
    score_by_key = {encode(r.genotype): r.rerank_score for r in results}
    report = fidelity_report(
        [t.proxy_score for t in top],
        [score_by_key[encode(t.genotype)] for t in top],
        [t.genotype for t in top],
    )
    (out / "fidelity.csv").write_text(report.to_csv())
    (out / "fidelity.md").write_text(report.to_markdown())
    winner = results[0]
    (out / "best_reranked.json").write_text(encode(winner.genotype) + "\n")
    print(
        f"reranked top {k}: rho={report.rho:.4f}; winner {genotype_hash(winner.genotype)} "
        f"full mIOU {winner.rerank_score:.4f} (proxy rank {report.winner_proxy_rank})"
    )
    return 0


def cmd_cost(args) -> int:
    cfg, out = _prepare(args)
    genotypes = [aspp_genotype()]
    names = ["aspp (baseline)"]
    for path in args.genotypes:
        text = Path(path).read_text()
        genotypes.append(decode(text))
        names.append(path)
    rows = cost_comparison(genotypes, args.in_channels, args.filters, args.height, args.width)
    (out / "costs.csv").write_text(
        costs_csv(rows, args.in_channels, args.filters, args.height, args.width)
    )
    print(
        f"costs at in_channels={args.in_channels}, filters={args.filters}, "
        f"{args.height}x{args.width} (branch convs only, head excluded):"
    )
    for name, row in zip(names, rows):
        print(
            f"  {name}: params={row.params} madds={row.madds} "
            f"(x{row.params_ratio:.3f}, x{row.madds_ratio:.3f} vs baseline)"
        )
    print(f"wrote {out / 'costs.csv'}")
    return 0


def cmd_analyze(args) -> int:
    cfg, out = _prepare(args)
    records = load_log(out / "trials.jsonl")
    histogram = score_histogram(records, cfg.histogram_bins)
    (out / "histogram.csv").write_text(histogram.to_csv())
    cache = load_cache(out / "cache")
    best = select_top_k(records, 1)[0]
    # best.seed, not cfg.train.seed: reproduce the logged trial exactly
    retrain_cfg = replace(cfg.train, seed=best.seed)
    cell, miou = train_candidate(best.genotype, cache, retrain_cfg, cfg.space.filters)
    importance = branch_l1_norms(cell)
    (out / "importance.csv").write_text(importance_csv(importance))
    print(f"score histogram over {int(histogram.counts.sum())} usable trials:")
    nonzero = [i for i, c in enumerate(histogram.counts) if c]
    for i in nonzero:
        print(f"  [{histogram.edges[i]:.2f}, {histogram.edges[i + 1]:.2f}): {histogram.counts[i]}")
    print(f"branch importance of best trial {best.trial_id} (proxy mIOU {miou:.4f}):")
    for s in importance:
        print(f"  branch {s.branch_index}: input={s.input} op={s.op} l1={s.l1_norm:.5f}")
    print(f"wrote {out / 'histogram.csv'} and {out / 'importance.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="TOML or JSON config file")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument(
        "--seed", type=int, default=None, help="override every section seed"
    )
    common.add_argument(
        "--parallelism", type=int, default=None, help="override search parallelism"
    )

    parser = argparse.ArgumentParser(
        prog="dpcsearch",
        description="Desk-scale architecture search for dense prediction cells",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write the synthetic dataset")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("cache", parents=[common], help="build the frozen-feature cache")
    p.add_argument("--force", action="store_true", help="rebuild a stale cache")
    p.set_defaults(func=cmd_cache)

    p = sub.add_parser("search", parents=[common], help="run or resume the proxy search")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("rerank", parents=[common], help="fully train the top candidates")
    p.add_argument("--k", type=int, default=None, help="how many top trials to rerank")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("cost", parents=[common], help="cost model comparison")
    p.add_argument("genotypes", nargs="*", help="genotype JSON files (baseline is implicit)")
    p.add_argument("--in-channels", type=int, default=2048)
    p.add_argument("--filters", type=int, default=256)
    p.add_argument("--height", type=int, default=33)
    p.add_argument("--width", type=int, default=33)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("analyze", parents=[common], help="histogram + branch importance")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DPCSearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 1)


if __name__ == "__main__":
    sys.exit(main())
