"""Desk-scale architecture search for dense prediction cells.

The package splits into a recursive search space over multi-scale
operators (:mod:`dpcsearch.space`), a small reverse-mode tensor engine
(:mod:`dpcsearch.engine`), a genotype compiler with an analytic cost
model (:mod:`dpcsearch.cells`), a cached-feature proxy task
(:mod:`dpcsearch.proxy`), random search with reranking
(:mod:`dpcsearch.search`), and result analysis
(:mod:`dpcsearch.analysis`). :mod:`dpcsearch.estimators` wraps the
pipeline in scikit-learn style estimators, and :mod:`dpcsearch.cli`
exposes everything as subcommands.
"""

from .cells import CostSummary, ExecutableCell, compile_cell, cost_summary
from .errors import (
    ConfigError,
    CorrelationUndefinedError,
    DataError,
    DPCSearchError,
    GenotypeParseError,
    NumericalError,
    ShapeError,
    StaleCacheError,
    StateError,
    ValidationError,
)
from .estimators import DenseCellSearch, DenseCellSegmenter
from .seeding import derive_seed
from .space import (
    ATROUS_RATES,
    NUM_OPERATORS,
    POOL_GRIDS,
    BranchSpec,
    Genotype,
    Operator,
    SearchSpaceConfig,
    aspp_genotype,
    atrous_op,
    cardinality,
    conv1x1_op,
    decode,
    encode,
    enumerate_aspp_subspace,
    genotype_hash,
    mutate,
    operator_from_index,
    operator_to_index,
    pool_op,
    sample_uniform,
    top1_genotype,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "ATROUS_RATES",
    "NUM_OPERATORS",
    "POOL_GRIDS",
    "BranchSpec",
    "ConfigError",
    "CorrelationUndefinedError",
    "CostSummary",
    "DPCSearchError",
    "DataError",
    "DenseCellSearch",
    "DenseCellSegmenter",
    "ExecutableCell",
    "Genotype",
    "GenotypeParseError",
    "NumericalError",
    "Operator",
    "SearchSpaceConfig",
    "ShapeError",
    "StaleCacheError",
    "StateError",
    "ValidationError",
    "__version__",
    "aspp_genotype",
    "atrous_op",
    "cardinality",
    "compile_cell",
    "conv1x1_op",
    "cost_summary",
    "decode",
    "derive_seed",
    "encode",
    "enumerate_aspp_subspace",
    "genotype_hash",
    "mutate",
    "operator_from_index",
    "operator_to_index",
    "pool_op",
    "sample_uniform",
    "top1_genotype",
    "validate",
]
