"""Genotype definitions for the recursive multi-scale cell search space.

A cell is a sequence of branches. Branch ``i`` (1-based) picks one input
out of {cell input, outputs of branches 1..i-1}, encoded as an integer in
``[0, i-1]``, and one operator out of a fixed catalogue of 81:

* 1 plain 1x1 convolution,
* 64 atrous separable 3x3 convolutions (8 row rates x 8 column rates),
* 16 average pyramid poolings (4 row grids x 4 column grids).

Branch outputs are concatenated and fused by the compiled cell; here we
only deal with the symbolic description, its JSON form, and the sampling
and mutation moves used by random search.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from random import Random
from typing import Optional, Sequence

from .errors import ConfigError, GenotypeParseError, ValidationError

ATROUS_RATES = (1, 3, 6, 9, 12, 15, 18, 21)
POOL_GRIDS = (1, 2, 4, 8)

KIND_CONV1X1 = "conv1x1"
KIND_ATROUS = "atrous"
KIND_POOL = "pool"

NUM_OPERATORS = 1 + len(ATROUS_RATES) ** 2 + len(POOL_GRIDS) ** 2


@dataclass(frozen=True)
class Operator:
    """One catalogue entry. Unused rate/grid fields stay None."""

    kind: str
    rate_h: Optional[int] = None
    rate_w: Optional[int] = None
    grid_h: Optional[int] = None
    grid_w: Optional[int] = None

    def __post_init__(self) -> None:
        for field in (self.rate_h, self.rate_w, self.grid_h, self.grid_w):
            if field is not None and type(field) is not int:
                raise ValidationError(f"operator rates/grids must be ints, got {field!r}")
        if self.kind == KIND_CONV1X1:
            if not (self.rate_h is self.rate_w is self.grid_h is self.grid_w is None):
                raise ValidationError("conv1x1 operator takes no rate or grid arguments")
        elif self.kind == KIND_ATROUS:
            if self.grid_h is not None or self.grid_w is not None:
                raise ValidationError("atrous operator takes no grid arguments")
            if self.rate_h not in ATROUS_RATES or self.rate_w not in ATROUS_RATES:
                raise ValidationError(
                    f"atrous rates must come from {ATROUS_RATES}, "
                    f"got ({self.rate_h}, {self.rate_w})"
                )
        elif self.kind == KIND_POOL:
            if self.rate_h is not None or self.rate_w is not None:
                raise ValidationError("pool operator takes no rate arguments")
            if self.grid_h not in POOL_GRIDS or self.grid_w not in POOL_GRIDS:
                raise ValidationError(
                    f"pool grids must come from {POOL_GRIDS}, "
                    f"got ({self.grid_h}, {self.grid_w})"
                )
        else:
            raise ValidationError(f"unknown operator kind {self.kind!r}")

    def describe(self) -> str:
        """Short human-readable label, e.g. ``atrous(6x21)``."""
        if self.kind == KIND_CONV1X1:
            return "conv1x1"
        if self.kind == KIND_ATROUS:
            return f"atrous({self.rate_h}x{self.rate_w})"
        return f"pool({self.grid_h}x{self.grid_w})"


def conv1x1_op() -> Operator:
    return Operator(KIND_CONV1X1)


def atrous_op(rate_h: int, rate_w: int) -> Operator:
    return Operator(KIND_ATROUS, rate_h=rate_h, rate_w=rate_w)


def pool_op(grid_h: int, grid_w: int) -> Operator:
    return Operator(KIND_POOL, grid_h=grid_h, grid_w=grid_w)


def operator_from_index(index: int) -> Operator:
    """Map ``[0, 81)`` onto the catalogue.

    Index 0 is conv1x1; 1..64 are atrous rates in row-major order over
    (rate_h, rate_w); 65..80 are pool grids in row-major order over
    (grid_h, grid_w).
    """
    if not isinstance(index, int) or isinstance(index, bool):
        raise ValidationError(f"operator index must be an int, got {type(index).__name__}")
    if not 0 <= index < NUM_OPERATORS:
        raise ValidationError(f"operator index {index} outside [0, {NUM_OPERATORS})")
    if index == 0:
        return conv1x1_op()
    index -= 1
    n_rates = len(ATROUS_RATES)
    if index < n_rates * n_rates:
        return atrous_op(ATROUS_RATES[index // n_rates], ATROUS_RATES[index % n_rates])
    index -= n_rates * n_rates
    n_grids = len(POOL_GRIDS)
    return pool_op(POOL_GRIDS[index // n_grids], POOL_GRIDS[index % n_grids])


def operator_to_index(op: Operator) -> int:
    """Inverse of :func:`operator_from_index`."""
    if op.kind == KIND_CONV1X1:
        return 0
    if op.kind == KIND_ATROUS:
        n = len(ATROUS_RATES)
        return 1 + ATROUS_RATES.index(op.rate_h) * n + ATROUS_RATES.index(op.rate_w)
    n = len(POOL_GRIDS)
    base = 1 + len(ATROUS_RATES) ** 2
    return base + POOL_GRIDS.index(op.grid_h) * n + POOL_GRIDS.index(op.grid_w)


@dataclass(frozen=True)
class BranchSpec:
    """One branch: which earlier output to read (0 = cell input) and what
    operator to apply to it."""

    input: int
    op: Operator


@dataclass(frozen=True)
class Genotype:
    """Immutable cell description; hashable so duplicates are cheap to spot."""

    branches: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "branches", tuple(self.branches))

    @property
    def num_branches(self) -> int:
        return len(self.branches)


@dataclass(frozen=True)
class SearchSpaceConfig:
    """Degrees of freedom of the space itself.

    ``filters`` is the per-branch channel width used when a genotype is
    compiled; it does not change the space cardinality.
    """

    num_branches: int = 5
    filters: int = 32

    def __post_init__(self) -> None:
        if not isinstance(self.num_branches, int) or self.num_branches < 1:
            raise ConfigError(f"num_branches must be a positive int, got {self.num_branches!r}")
        if not isinstance(self.filters, int) or self.filters < 1:
            raise ConfigError(f"filters must be a positive int, got {self.filters!r}")


def cardinality(cfg: SearchSpaceConfig) -> int:
    """Exact number of distinct genotypes: B! * 81**B.

    The factorial counts the input wirings: branch i has i choices, so
    prod(i for i in 1..B) = B!.
    """
    b = cfg.num_branches
    return math.factorial(b) * NUM_OPERATORS**b


def validate(genotype: Genotype, cfg: SearchSpaceConfig) -> list:
    """Return a list of human-readable violations; empty means valid."""
    problems = []
    if not isinstance(genotype, Genotype):
        return [f"expected a Genotype, got {type(genotype).__name__}"]
    if genotype.num_branches != cfg.num_branches:
        problems.append(
            f"genotype has {genotype.num_branches} branches, config requires {cfg.num_branches}"
        )
    for i, branch in enumerate(genotype.branches, start=1):
        if not isinstance(branch, BranchSpec):
            problems.append(f"branch {i} is not a BranchSpec")
            continue
        if not isinstance(branch.input, int) or isinstance(branch.input, bool):
            problems.append(f"branch {i} input must be an int, got {branch.input!r}")
        elif not 0 <= branch.input <= i - 1:
            problems.append(
                f"branch {i} input {branch.input} outside [0, {i - 1}]"
            )
        if not isinstance(branch.op, Operator):
            problems.append(f"branch {i} operator is not an Operator")
    return problems


def require_valid(genotype: Genotype, cfg: SearchSpaceConfig) -> None:
    problems = validate(genotype, cfg)
    if problems:
        raise ValidationError("; ".join(problems))


def sample_uniform(rng: Random, cfg: SearchSpaceConfig) -> Genotype:
    """Draw a genotype uniformly over the whole space.

    Branch i's input is uniform over its i legal values and the operator
    uniform over the catalogue, independently per branch, which makes the
    joint draw uniform over all B! * 81**B genotypes.
    """
    branches = []
    for i in range(1, cfg.num_branches + 1):
        inp = rng.randrange(i)
        op = operator_from_index(rng.randrange(NUM_OPERATORS))
        branches.append(BranchSpec(inp, op))
    return Genotype(tuple(branches))


def mutate(genotype: Genotype, rng: Random, cfg: SearchSpaceConfig) -> Genotype:
    """Return a genotype at Hamming distance exactly 1.

    Picks a branch uniformly, then a mutable field of that branch
    uniformly (branch 1's input is pinned at 0, so only its operator can
    move), then resamples that field uniformly over its other legal
    values.
    """
    require_valid(genotype, cfg)
    idx = rng.randrange(cfg.num_branches)
    branch = genotype.branches[idx]
    fields = ["op"]
    if idx >= 1:
        fields.append("input")
    field = fields[rng.randrange(len(fields))]
    if field == "op":
        cur = operator_to_index(branch.op)
        draw = rng.randrange(NUM_OPERATORS - 1)
        new_op = operator_from_index(draw if draw < cur else draw + 1)
        new_branch = BranchSpec(branch.input, new_op)
    else:
        draw = rng.randrange(idx)
        new_input = draw if draw < branch.input else draw + 1
        new_branch = BranchSpec(new_input, branch.op)
    branches = list(genotype.branches)
    branches[idx] = new_branch
    return Genotype(tuple(branches))


def to_obj(genotype: Genotype) -> dict:
    """Plain-dict form of a genotype with fixed key order, used both for
    canonical text encoding and for embedding in JSON Lines records."""
    branches = []
    for branch in genotype.branches:
        op = branch.op
        if op.kind == KIND_CONV1X1:
            op_obj = {"kind": KIND_CONV1X1}
        elif op.kind == KIND_ATROUS:
            op_obj = {"kind": KIND_ATROUS, "rh": op.rate_h, "rw": op.rate_w}
        else:
            op_obj = {"kind": KIND_POOL, "gh": op.grid_h, "gw": op.grid_w}
        branches.append({"input": branch.input, "op": op_obj})
    return {"B": len(branches), "branches": branches}


def encode(genotype: Genotype) -> str:
    """Canonical one-line JSON text for a genotype.

    Key order and separators are fixed so equal genotypes always encode
    to byte-identical text.
    """
    return json.dumps(to_obj(genotype), separators=(",", ":"))


_OP_KEYS = {
    KIND_CONV1X1: {"kind"},
    KIND_ATROUS: {"kind", "rh", "rw"},
    KIND_POOL: {"kind", "gh", "gw"},
}


def _parse_op(obj, where: str) -> Operator:
    if not isinstance(obj, dict):
        raise GenotypeParseError(f"{where}: op must be an object")
    kind = obj.get("kind")
    if kind not in _OP_KEYS:
        raise GenotypeParseError(f"{where}: unknown op kind {kind!r}")
    extra = set(obj) - _OP_KEYS[kind]
    if extra:
        raise GenotypeParseError(f"{where}: unexpected op keys {sorted(extra)}")
    missing = _OP_KEYS[kind] - set(obj)
    if missing:
        raise GenotypeParseError(f"{where}: missing op keys {sorted(missing)}")
    try:
        if kind == KIND_CONV1X1:
            return conv1x1_op()
        if kind == KIND_ATROUS:
            return atrous_op(obj["rh"], obj["rw"])
        return pool_op(obj["gh"], obj["gw"])
    except ValidationError:
        raise


def decode(text: str) -> Genotype:
    """Parse genotype JSON text.

    Malformed JSON or wrong structure raises GenotypeParseError; text
    that parses but violates a domain rule (input out of range, illegal
    rate) raises ValidationError.
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GenotypeParseError(f"invalid JSON at position {exc.pos}: {exc.msg}") from exc
    return from_obj(obj)


def from_obj(obj) -> Genotype:
    """Build a genotype from its plain-dict form (see :func:`to_obj`)."""
    if not isinstance(obj, dict):
        raise GenotypeParseError("genotype text must be a JSON object")
    extra = set(obj) - {"B", "branches"}
    if extra:
        raise GenotypeParseError(f"unexpected top-level keys {sorted(extra)}")
    if "B" not in obj or "branches" not in obj:
        raise GenotypeParseError("genotype object needs keys 'B' and 'branches'")
    b = obj["B"]
    raw = obj["branches"]
    if not isinstance(b, int) or isinstance(b, bool) or b < 1:
        raise GenotypeParseError(f"'B' must be a positive int, got {b!r}")
    if not isinstance(raw, list):
        raise GenotypeParseError("'branches' must be a list")
    if len(raw) != b:
        raise ValidationError(f"'B' is {b} but {len(raw)} branches given")
    branches = []
    for i, entry in enumerate(raw, start=1):
        where = f"branch {i}"
        if not isinstance(entry, dict):
            raise GenotypeParseError(f"{where}: must be an object")
        extra = set(entry) - {"input", "op"}
        if extra:
            raise GenotypeParseError(f"{where}: unexpected keys {sorted(extra)}")
        if "input" not in entry or "op" not in entry:
            raise GenotypeParseError(f"{where}: needs keys 'input' and 'op'")
        inp = entry["input"]
        if not isinstance(inp, int) or isinstance(inp, bool):
            raise GenotypeParseError(f"{where}: input must be an int, got {inp!r}")
        if not 0 <= inp <= i - 1:
            raise ValidationError(f"{where}: input {inp} outside [0, {i - 1}]")
        branches.append(BranchSpec(inp, _parse_op(entry["op"], where)))
    return Genotype(tuple(branches))


def aspp_genotype(cfg: Optional[SearchSpaceConfig] = None) -> Genotype:
    """The fixed 5-branch parallel baseline cell inside this space.

    All branches read the cell input: a 1x1 conv, three square atrous
    convs at rates 6, 12, 18, and a global (1x1 grid) pooling branch.
    """
    if cfg is not None and cfg.num_branches != 5:
        raise ConfigError(
            f"the parallel baseline cell needs num_branches=5, config says {cfg.num_branches}"
        )
    ops = [conv1x1_op(), atrous_op(6, 6), atrous_op(12, 12), atrous_op(18, 18), pool_op(1, 1)]
    return Genotype(tuple(BranchSpec(0, op) for op in ops))


def enumerate_aspp_subspace() -> list:
    """All 31 non-empty subsets of the baseline cell's branches.

    Each subset keeps branch order and rewires every kept branch to the
    cell input (they already all read it), giving 2**5 - 1 genotypes with
    B from 1 to 5.
    """
    base = aspp_genotype().branches
    out = []
    for mask in range(1, 1 << len(base)):
        kept = tuple(
            BranchSpec(0, base[j].op) for j in range(len(base)) if mask >> j & 1
        )
        out.append(Genotype(kept))
    return out


def top1_genotype() -> Genotype:
    """Best found cell, transcribed from the published schematic.

    Shipped as package data; mostly-cascaded wiring with one branch on
    the raw cell input, which is what makes it cheaper than the parallel
    baseline at backbone width.
    """
    text = resources.files("dpcsearch.data").joinpath("top1_cell.json").read_text()
    return decode(text)


def genotype_key(genotype: Genotype) -> str:
    """Stable dedup key; equal iff the canonical encodings are equal."""
    return encode(genotype)


def genotype_hash(genotype: Genotype) -> str:
    """Short stable identifier (16 hex chars of the SHA-256 of the
    canonical encoding), used in CSV reports."""
    return hashlib.sha256(encode(genotype).encode()).hexdigest()[:16]
