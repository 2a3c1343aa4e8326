"""Search space: operator indexing, cardinality, sampling, mutation,
serialisation, and the hand-designed reference cells."""

import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpcsearch.errors import ConfigError, GenotypeParseError, ValidationError
from dpcsearch.space import (
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

# --- operators ---


def test_operator_counts():
    assert NUM_OPERATORS == 81
    assert len(ATROUS_RATES) == 8
    assert len(POOL_GRIDS) == 4
    assert NUM_OPERATORS == 1 + len(ATROUS_RATES) ** 2 + len(POOL_GRIDS) ** 2


def test_operator_index_bijection():
    seen = set()
    for idx in range(NUM_OPERATORS):
        op = operator_from_index(idx)
        assert operator_to_index(op) == idx
        assert op not in seen
        seen.add(op)
    assert len(seen) == NUM_OPERATORS


def test_operator_index_layout():
    assert operator_from_index(0) == conv1x1_op()
    assert operator_from_index(1) == atrous_op(1, 1)
    assert operator_from_index(2) == atrous_op(1, 3)
    assert operator_from_index(9) == atrous_op(3, 1)
    assert operator_from_index(64) == atrous_op(21, 21)
    assert operator_from_index(65) == pool_op(1, 1)
    assert operator_from_index(80) == pool_op(8, 8)


def test_operator_index_out_of_range():
    with pytest.raises(ValidationError):
        operator_from_index(-1)
    with pytest.raises(ValidationError):
        operator_from_index(81)


def test_operator_validation():
    with pytest.raises(ValidationError):
        Operator(kind="atrous", rate_h=2, rate_w=3)
    with pytest.raises(ValidationError):
        Operator(kind="pool", grid_h=3, grid_w=1)
    with pytest.raises(ValidationError):
        Operator(kind="conv1x1", rate_h=3)
    with pytest.raises(ValidationError):
        Operator(kind="atrous", rate_h=6.0, rate_w=6)
    with pytest.raises(ValidationError):
        Operator(kind="wavelet")


def test_operator_describe():
    assert conv1x1_op().describe() == "conv1x1"
    assert atrous_op(6, 21).describe() == "atrous(6x21)"
    assert pool_op(2, 4).describe() == "pool(2x4)"


# --- cardinality ---


def test_cardinality_default():
    assert cardinality(SearchSpaceConfig()) == 418_414_128_120


def test_cardinality_formula():
    for b in range(1, 7):
        cfg = SearchSpaceConfig(num_branches=b)
        assert cardinality(cfg) == math.factorial(b) * 81**b


def test_cardinality_matches_brute_force_for_one_branch():
    # B=1: input is forced to 0, so the count is exactly the operator count
    cfg = SearchSpaceConfig(num_branches=1)
    assert cardinality(cfg) == 81


# --- genotype validation ---


def test_validate_accepts_aspp():
    assert validate(aspp_genotype(), SearchSpaceConfig()) == []


def test_validate_rejects_bad_input_index():
    g = aspp_genotype()
    bad = Genotype(
        branches=(BranchSpec(0, conv1x1_op()),)
        + tuple(BranchSpec(5, b.op) for b in g.branches[1:])
    )
    problems = validate(bad, SearchSpaceConfig())
    assert problems
    with pytest.raises(ValidationError):
        from dpcsearch.space import require_valid

        require_valid(bad, SearchSpaceConfig())


def test_validate_rejects_wrong_branch_count():
    g = Genotype(branches=(BranchSpec(0, conv1x1_op()),))
    assert validate(g, SearchSpaceConfig()) != []


# --- sampling and mutation ---


def test_sample_uniform_is_valid_and_deterministic():
    cfg = SearchSpaceConfig()
    a = sample_uniform(random.Random(5), cfg)
    b = sample_uniform(random.Random(5), cfg)
    assert a == b
    assert validate(a, cfg) == []


def test_sample_uniform_covers_inputs():
    cfg = SearchSpaceConfig()
    rng = random.Random(0)
    seen_inputs = set()
    for _ in range(300):
        g = sample_uniform(rng, cfg)
        seen_inputs.update(b.input for b in g.branches)
    assert seen_inputs == {0, 1, 2, 3, 4}


def _hamming(a: Genotype, b: Genotype) -> int:
    d = 0
    for x, y in zip(a.branches, b.branches):
        d += x.input != y.input
        d += x.op != y.op
    return d


def test_mutate_is_hamming_one():
    cfg = SearchSpaceConfig()
    rng = random.Random(9)
    g = aspp_genotype()
    for _ in range(200):
        m = mutate(g, rng, cfg)
        assert _hamming(g, m) == 1
        assert validate(m, cfg) == []


def test_mutate_first_branch_never_changes_input():
    cfg = SearchSpaceConfig(num_branches=1)
    rng = random.Random(3)
    g = sample_uniform(rng, cfg)
    for _ in range(50):
        m = mutate(g, rng, cfg)
        assert m.branches[0].input == 0
        assert m.branches[0].op != g.branches[0].op


# --- encode / decode ---


def test_encode_decode_round_trip():
    g = aspp_genotype()
    assert decode(encode(g)) == g


def test_encode_key_order_is_stable():
    text = encode(aspp_genotype())
    assert text.startswith('{"B":5,"branches":[{"input":0,"op":{"kind":"conv1x1"}}')
    assert " " not in text


def test_decode_rejects_malformed_json():
    with pytest.raises(GenotypeParseError):
        decode("{not json")


def test_decode_rejects_missing_keys():
    with pytest.raises(GenotypeParseError):
        decode('{"B":1}')
    with pytest.raises(GenotypeParseError):
        decode('{"branches":[]}')


def test_decode_rejects_unknown_keys():
    obj = json.loads(encode(aspp_genotype()))
    obj["extra"] = 1
    with pytest.raises(GenotypeParseError):
        decode(json.dumps(obj))
    obj = json.loads(encode(aspp_genotype()))
    obj["branches"][0]["op"]["rh"] = 3
    with pytest.raises(GenotypeParseError):
        decode(json.dumps(obj))


def test_decode_rejects_domain_violations():
    obj = json.loads(encode(aspp_genotype()))
    obj["branches"][1]["op"]["rh"] = 2
    with pytest.raises(ValidationError):
        decode(json.dumps(obj))
    obj = json.loads(encode(aspp_genotype()))
    obj["branches"][1]["input"] = 7
    with pytest.raises(ValidationError):
        decode(json.dumps(obj))


def test_genotype_hash_is_short_hex():
    h = genotype_hash(aspp_genotype())
    assert len(h) == 16
    int(h, 16)


# --- reference cells ---


def test_aspp_genotype_structure():
    g = aspp_genotype()
    assert len(g.branches) == 5
    assert all(b.input == 0 for b in g.branches)
    kinds = [b.op.kind for b in g.branches]
    assert kinds == ["conv1x1", "atrous", "atrous", "atrous", "pool"]
    assert g.branches[4].op == pool_op(1, 1)


def test_aspp_genotype_rejects_other_branch_counts():
    with pytest.raises(ConfigError):
        aspp_genotype(SearchSpaceConfig(num_branches=3))


def test_aspp_subspace_has_31_members():
    members = enumerate_aspp_subspace()
    assert len(members) == 31
    assert len({encode(m) for m in members}) == 31
    full = aspp_genotype()
    assert any(len(m.branches) == 5 and m == full for m in members)
    for m in members:
        assert all(b.input == 0 for b in m.branches)
        assert validate(m, SearchSpaceConfig(num_branches=len(m.branches))) == []


def test_top1_genotype_is_valid():
    g = top1_genotype()
    assert validate(g, SearchSpaceConfig()) == []
    assert all(b.op.kind == "atrous" for b in g.branches)


# --- property tests ---


@given(st.integers(min_value=0, max_value=80))
def test_index_round_trip_property(idx):
    assert operator_to_index(operator_from_index(idx)) == idx


@settings(max_examples=200)
@given(st.integers(min_value=0, max_value=2**63 - 1))
def test_sampled_genotypes_always_round_trip(seed):
    cfg = SearchSpaceConfig()
    g = sample_uniform(random.Random(seed), cfg)
    assert validate(g, cfg) == []
    assert decode(encode(g)) == g


@settings(max_examples=200)
@given(st.integers(min_value=0, max_value=2**63 - 1))
def test_mutation_stays_in_space(seed):
    cfg = SearchSpaceConfig()
    r = random.Random(seed)
    g = sample_uniform(r, cfg)
    m = mutate(g, r, cfg)
    assert validate(m, cfg) == []
    assert _hamming(g, m) == 1
