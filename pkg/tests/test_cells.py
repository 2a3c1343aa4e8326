"""Compiled cells: hand-composed forward oracle, parameter/MAdds
counting, determinism, and the ASPP cost comparison."""

import numpy as np
import pytest

from dpcsearch.cells import CostSummary, ExecutableCell, compile_cell, cost_summary
from dpcsearch.engine import Tensor, backward
from dpcsearch.errors import ValidationError
from dpcsearch.space import (
    BranchSpec,
    Genotype,
    aspp_genotype,
    atrous_op,
    conv1x1_op,
    pool_op,
    top1_genotype,
)

from .oracles import ref_bilinear_resize, ref_conv1x1, ref_depthwise_atrous3x3, ref_grid_avg_pool


def _relu(a):
    return a * (a > 0)


def test_compile_is_deterministic():
    g = aspp_genotype()
    a = compile_cell(g, in_channels=8, filters=4, num_classes=3, seed=5)
    b = compile_cell(g, in_channels=8, filters=4, num_classes=3, seed=5)
    for pa, pb in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)
    c = compile_cell(g, in_channels=8, filters=4, num_classes=3, seed=6)
    assert any(
        not np.array_equal(pa.data, pc.data) for pa, pc in zip(a.parameters(), c.parameters())
    )


def test_forward_returns_concat_and_logits(rng):
    cell = compile_cell(aspp_genotype(), in_channels=6, filters=4, num_classes=3, seed=0)
    x = Tensor(rng.standard_normal((2, 6, 8, 8)).astype(np.float32))
    concat, logits = cell.forward(x)
    assert concat.shape == (2, 20, 8, 8)
    assert logits.shape == (2, 3, 8, 8)


def test_forward_matches_hand_composition(rng):
    """Recompute a two-branch cell with the slow oracles: branch 1 is a
    separable atrous conv reading the input, branch 2 a pyramid pool
    reading branch 1's output."""
    g = Genotype(
        branches=(BranchSpec(0, atrous_op(3, 6)), BranchSpec(1, pool_op(2, 2)))
    )
    cell = compile_cell(g, in_channels=3, filters=4, num_classes=2, seed=9)
    x = rng.standard_normal((1, 3, 8, 8)).astype(np.float32)
    concat, logits = cell.forward(Tensor(x))

    b1 = cell.branches[0]
    y1 = ref_conv1x1(
        ref_depthwise_atrous3x3(
            x.astype(np.float64), b1.depthwise.weight.data.astype(np.float64), 3, 6
        ),
        b1.pointwise.weight.data.astype(np.float64),
        b1.pointwise.bias.data.astype(np.float64),
    )
    y1 = _relu(y1)
    b2 = cell.branches[1]
    pooled = ref_grid_avg_pool(y1, 2, 2)
    projected = ref_conv1x1(
        pooled,
        b2.pointwise.weight.data.astype(np.float64),
        b2.pointwise.bias.data.astype(np.float64),
    )
    y2 = _relu(ref_bilinear_resize(projected, 8, 8))
    merged = np.concatenate([y1, y2], axis=1)
    head = ref_conv1x1(merged, cell.head.weight.data.astype(np.float64),
                       cell.head.bias.data.astype(np.float64))

    np.testing.assert_allclose(concat.data, merged, rtol=0, atol=1e-4)
    np.testing.assert_allclose(logits.data, head, rtol=0, atol=1e-4)


def test_identity_conv_branch_passes_features_through(rng):
    # one conv1x1 branch with weight forced to identity and zero bias
    g = Genotype(branches=(BranchSpec(0, conv1x1_op()),))
    cell = compile_cell(g, in_channels=4, filters=4, num_classes=2, seed=0)
    cell.branches[0].pointwise.weight.data[:] = np.eye(4, dtype=np.float32)
    cell.branches[0].pointwise.bias.data[:] = 0
    x = np.abs(rng.standard_normal((1, 4, 5, 5))).astype(np.float32)
    concat, _ = cell.forward(Tensor(x))
    np.testing.assert_allclose(concat.data, x, rtol=0, atol=1e-6)


def test_cell_gradients_flow_to_all_parameters(rng):
    cell = compile_cell(top1_genotype(), in_channels=3, filters=4, num_classes=2, seed=1)
    x = Tensor(rng.standard_normal((1, 3, 8, 8)).astype(np.float32))
    _, logits = cell.forward(x)
    from dpcsearch.engine import softmax_xent_loss

    labels = rng.integers(0, 2, (1, 8, 8)).astype(np.int64)
    loss = softmax_xent_loss(logits, labels)
    backward(loss)
    for p in cell.parameters():
        assert p.grad is not None
        assert np.any(p.grad != 0)


# --- parameter counting ---


def _actual_param_count(cell: ExecutableCell) -> int:
    return sum(int(np.prod(p.data.shape)) for p in cell.parameters())


def test_count_params_matches_enumeration():
    for g in [aspp_genotype(), top1_genotype()]:
        for c_in, f, k in [(6, 4, 3), (32, 8, 5), (16, 16, 2)]:
            cell = compile_cell(g, in_channels=c_in, filters=f, num_classes=k, seed=0)
            assert cell.count_params() == _actual_param_count(cell)


def test_single_conv_branch_param_formula():
    g = Genotype(branches=(BranchSpec(0, conv1x1_op()),))
    cell = compile_cell(g, in_channels=8, filters=4, num_classes=3, seed=0)
    # branch: 8*4+4; head reads 4 channels: 4*3+3
    assert cell.count_params() == (8 * 4 + 4) + (4 * 3 + 3)


def test_param_worked_examples():
    """Hand-computed branch parameter counts at 320 input channels and
    256 filters (head excluded via cost_summary)."""
    conv_only = Genotype(branches=(BranchSpec(0, conv1x1_op()),))
    assert cost_summary(conv_only, 320, 256, 33, 33).params == 82_176

    # 9*320 depthwise taps + 320*256 pointwise + 256 bias
    atrous_only = Genotype(branches=(BranchSpec(0, atrous_op(3, 3)),))
    assert cost_summary(atrous_only, 320, 256, 33, 33).params == 9 * 320 + 320 * 256 + 256


def test_madds_worked_example():
    conv_only = Genotype(branches=(BranchSpec(0, conv1x1_op()),))
    assert cost_summary(conv_only, 320, 256, 33, 33).madds == 89_210_880


def test_madds_linear_in_pixels():
    # exact doubling needs a pool-free cell; the pool projection is
    # counted at grid resolution which does not scale with h
    g = top1_genotype()
    half = cost_summary(g, 64, 16, 8, 16)
    full = cost_summary(g, 64, 16, 16, 16)
    assert full.madds == 2 * half.madds


def test_cost_summary_excludes_head():
    g = Genotype(branches=(BranchSpec(0, conv1x1_op()),))
    s = cost_summary(g, in_channels=8, filters=4, feature_h=4, feature_w=4)
    assert s == CostSummary(params=8 * 4 + 4, madds=8 * 4 * 16)
    cell = compile_cell(g, in_channels=8, filters=4, num_classes=3, seed=0)
    assert cell.count_params() == s.params + (4 * 3 + 3)


def test_cost_summary_pool_madds_at_grid_resolution():
    g = Genotype(branches=(BranchSpec(0, pool_op(2, 2)),))
    s = cost_summary(g, in_channels=8, filters=4, feature_h=16, feature_w=16)
    # projection happens on the 2x2 map; resize costs 4 madds per output pixel
    assert s.madds == 8 * 4 * 2 * 2 + 4 * 4 * 16 * 16
    assert s.params == 8 * 4 + 4


def test_cost_summary_scales_with_resolution():
    g = aspp_genotype()
    a = cost_summary(g, 64, 16, 8, 8)
    b = cost_summary(g, 64, 16, 16, 16)
    assert b.params == a.params
    assert b.madds > a.madds


def test_aspp_costs_more_than_top1_at_paper_scale():
    aspp = cost_summary(aspp_genotype(), 2048, 256, 33, 33)
    top1 = cost_summary(top1_genotype(), 2048, 256, 33, 33)
    assert top1.params < aspp.params
    assert top1.madds < aspp.madds


def test_compile_rejects_invalid_genotype():
    bad = Genotype(branches=(BranchSpec(3, conv1x1_op()),))
    with pytest.raises(ValidationError):
        compile_cell(bad, in_channels=4, filters=4, num_classes=2, seed=0)


def test_cascaded_branch_reads_filters_channels(rng):
    g = Genotype(branches=(BranchSpec(0, conv1x1_op()), BranchSpec(1, conv1x1_op())))
    cell = compile_cell(g, in_channels=6, filters=4, num_classes=2, seed=0)
    assert cell.branches[0].pointwise.weight.shape == (4, 6)
    assert cell.branches[1].pointwise.weight.shape == (4, 4)
    x = Tensor(rng.standard_normal((1, 6, 4, 4)).astype(np.float32))
    concat, logits = cell.forward(x)
    assert concat.shape == (1, 8, 4, 4)
