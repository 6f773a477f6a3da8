import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from mcvad.context_vit import PredictionBundle
from mcvad.objectives import (
    AVENUE_WEIGHTS, PED2_WEIGHTS, ScoreWeights, anomaly_score, flow_loss, pred_loss,
)
from oracles import sum_sq_mean


def make_bundle(cube, masked=(0, 2), offset=0.0):
    mask = torch.zeros(1, 4, dtype=torch.bool)
    mask[0, list(masked)] = True
    return PredictionBundle(
        mask=mask,
        decoded=cube[:, :4] + offset,
        whole_future=cube[:, 4] + offset,
        partial_future=cube[:, 4] + offset,
    )


def test_perfect_prediction_gives_zero():
    cube = torch.rand(1, 5, 3, 32, 32)
    losses = pred_loss(make_bundle(cube), cube)
    for term in (losses.l_whole, losses.l_partial, losses.l_masked, losses.l_pred):
        assert float(term) == 0.0


def test_constant_offset_masked_term():
    cube = torch.rand(1, 5, 3, 32, 32, dtype=torch.float64)
    losses = pred_loss(make_bundle(cube, offset=0.1), cube)
    assert float(losses.l_masked) == pytest.approx(0.02, abs=1e-12)
    assert float(losses.l_whole) == pytest.approx(0.01, abs=1e-12)


def test_pred_loss_matches_elementwise_oracle():
    g = torch.Generator().manual_seed(0)
    cube = torch.rand(1, 5, 3, 32, 32, generator=g, dtype=torch.float64)
    bundle = PredictionBundle(
        mask=torch.tensor([[True, False, False, True]]),
        decoded=torch.rand(1, 4, 3, 32, 32, generator=g, dtype=torch.float64),
        whole_future=torch.rand(1, 3, 32, 32, generator=g, dtype=torch.float64),
        partial_future=torch.rand(1, 3, 32, 32, generator=g, dtype=torch.float64),
    )
    losses = pred_loss(bundle, cube)
    c = cube[0].numpy()
    expected_masked = sum_sq_mean(bundle.decoded[0, 0], c[0]) + sum_sq_mean(bundle.decoded[0, 3], c[3])
    expected_whole = sum_sq_mean(bundle.whole_future[0], c[4])
    expected_partial = sum_sq_mean(bundle.partial_future[0], c[4])
    assert float(losses.l_masked) == pytest.approx(expected_masked, abs=1e-6)
    assert float(losses.l_whole) == pytest.approx(expected_whole, abs=1e-6)
    assert float(losses.l_partial) == pytest.approx(expected_partial, abs=1e-6)
    assert float(losses.l_pred) == float(losses.l_whole + losses.l_partial + losses.l_masked)


def test_missing_streams_contribute_zero():
    cube = torch.rand(2, 5, 3, 32, 32)
    bundle = PredictionBundle(mask=torch.zeros(2, 4, dtype=torch.bool), whole_future=torch.zeros(2, 3, 32, 32))
    losses = pred_loss(bundle, cube)
    assert torch.equal(losses.l_partial, torch.zeros(2))
    assert torch.equal(losses.l_masked, torch.zeros(2))
    assert torch.equal(losses.l_pred, losses.l_whole)


def test_pred_loss_rejects_bad_input():
    cube = torch.rand(1, 5, 3, 32, 32)
    bundle = make_bundle(cube)
    bundle.whole_future = torch.zeros(1, 3, 16, 16)
    with pytest.raises(ValueError):
        pred_loss(bundle, cube)
    nan_cube = cube.clone()
    nan_cube[0, 4, 0, 0, 0] = float("nan")
    with pytest.raises(ValueError):
        pred_loss(make_bundle(cube), nan_cube)


def test_pred_loss_invariant_to_consistent_permutation():
    g = torch.Generator().manual_seed(1)
    cube = torch.rand(1, 5, 3, 32, 32, generator=g, dtype=torch.float64)
    decoded = torch.rand(1, 4, 3, 32, 32, generator=g, dtype=torch.float64)
    mask = torch.tensor([[True, True, False, False]])
    perm = [2, 0, 3, 1]
    a = pred_loss(PredictionBundle(mask=mask, decoded=decoded), cube)
    permuted_cube = torch.cat([cube[:, perm], cube[:, 4:]], dim=1)
    b = pred_loss(PredictionBundle(mask=mask[:, perm], decoded=decoded[:, perm]), permuted_cube)
    assert float(a.l_masked) == pytest.approx(float(b.l_masked), rel=1e-12)


def test_flow_loss_examples():
    gt = torch.randn(2, 32, 32)
    assert float(flow_loss(gt, gt)) == 0.0
    assert float(flow_loss(gt + 1, gt)) == pytest.approx(1.0, abs=1e-6)
    recon = torch.randn(2, 32, 32, dtype=torch.float64)
    assert float(flow_loss(recon, gt.double())) == pytest.approx(sum_sq_mean(recon, gt), abs=1e-6)
    with pytest.raises(ValueError):
        flow_loss(torch.zeros(2, 16, 16), gt)


def test_anomaly_score_dataset_weight_pairs():
    assert anomaly_score(0.3, 0.1, ScoreWeights(*AVENUE_WEIGHTS)) == pytest.approx(0.7, abs=1e-15)
    assert anomaly_score(0.0, 1.0, ScoreWeights(*PED2_WEIGHTS)) == 0.94


def test_anomaly_score_rejects_negative_and_bad_weights():
    with pytest.raises(ValueError):
        anomaly_score(-0.1, 0.2, ScoreWeights())
    with pytest.raises(ValueError):
        ScoreWeights(0.0, 0.0)
    with pytest.raises(ValueError):
        ScoreWeights(-1.0, 1.0)


def test_zero_flow_weight_keeps_appearance_order():
    rng = np.random.default_rng(0)
    l_pred = rng.random(50)
    l_recon = rng.random(50)
    s = np.array([anomaly_score(a, b, ScoreWeights(0.7, 0.0)) for a, b in zip(l_pred, l_recon)])
    assert np.array_equal(np.argsort(s), np.argsort(l_pred))


@settings(max_examples=50)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(0.01, 100), st.floats(0, 5), st.floats(0, 5))
def test_anomaly_score_is_linear(l_pred, l_recon, c, la, lo):
    if la == 0 and lo == 0:
        return
    w = ScoreWeights(la, lo)
    assert anomaly_score(c * l_pred, c * l_recon, w) == pytest.approx(c * anomaly_score(l_pred, l_recon, w), rel=1e-9, abs=1e-12)


def test_losses_zero_only_for_exact_match():
    gt = torch.zeros(1, 2, 32, 32, dtype=torch.float64)
    recon = gt.clone()
    recon[0, 1, 5, 5] = 1e-6
    assert float(flow_loss(recon, gt)) > 0
