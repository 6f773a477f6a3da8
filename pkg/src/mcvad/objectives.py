"""Prediction loss, flow reconstruction loss and the fused anomaly score.

Every squared-error term is a mean over elements, so appearance (3072 values
per frame) and flow (2048 values) errors live on comparable scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

AVENUE_WEIGHTS = (2.0, 1.0)
PED2_WEIGHTS = (0.05, 0.94)


@dataclass
class LossBreakdown:
    """Per-sample loss terms, each a (B,) tensor. Disabled streams are zeros."""

    l_whole: torch.Tensor
    l_partial: torch.Tensor
    l_masked: torch.Tensor

    @property
    def l_pred(self) -> torch.Tensor:
        return self.l_whole + self.l_partial + self.l_masked

    def mean(self) -> dict[str, float]:
        return {
            "l_whole": float(self.l_whole.detach().mean()),
            "l_partial": float(self.l_partial.detach().mean()),
            "l_masked": float(self.l_masked.detach().mean()),
            "l_pred": float(self.l_pred.detach().mean()),
        }


@dataclass(frozen=True)
class ScoreWeights:
    lambda_a: float = AVENUE_WEIGHTS[0]
    lambda_o: float = AVENUE_WEIGHTS[1]

    def __post_init__(self):
        if self.lambda_a < 0 or self.lambda_o < 0:
            raise ValueError("score weights must be non-negative")
        if self.lambda_a == 0 and self.lambda_o == 0:
            raise ValueError("score weights cannot both be zero")


def _mse(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).pow(2).flatten(1).mean(dim=1)


def pred_loss(bundle, cube: torch.Tensor) -> LossBreakdown:
    """Three-term prediction loss for a batch of cubes (B, 5, 3, 32, 32).

    The masked term sums, over hidden positions only, the per-frame mean
    squared error of the first decoder's reconstructions.
    """
    if cube.dim() == 4:
        cube = cube.unsqueeze(0)
    if cube.shape[1] != 5:
        raise ValueError(f"expected 5-frame cubes, got {tuple(cube.shape)}")
    if torch.isnan(cube).any():
        raise ValueError("NaN in target frames")
    target = cube[:, 4]
    zero = cube.new_zeros(cube.shape[0])

    l_whole = _mse(bundle.whole_future, target) if bundle.whole_future is not None else zero
    l_partial = _mse(bundle.partial_future, target) if bundle.partial_future is not None else zero
    l_masked = zero
    if bundle.decoded is not None and bool(bundle.mask.any()):
        per_frame = (bundle.decoded - cube[:, :4]).pow(2).flatten(2).mean(dim=2)
        l_masked = (per_frame * bundle.mask.to(per_frame.dtype)).sum(dim=1)
    for name, term in (("whole", l_whole), ("partial", l_partial), ("masked", l_masked)):
        if torch.isnan(term).any():
            raise ValueError(f"NaN in {name} prediction")
    return LossBreakdown(l_whole, l_partial, l_masked)


def flow_loss(recon: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Per-sample mean squared flow reconstruction error."""
    if recon.dim() == 3:
        recon = recon.unsqueeze(0)
    if gt.dim() == 3:
        gt = gt.unsqueeze(0)
    return _mse(recon, gt)


def anomaly_score(l_pred, l_recon, w: ScoreWeights):
    """Weighted sum of appearance and flow errors; works on floats or tensors."""
    for name, v in (("l_pred", l_pred), ("l_recon", l_recon)):
        if isinstance(v, torch.Tensor):
            bad = bool((v < 0).any()) or not bool(torch.isfinite(v).all())
        else:
            bad = v < 0 or not math.isfinite(v)
        if bad:
            raise ValueError(f"{name} must be finite and non-negative")
    return w.lambda_a * l_pred + w.lambda_o * l_recon
