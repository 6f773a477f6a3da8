"""Inference-time scoring, object-to-frame aggregation and frame-level AUROC."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch
from scipy.stats import rankdata

from .context_vit import ContextViT, mask_tensor, object_seed, sample_mask
from .datagen import CUBE_LEN
from .objectives import ScoreWeights, anomaly_score, flow_loss, pred_loss

CSV_FIELDS = ("video_id", "frame_index", "track_id", "l_masked", "l_whole", "l_partial",
              "l_pred", "l_recon", "score", "label")


@dataclass
class ScoreRecord:
    video_id: str
    frame_index: int
    track_id: str
    l_masked: float
    l_whole: float
    l_partial: float
    l_pred: float
    l_recon: float
    score: float
    label: int = 0

    def reweighted(self, weights: ScoreWeights) -> "ScoreRecord":
        return replace(self, score=float(anomaly_score(self.l_pred, self.l_recon, weights)))


@torch.no_grad()
def appearance_losses(model: ContextViT, cubes: torch.Tensor, metas, mask_draws: int = 1,
                      batch_size: int = 256) -> np.ndarray:
    """(N, 3) array of [l_masked, l_whole, l_partial], each averaged over mask draws.

    Draw ``d`` for an object uses the seed derived from (video, frame, track, d).
    """
    if mask_draws < 1:
        raise ValueError("mask_draws must be >= 1")
    model.eval()
    cfg = model.config
    draws = mask_draws if cfg.uses_mask else 1
    out = np.zeros((cubes.shape[0], 3), dtype=np.float64)
    for d in range(draws):
        for s in range(0, cubes.shape[0], batch_size):
            batch = cubes[s : s + batch_size]
            mask = None
            if cfg.uses_mask:
                mask = mask_tensor([
                    sample_mask(cfg.mask_ratio, object_seed(v, f, t, d))
                    for v, f, t in metas[s : s + batch_size]
                ])
            losses = pred_loss(model(batch[:, :4], mask), batch)
            out[s : s + batch.shape[0]] += torch.stack(
                [losses.l_masked, losses.l_whole, losses.l_partial], dim=1
            ).double().numpy()
    return out / draws


@torch.no_grad()
def motion_losses(model, flows: torch.Tensor, batch_size: int = 512) -> np.ndarray:
    model.eval()
    out = []
    for s in range(0, flows.shape[0], batch_size):
        batch = flows[s : s + batch_size]
        out.append(flow_loss(model(batch), batch).double().numpy())
    return np.concatenate(out) if out else np.zeros(0)


def score_cubes(cubes, flows, metas, labels, appearance_model=None, motion_model=None,
                weights: ScoreWeights = ScoreWeights(), mask_draws: int = 1) -> list[ScoreRecord]:
    """Score every object. ``metas`` is a list of (video_id, frame_index, track_id)."""
    cubes = torch.as_tensor(np.asarray(cubes, dtype=np.float32))
    flows = torch.as_tensor(np.asarray(flows, dtype=np.float32))
    n = cubes.shape[0]
    app = appearance_losses(appearance_model, cubes, metas, mask_draws) if appearance_model else np.zeros((n, 3))
    mot = motion_losses(motion_model, flows) if motion_model else np.zeros(n)
    records = []
    for i, (video_id, frame_index, track_id) in enumerate(metas):
        l_masked, l_whole, l_partial = (float(x) for x in app[i])
        l_pred = l_masked + l_whole + l_partial
        l_recon = float(mot[i])
        records.append(ScoreRecord(
            video_id, int(frame_index), track_id, l_masked, l_whole, l_partial, l_pred, l_recon,
            float(anomaly_score(l_pred, l_recon, weights)), int(labels[i]),
        ))
    return records


def score_object(cube, flow, appearance_model, motion_model, weights: ScoreWeights,
                 mask_draws: int = 1, meta=("v000", 0, "s0n0"), label: int = 0) -> ScoreRecord:
    cube = np.asarray(getattr(cube, "frames", cube))[None]
    flow = np.asarray(getattr(flow, "values", flow))[None]
    return score_cubes(cube, flow, [meta], [label], appearance_model, motion_model, weights, mask_draws)[0]


def score_dataset(dataset, appearance_model=None, motion_model=None,
                  weights: ScoreWeights = ScoreWeights(), mask_draws: int = 1, arrays=None):
    cubes, flows = arrays if arrays is not None else dataset.arrays()
    entries = dataset.manifest.entries
    metas = [(e["video_id"], e["frame_index"], e["track_id"]) for e in entries]
    labels = [e["label"] for e in entries]
    return score_cubes(cubes, flows, metas, labels, appearance_model, motion_model, weights, mask_draws)


# ------------------------------------------------------------ frame level


def aggregate_frame_scores(scores, how: str = "max") -> float:
    scores = list(scores)
    if not scores:
        return 0.0
    if how == "max":
        return float(max(scores))
    if how == "mean":
        return float(np.mean(scores))
    raise ValueError(f"unknown aggregation {how!r}")


def normalize_per_video(scores) -> np.ndarray:
    """Min-max rescale to [0, 1]; a constant series maps to zeros."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        return s
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.zeros_like(s)
    return (s - lo) / (hi - lo)


def frame_series(records, frame_labels: dict, how: str = "max", normalize: bool = True) -> dict:
    """Per-video lists of (frame_index, score, label) over every frame that can end a cube.

    Frames without any scored object get 0 before normalization.
    """
    by_frame: dict[tuple[str, int], list[float]] = {}
    for r in records:
        by_frame.setdefault((r.video_id, r.frame_index), []).append(r.score)
    series = {}
    for video_id in sorted(frame_labels):
        labels = frame_labels[video_id]
        frames = list(range(CUBE_LEN - 1, len(labels)))
        scores = np.array([aggregate_frame_scores(by_frame.get((video_id, f), ()), how) for f in frames])
        if normalize:
            scores = normalize_per_video(scores)
        series[video_id] = [(f, float(s), int(labels[f])) for f, s in zip(frames, scores)]
    return series


def auroc(scores, labels) -> float:
    """Tie-aware rank statistic: P(pos > neg) + P(pos == neg) / 2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"AUROC needs both classes; got {n_pos} positive and {n_neg} negative labels")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pooled_auroc(series: dict) -> float:
    scores = [s for rows in series.values() for _, s, _ in rows]
    labels = [l for rows in series.values() for _, _, l in rows]
    return auroc(scores, labels)


def evaluate(records, frame_labels, weights: ScoreWeights | None = None, how: str = "max",
             normalize: bool = True) -> tuple[float, dict]:
    if weights is not None:
        records = [r.reweighted(weights) for r in records]
    series = frame_series(records, frame_labels, how, normalize)
    return pooled_auroc(series), series


def error_map(prediction, ground_truth) -> np.ndarray:
    """Per-pixel squared error summed over channels: (3, H, W) x 2 -> (H, W)."""
    p = np.asarray(prediction, dtype=np.float64)
    g = np.asarray(ground_truth, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    return ((p - g) ** 2).sum(axis=0)


def records_to_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in sorted(records, key=lambda r: (r.video_id, r.frame_index, r.track_id)):
        d = asdict(r)
        writer.writerow([d[k] if not isinstance(d[k], float) else repr(d[k]) for k in CSV_FIELDS])
    return buf.getvalue()


def records_from_csv(text: str) -> list[ScoreRecord]:
    rows = csv.DictReader(io.StringIO(text))
    out = []
    for row in rows:
        out.append(ScoreRecord(
            row["video_id"], int(row["frame_index"]), row["track_id"],
            *(float(row[k]) for k in ("l_masked", "l_whole", "l_partial", "l_pred", "l_recon", "score")),
            int(row["label"]),
        ))
    return out
