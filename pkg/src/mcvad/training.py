"""Optimization loops for the appearance and motion branches.

The two branches are trained separately with AdamW and a cosine schedule
with warm restarts; the learning rate is set by hand every step from
:func:`lr_schedule`.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .context_vit import ContextViT, ViTConfig, n_masked, random_masks
from .motion_cae import CAEConfig, MotionCAE
from .objectives import flow_loss, pred_loss

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1.5e-4
    weight_decay: float = 0.05
    eps: float = 1e-8
    betas: tuple[float, float] = (0.9, 0.95)
    min_lr: float = 1e-5
    batch_size: int = 128
    epochs: int = 20
    masking_ratio: float = 0.75
    seed: int = 0
    t0_epochs: float = 5
    t_mult: float = 2.0
    grad_clip: float | None = 1.0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if not self.lr > self.min_lr > 0:
            raise ValueError("need lr > min_lr > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.t0_epochs <= 0 or self.t_mult < 1:
            raise ValueError("need t0_epochs > 0 and t_mult >= 1")


def lr_schedule(step: float, config: TrainConfig, steps_per_epoch: int = 1) -> float:
    """Cosine annealing with warm restarts.

    Cycle k covers steps (s_k, s_k + T_k]: it ends exactly at ``min_lr`` and
    the next step restarts near ``lr``. Step 0 gives ``lr``.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    period = config.t0_epochs * steps_per_epoch
    start = 0.0
    if config.t_mult == 1.0:
        if step > period:
            start = (math.ceil(step / period) - 1) * period
    else:
        while step > start + period:
            start += period
            period *= config.t_mult
    t = step - start
    return config.min_lr + 0.5 * (config.lr - config.min_lr) * (1.0 + math.cos(math.pi * t / period))


@dataclass
class TrainResult:
    model: torch.nn.Module
    log: list[dict] = field(default_factory=list)

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.log:
                fh.write(json.dumps(rec) + "\n")


def _as_tensor(data) -> torch.Tensor:
    if isinstance(data, torch.Tensor):
        return data.float()
    return torch.from_numpy(np.ascontiguousarray(data, dtype=np.float32))


def _optimizer(model, config: TrainConfig):
    return torch.optim.AdamW(model.parameters(), lr=config.lr, betas=config.betas,
                             eps=config.eps, weight_decay=config.weight_decay, fused=True)


def _fit(model, data: torch.Tensor, config: TrainConfig, loss_fn, ids=None) -> list[dict]:
    """Shared loop. ``loss_fn(model, batch, generator) -> (scalar loss, {term: value})``."""
    n = data.shape[0]
    if n == 0:
        raise TrainingError("empty training set")
    steps_per_epoch = math.ceil(n / config.batch_size)
    opt = _optimizer(model, config)
    gen = torch.Generator().manual_seed(config.seed)
    records = []
    step = 0
    model.train()
    for epoch in range(config.epochs):
        perm = torch.randperm(n, generator=gen)
        sums: dict[str, float] = {}
        lr = config.lr
        for b in range(steps_per_epoch):
            idx = perm[b * config.batch_size : (b + 1) * config.batch_size]
            lr = lr_schedule(step, config, steps_per_epoch)
            for group in opt.param_groups:
                group["lr"] = lr
            where = f"epoch {epoch}, batch {b}"
            if ids is not None:
                where += f", first item {ids[int(idx[0])]}"
            try:
                loss, terms = loss_fn(model, data[idx], gen)
            except (ValueError, FloatingPointError) as exc:
                raise TrainingError(f"{exc} at {where}") from exc
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at {where}")
            opt.zero_grad(set_to_none=False)
            loss.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            opt.step()
            step += 1
            for k, v in terms.items():
                sums[k] = sums.get(k, 0.0) + v * len(idx)
        rec = {"step": step, "epoch": epoch, "lr": lr}
        rec.update({k: v / n for k, v in sums.items()})
        records.append(rec)
        log.info("epoch %d %s", epoch, rec)
    model.eval()
    return records


def train_appearance(cubes, config: TrainConfig, vit_config: ViTConfig | None = None,
                     ids=None, labels=None) -> TrainResult:
    """Fit a ContextViT on normal cubes (N, 5, 3, 32, 32) with a fresh mask per cube per step."""
    if labels is not None and np.any(np.asarray(labels) != 0):
        raise TrainingError("appearance training data must contain only normal cubes")
    vit_config = vit_config or ViTConfig(mask_ratio=config.masking_ratio)
    torch.manual_seed(config.seed)
    model = ContextViT(vit_config)
    k = n_masked(vit_config.mask_ratio) if vit_config.uses_mask else 0

    def loss_fn(m, batch, gen):
        mask = random_masks(batch.shape[0], k, gen) if k else None
        losses = pred_loss(m(batch[:, :4], mask), batch)
        return losses.l_pred.mean(), losses.mean()

    records = _fit(model, _as_tensor(cubes), config, loss_fn, ids)
    return TrainResult(model, records)


def train_motion(flows, config: TrainConfig, cae_config: CAEConfig | None = None,
                 ids=None, labels=None) -> TrainResult:
    if labels is not None and np.any(np.asarray(labels) != 0):
        raise TrainingError("motion training data must contain only normal flows")
    torch.manual_seed(config.seed)
    model = MotionCAE(cae_config or CAEConfig())

    def loss_fn(m, batch, gen):
        loss = flow_loss(m(batch), batch).mean()
        return loss, {"l_recon": float(loss.detach())}

    records = _fit(model, _as_tensor(flows), config, loss_fn, ids)
    return TrainResult(model, records)


# ------------------------------------------------------------------ checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path, model, extra: dict | None = None) -> None:
    if isinstance(model, ContextViT):
        kind = "context_vit"
    elif isinstance(model, MotionCAE):
        kind = "motion_cae"
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    torch.save({
        "format_version": CHECKPOINT_VERSION,
        "kind": kind,
        "arch": model.arch(),
        "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "extra": dict(extra or {}),
    }, path)


def load_checkpoint(path, expected_kind: str | None = None):
    path = Path(path)
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {blob.get('format_version')}")
    kind = blob["kind"]
    if expected_kind and kind != expected_kind:
        raise ValueError(f"{path}: expected a {expected_kind} checkpoint, found {kind}")
    if kind == "context_vit":
        arch = dict(blob["arch"])
        arch["streams"] = tuple(arch["streams"])
        model = ContextViT(ViTConfig(**arch))
    elif kind == "motion_cae":
        model = MotionCAE(CAEConfig(**blob["arch"]))
    else:
        raise ValueError(f"{path}: unknown checkpoint kind {kind!r}")
    state = blob["state_dict"]
    own = model.state_dict()
    if set(state) != set(own):
        raise ValueError(f"{path}: parameter names differ from architecture "
                         f"(missing {sorted(set(own) - set(state))}, unexpected {sorted(set(state) - set(own))})")
    for name, tensor in state.items():
        if tensor.shape != own[name].shape:
            raise ValueError(f"{path}: {name} has shape {tuple(tensor.shape)}, expected {tuple(own[name].shape)}")
    model.load_state_dict(state)
    model.eval()
    return model


def config_dict(config) -> dict:
    d = asdict(config)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
