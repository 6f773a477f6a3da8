"""Convolutional autoencoder over 2x32x32 object-level flow maps."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

FLOW_SHAPE = (2, 32, 32)


@dataclass(frozen=True)
class CAEConfig:
    channels: tuple[int, int, int] = (32, 64, 128)
    latent_dim: int = 256

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.latent_dim >= self.channels[-1] * 4 * 4:
            raise ValueError("latent_dim must be smaller than the flattened feature map")


class MotionCAE(nn.Module):
    """Three stride-2 conv stages (32 -> 16 -> 8 -> 4), a linear bottleneck, and a mirrored decoder."""

    def __init__(self, config: CAEConfig | None = None, **kwargs):
        super().__init__()
        config = config or CAEConfig(**kwargs)
        self.config = config
        c1, c2, c3 = config.channels
        self.encoder = nn.Sequential(
            nn.Conv2d(2, c1, 3, stride=2, padding=1), nn.GELU(),
            nn.Conv2d(c1, c2, 3, stride=2, padding=1), nn.GELU(),
            nn.Conv2d(c2, c3, 3, stride=2, padding=1), nn.GELU(),
        )
        flat = c3 * 4 * 4
        self.to_latent = nn.Linear(flat, config.latent_dim)
        self.from_latent = nn.Linear(config.latent_dim, flat)
        self.decoder = nn.Sequential(
            nn.GELU(),
            nn.ConvTranspose2d(c3, c2, 4, stride=2, padding=1), nn.GELU(),
            nn.ConvTranspose2d(c2, c1, 4, stride=2, padding=1), nn.GELU(),
            nn.ConvTranspose2d(c1, 2, 4, stride=2, padding=1),
        )

    def forward(self, flow: torch.Tensor) -> torch.Tensor:
        if flow.dim() == 3:
            flow = flow.unsqueeze(0)
        if tuple(flow.shape[1:]) != FLOW_SHAPE:
            raise ValueError(f"expected (B, 2, 32, 32) flow, got {tuple(flow.shape)}")
        h = self.encoder(flow)
        z = self.to_latent(h.flatten(1))
        h = self.from_latent(z).view(h.shape)
        out = self.decoder(h)
        if not torch.isfinite(out).all():
            raise FloatingPointError("non-finite activations in the flow autoencoder")
        return out

    def latent_size(self) -> int:
        return self.config.latent_dim

    def arch(self) -> dict:
        d = asdict(self.config)
        d["channels"] = list(d["channels"])
        return d
