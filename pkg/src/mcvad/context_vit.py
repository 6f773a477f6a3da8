"""Frame-token vision transformer with masked, whole-future and partial-future heads.

Each of the four input frames (3x32x32) is flattened into one token. Only the
visible tokens go through the deep encoder. The first shallow decoder sees the
full sequence (encoded visible tokens plus a learned mask token at hidden
positions) and reconstructs every frame; the whole-future head maps all four
reconstructions to frame t5. The second shallow decoder sees only the visible
tokens and its head predicts t5 from them alone.
"""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

N_INPUT = 4
FRAME_SHAPE = (3, 32, 32)
FRAME_DIM = 3 * 32 * 32
STREAMS = ("masked", "whole", "partial")


@dataclass(frozen=True)
class MaskPattern:
    masked: tuple[int, ...]
    ratio: float
    seed: int | None = None

    @property
    def all_indices(self) -> tuple[int, ...]:
        return tuple(range(N_INPUT))

    @property
    def visible(self) -> tuple[int, ...]:
        return tuple(i for i in range(N_INPUT) if i not in self.masked)


def n_masked(ratio: float) -> int:
    k = int(round(ratio * N_INPUT))
    if not 0.0 < ratio < 1.0 or k in (0, N_INPUT):
        raise ValueError(f"masking ratio {ratio} hides {k} of {N_INPUT} frames; need 1..{N_INPUT - 1}")
    return k


def sample_mask(ratio: float, seed: int) -> MaskPattern:
    k = n_masked(ratio)
    rng = np.random.default_rng(seed)
    masked = rng.choice(N_INPUT, size=k, replace=False)
    return MaskPattern(tuple(sorted(int(i) for i in masked)), ratio, seed)


def object_seed(video_id: str, frame_index: int, track_id: str, draw: int = 0) -> int:
    """Stable per-object seed for inference-time masking."""
    return zlib.crc32(f"{video_id}|{frame_index}|{track_id}|{draw}".encode())


def mask_tensor(masks) -> torch.Tensor:
    """Stack MaskPatterns (or index tuples) into a (B, 4) boolean tensor."""
    rows = []
    for m in masks:
        idx = m.masked if isinstance(m, MaskPattern) else m
        row = torch.zeros(N_INPUT, dtype=torch.bool)
        row[list(idx)] = True
        rows.append(row)
    return torch.stack(rows)


def random_masks(batch: int, k: int, generator: torch.Generator) -> torch.Tensor:
    order = torch.rand(batch, N_INPUT, generator=generator).argsort(dim=1)
    mask = torch.zeros(batch, N_INPUT, dtype=torch.bool)
    mask.scatter_(1, order[:, :k], True)
    return mask


@dataclass(frozen=True)
class ViTConfig:
    dim: int = 128
    encoder_depth: int = 4
    decoder_depth: int = 2
    heads: int = 4
    mlp_ratio: float = 4.0
    mask_ratio: float = 0.75
    streams: tuple[str, ...] = STREAMS

    def __post_init__(self):
        bad = set(self.streams) - set(STREAMS)
        if bad:
            raise ValueError(f"unknown streams {sorted(bad)}")
        object.__setattr__(self, "streams", tuple(s for s in STREAMS if s in self.streams))
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")
        if self.uses_mask:
            n_masked(self.mask_ratio)

    @property
    def uses_mask(self) -> bool:
        # no streams at all means plain future-frame prediction from all four frames
        return bool(self.streams)

    @property
    def n_visible(self) -> int:
        return N_INPUT - n_masked(self.mask_ratio) if self.uses_mask else N_INPUT


@dataclass
class PredictionBundle:
    """Outputs for a batch. Absent streams are None.

    ``decoded`` holds the first decoder's reconstructions at all four positions;
    the masked-frame predictions are its restriction to ``mask``.
    """

    mask: torch.Tensor  # (B, 4) bool, True = hidden
    decoded: torch.Tensor | None = None  # (B, 4, 3, 32, 32)
    whole_future: torch.Tensor | None = None  # (B, 3, 32, 32)
    partial_future: torch.Tensor | None = None
    encoded: torch.Tensor | None = None  # R: (B, n_visible, C)
    extras: dict = field(default_factory=dict)

    def masked_recons(self, i: int = 0) -> dict[int, torch.Tensor]:
        idx = torch.nonzero(self.mask[i]).flatten().tolist()
        return {m: self.decoded[i, m] for m in idx}


class Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        B, N, C = x.shape
        qkv = self.qkv(x).reshape(B, N, 3, self.heads, C // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv.unbind(0)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        x = (attn @ v).transpose(1, 2).reshape(B, N, C)
        return self.proj(x)


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, dim, heads, mlp_ratio=4.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class Stack(nn.Module):
    def __init__(self, dim, depth, heads, mlp_ratio):
        super().__init__()
        self.blocks = nn.ModuleList([Block(dim, heads, mlp_ratio) for _ in range(depth)])
        self.norm = nn.LayerNorm(dim)

    def forward(self, x):
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)


class ContextViT(nn.Module):
    def __init__(self, config: ViTConfig | None = None, **kwargs):
        super().__init__()
        config = config or ViTConfig(**kwargs)
        self.config = config
        C = config.dim
        streams = set(config.streams)

        self.embed = nn.Linear(FRAME_DIM, C)
        self.pos_embed = nn.Parameter(torch.zeros(1, N_INPUT, C))
        self.encoder = Stack(C, config.encoder_depth, config.heads, config.mlp_ratio)
        self.enc_proj = nn.Linear(C, C)

        self.has_first_decoder = not streams or bool(streams & {"masked", "whole"})
        if config.uses_mask and self.has_first_decoder:
            self.mask_token = nn.Parameter(torch.zeros(1, 1, C))
        if self.has_first_decoder:
            self.decoder_w = Stack(C, config.decoder_depth, config.heads, config.mlp_ratio)
            self.out_proj = nn.Linear(C, FRAME_DIM)
        if not streams or "whole" in streams:
            self.head_w = nn.Linear(N_INPUT * FRAME_DIM, FRAME_DIM)
        if "partial" in streams:
            self.decoder_p = Stack(C, config.decoder_depth, config.heads, config.mlp_ratio)
            self.out_proj_p = nn.Linear(C, FRAME_DIM)
            self.head_p = nn.Linear(config.n_visible * FRAME_DIM, FRAME_DIM)
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.trunc_normal_(m.weight, std=0.02)
                nn.init.zeros_(m.bias)
            elif isinstance(m, nn.LayerNorm):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        if hasattr(self, "mask_token"):
            nn.init.trunc_normal_(self.mask_token, std=0.02)

    @property
    def streams(self) -> tuple[str, ...]:
        return self.config.streams

    # -- pieces --------------------------------------------------------------

    def embed_frames(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, 4, 3, 32, 32) -> (B, 4, C) tokens with positional embeddings added."""
        if frames.dim() == 4:
            frames = frames.unsqueeze(0)
        if tuple(frames.shape[1:]) != (N_INPUT, *FRAME_SHAPE):
            raise ValueError(f"expected (B, 4, 3, 32, 32) input frames, got {tuple(frames.shape)}")
        return self.embed(frames.flatten(2)) + self.pos_embed

    def _check_mask(self, mask: torch.Tensor, batch: int) -> torch.Tensor:
        if mask.shape != (batch, N_INPUT):
            raise ValueError(f"mask must have shape ({batch}, {N_INPUT}), got {tuple(mask.shape)}")
        counts = mask.sum(dim=1)
        if bool((counts == N_INPUT).any()):
            raise ValueError("every input frame is masked; at least one must stay visible")
        expected = N_INPUT - self.config.n_visible
        if bool((counts != expected).any()):
            raise ValueError(
                f"mask hides {counts.tolist()} frames but the model is configured for {expected} "
                f"(ratio {self.config.mask_ratio})"
            )
        return mask

    def visible_index(self, mask: torch.Tensor) -> torch.Tensor:
        """(B, n_visible) indices of visible positions in temporal order."""
        order = torch.arange(N_INPUT).expand(mask.shape[0], -1)
        # masked positions sort to the end; stable sort keeps temporal order
        keys = mask.long() * N_INPUT + order
        return keys.sort(dim=1).values[:, : self.config.n_visible] % N_INPUT

    def encode_visible(self, tokens: torch.Tensor, mask: torch.Tensor):
        """Encode visible tokens; returns (R, assembled sequence or None)."""
        B, _, C = tokens.shape
        vis = self.visible_index(mask)
        visible_tokens = torch.gather(tokens, 1, vis.unsqueeze(-1).expand(-1, -1, C))
        R = self.enc_proj(self.encoder(visible_tokens))
        assembled = None
        if self.has_first_decoder:
            if self.config.uses_mask:
                fill = self.mask_token.expand(B, N_INPUT, C) + self.pos_embed
                assembled = fill.scatter(1, vis.unsqueeze(-1).expand(-1, -1, C), R)
            else:
                assembled = R
        return R, assembled

    def decode_masked(self, assembled: torch.Tensor) -> torch.Tensor:
        """(B, 4, C) -> (B, 4, 3, 32, 32) decoded frames at every position."""
        out = self.out_proj(self.decoder_w(assembled))
        if not torch.isfinite(out).all():
            raise FloatingPointError("non-finite activations in the masked-frame decoder")
        return out.view(-1, N_INPUT, *FRAME_SHAPE)

    def predict_whole(self, decoded: torch.Tensor) -> torch.Tensor:
        if tuple(decoded.shape[1:]) != (N_INPUT, *FRAME_SHAPE):
            raise ValueError(f"expected (B, 4, 3, 32, 32) decoded frames, got {tuple(decoded.shape)}")
        return self.head_w(decoded.flatten(1)).view(-1, *FRAME_SHAPE)

    def predict_partial(self, R: torch.Tensor) -> torch.Tensor:
        if R.shape[1] != self.config.n_visible:
            raise ValueError(
                f"partial head expects {self.config.n_visible} visible tokens, got {R.shape[1]}"
            )
        frames = self.out_proj_p(self.decoder_p(R))
        return self.head_p(frames.flatten(1)).view(-1, *FRAME_SHAPE)

    # -- composition ---------------------------------------------------------

    def forward(self, frames: torch.Tensor, mask: torch.Tensor | None = None) -> PredictionBundle:
        """frames: (B, 4, 3, 32, 32) inputs t1..t4 (a full 5-frame cube is accepted)."""
        if frames.dim() == 4:
            frames = frames.unsqueeze(0)
        if frames.shape[1] == N_INPUT + 1:
            frames = frames[:, :N_INPUT]
        B = frames.shape[0]
        if mask is None:
            if self.config.uses_mask:
                raise ValueError("this model masks its inputs; pass a mask")
            mask = torch.zeros(B, N_INPUT, dtype=torch.bool)
        elif not isinstance(mask, torch.Tensor):
            mask = mask_tensor([mask] if isinstance(mask, MaskPattern) else mask)
        if mask.shape[0] == 1 and B > 1:
            mask = mask.expand(B, -1)
        mask = self._check_mask(mask, B)

        tokens = self.embed_frames(frames)
        R, assembled = self.encode_visible(tokens, mask)
        bundle = PredictionBundle(mask=mask, encoded=R)
        if self.has_first_decoder:
            bundle.decoded = self.decode_masked(assembled)
            if hasattr(self, "head_w"):
                bundle.whole_future = self.predict_whole(bundle.decoded)
        if hasattr(self, "head_p"):
            bundle.partial_future = self.predict_partial(R)
        return bundle

    def component_parameter_counts(self) -> dict[str, int]:
        def count(module):
            return sum(p.numel() for p in module.parameters())

        counts = {"encoder": count(self.encoder)}
        if hasattr(self, "decoder_w"):
            counts["decoder_w"] = count(self.decoder_w)
        if hasattr(self, "decoder_p"):
            counts["decoder_p"] = count(self.decoder_p)
        return counts

    def arch(self) -> dict:
        d = asdict(self.config)
        d["streams"] = list(d["streams"])
        return d
