"""Frame-axis self-attention adapter.

Features ``(B, F, C, H, W)`` are turned into ``F`` tokens per clip and mixed
with a single-head scaled dot-product attention over the frame axis. The
output projection starts at zero, so a freshly injected adapter is the
identity map and the inflated video model reproduces the image model.

Two tokenizations are supported:

``literal``
    one token per frame holding the whole flattened feature map (C*H*W).
``spatial_shared``
    one token per frame *and* spatial position holding the C channels;
    attention runs independently at every pixel with shared weights.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass

import torch

from vidinflate.errors import ConfigError, NumericError, ShapeError

MODES = ("literal", "spatial_shared")
WEIGHT_NAMES = ("w_k", "w_o", "w_q", "w_v")


@dataclass(frozen=True)
class AdapterConfig:
    site: str
    token_dim: int
    proj_dim: int
    mode: str = "literal"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"adapter mode must be one of {MODES}, got {self.mode!r}")
        if self.token_dim < 1 or self.proj_dim < 1:
            raise ConfigError("adapter token_dim and proj_dim must be >= 1")

    def shapes(self) -> dict[str, tuple[int, int]]:
        inner = (self.token_dim, self.proj_dim)
        return {"w_q": inner, "w_k": inner, "w_v": inner, "w_o": (self.proj_dim, self.token_dim)}

    def numel(self) -> int:
        return 4 * self.token_dim * self.proj_dim


def init_adapter(cfg: AdapterConfig, generator: torch.Generator) -> dict[str, torch.Tensor]:
    """Q/K/V get fan-in uniform init; the output projection is all zeros."""
    bound = 1.0 / math.sqrt(cfg.token_dim)
    weights = {}
    for name in ("w_q", "w_k", "w_v"):
        u = torch.rand(cfg.shapes()[name], generator=generator, dtype=torch.float32)
        weights[name] = (2.0 * u - 1.0) * bound
    weights["w_o"] = torch.zeros(cfg.shapes()["w_o"], dtype=torch.float32)
    return weights


def softmax_rows(m: torch.Tensor) -> torch.Tensor:
    """Softmax over the last axis with max-subtraction."""
    m = torch.as_tensor(m)
    shifted = m - m.amax(dim=-1, keepdim=True)
    e = torch.exp(shifted)
    return e / e.sum(dim=-1, keepdim=True)


def attention_weights(tokens: torch.Tensor, w: Mapping[str, torch.Tensor]) -> torch.Tensor:
    """Row-stochastic ``(..., F, F)`` frame-to-frame weights for ``tokens`` of shape ``(..., F, D)``."""
    q = tokens @ w["w_q"]
    k = tokens @ w["w_k"]
    d = w["w_q"].shape[1]
    return softmax_rows(q @ k.transpose(-1, -2) / math.sqrt(d))


def to_tokens(features: torch.Tensor, mode: str) -> torch.Tensor:
    b, f, c, h, w = features.shape
    if mode == "literal":
        return features.reshape(b, f, c * h * w)
    return features.permute(0, 3, 4, 1, 2).reshape(b * h * w, f, c)


def from_tokens(tokens: torch.Tensor, shape: torch.Size, mode: str) -> torch.Tensor:
    b, f, c, h, w = shape
    if mode == "literal":
        return tokens.reshape(b, f, c, h, w)
    return tokens.reshape(b, h, w, f, c).permute(0, 3, 4, 1, 2)


def adapter_forward(w: Mapping[str, torch.Tensor], features: torch.Tensor, mode: str = "literal") -> torch.Tensor:
    if features.dim() != 5:
        raise ShapeError(f"adapter expects (B, F, C, H, W) features, got shape {tuple(features.shape)}")
    if mode not in MODES:
        raise ConfigError(f"adapter mode must be one of {MODES}, got {mode!r}")
    if not torch.isfinite(features).all():
        raise NumericError("non-finite input to temporal adapter")

    tokens = to_tokens(features, mode)
    if tokens.shape[-1] != w["w_q"].shape[0]:
        raise ShapeError(
            f"adapter token_dim {w['w_q'].shape[0]} does not match feature token size {tokens.shape[-1]} ({mode} mode)"
        )
    attn = attention_weights(tokens, w)
    mixed = attn @ (tokens @ w["w_v"])
    return features + from_tokens(mixed @ w["w_o"], features.shape, mode)
