"""Text-conditioned super-resolution UNet, written as pure functions over a ParameterStore.

The same kernels serve images ``(N, C, H, W)`` and videos ``(B, F, C, H, W)``:
a video is folded to ``(B*F, C, H, W)``, pushed through the image network,
and unfolded again. Temporal adapters are the only layers that see the
frame axis; they hook in at the end of each configured stage.

Layout (``s`` in 2x, 4x, 8x, 16x; resolution of stage ``s`` is H/s)::

    stem -> down.2x -> down.4x -> down.8x -> down.16x -> mid
         -> up.16x -> up.8x -> up.4x -> up.2x -> out

Encoder stages downsample first and then run their residual blocks;
decoder stages concatenate the matching skip, run residual blocks, then
upsample.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections.abc import Callable
from dataclasses import asdict, dataclass, fields

import torch
import torch.nn.functional as F

from vidinflate.errors import ConfigError, ParameterError, ShapeError
from vidinflate.store import ParameterStore
from vidinflate.temporal_adapter import AdapterConfig, adapter_forward, init_adapter

STAGE_NAMES = ("2x", "4x", "8x", "16x")
STAGE_FACTORS = {"2x": 2, "4x": 4, "8x": 8, "16x": 16}
NORM_GROUPS = 8
ADAPTER_PREFIX = "adapter."
EMBED_STD = 1.0


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 32
    stage_multipliers: tuple[int, ...] = (1, 2, 2, 4)
    stage_names: tuple[str, ...] = STAGE_NAMES
    cross_attention_stages: tuple[str, ...] = ("16x",)
    res_blocks_per_stage: int = 1
    text_embed_dim: int = 32
    vocab_size: int = 32
    text_length: int = 6
    in_channels: int = 6
    out_channels: int = 3
    image_size: int = 32
    frames: int = 8
    adapter_sites: tuple[str, ...] = ("16x",)
    adapter_dim: int = 64
    adapter_mode: str = "literal"

    def __post_init__(self):
        for name in ("stage_multipliers", "stage_names", "cross_attention_stages", "adapter_sites"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if self.stage_names != STAGE_NAMES:
            raise ConfigError(f"stage_names must be {list(STAGE_NAMES)}")
        if len(self.stage_multipliers) != 4:
            raise ConfigError("exactly 4 stage multipliers are required (4 down + 4 up stages)")
        positive = ("base_channels", "res_blocks_per_stage", "text_embed_dim", "vocab_size", "text_length",
                    "in_channels", "out_channels", "image_size", "frames", "adapter_dim")
        for name in positive:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if any((not isinstance(m, int)) or m < 1 for m in self.stage_multipliers):
            raise ConfigError("stage multipliers must be positive integers")
        for ch in self.stage_channels():
            if ch % NORM_GROUPS:
                raise ConfigError(f"stage width {ch} is not divisible by {NORM_GROUPS} normalization groups")
        if self.in_channels != 2 * self.out_channels:
            raise ConfigError("in_channels must equal 2 * out_channels (noisy target + upsampled LR)")
        for group in ("cross_attention_stages", "adapter_sites"):
            unknown = [s for s in getattr(self, group) if s not in STAGE_NAMES]
            if unknown:
                raise ConfigError(f"{group} names unknown stages: {unknown}")
        if self.image_size % 16:
            raise ConfigError("image_size must be divisible by 16")
        if self.adapter_mode not in ("literal", "spatial_shared"):
            raise ConfigError(f"unknown adapter_mode {self.adapter_mode!r}")

    def stage_channels(self) -> list[int]:
        return [self.base_channels * m for m in self.stage_multipliers]

    @property
    def time_embed_dim(self) -> int:
        return 4 * self.base_channels

    def adapter_config(self, site: str) -> AdapterConfig:
        ch = self.stage_channels()[STAGE_NAMES.index(site)]
        side = self.image_size // STAGE_FACTORS[site]
        token_dim = ch * side * side if self.adapter_mode == "literal" else ch
        return AdapterConfig(site, token_dim, self.adapter_dim, self.adapter_mode)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {unknown}")
        return cls(**data)

    def fingerprint(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------- layout


def _conv(name, cin, cout, k):
    fan_in = cin * k * k
    return [(f"{name}.weight", (cout, cin, k, k), fan_in), (f"{name}.bias", (cout,), fan_in)]


def _linear(name, cin, cout, bias=True):
    spec = [(f"{name}.weight", (cout, cin), cin)]
    if bias:
        spec.append((f"{name}.bias", (cout,), cin))
    return spec


def _norm(name, ch):
    return [(f"{name}.weight", (ch,), "ones"), (f"{name}.bias", (ch,), "zeros")]


def _resblock(name, cin, cout, temb):
    spec = _norm(f"{name}.norm1", cin) + _conv(f"{name}.conv1", cin, cout, 3)
    spec += _linear(f"{name}.temb", temb, cout)
    spec += _norm(f"{name}.norm2", cout) + _conv(f"{name}.conv2", cout, cout, 3)
    if cin != cout:
        spec += _conv(f"{name}.skip", cin, cout, 1)
    return spec


def _cross_attn(name, ch, text_dim):
    return (
        _norm(f"{name}.norm", ch)
        + _linear(f"{name}.q", ch, ch, bias=False)
        + _linear(f"{name}.k", text_dim, ch, bias=False)
        + _linear(f"{name}.v", text_dim, ch, bias=False)
        + _linear(f"{name}.o", ch, ch)
    )


def image_layout(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str | int]]:
    """(name, shape, init) for every image-UNet parameter, in construction order.

    ``init`` is ``"ones"``, ``"zeros"``, ``"normal"`` or an integer fan-in for
    uniform initialization in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``.
    """
    b, temb, chans = cfg.base_channels, cfg.time_embed_dim, cfg.stage_channels()
    spec = [("text_embed.weight", (cfg.vocab_size, cfg.text_embed_dim), "normal")]
    spec += _linear("time_mlp.fc1", b, temb) + _linear("time_mlp.fc2", temb, temb)
    spec += _conv("stem", cfg.in_channels, b, 3)
    prev = b
    for s, ch in zip(STAGE_NAMES, chans):
        spec += _conv(f"down.{s}.downsample", prev, ch, 3)
        for j in range(cfg.res_blocks_per_stage):
            spec += _resblock(f"down.{s}.res{j}", ch, ch, temb)
            if s in cfg.cross_attention_stages:
                spec += _cross_attn(f"down.{s}.attn{j}", ch, cfg.text_embed_dim)
        prev = ch
    spec += _resblock("mid.res0", prev, prev, temb)
    for i in reversed(range(4)):
        s, ch = STAGE_NAMES[i], chans[i]
        for j in range(cfg.res_blocks_per_stage):
            spec += _resblock(f"up.{s}.res{j}", (prev + ch) if j == 0 else ch, ch, temb)
            if s in cfg.cross_attention_stages:
                spec += _cross_attn(f"up.{s}.attn{j}", ch, cfg.text_embed_dim)
        nxt = chans[i - 1] if i > 0 else b
        spec += _conv(f"up.{s}.upsample", ch, nxt, 3)
        prev = nxt
    spec += _norm("out.norm", b) + _conv("out.conv", b, cfg.out_channels, 3)
    return spec


def adapter_layout(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    spec = []
    for site in cfg.adapter_sites:
        acfg = cfg.adapter_config(site)
        for path in ("down", "up"):
            for wname, shape in acfg.shapes().items():
                spec.append((f"{ADAPTER_PREFIX}{site}.{path}.{wname}", shape))
    return spec


def is_adapter(name: str) -> bool:
    return name.startswith(ADAPTER_PREFIX)


def build_image_unet(config: ModelConfig, seed: int) -> ParameterStore:
    config.validate()
    gen = torch.Generator().manual_seed(seed)
    entries = {}
    for name, shape, init in image_layout(config):
        if init == "ones":
            entries[name] = torch.ones(shape)
        elif init == "zeros":
            entries[name] = torch.zeros(shape)
        elif init == "normal":
            entries[name] = torch.randn(shape, generator=gen) * EMBED_STD
        else:
            bound = 1.0 / math.sqrt(init)
            entries[name] = (2.0 * torch.rand(shape, generator=gen) - 1.0) * bound
    return ParameterStore(entries, config)


def init_adapters(config: ModelConfig, seed: int) -> dict[str, torch.Tensor]:
    gen = torch.Generator().manual_seed(seed)
    entries = {}
    for site in config.adapter_sites:
        acfg = config.adapter_config(site)
        for path in ("down", "up"):
            for wname, tensor in init_adapter(acfg, gen).items():
                entries[f"{ADAPTER_PREFIX}{site}.{path}.{wname}"] = tensor
    return entries


# --------------------------------------------------------------------------- forward


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.to(torch.float32)[:, None] * freqs[None]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def _gn(p, name, h):
    return F.group_norm(h, NORM_GROUPS, p[f"{name}.weight"], p[f"{name}.bias"], eps=1e-5)


def _conv2d(p, name, h, stride=1):
    w = p[f"{name}.weight"]
    return F.conv2d(h, w, p[f"{name}.bias"], stride=stride, padding=w.shape[-1] // 2)


def _resblock_fwd(p, name, h, temb):
    out = _conv2d(p, f"{name}.conv1", F.silu(_gn(p, f"{name}.norm1", h)))
    out = out + F.linear(temb, p[f"{name}.temb.weight"], p[f"{name}.temb.bias"])[:, :, None, None]
    out = _conv2d(p, f"{name}.conv2", F.silu(_gn(p, f"{name}.norm2", out)))
    skip = _conv2d(p, f"{name}.skip", h) if f"{name}.skip.weight" in p else h
    return skip + out


def _cross_attn_fwd(p, name, h, ctx):
    n, c, hh, ww = h.shape
    x = _gn(p, f"{name}.norm", h).flatten(2).transpose(1, 2)
    q = F.linear(x, p[f"{name}.q.weight"])
    k = F.linear(ctx, p[f"{name}.k.weight"])
    v = F.linear(ctx, p[f"{name}.v.weight"])
    attn = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(c), dim=-1)
    out = F.linear(attn @ v, p[f"{name}.o.weight"], p[f"{name}.o.bias"])
    return h + out.transpose(1, 2).reshape(n, c, hh, ww)


StageHook = Callable[[torch.Tensor, str], torch.Tensor]


def _unet(p, cfg: ModelConfig, x, t, ids, hook: StageHook | None = None):
    temb = timestep_embedding(t, cfg.base_channels).to(x.dtype)
    temb = F.linear(F.silu(F.linear(temb, p["time_mlp.fc1.weight"], p["time_mlp.fc1.bias"])),
                    p["time_mlp.fc2.weight"], p["time_mlp.fc2.bias"])
    ctx = F.embedding(ids, p["text_embed.weight"])

    stem = _conv2d(p, "stem", x)
    h, skips = stem, []
    for s in STAGE_NAMES:
        h = _conv2d(p, f"down.{s}.downsample", h, stride=2)
        for j in range(cfg.res_blocks_per_stage):
            h = _resblock_fwd(p, f"down.{s}.res{j}", h, temb)
            if s in cfg.cross_attention_stages:
                h = _cross_attn_fwd(p, f"down.{s}.attn{j}", h, ctx)
        if hook is not None and s in cfg.adapter_sites:
            h = hook(h, f"{s}.down")
        skips.append(h)
    h = _resblock_fwd(p, "mid.res0", h, temb)
    for i in reversed(range(4)):
        s = STAGE_NAMES[i]
        h = torch.cat([h, skips[i]], dim=1)
        for j in range(cfg.res_blocks_per_stage):
            h = _resblock_fwd(p, f"up.{s}.res{j}", h, temb)
            if s in cfg.cross_attention_stages:
                h = _cross_attn_fwd(p, f"up.{s}.attn{j}", h, ctx)
        if hook is not None and s in cfg.adapter_sites:
            h = hook(h, f"{s}.up")
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = _conv2d(p, f"up.{s}.upsample", h)
    h = h + stem
    return _conv2d(p, "out.conv", F.silu(_gn(p, "out.norm", h)))


def _config_of(params) -> ModelConfig:
    cfg = getattr(params, "config", None)
    if cfg is None:
        raise ParameterError("parameter store carries no model config")
    return cfg


def _check_inputs(cfg: ModelConfig, x: torch.Tensor, t: torch.Tensor, ids: torch.Tensor, n: int):
    if x.shape[-3] != cfg.in_channels:
        raise ShapeError(f"expected {cfg.in_channels} input channels, got {x.shape[-3]}")
    if x.shape[-1] % 16 or x.shape[-2] % 16:
        raise ShapeError(f"spatial size {tuple(x.shape[-2:])} is not divisible by 16")
    if t.shape != (n,):
        raise ShapeError(f"timesteps must have shape ({n},), got {tuple(t.shape)}")
    if ids.dim() != 2 or ids.shape[0] != n:
        raise ShapeError(f"text ids must have shape ({n}, L), got {tuple(ids.shape)}")
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= cfg.vocab_size):
        raise ShapeError("text ids out of vocabulary range")


def forward_image(params, x: torch.Tensor, t: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
    """Noise prediction for an image batch ``(N, in_channels, H, W)``."""
    cfg = _config_of(params)
    if x.dim() != 4:
        raise ShapeError(f"image batch must be rank 4, got shape {tuple(x.shape)}")
    t, text = torch.as_tensor(t), torch.as_tensor(text)
    _check_inputs(cfg, x, t, text, x.shape[0])
    return _unet(params, cfg, x, t, text)


def fold_frames(v: torch.Tensor) -> torch.Tensor:
    if v.dim() != 5:
        raise ShapeError(f"video batch must be rank 5, got shape {tuple(v.shape)}")
    b, f = v.shape[:2]
    return v.reshape(b * f, *v.shape[2:])


def unfold_frames(x: torch.Tensor, frames: int) -> torch.Tensor:
    if x.shape[0] % frames:
        raise ShapeError(f"batch of {x.shape[0]} images does not split into clips of {frames} frames")
    return x.reshape(x.shape[0] // frames, frames, *x.shape[1:])


def adapter_weights(params, site_path: str) -> dict[str, torch.Tensor]:
    prefix = f"{ADAPTER_PREFIX}{site_path}."
    try:
        return {w: params[prefix + w] for w in ("w_q", "w_k", "w_v", "w_o")}
    except KeyError as exc:
        raise ParameterError(f"missing adapter parameter {exc.args[0]}") from None


def forward_video(params, v: torch.Tensor, t: torch.Tensor, text: torch.Tensor, adapters_enabled: bool = True):
    """Noise prediction for a clip batch ``(B, F, in_channels, H, W)``.

    ``t`` and ``text`` are per clip and broadcast over frames.
    """
    cfg = _config_of(params)
    if v.dim() != 5:
        raise ShapeError(f"video batch must be rank 5, got shape {tuple(v.shape)}")
    b, f = v.shape[:2]
    t, text = torch.as_tensor(t), torch.as_tensor(text)
    _check_inputs(cfg, v[:, 0], t, text, b)

    hook = None
    if adapters_enabled:
        weights = {f"{s}.{path}": adapter_weights(params, f"{s}.{path}")
                   for s in cfg.adapter_sites for path in ("down", "up")}

        def hook(h, site_path):
            return fold_frames(adapter_forward(weights[site_path], unfold_frames(h, f), cfg.adapter_mode))

    out = _unet(params, cfg, fold_frames(v), t.repeat_interleave(f), text.repeat_interleave(f, dim=0), hook)
    return unfold_frames(out, f)
