"""Synthetic captioned moving-shape clips with area-downsampled LR pairs.

Each clip shows one square, circle or triangle translating at constant
velocity (with wraparound) over a plain gray background. Shapes are drawn
with 4x4 supersampling, so motion is sub-pixel and edges are antialiased.
Captions follow ``"<color> <shape> moving <direction>"``.

On disk a corpus is a directory holding ``manifest.json`` plus two raw
little-endian float32 blobs, ``hr.f32`` and ``lr.f32``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from vidinflate.errors import ConfigError, DataError, FormatError, ShapeError

COLORS = {
    "red": (0.90, 0.10, 0.10),
    "green": (0.10, 0.80, 0.20),
    "blue": (0.15, 0.25, 0.95),
    "yellow": (0.95, 0.90, 0.10),
    "cyan": (0.10, 0.85, 0.90),
    "magenta": (0.90, 0.15, 0.85),
}
SHAPES = ("square", "circle", "triangle")
DIRECTIONS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "up": (0.0, -1.0),
    "down": (0.0, 1.0),
    "up-left": (-1.0, -1.0),
    "up-right": (1.0, -1.0),
    "down-left": (-1.0, 1.0),
    "down-right": (1.0, 1.0),
}
SPEEDS = (0.5, 1.0, 1.5, 2.0, 2.5)
BACKGROUNDS = (0.0, 0.1, 0.2, 0.3)
VOCAB = ("<pad>", *COLORS, *SHAPES, "moving", *DIRECTIONS)
TOKEN_IDS = {word: i for i, word in enumerate(VOCAB)}
PAD_ID = 0
TEXT_LENGTH = 6
LR_FACTOR = 4
SUPERSAMPLE = 4
CORPUS_FORMAT = "vidinflate-corpus/1"


@dataclass(frozen=True)
class MotionSpec:
    shape: str
    color: str
    direction: str
    speed: float
    radius: float
    x: float
    y: float
    background: float

    def caption(self) -> str:
        return f"{self.color} {self.shape} moving {self.direction}"


@dataclass
class ClipRecord:
    clip_id: str
    hr: np.ndarray  # (1, F, C, H, W) float32
    lr: np.ndarray  # (1, F, C, H/4, W/4) float32
    caption: np.ndarray  # (TEXT_LENGTH,) int64
    motion_spec: MotionSpec


def encode_caption(caption: str, length: int = TEXT_LENGTH) -> np.ndarray:
    words = caption.split()
    if len(words) > length:
        raise DataError(f"caption {caption!r} longer than {length} tokens")
    try:
        ids = [TOKEN_IDS[w] for w in words]
    except KeyError as exc:
        raise DataError(f"word {exc.args[0]!r} not in vocabulary") from None
    return np.array(ids + [PAD_ID] * (length - len(ids)), dtype=np.int64)


def decode_caption(ids) -> dict[str, str]:
    """Parse token ids back into ``{"color", "shape", "direction"}``."""
    words = [VOCAB[int(i)] for i in ids if int(i) != PAD_ID]
    if len(words) != 4 or words[2] != "moving":
        raise DataError(f"token sequence {words} does not follow the caption template")
    color, shape, _, direction = words
    if color not in COLORS or shape not in SHAPES or direction not in DIRECTIONS:
        raise DataError(f"token sequence {words} does not follow the caption template")
    return {"color": color, "shape": shape, "direction": direction}


def _coverage(spec: MotionSpec, cx: float, cy: float, height: int, width: int) -> np.ndarray:
    s = SUPERSAMPLE
    ys = (np.arange(height * s) + 0.5) / s
    xs = (np.arange(width * s) + 0.5) / s
    # signed wrapped offsets from the shape center
    dx = np.mod(xs[None, :] - cx + width / 2, width) - width / 2
    dy = np.mod(ys[:, None] - cy + height / 2, height) - height / 2
    r = spec.radius
    if spec.shape == "circle":
        inside = dx**2 + dy**2 <= r**2
    elif spec.shape == "square":
        half = 0.85 * r
        inside = (np.abs(dx) <= half) & (np.abs(dy) <= half)
    else:
        inside = (dy >= -r) & (dy <= 0.7 * r) & (np.abs(dx) <= (dy + r) / 1.7)
    return inside.reshape(height, s, width, s).mean(axis=(1, 3))


def render_clip(spec: MotionSpec, frames: int, height: int, width: int) -> np.ndarray:
    """Render ``spec`` to a ``(F, 3, H, W)`` float32 clip in [0, 1]."""
    ux, uy = DIRECTIONS[spec.direction]
    norm = math.hypot(ux, uy)
    vx, vy = spec.speed * ux / norm, spec.speed * uy / norm
    color = np.array(COLORS[spec.color], dtype=np.float64)[:, None, None]
    clip = np.empty((frames, 3, height, width), dtype=np.float32)
    for f in range(frames):
        alpha = _coverage(spec, spec.x + f * vx, spec.y + f * vy, height, width)[None]
        clip[f] = spec.background * (1.0 - alpha) + color * alpha
    return clip


def downsample_lr(hr, factor: int = LR_FACTOR):
    """Area-average ``factor x factor`` blocks of the last two axes.

    Accepts numpy arrays or tensors; the mean is taken in float64 and cast
    back to the input dtype.
    """
    is_tensor = isinstance(hr, torch.Tensor)
    arr = hr.numpy() if is_tensor else np.asarray(hr)
    h, w = arr.shape[-2:]
    if h % factor or w % factor:
        raise ShapeError(f"spatial size {(h, w)} is not divisible by {factor}")
    blocks = arr.astype(np.float64).reshape(*arr.shape[:-2], h // factor, factor, w // factor, factor)
    out = blocks.mean(axis=(-3, -1)).astype(arr.dtype)
    return torch.from_numpy(out) if is_tensor else out


def random_motion(rng: np.random.Generator, height: int, width: int) -> MotionSpec:
    side = min(height, width)
    return MotionSpec(
        shape=SHAPES[rng.integers(len(SHAPES))],
        color=list(COLORS)[rng.integers(len(COLORS))],
        direction=list(DIRECTIONS)[rng.integers(len(DIRECTIONS))],
        speed=float(SPEEDS[rng.integers(len(SPEEDS))]),
        radius=float(rng.uniform(0.12, 0.25) * side),
        x=float(rng.uniform(0, width)),
        y=float(rng.uniform(0, height)),
        background=float(BACKGROUNDS[rng.integers(len(BACKGROUNDS))]),
    )


def make_record(clip_id: str, spec: MotionSpec, frames: int, height: int, width: int) -> ClipRecord:
    hr = render_clip(spec, frames, height, width)[None]
    return ClipRecord(clip_id, hr, downsample_lr(hr), encode_caption(spec.caption()), spec)


def generate_corpus(n_clips: int, F: int, H: int, W: int, seed: int) -> list[ClipRecord]:
    if n_clips < 0:
        raise ConfigError("n_clips must be non-negative")
    if F < 2:
        raise ConfigError(f"frames F must be >= 2, got {F}")
    if H < 16 or W < 16 or H % 16 or W % 16:
        raise ConfigError(f"H and W must be positive multiples of 16, got {H}x{W}")
    corpus = []
    for i in range(n_clips):
        rng = np.random.default_rng([seed, i])
        corpus.append(make_record(f"clip{i:05d}", random_motion(rng, H, W), F, H, W))
    return corpus


def split(corpus: list, fractions: list[float], seed: int) -> list[list]:
    """Disjoint slices of a seeded shuffle; slice k spans cumulative fractions k-1..k."""
    if any(f <= 0 for f in fractions) or sum(fractions) > 1.0 + 1e-12:
        raise ConfigError("fractions must be positive and sum to at most 1")
    order = np.random.default_rng(seed).permutation(len(corpus))
    bounds = np.rint(np.cumsum([0.0, *fractions]) * len(corpus)).astype(int)
    bounds = np.minimum(bounds, len(corpus))
    return [[corpus[j] for j in order[lo:hi]] for lo, hi in zip(bounds[:-1], bounds[1:])]


def collate(records: list[ClipRecord]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Stack records into (hr, lr, text) tensors."""
    if not records:
        raise DataError("cannot collate an empty batch")
    hr = torch.from_numpy(np.concatenate([r.hr for r in records]))
    lr = torch.from_numpy(np.concatenate([r.lr for r in records]))
    text = torch.from_numpy(np.stack([r.caption for r in records]))
    return hr, lr, text


def check_consistency(corpus: list[ClipRecord]) -> list[str]:
    """Ids of clips whose stored LR is not bitwise the downsampled HR."""
    return [r.clip_id for r in corpus if not np.array_equal(downsample_lr(r.hr), r.lr)]


# --------------------------------------------------------------------------- disk format


def save_corpus(corpus: list[ClipRecord], out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clips, hr_off, lr_off = [], 0, 0
    with open(out_dir / "hr.f32", "wb") as hr_fh, open(out_dir / "lr.f32", "wb") as lr_fh:
        for rec in corpus:
            hr_bytes = rec.hr.astype("<f4").tobytes()
            lr_bytes = rec.lr.astype("<f4").tobytes()
            hr_fh.write(hr_bytes)
            lr_fh.write(lr_bytes)
            clips.append({
                "id": rec.clip_id,
                "motion_spec": asdict(rec.motion_spec) if rec.motion_spec is not None else None,
                "caption": [int(i) for i in rec.caption],
                "hr_shape": list(rec.hr.shape),
                "lr_shape": list(rec.lr.shape),
                "hr_offset": hr_off,
                "hr_length": len(hr_bytes),
                "lr_offset": lr_off,
                "lr_length": len(lr_bytes),
            })
            hr_off += len(hr_bytes)
            lr_off += len(lr_bytes)
    manifest = {"format": CORPUS_FORMAT, "vocab": list(VOCAB), "clips": clips}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")


def _read_blob(blob: bytes, offset: int, length: int, shape, what: str) -> np.ndarray:
    count = int(np.prod(shape))
    if length != 4 * count or offset + length > len(blob):
        raise FormatError(f"{what}: extent does not match shape {shape}")
    return np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float32)


def load_corpus(path: str | Path) -> list[ClipRecord]:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise DataError(f"no corpus manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: {exc}") from exc
    if manifest.get("format") != CORPUS_FORMAT:
        raise FormatError(f"{manifest_path}: unknown format {manifest.get('format')!r}")
    hr_blob = (path / "hr.f32").read_bytes()
    lr_blob = (path / "lr.f32").read_bytes()
    corpus = []
    for c in manifest["clips"]:
        spec = MotionSpec(**c["motion_spec"]) if c.get("motion_spec") else None
        corpus.append(ClipRecord(
            c["id"],
            _read_blob(hr_blob, c["hr_offset"], c["hr_length"], c["hr_shape"], f"{c['id']} hr"),
            _read_blob(lr_blob, c["lr_offset"], c["lr_length"], c["lr_shape"], f"{c['id']} lr"),
            np.array(c["caption"], dtype=np.int64),
            spec,
        ))
    return corpus
