"""Image-to-video weight inflation.

The video network is the image network run on folded frames, so every
image weight is reused verbatim under its own name. Inflation only appends
the temporal-adapter entries (``adapter.<site>.<path>.<w>``), whose zero
output projection keeps the inflated model numerically identical to the
image model until the adapters are tuned.
"""

from __future__ import annotations

import fnmatch
from collections.abc import Callable
from dataclasses import asdict, dataclass

import torch

from vidinflate.errors import InflationError
from vidinflate.model import (
    ModelConfig,
    forward_image,
    forward_video,
    fold_frames,
    image_layout,
    init_adapters,
    is_adapter,
)
from vidinflate.store import ParameterStore


@dataclass
class InflationReport:
    mapped_names: int
    injected_adapter_names: int
    max_abs_discrepancy: float
    source_fingerprint: str
    target_fingerprint: str

    def to_dict(self) -> dict:
        return asdict(self)


def _as_predicate(name_filter) -> Callable[[str], bool]:
    if name_filter is None:
        return lambda name: True
    if isinstance(name_filter, str):
        pattern = name_filter
        return lambda name: fnmatch.fnmatchcase(name, pattern)
    return name_filter


def count_params(params, name_filter=None) -> int:
    """Total element count over entries whose name passes ``name_filter``.

    ``name_filter`` is a predicate, a glob pattern such as ``"adapter.*"``,
    or ``None`` for everything.
    """
    pred = _as_predicate(name_filter)
    return sum(t.numel() for name, t in params.items() if pred(name))


def strip_adapters(params: ParameterStore) -> ParameterStore:
    return params.subset(lambda name: not is_adapter(name))


def inflate(image_params: ParameterStore, config: ModelConfig, adapter_seed: int) -> ParameterStore:
    expected = {name: shape for name, shape, _ in image_layout(config)}
    source = {name: t for name, t in image_params.items() if not is_adapter(name)}

    missing = sorted(set(expected) - set(source))
    if missing:
        raise InflationError("source is missing image parameters", missing)
    unexpected = sorted(set(source) - set(expected))
    if unexpected:
        raise InflationError("source has parameters unknown to the target architecture", unexpected)
    mismatched = sorted(n for n, shape in expected.items() if tuple(source[n].shape) != tuple(shape))
    if mismatched:
        raise InflationError("source parameter shapes do not match target config", mismatched)

    entries = {name: t.clone() for name, t in source.items()}
    entries.update(init_adapters(config, adapter_seed))
    return ParameterStore(entries, config)


def verify_inflation(
    image_params: ParameterStore,
    video_params: ParameterStore,
    probe: torch.Tensor,
    text: torch.Tensor,
    t: torch.Tensor,
    adapters_enabled: bool = True,
) -> InflationReport:
    """Compare the video model against the image model on every frame of ``probe``.

    The image model sees all frames of the probe as one image batch (frames
    stacked in folded order), so both sides execute the same kernels.
    """
    frames = probe.shape[1]
    t, text = torch.as_tensor(t), torch.as_tensor(text)
    with torch.no_grad():
        video_out = forward_video(video_params, probe, t, text, adapters_enabled=adapters_enabled)
        image_out = forward_image(
            image_params, fold_frames(probe), t.repeat_interleave(frames), text.repeat_interleave(frames, dim=0)
        )
    discrepancy = float((fold_frames(video_out) - image_out).abs().max())

    image_names = {n for n in image_params if not is_adapter(n)}
    return InflationReport(
        mapped_names=sum(1 for n in video_params if not is_adapter(n) and n in image_names),
        injected_adapter_names=sum(1 for n in video_params if is_adapter(n)),
        max_abs_discrepancy=discrepancy,
        source_fingerprint=image_params.digest(),
        target_fingerprint=video_params.digest(),
    )
