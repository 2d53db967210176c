"""Named parameter container and its on-disk checkpoint format.

A checkpoint is a single file: one line of UTF-8 JSON (the manifest)
terminated by ``\\n``, followed by every entry's data as little-endian
float32, concatenated in manifest order. Offsets in the manifest are
relative to the first byte after the newline.
"""

from __future__ import annotations

import hashlib
import json
from collections.abc import Callable, Iterator, Mapping
from pathlib import Path

import numpy as np
import torch

from vidinflate.errors import FormatError, NumericError

FORMAT_TAG = "vidinflate-ckpt/1"


class ParameterStore(Mapping):
    """Immutable-by-convention ordered map ``name -> float32 tensor``.

    Iteration is lexicographic by name. ``config`` is the model
    configuration the weights belong to (may be ``None`` for bare stores).
    """

    def __init__(self, entries: Mapping[str, torch.Tensor] | None = None, config=None):
        self._entries: dict[str, torch.Tensor] = {}
        for name in sorted(entries or {}):
            tensor = entries[name]
            if not isinstance(tensor, torch.Tensor):
                tensor = torch.as_tensor(np.asarray(tensor))
            self._entries[name] = tensor.detach().to(torch.float32).contiguous()
        self.config = config

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self) -> str:
        return f"ParameterStore({len(self)} entries, {self.numel():,} params)"

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint() if self.config is not None else ""

    def numel(self, name_filter: Callable[[str], bool] | None = None) -> int:
        return sum(t.numel() for n, t in self._entries.items() if name_filter is None or name_filter(n))

    def subset(self, name_filter: Callable[[str], bool]) -> ParameterStore:
        return ParameterStore({n: t for n, t in self._entries.items() if name_filter(n)}, self.config)

    def updated(self, updates: Mapping[str, torch.Tensor], config=None) -> ParameterStore:
        merged = dict(self._entries)
        merged.update(updates)
        return ParameterStore(merged, config if config is not None else self.config)

    def clone(self) -> ParameterStore:
        return ParameterStore({n: t.clone() for n, t in self._entries.items()}, self.config)

    def check_finite(self) -> None:
        bad = [n for n, t in self._entries.items() if not torch.isfinite(t).all()]
        if bad:
            raise NumericError(f"non-finite values in parameters: {', '.join(bad)}")

    def digest(self) -> str:
        """SHA-256 over names, shapes and raw bytes; equal digests mean bitwise-equal stores."""
        h = hashlib.sha256()
        for name, tensor in self._entries.items():
            h.update(name.encode())
            h.update(repr(tuple(tensor.shape)).encode())
            h.update(tensor.numpy().astype("<f4").tobytes())
        return h.hexdigest()

    def bitwise_equal(self, other: Mapping[str, torch.Tensor]) -> bool:
        if list(self) != sorted(other):
            return False
        return all(
            self[n].shape == other[n].shape and torch.equal(self[n].view(torch.int32), other[n].contiguous().view(torch.int32))
            for n in self
        )


def save_checkpoint(params: ParameterStore, path: str | Path) -> None:
    params.check_finite()
    entries, offset, blobs = [], 0, []
    for name, tensor in params.items():
        data = tensor.numpy().astype("<f4", copy=False).tobytes()
        entries.append(
            {"name": name, "shape": list(tensor.shape), "dtype": "f32", "byte_offset": offset, "byte_length": len(data)}
        )
        blobs.append(data)
        offset += len(data)
    manifest = {
        "format": FORMAT_TAG,
        "fingerprint": params.fingerprint,
        "config": params.config.to_dict() if params.config is not None else None,
        "entries": entries,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for data in blobs:
            fh.write(data)


def load_checkpoint(path: str | Path) -> ParameterStore:
    from vidinflate.model import ModelConfig

    path = Path(path)
    if not path.is_file():
        raise FormatError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    head, sep, blob = raw.partition(b"\n")
    if not sep:
        raise FormatError(f"{path}: missing manifest terminator")
    try:
        manifest = json.loads(head.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable manifest ({exc})") from exc
    if manifest.get("format") != FORMAT_TAG:
        raise FormatError(f"{path}: unknown format {manifest.get('format')!r}")

    entries = {}
    for e in manifest["entries"]:
        if e["dtype"] != "f32":
            raise FormatError(f"{path}: entry {e['name']} has unsupported dtype {e['dtype']}")
        start, length = e["byte_offset"], e["byte_length"]
        count = int(np.prod(e["shape"], dtype=np.int64))
        if length != 4 * count or start + length > len(blob):
            raise FormatError(f"{path}: entry {e['name']} has inconsistent extent")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(e["shape"])
        entries[e["name"]] = torch.from_numpy(arr.astype(np.float32))
    config = ModelConfig.from_dict(manifest["config"]) if manifest.get("config") else None
    store = ParameterStore(entries, config)
    if config is not None and manifest.get("fingerprint") != store.fingerprint:
        raise FormatError(f"{path}: config fingerprint mismatch")
    return store
