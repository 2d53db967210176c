"""Zero-shot, full and temporal-adapter-only tuning of an inflated video UNet."""

from __future__ import annotations

import enum
import json
import logging
import time
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from vidinflate.data import collate
from vidinflate.diffusion import NoiseSchedule, step_seed, training_loss
from vidinflate.errors import ConfigError, DataError, NumericError, ParameterError
from vidinflate.model import is_adapter
from vidinflate.store import ParameterStore

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
BYTES_PER_FLOAT = 4

# Efficiency columns of the reference experiments; documentation only.
REFERENCE_EFFICIENCY = {
    "param_ratio": 67.24 / 628.89,
    "speed_ratio": 2.02 / 1.05,
    "memory_ratio": 8 / 15,
}


class TuningMode(str, enum.Enum):
    ZERO_SHOT = "zero_shot"
    FULL = "full"
    TEMPORAL = "temporal"


@dataclass
class TrainRunConfig:
    mode: TuningMode = TuningMode.TEMPORAL
    steps: int = 200
    batch_size: int = 4
    learning_rate: float = 1e-4
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        try:
            self.mode = TuningMode(self.mode)
        except ValueError:
            raise ConfigError(f"unknown tuning mode {self.mode!r}") from None
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.mode is TuningMode.ZERO_SHOT and self.steps != 0:
            raise ConfigError("zero_shot mode takes no training steps (steps must be 0)")
        if self.batch_size < 1 or self.learning_rate <= 0 or self.log_every < 1:
            raise ConfigError("batch_size and log_every must be >= 1 and learning_rate > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d


@dataclass
class StepRecord:
    step: int
    loss: float
    wall_time: float
    trainable_param_count: int
    peak_memory_estimate: int


@dataclass
class TrainLog:
    mode: str = ""
    optimizer_state_bytes: int = 0
    records: list[StepRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def smoothed_losses(self, window: int = 20) -> np.ndarray:
        losses = self.losses
        window = max(1, min(window, len(losses)))
        return np.convolve(losses, np.ones(window) / window, mode="valid")

    def steps_per_second(self) -> float:
        # the first step pays one-off allocation costs
        times = [r.wall_time for r in self.records[1:]] or [r.wall_time for r in self.records]
        return len(times) / sum(times) if times and sum(times) > 0 else 0.0

    @property
    def trainable_param_count(self) -> int:
        return self.records[0].trainable_param_count if self.records else 0

    @property
    def peak_memory_estimate(self) -> int:
        return max((r.peak_memory_estimate for r in self.records), default=0)

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps({"mode": self.mode, "optimizer_state_bytes": self.optimizer_state_bytes, **asdict(r)}))
                fh.write("\n")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> TrainLog:
        out = cls()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            out.mode = d.pop("mode", out.mode)
            out.optimizer_state_bytes = d.pop("optimizer_state_bytes", out.optimizer_state_bytes)
            out.records.append(StepRecord(**d))
        return out


def trainable_filter(mode: TuningMode | str) -> Callable[[str], bool]:
    mode = TuningMode(mode)
    if mode is TuningMode.ZERO_SHOT:
        return lambda name: False
    if mode is TuningMode.FULL:
        return lambda name: True
    return is_adapter


class _LiveParams(dict):
    """Name -> tensor view handed to the forward functions during training."""

    def __init__(self, entries, config):
        super().__init__(entries)
        self.config = config


def _activation_bytes(fn: Callable[[], torch.Tensor]) -> tuple[torch.Tensor, int]:
    """Run ``fn`` and count bytes of tensors autograd saves for backward."""
    seen: dict[int, int] = {}

    def pack(t):
        seen[t.untyped_storage().data_ptr()] = t.untyped_storage().nbytes()
        return t

    with torch.autograd.graph.saved_tensors_hooks(pack, lambda t: t):
        out = fn()
    return out, sum(seen.values())


def train(
    params: ParameterStore,
    schedule: NoiseSchedule,
    dataset: Sequence,
    run: TrainRunConfig,
    *,
    adapters_enabled: bool | None = None,
    single_frames: bool = False,
) -> tuple[ParameterStore, TrainLog]:
    """Adam on the entries selected by ``trainable_filter(run.mode)``; others are passed through untouched.

    ``single_frames`` trains on one random frame per clip (image pretraining).
    ``adapters_enabled`` defaults to whether the store holds adapter entries.
    """
    result_log = TrainLog(mode=run.mode.value)
    if run.mode is TuningMode.ZERO_SHOT or run.steps == 0:
        return params, result_log
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")

    pred = trainable_filter(run.mode)
    names = [n for n in params if pred(n)]
    if not names:
        raise ParameterError(f"no parameters selected for mode {run.mode.value}")
    if adapters_enabled is None:
        adapters_enabled = any(is_adapter(n) for n in params)

    trainable = {n: params[n].clone().requires_grad_(True) for n in names}
    live = _LiveParams({**params, **trainable}, params.config)
    optimizer = torch.optim.Adam(trainable.values(), lr=run.learning_rate, betas=ADAM_BETAS)

    n_trainable = sum(t.numel() for t in trainable.values())
    param_bytes = params.numel() * BYTES_PER_FLOAT
    grad_bytes = n_trainable * BYTES_PER_FLOAT
    result_log.optimizer_state_bytes = 2 * n_trainable * BYTES_PER_FLOAT
    activation = None

    rng = np.random.default_rng(run.seed)
    batch = min(run.batch_size, len(dataset))
    for step in range(run.steps):
        idx = rng.choice(len(dataset), size=batch, replace=False)
        hr, lr, text = collate([dataset[i] for i in idx])
        if single_frames:
            f = torch.from_numpy(rng.integers(hr.shape[1], size=batch))
            rows = torch.arange(batch)
            hr, lr = hr[rows, f][:, None], lr[rows, f][:, None]

        start = time.perf_counter()
        optimizer.zero_grad(set_to_none=True)

        def loss_fn():
            return training_loss(live, schedule, hr, lr, text, step_seed(run.seed, step),
                                 adapters_enabled=adapters_enabled)

        if activation is None:
            loss, activation = _activation_bytes(loss_fn)
        else:
            loss = loss_fn()
        if not torch.isfinite(loss):
            raise NumericError(f"non-finite loss at step {step}")
        loss.backward()
        optimizer.step()
        elapsed = time.perf_counter() - start

        result_log.records.append(StepRecord(
            step=step,
            loss=float(loss.detach()),
            wall_time=elapsed,
            trainable_param_count=n_trainable,
            peak_memory_estimate=param_bytes + grad_bytes + result_log.optimizer_state_bytes + activation,
        ))
        if (step + 1) % run.log_every == 0:
            recent = result_log.losses[-run.log_every:].mean()
            log.info("%s step %d/%d loss %.4f", run.mode.value, step + 1, run.steps, recent)

    updated = {n: t.detach() for n, t in trainable.items()}
    return params.updated(updated), result_log


def pretrain_image(params: ParameterStore, schedule: NoiseSchedule, dataset: Sequence, run: TrainRunConfig):
    """Train the image UNet on individual frames (adapters, if any, stay out of the graph)."""
    return train(params, schedule, dataset, run, adapters_enabled=False, single_frames=True)


@dataclass
class EfficiencyReport:
    param_ratio: float
    speed_ratio: float
    memory_ratio: float
    optimizer_memory_ratio: float
    full: dict
    temporal: dict

    def to_dict(self) -> dict:
        return asdict(self)


def _summary(log_: TrainLog) -> dict:
    return {
        "trainable_params": log_.trainable_param_count,
        "steps_per_second": log_.steps_per_second(),
        "peak_memory_estimate": log_.peak_memory_estimate,
        "optimizer_state_bytes": log_.optimizer_state_bytes,
    }


def efficiency_report(log_full: TrainLog, log_temporal: TrainLog) -> EfficiencyReport:
    """Temporal-over-full ratios of trainable parameters, steps/s and memory."""
    if not len(log_full) or not len(log_temporal):
        raise DataError("efficiency report needs two non-empty training logs")
    full, temporal = _summary(log_full), _summary(log_temporal)
    return EfficiencyReport(
        param_ratio=temporal["trainable_params"] / full["trainable_params"],
        speed_ratio=temporal["steps_per_second"] / full["steps_per_second"],
        memory_ratio=temporal["peak_memory_estimate"] / full["peak_memory_estimate"],
        optimizer_memory_ratio=temporal["optimizer_state_bytes"] / full["optimizer_state_bytes"],
        full=full,
        temporal=temporal,
    )
