"""Desk-scale tuning-regime comparison and data-efficiency study.

One replicate (``run_replicate``) does, for a given seed:

1. generate a video corpus and an independent image corpus;
2. pretrain the image UNet on single frames of the image corpus;
3. inflate it and compare zero-shot, full and temporal-only tuning under an
   equal step budget on the video training split;
4. train an inflated model on a 10% slice and a randomly initialized video
   model on a 40% slice under the same budget;
5. sample the held-out clips from every model with shared noise and score them.

Results are cached as JSON per seed, keyed by a hash of the settings, so the
acceptance tests can reuse a finished run.

Run from the command line with ``python -m vidinflate.experiments``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from vidinflate.data import collate, generate_corpus, split
from vidinflate.diffusion import make_schedule, sample, step_seed, training_loss
from vidinflate.inflation import count_params, inflate
from vidinflate.metrics import evaluate
from vidinflate.model import ModelConfig, build_image_unet
from vidinflate.tuning import TrainRunConfig, efficiency_report, pretrain_image, train

log = logging.getLogger(__name__)

SLICES = (0.1, 0.3, 0.55, 0.05)  # 10% | +30% = 40% | rest of train | held out
DEFAULT_CACHE = Path("artifacts/experiments")


@dataclass(frozen=True)
class ExperimentSettings:
    n_clips: int = 2000
    frames: int = 8
    size: int = 32
    model: dict = field(default_factory=dict)
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    pretrain_steps: int = 1500
    pretrain_batch: int = 32
    pretrain_lr: float = 5e-4
    finetune_steps: int = 1500
    finetune_batch: int = 4
    finetune_lr: float = 1e-4
    eval_clips: int = 32
    val_batches: int = 16

    def model_config(self) -> ModelConfig:
        return ModelConfig(**{"image_size": self.size, "frames": self.frames, **self.model})

    def key(self) -> str:
        canon = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:12]


# Settings behind the cached acceptance run (AC-4..AC-6).
ACCEPTANCE_SETTINGS = ExperimentSettings()


def validation_loss(params, schedule, clips, batches: int, seed: int) -> float:
    """Mean noise-prediction MSE over fixed (t, eps) draws on held-out clips."""
    losses = []
    with torch.no_grad():
        for b in range(batches):
            rec = [clips[(b * 2 + k) % len(clips)] for k in range(2)]
            hr, lr, text = collate(rec)
            losses.append(float(training_loss(params, schedule, hr, lr, text, step_seed(seed, b))))
    return float(np.mean(losses))


def score(params, schedule, clips, seed: int) -> dict:
    """Sample every clip with shared noise (same seed for every model) and compute metrics."""
    generated, truth = {}, {}
    for i in range(0, len(clips), 8):
        chunk = clips[i:i + 8]
        hr, lr, text = collate(chunk)
        out = sample(params, schedule, lr, text, rng_seed=seed + i)
        for rec, g in zip(chunk, out.numpy()):
            generated[rec.clip_id], truth[rec.clip_id] = g, rec.hr[0]
    report = evaluate(generated, truth)
    return {"psnr_db": report.psnr_db, "ssim": report.ssim, "tcc": report.tcc}


def run_replicate(settings: ExperimentSettings, seed: int) -> dict:
    t_start = time.time()
    cfg = settings.model_config()
    schedule = make_schedule(settings.T, settings.beta_start, settings.beta_end)
    corpus = generate_corpus(settings.n_clips, settings.frames, settings.size, settings.size, seed=seed)
    images = generate_corpus(settings.n_clips, settings.frames, settings.size, settings.size, seed=seed + 10_000)
    s10, s30, s55, held = split(corpus, list(SLICES), seed=seed)
    train_all, s40 = s10 + s30 + s55, s10 + s30
    eval_set = held[:settings.eval_clips]

    def run_cfg(mode, steps, offset, lr=settings.finetune_lr, batch=settings.finetune_batch):
        return TrainRunConfig(mode=mode, steps=steps, batch_size=batch, learning_rate=lr,
                              seed=seed * 100 + offset, log_every=max(1, steps // 10 or 1))

    log.info("seed %d: pretraining image model", seed)
    image, pre_log = pretrain_image(
        build_image_unet(cfg, seed), schedule, images,
        run_cfg("full", settings.pretrain_steps, 1, settings.pretrain_lr, settings.pretrain_batch),
    )
    video = inflate(image, cfg, adapter_seed=seed + 1)

    models, logs = {"zero_shot": video}, {}
    for offset, mode in ((2, "full"), (3, "temporal")):
        log.info("seed %d: %s tuning", seed, mode)
        models[mode], logs[mode] = train(video, schedule, train_all, run_cfg(mode, settings.finetune_steps, offset))

    log.info("seed %d: data-efficiency runs", seed)
    models["inflated_10pct"], _ = train(video, schedule, s10, run_cfg("full", settings.finetune_steps, 4))
    scratch = inflate(build_image_unet(cfg, seed + 2), cfg, adapter_seed=seed + 3)
    models["random_40pct"], _ = train(scratch, schedule, s40, run_cfg("full", settings.finetune_steps, 5))

    results = {}
    for name, params in models.items():
        log.info("seed %d: scoring %s", seed, name)
        results[name] = {
            **score(params, schedule, eval_set, seed=seed * 1000 + 7),
            "val_loss": validation_loss(params, schedule, held, settings.val_batches, seed),
        }
    eff = efficiency_report(logs["full"], logs["temporal"])
    return {
        "seed": seed,
        "settings_key": settings.key(),
        "settings": asdict(settings),
        "sizes": {"train": len(train_all), "slice10": len(s10), "slice40": len(s40), "eval": len(eval_set)},
        "params": {"full": count_params(video), "adapters": count_params(video, "adapter.*")},
        "pretrain_final_loss": float(pre_log.smoothed_losses(100)[-1]) if len(pre_log) else None,
        "results": results,
        "efficiency": eff.to_dict(),
        "wall_seconds": time.time() - t_start,
    }


def cached_replicate(settings: ExperimentSettings, seed: int, cache_dir: Path = DEFAULT_CACHE) -> dict:
    path = Path(cache_dir) / f"{settings.key()}_seed{seed}.json"
    if path.is_file():
        return json.loads(path.read_text())
    out = run_replicate(settings, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(out, indent=2))
    return out


def ordering_holds(r: dict) -> bool:
    res = r["results"]
    full, temporal, zs = res["full"], res["temporal"], res["zero_shot"]
    return (
        full["psnr_db"] > temporal["psnr_db"] > zs["psnr_db"]
        and full["tcc"] >= temporal["tcc"] > zs["tcc"]
    )


def data_efficiency_holds(r: dict) -> bool:
    res = r["results"]
    return res["inflated_10pct"]["psnr_db"] >= res["random_40pct"]["psnr_db"]


def summarize(replicates: list[dict]) -> str:
    lines = []
    for r in replicates:
        lines.append(f"seed {r['seed']} ({r['wall_seconds'] / 60:.1f} min)")
        for name, m in r["results"].items():
            lines.append(f"  {name:<15} PSNR {m['psnr_db']:7.3f}  SSIM {m['ssim']:.4f}  "
                         f"TCC {m['tcc']:.4f}  val {m['val_loss']:.5f}")
        e = r["efficiency"]
        lines.append(f"  efficiency: params {e['param_ratio']:.3f}  speed {e['speed_ratio']:.2f}x  "
                     f"memory {e['memory_ratio']:.2f}")
        lines.append(f"  ordering {'ok' if ordering_holds(r) else 'FAIL'}  "
                     f"data-efficiency {'ok' if data_efficiency_holds(r) else 'FAIL'}")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--cache-dir", type=Path, default=DEFAULT_CACHE)
    for f in ("n_clips", "pretrain_steps", "finetune_steps", "eval_clips", "T"):
        parser.add_argument(f"--{f.replace('_', '-')}", type=int, dest=f)
    for f in ("pretrain_lr", "finetune_lr"):
        parser.add_argument(f"--{f.replace('_', '-')}", type=float, dest=f)
    parser.add_argument("--model", type=json.loads, help="JSON object of ModelConfig overrides")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    torch.set_num_threads(max(1, torch.get_num_threads()))

    overrides = {k: v for k, v in vars(args).items() if k not in ("seeds", "cache_dir") and v is not None}
    settings = replace(ExperimentSettings(), **overrides)
    replicates = [cached_replicate(settings, s, args.cache_dir) for s in args.seeds]
    print(summarize(replicates))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
