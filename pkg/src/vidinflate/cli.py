"""Command-line entry point: ``vidinflate <command> [--config FILE] [--set section.key=value ...]``.

Every command reads one JSON run config; paths, seeds and hyperparameters
all come from it. Exit codes: 0 success, 1 usage or config, 2 data or
format, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from vidinflate.config import RunConfig, load_run_config
from vidinflate.data import ClipRecord, check_consistency, collate, generate_corpus, load_corpus, save_corpus
from vidinflate.diffusion import make_schedule, sample
from vidinflate.errors import DataError, VidInflateError
from vidinflate.inflation import count_params, inflate, verify_inflation
from vidinflate.metrics import evaluate, format_table
from vidinflate.model import adapter_layout, build_image_unet, image_layout, is_adapter
from vidinflate.store import load_checkpoint, save_checkpoint
from vidinflate.tuning import TrainLog, TrainRunConfig, efficiency_report, pretrain_image, train

log = logging.getLogger("vidinflate")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _log_path(ckpt: str | Path) -> Path:
    return Path(str(ckpt) + ".log.jsonl")


def _schedule(cfg: RunConfig):
    return make_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)


def _corpus(cfg: RunConfig) -> list[ClipRecord]:
    return load_corpus(cfg.paths.corpus)


def _write_frames(clip: np.ndarray, out_dir: Path, clip_id: str) -> None:
    """8-bit PNG per frame, for eyeballing only."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for f, frame in enumerate(clip):
        pixels = np.rint(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(pixels).save(out_dir / f"{clip_id}_f{f:02d}.png")


# --------------------------------------------------------------------------- commands


def cmd_gen_data(cfg: RunConfig, args) -> int:
    d = cfg.data
    corpus = generate_corpus(d.n_clips, d.frames, d.height, d.width, seed=d.seed)
    save_corpus(corpus, cfg.paths.corpus)
    bad = check_consistency(load_corpus(cfg.paths.corpus))
    if bad:
        raise DataError(f"LR/HR mismatch after reload: {', '.join(bad)}")
    print(f"wrote {len(corpus)} clips to {cfg.paths.corpus}")
    return 0


def cmd_pretrain_image(cfg: RunConfig, args) -> int:
    corpus = _corpus(cfg)
    p = cfg.pretrain
    params = build_image_unet(cfg.model, p.init_seed)
    run = TrainRunConfig(mode="full", steps=p.steps, batch_size=p.batch_size, learning_rate=p.learning_rate,
                         seed=p.seed, log_every=max(1, min(50, p.steps)))
    params, train_log = pretrain_image(params, _schedule(cfg), corpus, run)
    save_checkpoint(params, cfg.paths.image_ckpt)
    train_log.write_jsonl(_log_path(cfg.paths.image_ckpt))
    final = f"{train_log.smoothed_losses()[-1]:.5f}" if len(train_log) else "n/a"
    print(f"image model: {params.numel()} params, {len(train_log)} steps, final loss {final}")
    return 0


def cmd_inflate(cfg: RunConfig, args) -> int:
    image = load_checkpoint(cfg.paths.image_ckpt)
    video = inflate(image, cfg.model, adapter_seed=cfg.inflate.adapter_seed)
    m = cfg.model
    g = torch.Generator().manual_seed(cfg.inflate.adapter_seed)
    probe = torch.randn(1, m.frames, m.out_channels * 2, m.image_size, m.image_size, generator=g)
    text = torch.randint(0, m.vocab_size, (1, m.text_length), generator=g)
    t = torch.randint(0, cfg.schedule.T, (1,), generator=g)
    report = verify_inflation(image, video, probe, text, t)
    save_checkpoint(video, cfg.paths.video_ckpt)
    print(json.dumps({
        **report.to_dict(),
        "source_adapter_params": count_params(image, is_adapter),
        "target_adapter_params": count_params(video, is_adapter),
    }, indent=2))
    return 0


def cmd_finetune(cfg: RunConfig, args) -> int:
    video = load_checkpoint(cfg.paths.video_ckpt)
    corpus = _corpus(cfg)
    tuned, train_log = train(video, _schedule(cfg), corpus, cfg.tuning)
    save_checkpoint(tuned, cfg.paths.finetuned_ckpt)
    log_path = _log_path(cfg.paths.finetuned_ckpt)
    train_log.write_jsonl(log_path)
    print(f"{cfg.tuning.mode.value}: {train_log.trainable_param_count} trainable params, "
          f"{len(train_log)} steps, log {log_path}")
    if args.compare_log:
        other = TrainLog.read_jsonl(args.compare_log)
        logs = {other.mode: other, train_log.mode: train_log}
        if set(logs) != {"full", "temporal"}:
            raise DataError("--compare-log needs one full and one temporal log")
        print(json.dumps(efficiency_report(logs["full"], logs["temporal"]).to_dict(), indent=2))
    return 0


def cmd_sample(cfg: RunConfig, args) -> int:
    params = load_checkpoint(cfg.paths.finetuned_ckpt if args.ckpt is None else args.ckpt)
    corpus = _corpus(cfg)
    s = cfg.sampling
    if s.clip_ids:
        by_id = {r.clip_id: r for r in corpus}
        missing = [c for c in s.clip_ids if c not in by_id]
        if missing:
            raise DataError(f"clip ids not in corpus: {', '.join(missing)}")
        chosen = [by_id[c] for c in s.clip_ids]
    else:
        chosen = corpus[:s.max_clips]
    if not chosen:
        raise DataError("no clips selected for sampling")
    _, lr, text = collate(chosen)
    out = sample(params, _schedule(cfg), lr, text, rng_seed=s.seed).numpy()
    out_dir = Path(cfg.paths.samples)
    generated = [
        ClipRecord(rec.clip_id, clip[None].astype(np.float32), rec.lr, rec.caption, rec.motion_spec)
        for rec, clip in zip(chosen, out)
    ]
    save_corpus(generated, out_dir)
    for rec in generated:
        _write_frames(rec.hr[0], out_dir / "frames", rec.clip_id)
    print(f"sampled {len(generated)} clips at {out.shape[-2]}x{out.shape[-1]} into {out_dir}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    generated = {r.clip_id: r.hr[0] for r in load_corpus(args.generated or cfg.paths.samples)}
    truth_all = {r.clip_id: r.hr[0] for r in load_corpus(args.ground_truth or cfg.paths.corpus)}
    missing = sorted(set(generated) - set(truth_all))
    if missing:
        raise DataError(f"no ground truth for clip(s): {', '.join(missing)}")
    truth = {cid: truth_all[cid] for cid in generated}
    report = evaluate(generated, truth)
    out = Path(cfg.paths.metrics)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json(), encoding="utf-8")
    print(format_table({args.label: report}, include_reference=args.reference))
    return 0


def cmd_count_params(cfg: RunConfig, args) -> int:
    if args.ckpt:
        params = load_checkpoint(args.ckpt)
        total, adapters = params.numel(), count_params(params, is_adapter)
    else:
        total_img = sum(int(np.prod(s)) for _, s, _ in image_layout(cfg.model))
        adapters = sum(int(np.prod(s)) for _, s in adapter_layout(cfg.model))
        total = total_img + adapters
    print(json.dumps({
        "total": total,
        "backbone": total - adapters,
        "adapters": adapters,
        "adapter_fraction": adapters / total if total else 0.0,
    }, indent=2))
    return 0


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate the synthetic clip corpus"),
    "pretrain-image": (cmd_pretrain_image, "train the image UNet on single frames"),
    "inflate": (cmd_inflate, "inflate an image checkpoint into a video checkpoint"),
    "finetune": (cmd_finetune, "tune a video checkpoint (zero_shot, full or temporal)"),
    "sample": (cmd_sample, "super-resolve corpus clips with a video checkpoint"),
    "eval": (cmd_eval, "score generated clips against ground truth"),
    "count-params": (cmd_count_params, "report backbone and adapter parameter counts"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vidinflate", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="JSON run config (defaults are used when omitted)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config field; VALUE is parsed as JSON when possible")
        if name == "finetune":
            p.add_argument("--compare-log", type=Path, help="TrainLog of the other mode, for an efficiency report")
        if name in ("sample", "count-params"):
            p.add_argument("--ckpt", type=Path, help="checkpoint to use instead of the configured one")
        if name == "eval":
            p.add_argument("--generated", type=Path)
            p.add_argument("--ground-truth", type=Path)
            p.add_argument("--label", default="this run")
            p.add_argument("--reference", action="store_true", help="append the reference rows")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_run_config(args.config, args.overrides)
        return COMMANDS[args.command][0](cfg, args)
    except VidInflateError as exc:
        print(f"vidinflate {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"vidinflate {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
