"""Command-line entry point: ``lipvsr <subcommand> [--config FILE] [--set key=value ...]``.

Working-directory layout produced by the subcommands::

    <data.data_dir>/manifest.tsv, vocab.txt, clips/*.f32 (+ .shape), <split>.ref
    <paths.checkpoint_dir>/stage1/epoch_NNN.ckpt, stage1_avg.ckpt
    <paths.checkpoint_dir>/stage2/epoch_NNN.ckpt, stage2_avg.ckpt
    <paths.work_dir>/decode/<model>/<split>.hyp, <split>.report
    <paths.work_dir>/records/<subcommand>.json   (reproducibility records)
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import torch

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config, save_config
from .data import generate_synthetic_corpus, load_split, write_clip, write_manifest
from .decoding import read_hyp_file, write_hyp_file
from .fusion import corpus_cer, fuse_systems, fuse_two_stage_systems, write_report
from .model import VSRModel
from .training import (
    TrainingDiverged,
    decode_examples,
    evaluate_loss,
    load_checkpoint,
    make_examples,
    run_training_stage,
    save_checkpoint,
    select_and_average,
)
from .vocab import Vocabulary

logger = logging.getLogger("lipvsr")


class CommandError(RuntimeError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_record(cfg: ExperimentConfig, command: str, inputs: Sequence[Path], outputs: Sequence[Path]) -> Path:
    """Reproducibility record: config digest, seed and content hashes of inputs/outputs."""
    records = Path(cfg.paths.work_dir) / "records"
    records.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "version": __version__,
        "config_digest": cfg.digest(),
        "model_digest": cfg.model.digest(),
        "seed": cfg.train.seed,
        "inputs": {str(p): _sha256(p) for p in inputs if Path(p).is_file()},
        "outputs": {str(p): _sha256(p) for p in outputs if Path(p).is_file()},
    }
    path = records / f"{command}.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# paths


def data_dir(cfg) -> Path:
    return Path(cfg.data.data_dir)


def manifest_path(cfg) -> Path:
    return data_dir(cfg) / "manifest.tsv"


def vocab_path(cfg) -> Path:
    return data_dir(cfg) / "vocab.txt"


def stage_dir(cfg, stage: int) -> Path:
    return Path(cfg.paths.checkpoint_dir) / f"stage{stage}"


def average_path(cfg, stage: int) -> Path:
    return Path(cfg.paths.checkpoint_dir) / f"stage{stage}_avg.ckpt"


def ref_path(cfg, split: str) -> Path:
    return data_dir(cfg) / f"{split}.ref"


def _require(path: Path, key: str) -> Path:
    if not Path(path).is_file():
        raise ConfigError(key, f"file not found: {path}")
    return Path(path)


def _setup_torch(cfg: ExperimentConfig) -> None:
    torch.set_num_threads(cfg.train.threads)
    torch.use_deterministic_algorithms(True, warn_only=True)


def build_model(cfg: ExperimentConfig, vocab: Vocabulary) -> VSRModel:
    torch.manual_seed(cfg.train.seed)
    return VSRModel.build(cfg.model, vocab)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(cfg: ExperimentConfig) -> list[Path]:
    syn = cfg.data.synthetic
    vocab = Vocabulary.synthetic(syn.vocab_size)
    out = data_dir(cfg)
    channels = 1 if cfg.data.grayscale else 3
    entries, outputs = [], []
    for offset, (split, count) in enumerate(
        (("train", syn.num_train), ("dev", syn.num_dev), ("eval", syn.num_eval))
    ):
        if count == 0:
            continue
        corpus = generate_synthetic_corpus(
            syn.seed + offset, count, vocab, cfg.data.crop, syn.max_len,
            frames_per_token=syn.frames_per_token, channels=channels, split=split,
        )
        refs = {}
        for clip, entry in corpus:
            outputs.append(write_clip(clip, out / "clips"))
            entry.media_path = f"clips/{clip.id}.f32"
            entries.append(entry)
            refs[entry.id] = entry.transcript.split()
        write_hyp_file(refs, ref_path(cfg, split))
        outputs.append(ref_path(cfg, split))
    write_manifest(entries, manifest_path(cfg))
    vocab.save(vocab_path(cfg))
    outputs += [manifest_path(cfg), vocab_path(cfg)]
    write_record(cfg, "gen-data", [], outputs)
    logger.info("wrote %d utterances to %s", len(entries), out)
    return outputs


def _load_data(cfg: ExperimentConfig, splits: Sequence[str], speed: bool):
    vocab = Vocabulary.load(_require(vocab_path(cfg), "data.data_dir"))
    corpus = load_split(_require(manifest_path(cfg), "data.data_dir"), splits)
    factors = cfg.data.augment.speed_factors if speed else (1.0,)
    return vocab, make_examples(corpus, vocab, factors)


def _train_stage(cfg: ExperimentConfig, stage: int, init: Path | None) -> list[Path]:
    _setup_torch(cfg)
    splits = cfg.train.stage1_splits if stage == 1 else cfg.train.stage2_splits
    vocab, train = _load_data(cfg, splits, speed=True)
    _, dev = _load_data(cfg, (cfg.train.dev_split,), speed=False)
    if not train:
        raise CommandError(f"no training utterances in splits {splits}")
    model = build_model(cfg, vocab)
    if init is not None:
        ckpt = load_checkpoint(_require(init, "init"))
        if ckpt.config_digest != cfg.model.digest():
            raise ConfigError("model", "checkpoint was trained with a different model config")
        ckpt.load_into(model)
    epochs = cfg.train.stage1_epochs if stage == 1 else cfg.train.stage2_epochs
    lr = cfg.train.lr if stage == 1 else cfg.train.stage2_lr
    augment = cfg.data.augment if cfg.train.augment else None
    out_dir = stage_dir(cfg, stage)
    out_dir.mkdir(parents=True, exist_ok=True)
    for stale in out_dir.glob("epoch_*.ckpt"):
        stale.unlink()
    try:
        ckpts = run_training_stage(
            model, train, dev, cfg.train, epochs, lr, augment, cfg.model.digest(), stage=stage
        )
    except TrainingDiverged as exc:
        for c in exc.checkpoints:
            save_checkpoint(c, out_dir / f"epoch_{c.epoch:03d}.ckpt")
        (out_dir / "DIVERGED.txt").write_text(exc.report + "\n", encoding="utf-8")
        raise CommandError(f"training diverged: {exc.report}") from None
    paths = [save_checkpoint(c, out_dir / f"epoch_{c.epoch:03d}.ckpt") for c in ckpts]
    inputs = [manifest_path(cfg)] + ([Path(init)] if init else [])
    write_record(cfg, "train" if stage == 1 else "finetune", inputs, paths)
    return paths


def cmd_train(cfg: ExperimentConfig) -> list[Path]:
    return _train_stage(cfg, 1, None)


def cmd_finetune(cfg: ExperimentConfig, init: Path | None = None) -> list[Path]:
    return _train_stage(cfg, 2, init or average_path(cfg, 1))


def _evaluate_average(cfg: ExperimentConfig, avg) -> None:
    """Replace the members' mean dev loss by the averaged model's own dev loss
    when the dev split is available."""
    if not manifest_path(cfg).is_file():
        return
    vocab, dev = _load_data(cfg, (cfg.train.dev_split,), speed=False)
    if not dev:
        return
    if avg.config_digest != cfg.model.digest():
        raise ConfigError("model", "checkpoints were trained with a different model config")
    _setup_torch(cfg)
    model = build_model(cfg, vocab)
    avg.load_into(model)
    avg.meta["member_dev_loss"] = avg.dev_loss
    avg.dev_loss = evaluate_loss(model, dev, cfg.train.batch_size)


def cmd_average(
    cfg: ExperimentConfig,
    stage: int | None = None,
    inputs: Sequence[Path] | None = None,
    out: Path | None = None,
    k: int | None = None,
    selection: str | None = None,
) -> Path:
    if inputs is None:
        if stage is None:
            raise CommandError("give --stage or --inputs")
        inputs = sorted(stage_dir(cfg, stage).glob("epoch_*.ckpt"))
    if not inputs:
        raise CommandError("no checkpoints to average")
    if selection is None:
        selection = "lowest_dev_loss" if stage == 1 else "all"
    if selection == "lowest_dev_loss" and k is None:
        k = cfg.train.average_top_k
    ckpts = [load_checkpoint(_require(p, "inputs")) for p in inputs]
    avg = select_and_average(ckpts, k, selection)
    _evaluate_average(cfg, avg)
    out = Path(out) if out is not None else average_path(cfg, stage)
    save_checkpoint(avg, out)
    write_record(cfg, f"average-stage{stage}" if stage else "average", list(inputs), [out])
    logger.info("averaged epochs %s -> %s", avg.meta["averaged_epochs"], out)
    return out


def cmd_decode(cfg: ExperimentConfig, checkpoint: Path, split: str | None = None, out: Path | None = None) -> Path:
    _setup_torch(cfg)
    split = split or cfg.decode.split
    vocab, examples = _load_data(cfg, (split,), speed=False)
    if not examples:
        raise CommandError(f"no utterances in split {split!r}")
    model = build_model(cfg, vocab)
    ckpt = load_checkpoint(_require(checkpoint, "checkpoint"))
    if ckpt.config_digest != cfg.model.digest():
        raise ConfigError("model", "checkpoint was trained with a different model config")
    ckpt.load_into(model)
    hyps = decode_examples(model, examples, vocab, cfg.decode)
    if out is None:
        out = Path(cfg.paths.work_dir) / "decode" / Path(checkpoint).stem / f"{split}.hyp"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_hyp_file(hyps, out)
    write_record(cfg, f"decode-{Path(checkpoint).stem}-{split}", [Path(checkpoint), manifest_path(cfg)], [out])
    return out


def cmd_score(ref: Path, hyp: Path, report: Path | None = None) -> float:
    refs = read_hyp_file(_require(ref, "ref"))
    hyps = read_hyp_file(_require(hyp, "hyp"))
    cer, per_utt = corpus_cer(refs, hyps)
    if report is not None:
        write_report(report, cer, per_utt)
    return cer


def cmd_rover(inputs: Sequence[Path], out: Path, stage2: Sequence[Path] | None = None) -> Path:
    systems = [read_hyp_file(_require(p, "inputs")) for p in inputs]
    if stage2:
        fused = fuse_two_stage_systems(systems, [read_hyp_file(_require(p, "stage2")) for p in stage2])
    else:
        fused = fuse_systems(systems, [str(p) for p in inputs])
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    write_hyp_file(fused, out)
    return Path(out)


def cmd_pipeline(cfg: ExperimentConfig) -> dict:
    """gen-data -> train -> average -> finetune -> average -> decode -> score -> rover."""
    if cfg.train.stage1_epochs == 0:
        raise CommandError("pipeline needs train.stage1_epochs >= 1")
    cmd_gen_data(cfg)
    cmd_train(cfg)
    summary: dict = {}
    cmd_average(cfg, stage=1)
    if cfg.train.stage2_epochs:
        cmd_finetune(cfg)
        cmd_average(cfg, stage=2)
    models = ["stage1_avg"] + (["stage2_avg"] if cfg.train.stage2_epochs else [])
    for name in models:
        ckpt = load_checkpoint(Path(cfg.paths.checkpoint_dir) / f"{name}.ckpt")
        summary[f"{name}_dev_loss"] = ckpt.dev_loss
    splits = [s for s, n in (("train", cfg.data.synthetic.num_train), ("dev", cfg.data.synthetic.num_dev),
                             ("eval", cfg.data.synthetic.num_eval)) if n]
    decode_dir = Path(cfg.paths.work_dir) / "decode"
    for split in splits:
        hyps = {}
        for name in models:
            hyp = cmd_decode(cfg, Path(cfg.paths.checkpoint_dir) / f"{name}.ckpt", split)
            hyps[name] = hyp
            summary[f"{name}_{split}_cer"] = cmd_score(ref_path(cfg, split), hyp, hyp.with_suffix(".report"))
        fused = cmd_rover([hyps["stage1_avg"]], decode_dir / "rover" / f"{split}.hyp",
                          stage2=[hyps[m] for m in models[1:]] or None)
        summary[f"rover_{split}_cer"] = cmd_score(ref_path(cfg, split), fused, fused.with_suffix(".report"))
    path = Path(cfg.paths.work_dir) / "summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


# ---------------------------------------------------------------------------
# argument parsing


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lipvsr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    for name, help_ in (
        ("gen-data", "write the synthetic corpus, manifest and vocabulary"),
        ("train", "stage-1 training, one checkpoint per epoch"),
        ("pipeline", "run the whole two-stage recipe and score it"),
    ):
        _config_args(sub.add_parser(name, help=help_))

    p = sub.add_parser("average", help="average checkpoints")
    _config_args(p)
    p.add_argument("--stage", type=int, choices=(1, 2))
    p.add_argument("--inputs", type=Path, nargs="+")
    p.add_argument("--out", type=Path)
    p.add_argument("--k", type=int)
    p.add_argument("--selection", choices=("lowest_dev_loss", "all"))

    p = sub.add_parser("finetune", help="stage-2 fine-tuning from an averaged model")
    _config_args(p)
    p.add_argument("--init", type=Path)

    p = sub.add_parser("decode", help="CTC beam search + attention rescoring")
    _config_args(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("score", help="corpus CER of a hypothesis file")
    p.add_argument("--ref", type=Path, required=True)
    p.add_argument("--hyp", type=Path, required=True)
    p.add_argument("--report", type=Path)

    p = sub.add_parser("rover", help="fuse hypothesis files by voting")
    p.add_argument("--inputs", type=Path, nargs="+", required=True)
    p.add_argument("--stage2", type=Path, nargs="+",
                   help="fine-tuned systems; fused with the ROVER of --inputs")
    p.add_argument("--out", type=Path, required=True)
    return parser


def parse_and_dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = None
        if hasattr(args, "config"):
            cfg = load_config(args.config, args.overrides).validate()
            Path(cfg.paths.work_dir).mkdir(parents=True, exist_ok=True)
            save_config(cfg, Path(cfg.paths.work_dir) / f"{args.command}.conf")
        if args.command == "gen-data":
            cmd_gen_data(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "average":
            print(cmd_average(cfg, args.stage, args.inputs, args.out, args.k, args.selection))
        elif args.command == "finetune":
            cmd_finetune(cfg, args.init)
        elif args.command == "decode":
            print(cmd_decode(cfg, args.checkpoint, args.split, args.out))
        elif args.command == "score":
            print(f"CER {cmd_score(args.ref, args.hyp, args.report):.6f}")
        elif args.command == "rover":
            print(cmd_rover(args.inputs, args.out, args.stage2))
        elif args.command == "pipeline":
            for key, value in sorted(cmd_pipeline(cfg).items()):
                print(f"{key}\t{value:.6f}")
    except ConfigError as exc:
        print(f"lipvsr: config error: {exc}", file=sys.stderr)
        return 2
    except (CommandError, ValueError, OSError) as exc:
        print(f"lipvsr: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
