"""Command line front end: ``syncasd <command> --out DIR [options]``.

The config file (TOML or JSON) is the source of truth and flags override
it.  Every run writes ``run.json`` into ``--out``.  On failure a
single JSON line ``{"error": ..., "code": ..., "message": ...}`` goes to
stderr and the exit code tells what went wrong: 2 bad config or missing
input, 3 infeasible augmentation, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig

log = logging.getLogger("syncasd")

EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4
GRADCHECK_TOL = 1e-5


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML or JSON config file")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, help="seed (overrides the config)")
    p.add_argument("--jobs", type=int, help="worker processes where supported")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--head", choices=("sync", "rothnet", "product"))
    p.add_argument("--no-contrastive", dest="contrastive_on", action="store_const", const=False)
    p.add_argument("--no-pe-cross", dest="pe_cross", action="store_const", const=False)
    p.add_argument("--no-pe-self", dest="pe_self", action="store_const", const=False)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--frames-per-batch", dest="frames_per_batch", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)


def _add_shift_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--min-shift-ms", dest="min_shift_ms", type=float)
    p.add_argument("--skip-short", dest="skip_short", action="store_const", const=True,
                   help="leave segments too short for the minimum shift untouched instead of failing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="syncasd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    _add_common(p)

    p = sub.add_parser("augment", help="write a mismatched or misaligned copy of a corpus")
    _add_common(p)
    p.add_argument("--in", dest="corpus", help="input corpus directory")
    p.add_argument("--kind", choices=("mismatch", "misalign"))
    _add_shift_flags(p)

    p = sub.add_parser("train", help="train a head on the train split")
    _add_common(p)
    p.add_argument("--corpus")
    _add_model_flags(p)

    p = sub.add_parser("eval", help="pooled mAP and per-video TPR of a trained model")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--corpus")
    p.add_argument("--unsync", help="augmented corpus to mix in (see --proportion)")
    p.add_argument("--proportion", type=float)
    p.add_argument("--silence", action="store_true", help="silence the audio of every test track")
    p.add_argument("--mask", action="store_true", help="mask the bottom of every test frame")
    p.add_argument("--mask-fraction", dest="mask_fraction", type=float)

    p = sub.add_parser("sweep", help="mAP against the proportion of unsynchronised tracks")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--corpus")
    p.add_argument("--kind", choices=("mismatch", "misalign"))
    p.add_argument("--proportions", type=lambda s: [float(x) for x in s.split(",")])
    p.add_argument("--anchor", type=int, help="clean val SyncSpeaking tracks added to every point")
    _add_shift_flags(p)

    p = sub.add_parser("ablate", help="train and score the five ablation configurations")
    _add_common(p)
    p.add_argument("--corpus")
    _add_model_flags(p)
    _add_shift_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of every head's training loss")
    _add_common(p)

    p = sub.add_parser("rank-dubbed", help="rank test videos by per-video TPR")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--corpus")
    p.add_argument("--threshold", dest="tpr_threshold", type=float)
    return parser


_NOT_CONFIG = {"command", "config", "verbose", "silence", "mask"}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    overrides["out"] = str(args.out)
    for key in ("corpus", "unsync", "model"):
        if overrides.get(key) is not None:
            overrides[key] = str(overrides[key])
    return RunConfig.load(args.config, overrides)


def _need_dir(cfg: RunConfig, key: str, marker: str) -> Path:
    value = getattr(cfg, key)
    if value is None:
        raise ConfigError(f"--{key} is required")
    path = Path(value)
    if not (path / marker).is_file():
        raise ConfigError(f"{key} directory {path} has no {marker}")
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_run_json(out: Path, command: str, cfg: RunConfig) -> None:
    _write_json(out / "run.json", {"command": command, "config": cfg.to_dict(), "seed": cfg.seed, "version": __version__})


def _train_cfg(cfg: RunConfig):
    from .training import TrainConfig

    return TrainConfig.from_dict(cfg.train_dict())


def _load_model(cfg: RunConfig):
    from .checkpoint import load_checkpoint

    head, _ = load_checkpoint(_need_dir(cfg, "model", "index.json"))
    return head


def _load(cfg: RunConfig, key: str = "corpus"):
    from .trackdata import load_corpus

    return load_corpus(_need_dir(cfg, key, "manifest.json"))


def _shift_spec(cfg: RunConfig):
    from .desync import ShiftSpec

    try:
        return ShiftSpec(cfg.min_shift_ms)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_gen(cfg: RunConfig, out: Path) -> dict:
    from .synthgen import SynthConfig, gen_corpus
    from .trackdata import save_corpus

    try:
        synth = SynthConfig.from_dict(cfg.synth_dict())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    manifest = save_corpus(gen_corpus(synth, jobs=cfg.jobs), out)
    return {"samples": len(manifest["samples"])}


def cmd_augment(cfg: RunConfig, out: Path) -> dict:
    from .desync import augment
    from .evalmetrics import eval_streams
    from .trackdata import save_corpus

    corpus = _load(cfg)
    spec = _shift_spec(cfg)
    aug_rng, _ = eval_streams(cfg.seed)
    unsync = augment(corpus, cfg.kind, aug_rng, spec, skip_short=cfg.skip_short)
    save_corpus(unsync, out)
    touched = sum(a is not b for a, b in zip(unsync.samples, corpus.samples))
    return {"samples": len(unsync), "augmented": touched}


def cmd_train(cfg: RunConfig, out: Path) -> dict:
    from .checkpoint import save_checkpoint
    from .training import train, write_log_csv

    tcfg = _train_cfg(cfg)
    corpus = _load(cfg)
    head, history = train(corpus.split("train"), tcfg, val=corpus.split("val"), checkpoint_dir=out / "checkpoints")
    save_checkpoint(head, out / "model", extra={"train": tcfg.to_dict()})
    write_log_csv(history, out / "train_log.csv")
    last = history[-1] if history else None
    return {"epochs": len(history), "final_sup_loss": last.sup_loss if last else None, "final_val_map": last.val_map if last else None}


def _eval_set(cfg: RunConfig, corpus):
    from .desync import curate, mask_corpus, silence_corpus
    from .evalmetrics import clean_test, eval_streams
    from .trackdata import Corpus

    test = clean_test(corpus)
    if cfg.unsync is not None:
        unsync = _load(cfg, "unsync").by_id()
        missing = [i for i in test.ids() if i not in unsync]
        if missing:
            raise ConfigError(f"unsync corpus lacks {len(missing)} test ids, e.g. {missing[0]}")
        unsync_test = Corpus([unsync[i] for i in test.ids()], test.seed)
        _, cur_ss = eval_streams(cfg.seed)
        test = curate(test, unsync_test, cfg.proportion, np.random.default_rng(cur_ss))
    return test, silence_corpus, mask_corpus


def cmd_eval(cfg: RunConfig, out: Path, silence: bool = False, mask: bool = False) -> dict:
    from .evalmetrics import EvalReport, map_eval, tpr_per_video, write_tpr_csv

    head = _load_model(cfg)
    test, silence_corpus, mask_corpus = _eval_set(cfg, _load(cfg))
    if silence:
        test = silence_corpus(test)
    if mask:
        test = mask_corpus(test, cfg.mask_fraction)
    report = EvalReport(map=map_eval(head, test), per_video_tpr=tpr_per_video(head, test, cfg.tpr_threshold))
    report.write_json(out / "report.json")
    write_tpr_csv(report.per_video_tpr, out / "tpr.csv")
    return {"map": report.map, "tracks": len(test)}


def _anchor(corpus, n: int):
    if n <= 0:
        return []
    pool = [s for s in corpus.split("val") if s.class_tag == "SyncSpeaking"]
    if len(pool) < n:
        raise ConfigError(f"anchor={n} but the val split has only {len(pool)} SyncSpeaking tracks")
    return pool[:n]


def cmd_sweep(cfg: RunConfig, out: Path) -> dict:
    from .evalmetrics import EvalReport, clean_test, unsync_sweep, write_sweep_csv

    head = _load_model(cfg)
    corpus = _load(cfg)
    curve = unsync_sweep(
        head,
        clean_test(corpus),
        cfg.kind,
        cfg.proportions,
        seed=cfg.seed,
        anchor=_anchor(corpus, cfg.anchor),
        spec=_shift_spec(cfg),
        skip_short=cfg.skip_short,
    )
    EvalReport(sweep=curve).write_json(out / "report.json")
    write_sweep_csv(curve, out / "sweep.csv")
    return {"sweep": curve}


def cmd_ablate(cfg: RunConfig, out: Path) -> dict:
    from .evalmetrics import EvalReport, ablation_grid, write_ablation_csv

    rows = ablation_grid(_load(cfg), _train_cfg(cfg), seed=cfg.seed, skip_short=cfg.skip_short)
    EvalReport(ablation_rows=rows).write_json(out / "report.json")
    write_ablation_csv(rows, out / "ablation.csv")
    return {"rows": len(rows)}


GRADCHECK_CASES = (
    ("sync", True),
    ("sync", False),
    ("rothnet", True),
    ("product", True),
)


def cmd_gradcheck(cfg: RunConfig, out: Path) -> dict:
    from .model import ModelSpec
    from .training import training_loss_gradcheck

    results = {}
    for head, pe in GRADCHECK_CASES:
        spec = ModelSpec(head=head, hv=4, wv=4, ha=3, d=4, pe_cross=pe, pe_self=pe)
        results[f"{head}{'' if pe else '-nope'}"] = training_loss_gradcheck(spec, seed=cfg.seed)
    worst = max(results.values())
    _write_json(out / "gradcheck.json", {"max_relative_error": worst, "per_head": results, "tolerance": GRADCHECK_TOL})
    print(f"max relative error {worst:.3e}")
    if not worst < GRADCHECK_TOL:
        raise CliError(EXIT_NUMERIC, "gradcheck_failed", f"max relative error {worst:.3e} >= {GRADCHECK_TOL:g}")
    return {"max_relative_error": worst}


def cmd_rank_dubbed(cfg: RunConfig, out: Path) -> dict:
    from .evalmetrics import EvalReport, rank_dubbed

    head = _load_model(cfg)
    ranking = rank_dubbed(head, _load(cfg).split("test"), cfg.tpr_threshold)
    EvalReport(per_video_tpr=ranking.tpr).write_json(out / "report.json")
    with open(out / "ranking.csv", "w") as fh:
        fh.write("video_id,tpr,dubbed\n")
        for v, t, d in ranking.ranked():
            fh.write(f"{v},{t!r},{int(d)}\n")
    return {"median_non_dubbed": ranking.median_other, "violations": ranking.violations}


COMMANDS = {
    "gen": cmd_gen,
    "augment": cmd_augment,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "rank-dubbed": cmd_rank_dubbed,
}


def needs_seed(command: str, cfg: RunConfig) -> bool:
    """Whether ``command`` draws random numbers with this config (eval only when curating)."""
    if command == "eval":
        return cfg.unsync is not None
    return command != "rank-dubbed"


def _fail(code: int, kind: str, message: str) -> int:
    line = json.dumps({"error": kind, "code": code, "message": " ".join(str(message).split())})
    print(line, file=sys.stderr)
    return code


def run(argv=None) -> int:
    from .desync import AugmentationInfeasibleError
    from .evalmetrics import UndefinedMetricError
    from .trackdata import CorpusError
    from .training import TrainingError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if cfg.seed is None and needs_seed(args.command, cfg):
            raise ConfigError(f"{args.command} is randomized: give --seed or a seed in the config file")
        out = Path(cfg.out)
        if out.exists() and not out.is_dir():
            raise ConfigError(f"--out {out} exists and is not a directory")
        out.mkdir(parents=True, exist_ok=True)
        write_run_json(out, args.command, cfg)
        extra = {"silence": args.silence, "mask": args.mask} if args.command == "eval" else {}
        summary = COMMANDS[args.command](cfg, out, **extra)
    except CliError as exc:
        return _fail(exc.code, exc.kind, str(exc))
    except (ConfigError, CorpusError, FileNotFoundError) as exc:
        return _fail(EXIT_CONFIG, "bad_config", str(exc))
    except AugmentationInfeasibleError as exc:
        return _fail(EXIT_INFEASIBLE, "augmentation_infeasible", str(exc))
    except (TrainingError, FloatingPointError, UndefinedMetricError) as exc:
        return _fail(EXIT_NUMERIC, "numeric_failure", str(exc))
    except ValueError as exc:
        return _fail(EXIT_CONFIG, "bad_config", str(exc))
    print(json.dumps(summary, sort_keys=True, default=list))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
