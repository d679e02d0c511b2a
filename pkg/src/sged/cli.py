"""
Command-line interface.

Subcommands: ``gen-synth``, ``train``, ``eval``, ``ablate``, ``gradcheck``,
``inspect``. Every subcommand accepts ``--config FILE``, ``--seed N``,
``--data-dir DIR``, ``--out-dir DIR`` and repeated ``--set key=value``.
Settings are layered as defaults < config file < ``SGED_*`` environment
variables < flags; the effective configuration is echoed to stderr in the
config-file format, so it can be saved and fed back through ``--config``.

Exit codes: 0 on success, 1 on a runtime failure (missing files, bad data,
failed gradient check), 2 on bad usage, bad configuration or a label
vocabulary mismatch. Diagnostics go to stderr; stdout carries results only.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from . import checkpoint
from . import config as cfgmod
from .data import DataError, Dataset, carve_validation, generate_synthetic, parse_jsonl, read_vocab, write_jsonl, write_vocab
from .encoders import ENCODER_KINDS
from .gradcheck import run_gradcheck
from .tensor import NonFiniteError, format_tol
from .train import ABLATIONS, TrainingError, VocabMismatchError, evaluate, run_ablation_suite, train

log = logging.getLogger("sged")

SPLITS = ("train", "val", "test")

# gen-synth flags that map directly onto config keys
_SYNTH_FLAGS = {
    "n_train": ("synth.n_train", int),
    "n_val": ("synth.n_val", int),
    "n_test": ("synth.n_test", int),
    "n_labels": ("synth.n_labels", int),
    "feature_dim": ("synth.feature_dim", int),
    "min_length": ("synth.min_length", int),
    "max_length": ("synth.max_length", int),
    "min_speakers": ("synth.min_speakers", int),
    "max_speakers": ("synth.max_speakers", int),
    "p_inertia": ("synth.p_inertia", float),
    "p_influence": ("synth.p_influence", float),
    "noise": ("synth.noise_eps", float),
    "sigma": ("synth.feature_noise_sigma", float),
}


class UsageError(Exception):
    """Bad flags or configuration; exits with code 2."""


# ---------------------------------------------------------------------------
# argument parsing


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="flat 'key = value' config file")
    p.add_argument("--seed", type=int, help="sets train.seed; all randomness derives from it")
    p.add_argument("--data-dir", type=Path, default=Path("data"), help="directory with labels.txt and split .jsonl files")
    p.add_argument("--out-dir", type=Path, default=Path("runs"), help="directory for outputs")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="sged",
        description="Speaker-guided emotion recognition in conversation.",
        epilog="Environment: SGED_<KEY> overrides a config key, with '__' for '.', e.g. SGED_TRAIN__LR=5e-4.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", parents=[common], help="write a synthetic train/val/test corpus into DATA_DIR")
    for flag, (_, typ) in _SYNTH_FLAGS.items():
        g.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ)

    sub.add_parser("train", parents=[common], help="train a model and write model.ckpt + train_log.csv")

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint and write eval_report.json")
    e.add_argument("--checkpoint", type=Path, help="default: OUT_DIR/model.ckpt")
    e.add_argument("--split", choices=SPLITS, help="overrides eval.split")

    a = sub.add_parser("ablate", parents=[common], help="train and test every ablation variant")
    a.add_argument("--variants", help="'|'-separated subset of: " + ", ".join(ABLATIONS))

    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the full model")
    c.add_argument("--h", type=int, default=8, help="hidden size")
    c.add_argument("--encoder", action="append", choices=ENCODER_KINDS, help="repeatable; default all")
    c.add_argument("--n-seeds", type=int, default=3)
    c.add_argument("--tol", type=float, default=1e-6)

    i = sub.add_parser("inspect", parents=[common], help="dump attention weights and decoder trace for one dialogue")
    i.add_argument("--dialogue", required=True, help="dialogue id")
    i.add_argument("--checkpoint", type=Path, help="default: OUT_DIR/model.ckpt")
    i.add_argument("--split", choices=SPLITS, help="overrides eval.split")
    return parser


def effective_config(args: argparse.Namespace, environ=None) -> dict[str, Any]:
    overrides: dict[str, Any] = {}
    for item in args.overrides:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        overrides[key] = value
    for flag, (key, _) in _SYNTH_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if args.seed is not None:
        overrides["train.seed"] = args.seed
    if getattr(args, "split", None) is not None:
        overrides["eval.split"] = args.split
    try:
        return cfgmod.resolve(args.config, overrides, environ)
    except cfgmod.ConfigError as e:
        raise UsageError(str(e)) from None


def echo_config(cfg: dict[str, Any]) -> None:
    sys.stderr.write(f"# effective config (hash {cfgmod.config_hash(cfg)})\n")
    sys.stderr.write(cfgmod.dump(cfg))
    sys.stderr.flush()


# ---------------------------------------------------------------------------
# data helpers


def _vocab(data_dir: Path) -> tuple[str, ...]:
    path = data_dir / "labels.txt"
    if not path.exists():
        raise FileNotFoundError(f"label vocabulary not found: {path}")
    return read_vocab(path)


def _split(data_dir: Path, name: str, vocab: Sequence[str], required: bool = True) -> Optional[Dataset]:
    path = data_dir / f"{name}.jsonl"
    if not path.exists():
        if required:
            raise FileNotFoundError(f"{name} split not found: {path}")
        return None
    return parse_jsonl(path, vocab, split=name)


def _train_val(cfg: dict, data_dir: Path) -> tuple[Dataset, Optional[Dataset], tuple[str, ...]]:
    vocab = _vocab(data_dir)
    train_set = _split(data_dir, "train", vocab)
    val_set = _split(data_dir, "val", vocab, required=False)
    carve = cfg["data.val_from_train"]
    if carve:
        if val_set is not None:
            log.warning("val.jsonl present; data.val_from_train=%d ignored", carve)
        else:
            train_set, val_set = carve_validation(train_set, carve)
    return train_set, val_set, vocab


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _load_for_eval(args, cfg):
    ckpt = args.checkpoint or args.out_dir / "model.ckpt"
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    model, header = checkpoint.load(ckpt)
    vocab = _vocab(args.data_dir)
    if tuple(vocab) != model.label_vocab:
        raise VocabMismatchError(vocab, model.label_vocab)
    return model, _split(args.data_dir, cfg["eval.split"], vocab)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_synth(args, cfg) -> int:
    out = args.data_dir
    out.mkdir(parents=True, exist_ok=True)
    base = cfg["train.seed"]
    vocab = None
    for k, name in enumerate(SPLITS):
        n = cfg[f"synth.n_{name}"]
        ds = generate_synthetic(cfgmod.synthetic_spec(cfg, n, seed=3 * base + k), split=name)
        write_jsonl(out / f"{name}.jsonl", ds)
        vocab = ds.label_vocab
        print(f"{name}: {len(ds)} dialogues, {ds.n_utterances} utterances -> {out / (name + '.jsonl')}")
    write_vocab(out / "labels.txt", vocab)
    return 0


def cmd_train(args, cfg) -> int:
    train_set, val_set, _ = _train_val(cfg, args.data_dir)
    tcfg = cfgmod.train_config(cfg)
    result = train(train_set, val_set, tcfg)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"best_epoch": result.best_epoch, "best_val_wf1": result.best_val_wf1, "epochs": tcfg.epochs}
    checkpoint.save(args.out_dir / "model.ckpt", result.model, cfg, cfgmod.config_hash(cfg), meta)
    _write(args.out_dir / "train_log.csv", result.log_csv())
    _write(args.out_dir / "config.txt", cfgmod.dump(cfg))
    print(f"best epoch {result.best_epoch}  selection wF1 {result.best_val_wf1:.4f}  -> {args.out_dir / 'model.ckpt'}")
    return 0


def cmd_eval(args, cfg) -> int:
    model, data = _load_for_eval(args, cfg)
    report = evaluate(data, model)
    path = args.out_dir / "eval_report.json"
    _write(path, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    print(report.summary())
    return 0


def cmd_ablate(args, cfg) -> int:
    train_set, val_set, vocab = _train_val(cfg, args.data_dir)
    test_set = _split(args.data_dir, "test", vocab)
    variants = None
    if args.variants:
        variants = [v.strip() for v in args.variants.split("|")]
        unknown = [v for v in variants if v not in ABLATIONS]
        if unknown:
            raise UsageError(f"unknown ablation variant(s): {', '.join(unknown)}")
    table = run_ablation_suite(train_set, val_set, test_set, cfgmod.train_config(cfg), variants=variants)
    _write(args.out_dir / "ablation.txt", table.to_text() + "\n")
    _write(args.out_dir / "ablation.csv", table.to_csv())
    print(table.to_text())
    return 0


def cmd_gradcheck(args, cfg) -> int:
    base = cfg["train.seed"]
    seeds = tuple(range(base, base + args.n_seeds))
    encoders = tuple(args.encoder) if args.encoder else ENCODER_KINDS
    cases = run_gradcheck(hidden=args.h, seeds=seeds, encoders=encoders, tol=args.tol)
    worst = max(c.report.max_rel_err for c in cases)
    for c in cases:
        print(f"[{c.encoder} seed={c.seed}]")
        for line in c.report.lines():
            print("  " + line)
    ok = all(c.report.passed for c in cases)
    cmp = "<" if ok else ">="
    print(f"{'PASS' if ok else 'FAIL'} max_rel_err {cmp} {format_tol(args.tol)} (observed {worst:.3e})")
    return 0 if ok else 1


def inspect_dialogue(model, conv, vocab) -> dict:
    fwd = model.forward(conv)
    st = fwd.states
    utterances = []
    for k, u in enumerate(conv.utterances):
        a_in, a_ex = st.alpha_intra[k], st.alpha_inter[k]
        utterances.append(
            {
                "index": u.index,
                "speaker": u.speaker,
                "psi": conv.psi[k],
                "first_of_speaker": st.first_of_speaker[k],
                "gold": vocab[u.gold_label],
                "alpha_intra": None if a_in is None else a_in.reshape(-1).tolist(),
                "alpha_inter": None if a_ex is None else a_ex.reshape(-1).tolist(),
            }
        )
    return {
        "id": conv.id,
        "alpha_intra": [
            {"index": u["index"], "weights": u["alpha_intra"]} for u in utterances if u["alpha_intra"] is not None
        ],
        "utterances": utterances,
        "decode": fwd.trace.to_json(vocab),
    }


def cmd_inspect(args, cfg) -> int:
    model, data = _load_for_eval(args, cfg)
    out = inspect_dialogue(model, data.by_id(args.dialogue), model.label_vocab)
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    _write(args.out_dir / f"inspect_{args.dialogue}.json", text)
    sys.stdout.write(text)
    return 0


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "inspect": cmd_inspect,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        cfg = effective_config(args)
        echo_config(cfg)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, VocabMismatchError) as e:
        print(f"sged {args.command}: error: {e}", file=sys.stderr)
        return 2
    except KeyError as e:
        print(f"sged {args.command}: error: {e.args[0]}", file=sys.stderr)
        return 1
    except (FileNotFoundError, DataError, checkpoint.CheckpointError, TrainingError, NonFiniteError, ValueError, OSError) as e:
        print(f"sged {args.command}: error: {e}", file=sys.stderr)
        return 1
