"""Command-line entry point: ``nrces gen|mask|train|eval|ablate|sweep|replay``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric failure.
Every command writes a ``manifest.json`` (or ``<output>.manifest.json``)
listing its inputs, outputs, seeds and the exact argv, which ``replay`` can
re-execute.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

from . import __version__
from .data import (
    ToyCorpusSpec,
    generate_toy_corpus,
    mask_entities,
    read_corpus,
    write_corpus,
    write_jsonl,
)
from .errors import ConfigError, NrcesError
from .evaluator import decode_corpus, error_listing, score
from .losses import LossVariant
from .model import load_checkpoint, save_checkpoint
from .trainer import Probe, TrainConfig, run_ablation_matrix, run_w_sweep, train, write_curve_csv

log = logging.getLogger("nrces")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


class Run:
    """Collects what a command read and wrote, then emits the manifest."""

    def __init__(self, args, argv):
        self.command = args.command
        self.argv = list(argv)
        self.args = {k: v for k, v in vars(args).items() if k != "func"}
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.config: dict = {}
        self.seeds: dict = {}
        self.started = time.perf_counter()

    def read(self, path):
        if not Path(path).is_file():
            raise FileNotFoundError(f"no such file: {path}")
        self.inputs[str(path)] = sha256(path)
        return path

    def wrote(self, path):
        self.outputs.append(str(path))

    def finish(self, path):
        missing = [p for p in self.outputs if not Path(p).exists()]
        if missing:
            raise OSError(f"artifacts not written: {missing}")
        write_json(
            {
                "tool": "nrces",
                "version": __version__,
                "command": self.command,
                "argv": self.argv,
                "cwd": str(Path.cwd()),
                "args": self.args,
                "config": self.config,
                "seeds": self.seeds,
                "inputs": self.inputs,
                "outputs": self.outputs,
                "duration_s": round(time.perf_counter() - self.started, 3),
            },
            path,
        )


def _floats(text: str) -> list[float]:
    """``2,5,10`` or ``start:stop:step`` (inclusive)."""
    if ":" in text:
        try:
            start, stop, stride = (float(x) for x in text.split(":"))
        except ValueError:
            raise ConfigError(f"bad range {text!r}; expected start:stop:step") from None
        if stride <= 0:
            raise ConfigError("range step must be positive")
        out, k = [], 0
        while start + k * stride <= stop + 1e-9:
            out.append(round(start + k * stride, 10))
            k += 1
        return out
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ------------------------------------------------------------------


def cmd_gen(args, run: Run):
    if args.sentences <= 0:
        raise ConfigError("--sentences must be positive")
    dev_n = args.dev_sentences if args.dev_sentences is not None else args.sentences // 4
    test_n = args.test_sentences if args.test_sentences is not None else args.sentences // 4
    spec = ToyCorpusSpec(
        n_sentences=args.sentences + dev_n + test_n,
        vocab_size=args.vocab,
        n_types=args.types,
        min_len=args.min_len,
        max_len=args.max_len,
        density=args.density,
        entity_vocab_per_type=args.entity_vocab,
        seed=args.seed,
    )
    corpus = generate_toy_corpus(spec)
    out = _out_dir(args.out)
    splits = {"train": corpus[: args.sentences], "dev": corpus[args.sentences : args.sentences + dev_n], "test": corpus[args.sentences + dev_n :]}
    for name, part in splits.items():
        write_corpus(part, out / f"{name}.jsonl")
        run.wrote(out / f"{name}.jsonl")
    run.config = {f.name: getattr(spec, f.name) for f in fields(spec)}
    run.seeds = {"corpus": args.seed}
    run.finish(out / "manifest.json")
    print(json.dumps({k: len(v) for k, v in splits.items()}))


def cmd_mask(args, run: Run):
    corpus = read_corpus(run.read(args.input))
    masked, manifest = mask_entities(corpus, args.prob, args.seed)
    write_corpus(masked, args.output)
    manifest_path = args.manifest or f"{args.output}.masked.jsonl"
    write_jsonl(manifest, manifest_path)
    run.wrote(args.output)
    run.wrote(manifest_path)
    n_total = sum(len(s.entities) for s in corpus)
    n_masked = sum(len(r["masked"]) for r in manifest)
    run.config = {"mask_prob": args.prob}
    run.seeds = {"mask": args.seed}
    run.finish(f"{args.output}.manifest.json")
    frac = n_masked / n_total if n_total else 0.0
    print(json.dumps({"entities": n_total, "masked": n_masked, "masked_fraction": round(frac, 4)}))


def _train_config(args, **overrides) -> TrainConfig:
    seed = args.seed
    cfg = TrainConfig(
        variant=LossVariant.parse(args.variant).value,
        w=args.w,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        max_width=args.max_width,
        negative_keep_rate=args.negative_keep_rate,
        resample_per_epoch=args.resample_per_epoch,
        model_seed=args.model_seed if args.model_seed is not None else seed,
        sample_seed=args.sample_seed if args.sample_seed is not None else seed,
        mask_seed=args.mask_seed if args.mask_seed is not None else seed,
        dim=args.dim,
        width_dim=args.width_dim,
        hidden=args.hidden,
        select=args.select,
        threshold=args.threshold,
        probes=tuple(Probe.parse(p) for p in args.probe),
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg.validate()


def _seeds_of(cfg: TrainConfig) -> dict:
    return {"model": cfg.model_seed, "mask": cfg.mask_seed, "sample": cfg.sample_seed}


def cmd_train(args, run: Run):
    cfg = _train_config(args)
    train_c = read_corpus(run.read(args.train))
    dev_c = read_corpus(run.read(args.dev))
    res = train(train_c, dev_c, cfg)
    out = _out_dir(args.out)
    save_checkpoint(out / "checkpoint.json", res.params, res.vocab, res.labels, extra={"config": cfg.to_dict(), "best_epoch": res.best_epoch})
    write_curve_csv(res.curve, cfg.probes, out / "curve.csv")
    if cfg.probes:
        dists = [{"epoch": p.epoch, "labels": res.labels, "probes": p.probe_dists} for p in res.curve]
        write_jsonl(dists, out / "probe_distributions.jsonl")
        run.wrote(out / "probe_distributions.jsonl")
    run.wrote(out / "checkpoint.json")
    run.wrote(out / "curve.csv")
    run.config = cfg.to_dict()
    run.seeds = _seeds_of(cfg)
    run.finish(out / "manifest.json")
    print(json.dumps({"epochs": len(res.curve), "final_dev_f1": round(res.final_f1, 2)}))


def cmd_eval(args, run: Run):
    params, vocab, labels = load_checkpoint(run.read(args.checkpoint))
    corpus = read_corpus(run.read(args.corpus))
    preds = decode_corpus(params, vocab, labels, corpus, threshold=args.threshold)
    report = score(corpus, preds).to_dict()
    write_json(report, args.out)
    run.wrote(args.out)
    if args.errors:
        write_jsonl(error_listing(corpus, preds), args.errors)
        run.wrote(args.errors)
    run.config = {"threshold": args.threshold}
    run.finish(f"{args.out}.manifest.json")
    print(json.dumps(report))


def cmd_ablate(args, run: Run):
    cfg = _train_config(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    seeds = _ints(args.seeds)
    if not variants or not seeds:
        raise ConfigError("--variants and --seeds must be non-empty")
    train_c = read_corpus(run.read(args.train))
    dev_c = read_corpus(run.read(args.dev))
    result = run_ablation_matrix(train_c, dev_c, cfg, variants, seeds, jobs=args.jobs)
    write_json(result, args.out)
    run.wrote(args.out)
    run.config = result["config"]
    run.seeds = {"seeds": seeds}
    run.finish(f"{args.out}.manifest.json")
    for row in result["rows"]:
        print(f"{row['variant']:<18} {row['mean_f1']:6.2f} ({row['std_f1']:.2f})")


def cmd_sweep(args, run: Run):
    cfg = _train_config(args)
    ws, masks = _floats(args.w_values), _floats(args.mask)
    if not ws or not masks:
        raise ConfigError("--w and --mask grids must be non-empty")
    seeds = _ints(args.seeds) if args.seeds else None
    train_c = read_corpus(run.read(args.train))
    dev_c = read_corpus(run.read(args.dev))
    result = run_w_sweep(train_c, dev_c, cfg, ws, masks, seeds=seeds, jobs=args.jobs)
    write_json(result, args.out)
    run.wrote(args.out)
    run.config = result["config"]
    run.seeds = {"mask": cfg.mask_seed, "seeds": seeds or [cfg.model_seed]}
    run.finish(f"{args.out}.manifest.json")
    for cell in result["cells"]:
        print(f"w={cell['w']:<5g} mask={cell['mask_prob']:<4g} f1={cell['mean_f1']:.2f}")


def cmd_replay(args, run: Run):
    doc = json.loads(Path(run.read(args.manifest)).read_text())
    argv = doc.get("argv")
    if not argv or argv[0] == "replay":
        raise ConfigError("manifest does not record a replayable command")
    prev = Path.cwd()
    os.chdir(doc.get("cwd", prev))
    try:
        return main(argv)
    finally:
        os.chdir(prev)


# -- parser --------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser, sweep=False):
    d = TrainConfig()
    if not sweep:
        p.add_argument("--variant", default=d.variant, help="one of: " + ", ".join(v.value for v in LossVariant))
        p.add_argument("--w", type=float, default=d.w)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--max-width", type=int, default=d.max_width)
    p.add_argument("--negative-keep-rate", type=float, default=d.negative_keep_rate)
    p.add_argument("--resample-per-epoch", action="store_true")
    p.add_argument("--seed", type=int, default=1, help="default for every per-stage seed")
    p.add_argument("--model-seed", type=int)
    p.add_argument("--sample-seed", type=int)
    p.add_argument("--mask-seed", type=int)
    p.add_argument("--dim", type=int, default=d.dim)
    p.add_argument("--width-dim", type=int, default=d.width_dim)
    p.add_argument("--hidden", type=int, default=d.hidden)
    p.add_argument("--select", choices=["final", "best-dev"], default=d.select)
    p.add_argument("--threshold", type=float)
    p.add_argument("--probe", action="append", default=[], metavar="[dev:]SENT:BEGIN:END")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nrces", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus with train/dev/test splits")
    spec = ToyCorpusSpec()
    p.add_argument("--sentences", type=int, required=True, help="training sentences")
    p.add_argument("--dev-sentences", type=int)
    p.add_argument("--test-sentences", type=int)
    p.add_argument("--types", type=int, default=spec.n_types)
    p.add_argument("--vocab", type=int, default=spec.vocab_size)
    p.add_argument("--entity-vocab", type=int, default=spec.entity_vocab_per_type)
    p.add_argument("--min-len", type=int, default=spec.min_len)
    p.add_argument("--max-len", type=int, default=spec.max_len)
    p.add_argument("--density", type=float, default=spec.density)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("mask", help="demote gold entities to non-entities at random")
    p.add_argument("--prob", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", help="mask manifest path (default: OUTPUT.masked.jsonl)")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("train", help="train one model; writes checkpoint.json and curve.csv")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--out", default=".")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--out", default="report.json")
    p.add_argument("--errors", help="write per-sentence FP/FN listing here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="variants x seeds: mean and std of final dev F1")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--variants", default="nrces,nrces_no_sampling,wo_sigmoid,wo_separate,wo_ind_neg,wo_ind_pos")
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="ablation.json")
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="grid over w and masking probability (clean training corpus in)")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--w", dest="w_values", default="2,5,10")
    p.add_argument("--mask", default="0.3:0.9:0.2")
    p.add_argument("--seeds")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="sweep.json")
    _add_train_flags(p, sweep=True)
    p.set_defaults(func=cmd_sweep, variant=LossVariant.NRCES.value, w=TrainConfig().w)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        code = args.func(args, Run(args, argv))
        return int(code or EXIT_OK)
    except NrcesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
