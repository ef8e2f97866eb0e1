"""Command-line entry point.

Subcommands: mine, build-graph, train-planner, train-generator, generate,
evaluate, toy-corpus, sweep-k, pipeline. Exit codes: 0 success, 1 config
error, 2 data error, 3 numeric failure. OBSGEN_OUT_DIR overrides the output
directory from the environment.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import pipeline as pipe
from .config import PipelineConfig, default_stopwords_path, load_config
from .corpus import MentionLexicon, build_vocab, extract_plan, read_records, write_records
from .decoding import BeamConfig
from .errors import ConfigError, DataError, NumericError, ObsGenError
from .miner import MinedNgrams, MinerConfig, load_stopwords, mine_corpus
from .obsgraph import build_graph
from .toydata import ToyConfig, make_toy_corpus


def _outdir(value: str) -> Path:
    return Path(os.environ.get("OBSGEN_OUT_DIR", value))


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _config_from_args(args) -> PipelineConfig:
    cfg = load_config(path=getattr(args, "config", None),
                      preset=getattr(args, "preset", None),
                      overrides=_parse_overrides(getattr(args, "set", None)))
    cfg.outdir = str(_outdir(cfg.outdir))
    return cfg


def cmd_toy_corpus(args) -> int:
    out = _outdir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sizes = {"train": args.size, "val": args.val_size, "test": args.test_size}
    lexicon = None
    for split, (name, size) in enumerate(sizes.items()):
        cfg = ToyConfig(size=size, vocab_size=args.vocab_size,
                        seed=args.seed * 7919 + split, d_v=args.d_v,
                        noise=args.noise, filler_variants=args.filler_variants)
        records, lexicon = make_toy_corpus(cfg)
        write_records(out / f"{name}.jsonl", records)
        print(f"wrote {out / f'{name}.jsonl'} ({size} records)")
    lexicon.to_file(out / "lexicon.json")
    print(f"wrote {out / 'lexicon.json'}")
    return 0


def cmd_mine(args) -> int:
    records = read_records(args.records)
    stopwords = load_stopwords(args.stopwords or default_stopwords_path())
    cfg = MinerConfig(k=args.k, tau_merge=args.tau_merge,
                      association_floor=args.floor, delta=args.delta)
    mined = mine_corpus(records, cfg, stopwords)
    mined.to_file(args.out)
    total = sum(len(v) for v in mined.per_observation.values())
    print(f"wrote {args.out}: {len(mined.per_observation)} observations, "
          f"{total} n-gram entries")
    return 0


def cmd_build_graph(args) -> int:
    records = read_records(args.records)
    lexicon = MentionLexicon.from_file(args.lexicon)
    mined = MinedNgrams.from_file(args.mined)
    pipe.stage_graphs(records, lexicon, mined, Path(args.out))
    print(f"wrote {args.out} ({len(records)} graphs)")
    return 0


def cmd_train_planner(args) -> int:
    cfg = _config_from_args(args)
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = pipe.ensure_toy_data(cfg, outdir)
    train_records = read_records(cfg.records_train)
    val_records = read_records(cfg.records_val) if cfg.records_val else []
    lexicon = MentionLexicon.from_file(cfg.lexicon)
    pipe.stage_train_planner(cfg, train_records, val_records, lexicon,
                             outdir / "planner.ckpt",
                             outdir / "planner_metrics.json")
    print(f"wrote {outdir / 'planner.ckpt'}")
    metrics = json.loads((outdir / "planner_metrics.json").read_text())
    if metrics["metrics"]:
        best = metrics["metrics"][metrics["best_epoch"]]
        print(f"best epoch {metrics['best_epoch']}: micro-F1 {best['micro_f1']:.4f} "
              f"macro-F1(abn) {best['macro_f1_abnormal']:.4f}")
    return 0


def cmd_train_generator(args) -> int:
    cfg = _config_from_args(args)
    if args.plans:
        cfg.train_plans = args.plans
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = pipe.ensure_toy_data(cfg, outdir)
    train_records = read_records(cfg.records_train)
    lexicon = MentionLexicon.from_file(cfg.lexicon)
    mined_path = outdir / "mined.json"
    if mined_path.exists():
        mined = MinedNgrams.from_file(mined_path)
    else:
        mined = pipe.stage_mine(cfg, train_records, mined_path)
    vocab = build_vocab(train_records, cfg.vocab_min_count)
    planner_model = None
    if cfg.train_plans == "predicted":
        planner_model = pipe.load_planner(outdir / "planner.ckpt")
    pipe.stage_train_generator(cfg, train_records, lexicon, mined, vocab,
                               outdir / "generator.ckpt",
                               outdir / "generator_log.json", planner_model)
    print(f"wrote {outdir / 'generator.ckpt'}")
    return 0


def cmd_generate(args) -> int:
    planner_model = pipe.load_planner(args.planner)
    generator_model, vocab, mined, beam = pipe.load_generator(args.generator)
    if args.beam_size:
        beam = BeamConfig(args.beam_size, beam.max_steps, beam.length_norm)
    records = read_records(args.input)
    rows = pipe.generate_reports(planner_model, generator_model, records,
                                 mined, vocab, beam, Path(args.out))
    print(f"wrote {args.out} ({len(rows)} reports)")
    return 0


def cmd_evaluate(args) -> int:
    rows = [json.loads(line) for line in Path(args.pred).read_text().splitlines()
            if line.strip()]
    gold = read_records(args.gold)
    lexicon = MentionLexicon.from_file(args.lexicon)
    report = pipe.evaluate_predictions(rows, gold, lexicon)
    print(report.table())
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
        print(f"wrote {args.out}")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config_from_args(args)
    manifest = pipe.run_pipeline(cfg)
    print(f"manifest: {Path(cfg.outdir) / 'manifest.json'} "
          f"(config hash {manifest['config_hash'][:12]})")
    return 0


def cmd_sweep_k(args) -> int:
    cfg = _config_from_args(args)
    k_values = [int(x) for x in args.k.split(",") if x.strip()]
    if not k_values:
        raise ConfigError("--k expects a comma-separated list such as 10,20,30")
    seeds = [int(x) for x in args.seeds.split(",") if x.strip()]
    pipe.sweep_k(cfg, k_values, seeds)
    print(f"wrote {Path(cfg.outdir) / 'sweep.jsonl'}")
    return 0


def _add_config_args(sub):
    sub.add_argument("--config", default=None, help="INI config file")
    sub.add_argument("--preset", default=None, choices=["toy", "iu", "mimic"])
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="obsgen",
        description="observation-guided report generation pipeline",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toy-corpus", help="emit a synthetic labeled corpus")
    p.add_argument("--out", default="toy")
    p.add_argument("--size", type=int, default=50)
    p.add_argument("--val-size", type=int, default=20)
    p.add_argument("--test-size", type=int, default=20)
    p.add_argument("--vocab-size", type=int, default=10)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--d-v", type=int, default=12)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--filler-variants", type=int, default=1)
    p.set_defaults(fn=cmd_toy_corpus)

    p = sub.add_parser("mine", help="mine observation-associated n-grams")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=30)
    p.add_argument("--tau-merge", type=float, default=0.0)
    p.add_argument("--floor", type=float, default=float("-inf"))
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--stopwords", default=None)
    p.set_defaults(fn=cmd_mine)

    p = sub.add_parser("build-graph", help="dump per-record observation graphs")
    p.add_argument("--records", required=True)
    p.add_argument("--mined", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_build_graph)

    p = sub.add_parser("train-planner", help="train the observation planner")
    _add_config_args(p)
    p.set_defaults(fn=cmd_train_planner)

    p = sub.add_parser("train-generator", help="train the report generator")
    _add_config_args(p)
    p.add_argument("--plans", choices=["gold", "predicted"], default=None)
    p.set_defaults(fn=cmd_train_generator)

    p = sub.add_parser("generate", help="decode reports for a record file")
    p.add_argument("--planner", required=True)
    p.add_argument("--generator", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beam-size", type=int, default=None)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("evaluate", help="score generated reports")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    _add_config_args(p)
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("sweep-k", help="metric rows across top-K settings")
    _add_config_args(p)
    p.add_argument("--k", required=True, help="comma-separated K values")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.set_defaults(fn=cmd_sweep_k)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except ObsGenError as exc:
        cause = exc.cause if isinstance(exc, pipe.StageFailure) else exc
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(cause, ConfigError):
            return 1
        if isinstance(cause, DataError):
            return 2
        if isinstance(cause, NumericError):
            return 3
        return 3


if __name__ == "__main__":
    sys.exit(main())
