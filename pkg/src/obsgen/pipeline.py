"""End-to-end orchestration: mine, build graphs, train both stages, decode,
evaluate; every artifact lands under the output directory along with a
manifest (config hash, seed, artifact checksums) sufficient to reproduce the
run bit-for-bit."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import generator as gen_mod
from . import planner as plan_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PipelineConfig, config_hash, default_stopwords_path
from .corpus import (
    MentionLexicon,
    ReportRecord,
    build_vocab,
    encode_tokens,
    extract_plan,
    labels_to_observations,
    read_records,
    record_features,
    write_records,
)
from .decoding import BeamConfig
from .errors import ConfigError, DataError, NumericError, ObsGenError
from .metrics import score_corpus
from .miner import MinedNgrams, MinerConfig, load_stopwords, mine_corpus
from .obsgraph import build_graph
from .toydata import ToyConfig, make_toy_corpus

log = logging.getLogger(__name__)


@dataclass
class StageFailure(ObsGenError):
    stage: str
    cause: Exception

    def __str__(self):
        return f"stage {self.stage!r} failed: {self.cause}"


def _run_stage(name: str, fn, *args, **kwargs):
    log.info("stage %s", name)
    try:
        return fn(*args, **kwargs)
    except ObsGenError as exc:
        raise StageFailure(name, exc) from exc


# ---------------------------------------------------------------------------
# artifact helpers
# ---------------------------------------------------------------------------


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def ensure_toy_data(cfg: PipelineConfig, outdir: Path) -> PipelineConfig:
    """Generate train/val/test record files and the lexicon when unset."""
    if cfg.records_train:
        return cfg
    data_dir = outdir / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    sizes = (cfg.toy_train_size, cfg.toy_val_size, cfg.toy_test_size)
    names = ("train", "val", "test")
    lexicon = None
    for split, (name, size) in enumerate(zip(names, sizes)):
        toy_cfg = ToyConfig(size=size, vocab_size=cfg.toy_vocab_size,
                            seed=cfg.seed * 7919 + split,
                            d_v=cfg.d_v, noise=cfg.toy_noise,
                            filler_variants=cfg.toy_filler_variants)
        records, lexicon = make_toy_corpus(toy_cfg)
        write_records(data_dir / f"{name}.jsonl", records)
    lexicon.to_file(data_dir / "lexicon.json")
    cfg.records_train = str(data_dir / "train.jsonl")
    cfg.records_val = str(data_dir / "val.jsonl")
    cfg.records_test = str(data_dir / "test.jsonl")
    cfg.lexicon = str(data_dir / "lexicon.json")
    return cfg


def stage_mine(cfg: PipelineConfig, records: list[ReportRecord], out_path: Path) -> MinedNgrams:
    stop_path = cfg.stopwords or default_stopwords_path()
    stopwords = load_stopwords(stop_path)
    miner_cfg = MinerConfig(k=cfg.k, tau_merge=cfg.tau_merge,
                            association_floor=cfg.association_floor, delta=cfg.delta)
    mined = mine_corpus(records, miner_cfg, stopwords)
    mined.to_file(out_path)
    return mined


def stage_graphs(records: list[ReportRecord], lexicon: MentionLexicon,
                 mined: MinedNgrams, out_path: Path) -> None:
    lines = []
    for rec in records:
        plan = extract_plan(rec, lexicon)
        if not plan.observations:
            lines.append(json.dumps({"id": rec.id, "empty": True}))
            continue
        graph = build_graph(plan, mined)
        lines.append(json.dumps({
            "id": rec.id,
            "nodes": graph.num_nodes,
            "observations": len(graph.obs_nodes),
            "ngrams": len(graph.ngram_nodes),
            "tokens": len(graph.token_nodes),
            "edges": len(graph.edges),
            "dump": graph.dump(),
        }, sort_keys=True))
    out_path.write_text("\n".join(lines) + "\n")


def planner_examples(records, lexicon):
    out = []
    gold_sets = []
    for rec in records:
        plan = extract_plan(rec, lexicon)
        out.append(plan_mod.PlannerExample(record_features(rec), plan.plan_tokens()))
        gold_sets.append(labels_to_observations(rec.labels))
    return out, gold_sets


def planner_config(cfg: PipelineConfig) -> plan_mod.PlannerConfig:
    return plan_mod.PlannerConfig(
        d_v=cfg.d_v, hidden_size=cfg.hidden_size, num_heads=cfg.num_heads,
        ffn_size=cfg.ffn_size, dropout_rate=cfg.dropout,
        enc_layers=cfg.planner_enc_layers, dec_layers=cfg.planner_dec_layers,
        max_visual=cfg.max_visual, max_plan=cfg.max_plan, alpha=cfg.alpha,
        seed=cfg.seed,
    )


def generator_config(cfg: PipelineConfig, vocab_size: int) -> gen_mod.GeneratorConfig:
    return gen_mod.GeneratorConfig(
        vocab_size=vocab_size, d_v=cfg.d_v, hidden_size=cfg.hidden_size,
        num_heads=cfg.num_heads, ffn_size=cfg.ffn_size, dropout_rate=cfg.dropout,
        graph_layers=cfg.graph_layers, align_layers=cfg.align_layers,
        dec_blocks=cfg.dec_blocks, trr_blocks=cfg.trr_blocks,
        max_visual=cfg.max_visual, max_steps=cfg.max_steps, max_plan=cfg.max_plan,
        beta=cfg.beta, use_plan=cfg.use_plan, seed=cfg.seed,
    )


def stage_train_planner(cfg: PipelineConfig, train_records, val_records,
                        lexicon, ckpt_path: Path, metrics_path: Path):
    model = plan_mod.PlannerModel(planner_config(cfg))
    train_ex, _ = planner_examples(train_records, lexicon)
    val_ex, val_gold = planner_examples(val_records, lexicon)
    logbook = plan_mod.train_planner(
        model, train_ex, list(zip(val_ex, val_gold)),
        epochs=cfg.planner_epochs, batch_size=cfg.batch_size,
        lr=cfg.planner_lr, data_seed=cfg.seed,
    )
    save_checkpoint(ckpt_path, model.state_arrays(),
                    {"kind": "planner", "model": model.cfg.to_dict()})
    metrics_path.write_text(json.dumps({
        "losses": logbook.epoch_losses,
        "metrics": [vars(m) for m in logbook.epoch_metrics],
        "best_epoch": logbook.best_epoch,
    }, indent=1, sort_keys=True) + "\n")
    return model


def load_planner(ckpt_path) -> plan_mod.PlannerModel:
    arrays, meta = load_checkpoint(ckpt_path)
    if meta.get("kind") != "planner":
        raise ConfigError(f"{ckpt_path} is not a planner checkpoint")
    model = plan_mod.PlannerModel(plan_mod.PlannerConfig(**meta["model"]))
    model.load_state_arrays(arrays)
    return model


def gen_examples_for(records, lexicon, mined, vocab,
                     plans: str = "gold", planner_model=None,
                     beam: BeamConfig | None = None, max_len: int | None = None):
    out = []
    for rec in records:
        if plans == "gold":
            plan = extract_plan(rec, lexicon)
            observations = plan.observations
        else:
            if planner_model is None:
                raise ConfigError("predicted plans require a planner checkpoint")
            observations = plan_mod.decode_plan(planner_model, record_features(rec),
                                                beam)
        plan_obj = corpus_mod.ObservationPlan(list(observations),
                                              list(range(len(observations))))
        graph = build_graph(plan_obj, mined) if observations else None
        membership = (gen_mod.gold_token_membership(graph, rec.tokens)
                      if graph is not None else None)
        report_ids = encode_tokens(rec.tokens, vocab)
        if max_len is not None and len(report_ids) > max_len:
            report_ids = report_ids[:max_len]
        out.append(gen_mod.GenExample(
            features=record_features(rec), graph=graph,
            report_ids=report_ids,
            gold_membership=membership,
        ))
    return out


def stage_train_generator(cfg: PipelineConfig, train_records, lexicon,
                          mined: MinedNgrams, vocab, ckpt_path: Path,
                          log_path: Path, planner_model=None):
    model = gen_mod.GeneratorModel(generator_config(cfg, len(vocab)))
    examples = gen_examples_for(train_records, lexicon, mined, vocab,
                                plans=cfg.train_plans, planner_model=planner_model,
                                beam=BeamConfig(cfg.beam_size, cfg.max_steps,
                                                cfg.length_norm),
                                max_len=cfg.max_steps - 1)
    losses = gen_mod.train_generator(
        model, examples, vocab, epochs=cfg.generator_epochs,
        batch_size=cfg.batch_size, lr=cfg.generator_lr, data_seed=cfg.seed,
    )
    save_checkpoint(ckpt_path, model.state_arrays(), {
        "kind": "generator",
        "model": model.cfg.to_dict(),
        "vocab": vocab,
        "mined": _mined_payload(mined),
        "beam": {"beam_size": cfg.beam_size, "max_steps": cfg.max_steps,
                 "length_norm": cfg.length_norm},
    })
    log_path.write_text(json.dumps({"losses": losses}, indent=1) + "\n")
    return model


def _mined_payload(mined: MinedNgrams) -> dict:
    return {
        "k": mined.k,
        "stopwords": sorted(mined.stopwords),
        "observations": {
            key: [{"tokens": list(c.tokens), "score": c.score, "freq": c.freq}
                  for c in entries]
            for key, entries in sorted(mined.per_observation.items())
        },
    }


def _mined_from_payload(payload: dict) -> MinedNgrams:
    from .miner import NgramCandidate
    mined = MinedNgrams(k=payload["k"], stopwords=set(payload["stopwords"]))
    for key, entries in payload["observations"].items():
        mined.per_observation[key] = [
            NgramCandidate(tuple(e["tokens"]), e["freq"], e["score"]) for e in entries
        ]
    return mined


def load_generator(ckpt_path):
    arrays, meta = load_checkpoint(ckpt_path)
    if meta.get("kind") != "generator":
        raise ConfigError(f"{ckpt_path} is not a generator checkpoint")
    model = gen_mod.GeneratorModel(gen_mod.GeneratorConfig(**meta["model"]))
    model.load_state_arrays(arrays)
    vocab = {k: int(v) for k, v in meta["vocab"].items()}
    mined = _mined_from_payload(meta["mined"])
    beam = BeamConfig(**meta["beam"])
    return model, vocab, mined, beam


def generate_reports(planner_model, generator_model, records, mined, vocab,
                     beam: BeamConfig, out_path: Path | None = None) -> list[dict]:
    """Stage-1 plan prediction feeding stage-2 beam decoding per record."""
    inverse = {v: k for k, v in vocab.items()}
    rows = []
    for rec in records:
        feats = record_features(rec)
        plan_obs = plan_mod.decode_plan(planner_model, feats, beam)
        plan_obj = corpus_mod.ObservationPlan(list(plan_obs),
                                              list(range(len(plan_obs))))
        graph = build_graph(plan_obj, mined) if plan_obs else None
        token_ids = gen_mod.decode_report(generator_model, feats, graph, vocab, beam)
        rows.append({
            "id": rec.id,
            "plan": [o.key for o in plan_obs],
            "report": [inverse.get(t, "<unk>") for t in token_ids],
        })
    if out_path is not None:
        out_path.write_text(
            "\n".join(json.dumps(r, sort_keys=True) for r in rows) + "\n")
    return rows


def evaluate_predictions(rows: list[dict], gold_records: list[ReportRecord],
                         lexicon: MentionLexicon):
    by_id = {rec.id: rec for rec in gold_records}
    preds, golds, gold_obs = [], [], []
    for row in rows:
        rec = by_id.get(row["id"])
        if rec is None:
            raise DataError(f"prediction for unknown record id {row['id']!r}")
        preds.append(list(row["report"]))
        golds.append(list(rec.tokens))
        gold_obs.append(labels_to_observations(rec.labels))
    return score_corpus(preds, golds, gold_obs, lexicon)


def run_pipeline(cfg: PipelineConfig, log_fn=print) -> dict:
    """All stages in order; returns the manifest dict (also written to disk)."""
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = _run_stage("toy-data", ensure_toy_data, cfg, outdir)

    train_records = read_records(cfg.records_train)
    val_records = read_records(cfg.records_val) if cfg.records_val else []
    test_records = read_records(cfg.records_test) if cfg.records_test else []
    lexicon = MentionLexicon.from_file(cfg.lexicon)

    mined_path = outdir / "mined.json"
    mined = _run_stage("mine", stage_mine, cfg, train_records, mined_path)
    log_fn(f"mine: wrote {mined_path}")

    for name, records in (("train", train_records), ("val", val_records),
                          ("test", test_records)):
        if records:
            _run_stage(f"build-graph[{name}]", stage_graphs, records, lexicon,
                       mined, outdir / f"graphs_{name}.jsonl")
    log_fn("build-graph: wrote per-split graph dumps")

    vocab = build_vocab(train_records, cfg.vocab_min_count)
    planner_ckpt = outdir / "planner.ckpt"
    planner_model = _run_stage("train-planner", stage_train_planner, cfg,
                               train_records, val_records, lexicon,
                               planner_ckpt, outdir / "planner_metrics.json")
    log_fn(f"train-planner: wrote {planner_ckpt}")

    generator_ckpt = outdir / "generator.ckpt"
    generator_model = _run_stage("train-generator", stage_train_generator, cfg,
                                 train_records, lexicon, mined, vocab,
                                 generator_ckpt, outdir / "generator_log.json",
                                 planner_model)
    log_fn(f"train-generator: wrote {generator_ckpt}")

    beam = BeamConfig(cfg.beam_size, cfg.max_steps, cfg.length_norm)
    generated_path = outdir / "generated.jsonl"
    rows = _run_stage("generate", generate_reports, planner_model, generator_model,
                      test_records or val_records, mined, vocab, beam,
                      generated_path)
    log_fn(f"generate: wrote {generated_path}")

    report = _run_stage("evaluate", evaluate_predictions, rows,
                        test_records or val_records, lexicon)
    (outdir / "metrics.json").write_text(
        json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    (outdir / "metrics.txt").write_text(report.table() + "\n")
    log_fn("evaluate:\n" + report.table())

    artifacts = ["mined.json", "planner.ckpt", "generator.ckpt",
                 "generated.jsonl", "metrics.json"]
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "artifacts": {name: sha256_file(outdir / name) for name in artifacts
                      if (outdir / name).exists()},
    }
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def sweep_k(cfg: PipelineConfig, k_values: list[int], seeds: list[int],
            log_fn=print) -> list[dict]:
    """Re-run mining truncation + generator training per K (planner shared per
    seed); one metric row per (K, seed) plus per-K means.

    The per-observation candidate lists are sorted by association score, so
    truncating the widest mined artifact to K equals mining directly at K.
    """
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    base_seed = cfg.seed
    for seed in seeds:
        cfg.seed = seed
        run_dir = outdir / f"seed{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg_seed = PipelineConfig(**{**cfg.to_dict(), "outdir": str(run_dir),
                                     "records_train": "", "records_val": "",
                                     "records_test": "", "lexicon": ""})
        cfg_seed = ensure_toy_data(cfg_seed, run_dir)
        train_records = read_records(cfg_seed.records_train)
        val_records = read_records(cfg_seed.records_val)
        test_records = read_records(cfg_seed.records_test)
        lexicon = MentionLexicon.from_file(cfg_seed.lexicon)
        vocab = build_vocab(train_records, cfg_seed.vocab_min_count)

        cfg_seed.k = max(k_values)
        mined_full = stage_mine(cfg_seed, train_records, run_dir / "mined_full.json")
        planner_model = stage_train_planner(
            cfg_seed, train_records, val_records, lexicon,
            run_dir / "planner.ckpt", run_dir / "planner_metrics.json")

        for k in k_values:
            mined_k = MinedNgrams(k=k, stopwords=set(mined_full.stopwords))
            for key, entries in mined_full.per_observation.items():
                mined_k.per_observation[key] = entries[:k]
            gen_model = stage_train_generator(
                cfg_seed, train_records, lexicon, mined_k, vocab,
                run_dir / f"generator_k{k}.ckpt", run_dir / f"generator_k{k}.json",
                planner_model)
            beam = BeamConfig(cfg_seed.beam_size, cfg_seed.max_steps,
                              cfg_seed.length_norm)
            generated = generate_reports(planner_model, gen_model, test_records,
                                         mined_k, vocab, beam,
                                         run_dir / f"generated_k{k}.jsonl")
            report = evaluate_predictions(generated, test_records, lexicon)
            row = {"k": k, "seed": seed, **report.to_dict()}
            row.pop("ce_counts", None)
            rows.append(row)
            log_fn(f"sweep: K={k} seed={seed} B-2={report.bleu_2:.4f} "
                   f"B-4={report.bleu_4:.4f} R-L={report.rouge_l:.4f} "
                   f"CE-F1={report.ce_f1:.4f}")
    cfg.seed = base_seed
    (outdir / "sweep.jsonl").write_text(
        "\n".join(json.dumps(r, sort_keys=True) for r in rows) + "\n")
    means = {}
    for k in k_values:
        vals = [r["bleu_2"] for r in rows if r["k"] == k]
        means[k] = sum(vals) / len(vals)
        log_fn(f"sweep mean: K={k} B-2={means[k]:.4f}")
    return rows
