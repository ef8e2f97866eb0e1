"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. The training-based
criteria (7, 8) are the slow ones; the whole module is marked `acceptance`.
"""

import math
import time

import numpy as np
import pytest

from obsgen import autodiff as ad
from obsgen import generator as gen
from obsgen import kernels
from obsgen import metrics
from obsgen import miner as miner_mod
from obsgen import nn
from obsgen import planner as pl
from obsgen.config import PipelineConfig, default_stopwords_path
from obsgen.corpus import (
    BOS_ID,
    EOS_ID,
    MentionLexicon,
    Observation,
    ObservationPlan,
    ReportRecord,
    build_vocab,
    encode_tokens,
    extract_plan,
    labels_to_observations,
)
from obsgen.decoding import BeamConfig, beam_search
from obsgen.miner import MinedNgrams, MinerConfig, mine_corpus, load_stopwords
from obsgen.obsgraph import adjacency_mask, build_graph
from obsgen.pipeline import (
    evaluate_predictions,
    gen_examples_for,
    generate_reports,
    planner_examples,
    run_pipeline,
)
from obsgen.toydata import ToyConfig, make_toy_corpus

from helpers import fd_rel_error, numerical_grad, rel_error

pytestmark = pytest.mark.acceptance

ACCEPT_CATS = ("Cardiomegaly", "Edema", "Pleural Effusion")


def report(criterion: int, text: str) -> None:
    print(f"\nACCEPTANCE {criterion}: PASS - {text}")


# -- 1: gradient integrity ----------------------------------------------------

def tiny_planner_config():
    return pl.PlannerConfig(d_v=8, hidden_size=16, num_heads=2, ffn_size=16,
                            dropout_rate=0.0, enc_layers=1, dec_layers=1,
                            max_visual=4, max_plan=8, alpha=0.5, seed=11)


def tiny_generator_config(vocab_size=50):
    return gen.GeneratorConfig(vocab_size=vocab_size, d_v=8, hidden_size=16,
                               num_heads=2, ffn_size=16, dropout_rate=0.0,
                               graph_layers=1, align_layers=1, dec_blocks=1,
                               trr_blocks=1, max_visual=4, max_steps=6,
                               max_plan=8, beta=2.0, seed=11)


def test_criterion_1_gradient_integrity():
    kernels.warmup()
    started = time.time()
    rng = np.random.default_rng(0)

    planner = pl.PlannerModel(tiny_planner_config())
    plan_tokens = [Observation("Cardiomegaly", "POS").plan_token,
                   Observation("Edema", "NEG").plan_token]
    p_example = pl.PlannerExample(rng.normal(size=(2, 8)), plan_tokens)

    def planner_forward():
        return pl.planner_loss(planner, [p_example], alpha=0.5).item()

    planner.zero_grad()
    ad.backward(pl.planner_loss(planner, [p_example], alpha=0.5))
    failures = []
    for name, p in planner.named_parameters():
        if p.grad is None:
            failures.append(f"planner {name}: no grad")
            continue
        err = fd_rel_error(planner_forward, p.data, p.grad)
        if err >= 1e-4:
            failures.append(f"planner {name}: {err:.2e}")

    vocab = {"<pad>": 0, "<bos>": 1, "<eos>": 2, "<unk>": 3}
    for i in range(46):
        vocab[f"w{i:02d}"] = len(vocab)
    assert len(vocab) == 50
    model = gen.GeneratorModel(tiny_generator_config(len(vocab)))
    plan = ObservationPlan(
        [Observation("Cardiomegaly", "POS"), Observation("Edema", "NEG")], [0, 1])
    mined = MinedNgrams(k=4, stopwords=set())
    mined.per_observation["Cardiomegaly/POS"] = [
        miner_mod.NgramCandidate(("w00", "w01"), 2, 1.0)]
    mined.per_observation["Edema/NEG"] = [
        miner_mod.NgramCandidate(("w02", "w03"), 2, 1.0)]
    graph = build_graph(plan, mined)
    report_ids = encode_tokens(["w00", "w01", "w05"], vocab)
    g_example = gen.GenExample(rng.normal(size=(2, 8)), graph, report_ids,
                               gold_membership=gen.gold_token_membership(
                                   graph, ["w00", "w01", "w05"]))

    def generator_forward():
        return gen.generator_loss(model, [g_example], vocab, train=True).item()

    model.zero_grad()
    ad.backward(gen.generator_loss(model, [g_example], vocab, train=True))
    for name, p in model.named_parameters():
        if p.grad is None:
            failures.append(f"generator {name}: no grad")
            continue
        err = fd_rel_error(generator_forward, p.data, p.grad)
        if err >= 1e-4:
            failures.append(f"generator {name}: {err:.2e}")

    elapsed = time.time() - started
    assert not failures, failures
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    n_params = len(list(planner.named_parameters())) + len(list(model.named_parameters()))
    report(1, f"all {n_params} parameter tensors match finite differences "
              f"(rel err < 1e-4) in {elapsed:.1f}s")


# -- 2: PMI oracle equivalence -------------------------------------------------

def test_criterion_2_pmi_oracle_equivalence():
    started = time.time()
    records, _ = make_toy_corpus(ToyConfig(size=20, seed=7, vocab_size=6,
                                           categories=ACCEPT_CATS))
    total_tokens = sum(len(r.tokens) for r in records)
    assert total_tokens >= 200

    # independent brute-force recount (no miner internals)
    def sentences(tokens):
        out, cur = [], []
        for t in tokens:
            if t == ".":
                if cur:
                    out.append(cur)
                    cur = []
            else:
                cur.append(t)
        if cur:
            out.append(cur)
        return out

    brute_counts = {}
    brute_total = 0
    for rec in records:
        for sent in sentences(rec.tokens):
            brute_total += len(sent)
            for n in range(1, 5):
                for i in range(len(sent) - n + 1):
                    g = tuple(sent[i:i + n])
                    brute_counts[g] = brute_counts.get(g, 0) + 1

    cfg = MinerConfig(k=5, delta=0.5)
    candidates = miner_mod.segment_ngrams(records, cfg)
    table = miner_mod.adjacency_table(records, delta=0.5)
    assert table.total == brute_total
    for cand in candidates:
        assert cand.freq == brute_counts[cand.tokens], cand.tokens

    # PMI values against the brute-force formula on sampled unigram pairs
    unigrams = sorted({(t,) for r in records for t in r.tokens if t != "."})[:12]
    checked = 0
    for a in unigrams:
        for b in unigrams:
            joint = (brute_counts.get(a + b, 0) if a == b else
                     (brute_counts.get(a + b, 0) + brute_counts.get(b + a, 0)) / 2.0)
            want = math.log((joint + 0.5) * brute_total /
                            (brute_counts[a] * brute_counts[b]))
            assert abs(table.pmi(a, b) - want) < 1e-12
            checked += 1

    # association scores and top-K against a report-level brute recount
    assoc = miner_mod.association_table(records, candidates, delta=0.5)
    obs_list = sorted({o for r in records for o in labels_to_observations(r.labels)},
                      key=lambda o: o.index)
    grams = {c.tokens for c in candidates}
    for obs in obs_list:
        n_z = sum(1 for r in records if obs in labels_to_observations(r.labels))
        ranked = miner_mod.associate(obs, candidates, assoc)
        by_tokens = {c.tokens: c.score for c in ranked}
        for gram in list(grams)[:40]:
            n_s = 0
            n_zs = 0
            for r in records:
                present = any(tuple(s[i:i + len(gram)]) == gram
                              for s in sentences(r.tokens)
                              for i in range(len(s) - len(gram) + 1))
                if present:
                    n_s += 1
                    if obs in labels_to_observations(r.labels):
                        n_zs += 1
            want = math.log((n_zs + 0.5) * len(records) / (n_z * n_s))
            assert abs(by_tokens[gram] - want) < 1e-12
        # top-K = first K of the brute-sorted candidate list
        stopwords = {"."}
        brute_sorted = sorted(
            (c for c in ranked if not all(t in stopwords for t in c.tokens)),
            key=lambda c: (-c.score, -c.freq, c.tokens))
        got = miner_mod.top_k(ranked, 5, stopwords)
        assert [c.tokens for c in got] == [c.tokens for c in brute_sorted[:5]]

    elapsed = time.time() - started
    assert elapsed < 5.0, f"took {elapsed:.1f}s"
    report(2, f"counts, {checked} PMI values, and top-K lists equal brute force "
              f"to 1e-12 on a {total_tokens}-token corpus in {elapsed:.1f}s")


# -- 3: adjacency faithfulness ---------------------------------------------------

def test_criterion_3_adjacency_faithfulness():
    started = time.time()
    rng = np.random.default_rng(3)
    vocab = {"<pad>": 0, "<bos>": 1, "<eos>": 2, "<unk>": 3}
    words = [f"t{i}" for i in range(20)]
    for w in words:
        vocab[w] = len(vocab)
    model = gen.GeneratorModel(tiny_generator_config(len(vocab)))
    model.cfg.max_plan = 8

    all_obs = list(Observation(c, p) for c in ("Cardiomegaly", "Edema", "Pneumonia",
                                               "Atelectasis")
                   for p in ("POS", "NEG"))
    checked_graphs = 0
    checked_weights = 0
    for _ in range(100):
        n_obs = int(rng.integers(1, 5))
        obs = list(rng.choice(len(all_obs), size=n_obs, replace=False))
        plan = ObservationPlan([all_obs[i] for i in obs], list(range(n_obs)))
        mined = MinedNgrams(k=4, stopwords=set())
        for o in plan.observations:
            entries = []
            for _ in range(int(rng.integers(0, 4))):
                length = int(rng.integers(1, 4))
                toks = tuple(words[i] for i in rng.integers(0, len(words), size=length))
                entries.append(miner_mod.NgramCandidate(toks, 1, 1.0))
            mined.per_observation[o.key] = entries
        graph = build_graph(plan, mined)
        weights = []
        gen.encode_graph(model, graph, vocab, weights_out=weights)
        mask = adjacency_mask(graph)
        for w in weights:
            assert (w[~mask] == 0.0).all()
            checked_weights += w.size
        checked_graphs += 1
    elapsed = time.time() - started
    assert elapsed < 30.0, f"took {elapsed:.1f}s"
    report(3, f"{checked_graphs} random graphs, {checked_weights} attention "
              f"weights, exact zeros off the adjacency in {elapsed:.1f}s")


# -- 4: alignment one-way mask ----------------------------------------------------

def test_criterion_4_alignment_one_way():
    rng = np.random.default_rng(4)
    model = gen.GeneratorModel(tiny_generator_config())
    feats = rng.normal(size=(3, 8))
    base_tokens = ad.Tensor(rng.normal(size=(5, 16)))
    h_v_ref, _ = gen.align(model, feats, base_tokens)
    for trial in range(20):
        noise = ad.Tensor(rng.normal(size=(5, 16)) * rng.uniform(0.1, 10.0))
        h_v, _ = gen.align(model, feats, noise)
        assert np.array_equal(h_v_ref.data, h_v.data), f"trial {trial}"
    report(4, "visual rows bit-identical across 20 randomized token-node inputs")


# -- 5: loss weighting linearity ---------------------------------------------------

def test_criterion_5_loss_weight_linearity():
    model = pl.PlannerModel(tiny_planner_config())
    rng = np.random.default_rng(5)

    def example(tokens, seed):
        return pl.PlannerExample(np.random.default_rng(seed).normal(size=(2, 8)),
                                 tokens)

    batch = [
        example([Observation("Cardiomegaly", "POS").plan_token,
                 Observation("Edema", "NEG").plan_token], 1),
        example([Observation("No Finding", "NEG").plan_token], 2),   # weighted NEG
        example([Observation("No Finding", "POS").plan_token], 3),   # unweighted POS
    ]
    alpha = 0.6
    l_alpha = pl.planner_loss(model, batch, alpha=alpha).item()
    l_zero = pl.planner_loss(model, batch, alpha=0.0).item()
    weighted_nll = 0.0
    weighted_steps = []
    for ex in batch:
        h_v = pl.encode_visual(model, ex.features)
        logits = pl.decode_logits(model, h_v, [BOS_ID] + ex.plan_tokens)
        for i, t in enumerate(ex.plan_tokens):
            if pl.observation_loss_weight(t, 1.0) > 1.0:
                weighted_steps.append(t)
                weighted_nll += ad.softmax_cross_entropy(
                    ad.Tensor(logits.data[i]), t).item()
    assert abs((l_alpha - l_zero) - alpha * weighted_nll) < 1e-10
    nf_neg = Observation("No Finding", "NEG").plan_token
    nf_pos = Observation("No Finding", "POS").plan_token
    assert nf_neg in weighted_steps and nf_pos not in weighted_steps
    report(5, f"loss difference equals alpha * weighted NLL within 1e-10; "
              f"No Finding/NEG weighted, No Finding/POS not")


# -- 6: beam vs exhaustive ---------------------------------------------------------

def test_criterion_6_beam_vs_exhaustive():
    eos = 0

    def log_softmax(x):
        m = x.max()
        return x - (m + np.log(np.exp(x - m).sum()))

    failures = []
    for trial in range(50):
        seed = 4000 + trial

        def step_fn(prefix, _seed=seed):
            mix = np.random.default_rng((_seed, hash(prefix) & 0xFFFFFFFF))
            return mix.normal(size=3)

        best = None

        def walk(prefix, lp):
            nonlocal best
            logp = log_softmax(np.asarray(step_fn(prefix)))
            for v in range(3):
                cand_lp = lp + float(logp[v])
                cand = prefix + (v,)
                if v == eos or len(cand) == 3:
                    key = (-cand_lp, len(cand), cand)
                    if best is None or key < best[0]:
                        best = (key, cand)
                else:
                    walk(cand, cand_lp)

        walk((), 0.0)
        got = beam_search(step_fn, eos, BeamConfig(beam_size=27, max_steps=3))
        if got != list(best[1]):
            failures.append(trial)
    assert not failures, failures
    report(6, "beam 27 output equals exhaustive argmax for 50 random frozen models")


# -- 7: overfit + ablation ordering -------------------------------------------------

@pytest.mark.slow
def test_criterion_7_overfit_and_ablation():
    started = time.time()
    tc = dict(vocab_size=10, d_v=12, categories=ACCEPT_CATS)
    train, lexicon = make_toy_corpus(ToyConfig(size=50, seed=101, **tc))
    heldout, _ = make_toy_corpus(ToyConfig(size=20, seed=202, **tc))
    stop = load_stopwords(default_stopwords_path())
    mined = mine_corpus(train, MinerConfig(k=8), stop)
    vocab = build_vocab(train, 1)

    planner = pl.PlannerModel(pl.PlannerConfig(
        d_v=12, hidden_size=32, num_heads=2, ffn_size=32, dropout_rate=0.0,
        enc_layers=1, dec_layers=1, max_visual=4, max_plan=16, seed=0))
    tr_ex, _ = planner_examples(train, lexicon)
    va_ex, va_gold = planner_examples(heldout, lexicon)
    pl.train_planner(planner, tr_ex, list(zip(va_ex, va_gold)), epochs=300,
                     batch_size=10, lr=3e-3, data_seed=0)

    beam = BeamConfig(beam_size=4, max_steps=32)
    scores = {}
    for use_plan in (True, False):
        model = gen.GeneratorModel(gen.GeneratorConfig(
            vocab_size=len(vocab), d_v=12, hidden_size=32, num_heads=2,
            ffn_size=32, dropout_rate=0.0, graph_layers=1, align_layers=1,
            dec_blocks=1, trr_blocks=1, max_visual=4, max_steps=32,
            max_plan=16, beta=2.0, use_plan=use_plan, seed=0))
        if use_plan:
            examples = gen_examples_for(train, lexicon, mined, vocab,
                                        plans="gold", max_len=31)
        else:
            examples = [gen.GenExample(r.features, None,
                                       encode_tokens(r.tokens, vocab)[:31])
                        for r in train]
        gen.train_generator(model, examples, vocab, epochs=300, batch_size=10,
                            lr=2e-3, data_seed=0)
        tf_hit = tf_total = 0
        for ex in examples:
            enc = gen.encode_example(model, ex, vocab, train=False)
            logits = gen.report_logits(model, enc, [BOS_ID] + ex.report_ids)
            targets = ex.report_ids + [EOS_ID]
            tf_hit += int((logits.data.argmax(axis=1) == np.array(targets)).sum())
            tf_total += len(targets)
        rows_train = generate_reports(planner, model, train, mined, vocab, beam)
        ce_train = evaluate_predictions(rows_train, train, lexicon).ce_f1
        rows_held = generate_reports(planner, model, heldout, mined, vocab, beam)
        ce_held = evaluate_predictions(rows_held, heldout, lexicon).ce_f1
        scores[use_plan] = (tf_hit / tf_total, ce_train, ce_held)

    elapsed = time.time() - started
    full_tf, full_ce_train, full_ce_held = scores[True]
    _, _, ablated_ce_held = scores[False]
    assert full_tf >= 0.95, f"teacher-forced exact match {full_tf:.3f}"
    assert full_ce_train >= 0.95, f"train CE-F1 {full_ce_train:.3f}"
    assert ablated_ce_held < full_ce_held, (
        f"ablation ordering violated: ablated {ablated_ce_held:.3f} vs "
        f"full {full_ce_held:.3f}")
    assert elapsed < 600.0, f"took {elapsed:.1f}s"
    report(7, f"full model: TF exact {full_tf:.3f}, CE-F1 {full_ce_train:.3f}; "
              f"held-out CE-F1 full {full_ce_held:.3f} > ablated "
              f"{ablated_ce_held:.3f} in {elapsed:.0f}s")


# -- 9: metric sanity ---------------------------------------------------------------

def test_criterion_9_metric_sanity():
    x = "the heart is mildly enlarged today".split()
    assert metrics.bleu([x], [x]) == (1.0, 1.0, 1.0, 1.0)
    assert metrics.rouge_l(x, x) == 1.0
    lexicon = MentionLexicon({
        Observation("Cardiomegaly", "POS"): [("enlarged",)],
        Observation("Edema", "POS"): [("edema",)],
    })
    gold = [{Observation("Cardiomegaly", "POS")}, {Observation("Edema", "POS")}]
    preds = [["enlarged"], ["edema", "seen"]]
    ce = metrics.clinical_efficacy(preds, gold, lexicon)
    assert ce.f1 == 1.0
    # hand-worked corpus: p1 = 6/7, p2 = 4/5, p3 = 2/3, p4 = eps, BP = 1
    cands = ["the cat sat".split(), "a dog barked loudly".split()]
    refs = ["the cat sat down".split(), "a dog barked".split()]
    p1, p2, p3, p4 = 6 / 7, 4 / 5, 2 / 3, 1e-9
    want4 = math.exp((math.log(p1) + math.log(p2) + math.log(p3) + math.log(p4)) / 4)
    got = metrics.bleu(cands, refs)
    assert abs(got[0] - p1) < 1e-9
    assert abs(got[3] - want4) < 1e-9
    report(9, "identity scores are 1.0; hand-worked BLEU matches to 1e-9")


# -- 10: determinism -----------------------------------------------------------------

@pytest.mark.slow
def test_criterion_10_pipeline_determinism(tmp_path):
    manifests = []
    for name in ("runA", "runB"):
        cfg_kwargs = dict(PipelineConfig().to_dict())
        cfg_kwargs.update(
            outdir=str(tmp_path / name), seed=5,
            toy_train_size=15, toy_val_size=10, toy_test_size=10,
            d_v=12, hidden_size=16, num_heads=2, ffn_size=16, dropout=0.1,
            planner_enc_layers=1, planner_dec_layers=1, graph_layers=1,
            align_layers=1, dec_blocks=1, max_visual=8, max_plan=16,
            planner_epochs=3, generator_epochs=3, batch_size=8,
            max_steps=32, k=6,
        )
        manifests.append(run_pipeline(PipelineConfig(**cfg_kwargs), log_fn=lambda _: None))
    identical = []
    for artifact in ("mined.json", "planner.ckpt", "generator.ckpt",
                     "generated.jsonl"):
        a = (tmp_path / "runA" / artifact).read_bytes()
        b = (tmp_path / "runB" / artifact).read_bytes()
        assert a == b, f"{artifact} differs between identical runs"
        identical.append(artifact)
    assert manifests[0]["artifacts"] == manifests[1]["artifacts"]
    report(10, f"byte-identical across two runs: {', '.join(identical)}")
