"""PMI-based n-gram mining and observation association.

Two PMI passes over the training corpus: (1) segment sentences into n-gram
units (n in [1, 4]) by greedily merging adjacent units whose pairwise PMI
clears a threshold, and (2) score each candidate n-gram against each of the
28 observations by report-level co-occurrence. The top-K list per
observation is the raw material for observation graphs.

PMI(a, b) = log p(a,b) / (p(a) p(b)), with delta added to the joint count so
never-co-occurring pairs score a large negative finite value. Adjacency pair
counts are kept order-free (count of "a b" plus "b a"), so the adjacency PMI
is symmetric in its arguments.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Observation, ReportRecord, labels_to_observations, observation_from_key
from .errors import DataError

log = logging.getLogger(__name__)

MAX_NGRAM = 4
DEFAULT_BOUNDARY = frozenset({"."})


@dataclass
class MinerConfig:
    k: int = 30
    tau_merge: float = 0.0
    association_floor: float = float("-inf")
    delta: float = 0.5

    def __post_init__(self):
        if self.k < 1:
            raise DataError(f"top-K must be >= 1, got {self.k}")


@dataclass
class NgramCandidate:
    tokens: tuple[str, ...]
    freq: int
    score: float = 0.0

    def __post_init__(self):
        if not 1 <= len(self.tokens) <= MAX_NGRAM:
            raise DataError(f"n-gram length must be 1..{MAX_NGRAM}: {self.tokens}")
        if self.freq < 1:
            raise DataError(f"n-gram frequency must be >= 1: {self.tokens}")


class PmiTable:
    """Unit/pair counts with add-delta smoothing on the joint."""

    def __init__(self, unit_counts: dict, pair_counts: dict, total: int, delta: float = 0.5):
        self.unit_counts = unit_counts
        self.pair_counts = pair_counts
        self.total = total
        self.delta = delta

    @staticmethod
    def pair_key(a, b):
        # keys may mix strings (observations) and token tuples (n-grams)
        ka = (0, a) if isinstance(a, str) else (1, a)
        kb = (0, b) if isinstance(b, str) else (1, b)
        return (a, b) if ka <= kb else (b, a)

    def pmi(self, a, b) -> float:
        ca = self.unit_counts.get(a, 0)
        cb = self.unit_counts.get(b, 0)
        if ca == 0 or cb == 0:
            raise DataError(f"PMI of unseen unit: {a if ca == 0 else b!r}")
        joint = self.pair_counts.get(self.pair_key(a, b), 0) + self.delta
        return math.log(joint * self.total / (ca * cb))


def pmi(a, b, table: PmiTable) -> float:
    return table.pmi(a, b)


def split_sentences(tokens: list[str], boundary=DEFAULT_BOUNDARY) -> list[list[str]]:
    """Split on boundary markers (markers dropped); no markers -> one sequence."""
    sentences: list[list[str]] = []
    current: list[str] = []
    for tok in tokens:
        if tok in boundary:
            if current:
                sentences.append(current)
                current = []
        else:
            current.append(tok)
    if current:
        sentences.append(current)
    return sentences


def count_ngrams(records: list[ReportRecord], boundary=DEFAULT_BOUNDARY):
    """All n-gram counts (n <= 4) within sentences, plus total token count."""
    counts: dict[tuple[str, ...], int] = {}
    total = 0
    for rec in records:
        for sent in split_sentences(rec.tokens, boundary):
            total += len(sent)
            for n in range(1, MAX_NGRAM + 1):
                for i in range(len(sent) - n + 1):
                    gram = tuple(sent[i:i + n])
                    counts[gram] = counts.get(gram, 0) + 1
    return counts, total


def adjacency_table(records: list[ReportRecord], delta: float = 0.5,
                    boundary=DEFAULT_BOUNDARY) -> PmiTable:
    """PMI table for unit merging. A pair's joint count is the substring
    count of the two units concatenated, averaged over both orders, which
    makes the PMI symmetric and ~0 for independent units."""
    counts, total = count_ngrams(records, boundary)
    return PmiTable(unit_counts=counts, pair_counts=_AdjacencyPairs(counts),
                    total=total, delta=delta)


class _AdjacencyPairs:
    """Order-averaged pair counts derived lazily from substring counts."""

    def __init__(self, counts: dict[tuple[str, ...], int]):
        self._counts = counts

    def get(self, key, default=0):
        a, b = key
        if a == b:
            return self._counts.get(a + b, 0) or default
        joint = (self._counts.get(a + b, 0) + self._counts.get(b + a, 0)) / 2.0
        return joint or default


def _merge_pass(sentence: list[str], table: PmiTable, tau: float) -> list[tuple[str, ...]]:
    """Greedy merging within one sentence: repeatedly merge the adjacent unit
    pair with the highest PMI >= tau (leftmost on ties) while the combined
    length stays within MAX_NGRAM. Returns every unit that existed at any
    stage, in order of appearance."""
    units: list[tuple[str, ...]] = [(tok,) for tok in sentence]
    seen: list[tuple[str, ...]] = list(units)
    while len(units) > 1:
        best_idx = -1
        best_pmi = float("-inf")
        for i in range(len(units) - 1):
            if len(units[i]) + len(units[i + 1]) > MAX_NGRAM:
                continue
            score = table.pmi(units[i], units[i + 1])
            if score >= tau and score > best_pmi:
                best_pmi = score
                best_idx = i
        if best_idx < 0:
            break
        merged = units[best_idx] + units[best_idx + 1]
        units[best_idx:best_idx + 2] = [merged]
        seen.append(merged)
    return seen


def segment_ngrams(records: list[ReportRecord], cfg: MinerConfig,
                   boundary=DEFAULT_BOUNDARY) -> list[NgramCandidate]:
    """Emit all units (initial, intermediate, final) produced by greedy
    PMI merging, deduplicated, with corpus substring frequencies."""
    table = adjacency_table(records, delta=cfg.delta, boundary=boundary)
    emitted: dict[tuple[str, ...], None] = {}
    for rec in records:
        for sent in split_sentences(rec.tokens, boundary):
            for unit in _merge_pass(sent, table, cfg.tau_merge):
                emitted.setdefault(unit, None)
    return [
        NgramCandidate(tokens=gram, freq=table.unit_counts[gram])
        for gram in emitted
    ]


def association_table(records: list[ReportRecord],
                      candidates: list[NgramCandidate],
                      delta: float = 0.5,
                      boundary=DEFAULT_BOUNDARY) -> PmiTable:
    """Report-level co-occurrence table between observation keys and n-grams.

    p(z, s) counts the reports that both carry observation z and contain the
    n-gram s inside a sentence; marginals count reports with z or with s.
    """
    grams = {c.tokens for c in candidates}
    unit_counts: dict = {}
    pair_counts: dict = {}
    for rec in records:
        present_grams: set[tuple[str, ...]] = set()
        for sent in split_sentences(rec.tokens, boundary):
            for n in range(1, MAX_NGRAM + 1):
                for i in range(len(sent) - n + 1):
                    gram = tuple(sent[i:i + n])
                    if gram in grams:
                        present_grams.add(gram)
        obs_keys = {o.key for o in labels_to_observations(rec.labels)}
        for key in obs_keys:
            unit_counts[key] = unit_counts.get(key, 0) + 1
        for gram in present_grams:
            unit_counts[gram] = unit_counts.get(gram, 0) + 1
        for key in obs_keys:
            for gram in present_grams:
                pk = PmiTable.pair_key(key, gram)
                pair_counts[pk] = pair_counts.get(pk, 0) + 1
    return PmiTable(unit_counts, pair_counts, total=len(records), delta=delta)


def associate(observation: Observation, candidates: list[NgramCandidate],
              table: PmiTable) -> list[NgramCandidate]:
    """Candidates scored by PMI(observation, n-gram), sorted descending."""
    if table.unit_counts.get(observation.key, 0) == 0:
        return []
    scored = [
        NgramCandidate(c.tokens, c.freq, score=table.pmi(observation.key, c.tokens))
        for c in candidates
    ]
    scored.sort(key=lambda c: (-c.score, -c.freq, c.tokens))
    return scored


def top_k(scored: list[NgramCandidate], k: int, stopwords: set[str],
          floor: float = float("-inf")) -> list[NgramCandidate]:
    """First K candidates after dropping all-stopword n-grams and entries
    below the association floor."""
    kept = [
        c for c in scored
        if c.score >= floor and not all(t in stopwords for t in c.tokens)
    ]
    if len(kept) < k:
        log.warning("top_k: only %d candidates available for K=%d", len(kept), k)
    return kept[:k]


@dataclass
class MinedNgrams:
    """Per-observation top-K n-gram lists plus the stopwords used to build them."""

    k: int
    stopwords: set[str]
    per_observation: dict[str, list[NgramCandidate]] = field(default_factory=dict)

    def for_observation(self, obs: Observation) -> list[NgramCandidate]:
        return self.per_observation.get(obs.key, [])

    def to_file(self, path) -> None:
        payload = {
            "k": self.k,
            "stopwords": sorted(self.stopwords),
            "observations": {
                key: [
                    {"tokens": list(c.tokens), "score": c.score, "freq": c.freq}
                    for c in entries
                ]
                for key, entries in sorted(self.per_observation.items())
            },
        }
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")

    @classmethod
    def from_file(cls, path) -> "MinedNgrams":
        raw = json.loads(Path(path).read_text())
        mined = cls(k=raw["k"], stopwords=set(raw["stopwords"]))
        for key, entries in raw["observations"].items():
            observation_from_key(key)  # validate
            mined.per_observation[key] = [
                NgramCandidate(tuple(e["tokens"]), e["freq"], e["score"]) for e in entries
            ]
        return mined


def mine_corpus(records: list[ReportRecord], cfg: MinerConfig,
                stopwords: set[str], boundary=DEFAULT_BOUNDARY) -> MinedNgrams:
    """Full mining pass: segment, associate, keep top-K per observation."""
    candidates = segment_ngrams(records, cfg, boundary)
    table = association_table(records, candidates, delta=cfg.delta, boundary=boundary)
    mined = MinedNgrams(k=cfg.k, stopwords=set(stopwords))
    seen_obs = sorted(
        {o for rec in records for o in labels_to_observations(rec.labels)},
        key=lambda o: o.index,
    )
    for obs in seen_obs:
        scored = associate(obs, candidates, table)
        mined.per_observation[obs.key] = top_k(scored, cfg.k, stopwords,
                                               floor=cfg.association_floor)
    return mined


def load_stopwords(path) -> set[str]:
    words = {
        line.strip().lower()
        for line in Path(path).read_text().splitlines()
        if line.strip() and not line.startswith("#")
    }
    return words
