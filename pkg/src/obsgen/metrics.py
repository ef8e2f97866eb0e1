"""Text-overlap metrics and observation-consistency scoring.

BLEU is corpus-level modified n-gram precision with a brevity penalty and an
add-epsilon floor on zero counts. ROUGE-L is the LCS-based F-measure with
the beta = 1.2 convention. Consistency scoring extracts observations from
generated reports with the same mention lexicon used for plan extraction and
micro-averages precision/recall/F1 against the gold observation sets; it is
a rule-based surrogate, so absolute values are not comparable to scores from
neural labelers.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .corpus import MentionLexicon, Observation, ReportRecord, extract_plan
from .errors import DataError

BLEU_EPSILON = 1e-9
ROUGE_BETA = 1.2


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates: list[list[str]], references: list[list[str]],
         max_n: int = 4) -> tuple[float, ...]:
    """Cumulative corpus BLEU-1..max_n with one reference per candidate."""
    if not candidates:
        raise DataError("BLEU needs at least one candidate")
    if len(candidates) != len(references):
        raise DataError(
            f"{len(candidates)} candidates vs {len(references)} references"
        )
    clipped = [0] * (max_n + 1)
    totals = [0] * (max_n + 1)
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            cand_counts = _ngram_counts(cand, n)
            ref_counts = _ngram_counts(ref, n)
            totals[n] += sum(cand_counts.values())
            clipped[n] += sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
    if cand_len == 0:
        return tuple(0.0 for _ in range(max_n))
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    log_precisions = []
    for n in range(1, max_n + 1):
        if totals[n] == 0:
            log_precisions.append(None)
            continue
        numerator = clipped[n] if clipped[n] > 0 else BLEU_EPSILON
        log_precisions.append(math.log(numerator / totals[n]))
    scores = []
    for k in range(1, max_n + 1):
        logs = log_precisions[:k]
        if any(lp is None for lp in logs):
            scores.append(0.0)
        else:
            scores.append(bp * math.exp(sum(logs) / k))
    return tuple(scores)


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: list[str], reference: list[str]) -> float:
    """LCS F-measure: (1 + b^2)RP / (R + b^2 P) with b = 1.2."""
    if not candidate or not reference:
        return 0.0
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    b2 = ROUGE_BETA ** 2
    return (1 + b2) * recall * precision / (recall + b2 * precision)


def rouge_l_corpus(candidates: list[list[str]], references: list[list[str]]) -> float:
    if not candidates:
        raise DataError("ROUGE-L needs at least one candidate")
    return sum(rouge_l(c, r) for c, r in zip(candidates, references)) / len(candidates)


@dataclass
class CeResult:
    precision: float
    recall: float
    f1: float
    true_positive: int
    false_positive: int
    false_negative: int
    degenerate: bool = False  # a zero denominator was reported as 0.0
    per_observation: dict[str, tuple[int, int, int]] = field(default_factory=dict)


def extract_observations(tokens: list[str], lexicon: MentionLexicon) -> set[Observation]:
    """Mentions found in the token sequence, over the lexicon's observations."""
    labels: dict[str, str] = {}
    record = ReportRecord("pred", [t.lower() for t in tokens], labels)
    found: set[Observation] = set()
    for obs in lexicon.observations():
        for phrase in lexicon.phrases(obs):
            n = len(phrase)
            if n == 0 or n > len(record.tokens):
                continue
            if any(tuple(record.tokens[i:i + n]) == phrase
                   for i in range(len(record.tokens) - n + 1)):
                found.add(obs)
                break
    return found


def clinical_efficacy(pred_reports: list[list[str]],
                      gold_observations: list[set[Observation]],
                      lexicon: MentionLexicon) -> CeResult:
    """Micro P/R/F1 of observations recovered from generated reports."""
    if len(pred_reports) != len(gold_observations):
        raise DataError(
            f"{len(pred_reports)} reports vs {len(gold_observations)} gold sets"
        )
    tp = fp = fn = 0
    per_obs: dict[str, list[int]] = {}
    for tokens, gold in zip(pred_reports, gold_observations):
        pred = extract_observations(tokens, lexicon)
        tp += len(pred & gold)
        fp += len(pred - gold)
        fn += len(gold - pred)
        for o in pred | gold:
            cell = per_obs.setdefault(o.key, [0, 0, 0])
            cell[0] += int(o in pred and o in gold)
            cell[1] += int(o in pred and o not in gold)
            cell[2] += int(o in gold and o not in pred)
    degenerate = (tp + fp == 0) or (tp + fn == 0)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return CeResult(precision, recall, f1, tp, fp, fn, degenerate,
                    {k: tuple(v) for k, v in sorted(per_obs.items())})


@dataclass
class MetricReport:
    bleu_1: float
    bleu_2: float
    bleu_3: float
    bleu_4: float
    rouge_l: float
    ce_precision: float
    ce_recall: float
    ce_f1: float
    ce_counts: dict[str, tuple[int, int, int]] = field(default_factory=dict)
    ce_degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "bleu_1": self.bleu_1, "bleu_2": self.bleu_2,
            "bleu_3": self.bleu_3, "bleu_4": self.bleu_4,
            "rouge_l": self.rouge_l,
            "ce_precision": self.ce_precision, "ce_recall": self.ce_recall,
            "ce_f1": self.ce_f1, "ce_degenerate": self.ce_degenerate,
            "ce_counts": {k: list(v) for k, v in self.ce_counts.items()},
        }

    def table(self) -> str:
        rows = [("BLEU-1", self.bleu_1), ("BLEU-2", self.bleu_2),
                ("BLEU-3", self.bleu_3), ("BLEU-4", self.bleu_4),
                ("ROUGE-L", self.rouge_l), ("CE-P", self.ce_precision),
                ("CE-R", self.ce_recall), ("CE-F1", self.ce_f1)]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value:.4f}" for name, value in rows)


def score_corpus(pred_reports: list[list[str]], gold_reports: list[list[str]],
                 gold_observations: list[set[Observation]],
                 lexicon: MentionLexicon) -> MetricReport:
    b1, b2, b3, b4 = bleu(pred_reports, gold_reports)
    rl = rouge_l_corpus(pred_reports, gold_reports)
    ce = clinical_efficacy(pred_reports, gold_observations, lexicon)
    return MetricReport(b1, b2, b3, b4, rl, ce.precision, ce.recall, ce.f1,
                        ce.per_observation, ce.degenerate)
