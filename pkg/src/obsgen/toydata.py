"""Synthetic desk-scale corpus with self-consistent labels, mentions, and
visual features.

Each record samples a set of observations (per-category marginals, optional
uncertain statuses), realizes one short template sentence per observation in
canonical category order, and derives its feature matrix from per-observation
signature vectors plus noise. Every label is recoverable from the text via
the toy lexicon, so plan extraction round-trips exactly.

Filler tokens around the mention phrases come from a configurable pool;
``filler_variants=1`` makes realization deterministic given the label set,
which keeps teacher-forced accuracy measurable on tiny models.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import (
    CATEGORY_INDEX,
    NEG,
    POS,
    MentionLexicon,
    Observation,
    ReportRecord,
)

TOY_CATEGORIES = (
    "Cardiomegaly",
    "Edema",
    "Pleural Effusion",
    "Atelectasis",
    "Pneumonia",
    "Lung Opacity",
)

_STEMS = {
    "Cardiomegaly": "cardiomegaly",
    "Edema": "edema",
    "Pleural Effusion": "effusion",
    "Atelectasis": "atelectasis",
    "Pneumonia": "pneumonia",
    "Lung Opacity": "opacity",
}

# two realization-detail tokens per observation; all distinct from the
# mention phrases, so they exercise graph guidance without touching matching
_DESCRIPTORS = {
    ("Cardiomegaly", POS): ("borderline", "silhouette"),
    ("Cardiomegaly", NEG): ("crisp", "contour"),
    ("Edema", POS): ("interstitial", "congestion"),
    ("Edema", NEG): ("dry", "interstitium"),
    ("Pleural Effusion", POS): ("layering", "fluid"),
    ("Pleural Effusion", NEG): ("sharp", "angles"),
    ("Atelectasis", POS): ("basilar", "collapse"),
    ("Atelectasis", NEG): ("expanded", "bases"),
    ("Pneumonia", POS): ("patchy", "consolidation"),
    ("Pneumonia", NEG): ("quiet", "airspaces"),
    ("Lung Opacity", POS): ("focal", "shadowing"),
    ("Lung Opacity", NEG): ("lucent", "fields"),
    ("No Finding", POS): ("stable", "appearance"),
    ("No Finding", NEG): ("multiple", "findings"),
}

DEFAULT_POS_PROB = {
    "Cardiomegaly": 0.40,
    "Edema": 0.30,
    "Pleural Effusion": 0.30,
    "Atelectasis": 0.25,
    "Pneumonia": 0.20,
    "Lung Opacity": 0.35,
}
DEFAULT_NEG_PROB = {c: 0.35 for c in TOY_CATEGORIES}


def toy_phrase(category: str, polarity: str) -> tuple[str, ...]:
    if category == "No Finding":
        return ("normal", "study") if polarity == POS else ("abnormal", "study")
    word = "evident" if polarity == POS else "absent"
    return (_STEMS[category], word)


def toy_lexicon() -> MentionLexicon:
    table = {}
    for cat in TOY_CATEGORIES + ("No Finding",):
        for pol in (POS, NEG):
            table[Observation(cat, pol)] = [toy_phrase(cat, pol)]
    return MentionLexicon(table)


@dataclass
class ToyConfig:
    size: int = 50
    vocab_size: int = 10  # number of filler tokens
    seed: int = 1
    d_v: int = 12
    feature_rows: int = 3
    noise: float = 0.05
    uncertain_frac: float = 0.15
    filler_variants: int = 1  # fillers drawn from this many choices per slot
    realization_variants: int = 1  # distinct descriptor realizations per observation
    descriptor_tokens: int = 2  # descriptor tokens per sentence (1 or 2)
    descriptor_pool: int = 0  # >0: sample descriptors per mention from a pool this big
    descriptors_per_mention: int = 3
    signature_seed: int = 12345  # shared across splits so features transfer
    categories: tuple = TOY_CATEGORIES  # active subset controls task difficulty
    pos_prob: dict = field(default_factory=lambda: dict(DEFAULT_POS_PROB))
    neg_prob: dict = field(default_factory=lambda: dict(DEFAULT_NEG_PROB))

    def __post_init__(self):
        if self.size < 10:
            raise ValueError(f"toy corpus size must be >= 10, got {self.size}")
        if self.vocab_size < 2:
            raise ValueError("need at least two filler tokens")
        unknown = set(self.categories) - set(TOY_CATEGORIES)
        if unknown:
            raise ValueError(f"not toy categories: {sorted(unknown)}")
        if self.realization_variants > 1 and self.d_v < 14:
            raise ValueError("realization variants need d_v >= 14 for their markers")


def _filler_pool(vocab_size: int) -> list[str]:
    return [f"fill{i:02d}" for i in range(vocab_size)]


def _signatures(cfg: ToyConfig) -> dict[Observation, np.ndarray]:
    """Per-observation feature signatures.

    Each category owns one marker dimension carrying +2 (POS) or -2 (NEG) on
    one feature row, plus a small dense residual; sums over a record's
    observations stay separable, so the planning task is learnable from a
    few dozen examples without being a lookup table.
    """
    rng = np.random.default_rng(cfg.signature_seed)
    sigs = {}
    cats = TOY_CATEGORIES + ("No Finding",)
    for ci, cat in enumerate(cats):
        for pol in (POS, NEG):
            sig = 0.3 * rng.normal(size=(cfg.feature_rows, cfg.d_v))
            marker = ci % cfg.d_v
            row = ci % cfg.feature_rows
            sig[row, marker] += 2.0 if pol == POS else -2.0
            sigs[Observation(cat, pol)] = sig
    return sigs


def _sample_observations(rng: np.random.Generator, cfg: ToyConfig) -> list[Observation]:
    chosen: list[Observation] = []
    for cat in cfg.categories:
        r = rng.random()
        if r < cfg.pos_prob[cat]:
            chosen.append(Observation(cat, POS))
        elif r < cfg.pos_prob[cat] + (1 - cfg.pos_prob[cat]) * cfg.neg_prob[cat]:
            chosen.append(Observation(cat, NEG))
    has_abnormal = any(o.polarity == POS for o in chosen)
    if not chosen:
        chosen.append(Observation("No Finding", POS))
    elif not has_abnormal and rng.random() < 0.8:
        chosen.append(Observation("No Finding", POS))
    elif has_abnormal and rng.random() < 0.5:
        chosen.append(Observation("No Finding", NEG))
    chosen.sort(key=lambda o: (CATEGORY_INDEX[o.category], o.polarity != POS))
    return chosen


def variant_descriptors(obs: Observation, variant: int, realization_variants: int
                        ) -> tuple[str, str]:
    d1, d2 = _DESCRIPTORS[(obs.category, obs.polarity)]
    if realization_variants <= 1:
        return d1, d2
    return f"{d1}{variant}", f"{d2}{variant}"


def descriptor_pool_tokens(obs: Observation, pool_size: int) -> list[str]:
    base = _DESCRIPTORS[(obs.category, obs.polarity)][0]
    return [f"{base}{i}" for i in range(pool_size)]


def _sentence(obs: Observation, variant: int, rng: np.random.Generator,
              pool: list[str], cfg: ToyConfig) -> list[str]:
    phrase = list(toy_phrase(obs.category, obs.polarity))
    if cfg.descriptor_pool > 0:
        # sorted sample keeps realization order a function of the chosen set
        choices = descriptor_pool_tokens(obs, cfg.descriptor_pool)
        picked = rng.choice(len(choices), size=min(cfg.descriptors_per_mention,
                                                   len(choices)), replace=False)
        detail = [choices[i] for i in sorted(picked)]
    else:
        detail = list(variant_descriptors(obs, variant, cfg.realization_variants))
        detail = detail[: cfg.descriptor_tokens]
    if cfg.filler_variants <= 1:
        return phrase + detail + ["."]
    # one leading filler slot drawn from `filler_variants` pool entries
    lead = pool[rng.integers(0, cfg.filler_variants) % len(pool)]
    return [lead] + phrase + detail + ["."]


def make_toy_corpus(cfg: ToyConfig) -> tuple[list[ReportRecord], MentionLexicon]:
    """Deterministic records for a config; same config -> identical corpus."""
    rng = np.random.default_rng(cfg.seed)
    pool = _filler_pool(cfg.vocab_size)
    sigs = _signatures(cfg)
    all_cats = TOY_CATEGORIES + ("No Finding",)
    records = []
    for i in range(cfg.size):
        chosen = _sample_observations(rng, cfg)
        variants = {obs: int(rng.integers(0, cfg.realization_variants))
                    for obs in chosen}
        tokens: list[str] = []
        labels: dict[str, str] = {}
        for obs in chosen:
            tokens.extend(_sentence(obs, variants[obs], rng, pool, cfg))
            if obs.polarity == POS:
                uncertain = (obs.category != "No Finding"
                             and rng.random() < cfg.uncertain_frac)
                labels[obs.category] = "uncertain" if uncertain else "present"
            else:
                labels[obs.category] = "absent"
        features = np.zeros((cfg.feature_rows, cfg.d_v))
        for obs in chosen:
            features += sigs[obs]
            if cfg.realization_variants > 1:
                # variant marker: per-category dimension carrying a scalar code
                ci = all_cats.index(obs.category)
                dim = (len(all_cats) + ci) % cfg.d_v
                row = ci % cfg.feature_rows
                code = variants[obs] - (cfg.realization_variants - 1) / 2.0
                features[row, dim] += 2.0 * code
        features += rng.normal(size=features.shape) * cfg.noise
        records.append(ReportRecord(f"toy-{cfg.seed}-{i:04d}", tokens, labels, features))
    return records, toy_lexicon()


def expected_marginals(cfg: ToyConfig) -> dict[str, float]:
    """Analytic per-observation probability implied by the sampling scheme."""
    out = {}
    for cat in cfg.categories:
        p_pos = cfg.pos_prob[cat]
        out[f"{cat}/POS"] = p_pos
        out[f"{cat}/NEG"] = (1 - p_pos) * cfg.neg_prob[cat]
    return out
