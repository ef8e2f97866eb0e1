"""Labeled report corpus: records, observations, plans, vocabulary.

A record carries pre-tokenized text, a 14-category label map, and a visual
feature matrix (inline or by file path). Labels collapse to 28 observations
(category x POS/NEG): present/uncertain count as positive, absent as
negative, unlabeled categories are omitted. Plans order observations by the
first token position where one of their lexicon phrases occurs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

CATEGORIES = (
    "No Finding",
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Lesion",
    "Lung Opacity",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
)
CATEGORY_INDEX = {c: i for i, c in enumerate(CATEGORIES)}

POS = "POS"
NEG = "NEG"
STATUSES = ("present", "absent", "uncertain", "not_mentioned")

# planner vocabulary: specials then the 28 observations
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
PLAN_SPECIALS = 3  # PAD, BOS, EOS
UNMATCHED = -1


@dataclass(frozen=True, order=True)
class Observation:
    category: str
    polarity: str

    def __post_init__(self):
        if self.category not in CATEGORY_INDEX:
            raise DataError(f"unknown category: {self.category!r}")
        if self.polarity not in (POS, NEG):
            raise DataError(f"polarity must be POS or NEG, got {self.polarity!r}")

    @property
    def key(self) -> str:
        return f"{self.category}/{self.polarity}"

    @property
    def index(self) -> int:
        """Canonical id in [0, 28): category-major, POS before NEG."""
        return CATEGORY_INDEX[self.category] * 2 + (0 if self.polarity == POS else 1)

    @property
    def plan_token(self) -> int:
        """Id in the planner vocabulary (specials occupy 0..2)."""
        return PLAN_SPECIALS + self.index


ALL_OBSERVATIONS = tuple(
    Observation(c, p) for c in CATEGORIES for p in (POS, NEG)
)
NUM_OBSERVATIONS = len(ALL_OBSERVATIONS)  # 28
PLAN_VOCAB_SIZE = PLAN_SPECIALS + NUM_OBSERVATIONS  # 31


def observation_from_key(key: str) -> Observation:
    if "/" not in key:
        raise DataError(f"bad observation key {key!r}, expected 'Category/POS|NEG'")
    category, polarity = key.rsplit("/", 1)
    return Observation(category, polarity)


def observation_from_plan_token(token: int) -> Observation:
    idx = token - PLAN_SPECIALS
    if not 0 <= idx < NUM_OBSERVATIONS:
        raise DataError(f"plan token {token} is not an observation")
    return ALL_OBSERVATIONS[idx]


@dataclass
class ReportRecord:
    id: str
    tokens: list[str]
    labels: dict[str, str]
    features: np.ndarray | str | None = None

    def __post_init__(self):
        for category, status in self.labels.items():
            if category not in CATEGORY_INDEX:
                raise DataError(f"record {self.id}: unknown category {category!r}")
            if status not in STATUSES:
                raise DataError(f"record {self.id}: bad status {status!r} for {category}")
            if category == "No Finding" and status == "uncertain":
                raise DataError(f"record {self.id}: No Finding cannot be uncertain")


@dataclass
class ObservationPlan:
    observations: list[Observation] = field(default_factory=list)
    positions: list[int] = field(default_factory=list)  # UNMATCHED when unfound

    def __len__(self):
        return len(self.observations)

    def plan_tokens(self) -> list[int]:
        return [o.plan_token for o in self.observations]


def labels_to_observations(labels: dict[str, str]) -> set[Observation]:
    """present/uncertain -> POS, absent -> NEG, not_mentioned dropped."""
    out: set[Observation] = set()
    for category, status in labels.items():
        if category not in CATEGORY_INDEX:
            raise DataError(f"unknown category: {category!r}")
        if status not in STATUSES:
            raise DataError(f"bad status {status!r} for {category}")
        if status in ("present", "uncertain"):
            out.add(Observation(category, POS))
        elif status == "absent":
            out.add(Observation(category, NEG))
    return out


def _first_match(tokens: list[str], phrase: tuple[str, ...]) -> int:
    n = len(phrase)
    if n == 0 or n > len(tokens):
        return UNMATCHED
    for i in range(len(tokens) - n + 1):
        if tuple(tokens[i:i + n]) == phrase:
            return i
    return UNMATCHED


def _canonical_sort_key(obs: Observation) -> tuple[int, int]:
    # POS block before NEG, canonical category order inside each block
    return (0 if obs.polarity == POS else 1, CATEGORY_INDEX[obs.category])


def extract_plan(record: ReportRecord, lexicon: "MentionLexicon") -> ObservationPlan:
    """Position-ordered plan; unmatched observations appended after matched
    ones (POS before NEG, then canonical category order)."""
    matched: list[tuple[int, Observation]] = []
    unmatched: list[Observation] = []
    for obs in labels_to_observations(record.labels):
        best = UNMATCHED
        for phrase in lexicon.phrases(obs):
            pos = _first_match(record.tokens, phrase)
            if pos != UNMATCHED and (best == UNMATCHED or pos < best):
                best = pos
        if best == UNMATCHED:
            unmatched.append(obs)
        else:
            matched.append((best, obs))
    matched.sort(key=lambda item: (item[0],) + _canonical_sort_key(item[1]))
    unmatched.sort(key=_canonical_sort_key)
    plan = ObservationPlan()
    for pos, obs in matched:
        plan.observations.append(obs)
        plan.positions.append(pos)
    for obs in unmatched:
        plan.observations.append(obs)
        plan.positions.append(UNMATCHED)
    return plan


class MentionLexicon:
    """Observation -> list of lowercased token phrases."""

    def __init__(self, phrases: dict[Observation, list[tuple[str, ...]]]):
        self._phrases = {}
        for obs, plist in phrases.items():
            cleaned = [tuple(t.lower() for t in p) for p in plist if len(p) > 0]
            if not cleaned:
                raise DataError(f"lexicon entry {obs.key} has no non-empty phrase")
            self._phrases[obs] = cleaned

    def phrases(self, obs: Observation) -> list[tuple[str, ...]]:
        return self._phrases.get(obs, [])

    def observations(self) -> list[Observation]:
        return sorted(self._phrases, key=_canonical_sort_key)

    @classmethod
    def from_file(cls, path) -> "MentionLexicon":
        raw = json.loads(Path(path).read_text())
        table: dict[Observation, list[tuple[str, ...]]] = {}
        for key, plist in raw.items():
            obs = observation_from_key(key)
            table[obs] = [tuple(phrase.split()) for phrase in plist]
        return cls(table)

    def to_file(self, path) -> None:
        raw = {
            obs.key: [" ".join(p) for p in plist]
            for obs, plist in sorted(self._phrases.items(), key=lambda kv: _canonical_sort_key(kv[0]))
        }
        Path(path).write_text(json.dumps(raw, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# record file I/O: one JSON object per line with fields id/tokens/labels/features
# ---------------------------------------------------------------------------


def read_records(path, require_tokens: bool = True) -> list[ReportRecord]:
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
        for key in ("id", "tokens", "labels"):
            if key not in raw:
                raise DataError(f"{path}:{lineno}: missing field {key!r}")
        features = raw.get("features")
        if isinstance(features, list):
            features = np.asarray(features, dtype=np.float64)
        tokens = [str(t).lower() for t in raw["tokens"]]
        if require_tokens and not tokens:
            raise DataError(f"{path}:{lineno}: training record has empty tokens")
        records.append(ReportRecord(str(raw["id"]), tokens, dict(raw["labels"]), features))
    return records


def write_records(path, records: list[ReportRecord]) -> None:
    lines = []
    for rec in records:
        features = rec.features
        if isinstance(features, np.ndarray):
            features = [[float(x) for x in row] for row in features]
        lines.append(json.dumps({
            "id": rec.id,
            "tokens": rec.tokens,
            "labels": rec.labels,
            "features": features,
        }, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def record_features(record: ReportRecord, base_dir=None) -> np.ndarray:
    if isinstance(record.features, np.ndarray):
        return record.features
    if isinstance(record.features, str):
        path = Path(record.features)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return np.loadtxt(path, dtype=np.float64, ndmin=2)
    raise DataError(f"record {record.id} has no visual features")


def build_vocab(records: list[ReportRecord], min_count: int = 1) -> dict[str, int]:
    """Token -> id with PAD/BOS/EOS/UNK reserved at 0..3. Tokens sorted by
    descending count then alphabetically, so ids are input-order independent."""
    if not records:
        raise DataError("cannot build a vocabulary from an empty corpus")
    counts: dict[str, int] = {}
    for rec in records:
        for tok in rec.tokens:
            counts[tok] = counts.get(tok, 0) + 1
    vocab = {"<pad>": PAD_ID, "<bos>": BOS_ID, "<eos>": EOS_ID, "<unk>": UNK_ID}
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count and t not in vocab),
        key=lambda t: (-counts[t], t),
    )
    for tok in kept:
        vocab[tok] = len(vocab)
    return vocab


def encode_tokens(tokens: list[str], vocab: dict[str, int]) -> list[int]:
    return [vocab.get(t, UNK_ID) for t in tokens]
