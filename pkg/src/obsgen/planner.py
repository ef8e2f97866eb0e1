"""Stage 1: map visual features to an observation sequence.

Transformer encoder-decoder over the 31-token plan vocabulary (PAD/BOS/EOS +
28 observations). The loss up-weights abnormality steps: weight 1+alpha for
every positive observation except No Finding/POS, and for No Finding/NEG;
weight 1 everywhere else (EOS included).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .corpus import (
    BOS_ID,
    EOS_ID,
    NEG,
    PLAN_SPECIALS,
    PLAN_VOCAB_SIZE,
    POS,
    Observation,
    observation_from_plan_token,
)
from .decoding import BeamConfig, beam_search, greedy_decode
from .errors import ConfigError

log = logging.getLogger(__name__)


@dataclass
class PlannerConfig:
    d_v: int = 64
    hidden_size: int = 512
    num_heads: int = 8
    ffn_size: int = 512
    dropout_rate: float = 0.1
    enc_layers: int = 3
    dec_layers: int = 3
    max_visual: int = 64
    max_plan: int = 32
    alpha: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")

    def layer_config(self) -> nn.LayerConfig:
        return nn.LayerConfig(self.hidden_size, self.num_heads,
                              self.ffn_size, self.dropout_rate)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


class PlannerModel(nn.Module):
    def __init__(self, cfg: PlannerConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.rng = rng
        lc = cfg.layer_config()
        h = cfg.hidden_size
        self.mlp_in = nn.Linear(rng, cfg.d_v, h)
        self.mlp_out = nn.Linear(rng, h, h)
        self.vis_pos = nn.Embedding(rng, cfg.max_visual, h)
        self.encoder = [nn.EncoderLayer(rng, lc) for _ in range(cfg.enc_layers)]
        self.obs_emb = nn.Embedding(rng, PLAN_VOCAB_SIZE, h)
        self.plan_pos = nn.Embedding(rng, cfg.max_plan, h)
        self.decoder = [nn.DecoderLayer(rng, lc) for _ in range(cfg.dec_layers)]
        self.head = nn.Linear(rng, h, PLAN_VOCAB_SIZE)
        self.drop = nn.Dropout(cfg.dropout_rate, rng)


def encode_visual(model: PlannerModel, features: np.ndarray, train: bool = False) -> Tensor:
    """MLP projection + positions + encoder stack; row count preserved."""
    cfg = model.cfg
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != cfg.d_v:
        raise ConfigError(
            f"visual features must be (N, {cfg.d_v}), got {features.shape}"
        )
    n = features.shape[0]
    if n > cfg.max_visual:
        raise ConfigError(f"{n} visual rows exceed max_visual={cfg.max_visual}")
    x = model.mlp_out(ad.relu(model.mlp_in(ad.Tensor(features))))
    x = x + model.vis_pos(list(range(n)))
    x = model.drop(x, train)
    for layer in model.encoder:
        x = layer(x, train=train)
    return x


def decode_logits(model: PlannerModel, h_v: Tensor, prefix_ids: list[int],
                  train: bool = False) -> Tensor:
    """Teacher-forced logits for every prefix position; prefix starts at BOS."""
    if not prefix_ids or prefix_ids[0] != BOS_ID:
        raise ConfigError("planner prefix must begin with BOS")
    if len(prefix_ids) > model.cfg.max_plan:
        raise ConfigError(f"plan prefix longer than max_plan={model.cfg.max_plan}")
    x = model.obs_emb(prefix_ids) + model.plan_pos(list(range(len(prefix_ids))))
    x = model.drop(x, train)
    for layer in model.decoder:
        x = layer(x, h_v, train=train)
    return model.head(x)


def plan_step_logits(model: PlannerModel, h_v: Tensor, prefix_ids: list[int]) -> np.ndarray:
    """Next-observation logits after the given prefix (inference path)."""
    return decode_logits(model, h_v, prefix_ids, train=False).data[-1]


def observation_loss_weight(plan_token: int, alpha: float) -> float:
    if plan_token < PLAN_SPECIALS:
        return 1.0
    obs = observation_from_plan_token(plan_token)
    if obs.category == "No Finding":
        return 1.0 + alpha if obs.polarity == NEG else 1.0
    return 1.0 + alpha if obs.polarity == POS else 1.0


@dataclass
class PlannerExample:
    features: np.ndarray
    plan_tokens: list[int]  # observation ids, no specials


def planner_loss(model: PlannerModel, batch: list[PlannerExample],
                 alpha: float | None = None, train: bool = False) -> Tensor:
    """Sum over the batch of weighted next-observation NLLs (EOS appended)."""
    if alpha is None:
        alpha = model.cfg.alpha
    total = None
    for ex in batch:
        if not ex.plan_tokens:
            log.warning("skipping example with empty plan")
            continue
        prefix = [BOS_ID] + ex.plan_tokens
        targets = ex.plan_tokens + [EOS_ID]
        weights = [observation_loss_weight(t, alpha) for t in targets]
        h_v = encode_visual(model, ex.features, train=train)
        logits = decode_logits(model, h_v, prefix, train=train)
        loss = ad.cross_entropy_rows(logits, targets, weights)
        total = loss if total is None else total + loss
    if total is None:
        raise ConfigError("planner_loss: batch contained no usable example")
    return total


def decode_plan(model: PlannerModel, features: np.ndarray,
                beam: BeamConfig | None = None) -> list[Observation]:
    """Beam-decode a duplicate-free observation plan (greedy when beam is 1)."""
    h_v = encode_visual(model, features, train=False)

    def step_fn(prefix: tuple[int, ...]) -> np.ndarray:
        return plan_step_logits(model, h_v, [BOS_ID] + list(prefix))

    max_steps = min(model.cfg.max_plan - 1, 29)
    forbidden = (0, 1)  # PAD, BOS
    if beam is None or beam.beam_size == 1:
        tokens = greedy_decode(step_fn, EOS_ID, max_steps,
                               forbidden_ids=forbidden, block_repeats=True)
    else:
        cfg = BeamConfig(beam.beam_size, max_steps, beam.length_norm)
        tokens = beam_search(step_fn, EOS_ID, cfg,
                             forbidden_ids=forbidden, block_repeats=True)
    return [observation_from_plan_token(t) for t in tokens if t != EOS_ID]


# ---------------------------------------------------------------------------
# training / evaluation
# ---------------------------------------------------------------------------


@dataclass
class PlanMetrics:
    micro_f1: float
    macro_f1_abnormal: float
    precision: float
    recall: float


def score_plans(predicted: list[set[Observation]], gold: list[set[Observation]]) -> PlanMetrics:
    """Micro P/R/F1 over all observations; macro F1 over POS observations
    with gold support."""
    tp = fp = fn = 0
    per_obs: dict[Observation, list[int]] = {}
    for pred, ref in zip(predicted, gold):
        tp += len(pred & ref)
        fp += len(pred - ref)
        fn += len(ref - pred)
        for o in pred | ref:
            t, p_, g_ = per_obs.setdefault(o, [0, 0, 0])
            per_obs[o] = [t + (o in pred and o in ref),
                          p_ + (o in pred), g_ + (o in ref)]
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    micro = (2 * precision * recall / (precision + recall)) if precision + recall else 0.0
    macro_scores = []
    for o, (t, p_, g_) in per_obs.items():
        if o.polarity != POS or g_ == 0:
            continue
        pr = t / p_ if p_ else 0.0
        rc = t / g_
        macro_scores.append(2 * pr * rc / (pr + rc) if pr + rc else 0.0)
    macro = float(np.mean(macro_scores)) if macro_scores else 0.0
    return PlanMetrics(micro, macro, precision, recall)


@dataclass
class TrainLog:
    epoch_losses: list[float] = field(default_factory=list)
    epoch_metrics: list[PlanMetrics] = field(default_factory=list)
    best_epoch: int = -1


def train_planner(model: PlannerModel, train_examples: list[PlannerExample],
                  val_examples: list[tuple[PlannerExample, set[Observation]]],
                  epochs: int, batch_size: int, lr: float = 1e-4,
                  data_seed: int = 0) -> TrainLog:
    """AdamW with linear lr decay; checkpoint selection by validation micro-F1."""
    order_rng = np.random.default_rng(data_seed)
    steps_per_epoch = max(1, (len(train_examples) + batch_size - 1) // batch_size)
    opt = nn.AdamW(model.parameters(), lr=lr, total_steps=epochs * steps_per_epoch)
    logbook = TrainLog()
    best_f1 = -1.0
    best_state: dict[str, np.ndarray] = {}
    for epoch in range(epochs):
        idx = order_rng.permutation(len(train_examples))
        epoch_loss = 0.0
        for start in range(0, len(idx), batch_size):
            batch = [train_examples[i] for i in idx[start:start + batch_size]]
            opt.zero_grad()
            loss = ad.scale(planner_loss(model, batch, train=True), 1.0 / len(batch))
            ad.backward(loss)
            opt.step()
            epoch_loss += loss.item() * len(batch)
        logbook.epoch_losses.append(epoch_loss / len(train_examples))
        if val_examples:
            preds = [set(decode_plan(model, ex.features)) for ex, _ in val_examples]
            metrics = score_plans(preds, [gold for _, gold in val_examples])
        else:
            metrics = PlanMetrics(0.0, 0.0, 0.0, 0.0)
        logbook.epoch_metrics.append(metrics)
        if metrics.micro_f1 > best_f1:
            best_f1 = metrics.micro_f1
            best_state = {k: v.copy() for k, v in model.state_arrays().items()}
            logbook.best_epoch = epoch
    if best_state:
        model.load_state_arrays(best_state)
    return logbook
