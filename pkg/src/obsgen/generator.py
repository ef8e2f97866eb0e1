"""Stage 2: graph-guided report generation with tree reasoning.

Forward path per example:
  1. encode the observation graph under its adjacency mask (Z, S, T),
  2. jointly encode visual features with the token nodes under a one-way
     mask, so token nodes absorb visual information but never the reverse,
  3. score token nodes with the pruning head (keep-probability; < 0.5 masks
     a node out of the tree-reasoning token level at inference; at training
     the gold membership mask is applied and the head is trained with a
     beta-weighted binary cross-entropy),
  4. decode: causal self-attention, observation cross-attention, visual
     cross-attention per block, then a tree-reasoning block that hops
     observation -> n-gram -> surviving tokens (residual + layer norm per
     hop, empty levels skipped).

Loss: report NLL plus the pruning cross-entropy, unweighted sum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .corpus import BOS_ID, EOS_ID, PAD_ID, encode_tokens
from .decoding import BeamConfig, beam_search, greedy_decode
from .errors import ConfigError, VocabularyError
from .obsgraph import ObservationGraph, adjacency_mask

log = logging.getLogger(__name__)

NGRAM_TYPE, TOKEN_TYPE = 0, 1


@dataclass
class GeneratorConfig:
    vocab_size: int
    d_v: int = 64
    hidden_size: int = 512
    num_heads: int = 8
    ffn_size: int = 512
    dropout_rate: float = 0.1
    graph_layers: int = 2
    align_layers: int = 3
    dec_blocks: int = 3
    trr_blocks: int = 1
    max_visual: int = 64
    max_steps: int = 64
    max_plan: int = 32
    beta: float = 2.0
    prune_threshold: float = 0.5
    prune_loss_weight: float = 1.0  # tradeoff on L_d; the plain sum keeps 1.0
    use_plan: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ConfigError(f"vocab_size too small: {self.vocab_size}")
        if self.beta < 1:
            raise ConfigError(f"beta must be >= 1, got {self.beta}")

    def layer_config(self) -> nn.LayerConfig:
        return nn.LayerConfig(self.hidden_size, self.num_heads,
                              self.ffn_size, self.dropout_rate)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


class GenDecoderBlock(nn.Module):
    """Causal self-attn, observation cross-attn, visual cross-attn, FFN."""

    def __init__(self, rng, cfg: nn.LayerConfig, use_obs: bool):
        self.self_attn = nn.MultiHeadAttention(rng, cfg)
        self.norm1 = nn.LayerNorm(cfg.hidden_size)
        if use_obs:
            self.obs_attn = nn.MultiHeadAttention(rng, cfg)
            self.norm2 = nn.LayerNorm(cfg.hidden_size)
        self.vis_attn = nn.MultiHeadAttention(rng, cfg)
        self.norm3 = nn.LayerNorm(cfg.hidden_size)
        self.ffn = nn.FeedForward(rng, cfg)
        self.norm4 = nn.LayerNorm(cfg.hidden_size)
        self.drop = nn.Dropout(cfg.dropout_rate, rng)
        self.use_obs = use_obs

    def __call__(self, x: Tensor, z_repr: Tensor | None, h_v: Tensor,
                 train: bool = False) -> Tensor:
        a = self.self_attn(x, x, x, mask=nn.causal_mask(x.data.shape[0]), train=train)
        x = self.norm1(x + self.drop(a, train))
        if self.use_obs and z_repr is not None and z_repr.data.shape[0] > 0:
            o = self.obs_attn(x, z_repr, z_repr, train=train)
            x = self.norm2(x + self.drop(o, train))
        v = self.vis_attn(x, h_v, h_v, train=train)
        x = self.norm3(x + self.drop(v, train))
        f = self.ffn(x, train)
        return self.norm4(x + self.drop(f, train))


class TreeReasonBlock(nn.Module):
    """Causal self-attention, then one attention hop per graph level with a
    residual + layer norm each; empty levels are skipped (identity hop)."""

    def __init__(self, rng, cfg: nn.LayerConfig):
        self.self_attn = nn.MultiHeadAttention(rng, cfg)
        self.norm_in = nn.LayerNorm(cfg.hidden_size)
        self.hops = [nn.MultiHeadAttention(rng, cfg) for _ in range(3)]
        self.hop_norms = [nn.LayerNorm(cfg.hidden_size) for _ in range(3)]
        self.drop = nn.Dropout(cfg.dropout_rate, rng)

    def __call__(self, x: Tensor, levels: list[Tensor], train: bool = False) -> Tensor:
        a = self.self_attn(x, x, x, mask=nn.causal_mask(x.data.shape[0]), train=train)
        q = self.norm_in(x + self.drop(a, train))
        return tree_reason_hops(q, levels, self.hops, self.hop_norms, self.drop, train)


def tree_reason_hops(q: Tensor, levels: list[Tensor], hops, norms, drop=None,
                     train: bool = False) -> Tensor:
    for level, hop, norm in zip(levels, hops, norms):
        if level.data.shape[0] == 0:
            continue
        v = hop(q, level, level, train=train)
        if drop is not None:
            v = drop(v, train)
        q = norm(q + v)
    return q


class GeneratorModel(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.rng = rng
        lc = cfg.layer_config()
        h = cfg.hidden_size
        self.tok_emb = nn.Embedding(rng, cfg.vocab_size, h)
        self.tok_pos = nn.Embedding(rng, cfg.max_steps + 1, h)
        self.mlp_in = nn.Linear(rng, cfg.d_v, h)
        self.mlp_out = nn.Linear(rng, h, h)
        self.vis_pos = nn.Embedding(rng, cfg.max_visual, h)
        if cfg.use_plan:
            self.obs_emb = nn.Embedding(rng, 28, h)
            self.node_pos = nn.Embedding(rng, cfg.max_plan, h)
            self.type_emb = nn.Embedding(rng, 2, h)
            self.graph_encoder = [nn.EncoderLayer(rng, lc) for _ in range(cfg.graph_layers)]
            self.prune_head = nn.Linear(rng, h, 1)
            self.trr = [TreeReasonBlock(rng, lc) for _ in range(cfg.trr_blocks)]
        self.align_encoder = [nn.EncoderLayer(rng, lc) for _ in range(cfg.align_layers)]
        self.dec_blocks = [GenDecoderBlock(rng, lc, cfg.use_plan)
                           for _ in range(cfg.dec_blocks)]
        self.head = nn.Linear(rng, h, cfg.vocab_size)
        self.drop = nn.Dropout(cfg.dropout_rate, rng)


@dataclass
class GenExample:
    features: np.ndarray
    graph: ObservationGraph | None
    report_ids: list[int]  # vocabulary ids, no specials
    gold_membership: np.ndarray | None = None  # per token node, 1 iff in report


def gold_token_membership(graph: ObservationGraph, report_tokens: list[str]) -> np.ndarray:
    present = set(report_tokens)
    return np.array([1.0 if t in present else 0.0 for t in graph.token_nodes])


def _mean_rows(x: Tensor, groups: list[list[int]]) -> Tensor:
    """Group-average rows of x into len(groups) rows (empty group -> zeros)."""
    weights = np.zeros((len(groups), x.data.shape[0]))
    for i, idxs in enumerate(groups):
        if idxs:
            weights[i, idxs] = 1.0 / len(idxs)
    return ad.matmul(ad.constant(weights), x)


def _empty_rows(h: int) -> Tensor:
    return ad.Tensor(np.zeros((0, h)))


def encode_graph(model: GeneratorModel, graph: ObservationGraph,
                 vocab: dict[str, int], train: bool = False,
                 weights_out: list | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """Masked self-attention encoding; returns (Z, S, T) in node order.

    Observation nodes embed as observation id + plan-position embedding;
    n-gram nodes as the mean of their token embeddings + a type embedding;
    token nodes as token embedding + type embedding. Unknown tokens map to
    UNK; plan positions beyond the positional table raise.
    """
    cfg = model.cfg
    h = cfg.hidden_size
    n_obs = len(graph.obs_nodes)
    if n_obs == 0:
        empty = _empty_rows(h)
        return empty, empty, empty
    if max(graph.obs_positions) >= cfg.max_plan:
        raise VocabularyError(
            f"plan position {max(graph.obs_positions)} outside node position "
            f"table of size {cfg.max_plan}"
        )
    parts = []
    z_emb = model.obs_emb([o.index for o in graph.obs_nodes]) \
        + model.node_pos(graph.obs_positions)
    parts.append(z_emb)
    if graph.ngram_nodes:
        gram_tokens: list[int] = []
        groups: list[list[int]] = []
        for gram in graph.ngram_nodes:
            idxs = []
            for t in gram:
                idxs.append(len(gram_tokens))
                gram_tokens.append(encode_tokens([t], vocab)[0])
            groups.append(idxs)
        s_emb = _mean_rows(model.tok_emb(gram_tokens), groups) \
            + model.type_emb([NGRAM_TYPE] * len(graph.ngram_nodes))
        parts.append(s_emb)
    if graph.token_nodes:
        t_emb = model.tok_emb(encode_tokens(list(graph.token_nodes), vocab)) \
            + model.type_emb([TOKEN_TYPE] * len(graph.token_nodes))
        parts.append(t_emb)
    x = model.drop(ad.concat_rows(parts), train)
    mask = adjacency_mask(graph)
    for layer in model.graph_encoder:
        x = layer(x, mask=mask, train=train, weights_out=weights_out)
    z = ad.slice_rows(x, 0, n_obs)
    s = ad.slice_rows(x, n_obs, graph.token_offset) if graph.ngram_nodes else _empty_rows(h)
    t = ad.slice_rows(x, graph.token_offset, graph.num_nodes) if graph.token_nodes \
        else _empty_rows(h)
    return z, s, t


def alignment_mask(n_visual: int, n_tokens: int) -> np.ndarray:
    """Visual rows attend only visual rows; token-node rows attend everything."""
    total = n_visual + n_tokens
    mask = np.ones((total, total), dtype=bool)
    mask[:n_visual, n_visual:] = False
    return mask


def align(model: GeneratorModel, features: np.ndarray, t_repr: Tensor,
          train: bool = False) -> tuple[Tensor, Tensor]:
    """Joint encoding of visual features and token nodes under the one-way mask."""
    cfg = model.cfg
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != cfg.d_v:
        raise ConfigError(f"visual features must be (N, {cfg.d_v}), got {features.shape}")
    n = features.shape[0]
    if n > cfg.max_visual:
        raise ConfigError(f"{n} visual rows exceed max_visual={cfg.max_visual}")
    x_vis = model.mlp_out(ad.relu(model.mlp_in(ad.Tensor(features))))
    x_vis = model.drop(x_vis + model.vis_pos(list(range(n))), train)
    n_tok = t_repr.data.shape[0]
    joint = ad.concat_rows([x_vis, t_repr]) if n_tok else x_vis
    mask = alignment_mask(n, n_tok)
    for layer in model.align_encoder:
        joint = layer(joint, mask=mask, train=train)
    h_v = ad.slice_rows(joint, 0, n)
    t_aligned = ad.slice_rows(joint, n, n + n_tok) if n_tok \
        else _empty_rows(cfg.hidden_size)
    return h_v, t_aligned


@dataclass
class PruneResult:
    keep_indices: np.ndarray
    probs: np.ndarray
    t_masked: Tensor
    loss: Tensor | None = None


def prune(model: GeneratorModel, t_aligned: Tensor, t_repr: Tensor,
          beta: float | None = None, gold_membership: np.ndarray | None = None,
          threshold: float | None = None) -> PruneResult:
    """Keep-probability per token node.

    Training (gold_membership given): returns the beta-weighted BCE loss and
    masks by the gold membership. Inference: masks nodes with p < threshold
    (a node at exactly 0.5 is kept). The mask applies to the graph-encoder
    token representations t_repr.
    """
    cfg = model.cfg
    beta = cfg.beta if beta is None else beta
    threshold = cfg.prune_threshold if threshold is None else threshold
    n_tok = t_repr.data.shape[0]
    if n_tok == 0:
        return PruneResult(np.zeros(0, dtype=np.intp), np.zeros(0),
                           _empty_rows(cfg.hidden_size), None)
    logits = model.prune_head(t_aligned)
    probs = 1.0 / (1.0 + np.exp(-logits.data.reshape(-1)))
    loss = None
    if gold_membership is not None:
        gold = np.asarray(gold_membership, dtype=np.float64).reshape(-1)
        if gold.shape[0] != n_tok:
            raise ConfigError(
                f"gold membership length {gold.shape[0]} != {n_tok} token nodes"
            )
        loss = ad.bce_with_logits_sum(logits, gold, pos_weight=beta)
        keep = np.flatnonzero(gold > 0.5)
    else:
        keep = np.flatnonzero(probs >= threshold)
    t_masked = ad.gather_rows(t_repr, keep) if keep.size else _empty_rows(cfg.hidden_size)
    return PruneResult(keep, probs, t_masked, loss)


def tree_reason(model: GeneratorModel, query: Tensor, z_repr: Tensor,
                s_repr: Tensor, t_masked: Tensor, train: bool = False) -> Tensor:
    """Standalone three-hop reasoning over (Z, S, T^M) for a given query."""
    block = model.trr[0]
    return tree_reason_hops(query, [z_repr, s_repr, t_masked],
                            block.hops, block.hop_norms, block.drop, train)


@dataclass
class EncodedExample:
    h_v: Tensor
    z_repr: Tensor
    s_repr: Tensor
    t_repr: Tensor
    t_masked: Tensor
    prune_loss: Tensor | None
    prune_probs: np.ndarray


def encode_example(model: GeneratorModel, ex: GenExample, vocab: dict[str, int],
                   train: bool = False) -> EncodedExample:
    cfg = model.cfg
    if cfg.use_plan and ex.graph is not None:
        z, s, t = encode_graph(model, ex.graph, vocab, train=train)
        h_v, t_aligned = align(model, ex.features, t, train=train)
        gold = ex.gold_membership if train else None
        pr = prune(model, t_aligned, t, gold_membership=gold)
        return EncodedExample(h_v, z, s, t, pr.t_masked, pr.loss, pr.probs)
    empty = _empty_rows(cfg.hidden_size)
    h_v, _ = align(model, ex.features, empty, train=train)
    return EncodedExample(h_v, empty, empty, empty, empty, None, np.zeros(0))


def report_logits(model: GeneratorModel, enc: EncodedExample, prefix_ids: list[int],
                  train: bool = False) -> Tensor:
    """Teacher-forced vocab logits for every prefix position (BOS-led prefix)."""
    cfg = model.cfg
    if not prefix_ids or prefix_ids[0] != BOS_ID:
        raise ConfigError("report prefix must begin with BOS")
    if len(prefix_ids) > cfg.max_steps + 1:
        raise ConfigError(f"prefix length {len(prefix_ids)} exceeds max_steps={cfg.max_steps}")
    x = model.tok_emb(prefix_ids) + model.tok_pos(list(range(len(prefix_ids))))
    x = model.drop(x, train)
    for block in model.dec_blocks:
        x = block(x, enc.z_repr if cfg.use_plan else None, enc.h_v, train=train)
    if cfg.use_plan:
        for block in model.trr:
            x = block(x, [enc.z_repr, enc.s_repr, enc.t_masked], train=train)
    return model.head(x)


def decode_step(model: GeneratorModel, enc: EncodedExample,
                prefix_ids: list[int]) -> np.ndarray:
    """Next-token logits after the given prefix (inference path)."""
    return report_logits(model, enc, prefix_ids, train=False).data[-1]


def generator_loss(model: GeneratorModel, batch: list[GenExample],
                   vocab: dict[str, int], train: bool = False) -> Tensor:
    """Sum over the batch of report NLL plus pruning loss (L_r + L_d)."""
    total = None
    for ex in batch:
        enc = encode_example(model, ex, vocab, train=train)
        prefix = [BOS_ID] + list(ex.report_ids)
        targets = list(ex.report_ids) + [EOS_ID]
        logits = report_logits(model, enc, prefix, train=train)
        loss = ad.cross_entropy_rows(logits, targets, np.ones(len(targets)))
        if enc.prune_loss is not None:
            w = model.cfg.prune_loss_weight
            loss = loss + (enc.prune_loss if w == 1.0 else ad.scale(enc.prune_loss, w))
        total = loss if total is None else total + loss
    if total is None:
        raise ConfigError("generator_loss: empty batch")
    return total


def train_generator(model: GeneratorModel, examples: list[GenExample],
                    vocab: dict[str, int], epochs: int, batch_size: int,
                    lr: float = 1e-4, data_seed: int = 0,
                    select_fn=None, eval_every: int = 0) -> list[float]:
    """AdamW with linear lr decay; optional checkpoint selection via select_fn
    (higher is better), evaluated every eval_every epochs."""
    order_rng = np.random.default_rng(data_seed)
    steps_per_epoch = max(1, (len(examples) + batch_size - 1) // batch_size)
    opt = nn.AdamW(model.parameters(), lr=lr, total_steps=epochs * steps_per_epoch)
    losses = []
    best_score = -np.inf
    best_state: dict[str, np.ndarray] = {}
    for epoch in range(epochs):
        idx = order_rng.permutation(len(examples))
        epoch_loss = 0.0
        for start in range(0, len(idx), batch_size):
            batch = [examples[i] for i in idx[start:start + batch_size]]
            opt.zero_grad()
            loss = ad.scale(generator_loss(model, batch, vocab, train=True),
                            1.0 / len(batch))
            ad.backward(loss)
            opt.step()
            epoch_loss += loss.item() * len(batch)
        losses.append(epoch_loss / len(examples))
        if select_fn is not None and eval_every and (epoch + 1) % eval_every == 0:
            score = select_fn(model)
            if score > best_score:
                best_score = score
                best_state = {k: v.copy() for k, v in model.state_arrays().items()}
    if best_state:
        model.load_state_arrays(best_state)
    return losses


def decode_report(model: GeneratorModel, features: np.ndarray,
                  graph: ObservationGraph | None, vocab: dict[str, int],
                  beam: BeamConfig) -> list[int]:
    """Beam-decode a report; returns vocabulary ids without BOS/EOS."""
    ex = GenExample(features, graph, [])
    enc = encode_example(model, ex, vocab, train=False)

    def step_fn(prefix: tuple[int, ...]) -> np.ndarray:
        return decode_step(model, enc, [BOS_ID] + list(prefix))

    max_steps = min(beam.max_steps, model.cfg.max_steps)
    forbidden = (PAD_ID, BOS_ID)
    if beam.beam_size == 1:
        tokens = greedy_decode(step_fn, EOS_ID, max_steps, forbidden_ids=forbidden)
    else:
        cfg = BeamConfig(beam.beam_size, max_steps, beam.length_norm)
        tokens = beam_search(step_fn, EOS_ID, cfg, forbidden_ids=forbidden)
    return [t for t in tokens if t != EOS_ID]
