"""Three-level observation graph and its self-looped attention mask.

Nodes: observations Z in plan order, then their mined n-grams S (first-owner
order, deduplicated), then the n-grams' non-stopword tokens T (first
occurrence order). Edges: E1 links adjacent plan observations (symmetric),
E2 links an observation to each of its n-grams, E3 links an n-gram to each
of its tokens. The adjacency starts from the identity (every node attends
itself); a directed edge u -> v sets A[u, v] = 1, i.e. the source row may
attend the target.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import Observation, ObservationPlan
from .miner import MinedNgrams

log = logging.getLogger(__name__)

E1, E2, E3 = "E1", "E2", "E3"


@dataclass
class ObservationGraph:
    obs_nodes: list[Observation]
    ngram_nodes: list[tuple[str, ...]]
    token_nodes: list[str]
    edges: list[tuple[int, int, str]]  # (src, dst, kind) in global node indexing
    adjacency: np.ndarray  # (V, V) uint8, diagonal ones
    obs_positions: list[int] = field(default_factory=list)  # plan position per Z node

    @property
    def num_nodes(self) -> int:
        return len(self.obs_nodes) + len(self.ngram_nodes) + len(self.token_nodes)

    @property
    def ngram_offset(self) -> int:
        return len(self.obs_nodes)

    @property
    def token_offset(self) -> int:
        return len(self.obs_nodes) + len(self.ngram_nodes)

    def node_surface(self, index: int) -> tuple[str, str]:
        """(level, surface form) for debug dumps."""
        if index < self.ngram_offset:
            return "observation", self.obs_nodes[index].key
        if index < self.token_offset:
            return "ngram", " ".join(self.ngram_nodes[index - self.ngram_offset])
        return "token", self.token_nodes[index - self.token_offset]

    def dump(self) -> str:
        lines = [
            f"{i}\t{level}\t{surface}"
            for i, (level, surface) in (
                (i, self.node_surface(i)) for i in range(self.num_nodes)
            )
        ]
        lines += [f"{src}\t{dst}\t{kind}" for src, dst, kind in self.edges]
        return "\n".join(lines)


def build_graph(plan: ObservationPlan, mined: MinedNgrams) -> ObservationGraph:
    """Assemble the per-example graph from a plan and the mined artifact.

    Plan observations missing from the artifact keep their Z node with no
    n-gram fan-out (logged); n-grams whose tokens are all stopwords keep
    their S node with no token fan-out.
    """
    obs_nodes = list(plan.observations)
    obs_positions = list(range(len(obs_nodes)))

    ngram_nodes: list[tuple[str, ...]] = []
    ngram_index: dict[tuple[str, ...], int] = {}
    token_nodes: list[str] = []
    token_index: dict[str, int] = {}
    obs_to_ngrams: list[list[int]] = []
    for obs in obs_nodes:
        entries = mined.for_observation(obs)
        if not entries:
            log.warning("observation %s missing from mined artifact; no n-gram fan-out",
                        obs.key)
        local = []
        for cand in entries:
            if cand.tokens not in ngram_index:
                ngram_index[cand.tokens] = len(ngram_nodes)
                ngram_nodes.append(cand.tokens)
            local.append(ngram_index[cand.tokens])
        obs_to_ngrams.append(local)

    ngram_to_tokens: list[list[int]] = []
    for gram in ngram_nodes:
        local = []
        for tok in gram:
            if tok in mined.stopwords:
                continue
            if tok not in token_index:
                token_index[tok] = len(token_nodes)
                token_nodes.append(tok)
            local.append(token_index[tok])
        ngram_to_tokens.append(local)

    n_obs, n_gram, n_tok = len(obs_nodes), len(ngram_nodes), len(token_nodes)
    total = n_obs + n_gram + n_tok
    adjacency = np.eye(total, dtype=np.uint8)
    edges: list[tuple[int, int, str]] = []

    for i in range(n_obs - 1):
        adjacency[i, i + 1] = 1
        adjacency[i + 1, i] = 1
        edges.append((i, i + 1, E1))

    for zi, grams in enumerate(obs_to_ngrams):
        for gj in grams:
            dst = n_obs + gj
            adjacency[zi, dst] = 1
            edges.append((zi, dst, E2))

    for gj, toks in enumerate(ngram_to_tokens):
        src = n_obs + gj
        for tk in toks:
            dst = n_obs + n_gram + tk
            adjacency[src, dst] = 1
            edges.append((src, dst, E3))

    return ObservationGraph(obs_nodes, ngram_nodes, token_nodes, edges,
                            adjacency, obs_positions)


def adjacency_mask(graph: ObservationGraph) -> np.ndarray:
    """Boolean self-attention mask: row i may attend column j iff A[i, j] = 1."""
    return graph.adjacency.astype(bool)
