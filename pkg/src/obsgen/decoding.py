"""Greedy and beam-search decoding over an arbitrary step function.

step_fn maps a tuple of already-generated token ids to a logits vector for
the next position (the caller bakes BOS / model state into the closure).
Hypotheses end at EOS or after max_steps; the returned sequence includes the
terminating EOS when there is one. Completed hypotheses are collected the
moment EOS is expanded, never pruned, and the best raw log-probability wins
(optionally length-normalized at final selection only).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericError

StepFn = Callable[[tuple[int, ...]], np.ndarray]


@dataclass
class BeamConfig:
    beam_size: int = 4
    max_steps: int = 64
    length_norm: float = 0.0

    def __post_init__(self):
        if self.beam_size < 1:
            raise NumericError(f"beam_size must be >= 1, got {self.beam_size}")
        if self.max_steps < 1:
            raise NumericError(f"max_steps must be >= 1, got {self.max_steps}")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max()
    return logits - (m + np.log(np.exp(logits - m).sum()))


def _checked_logits(step_fn: StepFn, prefix: tuple[int, ...], step: int) -> np.ndarray:
    logits = np.asarray(step_fn(prefix), dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(logits)):
        bad = int(np.flatnonzero(~np.isfinite(logits))[0])
        raise NumericError(
            f"non-finite logits at step {step}, vocab index {bad}, prefix {prefix}"
        )
    return logits


def _banned(forbidden_ids: Iterable[int], prefix: tuple[int, ...],
            block_repeats: bool, eos_id: int) -> set[int]:
    banned = set(forbidden_ids)
    if block_repeats:
        banned |= set(prefix) - {eos_id}
    return banned


def greedy_decode(step_fn: StepFn, eos_id: int, max_steps: int,
                  forbidden_ids: Sequence[int] = (), block_repeats: bool = False
                  ) -> list[int]:
    prefix: tuple[int, ...] = ()
    for step in range(max_steps):
        logits = _checked_logits(step_fn, prefix, step)
        for v in _banned(forbidden_ids, prefix, block_repeats, eos_id):
            logits[v] = -np.inf
        nxt = int(np.argmax(logits))
        prefix = prefix + (nxt,)
        if nxt == eos_id:
            break
    return list(prefix)


def beam_search(step_fn: StepFn, eos_id: int, cfg: BeamConfig,
                forbidden_ids: Sequence[int] = (), block_repeats: bool = False
                ) -> list[int]:
    """Highest-accumulated-log-probability completed hypothesis.

    Every live hypothesis expands over the full vocabulary; the top
    ``beam_size`` expansions survive, and any of them ending in EOS retires
    to the finished pool (so beam_size=1 reproduces greedy decoding exactly,
    and a beam covering the whole tree reproduces exhaustive search).
    """
    beams: list[tuple[float, tuple[int, ...]]] = [(0.0, ())]
    finished: list[tuple[float, tuple[int, ...]]] = []

    def selection_key(item):
        lp, toks = item
        if cfg.length_norm > 0.0 and len(toks) > 0:
            lp = lp / (len(toks) ** cfg.length_norm)
        return (-lp, len(toks), toks)

    for step in range(cfg.max_steps):
        candidates: list[tuple[float, tuple[int, ...]]] = []
        for lp, toks in beams:
            logp = _log_softmax(_checked_logits(step_fn, toks, step))
            banned = _banned(forbidden_ids, toks, block_repeats, eos_id)
            for v in range(logp.shape[0]):
                if v not in banned:
                    candidates.append((lp + float(logp[v]), toks + (v,)))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        beams = []
        for lp, toks in candidates[: cfg.beam_size]:
            if toks[-1] == eos_id:
                finished.append((lp, toks))
            else:
                beams.append((lp, toks))
        if not beams:
            break
        # token log-probs are <= 0, so no live hypothesis can improve past
        # the best finished score; exact early exit (raw-score selection only)
        if cfg.length_norm == 0.0 and finished:
            best_finished = max(f[0] for f in finished)
            if all(lp <= best_finished for lp, _ in beams):
                break
    # live hypotheses count as completed at max_steps
    finished.extend(beams)
    return list(min(finished, key=selection_key)[1])
