"""Beam search over one model or an ensemble.

Hypotheses are compared by log-probability plus a word penalty times the
hypothesis length, so a positive penalty favors longer output.  A hypothesis
that emits the sentence-end id leaves the beam and is kept aside; search ends
when the best live partial no longer outscores the best completed hypothesis
or when the length cap is reached.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (DecoderState, EncoderOutput, ModelParams,
                    _lexicon_matrices, decoder_step, encode,
                    init_decoder_state)


@dataclass(frozen=True)
class Hypothesis:
    """tokens includes the trailing sentence-end id once complete."""
    tokens: tuple[int, ...]
    logprob: float
    states: tuple[DecoderState, ...] | None
    complete: bool


def score_hypothesis(hyp: Hypothesis, word_penalty: float) -> float:
    return hyp.logprob + word_penalty * len(hyp.tokens)


def ensemble_distribution(distributions) -> np.ndarray:
    """Arithmetic mean of per-model next-word distributions."""
    distributions = [np.asarray(d, dtype=float) for d in distributions]
    if not distributions:
        raise ValueError("need at least one distribution")
    size = distributions[0].shape
    for d in distributions[1:]:
        if d.shape != size:
            raise ValueError("ensemble members have mismatched vocabulary sizes")
    return sum(distributions) / len(distributions)


def _as_models(models) -> list[ModelParams]:
    if isinstance(models, ModelParams):
        return [models]
    models = list(models)
    if not models:
        raise ValueError("need at least one model")
    first = models[0]
    for m in models[1:]:
        if (m.tgt_vocab_size != first.tgt_vocab_size
                or m.tgt_eos != first.tgt_eos):
            raise ValueError("ensemble members have mismatched target vocabularies")
    return models


def _order_key(scored):
    # Highest score first; ties broken toward shorter, then lexicographically
    # smaller token sequences so search is deterministic.
    score, hyp = scored
    return (-score, len(hyp.tokens), hyp.tokens)


def beam_search(models, F, beam_size: int = 5, word_penalty: float = 0.0,
                max_len: int | None = None, lexicon=None) -> Hypothesis:
    """Return the best-scoring hypothesis for source sentence F.

    The result is complete in all but degenerate cases: the softmax gives the
    sentence-end id positive probability at every step, so a completion
    candidate is recorded from the first expansion on, and when the length cap
    (default 2*|F| + 10) cuts search short the best completion found so far is
    returned.  Only if no completion was ever recorded does the best partial
    come back with ``complete=False``.
    """
    models = _as_models(models)
    F = tuple(F)
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    if not F:
        raise ValueError("source sentence is empty")
    if max_len is None:
        max_len = 2 * len(F) + 10
    if max_len < 1:
        raise ValueError("max_len must be >= 1")

    eos = models[0].tgt_eos
    encs = [encode(F, m) for m in models]
    mats = _lexicon_matrices(models, F, lexicon)
    init = tuple(init_decoder_state(enc, m) for enc, m in zip(encs, models))

    beam = [Hypothesis((), 0.0, init, False)]
    best_complete: Hypothesis | None = None

    while beam and len(beam[0].tokens) < max_len:
        candidates: list[tuple[float, Hypothesis]] = []
        for hyp in beam:
            prev = hyp.tokens[-1] if hyp.tokens else eos
            states = []
            dists = []
            for k, m in enumerate(models):
                st, probs = decoder_step(prev, hyp.states[k], encs[k], m,
                                         lexicon=mats[k])
                states.append(st)
                dists.append(probs)
            states = tuple(states)
            with np.errstate(divide="ignore"):
                logp = np.log(ensemble_distribution(dists))

            done = Hypothesis(hyp.tokens + (eos,), hyp.logprob + logp[eos],
                              None, True)
            key = _order_key((score_hypothesis(done, word_penalty), done))
            if best_complete is None or key < _order_key(
                    (score_hypothesis(best_complete, word_penalty),
                     best_complete)):
                best_complete = done

            scores = hyp.logprob + logp
            live = np.flatnonzero(np.arange(len(logp)) != eos)
            order = live[np.argsort(-scores[live], kind="stable")]
            for v in order[:beam_size]:
                child = Hypothesis(hyp.tokens + (int(v),), float(scores[v]),
                                   states, False)
                candidates.append((score_hypothesis(child, word_penalty),
                                   child))

        candidates.sort(key=_order_key)
        beam = [hyp for _, hyp in candidates[:beam_size]]
        if best_complete is not None and beam:
            if (score_hypothesis(beam[0], word_penalty)
                    <= score_hypothesis(best_complete, word_penalty)):
                return best_complete

    if best_complete is not None:
        if not beam or (score_hypothesis(beam[0], word_penalty)
                        <= score_hypothesis(best_complete, word_penalty)):
            return best_complete
        # Length cap hit with a partial still ahead; completed wins anyway
        # since only finished translations are usable output.
        return best_complete
    return beam[0]


def greedy_decode(models, F, max_len: int | None = None,
                  lexicon=None) -> Hypothesis:
    return beam_search(models, F, beam_size=1, word_penalty=0.0,
                       max_len=max_len, lexicon=lexicon)


def translate(models, F, beam_size: int = 5, word_penalty: float = 0.0,
              max_len: int | None = None, lexicon=None) -> list[int]:
    """Beam-search F and return content ids (sentence-end stripped)."""
    hyp = beam_search(models, F, beam_size, word_penalty, max_len, lexicon)
    models = _as_models(models)
    tokens = list(hyp.tokens)
    if hyp.complete and tokens and tokens[-1] == models[0].tgt_eos:
        tokens.pop()
    return tokens
