"""Shared builders for synthetic tasks and random model inputs."""

import numpy as np

from lexnmt.align import LexiconTable
from lexnmt.corpus import SentencePair
from lexnmt.model import init_params


def copy_pairs(rng, n, vocab=20, lmin=1, lmax=6):
    """Random copy-task pairs over content ids [2, vocab)."""
    out = []
    for _ in range(n):
        length = int(rng.integers(lmin, lmax + 1))
        ids = tuple(int(x) for x in rng.integers(2, vocab, length))
        out.append(SentencePair(ids, ids))
    return out


def word_permutation(rng, vocab=20):
    """Bijection on content ids [2, vocab), the toy 'dictionary'."""
    values = np.arange(2, vocab)
    rng.shuffle(values)
    return {f: int(e) for f, e in zip(range(2, vocab), values)}


def dict_pairs(rng, n, perm, vocab=20, lmin=1, lmax=6):
    """Word-for-word translation pairs under a fixed permutation."""
    out = []
    for _ in range(n):
        length = int(rng.integers(lmin, lmax + 1))
        src = tuple(int(x) for x in rng.integers(2, vocab, length))
        out.append(SentencePair(src, tuple(perm[f] for f in src)))
    return out


def perfect_lexicon(perm):
    return LexiconTable({f: {e: 1.0} for f, e in perm.items()})


def random_lexicon(rng, src_size, tgt_size, fanout=4, mass=0.9):
    """Random sparse table with per-source mass <= ``mass``."""
    entries = {}
    for f in range(src_size):
        targets = rng.choice(tgt_size, min(fanout, tgt_size), replace=False)
        probs = rng.dirichlet(np.ones(len(targets))) * mass
        entries[f] = {int(e): float(p) for e, p in zip(targets, probs)}
    return LexiconTable(entries)


def tiny_model(src_size=6, tgt_size=7, d=3, attention="dot", seed=0, **kw):
    return init_params(src_size, tgt_size, d_emb=d, d_hid=d,
                       attention=attention, seed=seed, **kw)
