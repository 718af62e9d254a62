"""Attentional encoder-decoder with an optional lexicon-biased output softmax.

A bidirectional coupled-gate LSTM encodes the source into per-word columns R;
the decoder LSTM consumes [embed(previous word); previous context], attends
over R (dot product or MLP similarity), and emits the next-word distribution
softmax(W_s eta + b_s), optionally biased by log(L_F a + epsilon) where L_F
holds lexical translation probabilities for the source words.

Public operations (``encode``, ``attend``, ``decoder_step``,
``sentence_logprob``) take and return plain numpy values and run without
gradient recording; training code uses the underlying graph functions through
:class:`GraphParams`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .align import LexiconTable
from .corpus import Vocabulary
from .errors import DataError

ATTENTION_KINDS = ("dot", "mlp")

_CHECKPOINT_MAGIC = b"LEXNMT/CKPT/v1\n"


@dataclass
class ModelParams:
    """All named tensors of one encoder-decoder instance plus hyperparameters.

    The decoder hidden width is 2 * d_hid (the concatenated bidirectional
    width), so the encoder's sentence-end state initializes the decoder
    without projection.
    """

    d_emb: int
    d_hid: int
    attn_dim: int
    attention: str
    src_vocab_size: int
    tgt_vocab_size: int
    src_eos: int
    tgt_eos: int
    use_lexicon: bool
    epsilon: float
    tensors: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        if self.attention not in ATTENTION_KINDS:
            raise ValueError(f"unknown attention kind: {self.attention!r}")
        expected = expected_shapes(self)
        for name, shape in expected.items():
            if name not in self.tensors:
                raise DataError(f"tensor '{name}': missing")
            got = self.tensors[name].shape
            if got != shape:
                raise DataError(
                    f"tensor '{name}': expected shape {shape}, found {got}")
        for name in self.tensors:
            if name not in expected:
                raise DataError(f"tensor '{name}': unexpected")
            if not np.all(np.isfinite(self.tensors[name])):
                raise DataError(f"tensor '{name}': non-finite values")

    @property
    def dec_hid(self) -> int:
        return 2 * self.d_hid

    def copy(self) -> "ModelParams":
        return ModelParams(
            d_emb=self.d_emb, d_hid=self.d_hid, attn_dim=self.attn_dim,
            attention=self.attention, src_vocab_size=self.src_vocab_size,
            tgt_vocab_size=self.tgt_vocab_size, src_eos=self.src_eos,
            tgt_eos=self.tgt_eos, use_lexicon=self.use_lexicon,
            epsilon=self.epsilon,
            tensors={k: v.copy() for k, v in self.tensors.items()})

    def hyper_dict(self) -> dict:
        return {
            "d_emb": self.d_emb, "d_hid": self.d_hid,
            "attn_dim": self.attn_dim, "attention": self.attention,
            "src_vocab_size": self.src_vocab_size,
            "tgt_vocab_size": self.tgt_vocab_size,
            "src_eos": self.src_eos, "tgt_eos": self.tgt_eos,
            "use_lexicon": self.use_lexicon, "epsilon": self.epsilon,
        }


def expected_shapes(hp) -> dict[str, tuple[int, ...]]:
    """Canonical tensor-name -> shape map for one hyperparameter setting."""
    d_emb, d_hid = hp.d_emb, hp.d_hid
    dec = 2 * d_hid
    shapes = {
        "src_emb": (hp.src_vocab_size, d_emb),
        "tgt_emb": (hp.tgt_vocab_size, d_emb),
        "enc_fwd_W": (3 * d_hid, d_emb + d_hid),
        "enc_fwd_b": (3 * d_hid,),
        "enc_bwd_W": (3 * d_hid, d_emb + d_hid),
        "enc_bwd_b": (3 * d_hid,),
        "dec_W": (3 * dec, d_emb + dec + dec),
        "dec_b": (3 * dec,),
        "out_W": (dec, dec + dec),
        "out_b": (dec,),
        "softmax_W": (hp.tgt_vocab_size, dec),
        "softmax_b": (hp.tgt_vocab_size,),
    }
    if hp.attention == "mlp":
        shapes["attn_W1"] = (hp.attn_dim, 2 * dec)
        shapes["attn_w2"] = (hp.attn_dim,)
    return shapes


def init_params(src_vocab_size: int, tgt_vocab_size: int, *, d_emb: int = 64,
                d_hid: int = 64, attention: str = "dot", attn_dim: int | None = None,
                use_lexicon: bool = False, epsilon: float = 1e-6,
                src_eos: int = 0, tgt_eos: int = 0, seed: int = 0,
                init_scale: float = 0.08) -> ModelParams:
    """Fresh parameters with uniform(-init_scale, init_scale) weights, zero biases."""
    if attention not in ATTENTION_KINDS:
        raise ValueError(f"unknown attention kind: {attention!r}")
    hp = _Hyper(d_emb, d_hid, attn_dim if attn_dim is not None else d_hid,
                attention, src_vocab_size, tgt_vocab_size)
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in expected_shapes(hp).items():
        if name.endswith("_b"):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.uniform(-init_scale, init_scale, shape)
    return ModelParams(
        d_emb=d_emb, d_hid=d_hid, attn_dim=hp.attn_dim, attention=attention,
        src_vocab_size=src_vocab_size, tgt_vocab_size=tgt_vocab_size,
        src_eos=src_eos, tgt_eos=tgt_eos, use_lexicon=use_lexicon,
        epsilon=epsilon, tensors=tensors)


@dataclass
class _Hyper:
    d_emb: int
    d_hid: int
    attn_dim: int
    attention: str
    src_vocab_size: int
    tgt_vocab_size: int


# ---------------------------------------------------------------------------
# graph construction
# ---------------------------------------------------------------------------

class GraphParams:
    """Parameters wrapped as graph leaves for one forward/backward pass."""

    def __init__(self, params: ModelParams):
        self.hp = params
        self.t = {name: ad.Tensor(arr) for name, arr in params.tensors.items()}
        if params.attention == "mlp":
            dec = params.dec_hid
            self.w1_h = ad.cols_slice(self.t["attn_W1"], 0, dec)
            self.w1_r = ad.cols_slice(self.t["attn_W1"], dec, 2 * dec)

    def grads(self) -> dict[str, np.ndarray]:
        return {name: (t.grad if t.grad is not None else np.zeros_like(t.value))
                for name, t in self.t.items()}


@dataclass
class EncoderOutput:
    """Encoded source: R has one column of width 2*d_hid per source word."""

    R: np.ndarray
    init_state: np.ndarray


@dataclass
class DecoderState:
    hidden: np.ndarray
    cell: np.ndarray
    context: np.ndarray


class _EncGraph:
    def __init__(self, R, init_state, mlp_proj=None):
        self.R = R
        self.init_state = init_state
        self.mlp_proj = mlp_proj  # W1[:, r-part] @ R, shared across steps


class _DecStateG:
    __slots__ = ("hidden", "cell", "context")

    def __init__(self, hidden, cell, context):
        self.hidden = hidden
        self.cell = cell
        self.context = context


def _lstm_g(W, b, x, h, c):
    """Coupled-gate LSTM: the forget gate is one minus the input gate."""
    n = h.value.shape[0]
    z = ad.add(ad.matvec(W, ad.concat([x, h])), b)
    i = ad.sigmoid(ad.vec_slice(z, 0, n))
    o = ad.sigmoid(ad.vec_slice(z, n, 2 * n))
    g = ad.tanh(ad.vec_slice(z, 2 * n, 3 * n))
    c_new = ad.add(ad.mul(ad.one_minus(i), c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def _encode_g(gp: GraphParams, F) -> _EncGraph:
    hp = gp.hp
    if len(F) == 0:
        raise ValueError("cannot encode an empty sentence")
    for f in F:
        if not (0 <= f < hp.src_vocab_size):
            raise ValueError(f"source id {f} outside vocabulary")
    emb = gp.t["src_emb"]
    xs = [ad.row(emb, f) for f in F]
    x_eos = ad.row(emb, hp.src_eos)
    Wf, bf = gp.t["enc_fwd_W"], gp.t["enc_fwd_b"]
    Wb, bb = gp.t["enc_bwd_W"], gp.t["enc_bwd_b"]
    zero = np.zeros(hp.d_hid)

    h, c = ad.Tensor(zero), ad.Tensor(zero)
    fwd = []
    for x in xs:
        h, c = _lstm_g(Wf, bf, x, h, c)
        fwd.append(h)
    fwd_final, _ = _lstm_g(Wf, bf, x_eos, h, c)

    h, c = ad.Tensor(zero), ad.Tensor(zero)
    bwd = [None] * len(xs)
    for j in range(len(xs) - 1, -1, -1):
        h, c = _lstm_g(Wb, bb, xs[j], h, c)
        bwd[j] = h
    bwd_final, _ = _lstm_g(Wb, bb, x_eos, h, c)

    cols = [ad.concat([bwd[j], fwd[j]]) for j in range(len(xs))]
    R = ad.stack_cols(cols)
    init_state = ad.concat([bwd_final, fwd_final])
    proj = ad.matmat(gp.w1_r, R) if hp.attention == "mlp" else None
    return _EncGraph(R, init_state, proj)


def _attend_g(gp: GraphParams, h, enc: _EncGraph):
    if gp.hp.attention == "dot":
        scores = ad.matTvec(enc.R, h)
    else:
        m = ad.tanh(ad.addcol(enc.mlp_proj, ad.matvec(gp.w1_h, h)))
        scores = ad.matTvec(m, gp.t["attn_w2"])
    a = ad.softmax_vec(scores)
    return a, ad.matvec(enc.R, a)


def _init_state_g(gp: GraphParams, enc: _EncGraph) -> _DecStateG:
    dec = gp.hp.dec_hid
    return _DecStateG(enc.init_state,
                      ad.Tensor(np.zeros(dec)),
                      ad.Tensor(np.zeros(dec)))


def _decoder_step_g(gp: GraphParams, prev_word: int, state: _DecStateG,
                    enc: _EncGraph, lexicon_matrix=None, epsilon=None):
    """One decoder step; returns (new state, logits tensor, attention tensor)."""
    x = ad.concat([ad.row(gp.t["tgt_emb"], prev_word), state.context])
    h, c = _lstm_g(gp.t["dec_W"], gp.t["dec_b"], x, state.hidden, state.cell)
    a, ctx = _attend_g(gp, h, enc)
    eta = ad.add(ad.matvec(gp.t["out_W"], ad.concat([h, ctx])), gp.t["out_b"])
    logits = ad.add(ad.matvec(gp.t["softmax_W"], eta), gp.t["softmax_b"])
    if lexicon_matrix is not None:
        p_lex = ad.const_matvec(lexicon_matrix, a)
        logits = ad.add(logits, ad.log_add_eps(p_lex, epsilon))
    return _DecStateG(h, c, ctx), logits, a


def _sentence_logprob_g(gp: GraphParams, F, E, lexicon_matrix=None):
    """Teacher-forced log-probability of E (which must end with the eos id)."""
    enc = _encode_g(gp, F)
    state = _init_state_g(gp, enc)
    prev = gp.hp.tgt_eos
    terms = []
    for e in E:
        state, logits, _ = _decoder_step_g(gp, prev, state, enc,
                                           lexicon_matrix, gp.hp.epsilon)
        terms.append(ad.pick(ad.log_softmax_vec(logits), e))
        prev = e
    return ad.sumall(ad.stack_scalars(terms))


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def lstm_step(x: np.ndarray, state: tuple[np.ndarray, np.ndarray],
              W: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Coupled-gate LSTM step on raw arrays; returns (hidden, cell)."""
    x = np.asarray(x, dtype=float)
    hidden, cell = (np.asarray(s, dtype=float) for s in state)
    n = hidden.shape[0]
    if W.shape != (3 * n, x.shape[0] + n) or b.shape != (3 * n,) \
            or cell.shape != (n,):
        raise ValueError(
            f"dimension mismatch: W {W.shape}, b {b.shape}, x {x.shape}, "
            f"state ({hidden.shape}, {cell.shape})")
    with ad.no_grad():
        h, c = _lstm_g(ad.Tensor(W), ad.Tensor(b), ad.Tensor(x),
                       ad.Tensor(hidden), ad.Tensor(cell))
    return h.value, c.value


def encode(F, params: ModelParams) -> EncoderOutput:
    """Run the bidirectional encoder; attention sees exactly len(F) columns."""
    with ad.no_grad():
        enc = _encode_g(GraphParams(params), F)
    return EncoderOutput(R=enc.R.value, init_state=enc.init_state.value)


def init_decoder_state(enc: EncoderOutput, params: ModelParams) -> DecoderState:
    dec = params.dec_hid
    return DecoderState(hidden=enc.init_state.copy(),
                        cell=np.zeros(dec), context=np.zeros(dec))


def attend(h: np.ndarray, R: np.ndarray, kind: str,
           params: ModelParams | None = None):
    """Similarity + softmax + context; returns (attention vector, context)."""
    h = np.asarray(h, dtype=float)
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[1] == 0:
        raise ValueError("R must be a non-empty matrix of source columns")
    if kind == "dot":
        if h.shape[0] != R.shape[0]:
            raise ValueError(
                f"dimension mismatch: h has {h.shape[0]}, columns have {R.shape[0]}")
        scores = R.T @ h
    elif kind == "mlp":
        W1 = params.tensors["attn_W1"]
        w2 = params.tensors["attn_w2"]
        if W1.shape[1] != h.shape[0] + R.shape[0]:
            raise ValueError(
                f"dimension mismatch: attn_W1 {W1.shape} vs [h; r] size "
                f"{h.shape[0] + R.shape[0]}")
        m = np.tanh(W1[:, :h.shape[0]] @ h[:, None] + W1[:, h.shape[0]:] @ R)
        scores = m.T @ w2
    else:
        raise ValueError(f"unknown attention kind: {kind!r}")
    z = np.exp(scores - scores.max())
    a = z / z.sum()
    return a, R @ a


def build_lexicon_matrix(F, table: LexiconTable, tgt_vocab) -> sp.csr_matrix:
    """Sparse (|V_e|, |F|) matrix; column j holds p(e | f_j), zero if unknown."""
    size = tgt_vocab if isinstance(tgt_vocab, int) else len(tgt_vocab)
    rows, cols, vals = [], [], []
    for j, f in enumerate(F):
        for e, p in table.entries.get(f, {}).items():
            rows.append(e)
            cols.append(j)
            vals.append(p)
    return sp.csr_matrix((vals, (rows, cols)), shape=(size, len(F)))


def _check_epsilon(epsilon):
    if epsilon is None or epsilon <= 0:
        raise ValueError(
            "lexicon bias requires epsilon > 0 to prevent zero probabilities "
            "from becoming -inf under the log")


def decoder_step(prev_word: int, state: DecoderState, R, params: ModelParams,
                 lexicon=None, epsilon: float | None = None):
    """Advance the decoder one step; returns (DecoderState, probabilities).

    ``R`` may be an :class:`EncoderOutput` or the raw encoder matrix.
    ``lexicon`` is a precomputed L_F matrix for the current source sentence.
    """
    if isinstance(R, EncoderOutput):
        R = R.R
    if lexicon is not None:
        if epsilon is None:
            epsilon = params.epsilon
        _check_epsilon(epsilon)
    with ad.no_grad():
        gp = GraphParams(params)
        enc = _EncGraph(ad.Tensor(R), None,
                        ad.matmat(gp.w1_r, ad.Tensor(R))
                        if params.attention == "mlp" else None)
        st = _DecStateG(ad.Tensor(state.hidden), ad.Tensor(state.cell),
                        ad.Tensor(state.context))
        st, logits, _ = _decoder_step_g(gp, prev_word, st, enc, lexicon, epsilon)
        probs = ad.softmax_vec(logits)
    return (DecoderState(st.hidden.value, st.cell.value, st.context.value),
            probs.value)


def _as_model_list(models):
    if isinstance(models, ModelParams):
        return [models]
    models = list(models)
    if not models:
        raise ValueError("need at least one model")
    return models


def _lexicon_matrices(models, F, lexicon):
    """Per-model L_F (or None), honoring each model's use_lexicon flag."""
    mats = []
    for m in models:
        if lexicon is None:
            if m.use_lexicon:
                raise ValueError(
                    "model was trained with lexicon bias; a lexicon table is required")
            mats.append(None)
        else:
            _check_epsilon(m.epsilon)
            mats.append(build_lexicon_matrix(F, lexicon, m.tgt_vocab_size))
    return mats


def sentence_logprob(models, F, E, lexicon: LexiconTable | None = None) -> float:
    """Teacher-forced log p(E | F); ensembles average per-step probabilities.

    ``E`` must end with the target sentence-end id.
    """
    models = _as_model_list(models)
    sizes = {m.tgt_vocab_size for m in models}
    if len(sizes) != 1:
        raise ValueError("ensemble members must share a target vocabulary")
    if not E or E[-1] != models[0].tgt_eos:
        raise ValueError("E must end with the sentence-end id")
    mats = _lexicon_matrices(models, F, lexicon)
    with ad.no_grad():
        gps = [GraphParams(m) for m in models]
        encs = [_encode_g(gp, F) for gp in gps]
        states = [_init_state_g(gp, enc) for gp, enc in zip(gps, encs)]
        prev = models[0].tgt_eos
        total = 0.0
        for e in E:
            step_probs = np.zeros(models[0].tgt_vocab_size)
            for k, gp in enumerate(gps):
                states[k], logits, _ = _decoder_step_g(
                    gp, prev, states[k], encs[k], mats[k], gp.hp.epsilon)
                step_probs += ad.softmax_vec(logits).value
            total += float(np.log(step_probs[e] / len(gps)))
            prev = e
    return total


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, src_vocab: Vocabulary,
                    tgt_vocab: Vocabulary):
    """Write a versioned, byte-deterministic container of the full model."""
    names = sorted(params.tensors)
    header = {
        "hyper": params.hyper_dict(),
        "src_vocab": src_vocab.tokens,
        "tgt_vocab": tgt_vocab.tokens,
        "tensors": [{"name": n, "shape": list(params.tensors[n].shape)}
                    for n in names],
    }
    blob = b"".join(np.ascontiguousarray(params.tensors[n], dtype="<f8").tobytes()
                    for n in names)
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(json.dumps(header, sort_keys=True,
                           separators=(",", ":")).encode("utf-8"))
        f.write(b"\n")
        f.write(blob)


def load_checkpoint(path):
    """Read a checkpoint; returns (ModelParams, src Vocabulary, tgt Vocabulary)."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror}") from e
    if not raw.startswith(_CHECKPOINT_MAGIC):
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    rest = raw[len(_CHECKPOINT_MAGIC):]
    try:
        header_bytes, blob = rest.split(b"\n", 1)
        header = json.loads(header_bytes)
    except (ValueError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: corrupt checkpoint header") from e
    hyper = header["hyper"]
    tensors = {}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise DataError(
                f"{path}: tensor '{entry['name']}': truncated data")
        tensors[entry["name"]] = np.frombuffer(
            blob[offset:offset + nbytes], dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise DataError(f"{path}: trailing bytes after tensor data")
    params = ModelParams(tensors=tensors, **hyper)
    return (params, Vocabulary(header["src_vocab"]),
            Vocabulary(header["tgt_vocab"]))
