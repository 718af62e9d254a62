"""Command-line entry point wiring the library into reproducible pipelines.

Subcommands: preprocess (normalize + BPE + vocab), align (IBM Model 1 lexicon),
train (maximum likelihood), mrt-train (minimum-risk fine-tuning), decode,
score, sample.  Configuration precedence is flags > --config file > defaults.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .align import ibm1_train, load_lexicon, prune_lexicon, save_lexicon
from .corpus import (Vocabulary, apply_bpe, build_vocab, encode_pairs,
                     invert_bpe, learn_bpe, load_bpe, normalize_halfwidth,
                     read_lines, read_parallel, save_bpe)
from .decode import beam_search, score_hypothesis
from .errors import DataError, NumericalError
from .metrics import bleu, length_ratio, sbleu
from .model import (build_lexicon_matrix, init_params, load_checkpoint,
                    save_checkpoint)
from .train import (MrtSettings, TrainConfig, sample_translation, train_ml,
                    train_mrt)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser():
    parser = _Parser(prog="lexnmt",
                     description="attentional NMT with discrete lexicon bias")
    parser.add_argument("--config", metavar="FILE",
                        help="JSON file of flag defaults (flags still win)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers = {}

    p = subparsers["preprocess"] = sub.add_parser(
        "preprocess", help="normalize, learn/apply BPE, build vocabularies")
    p.add_argument("--train-src", required=True)
    p.add_argument("--train-tgt", required=True)
    p.add_argument("--dev-src")
    p.add_argument("--dev-tgt")
    p.add_argument("--outdir", required=True)
    p.add_argument("--merges", type=int, default=1000)
    p.add_argument("--src-vocab-size", type=int, default=10000)
    p.add_argument("--tgt-vocab-size", type=int, default=10000)
    p.set_defaults(func=_cmd_preprocess)

    p = subparsers["align"] = sub.add_parser(
        "align", help="train an IBM Model 1 lexicon on preprocessed text")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--min-prob", type=float, default=0.0,
                   help="drop entries below this probability")
    p.set_defaults(func=_cmd_align)

    p = subparsers["train"] = sub.add_parser(
        "train", help="maximum-likelihood training")
    _add_data_flags(p)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--lexicon", help="lexicon TSV enabling the biased softmax")
    p.add_argument("--attention", choices=("dot", "mlp"), default="dot")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--d-emb", type=int, default=64)
    p.add_argument("--d-hid", type=int, default=64)
    p.add_argument("--attn-dim", type=int)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--batch-words", type=int, default=2048)
    p.add_argument("--dev-check", type=int, default=200,
                   help="training sentences between dev evaluations")
    p.add_argument("--patience", type=int, default=600,
                   help="sentences without dev improvement before halving the lr")
    p.add_argument("--max-epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=_cmd_train)

    p = subparsers["mrt-train"] = sub.add_parser(
        "mrt-train", help="minimum-risk fine-tuning of a trained model")
    _add_data_flags(p, vocab_flags=False)
    p.add_argument("--init", required=True, metavar="CHECKPOINT")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--alpha", type=float, default=0.005)
    p.add_argument("--max-sample-len", type=int)
    p.add_argument("--mrt-epochs", type=int, default=2)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=_cmd_mrt_train)

    p = subparsers["decode"] = sub.add_parser(
        "decode", help="beam-search translation of a text file")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", action="append", required=True,
                   help="model checkpoint; repeat to ensemble")
    p.add_argument("--bpe", help="merge file from preprocess")
    p.add_argument("--lexicon")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--word-penalty", type=float, default=0.0)
    p.add_argument("--max-len", type=int,
                   help="hypothesis length cap (default 2*|F|+10)")
    p.add_argument("--output", help="write translations here instead of stdout")
    p.add_argument("--scores", help="side file of per-sentence log scores")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_decode)

    p = subparsers["score"] = sub.add_parser(
        "score", help="corpus BLEU and length ratio")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--per-sentence", metavar="FILE",
                   help="write per-sentence SBLEU TSV here")
    p.set_defaults(func=_cmd_score)

    p = subparsers["sample"] = sub.add_parser(
        "sample", help="draw translations from the model distribution")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bpe")
    p.add_argument("--lexicon")
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--max-len", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output")
    p.set_defaults(func=_cmd_sample)

    return parser, subparsers


def _add_data_flags(p, vocab_flags: bool = True):
    p.add_argument("--train-src", required=True)
    p.add_argument("--train-tgt", required=True)
    p.add_argument("--dev-src", required=True)
    p.add_argument("--dev-tgt", required=True)
    if vocab_flags:
        p.add_argument("--src-vocab", required=True)
        p.add_argument("--tgt-vocab", required=True)


def _apply_config(parser, subparsers, argv):
    pre = _Parser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return
    try:
        with open(known.config, encoding="utf-8") as f:
            values = json.load(f)
    except OSError as e:
        raise DataError(f"cannot read {known.config}: {e.strerror}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{known.config}: invalid JSON: {e}") from e
    if not isinstance(values, dict):
        raise DataError(f"{known.config}: config must be a JSON object")
    all_dests = set()
    for sp in subparsers.values():
        dests = {a.dest for a in sp._actions}
        all_dests |= dests
        sp.set_defaults(**{k: v for k, v in values.items() if k in dests})
    unknown = set(values) - all_dests
    if unknown:
        raise _UsageError(f"unknown config key: {sorted(unknown)[0]}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_preprocess(args):
    src, tgt = read_parallel(args.train_src, args.train_tgt)
    src = [normalize_halfwidth(s) for s in src]
    tgt = [normalize_halfwidth(t) for t in tgt]
    bpe = learn_bpe(src + tgt, args.merges)
    os.makedirs(args.outdir, exist_ok=True)
    save_bpe(bpe, os.path.join(args.outdir, "bpe.merges"))

    def segment(lines):
        return [apply_bpe(bpe, line) for line in lines]

    src_bpe = segment(src)
    tgt_bpe = segment(tgt)
    src_vocab = build_vocab(src_bpe, args.src_vocab_size)
    tgt_vocab = build_vocab(tgt_bpe, args.tgt_vocab_size)
    src_vocab.save(os.path.join(args.outdir, "vocab.src"))
    tgt_vocab.save(os.path.join(args.outdir, "vocab.tgt"))
    _write_tokens(os.path.join(args.outdir, "train.src"), src_bpe)
    _write_tokens(os.path.join(args.outdir, "train.tgt"), tgt_bpe)
    if (args.dev_src is None) != (args.dev_tgt is None):
        raise _UsageError("--dev-src and --dev-tgt must be given together")
    if args.dev_src is not None:
        dev_src, dev_tgt = read_parallel(args.dev_src, args.dev_tgt)
        _write_tokens(os.path.join(args.outdir, "dev.src"),
                      segment([normalize_halfwidth(s) for s in dev_src]))
        _write_tokens(os.path.join(args.outdir, "dev.tgt"),
                      segment([normalize_halfwidth(t) for t in dev_tgt]))
    print(f"merges: {len(bpe.merges)}  src vocab: {len(src_vocab)}  "
          f"tgt vocab: {len(tgt_vocab)}")
    return 0


def _write_tokens(path, sentences):
    with open(path, "w", encoding="utf-8") as f:
        for tokens in sentences:
            f.write(" ".join(tokens) + "\n")


def _cmd_align(args):
    src, tgt = read_parallel(args.src, args.tgt)
    src_vocab = Vocabulary.load(args.src_vocab)
    tgt_vocab = Vocabulary.load(args.tgt_vocab)
    pairs = encode_pairs(src, tgt, src_vocab, tgt_vocab)
    table = ibm1_train(pairs, args.iterations)
    if args.min_prob > 0:
        table = prune_lexicon(table, args.min_prob)
    save_lexicon(table, src_vocab, tgt_vocab, args.out)
    entries = sum(len(v) for v in table.entries.values())
    print(f"lexicon: {len(table)} source words, {entries} entries")
    return 0


def _load_data(args):
    src_vocab = Vocabulary.load(args.src_vocab)
    tgt_vocab = Vocabulary.load(args.tgt_vocab)
    train = encode_pairs(*read_parallel(args.train_src, args.train_tgt),
                         src_vocab, tgt_vocab)
    dev = encode_pairs(*read_parallel(args.dev_src, args.dev_tgt),
                       src_vocab, tgt_vocab)
    return src_vocab, tgt_vocab, train, dev


def _cmd_train(args):
    src_vocab, tgt_vocab, train, dev = _load_data(args)
    lexicon = (load_lexicon(args.lexicon, src_vocab, tgt_vocab)
               if args.lexicon else None)
    params = init_params(
        len(src_vocab), len(tgt_vocab), d_emb=args.d_emb, d_hid=args.d_hid,
        attention=args.attention, attn_dim=args.attn_dim,
        use_lexicon=lexicon is not None, epsilon=args.epsilon,
        src_eos=src_vocab.eos_id, tgt_eos=tgt_vocab.eos_id, seed=args.seed)
    config = TrainConfig(
        lr_schedule=(args.lr, args.lr / 2, args.lr / 4),
        word_budget=args.batch_words, clip_norm=args.clip_norm,
        dev_check_interval=args.dev_check, patience=args.patience,
        max_epochs=args.max_epochs, seed=args.seed)
    best, log = train_ml(params, train, dev, config,
                         run_dir=args.run_dir, vocabs=(src_vocab, tgt_vocab),
                         lexicon=lexicon)
    save_checkpoint(os.path.join(args.run_dir, "model.ckpt"), best,
                    src_vocab, tgt_vocab)
    if log:
        print(f"best dev loss {min(r['dev_loss'] for r in log):.4f} "
              f"after {log[-1]['sentences_seen']} sentences")
    return 0


def _cmd_mrt_train(args):
    params, src_vocab, tgt_vocab = load_checkpoint(args.init)
    train = encode_pairs(*read_parallel(args.train_src, args.train_tgt),
                         src_vocab, tgt_vocab)
    dev = encode_pairs(*read_parallel(args.dev_src, args.dev_tgt),
                       src_vocab, tgt_vocab)
    lexicon = (load_lexicon(args.lexicon, src_vocab, tgt_vocab)
               if args.lexicon else None)
    config = TrainConfig(
        lr_schedule=(args.lr, args.lr / 2, args.lr / 4),
        clip_norm=args.clip_norm, seed=args.seed,
        mrt=MrtSettings(num_samples=args.samples, alpha=args.alpha,
                        max_sample_len=args.max_sample_len,
                        epochs=args.mrt_epochs))
    best, log = train_mrt(params, train, dev, config, run_dir=args.run_dir,
                          vocabs=(src_vocab, tgt_vocab), lexicon=lexicon)
    save_checkpoint(os.path.join(args.run_dir, "model.ckpt"), best,
                    src_vocab, tgt_vocab)
    if log:
        print(f"dev expected error {log[-1]['dev_expected_error']:.4f} "
              f"after {log[-1]['sentences_seen']} sentences")
    return 0


def _load_models(paths):
    models = []
    vocabs = None
    for path in paths:
        params, src_vocab, tgt_vocab = load_checkpoint(path)
        if vocabs is None:
            vocabs = (src_vocab, tgt_vocab)
        elif (vocabs[0].tokens != src_vocab.tokens
              or vocabs[1].tokens != tgt_vocab.tokens):
            raise DataError(f"{path}: vocabulary differs from first checkpoint")
        models.append(params)
    return models, vocabs[0], vocabs[1]


def _source_ids(line, bpe, src_vocab):
    line = normalize_halfwidth(line)
    tokens = apply_bpe(bpe, line) if bpe is not None else line.split()
    return src_vocab.encode(tokens)


def _cmd_decode(args):
    models, src_vocab, tgt_vocab = _load_models(args.checkpoint)
    bpe = load_bpe(args.bpe) if args.bpe else None
    lexicon = (load_lexicon(args.lexicon, src_vocab, tgt_vocab)
               if args.lexicon else None)
    lines = read_lines(args.input)

    def translate_line(line):
        ids = _source_ids(line, bpe, src_vocab)
        if not ids:
            return "", 0.0, True
        hyp = beam_search(models, ids, beam_size=args.beam,
                          word_penalty=args.word_penalty,
                          max_len=args.max_len, lexicon=lexicon)
        tokens = list(hyp.tokens)
        if tokens and tokens[-1] == tgt_vocab.eos_id:
            tokens = tokens[:-1]
        words = invert_bpe(tgt_vocab.decode(tokens)) if bpe is not None \
            else tgt_vocab.decode(tokens)
        return " ".join(words), score_hypothesis(hyp, args.word_penalty), \
            hyp.complete

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(translate_line, lines))
    else:
        results = [translate_line(line) for line in lines]

    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for i, (text, score, complete) in enumerate(results, 1):
            out.write(text + "\n")
            if not complete:
                print(f"warning: line {i}: no hypothesis completed "
                      "within the length cap", file=sys.stderr)
    finally:
        if out is not sys.stdout:
            out.close()
    if args.scores:
        with open(args.scores, "w", encoding="utf-8") as f:
            for _, score, _ in results:
                f.write(f"{score:.6f}\n")
    return 0


def _cmd_score(args):
    hyps = [line.split() for line in read_lines(args.hyp)]
    refs = [line.split() for line in read_lines(args.ref)]
    b = bleu(hyps, refs)
    ratio = length_ratio(hyps, refs)
    print(f"BLEU {b:.1f} RATIO {ratio:.1f}")
    if args.per_sentence:
        with open(args.per_sentence, "w", encoding="utf-8") as f:
            for i, (h, r) in enumerate(zip(hyps, refs), 1):
                f.write(f"{i}\t{sbleu(h, r):.6f}\n")
    return 0


def _cmd_sample(args):
    params, src_vocab, tgt_vocab = load_checkpoint(args.checkpoint)
    bpe = load_bpe(args.bpe) if args.bpe else None
    lexicon = (load_lexicon(args.lexicon, src_vocab, tgt_vocab)
               if args.lexicon else None)
    if args.samples < 1:
        raise _UsageError("--samples must be >= 1")
    rng = np.random.default_rng(args.seed)
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for line in read_lines(args.input):
            ids = _source_ids(line, bpe, src_vocab)
            if not ids:
                out.write("\n" * args.samples)
                continue
            mat = (build_lexicon_matrix(ids, lexicon, len(tgt_vocab))
                   if lexicon is not None else None)
            for k in range(args.samples):
                drawn = sample_translation(params, ids, args.max_len, rng, mat)
                if drawn and drawn[-1] == tgt_vocab.eos_id:
                    drawn = drawn[:-1]
                words = (invert_bpe(tgt_vocab.decode(drawn))
                         if bpe is not None else tgt_vocab.decode(drawn))
                text = " ".join(words)
                out.write(f"{k}\t{text}\n" if args.samples > 1 else text + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def run_command(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = _build_parser()
    _apply_config(parser, subparsers, argv)
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 1
    return args.func(args)


def main(argv=None) -> int:
    try:
        return run_command(argv)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return 3
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
