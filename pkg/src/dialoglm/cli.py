"""Command-line entry point.

One binary, eight subcommands: prepare, train, generate, eval, lda,
rerank, tune, attviz. Every run writes a manifest.json next to its
outputs with the resolved configuration, enough to reproduce the run.
Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
Environment variables are never consulted.
"""

import argparse
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import corpus, fileio, generator, metrics, topics, trainer
from .errors import DataError, ToolkitError
from .models import load_checkpoint, read_checkpoint_header, save_checkpoint


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ToolkitError(message)


def _utcnow():
    return datetime.now(timezone.utc).isoformat()


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _config_of(args):
    return {k: v for k, v in vars(args).items() if k != "func"}


def _load_vocab(path):
    if not os.path.exists(path):
        raise DataError(f"vocabulary file not found: {path}")
    return corpus.Vocabulary.load(path)


def _load_stopwords(path, vocab):
    if path is None:
        return frozenset()
    with open(path, encoding="utf-8") as f:
        words = [line.strip() for line in f if line.strip()]
    return frozenset(vocab.id_of(w) for w in words if w in vocab)


def _theta_provider(topic_model_path, vocab, stopword_ids):
    if topic_model_path is None:
        return None, None
    tm = topics.TopicModel.load(topic_model_path, expect_vocab_sha256=vocab.sha256())
    cache = {}

    def provider(dialogue):
        if dialogue not in cache:
            cache[dialogue] = topics.infer_theta(tm, topics.dialogue_bow(dialogue, stopword_ids))
        return cache[dialogue]

    return tm, provider


def _load_model(args, vocab, stopword_ids=frozenset()):
    header = read_checkpoint_header(args.checkpoint)
    provider = None
    if header["kind"] == "tarnn":
        if getattr(args, "topic_model", None) is None:
            raise DataError("a tarnn checkpoint needs --topic-model for topic features")
        _, provider = _theta_provider(args.topic_model, vocab, stopword_ids)
    return load_checkpoint(args.checkpoint, expect_vocab_sha256=vocab.sha256(),
                           theta_provider=provider)


# ---------------------------------------------------------------------------
# prepare


def cmd_prepare(args):
    out = _outdir(args.out)
    dialogues = corpus.read_corpus_words(args.corpus, min_turns=2)
    train_w, dev_w, test_w = corpus.split_corpus(dialogues, args.ratios, args.seed)
    if not train_w:
        raise DataError("train split is empty; adjust ratios")
    vocab = corpus.build_vocab(
        (turn for dlg in train_w for turn in dlg), args.vocab_size
    )
    vocab.save(os.path.join(out, "vocab.txt"))
    for name, split in (("train", train_w), ("dev", dev_w), ("test", test_w)):
        corpus.write_corpus_words(os.path.join(out, f"{name}.txt"), split)
        if split:
            rate = corpus.unk_rate(split, vocab)
            print(f"{name}: {len(split)} dialogues, unk rate {rate:.4f}")
        else:
            print(f"{name}: 0 dialogues")
    return {
        "vocab": os.path.join(out, "vocab.txt"),
        "splits": [os.path.join(out, f"{n}.txt") for n in ("train", "dev", "test")],
    }


# ---------------------------------------------------------------------------
# train


KIND_FLAGS = {
    "rnn": "rnn",
    "arnn": "arnn",
    "tarnn": "tarnn",
    "seq2seq": "seq2seq",
    "seq2seq-attn": "seq2seq_attn",
}


def cmd_train(args):
    out = _outdir(args.out)
    vocab = _load_vocab(args.vocab)
    stop_ids = _load_stopwords(args.stopwords, vocab)
    kind = KIND_FLAGS[args.kind]
    tm, provider = _theta_provider(args.topic_model, vocab, stop_ids)
    if kind == "tarnn" and tm is None:
        raise DataError("training a tarnn model needs --topic-model")
    config = trainer.TrainConfig(
        d=args.d, d_e=args.d_e, lr=args.lr, max_epochs=args.epochs,
        patience=args.patience, clip=args.clip, seed=args.seed,
        eval_interval=args.eval_interval,
    )
    train_dlg = corpus.load_corpus(args.train, vocab, min_turns=2)
    dev_dlg = corpus.load_corpus(args.dev, vocab, min_turns=2)
    log_lines = []
    n_topics = tm.n_topics if tm else None
    if args.pretrain:
        pre_train = corpus.load_corpus(args.pretrain, vocab, min_turns=2)
        pre_dev = corpus.load_corpus(args.pretrain_dev, vocab, min_turns=2) \
            if args.pretrain_dev else dev_dlg
        result = trainer.pretrain_finetune(
            kind, (pre_train, pre_dev), (train_dlg, dev_dlg), config, vocab.size,
            theta_provider=provider, n_topics=n_topics, log_lines=log_lines,
        )
    else:
        result = trainer.train(
            kind, train_dlg, dev_dlg, config, vocab.size,
            theta_provider=provider, n_topics=n_topics, log_lines=log_lines,
        )
    ckpt = os.path.join(out, "model.ckpt")
    save_checkpoint(ckpt, result.model, vocab.sha256())
    fileio.write_text_atomic(os.path.join(out, "train_log.txt"),
                             "".join(line + "\n" for line in log_lines))
    print(f"best dev ppl {result.best_dev_ppl:.4f} after {len(result.log)} evaluations")
    return {"checkpoint": ckpt, "log": os.path.join(out, "train_log.txt")}


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args):
    out = _outdir(args.out)
    vocab = _load_vocab(args.vocab)
    stop_ids = _load_stopwords(args.stopwords, vocab)
    model = _load_model(args, vocab, stop_ids)
    histories = corpus.load_corpus(args.histories, vocab, min_turns=1)
    top_lines = []
    outputs = []
    for i, history in enumerate(histories):
        theta = model.theta_provider(history) if model.kind == "tarnn" else None
        cands = generator.generate(
            model, history, vocab, beam_width=args.beam_width, max_len=args.max_len,
            n_best=args.n_best, len_norm=args.len_norm, theta=theta,
            record_trace=args.trace,
        )
        path = os.path.join(out, f"candidates_{i:04d}.txt")
        fileio.write_text_atomic(path, generator.format_candidates(cands, vocab))
        outputs.append(path)
        top_lines.append(cands[0].text(vocab))
        if args.trace:
            tpath = os.path.join(out, f"trace_{i:04d}.txt")
            fileio.write_text_atomic(tpath, generator.format_trace(cands[0].trace))
            outputs.append(tpath)
    gen_path = os.path.join(out, "generations.txt")
    fileio.write_text_atomic(gen_path, "".join(line + "\n" for line in top_lines))
    return {"generations": gen_path, "candidates": outputs}


def _parse_candidate_file(path, vocab):
    cands = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            head, _, text = line.partition("\t")
            rank, norm_score, loglik = head.split(" ")
            cands.append(
                generator.Candidate(
                    tokens=vocab.encode(text.split()),
                    loglik=float(loglik),
                    norm_score=float(norm_score),
                )
            )
    if not cands:
        raise DataError(f"{path}: no candidates")
    return cands


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args):
    out = _outdir(args.out)
    if args.hyp or args.ref:
        if not (args.hyp and args.ref):
            raise DataError("text evaluation needs both --hyp and --ref")
        with open(args.hyp, encoding="utf-8") as f:
            hyps = [line.split() for line in f]
        with open(args.ref, encoding="utf-8") as f:
            refs = [line.split() for line in f]
        report = metrics.EvalReport(
            values={
                "bleu": metrics.corpus_bleu(hyps, refs, max_n=args.max_n),
                "distinct_1": metrics.distinct_1(hyps),
            },
            counts={"pairs": len(hyps), "tokens": sum(len(h) for h in hyps)},
        )
    else:
        if not (args.checkpoint and args.vocab and args.corpus):
            raise DataError("model evaluation needs --checkpoint, --vocab and --corpus")
        vocab = _load_vocab(args.vocab)
        stop_ids = _load_stopwords(args.stopwords, vocab)
        model = _load_model(args, vocab, stop_ids)
        dialogues = corpus.load_corpus(args.corpus, vocab, min_turns=2)
        report = metrics.evaluate(model, dialogues)
        if args.recall_n:
            sets = [
                corpus.sample_candidates(dialogues, d, [args.recall_seed, i])
                for i, d in enumerate(dialogues)
            ]
            provider = model.theta_provider if model.kind == "tarnn" else None
            report.values[f"recall_at_{args.recall_n}"] = metrics.recall_at_n(
                model, sets, args.recall_n, len_norm=args.len_norm,
                theta_provider=provider,
            )
            report.counts["candidate_sets"] = len(sets)
    fileio.write_text_atomic(os.path.join(out, "report.tsv"), report.to_tsv())
    fileio.write_text_atomic(os.path.join(out, "report.json"), report.to_json())
    print(report.to_tsv(), end="")
    return {"report": os.path.join(out, "report.tsv")}


# ---------------------------------------------------------------------------
# lda


def cmd_lda(args):
    out = _outdir(args.out)
    vocab = _load_vocab(args.vocab)
    stop_ids = _load_stopwords(args.stopwords, vocab)
    dialogues = corpus.load_corpus(args.corpus, vocab, min_turns=1)
    docs = [topics.dialogue_bow(d, stop_ids) for d in dialogues]
    xi = np.full(args.topics_k, args.xi) if args.xi else None
    tm = topics.lda_train(
        docs, args.topics_k, vocab.size, eta=args.eta, xi=xi,
        sweeps=args.sweeps, seed=args.seed, infer_sweeps=args.infer_sweeps,
    )
    path = os.path.join(out, "topics.bin")
    tm.save(path, vocab_sha256=vocab.sha256())
    top = tm.top_words(10, vocab)
    fileio.write_text_atomic(
        os.path.join(out, "topwords.txt"),
        "".join(f"topic {k}: " + " ".join(ws) + "\n" for k, ws in enumerate(top)),
    )
    return {"topic_model": path, "top_words": os.path.join(out, "topwords.txt")}


# ---------------------------------------------------------------------------
# rerank


def _iter_candidate_files(cand_dir, n):
    for i in range(n):
        path = os.path.join(cand_dir, f"candidates_{i:04d}.txt")
        if not os.path.exists(path):
            raise DataError(f"missing candidate dump {path}")
        yield i, path


def cmd_rerank(args):
    out = _outdir(args.out)
    vocab = _load_vocab(args.vocab)
    stop_ids = _load_stopwords(args.stopwords, vocab)
    tm = topics.TopicModel.load(args.topic_model, expect_vocab_sha256=vocab.sha256())
    histories = corpus.load_corpus(args.histories, vocab, min_turns=1)
    config = topics.RerankConfig(lam=args.lam, metric=args.metric, n_topics=tm.n_topics)
    top_lines = []
    for i, path in _iter_candidate_files(args.candidates_dir, len(histories)):
        cands = _parse_candidate_file(path, vocab)
        ranked = topics.rerank(histories[i], cands, tm, config, stop_ids)
        lines = []
        for rank, rc in enumerate(ranked, start=1):
            text = rc.candidate.text(vocab)
            lines.append(
                f"{rank} {rc.combined!r} {rc.similarity!r} {rc.ll_z!r}\t{text}"
            )
        fileio.write_text_atomic(os.path.join(out, f"reranked_{i:04d}.txt"),
                                 "\n".join(lines) + "\n")
        top_lines.append(ranked[0].candidate.text(vocab))
    top_path = os.path.join(out, "rerank_top1.txt")
    fileio.write_text_atomic(top_path, "".join(line + "\n" for line in top_lines))
    return {"top1": top_path}


# ---------------------------------------------------------------------------
# tune


def _parse_lambdas(grid):
    if ":" in grid:
        lo, hi, step = (float(x) for x in grid.split(":"))
        n = int(round((hi - lo) / step))
        return [round(lo + i * step, 10) for i in range(n + 1)]
    return [float(x) for x in grid.split(",")]


def cmd_tune(args):
    out = _outdir(args.out)
    vocab = _load_vocab(args.vocab)
    stop_ids = _load_stopwords(args.stopwords, vocab)
    dev = corpus.load_corpus(args.histories, vocab, min_turns=2)
    topic_models = {}
    for path in args.topic_models.split(","):
        tm = topics.TopicModel.load(path, expect_vocab_sha256=vocab.sha256())
        topic_models[tm.n_topics] = tm
    model = None
    if args.objective == "recall":
        if args.checkpoint is None:
            raise DataError("the recall objective needs --checkpoint to score references")
        model = _load_model(args, vocab, stop_ids)
    items = []
    for i, dlg in enumerate(dev):
        path = os.path.join(args.candidates_dir, f"candidates_{i:04d}.txt")
        if not os.path.exists(path):
            raise DataError(f"missing candidate dump {path}")
        cands = _parse_candidate_file(path, vocab)
        reference = list(dlg.last_utterance())
        truth_index = None
        if args.objective == "recall":
            seq = reference + [corpus.EOU_ID]
            lp = generator.continuation_log_likelihood(model, dlg.history(), seq)
            cands = cands + [
                generator.Candidate(tokens=reference, loglik=lp,
                                    norm_score=lp / (len(seq) ** args.len_norm))
            ]
            truth_index = len(cands) - 1
        items.append(
            topics.RerankItem(history=dlg.history(), candidates=cands,
                              reference=reference, truth_index=truth_index)
        )
    lambdas = _parse_lambdas(args.lambdas)
    best_k, best_lam, table = topics.tune_rerank(
        items, topic_models, lambdas=lambdas, objective=args.objective,
        recall_n=args.recall_n, metric=args.metric, stopword_ids=stop_ids,
    )
    fileio.write_text_atomic(os.path.join(out, "grid.tsv"), topics.format_grid(table))
    fileio.write_json_atomic(os.path.join(out, "best.json"),
                             {"K": best_k, "lambda": best_lam})
    print(f"best K={best_k} lambda={best_lam}")
    return {"grid": os.path.join(out, "grid.tsv"), "best": os.path.join(out, "best.json")}


# ---------------------------------------------------------------------------
# attviz


def render_heatmap_pgm(trace, cell_size=12):
    """Grayscale PGM raster of an attention trace.

    Rows are generated tokens, columns are history positions; darker cells
    mean larger attention weight. The exact weight rows are embedded as
    comment lines, so the image is self-describing.
    """
    n_rows = len(trace.rows)
    width = max(len(row) for row in trace.rows)
    lines = [f"# row {i}: " + " ".join(repr(float(w)) for w in row)
             for i, row in enumerate(trace.rows)]
    pixels = []
    for row in trace.rows:
        vals = [255 - int(round(255 * min(max(float(w), 0.0), 1.0))) for w in row]
        vals += [255] * (width - len(vals))
        scaled = []
        for v in vals:
            scaled.extend([v] * cell_size)
        for _ in range(cell_size):
            pixels.append(" ".join(str(v) for v in scaled))
    header = ["P2"] + lines + [f"{width * cell_size} {n_rows * cell_size}", "255"]
    return "\n".join(header + pixels) + "\n"


def cmd_attviz(args):
    out = _outdir(args.out)
    vocab = _load_vocab(args.vocab)
    stop_ids = _load_stopwords(args.stopwords, vocab)
    model = _load_model(args, vocab, stop_ids)
    if not getattr(model, "attends", False):
        raise DataError(f"checkpoint kind {model.kind!r} has no attention to visualize")
    histories = corpus.load_corpus(args.history, vocab, min_turns=1)
    if not (0 <= args.history_index < len(histories)):
        raise DataError(f"--history-index {args.history_index} out of range")
    history = histories[args.history_index]
    theta = model.theta_provider(history) if model.kind == "tarnn" else None
    if args.continuation:
        tokens = vocab.encode(args.continuation.split())
        trace = generator.trace_attention(model, history, tokens, vocab, theta=theta)
    else:
        cands = generator.generate(
            model, history, vocab, beam_width=args.beam_width, max_len=args.max_len,
            n_best=1, len_norm=args.len_norm, theta=theta, record_trace=True,
        )
        trace = cands[0].trace
    trace_path = os.path.join(out, "trace.txt")
    fileio.write_text_atomic(trace_path, generator.format_trace(trace))
    pgm_path = os.path.join(out, "heatmap.pgm")
    fileio.write_text_atomic(pgm_path, render_heatmap_pgm(trace, args.cell_size))
    return {"trace": trace_path, "heatmap": pgm_path}


# ---------------------------------------------------------------------------
# parser


def _ratios(text):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("ratios must be three comma-separated numbers")
    return parts


def build_parser():
    parser = _Parser(prog="dialoglm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="split a corpus and build its vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-size", type=int, default=10000)
    p.add_argument("--ratios", type=_ratios, default=[0.8, 0.1, 0.1])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model variant")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=sorted(KIND_FLAGS), default="arnn")
    p.add_argument("--d", type=int, default=300)
    p.add_argument("--d-e", type=int, default=None)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--clip", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-interval", type=int, default=1)
    p.add_argument("--topic-model", default=None)
    p.add_argument("--stopwords", default=None)
    p.add_argument("--pretrain", default=None)
    p.add_argument("--pretrain-dev", default=None)
    p.add_argument("--config", default=None,
                   help="key=value file; flags given on the command line win")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="beam-search continuations for histories")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--histories", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beam-width", type=int, default=10)
    p.add_argument("--n-best", type=int, default=10)
    p.add_argument("--max-len", type=int, default=30)
    p.add_argument("--len-norm", type=float, default=1.0)
    p.add_argument("--trace", action="store_true")
    p.add_argument("--topic-model", default=None)
    p.add_argument("--stopwords", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="evaluate a model on a corpus, or score generations")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--vocab", default=None)
    p.add_argument("--corpus", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--recall-n", type=int, default=None)
    p.add_argument("--recall-seed", type=int, default=0)
    p.add_argument("--len-norm", type=float, default=1.0)
    p.add_argument("--hyp", default=None)
    p.add_argument("--ref", default=None)
    p.add_argument("--max-n", type=int, default=4)
    p.add_argument("--topic-model", default=None)
    p.add_argument("--stopwords", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("lda", help="train the LDA topic structure")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--topics-k", type=int, default=10)
    p.add_argument("--eta", type=float, default=0.01)
    p.add_argument("--xi", type=float, default=None,
                   help="scalar document-topic prior; default 50/K")
    p.add_argument("--sweeps", type=int, default=100)
    p.add_argument("--infer-sweeps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stopwords", default=None)
    p.set_defaults(func=cmd_lda)

    p = sub.add_parser("rerank", help="reorder generated candidates by topic match")
    p.add_argument("--histories", required=True)
    p.add_argument("--candidates-dir", required=True)
    p.add_argument("--topic-model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=0.45)
    p.add_argument("--metric", choices=("cosine", "njsd"), default="cosine")
    p.add_argument("--stopwords", default=None)
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("tune", help="grid-search (K, lambda) for the reranker")
    p.add_argument("--histories", required=True,
                   help="dev corpus with reference responses as final turns")
    p.add_argument("--candidates-dir", required=True)
    p.add_argument("--topic-models", required=True,
                   help="comma-separated topic model paths (one per K)")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambdas", default="0.0:1.0:0.05")
    p.add_argument("--objective", choices=("bleu", "recall"), default="bleu")
    p.add_argument("--recall-n", type=int, default=1)
    p.add_argument("--checkpoint", default=None,
                   help="needed by the recall objective to score references")
    p.add_argument("--topic-model", default=None)
    p.add_argument("--len-norm", type=float, default=1.0)
    p.add_argument("--metric", choices=("cosine", "njsd"), default="cosine")
    p.add_argument("--stopwords", default=None)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("attviz", help="emit an attention trace and heatmap")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--history", required=True)
    p.add_argument("--history-index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--beam-width", type=int, default=1)
    p.add_argument("--max-len", type=int, default=30)
    p.add_argument("--len-norm", type=float, default=1.0)
    p.add_argument("--continuation", default=None,
                   help="trace this whitespace-tokenized continuation instead of decoding")
    p.add_argument("--cell-size", type=int, default=12)
    p.add_argument("--topic-model", default=None)
    p.add_argument("--stopwords", default=None)
    p.set_defaults(func=cmd_attviz)

    return parser


def _apply_config_file(argv):
    """Expand --config key=value pairs into flags placed before user flags."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        return argv
    path = argv[i + 1]
    if not os.path.exists(path):
        raise DataError(f"config file not found: {path}")
    flags = []
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}: line {lineno}: expected key=value")
            key, _, value = line.partition("=")
            flags.extend([f"--{key.strip().replace('_', '-')}", value.strip()])
    return argv[:1] + flags + argv[1:]


def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    started = _utcnow()
    try:
        argv = _apply_config_file(list(argv))
        parser = build_parser()
        args = parser.parse_args(argv)
        outputs = args.func(args)
        if hasattr(args, "out"):
            inputs = {k: v for k, v in _config_of(args).items()
                      if k != "out" and isinstance(v, str) and os.path.exists(v)}
            fileio.write_manifest(
                args.out, args.command, _config_of(args), inputs=inputs,
                outputs=outputs, seed=getattr(args, "seed", None),
                started=started, ended=_utcnow(),
            )
        return 0
    except ToolkitError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except SystemExit as e:  # argparse --help
        return 0 if e.code in (0, None) else 1


if __name__ == "__main__":
    sys.exit(main())
