"""Evaluation suite: perplexity (full dialogue and last utterance), word
error rate, recall@N over 10-candidate sets, corpus BLEU, and Distinct-1.

Word error rate here is the teacher-forced top-1 token error: the fraction
of scored positions where the model's argmax differs from the reference
token. recall@N ranks candidates by length-normalized conditional
log-likelihood; ties break by candidate index.
"""

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import corpus
from .errors import DataError
from .generator import continuation_logp_from


@dataclass
class EvalReport:
    """Metric values plus the counts that back them."""

    values: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def to_tsv(self):
        lines = [f"{k}\t{self.values[k]!r}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def to_json(self):
        import json

        return json.dumps({"values": self.values, "counts": self.counts},
                          indent=2, sort_keys=True) + "\n"


def _accumulate(model, dialogues, last_utterance_only):
    total_lp = 0.0
    tokens = 0
    errors = 0
    for d in dialogues:
        s = model.score_dialogue(d)
        sl = s.last_slice if last_utterance_only else slice(None)
        lp = s.per_token[sl]
        total_lp += float(lp.sum())
        tokens += len(lp)
        errors += int(np.sum(s.argmax[sl] != s.refs[sl]))
    return total_lp, tokens, errors


def perplexity(model, dialogues, last_utterance_only=False):
    """exp(-sum log P / token count) over the flagged span."""
    if not dialogues:
        raise DataError("empty evaluation set")
    total_lp, tokens, _ = _accumulate(model, dialogues, last_utterance_only)
    if tokens == 0:
        raise DataError("evaluation span contains zero tokens")
    return float(np.exp(-total_lp / tokens))


def word_error_rate(model, dialogues, last_utterance_only=False):
    """Fraction of positions whose argmax prediction misses the reference."""
    if not dialogues:
        raise DataError("empty evaluation set")
    _, tokens, errors = _accumulate(model, dialogues, last_utterance_only)
    if tokens == 0:
        raise DataError("evaluation span contains zero tokens")
    return errors / tokens


def evaluate(model, dialogues):
    """PPL, PPL@L, WER and WER@L in one pass over the dialogues."""
    if not dialogues:
        raise DataError("empty evaluation set")
    full = [0.0, 0, 0]
    last = [0.0, 0, 0]
    for d in dialogues:
        s = model.score_dialogue(d)
        full[0] += float(s.per_token.sum())
        full[1] += len(s.per_token)
        full[2] += int(np.sum(s.argmax != s.refs))
        lp = s.per_token[s.last_slice]
        last[0] += float(lp.sum())
        last[1] += len(lp)
        last[2] += int(np.sum(s.argmax[s.last_slice] != s.refs[s.last_slice]))
    if full[1] == 0 or last[1] == 0:
        raise DataError("evaluation span contains zero tokens")
    return EvalReport(
        values={
            "ppl": float(np.exp(-full[0] / full[1])),
            "ppl_at_l": float(np.exp(-last[0] / last[1])),
            "wer": full[2] / full[1],
            "wer_at_l": last[2] / last[1],
        },
        counts={"dialogues": len(dialogues), "tokens": full[1], "tokens_at_l": last[1]},
    )


def recall_at_n(model, candidate_sets, n, len_norm=1.0, theta_provider=None):
    """Fraction of sets whose true continuation ranks in the top n of 10.

    Candidates are scored as teacher-forced continuations (with a closing
    </u>) of the history, normalized by length**len_norm.
    """
    if not candidate_sets:
        raise DataError("no candidate sets")
    if not (1 <= n <= 10):
        raise DataError("recall@N needs 1 <= N <= 10")
    hits = 0
    for cs in candidate_sets:
        prefix = corpus.continuation_prefix(cs.history)
        theta = theta_provider(cs.history) if theta_provider is not None else None
        root = model.begin(prefix, theta=theta) if theta is not None else model.begin(prefix)
        scores = []
        for cand in cs.candidates:
            seq = list(cand) + [corpus.EOU_ID]
            lp = continuation_logp_from(model, root, seq)
            scores.append(lp / (len(seq) ** len_norm))
        order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
        if order.index(cs.truth_index) < n:
            hits += 1
    return hits / len(candidate_sets)


def _ngram_counts(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses, references, max_n=4):
    """Corpus-level BLEU with brevity penalty, one reference per hypothesis.

    Modified n-gram precisions for n = 1..max_n enter a uniform geometric
    mean. Add-one smoothing applies to an order-n precision (n >= 2) only
    when its clipped match count is zero; order 1 is never smoothed, so
    fully disjoint unigrams give BLEU = 0. An order with no hypothesis
    n-grams at all contributes precision 1.
    """
    if len(hypotheses) != len(references):
        raise DataError("hypotheses and references must align one-to-one")
    if not hypotheses:
        raise DataError("empty corpus for BLEU")
    hyp_len = sum(len(h) for h in hypotheses)
    ref_len = sum(len(r) for r in references)
    if hyp_len == 0:
        return 0.0
    log_prec = 0.0
    for n in range(1, max_n + 1):
        matched = 0
        total = 0
        for hyp, ref in zip(hypotheses, references):
            hc = _ngram_counts(hyp, n)
            rc = _ngram_counts(ref, n)
            total += max(len(hyp) - n + 1, 0)
            matched += sum(min(c, rc[g]) for g, c in hc.items())
        if total == 0:
            precision = 1.0
        elif matched == 0:
            if n == 1:
                return 0.0
            precision = 1.0 / (total + 1.0)
        else:
            precision = matched / total
        log_prec += math.log(precision) / max_n
    brevity = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return brevity * math.exp(log_prec)


def distinct_1(generations):
    """Distinct unigrams across all generations over total generated tokens."""
    total = sum(len(g) for g in generations)
    if total == 0:
        raise DataError("no generated tokens")
    distinct = len({tok for g in generations for tok in g})
    return distinct / total
