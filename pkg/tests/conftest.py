"""Shared test helpers: independent metric oracles kept deliberately
separate from the package implementations they check."""

import math


def bleu_oracle(hyps, refs, max_n=4):
    """Independent corpus BLEU: same published definition and the same
    documented smoothing convention, different counting structure."""
    import functools
    import operator

    precisions = []
    for n in range(1, max_n + 1):
        match, total = 0, 0
        for hyp, ref in zip(hyps, refs):
            grams = {}
            for i in range(len(hyp) - n + 1):
                g = tuple(hyp[i:i + n])
                grams[g] = grams.get(g, 0) + 1
            limits = {}
            for i in range(len(ref) - n + 1):
                g = tuple(ref[i:i + n])
                limits[g] = limits.get(g, 0) + 1
            for g, c in grams.items():
                match += min(c, limits.get(g, 0))
            total += max(len(hyp) - n + 1, 0)
        if total == 0:
            precisions.append(1.0)
        elif match == 0:
            if n == 1:
                return 0.0
            precisions.append(1.0 / (total + 1))
        else:
            precisions.append(match / total)
    geo = functools.reduce(operator.mul, precisions) ** (1.0 / max_n)
    h = sum(len(x) for x in hyps)
    r = sum(len(x) for x in refs)
    bp = 1.0 if h > r else math.exp(1.0 - r / h)
    return bp * geo
