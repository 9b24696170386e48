"""Corpus-level BLEU-4 with brevity penalty and no smoothing.

Score = 100 * BP * exp(mean of log modified n-gram precisions, n = 1..4),
with BP = exp(min(0, 1 - r/c)). Any zero precision short-circuits to 0.
Hypotheses and references must have BPE markers undone beforehand.
"""

import math
from collections import Counter


class BleuError(ValueError):
    pass


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references, lowercase=True):
    """Corpus BLEU in [0, 100] for parallel lists of sentence strings."""
    if len(hypotheses) != len(references):
        raise BleuError(
            f"line-count mismatch: {len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if not references:
        raise BleuError("empty reference set")
    matched = [0] * 4
    totals = [0] * 4
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        if lowercase:
            hyp, ref = hyp.lower(), ref.lower()
        h, r = hyp.split(), ref.split()
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, 5):
            h_counts = _ngrams(h, n)
            r_counts = _ngrams(r, n)
            totals[n - 1] += sum(h_counts.values())
            matched[n - 1] += sum(min(c, r_counts[g]) for g, c in h_counts.items())
    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    for m, t in zip(matched, totals):
        if m == 0 or t == 0:
            return 0.0
        log_sum += math.log(m / t)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_sum / 4.0)
