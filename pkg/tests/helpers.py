"""Shared test oracles: finite differences, a naive BPE reference, fixtures.

These stay deliberately independent of the library code paths they check.
"""

from collections import Counter

import numpy as np

from cgnmt import autodiff as ad

FD_H = 1e-5
FD_TOL = 1e-4

# Central differences at h=1e-5 on a float64 loss carry ~1e-10 absolute
# roundoff; the floor keeps that noise from dominating the relative error
# on near-zero gradients, where the method itself cannot resolve better.
REL_FLOOR = 1e-5


def rel_err(a, b, floor=REL_FLOOR):
    return abs(a - b) / max(floor, abs(a), abs(b))


def finite_diff_check(loss_fn, tensors, rng, n_coords=20, h=FD_H, tol=FD_TOL):
    """Central finite differences against tape gradients on random coordinates.

    `loss_fn` rebuilds the forward pass from the current tensor values and
    returns a scalar Tensor. Asserts the max relative error stays below tol.
    """
    with ad.Tape():
        loss = loss_fn()
        ad.backward(loss)
    grads = {id(t): np.array(t.grad, copy=True) for t in tensors}
    for t in tensors:
        t.grad = None
    worst = 0.0
    for t in tensors:
        flat = t.data.reshape(-1)
        n = min(n_coords, flat.size)
        coords = rng.choice(flat.size, size=n, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = float(loss_fn().data)
            flat[c] = orig - h
            down = float(loss_fn().data)
            flat[c] = orig
            numeric = (up - down) / (2 * h)
            analytic = float(grads[id(t)].reshape(-1)[c])
            worst = max(worst, rel_err(analytic, numeric))
    assert worst < tol, f"finite-difference check failed: max rel err {worst:.3e}"
    return worst


# ---------------------------------------------------------------------------
# naive quadratic BPE reference (recounts everything every iteration)


def naive_word_symbols(word):
    chars = list(word)
    chars[-1] += "</w>"
    return tuple(chars)


def naive_merge(symbols, pair):
    merged = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == pair:
            merged.append(symbols[i] + symbols[i + 1])
            i += 2
        else:
            merged.append(symbols[i])
            i += 1
    return tuple(merged)


def naive_learn_bpe(tokens, num_merges):
    """Reference learner: full pair recount each round, lexicographic ties."""
    word_freq = Counter(tokens)
    words = {w: naive_word_symbols(w) for w in word_freq}
    merges = []
    for _ in range(num_merges):
        pair_counts = Counter()
        for w, syms in words.items():
            for a, b in zip(syms, syms[1:]):
                pair_counts[(a, b)] += word_freq[w]
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        if best_count < 2:
            break
        best = min(p for p, c in pair_counts.items() if c == best_count)
        merges.append(best)
        words = {w: naive_merge(syms, best) for w, syms in words.items()}
    return merges, words


def naive_segment(merges, word):
    symbols = naive_word_symbols(word)
    for pair in merges:
        symbols = naive_merge(symbols, pair)
    pieces = []
    for i, sym in enumerate(symbols):
        surface = sym[:-4] if sym.endswith("</w>") else sym
        if i < len(symbols) - 1:
            surface += "@@"
        pieces.append(surface)
    return pieces


def random_corpus(rng, n_words=50, alphabet="abcdef", max_len=6):
    words = []
    for _ in range(n_words):
        length = int(rng.integers(1, max_len + 1))
        words.append("".join(alphabet[i] for i in rng.integers(0, len(alphabet), size=length)))
    return words
