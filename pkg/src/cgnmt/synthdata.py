"""Synthetic corpora for desk-scale experiments.

Two generators: a copy task (source repeated verbatim on the target side)
and a directional-morphology language where each target word is a lemma
inflected by one of eight productive suffixes, selected on the source side
by a separate tag token. A controlled share of lemma+suffix combinations
is held out of training, so the test set probes whether a model can score
forms it never observed but whose parts it has.
"""

from dataclasses import dataclass

import numpy as np

CONSONANTS = "bdfgklmnprstvz"
VOWELS = "aeiou"

SUFFIXES = ("an", "il", "or", "esk", "um", "yt", "osh", "ame")
TAGS = ("PST", "FUT", "PL", "NEG", "COND", "CAUS", "QST", "HAB")


def copy_corpus(n_sentences=100, vocab_size=20, min_len=2, max_len=7, seed=7):
    """Fixed copy corpus: the target repeats the source."""
    rng = np.random.default_rng(seed)
    words = [f"tok{i:02d}" for i in range(vocab_size)]
    lines = []
    for _ in range(n_sentences):
        length = int(rng.integers(min_len, max_len + 1))
        lines.append(" ".join(words[i] for i in rng.integers(0, vocab_size, size=length)))
    return lines, list(lines)


def _make_lemmas(n, rng):
    lemmas = set()
    while len(lemmas) < n:
        syllables = int(rng.integers(2, 4))
        word = "".join(
            CONSONANTS[rng.integers(len(CONSONANTS))] + VOWELS[rng.integers(len(VOWELS))]
            for _ in range(syllables)
        )
        lemmas.add(word)
    return sorted(lemmas)


@dataclass
class MorphologyCorpus:
    train_src: list
    train_tgt: list
    test_src: list
    test_tgt: list
    lexicon: list          # every valid inflected form
    seen_combos: set       # (lemma, suffix index) observed in training
    unseen_combos: set     # held out of training, present in test
    test_combos: set       # distinct combos occurring in the test set


def morphology_corpus(n_lemmas=30, n_train=2000, n_test=200, unseen_fraction=0.30,
                      min_units=3, max_units=5, zipf_exponent=1.1, seed=11):
    """Source 'lemma TAG' units map to inflected 'lemma+suffix' target words.

    Training exposure over the seen combinations is Zipfian, so a long tail
    of inflected forms occurs only a handful of times; the sparsity of their
    standard softmax rows is exactly what spelling composition is meant to
    absorb. Of the distinct combinations in the test inventory, 30% never
    occur in training at all. Sentences carry several units so corpus BLEU
    has 4-gram support.
    """
    rng = np.random.default_rng(seed)
    lemmas = _make_lemmas(n_lemmas, rng)
    combos = [(lemma, k) for lemma in lemmas for k in range(len(SUFFIXES))]
    order = rng.permutation(len(combos))
    test_inventory = 100  # distinct combos the test set draws from
    n_unseen = int(round(unseen_fraction * test_inventory))
    test_combo_ids = order[:test_inventory]
    unseen_ids = set(test_combo_ids[:n_unseen].tolist())
    seen_ids = np.array([i for i in range(len(combos)) if i not in unseen_ids])

    # Zipfian exposure over a shuffled rank assignment of the seen combos
    ranks = rng.permutation(len(seen_ids)) + 1
    weights = 1.0 / ranks.astype(np.float64) ** zipf_exponent
    weights /= weights.sum()

    def render(combo):
        lemma, k = combo
        return f"{lemma} {TAGS[k]}", lemma + SUFFIXES[k]

    def sentence(combo_ids, probs=None, must_include=None):
        n_units = int(rng.integers(min_units, max_units + 1))
        picks = list(rng.choice(combo_ids, size=n_units, p=probs))
        if must_include is not None:
            picks[int(rng.integers(0, n_units))] = must_include
        src_parts, tgt_parts = [], []
        for cid in picks:
            s, t = render(combos[int(cid)])
            src_parts.append(s)
            tgt_parts.append(t)
        return " ".join(src_parts), " ".join(tgt_parts)

    train_src, train_tgt = [], []
    for _ in range(n_train):
        s, t = sentence(seen_ids, probs=weights)
        train_src.append(s)
        train_tgt.append(t)

    test_pool = np.array(test_combo_ids)
    test_src, test_tgt = [], []
    for i in range(n_test):
        # cycle the pool first so every test combo occurs at least once
        must = int(test_pool[i]) if i < len(test_pool) else None
        s, t = sentence(test_pool, must_include=must)
        test_src.append(s)
        test_tgt.append(t)

    lexicon = [lemma + SUFFIXES[k] for lemma, k in combos]
    seen = {combos[int(i)] for i in seen_ids}
    unseen = {combos[i] for i in unseen_ids}
    test_combos = {combos[int(i)] for i in test_pool}
    return MorphologyCorpus(train_src, train_tgt, test_src, test_tgt,
                            lexicon, seen, unseen, test_combos)
