"""Vocabularies, byte-pair encoding, and spelling tables.

BPE follows the classic greedy recipe: words are character sequences whose
last character carries an end-of-word marker, and the most frequent
adjacent symbol pair is merged repeatedly. A merge count of 0 therefore
segments every word into characters; "word" mode bypasses BPE entirely.
"""

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<s>", "</s>")

EOW = "</w>"          # end-of-word marker used while learning/applying merges
CONT_MARKER = "@@"    # continuation marker on non-final subword pieces

# character-vocabulary specials
CPAD, CUNK, CBOW, CEOW, CCONT = 0, 1, 2, 3, 4
CHAR_RESERVED = ("<cpad>", "<cunk>", "<w>", "</w>", "<cont>")

MIN_SPELLING_LEN = 6  # widest composer kernel


class CorpusError(ValueError):
    pass


class Vocabulary:
    """Bijective type<->id map with ids 0..3 reserved for PAD/UNK/BOS/EOS.

    Non-reserved ids are ordered by descending frequency, ties broken
    lexicographically.
    """

    def __init__(self, types, freqs):
        self.itos = list(RESERVED) + list(types)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise CorpusError("duplicate types in vocabulary")
        self.freqs = dict(freqs)

    def __len__(self):
        return len(self.itos)

    def lookup(self, token):
        return self.stoi.get(token, UNK)

    def encode(self, tokens):
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids):
        return [self.itos[i] for i in ids]

    def is_reserved(self, idx):
        return idx < len(RESERVED)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.itos[len(RESERVED):]:
                fh.write(f"{t}\t{self.freqs.get(t, 0)}\n")

    @classmethod
    def load(cls, path):
        types, freqs = [], {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                t, f = line.split("\t")
                types.append(t)
                freqs[t] = int(f)
        return cls(types, freqs)


def build_vocab(tokens, max_size=None):
    """Keep the `max_size` most frequent types; everything else maps to UNK."""
    counts = Counter(tokens)
    if not counts:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if max_size is not None:
        ordered = ordered[:max_size]
    return Vocabulary([t for t, _ in ordered], dict(ordered))


# ---------------------------------------------------------------------------
# BPE


@dataclass
class BpeModel:
    merges: list = field(default_factory=list)  # ordered (left, right) pairs

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for left, right in self.merges:
                fh.write(f"{left} {right}\n")

    @classmethod
    def load(cls, path):
        merges = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                left, right = line.split(" ")
                merges.append((left, right))
        return cls(merges)


def _word_symbols(word):
    """Character tuple with the end-of-word marker on the last character."""
    chars = list(word)
    chars[-1] = chars[-1] + EOW
    return tuple(chars)


def _merge_word(symbols, pair, joined):
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i < n - 1 and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(joined)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def _pair_counts_of(symbols):
    return Counter(zip(symbols, symbols[1:]))


def learn_bpe(tokens, num_merges, return_state=False):
    """Learn `num_merges` greedy merges over a token stream.

    Ties on pair frequency break toward the lexicographically smallest
    pair; learning stops early once no pair occurs at least twice.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    word_freq = Counter(tokens)
    words = {w: _word_symbols(w) for w in word_freq}

    pair_counts = Counter()
    pair_words = {}  # pair -> set of words currently containing it
    for w, syms in words.items():
        for pair, k in _pair_counts_of(syms).items():
            pair_counts[pair] += k * word_freq[w]
            pair_words.setdefault(pair, set()).add(w)

    merges = []
    for _ in range(num_merges):
        if not pair_counts:
            break
        best = min(pair_counts, key=lambda p: (-pair_counts[p], p))
        if pair_counts[best] < 2:
            break
        merges.append(best)
        joined = best[0] + best[1]
        for w in list(pair_words.get(best, ())):
            old = words[w]
            new = _merge_word(old, best, joined)
            words[w] = new
            freq = word_freq[w]
            old_pairs = _pair_counts_of(old)
            new_pairs = _pair_counts_of(new)
            for pair in old_pairs.keys() | new_pairs.keys():
                delta = new_pairs.get(pair, 0) - old_pairs.get(pair, 0)
                if delta:
                    pair_counts[pair] += delta * freq
                    if pair_counts[pair] <= 0:
                        del pair_counts[pair]
                if new_pairs.get(pair, 0):
                    pair_words.setdefault(pair, set()).add(w)
                elif pair in pair_words:
                    pair_words[pair].discard(w)

    model = BpeModel(merges)
    if return_state:
        return model, dict(words)
    return model


def segment_word(model, word, _cache=None):
    """Subword pieces for one word, continuation-marked except the last."""
    if _cache is not None and word in _cache:
        return _cache[word]
    symbols = _word_symbols(word)
    for pair in model.merges:
        if len(symbols) == 1:
            break
        symbols = _merge_word(symbols, pair, pair[0] + pair[1])
    pieces = []
    for i, sym in enumerate(symbols):
        surface = sym[:-len(EOW)] if sym.endswith(EOW) else sym
        if i < len(symbols) - 1:
            surface += CONT_MARKER
        pieces.append(surface)
    if _cache is not None:
        _cache[word] = pieces
    return pieces


def apply_bpe(model, line, _cache=None):
    """Segment a whitespace-tokenized line, replaying merges in learned order."""
    out = []
    for word in line.split():
        out.extend(segment_word(model, word, _cache))
    return " ".join(out)


def apply_bpe_corpus(model, lines):
    cache = {}
    return [apply_bpe(model, line, cache) for line in lines]


def undo_bpe(line):
    """Rejoin continuation-marked pieces; inverse of apply_bpe for clean text."""
    joined = line.replace(CONT_MARKER + " ", "")
    if joined.endswith(CONT_MARKER):
        joined = joined[: -len(CONT_MARKER)]
    return joined


# ---------------------------------------------------------------------------
# spellings


class CharVocabulary:
    """Character<->id map with PAD/UNK/begin/end/continuation specials."""

    def __init__(self, chars, freqs=None):
        self.itos = list(CHAR_RESERVED) + list(chars)
        self.stoi = {c: i for i, c in enumerate(self.itos)}
        self.freqs = dict(freqs or {})

    def __len__(self):
        return len(self.itos)

    def lookup(self, ch):
        return self.stoi.get(ch, CUNK)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for c in self.itos[len(CHAR_RESERVED):]:
                fh.write(f"{c}\t{self.freqs.get(c, 0)}\n")

    @classmethod
    def load(cls, path):
        chars, freqs = [], {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                c, f = line.split("\t")
                chars.append(c)
                freqs[c] = int(f)
        return cls(chars, freqs)


def build_char_vocab(vocab):
    """Character inventory of a vocabulary's surface pieces (markers excluded)."""
    counts = Counter()
    for idx, t in enumerate(vocab.itos):
        if vocab.is_reserved(idx):
            continue
        surface = t[:-len(CONT_MARKER)] if t.endswith(CONT_MARKER) else t
        counts.update(surface)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return CharVocabulary([c for c, _ in ordered], dict(ordered))


class SpellingTable:
    """Per-type padded character-id rows framing each spelling with <w>...</w>.

    A non-final subword piece ("po@@") keeps its surface characters and gets
    the continuation-flag character appended before </w>, so the composer can
    tell prefix pieces from whole words. Reserved types get the bare two-symbol
    frame and are flagged non-compositional. Every row has length
    max(char_count + 2, 6), the widest kernel.
    """

    def __init__(self, rows, non_compositional, char_vocab):
        self.rows = rows
        self.non_compositional = np.asarray(non_compositional, dtype=bool)
        self.char_vocab = char_vocab
        self.row_lengths = np.array([len(r) for r in rows], dtype=np.int64)
        self._padded = None

    def __len__(self):
        return len(self.rows)

    def padded_matrix(self):
        """All rows right-padded with PAD-char to the table-wide maximum."""
        if self._padded is None:
            width = int(self.row_lengths.max())
            mat = np.full((len(self.rows), width), CPAD, dtype=np.int64)
            for i, row in enumerate(self.rows):
                mat[i, : len(row)] = row
            self._padded = mat
        return self._padded


def spelling_row(token, char_vocab, reserved=False):
    if reserved:
        syms = [CBOW, CEOW]
    else:
        surface = token
        cont = surface.endswith(CONT_MARKER)
        if cont:
            surface = surface[: -len(CONT_MARKER)]
        syms = [CBOW] + [char_vocab.lookup(c) for c in surface]
        if cont:
            syms.append(CCONT)
        syms.append(CEOW)
    target = max(len(syms), MIN_SPELLING_LEN)
    return np.array(syms + [CPAD] * (target - len(syms)), dtype=np.int64)


def spellings(vocab, char_vocab):
    """SpellingTable covering every type of `vocab`."""
    rows, flags = [], []
    for idx, t in enumerate(vocab.itos):
        reserved = vocab.is_reserved(idx)
        rows.append(spelling_row(t, char_vocab, reserved=reserved))
        flags.append(reserved)
    return SpellingTable(rows, flags, char_vocab)
