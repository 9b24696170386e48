"""Vocabulary, BPE learn/apply/undo, and spelling-table contracts."""

from collections import Counter

import numpy as np
import pytest

from cgnmt.subword import (BOS, CBOW, CCONT, CEOW, CPAD, CUNK, EOS, PAD, UNK,
                           BpeModel, CharVocabulary, CorpusError, Vocabulary,
                           apply_bpe, build_char_vocab, build_vocab, learn_bpe,
                           segment_word, spelling_row, spellings, undo_bpe)

from helpers import naive_learn_bpe, naive_segment, random_corpus


class TestVocabulary:
    def test_basic_counts(self):
        v = build_vocab("a a b".split(), 10)
        assert v.freqs["a"] == 2 and v.freqs["b"] == 1
        assert v.lookup("a") == 4  # after the four reserved ids
        assert v.lookup("zzz") == UNK

    def test_truncation_to_unk(self):
        v = build_vocab("a a b".split(), 1)
        assert "a" in v.stoi and "b" not in v.stoi
        assert v.lookup("b") == UNK

    def test_reserved_ids_fixed(self):
        v = build_vocab(["x"], 10)
        assert v.itos[:4] == ["<pad>", "<unk>", "<s>", "</s>"]
        assert (PAD, UNK, BOS, EOS) == (0, 1, 2, 3)

    def test_frequency_order_with_lexicographic_ties(self):
        v = build_vocab("b b a a c".split(), 10)
        assert v.itos[4:] == ["a", "b", "c"]

    def test_top_k_matches_counter_oracle(self):
        rng = np.random.default_rng(0)
        tokens = [f"w{i}" for i in rng.integers(0, 60, size=1000)]
        v = build_vocab(tokens, 25)
        counts = Counter(tokens)
        expected = sorted(counts, key=lambda w: (-counts[w], w))[:25]
        assert v.itos[4:] == expected

    def test_empty_corpus(self):
        with pytest.raises(CorpusError):
            build_vocab([], 10)

    def test_file_roundtrip(self, tmp_path):
        v = build_vocab("the cat sat on the mat".split(), 100)
        path = tmp_path / "vocab.tsv"
        v.save(path)
        v2 = Vocabulary.load(path)
        assert v2.itos == v.itos and v2.freqs == v.freqs


class TestLearnBpe:
    def test_zero_merges(self):
        assert learn_bpe("low low".split(), 0).merges == []

    def test_first_merge_matches_bruteforce_count(self):
        tokens = "low low lowest".split()
        model = learn_bpe(tokens, 1)
        # exhaustive pair count over {l,o,w,e,s,t</w>,w</w>}
        counts = Counter()
        for word, freq in Counter(tokens).items():
            syms = list(word)
            syms[-1] += "</w>"
            for pair in zip(syms, syms[1:]):
                counts[pair] += freq
        best_count = max(counts.values())
        best = min(p for p, c in counts.items() if c == best_count)
        assert model.merges == [best]

    def test_matches_naive_reference_exactly(self):
        rng = np.random.default_rng(1)
        for trial in range(100):
            words = random_corpus(rng)
            n = int(rng.integers(0, 21))
            model = learn_bpe(words, n)
            ref_merges, _ = naive_learn_bpe(words, n)
            assert model.merges == ref_merges, f"trial {trial} diverged at n={n}"

    def test_early_stop_below_two(self):
        model = learn_bpe(["ab"], 10)
        assert model.merges == []  # every pair occurs once

    def test_deterministic(self):
        words = random_corpus(np.random.default_rng(2))
        assert learn_bpe(words, 10).merges == learn_bpe(words, 10).merges

    def test_final_state_matches_replay(self):
        rng = np.random.default_rng(3)
        words = random_corpus(rng, n_words=40)
        model, state = learn_bpe(words, 15, return_state=True)
        for word in set(words):
            replayed = segment_word(model, word)
            # strip markers back to learner symbols
            symbols = []
            for i, piece in enumerate(replayed):
                if piece.endswith("@@"):
                    symbols.append(piece[:-2])
                else:
                    symbols.append(piece + "</w>")
            assert tuple(symbols) == state[word]

    def test_model_file_roundtrip(self, tmp_path):
        model = learn_bpe("low low lowest lower".split(), 5)
        path = tmp_path / "merges.txt"
        model.save(path)
        assert BpeModel.load(path).merges == model.merges


class TestApplyBpe:
    def test_empty_model_gives_characters(self):
        assert apply_bpe(BpeModel([]), "cat") == "c@@ a@@ t"

    def test_inapplicable_merges_leave_characters(self):
        model = BpeModel([("x", "y")])
        assert apply_bpe(model, "cat") == "c@@ a@@ t"

    def test_segmentations_match_naive_reference(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            words = random_corpus(rng, n_words=30)
            n = int(rng.integers(0, 21))
            model = learn_bpe(words, n)
            ref_merges, _ = naive_learn_bpe(words, n)
            for word in set(words):
                assert segment_word(model, word) == naive_segment(ref_merges, word)

    def test_pieces_derivable_from_merges_plus_characters(self):
        rng = np.random.default_rng(5)
        words = random_corpus(rng, n_words=40)
        model = learn_bpe(words, 12)
        derivable = set()
        for w in set(words):
            for ch in w[:-1]:
                derivable.add(ch)
            derivable.add(w[-1] + "</w>")
        for left, right in model.merges:
            derivable.add(left + right)
        for word in set(words):
            for piece in segment_word(model, word):
                if piece.endswith("@@"):
                    assert piece[:-2] in derivable
                else:
                    assert piece + "</w>" in derivable

    def test_monotone_piece_counts_across_merge_sweep(self):
        rng = np.random.default_rng(6)
        words = random_corpus(rng, n_words=40)
        previous = None
        for n in range(0, 15):
            model = learn_bpe(words, n)
            counts = {w: len(segment_word(model, w)) for w in set(words)}
            if previous is not None:
                assert all(counts[w] <= previous[w] for w in counts)
            previous = counts


class TestUndoBpe:
    def test_simple_join(self):
        assert undo_bpe("c@@ a@@ t") == "cat"

    def test_no_markers_untouched(self):
        assert undo_bpe("hello world") == "hello world"

    def test_roundtrip_identity_on_random_sentences(self):
        rng = np.random.default_rng(7)
        words = random_corpus(rng, n_words=200, max_len=8)
        model = learn_bpe(words, 10)
        for _ in range(1000):
            k = int(rng.integers(1, 9))
            sentence = " ".join(words[i] for i in rng.integers(0, len(words), size=k))
            assert undo_bpe(apply_bpe(model, sentence)) == sentence


class TestSpellings:
    def _vocab(self, tokens):
        v = build_vocab(tokens, 100)
        return v, build_char_vocab(v)

    def test_cat_padded_to_six(self):
        v, cv = self._vocab(["cat"])
        row = spelling_row("cat", cv)
        assert len(row) == 6
        assert row[0] == CBOW and row[4] == CEOW and row[5] == CPAD
        decoded = [cv.itos[i] for i in row[1:4]]
        assert decoded == ["c", "a", "t"]

    def test_unknown_character_maps_to_unk(self):
        v, cv = self._vocab(["aa"])  # only 'a' in the char inventory
        row = spelling_row("ab", cv)
        assert row[1] == cv.lookup("a") and row[2] == CUNK
        assert row[3] == CEOW and row[4] == CPAD and row[5] == CPAD

    def test_row_length_rule_on_random_vocab(self):
        rng = np.random.default_rng(8)
        words = random_corpus(rng, n_words=60, max_len=12)
        v, cv = self._vocab(words)
        table = spellings(v, cv)
        for idx, token in enumerate(v.itos):
            if v.is_reserved(idx):
                assert table.row_lengths[idx] == 6
                continue
            n_chars = len(token[:-2]) + 1 if token.endswith("@@") else len(token)
            assert table.row_lengths[idx] == max(n_chars + 2, 6)

    def test_reserved_rows_flagged_and_framed(self):
        v, cv = self._vocab(["cat"])
        table = spellings(v, cv)
        assert table.non_compositional[:4].all()
        assert not table.non_compositional[4:].any()
        np.testing.assert_array_equal(table.rows[0][:2], [CBOW, CEOW])

    def test_continuation_piece_gets_flag_char(self):
        v, cv = self._vocab(["po@@", "po"])
        row = spelling_row("po@@", cv)
        assert row[3] == CCONT and row[4] == CEOW
        whole = spelling_row("po", cv)
        assert not np.array_equal(row, whole)

    def test_markers_frame_exactly_once(self):
        rng = np.random.default_rng(9)
        words = random_corpus(rng, n_words=40)
        v, cv = self._vocab(words)
        table = spellings(v, cv)
        for row, length in zip(table.rows, table.row_lengths):
            assert (row == CBOW).sum() == 1
            assert (row == CEOW).sum() == 1
            assert row[0] == CBOW

    def test_decoding_reproduces_surface(self):
        v, cv = self._vocab(["hello", "spell"])
        table = spellings(v, cv)
        idx = v.lookup("hello")
        row = table.rows[idx]
        chars = [cv.itos[i] for i in row if i not in (CPAD, CBOW, CEOW, CCONT)]
        assert "".join(chars) == "hello"

    def test_char_vocab_file_roundtrip(self, tmp_path):
        v, cv = self._vocab(["abc", "bcd"])
        path = tmp_path / "chars.tsv"
        cv.save(path)
        cv2 = CharVocabulary.load(path)
        assert cv2.itos == cv.itos
