"""Morphological-complexity features and the feature-augmented regression.

Corpus-dependent features: type-token ratio, word entropy (natural log),
and a word-alignment score comparing many-to-one against one-to-many link
counts. Corpus-independent features come from a UniMorph-style lexicon:
the number of distinct tags and of distinct tag combinations. A ridge
regression with a shared feature block plus one block per language relates
these features to the relative BLEU gain of the character-aware model.
"""

from collections import Counter
from dataclasses import dataclass

import numpy as np

FEATURE_NAMES = ("TT", "A", "H", "UT", "UTC")


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------------------
# corpus-dependent features


def type_token_ratio(tokens):
    tokens = list(tokens)
    if not tokens:
        raise AnalysisError("type_token_ratio: empty corpus")
    return len(set(tokens)) / len(tokens)


def word_entropy(tokens):
    """-sum p(v) ln p(v) over empirical unigram frequencies."""
    counts = Counter(tokens)
    total = sum(counts.values())
    if total == 0:
        raise AnalysisError("word_entropy: empty corpus")
    p = np.array(list(counts.values()), dtype=np.float64) / total
    return float(-(p * np.log(p)).sum())


def _classify_links(links):
    """Per link: (is many-to-one, is one-to-many) by word fertilities."""
    src_deg = Counter(i for i, _ in links)
    tgt_deg = Counter(j for _, j in links)
    return [(tgt_deg[j] >= 2, src_deg[i] >= 2) for i, j in links]


def alignment_score(alignments):
    """(many-to-one links - one-to-many links) / all links.

    `alignments` is an iterable of per-sentence link sets {(src, tgt), ...};
    fertilities are counted within each sentence. A link may be both
    many-to-one and one-to-many and then contributes to both counts.
    """
    m2o = o2m = total = 0
    for links in alignments:
        for is_m2o, is_o2m in _classify_links(links):
            m2o += is_m2o
            o2m += is_o2m
            total += 1
    if total == 0:
        raise AnalysisError("alignment_score: no links")
    return (m2o - o2m) / total


def symmetrize_gdfa(forward, backward):
    """Grow-diag-final-and symmetrization of two directional alignments.

    Starts from the intersection, grows with union links 8-adjacent to an
    aligned word when one of their words is still unaligned, then adds
    union links whose words are both unaligned.
    """
    out = []
    for fwd, bwd in zip(forward, backward):
        fwd, bwd = set(fwd), set(bwd)
        union = fwd | bwd
        aligned = set(fwd & bwd)
        src_done = {i for i, _ in aligned}
        tgt_done = {j for _, j in aligned}

        grew = True
        while grew:
            grew = False
            for i, j in sorted(aligned):
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        if di == 0 and dj == 0:
                            continue
                        cand = (i + di, j + dj)
                        if cand in union and cand not in aligned and (
                            cand[0] not in src_done or cand[1] not in tgt_done
                        ):
                            aligned.add(cand)
                            src_done.add(cand[0])
                            tgt_done.add(cand[1])
                            grew = True

        for i, j in sorted(union):
            if i not in src_done and j not in tgt_done:
                aligned.add((i, j))
                src_done.add(i)
                tgt_done.add(j)
        out.append(aligned)
    return out


def read_pharaoh(lines):
    """Parse 'i-j' link pairs, one sentence per line, 0-indexed."""
    out = []
    for line in lines:
        links = set()
        for tok in line.split():
            i, _, j = tok.partition("-")
            links.add((int(i), int(j)))
        out.append(links)
    return out


# ---------------------------------------------------------------------------
# corpus-independent features


@dataclass
class UniMorphLexicon:
    entries: list  # (lemma, form, frozenset of tags)
    skipped: int = 0


def read_unimorph(lines):
    """3-column TSV: lemma, inflected form, semicolon-joined tags."""
    entries = []
    skipped = 0
    for line in lines:
        line = line.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3 or not all(p.strip() for p in parts):
            skipped += 1
            continue
        lemma, form, tags = parts
        tagset = frozenset(t for t in tags.split(";") if t)
        if not tagset:
            skipped += 1
            continue
        entries.append((lemma, form, tagset))
    return UniMorphLexicon(entries, skipped)


def unimorph_stats(lexicon):
    """(distinct tag count UT, distinct tag-combination count UTC)."""
    if not lexicon.entries:
        raise AnalysisError("unimorph_stats: empty lexicon")
    tags = set()
    combos = set()
    for _, _, tagset in lexicon.entries:
        tags |= tagset
        combos.add(tagset)
    return len(tags), len(combos)


# ---------------------------------------------------------------------------
# correlation and regression


def pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise AnalysisError("pearson: need two equal-length vectors of >= 2 points")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0:
        raise AnalysisError("pearson: zero variance")
    return float((xc * yc).sum() / denom)


def relative_gain(bleu_cg, bleu_std):
    if bleu_std <= 0:
        raise AnalysisError("relative_gain: baseline BLEU must be positive")
    return (bleu_cg - bleu_std) / bleu_std


def min_max_normalize(x):
    """Columnwise (x - min) / (max - min); constant columns map to 0."""
    x = np.asarray(x, dtype=np.float64)
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (x - lo) / span


@dataclass
class FeatureTable:
    langs: list            # language per row (may repeat)
    x: np.ndarray          # [n, F] feature values
    y: np.ndarray          # [n] relative BLEU gains
    feature_names: tuple = FEATURE_NAMES

    def normalized(self):
        return FeatureTable(self.langs, min_max_normalize(self.x), self.y, self.feature_names)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("lang\t" + "\t".join(self.feature_names) + "\tgain\n")
            for lang, row, gain in zip(self.langs, self.x, self.y):
                cells = "\t".join(f"{v:.6g}" for v in row)
                fh.write(f"{lang}\t{cells}\t{gain:.6g}\n")

    @classmethod
    def load(cls, path):
        langs, rows, gains = [], [], []
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split("\t")
            names = tuple(header[1:-1])
            for line in fh:
                parts = line.rstrip("\n").split("\t")
                if len(parts) != len(header):
                    continue
                langs.append(parts[0])
                rows.append([float(v) for v in parts[1:-1]])
                gains.append(float(parts[-1]))
        return cls(langs, np.array(rows, dtype=np.float64), np.array(gains, dtype=np.float64), names)


@dataclass
class RegressionModel:
    phi_all: np.ndarray          # [F] general weights
    phi_lang: dict               # language -> [F] language-specific weights
    lam: float
    feature_names: tuple

    def predict(self, lang, x):
        x = np.asarray(x, dtype=np.float64)
        return float(self.phi_all @ x + self.phi_lang[lang] @ x)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("lang\t" + "\t".join(self.feature_names) + "\n")
            cells = "\t".join(f"{v:.6g}" for v in self.phi_all)
            fh.write(f"ALL\t{cells}\n")
            for lang, w in self.phi_lang.items():
                cells = "\t".join(f"{v:.6g}" for v in w)
                fh.write(f"{lang}\t{cells}\n")


def augmented_design(table):
    """Stacked design matrix: [general block | one block per language]."""
    langs = list(dict.fromkeys(table.langs))  # order of first appearance
    n, f = table.x.shape
    z = np.zeros((n, f * (1 + len(langs))), dtype=np.float64)
    z[:, :f] = table.x
    for row, lang in enumerate(table.langs):
        k = langs.index(lang)
        z[row, f * (k + 1): f * (k + 2)] = table.x[row]
    return z, langs


def fit_feature_augmented_ridge(table, lam=0.05):
    """Ridge over the language-augmented design, solved as least squares.

    Minimizes sum (y - y~)^2 + lam * ||phi||^2 via the stacked system
    [Z; sqrt(lam) I] phi = [y; 0].
    """
    if lam <= 0:
        raise AnalysisError("ridge penalty must be positive for a guaranteed solve")
    if len(set(table.langs)) < 1:
        raise AnalysisError("need at least one language")
    z, langs = augmented_design(table)
    n, p = z.shape
    a = np.vstack([z, np.sqrt(lam) * np.eye(p)])
    b = np.concatenate([table.y, np.zeros(p)])
    phi, *_ = np.linalg.lstsq(a, b, rcond=None)
    f = table.x.shape[1]
    phi_all = phi[:f]
    phi_lang = {lang: phi[f * (k + 1): f * (k + 2)] for k, lang in enumerate(langs)}
    return RegressionModel(phi_all, phi_lang, lam, table.feature_names)


def ridge_objective(model, table):
    """The regularized objective value at the fitted (or any) weights."""
    sq = 0.0
    for lang, x, y in zip(table.langs, table.x, table.y):
        sq += (y - model.predict(lang, x)) ** 2
    reg = float(model.phi_all @ model.phi_all)
    for w in model.phi_lang.values():
        reg += float(w @ w)
    return sq + model.lam * reg
