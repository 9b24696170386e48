"""Operator surface: preprocessing, training, translation, scoring, analysis.

Every command that writes artifacts also writes a manifest recording the
command, resolved configuration, content digests of all inputs and outputs,
the seed, and wall-clock time. All randomness descends from the single
--seed flag; per-stage generators derive from it deterministically, so
re-running a command on the same inputs reproduces identical outputs.
"""

import argparse
import hashlib
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from . import analysis, training
from .bleu import bleu
from .subword import (BpeModel, CharVocabulary, Vocabulary, apply_bpe_corpus,
                      learn_bpe, spellings, undo_bpe)
from .training import (PreparedData, TrainConfig, load_checkpoint,
                       prepare_data, restore_model, select_model, train)

SWEEP_WORD = "word"


def read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def write_lines(path, lines):
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, command, seed=None, config_digest=None):
        self.command = command
        self.seed = seed
        self.config_digest = config_digest
        self.inputs = []
        self.outputs = []
        self.started = time.time()

    def add_input(self, path):
        if path and os.path.exists(path):
            self.inputs.append((path, sha256_file(path)))

    def add_output(self, path):
        self.outputs.append(path)

    def write(self, path):
        lines = [f"command = {self.command}"]
        if self.seed is not None:
            lines.append(f"seed = {self.seed}")
        if self.config_digest is not None:
            lines.append(f"config_digest = {self.config_digest}")
        lines.append(f"wall_clock_sec = {time.time() - self.started:.3f}")
        for p, d in self.inputs:
            lines.append(f"input {p} sha256 = {d}")
        for p in self.outputs:
            if os.path.exists(p):
                lines.append(f"output {p} sha256 = {sha256_file(p)}")
        write_lines(path, lines)


def worker_threads():
    try:
        return max(1, int(os.environ.get("CGNMT_THREADS", "1")))
    except ValueError:
        return 1


def _bool_flag(value):
    if value.lower() in ("true", "1", "yes"):
        return True
    if value.lower() in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {value!r}")


def load_config(args):
    config = TrainConfig.from_file(args.config) if getattr(args, "config", None) else TrainConfig()
    overrides = {}
    for flag, key in (
        ("mode", "mode"),
        ("side_override", "side_override"),
        ("bpe_merges", "bpe_merges"),
        ("batch_size", "batch_size"),
        ("beam", "beam"),
        ("sample_size", "sample_size"),
        ("seed", "seed"),
        ("max_epochs", "max_epochs"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return replace(config, **overrides) if overrides else config


# ---------------------------------------------------------------------------
# command implementations


def cmd_bpe_learn(args):
    tokens = [t for line in read_lines(args.input) for t in line.split()]
    model = learn_bpe(tokens, int(args.bpe_merges))
    model.save(args.out)
    manifest = Manifest("bpe-learn")
    manifest.add_input(args.input)
    manifest.add_output(args.out)
    manifest.write(args.out + ".manifest")
    print(f"learned {len(model.merges)} merges -> {args.out}")
    return 0


def cmd_bpe_apply(args):
    model = BpeModel.load(args.model)
    lines = apply_bpe_corpus(model, read_lines(args.input))
    write_lines(args.out, lines)
    manifest = Manifest("bpe-apply")
    manifest.add_input(args.model)
    manifest.add_input(args.input)
    manifest.add_output(args.out)
    manifest.write(args.out + ".manifest")
    return 0


def cmd_prepare(args):
    src = read_lines(args.src)
    tgt = read_lines(args.tgt)
    pairs = training.filter_corpus(src, tgt, args.max_src_len)
    os.makedirs(args.out_dir, exist_ok=True)
    src_out = os.path.join(args.out_dir, "filtered.src")
    tgt_out = os.path.join(args.out_dir, "filtered.tgt")
    write_lines(src_out, [s for s, _ in pairs])
    write_lines(tgt_out, [t for _, t in pairs])
    manifest = Manifest("prepare")
    manifest.add_input(args.src)
    manifest.add_input(args.tgt)
    manifest.add_output(src_out)
    manifest.add_output(tgt_out)
    manifest.write(os.path.join(args.out_dir, "manifest.txt"))
    print(f"kept {len(pairs)} of {len(src)} pairs")
    return 0


def run_training(config, train_src, train_tgt, val_src, val_tgt, out_dir,
                 bpe_model=None, tgt_lexicon=None, quiet=False):
    """Shared train-command / sweep path; returns (checkpoints, data)."""
    if bpe_model is not None:
        train_src = apply_bpe_corpus(bpe_model, train_src)
        train_tgt = apply_bpe_corpus(bpe_model, train_tgt)
        if val_src:
            val_src = apply_bpe_corpus(bpe_model, val_src)
            val_tgt = apply_bpe_corpus(bpe_model, val_tgt)
        if tgt_lexicon:
            tgt_lexicon = apply_bpe_corpus(bpe_model, tgt_lexicon)
    data = prepare_data(config, train_src, train_tgt, val_src, val_tgt,
                        tgt_lexicon=tgt_lexicon)
    os.makedirs(out_dir, exist_ok=True)
    config.save(os.path.join(out_dir, "config.txt"))
    data.src_vocab.save(os.path.join(out_dir, "vocab.src.tsv"))
    data.tgt_vocab.save(os.path.join(out_dir, "vocab.tgt.tsv"))
    data.char_vocab.save(os.path.join(out_dir, "chars.tgt.tsv"))
    if bpe_model is not None:
        bpe_model.save(os.path.join(out_dir, "bpe.merges"))
    log = None if quiet else (lambda msg: print(msg, file=sys.stderr))
    checkpoints = train(config, data, out_dir, log=log)
    return checkpoints, data


def cmd_train(args):
    config = load_config(args)
    manifest = Manifest("train", seed=config.seed, config_digest=config.digest())
    for path in (args.train_src, args.train_tgt, args.val_src, args.val_tgt,
                 args.bpe_model, args.tgt_lexicon):
        if path:
            manifest.add_input(path)
    bpe_model = BpeModel.load(args.bpe_model) if args.bpe_model else None
    lexicon = read_lines(args.tgt_lexicon) if args.tgt_lexicon else None
    checkpoints, _ = run_training(
        config,
        read_lines(args.train_src), read_lines(args.train_tgt),
        read_lines(args.val_src) if args.val_src else None,
        read_lines(args.val_tgt) if args.val_tgt else None,
        args.out_dir, bpe_model=bpe_model, tgt_lexicon=lexicon,
    )
    best = select_model(checkpoints)
    for c in checkpoints:
        manifest.add_output(c.path)
    manifest.write(os.path.join(args.out_dir, "manifest.txt"))
    print(f"best checkpoint: epoch {best.epoch} (val_acc {best.val_accuracy:.4f})")
    return 0


def load_run(model_dir, checkpoint=None):
    """Rebuild a trained model from a run directory."""
    config = TrainConfig.from_file(os.path.join(model_dir, "config.txt"))
    src_vocab = Vocabulary.load(os.path.join(model_dir, "vocab.src.tsv"))
    tgt_vocab = Vocabulary.load(os.path.join(model_dir, "vocab.tgt.tsv"))
    char_vocab = CharVocabulary.load(os.path.join(model_dir, "chars.tgt.tsv"))
    table = spellings(tgt_vocab, char_vocab)
    data = PreparedData([], [], src_vocab, tgt_vocab, char_vocab, table)
    if checkpoint in (None, "best"):
        with open(os.path.join(model_dir, "best"), encoding="utf-8") as fh:
            checkpoint = fh.read().strip()
    ckpt_path = os.path.join(model_dir, "checkpoints", checkpoint)
    tensors, meta = load_checkpoint(ckpt_path)
    model = training.build_model(config, data)
    restore_model(model, tensors)
    bpe_path = os.path.join(model_dir, "bpe.merges")
    bpe_model = BpeModel.load(bpe_path) if os.path.exists(bpe_path) else None
    return model, config, data, bpe_model, meta


def translate_lines(model, data, lines, beam, max_len, num_splits, bpe_model=None,
                    keep_markers=False):
    if bpe_model is not None:
        lines = apply_bpe_corpus(bpe_model, lines)
    id_seqs = [data.src_vocab.encode(line.split()) for line in lines]
    hyp_ids = model.translate(id_seqs, beam=beam, max_len=max_len, num_splits=num_splits)
    hyps = [" ".join(data.tgt_vocab.decode(ids)) for ids in hyp_ids]
    if not keep_markers:
        hyps = [undo_bpe(h) for h in hyps]
    return hyps


def cmd_translate(args):
    model, config, data, bpe_model, meta = load_run(args.model_dir, args.checkpoint)
    manifest = Manifest("translate", seed=config.seed, config_digest=meta.config_digest)
    manifest.add_input(args.input)
    lines = read_lines(args.input)
    hyps = translate_lines(
        model, data, lines,
        beam=args.beam if args.beam is not None else config.beam,
        max_len=config.max_decode_len,
        num_splits=args.splits,
        bpe_model=bpe_model,
        keep_markers=args.keep_markers,
    )
    write_lines(args.out, hyps)
    manifest.add_output(args.out)
    manifest.write(args.out + ".manifest")
    return 0


def cmd_score(args):
    hyps = read_lines(args.hyp)
    refs = read_lines(args.ref)
    score = bleu(hyps, refs, lowercase=args.lowercase)
    print(f"{score:.2f}")
    if args.out:
        write_lines(args.out, [f"{score:.2f}"])
        manifest = Manifest("score")
        manifest.add_input(args.hyp)
        manifest.add_input(args.ref)
        manifest.add_output(args.out)
        manifest.write(args.out + ".manifest")
    return 0


def cmd_analyze(args):
    results = []
    if args.corpus:
        tokens = [t for line in read_lines(args.corpus) for t in line.split()]
        results.append(("TT", analysis.type_token_ratio(tokens)))
        results.append(("H", analysis.word_entropy(tokens)))
    alignments = None
    if args.alignments:
        alignments = analysis.read_pharaoh(read_lines(args.alignments))
    elif args.forward and args.backward:
        fwd = analysis.read_pharaoh(read_lines(args.forward))
        bwd = analysis.read_pharaoh(read_lines(args.backward))
        alignments = analysis.symmetrize_gdfa(fwd, bwd)
    if alignments is not None:
        results.append(("A", analysis.alignment_score(alignments)))
    if args.unimorph:
        lex = analysis.read_unimorph(read_lines(args.unimorph))
        if lex.skipped:
            print(f"warning: skipped {lex.skipped} malformed lexicon entries", file=sys.stderr)
        ut, utc = analysis.unimorph_stats(lex)
        results.append(("UT", float(ut)))
        results.append(("UTC", float(utc)))
    if args.bleu_cg is not None and args.bleu_std is not None:
        results.append(("gain", analysis.relative_gain(args.bleu_cg, args.bleu_std)))
    for name, value in results:
        print(f"{name} = {value:.4f}")
    if args.out:
        values = dict(results)
        header = "lang\t" + "\t".join(analysis.FEATURE_NAMES) + "\tgain"
        row = args.lang + "\t" + "\t".join(
            f"{values[n]:.6g}" if n in values else "NA" for n in analysis.FEATURE_NAMES
        ) + "\t" + (f"{values['gain']:.6g}" if "gain" in values else "NA")
        exists = os.path.exists(args.out)
        with open(args.out, "a", encoding="utf-8") as fh:
            if not exists:
                fh.write(header + "\n")
            fh.write(row + "\n")
    return 0


def cmd_regress(args):
    table = analysis.FeatureTable.load(args.features)
    if args.normalize:
        table = table.normalized()
    model = analysis.fit_feature_augmented_ridge(table, lam=args.lam)
    model.save(args.out)
    manifest = Manifest("regress")
    manifest.add_input(args.features)
    manifest.add_output(args.out)
    manifest.write(args.out + ".manifest")
    print(f"wrote weights for ALL + {len(model.phi_lang)} languages -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# sweep


class SweepSpec:
    """Merge settings (ints ascending, optional 'word' last) plus a base config."""

    def __init__(self, settings, config):
        numeric = [s for s in settings if s != SWEEP_WORD]
        if any(not isinstance(s, int) for s in numeric):
            raise ValueError("settings must be ints or 'word'")
        if sorted(numeric) != numeric:
            raise ValueError("merge settings must be strictly increasing")
        if len(set(numeric)) != len(numeric):
            raise ValueError("duplicate merge settings")
        if SWEEP_WORD in settings and settings[-1] != SWEEP_WORD:
            raise ValueError("'word' must come last")
        self.settings = settings
        self.config = config


def parse_settings(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        out.append(SWEEP_WORD if part == SWEEP_WORD else int(part))
    return out


def _sweep_one(setting, spec, corpora, out_dir, tgt_lexicon=None):
    """Train Std and CG at one merge setting and score the test set."""
    train_src, train_tgt, val_src, val_tgt, test_src, test_tgt = corpora
    label = str(setting)
    setting_dir = os.path.join(out_dir, f"setting_{label}")
    os.makedirs(setting_dir, exist_ok=True)
    if setting == SWEEP_WORD:
        src_bpe = tgt_bpe = None
    else:
        # learned separately per side, applied with the same merge count
        src_bpe = learn_bpe([t for line in train_src for t in line.split()], setting)
        tgt_bpe = learn_bpe([t for line in train_tgt for t in line.split()], setting)

    def segment(lines, bpe_model):
        return lines if bpe_model is None else apply_bpe_corpus(bpe_model, lines)

    seg = {
        "train_src": segment(train_src, src_bpe),
        "train_tgt": segment(train_tgt, tgt_bpe),
        "val_src": segment(val_src, src_bpe) if val_src else None,
        "val_tgt": segment(val_tgt, tgt_bpe) if val_tgt else None,
        "test_src": segment(test_src, src_bpe),
        "lexicon": segment(tgt_lexicon, tgt_bpe) if tgt_lexicon else None,
    }
    scores = {}
    for mode in ("std", "cg"):
        config = replace(spec.config, mode=mode, bpe_merges=label)
        run_dir = os.path.join(setting_dir, mode)
        checkpoints, data = run_training(
            config, seg["train_src"], seg["train_tgt"], seg["val_src"], seg["val_tgt"],
            run_dir, tgt_lexicon=seg["lexicon"], quiet=True,
        )
        best = select_model(checkpoints)
        tensors, _ = load_checkpoint(best.path)
        model = training.build_model(config, data)
        restore_model(model, tensors)
        id_seqs = [data.src_vocab.encode(line.split()) for line in seg["test_src"]]
        hyp_ids = model.translate(id_seqs, beam=config.beam,
                                  max_len=config.max_decode_len)
        hyps = [undo_bpe(" ".join(data.tgt_vocab.decode(ids))) for ids in hyp_ids]
        hyp_dir = os.path.join(run_dir, "hyps")
        os.makedirs(hyp_dir, exist_ok=True)
        write_lines(os.path.join(hyp_dir, "test.hyp"), hyps)
        scores[mode] = bleu(hyps, test_tgt, lowercase=True)
    return label, scores["std"], scores["cg"]


def run_sweep(spec, corpora, out_dir, tgt_lexicon=None):
    """Run the full BPE sweep; returns rows (setting, bleu_std, bleu_cg, delta)."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    errors = []

    def job(setting):
        try:
            return _sweep_one(setting, spec, corpora, out_dir, tgt_lexicon)
        except Exception as exc:  # record and keep sweeping
            errors.append((str(setting), f"{type(exc).__name__}: {exc}"))
            return None

    threads = worker_threads()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, spec.settings))
    else:
        results = [job(s) for s in spec.settings]
    for res in results:
        if res is not None:
            label, b_std, b_cg = res
            rows.append((label, b_std, b_cg, b_cg - b_std))

    with open(os.path.join(out_dir, "sweep_results.tsv"), "w", encoding="utf-8") as fh:
        fh.write("setting\tbleu_std\tbleu_cg\tdelta\n")
        for label, b_std, b_cg, delta in rows:
            fh.write(f"{label}\t{b_std:.2f}\t{b_cg:.2f}\t{delta:.2f}\n")
    with open(os.path.join(out_dir, "fig_delta_bleu.tsv"), "w", encoding="utf-8") as fh:
        fh.write("merges\tdelta_bleu\n")
        for label, _, _, delta in rows:
            fh.write(f"{label}\t{delta:.2f}\n")
    if errors:
        with open(os.path.join(out_dir, "sweep_errors.tsv"), "w", encoding="utf-8") as fh:
            fh.write("setting\terror\n")
            for label, msg in errors:
                fh.write(f"{label}\t{msg}\n")
    return rows


def cmd_sweep(args):
    config = load_config(args)
    spec = SweepSpec(parse_settings(args.settings), config)
    corpora = (
        read_lines(args.train_src), read_lines(args.train_tgt),
        read_lines(args.val_src) if args.val_src else None,
        read_lines(args.val_tgt) if args.val_tgt else None,
        read_lines(args.test_src), read_lines(args.test_tgt),
    )
    lexicon = read_lines(args.tgt_lexicon) if args.tgt_lexicon else None
    manifest = Manifest("sweep", seed=config.seed, config_digest=config.digest())
    for path in (args.train_src, args.train_tgt, args.val_src, args.val_tgt,
                 args.test_src, args.test_tgt, args.tgt_lexicon):
        if path:
            manifest.add_input(path)
    rows = run_sweep(spec, corpora, args.out_dir, tgt_lexicon=lexicon)
    manifest.add_output(os.path.join(args.out_dir, "sweep_results.tsv"))
    manifest.write(os.path.join(args.out_dir, "manifest.txt"))
    for label, b_std, b_cg, delta in rows:
        print(f"{label}\t{b_std:.2f}\t{b_cg:.2f}\t{delta:+.2f}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(prog="cgnmt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bpe-learn", help="learn BPE merges from a corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--bpe-merges", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bpe_learn)

    p = sub.add_parser("bpe-apply", help="segment a corpus with learned merges")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bpe_apply)

    p = sub.add_parser("prepare", help="filter a parallel corpus")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-src-len", type=int, default=50)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one model configuration")
    p.add_argument("--config")
    p.add_argument("--train-src", required=True)
    p.add_argument("--train-tgt", required=True)
    p.add_argument("--val-src")
    p.add_argument("--val-tgt")
    p.add_argument("--bpe-model")
    p.add_argument("--tgt-lexicon")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mode", choices=("std", "c", "cg"))
    p.add_argument("--side-override", choices=("input-only", "softmax-only", "both"))
    p.add_argument("--bpe-merges")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--sample-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="beam-decode a source file")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--checkpoint", default="best")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beam", type=int)
    p.add_argument("--splits", type=int, default=1)
    p.add_argument("--keep-markers", action="store_true")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("score", help="corpus BLEU of hypotheses against references")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--lowercase", type=_bool_flag, default=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("analyze", help="morphological-complexity features")
    p.add_argument("--lang", default="xx")
    p.add_argument("--corpus")
    p.add_argument("--alignments")
    p.add_argument("--forward")
    p.add_argument("--backward")
    p.add_argument("--unimorph")
    p.add_argument("--bleu-cg", type=float)
    p.add_argument("--bleu-std", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("regress", help="feature-augmented ridge regression")
    p.add_argument("--features", required=True)
    p.add_argument("--lam", type=float, default=0.05)
    p.add_argument("--normalize", type=_bool_flag, default=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("sweep", help="BPE sweep training Std and CG per setting")
    p.add_argument("--config")
    p.add_argument("--settings", required=True, help="comma list, e.g. 0,1600,30000,word")
    p.add_argument("--train-src", required=True)
    p.add_argument("--train-tgt", required=True)
    p.add_argument("--val-src")
    p.add_argument("--val-tgt")
    p.add_argument("--test-src", required=True)
    p.add_argument("--test-tgt", required=True)
    p.add_argument("--tgt-lexicon")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mode", choices=("std", "c", "cg"))
    p.add_argument("--batch-size", type=int)
    p.add_argument("--beam", type=int)
    p.add_argument("--sample-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
