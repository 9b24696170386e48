"""Corpus preparation, batching, the SGD schedule, and checkpointed training.

The learning rate stays at its initial value for the first eight epochs,
then halves every epoch down to a floor of 0.001. Every epoch ends with a
checkpoint and a teacher-forced validation-accuracy measurement; model
selection keeps the checkpoint with the highest accuracy (earliest epoch
on ties).
"""

import hashlib
import os
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt_io
from .autodiff import Tape
from .model import ModelConfig, Seq2SeqModel, sample_support
from .autodiff import zero_grad
from .nn import SgdState, sgd_step
from .subword import BOS, EOS, PAD, CorpusError, build_char_vocab, build_vocab, spellings


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    mode: str = "cg"                  # std | c | cg
    side_override: str = "both"       # both | input-only | softmax-only
    bpe_merges: str = "word"          # "word", or a merge count as a string ("0" = characters)
    emb_size: int = 64
    enc_hidden: int = 64
    layers: int = 2
    char_emb_size: int = 50
    vocab_size: int = 100000
    max_src_len: int = 50
    batch_size: int = 80
    initial_lr: float = 1.0
    lr_decay: float = 0.5
    decay_start_epoch: int = 9
    min_lr: float = 0.001
    max_epochs: int = 10
    sample_size: int = 0              # 0 = full softmax
    max_grad_norm: float = 0.0        # 0 = no clipping
    beam: int = 5
    max_decode_len: int = 50
    seed: int = 1
    dtype: str = "float32"            # float32 for training, float64 for gradient checks

    def __post_init__(self):
        if not 0 < self.min_lr <= self.initial_lr:
            raise ValueError("need 0 < min_lr <= initial_lr")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def numpy_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    @classmethod
    def full_scale(cls, **overrides):
        """Full-scale preset: 1000 recurrent units, matching embeddings,
        batch 80, the halving schedule, and a 20k-type sampled softmax."""
        values = dict(emb_size=1000, enc_hidden=1000, layers=2, char_emb_size=50,
                      batch_size=80, initial_lr=1.0, lr_decay=0.5,
                      decay_start_epoch=9, min_lr=0.001, sample_size=20000,
                      beam=5, vocab_size=100000, max_src_len=50)
        values.update(overrides)
        return cls(**values)

    def to_text(self):
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    def digest(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_file(cls, path):
        values = {}
        casts = {f.name: f.type for f in fields(cls)}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value'")
                key, _, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if key not in casts:
                    raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
                values[key] = casts[key](value)
        return cls(**values)


def lr_at_epoch(config, epoch):
    """1.0 through epoch 8, then halve per epoch, clamped at min_lr."""
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    if epoch < config.decay_start_epoch:
        return config.initial_lr
    lr = config.initial_lr * config.lr_decay ** (epoch - config.decay_start_epoch + 1)
    return max(config.min_lr, lr)


def filter_corpus(src_lines, tgt_lines, max_src_len=50):
    """Drop pairs whose source exceeds `max_src_len` pre-BPE tokens, and empties."""
    if len(src_lines) != len(tgt_lines):
        raise CorpusError(
            f"misaligned corpora: {len(src_lines)} source lines vs {len(tgt_lines)} target lines"
        )
    out = []
    for src, tgt in zip(src_lines, tgt_lines):
        s, t = src.split(), tgt.split()
        if not s or not t:
            continue
        if len(s) > max_src_len:
            continue
        out.append((src.strip(), tgt.strip()))
    return out


@dataclass
class Batch:
    src: np.ndarray        # [B, Ts] ids
    src_mask: np.ndarray   # [B, Ts] floats
    tgt_in: np.ndarray     # [B, Tt] ids, BOS-led
    tgt_out: np.ndarray    # [B, Tt] ids, EOS-terminated
    tgt_mask: np.ndarray   # [B, Tt] floats

    @property
    def target_ids(self):
        return self.tgt_out[self.tgt_mask > 0]


def _pad(rows, pad_value):
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), pad_value, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=np.float64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
        mask[i, : len(r)] = 1.0
    return out, mask


def make_batches(pairs, batch_size, seed, epoch=1, dtype=np.float32):
    """Shuffle id pairs with a seeded RNG and pad each chunk to its max length."""
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(pairs))
    batches = []
    for start in range(0, len(pairs), batch_size):
        chunk = [pairs[i] for i in order[start:start + batch_size]]
        src_rows = [p[0] for p in chunk]
        in_rows = [[BOS] + list(p[1]) for p in chunk]
        out_rows = [list(p[1]) + [EOS] for p in chunk]
        src, src_mask = _pad(src_rows, PAD)
        tgt_in, _ = _pad(in_rows, PAD)
        tgt_out, tgt_mask = _pad(out_rows, PAD)
        batches.append(Batch(src, src_mask.astype(dtype), tgt_in, tgt_out, tgt_mask.astype(dtype)))
    return batches


@dataclass
class PreparedData:
    train_pairs: list
    val_pairs: list
    src_vocab: object
    tgt_vocab: object
    char_vocab: object
    spell_table: object


def prepare_data(config, train_src, train_tgt, val_src=None, val_tgt=None, tgt_lexicon=None):
    """Filter, build vocabularies over the training side, and numericalize.

    Inputs are already-segmented lines (the CLI applies BPE beforehand).
    `tgt_lexicon` optionally adds extra target-side lines to the vocabulary
    count stream only, so known-but-rare forms keep vocabulary entries.
    """
    train = filter_corpus(train_src, train_tgt, config.max_src_len)
    if not train:
        raise CorpusError("no training pairs survive filtering")
    src_vocab = build_vocab((t for s, _ in train for t in s.split()), config.vocab_size)
    tgt_stream = [t for _, y in train for t in y.split()]
    if tgt_lexicon:
        tgt_stream.extend(t for line in tgt_lexicon for t in line.split())
    tgt_vocab = build_vocab(tgt_stream, config.vocab_size)
    char_vocab = build_char_vocab(tgt_vocab)
    table = spellings(tgt_vocab, char_vocab)
    def encode(pairs):
        return [(src_vocab.encode(s.split()), tgt_vocab.encode(y.split())) for s, y in pairs]
    val = []
    if val_src is not None:
        val = filter_corpus(val_src, val_tgt, config.max_src_len)
    return PreparedData(encode(train), encode(val), src_vocab, tgt_vocab, char_vocab, table)


@dataclass
class Checkpoint:
    epoch: int
    path: str
    val_accuracy: float
    config_digest: str


META_EPOCH = "_meta/epoch"
META_ACC = "_meta/val_accuracy"
META_DIGEST = "_meta/config_digest"


def save_checkpoint(path, model, epoch, val_accuracy, digest):
    tensors = dict(model.params())
    tensors[META_EPOCH] = np.array([epoch], dtype=np.float32)
    tensors[META_ACC] = np.array([val_accuracy], dtype=np.float32)
    tensors[META_DIGEST] = np.frombuffer(bytes.fromhex(digest), dtype=np.uint8).astype(np.float32)
    ckpt_io.save_tensors(path, tensors)


def load_checkpoint(path):
    tensors = ckpt_io.load_tensors(path)
    epoch = int(tensors.pop(META_EPOCH)[0])
    acc = float(tensors.pop(META_ACC)[0])
    digest = bytes(tensors.pop(META_DIGEST).astype(np.uint8)).hex()
    return tensors, Checkpoint(epoch=epoch, path=path, val_accuracy=acc, config_digest=digest)


def restore_model(model, tensors):
    params = model.params()
    for name, p in params.items():
        if name not in tensors:
            raise ckpt_io.CheckpointError(f"checkpoint is missing tensor {name!r}")
        if tensors[name].shape != p.data.shape:
            raise ckpt_io.CheckpointError(
                f"checkpoint tensor {name!r} has shape {tensors[name].shape}, expected {p.data.shape}"
            )
        p.data = tensors[name].astype(p.data.dtype)


def build_model(config, data, rng=None):
    if rng is None:
        rng = np.random.default_rng([config.seed, 0])
    mc = ModelConfig(
        src_vocab_size=len(data.src_vocab),
        tgt_vocab_size=len(data.tgt_vocab),
        emb_size=config.emb_size,
        enc_hidden=config.enc_hidden,
        layers=config.layers,
        char_emb_size=config.char_emb_size,
        mode=config.mode,
        side_override=config.side_override,
        dtype=config.numpy_dtype(),
    )
    return Seq2SeqModel(mc, data.spell_table, rng)


def evaluate_accuracy(model, batches):
    """Teacher-forced per-token accuracy under the full softmax."""
    correct = total = 0
    for batch in batches:
        _, n, c = model.loss_batch(batch, return_correct=True)
        total += n
        correct += c
    return correct / total if total else 0.0


def train_epoch(model, config, batches, lr, epoch):
    """One pass over the batches; returns the mean per-token training loss."""
    sgd = SgdState(model.params(), lr,
                   max_grad_norm=config.max_grad_norm or None)
    loss_sum = 0.0
    token_sum = 0.0
    for step, batch in enumerate(batches):
        support = None
        if config.sample_size:
            rng = np.random.default_rng([config.seed, epoch, step])
            support = sample_support(batch.target_ids, len(model.embedding.table),
                                     config.sample_size, rng)
        with Tape():
            loss, n_tokens = model.loss_batch(batch, support=support)
            scaled = ad.scale(loss, 1.0 / max(n_tokens, 1.0))
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise TrainingDiverged(
                    f"non-finite loss {loss_value} at epoch {epoch}, step {step}"
                )
            ad.backward(scaled)
        sgd_step(sgd)
        zero_grad(sgd.params.values())
        loss_sum += loss_value
        token_sum += n_tokens
    return loss_sum / max(token_sum, 1.0)


def train(config, data, out_dir, resume_from=None, log=None):
    """Full training run; returns the per-epoch checkpoint list."""
    os.makedirs(out_dir, exist_ok=True)
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    digest = config.digest()
    model = build_model(config, data)
    start_epoch = 1
    checkpoints = []
    if resume_from is not None:
        tensors, meta = load_checkpoint(resume_from)
        if meta.config_digest != digest:
            raise ckpt_io.CheckpointError(
                f"checkpoint digest {meta.config_digest[:12]} does not match config {digest[:12]}"
            )
        restore_model(model, tensors)
        start_epoch = meta.epoch + 1
    dtype = config.numpy_dtype()
    val_batches = make_batches(data.val_pairs, config.batch_size, config.seed,
                               epoch=0, dtype=dtype) if data.val_pairs else []
    history = []
    for epoch in range(start_epoch, config.max_epochs + 1):
        lr = lr_at_epoch(config, epoch)
        batches = make_batches(data.train_pairs, config.batch_size, config.seed,
                               epoch=epoch, dtype=dtype)
        train_loss = train_epoch(model, config, batches, lr, epoch)
        val_acc = evaluate_accuracy(model, val_batches) if val_batches else \
            evaluate_accuracy(model, batches)
        path = os.path.join(ckpt_dir, f"epoch{epoch:03d}.ckpt")
        save_checkpoint(path, model, epoch, val_acc, digest)
        checkpoints.append(Checkpoint(epoch, path, val_acc, digest))
        history.append((epoch, lr, train_loss, val_acc))
        if log is not None:
            log(f"epoch {epoch}\tlr {lr:g}\ttrain_loss {train_loss:.4f}\tval_acc {val_acc:.4f}")
    best = select_model(checkpoints)
    with open(os.path.join(out_dir, "best"), "w", encoding="utf-8") as fh:
        fh.write(os.path.basename(best.path) + "\n")
    reports = os.path.join(out_dir, "reports")
    os.makedirs(reports, exist_ok=True)
    with open(os.path.join(reports, "train_log.tsv"), "w", encoding="utf-8") as fh:
        fh.write("epoch\tlr\ttrain_loss\tval_acc\n")
        for epoch, lr, loss, acc in history:
            fh.write(f"{epoch}\t{lr:g}\t{loss:.6f}\t{acc:.6f}\n")
    return checkpoints


def select_model(checkpoints):
    """Highest validation accuracy; earliest epoch wins ties."""
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    best = checkpoints[0]
    for c in checkpoints[1:]:
        if c.val_accuracy > best.val_accuracy:
            best = c
    return best
