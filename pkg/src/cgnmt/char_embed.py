"""Spelling-compositional embeddings, per-type gating, and tied matrices.

A word (or subword piece) embedding is composed from its character
sequence: character embeddings feed four parallel convolutions of widths
3..6, each max-pooled over time, concatenated, and refined by two highway
layers. A learned per-type gate then interpolates between this composed
vector and a standard lookup row, and the resulting matrix serves as both
the decoder input embedding and the softmax projection.
"""

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .nn import uniform_init

KERNEL_WIDTHS = (3, 4, 5, 6)

MODES = ("std", "c", "cg")
SIDE_OVERRIDES = ("both", "input-only", "softmax-only")


class ConfigError(ValueError):
    pass


class Highway:
    """y = t * relu(W_h x + b_h) + (1 - t) * x with t = sigmoid(W_t x + b_t)."""

    def __init__(self, size, rng, dtype, name, transform_bias=-2.0):
        self.name = name
        self.w_h = uniform_init(rng, (size, size), dtype)
        self.b_h = Tensor(np.zeros(size, dtype=dtype), requires_grad=True)
        self.w_t = uniform_init(rng, (size, size), dtype)
        # near-identity start: transform gate mostly closed
        self.b_t = Tensor(np.full(size, transform_bias, dtype=dtype), requires_grad=True)

    def params(self):
        return {
            f"{self.name}.Wh": self.w_h,
            f"{self.name}.bh": self.b_h,
            f"{self.name}.Wt": self.w_t,
            f"{self.name}.bt": self.b_t,
        }

    def apply(self, x):
        t = ad.sigmoid(ad.add(ad.matmul(x, self.w_t), self.b_t))
        h = ad.relu(ad.add(ad.matmul(x, self.w_h), self.b_h))
        carry = ad.mul(ad.sub(1.0, t), x)
        return ad.add(ad.mul(t, h), carry)


class Composer:
    """CNN-over-spelling composition producing one embedding per type."""

    def __init__(self, n_chars, emb_size, rng, dtype, char_emb_size=50):
        if emb_size % 4 != 0:
            raise ConfigError(f"embedding size must be divisible by 4, got {emb_size}")
        self.emb_size = emb_size
        self.char_emb_size = char_emb_size
        self.channels = emb_size // 4
        self.char_emb = uniform_init(rng, (n_chars, char_emb_size), dtype)
        self.kernels = {}
        self.conv_bias = {}
        for k in KERNEL_WIDTHS:
            self.kernels[k] = uniform_init(rng, (k, char_emb_size, self.channels), dtype)
            self.conv_bias[k] = Tensor(np.zeros(self.channels, dtype=dtype), requires_grad=True)
        self.hw1 = Highway(emb_size, rng, dtype, "hw1")
        self.hw2 = Highway(emb_size, rng, dtype, "hw2")

    def params(self):
        out = {"char_emb": self.char_emb}
        for k in KERNEL_WIDTHS:
            out[f"conv.k{k}"] = self.kernels[k]
            out[f"conv.k{k}.b"] = self.conv_bias[k]
        out.update(self.hw1.params())
        out.update(self.hw2.params())
        return out

    def compose(self, row):
        """Compose one spelling row (char ids, length >= 6) into a vector [E]."""
        row = np.asarray(row)
        if row.shape[0] < max(KERNEL_WIDTHS):
            raise ShapeError(f"spelling row of length {row.shape[0]} is shorter than the widest kernel")
        x = ad.gather_rows(self.char_emb, row)  # [L, char_emb]
        pooled = []
        for k in KERNEL_WIDTHS:
            conv = ad.add(ad.conv1d(x, self.kernels[k]), self.conv_bias[k])
            pooled.append(ad.max_over_time(conv))
        feat = ad.reshape(ad.concat(pooled, axis=0), (1, self.emb_size))
        out = self.hw2.apply(self.hw1.apply(feat))
        return ad.reshape(out, (self.emb_size,))

    def compose_all(self, table):
        """Compose every row of a SpellingTable; equals per-row compose.

        Rows are padded to the table-wide width; convolution windows past a
        row's own stored length are masked out before max pooling, and rows
        flagged non-compositional come out as zeros.
        """
        mat = table.padded_matrix()
        lengths = table.row_lengths
        x = ad.gather_rows(self.char_emb, mat)  # [V, W, char_emb]
        pooled = []
        for k in KERNEL_WIDTHS:
            conv = ad.add(ad.conv1d(x, self.kernels[k]), self.conv_bias[k])
            t_out = conv.data.shape[1]
            valid = np.arange(t_out)[None, :] < (lengths - k + 1)[:, None]
            conv = ad.masked_fill(conv, valid[:, :, None], ad.NEG_INF)
            pooled.append(ad.max_over_time(conv))
        feat = ad.concat(pooled, axis=1)  # [V, E]
        out = self.hw2.apply(self.hw1.apply(feat))
        compositional = ~table.non_compositional
        return ad.masked_fill(out, compositional[:, None], 0.0)


class GateTable:
    """Per-type pre-sigmoid gate vectors; reserved types are pinned to g = 1."""

    def __init__(self, vocab_size, emb_size, reserved_mask, dtype):
        self.w_gate = Tensor(np.zeros((vocab_size, emb_size), dtype=dtype), requires_grad=True)
        self.reserved = np.asarray(reserved_mask, dtype=bool)

    def params(self):
        return {"gate": self.w_gate}

    def gates(self, override=None):
        """Full [V, E] gate matrix. `override` forces a constant everywhere."""
        if override is not None:
            return Tensor(np.full_like(self.w_gate.data, override))
        g = ad.sigmoid(self.w_gate)
        return ad.masked_fill(g, ~self.reserved[:, None], 1.0)

    def gate(self, v):
        """Gate values for one type id, as a plain array."""
        if not 0 <= v < self.w_gate.data.shape[0]:
            raise IndexError(f"type id {v} out of range")
        if self.reserved[v]:
            return np.ones(self.w_gate.data.shape[1], dtype=self.w_gate.data.dtype)
        return ad._sigmoid_np(self.w_gate.data[v])


def mix(w_std, w_comp, gates):
    """Rowwise interpolation g * std + (1 - g) * comp."""
    if w_std.data.shape != w_comp.data.shape or w_std.data.shape != gates.data.shape:
        raise ShapeError(
            f"mix: shapes disagree: {w_std.data.shape}, {w_comp.data.shape}, {gates.data.shape}"
        )
    return ad.add(ad.mul(gates, w_std), ad.mul(ad.sub(1.0, gates), w_comp))


class TargetEmbedding:
    """The decoder-side embedding/softmax matrices for one model configuration.

    mode "std": one standard lookup matrix.
    mode "c":   composed matrix alone (no gating).
    mode "cg":  gated mixture, with optional per-side override so the mixture
                feeds only the input embedding or only the softmax layer.
    """

    def __init__(self, table, emb_size, rng, dtype, mode="cg", side_override="both",
                 char_emb_size=50):
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
        if side_override not in SIDE_OVERRIDES:
            raise ConfigError(f"unknown side override {side_override!r}")
        if side_override != "both" and mode != "cg":
            raise ConfigError("per-side overrides only apply to cg mode")
        self.mode = mode
        self.side_override = side_override
        self.table = table
        self.vocab_size = len(table)
        self.emb_size = emb_size
        self.dtype = dtype
        self.gate_override = None  # test hook: force a constant gate

        self.w_std = None
        self.composer = None
        self.gate_table = None
        if mode in ("std", "cg"):
            self.w_std = uniform_init(rng, (self.vocab_size, emb_size), dtype)
        if mode in ("c", "cg"):
            self.composer = Composer(len(table.char_vocab), emb_size, rng, dtype,
                                     char_emb_size=char_emb_size)
        if mode == "cg":
            self.gate_table = GateTable(self.vocab_size, emb_size, table.non_compositional, dtype)

    def params(self):
        out = {}
        if self.w_std is not None:
            out["w_std"] = self.w_std
        if self.composer is not None:
            out.update(self.composer.params())
        if self.gate_table is not None:
            out.update(self.gate_table.params())
        return out

    def mixed_matrix(self):
        w_comp = self.composer.compose_all(self.table)
        gates = self.gate_table.gates(override=self.gate_override)
        return mix(self.w_std, w_comp, gates)

    def tied_matrices(self):
        """(input matrix W_s, softmax matrix W_o); one object when fully tied."""
        if self.mode == "std":
            return self.w_std, self.w_std
        if self.mode == "c":
            w_comp = self.composer.compose_all(self.table)
            return w_comp, w_comp
        mixed = self.mixed_matrix()
        if self.side_override == "input-only":
            return mixed, self.w_std
        if self.side_override == "softmax-only":
            return self.w_std, mixed
        return mixed, mixed


def build_tied_matrices(embedding):
    """Functional alias for TargetEmbedding.tied_matrices."""
    return embedding.tied_matrices()
