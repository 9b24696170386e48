"""Attentional encoder-decoder with input feeding and a character-aware decoder.

The encoder is a stacked bidirectional LSTM; the decoder is a stacked LSTM
whose input concatenates the previous target embedding with the previous
attentional state. Attention is bilinear over the encoder states, queried
with the decoder's top LSTM output. The decoder input matrix and the
softmax matrix come from a TargetEmbedding and are tied per configuration.

Training can restrict the softmax to a sampled support (a uniform sample
of the vocabulary unioned with the batch's target types); decoding computes
the full-vocabulary logits in splits so the transient workspace stays
proportional to |V| / num_splits rows.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .char_embed import TargetEmbedding
from .nn import LSTMCell, uniform_init
from .subword import BOS, EOS


@dataclass
class ModelConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    emb_size: int = 64       # E; also the decoder hidden size D (tying needs E == D)
    enc_hidden: int = 64     # per-direction encoder hidden size
    layers: int = 2
    char_emb_size: int = 50
    mode: str = "cg"
    side_override: str = "both"
    dtype: type = np.float32


@dataclass
class EncoderOutput:
    states: Tensor                    # [B, I, 2 * enc_hidden]
    mask: np.ndarray                  # [B, I] floats, 1 for real positions
    final_fwd: list = field(default_factory=list)   # per layer (h, c)
    final_bwd: list = field(default_factory=list)


@dataclass
class DecoderState:
    layers: list       # per layer (h, c) Tensors [B, D]
    input_feed: Tensor  # previous attentional state [B, D]


@dataclass
class Hypothesis:
    tokens: tuple
    logp: float
    state: DecoderState


@dataclass
class SampledSupport:
    ids: np.ndarray          # sorted unique vocabulary ids
    from_batch: np.ndarray   # parallel bools: present in the batch targets

    def __len__(self):
        return len(self.ids)


def sample_support(batch_targets, vocab_size, sample_size, rng):
    """Uniform sample without replacement, unioned with the batch's targets."""
    if sample_size > vocab_size:
        raise ValueError(f"sample_size {sample_size} exceeds vocabulary size {vocab_size}")
    sampled = rng.choice(vocab_size, size=sample_size, replace=False)
    batch_ids = np.unique(np.asarray(batch_targets).ravel())
    ids = np.union1d(sampled, batch_ids)
    from_batch = np.isin(ids, batch_ids)
    return SampledSupport(ids=ids.astype(np.int64), from_batch=from_batch)


def split_logits(s, w_o, num_splits, stats=None):
    """Compute s @ w_o.T over the vocabulary in row splits (plain arrays).

    Equals the single-shot product; only `ceil(V / num_splits)` softmax rows
    are materialized per split, tracked in stats["peak_rows"] when given.
    """
    if num_splits < 1:
        raise ValueError("num_splits must be >= 1")
    s = np.atleast_2d(s)
    v = w_o.shape[0]
    out = np.empty((s.shape[0], v), dtype=s.dtype)
    peak = 0
    for chunk in np.array_split(np.arange(v), min(num_splits, v)):
        out[:, chunk] = s @ w_o[chunk].T
        peak = max(peak, len(chunk))
    if stats is not None:
        stats["peak_rows"] = peak
    return out


def log_softmax_np(x):
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _blend(mask_col, new, old):
    """mask * new + (1 - mask) * old, with mask a [B, 1] constant."""
    m = Tensor(mask_col)
    return ad.add(ad.mul(m, new), ad.mul(ad.sub(1.0, m), old))


class Seq2SeqModel:
    def __init__(self, config, spelling_table, rng):
        if config.emb_size != config.emb_size // 4 * 4:
            raise ShapeError(f"embedding size {config.emb_size} must be divisible by 4")
        self.config = config
        self.dtype = config.dtype
        e, h, d = config.emb_size, config.enc_hidden, config.emb_size
        self.hidden = d
        self.src_emb = uniform_init(rng, (config.src_vocab_size, e), self.dtype)
        self.enc_fwd, self.enc_bwd = [], []
        for layer in range(config.layers):
            in_size = e if layer == 0 else 2 * h
            self.enc_fwd.append(LSTMCell(in_size, h, rng, self.dtype, f"enc.l{layer}.fwd"))
            self.enc_bwd.append(LSTMCell(in_size, h, rng, self.dtype, f"enc.l{layer}.bwd"))
        self.bridge_h = [uniform_init(rng, (2 * h, d), self.dtype) for _ in range(config.layers)]
        self.bridge_c = [uniform_init(rng, (2 * h, d), self.dtype) for _ in range(config.layers)]
        self.dec = []
        for layer in range(config.layers):
            in_size = e + d if layer == 0 else d
            self.dec.append(LSTMCell(in_size, d, rng, self.dtype, f"dec.l{layer}"))
        self.w_a = uniform_init(rng, (d, 2 * h), self.dtype)
        self.w_c = uniform_init(rng, (2 * h + d, d), self.dtype)
        self.embedding = TargetEmbedding(
            spelling_table, e, rng, self.dtype,
            mode=config.mode, side_override=config.side_override,
            char_emb_size=config.char_emb_size,
        )

    def params(self):
        out = {"src_emb": self.src_emb}
        for cell in self.enc_fwd + self.enc_bwd + self.dec:
            out.update(cell.params())
        for layer in range(self.config.layers):
            out[f"bridge.l{layer}.h"] = self.bridge_h[layer]
            out[f"bridge.l{layer}.c"] = self.bridge_c[layer]
        out["attn.Wa"] = self.w_a
        out["attn.Wc"] = self.w_c
        out.update(self.embedding.params())
        return out

    # ------------------------------------------------------------------ encoder

    def encode(self, src_ids, src_mask=None):
        """Run the bidirectional encoder over [B, T] source ids.

        `src_mask` (floats, 1 = real token) freezes carried states across
        padding so every sentence gets exactly its unpadded states.
        """
        src_ids = np.atleast_2d(np.asarray(src_ids))
        b, t = src_ids.shape
        if t == 0:
            raise ShapeError("encode: empty source sequence")
        if src_mask is None:
            src_mask = np.ones((b, t), dtype=self.dtype)
        inputs = [ad.gather_rows(self.src_emb, src_ids[:, j]) for j in range(t)]
        final_fwd, final_bwd = [], []
        for layer in range(self.config.layers):
            fwd_cell, bwd_cell = self.enc_fwd[layer], self.enc_bwd[layer]
            h, c = fwd_cell.initial_state(b, self.dtype)
            fwd_states = []
            for j in range(t):
                m = src_mask[:, j:j + 1]
                h_new, c_new = fwd_cell.step(inputs[j], (h, c))
                h, c = _blend(m, h_new, h), _blend(m, c_new, c)
                fwd_states.append(h)
            final_fwd.append((h, c))
            h, c = bwd_cell.initial_state(b, self.dtype)
            bwd_states = [None] * t
            for j in reversed(range(t)):
                m = src_mask[:, j:j + 1]
                h_new, c_new = bwd_cell.step(inputs[j], (h, c))
                h, c = _blend(m, h_new, h), _blend(m, c_new, c)
                bwd_states[j] = h
            final_bwd.append((h, c))
            inputs = [ad.concat([fwd_states[j], bwd_states[j]], axis=1) for j in range(t)]
        states = ad.stack_time(inputs)  # [B, T, 2H]
        return EncoderOutput(states=states, mask=src_mask, final_fwd=final_fwd, final_bwd=final_bwd)

    def initial_decoder_state(self, enc):
        layers = []
        for layer in range(self.config.layers):
            hf, cf = enc.final_fwd[layer]
            hb, cb = enc.final_bwd[layer]
            h0 = ad.tanh(ad.matmul(ad.concat([hf, hb], axis=1), self.bridge_h[layer]))
            c0 = ad.tanh(ad.matmul(ad.concat([cf, cb], axis=1), self.bridge_c[layer]))
            layers.append((h0, c0))
        b = enc.mask.shape[0]
        feed = Tensor(np.zeros((b, self.hidden), dtype=self.dtype))
        return DecoderState(layers=layers, input_feed=feed)

    # ---------------------------------------------------------------- attention

    def attend(self, query, enc_states, enc_mask=None):
        """Bilinear attention: scores s~^T W_a h_i, softmax, weighted average."""
        q2 = ad.matmul(query, self.w_a)
        scores = ad.attn_scores(q2, enc_states)
        if enc_mask is not None:
            scores = ad.masked_fill(scores, enc_mask > 0, ad.NEG_INF)
        alpha = ad.softmax(scores, axis=-1)
        context = ad.attn_context(alpha, enc_states)
        return context, alpha

    # ------------------------------------------------------------------ decoder

    def decode_step(self, state, prev_ids, enc, w_s):
        """One teacher-forced / search step; returns (new state, s_j, alpha)."""
        prev_ids = np.asarray(prev_ids)
        emb = ad.gather_rows(w_s, prev_ids)
        x = ad.concat([emb, state.input_feed], axis=1)
        new_layers = []
        for layer, cell in enumerate(self.dec):
            h, c = cell.step(x, state.layers[layer])
            new_layers.append((h, c))
            x = h
        s_tilde = x
        context, alpha = self.attend(s_tilde, enc.states, enc.mask)
        s_j = ad.tanh(ad.matmul(ad.concat([context, s_tilde], axis=1), self.w_c))
        return DecoderState(layers=new_layers, input_feed=s_j), s_j, alpha

    # ------------------------------------------------------------------- output

    def output_distribution(self, s_j, w_o=None, support=None):
        """Probabilities over the vocabulary (full) or over `support.ids` only."""
        if w_o is None:
            w_o = self.embedding.tied_matrices()[1]
        w = w_o.data if isinstance(w_o, Tensor) else w_o
        s = np.atleast_2d(s_j.data if isinstance(s_j, Tensor) else s_j)
        rows = w if support is None else w[support.ids]
        logits = s @ rows.T
        probs = np.exp(log_softmax_np(logits))
        return probs[0] if (np.asarray(s_j.data if isinstance(s_j, Tensor) else s_j).ndim == 1) else probs

    def split_forward_logits(self, s_j, num_splits, w_o=None, stats=None):
        if w_o is None:
            w_o = self.embedding.tied_matrices()[1]
        w = w_o.data if isinstance(w_o, Tensor) else w_o
        s = s_j.data if isinstance(s_j, Tensor) else np.asarray(s_j)
        squeeze = s.ndim == 1
        out = split_logits(s, w, num_splits, stats=stats)
        return out[0] if squeeze else out

    # ----------------------------------------------------------------- training

    def loss_batch(self, batch, support=None, return_correct=False):
        """Summed token NLL of a padded batch (pad positions masked out)."""
        w_s, w_o = self.embedding.tied_matrices()
        enc = self.encode(batch.src, batch.src_mask)
        state = self.initial_decoder_state(enc)
        if support is not None:
            w_rows = ad.gather_rows(w_o, support.ids)
            w_out_t = ad.transpose(w_rows)
        else:
            w_out_t = ad.transpose(w_o)
        total = Tensor(np.zeros((), dtype=self.dtype))
        n_tokens = float(batch.tgt_mask.sum())
        correct = 0
        steps = batch.tgt_in.shape[1]
        for j in range(steps):
            state, s_j, _ = self.decode_step(state, batch.tgt_in[:, j], enc, w_s)
            logits = ad.matmul(s_j, w_out_t)
            targets = batch.tgt_out[:, j]
            if support is not None:
                pos = np.searchsorted(support.ids, targets)
                pos = np.clip(pos, 0, len(support.ids) - 1)
                bad = (support.ids[pos] != targets) & (batch.tgt_mask[:, j] > 0)
                if bad.any():
                    missing = sorted(set(targets[bad].tolist()))
                    raise ValueError(f"support is missing required target ids {missing}")
                targets = pos
            losses = ad.softmax_xent_rows(logits, targets)
            masked = ad.mul(losses, Tensor(batch.tgt_mask[:, j]))
            total = ad.add(total, ad.sum_all(masked))
            if return_correct:
                pred = logits.data.argmax(axis=1)
                correct += int(((pred == targets) * (batch.tgt_mask[:, j] > 0)).sum())
        if return_correct:
            return total, n_tokens, correct
        return total, n_tokens

    # ----------------------------------------------------------------- decoding

    def beam_search(self, src_ids, beam=5, max_len=50, num_splits=1, matrices=None):
        """Best token sequence for one source sentence (ids, no BOS/EOS)."""
        if max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {max_len}")
        src = np.asarray(src_ids, dtype=np.int64)[None, :]
        enc = self.encode(src)
        w_s, w_o = matrices if matrices is not None else self.embedding.tied_matrices()
        init = self.initial_decoder_state(enc)
        live = [Hypothesis(tokens=(), logp=0.0, state=init)]
        finished = []
        for _ in range(max_len):
            k = len(live)
            state = DecoderState(
                layers=[
                    (
                        Tensor(np.concatenate([h.state.layers[l][0].data for h in live])),
                        Tensor(np.concatenate([h.state.layers[l][1].data for h in live])),
                    )
                    for l in range(self.config.layers)
                ],
                input_feed=Tensor(np.concatenate([h.state.input_feed.data for h in live])),
            )
            enc_k = EncoderOutput(
                states=Tensor(np.repeat(enc.states.data, k, axis=0)),
                mask=np.repeat(enc.mask, k, axis=0),
            )
            prev = np.array([h.tokens[-1] if h.tokens else BOS for h in live])
            new_state, s_j, _ = self.decode_step(state, prev, enc_k, w_s)
            logits = self.split_forward_logits(s_j, num_splits, w_o=w_o)
            logprobs = log_softmax_np(logits)  # [k, V]
            cand = logprobs + np.array([h.logp for h in live])[:, None]
            flat = np.argsort(-cand, axis=None, kind="stable")[:beam]
            next_live = []
            for f in flat:
                ki, v = divmod(int(f), cand.shape[1])
                hyp_state = DecoderState(
                    layers=[
                        (
                            Tensor(new_state.layers[l][0].data[ki:ki + 1]),
                            Tensor(new_state.layers[l][1].data[ki:ki + 1]),
                        )
                        for l in range(self.config.layers)
                    ],
                    input_feed=Tensor(new_state.input_feed.data[ki:ki + 1]),
                )
                score = float(cand[ki, v])
                if v == EOS:
                    finished.append(Hypothesis(tokens=live[ki].tokens, logp=score, state=hyp_state))
                else:
                    next_live.append(Hypothesis(tokens=live[ki].tokens + (v,), logp=score, state=hyp_state))
            live = next_live
            if not live:
                break
            if finished and max(h.logp for h in live) <= max(h.logp for h in finished):
                break  # extensions can only lower scores
        if finished:
            best = max(finished, key=lambda h: h.logp)
        else:
            best = max(live, key=lambda h: h.logp)
        return list(best.tokens), best.logp

    def translate(self, src_ids_seqs, beam=5, max_len=50, num_splits=1):
        """Beam-decode a list of source id sequences.

        The tied matrices are computed once and reused for every sentence.
        """
        matrices = self.embedding.tied_matrices()
        return [
            self.beam_search(s, beam=beam, max_len=max_len, num_splits=num_splits,
                             matrices=matrices)[0]
            for s in src_ids_seqs
        ]
