"""Encoder-decoder transformer from text tokens to image tokens.

Decoder self-attention is conv-shaped sparse: causal intersected with a
Chebyshev window over the token grid, one mask shared by all decoder layers.
Decoder positions line up with raster cells (position p predicts cell p; its
input is the previous cell's token, with a learned start vector at p=0), so
the grid mask applies to the shifted inputs unchanged and predicting cell p
can only see tokens strictly before p.

Conditioning dropout replaces a whole example's text with PAD before the
encoder runs, which is what later lets one model serve both the conditional
and unconditional branches of guided sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nn, optim, textproc
from . import tensor as T
from .errors import DataError, NumericError


@dataclass(frozen=True)
class ModelConfig:
    enc_layers: int = 2
    dec_layers: int = 4
    d_model: int = 64
    d_mlp: int = 256
    heads: int = 4
    text_vocab: int = 512
    image_vocab: int = 64
    text_len: int = 32
    grid_h: int = 8
    grid_w: int = 8
    cond_dropout_rate: float = 0.1
    conv_kernel: int = 3
    dropout: float = 0.1

    @property
    def image_len(self) -> int:
        return self.grid_h * self.grid_w

    def validate(self):
        if self.d_model % self.heads:
            raise DataError(f"heads {self.heads} must divide d_model {self.d_model}")
        if self.conv_kernel % 2 == 0 or self.conv_kernel < 1:
            raise DataError(f"conv_kernel must be odd and >= 1, got {self.conv_kernel}")
        if not 1 <= self.text_len <= 128:
            raise DataError(f"text_len must be in [1, 128], got {self.text_len}")
        if min(self.enc_layers, self.dec_layers, self.d_model, self.d_mlp,
               self.text_vocab, self.image_vocab, self.grid_h, self.grid_w) < 1:
            raise DataError("all model dimensions must be positive")
        return self


DESK = ModelConfig()

# reference-scale rows: (enc_layers, dec_layers, d_model, d_mlp, heads);
# all use a 32x32 token grid, 8192-way image vocab, 128-token text window
def _preset(e, d, dm, dmlp, h):
    return ModelConfig(enc_layers=e, dec_layers=d, d_model=dm, d_mlp=dmlp, heads=h,
                       text_vocab=16384, image_vocab=8192, text_len=128,
                       grid_h=32, grid_w=32)


PRESETS = {
    "350m": _preset(12, 12, 1024, 4096, 16),
    "750m": _preset(12, 36, 1024, 4096, 16),
    "3b": _preset(12, 36, 2048, 8192, 32),
    "20b": _preset(16, 64, 4096, 16384, 64),
}


def param_count(cfg: ModelConfig) -> dict:
    """Analytic parameter counts. core_blocks covers attention + MLP + their
    layer norms only; size-class labels for the presets refer to that core."""
    d, m = cfg.d_model, cfg.d_mlp
    attn = 4 * d * d + 4 * d
    mlp = 2 * d * m + m + d
    ln = 2 * d
    enc_layer = attn + mlp + 2 * ln
    dec_layer = enc_layer + attn + ln
    emb = (cfg.text_vocab * d + cfg.text_len * d
           + cfg.image_vocab * d + cfg.image_len * d + d)
    head = d * cfg.image_vocab + cfg.image_vocab
    core = cfg.enc_layers * enc_layer + cfg.dec_layers * dec_layer
    return {
        "encoder_blocks": cfg.enc_layers * enc_layer,
        "decoder_blocks": cfg.dec_layers * dec_layer,
        "final_norms": 2 * ln,
        "embeddings": emb,
        "output_head": head,
        "core_blocks": core,
        "total": core + 2 * ln + emb + head,
    }


@dataclass
class TransformerWeights:
    cfg: ModelConfig
    params: nn.ParamSet
    mask: np.ndarray  # (image_len, image_len) decoder self-attention mask


def conv_sparse_mask(grid_h: int, grid_w: int, k: int) -> np.ndarray:
    """allowed[i][j]: j == i, or j < i with Chebyshev(cell_i, cell_j) <= (k-1)/2.
    Always a subset of the causal lower triangle."""
    if k % 2 == 0 or k < 1:
        raise DataError(f"kernel must be odd and >= 1, got {k}")
    n = grid_h * grid_w
    rows = np.arange(n) // grid_w
    cols = np.arange(n) % grid_w
    cheb = np.maximum(np.abs(rows[:, None] - rows[None, :]),
                      np.abs(cols[:, None] - cols[None, :]))
    causal = np.arange(n)[:, None] >= np.arange(n)[None, :]
    mask = causal & (cheb <= (k - 1) // 2)
    np.fill_diagonal(mask, True)
    return mask


def build_model(cfg: ModelConfig, seed: int) -> TransformerWeights:
    cfg.validate()
    rng = np.random.default_rng(seed)
    ps = nn.ParamSet()
    ps.add("text_emb", nn.trunc_normal(rng, (cfg.text_vocab, cfg.d_model)))
    ps.add("text_pos", nn.trunc_normal(rng, (cfg.text_len, cfg.d_model)))
    ps.add("image_emb", nn.trunc_normal(rng, (cfg.image_vocab, cfg.d_model)))
    ps.add("image_pos", nn.trunc_normal(rng, (cfg.image_len, cfg.d_model)))
    ps.add("dec.start", nn.trunc_normal(rng, (cfg.d_model,)))
    for i in range(cfg.enc_layers):
        nn.add_block(ps, f"enc.b{i}", cfg.d_model, cfg.d_mlp, rng)
    nn.add_ln(ps, "enc.ln_out", cfg.d_model)
    for i in range(cfg.dec_layers):
        nn.add_block(ps, f"dec.b{i}", cfg.d_model, cfg.d_mlp, rng, cross=True)
    nn.add_ln(ps, "dec.ln_out", cfg.d_model)
    nn.add_linear(ps, "out", cfg.d_model, cfg.image_vocab, rng)
    return TransformerWeights(cfg=cfg, params=ps,
                              mask=conv_sparse_mask(cfg.grid_h, cfg.grid_w, cfg.conv_kernel))


def _check_ids(ids, vocab, what):
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise DataError(f"{what} must be a (batch, length) array, got {ids.shape}")
    if not np.issubdtype(ids.dtype, np.integer):
        raise DataError(f"{what} must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise DataError(f"{what} contains ids outside [0, {vocab})")
    return ids


def encode_text(w: TransformerWeights, text_ids: np.ndarray, drop=None):
    """Text ids (B, L), L <= text_len -> encoder output (B, L, d_model).

    Shorter-than-capacity batches use the first L positional rows, so padded
    tails can be trimmed before encoding.
    """
    cfg = w.cfg
    p = w.params
    text_ids = _check_ids(text_ids, cfg.text_vocab, "text_ids")
    L = text_ids.shape[1]
    if not 1 <= L <= cfg.text_len:
        raise DataError(f"text length {L} not in [1, text_len={cfg.text_len}]")
    pos = p["text_pos"] if L == cfg.text_len else \
        T.slice_(p["text_pos"], ((0, L), None))
    h = T.add(T.embedding_gather(p["text_emb"], text_ids), pos)
    h = nn.dropout(h, drop)
    for i in range(cfg.enc_layers):
        h = nn.block(p, f"enc.b{i}", h, cfg.heads, drop=drop)
    return nn.ln_affine(p, "enc.ln_out", h)


def trim_pad(text_ids: np.ndarray) -> np.ndarray:
    """Drop all-PAD trailing columns (keeping at least one column)."""
    text_ids = np.asarray(text_ids)
    # columns after the last column containing any non-PAD are droppable
    last = np.flatnonzero((text_ids != textproc.PAD_ID).any(axis=0))
    keep = int(last.max()) + 1 if last.size else 1
    return text_ids[:, :keep]


def decode_logits(w: TransformerWeights, enc_out, image_ids: np.ndarray, drop=None):
    """Teacher-forced decoder pass; logits (B, image_len, image_vocab)."""
    cfg = w.cfg
    p = w.params
    image_ids = _check_ids(image_ids, cfg.image_vocab, "image_ids")
    B, L = image_ids.shape
    if L != cfg.image_len:
        raise DataError(f"image length {L} != grid {cfg.grid_h}x{cfg.grid_w}")
    prev = T.embedding_gather(p["image_emb"], image_ids[:, :-1])
    # start vector tiled over the batch via zero base + trailing broadcast
    base = T.constant(np.zeros((B, 1, cfg.d_model), dtype=p["dec.start"].dtype))
    h = T.concat([T.add(base, p["dec.start"]), prev], axis=1)
    h = T.add(h, p["image_pos"])
    h = nn.dropout(h, drop)
    for i in range(cfg.dec_layers):
        h = nn.block(p, f"dec.b{i}", h, cfg.heads, allowed=w.mask,
                     cross_kv=enc_out, drop=drop)
    h = nn.ln_affine(p, "dec.ln_out", h)
    return nn.linear(p, "out", h)


def logits_fn(w: TransformerWeights, text_ids: np.ndarray, image_ids: np.ndarray):
    """Deterministic full forward (no dropout); used by checks and scoring."""
    return decode_logits(w, encode_text(w, text_ids), image_ids)


def drop_condition(text_ids: np.ndarray, rng, rate: float) -> np.ndarray:
    """Per example, replace the whole text row with PAD with probability rate."""
    if rate <= 0.0 or rng is None:
        return text_ids
    dropped = rng.random(text_ids.shape[0]) < rate
    out = text_ids.copy()
    out[dropped] = textproc.PAD_ID
    return out


def forward_loss(w: TransformerWeights, text_ids: np.ndarray, image_ids: np.ndarray,
                 rng=None, cond_dropout_rate: float | None = None):
    """Mean next-token cross-entropy over image positions and batch.

    rng drives conditioning dropout and activation dropout; pass None for a
    deterministic evaluation pass with both off.
    """
    cfg = w.cfg
    if cond_dropout_rate is None:
        cond_dropout_rate = cfg.cond_dropout_rate if rng is not None else 0.0
    text_ids = _check_ids(text_ids, cfg.text_vocab, "text_ids")
    image_ids = _check_ids(image_ids, cfg.image_vocab, "image_ids")
    text_ids = drop_condition(text_ids, rng, cond_dropout_rate)
    drop = (rng, cfg.dropout) if rng is not None and cfg.dropout > 0 else None
    logits = decode_logits(w, encode_text(w, text_ids, drop=drop), image_ids, drop=drop)
    B, L, V = logits.shape
    flat = T.reshape(logits, (B * L, V))
    per_tok = T.cross_entropy_with_logits(flat, image_ids.reshape(-1))
    return T.reduce_mean(per_tok)


@dataclass
class TrainConfig:
    steps: int = 20000
    batch: int = 16
    seed: int = 0
    log_every: int = 200


def train_model(w: TransformerWeights, text_ids: np.ndarray, image_ids: np.ndarray,
                tcfg: TrainConfig, opt_cfg: optim.OptimizerConfig | None = None,
                hooks=None):
    """Train on aligned (N, text_len) / (N, image_len) id arrays.

    Returns (weights, history of per-step losses). hooks, if given, is a list
    of callables (step, loss, weights) -> None run every log_every steps.
    """
    if len(text_ids) != len(image_ids) or len(text_ids) == 0:
        raise DataError("train_model: need matching nonempty id arrays")
    if opt_cfg is None:
        opt_cfg = optim.OptimizerConfig(
            base_lr=6e-3, warmup=max(1, tcfg.steps // 40),
            decay_start=int(tcfg.steps * 0.5), total_steps=tcfg.steps,
            final_ratio=0.05, weight_decay=1e-4)
    rng = np.random.default_rng(tcfg.seed)
    state = optim.OptimizerState()
    history = []
    for step in range(tcfg.steps):
        idx = rng.integers(0, len(text_ids), tcfg.batch)
        with T.Tape():
            loss = forward_loss(w, trim_pad(text_ids[idx]), image_ids[idx], rng=rng)
        lval = float(loss.data)
        if not np.isfinite(lval):
            raise NumericError(f"training diverged at step {step}")
        grads = nn.grads_of(loss, w.params)
        optim.adafactor_step(w.params, grads, state, opt_cfg)
        history.append(lval)
        if hooks and (step + 1) % tcfg.log_every == 0:
            for h in hooks:
                h(step + 1, lval, w)
    return w, history


def smoothed(history, window: int = 100) -> float:
    if not history:
        raise DataError("smoothed: empty history")
    k = min(window, len(history))
    return float(np.mean(history[-k:]))


def pretrain_text_encoder(w: TransformerWeights, corpus_ids: np.ndarray,
                          mask_rate: float = 0.15, steps: int = 1000,
                          batch: int = 32, seed: int = 0,
                          opt_cfg: optim.OptimizerConfig | None = None):
    """Masked-token pretraining of the encoder alone.

    Content tokens (ids >= first byte id) are masked to UNK at mask_rate and
    predicted by a temporary head; the head is dropped afterwards and decoder
    parameters are never touched. Returns (weights, history).
    """
    cfg = w.cfg
    corpus_ids = _check_ids(corpus_ids, cfg.text_vocab, "corpus_ids")
    if corpus_ids.shape[1] != cfg.text_len:
        raise DataError(f"corpus rows must have length text_len={cfg.text_len}")
    if mask_rate == 0.0:
        return w, [0.0] * steps
    rng = np.random.default_rng(seed)
    head = nn.ParamSet()
    nn.add_linear(head, "mlm", cfg.d_model, cfg.text_vocab, rng)
    enc_params = w.params.subset(["text_emb", "text_pos", "enc."])
    trainable = nn.ParamSet()
    trainable.params.update(enc_params.params)
    trainable.params.update(head.params)
    if opt_cfg is None:
        opt_cfg = optim.OptimizerConfig(
            base_lr=3e-3, warmup=max(1, steps // 20), decay_start=int(steps * 0.6),
            total_steps=steps, final_ratio=0.1, weight_decay=0.0)
    state = optim.OptimizerState()
    history = []
    for step in range(steps):
        rows = rng.integers(0, len(corpus_ids), batch)
        ids = trim_pad(corpus_ids[rows]).copy()
        maskable = ids >= textproc.N_SPECIALS
        chosen = maskable & (rng.random(ids.shape) < mask_rate)
        if not chosen.any():
            history.append(0.0)
            continue
        flat_mask = chosen.reshape(-1)
        targets = np.where(flat_mask, ids.reshape(-1), 0)
        ids[chosen] = textproc.UNK_ID
        n_masked = int(flat_mask.sum())
        with T.Tape():
            h = encode_text(w, ids)
            logits = nn.linear(head, "mlm", h)
            flat = T.reshape(logits, (ids.size, cfg.text_vocab))
            # cross-entropy over every position, zero-weighted where unmasked
            per_tok = T.cross_entropy_with_logits(flat, targets)
            picked = T.mul(per_tok, T.constant(flat_mask.astype(np.float32)))
            loss = T.scale(T.reduce_sum(picked), 1.0 / n_masked)
        lval = float(loss.data)
        if not np.isfinite(lval):
            raise NumericError(f"encoder pretraining diverged at step {step}")
        grads = nn.grads_of(loss, trainable)
        optim.adafactor_step(trainable, grads, state, opt_cfg)
        history.append(lval)
    return w, history
