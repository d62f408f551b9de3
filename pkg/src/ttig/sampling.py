"""Autoregressive image-token sampling with classifier-free guidance.

Each decoding step evaluates the decoder under two conditions, the real text
encoding and an all-PAD encoding (the same stand-in used for conditioning
dropout during training), and combines the logit rows as u + lam * (c - u).
Guidance endpoints short-circuit: lam = 0 returns the unconditional row
bitwise and never runs the conditional branch, lam = 1 the reverse.

The decoder here is a plain numpy re-implementation of the taped training
forward with per-layer key/value caches, so a length-L chain costs O(L)
block passes instead of O(L^2). Encoder outputs and the cross-attention
K/V projections are computed once per condition and reused across steps.

Every sample consumes exactly one uniform per step from its own rng stream
(inverse-CDF draw), so a sample's grid does not depend on how many other
samples were drawn alongside it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from . import seq2seq, textproc, vq
from .errors import DataError, NumericError
from .nn import NEG_FILL

_SQRT_2 = float(np.sqrt(2.0))


@dataclass(frozen=True)
class SamplerConfig:
    guidance: float = 1.2
    temperature: float = 1.0
    top_k: int = 0          # 0 disables the filter
    n_samples: int = 16
    seed: int = 0

    def validate(self, image_vocab: int) -> "SamplerConfig":
        if self.guidance < 0:
            raise DataError(f"guidance weight must be >= 0, got {self.guidance}")
        if self.temperature <= 0:
            raise DataError(f"temperature must be > 0, got {self.temperature}")
        if not 0 <= self.top_k <= image_vocab:
            raise DataError(f"top_k must be in [0, {image_vocab}], got {self.top_k}")
        if self.n_samples < 1:
            raise DataError(f"n_samples must be >= 1, got {self.n_samples}")
        return self


@dataclass
class SampleBatch:
    prompt: str
    grids: np.ndarray              # (n, grid_h, grid_w) int token ids
    images: np.ndarray             # (n, H, W, 3) floats in [0, 1]
    scores: np.ndarray | None = None  # set by rerank, descending
    seed: int = 0


def guided_logits(u, c, lam: float) -> np.ndarray:
    u = np.asarray(u)
    c = np.asarray(c)
    if u.shape != c.shape:
        raise DataError(f"guided_logits: shape mismatch {u.shape} vs {c.shape}")
    if lam == 0.0:
        return u.copy()
    if lam == 1.0:
        return c.copy()
    return u + lam * (c - u)


# ---------------------------------------------------------------------------
# cached decoder

def _ln(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return (xc / np.sqrt(var + eps)) * g + b


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x * (1.0 / _SQRT_2)))


class _Branch:
    """Decoder state for one condition: fixed cross-attention K/V plus
    self-attention caches that grow one position per step."""

    def __init__(self, w: seq2seq.TransformerWeights, enc_out: np.ndarray, n: int):
        cfg = w.cfg
        p = {name: t.data for name, t in w.params.items()}
        self.cfg = cfg
        self.p = p
        self.n = n
        self.heads = cfg.heads
        self.dh = cfg.d_model // cfg.heads
        self.scale = np.float32(1.0 / np.sqrt(self.dh))
        S = enc_out.shape[1]
        self.cross = []
        for i in range(cfg.dec_layers):
            pre = f"dec.b{i}.xattn"
            k = enc_out @ p[pre + ".wk"] + p[pre + ".bk"]
            v = enc_out @ p[pre + ".wv"] + p[pre + ".bv"]
            k = k.reshape(-1, S, self.heads, self.dh).transpose(0, 2, 1, 3)
            v = v.reshape(-1, S, self.heads, self.dh).transpose(0, 2, 1, 3)
            if k.shape[0] == 1 and n > 1:
                k = np.broadcast_to(k, (n,) + k.shape[1:])
                v = np.broadcast_to(v, (n,) + v.shape[1:])
            self.cross.append((np.ascontiguousarray(k), np.ascontiguousarray(v)))
        L = cfg.image_len
        self.keys = [np.empty((n, self.heads, L, self.dh), dtype=np.float32)
                     for _ in range(cfg.dec_layers)]
        self.vals = [np.empty((n, self.heads, L, self.dh), dtype=np.float32)
                     for _ in range(cfg.dec_layers)]

    def _heads_of(self, x):
        return x.reshape(self.n, self.heads, self.dh)

    def _attn_self(self, pre, x, layer, t, allowed_row):
        p = self.p
        q = self._heads_of(x @ p[pre + ".wq"] + p[pre + ".bq"])
        self.keys[layer][:, :, t, :] = self._heads_of(x @ p[pre + ".wk"] + p[pre + ".bk"])
        self.vals[layer][:, :, t, :] = self._heads_of(x @ p[pre + ".wv"] + p[pre + ".bv"])
        ks = self.keys[layer][:, :, :t + 1, :]
        vs = self.vals[layer][:, :, :t + 1, :]
        scores = np.einsum("bhd,bhsd->bhs", q, ks) * self.scale
        scores = np.where(allowed_row[:t + 1], scores, np.float32(NEG_FILL))
        scores -= scores.max(axis=-1, keepdims=True)
        att = np.exp(scores)
        att /= att.sum(axis=-1, keepdims=True)
        out = np.einsum("bhs,bhsd->bhd", att, vs).reshape(self.n, -1)
        return out @ p[pre + ".wo"] + p[pre + ".bo"]

    def _attn_cross(self, pre, x, layer):
        p = self.p
        q = self._heads_of(x @ p[pre + ".wq"] + p[pre + ".bq"])
        ks, vs = self.cross[layer]
        scores = np.einsum("bhd,bhsd->bhs", q, ks) * self.scale
        scores -= scores.max(axis=-1, keepdims=True)
        att = np.exp(scores)
        att /= att.sum(axis=-1, keepdims=True)
        out = np.einsum("bhs,bhsd->bhd", att, vs).reshape(self.n, -1)
        return out @ p[pre + ".wo"] + p[pre + ".bo"]

    def step_logits(self, prev_tokens, t: int, allowed_row) -> np.ndarray:
        """Advance to position t given the token drawn at t-1 (None at t=0);
        returns next-token logits (n, image_vocab)."""
        cfg = self.cfg
        p = self.p
        if t == 0:
            x = np.broadcast_to(p["dec.start"], (self.n, cfg.d_model))
        else:
            x = p["image_emb"][prev_tokens]
        x = (x + p["image_pos"][t]).astype(np.float32)
        for i in range(cfg.dec_layers):
            pre = f"dec.b{i}"
            h = _ln(x, p[pre + ".ln1.g"], p[pre + ".ln1.b"])
            x = x + self._attn_self(pre + ".attn", h, i, t, allowed_row)
            h = _ln(x, p[pre + ".lnx.g"], p[pre + ".lnx.b"])
            x = x + self._attn_cross(pre + ".xattn", h, i)
            h = _ln(x, p[pre + ".ln2.g"], p[pre + ".ln2.b"])
            h = _gelu(h @ p[pre + ".mlp.fc1.w"] + p[pre + ".mlp.fc1.b"])
            x = x + (h @ p[pre + ".mlp.fc2.w"] + p[pre + ".mlp.fc2.b"])
        x = _ln(x, p["dec.ln_out.g"], p["dec.ln_out.b"])
        return x @ p["out.w"] + p["out.b"]


def _filter_top_k(z: np.ndarray, k: int) -> np.ndarray:
    if k <= 0 or k >= z.shape[-1]:
        return z
    kth = np.partition(z, -k, axis=-1)[:, -k, None]
    return np.where(z < kth, np.float32(-np.inf), z)


def _probs_from(logits: np.ndarray, cfg: SamplerConfig) -> np.ndarray:
    z = logits / np.float32(cfg.temperature)
    z = _filter_top_k(z, cfg.top_k)
    m = z.max(axis=-1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise NumericError("sampling: a logit row has no finite entries")
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def _draw(probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical draw; smallest index whose cdf exceeds u."""
    cdf = np.cumsum(probs.astype(np.float64), axis=-1)
    cdf[:, -1] = 1.0  # absorb accumulated rounding
    idx = (cdf <= uniforms[:, None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def _run_chains(w: seq2seq.TransformerWeights, text_ids, n: int,
                cfg: SamplerConfig, uniform_fn) -> np.ndarray:
    """Sample n token grids for one prompt; uniform_fn(t) -> (n,) uniforms."""
    mcfg = w.cfg
    cfg.validate(mcfg.image_vocab)
    text_ids = np.asarray(text_ids)
    if text_ids.ndim == 1:
        text_ids = text_ids[None]
    if cfg.guidance != 1.0:
        pad = np.full_like(text_ids, textproc.PAD_ID)
        uncond = _Branch(w, seq2seq.encode_text(w, pad).data, n)
    else:
        uncond = None
    if cfg.guidance != 0.0:
        cond = _Branch(w, seq2seq.encode_text(w, text_ids).data, n)
    else:
        cond = None
    tokens = np.zeros((n, mcfg.image_len), dtype=np.int64)
    prev = None
    for t in range(mcfg.image_len):
        row = w.mask[t]
        lu = uncond.step_logits(prev, t, row) if uncond is not None else None
        lc = cond.step_logits(prev, t, row) if cond is not None else None
        if lu is None:
            logits = lc
        elif lc is None:
            logits = lu
        else:
            logits = guided_logits(lu, lc, cfg.guidance)
        probs = _probs_from(logits, cfg)
        if cfg.top_k == 1:
            prev = np.argmax(probs, axis=-1)
        else:
            prev = _draw(probs, uniform_fn(t))
        tokens[:, t] = prev
    return tokens.reshape(n, mcfg.grid_h, mcfg.grid_w)


def sample_tokens(w: seq2seq.TransformerWeights, text_ids,
                  cfg: SamplerConfig) -> np.ndarray:
    """One (grid_h, grid_w) token grid from a single stream seeded by cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    grids = _run_chains(w, text_ids, 1, cfg, lambda t: rng.random(1))
    return grids[0]


def sample_token_batch(w: seq2seq.TransformerWeights, text_ids,
                       cfg: SamplerConfig) -> np.ndarray:
    """(n_samples, grid_h, grid_w) grids; sample i draws from the stream
    spawned as SeedSequence(seed, spawn_key=(i,))."""
    rngs = [np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(i,)))
            for i in range(cfg.n_samples)]

    def uniforms(t):
        return np.array([r.random() for r in rngs])

    return _run_chains(w, text_ids, cfg.n_samples, cfg, uniforms)


def generate(w: seq2seq.TransformerWeights, vocab, tokenizer: vq.TokenizerWeights,
             text: str, cfg: SamplerConfig,
             sr: "vq.SRWeights | None" = None) -> SampleBatch:
    """Prompt to images: sample grids, decode to pixels, optionally upsample."""
    ids = textproc.encode_clipped(vocab, text, w.cfg.text_len)
    grids = sample_token_batch(w, np.asarray(ids), cfg)
    images = vq.detokenize(tokenizer, grids)
    if sr is not None:
        images = vq.upsample(sr, images)
    return SampleBatch(prompt=text, grids=grids, images=images, seed=cfg.seed)


def rerank(batch: SampleBatch, scorer) -> SampleBatch:
    """Order a batch by scorer(images, prompt), best first; ties keep their
    original order, so a constant scorer leaves the batch unchanged."""
    n = len(batch.grids)
    if n == 0:
        raise DataError("rerank: empty batch")
    scores = np.asarray(scorer(batch.images, batch.prompt), dtype=np.float64)
    if scores.shape != (n,):
        raise DataError(f"rerank: scorer must return ({n},) scores, got {scores.shape}")
    order = np.argsort(-scores, kind="stable")
    return SampleBatch(prompt=batch.prompt, grids=batch.grids[order],
                       images=batch.images[order], scores=scores[order],
                       seed=batch.seed)
