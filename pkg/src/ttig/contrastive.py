"""Dual-encoder image-text alignment model and exact retrieval.

Two small transformer towers project images and captions into a shared
unit-sphere space of dimension d_e. Training pulls matched pairs together
with a symmetric cross-entropy over the temperature-scaled in-batch
similarity matrix. The resulting cosine is the reranking score, and the
image side doubles as the feature extractor for distribution metrics.

Retrieval is an exact scan: cosine against every indexed embedding,
descending, ties broken toward the lower identifier.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn, optim, textproc, vq
from . import tensor as T
from .errors import DataError, NumericError


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 32
    patch: int = 4
    d_model: int = 64
    n_blocks: int = 2
    heads: int = 4
    d_mlp: int = 128
    d_e: int = 32
    text_vocab: int = 512
    text_len: int = 32
    tau_init: float = 1.0 / 0.07
    tau_min: float = 1e-3

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch) ** 2

    @property
    def patch_dim(self) -> int:
        return 3 * self.patch * self.patch

    def validate(self):
        if self.image_size % self.patch:
            raise DataError("patch must divide image_size")
        if self.d_model % self.heads:
            raise DataError("heads must divide d_model")
        if self.tau_init <= 0:
            raise DataError("tau_init must be positive")
        return self


@dataclass
class DualEncoder:
    cfg: EncoderConfig
    params: nn.ParamSet

    @property
    def tau(self) -> float:
        return float(self.params["tau"].data[0, 0])


def build_encoder(cfg: EncoderConfig, seed: int = 0) -> DualEncoder:
    cfg.validate()
    rng = np.random.default_rng(seed)
    ps = nn.ParamSet()
    nn.add_linear(ps, "img.in", cfg.patch_dim, cfg.d_model, rng)
    ps.add("img.pos", nn.trunc_normal(rng, (cfg.n_patches, cfg.d_model)))
    for i in range(cfg.n_blocks):
        nn.add_block(ps, f"img.b{i}", cfg.d_model, cfg.d_mlp, rng)
    nn.add_ln(ps, "img.ln_out", cfg.d_model)
    nn.add_linear(ps, "img.proj", cfg.d_model, cfg.d_e, rng)
    ps.add("txt.emb", nn.trunc_normal(rng, (cfg.text_vocab, cfg.d_model)))
    ps.add("txt.pos", nn.trunc_normal(rng, (cfg.text_len, cfg.d_model)))
    for i in range(cfg.n_blocks):
        nn.add_block(ps, f"txt.b{i}", cfg.d_model, cfg.d_mlp, rng)
    nn.add_ln(ps, "txt.ln_out", cfg.d_model)
    nn.add_linear(ps, "txt.proj", cfg.d_model, cfg.d_e, rng)
    ps.add("tau", np.array([[cfg.tau_init]], dtype=np.float32))
    return DualEncoder(cfg=cfg, params=ps)


def _image_pooled(enc: DualEncoder, images: np.ndarray):
    """Mean-pooled image-tower features (B, d_model), before projection."""
    cfg = enc.cfg
    p = enc.params
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[None]
    if images.shape[1:] != (cfg.image_size, cfg.image_size, 3):
        raise DataError(f"expected {cfg.image_size}x{cfg.image_size}x3 images, "
                        f"got {images.shape[1:]}")
    x = nn.linear(p, "img.in", T.constant(vq.patchify(images, cfg.patch)))
    x = T.add(x, p["img.pos"])
    for i in range(cfg.n_blocks):
        x = nn.block(p, f"img.b{i}", x, cfg.heads)
    x = nn.ln_affine(p, "img.ln_out", x)
    return T.reduce_mean(x, axis=1)


def _text_pooled(enc: DualEncoder, text_ids: np.ndarray):
    cfg = enc.cfg
    p = enc.params
    ids = np.asarray(text_ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None]
    if ids.shape[1] != cfg.text_len:
        raise DataError(f"text rows must have length {cfg.text_len}, got {ids.shape[1]}")
    if ids.min() < 0 or ids.max() >= cfg.text_vocab:
        raise DataError("text id out of range")
    x = T.embedding_gather(p["txt.emb"], ids.reshape(-1))
    x = T.reshape(x, (ids.shape[0], cfg.text_len, cfg.d_model))
    x = T.add(x, p["txt.pos"])
    for i in range(cfg.n_blocks):
        x = nn.block(p, f"txt.b{i}", x, cfg.heads)
    x = nn.ln_affine(p, "txt.ln_out", x)
    return T.reduce_mean(x, axis=1)


def _project(p: nn.ParamSet, pre: str, pooled):
    return T.l2_normalize(nn.linear(p, pre, pooled), axis=-1, eps=1e-12)


def embed_image(enc: DualEncoder, images: np.ndarray) -> np.ndarray:
    """Unit-norm projected image embeddings (n, d_e)."""
    return _project(enc.params, "img.proj", _image_pooled(enc, images)).data


def embed_text(enc: DualEncoder, text_ids) -> np.ndarray:
    """Unit-norm projected text embeddings (n, d_e); rows padded to text_len."""
    return _project(enc.params, "txt.proj", _text_pooled(enc, _pad_rows(enc.cfg, text_ids))).data


def image_features(enc: DualEncoder, images: np.ndarray) -> np.ndarray:
    """Pooled pre-projection features (n, d_model); the FID feature hook."""
    return _image_pooled(enc, images).data


def _pad_rows(cfg: EncoderConfig, text_ids):
    """Accept one id list or a list of lists; clip/pad every row to text_len."""
    if isinstance(text_ids, np.ndarray) and text_ids.ndim == 2:
        return text_ids
    rows = text_ids
    if len(rows) and np.isscalar(rows[0]):
        rows = [rows]
    out = np.zeros((len(rows), cfg.text_len), dtype=np.int64)
    for i, r in enumerate(rows):
        r = list(r)[:cfg.text_len]
        out[i, :len(r)] = r
    return out


def alignment_score(enc: DualEncoder, image: np.ndarray, text_ids) -> float:
    """Cosine between projected embeddings, in [-1, 1]."""
    zi = embed_image(enc, image)
    zt = embed_text(enc, text_ids)
    return float(zi[0] @ zt[0])


def make_scorer(enc: DualEncoder, vocab: textproc.Vocab):
    """rerank-compatible scorer: (images, prompt) -> per-image cosines."""
    def scorer(images, prompt):
        ids = textproc.encode_clipped(vocab, prompt, enc.cfg.text_len)
        zt = embed_text(enc, ids)[0]
        return embed_image(enc, images) @ zt
    return scorer


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class CLTrainConfig:
    steps: int = 600
    batch: int = 32
    lr: float = 2e-3
    seed: int = 0
    warmup: int = 50
    log_every: int = 50


def contrastive_loss(enc: DualEncoder, images: np.ndarray, text_ids: np.ndarray):
    """Symmetric InfoNCE over the tau-scaled in-batch similarity matrix."""
    B = len(images)
    if B < 2:
        raise DataError("contrastive loss needs at least 2 pairs per batch")
    zi = _project(enc.params, "img.proj", _image_pooled(enc, images))
    zt = _project(enc.params, "txt.proj", _text_pooled(enc, text_ids))
    sim = T.matmul(zi, T.transpose(zt, (1, 0)))
    flat = T.reshape(sim, (B * B, 1))
    sim = T.reshape(T.matmul(flat, enc.params["tau"]), (B, B))
    labels = np.arange(B)
    i2t = T.reduce_mean(T.cross_entropy_with_logits(sim, labels))
    t2i = T.reduce_mean(T.cross_entropy_with_logits(T.transpose(sim, (1, 0)), labels))
    return T.scale(T.add(i2t, t2i), 0.5)


def train_contrastive(images: np.ndarray, captions_ids, tcfg: CLTrainConfig,
                      cfg: EncoderConfig | None = None,
                      hook=None):
    """Train a dual encoder on paired (image, caption-id) data.

    captions_ids is one id row per image (variable length ok, padded here).
    Returns (encoder, loss history).
    """
    cfg = cfg or EncoderConfig()
    if tcfg.batch < 2:
        raise DataError("contrastive batch must be >= 2 (in-batch negatives)")
    n = len(images)
    if n < tcfg.batch:
        raise DataError(f"need at least {tcfg.batch} pairs, got {n}")
    enc = build_encoder(cfg, seed=tcfg.seed)
    text = _pad_rows(cfg, captions_ids)
    ocfg = optim.OptimizerConfig(base_lr=tcfg.lr, warmup=tcfg.warmup,
                                 decay_start=tcfg.steps // 2, total_steps=tcfg.steps,
                                 final_ratio=0.1)
    state = optim.OptimizerState()
    rng = np.random.default_rng(tcfg.seed + 1)
    history = []
    tau = enc.params["tau"]
    for step in range(tcfg.steps):
        idx = rng.choice(n, size=tcfg.batch, replace=False)
        with T.Tape():
            loss = contrastive_loss(enc, images[idx], text[idx])
        val = float(loss.data)
        if not np.isfinite(val):
            raise NumericError(f"contrastive loss diverged at step {step}")
        grads = nn.grads_of(loss, enc.params)
        optim.adafactor_step(enc.params, grads, state, ocfg)
        np.maximum(tau.data, cfg.tau_min, out=tau.data)
        history.append(val)
        if hook and (step % tcfg.log_every == 0 or step == tcfg.steps - 1):
            hook(step, val)
    return enc, history


# ---------------------------------------------------------------------------
# retrieval

@dataclass
class RetrievalIndex:
    embeddings: np.ndarray        # (n, d_e), unit rows
    ids: np.ndarray               # (n,) integer identifiers

    def __len__(self):
        return len(self.ids)


def build_index(enc: DualEncoder, images: np.ndarray, ids=None) -> RetrievalIndex:
    if len(images) == 0:
        raise DataError("build_index: empty image set")
    emb = embed_image(enc, images).astype(np.float32)
    if ids is None:
        ids = np.arange(len(images))
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) != len(emb):
        raise DataError("build_index: ids length mismatch")
    return RetrievalIndex(embeddings=emb, ids=ids)


def retrieve_nearest(enc: DualEncoder, index: RetrievalIndex, text_ids, k: int):
    """Exact top-k by cosine, descending; ties broken by lower identifier."""
    n = len(index)
    if not 1 <= k <= n:
        raise DataError(f"k must be in [1, {n}], got {k}")
    zt = embed_text(enc, text_ids)[0]
    sims = index.embeddings @ zt
    order = np.lexsort((index.ids, -sims))
    top = order[:k]
    return index.ids[top], sims[top]


def save_index(index: RetrievalIndex, path):
    """Manifest JSON next to raw little-endian float32 rows."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    emb = np.ascontiguousarray(index.embeddings, dtype="<f4")
    (path / "embeddings.bin").write_bytes(emb.tobytes())
    manifest = {
        "format_version": 1,
        "n": int(len(index)),
        "d_e": int(index.embeddings.shape[1]),
        "dtype": "<f4",
        "ids": [int(i) for i in index.ids],
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_index(path) -> RetrievalIndex:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError:
        raise DataError(f"{path} is not a saved index directory") from None
    except json.JSONDecodeError as e:
        raise DataError(f"index manifest at {path} is not valid JSON: {e}") from None
    if manifest.get("format_version") != 1:
        raise DataError(f"unsupported index format: {manifest.get('format_version')}")
    n, d = manifest["n"], manifest["d_e"]
    raw = (path / "embeddings.bin").read_bytes()
    emb = np.frombuffer(raw, dtype=manifest["dtype"], count=n * d).reshape(n, d)
    if len(manifest["ids"]) != n:
        raise DataError("index manifest ids length mismatch")
    return RetrievalIndex(embeddings=emb.astype(np.float32),
                          ids=np.asarray(manifest["ids"], dtype=np.int64))
