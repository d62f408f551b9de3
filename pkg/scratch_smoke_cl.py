import time
import numpy as np

from ttig import contrastive as cl
from ttig import scenes, textproc
from ttig.errors import DataError

rng = np.random.default_rng(0)

ds = scenes.gen_dataset(256, seed=1)
images = ds.images
corpus = ds.captions
vocab = textproc.train_bpe(corpus, vocab_size=512)
cap_ids = [textproc.encode_clipped(vocab, c, 32) for c in corpus]

cfg = cl.EncoderConfig()
enc = cl.build_encoder(cfg, seed=0)

# embeddings unit norm
zi = cl.embed_image(enc, images[:8])
zt = cl.embed_text(enc, cap_ids[:8])
assert np.allclose(np.linalg.norm(zi, axis=1), 1.0, atol=1e-5)
assert np.allclose(np.linalg.norm(zt, axis=1), 1.0, atol=1e-5)
print("unit norms OK")

# init loss ~ ln(8)
from ttig import tensor as T
text8 = cl._pad_rows(cfg, cap_ids[:8])
loss = cl.contrastive_loss(enc, images[:8], text8)
print(f"init loss batch 8: {float(loss.data):.4f} (ln8={np.log(8):.4f})")
assert abs(float(loss.data) - np.log(8)) < 0.3

# permutation equivariance
perm = rng.permutation(8)
loss_p = cl.contrastive_loss(enc, images[:8][perm], text8[perm])
print(f"perm delta: {abs(float(loss.data)-float(loss_p.data)):.2e}")
assert abs(float(loss.data) - float(loss_p.data)) < 1e-5

# batch of 1 -> error
try:
    cl.contrastive_loss(enc, images[:1], text8[:1]); raise SystemExit("no batch-1 error")
except DataError:
    pass
try:
    cl.train_contrastive(images, cap_ids, cl.CLTrainConfig(steps=1, batch=1))
    raise SystemExit("no batch-1 train error")
except DataError:
    pass
print("batch-1 contract OK")

# alignment_score bounds + cached-embedding consistency
s = cl.alignment_score(enc, images[0], cap_ids[0])
assert -1.0 <= s <= 1.0
zi0 = cl.embed_image(enc, images[0])[0]; zt0 = cl.embed_text(enc, cap_ids[0])[0]
assert abs(s - float(zi0 @ zt0)) < 1e-6
print("alignment_score OK")

# lr=0 -> params unchanged
snap = {k: v.data.copy() for k, v in enc.params.items()}
enc0, hist0 = cl.train_contrastive(images, cap_ids, cl.CLTrainConfig(steps=3, batch=8, lr=0.0, warmup=0))
# train_contrastive builds fresh; instead check via direct loop on enc... simpler: fresh encoder trained at lr=0 equals fresh build
enc_ref = cl.build_encoder(cl.EncoderConfig(), seed=0)
same = all(np.array_equal(enc0.params[k].data, enc_ref.params[k].data) for k in enc_ref.params.names())
assert same, "lr=0 must leave the encoder at init"
print("lr=0 no-op OK")

# index + retrieval on raw init encoder
idx = cl.build_index(enc, images[:32])
assert len(idx) == 32
assert np.allclose(np.linalg.norm(idx.embeddings, axis=1), 1.0, atol=1e-5)
idx2 = cl.build_index(enc, images[:32])
assert np.array_equal(idx.embeddings, idx2.embeddings)
ids, sims = cl.retrieve_nearest(enc, idx, cap_ids[0], k=32)
assert sorted(ids.tolist()) == list(range(32))
assert np.all(np.diff(sims) <= 1e-12)
# brute force agreement
zt0 = cl.embed_text(enc, cap_ids[0])[0]
bf = idx.embeddings @ zt0
order = np.lexsort((idx.ids, -bf))
assert np.array_equal(ids, idx.ids[order[:32]])
for bad_k in (0, 33):
    try:
        cl.retrieve_nearest(enc, idx, cap_ids[0], k=bad_k); raise SystemExit("no k error")
    except DataError:
        pass
print("retrieval scan OK")

# tie break toward lower identifier
tied = cl.RetrievalIndex(embeddings=np.tile(zt0, (3, 1)).astype(np.float32), ids=np.array([7, 3, 5]))
tids, tsims = cl.retrieve_nearest(enc, tied, cap_ids[0], k=3)
assert np.all(np.diff(tsims) <= 0)
for v in np.unique(tsims):
    run = tids[tsims == v]
    assert np.all(np.diff(run) > 0), (tids, tsims)
print("tie-break OK")

# persistence round trip
import tempfile, pathlib
with tempfile.TemporaryDirectory() as d:
    cl.save_index(idx, d)
    back = cl.load_index(d)
    assert np.array_equal(back.embeddings, idx.embeddings)
    assert np.array_equal(back.ids, idx.ids)
print("index persistence OK")

# short real training run: does matched beat mismatched?
t0 = time.time()
enc_t, hist = cl.train_contrastive(images, cap_ids, cl.CLTrainConfig(steps=300, batch=32, lr=2e-3, seed=0))
dt = time.time() - t0
print(f"300 steps in {dt:.1f}s ({1e3*dt/300:.0f} ms/step); loss {hist[0]:.3f} -> {np.mean(hist[-20:]):.3f}")
ho = scenes.gen_dataset(64, seed=99)
ho_ids = [textproc.encode_clipped(vocab, c, 32) for c in ho.captions]
zi = cl.embed_image(enc_t, ho.images)
zt = cl.embed_text(enc_t, ho_ids)
simm = zi @ zt.T
matched = np.mean(np.diag(simm))
mis = (simm.sum() - np.trace(simm)) / (simm.size - len(simm))
print(f"held-out matched {matched:.3f} vs mismatched {mis:.3f}")
assert matched > mis
# retrieval accuracy on train captions
idx_t = cl.build_index(enc_t, images)
hit = 0
for i in range(100):
    got, _ = cl.retrieve_nearest(enc_t, idx_t, cap_ids[i], k=1)
    # count as hit if retrieved image's caption matches the query caption
    hit += corpus[got[0]] == corpus[i]
print(f"top-1 caption-match retrieval (300 quick steps): {hit}/100")
print(f"tau after training: {enc_t.tau:.2f}")
print("ALL CONTRASTIVE SMOKE OK")
