import numpy as np
import time
from ttig import tensor as T, nn, optim, vq, scenes

# --- optimizer schedule endpoints
cfg = optim.OptimizerConfig(base_lr=1.0, warmup=100, decay_start=400, total_steps=1000, final_ratio=0.025)
assert optim.lr_at(0, cfg) == 0.0
assert optim.lr_at(50, cfg) == 0.5
assert optim.lr_at(100, cfg) == 1.0
assert optim.lr_at(400, cfg) == 1.0
assert abs(optim.lr_at(1000, cfg) - 0.025) < 1e-12
assert abs(optim.lr_at(5000, cfg) - 0.025) < 1e-12
mid = optim.lr_at(700, cfg)
assert abs(mid - 0.025 ** 0.5) < 1e-12, mid
print("lr schedule ok")

# --- clip factor: norm 8 with clip 4 == pre-halved grads with clip off
rng = np.random.default_rng(0)
w0 = rng.standard_normal((4, 5)).astype(np.float32)
g = rng.standard_normal((4, 5))
g = g / np.linalg.norm(g) * 8.0
ps1 = nn.ParamSet(); ps1.add("w", w0.copy())
ps2 = nn.ParamSet(); ps2.add("w", w0.copy())
c1 = optim.OptimizerConfig(base_lr=0.1, warmup=1, clip_norm=4.0)
c2 = optim.OptimizerConfig(base_lr=0.1, warmup=1, clip_norm=1e18)
s1, s2 = optim.OptimizerState(), optim.OptimizerState()
s1.step = s2.step = 5
optim.adafactor_step(ps1, {"w": g}, s1, c1)
optim.adafactor_step(ps2, {"w": g * 0.5}, s2, c2)
assert np.array_equal(ps1["w"].data, ps2["w"].data)
print("clip factor ok")

# --- factored memory shapes
assert s1.second["w"][0].shape == (4,) and s1.second["w"][1].shape == (5,)
ps3 = nn.ParamSet(); ps3.add("v", np.zeros(7, dtype=np.float32))
s3 = optim.OptimizerState(); s3.step = 1
optim.adafactor_step(ps3, {"v": np.ones(7)}, s3, c2)
assert s3.second["v"].shape == (7,)
assert s1.first_q["w"].dtype == np.int8
print("factored state ok")

# --- int8 first-moment bound: |dequant - m| <= scale/127
q, sc = s1.first_q["w"], s1.first_scale["w"]
# recompute m exactly
print("int8 scale", sc, "max abs err bound", sc / 127.0)

# --- toy regression converges
rng = np.random.default_rng(1)
X = rng.standard_normal((64, 8)).astype(np.float32)
true_w = rng.standard_normal((8, 3)).astype(np.float32)
Y = X @ true_w
ps = nn.ParamSet()
nn.add_linear(ps, "lin", 8, 3, rng)
st = optim.OptimizerState()
oc = optim.OptimizerConfig(base_lr=0.05, warmup=10, decay_start=150, total_steps=200)
first = last = None
for step in range(200):
    with T.Tape():
        pred = nn.linear(ps, "lin", T.constant(X))
        loss = nn.mse(pred, T.constant(Y))
    gm = T.backward(loss)
    grads = {n: gm[t.node_id].data for n, t in ps.items() if t.node_id in gm}
    optim.adafactor_step(ps, grads, st, oc)
    if first is None:
        first = float(loss.data)
    last = float(loss.data)
print(f"toy regression loss {first:.4f} -> {last:.6f}")
assert last < first * 0.05

# --- quantize hand example
cb = np.array([[1.0, 0.0], [0.0, 1.0]])
ids, zq, cl, co = vq.quantize(cb, np.array([[0.9, 0.1], [0.1, 0.9]]))
assert ids.tolist() == [0, 1]
assert np.allclose(zq, cb)
zh = np.array([0.9, 0.1]) / np.hypot(0.9, 0.1)
expect = ((zh - np.array([1.0, 0.0])) ** 2).sum()
zh2 = np.array([0.1, 0.9]) / np.hypot(0.9, 0.1)
expect2 = ((zh2 - np.array([0.0, 1.0])) ** 2).sum()
assert abs(cl - (expect + expect2) / 2) < 1e-12
assert cl == co
# exact entry -> zero loss
ids2, _, cl2, co2 = vq.quantize(cb, cb * 3.0)
assert ids2.tolist() == [0, 1] and cl2 == 0.0 and co2 == 0.0
# tie goes to lowest index
idst, _, _, _ = vq.quantize(np.array([[1.0, 0.0], [1.0, 0.0]]), np.array([[2.0, 0.0]]))
assert idst.tolist() == [0]
# zero-norm error
try:
    vq.quantize(cb, np.zeros((1, 2)))
    raise AssertionError("expected NumericError")
except Exception as e:
    assert type(e).__name__ == "NumericError"
print("quantize hand cases ok")

# --- straight-through identity: d z_q_st / d z is exactly ones
z = T.Tensor(np.array([[0.3, -0.4], [1.0, 2.0]], dtype=np.float32), requires_grad=True)
with T.Tape():
    zn = T.l2_normalize(z, axis=-1, eps=0.0)
    ids3, zq3, _, _ = vq.quantize(cb, zn.data)
    st_out = T.add(z, T.constant((cb[ids3] - z.data).astype(np.float32)))
    s = T.reduce_sum(st_out)
gm = T.backward(s)
gz = gm[z.node_id].data
assert np.array_equal(gz, np.ones_like(gz)), gz
print("straight-through exact ones ok")

# --- build + tokenize/detokenize shapes, idempotence
tc = vq.TokenizerConfig()
w = vq.build_tokenizer(tc, seed=0)
ds = scenes.gen_dataset(8, seed=5)
imgs = ds.images
grid = vq.tokenize(w, imgs[0])
assert grid.shape == (8, 8) and grid.dtype.kind == "i"
grids = vq.tokenize(w, imgs)
assert grids.shape == (8, 8, 8)
rec = vq.detokenize(w, grid)
assert rec.shape == (32, 32, 3) and rec.min() >= 0.0 and rec.max() <= 1.0
recs = vq.detokenize(w, grids)
assert recs.shape == (8, 32, 32, 3)
# patchify roundtrip
pp = vq.patchify(imgs, 4)
assert np.array_equal(vq.unpatchify(pp, 4, 8), imgs.astype(np.float32))
# quantize idempotence at the z level
z = vq._encode_tensor(w, imgs[:2]).data
i1, zq1, _, _ = vq.quantize(w.codebook, z)
i2, _, _, _ = vq.quantize(w.codebook, zq1)
assert np.array_equal(i1, i2)
print("tokenize/detokenize shapes + idempotence ok")

# --- codebook_stats closed form
stats = vq.codebook_stats([0, 0, 1], 4)
assert abs(stats["usage_fraction"] - 0.5) < 1e-12
assert abs(stats["perplexity"] - np.exp(-(2/3*np.log(2/3) + 1/3*np.log(1/3)))) < 1e-9
print("codebook_stats", stats)

# --- short tokenizer training run: loss must drop
t0 = time.time()
tcfg = vq.TokTrainConfig(steps=120, lr=3e-3, batch=16, seed=0, warmup=20)
w2, hist = vq.train_tokenizer(imgs, tc, tcfg)
print(f"tok train 120 steps: {hist[0]:.4f} -> {np.mean(hist[-10:]):.4f}  ({time.time()-t0:.1f}s)")
assert np.mean(hist[-10:]) < hist[0]
norms = np.linalg.norm(w2.codebook, axis=1)
assert np.max(np.abs(norms - 1.0)) < 1e-5, norms
print("codebook rows unit norm after training ok")

# --- decoder rebuild shares encoder/codebook
w3 = vq.rebuild_decoder(w2, dec_d_model=96, dec_blocks=3, seed=7)
assert w3.params["enc.in.w"] is w2.params["enc.in.w"]
assert w3.params["codebook"] is w2.params["codebook"]
assert w3.params["dec.in.w"].shape == (8, 96)
g_before = vq.tokenize(w3, imgs[0])
assert np.array_equal(g_before, vq.tokenize(w2, imgs[0]))
_, h3 = vq.train_decoder_only(w3, imgs, vq.TokTrainConfig(steps=30, lr=3e-3, batch=8, warmup=5))
assert np.array_equal(vq.tokenize(w3, imgs[0]), g_before)  # encoder untouched
print("decoder rebuild/finetune ok")

# --- SR head shapes + quick fit
lo = ds.images
hi = np.stack([scenes.render(s, size=64) for s in ds.specs])
sw = vq.build_sr(vq.SRConfig(n_blocks=2, channels=8), seed=0)
up = vq.upsample(sw, lo[0])
assert up.shape == (64, 64, 3)
t0 = time.time()
sw2, sh = vq.train_sr(lo, hi, vq.SRConfig(n_blocks=2, channels=8), steps=60, batch=4)
base = float(np.mean((vq.nn_upsample_baseline(lo) - hi) ** 2))
fit = float(np.mean((vq.upsample(sw2, lo) - hi) ** 2))
print(f"sr 60 steps: {sh[0]:.5f} -> {sh[-1]:.5f}; baseline {base:.5f} fit {fit:.5f} ({time.time()-t0:.1f}s)")
print("ALL VQ/OPTIM SMOKE OK")
