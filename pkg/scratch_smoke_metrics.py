import numpy as np
from ttig import metrics, scenes, contrastive as cl
from ttig.errors import DataError, NumericError

rng = np.random.default_rng(0)

# gaussian_stats hand cases
gs = metrics.gaussian_stats(np.array([[0.0], [2.0]]))
assert np.allclose(gs.mu, [1.0]) and np.allclose(gs.sigma, [[2.0]]), (gs.mu, gs.sigma)
same = metrics.gaussian_stats(np.array([[1.0, 2.0], [1.0, 2.0]]))
assert np.allclose(same.sigma, 0.0)
x = rng.standard_normal((50, 4))
a = metrics.gaussian_stats(x)
b = metrics.gaussian_stats(x[rng.permutation(50)])
assert np.allclose(a.mu, b.mu) and np.allclose(a.sigma, b.sigma)
try:
    metrics.gaussian_stats(x[:1]); raise SystemExit("no n<2 error")
except DataError:
    pass
print("gaussian_stats OK")

# frechet closed forms
def g(mu, var):
    return metrics.GaussianStats(mu=np.atleast_1d(np.float64(mu)),
                                 sigma=np.atleast_2d(np.float64(var)), n=10)
assert abs(metrics.frechet_distance(g(0, 1), g(1, 1)) - 1.0) < 1e-12
assert abs(metrics.frechet_distance(g(0, 1), g(0, 4)) - 1.0) < 1e-12
assert metrics.frechet_distance(a, a) < 1e-9
# symmetry + diagonal closed form, d up to 8
for d in range(1, 9):
    mua, mub = rng.standard_normal(d), rng.standard_normal(d)
    va, vb = rng.random(d) + 0.1, rng.random(d) + 0.1
    A = metrics.GaussianStats(mua, np.diag(va), 10)
    B = metrics.GaussianStats(mub, np.diag(vb), 10)
    got = metrics.frechet_distance(A, B)
    want = float(np.sum((mua - mub) ** 2 + (np.sqrt(va) - np.sqrt(vb)) ** 2))
    assert abs(got - want) < 1e-8, (d, got, want)
    assert abs(got - metrics.frechet_distance(B, A)) < 1e-8
try:
    metrics.frechet_distance(g(0, 1), metrics.GaussianStats(np.zeros(2), np.eye(2), 5))
    raise SystemExit("no dim error")
except DataError:
    pass
print("frechet closed forms OK")

# fid on feature sets
enc = cl.build_encoder(cl.EncoderConfig(), seed=0)
ds = scenes.gen_dataset(24, seed=3)
f = lambda imgs: cl.image_features(enc, imgs)
z = metrics.fid(ds.images, ds.images, f)
assert z <= 1e-6, z
half = metrics.fid(ds.images[:12], ds.images[12:], f)
perm = rng.permutation(12)
half_p = metrics.fid(ds.images[:12][perm], ds.images[12:], f)
assert abs(half - half_p) < 1e-8
print(f"fid same-set {z:.2e}, split halves {half:.4f}")

# disjoint classes farther apart than same-class split
red_circ = [scenes.SceneSpec(objects=(scenes.SceneObject("circle", "red", (r, c)),))
            for r in range(2) for c in range(2)] * 3
blue_sq = [scenes.SceneSpec(objects=(scenes.SceneObject("square", "blue", (r, c)),))
           for r in range(2) for c in range(2)] * 3
ri = np.stack([scenes.render(s) for s in red_circ])
bi = np.stack([scenes.render(s) for s in blue_sq])
across = metrics.fid(ri, bi, f)
within = metrics.fid(ri[:6], ri[6:], f)
print(f"across-class {across:.4f} vs within-class {within:.4f}")
assert across > within

# per-image feature_fn also accepted
one = lambda img: cl.image_features(enc, img)[0]
z1 = metrics.fid(ds.images[:4], ds.images[:4], one)
assert z1 <= 1e-6
print("fid OK")

# oracle: renderer duality over a sweep of specs
srng = np.random.default_rng(5)
for _ in range(40):
    spec = scenes.sample_spec(srng)
    assert metrics.alignment_oracle(scenes.render(spec), spec) == 1.0
# also at SR resolution
spec = scenes.sample_spec(srng)
assert metrics.alignment_oracle(scenes.render(spec, size=64), spec) == 1.0
print("oracle duality OK")

# flipped color -> < 1.0
spec = scenes.SceneSpec(objects=(scenes.SceneObject("circle", "red", (0, 1)),))
img = scenes.render(spec)
flip = scenes.SceneSpec(objects=(scenes.SceneObject("circle", "green", (0, 1)),))
sflip = metrics.alignment_oracle(img, flip)
assert sflip < 1.0, sflip
print(f"flipped color score {sflip:.3f}")

# all-black image: color assertions all fail
black = np.zeros((32, 32, 3), dtype=np.float32)
for col in ("red", "green", "orange"):
    sp = scenes.SceneSpec(objects=(scenes.SceneObject("square", col, (1, 1)),))
    s = metrics.alignment_oracle(black, sp)
    assert s <= 2/3 + 1e-9, (col, s)  # color never passes
print("all-black color failure OK")

# wrong resolution errors
try:
    metrics.alignment_oracle(np.ones((31, 31, 3), dtype=np.float32), spec)
    raise SystemExit("no resolution error")
except DataError:
    pass
try:
    metrics.alignment_oracle(np.ones((32, 16, 3), dtype=np.float32), spec)
    raise SystemExit("no square error")
except DataError:
    pass
print("resolution guard OK")

# caption_fidelity: faithful image at NON-canonical placement scores 1.0
off = scenes.SceneSpec(objects=(scenes.SceneObject("triangle", "cyan", (1, 0)),))
assert metrics.caption_fidelity(scenes.render(off), scenes.caption(off)) == 1.0
two = scenes.SceneSpec(objects=(scenes.SceneObject("circle", "red", (1, 0)),
                                scenes.SceneObject("square", "blue", (1, 1))),
                       relation="left_of")
assert metrics.caption_fidelity(scenes.render(two), scenes.caption(two)) == 1.0
# wrong image for the caption scores low
wrong = metrics.caption_fidelity(scenes.render(off), scenes.caption(two))
print(f"mismatched caption fidelity {wrong:.3f}")
assert wrong < 1.0
print("caption_fidelity OK")

rec = metrics.metric_record("fid", half, 12, 12, "contrastive-pool", 0)
assert set(rec) == {"metric", "value", "n_a", "n_b", "feature_fn", "seed"}
print("ALL METRICS SMOKE OK")
