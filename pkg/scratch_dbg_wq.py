import numpy as np
from ttig import tensor as T, seq2seq

tiny = seq2seq.ModelConfig(enc_layers=1, dec_layers=1, d_model=8, d_mlp=16, heads=2,
                           text_vocab=11, image_vocab=5, text_len=3, grid_h=2, grid_w=2,
                           dropout=0.0)
tw = seq2seq.build_model(tiny, seed=1)
trng = np.random.default_rng(2)
tt = trng.integers(0, 11, (2, 3))
ti = trng.integers(0, 5, (2, 4))
for n2 in tw.params.names():
    tw.params[n2].data = tw.params[n2].data.astype(np.float64)
t64 = tw.params["dec.b0.attn.wq"]
x64 = t64.data.copy()
with T.Tape():
    out = seq2seq.forward_loss(tw, tt, ti)
ga = T.backward(out)[t64.node_id].data

def eval_with(arr):
    t64.data = arr
    v = float(seq2seq.forward_loss(tw, tt, ti).data)
    t64.data = x64
    return v

f0 = eval_with(x64)
print("loss", f0)
worst = (0, 0, 0)
for i in range(x64.size):
    for eps in (1e-6, 1e-5, 1e-4):
        xp = x64.copy(); xp.flat[i] += eps
        xm = x64.copy(); xm.flat[i] -= eps
        n = (eval_with(xp) - eval_with(xm)) / (2 * eps)
        a = ga.flat[i]
        rel = abs(a - n) / max(abs(a), abs(n), 1e-8)
        if eps == 1e-6 and rel > worst[0]:
            worst = (rel, i, a, n)
        if i < 3:
            print(f"i={i} eps={eps:.0e} analytic={a:+.10e} numeric={n:+.10e} rel={rel:.2e}")
print("worst @1e-6:", worst)
i = worst[1]
for eps in (1e-6, 1e-5, 1e-4, 1e-3):
    xp = x64.copy(); xp.flat[i] += eps
    xm = x64.copy(); xm.flat[i] -= eps
    n = (eval_with(xp) - eval_with(xm)) / (2 * eps)
    print(f"worst i={i} eps={eps:.0e} analytic={ga.flat[i]:+.10e} numeric={n:+.10e}")
