import time
import numpy as np
from ttig import pipesim as pp
from ttig.errors import DataError

# S=1: zero bubble
tr = pp.simulate_pipeline(pp.PipelineSpec(stages=1, microbatches=5))
assert pp.bubble_ratio(tr) == 0.0
pp.validate_trace(tr)

# S=2, M=2, R=1, unit costs -> makespan 6
tr = pp.simulate_pipeline(pp.PipelineSpec(stages=2, microbatches=2))
assert tr.makespan == 6.0, tr.makespan
pp.validate_trace(tr)
print("basic examples OK")

# closed form exact for all S<=8, M<=16 at R=1
t0 = time.time()
for S in range(1, 9):
    for M in range(1, 17):
        tr = pp.simulate_pipeline(pp.PipelineSpec(stages=S, microbatches=M))
        got = pp.bubble_ratio(tr)
        want = (S - 1) / (M + S - 1)
        assert got == want, (S, M, got, want)
print(f"closed-form sweep exact ({time.time()-t0:.1f}s)")

# monotonic in M
prev = 1.0
for M in range(1, 33):
    r = pp.bubble_ratio(pp.simulate_pipeline(pp.PipelineSpec(stages=4, microbatches=M)))
    assert r <= prev + 1e-12
    prev = r
print("monotonic in M OK")

# paper config: circular beats fill-drain at S=16, M=8
t0 = time.time()
r1 = pp.bubble_ratio(pp.simulate_pipeline(pp.PipelineSpec(stages=16, microbatches=8, rounds=1)))
r4 = pp.bubble_ratio(pp.simulate_pipeline(pp.PipelineSpec(stages=16, microbatches=8, rounds=4)))
print(f"S=16 M=8: bubble R=1 {r1:.4f} vs R=4 {r4:.4f} ({time.time()-t0:.1f}s)")
assert r4 < r1

# R>1 never worse across a grid
for S in (2, 4, 8):
    for M in (2, 4, 8, 16):
        b1 = pp.bubble_ratio(pp.simulate_pipeline(pp.PipelineSpec(stages=S, microbatches=M, rounds=1)))
        b2 = pp.bubble_ratio(pp.simulate_pipeline(pp.PipelineSpec(stages=S, microbatches=M, rounds=2)))
        assert b2 <= b1 + 1e-12, (S, M, b1, b2)
print("circular never worse OK")

# replay determinism + validity with latency and uneven costs
spec = pp.PipelineSpec(stages=4, microbatches=6, rounds=2, t_f=1.0, t_b=2.0, latency=0.25)
ta = pp.simulate_pipeline(spec)
tb = pp.simulate_pipeline(spec)
assert ta.makespan == tb.makespan
assert all(da == db for da, db in zip(ta.devices, tb.devices))
pp.validate_trace(ta)
assert ta.makespan >= pp.critical_path_bound(spec) - 1e-9
print("replay/validity OK")

# json export shape
j = pp.trace_to_json(ta)
assert set(j) == {"spec", "devices", "makespan"}
assert len(j["devices"]) == 4
assert all(set(t) == {"stage", "chunk", "microbatch", "dir", "start", "end"}
           for t in j["devices"][0]["tasks"])

# spec validation
for bad in [dict(stages=0, microbatches=1), dict(stages=1, microbatches=0),
            dict(stages=1, microbatches=1, rounds=0),
            dict(stages=1, microbatches=1, t_f=-1.0)]:
    try:
        pp.PipelineSpec(**bad).validate(); raise SystemExit(f"missed {bad}")
    except DataError:
        pass
try:
    pp.bubble_ratio(pp.ScheduleTrace(spec=spec, devices=[], makespan=0.0))
    raise SystemExit("no empty-trace error")
except DataError:
    pass
print("validation OK")

# sharding
base = dict(batch=16, seq=256, d_model=1024, d_mlp=4096)
c1 = pp.shard_cost(pp.ShardSpec(n_way=1, **base))
assert c1["comm_bytes_per_layer"] == 0.0
assert c1["peak_activation_elems"] == 16 * 256 * 1024
ar = pp.shard_cost(pp.ShardSpec(n_way=4, strategy="allreduce", **base))
rs = pp.shard_cost(pp.ShardSpec(n_way=4, strategy="reducescatter_allgather", **base))
assert rs["peak_activation_elems"] * 4 == ar["peak_activation_elems"]
assert ar["comm_bytes_per_layer"] == rs["comm_bytes_per_layer"]
try:
    pp.ShardSpec(n_way=3, **base).validate(); raise SystemExit("no divisibility error")
except DataError:
    pass
print("shard_cost OK")

# sweep CSV
import tempfile, os
rows = pp.sweep_rows([pp.PipelineSpec(stages=4, microbatches=m) for m in (2, 4, 8)],
                     prologue=1.0, epilogue=1.0, dp_ways=64)
with tempfile.TemporaryDirectory() as d:
    path = os.path.join(d, "sweep.csv")
    pp.write_sweep_csv(rows, path)
    lines = open(path).read().strip().splitlines()
    assert len(lines) == 4
print("sweep CSV OK")
print("ALL PIPESIM SMOKE OK")
