"""Where the pipeline bubble comes from, and what sharding buys.

Pure simulation, no training: reproduces the fill-drain closed form from
traces, shows circular scheduling shrinking the bubble at fixed batch size,
and compares the two ways of summing a sharded feed-forward layer.
"""

from ttig import pipesim


def fill_drain_table():
    print("fill-drain schedule, uniform costs: bubble = (S-1)/(M+S-1)")
    print(f"{'stages':>7} {'microbatches':>13} {'simulated':>10} {'closed form':>12}")
    for s, m in [(2, 2), (4, 4), (4, 8), (8, 8), (8, 32)]:
        trace = pipesim.simulate_pipeline(pipesim.PipelineSpec(stages=s, microbatches=m))
        sim = pipesim.bubble_ratio(trace)
        closed = (s - 1) / (m + s - 1)
        print(f"{s:>7} {m:>13} {sim:>10.4f} {closed:>12.4f}")
    print()


def rounds_table():
    print("circular schedule at full deployment scale (16 stages, 8 microbatches):")
    print(f"{'rounds':>7} {'makespan':>9} {'bubble':>8}")
    for rounds in (1, 2, 4):
        spec = pipesim.PipelineSpec(stages=pipesim.FULL_SCALE_STAGES, microbatches=8,
                                    rounds=rounds)
        trace = pipesim.simulate_pipeline(spec)
        print(f"{rounds:>7} {trace.makespan:>9.1f} "
              f"{pipesim.bubble_ratio(trace):>8.4f}")
    print("more rounds = more chunks in flight = less idle fill/drain time\n")


def shard_table():
    print("one feed-forward layer, batch 8 x seq 256 x d_model 1024, bf16:")
    print(f"{'n_way':>6} {'comm MB':>8} {'peak elems, allreduce':>22} "
          f"{'peak elems, rs+ag':>18}")
    for n in (1, 2, 4, 8):
        kw = dict(n_way=n, batch=8, seq=256, d_model=1024, d_mlp=4096)
        ar = pipesim.shard_cost(pipesim.ShardSpec(strategy="allreduce", **kw))
        sc = pipesim.shard_cost(
            pipesim.ShardSpec(strategy="reducescatter_allgather", **kw))
        print(f"{n:>6} {ar['comm_bytes_per_layer'] / 2**20:>8.2f} "
              f"{ar['peak_activation_elems']:>22,} "
              f"{sc['peak_activation_elems']:>18,}")
    print("identical bytes on the wire; scattering divides peak memory by n_way")


if __name__ == "__main__":
    fill_drain_table()
    rounds_table()
    shard_table()
