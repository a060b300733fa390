"""Time the compiled k-level inference kernel against the numpy fallback and the tape forward.

Usage: python benchmarks/bench_kernels.py [--agents 5] [--batch 4] [--repeat 200]
"""

import argparse
import timeit

import numpy as np

from infopg import _kernels
from infopg._kernels import reference
from infopg.envs import CommGraph
from infopg.policy import k_level_forward, make_bundle


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--agents", type=int, default=5)
    ap.add_argument("--batch", type=int, default=4, help="rows per call (episodes stepped in lockstep)")
    ap.add_argument("--latent", type=int, default=20)
    ap.add_argument("--obs", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    n = args.agents
    graph = CommGraph.chain(n)
    mix = graph.mean_matrix()
    obs = rng.uniform(-1, 1, (args.batch, n, args.obs))
    print(f"backend selected at import: {_kernels.BACKEND}")
    print(f"{'cell':5s} {'K':>2s} {'tape us':>10s} {'numpy us':>10s} {'cython us':>10s} {'speedup':>8s}")
    for cell in ("gru", "vrnn"):
        bundles = [make_bundle(args.obs, 3, args.latent, rng, cell=cell) for _ in range(n)]
        packed = _kernels.pack(bundles)
        for K in (0, 1, 2):
            def tape():
                k_level_forward(bundles, [obs[:, i] for i in range(n)], graph, K)

            def fallback():
                _kernels.k_level_infer(packed, obs, mix, K, impl=reference.k_level_infer)

            def compiled():
                _kernels.k_level_infer(packed, obs, mix, K)

            t_tape = min(timeit.repeat(tape, number=max(1, args.repeat // 10), repeat=3)) / max(1, args.repeat // 10)
            t_np = min(timeit.repeat(fallback, number=args.repeat, repeat=3)) / args.repeat
            if _kernels.BACKEND == "cython":
                t_cy = min(timeit.repeat(compiled, number=args.repeat, repeat=3)) / args.repeat
                cy, speed = f"{t_cy * 1e6:10.1f}", f"{t_np / t_cy:7.1f}x"
            else:
                cy, speed = f"{'n/a':>10s}", f"{'n/a':>8s}"
            print(f"{cell:5s} {K:2d} {t_tape * 1e6:10.1f} {t_np * 1e6:10.1f} {cy} {speed}")


if __name__ == "__main__":
    main()
