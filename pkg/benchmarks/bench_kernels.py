"""Compare the compiled and pure-Python accumulator backends.

Times a full-grid vote and a structured tracking run under each available
backend and checks that both produce the same accumulator.

    python3 benchmarks/bench_kernels.py --voters 50 200 1000 --repeat 20
"""
import argparse
import json
import time

import numpy as np

from structhough import kernels
from structhough.inference import run_sequence
from structhough.simulation import SceneScript, generate
from structhough.voting import HypothesisGrid, VoteConfig, vote_grid


def _best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), float(np.median(times))


def bench_vote(n_voters, grid, repeat, seed=0):
    rng = np.random.default_rng(seed)
    v = np.column_stack([rng.uniform(0, 160, n_voters), rng.uniform(0, grid.r_max, n_voters),
                         rng.uniform(0, 1, n_voters)])
    out, accs = {}, {}
    for name in kernels.available_backends():
        with kernels.use_backend(name):
            accs[name] = vote_grid(v, grid, VoteConfig())
            best, med = _best_of(lambda: vote_grid(v, grid, VoteConfig()), repeat)
        out[name] = {"best_ms": best * 1e3, "median_ms": med * 1e3}
    ref = accs["python"]
    out["max_abs_diff"] = max(float(np.max(np.abs(a - ref))) for a in accs.values())
    return out


def bench_tracking(frames, grid, seed=0):
    seq = generate(SceneScript(frames=frames), seed)
    out = {}
    for name in kernels.available_backends():
        with kernels.use_backend(name):
            t0 = time.perf_counter()
            run_sequence(seq.observations, grid)
            out[name] = {"ms_per_frame": (time.perf_counter() - t0) * 1e3 / frames}
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--voters", type=int, nargs="+", default=[50, 200, 1000])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--frames", type=int, default=100)
    ap.add_argument("--height", type=int, default=120)
    args = ap.parse_args(argv)

    grid = HypothesisGrid.for_image(args.height)
    report = {"backends": kernels.available_backends(), "grid": list(grid.shape),
              "vote_grid": {str(n): bench_vote(n, grid, args.repeat) for n in args.voters},
              "tracking": bench_tracking(args.frames, grid)}
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
