"""Time the sampler kernels with and without numba.

The backend is fixed at import time, so each measurement runs in a fresh
interpreter with ``ODBAYES_DISABLE_NUMBA`` set accordingly. Both backends
draw the same random stream, and the script checks the draws agree.

    python benchmarks/bench_kernels.py [--sweeps 20000] [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import hashlib, json, sys, time
import numpy as np
from odbayes._accel import backend_name
from odbayes.core import CostBins, MarginData
from odbayes.priors import gravity_proportions
from odbayes.samplers import ChainConfig, run_beta_tld_chain, run_fixed_p_chain, run_seed_chain

sweeps, repeat = int(sys.argv[1]), int(sys.argv[2])
C = np.array([[3, 11, 18, 22], [12, 3, 13, 19], [15.5, 13, 5, 7], [24, 18, 8, 5]])
m = MarginData([400, 460, 400, 702], [260, 400, 500, 802])
bins = CostBins([0, 4, 8, 12, 16, 20, 24])
p = gravity_proportions(C, 0.1)
chains = {
    "fixed-p": lambda cfg: run_fixed_p_chain(m, p, cfg=cfg),
    "dirichlet-seed": lambda cfg: run_seed_chain(m, None, 1.0, cfg),
    "beta-tld": lambda cfg: run_beta_tld_chain(m, C, bins, [365, 962, 160, 150, 230, 95], 1.0, cfg),
}
# compile (or warm caches) outside the timed region
for run in chains.values():
    run(ChainConfig(samples=2, burn_in=0, rng_seed=0))
result = {"backend": backend_name(), "timings": {}, "digest": {}}
cfg = ChainConfig(samples=sweeps, burn_in=0, rng_seed=1)
for name, run in chains.items():
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = run(cfg)
        best = min(best, time.perf_counter() - t0)
    result["timings"][name] = best
    result["digest"][name] = hashlib.sha256(out.draws.tobytes()).hexdigest()
print(json.dumps(result))
"""


def measure(disable, sweeps, repeat):
    env = dict(os.environ, ODBAYES_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run(
        [sys.executable, "-c", WORKER, str(sweeps), str(repeat)],
        env=env, capture_output=True, text=True, check=True,
    )
    return json.loads(res.stdout)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sweeps", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    fast = measure(False, args.sweeps, args.repeat)
    slow = measure(True, args.sweeps, args.repeat)
    print(f"{args.sweeps} sweeps of the 4-zone example, best of {args.repeat}")
    print(f"{'chain':<16}{'numba s':>10}{'python s':>11}{'speedup':>10}  draws match")
    for name in fast["timings"]:
        a, b = fast["timings"][name], slow["timings"][name]
        same = fast["digest"][name] == slow["digest"][name]
        print(f"{name:<16}{a:>10.4f}{b:>11.3f}{b / a:>9.0f}x  {'yes' if same else 'NO'}")
    return 0 if fast["digest"] == slow["digest"] else 1


if __name__ == "__main__":
    sys.exit(main())
