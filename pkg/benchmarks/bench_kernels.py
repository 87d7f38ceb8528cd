"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from poisson_transform import _kernels_py
from poisson_transform.quadrature import default_rule

try:
    from poisson_transform import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None


def cases():
    rule = default_rule()
    rng = np.random.default_rng(0)
    anc = rng.uniform(-1, 1, 2000)
    u = rng.random(2000)
    theta = (-1.0, 20.0)
    return {
        "toy_moments (2000 ancestors x 401 nodes)":
            lambda mod: mod.toy_moments(theta, anc, rule.nodes, rule.weights),
        "sample_toy_chain (2000 steps)":
            lambda mod: mod.sample_toy_chain(theta, 0.0, u, -1.0, 1.0, 400),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = [("python", _kernels_py)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"{'kernel':<44}" + "".join(f"{name:>12}" for name, _ in backends) + "   speedup")
    for label, fn in cases().items():
        best = []
        for _, mod in backends:
            fn(mod)
            number = 3
            best.append(min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number)
        cells = "".join(f"{1e3 * t:>10.2f}ms" for t in best)
        speed = f"{best[0] / best[1]:8.1f}x" if len(best) > 1 else ""
        print(f"{label:<44}{cells}{speed}")


if __name__ == "__main__":
    main()
