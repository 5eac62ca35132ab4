"""Time the compiled guide kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py [--batch 256] [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from gac import kernels
from gac.critic import CriticNetwork
from gac.gaussmath import spd_inverse
from gac.guide import taylor_at


def problem(d, N, seed=0):
    rng = np.random.default_rng(seed)
    net = CriticNetwork(4, d, hidden=(64, 64), rng=rng)
    net.params[-2][:] = rng.normal(size=net.params[-2].shape)
    S, phi = rng.normal(size=(N, 4)), rng.normal(size=(N, d))
    tm = taylor_at(net, S, phi)
    cov = 0.5 * np.eye(d)
    P = np.ascontiguousarray(spd_inverse(cov))
    logdet = float(np.linalg.slogdet(2 * np.pi * cov)[1])
    return np.ascontiguousarray(tm.H), np.ascontiguousarray(tm.psi), phi, P, logdet


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = kernels.backends()
    print(f"backends: {', '.join(backends)}; batch {args.batch}")
    print(f"{'kernel':<14}{'d':>3}" + "".join(f"{b + ' ms':>14}" for b in backends)
          + ("   speedup" if len(backends) > 1 else ""))
    for d in (1, 2, 6):
        H, psi, phi, P, logdet = problem(d, args.batch)
        calls = {
            "dual_eval": lambda m: m.dual_eval(H, psi, phi, P, logdet, 0.3, 0.2, 1e-4, -1.0),
            "guide_moments": lambda m: m.guide_moments(H, psi, phi, P, 0.3, 0.2),
            "solve_dual": lambda m: m.solve_dual(H, psi, phi, P, logdet, 1e-4, -1.0, 0.05,
                                                 0.05, 1e-10, 1e-10, 1e-9, 1e-6, 200),
        }
        for name, fn in calls.items():
            ms = {}
            for b, mod in backends.items():
                t = timeit.Timer(lambda: fn(mod)).repeat(3, args.repeat)
                ms[b] = 1e3 * min(t) / args.repeat
            row = f"{name:<14}{d:>3}" + "".join(f"{ms[b]:>14.3f}" for b in backends)
            if len(backends) > 1:
                row += f"{ms['python'] / ms['compiled']:>10.1f}x"
            print(row)


if __name__ == "__main__":
    main()
