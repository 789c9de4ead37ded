"""Compare the compiled and pure-numpy tabular kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from valbound.envs import default_maze_spec, maze_to_mdp, random_mdp
from valbound.kernels import get_backend
from valbound.mdp import RegularizationSpec


def _cases():
    rng = np.random.default_rng(0)
    yield "maze 8x8", maze_to_mdp(default_maze_spec())
    yield "random S=10 A=4", random_mdp(rng, 10, 4, 0.9)
    yield "random S=200 A=8", random_mdp(rng, 200, 8, 0.95)


def _bench(kern, mdp, reg, repeat):
    P, r, cont = mdp.transition, mdp.reward, mdp.continuation
    q = np.random.default_rng(1).normal(size=mdp.shape)
    lp = reg.log_prior
    sv = min(timeit.repeat(lambda: kern.state_values(q, lp, reg.beta), number=200, repeat=repeat)) / 200
    v = kern.state_values(q, lp, reg.beta)
    bk = min(timeit.repeat(lambda: kern.backup(P, r, cont, mdp.discount, v), number=200, repeat=repeat)) / 200
    q0 = np.zeros(mdp.shape)
    vi = min(
        timeit.repeat(
            lambda: kern.value_iteration(P, r, cont, mdp.discount, lp, reg.beta, 1e-10, 100_000, q0),
            number=1,
            repeat=repeat,
        )
    )
    return sv, bk, vi


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    try:
        backends = {"compiled": get_backend("compiled"), "python": get_backend("python")}
    except ImportError:
        print("compiled extension not built; only the python backend is available")
        backends = {"python": get_backend("python")}
    print(f"{'case':<20}{'backend':<10}{'state_values':>14}{'backup':>12}{'value_iter':>12}")
    for name, mdp in _cases():
        reg = RegularizationSpec.uniform(1.0, *mdp.shape)
        times = {}
        for bname, kern in backends.items():
            times[bname] = _bench(kern, mdp, reg, args.repeat)
            sv, bk, vi = times[bname]
            print(f"{name:<20}{bname:<10}{sv * 1e6:>12.1f}us{bk * 1e6:>10.1f}us{vi * 1e3:>10.2f}ms")
        if len(times) == 2:
            ratio = [p / c for p, c in zip(times["python"], times["compiled"])]
            print(f"{'':<20}{'speedup':<10}{ratio[0]:>13.1f}x{ratio[1]:>11.1f}x{ratio[2]:>11.1f}x")


if __name__ == "__main__":
    main()
