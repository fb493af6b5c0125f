"""Compare the compiled and numpy activation kernels.

Times the two kernels alone and one full loss-and-gradient evaluation of the
default network on the five-patch cover, for every available backend.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from mfvpinn.assembly import VariationalLoss, build_tensors
from mfvpinn.geometry import initial_covers
from mfvpinn.kernels import BACKENDS
from mfvpinn.network import MLP, Model
from mfvpinn.problems import get_problem


def bench(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--points", type=int, default=20000)
    ap.add_argument("--width", type=int, default=50)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    Z = rng.standard_normal((3, args.points, args.width))
    problem = get_problem("poisson_singular")
    _, P1 = initial_covers()
    tensors = build_tensors(P1, problem)

    rows = []
    for name, mod in sorted(BACKENDS.items()):
        H, S = mod.tanh_forward(Z)
        G = rng.standard_normal(Z.shape)
        fwd = bench(lambda: mod.tanh_forward(Z), args.repeat)
        bwd = bench(lambda: mod.tanh_backward(G.copy(), Z, H[0], S), args.repeat)
        net = MLP(backend=name)
        loss = VariationalLoss(Model(net, problem.lift), tensors)
        theta = net.init_params(0)
        full = bench(lambda: loss.value_and_grad(theta), args.repeat)
        rows.append((name, fwd, bwd, full))

    print(f"{'backend':<8} {'forward ms':>11} {'backward ms':>12} {'loss+grad ms':>13}")
    for name, fwd, bwd, full in rows:
        print(f"{name:<8} {fwd * 1e3:11.3f} {bwd * 1e3:12.3f} {full * 1e3:13.3f}")
    if len(rows) == 2:
        (_, *c), (_, *n) = rows  # sorted: cython, numpy
        print("speedup  " + " ".join(f"{a / b:>11.2f}x" for a, b in zip(n, c)))


if __name__ == "__main__":
    main()
