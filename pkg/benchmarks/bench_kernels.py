"""Time the compiled orbit kernels against the numpy fallback.

Usage: ``python benchmarks/bench_kernels.py [--N 256] [--M 20000] [--repeat 5]``
"""

import argparse
import timeit

import numpy as np

from randopen import _kernels_py
from randopen.digits import DigitModel
from randopen.observables import parse_observable
from randopen.system import preset

try:
    from randopen import _kernels as compiled
except ImportError:
    compiled = None


def inputs(N, M, seed=0):
    s = preset("quadrupling-random-hole", seed=seed)
    om = s.environment.realize(0)
    dm = DigitModel.build(s, om, N + 1, N + 1)
    digits, y = dm.sample(np.random.default_rng(seed), M)
    f = parse_observable("indicator:1/2:1", s.n_symbols)
    bp, sl, ic = f.tables()
    syms = np.ascontiguousarray(om.window(0, N).astype(np.int64))
    return dict(digits=np.ascontiguousarray(digits), y=np.ascontiguousarray(y), origin=dm.origin,
                scale=dm.scale, sym=syms, bp=bp, slope=sl, icpt=ic, centering=np.zeros(N))


def bench(mod, a, repeat):
    pos = lambda: mod.positions(a["digits"], a["y"], a["origin"], a["scale"])  # noqa: E731
    pre = lambda: mod.prefix_sums(a["digits"], a["y"], a["origin"], a["scale"], a["sym"],  # noqa: E731
                                  a["bp"], a["slope"], a["icpt"], a["centering"])
    return {name: min(timeit.repeat(fn, number=1, repeat=repeat)) for name, fn in (("positions", pos), ("prefix_sums", pre))}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=256)
    ap.add_argument("--M", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    a = inputs(args.N, args.M)
    py = bench(_kernels_py, a, args.repeat)
    cy = bench(compiled, a, args.repeat) if compiled is not None else None
    print(f"N = {args.N}, M = {args.M}, best of {args.repeat}")
    print(f"{'kernel':<12} {'python s':>10} {'cython s':>10} {'speedup':>8}")
    for k, t in py.items():
        if cy is None:
            print(f"{k:<12} {t:10.4f} {'n/a':>10} {'n/a':>8}")
        else:
            print(f"{k:<12} {t:10.4f} {cy[k]:10.4f} {t / cy[k]:8.1f}")


if __name__ == "__main__":
    main()
