"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--side 224] [--repeat 3]

Reports the best wall time per kernel and checks both backends agree.
"""

import argparse
import time

import numpy as np

from cosod import _fallback

try:
    from cosod import _kernels as compiled
except ImportError:  # extension not built
    compiled = None


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bilateral_features(side, rng):
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    rgb = rng.integers(0, 256, size=(side * side, 3)).astype(np.float64)
    return np.concatenate([np.stack([xx.ravel(), yy.ravel()], 1) / 10.0, rgb / 3.0], axis=1)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--side", type=int, default=224, help="image side in pixels")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)
    feats = bilateral_features(args.side, rng)
    values = rng.random((feats.shape[0], 2))
    mask = rng.random((args.side, args.side)) < 0.45

    backends = [("python", _fallback)] + ([("compiled", compiled)] if compiled else [])
    results = {}
    for name, mod in backends:
        t_build, lat = best_of(lambda: mod.build_lattice(feats), args.repeat)
        t_filter, out = best_of(lambda: mod.lattice_filter(values, *lat), args.repeat)
        t_label, lab = best_of(lambda: mod.label_components(mask, 8), args.repeat)
        results[name] = (t_build, t_filter, t_label, out, lab)

    print(f"{args.side}x{args.side} image, 5-D bilateral lattice, best of {args.repeat}")
    print(f"{'kernel':<16}" + "".join(f"{n:>12}" for n in results) + ("   speedup" if len(results) == 2 else ""))
    for i, kernel in enumerate(("build_lattice", "lattice_filter", "label_8conn")):
        row = f"{kernel:<16}" + "".join(f"{r[i] * 1e3:>10.1f}ms" for r in results.values())
        if len(results) == 2:
            row += f"{results['python'][i] / results['compiled'][i]:>9.1f}x"
        print(row)
    if len(results) == 2:
        diff = np.max(np.abs(results["python"][3] - results["compiled"][3]))
        same = np.array_equal(results["python"][4][0], results["compiled"][4][0])
        print(f"max filter difference {diff:.1e}; identical labels: {same}")
    else:
        print("compiled extension not available; only the fallback was timed")


if __name__ == "__main__":
    main()
