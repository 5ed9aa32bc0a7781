"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_core.py [--repeat N]

Both backends are imported directly, so the script does not depend on the
``LUR_PURE_PYTHON`` switch. Outputs are checked for agreement before timing.
"""
import argparse
import timeit

import numpy as np

from lur import _core_py

try:
    from lur import _core
except ImportError:
    _core = None


def _cases(rng):
    for n in (8, 32, 64):
        a = rng.normal(size=(n, n))
        yield "jacobi_eigh", f"n={n}", (a + a.T,)
    for p, m in ((10, 272), (50, 272), (500, 16)):
        x = rng.normal(size=(p, m))
        yield "sq_dists", f"P={p} M={m}", (x,)
        yield "kde_repulsion", f"P={p} M={m}", (x, 1.0)


def _agree(name, a, b):
    if name == "jacobi_eigh":
        # eigenpairs come back unsorted; compare the sorted spectra
        return np.allclose(np.sort(a[0]), np.sort(b[0]), atol=1e-10)
    return np.allclose(a, b, rtol=1e-10, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timing repeats, best is reported (default 5)")
    args = ap.parse_args(argv)
    if _core is None:
        print("compiled extension not built; only the numpy fallback is available")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<15}{'size':<14}{'cython ms':>11}{'numpy ms':>11}{'speedup':>9}")
    for name, size, inputs in _cases(rng):
        fast, slow = getattr(_core, name), getattr(_core_py, name)
        if not _agree(name, fast(*inputs), slow(*inputs)):
            raise SystemExit(f"{name} {size}: backends disagree")
        times = []
        for fn in (fast, slow):
            number = max(1, int(0.05 / max(timeit.timeit(lambda: fn(*inputs), number=1), 1e-6)))
            best = min(timeit.repeat(lambda: fn(*inputs), number=number, repeat=args.repeat)) / number
            times.append(best * 1e3)
        print(f"{name:<15}{size:<14}{times[0]:>11.3f}{times[1]:>11.3f}{times[1] / times[0]:>8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
