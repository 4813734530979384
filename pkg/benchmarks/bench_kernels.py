"""Compare the compiled reduction kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from fedcast import _kernels
from fedcast.config import FLConfig
from fedcast.model_engine import Engine
from fedcast.tensor_core import deviation_profile


def _time(fn, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels.c is None:
        print("compiled kernels not available; build with `pip install --no-build-isolation -e .`")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'n':>9}{'numpy us':>12}{'cython us':>12}{'speedup':>9}")
    for n in (128, 4096, 65536, 1 << 20):
        a, b = rng.normal(size=n), rng.normal(size=n)
        out = np.zeros(n)
        cases = {
            "l1_norm": (lambda m: m.l1_norm(a)),
            "deviation_norms": (lambda m: m.deviation_norms(a, b)),
            "axpy": (lambda m: m.axpy(out, a, 0.5)),
        }
        for name, fn in cases.items():
            tp = _time(lambda: fn(_kernels.py), args.repeat)
            tc = _time(lambda: fn(_kernels.c), args.repeat)
            print(f"{name:<16}{n:>9}{tp * 1e6:>12.1f}{tc * 1e6:>12.1f}{tp / tc:>9.1f}")

    # end to end: one deviation profile over the default model
    eng = Engine(FLConfig().model_config())
    p, q = eng.init_model(0), eng.init_model(1)
    t_c = _time(lambda: deviation_profile(p, q, 1, 0), args.repeat)
    impl = _kernels.deviation_norms
    _kernels.deviation_norms = _kernels.py.deviation_norms
    try:
        t_p = _time(lambda: deviation_profile(p, q, 1, 0), args.repeat)
    finally:
        _kernels.deviation_norms = impl
    print(f"\ndeviation_profile (default model, {p.numel()} values): "
          f"numpy {t_p * 1e3:.2f} ms, cython {t_c * 1e3:.2f} ms, speedup {t_p / t_c:.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
