"""Compare the numba kernels with the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--size 100] [--repeat 5]

Kernel timings call both paths in one process (``use_numba=`` switch). The
end-to-end registration timing runs in two subprocesses because the
``PNPRR_NUMBA`` flag is read at import time.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from pnprr import _accel, grid

E2E = """
import time
from pnprr import synthdata, registration
c = synthdata.generate_case(0, resolution={size})
p = registration.RegistrationParams(max_iters={iters}, energy_tol=0.0, grad_tol=0.0)
registration.register(c.source, c.target_noisy, p)  # warm-up / JIT
t = time.perf_counter()
registration.register(c.source, c.target_noisy, p)
print(time.perf_counter() - t)
"""


def best(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernels(size, repeat):
    rng = np.random.default_rng(0)
    dims = (size, size)
    f = rng.random(dims)
    coords = grid.identity_coords(dims) + rng.normal(scale=2.0, size=(2,) + dims)
    vals = rng.random(dims)
    img = rng.random((min(size, 64),) * 2)
    rows = []
    cases = [
        ("interp (values+grad)", lambda nb: _accel.interp_linear(f, coords, True, use_numba=nb)),
        ("scatter (transpose)", lambda nb: _accel.scatter_linear(vals, coords, dims, use_numba=nb)),
        (f"nlm {img.shape[0]}^2", lambda nb: _accel.nlm(img, 2, 5, 0.1, use_numba=nb)),
    ]
    for name, fn in cases:
        t_np = best(lambda: fn(False), repeat)
        t_nb = best(lambda: fn(True), repeat) if _accel.HAVE_NUMBA else float("nan")
        rows.append((name, t_np, t_nb))
    return rows


def end_to_end(size, iters):
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, PNPRR_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", E2E.format(size=size, iters=iters)],
                             env=env, capture_output=True, text=True, check=True)
        out[flag] = float(res.stdout.strip().splitlines()[-1])
    return out["0"], out["1"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--iters", type=int, default=20, help="registration iterations, end-to-end")
    args = ap.parse_args(argv)

    print(f"grid {args.size}^2, best of {args.repeat}; numba available: {_accel.HAVE_NUMBA}")
    print(f"{'kernel':<24}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, t_np, t_nb in kernels(args.size, args.repeat):
        print(f"{name:<24}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>9.1f}x")
    t_np, t_nb = end_to_end(args.size, args.iters)
    print(f"{f'register, {args.iters} iters':<24}{1e3 * t_np:>12.0f}{1e3 * t_nb:>12.0f}"
          f"{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
