"""Time the compiled kernels against the pure-Python fallback.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``.  Each kernel is
fed identical inputs on both backends and the outputs are compared before
the timings are printed.
"""
import argparse
import time

import numpy as np

from nexusloop import kernels
from nexusloop.dynamics import MeanFieldState, Schedule, _param_vector, max_step, steady_init
from nexusloop.loop import LoopSpec, loop_point
from nexusloop.model import Branch, PhysicalParams, derive_params, steady_states


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def rk4_case(n_steps):
    p = PhysicalParams.from_quoted()
    spec = LoopSpec.default(p)
    d = loop_point(spec, 0.0)
    lower = next(s for s in steady_states(p, d) if s.branch is Branch.LOWER)
    init: MeanFieldState = steady_init(p, d, lower.q_s)
    dt = max_step(p)
    par = _param_vector(p, derive_params(p), Schedule.from_loop(spec, n_steps * dt))
    y0 = init.as_array()
    return lambda be: be.rk4_integrate(y0.copy(), par, 0.0, dt, n_steps, 100)


def mc_case(n_traj, n_steps, seed=0):
    rng = np.random.default_rng(seed)
    e = 0.95 * np.eye(4) + 0.01 * rng.standard_normal((4, 4))
    g = 0.1 * rng.standard_normal((4, 4))
    z = rng.standard_normal((n_steps, n_traj, 4))

    def run(be):
        u = np.zeros((n_traj, 4))
        acc = np.zeros((n_traj, 4, 4))
        be.mc_chunk(e, g, u, z, 5, 0, True, acc)
        return u, acc

    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--rk4-steps", type=int, default=20_000)
    ap.add_argument("--mc-traj", type=int, default=64)
    ap.add_argument("--mc-steps", type=int, default=2_000)
    args = ap.parse_args(argv)
    if kernels.compiled_backend is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")

    cases = {
        f"rk4_integrate ({args.rk4_steps} steps)": (rk4_case(args.rk4_steps), lambda o: o[0]),
        f"mc_chunk ({args.mc_traj} traj x {args.mc_steps} steps)": (
            mc_case(args.mc_traj, args.mc_steps), lambda o: o[1]),
    }
    print(f"{'kernel':<42}{'python [s]':>12}{'compiled [s]':>14}{'speedup':>10}{'max rel diff':>14}")
    for name, (fn, key) in cases.items():
        tp, op = _best(lambda: fn(kernels.python_backend), args.repeat)
        tc, oc = _best(lambda: fn(kernels.compiled_backend), args.repeat)
        a, b = np.asarray(key(op)), np.asarray(key(oc))
        diff = float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))
        print(f"{name:<42}{tp:>12.4f}{tc:>14.4f}{tp / tc:>9.1f}x{diff:>14.2e}")


if __name__ == "__main__":
    main()
