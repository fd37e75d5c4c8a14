"""Compare the compiled and pure-NumPy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5]

Times the three hot loops on the built-in benchmark plant:

* ``pgm_descent``: model-based gradient iterations (two Lyapunov solves each)
* ``ioh_feedback_run``: closed-loop episode rollouts with cost accumulation
* ``lyap_doubling``: a single projected Lyapunov solve
"""
import argparse
import timeit

import numpy as np

from iohpg import kernels
from iohpg.baseline import optimal_reference
from iohpg.ioh import build_ioh, reachable_projection
from iohpg.pgm_exact import CostModel, q_hat, resolve_sublevel
from iohpg.presets import get_preset


def _setup():
    pr = get_preset("paper-sec5")
    plant = pr.plant
    ioh = build_ioh(plant, pr.L)
    proj = reachable_projection(ioh)
    cost = CostModel(pr.Q, pr.R)
    resolve_sublevel(ioh, proj, cost)
    ref = optimal_reference(plant, ioh, proj, pr.Q, pr.R)
    return plant, ioh, proj, cost, ref


def _cases(plant, ioh, proj, cost, ref):
    P = proj.P
    Th0, Pih, Qh = P.T @ ioh.Theta @ P, P.T @ ioh.Pi, q_hat(ioh, proj, cost)
    Khat = np.zeros((ioh.m, proj.p))
    K = 0.5 * ref.K_star
    Tk = Th0 + Pih @ (K @ P)
    rng = np.random.default_rng(0)
    x0, v0 = rng.standard_normal(plant.n), rng.standard_normal(ioh.d)

    def descent(be):
        return lambda: be.pgm_descent(Th0, Pih, Qh, proj.PhiHat, cost.R, Khat, 2.5e-6, 2_000, 100, 0.0, cost.c)

    def feedback(be):
        def run():
            for _ in range(20):
                x, v = x0.copy(), v0.copy()
                be.ioh_feedback_run(plant.A, plant.B, plant.C, K, x, v, 500, cost.Q, cost.R, ioh.L, np.inf, None)
        return run

    def lyap(be):
        return lambda: be.lyap_doubling(Tk, Qh)

    return {"pgm_descent (2000 iters)": descent, "ioh_feedback_run (20 x 500 steps)": feedback,
            "lyap_doubling (p=5)": lyap}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = {"python": kernels.get_backend("python")}
    try:
        backends["cython"] = kernels.get_backend("cython")
    except ImportError:
        print("compiled extension not built; timing the fallback only")
    cases = _cases(*_setup())
    print(f"{'kernel':36s}" + "".join(f"{b:>14s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, make in cases.items():
        times = {}
        for b, be in backends.items():
            fn = make(be)
            n = 1 if name.startswith("pgm") else (5 if name.startswith("ioh") else 200)
            times[b] = min(timeit.repeat(fn, number=n, repeat=args.repeat)) / n
        line = f"{name:36s}" + "".join(f"{times[b] * 1e3:11.3f} ms" for b in backends)
        if len(times) > 1:
            line += f"  {times['python'] / times['cython']:9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
