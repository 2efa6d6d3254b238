"""Time the integrator inner loop: compiled extension against the NumPy fallback.

    python3 benchmarks/bench_kernel.py --system three-machine --steps 20000
"""
import argparse
import time

import numpy as np

from ambient_inertia import kernel, systems
from ambient_inertia.model import assemble_model
from ambient_inertia.sde import Integrator


def time_backend(model, backend: str, n_steps: int, h: float, repeats: int) -> tuple[float, np.ndarray]:
    rng = np.random.default_rng(0)
    normals = rng.standard_normal((n_steps, model.n_noise))
    best = np.inf
    for _ in range(repeats):
        integ = Integrator(model, h, backend)
        z = np.concatenate([model.xi0, model.zeta0[: model.arrays.n_core]])
        eta = np.zeros(model.n_noise)
        sel, need = integ.selection(model.measurement_names[:3])
        out = np.empty((n_steps, sel.size))
        t0 = time.perf_counter()
        integ.run(z, eta, normals, 0, 1, sel, out, 0, need)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--system", default="three-machine", choices=systems.BUNDLED + systems.SCENARIOS)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--python-steps", type=int, default=2000,
                   help="steps for the slower fallback (timings are per step)")
    p.add_argument("--step-s", type=float, default=0.005)
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args(argv)

    cfg = systems.load_bundled(args.system)
    model = assemble_model(cfg.network, cfg.devices)
    print(f"system {args.system}: {model.n_states} states, {model.arrays.n_core} algebraic, "
          f"{model.n_noise} noise inputs, h = {args.step_s:g} s")
    rows = {}
    for backend, n in (("compiled", args.steps), ("python", args.python_steps)):
        if backend not in kernel.BACKENDS:
            print(f"{backend:>9}: not available")
            continue
        t, out = time_backend(model, backend, n, args.step_s, args.repeats)
        rows[backend] = (t / n, out)
        print(f"{backend:>9}: {1e6 * t / n:9.2f} us/step  ({n} steps, best of {args.repeats})")
    if len(rows) == 2:
        n = min(len(rows["compiled"][1]), len(rows["python"][1]))
        diff = float(np.max(np.abs(rows["compiled"][1][:n] - rows["python"][1][:n])))
        speedup = rows["python"][0] / rows["compiled"][0]
        print(f"speed-up {speedup:.1f}x, max output difference {diff:.1e}")
        sim_day = 86400 / args.step_s * rows["compiled"][0]
        print(f"one simulated day with the compiled kernel: about {sim_day:.0f} s of stepping")


if __name__ == "__main__":
    main()
