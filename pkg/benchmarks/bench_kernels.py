"""Compare the compiled and numpy kernel backends.

Times the fused TPR step (forward and backward) and ``unbind3`` at the
single-task and all-tasks sizes, then a full training step with each
backend swapped in.

    python benchmarks/bench_kernels.py [--repeat 20]
"""
import argparse
import time

import numpy as np

from tprrnn import autodiff, kernels
from tprrnn.data_babi import Batch
from tprrnn.model import ModelConfig, batch_loss, init_params

SIZES = {"single-task": (128, 15, 10), "all-tasks": (32, 40, 20)}


def _best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_timings(mod, B, E, R, repeat):
    rng = np.random.default_rng(0)
    F = rng.normal(size=(B, E, R, E))
    e1, e2 = rng.normal(size=(2, B, E))
    r1, r2, r3 = rng.normal(size=(3, B, R))
    mask = np.ones(B)
    G = rng.normal(size=F.shape)

    def step():
        out, w, m, b = mod.tpr_step(F, e1, e2, r1, r2, r3, mask, True, True, True)
        mod.tpr_step_backward(G, F, e1, e2, r1, r2, r3, w, m, b, mask, True, True, True)

    return {"tpr_step fwd+bwd": _best_of(step, repeat),
            "unbind3": _best_of(lambda: mod.unbind3(F, e1, r1), repeat)}


def train_step_timing(mod, repeat):
    rng = np.random.default_rng(1)
    cfg = ModelConfig(vocab_size=22, dim_symbol=22, dim_hidden=22, dim_entity=15,
                      dim_relation=10, k=7)
    params = init_params(cfg, rng)
    B, T = 128, 10
    batch = Batch(rng.integers(1, 22, size=(B, T, 7)), np.ones((B, T)),
                  rng.integers(1, 22, size=(B, 7)), rng.integers(1, 22, size=B))
    saved = autodiff.kernels
    autodiff.kernels = mod
    try:
        def step():
            tape, _, loss, _ = batch_loss(params, batch)
            tape.backward(loss)
        return _best_of(step, max(3, repeat // 4))
    finally:
        autodiff.kernels = saved


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the numpy backend is available")
    print(f"{'case':40s}" + "".join(f"{name:>12s}" for name in backends) + "   speedup")
    for label, (B, E, R) in SIZES.items():
        rows = {name: kernel_timings(mod, B, E, R, args.repeat) for name, mod in backends.items()}
        for op in rows["numpy"]:
            ts = [rows[name][op] for name in backends]
            speed = f"{ts[0] / ts[-1]:9.1f}x" if len(ts) > 1 else ""
            print(f"{label + ' ' + op:40s}" + "".join(f"{t * 1e3:10.2f}ms" for t in ts) + speed)
    ts = [train_step_timing(mod, args.repeat) for mod in backends.values()]
    speed = f"{ts[0] / ts[-1]:9.1f}x" if len(ts) > 1 else ""
    print(f"{'train step B=128 T=10 (fwd+bwd)':40s}" + "".join(f"{t * 1e3:10.2f}ms" for t in ts)
          + speed)


if __name__ == "__main__":
    main()
