"""Time the compiled products against the numpy fallback (and BLAS for scale).

    python benchmarks/bench_kernels.py [--repeats 5] [--quick]

Also checks that both backends agree bit for bit on every case timed.
"""
import argparse
import time

import numpy as np

from macensemble import kernel
from macensemble.combine import MacModel
from macensemble.metric import ClassWeighting
from macensemble.trainer import loss_and_grads

# (rows, inner, cols): a trunk layer on a training batch, a residual layer, a wide square
CASES = [(4800, 16, 32), (4800, 32, 32), (500, 200, 600), (600, 600, 600)]
QUICK = [(4800, 16, 32), (256, 128, 128)]


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_matmul(cases, repeats):
    rng = np.random.default_rng(0)
    print(f"{'shape':>20} {'backend':>9} {'seconds':>10} {'GFLOP/s':>8}")
    for n, k, m in cases:
        a = rng.standard_normal((n, k))
        b = rng.standard_normal((k, m))
        flops = 2.0 * n * k * m
        results = {}
        for name in kernel.available_backends():
            kernel.set_backend(name)
            results[name] = kernel.matmul(a, b)
            t = best_of(lambda: kernel.matmul(a, b), repeats)
            print(f"{str((n, k, m)):>20} {name:>9} {t:10.4f} {flops / t / 1e9:8.2f}")
        t = best_of(lambda: a @ b, repeats)
        print(f"{str((n, k, m)):>20} {'blas':>9} {t:10.4f} {flops / t / 1e9:8.2f}")
        if len(results) == 2:
            same = np.array_equal(results["compiled"], results["python"])
            print(f"{'':>20} bit-identical: {same}")


def bench_train_step(repeats, trunk, block):
    rng = np.random.default_rng(1)
    x = rng.uniform(0.01, 0.99, (500, 16, 6))
    y = (rng.uniform(size=(500, 6)) < 0.1).astype(float)
    w = ClassWeighting.default(6, any_index=5)
    model = MacModel.initialize(0, trunk=trunk, block=block)
    print(f"\nloss+grad on a 500 x 16 x 6 batch, trunk={trunk}, block={block}")
    for name in kernel.available_backends():
        kernel.set_backend(name)
        t = best_of(lambda: loss_and_grads(model, x, y, w), repeats)
        print(f"{name:>9} {t:8.3f}s")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="small shapes only")
    args = ap.parse_args()
    previous = kernel.get_backend()
    try:
        bench_matmul(QUICK if args.quick else CASES, args.repeats)
        bench_train_step(args.repeats, (16, 16), 32)
    finally:
        kernel.set_backend(previous)


if __name__ == "__main__":
    main()
