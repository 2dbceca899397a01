"""Compare the compiled and NumPy kernel implementations.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Prints the best-of-N wall time per call for each kernel and backend, plus a
full training step on a sparse-short batch.  Backends that are not
available are skipped.
"""
import argparse
import importlib
import timeit

import numpy as np

from autopool import _kernels_py, evaluation, objective, pooling
from autopool.synthdata import generate, sparse_short


def backends():
    out = {"numpy": _kernels_py}
    try:
        out["cython"] = importlib.import_module("autopool._kernels")
    except ImportError:
        pass
    return out


def cases(rng):
    p = rng.uniform(size=(16, 27, 5))
    alpha = rng.uniform(-3, 3, size=5)
    up = rng.normal(size=(16, 5))
    pred = rng.integers(0, 2, size=(5000, 5)).astype(np.int8)
    ref = rng.integers(0, 2, size=(5000, 5)).astype(np.int8)
    return p, alpha, up, pred, ref


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=200)
    args = ap.parse_args()

    p, alpha, up, pred, ref = cases(np.random.default_rng(0))
    data = generate(sparse_short(num_bags=(16, 0, 0)))
    batch = data["train"]
    config = objective.TrainConfig(operator="auto")

    results = {}
    for name, k in backends().items():
        pooled, w = k.autopool_forward(p, alpha)
        pooled, w = np.asarray(pooled), np.asarray(w)

        def step():
            objective.train_step(state, batch, config)

        pooling.kernels = evaluation.kernels = k
        state = objective.init_state(config, 10, 5, 27)
        jobs = {
            "autopool_forward (16x27x5)": lambda: k.autopool_forward(p, alpha),
            "autopool_backward (16x27x5)": lambda: k.autopool_backward(p, alpha, w, pooled, up),
            "segment_counts (5000x5)": lambda: k.segment_counts(pred, ref),
            "train_step (batch 16)": step,
        }
        for job, fn in jobs.items():
            number = args.number if "train_step" not in job else max(1, args.number // 10)
            t = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number
            results.setdefault(job, {})[name] = t

    names = list(backends())
    print(f"{'kernel':<30}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for job, row in results.items():
        line = f"{job:<30}" + "".join(f"{row[n] * 1e6:>10.1f}us" for n in names)
        if len(names) > 1:
            line += f"{row['numpy'] / row['cython']:>11.2f}x"
        print(line)


if __name__ == "__main__":
    main()
