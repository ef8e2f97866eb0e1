#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Runs each hot kernel on training-shaped inputs plus one combined
attention-layer microbenchmark, and prints a table with the speedup. The
active path in the package is numba unless OBSGEN_DISABLE_NUMBA=1; this
script always times both variants when numba is importable.

Usage: python benchmarks/bench_kernels.py [--repeat 200]
"""

import argparse
import time

import numpy as np

from obsgen import kernels


def time_fn(fn, *args, repeat: int) -> float:
    fn(*args)  # warmup / JIT compile
    best = float("inf")
    for _ in range(5):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / repeat)
    return best


def bench(repeat: int) -> list[tuple[str, float, float]]:
    rng = np.random.default_rng(0)
    rows = []

    x = rng.normal(size=(64, 64))
    probs = kernels.softmax_rows_numpy(x)
    dprobs = rng.normal(size=x.shape)
    gain = rng.normal(size=64)
    bias = rng.normal(size=64)
    dout = rng.normal(size=x.shape)
    param = rng.normal(size=(512, 64))
    grad = rng.normal(size=param.shape)
    m = np.zeros_like(param)
    v = np.zeros_like(param)

    cases = [
        ("softmax_rows 64x64",
         (kernels.softmax_rows_numpy, kernels.softmax_rows_numba), (x,)),
        ("softmax_rows_grad 64x64",
         (kernels.softmax_rows_grad_numpy, kernels.softmax_rows_grad_numba),
         (probs, dprobs)),
        ("layer_norm_rows 64x64",
         (kernels.layer_norm_rows_numpy, kernels.layer_norm_rows_numba),
         (x, gain, bias, 1e-5)),
    ]
    for name, (np_fn, nb_fn), args in cases:
        t_np = time_fn(np_fn, *args, repeat=repeat)
        t_nb = time_fn(nb_fn, *args, repeat=repeat) if nb_fn else float("nan")
        rows.append((name, t_np, t_nb))

    out, xhat, inv_std = kernels.layer_norm_rows_numpy(x, gain, bias, 1e-5)
    t_np = time_fn(kernels.layer_norm_rows_grad_numpy, dout, xhat, inv_std, gain,
                   repeat=repeat)
    t_nb = (time_fn(kernels.layer_norm_rows_grad_numba, dout, xhat, inv_std, gain,
                    repeat=repeat)
            if kernels.layer_norm_rows_grad_numba else float("nan"))
    rows.append(("layer_norm_rows_grad 64x64", t_np, t_nb))

    def adam_np():
        kernels.adamw_update_numpy(param, grad, m, v, 1e-4, 0.9, 0.999, 1e-8,
                                   0.0, 0.1, 0.001)

    def adam_nb():
        kernels.adamw_update_numba(param, grad, m, v, 1e-4, 0.9, 0.999, 1e-8,
                                   0.0, 0.1, 0.001)

    t_np = time_fn(adam_np, repeat=repeat)
    t_nb = time_fn(adam_nb, repeat=repeat) if kernels.adamw_update_numba else float("nan")
    rows.append(("adamw_update 512x64", t_np, t_nb))
    return rows


def attention_layer_bench(repeat: int) -> tuple[str, float, float]:
    """End-to-end attention softmax path: scores -> probs -> grad."""
    rng = np.random.default_rng(1)
    scores = rng.normal(size=(48, 48))
    dprobs = rng.normal(size=scores.shape)

    def run(softmax, softmax_grad):
        def inner():
            p = softmax(scores)
            softmax_grad(p, dprobs)
        return inner

    t_np = time_fn(run(kernels.softmax_rows_numpy, kernels.softmax_rows_grad_numpy),
                   repeat=repeat)
    if kernels.softmax_rows_numba is None:
        return ("attention fwd+bwd 48x48", t_np, float("nan"))
    t_nb = time_fn(run(kernels.softmax_rows_numba, kernels.softmax_rows_grad_numba),
                   repeat=repeat)
    return ("attention fwd+bwd 48x48", t_np, t_nb)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args()

    print(f"numba available: {kernels.softmax_rows_numba is not None}; "
          f"active path: {'numba' if kernels.NUMBA_ACTIVE else 'numpy'}")
    rows = bench(args.repeat)
    rows.append(attention_layer_bench(args.repeat))
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, t_np, t_nb in rows:
        speed = t_np / t_nb if t_nb == t_nb and t_nb > 0 else float("nan")
        print(f"{name:<{width}}  {t_np * 1e6:>8.1f}us  {t_nb * 1e6:>8.1f}us  "
              f"{speed:>7.2f}x")


if __name__ == "__main__":
    main()
