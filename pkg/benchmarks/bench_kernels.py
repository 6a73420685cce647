"""Benchmark the compiled kernels against the pure-numpy fallback.

Times the row-wise hot kernels at full-scale gating dimensions (B*T=804 rows,
N=96 experts, S=1024 features) and one full gate+fuse forward pass per
backend. Run after installing the package:

    python3 benchmarks/bench_kernels.py            # full-scale dims
    python3 benchmarks/bench_kernels.py --quick    # small dims, CI-friendly
"""

import argparse
import time

import numpy as np

import moefuse.numkit as nk
from moefuse import _kernels as K
from moefuse.model import FusionModel
from moefuse.moe_fusion import MoEConfig, flatten, fuse_forward, gate_forward


def best_of(fn, repeats=5):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(backend, d, n, s, k, rng):
    impl = K.get_backend(backend)
    logits = np.ascontiguousarray(rng.normal(size=(d, n)))
    mask = impl.topk_mask(logits, k)
    probs = impl.masked_softmax_fwd(logits, mask)
    gout = np.ascontiguousarray(rng.normal(size=(d, n)))
    src = np.ascontiguousarray(rng.normal(size=(d, s)))
    rows = np.sort(rng.choice(d, size=max(1, d // 8), replace=False)).astype(np.intp)
    sub = np.ascontiguousarray(rng.normal(size=(rows.size, s)))
    dst = np.zeros((d, s))
    return {
        "topk_mask": best_of(lambda: impl.topk_mask(logits, k)),
        "masked_softmax_fwd": best_of(lambda: impl.masked_softmax_fwd(logits, mask)),
        "masked_softmax_bwd": best_of(lambda: impl.masked_softmax_bwd(probs, mask, gout)),
        "gather_rows": best_of(lambda: impl.gather_rows(src, rows)),
        "scatter_add_rows": best_of(lambda: impl.scatter_add_rows(dst, rows, sub)),
    }


def bench_forward(backend, batch, frames, s, n, k, hidden, rng):
    K.set_backend(backend)
    config = MoEConfig(k=k, n=n, hidden=hidden, feature_dim=s, frames=frames)
    model = FusionModel(config, head_width=64, seed=0)
    layers = [rng.normal(size=(batch, frames, s)) for _ in range(25)]

    def run():
        flat = [flatten(nk.leaf(v)) for v in layers]
        gate = gate_forward(model.gating, flat[-1], k)
        fuse_forward(config, model.experts, gate, flat[:-1])

    return best_of(run, repeats=3)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="small dimensions")
    args = parser.parse_args()

    if args.quick:
        batch, frames, s, hidden = 2, 20, 64, 16
    else:
        batch, frames, s, hidden = 4, 201, 1024, 128
    n_experts_per_layer, k = 4, 2
    d = batch * frames
    n = 24 * n_experts_per_layer

    backends = K.available_backends()
    print(f"backends: {backends}   rows D={d}, experts N={n}, features S={s}")
    rng = np.random.default_rng(0)

    results = {b: bench_kernels(b, d, n, s, k, rng) for b in backends}
    names = list(next(iter(results.values())))
    width = max(len(x) for x in names)
    header = f"{'kernel':<{width}}" + "".join(f"  {b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"  {'speedup':>9}"
    print(header)
    for name in names:
        row = f"{name:<{width}}"
        for b in backends:
            row += f"  {results[b][name] * 1e6:>10.1f}us"
        if len(backends) == 2:
            row += f"  {results['python'][name] / results['cython'][name]:>8.2f}x"
        print(row)

    original = K.active_backend()
    try:
        fwd = {b: bench_forward(b, batch, frames, s, n_experts_per_layer, k, hidden, rng) for b in backends}
    finally:
        K.set_backend(original)
    row = f"{'gate+fuse forward':<{width}}"
    for b in backends:
        row += f"  {fwd[b] * 1e3:>10.1f}ms"
    if len(backends) == 2:
        row += f"  {fwd['python'] / fwd['cython']:>8.2f}x"
    print(row)
    if len(backends) < 2:
        print("note: compiled kernels unavailable; showing the python fallback only")


if __name__ == "__main__":
    main()
