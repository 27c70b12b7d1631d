"""Wall-clock comparison of the compiled kernels against their pure-Python twins.

Run ``python3 benchmarks/bench_kernels.py``; pass ``--quick`` for smaller inputs.
Each kernel is timed on identical inputs with both backends and the table
reports the best of ``--repeats`` runs and the speed-up.
"""
import argparse
import time

import numpy as np

from gsr import kernels
from gsr.metrics import edge_lengths


def csr(adj):
    rows, cols = np.nonzero(adj)
    indptr = np.zeros(len(adj) + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=len(adj)), out=indptr[1:])
    return indptr, cols.astype(np.int64)


def random_graph(n, density, rng):
    w = np.triu(rng.uniform(0.05, 1.0, (n, n)) * (rng.random((n, n)) < density), 1)
    return w + w.T


def cases(scale, rng):
    """Kernel name -> argument tuple, sized by ``scale``."""
    n = 64 * scale
    adj = random_graph(n, 0.2, rng) > 0
    np.fill_diagonal(adj, True)
    indptr, indices = csr(adj)
    heads, d = 4, 16
    q, k, v, g = (rng.normal(size=(n, d)) for _ in range(4))
    w = rng.uniform(0.1, 1.0, len(indices))
    att = (q, k, v, indptr, indices, w, heads, 1.0 / np.sqrt(d // heads))
    alpha = kernels.get_backend("python").attention_forward(*att)[1]
    scores = rng.normal(size=(len(indices), heads))

    walk_adj = random_graph(n, 0.1, rng) > 0
    w_indptr, w_indices = csr(walk_adj)
    walks = rng.integers(0, n, size=(n * 2, 20)).astype(np.int64)
    metric_graph = random_graph(24 * scale, 0.3, rng)
    return {
        "attention_forward": att,
        "attention_backward": att + (alpha, g),
        "segment_softmax_forward": (scores, indptr),
        "segment_softmax_backward": (kernels.get_backend("python").segment_softmax_forward(
            scores, indptr), rng.normal(size=scores.shape), indptr),
        "node2vec_walks": (w_indptr, w_indices, np.ascontiguousarray(walk_adj, dtype=np.uint8),
                           2, 20, 0.5, 2.0, 1),
        "sgns_train": (walks, n, 16, 5, 5, 0.025, 1e-4, 1),
        "brandes": (edge_lengths(metric_graph),),
        "rewire_undirected": (metric_graph, 20 * len(metric_graph), 1),
    }


def best_time(fn, args, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--quick", action="store_true", help="use inputs a quarter the size")
    args = parser.parse_args(argv)
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the Python backend is available")
    rng = np.random.default_rng(0)
    table = cases(1 if args.quick else 4, rng)
    print(f"{'kernel':<26}" + "".join(f"{b:>12}" for b in backends) + f"{'speed-up':>10}")
    for name, call_args in table.items():
        times = [best_time(getattr(kernels.get_backend(b), name), call_args, args.repeats)
                 for b in backends]
        ratio = f"{times[-1] / times[0]:>9.1f}x" if len(times) == 2 else ""
        print(f"{name:<26}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times) + ratio)


if __name__ == "__main__":
    main()
