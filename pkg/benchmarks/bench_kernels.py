"""Benchmark the compiled scoring kernels against the NumPy fallback.

Times the raw kernels on a synthetic matrix, then times HNSW index build
and search end to end under each implementation. Run from the repo root:

    python benchmarks/bench_kernels.py [--dim 768] [--rows 20000]
"""

import argparse
import subprocess
import sys
import time

import numpy as np


def bench_fn(fn, repeat: int = 7, inner: int = 10) -> float:
    """Best-of-repeat mean wall time per call, in seconds."""
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter() - t0) / inner)
    return min(samples)


def bench_kernels(dim: int, rows: int) -> dict:
    from memloop.index import kernels

    rng = np.random.default_rng(7)
    mat = rng.standard_normal((rows, dim))
    mat /= np.linalg.norm(mat, axis=1, keepdims=True)
    mat = np.ascontiguousarray(mat)
    query = np.ascontiguousarray(mat[0])
    picks = np.ascontiguousarray(rng.integers(0, rows, size=256))

    return {
        "compiled": kernels.COMPILED,
        "all_scores_us": bench_fn(lambda: kernels.all_scores(mat, query)) * 1e6,
        "scores_for_rows_us": bench_fn(
            lambda: kernels.scores_for_rows(mat, picks, query)
        )
        * 1e6,
    }


def bench_index(dim: int, n: int = 2000, queries: int = 200) -> dict:
    from memloop.index import HnswIndex, kernels

    rng = np.random.default_rng(11)
    vecs = rng.standard_normal((n, dim))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)

    t0 = time.perf_counter()
    idx = HnswIndex(dim)
    for i in range(n):
        idx.insert(f"v{i:05d}", vecs[i])
    build_s = time.perf_counter() - t0

    qs = rng.standard_normal((queries, dim))
    qs /= np.linalg.norm(qs, axis=1, keepdims=True)
    t0 = time.perf_counter()
    for q in qs:
        idx.search(q, 10)
    search_us = (time.perf_counter() - t0) / queries * 1e6

    return {"compiled": kernels.COMPILED, "build_s": build_s, "search_us": search_us}


def run_mode(args, no_ext: bool) -> dict:
    """Re-exec this script in a subprocess so kernel selection is fresh."""
    import json
    import os

    env = dict(os.environ)
    if no_ext:
        env["MEMLOOP_NO_EXT"] = "1"
    else:
        env.pop("MEMLOOP_NO_EXT", None)
    out = subprocess.run(
        [sys.executable, __file__, "--dim", str(args.dim), "--rows", str(args.rows), "--worker"],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    return json.loads(out.stdout)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dim", type=int, default=768)
    parser.add_argument("--rows", type=int, default=20000)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.worker:
        import json

        result = bench_kernels(args.dim, args.rows)
        result.update({f"index_{k}": v for k, v in bench_index(args.dim).items() if k != "compiled"})
        print(json.dumps(result))
        return

    modes = {"compiled": run_mode(args, no_ext=False), "fallback": run_mode(args, no_ext=True)}
    if not modes["compiled"]["compiled"]:
        print("warning: extension not built, both runs use the fallback", file=sys.stderr)

    print(f"matrix {args.rows} x {args.dim}, HNSW 2000 vectors, k=10\n")
    print(f"{'kernel':<22}{'compiled':>12}{'fallback':>12}{'ratio':>8}")
    for key, label in [
        ("all_scores_us", "all_scores (us)"),
        ("scores_for_rows_us", "scores_for_rows (us)"),
        ("index_build_s", "index build (s)"),
        ("index_search_us", "index search (us)"),
    ]:
        c, f = modes["compiled"][key], modes["fallback"][key]
        print(f"{label:<22}{c:>12.1f}{f:>12.1f}{f / c:>8.2f}")


if __name__ == "__main__":
    main()
