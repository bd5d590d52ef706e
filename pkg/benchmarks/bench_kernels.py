"""Time the compiled and pure-Python kernels on batch-sized inputs.

    python3 benchmarks/bench_kernels.py [--k 176 352 704] [--repeat 20]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from csc_rcl import kernels
from csc_rcl.synthetic import make_toy_lexicon


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, nargs="+", default=[176, 352, 704],
                    help="anchors per batch (16 sentences of ~11 characters is 176)")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    lex = make_toy_lexicon(500, seed=0)
    impls = kernels.available_backends()
    if "cython" not in impls:
        print("compiled kernels are not built; only the Python backend is timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<10} {'K':>5} " + " ".join(f"{n + ' ms':>12}" for n in impls)
          + ("    speedup" if len(impls) > 1 else ""))
    for k in args.k:
        ids = rng.integers(2, lex.vocab_size, size=k)
        mine_args = (ids, lex.pinyin_ids, lex.confusion_indptr, lex.confusion_indices, True, True, True)
        s_mask, w_mask = impls["python"].mine_masks(*mine_args)
        h = rng.normal(size=(k, 32))
        u = h / np.linalg.norm(h, axis=1, keepdims=True)
        sim = u @ u.T
        for name, call in (("mine", lambda m: m.mine_masks(*mine_args)),
                           ("rcl_rows", lambda m: m.rcl_rows(sim, s_mask, w_mask, 0.1))):
            times = {n: min(timeit.repeat(lambda: call(m), number=1, repeat=args.repeat)) * 1e3
                     for n, m in impls.items()}
            line = f"{name:<10} {k:>5} " + " ".join(f"{t:>12.3f}" for t in times.values())
            if len(times) > 1:
                line += f"   {times['python'] / times['cython']:>8.1f}x"
            print(line)


if __name__ == "__main__":
    main()
