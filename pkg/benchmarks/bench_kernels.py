"""Compare the compiled and pure-Python connected-component kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Inputs are the masks the region proposer actually sees (dark clusters on a
1024x768 frame) plus uniform noise masks, which are the worst case for the
union-find merge step.
"""
import argparse
import statistics
import time

import numpy as np

from thyrofna import _kernels
from thyrofna._kernels import _ccl_py
from thyrofna.core import ClassLabel
from thyrofna.proposals import ProposerConfig, dark_mask
from thyrofna.synth import synth_image


def blob_masks(n):
    rng = np.random.default_rng(0)
    return [dark_mask(synth_image(ClassLabel(i % 3), rng), ProposerConfig()) for i in range(n)]


def noise_masks(n, p):
    rng = np.random.default_rng(1)
    return [(rng.random((768, 1024)) < p).astype(np.uint8) for _ in range(n)]


def timed(fn, masks, repeat):
    runs = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for m in masks:
            fn(m)
        runs.append((time.perf_counter() - t0) / len(masks))
    return statistics.median(runs)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--frames", type=int, default=6)
    args = ap.parse_args()

    impls = {"python": _ccl_py.label_components}
    if _kernels.compiled_available():
        from thyrofna._kernels import _ccl

        impls["cython"] = _ccl.label_components
    else:
        print("compiled kernel not built; timing the fallback only")

    cases = {
        "cluster masks": blob_masks(args.frames),
        "noise p=0.3": noise_masks(args.frames, 0.3),
        "noise p=0.6": noise_masks(args.frames, 0.6),
    }
    print(f"{'input':<16}" + "".join(f"{name:>14}" for name in impls) + ("     speedup" if len(impls) > 1 else ""))
    for label, masks in cases.items():
        if len(impls) > 1:
            ref = [impls["python"](m) for m in masks]
            for m, (lab, stats) in zip(masks, ref):
                lab2, stats2 = impls["cython"](m)
                assert np.array_equal(lab, lab2) and np.array_equal(stats, stats2), "kernels disagree"
        times = {name: timed(fn, masks, args.repeat) for name, fn in impls.items()}
        row = f"{label:<16}" + "".join(f"{times[n] * 1e3:>11.2f} ms" for n in impls)
        if len(impls) > 1:
            row += f"{times['python'] / times['cython']:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
