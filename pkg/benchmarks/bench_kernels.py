"""Compiled vs pure-Python kernels, and one full test-time training step.

Usage::

    python benchmarks/bench_kernels.py [--repeat 20] [--csv out.csv]
"""

import argparse
import csv
import sys
import timeit

import numpy as np

from tttlab.core import kernels
from tttlab.selfsup import make_test_batch
from tttlab.ttt import TTTConfig, adapt
from tttlab.ymodel import DESK_CONFIG, YModelConfig, build_model


def _cases(rng):
    x = rng.random((32, 16, 16, 16), dtype=np.float32)
    cols = kernels._kernels_py.im2col(x, 3, 1, 1, 16, 16)
    g = rng.standard_normal((32, 256, 32)).astype(np.float32)
    gamma = np.ones(32, np.float32)
    beta = np.zeros(32, np.float32)
    _, xhat, inv = kernels._kernels_py.group_norm_forward(g, 8, gamma, beta, 1e-5)
    gout = rng.standard_normal(g.shape).astype(np.float32)
    image = rng.random((3, 32, 32), dtype=np.float32)
    return {
        "im2col 32x16x16x16 k3": lambda: kernels.im2col(x, 3, 1, 1, 16, 16),
        "col2im 32x16x16x16 k3": lambda: kernels.col2im(cols, 32, 16, 16, 16, 3, 1, 1, 16, 16),
        "groupnorm fwd 32x256x32": lambda: kernels.group_norm_forward(g, 8, gamma, beta, 1e-5),
        "groupnorm bwd 32x256x32": lambda: kernels.group_norm_backward(gout, xhat, inv, gamma, True),
        "ttt step (desk model)": _ttt_step(DESK_CONFIG, image),
        "ttt step (three-block model)": _ttt_step(YModelConfig(), image),
    }


def _ttt_step(config, image):
    model = build_model(config, 0)
    cfg = TTTConfig(steps=1)
    rng = np.random.default_rng(0)
    return lambda: adapt(model.clone(), image, cfg, rng)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--csv", default=None)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the NumPy fallback is available", file=sys.stderr)
    rows = []
    for name in backends:
        kernels.use_backend(name)
        for case, fn in _cases(np.random.default_rng(0)).items():
            fn()  # warm-up
            best = min(timeit.repeat(fn, number=1, repeat=args.repeat))
            rows.append((case, name, best * 1e3))
    timing = {(c, b): t for c, b, t in rows}
    print(f"{'case':<30} {'python ms':>10} {'compiled ms':>12} {'speedup':>8}")
    for case in dict.fromkeys(c for c, _, _ in rows):
        py = timing.get((case, "python"), float("nan"))
        co = timing.get((case, "compiled"), float("nan"))
        print(f"{case:<30} {py:>10.3f} {co:>12.3f} {py / co:>7.2f}x")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["case", "backend", "best_ms"])
            out.writerows(rows)


if __name__ == "__main__":
    main()
