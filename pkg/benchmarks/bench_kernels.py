"""Compare the compiled and numpy convolution kernels.

Times one forward and one backward pass of the default four-layer extractor
on a (32, 2, 320) batch, checks that both backends agree, and prints a table.

    python benchmarks/bench_kernels.py [--batch 32] [--length 320] [--repeat 20]
"""

import argparse
import time

import numpy as np

from csi2q.nn import kernels
from csi2q.nn.models import ExtractorSpec


def layer_shapes(spec, batch, length):
    c_in = spec.in_channels
    for c_out, d in zip(spec.widths, spec.dilations):
        yield (batch, c_in, length), (spec.kernel_size, c_out, c_in), d
        c_in = c_out


def run(impl, spec, batch, length, repeat, rng):
    layers = []
    for xs, ws, d in layer_shapes(spec, batch, length):
        x = rng.standard_normal(xs)
        wt = rng.standard_normal(ws)
        layers.append((x, wt, np.zeros(ws[1]), d, np.empty((xs[0], ws[1], xs[2]))))
    fwd, bwd = [], []
    for _ in range(repeat):
        t = time.perf_counter()
        for x, wt, b, d, out in layers:
            impl.conv_forward(x, wt, b, d, out)
        fwd.append(time.perf_counter() - t)
        t = time.perf_counter()
        for x, wt, b, d, out in layers:
            impl.conv_backward(x, wt, d, out, np.zeros_like(x), np.zeros_like(wt), True)
        bwd.append(time.perf_counter() - t)
    return float(np.median(fwd)), float(np.median(bwd)), [l[4].copy() for l in layers]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--length", type=int, default=320)
    ap.add_argument("--repeat", type=int, default=20)
    a = ap.parse_args()
    spec = ExtractorSpec()
    results = {}
    for name, impl in sorted(kernels.BACKENDS.items()):
        results[name] = run(impl, spec, a.batch, a.length, a.repeat, np.random.default_rng(0))
    print(f"extractor {spec.widths}, kernel {spec.kernel_size}, dilations {spec.dilations}, "
          f"batch {a.batch}, length {a.length}")
    print(f"{'backend':10s} {'forward ms':>11s} {'backward ms':>12s}")
    for name, (f, b, _) in results.items():
        print(f"{name:10s} {1e3 * f:11.2f} {1e3 * b:12.2f}")
    if "compiled" in results:
        py, c = results["python"], results["compiled"]
        err = max(np.max(np.abs(x - y)) for x, y in zip(py[2], c[2]))
        print(f"speed-up forward {py[0] / c[0]:.2f}x, backward {py[1] / c[1]:.2f}x, max |diff| {err:.2e}")
    else:
        print("compiled backend not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
