"""Compare the compiled and pure-numpy kernel backends.

Times the three hot kernels (3x3 convolution, 4x4 stride-2 transposed
convolution, 2x2 max pooling), forward and backward, at the shapes the
default model actually uses, then times a full model training step under
each backend.

Run:  python3 benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mtliver.kernels import _numpy_kernels

try:
    from mtliver.kernels import _convops
except ImportError:
    _convops = None


def timeit(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    cases = []
    # encoder shapes for a 32x32 input with the 8->16->32->64 schedule
    for c_in, c_out, hw in ((1, 8, 32), (8, 16, 16), (16, 32, 8), (32, 64, 4)):
        x = rng.normal(size=(c_in, hw, hw))
        w = rng.normal(size=(c_out, c_in, 3, 3))
        b = rng.normal(size=c_out)
        gy = rng.normal(size=(c_out, hw, hw))
        cases.append((f"conv3x3 {c_in:3d}->{c_out:3d} @{hw}x{hw}",
                      lambda m, x=x, w=w, b=b: m.conv3x3_forward(x, w, b),
                      lambda m, x=x, w=w, gy=gy: m.conv3x3_backward(x, w, gy)))
    # decoder shapes from the 256-channel bottleneck
    for c_in, c_out, hw in ((256, 64, 2), (64, 32, 4), (32, 16, 8), (16, 8, 16)):
        x = rng.normal(size=(c_in, hw, hw))
        w = rng.normal(size=(c_in, c_out, 4, 4))
        b = rng.normal(size=c_out)
        gy = rng.normal(size=(c_out, 2 * hw, 2 * hw))
        cases.append((f"convt4x4 {c_in:3d}->{c_out:3d} @{hw}x{hw}",
                      lambda m, x=x, w=w, b=b: m.convt4x4_forward(x, w, b),
                      lambda m, x=x, w=w, gy=gy: m.convt4x4_backward(x, w, gy)))
    x = rng.normal(size=(8, 32, 32))
    gy = rng.normal(size=(8, 16, 16))
    _, idx = _numpy_kernels.maxpool2x2_forward(x)
    cases.append(("maxpool2x2 8 @32x32",
                  lambda m, x=x: m.maxpool2x2_forward(x),
                  lambda m, idx=idx, gy=gy: m.maxpool2x2_backward(idx, gy, 32, 32)))

    backends = [("numpy", _numpy_kernels)]
    if _convops is not None:
        backends.append(("compiled", _convops))

    print(f"{'kernel':34s}" + "".join(f"{name + ' fwd':>14s}{name + ' bwd':>14s}"
                                      for name, _ in backends))
    for label, fwd, bwd in cases:
        row = f"{label:34s}"
        for _, mod in backends:
            row += f"{timeit(lambda: fwd(mod), repeats) * 1e6:12.1f}us"
            row += f"{timeit(lambda: bwd(mod), repeats) * 1e6:12.1f}us"
        print(row)


def bench_train_step(repeats):
    import os
    import subprocess
    import sys
    code = (
        "import time, numpy as np\n"
        "from mtliver.kernels import BACKEND\n"
        "from mtliver.model import ModelConfig\n"
        "from mtliver.training import TrainConfig, build_networks, train_step\n"
        "from mtliver.phantom import PhantomConfig, generate_sample\n"
        "cfg = TrainConfig()\n"
        "model, disc, og, od = build_networks(cfg)\n"
        "s = generate_sample(0, 0, PhantomConfig())\n"
        "spe = np.stack([model.spectral_input(p / 255.0) for p in s.phases])\n"
        "train_step([(s, spe)], model, disc, og, od, cfg)\n"
        "t0 = time.perf_counter()\n"
        f"n = {repeats}\n"
        "for _ in range(n):\n"
        "    train_step([(s, spe)], model, disc, og, od, cfg)\n"
        "dt = (time.perf_counter() - t0) / n\n"
        "print(f'{BACKEND}: {dt * 1e3:.1f} ms / training step')\n"
    )
    for backend in ("numpy", "compiled"):
        if backend == "compiled" and _convops is None:
            print("compiled: extension not built")
            continue
        env = dict(os.environ, MTLIVER_KERNELS=backend)
        subprocess.run([sys.executable, "-c", code], env=env, check=True)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()
    if _convops is None:
        print("note: compiled extension unavailable, timing numpy only\n")
    bench_kernels(args.repeats)
    print()
    bench_train_step(max(args.repeats // 10, 5))


if __name__ == "__main__":
    main()
