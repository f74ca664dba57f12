"""Benchmark the compiled kernels against the pure-numpy fallback.

Times the raw convolution/pool kernels at the shapes the default network
uses, plus one full forward+backward training step. Run from the repo root:

    python benchmarks/bench_kernels.py [--repeats 200]
"""

import argparse
import time

import numpy as np

from validmark.kernels import _reference

try:
    from validmark.kernels import _fastops
except ImportError:
    _fastops = None

# (label, N, C, F, H, k, stride, pad) for the desk-default net at batch 10
CONV_SHAPES = [
    ("stem 5x5 1->8 @32", 10, 1, 8, 32, 5, 1, 2),
    ("block1 3x3 8->8 @16", 10, 8, 8, 16, 3, 1, 1),
    ("block2 3x3 8->16 @16 s2", 10, 8, 16, 16, 3, 2, 1),
    ("block3 3x3 16->32 @8 s2", 10, 16, 32, 8, 3, 2, 1),
]


def time_call(fn, repeats):
    fn()  # warm up
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn()
        best = min(best, (time.perf_counter() - t0) / repeats)
    return best * 1000.0


def bench_convs(repeats):
    rng = np.random.default_rng(0)
    rows = []
    for label, n, c, f, h, k, stride, pad in CONV_SHAPES:
        x = rng.normal(size=(n, c, h, h))
        w = rng.normal(size=(f, c, k, k))
        b = rng.normal(size=f)
        y = _reference.conv2d_forward(x, w, b, stride, pad)
        dy = rng.normal(size=y.shape)
        for backend_name, mod in backends():
            fwd = time_call(lambda: mod.conv2d_forward(x, w, b, stride, pad), repeats)
            bwd = time_call(lambda: mod.conv2d_backward(x, w, dy, stride, pad), repeats)
            rows.append((label, backend_name, fwd, bwd))
    return rows


def backends():
    out = [("reference", _reference)]
    if _fastops is not None:
        out.append(("compiled", _fastops))
    return out


def bench_train_step(repeats):
    from validmark import kernels
    from validmark.losses import LossConfig
    from validmark.net import MicroNet, NetConfig, OptimConfig, sgd_step

    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, size=(10, 32, 32))
    gt = rng.uniform(0, 32, size=(10, 5, 2))
    cfg = NetConfig(landmark_count=5, input_size=32, stem_channels=8,
                    block_channels=(8, 16, 32), fc_hidden=64)
    optim = OptimConfig()
    lcfg = LossConfig()
    rows = []
    for backend_name, mod in backends():
        kernels.conv2d_forward = mod.conv2d_forward
        kernels.conv2d_backward = mod.conv2d_backward
        kernels.maxpool2_forward = mod.maxpool2_forward
        kernels.maxpool2_backward = mod.maxpool2_backward
        net = MicroNet.init(cfg, seed=3)

        def step():
            _, _, grads = net.loss_and_gradients(x, gt, lcfg)
            sgd_step(net, grads, optim)

        rows.append((backend_name, time_call(step, max(repeats // 4, 10))))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    if _fastops is None:
        print("note: compiled kernels unavailable; timing the fallback only\n")

    print(f"{'kernel':<28}{'backend':<12}{'fwd ms':>10}{'bwd ms':>10}")
    for label, backend_name, fwd, bwd in bench_convs(args.repeats):
        print(f"{label:<28}{backend_name:<12}{fwd:>10.3f}{bwd:>10.3f}")

    print()
    print(f"{'full train step (batch 10)':<28}{'backend':<12}{'ms':>10}")
    results = bench_train_step(args.repeats)
    for backend_name, ms in results:
        print(f"{'':<28}{backend_name:<12}{ms:>10.3f}")
    if len(results) == 2:
        print(f"\nspeedup (reference/compiled): {results[0][1] / results[1][1]:.2f}x")


if __name__ == "__main__":
    main()
