"""Compare the compiled kernel backend against the numpy reference.

Runs each kernel on detector-sized inputs, then times whole training
iterations under both backends.  Usage: python benchmarks/bench_kernels.py
"""

import time

import numpy as np

import fcnet
from fcnet import _kernels, detector, synthdata


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels() -> list[tuple[str, float, float]]:
    rng = np.random.default_rng(0)
    img = np.ascontiguousarray(rng.random((1, 96, 96)))
    k1 = np.ascontiguousarray(rng.normal(size=(8, 1, 3, 3)))
    b1 = np.zeros(8)
    feat48 = np.ascontiguousarray(rng.normal(size=(8, 48, 48)))
    k2 = np.ascontiguousarray(rng.normal(size=(16, 8, 3, 3)))
    b2 = np.zeros(16)
    feat24 = np.ascontiguousarray(rng.normal(size=(16, 24, 24)))
    d24 = np.ascontiguousarray(rng.normal(size=(16, 24, 24)))
    d48 = np.ascontiguousarray(rng.normal(size=(16, 48, 48)))
    _, pool_idx = _kernels.maxpool2_fwd(np.ascontiguousarray(np.abs(d48)))

    cases = [
        ("conv2d_fwd 1x96x96", lambda: _kernels.conv2d_fwd(img, k1, b1), 20),
        ("conv2d_fwd 8x48x48", lambda: _kernels.conv2d_fwd(feat48, k2, b2), 20),
        ("conv2d_bwd 8x48x48", lambda: _kernels.conv2d_bwd(feat48, k2, d48), 10),
        ("maxpool2_fwd 16x48x48", lambda: _kernels.maxpool2_fwd(
            np.ascontiguousarray(np.abs(d48))), 50),
        ("maxpool2_bwd 16x24x24", lambda: _kernels.maxpool2_bwd(pool_idx, d24, 48, 48), 50),
        ("roi_pool_max 16ch 12x6->6x6", lambda: _kernels.roi_pool_max(
            feat24, 4, 6, 16, 12, 8, 7, 14, 11, True, 6, 6), 200),
        ("roi_pool_argmax 16ch 12x6->6x6", lambda: _kernels.roi_pool_max_argmax(
            feat24, 4, 6, 16, 12, 8, 7, 14, 11, True, 6, 6), 200),
    ]

    rows = []
    for name, fn, repeat in cases:
        fcnet.set_backend("python")
        t_py = _time(fn, repeat)
        fcnet.set_backend("native")
        t_nat = _time(fn, repeat)
        rows.append((name, t_py, t_nat))
    return rows


def bench_training(iters: int = 60) -> list[tuple[str, float, float]]:
    scenes = synthdata.generate(synthdata.DatasetSpec(scenes=6), seed=0)
    rows = []
    for label, cfg in (
        ("train iter (baseline)", detector.TrainConfig(iterations=iters, seed=1)),
        ("train iter (pixel+region)", detector.TrainConfig(
            iterations=iters, seed=1, pixel=True, region=True)),
    ):
        times = {}
        for backend in ("python", "native"):
            fcnet.set_backend(backend)
            t0 = time.perf_counter()
            detector.train(scenes, cfg)
            times[backend] = (time.perf_counter() - t0) / iters
        rows.append((label, times["python"], times["native"]))
    return rows


def main() -> None:
    if "native" not in fcnet.available_backends():
        print("compiled extension not available; nothing to compare")
        return
    rows = bench_kernels() + bench_training()
    width = max(len(r[0]) for r in rows)
    print(f"{'case':<{width}}  {'python':>10}  {'native':>10}  {'speedup':>8}")
    for name, t_py, t_nat in rows:
        print(f"{name:<{width}}  {t_py * 1e3:>8.3f}ms  {t_nat * 1e3:>8.3f}ms  "
              f"{t_py / t_nat:>7.1f}x")
    fcnet.set_backend("native")


if __name__ == "__main__":
    main()
