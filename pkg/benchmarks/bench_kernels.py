"""Benchmark the compiled kernels against the pure-numpy fallback.

Runs itself twice in subprocesses (VSERVO_KERNELS=compiled / pure), timing
the patch gather/scatter at the convolution geometries the network actually
uses, plus one full forward+backward training step.

    python benchmarks/bench_kernels.py
"""

import json
import os
import subprocess
import sys
import time

CASES = [
    # (name, n, h, w, c, kernel, stride, pad)
    ("conv1 64x64x3", 64, 64, 64, 3, 3, 2, 1),
    ("conv2 32x32x8", 64, 32, 32, 8, 3, 2, 1),
    ("conv3 16x16x32", 32, 16, 16, 32, 3, 2, 1),
    ("conv4 8x8x32", 32, 8, 8, 32, 3, 2, 1),
]


def measure():
    import numpy as np

    import vservo
    from vservo.kernels import extract_patches, scatter_patches

    rng = np.random.default_rng(0)
    out = {"backend": vservo.KERNEL_BACKEND, "cases": {}}
    for name, n, h, w, c, k, s, p in CASES:
        x = rng.normal(size=(n, h, w, c))
        patches = extract_patches(x, k, s, p)
        g = rng.normal(size=patches.shape)

        reps = 20
        t0 = time.perf_counter()
        for _ in range(reps):
            extract_patches(x, k, s, p)
        gather_ms = (time.perf_counter() - t0) / reps * 1e3
        t0 = time.perf_counter()
        for _ in range(reps):
            scatter_patches(g, n, h, w, c, k, s, p)
        scatter_ms = (time.perf_counter() - t0) / reps * 1e3
        out["cases"][name] = {"gather_ms": gather_ms, "scatter_ms": scatter_ms}

    # One supervised training step at the default configuration.
    from vservo import autodiff as ad
    from vservo.losses import loss_pose_batch
    from vservo.network import HeadId, NetConfig, forward_weights, init_params

    cfg = NetConfig()
    params = init_params(cfg, 0)
    refs = rng.random((32, 64, 64, 3))
    curs = rng.random((32, 64, 64, 3))
    labels = rng.normal(size=(32, 6)) * 0.1

    def step():
        weights = {k2: ad.Tensor(v, requires_grad=True) for k2, v in params.groups.items()}
        loss = loss_pose_batch(
            forward_weights(weights, cfg, ad.Tensor(refs), ad.Tensor(curs), HeadId.REG_LSD),
            ad.Tensor(labels),
        )
        ad.grad(loss, list(weights.values()))

    step()
    reps = 10
    t0 = time.perf_counter()
    for _ in range(reps):
        step()
    out["train_step_ms"] = (time.perf_counter() - t0) / reps * 1e3
    return out


def main():
    if os.environ.get("_VSERVO_BENCH_CHILD"):
        print(json.dumps(measure()))
        return

    results = {}
    for backend in ("compiled", "pure"):
        env = dict(os.environ, VSERVO_KERNELS=backend, _VSERVO_BENCH_CHILD="1")
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__)], env=env, capture_output=True, text=True
        )
        data = json.loads(proc.stdout.strip().splitlines()[-1])
        if data["backend"] != backend:
            print(f"note: requested {backend}, got {data['backend']} (extension not built?)")
        results[backend] = data

    comp, pure = results["compiled"], results["pure"]
    print(f"{'case':<16} {'gather c/p (ms)':>20} {'scatter c/p (ms)':>20} {'speedup g/s':>14}")
    for name in comp["cases"]:
        cg, cs = comp["cases"][name]["gather_ms"], comp["cases"][name]["scatter_ms"]
        pg, ps = pure["cases"][name]["gather_ms"], pure["cases"][name]["scatter_ms"]
        print(
            f"{name:<16} {cg:>9.2f}/{pg:<9.2f} {cs:>9.2f}/{ps:<9.2f} "
            f"{pg / cg:>6.2f}x/{ps / cs:<5.2f}x"
        )
    print(
        f"{'train step':<16} compiled {comp['train_step_ms']:.1f} ms | "
        f"pure {pure['train_step_ms']:.1f} ms | "
        f"speedup {pure['train_step_ms'] / comp['train_step_ms']:.2f}x"
    )


if __name__ == "__main__":
    main()
