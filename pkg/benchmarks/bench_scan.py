"""Time the compiled and NumPy scan backends.

Runs forward+backward of the LIF scan on a layer-sized tensor, then one
training step of the full default network, once per available backend.

    python benchmarks/bench_scan.py --batch 16 --repeat 5
"""

import argparse
import json
import time

import numpy as np

from spikekws import kernels
from spikekws.config import RunConfig
from spikekws.neuron import LIF, NeuronConfig, lif_scan
from spikekws.optim import RAdam
from spikekws.tensor import Tensor
from spikekws.train import build_model, train_step


def _best_of(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_scan(backend, batch, repeat):
    rng = np.random.default_rng(0)
    C, T, F = 64, 100, 40
    wn = rng.uniform(0.5, 2.0, C).astype(np.float32)
    data = (rng.normal(0.3, 1.0, (batch, C, T, F)) * wn[None, :, None, None]).astype(np.float32)
    cfg = NeuronConfig(beta=Tensor(np.float32(0.7), requires_grad=True),
                       thresholds=Tensor(np.ones(C, np.float32), requires_grad=True), mode=LIF)

    def run():
        x = Tensor(data, requires_grad=True)
        lif_scan(x, wn, cfg, backend=backend).sum().backward()

    return _best_of(run, repeat)


def bench_model(backend, batch, repeat):
    cfg = RunConfig()
    model = build_model(cfg)
    opt = RAdam(model.named_parameters(), cfg.optim)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(batch, 1, 100, 40)).astype(np.float32)
    y = rng.integers(0, 12, batch)
    kernels.set_backend(backend)
    return _best_of(lambda: train_step(model, opt, cfg, x, y, 1e-3), repeat)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true", help="print results as JSON")
    args = ap.parse_args(argv)

    active = kernels.BACKEND
    results = {}
    try:
        for name in sorted(kernels.BACKENDS):
            results[name] = {"scan_fwd_bwd_s": bench_scan(name, args.batch, args.repeat),
                             "train_step_s": bench_model(name, args.batch, args.repeat)}
    finally:
        kernels.set_backend(active)

    if args.json:
        print(json.dumps(results, indent=2))
        return
    print(f"batch={args.batch} best of {args.repeat}")
    print(f"{'backend':<8} {'scan fwd+bwd':>14} {'train step':>12}")
    for name, r in results.items():
        print(f"{name:<8} {r['scan_fwd_bwd_s'] * 1e3:>12.1f}ms {r['train_step_s'] * 1e3:>10.1f}ms")
    if "cython" in results:
        py, cy = results["python"], results["cython"]
        print(f"speedup: scan x{py['scan_fwd_bwd_s'] / cy['scan_fwd_bwd_s']:.1f}, "
              f"step x{py['train_step_s'] / cy['train_step_s']:.2f}")


if __name__ == "__main__":
    main()
