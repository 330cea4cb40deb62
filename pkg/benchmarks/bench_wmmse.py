"""Time the compiled WMMSE kernel against the numpy fallback on desk-scale channels.

    python benchmarks/bench_wmmse.py --samples 500
"""
import argparse
import time

import numpy as np

from risgnn import _wmmse_py
from risgnn.baselines import batch_effective_channels, phases
from risgnn.config import SystemConfig
from risgnn.datasets import sample
from risgnn.training import labels_from_distances

try:
    from risgnn import _wmmse_ext
except ImportError:  # extension not built
    _wmmse_ext = None


def effective_batch(cfg, n, seed):
    reals = [sample(cfg, seed, i) for i in range(n)]
    H_cas = np.stack([r.H_cas for r in reals])
    theta = np.stack([phases(cfg, "random", np.random.default_rng([seed, i])) for i in range(n)])
    U = labels_from_distances(np.stack([r.distances for r in reals]))
    return batch_effective_channels(H_cas, theta, U)


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=500)
    ap.add_argument("--elements", type=int, default=9)
    ap.add_argument("--n-t", type=int, default=8)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    cfg = SystemConfig(n_t=args.n_t).with_elements(args.elements)
    H = effective_batch(cfg, args.samples, args.seed)
    w = np.asarray(cfg.weights)
    call = lambda mod: lambda: mod.wmmse_batch(H, w, cfg.noise_power, cfg.p_max, 100, 1e-6)

    t_py, (_, wsr_py, it_py) = best_of(call(_wmmse_py), args.repeats)
    print(f"channels: {args.samples} x {H.shape[1]} users x {H.shape[2]} antennas, "
          f"mean iterations {it_py.mean():.1f}")
    print(f"python  : {t_py:8.3f} s  ({1e3 * t_py / args.samples:.3f} ms/sample)")
    if _wmmse_ext is None:
        print("cython  : not built (pip install -e . compiles it)")
        return 0
    t_cy, (_, wsr_cy, it_cy) = best_of(call(_wmmse_ext), args.repeats)
    print(f"cython  : {t_cy:8.3f} s  ({1e3 * t_cy / args.samples:.3f} ms/sample)")
    print(f"speedup : {t_py / t_cy:8.1f}x")
    dev = np.max(np.abs(wsr_cy - wsr_py) / np.maximum(np.abs(wsr_py), 1e-300))
    print(f"max relative WSR difference {dev:.1e}, iteration counts equal: {np.array_equal(it_py, it_cy)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
