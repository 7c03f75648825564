"""Empirical interval coverage on heteroscedastic synthetic data.

y = 2 x1 + sin(4 x2) + e,  e ~ N(0, (0.3 + 0.3 x1)^2),  x ~ U(0, 1)^2

    python scripts/coverage_benchmark.py --seeds 5 --level 0.9
"""

import argparse
import time

import numpy as np

from qrfdensity import forest as F, metrics as M, qrf
from qrfdensity.dataset import Dataset


def synthetic(rng, n):
    X = rng.uniform(size=(n, 2))
    y = 2 * X[:, 0] + np.sin(4 * X[:, 1]) + rng.normal(size=n) * (0.3 + 0.3 * X[:, 0])
    return X, y


def run_once(seed, n_train, n_test, ntree, level, min_node_size):
    rng = np.random.default_rng(seed)
    X, y = synthetic(rng, n_train)
    Xt, yt = synthetic(rng, n_test)
    ds = Dataset(X, y, ("x1", "x2"), np.arange(n_train))
    forest = F.fit(ds, F.ForestConfig(ntree=ntree, min_node_size=min_node_size, seed=seed))
    cdfs = qrf.conditional_cdfs(forest, Xt)
    intervals = [qrf.interval_from_cdf(c, level) for c in cdfs]
    medians = [qrf.quantile(c, 0.5) for c in cdfs]
    return M.evaluate(yt, medians, intervals, target_range=float(np.ptp(y)), level=level)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--n-train", type=int, default=2000)
    ap.add_argument("--n-test", type=int, default=500)
    ap.add_argument("--ntree", type=int, default=200)
    ap.add_argument("--min-node-size", type=int, default=5)
    ap.add_argument("--level", type=float, default=0.9)
    args = ap.parse_args()

    picps = []
    print(f"{'seed':>4} {'PICP':>7} {'PINAW':>7} {'RMSE':>7} {'sec':>6}")
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        rep = run_once(seed, args.n_train, args.n_test, args.ntree, args.level, args.min_node_size)
        picps.append(rep.picp)
        print(f"{seed:>4} {rep.picp:>7.2f} {rep.pinaw:>7.2f} {rep.rmse:>7.4f} {time.perf_counter() - t0:>6.1f}")
    print(f"mean PICP {np.mean(picps):.2f} (nominal {100 * args.level:.0f})")


if __name__ == "__main__":
    main()
