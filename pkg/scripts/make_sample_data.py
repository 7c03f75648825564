"""Generate the bundled 17-row yearly crop table (synthetic, 2000-2016).

Six seasonal weather averages and a yield target in t/ha. Yield falls with
average and minimum temperature and rises with rainfall; a few cells are
blanked out so the imputation step has work to do.

    python scripts/make_sample_data.py [out.csv]
"""

import sys
from pathlib import Path

import numpy as np

from qrfdensity.dataset import RawTable, write_csv

FEATURES = ("Sunshine", "Humidity", "Rainfall", "AvgT", "MaxT", "MinT")
MISSING = [(3, "Humidity"), (8, "Rainfall"), (12, "Sunshine")]


def make(seed: int = 20) -> RawTable:
    rng = np.random.default_rng(seed)
    n = 17
    years = np.arange(2000, 2000 + n)
    sunshine = rng.normal(7.0, 0.5, n)
    humidity = rng.normal(70.0, 5.0, n)
    rainfall = rng.normal(100.0, 20.0, n)
    avg_t = rng.normal(28.0, 0.6, n)
    max_t = avg_t + rng.normal(5.5, 0.5, n)
    min_t = avg_t - rng.normal(5.0, 0.4, n)
    signal = -0.9 * (avg_t - 28.0) - 0.6 * (min_t - 23.0) + 0.012 * (rainfall - 100.0)
    yield_ = 1.22 + 0.5 * signal / signal.std() + rng.normal(0.0, 0.08, n)
    yield_ = np.clip(yield_, 0.5, 1.9)
    feats = np.column_stack([sunshine, humidity, rainfall, avg_t, max_t, min_t]).round(2)
    for row, name in MISSING:
        feats[row, FEATURES.index(name)] = np.nan
    return RawTable(years, feats, yield_.round(3), FEATURES, "yield")


if __name__ == "__main__":
    default = Path(__file__).resolve().parents[1] / "src" / "qrfdensity" / "data" / "sample_yields.csv"
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else default
    write_csv(out, make())
    print(f"wrote {out}")
