"""Quantile random forest forecasts with Epanechnikov/Sheather-Jones density curves."""

from importlib.resources import files

from .dataset import Dataset, RawTable, knn_impute, load_csv, min_max_normalize, chronological_split
from .forest import Forest, ForestConfig, fit, forest_weights, predict_mean
from .kde import Bandwidth, DensityCurve, density_forecast, sj_bandwidth
from .qrf import ConditionalCDF, PredictionInterval, conditional_cdf, predict_median, prediction_interval, quantile

__version__ = "0.1.0"


def example_data_path():
    """Path of the bundled 17-row synthetic yearly table."""
    return files(__package__) / "data" / "sample_yields.csv"
