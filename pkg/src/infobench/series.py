"""Uniformly sampled scalar time series, the common currency between modules."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TimeSeries:
    """A uniformly sampled scalar sequence with units and a time-step label."""

    values: np.ndarray
    units: str = ""
    step: str = "day"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError(f"time series must be 1-D, got shape {self.values.shape}")

    def __len__(self):
        return self.values.size

    def __getitem__(self, idx):
        return self.values[idx]


def as_values(series) -> np.ndarray:
    """Accept a TimeSeries or anything array-like and return a 1-D float array."""
    if isinstance(series, TimeSeries):
        return series.values
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D series, got shape {arr.shape}")
    return arr
