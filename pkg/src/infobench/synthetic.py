"""Seeded synthetic forcing, a stand-in for real catchment records."""

import numpy as np

from .dynamics import Forcing

WET_PROBABILITY = 0.3
WET_MEAN_MM = 9.0
PET_MEAN = 3.5
PET_AMPLITUDE = 2.5
PET_PERIOD_DAYS = 365.0


def generate_synthetic_forcing(seed: int, n_days: int) -> Forcing:
    """Humid-catchment-like forcing: Bernoulli wet days with exponential wet
    amounts, and a strictly positive annual sinusoid for potential
    evapotranspiration. Deterministic per seed."""
    if n_days < 1:
        raise ValueError("n_days must be >= 1")
    rng = np.random.default_rng(seed)
    wet = rng.random(n_days) < WET_PROBABILITY
    amounts = rng.exponential(WET_MEAN_MM, n_days)
    precip = np.where(wet, amounts, 0.0)
    t = np.arange(n_days)
    pet = PET_MEAN + PET_AMPLITUDE * np.sin(2.0 * np.pi * t / PET_PERIOD_DAYS)
    return Forcing(precip=precip, pet=pet)
