"""Deterministic daily-step conceptual rainfall-runoff simulators.

Three model structures are provided: HyMod (nonlinear soil store feeding
parallel quick/slow cascades of linear tanks), a three-bucket Nash cascade,
and the classical abc model. All of them are pure functions of their inputs
and close the water balance to floating-point precision at every step, which
the test suite checks against a 1e-9 absolute tolerance.

Conventions shared by all linear tanks: outflow is computed from the
start-of-step storage (explicit Euler at the daily step), q = k * S, and the
store is then updated with the step's inflow. Step functions accept either
scalars or numpy arrays for the state, so the same code path drives single
simulations and vectorized ensembles.
"""

from dataclasses import dataclass

import numpy as np

from .series import TimeSeries

MODEL_KINDS = ("hymod", "nash", "abc")


@dataclass
class Forcing:
    """Daily precipitation and potential evapotranspiration, both in mm/day."""

    precip: np.ndarray
    pet: np.ndarray

    def __post_init__(self):
        self.precip = np.asarray(self.precip, dtype=float)
        self.pet = np.asarray(self.pet, dtype=float)
        if self.precip.ndim != 1 or self.pet.ndim != 1:
            raise ValueError("forcing series must be 1-D")
        if self.precip.size != self.pet.size:
            raise ValueError(
                f"precip and pet lengths differ: {self.precip.size} vs {self.pet.size}"
            )
        if self.precip.size < 1:
            raise ValueError("forcing must cover at least one day")
        if not (np.isfinite(self.precip).all() and np.isfinite(self.pet).all()):
            raise ValueError("forcing contains non-finite values")
        if (self.precip < 0).any() or (self.pet < 0).any():
            raise ValueError("forcing contains negative values")

    @property
    def n_days(self) -> int:
        return self.precip.size


@dataclass
class HymodParams:
    """HyMod parameters; tank counts are configurable (defaults follow the
    three-quick/three-slow layout used by the synthetic truth runs)."""

    c_max: float          # max storage-capacity height [mm], (0, 1000]
    b_exp: float          # capacity-distribution exponent [-], [0, 10]
    alpha: float          # quick/slow split fraction [-], [0, 1]
    k_quick: float        # quick tank outflow ratio [1/day], [0, 1]
    k_slow: float         # slow tank outflow ratio [1/day], [0, 1]
    n_quick: int = 3
    n_slow: int = 3

    def __post_init__(self):
        if not (0.0 < self.c_max <= 1000.0):
            raise ValueError(f"c_max must be in (0, 1000], got {self.c_max}")
        if not (0.0 <= self.b_exp <= 10.0):
            raise ValueError(f"b_exp must be in [0, 10], got {self.b_exp}")
        for name in ("alpha", "k_quick", "k_slow"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.n_quick < 1 or self.n_slow < 1:
            raise ValueError("tank counts must be >= 1")

    @property
    def max_soil_storage(self) -> float:
        """Maximum soil water content implied by the capacity distribution."""
        return self.c_max / (self.b_exp + 1.0)


@dataclass
class NashParams:
    """Outflow ratios of the three cascade buckets, each in [0, 1]."""

    k: np.ndarray

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=float)
        if self.k.shape != (3,):
            raise ValueError(f"nash cascade needs exactly 3 outflow ratios, got {self.k.shape}")
        if (self.k < 0).any() or (self.k > 1).any():
            raise ValueError("outflow ratios must be in [0, 1]")


@dataclass
class AbcParams:
    """abc model parameters; a is stored, b is lost, the rest runs off."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        for name in ("a", "b", "c"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.a + self.b > 1.0:
            raise ValueError(f"a + b must not exceed 1, got {self.a + self.b}")


@dataclass
class ModelState:
    """Water stores [mm]: the soil store plus the linear tanks.

    Tank layout: quick tanks then slow tanks for HyMod, the three cascade
    buckets for Nash, a single store for abc.
    """

    soil_store: float
    tank_stores: np.ndarray

    def __post_init__(self):
        self.tank_stores = np.asarray(self.tank_stores, dtype=float)
        if self.soil_store < 0 or (self.tank_stores < 0).any():
            raise ValueError("stores must be non-negative")


def initial_state(model_kind: str, params) -> ModelState:
    """All-zero stores with the tank layout of the given model."""
    if model_kind == "hymod":
        n = params.n_quick + params.n_slow
    elif model_kind == "nash":
        n = 3
    elif model_kind == "abc":
        n = 1
    else:
        raise ValueError(f"unknown model kind {model_kind!r}")
    return ModelState(soil_store=0.0, tank_stores=np.zeros(n))


# ---------------------------------------------------------------------------
# Array-level step kernels (broadcast over any leading ensemble axes)
# ---------------------------------------------------------------------------

def soil_excess(soil, p, pet, c_max, b_exp):
    """One day of Pareto-capacity soil accounting.

    The basin's point storage capacities follow F(c) = 1 - (1 - c/c_max)**b_exp,
    so the water content at critical height h is the integral of the exceedance,
    S(h) = smax * (1 - (1 - h/c_max)**(b_exp + 1)) with smax = c_max/(b_exp + 1).
    Rain raises h; whatever cannot infiltrate becomes effective rainfall, and
    the effective rainfall is computed as p minus the content change so the
    water balance is exact by construction. Evaporation then removes
    pet * (content / smax), capped at the available water.

    Returns (new_soil, effective_rain, actual_et).
    """
    smax = c_max / (b_exp + 1.0)
    rel = np.clip(1.0 - soil / smax, 0.0, 1.0)
    h = c_max * (1.0 - rel ** (1.0 / (b_exp + 1.0)))
    h_new = np.minimum(h + p, c_max)
    soil_after = smax * (1.0 - (1.0 - h_new / c_max) ** (b_exp + 1.0))
    effective = np.maximum(p - (soil_after - soil), 0.0)
    # recompute the content change from the runoff split to keep p = dS + ER exact
    soil_after = soil + (p - effective)
    et = np.minimum(pet * soil_after / smax, soil_after)
    return soil_after - et, effective, et


def cascade_step(stores, k, inflow):
    """Advance a series of linear tanks one step; outflow uses start-of-step
    storage. `stores` has a trailing tank axis; returns (new_stores, outflow)."""
    q = k * stores
    new = stores - q
    new[..., 0] = new[..., 0] + inflow
    if new.shape[-1] > 1:
        new[..., 1:] = new[..., 1:] + q[..., :-1]
    return new, q[..., -1]


def hymod_step(soil, quick, slow, p, pet, params: HymodParams):
    """One HyMod day on array state. quick/slow carry a trailing tank axis.

    Returns (soil', quick', slow', streamflow, et, effective_rain).
    """
    soil_new, er, et = soil_excess(soil, p, pet, params.c_max, params.b_exp)
    quick_new, q_quick = cascade_step(quick, params.k_quick, params.alpha * er)
    slow_new, q_slow = cascade_step(slow, params.k_slow, (1.0 - params.alpha) * er)
    return soil_new, quick_new, slow_new, q_quick + q_slow, et, er


# ---------------------------------------------------------------------------
# Spec-level single-step operations
# ---------------------------------------------------------------------------

def step_abc(state: ModelState, params: AbcParams, p: float):
    """One abc day: Q = (1-a-b)*p + c*S, S' = S + a*p - c*S, loss b*p."""
    if p < 0:
        raise ValueError("precipitation must be non-negative")
    s = state.tank_stores[0]
    q = (1.0 - params.a - params.b) * p + params.c * s
    s_new = s + params.a * p - params.c * s
    return ModelState(soil_store=0.0, tank_stores=np.array([s_new])), q


def step_nash(state: ModelState, params: NashParams, inflow: float):
    """One Nash-cascade day; bucket outflows q_i = k_i * S_i feed downstream."""
    if inflow < 0:
        raise ValueError("inflow must be non-negative")
    new, out = cascade_step(state.tank_stores.copy(), params.k, inflow)
    return ModelState(soil_store=0.0, tank_stores=new), out


def step_hymod(state: ModelState, params: HymodParams, p: float, pet: float):
    """One HyMod day on a scalar state."""
    if p < 0 or pet < 0:
        raise ValueError("forcing must be non-negative")
    nq = params.n_quick
    soil, quick, slow, flow, _, _ = hymod_step(
        state.soil_store,
        state.tank_stores[:nq].copy(),
        state.tank_stores[nq:].copy(),
        p,
        pet,
        params,
    )
    new = ModelState(soil_store=float(soil), tank_stores=np.concatenate([quick, slow]))
    return new, float(flow)


# ---------------------------------------------------------------------------
# Full simulations
# ---------------------------------------------------------------------------

@dataclass
class SimulationResult:
    """Per-step record of one model run."""

    streamflow: TimeSeries
    soil_store: np.ndarray      # (N,)
    tank_stores: np.ndarray     # (N, n_tanks)
    mass_residual: np.ndarray   # (N,) water-balance error [mm]
    warmup: int = 0

    def state_at(self, t: int) -> ModelState:
        return ModelState(soil_store=float(self.soil_store[t]), tank_stores=self.tank_stores[t].copy())

    def observed(self) -> np.ndarray:
        """Streamflow with the warmup steps excluded."""
        return self.streamflow.values[self.warmup:]


def simulate(model_kind: str, params, forcing: Forcing, initial: ModelState | None = None,
             warmup: int = 0) -> SimulationResult:
    """Run one model over the full forcing record.

    The warmup count is carried on the result so downstream statistics can
    exclude spin-up; all steps are still simulated and recorded. Deterministic:
    identical inputs give bit-identical outputs.
    """
    if model_kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {model_kind!r}")
    n = forcing.n_days
    if not (0 <= warmup < n):
        raise ValueError(f"warmup must be in [0, {n}), got {warmup}")
    state = initial if initial is not None else initial_state(model_kind, params)

    flow = np.empty(n)
    residual = np.empty(n)
    soil = np.empty(n)
    tanks = np.empty((n, state.tank_stores.size))

    soil_prev = state.soil_store
    tanks_prev = state.tank_stores.copy()
    for t in range(n):
        p = forcing.precip[t]
        if model_kind == "hymod":
            pet = forcing.pet[t]
            nq = params.n_quick
            s_new, q_new, sl_new, q, et, _ = hymod_step(
                soil_prev, tanks_prev[:nq].copy(), tanks_prev[nq:].copy(), p, pet, params
            )
            t_new = np.concatenate([q_new, sl_new])
            residual[t] = p - et - q - ((s_new - soil_prev) + (t_new.sum() - tanks_prev.sum()))
            soil_prev = float(s_new)
        elif model_kind == "nash":
            t_new, q = cascade_step(tanks_prev.copy(), params.k, p)
            residual[t] = p - q - (t_new.sum() - tanks_prev.sum())
            s_new = 0.0
        else:  # abc
            s = tanks_prev[0]
            q = (1.0 - params.a - params.b) * p + params.c * s
            t_new = np.array([s + params.a * p - params.c * s])
            residual[t] = p - params.b * p - q - (t_new[0] - s)
            s_new = 0.0
        flow[t] = q
        soil[t] = s_new
        tanks[t] = t_new
        tanks_prev = t_new

    return SimulationResult(
        streamflow=TimeSeries(flow, units="mm/day"),
        soil_store=soil,
        tank_stores=tanks,
        mass_residual=residual,
        warmup=warmup,
    )


def run_nash_ensemble(ks: np.ndarray, precip_set: np.ndarray) -> np.ndarray:
    """Simulate every (parameter set, forcing series) combination of a Nash
    cascade from zero initial stores.

    ks: (P, 3) outflow ratios; precip_set: (F, T) precipitation series.
    Returns streamflow of shape (P, F, T). The per-element update is written
    identically to `cascade_step`, so results match the scalar path bit for bit.
    """
    ks = np.asarray(ks, dtype=float)
    precip_set = np.asarray(precip_set, dtype=float)
    n_p, n_f = ks.shape[0], precip_set.shape[0]
    n_t = precip_set.shape[1]
    stores = np.zeros((n_p, n_f, 3))
    k = ks[:, None, :]
    flow = np.empty((n_p, n_f, n_t))
    for t in range(n_t):
        stores, out = cascade_step(stores, k, precip_set[None, :, t])
        flow[:, :, t] = out
    return flow


def run_abc_ensemble(abc: np.ndarray, precip_set: np.ndarray) -> np.ndarray:
    """Same grid product as `run_nash_ensemble` for the abc model.

    abc: (P, 3) columns a, b, c; precip_set: (F, T). Returns (P, F, T) flows.
    """
    abc = np.asarray(abc, dtype=float)
    precip_set = np.asarray(precip_set, dtype=float)
    a = abc[:, 0][:, None]
    b = abc[:, 1][:, None]
    c = abc[:, 2][:, None]
    n_p, n_f = abc.shape[0], precip_set.shape[0]
    n_t = precip_set.shape[1]
    s = np.zeros((n_p, n_f))
    flow = np.empty((n_p, n_f, n_t))
    for t in range(n_t):
        p = precip_set[None, :, t]
        flow[:, :, t] = (1.0 - a - b) * p + c * s
        s = s + a * p - c * s
    return flow
