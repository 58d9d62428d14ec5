"""Process-level diagnostics: models as directed networks of variables.

A model run is recorded as a trajectory ensemble over named node variables
(forcings, stores, streamflow). Streamflow observations are assimilated with
a sequential importance resampling filter, an updated one-step model is
identified from the posterior trajectories as binned conditional-expectation
tables, and directed information flow along every network edge is compared
before vs after conditioning.

Edge transfer entropy follows the one-step dataflow of the simulators:
state-valued sources influence the next step's target (the usual lag
alignment), while forcing sources act within the step that produces the new
target value, so their samples are taken contemporaneously with the target.
"""

import logging
import types
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import logsumexp

from .dynamics import Forcing, HymodParams, cascade_step, hymod_step, soil_excess
from .info import DEFAULT_BINS_3D, DiscretizationSpec, InfoValue, _cmi_from_counts, bin_edges, codes_from_edges
from .series import TimeSeries, as_values

log = logging.getLogger(__name__)

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass
class NetworkSpec:
    """Named variables and the directed one-step information-flow edges.

    Forcing nodes are externally driven; output nodes are computed within the
    step and carry no state of their own (no self-dependence when the model
    is identified from trajectories).
    """

    nodes: tuple
    edges: tuple
    forcing_nodes: tuple = ()
    output_nodes: tuple = ()

    def __post_init__(self):
        self.nodes = tuple(self.nodes)
        self.edges = tuple((s, t) for s, t in self.edges)
        self.forcing_nodes = tuple(self.forcing_nodes)
        self.output_nodes = tuple(self.output_nodes)
        known = set(self.nodes)
        for s, t in self.edges:
            if s not in known or t not in known:
                raise ValueError(f"edge ({s}, {t}) references unknown node")
            if s == t:
                raise ValueError(f"self edge on {s}")
        for group in (self.forcing_nodes, self.output_nodes):
            if any(f not in known for f in group):
                raise ValueError("forcing/output node not in node list")
        self._check_acyclic()

    def _check_acyclic(self):
        children = {n: [] for n in self.nodes}
        for s, t in self.edges:
            children[s].append(t)
        state = dict.fromkeys(self.nodes, 0)  # 0 new, 1 active, 2 done

        def visit(n):
            if state[n] == 1:
                raise ValueError("within-step edges must form a DAG")
            if state[n] == 0:
                state[n] = 1
                for c in children[n]:
                    visit(c)
                state[n] = 2

        for n in self.nodes:
            visit(n)

    def parents(self, node: str):
        return tuple(s for s, t in self.edges if t == node)

    def state_nodes(self):
        skip = set(self.forcing_nodes) | set(self.output_nodes)
        return tuple(n for n in self.nodes if n not in skip)


def quick_names(n_quick: int):
    return tuple(f"quick{i + 1}" for i in range(n_quick))


def slow_names(n_slow: int):
    return tuple(f"slow{i + 1}" for i in range(n_slow))


def build_hymod_network(n_quick: int = 3, n_slow: int = 3) -> NetworkSpec:
    """The HyMod dataflow as a network: precipitation and evaporation feed the
    soil store, the effective-rain split feeds the first quick and slow tanks
    (with a direct precipitation path for saturation excess), tanks cascade
    downstream, and the last tanks discharge to streamflow."""
    q = quick_names(n_quick)
    s = slow_names(n_slow)
    nodes = ("precip", "pet", "soil") + q + s + ("flow",)
    edges = [
        ("precip", "soil"),
        ("pet", "soil"),
        ("precip", q[0]),
        ("precip", s[0]),
        ("soil", q[0]),
        ("soil", s[0]),
    ]
    edges += [(q[i], q[i + 1]) for i in range(n_quick - 1)]
    edges += [(s[i], s[i + 1]) for i in range(n_slow - 1)]
    edges += [(q[-1], "flow"), (s[-1], "flow")]
    return NetworkSpec(nodes=nodes, edges=tuple(edges),
                       forcing_nodes=("precip", "pet"), output_nodes=("flow",))


@dataclass
class TrajectoryEnsemble:
    """Node values for every time step and ensemble member; rectangular."""

    nodes: tuple
    values: np.ndarray   # (T, M, n_nodes)

    def __post_init__(self):
        self.nodes = tuple(self.nodes)
        if self.values.ndim != 3 or self.values.shape[2] != len(self.nodes):
            raise ValueError("values must be (steps, members, nodes)")
        if not np.isfinite(self.values).all():
            raise ValueError("trajectories contain non-finite values")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_members(self) -> int:
        return self.values.shape[1]

    def node(self, name: str) -> np.ndarray:
        return self.values[:, :, self.nodes.index(name)]

    def window(self, start: int, stop: int) -> "TrajectoryEnsemble":
        return TrajectoryEnsemble(nodes=self.nodes, values=self.values[start:stop].copy())


@dataclass
class AssimilationConfig:
    m_members: int = 200
    sigma_obs: float = 0.3        # [mm/day]
    ess_trigger: float = 0.5      # resample when ESS falls below trigger * M
    process_noise: float = 0.0    # relative store perturbation per day
    seed: int = 0

    def __post_init__(self):
        if self.m_members < 10:
            raise ValueError("need at least 10 ensemble members")
        if self.sigma_obs <= 0:
            raise ValueError("sigma_obs must be positive")
        if not (0.0 < self.ess_trigger <= 1.0):
            raise ValueError("ess_trigger must be in (0, 1]")
        if self.process_noise < 0:
            raise ValueError("process_noise must be >= 0")


def _jittered_members(params: HymodParams, m: int, rng, jitter: float):
    """Per-member parameter arrays (multiplicative +-jitter, clipped to the
    valid ranges) and jittered initial stores."""
    factors = rng.uniform(1.0 - jitter, 1.0 + jitter, size=(m, 5))
    vec = types.SimpleNamespace(
        c_max=np.clip(params.c_max * factors[:, 0], 1e-6, 1000.0),
        b_exp=np.clip(params.b_exp * factors[:, 1], 0.0, 10.0),
        alpha=np.clip(params.alpha * factors[:, 2], 0.0, 1.0),
        k_quick=np.clip(params.k_quick * factors[:, 3], 0.0, 1.0)[:, None],
        k_slow=np.clip(params.k_slow * factors[:, 4], 0.0, 1.0)[:, None],
        n_quick=params.n_quick,
        n_slow=params.n_slow,
    )
    smax = vec.c_max / (vec.b_exp + 1.0)
    soil0 = rng.uniform(0.0, jitter * smax) if jitter > 0 else np.zeros(m)
    quick0 = rng.uniform(0.0, 10.0 * jitter, size=(m, params.n_quick)) if jitter > 0 else np.zeros((m, params.n_quick))
    slow0 = rng.uniform(0.0, 10.0 * jitter, size=(m, params.n_slow)) if jitter > 0 else np.zeros((m, params.n_slow))
    return vec, soil0, quick0, slow0


def _systematic_resample(weights: np.ndarray, rng) -> np.ndarray:
    m = weights.size
    positions = (rng.random() + np.arange(m)) / m
    return np.searchsorted(np.cumsum(weights), positions).clip(0, m - 1)


@dataclass
class AssimilationResult:
    trajectories: TrajectoryEnsemble
    weights: np.ndarray          # (T, M) normalized member weights per step
    member_params: object        # per-member parameter arrays
    ess: np.ndarray              # effective sample size at each observed step
    n_resamples: int
    n_underflows: int

    def mean_flow(self) -> np.ndarray:
        """Weight-averaged streamflow, the filtered (and, past the last
        observation, forecast) estimate."""
        flow = self.trajectories.node("flow")
        return (flow * self.weights).sum(axis=1)


def _run_hymod_ensemble(params: HymodParams, forcing: Forcing, m: int, seed: int,
                        param_jitter: float, obs=None, config: AssimilationConfig | None = None,
                        process_noise: float = 0.0):
    """Shared engine behind record_trajectories and assimilate.

    With obs/config given, members are importance-weighted by the Gaussian
    observation density at every finite obs value and systematically
    resampled (full-history reindexing) when the effective sample size drops
    below the trigger. process_noise > 0 perturbs every store each day by a
    mean-preserving lognormal factor, letting states explore off the
    deterministic response surface (and keeping resampled members distinct).
    """
    rng = np.random.default_rng(seed)
    vec, soil, quick, slow = _jittered_members(params, m, rng, param_jitter)
    n = forcing.n_days
    nodes = ("precip", "pet", "soil") + quick_names(params.n_quick) + slow_names(params.n_slow) + ("flow",)
    values = np.empty((n, m, len(nodes)))
    weights = np.empty((n, m))
    lw = np.full(m, -np.log(m))
    ess_hist = []
    n_resamples = 0
    n_underflows = 0
    n_stores = 1 + params.n_quick + params.n_slow
    noise_shift = 0.5 * process_noise ** 2

    assimilating = obs is not None
    if assimilating:
        obs = as_values(obs)
        if obs.size != n:
            raise ValueError("observations must align with the forcing record")
        sigma = config.sigma_obs
        log_norm = -(np.log(sigma) + LOG_SQRT_2PI)

    for t in range(n):
        p, pet = forcing.precip[t], forcing.pet[t]
        soil, quick, slow, flow, _, _ = hymod_step(soil, quick, slow, p, pet, vec)
        if process_noise > 0:
            factors = np.exp(process_noise * rng.standard_normal((m, n_stores)) - noise_shift)
            soil = soil * factors[:, 0]
            quick = quick * factors[:, 1:1 + params.n_quick]
            slow = slow * factors[:, 1 + params.n_quick:]
        values[t, :, 0] = p
        values[t, :, 1] = pet
        values[t, :, 2] = soil
        values[t, :, 3:3 + params.n_quick] = quick
        values[t, :, 3 + params.n_quick:-1] = slow
        values[t, :, -1] = flow

        if assimilating and np.isfinite(obs[t]):
            lw = lw - 0.5 * ((obs[t] - flow) / sigma) ** 2 + log_norm
            norm = logsumexp(lw)
            if not np.isfinite(norm):
                log.warning("particle weight underflow at step %d; resetting uniform", t)
                lw = np.full(m, -np.log(m))
                n_underflows += 1
            else:
                lw = lw - norm
            w = np.exp(lw)
            ess = 1.0 / (w @ w)
            ess_hist.append(ess)
            if ess < config.ess_trigger * m:
                idx = _systematic_resample(w, rng)
                values[:t + 1] = values[:t + 1][:, idx, :]
                soil = soil[idx]
                quick = quick[idx]
                slow = slow[idx]
                vec.c_max = vec.c_max[idx]
                vec.b_exp = vec.b_exp[idx]
                vec.alpha = vec.alpha[idx]
                vec.k_quick = vec.k_quick[idx]
                vec.k_slow = vec.k_slow[idx]
                lw = np.full(m, -np.log(m))
                n_resamples += 1
        weights[t] = np.exp(lw - logsumexp(lw))

    traj = TrajectoryEnsemble(nodes=nodes, values=values)
    return AssimilationResult(
        trajectories=traj,
        weights=weights,
        member_params=vec,
        ess=np.asarray(ess_hist),
        n_resamples=n_resamples,
        n_underflows=n_underflows,
    )


def record_trajectories(params: HymodParams, forcing: Forcing, m: int, seed: int,
                        param_jitter: float = 0.05,
                        process_noise: float = 0.0) -> TrajectoryEnsemble:
    """Free-running jittered ensemble with every node variable recorded."""
    if m < 1:
        raise ValueError("need at least one member")
    return _run_hymod_ensemble(params, forcing, m, seed, param_jitter,
                               process_noise=process_noise).trajectories


def assimilate(params: HymodParams, forcing: Forcing, obs,
               config: AssimilationConfig, param_jitter: float = 0.05) -> AssimilationResult:
    """Condition the ensemble on streamflow observations with a sequential
    importance resampling filter.

    Steps where obs is NaN are propagated without weighting, so a record
    that is NaN outside the calibration window assimilates only there and
    free-runs (forecast mode) elsewhere.
    """
    return _run_hymod_ensemble(params, forcing, config.m_members, config.seed,
                               param_jitter, obs=obs, config=config,
                               process_noise=config.process_noise)


# ---------------------------------------------------------------------------
# System identification from posterior trajectories
# ---------------------------------------------------------------------------

def hymod_node_maps(params: HymodParams):
    """Deterministic one-step maps node <- parents of the HyMod structure,
    used to fill identification cells with no posterior coverage.

    Parent order matches `identification_parents`.
    """
    q = quick_names(params.n_quick)
    s = slow_names(params.n_slow)

    def soil_map(soil_prev, p, pet):
        new, _, _ = soil_excess(soil_prev, p, pet, params.c_max, params.b_exp)
        return new

    def effective(soil_prev, p):
        _, er, _ = soil_excess(soil_prev, p, np.zeros_like(p), params.c_max, params.b_exp)
        return er

    maps = {
        "soil": lambda soil_prev, p, pet: soil_map(soil_prev, p, pet),
        q[0]: lambda self_prev, soil_prev, p: (1 - params.k_quick) * self_prev
        + params.alpha * effective(soil_prev, p),
        s[0]: lambda self_prev, soil_prev, p: (1 - params.k_slow) * self_prev
        + (1 - params.alpha) * effective(soil_prev, p),
        "flow": lambda qn_prev, sn_prev: params.k_quick * qn_prev + params.k_slow * sn_prev,
    }
    for i in range(1, params.n_quick):
        maps[q[i]] = (lambda k: lambda self_prev, up_prev: (1 - k) * self_prev + k * up_prev)(params.k_quick)
    for i in range(1, params.n_slow):
        maps[s[i]] = (lambda k: lambda self_prev, up_prev: (1 - k) * self_prev + k * up_prev)(params.k_slow)
    return maps


def identification_parents(network: NetworkSpec, node: str):
    """Inputs of a node's one-step map: its own previous value first (for
    state nodes), then state parents at the previous step, then forcing
    parents at the current step."""
    parents = network.parents(node)
    state_parents = [p for p in parents if p not in network.forcing_nodes]
    forcing_parents = [p for p in parents if p in network.forcing_nodes]
    entries = []
    if node in network.state_nodes():
        entries.append((node, "state"))
    entries += [(p, "state") for p in state_parents]
    entries += [(p, "forcing") for p in forcing_parents]
    return tuple(entries)


@dataclass
class NodeMap:
    """One node's fitted one-step map.

    With a base map the table holds binned corrections added on top of it
    (zero where the posterior gave no coverage); without one the table holds
    the conditional means themselves.
    """

    parents: tuple               # (name, kind) pairs
    coords: list                 # per-dim grid coordinates
    table: np.ndarray            # conditional means or corrections
    n_fallback_cells: int
    base: object = field(repr=False, default=None)
    _interp: object = field(repr=False, default=None)

    def __call__(self, *inputs):
        arrays = [np.atleast_1d(np.asarray(x, dtype=float)) for x in inputs]
        pts = np.column_stack([
            np.clip(a, c[0], c[-1]) for a, c in zip(arrays, self.coords)
        ])
        if self._interp is None:   # all dims degenerate
            fitted = np.full(pts.shape[0], float(self.table.ravel()[0]))
        else:
            live = [i for i, c in enumerate(self.coords) if len(c) > 1]
            fitted = self._interp(pts[:, live])
        if self.base is not None:
            fitted = fitted + np.asarray(self.base(*arrays), dtype=float)
        return fitted


@dataclass
class IdentifiedModel:
    network: NetworkSpec
    node_maps: dict
    fallback_counts: dict

    @property
    def total_fallbacks(self) -> int:
        return sum(self.fallback_counts.values())

    def step(self, state: dict, p: float, pet: float) -> dict:
        forcings = {"precip": p, "pet": pet}
        new = {}
        for node, nm in self.node_maps.items():
            inputs = [forcings[name] if kind == "forcing" else state[name]
                      for name, kind in nm.parents]
            new[node] = max(float(nm(*inputs)[0]), 0.0)
        return new


def identify_system(posterior: TrajectoryEnsemble, network: NetworkSpec,
                    spec: DiscretizationSpec | None = None,
                    fallback_maps: dict | None = None) -> IdentifiedModel:
    """Fit binned conditional-expectation tables node <- parents from the
    posterior trajectories.

    Each input dimension gets quantile bins over the pooled samples, and the
    fitted map is interpolated linearly between the per-dim mean coordinates
    when the identified model is stepped forward. With fallback maps (the
    prior model's deterministic one-step maps) the tables hold binned mean
    corrections to those maps, so cells the posterior never visited revert to
    the prior model exactly (counted per node) and forward rollouts stay
    anchored; without them the tables hold raw conditional means and empty
    cells are an error.
    """
    spec = spec or DiscretizationSpec(bins=DEFAULT_BINS_3D)
    if posterior.n_steps < 2:
        raise ValueError("need at least two steps to identify one-step maps")
    node_maps = {}
    fallback_counts = {}
    targets = [n for n in network.nodes if n not in network.forcing_nodes]
    for node in targets:
        parents = identification_parents(network, node)
        if not parents:
            raise ValueError(f"node {node} has no identification inputs")
        tgt = posterior.node(node)[1:].ravel()
        cols = []
        for name, kind in parents:
            series = posterior.node(name)
            cols.append((series[1:] if kind == "forcing" else series[:-1]).ravel())

        base = None
        if fallback_maps is not None and node in fallback_maps:
            base = fallback_maps[node]
            tgt = tgt - np.asarray(base(*cols), dtype=float)

        edges = [bin_edges(c, spec) for c in cols]
        codes = [codes_from_edges(c, e) for c, e in zip(cols, edges)]
        shape = tuple(e.size - 1 for e in edges)
        flat = np.ravel_multi_index(codes, shape)
        size = int(np.prod(shape))
        counts = np.bincount(flat, minlength=size)
        sums = np.bincount(flat, weights=tgt, minlength=size)

        coords = []
        for c, code, nb in zip(cols, codes, shape):
            csum = np.bincount(code, weights=c, minlength=nb)
            ccnt = np.bincount(code, minlength=nb)
            mean = np.where(ccnt > 0, csum / np.maximum(ccnt, 1), 0.0)
            # deduped quantile bins are marginally occupied; enforce monotone
            coords.append(np.maximum.accumulate(mean) + 1e-12 * np.arange(nb))

        table = np.zeros(size)
        occupied = counts > 0
        table[occupied] = sums[occupied] / counts[occupied]
        n_empty = int((~occupied).sum())
        if n_empty and base is None:
            raise ValueError(
                f"{n_empty} empty cells for node {node} and no fallback map provided"
            )
        table = table.reshape(shape)

        live = [i for i, c in enumerate(coords) if len(c) > 1]
        if live:
            interp = RegularGridInterpolator(
                tuple(coords[i] for i in live),
                table.squeeze(axis=tuple(i for i in range(len(shape)) if i not in live))
                if len(live) < len(shape) else table,
                method="linear", bounds_error=False, fill_value=None,
            )
        else:
            interp = None
        node_maps[node] = NodeMap(parents=parents, coords=coords, table=table,
                                  n_fallback_cells=n_empty, base=base, _interp=interp)
        fallback_counts[node] = n_empty
    return IdentifiedModel(network=network, node_maps=node_maps, fallback_counts=fallback_counts)


def identified_trajectories(identified: IdentifiedModel, forcing: Forcing, m: int,
                            seed: int, process_noise: float = 0.0) -> TrajectoryEnsemble:
    """Run the identified model as an ensemble and record every node, with the
    same mean-preserving lognormal store noise the filter ensembles use, so
    its internal information flows are directly comparable to a prior-model
    ensemble run."""
    if m < 1:
        raise ValueError("need at least one member")
    rng = np.random.default_rng(seed)
    net = identified.network
    outputs = set(net.output_nodes)
    state_nodes = [n for n in identified.node_maps if n not in outputs]
    nodes = net.nodes
    n = forcing.n_days
    values = np.empty((n, m, len(nodes)))
    state = {name: np.zeros(m) for name in state_nodes}
    noise_shift = 0.5 * process_noise ** 2
    for t in range(n):
        forcings = {"precip": forcing.precip[t], "pet": forcing.pet[t]}
        new = {}
        for node, nm in identified.node_maps.items():
            inputs = [np.full(m, forcings[name]) if kind == "forcing" else state[name]
                      for name, kind in nm.parents]
            new[node] = np.maximum(nm(*inputs), 0.0)
        if process_noise > 0:
            for name in state_nodes:
                factors = np.exp(process_noise * rng.standard_normal(m) - noise_shift)
                new[name] = new[name] * factors
        for k, name in enumerate(nodes):
            if name in forcings:
                values[t, :, k] = forcings[name]
            else:
                values[t, :, k] = new[name]
        state = {name: new[name] for name in state_nodes}
    return TrajectoryEnsemble(nodes=nodes, values=values)


def predict_with_identified(identified: IdentifiedModel, forcing: Forcing,
                            horizon: int | None = None,
                            initial: dict | None = None) -> TimeSeries:
    """Step the identified one-step maps forward over the forcing record."""
    n = forcing.n_days if horizon is None else horizon
    if n > forcing.n_days:
        raise ValueError("horizon exceeds the forcing record")
    outputs = set(identified.network.output_nodes)
    state_nodes = [n_ for n_ in identified.node_maps if n_ not in outputs]
    state = dict.fromkeys(state_nodes, 0.0)
    if initial:
        state.update({k: float(v) for k, v in initial.items() if k in state})
    flow = np.empty(n)
    for t in range(n):
        new = identified.step(state, forcing.precip[t], forcing.pet[t])
        flow[t] = new.pop("flow", 0.0)
        for o in outputs:
            new.pop(o, None)
        state = new
    return TimeSeries(flow, units="mm/day")


# ---------------------------------------------------------------------------
# Edge transfer entropies
# ---------------------------------------------------------------------------

@dataclass
class EdgeTransferEntropy:
    source: str
    target: str
    te: InfoValue


@dataclass
class EdgeDifference:
    source: str
    target: str
    te_prior: float
    te_posterior: float
    abs_diff: float


@dataclass
class EdgeInfoReport:
    """Per-edge transfer entropies before/after conditioning, ranked by the
    absolute difference."""

    rows: list
    lag: int

    def top(self, k: int):
        return self.rows[:k]


def edge_transfer_entropy(traj: TrajectoryEnsemble, network: NetworkSpec,
                          lag: int = 1, spec: DiscretizationSpec | None = None) -> list:
    """Transfer entropy along every network edge, pooling members as samples.

    State sources are taken at t and targets at t+lag; forcing sources are
    taken at t+lag (the forcing acting during the step that produces the
    target), both conditioned on the target at t.
    """
    spec = spec or DiscretizationSpec(bins=DEFAULT_BINS_3D)
    if traj.n_steps <= lag:
        raise ValueError(f"{traj.n_steps} steps is too short for lag {lag}")
    out = []
    for src, dst in network.edges:
        dst_vals = traj.node(dst)
        src_vals = traj.node(src)
        future = dst_vals[lag:].ravel()
        past = dst_vals[:-lag].ravel()
        source = (src_vals[lag:] if src in network.forcing_nodes else src_vals[:-lag]).ravel()
        edges = [bin_edges(a, spec) for a in (future, source, past)]
        codes = [codes_from_edges(a, e) for a, e in zip((future, source, past), edges)]
        shape = tuple(e.size - 1 for e in edges)
        counts = np.bincount(
            np.ravel_multi_index(codes, shape), minlength=int(np.prod(shape))
        ).reshape(shape)
        out.append(EdgeTransferEntropy(
            source=src, target=dst,
            te=InfoValue(_cmi_from_counts(counts), spec, future.size),
        ))
    return out


def te_difference_report(prior: list, posterior: list, lag: int = 1) -> EdgeInfoReport:
    """Per-edge |posterior - prior| transfer entropies, largest first."""
    key_prior = {(e.source, e.target): e for e in prior}
    key_post = {(e.source, e.target): e for e in posterior}
    if set(key_prior) != set(key_post):
        raise ValueError("prior and posterior edge sets differ")
    rows = []
    for key, pe in key_prior.items():
        po = key_post[key]
        rows.append(EdgeDifference(
            source=key[0], target=key[1],
            te_prior=pe.te.value, te_posterior=po.te.value,
            abs_diff=abs(po.te.value - pe.te.value),
        ))
    rows.sort(key=lambda r: (-r.abs_diff, r.source, r.target))
    return EdgeInfoReport(rows=rows, lag=lag)
