"""Plug-in information estimators on discretized series.

Everything here works in nats on binned data: series are discretized
(quantile or fixed-width bins), joint frequency tables of up to three
variables are formed, and entropies / mutual information / conditional
mutual information / transfer entropy are plug-in sums over the occupied
cells. Marginals are always taken from the shared joint table, so the
additive identities (and non-negativity of the divergences built from them)
hold to floating-point precision.

No analytic bias correction is applied; permutation-shuffle nulls are
provided instead so callers can judge significance of small estimates.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .series import as_values

SCHEMES = ("quantile", "fixed_width")

# Defaults used across the package: finer bins for 1-D/2-D statistics,
# coarser for the 3-D tables behind transfer entropy.
DEFAULT_BINS_2D = 20
DEFAULT_BINS_3D = 11


@dataclass(frozen=True)
class DiscretizationSpec:
    scheme: str = "quantile"
    bins: int = DEFAULT_BINS_2D

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.bins < 2:
            raise ValueError(f"need at least 2 bins, got {self.bins}")


@dataclass
class InfoValue:
    """An information statistic in nats plus the estimator metadata."""

    value: float
    spec: DiscretizationSpec | None = None
    n_samples: int = 0

    def __float__(self):
        return self.value


def bin_edges(values: np.ndarray, spec: DiscretizationSpec) -> np.ndarray:
    """Bin edges for one variable under the given scheme.

    Quantile edges are deduplicated, so heavily tied data can yield fewer
    bins than requested; a constant series collapses to a single bin with a
    warning.
    """
    values = np.asarray(values, dtype=float)
    if not np.isfinite(values).all():
        raise ValueError("series contains non-finite values")
    if spec.scheme == "quantile":
        edges = np.quantile(values, np.linspace(0.0, 1.0, spec.bins + 1))
        edges = np.unique(edges)
    else:
        lo, hi = values.min(), values.max()
        if hi > lo:
            edges = np.linspace(lo, hi, spec.bins + 1)
        else:
            edges = np.array([lo, hi])
    if edges.size < 2:
        warnings.warn("degenerate discretization: constant series collapses to one bin")
        edges = np.array([edges[0], edges[0]])
    return edges


def codes_from_edges(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Map values to bin indices: bins are left-closed, the last bin is also
    right-closed, and values outside the edge range land in the end bins."""
    return np.searchsorted(edges[1:-1], values, side="right")


def discretize(series, spec: DiscretizationSpec) -> np.ndarray:
    """Bin a series; returns integer bin indices in [0, effective bins)."""
    values = as_values(series)
    if values.size < spec.bins:
        warnings.warn(
            f"series length {values.size} is below the bin count {spec.bins}; "
            "occupancy will be sparse"
        )
    return codes_from_edges(values, bin_edges(values, spec))


@dataclass
class JointHistogram:
    """Joint frequency table over 1-3 binned variables."""

    edges: list
    counts: np.ndarray
    spec: DiscretizationSpec | None = None

    def __post_init__(self):
        if not (1 <= self.counts.ndim <= 3):
            raise ValueError("joint histograms cover 1 to 3 variables")

    @property
    def dims(self) -> int:
        return self.counts.ndim

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def marginal(self, axes) -> "JointHistogram":
        """Marginalize onto the given axes (a single index or a tuple)."""
        if np.isscalar(axes):
            axes = (axes,)
        axes = tuple(axes)
        drop = tuple(i for i in range(self.dims) if i not in axes)
        counts = self.counts.sum(axis=drop) if drop else self.counts.copy()
        return JointHistogram(edges=[self.edges[i] for i in axes], counts=counts, spec=self.spec)


def joint_histogram(series_list, spec: DiscretizationSpec) -> JointHistogram:
    """Discretize each series with its own edges and count joint occupancy."""
    if not (1 <= len(series_list) <= 3):
        raise ValueError("joint histograms cover 1 to 3 variables")
    arrays = [as_values(s) for s in series_list]
    n = arrays[0].size
    if any(a.size != n for a in arrays):
        raise ValueError("all series must have the same length")
    if n == 0:
        raise ValueError("cannot histogram empty series")
    edges = [bin_edges(a, spec) for a in arrays]
    codes = [codes_from_edges(a, e) for a, e in zip(arrays, edges)]
    shape = tuple(e.size - 1 for e in edges)
    flat = np.ravel_multi_index(codes, shape)
    counts = np.bincount(flat, minlength=int(np.prod(shape))).reshape(shape)
    return JointHistogram(edges=edges, counts=counts, spec=spec)


def _entropy_of_counts(counts: np.ndarray) -> float:
    total = counts.sum()
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


def entropy(hist: JointHistogram) -> InfoValue:
    """Plug-in entropy -sum p ln p over occupied cells, in nats."""
    if hist.total <= 0:
        raise ValueError("histogram is empty")
    return InfoValue(_entropy_of_counts(hist.counts), hist.spec, hist.total)


def _mi_from_counts(counts: np.ndarray) -> float:
    """I = H(rows) + H(cols) - H(joint), all from the one table."""
    h_x = _entropy_of_counts(counts.sum(axis=1))
    h_y = _entropy_of_counts(counts.sum(axis=0))
    return max(h_x + h_y - _entropy_of_counts(counts), 0.0)


def mutual_information(x, y, spec: DiscretizationSpec | None = None) -> InfoValue:
    """Plug-in mutual information between two series from a shared 2-D table."""
    spec = spec or DiscretizationSpec()
    x = as_values(x)
    y = as_values(y)
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < spec.bins ** 2:
        warnings.warn(
            f"only {x.size} samples for {spec.bins}^2 joint cells; estimate will be biased"
        )
    hist = joint_histogram([x, y], spec)
    return InfoValue(_mi_from_counts(hist.counts), spec, x.size)


def _cmi_from_counts(counts: np.ndarray) -> float:
    """I(x;y|z) = H(x,z) + H(y,z) - H(x,y,z) - H(z) from a 3-D table with
    axes (x, y, z)."""
    h_xz = _entropy_of_counts(counts.sum(axis=1))
    h_yz = _entropy_of_counts(counts.sum(axis=0))
    h_z = _entropy_of_counts(counts.sum(axis=(0, 1)))
    return max(h_xz + h_yz - _entropy_of_counts(counts) - h_z, 0.0)


def conditional_mi(x, y, z, spec: DiscretizationSpec | None = None) -> InfoValue:
    """Plug-in conditional mutual information I(x;y|z) from a 3-D table."""
    spec = spec or DiscretizationSpec(bins=DEFAULT_BINS_3D)
    x = as_values(x)
    y = as_values(y)
    z = as_values(z)
    if not (x.size == y.size == z.size):
        raise ValueError("length mismatch between x, y, z")
    hist = joint_histogram([x, y, z], spec)
    return InfoValue(_cmi_from_counts(hist.counts), spec, x.size)


def conditional_entropy(x, y, spec: DiscretizationSpec | None = None) -> InfoValue:
    """H(x|y) = H(x,y) - H(y) on a shared 2-D table."""
    spec = spec or DiscretizationSpec()
    x = as_values(x)
    y = as_values(y)
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    hist = joint_histogram([x, y], spec)
    h = _entropy_of_counts(hist.counts) - _entropy_of_counts(hist.counts.sum(axis=0))
    return InfoValue(max(h, 0.0), spec, x.size)


def transfer_entropy(source, target, lag: int = 1,
                     spec: DiscretizationSpec | None = None) -> InfoValue:
    """Transfer entropy source -> target at the given lag.

    Estimated as I(target_{t+lag}; source_t | target_t) from aligned triples,
    the one-step-history approximation of conditioning on the full system
    state.
    """
    spec = spec or DiscretizationSpec(bins=DEFAULT_BINS_3D)
    source = as_values(source)
    target = as_values(target)
    if source.size != target.size:
        raise ValueError("length mismatch between source and target")
    if lag < 1:
        raise ValueError("lag must be >= 1")
    if source.size <= lag:
        raise ValueError(f"series of length {source.size} is too short for lag {lag}")
    future = target[lag:]
    src = source[:-lag]
    past = target[:-lag]
    hist = joint_histogram([future, src, past], spec)
    return InfoValue(_cmi_from_counts(hist.counts), spec, future.size)


def shannon_transform(u):
    """Convex ratio transform u ln u (0 at u = 0); the orientation that makes
    the ratio statistic below reproduce mutual information."""
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    out = np.zeros_like(u)
    pos = u > 0
    out[pos] = u[pos] * np.log(u[pos])
    return float(out[0]) if scalar else out


def f_divergence(x, y, transform, spec: DiscretizationSpec | None = None) -> InfoValue:
    """Expected transform of the ratio p(x|y)/p(x) over a shared 2-D table.

    The expectation is taken under the product of the marginals, i.e. the
    f-divergence between the empirical joint and independence; convex
    transforms make this a proper divergence, and `shannon_transform`
    recovers mutual information exactly. The identity transform gives 1 for
    any pair.
    """
    spec = spec or DiscretizationSpec()
    x = as_values(x)
    y = as_values(y)
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    hist = joint_histogram([x, y], spec)
    p = hist.counts / hist.total
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    prod = np.outer(px, py)
    occupied = prod > 0
    ratio = np.zeros_like(p)
    ratio[occupied] = p[occupied] / prod[occupied]
    f_vals = np.asarray(transform(ratio[occupied]), dtype=float)
    if not np.isfinite(f_vals).all():
        raise ValueError("transform is non-finite at an occupied probability ratio")
    return InfoValue(float((prod[occupied] * f_vals).sum()), spec, x.size)


@dataclass
class LinearMetrics:
    """The usual linearized comparison metrics."""

    mse: float
    pearson_r: float
    mean_bias: float
    r_defined: bool = True


def linear_metrics(obs, pred) -> LinearMetrics:
    """Mean-squared error, Pearson correlation, and additive mean bias."""
    obs = as_values(obs)
    pred = as_values(pred)
    if obs.size != pred.size:
        raise ValueError(f"length mismatch: {obs.size} vs {pred.size}")
    if obs.size < 2:
        raise ValueError("need at least 2 samples")
    err = pred - obs
    mse = float(np.mean(err ** 2))
    bias = float(np.mean(err))
    so = obs.std()
    sp = pred.std()
    if so == 0.0 or sp == 0.0:
        return LinearMetrics(mse=mse, pearson_r=float("nan"), mean_bias=bias, r_defined=False)
    r = float(np.mean((obs - obs.mean()) * (pred - pred.mean())) / (so * sp))
    return LinearMetrics(mse=mse, pearson_r=max(-1.0, min(1.0, r)), mean_bias=bias)


# ---------------------------------------------------------------------------
# Permutation-shuffle nulls
# ---------------------------------------------------------------------------

def mi_shuffle_null(x, y, spec: DiscretizationSpec | None = None,
                    n_shuffles: int = 100, seed: int = 0) -> np.ndarray:
    """Mutual information of (shuffled x, y) for n_shuffles permutations.

    Shuffling commutes with binning, so the permutations act on the
    precomputed codes directly.
    """
    spec = spec or DiscretizationSpec()
    x = as_values(x)
    y = as_values(y)
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    cx = discretize(x, spec)
    cy = discretize(y, spec)
    nx = int(cx.max()) + 1
    ny = int(cy.max()) + 1
    rng = np.random.default_rng(seed)
    out = np.empty(n_shuffles)
    for i in range(n_shuffles):
        perm = rng.permutation(x.size)
        counts = np.bincount(cx[perm] * ny + cy, minlength=nx * ny).reshape(nx, ny)
        out[i] = _mi_from_counts(counts)
    return out


def te_shuffle_null(source, target, lag: int = 1, spec: DiscretizationSpec | None = None,
                    n_shuffles: int = 100, seed: int = 0) -> np.ndarray:
    """Transfer entropy with the source series permuted, n_shuffles times."""
    spec = spec or DiscretizationSpec(bins=DEFAULT_BINS_3D)
    source = as_values(source)
    target = as_values(target)
    if source.size != target.size:
        raise ValueError("length mismatch between source and target")
    if source.size <= lag:
        raise ValueError("series too short for lag")
    future = target[lag:]
    past = target[:-lag]
    cf = discretize(future, spec)
    cp = discretize(past, spec)
    csrc_full = discretize(source, spec)
    nf = int(cf.max()) + 1
    np_ = int(cp.max()) + 1
    ns = int(csrc_full.max()) + 1
    rng = np.random.default_rng(seed)
    out = np.empty(n_shuffles)
    n = future.size
    for i in range(n_shuffles):
        cs = csrc_full[rng.permutation(source.size)][:-lag]
        flat = (cf * ns + cs) * np_ + cp
        counts = np.bincount(flat, minlength=nf * ns * np_).reshape(nf, ns, np_)
        out[i] = _cmi_from_counts(counts)
    return out


@dataclass
class InfoReport:
    """Named information statistics plus notes on how they were estimated."""

    stats: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def add(self, name: str, value: InfoValue):
        self.stats[name] = value
