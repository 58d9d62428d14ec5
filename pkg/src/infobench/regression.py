"""Theory-free regression benchmark for bounding extractable information.

A single-hidden-layer tanh network is trained to map lagged precipitation
windows onto streamflow. The mutual information between observations and the
fitted predictions is a conservative lower bound on the information the
forcing record carries about the response, and subtracting the information
captured by a hypothesis model's predictions bounds the information that
model leaves on the table.

The default trainer is damped Gauss-Newton (Levenberg-Marquardt) with a
validation-based snapshot, which reaches far tighter fits on these smooth
regression surfaces than first-order descent; plain full-batch gradient
descent with momentum is retained as an option. Both are deterministic for
a fixed seed. Inputs can be recoded by a fixed linear summary basis of the
lag window (exponentially weighted and block sums), which conditions the
problem dramatically better than raw daily values.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Forcing, simulate
from .info import (
    DiscretizationSpec,
    InfoValue,
    conditional_entropy,
    mutual_information,
)
from .series import as_values

log = logging.getLogger(__name__)


@dataclass
class LagEmbedding:
    """Lagged-forcing feature rows aligned with same-day targets.

    Row i covers times [i, i + lag), i.e. features[i] = precip[i : i + lag]
    and targets[i] = target[i + lag - 1]; `times` holds that target index.
    """

    features: np.ndarray   # (rows, lag)
    targets: np.ndarray    # (rows,)
    times: np.ndarray      # (rows,) target time index into the source series
    lag: int

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    def rows(self, idx) -> "LagEmbedding":
        return LagEmbedding(self.features[idx], self.targets[idx], self.times[idx], self.lag)


def build_lag_matrix(precip, target, lag: int) -> LagEmbedding:
    """Embed a precipitation series into lag windows predicting the target."""
    precip = as_values(precip)
    target = as_values(target)
    if precip.size != target.size:
        raise ValueError("precip and target lengths differ")
    if lag < 1:
        raise ValueError("lag must be >= 1")
    n = precip.size
    if n <= lag:
        raise ValueError(f"series length {n} too short for lag {lag}")
    windows = np.lib.stride_tricks.sliding_window_view(precip, lag)
    times = np.arange(lag - 1, n)
    return LagEmbedding(
        features=windows.copy(),
        targets=target[times].copy(),
        times=times,
        lag=lag,
    )


def prefix_split(embedding: LagEmbedding, n_train: int):
    """Time-respecting split: the first n_train rows train, and evaluation
    rows start one full lag later so no row mixes data across the boundary."""
    if not (0 < n_train <= embedding.n_rows):
        raise ValueError(f"n_train must be in (0, {embedding.n_rows}]")
    train_idx = np.arange(n_train)
    first_eval = n_train + embedding.lag - 1
    eval_idx = np.arange(first_eval, embedding.n_rows)
    return train_idx, eval_idx


EW_DECAYS = (0.2, 0.35, 0.5, 0.65, 0.8, 0.9, 0.95, 0.98)
BLOCK_HORIZONS = (3, 7, 14, 30, 60, 90)
WET_HORIZONS = (7, 30, 90)
WET_THRESHOLD = 1.0  # mm/day
N_RECENT = 7


def window_summaries(features: np.ndarray) -> np.ndarray:
    """Fixed linear-plus-threshold recoding of each lag window: the most
    recent days raw, exponentially weighted sums over a ladder of decay
    rates (a linear-reservoir basis), block sums, and wet-day counts."""
    lag = features.shape[1]
    ages = np.arange(lag - 1, -1, -1, dtype=float)
    cols = [features[:, -min(N_RECENT, lag):]]
    for lam in EW_DECAYS:
        cols.append((features * lam ** ages).sum(axis=1, keepdims=True))
    for h in BLOCK_HORIZONS:
        cols.append(features[:, -min(h, lag):].sum(axis=1, keepdims=True))
    for h in WET_HORIZONS:
        cols.append(
            (features[:, -min(h, lag):] > WET_THRESHOLD).sum(axis=1, keepdims=True).astype(float)
        )
    return np.hstack(cols)


@dataclass
class RegressorConfig:
    hidden: int = 20
    algorithm: str = "lm"            # "lm" (damped Gauss-Newton) or "gd"
    max_epochs: int = 250            # LM iterations / GD epochs
    patience: int = 40               # epochs without validation improvement before stopping
    validation_fraction: float = 0.2
    features: str = "summaries"      # "summaries" or "raw"
    target_transform: str = "log1p"  # "log1p", "sqrt" or "none"
    learning_rate: float = 0.05      # gd only
    momentum: float = 0.9            # gd only
    backoff_every: int = 50          # gd: stalled epochs between learning-rate halvings
    backoff_factor: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.hidden < 1:
            raise ValueError("need at least one hidden unit")
        if self.algorithm not in ("lm", "gd"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if not (0.0 < self.validation_fraction < 1.0):
            raise ValueError("validation fraction must be in (0, 1)")
        if self.features not in ("summaries", "raw"):
            raise ValueError(f"unknown feature recoding {self.features!r}")
        if self.target_transform not in ("log1p", "sqrt", "none"):
            raise ValueError(f"unknown target transform {self.target_transform!r}")


def network_loss_and_grad(w1, b1, w2, b2, x, y):
    """Mean-squared-error loss of the tanh network and its analytic gradients.

    x: (n, d) standardized inputs, y: (n,) standardized targets.
    Returns (loss, gW1, gb1, gw2, gb2).
    """
    n = x.shape[0]
    z = np.tanh(x @ w1.T + b1)
    pred = z @ w2 + b2
    err = pred - y
    loss = float(np.mean(err ** 2))
    d = (2.0 / n) * err
    g_w2 = z.T @ d
    g_b2 = float(d.sum())
    dz = np.outer(d, w2) * (1.0 - z ** 2)
    g_w1 = dz.T @ x
    g_b1 = dz.sum(axis=0)
    return loss, g_w1, g_b1, g_w2, g_b2


def _transform_target(y: np.ndarray, kind: str) -> np.ndarray:
    if kind == "none":
        return y
    if (y < 0).any():
        raise ValueError(f"{kind} target transform needs non-negative targets")
    return np.log1p(y) if kind == "log1p" else np.sqrt(y)


def _untransform(y: np.ndarray, kind: str) -> np.ndarray:
    if kind == "none":
        return y
    return np.expm1(y) if kind == "log1p" else np.square(y)


@dataclass
class FittedRegressor:
    """A trained lag-window -> scalar map with its training history."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    config: RegressorConfig
    train_loss: np.ndarray = field(repr=False, default=None)
    val_loss: np.ndarray = field(repr=False, default=None)
    best_epoch: int = 0

    def _recode(self, features: np.ndarray) -> np.ndarray:
        return window_summaries(features) if self.config.features == "summaries" else features

    def predict(self, features: np.ndarray) -> np.ndarray:
        xs = (self._recode(features) - self.x_mean) / self.x_std
        z = np.tanh(xs @ self.w1.T + self.b1)
        out = (z @ self.w2 + self.b2) * self.y_std + self.y_mean
        return _untransform(out, self.config.target_transform)


def _init_weights(rng, d, h):
    w1 = rng.normal(0.0, 1.0 / np.sqrt(d), size=(h, d))
    b1 = np.zeros(h)
    w2 = rng.normal(0.0, 1.0 / np.sqrt(h), size=h)
    return w1, b1, w2, 0.0


def _fit_gd(xs, ys, xv, yv, config):
    rng = np.random.default_rng(config.seed)
    w1, b1, w2, b2 = _init_weights(rng, xs.shape[1], config.hidden)
    v = [np.zeros_like(w1), np.zeros_like(b1), np.zeros_like(w2), 0.0]
    lr = config.learning_rate
    best = (w1.copy(), b1.copy(), w2.copy(), b2)
    best_val = np.inf
    best_epoch = 0
    stalled = 0
    train_hist, val_hist = [], []
    for epoch in range(config.max_epochs):
        loss, g_w1, g_b1, g_w2, g_b2 = network_loss_and_grad(w1, b1, w2, b2, xs, ys)
        if not np.isfinite(loss):
            raise RuntimeError(
                f"training diverged at epoch {epoch} (loss={loss}, lr={lr:g}); "
                "lower the learning rate"
            )
        for slot, g in zip(range(4), (g_w1, g_b1, g_w2, g_b2)):
            v[slot] = config.momentum * v[slot] - lr * g
        w1 += v[0]
        b1 += v[1]
        w2 += v[2]
        b2 += v[3]
        zv = np.tanh(xv @ w1.T + b1)
        vloss = float(np.mean((zv @ w2 + b2 - yv) ** 2))
        train_hist.append(loss)
        val_hist.append(vloss)
        if vloss < best_val - 1e-12:
            best_val = vloss
            best = (w1.copy(), b1.copy(), w2.copy(), b2)
            best_epoch = epoch
            stalled = 0
        else:
            stalled += 1
            if stalled % config.backoff_every == 0:
                lr *= config.backoff_factor
            if stalled >= config.patience:
                break
    return best, best_epoch, train_hist, val_hist


def _fit_lm(xs, ys, xv, yv, config):
    rng = np.random.default_rng(config.seed)
    d = xs.shape[1]
    h = config.hidden
    w1, b1, w2, b2 = _init_weights(rng, d, h)
    theta = np.concatenate([w1.ravel(), b1, w2, [b2]])
    n = xs.shape[0]

    def unpack(t):
        return (t[:h * d].reshape(h, d), t[h * d:h * d + h],
                t[h * d + h:h * d + 2 * h], t[-1])

    def residuals(t, x, y):
        p1, p2, p3, p4 = unpack(t)
        z = np.tanh(x @ p1.T + p2)
        return z @ p3 + p4 - y, z

    damping = 1.0
    best = theta.copy()
    best_val = np.inf
    best_epoch = 0
    stalled = 0
    train_hist, val_hist = [], []
    eye = 1e-12 * np.eye(theta.size)
    for epoch in range(config.max_epochs):
        res, z = residuals(theta, xs, ys)
        sse = float(res @ res)
        if not np.isfinite(sse):
            raise RuntimeError(f"training diverged at iteration {epoch}")
        _, _, w2_c, _ = unpack(theta)
        gate = (1.0 - z ** 2) * w2_c
        jac = np.empty((n, theta.size))
        jac[:, :h * d] = (gate[:, :, None] * xs[:, None, :]).reshape(n, h * d)
        jac[:, h * d:h * d + h] = gate
        jac[:, h * d + h:h * d + 2 * h] = z
        jac[:, -1] = 1.0
        jtj = jac.T @ jac
        jtr = jac.T @ res
        improved = False
        for _ in range(30):
            try:
                delta = np.linalg.solve(jtj + damping * np.diag(np.diag(jtj)) + eye, -jtr)
            except np.linalg.LinAlgError:
                damping *= 10.0
                continue
            candidate = theta + delta
            res_new, _ = residuals(candidate, xs, ys)
            if float(res_new @ res_new) < sse:
                theta = candidate
                damping = max(damping * 0.3, 1e-12)
                improved = True
                break
            damping *= 10.0
        if not improved:
            break
        vres, _ = residuals(theta, xv, yv)
        vloss = float(vres @ vres) / yv.size
        train_hist.append(sse / n)
        val_hist.append(vloss)
        if vloss < best_val - 1e-12:
            best_val = vloss
            best = theta.copy()
            best_epoch = epoch
            stalled = 0
        else:
            stalled += 1
            if stalled >= config.patience:
                break
    return unpack(best), best_epoch, train_hist, val_hist


def train_regressor(embedding: LagEmbedding, config: RegressorConfig) -> FittedRegressor:
    """Fit the network on all rows of the embedding.

    The last validation_fraction of the rows is held out for early stopping;
    inputs and targets are standardized by the training part's statistics.
    Deterministic for a fixed seed.
    """
    n = embedding.n_rows
    if n < config.hidden + 2:
        raise ValueError(f"{n} rows is too few for {config.hidden} hidden units")
    n_val = max(1, int(round(n * config.validation_fraction)))
    n_fit = n - n_val
    if n_fit < 2:
        raise ValueError("not enough rows left after the validation split")

    x_all = (window_summaries(embedding.features) if config.features == "summaries"
             else embedding.features)
    y_all = _transform_target(embedding.targets, config.target_transform)
    x_fit, x_val = x_all[:n_fit], x_all[n_fit:]
    y_fit, y_val = y_all[:n_fit], y_all[n_fit:]

    x_mean = x_fit.mean(axis=0)
    x_std = x_fit.std(axis=0)
    x_std[x_std == 0.0] = 1.0
    y_mean = float(y_fit.mean())
    y_std = float(y_fit.std())
    if y_std == 0.0:
        y_std = 1.0

    xs = (x_fit - x_mean) / x_std
    xv = (x_val - x_mean) / x_std
    ys = (y_fit - y_mean) / y_std
    yv = (y_val - y_mean) / y_std

    fit = _fit_lm if config.algorithm == "lm" else _fit_gd
    (w1, b1, w2, b2), best_epoch, train_hist, val_hist = fit(xs, ys, xv, yv, config)
    return FittedRegressor(
        w1=np.array(w1), b1=np.array(b1), w2=np.array(w2), b2=float(b2),
        x_mean=x_mean, x_std=x_std, y_mean=y_mean, y_std=y_std,
        config=config,
        train_loss=np.array(train_hist),
        val_loss=np.array(val_hist),
        best_epoch=best_epoch,
    )


@dataclass
class RegressorEnsemble:
    """Mean prediction of independently initialized fits of the same data."""

    members: list

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.mean([m.predict(features) for m in self.members], axis=0)


def train_ensemble(embedding: LagEmbedding, config: RegressorConfig,
                   n_members: int = 1) -> RegressorEnsemble:
    """Train n_members networks differing only in their init seed (derived
    from config.seed) and average their predictions."""
    from dataclasses import replace
    members = [
        train_regressor(embedding, replace(config, seed=config.seed + 7919 * k))
        for k in range(n_members)
    ]
    return RegressorEnsemble(members=members)


@dataclass
class ConvergenceReport:
    fractions: np.ndarray
    i_in_sample: np.ndarray
    i_out_sample: np.ndarray
    converged: bool
    convergence_fraction: float | None
    n_train_rows: np.ndarray

    GAP_TOLERANCE = 0.05
    # below this both curves count as converged; the scale of plug-in MI bias
    # (about (bins-1)^2 / 2N) for the default bin counts at a few thousand rows
    SMALL_FLOOR = 0.05


def _gap_converged(i_in: float, i_out: float) -> bool:
    if i_in < ConvergenceReport.SMALL_FLOOR and i_out < ConvergenceReport.SMALL_FLOOR:
        return True
    if i_out <= 0.0:
        return False
    return abs(i_in - i_out) / i_out < ConvergenceReport.GAP_TOLERANCE


def convergence_protocol(embedding: LagEmbedding, config: RegressorConfig,
                         fractions, spec: DiscretizationSpec | None = None,
                         n_members: int = 1) -> ConvergenceReport:
    """Train on growing prefixes and compare in- vs out-of-sample information.

    For each fraction the network trains on that prefix of the rows and the
    mutual information between targets and predictions is estimated on the
    training rows and on the held-out suffix. Converged means the relative
    gap is under 5% at the largest fraction.
    """
    fractions = np.asarray(list(fractions), dtype=float)
    if fractions.size < 1:
        raise ValueError("need at least one fraction")
    if (np.diff(fractions) <= 0).any() or fractions[0] <= 0 or fractions[-1] >= 1:
        raise ValueError("fractions must be ascending and inside (0, 1)")
    spec = spec or DiscretizationSpec()

    i_in = np.empty(fractions.size)
    i_out = np.empty(fractions.size)
    n_rows = np.empty(fractions.size, dtype=int)
    for i, frac in enumerate(fractions):
        n_train = int(round(frac * embedding.n_rows))
        train_idx, eval_idx = prefix_split(embedding, n_train)
        if eval_idx.size < 2:
            raise ValueError(f"fraction {frac} leaves no evaluation rows")
        try:
            reg = train_ensemble(embedding.rows(train_idx), config, n_members)
        except Exception as exc:
            raise RuntimeError(f"training failed at fraction {frac}: {exc}") from exc
        pred_in = reg.predict(embedding.features[train_idx])
        pred_out = reg.predict(embedding.features[eval_idx])
        i_in[i] = mutual_information(embedding.targets[train_idx], pred_in, spec).value
        i_out[i] = mutual_information(embedding.targets[eval_idx], pred_out, spec).value
        n_rows[i] = n_train

    conv_fraction = None
    for i in range(fractions.size):
        if all(_gap_converged(i_in[j], i_out[j]) for j in range(i, fractions.size)):
            conv_fraction = float(fractions[i])
            break
    return ConvergenceReport(
        fractions=fractions,
        i_in_sample=i_in,
        i_out_sample=i_out,
        converged=_gap_converged(i_in[-1], i_out[-1]),
        convergence_fraction=conv_fraction,
        n_train_rows=n_rows,
    )


@dataclass
class MissingInfoReport:
    """The benchmark statistic: information the regression extracts from the
    forcing minus information the hypothesis model's predictions carry."""

    i_data: InfoValue    # I(obs; regression predictions)
    i_model: InfoValue   # I(obs; model predictions)
    eps_hat: float       # i_data - i_model [nats]
    threshold: float     # 95th percentile of the permutation null of the difference
    reject: bool         # eps_hat above threshold: model improvable from available data
    n_samples: int


def missing_information(obs, model_pred, regression_pred,
                        spec: DiscretizationSpec | None = None,
                        n_shuffles: int = 100, seed: int = 0) -> MissingInfoReport:
    """Estimate the information missing from a model on aligned evaluation rows.

    All three series must already be restricted to rows the regression never
    saw in training. A positive estimate above the permutation-null threshold
    means the data demonstrably support a better model; negative estimates
    are reported as-is and mean no improvement signal was found.
    """
    spec = spec or DiscretizationSpec()
    obs = as_values(obs)
    model_pred = as_values(model_pred)
    regression_pred = as_values(regression_pred)
    if not (obs.size == model_pred.size == regression_pred.size):
        raise ValueError("obs, model predictions and regression predictions must align")

    i_data = mutual_information(obs, regression_pred, spec)
    i_model = mutual_information(obs, model_pred, spec)
    eps_hat = i_data.value - i_model.value

    rng = np.random.default_rng(seed)
    null = np.empty(n_shuffles)
    for i in range(n_shuffles):
        null[i] = (
            mutual_information(obs, regression_pred[rng.permutation(obs.size)], spec).value
            - mutual_information(obs, model_pred[rng.permutation(obs.size)], spec).value
        )
    threshold = float(np.quantile(null, 0.95))
    return MissingInfoReport(
        i_data=i_data,
        i_model=i_model,
        eps_hat=eps_hat,
        threshold=threshold,
        reject=eps_hat > threshold,
        n_samples=obs.size,
    )


@dataclass
class TrueMissingInfo:
    """Ground-truth missing information, available only when the generating
    system is known."""

    h_obs_given_forcing: InfoValue   # response entropy given the true system's
                                     # response to the perturbed forcing
    h_obs_given_model: InfoValue     # response entropy given the model prediction
    eps: float                       # their difference [nats]


def true_information_oracle(truth_kind: str, truth_params, perturbed: Forcing,
                            obs, model_pred, spec: DiscretizationSpec | None = None,
                            warmup: int = 0, sample_idx=None,
                            truth_response=None) -> TrueMissingInfo:
    """Run the true system on a perturbed forcing and measure what the
    forcing, and separately a model prediction, leave unexplained.

    obs and model_pred are aligned to the post-warmup window; sample_idx
    optionally restricts all series to a subset of that window (e.g. the
    regression benchmark's evaluation rows). A precomputed truth_response
    (the truth run on the perturbed forcing, post-warmup) skips the
    simulation.
    """
    spec = spec or DiscretizationSpec()
    obs = as_values(obs)
    model_pred = as_values(model_pred)
    if truth_response is None:
        truth_response = simulate(truth_kind, truth_params, perturbed, warmup=warmup).observed()
    else:
        truth_response = as_values(truth_response)
    if not (obs.size == model_pred.size == truth_response.size):
        raise ValueError("obs, model predictions and forcing window must align")
    if sample_idx is not None:
        obs = obs[sample_idx]
        model_pred = model_pred[sample_idx]
        truth_response = truth_response[sample_idx]
    h_given_forcing = conditional_entropy(obs, truth_response, spec)
    h_given_model = conditional_entropy(obs, model_pred, spec)
    return TrueMissingInfo(
        h_obs_given_forcing=h_given_forcing,
        h_obs_given_model=h_given_model,
        eps=h_given_model.value - h_given_forcing.value,
    )
