"""Starting values for INAR mixture EM.

k-means on per-series means gives the component locations and weights;
thinning probability (and NB dispersion) come from a grid search that
simulates each k-means cluster and matches the distribution of per-series
sums. Larger mixtures are warm-started from a fitted smaller one by adding a
light component at the panel mean.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans

from .core import ComponentParams, ComponentSpec, Family, InnovationModel
from .mixture import FitResult, MixtureModel, e_step, fit_em
from .panel import PanelData

__all__ = [
    "InitConfig",
    "KMeansSeed",
    "kmeans_seed",
    "match_alpha_phi",
    "initial_model",
    "augment_model",
    "default_phi",
    "LAMBDA_FLOOR",
]

log = logging.getLogger(__name__)

LAMBDA_FLOOR = 1e-3


def default_phi(family: Family | str) -> float:
    return 2.0 if Family.parse(family) is Family.NEGBIN else 1.0


@dataclass
class InitConfig:
    """Settings for starting-value construction.

    ``lambda_mode`` controls how a k-means center becomes an innovation mean:
    ``"center"`` uses the center as is; ``"stationary"`` rescales it for each
    alpha so the process mean (including the start-up transient) equals the
    observed mean.
    """

    alpha_grid: np.ndarray = field(default_factory=lambda: np.round(np.arange(0.05, 0.951, 0.05), 2))
    phi_grid: np.ndarray = field(default_factory=lambda: np.array([1.25, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0]))
    match_replicates: int = 20
    max_simulated_series: int = 1000
    new_component_weight: float = 0.05
    kmeans_restarts: int = 10
    features: str = "mean"
    lambda_mode: str = "stationary"
    cross_sums: bool = True
    assign_lags: bool = True
    screen_iters: int = 10
    max_lag_assignments: int = 64
    seed: int = 0

    def __post_init__(self):
        self.alpha_grid = np.asarray(self.alpha_grid, dtype=float)
        self.phi_grid = np.asarray(self.phi_grid, dtype=float)
        if self.alpha_grid.size == 0 or np.any((self.alpha_grid < 0) | (self.alpha_grid > 1)):
            raise ValueError("alpha_grid must be a non-empty subset of [0, 1]")
        if self.phi_grid.size == 0 or np.any(self.phi_grid <= 1):
            raise ValueError("phi_grid must be non-empty with values > 1")
        if not 0 < self.new_component_weight <= 0.2:
            raise ValueError("new_component_weight must lie in (0, 0.2]")
        if self.match_replicates < 1 or self.max_simulated_series < 1:
            raise ValueError("match_replicates and max_simulated_series must be >= 1")
        if self.features not in ("mean", "mean_var"):
            raise ValueError(f"unknown k-means feature set {self.features!r}")
        if self.lambda_mode not in ("center", "stationary"):
            raise ValueError(f"unknown lambda_mode {self.lambda_mode!r}")


@dataclass
class KMeansSeed:
    centers: np.ndarray      # descending
    sizes: np.ndarray
    assignment: np.ndarray   # index into centers


def _features(panel: PanelData, kind: str) -> np.ndarray:
    means = panel.means()
    if kind == "mean":
        return means[:, None]
    var = np.array([s.var(ddof=1) if s.size > 1 else 0.0 for s in panel.series])
    return np.column_stack([means, var])


def kmeans_seed(panel: PanelData, G: int, rng: np.random.Generator,
                restarts: int = 10, features: str = "mean") -> KMeansSeed:
    """k-means on per-series features; clusters ordered by descending mean.

    When there are fewer distinct feature vectors than ``G`` the number of
    clusters is reduced (with a warning), so fewer than ``G`` centers may be
    returned.
    """
    if not 1 <= G <= panel.n:
        raise ValueError(f"need 1 <= G <= n, got G={G}, n={panel.n}")
    X = _features(panel, features)
    distinct = np.unique(X, axis=0).shape[0]
    k = G
    if distinct < G:
        warnings.warn(f"only {distinct} distinct series features for G={G}; using {distinct} clusters",
                      RuntimeWarning, stacklevel=2)
        k = distinct
    km = KMeans(n_clusters=k, n_init=restarts, random_state=int(rng.integers(2**31 - 1)))
    labels = km.fit_predict(X)
    centers = km.cluster_centers_[:, 0]
    order = np.argsort(-centers, kind="stable")
    rank = np.empty(k, dtype=int)
    rank[order] = np.arange(k)
    assignment = rank[labels]
    sizes = np.bincount(assignment, minlength=k)
    return KMeansSeed(centers[order], sizes, assignment)


def _simulate_stats(lag: int, alphas: np.ndarray, lams: np.ndarray, phi: float, family: Family,
                    lengths: np.ndarray, reps: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-series sums and lag-``lag`` cross-product sums for every alpha candidate.

    Both arrays have shape (n_alpha, reps, n_series).
    """
    A = alphas.size
    T = int(lengths.max())
    shape = (A, reps, lengths.size, T)
    lam = lams.reshape(A, 1, 1, 1)
    if family is Family.POISSON:
        x = rng.poisson(np.broadcast_to(lam, shape))
    else:
        r = lam / (phi - 1.0)
        x = rng.negative_binomial(np.broadcast_to(r, shape), 1.0 / phi)
    x = x.astype(np.int64)
    a = alphas.reshape(A, 1, 1)
    for t in range(lag, T):
        x[..., t] += rng.binomial(x[..., t - lag], a)
    if not np.all(lengths == T):
        x[..., np.arange(T)[None, :] >= lengths[:, None]] = 0
    sums = x.sum(axis=-1)
    cross = (x[..., lag:] * x[..., :-lag]).sum(axis=-1) if T > lag else np.zeros_like(sums)
    return sums.astype(float), cross.astype(float)


def _observed_stats(cluster: PanelData, lag: int) -> tuple[np.ndarray, np.ndarray]:
    sums = np.array([x.sum() for x in cluster.series], dtype=float)
    cross = np.array([(x[lag:] * x[:-lag]).sum() if x.size > lag else 0 for x in cluster.series],
                     dtype=float)
    return np.sort(sums), np.sort(cross)


def _expected_sum_factor(lengths: np.ndarray, lag: int, alphas: np.ndarray) -> np.ndarray:
    """E[sum of a series] / lambda for a process started from pure innovations.

    E[X_t] = lambda * (1 + a + ... + a^(m_t - 1)) with m_t = floor((t - 1) / lag) + 1.
    """
    T = int(lengths.max())
    m = np.arange(T) // lag + 1
    a = alphas[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        geo = np.where(np.isclose(a, 1.0), m[None, :], (1.0 - a ** m[None, :]) / (1.0 - a))
    csum = np.cumsum(geo, axis=1)
    return csum[:, lengths - 1].sum(axis=1)


def _mean_matched_lambda(total: float, lengths: np.ndarray, lag: int, alphas: np.ndarray) -> np.ndarray:
    return total / _expected_sum_factor(lengths, lag, alphas)


def match_alpha_phi(cluster: PanelData, lambda_init: float, spec: ComponentSpec,
                    cfg: InitConfig | None = None, rng: np.random.Generator | None = None,
                    family: Family | str | None = None) -> tuple[float, float]:
    """Grid-search (alpha, phi) so that simulated clusters reproduce the observed one.

    Every candidate simulates ``match_replicates`` copies of the cluster at the
    spec's lag (fewer for large clusters, so that at most
    ``max_simulated_series`` series are drawn per candidate). The score is the
    mean absolute difference between sorted simulated and sorted observed
    per-series sums; with ``cfg.cross_sums`` the same distance on per-series
    sums of lag products ``x_t * x_{t-lag}`` is added, each term scaled by the
    observed spread of its statistic. Poisson clusters keep ``phi = 1``.
    Candidates share random numbers so the score is smooth over the grid.
    """
    cfg = cfg or InitConfig()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    family = Family.parse(family if family is not None else spec.family)
    lam0 = max(float(lambda_init), LAMBDA_FLOOR)
    lengths = cluster.lengths
    obs_sums, obs_cross = _observed_stats(cluster, spec.lag)
    alphas = cfg.alpha_grid
    if cfg.lambda_mode == "stationary":
        lams = np.maximum(_mean_matched_lambda(obs_sums.sum(), lengths, spec.lag, alphas), LAMBDA_FLOOR)
    else:
        lams = np.full(alphas.size, lam0)
    phis = [1.0] if family is Family.POISSON else list(cfg.phi_grid)
    base_seed = int(rng.integers(2**31 - 1))
    reps = max(1, min(cfg.match_replicates, -(-cfg.max_simulated_series // cluster.n)))
    scale_s = obs_sums.std() + 1.0
    scale_c = obs_cross.std() + 1.0
    scores = np.empty((len(phis), alphas.size))
    for j, phi in enumerate(phis):
        sums, cross = _simulate_stats(spec.lag, alphas, lams, phi, family, lengths, reps,
                                      np.random.default_rng(base_seed))
        score = np.abs(np.sort(sums, axis=-1) - obs_sums).mean(axis=(1, 2))
        if cfg.cross_sums:
            score = score / scale_s + np.abs(np.sort(cross, axis=-1) - obs_cross).mean(axis=(1, 2)) / scale_c
        scores[j] = score
    fallback = (0.5, default_phi(family))
    if obs_sums.sum() == 0 or not np.all(np.isfinite(scores)) or np.ptp(scores) < 1e-12:
        return fallback
    j, i = np.unravel_index(np.argmin(scores), scores.shape)
    return float(alphas[i]), float(phis[j])


def _lambda_from_center(center: float, alpha: float, lengths: np.ndarray, lag: int,
                        cfg: InitConfig) -> float:
    if cfg.lambda_mode == "stationary":
        lam = _mean_matched_lambda(center * lengths.sum(), lengths, lag, np.array([alpha]))[0]
        return max(float(lam), LAMBDA_FLOOR)
    return max(center, LAMBDA_FLOOR)


def initial_model(panel: PanelData, specs: list[ComponentSpec], cfg: InitConfig | None = None,
                  rng: np.random.Generator | None = None, cache: dict | None = None) -> MixtureModel:
    """k-means + simulation-matching starting model for the given component specs.

    Components come back in the order of ``specs``. When the specs mix lags,
    each distinct way of giving the lags to the k-means clusters is screened
    with a short EM run (``cfg.screen_iters`` iterations) and the start that
    reaches the highest log-likelihood is returned.

    ``cache`` (a dict owned by the caller) lets several calls on the same
    panel and G share the k-means run and the matched (alpha, phi) values.
    """
    cfg = cfg or InitConfig()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    specs = list(specs)
    G = len(specs)
    if G < 1:
        raise ValueError("need at least one component")
    family = specs[0].family
    if any(s.family is not family for s in specs):
        raise ValueError("all components must share one innovation family")
    cache = {} if cache is None else cache
    if ("kmeans", G) not in cache:
        cache["kmeans", G] = (kmeans_seed(panel, G, rng, restarts=cfg.kmeans_restarts,
                                          features=cfg.features),
                              int(rng.integers(2**31 - 1)))
    seed, match_seed = cache["kmeans", G]
    k = seed.centers.size

    def cluster_params(c: int, lag: int) -> ComponentParams:
        key = ("match", G, c, lag, family)
        if key not in cache:
            members = panel.subset(np.flatnonzero(seed.assignment == c))
            cache[key] = match_alpha_phi(members, seed.centers[c], ComponentSpec(lag, family), cfg,
                                         np.random.default_rng([match_seed, c, lag]), family)
        alpha, phi = cache[key]
        lengths = panel.lengths[seed.assignment == c]
        lam = _lambda_from_center(seed.centers[c], alpha, lengths, lag, cfg)
        return ComponentParams(alpha, InnovationModel(family, lam, phi))

    w_new = cfg.new_component_weight
    extra = G - k
    base_w = seed.sizes / seed.sizes.sum() * (1.0 - w_new * extra if extra else 1.0)
    filler = ComponentParams(0.5, InnovationModel(family, max(panel.grand_mean(), LAMBDA_FLOOR),
                                                  default_phi(family)))

    def build(assign: tuple[int, ...]) -> MixtureModel:
        # assign[g] = cluster index for spec g, or -1 for a filler component
        params = [cluster_params(c, specs[g].lag) if c >= 0 else filler for g, c in enumerate(assign)]
        weights = np.array([base_w[c] if c >= 0 else w_new for c in assign])
        weights = np.maximum(weights, 1e-6)
        return MixtureModel(specs, params, weights / weights.sum())

    slots = list(range(k)) + [-1] * extra
    lags = [s.lag for s in specs]
    if cfg.assign_lags and len(set(lags)) > 1:
        best, best_ll = None, -np.inf
        for assign in _lag_assignments(slots, lags, cfg.max_lag_assignments):
            model = build(assign)
            try:
                if cfg.screen_iters > 0:
                    ll = fit_em(panel, model, epsilon=0.0, max_iters=cfg.screen_iters).final_loglik
                else:
                    _, ll = e_step(panel, model)
            except RuntimeError:
                continue
            if ll > best_ll:
                best, best_ll = model, ll
        if best is not None:
            return best
    return build(tuple(slots))


def _lag_assignments(slots: list[int], lags: list[int], limit: int):
    """Distinct ways to hand the clusters in ``slots`` to the spec positions,
    up to permutations among specs sharing a lag. Yields at most ``limit``."""
    groups: dict[int, list[int]] = {}
    for g, lag in enumerate(lags):
        groups.setdefault(lag, []).append(g)
    order = sorted(groups)

    def rec(i: int, remaining: tuple[int, ...]):
        if i == len(order):
            yield {}
            return
        positions = groups[order[i]]
        for chosen in itertools.combinations(range(len(remaining)), len(positions)):
            picked = [remaining[c] for c in chosen]
            rest = tuple(r for c, r in enumerate(remaining) if c not in chosen)
            for tail in rec(i + 1, rest):
                yield {**dict(zip(positions, picked)), **tail}

    seen = set()
    for mapping in rec(0, tuple(slots)):
        assign = tuple(mapping[g] for g in range(len(lags)))
        key = tuple(sorted(zip(lags, assign)))
        if key in seen:
            continue
        seen.add(key)
        yield assign
        if len(seen) >= limit:
            return


def augment_model(prev: FitResult | MixtureModel, panel: PanelData, new_spec: ComponentSpec,
                  cfg: InitConfig | None = None) -> MixtureModel:
    """Append a light component at the panel's grand mean to a fitted mixture."""
    cfg = cfg or InitConfig()
    model = prev.model if isinstance(prev, FitResult) else prev
    w = cfg.new_component_weight
    fam = model.family
    new = ComponentParams(0.5, InnovationModel(fam, max(panel.grand_mean(), LAMBDA_FLOOR), default_phi(fam)))
    return MixtureModel(model.specs + [ComponentSpec(new_spec.lag, fam)], model.params + [new],
                        np.append(model.weights * (1.0 - w), w))
