"""Finite mixtures of INAR(s*) processes fitted by EM.

Each series belongs to one component for its whole length. The E-step computes
posterior membership probabilities in log space; the M-step updates mixing
weights in closed form and each component's (alpha, lambda[, phi]) by a
Nelder-Mead search on the responsibility-weighted log-likelihood. Iteration
stops on an Aitken-accelerated estimate of the asymptotic log-likelihood.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit, logsumexp

from .core import ComponentParams, ComponentSpec, Family, InnovationModel, PairSet, innovation_logpmf
from .criteria import bic as bic_value
from .panel import PanelData

__all__ = [
    "DegenerateFitError",
    "MStepWarning",
    "MixtureModel",
    "ConvergenceMonitor",
    "FitResult",
    "component_loglik",
    "loglik_matrix",
    "e_step",
    "m_step_weights",
    "m_step_component",
    "aitken_converged",
    "fit_em",
    "WEIGHT_FLOOR",
]

log = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-6
_ALPHA_CLIP = 1e-10


class DegenerateFitError(RuntimeError):
    """Every component assigns zero likelihood to some series."""

    def __init__(self, series_index: int, iteration: int | None = None):
        self.series_index = series_index
        self.iteration = iteration
        where = f" at EM iteration {iteration}" if iteration is not None else ""
        super().__init__(f"series {series_index} has zero likelihood under every component{where}")


class MStepWarning(RuntimeWarning):
    """The component maximiser failed to improve on its starting point."""


@dataclass
class MixtureModel:
    specs: list[ComponentSpec]
    params: list[ComponentParams]
    weights: np.ndarray

    def __post_init__(self):
        self.specs = list(self.specs)
        self.params = list(self.params)
        self.weights = np.asarray(self.weights, dtype=float)
        G = len(self.specs)
        if G < 1 or len(self.params) != G or self.weights.shape != (G,):
            raise ValueError("a mixture needs G >= 1 matching specs, params and weights")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixing weights must be positive and sum to 1, got {self.weights}")
        fam = self.specs[0].family
        if any(s.family is not fam or p.family is not fam for s, p in zip(self.specs, self.params)):
            raise ValueError("all components must share one innovation family")

    @property
    def G(self) -> int:
        return len(self.specs)

    @property
    def family(self) -> Family:
        return self.params[0].family

    def structure(self) -> dict[int, int]:
        """Number of components per lag."""
        out: dict[int, int] = {}
        for s in self.specs:
            out[s.lag] = out.get(s.lag, 0) + 1
        return dict(sorted(out.items()))

    def permuted(self, order) -> "MixtureModel":
        order = list(order)
        return MixtureModel([self.specs[i] for i in order], [self.params[i] for i in order],
                            self.weights[order])

    def sorted_by_lambda(self) -> tuple["MixtureModel", np.ndarray]:
        """Components reordered by descending innovation mean; also returns the order."""
        order = np.argsort([-p.lam for p in self.params], kind="stable")
        return self.permuted(order), order

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "components": [
                {"lag": s.lag, "alpha": p.alpha, "lambda": p.lam, "phi": p.phi, "weight": float(w)}
                for s, p, w in zip(self.specs, self.params, self.weights)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureModel":
        fam = Family.parse(d["family"])
        comps = d["components"]
        return cls([ComponentSpec(c["lag"], fam) for c in comps],
                   [ComponentParams.make(c["alpha"], c["lambda"], c.get("phi", 1.0), fam) for c in comps],
                   [c["weight"] for c in comps])


def _normalise_weights(w: np.ndarray) -> np.ndarray:
    w = np.maximum(np.asarray(w, dtype=float), WEIGHT_FLOOR)
    return w / w.sum()


def _counts_dot(counts: np.ndarray, logp: np.ndarray) -> np.ndarray:
    """counts @ logp, treating 0 * -inf as 0."""
    finite = np.isfinite(logp)
    if finite.all():
        return counts @ logp
    out = counts[:, finite] @ logp[finite]
    out[(counts[:, ~finite] > 0).any(axis=1)] = -np.inf
    return out


class _ComponentTerms:
    """Cached pair/head statistics of a panel for one lag."""

    def __init__(self, panel: PanelData, lag: int):
        st = panel.lag_stats(lag)
        self.stats = st
        self.pairs = PairSet(st.pair_lag, st.pair_cur)

    def loglik(self, params: ComponentParams) -> np.ndarray:
        st = self.stats
        head = _counts_dot(st.head_counts, innovation_logpmf(params.innovation, st.head_values))
        tail = _counts_dot(st.pair_counts, self.pairs.logpmf(params.alpha, params.innovation))
        return head + tail


def _terms(panel: PanelData, lag: int) -> _ComponentTerms:
    cache = panel.__dict__.setdefault("_terms_cache", {})
    if lag not in cache:
        cache[lag] = _ComponentTerms(panel, lag)
    return cache[lag]


def component_loglik(panel: PanelData, spec: ComponentSpec, params: ComponentParams) -> np.ndarray:
    """Per-series log-likelihoods under one component, shape (n,)."""
    return _terms(panel, spec.lag).loglik(params)


def loglik_matrix(panel: PanelData, model: MixtureModel) -> np.ndarray:
    return np.column_stack([component_loglik(panel, s, p) for s, p in zip(model.specs, model.params)])


def e_step(panel: PanelData, model: MixtureModel) -> tuple[np.ndarray, float]:
    """Responsibilities (n, G) and the mixture log-likelihood."""
    logw = np.log(model.weights)[None, :] + loglik_matrix(panel, model)
    row = logsumexp(logw, axis=1)
    bad = np.flatnonzero(~np.isfinite(row))
    if bad.size:
        raise DegenerateFitError(int(bad[0]))
    resp = np.exp(logw - row[:, None])
    resp /= resp.sum(axis=1, keepdims=True)
    return resp, float(row.sum())


def m_step_weights(resp: np.ndarray) -> np.ndarray:
    """Mean responsibility per component, floored at WEIGHT_FLOOR and renormalised."""
    resp = np.asarray(resp, dtype=float)
    return _normalise_weights(resp.sum(axis=0) / resp.shape[0])


def _pack(params: ComponentParams) -> np.ndarray:
    a = min(max(params.alpha, _ALPHA_CLIP), 1.0 - _ALPHA_CLIP)
    theta = [logit(a), np.log(params.lam)]
    if params.family is Family.NEGBIN:
        theta.append(np.log(params.phi - 1.0))
    return np.array(theta)


def _unpack(theta: np.ndarray, family: Family) -> ComponentParams:
    alpha = float(np.clip(expit(theta[0]), _ALPHA_CLIP, 1.0 - _ALPHA_CLIP))
    lam = float(np.exp(np.clip(theta[1], -18.0, 14.0)))
    phi = 1.0 + float(np.exp(np.clip(theta[2], -18.0, 9.0))) if family is Family.NEGBIN else 1.0
    return ComponentParams(alpha, InnovationModel(family, lam, phi))


class _WeightedObjective:
    """Q(theta) = sum_i w_i log L_i(theta), using only statistics with positive weight."""

    def __init__(self, panel: PanelData, weights: np.ndarray, spec: ComponentSpec):
        st = panel.lag_stats(spec.lag)
        hw = weights @ st.head_counts
        pw = weights @ st.pair_counts
        hk = hw > 0
        pk = pw > 0
        self.head_w, self.head_v = hw[hk], st.head_values[hk]
        self.pair_w = pw[pk]
        self.pairs = PairSet(st.pair_lag[pk], st.pair_cur[pk])
        self.family = spec.family
        self.n_evals = 0

    def value(self, params: ComponentParams) -> float:
        self.n_evals += 1
        lh = innovation_logpmf(params.innovation, self.head_v)
        lp = self.pairs.logpmf(params.alpha, params.innovation)
        return float(self.head_w @ lh + self.pair_w @ lp)

    def __call__(self, theta: np.ndarray) -> float:
        v = self.value(_unpack(theta, self.family))
        return -v if np.isfinite(v) else 1e300


def m_step_component(panel: PanelData, weights, spec: ComponentSpec, start: ComponentParams,
                     *, restarts: int = 2, step: float = 0.15, xatol: float = 1e-4,
                     fatol: float = 1e-4, rng: np.random.Generator | None = None,
                     return_info: bool = False):
    """Maximise the responsibility-weighted log-likelihood of one component.

    Nelder-Mead runs on (logit alpha, log lambda[, log(phi - 1)]). The result
    never scores below ``start`` by more than 1e-9; if no improving point is
    found after ``restarts`` jittered retries, ``start`` is returned and an
    :class:`MStepWarning` is issued.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.sum() <= 1e-12:
        return (start, True) if return_info else start
    if start.family is not spec.family:
        start = ComponentParams.make(start.alpha, start.lam,
                                     1.0 if spec.family is Family.POISSON else max(start.phi, 1.5),
                                     spec.family)
    obj = _WeightedObjective(panel, weights, spec)
    q_start = obj.value(start)
    theta0 = _pack(start)
    rng = rng if rng is not None else np.random.default_rng(0)
    best, best_q = start, q_start
    ok = False
    for attempt in range(restarts + 1):
        x0 = theta0 if attempt == 0 else theta0 + rng.normal(scale=0.5, size=theta0.size)
        simplex = np.vstack([x0, x0 + step * np.eye(x0.size)])
        res = minimize(obj, x0, method="Nelder-Mead",
                       options={"initial_simplex": simplex, "xatol": xatol, "fatol": fatol,
                                "maxiter": 400 * x0.size})
        cand = _unpack(res.x, spec.family)
        q = obj.value(cand)
        if q > best_q:
            best, best_q = cand, q
        if np.isfinite(q) and q >= q_start - 1e-9:
            ok = True
            break
    if not ok:
        warnings.warn(f"M-step for {spec.label()} did not improve on its start", MStepWarning,
                      stacklevel=2)
    return (best, ok) if return_info else best


@dataclass
class ConvergenceMonitor:
    """Log-likelihood trace plus Aitken-acceleration stopping state.

    ``rule="mcnicholas"`` stops when the asymptotic estimate exceeds the
    previous log-likelihood by less than ``epsilon``; ``rule="lindsay"`` stops
    when it exceeds the current log-likelihood by less than ``epsilon``.
    """

    epsilon: float = 0.1
    max_iters: int = 500
    rule: str = "mcnicholas"
    loglik_trace: list[float] = field(default_factory=list)
    aitken_a: float = float("nan")
    linf_estimate: float = float("nan")

    def record(self, loglik: float) -> bool:
        self.loglik_trace.append(float(loglik))
        return len(self.loglik_trace) >= 3 and aitken_converged(self)


def _aitken(l0: float, l1: float, l2: float) -> tuple[float, float]:
    """(a, asymptotic estimate) for consecutive log-likelihoods l0, l1, l2."""
    a = (l2 - l1) / (l1 - l0)
    linf = l1 + (l2 - l1) / (1.0 - a) if a != 1.0 else np.inf
    return a, linf


def aitken_converged(monitor: ConvergenceMonitor) -> bool:
    tr = monitor.loglik_trace
    if len(tr) < 3:
        raise ValueError("Aitken stopping needs at least three log-likelihood values")
    l0, l1, l2 = tr[-3:]
    # zero progress: nothing left to accelerate
    if l1 == l0 or l2 == l1:
        monitor.aitken_a = 0.0
        monitor.linf_estimate = l2
        return True
    a, linf = _aitken(l0, l1, l2)
    monitor.aitken_a, monitor.linf_estimate = a, linf
    if monitor.rule == "lindsay":
        return bool(linf - l2 < monitor.epsilon)
    if monitor.rule == "mcnicholas":
        return bool(0.0 < linf - l1 < monitor.epsilon)
    raise ValueError(f"unknown stopping rule {monitor.rule!r}")


@dataclass
class FitResult:
    model: MixtureModel
    responsibilities: np.ndarray
    final_loglik: float
    bic: float
    map_labels: np.ndarray
    converged: bool
    iterations: int
    loglik_trace: list[float]
    n_obs: int
    mstep_failures: int = 0

    @property
    def G(self) -> int:
        return self.model.G

    @property
    def n_params(self) -> int:
        from .criteria import n_free_params
        return n_free_params(self.model.G, self.model.family)

    def sorted_by_lambda(self) -> "FitResult":
        """Same fit with components relabelled by descending innovation mean."""
        model, order = self.model.sorted_by_lambda()
        resp = self.responsibilities[:, order]
        return replace(self, model=model, responsibilities=resp,
                       map_labels=np.argmax(resp, axis=1))

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "final_loglik": self.final_loglik,
            "bic": self.bic,
            "n_params": self.n_params,
            "n_obs": self.n_obs,
            "converged": self.converged,
            "iterations": self.iterations,
            "loglik_trace": list(self.loglik_trace),
            "map_labels": self.map_labels.tolist(),
        }


def fit_em(panel: PanelData, init: MixtureModel, epsilon: float = 0.1, max_iters: int = 500,
           rule: str = "mcnicholas", rng: np.random.Generator | None = None,
           **mstep_kw) -> FitResult:
    """Run EM from ``init`` until the Aitken stopping rule fires or ``max_iters`` M-steps."""
    rng = rng if rng is not None else np.random.default_rng(0)
    monitor = ConvergenceMonitor(epsilon=epsilon, max_iters=max_iters, rule=rule)
    model = init
    converged = False
    failures = 0
    iteration = 0
    while True:
        try:
            resp, ll = e_step(panel, model)
        except DegenerateFitError as exc:
            raise DegenerateFitError(exc.series_index, iteration) from None
        if monitor.record(ll):
            converged = True
            break
        if iteration >= max_iters:
            break
        weights = m_step_weights(resp)
        new_params = []
        for g, (spec, start) in enumerate(zip(model.specs, model.params)):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", MStepWarning)
                p, ok = m_step_component(panel, resp[:, g], spec, start, rng=rng,
                                         return_info=True, **mstep_kw)
            failures += not ok
            new_params.append(p)
        model = MixtureModel(model.specs, new_params, weights)
        iteration += 1
    log.debug("EM stopped after %d iterations (converged=%s, loglik=%.4f)", iteration, converged, ll)
    return FitResult(
        model=model,
        responsibilities=resp,
        final_loglik=ll,
        bic=bic_value(ll, model.G, model.family, panel.n_obs),
        map_labels=np.argmax(resp, axis=1),
        converged=converged,
        iterations=iteration,
        loglik_trace=list(monitor.loglik_trace),
        n_obs=panel.n_obs,
        mstep_failures=failures,
    )
