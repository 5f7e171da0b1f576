"""INAR(s*) processes with binomial thinning.

A single-lag INAR process evolves as ``X_t = alpha o X_{t-s} + eps_t`` where
``alpha o x`` is a Binomial(x, alpha) draw and ``eps_t`` is a Poisson or
negative-binomial innovation. The negative binomial is parameterised by its
mean ``lam`` and dispersion index ``phi = Var / mean`` (size ``lam/(phi-1)``,
success probability ``1/phi``).

Log-likelihoods are conditional on the first ``s`` observations being pure
innovations.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp, xlog1py, xlogy

__all__ = [
    "Family",
    "ParameterError",
    "InnovationModel",
    "ComponentSpec",
    "ComponentParams",
    "as_count_series",
    "binomial_thin",
    "innovation_pmf",
    "innovation_logpmf",
    "innovation_sample",
    "truncation_point",
    "conditional_pmf",
    "PairSet",
    "transition_logpmf",
    "series_loglik",
    "simulate_inar",
]

# below this a linear-domain convolution is recomputed with log-sum-exp
_UNDERFLOW = 1e-280


class Family(str, enum.Enum):
    POISSON = "poisson"
    NEGBIN = "nb"

    @classmethod
    def parse(cls, value: "Family | str") -> "Family":
        if isinstance(value, Family):
            return value
        key = str(value).strip().lower()
        aliases = {"poisson": cls.POISSON, "pois": cls.POISSON,
                   "nb": cls.NEGBIN, "negbin": cls.NEGBIN,
                   "negativebinomial": cls.NEGBIN, "negative_binomial": cls.NEGBIN}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown innovation family {value!r}") from None


class ParameterError(ValueError):
    """Parameter outside its domain."""


@dataclass(frozen=True)
class InnovationModel:
    family: Family
    lam: float
    phi: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "phi", float(self.phi))
        if not np.isfinite(self.lam) or self.lam <= 0:
            raise ParameterError(f"innovation mean must be > 0, got {self.lam}")
        if self.family is Family.POISSON and self.phi != 1.0:
            raise ParameterError(f"Poisson innovations require phi == 1, got {self.phi}")
        if self.family is Family.NEGBIN and not (np.isfinite(self.phi) and self.phi > 1.0):
            raise ParameterError(f"negative-binomial innovations require phi > 1, got {self.phi}")

    @property
    def variance(self) -> float:
        return self.phi * self.lam

    def nb_size_prob(self) -> tuple[float, float]:
        """(size, success probability) of the equivalent NB(r, p) law."""
        if self.family is not Family.NEGBIN:
            raise ParameterError("size/prob conversion only defined for the NB family")
        return self.lam / (self.phi - 1.0), 1.0 / self.phi


@dataclass(frozen=True)
class ComponentSpec:
    lag: int
    family: Family = Family.POISSON

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        if int(self.lag) != self.lag or self.lag < 1:
            raise ParameterError(f"lag must be a positive integer, got {self.lag}")
        object.__setattr__(self, "lag", int(self.lag))

    def label(self) -> str:
        return f"INAR({self.lag}*)"


@dataclass(frozen=True)
class ComponentParams:
    alpha: float
    innovation: InnovationModel = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not isinstance(self.innovation, InnovationModel):
            raise ParameterError("ComponentParams needs an InnovationModel")

    @classmethod
    def make(cls, alpha: float, lam: float, phi: float = 1.0,
             family: Family | str | None = None) -> "ComponentParams":
        if family is None:
            family = Family.POISSON if phi == 1.0 else Family.NEGBIN
        return cls(alpha, InnovationModel(Family.parse(family), lam, phi))

    @property
    def lam(self) -> float:
        return self.innovation.lam

    @property
    def phi(self) -> float:
        return self.innovation.phi

    @property
    def family(self) -> Family:
        return self.innovation.family

    def stationary_mean(self) -> float:
        return self.lam / (1.0 - self.alpha) if self.alpha < 1.0 else np.inf


def as_count_series(values) -> np.ndarray:
    """Validate and return a 1-D int64 array of non-negative counts."""
    arr = np.asarray(values)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError("a count series must be one-dimensional with length >= 1")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise ValueError("count series values must be integers")
    elif arr.dtype.kind not in "iub":
        raise ValueError(f"count series must be numeric, got dtype {arr.dtype}")
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise ValueError("count series values must be non-negative")
    return arr


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")


def binomial_thin(x, alpha: float, rng: np.random.Generator):
    """Draw ``alpha o x``: the number of survivors among ``x`` Bernoulli(alpha) trials.

    ``x`` may be a scalar or an integer array (thinned elementwise, independently).
    """
    _check_alpha(alpha)
    return rng.binomial(x, alpha)


def innovation_logpmf(model: InnovationModel, k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if model.family is Family.POISSON:
        out = xlogy(k, model.lam) - model.lam - gammaln(k + 1.0)
    else:
        r, p = model.nb_size_prob()
        out = (gammaln(k + r) - gammaln(r) - gammaln(k + 1.0)
               + r * np.log(p) + xlog1py(k, -p))
    return np.where(k < 0, -np.inf, out)


def innovation_pmf(model: InnovationModel, k):
    out = np.exp(innovation_logpmf(model, k))
    return float(out) if out.ndim == 0 else out


def innovation_sample(model: InnovationModel, size, rng: np.random.Generator) -> np.ndarray:
    if model.family is Family.POISSON:
        return rng.poisson(model.lam, size=size)
    r, p = model.nb_size_prob()
    return rng.negative_binomial(r, p, size=size)


def truncation_point(model: InnovationModel, observed_max: int = 0, tail: float = 1e-14) -> int:
    """Support cutoff for infinite sums.

    max(observed max, lam + 12 sd), pushed further out when the innovation
    tail beyond it still exceeds ``tail`` (heavy NB tails at small size).
    """
    k = max(int(observed_max), int(np.ceil(model.lam + 12.0 * np.sqrt(model.variance))))
    if model.family is Family.POISSON:
        dist = stats.poisson(model.lam)
    else:
        dist = stats.nbinom(*model.nb_size_prob())
    if dist.sf(k) > tail:
        k = int(dist.isf(tail))
    return k


@lru_cache(maxsize=16)
def _log_binom_coef(m: int) -> np.ndarray:
    x = np.arange(m + 1, dtype=float)[:, None]
    k = np.arange(m + 1, dtype=float)[None, :]
    with np.errstate(invalid="ignore"):
        out = gammaln(x + 1.0) - gammaln(k + 1.0) - gammaln(x - k + 1.0)
    out[np.broadcast_to(k > x, out.shape)] = -np.inf
    out.setflags(write=False)
    return out


def _log_thinning_rows(rows: np.ndarray, m: int, alpha: float) -> np.ndarray:
    """log Binomial(k; x, alpha) for x in ``rows``, k = 0..m (-inf where k > x)."""
    k = np.arange(m + 1, dtype=float)[None, :]
    x = rows.astype(float)[:, None]
    coef = _log_binom_coef(m)[rows]
    with np.errstate(invalid="ignore"):
        out = coef + xlogy(k, alpha) + xlog1py(x - k, -alpha)
    out[np.broadcast_to(k > x, out.shape)] = -np.inf
    return out


class PairSet:
    """Fixed (x_lag, x_t) pairs whose transition log-probabilities are
    evaluated repeatedly under changing parameters."""

    def __init__(self, x_lag, x_t):
        self.x_lag = np.asarray(x_lag, dtype=np.int64)
        self.x_t = np.asarray(x_t, dtype=np.int64)
        self.shape = np.broadcast(self.x_lag, self.x_t).shape
        self.x_lag, self.x_t = np.broadcast_arrays(self.x_lag, self.x_t)
        self.size = self.x_lag.size
        if self.size:
            self.m = int(max(self.x_lag.max(), self.x_t.max()))
            self.rows, inv = np.unique(self.x_lag, return_inverse=True)
            self.row_idx = inv.reshape(self.shape)
            d = np.arange(self.m + 1)[None, :] - np.arange(self.m + 1)[:, None]
            self._upper = d >= 0
            self._diff = np.clip(d, 0, self.m)

    def logpmf(self, alpha: float, innovation: InnovationModel) -> np.ndarray:
        """log P(X_t = x_t | X_{t-s} = x_lag), elementwise.

        The conditional law is Binomial(x_lag, alpha) convolved with the
        innovation pmf, evaluated as a dense matrix product in linear space;
        entries that would underflow are recomputed with log-sum-exp.
        """
        _check_alpha(alpha)
        if self.size == 0:
            return np.zeros(self.shape)
        m = self.m
        log_thin = _log_thinning_rows(self.rows, m, alpha)
        log_eps = innovation_logpmf(innovation, np.arange(m + 1))
        # shift[k, y] = p_eps(y - k) for y >= k
        log_shift = np.where(self._upper, log_eps[self._diff], -np.inf)
        prob = np.exp(log_thin) @ np.exp(log_shift)
        out = np.asarray(prob[self.row_idx, self.x_t])
        small = out < _UNDERFLOW
        if not np.any(small):
            return np.log(out)
        ri, yi = self.row_idx[small], self.x_t[small]
        out_log = np.array(np.log(np.where(small, 1.0, out)), dtype=float).reshape(self.shape)
        with np.errstate(divide="ignore"):
            out_log[small] = logsumexp(log_thin[ri] + log_shift[:, yi].T, axis=1)
        return out_log


def transition_logpmf(x_lag, x_t, alpha: float, innovation: InnovationModel) -> np.ndarray:
    """Vectorised log P(X_t = x_t | X_{t-s} = x_lag) for paired count arrays."""
    return PairSet(x_lag, x_t).logpmf(alpha, innovation)


def conditional_pmf(x_t, x_lag, params: ComponentParams):
    """P(X_t = x_t | X_{t-s} = x_lag) under ``params``."""
    out = np.exp(transition_logpmf(x_lag, x_t, params.alpha, params.innovation))
    return float(out) if out.ndim == 0 else out


def series_loglik(series, spec: ComponentSpec, params: ComponentParams) -> float:
    """Conditional log-likelihood of one series under an INAR(s*) component.

    The first ``s`` terms contribute the innovation pmf only; the rest contribute
    the thinning/innovation convolution given the value ``s`` steps back.
    Returns ``-inf`` when some factor is zero.
    """
    x = as_count_series(series)
    s = spec.lag
    head = innovation_logpmf(params.innovation, x[:s]).sum()
    if x.size <= s:
        return float(head)
    tail = transition_logpmf(x[:-s], x[s:], params.alpha, params.innovation).sum()
    return float(head + tail)


def simulate_inar(spec: ComponentSpec, params: ComponentParams, T: int,
                  rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Simulate ``X_t = alpha o X_{t-s} + eps_t`` for t = 1..T.

    The first ``s`` values are pure innovations. With ``size`` given (int or
    tuple), returns an array of shape ``(*size, T)`` of independent series.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    shape = (T,) if size is None else (*np.atleast_1d(size).tolist(), T)
    eps = innovation_sample(params.innovation, shape, rng)
    x = np.array(eps, dtype=np.int64)
    s = spec.lag
    for t in range(s, T):
        x[..., t] += rng.binomial(x[..., t - s], params.alpha)
    return x
