"""Model selection: BIC over mixtures of two INAR(s*) lags, plus the ACF and
dispersion diagnostics used to choose the lags and the innovation family."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ComponentSpec, Family
from .criteria import bic, n_free_params
from .initialization import InitConfig, augment_model, initial_model
from .mixture import FitResult, fit_em
from .panel import PanelData

__all__ = [
    "bic",
    "n_free_params",
    "ModelGrid",
    "Candidate",
    "SearchResult",
    "SearchFailedError",
    "enumerate_models",
    "model_search",
    "select_best",
    "AcfResult",
    "DispersionResult",
    "DiagnosticsReport",
    "sample_acf",
    "acf_panel",
    "dispersion_diagnostic",
    "diagnose",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelGrid:
    """Candidate mixtures ``(G - H) x INAR(i*) + H x INAR(j*)``.

    ``h_rule`` is ``"01"`` (H in {0, 1}), ``"full"`` (H = 0..G) or ``"0"``
    (single-lag mixtures only).
    """

    lag_pair: tuple[int, int]
    g_range: tuple[int, int]
    h_rule: str = "01"
    family: Family = Family.POISSON

    def __post_init__(self):
        i, j = (int(v) for v in self.lag_pair)
        if not 1 <= i < j:
            raise ValueError(f"lag pair must satisfy 1 <= i < j, got {self.lag_pair}")
        lo, hi = (int(v) for v in self.g_range)
        if not 1 <= lo <= hi:
            raise ValueError(f"G range must satisfy 1 <= lo <= hi, got {self.g_range}")
        if self.h_rule not in ("0", "01", "full"):
            raise ValueError(f"h_rule must be '0', '01' or 'full', got {self.h_rule!r}")
        object.__setattr__(self, "lag_pair", (i, j))
        object.__setattr__(self, "g_range", (lo, hi))
        object.__setattr__(self, "family", Family.parse(self.family))

    def h_values(self, G: int) -> list[int]:
        if self.h_rule == "0":
            return [0]
        return [0, 1] if self.h_rule == "01" else list(range(G + 1))


@dataclass(frozen=True)
class Candidate:
    G: int
    H: int
    specs: tuple[ComponentSpec, ...]

    @property
    def label(self) -> str:
        lag_counts: dict[int, int] = {}
        for s in self.specs:
            lag_counts[s.lag] = lag_counts.get(s.lag, 0) + 1
        return " + ".join(f"{c}xINAR({lag}*)" for lag, c in sorted(lag_counts.items()))


def enumerate_models(grid: ModelGrid) -> list[Candidate]:
    """All (G, H) structures of the grid, ascending G then H."""
    i, j = grid.lag_pair
    out = []
    for G in range(grid.g_range[0], grid.g_range[1] + 1):
        for H in grid.h_values(G):
            if H > G:
                continue
            specs = tuple([ComponentSpec(i, grid.family)] * (G - H) + [ComponentSpec(j, grid.family)] * H)
            out.append(Candidate(G, H, specs))
    return out


class SearchFailedError(RuntimeError):
    """Every candidate model failed to fit."""


@dataclass
class SearchResult:
    best: FitResult
    best_candidate: Candidate
    table: list[dict]
    fits: dict[tuple[int, int], FitResult] = field(default_factory=dict)


def _canonical(fit: FitResult, specs: tuple[ComponentSpec, ...]) -> FitResult:
    """Reorder components to follow the candidate's lag order (stable)."""
    lags = [s.lag for s in fit.model.specs]
    target = [s.lag for s in specs]
    order = np.argsort([target.index(l) for l in lags], kind="stable")
    if np.all(order == np.arange(order.size)):
        return fit
    model = fit.model.permuted(order)
    resp = fit.responsibilities[:, order]
    from dataclasses import replace
    return replace(fit, model=model, responsibilities=resp, map_labels=np.argmax(resp, axis=1))


def model_search(panel: PanelData, grid: ModelGrid, init_cfg: InitConfig | None = None,
                 rng: np.random.Generator | None = None, epsilon: float = 0.1,
                 max_iters: int = 500) -> SearchResult:
    """Fit every candidate of ``grid`` and keep the one with the largest BIC.

    A candidate with G components is warm-started from the fitted (G-1, H)
    candidate (adding a lag-i component) or, failing that, from (G-1, H-1)
    (adding a lag-j component); otherwise it gets a fresh k-means start.
    Candidates that fail are recorded in the table and skipped. BIC ties go to
    the model with fewer free parameters.
    """
    init_cfg = init_cfg or InitConfig()
    rng = rng if rng is not None else np.random.default_rng(init_cfg.seed)
    candidates = enumerate_models(grid)
    seeds = rng.integers(2**31 - 1, size=len(candidates))
    i_lag, j_lag = grid.lag_pair
    fits: dict[tuple[int, int], FitResult] = {}
    table: list[dict] = []
    init_cache: dict = {}
    kmeans_rng = np.random.default_rng(int(rng.integers(2**31 - 1)))
    for cand, seed in zip(candidates, seeds):
        crng = np.random.default_rng(int(seed))
        row = {"G": cand.G, "H": cand.H, "structure": cand.label, "start": None,
               "loglik": None, "n_params": n_free_params(cand.G, grid.family),
               "bic": None, "neg2ll_bic": None, "converged": None, "iterations": None, "error": None}
        try:
            if cand.G > panel.n:
                raise ValueError(f"G={cand.G} exceeds the number of series ({panel.n})")
            if (cand.G - 1, cand.H) in fits:
                init = augment_model(fits[cand.G - 1, cand.H], panel, ComponentSpec(i_lag, grid.family), init_cfg)
                row["start"] = f"warm:{cand.G - 1},{cand.H}"
            elif (cand.G - 1, cand.H - 1) in fits and cand.H >= 1:
                init = augment_model(fits[cand.G - 1, cand.H - 1], panel, ComponentSpec(j_lag, grid.family), init_cfg)
                row["start"] = f"warm:{cand.G - 1},{cand.H - 1}"
            else:
                init = initial_model(panel, list(cand.specs), init_cfg, kmeans_rng, cache=init_cache)
                row["start"] = "kmeans"
            fit = _canonical(fit_em(panel, init, epsilon=epsilon, max_iters=max_iters, rng=crng), cand.specs)
        except Exception as exc:  # record-and-skip
            log.warning("candidate %s failed: %s", cand.label, exc)
            row["error"] = f"{type(exc).__name__}: {exc}"
            table.append(row)
            continue
        fits[cand.G, cand.H] = fit
        row.update(loglik=fit.final_loglik, bic=fit.bic,
                   neg2ll_bic=-2.0 * fit.final_loglik + fit.n_params * math.log(fit.n_obs),
                   converged=fit.converged, iterations=fit.iterations)
        table.append(row)
    k = select_best(table)
    best_cand = candidates[k]
    return SearchResult(fits[best_cand.G, best_cand.H], best_cand, table, fits)


def select_best(table: list[dict]) -> int:
    """Index of the successful row with the largest BIC; ties go to fewer
    parameters, then to the earlier row. Marks ``selected`` on every row."""
    ok = [k for k, r in enumerate(table) if r.get("error") is None]
    if not ok:
        raise SearchFailedError("every candidate model failed to fit: "
                                + "; ".join(f"{r['structure']}: {r['error']}" for r in table))
    best = max(ok, key=lambda k: (table[k]["bic"], -table[k]["n_params"], -k))
    for k, r in enumerate(table):
        r["selected"] = k == best
    return best


# --------------------------------------------------------------------------- diagnostics


def sample_acf(x, max_lag: int) -> tuple[np.ndarray, bool]:
    """Biased sample autocorrelation at lags 1..max_lag; (zeros, True) for a constant series."""
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    denom = float(d @ d)
    if denom == 0.0:
        return np.zeros(max_lag), True
    out = np.array([float(d[k:] @ d[:-k]) / denom if k < x.size else 0.0 for k in range(1, max_lag + 1)])
    return out, False


@dataclass
class AcfResult:
    lags: np.ndarray            # 1..L
    acf: np.ndarray             # (n, L)
    constant: np.ndarray        # (n,) bool
    median_abs: np.ndarray      # (L,)
    suggested_lags: tuple[int, int]


def acf_panel(panel: PanelData, max_lag: int) -> AcfResult:
    if max_lag < 2:
        raise ValueError("max_lag must be >= 2 to suggest a lag pair")
    if max_lag >= panel.lengths.min():
        raise ValueError(f"max_lag={max_lag} must be below the shortest series length {panel.lengths.min()}")
    rows, flags = zip(*(sample_acf(x, max_lag) for x in panel.series))
    acf = np.vstack(rows)
    med = np.median(np.abs(acf), axis=0)
    top = np.argsort(-med, kind="stable")[:2] + 1
    return AcfResult(np.arange(1, max_lag + 1), acf, np.array(flags), med, (int(min(top)), int(max(top))))


@dataclass
class DispersionResult:
    means: np.ndarray
    variances: np.ndarray
    ratios: np.ndarray
    median_ratio: float
    threshold: float
    verdict: str                # "equi" | "over"


def dispersion_diagnostic(panel: PanelData, threshold: float = 1.2) -> DispersionResult:
    """Per-series (mean, variance) and an equi/over verdict on the median variance-to-mean ratio."""
    if panel.lengths.min() < 2:
        raise ValueError("dispersion needs series of length >= 2")
    means = panel.means()
    variances = np.array([x.var(ddof=1) for x in panel.series])
    ratios = np.divide(variances, means, out=np.zeros_like(variances), where=means > 0)
    med = float(np.median(ratios))
    return DispersionResult(means, variances, ratios, med, threshold, "over" if med > threshold else "equi")


@dataclass
class DiagnosticsReport:
    acf: AcfResult
    dispersion: DispersionResult

    @property
    def acf_by_lag(self) -> dict[int, np.ndarray]:
        """Lag -> the n per-series autocorrelations (box-plot source)."""
        return {int(l): self.acf.acf[:, k] for k, l in enumerate(self.acf.lags)}

    @property
    def dispersion_points(self) -> np.ndarray:
        """(n, 2) array of per-series (mean, variance)."""
        return np.column_stack([self.dispersion.means, self.dispersion.variances])

    @property
    def suggested_lags(self) -> tuple[int, int]:
        return self.acf.suggested_lags

    @property
    def dispersion_verdict(self) -> str:
        return self.dispersion.verdict

    @property
    def suggested_family(self) -> Family:
        return Family.NEGBIN if self.dispersion.verdict == "over" else Family.POISSON

    def summary(self) -> dict:
        return {
            "suggested_lags": list(self.suggested_lags),
            "median_abs_acf": {int(l): float(v) for l, v in zip(self.acf.lags, self.acf.median_abs)},
            "constant_series": int(self.acf.constant.sum()),
            "dispersion_verdict": self.dispersion.verdict,
            "median_variance_to_mean": self.dispersion.median_ratio,
            "dispersion_threshold": self.dispersion.threshold,
            "suggested_family": self.suggested_family.value,
        }


def diagnose(panel: PanelData, max_lag: int = 12, threshold: float = 1.2) -> DiagnosticsReport:
    """ACF and dispersion diagnostics; ``max_lag`` is clipped to the shortest series."""
    max_lag = max(2, min(max_lag, int(panel.lengths.min()) - 1))
    return DiagnosticsReport(acf_panel(panel, max_lag), dispersion_diagnostic(panel, threshold))
