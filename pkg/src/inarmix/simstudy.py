"""Simulation-study harness for the five-difficulty Poisson and NB scenario sets."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .baseline import FcmddConfig, fcmdd_select
from .core import ComponentParams, ComponentSpec, Family, simulate_inar
from .evaluation import CrossTab, adjusted_rand_index, crosstab
from .initialization import InitConfig
from .panel import PanelData
from .selection import ModelGrid, model_search

__all__ = [
    "SCHEMA_VERSION",
    "TruthComponent",
    "ScenarioSpec",
    "ScenarioReport",
    "builtin_scenarios",
    "get_scenario",
    "simulate_panel",
    "run_scenario",
    "render_report",
    "render_reports",
]

SCHEMA_VERSION = "inarmix.study/1"
log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TruthComponent:
    """One true component in scenario units.

    For NB scenarios ``phi`` follows the scenario's ``phi_convention``:
    ``"ratio"`` means Var/mean of the innovation, ``"size"`` means the NB size
    parameter (Var = lam + lam^2 / size).
    """

    alpha: float
    pi: float
    lam: float
    phi: float
    lag: int


def _ratio_phi(lam: float, phi: float, family: Family, convention: str) -> float:
    if family is Family.POISSON:
        return 1.0
    return 1.0 + lam / phi if convention == "size" else phi


def _table_phi(lam: float, phi_ratio: float, family: Family, convention: str) -> float:
    if family is Family.POISSON:
        return 1.0
    return lam / (phi_ratio - 1.0) if convention == "size" else phi_ratio


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    family: Family
    components: tuple[TruthComponent, ...]
    n_individuals: int
    T: int
    lag_pair: tuple[int, int]
    replications: int = 10
    g_range: tuple[int, int] = (2, 3)
    h_rule: str = "01"
    epsilon: float = 0.1
    seed: int = 0
    phi_convention: str = "ratio"

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        object.__setattr__(self, "components", tuple(
            c if isinstance(c, TruthComponent) else TruthComponent(**c) for c in self.components))
        object.__setattr__(self, "lag_pair", tuple(self.lag_pair))
        object.__setattr__(self, "g_range", tuple(self.g_range))
        if not self.components:
            raise ValueError("a scenario needs at least one component")
        if abs(sum(c.pi for c in self.components) - 1.0) > 1e-9:
            raise ValueError(f"mixing proportions of {self.name!r} must sum to 1")
        if self.phi_convention not in ("ratio", "size"):
            raise ValueError("phi_convention must be 'ratio' or 'size'")
        if self.n_individuals < 1 or self.T < 1 or self.replications < 0:
            raise ValueError("n_individuals and T must be >= 1, replications >= 0")
        self.params()  # validates the parameter domains

    def specs(self) -> list[ComponentSpec]:
        return [ComponentSpec(c.lag, self.family) for c in self.components]

    def params(self) -> list[ComponentParams]:
        return [ComponentParams.make(c.alpha, c.lam, _ratio_phi(c.lam, c.phi, self.family, self.phi_convention),
                                     self.family) for c in self.components]

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.pi for c in self.components])

    def grid(self) -> ModelGrid:
        return ModelGrid(self.lag_pair, self.g_range, self.h_rule, self.family)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["family"] = self.family.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        d["components"] = tuple(TruthComponent(**c) for c in d["components"])
        return cls(**d)


def builtin_scenarios() -> list[ScenarioSpec]:
    """The ten builtin scenarios: five Poisson (two INAR(5*) components,
    200 x 50) and five NB (INAR(2*) and INAR(4*), 250 x 30).

    The NB scenarios give the dispersion as the NB size parameter and
    use ``phi_convention="size"``.
    """
    pois = {
        "very-easy": [(0.20, 0.375, 7.00, 1), (0.70, 0.625, 0.50, 1)],
        "easy": [(0.40, 0.375, 6.00, 1), (0.70, 0.625, 0.50, 1)],
        "moderate": [(0.40, 0.375, 6.00, 1), (0.50, 0.625, 2.00, 1)],
        "difficult": [(0.45, 0.375, 4.00, 1), (0.50, 0.625, 2.00, 1)],
        "very-difficult": [(0.45, 0.375, 4.00, 1), (0.50, 0.625, 3.00, 1)],
    }
    nb = {
        "very-easy": [(0.80, 0.60, 1.00, 4), (0.20, 0.40, 9.00, 2)],
        "easy": [(0.70, 0.60, 3.00, 4), (0.20, 0.40, 9.00, 2)],
        "moderate": [(0.70, 0.60, 3.00, 4), (0.35, 0.40, 7.00, 2)],
        "difficult": [(0.50, 0.60, 4.00, 4), (0.35, 0.40, 7.00, 2)],
        "very-difficult": [(0.50, 0.60, 4.00, 4), (0.40, 0.40, 6.00, 2)],
    }
    out = []
    for level, comps in pois.items():
        out.append(ScenarioSpec(
            f"poisson-{level}", Family.POISSON,
            tuple(TruthComponent(a, p, l, f, 5) for a, p, l, f in comps),
            n_individuals=200, T=50, lag_pair=(5, 10)))
    for level, comps in nb.items():
        out.append(ScenarioSpec(
            f"nb-{level}", Family.NEGBIN,
            tuple(TruthComponent(a, p, l, f, lag) for (a, p, l, f), lag in zip(comps, (2, 4))),
            n_individuals=250, T=30, lag_pair=(2, 4), phi_convention="size"))
    return out


def get_scenario(name: str) -> ScenarioSpec:
    for s in builtin_scenarios():
        if s.name == name:
            return s
    raise KeyError(f"unknown scenario {name!r}; choose from {[s.name for s in builtin_scenarios()]}")


def simulate_panel(spec: ScenarioSpec, rng: np.random.Generator) -> tuple[PanelData, np.ndarray]:
    """One labelled panel: memberships drawn i.i.d. from the mixing proportions."""
    n, T = spec.n_individuals, spec.T
    labels = rng.choice(len(spec.components), size=n, p=spec.weights)
    X = np.zeros((n, T), dtype=np.int64)
    for g, (cs, cp) in enumerate(zip(spec.specs(), spec.params())):
        idx = np.flatnonzero(labels == g)
        if idx.size:
            X[idx] = simulate_inar(cs, cp, T, rng, size=idx.size)
    return PanelData.from_array(X), labels


# --------------------------------------------------------------------------- replications


def _replication(args) -> dict:
    spec, seq, include_baseline, init_cfg, fcmdd_cfg = args
    sim_seq, fit_seq, base_seq = seq.spawn(3)
    panel, labels = simulate_panel(spec, np.random.default_rng(sim_seq))
    out: dict = {"labels": labels}
    try:
        res = model_search(panel, spec.grid(), init_cfg, np.random.default_rng(fit_seq), epsilon=spec.epsilon)
    except Exception as exc:
        log.warning("%s: replication failed: %s", spec.name, exc)
        out["error"] = f"{type(exc).__name__}: {exc}"
        return out
    fit = res.best
    out.update(
        structure=res.best_candidate.label,
        G=fit.model.G,
        pred=np.asarray(fit.map_labels),
        ari=adjusted_rand_index(labels, fit.map_labels),
        params=[(p.alpha, float(w), p.lam, p.phi, s.lag)
                for s, p, w in zip(fit.model.specs, fit.model.params, fit.model.weights)],
        converged=bool(fit.converged),
    )
    if include_baseline:
        try:
            base = fcmdd_select(panel, fcmdd_cfg, np.random.default_rng(base_seq))
            means = panel.means()
            out.update(base_G=base.G, base_pred=np.asarray(base.labels),
                       base_levels=[float(means[base.labels == k].mean()) if np.any(base.labels == k) else 0.0
                                    for k in range(base.G)],
                       base_ari=adjusted_rand_index(labels, base.labels))
        except Exception as exc:
            log.warning("%s: baseline failed: %s", spec.name, exc)
            out["base_error"] = f"{type(exc).__name__}: {exc}"
    return out


def _rank_desc(values) -> np.ndarray:
    """rank[k] = position of item k when sorted by descending value (stable)."""
    order = np.argsort(-np.asarray(values, dtype=float), kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return rank


def _mean_sd(x) -> tuple[float | None, float | None]:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return None, None
    return float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0


@dataclass
class ScenarioReport:
    scenario: ScenarioSpec
    replications: int
    failed: int
    ari: list
    selected_structures: dict
    mean_params: list          # per true component: dict of mean (alpha, pi, lambda, phi)
    extra_params: list         # per extra rank: {"cases": k, "alpha": ...}
    classification: CrossTab
    baseline: dict | None = None
    converged: int = 0
    schema: str = SCHEMA_VERSION

    @property
    def mean_ari(self):
        return _mean_sd(self.ari)[0]

    @property
    def sd_ari(self):
        return _mean_sd(self.ari)[1]

    def to_dict(self) -> dict:
        m, s = _mean_sd(self.ari)
        return {
            "schema": self.schema,
            "scenario": self.scenario.to_dict(),
            "replications": self.replications,
            "failed": self.failed,
            "converged": self.converged,
            "ari": {"mean": m, "sd": s, "values": list(self.ari)},
            "selected_structures": self.selected_structures,
            "mean_params": self.mean_params,
            "extra_params": self.extra_params,
            "classification": self.classification.to_dict(),
            "baseline": self.baseline,
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=False) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def run_scenario(spec: ScenarioSpec, include_baseline: bool = False, rng=None,
                 init_cfg: InitConfig | None = None, fcmdd_cfg: FcmddConfig | None = None,
                 replications: int | None = None, workers: int = 1) -> ScenarioReport:
    """Simulate and fit ``replications`` panels and aggregate the results.

    Each replication gets its own seed derived from ``rng`` (an int seed, a
    ``SeedSequence`` or ``None`` for ``spec.seed``), so results do not depend on
    ``workers``. Fitted components are matched to true components by maximum
    agreement of the MAP labels; unmatched fitted components are averaged
    separately over the replications in which they occur. Classification
    columns are fitted components ranked by descending lambda.
    """
    reps = spec.replications if replications is None else int(replications)
    if isinstance(rng, np.random.SeedSequence):
        root = rng
    else:
        root = np.random.SeedSequence(spec.seed if rng is None else int(rng))
    init_cfg = init_cfg or InitConfig()
    fcmdd_cfg = fcmdd_cfg or FcmddConfig(g_range=spec.g_range)
    jobs = [(spec, s, include_baseline, init_cfg, fcmdd_cfg) for s in root.spawn(reps)]
    if workers > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replication, jobs))
    else:
        results = [_replication(j) for j in jobs]
    return _aggregate(spec, results, include_baseline)


def _aggregate(spec: ScenarioSpec, results: list[dict], include_baseline: bool) -> ScenarioReport:
    G0 = len(spec.components)
    true_rank = _rank_desc([c.lam for c in spec.components])
    ok = [r for r in results if "error" not in r]
    structures: dict[str, int] = {}
    sums = np.zeros((G0, 4))
    counts = np.zeros(G0)
    extra: dict[int, list] = {}
    max_g = max([r["G"] for r in ok], default=G0)
    table = CrossTab(np.zeros((G0, max_g), dtype=np.int64), list(range(1, G0 + 1)), list(range(1, max_g + 1)))
    for r in ok:
        structures[r["structure"]] = structures.get(r["structure"], 0) + 1
        params = r["params"]
        conv = [(a, w, l, _table_phi(l, f, spec.family, spec.phi_convention)) for a, w, l, f, _ in params]
        fit_rank = _rank_desc([p[2] for p in params])
        # rows/cols in descending-lambda order, labelled 1..G
        table = table + crosstab(true_rank[r["labels"]] + 1, fit_rank[r["pred"]] + 1,
                                 list(range(1, G0 + 1)), list(range(1, r["G"] + 1)))
        agree = crosstab(r["labels"], r["pred"], list(range(G0)), list(range(r["G"]))).matrix
        rows, cols = linear_sum_assignment(-agree)
        matched = set()
        for g, k in zip(rows, cols):
            sums[g] += conv[k]
            counts[g] += 1
            matched.add(int(k))
        extras = sorted((k for k in range(r["G"]) if k not in matched), key=lambda k: -params[k][2])
        for j, k in enumerate(extras):
            extra.setdefault(j, []).append(conv[k])
    names = ("alpha", "pi", "lambda", "phi")
    mean_params = []
    for g, c in enumerate(spec.components):
        entry = {"true": dict(zip(names, (c.alpha, c.pi, c.lam, c.phi))), "lag": c.lag, "cases": int(counts[g])}
        entry["mean"] = dict(zip(names, (sums[g] / counts[g]).tolist())) if counts[g] else None
        mean_params.append(entry)
    extra_params = [{"cases": len(v), "mean": dict(zip(names, np.mean(v, axis=0).tolist()))}
                    for _, v in sorted(extra.items())]
    baseline = None
    if include_baseline:
        bok = [r for r in ok if "base_ari" in r]
        bm, bs = _mean_sd([r["base_ari"] for r in bok])
        bG: dict[str, int] = {}
        btab = None
        for r in bok:
            bG[str(r["base_G"])] = bG.get(str(r["base_G"]), 0) + 1
            # no lambda for medoid clusters: rank by the mean level of their members
            rank = _rank_desc(r["base_levels"])
            t = crosstab(true_rank[r["labels"]] + 1, rank[r["base_pred"]] + 1,
                         list(range(1, G0 + 1)), list(range(1, r["base_G"] + 1)))
            btab = t if btab is None else btab + t
        baseline = {"ari": {"mean": bm, "sd": bs, "values": [r["base_ari"] for r in bok]},
                    "selected_G": bG, "failed": len(ok) - len(bok),
                    "classification": btab.to_dict() if btab is not None else None}
    return ScenarioReport(
        scenario=spec, replications=len(results), failed=len(results) - len(ok),
        ari=[float(r["ari"]) for r in ok], selected_structures=structures,
        mean_params=mean_params, extra_params=extra_params, classification=table,
        baseline=baseline, converged=sum(1 for r in ok if r["converged"]))


# --------------------------------------------------------------------------- text output


def _fmt(v, nd=3):
    return "-" if v is None else f"{v:.{nd}f}"


def render_report(rep: ScenarioReport) -> str:
    d = rep.to_dict()
    lines = [f"== {rep.scenario.name} ({rep.scenario.family.value}, n={rep.scenario.n_individuals}, "
             f"T={rep.scenario.T}, reps={rep.replications}, failed={rep.failed})"]
    lines.append(f"{'comp':>5} {'lag':>4}  {'true (alpha, pi, lambda, phi)':<32} {'mean estimate':<32} {'cases':>5}")
    for g, e in enumerate(d["mean_params"], 1):
        t = e["true"]
        true_s = f"({t['alpha']:.2f}, {t['pi']:.3f}, {t['lambda']:.2f}, {t['phi']:g})"
        m = e["mean"]
        est_s = "-" if m is None else f"({m['alpha']:.3f}, {m['pi']:.3f}, {m['lambda']:.2f}, {m['phi']:.2f})"
        lines.append(f"{g:>5} {e['lag']:>4}  {true_s:<32} {est_s:<32} {e['cases']:>5}")
    for j, e in enumerate(d["extra_params"]):
        m = e["mean"]
        est_s = f"({m['alpha']:.3f}, {m['pi']:.3f}, {m['lambda']:.2f}, {m['phi']:.2f})"
        lines.append(f"{'x' + str(j + 1):>5} {'':>4}  {'(extra component)':<32} {est_s:<32} {e['cases']:>5}")
    lines.append(f"mean ARI (SD): {_fmt(d['ari']['mean'])} ({_fmt(d['ari']['sd'], 2)})")
    lines.append("selected: " + ", ".join(f"{k} x{v}" for k, v in sorted(d["selected_structures"].items())))
    lines.append("classification (rows true, cols fitted; both by descending lambda):")
    lines.append(rep.classification.to_text())
    if d["baseline"] is not None:
        b = d["baseline"]
        lines.append(f"baseline FCMdd mean ARI (SD): {_fmt(b['ari']['mean'])} ({_fmt(b['ari']['sd'], 2)}); "
                     "selected G: " + ", ".join(f"{k} x{v}" for k, v in sorted(b["selected_G"].items())))
        if b["classification"] is not None:
            bt = b["classification"]
            lines.append("baseline classification (cols by descending member mean):")
            lines.append(CrossTab(np.asarray(bt["counts"]), bt["rows"], bt["cols"]).to_text())
    return "\n".join(lines) + "\n"


def render_reports(reports: list[ScenarioReport]) -> str:
    return "\n".join(render_report(r) for r in reports)
