"""Distance-based comparison clustering: dynamic time warping plus fuzzy C-medoids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .panel import PanelData

__all__ = [
    "FcmddConfig",
    "FcmddFit",
    "BaselineResult",
    "dtw_distance",
    "dtw_matrix",
    "fcmdd_fit",
    "fcmdd_select",
    "xie_beni",
]

_PAIR_CHUNK = 20000


def dtw_distance(a, b) -> float:
    """DTW with local cost |a_i - b_j| and steps {match, insert, delete}, no window."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("DTW needs non-empty series")
    return float(_dtw_batch(a[None, :], b[None, :])[0])


def _dtw_batch(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """DTW for P pairs at once; A is (P, La), B is (P, Lb)."""
    P, La = A.shape
    Lb = B.shape[1]
    prev = np.full((P, Lb + 1), np.inf)
    prev[:, 0] = 0.0
    cur = np.empty_like(prev)
    for i in range(La):
        cost = np.abs(A[:, i, None] - B)
        cur[:, 0] = np.inf
        for j in range(1, Lb + 1):
            best = np.minimum(np.minimum(prev[:, j - 1], prev[:, j]), cur[:, j - 1])
            cur[:, j] = cost[:, j - 1] + best
        prev, cur = cur, prev
    return prev[:, Lb].copy()


def dtw_matrix(panel: PanelData) -> np.ndarray:
    """Symmetric n x n DTW distance matrix, computed once per panel and cached."""
    cached = panel.__dict__.get("_dtw_cache")
    if cached is not None:
        return cached
    n = panel.n
    D = np.zeros((n, n))
    lengths = panel.lengths
    iu, ju = np.triu_indices(n, k=1)
    # group pairs by their length pair so each group is rectangular
    keys = lengths[iu] * (lengths.max() + 1) + lengths[ju]
    for key in np.unique(keys):
        sel = np.flatnonzero(keys == key)
        la, lb = int(lengths[iu[sel[0]]]), int(lengths[ju[sel[0]]])
        for start in range(0, sel.size, _PAIR_CHUNK):
            part = sel[start:start + _PAIR_CHUNK]
            A = np.vstack([panel.series[k] for k in iu[part]]).astype(float).reshape(-1, la)
            B = np.vstack([panel.series[k] for k in ju[part]]).astype(float).reshape(-1, lb)
            D[iu[part], ju[part]] = _dtw_batch(A, B)
    D = D + D.T
    D.setflags(write=False)
    panel.__dict__["_dtw_cache"] = D
    return D


@dataclass(frozen=True)
class FcmddConfig:
    m: float = 2.0
    random_starts: int = 5
    tolerance: float = 1e-2
    max_iters: int = 100
    seed: int = 0
    g_range: tuple[int, int] = (2, 3)

    def __post_init__(self):
        if not self.m > 1.0:
            raise ValueError(f"fuzziness m must exceed 1, got {self.m}")
        if self.random_starts < 1:
            raise ValueError("random_starts must be >= 1")
        if self.tolerance <= 0 or self.max_iters < 1:
            raise ValueError("tolerance must be > 0 and max_iters >= 1")
        lo, hi = self.g_range
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid G range {self.g_range}")


@dataclass
class FcmddFit:
    medoids: np.ndarray         # (G,) series indices
    membership: np.ndarray      # (n, G), rows sum to 1
    objective: float
    objective_trace: list
    iterations: int

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.membership, axis=1)


def _memberships(Dm: np.ndarray, m: float) -> np.ndarray:
    """u_ig proportional to d_ig^(-1/(m-1)); one-hot on the first exact zero."""
    zero = Dm == 0.0
    has_zero = zero.any(axis=1)
    with np.errstate(divide="ignore"):
        w = np.where(zero, 0.0, Dm ** (-1.0 / (m - 1.0)))
    u = w / np.where(has_zero, 1.0, w.sum(axis=1))[:, None]
    if has_zero.any():
        rows = np.flatnonzero(has_zero)
        u[rows] = 0.0
        u[rows, np.argmax(zero[rows], axis=1)] = 1.0
    return u


def _update_medoids(D: np.ndarray, u: np.ndarray, m: float) -> np.ndarray:
    cost = (u ** m).T @ D                     # (G, n): cost of each series as medoid of g
    out = np.empty(u.shape[1], dtype=np.int64)
    used: set[int] = set()
    for g in range(u.shape[1]):
        # a collision is resolved by taking the cheapest medoid not already in use
        for q in np.argsort(cost[g], kind="stable"):
            if int(q) not in used:
                out[g] = q
                used.add(int(q))
                break
    return out


def _single_start(D: np.ndarray, medoids: np.ndarray, cfg: FcmddConfig) -> FcmddFit:
    m = cfg.m
    u = _memberships(D[:, medoids], m)
    J = float(np.sum(u ** m * D[:, medoids]))
    trace = [J]
    it = 0
    for it in range(1, cfg.max_iters + 1):
        new_med = _update_medoids(D, u, m)
        new_u = _memberships(D[:, new_med], m)
        new_J = float(np.sum(new_u ** m * D[:, new_med]))
        if new_J > J:
            break  # collision handling can cost a little; keep the better state
        medoids, u = new_med, new_u
        change = J - new_J
        J = new_J
        trace.append(J)
        if change < cfg.tolerance:
            break
    return FcmddFit(np.asarray(medoids), u, J, trace, it)


def fcmdd_fit(panel: PanelData | np.ndarray, G: int, cfg: FcmddConfig | None = None,
              rng: np.random.Generator | None = None) -> FcmddFit:
    """Fuzzy C-medoids on the DTW distance matrix, best of ``cfg.random_starts``.

    ``panel`` may also be a precomputed square distance matrix.
    """
    cfg = cfg or FcmddConfig()
    D = panel if isinstance(panel, np.ndarray) else dtw_matrix(panel)
    n = D.shape[0]
    if not 1 <= G <= n:
        raise ValueError(f"G must lie in 1..{n}, got {G}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    best = None
    for _ in range(cfg.random_starts):
        start = np.sort(rng.choice(n, size=G, replace=False))
        fit = _single_start(D, start, cfg)
        if best is None or fit.objective < best.objective:
            best = fit
    return best


def xie_beni(D: np.ndarray, fit: FcmddFit, m: float) -> float:
    """Compactness over separation: J_m / (n * min distance between medoids)."""
    med = fit.medoids
    if med.size < 2:
        return np.inf
    sep = D[np.ix_(med, med)][~np.eye(med.size, dtype=bool)].min()
    if sep <= 0:
        return np.inf
    return float(fit.objective / (D.shape[0] * sep))


@dataclass
class BaselineResult:
    G: int
    labels: np.ndarray
    fit: FcmddFit
    table: list[dict]

    def to_dict(self) -> dict:
        return {"G": self.G, "labels": self.labels.tolist(), "medoids": self.fit.medoids.tolist(),
                "objective": self.fit.objective, "membership": self.fit.membership.tolist(),
                "table": self.table}


def fcmdd_select(panel: PanelData | np.ndarray, cfg: FcmddConfig | None = None,
                 rng: np.random.Generator | None = None) -> BaselineResult:
    """Fit each G in ``cfg.g_range`` (capped at n - 1) and keep the smallest Xie-Beni index."""
    cfg = cfg or FcmddConfig()
    D = panel if isinstance(panel, np.ndarray) else dtw_matrix(panel)
    n = D.shape[0]
    if n < 3:
        raise ValueError("FCMdd selection needs at least three series")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    lo = max(2, cfg.g_range[0])
    hi = min(cfg.g_range[1], n - 1)
    if lo > hi:
        raise ValueError(f"no admissible G in {cfg.g_range} for n={n}")
    table = []
    best = None
    for G in range(lo, hi + 1):
        fit = fcmdd_fit(D, G, cfg, rng)
        xb = xie_beni(D, fit, cfg.m)
        table.append({"G": G, "objective": fit.objective, "xie_beni": xb, "iterations": fit.iterations})
        if best is None or xb < best[0]:
            best = (xb, G, fit)
    for row in table:
        row["selected"] = row["G"] == best[1]
    return BaselineResult(best[1], best[2].labels, best[2], table)
