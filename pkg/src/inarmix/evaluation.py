"""MAP classification, contingency tables and (adjusted) Rand indices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import comb

__all__ = ["map_classify", "CrossTab", "crosstab", "rand_index", "adjusted_rand_index"]


def map_classify(resp) -> np.ndarray:
    """Hard labels from a responsibility matrix; ties go to the lowest index."""
    resp = np.asarray(resp, dtype=float)
    if resp.ndim != 2:
        raise ValueError("responsibilities must be a 2-D (n, G) array")
    return np.argmax(resp, axis=1)


def _check_pair(true_labels, pred_labels):
    a = np.asarray(true_labels).ravel()
    b = np.asarray(pred_labels).ravel()
    if a.shape != b.shape:
        raise ValueError(f"label vectors differ in length ({a.size} vs {b.size})")
    if a.size < 2:
        raise ValueError("need at least two labelled items")
    return a, b


@dataclass
class CrossTab:
    """Counts with rows = true labels and columns = predicted labels."""

    matrix: np.ndarray
    row_labels: list
    col_labels: list

    @property
    def n(self) -> int:
        return int(self.matrix.sum())

    def __add__(self, other: "CrossTab") -> "CrossTab":
        rows = sorted(set(self.row_labels) | set(other.row_labels), key=str)
        cols = sorted(set(self.col_labels) | set(other.col_labels), key=str)
        out = np.zeros((len(rows), len(cols)), dtype=np.int64)
        for tab in (self, other):
            ri = [rows.index(r) for r in tab.row_labels]
            ci = [cols.index(c) for c in tab.col_labels]
            out[np.ix_(ri, ci)] += tab.matrix
        return CrossTab(out, rows, cols)

    def ari(self) -> float:
        return _ari_from_table(self.matrix)

    def rand(self) -> float:
        return _rand_from_table(self.matrix)

    def to_dict(self) -> dict:
        return {"rows": [_plain(r) for r in self.row_labels],
                "cols": [_plain(c) for c in self.col_labels],
                "counts": self.matrix.tolist()}

    def to_text(self, row_title: str = "true", col_title: str = "pred") -> str:
        head = [f"{row_title}\\{col_title}"] + [str(c) for c in self.col_labels]
        body = [[str(r)] + [str(int(v)) for v in row] for r, row in zip(self.row_labels, self.matrix)]
        widths = [max(len(line[k]) for line in [head] + body) for k in range(len(head))]
        return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(line, widths)) for line in [head] + body)


def _plain(v):
    return v.item() if isinstance(v, np.generic) else v


def crosstab(true_labels, pred_labels, row_labels=None, col_labels=None) -> CrossTab:
    a = np.asarray(true_labels).ravel()
    b = np.asarray(pred_labels).ravel()
    if a.shape != b.shape:
        raise ValueError(f"label vectors differ in length ({a.size} vs {b.size})")
    rows = list(np.unique(a)) if row_labels is None else list(row_labels)
    cols = list(np.unique(b)) if col_labels is None else list(col_labels)
    rows = [_plain(r) for r in rows]
    cols = [_plain(c) for c in cols]
    rpos = {r: k for k, r in enumerate(rows)}
    cpos = {c: k for k, c in enumerate(cols)}
    m = np.zeros((len(rows), len(cols)), dtype=np.int64)
    for x, y in zip(a.tolist(), b.tolist()):
        m[rpos[x], cpos[y]] += 1
    return CrossTab(m, rows, cols)


def _pairs(x) -> float:
    return float(np.sum(comb(np.asarray(x, dtype=float), 2)))


def _ari_from_table(m: np.ndarray) -> float:
    m = np.asarray(m, dtype=float)
    n = m.sum()
    total = n * (n - 1) / 2.0
    index = _pairs(m)
    sa = _pairs(m.sum(axis=1))
    sb = _pairs(m.sum(axis=0))
    expected = sa * sb / total if total else 0.0
    maximum = 0.5 * (sa + sb)
    denom = maximum - expected
    if denom == 0.0:
        # both partitions trivial in the same way (or degenerate): identical iff index == maximum
        return 1.0 if index == maximum else 0.0
    return float((index - expected) / denom)


def _rand_from_table(m: np.ndarray) -> float:
    m = np.asarray(m, dtype=float)
    n = m.sum()
    total = n * (n - 1) / 2.0
    agree_same = _pairs(m)
    sa = _pairs(m.sum(axis=1))
    sb = _pairs(m.sum(axis=0))
    agree_diff = total - sa - sb + agree_same
    return float((agree_same + agree_diff) / total)


def adjusted_rand_index(true_labels, pred_labels) -> float:
    """Hubert-Arabie adjusted Rand index.

    When the chance-corrected denominator is zero (for example both partitions
    put every item in one cluster) the result is 1 for identical partitions
    and 0 otherwise.
    """
    a, b = _check_pair(true_labels, pred_labels)
    return _ari_from_table(crosstab(a, b).matrix)


def rand_index(true_labels, pred_labels) -> float:
    """Fraction of item pairs on which the two partitions agree."""
    a, b = _check_pair(true_labels, pred_labels)
    return _rand_from_table(crosstab(a, b).matrix)
