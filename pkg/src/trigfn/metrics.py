"""KMeans with random restarts and external clustering metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal, localcontext
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment

from .numcore import make_rng


@dataclass
class KmeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    wcss: float
    trace: list = field(default_factory=list)  # wcss after every assignment step of the winning restart
    restart: int = 0


def wcss(x, centroids, assignments) -> float:
    diff = np.asarray(x) - np.asarray(centroids)[assignments]
    return float(np.sum(diff * diff))


def _assign(x, c):
    d = ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d, axis=1), d


def _lloyd(x, k, rng, max_iters):
    n = x.shape[0]
    c = x[rng.choice(n, size=k, replace=False)].copy()
    labels, d = _assign(x, c)
    trace = [wcss(x, c, labels)]
    for _ in range(max_iters):
        new_c = np.empty_like(c)
        counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j]:
                new_c[j] = x[labels == j].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            own = d[np.arange(n), labels]
            taken = set()
            for j in empty:
                order = np.argsort(-own, kind="stable")
                far = next(i for i in order if i not in taken)
                taken.add(far)
                new_c[j] = x[far]
                own[far] = -1.0
        c = new_c
        new_labels, d = _assign(x, c)
        if np.array_equal(new_labels, labels) and not empty.size:
            break
        labels = new_labels
        trace.append(wcss(x, c, labels))
    # final centroids are the means of the final assignment
    return c, labels, trace


def kmeans(x, k: int, restarts: int = 20, max_iters: int = 300, seed: int = 0) -> KmeansResult:
    """Lloyd iterations from random distinct data points; best of ``restarts`` by wcss.

    Restart ``r`` draws from the sub-stream ``(seed, r)``, so the first ``m``
    restarts of a larger run are exactly the restarts of a run with ``m``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    best = None
    for r in range(restarts):
        c, labels, trace = _lloyd(x, k, make_rng(seed, r), max_iters)
        score = wcss(x, c, labels)
        if best is None or score < best.wcss:
            best = KmeansResult(c, labels.astype(np.int64), score, trace, r)
    return best


# ----------------------------------------------------------------------------
# external metrics


def _check(pred, truth):
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if pred.shape != truth.shape:
        raise ValueError(f"label vectors differ in length: {pred.size} vs {truth.size}")
    return pred, truth


def contingency(pred, truth):
    """Counts table (clusters x classes) plus the sorted label values of each side."""
    pred, truth = _check(pred, truth)
    pv, pi = np.unique(pred, return_inverse=True)
    tv, ti = np.unique(truth, return_inverse=True)
    table = np.zeros((pv.size, tv.size), dtype=np.int64)
    np.add.at(table, (pi.reshape(-1), ti.reshape(-1)), 1)
    return table, pv, tv


def _best_total(w):
    if w.size == 0:
        return 0
    r, c = linear_sum_assignment(w, maximize=True)
    return int(w[r, c].sum())


MAX_OPTIMAL_MAPS = 10_000


def optimal_matchings(table, limit=MAX_OPTIMAL_MAPS):
    """Every cluster -> class map (one class per cluster, -1 for none) with maximal matched count.

    Depth-first over clusters; a branch survives only if the assignment
    problem on what remains can still reach the optimum.  Stops after
    ``limit`` maps.
    """
    kp, kt = table.shape
    target = _best_total(table)
    found = []

    def rest_best(rows, cols):
        if not rows or not cols:
            return 0
        return _best_total(table[np.ix_(rows, cols)])

    def dfs(r, cols, fixed, current):
        if len(found) >= limit:
            return
        if r == kp:
            if fixed == target:
                found.append(np.array(current, dtype=np.int64))
            return
        later = list(range(r + 1, kp))
        for c in [*cols, -1]:
            gain = int(table[r, c]) if c >= 0 else 0
            left = [cc for cc in cols if cc != c]
            if fixed + gain + rest_best(later, left) == target:
                dfs(r + 1, left, fixed + gain, current + [c])

    dfs(0, list(range(kt)), 0, [])
    return found


def _macro_f1_for(table, mapping):
    kt = table.shape[1]
    total = Fraction(0)
    for y in range(kt):
        clusters = np.flatnonzero(mapping == y)
        tp = int(table[clusters, y].sum())
        if tp:
            total += Fraction(2 * tp, int(table[clusters].sum()) + int(table[:, y].sum()))
    return total / kt


def clustering_accuracy(pred, truth) -> float:
    table, _, _ = contingency(pred, truth)
    n = table.sum()
    if n == 0:
        return 1.0
    m = max(table.shape)
    w = np.zeros((m, m), dtype=np.int64)
    w[:table.shape[0], :table.shape[1]] = table
    return float(_best_total(w) / n)


NMI_DIGITS = 50


@lru_cache(maxsize=65536)
def _ln_ratio(num: int, den: int) -> Decimal:
    with localcontext() as ctx:
        ctx.prec = NMI_DIGITS
        return (Decimal(num) / Decimal(den)).ln()


def _entropy(counts, n):
    dn = Decimal(n)
    return -sum(Decimal(int(c)) / dn * _ln_ratio(int(c), n) for c in counts if c)


def nmi(pred, truth) -> float:
    """Mutual information over the arithmetic mean of the two entropies.

    Evaluated in 50-digit decimal arithmetic and rounded once, so the result
    is the correctly rounded value of the exact ratio.
    """
    table, _, _ = contingency(pred, truth)
    n = int(table.sum())
    if n == 0:
        return 1.0
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    if a.size == 1 and b.size == 1:
        return 1.0
    with localcontext() as ctx:
        ctx.prec = NMI_DIGITS
        dn = Decimal(n)
        mi = Decimal(0)
        for i, j in zip(*np.nonzero(table)):
            nij = Decimal(int(table[i, j]))
            mi += nij / dn * _ln_ratio(n * int(table[i, j]), int(a[i]) * int(b[j]))
        denom = (_entropy(a, n) + _entropy(b, n)) / 2
        if denom <= 0:
            return 0.0
        return max(0.0, min(1.0, float(mi / denom)))


def _comb2(x):
    x = np.asarray(x, dtype=object)
    return int(sum(int(v) * (int(v) - 1) // 2 for v in x.reshape(-1)))


def ari(pred, truth) -> float:
    """Pair-counting adjusted Rand index, evaluated as one exact rational."""
    table, _, _ = contingency(pred, truth)
    n = int(table.sum())
    index = _comb2(table)
    a = _comb2(table.sum(axis=1))
    b = _comb2(table.sum(axis=0))
    total = n * (n - 1) // 2
    num = 2 * (index * total - a * b)
    den = (a + b) * total - 2 * a * b
    if den == 0:
        return 1.0
    return float(Fraction(num, den))


def macro_f1(pred, truth) -> float:
    """Macro-averaged F1 over truth classes after mapping clusters to classes.

    The mapping is ACC-optimal; when several are, the one with the highest
    macro-F1 is used, which keeps the score independent of cluster ids.
    """
    table, _, tv = contingency(pred, truth)
    if tv.size == 0:
        return 1.0
    return float(max(_macro_f1_for(table, m) for m in optimal_matchings(table)))


@dataclass
class MetricsReport:
    acc: float
    nmi: float
    ari: float
    f1: float

    def as_dict(self):
        return {"acc": self.acc, "nmi": self.nmi, "ari": self.ari, "f1": self.f1}


def evaluate_labels(pred, truth) -> MetricsReport:
    return MetricsReport(clustering_accuracy(pred, truth), nmi(pred, truth), ari(pred, truth), macro_f1(pred, truth))
