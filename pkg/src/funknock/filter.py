"""Knockoff statistics, data-dependent thresholds, and selection sets.

Covers the scalar/function regression filter (threshold on a W vector),
the graphical-model variant (per-node thresholds on a W matrix solved
globally under an AND or OR rule), and FDP/power evaluation.
"""

import itertools
from dataclasses import dataclass

import numpy as np
import pandas as pd

# default constants of the global graphical-model constraint
FGGM_A = 1.0
FGGM_CA = 1.93

# exhaustive threshold search is exact and cheap up to this node count
FGGM_EXHAUSTIVE_MAX_P = 4


@dataclass(frozen=True, eq=False)
class KnockoffStats:
    """Knockoff statistics W.

    w is a length-p vector for regression selection, or a p x p matrix
    with zero diagonal for graphical-model selection.
    """

    w: np.ndarray


def stats_from_fit(fit, p):
    """W_j = ||B_j|| - ||B_{j+p}|| from a 2p-group augmented fit."""
    norms = fit.group_norms()
    if norms.size != 2 * p:
        raise ValueError("fit does not have 2p groups")
    return norms[:p] - norms[p:]


@dataclass(frozen=True, eq=False)
class SelectionResult:
    """Threshold(s), the selected set, and metrics against a known truth."""

    threshold: object
    delta: int
    q: float
    selected: frozenset
    metrics: dict = None
    rule: str = None
    feasible: bool = True


def knockoff_threshold(w, q, delta):
    """Data-dependent threshold of the knockoff (+) filter.

    Parameters
    ----------
    w : array-like
        Knockoff statistics.
    q : float
        Target FDR level in [0, 1].
    delta : {0, 1}
        0 for the knockoff filter, 1 for the more conservative knockoff+.

    Returns
    -------
    float
        min over t in {|W_j| > 0} with (delta + #{W_j <= -t}) / #{W_j >= t}
        at most q; +inf when no candidate qualifies. Candidates with an
        empty numerator-denominator ratio (denominator zero) are skipped.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    if delta not in (0, 1):
        raise ValueError("delta must be 0 or 1")
    w = np.asarray(w, dtype=float)
    candidates = np.unique(np.abs(w[w != 0.0]))
    for t in candidates:
        den = int(np.sum(w >= t))
        if den == 0:
            continue
        num = delta + int(np.sum(w <= -t))
        if num / den <= q:
            return float(t)
    return np.inf


def select(w, threshold):
    """Indices with W_j at or above the threshold; empty when infinite."""
    w = np.asarray(w, dtype=float)
    return np.flatnonzero(w >= threshold)


def _selection_matrix(w, thresholds):
    """Nodewise selection indicators and negative-selection counts."""
    p = w.shape[0]
    off = ~np.eye(p, dtype=bool)
    t = np.asarray(thresholds, dtype=float)[:, None]
    pos = off & (w >= t)
    neg_counts = np.sum(off & (w <= -t), axis=1)
    return pos, neg_counts


def _adjacency(pos, rule):
    return (pos & pos.T) if rule == "and" else (pos | pos.T)


def fggm_edges(thresholds, w, rule):
    """Edge set implied by per-node selections under the AND or OR rule."""
    w = np.asarray(w, dtype=float)
    pos, _ = _selection_matrix(w, thresholds)
    jj, kk = np.nonzero(np.triu(_adjacency(pos, rule), 1))
    return {(int(j), int(k)) for j, k in zip(jj, kk)}


def _fggm_violations(w, thresholds, q, rule, delta, a, c_a):
    p = w.shape[0]
    bound = 2.0 * q / (c_a * p) if rule == "and" else q / (c_a * p)
    pos, neg = _selection_matrix(w, thresholds)
    n_edges = int(np.triu(_adjacency(pos, rule), 1).sum())
    ratios = (a * delta + neg) / max(n_edges, 1)
    return ratios - bound, n_edges


def fggm_global_thresholds(w, q, rule, delta, a=FGGM_A, c_a=FGGM_CA, method="auto"):
    """Per-node thresholds maximizing the edge count under the global
    false-discovery constraint.

    Parameters
    ----------
    w : ndarray of shape (p, p)
        Knockoff statistic matrix with zero diagonal.
    q : float
        Target level.
    rule : {"and", "or"}
    delta : {0, 1}
    a, c_a : float
        Constraint constants.
    method : {"auto", "exhaustive", "relax"}
        "auto" enumerates all candidate vectors exactly for p <= 4 and
        otherwise runs the iterative relaxation: start every node at its
        smallest candidate and repeatedly raise the most violating
        node's threshold to its next candidate until the constraint
        holds everywhere or every threshold is infinite.

    Returns
    -------
    ndarray of shape (p,)
        Thresholds drawn from the nonzero |W| values of each row plus
        +inf; the all-infinite vector signals an empty selection.
    """
    w = np.asarray(w, dtype=float)
    p = w.shape[0]
    if w.shape != (p, p):
        raise ValueError("w must be square")
    if np.any(np.diag(w) != 0.0):
        raise ValueError("w must have a zero diagonal")
    if a <= 0 or c_a <= 0:
        raise ValueError("constants a and c_a must be positive")
    if rule not in ("and", "or"):
        raise ValueError("rule must be 'and' or 'or'")

    candidates = []
    for j in range(p):
        vals = np.unique(np.abs(w[j][w[j] != 0.0]))
        candidates.append(np.append(vals, np.inf))

    if method == "auto":
        method = "exhaustive" if p <= FGGM_EXHAUSTIVE_MAX_P else "relax"

    if method == "exhaustive":
        best = None
        best_edges = -1
        for combo in itertools.product(*candidates):
            t = np.array(combo)
            viol, n_edges = _fggm_violations(w, t, q, rule, delta, a, c_a)
            if np.max(viol) <= 1e-12 and n_edges > best_edges:
                best, best_edges = t, n_edges
        return best if best is not None else np.full(p, np.inf)

    if method != "relax":
        raise ValueError(f"unknown method {method!r}")

    position = np.zeros(p, dtype=int)
    t = np.array([candidates[j][0] for j in range(p)])
    while True:
        viol, _ = _fggm_violations(w, t, q, rule, delta, a, c_a)
        worst = int(np.argmax(viol))
        if viol[worst] <= 1e-12:
            return t
        if np.isinf(t[worst]):
            # the worst node cannot back off further; advance the worst
            # finite node instead, or give up when none remains
            finite = np.flatnonzero(~np.isinf(t))
            if finite.size == 0:
                return np.full(p, np.inf)
            worst = int(finite[np.argmax(viol[finite])])
        position[worst] += 1
        t[worst] = candidates[worst][min(position[worst], len(candidates[worst]) - 1)]


def evaluate_metrics(selected, truth):
    """Empirical FDP and power of a selection against a known truth.

    Works on index sets and on edge sets alike; inputs are converted to
    sets of hashable elements.
    """
    sel = {tuple(e) if isinstance(e, (list, np.ndarray)) else e for e in selected}
    tru = {tuple(e) if isinstance(e, (list, np.ndarray)) else e for e in truth}
    sel = {(int(x[0]), int(x[1])) if isinstance(x, tuple) else int(x) for x in sel}
    tru = {(int(x[0]), int(x[1])) if isinstance(x, tuple) else int(x) for x in tru}
    fdp = len(sel - tru) / max(len(sel), 1)
    power = len(sel & tru) / max(len(tru), 1)
    return fdp, power


def write_selection_csv(result, w, path):
    """Export index_or_edge, w_value, selected_flag rows plus a metrics line."""
    w = np.asarray(w, dtype=float)
    rows = []
    if w.ndim == 1:
        for j in range(w.size):
            rows.append({"index_or_edge": str(j), "w_value": w[j],
                         "selected_flag": int(j in result.selected)})
    else:
        p = w.shape[0]
        for j in range(p):
            for k in range(j + 1, p):
                rows.append({"index_or_edge": f"{j}-{k}",
                             "w_value": max(w[j, k], w[k, j]),
                             "selected_flag": int((j, k) in result.selected)})
    pd.DataFrame(rows).to_csv(path, index=False)
    metrics = result.metrics or {}
    meta = pd.DataFrame([{
        "q": result.q, "delta": result.delta, "rule": result.rule,
        "fdp": metrics.get("fdp"), "power": metrics.get("power"),
        "threshold": result.threshold if np.ndim(result.threshold) == 0 else "per-node",
    }])
    meta.to_csv(str(path) + ".metrics.csv", index=False)
