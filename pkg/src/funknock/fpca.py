"""Empirical Karhunen-Loeve expansion per functional variable.

The expansion works entirely in coordinate space: for variable j with
centered coordinates [X_ij], the spectral decomposition of

    M_j = n^{-1} G^{1/2} (sum_i [X_ij][X_ij]') G^{1/2}

yields eigenpairs (omega_jl, v_jl); eigenfunction coordinates are
G^{+1/2} v_jl and scores are [X_ij]' G^{1/2} v_jl.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

# components with eigenvalue below this fraction of the leading one are
# excluded from score normalization downstream
NULL_COMPONENT_CUT = 1e-12


@dataclass(frozen=True, eq=False)
class FpcaModel:
    """Per-variable eigenstructure, scores and truncation levels.

    Attributes
    ----------
    eigenvalues : ndarray of shape (p, k_n)
        Nonincreasing per variable, clipped at zero.
    eigenvectors : ndarray of shape (p, k_n, k_n)
        Column l of eigenvectors[j] is v_jl, orthonormal under identity.
    phi : ndarray of shape (p, k_n, k_n)
        Column l of phi[j] holds the coordinates of the l-th eigenfunction.
    scores : ndarray of shape (n, p, k_n)
        Score matrices; column means are zero by construction.
    truncation : ndarray of shape (p,)
        Retained dimension d_j per variable.
    means : ndarray of shape (p, k_n)
        Per-variable mean coordinate vectors.
    retained : ndarray of bool, shape (p, k_n)
        Components whose eigenvalue exceeds the null cut; only these are
        normalized when forming score correlations.
    basis : BasisSystem
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    phi: np.ndarray
    scores: np.ndarray
    truncation: np.ndarray
    means: np.ndarray
    retained: np.ndarray
    basis: object

    @property
    def n(self):
        return self.scores.shape[0]

    @property
    def p(self):
        return self.scores.shape[1]

    @property
    def k_n(self):
        return self.scores.shape[2]


def _fix_signs(vecs):
    # make the largest-magnitude entry of each eigenvector positive
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs[None, :]


def fit_fpca(panel, fraction=0.9):
    """Fit the empirical Karhunen-Loeve expansion to every variable.

    Parameters
    ----------
    panel : CurvePanel
        n x p coordinate panel with n >= 2.
    fraction : float
        Cumulative eigenvalue fraction for the truncation rule.

    Returns
    -------
    FpcaModel
    """
    if panel.n < 2:
        raise ValueError("need at least two observations")
    basis = panel.basis
    k = basis.k_n
    g_half = basis.gram_sqrt
    g_pinv_half = basis.gram_pinv_sqrt
    centered = panel.centered()
    n, p = panel.n, panel.p

    eigenvalues = np.empty((p, k))
    eigenvectors = np.empty((p, k, k))
    phi = np.empty((p, k, k))
    scores = np.empty((n, p, k))
    truncation = np.empty(p, dtype=int)

    for j in range(p):
        coords = centered[:, j, :]
        cov = coords.T @ coords / n
        m = g_half @ cov @ g_half
        vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
        order = np.argsort(vals)[::-1]
        vals = np.clip(vals[order], 0.0, None)
        vecs = _fix_signs(vecs[:, order])
        if vals[0] <= 0.0:
            warnings.warn(f"variable {j} is degenerate: all eigenvalues zero",
                          RuntimeWarning, stacklevel=2)
        eigenvalues[j] = vals
        eigenvectors[j] = vecs
        phi[j] = g_pinv_half @ vecs
        scores[:, j, :] = coords @ g_half @ vecs
        truncation[j] = choose_truncation(vals, fraction)

    leading = np.maximum(eigenvalues[:, :1], np.finfo(float).tiny)
    retained = eigenvalues > NULL_COMPONENT_CUT * leading
    return FpcaModel(eigenvalues=eigenvalues, eigenvectors=eigenvectors, phi=phi,
                     scores=scores, truncation=truncation, means=panel.means.copy(),
                     retained=retained, basis=basis)


def choose_truncation(eigenvalues, fraction):
    """Smallest d whose leading eigenvalue share reaches the fraction.

    Parameters
    ----------
    eigenvalues : array-like, nonincreasing and nonnegative
    fraction : float in (0, 1]

    Returns
    -------
    int, at least 1
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    vals = np.asarray(eigenvalues, dtype=float)
    total = vals.sum()
    if total <= 0.0:
        warnings.warn("all eigenvalues zero; truncation set to 1",
                      RuntimeWarning, stacklevel=2)
        return 1
    share = np.cumsum(vals) / total
    return int(min(np.searchsorted(share, fraction - 1e-12) + 1, vals.size))


def transform_scores(model, coords, j, d=None):
    """Scores of a new curve on the first d eigenfunctions of variable j.

    Computes <x - mu_j, phi_jl> for l = 1..d through the coordinate
    inner product [x - mu_j]' G [phi_jl].
    """
    if d is None:
        d = int(model.truncation[j])
    if d > model.k_n:
        raise ValueError("d exceeds the basis size")
    centered = np.asarray(coords, dtype=float) - model.means[j]
    return centered @ model.basis.gram @ model.phi[j][:, :d]


def write_fpca_csv(model, path):
    """Export per-variable eigenvalues as variable_id, component, eigenvalue."""
    p, k = model.eigenvalues.shape
    frame = pd.DataFrame({
        "variable_id": np.repeat(np.arange(p), k),
        "component": np.tile(np.arange(1, k + 1), p),
        "eigenvalue": model.eigenvalues.reshape(-1),
    })
    frame.to_csv(path, index=False)
