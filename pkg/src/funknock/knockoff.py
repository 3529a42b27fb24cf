"""Functional model-X knockoff construction.

Pipeline: normalized-score correlation matrix with shrinkage, one of three
semidefinite programs for the diagonal matching matrix, conditional
Gaussian sampling of knockoff scores, and curve reconstruction on the
estimated eigenfunctions.
"""

import json
import warnings
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from scipy.linalg import cho_factor, cho_solve

from funknock._streams import rng_stream
from funknock.basis import CurvePanel

GAMMA_MIN = 1e-3

# barrier schedule for the E2/E3 interior-point solver
BARRIER_MU_INIT = 1.0
BARRIER_MU_FINAL = 1e-6


class NumericalError(RuntimeError):
    """Raised when a numerical routine cannot produce a usable result."""


@dataclass(frozen=True, eq=False)
class ThetaModel:
    """Normalized-score correlation structure and the solved matching matrix.

    Attributes
    ----------
    theta_s : ndarray of shape (p*k_n, p*k_n)
        Sample correlation matrix of normalized scores. Rows of
        components outside the modeled set are identity rows.
    gamma : float
        Shrinkage intensity toward the identity.
    theta_c : ndarray
        Shrunk matrix (1 - gamma) * theta_s + gamma * I.
    variant : str or None
        "E1", "E2" or "E3" once solve_R has run.
    theta_r : ndarray or None
        Diagonal of the matching matrix, length p*k_n.
    slack_min_eig : float or None
        Smallest eigenvalue of 2*theta_c - diag(theta_r).
    p, k_n : int
        Block structure of the score space.
    modeled : ndarray of bool or None
        Flattened mask of the components the correlation model covers
        (retained eigenvalue and within the variable's truncation).
        None means every component.
    """

    theta_s: np.ndarray
    gamma: float
    theta_c: np.ndarray
    p: int
    k_n: int
    variant: str = None
    theta_r: np.ndarray = None
    slack_min_eig: float = None
    modeled: np.ndarray = None


@dataclass(frozen=True, eq=False)
class KnockoffPanel:
    """Sampled knockoff scores and the reconstructed knockoff curves.

    scores has shape (n, p, k_n); curves is a CurvePanel whose coordinate
    vectors lie in the span of the estimated eigenfunctions.
    """

    scores: np.ndarray
    curves: CurvePanel
    rng_seed: int


def _modeled_mask(fpca):
    """Components the correlation model covers, flattened to p*k_n.

    A component is modeled when its eigenvalue survives the null cut and
    its index lies below the variable's truncation; everything else is
    carried through the pipeline untouched.
    """
    within = np.arange(fpca.k_n)[None, :] < fpca.truncation[:, None]
    return (fpca.retained & within).reshape(-1)


def _normalized_scores(fpca, modeled=None):
    """Flatten scores to (n, p*k_n) and divide by eigenvalue square roots.

    Components outside the modeled mask get zero columns; their
    correlation diagonal is fixed to 1 by the caller.
    """
    n = fpca.n
    w = fpca.eigenvalues.reshape(-1)
    if modeled is None:
        modeled = _modeled_mask(fpca)
    scores = fpca.scores.reshape(n, -1)
    sqrt_w = np.sqrt(np.where(modeled, w, 1.0))
    z = np.where(modeled[None, :], scores / sqrt_w[None, :], 0.0)
    return z, np.sqrt(np.clip(w, 0.0, None)), modeled


def estimate_theta_c(fpca, gamma=None):
    """Shrunk sample correlation matrix of the normalized FPC scores.

    Parameters
    ----------
    fpca : FpcaModel
    gamma : float, optional
        Shrinkage intensity in [0, 1]. When omitted it is estimated by
        the variance-over-dispersion rule below and clamped to
        [GAMMA_MIN, 1].

    Returns
    -------
    ThetaModel with variant unset.

    Notes
    -----
    The sample correlation uses centered scores with divisor n; score
    variances equal the eigenvalues exactly, so modeled diagonal
    entries are 1 up to floating error. The automatic intensity is

        gamma = sum_offdiag Var(theta_ab) / sum_offdiag theta_ab^2,

    with Var(theta_ab) = n (n-1)^{-3} sum_i (z_ia z_ib - theta_ab)^2,
    the usual unbiased-variance shrinkage rule for correlation targets.

    The model covers only components below each variable's truncation;
    the remaining coordinates appear as identity rows, are skipped by
    the intensity sums, and later keep their original scores verbatim.
    Estimating the correlation on every component would put far more
    entries than samples into the intensity rule, drive gamma toward 1,
    and hand downstream filters knockoffs that no longer mimic the
    cross-correlations of the scores actually used in regressions.
    """
    z, _, modeled = _normalized_scores(fpca)
    n, m = z.shape
    if not np.all(fpca.retained):
        warnings.warn("components with near-zero eigenvalue dropped from "
                      "score normalization", RuntimeWarning, stacklevel=2)
    theta_raw = z.T @ z / n
    theta_raw = 0.5 * (theta_raw + theta_raw.T)

    if gamma is None:
        if n < 2:
            gamma = 1.0
        else:
            # aggregate sums avoid forming the n x m x m product tensor
            row_sq = np.sum(z * z, axis=1)
            total_sq = np.sum(row_sq ** 2)
            diag_sq = np.sum(z ** 4)
            fro_all = np.sum(theta_raw ** 2)
            fro_diag = np.sum(np.diag(theta_raw) ** 2)
            var_sum = n / (n - 1.0) ** 3 * (
                (total_sq - n * fro_all) - (diag_sq - n * fro_diag))
            denom = fro_all - fro_diag
            gamma = 1.0 if denom <= 0.0 else var_sum / denom
        gamma = float(np.clip(gamma, GAMMA_MIN, 1.0))
    else:
        gamma = float(gamma)
        if not 0.0 <= gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")

    theta_s = theta_raw.copy()
    idx = np.where(~modeled)[0]
    theta_s[idx, idx] = 1.0
    theta_c = (1.0 - gamma) * theta_s + gamma * np.eye(m)
    return ThetaModel(theta_s=theta_s, gamma=gamma, theta_c=theta_c,
                      p=fpca.p, k_n=fpca.k_n, modeled=modeled)


def _expand(x, group_size):
    return np.repeat(x, group_size) if group_size > 1 else x


def _barrier_solve(theta_c, group_size):
    """Maximize sum(x) over the matching-matrix feasible set by a primal
    log-barrier method.

    The iterate x has one entry per group of group_size consecutive
    coordinates; the matching diagonal is x repeated groupwise. The
    barrier objective is

        sum(x) + mu * [logdet(2C - diag(r)) + sum(log x + log(1 - x))]

    maximized by damped Newton steps; mu is halved from 1 until 1e-6.
    """
    dim = theta_c.shape[0]
    n_groups = dim // group_size
    two_c = 2.0 * theta_c

    eigs = np.linalg.eigvalsh(theta_c)
    lam_min = eigs[0]
    if lam_min <= 0.0:
        raise NumericalError(
            "theta_c is not positive definite; raise the shrinkage gamma")

    x = np.full(n_groups, min(lam_min, 0.9))

    def chol_slack(xv):
        a = two_c - np.diag(_expand(xv, group_size))
        try:
            return cho_factor(a), a
        except np.linalg.LinAlgError:
            return None, a

    def objective(xv, mu, factor):
        logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
        return np.sum(xv) + mu * (logdet + np.sum(np.log(xv)) + np.sum(np.log1p(-xv)))

    mu = BARRIER_MU_INIT
    factor, _ = chol_slack(x)
    if factor is None:
        # fall back to a strictly interior point closer to zero
        x = np.full(n_groups, 0.5 * min(lam_min, 1.0))
        factor, _ = chol_slack(x)
        if factor is None:
            raise NumericalError("failed to find a strictly feasible start")

    identity = np.eye(dim)
    while mu >= BARRIER_MU_FINAL:
        for _ in range(60):
            a_inv = cho_solve(factor, identity)
            diag_inv = np.diag(a_inv)
            if group_size > 1:
                grad_logdet = -diag_inv.reshape(n_groups, group_size).sum(axis=1)
                sq = a_inv ** 2
                hess_logdet = -sq.reshape(n_groups, group_size, n_groups, group_size
                                          ).sum(axis=(1, 3))
            else:
                grad_logdet = -diag_inv
                hess_logdet = -(a_inv ** 2)
            grad = 1.0 + mu * (grad_logdet + 1.0 / x - 1.0 / (1.0 - x))
            hess = mu * (hess_logdet - np.diag(1.0 / x ** 2 + 1.0 / (1.0 - x) ** 2))
            neg_hess = cho_factor(-hess)
            step = cho_solve(neg_hess, grad)
            decrement = float(grad @ step)
            if decrement <= 1e-11:
                break
            t = 1.0
            f0 = objective(x, mu, factor)
            accepted = False
            while t > 1e-12:
                x_new = x + t * step
                if np.all(x_new > 0.0) and np.all(x_new < 1.0):
                    new_factor, _ = chol_slack(x_new)
                    if new_factor is not None and \
                            objective(x_new, mu, new_factor) >= f0 + 0.25 * t * decrement:
                        x, factor = x_new, new_factor
                        accepted = True
                        break
                t *= 0.5
            if not accepted:
                break
        mu *= 0.5
    return np.clip(_expand(x, group_size), 0.0, 1.0)


def solve_R(theta, variant):
    """Solve for the diagonal matching matrix under one of three designs.

    Parameters
    ----------
    theta : ThetaModel
        Output of estimate_theta_c.
    variant : {"E1", "E2", "E3"}
        E1 uses a single value r for every coordinate, solved in closed
        form as min(1, 2 * lambda_min(theta_c)). E2 uses one value per
        variable, E3 one per score component; both maximize the sum of
        the values subject to 2*theta_c - diag(r) >= 0 and entries in
        [0, 1], via the log-barrier method.

    Returns
    -------
    ThetaModel with theta_r and slack_min_eig populated.
    """
    c = theta.theta_c
    dim = c.shape[0]
    eigs = np.linalg.eigvalsh(c)
    if eigs[0] <= 0.0:
        raise NumericalError(
            "theta_c is not positive definite; raise the shrinkage gamma")
    if variant == "E1":
        r = np.full(dim, min(1.0, 2.0 * eigs[0]))
    elif variant == "E2":
        r = _barrier_solve(c, theta.k_n)
    elif variant == "E3":
        r = _barrier_solve(c, 1)
    else:
        raise ValueError(f"unknown variant {variant!r}")

    slack = float(np.linalg.eigvalsh(2.0 * c - np.diag(r)).min())
    if slack < -1e-8:
        # pull the diagonal inward just enough to restore feasibility
        r = np.clip(r + slack, 0.0, 1.0)
        slack = float(np.linalg.eigvalsh(2.0 * c - np.diag(r)).min())
    return replace(theta, variant=variant, theta_r=r, slack_min_eig=slack)


def sample_knockoffs(fpca, theta, seed):
    """Draw knockoff scores from the conditional Gaussian and rebuild curves.

    Given the normalized original scores s_i, knockoff normalized scores
    are sampled from N(mu_i, Theta_ko) with

        mu_i     = (I - R C^{-1}) s_i,
        Theta_ko = 2R - R C^{-1} R,

    where C is the shrunk correlation matrix and R = diag(theta_r). The
    draw is de-normalized by the eigenvalue square roots and curves are
    reconstructed on all k_n estimated eigenfunctions. Components the
    correlation model does not cover keep their original scores, so the
    knockoff curve matches the original beyond the truncation.

    Parameters
    ----------
    fpca : FpcaModel
    theta : ThetaModel
        Must have theta_r solved and feasible.
    seed : int
        Stream key; identical seeds reproduce the panel bit for bit.

    Returns
    -------
    KnockoffPanel
    """
    if theta.theta_r is None:
        raise ValueError("theta_r is unset; run solve_R first")
    z, sqrt_w, modeled = _normalized_scores(fpca, theta.modeled)
    n, m = z.shape
    r = theta.theta_r
    factor = cho_factor(theta.theta_c)
    c_inv = cho_solve(factor, np.eye(m))

    mu = z - (cho_solve(factor, z.T).T * r[None, :])
    cov = 2.0 * np.diag(r) - c_inv * np.outer(r, r)
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < -1e-8:
        warnings.warn("conditional covariance indefinite beyond tolerance; "
                      "negative eigenvalues clipped", RuntimeWarning, stacklevel=2)
    root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T

    rng = rng_stream(seed)
    draws = rng.standard_normal((n, m))
    z_knock = mu + draws @ root
    xi = (z_knock * sqrt_w[None, :]).reshape(n, fpca.p, fpca.k_n)
    keep = ~modeled.reshape(fpca.p, fpca.k_n)
    xi[:, keep] = fpca.scores[:, keep]

    coords = np.einsum("jkl,ijl->ijk", fpca.phi, xi)
    curves = CurvePanel.from_coords(coords, fpca.basis)
    return KnockoffPanel(scores=xi, curves=curves, rng_seed=int(seed))


def write_theta_csv(theta, path, meta_path=None):
    """Export the shrunk correlation matrix plus a metadata record."""
    pd.DataFrame(theta.theta_c).to_csv(path, index=False, header=False)
    meta = {
        "variant": theta.variant,
        "gamma": theta.gamma,
        "slack_min_eig": theta.slack_min_eig,
        "p": theta.p,
        "k_n": theta.k_n,
    }
    if meta_path is None:
        meta_path = str(path) + ".meta.json"
    with open(meta_path, "w") as handle:
        json.dump(meta, handle, indent=2)
