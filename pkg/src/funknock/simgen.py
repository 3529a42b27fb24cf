"""Synthetic data generators for the simulation studies.

Curves are Gaussian processes built from a 25-term orthonormal Fourier
expansion whose coefficient vector follows a block covariance with
geometric cross-variable decay. On top of the curves sit three response
models: a scalar-on-function regression, a function-on-function
regression, and a structural-equation graphical model whose truth is the
moralized DAG. A corruption step produces noisy, irregularly sampled
observations for the partially observed pipeline.
"""

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .basis import BasisSystem, CurvePanel, make_basis
from ._streams import rng_stream

logger = logging.getLogger(__name__)

K_FOURIER = 25

# covariance eigenvalues are raised to this floor before sampling
PSD_FLOOR = 1e-8

ERROR_COMPONENTS_FFLR = 5


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one synthetic-data scenario.

    Attributes
    ----------
    model : {"sflr", "fflr", "fggm"}
    n, p : int
        Sample size and number of functional covariates (or graph nodes).
    rho : float
        Cross-variable decay of the coefficient covariance, in [0, 1).
    support_size : int
        Number of active variables for sflr/fflr (ignored by fggm).
    c_lo, c_hi : float
        Range of the uniform coefficient-scale draws.
    grid_size : int
        Number of equispaced observation points on [0, 1].
    noise_sd : float
        Measurement-noise standard deviation for partial observation.
    seed : int
    """

    model: str
    n: int
    p: int
    rho: float = 0.5
    support_size: int = 10
    c_lo: float = 4.0
    c_hi: float = 6.0
    grid_size: int = 101
    noise_sd: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.model not in ("sflr", "fflr", "fggm"):
            raise ValueError("model must be one of sflr, fflr, fggm")
        if self.n < 1 or self.p < 1:
            raise ValueError("n and p must be positive")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.c_lo > self.c_hi:
            raise ValueError("coefficient-scale range is empty")
        if self.grid_size < 2:
            raise ValueError("grid_size must be at least 2")
        if self.noise_sd < 0.0:
            raise ValueError("noise_sd must be nonnegative")


@dataclass(frozen=True, eq=False)
class SimData:
    """One generated dataset.

    truth holds active variable ids (ints) for regression models and
    unordered node pairs (j, k) with j < k for the graphical model; all
    ids are 0-based. panel stores the exact generator-basis coordinates,
    values the same curves on t_grid.
    """

    config: SimConfig
    basis: BasisSystem
    t_grid: np.ndarray
    panel: CurvePanel
    values: np.ndarray
    truth: frozenset
    response: np.ndarray = None
    response_values: np.ndarray = None
    response_coords: np.ndarray = None
    coef: object = None
    c_draws: object = None
    directed_edges: tuple = None


def _signed_decay():
    """Coefficient pattern (-1)^l / l^2 for l = 1..25."""
    l = np.arange(1, K_FOURIER + 1)
    return (-1.0) ** l / l.astype(float) ** 2


def _signed_cross_decay():
    """Matrix pattern (-1)^(l+m) / (l+m)^2 for l, m = 1..25."""
    l = np.arange(1, K_FOURIER + 1)
    signs = np.outer((-1.0) ** l, (-1.0) ** l)
    return signs / (l[:, None] + l[None, :]).astype(float) ** 2


def gen_covariance(p, rho):
    """Block covariance of the stacked Fourier coefficients, floored to PSD.

    Diagonal blocks are diag(1^-2, ..., 25^-2). The (j, k) block for
    j != k has entries 0.5 rho^|j-k| / (l m) off its diagonal and
    rho^|j-k| / l^2 on it. Eigenvalues below the floor are raised to it;
    the applied perturbation is logged.

    Returns
    -------
    ndarray of shape (25 p, 25 p), symmetric positive semidefinite.
    """
    if p < 1:
        raise ValueError("p must be positive")
    l_inv = 1.0 / np.arange(1, K_FOURIER + 1)
    diag_block = np.diag(l_inv ** 2)
    cross_block = 0.5 * np.outer(l_inv, l_inv) + 0.5 * diag_block
    idx = np.arange(p)
    decay = float(rho) ** np.abs(idx[:, None] - idx[None, :])
    np.fill_diagonal(decay, 0.0)
    lam = np.kron(decay, cross_block) + np.kron(np.eye(p), diag_block)
    lam = 0.5 * (lam + lam.T)
    vals, vecs = np.linalg.eigh(lam)
    if vals[0] < PSD_FLOOR:
        floored = np.maximum(vals, PSD_FLOOR)
        repaired = (vecs * floored) @ vecs.T
        shift = float(np.linalg.norm(repaired - lam))
        logger.info("covariance floored at %g; perturbation norm %.3e",
                    PSD_FLOOR, shift)
        lam = 0.5 * (repaired + repaired.T)
    return lam


def default_grid(size=101):
    return np.linspace(0.0, 1.0, size)


def fourier_basis():
    """The 25-term orthonormal Fourier system used by every generator."""
    return make_basis("fourier", k_n=K_FOURIER)


def gen_curves(n, p, lam, grid, seed):
    """Draw n x p Gaussian curves from coefficient covariance lam.

    Coefficient vectors theta_i ~ N(0, lam) are reshaped to (p, 25) and
    each curve is X_ij(u) = phi(u)' theta_ij in the Fourier system.

    Returns
    -------
    (CurvePanel, ndarray of shape (n, p, len(grid)))
    """
    grid = np.asarray(grid, dtype=float)
    if grid.min() < 0.0 or grid.max() > 1.0:
        raise ValueError("grid must lie within [0, 1]")
    lam = np.asarray(lam, dtype=float)
    dim = p * K_FOURIER
    if lam.shape != (dim, dim):
        raise ValueError("covariance must be 25p x 25p")
    vals, vecs = np.linalg.eigh(0.5 * (lam + lam.T))
    if vals[0] < -1e-8 * max(vals[-1], 1.0):
        raise ValueError("covariance is not positive semidefinite")
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    rng = rng_stream(seed, 0)
    theta = rng.standard_normal((n, dim)) @ root.T
    coords = theta.reshape(n, p, K_FOURIER)
    basis = fourier_basis()
    design = basis.design_matrix(grid)
    values = np.einsum("ijk,lk->ijl", coords, design)
    return CurvePanel.from_coords(coords, basis), values


def gen_sflr(config):
    """Scalar-on-function regression data.

    The first support_size variables are active with coefficient curves
    beta_j = sum_l (-1)^l c_j l^-2 phi_l, c_j ~ Unif[c_lo, c_hi] drawn per
    active variable; responses are sum_j <X_ij, beta_j> plus standard
    normal noise (inner products are exact in the Fourier coordinates).
    """
    if config.model != "sflr":
        raise ValueError("config.model must be 'sflr'")
    s = config.support_size
    if s > config.p:
        raise ValueError("support size exceeds p")
    lam = gen_covariance(config.p, config.rho)
    grid = default_grid(config.grid_size)
    panel, values = gen_curves(config.n, config.p, lam, grid, config.seed)
    rng = rng_stream(config.seed, 1)
    c_draws = rng.uniform(config.c_lo, config.c_hi, size=s)
    coef = np.zeros((config.p, K_FOURIER))
    coef[:s] = c_draws[:, None] * _signed_decay()[None, :]
    signal = np.einsum("ijk,jk->i", panel.coords, coef)
    eps = rng.standard_normal(config.n)
    return SimData(config=config, basis=panel.basis, t_grid=grid, panel=panel,
                   values=values, truth=frozenset(range(s)),
                   response=signal + eps, coef=coef, c_draws=c_draws)


def gen_fflr(config):
    """Function-on-function regression data.

    Active coefficient surfaces have Fourier coefficients
    (-1)^(l+m) c_j (l+m)^-2; the error curve uses 5 independent standard
    normal coefficients on the leading Fourier terms.
    """
    if config.model != "fflr":
        raise ValueError("config.model must be 'fflr'")
    s = config.support_size
    if s > config.p:
        raise ValueError("support size exceeds p")
    lam = gen_covariance(config.p, config.rho)
    grid = default_grid(config.grid_size)
    panel, values = gen_curves(config.n, config.p, lam, grid, config.seed)
    rng = rng_stream(config.seed, 1)
    c_draws = rng.uniform(config.c_lo, config.c_hi, size=s)
    pattern = _signed_cross_decay()
    coef = np.zeros((config.p, K_FOURIER, K_FOURIER))
    coef[:s] = c_draws[:, None, None] * pattern[None, :, :]
    # response coords: eta_im = sum_j sum_l theta_ijl B_jlm + error coords
    eta = np.einsum("ijl,jlm->im", panel.coords, coef)
    g = rng.standard_normal((config.n, ERROR_COMPONENTS_FFLR))
    eta[:, :ERROR_COMPONENTS_FFLR] += g
    design = panel.basis.design_matrix(grid)
    return SimData(config=config, basis=panel.basis, t_grid=grid, panel=panel,
                   values=values, truth=frozenset(range(s)),
                   response_coords=eta, response_values=eta @ design.T,
                   coef=coef, c_draws=c_draws)


def _draw_dag(p, rng):
    """One random parent per child plus floor(p/3) distinct extra edges."""
    edges = set()
    for child in range(1, p):
        parent = int(rng.integers(0, child))
        edges.add((parent, child))
    extra = p // 3
    pool = [e for e in itertools.combinations(range(p), 2) if e not in edges]
    if extra > len(pool):
        raise ValueError("edge budget exceeds available pairs")
    if extra > 0:
        chosen = rng.choice(len(pool), size=extra, replace=False)
        edges.update(pool[int(i)] for i in chosen)
    return tuple(sorted(edges))


def moralize(directed_edges, p):
    """Undirected version of a DAG: its edges plus married co-parents."""
    parents = {j: [] for j in range(p)}
    for k, j in directed_edges:
        parents[j].append(k)
    undirected = {(min(k, j), max(k, j)) for k, j in directed_edges}
    for j in range(p):
        for a, b in itertools.combinations(sorted(parents[j]), 2):
            undirected.add((a, b))
    return frozenset(undirected)


def gen_fggm(config):
    """Graphical-model data from sequential structural equations.

    Node 0 is pure noise; node j adds, per parent k, the integral of X_ik
    against a coefficient surface with Fourier coefficients
    (-1)^(l+m) c_kj (l+m)^-2 / s_j, where s_j counts the terms summed in
    node j's structural equation (its parents plus the noise term) and
    c_kj ~ Unif[c_lo, c_hi] per edge. Noise coefficients are N(0, diag
    block). Dividing by the term count keeps curve variances stable along
    ancestral chains; an undamped cascade would compound variance
    geometrically until every variable is dominated by one common factor.
    The reported truth is the moralized DAG.
    """
    if config.model != "fggm":
        raise ValueError("config.model must be 'fggm'")
    if config.p < 3:
        raise ValueError("graph generation needs p >= 3")
    rng = rng_stream(config.seed, 0)
    directed = _draw_dag(config.p, rng)
    n_terms = np.ones(config.p, dtype=int)
    for _, j in directed:
        n_terms[j] += 1
    pattern = _signed_cross_decay()
    c_draws = {e: float(rng.uniform(config.c_lo, config.c_hi))
               for e in directed}
    coef = {(k, j): c_draws[(k, j)] / n_terms[j] * pattern
            for k, j in directed}

    l_inv = 1.0 / np.arange(1, K_FOURIER + 1)
    noise = rng.standard_normal((config.n, config.p, K_FOURIER)) * l_inv
    coords = np.empty((config.n, config.p, K_FOURIER))
    by_child = {j: [] for j in range(config.p)}
    for k, j in directed:
        by_child[j].append(k)
    for j in range(config.p):
        coords[:, j] = noise[:, j]
        for k in by_child[j]:
            # <X_k, beta_kj(., v)> reduces to theta_k' B in coordinates
            coords[:, j] += coords[:, k] @ coef[(k, j)]

    grid = default_grid(config.grid_size)
    basis = fourier_basis()
    design = basis.design_matrix(grid)
    values = np.einsum("ijk,lk->ijl", coords, design)
    return SimData(config=config, basis=basis, t_grid=grid,
                   panel=CurvePanel.from_coords(coords, basis), values=values,
                   truth=moralize(directed, config.p), coef=coef,
                   c_draws=c_draws, directed_edges=directed)


def corrupt_partial(panel, L, noise_sd, seed):
    """Noisy irregular observations of each curve.

    Per curve, L observation times are uniform on [0, 1] and the curve
    value there is perturbed by N(0, noise_sd^2) measurement error.

    Returns
    -------
    (t_points, values) : ndarrays of shape (n, p, L), times sorted.
    """
    if L < 2:
        raise ValueError("need at least two observation points per curve")
    rng = rng_stream(seed, 2)
    n, p = panel.n, panel.p
    t_points = rng.uniform(0.0, 1.0, size=(n, p, L))
    t_points.sort(axis=2)
    design = panel.basis.design_matrix(t_points.reshape(-1))
    design = design.reshape(n, p, L, panel.basis.k_n)
    clean = np.einsum("ijlk,ijk->ijl", design, panel.coords)
    return t_points, clean + noise_sd * rng.standard_normal((n, p, L))


def write_truth_csv(path, truth):
    """Write active variables (variable_id) or edges (j, k) to CSV."""
    items = sorted(truth)
    with open(path, "w", encoding="utf-8") as fh:
        if items and isinstance(items[0], tuple):
            fh.write("j,k\n")
            for j, k in items:
                fh.write(f"{j},{k}\n")
        else:
            fh.write("variable_id\n")
            for j in items:
                fh.write(f"{j}\n")
