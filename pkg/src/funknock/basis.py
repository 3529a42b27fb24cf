"""Finite basis systems on a compact interval and the coordinate mapping.

Curves are represented by coordinate vectors relative to a fixed function
system (cubic B-splines or an orthonormal Fourier system). All inner
products in coordinate space are mediated by the Gram matrix G of the
system: <x, y> = [x]' G [y].
"""

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.interpolate import BSpline
from scipy.linalg import cho_factor, cho_solve

# relative eigenvalue cut treated as null space when forming G^{+1/2}
PINV_EIGENVALUE_CUT = 1e-10

# ridge scale applied to rank-deficient projection designs
RIDGE_SCALE = 1e-8


@dataclass(frozen=True, eq=False)
class BasisSystem:
    """A finite function system with its Gram matrix caches.

    Immutable after construction; safe for shared concurrent reads.

    Attributes
    ----------
    kind : str
        "bspline" or "fourier".
    k_n : int
        Number of basis functions.
    domain : tuple of float
        Closed interval (a, b).
    knots : ndarray
        Sorted interior knots (empty for Fourier).
    degree : int
        Spline degree (0 for Fourier).
    gram : ndarray of shape (k_n, k_n)
        Gram matrix G of pairwise L2 inner products.
    gram_sqrt : ndarray
        Symmetric square root G^{1/2}.
    gram_pinv_sqrt : ndarray
        Square root of the Moore-Penrose inverse, G^{+1/2}.
    """

    kind: str
    k_n: int
    domain: tuple
    knots: np.ndarray
    degree: int
    gram: np.ndarray
    gram_sqrt: np.ndarray
    gram_pinv_sqrt: np.ndarray

    def design_matrix(self, t):
        """Evaluate all basis functions at points t, shape (len(t), k_n)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        a, b = self.domain
        if np.any(t < a - 1e-12) or np.any(t > b + 1e-12):
            raise ValueError("evaluation points outside the basis domain")
        t = np.clip(t, a, b)
        if self.kind == "bspline":
            full_knots = _full_knot_vector(self.knots, self.degree, self.domain)
            # the right endpoint belongs to the last interval by convention
            t_eval = np.where(t >= b, np.nextafter(b, a), t)
            mat = BSpline.design_matrix(t_eval, full_knots, self.degree).toarray()
            return mat
        return _fourier_design(t, self.k_n, self.domain)


def _full_knot_vector(interior, degree, domain):
    a, b = domain
    return np.r_[np.full(degree + 1, a), interior, np.full(degree + 1, b)]


def _fourier_design(t, k_n, domain):
    """Orthonormal Fourier system: constant, then cos/sin pairs."""
    a, b = domain
    length = b - a
    u = (t - a) / length
    mat = np.empty((t.size, k_n))
    mat[:, 0] = 1.0 / np.sqrt(length)
    amp = np.sqrt(2.0 / length)
    for col in range(1, k_n):
        m = (col + 1) // 2
        if col % 2 == 1:
            mat[:, col] = amp * np.cos(2.0 * np.pi * m * u)
        else:
            mat[:, col] = amp * np.sin(2.0 * np.pi * m * u)
    return mat


def _simpson_weights(num_points, a, b):
    # composite Simpson needs an odd number of points
    if num_points % 2 == 0:
        num_points += 1
    t = np.linspace(a, b, num_points)
    h = (b - a) / (num_points - 1)
    w = np.ones(num_points)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return t, w * (h / 3.0)


def make_basis(kind, k_interior=3, degree=3, domain=(0.0, 1.0), quadrature_points=201,
               k_n=None):
    """Construct a BasisSystem with its Gram matrix caches.

    Parameters
    ----------
    kind : {"bspline", "fourier"}
    k_interior : int
        Number of interior knots (bspline only), equispaced in the domain.
    degree : int
        Spline degree (bspline only); cubic splines use 3.
    domain : tuple of float
        Interval (a, b) with a < b.
    quadrature_points : int
        Points for the composite Simpson rule used on the Gram integrals;
        must be at least twice the basis size.
    k_n : int, optional
        Basis size for the Fourier system (ignored for bspline, where
        k_n = k_interior + degree + 1).

    Returns
    -------
    BasisSystem
    """
    a, b = float(domain[0]), float(domain[1])
    if not a < b:
        raise ValueError("invalid domain: need a < b")
    if kind == "bspline":
        if k_interior < 0 or degree < 1:
            raise ValueError("need k_interior >= 0 and degree >= 1")
        size = k_interior + degree + 1
        knots = a + (b - a) * np.arange(1, k_interior + 1) / (k_interior + 1)
    elif kind == "fourier":
        if k_n is None or k_n < 1:
            raise ValueError("fourier basis needs k_n >= 1")
        size = int(k_n)
        knots = np.empty(0)
        degree = 0
    else:
        raise ValueError(f"unknown basis kind {kind!r}")
    if quadrature_points < 2 * size:
        raise ValueError("quadrature grid too coarse for the basis size")

    if kind == "fourier":
        gram = np.eye(size)
    else:
        tq, wq = _simpson_weights(quadrature_points, a, b)
        full_knots = _full_knot_vector(knots, degree, (a, b))
        t_eval = np.where(tq >= b, np.nextafter(b, a), tq)
        design = BSpline.design_matrix(t_eval, full_knots, degree).toarray()
        gram = (design * wq[:, None]).T @ design
        if np.max(np.abs(gram - gram.T)) > 1e-10:
            raise ValueError("quadrature too coarse: Gram matrix asymmetric")
        gram = 0.5 * (gram + gram.T)

    eigval, eigvec = np.linalg.eigh(gram)
    if eigval.min() < -1e-10:
        raise ValueError("Gram matrix has a negative eigenvalue beyond tolerance")
    eigval = np.clip(eigval, 0.0, None)
    gram_sqrt = (eigvec * np.sqrt(eigval)) @ eigvec.T
    cut = PINV_EIGENVALUE_CUT * max(eigval.max(), np.finfo(float).tiny)
    inv_root = np.where(eigval > cut, 1.0 / np.sqrt(np.where(eigval > cut, eigval, 1.0)), 0.0)
    gram_pinv_sqrt = (eigvec * inv_root) @ eigvec.T

    return BasisSystem(kind=kind, k_n=size, domain=(a, b), knots=knots, degree=degree,
                       gram=gram, gram_sqrt=0.5 * (gram_sqrt + gram_sqrt.T),
                       gram_pinv_sqrt=0.5 * (gram_pinv_sqrt + gram_pinv_sqrt.T))


def project_curve(samples, basis):
    """Least-squares coordinates of a sampled curve relative to a basis.

    Parameters
    ----------
    samples : array-like of shape (L, 2)
        Pairs (t, value) with t inside the basis domain and L >= k_n.
    basis : BasisSystem

    Returns
    -------
    ndarray of shape (k_n,)
        argmin_c sum_l (w_l - sum_m c_m b_m(t_l))^2, solved by normal
        equations with a ridge fallback on rank-deficient designs.
    """
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("samples must be an (L, 2) array of (t, value) pairs")
    t, w = arr[:, 0], arr[:, 1]
    if t.size < basis.k_n:
        raise ValueError("need at least k_n sample points to project")
    design = basis.design_matrix(t)
    gram = design.T @ design
    rhs = design.T @ w
    if np.unique(t).size < basis.k_n:
        return _ridge_solve(gram, rhs, warn=True)
    try:
        return cho_solve(cho_factor(gram), rhs)
    except np.linalg.LinAlgError:
        return _ridge_solve(gram, rhs, warn=True)


def _ridge_solve(gram, rhs, warn=False):
    if warn:
        warnings.warn("rank-deficient projection design; ridge regularization applied",
                      RuntimeWarning, stacklevel=3)
    lam = RIDGE_SCALE * np.trace(gram)
    return np.linalg.solve(gram + lam * np.eye(gram.shape[0]), rhs)


def project_panel(t_grid, values, basis):
    """Project many curves sharing one sampling grid.

    Parameters
    ----------
    t_grid : ndarray of shape (L,)
    values : ndarray of shape (..., L)
    basis : BasisSystem

    Returns
    -------
    ndarray of shape (..., k_n)
    """
    t_grid = np.asarray(t_grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if t_grid.size < basis.k_n:
        raise ValueError("need at least k_n sample points to project")
    design = basis.design_matrix(t_grid)
    gram = design.T @ design
    rhs = values @ design
    if np.unique(t_grid).size < basis.k_n:
        lam = RIDGE_SCALE * np.trace(gram)
        gram = gram + lam * np.eye(basis.k_n)
        warnings.warn("rank-deficient projection design; ridge regularization applied",
                      RuntimeWarning, stacklevel=2)
    lead = values.shape[:-1]
    sol = np.linalg.solve(gram, rhs.reshape(-1, basis.k_n).T)
    return sol.T.reshape(lead + (basis.k_n,))


def evaluate(coords, basis, t):
    """Evaluate curves with the given coordinates at points t.

    coords may carry leading batch axes; the trailing axis must have
    length k_n. The result replaces that axis with the points in t.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.shape[-1] != basis.k_n:
        raise ValueError("coordinate vector length does not match the basis size")
    design = basis.design_matrix(t)
    out = coords @ design.T
    return out[..., 0] if np.isscalar(t) or np.asarray(t).ndim == 0 else out


@dataclass(frozen=True, eq=False)
class CurvePanel:
    """An n x p panel of curves stored as basis coordinates.

    Attributes
    ----------
    coords : ndarray of shape (n, p, k_n)
        Coordinate vectors per observation and variable.
    basis : BasisSystem
        Shared basis across variables.
    means : ndarray of shape (p, k_n)
        Per-variable mean coordinate vectors.
    """

    coords: np.ndarray
    basis: BasisSystem
    means: np.ndarray

    @property
    def n(self):
        return self.coords.shape[0]

    @property
    def p(self):
        return self.coords.shape[1]

    @classmethod
    def from_coords(cls, coords, basis):
        coords = np.asarray(coords, dtype=float)
        if coords.ndim != 3 or coords.shape[2] != basis.k_n:
            raise ValueError("coords must have shape (n, p, k_n)")
        return cls(coords=coords, basis=basis, means=coords.mean(axis=0))

    def centered(self):
        """Coordinates minus per-variable means, shape (n, p, k_n)."""
        return self.coords - self.means[None, :, :]


def read_curves_csv(path):
    """Read a long-format curve CSV with columns sample_id, variable_id, t, value.

    Returns
    -------
    dict mapping (sample_id, variable_id) -> (t array, value array)
    """
    frame = pd.read_csv(path)
    required = ["sample_id", "variable_id", "t", "value"]
    if list(frame.columns[:4]) != required:
        missing = [c for c in required if c not in frame.columns]
        if missing:
            raise ValueError(f"curve CSV missing columns: {missing}")
    out = {}
    for (sid, vid), grp in frame.groupby(["sample_id", "variable_id"], sort=True):
        out[(sid, vid)] = (grp["t"].to_numpy(float), grp["value"].to_numpy(float))
    return out


def write_curves_csv(path, t_grid, values):
    """Write curves sampled on a shared grid to the long CSV format.

    Parameters
    ----------
    t_grid : ndarray of shape (L,)
    values : ndarray of shape (n, p, L)
    """
    values = np.asarray(values)
    n, p, L = values.shape
    sid = np.repeat(np.arange(n), p * L)
    vid = np.tile(np.repeat(np.arange(p), L), n)
    t = np.tile(t_grid, n * p)
    frame = pd.DataFrame({"sample_id": sid, "variable_id": vid, "t": t,
                          "value": values.reshape(-1)})
    frame.to_csv(path, index=False)


def write_panel_csv(panel, path):
    """Write panel coordinates as sample_id, variable_id, coef_index, coef_value."""
    n, p, k = panel.coords.shape
    sid = np.repeat(np.arange(n), p * k)
    vid = np.tile(np.repeat(np.arange(p), k), n)
    idx = np.tile(np.arange(k), n * p)
    frame = pd.DataFrame({"sample_id": sid, "variable_id": vid, "coef_index": idx,
                          "coef_value": panel.coords.reshape(-1)})
    frame.to_csv(path, index=False)


def read_panel_csv(path, basis):
    """Read a coordinate panel CSV written by write_panel_csv."""
    frame = pd.read_csv(path)
    sids = np.sort(frame["sample_id"].unique())
    vids = np.sort(frame["variable_id"].unique())
    n, p = sids.size, vids.size
    coords = np.zeros((n, p, basis.k_n))
    si = {s: i for i, s in enumerate(sids)}
    vi = {v: j for j, v in enumerate(vids)}
    for row in frame.itertuples(index=False):
        coords[si[row.sample_id], vi[row.variable_id], int(row.coef_index)] = row.coef_value
    return CurvePanel.from_coords(coords, basis)
