"""Local-linear pre-smoothing of noisy, irregularly sampled curves.

A Gaussian kernel with bandwidth proportional to L^{-1/5} turns the L
observed (time, value) pairs of a curve into fitted values on a regular
grid, after which the smoothed curve can be projected onto a basis.
"""

import warnings
from dataclasses import dataclass

import numpy as np

# kernel mass below this triggers the nearest-neighbor fallback
MIN_KERNEL_MASS = 1e-8

DEFAULT_BANDWIDTH_SCALE = 0.5


@dataclass(frozen=True, eq=False)
class RawCurve:
    """Noisy observations of one curve at irregular time points."""

    t: np.ndarray
    values: np.ndarray
    sample_id: int = 0
    variable_id: int = 0

    def __post_init__(self):
        if self.t.size != self.values.size or self.t.size < 2:
            raise ValueError("need at least two (t, value) pairs")


def default_bandwidth(L, c=DEFAULT_BANDWIDTH_SCALE):
    """Rate-optimal bandwidth c * L^(-1/5) on the unit interval."""
    if L < 2:
        raise ValueError("need at least two observations")
    return c * float(L) ** -0.2


def local_linear_smooth(raw, bandwidth=None, eval_grid=None):
    """Fitted intercepts of weighted linear regressions at each grid point.

    At a grid point u, the observed values are regressed on (t - u) with
    Gaussian weights exp(-(t - u)^2 / (2 h^2)); the fitted intercept is
    the smoothed value. Linear functions are reproduced exactly.

    Parameters
    ----------
    raw : RawCurve
    bandwidth : float, optional
        Kernel bandwidth h > 0; defaults to default_bandwidth(L).
    eval_grid : ndarray, optional
        Evaluation points; defaults to 101 equispaced points on [0, 1].

    Returns
    -------
    ndarray of smoothed values, one per grid point.
    """
    if eval_grid is None:
        eval_grid = np.linspace(0.0, 1.0, 101)
    t = np.asarray(raw.t, dtype=float)
    y = np.asarray(raw.values, dtype=float)
    h = default_bandwidth(t.size) if bandwidth is None else float(bandwidth)
    if h <= 0.0:
        raise ValueError("bandwidth must be positive")

    x0 = t[:, None] - np.asarray(eval_grid, dtype=float)[None, :]
    wgt = np.exp(-x0 ** 2 / (2.0 * h * h))
    s0 = wgt.sum(axis=0)
    s1 = (wgt * x0).sum(axis=0)
    s2 = (wgt * x0 * x0).sum(axis=0)
    sy = (wgt * y[:, None]).sum(axis=0)
    sxy = (wgt * x0 * y[:, None]).sum(axis=0)

    det = s0 * s2 - s1 * s1
    # guard both near-zero kernel mass and collinear local designs
    mass_ok = s0 >= MIN_KERNEL_MASS
    det_ok = mass_ok & (det > 1e-12 * (s0 * s2 + s1 * s1 + np.finfo(float).tiny))
    out = np.empty(s0.size)
    out[det_ok] = (s2[det_ok] * sy[det_ok] - s1[det_ok] * sxy[det_ok]) / det[det_ok]
    const_only = mass_ok & ~det_ok
    out[const_only] = sy[const_only] / s0[const_only]
    if np.any(~mass_ok):
        warnings.warn("kernel mass below tolerance at some grid points; "
                      "nearest-neighbor fallback used", RuntimeWarning, stacklevel=2)
        for idx in np.flatnonzero(~mass_ok):
            out[idx] = y[np.argmin(np.abs(x0[:, idx]))]
    return out


def smooth_curves(t_points, values, eval_grid=None, bandwidth=None):
    """Smooth a panel of raw curves onto one evaluation grid.

    Parameters
    ----------
    t_points, values : ndarray of shape (n, p, L)
        Per-curve observation times and values.
    eval_grid : ndarray, optional
    bandwidth : float, optional
        Shared bandwidth; defaults to default_bandwidth(L).

    Returns
    -------
    ndarray of shape (n, p, len(eval_grid))
    """
    if eval_grid is None:
        eval_grid = np.linspace(0.0, 1.0, 101)
    t_points = np.asarray(t_points, dtype=float)
    values = np.asarray(values, dtype=float)
    n, p, L = t_points.shape
    if bandwidth is None:
        bandwidth = default_bandwidth(L)
    out = np.empty((n, p, np.asarray(eval_grid).size))
    for i in range(n):
        for j in range(p):
            curve = RawCurve(t=t_points[i, j], values=values[i, j],
                             sample_id=i, variable_id=j)
            out[i, j] = local_linear_smooth(curve, bandwidth=bandwidth,
                                            eval_grid=eval_grid)
    return out
