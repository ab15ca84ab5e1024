"""Trapezoid grids in one and two dimensions, shared by divergence estimators
and the distinguishability probe."""

from __future__ import annotations

import numpy as np

from .errors import InputError


def trapezoid_grid_1d(lo: float, hi: float, nodes: int):
    """Return (points (n,1), weights (n,)) for trapezoid quadrature on [lo, hi]."""
    if nodes < 2 or hi <= lo:
        raise InputError("need nodes >= 2 and hi > lo")
    x = np.linspace(lo, hi, nodes)
    w = np.full(nodes, x[1] - x[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return x.reshape(-1, 1), w


def trapezoid_grid_2d(lo, hi, nodes_per_axis: int):
    """Tensor-product trapezoid grid on the box [lo, hi] in R^2.

    Returns (points (n,2), weights (n,)) with n = nodes_per_axis**2.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != (2,) or hi.shape != (2,):
        raise InputError("2-D grid needs 2-vector bounds")
    axes, wts = [], []
    for a in range(2):
        p, w = trapezoid_grid_1d(lo[a], hi[a], nodes_per_axis)
        axes.append(p[:, 0])
        wts.append(w)
    xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
    points = np.column_stack([xx.ravel(), yy.ravel()])
    weights = np.outer(wts[0], wts[1]).ravel()
    return points, weights
