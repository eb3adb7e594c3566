"""Closed-form counterparts of the Monte Carlo estimates."""

from __future__ import annotations

import numpy as np

from ..potential import integrate_density
from ..scale import ScaleSet, exit_down, exit_up, hitting_matrix, reflected_passage_up


def bin_average(ss: ScaleSet, emp):
    """Closed-form density averaged over each histogram bin, shape ``(n, n, B)``.

    The histogram estimates bin averages, so this is the exact target; parts
    of a bin outside the barriers contribute zero.
    """
    edges = emp.edges
    out = np.empty((ss.n, ss.n, edges.size - 1))
    for m in range(edges.size - 1):
        val, _ = integrate_density(ss, emp.scenario, edges[m], edges[m + 1])
        out[:, :, m] = val / (edges[m + 1] - edges[m])
    return out


def z_scores(ss: ScaleSet, emp):
    """``|estimate - exact| / se`` per cell; NaN where no path visited the cell."""
    exact = bin_average(ss, emp)
    diff = np.abs(emp.density - exact)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(emp.se > 0, diff / emp.se, np.nan)


def fraction_within(ss: ScaleSet, emp, k=3.0):
    """Fraction of visited cells whose estimate lies within ``k`` standard errors."""
    z = z_scores(ss, emp)
    z = z[np.isfinite(z)]
    return float(np.mean(z <= k)) if z.size else 1.0


def closed_exit_matrices(ss: ScaleSet, a, b):
    return {
        "exit_up": exit_up(ss, a, b),
        "exit_down": exit_down(ss, a),
        "reflected_passage_up": reflected_passage_up(ss, a, b),
        "hitting": hitting_matrix(ss, -a),
    }


def max_z(est, exact):
    """Largest entrywise ``|estimate - exact| / se`` of an :class:`ExitEstimate`."""
    diff = np.abs(est.value - exact)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(est.se > 0, diff / est.se, np.where(diff > 1e-12, np.inf, 0.0))
    return float(z.max())
