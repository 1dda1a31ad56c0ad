"""Label-interaction analysis of a learned multi-label energy.

The global term ``v^T sigmoid(M y)`` is the only part of the energy that
couples labels. Its Hessian in ``y`` is ``M^T diag(v * sigmoid''(M y)) M``;
averaged over gold labels it can be compared with label co-occurrence.
"""

import numpy as np

from . import autodiff as ad
from .data import cooccurrence


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def global_energy_hessian(energy, phi, Y):
    """Average analytic Hessian of the global term over the rows of ``Y``."""
    M = phi["M"]
    v = phi["v"]
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    s = _sigmoid(Y @ M.T)
    curvature = v * s * (1.0 - s) * (1.0 - 2.0 * s)
    H = np.einsum("nh,hi,hj->ij", curvature, M, M) / Y.shape[0]
    return H


def global_energy_hessian_fd(energy, phi, Y, h=1e-4):
    """Same quantity by central differences of the taped label gradient."""
    params = phi.unflatten()
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    L = Y.shape[1]

    def label_grad(Yp):
        var = ad.Var(Yp)
        ad.vsum(energy.global_term(params, var)).backward()
        return var.grad

    H = np.zeros((L, L))
    for j in range(L):
        e = np.zeros(L)
        e[j] = h
        H[:, j] = (label_grad(Y + e) - label_grad(Y - e)).sum(axis=0) / (2.0 * h)
    return H / Y.shape[0]


def offdiag_pearson(A, B):
    """Pearson correlation of the strictly upper-triangular entries, or None if undefined."""
    iu = np.triu_indices_from(A, k=1)
    a, b = np.asarray(A)[iu], np.asarray(B)[iu]
    if a.size < 2 or np.std(a) == 0 or np.std(b) == 0:
        return None
    return float(np.corrcoef(a, b)[0, 1])


def analyze_hessian(energy, phi, dataset):
    """Return ``(neg_hessian, cooc, correlation, fd_error)``.

    Both matrices have a zeroed diagonal. ``fd_error`` is the max absolute
    gap between the analytic and divided-difference Hessians.
    """
    Y = dataset.Y
    H = global_energy_hessian(energy, phi, Y)
    H_fd = global_energy_hessian_fd(energy, phi, Y)
    fd_error = float(np.max(np.abs(H - H_fd))) if H.size else 0.0
    neg = -H
    np.fill_diagonal(neg, 0.0)
    C = cooccurrence(dataset)
    return neg, C, offdiag_pearson(neg, C), fd_error
