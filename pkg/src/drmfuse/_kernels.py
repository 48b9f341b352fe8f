"""Shared numerical kernels over the fused data.

Everything here works in log space: tilt exponents can be huge for large
measurements (exp(beta * log^2 x) overflows quickly), but the softmax-like
ratios q_k = w_k / sum_u rho_u w_u are bounded above by 1/rho_k, so all
downstream quantities are formed from exponent differences.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .core import FusedData, NonFinite, Theta


def eta_matrix(theta: Theta, data: FusedData) -> np.ndarray:
    """Log tilt values eta[:, k] = alpha_k + h_k(t)^T beta_k, shape (n, m)."""
    eta = np.empty((data.n, data.m))
    for k in range(data.m):
        eta[:, k] = theta.alpha[k]
        if theta.beta[k].size:
            eta[:, k] += data.basis[k] @ theta.beta[k]
    return eta


def log_denominators(theta: Theta, data: FusedData) -> tuple[np.ndarray, np.ndarray]:
    """(logD, eta) with logD_i = log sum_{k=0}^m rho_k w_k(t_i), w_0 = 1.

    Uses max-subtraction (logsumexp), so w_k never materializes raw.
    """
    eta = eta_matrix(theta, data)
    if not np.isfinite(eta).all():
        raise NonFinite("tilt exponents")
    full = np.column_stack([np.zeros(data.n), eta])
    logD = logsumexp(full, axis=1, b=np.broadcast_to(data.rho, full.shape))
    return logD, eta


def softmax_ratios(theta: Theta, data: FusedData):
    """(q, logD, eta) with q[:, k] = w_k / D in (0, 1/rho_k], shape (n, m)."""
    logD, eta = log_denominators(theta, data)
    q = np.exp(eta - logD[:, None])
    return q, logD, eta


def fused_weights(logD: np.ndarray, data: FusedData) -> np.ndarray:
    """Empirical-likelihood point masses p_i = 1 / (n_0 D_i)."""
    return np.exp(-np.log(data.n0) - logD)
