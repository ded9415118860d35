"""Dense reference computations used as independent oracles in the tests.

Everything here works on small dense numpy arrays and shares no code with
the package's sparse paths.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats


def dense(m):
    return m.toarray() if hasattr(m, "toarray") else np.asarray(m, dtype=float)


def gaussian_logpdf(x, cov):
    cov = np.asarray(cov, dtype=float)
    x = np.asarray(x, dtype=float)
    sign, ld = np.linalg.slogdet(cov)
    assert sign > 0
    return -0.5 * (x.size * math.log(2 * math.pi) + ld + x @ np.linalg.solve(cov, x))


def conjugate_posterior(bases, precisions, noise_var, z):
    """Mean and covariance of ``eta = (eta_0, .., eta_K)`` given ``z = sum A_k eta_k + eps``."""
    a = np.hstack([dense(b) for b in bases])
    n = a.shape[1]
    p = np.zeros((n, n))
    o = 0
    for q in precisions:
        q = dense(q)
        r = q.shape[0]
        p[o:o + r, o:o + r] = q
        o += r
    w = 1.0 / np.asarray(noise_var, dtype=float) * np.ones(len(z))
    p += a.T @ (w[:, None] * a)
    cov = np.linalg.inv(p)
    return cov @ (a.T @ (w * z)), cov


def log_marginal(z, bases, precisions, noise_var):
    """``log N(z; 0, sum_k A_k Q_k^{-1} A_k^T + R)``."""
    cov = np.diag(np.asarray(noise_var, dtype=float) * np.ones(len(z)))
    for b, q in zip(bases, precisions):
        a = dense(b)
        cov = cov + a @ np.linalg.inv(dense(q)) @ a.T
    return gaussian_logpdf(np.asarray(z, dtype=float), cov)


def block_collapsed(q, block, eta, a_block, z_resid, noise_var):
    """``log int N(z_resid; A_T eta_T, R) p(eta_T | eta_rest) d eta_T`` by dense marginalization.

    ``z_resid`` is the data on the footprint minus every contribution except
    that of ``eta_T``.
    """
    q = dense(q)
    n = q.shape[0]
    t = np.asarray(block)
    rest = np.setdiff1d(np.arange(n), t)
    qtt = q[np.ix_(t, t)]
    cond_cov = np.linalg.inv(qtt)
    cond_mean = -cond_cov @ q[np.ix_(t, rest)] @ eta[rest]
    a = dense(a_block)
    cov = a @ cond_cov @ a.T + np.diag(np.asarray(noise_var, dtype=float) * np.ones(a.shape[0]))
    return gaussian_logpdf(z_resid - a @ cond_mean, cov)


def ks_critical(n, m, alpha=0.01):
    """Asymptotic two-sample Kolmogorov-Smirnov critical value."""
    c = math.sqrt(-0.5 * math.log(alpha / 2.0))
    return c * math.sqrt((n + m) / (n * m))


def batch_means_se(x, n_batches=50):
    """Monte Carlo standard error of the mean of a correlated series (batch means)."""
    x = np.asarray(x, dtype=float)
    b = x.shape[0] // n_batches
    means = x[: b * n_batches].reshape(n_batches, b, *x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(n_batches)


def crps_monte_carlo(mean, std, y, n=400_000, seed=0):
    """``E|X - y| - E|X - X'|/2`` by simulation, with its standard error."""
    rng = np.random.default_rng(seed)
    x = mean + std * rng.standard_normal(n)
    x2 = mean + std * rng.standard_normal(n)
    vals = np.abs(x - y) - 0.5 * np.abs(x - x2)
    return vals.mean(), vals.std() / math.sqrt(n)


def ar1_sample_acf_target(phi, lags):
    return phi ** np.asarray(lags, dtype=float)


def kolmogorov_two_sample(a, b):
    return stats.ks_2samp(a, b).statistic
