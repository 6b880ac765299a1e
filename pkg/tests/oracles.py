"""Dense reference computations used as independent oracles in the tests."""

import mpmath
import numpy as np


def block_formula_moments(model, lam):
    """Mean and covariance of theta | lambda from explicit T, M and Q inverses."""
    x, z, y = model.x, model.z, model.y
    sigma_inv = np.linalg.inv(model.sigma_beta)
    mu = model.prior.mu_beta
    le = lam.lambda_e
    lam_diag = np.diag(np.repeat(lam.lambda_u, model.q_sizes))
    t_inv = np.linalg.inv(le * x.T @ x + sigma_inv)
    m = np.eye(model.n) - le * x @ t_inv @ x.T
    q_inv = np.linalg.inv(le * z.T @ m @ z + lam_diag)
    inner = m @ y - x @ t_inv @ sigma_inv @ mu
    beta_mean = t_inv @ (le * x.T @ y + sigma_inv @ mu) - le ** 2 * t_inv @ x.T @ z @ q_inv @ z.T @ inner
    u_mean = le * q_inv @ z.T @ inner
    txz = t_inv @ x.T @ z
    cov_bb = t_inv + le ** 2 * txz @ q_inv @ txz.T
    cov_bu = -le * txz @ q_inv
    cov = np.block([[cov_bb, cov_bu], [cov_bu.T, q_inv]])
    return np.concatenate([beta_mean, u_mean]), cov


def joint_precision_moments(model, lam):
    """The same moments from the joint Gaussian precision of (beta, u)."""
    w, y = model.w, model.y
    le = lam.lambda_e
    prior_prec = np.zeros((model.p + model.q,) * 2)
    prior_prec[: model.p, : model.p] = np.linalg.inv(model.sigma_beta)
    prior_prec[model.p:, model.p:] = np.diag(np.repeat(lam.lambda_u, model.q_sizes))
    prec = le * w.T @ w + prior_prec
    rhs = le * w.T @ y
    rhs[: model.p] += prior_prec[: model.p, : model.p] @ model.prior.mu_beta
    cov = np.linalg.inv(prec)
    return cov @ rhs, cov


def mp_joint_moments(model, lam, dps=80):
    """High-precision joint-precision moments (for extreme lambda)."""
    with mpmath.workdps(dps):
        w = mpmath.matrix(model.w.tolist())
        y = mpmath.matrix(model.y.tolist())
        le = mpmath.mpf(lam.lambda_e)
        k = model.p + model.q
        prior_prec = mpmath.zeros(k, k)
        sig_inv = mpmath.inverse(mpmath.matrix(model.sigma_beta.tolist()))
        for i in range(model.p):
            for j in range(model.p):
                prior_prec[i, j] = sig_inv[i, j]
        diag = np.repeat(lam.lambda_u, model.q_sizes)
        for i in range(model.q):
            prior_prec[model.p + i, model.p + i] = mpmath.mpf(diag[i])
        prec = le * w.T * w + prior_prec
        rhs = le * w.T * y
        mu = mpmath.matrix(model.prior.mu_beta.tolist())
        top = sig_inv * mu
        for i in range(model.p):
            rhs[i] += top[i]
        cov = mpmath.inverse(prec)
        mean = cov * rhs
        return (np.array([float(v) for v in mean]),
                np.array([[float(cov[i, j]) for j in range(k)] for i in range(k)]))


def rel_err(a, b):
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))
