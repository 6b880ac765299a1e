"""Two-block Gibbs sampler: theta | lambda (Gaussian) then lambda | theta (gammas).

All per-iteration linear algebra runs in the coordinates of the one-time SVD
``X Sigma_beta^{1/2} = U D V'`` computed by :func:`glmmgibbs.model.build_model`:

* ``T^{-1} = A diag(g) A'`` with ``A = Sigma_beta^{1/2} V`` and
  ``g_j = 1 / (lambda_e d_j^2 + 1)``, so no p x p matrix is factorized per step;
* ``M = U diag(h) U'`` with ``h_j = 1 / (lambda_e d_j^2 + 1)`` (``h_j = 1`` past
  the rank of X);
* ``Q = lambda_e Zt' diag(h) Zt + Lambda`` with ``Zt = U'Z``.

``Q^{-1}`` is carried as a square-root factor ``F`` (``Q^{-1} = F F'``) built
from two SVDs: one of the rows of ``Zt`` outside ``col(X)``, which carry the
full weight ``lambda_e``, and one of the remaining rows in the bounded
coordinates of the first.  Unlike a Cholesky factor of ``Q`` this stays
accurate when the precisions span many orders of magnitude.
"""

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import linalg
from .model import validate_conditionals


class SamplerError(RuntimeError):
    pass


class NonPositiveRate(SamplerError):
    pass


class UncertifiedModel(SamplerError):
    pass


@dataclass(frozen=True)
class PrecisionState:
    lambda_e: float
    lambda_u: np.ndarray

    def __post_init__(self):
        lam_u = np.asarray(self.lambda_u, dtype=float).reshape(-1)
        object.__setattr__(self, "lambda_u", lam_u)
        object.__setattr__(self, "lambda_e", float(self.lambda_e))
        if not (np.isfinite(self.lambda_e) and self.lambda_e > 0
                and np.all(np.isfinite(lam_u)) and np.all(lam_u > 0)):
            raise ValueError("precisions must be finite and strictly positive")

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=float)
        return cls(vec[0], vec[1:])

    def as_vector(self):
        return np.concatenate([[self.lambda_e], self.lambda_u])


@dataclass(frozen=True)
class ThetaState:
    beta: np.ndarray
    u: np.ndarray

    def as_vector(self):
        return np.concatenate([self.beta, self.u])

    @classmethod
    def from_vector(cls, vec, p):
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:p].copy(), vec[p:].copy())

    def block(self, model, i):
        """``u_i`` for ``i = 1..r``."""
        return self.u[model.block_slices[i - 1]]


@dataclass
class LambdaFactorization:
    model: object = field(repr=False)
    lam: PrecisionState
    h_diag: np.ndarray
    g_diag: np.ndarray
    lambda_diag: np.ndarray
    q_lambda: np.ndarray
    q_factor: np.ndarray
    u_mean: np.ndarray
    beta_mean: np.ndarray

    @property
    def theta_mean(self):
        return np.concatenate([self.beta_mean, self.u_mean])

    @cached_property
    def q_inv(self):
        return self.q_factor @ self.q_factor.T

    @cached_property
    def q_chol(self):
        return linalg.chol_lower(self.q_lambda)

    @cached_property
    def t_inv(self):
        a = self.model.derived.beta_basis
        return (a * self.g_diag) @ a.T

    @cached_property
    def t_inv_xt_z(self):
        """``T^{-1} X' Z`` (p x q)."""
        d = self.model.derived
        dz = _dt_times(d.d_coef, d.z_tilde)
        return d.beta_basis @ (self.g_diag[:, None] * dz)


def _dt_times(d_coef, mat):
    """``D' @ mat`` for the N x p "diagonal" D of the SVD of X~ (mat has N rows)."""
    p = d_coef.shape[0]
    n = mat.shape[0]
    m = min(n, p)
    shape = (p,) + mat.shape[1:]
    out = np.zeros(shape)
    out[:m] = d_coef[:m].reshape((m,) + (1,) * (mat.ndim - 1)) * mat[:m]
    return out


def factorize_lambda(model, lam):
    """Everything about ``theta | lambda`` that does not depend on the random draw."""
    d = model.derived
    lam_e = lam.lambda_e
    lam_diag = np.repeat(lam.lambda_u, model.q_sizes)
    h = 1.0 / (lam_e * d.d_obs ** 2 + 1.0)
    g = 1.0 / (lam_e * d.d_coef ** 2 + 1.0)
    zt = d.z_tilde
    n = model.n

    q_lam = lam_e * (zt.T @ (h[:, None] * zt))
    q_lam[np.diag_indices_from(q_lam)] += lam_diag
    q_lam = 0.5 * (q_lam + q_lam.T)

    # Q = J'J + (lambda_e Zt_2' Zt_2 + Lambda) with J = (lambda_e h_1)^{1/2} Zt_1,
    # where Zt_1 holds the first k = rank(X) rows of Zt and Zt_2 the rest
    # (h = 1 there).  Only the second term can carry lambda_e unboundedly, so
    # it is factorized on its own, Q_2^{-1} = F_2 F_2', and J is then handled
    # in the bounded coordinates of F_2: Q^{-1} = F_2 (I + B'B)^{-1} F_2',
    # B = J F_2.
    k = d.rank_x
    inv_sqrt_lam = 1.0 / np.sqrt(lam_diag)
    sqrt_le = np.sqrt(lam_e)
    u_star = np.zeros(model.q)
    if k < n:
        p2, s2, o2t = _svd(sqrt_le * (zt[k:] * inv_sqrt_lam[None, :]))
        # these rows have known rank; anything past it is representation
        # round-off, which sqrt(lambda_e) would otherwise promote to precision
        s2 = np.where(np.arange(s2.size) < d.rank_out, s2, 0.0)
        w2 = np.ones(model.q)
        w2[: s2.size] = 1.0 / (1.0 + s2 ** 2)
        f2 = (inv_sqrt_lam[:, None] * o2t.T) * np.sqrt(w2)[None, :]
        # ridge solution of the Zt_2 rows alone:
        # (lambda_e Zt_2' Zt_2 + Lambda) u* = lambda_e Zt_2' yfit_2
        m2 = s2.size
        u_star = inv_sqrt_lam * (o2t[:m2].T @ ((s2 / (1.0 + s2 ** 2))
                                               * (p2[:, :m2].T @ (sqrt_le * d.y_fit_out))))
    else:
        f2 = np.diag(inv_sqrt_lam)
    if k > 0:
        jmat = np.sqrt(lam_e * h[:k])[:, None] * zt[:k]
        _, sb, obt = _svd(jmat @ f2)
        wb = np.ones(model.q)
        wb[: sb.size] = 1.0 / (1.0 + sb ** 2)
        q_factor = (f2 @ obt.T) * np.sqrt(wb)[None, :]
    else:
        q_factor = f2
    if not np.all(np.isfinite(q_factor)):
        raise linalg.NotPd("Q_lambda factor is not finite")

    m = min(n, model.p)
    eta_obs = np.zeros(n)
    eta_obs[:m] = d.eta[:m]
    # With u* as above, u_mean = u* + Q^{-1} J' (lambda_e h_1)^{1/2} (yt_1 - D eta - Zt_1 u*):
    # the right-hand side is O(1) for any lambda, so neither lambda_e nor a
    # large lambda_u multiplies round-off.
    resid_in = d.y_tilde[:k] - d.d_obs[:k] * eta_obs[:k] - zt[:k] @ u_star
    rhs = zt[:k].T @ ((lam_e * h[:k]) * resid_in)
    u_mean = u_star + q_factor @ (q_factor.T @ rhs)
    beta_mean = _beta_given_u_mean(model, lam_e, g, u_mean)
    return LambdaFactorization(model, lam, h, g, lam_diag, q_lam, q_factor, u_mean, beta_mean)


def _svd(a):
    try:
        return np.linalg.svd(a, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise linalg.NotPd(f"Q_lambda factorization failed: {exc}") from None


def _beta_given_u_mean(model, lam_e, g, u):
    """``E[beta | u, lambda]``; ``u`` may be a (q,) vector or a (q, n) batch."""
    d = model.derived
    resid = (d.y_tilde[:, None] - d.z_tilde @ u.reshape(model.q, -1))
    coef = g[:, None] * (lam_e * _dt_times(d.d_coef, resid) + d.eta[:, None])
    out = d.beta_basis @ coef
    return out[:, 0] if u.ndim == 1 else out


def conditional_theta_moments(model, lam, fac=None):
    """Mean and covariance of ``theta | lambda`` from the factorized representation."""
    fac = fac or factorize_lambda(model, lam)
    lam_e = lam.lambda_e
    b = fac.t_inv_xt_z
    q_inv = fac.q_inv
    cov_bu = -lam_e * (b @ q_inv)
    cov_bb = fac.t_inv - lam_e * (cov_bu @ b.T)
    cov = np.block([[cov_bb, cov_bu], [cov_bu.T, q_inv]])
    return fac.theta_mean, 0.5 * (cov + cov.T)


def draw_theta_batch(model, fac, rng, size):
    """``size`` independent draws of theta | lambda, as (beta (size, p), u (size, q))."""
    zu = rng.standard_normal((model.q, size))
    zb = rng.standard_normal((model.p, size))
    u = fac.u_mean[:, None] + fac.q_factor @ zu
    lam_e = fac.lam.lambda_e
    d = model.derived
    resid = d.y_tilde[:, None] - d.z_tilde @ u
    coef = fac.g_diag[:, None] * (lam_e * _dt_times(d.d_coef, resid) + d.eta[:, None])
    coef += np.sqrt(fac.g_diag)[:, None] * zb
    beta = d.beta_basis @ coef
    return beta.T, u.T


def draw_theta_given_lambda(model, lam, rng, fac=None):
    """Exact draw: ``u ~ N(u_mean, Q^{-1})`` then ``beta | u ~ N(., T^{-1})``."""
    fac = fac or factorize_lambda(model, lam)
    beta, u = draw_theta_batch(model, fac, rng, 1)
    return ThetaState(beta[0], u[0])


def lambda_rates(model, theta):
    """Rates of the gamma conditionals of lambda given theta."""
    b = model.prior.b
    resid = model.y - model.w @ theta.as_vector()
    rates = np.empty(model.r + 1)
    rates[0] = b[0] + 0.5 * resid @ resid
    for i, sl in enumerate(model.block_slices, start=1):
        ui = theta.u[sl]
        rates[i] = b[i] + 0.5 * ui @ ui
    return rates


def draw_lambda_given_theta(model, theta, rng):
    shapes = model.shapes
    rates = lambda_rates(model, theta)
    if np.any(shapes <= 0):
        raise NonPositiveRate(f"non-positive gamma shape {shapes.min():.3g}")
    if not np.all(rates > 0) or not np.all(np.isfinite(rates)):
        raise NonPositiveRate(f"gamma rates {rates} are not all positive and finite")
    # numpy uses (shape, scale); scale = 1 / rate
    draw = rng.gamma(shapes, 1.0 / rates)
    if not np.all(draw > 0):
        raise NonPositiveRate("gamma draw underflowed to zero")
    return PrecisionState.from_vector(draw)


def gibbs_step(model, state, rng):
    """One sweep from ``(theta, lambda)``: theta~ | lambda, then lambda~ | theta~."""
    _, lam = state
    theta_new = draw_theta_given_lambda(model, lam, rng)
    lam_new = draw_lambda_given_theta(model, theta_new, rng)
    return theta_new, lam_new


@dataclass(frozen=True)
class Init:
    """Chain initialisation.

    ``kind`` is ``"prior"``, ``"theta"`` or ``"lambda"``.  Only the starting
    lambda matters to a theta-first sweep, so a fixed theta is turned into a
    starting lambda by one draw from ``lambda | theta``.
    """

    kind: str = "prior"
    values: object = None


@dataclass(frozen=True)
class SamplerConfig:
    n_iter: int
    burn_in: int = 0
    seed: int = 0
    n_chains: int = 1
    init: Init = Init()

    def __post_init__(self):
        if self.n_iter < 0 or self.burn_in < 0:
            raise ValueError("n_iter and burn_in must be non-negative")
        if self.n_iter > 0 and self.burn_in >= self.n_iter:
            raise ValueError("burn_in must be smaller than n_iter")
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")
        if self.init.kind not in ("prior", "theta", "lambda"):
            raise ValueError(f"unknown init kind {self.init.kind!r}")


@dataclass
class ChainResult:
    lambdas: np.ndarray  # (n_done, r + 1)
    thetas: np.ndarray  # (n_done, p + q)
    error: str = None

    @property
    def n_done(self):
        return self.lambdas.shape[0]


@dataclass
class SampleStore:
    chains: list
    burn_in: int
    n_iter: int
    r: int
    p: int
    q: int

    @property
    def columns(self):
        return (["lambda_e"] + [f"lambda_u_{i}" for i in range(1, self.r + 1)]
                + [f"beta_{j}" for j in range(1, self.p + 1)]
                + [f"u_{j}" for j in range(1, self.q + 1)])

    def draws(self, chain):
        c = self.chains[chain]
        return np.hstack([c.lambdas, c.thetas])

    @property
    def errors(self):
        return [(i, c.error) for i, c in enumerate(self.chains) if c.error]


def chain_rngs(seed, n_chains):
    """Independent, non-overlapping generators: one spawned SeedSequence child per chain."""
    children = np.random.SeedSequence(seed).spawn(n_chains)
    return [np.random.Generator(np.random.PCG64(ss)) for ss in children]


def initial_lambda(model, init, rng):
    if init.kind == "lambda":
        return PrecisionState.from_vector(init.values)
    if init.kind == "theta":
        theta = ThetaState.from_vector(init.values, model.p)
        return draw_lambda_given_theta(model, theta, rng)
    prior = model.prior
    if prior.is_proper:
        return PrecisionState.from_vector(rng.gamma(prior.a, 1.0 / prior.b))
    return PrecisionState.from_vector(np.ones(model.r + 1))


def run_chain(model, n_iter, init, rng):
    lambdas = np.empty((n_iter, model.r + 1))
    thetas = np.empty((n_iter, model.p + model.q))
    it = -1
    try:
        lam = initial_lambda(model, init, rng)
        for it in range(n_iter):
            theta = draw_theta_given_lambda(model, lam, rng)
            lam = draw_lambda_given_theta(model, theta, rng)
            thetas[it, : model.p] = theta.beta
            thetas[it, model.p:] = theta.u
            lambdas[it] = lam.as_vector()
    except (SamplerError, linalg.LinalgError, ValueError, FloatingPointError) as exc:
        where = "initialisation" if it < 0 else f"iteration {it}"
        done = max(it, 0)
        return ChainResult(lambdas[:done], thetas[:done], f"{where}: {exc}")
    return ChainResult(lambdas, thetas)


def _run_chain_job(args):
    return run_chain(*args)


def check_runnable(model, certificate=None, force_uncertified=False):
    validity = validate_conditionals(model)
    if not validity.shapes_positive:
        raise NonPositiveRate("posterior gamma shapes must be positive to sample")
    if model.prior.is_proper:
        return
    certified = certificate is not None and certificate.certified
    if certified:
        return
    if not force_uncertified:
        raise UncertifiedModel(
            "improper prior without a geometric-ergodicity certificate; "
            "the posterior may be improper (override with force_uncertified=True)")
    warnings.warn(
        "sampling an UNCERTIFIED improper-prior model: posterior propriety is unknown",
        RuntimeWarning, stacklevel=3)


def run_chains(model, config, certificate=None, force_uncertified=False, workers=1):
    """Run ``config.n_chains`` independent chains.

    Every recorded iteration is the pair ``(theta_n, lambda_n)`` after a full
    sweep, where ``lambda_n`` was drawn given ``theta_n``.  Burn-in draws are
    kept and only marked via ``SampleStore.burn_in``.  A chain that fails
    numerically stops early and records its error; the others carry on.
    """
    check_runnable(model, certificate, force_uncertified)
    rngs = chain_rngs(config.seed, config.n_chains)
    jobs = [(model, config.n_iter, config.init, rng) for rng in rngs]
    if workers > 1 and config.n_chains > 1 and config.n_iter > 0:
        with ProcessPoolExecutor(max_workers=min(workers, config.n_chains)) as pool:
            chains = list(pool.map(_run_chain_job, jobs))
    else:
        chains = [_run_chain_job(job) for job in jobs]
    return SampleStore(chains, config.burn_in, config.n_iter, model.r, model.p, model.q)
