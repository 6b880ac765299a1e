"""GLMM data model, priors and the static quantities derived from them.

The model is

    y = X beta + Z_1 u_1 + ... + Z_r u_r + e,
    e ~ N(0, I / lambda_e),  u_i ~ N(0, I / lambda_u_i),  beta ~ N(mu_beta, Sigma_beta),

with gamma (or improper gamma-like) priors on the precisions.

Gamma hyperparameters are (shape ``a``, rate ``b``): the prior density of a
precision is proportional to ``lam**(a - 1) * exp(-b * lam)``.  Index 0 of
``a``/``b`` is the error precision, index ``i`` the ``i``-th random effect.
This is *not* numpy's (shape, scale) convention.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import linalg


class ModelError(ValueError):
    pass


class DimMismatch(ModelError):
    pass


class NonPdSigmaBeta(ModelError):
    pass


class DegenerateDesign(ModelError):
    pass


@dataclass(frozen=True)
class GlmmDesign:
    y: np.ndarray
    x: np.ndarray
    z_blocks: tuple

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        blocks = tuple(np.atleast_2d(np.asarray(zb, dtype=float)) for zb in self.z_blocks)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z_blocks", blocks)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def q_sizes(self):
        return tuple(zb.shape[1] for zb in self.z_blocks)

    @property
    def r(self):
        return len(self.z_blocks)

    @property
    def z(self):
        return np.hstack(self.z_blocks)

    def validate(self):
        n = self.n
        if n < 2:
            raise DegenerateDesign(f"need N >= 2 observations, got N={n}")
        if self.r < 1:
            raise DegenerateDesign("need at least one random-effect block")
        if self.x.shape[0] != n:
            raise DimMismatch(f"X has {self.x.shape[0]} rows but y has length {n}")
        for i, zb in enumerate(self.z_blocks, start=1):
            if zb.shape[0] != n:
                raise DimMismatch(f"Z block {i} has {zb.shape[0]} rows but y has length {n}")
            if zb.shape[1] < 2:
                raise DegenerateDesign(f"Z block {i} has q_{i}={zb.shape[1]} < 2 columns")
        for name, arr in (("y", self.y), ("X", self.x), ("Z", self.z)):
            if not np.all(np.isfinite(arr)):
                raise linalg.InvalidMatrix(f"{name} has non-finite entries")


@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters.

    ``sigma_beta`` may be a full p x p matrix or a scalar ``c`` meaning ``c * I``.
    ``a`` and ``b`` have length r + 1 and are (shape, rate) pairs.
    """

    mu_beta: np.ndarray
    sigma_beta: object
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu_beta", np.asarray(self.mu_beta, dtype=float).reshape(-1))
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(-1))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(-1))

    @property
    def is_proper(self):
        return bool(np.all(self.a > 0) and np.all(self.b > 0))

    def sigma_matrix(self, p):
        if np.ndim(self.sigma_beta) == 0:
            return float(self.sigma_beta) * np.eye(p)
        return np.asarray(self.sigma_beta, dtype=float)


@dataclass(frozen=True)
class DerivedQuantities:
    w: np.ndarray
    sse: float
    rank_z: int
    rank_x: int
    # SVD of X Sigma_beta^{1/2}: u (N x N), singular values (min(N, p)), vt (p x p)
    svd_xtilde: tuple
    d_max: float
    z_tilde: np.ndarray
    y_tilde: np.ndarray
    eta: np.ndarray
    beta_basis: np.ndarray  # Sigma_beta^{1/2} V
    psi_max: float
    p_ztz: np.ndarray
    ztz_pinv: np.ndarray
    block_trace_complement: np.ndarray
    block_trace_pinv: np.ndarray
    s_tilde: float
    trace_xsx: float
    d_obs: np.ndarray = field(repr=False)  # singular values padded/truncated to length N
    d_coef: np.ndarray = field(repr=False)  # ... and to length p
    # rows rank_x: of U'Z (the part of Z outside col(X)): their rank, and the
    # matching rows of U'y projected onto their column space
    rank_out: int = 0
    y_fit_out: np.ndarray = field(default=None, repr=False)


@dataclass(frozen=True)
class Model:
    design: GlmmDesign
    prior: PriorSpec
    sigma_beta: np.ndarray
    derived: DerivedQuantities

    @property
    def n(self):
        return self.design.n

    @property
    def p(self):
        return self.design.p

    @property
    def r(self):
        return self.design.r

    @property
    def q_sizes(self):
        return self.design.q_sizes

    @property
    def q(self):
        return sum(self.design.q_sizes)

    @property
    def y(self):
        return self.design.y

    @property
    def x(self):
        return self.design.x

    @property
    def z(self):
        return self.derived.w[:, self.p:]

    @property
    def w(self):
        return self.derived.w

    @property
    def block_slices(self):
        out, start = [], 0
        for qi in self.q_sizes:
            out.append(slice(start, start + qi))
            start += qi
        return out

    @property
    def shapes(self):
        """Posterior gamma shapes ``(a_0 + N/2, a_i + q_i/2)``."""
        return self.prior.a + 0.5 * np.array([self.n, *self.q_sizes], dtype=float)

    def with_response(self, y):
        """Same design and prior with a new response vector; reuses every y-free quantity."""
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape != self.y.shape:
            raise DimMismatch(f"new y has length {y.shape[0]}, expected {self.n}")
        u = self.derived.svd_xtilde[0]
        y_tilde = u.T @ y
        d = self.derived
        derived = replace(d, sse=compute_sse(self.w, y), y_tilde=y_tilde,
                          y_fit_out=fit_outside_x(d.z_tilde, y_tilde, d.rank_x)[1])
        return replace(self, design=replace(self.design, y=y), derived=derived)


def compute_sse(w, y):
    """``||y - W theta_hat||^2`` with ``theta_hat = (W'W)^+ W'y``."""
    w = np.asarray(w, dtype=float)
    theta_hat = linalg.pseudo_inverse(w.T @ w) @ (w.T @ y)
    resid = y - w @ theta_hat
    return float(resid @ resid)


def fit_outside_x(z_tilde, y_tilde, rank_x):
    """Rank of ``Z~[rank_x:]`` and the projection of ``y~[rank_x:]`` onto its column space."""
    z2 = z_tilde[rank_x:]
    if z2.shape[0] == 0:
        return 0, np.zeros(0)
    u2, s2, _ = linalg.svd(z2, full_matrices=False)
    rank = int(np.sum(s2 > linalg.default_tol(z2.shape, s2[0]))) if s2.size and s2[0] > 0 else 0
    basis = u2[:, :rank]
    return rank, basis @ (basis.T @ y_tilde[rank_x:])


def s_tilde(model):
    return float(np.min(model.shapes))


def build_model(design, prior):
    design.validate()
    n, p, r = design.n, design.p, design.r
    if prior.mu_beta.shape != (p,):
        raise DimMismatch(f"mu_beta has length {prior.mu_beta.shape[0]}, expected p={p}")
    if prior.a.shape != (r + 1,) or prior.b.shape != (r + 1,):
        raise DimMismatch(f"a and b must have length r+1={r + 1}")
    if not (np.all(np.isfinite(prior.a)) and np.all(np.isfinite(prior.b))
            and np.all(np.isfinite(prior.mu_beta))):
        raise ModelError("prior hyperparameters must be finite")
    sigma = prior.sigma_matrix(p)
    if sigma.shape != (p, p):
        raise DimMismatch(f"Sigma_beta is {sigma.shape}, expected ({p}, {p})")
    sigma = 0.5 * (sigma + sigma.T)
    w_eig, v_eig = np.linalg.eigh(sigma)
    if not np.all(np.isfinite(w_eig)) or w_eig[0] <= 0:
        raise NonPdSigmaBeta("Sigma_beta must be positive definite")
    sigma_half = (v_eig * np.sqrt(w_eig)) @ v_eig.T
    sigma_inv_half = (v_eig / np.sqrt(w_eig)) @ v_eig.T

    x, y = design.x, design.y
    z = design.z
    w = np.hstack([x, z])

    xtilde = x @ sigma_half
    u, d, vt = linalg.svd(xtilde)
    d_max = float(d[0]) if d.size else 0.0
    rank_x = int(np.sum(d > linalg.default_tol(xtilde.shape, d_max))) if d_max > 0 else 0
    d = np.where(np.arange(d.size) < rank_x, d, 0.0)
    d_obs = np.zeros(n)
    d_obs[: min(n, d.size)] = d[:n]
    d_coef = np.zeros(p)
    d_coef[: min(p, d.size)] = d[:p]

    # Z'Z = O S^2 O' from the SVD of Z, so rank, projection and pseudoinverse share one cut-off
    _, sz, ozt = linalg.svd(z)
    sz_max = float(sz[0]) if sz.size else 0.0
    rank_z = int(np.sum(sz > linalg.default_tol(z.shape, sz_max))) if sz_max > 0 else 0
    basis = ozt[:rank_z].T
    p_ztz = basis @ basis.T
    ztz_pinv = (basis / sz[:rank_z] ** 2) @ basis.T

    starts = np.cumsum([0, *design.q_sizes])
    # diag(I - P) from the null-space basis: sums of squares, no cancellation
    comp_diag = np.sum(ozt[rank_z:] ** 2, axis=0)
    pinv_diag = np.diag(ztz_pinv)
    block_trace_complement = np.array(
        [comp_diag[starts[i]:starts[i + 1]].sum() for i in range(r)])
    block_trace_pinv = np.array([pinv_diag[starts[i]:starts[i + 1]].sum() for i in range(r)])

    shapes = prior.a + 0.5 * np.array([n, *design.q_sizes], dtype=float)
    z_tilde = u.T @ z
    y_tilde = u.T @ y
    rank_out, y_fit_out = fit_outside_x(z_tilde, y_tilde, rank_x)
    derived = DerivedQuantities(
        w=w,
        sse=compute_sse(w, y),
        rank_z=rank_z,
        rank_x=rank_x,
        svd_xtilde=(u, d, vt),
        d_max=d_max,
        z_tilde=z_tilde,
        y_tilde=y_tilde,
        eta=vt @ (sigma_inv_half @ prior.mu_beta),
        beta_basis=sigma_half @ vt.T,
        psi_max=sz_max ** 2,
        p_ztz=p_ztz,
        ztz_pinv=ztz_pinv,
        block_trace_complement=block_trace_complement,
        block_trace_pinv=block_trace_pinv,
        s_tilde=float(shapes.min()),
        trace_xsx=float(np.sum(d ** 2)),
        d_obs=d_obs,
        d_coef=d_coef,
        rank_out=rank_out,
        y_fit_out=y_fit_out,
    )
    return Model(design=design, prior=prior, sigma_beta=sigma, derived=derived)


@dataclass(frozen=True)
class ConditionalValidity:
    s_tilde_positive: bool
    error_rate_positive: bool
    block_rates_ok: tuple
    shapes_positive: bool

    @property
    def ok(self):
        return (self.s_tilde_positive and self.error_rate_positive
                and all(self.block_rates_ok) and self.shapes_positive)


def validate_conditionals(model):
    """Report whether the gamma full conditionals are well defined.

    Checks ``s_tilde > 0``, ``2 b_0 + SSE > 0`` and, per block, ``b_i > 0`` or
    ``a_i < b_i = 0``.
    """
    a, b = model.prior.a, model.prior.b
    blocks = tuple(bool(b[i] > 0 or (b[i] == 0 and a[i] < 0)) for i in range(1, model.r + 1))
    st = s_tilde(model)
    return ConditionalValidity(
        s_tilde_positive=st > 0,
        error_rate_positive=bool(2 * b[0] + model.derived.sse > 0),
        block_rates_ok=blocks,
        shapes_positive=bool(np.all(model.shapes > 0)),
    )
