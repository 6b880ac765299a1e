"""Numerical checks of the drift analysis.

Matrix inequalities behind the geometric drift condition are evaluated at
concrete ``(model, lambda)`` points, and the drift ratio
``E[v(lambda~) | lambda] / v(lambda)`` is estimated by Monte Carlo.  The drift
constant ``L`` has no closed form and is never computed; contraction is only
asserted far out along rays where ``v`` dominates any fixed constant.
"""

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import qmc

from .certify import check_s
from .gibbs import PrecisionState, draw_theta_batch, factorize_lambda, conditional_theta_moments
from .special import gamma_ratio

LEMMA_TOL = 1e-8


@dataclass(frozen=True)
class DriftParams:
    s: float
    c: float
    alpha: float

    def __post_init__(self):
        if not (self.c > 0 and self.alpha > 0 and self.s > 0):
            raise ValueError("s, c and alpha must be positive")

    @classmethod
    def from_certificate(cls, cert, c=None):
        if cert.witness_s is None or cert.alpha is None:
            raise ValueError("certificate carries no drift witnesses")
        return cls(cert.witness_s, cert.witness_c if c is None else c, cert.alpha)


@dataclass
class LemmaSlack:
    lemma_id: str
    lambda_point: list
    lhs: float
    rhs: float
    slack: float
    normalized_slack: float

    @property
    def passed(self):
        return self.normalized_slack >= -LEMMA_TOL

    def to_dict(self):
        out = asdict(self)
        out["passed"] = self.passed
        return out


@dataclass
class DriftEstimate:
    lambda_point: list
    v_value: float
    ev_estimate: float
    mc_std_error: float
    ratio: float
    ray: str = None
    tail: bool = False

    def to_dict(self):
        return asdict(self)


def drift_v(lam, params):
    """``alpha (l_e^c + l_e^{-s}) + sum_i (l_ui^c + l_ui^{-s})``."""
    s, c, alpha = params.s, params.c, params.alpha
    le, lu = lam.lambda_e, lam.lambda_u
    return float(alpha * (le ** c + le ** -s) + np.sum(lu ** c + lu ** -s))


def _moment_weights(model, params):
    shapes = model.shapes
    up = np.array([gamma_ratio(a, params.c) for a in shapes])
    down = np.array([gamma_ratio(a, -params.s) for a in shapes])
    scale = np.ones(model.r + 1)
    scale[0] = params.alpha
    return up * scale, down * scale


def inner_moments_batch(model, beta, u, params):
    """``E[v(lambda~) | theta]`` for each row of a batch of theta draws (closed form)."""
    check_s(model, params.s)
    b = model.prior.b
    theta = np.hstack([beta, u])
    resid = model.y[None, :] - theta @ model.w.T
    rates = np.empty((theta.shape[0], model.r + 1))
    rates[:, 0] = b[0] + 0.5 * np.einsum("ij,ij->i", resid, resid)
    for i, sl in enumerate(model.block_slices, start=1):
        rates[:, i] = b[i] + 0.5 * np.einsum("ij,ij->i", u[:, sl], u[:, sl])
    up, down = _moment_weights(model, params)
    return rates ** -params.c @ up + rates ** params.s @ down


def inner_lambda_moments(model, theta, params):
    return float(inner_moments_batch(model, theta.beta[None, :], theta.u[None, :], params)[0])


def expected_drift(model, lam, params, n_mc=10_000, rng=None, chunk=2048):
    """Monte Carlo estimate of ``E[v(lambda~) | lambda]`` with its standard error."""
    if n_mc < 100:
        raise ValueError("n_mc must be at least 100")
    rng = np.random.default_rng() if rng is None else rng
    fac = factorize_lambda(model, lam)
    vals = []
    left = n_mc
    while left > 0:
        m = min(chunk, left)
        beta, u = draw_theta_batch(model, fac, rng, m)
        vals.append(inner_moments_batch(model, beta, u, params))
        left -= m
    vals = np.concatenate(vals)
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(n_mc))
    v = drift_v(lam, params)
    return DriftEstimate(lam.as_vector().tolist(), v, mean, se, mean / v)


def _lam_list(lam):
    return lam.as_vector().tolist()


def verify_lemma1(model, lam, fac=None):
    """Block traces of ``Q^{-1}`` against their bound."""
    fac = fac or factorize_lambda(model, lam)
    d = model.derived
    row_sq = np.sum(fac.q_factor ** 2, axis=1)
    lhs = np.array([row_sq[sl].sum() for sl in model.block_slices])
    rhs = ((d.d_max ** 2 + 1.0 / lam.lambda_e) * d.block_trace_pinv
           + d.block_trace_complement * np.sum(1.0 / lam.lambda_u))
    gap = rhs - lhs
    norm = gap / np.maximum(np.abs(rhs), np.finfo(float).tiny)
    i = int(np.argmin(norm))
    return LemmaSlack("lemma1", _lam_list(lam), float(lhs[i]), float(rhs[i]),
                      float(gap.min()), float(norm[i]))


def trace_w_var_w(model, lam, fac=None, dense=False):
    """``tr(W Var(theta | lambda) W')``.

    The default uses ``Var(W theta) = X T^{-1} X' + M Z Q^{-1} Z' M``, which has
    no cancellation; ``dense=True`` contracts the full block covariance instead.
    """
    fac = fac or factorize_lambda(model, lam)
    if dense:
        _, cov = conditional_theta_moments(model, lam, fac)
        w = model.w
        return float(np.einsum("ij,jk,ik->", w, cov, w))
    d = model.derived
    xt_part = float(np.sum(d.d_coef ** 2 * fac.g_diag))
    mz = fac.h_diag[:, None] * (d.z_tilde @ fac.q_factor)
    return xt_part + float(np.sum(mz ** 2))


def verify_lemma2(model, lam, fac=None, dense=False):
    d = model.derived
    lhs = trace_w_var_w(model, lam, fac, dense)
    rhs = d.rank_z / lam.lambda_e + d.d_max ** 2 * d.rank_z + d.trace_xsx
    gap = rhs - lhs
    return LemmaSlack("lemma2", _lam_list(lam), lhs, float(rhs), float(gap),
                      float(gap / max(abs(rhs), np.finfo(float).tiny)))


def verify_lemma4(model, lam, fac=None):
    """Loewner lower bound on each diagonal block of ``Q^{-1}``."""
    fac = fac or factorize_lambda(model, lam)
    psi = model.derived.psi_max
    worst = None
    for i, sl in enumerate(model.block_slices):
        f = fac.q_factor[sl]
        block = f @ f.T
        bound = 1.0 / (psi * lam.lambda_e + lam.lambda_u[i])
        eig = np.linalg.eigvalsh(block)
        slack = float(eig[0] - bound)
        norm = slack / eig[-1]
        if worst is None or norm < worst.normalized_slack:
            worst = LemmaSlack("lemma4", _lam_list(lam), bound, float(eig[0]), slack, float(norm))
    return worst


def dense_m_lambda(model, lam):
    """``I - lambda_e X T^{-1} X'`` formed directly from ``T``."""
    x = model.x
    t = lam.lambda_e * x.T @ x + np.linalg.inv(model.sigma_beta)
    return np.eye(model.n) - lam.lambda_e * x @ np.linalg.solve(t, x.T)


def verify_mlambda(model, lam):
    """Spectral representation of ``M_lambda`` and its Loewner sandwich.

    Returns three slacks: representation (``1e-9 N - residual``), lower and
    upper sandwich (smallest eigenvalue of the difference).
    """
    d = model.derived
    m_dense = dense_m_lambda(model, lam)
    m_dense = 0.5 * (m_dense + m_dense.T)
    u = d.svd_xtilde[0]
    h = 1.0 / (lam.lambda_e * d.d_obs ** 2 + 1.0)
    resid = float(np.linalg.norm(m_dense - (u * h) @ u.T))
    allowed = 1e-9 * model.n
    rep = LemmaSlack("mlambda_rep", _lam_list(lam), resid, allowed, allowed - resid,
                     (allowed - resid) / allowed)
    eig = np.linalg.eigvalsh(m_dense)
    lower = 1.0 / (lam.lambda_e * d.d_max ** 2 + 1.0)
    low = LemmaSlack("mlambda_lower", _lam_list(lam), lower, float(eig[0]),
                     float(eig[0] - lower), float((eig[0] - lower) / eig[-1]))
    up = LemmaSlack("mlambda_upper", _lam_list(lam), float(eig[-1]), 1.0,
                    float(1.0 - eig[-1]), float(1.0 - eig[-1]))
    return rep, low, up


def verify_all(model, lam):
    fac = factorize_lambda(model, lam)
    return [verify_lemma1(model, lam, fac), verify_lemma2(model, lam, fac),
            verify_lemma4(model, lam, fac), *verify_mlambda(model, lam)]


def random_lambdas(model, n, rng, decades=6.0):
    """Precision vectors with log-uniform components in ``[10^-decades, 10^decades]``."""
    return [PrecisionState.from_vector(10.0 ** rng.uniform(-decades, decades, model.r + 1))
            for _ in range(n)]


@dataclass
class VerifyReport:
    n_checks: int
    violations: list
    worst: dict

    @property
    def ok(self):
        return not self.violations

    def to_dict(self):
        return {"n_checks": self.n_checks, "ok": self.ok,
                "violations": [v.to_dict() for v in self.violations],
                "worst": {k: v.to_dict() for k, v in sorted(self.worst.items())}}


def verify_suite(model, lambdas):
    """Run every lemma check at each precision point; track violations and worst slacks."""
    worst, violations, count = {}, [], 0
    for lam in lambdas:
        for res in verify_all(model, lam):
            count += 1
            if not res.passed:
                violations.append(res)
            cur = worst.get(res.lemma_id)
            if cur is None or res.normalized_slack < cur.normalized_slack:
                worst[res.lemma_id] = res
    return VerifyReport(count, violations, worst)


@dataclass
class ScanReport:
    sup_u_mean: list
    sup_resid: float
    sup_c: list
    edge_max: dict
    interior_max: dict
    all_finite: bool
    n_points: int
    decades: float
    per_point: list = field(default_factory=list, repr=False)

    @property
    def no_edge_trend(self):
        return all(self.edge_max[k] <= 2.0 * self.interior_max[k] + 1e-12 for k in self.edge_max)

    def to_dict(self):
        out = asdict(self)
        out.pop("per_point")
        out["no_edge_trend"] = self.no_edge_trend
        return out


def scan_points(dim, decades=8.0, n_points=2000):
    """Log10 precision grid: all corners, every axis extreme, then a Halton fill."""
    pts = [np.array(c, dtype=float) for c in np.ndindex(*(3,) * dim)]
    pts = [(c - 1.0) * decades for c in pts]  # {-g, 0, g}^dim
    fill = n_points - len(pts)
    if fill > 0:
        halton = qmc.Halton(d=dim, scramble=False).random(fill + 1)[1:]
        pts.extend(list((2 * halton - 1) * decades))
    return np.array(pts[:max(n_points, len(pts))])


def boundedness_quantities(model, lam):
    """``(||E[u_i|lam]|| / sqrt(q_i), ||y - W E[theta|lam]||, C_j(lam) for j <= rank X)``."""
    fac = factorize_lambda(model, lam)
    d = model.derived
    u_norm = np.array([np.linalg.norm(fac.u_mean[sl]) / np.sqrt(sl.stop - sl.start)
                       for sl in model.block_slices])
    resid = float(np.linalg.norm(model.y - model.w @ fac.theta_mean))
    k = d.rank_x
    # (z_j z_j' + sum_{l != j} z_l z_l' h_l/h_j + Lambda/(h_j lam_e))^{-1} = lam_e h_j Q^{-1}
    zt_k = d.z_tilde[:k].T
    solved = fac.q_factor @ (fac.q_factor.T @ zt_k)
    c_vals = lam.lambda_e * fac.h_diag[:k] * np.linalg.norm(solved, axis=0)
    return u_norm, resid, c_vals


def boundedness_scan(model, decades=8.0, n_points=2000):
    pts = scan_points(model.r + 1, decades, n_points)
    edge = np.any(np.abs(pts) > decades - 1.0, axis=1)
    rows = []
    for logp in pts:
        lam = PrecisionState.from_vector(10.0 ** logp)
        u_norm, resid, c_vals = boundedness_quantities(model, lam)
        rows.append((u_norm, resid, c_vals))
    u_all = np.array([r[0] for r in rows])
    res_all = np.array([r[1] for r in rows])
    c_all = np.array([r[2] for r in rows]).reshape(len(rows), -1)
    series = {"resid": res_all}
    for i in range(model.r):
        series[f"u_{i + 1}"] = u_all[:, i]
    for j in range(c_all.shape[1]):
        series[f"C_{j + 1}"] = c_all[:, j]
    finite = all(np.all(np.isfinite(v)) for v in series.values())
    edge_max = {k: float(v[edge].max()) for k, v in series.items()}
    interior_max = {k: float(v[~edge].max()) for k, v in series.items()}
    per_point = [{"log10_lambda": p.tolist(), "u": r[0].tolist(), "resid": r[1],
                  "C": r[2].tolist()} for p, r in zip(pts, rows)]
    return ScanReport(u_all.max(axis=0).tolist(), float(res_all.max()),
                      c_all.max(axis=0).tolist() if c_all.size else [],
                      edge_max, interior_max, finite, len(pts), decades, per_point)


def default_rays(model):
    """Every precision component sent to 0 and to infinity, the others held at 1."""
    return [(i, sign) for i in range(model.r + 1) for sign in (-1, 1)]


def ray_label(i, sign):
    name = "lambda_e" if i == 0 else f"lambda_u_{i}"
    return f"{name}->{'0' if sign < 0 else 'inf'}"


def _ray_point(model, i, sign, exponent):
    vec = np.ones(model.r + 1)
    vec[i] = 10.0 ** (sign * exponent)
    return PrecisionState.from_vector(vec)


@dataclass
class ContractionProfile:
    estimates: list
    threshold: float
    baseline_v: float

    @property
    def tail_estimates(self):
        return [e for e in self.estimates if e.tail]

    @property
    def tail_contracts(self):
        tails = self.tail_estimates
        return bool(tails) and all(e.ratio + 3 * e.mc_std_error / e.v_value < 1 for e in tails)

    def to_dict(self):
        return {"threshold": self.threshold, "baseline_v": self.baseline_v,
                "tail_contracts": self.tail_contracts,
                "estimates": [e.to_dict() for e in self.estimates]}


def contraction_profile(model, params, rays=None, n_mc=10_000, rng=None,
                        threshold=1e6, extra_decades=2, max_decades=400):
    """Drift ratios along rays where ``v -> infinity``.

    Along each ray the exponent grows a decade at a time until
    ``v >= threshold * v(1, ..., 1)``; that point and ``extra_decades`` further
    ones are flagged as tail points.  A mid-ray point is estimated for
    reference but never asserted on.
    """
    rng = np.random.default_rng() if rng is None else rng
    rays = default_rays(model) if rays is None else rays
    v0 = drift_v(PrecisionState.from_vector(np.ones(model.r + 1)), params)
    plan = []
    for i, sign in rays:
        e = 1
        while drift_v(_ray_point(model, i, sign, e), params) < threshold * v0:
            e += 1
            if e > max_decades:
                raise ValueError(f"ray {ray_label(i, sign)} never reaches the threshold")
        plan.append((i, sign, max(e // 2, 1), False))
        plan.extend((i, sign, e + j, True) for j in range(extra_decades + 1))
    streams = rng.spawn(len(plan))
    out = []
    for (i, sign, e, tail), sub in zip(plan, streams):
        lam = _ray_point(model, i, sign, e)
        est = expected_drift(model, lam, params, n_mc, sub)
        est.ray = ray_label(i, sign)
        est.tail = tail
        out.append(est)
    return ContractionProfile(out, threshold, v0)
