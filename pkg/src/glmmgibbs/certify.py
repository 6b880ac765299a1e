"""Mechanical geometric-ergodicity certificates for the block Gibbs sampler.

Four sufficient conditions are checked, in this order:

1. the closed-form corollary for the prior family at hand (proper or improper),
2. ``min(a_0, ..., a_r) > 1`` (proper priors only),
3. the general condition: ``s_tilde > 0``, ``2 b_0 + SSE > 0``, per block
   ``b_i > 0`` or ``a_i < b_i = 0``, and some ``s in (0, 1] ∩ (0, s_tilde)``
   with :func:`hypoth_value` below one, located by a grid search.

The first route that succeeds is reported.  Strict inequalities are compared
exactly; every condition's slack is recorded so fragile passes are visible.
"""

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .model import s_tilde as _s_tilde
from .special import gamma_ratio

ROUTES = ("Corollary1", "Corollary2", "Proposition4_1", "Proposition3_1_search", "Failed")

# block traces below this are rank-deficiency round-off, not structure
_TRACE_ZERO = 1e-9


class CertifyError(ValueError):
    pass


class WrongPriorClass(CertifyError):
    pass


class SOutOfRange(CertifyError):
    pass


class DenominatorNonpositive(CertifyError):
    pass


class NoValidC(CertifyError):
    pass


class RhoNotContractive(CertifyError):
    pass


@dataclass
class ConditionReport:
    name: str
    passed: bool
    margins: dict
    messages: list = field(default_factory=list)


@dataclass
class BranchConstants:
    c: float
    alpha: float
    rho: float
    rho_prime: float
    alpha_bound: float
    alpha_bound_prime: float
    rh12_max: float
    b_zero: list


@dataclass
class Certificate:
    route: str
    witness_s: float = None
    witness_value: float = None
    witness_c: float = None
    alpha: float = None
    alpha_lower: float = None
    rho: float = None
    rho_prime: float = None
    margins: dict = field(default_factory=dict)
    messages: list = field(default_factory=list)

    @property
    def certified(self):
        return self.route != "Failed"

    def to_dict(self):
        out = asdict(self)
        out["certified"] = self.certified
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data.pop("certified", None)
        return cls(**data)


def _rank_terms(model):
    d = model.derived
    tc = np.where(d.block_trace_complement > _TRACE_ZERO, d.block_trace_complement, 0.0)
    return d.rank_z, tc, d.block_trace_pinv


def _power(base, s):
    # 0**s is taken as 0 for every s > 0 (limit convention)
    return 0.0 if base <= 0 else base ** s


def check_s(model, s):
    st = _s_tilde(model)
    if not (0 < s <= 1 and s < st):
        raise SOutOfRange(f"s={s} is outside (0, 1] ∩ (0, s_tilde={st:.6g})")


def hypoth_terms(model, s):
    """The two quantities whose maximum must fall below one, at exponent ``s``."""
    check_s(model, s)
    shapes = model.shapes
    rank_z, tc, _ = _rank_terms(model)
    first = gamma_ratio(shapes[0], -s) * _power(rank_z / 2.0, s)
    second = sum(gamma_ratio(shapes[i + 1], -s) * _power(tc[i] / 2.0, s)
                 for i in range(model.r))
    return first, second


def hypoth_value(model, s):
    return max(hypoth_terms(model, s))


def _search_grid(cap):
    low = np.geomspace(cap * 1e-4, 0.1 * cap, 256, endpoint=False)
    high = np.linspace(0.1 * cap, cap, 256)
    return np.concatenate([low, high])


def find_witness_s(model):
    """Smallest-value ``s`` on a 512-point grid plus a bounded local refinement.

    Returns ``(s, hypoth_value(s))`` when the value is below one, else ``None``.
    """
    st = _s_tilde(model)
    if st <= 0:
        return None
    cap = 1.0 if st > 1 else st * (1 - 1e-9)
    grid = _search_grid(cap)
    values = np.array([hypoth_value(model, s) for s in grid])
    i = int(np.argmin(values))
    best_s, best_v = float(grid[i]), float(values[i])
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.size - 1)]
    if hi > lo:
        res = minimize_scalar(lambda t: hypoth_value(model, t), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-12})
        if res.fun < best_v:
            best_s, best_v = float(res.x), float(res.fun)
    if best_v < 1:
        return best_s, best_v
    return None


def delta(model, s, alpha):
    """Coefficient multiplying ``alpha * lambda_e^{-s}`` in the drift bound."""
    first, _ = hypoth_terms(model, s)
    return first + _pinv_sum(model, s) / alpha


def _pinv_sum(model, s):
    shapes = model.shapes
    _, _, tp = _rank_terms(model)
    return sum(gamma_ratio(shapes[i + 1], -s) * _power(tp[i] / 2.0, s) for i in range(model.r))


def alpha_lower_bound(model, s):
    """Threshold above which ``delta(alpha) < 1``."""
    first, _ = hypoth_terms(model, s)
    if first >= 1:
        raise DenominatorNonpositive(f"first term {first:.6g} >= 1 at s={s}")
    return _pinv_sum(model, s) / (1.0 - first)


def _rh12_factor(shape_i, q_i, c):
    return gamma_ratio(shape_i, c) * gamma_ratio(q_i / 2.0, -c)


def improper_branch_constants(model, s, safety=1.05):
    """Pick ``c`` and ``alpha`` for the drift function and return the contraction factors.

    ``c`` is the midpoint of ``(0, min(1/2, a_tilde))`` where
    ``a_tilde = -max{a_i : b_i = 0}`` (``a_tilde = inf`` when no ``b_i`` is zero,
    giving ``c = 1/4``).  ``alpha`` is ``safety`` times the largest lower bound.
    """
    a, b = model.prior.a, model.prior.b
    shapes = model.shapes
    zero_b = [i for i in range(1, model.r + 1) if b[i] == 0]
    a_tilde = -max(a[i] for i in zero_b) if zero_b else np.inf
    if a_tilde <= 0:
        raise NoValidC(f"a_tilde={a_tilde:.6g} <= 0: no admissible c")
    c = 0.5 * min(0.5, a_tilde)
    factors = [_rh12_factor(shapes[i], model.q_sizes[i - 1], c) for i in zero_b]
    bound = alpha_lower_bound(model, s)
    bound_prime = model.derived.psi_max ** c * sum(factors) if zero_b else 0.0
    alpha = safety * max(bound, bound_prime)
    if alpha <= 0:
        alpha = 1.0
    _, second = hypoth_terms(model, s)
    rho = max(delta(model, s, alpha), second)
    rh12_max = max(factors) if zero_b else 0.0
    rho_prime = max(bound_prime / alpha, rh12_max) if zero_b else 0.0
    consts = BranchConstants(c, alpha, rho, rho_prime, bound, bound_prime, rh12_max, zero_b)
    if rho >= 1 or rho_prime >= 1:
        raise RhoNotContractive(f"rho={rho:.6g}, rho'={rho_prime:.6g}")
    return consts


def _require(model, proper):
    if model.prior.is_proper != proper:
        kind = "proper" if proper else "improper"
        raise WrongPriorClass(f"this check applies to {kind} priors only")


def _common_rank_margins(model):
    n, q = model.n, model.q
    rank_z = model.derived.rank_z
    a = model.prior.a
    block_shapes = model.shapes[1:]
    return {
        "a0_vs_rank": float(a[0] - 0.5 * (rank_z - n + 2)),
        "min_shape_vs_deficiency": float(block_shapes.min() - (0.5 * (q - rank_z) + 1)),
    }


def _block_rate_margin(a_i, b_i):
    if b_i > 0:
        return float(b_i)
    if b_i == 0:
        return float(-a_i)
    return float(b_i)


def check_corollary_proper(model):
    _require(model, True)
    m = _common_rank_margins(model)
    return ConditionReport("Corollary1", all(v > 0 for v in m.values()), m)


def check_corollary_improper(model):
    _require(model, False)
    a, b = model.prior.a, model.prior.b
    m = {"error_rate": float(2 * b[0] + model.derived.sse)}
    m["block_rates"] = min(_block_rate_margin(a[i], b[i]) for i in range(1, model.r + 1))
    m.update(_common_rank_margins(model))
    return ConditionReport("Corollary2", all(v > 0 for v in m.values()), m)


def check_proposition_alt(model):
    _require(model, True)
    m = {"min_a_vs_one": float(model.prior.a.min() - 1.0)}
    return ConditionReport("Proposition4_1", m["min_a_vs_one"] > 0, m)


def check_general(model):
    """Conditions 1-3 of the general criterion plus the witness search."""
    a, b = model.prior.a, model.prior.b
    m = {
        "s_tilde": float(_s_tilde(model)),
        "error_rate": float(2 * b[0] + model.derived.sse),
        "block_rates": min(_block_rate_margin(a[i], b[i]) for i in range(1, model.r + 1)),
    }
    msgs = []
    found = find_witness_s(model) if m["s_tilde"] > 0 else None
    if found is None:
        m["hypoth"] = float("-inf") if m["s_tilde"] <= 0 else float(
            1.0 - min(hypoth_value(model, s) for s in _search_grid(min(1.0, m["s_tilde"]) * (1 - 1e-9))))
        msgs.append("no s in (0, min(1, s_tilde)) brings the hypothesis below 1")
    else:
        m["hypoth"] = float(1.0 - found[1])
    return ConditionReport("Proposition3_1_search", all(v > 0 for v in m.values()), m, msgs), found


def certify(model):
    """Try each route in order and return the first success (or ``Failed``)."""
    cert = Certificate(route="Failed")
    proper = model.prior.is_proper
    reports = []
    if proper:
        reports.append(check_corollary_proper(model))
        reports.append(check_proposition_alt(model))
    else:
        reports.append(check_corollary_improper(model))
    general, found = check_general(model)
    reports.append(general)

    for rep in reports:
        for k, v in rep.margins.items():
            cert.margins[f"{rep.name}.{k}"] = v
        cert.messages.extend(f"{rep.name}: {msg}" for msg in rep.messages)

    if found is not None:
        cert.witness_s, cert.witness_value = found
        try:
            consts = improper_branch_constants(model, cert.witness_s)
        except CertifyError as exc:
            cert.messages.append(f"drift constants: {exc}")
            consts = None
        if consts is not None:
            cert.witness_c = consts.c
            cert.alpha = consts.alpha
            cert.alpha_lower = max(consts.alpha_bound, consts.alpha_bound_prime)
            cert.rho = consts.rho
            cert.rho_prime = consts.rho_prime
        elif general.passed:
            general.passed = False

    for rep in reports:
        if rep.passed:
            cert.route = rep.name
            break
    return cert
