"""Random designs and priors for tests, benchmarks and demos."""

import numpy as np

from .model import GlmmDesign, PriorSpec, build_model


def random_x(rng, n, p, kind="full"):
    """Fixed-effect matrix: ``"full"`` (generic), ``"deficient"`` or ``"zero"``."""
    if kind == "zero":
        return np.zeros((n, p))
    if kind == "full":
        return rng.standard_normal((n, p))
    if kind == "deficient":
        k = max(1, min(n, p) // 2)
        return rng.standard_normal((n, k)) @ rng.standard_normal((k, p))
    raise ValueError(kind)


def incidence(groups, n_levels):
    z = np.zeros((len(groups), n_levels))
    z[np.arange(len(groups)), groups] = 1.0
    return z


def random_z_blocks(rng, n, q_sizes, duplicate=False, kind="gaussian"):
    blocks = []
    for qi in q_sizes:
        if kind == "incidence":
            groups = np.concatenate([np.arange(qi), rng.integers(0, qi, max(0, n - qi))])[:n]
            zb = incidence(rng.permutation(groups), qi)
        else:
            zb = rng.standard_normal((n, qi))
        blocks.append(zb)
    if duplicate:
        b = blocks[-1]
        blocks[-1] = np.hstack([b, b[:, :1]])
    return blocks


def random_model(rng, n, p, q_sizes, x_kind="full", duplicate_z=False, z_kind="gaussian",
                 a=None, b=None, sigma_scale=None):
    x = random_x(rng, n, p, x_kind)
    blocks = random_z_blocks(rng, n, q_sizes, duplicate_z, z_kind)
    r = len(blocks)
    y = rng.standard_normal(n) * 2.0 + 1.0
    mu = rng.standard_normal(p)
    if sigma_scale is None:
        g = rng.standard_normal((p, p))
        sigma = g @ g.T / p + 0.5 * np.eye(p)
    else:
        sigma = float(sigma_scale)
    a = rng.uniform(0.5, 3.0, r + 1) if a is None else a
    b = rng.uniform(0.5, 3.0, r + 1) if b is None else b
    return build_model(GlmmDesign(y, x, blocks), PriorSpec(mu, sigma, a, b))


def one_way_model(n_groups=5, per_group=2, a=0.5, b=1.0, seed=0, sigma_scale=10.0):
    """Balanced one-way random-effects model with an intercept."""
    rng = np.random.default_rng(seed)
    groups = np.repeat(np.arange(n_groups), per_group)
    z = incidence(groups, n_groups)
    n = z.shape[0]
    y = 1.0 + rng.standard_normal(n_groups)[groups] + rng.standard_normal(n)
    x = np.ones((n, 1))
    prior = PriorSpec(np.zeros(1), sigma_scale, np.full(2, a), np.full(2, b))
    return build_model(GlmmDesign(y, x, [z]), prior)
