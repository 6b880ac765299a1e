"""Monte Carlo standard errors and summaries for sampler output."""

from dataclasses import asdict, dataclass

import numpy as np

MIN_LENGTH = 100


class SeriesTooShort(ValueError):
    pass


class EmptyAfterBurnin(ValueError):
    pass


def _series(x):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size < MIN_LENGTH:
        raise SeriesTooShort(f"need at least {MIN_LENGTH} draws, got {x.size}")
    return x


def batch_means_mcse(series, batch_size=None):
    """Nonoverlapping batch-means estimate of the CLT variance and the MCSE.

    Uses ``floor(sqrt(m))`` draws per batch by default; leftover draws at the
    start of the series are dropped so every batch is full.
    Returns ``(sigma2_hat, mcse)`` with ``mcse = sqrt(sigma2_hat / m)``.
    """
    x = _series(series)
    m = x.size
    b = int(np.floor(np.sqrt(m))) if batch_size is None else int(batch_size)
    n_batches = m // b
    if b < 1 or n_batches < 2:
        raise SeriesTooShort(f"batch size {b} leaves fewer than two batches")
    used = x[m - n_batches * b:]
    means = used.reshape(n_batches, b).mean(axis=1)
    sigma2 = b * np.sum((means - means.mean()) ** 2) / (n_batches - 1)
    return float(sigma2), float(np.sqrt(sigma2 / m))


def effective_sample_size(series, batch_size=None):
    """``m * var / sigma2_hat`` clamped to ``(0, m]``; ``m`` when ``sigma2_hat`` is 0."""
    x = _series(series)
    m = x.size
    sigma2, _ = batch_means_mcse(x, batch_size)
    var = x.var(ddof=1)
    if sigma2 <= 0 or var <= 0:
        return float(m)
    return float(min(m, max(m * var / sigma2, np.finfo(float).tiny)))


def autocorrelation(series, max_lag=50):
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    denom = x @ x
    max_lag = min(max_lag, x.size - 1)
    if denom == 0:
        return [1.0] + [0.0] * max_lag
    return [float(x[: x.size - k] @ x[k:] / denom) for k in range(max_lag + 1)]


@dataclass
class ChainSummary:
    name: str
    mean: float
    sigma2_hat: float
    mcse: float
    ess: float
    acf: list

    def to_dict(self):
        return asdict(self)


def summarize_series(name, series, max_lag=20):
    x = _series(series)
    sigma2, mcse = batch_means_mcse(x)
    return ChainSummary(name, float(x.mean()), sigma2, mcse, effective_sample_size(x),
                        autocorrelation(x, max_lag))


def between_within_ratio(chains):
    """Pooled-to-within variance ratio for equal-length chains (1 when they agree)."""
    arr = np.asarray(chains, dtype=float)
    n = arr.shape[1]
    within = arr.var(axis=1, ddof=1).mean()
    between = n * arr.mean(axis=1).var(ddof=1)
    if within == 0:
        return 1.0 if between == 0 else float("inf")
    pooled = (n - 1) / n * within + between / n
    return float(pooled / within)


def summarize(store, burn_in=None):
    """Per-chain, per-coordinate summaries after burn-in, plus cross-chain ratios."""
    burn_in = store.burn_in if burn_in is None else burn_in
    kept = [store.draws(i)[burn_in:] for i in range(len(store.chains))]
    kept = [k for k in kept if k.shape[0] > 0]
    if not kept:
        raise EmptyAfterBurnin("no draws left after burn-in")
    names = store.columns
    per_chain = []
    for draws in kept:
        per_chain.append([summarize_series(nm, draws[:, j]).to_dict()
                          for j, nm in enumerate(names)])
    out = {"burn_in": burn_in, "n_chains": len(kept),
           "n_kept": [int(k.shape[0]) for k in kept], "chains": per_chain}
    if len(kept) > 1:
        length = min(k.shape[0] for k in kept)
        stacked = np.stack([k[:length] for k in kept])
        out["cross_chain_ratio"] = {nm: between_within_ratio(stacked[:, :, j])
                                    for j, nm in enumerate(names)}
    return out
