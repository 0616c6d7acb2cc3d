"""Convergence diagnostics for multi-chain MCMC output.

All functions take arrays shaped ``(chains, draws)``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata


def _split(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, float)
    if x.ndim != 2:
        raise ValueError("expected an array of shape (chains, draws)")
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half :]], axis=0)


def _rhat(x: np.ndarray) -> float:
    m, n = x.shape
    if n < 2:
        return np.nan
    chain_mean = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    b = n * chain_mean.var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else np.inf
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def split_rhat(x) -> float:
    """Classic split potential scale reduction factor."""
    return _rhat(_split(x))


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    r = rankdata(x, method="average").reshape(x.shape)
    return ndtri((r - 0.375) / (x.size + 0.25))


def rank_rhat(x) -> float:
    """Rank-normalized split R-hat: max of the bulk and folded versions."""
    s = _split(x)
    if np.ptp(s) == 0:
        return 1.0
    bulk = _rhat(_rank_normalize(s))
    folded = np.abs(s - np.median(s))
    tail = _rhat(_rank_normalize(folded)) if np.ptp(folded) > 0 else 1.0
    return max(bulk, tail)


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    size = 1 << (2 * n - 1).bit_length()
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, size, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=-1)[..., :n]
    return acov / n


def ess(x) -> float:
    """Effective sample size via Geyer's initial monotone sequence over chains."""
    x = np.asarray(x, float)
    m, n = x.shape
    if n < 4:
        return float(m * n)
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    if w == 0:
        return float(m * n)
    var_plus = w * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # paired sums, truncated at the first negative pair, made monotone
    pairs = rho[: n - n % 2].reshape(-1, 2).sum(axis=1)
    neg = np.nonzero(pairs < 0)[0]
    pairs = pairs[: neg[0]] if neg.size else pairs
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def bulk_ess(x) -> float:
    return ess(_rank_normalize(_split(x)))


def mcse_mean(x) -> float:
    x = np.asarray(x, float)
    return float(x.std(ddof=1) / np.sqrt(ess(x)))
