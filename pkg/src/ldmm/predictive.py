"""Posterior-predictive loss simulation and empirical risk measures.

For a claim with a known description but unknown amount, each retained
posterior draw contributes one simulated loss: a component is picked from
the description-only membership probabilities under that draw's
parameters, then an amount is drawn from that component's loss family.
VaR and CTE are computed directly on the resulting sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from ldmm.corpus import Document
from ldmm.gibbs_fit import PosteriorDraws, _sample_rows
from ldmm.loss_models import GB2Params, LognormalParams, ParetoParams


@dataclass
class PredictiveSample:
    """Per-draw simulated losses and the component picked for each draw."""

    losses: np.ndarray
    topic_draws: np.ndarray

    def __post_init__(self) -> None:
        self.losses = np.asarray(self.losses, dtype=float)
        self.topic_draws = np.asarray(self.topic_draws)
        if self.losses.shape != self.topic_draws.shape:
            raise ValueError("losses and topic_draws must have equal length")
        if np.any(self.losses <= 0):
            raise ValueError("predictive losses must be positive")


class CteResult(NamedTuple):
    value: float
    degenerate: bool


class _DrawsCache:
    """Per-draws precomputation shared across predicted documents."""

    def __init__(self, draws: PosteriorDraws) -> None:
        with np.errstate(divide="ignore"):
            self.log_theta = np.log(draws.thetas)  # (T, K)
            self.log_psi = np.log(draws.psis)  # (T, K, |V|)
        T, K = draws.thetas.shape
        self.samplers = []
        for k in range(K):
            per_draw = [draws.components[t][k] for t in range(T)]
            first = per_draw[0]
            if isinstance(first, LognormalParams):
                mu = np.array([c.mu for c in per_draw])
                sigma = np.array([c.sigma for c in per_draw])

                def sampler(rng, m, mu=mu, sigma=sigma):
                    return rng.lognormal(mu[m], sigma[m])

            elif isinstance(first, ParetoParams):
                shape = np.array([c.shape for c in per_draw])
                smin = np.array([c.scale_min for c in per_draw])

                def sampler(rng, m, shape=shape, smin=smin):
                    u = rng.uniform(size=int(m.sum()))
                    return smin[m] * np.power(1.0 - u, -1.0 / shape[m])

            elif isinstance(first, GB2Params):
                a = np.array([c.a for c in per_draw])
                b = np.array([c.b for c in per_draw])
                p = np.array([c.p for c in per_draw])
                q = np.array([c.q for c in per_draw])

                def sampler(rng, m, a=a, b=b, p=p, q=q):
                    w = rng.beta(p[m], q[m])
                    return b[m] * np.power(w / (1.0 - w), 1.0 / a[m])

            else:
                raise TypeError(f"unknown component type {type(first)!r}")
            self.samplers.append(sampler)


def _cache(draws: PosteriorDraws) -> _DrawsCache:
    cache = getattr(draws, "_predictive_cache", None)
    if cache is None:
        cache = _DrawsCache(draws)
        draws._predictive_cache = cache
    return cache


def predict(doc: Document, draws: PosteriorDraws, rng: np.random.Generator) -> PredictiveSample:
    """Simulate one predictive loss per retained draw for one document.

    The document must already be mapped onto the training vocabulary
    (unseen words dropped upstream). Membership probabilities use the
    description only, never a loss value.
    """
    if draws.n_draws == 0:
        raise ValueError("no retained draws to predict from")
    cache = _cache(draws)
    if doc.word_ids.size and doc.word_ids[-1] >= draws.psis.shape[2]:
        raise ValueError("document refers to a word outside the model vocabulary")
    scores = cache.log_theta.copy()
    if doc.word_ids.size:
        scores += np.einsum(
            "tkw,w->tk", cache.log_psi[:, :, doc.word_ids], doc.counts.astype(float)
        )
    lse = logsumexp(scores, axis=1)
    if np.any(np.isneginf(lse)):
        raise FloatingPointError("document impossible under every retained draw")
    zt = _sample_rows(np.exp(scores - lse[:, None]), rng)
    y = np.empty(draws.n_draws)
    for k, sampler in enumerate(cache.samplers):
        m = zt == k
        if m.any():
            y[m] = sampler(rng, m)
    return PredictiveSample(y, zt)


# ---------------------------------------------------------------------------
# risk measures


def value_at_risk(losses, level: float) -> float:
    """Smallest sample member whose exceedance fraction is at most 1 - level.

    This is an order statistic of the sample, never an interpolated
    quantile.
    """
    a = np.sort(np.asarray(losses, dtype=float))
    m = a.size
    if m == 0:
        raise ValueError("empty sample")
    if not (0.0 < level < 1.0):
        raise ValueError("level must lie in (0, 1)")
    # largest count of strict exceedances still allowed; the small slack
    # absorbs float error in m * (1 - level)
    k_allowed = int(math.floor(m * (1.0 - level) + 1e-9))
    k_allowed = min(k_allowed, m - 1)
    return float(a[m - k_allowed - 1])


def cte(losses, level: float) -> CteResult:
    """Mean of the sample values strictly above the VaR at this level.

    With no strict exceedances (a degenerate tail) the VaR itself is
    returned with ``degenerate`` set.
    """
    a = np.asarray(losses, dtype=float)
    v = value_at_risk(a, level)
    tail = a[a > v]
    if tail.size == 0:
        return CteResult(v, True)
    return CteResult(float(tail.mean()), False)


def var_coverage(test_losses, per_claim_vars) -> float:
    """Fraction of true losses strictly below their per-claim VaR."""
    losses = getattr(test_losses, "losses", test_losses)
    losses = np.asarray(losses, dtype=float)
    vars_ = np.asarray(per_claim_vars, dtype=float)
    if losses.shape != vars_.shape:
        raise ValueError("losses and per-claim VaRs must have equal length")
    if losses.size == 0:
        raise ValueError("empty test set")
    return float(np.mean(losses < vars_))


def _level_tag(level: float) -> str:
    return f"{level * 100:g}"


def predict_table(docs, draws: PosteriorDraws, seed: int, levels=(0.95, 0.99)):
    """Per-document predictive summaries.

    Each document gets its own deterministic substream derived from
    (seed, document index). Returns a list of dicts with the predictive
    mean, VaR and CTE at every level, the CTE degeneracy flags, and the
    1-based modal component.
    """
    rows = []
    for i, doc in enumerate(docs):
        rng = np.random.default_rng([seed, i])
        ps = predict(doc, draws, rng)
        row = {
            "mean": float(ps.losses.mean()),
            "modal_topic": int(np.bincount(ps.topic_draws, minlength=draws.K).argmax()) + 1,
        }
        for lv in levels:
            tag = _level_tag(lv)
            row[f"var_{tag}"] = value_at_risk(ps.losses, lv)
            c = cte(ps.losses, lv)
            row[f"cte_{tag}"] = c.value
            row[f"cte_{tag}_degenerate"] = c.degenerate
        rows.append(row)
    return rows
