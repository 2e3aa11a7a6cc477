"""Model comparison metrics: DIC, NLL/AIC/BIC, Wasserstein, perplexity,
topic stability, and the report container the CLI serializes.

All metrics are pure functions of fitted artifacts (MAP parameters,
posterior draws) and corpora; nothing here mutates its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, rel_entr

from ldmm.corpus import Corpus, Vocabulary
from ldmm.gibbs_fit import PosteriorDraws
from ldmm.loss_models import loss_sample
from ldmm.mixture_core import (
    MixtureParams,
    doc_only_log_scores,
    observed_data_deviance,
)


@dataclass
class MetricReport:
    nll: float
    aic: float
    bic: float
    dic: float
    p_d: float
    perplexity: float
    wasserstein: dict
    stability: list  # per component: {"euclidean": ..., "kl": ...}
    nll_per_obs: float
    aic_per_obs: float
    bic_per_obs: float
    param_count: int
    n_train: int
    n_test: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "nll": self.nll,
            "aic": self.aic,
            "bic": self.bic,
            "dic": self.dic,
            "p_d": self.p_d,
            "perplexity": self.perplexity,
            "wasserstein": self.wasserstein,
            "stability": self.stability,
            "nll_per_obs": self.nll_per_obs,
            "aic_per_obs": self.aic_per_obs,
            "bic_per_obs": self.bic_per_obs,
            "param_count": self.param_count,
            "n_train": self.n_train,
            "n_test": self.n_test,
        }
        out.update(self.extra)
        return out

    def csv_header_and_row(self):
        """Flat single-row view for cross-model comparison tables."""
        header = [
            "nll",
            "nll_per_obs",
            "aic",
            "aic_per_obs",
            "bic",
            "bic_per_obs",
            "dic",
            "p_d",
            "perplexity",
            "param_count",
            "n_train",
            "n_test",
        ]
        row = [
            self.nll,
            self.nll_per_obs,
            self.aic,
            self.aic_per_obs,
            self.bic,
            self.bic_per_obs,
            self.dic,
            self.p_d,
            self.perplexity,
            self.param_count,
            self.n_train,
            self.n_test,
        ]
        for key in sorted(self.wasserstein):
            header.append(f"wasserstein_{key}")
            row.append(self.wasserstein[key])
        for k, s in enumerate(self.stability):
            header.append(f"stability_euclidean_{k + 1}")
            row.append(s["euclidean"])
            header.append(f"stability_kl_{k + 1}")
            row.append(s["kl"])
        return header, row


# ---------------------------------------------------------------------------
# information criteria


def dic(draws: PosteriorDraws, corpus: Corpus):
    """Deviance information criterion from retained draws.

    Returns (dic, p_d) with p_d = mean deviance minus the deviance at the
    draw-wise parameter mean, and dic = p_d + mean deviance.
    """
    if draws.n_draws == 0:
        raise ValueError("no retained draws")
    devs = np.array(
        [observed_data_deviance(draws.params_at(t), corpus) for t in range(draws.n_draws)]
    )
    d_bar = float(devs.mean())
    d_at_mean = observed_data_deviance(draws.mean_params(), corpus)
    p_d = d_bar - d_at_mean
    return p_d + d_bar, p_d


def nll_aic_bic(map_params: MixtureParams, corpus: Corpus, param_count: int | None = None):
    """Negative log likelihood at the MAP with AIC and BIC."""
    if param_count is None:
        param_count = map_params.param_count()
    nll = observed_data_deviance(map_params, corpus) / 2.0
    aic = 2.0 * param_count + 2.0 * nll
    bic = param_count * math.log(corpus.n) + 2.0 * nll
    return nll, aic, bic


# ---------------------------------------------------------------------------
# sample-based distances


def _truncate_own_percentile(x: np.ndarray, p: float) -> np.ndarray:
    # keep the smallest ceil(p * m) order statistics
    keep = int(math.ceil(p * x.size))
    return np.sort(x)[:keep]


def _evenly_spaced(x_sorted: np.ndarray, m: int) -> np.ndarray:
    idx = ((np.arange(m) + 0.5) * x_sorted.size / m).astype(np.int64)
    return x_sorted[idx]


def wasserstein1(u, v, truncation: float | None = None) -> float:
    """Mean absolute difference of matched order statistics.

    With ``truncation`` p in (0, 1], each sample is first cut at its own
    p-th empirical percentile. Unequal sizes are reconciled by taking
    evenly spaced order statistics of the larger sample.
    """
    u = np.sort(np.asarray(u, dtype=float))
    v = np.sort(np.asarray(v, dtype=float))
    if truncation is not None:
        if not (0.0 < truncation <= 1.0):
            raise ValueError("truncation must lie in (0, 1]")
        u = _truncate_own_percentile(u, truncation)
        v = _truncate_own_percentile(v, truncation)
    if u.size == 0 or v.size == 0:
        raise ValueError("empty sample after truncation")
    m = min(u.size, v.size)
    if u.size != m:
        u = _evenly_spaced(u, m)
    if v.size != m:
        v = _evenly_spaced(v, m)
    return float(np.mean(np.abs(u - v)))


# ---------------------------------------------------------------------------
# text metrics


def perplexity(test_corpus: Corpus, params: MixtureParams) -> float:
    """Held-out word perplexity under description-only membership weights.

    exp of the negative mean per-token log probability, where each
    observed word type contributes log sum_k psi_kv^count * Pr(Z=k | doc)
    and the mean divides by the total token count.
    """
    n = test_corpus.n
    if n == 0:
        raise ValueError("empty test corpus")
    X = test_corpus.count_matrix()
    S = doc_only_log_scores(params.theta, params.psi, X)
    logP = S - logsumexp(S, axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        log_psi = np.log(params.psi)
    total_tokens = 0
    total_logprob = 0.0
    for i, doc in enumerate(test_corpus.documents):
        total_tokens += doc.length
        if doc.word_ids.size == 0:
            continue
        # (K, n_words): count * log psi + log membership
        B = doc.counts[None, :] * log_psi[:, doc.word_ids] + logP[i][:, None]
        total_logprob += float(logsumexp(B, axis=0).sum())
    if total_tokens == 0:
        raise ValueError("test corpus has zero total length")
    return float(np.exp(-total_logprob / total_tokens))


def topic_stability(draws: PosteriorDraws, metric: str = "euclidean") -> np.ndarray:
    """Mean per-draw divergence of each topic row from its retained mean.

    Lower is more stable. ``metric`` is "euclidean" (L2 distance) or "kl"
    (KL of the draw against the mean row).
    """
    if draws.n_draws < 1:
        raise ValueError("need at least one retained draw")
    psis = draws.psis  # (T, K, V)
    mean = psis.mean(axis=0)  # (K, V)
    if metric == "euclidean":
        d = np.linalg.norm(psis - mean[None, :, :], axis=2)  # (T, K)
    elif metric == "kl":
        d = rel_entr(psis, mean[None, :, :]).sum(axis=2)
    else:
        raise ValueError("metric must be 'euclidean' or 'kl'")
    return d.mean(axis=0)


def top_words(params: MixtureParams, vocabulary: Vocabulary, m: int = 20):
    """Per component, the m most probable words with their probabilities."""
    out = []
    for k in range(params.K):
        order = np.argsort(params.psi[k])[::-1][:m]
        out.append([(vocabulary.words[v], float(params.psi[k][v])) for v in order])
    return out


# ---------------------------------------------------------------------------
# the full report


def sample_loss_marginal(params: MixtureParams, m: int, rng: np.random.Generator) -> np.ndarray:
    """m draws from the fitted loss marginal (component then amount)."""
    z = rng.choice(params.K, size=m, p=params.theta)
    y = np.empty(m)
    for k in range(params.K):
        mask = z == k
        if mask.any():
            y[mask] = loss_sample(params.components[k], rng, int(mask.sum()))
    return y


def evaluate_model(
    map_params: MixtureParams,
    draws: PosteriorDraws,
    train_corpus: Corpus,
    test_corpus: Corpus,
    truncations=(0.7, 0.8, 0.9, 1.0),
    seed: int = 0,
) -> MetricReport:
    """Assemble the full metric report for one fitted model."""
    nll, aic, bic = nll_aic_bic(map_params, train_corpus)
    dic_val, p_d = dic(draws, train_corpus)
    perp = perplexity(test_corpus, map_params)
    n_train = train_corpus.n

    wass = {}
    for split_name, split in (("train", train_corpus), ("test", test_corpus)):
        model_sample = sample_loss_marginal(
            map_params, split.n, np.random.default_rng([seed, split.n])
        )
        for p in truncations:
            key = f"{split_name}_{int(round(p * 100))}"
            wass[key] = wasserstein1(split.losses, model_sample, truncation=p)

    eu = topic_stability(draws, "euclidean")
    kl = topic_stability(draws, "kl")
    stability = [
        {"euclidean": float(eu[k]), "kl": float(kl[k])} for k in range(draws.K)
    ]
    return MetricReport(
        nll=nll,
        aic=aic,
        bic=bic,
        dic=dic_val,
        p_d=p_d,
        perplexity=perp,
        wasserstein=wass,
        stability=stability,
        nll_per_obs=nll / n_train,
        aic_per_obs=aic / n_train,
        bic_per_obs=bic / n_train,
        param_count=map_params.param_count(),
        n_train=n_train,
        n_test=test_corpus.n,
    )
