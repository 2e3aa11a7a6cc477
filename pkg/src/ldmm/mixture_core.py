"""Mixture parameter containers and the shared probability machinery.

Holds the hyperparameter and parameter types, responsibility computations
(loss-aware and description-only), the complete-data log posterior, the
observed-data deviance, and the generative simulator. Everything heavier
(EM, Gibbs, prediction) is built from the pieces here.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, xlogy

from ldmm.corpus import Corpus, DataError, Document, Vocabulary, DEFAULT_STOPWORDS
from ldmm.loss_models import (
    LossParams,
    LossPrior,
    default_loss_prior,
    loss_logpdf,
    loss_params_from_dict,
    loss_prior_logpdf,
    loss_sample,
)

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class HyperParams:
    """Dirichlet concentrations plus one loss prior per component.

    alpha is the K-vector for the mixing weights, gamma the |V|-vector for
    every topic's word distribution, loss_priors the per-component priors
    on the loss parameters.
    """

    alpha: np.ndarray
    gamma: np.ndarray
    loss_priors: tuple

    def __post_init__(self) -> None:
        alpha = np.asarray(self.alpha, dtype=float)
        gamma = np.asarray(self.gamma, dtype=float)
        if alpha.ndim != 1 or alpha.size == 0 or np.any(alpha <= 0):
            raise ValueError("alpha must be a vector of positive reals")
        if gamma.ndim != 1 or gamma.size == 0 or np.any(gamma <= 0):
            raise ValueError("gamma must be a vector of positive reals")
        if len(self.loss_priors) != alpha.size:
            raise ValueError("need one loss prior per component")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "loss_priors", tuple(self.loss_priors))

    @property
    def K(self) -> int:
        return self.alpha.size


def default_hyperparams(families, V: int, losses=None, alpha: float = 1.0, gamma: float = 2.0) -> HyperParams:
    """Uniform alpha, Laplace-smoothing gamma, stock per-family loss priors."""
    K = len(families)
    priors = tuple(default_loss_prior(f, losses) for f in families)
    return HyperParams(np.full(K, float(alpha)), np.full(V, float(gamma)), priors)


@dataclass(frozen=True)
class MixtureParams:
    """Mixing weights theta, per-component loss parameters, topic matrix psi."""

    theta: np.ndarray
    components: tuple
    psi: np.ndarray

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta, dtype=float)
        psi = np.asarray(self.psi, dtype=float)
        if theta.ndim != 1 or np.any(theta < 0) or not np.isfinite(theta).all():
            raise ValueError("theta must be a non-negative vector")
        s = theta.sum()
        if abs(s - 1.0) > 1e-8:
            raise ValueError("theta must sum to 1")
        theta = theta / s
        if psi.ndim != 2 or psi.shape[0] != theta.size:
            raise ValueError("psi must be K x |V|")
        if np.any(psi < 0) or not np.isfinite(psi).all():
            raise ValueError("psi entries must be non-negative")
        rows = psi.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-8):
            raise ValueError("each psi row must sum to 1")
        psi = psi / rows[:, None]
        if len(self.components) != theta.size:
            raise ValueError("need one loss-parameter set per component")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "psi", psi)

    @property
    def K(self) -> int:
        return self.theta.size

    @property
    def V(self) -> int:
        return self.psi.shape[1]

    def param_count(self) -> int:
        """Free parameters: (K-1) weights, K(|V|-1) topic entries, loss dims."""
        return (self.K - 1) + self.K * (self.V - 1) + sum(c.dim for c in self.components)


# ---------------------------------------------------------------------------
# responsibilities and deviance


def _loss_score_matrix(params: MixtureParams, losses: np.ndarray) -> np.ndarray:
    return np.column_stack([loss_logpdf(c, losses) for c in params.components])


def log_joint_scores(params: MixtureParams, corpus: Corpus) -> np.ndarray:
    """Unnormalized n x K scores log theta_k + log p_k(Y_i) + sum_v N_iv log psi_kv."""
    X = corpus.count_matrix()
    with np.errstate(divide="ignore"):
        log_theta = np.log(params.theta)
        log_psi = np.log(params.psi)
    word_scores = X @ log_psi.T
    return log_theta[None, :] + _loss_score_matrix(params, corpus.losses) + word_scores


def responsibility_matrix(params: MixtureParams, corpus: Corpus) -> np.ndarray:
    """Row-stochastic n x K posterior membership probabilities."""
    U = log_joint_scores(params, corpus)
    lse = logsumexp(U, axis=1)
    if np.any(np.isneginf(lse)):
        bad = int(np.flatnonzero(np.isneginf(lse))[0])
        raise FloatingPointError(
            f"observation {bad} is impossible under every component"
        )
    return np.exp(U - lse[:, None])


def log_responsibilities(y: float, doc: Document, params: MixtureParams) -> np.ndarray:
    """Log posterior membership probabilities for a single observation."""
    with np.errstate(divide="ignore"):
        u = np.log(params.theta) + np.array(
            [loss_logpdf(c, y) for c in params.components]
        )
        u += np.log(params.psi[:, doc.word_ids]) @ doc.counts
    lse = logsumexp(u)
    if np.isneginf(lse):
        raise FloatingPointError("observation is impossible under every component")
    return u - lse


def doc_only_log_scores(theta: np.ndarray, psi: np.ndarray, X) -> np.ndarray:
    """Unnormalized n x K scores log theta_k + sum_v N_iv log psi_kv."""
    with np.errstate(divide="ignore"):
        out = X @ np.log(psi).T
        out += np.log(theta)[None, :]
    return out


def doc_only_responsibilities(doc: Document, theta: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Membership probabilities from the description alone (loss unknown)."""
    with np.errstate(divide="ignore"):
        u = np.log(theta) + np.log(psi[:, doc.word_ids]) @ doc.counts
    lse = logsumexp(u)
    if np.isneginf(lse):
        raise FloatingPointError("document is impossible under every component")
    return np.exp(u - lse)


def observed_data_deviance(params: MixtureParams, corpus: Corpus) -> float:
    """-2 sum_i log sum_k theta_k p_k(Y_i) prod_v psi_kv^N_iv."""
    U = log_joint_scores(params, corpus)
    return float(-2.0 * logsumexp(U, axis=1).sum())


def log_complete_posterior(
    params: MixtureParams, hyper: HyperParams, corpus: Corpus, z: np.ndarray
) -> float:
    """Complete-data log posterior (up to an additive constant).

    Sums, over components, the loss-parameter log prior, the log likelihood
    of the assigned losses, the smoothed word-count score against psi, and
    the Dirichlet-weighted score of theta.
    """
    z = np.asarray(z)
    K = params.K
    X = corpus.count_matrix()
    M = np.bincount(z, minlength=K).astype(float)
    total = float(np.sum(xlogy(M + hyper.alpha - 1.0, params.theta)))
    for k in range(K):
        mask = z == k
        total += loss_prior_logpdf(hyper.loss_priors[k], params.components[k])
        if mask.any():
            total += float(np.sum(loss_logpdf(params.components[k], corpus.losses[mask])))
        counts_k = np.asarray(X[mask].sum(axis=0)).ravel()
        total += float(np.sum(xlogy(hyper.gamma - 1.0 + counts_k, params.psi[k])))
    return total


# ---------------------------------------------------------------------------
# generative simulator


def synthetic_vocabulary(V: int) -> Vocabulary:
    """V distinct alphabetic placeholder words in sorted order.

    Words are fixed-width base-26 strings so they survive a round trip
    through CSV writing and preprocessing; stopwords are skipped.
    """
    width = 3
    while 26**width < V + len(DEFAULT_STOPWORDS):
        width += 1
    letters = string.ascii_lowercase
    words = []
    i = 0
    while len(words) < V:
        j, s = i, ""
        for _ in range(width):
            s = letters[j % 26] + s
            j //= 26
        i += 1
        if s in DEFAULT_STOPWORDS:
            continue
        words.append(s)
    return Vocabulary(words)


def simulate_dataset(
    params: MixtureParams,
    n: int,
    rng: np.random.Generator,
    length_sampler=None,
    vocabulary: Vocabulary | None = None,
):
    """Draw (corpus, true assignment) from the generative model.

    For each record a component is drawn from theta, a loss from that
    component's family, a document length from ``length_sampler`` (a
    callable (rng, n) -> int array; default uniform on {3..10}), and the
    words from the component's topic row.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    K, V = params.psi.shape
    if vocabulary is None:
        vocabulary = synthetic_vocabulary(V)
    if len(vocabulary) != V:
        raise ValueError("vocabulary size does not match psi")
    z = rng.choice(K, size=n, p=params.theta)
    Y = np.empty(n)
    for k in range(K):
        mask = z == k
        if mask.any():
            Y[mask] = loss_sample(params.components[k], rng, int(mask.sum()))
    if length_sampler is None:
        lengths = rng.integers(3, 11, size=n)
    else:
        lengths = np.asarray(length_sampler(rng, n), dtype=np.int64)
        if lengths.shape != (n,):
            raise ValueError("length_sampler must return n lengths")
    if np.any(lengths < 1):
        raise ValueError("document lengths must be >= 1")
    counts = rng.multinomial(lengths, params.psi[z])
    docs = []
    for i in range(n):
        ids = np.flatnonzero(counts[i])
        docs.append(Document(ids, counts[i, ids], vocab_size=V))
    return Corpus(vocabulary, docs, Y), z


# ---------------------------------------------------------------------------
# model file round trip


def save_model_json(
    params: MixtureParams, vocabulary: Vocabulary, path, extra: dict | None = None
) -> None:
    """Write theta, tagged components, dense psi rows and the vocabulary hash."""
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "theta": params.theta.tolist(),
        "components": [c.to_dict() for c in params.components],
        "psi": params.psi.tolist(),
        "vocab_sha256": vocabulary.sha256(),
        "vocab_size": len(vocabulary),
    }
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)


def load_model_json(path):
    """Read a model file; returns (MixtureParams, full payload dict)."""
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    version = payload.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise DataError(f"unsupported model format_version {version!r}")
    params = MixtureParams(
        np.array(payload["theta"]),
        tuple(loss_params_from_dict(d) for d in payload["components"]),
        np.array(payload["psi"]),
    )
    return params, payload


__all__ = [
    "HyperParams",
    "MixtureParams",
    "default_hyperparams",
    "doc_only_log_scores",
    "doc_only_responsibilities",
    "log_complete_posterior",
    "log_joint_scores",
    "log_responsibilities",
    "load_model_json",
    "observed_data_deviance",
    "responsibility_matrix",
    "save_model_json",
    "simulate_dataset",
    "synthetic_vocabulary",
]
