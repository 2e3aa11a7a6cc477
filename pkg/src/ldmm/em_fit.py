"""MAP expectation-maximisation for the joint loss/text mixture.

Alternates a responsibility E-step with closed-form (or simplex-search)
M-step updates of the mixing weights, the topic matrix and the loss
parameters, tracking the observed-data log posterior. Multiple seeded
restarts guard against bad local modes; the best final value wins.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ldmm.corpus import Corpus
from ldmm.loss_models import (
    FAMILY_TAGS,
    GB2FlatPrior,
    GB2Params,
    ParetoParams,
    dirichlet_logpdf,
    draw_from_prior_or_posterior,
    fit_gb2,
    weighted_map_fit_pareto,
    weighted_mle_lognormal,
)
from ldmm.mixture_core import HyperParams, MixtureParams, log_joint_scores

logger = logging.getLogger(__name__)

# below this total responsibility a component counts as empty and its loss
# parameters are re-seeded from the prior
EMPTY_COMPONENT_EPS = 1e-8


@dataclass(frozen=True)
class EmConfig:
    K: int
    families: tuple
    max_iters: int = 500
    tol: float = 1e-6
    seed: int = 0
    restarts: int = 5

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError("K must be >= 1")
        families = tuple(self.families)
        if len(families) != self.K:
            raise ValueError("need one loss family per component")
        for f in families:
            if f not in FAMILY_TAGS:
                raise ValueError(f"unknown loss family {f!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        object.__setattr__(self, "families", families)


@dataclass
class EmResult:
    params: MixtureParams
    responsibilities: np.ndarray
    trace: np.ndarray
    converged: bool
    iterations: int
    seed_used: int
    log_posterior: float


def observed_log_posterior(params: MixtureParams, hyper: HyperParams, corpus: Corpus) -> float:
    """Log posterior with the assignments summed out (loss priors flat).

    This is the quantity EM ascends: the observed-data log likelihood plus
    the Dirichlet log priors on theta and on each topic row.
    """
    U = log_joint_scores(params, corpus)
    return _objective(logsumexp(U, axis=1), params, hyper)


def _objective(row_lse: np.ndarray, params: MixtureParams, hyper: HyperParams) -> float:
    val = float(row_lse.sum())
    val += dirichlet_logpdf(params.theta, hyper.alpha)
    for k in range(params.K):
        val += dirichlet_logpdf(params.psi[k], hyper.gamma)
    return val


def e_step(corpus: Corpus, params: MixtureParams) -> np.ndarray:
    """Row-stochastic responsibility matrix at the current parameters."""
    U = log_joint_scores(params, corpus)
    lse = logsumexp(U, axis=1)
    if np.any(np.isneginf(lse)):
        bad = int(np.flatnonzero(np.isneginf(lse))[0])
        raise FloatingPointError(f"observation {bad} impossible under every component")
    return np.exp(U - lse[:, None])


def _reset_from_prior(prior, rng: np.random.Generator, losses: np.ndarray):
    if isinstance(prior, GB2FlatPrior):
        # flat prior has no sampler; restart from a data-scale default
        return GB2Params(1.0, float(np.median(losses)), 1.0, 1.0)
    return draw_from_prior_or_posterior(prior, rng)


def _pareto_scale_min(wk: np.ndarray, losses: np.ndarray) -> float:
    assigned_min = float(losses[wk > 0].min())
    # one ulp below the smallest assigned loss keeps it inside the strict support
    return float(np.nextafter(assigned_min, 0.0))


def m_step(
    corpus: Corpus,
    W: np.ndarray,
    hyper: HyperParams,
    families,
    current: MixtureParams | None = None,
    rng: np.random.Generator | None = None,
    gb2_seed: int = 0,
) -> MixtureParams:
    """One MAP M-step given responsibilities W.

    theta_k = (sum_i w_ik + alpha_k - 1) / (n + sum(alpha - 1)); each psi
    row is the smoothed weighted word-count normaliser; loss parameters
    come from the per-family weighted fits. A component whose total weight
    falls below EMPTY_COMPONENT_EPS is reported and its loss parameters
    are drawn afresh from the prior.
    """
    W = np.asarray(W, dtype=float)
    n, K = W.shape
    if n != corpus.n or K != hyper.K:
        raise ValueError("responsibility matrix shape mismatch")
    Y = corpus.losses
    X = corpus.count_matrix()
    wsum = W.sum(axis=0)

    theta = (wsum + hyper.alpha - 1.0) / (n + (hyper.alpha - 1.0).sum())

    C = np.asarray((X.T @ W).T)  # K x |V| weighted word counts
    numer = (hyper.gamma - 1.0)[None, :] + C
    denom = numer.sum(axis=1, keepdims=True)
    V = len(corpus.vocabulary)
    psi = np.where(denom > 0, numer / np.where(denom > 0, denom, 1.0), 1.0 / V)

    if rng is None:
        rng = np.random.default_rng(gb2_seed)
    components = []
    for k in range(K):
        wk = W[:, k]
        if wsum[k] < EMPTY_COMPONENT_EPS:
            logger.warning("component %d is empty; resetting its loss parameters", k + 1)
            components.append(_reset_from_prior(hyper.loss_priors[k], rng, Y))
            continue
        family = families[k]
        if family == "lognormal":
            components.append(weighted_mle_lognormal(Y, wk))
        elif family == "pareto":
            if current is not None and isinstance(current.components[k], ParetoParams):
                # the known minimum is a fixed hyperparameter once chosen
                scale_min = current.components[k].scale_min
            else:
                scale_min = _pareto_scale_min(wk, Y)
            components.append(weighted_map_fit_pareto(Y, wk, scale_min))
        elif family == "gb2":
            cur = None
            if current is not None and isinstance(current.components[k], GB2Params):
                cur = current.components[k]
            components.append(fit_gb2(Y, wk, current=cur, restarts=2, seed=gb2_seed + k))
        else:
            raise ValueError(f"unknown loss family {family!r}")
    return MixtureParams(theta, tuple(components), psi)


def run_em(corpus: Corpus, hyper: HyperParams, config: EmConfig) -> EmResult:
    """Fit the mixture by EM with seeded restarts; best restart wins.

    Each restart draws a uniform random assignment, takes one M-step from
    its one-hot responsibilities, then alternates E and M until the
    relative increase of the observed-data log posterior drops to ``tol``
    or ``max_iters`` is hit. Non-convergence returns the best state found,
    flagged.
    """
    if hyper.K != config.K:
        raise ValueError("hyperparameters and config disagree on K")
    if len(hyper.gamma) != len(corpus.vocabulary):
        raise ValueError("gamma length must equal the vocabulary size")
    if np.any(hyper.alpha < 1.0):
        raise ValueError("alpha entries must be >= 1 for the MAP weight update")
    if np.any(hyper.gamma < 1.0):
        raise ValueError("gamma entries must be >= 1 for the MAP topic update")
    n = corpus.n
    K = config.K
    best: EmResult | None = None
    for j in range(config.restarts):
        seed_j = config.seed + j
        rng = np.random.default_rng(seed_j)
        z0 = rng.integers(0, K, size=n)
        W = np.zeros((n, K))
        W[np.arange(n), z0] = 1.0
        params = m_step(corpus, W, hyper, config.families, rng=rng, gb2_seed=seed_j)
        U = log_joint_scores(params, corpus)
        lse = logsumexp(U, axis=1)
        if np.any(np.isneginf(lse)):
            bad = int(np.flatnonzero(np.isneginf(lse))[0])
            raise FloatingPointError(f"observation {bad} impossible under every component")
        obj = _objective(lse, params, hyper)
        trace = [obj]
        converged = False
        iterations = 0
        for _ in range(config.max_iters):
            W = np.exp(U - lse[:, None])
            params = m_step(
                corpus, W, hyper, config.families, current=params, rng=rng, gb2_seed=seed_j
            )
            U = log_joint_scores(params, corpus)
            lse = logsumexp(U, axis=1)
            if np.any(np.isneginf(lse)):
                bad = int(np.flatnonzero(np.isneginf(lse))[0])
                raise FloatingPointError(
                    f"observation {bad} impossible under every component"
                )
            new_obj = _objective(lse, params, hyper)
            trace.append(new_obj)
            iterations += 1
            rel = (new_obj - obj) / max(1.0, abs(obj))
            obj = new_obj
            if rel <= config.tol:
                converged = True
                break
        result = EmResult(
            params=params,
            responsibilities=np.exp(U - lse[:, None]),
            trace=np.array(trace),
            converged=converged,
            iterations=iterations,
            seed_used=seed_j,
            log_posterior=obj,
        )
        if best is None or result.log_posterior > best.log_posterior:
            best = result
    if not best.converged:
        logger.warning("EM stopped at max_iters without meeting tol; returning best state")
    return best
