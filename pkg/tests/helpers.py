"""Shared test fixtures: synthetic model builders and label alignment."""

from __future__ import annotations

import numpy as np

from ldmm.loss_models import LognormalParams, NIGPrior, ParetoGammaPrior, ParetoParams
from ldmm.mixture_core import HyperParams, MixtureParams, simulate_dataset


def separated_topics(K: int, V: int, mass: float = 0.8) -> np.ndarray:
    """K topic rows, each concentrating ``mass`` on its own disjoint word block."""
    if V < 2 * K:
        raise ValueError("need at least two exclusive words per topic")
    block = V // K
    psi = np.full((K, V), (1.0 - mass) / (V - block))
    for k in range(K):
        lo, hi = k * block, (k + 1) * block
        psi[k, lo:hi] = mass / block
    return psi / psi.sum(axis=1, keepdims=True)


def two_lognormal_params(
    mu=(7.0, 9.0), sigma=(1.0, 1.5), theta=(0.4, 0.6), V: int = 20, mass: float = 0.8
) -> MixtureParams:
    comps = tuple(LognormalParams(m, s) for m, s in zip(mu, sigma))
    return MixtureParams(np.asarray(theta, float), comps, separated_topics(len(comps), V, mass))


def lognormal_pareto_params(V: int = 20) -> MixtureParams:
    comps = (LognormalParams(7.0, 1.0), ParetoParams(1.5, 2000.0))
    return MixtureParams(np.array([0.55, 0.45]), comps, separated_topics(2, V))


def weak_lognormal_prior(losses) -> NIGPrior:
    """Data-scale, lightly informative normal-inverse-gamma prior."""
    ly = np.log(np.asarray(losses, float))
    var = max(float(ly.var()), 0.04)
    return NIGPrior(float(ly.mean()), 1.0, 2.0, var)


def weak_pareto_prior(losses) -> ParetoGammaPrior:
    smallest = float(np.min(losses))
    return ParetoGammaPrior(2.0, 1.0, float(np.nextafter(smallest, 0.0)))


def hyper_for(params: MixtureParams, losses, families=None) -> HyperParams:
    """alpha = 1, gamma = 2, weak data-driven loss priors."""
    K, V = params.psi.shape
    priors = []
    for k, comp in enumerate(params.components):
        if isinstance(comp, ParetoParams):
            priors.append(weak_pareto_prior(losses))
        else:
            priors.append(weak_lognormal_prior(losses))
    return HyperParams(np.ones(K), np.full(V, 2.0), tuple(priors))


def align_to_truth(est_mu, true_mu):
    """Permutation p with est[p[j]] matched to true j (greedy on |mu| gaps)."""
    est_mu = np.asarray(est_mu, float)
    true_mu = np.asarray(true_mu, float)
    K = true_mu.size
    taken = set()
    perm = np.empty(K, dtype=int)
    for j in np.argsort(true_mu):
        best, best_d = None, np.inf
        for c in range(K):
            if c in taken:
                continue
            d = abs(est_mu[c] - true_mu[j])
            if d < best_d:
                best, best_d = c, d
        perm[j] = best
        taken.add(best)
    return perm


def simulate_from(params: MixtureParams, n: int, seed: int):
    rng = np.random.default_rng(seed)
    return simulate_dataset(params, n, rng)
