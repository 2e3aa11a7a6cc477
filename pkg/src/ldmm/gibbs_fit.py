"""Posterior sampling for the mixture by MH-within-Gibbs.

A systematic-scan sampler: per sweep the loss parameters (conjugate draws
for log-normal and Pareto, a random-walk Metropolis step on log scale for
GB2), the topic rows, the mixing weights, and finally the assignments are
redrawn, each conditional on the freshest values. Chains start from the
EM MAP and its final responsibilities.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ldmm.corpus import Corpus, DataError
from ldmm.em_fit import EmResult
from ldmm.loss_models import (
    GB2FlatPrior,
    GB2Params,
    LognormalParams,
    NIGPrior,
    ParetoGammaPrior,
    ParetoParams,
    conjugate_posterior_lognormal,
    conjugate_posterior_pareto,
    draw_from_prior_or_posterior,
    gb2_logpdf,
    loss_params_from_dict,
)
from ldmm.mixture_core import HyperParams, MixtureParams, log_joint_scores

logger = logging.getLogger(__name__)

DRAWS_FORMAT_VERSION = 1

# burn-in adaptation targets this random-walk acceptance band
_MH_TARGET_LOW = 0.13
_MH_TARGET_HIGH = 0.33
_MH_ADAPT_EVERY = 50
_MH_ADAPT_FACTOR = 1.5


@dataclass(frozen=True)
class GibbsConfig:
    sweeps: int = 4000
    burn_in: int = 2000
    thin: int = 2
    mh_step_scale: float = 0.2
    adapt_burnin: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if not (0 <= self.burn_in < self.sweeps):
            raise ValueError("burn_in must satisfy 0 <= burn_in < sweeps")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not self.mh_step_scale > 0:
            raise ValueError("mh_step_scale must be positive")


@dataclass
class PosteriorDraws:
    """Retained post-burn-in states of (theta, loss params, psi, z)."""

    thetas: np.ndarray  # (T, K)
    psis: np.ndarray  # (T, K, |V|)
    components: list  # T tuples of loss params
    zs: np.ndarray  # (T, n)
    acceptance_rates: np.ndarray  # (K,), 1.0 for conjugate components
    mh_scales: np.ndarray  # (K,), final proposal scales
    sweep_indices: np.ndarray  # (T,)
    wall_clock_s: float = 0.0

    @property
    def n_draws(self) -> int:
        return self.thetas.shape[0]

    @property
    def K(self) -> int:
        return self.thetas.shape[1]

    def params_at(self, t: int) -> MixtureParams:
        return MixtureParams(self.thetas[t], self.components[t], self.psis[t])

    def mean_params(self) -> MixtureParams:
        """Draw-wise parameter mean.

        theta and psi average arithmetically (stay on the simplex); loss
        parameters average on log scale for positive quantities and raw
        scale for the log-normal location.
        """
        T = self.n_draws
        if T == 0:
            raise ValueError("no retained draws")
        comps = []
        for k in range(self.K):
            per_draw = [self.components[t][k] for t in range(T)]
            first = per_draw[0]
            if isinstance(first, LognormalParams):
                mu = float(np.mean([c.mu for c in per_draw]))
                sigma = float(np.exp(np.mean([math.log(c.sigma) for c in per_draw])))
                comps.append(LognormalParams(mu, sigma))
            elif isinstance(first, ParetoParams):
                shape = float(np.exp(np.mean([math.log(c.shape) for c in per_draw])))
                comps.append(ParetoParams(shape, first.scale_min))
            elif isinstance(first, GB2Params):
                logs = np.array(
                    [[math.log(c.a), math.log(c.b), math.log(c.p), math.log(c.q)] for c in per_draw]
                )
                a, b, p, q = np.exp(logs.mean(axis=0))
                comps.append(GB2Params(a, b, p, q))
            else:
                raise TypeError(f"unknown component type {type(first)!r}")
        return MixtureParams(self.thetas.mean(axis=0), tuple(comps), self.psis.mean(axis=0))


# ---------------------------------------------------------------------------
# single-site draws


def draw_theta(z, alpha: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One Dirichlet(counts + alpha) draw of the mixing weights."""
    z = np.asarray(z)
    M = np.bincount(z, minlength=alpha.size) if z.size else np.zeros(alpha.size)
    return rng.dirichlet(M + alpha)


def draw_psi_k(corpus: Corpus, z, k: int, gamma: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One Dirichlet(gamma + word counts of component k) topic draw."""
    X = corpus.count_matrix()
    mask = np.asarray(z) == k
    counts = np.asarray(X[mask].sum(axis=0)).ravel()
    return rng.dirichlet(gamma + counts)


def _gb2_mh_step(Yk: np.ndarray, current: GB2Params, scale: float, rng: np.random.Generator):
    if current.a > 0:
        x = np.log([current.a, current.b, current.p, current.q])
    else:
        x = np.log([-current.a, current.b, current.q, current.p])
    prop = x + scale * rng.standard_normal(4)
    u = rng.uniform()
    if Yk.size == 0:
        # flat prior and no data: the conditional is improper, hold position
        return current, True
    if np.any(np.abs(prop) > 50.0):
        return current, False
    cur_ll = float(np.sum(gb2_logpdf(Yk, *np.exp(x))))
    new_ll = float(np.sum(gb2_logpdf(Yk, *np.exp(prop))))
    if math.log(max(u, 1e-300)) < new_ll - cur_ll:
        a, b, p, q = np.exp(prop)
        return GB2Params(float(a), float(b), float(p), float(q)), True
    return current, False


def draw_phi_k(
    corpus: Corpus,
    z,
    k: int,
    prior,
    current,
    mh_scale: float,
    rng: np.random.Generator,
):
    """Redraw component k's loss parameters given the current assignment.

    Conjugate families are sampled exactly (always "accepted"); the GB2
    takes one random-walk MH step on its log parameters.
    """
    Yk = corpus.losses[np.asarray(z) == k]
    return _draw_phi_given_data(Yk, prior, current, mh_scale, rng)


def _draw_phi_given_data(Yk, prior, current, mh_scale, rng):
    if isinstance(prior, NIGPrior):
        return draw_from_prior_or_posterior(conjugate_posterior_lognormal(Yk, prior), rng), True
    if isinstance(prior, ParetoGammaPrior):
        return draw_from_prior_or_posterior(conjugate_posterior_pareto(Yk, prior), rng), True
    if isinstance(prior, GB2FlatPrior):
        return _gb2_mh_step(Yk, current, mh_scale, rng)
    raise TypeError(f"not a loss prior object: {prior!r}")


def _sample_rows(W: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one categorical index per row of a (possibly unnormalised) matrix."""
    cum = np.cumsum(W, axis=1)
    u = rng.uniform(size=W.shape[0]) * cum[:, -1]
    return (u[:, None] >= cum).sum(axis=1)


def draw_z(corpus: Corpus, params: MixtureParams, rng: np.random.Generator) -> np.ndarray:
    """Redraw every assignment from its full conditional."""
    U = log_joint_scores(params, corpus)
    lse = logsumexp(U, axis=1)
    if np.any(np.isneginf(lse)):
        bad = int(np.flatnonzero(np.isneginf(lse))[0])
        raise FloatingPointError(f"observation {bad} impossible under every component")
    return _sample_rows(np.exp(U - lse[:, None]), rng)


# ---------------------------------------------------------------------------
# the sweep and the driver


def _component_word_counts(X, row_of: np.ndarray, z: np.ndarray, K: int) -> np.ndarray:
    counts = np.zeros((K, X.shape[1]))
    np.add.at(counts, (z[row_of], X.indices), X.data)
    return counts


def gibbs_sweep(
    theta: np.ndarray,
    components: tuple,
    psi: np.ndarray,
    z: np.ndarray,
    corpus: Corpus,
    hyper: HyperParams,
    rng: np.random.Generator,
    mh_scales: np.ndarray,
    _row_of: np.ndarray | None = None,
):
    """One full systematic scan: loss params, topics, weights, assignments.

    Returns (theta, components, psi, z, accepted) where accepted is a
    per-component boolean array (True for conjugate draws).
    """
    K = hyper.K
    X = corpus.count_matrix()
    if _row_of is None:
        _row_of = np.repeat(np.arange(corpus.n), np.diff(X.indptr))
    accepted = np.zeros(K, dtype=bool)
    new_components = []
    for k in range(K):
        Yk = corpus.losses[z == k]
        comp, acc = _draw_phi_given_data(Yk, hyper.loss_priors[k], components[k], mh_scales[k], rng)
        new_components.append(comp)
        accepted[k] = acc
    counts = _component_word_counts(X, _row_of, z, K)
    psi = np.vstack([rng.dirichlet(hyper.gamma + counts[k]) for k in range(K)])
    theta = draw_theta(z, hyper.alpha, rng)
    params = MixtureParams(theta, tuple(new_components), psi)
    z = draw_z(corpus, params, rng)
    return params.theta, params.components, params.psi, z, accepted


def run_gibbs(
    corpus: Corpus,
    hyper: HyperParams,
    families,
    em_result: EmResult,
    config: GibbsConfig,
) -> PosteriorDraws:
    """Sample the posterior, initialised from an EM fit on the same corpus.

    The initial assignment draws each record's component from its final EM
    responsibility row; parameters start at the MAP. States with sweep
    index t (1-based) satisfying t > burn_in and (t - burn_in - 1) % thin
    == 0 are retained. During burn-in the GB2 proposal scales adapt toward
    a workable acceptance band and are frozen afterwards.
    """
    K = hyper.K
    if em_result.params.K != K or len(families) != K:
        raise ValueError("EM result, families and hyperparameters disagree on K")
    if len(hyper.gamma) != len(corpus.vocabulary):
        raise ValueError("gamma length must equal the vocabulary size")
    if em_result.responsibilities.shape != (corpus.n, K):
        raise ValueError("EM responsibilities do not match this corpus")
    rng = np.random.default_rng(config.seed)
    X = corpus.count_matrix()
    row_of = np.repeat(np.arange(corpus.n), np.diff(X.indptr))

    z = _sample_rows(em_result.responsibilities, rng)
    theta = em_result.params.theta
    psi = em_result.params.psi
    components = em_result.params.components
    scales = np.full(K, config.mh_step_scale, dtype=float)
    is_mh = np.array([isinstance(p, GB2FlatPrior) for p in hyper.loss_priors])

    win_acc = np.zeros(K)
    win_tot = np.zeros(K)
    post_acc = np.zeros(K)
    post_tot = np.zeros(K)
    thetas, psis, comps, zs, kept_sweeps = [], [], [], [], []

    t0 = time.perf_counter()
    for t in range(1, config.sweeps + 1):
        theta, components, psi, z, accepted = gibbs_sweep(
            theta, components, psi, z, corpus, hyper, rng, scales, _row_of=row_of
        )
        in_burn = t <= config.burn_in
        if in_burn and config.adapt_burnin and is_mh.any():
            win_acc += accepted
            win_tot += 1
            if t % _MH_ADAPT_EVERY == 0:
                rate = win_acc / win_tot
                low = is_mh & (rate < _MH_TARGET_LOW)
                high = is_mh & (rate > _MH_TARGET_HIGH)
                scales[low] /= _MH_ADAPT_FACTOR
                scales[high] *= _MH_ADAPT_FACTOR
                win_acc[:] = 0
                win_tot[:] = 0
        if not in_burn:
            post_acc += accepted
            post_tot += 1
            if (t - config.burn_in - 1) % config.thin == 0:
                thetas.append(theta.copy())
                psis.append(psi.copy())
                comps.append(tuple(components))
                zs.append(z.astype(np.int32))
                kept_sweeps.append(t)
    wall = time.perf_counter() - t0

    rates = np.ones(K)
    if np.any(post_tot > 0):
        rates = np.where(is_mh, post_acc / np.maximum(post_tot, 1), 1.0)
    return PosteriorDraws(
        thetas=np.array(thetas),
        psis=np.array(psis),
        components=comps,
        zs=np.array(zs),
        acceptance_rates=rates,
        mh_scales=scales,
        sweep_indices=np.array(kept_sweeps),
        wall_clock_s=wall,
    )


# ---------------------------------------------------------------------------
# persistence


def save_draws(draws: PosteriorDraws, path, manifest_path=None, extra: dict | None = None) -> None:
    """Write retained states as JSONL, one state per line, plus a manifest."""
    with open(path, "w", encoding="utf-8") as f:
        for t in range(draws.n_draws):
            rec = {
                "sweep": int(draws.sweep_indices[t]),
                "theta": draws.thetas[t].tolist(),
                "components": [c.to_dict() for c in draws.components[t]],
                "psi": draws.psis[t].tolist(),
                "z": draws.zs[t].tolist(),
            }
            f.write(json.dumps(rec) + "\n")
    if manifest_path is not None:
        manifest = {
            "format_version": DRAWS_FORMAT_VERSION,
            "n_retained": draws.n_draws,
            "acceptance_rates": draws.acceptance_rates.tolist(),
            "mh_scales": draws.mh_scales.tolist(),
            "wall_clock_s": draws.wall_clock_s,
        }
        if extra:
            manifest.update(extra)
        with open(manifest_path, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2)


def load_draws(path, manifest_path=None) -> PosteriorDraws:
    """Read a JSONL draws file written by save_draws."""
    thetas, psis, comps, zs, sweeps = [], [], [], [], []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            thetas.append(rec["theta"])
            psis.append(rec["psi"])
            comps.append(tuple(loss_params_from_dict(d) for d in rec["components"]))
            zs.append(rec["z"])
            sweeps.append(rec.get("sweep", len(sweeps)))
    if not thetas:
        raise DataError(f"no retained draws in {path}")
    K = len(thetas[0])
    rates = np.full(K, np.nan)
    scales = np.full(K, np.nan)
    wall = 0.0
    if manifest_path is not None:
        with open(manifest_path, encoding="utf-8") as f:
            manifest = json.load(f)
        rates = np.asarray(manifest.get("acceptance_rates", rates), dtype=float)
        scales = np.asarray(manifest.get("mh_scales", scales), dtype=float)
        wall = float(manifest.get("wall_clock_s", 0.0))
    return PosteriorDraws(
        thetas=np.asarray(thetas, dtype=float),
        psis=np.asarray(psis, dtype=float),
        components=comps,
        zs=np.asarray(zs, dtype=np.int32),
        acceptance_rates=rates,
        mh_scales=scales,
        sweep_indices=np.asarray(sweeps, dtype=np.int64),
        wall_clock_s=wall,
    )
