"""Loss severity families and the Bayesian helpers built around them.

Three families are supported: log-normal, Pareto (strict support above a
known minimum), and GB2 (generalized beta of the second kind). For each
family there is a vectorised log-density, a seeded sampler, and a weighted
fit suitable for use inside an EM M-step. Conjugate posterior updates
(normal-inverse-gamma for the log-normal, gamma for the Pareto shape) feed
the Gibbs sampler, and the Dirichlet / normal-inverse-gamma / gamma helper
log-densities live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import betaln, gammaln, xlogy

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# Smallest sigma a fitted log-normal may report; prevents a component from
# collapsing onto a single observation.
SIGMA_FLOOR = 1e-6

FAMILY_TAGS = ("lognormal", "pareto", "gb2")


# ---------------------------------------------------------------------------
# parameter containers


@dataclass(frozen=True)
class LognormalParams:
    """log Y ~ Normal(mu, sigma^2)."""

    mu: float
    sigma: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.mu):
            raise ValueError("lognormal mu must be finite")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("lognormal sigma must be positive")

    @property
    def family(self) -> str:
        return "lognormal"

    @property
    def dim(self) -> int:
        return 2

    def to_dict(self) -> dict:
        return {"family": "lognormal", "mu": float(self.mu), "sigma": float(self.sigma)}


@dataclass(frozen=True)
class ParetoParams:
    """Density shape * scale_min^shape / y^(shape+1) on y > scale_min."""

    shape: float
    scale_min: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.shape) and self.shape > 0):
            raise ValueError("pareto shape must be positive")
        if not (np.isfinite(self.scale_min) and self.scale_min > 0):
            raise ValueError("pareto scale_min must be positive")

    @property
    def family(self) -> str:
        return "pareto"

    @property
    def dim(self) -> int:
        # scale_min is a fixed hyperparameter, not a free parameter
        return 1

    def to_dict(self) -> dict:
        return {
            "family": "pareto",
            "shape": float(self.shape),
            "scale_min": float(self.scale_min),
        }


@dataclass(frozen=True)
class GB2Params:
    """Generalized beta of the second kind with parameters (a, b, p, q).

    The density is |a| y^(ap-1) / (b^(ap) B(p,q) (1 + (y/b)^a)^(p+q)).
    GB2(a, b, p, q) and GB2(-a, b, q, p) are the same distribution, so
    fitted parameters always use a > 0.
    """

    a: float
    b: float
    p: float
    q: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.a) and self.a != 0):
            raise ValueError("gb2 a must be nonzero")
        for name in ("b", "p", "q"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"gb2 {name} must be positive")

    @property
    def family(self) -> str:
        return "gb2"

    @property
    def dim(self) -> int:
        return 4

    def to_dict(self) -> dict:
        return {
            "family": "gb2",
            "a": float(self.a),
            "b": float(self.b),
            "p": float(self.p),
            "q": float(self.q),
        }


LossParams = LognormalParams | ParetoParams | GB2Params


def loss_params_from_dict(d: dict) -> LossParams:
    family = d["family"]
    if family == "lognormal":
        return LognormalParams(d["mu"], d["sigma"])
    if family == "pareto":
        return ParetoParams(d["shape"], d["scale_min"])
    if family == "gb2":
        return GB2Params(d["a"], d["b"], d["p"], d["q"])
    raise ValueError(f"unknown loss family tag {family!r}")


# ---------------------------------------------------------------------------
# priors


@dataclass(frozen=True)
class NIGPrior:
    """Normal-inverse-gamma prior on (mu, sigma^2) of a log-normal component.

    mu | sigma^2 ~ Normal(mu0, sigma^2 / r) and sigma^2 ~ InvGamma(a, b).
    """

    mu0: float
    r: float
    a: float
    b: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.mu0):
            raise ValueError("mu0 must be finite")
        for name in ("r", "a", "b"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"NIG {name} must be positive")

    def to_dict(self) -> dict:
        return {
            "family": "lognormal",
            "mu0": float(self.mu0),
            "r": float(self.r),
            "a": float(self.a),
            "b": float(self.b),
        }


@dataclass(frozen=True)
class ParetoGammaPrior:
    """Gamma(a, rate b) prior on the Pareto shape; scale_min is known."""

    a: float
    b: float
    scale_min: float

    def __post_init__(self) -> None:
        for name in ("a", "b", "scale_min"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"pareto-gamma {name} must be positive")

    def to_dict(self) -> dict:
        return {
            "family": "pareto",
            "a": float(self.a),
            "b": float(self.b),
            "scale_min": float(self.scale_min),
        }


@dataclass(frozen=True)
class GB2FlatPrior:
    """Improper flat prior on the GB2 log-parameters (handled by MH)."""

    def to_dict(self) -> dict:
        return {"family": "gb2"}


LossPrior = NIGPrior | ParetoGammaPrior | GB2FlatPrior


def loss_prior_from_dict(d: dict) -> LossPrior:
    family = d["family"]
    if family == "lognormal":
        return NIGPrior(d["mu0"], d["r"], d["a"], d["b"])
    if family == "pareto":
        return ParetoGammaPrior(d["a"], d["b"], d["scale_min"])
    if family == "gb2":
        return GB2FlatPrior()
    raise ValueError(f"unknown loss prior tag {family!r}")


def default_loss_prior(family: str, losses=None) -> LossPrior:
    """Stock prior for a component of the given family.

    The log-normal and Pareto defaults are strongly informative (the
    Pareto one pins the shape near 0.5); callers with real opinions
    should construct their own priors. For the Pareto, ``losses`` sets
    scale_min one ulp below the smallest observation so that the minimum
    stays inside the strict support.
    """
    if family == "lognormal":
        return NIGPrior(8.0, 100.0, 1.0, 1.0)
    if family == "pareto":
        if losses is None or len(losses) == 0:
            raise ValueError("pareto prior needs losses to set scale_min")
        smallest = float(np.min(losses))
        return ParetoGammaPrior(25000.0, 50000.0, np.nextafter(smallest, 0.0))
    if family == "gb2":
        return GB2FlatPrior()
    raise ValueError(f"unknown loss family tag {family!r}")


# ---------------------------------------------------------------------------
# log densities


def lognormal_logpdf(y, mu: float, sigma: float):
    """Log density of the log-normal; -inf off the support. Vectorised in y."""
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0
    y = np.atleast_1d(y)
    out = np.full(y.shape, -np.inf)
    ok = y > 0
    if ok.any():
        ly = np.log(y[ok])
        z = (ly - mu) / sigma
        out[ok] = -ly - math.log(sigma) - HALF_LOG_2PI - 0.5 * z * z
    return float(out[0]) if scalar else out


def pareto_logpdf(y, shape: float, scale_min: float):
    """Log density of the Pareto; zero density at or below scale_min."""
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0
    y = np.atleast_1d(y)
    out = np.full(y.shape, -np.inf)
    ok = y > scale_min
    if ok.any():
        out[ok] = (
            math.log(shape) + shape * math.log(scale_min) - (shape + 1.0) * np.log(y[ok])
        )
    return float(out[0]) if scalar else out


def gb2_logpdf(y, a: float, b: float, p: float, q: float):
    """GB2 log density, stable for large |a (log y - log b)|."""
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0
    y = np.atleast_1d(y)
    out = np.full(y.shape, -np.inf)
    ok = y > 0
    if ok.any():
        ly = np.log(y[ok])
        t = a * (ly - math.log(b))
        out[ok] = (
            math.log(abs(a))
            - ly
            + p * t
            - betaln(p, q)
            - (p + q) * np.logaddexp(0.0, t)
        )
    return float(out[0]) if scalar else out


def loss_logpdf(params: LossParams, y):
    if isinstance(params, LognormalParams):
        return lognormal_logpdf(y, params.mu, params.sigma)
    if isinstance(params, ParetoParams):
        return pareto_logpdf(y, params.shape, params.scale_min)
    if isinstance(params, GB2Params):
        return gb2_logpdf(y, params.a, params.b, params.p, params.q)
    raise TypeError(f"not a loss parameter object: {params!r}")


# ---------------------------------------------------------------------------
# samplers


def lognormal_sample(params: LognormalParams, rng: np.random.Generator, size=None):
    return rng.lognormal(params.mu, params.sigma, size=size)


def pareto_sample(params: ParetoParams, rng: np.random.Generator, size=None):
    u = rng.uniform(size=size)
    return params.scale_min * np.power(1.0 - u, -1.0 / params.shape)


def gb2_sample(params: GB2Params, rng: np.random.Generator, size=None):
    z = rng.beta(params.p, params.q, size=size)
    return params.b * np.power(z / (1.0 - z), 1.0 / params.a)


def loss_sample(params: LossParams, rng: np.random.Generator, size=None):
    if isinstance(params, LognormalParams):
        return lognormal_sample(params, rng, size)
    if isinstance(params, ParetoParams):
        return pareto_sample(params, rng, size)
    if isinstance(params, GB2Params):
        return gb2_sample(params, rng, size)
    raise TypeError(f"not a loss parameter object: {params!r}")


# ---------------------------------------------------------------------------
# weighted fits (EM M-step workhorses)


def weighted_mle_lognormal(Y, w, sigma_floor: float = SIGMA_FLOOR) -> LognormalParams:
    """Closed-form weighted fit of the log-normal.

    mu is the weighted mean of log Y and sigma the weighted standard
    deviation around it; with uniform weights this is the plain MLE.
    sigma is floored at ``sigma_floor``.
    """
    Y = np.asarray(Y, dtype=float)
    w = np.asarray(w, dtype=float)
    if Y.shape != w.shape:
        raise ValueError("Y and w must have equal length")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    m = w > 0
    if not m.any():
        raise ValueError("all weights are zero")
    ww = w[m]
    ly = np.log(Y[m])
    tot = ww.sum()
    mu = float(ly @ ww) / tot
    var = float(((ly - mu) ** 2) @ ww) / tot
    return LognormalParams(mu, max(math.sqrt(var), sigma_floor))


def weighted_map_fit_pareto(
    Y, w, scale_min: float, prior_a: float = 1.0, prior_b: float = 0.0
) -> ParetoParams:
    """Weighted posterior-mode fit of the Pareto shape with fixed scale_min.

    shape = (sum w + prior_a - 1) / (prior_b + sum w log(Y / scale_min)).
    The default (prior_a=1, prior_b=0) reduces to the weighted MLE.
    """
    Y = np.asarray(Y, dtype=float)
    w = np.asarray(w, dtype=float)
    if Y.shape != w.shape:
        raise ValueError("Y and w must have equal length")
    m = w > 0
    if not m.any():
        raise ValueError("all weights are zero")
    yy = Y[m]
    ww = w[m]
    if np.any(yy <= scale_min):
        raise ValueError("positively weighted observation at or below scale_min")
    tot = ww.sum()
    denom = prior_b + float(ww @ np.log(yy / scale_min))
    shape = (tot + prior_a - 1.0) / max(denom, 1e-12)
    return ParetoParams(shape, scale_min)


def _gb2_neg_weighted_loglik(x: np.ndarray, ly: np.ndarray, w: np.ndarray, s_ly: float, tot: float) -> float:
    # x = (log a, log b, log p, log q); hard box keeps exp() finite
    if np.any(np.abs(x) > 50.0):
        return np.inf
    a = math.exp(x[0])
    p = math.exp(x[2])
    q = math.exp(x[3])
    t = a * (ly - x[1])
    val = (
        tot * (x[0] - betaln(p, q))
        + p * float(w @ t)
        - s_ly
        - (p + q) * float(w @ np.logaddexp(0.0, t))
    )
    if not np.isfinite(val):
        return np.inf
    return -val


def fit_gb2(
    Y,
    w=None,
    current: GB2Params | None = None,
    restarts: int = 5,
    seed: int = 0,
    return_details: bool = False,
):
    """Weighted maximum-likelihood fit of the GB2 family.

    Runs a derivative-free simplex search over (log a, log b, log p, log q)
    from ``restarts`` deterministic seeded starting points (plus ``current``
    when given, so an EM sweep can never lose ground). The best final
    objective over all starts is kept; since the simplex never discards its
    best vertex, it is at least the objective at every start.

    Parameters
    ----------
    Y : array of positive observations.
    w : optional non-negative weights, default all ones.
    current : optional GB2Params used as an extra starting point.
    restarts : number of seeded starts.
    seed : seed for the starting-point perturbations.
    return_details : when True also return a dict with keys
        ``converged``, ``objective`` (the weighted log-likelihood at the
        fit) and ``n_starts``.
    """
    Y = np.asarray(Y, dtype=float)
    if w is None:
        w = np.ones_like(Y)
    else:
        w = np.asarray(w, dtype=float)
    if Y.shape != w.shape:
        raise ValueError("Y and w must have equal length")
    m = (w > 0) & (Y > 0)
    yy = Y[m]
    ww = w[m]
    if np.unique(yy).size < 4:
        raise ValueError("gb2 fit needs at least 4 distinct positively weighted points")
    ly = np.log(yy)
    tot = float(ww.sum())
    s_ly = float(ww @ ly)
    mean_ly = s_ly / tot
    sd_ly = max(math.sqrt(float(ww @ (ly - mean_ly) ** 2) / tot), 1e-3)

    # moment-flavoured starts: with p=q=1 the log-scale sd is roughly 1.81/a
    starts = []
    if current is not None:
        if current.a > 0:
            starts.append(np.log([current.a, current.b, current.p, current.q]))
        else:
            # same distribution with positive a
            starts.append(np.log([-current.a, current.b, current.q, current.p]))
    base = np.array([math.log(1.81 / sd_ly), mean_ly, 0.0, 0.0])
    starts.append(base)
    starts.append(np.array([0.0, mean_ly, math.log(2.0), math.log(2.0)]))
    rng = np.random.default_rng(seed)
    while len(starts) < restarts + (1 if current is not None else 0):
        starts.append(base + rng.normal(0.0, 0.5, size=4))

    best_x = None
    best_fun = np.inf
    any_success = False
    for x0 in starts:
        res = minimize(
            _gb2_neg_weighted_loglik,
            x0,
            args=(ly, ww, s_ly, tot),
            method="Nelder-Mead",
            options={"xatol": 1e-6, "fatol": 1e-8, "maxiter": 2000},
        )
        any_success = any_success or bool(res.success)
        if res.fun < best_fun:
            best_fun = res.fun
            best_x = res.x
    if best_x is None:
        raise FloatingPointError("gb2 objective not finite at any starting point")
    params = GB2Params(*np.exp(best_x))
    if return_details:
        return params, {
            "converged": bool(any_success),
            "objective": -float(best_fun),
            "n_starts": len(starts),
        }
    return params


# ---------------------------------------------------------------------------
# conjugate posterior updates


def conjugate_posterior_lognormal(Y_assigned, prior: NIGPrior) -> NIGPrior:
    """Normal-inverse-gamma update from log-scale observations.

    With x = log Y, n observations of mean m and centred sum of squares S:
    r' = r + n, mu0' = (r mu0 + n m)/(r + n), a' = a + n/2,
    b' = b + S/2 + (n r / (r + n)) (m - mu0)^2 / 2.
    Empty data returns the prior unchanged.
    """
    Y = np.asarray(Y_assigned, dtype=float)
    n = Y.size
    if n == 0:
        return prior
    if np.any(Y <= 0):
        raise ValueError("observations must be positive")
    x = np.log(Y)
    m = float(x.mean())
    r_new = prior.r + n
    mu0_new = (prior.r * prior.mu0 + n * m) / r_new
    a_new = prior.a + 0.5 * n
    b_new = (
        prior.b
        + 0.5 * float(((x - m) ** 2).sum())
        + 0.5 * (n * prior.r / r_new) * (m - prior.mu0) ** 2
    )
    return NIGPrior(mu0_new, r_new, a_new, b_new)


def conjugate_posterior_pareto(Y_assigned, prior: ParetoGammaPrior) -> ParetoGammaPrior:
    """Gamma update of the Pareto shape: (a + n, b + sum log(Y/scale_min))."""
    Y = np.asarray(Y_assigned, dtype=float)
    n = Y.size
    if n == 0:
        return prior
    if np.any(Y < prior.scale_min):
        raise ValueError("observation below the fixed scale_min")
    b_new = prior.b + float(np.log(Y / prior.scale_min).sum())
    return ParetoGammaPrior(prior.a + n, b_new, prior.scale_min)


def draw_from_prior_or_posterior(prior: LossPrior, rng: np.random.Generator) -> LossParams:
    """One exact draw of component parameters from an NIG or gamma law."""
    if isinstance(prior, NIGPrior):
        sigma2 = prior.b / rng.gamma(prior.a)
        mu = prior.mu0 + math.sqrt(sigma2 / prior.r) * rng.standard_normal()
        return LognormalParams(mu, math.sqrt(sigma2))
    if isinstance(prior, ParetoGammaPrior):
        shape = rng.gamma(prior.a, 1.0 / prior.b)
        return ParetoParams(shape, prior.scale_min)
    if isinstance(prior, GB2FlatPrior):
        raise ValueError("the flat GB2 prior is improper and has no sampler")
    raise TypeError(f"not a loss prior object: {prior!r}")


# ---------------------------------------------------------------------------
# helper log densities


def dirichlet_logpdf(x, alpha) -> float:
    """Log density of Dirichlet(alpha) at the simplex point x."""
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if x.shape != alpha.shape:
        raise ValueError("x and alpha must have equal length")
    return float(
        gammaln(alpha.sum()) - gammaln(alpha).sum() + xlogy(alpha - 1.0, x).sum()
    )


def gamma_logpdf(x: float, a: float, b: float) -> float:
    """Log density of Gamma(shape a, rate b) at x."""
    if x <= 0:
        return -np.inf
    return float(a * math.log(b) - gammaln(a) + (a - 1.0) * math.log(x) - b * x)


def nig_logpdf(mu: float, sigma2: float, prior: NIGPrior) -> float:
    """Log density of the normal-inverse-gamma law at (mu, sigma2)."""
    if sigma2 <= 0:
        return -np.inf
    out = (
        0.5 * (math.log(prior.r) - math.log(sigma2))
        - HALF_LOG_2PI
        - prior.r * (mu - prior.mu0) ** 2 / (2.0 * sigma2)
    )
    out += (
        prior.a * math.log(prior.b)
        - gammaln(prior.a)
        - (prior.a + 1.0) * math.log(sigma2)
        - prior.b / sigma2
    )
    return float(out)


def loss_prior_logpdf(prior: LossPrior, params: LossParams) -> float:
    """Log prior density of component parameters (zero for the flat GB2)."""
    if isinstance(prior, NIGPrior):
        if not isinstance(params, LognormalParams):
            raise TypeError("NIG prior expects lognormal parameters")
        return nig_logpdf(params.mu, params.sigma**2, prior)
    if isinstance(prior, ParetoGammaPrior):
        if not isinstance(params, ParetoParams):
            raise TypeError("gamma prior expects pareto parameters")
        return gamma_logpdf(params.shape, prior.a, prior.b)
    if isinstance(prior, GB2FlatPrior):
        return 0.0
    raise TypeError(f"not a loss prior object: {prior!r}")
