"""Joint mixture modelling of claim amounts and claim descriptions.

Each latent component pairs a parametric loss distribution for the claim
amount with a multinomial word distribution for the short text
description. Fitting is MAP expectation-maximisation or MH-within-Gibbs
posterior sampling; on top sit posterior-predictive risk measures (VaR,
CTE) and model comparison metrics (DIC, Wasserstein, perplexity,
stability).
"""

from ldmm.corpus import (
    ClaimRecord,
    Corpus,
    DataError,
    Document,
    Vocabulary,
    document_from_tokens,
    load_corpus_json,
    load_csv,
    preprocess,
    save_corpus_json,
    stratified_split,
    tf_idf,
    tokenize,
)
from ldmm.loss_models import (
    GB2FlatPrior,
    GB2Params,
    LognormalParams,
    NIGPrior,
    ParetoGammaPrior,
    ParetoParams,
    conjugate_posterior_lognormal,
    conjugate_posterior_pareto,
    default_loss_prior,
    dirichlet_logpdf,
    draw_from_prior_or_posterior,
    fit_gb2,
    gb2_logpdf,
    gb2_sample,
    lognormal_logpdf,
    lognormal_sample,
    loss_logpdf,
    loss_sample,
    pareto_logpdf,
    pareto_sample,
    weighted_map_fit_pareto,
    weighted_mle_lognormal,
)
from ldmm.mixture_core import (
    HyperParams,
    MixtureParams,
    default_hyperparams,
    doc_only_responsibilities,
    load_model_json,
    log_complete_posterior,
    log_responsibilities,
    observed_data_deviance,
    responsibility_matrix,
    save_model_json,
    simulate_dataset,
    synthetic_vocabulary,
)
from ldmm.em_fit import EmConfig, EmResult, e_step, m_step, observed_log_posterior, run_em
from ldmm.gibbs_fit import (
    GibbsConfig,
    PosteriorDraws,
    draw_phi_k,
    draw_psi_k,
    draw_theta,
    draw_z,
    gibbs_sweep,
    load_draws,
    run_gibbs,
    save_draws,
)
from ldmm.predictive import (
    CteResult,
    PredictiveSample,
    cte,
    predict,
    predict_table,
    value_at_risk,
    var_coverage,
)
from ldmm.model_selection import (
    MetricReport,
    dic,
    evaluate_model,
    nll_aic_bic,
    perplexity,
    sample_loss_marginal,
    top_words,
    topic_stability,
    wasserstein1,
)

__version__ = "0.1.0"

__all__ = [
    "ClaimRecord",
    "Corpus",
    "DataError",
    "Document",
    "Vocabulary",
    "document_from_tokens",
    "load_corpus_json",
    "load_csv",
    "preprocess",
    "save_corpus_json",
    "stratified_split",
    "tf_idf",
    "tokenize",
    "GB2FlatPrior",
    "GB2Params",
    "LognormalParams",
    "NIGPrior",
    "ParetoGammaPrior",
    "ParetoParams",
    "conjugate_posterior_lognormal",
    "conjugate_posterior_pareto",
    "default_loss_prior",
    "dirichlet_logpdf",
    "draw_from_prior_or_posterior",
    "fit_gb2",
    "gb2_logpdf",
    "gb2_sample",
    "lognormal_logpdf",
    "lognormal_sample",
    "loss_logpdf",
    "loss_sample",
    "pareto_logpdf",
    "pareto_sample",
    "weighted_map_fit_pareto",
    "weighted_mle_lognormal",
    "HyperParams",
    "MixtureParams",
    "default_hyperparams",
    "doc_only_responsibilities",
    "load_model_json",
    "log_complete_posterior",
    "log_responsibilities",
    "observed_data_deviance",
    "responsibility_matrix",
    "save_model_json",
    "simulate_dataset",
    "synthetic_vocabulary",
    "EmConfig",
    "EmResult",
    "e_step",
    "m_step",
    "observed_log_posterior",
    "run_em",
    "GibbsConfig",
    "PosteriorDraws",
    "draw_phi_k",
    "draw_psi_k",
    "draw_theta",
    "draw_z",
    "gibbs_sweep",
    "load_draws",
    "run_gibbs",
    "save_draws",
    "CteResult",
    "PredictiveSample",
    "cte",
    "predict",
    "predict_table",
    "value_at_risk",
    "var_coverage",
    "MetricReport",
    "dic",
    "evaluate_model",
    "nll_aic_bic",
    "perplexity",
    "sample_loss_marginal",
    "top_words",
    "topic_stability",
    "wasserstein1",
    "__version__",
]
