"""Command line interface: simulate, split, fit, predict, evaluate.

Wires the pipeline corpus -> EM -> Gibbs -> prediction/metrics with a
single TOML or JSON config file. Every output file embeds the config hash
and the seed (JSON fields, or a leading '#' comment line in CSVs) so runs
are auditable. Exit codes: 0 success, 2 config error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ldmm.corpus import (
    DEFAULT_STOPWORDS,
    Corpus,
    DataError,
    document_from_tokens,
    load_corpus_json,
    load_csv,
    preprocess,
    save_corpus_json,
    stratified_split,
    tokenize,
)
from ldmm.em_fit import EmConfig, run_em
from ldmm.gibbs_fit import GibbsConfig, load_draws, run_gibbs, save_draws
from ldmm.loss_models import (
    GB2Params,
    LognormalParams,
    ParetoParams,
    loss_params_from_dict,
    loss_prior_from_dict,
)
from ldmm.mixture_core import (
    HyperParams,
    MixtureParams,
    default_hyperparams,
    load_model_json,
    save_model_json,
    simulate_dataset,
)
from ldmm.model_selection import evaluate_model, nll_aic_bic, top_words
from ldmm.predictive import predict_table, var_coverage

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Unusable configuration (maps to exit code 2)."""


# ---------------------------------------------------------------------------
# config plumbing


def _load_config(path) -> tuple[dict, str]:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    digest = hashlib.sha256(raw).hexdigest()[:12]
    suffix = p.suffix.lower()
    try:
        if suffix == ".json":
            cfg = json.loads(raw.decode("utf-8"))
        elif suffix == ".toml":
            cfg = tomllib.loads(raw.decode("utf-8"))
        else:
            try:
                cfg = tomllib.loads(raw.decode("utf-8"))
            except tomllib.TOMLDecodeError:
                cfg = json.loads(raw.decode("utf-8"))
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a table/object")
    return cfg, digest


def _require_config(args) -> tuple[dict, str]:
    if args.config is None:
        raise ConfigError("this command requires --config")
    return _load_config(args.config)


def _optional_config(args) -> tuple[dict, str]:
    if args.config is None:
        return {}, "none"
    return _load_config(args.config)


def _resolve_seed(args, cfg: dict) -> int:
    if args.seed is not None:
        return int(args.seed)
    return int(cfg.get("seed", 0))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _meta_line(config_hash: str, seed: int) -> str:
    return f"# config_hash={config_hash} seed={seed}"


def _write_csv(path: Path, header, rows, config_hash: str, seed: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(_meta_line(config_hash, seed) + "\n")
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)


def _stopwords_from_cfg(data_cfg: dict):
    path = data_cfg.get("stopwords_file")
    if not path:
        return None
    try:
        words = Path(path).read_text(encoding="utf-8").split()
    except OSError as e:
        raise ConfigError(f"cannot read stopwords file {path}: {e}") from e
    return DEFAULT_STOPWORDS | frozenset(w.lower() for w in words)


def _corpus_from_cfg(cfg: dict) -> Corpus:
    data_cfg = cfg.get("data", {})
    csv_path = data_cfg.get("csv")
    if not csv_path:
        raise ConfigError("config needs data.csv")
    records = load_csv(
        csv_path,
        amount_column=data_cfg.get("amount_column", "claim_amount"),
        text_column=data_cfg.get("text_column", "description"),
    )
    return preprocess(
        records,
        stopwords=_stopwords_from_cfg(data_cfg),
        stem=bool(data_cfg.get("stem", False)),
    )


def _families_from_cfg(model_cfg: dict):
    families = model_cfg.get("families")
    if not families:
        raise ConfigError("config needs model.families")
    families = tuple(str(f) for f in families)
    K = int(model_cfg.get("K", len(families)))
    if K != len(families):
        raise ConfigError("model.K disagrees with the length of model.families")
    return families


def _hyper_from_cfg(model_cfg: dict, families, V: int, losses) -> HyperParams:
    K = len(families)
    base = default_hyperparams(families, V, losses)
    alpha = model_cfg.get("alpha", 1.0)
    gamma = model_cfg.get("gamma", 2.0)
    alpha = np.full(K, float(alpha)) if np.isscalar(alpha) else np.asarray(alpha, float)
    gamma = np.full(V, float(gamma)) if np.isscalar(gamma) else np.asarray(gamma, float)
    priors = list(base.loss_priors)
    for item in model_cfg.get("loss_priors", []):
        idx = int(item.get("component", 0)) - 1
        if not 0 <= idx < K:
            raise ConfigError("loss_priors entries need component in 1..K")
        fields = {k: v for k, v in item.items() if k != "component"}
        priors[idx] = loss_prior_from_dict(fields)
    try:
        return HyperParams(alpha, gamma, tuple(priors))
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _component_trace_fields(comp) -> dict:
    if isinstance(comp, LognormalParams):
        return {"mu": comp.mu, "sigma": comp.sigma}
    if isinstance(comp, ParetoParams):
        return {"shape": comp.shape}
    if isinstance(comp, GB2Params):
        return {"a": comp.a, "b": comp.b, "p": comp.p, "q": comp.q}
    return {}


# ---------------------------------------------------------------------------
# commands


def _cmd_simulate(args) -> None:
    cfg, config_hash = _require_config(args)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args)
    sim = cfg.get("simulate")
    if not sim:
        raise ConfigError("config needs a [simulate] section with true parameters")
    try:
        params = MixtureParams(
            np.asarray(sim["theta"], dtype=float),
            tuple(loss_params_from_dict(c) for c in sim["components"]),
            np.asarray(sim["psi"], dtype=float),
        )
        n = int(sim["n"])
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"bad [simulate] section: {e}") from e
    lo = int(sim.get("length_min", 3))
    hi = int(sim.get("length_max", 10))
    if not 1 <= lo <= hi:
        raise ConfigError("need 1 <= length_min <= length_max")
    rng = np.random.default_rng(seed)
    corpus, z = simulate_dataset(
        params, n, rng, length_sampler=lambda r, m: r.integers(lo, hi + 1, size=m)
    )
    words = corpus.vocabulary.words
    claim_rows = []
    for doc, y in zip(corpus.documents, corpus.losses):
        text = " ".join(
            " ".join([words[wid]] * int(c)) for wid, c in zip(doc.word_ids, doc.counts)
        )
        claim_rows.append([repr(float(y)), text])
    _write_csv(out / "claims.csv", ["claim_amount", "description"], claim_rows, config_hash, seed)
    _write_csv(
        out / "assignments.csv",
        ["index", "component"],
        [[i, int(zi) + 1] for i, zi in enumerate(z)],
        config_hash,
        seed,
    )
    logger.info("wrote %s and %s", out / "claims.csv", out / "assignments.csv")


def _cmd_split(args) -> None:
    cfg, config_hash = _require_config(args)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args)
    corpus = _corpus_from_cfg(cfg)
    split_cfg = cfg.get("split", {})
    train, test = stratified_split(
        corpus,
        float(split_cfg.get("test_fraction", 0.2)),
        bins=int(split_cfg.get("bins", 10)),
        seed=seed,
    )
    extra = {"config_hash": config_hash, "seed": seed}
    save_corpus_json(train, out / "train.json", extra)
    save_corpus_json(test, out / "test.json", extra)
    logger.info("wrote %s (n=%d) and %s (n=%d)", out / "train.json", train.n, out / "test.json", test.n)


def _cmd_fit(args) -> None:
    cfg, config_hash = _require_config(args)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args)
    corpus = _corpus_from_cfg(cfg)
    split_cfg = cfg.get("split", {})
    frac = float(split_cfg.get("test_fraction", 0.2))
    train, test = stratified_split(corpus, frac, bins=int(split_cfg.get("bins", 10)), seed=seed)
    extra = {"config_hash": config_hash, "seed": seed}
    save_corpus_json(train, out / "train.json", extra)
    save_corpus_json(test, out / "test.json", extra)

    model_cfg = cfg.get("model", {})
    families = _families_from_cfg(model_cfg)
    hyper = _hyper_from_cfg(model_cfg, families, len(corpus.vocabulary), train.losses)
    em_cfg = cfg.get("em", {})
    emconf = EmConfig(
        K=len(families),
        families=families,
        max_iters=int(em_cfg.get("max_iters", 500)),
        tol=float(em_cfg.get("tol", 1e-6)),
        seed=seed,
        restarts=int(em_cfg.get("restarts", 5)),
    )
    em = run_em(train, hyper, emconf)
    nll, aic, bic = nll_aic_bic(em.params, train)
    tops = top_words(em.params, corpus.vocabulary)
    model_extra = {
        "config_hash": config_hash,
        "seed": seed,
        "families": list(families),
        "em_trace": em.trace.tolist(),
        "em_converged": em.converged,
        "em_iterations": em.iterations,
        "nll": nll,
        "aic": aic,
        "bic": bic,
        "nll_per_obs": nll / train.n,
        "aic_per_obs": aic / train.n,
        "bic_per_obs": bic / train.n,
        "top_words": [[[w, p] for w, p in comp] for comp in tops],
    }
    save_model_json(em.params, corpus.vocabulary, out / "model.json", model_extra)
    top_rows = []
    for k, comp in enumerate(tops):
        for rank, (w, p) in enumerate(comp, start=1):
            top_rows.append([k + 1, rank, w, p])
    _write_csv(
        out / "top_words.csv",
        ["component", "rank", "word", "probability"],
        top_rows,
        config_hash,
        seed,
    )
    logger.info("EM done: %d iterations, log posterior %.3f", em.iterations, em.log_posterior)

    if args.em_only:
        return
    gibbs_cfg = cfg.get("gibbs", {})
    gconf = GibbsConfig(
        sweeps=int(gibbs_cfg.get("sweeps", 4000)),
        burn_in=int(gibbs_cfg.get("burn_in", 2000)),
        thin=int(gibbs_cfg.get("thin", 2)),
        mh_step_scale=float(gibbs_cfg.get("mh_step_scale", 0.2)),
        adapt_burnin=bool(gibbs_cfg.get("adapt_burnin", True)),
        seed=seed,
    )
    draws = run_gibbs(train, hyper, families, em, gconf)
    save_draws(
        draws,
        out / "draws.jsonl",
        out / "draws_manifest.json",
        extra={"config_hash": config_hash, "seed": seed, "config": gibbs_cfg},
    )
    trace_header = ["sweep"] + [f"theta_{k + 1}" for k in range(draws.K)]
    fields_per_k = [
        sorted(_component_trace_fields(draws.components[0][k])) for k in range(draws.K)
    ]
    for k, names in enumerate(fields_per_k):
        trace_header += [f"{name}_{k + 1}" for name in names]
    trace_rows = []
    for t in range(draws.n_draws):
        row = [int(draws.sweep_indices[t])] + [float(x) for x in draws.thetas[t]]
        for k, names in enumerate(fields_per_k):
            vals = _component_trace_fields(draws.components[t][k])
            row += [vals[name] for name in names]
        trace_rows.append(row)
    _write_csv(out / "trace.csv", trace_header, trace_rows, config_hash, seed)
    logger.info("Gibbs done: %d retained draws in %.1fs", draws.n_draws, draws.wall_clock_s)


def _read_predict_rows(path, amount_column: str, text_column: str):
    """Rows for prediction: text required, amount optional (RBNS claims)."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(line for line in f if not line.startswith("#"))
        header = reader.fieldnames or []
        if text_column not in header:
            raise DataError(f"column {text_column!r} not found in {path}")
        has_amount = amount_column in header
        texts = []
        amounts = []
        for row in reader:
            text = row.get(text_column) or ""
            if not text.strip():
                continue
            amount = None
            if has_amount:
                try:
                    val = float(row.get(amount_column))
                    amount = val if math.isfinite(val) and val > 0 else None
                except (TypeError, ValueError):
                    amount = None
            texts.append(text)
            amounts.append(amount)
    if not texts:
        raise DataError(f"no usable rows in {path}")
    return texts, amounts


def _cmd_predict(args) -> None:
    cfg, config_hash = _optional_config(args)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args)
    params, payload = load_model_json(args.model)
    vocab_corpus = load_corpus_json(args.vocab)
    vocab = vocab_corpus.vocabulary
    if vocab.sha256() != payload.get("vocab_sha256"):
        raise DataError("vocabulary does not match the model's vocabulary hash")
    draws = load_draws(args.draws)
    if draws.psis.shape[2] != len(vocab):
        raise DataError("draws and vocabulary disagree on |V|")

    data_cfg = cfg.get("data", {})
    levels = tuple(cfg.get("predict", {}).get("levels", (0.95, 0.99)))
    for lv in levels:
        if not 0.0 < lv < 1.0:
            raise ConfigError("risk levels must lie in (0, 1)")
    texts, amounts = _read_predict_rows(
        args.data,
        data_cfg.get("amount_column", "claim_amount"),
        data_cfg.get("text_column", "description"),
    )
    stopset = _stopwords_from_cfg(data_cfg)
    stem = bool(data_cfg.get("stem", False))
    docs = []
    unseen = []
    for text in texts:
        toks = tokenize(text, DEFAULT_STOPWORDS if stopset is None else stopset, stem)
        doc, dropped = document_from_tokens(toks, vocab)
        docs.append(doc)
        unseen.append(dropped)
    rows = predict_table(docs, draws, seed, levels)

    header = ["description_sha256", "n_unseen_words", "mean"]
    for lv in levels:
        tag = f"{lv * 100:g}"
        header += [f"var_{tag}", f"cte_{tag}", f"cte_{tag}_degenerate"]
    header.append("modal_topic")
    out_rows = []
    for text, n_unseen, row in zip(texts, unseen, rows):
        rec = [hashlib.sha256(text.encode("utf-8")).hexdigest()[:12], n_unseen, row["mean"]]
        for lv in levels:
            tag = f"{lv * 100:g}"
            rec += [row[f"var_{tag}"], row[f"cte_{tag}"], int(row[f"cte_{tag}_degenerate"])]
        rec.append(row["modal_topic"])
        out_rows.append(rec)
    _write_csv(out / "predictions.csv", header, out_rows, config_hash, seed)

    if all(a is not None for a in amounts):
        losses = np.array(amounts, dtype=float)
        coverage = {
            "config_hash": config_hash,
            "seed": seed,
            "n": len(amounts),
        }
        for lv in levels:
            tag = f"{lv * 100:g}"
            per_claim = [row[f"var_{tag}"] for row in rows]
            coverage[f"coverage_{tag}"] = var_coverage(losses, per_claim)
        _write_json(out / "coverage.json", coverage)
        logger.info("wrote %s", out / "coverage.json")
    logger.info("wrote %s", out / "predictions.csv")


def _cmd_evaluate(args) -> None:
    cfg, config_hash = _optional_config(args)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args)
    params, payload = load_model_json(args.model)
    train = load_corpus_json(args.train)
    test = load_corpus_json(args.test)
    model_hash = payload.get("vocab_sha256")
    if train.vocabulary.sha256() != model_hash or test.vocabulary.sha256() != model_hash:
        raise DataError("train/test vocabulary does not match the model's hash")
    draws = load_draws(args.draws)
    truncations = tuple(cfg.get("evaluate", {}).get("truncations", (0.7, 0.8, 0.9, 1.0)))
    report = evaluate_model(params, draws, train, test, truncations=truncations, seed=seed)
    payload_out = {"config_hash": config_hash, "seed": seed}
    payload_out.update(report.to_dict())
    _write_json(out / "metrics.json", payload_out)
    header, row = report.csv_header_and_row()
    _write_csv(out / "metrics.csv", header, [row], config_hash, seed)
    logger.info("wrote %s and %s", out / "metrics.json", out / "metrics.csv")


# ---------------------------------------------------------------------------
# parser and entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldmm",
        description="Joint mixture modelling of claim amounts and descriptions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="TOML or JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker thread bound")
        p.add_argument("--out", default=".", help="output directory")

    p_sim = sub.add_parser("simulate", help="draw a synthetic claims CSV from true parameters")
    add_common(p_sim)
    p_sim.set_defaults(func=_cmd_simulate)

    p_split = sub.add_parser("split", help="preprocess a CSV and write train/test snapshots")
    add_common(p_split)
    p_split.set_defaults(func=_cmd_split)

    p_fit = sub.add_parser("fit", help="preprocess, split, run EM and the Gibbs sampler")
    add_common(p_fit)
    p_fit.add_argument("--em-only", action="store_true", help="skip the Gibbs sampler")
    p_fit.set_defaults(func=_cmd_fit)

    p_pred = sub.add_parser("predict", help="posterior-predictive risk per claim")
    add_common(p_pred)
    p_pred.add_argument("--model", required=True, help="model JSON from fit")
    p_pred.add_argument("--draws", required=True, help="draws JSONL from fit")
    p_pred.add_argument("--vocab", required=True, help="corpus snapshot carrying the vocabulary")
    p_pred.add_argument("--data", required=True, help="test CSV of claims")
    p_pred.set_defaults(func=_cmd_predict)

    p_eval = sub.add_parser("evaluate", help="metric report for a fitted model")
    add_common(p_eval)
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--draws", required=True)
    p_eval.add_argument("--train", required=True, help="train corpus snapshot")
    p_eval.add_argument("--test", required=True, help="test corpus snapshot")
    p_eval.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except (FloatingPointError, ZeroDivisionError, OverflowError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
