"""Claim ingestion and text preprocessing.

Reads (amount, description) rows from CSV, turns descriptions into
bag-of-words count vectors over a shared vocabulary, and provides the
TF-IDF summary and the loss-stratified train/test split used by the
fitting pipeline.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)

CORPUS_FORMAT_VERSION = 1

# Small built-in English stopword list; callers may pass their own set
# (typically this one unioned with a domain list read from a file).
DEFAULT_STOPWORDS = frozenset(
    """
    a an and are as at be been but by did do for from had has have he her hers
    him his i if in into is it its me my no nor not of off on or our ours she
    so than that the their theirs them then there these they this those to too
    was we were what when where which while who whom why will with you your
    yours
    """.split()
)

_TOKEN_RE = re.compile(r"[a-z]+")

# longest first so e.g. "ations" wins over "s"
_STEM_SUFFIXES = ("ations", "ation", "ments", "ment", "ings", "ing", "ied", "ies", "ed", "es", "ly", "s")


class DataError(ValueError):
    """Raised when input data cannot be used (maps to CLI exit code 3)."""


@dataclass(frozen=True)
class ClaimRecord:
    """One raw claim: a positive amount and a non-empty description."""

    claim_amount: float
    description: str

    def __post_init__(self) -> None:
        if not (math.isfinite(self.claim_amount) and self.claim_amount > 0):
            raise ValueError("claim_amount must be positive and finite")
        if not self.description.strip():
            raise ValueError("description must be non-empty")


class Vocabulary:
    """Ordered set of tokens with a token -> id lookup."""

    __slots__ = ("words", "index")

    def __init__(self, words) -> None:
        words = list(words)
        if not words:
            raise DataError("vocabulary must contain at least one word")
        if len(set(words)) != len(words):
            raise ValueError("vocabulary words must be distinct")
        self.words = words
        self.index = {w: i for i, w in enumerate(words)}

    @classmethod
    def from_token_lists(cls, token_lists) -> "Vocabulary":
        seen = set()
        for toks in token_lists:
            seen.update(toks)
        return cls(sorted(seen))

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.words == other.words

    def sha256(self) -> str:
        return hashlib.sha256("\n".join(self.words).encode("utf-8")).hexdigest()


class Document:
    """Sparse bag-of-words counts for one claim description."""

    __slots__ = ("word_ids", "counts")

    def __init__(self, word_ids, counts, vocab_size: int | None = None) -> None:
        word_ids = np.asarray(word_ids, dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if word_ids.shape != counts.shape or word_ids.ndim != 1:
            raise ValueError("word_ids and counts must be 1-d and equally long")
        if word_ids.size:
            order = np.argsort(word_ids)
            word_ids = word_ids[order]
            counts = counts[order]
            if np.any(np.diff(word_ids) == 0):
                raise ValueError("duplicate word id in document")
            if word_ids[0] < 0:
                raise ValueError("negative word id")
            if np.any(counts < 1):
                raise ValueError("document counts must be >= 1")
        if vocab_size is not None and word_ids.size and word_ids[-1] >= vocab_size:
            raise ValueError("word id outside the vocabulary")
        self.word_ids = word_ids
        self.counts = counts

    @property
    def length(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> dict:
        return {"ids": self.word_ids.tolist(), "counts": self.counts.tolist()}


class Corpus:
    """Aligned losses and documents over a shared vocabulary."""

    def __init__(self, vocabulary: Vocabulary, documents, losses) -> None:
        losses = np.asarray(losses, dtype=float)
        documents = list(documents)
        if losses.ndim != 1 or len(documents) != losses.size:
            raise ValueError("documents and losses must have equal length")
        if losses.size and not np.all(losses > 0):
            raise ValueError("losses must be positive")
        V = len(vocabulary)
        for doc in documents:
            if doc.word_ids.size and doc.word_ids[-1] >= V:
                raise ValueError("document refers to a word outside the vocabulary")
        self.vocabulary = vocabulary
        self.documents = documents
        self.losses = losses
        self._X: sparse.csr_matrix | None = None

    @property
    def n(self) -> int:
        return len(self.documents)

    def count_matrix(self) -> sparse.csr_matrix:
        """n x |V| CSR matrix of word counts (cached)."""
        if self._X is None:
            lens = np.array([d.word_ids.size for d in self.documents], dtype=np.int64)
            indptr = np.concatenate([[0], np.cumsum(lens)])
            if self.documents:
                indices = np.concatenate([d.word_ids for d in self.documents])
                data = np.concatenate([d.counts for d in self.documents]).astype(float)
            else:
                indices = np.empty(0, dtype=np.int64)
                data = np.empty(0, dtype=float)
            self._X = sparse.csr_matrix(
                (data, indices, indptr), shape=(self.n, len(self.vocabulary))
            )
        return self._X

    def doc_lengths(self) -> np.ndarray:
        return np.array([d.length for d in self.documents], dtype=np.int64)

    def subset(self, indices) -> "Corpus":
        indices = np.asarray(indices, dtype=np.int64)
        return Corpus(
            self.vocabulary,
            [self.documents[i] for i in indices],
            self.losses[indices],
        )


# ---------------------------------------------------------------------------
# ingestion


def load_csv(path, amount_column: str = "claim_amount", text_column: str = "description"):
    """Read claim records from a CSV file with a header row.

    Rows whose amount is missing, non-numeric or non-positive, and rows with
    blank descriptions, are rejected; their line numbers are logged.

    Returns
    -------
    list of ClaimRecord

    Raises
    ------
    DataError
        if a requested column is missing or no valid rows remain.
    """
    with open(path, newline="", encoding="utf-8") as f:
        # lines starting with '#' carry run metadata and are not records
        reader = csv.DictReader(line for line in f if not line.startswith("#"))
        header = reader.fieldnames or []
        for col in (amount_column, text_column):
            if col not in header:
                raise DataError(f"column {col!r} not found in {path}")
        records: list[ClaimRecord] = []
        rejected: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            raw = row.get(amount_column)
            text = row.get(text_column) or ""
            try:
                amount = float(raw)
            except (TypeError, ValueError):
                rejected.append(lineno)
                continue
            if not (math.isfinite(amount) and amount > 0) or not text.strip():
                rejected.append(lineno)
                continue
            records.append(ClaimRecord(amount, text))
    if rejected:
        logger.warning(
            "rejected %d rows of %s (line numbers %s)", len(rejected), path, rejected
        )
    if not records:
        raise DataError(f"zero valid rows in {path}")
    return records


def _stem(token: str) -> str:
    # crude suffix stripper, iterated to a fixed point so repeated
    # preprocessing cannot change the result
    while True:
        for suf in _STEM_SUFFIXES:
            if suf == "s" and token.endswith("ss"):
                continue
            if token.endswith(suf) and len(token) - len(suf) >= 3:
                token = token[: -len(suf)]
                break
        else:
            return token


def tokenize(text: str, stopwords=DEFAULT_STOPWORDS, stem: bool = False) -> list[str]:
    """Lowercase, strip punctuation, drop stopwords, optionally stem."""
    tokens = _TOKEN_RE.findall(text.lower())
    tokens = [t for t in tokens if t not in stopwords]
    if stem:
        tokens = [_stem(t) for t in tokens]
        tokens = [t for t in tokens if t not in stopwords]
    return tokens


def document_from_tokens(tokens, vocabulary: Vocabulary):
    """Map tokens onto an existing vocabulary.

    Tokens outside the vocabulary are dropped. Returns the Document and the
    number of dropped tokens.
    """
    counts = Counter(tokens)
    ids = []
    vals = []
    dropped = 0
    for tok, c in counts.items():
        wid = vocabulary.index.get(tok)
        if wid is None:
            dropped += c
        else:
            ids.append(wid)
            vals.append(c)
    return Document(ids, vals, vocab_size=len(vocabulary)), dropped


def preprocess(records, stopwords=None, stem: bool = False) -> Corpus:
    """Build a Corpus from raw claim records.

    Descriptions are lowercased, punctuation-stripped, stopword-filtered
    and optionally stemmed; the vocabulary is the sorted set of surviving
    tokens. Records whose description is emptied by filtering are dropped
    and their indices logged.
    """
    records = list(records)
    if not records:
        raise DataError("no records to preprocess")
    stopset = DEFAULT_STOPWORDS if stopwords is None else frozenset(stopwords)
    token_lists = []
    losses = []
    dropped = []
    for i, rec in enumerate(records):
        toks = tokenize(rec.description, stopset, stem)
        if toks:
            token_lists.append(toks)
            losses.append(rec.claim_amount)
        else:
            dropped.append(i)
    if dropped:
        logger.warning(
            "dropped %d documents emptied by preprocessing (record indices %s)",
            len(dropped),
            dropped,
        )
    if not token_lists:
        raise DataError("all documents empty after preprocessing")
    vocab = Vocabulary.from_token_lists(token_lists)
    docs = [document_from_tokens(toks, vocab)[0] for toks in token_lists]
    return Corpus(vocab, docs, losses)


# ---------------------------------------------------------------------------
# summaries and splitting


def tf_idf(corpus: Corpus) -> sparse.csr_matrix:
    """TF-IDF matrix: entry (i, v) is count * log(n / document frequency).

    Reporting aid only; inference never uses it. Columns for words that
    appear in no document (possible when the vocabulary is shared with
    another split) are zero.
    """
    X = corpus.count_matrix()
    df = np.asarray((X > 0).sum(axis=0)).ravel()
    idf = np.zeros(len(corpus.vocabulary))
    nz = df > 0
    idf[nz] = np.log(corpus.n / df[nz])
    return X.multiply(idf).tocsr()


def stratified_split(corpus: Corpus, test_fraction: float, bins: int = 10, seed: int = 0):
    """Split a corpus into (train, test) stratified on the loss amounts.

    Losses are ranked into ``bins`` equal-frequency bins; within each bin a
    seeded draw without replacement selects the test indices. Both outputs
    share the input's Vocabulary object.
    """
    if not (0.0 < test_fraction < 1.0):
        raise ValueError("test_fraction must lie in (0, 1)")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    n = corpus.n
    if n * test_fraction < bins:
        raise DataError("too few records per bin for this split")
    order = np.argsort(corpus.losses, kind="stable")
    bin_of = np.empty(n, dtype=np.int64)
    bin_of[order] = (np.arange(n, dtype=np.int64) * bins) // n
    rng = np.random.default_rng(seed)
    picked = []
    for b in range(bins):
        members = np.flatnonzero(bin_of == b)
        k = min(int(round(members.size * test_fraction)), members.size)
        if k > 0:
            picked.append(rng.choice(members, size=k, replace=False))
    test_idx = np.sort(np.concatenate(picked)) if picked else np.empty(0, np.int64)
    mask = np.ones(n, dtype=bool)
    mask[test_idx] = False
    train_idx = np.flatnonzero(mask)
    if train_idx.size == 0 or test_idx.size == 0:
        raise DataError("degenerate split: one side is empty")
    return corpus.subset(train_idx), corpus.subset(test_idx)


# ---------------------------------------------------------------------------
# snapshot serialization


def save_corpus_json(corpus: Corpus, path, extra: dict | None = None) -> None:
    """Write a corpus snapshot (vocabulary, sparse counts, losses) as JSON."""
    payload = {
        "format_version": CORPUS_FORMAT_VERSION,
        "vocabulary": corpus.vocabulary.words,
        "losses": corpus.losses.tolist(),
        "documents": [d.to_dict() for d in corpus.documents],
    }
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)


def load_corpus_json(path) -> Corpus:
    """Read a snapshot written by save_corpus_json."""
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    version = payload.get("format_version")
    if version != CORPUS_FORMAT_VERSION:
        raise DataError(f"unsupported corpus format_version {version!r}")
    vocab = Vocabulary(payload["vocabulary"])
    docs = [
        Document(d["ids"], d["counts"], vocab_size=len(vocab))
        for d in payload["documents"]
    ]
    return Corpus(vocab, docs, payload["losses"])
