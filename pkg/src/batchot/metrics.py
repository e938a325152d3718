"""Retrieval metrics and a linear probe for embedded test sets.

Retrieval follows the SHREC-contest conventions: every sample queries all
others ranked by ascending Euclidean distance (ties by index), ``R`` is the
number of other members of the query's class, and

* NN: top-1 is relevant,
* FT / ST: recall within the top ``R`` / ``2R``,
* E: F-measure of precision and recall at cutoff 32,
* DCG: gain 1 per relevant item, discount ``1/log2(rank)`` from rank 2 on,
  normalized by the ideal ordering,
* mAP: mean over queries of the mean precision at each relevant rank.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit

from batchot.errors import InputError

__all__ = [
    "E_MEASURE_CUTOFF",
    "LinearClassifier",
    "RetrievalReport",
    "accuracy",
    "classify",
    "retrieval_metrics",
    "train_linear_classifier",
]

E_MEASURE_CUTOFF = 32
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class RetrievalReport:
    nn: float
    ft: float
    st: float
    e_measure: float
    dcg: float
    map: float
    per_query_ap: np.ndarray
    excluded_queries: int = 0

    def as_rows(self) -> list[tuple[str, float]]:
        return [
            ("nn", self.nn),
            ("ft", self.ft),
            ("st", self.st),
            ("e_measure", self.e_measure),
            ("dcg", self.dcg),
            ("map", self.map),
        ]


def _query_scores(rel: np.ndarray, n_rel: np.ndarray) -> np.ndarray:
    """Per-query (nn, ft, st, e, dcg, ap) for a block of ranked relevance rows."""
    rows, length = rel.shape
    idx = np.arange(rows)
    cum = np.cumsum(rel, axis=1)
    relf = rel.astype(np.float64)

    nn = relf[:, 0]
    ft = cum[idx, n_rel - 1] / n_rel
    st = cum[idx, np.minimum(2 * n_rel, length) - 1] / n_rel

    k = min(E_MEASURE_CUTOFF, length)
    hits = cum[:, k - 1]
    precision = hits / k
    recall = hits / n_rel
    denom = precision + recall
    e = np.divide(2 * precision * recall, denom, out=np.zeros(rows), where=denom > 0)

    ranks = np.arange(1, length + 1)
    discount = np.ones(length)
    discount[1:] = 1.0 / np.log2(ranks[1:])
    ideal = np.cumsum(discount)[n_rel - 1]
    dcg = (relf @ discount) / ideal

    ap = np.sum(relf * cum / ranks, axis=1) / n_rel
    return np.stack([nn, ft, st, e, dcg, ap], axis=1)


def retrieval_metrics(embeddings, labels) -> RetrievalReport:
    """Leave-one-out retrieval report over a labeled embedding set.

    Queries whose class has no other member are skipped and counted in
    ``excluded_queries``.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise InputError("need a (q, d) embedding matrix and q labels")
    q = x.shape[0]
    if q < 2:
        raise InputError("need at least two samples")
    if not np.all(np.isfinite(x)):
        raise InputError("embeddings have non-finite entries")

    _, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    n_rel_all = counts[inverse] - 1
    valid = np.flatnonzero(n_rel_all > 0)
    if valid.size == 0:
        raise InputError("no query has a relevant item")

    chunk = max(1, _CHUNK_ELEMENTS // q)
    scores = np.empty((valid.size, 6))
    for start in range(0, valid.size, chunk):
        qi = valid[start : start + chunk]
        dist = cdist(x[qi], x, metric="euclidean")
        dist[np.arange(qi.size), qi] = np.inf
        order = np.argsort(dist, axis=1, kind="stable")[:, :-1]
        rel = labels[order] == labels[qi][:, None]
        scores[start : start + qi.size] = _query_scores(rel, n_rel_all[qi])

    means = [math.fsum(col) / valid.size for col in scores.T]
    ap = scores[:, 5].copy()
    return RetrievalReport(*means, per_query_ap=ap, excluded_queries=int(q - valid.size))


def report_csv(report: RetrievalReport, extra: dict[str, float] | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "value"])
    for name, value in report.as_rows():
        writer.writerow([name, repr(float(value))])
    for name, value in (extra or {}).items():
        writer.writerow([name, repr(float(value))])
    return buf.getvalue()


def report_table(report: RetrievalReport, extra: dict[str, float] | None = None) -> str:
    rows = report.as_rows() + list((extra or {}).items())
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name:<{width}}  {value:.6f}" for name, value in rows)


@dataclass(frozen=True)
class LinearClassifier:
    """One-vs-rest logistic scorers on standardized features."""

    classes: np.ndarray
    weights: np.ndarray
    bias: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    def scores(self, x) -> np.ndarray:
        z = (np.asarray(x, dtype=np.float64) - self.mean) / self.scale
        return z @ self.weights + self.bias


def train_linear_classifier(embeddings, labels, epochs: int = 500, lr: float = 0.5, seed: int = 0) -> LinearClassifier:
    """Full-batch gradient descent on per-class logistic losses."""
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise InputError("need at least two classes to train a classifier")
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise InputError("need a (m, d) embedding matrix and m labels")
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    z = (x - mean) / scale
    targets = (labels[:, None] == classes[None, :]).astype(np.float64)

    rng = np.random.default_rng(seed)
    w = 0.01 * rng.standard_normal((x.shape[1], classes.size))
    b = np.zeros(classes.size)
    m = x.shape[0]
    for _ in range(epochs):
        err = expit(z @ w + b) - targets
        w -= lr * (z.T @ err) / m
        b -= lr * err.sum(axis=0) / m
    return LinearClassifier(classes, w, b, mean, scale)


def classify(classifier: LinearClassifier, embeddings) -> np.ndarray:
    return classifier.classes[np.argmax(classifier.scores(embeddings), axis=1)]


def accuracy(classifier: LinearClassifier, embeddings, labels) -> float:
    """Mean per-category accuracy."""
    labels = np.asarray(labels)
    predicted = classify(classifier, embeddings)
    per_class = [np.mean(predicted[labels == c] == c) for c in np.unique(labels)]
    return math.fsum(per_class) / len(per_class)
