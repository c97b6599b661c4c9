"""Semantic evaluation of utterance embeddings.

Paraphrase retrieval treats captions of the same image as paraphrases and
ranks every other utterance by cosine similarity to a query. Representational
similarity analysis (RSA) correlates pairwise cosine similarities among
utterance embeddings with those among the matching image vectors. Baselines
(mean MFCC, random vectors) and two leakage probes round this out.
"""
from dataclasses import dataclass, field
import json

import numpy as np

from .errors import DataError, NumericsError

RECALL_KS = (1, 5, 10)
TIE_DECIMALS = 12


@dataclass
class EmbeddingSet:
    vectors: np.ndarray
    utterance_ids: list
    image_ids: list
    speaker_ids: list = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        n = len(self.vectors)
        if len(self.utterance_ids) != n or len(self.image_ids) != n:
            raise DataError(
                f"{n} vectors but {len(self.utterance_ids)} utterance ids / {len(self.image_ids)} image ids"
            )
        if self.speaker_ids is not None and len(self.speaker_ids) != n:
            raise DataError(f"{n} vectors but {len(self.speaker_ids)} speaker ids")


@dataclass
class MetricReport:
    median_rank: float = None
    recall_at: dict = field(default_factory=dict)
    recall_raw_at: dict = field(default_factory=dict)
    rsa: float = None
    probe_r2: float = None
    probe_r2_relabeled: float = None
    num_queries: int = 0

    def to_dict(self):
        out = {"num_queries": self.num_queries}
        if self.median_rank is not None:
            out["median_rank"] = self.median_rank
            for k, v in self.recall_at.items():
                out[f"recall@{k}"] = v
            for k, v in self.recall_raw_at.items():
                out[f"recall_raw@{k}"] = v
        for key in ("rsa", "probe_r2", "probe_r2_relabeled"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return out

    def to_text(self):
        return "\n".join(f"{k}: {v:.6g}" if isinstance(v, float) else f"{k}: {v}"
                         for k, v in self.to_dict().items())

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def unit_rows(x):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise NumericsError("zero vector has no cosine similarity")
    return x / norms


def cosine_similarity_matrix(x):
    u = unit_rows(x)
    return u @ u.T


def paraphrase_retrieval(vectors, image_ids=None, ks=RECALL_KS, chunk=512):
    """Median rank of the best paraphrase and recall@K over all queries.

    Each utterance is a query against all others (itself excluded), ranked by
    descending cosine similarity with ties broken by ascending index. Queries
    without any paraphrase are skipped. Similarities are rounded to 12
    decimals first so that rounding noise cannot break exact ties. ``recall@K`` divides the number of
    paraphrases in the top K by ``min(K, #paraphrases)``; ``recall_raw@K``
    divides by K.
    """
    if isinstance(vectors, EmbeddingSet):
        vectors, image_ids = vectors.vectors, vectors.image_ids
    if image_ids is None:
        raise DataError("image ids are required")
    n = len(vectors)
    if n < 2:
        raise DataError("paraphrase retrieval needs at least 2 utterances")
    _, labels = np.unique(np.asarray(image_ids, dtype=object).astype(str), return_inverse=True)
    counts = np.bincount(labels)
    has_para = counts[labels] > 1
    if not has_para.any():
        raise DataError("no utterance has a paraphrase (every image has a single caption)")
    u = unit_rows(vectors)

    best_ranks = []
    hits = {k: [] for k in ks}
    n_para = []
    for start in range(0, n, chunk):
        rows = np.arange(start, min(start + chunk, n))
        rows = rows[has_para[rows]]
        if len(rows) == 0:
            continue
        sims = np.round(u[rows] @ u.T, TIE_DECIMALS)
        sims[np.arange(len(rows)), rows] = -np.inf
        # stable sort on negated similarity: ties resolved by ascending index
        order = np.argsort(-sims, axis=1, kind="stable")[:, : n - 1]
        relevant = labels[order] == labels[rows][:, None]
        best_ranks.append(np.argmax(relevant, axis=1) + 1)
        for k in ks:
            hits[k].append(relevant[:, :k].sum(axis=1))
        n_para.append(counts[labels[rows]] - 1)

    best_ranks = np.concatenate(best_ranks)
    n_para = np.concatenate(n_para)
    recall = {k: float(np.mean(np.concatenate(hits[k]) / np.minimum(k, n_para))) for k in ks}
    recall_raw = {k: float(np.mean(np.concatenate(hits[k]) / k)) for k in ks}
    return MetricReport(median_rank=float(np.median(best_ranks)), recall_at=recall,
                        recall_raw_at=recall_raw, num_queries=len(best_ranks))


def chance_recall(k, paraphrases, candidates):
    """Expected recall@K of a random ranking (``min(K, P)`` normalization)."""
    return k * paraphrases / candidates / min(k, paraphrases)


def upper_triangle(m):
    return m[np.triu_indices(m.shape[0], k=1)]


def rsa(a, b):
    """Pearson correlation of the off-diagonal upper triangles of the two
    cosine-similarity matrices. Rows of ``a`` and ``b`` must be aligned."""
    a = np.asarray(a)
    b = np.asarray(b)
    if len(a) != len(b):
        raise DataError(f"RSA needs row-aligned inputs, got {len(a)} and {len(b)} rows")
    if len(a) < 3:
        raise DataError("RSA needs at least 3 items")
    sa = upper_triangle(cosine_similarity_matrix(a))
    sb = upper_triangle(cosine_similarity_matrix(b))
    sa = sa - sa.mean()
    sb = sb - sb.mean()
    da, db = np.sqrt(sa @ sa), np.sqrt(sb @ sb)
    if da == 0 or db == 0:
        raise NumericsError("similarity vector has zero variance")
    return float(np.clip((sa @ sb) / (da * db), -1.0, 1.0))


def mean_mfcc_baseline(features):
    if len(features) == 0:
        raise DataError("no utterances")
    return np.stack([np.asarray(f, dtype=np.float64).mean(axis=0) for f in features])


def chance_baseline(n, dim, seed=0):
    return np.random.default_rng(seed).standard_normal((n, dim))


def _split(n, test_fraction, rng):
    perm = rng.permutation(n)
    n_test = max(1, int(round(test_fraction * n)))
    return perm[n_test:], perm[:n_test]


def _probe_r2(vectors, targets, train, test, k):
    from sklearn.decomposition import PCA
    from sklearn.metrics import r2_score
    from sklearn.neighbors import KNeighborsRegressor

    pca = PCA(n_components=2).fit(vectors[train])
    model = KNeighborsRegressor(n_neighbors=k).fit(pca.transform(vectors[train]), targets[train])
    return float(r2_score(targets[test], model.predict(pca.transform(vectors[test]))))


def artifact_probe(vectors, targets, seed=0, test_fraction=0.2, k=5):
    """Holdout R^2 of predicting a numeric id from the first two principal
    components with k-nearest-neighbor regression.

    Returns ``(r2, r2_relabeled)``; the second value repeats the probe after
    randomly permuting the targets.
    """
    if isinstance(vectors, EmbeddingSet):
        vectors = vectors.vectors
    x = np.asarray(vectors, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if len(x) < 50:
        raise DataError(f"artifact probe needs at least 50 items, got {len(x)}")
    if len(y) != len(x):
        raise DataError("targets must be row-aligned with the embeddings")
    rng = np.random.default_rng(seed)
    train, test = _split(len(x), test_fraction, rng)
    if np.allclose(x[train].var(axis=0).sum(), 0.0):
        raise NumericsError("embeddings have zero variance; PCA is degenerate")
    r2 = _probe_r2(x, y, train, test, k)
    r2_relabeled = _probe_r2(x, rng.permutation(y), train, test, k)
    return r2, r2_relabeled


def speaker_probe(vectors, speakers, seed=0, test_fraction=0.3):
    """Held-out accuracy of a logistic-regression speaker classifier.

    Returns ``(accuracy, chance)`` where chance is the majority-class rate of
    the held-out split.
    """
    from sklearn.linear_model import LogisticRegression

    x = np.asarray(vectors, dtype=np.float64)
    _, y = np.unique(np.asarray(speakers, dtype=object).astype(str), return_inverse=True)
    rng = np.random.default_rng(seed)
    train, test = _split(len(x), test_fraction, rng)
    clf = LogisticRegression(max_iter=2000).fit(x[train], y[train])
    acc = float(np.mean(clf.predict(x[test]) == y[test]))
    chance = float(np.bincount(y[test]).max() / len(test))
    return acc, chance
