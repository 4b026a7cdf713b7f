"""Pre-trained word embeddings: loading, row/column standardization, statistics.

Raw pre-trained vectors have much smaller entries than a unit-variance random
initialization (small row variance) and widely varying row norms. The
transforms here rescale without centering:

* ``es`` divides each row by its population standard deviation,
* ``fs`` divides each column by its population standard deviation,
* ``en`` scales each row to unit L2 norm.

The transforms accept a bare ``ndarray`` (pure math, re-applicable) or an
:class:`EmbeddingMatrix`, which tracks which rows came from the file and
refuses a second transform.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ContractError, DegenerateError, DimensionError, ParseError

SQRT3 = math.sqrt(3.0)

STRATEGIES = ("random", "raw", "per-example-standardized", "per-feature-standardized",
              "per-example-normalized")
TRANSFORM_TAGS = {
    "none": None,
    "es": "per-example-standardized",
    "fs": "per-feature-standardized",
    "en": "per-example-normalized",
}
STATS_HEADER = ["strategy", "l2_mean", "l2_std", "mv_mean", "mv_std", "cos_mean", "cos_std",
                "pairs", "seed"]


@dataclass
class EmbeddingMatrix:
    vectors: np.ndarray
    words: list = field(default_factory=list)
    pretrained: np.ndarray | None = None
    strategy: str = "random"

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise DimensionError(f"embedding matrix must be 2-D, got {self.vectors.shape}")
        if self.pretrained is None:
            self.pretrained = np.zeros(len(self.vectors), dtype=bool)
        if self.words and len(self.words) != len(self.vectors):
            raise DimensionError(f"{len(self.words)} words for {len(self.vectors)} rows")
        if self.strategy not in STRATEGIES:
            raise ContractError(f"unknown strategy tag {self.strategy!r}")

    @property
    def shape(self):
        return self.vectors.shape

    @property
    def coverage(self):
        return float(self.pretrained.mean()) if len(self.pretrained) else 0.0

    def row_label(self, i):
        return self.words[i] if self.words else f"row {i}"


def random_embedding(vocab_size, d, seed, words=None):
    """I.i.d. U(-sqrt 3, sqrt 3) entries: unit variance per entry."""
    if vocab_size < 1 or d < 1:
        raise ContractError("vocab_size and d must be >= 1")
    rng = np.random.default_rng(seed)
    vectors = rng.uniform(-SQRT3, SQRT3, size=(vocab_size, d))
    return EmbeddingMatrix(vectors, list(words) if words is not None else [], strategy="random")


def _parse_header(tokens):
    if len(tokens) != 2:
        return None
    try:
        return int(tokens[0]), int(tokens[1])
    except ValueError:
        return None


def read_embedding_file(path, words=None, dim=None):
    """Read a text embedding file into ``{word: vector}``.

    Only words in ``words`` are kept when it is given. ``dim`` is the
    configured dimension; a header or first row disagreeing with it raises
    :class:`DimensionError`.
    """
    path = Path(path)
    keep = set(words) if words is not None else None
    found = {}
    d = dim
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n").rstrip(" ")
            if not line:
                continue
            tokens = line.split(" ")
            if lineno == 1:
                header = _parse_header(tokens)
                if header is not None:
                    if dim is not None and header[1] != dim:
                        raise DimensionError(
                            f"{path}: header dimension {header[1]} disagrees with configured {dim}")
                    d = header[1]
                    continue
            if d is None:
                d = len(tokens) - 1
                if d < 1:
                    raise ParseError("expected '<word> v1 ... vd'", path, lineno)
            if len(tokens) != d + 1:
                if lineno == 1 and dim is not None:
                    raise DimensionError(
                        f"{path}: row dimension {len(tokens) - 1} disagrees with configured {dim}")
                raise ParseError(f"expected {d + 1} fields, found {len(tokens)}", path, lineno)
            word = tokens[0]
            if (keep is not None and word not in keep) or word in found:
                continue
            try:
                found[word] = np.array([float(x) for x in tokens[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"bad number: {exc}", path, lineno) from None
    if d is None:
        d = dim
    return found, d


def load_pretrained(path, vocab, seed, dim=None):
    """Build a ``|vocab| x d`` matrix from a text embedding file.

    Rows for words in the file are copied verbatim; the others are drawn
    from the random initializer (same seed, so the result is reproducible).
    Returns ``(matrix, coverage)``.
    """
    words = list(vocab)
    if not words:
        raise ContractError("vocabulary is empty")
    found, d = read_embedding_file(path, words, dim)
    if d is None:
        raise ParseError("embedding file has no vectors and no header", path)
    base = random_embedding(len(words), d, seed, words)
    pretrained = np.zeros(len(words), dtype=bool)
    for i, w in enumerate(words):
        vec = found.get(w)
        if vec is not None:
            base.vectors[i] = vec
            pretrained[i] = True
    emb = EmbeddingMatrix(base.vectors, words, pretrained, strategy="raw")
    return emb, emb.coverage


# -- transforms -----------------------------------------------------------------


def _row_scale_es(x):
    return x.std(axis=1)


def _row_scale_en(x):
    return np.linalg.norm(x, axis=1)


def _scale_rows(E, scale_fn, tag, what):
    if isinstance(E, EmbeddingMatrix):
        if E.strategy not in ("raw", "random"):
            raise ContractError(f"matrix already transformed ({E.strategy}); transforms do not compose")
        rows = E.pretrained if E.pretrained.any() else np.ones(len(E.vectors), dtype=bool)
        out = E.vectors.copy()
        sub = out[rows]
        scale = scale_fn(sub)
        bad = np.flatnonzero(scale == 0)
        if bad.size:
            idx = np.flatnonzero(rows)[bad]
            raise DegenerateError(f"{what} in rows: " + ", ".join(E.row_label(i) for i in idx),
                                  [E.row_label(i) for i in idx])
        out[rows] = sub / scale[:, None]
        return replace(E, vectors=out, pretrained=E.pretrained.copy(), strategy=tag)
    x = np.asarray(E, dtype=np.float64)
    scale = scale_fn(x)
    bad = np.flatnonzero(scale == 0)
    if bad.size:
        raise DegenerateError(f"{what} in rows {bad.tolist()}", bad.tolist())
    return x / scale[:, None]


def standardize_per_example(E):
    """Divide each row by its population standard deviation (no centering)."""
    return _scale_rows(E, _row_scale_es, "per-example-standardized", "zero variance")


def normalize_per_example(E):
    """Scale each row to unit L2 norm."""
    return _scale_rows(E, _row_scale_en, "per-example-normalized", "zero norm")


def _column_std(x):
    std = x.std(axis=0)
    bad = np.flatnonzero(std == 0)
    if bad.size:
        raise DegenerateError(f"zero variance in columns {bad.tolist()}", bad.tolist())
    return std


def standardize_per_feature(E, column_std=None):
    """Divide each column by its population standard deviation (no centering).

    ``column_std`` lets a caller reuse statistics computed on another matrix.
    """
    if isinstance(E, EmbeddingMatrix):
        if E.strategy not in ("raw", "random"):
            raise ContractError(f"matrix already transformed ({E.strategy}); transforms do not compose")
        rows = E.pretrained if E.pretrained.any() else np.ones(len(E.vectors), dtype=bool)
        out = E.vectors.copy()
        std = _column_std(out[rows]) if column_std is None else column_std
        out[rows] = out[rows] / std
        return replace(E, vectors=out, pretrained=E.pretrained.copy(),
                       strategy="per-feature-standardized")
    x = np.asarray(E, dtype=np.float64)
    std = _column_std(x) if column_std is None else column_std
    return x / std


def apply_strategy(E, strategy):
    """Apply a transform by short name: ``none``, ``es``, ``fs`` or ``en``."""
    if strategy not in TRANSFORM_TAGS:
        raise ContractError(f"unknown embedding transform {strategy!r}")
    if strategy == "none":
        return E
    return {"es": standardize_per_example, "fs": standardize_per_feature,
            "en": normalize_per_example}[strategy](E)


# -- statistics -----------------------------------------------------------------


@dataclass(frozen=True)
class EmbedStats:
    l2_mean: float
    l2_std: float
    mv_mean: float
    mv_std: float
    cos_mean: float
    cos_std: float
    pairs: int
    seed: int

    def as_row(self, strategy):
        return [strategy, repr(self.l2_mean), repr(self.l2_std), repr(self.mv_mean),
                repr(self.mv_std), repr(self.cos_mean), repr(self.cos_std), self.pairs, self.seed]


def sample_pairs(n_rows, n_pairs, seed):
    """Distinct unordered row pairs ``(i, j)``, ``i < j``, chosen by ``seed``."""
    total = n_rows * (n_rows - 1) // 2
    if n_pairs >= total:
        i, j = np.triu_indices(n_rows, k=1)
        return i, j
    rng = np.random.default_rng(seed)
    chosen = np.empty((0, 2), dtype=np.int64)
    while len(chosen) < n_pairs:
        cand = rng.integers(0, n_rows, size=(2 * (n_pairs - len(chosen)) + 16, 2))
        cand = cand[cand[:, 0] != cand[:, 1]]
        cand.sort(axis=1)
        merged = np.concatenate([chosen, cand])
        _, first = np.unique(merged, axis=0, return_index=True)
        chosen = merged[np.sort(first)]
    chosen = chosen[:n_pairs]
    return chosen[:, 0], chosen[:, 1]


def embedding_stats(E, n_pairs=100_000, seed=0):
    x = E.vectors if isinstance(E, EmbeddingMatrix) else np.asarray(E, dtype=np.float64)
    if n_pairs < 1 or len(x) < 2:
        raise ContractError("embedding_stats needs n_pairs >= 1 and at least 2 rows")
    l2 = np.linalg.norm(x, axis=1)
    mv = x.var(axis=1)
    i, j = sample_pairs(len(x), n_pairs, seed)
    denom = l2[i] * l2[j]
    ok = denom > 0
    cos = np.einsum("ij,ij->i", x[i[ok]], x[j[ok]]) / denom[ok]
    return EmbedStats(
        l2_mean=float(l2.mean()), l2_std=float(l2.std()),
        mv_mean=float(mv.mean()), mv_std=float(mv.std()),
        cos_mean=float(cos.mean()) if cos.size else 0.0,
        cos_std=float(cos.std()) if cos.size else 0.0,
        pairs=int(len(i)), seed=int(seed),
    )


def write_stats_csv(rows, path):
    """``rows`` is a list of ``(strategy_name, EmbedStats)``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STATS_HEADER)
        for name, stats in rows:
            writer.writerow(stats.as_row(name))


class EmbeddingStandardizer(TransformerMixin, BaseEstimator):
    """Transformer wrapper around the embedding transforms.

    With ``strategy="fs"`` the column scales are learned in :meth:`fit`, so a
    matrix can be rescaled with statistics from a larger reference matrix.
    The row-wise strategies are stateless.
    """

    def __init__(self, strategy="es"):
        self.strategy = strategy

    def fit(self, X, y=None):
        if self.strategy not in TRANSFORM_TAGS:
            raise ContractError(f"unknown embedding transform {self.strategy!r}")
        X = check_array(X, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        if self.strategy == "fs":
            self.scale_ = _column_std(X)
        else:
            self.scale_ = None
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        if self.strategy == "fs":
            return X / self.scale_
        return apply_strategy(X, self.strategy)
