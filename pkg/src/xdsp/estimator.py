"""scikit-learn style wrapper: utterances in, canonical utterances out."""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .checkpoint import Checkpoint, load_checkpoint
from .corpus import Domain, Example, Splits, build_vocabulary
from .evaluator import predict_indices, score_matrix
from .trainer import TrainConfig, adapt, initial_params, train
from .validation import check_utterance_pairs, check_utterances


class ParaphraseParser(ClassifierMixin, BaseEstimator):
    """Rank the canonical utterances seen in ``fit`` by ``log p(c | u)``.

    The classes are the distinct canonicals of ``y``. A fifth of the
    training pairs (when there are at least five) is held out for early
    stopping. With ``source_checkpoint`` the model is initialized from that
    checkpoint and fine-tuned instead of trained from scratch.
    """

    def __init__(self, state_size=100, embedding_dim=300, batch_size=512, max_epochs=300,
                 patience=5, learning_rate=1e-3, dropout=True, embedding_init="random",
                 embedding_transform="none", embeddings_path=None, seed=0,
                 source_checkpoint=None):
        self.state_size = state_size
        self.embedding_dim = embedding_dim
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.learning_rate = learning_rate
        self.dropout = dropout
        self.embedding_init = embedding_init
        self.embedding_transform = embedding_transform
        self.embeddings_path = embeddings_path
        self.seed = seed
        self.source_checkpoint = source_checkpoint

    def _config(self):
        return TrainConfig(
            state_size=self.state_size, embedding_dim=self.embedding_dim,
            batch_size=self.batch_size, max_epochs=self.max_epochs, patience=self.patience,
            learning_rate=self.learning_rate, dropout=self.dropout,
            embedding_init=self.embedding_init, embedding_transform=self.embedding_transform,
            embeddings_path=self.embeddings_path, seed=self.seed)

    def fit(self, X, y):
        X, y = check_utterance_pairs(X, y)
        name = "estimator"
        classes = list(dict.fromkeys(y))
        keys = [(name, c) for c in classes]
        examples = [Example(u, c, " ".join(c), name) for u, c in zip(X, y)]
        domain = Domain(name, examples, keys, {k: " ".join(k[1]) for k in keys})

        order = np.random.default_rng(self.seed).permutation(len(examples))
        n_val = math.floor(0.2 * len(examples)) if len(examples) >= 5 else 0
        shuffled = [examples[i] for i in order]
        splits = Splits(shuffled[n_val:], shuffled[:n_val], [], self.seed)

        cfg = self._config()
        source = self.source_checkpoint
        if source is not None:
            if not isinstance(source, Checkpoint):
                source = load_checkpoint(source)
            ckpt = adapt(source, domain, cfg, splits)
        else:
            vocab = build_vocabulary([domain])
            ckpt = train(cfg, splits, initial_params(cfg, vocab), vocab, domain)

        self.checkpoint_ = ckpt
        self.vocabulary_ = ckpt.vocabulary
        self.params_ = ckpt.params
        self.classes_ = np.array([" ".join(c) for c in classes], dtype=object)
        self._class_tokens = classes
        return self

    def decision_function(self, X):
        """``log p(c | u)`` for every input (rows) and class (columns)."""
        check_is_fitted(self, "params_")
        X = check_utterances(X)
        return score_matrix(self.params_, self.vocabulary_, X, self._class_tokens)

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_utterances(X)
        best, _ = predict_indices(self.params_, self.vocabulary_, X, self._class_tokens)
        return self.classes_[best]
