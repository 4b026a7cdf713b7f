"""Training with early stopping and retraining, plus cross-domain adaptation.

Training runs in two phases. Phase 1 trains on the train split, scores the
validation split after every epoch (ranking accuracy) and stops once
``patience`` epochs pass without strict improvement. Phase 2 starts again
from the same initial parameters and trains on train + validation for the
best epoch count of phase 1. The phase-2 parameters are the result.

All randomness derives from ``cfg.seed``: shuffling from
``(seed, phase, epoch)`` and dropout masks from ``(seed, phase, epoch, batch)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import model as M
from . import numcore as nc
from .checkpoint import Checkpoint
from .corpus import domain_tokens, split_domain
from .embed import EmbeddingMatrix, apply_strategy, load_pretrained, random_embedding
from .evaluator import evaluate_accuracy
from .exceptions import (
    ContractError,
    DivergenceError,
    IncompatibleCheckpointError,
    InsufficientDataError,
    NonFiniteError,
)

PRECISIONS = {"float64": np.float64, "float32": np.float32}

# stream tags for np.random.default_rng([seed, tag, ...])
_SHUFFLE, _DROPOUT, _NEW_ROWS = 3, 4, 5


@dataclass
class TrainConfig:
    state_size: int = 100
    embedding_dim: int = 300
    batch_size: int = 512
    clip_norm: float = 5.0
    input_keep: float = 0.7
    output_keep: float = 0.5
    dropout: bool = True
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    max_epochs: int = 300
    patience: int = 5
    seed: int = 0
    embedding_init: str = "random"       # random | pretrained
    embedding_transform: str = "none"    # none | es | fs | en
    embeddings_path: str | None = None
    precision: str = "float64"
    max_length: int = M.MAX_LENGTH

    def __post_init__(self):
        if self.embedding_init not in ("random", "pretrained"):
            raise ContractError(f"embedding_init must be random or pretrained, got {self.embedding_init!r}")
        if self.embedding_transform not in ("none", "es", "fs", "en"):
            raise ContractError(f"unknown embedding_transform {self.embedding_transform!r}")
        if self.precision not in PRECISIONS:
            raise ContractError(f"precision must be one of {sorted(PRECISIONS)}")
        for name in ("state_size", "embedding_dim", "batch_size", "patience"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        if self.max_epochs < 0:
            raise ContractError("max_epochs must be >= 0")
        if not self.clip_norm > 0:
            raise ContractError("clip_norm must be positive")
        M.DropoutConfig(self.input_keep, self.output_keep)

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    @property
    def dropout_config(self):
        return M.DropoutConfig(self.input_keep, self.output_keep, enabled=self.dropout)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ContractError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)


# -- early stopping ---------------------------------------------------------------


@dataclass
class EarlyStopState:
    patience: int
    best: float = -math.inf
    since_improvement: int = 0
    best_epoch: int = 0
    epochs_seen: int = 0
    snapshot: dict | None = None


def early_stop_update(state, metric, params=None):
    """Record one validation result; returns ``(state, "continue" | "stop")``.

    Only a strict improvement resets the counter (and snapshots ``params``).
    Training stops once the counter reaches ``patience``.
    """
    if not math.isfinite(metric):
        raise ContractError(f"validation metric must be finite, got {metric}")
    epoch = state.epochs_seen + 1
    if metric > state.best:
        snap = None if params is None else {k: np.array(v, copy=True) for k, v in params.items()}
        new = EarlyStopState(state.patience, metric, 0, epoch, epoch, snap)
    else:
        new = EarlyStopState(state.patience, state.best, state.since_improvement + 1,
                             state.best_epoch, epoch, state.snapshot)
    return new, ("stop" if new.since_improvement >= new.patience else "continue")


# -- initialization ---------------------------------------------------------------


def build_embedding(cfg, vocab, pretrained=None):
    """The initial ``|vocab| x d`` embedding as an :class:`EmbeddingMatrix`.

    ``pretrained`` maps words to vectors; without it, ``cfg.embeddings_path``
    is read when ``cfg.embedding_init`` is ``pretrained``. Words without a
    vector keep their random row; the transform acts on pre-trained rows.
    """
    words = vocab.tokens
    d = cfg.embedding_dim
    if cfg.embedding_init == "random":
        return random_embedding(len(words), d, [cfg.seed, 2], words)
    if pretrained is None:
        if cfg.embeddings_path is None:
            raise ContractError("pretrained initialization needs embeddings_path")
        emb, _ = load_pretrained(cfg.embeddings_path, words, [cfg.seed, 2], dim=d)
    else:
        base = random_embedding(len(words), d, [cfg.seed, 2], words)
        mask = np.zeros(len(words), dtype=bool)
        for i, w in enumerate(words):
            vec = pretrained.get(w)
            if vec is not None:
                vec = np.asarray(vec, dtype=np.float64)
                if vec.shape != (d,):
                    raise ContractError(f"pre-trained vector for {w!r} has shape {vec.shape}, expected ({d},)")
                base.vectors[i] = vec
                mask[i] = True
        emb = EmbeddingMatrix(base.vectors, words, mask, strategy="raw")
    return apply_strategy(emb, cfg.embedding_transform)


def initial_params(cfg, vocab, pretrained=None):
    emb = build_embedding(cfg, vocab, pretrained)
    return M.init_params(len(vocab), cfg.embedding_dim, cfg.state_size, cfg.seed,
                         embedding=emb.vectors, dtype=cfg.dtype)


# -- training loop ----------------------------------------------------------------


@dataclass
class PhaseResult:
    params: dict
    losses: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int = 0
    best_accuracy: float | None = None
    steps: int = 0


def _encode_pairs(examples, vocab):
    return [(vocab.encode(ex.utterance), vocab.encode(ex.canonical)) for ex in examples]


def _train_step(params, optim, batch, cfg, rng, where, hook):
    P = M.as_tensors(params, requires_grad=True)
    try:
        with nc.Tape() as tape:
            loss = M.batch_loss(batch, P, cfg.dropout_config, rng, max_length=cfg.max_length)
    except NonFiniteError:
        raise DivergenceError(*where, math.nan) from None
    value = float(loss.data)
    if not math.isfinite(value):
        raise DivergenceError(*where, value)
    grads = nc.backward(tape, loss, P)
    clipped, norm = nc.clip_global_norm(grads, cfg.clip_norm)
    if not math.isfinite(norm):
        raise DivergenceError(*where, value)
    params, optim = nc.adam_step(params, clipped, optim)
    if hook is not None:
        hook({"epoch": where[0], "batch": where[1], "loss": value, "grad_norm": norm,
              "clipped_norm": nc.global_norm(clipped)})
    return params, optim, value


def _run_phase(cfg, phase, init, pairs, vocab, epochs, validation=None, domain=None, hook=None):
    """Train from ``init`` for up to ``epochs`` epochs; early-stops when ``validation`` is given."""
    params = {k: np.array(v, copy=True) for k, v in init.items()}
    optim = nc.AdamState.fresh(params, lr=cfg.learning_rate, beta1=cfg.beta1,
                               beta2=cfg.beta2, eps=cfg.adam_epsilon)
    batch_size = min(cfg.batch_size, len(pairs))
    result = PhaseResult(params)
    stop = EarlyStopState(cfg.patience)
    for epoch in range(1, epochs + 1):
        order = np.random.default_rng([cfg.seed, _SHUFFLE, phase, epoch]).permutation(len(pairs))
        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(pairs), batch_size)):
            batch = [pairs[i] for i in order[start:start + batch_size]]
            rng = np.random.default_rng([cfg.seed, _DROPOUT, phase, epoch, b])
            params, optim, value = _train_step(params, optim, batch, cfg, rng, (epoch, b), hook)
            total += value * len(batch)
            count += len(batch)
            result.steps += 1
        result.losses.append(total / count)
        if validation:
            acc = evaluate_accuracy(params, vocab, validation, domain)
            result.val_accuracy.append(acc)
            stop, decision = early_stop_update(stop, acc)
            if hook is not None:
                hook({"epoch": epoch, "validation_accuracy": acc, "decision": decision})
            if decision == "stop":
                break
    result.params = params
    result.best_epoch = stop.best_epoch if validation else epochs
    result.best_accuracy = stop.best if validation else None
    return result


def train(cfg, splits, init_params, vocab, domain, lineage=(), hook=None):
    """Two-phase training; returns the phase-2 :class:`Checkpoint`.

    ``domain`` supplies the canonical inventory for validation ranking.
    ``hook``, if given, is called with a dict after every optimizer step and
    every validation pass.
    """
    if not splits.train:
        raise InsufficientDataError("training split is empty")
    M.check_params(init_params)
    V, d, s = M.dims_of(init_params)
    if V != len(vocab) or d != cfg.embedding_dim or s != cfg.state_size:
        raise ContractError(f"init params (|V|={V}, d={d}, s={s}) do not match vocabulary size "
                            f"{len(vocab)} / config (d={cfg.embedding_dim}, s={cfg.state_size})")
    init = {k: np.asarray(v, dtype=cfg.dtype) for k, v in init_params.items()}
    meta = {"seed": cfg.seed, "lineage": list(lineage), "domain": domain.name,
            "n_train": len(splits.train), "n_validation": len(splits.validation)}

    if cfg.max_epochs == 0:
        meta.update(epochs_run=0, best_epoch=0, best_validation_accuracy=None,
                    phase1_losses=[], phase1_validation=[], phase2_losses=[])
        return Checkpoint(cfg.to_dict(), vocab, init, meta)

    if splits.validation:
        p1 = _run_phase(cfg, 1, init, _encode_pairs(splits.train, vocab), vocab, cfg.max_epochs,
                        splits.validation, domain, hook)
        p2 = _run_phase(cfg, 2, init, _encode_pairs(splits.train_full, vocab), vocab,
                        p1.best_epoch, hook=hook)
        meta.update(best_epoch=p1.best_epoch, best_validation_accuracy=p1.best_accuracy,
                    phase1_epochs=len(p1.losses), phase1_losses=p1.losses,
                    phase1_validation=p1.val_accuracy)
    else:
        # nothing to early-stop on: a single pass of max_epochs over the train split
        p2 = _run_phase(cfg, 2, init, _encode_pairs(splits.train, vocab), vocab, cfg.max_epochs,
                        hook=hook)
        meta.update(best_epoch=cfg.max_epochs, best_validation_accuracy=None,
                    phase1_epochs=0, phase1_losses=[], phase1_validation=[])
    meta.update(epochs_run=len(p2.losses), phase2_losses=p2.losses, steps=p2.steps)
    return Checkpoint(cfg.to_dict(), vocab, p2.params, meta)


# -- adaptation -------------------------------------------------------------------


def adapted_init(source_ckpt, target_domain, cfg, pretrained=None):
    """Initial ``(params, vocab)`` for fine-tuning a source model on ``target_domain``.

    Shared tokens keep their source embedding and output rows. New tokens get
    a (transformed) pre-trained vector when one exists, else a random row;
    their output rows are Xavier-uniform with zero bias. Everything else is
    copied unchanged.
    """
    src = source_ckpt.params
    V_src, d, s = M.dims_of(src)
    if d != cfg.embedding_dim or s != cfg.state_size:
        raise IncompatibleCheckpointError(
            f"checkpoint has d={d}, s={s}; config asks for d={cfg.embedding_dim}, s={cfg.state_size}")
    vocab = source_ckpt.vocabulary.extended(domain_tokens(target_domain))
    params = {k: np.array(v, dtype=cfg.dtype, copy=True) for k, v in src.items()}
    V = len(vocab)
    if V == V_src:
        return params, vocab

    new_ids = np.arange(V_src, V)
    fresh = build_embedding(cfg, vocab, pretrained)
    rng = np.random.default_rng([cfg.seed, _NEW_ROWS])
    emb = np.empty((V, d), dtype=cfg.dtype)
    emb[:V_src] = params["embedding"]
    emb[V_src:] = fresh.vectors[new_ids]
    limit = math.sqrt(6.0 / (V + 3 * s))
    U_out = np.empty((V, 3 * s), dtype=cfg.dtype)
    U_out[:V_src] = params["U_out"]
    U_out[V_src:] = rng.uniform(-limit, limit, size=(len(new_ids), 3 * s))
    b_out = np.zeros(V, dtype=cfg.dtype)
    b_out[:V_src] = params["b_out"]
    params.update(embedding=emb, U_out=U_out, b_out=b_out)
    return params, vocab


def adapt(source_ckpt, target_domain, cfg, splits=None, pretrained=None, hook=None):
    """Fine-tune a source checkpoint on ``target_domain`` (fresh optimizer state)."""
    params, vocab = adapted_init(source_ckpt, target_domain, cfg, pretrained)
    if splits is None:
        splits = split_domain(target_domain, cfg.seed)
    lineage = source_ckpt.lineage + [source_ckpt.metadata.get("domain", "source")]
    return train(cfg, splits, params, vocab, target_domain, lineage=lineage, hook=hook)
