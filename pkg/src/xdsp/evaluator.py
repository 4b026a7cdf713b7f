"""Ranking-mode inference, accuracy, greedy generation and result statistics."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import model as M
from .corpus import BOS_ID, EOS_ID, PAD_ID, Domain
from .exceptions import ContractError, DegenerateError

PAIR_CHUNK = 4096


@dataclass(frozen=True)
class RankedCandidate:
    canonical: tuple
    logical_form: str | None
    score: float
    rank: int
    index: int


def _inventory(candidates):
    if isinstance(candidates, Domain):
        return candidates.canonical_tokens, [candidates.logical_forms[k] for k in candidates.canonicals]
    toks = [tuple(c) for c in candidates]
    return toks, [None] * len(toks)


def score_matrix(params, vocab, utterances, canonicals, max_length=M.MAX_LENGTH):
    """``log p(c_k | u_i)`` for every input/candidate pair, shape (n_inputs, n_candidates).

    Each input is encoded once; the decoder then runs over all pairs in
    chunks. Scores do not depend on how pairs are batched.
    """
    P = M.as_tensors(params)
    u_ids = [vocab.encode(u) for u in utterances]
    c_ids = [vocab.encode(c) for c in canonicals]
    n_u, n_c = len(u_ids), len(c_ids)
    out = np.empty((n_u, n_c))
    if n_u == 0 or n_c == 0:
        return out
    ids, lengths = M.pad_batch(u_ids)
    enc = M.encode(ids, P, lengths=lengths, max_length=max_length)
    rows = np.repeat(np.arange(n_u), n_c)
    cols = np.tile(np.arange(n_c), n_u)
    flat = out.reshape(-1)
    for start in range(0, len(rows), PAIR_CHUNK):
        r = rows[start:start + PAIR_CHUNK]
        c = cols[start:start + PAIR_CHUNK]
        cid, clen = M.pad_batch([c_ids[k] for k in c])
        scores = M.decode_log_probs(M.select_rows(enc, r), cid, clen, P, max_length=max_length)
        flat[start:start + len(r)] = scores.data
    return out


def _order(scores):
    # descending score, ties to the lower inventory index
    return sorted(range(len(scores)), key=lambda k: (-scores[k], k))


def rank_canonicals(params, vocab, utterance, candidates):
    """Score every candidate canonical for ``utterance`` and sort best-first."""
    toks, lfs = _inventory(candidates)
    if not toks:
        raise ContractError("cannot rank an empty canonical inventory")
    scores = score_matrix(params, vocab, [tuple(utterance)], toks)[0]
    return [RankedCandidate(toks[k], lfs[k], float(scores[k]), rank, k)
            for rank, k in enumerate(_order(scores), start=1)]


def predict_indices(params, vocab, utterances, candidates):
    toks, _ = _inventory(candidates)
    scores = score_matrix(params, vocab, utterances, toks)
    return [_order(row)[0] for row in scores], scores


def evaluate_accuracy(params, vocab, examples, domain, return_predictions=False):
    """Fraction of ``examples`` whose top-ranked canonical in ``domain`` is the gold one."""
    examples = list(examples)
    if not examples:
        raise ContractError("evaluate_accuracy needs a non-empty test set")
    best, scores = predict_indices(params, vocab, [ex.utterance for ex in examples], domain)
    gold = [domain.canonical_index(ex) for ex in examples]
    hits = [b == g for b, g in zip(best, gold)]
    acc = sum(hits) / len(hits)
    if not return_predictions:
        return acc
    toks = domain.canonical_tokens
    preds = [{
        "utterance": " ".join(ex.utterance),
        "gold": " ".join(ex.canonical),
        "predicted": " ".join(toks[b]),
        "score": float(scores[i][b]),
        "correct": bool(h),
    } for i, (ex, b, h) in enumerate(zip(examples, best, hits))]
    return acc, preds


@dataclass(frozen=True)
class Generation:
    tokens: list
    truncated: bool


def generate_greedy(params, vocab, utterance, max_len=M.MAX_LENGTH):
    """Feed back the argmax token until ``</s>`` or ``max_len`` tokens.

    ``<pad>`` and ``<s>`` are never emitted. ``truncated`` is set when the
    length limit was hit before ``</s>``.
    """
    if max_len < 1:
        raise ContractError("max_len must be >= 1")
    P = M.as_tensors(params)
    enc = M.encode(vocab.encode(utterance), P)
    dec = M.Decoder(enc, P)
    d = M.decoder_init(enc, P)
    _, context = dec.attend(d)
    d = dec.advance(d, np.array([BOS_ID]), context)
    out = []
    for _ in range(max_len):
        _, context = dec.attend(d)
        logits = dec.logits(d, context).data[0].copy()
        logits[[PAD_ID, BOS_ID]] = -np.inf
        token = int(np.argmax(logits))
        if token == EOS_ID:
            return Generation(vocab.decode(out), False)
        out.append(token)
        d = dec.advance(d, np.array([token]), context)
    return Generation(vocab.decode(out), True)


def pearson_correlation(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ContractError("pearson_correlation needs two equal-length sequences of >= 2 values")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise DegenerateError("zero variance input; correlation undefined")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


# -- reports ----------------------------------------------------------------------


def config_fingerprint(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EvalReport:
    domain: str
    setting: str  # "I" in-domain, "X" cross-domain
    init_strategy: str
    accuracy: float
    n_examples: int
    vocab_size: int
    n_test: int = 0
    config_fingerprint: str = ""
    seed: int = 0
    predictions: list = field(default_factory=list)
    sweep: dict = field(default_factory=dict)
    sweep_runs: list = field(default_factory=list)
    repeats: int = 0
    correlation: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ContractError(f"accuracy {self.accuracy} outside [0, 1]")

    @property
    def abundance(self):
        return self.n_examples / self.vocab_size

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        data["sweep"] = {float(k): v for k, v in data.get("sweep", {}).items()}
        return cls(**data)


def sweep_means(runs, repeats):
    """``{rate: mean accuracy}`` from ``(rate, repeat, seed, accuracy)`` rows."""
    by_rate = {}
    for rate, _, _, acc in runs:
        by_rate.setdefault(rate, []).append(acc)
    for rate, accs in by_rate.items():
        if len(accs) != repeats:
            raise ContractError(f"rate {rate}: {len(accs)} runs, expected {repeats}")
    return {rate: sum(a) / len(a) for rate, a in sorted(by_rate.items())}


def write_sweep_csv(runs, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rate", "repeat", "seed", "accuracy"])
        for rate, repeat, seed, acc in runs:
            w.writerow([rate, repeat, seed, repr(float(acc))])


def write_correlation_csv(rows, path):
    """``rows``: ``(init_strategy, r)`` pairs; ``r`` None marks a degenerate input."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["init_strategy", "pearson_r"])
        for name, r in rows:
            w.writerow([name, "degenerate" if r is None else repr(float(r))])
