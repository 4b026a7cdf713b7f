"""Domain datasets: parsing, vocabularies, splits, merging and statistics.

A domain file holds one example per line::

    utterance<TAB>canonical utterance<TAB>logical form

Text is lowercased and split on whitespace. The canonical inventory is the
set of distinct canonicals in the file, optionally extended by a companion
``<name>.canonicals`` file of ``canonical<TAB>logical form`` lines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    ConsistencyError,
    ContractError,
    EmptyDomainError,
    InsufficientDataError,
    NamingError,
    ParseError,
    RangeError,
)

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
RESERVED = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = range(4)


def tokenize(text):
    return tuple(text.lower().split())


@dataclass(frozen=True)
class Example:
    utterance: tuple
    canonical: tuple
    logical_form: str
    domain: str

    def __post_init__(self):
        if not self.utterance or not self.canonical or not self.logical_form:
            raise ContractError("example fields must be non-empty")


@dataclass
class Domain:
    """Examples plus the canonical inventory and its one-to-one logical-form map.

    Inventory entries are ``(domain_id, canonical_tokens)`` keys, so merged
    domains can hold the same canonical string twice without collisions.
    """

    name: str
    examples: list
    canonicals: list = field(default_factory=list)
    logical_forms: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.canonicals:
            self.canonicals, self.logical_forms = _inventory_from_examples(self.examples)
        self._index = {key: i for i, key in enumerate(self.canonicals)}
        self.validate()

    def validate(self):
        seen_lf = {}
        for key in self.canonicals:
            lf = self.logical_forms[key]
            # logical forms are namespaced by domain, like canonicals
            other = seen_lf.setdefault((key[0], lf), key)
            if other != key:
                raise ConsistencyError(
                    f"logical form {lf!r} is shared by canonicals {' '.join(other[1])!r} "
                    f"and {' '.join(key[1])!r}")
        for ex in self.examples:
            key = (ex.domain, ex.canonical)
            if key not in self._index:
                raise ConsistencyError(f"canonical {' '.join(ex.canonical)!r} missing from inventory")
            if self.logical_forms[key] != ex.logical_form:
                raise ConsistencyError(
                    f"canonical {' '.join(ex.canonical)!r} maps to both "
                    f"{self.logical_forms[key]!r} and {ex.logical_form!r}")

    def canonical_index(self, example):
        return self._index[(example.domain, example.canonical)]

    @property
    def canonical_tokens(self):
        return [key[1] for key in self.canonicals]

    def content_vocabulary(self):
        words = set()
        for ex in self.examples:
            words.update(ex.utterance)
            words.update(ex.canonical)
        for _, toks in self.canonicals:
            words.update(toks)
        return words

    def with_examples(self, examples):
        return Domain(self.name, list(examples), list(self.canonicals), dict(self.logical_forms))


def _inventory_from_examples(examples, canonicals=None, logical_forms=None):
    canonicals = list(canonicals or [])
    logical_forms = dict(logical_forms or {})
    for ex in examples:
        key = (ex.domain, ex.canonical)
        if key not in logical_forms:
            canonicals.append(key)
            logical_forms[key] = ex.logical_form
        elif logical_forms[key] != ex.logical_form:
            raise ConsistencyError(
                f"canonical {' '.join(ex.canonical)!r} maps to both "
                f"{logical_forms[key]!r} and {ex.logical_form!r}")
    return canonicals, logical_forms


def _split_fields(line, path, lineno, n):
    fields = line.split("\t")
    if len(fields) != n:
        raise ParseError(f"expected {n} tab-separated fields, found {len(fields)}", path, lineno)
    return fields


def parse_domain_file(path, name=None):
    path = Path(path)
    name = name or path.stem
    examples = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            u, c, z = _split_fields(line, path, lineno, 3)
            u, c, z = tokenize(u), tokenize(c), z.strip()
            if not u or not c or not z:
                raise ParseError("empty field", path, lineno)
            examples.append(Example(u, c, z, name))
    if not examples:
        raise EmptyDomainError(f"{path}: domain file has no examples")
    canonicals, logical_forms = _inventory_from_examples(examples)
    companion = path.with_suffix(".canonicals")
    if companion.exists():
        with companion.open(encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.rstrip("\r\n")
                if not line.strip():
                    continue
                c, z = _split_fields(line, companion, lineno, 2)
                key = (name, tokenize(c))
                z = z.strip()
                if key in logical_forms:
                    if logical_forms[key] != z:
                        raise ConsistencyError(
                            f"{companion}:{lineno}: canonical {c!r} maps to both "
                            f"{logical_forms[key]!r} and {z!r}")
                    continue
                canonicals.append(key)
                logical_forms[key] = z
    return Domain(name, examples, canonicals, logical_forms)


def load_domains(directory):
    """Every ``*.tsv`` domain file in ``directory``, sorted by name."""
    paths = sorted(Path(directory).glob("*.tsv"))
    if not paths:
        raise EmptyDomainError(f"no *.tsv domain files in {directory}")
    return [parse_domain_file(p) for p in paths]


def format_domain(domain):
    return "".join(f"{' '.join(ex.utterance)}\t{' '.join(ex.canonical)}\t{ex.logical_form}\n"
                   for ex in domain.examples)


def write_domain_file(domain, path):
    Path(path).write_text(format_domain(domain), encoding="utf-8")


# -- vocabulary -------------------------------------------------------------------


class Vocabulary:
    """Token <-> id bijection with ``<pad> <unk> <s> </s>`` at ids 0..3."""

    def __init__(self, tokens=(), covered=None):
        self._tokens = list(RESERVED)
        self._ids = {t: i for i, t in enumerate(self._tokens)}
        for t in tokens:
            self.add(t)
        self.covered = frozenset(covered) if covered is not None else None

    def add(self, token):
        if token not in self._ids:
            self._ids[token] = len(self._tokens)
            self._tokens.append(token)
        return self._ids[token]

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._ids

    def __iter__(self):
        return iter(self._tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    @property
    def tokens(self):
        return list(self._tokens)

    def id(self, token):
        return self._ids.get(token, UNK_ID)

    def encode(self, tokens):
        return [self._ids.get(t, UNK_ID) for t in tokens]

    def decode(self, ids):
        return [self._tokens[i] for i in ids]

    def extended(self, tokens):
        """A new vocabulary: these ids unchanged, unseen ``tokens`` appended."""
        out = Vocabulary(self._tokens[len(RESERVED):])
        for t in tokens:
            out.add(t)
        return out

    @classmethod
    def from_tokens(cls, tokens):
        tokens = list(tokens)
        if tuple(tokens[:len(RESERVED)]) != RESERVED:
            raise ConsistencyError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ConsistencyError("vocabulary has duplicate tokens")
        return cls(tokens[len(RESERVED):])


def domain_tokens(domain):
    """Tokens in first-occurrence order: utterance then canonical per example, then inventory."""
    seen = {}
    for ex in domain.examples:
        for t in ex.utterance:
            seen.setdefault(t, None)
        for t in ex.canonical:
            seen.setdefault(t, None)
    for _, toks in domain.canonicals:
        for t in toks:
            seen.setdefault(t, None)
    return list(seen)


def build_vocabulary(domains, embedding_vocab=None):
    """Union of all domain tokens plus the reserved ones.

    Ids follow first occurrence across ``domains`` in order, so the result is
    a pure function of its inputs. ``embedding_vocab`` only records which
    tokens have a pre-trained vector (``Vocabulary.covered``).
    """
    if not domains:
        raise InsufficientDataError("build_vocabulary needs at least one domain")
    vocab = Vocabulary()
    for d in domains:
        for t in domain_tokens(d):
            vocab.add(t)
    if embedding_vocab is not None:
        vocab.covered = frozenset(t for t in vocab.tokens if t in embedding_vocab)
    return vocab


# -- splits, merging, downsampling -------------------------------------------------


@dataclass
class Splits:
    train: list
    validation: list
    test: list
    seed: int

    @property
    def train_full(self):
        return self.train + self.validation


def split_sizes(n):
    test = math.floor(0.2 * n)
    validation = math.floor(0.2 * (n - test))
    return n - test - validation, validation, test


def split_domain(domain, seed):
    """Seeded shuffle, then test = floor(0.2 N) and validation = floor(0.2 (N - test))."""
    examples = domain.examples if isinstance(domain, Domain) else list(domain)
    n = len(examples)
    if n < 5:
        raise InsufficientDataError(f"need at least 5 examples to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train, n_val, n_test = split_sizes(n)
    shuffled = [examples[i] for i in order]
    return Splits(
        train=shuffled[:n_train],
        validation=shuffled[n_train:n_train + n_val],
        test=shuffled[n_train + n_val:],
        seed=seed,
    )


def merge_source_domains(domains, name=None):
    if not domains:
        raise InsufficientDataError("nothing to merge")
    names = [d.name for d in domains]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise NamingError(f"duplicate domain names: {', '.join(dupes)}")
    if len(domains) == 1 and name is None:
        d = domains[0]
        return Domain(d.name, list(d.examples), list(d.canonicals), dict(d.logical_forms))
    examples, canonicals, logical_forms = [], [], {}
    for d in domains:
        examples.extend(d.examples)
        canonicals.extend(d.canonicals)
        logical_forms.update(d.logical_forms)
    return Domain(name or "+".join(names), examples, canonicals, logical_forms)


def downsample(examples, rate, seed):
    """Seeded sample without replacement of ``max(1, floor(rate * N))`` examples, order kept."""
    if not 0 < rate <= 1:
        raise RangeError(f"downsampling rate must be in (0, 1], got {rate}")
    examples = list(examples)
    if not examples:
        return []
    k = max(1, math.floor(rate * len(examples)))
    chosen = np.sort(np.random.default_rng(seed).choice(len(examples), size=k, replace=False))
    return [examples[i] for i in chosen]


# -- statistics -------------------------------------------------------------------


@dataclass(frozen=True)
class DomainStats:
    name: str
    examples: int
    canonicals: int
    vocab_size: int
    pct_other_domains: float
    pct_embedding: float
    pct_either: float

    @property
    def abundance(self):
        return self.examples / self.vocab_size

    def as_row(self):
        return [self.name, self.examples, self.canonicals, self.vocab_size,
                f"{self.pct_other_domains:.2f}", f"{self.pct_embedding:.2f}", f"{self.pct_either:.2f}"]


DOMAIN_STATS_HEADER = ["domain", "examples", "canonicals", "vocab_size", "pct_other_domains",
                       "pct_embedding", "pct_either"]


def domain_statistics(domains, embedding_vocab=()):
    """Per-domain size and vocabulary-overlap percentages (reserved tokens excluded)."""
    embedding_vocab = set(embedding_vocab)
    vocabs = [d.content_vocabulary() for d in domains]
    rows = []
    for i, d in enumerate(domains):
        own = vocabs[i]
        others = set().union(*(v for j, v in enumerate(vocabs) if j != i))
        n = len(own)

        def pct(words):
            return 100.0 * len(words) / n if n else 0.0

        rows.append(DomainStats(
            name=d.name,
            examples=len(d.examples),
            canonicals=len(d.canonicals),
            vocab_size=n,
            pct_other_domains=pct(own & others),
            pct_embedding=pct(own & embedding_vocab),
            pct_either=pct(own & (others | embedding_vocab)),
        ))
    return rows
