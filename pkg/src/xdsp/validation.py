"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .corpus import tokenize
from .exceptions import ContractError


def check_utterances(X, name="X"):
    """Normalize a sequence of utterances (strings or token sequences) to token tuples."""
    if isinstance(X, str):
        raise ContractError(f"{name} must be a sequence of utterances, not a single string")
    if isinstance(X, np.ndarray) and X.ndim != 1:
        raise ContractError(f"{name} must be 1-D, got shape {X.shape}")
    out = []
    for i, item in enumerate(X):
        toks = tokenize(item) if isinstance(item, str) else tuple(str(t) for t in item)
        if not toks:
            raise ContractError(f"{name}[{i}] is empty")
        out.append(toks)
    if not out:
        raise ContractError(f"{name} is empty")
    return out


def check_utterance_pairs(X, y):
    X = check_utterances(X, "X")
    y = check_utterances(y, "y")
    if len(X) != len(y):
        raise ContractError(f"X and y differ in length: {len(X)} vs {len(y)}")
    return X, y


def check_probability(value, name, low_open=True):
    lo_ok = value > 0 if low_open else value >= 0
    if not (lo_ok and value <= 1):
        raise ContractError(f"{name} must be in {'(' if low_open else '['}0, 1], got {value}")
    return float(value)


def parse_int_pair(text, name):
    """``"3000,300"`` -> ``(3000, 300)``."""
    try:
        a, b = (int(part) for part in text.split(","))
    except ValueError:
        raise ContractError(f"{name} expects two comma-separated integers, got {text!r}") from None
    if a < 1 or b < 1:
        raise ContractError(f"{name} values must be >= 1")
    return a, b


def parse_float_list(text, name):
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ContractError(f"{name} expects comma-separated numbers, got {text!r}") from None
    if not values:
        raise ContractError(f"{name} is empty")
    return values
