"""Independent reference implementations used to check the package.

The naive scorer walks one (utterance, canonical) pair at a time with plain
Python loops: dot products accumulate left to right in Python floats,
nonlinearities use the numpy ufuncs. It shares no code with ``xdsp.model``;
only the arithmetic order is agreed on, so its scores must match the
batched implementation bit for bit.
"""

from __future__ import annotations

import math

import numpy as np

PAD, UNK, BOS, EOS = 0, 1, 2, 3


def dot(w, x):
    acc = w[0] * x[0]
    for k in range(1, len(x)):
        acc += w[k] * x[k]
    return acc


def matvec(W, x):
    """``W x`` with ``W`` given as a list of rows."""
    return [dot(row, x) for row in W]


def _ufunc(fn, values):
    return [float(v) for v in fn(np.array(values, dtype=np.float64))]


def sigmoid(values):
    return _ufunc(lambda a: 1.0 / (1.0 + np.exp(-a)), values)


def tanh(values):
    return _ufunc(np.tanh, values)


class NaiveModel:
    def __init__(self, params):
        self.p = {k: np.asarray(v, dtype=np.float64).tolist() for k, v in params.items()}
        self.s = len(self.p["W2"])

    def _rows(self, cell, gate):
        return self.p[f"{cell}.W_{gate}"], self.p[f"{cell}.U_{gate}"], self.p[f"{cell}.b_{gate}"]

    def gru(self, cell, x, h):
        Wz, Uz, bz = self._rows(cell, "z")
        Wr, Ur, br = self._rows(cell, "r")
        Wh, Uh, bh = self._rows(cell, "h")
        # (W x + b) + U h for each gate
        z = sigmoid([(a + b) + c for a, b, c in zip(matvec(Wz, x), bz, matvec(Uz, h))])
        r = sigmoid([(a + b) + c for a, b, c in zip(matvec(Wr, x), br, matvec(Ur, h))])
        rh = [ri * hi for ri, hi in zip(r, h)]
        cand = tanh([(a + b) + c for a, b, c in zip(matvec(Wh, x), bh, matvec(Uh, rh))])
        return [zi * hi + (1.0 - zi) * ci for zi, hi, ci in zip(z, h, cand)]

    def encode(self, u):
        emb = self.p["embedding"]
        zero = [0.0] * self.s
        fw, h = [], zero
        for t in u:
            h = self.gru("enc_fw", emb[t], h)
            fw.append(h)
        bw, h = [None] * len(u), zero
        for i in reversed(range(len(u))):
            h = self.gru("enc_bw", emb[u[i]], h)
            bw[i] = h
        states = [f + b for f, b in zip(fw, bw)]
        return states, fw[-1], bw[0]

    def attend(self, states, d):
        W1, W2, v = self.p["W1"], self.p["W2"], self.p["v"]
        query = matvec(W2, d)
        scores = []
        for h in states:
            key = matvec(W1, h)
            scores.append(dot(tanh([k + q for k, q in zip(key, query)]), v))
        m = max(scores)
        e = _ufunc(np.exp, [x - m for x in scores])
        total = e[0]
        for x in e[1:]:
            total += x
        alpha = [x / total for x in e]
        ctx = [alpha[0] * x for x in states[0]]
        for a, h in zip(alpha[1:], states[1:]):
            ctx = [c + a * x for c, x in zip(ctx, h)]
        return ctx

    def log_softmax(self, logits):
        m = max(logits)
        z = [x - m for x in logits]
        e = _ufunc(np.exp, z)
        total = e[0]
        for x in e[1:]:
            total += x
        lse = _ufunc(np.log, [total])[0]
        return [x - lse for x in z]

    def score(self, u, c):
        """``log p(c | u)``: n + 1 predictions (the tokens of ``c``, then ``</s>``)."""
        emb = self.p["embedding"]
        states, last_fw, first_bw = self.encode(u)
        d = tanh(matvec(self.p["W0"], last_fw + first_bw))
        ctx = self.attend(states, d)
        d = self.gru("dec", emb[BOS] + ctx, d)
        total = None
        targets = list(c) + [EOS]
        for j, y in enumerate(targets):
            ctx = self.attend(states, d)
            out = d + ctx
            logits = [a + b for a, b in zip(matvec(self.p["U_out"], out), self.p["b_out"])]
            lp = self.log_softmax(logits)[y]
            total = lp if total is None else total + lp
            if j + 1 < len(targets):
                d = self.gru("dec", emb[y] + ctx, d)
        return total


def naive_rank(params, u_ids, candidates_ids):
    model = NaiveModel(params)
    scores = [model.score(u_ids, c) for c in candidates_ids]
    order = sorted(range(len(scores)), key=lambda k: (-scores[k], k))
    return order, scores


def pearson_by_hand(x, y):
    """Textbook formula with exact rational-free float steps, for small fixtures."""
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def naive_step(params, u, d, prev_token):
    """One decoder step from state ``d``: ``(distribution, next state)``."""
    model = NaiveModel(params)
    states, _, _ = model.encode(u)
    ctx = model.attend(states, d)
    logits = [a + b for a, b in zip(matvec(model.p["U_out"], d + ctx), model.p["b_out"])]
    m = max(logits)
    e = _ufunc(np.exp, [x - m for x in logits])
    total = e[0]
    for x in e[1:]:
        total += x
    dist = [x / total for x in e]
    return dist, model.gru("dec", model.p["embedding"][prev_token] + ctx, d)


def naive_init(params, u):
    model = NaiveModel(params)
    _, last_fw, first_bw = model.encode(u)
    return tanh(matvec(model.p["W0"], last_fw + first_bw))
