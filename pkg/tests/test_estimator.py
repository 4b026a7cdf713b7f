import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from toydata import make_domain
from xdsp.checkpoint import save_checkpoint
from xdsp.estimator import ParaphraseParser
from xdsp.exceptions import ContractError


def toy_xy(name="aa"):
    dom = make_domain(name, 0, n_types=1, n_rels=2, values=("one", "two"), n_paraphrases=5)
    return [" ".join(ex.utterance) for ex in dom.examples], [" ".join(ex.canonical) for ex in dom.examples]


FAST = dict(state_size=16, embedding_dim=16, batch_size=8, max_epochs=80, patience=80,
            learning_rate=0.01, dropout=False)


@pytest.fixture(scope="module")
def fitted():
    X, y = toy_xy()
    return ParaphraseParser(**FAST).fit(X, y), X, y


def test_params_and_clone():
    est = ParaphraseParser(state_size=8, seed=3)
    params = est.get_params()
    assert params["state_size"] == 8 and params["seed"] == 3 and params["source_checkpoint"] is None
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(embedding_transform="es")
    assert est.embedding_transform == "es"


def test_not_fitted():
    with pytest.raises(NotFittedError):
        ParaphraseParser().predict(["a b"])


def test_fit_predict_score(fitted):
    est, X, y = fitted
    assert list(est.classes_) == list(dict.fromkeys(y))
    pred = est.predict(X)
    assert pred.shape == (len(X),) and set(pred) <= set(est.classes_)
    assert est.score(X, y) >= 0.9


def test_decision_function(fitted):
    est, X, _ = fitted
    scores = est.decision_function(X[:3])
    assert scores.shape == (3, len(est.classes_)) and np.all(scores <= 0)
    assert list(est.classes_[scores.argmax(axis=1)]) == list(est.predict(X[:3]))
    # token sequences and strings are interchangeable inputs
    np.testing.assert_array_equal(est.decision_function([x.split() for x in X[:3]]), scores)


def test_deterministic_fit():
    X, y = toy_xy()
    cfg = dict(FAST, max_epochs=3)
    a = ParaphraseParser(**cfg).fit(X, y).decision_function(X[:4])
    b = ParaphraseParser(**cfg).fit(X, y).decision_function(X[:4])
    assert a.tobytes() == b.tobytes()


def test_fine_tune_from_checkpoint(tmp_path, fitted):
    est, _, _ = fitted
    path = tmp_path / "src.ckpt"
    save_checkpoint(est.checkpoint_, path)
    X, y = toy_xy("bb")
    tuned = ParaphraseParser(**dict(FAST, max_epochs=2), source_checkpoint=str(path)).fit(X, y)
    assert tuned.checkpoint_.lineage == ["estimator"]
    assert len(tuned.vocabulary_) > len(est.vocabulary_)


def test_input_validation():
    with pytest.raises(ContractError):
        ParaphraseParser().fit(["a"], ["b", "c"])
    with pytest.raises(ContractError):
        ParaphraseParser().fit("a b", ["c"])
    with pytest.raises(ContractError):
        ParaphraseParser().fit(["a", "  "], ["b", "c"])
