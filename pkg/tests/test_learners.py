import json

import numpy as np
import pytest

from lebsim.errors import ParameterError
from lebsim.learners import (
    ALL_KINDS,
    MLP,
    ClassifierKind,
    LogisticSGD,
    MultinomialNB,
    OnlineClassifier,
    PassiveAggressive,
    Perceptron,
    SGDHinge,
    make_classifier,
)


class TestPredict:
    def test_sign_of_linear_model(self):
        p = Perceptron(2)
        p.w[:] = [1.0, 0.0]
        p.b = -5.0
        assert p.predict([3.0, 9.0]) == -1

    def test_tie_is_positive(self):
        assert Perceptron(1).predict([0.0]) == 1

    def test_cold_start_nb(self):
        nb = MultinomialNB(3)
        assert nb.predict([-90.0, -60.0, -100.0]) == 1

    def test_dimension_mismatch(self):
        with pytest.raises(ParameterError):
            SGDHinge(3).predict([1.0, 2.0])

    def test_non_finite_feature(self):
        with pytest.raises(ParameterError):
            PassiveAggressive(2).fit_one([np.nan, 0.0], 1)
        with pytest.raises(ParameterError):
            Perceptron(2).predict([np.inf, 0.0])

    def test_huge_finite_features_accepted(self):
        assert Perceptron(2).predict([1e308, 1e308]) == 1

    def test_bad_label(self):
        with pytest.raises(ParameterError):
            Perceptron(1).fit_one([1.0], 0)


class TestUpdates:
    def test_perceptron_no_mistake_no_change(self):
        p = Perceptron(2).fit_one([1.0, 1.0], 1)
        assert p.w.tolist() == [0.0, 0.0] and p.b == 0.0
        assert p.updates_seen == 1

    def test_perceptron_mistake(self):
        p = Perceptron(2).fit_one([1.0, 2.0], -1)
        assert p.w.tolist() == [-1.0, -2.0] and p.b == -1.0

    def test_pa1_closed_form(self):
        pa = PassiveAggressive(2, C=1.0, variant=1).fit_one([1.0, 0.0], 1)
        assert pa.w.tolist() == [0.5, 0.0] and pa.b == 0.5
        assert pa.hyperplane()[0].tolist() == [0.5, 0.0]

    def test_pa2_closed_form(self):
        pa = PassiveAggressive(2, C=1.0, variant=2).fit_one([1.0, 0.0], 1)
        assert np.allclose(pa.w, [0.4, 0.0]) and pa.b == pytest.approx(0.4)

    def test_pa1_step_capped_by_c(self):
        pa = PassiveAggressive(1, C=0.1, variant=1).fit_one([0.0], -1)
        # loss 1, |x~|^2 = 1 -> tau = min(0.1, 1) = 0.1
        assert pa.b == pytest.approx(-0.1)

    def test_sgd_hinge_pegasos_step(self):
        m = SGDHinge(2, lam=0.5, t0=1.0).fit_one([1.0, -1.0], 1)
        # eta_0 = 1/(0.5*1) = 2; shrink = 0; margin 0 < 1 -> w = 2*[1,-1]
        assert m.w.tolist() == [2.0, -2.0] and m.b == 2.0
        m.fit_one([1.0, -1.0], 1)
        # eta_1 = 1; shrink 0.5 -> w = [1,-1]; margin 1*... = 1*(2+2+2)=6 >= 1
        assert m.w.tolist() == [1.0, -1.0] and m.b == 1.0

    def test_fresh_sgd_hyperplane(self):
        w, b = SGDHinge(3).hyperplane()
        assert w.tolist() == [0.0, 0.0, 0.0] and b == 0.0

    def test_nb_counts(self):
        nb = MultinomialNB(2, n_bins=4, bounds=(0.0, 4.0))
        nb.fit_one([0.5, 3.9], 1).fit_one([1.5, 2.0], -1).fit_one([4.0, -1.0], 1)
        assert nb.class_count.tolist() == [1.0, 2.0]
        assert nb.feature_count.sum(axis=1).tolist() == [2.0, 4.0]
        assert nb.bin_index([0.0, 0.99, 1.0, 4.0, 9.0]).tolist() == [0, 0, 1, 3, 3]

    def test_nb_learns_separable_bins(self):
        nb = MultinomialNB(1, n_bins=8, bounds=(0.0, 8.0))
        for _ in range(20):
            nb.fit_one([1.5], -1).fit_one([6.5], 1)
        assert nb.predict([1.2]) == -1 and nb.predict([6.9]) == 1

    def test_mlp_learns_xor_like_threshold(self):
        rng = np.random.default_rng(0)
        mlp = MLP(2, seed=3)
        for _ in range(3000):
            x = rng.uniform(-1, 1, 2)
            mlp.fit_one(x, 1 if x[0] + x[1] > 0 else -1)
        test = rng.uniform(-1, 1, (200, 2))
        acc = np.mean([mlp.predict(x) == (1 if x.sum() > 0 else -1) for x in test])
        assert acc > 0.9

    def test_mlp_init_within_scale(self):
        mlp = MLP(5, seed=1)
        assert np.all(np.abs(mlp.W1) <= 0.1) and np.all(np.abs(mlp.w2) <= 0.1)
        assert np.array_equal(MLP(5, seed=1).W1, mlp.W1)

    def test_logistic_sgd_learns(self):
        m = LogisticSGD(1, lr=0.5)
        for _ in range(200):
            m.fit_one([1.0], 1).fit_one([-1.0], -1)
        assert m.predict([0.8]) == 1 and m.predict([-0.8]) == -1


class TestCapabilities:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_hyperplane_matrix(self, kind):
        clf = make_classifier(kind, 3)
        has = clf.hyperplane() is not None
        assert has == (kind not in (ClassifierKind.MULTINOMIAL_NB, ClassifierKind.MLP))
        assert clf.kind == kind.value

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            make_classifier("Forest", 2)


class TestSnapshots:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_round_trip(self, kind):
        rng = np.random.default_rng(1)
        clf = make_classifier(kind, 4, seed=2)
        xs = rng.uniform(-1, 1, (30, 4))
        for x in xs:
            clf.fit_one(x, 1 if x[0] > 0 else -1)
        text = clf.to_json()
        back = OnlineClassifier.from_json(text)
        assert back.kind == clf.kind and back.updates_seen == 30
        assert back.to_json() == text
        assert [back.predict(x) for x in xs] == [clf.predict(x) for x in xs]

    def test_version_checked(self):
        d = json.loads(Perceptron(2).to_json())
        d["version"] = 99
        with pytest.raises(ParameterError):
            OnlineClassifier.from_dict(d)

    def test_identical_streams_identical_state(self):
        rng = np.random.default_rng(5)
        data = [(rng.normal(size=3), int(rng.choice([-1, 1]))) for _ in range(50)]
        a, b = make_classifier("MLP", 3, seed=4), make_classifier("MLP", 3, seed=4)
        for x, y in data:
            a.fit_one(x, y)
            b.fit_one(x, y)
        assert a.to_json() == b.to_json()
