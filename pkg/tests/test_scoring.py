import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from osal.scoring import SampleScores, informativeness, js_divergence, max_softmax, purity_score, score_samples


def js_reference(p, q):
    """Jensen-Shannon divergence in bits, term by term."""
    total = 0.0
    for a, b in zip(p, q):
        m = 0.5 * (a + b)
        if a > 0:
            total += 0.5 * a * math.log2(a / m)
        if b > 0:
            total += 0.5 * b * math.log2(b / m)
    return total


def distributions(min_size=2, max_size=8):
    weight = st.one_of(st.just(0.0), st.floats(1e-9, 1.0))
    return st.lists(weight, min_size=min_size, max_size=max_size).filter(
        lambda w: sum(w) > 1e-3).map(lambda w: [x / sum(w) for x in w])


class TestPurity:
    def test_margin(self):
        assert purity_score([3.0, 0.5, 1.0, -2.0], k=2) == 2.0

    def test_tie(self):
        assert purity_score([1.0, 0.0, 1.0], k=2) == 0.0

    def test_first_round_is_known_max(self):
        assert purity_score([0.2, 1.7, -0.3], k=3, round_=1) == 1.7

    def test_no_unknown_slots(self):
        with pytest.raises(ValueError, match="no unknown classes"):
            purity_score([0.2, 1.7, -0.3], k=3, round_=2)

    def test_batch(self):
        o = np.array([[3.0, 0.0, 1.0], [0.0, 0.0, 2.0]])
        np.testing.assert_array_equal(purity_score(o, k=2), [2.0, -2.0])

    @given(st.lists(st.floats(-50, 50), min_size=3, max_size=10), st.floats(-100, 100))
    def test_shift_invariant(self, logits, c):
        o = np.array(logits)
        assert purity_score(o + c, k=2) == pytest.approx(purity_score(o, k=2), abs=1e-9)

    def test_argmax_invariant_to_monotone_transform(self):
        rng = np.random.default_rng(0)
        scores = purity_score(rng.normal(size=(50, 6)), k=3)
        assert np.argmax(scores) == np.argmax(np.exp(scores)) == np.argmax(np.tanh(scores / 10) * 3 + 1)


class TestJS:
    def test_uniform_vs_onehot(self):
        assert js_divergence([0.5, 0.5], [1.0, 0.0]) == pytest.approx(js_reference([0.5, 0.5], [1.0, 0.0]), abs=1e-15)
        assert js_divergence([0.5, 0.5], [1.0, 0.0]) == pytest.approx(0.31128, abs=5e-6)

    @given(distributions())
    def test_self_is_zero(self, p):
        assert js_divergence(p, p) == pytest.approx(0.0, abs=1e-12)

    @given(st.integers(2, 8).flatmap(lambda n: st.tuples(distributions(n, n), distributions(n, n))))
    def test_symmetric_bounded_and_matches_reference(self, pq):
        p, q = pq
        d = js_divergence(p, q)
        assert d == pytest.approx(js_divergence(q, p), abs=1e-12)
        assert d == pytest.approx(js_reference(p, q), abs=1e-12)
        assert -1e-12 <= d <= 1.0 + 1e-12

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            js_divergence([0.5, 0.5], [1.0, 0.0, 0.0])

    def test_negative_entries(self):
        with pytest.raises(ValueError):
            js_divergence([1.5, -0.5], [0.5, 0.5])


class TestInformativeness:
    def test_uniform(self):
        assert informativeness([0.25] * 4) == 0.0

    def test_one_hot(self):
        assert informativeness([0.0, 1.0, 0.0]) == 0.0

    def test_two_class_example(self):
        p = [0.7, 0.3]
        to_uniform = js_reference(p, [0.5, 0.5])
        to_peak = js_reference(p, [1.0, 0.0])
        assert to_uniform == pytest.approx(0.03031, abs=5e-6)
        assert to_peak == pytest.approx(0.16920, abs=1e-5)
        assert informativeness(p) == pytest.approx(to_uniform * to_peak, abs=1e-15)
        assert informativeness(p) == pytest.approx(0.005128, abs=1e-6)

    def test_argmax_ties_go_to_lowest_index(self):
        p = [0.4, 0.4, 0.2]
        expected = js_reference(p, [1 / 3] * 3) * js_reference(p, [1.0, 0.0, 0.0])
        assert informativeness(p) == pytest.approx(expected, abs=1e-15)

    def test_two_class_curve_is_unimodal(self):
        q = np.linspace(0.5, 1.0, 2001)
        s = informativeness(np.stack([q, 1 - q], axis=1))
        peak = int(np.argmax(s))
        assert s[0] == pytest.approx(0.0, abs=1e-15) and s[-1] == pytest.approx(0.0, abs=1e-15)
        assert 0 < peak < q.size - 1
        assert np.all(np.diff(s[: peak + 1]) > 0)
        assert np.all(np.diff(s[peak:]) < 0)

    @given(distributions())
    def test_non_negative(self, p):
        assert informativeness(p) >= 0.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            informativeness([0.5, 0.6])


def test_score_samples():
    aux = np.array([[3.0, 0.0, 1.0], [0.0, 0.0, 2.0]])
    probs = np.array([[0.7, 0.3], [0.5, 0.5]])
    scores = score_samples(aux, probs, k=2)
    assert isinstance(scores, SampleScores)
    np.testing.assert_array_equal(scores.purity, [2.0, -2.0])
    assert scores.informativeness[1] == 0.0
    with pytest.raises(ValueError):
        score_samples(aux, probs[:1], k=2)


def test_max_softmax():
    np.testing.assert_array_equal(max_softmax([[0.2, 0.8], [0.6, 0.4]]), [0.8, 0.6])
