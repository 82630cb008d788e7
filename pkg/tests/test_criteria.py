import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from ddtree.criteria import (
    ClassDistribution,
    SplitCriterion,
    gini_index,
    impurity_gain,
    parse_criterion,
    regression_split_loss,
    shannon_entropy,
    tsallis_entropy,
)
from ddtree.errors import ConfigError

counts_st = st.lists(st.integers(0, 50), min_size=1, max_size=6).filter(lambda c: sum(c) > 0)


def test_tsallis_examples():
    assert tsallis_entropy([1, 1], 2) == 0.5
    for q in (0.5, 2, 3.5):
        assert tsallis_entropy([4, 0], q) == 0.0
    assert abs(tsallis_entropy([1, 1], 1.000001) - shannon_entropy([1, 1])) < 1e-5


def test_tsallis_rejects_q_one_and_empty():
    with pytest.raises(ValueError):
        tsallis_entropy([1, 1], 1)
    with pytest.raises(ValueError):
        tsallis_entropy([0, 0], 2)
    with pytest.raises(ConfigError):
        SplitCriterion("tsallis", 1.0)


def test_shannon_examples():
    assert shannon_entropy([1, 1]) == pytest.approx(0.693147, abs=1e-6)
    assert shannon_entropy([7]) == 0.0
    assert shannon_entropy([1, 1, 1, 1]) == pytest.approx(math.log(4), abs=1e-15)


def test_gini_examples():
    assert gini_index([1, 1]) == 0.5
    assert gini_index([3, 0]) == 0.0


def test_regression_loss_examples():
    assert regression_split_loss([0, 0], [10, 10], "sse") == 0.0
    assert regression_split_loss([0, 2], [5], "sse") == 2.0
    assert regression_split_loss([0, 2], [5], "mse") == 1.0
    with pytest.raises(ValueError):
        regression_split_loss([], [1], "sse")


def test_gain_examples():
    shannon = SplitCriterion("shannon")
    assert impurity_gain([5, 5], [5, 0], [0, 5], shannon) == pytest.approx(math.log(2), abs=1e-15)
    assert impurity_gain([4, 6], [2, 3], [2, 3], shannon) == pytest.approx(0.0, abs=1e-15)
    assert impurity_gain([5, 5], [5, 0], [0, 5], SplitCriterion("gain_ratio")) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ZeroDivisionError):
        impurity_gain([5, 5], [5, 5], [0, 0], SplitCriterion("gain_ratio"))
    with pytest.raises(ValueError):
        impurity_gain([0, 0], [0, 0], [0, 0], shannon)


def test_unweighted_children_match_literal_formula():
    crit = SplitCriterion("gini", weighted_children=False)
    expected = oracles.gini([6, 4]) - oracles.gini([5, 1]) - oracles.gini([1, 3])
    assert impurity_gain([6, 4], [5, 1], [1, 3], crit) == pytest.approx(expected, abs=1e-15)


def test_parse_criterion():
    assert parse_criterion("tsallis") == SplitCriterion("tsallis", 2.0)
    assert parse_criterion("tsallis:1.5").q == 1.5
    c = parse_criterion("tsallis:1.000001")
    assert parse_criterion(str(c)) == c
    with pytest.raises(ConfigError):
        parse_criterion("misclassification")
    with pytest.raises(ConfigError):
        parse_criterion("tsallis:abc")


def test_class_distribution():
    d = ClassDistribution.from_labels([0, 2, 2], 3)
    assert d.counts == (1, 0, 2) and d.total == 3


@given(counts_st)
def test_gini_is_tsallis_two_exactly(counts):
    assert gini_index(counts) == tsallis_entropy(counts, 2)


@given(counts_st, st.floats(0.1, 4.0).filter(lambda q: abs(q - 1) > 1e-3))
def test_entropies_match_oracle_and_are_nonnegative(counts, q):
    assert shannon_entropy(counts) == pytest.approx(oracles.shannon(counts), abs=1e-12)
    assert tsallis_entropy(counts, q) == pytest.approx(oracles.tsallis(counts, q), abs=1e-12)
    assert shannon_entropy(counts) >= -1e-15 and tsallis_entropy(counts, q) >= -1e-12
    pure = sum(1 for c in counts if c) == 1
    if pure:
        assert shannon_entropy(counts) == 0 and tsallis_entropy(counts, q) == 0
    else:
        assert shannon_entropy(counts) > 0 and tsallis_entropy(counts, q) > 0


@given(counts_st)
def test_tsallis_tends_to_shannon(counts):
    for q in (1 - 1e-6, 1 + 1e-6):
        assert abs(tsallis_entropy(counts, q) - shannon_entropy(counts)) < 1e-4


@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), min_size=2, max_size=5))
def test_shannon_gain_nonnegative(pairs):
    left = [a for a, _ in pairs]
    right = [b for _, b in pairs]
    parent = [a + b for a, b in pairs]
    if sum(parent) == 0:
        return
    assert impurity_gain(parent, left, right, SplitCriterion("shannon")) >= -1e-12


@given(
    st.lists(st.floats(-100, 100), min_size=1, max_size=20),
    st.lists(st.floats(-100, 100), min_size=1, max_size=20),
    st.randoms(use_true_random=False),
)
def test_sse_symmetries(left, right, rnd):
    base = regression_split_loss(left, right, "sse")
    assert regression_split_loss(right, left, "sse") == pytest.approx(base, rel=1e-12, abs=1e-9)
    l2, r2 = list(left), list(right)
    rnd.shuffle(l2)
    rnd.shuffle(r2)
    assert regression_split_loss(l2, r2, "sse") == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert base == pytest.approx(oracles.sse(left) + oracles.sse(right), rel=1e-9, abs=1e-9)


def test_gain_matches_oracle_on_random_splits():
    rng = np.random.default_rng(5)
    for kind, q in [("shannon", None), ("gini", None), ("tsallis", 0.5), ("tsallis", 3.0), ("gain_ratio", None)]:
        crit = SplitCriterion(kind, q)
        for _ in range(50):
            labels = list(rng.integers(0, 3, 30))
            cut = int(rng.integers(1, 30))
            expected = oracles.split_score(kind, labels[:cut], labels[cut:], 3, q)
            got = impurity_gain(
                oracles.class_counts(labels, 3),
                oracles.class_counts(labels[:cut], 3),
                oracles.class_counts(labels[cut:], 3),
                crit,
            )
            assert got == pytest.approx(expected, abs=1e-12)
