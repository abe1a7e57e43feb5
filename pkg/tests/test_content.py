import pytest
from hypothesis import given
from hypothesis import strategies as st

from diagrameval.content import ContentSets, precision, recall

words = st.sets(st.sampled_from([f"w{i}" for i in range(30)]), max_size=20)


def oracle_matched(P, G):
    # naive nested scan, no set operations
    return sum(1 for p in P for g in G if p == g)


def test_direct_formulas():
    sets = ContentSets({"a", "b"}, {"a", "b", "c"})
    assert precision(sets) == pytest.approx(2 / 3)
    assert recall(sets) == 1.0
    assert recall(ContentSets({"a", "b", "d"}, {"a"})) == pytest.approx(1 / 3)


def test_degenerate_conventions():
    assert precision(ContentSets({"a"}, set())) == 0.0
    assert precision(ContentSets(set(), set())) == 1.0
    assert recall(ContentSets(set(), {"x"})) == 1.0


def test_recall_of_052_from_crafted_sets():
    required = {f"label {i}" for i in range(25)}
    generated = {f"label {i}" for i in range(13)} | {"stray"}
    assert recall(ContentSets(required, generated)) == pytest.approx(0.52)


@given(words, words)
def test_against_bruteforce_intersection(P, G):
    sets = ContentSets(P, G)
    m = oracle_matched(P, G)
    assert precision(sets) == (m / len(G) if G else (0.0 if P else 1.0))
    assert recall(sets) == (m / len(P) if P else 1.0)
    assert 0.0 <= precision(sets) <= 1.0 and 0.0 <= recall(sets) <= 1.0


@given(words.filter(bool), words.filter(bool))
def test_precision_and_recall_are_mirror_images(P, G):
    assert precision(ContentSets(P, G)) == recall(ContentSets(G, P))


@given(words, words, st.sampled_from([f"w{i}" for i in range(30)]))
def test_adding_a_required_string_never_lowers_recall(P, G, extra):
    P = P | {extra}
    before = ContentSets(P, G)
    after = ContentSets(P, G | {extra})
    assert after.matched >= before.matched
    assert recall(after) >= recall(before)
