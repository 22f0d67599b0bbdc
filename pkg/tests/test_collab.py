import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from ctxrec.collab import (
    RatingMatrix,
    Transaction,
    build_item_model,
    cf_action,
    fill_vacant,
    item_similarity_matrix,
    predict,
    predict_from_profile,
    social_group_action,
    top_n,
    user_similarity,
)


def matrix_from(rows, items=None, group_of=None):
    """rows: {user: {item: rating}}."""
    users = list(rows)
    items = items if items is not None else sorted({i for r in rows.values() for i in r})
    group_of = group_of or {u: "g" for u in users}
    txs = []
    for u, r in rows.items():
        for i, v in r.items():
            txs.append(Transaction(len(txs), u, i, v, "s", len(txs)))
    return RatingMatrix(users, items, group_of, txs)


def test_user_similarity_examples():
    m = matrix_from({"u": {1: 1, 2: 1}, "v": {1: 1, 3: 1}, "w": {1: 1, 2: 1}, "x": {3: 1}}, items=[1, 2, 3])
    assert user_similarity(m, "u", "w") == 1.0
    assert user_similarity(m, "u", "x") == 0.0
    assert user_similarity(m, "u", "v") == 1.0
    with pytest.raises(KeyError):
        user_similarity(m, "u", "nobody")


def test_fill_no_vacancies_is_identity():
    m = matrix_from({"a": {0: 0.5, 1: 1.0}, "b": {0: 0.25, 1: 0.75}})
    f = fill_vacant(m, 5)
    R, _ = m.dense()
    assert np.array_equal(f.values, R)


def test_fill_single_user_zero():
    m = matrix_from({"a": {0: 1.0}}, items=[0, 1, 2])
    assert list(fill_vacant(m, 5).values[0]) == [1.0, 0.0, 0.0]


def test_identical_columns_similarity_one():
    m = matrix_from({"a": {0: 1.0, 1: 1.0}, "b": {0: 0.5, 1: 0.5}})
    f = fill_vacant(m)
    S = item_similarity_matrix(f)
    assert S[0, 1] == pytest.approx(1.0)
    model = build_item_model(f, 1)
    assert all(len(v) <= 1 for v in model.neighbors.values())


def test_predict_constant_neighbours_and_empty():
    m = matrix_from({"a": {0: 1.0, 1: 1.0, 2: 1.0}, "b": {0: 1.0, 1: 1.0}}, items=[0, 1, 2, 3])
    f = fill_vacant(m)
    model = build_item_model(f, 10)
    assert predict(model, f, "a", 0) == pytest.approx(1.0)
    # item 3 is never rated: no positive-similarity neighbours
    assert predict(model, f, "a", 3) == 0.0
    with pytest.raises(KeyError):
        predict(model, f, "zzz", 0)


def test_social_action_unique_support_and_fallback():
    rows = {"a": {7: 1.0}, "b": {7: 1.0}, "me": {}}
    m = matrix_from(rows, items=list(range(10)))
    assert cf_action(m, "me", range(10)) == 7
    empty = matrix_from({"a": {}, "me": {}}, items=[3, 5, 9])
    assert cf_action(empty, "me", [9, 5, 3]) == 3
    f = fill_vacant(empty)
    with pytest.raises(ValueError):
        social_group_action(build_item_model(f), f, empty, "me", [])


def test_group_restriction_ignores_other_team():
    rows = {"a": {1: 1.0}, "me": {}, "x": {2: 1.0}, "y": {2: 1.0}}
    m = matrix_from(rows, items=[0, 1, 2], group_of={"a": "t1", "me": "t1", "x": "t2", "y": "t2"})
    assert cf_action(m, "me", [0, 1, 2]) == 1


def test_state_filter_prefers_matching_transactions():
    txs = [Transaction(0, "a", 1, 1.0, "morning", 0), Transaction(1, "a", 2, 1.0, "noon", 1)]
    m = RatingMatrix(["a", "me"], [0, 1, 2], {"a": "g", "me": "g"}, txs)
    assert cf_action(m, "me", [0, 1, 2], "noon") == 2
    assert cf_action(m, "me", [0, 1, 2], "morning") == 1
    # unknown state falls back to all group transactions
    assert cf_action(m, "me", [0, 1, 2], "night") == 1


def test_rating_validation():
    m = matrix_from({"a": {0: 1.0}}, items=[0])
    with pytest.raises(ValueError):
        m.add(Transaction(9, "a", 0, 1.5, "s", 0))
    with pytest.raises(KeyError):
        m.add(Transaction(9, "a", 99, 1.0, "s", 0))


def test_top_n_excludes_observed():
    m = matrix_from({"a": {0: 1.0, 1: 1.0}, "b": {0: 1.0, 1: 1.0, 2: 1.0}}, items=[0, 1, 2])
    f = fill_vacant(m)
    model = build_item_model(f)
    assert [it for it, _ in top_n(model, f, "a", 5)] == [2]


# -- oracle equivalence on the committed toy matrices ---------------------------

def test_toy_fill_matches_oracle(toy):
    m, _, users, items, _ = toy
    for k in (1, 2, 3, 5):
        f = fill_vacant(m, k)
        ref = oracles.fill(m.entries, users, items, k)
        for a, u in enumerate(users):
            for b, i in enumerate(items):
                assert f.values[a, b] == ref[(u, i)], (k, u, i)


def test_toy_item_model_and_predict_match_oracle(toy):
    m, _, users, items, _ = toy
    for k_users, k_items in ((3, 2), (5, 10)):
        f = fill_vacant(m, k_users)
        ref_fill = oracles.fill(m.entries, users, items, k_users)
        ref_nbrs = oracles.neighbors(oracles.item_sims(ref_fill, users, items), items, k_items)
        model = build_item_model(f, k_items)
        assert model.neighbors == ref_nbrs
        for u in users:
            profile = {i: ref_fill[(u, i)] for i in items}
            for i in items:
                assert predict(model, f, u, i) == oracles.predict_profile(ref_nbrs, profile, i)


def test_toy_social_action_matches_oracle(toy):
    m, txs, users, items, group_of = toy
    tuples = [(t.user, t.item, t.rating, t.state_id) for t in txs]
    rng = np.random.default_rng(3)
    for u in users:
        for state in (None, "s0", "s1", "unseen"):
            avail = sorted(rng.choice(items, size=max(1, len(items) // 2), replace=False).tolist())
            for a in (avail, items):
                got = cf_action(m, u, a, state, 3, 4)
                assert got == oracles.social_action(tuples, users, items, group_of, u, a, state, 3, 4)


def test_cold_user_matches_oracle(toy):
    m, txs, users, items, group_of = toy
    cold = users[0]
    kept = [t for t in txs if t.user != cold]
    m2 = RatingMatrix(users, items, group_of, kept)
    tuples = [(t.user, t.item, t.rating, t.state_id) for t in kept]
    for state in (None, "s0"):
        assert cf_action(m2, cold, items, state) == oracles.social_action(
            tuples, users, items, group_of, cold, items, state, 5, 10)


# -- properties ------------------------------------------------------------------

ratings = st.sampled_from([0.25, 0.5, 0.75, 1.0])
sparse = st.dictionaries(
    st.tuples(st.integers(0, 4), st.integers(0, 5)), ratings, max_size=20)


def _matrix(cells):
    users = [f"u{i}" for i in range(5)]
    txs = [Transaction(n, f"u{u}", i, r, "s", n) for n, ((u, i), r) in enumerate(sorted(cells.items()))]
    return RatingMatrix(users, list(range(6)), {u: "g" for u in users}, txs), users


@settings(max_examples=60, deadline=None)
@given(sparse, st.integers(1, 4))
def test_fill_properties(cells, k):
    m, users = _matrix(cells)
    f = fill_vacant(m, k)
    assert np.all((f.values >= 0) & (f.values <= 1))
    for (u, i), r in cells.items():
        assert f.values[u, i] == r
    ref = oracles.fill(m.entries, users, list(range(6)), k)
    assert all(f.values[int(u[1:]), i] == v for (u, i), v in ref.items())


@settings(max_examples=60, deadline=None)
@given(sparse)
def test_similarities_symmetric_and_bounded(cells):
    m, users = _matrix(cells)
    for u in users:
        for v in users:
            s = user_similarity(m, u, v)
            assert 0.0 <= s <= 1.0
            assert s == user_similarity(m, v, u)
    S = item_similarity_matrix(fill_vacant(m))
    assert np.all((S >= 0) & (S <= 1))
    assert np.array_equal(S, S.T)


@settings(max_examples=60, deadline=None)
@given(sparse, st.integers(1, 5))
def test_prediction_in_unit_interval(cells, k):
    m, users = _matrix(cells)
    f = fill_vacant(m)
    model = build_item_model(f, k)
    for u in users:
        for i in range(6):
            assert 0.0 <= predict(model, f, u, i) <= 1.0
    for i, nb in model.neighbors.items():
        assert len(nb) <= k and i not in [j for j, _ in nb]
