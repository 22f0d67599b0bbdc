"""Hybrid collaborative filtering over implicit ratings.

Memory-based user-user CF fills the vacant cells of the user x item matrix,
then an item-item cosine neighbourhood model is built over the filled matrix
and used to score candidate resources.

All reductions accumulate in a fixed order (items by index, users by index,
neighbours by rank) so results are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class Transaction:
    id: int
    user: str
    item: int
    rating: float
    state_id: str
    trial: int


class RatingMatrix:
    """Sparse user x item ratings in [0, 1], backed by an append-only transaction list.

    A later transaction on the same (user, item) overrides the earlier rating.
    """

    def __init__(
        self,
        users: Sequence[str],
        items: Sequence[int],
        group_of: Mapping[str, str],
        transactions: Iterable[Transaction] = (),
    ) -> None:
        self.users: List[str] = list(users)
        self.items: List[int] = list(items)
        if len(set(self.users)) != len(self.users) or len(set(self.items)) != len(self.items):
            raise ValueError("duplicate user or item ids")
        missing = [u for u in self.users if u not in group_of]
        if missing:
            raise ValueError(f"users without a social group: {missing}")
        self.group_of: Dict[str, str] = {u: group_of[u] for u in self.users}
        self._user_index = {u: i for i, u in enumerate(self.users)}
        self._item_index = {it: j for j, it in enumerate(self.items)}
        self.transactions: List[Transaction] = []
        self.entries: Dict[Tuple[str, int], float] = {}
        for tx in transactions:
            self.add(tx)

    def user_index(self, user: str) -> int:
        try:
            return self._user_index[user]
        except KeyError:
            raise KeyError(f"unknown user {user!r}") from None

    def item_index(self, item: int) -> int:
        try:
            return self._item_index[item]
        except KeyError:
            raise KeyError(f"unknown item {item!r}") from None

    def validate(self, tx: Transaction) -> None:
        self.user_index(tx.user)
        self.item_index(tx.item)
        if not (isinstance(tx.rating, (int, float)) and 0.0 <= tx.rating <= 1.0):
            raise ValueError(f"rating must lie in [0, 1], got {tx.rating!r}")

    def add(self, tx: Transaction) -> None:
        self.validate(tx)
        self.transactions.append(tx)
        self.entries[(tx.user, tx.item)] = float(tx.rating)

    def next_id(self) -> int:
        return self.transactions[-1].id + 1 if self.transactions else 0

    def has_ratings(self, user: str) -> bool:
        self.user_index(user)
        return any(u == user for u, _ in self.entries)

    def dense(self) -> Tuple[np.ndarray, np.ndarray]:
        """Return (ratings, observed mask); vacant cells hold 0."""
        R = np.zeros((len(self.users), len(self.items)))
        M = np.zeros_like(R, dtype=bool)
        for (u, it), r in self.entries.items():
            i, j = self._user_index[u], self._item_index[it]
            R[i, j] = r
            M[i, j] = True
        return R, M

    def group_view(self, user: str, state_id: Optional[str] = None) -> "RatingMatrix":
        """Restrict to ``user``'s social group, optionally to one situation.

        Transactions logged under ``state_id`` are used when the group has
        any; otherwise all of the group's transactions are kept.
        """
        group = self.group_of[self.users[self.user_index(user)]]
        members = [u for u in self.users if self.group_of[u] == group]
        txs = [tx for tx in self.transactions if self.group_of[tx.user] == group]
        if state_id is not None:
            in_state = [tx for tx in txs if tx.state_id == state_id]
            if in_state:
                txs = in_state
        return RatingMatrix(members, self.items, self.group_of, txs)


@dataclass
class FilledMatrix:
    users: List[str]
    items: List[int]
    values: np.ndarray
    observed: np.ndarray

    def row(self, user: str) -> np.ndarray:
        return self.values[self.users.index(user)]


@dataclass
class ItemModel:
    items: List[int]
    neighbors: Dict[int, List[Tuple[int, float]]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.index = {it: j for j, it in enumerate(self.items)}


def _user_similarity_matrix(R: np.ndarray, M: np.ndarray) -> np.ndarray:
    n_users, n_items = R.shape
    dot = np.zeros((n_users, n_users))
    sq = np.zeros((n_users, n_users))  # sq[u, v] = sum of r_u^2 over items co-rated by u and v
    for i in range(n_items):
        both = M[:, i][:, None] & M[:, i][None, :]
        x = R[:, i]
        dot = np.where(both, dot + np.outer(x, x), dot)
        sq = np.where(both, sq + (x * x)[:, None], sq)
    # sqrt of the product keeps parallel vectors at exactly 1
    denom = np.sqrt(sq * sq.T)
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = np.where(denom > 0, dot / denom, 0.0)
    return np.minimum(sim, 1.0)


def user_similarity(matrix: RatingMatrix, u: str, v: str) -> float:
    """Cosine similarity over co-rated items; 0 when nothing is co-rated."""
    i, j = matrix.user_index(u), matrix.user_index(v)
    R, M = matrix.dense()
    return float(_user_similarity_matrix(R, M)[i, j])


def fill_vacant(matrix: RatingMatrix, k_users: int = 5) -> FilledMatrix:
    """Fill each vacant (u, i) with the similarity-weighted mean rating of ``i``
    among the ``k_users`` users most similar to ``u`` who rated it.

    Neighbour rank is (similarity desc, user index asc). Cells with no rater,
    or only zero-similarity raters, get 0.
    """
    if k_users < 1:
        raise ValueError(f"k_users must be >= 1, got {k_users}")
    R, M = matrix.dense()
    S = _user_similarity_matrix(R, M)
    n_users = R.shape[0]
    F = R.copy()
    for u in range(n_users):
        others = sorted((v for v in range(n_users) if v != u), key=lambda v: (-S[u, v], v))
        num = np.zeros(R.shape[1])
        den = np.zeros(R.shape[1])
        taken = np.zeros(R.shape[1], dtype=int)
        for v in others:
            take = M[v] & ~M[u] & (taken < k_users)
            num = np.where(take, num + S[u, v] * R[v], num)
            den = np.where(take, den + S[u, v], den)
            taken += take
        with np.errstate(divide="ignore", invalid="ignore"):
            est = np.where(den > 0, num / den, 0.0)
        F[u] = np.where(M[u], R[u], np.clip(est, 0.0, 1.0))
    return FilledMatrix(list(matrix.users), list(matrix.items), F, M)


def item_similarity_matrix(filled: FilledMatrix) -> np.ndarray:
    F = filled.values
    G = np.zeros((F.shape[1], F.shape[1]))
    for u in range(F.shape[0]):
        G = G + np.outer(F[u], F[u])
    d = np.diag(G)
    denom = np.sqrt(d[:, None] * d[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = np.where(denom > 0, G / denom, 0.0)
    return np.minimum(sim, 1.0)


def build_item_model(filled: FilledMatrix, k_items: int = 10) -> ItemModel:
    """Top-``k_items`` positive-similarity neighbours per item, sorted by similarity desc."""
    if k_items < 1:
        raise ValueError(f"k_items must be >= 1, got {k_items}")
    S = item_similarity_matrix(filled)
    items = filled.items
    n = len(items)
    model = ItemModel(list(items))
    idx = np.arange(n)
    for j in range(n):
        row = S[j]
        cand = idx[(row > 0) & (idx != j)]
        # lexsort: last key is primary
        order = cand[np.lexsort((cand, -row[cand]))][:k_items]
        model.neighbors[items[j]] = [(items[c], float(row[c])) for c in order]
    return model


def predict_from_profile(model: ItemModel, profile: np.ndarray, item: int) -> float:
    """Similarity-weighted mean of ``profile`` over ``item``'s neighbours (0 if none)."""
    try:
        neighbors = model.neighbors[item]
    except KeyError:
        raise KeyError(f"unknown item {item!r}") from None
    index = model.index
    num = 0.0
    den = 0.0
    for nb, s in neighbors:
        num += s * float(profile[index[nb]])
        den += s
    if den <= 0.0:
        return 0.0
    return min(1.0, max(0.0, num / den))


def predict(model: ItemModel, filled: FilledMatrix, user: str, item: int) -> float:
    if user not in filled.users:
        raise KeyError(f"unknown user {user!r}")
    return predict_from_profile(model, filled.row(user), item)


def group_profile(matrix: RatingMatrix, filled: FilledMatrix, user: str) -> np.ndarray:
    """Rating profile used to score items for ``user``.

    A user with observed ratings uses their filled row. A cold user gets the
    mean observed rating row of the group members who have any ratings.
    """
    if matrix.has_ratings(user):
        return filled.row(user)
    R, M = matrix.dense()
    active = [i for i, u in enumerate(matrix.users) if u != user and M[i].any()]
    acc = np.zeros(R.shape[1])
    for i in active:
        acc = acc + R[i]
    return acc / len(active) if active else acc


def social_group_action(
    model: ItemModel,
    filled: FilledMatrix,
    matrix: RatingMatrix,
    user: str,
    available_actions: Iterable[int],
) -> int:
    """Pick the available action with the highest group-derived score for ``user``.

    ``matrix`` is the group view the model and filled matrix were built from.
    Score = max(profile rating, item-model prediction); ties go to the lowest id,
    which is also the fallback when the group has no history.
    """
    candidates = sorted(set(available_actions))
    if not candidates:
        raise ValueError("no available actions")
    if not matrix.entries:
        return candidates[0]
    profile = group_profile(matrix, filled, user)
    best, best_score = candidates[0], -1.0
    for a in candidates:
        score = max(float(profile[matrix.item_index(a)]), predict_from_profile(model, profile, a))
        if score > best_score:
            best, best_score = a, score
    return best


def cf_action(
    matrix: RatingMatrix,
    user: str,
    available_actions: Iterable[int],
    state_id: Optional[str] = None,
    k_users: int = 5,
    k_items: int = 10,
) -> int:
    """Group-restricted, situation-filtered CF choice; builds the model from scratch."""
    view = matrix.group_view(user, state_id)
    filled = fill_vacant(view, k_users)
    model = build_item_model(filled, k_items)
    return social_group_action(model, filled, view, user, available_actions)


def top_n(model: ItemModel, filled: FilledMatrix, user: str, n: int) -> List[Tuple[int, float]]:
    """Top-``n`` unobserved items for ``user`` with predicted ratings."""
    u = filled.users.index(user)
    scored = [
        (it, predict(model, filled, user, it))
        for j, it in enumerate(filled.items)
        if not filled.observed[u, j]
    ]
    scored.sort(key=lambda x: (-x[1], x[0]))
    return scored[:n]
