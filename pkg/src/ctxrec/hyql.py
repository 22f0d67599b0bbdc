"""Recommendation agents: plain Q-learning and the hybrid CBR + CF Q-learner.

Per step the hybrid agent first looks for a reusable case; failing that it
draws q ~ U[0, 1) and exploits the Q-table when q <= p, otherwise it takes the
action recommended by collaborative filtering over the user's social group.
Both variants apply the same one-step Q update afterwards.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import casebase as cbr
from . import collab
from .context import Situation, encode
from .qlearning import LearningParams, QTable, epsilon_greedy_choice, greedy_policy, update

log = logging.getLogger(__name__)

PLAIN = "plain-qlearning"
HYQL = "hyql"

CBR_REUSE = "cbr-reuse"
EXPLOIT = "exploit-greedy"
EXPLORE_CF = "explore-cf"
EXPLORE_RANDOM = "explore-random"


@dataclass(frozen=True)
class StepOutcome:
    situation: Situation
    chosen_action: int
    source: str
    reward: int
    q_before: float
    q_after: float


class Agent:
    """One learning agent serving one user.

    ``group_of`` maps every known user to a social group; ``actions`` is the
    resource catalogue. The hybrid variant keeps a case base and a rating
    matrix; the item model is rebuilt from a snapshot of the matrix every
    ``rebuild_every`` trials.
    """

    def __init__(
        self,
        variant: str,
        user_id: str,
        actions: Iterable[int],
        group_of: Mapping[str, str],
        params: LearningParams = LearningParams(),
        rng: Optional[np.random.Generator] = None,
        *,
        k_users: int = 5,
        k_items: int = 10,
        rebuild_every: int = 10,
        reuse_threshold: float = 0.75,
        success_threshold: float = 0.5,
        case_weights: Sequence[float] = cbr.DEFAULT_WEIGHTS,
        state_includes_action: bool = False,
        default_value: float = 0.0,
    ) -> None:
        if variant not in (PLAIN, HYQL):
            raise ValueError(f"unknown agent variant {variant!r}")
        if user_id not in group_of:
            raise ValueError(f"user {user_id!r} has no social group")
        if rebuild_every < 1:
            raise ValueError("rebuild_every must be >= 1")
        self.variant = variant
        self.user_id = user_id
        self.params = params
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.qtable = QTable(actions, default_value)
        if not self.qtable.actions:
            raise ValueError("empty action space")
        self.k_users = k_users
        self.k_items = k_items
        self.rebuild_every = rebuild_every
        self.state_includes_action = state_includes_action
        self.trial = 0
        self.pending: Optional[Tuple[str, int, str]] = None  # (state_id, action, source)

        self.casebase: Optional[cbr.CaseBase] = None
        self.ratings: Optional[collab.RatingMatrix] = None
        self.snapshot_len = 0
        self._cf_cache: Dict[str, int] = {}
        if variant == HYQL:
            self.casebase = cbr.CaseBase(reuse_threshold, success_threshold, tuple(case_weights))
            users = sorted(group_of)
            self.ratings = collab.RatingMatrix(users, self.qtable.actions, group_of)

    # -- state handling -----------------------------------------------------

    def observe(self, situation: Situation) -> Situation:
        """Project a sensed situation onto the dimensions this agent conditions on."""
        return situation if self.state_includes_action else situation.without_action()

    def state_of(self, situation: Situation) -> str:
        return encode(self.observe(situation))

    # -- collaborative filtering ----------------------------------------------

    def rebuild_model(self) -> None:
        """Freeze the current rating matrix as the CF snapshot."""
        self.snapshot_len = len(self.ratings.transactions)
        self._cf_cache.clear()

    def cf_choice(self, state: str) -> int:
        cached = self._cf_cache.get(state)
        if cached is None:
            snap = collab.RatingMatrix(
                self.ratings.users,
                self.ratings.items,
                self.ratings.group_of,
                self.ratings.transactions[: self.snapshot_len],
            )
            cached = collab.cf_action(
                snap, self.user_id, self.qtable.actions, state, self.k_users, self.k_items
            )
            self._cf_cache[state] = cached
        return cached

    def bootstrap_from_group(self, transactions: Iterable[collab.Transaction]) -> "Agent":
        """Load the social group's interaction history and build the CF model."""
        if self.variant != HYQL:
            raise ValueError("only the hybrid agent uses group history")
        txs = list(transactions)
        for tx in txs:
            self.ratings.validate(tx)
        for tx in txs:
            self.ratings.add(tx)
        self.rebuild_model()
        return self

    # -- policy ---------------------------------------------------------------

    def select_action(self, situation: Situation) -> Tuple[int, str]:
        observed = self.observe(situation)
        state = encode(observed)
        if self.variant == PLAIN:
            action, explored = epsilon_greedy_choice(self.qtable, state, self.params.epsilon, self.rng)
            source = EXPLORE_RANDOM if explored else EXPLOIT
        else:
            hit = cbr.retrieve(self.casebase, observed)
            if hit is not None:
                action, source = cbr.adapt(hit[0], observed), CBR_REUSE
            elif self.rng.random() <= self.params.p:
                action, source = greedy_policy(self.qtable, state), EXPLOIT
            else:
                action, source = self.cf_choice(state), EXPLORE_CF
        self.pending = (state, action, source)
        return action, source

    def step(self, situation: Situation, feedback_reward: int, next_situation: Situation) -> StepOutcome:
        """Learn from the user's response to the last selected action."""
        if feedback_reward not in (0, 1):
            raise ValueError(f"reward must be 0 or 1, got {feedback_reward!r}")
        observed = self.observe(situation)
        state = encode(observed)
        if self.pending is None or self.pending[0] != state:
            raise RuntimeError("step() must follow select_action() for the same situation")
        _, action, source = self.pending
        self.pending = None

        q_before = self.qtable.get(state, action)
        q_after = update(self.qtable, state, action, feedback_reward, self.state_of(next_situation), self.params)
        if self.variant == HYQL:
            cbr.retain(self.casebase, observed, action, feedback_reward, self.trial)
            if feedback_reward == 1:
                self.ratings.add(
                    collab.Transaction(
                        self.ratings.next_id(), self.user_id, action, 1.0, state, self.trial
                    )
                )
        self.trial += 1
        if self.variant == HYQL and self.trial % self.rebuild_every == 0:
            self.rebuild_model()
        return StepOutcome(observed, action, source, feedback_reward, q_before, q_after)


def make_agent(variant: str, user_id: str, actions: Iterable[int], group_of: Mapping[str, str],
               params: LearningParams, rng: np.random.Generator, **kwargs) -> Agent:
    """Build an agent from a variant name; ``qlearning-greedy`` is plain Q-learning with epsilon 0."""
    if variant in ("qlearning", PLAIN):
        return Agent(PLAIN, user_id, actions, group_of, params, rng, **kwargs)
    if variant == "qlearning-greedy":
        greedy = LearningParams(params.alpha, params.gamma, 0.0, params.p, params.alpha_schedule)
        return Agent(PLAIN, user_id, actions, group_of, greedy, rng, **kwargs)
    if variant == HYQL:
        return Agent(HYQL, user_id, actions, group_of, params, rng, **kwargs)
    raise ValueError(f"unknown agent variant {variant!r}")


VARIANTS: List[str] = ["qlearning", "qlearning-greedy", HYQL]
