import numpy as np
import pytest

import oracles
from ctxrec import config as cfg
from ctxrec.collab import Transaction
from ctxrec.context import PERIOD, PLACE, DEFAULT_ONTOLOGY, Situation, TimeConcept, encode
from ctxrec.hyql import (
    CBR_REUSE,
    EXPLOIT,
    EXPLORE_CF,
    EXPLORE_RANDOM,
    HYQL,
    PLAIN,
    Agent,
    make_agent,
)
from ctxrec.qlearning import LearningParams
from ctxrec.sim import generate_team_history, make_population, situation_of

GROUPS = {"me": "g", "a": "g", "b": "g", "x": "h"}


def sit(period="morning", place="office", action="none"):
    return Situation(TimeConcept(PERIOD, period, period, "weekday"),
                     DEFAULT_ONTOLOGY.abstract_location(place, PLACE), "g", action)


def agent(p=0.9, seed=0, **kw):
    return Agent(HYQL, "me", range(10), GROUPS, LearningParams(p=p), np.random.default_rng(seed), **kw)


def test_p_one_always_greedy_p_zero_always_cf():
    greedy = agent(p=1.0)
    greedy.qtable.set(encode(sit()), 4, 0.5)
    assert {greedy.select_action(sit()) for _ in range(500)} == {(4, EXPLOIT)}
    cf = agent(p=0.0).bootstrap_from_group([Transaction(0, "a", 7, 1.0, encode(sit()), -1)])
    assert {cf.select_action(sit()) for _ in range(500)} == {(7, EXPLORE_CF)}


@pytest.mark.parametrize("p", [0.5, 0.8])
def test_mixture_law(p):
    ag = agent(p=p, seed=11)
    n = 100_000
    greedy = sum(ag.select_action(sit())[1] == EXPLOIT for _ in range(n))
    assert abs(greedy / n - p) < 0.02


def test_step_examples():
    ag = agent()
    a, _ = ag.select_action(sit())
    out = ag.step(sit(), 0, sit("midday"))
    assert out.q_after == 0.0 and ag.qtable.get(encode(sit()), a) == 0.0

    ag = Agent(HYQL, "me", range(10), GROUPS, LearningParams(alpha=1.0, gamma=0.0, p=1.0))
    a, _ = ag.select_action(sit())
    out = ag.step(sit(), 1, sit("midday"))
    assert out.q_after == 1.0
    (case,) = list(ag.casebase)
    assert (case.action, case.successes, case.attempts) == (a, 1, 1)
    assert ag.ratings.transactions[-1].item == a


def test_repeated_success_leads_to_reuse():
    ag = agent(p=0.0).bootstrap_from_group([Transaction(0, "a", 3, 1.0, encode(sit()), -1)])
    a, src = ag.select_action(sit())
    assert (a, src) == (3, EXPLORE_CF)
    ag.step(sit(), 1, sit())
    assert ag.select_action(sit()) == (3, CBR_REUSE)
    # a close situation (other office in the same city, 0.875) reuses too
    assert ag.select_action(sit(place="office-3")) == (3, CBR_REUSE)
    # client site at midday: other city and other period, 0.6875, no reuse
    assert ag.select_action(sit("midday", place="client-site"))[1] != CBR_REUSE


def test_step_requires_matching_select():
    ag = agent()
    with pytest.raises(RuntimeError):
        ag.step(sit(), 1, sit())
    ag.select_action(sit())
    with pytest.raises(RuntimeError):
        ag.step(sit("evening"), 1, sit())
    with pytest.raises(ValueError):
        ag.step(sit(), 3, sit())


def test_cognitive_action_projected_out_by_default():
    ag = agent()
    assert ag.state_of(sit(action="call")) == ag.state_of(sit())
    ag2 = agent(state_includes_action=True)
    assert ag2.state_of(sit(action="call")) != ag2.state_of(sit())


def test_bootstrap_examples():
    ag = agent(p=0.0).bootstrap_from_group([])
    assert ag.select_action(sit()) == (0, EXPLORE_CF)
    ag = agent(p=0.0).bootstrap_from_group(
        [Transaction(i, u, 7, 1.0, encode(sit("evening")), -1) for i, u in enumerate("ab")])
    assert ag.select_action(sit())[0] == 7
    with pytest.raises(KeyError):
        agent().bootstrap_from_group([Transaction(0, "ghost", 1, 1.0, "s", -1)])
    with pytest.raises(ValueError):
        agent().bootstrap_from_group([Transaction(0, "a", 1, 2.0, "s", -1)])
    with pytest.raises(ValueError):
        Agent(PLAIN, "me", range(3), GROUPS).bootstrap_from_group([])


def test_model_rebuilt_on_schedule():
    ag = agent(p=0.0, rebuild_every=3).bootstrap_from_group([])
    for t in range(3):
        a, _ = ag.select_action(sit())
        assert ag.snapshot_len == (0 if t < 3 else 1)
        ag.step(sit(), 1 if t == 0 else 0, sit())
    assert ag.snapshot_len == 1


def test_plain_agent_sources_and_variants():
    ag = make_agent("qlearning", "me", range(5), GROUPS, LearningParams(epsilon=0.5), np.random.default_rng(0))
    sources = {ag.select_action(sit())[1] for _ in range(200)}
    assert sources == {EXPLOIT, EXPLORE_RANDOM}
    g = make_agent("qlearning-greedy", "me", range(5), GROUPS, LearningParams(), np.random.default_rng(0))
    assert g.params.epsilon == 0.0 and g.variant == PLAIN
    with pytest.raises(ValueError):
        make_agent("sarsa", "me", range(5), GROUPS, LearningParams(), np.random.default_rng(0))
    with pytest.raises(ValueError):
        Agent(HYQL, "nobody", range(5), GROUPS)


def test_generated_history_cf_picks_match_oracle():
    config = cfg.load()
    onto = config.context.ontology()
    for seed in range(3):
        pop = make_population(config, seed)
        target = pop[0]
        team = [u for u in pop if u.team_id == target.team_id and u is not target]
        history = generate_team_history(team, 200, seed, config)
        group_of = {u.user_id: u.team_id for u in pop}
        ag = Agent(HYQL, target.user_id, range(100), group_of, LearningParams(p=0.0),
                   np.random.default_rng(seed)).bootstrap_from_group(history)
        tuples = [(t.user, t.item, t.rating, t.state_id) for t in history]
        users = sorted(group_of)
        for raw in target.situation_schedule[:3]:
            s = situation_of(config, onto, raw)
            state = ag.state_of(s)
            a, src = ag.select_action(s)
            assert src == EXPLORE_CF
            want = oracles.social_action(tuples, users, list(range(100)), group_of, target.user_id,
                                         list(range(100)), state, 5, 10)
            assert a == want
