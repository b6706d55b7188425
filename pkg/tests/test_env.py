"""Environment mechanics: token patterns, tick phases, sanction delivery,
witness bookkeeping, and the factorized joint policy."""

import itertools
import json

import pytest

from normlab.actor import Actor, DecisionLogic, LogicStep, StepKind, deliberate
from normlab.core import SeedStream, SymbolSeq, normalize
from normlab.env import (
    LMAE,
    SanctionClause,
    TransitionRule,
    collective_policy,
    insert_actor,
    pattern_matches,
    run,
    tick,
    write_log,
)
from normlab.errors import DuplicateId, RuleGap
from normlab.memory import MemoryBank
from normlab.pcn import TablePCN

SHARE = normalize("shares the catch")
KEEP = normalize("keeps the catch")

POLICY_ONLY = DecisionLogic(
    "reflex", (LogicStep(StepKind.POLICY, candidates="moves"),)
)


def make_actor(aid, *, weights=None, role="citizen", selection="argmax"):
    return Actor(
        id=aid,
        persona=normalize(f"{aid} the villager"),
        completer=TablePCN(weights or {}),
        bank=MemoryBank(),
        logic=POLICY_ONLY,
        candidate_sets={"moves": (SHARE, KEEP)},
        seed=SeedStream(7).child("actor", aid),
        role=role,
        selection=selection,
    )


def keeper_weights(aid):
    # keyed on the actor's own id, which appears in its observation
    return {(aid, KEEP.render()): 3.0}


def simple_env(actors, rules=None, **kwargs):
    env = LMAE(
        scene=normalize("the village lands the catch"),
        rules=rules
        or [
            TransitionRule(
                name="hoard",
                when_action="keeps the catch",
                sanction=SanctionClause(by_role="citizen", signal="that is not our way"),
            ),
            TransitionRule(name="idle"),
        ],
        **kwargs,
    )
    for a in actors:
        env.add_actor(a)
    return env


# ---------------------------------------------------------------- patterns


def test_pattern_literal_and_star():
    assert pattern_matches("keeps the catch", KEEP)
    assert not pattern_matches("keeps the catch", SHARE)
    assert pattern_matches("* the catch", KEEP)
    assert pattern_matches("* the catch", SHARE)
    assert not pattern_matches("* the catch", normalize("the catch"))


def test_pattern_double_star_matches_any_run():
    assert pattern_matches("**", SymbolSeq())
    assert pattern_matches("**", KEEP)
    assert pattern_matches("** catch", KEEP)
    assert pattern_matches("keeps **", KEEP)
    assert pattern_matches("** the **", KEEP)
    assert not pattern_matches("** banana **", KEEP)


def test_rule_matches_scene_and_action_independently():
    rule = TransitionRule(when_scene="** catch", when_action="keeps **")
    assert rule.matches(normalize("the village lands the catch"), KEEP)
    assert not rule.matches(normalize("a quiet morning"), KEEP)
    assert not rule.matches(normalize("the village lands the catch"), SHARE)
    assert TransitionRule().matches(normalize("anything"), normalize("at all"))


# ------------------------------------------------------------------ ticks


def test_tick_emits_observe_act_transition_in_order():
    env = simple_env([make_actor("v0"), make_actor("v1")])
    tick(env)
    kinds = [e.kind for e in env.log]
    assert kinds == ["observe", "observe", "act", "act", "transition"]
    assert env.tick_index == 1
    observe = env.log[0]
    assert observe.data["text"] == "v0 sees the village lands the catch"


def test_actions_are_collected_before_rules_fire():
    """Both actors act in the same scene even when the first action
    rewrites it."""
    rewrite = TransitionRule(
        name="spoil", when_action="keeps **", effect="the catch is gone"
    )
    env = simple_env(
        [make_actor("v0", weights=keeper_weights("v0")), make_actor("v1")],
        rules=[rewrite, TransitionRule(name="idle")],
    )
    tick(env)
    observed = [e.data["text"] for e in env.log if e.kind == "observe"]
    assert all("lands the catch" in t for t in observed)
    assert env.scene == normalize("the catch is gone")


def test_transition_event_lists_fired_rules_per_action():
    env = simple_env([make_actor("v0", weights=keeper_weights("v0")), make_actor("v1")])
    tick(env)
    transitions = [e for e in env.log if e.kind == "transition"]
    assert len(transitions) == 1
    assert transitions[0].data["rules"] == ["hoard", "idle"]


def test_rule_gap_raises():
    env = simple_env(
        [make_actor("v0")],
        rules=[TransitionRule(name="narrow", when_action="keeps **")],
    )
    with pytest.raises(RuleGap):
        tick(env)


def test_role_templates_shape_observations():
    env = simple_env(
        [make_actor("w0", role="warden")],
        role_templates={"warden": "{actor} watches over the square"},
    )
    tick(env)
    obs = [e for e in env.log if e.kind == "observe"][0]
    assert obs.data["text"] == "w0 watches over the square"


def test_duplicate_ids_rejected():
    env = simple_env([make_actor("v0")])
    with pytest.raises(DuplicateId):
        env.add_actor(make_actor("v0"))
    insert_actor(env, make_actor("nova"), at_tick=2)
    with pytest.raises(DuplicateId):
        insert_actor(env, make_actor("nova"), at_tick=3)
    with pytest.raises(ValueError):
        insert_actor(env, make_actor("late"), at_tick=-1)


def test_insert_actor_joins_at_scheduled_tick():
    env = simple_env([make_actor("v0")])
    insert_actor(env, make_actor("nova"), at_tick=1)
    tick(env)
    assert "nova" not in env.actors
    tick(env)
    assert "nova" in env.actors
    inserts = [e for e in env.log if e.kind == "insert"]
    assert len(inserts) == 1
    assert inserts[0].tick == 1
    assert inserts[0].data == {"actor": "nova", "role": "citizen"}


# -------------------------------------------------------------- sanctions


def test_sanction_events_one_per_sanctioner():
    actors = [
        make_actor("v0", weights=keeper_weights("v0")),
        make_actor("v1"),
        make_actor("v2"),
    ]
    env = simple_env(actors)
    tick(env)
    sanctions = [e for e in env.log if e.kind == "sanction"]
    assert {e.data["by"] for e in sanctions} == {"v1", "v2"}
    assert all(e.data["target"] == "v0" for e in sanctions)
    assert all(e.data["signal"] == "that is not our way" for e in sanctions)
    assert all(e.data["valence"] == "disapprove" for e in sanctions)


def test_sanction_records_reach_every_witness_with_targets_view():
    actors = [
        make_actor("v0", weights=keeper_weights("v0")),
        make_actor("v1"),
        make_actor("v2"),
    ]
    env = simple_env(actors)
    tick(env)
    target_obs = normalize("v0 sees the village lands the catch")
    for actor in env.actors.values():
        sanction_records = [r for r in actor.bank.records if r.sanction is not None]
        assert len(sanction_records) == 2
        for r in sanction_records:
            assert r.subject == "v0"
            assert r.observation == target_obs
            assert r.action == KEEP
            assert r.observer == actor.id


def test_witness_list_restricts_record_delivery():
    actors = [
        make_actor("v0", weights=keeper_weights("v0")),
        make_actor("v1"),
        make_actor("v2"),
    ]
    env = simple_env(actors, witnesses=["v2"])
    tick(env)
    assert [r for r in env.actors["v1"].bank.records if r.sanction] == []
    assert len([r for r in env.actors["v2"].bank.records if r.sanction]) == 2
    # the log still carries every sanction event
    assert len([e for e in env.log if e.kind == "sanction"]) == 2


def test_sanction_trigger_can_narrow_the_rule():
    clause = SanctionClause(
        by_role="citizen", signal="no", trigger="keeps the banana"
    )
    rules = [
        TransitionRule(name="watch", when_action="keeps **", sanction=clause),
        TransitionRule(name="idle"),
    ]
    env = simple_env([make_actor("v0", weights=keeper_weights("v0")), make_actor("v1")], rules=rules)
    tick(env)
    assert [e for e in env.log if e.kind == "sanction"] == []


def test_nobody_sanctions_themselves():
    env = simple_env([make_actor("v0", weights=keeper_weights("v0"))])
    tick(env)
    assert [e for e in env.log if e.kind == "sanction"] == []


def test_run_advances_exactly_n_ticks():
    env = simple_env([make_actor("v0")])
    run(env, 5)
    assert env.tick_index == 5
    assert len([e for e in env.log if e.kind == "transition"]) == 5
    with pytest.raises(ValueError):
        run(env, -1)


def test_write_log_is_one_json_object_per_line(tmp_path):
    env = simple_env([make_actor("v0")])
    run(env, 2)
    path = tmp_path / "events.jsonl"
    write_log(env.log, str(path))
    lines = path.read_text().splitlines()
    assert len(lines) == len(env.log)
    first = json.loads(lines[0])
    assert first["kind"] == "observe"
    assert first["tick"] == 0


# -------------------------------------------------- collective policy


def test_collective_policy_matches_enumeration_oracle():
    """Independent selection means the joint probability of an action
    tuple is the product of the marginals. The oracle below recomputes
    the whole joint table from the individual policy distributions."""
    actors = [
        make_actor("v0", weights={("v0", KEEP.render()): 1.5}),
        make_actor("v1", weights={("v1", SHARE.render()): 0.4}),
        make_actor("v2"),
    ]
    env = simple_env(actors)
    workspaces = [
        deliberate(a, env.observation_for(a), tick=0) for a in actors
    ]
    joint = collective_policy(actors, workspaces)

    from normlab.actor import policy_distribution

    dists = [policy_distribution(a, ws) for a, ws in zip(actors, workspaces)]
    expected = {}
    for combo in itertools.product(*[range(len(d)) for d in dists]):
        key = tuple(dists[i].candidates[j] for i, j in enumerate(combo))
        p = 1.0
        for i, j in enumerate(combo):
            p *= dists[i].probs[j]
        expected[key] = p

    assert len(joint.candidates) == 2**3
    total = 0.0
    for cand, p in zip(joint.candidates, joint.probs):
        assert p == pytest.approx(expected[cand], abs=1e-12)
        total += p
    assert total == pytest.approx(1.0, abs=1e-12)


def test_collective_policy_marginals_recover_individuals():
    actors = [make_actor("v0", weights={("v0", KEEP.render()): 2.0}), make_actor("v1")]
    env = simple_env(actors)
    workspaces = [deliberate(a, env.observation_for(a), tick=0) for a in actors]
    joint = collective_policy(actors, workspaces)

    from normlab.actor import policy_distribution

    d0 = policy_distribution(actors[0], workspaces[0])
    marg = joint.marginal(0)
    assert marg[KEEP] == pytest.approx(d0.prob_of(KEEP), abs=1e-12)


def test_collective_policy_validates_inputs():
    a = make_actor("v0")
    ws = deliberate(a, normalize("v0 sees x"), 0)
    with pytest.raises(ValueError):
        collective_policy([a], [])
    with pytest.raises(ValueError):
        collective_policy([], [])
    assert collective_policy([a], [ws]).prob_of([KEEP]) > 0
