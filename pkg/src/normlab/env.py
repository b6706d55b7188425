"""The shared multi-actor environment.

A language-mediated world: state is a scene (a symbol sequence), every
registered actor acts once per tick from its own observation of the scene,
and declarative transition rules rewrite the scene and emit sanctions in
response to the joint actions. Everything that happens lands in an
append-only event log, which is the ground truth the metrics and the norm
classifier read.

Rule patterns are token-level: a literal token matches itself, "*" matches
exactly one token, "**" matches any run of tokens (possibly empty). The
first rule whose patterns match a given (scene, action) pair wins for that
action; scenarios must end the rule list with a catch-all or tick() raises
RuleGap.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .actor import Actor, act_cycle, policy_distribution, _fill
from .core import (
    GlobalWorkspace,
    Sanction,
    SeedStream,
    SymbolSeq,
    Valence,
    make_record,
    normalize,
)
from .errors import DuplicateId, RuleGap
from .memory import write


_PATTERN_CACHE: dict[str, tuple[str, ...]] = {}


def pattern_matches(pattern: str, seq: SymbolSeq) -> bool:
    pat = _PATTERN_CACHE.get(pattern)
    if pat is None:
        pat = normalize(pattern).tokens
        _PATTERN_CACHE[pattern] = pat
    toks = seq.tokens

    def match(i: int, j: int) -> bool:
        if i == len(pat):
            return j == len(toks)
        p = pat[i]
        if p == "**":
            return any(match(i + 1, k) for k in range(j, len(toks) + 1))
        if j >= len(toks):
            return False
        if p == "*" or p == toks[j]:
            return match(i + 1, j + 1)
        return False

    return match(0, 0)


@dataclass(frozen=True)
class SanctionClause:
    """Sanction emission attached to a rule.

    trigger defaults to the owning rule's action pattern. Every actor of
    by_role (other than the target) emits the signal; the valence label
    rides along for metrics only and is never shown to actors.
    """

    by_role: str
    signal: str
    valence: Valence = Valence.DISAPPROVE
    trigger: Optional[str] = None


@dataclass(frozen=True)
class TransitionRule:
    name: str = ""
    when_scene: Optional[str] = None
    when_action: Optional[str] = None
    effect: str = "{scene}"
    sanction: Optional[SanctionClause] = None

    def matches(self, scene: SymbolSeq, action: SymbolSeq) -> bool:
        if self.when_scene is not None and not pattern_matches(self.when_scene, scene):
            return False
        if self.when_action is not None and not pattern_matches(self.when_action, action):
            return False
        return True


@dataclass(frozen=True)
class Event:
    kind: str
    tick: int
    data: dict

    def to_json(self) -> str:
        payload = {"kind": self.kind, "tick": self.tick}
        payload.update(self.data)
        return json.dumps(payload, sort_keys=True, ensure_ascii=False)


class LMAE:
    """Linguistic multi-actor environment."""

    def __init__(
        self,
        scene: SymbolSeq,
        rules: Sequence[TransitionRule],
        observation_template: str = "{actor} sees {scene}",
        role_templates: Optional[dict[str, str]] = None,
        witnesses: str | Sequence[str] = "all",
    ):
        if not rules:
            raise ValueError("an environment needs at least one rule")
        self.scene = scene
        self.rules = list(rules)
        self.observation_template = observation_template
        self.role_templates = dict(role_templates or {})
        self.witnesses = witnesses if witnesses == "all" else tuple(witnesses)
        self.actors: dict[str, Actor] = {}
        self.log: list[Event] = []
        self.tick_index = 0
        self._pending: dict[int, list[Actor]] = {}

    def add_actor(self, actor: Actor) -> None:
        if actor.id in self.actors or any(
            a.id == actor.id for pend in self._pending.values() for a in pend
        ):
            raise DuplicateId(f"actor id {actor.id!r} already registered")
        self.actors[actor.id] = actor

    def observation_for(self, actor: Actor) -> SymbolSeq:
        template = self.role_templates.get(actor.role, self.observation_template)
        return normalize(
            _fill(template, {"actor": actor.id, "scene": self.scene.render(), "role": actor.role})
        )

    def witness_ids(self) -> list[str]:
        if self.witnesses == "all":
            return list(self.actors)
        return [w for w in self.witnesses if w in self.actors]

    def first_matching_rule(self, action: SymbolSeq) -> TransitionRule:
        for rule in self.rules:
            if rule.matches(self.scene, action):
                return rule
        raise RuleGap(
            f"no rule matches action {action.render()!r} in scene {self.scene.render()!r}"
        )


def insert_actor(env: LMAE, actor: Actor, at_tick: int) -> LMAE:
    """Schedules an actor to join at the start of at_tick."""
    if at_tick < env.tick_index:
        raise ValueError(f"cannot insert at past tick {at_tick}")
    if actor.id in env.actors or any(
        a.id == actor.id for pend in env._pending.values() for a in pend
    ):
        raise DuplicateId(f"actor id {actor.id!r} already registered")
    env._pending.setdefault(at_tick, []).append(actor)
    return env


def tick(env: LMAE) -> LMAE:
    """Advances the world by one tick.

    Order within a tick: scheduled insertions join, every actor observes,
    every actor acts (all actions are collected before any rule fires),
    rules rewrite the scene action by action in actor order, and sanction
    clauses deliver identical records to every configured witness.
    """
    t = env.tick_index
    for joining in env._pending.pop(t, []):
        env.add_actor(joining)
        env.log.append(Event("insert", t, {"actor": joining.id, "role": joining.role}))

    observations: dict[str, SymbolSeq] = {}
    for actor in env.actors.values():
        obs = env.observation_for(actor)
        observations[actor.id] = obs
        env.log.append(Event("observe", t, {"actor": actor.id, "text": obs.render()}))

    actions: list[tuple[Actor, SymbolSeq]] = []
    for actor in env.actors.values():
        action, bank = act_cycle(actor, observations[actor.id], t)
        actor.bank = bank
        actions.append((actor, action))
        env.log.append(Event("act", t, {"actor": actor.id, "action": action.render()}))

    scene = env.scene
    fired: list[str] = []
    matched: list[tuple[Actor, SymbolSeq, TransitionRule]] = []
    for actor, action in actions:
        rule = env.first_matching_rule(action)
        matched.append((actor, action, rule))
        scene = normalize(
            _fill(
                rule.effect,
                {"scene": scene.render(), "actor": actor.id, "action": action.render()},
            )
        )
        fired.append(rule.name or f"rule{env.rules.index(rule)}")
    env.scene = scene
    env.log.append(Event("transition", t, {"scene": scene.render(), "rules": fired}))

    witness_ids = env.witness_ids()
    for target, action, rule in matched:
        clause = rule.sanction
        if clause is None:
            continue
        trigger = clause.trigger if clause.trigger is not None else rule.when_action
        if trigger is not None and not pattern_matches(trigger, action):
            continue
        signal = normalize(
            _fill(clause.signal, {"actor": target.id, "action": action.render()})
        )
        for sanctioner in env.actors.values():
            if sanctioner.role != clause.by_role or sanctioner.id == target.id:
                continue
            env.log.append(
                Event(
                    "sanction",
                    t,
                    {
                        "by": sanctioner.id,
                        "target": target.id,
                        "action": action.render(),
                        "signal": signal.render(),
                        "valence": clause.valence.value,
                    },
                )
            )
            sanction = Sanction(sanctioner.id, signal, clause.valence)
            for wid in witness_ids:
                witness = env.actors[wid]
                record = make_record(
                    time=t,
                    observer=wid,
                    subject=target.id,
                    observation=observations[target.id],
                    action=action,
                    sanction=sanction,
                )
                witness.bank = write(witness.bank, record)

    env.tick_index = t + 1
    return env


def run(env: LMAE, ticks: int) -> LMAE:
    """Exactly ticks sequential calls to tick()."""
    if ticks < 0:
        raise ValueError("ticks must be >= 0")
    for _ in range(ticks):
        tick(env)
    return env


def write_log(log: Sequence[Event], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in log:
            fh.write(event.to_json() + "\n")


@dataclass(frozen=True)
class JointDistribution:
    """Product distribution over joint action tuples, one slot per actor."""

    candidates: tuple[tuple[SymbolSeq, ...], ...]
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.candidates) != len(self.probs):
            raise ValueError("candidates and probs must align")
        total = sum(self.probs)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"joint mass sums to {total}")

    def prob_of(self, joint: Sequence[SymbolSeq]) -> float:
        key = tuple(joint)
        for cand, p in zip(self.candidates, self.probs):
            if cand == key:
                return p
        raise KeyError(f"joint action not present: {[c.render() for c in joint]}")

    def marginal(self, slot: int) -> dict[SymbolSeq, float]:
        out: dict[SymbolSeq, float] = {}
        for cand, p in zip(self.candidates, self.probs):
            out[cand[slot]] = out.get(cand[slot], 0.0) + p
        return out


def collective_policy(
    actors: Sequence[Actor], workspaces: Sequence[GlobalWorkspace]
) -> JointDistribution:
    """Factorized joint policy: actors select independently, so the joint
    probability of an action tuple is the product of the individual ones."""
    if len(actors) != len(workspaces):
        raise ValueError("one workspace per actor required")
    if not actors:
        raise ValueError("need at least one actor")
    dists = [policy_distribution(a, ws) for a, ws in zip(actors, workspaces)]
    joint_candidates = []
    joint_probs = []
    for combo in itertools.product(*(range(len(d)) for d in dists)):
        joint_candidates.append(tuple(dists[i].candidates[j] for i, j in enumerate(combo)))
        p = 1.0
        for i, j in enumerate(combo):
            p *= dists[i].probs[j]
        joint_probs.append(p)
    total = sum(joint_probs)
    joint_probs = [p / total for p in joint_probs]
    return JointDistribution(tuple(joint_candidates), tuple(joint_probs))
