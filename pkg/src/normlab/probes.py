"""Formal probes over behavior distributions, memory, and event logs.

These operationalize three escalating questions about a population:

  - convention: is a behavior reproduced from precedent? Tested by
    counterfactually editing memory and checking that the behavior tracks
    the edit (more precedent for the alternative, more probability on it).
  - sanction: does a signal appended to a context flip which action leads?
  - norm: is there a sanctioning pattern (rate gap between two behaviors),
    is the sanctioning itself conventional, and does it extend to strangers?

Probes are pure: they never mutate an actor's bank or table, and repeated
calls with the same seed return identical reports.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .actor import Actor, DecisionLogic, LogicStep, StepKind, deliberate, policy_distribution
from .core import Sanction, SeedStream, SymbolSeq, Valence, make_record, normalize
from .env import Event
from .errors import (
    CandidateMismatch,
    InsufficientData,
    SimilarityBackendMissing,
)
from .memory import MemoryBank
from .pcn import CompletionDistribution, PatternCompleter, score


def kl_divergence(p: CompletionDistribution, q: CompletionDistribution) -> float:
    """KL(p || q) in nats; both must cover the same candidate set."""
    if set(p.candidates) != set(q.candidates):
        raise CandidateMismatch("distributions cover different candidate sets")
    q_by_candidate = dict(zip(q.candidates, q.probs))
    return sum(
        pi * math.log(pi / q_by_candidate[c]) for c, pi in zip(p.candidates, p.probs)
    )


def total_variation(p: CompletionDistribution, q: CompletionDistribution) -> float:
    if set(p.candidates) != set(q.candidates):
        raise CandidateMismatch("distributions cover different candidate sets")
    q_by_candidate = dict(zip(q.candidates, q.probs))
    return 0.5 * sum(
        abs(pi - q_by_candidate[c]) for c, pi in zip(p.candidates, p.probs)
    )


def substitute(context: SymbolSeq, u: SymbolSeq, v: SymbolSeq) -> SymbolSeq:
    """Replaces every non-overlapping occurrence of u's token run with v's,
    scanning left to right."""
    if not u.tokens:
        raise ValueError("cannot substitute an empty token run")
    out: list[str] = []
    toks = context.tokens
    n = len(u.tokens)
    i = 0
    while i < len(toks):
        if toks[i : i + n] == u.tokens:
            out.extend(v.tokens)
            i += n
        else:
            out.append(toks[i])
            i += 1
    return SymbolSeq(tuple(out))


def epsilon_similar(
    completer: PatternCompleter,
    context: SymbolSeq,
    u: SymbolSeq,
    v: SymbolSeq,
    epsilon: float,
    candidates: Sequence[SymbolSeq],
) -> tuple[bool, float]:
    """Whether swapping u for v inside the context leaves the completion
    distribution within epsilon KL of the original."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    base = score(completer, context, candidates)
    swapped = score(completer, substitute(context, u, v), candidates)
    kl = kl_divergence(base, swapped)
    return kl < epsilon, kl


def _utterances_similar(
    completer: PatternCompleter,
    context: SymbolSeq,
    x: SymbolSeq,
    y: SymbolSeq,
    epsilon: float,
    candidates: Sequence[SymbolSeq],
) -> bool:
    """Is utterance x interchangeable with y in this context? Evaluated by
    appending x to the context and substituting it for y."""
    if x == y:
        return True
    similar, _ = epsilon_similar(completer, context + x, x, y, epsilon, candidates)
    return similar


@dataclass(frozen=True)
class EditSpec:
    """What to rewrite in a bank: records matching (observation, from_action)
    in the given context, a fraction of which get their action replaced."""

    observation: SymbolSeq
    context: SymbolSeq
    from_action: SymbolSeq
    to_action: SymbolSeq
    fraction: float
    matcher: str = "exact-field"
    epsilon: float = 0.1
    seed: Optional[SeedStream] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must lie in [0, 1]")
        if self.matcher not in ("exact-field", "epsilon-similar"):
            raise ValueError(f"unknown matcher {self.matcher!r}")


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def matching_indices(
    bank: MemoryBank,
    spec: EditSpec,
    probe: Optional[PatternCompleter] = None,
    probe_candidates: Optional[Sequence[SymbolSeq]] = None,
) -> list[int]:
    if spec.matcher == "exact-field":
        return [
            i
            for i, r in enumerate(bank.records)
            if r.observation == spec.observation and r.action == spec.from_action
        ]
    if probe is None or not probe_candidates:
        raise SimilarityBackendMissing(
            "epsilon-similar matching needs a probe completer and candidates"
        )
    hits = []
    for i, r in enumerate(bank.records):
        obs_ok = _utterances_similar(
            probe, spec.context, r.observation, spec.observation, spec.epsilon, probe_candidates
        )
        act_ok = obs_ok and _utterances_similar(
            probe, spec.context, r.action, spec.from_action, spec.epsilon, probe_candidates
        )
        if obs_ok and act_ok:
            hits.append(i)
    return hits


def _apply_edit(bank: MemoryBank, indices: Sequence[int], to_action: SymbolSeq) -> MemoryBank:
    chosen = set(indices)
    records = []
    for i, r in enumerate(bank.records):
        if i in chosen:
            records.append(
                make_record(r.time, r.observer, r.subject, r.observation, to_action, r.sanction)
            )
        else:
            records.append(r)
    return replace(bank, records=tuple(records))


def counterfactual_edit(
    bank: MemoryBank,
    spec: EditSpec,
    probe: Optional[PatternCompleter] = None,
    probe_candidates: Optional[Sequence[SymbolSeq]] = None,
) -> MemoryBank:
    """Returns a new bank with round-half-up(fraction * |matches|) of the
    matching records rewritten to the target action. The input bank is
    untouched; which records get rewritten is a seeded shuffle."""
    if spec.matcher == "exact-field":
        if spec.to_action == spec.from_action:
            raise ValueError("target action must differ from the edited action")
    else:
        if probe is None or not probe_candidates:
            raise SimilarityBackendMissing(
                "epsilon-similar matching needs a probe completer and candidates"
            )
        if _utterances_similar(
            probe, spec.context, spec.to_action, spec.from_action, spec.epsilon, probe_candidates
        ):
            raise ValueError("target action is epsilon-similar to the edited action")
    hits = matching_indices(bank, spec, probe, probe_candidates)
    n = _round_half_up(spec.fraction * len(hits))
    order = list(hits)
    (spec.seed or SeedStream(0)).child("edit").rng().shuffle(order)
    return _apply_edit(bank, order[:n], spec.to_action)


@dataclass(frozen=True)
class SensitivityReport:
    """Expected policy behavior across an edit-fraction grid."""

    f_grid: tuple[float, ...]
    prob_from: tuple[float, ...]
    prob_to: tuple[float, ...]
    distributions: tuple[CompletionDistribution, ...]
    matched: int
    method: str
    monotone: bool
    verdict: bool

    @property
    def delta_from(self) -> float:
        return self.prob_from[-1] - self.prob_from[0]

    @property
    def delta_to(self) -> float:
        return self.prob_to[-1] - self.prob_to[0]

    def to_json_dict(self) -> dict:
        return {
            "f_grid": list(self.f_grid),
            "prob_from": list(self.prob_from),
            "prob_to": list(self.prob_to),
            "distributions": [d.as_dict() for d in self.distributions],
            "matched": self.matched,
            "method": self.method,
            "monotone": self.monotone,
            "delta_from": self.delta_from,
            "delta_to": self.delta_to,
            "verdict": self.verdict,
        }


def pipeline_distribution(
    actor: Actor,
    observation: SymbolSeq,
    bank: Optional[MemoryBank] = None,
    extra_context: Optional[SymbolSeq] = None,
    seed: Optional[SeedStream] = None,
) -> CompletionDistribution:
    """Runs the actor's deliberation on a bank view and returns the policy
    distribution, without sampling an action or touching actor state."""
    view = replace(actor, bank=bank if bank is not None else actor.bank)
    probe_seed = seed if seed is not None else actor.seed.child("probe")
    workspace = deliberate(view, observation, view.bank.last_time, probe_seed, extra_context)
    return policy_distribution(view, workspace)


def _mean_distribution(dists: Sequence[CompletionDistribution]) -> CompletionDistribution:
    first = dists[0]
    mean = [
        sum(d.probs[i] for d in dists) / len(dists) for i in range(len(first.probs))
    ]
    return CompletionDistribution.from_masses(first.candidates, mean)


MONOTONE_TOL = 1e-9


def convention_sensitivity_contextfree(
    actor: Actor,
    observation: SymbolSeq,
    from_action: SymbolSeq,
    to_action: SymbolSeq,
    matcher: str = "exact-field",
    epsilon: float = 0.1,
    probe: Optional[PatternCompleter] = None,
    probe_candidates: Optional[Sequence[SymbolSeq]] = None,
    seed: Optional[SeedStream] = None,
) -> SensitivityReport:
    """Full-replacement test: rewrite every matching precedent and require
    the behavior to strictly follow (from_action down, to_action up)."""
    spec = EditSpec(
        observation=observation,
        context=observation,
        from_action=from_action,
        to_action=to_action,
        fraction=1.0,
        matcher=matcher,
        epsilon=epsilon,
        seed=seed,
    )
    hits = matching_indices(actor.bank, spec, probe, probe_candidates)
    base = pipeline_distribution(actor, observation, seed=seed)
    edited_bank = counterfactual_edit(actor.bank, spec, probe, probe_candidates)
    edited = pipeline_distribution(actor, observation, bank=edited_bank, seed=seed)
    prob_from = (base.prob_of(from_action), edited.prob_of(from_action))
    prob_to = (base.prob_of(to_action), edited.prob_of(to_action))
    verdict = prob_from[1] < prob_from[0] and prob_to[1] > prob_to[0]
    return SensitivityReport(
        f_grid=(0.0, 1.0),
        prob_from=prob_from,
        prob_to=prob_to,
        distributions=(base, edited),
        matched=len(hits),
        method="full-replacement",
        monotone=prob_to[1] >= prob_to[0] - MONOTONE_TOL,
        verdict=verdict,
    )


EXACT_ENUMERATION_LIMIT = 8
DEFAULT_F_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


def convention_sensitivity_contextual(
    actor: Actor,
    context: SymbolSeq,
    observation: SymbolSeq,
    from_action: SymbolSeq,
    to_action: SymbolSeq,
    f_grid: Sequence[float] = DEFAULT_F_GRID,
    matcher: str = "exact-field",
    epsilon: float = 0.1,
    method: str = "auto",
    shuffles: int = 32,
    probe: Optional[PatternCompleter] = None,
    probe_candidates: Optional[Sequence[SymbolSeq]] = None,
    seed: Optional[SeedStream] = None,
) -> SensitivityReport:
    """Graded test: expected probability of the target action must be
    nondecreasing in the fraction of precedent rewritten, and the endpoints
    must satisfy the strict full-replacement condition.

    The expectation at each fraction is over which records get rewritten:
    exact subset enumeration up to EXACT_ENUMERATION_LIMIT matches, a
    seeded 32-shuffle Monte Carlo estimate beyond that.
    """
    grid = tuple(float(f) for f in f_grid)
    if list(grid) != sorted(grid) or len(set(grid)) != len(grid):
        raise ValueError("f grid must be strictly increasing")
    if not grid or grid[0] != 0.0 or grid[-1] != 1.0:
        raise ValueError("f grid must start at 0 and end at 1")
    if method not in ("auto", "exact", "montecarlo"):
        raise ValueError(f"unknown method {method!r}")
    spec = EditSpec(
        observation=observation,
        context=context,
        from_action=from_action,
        to_action=to_action,
        fraction=1.0,
        matcher=matcher,
        epsilon=epsilon,
        seed=seed,
    )
    hits = matching_indices(actor.bank, spec, probe, probe_candidates)
    if method == "auto":
        method = "exact" if len(hits) <= EXACT_ENUMERATION_LIMIT else "montecarlo"
    base_seed = (seed or actor.seed).child("contextual")

    def eval_subset(indices: Sequence[int]) -> CompletionDistribution:
        bank = _apply_edit(actor.bank, indices, to_action)
        return pipeline_distribution(
            actor, observation, bank=bank, extra_context=context, seed=base_seed
        )

    per_point: list[CompletionDistribution] = []
    for fi, f in enumerate(grid):
        n = _round_half_up(f * len(hits))
        if n == 0:
            per_point.append(eval_subset(()))
            continue
        if n == len(hits):
            per_point.append(eval_subset(hits))
            continue
        if method == "exact":
            dists = [eval_subset(combo) for combo in itertools.combinations(hits, n)]
        else:
            dists = []
            for s in range(shuffles):
                order = list(hits)
                base_seed.child("f", fi, "shuffle", s).rng().shuffle(order)
                dists.append(eval_subset(order[:n]))
        per_point.append(_mean_distribution(dists))

    prob_from = tuple(d.prob_of(from_action) for d in per_point)
    prob_to = tuple(d.prob_of(to_action) for d in per_point)
    monotone = all(
        prob_to[i + 1] >= prob_to[i] - MONOTONE_TOL for i in range(len(grid) - 1)
    )
    endpoints_strict = prob_from[-1] < prob_from[0] and prob_to[-1] > prob_to[0]
    return SensitivityReport(
        f_grid=grid,
        prob_from=prob_from,
        prob_to=prob_to,
        distributions=tuple(per_point),
        matched=len(hits),
        method=method,
        monotone=monotone,
        verdict=monotone and endpoints_strict,
    )


def sanction_test(
    completer: PatternCompleter,
    context: SymbolSeq,
    signal: SymbolSeq,
    promoted: SymbolSeq,
    demoted: SymbolSeq,
) -> bool:
    """True iff the demoted action leads in the bare context and trails
    once the signal is appended to it."""
    base = score(completer, context, (promoted, demoted))
    shifted = score(completer, context + signal, (promoted, demoted))
    verdict = (
        base.prob_of(demoted) > base.prob_of(promoted)
        and shifted.prob_of(demoted) < shifted.prob_of(promoted)
    )
    if __debug__:
        p_dem_before = score(completer, context, (promoted, demoted)).prob_of(demoted)
        p_pro_before = score(completer, context, (promoted, demoted)).prob_of(promoted)
        p_dem_after = score(completer, context + signal, (promoted, demoted)).prob_of(demoted)
        p_pro_after = score(completer, context + signal, (promoted, demoted)).prob_of(promoted)
        assert verdict == (
            p_dem_before > p_pro_before and p_dem_after < p_pro_after
        ), "sanction_test disagrees with its four-score definition"
    return verdict


@dataclass(frozen=True)
class SanctionSensitivityReport:
    prob_before: float
    prob_after: float
    injected: int
    verdict: bool

    def to_json_dict(self) -> dict:
        return {
            "prob_before": self.prob_before,
            "prob_after": self.prob_after,
            "injected": self.injected,
            "verdict": self.verdict,
        }


def sanction_sensitivity(
    actor: Actor,
    context: SymbolSeq,
    signal: SymbolSeq,
    action: SymbolSeq,
    injected: int = 3,
    seed: Optional[SeedStream] = None,
) -> SanctionSensitivityReport:
    """Does witnessing someone unknown get sanctioned for an action make
    the actor less likely to take it? Injects records of an unknown subject
    taking the action and being sanctioned, then compares the pipeline
    distribution before and after."""
    if injected < 1:
        raise ValueError("must inject at least one record")
    base = pipeline_distribution(actor, context, seed=seed)
    bank = actor.bank
    records = bank.records
    when = bank.last_time
    for _ in range(injected):
        records = records + (
            make_record(
                time=when,
                observer=actor.id,
                subject="unknown",
                observation=context,
                action=action,
                sanction=Sanction(by=actor.id, signal=signal),
            ),
        )
    injected_bank = replace(bank, records=records)
    after = pipeline_distribution(actor, context, bank=injected_bank, seed=seed)
    verdict = after.prob_of(action) < base.prob_of(action)
    return SanctionSensitivityReport(
        prob_before=base.prob_of(action),
        prob_after=after.prob_of(action),
        injected=injected,
        verdict=verdict,
    )


@dataclass(frozen=True)
class NormThresholds:
    rate_gap: float = 0.3
    conventionality: float = 0.6
    scope: float = 0.5
    min_ticks: int = 50
    sample_size: int = 3
    silent_action: str = "stays silent"
    f_grid: tuple[float, ...] = (0.0, 0.5, 1.0)
    retrieval_k: int = 4


@dataclass(frozen=True)
class NormReport:
    verdict: str
    favored: Optional[str]
    gap: float
    rates: dict
    conventionality_fraction: Optional[float]
    stranger_fraction: Optional[float]
    sanction_events: int
    notes: str

    def to_json_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "favored": self.favored,
            "gap": self.gap,
            "rates": self.rates,
            "conventionality_fraction": self.conventionality_fraction,
            "stranger_fraction": self.stranger_fraction,
            "sanction_events": self.sanction_events,
            "notes": self.notes,
        }


def _anonymize(seq: SymbolSeq, ids: set[str]) -> SymbolSeq:
    return SymbolSeq(tuple("someone" if t in ids else t for t in seq.tokens))


def _knows(bank: MemoryBank, other: str, before: int) -> bool:
    for r in bank.records:
        if r.time >= before:
            break
        if r.subject == other or (r.sanction is not None and r.sanction.by == other):
            return True
    return False


def classify_norm(
    log: Sequence[Event],
    population: Sequence[Actor],
    context: SymbolSeq,
    action_a: SymbolSeq,
    action_b: SymbolSeq,
    thresholds: NormThresholds = NormThresholds(),
) -> NormReport:
    """Three-stage norm detection over a finished run.

    Stage 1 estimates conditional sanction rates for the two behaviors in
    matching contexts and requires a gap of at least thresholds.rate_gap.
    Stage 2 checks the sanctioning itself is conventional: sampled
    sanctioners must show contextual convention sensitivity on their own
    sanctioning behavior. Stage 3 requires at least the scope threshold of
    sanction events to hold between strangers (no prior interaction in
    either party's bank). All three pass for a normative verdict.
    """
    ticks = max((e.tick for e in log), default=-1) + 1
    if ticks < thresholds.min_ticks:
        raise InsufficientData(
            f"log covers {ticks} ticks; classification needs {thresholds.min_ticks}"
        )
    ids = {a.id for a in population}
    actors_by_id = {a.id: a for a in population}
    target_context = _anonymize(context, ids)

    observed: dict[tuple[int, str], SymbolSeq] = {}
    for e in log:
        if e.kind == "observe":
            observed[(e.tick, e.data["actor"])] = normalize(e.data["text"])

    def context_matches(tick: int, actor_id: str) -> bool:
        obs = observed.get((tick, actor_id))
        return obs is not None and _anonymize(obs, ids) == target_context

    occurrences = {action_a.render(): 0, action_b.render(): 0}
    for e in log:
        if e.kind != "act":
            continue
        if e.data["action"] in occurrences and context_matches(e.tick, e.data["actor"]):
            occurrences[e.data["action"]] += 1

    sanctions: list[Event] = [e for e in log if e.kind == "sanction"]
    approvals = Counter()
    disapprovals = Counter()
    relevant_events: dict[str, list[Event]] = {
        action_a.render(): [],
        action_b.render(): [],
    }
    for e in sanctions:
        acted = e.data["action"]
        if acted not in occurrences or not context_matches(e.tick, e.data["target"]):
            continue
        relevant_events[acted].append(e)
        if e.data["valence"] == Valence.APPROVE.value:
            approvals[acted] += 1
        elif e.data["valence"] == Valence.DISAPPROVE.value:
            disapprovals[acted] += 1

    def rate(counter: Counter, action: str) -> float:
        n = occurrences[action]
        return counter[action] / n if n else 0.0

    a_key, b_key = action_a.render(), action_b.render()
    support_a = rate(disapprovals, b_key) + rate(approvals, a_key)
    support_b = rate(disapprovals, a_key) + rate(approvals, b_key)
    gap = support_a - support_b
    rates = {
        "occurrences": dict(occurrences),
        "approvals": dict(approvals),
        "disapprovals": dict(disapprovals),
        "support_a": support_a,
        "support_b": support_b,
    }

    if abs(gap) < thresholds.rate_gap:
        return NormReport(
            "not-normative", None, gap, rates, None, None, len(sanctions),
            "sanction-rate gap below threshold",
        )
    favored, disfavored = (action_a, action_b) if gap > 0 else (action_b, action_a)
    enforcement = relevant_events[disfavored.render()]
    if not enforcement:
        return NormReport(
            "not-normative", None, gap, rates, None, None, len(sanctions),
            "no enforcement events against the disfavored behavior",
        )

    sanctioner_ids: list[str] = []
    for e in enforcement:
        if e.data["by"] not in sanctioner_ids:
            sanctioner_ids.append(e.data["by"])
    sampled = sanctioner_ids[: thresholds.sample_size]
    silent = normalize(thresholds.silent_action)
    passed = 0
    for sid in sampled:
        sanctioner = actors_by_id.get(sid)
        if sanctioner is None:
            continue
        view_obs = normalize(f"someone did {disfavored.render()}")
        view_records = []
        signals = Counter()
        for r in sanctioner.bank.records:
            if (
                r.sanction is not None
                and r.sanction.by == sid
                and r.action == disfavored
            ):
                view_records.append(
                    make_record(r.time, sid, sid, view_obs, r.sanction.signal)
                )
                signals[r.sanction.signal] += 1
        if not view_records:
            continue
        modal_signal = signals.most_common(1)[0][0]
        view_actor = Actor(
            id=sid,
            persona=sanctioner.persona,
            completer=sanctioner.completer,
            bank=MemoryBank(tuple(view_records)),
            logic=DecisionLogic(
                "sanction-view",
                (
                    LogicStep(StepKind.RETRIEVE, k=thresholds.retrieval_k),
                    LogicStep(StepKind.POLICY, candidates="responses"),
                ),
            ),
            candidate_sets={"responses": (modal_signal, silent)},
            seed=sanctioner.seed.child("norm-probe"),
            selection="argmax",
        )
        report = convention_sensitivity_contextual(
            view_actor,
            context=SymbolSeq(),
            observation=view_obs,
            from_action=modal_signal,
            to_action=silent,
            f_grid=thresholds.f_grid,
        )
        if report.verdict:
            passed += 1
    conv_fraction = passed / len(sampled) if sampled else 0.0
    if conv_fraction < thresholds.conventionality:
        return NormReport(
            "not-normative", None, gap, rates, conv_fraction, None, len(sanctions),
            "sanctioning behavior is not itself conventional",
        )

    strangers = 0
    for e in enforcement:
        by, target = e.data["by"], e.data["target"]
        by_bank = actors_by_id[by].bank if by in actors_by_id else MemoryBank()
        target_bank = actors_by_id[target].bank if target in actors_by_id else MemoryBank()
        acquainted = _knows(by_bank, target, e.tick) or _knows(target_bank, by, e.tick)
        if not acquainted:
            strangers += 1
    stranger_fraction = strangers / len(enforcement)
    if stranger_fraction < thresholds.scope:
        return NormReport(
            "not-normative", None, gap, rates, conv_fraction, stranger_fraction,
            len(sanctions), "enforcement does not extend to strangers",
        )
    return NormReport(
        "normative", favored.render(), gap, rates, conv_fraction, stranger_fraction,
        len(sanctions), "all three stages passed",
    )
