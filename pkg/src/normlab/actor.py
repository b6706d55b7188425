"""Generative actors.

An actor turns an observation into an action by running a decision logic:
an ordered list of steps that frame the current workspace into a context,
feed it to the actor's completion backend, and append the result back into
the workspace. The final step is always a policy step whose completion is
the action. Memory retrieval injects precedent renderings as workspace
entries; that injection is the only channel through which past episodes
influence the next completion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .core import Assembly, GlobalWorkspace, Role, SeedStream, SymbolSeq, make_record, normalize
from .errors import FramingError, UnknownCandidateSet
from .memory import JACCARD, MemoryBank, SimilarityMetric, retrieve_top_k, write
from .pcn import CompletionDistribution, PatternCompleter, sample, score

DEFAULT_STEP_TEMPLATE = "{observation}\n{assemblies}\nquestion: {question}\nanswer:"
DEFAULT_QUERY_TEMPLATE = "{observation}"
DEFAULT_POLICY_QUESTION = "what does {persona} do next?"


class _Slots(dict):
    def __missing__(self, key: str) -> str:
        raise FramingError(f"unresolvable framing slot {{{key}}}")


def _fill(template: str, slots: dict[str, str]) -> str:
    try:
        return template.format_map(_Slots(slots))
    except (ValueError, IndexError) as exc:
        raise FramingError(f"malformed framing template {template!r}: {exc}") from exc


@dataclass(frozen=True)
class FramingFunction:
    """A text template over workspace slots, normalized after filling.

    Available slots: {observation} (stage-0 entry), {assemblies} (all
    intermediate entries as "- ..." lines in stage order), {persona},
    {query} (the most recent entry), and {question} (step question, which
    may itself use the other slots). Referencing anything else raises
    FramingError at render time.
    """

    template: str = DEFAULT_STEP_TEMPLATE

    def render(
        self,
        workspace: GlobalWorkspace,
        persona: SymbolSeq,
        question: str = "",
    ) -> SymbolSeq:
        entries = workspace.assemblies()
        slots = {
            "observation": workspace.observation.render(),
            "assemblies": "\n".join(f"- {a.content.render()}" for a in entries),
            "persona": persona.render(),
            "query": (entries[-1].content if entries else workspace.observation).render(),
        }
        slots["question"] = _fill(question, dict(slots)) if question else ""
        return normalize(_fill(self.template, slots))


class StepKind(Enum):
    SUMMARIZE = "summarize"
    RETRIEVE = "retrieve"
    POLICY = "policy"


@dataclass(frozen=True)
class LogicStep:
    kind: StepKind
    question: str = ""
    template: Optional[str] = None
    candidates: Optional[str] = None
    k: int = 1

    def framing(self) -> FramingFunction:
        if self.template is not None:
            return FramingFunction(self.template)
        if self.kind is StepKind.RETRIEVE:
            return FramingFunction(DEFAULT_QUERY_TEMPLATE)
        return FramingFunction(DEFAULT_STEP_TEMPLATE)

    def __post_init__(self) -> None:
        if self.kind in (StepKind.SUMMARIZE, StepKind.POLICY) and not self.candidates:
            raise ValueError(f"{self.kind.value} steps need a candidate set name")
        if self.kind is StepKind.RETRIEVE and self.k < 0:
            raise ValueError("retrieve step k must be >= 0")


@dataclass(frozen=True)
class DecisionLogic:
    """Named step list; exactly one policy step, and it comes last."""

    name: str
    steps: tuple[LogicStep, ...]

    def __post_init__(self) -> None:
        if not self.steps:
            raise ValueError("a decision logic needs at least one step")
        policy_positions = [
            i for i, s in enumerate(self.steps) if s.kind is StepKind.POLICY
        ]
        if policy_positions != [len(self.steps) - 1]:
            raise ValueError("exactly one policy step is allowed, in final position")


# Two stock logics. The first walks options and expected consequences; the
# second reproduces identity-and-situation pattern matching. Question texts
# are fixed wording and load-bearing for tests; do not reword them.
LOGIC_A = DecisionLogic(
    "consequentialist",
    (
        LogicStep(StepKind.SUMMARIZE, "What are my options in this situation?", candidates="options"),
        LogicStep(
            StepKind.SUMMARIZE,
            "For each option, what consequences would follow if I were to select it?",
            candidates="consequences",
        ),
        LogicStep(StepKind.POLICY, "Which option has the highest expected value?", candidates="actions"),
    ),
)

LOGIC_B = DecisionLogic(
    "identity",
    (
        LogicStep(StepKind.SUMMARIZE, "What kind of situation is this?", candidates="situations"),
        LogicStep(StepKind.SUMMARIZE, "What kind of person am I?", candidates="identities"),
        LogicStep(
            StepKind.POLICY,
            "What does a person such as I do in a situation such as this?",
            candidates="actions",
        ),
    ),
)


@dataclass
class Actor:
    id: str
    persona: SymbolSeq
    completer: PatternCompleter
    bank: MemoryBank
    logic: DecisionLogic
    candidate_sets: dict[str, tuple[SymbolSeq, ...]]
    seed: SeedStream
    role: str = "citizen"
    retrieval_enabled: bool = True
    selection: str = "sample"
    retrieval_metric: SimilarityMetric = field(default_factory=lambda: JACCARD)

    def __post_init__(self) -> None:
        if self.selection not in ("sample", "argmax"):
            raise ValueError(f"unknown selection mode {self.selection!r}")

    def candidates_named(self, name: str) -> tuple[SymbolSeq, ...]:
        try:
            return self.candidate_sets[name]
        except KeyError:
            raise UnknownCandidateSet(
                f"actor {self.id!r} declares no candidate set {name!r}"
            ) from None

    @property
    def policy_step(self) -> LogicStep:
        return self.logic.steps[-1]


def _pick(
    actor: Actor,
    dist: CompletionDistribution,
    context: SymbolSeq,
    candidates: Sequence[SymbolSeq],
    seed: SeedStream,
) -> SymbolSeq:
    if actor.selection == "argmax":
        return dist.argmax()
    return sample(actor.completer, context, candidates, seed)


def step_assembly(
    actor: Actor, workspace: GlobalWorkspace, step: LogicStep, seed: SeedStream
) -> Optional[Assembly]:
    """Runs one non-policy step, appending what it produced.

    Returns the appended assembly (the last one, for retrieve steps with
    k > 1) or None when the step produced nothing, e.g. retrieval while
    retrieval is disabled or over an empty bank.
    """
    if step.kind is StepKind.POLICY:
        raise ValueError("policy steps run through decide()")
    if step.kind is StepKind.RETRIEVE:
        if not actor.retrieval_enabled:
            return None
        query = step.framing().render(workspace, actor.persona, step.question)
        hits = retrieve_top_k(actor.bank, query, step.k, actor.retrieval_metric)
        appended = None
        for record in hits:
            appended = workspace.append(record.rendering, Role.RETRIEVED, "retrieve")
        return appended
    context = step.framing().render(workspace, actor.persona, step.question)
    candidates = actor.candidates_named(step.candidates or "")
    dist = score(actor.completer, context, candidates)
    content = _pick(actor, dist, context, candidates, seed)
    return workspace.append(content, Role.PREDICTED, "summarize")


def policy_context(actor: Actor, workspace: GlobalWorkspace) -> SymbolSeq:
    step = actor.policy_step
    question = step.question or DEFAULT_POLICY_QUESTION
    return step.framing().render(workspace, actor.persona, question)


def policy_distribution(
    actor: Actor, workspace: GlobalWorkspace
) -> CompletionDistribution:
    """The action distribution the policy step would draw from."""
    step = actor.policy_step
    candidates = actor.candidates_named(step.candidates or "")
    return score(actor.completer, policy_context(actor, workspace), candidates)


def decide(actor: Actor, workspace: GlobalWorkspace, seed: SeedStream) -> Assembly:
    """Runs the policy step: selects an action and closes the workspace."""
    step = actor.policy_step
    candidates = actor.candidates_named(step.candidates or "")
    context = policy_context(actor, workspace)
    dist = score(actor.completer, context, candidates)
    action = _pick(actor, dist, context, candidates, seed)
    return workspace.append(action, Role.ACTION, "policy")


def deliberate(
    actor: Actor,
    observation: SymbolSeq,
    tick: int,
    seed: Optional[SeedStream] = None,
    extra_context: Optional[SymbolSeq] = None,
) -> GlobalWorkspace:
    """Runs every non-policy step on a fresh workspace and returns it open.

    extra_context, when given, is injected right after the observation;
    probes use it to condition behavior on a situation description.
    """
    seed = seed if seed is not None else actor.seed.child("tick", tick)
    workspace = GlobalWorkspace(tick, observation)
    if extra_context is not None and extra_context.tokens:
        workspace.append(extra_context, Role.PREDICTED, "context")
    for i, step in enumerate(actor.logic.steps[:-1]):
        step_assembly(actor, workspace, step, seed.child("step", i))
    return workspace


def act_cycle(
    actor: Actor, observation: SymbolSeq, tick: int
) -> tuple[SymbolSeq, MemoryBank]:
    """One full observe-deliberate-act pass.

    Returns the chosen action and the actor's bank grown by exactly one
    trace record of the episode. Pure in actor state: the caller decides
    whether to adopt the returned bank.
    """
    seed = actor.seed.child("tick", tick)
    workspace = deliberate(actor, observation, tick, seed)
    decide(actor, workspace, seed.child("decide"))
    action = workspace.action
    assert action is not None
    record = make_record(
        time=tick,
        observer=actor.id,
        subject=actor.id,
        observation=observation,
        action=action,
    )
    return action, write(actor.bank, record)


def chain_length(workspace: GlobalWorkspace) -> int:
    """Number of intermediate assemblies between observation and action."""
    return len(workspace.assemblies())
