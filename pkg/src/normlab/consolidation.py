"""Offline consolidation: replaying memory into table weights.

Replay takes episodes out of a bank and burns them into the completion
table: every feature of an episode's observation gains weight toward the
episode's action, once per replay pass. The effect is that behavior the
actor previously had to retrieve precedent for becomes the completion it
reaches without retrieval. Consolidation is the only sanctioned way to
mutate a table, it runs strictly between ticks, and it returns a new table
(one version higher) rather than touching the input.

Only TablePCN supports this; remote backends are read-only by contract.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

from .actor import Actor, deliberate, policy_distribution
from .core import MemoryRecord, SymbolSeq
from .errors import BackendUnsupported
from .memory import MemoryBank
from .pcn import PatternCompleter, TablePCN, extract_features, score
from .probes import total_variation

MAX_TOTAL_RATE = 100.0


@dataclass(frozen=True)
class ConsolidationConfig:
    replay_passes: int = 10
    learning_rate: float = 0.1
    record_filter: Optional[Callable[[MemoryRecord], bool]] = None

    def __post_init__(self) -> None:
        if self.replay_passes < 0:
            raise ValueError("replay_passes must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.learning_rate * self.replay_passes > MAX_TOTAL_RATE:
            raise ValueError(
                "learning_rate * replay_passes exceeds the stability bound "
                f"{MAX_TOTAL_RATE}"
            )


def consolidate(
    table: PatternCompleter, bank: MemoryBank, cfg: ConsolidationConfig
) -> TablePCN:
    """Additive replay. Weight updates only ever touch (feature of the
    record's observation, record's action) cells, and the composed update
    of two banks equals the update of their concatenation."""
    if not isinstance(table, TablePCN):
        raise BackendUnsupported(
            f"consolidation needs a weight table, got {type(table).__name__}"
        )
    out = table.copy()
    out.version = table.version + 1
    records = [
        r for r in bank.records if cfg.record_filter is None or cfg.record_filter(r)
    ]
    delta = cfg.learning_rate * cfg.replay_passes
    for record in records:
        completion_id = record.action.render()
        for feature, count in extract_features(record.observation, out.tags).items():
            out.add_weight(feature, completion_id, delta * count)
    return out


@dataclass(frozen=True)
class GapReport:
    """TV distance between retrieval-on and retrieval-off policies, before
    and after consolidating the actor's bank into its table."""

    pre_gap: float
    post_gap: float
    replay_passes: int

    def to_json_dict(self) -> dict:
        return {
            "pre_gap": self.pre_gap,
            "post_gap": self.post_gap,
            "replay_passes": self.replay_passes,
        }


def _policy_dist(actor: Actor, observation: SymbolSeq):
    workspace = deliberate(
        actor, observation, actor.bank.last_time, actor.seed.child("gap-probe")
    )
    return policy_distribution(actor, workspace)


def implicit_explicit_gap(
    actor: Actor, observation: SymbolSeq, cfg: ConsolidationConfig
) -> GapReport:
    explicit = replace(actor, retrieval_enabled=True)
    implicit = replace(actor, retrieval_enabled=False)
    pre_gap = total_variation(
        _policy_dist(explicit, observation), _policy_dist(implicit, observation)
    )
    consolidated = consolidate(actor.completer, actor.bank, cfg)
    post_gap = total_variation(
        _policy_dist(replace(explicit, completer=consolidated), observation),
        _policy_dist(replace(implicit, completer=consolidated), observation),
    )
    return GapReport(pre_gap=pre_gap, post_gap=post_gap, replay_passes=cfg.replay_passes)


@dataclass(frozen=True)
class PrecedenceReport:
    """Before/after effect of an in-context contradiction line.

    delta is how much the contradiction pulls the action's probability
    down when appended to the context. The verdict asks whether replayed
    precedent shrank that pull: repetition outranks the one-off line."""

    delta_pre: float
    delta_post: float
    verdict: bool

    def to_json_dict(self) -> dict:
        return {
            "delta_pre": self.delta_pre,
            "delta_post": self.delta_post,
            "verdict": self.verdict,
        }


def precedence_test(
    table: PatternCompleter,
    bank: MemoryBank,
    context: SymbolSeq,
    contradiction: SymbolSeq,
    action: SymbolSeq,
    alternative: SymbolSeq,
    cfg: ConsolidationConfig,
) -> PrecedenceReport:
    candidates = (action, alternative)

    def pull(t: PatternCompleter) -> float:
        plain = score(t, context, candidates).prob_of(action)
        contradicted = score(t, context + contradiction, candidates).prob_of(action)
        return plain - contradicted

    delta_pre = pull(table)
    delta_post = pull(consolidate(table, bank, cfg))
    return PrecedenceReport(
        delta_pre=delta_pre, delta_post=delta_post, verdict=delta_post < delta_pre
    )
