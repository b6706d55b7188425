"""Foundational value types.

Everything downstream (completion backends, memory, actors, environments)
speaks in terms of these: token sequences, workspace assemblies, structured
memory records with a canonical text rendering, and hierarchical seed
streams for reproducible randomness.

Goals:
  - values are immutable and hashable so they can be cached and compared
  - text handling is a single normalization rule applied everywhere
  - seed derivation is stable across processes (never built-in hash())
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional

from .errors import FramingError


@dataclass(frozen=True)
class SymbolSeq:
    """An ordered sequence of text tokens.

    The empty sequence is a valid value and is distinct from a sequence
    containing a single empty token. Normalized sequences (the only kind
    the engine produces) contain no empty or whitespace-bearing tokens.
    """

    tokens: tuple[str, ...] = ()

    def render(self) -> str:
        """Joins tokens with single spaces."""
        return " ".join(self.tokens)

    def concat(self, other: "SymbolSeq") -> "SymbolSeq":
        return SymbolSeq(self.tokens + other.tokens)

    def __add__(self, other: "SymbolSeq") -> "SymbolSeq":
        return self.concat(other)

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[str]:
        return iter(self.tokens)

    def __bool__(self) -> bool:
        return bool(self.tokens)


def normalize(text: str) -> SymbolSeq:
    """Lowercases and splits on whitespace runs.

    This is the only text-to-symbols rule in the package; renderings,
    framings, and config strings all pass through here.
    """
    return SymbolSeq(tuple(text.lower().split()))


class Role(Enum):
    OBSERVATION = "observation"
    PREDICTED = "predicted"
    RETRIEVED = "retrieved"
    ACTION = "action"


@dataclass(frozen=True)
class Assembly:
    """One workspace entry: a symbol sequence plus bookkeeping."""

    content: SymbolSeq
    role: Role
    provenance: str
    stage_index: int

    def __post_init__(self) -> None:
        if self.stage_index < 0:
            raise ValueError("stage_index must be >= 0")


class GlobalWorkspace:
    """Append-only per-tick working state of a single actor.

    Entry zero is always the observation; stage indices increase strictly;
    at most one action entry may be appended and nothing after it.
    """

    def __init__(self, tick: int, observation: SymbolSeq):
        self.tick = tick
        self._entries: list[Assembly] = [
            Assembly(observation, Role.OBSERVATION, "environment", 0)
        ]

    @property
    def entries(self) -> tuple[Assembly, ...]:
        return tuple(self._entries)

    @property
    def observation(self) -> SymbolSeq:
        return self._entries[0].content

    @property
    def closed(self) -> bool:
        return self._entries[-1].role is Role.ACTION

    def append(self, content: SymbolSeq, role: Role, provenance: str) -> Assembly:
        if role is Role.OBSERVATION:
            raise ValueError("observation is fixed at stage 0")
        if self.closed:
            raise ValueError("workspace already holds an action")
        entry = Assembly(content, role, provenance, len(self._entries))
        self._entries.append(entry)
        return entry

    def assemblies(self) -> tuple[Assembly, ...]:
        """Entries between the observation and the action, in stage order."""
        return tuple(
            e for e in self._entries if e.role in (Role.PREDICTED, Role.RETRIEVED)
        )

    @property
    def action(self) -> Optional[SymbolSeq]:
        return self._entries[-1].content if self.closed else None


class Valence(Enum):
    APPROVE = "approve"
    DISAPPROVE = "disapprove"
    UNLABELED = "unlabeled"


@dataclass(frozen=True)
class Sanction:
    by: str
    signal: SymbolSeq
    valence: Valence = Valence.UNLABELED


@dataclass(frozen=True)
class MemoryRecord:
    """One episode: who did what after observing what, possibly sanctioned.

    The rendering is derived from the structured fields by render_record
    and must never be set to anything else; make_record enforces this.
    """

    time: int
    observer: str
    subject: str
    observation: SymbolSeq
    action: SymbolSeq
    sanction: Optional[Sanction]
    rendering: SymbolSeq

    def __post_init__(self) -> None:
        if self.time < 0:
            raise ValueError("record time must be >= 0")


def render_record(
    time: int,
    subject: str,
    observation: SymbolSeq,
    action: SymbolSeq,
    sanction: Optional[Sanction] = None,
) -> SymbolSeq:
    """Canonical one-line text form of an episode.

    Template: "at <time> <subject> did <action> after <observation>"
    with "; <by> sanctioned with <signal>" appended when a sanction is
    attached. The separator tokens ("did", "after", ";") are reserved:
    parse_rendering recovers fields by the first occurrence of each, so
    actions that contain the bare token "after" will not round-trip.
    """
    text = f"at {time} {subject} did {action.render()} after {observation.render()}"
    if sanction is not None:
        text += f" ; {sanction.by} sanctioned with {sanction.signal.render()}"
    return normalize(text)


def make_record(
    time: int,
    observer: str,
    subject: str,
    observation: SymbolSeq,
    action: SymbolSeq,
    sanction: Optional[Sanction] = None,
) -> MemoryRecord:
    return MemoryRecord(
        time=time,
        observer=observer,
        subject=subject,
        observation=observation,
        action=action,
        sanction=sanction,
        rendering=render_record(time, subject, observation, action, sanction),
    )


def parse_rendering(rendering: SymbolSeq) -> tuple[int, str, SymbolSeq]:
    """Recovers (time, subject, action) from a canonical rendering."""
    toks = rendering.tokens
    if len(toks) < 5 or toks[0] != "at" or toks[3] != "did":
        raise FramingError(f"not a canonical rendering: {rendering.render()!r}")
    try:
        time = int(toks[1])
    except ValueError as exc:
        raise FramingError(f"bad time token {toks[1]!r}") from exc
    subject = toks[2]
    try:
        after_at = toks.index("after", 4)
    except ValueError as exc:
        raise FramingError("rendering lacks the 'after' separator") from exc
    return time, subject, SymbolSeq(toks[4:after_at])


_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class SeedStream:
    """Hierarchical reproducible randomness.

    A stream is identified by a 64-bit root seed plus a path of labels
    (actor id, tick, purpose, ...). Identical (root, path) always yields
    identical draws; sibling paths are statistically independent. The
    derivation hashes the identity with sha256, never built-in hash(),
    which is randomized per process.
    """

    root: int
    path: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "root", self.root & _SEED_MASK)

    def child(self, *labels: object) -> "SeedStream":
        return SeedStream(self.root, self.path + tuple(str(x) for x in labels))

    def derived_seed(self) -> int:
        ident = f"{self.root}|" + "/".join(self.path)
        digest = hashlib.sha256(ident.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big")

    def rng(self) -> random.Random:
        return random.Random(self.derived_seed())
