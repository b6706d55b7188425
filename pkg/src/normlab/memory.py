"""Memory banks and similarity-based retrieval.

A bank is an append-ordered collection of MemoryRecords owned by exactly
one actor. Retrieval is cue-based: records are ranked by similarity
between the stored observation (the situation the record was laid down
in) and a query sequence; ties go to the most recent time, then to the
latest appended. Banks are immutable values: write() returns a new
bank, which keeps counterfactual editing trivially side-effect free.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Iterable, Optional

from .core import (
    MemoryRecord,
    Sanction,
    SymbolSeq,
    Valence,
    make_record,
    normalize,
)
from .errors import TimeRegression


@dataclass(frozen=True)
class SimilarityMetric:
    """Similarity between two symbol sequences, in [0, 1], symmetric,
    with S(x, x) == 1.

    kind "token-jaccard": intersection over union of token sets.
    kind "weighted-overlap": same, but tokens carry declared weights
    (missing tokens weigh 1.0).
    """

    kind: str = "token-jaccard"
    token_weights: tuple[tuple[str, float], ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("token-jaccard", "weighted-overlap"):
            raise ValueError(f"unknown similarity kind {self.kind!r}")

    def __call__(self, x: SymbolSeq, y: SymbolSeq) -> float:
        xs, ys = _token_set(x), _token_set(y)
        union = xs | ys
        if not union:
            return 1.0
        inter = xs & ys
        if self.kind == "token-jaccard":
            return len(inter) / len(union)
        weights = dict(self.token_weights)
        wsum = lambda toks: sum(weights.get(t, 1.0) for t in toks)
        return wsum(inter) / wsum(union)


@lru_cache(maxsize=None)
def _token_set(seq: SymbolSeq) -> frozenset[str]:
    return frozenset(seq.tokens)


JACCARD = SimilarityMetric("token-jaccard")


@dataclass(frozen=True)
class MemoryBank:
    """Records in append order with nondecreasing times.

    capacity, when set, evicts the oldest record on overflow and counts
    the eviction.
    """

    records: tuple[MemoryRecord, ...] = ()
    capacity: Optional[int] = None
    evictions: int = 0

    def __post_init__(self) -> None:
        if self.capacity is not None and self.capacity < 1:
            raise ValueError("capacity must be positive when set")
        last = -1
        for r in self.records:
            if r.time < last:
                raise TimeRegression(
                    f"record at time {r.time} appended after time {last}"
                )
            last = r.time

    def __len__(self) -> int:
        return len(self.records)

    @property
    def last_time(self) -> int:
        return self.records[-1].time if self.records else 0


def write(bank: MemoryBank, record: MemoryRecord) -> MemoryBank:
    """Appends a record, enforcing time order and the capacity cap."""
    if bank.records and record.time < bank.records[-1].time:
        raise TimeRegression(
            f"record time {record.time} precedes bank tail {bank.records[-1].time}"
        )
    records = bank.records + (record,)
    evictions = bank.evictions
    if bank.capacity is not None and len(records) > bank.capacity:
        overflow = len(records) - bank.capacity
        records = records[overflow:]
        evictions += overflow
    return replace(bank, records=records, evictions=evictions)


def _ranked(
    bank: MemoryBank, query: SymbolSeq, metric: SimilarityMetric
) -> list[tuple[float, int, int, MemoryRecord]]:
    return sorted(
        (
            (metric(r.observation, query), r.time, idx, r)
            for idx, r in enumerate(bank.records)
        ),
        key=lambda t: (t[0], t[1], t[2]),
        reverse=True,
    )


def retrieve(
    bank: MemoryBank, query: SymbolSeq, metric: SimilarityMetric = JACCARD
) -> Optional[MemoryRecord]:
    """Most similar record, or None iff the bank is empty."""
    if not bank.records:
        return None
    return _ranked(bank, query, metric)[0][3]


def retrieve_top_k(
    bank: MemoryBank, query: SymbolSeq, k: int, metric: SimilarityMetric = JACCARD
) -> list[MemoryRecord]:
    if k < 0:
        raise ValueError("k must be >= 0")
    return [row[3] for row in _ranked(bank, query, metric)[:k]]


def record_to_dict(record: MemoryRecord) -> dict:
    sanction = None
    if record.sanction is not None:
        sanction = {
            "by": record.sanction.by,
            "signal": record.sanction.signal.render(),
            "valence": record.sanction.valence.value,
        }
    return {
        "time": record.time,
        "observer": record.observer,
        "subject": record.subject,
        "observation": record.observation.render(),
        "action": record.action.render(),
        "sanction": sanction,
        "rendering": record.rendering.render(),
    }


def record_from_dict(data: dict) -> MemoryRecord:
    sanction = None
    if data.get("sanction") is not None:
        raw = data["sanction"]
        sanction = Sanction(
            by=raw["by"],
            signal=normalize(raw["signal"]),
            valence=Valence(raw.get("valence", "unlabeled")),
        )
    record = make_record(
        time=int(data["time"]),
        observer=data["observer"],
        subject=data["subject"],
        observation=normalize(data["observation"]),
        action=normalize(data["action"]),
        sanction=sanction,
    )
    stored = data.get("rendering")
    if stored is not None and normalize(stored) != record.rendering:
        raise ValueError(
            f"stored rendering diverges from fields: {stored!r}"
        )
    return record


def dump_jsonl(bank: MemoryBank, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in bank.records:
            fh.write(json.dumps(record_to_dict(record), sort_keys=True) + "\n")


def load_jsonl(path: str, capacity: Optional[int] = None) -> MemoryBank:
    bank = MemoryBank(capacity=capacity)
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                bank = write(bank, record_from_dict(json.loads(line)))
    return bank
