"""Pattern completion backends.

A completer maps (context symbols, explicit candidate set) to a probability
distribution over exactly those candidates. Two backends ship:

  - TablePCN: a deterministic feature-weight table with temperature softmax.
    This is the auditable desk-scale backend every verdict-producing test
    runs against.
  - RemotePCN: a read-only JSON/HTTP client for an external scorer. Probes
    treat it exactly like a table; nothing in the package fine-tunes or
    mutates remote state.

Distributions are smoothed at a tiny floor so no candidate ever carries
exactly zero mass and divergences stay finite.
"""

from __future__ import annotations

import math
import os
import time as _time
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import httpx

from .core import SeedStream, SymbolSeq, normalize
from .errors import CandidateRejected, RemoteUnavailable

SMOOTHING_FLOOR = 1e-12
_SUM_TOL = 1e-9


@dataclass(frozen=True)
class CompletionDistribution:
    """A probability distribution over an explicit candidate list.

    Invariants checked on construction: candidates and probs align, the
    candidates are pairwise distinct, the mass sums to one within 1e-9,
    and every probability is at least the smoothing floor.
    """

    candidates: tuple[SymbolSeq, ...]
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.candidates) != len(self.probs):
            raise ValueError("candidates and probs must align")
        if not self.candidates:
            raise ValueError("empty candidate set")
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError("candidates must be pairwise distinct")
        total = sum(self.probs)
        if abs(total - 1.0) > _SUM_TOL:
            raise ValueError(f"probabilities sum to {total}, not 1")
        floor_with_slack = SMOOTHING_FLOOR * (1.0 - 1e-6)
        if any(p < floor_with_slack for p in self.probs):
            raise ValueError("probability below smoothing floor")

    @classmethod
    def from_masses(
        cls, candidates: Sequence[SymbolSeq], masses: Sequence[float]
    ) -> "CompletionDistribution":
        """Normalizes nonnegative masses and applies the smoothing floor."""
        if any(m < 0 or not math.isfinite(m) for m in masses):
            raise ValueError("masses must be finite and nonnegative")
        total = sum(masses)
        if total <= 0:
            probs = [1.0 / len(masses)] * len(masses)
        else:
            probs = [m / total for m in masses]
        probs = [max(p, SMOOTHING_FLOOR) for p in probs]
        renorm = sum(probs)
        probs = [max(p / renorm, SMOOTHING_FLOOR) for p in probs]
        return cls(tuple(candidates), tuple(probs))

    def prob_of(self, candidate: SymbolSeq) -> float:
        for c, p in zip(self.candidates, self.probs):
            if c == candidate:
                return p
        raise KeyError(f"candidate not in distribution: {candidate.render()!r}")

    def argmax(self) -> SymbolSeq:
        best = max(range(len(self.probs)), key=lambda i: self.probs[i])
        return self.candidates[best]

    def as_dict(self) -> dict[str, float]:
        return {c.render(): p for c, p in zip(self.candidates, self.probs)}

    def __len__(self) -> int:
        return len(self.candidates)


class PatternCompleter:
    """Interface every backend implements."""

    def score(
        self, context: SymbolSeq, candidates: Sequence[SymbolSeq]
    ) -> CompletionDistribution:
        raise NotImplementedError


def extract_features(context: SymbolSeq, tags: Optional[dict[str, str]] = None) -> Counter:
    """Feature bag of a context: unigrams, adjacent bigrams, declared tags.

    tags maps a trigger phrase (normalized text) to a tag name; when the
    phrase occurs as a token run in the context, the feature "#<tag>" is
    added once per occurrence.
    """
    toks = context.tokens
    bag: Counter = Counter(toks)
    for i in range(len(toks) - 1):
        bag[f"{toks[i]} {toks[i + 1]}"] += 1
    if tags:
        for phrase, tag in tags.items():
            run = normalize(phrase).tokens
            if not run:
                continue
            n = len(run)
            for i in range(len(toks) - n + 1):
                if toks[i : i + n] == run:
                    bag[f"#{tag}"] += 1
    return bag


class TablePCN(PatternCompleter):
    """Deterministic completer backed by a (feature, completion) weight table.

    score() sums the weights of every context feature toward each candidate
    (candidates are keyed by their rendered text) and applies a temperature
    softmax over exactly the queried candidates. Raising the weight of a
    context feature toward a candidate strictly raises that candidate's
    probability, which is what makes memory retrieval act like precedent.
    """

    def __init__(
        self,
        weights: Optional[dict[tuple[str, str], float]] = None,
        tau: float = 1.0,
        tags: Optional[dict[str, str]] = None,
        version: int = 1,
    ):
        if tau <= 0:
            raise ValueError("temperature must be positive")
        self.tau = float(tau)
        self.tags = dict(tags) if tags else {}
        self.version = int(version)
        self._weights: dict[tuple[str, str], float] = {}
        for key, w in (weights or {}).items():
            self.set_weight(key[0], key[1], w)

    @property
    def weights(self) -> dict[tuple[str, str], float]:
        return dict(self._weights)

    @property
    def lexicon(self) -> dict[str, SymbolSeq]:
        """Completion ids seen in the table, mapped to their symbol form."""
        return {cid: normalize(cid) for _, cid in self._weights}

    def set_weight(self, feature: str, completion_id: str, weight: float) -> None:
        w = float(weight)
        if w < 0 or not math.isfinite(w):
            raise ValueError("weights must be finite and nonnegative")
        if w == 0:
            self._weights.pop((feature, completion_id), None)
        else:
            self._weights[(feature, completion_id)] = w

    def add_weight(self, feature: str, completion_id: str, delta: float) -> None:
        current = self._weights.get((feature, completion_id), 0.0)
        self.set_weight(feature, completion_id, current + delta)

    def raw_score(self, features: Counter, completion_id: str) -> float:
        get = self._weights.get
        return sum(
            count * get((f, completion_id), 0.0) for f, count in features.items()
        )

    def score(
        self, context: SymbolSeq, candidates: Sequence[SymbolSeq]
    ) -> CompletionDistribution:
        feats = extract_features(context, self.tags)
        scores = [self.raw_score(feats, c.render()) for c in candidates]
        top = max(scores)
        masses = [math.exp((s - top) / self.tau) for s in scores]
        return CompletionDistribution.from_masses(tuple(candidates), masses)

    def copy(self) -> "TablePCN":
        return TablePCN(self._weights, self.tau, self.tags, self.version)

    def save(self, path: str) -> None:
        """Writes the versioned flat file format.

        Header: "tablepcn v<version> tau=<tau>", then one tab-separated
        line per entry: feature, completion id, weight. Entries are sorted
        so the file is byte-stable for a given table.
        """
        lines = [f"tablepcn v{self.version} tau={self.tau!r}"]
        for (feature, cid), w in sorted(self._weights.items()):
            lines.append(f"{feature}\t{cid}\t{w!r}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str, tags: Optional[dict[str, str]] = None) -> "TablePCN":
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
        if not lines:
            raise ValueError(f"{path}: empty table file")
        head = lines[0].split()
        if len(head) != 3 or head[0] != "tablepcn" or not head[1].startswith("v"):
            raise ValueError(f"{path}: bad header {lines[0]!r}")
        version = int(head[1][1:])
        if not head[2].startswith("tau="):
            raise ValueError(f"{path}: bad header {lines[0]!r}")
        tau = float(head[2][4:])
        weights: dict[tuple[str, str], float] = {}
        for ln in lines[1:]:
            parts = ln.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}: bad entry line {ln!r}")
            weights[(parts[0], parts[1])] = float(parts[2])
        return cls(weights, tau=tau, tags=tags, version=version)


class RemotePCN(PatternCompleter):
    """Read-only client for a remote scoring service.

    Wire protocol:
      POST <endpoint>/v1/score  {"context": str, "candidates": [str, ...]}
          -> {"logprobs": [float, ...]}
      POST <endpoint>/v1/sample {"context": str, "candidates": [str, ...],
                                 "temperature": float, "seed": int}
          -> {"completion": str}

    NORMLAB_PCN_ENDPOINT overrides the configured endpoint; the auth token
    is read from the environment variable named by token_env and sent as a
    bearer header when present. Transport failures and 5xx responses are
    retried max_retries times, then raise RemoteUnavailable. A response
    that cannot score some candidate raises CandidateRejected; candidates
    are never silently dropped. The underlying httpx client is thread-safe,
    so one RemotePCN may serve concurrent probe evaluations.
    """

    ENDPOINT_ENV = "NORMLAB_PCN_ENDPOINT"

    def __init__(
        self,
        endpoint: str = "http://localhost:8000",
        timeout: float = 10.0,
        max_retries: int = 2,
        token_env: str = "NORMLAB_PCN_TOKEN",
        backoff: float = 0.1,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.max_retries = int(max_retries)
        self.token_env = token_env
        self.backoff = backoff
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _base_url(self) -> str:
        return os.environ.get(self.ENDPOINT_ENV, self.endpoint).rstrip("/")

    def _headers(self) -> dict[str, str]:
        headers = {"content-type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["authorization"] = f"Bearer {token}"
        return headers

    def _post(self, route: str, payload: dict) -> dict:
        url = self._base_url() + route
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._client.post(url, json=payload, headers=self._headers())
            except httpx.HTTPError as exc:
                last_error = exc
                if attempt < self.max_retries and self.backoff:
                    _time.sleep(self.backoff * (attempt + 1))
                continue
            if resp.status_code >= 500:
                last_error = RemoteUnavailable(f"{url}: server error {resp.status_code}")
                if attempt < self.max_retries and self.backoff:
                    _time.sleep(self.backoff * (attempt + 1))
                continue
            if resp.status_code == 400:
                detail = _safe_json(resp)
                raise CandidateRejected(f"{url}: {detail.get('error', resp.text)}")
            if resp.status_code != 200:
                raise RemoteUnavailable(f"{url}: unexpected status {resp.status_code}")
            return _safe_json(resp)
        raise RemoteUnavailable(f"{url}: gave up after {self.max_retries + 1} attempts: {last_error}")

    def score(
        self, context: SymbolSeq, candidates: Sequence[SymbolSeq]
    ) -> CompletionDistribution:
        body = self._post(
            "/v1/score",
            {
                "context": context.render(),
                "candidates": [c.render() for c in candidates],
            },
        )
        logprobs = body.get("logprobs")
        if not isinstance(logprobs, list) or len(logprobs) != len(candidates):
            raise CandidateRejected(
                f"scorer returned {0 if not isinstance(logprobs, list) else len(logprobs)} "
                f"logprobs for {len(candidates)} candidates"
            )
        for i, lp in enumerate(logprobs):
            if not isinstance(lp, (int, float)) or not math.isfinite(lp):
                raise CandidateRejected(
                    f"candidate {candidates[i].render()!r} was not scored"
                )
        top = max(logprobs)
        masses = [math.exp(lp - top) for lp in logprobs]
        return CompletionDistribution.from_masses(tuple(candidates), masses)

    def sample_remote(
        self,
        context: SymbolSeq,
        candidates: Sequence[SymbolSeq],
        temperature: float,
        seed: SeedStream,
    ) -> SymbolSeq:
        """Server-side sampling via /v1/sample; the reply must echo a candidate."""
        body = self._post(
            "/v1/sample",
            {
                "context": context.render(),
                "candidates": [c.render() for c in candidates],
                "temperature": temperature,
                "seed": seed.derived_seed(),
            },
        )
        completion = normalize(str(body.get("completion", "")))
        if completion not in candidates:
            raise CandidateRejected(
                f"sampler returned a non-candidate: {completion.render()!r}"
            )
        return completion

    def close(self) -> None:
        self._client.close()


def _safe_json(resp: httpx.Response) -> dict:
    try:
        body = resp.json()
    except ValueError as exc:
        raise RemoteUnavailable(f"non-JSON response: {resp.text[:200]!r}") from exc
    if not isinstance(body, dict):
        raise RemoteUnavailable(f"unexpected response shape: {body!r}")
    return body


def _check_candidates(candidates: Sequence[SymbolSeq]) -> None:
    if not candidates:
        raise ValueError("candidate set must be non-empty")
    if len(set(candidates)) != len(candidates):
        raise ValueError("candidates must be pairwise distinct")


def score(
    completer: PatternCompleter,
    context: SymbolSeq,
    candidates: Sequence[SymbolSeq],
) -> CompletionDistribution:
    """Scores an explicit candidate set; probabilities attach to candidates,
    so permuting the input permutes the output."""
    _check_candidates(candidates)
    return completer.score(context, candidates)


def sample(
    completer: PatternCompleter,
    context: SymbolSeq,
    candidates: Sequence[SymbolSeq],
    seed: SeedStream,
) -> SymbolSeq:
    """Draws one candidate from score(); identical seed, identical draw."""
    dist = score(completer, context, candidates)
    u = seed.rng().random()
    acc = 0.0
    for candidate, p in zip(dist.candidates, dist.probs):
        acc += p
        if u <= acc:
            return candidate
    return dist.candidates[-1]


def population_average(
    members: Sequence[PatternCompleter],
    context: SymbolSeq,
    candidates: Sequence[SymbolSeq],
) -> CompletionDistribution:
    """Arithmetic mean of the member distributions over one candidate set."""
    if not members:
        raise ValueError("population must be non-empty")
    _check_candidates(candidates)
    dists = [m.score(context, candidates) for m in members]
    mean = [
        sum(d.probs[i] for d in dists) / len(dists) for i in range(len(candidates))
    ]
    return CompletionDistribution.from_masses(tuple(candidates), mean)
