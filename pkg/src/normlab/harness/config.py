"""Scenario files: schema validation and object building.

A scenario is one YAML document describing candidate sets, weight tables,
decision logics, actors (individually or as templated groups), the
environment, and an experiment block. Validation is strict and total:
unknown keys are rejected, and every problem found is reported together
with a JSON-pointer-style location, never just the first one.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import yaml

from ..actor import Actor, DecisionLogic, LOGIC_A, LOGIC_B, LogicStep, StepKind
from ..core import MemoryRecord, Sanction, SeedStream, SymbolSeq, Valence, make_record, normalize
from ..env import LMAE, SanctionClause, TransitionRule
from ..errors import ParseError, SchemaError
from ..memory import MemoryBank, load_jsonl, write
from ..pcn import RemotePCN, TablePCN

VALENCES = ("approve", "disapprove", "unlabeled")
BACKENDS = ("table", "remote")
SELECTIONS = ("sample", "argmax")
STEP_KINDS = ("summarize", "retrieve", "policy")
EXPERIMENT_KINDS = ("run", "stability", "adoption", "probe", "consolidation")
PROBE_KINDS = ("convention", "sanction", "epsilon", "norm")
BUILTIN_LOGICS = {"consequentialist": LOGIC_A, "identity": LOGIC_B}


@dataclass
class ScenarioConfig:
    name: str
    root_seed: int
    raw: dict
    base_dir: str

    @property
    def experiment(self) -> dict:
        return self.raw.get("experiment", {"kind": "run", "ticks": 1})

    @property
    def kind(self) -> str:
        return self.experiment.get("kind", "run")

    @property
    def out_dir(self) -> str:
        return self.raw.get("output", {}).get("dir", "out")

    @property
    def metrics_format(self) -> str:
        return self.raw.get("output", {}).get("format", "csv")


Problem = tuple[str, str]


def _is_num(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _is_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


class _Checker:
    def __init__(self) -> None:
        self.problems: list[Problem] = []

    def err(self, ptr: str, msg: str) -> None:
        self.problems.append((ptr, msg))

    def mapping(
        self,
        obj: Any,
        ptr: str,
        allowed: dict[str, Callable[[Any, str], None] | None],
        required: tuple[str, ...] = (),
    ) -> bool:
        if not isinstance(obj, dict):
            self.err(ptr, f"expected a mapping, got {type(obj).__name__}")
            return False
        for key in obj:
            if key not in allowed:
                self.err(f"{ptr}/{key}", "unknown key")
        for key in required:
            if key not in obj:
                self.err(ptr, f"missing required key {key!r}")
        for key, check in allowed.items():
            if key in obj and check is not None:
                check(obj[key], f"{ptr}/{key}")
        return True

    def string(self, x: Any, ptr: str) -> None:
        if not isinstance(x, str) or not x.strip():
            self.err(ptr, "expected a non-empty string")

    def any_string(self, x: Any, ptr: str) -> None:
        if not isinstance(x, str):
            self.err(ptr, "expected a string")

    def boolean(self, x: Any, ptr: str) -> None:
        if not isinstance(x, bool):
            self.err(ptr, "expected a boolean")

    def integer(self, x: Any, ptr: str, minimum: Optional[int] = None) -> None:
        if not _is_int(x):
            self.err(ptr, "expected an integer")
        elif minimum is not None and x < minimum:
            self.err(ptr, f"must be >= {minimum}")

    def number(self, x: Any, ptr: str, minimum: Optional[float] = None) -> None:
        if not _is_num(x):
            self.err(ptr, "expected a number")
        elif minimum is not None and x < minimum:
            self.err(ptr, f"must be >= {minimum}")

    def fraction(self, x: Any, ptr: str) -> None:
        if not _is_num(x) or not 0.0 <= x <= 1.0:
            self.err(ptr, "expected a number in [0, 1]")

    def choice(self, options: tuple[str, ...]) -> Callable[[Any, str], None]:
        def check(x: Any, ptr: str) -> None:
            if x not in options:
                self.err(ptr, f"expected one of {', '.join(options)}")

        return check

    def string_list(self, x: Any, ptr: str) -> None:
        if not isinstance(x, list) or not x:
            self.err(ptr, "expected a non-empty list of strings")
            return
        for i, item in enumerate(x):
            if not isinstance(item, str) or not item.strip():
                self.err(f"{ptr}/{i}", "expected a non-empty string")


def _check_memory_entry(c: _Checker, entry: Any, ptr: str) -> None:
    ok = c.mapping(
        entry,
        ptr,
        {
            "time": lambda x, p: c.integer(x, p, minimum=0),
            "subject": c.string,
            "observation": c.string,
            "action": c.string,
            "sanction": None,
        },
        required=("observation", "action"),
    )
    if ok and isinstance(entry, dict) and "sanction" in entry:
        c.mapping(
            entry["sanction"],
            f"{ptr}/sanction",
            {
                "by": c.string,
                "signal": c.string,
                "valence": c.choice(VALENCES),
            },
            required=("by", "signal"),
        )


def _check_actor_body(c: _Checker, spec: dict, ptr: str, extra: dict, required: tuple[str, ...]) -> None:
    allowed: dict[str, Any] = {
        "persona": c.string,
        "role": c.string,
        "logic": c.string,
        "backend": c.choice(BACKENDS),
        "table": c.string,
        "remote": None,
        "selection": c.choice(SELECTIONS),
        "retrieval": c.boolean,
        "capacity": lambda x, p: c.integer(x, p, minimum=1),
        "memories": None,
        "candidate_sets": None,
    }
    allowed.update(extra)
    if not c.mapping(spec, ptr, allowed, required=required):
        return
    backend = spec.get("backend", "table")
    if backend == "table" and "table" not in spec:
        c.err(ptr, "table-backed actors need a 'table' name")
    if backend == "remote":
        if "remote" in spec:
            c.mapping(
                spec["remote"],
                f"{ptr}/remote",
                {
                    "endpoint": c.string,
                    "timeout": lambda x, p: c.number(x, p, minimum=0),
                    "max_retries": lambda x, p: c.integer(x, p, minimum=0),
                    "token_env": c.string,
                },
            )
    if "memories" in spec:
        mem = spec["memories"]
        if isinstance(mem, str):
            pass  # path, resolved at build time
        elif isinstance(mem, list):
            for i, entry in enumerate(mem):
                _check_memory_entry(c, entry, f"{ptr}/memories/{i}")
        else:
            c.err(f"{ptr}/memories", "expected a path or a list of records")
    if "candidate_sets" in spec:
        sets = spec["candidate_sets"]
        if isinstance(sets, dict):
            for name, values in sets.items():
                c.string_list(values, f"{ptr}/candidate_sets/{name}")
        else:
            c.err(f"{ptr}/candidate_sets", "expected a mapping of name to list")


def _check_consolidation_block(c: _Checker, spec: Any, ptr: str) -> None:
    if not c.mapping(
        spec,
        ptr,
        {
            "passes": lambda x, p: c.integer(x, p, minimum=0),
            "learning_rate": lambda x, p: c.number(x, p, minimum=0),
            "filter": None,
        },
    ):
        return
    if isinstance(spec, dict) and "filter" in spec:
        c.mapping(
            spec["filter"],
            f"{ptr}/filter",
            {
                "has_sanction": c.boolean,
                "subject": c.string,
                "action_in": c.string_list,
            },
        )


def validate_config(raw: Any) -> list[Problem]:
    """Returns every schema problem found, as (pointer, message) pairs."""
    c = _Checker()
    if not isinstance(raw, dict):
        c.err("", "top level must be a mapping")
        return c.problems

    c.mapping(
        raw,
        "",
        {
            "name": c.string,
            "description": c.any_string,
            "root_seed": lambda x, p: c.integer(x, p, minimum=0),
            "candidate_sets": None,
            "tables": None,
            "logics": None,
            "actors": None,
            "actor_groups": None,
            "environment": None,
            "experiment": None,
            "output": None,
        },
        required=("name", "root_seed", "environment"),
    )
    if not isinstance(raw, dict):
        return c.problems

    if "candidate_sets" in raw:
        sets = raw["candidate_sets"]
        if isinstance(sets, dict):
            for name, values in sets.items():
                c.string_list(values, f"/candidate_sets/{name}")
        else:
            c.err("/candidate_sets", "expected a mapping of name to list")

    if "tables" in raw:
        tables = raw["tables"]
        if isinstance(tables, dict):
            for name, spec in tables.items():
                ptr = f"/tables/{name}"
                ok = c.mapping(
                    spec,
                    ptr,
                    {
                        "tau": lambda x, p: c.number(x, p, minimum=0),
                        "tags": None,
                        "weights": None,
                        "echo": None,
                        "path": c.string,
                    },
                )
                if not ok or not isinstance(spec, dict):
                    continue
                if "weights" in spec:
                    if not isinstance(spec["weights"], list):
                        c.err(f"{ptr}/weights", "expected a list of [feature, completion, weight]")
                    else:
                        for i, row in enumerate(spec["weights"]):
                            if (
                                not isinstance(row, list)
                                or len(row) != 3
                                or not isinstance(row[0], str)
                                or not isinstance(row[1], str)
                                or not _is_num(row[2])
                                or row[2] < 0
                            ):
                                c.err(
                                    f"{ptr}/weights/{i}",
                                    "expected [feature, completion, nonnegative weight]",
                                )
                if "tags" in spec and not (
                    isinstance(spec["tags"], dict)
                    and all(isinstance(k, str) and isinstance(v, str) for k, v in spec["tags"].items())
                ):
                    c.err(f"{ptr}/tags", "expected a mapping of phrase to tag name")
                if "echo" in spec:
                    c.mapping(
                        spec["echo"],
                        f"{ptr}/echo",
                        {
                            "sets": c.string_list,
                            "weight": lambda x, p: c.number(x, p, minimum=0),
                        },
                        required=("sets",),
                    )
        else:
            c.err("/tables", "expected a mapping of name to table spec")

    if "logics" in raw:
        logics = raw["logics"]
        if isinstance(logics, dict):
            for name, steps in logics.items():
                ptr = f"/logics/{name}"
                if isinstance(steps, str):
                    if steps not in BUILTIN_LOGICS:
                        c.err(ptr, f"unknown builtin logic {steps!r}")
                    continue
                if not isinstance(steps, list) or not steps:
                    c.err(ptr, "expected a builtin name or a non-empty step list")
                    continue
                for i, step in enumerate(steps):
                    c.mapping(
                        step,
                        f"{ptr}/{i}",
                        {
                            "kind": c.choice(STEP_KINDS),
                            "question": c.any_string,
                            "template": c.string,
                            "candidates": c.string,
                            "k": lambda x, p: c.integer(x, p, minimum=0),
                        },
                        required=("kind",),
                    )
        else:
            c.err("/logics", "expected a mapping of name to steps")

    if "actors" in raw:
        if isinstance(raw["actors"], list):
            for i, spec in enumerate(raw["actors"]):
                _check_actor_body(c, spec, f"/actors/{i}", {"id": c.string}, ("id", "logic"))
        else:
            c.err("/actors", "expected a list")

    if "actor_groups" in raw:
        if isinstance(raw["actor_groups"], list):
            for i, spec in enumerate(raw["actor_groups"]):
                _check_actor_body(
                    c,
                    spec,
                    f"/actor_groups/{i}",
                    {
                        "count": lambda x, p: c.integer(x, p, minimum=1),
                        "id_prefix": c.string,
                    },
                    ("count", "id_prefix", "logic"),
                )
        else:
            c.err("/actor_groups", "expected a list")

    if not raw.get("actors") and not raw.get("actor_groups"):
        c.err("", "at least one actor or actor group is required")

    if "environment" in raw:
        env = raw["environment"]
        ok = c.mapping(
            env,
            "/environment",
            {
                "scene": c.string,
                "observation_template": c.string,
                "role_templates": None,
                "witnesses": None,
                "rules": None,
            },
            required=("scene", "rules"),
        )
        if ok and isinstance(env, dict):
            if "role_templates" in env and not (
                isinstance(env["role_templates"], dict)
                and all(
                    isinstance(k, str) and isinstance(v, str)
                    for k, v in env["role_templates"].items()
                )
            ):
                c.err("/environment/role_templates", "expected a mapping of role to template")
            if "witnesses" in env:
                w = env["witnesses"]
                if w != "all" and not (
                    isinstance(w, list) and all(isinstance(x, str) for x in w)
                ):
                    c.err("/environment/witnesses", "expected 'all' or a list of actor ids")
            rules = env.get("rules")
            if isinstance(rules, list) and rules:
                for i, rule in enumerate(rules):
                    ptr = f"/environment/rules/{i}"
                    ok_rule = c.mapping(
                        rule,
                        ptr,
                        {
                            "name": c.string,
                            "when_scene": c.string,
                            "when_action": c.string,
                            "effect": c.string,
                            "sanction": None,
                        },
                    )
                    if ok_rule and isinstance(rule, dict) and "sanction" in rule:
                        c.mapping(
                            rule["sanction"],
                            f"{ptr}/sanction",
                            {
                                "by_role": c.string,
                                "signal": c.string,
                                "valence": c.choice(VALENCES),
                                "trigger": c.string,
                            },
                            required=("by_role", "signal"),
                        )
                last = rules[-1]
                if isinstance(last, dict) and (
                    last.get("when_scene") is not None or last.get("when_action") is not None
                ):
                    c.err("/environment/rules", "last rule must be a catch-all default")
            elif rules is not None:
                c.err("/environment/rules", "expected a non-empty list")

    if "experiment" in raw:
        exp = raw["experiment"]
        ok = c.mapping(
            exp,
            "/experiment",
            {
                "kind": c.choice(EXPERIMENT_KINDS),
                "ticks": lambda x, p: c.integer(x, p, minimum=0),
                "focal_action": c.string,
                "against_action": c.string,
                "threshold": c.fraction,
                "window": lambda x, p: c.integer(x, p, minimum=1),
                "insert_tick": lambda x, p: c.integer(x, p, minimum=0),
                "newcomer": None,
                "naive_threshold": c.fraction,
                "adopted_threshold": c.fraction,
                "naive_window": lambda x, p: c.integer(x, p, minimum=1),
                "newcomer_witness": c.boolean,
                "consolidate_every": lambda x, p: c.integer(x, p, minimum=1),
                "consolidation": None,
                "probe": None,
                "actor": c.string,
                "observation": c.string,
                "gap_threshold": c.fraction,
            },
            required=("kind",),
        )
        if ok and isinstance(exp, dict):
            kind = exp.get("kind")
            if kind in ("run", "stability", "adoption") and "ticks" not in exp:
                c.err("/experiment", "this experiment kind needs 'ticks'")
            if kind in ("run", "stability", "adoption") and "focal_action" not in exp:
                c.err("/experiment", "this experiment kind needs 'focal_action'")
            if kind == "adoption" and "newcomer" not in exp:
                c.err("/experiment", "adoption experiments need a 'newcomer' block")
            if kind == "consolidation":
                for key in ("actor", "observation"):
                    if key not in exp:
                        c.err("/experiment", f"consolidation experiments need {key!r}")
            if "newcomer" in exp:
                _check_actor_body(
                    c, exp["newcomer"], "/experiment/newcomer", {"id": c.string}, ("id", "logic")
                )
            if "consolidation" in exp:
                _check_consolidation_block(c, exp["consolidation"], "/experiment/consolidation")
            if kind == "probe":
                probe = exp.get("probe")
                if probe is None:
                    c.err("/experiment", "probe experiments need a 'probe' block")
                else:
                    _check_probe_block(c, probe, "/experiment/probe")

    if "output" in raw:
        c.mapping(
            raw["output"],
            "/output",
            {"dir": c.string, "format": c.choice(("csv", "jsonl"))},
        )

    return c.problems


def _check_probe_block(c: _Checker, probe: Any, ptr: str) -> None:
    ok = c.mapping(
        probe,
        ptr,
        {
            "kind": c.choice(PROBE_KINDS),
            "actor": c.string,
            "table": c.string,
            "observation": c.string,
            "context": c.string,
            "from_action": c.string,
            "to_action": c.string,
            "grid": None,
            "matcher": c.choice(("exact-field", "epsilon-similar")),
            "epsilon": lambda x, p: c.number(x, p, minimum=0),
            "method": c.choice(("auto", "exact", "montecarlo")),
            "signal": c.string,
            "promoted": c.string,
            "demoted": c.string,
            "action": c.string,
            "injected": lambda x, p: c.integer(x, p, minimum=1),
            "u": c.string,
            "v": c.string,
            "candidates": c.string,
            "action_a": c.string,
            "action_b": c.string,
            "rate_gap": c.fraction,
            "conventionality": c.fraction,
            "scope": c.fraction,
            "min_ticks": lambda x, p: c.integer(x, p, minimum=1),
            "sample_size": lambda x, p: c.integer(x, p, minimum=1),
            "silent_action": c.string,
        },
        required=("kind",),
    )
    if not ok or not isinstance(probe, dict):
        return
    kind = probe.get("kind")
    needed = {
        "convention": ("actor", "observation", "from_action", "to_action"),
        "sanction": ("context", "signal"),
        "epsilon": ("context", "u", "v", "candidates"),
        "norm": ("context", "action_a", "action_b"),
    }.get(kind, ())
    for key in needed:
        if key not in probe:
            c.err(ptr, f"{kind} probes need {key!r}")
    if kind == "sanction":
        pair = "promoted" in probe and "demoted" in probe
        shift = "actor" in probe and "action" in probe
        if not pair and not shift:
            c.err(ptr, "sanction probes need promoted/demoted or actor/action")
    if "grid" in probe:
        grid = probe["grid"]
        if not isinstance(grid, list) or not all(_is_num(g) and 0 <= g <= 1 for g in grid):
            c.err(f"{ptr}/grid", "expected a list of fractions in [0, 1]")


def load_scenario(path: str) -> ScenarioConfig:
    """Parses and validates one scenario file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read scenario {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"cannot parse scenario {path}: {exc}") from exc
    if raw is None:
        raise ParseError(f"scenario {path} is empty")
    problems = validate_config(raw)
    if problems:
        raise SchemaError(problems)
    return ScenarioConfig(
        name=raw["name"],
        root_seed=raw["root_seed"],
        raw=raw,
        base_dir=os.path.dirname(os.path.abspath(path)),
    )


def _template(text: str, actor_id: str) -> str:
    return text.replace("{actor}", actor_id)


def _build_candidate_sets(raw_sets: dict) -> dict[str, tuple[SymbolSeq, ...]]:
    return {
        name: tuple(normalize(v) for v in values) for name, values in raw_sets.items()
    }


def build_table(
    spec: dict, candidate_sets: dict[str, tuple[SymbolSeq, ...]], base_dir: str
) -> TablePCN:
    tags = spec.get("tags")
    if "path" in spec:
        return TablePCN.load(os.path.join(base_dir, spec["path"]), tags=tags)
    table = TablePCN(tau=spec.get("tau", 1.0), tags=tags)
    echo = spec.get("echo")
    if echo:
        weight = echo.get("weight", 1.0)
        for set_name in echo["sets"]:
            for candidate in candidate_sets[set_name]:
                cid = candidate.render()
                toks = candidate.tokens
                features = list(toks) + [
                    f"{toks[i]} {toks[i + 1]}" for i in range(len(toks) - 1)
                ]
                for f in features:
                    table.add_weight(f, cid, weight)
    for feature, completion, weight in spec.get("weights", []):
        table.add_weight(feature, completion, weight)
    return table


def _build_logic(name: str, spec: Any) -> DecisionLogic:
    if isinstance(spec, str):
        return BUILTIN_LOGICS[spec]
    steps = tuple(
        LogicStep(
            kind=StepKind(step["kind"]),
            question=step.get("question", ""),
            template=step.get("template"),
            candidates=step.get("candidates"),
            k=step.get("k", 1),
        )
        for step in spec
    )
    return DecisionLogic(name, steps)


def _build_memories(
    spec: Any, actor_id: str, capacity: Optional[int], base_dir: str
) -> MemoryBank:
    if isinstance(spec, str):
        bank = load_jsonl(os.path.join(base_dir, spec), capacity=capacity)
        return bank
    bank = MemoryBank(capacity=capacity)
    for entry in spec or []:
        sanction = None
        if entry.get("sanction"):
            s = entry["sanction"]
            sanction = Sanction(
                by=_template(s["by"], actor_id),
                signal=normalize(_template(s["signal"], actor_id)),
                valence=Valence(s.get("valence", "unlabeled")),
            )
        record = make_record(
            time=entry.get("time", 0),
            observer=actor_id,
            subject=_template(entry.get("subject", actor_id), actor_id),
            observation=normalize(_template(entry["observation"], actor_id)),
            action=normalize(_template(entry["action"], actor_id)),
            sanction=sanction,
        )
        bank = write(bank, record)
    return bank


@dataclass
class Build:
    """Everything one experiment run needs, freshly constructed."""

    env: LMAE
    tables: dict[str, TablePCN]
    candidate_sets: dict[str, tuple[SymbolSeq, ...]]
    logics: dict[str, DecisionLogic]
    root: SeedStream

    def actor(self, actor_id: str) -> Actor:
        return self.env.actors[actor_id]


def build_actor(
    spec: dict,
    build: Build,
    base_dir: str,
    actor_id: Optional[str] = None,
) -> Actor:
    aid = actor_id or spec["id"]
    backend = spec.get("backend", "table")
    if backend == "table":
        completer = build.tables[spec["table"]]
    else:
        remote = spec.get("remote", {})
        completer = RemotePCN(
            endpoint=remote.get("endpoint", "http://localhost:8000"),
            timeout=remote.get("timeout", 10.0),
            max_retries=remote.get("max_retries", 2),
            token_env=remote.get("token_env", "NORMLAB_PCN_TOKEN"),
        )
    sets = dict(build.candidate_sets)
    for name, values in (spec.get("candidate_sets") or {}).items():
        sets[name] = tuple(normalize(_template(v, aid)) for v in values)
    logic_name = spec["logic"]
    logic = build.logics[logic_name]
    return Actor(
        id=aid,
        persona=normalize(_template(spec.get("persona", aid), aid)),
        completer=completer,
        bank=_build_memories(spec.get("memories"), aid, spec.get("capacity"), base_dir),
        logic=logic,
        candidate_sets=sets,
        seed=build.root.child("actor", aid),
        role=spec.get("role", "citizen"),
        retrieval_enabled=spec.get("retrieval", True),
        selection=spec.get("selection", "sample"),
    )


def _build_rules(raw_rules: list[dict]) -> list[TransitionRule]:
    rules = []
    for rule in raw_rules:
        clause = None
        if rule.get("sanction"):
            s = rule["sanction"]
            clause = SanctionClause(
                by_role=s["by_role"],
                signal=s["signal"],
                valence=Valence(s.get("valence", "disapprove")),
                trigger=s.get("trigger"),
            )
        rules.append(
            TransitionRule(
                name=rule.get("name", ""),
                when_scene=rule.get("when_scene"),
                when_action=rule.get("when_action"),
                effect=rule.get("effect", "{scene}"),
                sanction=clause,
            )
        )
    return rules


def build_env(
    cfg: ScenarioConfig,
    root_seed: Optional[int] = None,
    witnesses: Optional[str | list[str]] = None,
) -> Build:
    """Constructs a fresh environment with fresh actors from a scenario.

    Each call starts from scratch, so building twice with the same seed
    yields two worlds that evolve identically.
    """
    raw = cfg.raw
    root = SeedStream(root_seed if root_seed is not None else cfg.root_seed)
    candidate_sets = _build_candidate_sets(raw.get("candidate_sets", {}))
    tables = {
        name: build_table(spec, candidate_sets, cfg.base_dir)
        for name, spec in raw.get("tables", {}).items()
    }
    logics = dict(BUILTIN_LOGICS)
    for name, spec in raw.get("logics", {}).items():
        logics[name] = _build_logic(name, spec)

    env_spec = raw["environment"]
    env = LMAE(
        scene=normalize(env_spec["scene"]),
        rules=_build_rules(env_spec["rules"]),
        observation_template=env_spec.get("observation_template", "{actor} sees {scene}"),
        role_templates=env_spec.get("role_templates"),
        witnesses=witnesses if witnesses is not None else env_spec.get("witnesses", "all"),
    )
    build = Build(env=env, tables=tables, candidate_sets=candidate_sets, logics=logics, root=root)

    for spec in raw.get("actors", []):
        env.add_actor(build_actor(spec, build, cfg.base_dir))
    for group in raw.get("actor_groups", []):
        for i in range(group["count"]):
            aid = f"{group['id_prefix']}{i}"
            env.add_actor(build_actor(group, build, cfg.base_dir, actor_id=aid))
    return build


def build_record_filter(
    spec: Optional[dict], actor_id: str
) -> Optional[Callable[[MemoryRecord], bool]]:
    """Compiles the consolidation filter mini-language to a predicate."""
    if not spec:
        return None
    want_sanction = spec.get("has_sanction")
    subject = spec.get("subject")
    action_in = spec.get("action_in")
    actions = {normalize(a) for a in action_in} if action_in else None

    def predicate(record: MemoryRecord) -> bool:
        if want_sanction is not None and (record.sanction is not None) != want_sanction:
            return False
        if subject is not None:
            expected = actor_id if subject == "$self" else subject
            if record.subject != expected:
                return False
        if actions is not None and record.action not in actions:
            return False
        return True

    return predicate
