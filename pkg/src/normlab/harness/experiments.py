"""Experiment drivers.

Each run_* function builds a fresh world from a scenario, executes it,
applies the verdict rule for its experiment kind, and writes artifacts
(events.jsonl, metrics, report.json). Output is byte-stable: building
twice from the same scenario and seed produces identical files.
"""

from __future__ import annotations

import json
import os
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Optional, Sequence

from ..consolidation import ConsolidationConfig, consolidate, implicit_explicit_gap
from ..core import SymbolSeq, normalize
from ..env import Event, run, tick, insert_actor, write_log
from ..errors import ConfigError, InsufficientData
from ..pcn import PatternCompleter
from ..probes import (
    NormThresholds,
    classify_norm,
    convention_sensitivity_contextfree,
    convention_sensitivity_contextual,
    epsilon_similar,
    sanction_sensitivity,
    sanction_test,
)
from .config import Build, ScenarioConfig, build_actor, build_env, build_record_filter

METRICS_FIELDS = ("tick", "compliance_rate", "sanction_count", "newcomer_compliance")


@dataclass(frozen=True)
class MetricsRow:
    tick: int
    compliance_rate: float
    sanction_count: int
    newcomer_compliance: Optional[float] = None


@dataclass(frozen=True)
class ExperimentResult:
    name: str
    kind: str
    verdict: Optional[bool]
    summary: dict
    rows: tuple[MetricsRow, ...] = ()
    paths: tuple[str, ...] = ()


def collect_metrics(
    log: Sequence[Event],
    ticks: int,
    focal: SymbolSeq,
    newcomer_id: Optional[str] = None,
) -> list[MetricsRow]:
    acts: dict[int, list[tuple[str, str]]] = defaultdict(list)
    sanctions: Counter = Counter()
    for e in log:
        if e.kind == "act":
            acts[e.tick].append((e.data["actor"], e.data["action"]))
        elif e.kind == "sanction":
            sanctions[e.tick] += 1
    key = focal.render()
    rows = []
    for t in range(ticks):
        entries = acts.get(t, [])
        comply = (
            sum(1 for _, a in entries if a == key) / len(entries) if entries else 0.0
        )
        nc = None
        if newcomer_id is not None:
            for actor_id, a in entries:
                if actor_id == newcomer_id:
                    nc = 1.0 if a == key else 0.0
        rows.append(MetricsRow(t, comply, sanctions.get(t, 0), nc))
    return rows


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_metrics(rows: Sequence[MetricsRow], path: str, fmt: str = "csv") -> None:
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unknown metrics format {fmt!r}")
    with open(path, "w", encoding="utf-8") as fh:
        if fmt == "csv":
            fh.write(",".join(METRICS_FIELDS) + "\n")
            for row in rows:
                fh.write(
                    ",".join(_cell(getattr(row, f)) for f in METRICS_FIELDS) + "\n"
                )
        else:
            for row in rows:
                fh.write(
                    json.dumps(
                        {f: getattr(row, f) for f in METRICS_FIELDS}, sort_keys=True
                    )
                    + "\n"
                )


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def _write_artifacts(
    cfg: ScenarioConfig,
    out_dir: Optional[str],
    log: Optional[Sequence[Event]],
    rows: Sequence[MetricsRow],
    report: dict,
) -> tuple[str, ...]:
    target = out_dir if out_dir is not None else cfg.out_dir
    os.makedirs(target, exist_ok=True)
    paths = []
    if log is not None:
        events_path = os.path.join(target, "events.jsonl")
        write_log(log, events_path)
        paths.append(events_path)
    if rows:
        ext = "csv" if cfg.metrics_format == "csv" else "jsonl"
        metrics_path = os.path.join(target, f"metrics.{ext}")
        emit_metrics(rows, metrics_path, cfg.metrics_format)
        paths.append(metrics_path)
    report_path = os.path.join(target, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
    paths.append(report_path)
    return tuple(paths)


def _focal(exp: dict) -> SymbolSeq:
    return normalize(exp["focal_action"])


def run_plain(
    cfg: ScenarioConfig,
    seed: Optional[int] = None,
    ticks: Optional[int] = None,
    out_dir: Optional[str] = None,
) -> ExperimentResult:
    exp = cfg.experiment
    t = ticks if ticks is not None else exp["ticks"]
    build = build_env(cfg, root_seed=seed)
    run(build.env, t)
    rows = collect_metrics(build.env.log, t, _focal(exp))
    summary = {
        "ticks": t,
        "mean_compliance": _mean([r.compliance_rate for r in rows]),
        "final_compliance": rows[-1].compliance_rate if rows else None,
        "sanctions": sum(r.sanction_count for r in rows),
    }
    report = {"name": cfg.name, "kind": "run", "verdict": None, "summary": summary}
    paths = _write_artifacts(cfg, out_dir, build.env.log, rows, report)
    return ExperimentResult(cfg.name, "run", None, summary, tuple(rows), paths)


def run_stability(
    cfg: ScenarioConfig,
    seed: Optional[int] = None,
    ticks: Optional[int] = None,
    out_dir: Optional[str] = None,
) -> ExperimentResult:
    exp = cfg.experiment
    t = ticks if ticks is not None else exp["ticks"]
    if t <= 0:
        raise InsufficientData("stability needs at least one tick")
    window = min(exp.get("window", max(1, t // 4)), t)
    threshold = exp.get("threshold", 0.9)
    build = build_env(cfg, root_seed=seed)
    run(build.env, t)
    rows = collect_metrics(build.env.log, t, _focal(exp))
    final_mean = _mean([r.compliance_rate for r in rows[-window:]])
    verdict = final_mean >= threshold
    summary = {
        "ticks": t,
        "window": window,
        "threshold": threshold,
        "final_mean": final_mean,
        "sanctions": sum(r.sanction_count for r in rows),
    }
    report = {
        "name": cfg.name,
        "kind": "stability",
        "verdict": verdict,
        "summary": summary,
    }
    paths = _write_artifacts(cfg, out_dir, build.env.log, rows, report)
    return ExperimentResult(cfg.name, "stability", verdict, summary, tuple(rows), paths)


def run_adoption(
    cfg: ScenarioConfig,
    seed: Optional[int] = None,
    ticks: Optional[int] = None,
    out_dir: Optional[str] = None,
) -> ExperimentResult:
    exp = cfg.experiment
    t = ticks if ticks is not None else exp["ticks"]
    insert_tick = exp.get("insert_tick", t // 2)
    naive_window = exp.get("naive_window", 10)
    naive_threshold = exp.get("naive_threshold", 0.6)
    adopted_threshold = exp.get("adopted_threshold", 0.8)
    if insert_tick + naive_window > t:
        raise InsufficientData(
            f"need at least {insert_tick + naive_window} ticks to score the "
            f"naive window, got {t}"
        )
    window = min(exp.get("window", max(1, t // 4)), t - insert_tick)

    build = build_env(cfg, root_seed=seed)
    env = build.env
    if not exp.get("newcomer_witness", True):
        env.witnesses = tuple(env.actors)
    newcomer = build_actor(exp["newcomer"], build, cfg.base_dir)
    insert_actor(env, newcomer, at_tick=insert_tick)

    every = exp.get("consolidate_every")
    cons_cfg = None
    if every:
        spec = exp.get("consolidation", {})
        cons_cfg = ConsolidationConfig(
            replay_passes=spec.get("passes", 10),
            learning_rate=spec.get("learning_rate", 0.1),
            record_filter=build_record_filter(spec.get("filter"), newcomer.id),
        )
    for _ in range(t):
        tick(env)
        if (
            cons_cfg is not None
            and newcomer.id in env.actors
            and env.tick_index > insert_tick
            and (env.tick_index - insert_tick) % every == 0
        ):
            nc = env.actors[newcomer.id]
            nc.completer = consolidate(nc.completer, nc.bank, cons_cfg)

    rows = collect_metrics(env.log, t, _focal(exp), newcomer_id=newcomer.id)
    naive_rows = [
        r.newcomer_compliance
        for r in rows[insert_tick : insert_tick + naive_window]
        if r.newcomer_compliance is not None
    ]
    adopted_rows = [
        r.newcomer_compliance
        for r in rows[-window:]
        if r.newcomer_compliance is not None
    ]
    naive_mean = _mean(naive_rows)
    adopted_mean = _mean(adopted_rows)
    verdict = naive_mean < naive_threshold and adopted_mean >= adopted_threshold
    summary = {
        "ticks": t,
        "insert_tick": insert_tick,
        "naive_window": naive_window,
        "adopted_window": window,
        "naive_threshold": naive_threshold,
        "adopted_threshold": adopted_threshold,
        "naive_mean": naive_mean,
        "adopted_mean": adopted_mean,
        "sanctions": sum(r.sanction_count for r in rows),
    }
    report = {
        "name": cfg.name,
        "kind": "adoption",
        "verdict": verdict,
        "summary": summary,
    }
    paths = _write_artifacts(cfg, out_dir, env.log, rows, report)
    return ExperimentResult(cfg.name, "adoption", verdict, summary, tuple(rows), paths)


def _probe_completer(build: Build, probe: dict) -> PatternCompleter:
    if "table" in probe:
        return build.tables[probe["table"]]
    if "actor" in probe:
        return build.env.actors[probe["actor"]].completer
    raise ConfigError("this probe needs a 'table' or an 'actor' to score with")


def _norm_thresholds(probe: dict) -> NormThresholds:
    kwargs = {}
    for key in ("rate_gap", "conventionality", "scope", "min_ticks", "sample_size",
                "silent_action"):
        if key in probe:
            kwargs[key] = probe[key]
    if "grid" in probe:
        kwargs["f_grid"] = tuple(float(f) for f in probe["grid"])
    return NormThresholds(**kwargs)


def run_probe(
    cfg: ScenarioConfig,
    seed: Optional[int] = None,
    ticks: Optional[int] = None,
    out_dir: Optional[str] = None,
    grid: Optional[Sequence[float]] = None,
) -> ExperimentResult:
    exp = cfg.experiment
    probe = exp["probe"]
    kind = probe["kind"]
    t = ticks if ticks is not None else exp.get("ticks", 0)
    build = build_env(cfg, root_seed=seed)
    run(build.env, t)

    if kind == "convention":
        actor = build.env.actors[probe["actor"]]
        observation = normalize(probe["observation"])
        from_action = normalize(probe["from_action"])
        to_action = normalize(probe["to_action"])
        matcher = probe.get("matcher", "exact-field")
        epsilon = probe.get("epsilon", 0.1)
        probe_completer = actor.completer if matcher == "epsilon-similar" else None
        probe_candidates = (
            build.candidate_sets[probe["candidates"]] if "candidates" in probe else None
        )
        f_grid = grid if grid is not None else probe.get("grid")
        if f_grid is not None or "context" in probe:
            sens = convention_sensitivity_contextual(
                actor,
                context=normalize(probe.get("context", "")),
                observation=observation,
                from_action=from_action,
                to_action=to_action,
                f_grid=tuple(float(f) for f in f_grid) if f_grid else (0.0, 0.5, 1.0),
                matcher=matcher,
                epsilon=epsilon,
                method=probe.get("method", "auto"),
                probe=probe_completer,
                probe_candidates=probe_candidates,
            )
        else:
            sens = convention_sensitivity_contextfree(
                actor,
                observation,
                from_action,
                to_action,
                matcher=matcher,
                epsilon=epsilon,
                probe=probe_completer,
                probe_candidates=probe_candidates,
            )
        verdict: Optional[bool] = sens.verdict
        detail = sens.to_json_dict()
    elif kind == "sanction":
        context = normalize(probe["context"])
        signal = normalize(probe["signal"])
        if "promoted" in probe and "demoted" in probe:
            completer = _probe_completer(build, probe)
            verdict = sanction_test(
                completer,
                context,
                signal,
                normalize(probe["promoted"]),
                normalize(probe["demoted"]),
            )
            detail = {
                "verdict": verdict,
                "promoted": probe["promoted"],
                "demoted": probe["demoted"],
            }
        else:
            actor = build.env.actors[probe["actor"]]
            report = sanction_sensitivity(
                actor,
                context,
                signal,
                normalize(probe["action"]),
                injected=probe.get("injected", 3),
            )
            verdict = report.verdict
            detail = report.to_json_dict()
    elif kind == "epsilon":
        completer = _probe_completer(build, probe)
        similar, kl = epsilon_similar(
            completer,
            normalize(probe["context"]),
            normalize(probe["u"]),
            normalize(probe["v"]),
            epsilon=probe.get("epsilon", 0.1),
            candidates=build.candidate_sets[probe["candidates"]],
        )
        verdict = similar
        detail = {"similar": similar, "kl": kl, "epsilon": probe.get("epsilon", 0.1)}
    elif kind == "norm":
        norm_report = classify_norm(
            build.env.log,
            list(build.env.actors.values()),
            normalize(probe["context"]),
            normalize(probe["action_a"]),
            normalize(probe["action_b"]),
            _norm_thresholds(probe),
        )
        verdict = norm_report.verdict == "normative"
        detail = norm_report.to_json_dict()
    else:
        raise ConfigError(f"unknown probe kind {kind!r}")

    rows: list[MetricsRow] = []
    if t > 0 and "focal_action" in exp:
        rows = collect_metrics(build.env.log, t, _focal(exp))
    report_dict = {
        "name": cfg.name,
        "kind": f"probe:{kind}",
        "verdict": verdict,
        "probe": detail,
    }
    paths = _write_artifacts(
        cfg, out_dir, build.env.log if t > 0 else None, rows, report_dict
    )
    summary = {"probe": kind, **detail}
    return ExperimentResult(
        cfg.name, f"probe:{kind}", verdict, summary, tuple(rows), paths
    )


def run_consolidation(
    cfg: ScenarioConfig,
    seed: Optional[int] = None,
    ticks: Optional[int] = None,
    out_dir: Optional[str] = None,
    passes: Optional[int] = None,
) -> ExperimentResult:
    exp = cfg.experiment
    t = ticks if ticks is not None else exp.get("ticks", 0)
    build = build_env(cfg, root_seed=seed)
    run(build.env, t)
    actor = build.env.actors[exp["actor"]]
    spec = exp.get("consolidation", {})
    cons_cfg = ConsolidationConfig(
        replay_passes=passes if passes is not None else spec.get("passes", 10),
        learning_rate=spec.get("learning_rate", 0.1),
        record_filter=build_record_filter(spec.get("filter"), actor.id),
    )
    observation = normalize(exp["observation"])
    gap = implicit_explicit_gap(actor, observation, cons_cfg)
    consolidated = consolidate(actor.completer, actor.bank, cons_cfg)

    target = out_dir if out_dir is not None else cfg.out_dir
    os.makedirs(target, exist_ok=True)
    table_path = os.path.join(target, f"table_v{consolidated.version}.txt")
    consolidated.save(table_path)

    verdict = None
    if "gap_threshold" in exp:
        verdict = gap.post_gap <= exp["gap_threshold"]
    summary = {**gap.to_json_dict(), "table": table_path, "records": len(actor.bank.records)}
    report = {
        "name": cfg.name,
        "kind": "consolidation",
        "verdict": verdict,
        "summary": summary,
    }
    rows: list[MetricsRow] = []
    if t > 0 and "focal_action" in exp:
        rows = collect_metrics(build.env.log, t, _focal(exp))
    paths = _write_artifacts(
        cfg, out_dir, build.env.log if t > 0 else None, rows, report
    )
    return ExperimentResult(
        cfg.name, "consolidation", verdict, summary, tuple(rows), paths + (table_path,)
    )


RUNNERS = {
    "run": run_plain,
    "stability": run_stability,
    "adoption": run_adoption,
    "probe": run_probe,
    "consolidation": run_consolidation,
}


def run_experiment(cfg: ScenarioConfig, **kwargs) -> ExperimentResult:
    runner = RUNNERS[cfg.kind]
    return runner(cfg, **kwargs)
