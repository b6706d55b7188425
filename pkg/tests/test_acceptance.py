"""End-to-end acceptance gate.

One test per shipped guarantee, so `pytest -v tests/test_acceptance.py`
reads as a checklist with one pass/fail line per guarantee. Every
numeric claim is checked against an oracle computed inside the test
(direct summation, subset enumeration, four-score brute force,
exhaustive joint enumeration) rather than against the engine's own
arithmetic, and the stated runtime budgets are asserted too.
"""

import itertools
import math
import os
import random
import time
from dataclasses import replace

import pytest

from normlab.actor import (
    Actor,
    DecisionLogic,
    LogicStep,
    StepKind,
    deliberate,
    policy_distribution,
)
from normlab.consolidation import ConsolidationConfig, consolidate, precedence_test
from normlab.core import (
    Sanction,
    SeedStream,
    SymbolSeq,
    Valence,
    make_record,
    normalize,
)
from normlab.env import collective_policy
from normlab.harness import build_env, load_scenario, run_experiment
from normlab.memory import MemoryBank, write
from normlab.pcn import CompletionDistribution, TablePCN, score
from normlab.probes import (
    convention_sensitivity_contextual,
    kl_divergence,
    pipeline_distribution,
    sanction_test,
)

import normlab.harness as _harness

SCENARIO_DIR = os.path.join(os.path.dirname(_harness.__file__), "..", "scenarios")


def scenario(name):
    return load_scenario(os.path.join(SCENARIO_DIR, name))


def sigma(d):
    return math.exp(d) / (math.exp(d) + 1.0)


def ok(label, detail):
    print(f"[PASS] {label}: {detail}")


# --------------------------------------------------------------- 1 golden


def test_golden_snack_triple():
    """Base picks the apple; the overheard request flips it to the banana;
    the remembered prohibition strictly lowers the apple's probability."""
    t0 = time.perf_counter()
    alice = build_env(scenario("golden.yaml")).env.actors["alice"]
    obs = normalize("alice is hungry and sees an apple and a banana on the plate")
    apple = normalize("alice eats the apple")
    banana = normalize("alice eats the banana")

    base = pipeline_distribution(alice, obs)
    assert base.argmax() == apple
    assert base.prob_of(apple) == pytest.approx(sigma(2.3), abs=1e-12)

    bob_bank = write(
        alice.bank,
        make_record(
            3, "alice", "bob",
            normalize("alice talks with her friend bob"),
            normalize("bob says to save the apple for him"),
        ),
    )
    with_bob = pipeline_distribution(alice, obs, bank=bob_bank)
    assert with_bob.argmax() == banana
    assert with_bob.prob_of(apple) == pytest.approx(sigma(-1.4), abs=1e-12)

    rule_bank = write(
        alice.bank,
        make_record(
            3, "alice", "elders",
            normalize("alice recalls the village rule"),
            normalize("it is forbidden to eat apples"),
        ),
    )
    with_rule = pipeline_distribution(alice, obs, bank=rule_bank)
    assert with_rule.prob_of(apple) < base.prob_of(apple)
    assert with_rule.prob_of(apple) == pytest.approx(sigma(1.3), abs=1e-12)

    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    ok(
        "golden triple",
        f"p(apple) {base.prob_of(apple):.4f} -> request {with_bob.prob_of(apple):.4f}"
        f" -> prohibition {with_rule.prob_of(apple):.4f} in {elapsed:.2f}s",
    )


# ------------------------------------------------------------------- 2 kl


def test_kl_divergence_suite():
    """10^4 random pairs: nonnegative always, zero exactly when the
    distributions agree, and the golden asymmetric pair lands on
    0.3681 / 0.5108 nats to four decimals."""
    t0 = time.perf_counter()
    rng = random.Random(20260814)
    checked = equal_pairs = 0
    for i in range(10_000):
        n = rng.randint(2, 5)
        cands = tuple(SymbolSeq((f"c{j}",)) for j in range(n))
        p = CompletionDistribution.from_masses(
            cands, [rng.uniform(1e-6, 1.0) for _ in range(n)]
        )
        if i % 10 == 0:
            q = p
        else:
            q = CompletionDistribution.from_masses(
                cands, [rng.uniform(1e-6, 1.0) for _ in range(n)]
            )
        kl = kl_divergence(p, q)
        assert kl > -1e-12
        equal = all(abs(a - b) <= 1e-12 for a, b in zip(p.probs, q.probs))
        if equal:
            assert kl <= 1e-12
            equal_pairs += 1
        if kl <= 1e-12:
            assert all(abs(a - b) < 1e-6 for a, b in zip(p.probs, q.probs))
        checked += 1

    p = CompletionDistribution((SymbolSeq(("a",)), SymbolSeq(("b",))), (0.9, 0.1))
    q = CompletionDistribution((SymbolSeq(("a",)), SymbolSeq(("b",))), (0.5, 0.5))
    assert kl_divergence(p, q) == pytest.approx(0.3681, abs=5e-5)
    assert kl_divergence(q, p) == pytest.approx(0.5108, abs=5e-5)

    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    ok("kl suite", f"{checked} pairs ({equal_pairs} equal) in {elapsed:.2f}s")


# -------------------------------------------------------------- 3 rewrite

REWRITE_PAIRS = [
    ("shares the catch", "keeps the catch"),
    ("alice eats the apple", "alice eats the banana"),
    ("stacks the nets", "burns the nets"),
]
REWRITE_SCENES = [
    "the village lands the catch",
    "an apple and a banana on the plate",
    "the nets dry on the shore",
]
EXTRA_WORDS = ["dawn", "dusk", "rain", "wind", "festival", "tide"]
SIGNALS = ["that is not our way", "we do not do that here"]
GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


def rewrite_fixture(i):
    """A randomized precedent-following fixture. Echo weights map each
    action's own features to that action; any extra weights land on
    words the two actions share or never mention, so rewriting precedent
    is the only lever. Retrieval covers the whole bank."""
    rng = random.Random(778_000 + i)
    frm, to = (normalize(a) for a in rng.choice(REWRITE_PAIRS))
    scene = rng.choice(REWRITE_SCENES)
    obs = normalize(f"someone sees {scene}")
    differing = set(frm.tokens) ^ set(to.tokens)

    table = TablePCN()
    for cand in (frm, to):
        w = rng.uniform(0.2, 1.2)
        toks = cand.tokens
        for f in list(toks) + [f"{a} {b}" for a, b in zip(toks, toks[1:])]:
            table.add_weight(f, cand.render(), w)
    for word in rng.sample(EXTRA_WORDS + list(obs.tokens), k=4):
        if word in differing:
            continue
        table.add_weight(word, rng.choice((frm, to)).render(), round(rng.uniform(0.0, 1.5), 3))

    bank = MemoryBank()
    t = 0
    for _ in range(rng.randint(1, 6)):
        sanction = None
        if rng.random() < 0.3:
            sanction = Sanction("elder", normalize(rng.choice(SIGNALS)), Valence.DISAPPROVE)
        bank = write(bank, make_record(t, "px", "someone", obs, frm, sanction))
        t += 1
    for _ in range(rng.randint(0, 2)):
        other = rng.choice([s for s in REWRITE_SCENES if s != scene])
        bank = write(
            bank,
            make_record(t, "px", "someone", normalize(f"someone sees {other}"), rng.choice((frm, to))),
        )
        t += 1

    actor = Actor(
        id="px",
        persona=normalize("px the villager"),
        completer=table,
        bank=bank,
        logic=DecisionLogic(
            "villager",
            (
                LogicStep(StepKind.RETRIEVE, k=len(bank)),
                LogicStep(StepKind.POLICY, candidates="moves"),
            ),
        ),
        candidate_sets={"moves": (frm, to)},
        seed=SeedStream(778_000 + i).child("actor", "px"),
        selection="argmax",
    )
    context = SymbolSeq(tuple(rng.sample(EXTRA_WORDS, k=rng.randint(0, 2))))
    return actor, context, obs, frm, to


def enumeration_oracle(actor, context, obs, frm, to):
    matches = [
        i
        for i, r in enumerate(actor.bank.records)
        if r.observation == obs and r.action == frm
    ]
    means = []
    for f in GRID:
        n = math.floor(f * len(matches) + 0.5)
        total = 0.0
        combos = 0
        for chosen in itertools.combinations(matches, n):
            records = tuple(
                make_record(r.time, r.observer, r.subject, r.observation, to, r.sanction)
                if i in chosen
                else r
                for i, r in enumerate(actor.bank.records)
            )
            dist = pipeline_distribution(
                actor,
                obs,
                bank=replace(actor.bank, records=records),
                extra_context=context,
                seed=actor.seed.child("oracle"),
            )
            total += dist.prob_of(to)
            combos += 1
        means.append(total / combos)
    return means, len(matches)


def test_graded_precedent_rewrite_monotonicity():
    t0 = time.perf_counter()
    worst_mc = 0.0
    for i in range(100):
        actor, context, obs, frm, to = rewrite_fixture(i)
        oracle, matched = enumeration_oracle(actor, context, obs, frm, to)
        assert matched <= 6
        for lo, hi in zip(oracle, oracle[1:]):
            assert hi >= lo - 1e-9, (i, oracle)

        kwargs = dict(
            context=context, observation=obs, from_action=frm, to_action=to, f_grid=GRID
        )
        exact = convention_sensitivity_contextual(actor, method="exact", **kwargs)
        assert exact.matched == matched
        for got, want in zip(exact.prob_to, oracle):
            assert got == pytest.approx(want, abs=1e-9), i

        mc = convention_sensitivity_contextual(actor, method="montecarlo", **kwargs)
        for got, want in zip(mc.prob_to, oracle):
            worst_mc = max(worst_mc, abs(got - want))
            assert got == pytest.approx(want, abs=0.02), i

    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    ok(
        "graded rewrite",
        f"100 fixtures monotone, exact==oracle, mc off by <= {worst_mc:.4f} in {elapsed:.1f}s",
    )


# ------------------------------------------------------------- 4 sanction


def test_sanction_definition_identity():
    """The engine verdict and the literal four-score comparison must
    never disagree."""
    rng = random.Random(20260814)
    vocabulary = ["sun", "rain", "wind", "left", "right", "go", "stay", "now"]
    a, b = normalize("pick left"), normalize("pick right")
    disagreements = 0
    for _ in range(1000):
        table = TablePCN()
        for _w in range(rng.randint(1, 8)):
            table.add_weight(
                rng.choice(vocabulary),
                rng.choice((a, b)).render(),
                round(rng.uniform(0.0, 3.0), 3),
            )
        ctx = SymbolSeq(tuple(rng.choices(vocabulary, k=rng.randint(1, 6))))
        sig = SymbolSeq(tuple(rng.choices(vocabulary, k=rng.randint(1, 4))))
        got = sanction_test(table, ctx, sig, promoted=a, demoted=b)
        base = score(table, ctx, (a, b))
        shifted = score(table, ctx + sig, (a, b))
        want = (
            base.prob_of(b) > base.prob_of(a)
            and shifted.prob_of(b) < shifted.prob_of(a)
        )
        if got != want:
            disagreements += 1
    assert disagreements == 0
    ok("sanction identity", "1000 fuzzed instances, 0 disagreements")


# ----------------------------------------------------------- 5 collective


def test_collective_policy_factorization():
    actors = []
    rng = random.Random(5)
    for idx, n_candidates in enumerate((2, 3, 4)):
        aid = f"v{idx}"
        cands = tuple(normalize(f"option {j} for {aid}") for j in range(n_candidates))
        table = TablePCN()
        for c in cands:
            table.add_weight(aid, c.render(), round(rng.uniform(0.0, 2.0), 3))
        actors.append(
            Actor(
                id=aid,
                persona=normalize(f"{aid} the villager"),
                completer=table,
                bank=MemoryBank(),
                logic=DecisionLogic("reflex", (LogicStep(StepKind.POLICY, candidates="moves"),)),
                candidate_sets={"moves": cands},
                seed=SeedStream(5).child("actor", aid),
                selection="argmax",
            )
        )
    workspaces = [
        deliberate(a, normalize(f"{a.id} stands in the square"), tick=0) for a in actors
    ]
    joint = collective_policy(actors, workspaces)
    dists = [policy_distribution(a, ws) for a, ws in zip(actors, workspaces)]

    assert len(joint.candidates) == 2 * 3 * 4
    assert sum(joint.probs) == pytest.approx(1.0, abs=1e-12)
    worst = 0.0
    for combo in itertools.product(*[range(len(d)) for d in dists]):
        key = tuple(dists[i].candidates[j] for i, j in enumerate(combo))
        product = 1.0
        for i, j in enumerate(combo):
            product *= dists[i].probs[j]
        got = joint.prob_of(key)
        worst = max(worst, abs(got - product))
        assert got == pytest.approx(product, abs=1e-12)
    ok("collective factorization", f"24 joint entries, max deviation {worst:.1e}")


# ------------------------------------------------------------ 6 stability


def test_convention_stability_and_ablation(tmp_path):
    t0 = time.perf_counter()
    held = run_experiment(scenario("stability.yaml"), out_dir=str(tmp_path / "held"))
    assert held.verdict is True
    assert held.summary["final_mean"] >= 0.9

    split = run_experiment(
        scenario("stability_split.yaml"), out_dir=str(tmp_path / "split")
    )
    assert split.verdict is False
    assert split.summary["final_mean"] < 0.6

    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    ok(
        "stability",
        f"held {held.summary['final_mean']:.3f} >= 0.9, "
        f"unsanctioned split {split.summary['final_mean']:.3f} < 0.6 in {elapsed:.1f}s",
    )


# ------------------------------------------------------------- 7 adoption


def test_newcomer_adoption_and_ablation(tmp_path):
    t0 = time.perf_counter()
    adopted = run_experiment(scenario("adoption.yaml"), out_dir=str(tmp_path / "a"))
    assert adopted.verdict is True
    assert adopted.summary["naive_mean"] < 0.6
    assert adopted.summary["adopted_mean"] >= 0.8

    deaf = run_experiment(
        scenario("adoption_nowitness.yaml"), out_dir=str(tmp_path / "b")
    )
    assert deaf.verdict is False

    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    ok(
        "adoption",
        f"naive {adopted.summary['naive_mean']:.2f} -> adopted "
        f"{adopted.summary['adopted_mean']:.2f}; unwitnessed newcomer stays at "
        f"{deaf.summary['adopted_mean']:.2f} in {elapsed:.1f}s",
    )


# -------------------------------------------------------- 8 consolidation


def test_consolidation_gap_precedence_additivity(tmp_path):
    cfg = scenario("consolidation.yaml")
    result = run_experiment(cfg, out_dir=str(tmp_path / "c"))
    assert result.verdict is True
    assert result.summary["post_gap"] <= 0.05

    alice = build_env(cfg).env.actors["alice"]
    report = precedence_test(
        alice.completer,
        alice.bank,
        context=normalize(cfg.experiment["observation"]),
        contradiction=normalize("it is forbidden to eat apples"),
        action=normalize("alice eats the apple"),
        alternative=normalize("alice eats the banana"),
        cfg=ConsolidationConfig(replay_passes=2, learning_rate=0.1),
    )
    assert report.verdict is True
    assert report.delta_post < report.delta_pre

    rng = random.Random(42)
    vocabulary = ["apple", "banana", "plate", "market", "rain", "rule"]
    actions = (normalize("takes it"), normalize("leaves it"))
    worst = 0.0
    for _ in range(40):
        def random_bank(start):
            bank = MemoryBank()
            t = start
            for _r in range(rng.randint(1, 4)):
                obs = SymbolSeq(tuple(rng.choices(vocabulary, k=rng.randint(1, 5))))
                bank = write(bank, make_record(t, "me", "me", obs, rng.choice(actions)))
                t += 1
            return bank, t

        b1, t_end = random_bank(0)
        b2, _ = random_bank(t_end)
        cfg_r = ConsolidationConfig(
            replay_passes=rng.randint(1, 5), learning_rate=round(rng.uniform(0.01, 0.5), 3)
        )
        base = TablePCN({("plate", actions[0].render()): 1.0})
        chunked = consolidate(consolidate(base, b1, cfg_r), b2, cfg_r)
        whole = consolidate(base, MemoryBank(records=b1.records + b2.records), cfg_r)
        assert set(chunked.weights) == set(whole.weights)
        for cell, w in whole.weights.items():
            worst = max(worst, abs(chunked.weights[cell] - w))
            assert chunked.weights[cell] == pytest.approx(w, abs=1e-12)

    ok(
        "consolidation",
        f"post gap {result.summary['post_gap']:.2e} <= 0.05, precedence "
        f"{report.delta_pre:.3f} -> {report.delta_post:.2e}, additivity off by {worst:.1e}",
    )


# ----------------------------------------------------------- 9 determinism


def test_shipped_scenarios_are_deterministic(tmp_path):
    names = sorted(f for f in os.listdir(SCENARIO_DIR) if f.endswith(".yaml"))
    assert len(names) == 9
    compared = 0
    for name in names:
        cfg = scenario(name)
        outs = [tmp_path / name / "a", tmp_path / name / "b"]
        for out in outs:
            run_experiment(cfg, out_dir=str(out))
        listings = [sorted(os.listdir(out)) for out in outs]
        assert listings[0] == listings[1], name
        for artifact in listings[0]:
            blobs = []
            for out in outs:
                blob = (out / artifact).read_bytes()
                # reports may quote the output directory itself
                blobs.append(blob.replace(str(out).encode(), b"@OUT@"))
            assert blobs[0] == blobs[1], (name, artifact)
            compared += 1
    ok("determinism", f"{len(names)} scenarios, {compared} artifacts byte-identical")
