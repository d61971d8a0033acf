"""Acceptance criteria, one test each, at their stated tolerances.

Each test records a one-line verdict that is printed in the terminal summary.
"""

from __future__ import annotations

import collections
import csv
import io
import itertools
import json
import time
from pathlib import Path

import numpy as np
import pytest

from envdt.analytics import coverage, simpson
from envdt.bridge import Dispatcher, TcpEndpoint, TwinStubServer
from envdt.engine import MachineRuntime, SimulationConfig, find_transition, load_trace, replay, run
from envdt.experiment import load_plan, run_plan, trace_dir
from envdt.instantiator import check_constraints, instantiate
from envdt.model import element_census, flatten_elements
from envdt.stochastic import DISTRIBUTIONS, DistributionSpec, RandomStream

from conftest import DEVICES, FIXTURES, PARAMS, record_verdict

GOLDEN = Path(__file__).parent / "golden"

CENSUS = {
    "karie": (8, 11, 9, 13, 12, 8, 6, 32, 70, 54, 40, 46),
    "medido": (7, 10, 9, 12, 11, 7, 6, 23, 51, 39, 31, 36),
    "pilly": (5, 10, 7, 8, 9, 4, 5, 12, 26, 19, 13, 22),
}


def test_criterion_1_fixture_fidelity(models):
    began = time.perf_counter()
    got = {d: tuple(vars(element_census(models[d])).values()) for d in DEVICES}
    elapsed = time.perf_counter() - began
    ok = got == CENSUS and elapsed < 1.0
    record_verdict(1, "fixture fidelity", ok, f"census exact for {', '.join(DEVICES)}; {elapsed * 1000:.0f} ms")
    assert got == CENSUS
    assert elapsed < 1.0


# -- criterion 2 ----------------------------------------------------------------

N_RUNS = 10_000
N_ORACLE = 1_000_000


def _oracle_unit(kind: str, rng: np.random.Generator, n: int) -> np.ndarray:
    """Unit likelihoods drawn with numpy's own samplers, mapped by the documented table."""
    if kind == "normal":
        return np.clip(rng.normal(0.5, 0.15, n), 0, 1)
    if kind == "binomial":
        return rng.binomial(10, 0.5, n) / 10
    if kind == "bernoulli":
        return rng.binomial(1, 0.5, n).astype(float)
    if kind == "exponential":
        return np.minimum(rng.exponential(0.5, n), 1)
    if kind == "gamma":
        return np.minimum(rng.gamma(2.0, 0.25, n), 1)
    if kind == "poisson":
        return np.minimum(rng.poisson(3.0, n), 10) / 10
    if kind == "uniform":
        return rng.uniform(0, 1, n)
    if kind == "geometric":
        return 1 / rng.geometric(0.5, n)
    if kind == "triangular":
        return rng.triangular(0, 0.5, 1, n)
    if kind == "logarithmic":
        return 1 / rng.logseries(0.5, n)
    raise AssertionError(kind)


def _oracle_frequency(kind: str, p_first: float, p_second: float) -> float:
    rng = np.random.default_rng(20_240_000 + list(DISTRIBUTIONS).index(kind))
    w1 = p_first * _oracle_unit(kind, rng, N_ORACLE)
    w2 = p_second * _oracle_unit(kind, rng, N_ORACLE)
    # highest weight wins, ties to the first declared, nothing fires at weight 0
    return float(np.mean((w1 > 0) & (w1 >= w2)))


def test_criterion_2_branch_selection(karie):
    began = time.perf_counter()
    machine = karie.machine("DeviceSM")
    branch = [t for t in machine.outgoing("SettingUp")]
    assert [(t.name, t.belief.degree) for t in branch] == [("initialized", 0.8), ("shutdown", 0.2)]

    # uniform: complete engine runs, stopped right after the branch
    inst = instantiate(karie, 0, PARAMS)
    hits = 0
    for seed in range(N_RUNS):
        trace = run(karie, inst, SimulationConfig(seed=seed, max_steps=2))
        hits += "transition:DeviceSM.initialized" in trace.elements()
    uniform = hits / N_RUNS
    lines = [f"uniform {uniform:.4f} vs 0.875"]
    ok = abs(uniform - 0.875) <= 0.02

    for kind in DISTRIBUTIONS:
        if kind == "uniform":
            continue
        config = SimulationConfig(seed=0, distribution=DistributionSpec.of(kind))
        wins = 0
        for seed in range(N_RUNS):
            rt = MachineRuntime(machine, machine.name, None, "SettingUp", set(), RandomStream(seed, "branch"))
            t = find_transition(rt, config)
            wins += t is not None and t.name == "initialized"
        freq = wins / N_RUNS
        expected = _oracle_frequency(kind, 0.8, 0.2)
        lines.append(f"{kind} {freq:.4f} vs {expected:.4f}")
        ok = ok and abs(freq - expected) <= 0.02
    elapsed = time.perf_counter() - began
    ok = ok and elapsed < 30
    record_verdict(2, "branch-selection statistics", ok, "; ".join(lines) + f"; {elapsed:.1f} s")
    assert ok, lines


# -- criteria 3 to 5 share the full matrix ---------------------------------------


@pytest.fixture(scope="module")
def matrix(tmp_path_factory):
    out = tmp_path_factory.mktemp("matrix")
    plan = load_plan(FIXTURES / "default-plan.yaml", out=out)
    began = time.perf_counter()
    result = run_plan(plan)
    elapsed = time.perf_counter() - began
    return plan, result, elapsed


def _independent_recount(records, model) -> float:
    """Coverage from a replay of the trace against the model."""
    visited = replay(records, model).visited
    return 100.0 * len(visited) / len(flatten_elements(model))


def test_criterion_3_metric_oracles(matrix, models):
    plan, _, _ = matrix
    mismatches = 0
    for spec in plan.runs():
        meta = json.loads((trace_dir(plan.out) / f"{spec.run_id}.meta.json").read_text())
        records = load_trace((trace_dir(plan.out) / f"{spec.run_id}.jsonl").read_text())
        mismatches += meta["coverage"] != _independent_recount(records, models[spec.device])
    reference = {(2, 2): 0.6667, (5,): 0.0, (1, 1, 1, 1): 1.0}
    # {2,2}: of 12 ordered pairs, 8 differ -> 2/3 exactly
    exact = {(2, 2): 2 / 3, (5,): 0.0, (1, 1, 1, 1): 1.0}
    simpson_ok = all(abs(simpson(c) - exact[c]) <= 1e-9 for c in exact)
    rounded_ok = all(round(simpson(c), 4) == v for c, v in reference.items())
    ok = mismatches == 0 and simpson_ok and rounded_ok
    record_verdict(3, "metric oracles", ok,
                   f"{len(plan.runs())} runs recounted by replay, {mismatches} mismatches; Simpson values within 1e-9")
    assert mismatches == 0
    assert simpson_ok and rounded_ok


def _table(path: Path) -> dict[tuple[str, str], float]:
    rows = list(csv.DictReader(io.StringIO(path.read_text())))
    return {(dev, r["distribution"]): float(r[f"{dev}_mean"]) for r in rows for dev in DEVICES}


def consistent_pairs(cov, div) -> list[tuple[str, str]]:
    """(a, b) where a beats b strictly on both metrics for every device."""
    out = []
    for a, b in itertools.permutations(DISTRIBUTIONS, 2):
        if all(cov[(d, a)] > cov[(d, b)] and div[(d, a)] > div[(d, b)] for d in DEVICES):
            out.append((a, b))
    return out


def test_criterion_4_trend_reproduction(matrix):
    plan, result, elapsed = matrix
    tables = plan.out / "tables"
    golden_same = all(
        (tables / f"{name}.csv").read_bytes() == (GOLDEN / f"{name}.csv").read_bytes()
        for name in ("coverage", "diversity")
    )
    pairs = consistent_pairs(_table(tables / "coverage.csv"), _table(tables / "diversity.csv"))
    ok = bool(pairs) and golden_same and len(result.executed) == 900 and elapsed < 300
    record_verdict(4, "trend reproduction", ok,
                   f"{len(pairs)} consistently ordered pairs incl. {pairs[:2]}; golden CSVs "
                   f"{'identical' if golden_same else 'DIFFER'}; 900 runs in {elapsed:.1f} s")
    assert ("normal", "bernoulli") in pairs
    assert golden_same
    assert elapsed < 300


def test_criterion_5_invariants(matrix, models, karie):
    plan, _, _ = matrix
    repeats = replay_gaps = 0
    for spec in plan.runs():
        records = load_trace((trace_dir(plan.out) / f"{spec.run_id}.jsonl").read_text())
        inst = instantiate(models[spec.device], spec.seed, spec.params)
        elements = [r.element for r in records if r.kind in ("state", "transition", "event", "behavior")]
        repeats += len(elements) != len(set(elements))
        replay_gaps += replay(records, models[spec.device], inst).visited != set(elements)
    # every committed revision of 1000 fuzzed runs satisfies the constraints;
    # replay re-applies each update and re-checks the full constraint set
    bad_revisions = revisions = 0
    for seed in range(1000):
        inst = instantiate(karie, seed, PARAMS)
        bad_revisions += bool(check_constraints(inst))
        trace = run(karie, inst, SimulationConfig(seed=seed, once_only=seed % 2 == 0, max_steps=200))
        try:
            final = replay(trace.records, karie, inst).instance
        except Exception:
            bad_revisions += 1
            continue
        revisions += final.revision
        bad_revisions += bool(check_constraints(final))
    ok = repeats == 0 and replay_gaps == 0 and bad_revisions == 0
    record_verdict(5, "invariant suites", ok,
                   f"{len(plan.runs())} once-only runs, {repeats} with repeats, {replay_gaps} replay gaps; "
                   f"{revisions} revisions over 1000 seeds, {bad_revisions} inconsistent")
    assert (repeats, replay_gaps, bad_revisions) == (0, 0, 0)


# -- criterion 6 ------------------------------------------------------------------


class RecordingEndpoint(TcpEndpoint):
    """Logs every envelope it is asked to send and restarts the server every
    ``every`` sends, so connections drop with envelopes still queued."""

    def __init__(self, server, every):
        super().__init__("127.0.0.1", server.port, timeout=1.0)
        self.server, self.every = server, every
        self.attempts = 0
        self.sent = []
        self.restarts = 0

    def send(self, env):
        self.attempts += 1
        if self.attempts % self.every == 0:
            self.server.restart()
            self.restarts += 1
        ack = super().send(env)
        self.sent.append(env)
        return ack


def test_criterion_6_event_conservation(models):
    began = time.perf_counter()
    checked = restarts = events = 0
    ok = True
    with TwinStubServer() as server:
        for device in DEVICES:
            for seed in range(3):
                model = models[device]
                run_id = f"{device}-conservation-{seed}"
                ep = RecordingEndpoint(server, every=11)
                d = Dispatcher(ep, run_id, retries=60)
                trace = run(model, instantiate(model, seed, PARAMS),
                            SimulationConfig(seed=seed, once_only=False, max_steps=300), d)
                d.close(timeout=30)
                ep.close()
                engine_side = collections.Counter(
                    (r.detail["eventSeq"], r.detail["signal"]) for r in trace.records if r.kind in ("event", "emit")
                )
                wire = collections.Counter((e.seq, e.signal) for e in ep.sent)
                twin = collections.Counter((e.seq, e.signal) for e in server.stub.state(run_id).log)
                ok = ok and engine_side == wire == twin
                checked += 1
                restarts += ep.restarts
                events += sum(engine_side.values())
    elapsed = time.perf_counter() - began
    ok = ok and restarts > 0 and elapsed < 30
    record_verdict(6, "end-to-end event conservation", ok,
                   f"{checked} runs, {events} events, {restarts} twin restarts, "
                   f"{server.stub.duplicates} duplicates dropped; {elapsed:.1f} s")
    assert ok


# -- criterion 7 ------------------------------------------------------------------


def test_criterion_7_determinism(models):
    cases = [
        ("pilly", 7, SimulationConfig(seed=7, distribution=DistributionSpec.of("exponential")),
         "pilly-exponential-7.jsonl"),
        ("karie", 1, SimulationConfig(seed=1, distribution=DistributionSpec.of("gamma"), once_only=False,
                                      max_steps=500), "karie-gamma-1-free.jsonl"),
    ]
    ok = True
    for device, seed, config, golden in cases:
        model = models[device]
        first = run(model, instantiate(model, seed, PARAMS), config).to_jsonl().encode()
        second = run(model, instantiate(model, seed, PARAMS), config).to_jsonl().encode()
        ok = ok and first == second == (GOLDEN / golden).read_bytes()
    record_verdict(7, "determinism", ok, "two consecutive runs and the pinned golden traces are byte-identical")
    assert ok


# -- documented example that does not reproduce ---------------------------------------


@pytest.mark.xfail(strict=True, reason="shipped Karie fixture: early shutdown branch dominates under "
                                       "dispersed likelihoods, so exponential covers less than uniform")
def test_exponential_beats_uniform_on_karie(karie):
    means = {}
    for kind in ("uniform", "exponential"):
        cfg = DistributionSpec.of(kind)
        means[kind] = np.mean([
            coverage(run(karie, instantiate(karie, s, PARAMS), SimulationConfig(seed=s, distribution=cfg)).records,
                     karie).percent
            for s in range(30)
        ])
    assert means["exponential"] > means["uniform"]
