from __future__ import annotations

import itertools
import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from envdt.analytics import (
    TraceModelMismatch,
    aggregate,
    coverage,
    diversity,
    simpson,
    simpson_plugin,
    summarize,
)
from envdt.engine import SimulationConfig, TraceRecord, run
from envdt.instantiator import instantiate
from envdt.model import flatten_elements

from conftest import PARAMS


def pair_oracle(counts):
    """Fraction of ordered pairs of distinct observations with different labels."""
    labels = [i for i, c in enumerate(counts) for _ in range(c)]
    pairs = list(itertools.permutations(range(len(labels)), 2))
    if not pairs:
        return 0.0
    return sum(labels[a] != labels[b] for a, b in pairs) / len(pairs)


def event(seq, signal, uncertain=True):
    return TraceRecord(seq, 0.0, "M", "event", f"event:M.t{seq}!{signal}",
                       {"signal": signal, "category": "Info", "instance": None, "eventSeq": seq,
                        "uncertain": uncertain})


@pytest.mark.parametrize("counts, expected", [([2, 2], 0.6667), ([5], 0.0), ([1, 1, 1, 1], 1.0)])
def test_simpson_reference_values(counts, expected):
    assert simpson(counts) == pytest.approx(expected, abs=1e-4)
    assert simpson(counts) == pytest.approx(pair_oracle(counts))


def test_simpson_small_samples():
    assert simpson([]) == 0.0
    assert simpson([1]) == 0.0
    assert simpson([0, 0, 3]) == 0.0
    assert simpson_plugin([2, 2]) == 0.5


@settings(max_examples=150)
@given(st.lists(st.integers(0, 6), max_size=5))
def test_simpson_matches_pair_enumeration(counts):
    assert simpson(counts) == pytest.approx(pair_oracle(counts))


@settings(max_examples=200)
@given(st.lists(st.integers(0, 40), max_size=8))
def test_simpson_bounds_and_plugin_relation(counts):
    d = simpson(counts)
    assert 0.0 <= d <= 1.0
    n = sum(counts)
    if n >= 2:
        # the unbiased form rescales the plug-in one by n / (n - 1)
        assert d == pytest.approx(simpson_plugin(counts) * n / (n - 1))


@settings(max_examples=100)
@given(st.lists(st.sampled_from(["LowBattery", "NoPower", "CartridgeEmpty", "VerifyFail"]), max_size=30),
       st.randoms())
def test_diversity_is_permutation_invariant(signals, rnd):
    records = [event(i + 1, s) for i, s in enumerate(signals)]
    shuffled = list(records)
    rnd.shuffle(shuffled)
    assert diversity(records).simpson == diversity(shuffled).simpson
    assert diversity(records).n == len(signals)


def test_diversity_ignores_certain_events_and_emits():
    records = [event(1, "A"), event(2, "B"), event(3, "A", uncertain=False),
               TraceRecord(4, 0.0, "M", "emit", "behavior:M.S/entry", {"signal": "C", "uncertain": False})]
    report = diversity(records, "r")
    assert report.event_counts == {"A": 1, "B": 1}
    assert report.simpson == 1.0


def _full_trace(model):
    kinds = {"state": "state", "transition": "transition", "event": "event", "behavior": "behavior"}
    out = []
    for i, el in enumerate(flatten_elements(model)):
        kind = kinds[el.split(":", 1)[0]]
        out.append(TraceRecord(i + 1, 0.0, "M", kind, el, {}))
    return out


def test_full_synthetic_trace_is_complete(pilly):
    report = coverage(_full_trace(pilly), pilly)
    assert report.percent == 100.0
    assert report.total == 79


def test_empty_trace_has_zero_coverage(pilly):
    assert coverage([], pilly).percent == 0.0


def test_foreign_element_is_a_mismatch(pilly, karie):
    with pytest.raises(TraceModelMismatch):
        coverage(_full_trace(karie), pilly)


def test_coverage_counts_updates(karie):
    inst = instantiate(karie, 2, PARAMS)
    trace = run(karie, inst, SimulationConfig(seed=2))
    report = coverage(trace.records, karie, "r")
    assert report.updates == sum(r.kind == "update" for r in trace.records)
    assert report.covered == set(trace.elements())
    assert report.percent == pytest.approx(100 * len(set(trace.elements())) / len(flatten_elements(karie)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), cut=st.integers(0, 400))
def test_coverage_monotone_in_trace_prefix(karie, seed, cut):
    trace = run(karie, instantiate(karie, seed, PARAMS), SimulationConfig(seed=seed, once_only=False, max_steps=400))
    records = trace.records
    k = min(cut, len(records))
    prefix = coverage(records[:k], karie).percent
    assert 0.0 <= prefix <= coverage(records, karie).percent <= 100.0


def test_aggregate_two_values():
    table = aggregate({("karie", "normal", 0): 60.0, ("karie", "normal", 1): 62.0}, "coverage")
    cell = table.cells[("karie", "normal")]
    assert (cell.mean, cell.n) == (61.0, 2)
    assert cell.std == pytest.approx(math.sqrt(2))
    assert table.to_csv() == "distribution,karie_mean,karie_std,karie_n\nnormal,61.0000,1.4142,2\n"


def test_single_repetition_is_degenerate():
    cell = summarize([42.0])
    assert (cell.mean, cell.std, cell.n, cell.degenerate) == (42.0, 0.0, 1, True)
    with pytest.raises(ValueError):
        summarize([])


def test_missing_cell_renders_empty():
    table = aggregate({("a", "x", 0): 1.0}, "m", ["a", "b"], ["x"])
    assert table.to_csv().splitlines()[1] == "x,1.0000,0.0000,1,,,0"


def test_summary_of_synthetic_normal_sample():
    xs = np.random.default_rng(0).normal(50.0, 4.0, 30)
    cell = summarize(xs)
    assert cell.mean == pytest.approx(statistics.fmean(xs))
    assert cell.std == pytest.approx(statistics.stdev(xs))
    # within three standard errors of the generating parameters
    assert abs(cell.mean - 50.0) < 3 * 4.0 / math.sqrt(30)


@settings(max_examples=100)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=40))
def test_summary_matches_statistics_module(xs):
    cell = summarize(xs)
    assert cell.mean == pytest.approx(statistics.fmean(xs), abs=1e-6)
    assert cell.std == pytest.approx(statistics.stdev(xs), rel=1e-6, abs=1e-6)
