from __future__ import annotations

from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gretel.corpus import build_corpus, parse_tool
from gretel.fixtures import MODES, REFERENCE_MIX, gap_fixture, injection_fixture, quota

_mixes = st.lists(st.floats(0.01, 10.0), min_size=1, max_size=6).map(
    lambda ws: {f"m{i}": w for i, w in enumerate(ws)})


@given(st.integers(0, 2000), _mixes)
def test_quota_sums_and_stays_within_one(n, mix):
    counts = quota(n, mix)
    assert sum(counts.values()) == n
    total = sum(mix.values())
    for m, c in counts.items():
        assert abs(c - n * mix[m] / total) < 1.0


def test_quota_reference_mix():
    assert quota(400, REFERENCE_MIX) == {"parameter_mismatch": 168, "semantic_mismatch": 100,
                                         "execution_failure": 72, "functional_success": 60}
    assert sum(quota(50, REFERENCE_MIX).values()) == 50
    with pytest.raises(ValueError):
        quota(10, {"a": 0.0})


def test_injection_fixture_is_seeded_and_valid():
    a, b = injection_fixture(40, seed=1), injection_fixture(40, seed=1)
    assert a.tools == b.tools and a.modes == b.modes
    assert injection_fixture(40, seed=2).modes != a.modes
    corpus = build_corpus(parse_tool(t) for t in a.tools)
    assert len(corpus) == 40
    assert set(a.modes.values()) <= set(MODES)


def test_gap_fixture_shape():
    fx = gap_fixture()
    assert len(fx.tools) == 50 and len(fx.queries) == 20
    assert Counter(fx.modes.values()) == {"parameter_mismatch": 21, "semantic_mismatch": 12,
                                          "execution_failure": 9, "functional_success": 8}
    # every query has at least one working relevant tool, so a perfect re-ranker can pass it
    working = {k for k, m in fx.modes.items() if m == "functional_success"}
    for q in fx.queries:
        assert working & {f"{r['tool_id']}/{r['api_name']}" for r in q["relevant"]}
