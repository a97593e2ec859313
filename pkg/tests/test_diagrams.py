import json
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from rmlab.diagrams import (
    SUMMARY_HEADER,
    ColoredGraph,
    bound_invariant_check,
    brute_force_graphs,
    canonical_form,
    enumerate_graphs,
    graph_from_json,
    graph_json,
    mark_and_count,
    power_count,
    required_marks,
    summary_table,
)
from rmlab.errors import ComplexityLimit, InvalidArgument, InvariantViolation

SMALL = [(1, 2), (1, 3), (2, 2), (2, 3), (3, 2), (3, 3)]


@pytest.mark.parametrize("mode", ["av", "iso"])
@pytest.mark.parametrize("p,R", SMALL)
def test_enumeration_matches_brute_force(mode, p, R):
    got = [g.components for g in enumerate_graphs(mode, p, R).graphs]
    assert got == brute_force_graphs(mode, p, R)


def test_small_enumerations():
    assert enumerate_graphs("av", 1, 2).graphs == []
    two = [g.components for g in enumerate_graphs("av", 2, 2).graphs]
    assert ((0, 1), (1, 0)) in two
    assert len(two) == 2


def test_enumeration_is_deterministic():
    a, b = enumerate_graphs("iso", 2, 3), enumerate_graphs("iso", 2, 3)
    assert a.graphs == b.graphs and a.labeled_count == b.labeled_count
    assert a.labeled_count >= len(a.graphs)


def test_caps():
    with pytest.raises(ComplexityLimit):
        enumerate_graphs("av", 4, 3)
    with pytest.raises(ComplexityLimit):
        enumerate_graphs("av", 5, 2)
    with pytest.raises(InvalidArgument):
        enumerate_graphs("av", 1, 1)
    with pytest.raises(InvalidArgument):
        enumerate_graphs("loop", 1, 2)


def test_twice_coloured_marks_all_adjacent_edges():
    m = mark_and_count(ColoredGraph("av", ((0, 1), (1, 0))))
    assert all(e.marks for e in m.edges)
    assert m.effective == 4
    pc = power_count(m)
    # hand count: both colours twice, q = 2, N_exp = 0, psi_exp = 4 = 2p
    assert (pc.N_exp, pc.psi_exp, pc.q) == (0, 4, 2)


def test_two_thrice_colours_give_two_effective_marks():
    g = ColoredGraph("av", ((0, 1, 1), (1, 0, 0)))
    m = mark_and_count(g)
    assert m.effective == 2 == required_marks(g)


def test_special_iso_edges_always_effective():
    seen = 0
    for g in enumerate_graphs("iso", 2, 3).graphs:
        for mk in graph_json(g)["marks"]:
            if None in mk["edge"] and mk["by"]:
                seen += 1
                assert mk["effective"]
    assert seen > 0


def test_iso_all_twice_step_one_exponent():
    for g in enumerate_graphs("iso", 2, 2).graphs:
        assert power_count(mark_and_count(g)).N_exp == 0


def test_av_all_twice_exponents():
    for p in (2, 3):
        for g in enumerate_graphs("av", p, 2).graphs:
            pc = power_count(mark_and_count(g))
            assert pc.N_exp == 0 and pc.psi_exp >= 2 * p


@pytest.mark.parametrize("mode", ["av", "iso"])
@pytest.mark.parametrize("p,R", [(1, 2), (2, 2), (2, 3), (3, 3), (2, 4), (3, 4)])
def test_marks_and_bounds_hold(mode, p, R):
    rep = bound_invariant_check(p, R, mode)
    assert rep.violations == [] and rep.max_violations == 0
    for g in enumerate_graphs(mode, p, R).graphs:
        assert mark_and_count(g).effective >= required_marks(g)


def test_invalid_graph_rejected_before_counting():
    with pytest.raises(InvalidArgument):
        mark_and_count(ColoredGraph("av", ((0, 1, 1),)))  # colour 0 used once
    with pytest.raises(InvalidArgument):
        mark_and_count(ColoredGraph("av", ((0, 0), (1, 1))))  # twice within one component


def test_invariant_violation_is_raised_with_graph(monkeypatch):
    import rmlab.diagrams as d
    monkeypatch.setattr(d, "required_marks", lambda g: 99)
    with pytest.raises(InvariantViolation) as info:
        bound_invariant_check(2, 2, "av")
    assert json.loads(str(info.value))[0]["mode"] == "av"
    assert bound_invariant_check(2, 2, "av", strict=False).max_violations == 1


def test_json_roundtrip():
    for g in enumerate_graphs("av", 2, 3).graphs[:10]:
        data = json.loads(json.dumps(graph_json(g)))
        assert graph_from_json(data) == g
        assert Fraction(data["exponents"]["psi_exp"]) == power_count(mark_and_count(g)).psi_exp
    g = ColoredGraph("iso", ((0, 1), (1, 0)), uncolored=2, conjugated=(1,))
    assert graph_from_json(graph_json(g)) == g


def test_decorations_do_not_change_counting():
    plain = ColoredGraph("av", ((0, 1, 1), (1, 0, 0)))
    deco = ColoredGraph("av", plain.components, uncolored=3, conjugated=(0, 4))
    assert power_count(mark_and_count(plain)) == power_count(mark_and_count(deco))


def test_summary_table():
    reps = [bound_invariant_check(2, 2, "av"), bound_invariant_check(2, 2, "iso")]
    lines = summary_table(reps).splitlines()
    assert lines[0] == SUMMARY_HEADER
    assert lines[1:] == ["2,2,av,2,0", "2,2,iso,2,0"]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.integers(0, 3), min_size=1, max_size=4), min_size=1, max_size=3), st.randoms())
def test_canonical_form_invariance(comps, rnd):
    comps = [tuple(c) for c in comps]
    perm = list(range(4))
    rnd.shuffle(perm)
    shuffled = [tuple(perm[c] for c in comp) for comp in comps]
    rnd.shuffle(shuffled)
    assert canonical_form(comps) == canonical_form(shuffled)
