import json

import pytest
from hypothesis import given, settings, strategies as st

from dfflab.core import (
    CoverError,
    Example,
    Literal,
    MalformedWorldError,
    Representation,
    concept_label,
    conjunction,
    load_world,
    negate,
    satisfies,
    satisfies_conjunction,
    save_world,
    validate_representation,
    world_from_dict,
    world_to_dict,
)
from dfflab.world import WorldGenParams, generate_world


def two_component_world():
    pools = (
        (Example((True, True), 0), Example((True, False), 0)),
        (Example((False, True), 1),),
    )
    phi = {(0, 1): Literal(0, True), (1, 0): Literal(0, False)}
    return Representation(("A", "B"), 2, pools, phi)


def test_satisfies_literal():
    x = Example((True, False))
    assert satisfies(x, Literal(1, False))
    assert not satisfies(x, Literal(0, False))
    assert satisfies(Example((True, False, True)), Literal(2, True))


def test_satisfies_unknown_feature():
    with pytest.raises(MalformedWorldError):
        satisfies(Example((True,)), Literal(3, True))
    with pytest.raises(MalformedWorldError):
        satisfies_conjunction(Example((True,)), {Literal(3, True)})


def test_satisfies_conjunction():
    assert satisfies_conjunction(Example((False, False)), frozenset())
    assert satisfies_conjunction(Example((True, False)), conjunction((0, True), (1, False)))
    assert not satisfies_conjunction(Example((True, True)), conjunction((0, True), (1, False)))


def test_negate():
    assert negate(Literal(7, True)) == Literal(7, False)
    assert negate(Literal(7, False)) == Literal(7, True)
    assert negate(negate(Literal(3, True))) == Literal(3, True)
    assert str(Literal(3, False)) == "~f3"


def test_concept_label():
    w = two_component_world()
    assert concept_label(w, (True, False)) == "A"
    assert concept_label(w, Example((False, True))) == "B"
    with pytest.raises(CoverError):
        concept_label(w, (False, False))


def test_concept_label_same_label_overlap():
    shared = (True, True)
    pools = ((Example(shared, 0),), (Example(shared, 1), Example((True, False), 1)))
    w = Representation(("A", "A"), 2, pools, {})
    assert concept_label(w, shared) == "A"
    assert validate_representation(w).ok


def test_concept_label_rejects_mixed_overlap():
    shared = (True, True)
    pools = ((Example(shared, 0),), (Example(shared, 1),))
    w = Representation(("A", "B"), 2, pools, {(0, 1): Literal(0, True), (1, 0): Literal(0, False)})
    with pytest.raises(MalformedWorldError):
        concept_label(w, shared)
    assert "overlap" in validate_representation(w).kinds()


def test_validate_generated_world_clean():
    w, pool = generate_world(WorldGenParams(4, pool_size=3, noise_features=2, seed=3))
    assert validate_representation(w, pool).violations == []


def test_validate_reports_bad_discriminator():
    w = two_component_world()
    pools = (w.pools[0], (Example((True, True), 1),))  # G_2 example now satisfies phi(1,2)
    bad = Representation(w.labels, 2, pools, w.phi_table)
    report = validate_representation(bad)
    assert "discriminative" in report.kinds()
    assert any("fails on G_1" in v.detail for v in report.violations)


def test_validate_reports_antisymmetry():
    w = two_component_world()
    phi = dict(w.phi_table)
    phi[(1, 0)] = Literal(1, False)
    report = validate_representation(Representation(w.labels, 2, w.pools, phi))
    assert "antisymmetry" in report.kinds()


def test_validate_reports_cover_and_missing_phi():
    w = two_component_world()
    report = validate_representation(w, [Example((False, False))])
    assert report.kinds() == {"cover"}
    report = validate_representation(Representation(w.labels, 2, w.pools, {}))
    assert report.kinds() == {"missing_phi"}


def test_positive_designation():
    w, _ = generate_world(WorldGenParams(3, unique_labels=True, seed=1))
    for (i, j), lit in w.phi_table.items():
        pos = w.positive(lit)
        assert pos == w.positive(lit.negate())
        assert pos == (lit if i < j else lit.negate())


def test_world_json_round_trip(tmp_path):
    w, _ = generate_world(WorldGenParams(3, pool_size=2, noise_features=1, overlap=1, seed=9))
    path = tmp_path / "w.json"
    save_world(w, path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"m", "labels", "features", "components", "phi_table"}
    back = load_world(path)
    assert world_to_dict(back) == world_to_dict(w)
    assert back.phi_table == w.phi_table


def test_world_from_dict_errors():
    with pytest.raises(MalformedWorldError):
        world_from_dict({"m": 2})
    doc = world_to_dict(two_component_world())
    doc["m"] = 3
    with pytest.raises(MalformedWorldError):
        world_from_dict(doc)


worlds = st.builds(
    WorldGenParams,
    m=st.integers(1, 6),
    pool_size=st.integers(1, 4),
    noise_features=st.integers(0, 3),
    overlap=st.integers(0, 2),
    seed=st.integers(0, 10 ** 6),
)


@settings(max_examples=60, deadline=None)
@given(worlds)
def test_generated_worlds_satisfy_axioms(params):
    w, pool = generate_world(params)
    assert validate_representation(w, pool).ok
    for (i, j), lit in w.phi_table.items():
        assert all(satisfies(x, lit) for x in w.pools[i])
        assert not any(satisfies(x, lit) for x in w.pools[j])
    for c, comp in enumerate(w.pools):
        for x in comp:
            assert x.component == c
            assert concept_label(w, x) == w.labels[c]


@given(st.lists(st.booleans(), min_size=1, max_size=8).flatmap(
    lambda vals: st.tuples(
        st.just(tuple(vals)),
        st.sets(st.tuples(st.integers(0, len(vals) - 1), st.booleans()).map(lambda p: Literal(*p))),
        st.sets(st.tuples(st.integers(0, len(vals) - 1), st.booleans()).map(lambda p: Literal(*p))),
    )))
def test_conjunction_monotone(case):
    values, small, extra = case
    big = small | extra
    if satisfies_conjunction(values, big):
        assert satisfies_conjunction(values, small)


@given(st.integers(0, 100), st.booleans())
def test_negate_involution(f, pol):
    lit = Literal(f, pol)
    assert negate(negate(lit)) == lit
    assert negate(lit).feature == f and negate(lit).polarity != pol
