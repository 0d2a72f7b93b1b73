import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from dfflab.core import Example, Literal, satisfies
from dfflab.learners import SRDFF, Round, Transcript, run_session
from dfflab.world import (
    ExceptionSpec,
    StochasticSource,
    Teacher,
    TeacherFeedback,
    WorldGenParams,
    adversarial_stream,
    count_min_exceptions,
    feedback_consistent,
    generate_world,
    stochastic_stream,
    teacher_respond,
)
from dfflab.harness import random_stream


def test_generate_two_components():
    w, pool = generate_world(WorldGenParams(2, labels=("A", "B"), pool_size=3))
    assert len(w.pair_features()) == 1
    assert len(pool) == 6
    assert w.n_features == 1


def test_generate_single_component():
    w, pool = generate_world(WorldGenParams(1))
    assert w.phi_table == {}
    assert w.labels == ("A",)


def test_generate_shared_label_pairs():
    w, _ = generate_world(WorldGenParams(3, labels=("A", "A", "B"), pool_size=2, seed=4))
    assert set(w.pair_features()) == {(0, 2), (1, 2)}
    assert w.n_features == 2


def test_generate_rejects_bad_params():
    with pytest.raises(ValueError):
        WorldGenParams(0)
    with pytest.raises(ValueError):
        WorldGenParams(2, pool_size=0)
    with pytest.raises(ValueError):
        WorldGenParams(3, label_count=2, unique_labels=True)


def test_unique_labels():
    w, _ = generate_world(WorldGenParams(5, unique_labels=True))
    assert len(set(w.labels)) == 5


def test_script_without_exceptions():
    w, _ = generate_world(WorldGenParams(2, labels=("A", "B")))
    events = adversarial_stream(w, [0, 1, 0])
    assert len(events) == 3
    assert not any(e.hidden.exception for e in events)
    assert [e.hidden.component for e in events] == [0, 1, 0]


def test_script_exception_flags():
    w, _ = generate_world(WorldGenParams(2, labels=("A", "B")))
    events = adversarial_stream(w, [0, 1] * 5, ExceptionSpec("adversarial", {4, 7}))
    assert [e.t for e in events if e.hidden.exception] == [4, 7]


def test_script_errors():
    w, _ = generate_world(WorldGenParams(2, labels=("A", "B")))
    with pytest.raises(IndexError):
        adversarial_stream(w, [0, 2])
    with pytest.raises(IndexError):
        adversarial_stream(w, [0, 1], ExceptionSpec("adversarial", {5}))


def test_script_feedback_override_marks_exception():
    w, _ = generate_world(WorldGenParams(2, labels=("A", "B")))
    script = [0, {"component": 1, "example": 0, "feedback": {"label": "A", "feature": 0, "polarity": False}}]
    events = adversarial_stream(w, script)
    assert events[1].hidden.exception
    assert events[1].hidden.override == TeacherFeedback("A", Literal(0, False))


def test_stochastic_single_component():
    w, _ = generate_world(WorldGenParams(2, labels=("A", "B"), seed=2))
    src = StochasticSource((1.0, 0.0), ExceptionSpec("stochastic", epsilon=0.0))
    events = stochastic_stream(w, src, 5, seed=1)
    assert len(events) == 5
    assert all(e.hidden.component == 0 and not e.hidden.exception for e in events)
    assert all(e.x.values in w.pool_values[0] for e in events)


def test_stochastic_deterministic():
    w, _ = generate_world(WorldGenParams(3, seed=2))
    src = StochasticSource((0.2, 0.3, 0.5), ExceptionSpec("stochastic", epsilon=0.1, corruption="mixed"))
    assert stochastic_stream(w, src, 200, seed=7) == stochastic_stream(w, src, 200, seed=7)
    assert stochastic_stream(w, src, 200, seed=7) != stochastic_stream(w, src, 200, seed=8)


def test_source_validation():
    with pytest.raises(ValueError):
        StochasticSource((Fraction(1, 2), Fraction(1, 3)))
    with pytest.raises(ValueError):
        StochasticSource((1.0,), ExceptionSpec("stochastic", epsilon=1.0))
    src = StochasticSource((Fraction(1, 2), Fraction(1, 2)),
                           ExceptionSpec("stochastic", epsilon=[Fraction(1, 10), Fraction(0)]))
    assert src.component_mass(0) == Fraction(9, 20)
    assert src.exception_probability() == Fraction(1, 20)


def binomial_interval_probability(n, p, lo, hi):
    """P[lo <= Bin(n, p) <= hi] summed in log space."""
    total = 0.0
    for k in range(lo, hi + 1):
        log_pmf = (math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
                   + k * math.log(p) + (n - k) * math.log1p(-p))
        total += math.exp(log_pmf)
    return total


def test_exception_rate_binomial():
    n = 10_000
    prob = binomial_interval_probability(n, 0.1, 800, 1200)
    assert prob >= 0.99
    w, _ = generate_world(WorldGenParams(2, labels=("A", "B"), seed=5))
    src = StochasticSource((0.5, 0.5), ExceptionSpec("stochastic", epsilon=0.1))
    inside = 0
    for seed in range(100):
        flagged = sum(e.hidden.exception for e in stochastic_stream(w, src, n, seed))
        inside += 800 <= flagged <= 1200
    # with prob >= 0.99 per seed, 100 seeds leave at most a handful outside
    assert inside >= 95


def test_component_frequencies_chi_square():
    n = 100_000
    weights = (0.5, 0.3, 0.2)
    w, _ = generate_world(WorldGenParams(3, seed=6))
    src = StochasticSource(weights, ExceptionSpec("stochastic", epsilon=0.0))
    counts = [0, 0, 0]
    for e in stochastic_stream(w, src, n, seed=11):
        counts[e.hidden.component] += 1
    stat = sum((c - n * p) ** 2 / (n * p) for c, p in zip(counts, weights))
    # chi-square with 2 degrees of freedom has tail exp(-x/2): the 0.001 quantile is -2 ln 0.001
    assert stat < -2 * math.log(0.001)


def world_ab():
    return generate_world(WorldGenParams(2, labels=("A", "B"), pool_size=2, noise_features=2, seed=8))[0]


def test_teacher_valid_mistake():
    w = world_ab()
    events = adversarial_stream(w, [0, 1])
    expl = w.pools[0][0]
    fb = teacher_respond(w, events[1], "A", expl)
    assert fb == TeacherFeedback("B", w.phi_table[(1, 0)])


def test_teacher_correct_prediction():
    w = world_ab()
    events = adversarial_stream(w, [0, 1])
    assert teacher_respond(w, events[1], "B", w.pools[0][0]) is None


def test_teacher_wrong_feature_violates_axiom():
    w = world_ab()
    for seed in range(20):
        events = adversarial_stream(w, [0, 1], ExceptionSpec("adversarial", {1}, corruption="wrong_feature"),
                                    seed=seed)
        fb = teacher_respond(w, events[1], "A", w.pools[0][0])
        assert fb.label == "B"
        lit = fb.feature
        good = satisfies(events[1].x, lit) and not any(satisfies(x, lit) for x in w.pools[0])
        assert not good


def test_teacher_wrong_label():
    w = world_ab()
    events = adversarial_stream(w, [0, 1], ExceptionSpec("adversarial", {1}, corruption="wrong_label"))
    # the only other label is the prediction itself, so no feedback is given
    assert teacher_respond(w, events[1], "A", w.pools[0][0]) is None
    fb = teacher_respond(w, events[1], "B", w.pools[0][0])
    assert fb.label == "A"


def test_teacher_valid_feedback_satisfies_axiom():
    w, _ = generate_world(WorldGenParams(5, pool_size=3, noise_features=2, seed=12))
    rng = random.Random(0)
    events = random_stream(w, 80, 0, rng)
    teacher = Teacher(w)
    teacher.label(events[0])
    for e in events[1:]:
        expl = events[rng.randrange(e.t)]
        predicted = w.labels[expl.hidden.component]
        fb = teacher.respond(e, predicted, expl.t)
        if fb is not None:
            lit = fb.feature
            assert satisfies(e.x, lit)
            assert not any(satisfies(x, lit) for x in w.pools[expl.hidden.component])


def test_count_min_exceptions_zero_and_injected():
    w, _ = generate_world(WorldGenParams(3, unique_labels=True, pool_size=2, seed=1))
    clean = run_session(SRDFF(3), random_stream(w, 30, 0, random.Random(1)), Teacher(w))
    assert count_min_exceptions(clean, w) == 0
    script = [0, 1, 2, 0, 1, 2, 1, 0]
    events = adversarial_stream(w, script, ExceptionSpec("adversarial", {1, 2}, corruption="wrong_label"))
    tr = run_session(SRDFF(3), events, Teacher(w))
    assert tr.exceptions == 2
    assert count_min_exceptions(tr, w) == 2


def test_count_min_exceptions_coincidental_consistency():
    w = world_ab()
    # a wrong-feature exception on a correct prediction produces no feedback at all
    events = adversarial_stream(w, [0, 0], ExceptionSpec("adversarial", {1}, corruption="wrong_feature"))
    tr = run_session(SRDFF(2), events, Teacher(w))
    assert tr.exceptions == 1
    assert count_min_exceptions(tr, w) == 0


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 5), st.integers(0, 4), st.integers(0, 10 ** 6),
       st.sampled_from(["wrong_label", "wrong_feature", "both", "mixed"]))
def test_min_exceptions_never_exceed_injected(m, k, seed, corruption):
    rng = random.Random(seed)
    w, _ = generate_world(WorldGenParams(m, pool_size=2, seed=seed))
    events = random_stream(w, rng.randint(1, 25), k, rng, corruption)
    tr = run_session(SRDFF(m), events, Teacher(w))
    assert count_min_exceptions(tr, w) <= sum(e.hidden.exception for e in events)


def test_feedback_consistent_checks_label_and_literal():
    w = world_ab()
    x = w.pools[1][0].values
    good = TeacherFeedback("B", w.phi_table[(1, 0)])
    assert feedback_consistent(w, x, 1, "A", good, 0)
    assert not feedback_consistent(w, x, 1, "A", TeacherFeedback("B", w.phi_table[(0, 1)]), 0)
    assert not feedback_consistent(w, x, 1, "A", TeacherFeedback("A", None), 0)
    assert feedback_consistent(w, x, 1, "B", None, 0)
