"""Decision-list learners for the feature-feedback protocol.

All learners share one round interface::

    learner.start(x0, y0)
    pred = learner.predict_one(x)
    learner.absorb(x, pred, feedback)   # feedback is None iff pred was right

Observations are ``(t, values)`` pairs; learners never see hidden metadata.
Hyper-parameters follow the scikit-learn convention (``get_params`` /
``set_params`` / ``clone``); per-session state lives in trailing-underscore
attributes created by ``start``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator

import numpy as np
from sklearn.base import BaseEstimator, clone

from .core import Literal
from .world import Observation, StreamEvent, Teacher, TeacherFeedback
from ._validation import check_assignments


class ProtocolError(RuntimeError):
    """A round violated the interaction protocol."""


class NotStartedError(RuntimeError):
    pass


def ub(m: int, k: int) -> int:
    """Mistake budget ``m(m-1) + mk``."""
    if m < 1 or k < 0:
        raise ValueError("need m >= 1 and k >= 0")
    return m * (m - 1) + m * k


@dataclass(eq=False)
class Rule:
    rule_id: int
    representative: Observation
    label: Any
    conjunction: set = field(default_factory=set)
    update_count: int = 0
    added_at: list = field(default_factory=list)     # rounds that added a literal
    updated_at: list = field(default_factory=list)   # rounds that bumped update_count

    def matches(self, values) -> bool:
        for f, pol in self.conjunction:
            if values[f] != pol:
                return False
        return True

    def snapshot(self) -> dict:
        return {
            "id": self.rule_id,
            "representative": self.representative.t,
            "label": self.label,
            "conjunction": sorted((lit.feature, lit.polarity) for lit in self.conjunction),
            "updates": self.update_count,
        }


@dataclass(frozen=True)
class Prediction:
    label: Any
    explanation: Observation
    rule_id: int | None = None

    @property
    def explanation_id(self) -> int:
        return self.explanation.t


class _RuleListLearner(BaseEstimator):
    """Shared state machine: anchor, ordered rules, first-match prediction."""

    def start(self, x: Observation, y) -> "_RuleListLearner":
        self._check_params()
        self.anchor_ = (x, y)
        self.rules_: list[Rule] = []
        self.deleted_: list[Rule] = []
        self.n_created_ = 0
        self.mistakes_ = 0
        return self

    def _check_params(self) -> None:
        pass

    def _require_started(self) -> None:
        if not hasattr(self, "anchor_"):
            raise NotStartedError(f"{type(self).__name__}.start() has not been called")

    def predict_one(self, x: Observation) -> Prediction:
        self._require_started()
        values = x.values
        for rule in self.rules_:
            if rule.matches(values):
                return Prediction(rule.label, rule.representative, rule.rule_id)
        x0, y0 = self.anchor_
        return Prediction(y0, x0, None)

    def predict(self, X) -> np.ndarray:
        """Predict labels for a matrix of boolean assignments (one row per example)."""
        self._require_started()
        X = check_assignments(X)
        return np.array([self.predict_one(Observation(-1, tuple(row))).label for row in X.tolist()],
                        dtype=object)

    def _rule(self, rule_id: int) -> Rule:
        for rule in self.rules_:
            if rule.rule_id == rule_id:
                return rule
        raise ProtocolError(f"prediction references unknown rule {rule_id}")

    def _new_rule(self, x: Observation, label) -> Rule:
        rule = Rule(self.n_created_, x, label)
        self.n_created_ += 1
        self.rules_.append(rule)
        return rule

    def _delete(self, rule: Rule) -> None:
        self.rules_.remove(rule)
        self.deleted_.append(rule)

    def absorb(self, x: Observation, prediction: Prediction, feedback: TeacherFeedback | None):
        self._require_started()
        if feedback is None:
            return self
        if feedback.label == prediction.label:
            raise ProtocolError(f"round {x.t}: feedback given for a correct prediction")
        self.mistakes_ += 1
        if prediction.rule_id is None:
            self._no_match_mistake(x, feedback)
        else:
            self._matched_mistake(x, self._rule(prediction.rule_id), feedback)
        return self

    def _no_match_mistake(self, x: Observation, feedback: TeacherFeedback) -> None:
        self._new_rule(x, feedback.label)

    def _matched_mistake(self, x, rule, feedback) -> None:
        raise NotImplementedError

    def rules_snapshot(self) -> list[dict]:
        return [r.snapshot() for r in self.rules_]


class DFF18(_RuleListLearner):
    """Non-robust baseline: refine on every mistake, never delete."""

    def __init__(self):
        pass

    def _matched_mistake(self, x, rule, feedback):
        if feedback.feature is None:
            raise ProtocolError(f"round {x.t}: mistake feedback without a feature")
        rule.conjunction.add(feedback.feature.negate())
        rule.added_at.append(x.t)


class SRDFF(DFF18):
    """Simple robust learner: like :class:`DFF18` but drops rules of length >= m."""

    def __init__(self, m: int = 2):
        self.m = m

    def _check_params(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m!r}")

    def _matched_mistake(self, x, rule, feedback):
        super()._matched_mistake(x, rule, feedback)
        if len(rule.conjunction) >= self.m:
            self._delete(rule)


class UniqueLabelDFF(_RuleListLearner):
    """Randomized learner for worlds where every component has its own label.

    Keeps at most one rule per label; each rule carries an update counter
    and is dropped once it reaches ``m + l - 1`` updates. ``p`` defaults to
    ``1/(m-1)`` and ``l`` to ``m-1``.
    """

    def __init__(self, m: int = 2, p: float | None = None, l: int | None = None,
                 random_state: int | None = None):
        self.m = m
        self.p = p
        self.l = l
        self.random_state = random_state

    def _check_params(self):
        if self.m < 2 and (self.p is None or self.l is None):
            raise ValueError("default p, l need m >= 2")
        p = self.p_
        if not 0 <= p <= 1:
            raise ValueError(f"p must lie in [0, 1], got {p}")
        if self.l_ < 1:
            raise ValueError("l must be >= 1")

    @property
    def p_(self) -> float:
        return 1.0 / (self.m - 1) if self.p is None else float(self.p)

    @property
    def l_(self) -> int:
        return self.m - 1 if self.l is None else int(self.l)

    def start(self, x, y):
        super().start(x, y)
        self.rng_ = np.random.default_rng(self.random_state)
        return self

    @property
    def threshold(self) -> int:
        return self.m + self.l_ - 1

    def _bump(self, rule: Rule, t: int) -> None:
        rule.update_count += 1
        rule.updated_at.append(t)
        if rule.update_count >= self.threshold:
            self._delete(rule)

    def _matched_mistake(self, x, rule, feedback):
        phi = feedback.feature
        rep = rule.representative.values
        if phi is not None and rep[phi.feature] != phi.polarity and x.values[phi.feature] == phi.polarity:
            rule.conjunction.add(phi.negate())
            rule.added_at.append(x.t)
        self._bump(rule, x.t)

    def _no_match_mistake(self, x, feedback):
        same = [r for r in self.rules_ if r.label == feedback.label]
        if not same:
            if self.rng_.random() < self.p_:
                self._new_rule(x, feedback.label)
            return
        rule = same[0]
        unsatisfied = sorted(lit for lit in rule.conjunction if x.values[lit.feature] != lit.polarity)
        if not unsatisfied:
            raise AssertionError(f"round {x.t}: rule {rule.rule_id} should have matched")
        rule.conjunction.discard(unsatisfied[0])
        self._bump(rule, x.t)


@dataclass
class Phase:
    v: int
    m: int
    k: int
    budget: int
    start_t: int
    mistakes: int = 0
    broke: bool = False


def pfr_schedule() -> Iterator[tuple[int, int, int]]:
    """Yield the ``(v, m, k)`` configurations that get an SR-DFF run, in order."""
    v = 1
    while True:
        m = 1
        while ub(m, 0) <= v:
            k = 0
            while ub(m, k) <= v:
                if 2 * ub(m, k) > v:
                    yield v, m, k
                k = 2 * k + 1
            m *= 2
        v *= 2


class PFRDFF(BaseEstimator):
    """Parameter-free wrapper: nested doubling over SR-DFF's m and budget.

    A run that exceeds its budget ends on that mistake; the next run is
    anchored on the offending example, whose label the feedback revealed.
    """

    def __init__(self):
        pass

    def start(self, x: Observation, y):
        self.schedule_ = pfr_schedule()
        self.phases_: list[Phase] = []
        self.mistakes_ = 0
        self._open_phase(x, y)
        return self

    def _open_phase(self, x, y):
        v, m, k = next(self.schedule_)
        self.phases_.append(Phase(v, m, k, ub(m, k), x.t))
        self.inner_ = SRDFF(m).start(x, y)

    @property
    def phase(self) -> Phase:
        return self.phases_[-1]

    def predict_one(self, x):
        return self.inner_.predict_one(x)

    def predict(self, X):
        return self.inner_.predict(X)

    def absorb(self, x, prediction, feedback):
        self.inner_.absorb(x, prediction, feedback)
        if feedback is not None:
            self.mistakes_ += 1
            ph = self.phase
            ph.mistakes += 1
            if ph.mistakes > ph.budget:
                ph.broke = True
                self._open_phase(x, feedback.label)
        return self

    @property
    def rules_(self):
        return self.inner_.rules_


LEARNERS: dict[str, type] = {
    "srdff": SRDFF,
    "dff18": DFF18,
    "unique_label": UniqueLabelDFF,
    "pfrdff": PFRDFF,
}


def make_learner(spec: dict | str, **overrides):
    """Build a learner from a scenario entry such as ``{"name": "srdff", "m": 3}``."""
    if isinstance(spec, str):
        spec = {"name": spec}
    params = {k: v for k, v in spec.items() if k != "name"}
    if "seed" in params:
        params["random_state"] = params.pop("seed")
    params.update(overrides)
    try:
        cls = LEARNERS[spec["name"]]
    except KeyError:
        raise ValueError(f"unknown learner {spec.get('name')!r}") from None
    return cls(**params)


# -- sessions ----------------------------------------------------------------

@dataclass(frozen=True)
class Round:
    t: int
    example: tuple
    predicted: Any
    explanation_id: int | None
    feedback: TeacherFeedback | None
    mistake: bool
    exception: bool
    component: int

    def to_dict(self) -> dict:
        fb = None
        if self.feedback is not None:
            lit = self.feedback.feature
            fb = {
                "label": self.feedback.label,
                "feature": None if lit is None else lit.feature,
                "polarity": None if lit is None else lit.polarity,
            }
        return {
            "t": self.t,
            "example": [int(v) for v in self.example],
            "predicted": self.predicted,
            "explanation_id": self.explanation_id,
            "feedback": fb,
            "mistake": self.mistake,
            "hidden": {"exception": self.exception, "component": self.component},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Round":
        fb = d["feedback"]
        feedback = None
        if fb is not None:
            lit = None if fb["feature"] is None else Literal(fb["feature"], fb["polarity"])
            feedback = TeacherFeedback(fb["label"], lit)
        return cls(d["t"], tuple(bool(v) for v in d["example"]), d["predicted"],
                   d["explanation_id"], feedback, d["mistake"],
                   d["hidden"]["exception"], d["hidden"]["component"])


@dataclass
class Transcript:
    rounds: list[Round] = field(default_factory=list)

    @property
    def mistakes(self) -> int:
        return sum(r.mistake for r in self.rounds)

    @property
    def exceptions(self) -> int:
        return sum(r.exception for r in self.rounds)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), separators=(",", ":")) + "\n" for r in self.rounds)

    @classmethod
    def from_jsonl(cls, text: str) -> "Transcript":
        return cls([Round.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()])


RoundHook = Callable[[StreamEvent, Any, Round], None]


def run_session(learner, stream: Iterable[StreamEvent], teacher: Teacher,
                on_round: RoundHook | None = None) -> Transcript:
    """Drive one learner through a stream; the first event anchors it."""
    transcript = Transcript()
    it = iter(stream)
    try:
        first = next(it)
    except StopIteration:
        return transcript
    y0 = teacher.label(first)
    learner.start(first.x, y0)
    rec = Round(first.t, first.x.values, None, None, TeacherFeedback(y0), False,
                first.hidden.exception, first.hidden.component)
    transcript.rounds.append(rec)
    if on_round is not None:
        on_round(first, learner, rec)
    for event in it:
        pred = learner.predict_one(event.x)
        fb = teacher.respond(event, pred.label, pred.explanation.t)
        learner.absorb(event.x, pred, fb)
        rec = Round(event.t, event.x.values, pred.label, pred.explanation.t, fb, fb is not None,
                    event.hidden.exception, event.hidden.component)
        transcript.rounds.append(rec)
        if on_round is not None:
            on_round(event, learner, rec)
    return transcript
