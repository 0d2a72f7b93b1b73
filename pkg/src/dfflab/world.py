"""World generation, example streams with exceptions, and the teacher oracle."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Any, Iterable, NamedTuple, Sequence

import numpy as np

from .core import (
    Example,
    Literal,
    MalformedWorldError,
    Representation,
    validate_representation,
)

logger = logging.getLogger(__name__)

CORRUPTIONS = ("wrong_label", "wrong_feature", "both")


def label_names(n: int) -> list[str]:
    return [chr(ord("A") + i) if i < 26 else f"L{i}" for i in range(n)]


@dataclass(frozen=True)
class WorldGenParams:
    m: int
    label_count: int | None = None
    pool_size: int = 3
    noise_features: int = 0
    unique_labels: bool = False
    labels: tuple | None = None
    overlap: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        if self.noise_features < 0 or self.overlap < 0:
            raise ValueError("noise_features and overlap must be >= 0")
        if self.labels is not None and len(self.labels) != self.m:
            raise ValueError("labels must have one entry per component")
        if self.label_count is not None:
            if not 1 <= self.label_count <= self.m:
                raise ValueError("label_count must be in [1, m]")
            if self.unique_labels and self.label_count != self.m:
                raise ValueError("unique_labels requires label_count == m")


def generate_world(params: WorldGenParams) -> tuple[Representation, list[Example]]:
    """Build a random world satisfying every representation axiom.

    Each differently-labeled pair ``i < j`` gets a dedicated feature that is
    true on ``G_i`` and false on ``G_j``; its value elsewhere is random, as
    are all noise features.
    """
    rng = random.Random(params.seed)
    m = params.m
    if params.labels is not None:
        labels = list(params.labels)
    elif params.unique_labels:
        labels = label_names(m)
    else:
        count = params.label_count if params.label_count is not None else rng.randint(1, m)
        names = label_names(count)
        labels = names + [rng.choice(names) for _ in range(m - count)]
        rng.shuffle(labels)

    pairs = [(i, j) for i, j in combinations(range(m), 2) if labels[i] != labels[j]]
    pair_feature = {pair: f for f, pair in enumerate(pairs)}
    n_features = len(pairs) + params.noise_features

    def draw(members: set[int]) -> tuple[bool, ...]:
        values = []
        for (i, j) in pairs:
            if i in members:
                values.append(True)
            elif j in members:
                values.append(False)
            else:
                values.append(rng.random() < 0.5)
        values.extend(rng.random() < 0.5 for _ in range(params.noise_features))
        return tuple(values)

    pools: list[list[Example]] = [
        [Example(draw({c}), c) for _ in range(params.pool_size)] for c in range(m)
    ]
    same = [(i, j) for i, j in combinations(range(m), 2) if labels[i] == labels[j]]
    for _ in range(params.overlap if same else 0):
        i, j = rng.choice(same)
        values = draw({i, j})
        pools[i].append(Example(values, i))
        pools[j].append(Example(values, j))

    phi = {}
    for (i, j), f in pair_feature.items():
        phi[(i, j)] = Literal(f, True)
        phi[(j, i)] = Literal(f, False)
    rep = Representation(tuple(labels), n_features, tuple(tuple(p) for p in pools), phi)
    report = validate_representation(rep)
    if not report.ok:  # pragma: no cover - generator bug guard
        raise MalformedWorldError(f"generator produced invalid world: {report.violations}")
    return rep, rep.all_examples()


@dataclass(frozen=True)
class ExceptionSpec:
    """Exception budget: explicit round indices, or a per-draw probability."""

    mode: str = "adversarial"
    indices: frozenset = frozenset()
    epsilon: Any = 0.0
    corruption: str = "both"

    def __post_init__(self):
        if self.mode not in ("adversarial", "stochastic"):
            raise ValueError(f"unknown exception mode {self.mode!r}")
        if self.corruption not in CORRUPTIONS + ("mixed",):
            raise ValueError(f"unknown corruption {self.corruption!r}")
        object.__setattr__(self, "indices", frozenset(int(i) for i in self.indices))

    @property
    def k(self) -> int:
        return len(self.indices)

    def rate(self, component: int):
        if isinstance(self.epsilon, (list, tuple)):
            return self.epsilon[component]
        return self.epsilon

    @classmethod
    def none(cls) -> "ExceptionSpec":
        return cls()


@dataclass(frozen=True)
class StochasticSource:
    """Draw a component by weight, then an example uniformly from its pool."""

    component_weights: tuple
    exception: ExceptionSpec = field(default_factory=lambda: ExceptionSpec("stochastic"))

    def __post_init__(self):
        w = tuple(self.component_weights)
        object.__setattr__(self, "component_weights", w)
        if any(x < 0 for x in w):
            raise ValueError("weights must be non-negative")
        total = sum(w)
        if isinstance(total, Fraction) or all(isinstance(x, int) for x in w):
            if total != 1:
                raise ValueError(f"weights sum to {total}, not 1")
        elif abs(total - 1) > 1e-9:
            raise ValueError(f"weights sum to {total}, not 1")
        for c in range(len(w)):
            eps = self.exception.rate(c)
            if not 0 <= eps < 1:
                raise ValueError("exception probability must be in [0, 1)")

    def component_mass(self, c: int):
        """Non-exception mass of component ``c``."""
        return self.component_weights[c] * (1 - self.exception.rate(c))

    def exception_probability(self):
        return sum(w * self.exception.rate(c) for c, w in enumerate(self.component_weights))


class Observation(NamedTuple):
    """The learner-visible part of a round: index and feature values."""

    t: int
    values: tuple


@dataclass(frozen=True)
class TeacherFeedback:
    label: Any
    feature: Literal | None = None


@dataclass(frozen=True)
class Hidden:
    component: int
    exception: bool = False
    corruption: str | None = None
    alt_label: Any = None
    noise: int = 0
    override: TeacherFeedback | None = None


@dataclass(frozen=True)
class StreamEvent:
    t: int
    x: Observation
    hidden: Hidden


def _make_event(world: Representation, t: int, component: int, values, exception: bool,
                corruption: str | None, rng: random.Random, override=None) -> StreamEvent:
    alt = None
    if exception:
        if corruption == "mixed":
            corruption = rng.choice(CORRUPTIONS)
        true = world.labels[component]
        others = [lab for lab in world.label_set if lab != true]
        alt = rng.choice(others) if others else None
    return StreamEvent(
        t, Observation(t, tuple(values)),
        Hidden(component, exception, corruption if exception else None, alt,
               rng.getrandbits(62), override),
    )


def adversarial_stream(world: Representation, script: Sequence, exceptions: ExceptionSpec | None = None,
                       seed: int = 0) -> list[StreamEvent]:
    """Turn a script into a deterministic event sequence.

    Script entries are component ids (a pool example is drawn with ``seed``)
    or dicts ``{"component": c, "example": index-or-row, "feedback": {...}}``.
    """
    exceptions = exceptions or ExceptionSpec.none()
    if any(not 0 <= i < len(script) for i in exceptions.indices):
        raise IndexError("exception index outside script")
    rng = random.Random(seed)
    events = []
    for t, entry in enumerate(script):
        override = None
        if isinstance(entry, dict):
            c = int(entry["component"])
            ex = entry.get("example")
            fb = entry.get("feedback")
            if fb is not None:
                lit = None
                if fb.get("feature") is not None:
                    lit = Literal(int(fb["feature"]), bool(fb.get("polarity", True)))
                override = TeacherFeedback(fb["label"], lit)
        else:
            c, ex = int(entry), None
        if not 0 <= c < world.m:
            raise IndexError(f"script round {t} references unknown component {c}")
        pool = world.pools[c]
        if ex is None:
            values = rng.choice(pool).values
        elif isinstance(ex, int):
            values = pool[ex].values
        else:
            values = tuple(bool(v) for v in ex)
            if c not in world.components_of(values):
                raise MalformedWorldError(f"script round {t}: example not in component {c}")
        exc = t in exceptions.indices or override is not None
        events.append(_make_event(world, t, c, values, exc, exceptions.corruption, rng, override))
    return events


def stochastic_stream(world: Representation, source: StochasticSource, n: int, seed: int = 0) -> list[StreamEvent]:
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(source.component_weights) != world.m:
        raise ValueError("one weight per component required")
    nrng = np.random.default_rng(seed)
    weights = np.asarray([float(w) for w in source.component_weights])
    weights = weights / weights.sum()
    comps = nrng.choice(world.m, size=n, p=weights)
    picks = nrng.random(n)
    eps = np.asarray([float(source.exception.rate(c)) for c in range(world.m)])
    flags = nrng.random(n) < eps[comps]
    rng = random.Random(int(nrng.integers(2**62)))
    pools = world.pool_values
    events = []
    for t in range(n):
        c = int(comps[t])
        pool = pools[c]
        values = pool[int(picks[t] * len(pool))]
        events.append(_make_event(world, t, c, values, bool(flags[t]), source.exception.corruption, rng))
    return events


# -- teacher ----------------------------------------------------------------

def violating_literals(world: Representation, values, explanation_component: int) -> list[Literal]:
    """Literals that are not a valid discriminator of ``values`` against a component."""
    out = []
    pool = world.pool_values[explanation_component]
    for f in range(world.n_features):
        for pol in (False, True):
            good = values[f] == pol and all(y[f] != pol for y in pool)
            if not good:
                out.append(Literal(f, pol))
    return out


def _fallback_literal(values, explanation_values) -> Literal:
    for f, (a, b) in enumerate(zip(values, explanation_values)):
        if a != b:
            return Literal(f, a)
    return Literal(0, values[0])


def reported_label(world: Representation, event: StreamEvent):
    h = event.hidden
    if h.override is not None:
        return h.override.label
    if h.exception and h.corruption in ("wrong_label", "both") and h.alt_label is not None:
        return h.alt_label
    return world.labels[h.component]


def _respond(world: Representation, event: StreamEvent, predicted, expl_component: int,
             expl_values) -> tuple[TeacherFeedback | None, bool]:
    h = event.hidden
    values = event.x.values
    label = reported_label(world, event)
    if label == predicted:
        return None, False
    if h.override is not None:
        lit = h.override.feature or _fallback_literal(values, expl_values)
        return TeacherFeedback(label, lit), False
    true_label = world.labels[h.component]
    forced = False
    if world.labels[expl_component] != true_label:
        lit = world.phi_table[(h.component, expl_component)]
    else:
        # no discriminative literal exists, so no consistent answer is possible
        lit = _fallback_literal(values, expl_values)
        forced = not h.exception
    if h.exception and h.corruption in ("wrong_feature", "both"):
        candidates = violating_literals(world, values, expl_component)
        lit = random.Random(h.noise).choice(candidates)
    if not h.exception and true_label == predicted:  # pragma: no cover - guarded above
        raise AssertionError("valid round declared a mistake on a correct prediction")
    return TeacherFeedback(label, lit), forced


def teacher_respond(world: Representation, event: StreamEvent, predicted_label,
                    explanation: Example) -> TeacherFeedback | None:
    """Stateless teacher: feedback for one prediction, or ``None`` if correct."""
    if explanation.component is None:
        raise ValueError("explanation must carry its component id")
    return _respond(world, event, predicted_label, explanation.component, explanation.values)[0]


class Teacher:
    """Teacher oracle that remembers the components of examples it has seen.

    Rounds where no discriminative literal exists (the explanation shares the
    example's true label, which needs an earlier exception) get a fallback
    literal and are recorded in ``forced``.
    """

    def __init__(self, world: Representation):
        self.world = world
        self.components: dict[int, int] = {}
        self.values: dict[int, tuple] = {}
        self.observed: dict[int, Any] = {}
        self.forced: set[int] = set()

    def _register(self, event: StreamEvent) -> None:
        self.components[event.t] = event.hidden.component
        self.values[event.t] = event.x.values

    def label(self, event: StreamEvent):
        """Answer a plain label query (used for the anchor example)."""
        self._register(event)
        lab = reported_label(self.world, event)
        self.observed[event.t] = lab
        return lab

    def respond(self, event: StreamEvent, predicted, explanation_id: int) -> TeacherFeedback | None:
        self._register(event)
        if explanation_id not in self.components:
            raise KeyError(f"explanation {explanation_id} was never shown to the teacher")
        if self.observed.get(explanation_id) != predicted:
            logger.debug("round %d: explanation %d was not observed with label %r",
                         event.t, explanation_id, predicted)
        fb, forced = _respond(self.world, event, predicted, self.components[explanation_id],
                              self.values[explanation_id])
        if forced:
            self.forced.add(event.t)
        self.observed[event.t] = predicted if fb is None else fb.label
        return fb


def feedback_consistent(world: Representation, values, component: int, predicted, feedback,
                        expl_component: int | None) -> bool:
    """Whether one round's feedback agrees with the representation."""
    true = world.labels[component]
    if feedback is None:
        return predicted == true
    if feedback.label != true:
        return False
    if expl_component is None:
        return False
    if world.labels[expl_component] == true:
        return True  # no discriminator exists; only a bad explanation can cause this
    lit = feedback.feature
    if lit is None:
        return False
    pool = world.pool_values[expl_component]
    return values[lit.feature] == lit.polarity and all(y[lit.feature] != lit.polarity for y in pool)


def count_min_exceptions(transcript, world: Representation) -> int:
    """Rounds of a transcript whose feedback contradicts ``world``."""
    comps = {r.t: r.component for r in transcript.rounds}
    count = 0
    for r in transcript.rounds:
        if r.predicted is None:  # anchor label query
            lab = r.feedback.label if r.feedback is not None else None
            count += lab != world.labels[r.component]
            continue
        expl = comps.get(r.explanation_id)
        if not feedback_consistent(world, r.example, r.component, r.predicted, r.feedback, expl):
            count += 1
    return count
