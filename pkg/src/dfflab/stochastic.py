"""Feature discovery, restricted decision lists and the three-stage learner for i.i.d. streams."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Any, Iterable, Iterator, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .core import Literal, Representation
from .learners import Round, Transcript
from .world import StochasticSource, StreamEvent, Teacher, TeacherFeedback
from ._validation import check_assignments, check_labels


class BudgetExceededError(RuntimeError):
    """Exhaustive enumeration would exceed the configured hypothesis budget."""


# -- distribution analysis ----------------------------------------------------

@dataclass
class DistributionAnalysis:
    masses: list                      # P[G] per component
    pair_sets: dict                   # positive literal -> set of (i, j), i < j
    beta: dict                        # positive literal -> sum of P[G] P[G'] over its pairs

    def total(self):
        return sum(self.beta.values(), 0)


def analyze_distribution(world: Representation, source: StochasticSource) -> DistributionAnalysis:
    masses = [source.component_mass(c) for c in range(world.m)]
    pair_sets: dict[Literal, set] = {}
    for (i, j), lit in world.pair_features().items():
        pair_sets.setdefault(lit, set()).add((i, j))
    beta = {lit: sum((masses[i] * masses[j] for i, j in sorted(pairs)), 0)
            for lit, pairs in pair_sets.items()}
    return DistributionAnalysis(masses, pair_sets, beta)


def phi_beta(analysis: DistributionAnalysis, beta) -> frozenset:
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    return frozenset(lit for lit, b in analysis.beta.items() if b >= beta)


# -- feature discovery ----------------------------------------------------------

@dataclass
class FeatureCounter:
    counts: Counter = field(default_factory=Counter)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def add(self, literal: Literal) -> None:
        self.counts[literal] += 1

    def frequency(self, literal: Literal) -> float:
        tot = self.total
        return self.counts[literal] / tot if tot else 0.0

    def threshold_set(self, beta) -> frozenset:
        tot = self.total
        if tot == 0:
            return frozenset()
        return frozenset(lit for lit, c in self.counts.items() if c >= beta * tot)


@dataclass
class DiscoveryResult:
    phi_hat: frozenset
    counter: FeatureCounter
    mistakes: int
    undersampled: bool
    anchor: tuple                     # (observation, label)
    rounds: list


def discovery_budget(beta: float, delta: float) -> int:
    """Mistake limit ``12 ln(1/(2 delta beta)) / beta``, rounded up."""
    return math.ceil(12 * math.log(1 / (2 * delta * beta)) / beta)


def concentration_size(beta: float, delta: float) -> float:
    return 6 * math.log(1 / (2 * delta * beta)) / beta


def _record(rounds: list, event: StreamEvent, predicted, expl_t, fb, teacher: Teacher) -> None:
    rounds.append(Round(event.t, event.x.values, predicted, expl_t, fb, fb is not None,
                        event.hidden.exception, event.hidden.component))


def feature_discovery(stream: Iterator[StreamEvent], teacher: Teacher, b: int, beta: float,
                      positive=None) -> DiscoveryResult:
    """Count positive feedback literals from fresh baselines until ``||F||_1 > b/2``.

    Each baseline is a newly labeled example used as the constant prediction
    until it is wrong once; that single feedback literal is counted. The run
    stops early rather than exceed ``b`` mistakes.
    """
    if b < 2:
        raise ValueError("mistake limit b must be >= 2")
    positive = positive or teacher.world.positive
    stream = iter(stream)
    rounds: list[Round] = []
    counter = FeatureCounter()
    first = next(stream)
    y0 = teacher.label(first)
    x0 = first.x
    rounds.append(Round(first.t, x0.values, None, None, TeacherFeedback(y0), False,
                        first.hidden.exception, first.hidden.component))
    mistakes = 0
    exhausted = False
    while counter.total <= b / 2 and mistakes < b and not exhausted:
        event = next(stream, None)
        if event is None:
            exhausted = True
            break
        fb = teacher.respond(event, y0, x0.t)
        _record(rounds, event, y0, x0.t, fb, teacher)
        if fb is None:
            x_base, y_base = event.x, y0
        else:
            mistakes += 1
            x_base, y_base = event.x, fb.label
        while mistakes < b:
            event = next(stream, None)
            if event is None:
                exhausted = True
                break
            fb = teacher.respond(event, y_base, x_base.t)
            _record(rounds, event, y_base, x_base.t, fb, teacher)
            if fb is not None:
                mistakes += 1
                if fb.feature is not None:
                    counter.add(positive(fb.feature))
                break
    phi_hat = counter.threshold_set(beta)
    return DiscoveryResult(phi_hat, counter, mistakes, counter.total <= b / 2, (x0, y0), rounds)


# -- restricted decision lists ------------------------------------------------

@dataclass(frozen=True)
class RestrictedDecisionList:
    """First-match decision list; ``default`` labels examples no rule covers."""

    rules: tuple                      # ((frozenset[Literal], label), ...)
    default: Any

    def predict_values(self, values) -> Any:
        for conj, label in self.rules:
            if all(values[f] == p for f, p in conj):
                return label
        return self.default

    def predict(self, X) -> np.ndarray:
        X = check_assignments(X)
        return np.array([self.predict_values(row) for row in X.tolist()], dtype=object)

    def literals(self) -> set:
        return {lit for conj, _ in self.rules for lit in conj}

    def describe(self) -> str:
        parts = []
        for conj, label in self.rules:
            body = " & ".join(str(l) for l in sorted(conj)) or "true"
            parts.append(f"if {body} -> {label}")
        parts.append(f"else -> {self.default}")
        return "; ".join(parts)


def candidate_conjunctions(features: Sequence[int], max_len: int) -> list[frozenset]:
    """All non-contradictory conjunctions of at most ``max_len`` literals, canonically ordered."""
    features = sorted(set(int(f) for f in features))
    out = []
    for size in range(max_len + 1):
        for fs in combinations(features, size):
            for mask in range(2 ** size):
                out.append(frozenset(Literal(f, bool(mask >> (size - 1 - i) & 1))
                                     for i, f in enumerate(fs)))
    return out


def conjunction_count(n_features: int, max_len: int) -> int:
    """Number of non-contradictory conjunctions with at most ``max_len`` literals."""
    return sum(math.comb(n_features, s) * 2 ** s for s in range(min(max_len, n_features) + 1))


def hypothesis_count(n_features: int, m: int, n_labels: int) -> int:
    """Size of the enumerated class: lists of 0..m labeled rules plus the fixed default."""
    per_rule = conjunction_count(n_features, max(m - 1, 0)) * n_labels
    return sum(per_rule ** d for d in range(m + 1))


def capacity_bound(m: int, beta: float) -> float:
    if m < 1 or not 0 < beta <= 1:
        raise ValueError("need m >= 1 and beta in (0, 1]")
    return m * math.log2(m) + m * m * math.log2(3 / beta)


def class_size_bound(m: int, beta: float) -> float:
    return (2 / beta + 1) ** (m * (m - 1)) * m ** m


def _label_order(y) -> list:
    seen = []
    for lab in y:
        if lab not in seen:
            seen.append(lab)
    return sorted(seen, key=lambda v: (type(v).__name__, str(v)))


def _compress(X: np.ndarray, y, features: list[int], labels: list):
    # collapse the sample to unique (pattern on features, label) cells with weights
    lab_idx = {lab: i for i, lab in enumerate(labels)}
    cells = Counter((tuple(row[features]) if features else (), lab_idx[lab]) for row, lab in zip(X, y))
    patterns = sorted({p for p, _ in cells})
    pidx = {p: i for i, p in enumerate(patterns)}
    W = np.zeros((len(patterns), len(labels)), dtype=np.int64)
    for (p, li), c in cells.items():
        W[pidx[p], li] += c
    P = np.array(patterns, dtype=bool).reshape(len(patterns), len(features))
    return P, W


def _coverage(conjs: list[frozenset], P: np.ndarray, features: list[int]) -> np.ndarray:
    col = {f: i for i, f in enumerate(features)}
    cov = np.ones((len(conjs), P.shape[0]), dtype=bool)
    for c, conj in enumerate(conjs):
        for f, pol in conj:
            cov[c] &= P[:, col[f]] == pol
    return cov


@dataclass
class ERMResult:
    hypothesis: RestrictedDecisionList
    errors: int
    n: int
    certified: bool
    enumerated: int

    @property
    def error(self) -> float:
        return self.errors / self.n if self.n else 0.0


def erm_decision_list(features: Iterable, X, y, m: int, mode: str = "exhaustive",
                      budget: int = 10 ** 7, labels: Sequence | None = None) -> ERMResult:
    """Empirical risk minimization over decision lists with <= m rules of <= m-1 literals.

    ``features`` may hold feature ids or literals. Exhaustive mode searches
    rule sequences depth-first with branch-and-bound; since a rule's label
    only affects the examples it claims, each rule takes its majority label.
    """
    if mode not in ("exhaustive", "greedy"):
        raise ValueError(f"unknown mode {mode!r}")
    X = check_assignments(X)
    y = check_labels(y, X.shape[0])
    feats = sorted({f.feature if isinstance(f, Literal) else int(f) for f in features})
    labels = list(labels) if labels is not None else _label_order(y)
    if not labels:
        raise ValueError("no labels to learn from")
    default = labels[0]
    conjs = candidate_conjunctions(feats, max(m - 1, 0))
    n_hyp = hypothesis_count(len(feats), m, len(labels))
    if mode == "exhaustive" and n_hyp > budget:
        raise BudgetExceededError(f"{n_hyp} hypotheses exceed budget {budget}")
    P, W = _compress(X, y, feats, labels)
    cov = _coverage(conjs, P, feats)
    n = int(W.sum())
    if mode == "greedy":
        seq, errors = _greedy(cov, W, m)
    else:
        seq, errors = _exhaustive(cov, W, m)
    rules = tuple((conjs[c], labels[li]) for c, li in seq)
    return ERMResult(RestrictedDecisionList(rules, default), int(errors), n,
                     mode == "exhaustive", n_hyp)


def _exhaustive(cov: np.ndarray, W: np.ndarray, m: int):
    n_cells = W.shape[0]
    totals = W.sum(axis=1)
    best = {"err": None, "seq": ()}
    cov_w = [(np.flatnonzero(row)) for row in cov]

    def visit(depth, remaining, err, seq):
        stop_err = err + int((totals[remaining] - W[remaining, 0]).sum())
        if best["err"] is None or stop_err < best["err"]:
            best["err"], best["seq"] = stop_err, seq
        if depth == m:
            return
        rem_mask = np.zeros(n_cells, dtype=bool)
        rem_mask[remaining] = True
        for c, cells in enumerate(cov_w):
            hit = cells[rem_mask[cells]]
            if hit.size == 0:
                continue
            counts = W[hit].sum(axis=0)
            li = int(np.argmax(counts))
            rule_err = int(counts.sum() - counts[li])
            if err + rule_err >= best["err"]:
                continue
            rest = remaining[~np.isin(remaining, hit)]
            visit(depth + 1, rest, err + rule_err, seq + ((c, li),))

    visit(0, np.arange(n_cells), 0, ())
    return best["seq"], best["err"]


def _greedy(cov: np.ndarray, W: np.ndarray, m: int):
    remaining = np.ones(W.shape[0], dtype=bool)
    totals = W.sum(axis=1)
    seq, err = [], 0
    current = int((totals - W[:, 0]).sum())
    for _ in range(m):
        best = None
        for c in range(cov.shape[0]):
            hit = cov[c] & remaining
            if not hit.any():
                continue
            counts = W[hit].sum(axis=0)
            li = int(np.argmax(counts))
            rest = remaining & ~hit
            total = err + int(counts.sum() - counts[li]) + int((totals[rest] - W[rest, 0]).sum())
            if best is None or total < best[0]:
                best = (total, c, li, int(counts.sum() - counts[li]), rest)
        if best is None or best[0] >= current:
            break
        current, c, li, rule_err, remaining = best
        err += rule_err
        seq.append((c, li))
    return tuple(seq), current


class DecisionListClassifier(ClassifierMixin, BaseEstimator):
    """scikit-learn wrapper around :func:`erm_decision_list`."""

    def __init__(self, m: int = 2, features=None, mode: str = "exhaustive", budget: int = 10 ** 7):
        self.m = m
        self.features = features
        self.mode = mode
        self.budget = budget

    def fit(self, X, y):
        X = check_assignments(X)
        y = check_labels(y, X.shape[0])
        feats = range(X.shape[1]) if self.features is None else self.features
        res = erm_decision_list(feats, X, y, self.m, self.mode, self.budget)
        self.hypothesis_ = res.hypothesis
        self.empirical_error_ = res.error
        self.certified_ = res.certified
        self.classes_ = np.array(_label_order(y), dtype=object)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        if not hasattr(self, "hypothesis_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("call fit first")
        X = check_assignments(X, self.n_features_in_)
        return self.hypothesis_.predict(X)


# -- exact error --------------------------------------------------------------

def _exception_wrong_prob(source: StochasticSource, n_labels: int):
    corr = source.exception.corruption
    if n_labels < 2 or corr == "wrong_feature":
        return 0
    if corr == "mixed":
        return Fraction(2, 3)
    return 1


def eval_error(h, target) -> Any:
    """Error of ``h`` on a labeled sample ``(X, y)`` or exactly on ``(world, source)``."""
    if isinstance(target, tuple) and len(target) == 2 and isinstance(target[0], Representation):
        return _source_error(h, *target)
    X, y = target
    X = check_assignments(X)
    y = check_labels(y, X.shape[0])
    if len(y) == 0:
        return 0.0
    pred = h.predict(X)
    return float(np.mean(pred != y))


def _source_error(h, world: Representation, source: StochasticSource):
    labels = world.label_set
    q = _exception_wrong_prob(source, len(labels))
    total = 0
    for c, pool in enumerate(world.pools):
        w = source.component_weights[c]
        eps = source.exception.rate(c)
        true = world.labels[c]
        per = Fraction(1, len(pool)) if isinstance(w, (Fraction, int)) else 1 / len(pool)
        for x in pool:
            pred = h.predict_values(x.values)
            wrong_valid = 1 if pred != true else 0
            # exception label: with prob q uniform over the other labels, else the true one
            if pred == true:
                wrong_exc = q
            elif q:
                wrong_exc = (1 - q) + q * (1 - Fraction(1, len(labels) - 1))
            else:
                wrong_exc = 1
            total += w * per * ((1 - eps) * wrong_valid + eps * wrong_exc)
    return total


def irreducible_error(world: Representation, source: StochasticSource):
    """Smallest error any labeling can reach on the source (exception label noise)."""
    labels = world.label_set
    q = _exception_wrong_prob(source, len(labels))
    total = 0
    for c, pool in enumerate(world.pools):
        w = source.component_weights[c]
        eps = source.exception.rate(c)
        per = Fraction(1, len(pool)) if isinstance(w, (Fraction, int)) else 1 / len(pool)
        for _ in pool:
            best_true = eps * q
            if q and len(labels) > 1:
                other = (1 - eps) + eps * ((1 - q) + q * (1 - Fraction(1, len(labels) - 1)))
            else:
                other = 1
            total += w * per * min(best_true, other)
    return total


@dataclass
class ErrhbReport:
    h_beta: RestrictedDecisionList
    error: Any
    epsilon: Any
    bound: float
    passed: bool


def build_h_beta(world: Representation, source: StochasticSource, beta,
                 analysis: DistributionAnalysis | None = None) -> RestrictedDecisionList:
    """Per-component rules keeping only literals with mass >= beta, heaviest component first."""
    analysis = analysis or analyze_distribution(world, source)
    order = sorted(range(world.m), key=lambda c: (-analysis.masses[c], c))
    rules = []
    for g in order:
        conj = set()
        for g2 in range(world.m):
            if (g, g2) in world.phi_table:
                lit = world.phi_table[(g, g2)]
                if analysis.beta.get(world.positive(lit), 0) >= beta:
                    conj.add(lit)
        rules.append((frozenset(conj), world.labels[g]))
    return RestrictedDecisionList(tuple(rules), world.labels[order[0]])


def verify_errhb(world: Representation, source: StochasticSource, beta) -> ErrhbReport:
    beta_q = Fraction(beta)
    analysis = analyze_distribution(world, source)
    h = build_h_beta(world, source, beta_q, analysis)
    err = _source_error(h, world, source)
    eps = source.exception_probability()
    m = world.m
    excess = Fraction(err) - Fraction(eps)
    # err <= eps + sqrt(beta) m^2 / 2, compared without square roots
    passed = excess <= 0 or excess * excess <= beta_q * Fraction(m ** 4, 4)
    return ErrhbReport(h, err, eps, float(eps) + math.sqrt(beta) * m * m / 2, passed)


# -- three-stage learner ----------------------------------------------------------

@dataclass(frozen=True)
class StochasticRunParams:
    alpha: float
    delta: float
    n: int
    m: int
    beta: float | None = None
    b: int | None = None
    erm: str = "exhaustive"
    budget: int = 10 ** 7

    def __post_init__(self):
        if not (0 < self.alpha <= 1 and 0 < self.delta < 1):
            raise ValueError("alpha in (0, 1], delta in (0, 1) required")
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be positive")
        if self.beta is not None and not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.n1 > self.n:
            raise ValueError("n1 exceeds n")

    @property
    def beta_(self) -> float:
        return self.alpha ** 2 / self.m ** 4 if self.beta is None else self.beta

    @property
    def b_(self) -> int:
        return discovery_budget(self.beta_, self.delta) if self.b is None else int(self.b)

    @property
    def n1(self) -> int:
        return math.ceil(self.alpha * self.n / 2)


@dataclass
class ThreeStageResult:
    transcript: Transcript
    discovery: DiscoveryResult
    erm: ERMResult
    stage_mistakes: tuple
    stage_rounds: tuple

    @property
    def mistakes(self) -> int:
        return sum(self.stage_mistakes)

    @property
    def rate(self) -> float:
        n = sum(self.stage_rounds)
        return self.mistakes / n if n else 0.0

    def summary(self) -> dict:
        s3_rounds = self.stage_rounds[2]
        return {
            "stage1": {
                "mistakes": self.stage_mistakes[0],
                "F": {f"{l.feature}{'+' if l.polarity else '-'}": c
                      for l, c in sorted(self.discovery.counter.counts.items())},
                "phi_hat": sorted([l.feature, l.polarity] for l in self.discovery.phi_hat),
            },
            "stage2": {"n1": self.stage_rounds[1], "erm_error": self.erm.error},
            "stage3": {
                "mistakes": self.stage_mistakes[2],
                "rate": self.stage_mistakes[2] / s3_rounds if s3_rounds else 0.0,
            },
        }


def three_stage_run(stream: Sequence[StreamEvent], teacher: Teacher,
                    params: StochasticRunParams) -> ThreeStageResult:
    """Discover features, fit a decision list on a labeled batch, then predict with it."""
    it = iter(stream)
    disc = feature_discovery(it, teacher, params.b_, params.beta_)
    rounds = list(disc.rounds)
    x0, y0 = disc.anchor
    s1_rounds = len(rounds)

    sample_x, sample_y, sample_t = [], [], []
    s2_mistakes = 0
    for _ in range(params.n1):
        event = next(it, None)
        if event is None:
            break
        fb = teacher.respond(event, y0, x0.t)
        _record(rounds, event, y0, x0.t, fb, teacher)
        s2_mistakes += fb is not None
        sample_x.append(event.x.values)
        sample_y.append(y0 if fb is None else fb.label)
        sample_t.append(event.x)
    s2_rounds = len(rounds) - s1_rounds

    X1 = np.array(sample_x, dtype=bool).reshape(len(sample_x), len(x0.values))
    if sample_y:
        erm = erm_decision_list(disc.phi_hat, X1, sample_y, params.m, params.erm, params.budget)
    else:
        erm = ERMResult(RestrictedDecisionList((), y0), 0, 0, params.erm == "exhaustive", 0)
    h = erm.hypothesis

    explain = {}
    for x in sample_t:
        explain[h.predict_values(x.values)] = x
    s3_mistakes = 0
    for event in it:
        label = h.predict_values(event.x.values)
        expl = explain.get(label, x0)
        fb = teacher.respond(event, label, expl.t)
        _record(rounds, event, label, expl.t, fb, teacher)
        s3_mistakes += fb is not None
    s3_rounds = len(rounds) - s1_rounds - s2_rounds
    return ThreeStageResult(Transcript(rounds), disc, erm,
                            (disc.mistakes, s2_mistakes, s3_mistakes),
                            (s1_rounds, s2_rounds, s3_rounds))
