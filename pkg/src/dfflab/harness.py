"""Seeded trial batches, bound and rule-invariant checks, adversarial stream search, CSV export."""

from __future__ import annotations

import csv
import io
import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .core import Example, Literal, Representation, load_world, world_from_dict
from .learners import (
    DFF18,
    LEARNERS,
    PFRDFF,
    SRDFF,
    UniqueLabelDFF,
    Transcript,
    make_learner,
    run_session,
    ub,
)
from .world import (
    ExceptionSpec,
    Hidden,
    Observation,
    StochasticSource,
    StreamEvent,
    Teacher,
    TeacherFeedback,
    WorldGenParams,
    adversarial_stream,
    count_min_exceptions,
    generate_world,
    stochastic_stream,
)


def trial_seed(base_seed: int, trial: int) -> int:
    """Independent per-trial seed derived from ``(base_seed, trial)``."""
    return int(np.random.SeedSequence([base_seed, trial]).generate_state(1, np.uint64)[0] >> 1)


def corrected_bound(m: int, k: int) -> int:
    """Bound that also charges each exception for the rule it may create."""
    return m * (m - 1) + (m + 1) * k


def pfr_bound(m: int, k: int) -> float:
    u = ub(m, k)
    return 0.0 if u == 0 else 32 * u * math.log2(8 * u) ** 2


def unique_label_bound(m: int, k: int) -> int:
    return 2 * m * (m - 1) + 6 * k


# -- reports ------------------------------------------------------------------

@dataclass
class TrialResult:
    trial: int
    seed: int
    mistakes: int
    bound: float
    passed: bool
    info: dict = field(default_factory=dict)


@dataclass
class BoundReport:
    learner: str
    m: int
    param: Any                         # k, or epsilon for stochastic runs
    bound: float
    kind: str = "hard"                 # "hard", "expectation" or "rate"
    trials: list = field(default_factory=list)
    invariant_violations: list = field(default_factory=list)
    required_fraction: float = 1.0     # share of trials that must pass ("rate" reports)

    @property
    def mistakes(self) -> list[int]:
        return [t.mistakes for t in self.trials]

    @property
    def mean(self) -> float:
        return float(np.mean(self.mistakes)) if self.trials else 0.0

    @property
    def stderr(self) -> float:
        n = len(self.trials)
        return float(np.std(self.mistakes, ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    @property
    def margin(self) -> float:
        return 3 * self.stderr if self.kind == "expectation" else 0.0

    @property
    def violations(self) -> list[int]:
        return [t.trial for t in self.trials if not t.passed]

    @property
    def passed(self) -> bool:
        if self.invariant_violations:
            return False
        if self.kind == "expectation":
            return self.mean <= self.bound + self.margin
        if self.kind == "rate":
            return len(self.trials) - len(self.violations) >= self.required_fraction * len(self.trials)
        return not self.violations

    def add(self, result: TrialResult) -> None:
        self.trials.append(result)


@dataclass
class SuiteResult:
    name: str
    reports: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)   # name -> (passed, detail)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports) and all(ok for ok, _ in self.checks.values())

    def check(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks[name] = (bool(ok), detail)

    def lines(self) -> list[str]:
        out = []
        for r in self.reports:
            tag = "PASS" if r.passed else "FAIL"
            stat = f"mean={r.mean:.3f}+3se={r.margin:.3f}" if r.kind == "expectation" else \
                f"max={max(r.mistakes, default=0)} violations={len(r.violations)}"
            out.append(f"{tag} {self.name} {r.learner} m={r.m} k={r.param} bound={r.bound:g} {stat}")
            out.extend(f"  {v}" for v in r.invariant_violations[:5])
        for name, (ok, detail) in self.checks.items():
            out.append(f"{'PASS' if ok else 'FAIL'} {self.name} {name} {detail}".rstrip())
        return out


def export_results(reports: Iterable[BoundReport], path=None) -> str:
    """Write one CSV row per trial and a summary row per report; returns the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["learner", "m", "k_or_eps", "trial", "seed", "mistakes", "bound", "pass"])
    for r in reports:
        for t in r.trials:
            w.writerow([r.learner, r.m, r.param, t.trial, t.seed, t.mistakes, f"{t.bound:g}", int(t.passed)])
        w.writerow([r.learner, r.m, r.param, "summary", "", f"{r.mean:.6g}", f"{r.bound:g}", int(r.passed)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_results(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


# -- invariant checks -----------------------------------------------------------

class RuleAudit:
    """Tracks hidden round flags so rule state can be judged against ground truth."""

    def __init__(self, world: Representation):
        self.world = world
        self.exception: dict[int, bool] = {}
        self.component: dict[int, int] = {}
        self.violations: list[str] = []

    def observe(self, event: StreamEvent) -> None:
        self.exception[event.t] = event.hidden.exception
        self.component[event.t] = event.hidden.component

    def valid(self, rule) -> bool:
        return not self.exception[rule.representative.t]

    def corrupted(self, rule) -> bool:
        return any(self.exception[t] for t in rule.added_at)

    def fail(self, t: int, rule_id, message: str) -> None:
        self.violations.append(f"round {t} rule {rule_id}: {message}")


class RuleInvariantChecker(RuleAudit):
    """Per-round structural checks for SR-DFF (coverage, distinctness, deletions, rule count)."""

    def __init__(self, world: Representation, m: int):
        super().__init__(world)
        self.m = m
        self.n_exceptions = 0
        self._seen_deleted = 0

    def __call__(self, event, learner, rnd) -> None:
        self.observe(event)
        t = event.t
        self.n_exceptions += event.hidden.exception
        if not hasattr(learner, "rules_"):
            return
        owners: dict[int, int] = {}
        for rule in learner.rules_:
            if not self.valid(rule) or self.corrupted(rule):
                continue
            comp = self.component[rule.representative.t]
            for x in self.world.pool_values[comp]:
                if not rule.matches(x):
                    self.fail(t, rule.rule_id, f"coverage: misses an example of component {comp}")
                    break
            if comp in owners:
                self.fail(t, rule.rule_id, f"distinct_components: shares component {comp} with rule {owners[comp]}")
            owners[comp] = rule.rule_id
        for rule in learner.deleted_[self._seen_deleted:]:
            if self.valid(rule) and not self.corrupted(rule):
                self.fail(t, rule.rule_id, "valid_rule_deleted: deleted a valid uncorrupted rule")
        self._seen_deleted = len(learner.deleted_)
        if learner.n_created_ > self.m + self.n_exceptions:
            self.fail(t, None, f"creation_count: {learner.n_created_} rules created with "
                               f"{self.n_exceptions} exceptions so far (m={self.m})")


class UpdateCounterChecker(RuleAudit):
    """Checks that a live valid rule's exception updates are >= (updates - (m-1)) / 2."""

    def __init__(self, world: Representation, m: int):
        super().__init__(world)
        self.m = m

    def __call__(self, event, learner, rnd) -> None:
        self.observe(event)
        if not hasattr(learner, "rules_"):
            return
        for rule in learner.rules_:
            if not self.valid(rule):
                continue
            exc = sum(self.exception[u] for u in rule.updated_at)
            if 2 * exc < rule.update_count - (self.m - 1):
                self.fail(event.t, rule.rule_id,
                          f"update counter {rule.update_count} with only {exc} exception updates")


def chain(*hooks):
    hooks = [h for h in hooks if h is not None]

    def run(event, learner, rnd):
        for h in hooks:
            h(event, learner, rnd)
    return run


# -- stream builders --------------------------------------------------------------

def random_stream(world: Representation, length: int, k: int, rng: random.Random,
                  corruption: str = "mixed") -> list[StreamEvent]:
    """Uniformly random components with ``k`` exception rounds at random positions."""
    script = [rng.randrange(world.m) for _ in range(length)]
    idx = rng.sample(range(length), min(k, length))
    return adversarial_stream(world, script, ExceptionSpec("adversarial", idx, corruption=corruption),
                              seed=rng.getrandbits(32))


def _event(t, comp, values, override=None) -> StreamEvent:
    return StreamEvent(t, Observation(t, values), Hidden(comp, override is not None, None, None, 0, override))


def greedy_stream(world: Representation, m: int, k: int, rng: random.Random,
                  max_len: int | None = None, exception_rate: float = 0.3,
                  learner=None) -> list[StreamEvent]:
    """Adaptive script against ``learner`` (default SR-DFF(m)): always pick an example it gets wrong.

    Up to ``k`` rounds carry adversarial feedback (any label other than the
    prediction and a random literal true on the example); these are spent at
    random, and whenever no valid round can force a mistake.
    """
    learner = clone_fresh(learner) if learner is not None else SRDFF(m)
    teacher = Teacher(world)
    cands = [(c, x.values) for c, pool in enumerate(world.pools) for x in pool]
    labels = world.label_set
    max_len = max_len or 3 * (ub(m, k) + k) + 10
    budget = k
    c, values = rng.choice(cands)
    override = None
    if budget and len(labels) > 1 and rng.random() < 0.2:
        override = TeacherFeedback(rng.choice([l for l in labels if l != world.labels[c]]))
        budget -= 1
    first = _event(0, c, values, override)
    events = [first]
    learner.start(first.x, teacher.label(first))
    for t in range(1, max_len):
        preds = [learner.predict_one(Observation(t, v)) for _, v in cands]
        wrong = [i for i, (cv, p) in enumerate(zip(cands, preds)) if p.label != world.labels[cv[0]]]
        use_exc = budget > 0 and len(labels) > 1 and (not wrong or rng.random() < exception_rate)
        if use_exc:
            i = rng.randrange(len(cands))
            c, values = cands[i]
            lab = rng.choice([l for l in labels if l != preds[i].label])
            f = rng.randrange(world.n_features)
            event = _event(t, c, values, TeacherFeedback(lab, Literal(f, values[f])))
            budget -= 1
        elif wrong:
            i = rng.choice(wrong)
            event = _event(t, *cands[i])
        else:
            break
        pred = preds[i]
        fb = teacher.respond(event, pred.label, pred.explanation.t)
        learner.absorb(event.x, pred, fb)
        events.append(event)
    return events


def clone_fresh(learner):
    from sklearn.base import clone
    return clone(learner)


def add_noise_features(world: Representation, count: int, seed: int = 0) -> Representation:
    """Same world with ``count`` extra random features appended to every example."""
    rng = random.Random(seed)
    noise = {}
    pools = []
    for c, pool in enumerate(world.pools):
        out = []
        for x in pool:
            if x.values not in noise:  # shared examples keep identical values
                noise[x.values] = tuple(rng.random() < 0.5 for _ in range(count))
            out.append(Example(x.values + noise[x.values], c))
        pools.append(tuple(out))
    return Representation(world.labels, world.n_features + count, tuple(pools), dict(world.phi_table))


def replay_script(script: Sequence[tuple], world: Representation) -> list[StreamEvent]:
    """Events from ``(component, pool_index, override)`` triples."""
    return [_event(t, c, world.pools[c][i].values, ov) for t, (c, i, ov) in enumerate(script)]


def events_to_script(events: Sequence[StreamEvent], world: Representation) -> list[tuple]:
    out = []
    for e in events:
        c = e.hidden.component
        i = world.pool_values[c].index(e.x.values)
        out.append((c, i, e.hidden.override))
    return out


# -- running ----------------------------------------------------------------------

def run_learner(learner, world: Representation, events: Sequence[StreamEvent], hook=None) -> Transcript:
    return run_session(learner, events, Teacher(world), hook)


def bound_instance(m: int, k: int, seed: int, unique_labels: bool = False):
    """World and stream for one bound trial: even seeds get random streams, odd seeds greedy ones."""
    rng = random.Random(seed)
    params = WorldGenParams(m, pool_size=2, noise_features=rng.randint(0, 2),
                            unique_labels=unique_labels,
                            overlap=0 if unique_labels else rng.randint(0, 1), seed=rng.getrandbits(32))
    world, _ = generate_world(params)
    if seed % 2 == 0:
        length = rng.randint(max(2, m * m), 3 * m * m + 3 * k + 3)
        events = random_stream(world, length, k, rng)
    else:
        events = greedy_stream(world, m, k, rng)
    return world, events


def srdff_bound_suite(trials: int = 1000, base_seed: int = 0, ms=range(1, 7), ks=range(0, 6),
                   invariants: bool = True) -> SuiteResult:
    suite = SuiteResult("srdff_bound")
    rule_violations = []
    corrected_fail = []
    cme_fail = []
    for m in ms:
        for k in ks:
            rep = BoundReport("srdff", m, k, ub(m, k))
            for trial in range(trials):
                seed = trial_seed(base_seed + 1000 * m + k, trial)
                world, events = bound_instance(m, k, seed)
                checker = RuleInvariantChecker(world, m) if invariants else None
                tr = run_learner(SRDFF(m), world, events, checker)
                injected = sum(e.hidden.exception for e in events)
                bound = ub(m, k)
                rep.add(TrialResult(trial, seed, tr.mistakes, bound, tr.mistakes <= bound,
                                    {"injected": injected}))
                if tr.mistakes > corrected_bound(m, k):
                    corrected_fail.append((m, k, trial))
                if count_min_exceptions(tr, world) > injected:
                    cme_fail.append((m, k, trial))
                if checker and checker.violations:
                    rule_violations.extend(f"m={m} k={k} trial={trial} {v}" for v in checker.violations)
            suite.reports.append(rep)
    worst = max((max(r.mistakes) - r.bound, r.m, r.param) for r in suite.reports)
    suite.check("corrected_bound", not corrected_fail,
                f"m(m-1)+(m+1)k violations={len(corrected_fail)}; largest excess over m(m-1)+mk: "
                f"{worst[0]} at m={worst[1]} k={worst[2]}")
    suite.check("min_exceptions<=injected", not cme_fail, f"violations={len(cme_fail)}")
    if invariants:
        suite.check("rule_invariants", not rule_violations,
                    f"violations={len(rule_violations)}" + (f" first: {rule_violations[0]}" if rule_violations else ""))
    return suite


def pfr_suite(trials: int = 1000, base_seed: int = 0, ms=range(1, 7), ks=range(0, 6)) -> SuiteResult:
    suite = SuiteResult("pfr")
    terminal_fail = []
    for m in ms:
        for k in ks:
            bound = pfr_bound(m, k)
            rep = BoundReport("pfrdff", m, k, bound)
            for trial in range(trials):
                seed = trial_seed(base_seed + 1000 * m + k, trial)
                world, events = bound_instance(m, k, seed)
                learner = PFRDFF()
                tr = run_learner(learner, world, events)
                last = learner.phases_[-1] if hasattr(learner, "phases_") else None
                rep.add(TrialResult(trial, seed, tr.mistakes, bound, tr.mistakes <= bound,
                                    {"terminal_m": last.m if last else 1}))
                if last is not None and last.m >= 2 * m:
                    terminal_fail.append((m, k, trial, last.m, last.k))
            suite.reports.append(rep)
    detail = f"violations={len(terminal_fail)}"
    if terminal_fail:
        detail += " first (m,k,trial,m~,k~)=" + str(terminal_fail[0])
    suite.check("terminal_phase_m<2m", not terminal_fail, detail)
    return suite


def unique_label_suite(trials: int = 2000, base_seed: int = 0, ms=range(2, 6), ks=range(0, 5)) -> SuiteResult:
    suite = SuiteResult("unique_label")
    counter_violations = []
    for m in ms:
        for k in ks:
            rep = BoundReport("unique_label", m, k, unique_label_bound(m, k), kind="expectation")
            for trial in range(trials):
                seed = trial_seed(base_seed + 7000 + 1000 * m + k, trial)
                world, events = bound_instance(m, k, seed, unique_labels=True)
                checker = UpdateCounterChecker(world, m)
                learner = UniqueLabelDFF(m, random_state=seed)
                tr = run_learner(learner, world, events, checker)
                rep.add(TrialResult(trial, seed, tr.mistakes, rep.bound, True))
                counter_violations.extend(f"m={m} k={k} trial={trial} {v}" for v in checker.violations)
            suite.reports.append(rep)
    suite.check("update_counter", not counter_violations,
                f"violations={len(counter_violations)}" + (f" first: {counter_violations[0]}" if counter_violations else ""))
    return suite


def equivalence_suite(trials: int = 500, base_seed: int = 0, ms=range(1, 7)) -> SuiteResult:
    """DFF18 and SR-DFF on exception-free streams must produce identical transcripts."""
    suite = SuiteResult("dff18_equivalence")
    ms = list(ms)
    diffs = []
    for trial in range(trials):
        m = ms[trial % len(ms)]
        seed = trial_seed(base_seed + 99, trial)
        world, events = bound_instance(m, 0, seed)
        a = run_learner(SRDFF(m), world, events).to_jsonl()
        b = run_learner(DFF18(), world, events).to_jsonl()
        if a != b:
            diffs.append(trial)
    suite.check("identical_transcripts", not diffs, f"{trials - len(diffs)}/{trials} identical")
    return suite


def noise_independence_suite(trials: int = 200, base_seed: int = 0, noise: int = 50) -> SuiteResult:
    """SR-DFF mistakes agree on worlds that differ only in noise features."""
    suite = SuiteResult("feature_count_independence")
    diffs = []
    for trial in range(trials):
        seed = trial_seed(base_seed + 55, trial)
        rng = random.Random(seed)
        m, k = rng.randint(1, 6), rng.randint(0, 5)
        world, _ = generate_world(WorldGenParams(m, pool_size=2, seed=rng.getrandbits(32)))
        big = add_noise_features(world, noise, seed)
        events = greedy_stream(world, m, k, rng) if trial % 2 else \
            random_stream(world, rng.randint(1, 4 * m * m + 4), k, rng, corruption="wrong_label")
        script = events_to_script(events, world)
        small_tr = run_learner(SRDFF(m), world, replay_script(script, world))
        big_tr = run_learner(SRDFF(m), big, replay_script(script, big))
        if small_tr.mistakes != big_tr.mistakes:
            diffs.append(trial)
    suite.check("identical_mistakes", not diffs, f"{trials - len(diffs)}/{trials} matched pairs agree")
    return suite


def loopback_suite(trials: int = 100, base_seed: int = 0) -> SuiteResult:
    """Each learner served over a socket pair must reproduce its in-process transcript."""
    from .protocol import loopback_session

    suite = SuiteResult("serve_loopback")
    for name in LEARNERS:
        diffs = []
        for trial in range(trials):
            seed = trial_seed(base_seed + 77, trial)
            rng = random.Random(seed)
            m, k = rng.randint(2, 5), rng.randint(0, 3)
            spec = {"name": name}
            if name in ("srdff", "unique_label"):
                spec["m"] = m
            if name == "unique_label":
                spec["seed"] = seed
            world, events = bound_instance(m, k, seed, unique_labels=name == "unique_label")
            local = run_learner(make_learner(spec), world, events).to_jsonl()
            remote, _ = loopback_session(spec, world, events)
            if remote.to_jsonl() != local:
                diffs.append(trial)
        suite.check(name, not diffs, f"{trials - len(diffs)}/{trials} byte-identical")
    return suite


def rule_invariant_suite(trials: int = 1000, base_seed: int = 0) -> SuiteResult:
    res = srdff_bound_suite(trials, base_seed)
    out = SuiteResult("rule_invariants")
    out.checks = {k: v for k, v in res.checks.items() if k == "rule_invariants"}
    return out


# -- adversarial search ---------------------------------------------------------------

@dataclass
class SearchResult:
    script: list
    mistakes: int
    exhaustive: bool
    explored: int


def _mistakes_of(world, script, factory) -> int:
    return run_learner(factory(), world, replay_script(script, world)).mistakes


def adversarial_search(world: Representation, length: int, k: int, factory: Callable | None = None,
                       budget: int = 50_000, seed: int = 0) -> SearchResult:
    """Look for a script of ``length`` rounds with <= ``k`` adversarial rounds maximizing mistakes.

    Scripts of length <= 8 are searched exhaustively (depth-first, each node
    replays its prefix) while the node budget lasts; otherwise, or when
    the budget runs out, greedy restarts with single-round mutations are used
    and the result is not claimed optimal.
    """
    factory = factory or (lambda: SRDFF(world.m))
    if length <= 0:
        return SearchResult([], 0, True, 0)
    if length <= 8:
        res = _exhaustive_search(world, length, k, factory, budget)
        if res is not None:
            return res
    return _heuristic_search(world, length, k, factory, budget, seed)


def _replay(world, script, factory):
    learner, teacher = factory(), Teacher(world)
    mistakes = 0
    for t, (c, i, ov) in enumerate(script):
        e = _event(t, c, world.pools[c][i].values, ov)
        if t == 0:
            learner.start(e.x, teacher.label(e))
            continue
        pred = learner.predict_one(e.x)
        fb = teacher.respond(e, pred.label, pred.explanation.t)
        learner.absorb(e.x, pred, fb)
        mistakes += fb is not None
    return learner, mistakes


def _exhaustive_search(world, length, k, factory, budget) -> SearchResult | None:
    labels = world.label_set
    cands = [(c, i, x.values) for c, pool in enumerate(world.pools) for i, x in enumerate(pool)]
    best = {"m": -1, "script": []}
    explored = 0

    def step(script, k_left):
        nonlocal explored
        explored += 1
        if explored > budget:
            raise _Budget
        learner, mistakes = _replay(world, script, factory)
        if mistakes > best["m"]:
            best["m"], best["script"] = mistakes, list(script)
        t = len(script)
        if t == length:
            return
        for c, i, values in cands:
            pred = learner.predict_one(Observation(t, values)).label
            # a correct valid round changes nothing, so only mistakes are branched on
            if pred != world.labels[c]:
                step(script + [(c, i, None)], k_left)
            if k_left and len(labels) > 1:
                for lab in labels:
                    if lab == pred:
                        continue
                    for f in range(world.n_features):
                        ov = TeacherFeedback(lab, Literal(f, values[f]))
                        step(script + [(c, i, ov)], k_left - 1)

    try:
        for c, i, _ in cands:
            step([(c, i, None)], k)
            if k:
                for lab in labels:
                    if lab != world.labels[c]:
                        step([(c, i, TeacherFeedback(lab))], k - 1)
    except _Budget:
        return None
    return SearchResult(best["script"], best["m"], True, explored)


class _Budget(Exception):
    pass


def _heuristic_search(world, length, k, factory, budget, seed) -> SearchResult:
    rng = random.Random(seed)
    best_script, best = [], -1
    explored = 0
    restarts = max(1, min(50, budget // max(1, length * 20)))
    for _ in range(restarts):
        events = greedy_stream(world, world.m, k, rng, max_len=length, learner=factory())
        script = events_to_script(events, world)
        score = _mistakes_of(world, script, factory)
        explored += 1
        for _ in range(length):
            j = rng.randrange(len(script))
            c = rng.randrange(world.m)
            cand = list(script)
            cand[j] = (c, rng.randrange(len(world.pools[c])), None if script[j][2] is None else script[j][2])
            s = _mistakes_of(world, cand, factory)
            explored += 1
            if s >= score:
                script, score = cand, s
        if score > best:
            best, best_script = score, script
    return SearchResult(best_script, best, False, explored)


# -- stochastic suites --------------------------------------------------------------

def random_source(m: int, rng: random.Random, epsilon=Fraction(0), corruption: str = "both") -> StochasticSource:
    cuts = sorted(rng.randint(1, 99) for _ in range(m - 1))
    parts = [b - a for a, b in zip([0] + cuts, cuts + [100])]
    # keep every component present
    parts = [p + 1 for p in parts]
    total = sum(parts)
    return StochasticSource(tuple(Fraction(p, total) for p in parts),
                            ExceptionSpec("stochastic", epsilon=epsilon, corruption=corruption))


def distribution_suite(sources: int = 200, errhb: int = 100, base_seed: int = 0) -> SuiteResult:
    from .stochastic import analyze_distribution, phi_beta, verify_errhb

    suite = SuiteResult("distribution")
    bad_sum, bad_size = [], []
    for trial in range(sources):
        rng = random.Random(trial_seed(base_seed + 31, trial))
        m = rng.randint(1, 6)
        world, _ = generate_world(WorldGenParams(m, pool_size=2, seed=rng.getrandbits(32)))
        eps = Fraction(rng.randint(0, 20), 100)
        a = analyze_distribution(world, random_source(m, rng, eps))
        if a.total() > Fraction(1, 2):
            bad_sum.append(trial)
        beta = Fraction(rng.randint(1, 50), 200)
        if len(phi_beta(a, beta)) * 2 * beta > 1:
            bad_size.append(trial)
    suite.check("sum_beta<=1/2", not bad_sum, f"{sources - len(bad_sum)}/{sources}")
    suite.check("|phi_beta|<=1/(2beta)", not bad_size, f"{sources - len(bad_size)}/{sources}")
    failed = []
    for trial in range(errhb):
        rng = random.Random(trial_seed(base_seed + 37, trial))
        m = rng.randint(1, 5)
        world, _ = generate_world(WorldGenParams(m, pool_size=rng.randint(1, 3),
                                                 noise_features=rng.randint(0, 2), seed=rng.getrandbits(32)))
        eps = Fraction(rng.randint(0, 20), 100)
        src = random_source(m, rng, eps, rng.choice(["wrong_label", "wrong_feature", "both", "mixed"]))
        beta = Fraction(rng.randint(1, 100), 400)
        if not verify_errhb(world, src, beta).passed:
            failed.append(trial)
    suite.check("errhb", not failed, f"{errhb - len(failed)}/{errhb} within eps + sqrt(beta) m^2/2")
    return suite


def concentration_world(seed: int):
    """m=3 unique-label world with masses (1/2, 3/10, 1/5), so pair masses 3/20, 1/10, 3/50."""
    world, _ = generate_world(WorldGenParams(3, unique_labels=True, pool_size=3, noise_features=2, seed=seed))
    src = StochasticSource((Fraction(1, 2), Fraction(3, 10), Fraction(1, 5)),
                           ExceptionSpec("stochastic", epsilon=Fraction(0)))
    return world, src


def concentration_suite(seeds: int = 500, beta: float = 0.08, delta: float = 0.1, base_seed: int = 0) -> SuiteResult:
    from .stochastic import analyze_distribution, discovery_budget, feature_discovery, phi_beta

    suite = SuiteResult("concentration")
    b = discovery_budget(beta, delta)
    covered, over_budget = 0, []
    for trial in range(seeds):
        seed = trial_seed(base_seed + 77, trial)
        world, src = concentration_world(seed)
        target = phi_beta(analyze_distribution(world, src), beta)
        events = stochastic_stream(world, src, 4 * b + 100, seed)
        res = feature_discovery(iter(events), Teacher(world), b, beta)
        covered += target <= res.phi_hat
        if res.mistakes > b:
            over_budget.append(trial)
    frac = covered / seeds
    suite.check("phi_beta_subset_phi_hat", frac >= 1 - delta, f"{covered}/{seeds} = {frac:.3f} (need >= {1 - delta})")
    suite.check("stage1_mistakes<=b", not over_budget, f"b={b}, violations={len(over_budget)}")
    return suite


def end_to_end_suite(seeds: int = 200, n: int = 20000, alpha: float = 0.25, delta: float = 0.1,
                     beta: float | None = 1 / 64, epsilons=(0.0, 0.05), base_seed: int = 0) -> SuiteResult:
    from .stochastic import StochasticRunParams, capacity_bound, hypothesis_count, three_stage_run

    suite = SuiteResult("end_to_end")
    m = 2
    for eps in epsilons:
        params = StochasticRunParams(alpha=alpha, delta=delta, n=n, m=m, beta=beta)
        rep = BoundReport("three_stage", m, eps, eps + 2 * alpha, kind="rate")
        zero_s3 = 0
        cap_fail = 0
        for trial in range(seeds):
            seed = trial_seed(base_seed + 313 + int(eps * 1000), trial)
            rng = random.Random(seed)
            world, _ = generate_world(WorldGenParams(m, labels=("A", "B"), pool_size=3,
                                                     noise_features=2, seed=rng.getrandbits(32)))
            src = random_source(m, rng, Fraction(eps).limit_denominator(1000), "mixed")
            events = stochastic_stream(world, src, n, seed)
            res = three_stage_run(events, Teacher(world), params)
            rate = res.rate
            rep.add(TrialResult(trial, seed, res.mistakes, rep.bound, rate <= eps + 2 * alpha,
                                {"rate": rate, "stage3": res.stage_mistakes[2]}))
            zero_s3 += res.stage_mistakes[2] == 0
            n_phi = len(res.discovery.phi_hat)
            if math.log2(hypothesis_count(n_phi, m, len(world.label_set))) > capacity_bound(m, params.beta_):
                cap_fail += 1
        frac = 1 - len(rep.violations) / seeds
        suite.check(f"rate<=eps+2alpha eps={eps}", frac >= 1 - 3 * delta,
                    f"{frac:.3f} of seeds (need >= {1 - 3 * delta:.1f})")
        if eps == 0:
            suite.check("stage3_zero eps=0", zero_s3 / seeds >= 0.9, f"{zero_s3}/{seeds}")
        suite.check(f"capacity eps={eps}", cap_fail == 0, f"violations={cap_fail}")
    return suite


SUITES = {
    "srdff_bound": srdff_bound_suite,
    "pfr": pfr_suite,
    "unique_label": unique_label_suite,
    "rule_invariants": rule_invariant_suite,
    "equivalence": equivalence_suite,
    "noise": noise_independence_suite,
    "distribution": distribution_suite,
    "concentration": concentration_suite,
    "stochastic": end_to_end_suite,
    "loopback": loopback_suite,
}


# -- scenarios ---------------------------------------------------------------------

@dataclass
class TrialConfig:
    scenario: dict
    trials: int = 1
    seed: int = 0
    checks: tuple = ("bound",)
    base_dir: Path | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


def load_scenario(path) -> dict:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    doc.setdefault("_base_dir", str(path.parent))
    return doc


def scenario_world(scenario: dict, base_dir=None) -> Representation:
    w = scenario["world"]
    if isinstance(w, str):
        base = Path(base_dir or scenario.get("_base_dir", "."))
        return load_world(base / w)
    if "components" in w:
        return world_from_dict(w)
    return generate_world(WorldGenParams(**w))[0]


def run_trials(config: TrialConfig) -> tuple[BoundReport, list]:
    """Run a scenario ``config.trials`` times; returns the report and the transcripts."""
    sc = config.scenario
    world = scenario_world(sc, config.base_dir)
    stream = sc["stream"]
    learner_spec = sc.get("learner", {"name": "srdff", "m": world.m})
    if isinstance(learner_spec, str):
        learner_spec = {"name": learner_spec}
    base = sc.get("seed", config.seed) if config.seed is None else config.seed
    name = learner_spec["name"]
    transcripts = []
    if stream["type"] == "stochastic":
        return _run_stochastic_trials(config, world, stream, learner_spec, base)
    k = len(stream.get("exceptions", [])) + sum(
        1 for r in stream["rounds"] if isinstance(r, dict) and r.get("feedback"))
    m = int(learner_spec.get("m", world.m))
    if name == "pfrdff":
        rep = BoundReport(name, world.m, k, pfr_bound(world.m, k))
    elif name == "unique_label":
        rep = BoundReport(name, m, k, unique_label_bound(m, k), kind="expectation")
    else:
        rep = BoundReport(name, m, k, ub(m, k))
    for trial in range(config.trials):
        seed = trial_seed(base, trial)
        spec = ExceptionSpec("adversarial", stream.get("exceptions", []),
                             corruption=stream.get("corruption", "both"))
        events = adversarial_stream(world, stream["rounds"], spec, seed=seed)
        overrides = {"random_state": seed} if name == "unique_label" and "seed" not in learner_spec else {}
        learner = make_learner(learner_spec, **overrides)
        hooks = []
        if "rule_invariants" in config.checks and name == "srdff":
            hooks.append(RuleInvariantChecker(world, m))
        if "update_counter" in config.checks and name == "unique_label":
            hooks.append(UpdateCounterChecker(world, m))
        tr = run_session(learner, events, Teacher(world), chain(*hooks) if hooks else None)
        for h in hooks:
            rep.invariant_violations.extend(f"trial {trial} {v}" for v in h.violations)
        passed = True if rep.kind == "expectation" else tr.mistakes <= rep.bound
        rep.add(TrialResult(trial, seed, tr.mistakes, rep.bound, passed))
        transcripts.append(tr)
    return rep, transcripts


def _run_stochastic_trials(config, world, stream, learner_spec, base):
    from .stochastic import StochasticRunParams, three_stage_run

    eps = stream.get("epsilon", 0.0)
    weights = tuple(Fraction(str(w)) for w in stream["weights"])
    src = StochasticSource(weights, ExceptionSpec("stochastic", epsilon=Fraction(str(eps)),
                                                  corruption=stream.get("corruption", "both")))
    sc = config.scenario
    transcripts = []
    if sc.get("pipeline") == "three_stage":
        b = sc.get("b", "auto")
        params = StochasticRunParams(alpha=sc["alpha"], delta=sc["delta"], n=stream["n"], m=world.m,
                                     beta=sc.get("beta"), b=None if b == "auto" else int(b),
                                     erm=sc.get("erm", "exhaustive"), budget=sc.get("budget", 10 ** 7))
        rep = BoundReport("three_stage", world.m, eps, float(eps) + 2 * sc["alpha"], kind="rate",
                          required_fraction=1 - 3 * sc["delta"])
        for trial in range(config.trials):
            seed = trial_seed(stream.get("seed", base), trial)
            events = stochastic_stream(world, src, stream["n"], seed)
            res = three_stage_run(events, Teacher(world), params)
            rep.add(TrialResult(trial, seed, res.mistakes, rep.bound, res.rate <= rep.bound,
                                {"summary": res.summary()}))
            transcripts.append(res.transcript)
        return rep, transcripts
    name = learner_spec["name"]
    rep = BoundReport(name, world.m, eps, float("nan"), kind="rate")
    for trial in range(config.trials):
        seed = trial_seed(stream.get("seed", base), trial)
        events = stochastic_stream(world, src, stream["n"], seed)
        tr = run_session(make_learner(learner_spec), events, Teacher(world))
        rep.add(TrialResult(trial, seed, tr.mistakes, rep.bound, True))
        transcripts.append(tr)
    return rep, transcripts
