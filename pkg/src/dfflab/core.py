"""Features, literals, examples and component representations.

A world is a finite boolean feature universe plus a hidden component
representation: ``m`` labeled example pools and a table of discriminative
literals for every ordered pair of differently-labeled components.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from pathlib import Path
from typing import Any, Hashable, Iterable, NamedTuple, Sequence

Label = Hashable


class MalformedWorldError(ValueError):
    """The world violates a structural assumption (unknown feature, bad overlap, ...)."""


class CoverError(MalformedWorldError):
    """An example belongs to no component."""


class Literal(NamedTuple):
    feature: int
    polarity: bool

    def negate(self) -> "Literal":
        return Literal(self.feature, not self.polarity)

    def __str__(self) -> str:
        return f"{'' if self.polarity else '~'}f{self.feature}"


def negate(literal: Literal) -> Literal:
    return Literal(literal.feature, not literal.polarity)


Conjunction = frozenset  # frozenset[Literal]


@dataclass(frozen=True)
class Example:
    """A total assignment over the world's features.

    ``component`` is simulator metadata and is never shown to learners.
    """

    values: tuple[bool, ...]
    component: int | None = None

    def __len__(self) -> int:
        return len(self.values)


def _values(x: Any) -> Sequence[bool]:
    return x.values if hasattr(x, "values") else x


def satisfies(x, literal: Literal) -> bool:
    values = _values(x)
    if not 0 <= literal.feature < len(values):
        raise MalformedWorldError(
            f"feature {literal.feature} outside universe of size {len(values)}"
        )
    return values[literal.feature] == literal.polarity


def satisfies_conjunction(x, conj: Iterable[Literal]) -> bool:
    values = _values(x)
    n = len(values)
    for f, pol in conj:
        if not 0 <= f < n:
            raise MalformedWorldError(f"feature {f} outside universe of size {n}")
        if values[f] != pol:
            return False
    return True


def conjunction(*literals: tuple[int, bool]) -> frozenset:
    return frozenset(Literal(int(f), bool(p)) for f, p in literals)


@dataclass(frozen=True)
class Representation:
    """Hidden ground truth: labeled component pools and discriminative literals.

    ``phi_table[(i, j)]`` is satisfied by every example of component ``i``
    and by none of component ``j``; defined for all ordered pairs with
    different labels.
    """

    labels: tuple
    n_features: int
    pools: tuple[tuple[Example, ...], ...]
    phi_table: dict = field(default_factory=dict, hash=False, compare=True)

    @property
    def m(self) -> int:
        return len(self.labels)

    @cached_property
    def _membership(self) -> dict[tuple[bool, ...], tuple[int, ...]]:
        index: dict[tuple[bool, ...], list[int]] = {}
        for c, pool in enumerate(self.pools):
            for x in pool:
                comps = index.setdefault(x.values, [])
                if c not in comps:
                    comps.append(c)
        return {k: tuple(v) for k, v in index.items()}

    def components_of(self, x) -> tuple[int, ...]:
        return self._membership.get(tuple(_values(x)), ())

    def label_of(self, component: int):
        return self.labels[component]

    @cached_property
    def label_set(self) -> tuple:
        seen = []
        for lab in self.labels:
            if lab not in seen:
                seen.append(lab)
        return tuple(seen)

    @cached_property
    def pool_values(self) -> tuple[tuple[tuple[bool, ...], ...], ...]:
        return tuple(tuple(x.values for x in pool) for pool in self.pools)

    @cached_property
    def positive_polarity(self) -> dict[int, bool]:
        # the literal stored for the smallest (i, j) with i < j is the positive one
        out: dict[int, bool] = {}
        for (i, j) in sorted(self.phi_table):
            if i < j:
                lit = self.phi_table[(i, j)]
                out.setdefault(lit.feature, lit.polarity)
        return out

    def positive(self, literal: Literal) -> Literal:
        """Map a literal or its negation to the designated positive literal."""
        pol = self.positive_polarity.get(literal.feature, True)
        return Literal(literal.feature, pol)

    def pair_features(self) -> dict[tuple[int, int], Literal]:
        """Positive discriminative literal for each unordered differently-labeled pair."""
        return {
            (i, j): self.positive(self.phi_table[(i, j)])
            for i, j in combinations(range(self.m), 2)
            if (i, j) in self.phi_table
        }

    def all_examples(self) -> list[Example]:
        return [x for pool in self.pools for x in pool]


def concept_label(rep: Representation, x):
    comps = rep.components_of(x)
    if not comps:
        raise CoverError("example belongs to no component")
    labels = {rep.labels[c] for c in comps}
    if len(labels) > 1:
        raise MalformedWorldError(
            f"example lies in differently-labeled components {sorted(comps)}"
        )
    return rep.labels[comps[0]]


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def add(self, kind: str, detail: str) -> None:
        self.violations.append(Violation(kind, detail))


def validate_representation(rep: Representation, pool: Iterable = ()) -> ValidationReport:
    """Check every representation axiom and return all violations found.

    ``pool`` holds extra examples (e.g. from a stream) that must be covered.
    """
    report = ValidationReport()
    n = rep.n_features
    if len(rep.pools) != rep.m:
        report.add("shape", f"{len(rep.pools)} pools for {rep.m} labels")
    for c, comp_pool in enumerate(rep.pools):
        if not comp_pool:
            report.add("cover", f"component {c} has an empty pool")
        for x in comp_pool:
            if len(x.values) != n:
                report.add("shape", f"example in component {c} has {len(x.values)} values, expected {n}")
    for x in pool:
        if not rep.components_of(x):
            report.add("cover", f"example {list(map(int, _values(x)))} belongs to no component")

    for values, comps in rep._membership.items():
        labels = {rep.labels[c] for c in comps}
        if len(labels) > 1:
            report.add("overlap", f"example {list(map(int, values))} shared by differently-labeled components {list(comps)}")

    for (i, j), lit in rep.phi_table.items():
        if not (0 <= i < rep.m and 0 <= j < rep.m):
            report.add("phi_range", f"pair ({i}, {j}) references an unknown component")
            continue
        if not 0 <= lit.feature < n:
            report.add("phi_range", f"phi({i},{j}) uses unknown feature {lit.feature}")
            continue
        if rep.labels[i] == rep.labels[j]:
            report.add("phi_same_label", f"phi({i},{j}) defined for same-label components")
        if any(x.values[lit.feature] != lit.polarity for x in rep.pools[i]):
            report.add("discriminative", f"phi({i},{j})={lit} fails on G_{i}")
        if any(x.values[lit.feature] == lit.polarity for x in rep.pools[j]):
            report.add("discriminative", f"phi({i},{j})={lit} fails on G_{j}")
        back = rep.phi_table.get((j, i))
        if back is None or back != lit.negate():
            report.add("antisymmetry", f"phi({j},{i}) != negate(phi({i},{j}))")

    for i in range(rep.m):
        for j in range(rep.m):
            if i != j and rep.labels[i] != rep.labels[j] and (i, j) not in rep.phi_table:
                report.add("missing_phi", f"no discriminative feature for ({i}, {j})")
    return report


# -- world file format -------------------------------------------------------

def world_to_dict(rep: Representation) -> dict:
    return {
        "m": rep.m,
        "labels": list(rep.labels),
        "features": rep.n_features,
        "components": [[[int(v) for v in x.values] for x in pool] for pool in rep.pools],
        "phi_table": [
            {"i": i, "j": j, "feature": lit.feature, "polarity": lit.polarity}
            for (i, j), lit in sorted(rep.phi_table.items())
        ],
    }


def world_from_dict(doc: dict) -> Representation:
    try:
        m = int(doc["m"])
        labels = tuple(doc["labels"])
        n_features = int(doc["features"])
        pools = tuple(
            tuple(Example(tuple(bool(v) for v in row), c) for row in comp)
            for c, comp in enumerate(doc["components"])
        )
        phi = {
            (int(e["i"]), int(e["j"])): Literal(int(e["feature"]), bool(e["polarity"]))
            for e in doc["phi_table"]
        }
    except (KeyError, TypeError) as exc:
        raise MalformedWorldError(f"bad world document: {exc}") from exc
    if len(labels) != m or len(pools) != m:
        raise MalformedWorldError(f"m={m} but {len(labels)} labels and {len(pools)} components")
    return Representation(labels, n_features, pools, phi)


def save_world(rep: Representation, path) -> None:
    Path(path).write_text(json.dumps(world_to_dict(rep), indent=1) + "\n", encoding="utf-8")


def load_world(path) -> Representation:
    return world_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
