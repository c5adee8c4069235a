"""Joined training datasets, their split by parent condition, and default datasets."""
from __future__ import annotations

import csv
import itertools
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import UnmatchedCase, UnsupportedJoinKind
from .mapper import JoinPlan
from .mtheory import CPC, DEFAULT_CPC, MTheory, Resident, evaluate_cpc, state_of
from .relational import Database

GROUPINGS = ("row", "bag")


@dataclass(frozen=True, order=True)
class ParentInstance:
    parent: str
    key: tuple
    value: object


@dataclass(frozen=True)
class Case:
    case_id: int
    child_key: tuple
    child_value: object
    parents: tuple[ParentInstance, ...] = ()
    # one tuple of parent instances per underlying join match
    matches: tuple[tuple[ParentInstance, ...], ...] = ()

    def assignment(self) -> dict[str, list]:
        out: dict[str, list] = {}
        for p in self.parents:
            out.setdefault(p.parent, []).append(p.value)
        return out

    def values_of(self, parent: str) -> list:
        return [p.value for p in self.parents if p.parent == parent]


@dataclass(frozen=True)
class JoinedDataset:
    child: str
    key_names: tuple[str, ...]
    parent_names: tuple[str, ...]
    cases: tuple[Case, ...]
    grouping: str = "row"

    def __len__(self):
        return len(self.cases)

    def child_keys(self) -> set[tuple]:
        return {c.child_key for c in self.cases}

    def flattened(self) -> list[tuple]:
        """One (child key, child value, parent instances) row per join match."""
        rows = []
        for c in self.cases:
            for m in c.matches or ((),):
                rows.append((c.child_key, c.child_value, m))
        return rows


@dataclass(frozen=True)
class CSDDataset:
    groups: tuple[tuple[CPC, tuple[Case, ...]], ...]
    default_cases: tuple[Case, ...] = ()
    # joined cases of a child without discrete parents: there is nothing to split on
    unconditioned: tuple[Case, ...] = ()

    def group(self, cpc: CPC) -> tuple[Case, ...]:
        if cpc == DEFAULT_CPC:
            return self.default_cases
        for c, cases in self.groups:
            if c == cpc:
                return cases
        raise KeyError(cpc.label)

    @property
    def cpcs(self) -> tuple[CPC, ...]:
        return tuple(c for c, _ in self.groups)


@dataclass(frozen=True)
class CountTable:
    states: tuple[str, ...]
    rows: tuple[tuple[CPC, tuple[int, ...]], ...] = field(default=())

    def row(self, cpc: CPC) -> tuple[int, ...]:
        for c, counts in self.rows:
            if c == cpc:
                return counts
        raise KeyError(cpc.label)

    def count(self, state: str, cpc: CPC) -> int:
        return self.row(cpc)[self.states.index(state)]


def _sort_key(values: Iterable) -> tuple:
    return tuple(str(v) for v in values)


# ---------------------------------------------------------------- joins

def _matches(plan: JoinPlan, db: Database) -> list[dict[str, dict]]:
    """All full matches as {alias: row}; hash join per step."""
    first = plan.steps[0]
    partial = [{first.alias: row} for row in db[first.relation].as_dicts()]
    for step in plan.steps[1:]:
        if not step.conditions:
            raise UnsupportedJoinKind(f"step {step.alias} has no join condition (Cartesian product)")
        index: dict[tuple, list[dict]] = {}
        for row in db[step.relation].as_dicts():
            index.setdefault(tuple(row[new.attribute] for new, _ in step.conditions), []).append(row)
        nxt = []
        for p in partial:
            probe = tuple(p[old.alias][old.attribute] for _, old in step.conditions)
            for row in index.get(probe, ()):
                q = dict(p)
                q[step.alias] = row
                nxt.append(q)
        partial = nxt
    return partial


def execute_join(plan: JoinPlan, db: Database, grouping: str = "row") -> JoinedDataset:
    """Inner join along ``plan``.

    With ``grouping="row"`` every distinct (child row, parent instances)
    match is a case.  With ``grouping="bag"`` each child row is one case
    whose parent bag collects every matched parent instance.
    """
    if grouping not in GROUPINGS:
        raise UnsupportedJoinKind(f"unknown grouping {grouping!r}")
    child_step = plan.steps[0]
    child_schema = db[child_step.relation].schema
    pk = child_schema.primary_key
    parent_meta = []
    for spec, col in plan.parents:
        s = db[plan.step(col.alias).relation].schema
        parent_meta.append((spec.attribute, col, s.primary_key))

    found: dict[tuple, tuple[object, set]] = {}
    for m in _matches(plan, db):
        crow = m[child_step.alias]
        ckey = tuple(crow[k] for k in pk)
        insts = tuple(
            ParentInstance(name, tuple(m[col.alias][k] for k in ppk), m[col.alias][col.attribute])
            for name, col, ppk in parent_meta)
        found.setdefault(ckey, (crow[plan.child.attribute], set()))[1].add(insts)

    cases = []
    for ckey in sorted(found, key=_sort_key):
        value, matches = found[ckey]
        ordered = sorted(matches, key=lambda ms: [(p.parent, _sort_key(p.key)) for p in ms])
        if grouping == "row":
            for ms in ordered:
                cases.append((ckey, value, ms, (ms,)))
        else:
            bag = sorted({p for ms in ordered for p in ms}, key=lambda p: (p.parent, _sort_key(p.key)))
            cases.append((ckey, value, tuple(bag), tuple(ordered)))
    names = tuple(dict.fromkeys(name for name, _, _ in parent_meta))
    return JoinedDataset(
        plan.child.attribute, tuple(pk), names,
        tuple(Case(i, k, v, p, ms) for i, (k, v, p, ms) in enumerate(cases, 1)), grouping)


def build_default_dataset(db: Database, plan: JoinPlan, joined: JoinedDataset | None = None) -> tuple[Case, ...]:
    """Child rows that take part in no join match (the anti-join)."""
    if joined is None:
        joined = execute_join(plan, db)
    seen = joined.child_keys()
    child_rel = plan.steps[0].relation
    pk = db[child_rel].schema.primary_key
    rows = [(tuple(r[k] for k in pk), r[plan.child.attribute]) for r in db[child_rel].as_dicts()]
    rows = [r for r in rows if r[0] not in seen]
    rows.sort(key=lambda r: _sort_key(r[0]))
    return tuple(Case(i, k, v) for i, (k, v) in enumerate(rows, 1))


# ---------------------------------------------------------------- parent conditions

def discrete_parents(resident: Resident, m: MTheory):
    """(ParentRef, states) for each parent with a finite value space, in declared order."""
    out = []
    for p in resident.parents:
        vs = m.resident(p.name).value_space
        if vs is not None and vs.discrete:
            out.append((p, vs.states))
    return out


def generate_cpcs(resident: Resident, m: MTheory, joined: JoinedDataset | None = None) -> list[CPC]:
    """Parent conditions for learning.

    A single discrete parent gets one condition per declared state.  Several
    discrete parents get one joint condition per observed configuration,
    sorted lexicographically.
    """
    disc = discrete_parents(resident, m)
    if not disc:
        return []
    if len(disc) == 1:
        p, states = disc[0]
        return [CPC(p.args, ((p.name, s),)) for s in states]
    ovs = tuple(dict.fromkeys(a for p, _ in disc for a in p.args))
    configs = set()
    for case in (joined.cases if joined else ()):
        a = case.assignment()
        bags = [sorted({state_of(v) for v in a.get(p.name, ())}) for p, _ in disc]
        for combo in itertools.product(*bags):
            configs.add(combo)
    names = [p.name for p, _ in disc]
    return [CPC(ovs, tuple(zip(names, combo))) for combo in sorted(configs)]


def partition_by_cpc(joined: JoinedDataset, cpcs: Sequence[CPC],
                     default_cases: Sequence[Case] = ()) -> CSDDataset:
    """First-match assignment of every case to a parent condition."""
    if not cpcs:
        return CSDDataset((), tuple(default_cases), joined.cases)
    groups: dict[CPC, list[Case]] = {c: [] for c in cpcs}
    for case in joined.cases:
        a = case.assignment()
        for cpc in cpcs:
            if evaluate_cpc(cpc, {p: a.get(p, []) for p in cpc.parents}):
                groups[cpc].append(case)
                break
        else:
            raise UnmatchedCase(f"case {case.case_id} {case.child_key} matches no parent condition")
    return CSDDataset(tuple((c, tuple(groups[c])) for c in cpcs), tuple(default_cases))


def count_table(csd: CSDDataset, states: Sequence[str]) -> CountTable:
    """Child-state counts per group; each case counts once whatever its bag size."""
    states = tuple(states)

    def counts(cases):
        row = [0] * len(states)
        for c in cases:
            row[states.index(state_of(c.child_value))] += 1
        return tuple(row)

    rows = [(cpc, counts(cases)) for cpc, cases in csd.groups]
    rows.append((DEFAULT_CPC, counts(csd.default_cases)))
    return CountTable(states, tuple(rows))


# ---------------------------------------------------------------- export

def dump_joined(path: str | os.PathLike, joined: JoinedDataset, csd: CSDDataset | None = None) -> Path:
    """Write one CSV row per join match, plus the default cases.

    Columns: case id, condition label, child key parts, child value, then
    key parts and value of each parent instance.
    """
    label = {}
    if csd is not None:
        for cpc, cases in csd.groups:
            for c in cases:
                label[c.case_id] = cpc.label
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case", "condition", *joined.key_names, joined.child, "parents"])
        for c in joined.cases:
            for m in c.matches or ((),):
                flat = []
                for p in m:
                    flat.extend(str(k) for k in p.key)
                    flat.append(f"{p.parent}={state_of(p.value)}")
                w.writerow([c.case_id, label.get(c.case_id, ""), *map(str, c.child_key),
                            state_of(c.child_value), *flat])
        if csd is not None:
            for c in csd.default_cases:
                w.writerow([f"d{c.case_id}", "default", *map(str, c.child_key), state_of(c.child_value)])
    return path
