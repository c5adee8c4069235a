"""Relational schema to MTheory compilation, join planning and rule-driven MFrag rewriting."""
from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .errors import (
    AmbiguousHint,
    CycleIntroduced,
    MappingError,
    ModelError,
    NoPath,
    RuleSyntaxError,
    TypeMismatch,
    UnknownParent,
)
from .mtheory import (
    AGGREGATIONS,
    ORDERING_NAME,
    Equality,
    IsA,
    MFrag,
    MTheory,
    ParentRef,
    PredicateContext,
    RelationalConstraint,
    Resident,
    ValueSpace,
    check_acyclic,
    check_unique_home,
    context_ovs,
    rename_context,
)
from .relational import (
    Database,
    RelationSchema,
    classify_relation,
    complete_boolean_relation,
    is_attribute_free_relationship,
)

FAMILIES = ("categorical", "clg", "boolean")


def entity_type_name(relation: str) -> str:
    return relation.upper()


# ---------------------------------------------------------------- rules

@dataclass(frozen=True)
class AttrRef:
    relation: str
    attribute: str

    def __str__(self):
        return f"{self.relation}.{self.attribute}"


@dataclass(frozen=True)
class ParentSpec:
    relation: str
    attribute: str
    prev: bool = False
    aggregation: str | None = None

    @property
    def label(self) -> str:
        s = f"{self.relation}.{self.attribute}" + ("@prev" if self.prev else "")
        return f"{self.aggregation}({s})" if self.aggregation else s


@dataclass(frozen=True)
class CausalRule:
    child: AttrRef
    parents: tuple[ParentSpec, ...]
    family: str | None = None
    via: tuple[str, ...] = ()
    prior: str | None = None
    aggregation: str = "average"

    def __post_init__(self):
        if not self.parents:
            raise RuleSyntaxError("a rule needs at least one parent")
        if self.family is not None and self.family not in FAMILIES:
            raise RuleSyntaxError(f"unknown family {self.family!r}")
        if self.aggregation not in AGGREGATIONS:
            raise RuleSyntaxError(f"unknown aggregation {self.aggregation!r}")
        names = [(p.attribute, p.prev) for p in self.parents]
        if len(set(names)) != len(names):
            raise RuleSyntaxError("a parent is listed twice")

    def aggregation_for(self, p: ParentSpec) -> str:
        return p.aggregation or self.aggregation

    def text(self) -> str:
        s = f"causal({', '.join(p.label for p in self.parents)} -> {self.child})"
        if self.family:
            s += f" family={self.family}"
        if self.via:
            s += " via=" + ",".join(self.via)
        if self.prior:
            s += f" prior={self.prior}"
        if self.aggregation != "average":
            s += f" agg={self.aggregation}"
        return s


_REF = r"([A-Za-z_]\w*)\.([A-Za-z_]\w*)(@prev)?"
_PARENT = re.compile(rf"^(?:(average|sum|multiply)\(\s*{_REF}\s*\)|{_REF})$")
_RULE = re.compile(r"^causal\s*\((.*)->\s*([A-Za-z_]\w*)\.([A-Za-z_]\w*)\s*\)(.*)$")


def parse_rule(line: str, lineno: int = 0) -> CausalRule:
    m = _RULE.match(line.strip())
    where = f"line {lineno}: " if lineno else ""
    if not m:
        raise RuleSyntaxError(f"{where}expected 'causal(Parent.Attr, ... -> Child.Attr) key=value ...'")
    parents = []
    for item in m.group(1).split(","):
        item = item.strip()
        pm = _PARENT.match(item)
        if not pm:
            raise RuleSyntaxError(f"{where}bad parent reference {item!r}")
        if pm.group(1):
            parents.append(ParentSpec(pm.group(2), pm.group(3), bool(pm.group(4)), pm.group(1)))
        else:
            parents.append(ParentSpec(pm.group(5), pm.group(6), bool(pm.group(7))))
    opts = {}
    for tok in m.group(4).split():
        if "=" not in tok:
            raise RuleSyntaxError(f"{where}expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        if k not in ("family", "via", "prior", "agg"):
            raise RuleSyntaxError(f"{where}unknown option {k!r}")
        opts[k] = v
    try:
        return CausalRule(
            AttrRef(m.group(2), m.group(3)), tuple(parents), opts.get("family"),
            tuple(x for x in opts.get("via", "").split(",") if x), opts.get("prior"),
            opts.get("agg", "average"))
    except RuleSyntaxError as exc:
        raise RuleSyntaxError(f"{where}{exc}") from None


def parse_rules(text: str) -> list[CausalRule]:
    rules = []
    for i, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if line:
            rules.append(parse_rule(line, i))
    return rules


def format_rules(rules: Iterable[CausalRule]) -> str:
    return "".join(r.text() + "\n" for r in rules)


# ---------------------------------------------------------------- database helpers

def ordering_relation(db: Database) -> str | None:
    """The attribute-free self-relationship named Predecessor, if present."""
    if ORDERING_NAME not in db:
        return None
    s = db[ORDERING_NAME].schema
    if not is_attribute_free_relationship(s) or len(s.primary_key) != 2:
        return None
    a, b = (s.attribute(k) for k in s.primary_key)
    return ORDERING_NAME if a.target == b.target else None


def _locate(db: Database, relation: str, attribute: str) -> str:
    """Relation actually holding `attribute`; follows folds made by normalization."""
    if relation in db:
        s = db[relation].schema
        if s.has_attribute(attribute) and attribute not in s.primary_key:
            return relation
        if attribute == relation and is_attribute_free_relationship(s):
            return relation
    hits = [r.name for r in db if r.schema.has_attribute(attribute)
            and attribute not in r.schema.primary_key]
    if len(hits) == 1:
        return hits[0]
    raise UnknownParent(f"{relation}.{attribute} does not name a non-key attribute of exactly one relation")


def value_relation(db: Database, name: str) -> str | None:
    """Relation whose column holds resident ``name``; None for bare relationship predicates."""
    if name in db and is_attribute_free_relationship(db[name].schema):
        return None
    try:
        return _locate(db, name, name)
    except UnknownParent:
        return None


def resolve_rule(rule: CausalRule, db: Database) -> CausalRule:
    """Rewrite relation names to where the attributes live after normalization."""
    try:
        child = AttrRef(_locate(db, rule.child.relation, rule.child.attribute), rule.child.attribute)
    except UnknownParent:
        raise MappingError(f"rule child {rule.child} is not an attribute of the database") from None
    parents = tuple(replace(p, relation=_locate(db, p.relation, p.attribute)) for p in rule.parents)
    return replace(rule, child=child, parents=parents)


def boolean_relations(db: Database, rules: Iterable[CausalRule]) -> list[str]:
    """Attribute-free relationship relations a rule refers to as a Boolean attribute."""
    order = ordering_relation(db)
    out = []
    for rule in rules:
        for ref in [rule.child, *rule.parents]:
            if ref.relation in db and ref.relation != order and ref.attribute == ref.relation:
                if is_attribute_free_relationship(db[ref.relation].schema) and ref.relation not in out:
                    out.append(ref.relation)
    return out


def prepare_database(db: Database, rules: Iterable[CausalRule]) -> Database:
    """Closed-world complete every attribute-free relationship a rule uses as an attribute."""
    rules = list(rules)
    for rel in boolean_relations(db, rules):
        db = db.with_relation(complete_boolean_relation(db, rel))
    return db


# ---------------------------------------------------------------- initial MTheory

def build_initial_mtheory(db: Database) -> MTheory:
    """One MFrag per relation that carries at least one random variable."""
    frags = []
    for inst in db:
        s = inst.schema
        kind = classify_relation(s)
        ovs = tuple(s.primary_key)
        contexts = tuple(IsA(k, _key_type(s, k)) for k in ovs)
        residents = []
        for a in s.nonkey_attributes:
            residents.append(Resident(a.name, ovs, _value_space(a)))
        if kind == "relationship" and not s.nonkey_attributes:
            residents.append(Resident(s.name, ovs, ValueSpace.boolean()))
        if residents:
            frags.append(MFrag(entity_type_name(s.name), contexts, tuple(residents)))
    m = MTheory(tuple(frags))
    dup = check_unique_home(m)
    if dup:
        v = dup[0]
        raise MappingError(f"resident {v.node} would live in several MFrags: {', '.join(v.mfrags)}")
    return m


def _key_type(s: RelationSchema, attr: str) -> str:
    t = s.entity_type_of(attr)
    if t is None:
        raise TypeMismatch(f"{s.name}.{attr} is not an entity key")
    return entity_type_name(t)


def _value_space(a) -> ValueSpace:
    if a.kind == "cat":
        return ValueSpace.categorical(a.states)
    if a.kind == "cont":
        return ValueSpace.continuous()
    if a.kind == "bool":
        return ValueSpace.boolean()
    return ValueSpace.entity(entity_type_name(a.target))


# ---------------------------------------------------------------- join planning

@dataclass(frozen=True)
class Column:
    alias: str
    attribute: str

    def __str__(self):
        return f"{self.alias}.{self.attribute}"


@dataclass(frozen=True)
class JoinStep:
    alias: str
    relation: str
    role: str  # child | parent | link | ordering
    conditions: tuple[tuple[Column, Column], ...] = ()  # (column of this step, earlier column)


@dataclass(frozen=True)
class JoinPlan:
    rule: CausalRule
    steps: tuple[JoinStep, ...]
    child: Column
    parents: tuple[tuple[ParentSpec, Column], ...]

    @property
    def is_identity(self) -> bool:
        return len(self.steps) == 1

    def step(self, alias: str) -> JoinStep:
        for s in self.steps:
            if s.alias == alias:
                return s
        raise KeyError(alias)

    def describe(self) -> str:
        lines = [f"FROM {self.steps[0].relation}"]
        for s in self.steps[1:]:
            on = " AND ".join(f"{b} = {a}" for a, b in s.conditions) or "TRUE"
            name = s.relation if s.alias == s.relation else f"{s.relation} AS {s.alias}"
            lines.append(f"JOIN {name} ON {on}")
        return "\n".join(lines)


def _typed_columns(s: RelationSchema, alias: str):
    out = []
    for a in s.attributes:
        t = s.entity_type_of(a.name)
        if t is not None:
            out.append((Column(alias, a.name), entity_type_name(t), a.name in s.primary_key))
    return out


def _types(s: RelationSchema) -> set[str]:
    return {t for _, t, _ in _typed_columns(s, "")}


def _shortest_path(db: Database, start: str, goal: str, banned: set[str]) -> list[str]:
    """Fewest relations, ties broken by the lexicographically smallest name sequence."""
    if start == goal:
        return [start]
    types = {r.name: _types(r.schema) for r in db}
    entity = {r.name for r in db if classify_relation(r.schema) == "entity"}
    names = sorted(n for n in types if n not in banned)
    prev = {start: None}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        if cur != start and cur in entity:
            continue
        for nxt in names:
            if nxt in prev or not (types[cur] & types[nxt]):
                continue
            prev[nxt] = cur
            if nxt == goal:
                path = [goal]
                while prev[path[-1]] is not None:
                    path.append(prev[path[-1]])
                return path[::-1]
            queue.append(nxt)
    raise NoPath(f"no join path from {start} to {goal}")


def _fresh_alias(relation: str, used: set[str]) -> str:
    if relation not in used:
        return relation
    k = 2
    while f"{relation}_{k}" in used:
        k += 1
    return f"{relation}_{k}"


def _conditions(db, alias, relation, earlier, forced=None, only_forced=False, skip=()):
    s = db[relation].schema
    conds, used = [], set()
    for col, typ, is_key in _typed_columns(s, alias):
        if forced and col.attribute in forced:
            conds.append((col, forced[col.attribute]))
            used.add(forced[col.attribute])
            continue
        if only_forced:
            continue
        cands = [c for c, t, k in earlier if t == typ and (is_key or k) and c not in used and c not in skip]
        if not cands:
            continue
        same = [c for c in cands if c.attribute == col.attribute]
        pick = same[0] if same else cands[0]
        used.add(pick)
        conds.append((col, pick))
    pos = {c: i for i, (c, _, _) in enumerate(earlier)}
    conds.sort(key=lambda pair: pos.get(pair[1], len(pos)))
    return tuple(conds)


def plan_join(rule: CausalRule, db: Database) -> JoinPlan:
    """Join plan linking the child's relation to every parent's relation.

    `db` should already be prepared (Boolean relations completed) when the
    rule refers to attribute-free relationships.
    """
    rule = resolve_rule(rule, db)
    order = ordering_relation(db)
    child_rel = rule.child.relation
    steps = [JoinStep(child_rel, child_rel, "child")]
    earlier = _typed_columns(db[child_rel].schema, child_rel)
    present = {child_rel: child_rel}
    aliases = {child_rel}
    child_col = Column(child_rel, rule.child.attribute)

    def add(relation, role, forced=None, only_forced=False, new_alias=False):
        nonlocal earlier
        alias = _fresh_alias(relation, aliases) if new_alias else relation
        conds = _conditions(db, alias, relation, earlier, forced, only_forced, skip={child_col})
        steps.append(JoinStep(alias, relation, role, conds))
        aliases.add(alias)
        if not new_alias:
            present[relation] = alias
        earlier = earlier + _typed_columns(db[relation].schema, alias)
        return alias

    plain = [p for p in rule.parents if not p.prev]
    parent_cols = {}
    if rule.via:
        for r in rule.via:
            if r not in db or r in present or r == order:
                raise AmbiguousHint(f"join hint {r!r} is unknown, repeated or the ordering relation")
            if not any(_types(db[r].schema) & _types(db[p].schema) for p in present):
                raise AmbiguousHint(f"join hint {r} shares no entity type with the relations before it")
            add(r, "link")
        for p in plain:
            if p.relation not in present:
                if not any(_types(db[p.relation].schema) & _types(db[q].schema) for q in present):
                    raise AmbiguousHint(f"join hint does not reach {p.relation}")
                add(p.relation, "parent")
    else:
        banned = {order} if order else set()
        for p in plain:
            if p.relation in present:
                continue
            path = _shortest_path(db, child_rel, p.relation, banned)
            for r in path[1:]:
                if r not in present:
                    add(r, "parent" if r == p.relation else "link")
    for p in plain:
        parent_cols[p] = Column(present[p.relation], p.attribute)
    steps = [replace(s, role="parent") if s.role == "link" and any(
        p.relation == s.relation for p in plain) else s for s in steps]

    prevs = [p for p in rule.parents if p.prev]
    if prevs:
        if order is None:
            raise MappingError("an @prev parent needs an ordering relation (Predecessor) in the database")
        os_ = db[order].schema
        prev_key, cur_key = os_.primary_key
        ordered = entity_type_name(os_.attribute(prev_key).target)
        child_time = _time_key(db[child_rel].schema, ordered)
        if child_time is None:
            raise MappingError(f"{child_rel} has no key of the ordered type {ordered}")
        ord_alias = present.get(order) or add(
            order, "ordering", forced={cur_key: Column(child_rel, child_time)}, only_forced=True)
        for p in prevs:
            ptime = _time_key(db[p.relation].schema, ordered)
            if ptime is None:
                raise MappingError(f"{p.relation} has no key of the ordered type {ordered}")
            alias = add(p.relation, "parent", forced={ptime: Column(ord_alias, prev_key)}, new_alias=True)
            parent_cols[p] = Column(alias, p.attribute)
    return JoinPlan(rule, tuple(steps), child_col, tuple((p, parent_cols[p]) for p in rule.parents))


def _time_key(s: RelationSchema, ordered: str) -> str | None:
    for k in s.primary_key:
        t = s.entity_type_of(k)
        if t is not None and entity_type_name(t) == ordered:
            return k
    return None


# ---------------------------------------------------------------- rewriting

@dataclass(frozen=True)
class RewriteStages:
    """The child's MFrag after each rewriting step."""
    with_inputs: MFrag
    with_contexts: MFrag
    refined: MFrag


def _fresh_ov(base: str, used: set[str]) -> str:
    if base not in used:
        return base
    k = 1
    while f"{base}{k}" in used:
        k += 1
    return f"{base}{k}"


def rewrite_stages(m: MTheory, rule: CausalRule, plan: JoinPlan, db: Database) -> RewriteStages:
    rule = plan.rule
    try:
        frag, child = m.home(rule.child.attribute)
    except ModelError:
        raise MappingError(f"the MTheory has no resident node {rule.child.attribute}") from None
    if child.parents:
        raise MappingError(f"{child.name} already has parents; combine its rules into one")
    used = {o.name for o in frag.ordinary_variables}
    for c in frag.contexts:
        used.update(context_ovs(c))
    child_schema = db[plan.steps[0].relation].schema
    if len(child_schema.primary_key) != child.arity:
        raise TypeMismatch(f"{child.name}: relation key and resident arity differ")
    step_ovs = {plan.steps[0].alias: dict(zip(child_schema.primary_key, child.args))}
    rank = {plan.steps[0].alias: 0}
    order = [s for s in plan.steps[1:] if s.role == "parent"] + [s for s in plan.steps[1:] if s.role != "parent"]
    isa = {}
    for s in order:
        schema = db[s.relation].schema
        names = {}
        for k in schema.primary_key:
            names[k] = _fresh_ov(k, used)
            used.add(names[k])
        step_ovs[s.alias] = names
        rank[s.alias] = 1 if s.role == "parent" else 2
        isa[s.alias] = tuple(IsA(names[k], _key_type(schema, k)) for k in schema.primary_key)

    parents = []
    for p, col in plan.parents:
        try:
            home, pres = m.home(p.attribute)
        except ModelError:
            raise UnknownParent(f"parent {p.attribute} has no home MFrag") from None
        if pres.value_space is not None and pres.value_space.kind == "entity":
            raise TypeMismatch(f"parent {p.attribute} is entity-valued and cannot carry a distribution")
        pschema = db[plan.step(col.alias).relation].schema
        args = tuple(step_ovs[col.alias][k] for k in pschema.primary_key)
        if len(args) != pres.arity:
            raise TypeMismatch(f"parent {p.attribute}: key and resident arity differ")
        if any(q.name == p.attribute for q in parents):
            raise MappingError(f"{p.attribute} appears twice among the parents of {child.name}")
        kind = "resident" if home.name == frag.name else "input"
        parents.append(ParentRef(kind, p.attribute, args))
    new_child = replace(child, parents=tuple(parents))
    parent_isa = tuple(c for s in order if s.role == "parent" for c in isa[s.alias])
    stage1 = replace(frag.replace_resident(new_child), contexts=frag.contexts + parent_isa)

    link_isa = tuple(c for s in order if s.role != "parent" for c in isa[s.alias])
    extra = []
    for s in plan.steps[1:]:
        for new, old in s.conditions:
            extra.append(_condition_context(new, old, plan, step_ovs, rank, db))
        schema = db[s.relation].schema
        if s.role != "parent" and is_attribute_free_relationship(schema) and not schema.nonkey_attributes:
            extra.append(PredicateContext(s.relation, tuple(step_ovs[s.alias][k] for k in schema.primary_key)))
    stage2 = replace(stage1, contexts=stage1.contexts + link_isa + tuple(extra))
    return RewriteStages(stage1, stage2, refine_context(stage2))


def _condition_context(new: Column, old: Column, plan, step_ovs, rank, db):
    def key_ov(col):
        return step_ovs[col.alias].get(col.attribute)

    a, b = key_ov(new), key_ov(old)
    if a is not None and b is not None:
        ra, rb = rank[new.alias], rank[old.alias]
        first, second = (b, a) if rb <= ra else (a, b)
        return Equality(first, second)
    key, other = (a, old) if a is not None else (b, new)
    if key is None:
        raise MappingError(f"join condition {new} = {old} relates two non-key attributes")
    schema = db[plan.step(other.alias).relation].schema
    args = tuple(step_ovs[other.alias][k] for k in schema.primary_key)
    return RelationalConstraint(key, other.attribute, args)


def refine_context(frag: MFrag) -> MFrag:
    """Unify ordinary variables joined by equality contexts and drop those contexts."""
    types = {}
    for c in frag.contexts:
        if isinstance(c, IsA):
            types.setdefault(c.ov, c.type_name)
    parent = {}

    def find(x):
        parent.setdefault(x, x)
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for c in frag.contexts:
        if isinstance(c, Equality):
            tl, tr = types.get(c.left), types.get(c.right)
            if tl is not None and tr is not None and tl != tr:
                raise TypeMismatch(f"{c.left} ({tl}) = {c.right} ({tr}) equates different entity types")
            ra, rb = find(c.left), find(c.right)
            if ra != rb:
                parent[ra] = rb
    if not parent:
        return frag
    preferred = {a for r in frag.residents for a in r.args}
    classes = {}
    for x in list(parent):
        classes.setdefault(find(x), []).append(x)
    mapping = {}
    for members in classes.values():
        pool = [x for x in members if x in preferred] or members
        survivor = min(pool, key=lambda x: (x.casefold(), x))
        for x in members:
            mapping[x] = survivor
    contexts = []
    for c in frag.contexts:
        if isinstance(c, Equality):
            continue
        c = rename_context(c, mapping)
        if c not in contexts:
            contexts.append(c)
    ren = lambda args: tuple(mapping.get(a, a) for a in args)
    residents = tuple(
        replace(r, args=ren(r.args), parents=tuple(replace(p, args=ren(p.args)) for p in r.parents))
        for r in frag.residents)
    return MFrag(frag.name, tuple(contexts), residents)


def apply_rule(m: MTheory, rule: CausalRule, plan: JoinPlan, db: Database) -> MTheory:
    """Add the rule's parents to the child's MFrag; rejects rules that close a cycle."""
    stages = rewrite_stages(m, rule, plan, db)
    out = m.replace_mfrag(stages.refined)
    acyc = check_acyclic(out)
    if not acyc.ok:
        raise CycleIntroduced(f"rule {rule.text()} closes the cycle {' -> '.join(acyc.cycle)}")
    return out


def apply_rules(m: MTheory, rules: Sequence[CausalRule], db: Database) -> tuple[MTheory, list[JoinPlan]]:
    """Plan and apply every rule in order; `db` is the normalized database."""
    prepared = prepare_database(db, rules)
    plans = []
    for rule in rules:
        plan = plan_join(rule, prepared)
        m = apply_rule(m, plan.rule, plan, prepared)
        plans.append(plan)
    return m, plans

