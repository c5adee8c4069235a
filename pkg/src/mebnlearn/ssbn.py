"""Grounding an MTheory into a situation-specific network, and exact inference on it."""
from __future__ import annotations

import csv
import itertools
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from .errors import (
    BadEvidence,
    ContinuousInDiscreteQuery,
    CycleAtGroundLevel,
    InferenceError,
    ModelError,
    NotCLG,
)
from .mapper import entity_type_name, ordering_relation, value_relation
from .mtheory import (
    CLD,
    CPC,
    Categorical,
    ContinuousFormula,
    Equality,
    ILD,
    IsA,
    LinearGaussian,
    MFrag,
    MTheory,
    PredicateContext,
    RelationalConstraint,
    ValueSpace,
    context_ovs,
    derive_ild,
    expr_walk,
    state_of,
)
from .relational import Database, classify_relation, is_attribute_free_relationship

MAX_CONFIGS = 1 << 16


# ---------------------------------------------------------------- entities and node ids

@dataclass(frozen=True)
class EntityInstanceSet:
    types: tuple[tuple[str, tuple[str, ...]], ...]
    ordered_type: str | None = None
    order: tuple[str, ...] = ()

    def __post_init__(self):
        for t, ids in self.types:
            if len(set(ids)) != len(ids):
                raise ModelError(f"duplicate instance identifiers for type {t}")
        if self.ordered_type is not None:
            if set(self.order) != set(self.of(self.ordered_type)):
                raise ModelError("the entity order must list every instance of the ordered type")

    @classmethod
    def build(cls, mapping: Mapping[str, Sequence[str]], ordered_type: str | None = None,
              order: Sequence[str] | None = None) -> "EntityInstanceSet":
        types = tuple((t, tuple(ids)) for t, ids in sorted(mapping.items()))
        if ordered_type is not None and order is None:
            order = dict(types)[ordered_type]
        return cls(types, ordered_type, tuple(order or ()))

    @classmethod
    def from_database(cls, db: Database) -> "EntityInstanceSet":
        mapping = {}
        for inst in db:
            if classify_relation(inst.schema) == "entity":
                mapping[entity_type_name(inst.name)] = sorted(str(v) for v in db.key_values(inst.name))
        order_rel = ordering_relation(db)
        if order_rel is None:
            return cls.build(mapping)
        s = db[order_rel].schema
        prev_key, cur_key = s.primary_key
        target = s.attribute(prev_key).target
        ordered = entity_type_name(target)
        g = nx.DiGraph()
        g.add_nodes_from(mapping.get(ordered, ()))
        for row in db[order_rel].as_dicts():
            g.add_edge(str(row[prev_key]), str(row[cur_key]))
        if not nx.is_directed_acyclic_graph(g):
            raise ModelError(f"relation {order_rel} is not a strict order")
        return cls.build(mapping, ordered, list(nx.lexicographical_topological_sort(g)))

    def of(self, type_name: str) -> tuple[str, ...]:
        for t, ids in self.types:
            if t == type_name:
                return ids
        return ()

    def precedes(self, a: str, b: str) -> bool:
        """``a`` immediately precedes ``b`` in the entity order."""
        try:
            return self.order.index(b) - self.order.index(a) == 1
        except ValueError:
            return False


def node_id(name: str, args: Iterable) -> str:
    return "_".join([name, *(str(a) for a in args)])


def parse_node_id(text: str, arities: Mapping[str, int]) -> tuple[str, tuple[str, ...]]:
    """Split ``Name_e1_e2``; the longest matching resident name wins."""
    for name in sorted(arities, key=len, reverse=True):
        if not text.startswith(name + "_") and not (arities[name] == 0 and text == name):
            continue
        rest = text[len(name) + 1:]
        k = arities[name]
        if k == 0:
            if text == name:
                return name, ()
            continue
        parts = rest.split("_")
        if len(parts) == k:
            return name, tuple(parts)
        if k == 1:
            return name, (rest,)
    raise BadEvidence(f"{text!r} does not name an instance of any resident node")


# ---------------------------------------------------------------- evidence

def evidence_from_database(db: Database, m: MTheory, scope: str = "all") -> dict[str, object]:
    """Ground values recorded in ``db``.

    ``scope="context"`` keeps only what context nodes read: entity-valued
    attributes and relationship predicates.
    """
    if scope not in ("all", "context"):
        raise ValueError(f"unknown evidence scope {scope!r}")
    out: dict[str, object] = {}
    order = ordering_relation(db)
    for res in m.residents:
        vs = res.value_space
        if res.name in db and res.name != order and is_attribute_free_relationship(db[res.name].schema):
            inst = db[res.name]
            for row in inst.rows:
                out[node_id(res.name, row)] = "True"
            continue
        rel = value_relation(db, res.name)
        if rel is None or rel == order:
            continue
        if scope == "context" and (vs is None or vs.kind != "entity"):
            continue
        inst = db[rel]
        for row in inst.as_dicts():
            key = [row[k] for k in inst.schema.primary_key]
            v = row[res.name]
            out[node_id(res.name, key)] = float(v) if vs is not None and vs.kind == "continuous" else state_of(v)
    return out


def load_evidence(path: str | os.PathLike) -> dict[str, str]:
    """CSV with columns node_id, value."""
    out = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    for i, row in enumerate(rows):
        if not row or (i == 0 and row[:2] == ["node_id", "value"]):
            continue
        if len(row) != 2:
            raise BadEvidence(f"{path}: line {i + 1} should have two columns")
        out[row[0].strip()] = row[1].strip()
    return out


def write_evidence(path: str | os.PathLike, evidence: Mapping[str, object]) -> None:
    from .script import format_number
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "value"])
        for k in sorted(evidence):
            v = evidence[k]
            w.writerow([k, format_number(v) if isinstance(v, float) else state_of(v)])


# ---------------------------------------------------------------- the ground network

@dataclass(frozen=True)
class GroundNode:
    id: str
    name: str
    args: tuple[str, ...]
    value_space: ValueSpace
    ild: ILD

    @property
    def discrete(self) -> bool:
        return self.value_space.discrete

    @property
    def parents(self) -> tuple[str, ...]:
        return self.ild.parent_ids


@dataclass
class SSBN:
    nodes: dict[str, GroundNode]
    evidence: dict[str, object] = field(default_factory=dict)
    reports: list[str] = field(default_factory=list)

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        for n in self.nodes.values():
            for p in n.parents:
                g.add_edge(p, n.id)
        return g

    @property
    def edges(self) -> list[tuple[str, str]]:
        return sorted(self.graph().edges)

    def topological_order(self) -> list[str]:
        return list(nx.lexicographical_topological_sort(self.graph()))

    def relevant(self, targets: Iterable[str]) -> list[str]:
        """Targets and their ancestors, in topological order."""
        g = self.graph()
        keep = set()
        for t in targets:
            keep.add(t)
            keep |= nx.ancestors(g, t)
        return [n for n in self.topological_order() if n in keep]


def _random_residents(m: MTheory) -> dict[str, tuple[MFrag, object]]:
    out = {}
    for f in m.mfrags:
        for r in f.residents:
            if isinstance(r.cld, CLD) and r.cld.is_learned and r.value_space is not None \
                    and r.value_space.kind != "entity":
                out[r.name] = (f, r)
    return out


def _context_holds(c, b, entities: EntityInstanceSet, evidence, ordering, unbound):
    if isinstance(c, Equality):
        return b[c.left] == b[c.right]
    if isinstance(c, RelationalConstraint):
        rid = node_id(c.function, (b[a] for a in c.args))
        if rid not in evidence:
            unbound.add(rid)
            return False
        return state_of(evidence[rid]) == b[c.ov]
    if isinstance(c, PredicateContext):
        args = [b[a] for a in c.args]
        if c.function == ordering and entities.ordered_type is not None:
            return entities.precedes(*args)
        return state_of(evidence.get(node_id(c.function, args), "False")) == "True"
    return True


def satisfying_bindings(frag: MFrag, entities: EntityInstanceSet, evidence: Mapping[str, object],
                        fixed: Mapping[str, str] | None = None, ordering: str | None = "Predecessor",
                        unbound: set | None = None) -> list[dict[str, str]]:
    """Type-correct bindings of the MFrag's ordinary variables that pass every context node.

    A relational constraint whose ground variable has no evidence fails
    and its id is added to ``unbound``.
    """
    fixed = dict(fixed or {})
    unbound = set() if unbound is None else unbound
    types = frag.ov_types
    for ov, val in fixed.items():
        if ov not in types:
            raise ModelError(f"{ov} is not an ordinary variable of {frag.name}")
        if val not in entities.of(types[ov]):
            raise BadEvidence(f"{val} is not an instance of {types[ov]}")
    free = [o for o in types if o not in fixed]
    # each context is checked as soon as all its ordinary variables are bound
    pending = [c for c in frag.contexts if not isinstance(c, IsA)]
    bound = set(fixed)
    initial = [c for c in pending if set(context_ovs(c)) <= bound]
    pending = [c for c in pending if c not in initial]
    ready = {}
    for o in free:
        bound.add(o)
        ready[o] = [c for c in pending if set(context_ovs(c)) <= bound]
        pending = [c for c in pending if c not in ready[o]]
    out = []
    b = dict(fixed)
    if not all(_context_holds(c, b, entities, evidence, ordering, unbound) for c in initial):
        return out

    def walk(i):
        if i == len(free):
            out.append(dict(b))
            return
        o = free[i]
        for e in entities.of(types[o]):
            b[o] = e
            if all(_context_holds(c, b, entities, evidence, ordering, unbound) for c in ready[o]):
                walk(i + 1)
        b.pop(o, None)

    walk(0)
    return out


def ground(m: MTheory, entities: EntityInstanceSet, evidence: Mapping[str, object] | None = None,
           queries: Iterable[str] | None = None) -> SSBN:
    """Build the network needed for ``queries`` and the evidence on random nodes.

    Without queries every instance of every learned resident is grounded.
    """
    evidence = dict(evidence or {})
    random = _random_residents(m)
    arities = {r.name: r.arity for r in m.residents}
    ordering = m.ordering
    reports: list[str] = []
    todo: list[tuple[str, tuple[str, ...]]] = []
    if queries is None:
        for name, (f, r) in random.items():
            types = f.ov_types
            for combo in itertools.product(*(entities.of(types[a]) for a in r.args)):
                todo.append((name, combo))
    else:
        for q in queries:
            name, args = parse_node_id(q, arities)
            if name not in random:
                raise BadEvidence(f"query {q}: {name} has no learned distribution")
            todo.append((name, args))
    for e in sorted(evidence):
        name, args = parse_node_id(e, arities)
        if name in random:
            todo.append((name, args))

    nodes: dict[str, GroundNode] = {}
    while todo:
        name, args = todo.pop()
        nid = node_id(name, args)
        if nid in nodes:
            continue
        f, r = random[name]
        unbound: set = set()
        bindings = satisfying_bindings(f, entities, evidence, dict(zip(r.args, args)), ordering, unbound)
        for u in sorted(unbound):
            reports.append(f"E_UNBOUND_CONTEXT: {nid}: no evidence for {u}; bindings using it dropped")
        parents = {}
        for p in r.parents:
            if p.name not in random:
                raise ModelError(f"parent {p.name} of {name} has no learned distribution")
            inst = list(dict.fromkeys(tuple(bd[a] for a in p.args) for bd in bindings))
            parents[p.name] = [node_id(p.name, a) for a in inst]
            todo.extend((p.name, a) for a in inst if node_id(p.name, a) not in nodes)
        nodes[nid] = GroundNode(nid, name, tuple(args), r.value_space, derive_ild(nid, r.cld, parents))

    ordered = {k: nodes[k] for k in sorted(nodes)}
    net = SSBN(ordered, {}, reports)
    if not nx.is_directed_acyclic_graph(net.graph()):
        raise CycleAtGroundLevel("the grounded network has a directed cycle")
    net.evidence = check_evidence(net, {k: v for k, v in evidence.items() if k in ordered})
    return net


def check_evidence(net: SSBN, evidence: Mapping[str, object]) -> dict[str, object]:
    out = {}
    for k, v in evidence.items():
        if k not in net.nodes:
            raise BadEvidence(f"evidence on {k}, which is not in the network")
        vs = net.nodes[k].value_space
        if vs.discrete:
            s = state_of(v)
            if s not in vs.states:
                raise BadEvidence(f"{k}: {s!r} is not one of {', '.join(vs.states)}")
            out[k] = s
        else:
            try:
                out[k] = float(v)
            except (TypeError, ValueError):
                raise BadEvidence(f"{k}: {v!r} is not a number") from None
            if not math.isfinite(out[k]):
                raise BadEvidence(f"{k}: evidence must be finite")
    return out


# ---------------------------------------------------------------- direct construction

def tabular_node(owner: str, states: Sequence[str], parents: Sequence[tuple[str, Sequence[str]]],
                 table: Mapping[tuple, Sequence[float]] | Sequence[float]) -> GroundNode:
    """A discrete ground node from a conditional probability table.

    ``parents`` lists (node id, states); ``table`` maps each parent
    configuration (a tuple of states) to a probability vector.
    """
    states = tuple(states)
    vs = ValueSpace.boolean() if states == ("True", "False") else ValueSpace.categorical(states)
    if not parents:
        cld = CLD((), Categorical(tuple(zip(states, map(float, table)))))
        return GroundNode(owner, owner, (), vs, derive_ild(owner, cld, {}))
    names = [p for p, _ in parents]
    pairs = []
    for combo in itertools.product(*(s for _, s in parents)):
        cpc = CPC(tuple(names), tuple(zip(names, combo)))
        pairs.append((cpc, Categorical(tuple(zip(states, map(float, table[combo]))))))
    cld = CLD(tuple(pairs))
    return GroundNode(owner, owner, (), vs, derive_ild(owner, cld, {p: [p] for p in names}))


def gaussian_node(owner: str, discrete: Sequence[tuple[str, Sequence[str]]], continuous: Sequence[str],
                  params: Mapping[tuple, tuple[float, Sequence[float], float]] | tuple) -> GroundNode:
    """A conditional linear Gaussian ground node.

    ``params`` maps each discrete-parent configuration to (intercept,
    coefficients in ``continuous`` order, variance); with no discrete
    parents it is that triple itself.
    """
    from .mtheory import Coefficient

    def lg(triple):
        m0, bs, var = triple
        return LinearGaussian(float(m0), tuple(Coefficient(c, float(b)) for c, b in zip(continuous, bs)),
                              float(var))

    inst = {p: [p] for p in continuous}
    if not discrete:
        cld = CLD((), lg(params))
    else:
        names = [p for p, _ in discrete]
        pairs = []
        for combo in itertools.product(*(s for _, s in discrete)):
            cpc = CPC(tuple(names), tuple(zip(names, combo)))
            pairs.append((cpc, lg(params[combo])))
        cld = CLD(tuple(pairs))
        inst.update({p: [p] for p in names})
    return GroundNode(owner, owner, (), ValueSpace.continuous(), derive_ild(owner, cld, inst))


def build_ssbn(nodes: Iterable[GroundNode], evidence: Mapping[str, object] | None = None) -> SSBN:
    nodes = {n.id: n for n in nodes}
    net = SSBN(nodes)
    for n in nodes.values():
        for p in n.parents:
            if p not in nodes:
                raise ModelError(f"{n.id} refers to unknown parent {p}")
    if not nx.is_directed_acyclic_graph(net.graph()):
        raise CycleAtGroundLevel("the network has a directed cycle")
    net.evidence = check_evidence(net, evidence or {})
    return net


# ---------------------------------------------------------------- results

@dataclass(frozen=True)
class QueryResult:
    node: str
    probabilities: tuple[tuple[str, float], ...] = ()
    weights: tuple[float, ...] = ()
    means: tuple[float, ...] = ()
    variances: tuple[float, ...] = ()

    @property
    def discrete(self) -> bool:
        return bool(self.probabilities)

    def prob(self, state: str) -> float:
        return dict(self.probabilities)[state]

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, self.means))

    @property
    def variance(self) -> float:
        w, mu, v = map(np.asarray, (self.weights, self.means, self.variances))
        return max(float(np.dot(w, v + mu ** 2) - self.mean ** 2), 0.0)

    @property
    def components(self) -> list[tuple[float, float, float]]:
        return list(zip(self.weights, self.means, self.variances))

    def text(self) -> str:
        from .script import format_number
        if self.discrete:
            return "\n".join(f"{self.node}\t{s}\t{format_number(p)}" for s, p in self.probabilities) + "\n"
        lines = [f"{self.node}\tmean\t{format_number(self.mean)}",
                 f"{self.node}\tvariance\t{format_number(self.variance)}"]
        for i, (w, mu, v) in enumerate(self.components, 1):
            lines.append(f"{self.node}\tcomponent {i}\t{format_number(w)}\t{format_number(mu)}\t{format_number(v)}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- discrete inference

@dataclass
class Factor:
    vars: tuple[str, ...]
    table: np.ndarray

    def multiply(self, other: "Factor") -> "Factor":
        vars_ = tuple(dict.fromkeys(self.vars + other.vars))
        return Factor(vars_, _expand(self, vars_) * _expand(other, vars_))

    def sum_out(self, var: str) -> "Factor":
        i = self.vars.index(var)
        return Factor(self.vars[:i] + self.vars[i + 1:], self.table.sum(axis=i))


def _expand(f: Factor, vars_: tuple[str, ...]) -> np.ndarray:
    order = [f.vars.index(v) for v in vars_ if v in f.vars]
    t = np.transpose(f.table, order)
    shape = []
    it = iter(t.shape)
    for v in vars_:
        shape.append(next(it) if v in f.vars else 1)
    return t.reshape(shape)


def _discrete_factor(net: SSBN, nid: str, evidence: Mapping[str, object]) -> Factor:
    node = net.nodes[nid]
    parents = [p for p in node.parents]
    for p in parents:
        if not net.nodes[p].discrete:
            raise ContinuousInDiscreteQuery(f"{nid} has continuous parent {p}")
    vars_ = tuple(parents) + (nid,)
    spaces = [net.nodes[v].value_space.states for v in vars_]
    table = np.zeros([len(s) for s in spaces])
    for idx in itertools.product(*(range(len(s)) for s in spaces[:-1])):
        values = {p: spaces[i][j] for i, (p, j) in enumerate(zip(parents, idx))}
        dist = node.ild.distribution(values)
        table[idx] = [dist[s] for s in spaces[-1]]
    for i, v in enumerate(vars_):
        if v in evidence:
            mask = np.array([s == evidence[v] for s in spaces[i]], dtype=float)
            shape = [1] * len(vars_)
            shape[i] = len(spaces[i])
            table = table * mask.reshape(shape)
    return Factor(vars_, table)


def min_degree_order(factors: Sequence[Factor], keep: str) -> list[str]:
    g = nx.Graph()
    for f in factors:
        g.add_nodes_from(f.vars)
        g.add_edges_from(itertools.combinations(f.vars, 2))
    order = []
    while len(g) > 1 or (len(g) == 1 and keep not in g):
        cand = [v for v in g if v != keep]
        if not cand:
            break
        v = min(cand, key=lambda x: (g.degree(x), x))
        nb = list(g.neighbors(v))
        g.add_edges_from(itertools.combinations(nb, 2))
        g.remove_node(v)
        order.append(v)
    return order


def infer_discrete(net: SSBN, query: str, evidence: Mapping[str, object] | None = None) -> QueryResult:
    """Exact posterior of a discrete node by variable elimination."""
    evidence = check_evidence(net, {**net.evidence, **(evidence or {})})
    if query not in net.nodes:
        raise InferenceError(f"{query} is not in the network")
    if not net.nodes[query].discrete:
        raise ContinuousInDiscreteQuery(f"{query} is continuous")
    relevant = net.relevant([query, *evidence])
    for n in relevant:
        if not net.nodes[n].discrete:
            raise ContinuousInDiscreteQuery(f"{n} is continuous; use the hybrid engine")
    factors = [_discrete_factor(net, n, evidence) for n in relevant]
    for v in min_degree_order(factors, query):
        touching = [f for f in factors if v in f.vars]
        rest = [f for f in factors if v not in f.vars]
        prod = touching[0]
        for f in touching[1:]:
            prod = prod.multiply(f)
        factors = rest + [prod.sum_out(v)]
    result = factors[0]
    for f in factors[1:]:
        result = result.multiply(f)
    t = result.table
    if result.vars != (query,):
        t = _expand(result, (query,)).reshape(-1) if query in result.vars else t
    total = float(t.sum())
    if not total > 0:
        raise BadEvidence("the evidence has probability zero")
    states = net.nodes[query].value_space.states
    return QueryResult(query, tuple((s, float(p) / total) for s, p in zip(states, t.reshape(-1))))


def enumerate_discrete(net: SSBN, query: str, evidence: Mapping[str, object] | None = None) -> QueryResult:
    """Brute-force joint enumeration; the oracle for small networks."""
    evidence = check_evidence(net, {**net.evidence, **(evidence or {})})
    order = net.topological_order()
    states = {n: net.nodes[n].value_space.states for n in order}
    acc = {s: 0.0 for s in states[query]}
    for combo in itertools.product(*(states[n] for n in order)):
        values = dict(zip(order, combo))
        if any(values[k] != v for k, v in evidence.items()):
            continue
        p = 1.0
        for n in order:
            p *= net.nodes[n].ild.distribution(values)[values[n]]
            if p == 0:
                break
        acc[values[query]] += p
    total = sum(acc.values())
    return QueryResult(query, tuple((s, acc[s] / total) for s in states[query]))


# ---------------------------------------------------------------- hybrid inference

def _linear_form(net: SSBN, nid: str, dvalues: Mapping[str, str]):
    """(intercept, {continuous parent: coefficient}, variance) under a discrete configuration."""
    node = net.nodes[nid]
    isd = node.ild.select(dvalues)
    csd = isd.csd
    if isinstance(csd, LinearGaussian):
        coefs: dict[str, float] = {}
        groups = dict(isd.parents)
        mean = float(csd.intercept)
        for c in csd.coefficients:
            ids = list(groups.get(c.parent, ()))
            if not ids:
                raise ModelError(f"{nid}: no instances of parent {c.parent}")
            if any(net.nodes[i].discrete for i in ids):
                raise NotCLG(f"{nid}: coefficient on discrete parent {c.parent}")
            if c.aggregation == "average":
                share = float(c.value) / len(ids)
            elif c.aggregation == "sum":
                share = float(c.value)
            else:
                if len(ids) > 1:
                    raise NotCLG(f"{nid}: product of several continuous parents is not linear")
                share = float(c.value)
            for i in ids:
                coefs[i] = coefs.get(i, 0.0) + share
        return mean, coefs, float(csd.variance)
    if isinstance(csd, ContinuousFormula):
        for e in expr_walk(csd.expr):
            name = getattr(e, "name", None)
            ids = dict(isd.parents).get(name, ()) if name else ()
            if any(not net.nodes[i].discrete for i in ids):
                raise NotCLG(f"{nid}: formula refers to continuous parent {name}")
        g = isd.distribution(dvalues)
        return g.mean, {}, g.variance
    raise NotCLG(f"{nid}: {type(csd).__name__} is not a Gaussian distribution")


def _joint_gaussian(net: SSBN, cont: Sequence[str], dvalues):
    n = len(cont)
    pos = {c: i for i, c in enumerate(cont)}
    mu0 = np.zeros(n)
    B = np.zeros((n, n))
    var = np.zeros(n)
    for c in cont:
        m0, coefs, v = _linear_form(net, c, dvalues)
        i = pos[c]
        mu0[i], var[i] = m0, v
        for p, b in coefs.items():
            B[i, pos[p]] += b
    A = np.linalg.inv(np.eye(n) - B)
    return A @ mu0, A @ np.diag(var) @ A.T


def _condition(mean, cov, idx_e, values):
    """Gaussian conditioning; returns (mean, cov, log-likelihood of the evidence)."""
    if not idx_e:
        return mean, cov, 0.0
    idx_r = [i for i in range(len(mean)) if i not in idx_e]
    see = cov[np.ix_(idx_e, idx_e)]
    e = np.asarray(values, dtype=float)
    loglik = float(multivariate_normal(mean[idx_e], see, allow_singular=True).logpdf(e))
    gain = cov[np.ix_(idx_r, idx_e)] @ np.linalg.pinv(see)
    m = mean[idx_r] + gain @ (e - mean[idx_e])
    c = cov[np.ix_(idx_r, idx_r)] - gain @ cov[np.ix_(idx_e, idx_r)]
    out_m = mean.copy()
    out_c = np.zeros_like(cov)
    out_m[idx_r] = m
    out_m[idx_e] = e
    out_c[np.ix_(idx_r, idx_r)] = c
    return out_m, out_c, loglik


def infer_clg(net: SSBN, query: str, evidence: Mapping[str, object] | None = None) -> QueryResult:
    """Posterior of any node in a conditional linear Gaussian network.

    Discrete configurations of the relevant subgraph are enumerated; for
    each one the continuous part is a joint Gaussian conditioned on the
    continuous evidence.
    """
    evidence = check_evidence(net, {**net.evidence, **(evidence or {})})
    if query not in net.nodes:
        raise InferenceError(f"{query} is not in the network")
    relevant = net.relevant([query, *evidence])
    disc = [n for n in relevant if net.nodes[n].discrete]
    cont = [n for n in relevant if not net.nodes[n].discrete]
    for n in disc:
        for p in net.nodes[n].parents:
            if not net.nodes[p].discrete:
                raise NotCLG(f"discrete node {n} has continuous parent {p}")
    free = [n for n in disc if n not in evidence]
    spaces = [net.nodes[n].value_space.states for n in free]
    if math.prod(len(s) for s in spaces) > MAX_CONFIGS:
        raise InferenceError("too many discrete configurations for exact hybrid inference")
    idx_e = [i for i, c in enumerate(cont) if c in evidence]
    e_vals = [evidence[cont[i]] for i in idx_e]
    logw, comps, labels = [], [], []
    for combo in itertools.product(*spaces):
        dvalues = {**{n: evidence[n] for n in disc if n in evidence}, **dict(zip(free, combo))}
        lp = 0.0
        for n in disc:
            p = net.nodes[n].ild.distribution(dvalues)[dvalues[n]]
            if p <= 0:
                lp = -math.inf
                break
            lp += math.log(p)
        if lp == -math.inf:
            continue
        if cont:
            mean, cov = _joint_gaussian(net, cont, dvalues)
            mean, cov, ll = _condition(mean, cov, idx_e, e_vals)
            lp += ll
        else:
            mean, cov = np.zeros(0), np.zeros((0, 0))
        if lp == -math.inf:
            continue
        logw.append(lp)
        comps.append((mean, cov))
        labels.append(dvalues)
    if not logw:
        raise BadEvidence("the evidence has probability zero")
    w = np.exp(np.asarray(logw) - logsumexp(logw))
    if net.nodes[query].discrete:
        states = net.nodes[query].value_space.states
        probs = {s: 0.0 for s in states}
        for wi, lab in zip(w, labels):
            probs[lab[query]] += float(wi)
        return QueryResult(query, tuple((s, probs[s]) for s in states))
    i = cont.index(query)
    means = tuple(float(m[i]) for m, _ in comps)
    variances = tuple(max(float(c[i, i]), 0.0) for _, c in comps)
    return QueryResult(query, (), tuple(float(x) for x in w), means, variances)


def infer(net: SSBN, query: str, evidence: Mapping[str, object] | None = None) -> QueryResult:
    """Variable elimination when everything relevant is discrete, the hybrid engine otherwise."""
    ev = {**net.evidence, **(evidence or {})}
    relevant = net.relevant([query, *[k for k in ev if k in net.nodes]])
    if all(net.nodes[n].discrete for n in relevant):
        return infer_discrete(net, query, evidence)
    return infer_clg(net, query, evidence)


# ---------------------------------------------------------------- sampling

def sample_ssbn(net: SSBN, n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Ancestral sampling; discrete nodes give arrays of state strings."""
    out: dict[str, np.ndarray] = {}
    for nid in net.topological_order():
        node = net.nodes[nid]
        dparents = [p for p in node.parents if net.nodes[p].discrete]
        keys = list(zip(*(out[p] for p in dparents))) if dparents else [()] * n
        col = np.empty(n, dtype=object if node.discrete else float)
        groups: dict[tuple, list[int]] = {}
        for i, k in enumerate(keys):
            groups.setdefault(k, []).append(i)
        for k, idx in groups.items():
            idx = np.asarray(idx)
            dvalues = dict(zip(dparents, k))
            if node.discrete:
                dist = node.ild.distribution(dvalues)
                states = node.value_space.states
                col[idx] = rng.choice(np.asarray(states, dtype=object), size=len(idx),
                                      p=np.asarray([dist[s] for s in states]))
            else:
                m0, coefs, var = _linear_form(net, nid, dvalues)
                mean = np.full(len(idx), m0)
                for p, b in coefs.items():
                    mean = mean + b * out[p][idx]
                col[idx] = mean + math.sqrt(var) * rng.standard_normal(len(idx))
        out[nid] = col
    return out

