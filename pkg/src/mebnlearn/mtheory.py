"""MEBN object model: MFrags, nodes, class local distributions and their ground forms.

All model values are frozen dataclasses, so structural equality is plain
``==``.  Categorical states are strings; boolean nodes use the states
``"True"`` and ``"False"``.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Mapping, Sequence, Union

import networkx as nx

from .errors import (
    InvalidDistribution,
    ModelError,
    NegativeProbability,
    NoApplicableBranch,
    UnknownFunction,
    UnknownParentRef,
    Unnormalizable,
    UnsupportedCLDCategory,
    WrongVariant,
)

ORDERING_NAME = "Predecessor"
BOOLEAN_STATES = ("True", "False")
AGGREGATIONS = ("average", "sum", "multiply")
PROB_TOL = 1e-9


# ---------------------------------------------------------------- entities and variables

@dataclass(frozen=True)
class EntityType:
    name: str
    ordered: bool = False


@dataclass(frozen=True)
class OrdinaryVariable:
    name: str
    entity_type: str


# ---------------------------------------------------------------- context nodes

@dataclass(frozen=True)
class IsA:
    ov: str
    type_name: str


@dataclass(frozen=True)
class Equality:
    left: str
    right: str


@dataclass(frozen=True)
class RelationalConstraint:
    """``ov = function(args)``"""
    ov: str
    function: str
    args: tuple[str, ...]


@dataclass(frozen=True)
class PredicateContext:
    """``function(args)`` holds, for boolean residents used as join conditions."""
    function: str
    args: tuple[str, ...]


ContextNode = Union[IsA, Equality, RelationalConstraint, PredicateContext]


def context_ovs(node: ContextNode) -> tuple[str, ...]:
    if isinstance(node, IsA):
        return (node.ov,)
    if isinstance(node, Equality):
        return (node.left, node.right)
    if isinstance(node, RelationalConstraint):
        return (node.ov,) + node.args
    return node.args


def rename_context(node: ContextNode, mapping: Mapping[str, str]) -> ContextNode:
    f = lambda o: mapping.get(o, o)
    if isinstance(node, IsA):
        return IsA(f(node.ov), node.type_name)
    if isinstance(node, Equality):
        return Equality(f(node.left), f(node.right))
    if isinstance(node, RelationalConstraint):
        return RelationalConstraint(f(node.ov), node.function, tuple(map(f, node.args)))
    return PredicateContext(node.function, tuple(map(f, node.args)))


# ---------------------------------------------------------------- value spaces

@dataclass(frozen=True)
class ValueSpace:
    kind: str  # categorical | continuous | boolean | entity
    states: tuple[str, ...] = ()
    entity_type: str | None = None

    def __post_init__(self):
        if self.kind == "categorical":
            if not self.states or len(set(self.states)) != len(self.states):
                raise ModelError("categorical value space needs distinct, non-empty states")
        elif self.kind == "boolean":
            if self.states != BOOLEAN_STATES:
                object.__setattr__(self, "states", BOOLEAN_STATES)
        elif self.kind == "entity":
            if not self.entity_type:
                raise ModelError("entity value space needs an entity type")
        elif self.kind != "continuous":
            raise ModelError(f"unknown value space kind {self.kind!r}")

    @property
    def discrete(self) -> bool:
        return self.kind in ("categorical", "boolean")

    @classmethod
    def categorical(cls, states):
        return cls("categorical", tuple(states))

    @classmethod
    def boolean(cls):
        return cls("boolean", BOOLEAN_STATES)

    @classmethod
    def continuous(cls):
        return cls("continuous")

    @classmethod
    def entity(cls, type_name):
        return cls("entity", (), type_name)


# ---------------------------------------------------------------- expressions

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Theta:
    """A to-learn parameter slot, printed ``theta(i,j)``."""
    i: int
    j: int


@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Neg:
    operand: object


Expr = Union[Num, Theta, Ref, Call, BinOp, Neg]
Param = Union[float, Theta]
FUNCTIONS = ("CARDINALITY", "NormalDist") + AGGREGATIONS


def expr_walk(e):
    yield e
    if isinstance(e, Call):
        for a in e.args:
            yield from expr_walk(a)
    elif isinstance(e, BinOp):
        yield from expr_walk(e.left)
        yield from expr_walk(e.right)
    elif isinstance(e, Neg):
        yield from expr_walk(e.operand)


def uses_cardinality(e) -> bool:
    return any(isinstance(n, Call) and n.func == "CARDINALITY" for n in expr_walk(e))


# ---------------------------------------------------------------- CPC / CSD / CLD

def state_of(value) -> str:
    if isinstance(value, bool):
        return "True" if value else "False"
    return str(value)


@dataclass(frozen=True)
class CPC:
    """Class parent condition.

    ``conditions`` is an ordered tuple of (parent name, state).  The kind is
    implied by the printed form: one ordinary variable with one condition is
    a Some condition, anything longer is a Config condition, and no
    conditions at all is the default.
    """
    ovs: tuple[str, ...]
    conditions: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if self.conditions and not self.ovs:
            raise ModelError("a parent condition needs at least one ordinary variable")
        parents = [p for p, _ in self.conditions]
        if len(set(parents)) != len(parents):
            raise ModelError("a parent condition names the same parent twice")

    @property
    def kind(self) -> str:
        if not self.conditions:
            return "default"
        if len(self.ovs) == 1 and len(self.conditions) == 1:
            return "some"
        return "config"

    @property
    def parents(self) -> tuple[str, ...]:
        return tuple(p for p, _ in self.conditions)

    @property
    def label(self) -> str:
        if not self.conditions:
            return "default"
        return ",".join(f"{p}={s}" for p, s in self.conditions)


DEFAULT_CPC = CPC((), ())


@dataclass(frozen=True)
class Categorical:
    probs: tuple[tuple[str, Param], ...]

    def __post_init__(self):
        states = [s for s, _ in self.probs]
        if not states or len(set(states)) != len(states):
            raise InvalidDistribution("categorical distribution needs distinct, non-empty states")
        if self.is_learned:
            vals = [float(v) for _, v in self.probs]
            if any(v < -PROB_TOL or v > 1 + PROB_TOL or math.isnan(v) for v in vals):
                raise InvalidDistribution(f"probabilities out of [0, 1]: {vals}")
            if abs(sum(vals) - 1.0) > PROB_TOL:
                raise InvalidDistribution(f"probabilities sum to {sum(vals)!r}, not 1")

    @property
    def states(self) -> tuple[str, ...]:
        return tuple(s for s, _ in self.probs)

    @property
    def is_learned(self) -> bool:
        return not any(isinstance(v, Theta) for _, v in self.probs)

    def as_dict(self) -> dict[str, float]:
        return {s: float(v) for s, v in self.probs}


@dataclass(frozen=True)
class Coefficient:
    parent: str
    value: Param
    aggregation: str = "average"

    def __post_init__(self):
        if self.aggregation not in AGGREGATIONS:
            raise ModelError(f"unknown aggregation {self.aggregation!r}")


@dataclass(frozen=True)
class LinearGaussian:
    """``intercept + sum(b_i * agg(P_i)) + NormalDist(0, variance)``."""
    intercept: Param
    coefficients: tuple[Coefficient, ...] = ()
    variance: Param = 1.0

    def __post_init__(self):
        if not isinstance(self.variance, Theta) and not (self.variance >= 0):
            raise InvalidDistribution(f"negative variance {self.variance!r}")
        names = [c.parent for c in self.coefficients]
        if len(set(names)) != len(names):
            raise ModelError("a parent appears twice in a linear Gaussian")

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)

    @property
    def is_learned(self) -> bool:
        vals = [self.intercept, self.variance] + [c.value for c in self.coefficients]
        return not any(isinstance(v, Theta) for v in vals)


@dataclass(frozen=True)
class CategoricalFormula:
    assignments: tuple[tuple[str, Expr], ...]

    @property
    def states(self) -> tuple[str, ...]:
        return tuple(s for s, _ in self.assignments)

    @property
    def is_learned(self) -> bool:
        return not any(isinstance(n, Theta) for _, e in self.assignments for n in expr_walk(e))


@dataclass(frozen=True)
class ContinuousFormula:
    expr: Expr

    @property
    def is_learned(self) -> bool:
        return not any(isinstance(n, Theta) for n in expr_walk(self.expr))


CSD = Union[Categorical, LinearGaussian, CategoricalFormula, ContinuousFormula]


def csd_is_discrete(csd) -> bool:
    return isinstance(csd, (Categorical, CategoricalFormula))


@dataclass(frozen=True)
class CLD:
    pairs: tuple[tuple[CPC, CSD], ...]
    default: CSD | None = None

    def __post_init__(self):
        cpcs = [c for c, _ in self.pairs]
        if any(c.kind == "default" for c in cpcs):
            raise ModelError("the default condition cannot appear among the branches")
        if len(set(cpcs)) != len(cpcs):
            raise ModelError("branch conditions must be pairwise distinct")
        csds = [s for _, s in self.pairs] + ([self.default] if self.default is not None else [])
        if not csds:
            raise ModelError("a class local distribution needs at least one distribution")
        kinds = {csd_is_discrete(s) for s in csds}
        if len(kinds) > 1:
            raise ModelError("branches mix discrete and continuous distributions")

    @property
    def is_learned(self) -> bool:
        csds = [s for _, s in self.pairs] + ([self.default] if self.default is not None else [])
        return all(s.is_learned for s in csds)

    @property
    def discrete(self) -> bool:
        first = self.pairs[0][1] if self.pairs else self.default
        return csd_is_discrete(first)

    @property
    def parents(self) -> tuple[str, ...]:
        seen = []
        for c, s in self.pairs:
            for p in c.parents:
                if p not in seen:
                    seen.append(p)
        for s in [s for _, s in self.pairs] + [self.default]:
            if isinstance(s, LinearGaussian):
                for co in s.coefficients:
                    if co.parent not in seen:
                        seen.append(co.parent)
        return tuple(seen)

    def branches(self):
        """All (CPC, CSD) pairs, default last."""
        out = list(self.pairs)
        if self.default is not None:
            out.append((DEFAULT_CPC, self.default))
        return out


@dataclass(frozen=True)
class CLDRef:
    """``[L: Name]``: a named distribution type defined elsewhere."""
    name: str

    @property
    def is_learned(self) -> bool:
        return False


# ---------------------------------------------------------------- nodes, MFrags, MTheory

@dataclass(frozen=True)
class ParentRef:
    kind: str  # "input" or "resident"
    name: str
    args: tuple[str, ...]

    def __post_init__(self):
        if self.kind not in ("input", "resident"):
            raise ModelError(f"unknown parent kind {self.kind!r}")


@dataclass(frozen=True)
class Resident:
    name: str
    args: tuple[str, ...]
    value_space: ValueSpace | None = None
    parents: tuple[ParentRef, ...] = ()
    cld: CLD | CLDRef | None = None

    @property
    def arity(self) -> int:
        return len(self.args)

    def parent(self, name: str) -> ParentRef:
        for p in self.parents:
            if p.name == name:
                return p
        raise UnknownParentRef(f"{self.name} has no parent {name}")


@dataclass(frozen=True)
class MFrag:
    name: str
    contexts: tuple[ContextNode, ...] = ()
    residents: tuple[Resident, ...] = ()

    @property
    def ordinary_variables(self) -> tuple[OrdinaryVariable, ...]:
        seen = {}
        for c in self.contexts:
            if isinstance(c, IsA) and c.ov not in seen:
                seen[c.ov] = OrdinaryVariable(c.ov, c.type_name)
        return tuple(seen.values())

    @property
    def ov_types(self) -> dict[str, str]:
        return {o.name: o.entity_type for o in self.ordinary_variables}

    @property
    def input_nodes(self) -> tuple[ParentRef, ...]:
        out = []
        for r in self.residents:
            for p in r.parents:
                if p.kind == "input" and p not in out:
                    out.append(p)
        return tuple(out)

    @property
    def edges(self) -> tuple[tuple[ParentRef, str], ...]:
        return tuple((p, r.name) for r in self.residents for p in r.parents)

    def resident(self, name: str) -> Resident:
        for r in self.residents:
            if r.name == name:
                return r
        raise ModelError(f"MFrag {self.name} has no resident {name}")

    def has_resident(self, name: str) -> bool:
        return any(r.name == name for r in self.residents)

    def replace_resident(self, res: Resident) -> "MFrag":
        return replace(self, residents=tuple(res if r.name == res.name else r for r in self.residents))


def detect_ordering(mfrags: Sequence[MFrag]) -> str | None:
    """The ordering relation: a two-argument resident named Predecessor over one type."""
    for f in mfrags:
        types = f.ov_types
        for r in f.residents:
            if r.name == ORDERING_NAME and r.arity == 2 and r.value_space in (None, ValueSpace.boolean()):
                if types.get(r.args[0]) is not None and types.get(r.args[0]) == types.get(r.args[1]):
                    return r.name
    return None


@dataclass(frozen=True)
class MTheory:
    mfrags: tuple[MFrag, ...] = ()

    @property
    def ordering(self) -> str | None:
        return detect_ordering(self.mfrags)

    @property
    def ordered_type(self) -> str | None:
        name = self.ordering
        if name is None:
            return None
        f, r = self.home(name)
        return f.ov_types[r.args[0]]

    @property
    def entity_types(self) -> tuple[EntityType, ...]:
        ordered = self.ordered_type
        names = sorted({c.type_name for f in self.mfrags for c in f.contexts if isinstance(c, IsA)})
        return tuple(EntityType(n, n == ordered) for n in names)

    @property
    def residents(self) -> list[Resident]:
        return [r for f in self.mfrags for r in f.residents]

    def home(self, name: str) -> tuple[MFrag, Resident]:
        for f in self.mfrags:
            for r in f.residents:
                if r.name == name:
                    return f, r
        raise ModelError(f"no resident node named {name}")

    def resident(self, name: str) -> Resident:
        return self.home(name)[1]

    def mfrag(self, name: str) -> MFrag:
        for f in self.mfrags:
            if f.name == name:
                return f
        raise ModelError(f"no MFrag named {name}")

    def replace_mfrag(self, new: MFrag) -> "MTheory":
        return MTheory(tuple(new if f.name == new.name else f for f in self.mfrags))

    def replace_resident(self, res: Resident) -> "MTheory":
        f, _ = self.home(res.name)
        return self.replace_mfrag(f.replace_resident(res))


# ---------------------------------------------------------------- consistency checks

@dataclass(frozen=True)
class HomeViolation:
    node: str
    arity: int
    mfrags: tuple[str, ...]


def check_unique_home(m: MTheory) -> list[HomeViolation]:
    homes: dict[tuple[str, int], list[str]] = defaultdict(list)
    for f in m.mfrags:
        for r in f.residents:
            homes[(r.name, r.arity)].append(f.name)
    return [HomeViolation(n, a, tuple(fs)) for (n, a), fs in homes.items() if len(fs) > 1]


@dataclass(frozen=True)
class AcyclicityResult:
    cycle: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.cycle


def _ordering_pairs(f: MFrag, ordering: str | None) -> set[tuple[str, str]]:
    if ordering is None:
        return set()
    return {c.args for c in f.contexts
            if isinstance(c, PredicateContext) and c.function == ordering and len(c.args) == 2}


def is_temporal_edge(f: MFrag, parent: ParentRef, child: Resident, ordering: str | None) -> bool:
    """True when the parent sits one step earlier along the ordering relation."""
    pairs = _ordering_pairs(f, ordering)
    if not pairs or len(parent.args) != len(child.args):
        return False
    return any((pa, ca) in pairs for pa, ca in zip(parent.args, child.args))


def class_dependency_graph(m: MTheory) -> nx.DiGraph:
    g = nx.DiGraph()
    ordering = m.ordering
    for f in m.mfrags:
        for r in f.residents:
            g.add_node(r.name)
            for p in r.parents:
                if is_temporal_edge(f, p, r, ordering):
                    continue
                g.add_edge(p.name, r.name)
    return g


def check_acyclic(m: MTheory) -> AcyclicityResult:
    g = class_dependency_graph(m)
    try:
        cyc = nx.find_cycle(g)
    except nx.NetworkXNoCycle:
        return AcyclicityResult()
    return AcyclicityResult(tuple(u for u, _ in cyc))


def validate_mtheory(m: MTheory) -> list[str]:
    """Return a list of human-readable problems (empty when consistent)."""
    problems = []
    names = [f.name for f in m.mfrags]
    if len(set(names)) != len(names):
        problems.append("duplicate MFrag names")
    for v in check_unique_home(m):
        problems.append(f"resident {v.node}/{v.arity} has several homes: {', '.join(v.mfrags)}")
    acyc = check_acyclic(m)
    if not acyc.ok:
        problems.append("class-level cycle through " + " -> ".join(acyc.cycle))
    homes = {}
    for f in m.mfrags:
        for r in f.residents:
            homes.setdefault(r.name, (f, r))
    for f in m.mfrags:
        types = f.ov_types
        for c in f.contexts:
            for o in context_ovs(c):
                if o not in types:
                    problems.append(f"{f.name}: context uses undeclared variable {o}")
            if isinstance(c, (RelationalConstraint, PredicateContext)):
                h = homes.get(c.function)
                if h is None:
                    problems.append(f"{f.name}: context function {c.function} is not a resident node")
                elif h[1].arity != len(c.args):
                    problems.append(f"{f.name}: context function {c.function} has the wrong arity")
        for r in f.residents:
            for p in r.parents:
                h = homes.get(p.name)
                if h is None:
                    problems.append(f"{f.name}.{r.name}: parent {p.name} has no home MFrag")
                    continue
                hf, hr = h
                if p.kind == "resident" and hf.name != f.name:
                    problems.append(f"{f.name}.{r.name}: resident parent {p.name} lives in {hf.name}")
                if hr.arity != len(p.args):
                    problems.append(f"{f.name}.{r.name}: parent {p.name} has the wrong arity")
                    continue
                htypes = hf.ov_types
                for a, ha in zip(p.args, hr.args):
                    if a in types and ha in htypes and types[a] != htypes[ha]:
                        problems.append(f"{f.name}.{r.name}: parent {p.name} argument {a} has the wrong type")
                if r.value_space is not None and hr.value_space is not None:
                    if r.value_space.discrete and hr.value_space.kind == "continuous":
                        problems.append(
                            f"{f.name}.{r.name}: discrete node with a continuous parent is not supported")
    return problems


def check_cld_category(m: MTheory) -> None:
    for r in m.residents:
        for p in r.parents:
            try:
                hr = m.resident(p.name)
            except ModelError:
                continue
            if (r.value_space and hr.value_space and r.value_space.discrete
                    and hr.value_space.kind == "continuous"):
                raise UnsupportedCLDCategory(
                    f"{r.name}: discrete child of continuous parent {p.name} is not supported")


# ---------------------------------------------------------------- evaluation

Assignment = Mapping[str, Sequence]


def _instances(assignment: Assignment, parent: str) -> Sequence:
    try:
        return assignment[parent]
    except KeyError:
        raise UnknownParentRef(f"assignment has no entry for parent {parent}") from None


def evaluate_cpc(cpc: CPC, assignment: Assignment, cld: CLD | None = None) -> bool:
    """Evaluate a parent condition against bags of parent values.

    ``assignment`` maps a parent name to the list of values of its ground
    instances.  The default condition needs the owning CLD.
    """
    kind = cpc.kind
    if kind == "default":
        if cld is None:
            raise ModelError("evaluating the default condition needs the owning CLD")
        return not any(evaluate_cpc(c, assignment) for c, _ in cld.pairs)
    if kind == "some":
        parent, state = cpc.conditions[0]
        return any(state_of(v) == state for v in _instances(assignment, parent))
    for parent, state in cpc.conditions:
        vals = _instances(assignment, parent)
        if not vals or any(state_of(v) != state for v in vals):
            return False
    return True


def select_branch(cld: CLD, assignment: Assignment):
    """First-match branch selection; returns (CPC, CSD)."""
    for cpc, csd in cld.pairs:
        if evaluate_cpc(cpc, assignment):
            return cpc, csd
    if cld.default is None:
        raise NoApplicableBranch("no branch applies and the distribution has no default")
    return DEFAULT_CPC, cld.default


def cardinality(cpc: CPC, assignment: Assignment) -> int:
    if cpc.kind != "some":
        raise WrongVariant(f"CARDINALITY needs a single-parent condition, got {cpc.kind}")
    parent, state = cpc.conditions[0]
    return sum(1 for v in _instances(assignment, parent) if state_of(v) == state)


@dataclass(frozen=True)
class Gaussian:
    mean: float
    variance: float


def _aggregate(func: str, values: Sequence[float]) -> float:
    vals = [float(v) for v in values]
    if not vals:
        raise ModelError(f"{func} over an empty set of parent instances")
    if func == "average":
        return sum(vals) / len(vals)
    if func == "sum":
        return sum(vals)
    return math.prod(vals)


class _Evaluator:
    def __init__(self, assignment, cpc, states=None):
        self.assignment = assignment
        self.cpc = cpc
        self.states = states or {}
        self.busy = set()
        self.done = {}

    def value(self, e) -> float:
        if isinstance(e, Num):
            return float(e.value)
        if isinstance(e, Theta):
            raise ModelError(f"parameter theta({e.i},{e.j}) has not been learned")
        if isinstance(e, Neg):
            return -self.value(e.operand)
        if isinstance(e, BinOp):
            a, b = self.value(e.left), self.value(e.right)
            if e.op == "+":
                return a + b
            if e.op == "-":
                return a - b
            if e.op == "*":
                return a * b
            if b == 0:
                raise ModelError("division by zero in distribution formula")
            return a / b
        if isinstance(e, Ref):
            if e.name in self.states:
                return self.state_value(e.name)
            return _aggregate("average", _instances(self.assignment, e.name))
        if isinstance(e, Call):
            if e.func == "CARDINALITY":
                if self.cpc is None:
                    raise WrongVariant("CARDINALITY used outside a single-parent condition")
                return float(cardinality(self.cpc, self.assignment))
            if e.func in AGGREGATIONS:
                return _aggregate(e.func, _instances(self.assignment, e.args[0].name))
            if e.func == "NormalDist":
                raise InvalidDistribution("NormalDist may only appear as an additive noise term")
            raise UnknownFunction(f"unknown function {e.func}")
        raise ModelError(f"cannot evaluate {e!r}")

    def state_value(self, name) -> float:
        if name in self.done:
            return self.done[name]
        if name in self.busy:
            raise ModelError(f"circular complement through state {name}")
        self.busy.add(name)
        v = self.value(self.states[name])
        self.busy.discard(name)
        self.done[name] = v
        return v


def split_noise(e, sign: float = 1.0):
    """Split an additive expression into (deterministic terms, NormalDist terms) with signs."""
    if isinstance(e, BinOp) and e.op in "+-":
        d1, n1 = split_noise(e.left, sign)
        d2, n2 = split_noise(e.right, sign if e.op == "+" else -sign)
        return d1 + d2, n1 + n2
    if isinstance(e, Neg):
        return split_noise(e.operand, -sign)
    if isinstance(e, Call) and e.func == "NormalDist":
        return [], [(sign, e)]
    return [(sign, e)], []


def eval_formula_csd(csd, assignment: Assignment, cpc: CPC | None = None):
    """Evaluate a formula distribution for one parent assignment.

    Categorical formulas give a normalized ``{state: probability}`` dict;
    continuous ones give a :class:`Gaussian`.  ``NormalDist(a, b)`` reads b as
    a variance.
    """
    if isinstance(csd, CategoricalFormula):
        ev = _Evaluator(assignment, cpc, dict(csd.assignments))
        vals = {s: ev.state_value(s) for s in csd.states}
        for s, v in vals.items():
            if v < -PROB_TOL or math.isnan(v):
                raise NegativeProbability(f"state {s} evaluates to {v}")
        vals = {s: max(v, 0.0) for s, v in vals.items()}
        total = sum(vals.values())
        if not total > 0 or math.isinf(total):
            raise Unnormalizable(f"probabilities sum to {total}")
        return {s: v / total for s, v in vals.items()}
    if isinstance(csd, ContinuousFormula):
        ev = _Evaluator(assignment, cpc)
        det, noise = split_noise(csd.expr)
        if not noise:
            raise InvalidDistribution("continuous formula has no NormalDist term")
        mean = sum(s * ev.value(t) for s, t in det)
        var = 0.0
        for s, call in noise:
            mean += s * ev.value(call.args[0])
            var += ev.value(call.args[1])
        if var < 0:
            raise InvalidDistribution(f"negative variance {var}")
        return Gaussian(mean, var)
    raise WrongVariant(f"not a formula distribution: {type(csd).__name__}")


def eval_csd(csd, assignment: Assignment, cpc: CPC | None = None):
    """Distribution implied by any CSD variant for a concrete parent assignment."""
    if isinstance(csd, Categorical):
        if not csd.is_learned:
            raise ModelError("categorical distribution has unlearned parameters")
        return csd.as_dict()
    if isinstance(csd, LinearGaussian):
        if not csd.is_learned:
            raise ModelError("linear Gaussian has unlearned parameters")
        mean = float(csd.intercept)
        for c in csd.coefficients:
            mean += float(c.value) * _aggregate(c.aggregation, _instances(assignment, c.parent))
        return Gaussian(mean, float(csd.variance))
    return eval_formula_csd(csd, assignment, cpc)


# ---------------------------------------------------------------- instance local distributions

@dataclass(frozen=True)
class IPC:
    """Ground parent condition over node ids; kind mirrors the class condition."""
    kind: str
    conditions: tuple[tuple[tuple[str, ...], str], ...] = ()

    def holds(self, values: Mapping[str, object]) -> bool:
        if self.kind == "default":
            return True
        if self.kind == "some":
            ids, state = self.conditions[0]
            return any(state_of(values[i]) == state for i in ids)
        for ids, state in self.conditions:
            if not ids or any(state_of(values[i]) != state for i in ids):
                return False
        return True


@dataclass(frozen=True)
class ISD:
    csd: CSD
    cpc: CPC
    parents: tuple[tuple[str, tuple[str, ...]], ...] = ()

    def distribution(self, values: Mapping[str, object]):
        assignment = {name: [values[i] for i in ids] for name, ids in self.parents}
        return eval_csd(self.csd, assignment, self.cpc)


@dataclass(frozen=True)
class ILD:
    owner: str
    pairs: tuple[tuple[IPC, ISD], ...]

    @property
    def parent_ids(self) -> tuple[str, ...]:
        out = []
        for _, isd in self.pairs:
            for _, ids in isd.parents:
                for i in ids:
                    if i not in out:
                        out.append(i)
        return tuple(out)

    def select(self, values: Mapping[str, object]) -> ISD:
        for ipc, isd in self.pairs:
            if ipc.holds(values):
                return isd
        raise NoApplicableBranch(f"no instance branch of {self.owner} applies")

    def distribution(self, values: Mapping[str, object]):
        return self.select(values).distribution(values)


def derive_ild(owner: str, cld: CLD, parent_instances: Mapping[str, Sequence[str]]) -> ILD:
    """Ground a CLD for one resident instance.

    ``parent_instances`` maps each parent name to the ids of its ground
    instances that passed the MFrag's context constraints.
    """
    parents = tuple((name, tuple(ids)) for name, ids in parent_instances.items())
    if not any(ids for _, ids in parents):
        if cld.default is None:
            return ILD(owner, ())
        return ILD(owner, ((IPC("default"), ISD(cld.default, DEFAULT_CPC, parents)),))
    lookup = dict(parents)
    pairs = []
    for cpc, csd in cld.pairs:
        conds = tuple((lookup.get(p, ()), s) for p, s in cpc.conditions)
        pairs.append((IPC(cpc.kind, conds), ISD(csd, cpc, parents)))
    if cld.default is not None:
        pairs.append((IPC("default"), ISD(cld.default, DEFAULT_CPC, parents)))
    return ILD(owner, tuple(pairs))
