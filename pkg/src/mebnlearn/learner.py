"""Parameter learning: Dirichlet/MLE for discrete nodes, least squares for CLG nodes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from .datasets import (
    CSDDataset,
    build_default_dataset,
    count_table,
    discrete_parents,
    execute_join,
    generate_cpcs,
    partition_by_cpc,
)
from .errors import ConfigError, EmptyData, InsufficientRows, MebnError, ModelError, SingularDesign
from .mapper import CausalRule, ordering_relation, plan_join, prepare_database, value_relation
from .mtheory import (
    CLD,
    DEFAULT_CPC,
    Categorical,
    Coefficient,
    LinearGaussian,
    MTheory,
    Resident,
    _aggregate,
    check_cld_category,
    state_of,
)
from .relational import Database

ESTIMATORS = ("mle", "dirichlet")
RANK_TOL = 1e-12


# ---------------------------------------------------------------- categorical estimators

def mle_categorical(counts: Sequence[float]) -> tuple[float, ...]:
    total = float(sum(counts))
    if not total > 0:
        raise EmptyData("maximum likelihood needs at least one observation")
    return tuple(c / total for c in counts)


def dirichlet_predictive(counts: Sequence[float], alphas: Sequence[float]) -> tuple[float, ...]:
    """Posterior predictive (alpha_k + C_k) / sum_q (alpha_q + C_q)."""
    if len(counts) != len(alphas):
        raise ValueError("counts and pseudo-counts differ in length")
    if any(not a > 0 for a in alphas):
        raise ConfigError("Dirichlet pseudo-counts must be positive")
    post = [a + c for a, c in zip(alphas, counts)]
    total = math.fsum(post)
    return tuple(p / total for p in post)


@dataclass(frozen=True)
class DirichletPrior:
    """Pseudo-counts keyed by (condition label, state); unlisted cells use ``default``."""
    default: float = 1.0
    cells: tuple[tuple[tuple[str, str], float], ...] = ()

    def __post_init__(self):
        if not self.default > 0 or any(not a > 0 for _, a in self.cells):
            raise ConfigError("Dirichlet pseudo-counts must be positive")

    def alpha(self, label: str, state: str) -> float:
        for (lab, s), a in self.cells:
            if s == state and lab in (label, "*"):
                return a
        return self.default

    def row(self, label: str, states: Sequence[str]) -> tuple[float, ...]:
        return tuple(self.alpha(label, s) for s in states)


def parse_priors(text: str) -> dict[str, DirichletPrior]:
    """Read a priors file.

    Each line is ``Node condition State=alpha ...`` where ``condition`` is a
    branch label such as ``VehicleType=Tracked``, ``default``, or ``*`` for
    every branch.  ``Node * alpha=2`` sets the node's uniform pseudo-count.
    """
    acc: dict[str, tuple[float, list]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 3:
            raise ConfigError(f"priors line {lineno}: expected 'Node condition State=alpha ...'")
        node, label = parts[0], parts[1]
        default, cells = acc.get(node, (1.0, []))
        for tok in parts[2:]:
            if "=" not in tok:
                raise ConfigError(f"priors line {lineno}: expected State=alpha, got {tok!r}")
            s, v = tok.rsplit("=", 1)
            try:
                a = float(v)
            except ValueError:
                raise ConfigError(f"priors line {lineno}: {v!r} is not a number") from None
            if label == "*" and s == "alpha":
                default = a
            else:
                cells.append(((label, s), a))
        acc[node] = (default, cells)
    return {n: DirichletPrior(d, tuple(c)) for n, (d, c) in acc.items()}


def rule_prior(rule: CausalRule | None, priors: Mapping[str, DirichletPrior] | None, node: str) -> DirichletPrior:
    if priors and node in priors:
        return priors[node]
    if rule is not None and rule.prior:
        try:
            return DirichletPrior(float(rule.prior))
        except ValueError:
            raise ConfigError(f"rule prior {rule.prior!r} is not a number") from None
    return DirichletPrior()


# ---------------------------------------------------------------- least squares

@dataclass(frozen=True)
class OLSResult:
    intercept: float
    coefficients: tuple[float, ...]
    sd: float

    @property
    def variance(self) -> float:
        return self.sd ** 2


def design_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1) if x.size else np.zeros((0, 0))
    return np.hstack([np.ones((x.shape[0], 1)), x])


def ols_fit(x, y) -> OLSResult:
    """Least squares with intercept via pivoted QR.

    ``x`` is k-by-n (no column of ones), ``y`` has k entries.  The residual
    standard deviation uses the divisor k - n - 1.
    """
    y = np.asarray(y, dtype=float).ravel()
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(len(y), -1) if len(y) else x.reshape(0, 0)
    k = len(y)
    n = x.shape[1] if x.ndim == 2 else 0
    if x.shape[0] != k:
        raise ValueError("design and response differ in length")
    if k <= n + 1:
        raise InsufficientRows(f"{k} cases cannot fit {n} coefficients plus intercept and a spread")
    u = design_matrix(x)
    q, r, piv = scipy.linalg.qr(u, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag[0] == 0 or np.any(diag < RANK_TOL * diag[0]):
        raise SingularDesign("design matrix is rank deficient")
    bp = scipy.linalg.solve_triangular(r, q.T @ y)
    b = np.empty_like(bp)
    b[piv] = bp
    resid = y - u @ b
    sd = math.sqrt(float(resid @ resid) / (k - n - 1))
    return OLSResult(float(b[0]), tuple(float(v) for v in b[1:]), sd)


# ---------------------------------------------------------------- CLD assembly

def _categorical(states, probs) -> Categorical:
    return Categorical(tuple(zip(states, (float(p) for p in probs))))


def learn_categorical_cld(csd: CSDDataset, states: Sequence[str], prior: DirichletPrior | None = None,
                          estimator: str = "dirichlet", warnings: list | None = None) -> CLD:
    """One categorical distribution per group, plus the default distribution."""
    if estimator not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {estimator!r}")
    prior = prior or DirichletPrior()
    states = tuple(states)
    table = count_table(csd, states)

    def fit(cpc):
        counts = table.row(cpc)
        if estimator == "mle":
            return mle_categorical(counts)
        return dirichlet_predictive(counts, prior.row(cpc.label, states))

    pairs = tuple((cpc, _categorical(states, fit(cpc))) for cpc in csd.cpcs)
    if estimator == "mle" and not csd.default_cases:
        everything = [c for _, cases in csd.groups for c in cases]
        if warnings is not None:
            warnings.append("default dataset empty; default distribution is the overall MLE")
        counts = [sum(1 for c in everything if state_of(c.child_value) == st) for st in states]
        default = _categorical(states, mle_categorical(counts))
    else:
        default = _categorical(states, fit(DEFAULT_CPC))
    return CLD(pairs, default)


def _regressors(cases, continuous: Sequence[tuple[str, str]]) -> np.ndarray:
    rows = []
    for c in cases:
        a = c.assignment()
        rows.append([_aggregate(agg, a.get(name, [])) for name, agg in continuous])
    return np.asarray(rows, dtype=float).reshape(len(rows), len(continuous))


def _child_values(cases) -> np.ndarray:
    return np.asarray([float(c.child_value) for c in cases], dtype=float)


def intercept_only(values: Sequence[float]) -> LinearGaussian:
    fit = ols_fit(np.zeros((len(values), 0)), values)
    return LinearGaussian(fit.intercept, (), fit.variance)


def learn_clg_cld(csd: CSDDataset, continuous: Sequence[tuple[str, str]],
                  warnings: list | None = None) -> CLD:
    """Least-squares fit per group.

    ``continuous`` lists (parent name, aggregation) in coefficient order.
    Without discrete parents the single regression is the default
    distribution.
    """
    def fit(cases, label):
        try:
            r = ols_fit(_regressors(cases, continuous), _child_values(cases))
        except InsufficientRows as exc:
            raise InsufficientRows(f"group {label}: {exc}") from None
        except SingularDesign as exc:
            raise SingularDesign(f"group {label}: {exc}") from None
        coefs = tuple(Coefficient(name, v, agg) for (name, agg), v in zip(continuous, r.coefficients))
        return LinearGaussian(r.intercept, coefs, r.variance)

    if not csd.groups:
        if csd.default_cases and warnings is not None:
            warnings.append(f"{len(csd.default_cases)} cases without parent instances are not used")
        return CLD((), fit(csd.unconditioned, "all cases"))
    pairs = tuple((cpc, fit(cases, cpc.label)) for cpc, cases in csd.groups)
    if csd.default_cases:
        default = intercept_only(_child_values(csd.default_cases))
    else:
        if warnings is not None:
            warnings.append("default dataset empty; default distribution fitted to all cases")
        default = intercept_only(_child_values([c for _, cases in csd.groups for c in cases]))
    return CLD(pairs, default)


def learn_boolean_cld(csd: CSDDataset, prior: DirichletPrior | None = None,
                      estimator: str = "dirichlet", warnings: list | None = None) -> CLD:
    return learn_categorical_cld(csd, ("True", "False"), prior, estimator, warnings)


# ---------------------------------------------------------------- whole-model learning

@dataclass
class NodeReport:
    node: str
    family: str
    parameters: list = field(default_factory=list)  # (label, text)
    counts: list = field(default_factory=list)  # (label, n)
    default_size: int = 0
    warnings: list = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class LearnedReport:
    nodes: list = field(default_factory=list)

    def node(self, name: str) -> NodeReport:
        for n in self.nodes:
            if n.node == name:
                return n
        raise KeyError(name)

    @property
    def errors(self) -> list[NodeReport]:
        return [n for n in self.nodes if n.error]

    def text(self) -> str:
        lines = []
        w = max([len(n.node) for n in self.nodes] + [4])
        lines.append(f"{'node':<{w}}  {'family':<20}  {'condition':<28}  {'cases':>5}  parameters")
        for n in self.nodes:
            counts = dict(n.counts)
            first = True
            for label, params in n.parameters or [("-", "")]:
                head = f"{n.node:<{w}}  {n.family:<20}" if first else " " * (w + 22)
                k = counts.get(label, n.default_size if label == "default" else "")
                lines.append(f"{head}  {label:<28}  {k!s:>5}  {params}".rstrip())
                first = False
            for msg in n.warnings:
                lines.append(f"{'':<{w}}  warning: {msg}")
            if n.error:
                lines.append(f"{'':<{w}}  error: {n.error}")
        return "\n".join(lines) + "\n"


def _describe(csd) -> str:
    from .script import format_number
    if isinstance(csd, Categorical):
        return ", ".join(f"{s}={format_number(float(p))}" for s, p in csd.probs)
    if isinstance(csd, LinearGaussian):
        terms = [f"m={format_number(float(csd.intercept))}"]
        terms += [f"b[{c.parent}]={format_number(float(c.value))}" for c in csd.coefficients]
        terms.append(f"var={format_number(float(csd.variance))}")
        return " ".join(terms)
    return type(csd).__name__


def infer_family(res: Resident) -> str:
    vs = res.value_space
    if vs is None:
        raise ModelError(f"{res.name} has no value space")
    if vs.kind == "continuous":
        return "clg"
    if vs.kind == "boolean":
        return "boolean"
    if vs.kind == "categorical":
        return "categorical"
    raise ModelError(f"{res.name} is entity-valued")


def learn_node(m: MTheory, db: Database, rule: CausalRule, prior: DirichletPrior,
               estimator: str, report: NodeReport) -> CLD:
    """Learn one rule-defined node; ``db`` must be prepared."""
    plan = plan_join(rule, db)
    res = m.resident(plan.rule.child.attribute)
    natural = infer_family(res)
    family = rule.family or natural
    report.family = family
    if (family == "clg") != (natural == "clg"):
        raise ModelError(f"family {family} does not fit {res.name}, whose values are {res.value_space.kind}")
    if family == "clg":
        joined = execute_join(plan, db, "bag")
    else:
        joined = execute_join(plan, db, "row")
    cpcs = generate_cpcs(res, m, joined)
    default = build_default_dataset(db, plan, joined)
    csd = partition_by_cpc(joined, cpcs, default)
    report.default_size = len(default)
    if csd.groups:
        report.counts = [(c.label, len(cases)) for c, cases in csd.groups] + [("default", len(default))]
    else:
        report.counts = [("default", len(csd.unconditioned))]
    if family == "clg":
        disc = {p.name for p, _ in discrete_parents(res, m)}
        aggs = {p.attribute: plan.rule.aggregation_for(p) for p in plan.rule.parents}
        continuous = [(p.name, aggs.get(p.name, plan.rule.aggregation))
                      for p in res.parents if p.name not in disc]
        cld = learn_clg_cld(csd, continuous, report.warnings)
    else:
        states = res.value_space.states
        cld = learn_categorical_cld(csd, states, prior, estimator, report.warnings)
    report.parameters = [(c.label, _describe(s)) for c, s in cld.branches()]
    return cld


def learn_marginal(res: Resident, values: Sequence, prior: DirichletPrior, estimator: str,
                   report: NodeReport) -> CLD:
    family = infer_family(res)
    report.family = family + " marginal"
    report.default_size = len(values)
    report.counts = [("default", len(values))]
    if family == "clg":
        default = intercept_only([float(v) for v in values])
    else:
        states = res.value_space.states
        counts = [sum(1 for v in values if state_of(v) == s) for s in states]
        probs = mle_categorical(counts) if estimator == "mle" else dirichlet_predictive(
            counts, prior.row("default", states))
        default = _categorical(states, probs)
    cld = CLD((), default)
    report.parameters = [("default", _describe(default))]
    return cld


def learn_mtheory(m: MTheory, db: Database, rules: Sequence[CausalRule],
                  priors: Mapping[str, DirichletPrior] | None = None,
                  estimator: str = "dirichlet") -> tuple[MTheory, LearnedReport]:
    """Fill every learnable distribution of ``m``.

    ``m`` is the mapped MTheory with ``rules`` already applied and ``db`` the
    normalized database.  Failures are recorded per node and learning moves on.
    """
    if estimator not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {estimator!r}")
    check_cld_category(m)
    db = prepare_database(db, rules)
    order = ordering_relation(db)
    by_child = {}
    for r in rules:
        by_child.setdefault(r.child.attribute, r)
    report = LearnedReport()
    out = m
    for res in m.residents:
        rep = NodeReport(res.name, "")
        report.nodes.append(rep)
        try:
            if res.value_space is not None and res.value_space.kind == "entity":
                rep.family = "context"
                rep.warnings.append("entity-valued; used as a context constraint, not learned")
                continue
            rule = by_child.get(res.name)
            prior = rule_prior(rule, priors, res.name)
            if rule is not None:
                cld = learn_node(m, db, rule, prior, estimator, rep)
            else:
                if res.parents:
                    raise ModelError(f"{res.name} has parents but no rule to learn them from")
                rel = value_relation(db, res.name)
                if rel is None or rel == order:
                    rep.family = "context"
                    rep.warnings.append("relationship predicate; used as a context constraint, not learned")
                    continue
                cld = learn_marginal(res, db[rel].column(res.name), prior, estimator, rep)
            out = out.replace_resident(replace(res, cld=cld))
        except MebnError as exc:
            rep.error = f"{exc.code}: {exc}"
    return out, report

