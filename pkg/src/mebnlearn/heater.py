"""Slab-heater simulator and the end-to-end learn, ground, predict and score experiment.

Each case heats a fixed number of slabs to a target temperature.  The
actual input temperature is hidden; sensors report it (and the output
temperature) with Gaussian noise.  Energy is proportional to the
temperature gap and cost is proportional to energy.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .learner import learn_mtheory, ols_fit
from .mapper import apply_rules, build_initial_mtheory, parse_rules
from .mtheory import MTheory
from .relational import Database, er_normalize, make_relation, write_database
from .scoring import PerformanceCriteria, crps_gaussian, crps_mixture, evaluate_criteria, mae
from .script import emit_mtheory, format_number
from .ssbn import EntityInstanceSet, evidence_from_database, ground, infer_clg, parse_node_id

HEATER_RULES = """\
causal(Energy.Energy -> SensedInputTemp.SensedInputTemp) family=clg
causal(Energy.Energy -> Cost.Cost) family=clg
causal(sum(Cost.Cost) -> TotalCost.TotalCost) family=clg
"""


@dataclass(frozen=True)
class HeaterConfig:
    n_train: int = 1000
    n_test: int = 100
    slabs_per_case: int = 3
    sensor_variance: float = 3.0
    target_temp: float = 1200.0
    slab_mass: float = 100.0
    energy_per_degree: float = 0.013
    cost_per_kwh: float = 0.20
    input_temp_mean: float = 1000.0
    input_temp_sd: float = 50.0
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "seed":
                continue
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{f.name} must be positive, got {v!r}")
        if self.slabs_per_case < 1 or int(self.slabs_per_case) != self.slabs_per_case:
            raise ConfigError("slabs_per_case must be a positive integer")

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "HeaterConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in values.items():
            if k not in kinds:
                raise ConfigError(f"unknown heater setting {k!r}")
            try:
                kw[k] = int(v) if kinds[k] in ("int", int) else float(v)
            except ValueError:
                raise ConfigError(f"{k}: {v!r} is not a number") from None
        return cls(**kw)


@dataclass(frozen=True)
class HeaterData:
    train: Database
    test: Database
    actual_totals: tuple[tuple[str, float], ...]  # test case id -> true total cost


def energy_for(cfg: HeaterConfig, t_in):
    return cfg.energy_per_degree * (cfg.target_temp - np.asarray(t_in, dtype=float))


def _case_tables(cfg: HeaterConfig, n: int, rng: np.random.Generator):
    k = cfg.slabs_per_case
    t_in = rng.normal(cfg.input_temp_mean, cfg.input_temp_sd, size=(n, k))
    noise_in = rng.normal(0.0, math.sqrt(cfg.sensor_variance), size=(n, k))
    noise_out = rng.normal(0.0, math.sqrt(cfg.sensor_variance), size=(n, k))
    energy = energy_for(cfg, t_in)
    cost = cfg.cost_per_kwh * energy
    return {
        "sensed_in": t_in + noise_in,
        "sensed_out": cfg.target_temp + noise_out,
        "energy": energy,
        "cost": cost,
        "total": cost.sum(axis=1),
    }


def _database(cfg: HeaterConfig, tab, n: int, with_targets: bool) -> Database:
    k = cfg.slabs_per_case
    cases = [f"c{i + 1}" for i in range(n)]
    slabs = [(f"s{i * k + j + 1}", cases[i], i, j) for i in range(n) for j in range(k)]
    rels = [
        make_relation("Case", [("CID", "key")], ["CID"], [(c,) for c in cases]),
        make_relation("Slab", [("SID", "key"), ("InCase", "fk:Case")], ["SID"],
                      [(s, c) for s, c, _, _ in slabs]),
        make_relation("SensedInputTemp", [("SID", "fk:Slab"), ("SensedInputTemp", "cont:degC")], ["SID"],
                      [(s, float(tab["sensed_in"][i, j])) for s, _, i, j in slabs]),
        make_relation("SensedOutputTemp", [("SID", "fk:Slab"), ("SensedOutputTemp", "cont:degC")], ["SID"],
                      [(s, float(tab["sensed_out"][i, j])) for s, _, i, j in slabs]),
    ]
    if with_targets:
        rels += [
            make_relation("Energy", [("SID", "fk:Slab"), ("Energy", "cont:kWh")], ["SID"],
                          [(s, float(tab["energy"][i, j])) for s, _, i, j in slabs]),
            make_relation("Cost", [("SID", "fk:Slab"), ("Cost", "cont:EUR")], ["SID"],
                          [(s, float(tab["cost"][i, j])) for s, _, i, j in slabs]),
            make_relation("TotalCost", [("CID", "fk:Case"), ("TotalCost", "cont:EUR")], ["CID"],
                          [(c, float(tab["total"][i])) for i, c in enumerate(cases)]),
        ]
    return Database(rels)


def generate_heater_db(cfg: HeaterConfig) -> HeaterData:
    """Training data with metered energy and costs; test data with sensor readings only."""
    rng = np.random.default_rng(cfg.seed)
    train_tab = _case_tables(cfg, cfg.n_train, rng)
    test_tab = _case_tables(cfg, cfg.n_test, rng)
    train = _database(cfg, train_tab, cfg.n_train, True)
    test = _database(cfg, test_tab, cfg.n_test, False)
    actual = tuple((f"c{i + 1}", float(v)) for i, v in enumerate(test_tab["total"]))
    return HeaterData(train, test, actual)


# ---------------------------------------------------------------- experiment

@dataclass
class CaseScore:
    case: str
    mean: float
    variance: float
    actual: float
    crps: float
    baseline_crps: float


@dataclass
class HeaterReport:
    config: HeaterConfig
    model: MTheory
    learned_text: str
    cases: list[CaseScore] = field(default_factory=list)
    baseline: tuple[float, float] = (0.0, 0.0)
    parameters: list[tuple[str, float, float]] = field(default_factory=list)  # (name, learned, generating)
    criteria: list[tuple] = field(default_factory=list)

    @property
    def average_crps(self) -> float:
        return float(np.mean([c.crps for c in self.cases]))

    @property
    def baseline_crps(self) -> float:
        return float(np.mean([c.baseline_crps for c in self.cases]))

    @property
    def mae(self) -> float:
        return mae([c.mean for c in self.cases], [c.actual for c in self.cases])

    def parameter(self, name: str) -> tuple[float, float]:
        for n, learned, true in self.parameters:
            if n == name:
                return learned, true
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        return all(ok for _, _, ok in self.criteria)

    def text(self) -> str:
        lines = [
            f"test cases          {len(self.cases)}",
            f"Average CRPS        {format_number(self.average_crps)}",
            f"baseline CRPS       {format_number(self.baseline_crps)}",
            f"MAE                 {format_number(self.mae)}",
            "",
            "parameter                        learned        generating     relative error",
        ]
        for name, learned, true in self.parameters:
            rel = abs(learned - true) / abs(true) if true else float("nan")
            lines.append(f"{name:<32} {format_number(learned):<14} {format_number(true):<14} {rel:.4f}")
        if self.criteria:
            lines.append("")
            for c, value, ok in self.criteria:
                lines.append(f"{c.text():<32} measured {format_number(value):<14} {'PASS' if ok else 'FAIL'}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["case", "predicted_mean", "predicted_variance", "actual", "crps"])
            for c in self.cases:
                w.writerow([c.case, format_number(c.mean), format_number(c.variance),
                            format_number(c.actual), format_number(c.crps)])
        return path


def _case_evidence(evidence: Mapping[str, object], arities, cid: str, slabs: Sequence[str]):
    members = {cid, *slabs}
    out = {}
    for k, v in evidence.items():
        _, args = parse_node_id(k, arities)
        if set(args) <= members:
            out[k] = v
    return out


def _parameters(cfg: HeaterConfig, model: MTheory) -> list[tuple[str, float, float]]:
    out = []
    cost = model.resident("Cost").cld.default
    out.append(("Cost slope per kWh", float(cost.coefficients[0].value), cfg.cost_per_kwh))
    sensed = model.resident("SensedInputTemp").cld.default
    out.append(("SensedInputTemp noise variance", float(sensed.variance), cfg.sensor_variance))
    out.append(("SensedInputTemp slope on Energy", float(sensed.coefficients[0].value),
                -1.0 / cfg.energy_per_degree))
    total = model.resident("TotalCost").cld.default
    out.append(("TotalCost slope on sum(Cost)", float(total.coefficients[0].value), 1.0))
    return out


def run_heater_experiment(cfg: HeaterConfig | None = None, rules: str | None = None,
                          criteria: Sequence[PerformanceCriteria] = (),
                          workdir: str | os.PathLike | None = None) -> HeaterReport:
    """Generate, learn on training cases, then predict and score each test case's total cost."""
    cfg = cfg or HeaterConfig()
    data = generate_heater_db(cfg)
    if workdir is not None:
        write_database(data.train, Path(workdir) / "train")
        write_database(data.test, Path(workdir) / "test")
    rule_list = parse_rules(rules or HEATER_RULES)
    train = er_normalize(data.train)
    m, _ = apply_rules(build_initial_mtheory(train), rule_list, train)
    model, learned = learn_mtheory(m, train, rule_list)
    if learned.errors:
        raise ConfigError("learning failed: " + "; ".join(n.error for n in learned.errors))

    totals = np.asarray(train["Case"].column("TotalCost"), dtype=float)
    base = ols_fit(np.zeros((len(totals), 0)), totals)
    report = HeaterReport(cfg, model, learned.text(), baseline=(base.intercept, base.variance))

    test = er_normalize(data.test)
    evidence = evidence_from_database(test, model)
    arities = {r.name: r.arity for r in model.residents}
    members: dict[str, list[str]] = {}
    for row in test["Slab"].as_dicts():
        members.setdefault(str(row["InCase"]), []).append(str(row["SID"]))
    for cid, actual in data.actual_totals:
        slabs = members.get(cid, [])
        ents = EntityInstanceSet.build({"CASE": [cid], "SLAB": slabs})
        query = f"TotalCost_{cid}"
        net = ground(model, ents, _case_evidence(evidence, arities, cid, slabs), [query])
        res = infer_clg(net, query)
        score = crps_mixture(res.components, actual)
        report.cases.append(CaseScore(cid, res.mean, res.variance, actual, score,
                                      crps_gaussian(base.intercept, base.variance, actual)))
    report.parameters = _parameters(cfg, model)
    values = {"avg_crps": report.average_crps, "mae": report.mae}
    report.criteria = evaluate_criteria(criteria, values) if criteria else []
    if workdir is not None:
        out = Path(workdir)
        (out / "learned.mebn").write_text(emit_mtheory(model), encoding="utf-8")
        (out / "learned_report.txt").write_text(learned.text(), encoding="utf-8")
        (out / "heater_report.txt").write_text(report.text(), encoding="utf-8")
        report.write_csv(out / "heater_cases.csv")
    return report


def config_dict(cfg: HeaterConfig) -> dict:
    return asdict(cfg)
