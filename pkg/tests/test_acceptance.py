"""The twelve acceptance criteria, one test each, at their stated tolerances and time limits.

Every test records a PASS or FAIL line; the lines are printed together at
the end of the session (see conftest.py).
"""
import math
import time
from contextlib import contextmanager

import networkx as nx
import numpy as np
from hypothesis import given, settings

from mebnlearn.datasets import execute_join, generate_cpcs, partition_by_cpc
from mebnlearn.errors import ScriptError
from mebnlearn.heater import HeaterConfig, run_heater_experiment
from mebnlearn.learner import dirichlet_predictive, learn_mtheory, mle_categorical, ols_fit
from mebnlearn.mapper import apply_rules, build_initial_mtheory, parse_rules, plan_join, prepare_database, rewrite_stages
from mebnlearn.mtheory import (Equality, IsA, ParentRef, RelationalConstraint, check_acyclic, check_unique_home)
from mebnlearn.relational import complete_boolean_relation, er_normalize, load_database
from mebnlearn.scoring import crps_gaussian
from mebnlearn.script import emit_mtheory, parse_mtheory, strip_whitespace
from mebnlearn.ssbn import (EntityInstanceSet, build_ssbn, enumerate_discrete, gaussian_node, ground, infer_clg,
                            infer_discrete, sample_ssbn, tabular_node)

from goldens import (COMMUNICATE_COMPLETED, VEHICLE_TRACKING, JOINED_ROWS, MEET_COMPLETED, NORMALIZED_SMALL, SCRIPTS,
                     SITUATION_WITH_CONTEXTS, MEET_COMMUNICATE, THREAT_FULL, THREAT_SMALL, TRACKED_CASES, WHEELED_CASES,
                     rules_text)
from nets import BOOL, random_clg_net, random_discrete_net
from test_scoring import crps_by_integration
from test_script import fuzz_inputs, mtheories

RESULTS: list[str] = []


@contextmanager
def criterion(number, title, limit=None):
    start = time.perf_counter()
    ok = False
    try:
        yield
        elapsed = time.perf_counter() - start
        if limit is not None:
            assert elapsed < limit, f"took {elapsed:.2f}s, limit {limit}s"
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        RESULTS.append(f"criterion {number:>2}  {'PASS' if ok else 'FAIL'}  {title}  ({elapsed:.2f}s)")


def test_01_golden_normalization():
    with criterion(1, "normalization folds VehicleType into Vehicle", limit=1.0):
        db = er_normalize(load_database(THREAT_SMALL))
        got = {r.name: (r.schema.attribute_names, r.schema.primary_key, set(r.rows)) for r in db}
        assert got == NORMALIZED_SMALL


def test_02_golden_mapping():
    with criterion(2, "initial MTheory from the schema", limit=1.0):
        m = build_initial_mtheory(er_normalize(load_database(VEHICLE_TRACKING)))
        want = SCRIPTS.joinpath("threat_initial.mebn").read_text()
        assert len(m.mfrags) == 9
        assert strip_whitespace(emit_mtheory(m, value_spaces=False)) == strip_whitespace(want)


def test_03_golden_rule_rewrite():
    with criterion(3, "rule rewrite of the situation MFrag", limit=1.0):
        db = er_normalize(load_database(THREAT_FULL))
        rule = parse_rules(rules_text("threat_rules.txt"))[0]
        prepared = prepare_database(db, [rule])
        stages = rewrite_stages(build_initial_mtheory(prepared), rule, plan_join(rule, prepared), prepared)
        mid = parse_mtheory(SITUATION_WITH_CONTEXTS).mfrags[0]
        assert stages.with_contexts.contexts == mid.contexts
        assert [(r.name, r.args, r.parents) for r in stages.with_contexts.residents] == \
               [(r.name, r.args, r.parents) for r in mid.residents]
        refined = stages.refined
        assert set(refined.contexts) == {IsA("v", "VEHICLE"), IsA("t", "TIME"), IsA("rgn", "REGION"),
                                         RelationalConstraint("rgn", "Location", ("v", "t"))}
        assert not any(isinstance(c, Equality) for c in refined.contexts)
        assert refined.resident("ThreatLevel").parents == (ParentRef("input", "VehicleType", ("v",)),)


def test_04_golden_join():
    with criterion(4, "joined rows and CPC groups", limit=1.0):
        db = er_normalize(load_database(THREAT_FULL))
        rules = parse_rules(rules_text("threat_rules.txt"))
        m, [plan] = apply_rules(build_initial_mtheory(prepare_database(db, rules)), rules, db)
        joined = execute_join(plan, db, grouping="row")

        def printed(key, value, match):
            [p] = match
            return (p.value, p.key[0], key[1], key[0], value)

        rows = [printed(*r) for r in joined.flattened()]
        assert len(rows) == 18 and set(rows) == set(JOINED_ROWS.values())
        cpcs = generate_cpcs(m.resident("ThreatLevel"), m, joined)
        csd = partition_by_cpc(joined, cpcs, [])
        number = {row: n for n, row in JOINED_ROWS.items()}
        groups = [{number[printed(c.child_key, c.child_value, c.matches[0])] for c in csd.group(cpc)}
                  for cpc in cpcs]
        assert [c.label for c in cpcs] == ["VehicleType=Tracked", "VehicleType=Wheeled"]
        assert groups == [TRACKED_CASES, WHEELED_CASES]


def test_05_dirichlet_learning():
    with criterion(5, "Dirichlet and maximum-likelihood estimates"):
        high_tracked, _ = dirichlet_predictive([8, 4], [1, 1])
        high_wheeled, _ = dirichlet_predictive([4, 2], [1, 1])
        assert abs(high_tracked - 9 / 14) <= 1e-12
        assert abs(high_wheeled - 5 / 8) <= 1e-12
        assert mle_categorical([3, 1]) == (0.75, 0.25)
        assert abs(mle_categorical([2, 1])[0] - 2 / 3) <= 1e-12
        # the same numbers through the whole learning path
        db = er_normalize(load_database(THREAT_FULL))
        rules = parse_rules(rules_text("threat_rules.txt"))
        m, _ = apply_rules(build_initial_mtheory(prepare_database(db, rules)), rules, db)
        model, _ = learn_mtheory(m, db, rules)
        got = {c.label: d.as_dict()["High"] for c, d in model.resident("ThreatLevel").cld.pairs}
        assert abs(got["VehicleType=Tracked"] - 9 / 14) <= 1e-12
        assert abs(got["VehicleType=Wheeled"] - 5 / 8) <= 1e-12


def test_06_least_squares():
    with criterion(6, "least-squares fixtures and residual orthogonality"):
        line = ols_fit([[0], [1], [2]], [1, 3, 5])
        assert abs(line.intercept - 1) <= 1e-9 and abs(line.coefficients[0] - 2) <= 1e-9 and line.sd <= 1e-9
        three = ols_fit([[0], [1], [2]], [0, 1, 1])
        assert abs(three.intercept - 1 / 6) <= 1e-9
        assert abs(three.coefficients[0] - 1 / 2) <= 1e-9
        assert abs(three.sd - math.sqrt(1 / 6)) <= 1e-9
        rng = np.random.default_rng(20)
        for _ in range(100):
            k, n = int(rng.integers(6, 41)), int(rng.integers(1, 5))
            x, y = rng.normal(size=(k, n)), rng.normal(size=k)
            fit = ols_fit(x, y)
            u = np.hstack([np.ones((k, 1)), x])
            resid = y - u @ np.array((fit.intercept,) + fit.coefficients)
            assert np.max(np.abs(u.T @ resid)) < 1e-9 * np.abs(u).sum()


def test_07_boolean_closed_world():
    with criterion(7, "closed-world completion and Boolean learning"):
        raw = load_database(MEET_COMMUNICATE)
        for rel, expected in (("Communicate", COMMUNICATE_COMPLETED), ("Meet", MEET_COMPLETED)):
            done = complete_boolean_relation(raw, rel)
            assert len(done) == 6
            assert {(a, b): t for a, b, t in done.rows} == expected
        db = er_normalize(raw)
        rules = parse_rules(rules_text("meet_communicate_rules.txt"))
        m, _ = apply_rules(build_initial_mtheory(prepare_database(db, rules)), rules, db)
        model, _ = learn_mtheory(m, db, rules)
        got = {c.label: d.as_dict()["True"] for c, d in model.resident("Communicate").cld.pairs}
        assert abs(got["Meet=True"] - 0.6) <= 1e-12
        assert abs(got["Meet=False"] - 0.4) <= 1e-12


def test_08_script_round_trip():
    with criterion(8, "script round trip and parser fuzzing"):
        for name in ("threat_situation.mebn", "threat_initial.mebn"):
            m = parse_mtheory(SCRIPTS.joinpath(name).read_text())
            assert parse_mtheory(emit_mtheory(m)) == m
        seen = []

        @settings(max_examples=200, deadline=None, database=None)
        @given(m=mtheories())
        def round_trip(m):
            seen.append(1)
            assert parse_mtheory(emit_mtheory(m)) == m

        round_trip()
        assert len(seen) >= 200
        count = 0
        for text in fuzz_inputs(100_000, seed=20240501):
            count += 1
            try:
                parse_mtheory(text)
            except ScriptError:
                pass
        assert count == 100_000


def test_09_inference_oracles():
    with criterion(9, "exact inference against enumeration and sampling", limit=30.0):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(2, 13))
            net, ids = random_discrete_net(rng, n)
            query = ids[-1]
            evidence = {ids[0]: "True"} if n > 1 else {}
            got, want = infer_discrete(net, query, evidence), enumerate_discrete(net, query, evidence)
            assert sum(abs(got.prob(s) - want.prob(s)) for s in BOOL) / 2 <= 1e-9
        for seed in range(10):
            net, cont, _ = random_clg_net(np.random.default_rng(1000 + seed))
            draws = sample_ssbn(net, 100_000, np.random.default_rng(seed))
            for c in cont:
                exact = infer_clg(net, c)
                xs = draws[c].astype(float)
                assert abs(xs.mean() - exact.mean) < 3 * xs.std(ddof=1) / math.sqrt(len(xs))
                centred = xs - xs.mean()
                se_var = math.sqrt((np.mean(centred ** 4) - np.var(centred) ** 2) / len(xs))
                assert abs(xs.var(ddof=1) - exact.variance) < 3 * se_var
        a = tabular_node("A", BOOL, [], [0.6, 0.4])
        b = tabular_node("B", BOOL, [("A", BOOL)], {("True",): [0.9, 0.1], ("False",): [0.2, 0.8]})
        p = infer_discrete(build_ssbn([a, b], {"B": "True"}), "A").prob("True")
        assert abs(p - 0.54 / 0.62) <= 1e-9 and abs(p - 0.870968) < 1e-6
        x = gaussian_node("X", [], [], (0.0, [], 1.0))
        y = gaussian_node("Y", [], ["X"], (0.0, [1.0], 1.0))
        post = infer_clg(build_ssbn([x, y]), "X", {"Y": 2.0})
        assert abs(post.mean - 1.0) <= 1e-9 and abs(post.variance - 0.5) <= 1e-9


def test_10_crps():
    with criterion(10, "closed-form CRPS"):
        for sigma in (0.1, 1.0, 10.0):
            for z in np.linspace(-4, 4, 33):
                y = float(z) * sigma
                assert abs(crps_gaussian(0.0, sigma ** 2, y) - crps_by_integration(0.0, sigma, y)) < 1e-6
        assert crps_gaussian(7.0, 0.0, 7.0) == 0.0
        assert abs(crps_gaussian(0.0, 1.0, 0.0) - 0.233695) <= 1e-5


def test_11_heater_end_to_end():
    with criterion(11, "heater experiment: parameter recovery and beating the baseline", limit=60.0):
        report = run_heater_experiment(HeaterConfig(n_train=1000, n_test=100, seed=0))
        slope, true_slope = report.parameter("Cost slope per kWh")
        variance, true_variance = report.parameter("SensedInputTemp noise variance")
        print(report.text())
        assert len(report.cases) == 100
        assert abs(slope - true_slope) <= 0.05 * true_slope
        assert abs(variance - true_variance) <= 0.25 * true_variance
        assert report.average_crps < report.baseline_crps


def test_12_consistency_checks():
    with criterion(12, "duplicate home, cycles and temporal grounding"):
        dup = parse_mtheory("""
        [F: Situation [C: IsA (rgn, REGION), IsA (t, TIME)] [R: ThreatLevel (rgn, t)]]
        [F: Copy [C: IsA (rgn, REGION), IsA (t, TIME)] [R: ThreatLevel (rgn, t)]]
        """)
        [violation] = check_unique_home(dup)
        assert set(violation.mfrags) == {"Situation", "Copy"}
        loop = parse_mtheory("""
        [F: A [C: IsA (v, VEHICLE)] [R: X (v) [IP: Y (v)]]]
        [F: B [C: IsA (v, VEHICLE)] [R: Y (v) [IP: X (v)]]]
        """)
        assert not check_acyclic(loop).ok
        db = er_normalize(load_database(VEHICLE_TRACKING))
        rules = parse_rules(rules_text("vehicle_tracking_rules.txt"))
        m, _ = apply_rules(build_initial_mtheory(prepare_database(db, rules)), rules, db)
        assert check_acyclic(m).ok
        model, _ = learn_mtheory(m, db, rules)
        steps = [f"T{i}" for i in range(1, 6)]
        entities = EntityInstanceSet.build({"VEHICLE": ["v1"], "TIME": steps}, "TIME", steps)
        net = ground(model, entities, {"VehicleType_v1": "Tracked"}, ["Speed_v1_T5"])
        g = net.graph()
        assert nx.is_directed_acyclic_graph(g)
        chain = [f"Speed_v1_{t}" for t in steps]
        assert all(g.has_edge(a, b) for a, b in zip(chain, chain[1:]))
