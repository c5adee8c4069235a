import math

import networkx as nx
import numpy as np
import pytest

from mebnlearn.errors import BadEvidence, ContinuousInDiscreteQuery, CycleAtGroundLevel, ModelError
from mebnlearn.learner import learn_mtheory
from mebnlearn.mapper import apply_rules, build_initial_mtheory, parse_rules, prepare_database
from mebnlearn.relational import er_normalize, load_database
from mebnlearn.script import emit_mtheory, parse_mtheory
from mebnlearn.ssbn import (EntityInstanceSet, build_ssbn, enumerate_discrete, gaussian_node, ground, infer,
                            infer_clg, infer_discrete, load_evidence, parse_node_id, sample_ssbn, tabular_node,
                            write_evidence)

from goldens import VEHICLE_TRACKING, THREAT_FULL, rules_text
from nets import BOOL, random_clg_net, random_discrete_net


def learned(manifest, rules_name):
    db = er_normalize(load_database(manifest))
    rules = parse_rules(rules_text(rules_name))
    m, _ = apply_rules(build_initial_mtheory(prepare_database(db, rules)), rules, db)
    model, report = learn_mtheory(m, db, rules)
    assert not report.errors
    return model


# ---------------------------------------------------------------- discrete

def test_two_node_bayes_by_hand():
    a = tabular_node("A", BOOL, [], [0.6, 0.4])
    b = tabular_node("B", BOOL, [("A", BOOL)], {("True",): [0.9, 0.1], ("False",): [0.2, 0.8]})
    net = build_ssbn([a, b], {"B": "True"})
    want = 0.6 * 0.9 / (0.6 * 0.9 + 0.4 * 0.2)
    assert abs(infer_discrete(net, "A").prob("True") - want) < 1e-12
    assert abs(want - 0.870968) < 1e-6


@pytest.mark.parametrize("seed", range(50))
def test_elimination_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 13))
    net, ids = random_discrete_net(rng, n)
    query = ids[int(rng.integers(0, n))]
    others = [i for i in ids if i != query]
    k = int(rng.integers(0, min(3, len(others)) + 1))
    evidence = {e: BOOL[int(rng.integers(0, 2))] for e in rng.choice(others, size=k, replace=False)}
    got = infer_discrete(net, query, evidence)
    want = enumerate_discrete(net, query, evidence)
    for s in BOOL:
        assert abs(got.prob(s) - want.prob(s)) < 1e-9


def test_zero_probability_evidence():
    a = tabular_node("A", BOOL, [], [1.0, 0.0])
    net = build_ssbn([a])
    with pytest.raises(BadEvidence):
        infer_discrete(net, "A", {"A": "False"})


def test_discrete_engine_refuses_continuous_nodes():
    x = gaussian_node("X", [], [], (0.0, [], 1.0))
    net = build_ssbn([x])
    with pytest.raises(ContinuousInDiscreteQuery):
        infer_discrete(net, "X")


def test_direct_cycle_rejected():
    a = tabular_node("A", BOOL, [("B", BOOL)], {("True",): [0.5, 0.5], ("False",): [0.5, 0.5]})
    b = tabular_node("B", BOOL, [("A", BOOL)], {("True",): [0.5, 0.5], ("False",): [0.5, 0.5]})
    with pytest.raises(CycleAtGroundLevel):
        build_ssbn([a, b])


# ---------------------------------------------------------------- hybrid

def test_gaussian_update_by_hand():
    x = gaussian_node("X", [], [], (0.0, [], 1.0))
    y = gaussian_node("Y", [], ["X"], (0.0, [1.0], 1.0))
    post = infer_clg(build_ssbn([x, y]), "X", {"Y": 2.0})
    assert abs(post.mean - 1.0) < 1e-9
    assert abs(post.variance - 0.5) < 1e-9


def test_switching_gaussian_weights():
    d = tabular_node("D", BOOL, [], [0.3, 0.7])
    x = gaussian_node("X", [("D", BOOL)], [], {("True",): (5.0, [], 1.0), ("False",): (-5.0, [], 1.0)})
    net = build_ssbn([d, x])
    prior = infer_clg(net, "X")
    assert prior.mean == pytest.approx(0.3 * 5 - 0.7 * 5, abs=1e-12)
    assert prior.variance == pytest.approx(1 + 0.3 * 25 + 0.7 * 25 - (-2.0) ** 2, abs=1e-9)
    post = infer(net, "D", {"X": 4.0})
    lt = 0.3 * math.exp(-0.5 * 1.0)
    lf = 0.7 * math.exp(-0.5 * 81.0)
    assert post.prob("True") == pytest.approx(lt / (lt + lf), abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_clg_moments_agree_with_sampling(seed):
    rng = np.random.default_rng(1000 + seed)
    net, cont, disc = random_clg_net(rng)
    n = 100_000
    draws = sample_ssbn(net, n, np.random.default_rng(seed))
    for c in cont:
        exact = infer_clg(net, c)
        xs = draws[c].astype(float)
        se_mean = xs.std(ddof=1) / math.sqrt(n)
        assert abs(xs.mean() - exact.mean) < 3 * se_mean, c
        centred = xs - xs.mean()
        se_var = math.sqrt((np.mean(centred ** 4) - np.var(centred) ** 2) / n)
        assert abs(xs.var(ddof=1) - exact.variance) < 3 * se_var, c
    for d in disc:
        p = infer_clg(net, d).prob("True")
        freq = float(np.mean(draws[d] == "True"))
        assert abs(freq - p) < 3 * math.sqrt(p * (1 - p) / n)


# ---------------------------------------------------------------- grounding from a learned model

@pytest.fixture(scope="module")
def threat_model():
    return learned(THREAT_FULL, "threat_rules.txt")


def test_threat_posterior_given_tracked(threat_model):
    entities = EntityInstanceSet.build({"VEHICLE": ["v1"], "REGION": ["r1"], "TIME": ["t1"]})
    evidence = {"Location_v1_t1": "r1", "VehicleType_v1": "Tracked"}
    net = ground(threat_model, entities, evidence, ["ThreatLevel_r1_t1"])
    assert set(net.nodes) == {"ThreatLevel_r1_t1", "VehicleType_v1"}
    assert net.nodes["ThreatLevel_r1_t1"].parents == ("VehicleType_v1",)
    assert infer(net, "ThreatLevel_r1_t1").prob("High") == pytest.approx(9 / 14, abs=1e-12)


def test_missing_location_falls_back_to_default(threat_model):
    entities = EntityInstanceSet.build({"VEHICLE": ["v1"], "REGION": ["r1"], "TIME": ["t1"]})
    net = ground(threat_model, entities, {}, ["ThreatLevel_r1_t1"])
    assert net.nodes["ThreatLevel_r1_t1"].parents == ()
    assert any(r.startswith("E_UNBOUND_CONTEXT") and "Location_v1_t1" in r for r in net.reports)
    default = threat_model.resident("ThreatLevel").cld.default.as_dict()
    assert infer(net, "ThreatLevel_r1_t1").prob("High") == pytest.approx(default["High"], abs=1e-12)


def test_two_vehicles_in_one_region(threat_model):
    entities = EntityInstanceSet.build({"VEHICLE": ["v1", "v2"], "REGION": ["r1"], "TIME": ["t1"]})
    evidence = {"Location_v1_t1": "r1", "Location_v2_t1": "r1",
                "VehicleType_v1": "Wheeled", "VehicleType_v2": "Tracked"}
    net = ground(threat_model, entities, evidence, ["ThreatLevel_r1_t1"])
    assert net.nodes["ThreatLevel_r1_t1"].parents == ("VehicleType_v1", "VehicleType_v2")
    # the first branch (some vehicle Tracked) applies
    assert infer(net, "ThreatLevel_r1_t1").prob("High") == pytest.approx(9 / 14, abs=1e-12)


def test_temporal_grounding_is_acyclic():
    model = parse_mtheory(emit_mtheory(learned(VEHICLE_TRACKING, "vehicle_tracking_rules.txt")))
    steps = [f"T{i}" for i in range(1, 6)]
    entities = EntityInstanceSet.build({"VEHICLE": ["v1"], "TIME": steps}, "TIME", steps)
    net = ground(model, entities, {"VehicleType_v1": "Tracked"}, ["Speed_v1_T5"])
    g = net.graph()
    assert nx.is_directed_acyclic_graph(g)
    speeds = [f"Speed_v1_{t}" for t in steps]
    assert set(speeds) <= set(net.nodes)
    for prev, cur in zip(speeds, speeds[1:]):
        assert g.has_edge(prev, cur)
    # no binding survives the ordering context at the first step, so it uses the default
    first = net.nodes["Speed_v1_T1"]
    assert first.parents == () and [ipc.kind for ipc, _ in first.ild.pairs] == ["default"]
    assert "VehicleType_v1" in net.nodes["Speed_v1_T2"].parents
    post = infer(net, "Speed_v1_T5", {"Speed_v1_T1": 10.0})
    assert math.isfinite(post.mean) and post.variance > 0


def test_entity_order_must_cover_type():
    with pytest.raises(ModelError):
        EntityInstanceSet.build({"TIME": ["a", "b"]}, "TIME", ["a"])


# ---------------------------------------------------------------- ids and evidence files

def test_node_id_parsing():
    arities = {"Speed": 2, "Speed_RPT": 2, "VehicleType": 1, "Flag": 0}
    assert parse_node_id("Speed_v1_T3", arities) == ("Speed", ("v1", "T3"))
    assert parse_node_id("Speed_RPT_r1_T3", arities) == ("Speed_RPT", ("r1", "T3"))
    assert parse_node_id("VehicleType_v_1", arities) == ("VehicleType", ("v_1",))
    assert parse_node_id("Flag", arities) == ("Flag", ())
    with pytest.raises(BadEvidence):
        parse_node_id("Colour_v1", arities)


def test_evidence_file_round_trip(tmp_path):
    path = tmp_path / "evidence.csv"
    write_evidence(path, {"VehicleType_v1": "Tracked", "Speed_v1_T1": 12.5})
    assert load_evidence(path) == {"Speed_v1_T1": "12.5", "VehicleType_v1": "Tracked"}
    path.write_text("node_id,value\nA,True,extra\n")
    with pytest.raises(BadEvidence):
        load_evidence(path)


def test_evidence_is_checked():
    a = tabular_node("A", BOOL, [], [0.5, 0.5])
    x = gaussian_node("X", [], [], (0.0, [], 1.0))
    with pytest.raises(BadEvidence):
        build_ssbn([a], {"A": "Maybe"})
    with pytest.raises(BadEvidence):
        build_ssbn([a], {"B": "True"})
    with pytest.raises(BadEvidence):
        build_ssbn([x], {"X": "fast"})
    with pytest.raises(BadEvidence):
        build_ssbn([x], {"X": float("inf")})
