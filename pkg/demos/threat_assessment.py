"""Threat assessment from relational data: normalize, map, apply a rule, learn, then query.

Run with ``python demos/threat_assessment.py``.
"""
from mebnlearn import data_path
from mebnlearn.learner import learn_mtheory
from mebnlearn.mapper import apply_rules, build_initial_mtheory, parse_rules, prepare_database
from mebnlearn.relational import er_normalize, load_database
from mebnlearn.script import emit_mtheory
from mebnlearn.ssbn import EntityInstanceSet, ground, infer

db = er_normalize(load_database(data_path("threat_full", "manifest.txt")))
print("relations after normalization:", ", ".join(db.names))

rules = parse_rules(data_path("threat_rules.txt").read_text())
mapped, _ = apply_rules(build_initial_mtheory(prepare_database(db, rules)), rules, db)
model, report = learn_mtheory(mapped, db, rules)
print(report.text())
print(emit_mtheory(model))

# a fresh situation: one vehicle seen in one region at one time
entities = EntityInstanceSet.build({"VEHICLE": ["v1", "v2"], "REGION": ["r1"], "TIME": ["t1"]})
for types in (("Wheeled",), ("Tracked",), ("Wheeled", "Tracked")):
    evidence = {}
    for i, vt in enumerate(types, 1):
        evidence[f"Location_v{i}_t1"] = "r1"
        evidence[f"VehicleType_v{i}"] = vt
    net = ground(model, entities, evidence, ["ThreatLevel_r1_t1"])
    high = infer(net, "ThreatLevel_r1_t1").prob("High")
    print(f"vehicles {'+'.join(types):<16} P(ThreatLevel = High) = {high:.4f}")
