"""Hybrid learning on the vehicle-tracking schema and filtering speed over five time steps."""
from mebnlearn import data_path
from mebnlearn.learner import learn_mtheory
from mebnlearn.mapper import apply_rules, build_initial_mtheory, parse_rules, prepare_database
from mebnlearn.relational import er_normalize, load_database
from mebnlearn.ssbn import EntityInstanceSet, ground, infer

db = er_normalize(load_database(data_path("vehicle_tracking", "manifest.txt")))
rules = parse_rules(data_path("vehicle_tracking_rules.txt").read_text())
mapped, _ = apply_rules(build_initial_mtheory(prepare_database(db, rules)), rules, db)
model, report = learn_mtheory(mapped, db, rules)
print(report.text())

steps = [f"T{i}" for i in range(1, 6)]
entities = EntityInstanceSet.build({"VEHICLE": ["v1"], "TIME": steps}, "TIME", steps)
for vt in ("Tracked", "Wheeled"):
    net = ground(model, entities, {"VehicleType_v1": vt, "Speed_v1_T1": 20.0}, ["Speed_v1_T5"])
    print(f"{vt}: {len(net.nodes)} nodes, {len(net.edges)} edges")
    for t in steps[1:]:
        post = infer(net, f"Speed_v1_{t}")
        print(f"  Speed at {t}: mean {post.mean:8.3f}  variance {post.variance:8.3f}")
