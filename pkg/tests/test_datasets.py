import csv
import itertools

import pytest
from hypothesis import given, settings, strategies as st

from mebnlearn.datasets import (Case, JoinedDataset, ParentInstance, build_default_dataset,
                                count_table, dump_joined, execute_join, generate_cpcs, partition_by_cpc)
from mebnlearn.errors import UnmatchedCase
from mebnlearn.mapper import apply_rules, build_initial_mtheory, parse_rules, prepare_database
from mebnlearn.mtheory import CPC
from mebnlearn.relational import Database, er_normalize, load_database, make_relation

from goldens import JOINED_ROWS, THREAT_FULL, TRACKED_CASES, WHEELED_CASES, rules_text

THREAT_RULES = parse_rules(rules_text("threat_rules.txt"))


def plan_for(db, rules=THREAT_RULES):
    m, plans = apply_rules(build_initial_mtheory(prepare_database(db, rules)), rules, db)
    return m, plans[0]


@pytest.fixture(scope="module")
def threat():
    db = er_normalize(load_database(THREAT_FULL))
    m, plan = plan_for(db)
    return db, m, plan


def printed(child_key, child_value, match):
    [p] = match
    region, time = child_key
    return (p.value, p.key[0], time, region, child_value)


def test_joined_rows_match_reference(threat):
    db, _, plan = threat
    joined = execute_join(plan, db, grouping="row")
    rows = [printed(*r) for r in joined.flattened()]
    assert len(rows) == 18
    assert set(rows) == set(JOINED_ROWS.values())


def test_bag_grouping_merges_shared_child(threat):
    db, _, plan = threat
    joined = execute_join(plan, db, grouping="bag")
    assert len(joined.cases) == len({(r[3], r[2]) for r in JOINED_ROWS.values()}) == 12
    shared = next(c for c in joined.cases if c.child_key == ("Region5", "Time17"))
    assert sorted(p.key[0] for p in shared.parents) == ["Vehicle10", "Vehicle11"]
    assert sorted(printed(*r) for r in joined.flattened()) == sorted(JOINED_ROWS.values())


def test_partition_reproduces_groups(threat):
    db, m, plan = threat
    joined = execute_join(plan, db, grouping="row")
    cpcs = generate_cpcs(m.resident("ThreatLevel"), m, joined)
    assert [c.conditions for c in cpcs] == [(("VehicleType", "Tracked"),), (("VehicleType", "Wheeled"),)]
    csd = partition_by_cpc(joined, cpcs, [])
    number = {row: n for n, row in JOINED_ROWS.items()}

    def ids(cases):
        return {number[printed(c.child_key, c.child_value, c.matches[0])] for c in cases}

    assert ids(csd.group(cpcs[0])) == TRACKED_CASES
    assert ids(csd.group(cpcs[1])) == WHEELED_CASES
    table = count_table(csd, ("High", "Low"))
    assert table.count("High", cpcs[0]) == 8 and table.count("Low", cpcs[0]) == 4
    assert table.count("High", cpcs[1]) == 4 and table.count("Low", cpcs[1]) == 2


def test_default_dataset_is_anti_join(threat):
    db, _, plan = threat
    joined = execute_join(plan, db)
    default = build_default_dataset(db, plan, joined)
    joined_keys = set(joined.child_keys())
    all_keys = {(r["rgn"], r["t"]) for r in db["Situation"].as_dicts()}
    assert {c.child_key for c in default} == all_keys - joined_keys
    assert len(default) == 3


def test_mixed_bag_goes_to_first_condition():
    tracked = CPC(("v",), (("VehicleType", "Tracked"),))
    wheeled = CPC(("v",), (("VehicleType", "Wheeled"),))
    parents = (ParentInstance("VehicleType", ("a",), "Wheeled"), ParentInstance("VehicleType", ("b",), "Tracked"))
    case = Case(1, ("r", "t"), "High", parents, (parents[:1], parents[1:]))
    joined = JoinedDataset("ThreatLevel", ("rgn", "t"), ("VehicleType",), (case,), "bag")
    csd = partition_by_cpc(joined, [tracked, wheeled], [])
    assert csd.group(tracked) == (case,) and csd.group(wheeled) == ()


def test_unmatched_case_raises():
    only = CPC(("v",), (("VehicleType", "Tracked"),))
    parents = (ParentInstance("VehicleType", ("a",), "Wheeled"),)
    joined = JoinedDataset("ThreatLevel", ("rgn", "t"), ("VehicleType",),
                           (Case(1, ("r", "t"), "High", parents, (parents,)),), "bag")
    with pytest.raises(UnmatchedCase):
        partition_by_cpc(joined, [only], [])


def test_empty_join(threat):
    db, _, plan = threat
    empty = Database([r if r.name != "Location" else make_relation(
        "Location", [("v", "fk:Vehicle"), ("t", "fk:Time"), ("Location", "fk:Region")], ["v", "t"], [])
        for r in db])
    joined = execute_join(plan, empty)
    assert joined.cases == ()
    csd = partition_by_cpc(joined, [CPC(("v",), (("VehicleType", "Tracked"),))], [])
    assert all(not cases for _, cases in csd.groups)


def test_dump_layout(threat, tmp_path):
    db, m, plan = threat
    joined = execute_join(plan, db, grouping="row")
    csd = partition_by_cpc(joined, generate_cpcs(m.resident("ThreatLevel"), m, joined),
                           build_default_dataset(db, plan, joined))
    path = dump_joined(tmp_path / "joined.csv", joined, csd)
    rows = list(csv.reader(open(path)))
    assert rows[0][:5] == ["case", "condition", "rgn", "t", "ThreatLevel"]
    assert len(rows) == 1 + 18 + 3
    assert sum(r[0].startswith("d") for r in rows[1:]) == 3


# ---------------------------------------------------------------- brute-force oracle

@st.composite
def threat_databases(draw):
    nv, nt, nr = draw(st.integers(1, 5)), draw(st.integers(1, 4)), draw(st.integers(1, 3))
    vs, ts, rs = [f"V{i}" for i in range(nv)], [f"T{i}" for i in range(nt)], [f"R{i}" for i in range(nr)]
    types = [draw(st.sampled_from(["Tracked", "Wheeled"])) for _ in vs]
    loc_keys = draw(st.sets(st.tuples(st.sampled_from(vs), st.sampled_from(ts))))
    locations = [(v, t, draw(st.sampled_from(rs))) for v, t in sorted(loc_keys)]
    sit_keys = draw(st.sets(st.tuples(st.sampled_from(rs), st.sampled_from(ts))))
    situations = [(r, t, draw(st.sampled_from(["High", "Low"]))) for r, t in sorted(sit_keys)]
    return Database([
        make_relation("Time", [("TID", "key")], ["TID"], [(t,) for t in ts]),
        make_relation("Region", [("RID", "key")], ["RID"], [(r,) for r in rs]),
        make_relation("Vehicle", [("VID", "key"), ("VehicleType", "cat:Tracked|Wheeled")], ["VID"],
                      list(zip(vs, types))),
        make_relation("Location", [("v", "fk:Vehicle"), ("t", "fk:Time"), ("Location", "fk:Region")],
                      ["v", "t"], locations),
        make_relation("Situation", [("rgn", "fk:Region"), ("t", "fk:Time"), ("ThreatLevel", "cat:High|Low")],
                      ["rgn", "t"], situations),
    ])


def nested_loop_join(db):
    out = set()
    for s, loc, veh in itertools.product(db["Situation"].rows, db["Location"].rows, db["Vehicle"].rows):
        if s[0] == loc[2] and s[1] == loc[1] and loc[0] == veh[0]:
            out.add(((s[0], s[1]), s[2], veh[0], veh[1]))
    return out


@settings(max_examples=150, deadline=None)
@given(db=threat_databases())
def test_join_agrees_with_nested_loops(db):
    _, plan = plan_for(db)
    joined = execute_join(plan, db, grouping="row")
    got = {(k, val, m[0].key[0], m[0].value) for k, val, m in joined.flattened()}
    assert got == nested_loop_join(db)
    assert len(list(joined.flattened())) == len(got)
    default = build_default_dataset(db, plan, joined)
    assert {c.child_key for c in default} | set(joined.child_keys()) == {r[:2] for r in db["Situation"].rows}
    assert not {c.child_key for c in default} & set(joined.child_keys())
