import pytest
from hypothesis import given, settings, strategies as st

from mebnlearn.errors import CycleIntroduced, MappingError, NoPath, RuleSyntaxError, TypeMismatch, UnknownParent
from mebnlearn.mapper import (apply_rules, build_initial_mtheory, format_rules, parse_rule, parse_rules,
                              plan_join, prepare_database, refine_context, rewrite_stages)
from mebnlearn.mtheory import (Equality, IsA, MFrag, ParentRef, PredicateContext, RelationalConstraint,
                               Resident, check_acyclic, check_unique_home)
from mebnlearn.relational import er_normalize, load_database
from mebnlearn.script import emit_mtheory, parse_mtheory

from goldens import (VEHICLE_TRACKING, SCRIPTS, SITUATION_REFINED, SITUATION_WITH_CONTEXTS, MEET_COMMUNICATE, THREAT_FULL,
                     rules_text)


@pytest.fixture(scope="module")
def tracking_db():
    return er_normalize(load_database(VEHICLE_TRACKING))


def frag_signature(f):
    return (f.name, frozenset(f.contexts), tuple((r.name, r.args) for r in f.residents))


def shape(r):
    return r.name, r.args, r.parents


def test_initial_theory_matches_reference(tracking_db):
    got = build_initial_mtheory(tracking_db)
    want = parse_mtheory(SCRIPTS.joinpath("threat_initial.mebn").read_text())
    assert len(got.mfrags) == 9
    assert {frag_signature(f) for f in got.mfrags} == {frag_signature(f) for f in want.mfrags}


def test_initial_theory_value_spaces(tracking_db):
    m = build_initial_mtheory(tracking_db)
    assert m.resident("VehicleType").value_space.states == ("Tracked", "Wheeled")
    assert m.resident("Speed").value_space.kind == "continuous"
    assert m.resident("Location").value_space.entity_type == "REGION"


def test_situation_rewrite_stages(tracking_db):
    rules = parse_rules(rules_text("vehicle_tracking_rules.txt"))
    situation_rule = next(r for r in rules if r.child.attribute == "ThreatLevel")
    db = prepare_database(tracking_db, rules)
    m = build_initial_mtheory(db)
    stages = rewrite_stages(m, situation_rule, plan_join(situation_rule, db), db)
    want_mid = parse_mtheory(SITUATION_WITH_CONTEXTS).mfrags[0]
    assert stages.with_contexts.contexts == want_mid.contexts
    assert [shape(r) for r in stages.with_contexts.residents] == [shape(r) for r in want_mid.residents]
    want = parse_mtheory(SITUATION_REFINED).mfrags[0]
    assert set(stages.refined.contexts) == set(want.contexts)
    assert stages.refined.resident("ThreatLevel").parents == want.resident("ThreatLevel").parents


def test_all_rules(tracking_db):
    rules = parse_rules(rules_text("vehicle_tracking_rules.txt"))
    m, plans = apply_rules(build_initial_mtheory(prepare_database(tracking_db, rules)), rules, tracking_db)
    assert len(plans) == 3
    speed = m.mfrag("SPEED")
    assert set(speed.contexts) == {IsA("v", "VEHICLE"), IsA("t", "TIME"), IsA("pret", "TIME"),
                                   PredicateContext("Predecessor", ("pret", "t"))}
    assert speed.resident("Speed").parents == (ParentRef("input", "VehicleType", ("v",)),
                                               ParentRef("resident", "Speed", ("v", "pret")))
    report = m.mfrag("SPEED_REPORT")
    assert RelationalConstraint("v", "ActualObject", ("r",)) in report.contexts
    assert PredicateContext("ObserverOf", ("mti", "v")) in report.contexts
    assert [p.name for p in report.resident("Speed_RPT").parents] == ["Speed", "MTI_Condition"]
    assert check_unique_home(m) == [] and check_acyclic(m).ok


def test_rule_closing_a_cycle_is_rejected():
    db = er_normalize(load_database(THREAT_FULL))
    rules = parse_rules(rules_text("threat_rules.txt")) + [parse_rule(
        "causal(Situation.ThreatLevel -> Vehicle.VehicleType)")]
    with pytest.raises(CycleIntroduced):
        apply_rules(build_initial_mtheory(prepare_database(db, rules)), rules, db)


def test_second_rule_for_same_child_is_rejected():
    db = er_normalize(load_database(THREAT_FULL))
    rules = parse_rules(rules_text("threat_rules.txt")) * 2
    with pytest.raises(MappingError):
        apply_rules(build_initial_mtheory(prepare_database(db, rules)), rules, db)


def test_unknown_parent():
    db = er_normalize(load_database(THREAT_FULL))
    rules = [parse_rule("causal(Vehicle.Colour -> Situation.ThreatLevel)")]
    with pytest.raises(UnknownParent):
        apply_rules(build_initial_mtheory(db), rules, db)


def test_no_join_path():
    db = er_normalize(load_database(MEET_COMMUNICATE))
    rules = [parse_rule("causal(Meet.Meet -> Communicate.Communicate) via=Nowhere")]
    with pytest.raises(MappingError):
        apply_rules(build_initial_mtheory(prepare_database(db, rules)), rules, db)
    assert issubclass(NoPath, MappingError)


def test_boolean_rule_adds_predicate_residents():
    db = er_normalize(load_database(MEET_COMMUNICATE))
    rules = parse_rules(rules_text("meet_communicate_rules.txt"))
    m, _ = apply_rules(build_initial_mtheory(prepare_database(db, rules)), rules, db)
    comm = m.resident("Communicate")
    assert comm.value_space.kind == "boolean"
    assert [p.name for p in comm.parents] == ["Meet"]


def test_rule_syntax():
    r = parse_rule("causal(Vehicle.VehicleType, Speed.Speed@prev -> Speed.Speed) family=clg")
    assert [p.label for p in r.parents] == ["Vehicle.VehicleType", "Speed.Speed@prev"]
    assert r.family == "clg"
    agg = parse_rule("causal(sum(Cost.Cost) -> TotalCost.TotalCost) via=Slab prior=2")
    assert agg.parents[0].aggregation == "sum" and agg.via == ("Slab",) and agg.prior == "2"
    rules = parse_rules(rules_text("vehicle_tracking_rules.txt"))
    assert parse_rules(format_rules(rules)) == rules


@pytest.mark.parametrize("text", [
    "causal(Vehicle.VehicleType Situation.ThreatLevel)",
    "causal( -> Situation.ThreatLevel)",
    "causal(Vehicle.VehicleType -> Situation.ThreatLevel) colour=red",
    "causal(Vehicle.VehicleType -> Situation.ThreatLevel) family=poisson",
    "causal(median(Cost.Cost) -> TotalCost.TotalCost)",
    "causal(Vehicle.VehicleType, Vehicle.VehicleType -> Situation.ThreatLevel)",
])
def test_rule_syntax_errors(text):
    with pytest.raises(RuleSyntaxError):
        parse_rule(text)


def test_refine_rejects_mixed_types():
    f = MFrag("F", (IsA("a", "VEHICLE"), IsA("b", "TIME"), Equality("a", "b")),
              (Resident("X", ("a",)),))
    with pytest.raises(TypeMismatch):
        refine_context(f)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), max_size=6))
def test_refine_unifies_equal_variables(pairs):
    names = [f"x{i}" for i in range(6)]
    contexts = tuple(IsA(n, "T") for n in names) + tuple(Equality(names[a], names[b]) for a, b in pairs)
    f = MFrag("F", contexts, (Resident("R", tuple(names)),))
    out = refine_context(f)
    assert not any(isinstance(c, Equality) for c in out.contexts)
    args = out.resident("R").args
    for a, b in pairs:
        assert args[a] == args[b]
    # variables never equated stay distinct
    linked = {i for p in pairs for i in p}
    free = [args[i] for i in range(6) if i not in linked]
    assert len(set(free)) == len(free)
    assert len([c for c in out.contexts if isinstance(c, IsA)]) == len(set(args))


def test_emitted_mapping_is_parseable(tracking_db):
    rules = parse_rules(rules_text("vehicle_tracking_rules.txt"))
    m, _ = apply_rules(build_initial_mtheory(prepare_database(tracking_db, rules)), rules, tracking_db)
    assert parse_mtheory(emit_mtheory(m)) == m
