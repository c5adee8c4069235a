"""Relational schemas, data ingestion, normalization and closed-world completion.

Values are stored as Python objects: keys, foreign keys and categorical
states as ``str``, continuous attributes as ``float`` and booleans as
``bool``.  Rows of a relation are kept sorted by the string form of their
primary key, so two instances holding the same tuples compare equal.
"""
from __future__ import annotations

import csv
import itertools
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import networkx as nx

from .errors import (
    DanglingForeignKey,
    DuplicatePrimaryKey,
    MergeCardinalityError,
    MergeNameClash,
    MissingValue,
    NonKeyAttributesPresent,
    NotNormalized,
    NotRelationship,
    SchemaError,
    UnknownState,
    UnsupportedArity,
)

KINDS = ("key", "fk", "cat", "cont", "bool")
_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    kind: str
    target: str | None = None
    states: tuple[str, ...] = ()
    unit: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"attribute {self.name}: unknown kind {self.kind!r}")
        if self.kind == "fk" and not self.target:
            raise SchemaError(f"foreign key {self.name} has no target relation")
        if self.kind == "cat":
            if not self.states:
                raise SchemaError(f"categorical attribute {self.name} has no states")
            if len(set(self.states)) != len(self.states):
                raise SchemaError(f"categorical attribute {self.name} repeats a state")

    @property
    def is_key_like(self) -> bool:
        return self.kind in ("key", "fk")

    def spec_text(self) -> str:
        if self.kind == "fk":
            return f"fk:{self.target}"
        if self.kind == "cat":
            return "cat:" + "|".join(self.states)
        if self.kind == "cont":
            return f"cont:{self.unit}" if self.unit else "cont"
        return self.kind


@dataclass(frozen=True)
class RelationSchema:
    name: str
    attributes: tuple[AttributeSpec, ...]
    primary_key: tuple[str, ...]

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError(f"relation {self.name} has duplicate attribute names")
        if not self.primary_key:
            raise SchemaError(f"relation {self.name} has an empty primary key")
        for k in self.primary_key:
            if k not in names:
                raise SchemaError(f"relation {self.name}: primary key {k} is not an attribute")

    @property
    def attribute_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def attribute(self, name: str) -> AttributeSpec:
        for a in self.attributes:
            if a.name == name:
                return a
        raise SchemaError(f"relation {self.name} has no attribute {name}")

    def has_attribute(self, name: str) -> bool:
        return name in self.attribute_names

    def index(self, name: str) -> int:
        return self.attribute_names.index(name)

    @property
    def nonkey_attributes(self) -> tuple[AttributeSpec, ...]:
        return tuple(a for a in self.attributes if a.name not in self.primary_key)

    def entity_type_of(self, name: str) -> str | None:
        """Entity relation an attribute ranges over, or None for plain values."""
        a = self.attribute(name)
        if a.kind == "fk":
            return a.target
        if a.kind == "key":
            return self.name
        return None


def _row_sort_key(schema: RelationSchema):
    idx = [schema.index(k) for k in schema.primary_key]
    return lambda row: tuple(str(row[i]) for i in idx)


@dataclass(frozen=True)
class RelationInstance:
    schema: RelationSchema
    rows: tuple[tuple, ...]

    def __post_init__(self):
        width = len(self.schema.attributes)
        for r in self.rows:
            if len(r) != width:
                raise SchemaError(f"relation {self.schema.name}: row {r!r} has wrong width")
        object.__setattr__(self, "rows", tuple(sorted(self.rows, key=_row_sort_key(self.schema))))

    @property
    def name(self) -> str:
        return self.schema.name

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> list:
        i = self.schema.index(name)
        return [r[i] for r in self.rows]

    def key_of(self, row) -> tuple:
        return tuple(row[self.schema.index(k)] for k in self.schema.primary_key)

    def as_dicts(self) -> list[dict]:
        names = self.schema.attribute_names
        return [dict(zip(names, r)) for r in self.rows]


class Database:
    """An immutable, validated collection of relation instances."""

    def __init__(self, relations: Iterable[RelationInstance] | Mapping[str, RelationInstance]):
        if isinstance(relations, Mapping):
            relations = relations.values()
        rels: dict[str, RelationInstance] = {}
        for r in relations:
            if r.name in rels:
                raise SchemaError(f"relation {r.name} declared twice")
            rels[r.name] = r
        self._relations = rels
        self._validate()

    @property
    def relations(self) -> dict[str, RelationInstance]:
        return dict(self._relations)

    def __getitem__(self, name: str) -> RelationInstance:
        try:
            return self._relations[name]
        except KeyError:
            raise SchemaError(f"no relation named {name}") from None

    def __contains__(self, name) -> bool:
        return name in self._relations

    def __iter__(self):
        return iter(self._relations.values())

    def __len__(self):
        return len(self._relations)

    def __eq__(self, other):
        return isinstance(other, Database) and self._relations == other._relations

    def __repr__(self):
        inner = ", ".join(f"{n}[{len(r)}]" for n, r in self._relations.items())
        return f"Database({inner})"

    @property
    def names(self) -> list[str]:
        return list(self._relations)

    @property
    def fk_graph(self) -> nx.MultiDiGraph:
        g = nx.MultiDiGraph()
        g.add_nodes_from(self._relations)
        for r in self._relations.values():
            for a in r.schema.attributes:
                if a.kind == "fk":
                    g.add_edge(r.name, a.target, attribute=a.name)
        return g

    def with_relation(self, instance: RelationInstance) -> "Database":
        """Copy with `instance` replacing the relation of the same name (or appended)."""
        rels = dict(self._relations)
        rels[instance.name] = instance
        return Database(rels)

    def key_values(self, relation: str) -> list[str]:
        r = self[relation]
        if len(r.schema.primary_key) != 1:
            raise SchemaError(f"relation {relation} does not have a single-attribute key")
        return r.column(r.schema.primary_key[0])

    def _validate(self):
        keysets: dict[str, set] = {}
        for r in self._relations.values():
            seen = set()
            for row in r.rows:
                k = r.key_of(row)
                if k in seen:
                    raise DuplicatePrimaryKey(f"relation {r.name}: duplicate primary key {k}")
                seen.add(k)
            if len(r.schema.primary_key) == 1:
                keysets[r.name] = {k[0] for k in seen}
        for r in self._relations.values():
            for a in r.schema.attributes:
                if a.kind != "fk":
                    continue
                if a.target not in self._relations:
                    raise SchemaError(f"{r.name}.{a.name} references unknown relation {a.target}")
                if a.target not in keysets:
                    raise SchemaError(
                        f"{r.name}.{a.name} references {a.target}, whose key is not a single attribute")
                valid = keysets[a.target]
                i = r.schema.index(a.name)
                for row in r.rows:
                    if row[i] not in valid:
                        raise DanglingForeignKey(
                            f"{r.name}.{a.name} = {row[i]!r} has no matching row in {a.target}")


# ---------------------------------------------------------------- manifest

def parse_manifest(text: str) -> list[RelationSchema]:
    """Parse the line-oriented schema manifest."""
    schemas = []
    current = None
    attrs: list[AttributeSpec] = []
    pk: tuple[str, ...] = ()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        word = parts[0]
        if word == "relation":
            if current is not None:
                raise SchemaError(f"manifest line {lineno}: relation {current} lacks 'end'")
            if len(parts) != 2 or not _IDENT.match(parts[1]):
                raise SchemaError(f"manifest line {lineno}: expected 'relation <Name>'")
            current, attrs, pk = parts[1], [], ()
        elif current is None:
            raise SchemaError(f"manifest line {lineno}: {word!r} outside a relation block")
        elif word == "attr":
            if len(parts) != 3:
                raise SchemaError(f"manifest line {lineno}: expected 'attr <name> <kind>'")
            attrs.append(_parse_kind(parts[1], parts[2], lineno))
        elif word == "pk":
            if len(parts) < 2:
                raise SchemaError(f"manifest line {lineno}: empty primary key")
            pk = tuple(parts[1:])
        elif word == "end":
            schemas.append(RelationSchema(current, tuple(attrs), pk))
            current = None
        else:
            raise SchemaError(f"manifest line {lineno}: unknown directive {word!r}")
    if current is not None:
        raise SchemaError(f"manifest: relation {current} lacks 'end'")
    names = [s.name for s in schemas]
    for s in schemas:
        for a in s.attributes:
            if a.kind == "fk" and a.target not in names:
                raise SchemaError(f"{s.name}.{a.name} references undeclared relation {a.target}")
    return schemas


def _parse_kind(name: str, kind: str, lineno: int) -> AttributeSpec:
    if not _IDENT.match(name):
        raise SchemaError(f"manifest line {lineno}: bad attribute name {name!r}")
    head, _, rest = kind.partition(":")
    if head == "key" and not rest:
        return AttributeSpec(name, "key")
    if head == "bool" and not rest:
        return AttributeSpec(name, "bool")
    if head == "fk" and rest:
        return AttributeSpec(name, "fk", target=rest)
    if head == "cat" and rest:
        states = tuple(rest.split("|"))
        if not all(_IDENT.match(s) for s in states):
            raise SchemaError(f"manifest line {lineno}: states must be identifiers")
        return AttributeSpec(name, "cat", states=states)
    if head == "cont":
        return AttributeSpec(name, "cont", unit=rest)
    raise SchemaError(f"manifest line {lineno}: unknown attribute kind {kind!r}")


def format_manifest(schemas: Iterable[RelationSchema]) -> str:
    out = []
    for s in schemas:
        out.append(f"relation {s.name}")
        for a in s.attributes:
            out.append(f"  attr {a.name} {a.spec_text()}")
        out.append("  pk " + " ".join(s.primary_key))
        out.append("end")
        out.append("")
    return "\n".join(out)


# ---------------------------------------------------------------- values

def parse_value(attr: AttributeSpec, text: str, relation: str = "?"):
    if attr.kind in ("key", "fk"):
        return text
    if attr.kind == "cat":
        if text not in attr.states:
            raise UnknownState(f"{relation}.{attr.name}: {text!r} is not one of {list(attr.states)}")
        return text
    if attr.kind == "bool":
        low = text.lower()
        if low in ("true", "1"):
            return True
        if low in ("false", "0"):
            return False
        raise UnknownState(f"{relation}.{attr.name}: {text!r} is not a boolean")
    try:
        return float(text)
    except ValueError:
        raise SchemaError(f"{relation}.{attr.name}: {text!r} is not a number") from None


def format_value(value) -> str:
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ---------------------------------------------------------------- files

def load_relation(schema: RelationSchema, path: str | os.PathLike) -> RelationInstance:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty data file (header required)") from None
        if sorted(header) != sorted(schema.attribute_names):
            raise SchemaError(
                f"{path}: header {header} does not match attributes {list(schema.attribute_names)}")
        order = [header.index(n) for n in schema.attribute_names]
        rows = []
        for rowno, raw in enumerate(reader, 1):
            if not raw:
                continue
            if len(raw) != len(header):
                raise SchemaError(f"{path}: row {rowno} has {len(raw)} cells, expected {len(header)}")
            row = []
            for a, j in zip(schema.attributes, order):
                cell = raw[j].strip()
                if cell == "":
                    raise MissingValue(schema.name, rowno, a.name)
                row.append(parse_value(a, cell, schema.name))
            rows.append(tuple(row))
    return RelationInstance(schema, tuple(rows))


def load_database(manifest_path: str | os.PathLike, data_dir: str | os.PathLike | None = None) -> Database:
    """Read a schema manifest and one ``<Relation>.csv`` per relation.

    CSV files are looked up next to the manifest unless ``data_dir`` is given.
    """
    if data_dir is None:
        data_dir = Path(manifest_path).parent
    schemas = parse_manifest(Path(manifest_path).read_text(encoding="utf-8"))
    instances = []
    for s in schemas:
        path = Path(data_dir) / f"{s.name}.csv"
        if not path.exists():
            raise SchemaError(f"missing data file {path}")
        instances.append(load_relation(s, path))
    return Database(instances)


def write_database(db: Database, out_dir: str | os.PathLike, manifest_name: str = "manifest.txt") -> Path:
    """Write the manifest and CSV files; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / manifest_name
    manifest.write_text(format_manifest(r.schema for r in db), encoding="utf-8")
    for r in db:
        with open(out / f"{r.name}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(r.schema.attribute_names)
            for row in r.rows:
                w.writerow([format_value(v) for v in row])
    return manifest


# ---------------------------------------------------------------- classification

def classify_relation(schema: RelationSchema) -> str:
    """Return ``"entity"`` or ``"relationship"``; raise NotNormalized otherwise."""
    pk = [schema.attribute(k) for k in schema.primary_key]
    if len(pk) == 1 and pk[0].kind == "key":
        return "entity"
    if len(pk) >= 2 and all(a.kind == "fk" for a in pk):
        return "relationship"
    raise NotNormalized(f"relation {schema.name} is neither an entity nor a relationship relation")


def _single_fk_key(schema: RelationSchema) -> bool:
    return len(schema.primary_key) == 1 and schema.attribute(schema.primary_key[0]).kind == "fk"


def er_normalize(db: Database) -> Database:
    """Fold every relation keyed by a single foreign key into its target, to a fixpoint."""
    order = db.names
    rels = db.relations
    while True:
        candidates = sorted(n for n in order if _single_fk_key(rels[n].schema))
        if not candidates:
            break
        name = candidates[0]
        cand = rels[name]
        key = cand.schema.primary_key[0]
        target_name = cand.schema.attribute(key).target
        if target_name == name:
            raise NotNormalized(f"relation {name} references itself through its key")
        target = rels[target_name]
        tkey = target.schema.primary_key[0]

        clash = set(a.name for a in cand.schema.nonkey_attributes) & set(target.schema.attribute_names)
        if clash:
            raise MergeNameClash(f"merging {name} into {target_name}: attribute(s) {sorted(clash)} clash")
        by_key = {row[cand.schema.index(key)]: row for row in cand.rows}
        t_index = target.schema.index(tkey)
        if len(by_key) != len(target.rows) or any(row[t_index] not in by_key for row in target.rows):
            raise MergeCardinalityError(
                f"merging {name} into {target_name}: {len(by_key)} rows for {len(target.rows)} entities")
        extra = cand.schema.nonkey_attributes
        extra_idx = [cand.schema.index(a.name) for a in extra]
        schema = RelationSchema(target_name, target.schema.attributes + extra, target.schema.primary_key)
        rows = tuple(row + tuple(by_key[row[t_index]][i] for i in extra_idx) for row in target.rows)
        rels[target_name] = RelationInstance(schema, rows)
        del rels[name]
        order.remove(name)
        for other in order:
            rels[other] = _retarget(rels[other], name, target_name)
    for n in order:
        classify_relation(rels[n].schema)
    return Database([rels[n] for n in order])


def _retarget(inst: RelationInstance, old: str, new: str) -> RelationInstance:
    if not any(a.kind == "fk" and a.target == old for a in inst.schema.attributes):
        return inst
    attrs = tuple(
        AttributeSpec(a.name, "fk", target=new) if a.kind == "fk" and a.target == old else a
        for a in inst.schema.attributes)
    return RelationInstance(RelationSchema(inst.schema.name, attrs, inst.schema.primary_key), inst.rows)


def is_attribute_free_relationship(schema: RelationSchema) -> bool:
    try:
        kind = classify_relation(schema)
    except NotNormalized:
        return False
    return kind == "relationship" and not schema.nonkey_attributes


def complete_boolean_relation(db: Database, rel: str, truth_attr: str | None = None) -> RelationInstance:
    """Closed-world completion of a binary relationship relation.

    Every candidate key pair gets a row, with ``truth_attr`` True exactly for
    pairs present in the input.  Pairs over a single entity relation are
    unordered and written in lexicographic order (first < second).
    """
    inst = db[rel]
    schema = inst.schema
    truth_attr = truth_attr or rel
    try:
        kind = classify_relation(schema)
    except NotNormalized:
        kind = None
    if kind != "relationship":
        raise NotRelationship(f"relation {rel} is not a relationship relation")
    if schema.nonkey_attributes:
        raise NonKeyAttributesPresent(f"relation {rel} has non-key attributes")
    if len(schema.primary_key) != 2:
        raise UnsupportedArity(f"relation {rel} has arity {len(schema.primary_key)}; only binary is supported")
    if schema.has_attribute(truth_attr):
        raise MergeNameClash(f"relation {rel} already has an attribute {truth_attr}")
    a, b = (schema.attribute(k) for k in schema.primary_key)
    ia, ib = schema.index(a.name), schema.index(b.name)
    present = set()
    if a.target == b.target:
        ents = sorted(db.key_values(a.target))
        for row in inst.rows:
            x, y = row[ia], row[ib]
            if x == y:
                raise SchemaError(f"relation {rel}: reflexive pair ({x}, {y}) has no place in a strict order")
            present.add((min(x, y), max(x, y)))
        candidates = list(itertools.combinations(ents, 2))
    else:
        for row in inst.rows:
            present.add((row[ia], row[ib]))
        candidates = list(itertools.product(sorted(db.key_values(a.target)), sorted(db.key_values(b.target))))
    out_schema = RelationSchema(rel, (a, b, AttributeSpec(truth_attr, "bool")), (a.name, b.name))
    rows = tuple((x, y, (x, y) in present) for x, y in candidates)
    return RelationInstance(out_schema, rows)


def make_relation(name: str, attributes: Sequence[tuple[str, str]], pk: Sequence[str],
                  rows: Iterable[Sequence]) -> RelationInstance:
    """Convenience constructor: ``attributes`` are (name, kind-spec) pairs as in a manifest."""
    specs = tuple(_parse_kind(n, k, 0) for n, k in attributes)
    schema = RelationSchema(name, specs, tuple(pk))
    return RelationInstance(schema, tuple(tuple(r) for r in rows))
