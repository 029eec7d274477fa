"""Innovation-to-occupations ontology graph.

Five entity kinds and four typed relations. Demand drivers reach industry
titles only through workforce segments; a direct driver-to-title edge is
rejected under any relation.

Graph file (``"schema": 1``)::

    {"schema": 1,
     "entities": [{"kind": "Driver", "id": "cloud-computing", "name": ..., ...}, ...],
     "edges": [{"source": {"kind": ..., "id": ...}, "relation": "DRIVES",
                "target": {"kind": ..., "id": ...}}, ...]}

Entities are sorted by (kind, id), edges by (source, relation, target).
"""
from __future__ import annotations

import enum
import json
import re
import unicodedata
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Set, Tuple, Union

SCHEMA_VERSION = 1


class EntityKind(str, enum.Enum):
    WORKFORCE = "Workforce"
    SEGMENT = "Segment"
    INDUSTRY_TITLE = "IndustryTitle"
    DRIVER = "Driver"
    SKILL = "Skill"


class DriverKind(str, enum.Enum):
    CORE = "Core"
    TRANSFORMATION = "Transformation"


class Provenance(str, enum.Enum):
    MANUAL = "manual"
    MATCHED = "matched"


class Relation(str, enum.Enum):
    HAS_SEGMENT = "HAS_SEGMENT"
    MAPS_TO = "MAPS_TO"
    DRIVES = "DRIVES"
    REQUIRES = "REQUIRES"


SIGNATURES: Dict[Relation, Tuple[EntityKind, EntityKind]] = {
    Relation.HAS_SEGMENT: (EntityKind.WORKFORCE, EntityKind.SEGMENT),
    Relation.MAPS_TO: (EntityKind.SEGMENT, EntityKind.INDUSTRY_TITLE),
    Relation.DRIVES: (EntityKind.DRIVER, EntityKind.SEGMENT),
    Relation.REQUIRES: (EntityKind.INDUSTRY_TITLE, EntityKind.SKILL),
}


# ---------------------------------------------------------------------------
# errors


class OntologyError(Exception):
    pass


class DuplicateIdConflict(OntologyError):
    pass


class KindMismatch(OntologyError):
    pass


class MissingEndpoint(OntologyError):
    pass


class ForbiddenRelation(OntologyError):
    pass


class UnknownEntity(OntologyError, KeyError):
    pass


class FormatError(OntologyError):
    def __init__(self, message: str, location: str = "") -> None:
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


# ---------------------------------------------------------------------------
# entities


@dataclass(frozen=True, order=True)
class EntityId:
    kind: EntityKind
    local_id: str

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.local_id}"

    def to_json(self) -> Dict[str, str]:
        return {"kind": self.kind.value, "id": self.local_id}


@dataclass(frozen=True)
class OrganisationWorkforce:
    id: EntityId
    name: str


@dataclass(frozen=True)
class WorkforceSegment:
    id: EntityId
    name: str
    dimensions: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class IndustryTitle:
    id: EntityId
    canonical_name: str
    aliases: FrozenSet[str] = frozenset()

    def __post_init__(self):
        # canonical name is always part of its own alias closure
        if self.canonical_name and self.canonical_name not in self.aliases:
            object.__setattr__(self, "aliases", frozenset(self.aliases) | {self.canonical_name})
        elif not isinstance(self.aliases, frozenset):
            object.__setattr__(self, "aliases", frozenset(self.aliases))

    @property
    def name(self) -> str:
        return self.canonical_name


@dataclass(frozen=True)
class DemandDriver:
    id: EntityId
    name: str
    kind: DriverKind = DriverKind.TRANSFORMATION
    definition_text: str = ""
    provenance: Mapping[str, Provenance] = field(default_factory=dict)


@dataclass(frozen=True)
class Skill:
    id: EntityId
    name: str


Entity = Union[OrganisationWorkforce, WorkforceSegment, IndustryTitle, DemandDriver, Skill]

ENTITY_TYPES = {
    EntityKind.WORKFORCE: OrganisationWorkforce,
    EntityKind.SEGMENT: WorkforceSegment,
    EntityKind.INDUSTRY_TITLE: IndustryTitle,
    EntityKind.DRIVER: DemandDriver,
    EntityKind.SKILL: Skill,
}


@dataclass(frozen=True, order=True)
class Edge:
    source: EntityId
    relation: Relation
    target: EntityId

    def __str__(self) -> str:
        return f"{self.source} -{self.relation.value}-> {self.target}"


@dataclass(frozen=True)
class Violation:
    rule: str
    subject: str
    detail: str = ""


def slugify(name: str) -> str:
    s = unicodedata.normalize("NFKD", name).encode("ascii", "ignore").decode("ascii")
    s = re.sub(r"[^a-z0-9]+", "-", s.lower()).strip("-")
    return s or "entity"


# ---------------------------------------------------------------------------
# graph


class OntologyGraph:
    """Entities keyed by id plus a set of typed edges.

    Mutators enforce the relation table; the graph is single-writer.
    ``deserialize`` builds graphs without enforcement so that
    :meth:`validate` can report what a file actually contains.
    """

    def __init__(self) -> None:
        self.entities: Dict[EntityId, Entity] = {}
        self.edges: Set[Edge] = set()

    def __eq__(self, other) -> bool:
        if not isinstance(other, OntologyGraph):
            return NotImplemented
        return self.entities == other.entities and self.edges == other.edges

    def __len__(self) -> int:
        return len(self.entities)

    def copy(self) -> "OntologyGraph":
        g = OntologyGraph()
        g.entities = dict(self.entities)
        g.edges = set(self.edges)
        return g

    # ids -----------------------------------------------------------------

    def new_id(self, kind: EntityKind, name: str) -> EntityId:
        """Slug of ``name``, suffixed ``-2``, ``-3``... when the slug is taken."""
        base = slugify(name)
        eid = EntityId(kind, base)
        n = 2
        while eid in self.entities:
            eid = EntityId(kind, f"{base}-{n}")
            n += 1
        return eid

    def find(self, kind: EntityKind, name: str) -> Optional[Entity]:
        for eid, ent in self.entities.items():
            if eid.kind == kind and ent.name == name:
                return ent
        return None

    # mutation ------------------------------------------------------------

    def add_entity(self, entity: Entity) -> "OntologyGraph":
        existing = self.entities.get(entity.id)
        if existing is not None:
            if existing != entity:
                raise DuplicateIdConflict(f"{entity.id} already present with different content")
            return self
        if not isinstance(entity, ENTITY_TYPES[entity.id.kind]):
            raise KindMismatch(f"{entity.id} carries a {type(entity).__name__} payload")
        if not entity.name:
            raise ValueError(f"{entity.id}: name must be non-empty")
        self.entities[entity.id] = entity
        return self

    def add_edge(self, source: EntityId, relation: Relation | str, target: EntityId) -> "OntologyGraph":
        relation = Relation(relation)
        if source.kind == EntityKind.DRIVER and target.kind == EntityKind.INDUSTRY_TITLE:
            raise ForbiddenRelation(
                f"{source} -> {target}: drivers reach industry titles only via segments"
            )
        for end in (source, target):
            if end not in self.entities:
                raise MissingEndpoint(f"{end} is not in the graph")
        want = SIGNATURES[relation]
        if (source.kind, target.kind) != want:
            raise KindMismatch(
                f"{relation.value} expects {want[0].value} -> {want[1].value}, "
                f"got {source.kind.value} -> {target.kind.value}"
            )
        self.edges.add(Edge(source, relation, target))
        return self

    # queries -------------------------------------------------------------

    def _require(self, eid: EntityId, kind: EntityKind) -> None:
        if eid.kind != kind or eid not in self.entities:
            raise UnknownEntity(str(eid))

    def _out(self, source: EntityId, relation: Relation) -> List[EntityId]:
        return [e.target for e in self.edges if e.source == source and e.relation == relation]

    def segments_for_driver(self, driver_id: EntityId) -> List[WorkforceSegment]:
        self._require(driver_id, EntityKind.DRIVER)
        ids = sorted(set(self._out(driver_id, Relation.DRIVES)))
        return [self.entities[i] for i in ids if i.kind == EntityKind.SEGMENT]

    def titles_for_driver(self, driver_id: EntityId) -> List[IndustryTitle]:
        """Industry titles two hops away (DRIVES then MAPS_TO), sorted by name."""
        self._require(driver_id, EntityKind.DRIVER)
        segs = {t for t in self._out(driver_id, Relation.DRIVES) if t.kind == EntityKind.SEGMENT}
        found = {
            e.target
            for e in self.edges
            if e.relation == Relation.MAPS_TO and e.source in segs and e.target.kind == EntityKind.INDUSTRY_TITLE
        }
        titles = [self.entities[t] for t in found if t in self.entities]
        return sorted(titles, key=lambda t: (t.canonical_name, t.id))

    def skills_for_driver(self, driver_id: EntityId) -> List[Skill]:
        titles = {t.id for t in self.titles_for_driver(driver_id)}
        found = {
            e.target
            for e in self.edges
            if e.relation == Relation.REQUIRES and e.source in titles and e.target.kind == EntityKind.SKILL
        }
        skills = [self.entities[s] for s in found if s in self.entities]
        return sorted(skills, key=lambda s: (s.name, s.id))

    # validation ----------------------------------------------------------

    def validate(self) -> List[Violation]:
        out: List[Violation] = []
        for eid in sorted(self.entities):
            ent = self.entities[eid]
            if ent.id != eid:
                out.append(Violation("IdMismatch", str(eid), f"payload id is {ent.id}"))
            if not isinstance(ent, ENTITY_TYPES[eid.kind]):
                out.append(Violation("KindMismatch", str(eid), f"payload is {type(ent).__name__}"))
                continue
            if not ent.name:
                out.append(Violation("EmptyName", str(eid)))
            if isinstance(ent, IndustryTitle) and ent.canonical_name not in ent.aliases:
                out.append(Violation("AliasClosure", str(eid), "canonical name missing from aliases"))
            if (
                isinstance(ent, DemandDriver)
                and ent.kind == DriverKind.TRANSFORMATION
                and not ent.definition_text.strip()
            ):
                out.append(Violation("EmptyDefinition", str(eid), "transformation driver has no definition text"))
        for edge in sorted(self.edges):
            s, t = edge.source, edge.target
            if s.kind == EntityKind.DRIVER and t.kind == EntityKind.INDUSTRY_TITLE:
                out.append(Violation("ForbiddenRelation", str(edge)))
                continue
            missing = [str(x) for x in (s, t) if x not in self.entities]
            if missing:
                out.append(Violation("MissingEndpoint", str(edge), ", ".join(missing)))
            if (s.kind, t.kind) != SIGNATURES[edge.relation]:
                out.append(Violation("KindMismatch", str(edge)))
        return out

    # serialization -------------------------------------------------------

    def to_json(self) -> Dict:
        return {
            "schema": SCHEMA_VERSION,
            "entities": [_entity_to_json(self.entities[k]) for k in sorted(self.entities)],
            "edges": [
                {"source": e.source.to_json(), "relation": e.relation.value, "target": e.target.to_json()}
                for e in sorted(self.edges)
            ],
        }

    def serialize(self) -> bytes:
        return (json.dumps(self.to_json(), indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")

    @classmethod
    def deserialize(cls, data: bytes | str) -> "OntologyGraph":
        try:
            doc = json.loads(data)
        except json.JSONDecodeError as exc:
            raise FormatError(exc.msg, f"line {exc.lineno} column {exc.colno}") from exc
        except UnicodeDecodeError as exc:
            raise FormatError("not UTF-8", f"byte {exc.start}") from exc
        if not isinstance(doc, dict):
            raise FormatError("top level must be an object", "$")
        if doc.get("schema") != SCHEMA_VERSION:
            raise FormatError(f"unsupported schema {doc.get('schema')!r}", "$.schema")
        g = cls()
        ents = _get(doc, "entities", list, "$")
        for i, obj in enumerate(ents):
            ent = _entity_from_json(obj, f"$.entities[{i}]")
            if ent.id in g.entities:
                raise FormatError(f"duplicate entity {ent.id}", f"$.entities[{i}]")
            g.entities[ent.id] = ent
        for i, obj in enumerate(_get(doc, "edges", list, "$")):
            loc = f"$.edges[{i}]"
            if not isinstance(obj, dict):
                raise FormatError("edge must be an object", loc)
            try:
                rel = Relation(_get(obj, "relation", str, loc))
            except ValueError as exc:
                raise FormatError(str(exc), f"{loc}.relation") from exc
            g.edges.add(
                Edge(_id_from_json(obj.get("source"), f"{loc}.source"), rel,
                     _id_from_json(obj.get("target"), f"{loc}.target"))
            )
        return g


def titles_for_driver(graph: OntologyGraph, driver_id: EntityId) -> List[IndustryTitle]:
    return graph.titles_for_driver(driver_id)


def skills_for_driver(graph: OntologyGraph, driver_id: EntityId) -> List[Skill]:
    return graph.skills_for_driver(driver_id)


def validate_graph(graph: OntologyGraph) -> List[Violation]:
    return graph.validate()


# ---------------------------------------------------------------------------
# json helpers


def _get(obj: Mapping, key: str, typ, loc: str):
    if key not in obj:
        raise FormatError(f"missing key {key!r}", loc)
    val = obj[key]
    if not isinstance(val, typ):
        raise FormatError(f"{key!r} must be {typ.__name__}", f"{loc}.{key}")
    return val


def _id_from_json(obj, loc: str) -> EntityId:
    if not isinstance(obj, dict):
        raise FormatError("entity reference must be an object", loc)
    try:
        kind = EntityKind(_get(obj, "kind", str, loc))
    except ValueError as exc:
        raise FormatError(str(exc), f"{loc}.kind") from exc
    return EntityId(kind, _get(obj, "id", str, loc))


def _entity_to_json(ent: Entity) -> Dict:
    d: Dict = ent.id.to_json()
    if isinstance(ent, IndustryTitle):
        d["canonical_name"] = ent.canonical_name
        d["aliases"] = sorted(ent.aliases)
    else:
        d["name"] = ent.name
    if isinstance(ent, WorkforceSegment):
        d["dimensions"] = dict(sorted(ent.dimensions.items()))
    if isinstance(ent, DemandDriver):
        d["driver_kind"] = ent.kind.value
        d["definition_text"] = ent.definition_text
        d["provenance"] = {k: Provenance(v).value for k, v in sorted(ent.provenance.items())}
    return d


def _entity_from_json(obj, loc: str) -> Entity:
    if not isinstance(obj, dict):
        raise FormatError("entity must be an object", loc)
    eid = _id_from_json(obj, loc)
    try:
        if eid.kind == EntityKind.INDUSTRY_TITLE:
            # built without __post_init__ repair so validate() sees the file as written
            ent = IndustryTitle.__new__(IndustryTitle)
            object.__setattr__(ent, "id", eid)
            object.__setattr__(ent, "canonical_name", _get(obj, "canonical_name", str, loc))
            object.__setattr__(ent, "aliases", frozenset(_get(obj, "aliases", list, loc)))
            return ent
        name = _get(obj, "name", str, loc)
        if eid.kind == EntityKind.WORKFORCE:
            return OrganisationWorkforce(eid, name)
        if eid.kind == EntityKind.SEGMENT:
            return WorkforceSegment(eid, name, dict(_get(obj, "dimensions", dict, loc)))
        if eid.kind == EntityKind.SKILL:
            return Skill(eid, name)
        prov = {k: Provenance(v) for k, v in _get(obj, "provenance", dict, loc).items()}
        return DemandDriver(
            eid, name, DriverKind(_get(obj, "driver_kind", str, loc)),
            _get(obj, "definition_text", str, loc), prov,
        )
    except ValueError as exc:
        raise FormatError(str(exc), loc) from exc


def iter_entities(graph: OntologyGraph, kind: EntityKind) -> Iterable[Entity]:
    return (graph.entities[k] for k in sorted(graph.entities) if k.kind == kind)
