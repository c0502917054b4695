"""Environment data model: waypoint graph, seen objects, rooms, ground truth.

Scenario documents are JSON with a closed schema; unknown keys are rejected so
hand-authored files fail loudly instead of silently dropping a typo. All-pairs
shortest-path distances are computed once at load; maps here are small
(tens of waypoints) so the table is cheap and lookups are O(1).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .affinity import normalize_label
from .search_sim import PerceptionModel, SimulationParams


class ScenarioError(Exception):
    """Base class for scenario loading problems."""


class ScenarioParseError(ScenarioError):
    """The document is not valid JSON or a field has the wrong shape."""


class ScenarioValidationError(ScenarioError):
    """The document parsed but violates an environment invariant."""


class UnknownWaypointError(ScenarioError):
    pass


@dataclass(frozen=True)
class Waypoint:
    id: str
    x: float
    y: float


@dataclass(frozen=True)
class Edge:
    a: str
    b: str
    length: float


@dataclass(frozen=True)
class SeenObject:
    instance_id: str
    label: str
    waypoint: str


@dataclass(frozen=True)
class Room:
    name: str
    waypoints: tuple[str, ...]


@dataclass(frozen=True)
class GroundTruth:
    target_label: str
    host_object: str


@dataclass(frozen=True)
class ScorerSpec:
    kind: str  # "llm" | "table"
    table: dict | None = None


@dataclass
class ScenarioConfig:
    """Everything a run needs, as declared by one scenario document."""

    env: "Environment"
    truth: GroundTruth
    params: SimulationParams
    scorer: ScorerSpec | None = None
    room_scores: dict | None = None
    embeddings: dict[str, tuple[float, ...]] | None = None


class Environment:
    """Immutable after construction; safe to share across concurrent episodes."""

    def __init__(self, waypoints: list[Waypoint], edges: list[Edge],
                 objects: list[SeenObject], rooms: list[Room]):
        self.waypoints: dict[str, Waypoint] = {}
        for wp in waypoints:
            if wp.id in self.waypoints:
                raise ScenarioValidationError(f"duplicate waypoint id {wp.id!r}")
            if not wp.id:
                raise ScenarioValidationError("waypoint with empty id")
            if not (math.isfinite(wp.x) and math.isfinite(wp.y)):
                raise ScenarioValidationError(f"waypoint {wp.id!r} has non-finite coordinates")
            self.waypoints[wp.id] = wp
        if not self.waypoints:
            raise ScenarioValidationError("environment has no waypoints")

        self.edges: list[Edge] = []
        seen_pairs: set[frozenset[str]] = set()
        for edge in edges:
            for endpoint in (edge.a, edge.b):
                if endpoint not in self.waypoints:
                    raise ScenarioValidationError(
                        f"edge ({edge.a!r}, {edge.b!r}) references unknown waypoint {endpoint!r}")
            if edge.a == edge.b:
                raise ScenarioValidationError(f"self-loop edge at waypoint {edge.a!r}")
            pair = frozenset((edge.a, edge.b))
            if pair in seen_pairs:
                raise ScenarioValidationError(f"duplicate edge between {edge.a!r} and {edge.b!r}")
            seen_pairs.add(pair)
            if not (edge.length > 0 and math.isfinite(edge.length)):
                raise ScenarioValidationError(
                    f"edge ({edge.a!r}, {edge.b!r}) has nonpositive length {edge.length}")
            self.edges.append(edge)

        self.objects: dict[str, SeenObject] = {}
        for obj in objects:
            if obj.instance_id in self.objects:
                raise ScenarioValidationError(f"duplicate object instance_id {obj.instance_id!r}")
            if not obj.label.strip():
                raise ScenarioValidationError(f"object {obj.instance_id!r} has an empty label")
            if obj.waypoint not in self.waypoints:
                raise ScenarioValidationError(
                    f"object {obj.instance_id!r} references unknown waypoint {obj.waypoint!r}")
            self.objects[obj.instance_id] = obj

        self.rooms: dict[str, Room] = {}
        for room in rooms:
            if room.name in self.rooms:
                raise ScenarioValidationError(f"duplicate room name {room.name!r}")
            if not room.waypoints:
                raise ScenarioValidationError(f"room {room.name!r} has no waypoints")
            for wid in room.waypoints:
                if wid not in self.waypoints:
                    raise ScenarioValidationError(
                        f"room {room.name!r} references unknown waypoint {wid!r}")
            self.rooms[room.name] = room

        self._check_connected()
        self._dist = self._all_pairs_shortest_paths()
        self.max_pairwise_distance = max(
            (d for row in self._dist.values() for d in row.values()), default=0.0
        )
        by_wp: dict[str, list[SeenObject]] = {wid: [] for wid in self.waypoints}
        for obj in self.objects.values():
            by_wp[obj.waypoint].append(obj)
        self._objects_by_waypoint = {
            wid: tuple(sorted(objs, key=lambda o: o.instance_id)) for wid, objs in by_wp.items()
        }

    def _adjacency(self) -> dict[str, list[tuple[str, float]]]:
        adj: dict[str, list[tuple[str, float]]] = {wid: [] for wid in self.waypoints}
        for edge in self.edges:
            adj[edge.a].append((edge.b, edge.length))
            adj[edge.b].append((edge.a, edge.length))
        return adj

    def _check_connected(self) -> None:
        ids = list(self.waypoints)
        adj = self._adjacency()
        seen = {ids[0]}
        frontier = [ids[0]]
        while frontier:
            current = frontier.pop()
            for nbr, _ in adj[current]:
                if nbr not in seen:
                    seen.add(nbr)
                    frontier.append(nbr)
        missing = sorted(set(ids) - seen)
        if missing:
            raise ScenarioValidationError(
                f"graph is disconnected: waypoint {missing[0]!r} is unreachable from {ids[0]!r}")

    def _all_pairs_shortest_paths(self) -> dict[str, dict[str, float]]:
        ids = sorted(self.waypoints)
        dist = {a: {b: math.inf for b in ids} for a in ids}
        for a in ids:
            dist[a][a] = 0.0
        for edge in self.edges:
            if edge.length < dist[edge.a][edge.b]:
                dist[edge.a][edge.b] = edge.length
                dist[edge.b][edge.a] = edge.length
        for k in ids:
            dk = dist[k]
            for i in ids:
                dik = dist[i][k]
                if not math.isfinite(dik):
                    continue
                di = dist[i]
                for j in ids:
                    alt = dik + dk[j]
                    if alt < di[j]:
                        di[j] = alt
        return dist

    # -- queries -------------------------------------------------------------

    def _require(self, waypoint_id: str) -> None:
        if waypoint_id not in self.waypoints:
            raise UnknownWaypointError(f"unknown waypoint {waypoint_id!r}")

    def distance(self, a: str, b: str) -> float:
        """Shortest-path (geodesic) distance through the graph, in meters."""
        self._require(a)
        self._require(b)
        return self._dist[a][b]

    def objects_at(self, waypoint_id: str) -> tuple[SeenObject, ...]:
        self._require(waypoint_id)
        return self._objects_by_waypoint[waypoint_id]

    def waypoint_ids(self) -> list[str]:
        return sorted(self.waypoints)

    def instance_ids(self) -> list[str]:
        return sorted(self.objects)

    def labels(self) -> list[str]:
        return sorted({normalize_label(o.label) for o in self.objects.values()})

    # -- serialization -------------------------------------------------------

    def to_document(self) -> dict:
        """Canonical JSON-ready form of the environment sections."""
        return {
            "waypoints": [
                {"id": wp.id, "x": wp.x, "y": wp.y}
                for wp in sorted(self.waypoints.values(), key=lambda w: w.id)
            ],
            "edges": [
                {"a": e.a, "b": e.b, "length": e.length}
                for e in sorted(self.edges, key=lambda e: (min(e.a, e.b), max(e.a, e.b)))
            ],
            "objects": [
                {"instance_id": o.instance_id, "label": o.label, "waypoint": o.waypoint}
                for o in sorted(self.objects.values(), key=lambda o: o.instance_id)
            ],
            "rooms": [
                {"name": r.name, "waypoints": sorted(r.waypoints)}
                for r in sorted(self.rooms.values(), key=lambda r: r.name)
            ],
        }

    def __eq__(self, other) -> bool:
        if not isinstance(other, Environment):
            return NotImplemented
        return self.to_document() == other.to_document()

    def __repr__(self) -> str:
        return (f"Environment(waypoints={len(self.waypoints)}, edges={len(self.edges)}, "
                f"objects={len(self.objects)}, rooms={len(self.rooms)})")


# -- document parsing ---------------------------------------------------------

_TOP_LEVEL_KEYS = {
    "waypoints", "edges", "objects", "rooms", "ground_truth",
    "perception", "scorer", "room_scores", "embeddings", "seed",
}


def _require_keys(section: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ScenarioParseError(f"unknown key {unknown[0]!r} in {where}")
    missing = sorted(required - set(section))
    if missing:
        raise ScenarioParseError(f"missing key {missing[0]!r} in {where}")


def _as_number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioParseError(f"{where} must be a number, got {value!r}")
    return float(value)


def parse_scenario(text: str) -> ScenarioConfig:
    """Parse and validate one scenario document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"scenario is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioParseError("scenario top level must be a JSON object")
    _require_keys(doc, _TOP_LEVEL_KEYS, {"waypoints", "objects", "ground_truth"}, "scenario")

    waypoints = []
    for item in doc.get("waypoints", []):
        _require_keys(item, {"id", "x", "y"}, {"id", "x", "y"}, "waypoints entry")
        waypoints.append(Waypoint(str(item["id"]),
                                  _as_number(item["x"], "waypoint x"),
                                  _as_number(item["y"], "waypoint y")))
    positions = {wp.id: (wp.x, wp.y) for wp in waypoints}

    edges = []
    for item in doc.get("edges", []):
        _require_keys(item, {"a", "b", "length"}, {"a", "b"}, "edges entry")
        a, b = str(item["a"]), str(item["b"])
        if "length" in item:
            length = _as_number(item["length"], "edge length")
        else:
            if a not in positions or b not in positions:
                missing = a if a not in positions else b
                raise ScenarioValidationError(
                    f"edge ({a!r}, {b!r}) references unknown waypoint {missing!r}")
            length = math.dist(positions[a], positions[b])
        edges.append(Edge(a, b, length))

    objects = []
    for item in doc.get("objects", []):
        _require_keys(item, {"instance_id", "label", "waypoint"},
                      {"instance_id", "label", "waypoint"}, "objects entry")
        objects.append(SeenObject(str(item["instance_id"]), str(item["label"]), str(item["waypoint"])))

    rooms = []
    for item in doc.get("rooms", []):
        _require_keys(item, {"name", "waypoints"}, {"name", "waypoints"}, "rooms entry")
        rooms.append(Room(str(item["name"]), tuple(str(w) for w in item["waypoints"])))

    env = Environment(waypoints, edges, objects, rooms)

    gt = doc["ground_truth"]
    _require_keys(gt, {"target_label", "host_object"}, {"target_label", "host_object"}, "ground_truth")
    truth = GroundTruth(str(gt["target_label"]), str(gt["host_object"]))
    if not truth.target_label.strip():
        raise ScenarioValidationError("ground_truth target_label is empty")
    if truth.host_object not in env.objects:
        raise ScenarioValidationError(
            f"ground_truth host_object {truth.host_object!r} is not a known object instance")

    perception = PerceptionModel()
    if "perception" in doc:
        p = doc["perception"]
        _require_keys(p, {"true_positive_rate", "false_positive_rate", "confidence_threshold"},
                      {"true_positive_rate", "false_positive_rate"}, "perception")
        try:
            perception = PerceptionModel(
                true_positive_rate=_as_number(p["true_positive_rate"], "true_positive_rate"),
                false_positive_rate=_as_number(p["false_positive_rate"], "false_positive_rate"),
                confidence_threshold=_as_number(p.get("confidence_threshold", 0.8),
                                                "confidence_threshold"),
            )
        except ValueError as exc:
            raise ScenarioValidationError(str(exc)) from exc

    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ScenarioParseError(f"seed must be an unsigned integer, got {seed!r}")
    params = SimulationParams(perception=perception, seed=seed)

    scorer = None
    if "scorer" in doc:
        s = doc["scorer"]
        _require_keys(s, {"kind", "table"}, {"kind"}, "scorer")
        kind = str(s["kind"])
        if kind not in ("llm", "table"):
            raise ScenarioValidationError(f"scorer kind must be 'llm' or 'table', got {kind!r}")
        table = s.get("table")
        if kind == "table" and not table:
            raise ScenarioValidationError("scorer kind 'table' requires a 'table' section")
        scorer = ScorerSpec(kind=kind, table=dict(table) if table else None)

    room_scores = None
    if "room_scores" in doc:
        room_scores = dict(doc["room_scores"])
        for key, value in room_scores.items():
            if key != "default" and "|" not in key:
                raise ScenarioParseError(f"room_scores key {key!r} is not 'room|target'")
            _as_number(value, f"room_scores[{key!r}]")

    embeddings = None
    if "embeddings" in doc:
        embeddings = {}
        for label, vector in doc["embeddings"].items():
            values = tuple(_as_number(v, f"embeddings[{label!r}]") for v in vector)
            if not values or all(v == 0.0 for v in values):
                raise ScenarioValidationError(f"embedding vector for {label!r} is empty or all zero")
            embeddings[normalize_label(label)] = values

    return ScenarioConfig(env=env, truth=truth, params=params, scorer=scorer,
                          room_scores=room_scores, embeddings=embeddings)


def load_scenario(text: str) -> tuple[Environment, GroundTruth, SimulationParams]:
    """Parse a scenario document into its core triple."""
    cfg = parse_scenario(text)
    return cfg.env, cfg.truth, cfg.params


def load_scenario_path(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def serialize_scenario(cfg: ScenarioConfig) -> str:
    """Canonical document for the config; reloading yields an equal Environment."""
    doc = cfg.env.to_document()
    doc["ground_truth"] = {
        "target_label": cfg.truth.target_label,
        "host_object": cfg.truth.host_object,
    }
    doc["perception"] = {
        "true_positive_rate": cfg.params.perception.true_positive_rate,
        "false_positive_rate": cfg.params.perception.false_positive_rate,
        "confidence_threshold": cfg.params.perception.confidence_threshold,
    }
    if cfg.scorer is not None:
        scorer: dict = {"kind": cfg.scorer.kind}
        if cfg.scorer.table is not None:
            scorer["table"] = cfg.scorer.table
        doc["scorer"] = scorer
    if cfg.room_scores is not None:
        doc["room_scores"] = cfg.room_scores
    if cfg.embeddings is not None:
        doc["embeddings"] = {label: list(vec) for label, vec in sorted(cfg.embeddings.items())}
    doc["seed"] = cfg.params.seed
    return json.dumps(doc, indent=2)
