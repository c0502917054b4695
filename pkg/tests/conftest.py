from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from semsearch.env_graph import Edge, Environment, Room, SeenObject, Waypoint, load_scenario_path

REPO_ROOT = Path(__file__).resolve().parents[1]
FARM_SCENARIO = REPO_ROOT / "scenarios" / "farm.json"


def make_env(waypoints, edges, objects=(), rooms=()):
    """Terse environment builder: tuples in, validated Environment out."""
    return Environment(
        [Waypoint(i, float(x), float(y)) for i, x, y in waypoints],
        [Edge(a, b, float(w)) for a, b, w in edges],
        [SeenObject(i, label, w) for i, label, w in objects],
        [Room(name, tuple(ws)) for name, ws in rooms],
    )


def random_connected_graph(rng: random.Random, max_nodes: int = 12, extra_edges: int = 3):
    """Random spanning tree plus a few extra edges; weights in [1, 10]."""
    n = rng.randint(2, max_nodes)
    ids = [f"n{i:02d}" for i in range(n)]
    waypoints = [(wid, rng.uniform(0, 20), rng.uniform(0, 20)) for wid in ids]
    edges = []
    pairs = set()
    for i in range(1, n):
        j = rng.randrange(i)
        edges.append((ids[j], ids[i], round(rng.uniform(1.0, 10.0), 3)))
        pairs.add(frozenset((ids[j], ids[i])))
    for _ in range(rng.randint(0, extra_edges)):
        i, j = rng.sample(range(n), 2)
        pair = frozenset((ids[i], ids[j]))
        if pair not in pairs:
            pairs.add(pair)
            edges.append((ids[i], ids[j], round(rng.uniform(1.0, 10.0), 3)))
    return waypoints, edges


@pytest.fixture(scope="session")
def farm_cfg():
    return load_scenario_path(FARM_SCENARIO)


@pytest.fixture(scope="session")
def farm_doc():
    return json.loads(FARM_SCENARIO.read_text())


@pytest.fixture()
def line_env():
    # w1 -- 2.0 -- w2 -- 3.0 -- w3
    return make_env(
        [("w1", 0, 0), ("w2", 2, 0), ("w3", 5, 0)],
        [("w1", "w2", 2.0), ("w2", "w3", 3.0)],
        [("obj-a", "hammer", "w1"), ("obj-b", "drill bit", "w3")],
    )
