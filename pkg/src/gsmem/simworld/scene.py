"""Scene definitions, the ``gsmem-scene/1`` file format and a seeded multi-room generator.

File schema (JSON, all lengths in meters, colors RGB in [0, 1])::

    {
      "format": "gsmem-scene/1",
      "name": str, "seed": int, "wall_height": float,
      "floor_color": [r, g, b],
      "rooms": [{"name": str, "min": [x, y], "max": [x, y],
                 "walls": [{"min": [x, y], "max": [x, y], "color": [r, g, b]}]}],
      "objects": [{"primitive": "box" | "sphere", "center": [x, y, z],
                   "size": [sx, sy, sz],            # full extents; sphere: diameter
                   "color": [r, g, b], "color_name": str,
                   "label": str, "semantic_tags": [str], "room": str}],
      "agent_start": {"position": [x, y], "yaw": float},
      "targets": [object index, ...]
    }

Walls are axis-aligned footprints extruded from the floor to ``wall_height``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .vocab import COLOR_NAMES, LABEL_TAGS, canonical

SCENE_FORMAT = "gsmem-scene/1"


class SceneFormatError(ValueError):
    pass


@dataclass
class Wall:
    min: tuple[float, float]
    max: tuple[float, float]
    color: tuple[float, float, float] = (0.8, 0.8, 0.78)


@dataclass
class Room:
    name: str
    min: tuple[float, float]
    max: tuple[float, float]
    walls: list[Wall] = field(default_factory=list)


@dataclass
class SceneObject:
    primitive: str
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    color: tuple[float, float, float]
    label: str
    color_name: str = ""
    semantic_tags: tuple[str, ...] = ()
    room: str = ""

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        c, s = np.asarray(self.center), np.asarray(self.size)
        return c - s / 2, c + s / 2

    @property
    def radius(self) -> float:
        return self.size[0] / 2


@dataclass
class SceneSpec:
    name: str
    seed: int
    rooms: list[Room]
    objects: list[SceneObject]
    agent_start: tuple[float, float]
    agent_yaw: float = 0.0
    wall_height: float = 2.5
    floor_color: tuple[float, float, float] = (0.55, 0.5, 0.45)
    targets: list[int] = field(default_factory=list)

    def __post_init__(self):
        for o in self.objects:
            if not o.label:
                raise SceneFormatError("object labels must be nonempty")
            if o.primitive not in ("box", "sphere"):
                raise SceneFormatError(f"unknown primitive {o.primitive!r}")
            if self.room_of(o.center[:2]) is None:
                raise SceneFormatError(f"object {o.label!r} lies outside every room")

    @property
    def walls(self) -> list[Wall]:
        return [w for r in self.rooms for w in r.walls]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.min([r.min for r in self.rooms] + [w.min for w in self.walls], axis=0)
        hi = np.max([r.max for r in self.rooms] + [w.max for w in self.walls], axis=0)
        return np.asarray(lo, float), np.asarray(hi, float)

    def room_of(self, xy) -> Room | None:
        for r in self.rooms:
            if r.min[0] <= xy[0] <= r.max[0] and r.min[1] <= xy[1] <= r.max[1]:
                return r
        return None

    def find(self, label: str) -> list[int]:
        key = canonical(label)
        return [i for i, o in enumerate(self.objects) if canonical(o.label) == key]

    def to_dict(self) -> dict:
        return {
            "format": SCENE_FORMAT,
            "name": self.name,
            "seed": self.seed,
            "wall_height": self.wall_height,
            "floor_color": list(self.floor_color),
            "rooms": [
                {
                    "name": r.name,
                    "min": list(r.min),
                    "max": list(r.max),
                    "walls": [{"min": list(w.min), "max": list(w.max), "color": list(w.color)} for w in r.walls],
                }
                for r in self.rooms
            ],
            "objects": [
                {**asdict(o), "center": list(o.center), "size": list(o.size), "color": list(o.color),
                 "semantic_tags": list(o.semantic_tags)}
                for o in self.objects
            ],
            "agent_start": {"position": list(self.agent_start), "yaw": self.agent_yaw},
            "targets": list(self.targets),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        fmt = d.get("format")
        if fmt != SCENE_FORMAT:
            raise SceneFormatError(f"unsupported scene format {fmt!r}")
        try:
            rooms = [
                Room(r["name"], tuple(r["min"]), tuple(r["max"]),
                     [Wall(tuple(w["min"]), tuple(w["max"]), tuple(w.get("color", (0.8, 0.8, 0.78)))) for w in r["walls"]])
                for r in d["rooms"]
            ]
            objects = [
                SceneObject(
                    primitive=o["primitive"],
                    center=tuple(o["center"]),
                    size=tuple(o["size"]),
                    color=tuple(o["color"]),
                    label=o["label"],
                    color_name=o.get("color_name", ""),
                    semantic_tags=tuple(o.get("semantic_tags", ())),
                    room=o.get("room", ""),
                )
                for o in d["objects"]
            ]
            return cls(
                name=d["name"],
                seed=int(d["seed"]),
                rooms=rooms,
                objects=objects,
                agent_start=tuple(d["agent_start"]["position"]),
                agent_yaw=float(d["agent_start"].get("yaw", 0.0)),
                wall_height=float(d.get("wall_height", 2.5)),
                floor_color=tuple(d.get("floor_color", (0.55, 0.5, 0.45))),
                targets=[int(t) for t in d.get("targets", [])],
            )
        except (KeyError, TypeError, IndexError) as e:
            raise SceneFormatError(f"malformed scene file: {e}") from e


def save_scene(scene: SceneSpec, path) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=1) + "\n")


def load_scene(path) -> SceneSpec:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SceneFormatError(f"{path}: not valid JSON ({e})") from e
    return SceneSpec.from_dict(d)


WALL_T = 0.1
DOOR_W = 1.0
_WALL_COLORS = [(0.82, 0.8, 0.76), (0.74, 0.78, 0.82), (0.8, 0.76, 0.7), (0.72, 0.8, 0.72)]
_OBJECT_LABELS = [l for l in LABEL_TAGS if l not in ("wall", "floor")]


def _rooms_in_row(rng, n_rooms: int, depth: float):
    """Rooms side by side along x with door gaps in the shared walls."""
    widths = rng.uniform(3.6, 4.6, size=n_rooms)
    xs = np.concatenate([[0.0], np.cumsum(widths)])
    rooms, doors = [], []
    for k in range(n_rooms):
        color = _WALL_COLORS[k % len(_WALL_COLORS)]
        x0, x1 = xs[k], xs[k + 1]
        walls = [
            Wall((x0 - WALL_T / 2, -WALL_T / 2), (x1 + WALL_T / 2, WALL_T / 2), color),
            Wall((x0 - WALL_T / 2, depth - WALL_T / 2), (x1 + WALL_T / 2, depth + WALL_T / 2), color),
        ]
        if k == 0:
            walls.append(Wall((x0 - WALL_T / 2, 0.0), (x0 + WALL_T / 2, depth), color))
        # right wall, with a door unless this is the last room
        if k == n_rooms - 1:
            walls.append(Wall((x1 - WALL_T / 2, 0.0), (x1 + WALL_T / 2, depth), color))
        else:
            d0 = rng.uniform(0.6, depth - 0.6 - DOOR_W)
            walls.append(Wall((x1 - WALL_T / 2, 0.0), (x1 + WALL_T / 2, d0), color))
            walls.append(Wall((x1 - WALL_T / 2, d0 + DOOR_W), (x1 + WALL_T / 2, depth), color))
            doors.append(np.array([x1, d0 + DOOR_W / 2]))
        rooms.append(Room(f"room{k}", (float(x0), 0.0), (float(x1), float(depth)), walls))
    return rooms, doors


def generate_scene(seed: int, n_rooms: int = 3, objects_per_room=(3, 5), n_targets: int = 1, name=None) -> SceneSpec:
    """Seeded multi-room scene with flat-colored boxes and spheres resting on the floor."""
    rng = np.random.default_rng(seed)
    depth = float(rng.uniform(3.6, 4.4))
    rooms, doors = _rooms_in_row(rng, n_rooms, depth)
    labels = [str(l) for l in rng.permutation(_OBJECT_LABELS)]
    color_names = list(COLOR_NAMES)
    objects: list[SceneObject] = []
    start = np.array([rooms[0].min[0] + 1.0, depth / 2])
    for room in rooms:
        n_obj = int(rng.integers(objects_per_room[0], objects_per_room[1] + 1))
        placed = 0
        for _ in range(200):
            if placed == n_obj:
                break
            prim = "sphere" if rng.random() < 0.3 else "box"
            if prim == "sphere":
                d = rng.uniform(0.35, 0.6)
                size = np.array([d, d, d])
            else:
                size = np.array([rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.9)])
            half = size[:2] / 2
            xy = np.array([
                rng.uniform(room.min[0] + 0.45 + half[0], room.max[0] - 0.45 - half[0]),
                rng.uniform(room.min[1] + 0.45 + half[1], room.max[1] - 0.45 - half[1]),
            ])
            if any(np.linalg.norm(xy - d) < 1.3 for d in doors):
                continue
            if np.linalg.norm(xy - start) < 1.0:
                continue
            clear = all(
                not np.all(np.abs(xy - np.asarray(o.center[:2])) < half + np.asarray(o.size[:2]) / 2 + 0.6)
                for o in objects
            )
            if not clear:
                continue
            label = labels.pop()
            cname = color_names[int(rng.integers(len(color_names)))]
            objects.append(
                SceneObject(
                    primitive=prim,
                    center=(float(xy[0]), float(xy[1]), float(size[2] / 2)),
                    size=tuple(float(s) for s in size),
                    color=COLOR_NAMES[cname],
                    label=label,
                    color_name=cname,
                    semantic_tags=LABEL_TAGS[label],
                    room=room.name,
                )
            )
            placed += 1
    targets = sorted(int(i) for i in rng.choice(len(objects), size=min(n_targets, len(objects)), replace=False))
    return SceneSpec(
        name=name or f"scene_{seed:04d}",
        seed=seed,
        rooms=rooms,
        objects=objects,
        agent_start=(float(start[0]), float(start[1])),
        agent_yaw=0.0,
        targets=targets,
    )
