import struct

import numpy as np
import pytest

from gsmem.memory import SpatialMemory
from gsmem.raster import rasterize
from gsmem.simworld import SyntheticEmbedder, World, generate_scene
from gsmem.snapshot import MAGIC, VERSION, SnapshotError, load_snapshot, read_snapshot, save_snapshot


@pytest.fixture(scope="module")
def memory():
    scene = generate_scene(5, n_rooms=1)
    world = World(scene)
    mem = SpatialMemory(world.grid)
    frames = world.observe()
    dets = [d for k, f in enumerate(frames) for d in world.detect(f, k)]
    mem.update(frames, dets, SyntheticEmbedder(scene))
    mem.mark_visited(world.cell)
    return mem, world


def test_round_trip_is_exact(memory, tmp_path):
    mem, world = memory
    p = tmp_path / "m.gsm"
    save_snapshot(mem, p, config={"seed": 3}, extra={"note": "x"})
    back, manifest = load_snapshot(p)
    assert manifest["config"] == {"seed": 3} and manifest["extra"] == {"note": "x"}
    for k, v in mem.field.params().items():
        assert np.array_equal(getattr(back.field, k), v)
    assert np.array_equal(back.field.features, mem.field.features)
    assert np.array_equal(back.field.feature_weights, mem.field.feature_weights)
    assert np.array_equal(back.tsdf.values, mem.tsdf.values)
    assert np.array_equal(back.occupancy().states, mem.occupancy().states)
    assert np.array_equal(back.visited, mem.visited)
    assert [(n.id, n.label, n.observation_count) for n in back.graph.nodes] == \
        [(n.id, n.label, n.observation_count) for n in mem.graph.nodes]
    cam = world.camera()
    a = rasterize(mem.field, cam, ("color", "depth", "alpha", "feature"))
    b = rasterize(back.field, cam, ("color", "depth", "alpha", "feature"))
    for ch in ("color", "depth", "alpha", "feature"):
        assert np.array_equal(getattr(a, ch), getattr(b, ch))


def test_images_are_optional(memory, tmp_path):
    mem, _ = memory
    save_snapshot(mem, tmp_path / "a.gsm")
    save_snapshot(mem, tmp_path / "b.gsm", include_images=True)
    a, _ = load_snapshot(tmp_path / "a.gsm")
    b, _ = load_snapshot(tmp_path / "b.gsm")
    assert a.keyframes == {} and a.mapper.state.last_keyframe_id == mem.mapper.state.last_keyframe_id
    assert sorted(b.keyframes) == sorted(mem.keyframes)
    for kid, kf in mem.keyframes.items():
        assert np.array_equal(b.keyframes[kid].color, kf.color)
        assert np.array_equal(b.keyframes[kid].labels, kf.labels)
    assert list(b.mapper.state.window) == list(mem.mapper.state.window)


def test_layout_is_little_endian_with_text_manifest(memory, tmp_path):
    mem, _ = memory
    p = tmp_path / "m.gsm"
    save_snapshot(mem, p)
    data = p.read_bytes()
    assert data[:8] == MAGIC
    version, mlen = struct.unpack("<II", data[8:16])
    assert version == VERSION
    manifest, arrays = read_snapshot(p)
    assert data[16 : 16 + mlen].decode("utf-8").startswith("{")
    assert all(e["dtype"].startswith(("<", "|")) for e in manifest["blobs"])
    assert arrays["field.positions"].shape == (len(mem.field), 3)


def test_deterministic_bytes(memory, tmp_path):
    mem, _ = memory
    save_snapshot(mem, tmp_path / "a.gsm")
    save_snapshot(mem, tmp_path / "b.gsm")
    assert (tmp_path / "a.gsm").read_bytes() == (tmp_path / "b.gsm").read_bytes()


def test_corrupt_and_version_errors(memory, tmp_path):
    mem, _ = memory
    p = tmp_path / "m.gsm"
    save_snapshot(mem, p)
    data = p.read_bytes()
    cases = {
        "garbage": b"hello world, not a snapshot",
        "truncated": data[: len(data) // 2],
        "manifest": data[:16] + b"\xff" * (len(data) - 16),
    }
    for name, blob in cases.items():
        q = tmp_path / f"{name}.gsm"
        q.write_bytes(blob)
        with pytest.raises(SnapshotError) as e:
            load_snapshot(q)
        assert e.value.kind == "corrupt", name
    newer = data[:8] + struct.pack("<I", VERSION + 1) + data[12:]
    q = tmp_path / "newer.gsm"
    q.write_bytes(newer)
    with pytest.raises(SnapshotError) as e:
        load_snapshot(q)
    assert e.value.kind == "version"
