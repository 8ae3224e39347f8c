import json

import numpy as np
import pytest

from motionssl.scene import (DataError, MalformedPayloadError, ShapeMismatchError,
                             VersionMismatchError, deserialize_scene, generate_corpus,
                             generate_synthetic_scene, get_dialect, last_valid_index,
                             read_corpus, serialize_scene, to_agent_centric_views,
                             to_scene_centric, transform_scene, validate_scene,
                             view_to_scene_points, wrap_angle)


def test_dialects():
    w = get_dialect("W")
    a = get_dialect("dialect-A")
    assert (w.T_past, w.T_future, w.has_traffic_lights) == (11, 16, True)
    assert (a.T_past, a.T_future, a.has_traffic_lights) == (8, 12, False)
    assert w.lane_class_count == a.lane_class_count == 4
    with pytest.raises(KeyError):
        get_dialect("dialect-X")


def test_wrap_angle():
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(np.pi) == pytest.approx(np.pi)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)  # half-open interval
    assert wrap_angle(3 * np.pi) == pytest.approx(np.pi)
    theta = np.linspace(-10, 10, 201)
    wrapped = wrap_angle(theta)
    assert np.all(wrapped > -np.pi) and np.all(wrapped <= np.pi)
    np.testing.assert_allclose(np.cos(wrapped), np.cos(theta), atol=1e-12)
    np.testing.assert_allclose(np.sin(wrapped), np.sin(theta), atol=1e-12)


def test_last_valid_index():
    assert last_valid_index(np.array([True, False, True, False])) == 2
    assert last_valid_index(np.array([False, False])) is None


@pytest.mark.parametrize("dialect_name,counts", [("W", (4, 5, 2)), ("A", (3, 4, 0))])
def test_generated_scenes_validate(dialect_name, counts):
    dialect = get_dialect(dialect_name)
    for seed in range(20):
        scene = generate_synthetic_scene(seed, dialect, counts=counts, lane_points=8)
        assert validate_scene(scene) == []


def test_generation_deterministic(dialect_w):
    a = generate_synthetic_scene(7, dialect_w, counts=(3, 4, 1))
    b = generate_synthetic_scene(7, dialect_w, counts=(3, 4, 1))
    assert serialize_scene(a) == serialize_scene(b)
    c = generate_synthetic_scene(8, dialect_w, counts=(3, 4, 1))
    assert serialize_scene(a) != serialize_scene(c)


def test_lightless_dialect_has_no_lights(scenes_a):
    assert all(len(s.lights) == 0 for s in scenes_a)


def test_serialization_round_trip(scenes_w, scenes_a):
    for scene in scenes_w + scenes_a:
        blob = serialize_scene(scene)
        back = deserialize_scene(blob)
        assert serialize_scene(back) == blob
        assert back.scene_id == scene.scene_id
        assert back.dialect == scene.dialect
        np.testing.assert_array_equal(back.futures, scene.futures)
        for orig, copy in zip(scene.agents, back.agents):
            np.testing.assert_array_equal(orig.position, copy.position)
            np.testing.assert_array_equal(orig.valid, copy.valid)


def test_deserialize_rejects_garbage(scenes_w):
    with pytest.raises(MalformedPayloadError):
        deserialize_scene(b"not json at all {")
    blob = json.loads(serialize_scene(scenes_w[0]))
    wrong_version = dict(blob, version=99)
    with pytest.raises(VersionMismatchError):
        deserialize_scene(json.dumps(wrong_version).encode())
    wrong_format = dict(blob, format="something-else")
    with pytest.raises(MalformedPayloadError):
        deserialize_scene(json.dumps(wrong_format).encode())
    bad_shape = json.loads(serialize_scene(scenes_w[0]))
    bad_shape["agents"][0]["position"]["shape"] = [2, 2]
    with pytest.raises(ShapeMismatchError):
        deserialize_scene(json.dumps(bad_shape).encode())


def test_validate_catches_kinematic_breaks(scenes_w):
    scene = scenes_w[0]
    broken = deserialize_scene(serialize_scene(scene))
    ag = broken.agents[0]
    t = last_valid_index(ag.valid)
    ag.position[t] += 50.0  # teleport: position no longer integrates velocity
    assert any("position" in v for v in validate_scene(broken))

    broken2 = deserialize_scene(serialize_scene(scene))
    broken2.agents[0].class_onehot[:] = 1.0
    assert any("onehot" in v or "one-hot" in v for v in validate_scene(broken2))


def test_transform_rigid_and_invertible(scenes_w):
    scene = scenes_w[1]
    moved = transform_scene(scene, 0.7, (5.0, -3.0))
    assert validate_scene(moved) == []
    back = transform_scene(moved, -0.7, -(np.array([[np.cos(-0.7), -np.sin(-0.7)],
                                                    [np.sin(-0.7), np.cos(-0.7)]]) @ [5.0, -3.0]))
    for orig, rt in zip(scene.agents, back.agents):
        np.testing.assert_allclose(rt.position, orig.position, atol=1e-9)
        np.testing.assert_allclose(rt.vel, orig.vel, atol=1e-9)
    np.testing.assert_allclose(back.futures, scene.futures, atol=1e-9)


def test_scene_centric_centers_agents(scenes_w):
    centered = to_scene_centric(scenes_w[2])
    lasts = [ag.position[last_valid_index(ag.valid)] for ag in centered.agents]
    np.testing.assert_allclose(np.mean(lasts, axis=0), 0.0, atol=1e-9)
    assert validate_scene(centered) == []


def test_agent_centric_views(scenes_w):
    scene = scenes_w[3]
    ids = [ag.agent_id for ag in scene.agents]
    views = to_agent_centric_views(scene, ids)
    assert len(views) == len(ids)
    for view, fid in zip(views, ids):
        assert validate_scene(view.scene) == []
        focal = next(a for a in view.scene.agents if a.agent_id == fid)
        t = last_valid_index(focal.valid)
        np.testing.assert_allclose(focal.position[t], 0.0, atol=1e-9)
        assert abs(wrap_angle(focal.yaw[t])) < 1e-9
        # pose maps view-frame points back to the source frame
        orig = next(a for a in scene.agents if a.agent_id == fid)
        keep = orig.valid.astype(bool)
        recovered = view_to_scene_points(view, focal.position[keep])
        np.testing.assert_allclose(recovered, orig.position[keep], atol=1e-9)
    with pytest.raises(ValueError):
        to_agent_centric_views(scene, [999])


def test_corpus_round_trip(tmp_path, dialect_w):
    out = tmp_path / "corpus"
    manifest = generate_corpus(out, dialect_w, n_scenes=5, base_seed=3,
                               counts=(3, 4, 1), lane_points=6)
    assert len(manifest["scenes"]) == 5
    scenes, read_back = read_corpus(out)
    assert len(scenes) == 5
    assert read_back["scenes"] == manifest["scenes"]
    # regeneration is bit-identical
    files_before = {p.name: p.read_bytes() for p in out.iterdir()}
    generate_corpus(tmp_path / "again", dialect_w, n_scenes=5, base_seed=3,
                    counts=(3, 4, 1), lane_points=6)
    files_after = {p.name: p.read_bytes() for p in (tmp_path / "again").iterdir()}
    assert files_before == files_after


def test_corpus_refuses_overwrite(tmp_path, dialect_w):
    out = tmp_path / "corpus"
    generate_corpus(out, dialect_w, n_scenes=2, base_seed=0, counts=(2, 3, 1))
    with pytest.raises(DataError):
        generate_corpus(out, dialect_w, n_scenes=2, base_seed=0, counts=(2, 3, 1))
    generate_corpus(out, dialect_w, n_scenes=2, base_seed=0, counts=(2, 3, 1),
                    overwrite=True)


def test_corpus_rejects_mixed_dialect(tmp_path, dialect_w, dialect_a):
    out = tmp_path / "corpus"
    generate_corpus(out, dialect_w, n_scenes=2, base_seed=0, counts=(2, 3, 1))
    rogue = generate_synthetic_scene(0, dialect_a, counts=(2, 3, 0))
    (out / "scene-00001.json").write_bytes(serialize_scene(rogue))
    with pytest.raises(DataError):
        read_corpus(out)


def test_futures_follow_history(scenes_w):
    # first valid future step continues from the last valid past step
    for scene in scenes_w:
        for i, ag in enumerate(scene.agents):
            t = last_valid_index(ag.valid)
            valid_fut = np.nonzero(scene.future_valid[i])[0]
            if t is None or valid_fut.size == 0 or valid_fut[0] != 0:
                continue
            step = scene.futures[i, 0] - ag.position[t]
            expected_speed = np.linalg.norm(ag.vel[t]) * scene.dt
            assert np.linalg.norm(step) < max(4 * expected_speed + 1.0, 2.0)
