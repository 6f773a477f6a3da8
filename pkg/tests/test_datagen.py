import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcvad import datagen as d


def centroid(frame):
    weight = np.abs(frame - d.BACKGROUND).sum(axis=0)
    ys, xs = np.indices(weight.shape)
    return np.array([(xs * weight).sum(), (ys * weight).sum()]) / weight.sum()


def single_sprite(velocity, n_frames=6, tag="none", start=(20.0, 32.0), shape="square"):
    spec = d.SpriteSpec(shape, 10, (0.9, 0.3, 0.25), velocity, tag)
    return d.scene_from_specs([spec], [start], n_frames)


def test_constant_velocity_centroid_moves_one_px_per_frame():
    scene = single_sprite((1.0, 0.0))
    xs = [centroid(f)[0] for f in scene.frames]
    np.testing.assert_allclose(np.diff(xs), 1.0, atol=1e-9)


def test_generate_scene_is_deterministic():
    cfg = d.SceneConfig(n_frames=12, n_sprites=2)
    a = d.generate_scene(cfg, 7)
    b = d.generate_scene(cfg, 7)
    assert np.array_equal(a.frames, b.frames)
    assert not np.array_equal(a.frames, d.generate_scene(cfg, 8).frames)


def test_fast_sprite_moves_three_times_as_far():
    normal = single_sprite((1.0, 0.5), n_frames=6, start=(12.0, 20.0))
    fast = single_sprite((3.0, 1.5), n_frames=6, tag="fast", start=(12.0, 20.0))
    step_n = np.diff([centroid(f) for f in normal.frames], axis=0)
    step_f = np.diff([centroid(f) for f in fast.frames], axis=0)
    np.testing.assert_allclose(step_f, 3 * step_n, atol=0.05)


def test_train_split_rejects_anomalies():
    with pytest.raises(ValueError):
        d.SceneConfig(split="train", anomaly_rate=0.1)
    with pytest.raises(ValueError):
        d.SceneConfig(n_frames=5)


def test_sprite_spec_validation():
    with pytest.raises(ValueError):
        d.SpriteSpec("hexagon", 10, (0.5, 0.5, 0.5), (1, 0))
    with pytest.raises(ValueError):
        d.SpriteSpec("square", 30, (0.5, 0.5, 0.5), (1, 0))


def test_generated_anomalies_follow_their_tags():
    for kind in d.ANOMALY_KINDS:
        cfg = d.SceneConfig(n_frames=32, split="test", anomaly_rate=0.2, anomaly_kinds=(kind,))
        scene = d.generate_scene(cfg, 3)
        (track,) = [t for t in scene.tracks if t.spec.anomaly_tag != "none"]
        assert track.spec.anomaly_tag == kind
        steps = np.diff(track.positions, axis=0)
        if kind == "fast":
            speed = np.linalg.norm(steps, axis=1)
            assert np.all(speed >= 3 * 0.9 - 1e-9)
        elif kind == "reverse":
            dots = steps @ steps[0]
            assert dots[0] > 0 and dots[-1] < 0
        else:
            assert track.spec.shape_kind not in d.TRAIN_SHAPES
        for t in scene.tracks:
            if t.spec.anomaly_tag == "none":
                assert t.spec.shape_kind in d.TRAIN_SHAPES


def test_six_frame_track_gives_two_cubes():
    scene = single_sprite((1.0, 0.0), n_frames=6, start=(24.0, 32.0))
    cubes, skipped = d.extract_cubes(scene.tracks, scene.frames)
    assert [c.frame_index for c in cubes] == [4, 5]
    assert skipped == {"short_tracks": 0, "out_of_bounds": 0}
    assert cubes[0].frames.shape == (5, 3, 32, 32)
    np.testing.assert_array_equal(cubes[1].frames[:4], scene.frames[1:5, :, 16:48, 13:45])


def test_static_sprite_cube_frames_identical():
    scene = single_sprite((0.0, 0.0), n_frames=5, start=(32.0, 32.0))
    (cube,), _ = d.extract_cubes(scene.tracks, scene.frames)
    for frame in cube.frames[1:]:
        np.testing.assert_array_equal(frame, cube.frames[0])


def test_short_and_out_of_bounds_tracks_are_counted():
    short = single_sprite((1.0, 0.0), n_frames=4, start=(30.0, 32.0))
    _, skipped = d.extract_cubes(short.tracks, short.frames)
    assert skipped["short_tracks"] == 1
    edge = single_sprite((1.0, 0.0), n_frames=6, start=(4.0, 32.0))
    cubes, skipped = d.extract_cubes(edge.tracks, edge.frames)
    assert cubes == [] and skipped["out_of_bounds"] == 2


def test_cube_crop_centred_on_last_frame():
    scene = single_sprite((1.0, 0.0), n_frames=5, start=(22.0, 30.0))
    (cube,), _ = d.extract_cubes(scene.tracks, scene.frames)
    assert cube.origin == (30 - 16, 26 - 16)
    c = centroid(cube.frames[4])
    np.testing.assert_allclose(c, [16.0, 16.0], atol=1e-6)


def test_flow_static_sprite_is_zero():
    scene = single_sprite((0.0, 0.0), n_frames=6, start=(32.0, 32.0))
    flow = d.compute_flow(scene, scene.tracks[0], 3)
    assert flow.values.shape == (2, 32, 32)
    assert not flow.values.any()


def test_flow_fills_sprite_support_with_velocity():
    scene = single_sprite((2.0, 0.0), n_frames=6, start=(20.0, 32.0))
    track = scene.tracks[0]
    flow = d.compute_flow(scene, track, 4)
    r, c = d.crop_origin(track, 4)
    alpha = d.sprite_alpha("square", 10, track.position(4))[r : r + 32, c : c + 32]
    on = alpha >= 0.5
    assert on.sum() > 0
    np.testing.assert_array_equal(flow.values[0][on], 2.0)
    np.testing.assert_array_equal(flow.values[1][on], 0.0)
    assert not flow.values[:, ~on].any()


def test_frame_diff_identical_frames_is_zero():
    scene = single_sprite((0.0, 0.0), n_frames=6, start=(32.0, 32.0))
    flow = d.compute_flow(scene, scene.tracks[0], 2, mode="frame_diff")
    assert not flow.values.any()


def test_flow_needs_previous_frame():
    scene = single_sprite((1.0, 0.0), n_frames=6, start=(24.0, 32.0))
    with pytest.raises(ValueError):
        d.compute_flow(scene, scene.tracks[0], 0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_generated_data_invariants(seed):
    cfg = d.SceneConfig(n_frames=12, n_sprites=2, split="test", anomaly_rate=0.25)
    scene = d.generate_scene(cfg, seed)
    assert scene.frames.min() >= 0.0 and scene.frames.max() <= 1.0
    cubes, _ = d.extract_cubes(scene.tracks, scene.frames, "v")
    tracks = {t.track_id: t for t in scene.tracks}
    for cube in cubes[:10]:
        track = tracks[cube.track_id]
        r, c = cube.origin
        # all five crops come from the same window
        np.testing.assert_array_equal(
            cube.frames, scene.frames[cube.frame_index - 4 : cube.frame_index + 1, :, r : r + 32, c : c + 32]
        )
        # ground-truth flow integrates to the track displacement
        flow = d.compute_flow(scene, track, cube.frame_index)
        visible = d.window_mask(scene.window)
        alpha = visible * d.sprite_alpha(track.spec.shape_kind, track.spec.size_px, track.position(cube.frame_index))
        on = (alpha >= 0.5)[r : r + 32, c : c + 32]
        others = np.zeros_like(on)
        for o in scene.tracks:
            if o is not track and o.alive(cube.frame_index):
                a = visible * d.sprite_alpha(o.spec.shape_kind, o.spec.size_px, o.position(cube.frame_index))
                others |= (a >= 0.5)[r : r + 32, c : c + 32]
        if on.sum() and not (on & others).any():
            mean_flow = flow.values[:, on].mean(axis=1)
            step = track.displacement(cube.frame_index)
            assert np.all(np.abs(mean_flow - step) < 0.5)


@pytest.mark.parametrize("split,rate", [("train", 0.0), ("test", 0.2)])
def test_sprites_enter_and_leave_through_the_edges(split, rate):
    cfg = d.SceneConfig(n_frames=32, split=split, anomaly_rate=rate)
    for seed in range(3):
        scene = d.generate_scene(cfg, seed)
        for track in scene.tracks:
            half = track.spec.size_px / 2
            x_first, x_last = track.positions[0, 0], track.positions[-1, 0]
            assert track.start == 0 or x_first - half <= 0 or x_first + half >= d.CANVAS
            assert track.stop == cfg.n_frames or x_last + half >= d.CANVAS or x_last - half <= 0


def test_sprites_are_hidden_outside_the_window():
    cfg = d.SceneConfig(n_frames=20, split="train")
    scene = d.generate_scene(cfg, 4)
    lo, hi = scene.window
    assert (lo, hi) == (10, 54)
    background = d.scene_background(cfg.n_sprites).astype(np.float32)
    for t in range(cfg.n_frames):
        np.testing.assert_array_equal(scene.frames[t, :, :, :lo], background[:, :, :lo])
        np.testing.assert_array_equal(scene.frames[t, :, :, hi:], background[:, :, hi:])


def test_train_split_contains_only_normal_cubes():
    cubes, flows, labels = d.build_split("train", 2, 5, n_frames=12)
    assert {c.label for c in cubes} == {0}
    assert all(not any(v) for v in labels.values())
    assert len(cubes) == len(flows)


def test_test_split_anomaly_fraction_close_to_rate():
    rate = 0.2
    _, _, labels = d.build_split("test", 9, 11, anomaly_rate=rate)
    evaluable = [l[d.CUBE_LEN - 1 :] for l in labels.values()]
    fraction = sum(map(sum, evaluable)) / sum(map(len, evaluable))
    assert abs(fraction - rate) <= 0.1 * rate


# ------------------------------------------------------------------ on disk


@pytest.fixture
def small_dataset():
    cubes, flows, labels = d.build_split("test", 1, 3, n_frames=10, anomaly_rate=0.2)
    cubes, flows = cubes[:10], flows[:10]
    return cubes, flows, d.make_manifest("test", cubes, labels)


def test_round_trip_is_bit_exact(tmp_path, small_dataset):
    cubes, flows, manifest = small_dataset
    d.write_dataset(cubes, flows, manifest, tmp_path)
    ds = d.read_dataset(tmp_path)
    assert ds.manifest == manifest
    arr_c, arr_f = ds.arrays()
    for i, (cube, flow) in enumerate(zip(cubes, flows)):
        assert np.array_equal(arr_c[i], cube.frames)
        assert np.array_equal(ds.flow(i).values, flow.values)
        assert ds.cube(i).track_id == cube.track_id


def test_binary_layout(tmp_path):
    arr = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    d.write_array(tmp_path / "a.bin", arr)
    raw = (tmp_path / "a.bin").read_bytes()
    assert raw[:4] == b"MCVD" and raw[4] == 3 and raw[5:8] == b"\0\0\0"
    assert np.frombuffer(raw[8:24], "<u4").tolist() == [2, 3, 4, 0]
    assert np.array_equal(np.frombuffer(raw[24:], "<f4"), arr.ravel())


def test_refuses_overwrite_without_force(tmp_path, small_dataset):
    cubes, flows, manifest = small_dataset
    d.write_dataset(cubes, flows, manifest, tmp_path)
    with pytest.raises(FileExistsError):
        d.write_dataset(cubes, flows, manifest, tmp_path)
    d.write_dataset(cubes, flows, manifest, tmp_path, force=True)


def test_missing_file_is_named(tmp_path, small_dataset):
    cubes, flows, manifest = small_dataset
    d.write_dataset(cubes, flows, manifest, tmp_path)
    victim = tmp_path / manifest.entries[3]["flow"]
    victim.unlink()
    with pytest.raises(d.DatasetError, match=str(victim.name)):
        d.read_dataset(tmp_path)


def test_corrupt_file_reports_shape(tmp_path, small_dataset):
    cubes, flows, manifest = small_dataset
    d.write_dataset(cubes, flows, manifest, tmp_path)
    d.write_array(tmp_path / manifest.entries[0]["cube"], np.zeros((5, 3, 16, 16)))
    ds = d.read_dataset(tmp_path)
    with pytest.raises(d.DatasetError, match="shape mismatch"):
        ds.cube(0)


def test_train_manifest_with_abnormal_label_is_rejected(tmp_path, small_dataset):
    cubes, flows, manifest = small_dataset
    manifest.split = "train"
    manifest.frame_labels = {}
    manifest.entries[0]["label"] = 1
    with pytest.raises(d.DatasetError):
        d.write_dataset(cubes, flows, manifest, tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps(manifest.to_json()))
    with pytest.raises(d.DatasetError):
        d.read_dataset(tmp_path)


@settings(max_examples=25, deadline=None)
@given(
    st.floats(-3.0, 3.0), st.floats(-3.0, 3.0), st.floats(26.0, 38.0), st.floats(26.0, 38.0),
    st.sampled_from(d.SHAPES),
)
def test_flow_matches_rendered_centroid_motion(vx, vy, x0, y0, shape):
    scene = single_sprite((vx, vy), n_frames=3, start=(x0, y0), shape=shape)
    track = scene.tracks[0]
    flow = d.compute_flow(scene, track, 2)
    r, c = d.crop_origin(track, 2)
    alpha = d.sprite_alpha(shape, 10, track.position(2))[r : r + 32, c : c + 32]
    mean_flow = flow.values[:, alpha >= 0.5].mean(axis=1)
    moved = centroid(scene.frames[2]) - centroid(scene.frames[1])
    assert np.all(np.abs(moved - mean_flow) < 0.5)
