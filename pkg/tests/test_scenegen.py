import numpy as np
import pytest

from rigview.errors import NoOverlapError
from rigview.geometry import pose_difference
from rigview.pose_refine import reprojection_residual
from rigview.scenegen import (
    CameraSpec,
    RectSpec,
    SceneSpec,
    default_scene_spec,
    image_id,
    load_scene,
    make_correspondences,
    make_rig,
    parse_image_id,
    perturb_rig,
    render_ground_truth,
    save_scene,
    scene_bounds,
    spec_from_dict,
    spec_to_dict,
)


def small_spec(**overrides):
    kw = dict(n_cameras=2, n_timestamps=6, width=48, height=32, seed=7)
    kw.update(overrides)
    return default_scene_spec(**kw)


def test_spec_json_round_trip():
    spec = small_spec()
    back = spec_from_dict(spec_to_dict(spec))
    assert back == spec


def test_image_id_round_trip():
    assert parse_image_id(image_id(12, 3)) == (12, 3)


def test_isp_disabled_distorted_equals_clean():
    spec = small_spec(isp_enabled=False, n_timestamps=2)
    ds = render_ground_truth(spec)
    for name in ds.image_ids:
        np.testing.assert_array_equal(ds.images[name], ds.clean[name])


def test_isp_enabled_distorted_differs():
    spec = small_spec(n_timestamps=2)
    ds = render_ground_truth(spec)
    assert any(np.abs(ds.images[n] - ds.clean[n]).max() > 0.01 for n in ds.image_ids)


def test_sky_mask_iff_invalid_depth():
    ds = render_ground_truth(small_spec(n_timestamps=2))
    for name in ds.image_ids:
        np.testing.assert_array_equal(ds.sky_masks[name], np.isnan(ds.depths[name]))


def test_fronto_parallel_plane_depth():
    # One camera at the origin looking along +x at a wall at x = 5.
    spec = SceneSpec(
        n_timestamps=1,
        cameras=[CameraSpec(yaw_deg=0.0, pitch_deg=0.0)],
        rects=[RectSpec(origin=[5.0, -20.0, -18.0], edge_u=[0, 40, 0],
                        edge_v=[0, 0, 40], color_a=[0.5, 0.5, 0.5],
                        color_b=[0.5, 0.5, 0.5], checker=[0, 0])],
        width=40, height=30, ego_height=0.0, isp_enabled=False, seed=0)
    ds = render_ground_truth(spec)
    d = ds.depths[image_id(0, 0)]
    assert np.isfinite(d).all()
    np.testing.assert_allclose(d, 5.0, atol=1e-6)


def test_determinism_byte_identical(tmp_path):
    spec = small_spec(n_timestamps=3, corr_sigma_px=0.3)
    for sub in ("a", "b"):
        ds = render_ground_truth(spec)
        save_scene(ds, tmp_path / sub)
    files_a = sorted((tmp_path / "a").rglob("*"))
    files_b = sorted((tmp_path / "b").rglob("*"))
    assert [f.name for f in files_a if f.is_file()] == \
        [f.name for f in files_b if f.is_file()]
    for fa, fb in zip(files_a, files_b):
        if fa.is_file():
            assert fa.read_bytes() == fb.read_bytes(), fa.name


def test_scene_save_load_round_trip(tmp_path):
    spec = small_spec(n_timestamps=2)
    ds = render_ground_truth(spec)
    save_scene(ds, tmp_path)
    back = load_scene(tmp_path)
    assert back.image_ids == ds.image_ids
    name = ds.image_ids[0]
    # Images quantize to 8 bits on disk.
    assert np.abs(back.images[name] - ds.images[name]).max() <= 0.5 / 255 + 1e-12
    np.testing.assert_allclose(back.depths[name][~ds.sky_masks[name]],
                               ds.depths[name][~ds.sky_masks[name]].astype(np.float32))
    np.testing.assert_array_equal(back.sky_masks[name], ds.sky_masks[name])
    for a, b in zip(ds.rig_true.deltas, back.rig_true.deltas):
        np.testing.assert_allclose(a.matrix(), b.matrix(), atol=1e-15)


class TestCorrespondences:
    def test_noiseless_edges_have_zero_residual(self):
        ds = render_ground_truth(small_spec())
        graph = make_correspondences(ds)
        assert len(graph.edges) > 100
        for e in graph.edges[::17]:
            r = reprojection_residual(e, ds.rig_true, ds.intrinsics)
            np.testing.assert_allclose(r, 0.0, atol=1e-9)

    def test_has_cross_camera_edges(self):
        ds = render_ground_truth(small_spec())
        graph = make_correspondences(ds)
        assert any(e.src[1] != e.dst[1] for e in graph.edges)

    def test_noise_statistics(self):
        spec = default_scene_spec(n_cameras=3, n_timestamps=12, width=64,
                                  height=48, seed=3, corr_sigma_px=0.5,
                                  corr_samples_per_pair=40)
        ds = render_ground_truth(spec)
        graph = make_correspondences(ds)
        res = np.array([reprojection_residual(e, ds.rig_true, ds.intrinsics)
                        for e in graph.edges])
        assert len(res) > 3000
        # Both endpoints carry sigma noise, so each component is ~ sigma*sqrt(2).
        expect = 0.5 * np.sqrt(2.0)
        assert abs(res[:, 0].std() - expect) / expect < 0.1
        assert abs(res[:, 1].std() - expect) / expect < 0.1

    def test_disjoint_frusta_raise(self):
        spec = small_spec()
        spec.cameras = [CameraSpec(yaw_deg=-140.0), CameraSpec(yaw_deg=140.0)]
        spec.corr_same_cam_window = 0
        ds = render_ground_truth(spec)
        # Opposite-facing cameras with no shared surface and no same-camera
        # pairs: nothing is co-visible.
        spec2 = spec
        spec2.n_timestamps = 1
        with pytest.raises(NoOverlapError):
            make_correspondences(render_ground_truth(spec2))


class TestPerturbRig:
    def test_zero_magnitudes_unchanged(self):
        rig = make_rig(small_spec())
        out = perturb_rig(rig, 0.0, 0.0, seed=1)
        for a, b in zip(rig.deltas, out.deltas):
            np.testing.assert_allclose(a.matrix(), b.matrix(), atol=1e-15)

    def test_angles_bounded(self):
        rig = make_rig(small_spec())
        for seed in range(1000):
            out = perturb_rig(rig, 1.0, 0.05, seed=seed)
            for k in range(1, rig.n_cameras):
                # Left-composed bump: recover it as out o inverse(original).
                rot, _ = pose_difference(rig.deltas[k], out.deltas[k])
                assert np.degrees(rot) <= 1.0 + 1e-9

    def test_camera0_untouched(self):
        rig = make_rig(small_spec())
        out = perturb_rig(rig, 2.0, 0.1, seed=5)
        np.testing.assert_allclose(out.deltas[0].matrix(), rig.deltas[0].matrix(),
                                   atol=1e-15)
        rot, tr = pose_difference(rig.deltas[1], out.deltas[1])
        assert rot > 1e-4 and tr > 1e-4


def test_bounds_contain_layout_and_trajectory():
    spec = small_spec()
    lo, hi = scene_bounds(spec)
    for pose in make_rig(spec).ego_poses:
        assert np.all(pose.trans >= lo) and np.all(pose.trans <= hi)
