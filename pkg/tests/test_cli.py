"""End-to-end pipeline through the command-line entry points."""

import json

import numpy as np
import pytest

from rigview.cli import main
from rigview.fileio import dump_json, load_json, load_rig, read_image
from rigview.geometry import pose_difference
from rigview.scenegen import default_scene_spec, spec_to_dict


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    spec = default_scene_spec(n_cameras=2, n_timestamps=8, width=32, height=24,
                              seed=21, trajectory="turn",
                              perturb_rot_deg=0.4, perturb_trans=0.02,
                              corr_samples_per_pair=12)
    dump_json(root / "spec.json", spec_to_dict(spec))
    assert main(["generate", "--spec", str(root / "spec.json"),
                 "--out", str(root / "scene")]) == 0
    return root


def test_generate_outputs(scene_dir):
    scene = scene_dir / "scene"
    assert (scene / "rig.json").exists()
    assert (scene / "rig_true.json").exists()
    assert (scene / "correspondences.jsonl").exists()
    assert (scene / "images" / "cam0_t0000.png").exists()
    assert (scene / "depth" / "cam1_t0007.dpth").exists()
    assert (scene / "sky" / "cam0_t0003.pbm").exists()


def test_refine_poses_recovers_truth(scene_dir):
    scene = scene_dir / "scene"
    out = scene_dir / "rig_refined.json"
    report = scene_dir / "refine_report.json"
    assert main(["refine-poses", "--graph", str(scene / "correspondences.jsonl"),
                 "--rig-in", str(scene / "rig.json"),
                 "--rig-out", str(out), "--report", str(report)]) == 0
    refined, _, _ = load_rig(out)
    truth, _, _ = load_rig(scene / "rig_true.json")
    for a, b in zip(refined.deltas, truth.deltas):
        rot, tr = pose_difference(a, b)
        assert np.degrees(rot) < 0.05 and tr < 0.005
    doc = load_json(report)
    assert doc["solve"]["final_cost"] < doc["solve"]["initial_cost"]
    assert "0" in doc["observability"]


def test_warp_outputs(scene_dir):
    out = scene_dir / "virtual"
    assert main(["warp", "--scene", str(scene_dir / "scene"),
                 "--out", str(out), "--virtual-per-real", "2",
                 "--seed", "4"]) == 0
    meta = load_json(out / "virtual_meta.json")
    assert len(meta) == 2 * 8 * 2  # images x virtual_per_real
    assert (out / f"{meta[0]['stem']}.png").exists()


def test_train_render_evaluate(scene_dir, tmp_path):
    scene = scene_dir / "scene"
    cfg = tmp_path / "train.cfg"
    cfg.write_text("""
n_iters = 60
warmup_iters = 10
batch_rays = 256
grid_res = 12
sky_h = 8
sky_w = 16
n_samples = 12
log_every = 20
eval_every = 0
images_per_batch = 4
""")
    ckpt = tmp_path / "model.ckpt"
    metrics = tmp_path / "metrics.jsonl"
    assert main(["train", "--scene", str(scene), "--config", str(cfg),
                 "--out", str(ckpt), "--rig", str(scene_dir / "rig_refined.json"),
                 "--virtual", str(scene_dir / "virtual"),
                 "--metrics", str(metrics)]) == 0
    records = [json.loads(line) for line in metrics.read_text().splitlines()]
    assert records[-1]["loss"] < records[0]["loss"]

    out_png = tmp_path / "view.png"
    assert main(["render", "--checkpoint", str(ckpt), "--scene", str(scene),
                 "--image-id", "cam0_t0000", "--codes", "nearest",
                 "--out", str(out_png)]) == 0
    img = read_image(out_png)
    assert img.shape == (24, 32, 3)

    pano_png = tmp_path / "pano.png"
    assert main(["render", "--checkpoint", str(ckpt), "--scene", str(scene),
                 "--panorama", "48x16", "--codes", "identity",
                 "--out", str(pano_png)]) == 0
    assert read_image(pano_png).shape == (16, 48, 3)

    report = tmp_path / "report.json"
    assert main(["evaluate", "--checkpoint", str(ckpt), "--scene", str(scene),
                 "--out", str(report)]) == 0
    doc = load_json(report)
    assert doc["per_image"] and "mean_psnr" in doc
    assert doc["split"] == "1-in-8 per camera"
    assert len(doc["config_hash"]) == 12
