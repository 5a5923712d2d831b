"""Virtual view generation by forward depth warping.

A virtual pose is a random perturbation of a real camera pose. Every source
pixel with a reliable depth is pushed through

    d_v * pv_h = K (R_ov K^-1 d_o * po_h + t_ov)

with nearest-pixel rounding; when several source pixels land on the same
target, the smallest warped depth wins. Warped pixels inherit the source
image's color-correction code. Reliability comes from a multi-view geometric
consistency mask over the depth maps.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (MissingDepthError, NoNeighborsError, ShapeMismatchError)
from .fileio import (dump_json, load_json, read_depth, read_image, read_pbm,
                     write_depth, write_image, write_pbm)
from .geometry import (Intrinsics, RigState, SE3Pose, camera_pose,
                       quat_from_axis_angle, se3_compose, se3_inverse)
from .scenegen import SceneDataset, parse_image_id


@dataclass
class WarpOptions:
    max_rot_deg: float = 20.0
    max_trans: float = 1.0
    virtual_per_real: int = 9
    consistency_neighbors: int = 6
    consistency_rel_tol: float = 0.01
    consistency_min_agree: int = 4


@dataclass
class VirtualView:
    pose: SE3Pose  # camera-to-world pose of the virtual camera
    image: np.ndarray  # H x W x 3, colors copied from the source image
    depth: np.ndarray  # H x W warped depths, NaN where no pixel landed
    valid: np.ndarray  # H x W bool
    code_ref: str  # id of the source image whose correction codes apply


def sample_virtual_pose(rng, T_o: SE3Pose, opts: WarpOptions) -> SE3Pose:
    """Random virtual pose near T_o; deterministic for a fixed seed.

    The perturbation rotates about one uniformly chosen camera axis by an
    angle uniform in [-max_rot_deg, max_rot_deg] and translates along a
    uniform random direction with length uniform in [0, max_trans].
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    axis = np.zeros(3)
    axis[rng.integers(0, 3)] = 1.0
    angle = np.radians(rng.uniform(-opts.max_rot_deg, opts.max_rot_deg))
    direction = rng.normal(size=3)
    norm = np.linalg.norm(direction)
    direction = direction / norm if norm > 0 else np.array([1.0, 0.0, 0.0])
    length = rng.uniform(0.0, opts.max_trans)
    # [R, t] maps original-camera coordinates to virtual-camera coordinates,
    # so T_v = T_o (R, t)^-1.
    rel = SE3Pose(quat_from_axis_angle(axis, angle), length * direction)
    return se3_compose(T_o, se3_inverse(rel))


def relative_warp_transform(T_o: SE3Pose, T_v: SE3Pose) -> SE3Pose:
    """[R_ov, t_ov] taking original-camera points to virtual-camera points."""
    return se3_compose(se3_inverse(T_v), T_o)


def warp_to_virtual(image: np.ndarray, depth: np.ndarray, mask: np.ndarray,
                    K: Intrinsics, T_rel: SE3Pose, code_ref: str,
                    pose: SE3Pose | None = None) -> VirtualView:
    """Forward-warp masked source pixels into the virtual view.

    Target conflicts resolve to the smallest warped depth; ties resolve to
    the first source pixel in row-major order, keeping the pass deterministic.
    """
    image = np.asarray(image, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if image.shape[:2] != depth.shape or depth.shape != mask.shape:
        raise ShapeMismatchError("image, depth, and mask shapes must agree")
    h, w = depth.shape

    out_img = np.zeros((h, w, 3))
    out_depth = np.full((h, w), np.nan)
    out_valid = np.zeros((h, w), dtype=bool)

    src = mask & np.isfinite(depth) & (depth > 0)
    if src.any():
        ys, xs = np.nonzero(src)
        d_o = depth[ys, xs]
        X_o = np.stack([(xs - K.cx) / K.fx * d_o,
                        (ys - K.cy) / K.fy * d_o, d_o], axis=-1)
        X_v = X_o @ T_rel.rotation_matrix().T + T_rel.trans
        d_v = X_v[:, 2]
        front = d_v > 1e-9
        u = np.round(K.fx * X_v[front, 0] / d_v[front] + K.cx).astype(np.int64)
        v = np.round(K.fy * X_v[front, 1] / d_v[front] + K.cy).astype(np.int64)
        inb = (u >= 0) & (u < w) & (v >= 0) & (v < h)
        tgt = v[inb] * w + u[inb]
        d_hit = d_v[front][inb]
        src_flat = (ys[front][inb] * w + xs[front][inb])
        # Min-depth winner per target, deterministic under ties.
        order = np.lexsort((src_flat, d_hit, tgt))
        tgt_sorted = tgt[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = tgt_sorted[1:] != tgt_sorted[:-1]
        win = order[first]
        ty, tx = tgt[win] // w, tgt[win] % w
        out_depth[ty, tx] = d_hit[win]
        out_img[ty, tx] = image[ys[front][inb][win], xs[front][inb][win]]
        out_valid[ty, tx] = True

    return VirtualView(pose=pose if pose is not None else SE3Pose.identity(),
                       image=out_img, depth=out_depth, valid=out_valid,
                       code_ref=code_ref)


def consistency_mask(ref_depth: np.ndarray, neighbors: list, K: Intrinsics,
                     rel_tol: float = 0.01, min_agree: int = 4) -> np.ndarray:
    """Keep reference pixels whose depth agrees with enough neighbor views.

    neighbors is a list of (depth map, relative pose) where the pose maps
    reference-camera points into the neighbor camera frame. A neighbor agrees
    when the reprojected point lands in bounds and |d_proj - d_nb| / d_nb
    <= rel_tol using nearest-pixel lookup.
    """
    if not neighbors:
        raise NoNeighborsError("consistency check needs at least one neighbor")
    ref_depth = np.asarray(ref_depth, dtype=np.float64)
    h, w = ref_depth.shape
    valid = np.isfinite(ref_depth) & (ref_depth > 0)
    ys, xs = np.nonzero(valid)
    d = ref_depth[ys, xs]
    X_ref = np.stack([(xs - K.cx) / K.fx * d, (ys - K.cy) / K.fy * d, d], axis=-1)

    agree = np.zeros(len(d), dtype=np.int64)
    for nb_depth, rel in neighbors:
        nb_depth = np.asarray(nb_depth, dtype=np.float64)
        if nb_depth.shape != ref_depth.shape:
            raise ShapeMismatchError("neighbor depth shape differs from reference")
        X_nb = X_ref @ rel.rotation_matrix().T + rel.trans
        z = X_nb[:, 2]
        ok = z > 1e-9
        safe_z = np.where(ok, z, 1.0)
        u = np.round(K.fx * X_nb[:, 0] / safe_z + K.cx).astype(np.int64)
        v = np.round(K.fy * X_nb[:, 1] / safe_z + K.cy).astype(np.int64)
        ok &= (u >= 0) & (u < w) & (v >= 0) & (v < h)
        if not ok.any():
            continue
        looked = nb_depth[v[ok], u[ok]]
        good = np.isfinite(looked) & (looked > 0)
        rel_err = np.abs(z[ok] - looked) / np.where(good, looked, 1.0)
        hit = np.zeros(len(d), dtype=bool)
        hit[np.nonzero(ok)[0][good & (rel_err <= rel_tol)]] = True
        agree += hit

    out = np.zeros((h, w), dtype=bool)
    out[ys, xs] = agree >= min_agree
    return out


def _nearest_view_ids(dataset: SceneDataset, rig: RigState, ref_id: str,
                      count: int) -> list[str]:
    i, k = parse_image_id(ref_id)
    center = camera_pose(rig, i, k).trans
    others = []
    for name in dataset.image_ids:
        if name == ref_id:
            continue
        ii, kk = parse_image_id(name)
        dist = np.linalg.norm(camera_pose(rig, ii, kk).trans - center)
        others.append((dist, name))
    others.sort(key=lambda t: (t[0], t[1]))
    return [name for _, name in others[:count]]


def compute_consistency_masks(dataset: SceneDataset, rig: RigState,
                              opts: WarpOptions) -> dict:
    """Geometric consistency mask for every image against its nearest views."""
    K = dataset.intrinsics[0]
    poses = {name: camera_pose(rig, *parse_image_id(name))
             for name in dataset.image_ids}
    masks = {}
    for name in dataset.image_ids:
        nb_ids = _nearest_view_ids(dataset, rig, name, opts.consistency_neighbors)
        neighbors = [(dataset.depths[nb],
                      se3_compose(se3_inverse(poses[nb]), poses[name]))
                     for nb in nb_ids]
        masks[name] = consistency_mask(dataset.depths[name], neighbors, K,
                                       rel_tol=opts.consistency_rel_tol,
                                       min_agree=opts.consistency_min_agree)
    return masks


def generate_virtual_set(dataset: SceneDataset, rig: RigState,
                         opts: WarpOptions, seed: int,
                         image_ids: list[str] | None = None) -> list[VirtualView]:
    """opts.virtual_per_real warped views per real image, deterministic per seed."""
    ids = image_ids if image_ids is not None else list(dataset.image_ids)
    for name in ids:
        if name not in dataset.depths or name not in dataset.sky_masks:
            raise MissingDepthError(f"image {name} lacks a depth map or mask")
    if opts.virtual_per_real <= 0:
        return []
    masks = compute_consistency_masks(dataset, rig, opts)
    K = dataset.intrinsics[0]
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(ids))
    views = []
    for idx, name in enumerate(ids):
        i, k = parse_image_id(name)
        T_o = camera_pose(rig, i, k)
        for v_seed in children[idx].spawn(opts.virtual_per_real):
            rng = np.random.default_rng(v_seed)
            T_v = sample_virtual_pose(rng, T_o, opts)
            T_rel = relative_warp_transform(T_o, T_v)
            views.append(warp_to_virtual(dataset.images[name],
                                         dataset.depths[name], masks[name],
                                         K, T_rel, code_ref=name, pose=T_v))
    return views


# ---------------------------------------------------------------------------
# On-disk layout for a generated virtual set
# ---------------------------------------------------------------------------

def save_virtual_set(out_dir, views: list[VirtualView]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = []
    for n, view in enumerate(views):
        stem = f"virtual_{n:05d}"
        write_image(out / f"{stem}.png", view.image)
        write_depth(out / f"{stem}.dpth", view.depth)
        write_pbm(out / f"{stem}_valid.pbm", view.valid)
        meta.append({"stem": stem, "code_ref": view.code_ref,
                     "quat": [float(x) for x in view.pose.quat],
                     "trans": [float(x) for x in view.pose.trans]})
    dump_json(out / "virtual_meta.json", meta)


def load_virtual_set(in_dir) -> list[VirtualView]:
    root = Path(in_dir)
    views = []
    for rec in load_json(root / "virtual_meta.json"):
        pose = SE3Pose(np.asarray(rec["quat"]), np.asarray(rec["trans"]))
        views.append(VirtualView(
            pose=pose,
            image=read_image(root / f"{rec['stem']}.png"),
            depth=read_depth(root / f"{rec['stem']}.dpth"),
            valid=read_pbm(root / f"{rec['stem']}_valid.pbm"),
            code_ref=rec["code_ref"]))
    return views
