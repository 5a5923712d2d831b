"""Deterministic synthetic multi-camera dataset generator.

Scenes are sets of textured Lambertian rectangles inside a bounded volume
under a procedural sky. Images are rendered by analytic ray-rectangle
intersection, so depths, sky masks, poses, per-camera color distortions, and
pixel correspondences are all exact ground truth.

World frame: z up, ego driving roughly along +x. Ego frame: x forward,
y left, z up. Camera frame: x right, y down, z forward. Depth maps store
camera-frame z (not euclidean ray length); sky pixels are NaN.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSpecError, NoOverlapError
from .fileio import (dump_json, load_json, load_rig, read_depth, read_image,
                     read_pbm, save_rig, write_depth, write_image, write_pbm)
from .geometry import (Intrinsics, RigState, SE3Pose, camera_pose, pixel_rays,
                       quat_from_axis_angle, se3_compose, se3_inverse, unproject)
from .pose_refine import CorrespondenceEdge, CorrespondenceGraph


# ---------------------------------------------------------------------------
# Scene specification
# ---------------------------------------------------------------------------

@dataclass
class RectSpec:
    """Textured rectangle: origin corner plus two orthogonal edge vectors."""
    origin: list
    edge_u: list
    edge_v: list
    color_a: list
    color_b: list
    checker: list  # tiles along each edge; [0, 0] = smooth gradient only


@dataclass
class CameraSpec:
    yaw_deg: float
    pitch_deg: float = 0.0
    trans: list = field(default_factory=lambda: [0.0, 0.0, 0.0])  # ego frame


@dataclass
class SceneSpec:
    n_timestamps: int = 20
    cameras: list = field(default_factory=list)  # CameraSpec entries
    rects: list = field(default_factory=list)  # RectSpec entries
    width: int = 96
    height: int = 64
    hfov_deg: float = 70.0
    trajectory: str = "straight"  # straight | arc | turn
    traj_step: float = 0.45  # ego advance per timestamp (scene units)
    ego_height: float = 1.6
    isp_enabled: bool = True
    isp_diag_mag: float = 0.15
    isp_offdiag_mag: float = 0.05
    isp_offset_mag: float = 0.05
    isp_temporal_jitter: float = 0.0
    perturb_rot_deg: float = 0.0
    perturb_trans: float = 0.0
    corr_sigma_px: float = 0.0
    corr_outlier_frac: float = 0.0
    corr_same_cam_window: int = 10
    corr_cross_cam_window: int = 20
    corr_samples_per_pair: int = 25
    corr_min_matches: int = 30
    seed: int = 0

    def intrinsics(self) -> Intrinsics:
        fx = 0.5 * self.width / np.tan(0.5 * np.radians(self.hfov_deg))
        return Intrinsics(fx=fx, fy=fx, cx=(self.width - 1) / 2.0,
                          cy=(self.height - 1) / 2.0,
                          width=self.width, height=self.height)

    def validate(self) -> None:
        if self.n_timestamps < 1 or not self.cameras or not self.rects:
            raise InvalidSpecError("spec needs timestamps, cameras, and geometry")
        for r in self.rects:
            eu, ev = np.asarray(r.edge_u, float), np.asarray(r.edge_v, float)
            if abs(float(eu @ ev)) > 1e-9 * np.linalg.norm(eu) * np.linalg.norm(ev):
                raise InvalidSpecError("rectangle edges must be orthogonal")
        # A mid-gray patch must stay in gamut under the largest distortion.
        worst = 0.5 * (1 + self.isp_diag_mag + 2 * self.isp_offdiag_mag) + self.isp_offset_mag
        if worst > 1.0:
            raise InvalidSpecError("ISP magnitudes push a gray patch out of [0, 1]")
        lo, hi = _geometry_bounds(self)
        slack = 3.0 * float((hi - lo).max()) + 20.0
        for pose in make_trajectory(self):
            if np.any(pose.trans < lo - slack) or np.any(pose.trans > hi + slack):
                raise InvalidSpecError("trajectory strays far outside the scene")


def spec_to_dict(spec: SceneSpec) -> dict:
    return asdict(spec)


def spec_from_dict(d: dict) -> SceneSpec:
    d = dict(d)
    d["cameras"] = [CameraSpec(**c) for c in d["cameras"]]
    d["rects"] = [RectSpec(**r) for r in d["rects"]]
    return SceneSpec(**d)


def corridor_layout(length: float = 24.0, half_width: float = 7.0,
                    wall_height: float = 5.0, smooth: bool = False) -> list:
    """Ground plane, two side walls, an end wall, and a few roadside panels.

    smooth=True swaps checkerboards for low-frequency gradients (easier for
    a coarse voxel grid to represent exactly).
    """
    rects = [
        RectSpec(origin=[-6.0, -half_width, 0.0], edge_u=[length + 12, 0, 0],
                 edge_v=[0, 2 * half_width, 0], color_a=[0.42, 0.42, 0.44],
                 color_b=[0.58, 0.57, 0.55], checker=[16, 6]),
        RectSpec(origin=[-6.0, -half_width, 0.0], edge_u=[length + 12, 0, 0],
                 edge_v=[0, 0, wall_height], color_a=[0.72, 0.5, 0.38],
                 color_b=[0.45, 0.30, 0.24], checker=[22, 4]),
        RectSpec(origin=[-6.0, half_width, 0.0], edge_u=[length + 12, 0, 0],
                 edge_v=[0, 0, wall_height], color_a=[0.38, 0.52, 0.70],
                 color_b=[0.25, 0.33, 0.47], checker=[22, 4]),
        RectSpec(origin=[length + 6.0, -half_width, 0.0],
                 edge_u=[0, 2 * half_width, 0], edge_v=[0, 0, wall_height],
                 color_a=[0.65, 0.65, 0.3], color_b=[0.4, 0.42, 0.2], checker=[8, 4]),
    ]
    # Free-standing panels give parallax off the walls.
    panels = [
        ([4.0, -4.2, 0.0], [1.8, 0.6, 0.0], [0.8, 0.25, 0.2], [0.95, 0.8, 0.75], [5, 3]),
        ([9.0, 3.8, 0.0], [2.2, -0.5, 0.0], [0.2, 0.6, 0.3], [0.8, 0.9, 0.8], [6, 3]),
        ([14.0, -3.5, 0.0], [1.5, 0.8, 0.0], [0.55, 0.4, 0.75], [0.9, 0.85, 0.95], [4, 4]),
        ([19.0, 4.0, 0.0], [2.0, 0.0, 0.0], [0.85, 0.7, 0.2], [0.45, 0.38, 0.12], [7, 3]),
    ]
    for origin, eu, ca, cb, checker in panels:
        rects.append(RectSpec(origin=origin, edge_u=eu, edge_v=[0, 0, 2.6],
                              color_a=ca, color_b=cb, checker=checker))
    if smooth:
        for r in rects:
            r.checker = [0, 0]
    return rects


def wall_scene_spec(n_cameras: int = 3, n_timestamps: int = 12,
                    wall_x: float = 30.0, seed: int = 0, **overrides) -> SceneSpec:
    """Cameras driving straight at one large fronto-parallel wall.

    Every view's depth map is constant (camera-frame z equals the distance
    to the wall plane), so nearest-pixel consistency lookups are exact; this
    is the reference scene for mask-retention checks.
    """
    cameras = [CameraSpec(yaw_deg=0.0, pitch_deg=0.0,
                          trans=[0.3, 0.35 * (k - (n_cameras - 1) / 2), 0.0])
               for k in range(n_cameras)]
    wall = RectSpec(origin=[wall_x, -60.0, -30.0], edge_u=[0.0, 120.0, 0.0],
                    edge_v=[0.0, 0.0, 60.0], color_a=[0.7, 0.55, 0.4],
                    color_b=[0.35, 0.3, 0.5], checker=[24, 12])
    return SceneSpec(n_timestamps=n_timestamps, cameras=cameras, rects=[wall],
                     trajectory="straight", seed=seed, **overrides)


def default_scene_spec(n_cameras: int = 3, n_timestamps: int = 20,
                       seed: int = 0, **overrides) -> SceneSpec:
    yaws = {1: [0.0], 2: [-22.0, 22.0], 3: [-38.0, 0.0, 38.0]}.get(
        n_cameras, list(np.linspace(-45, 45, n_cameras)))
    cameras = [CameraSpec(yaw_deg=float(y), pitch_deg=4.0,
                          trans=[0.3, float(np.sign(y)) * 0.35, 0.0])
               for y in yaws]
    overrides.setdefault("rects", corridor_layout())
    spec = SceneSpec(n_timestamps=n_timestamps, cameras=cameras,
                     seed=seed, **overrides)
    return spec


def _geometry_bounds(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    pts = []
    for r in spec.rects:
        o = np.asarray(r.origin, float)
        eu = np.asarray(r.edge_u, float)
        ev = np.asarray(r.edge_v, float)
        pts += [o, o + eu, o + ev, o + eu + ev]
    pts = np.asarray(pts)
    return pts.min(axis=0), pts.max(axis=0)


def scene_bounds(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned bounds of the renderable volume: the layout geometry
    together with the camera trajectory, plus a small margin."""
    lo, hi = _geometry_bounds(spec)
    traj = np.asarray([p.trans for p in make_trajectory(spec)])
    return (np.minimum(lo, traj.min(axis=0)) - 0.5,
            np.maximum(hi, traj.max(axis=0)) + 0.5)


# ---------------------------------------------------------------------------
# Rig and trajectory
# ---------------------------------------------------------------------------

def _mounting_pose(cam: CameraSpec) -> SE3Pose:
    yaw = np.radians(cam.yaw_deg)
    pitch = np.radians(cam.pitch_deg)
    forward = np.array([np.cos(pitch) * np.cos(yaw),
                        np.cos(pitch) * np.sin(yaw),
                        -np.sin(pitch)])
    right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    m = np.eye(4)
    m[:3, 0], m[:3, 1], m[:3, 2] = right, down, forward
    m[:3, 3] = np.asarray(cam.trans, float)
    return SE3Pose.from_matrix(m)


def make_trajectory(spec: SceneSpec) -> list[SE3Pose]:
    """Ego poses for the configured preset."""
    poses = []
    for i in range(spec.n_timestamps):
        s = i * spec.traj_step
        if spec.trajectory == "straight":
            pos = np.array([s, 0.0, spec.ego_height])
            yaw = 0.0
        elif spec.trajectory == "arc":
            radius = 40.0
            ang = s / radius
            pos = np.array([radius * np.sin(ang), radius * (1 - np.cos(ang)),
                            spec.ego_height])
            yaw = ang
        elif spec.trajectory == "turn":
            half = 0.5 * spec.n_timestamps * spec.traj_step
            if s <= half:
                pos = np.array([s, 0.0, spec.ego_height])
                yaw = 0.0
            else:
                yaw = 0.04 * (s - half)
                pos = np.array([half + (s - half) * np.cos(yaw),
                                (s - half) * np.sin(yaw), spec.ego_height])
        else:
            raise InvalidSpecError(f"unknown trajectory preset {spec.trajectory!r}")
        poses.append(SE3Pose(quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw), pos))
    return poses


def make_rig(spec: SceneSpec) -> RigState:
    return RigState(make_trajectory(spec), [_mounting_pose(c) for c in spec.cameras])


def perturb_rig(rig: RigState, rot_deg: float, trans: float, seed: int,
                skip_cameras: tuple = (0,)) -> RigState:
    """Apply a random-direction offset of the given magnitudes to each delta."""
    rng = np.random.default_rng(seed)
    out = rig.copy()
    for k in range(rig.n_cameras):
        if k in skip_cameras:
            continue
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        bump = SE3Pose(quat_from_axis_angle(axis, np.radians(rot_deg)),
                       trans * direction)
        out.deltas[k] = se3_compose(bump, rig.deltas[k])
    return out


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _rect_color(r: RectSpec, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    ca = np.asarray(r.color_a, float)
    cb = np.asarray(r.color_b, float)
    nu, nv = r.checker
    if nu > 0 and nv > 0:
        tile = (np.floor(u * nu) + np.floor(v * nv)) % 2
    else:
        tile = 0.5 * (1 + np.sin(2 * np.pi * (2 * u + 3 * v)))
    shade = 0.9 + 0.1 * np.sin(2 * np.pi * (0.7 * u + 1.3 * v))
    color = ca[None, :] * (1 - tile[:, None]) + cb[None, :] * tile[:, None]
    return color * shade[:, None]


def sky_color(directions: np.ndarray) -> np.ndarray:
    """Procedural sky: elevation gradient with mild azimuthal banding."""
    d = directions / np.linalg.norm(directions, axis=-1, keepdims=True)
    el = np.clip(d[..., 2], 0.0, 1.0)
    az = np.arctan2(d[..., 1], d[..., 0])
    horizon = np.array([0.82, 0.84, 0.92])
    zenith = np.array([0.22, 0.38, 0.72])
    w = el[..., None] ** 0.65
    base = horizon * (1 - w) + zenith * w
    band = 0.05 * np.sin(2 * az) * (1 - el)
    return np.clip(base + band[..., None] * np.array([1.0, 0.8, 0.4]), 0.0, 1.0)


def trace_rays(spec: SceneSpec, origins: np.ndarray, dirs: np.ndarray,
               t_min: float = 1e-6):
    """First-hit depth (euclidean t along the ray) and surface color.

    origins/dirs are (..., 3); returns (t (...), color (..., 3)) with t = inf
    where the ray escapes to the sky.
    """
    shape = origins.shape[:-1]
    o = origins.reshape(-1, 3)
    d = dirs.reshape(-1, 3)
    best_t = np.full(len(o), np.inf)
    color = sky_color(d).reshape(-1, 3)
    for r in spec.rects:
        ro = np.asarray(r.origin, float)
        eu = np.asarray(r.edge_u, float)
        ev = np.asarray(r.edge_v, float)
        n = np.cross(eu, ev)
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((ro - o) @ n) / denom
        hit = (np.abs(denom) > 1e-12) & (t > t_min) & (t < best_t)
        if not hit.any():
            continue
        pt = o[hit] + t[hit, None] * d[hit]
        rel = pt - ro
        u = (rel @ eu) / (eu @ eu)
        v = (rel @ ev) / (ev @ ev)
        inside = (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)
        idx = np.nonzero(hit)[0][inside]
        best_t[idx] = t[hit][inside]
        color[idx] = _rect_color(r, u[inside], v[inside])
    return best_t.reshape(shape), color.reshape(shape + (3,))


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

def image_id(i: int, k: int) -> str:
    return f"cam{k}_t{i:04d}"


def parse_image_id(name: str) -> tuple[int, int]:
    cam, t = name.split("_t")
    return int(t), int(cam[3:])


@dataclass
class SceneDataset:
    spec: SceneSpec
    rig_true: RigState
    rig: RigState  # working rig; differs from rig_true when perturbed
    intrinsics: list
    image_ids: list
    images: dict  # id -> H x W x 3 float in [0, 1], distorted (training target)
    clean: dict  # id -> undistorted render
    depths: dict  # id -> H x W float, NaN on sky
    sky_masks: dict  # id -> H x W bool, True on sky
    isp: dict  # id -> {"A_fg", "x_fg", "C_sky", "y_sky"}

    @property
    def n_timestamps(self) -> int:
        return self.spec.n_timestamps

    @property
    def n_cameras(self) -> int:
        return len(self.spec.cameras)


def _draw_isp(rng, spec: SceneSpec):
    diag = rng.uniform(-spec.isp_diag_mag, spec.isp_diag_mag, size=3)
    off = rng.uniform(-spec.isp_offdiag_mag, spec.isp_offdiag_mag, size=(3, 3))
    np.fill_diagonal(off, 0.0)
    A = np.eye(3) + np.diag(diag) + off
    x = rng.uniform(-spec.isp_offset_mag, spec.isp_offset_mag, size=3)
    return A, x


def render_ground_truth(spec: SceneSpec) -> SceneDataset:
    """Render the full dataset: clean + distorted images, depths, sky masks."""
    spec.validate()
    rig_true = make_rig(spec)
    K = spec.intrinsics()
    n_k = len(spec.cameras)

    seeds = np.random.SeedSequence(spec.seed).spawn(4)  # isp, perturb, corr, jitter
    isp_rng = np.random.default_rng(seeds[0])
    per_camera = []
    for _ in range(n_k):
        A, x = _draw_isp(isp_rng, spec)
        C, y = _draw_isp(isp_rng, spec)
        per_camera.append((A, x, C, y))

    ids, images, clean, depths, masks, isp = [], {}, {}, {}, {}, {}
    for k in range(n_k):
        for i in range(spec.n_timestamps):
            name = image_id(i, k)
            ids.append(name)
            pose = camera_pose(rig_true, i, k)
            origins, dirs = pixel_rays(K, pose)
            t, col = trace_rays(spec, origins, dirs)
            sky = ~np.isfinite(t)
            # Depth stores camera-frame z: t is euclidean, so scale by dir_z.
            dir_cam_z = dirs @ pose.rotation_matrix()[:, 2]
            depth = np.where(sky, np.nan, t * dir_cam_z)

            A, x, C, y = per_camera[k]
            if spec.isp_temporal_jitter > 0:
                jr = np.random.default_rng(
                    int(seeds[3].generate_state(1)[0]) + 977 * i + k)
                jA = np.eye(3) + np.diag(jr.uniform(-spec.isp_temporal_jitter,
                                                    spec.isp_temporal_jitter, size=3))
                A, C = jA @ A, jA @ C
            if spec.isp_enabled:
                fg = col @ A.T + x
                sk = col @ C.T + y
                distorted = np.where(sky[..., None], sk, fg)
            else:
                A = C = np.eye(3)
                x = y = np.zeros(3)
                distorted = col

            clean[name] = col
            images[name] = np.clip(distorted, 0.0, 1.0)
            depths[name] = depth
            masks[name] = sky
            isp[name] = {"A_fg": A.tolist(), "x_fg": x.tolist(),
                         "C_sky": C.tolist(), "y_sky": y.tolist()}

    rig = rig_true
    if spec.perturb_rot_deg > 0 or spec.perturb_trans > 0:
        rig = perturb_rig(rig_true, spec.perturb_rot_deg, spec.perturb_trans,
                          seed=int(seeds[1].generate_state(1)[0]))
    return SceneDataset(spec=spec, rig_true=rig_true, rig=rig,
                        intrinsics=[K] * n_k, image_ids=ids, images=images,
                        clean=clean, depths=depths, sky_masks=masks, isp=isp)


# ---------------------------------------------------------------------------
# Correspondences
# ---------------------------------------------------------------------------

def _view_pairs(spec: SceneSpec):
    n_t, n_k = spec.n_timestamps, len(spec.cameras)
    pairs = []
    for k in range(n_k):
        for i in range(n_t):
            for j in range(i + 1, min(i + spec.corr_same_cam_window, n_t - 1) + 1):
                pairs.append(((i, k), (j, k)))
            for l in range(n_k):
                if l == k:
                    continue
                for j in range(i, min(i + spec.corr_cross_cam_window, n_t - 1) + 1):
                    pairs.append(((i, k), (j, l)))
    return pairs


def make_correspondences(dataset: SceneDataset, spec: SceneSpec | None = None
                         ) -> CorrespondenceGraph:
    """Exact pixel matches from ground truth, plus configured noise/outliers.

    Surface points sampled in the source view are projected through the true
    poses and kept when the destination view sees the same point (depth-map
    agreement within 0.5%, comparable viewing depth). Gaussian pixel noise is
    added to both endpoints; the recorded depth_q stays the true surface
    depth. A fraction of destinations is replaced by uniform outliers.
    """
    spec = spec or dataset.spec
    K = dataset.intrinsics[0]
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(4)[2])
    margin = 2.0 + 4.0 * spec.corr_sigma_px
    max_depth = 40.0
    edges = []
    poses = {}
    for k in range(dataset.n_cameras):
        for i in range(dataset.n_timestamps):
            poses[(i, k)] = camera_pose(dataset.rig_true, i, k)

    for (i, k), (j, l) in _view_pairs(spec):
        depth_src = dataset.depths[image_id(i, k)]
        valid = np.isfinite(depth_src) & (depth_src <= max_depth)
        ys, xs = np.nonzero(valid)
        inside = ((xs >= margin) & (xs <= K.width - 1 - margin) &
                  (ys >= margin) & (ys <= K.height - 1 - margin))
        xs, ys = xs[inside], ys[inside]
        if len(xs) <= spec.corr_min_matches:
            continue
        # Judge pair overlap on a candidate budget large enough that the
        # >min_matches retention rule can trigger even at partial overlap.
        take = min(max(256, spec.corr_samples_per_pair * 4), len(xs))
        sel = rng.choice(len(xs), size=take, replace=False)
        q = np.stack([xs[sel], ys[sel]], axis=-1).astype(np.float64)
        d = depth_src[ys[sel], xs[sel]]

        p_world = poses[(i, k)].apply(unproject(K, q, d))
        p_dst_cam = se3_inverse(poses[(j, l)]).apply(p_world)
        ok = p_dst_cam[:, 2] > 1e-6
        if not ok.any():
            continue
        # Comparable depths in both views keep noise statistics well-behaved.
        ratio = np.where(ok, p_dst_cam[:, 2] / d, 0.0)
        ok &= (ratio >= 0.75) & (ratio <= 4.0 / 3.0)
        px = np.full((len(q), 2), -1e9)
        px[ok, 0] = K.fx * p_dst_cam[ok, 0] / p_dst_cam[ok, 2] + K.cx
        px[ok, 1] = K.fy * p_dst_cam[ok, 1] / p_dst_cam[ok, 2] + K.cy
        ok &= ((px[:, 0] >= margin) & (px[:, 0] <= K.width - 1 - margin) &
               (px[:, 1] >= margin) & (px[:, 1] <= K.height - 1 - margin))
        # Exact occlusion check: the first surface the destination camera sees
        # along the ray to the point must be the point itself.
        if ok.any():
            origin = poses[(j, l)].trans
            to_pt = p_world[ok] - origin
            dist = np.linalg.norm(to_pt, axis=-1)
            t_hit, _ = trace_rays(spec, np.broadcast_to(origin, to_pt.shape),
                                  to_pt / dist[:, None])
            vis = np.abs(t_hit - dist) <= 1e-6 * np.maximum(dist, 1.0)
            ok[np.nonzero(ok)[0][~vis]] = False
        if ok.sum() <= spec.corr_min_matches:
            continue
        keep = np.nonzero(ok)[0][:spec.corr_samples_per_pair]
        q_keep = q[keep]
        p_keep = px[keep]
        if spec.corr_sigma_px > 0:
            q_keep = q_keep + rng.normal(0, spec.corr_sigma_px, size=q_keep.shape)
            p_keep = p_keep + rng.normal(0, spec.corr_sigma_px, size=p_keep.shape)
            q_keep = np.clip(q_keep, 0, [K.width - 1, K.height - 1])
            p_keep = np.clip(p_keep, 0, [K.width - 1, K.height - 1])
        for idx in range(len(keep)):
            edges.append(CorrespondenceEdge(
                src=(i, k), dst=(j, l), q=q_keep[idx], p=p_keep[idx],
                depth_q=float(d[keep[idx]]), weight=1.0))

    if not edges:
        raise NoOverlapError("no surface point is co-visible in two views")
    if spec.corr_outlier_frac > 0:
        n_out = int(round(spec.corr_outlier_frac * len(edges)))
        for idx in rng.choice(len(edges), size=n_out, replace=False):
            edges[idx].p = np.array([rng.uniform(0, K.width - 1),
                                     rng.uniform(0, K.height - 1)])
    return CorrespondenceGraph(edges, dataset.n_timestamps, dataset.n_cameras)


# ---------------------------------------------------------------------------
# On-disk layout
# ---------------------------------------------------------------------------

def save_scene(dataset: SceneDataset, out_dir) -> None:
    out = Path(out_dir)
    for sub in ("images", "clean", "depth", "sky"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    dump_json(out / "scene_spec.json", spec_to_dict(dataset.spec))
    save_rig(out / "rig.json", dataset.rig, dataset.intrinsics)
    save_rig(out / "rig_true.json", dataset.rig_true, dataset.intrinsics)
    dump_json(out / "isp.json", dataset.isp)
    for name in dataset.image_ids:
        write_image(out / "images" / f"{name}.png", dataset.images[name])
        write_image(out / "clean" / f"{name}.png", dataset.clean[name])
        write_depth(out / "depth" / f"{name}.dpth", dataset.depths[name])
        write_pbm(out / "sky" / f"{name}.pbm", dataset.sky_masks[name])


def load_scene(scene_dir) -> SceneDataset:
    root = Path(scene_dir)
    spec = spec_from_dict(load_json(root / "scene_spec.json"))
    rig, intrinsics, _ = load_rig(root / "rig.json")
    rig_true, _, _ = load_rig(root / "rig_true.json")
    isp = load_json(root / "isp.json")
    ids, images, clean, depths, masks = [], {}, {}, {}, {}
    for k in range(len(spec.cameras)):
        for i in range(spec.n_timestamps):
            name = image_id(i, k)
            ids.append(name)
            images[name] = read_image(root / "images" / f"{name}.png")
            clean[name] = read_image(root / "clean" / f"{name}.png")
            depths[name] = read_depth(root / "depth" / f"{name}.dpth")
            masks[name] = read_pbm(root / "sky" / f"{name}.pbm")
    return SceneDataset(spec=spec, rig_true=rig_true, rig=rig,
                        intrinsics=intrinsics, image_ids=ids, images=images,
                        clean=clean, depths=depths, sky_masks=masks,
                        isp={k: v for k, v in isp.items()})
