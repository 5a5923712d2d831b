"""End-to-end optimization: pose-refined scene in, trained checkpoint out.

Each step samples real and virtual rays at the configured ratio, renders
them through the layered field with per-image color correction, and applies
Adam to the analytic gradients of the total objective. Virtual rays inherit
the correction codes of their source image and train with a foreground sky
bit, since only reliably-deep pixels survive warping.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyDatasetError, NonFiniteLossError, StepOutOfRangeError
from .geometry import camera_pose, pixel_rays
from .metrics import psnr, split_dataset
from .radiance import (ColorCorrection, LayeredRadianceField, loss_and_gradients,
                       save_checkpoint)
from .render import render_view, resolve_codes
from .scenegen import SceneDataset, parse_image_id, scene_bounds

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_rays: int = 4096
    real_parts: int = 4  # real:virtual ray ratio, e.g. 4:1
    virtual_parts: int = 1
    virtual_per_real: int = 9
    images_per_batch: int = 8
    n_iters: int = 8000
    warmup_iters: int = 1000
    lr_start: float = 0.008
    lr_end: float = 0.001
    lambda_sky: float = 2e-3
    gamma_reg: float = 2e-3
    grid_res: int = 64
    sky_h: int = 64
    sky_w: int = 128
    n_samples: int = 64
    use_color_correction: bool = True
    shared_decoder: bool = False
    use_split: bool = True
    # Pre-activation density init; well below zero starts the field
    # transparent so photometric gradients build surfaces instead of
    # having to burn initial fog away.
    density_init: float = -6.0
    log_every: int = 25
    eval_every: int = 500
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def config_from_file(path) -> TrainConfig:
    """Flat `key = value` text file; # starts a comment."""
    cfg = TrainConfig()
    fields = {f: type(getattr(cfg, f)) for f in cfg.to_dict()}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key == "sky_res":  # alias: "HxW" expands to sky_h / sky_w
                h, w = (int(v) for v in value.lower().split("x"))
                cfg.sky_h, cfg.sky_w = h, w
                continue
            if key not in fields:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            kind = fields[key]
            if kind is bool:
                setattr(cfg, key, value.lower() in ("1", "true", "yes", "on"))
            else:
                setattr(cfg, key, kind(value))
    return cfg


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from lr_start/10, then log-linear decay to lr_end."""
    if not (0 <= step <= cfg.n_iters):
        raise StepOutOfRangeError(f"step {step} outside [0, {cfg.n_iters}]")
    if cfg.warmup_iters > 0 and step < cfg.warmup_iters:
        frac = step / cfg.warmup_iters
        return cfg.lr_start * (0.1 + 0.9 * frac)
    decay_span = max(cfg.n_iters - cfg.warmup_iters, 1)
    frac = (step - cfg.warmup_iters) / decay_span
    return float(cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** frac)


class Adam:
    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for key, p in params.items():
            g = grads.get(key)
            if g is None:
                continue
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class _RayStore:
    """Flattened per-pixel ray data for fast batch assembly."""

    def __init__(self, dataset: SceneDataset, rig, image_ids, code_index):
        K = dataset.intrinsics[0]
        self.images = []
        for name in image_ids:
            i, k = parse_image_id(name)
            origins, dirs = pixel_rays(K, camera_pose(rig, i, k))
            self.images.append({
                "name": name,
                "origins": origins.reshape(-1, 3),
                "dirs": dirs.reshape(-1, 3),
                "targets": dataset.images[name].reshape(-1, 3),
                "m_sky": dataset.sky_masks[name].reshape(-1).astype(float),
                "code_idx": code_index.get(name, 0),
            })
        self.n_pixels = self.images[0]["origins"].shape[0] if self.images else 0


class _VirtualStore:
    """Valid warped pixels from every virtual view, flattened into ray arrays."""

    @staticmethod
    def build(views, K, code_index):
        store = _VirtualStore()
        origins, dirs, colors, codes = [], [], [], []
        store.by_source = {}
        offset = 0
        for view in views:
            vy, vx = np.nonzero(view.valid)
            if len(vy) == 0:
                continue
            R = view.pose.rotation_matrix()
            d_cam = np.stack([(vx - K.cx) / K.fx, (vy - K.cy) / K.fy,
                              np.ones(len(vx))], axis=-1)
            d_world = d_cam @ R.T
            d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
            origins.append(np.broadcast_to(view.pose.trans, d_world.shape))
            dirs.append(d_world)
            colors.append(view.image[vy, vx])
            codes.append(np.full(len(vy), code_index[view.code_ref]))
            store.by_source.setdefault(view.code_ref, []).append(
                np.arange(offset, offset + len(vy)))
            offset += len(vy)
        if origins:
            store.origins = np.concatenate(origins)
            store.dirs = np.concatenate(dirs)
            store.colors = np.concatenate(colors)
            store.codes = np.concatenate(codes)
        else:
            store.origins = np.zeros((0, 3))
            store.dirs = np.zeros((0, 3))
            store.colors = np.zeros((0, 3))
            store.codes = np.zeros(0, dtype=np.int64)
        store.by_source = {k: np.concatenate(v) for k, v in store.by_source.items()}
        return store


def make_batch(rays: _RayStore, virtual: "_VirtualStore | None",
               cfg: TrainConfig, rng: np.random.Generator,
               warned: list | None = None) -> dict:
    """Real:virtual rays at the configured ratio, exact up to rounding."""
    if not rays.images:
        raise EmptyDatasetError("no training images")
    n_img = len(rays.images)
    picks = rng.integers(0, n_img, size=min(cfg.images_per_batch, n_img))

    n_virtual = cfg.batch_rays * cfg.virtual_parts \
        // (cfg.real_parts + cfg.virtual_parts)
    pool = np.zeros(0, dtype=np.int64)
    if virtual is not None and n_virtual > 0:
        cand = [virtual.by_source[rays.images[p]["name"]] for p in picks
                if rays.images[p]["name"] in virtual.by_source]
        if cand:
            pool = np.concatenate(cand)
    if len(pool) == 0:
        if n_virtual > 0 and warned is not None and not warned:
            log.warning("no virtual rays available; batch falls back to real rays")
            warned.append(True)
        n_virtual = 0
    n_real = cfg.batch_rays - n_virtual

    img_sel = picks[rng.integers(0, len(picks), size=n_real)]
    pix_sel = rng.integers(0, rays.n_pixels, size=n_real)
    origins = np.empty((cfg.batch_rays, 3))
    dirs = np.empty((cfg.batch_rays, 3))
    targets = np.empty((cfg.batch_rays, 3))
    m_sky = np.empty(cfg.batch_rays)
    code_idx = np.empty(cfg.batch_rays, dtype=np.int64)
    for local in np.unique(img_sel):
        sel = img_sel == local
        img = rays.images[local]
        px = pix_sel[sel]
        origins[: n_real][sel] = img["origins"][px]
        dirs[: n_real][sel] = img["dirs"][px]
        targets[: n_real][sel] = img["targets"][px]
        m_sky[: n_real][sel] = img["m_sky"][px]
        code_idx[: n_real][sel] = img["code_idx"]
    if n_virtual > 0:
        v_sel = pool[rng.integers(0, len(pool), size=n_virtual)]
        origins[n_real:] = virtual.origins[v_sel]
        dirs[n_real:] = virtual.dirs[v_sel]
        targets[n_real:] = virtual.colors[v_sel]
        m_sky[n_real:] = 0.0  # warped pixels come from finite-depth surfaces
        code_idx[n_real:] = virtual.codes[v_sel]
    return {"origins": origins, "dirs": dirs, "targets": targets,
            "m_sky": m_sky, "code_idx": code_idx, "n_real": n_real,
            "n_virtual": n_virtual}


def train(dataset: SceneDataset, cfg: TrainConfig, virtual_views=None,
          checkpoint_path=None):
    """Run the optimization; returns (field, cc, metrics records, info)."""
    rng = np.random.default_rng(cfg.seed)
    K = dataset.intrinsics[0]

    if cfg.use_split:
        train_ids, test_ids = split_dataset(dataset)
    else:
        train_ids, test_ids = list(dataset.image_ids), []

    cc = None
    code_index = {}
    if cfg.use_color_correction:
        cc = ColorCorrection(train_ids, seed=cfg.seed,
                             shared_decoder=cfg.shared_decoder)
        code_index = cc.index
    else:
        code_index = {name: 0 for name in train_ids}

    lo, hi = scene_bounds(dataset.spec)
    extent = hi - lo
    res = tuple(max(8, int(round(cfg.grid_res * e / extent.max())))
                for e in extent)  # voxels scale with the box, longest = grid_res
    fieldm = LayeredRadianceField.create(res, lo, hi,
                                         sky_res=(cfg.sky_h, cfg.sky_w),
                                         density_init=cfg.density_init)

    rays = _RayStore(dataset, dataset.rig, train_ids, code_index)

    virtual = None
    virtual_sources: list = []
    if virtual_views:
        usable = [v for v in virtual_views if v.code_ref in set(train_ids)]
        virtual = _VirtualStore.build(usable, K, code_index)
        virtual_sources = sorted({v.code_ref for v in usable})

    params = {"fg_grid": fieldm.fg_grid, "sky_map": fieldm.sky_map}
    if cc is not None:
        params.update(cc.parameters())
    adam = Adam(params)

    train_poses = [(name, camera_pose(dataset.rig, *parse_image_id(name)))
                   for name in train_ids]

    def held_out_psnr():
        if not test_ids:
            return None
        vals = []
        for name in test_ids:
            i, k = parse_image_id(name)
            pose = camera_pose(dataset.rig, i, k)
            if cc is not None:
                # Camera views use the nearest training image of the same
                # camera: its codes match the view's imaging pipeline.
                same_cam = [(n, p) for n, p in train_poses
                            if parse_image_id(n)[1] == k] or train_poses
                fg_tf, sky_tf, _ = resolve_codes(cc, "nearest", pose, same_cam)
                codes = (fg_tf, sky_tf)
            else:
                codes = None
            img = render_view(fieldm, cc, pose, K, cfg.n_samples, codes=codes)
            vals.append(psnr(img, dataset.images[name]))
        return float(np.mean(vals))

    metrics = []
    warned: list = []
    try:
        for step in range(cfg.n_iters):
            lr = lr_at(step, cfg)
            batch = make_batch(rays, virtual, cfg, rng, warned)
            jitter = rng.random((cfg.batch_rays, cfg.n_samples))
            parts, grads = loss_and_gradients(
                fieldm, cc, batch, cfg.n_samples, lambda_sky=cfg.lambda_sky,
                gamma_reg=cfg.gamma_reg, jitter=jitter)
            adam.step(params, grads, lr)
            last = step == cfg.n_iters - 1
            if step % cfg.log_every == 0 or last:
                record = {"step": step, "loss": parts["loss"],
                          "loss_pho": parts["pho"], "loss_sky": parts["sky"],
                          "loss_reg": parts["reg"], "lr": lr, "psnr_val": None}
                if cfg.eval_every > 0 and (step % cfg.eval_every == 0 or last):
                    record["psnr_val"] = held_out_psnr()
                metrics.append(record)
    except NonFiniteLossError:
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, fieldm, cc, cfg.to_dict())
        raise

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, fieldm, cc, cfg.to_dict())
    info = {"train_ids": train_ids, "test_ids": test_ids,
            "virtual_sources": virtual_sources,
            "final_psnr_val": metrics[-1]["psnr_val"] if metrics else None}
    return fieldm, cc, metrics, info
