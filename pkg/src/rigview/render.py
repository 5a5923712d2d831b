"""View rendering from a trained checkpoint: camera views and panoramas."""

from __future__ import annotations

import numpy as np

from .geometry import Intrinsics, SE3Pose, pixel_rays
from .radiance import (ColorCorrection, LayeredRadianceField, corrected_pixel,
                       render_rays)


def resolve_codes(cc: ColorCorrection | None, policy: str, pose: SE3Pose | None = None,
                  candidates: list | None = None):
    """Pick the affine transforms to render a view with.

    policy is "identity", "image:<id>", or "nearest" (the training image
    whose camera center is closest to the requested pose; candidates is a
    list of (image_id, SE3Pose)). Returns ((A, x), (C, y), chosen id).
    """
    identity = ((np.eye(3), np.zeros(3)), (np.eye(3), np.zeros(3)), None)
    if cc is None or policy == "identity":
        return identity
    if policy.startswith("image:"):
        name = policy.split(":", 1)[1]
        return cc.decode(name, "fg"), cc.decode(name, "sky"), name
    if policy == "nearest":
        if not candidates:
            raise ValueError("nearest-code policy needs candidate poses")
        dists = [(float(np.linalg.norm(p.trans - pose.trans)), name)
                 for name, p in candidates if name in cc.index]
        if not dists:
            raise ValueError("no candidate has registered codes")
        _, name = min(dists)
        return cc.decode(name, "fg"), cc.decode(name, "sky"), name
    raise ValueError(f"unknown code policy {policy!r}")


def render_view(field: LayeredRadianceField, cc: ColorCorrection | None,
                pose: SE3Pose, K: Intrinsics, n_samples: int,
                codes=None, chunk: int = 32768) -> np.ndarray:
    """Render one camera view; output clamped to [0, 1] for export.

    codes is the ((A, x), (C, y)) pair from resolve_codes; None renders
    uncorrected colors.
    """
    if codes is None:
        fg_tf = (np.eye(3), np.zeros(3))
        sky_tf = (np.eye(3), np.zeros(3))
    else:
        fg_tf, sky_tf = codes
    origins, dirs = pixel_rays(K, pose)
    flat_o = origins.reshape(-1, 3)
    flat_d = dirs.reshape(-1, 3)
    out = np.empty((flat_o.shape[0], 3))
    for start in range(0, flat_o.shape[0], chunk):
        sl = slice(start, start + chunk)
        r, _ = render_rays(field, flat_o[sl], flat_d[sl], n_samples)
        n = r["o_fg"].shape[0]
        a_b = np.broadcast_to(fg_tf[0], (n, 3, 3))
        x_b = np.broadcast_to(fg_tf[1], (n, 3))
        c_b = np.broadcast_to(sky_tf[0], (n, 3, 3))
        y_b = np.broadcast_to(sky_tf[1], (n, 3))
        out[sl] = corrected_pixel(r["i_fg"], r["o_fg"], r["i_sky"],
                                  (a_b, x_b), (c_b, y_b))
    return np.clip(out.reshape(K.height, K.width, 3), 0.0, 1.0)


def panorama_directions(width: int, height: int) -> np.ndarray:
    """Equirect ray directions covering azimuth 360 deg, elevation (-90, 90)."""
    az = (np.arange(width) + 0.5) / width * 2 * np.pi - np.pi
    el = 0.5 * np.pi - (np.arange(height) + 0.5) / height * np.pi
    az_g, el_g = np.meshgrid(az, el)
    return np.stack([np.cos(el_g) * np.cos(az_g),
                     np.cos(el_g) * np.sin(az_g),
                     np.sin(el_g)], axis=-1)


def render_panorama(field: LayeredRadianceField, cc: ColorCorrection | None,
                    origin: np.ndarray, width: int, height: int,
                    n_samples: int, codes=None, chunk: int = 32768) -> np.ndarray:
    """Equirectangular render from a single point; clamped to [0, 1]."""
    dirs = panorama_directions(width, height).reshape(-1, 3)
    origins = np.broadcast_to(np.asarray(origin, float), dirs.shape)
    if codes is None:
        fg_tf = (np.eye(3), np.zeros(3))
        sky_tf = (np.eye(3), np.zeros(3))
    else:
        fg_tf, sky_tf = codes
    out = np.empty((dirs.shape[0], 3))
    for start in range(0, dirs.shape[0], chunk):
        sl = slice(start, start + chunk)
        r, _ = render_rays(field, origins[sl], dirs[sl], n_samples)
        n = r["o_fg"].shape[0]
        out[sl] = corrected_pixel(
            r["i_fg"], r["o_fg"], r["i_sky"],
            (np.broadcast_to(fg_tf[0], (n, 3, 3)), np.broadcast_to(fg_tf[1], (n, 3))),
            (np.broadcast_to(sky_tf[0], (n, 3, 3)), np.broadcast_to(sky_tf[1], (n, 3))))
    return np.clip(out.reshape(height, width, 3), 0.0, 1.0)
