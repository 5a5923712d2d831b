"""Differentiable layered scene model.

A dense foreground voxel grid (pre-activation density + RGB, softplus /
sigmoid activated, trilinearly interpolated) is alpha-composited along rays
and blended over a direction-indexed equirectangular sky map:

    I(r) = I_fg(r) + (1 - o_fg) I_sky(r),   o_fg = sum_n T_n alpha_n

Per-image latent codes decode through small MLPs into residual affine color
transforms (A, x) for the foreground layer and (C, y) for the sky layer.
All gradients (grid, sky map, latents, decoder weights) are computed in
closed form; finite differences are the test oracle, not the implementation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (BadCheckpointError, InvalidRayError, NonFiniteLossError,
                     ShapeMismatchError, UnknownImageError)

CHECKPOINT_MAGIC = "rigview-checkpoint"
CHECKPOINT_VERSION = 1


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


# ---------------------------------------------------------------------------
# Field
# ---------------------------------------------------------------------------

@dataclass
class LayeredRadianceField:
    """Foreground voxel grid over an axis-aligned box plus a sky map.

    fg_grid is (Rx, Ry, Rz, 4) pre-activations: channel 0 is density
    (softplus), channels 1:4 are RGB (sigmoid). sky_map is (Hs, Ws, 3)
    pre-activation RGB indexed by (elevation row, azimuth column).
    """

    fg_grid: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    sky_map: np.ndarray

    @staticmethod
    def create(grid_res, lo, hi, sky_res=(32, 64), density_init=-2.0,
               color_init=0.0, sky_init=0.0) -> "LayeredRadianceField":
        if np.isscalar(grid_res):
            grid_res = (int(grid_res),) * 3
        grid = np.zeros(tuple(grid_res) + (4,))
        grid[..., 0] = density_init
        grid[..., 1:] = color_init
        sky = np.full(tuple(sky_res) + (3,), float(sky_init))
        return LayeredRadianceField(fg_grid=grid, lo=np.asarray(lo, float),
                                    hi=np.asarray(hi, float), sky_map=sky)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit
    near: float
    far: float

    def __post_init__(self):
        d = np.asarray(self.direction, float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise InvalidRayError("ray direction must be unit length")
        if not (0 < self.near < self.far):
            raise InvalidRayError("ray needs 0 < near < far")


def ray_box_spans(origins, dirs, lo, hi, min_near=1e-4):
    """Per-ray [near, far] over the box; hit = False when the ray misses."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    t_lo = (lo - origins) * inv
    t_hi = (hi - origins) * inv
    t0 = np.nanmax(np.minimum(t_lo, t_hi), axis=-1)
    t1 = np.nanmin(np.maximum(t_lo, t_hi), axis=-1)
    near = np.maximum(t0, min_near)
    hit = t1 > near + 1e-9
    return near, t1, hit


def _trilinear_setup(points, lo, hi, res):
    """Corner indices (N, 8) into the flattened grid and weights (N, 8)."""
    scale = (np.asarray(res, float) - 1.0) / (hi - lo)
    g = (points - lo) * scale
    g = np.clip(g, 0.0, np.asarray(res, float) - 1.0 - 1e-9)
    i0 = g.astype(np.int64)
    i0 = np.minimum(i0, np.asarray(res) - 2)
    f = g - i0
    rx, ry, rz = res
    base = (i0[..., 0] * ry + i0[..., 1]) * rz + i0[..., 2]
    offs = np.array([(dx * ry + dy) * rz + dz
                     for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)])
    idx = base[..., None] + offs
    wx = np.stack([1 - f[..., 0], f[..., 0]], -1)
    wy = np.stack([1 - f[..., 1], f[..., 1]], -1)
    wz = np.stack([1 - f[..., 2], f[..., 2]], -1)
    w = (wx[..., :, None, None] * wy[..., None, :, None]
         * wz[..., None, None, :]).reshape(points.shape[:-1] + (8,))
    return idx, w


def _sky_setup(dirs, sky_shape):
    """Bilinear texel indices (N, 4) and weights (N, 4) on the equirect map."""
    hs, ws = sky_shape
    az = np.arctan2(dirs[..., 1], dirs[..., 0])  # [-pi, pi]
    el = np.arcsin(np.clip(dirs[..., 2], -1.0, 1.0))
    u = (az + np.pi) / (2 * np.pi) * ws - 0.5  # azimuth wraps
    v = (0.5 * np.pi - el) / np.pi * hs - 0.5  # zenith at row 0
    v = np.clip(v, 0.0, hs - 1.0 - 1e-9)
    u0 = np.floor(u).astype(np.int64)
    v0 = v.astype(np.int64)
    fu = u - u0
    fv = v - v0
    u0m = np.mod(u0, ws)
    u1m = np.mod(u0 + 1, ws)
    v1 = np.minimum(v0 + 1, hs - 1)
    idx = np.stack([v0 * ws + u0m, v0 * ws + u1m,
                    v1 * ws + u0m, v1 * ws + u1m], axis=-1)
    w = np.stack([(1 - fu) * (1 - fv), fu * (1 - fv),
                  (1 - fu) * fv, fu * fv], axis=-1)
    return idx, w


def render_rays(field: LayeredRadianceField, origins: np.ndarray,
                dirs: np.ndarray, n_samples: int, jitter: np.ndarray | None = None,
                t_clip: tuple | None = None):
    """Batched volume rendering.

    jitter is (N, n_samples) in [0, 1) (stratified offsets); None renders at
    bin midpoints. t_clip optionally restricts sampling to [near, far] before
    intersecting the grid box. Returns (outputs, cache) where cache feeds
    backward_rays.
    """
    origins = np.atleast_2d(np.asarray(origins, float))
    dirs = np.atleast_2d(np.asarray(dirs, float))
    n = origins.shape[0]
    s = int(n_samples)
    near, far, hit = ray_box_spans(origins, dirs, field.lo, field.hi)
    if t_clip is not None:
        near = np.maximum(near, t_clip[0])
        far = np.minimum(far, t_clip[1])
        hit = hit & (far > near + 1e-9)
    near = np.where(hit, near, 1.0)  # keep sample points finite on misses
    span = np.where(hit, far - near, 0.0)
    delta = span / s  # constant interval length per ray

    if jitter is None:
        jitter = np.full((n, s), 0.5)
    ts = near[:, None] + (np.arange(s) + jitter) * delta[:, None]
    pts = origins[:, None, :] + ts[..., None] * dirs[:, None, :]

    res = field.fg_grid.shape[:3]
    idx, w_tri = _trilinear_setup(pts.reshape(-1, 3), field.lo, field.hi, res)
    flat = field.fg_grid.reshape(-1, 4)
    pre = np.einsum("pc,pcq->pq", w_tri, flat[idx]).reshape(n, s, 4)

    sig_d = sigmoid(pre[..., 0])  # softplus'(x) = sigmoid(x)
    density = softplus(pre[..., 0]) * hit[:, None]
    color = sigmoid(pre[..., 1:])

    one_minus_alpha = np.exp(-density * delta[:, None])
    alpha = 1.0 - one_minus_alpha
    trans = np.cumprod(np.concatenate(
        [np.ones((n, 1)), one_minus_alpha[:, :-1]], axis=1), axis=1)
    weights = trans * alpha
    o_fg = weights.sum(axis=1)
    i_fg = np.einsum("ns,nsc->nc", weights, color)
    depth = np.einsum("ns,ns->n", weights, ts) / np.maximum(o_fg, 1e-12)

    sky_idx, sky_w = _sky_setup(dirs, field.sky_map.shape[:2])
    sky_flat = field.sky_map.reshape(-1, 3)
    sky_pre = np.einsum("nq,nqc->nc", sky_w, sky_flat[sky_idx])
    i_sky = sigmoid(sky_pre)

    outputs = {"i_fg": i_fg, "o_fg": o_fg, "i_sky": i_sky, "depth": depth,
               "weights": weights, "trans": trans, "alpha": alpha, "ts": ts}
    cache = {"idx": idx, "w_tri": w_tri, "sig_d": sig_d, "color": color,
             "alpha": alpha, "trans": trans, "weights": weights,
             "one_minus_alpha": one_minus_alpha, "delta": delta, "hit": hit,
             "sky_idx": sky_idx, "sky_w": sky_w, "i_sky": i_sky,
             "n": n, "s": s}
    return outputs, cache


def backward_rays(field: LayeredRadianceField, cache: dict,
                  d_i_fg: np.ndarray, d_o_fg: np.ndarray, d_i_sky: np.ndarray):
    """Gradients of the rendered quantities w.r.t. grid and sky pre-activations.

    Inputs are upstream gradients per ray: d_i_fg (N, 3), d_o_fg (N,),
    d_i_sky (N, 3). Returns {"fg_grid": ..., "sky_map": ...}; voxels never
    touched by a sample keep zero gradient. Accumulation order is fixed, so
    results are bit-reproducible.
    """
    n, s = cache["n"], cache["s"]
    weights, trans, alpha = cache["weights"], cache["trans"], cache["alpha"]
    color = cache["color"]

    # dL/dw_n = c_n . dL/dI_fg + dL/do_fg   (depth output carries no loss)
    g_w = np.einsum("nsc,nc->ns", color, d_i_fg) + d_o_fg[:, None]
    d_color = weights[..., None] * d_i_fg[:, None, :]

    # dL/dalpha_n = T_n g_n - (sum_{m>n} w_m g_m) / (1 - alpha_n)
    wg = weights * g_w
    suffix = np.cumsum(wg[:, ::-1], axis=1)[:, ::-1] - wg
    one_minus = np.maximum(cache["one_minus_alpha"], 1e-12)
    d_alpha = trans * g_w - suffix / one_minus
    d_density = d_alpha * cache["one_minus_alpha"] * cache["delta"][:, None]
    d_density *= cache["hit"][:, None]

    d_pre = np.empty((n, s, 4))
    d_pre[..., 0] = d_density * cache["sig_d"]
    d_pre[..., 1:] = d_color * color * (1.0 - color)

    contrib = cache["w_tri"][..., None] * d_pre.reshape(-1, 1, 4)
    flat_idx = cache["idx"].reshape(-1)
    n_vox = field.fg_grid.size // 4
    grad_grid = np.stack(
        [np.bincount(flat_idx, weights=contrib[..., c].ravel(), minlength=n_vox)
         for c in range(4)], axis=-1)

    d_sky_pre = d_i_sky * cache["i_sky"] * (1.0 - cache["i_sky"])
    sky_contrib = cache["sky_w"][..., None] * d_sky_pre[:, None, :]
    sky_idx = cache["sky_idx"].reshape(-1)
    n_tex = field.sky_map.size // 3
    grad_sky = np.stack(
        [np.bincount(sky_idx, weights=sky_contrib[..., c].ravel(),
                     minlength=n_tex) for c in range(3)], axis=-1)

    return {"fg_grid": grad_grid.reshape(field.fg_grid.shape),
            "sky_map": grad_sky.reshape(field.sky_map.shape)}


def render_ray(field: LayeredRadianceField, ray: Ray, n_samples: int):
    """Single-ray contract: (I_fg, o_fg, I_sky, depth) at bin midpoints.

    Sampling spans the ray's [near, far] clipped to the grid box.
    """
    origins = np.asarray(ray.origin, float)[None, :]
    dirs = np.asarray(ray.direction, float)[None, :]
    out, _ = render_rays(field, origins, dirs, n_samples,
                         t_clip=(ray.near, ray.far))
    return out["i_fg"][0], float(out["o_fg"][0]), out["i_sky"][0], float(out["depth"][0])


def composite(i_fg, o_fg, i_sky):
    """Layer blending: I_fg + (1 - o_fg) * I_sky."""
    i_fg = np.asarray(i_fg, float)
    i_sky = np.asarray(i_sky, float)
    o_fg = np.asarray(o_fg, float)
    if o_fg.ndim == 0:
        return i_fg + (1.0 - float(o_fg)) * i_sky
    return i_fg + (1.0 - o_fg)[..., None] * i_sky


# ---------------------------------------------------------------------------
# Per-image color correction
# ---------------------------------------------------------------------------

def _mlp_init(rng, sizes):
    """He-initialized hidden layers; the output layer starts at exactly zero
    so a fresh decoder emits identity transforms."""
    weights, biases = [], []
    for li in range(len(sizes) - 1):
        fan_in, fan_out = sizes[li], sizes[li + 1]
        if li == len(sizes) - 2:
            w = np.zeros((fan_out, fan_in))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return weights, biases


def _mlp_forward(weights, biases, z):
    """z is (B, in). Returns (out (B, out), activations for backward)."""
    acts = [z]
    h = z
    for li in range(len(weights) - 1):
        h = np.maximum(h @ weights[li].T + biases[li], 0.0)
        acts.append(h)
    out = h @ weights[-1].T + biases[-1]
    return out, acts


def _mlp_backward(weights, acts, d_out):
    """Returns (weight grads, bias grads, d_input)."""
    grads_w = [None] * len(weights)
    grads_b = [None] * len(weights)
    g = d_out
    for li in range(len(weights) - 1, -1, -1):
        grads_w[li] = g.T @ acts[li]
        grads_b[li] = g.sum(axis=0)
        g = g @ weights[li]
        if li > 0:
            g = g * (acts[li] > 0)
    return grads_w, grads_b, g


class ColorCorrection:
    """Latent codes per training image plus decoders to affine transforms.

    Separate decoders for the foreground and sky layers by default; pass
    shared_decoder=True to reuse one (the layers then differ only through
    their codes).
    """

    def __init__(self, image_ids, latent_dim=4, hidden=256, n_hidden=3,
                 seed=0, shared_decoder=False, code_scale=0.1):
        self.image_ids = list(image_ids)
        self.index = {name: i for i, name in enumerate(self.image_ids)}
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.n_hidden = n_hidden
        self.shared_decoder = shared_decoder
        rng = np.random.default_rng(seed)
        m = len(self.image_ids)
        self.fg_codes = rng.normal(0.0, code_scale, size=(m, latent_dim))
        self.sky_codes = rng.normal(0.0, code_scale, size=(m, latent_dim))
        sizes = [latent_dim] + [hidden] * n_hidden + [12]
        self.fg_weights, self.fg_biases = _mlp_init(rng, sizes)
        if shared_decoder:
            self.sky_weights, self.sky_biases = self.fg_weights, self.fg_biases
        else:
            self.sky_weights, self.sky_biases = _mlp_init(rng, sizes)

    def _check(self, image_id):
        if image_id not in self.index:
            raise UnknownImageError(f"no correction codes for {image_id!r}")
        return self.index[image_id]

    def decode_batch(self, indices, layer):
        codes = (self.fg_codes if layer == "fg" else self.sky_codes)[indices]
        weights = self.fg_weights if layer == "fg" or self.shared_decoder \
            else self.sky_weights
        biases = self.fg_biases if layer == "fg" or self.shared_decoder \
            else self.sky_biases
        out, acts = _mlp_forward(weights, biases, codes)
        mat = np.eye(3) + out[:, :9].reshape(-1, 3, 3)
        off = out[:, 9:]
        return mat, off, acts

    def decode(self, image_id, layer):
        """(3x3 transform, offset) for one image and layer ("fg" or "sky")."""
        idx = self._check(image_id)
        mat, off, _ = self.decode_batch(np.array([idx]), layer)
        return mat[0], off[0]

    def parameters(self):
        params = {"fg_codes": self.fg_codes, "sky_codes": self.sky_codes}
        for li, (w, b) in enumerate(zip(self.fg_weights, self.fg_biases)):
            params[f"fg_dec_w{li}"] = w
            params[f"fg_dec_b{li}"] = b
        if not self.shared_decoder:
            for li, (w, b) in enumerate(zip(self.sky_weights, self.sky_biases)):
                params[f"sky_dec_w{li}"] = w
                params[f"sky_dec_b{li}"] = b
        return params


def decode_correction(cc: ColorCorrection, image_id: str, layer: str):
    return cc.decode(image_id, layer)


def corrected_pixel(i_fg, o_fg, i_sky, fg_tf, sky_tf):
    """A I_fg + x + (1 - o_fg)(C I_sky + y); unclamped, batched or single."""
    a_mat, x = fg_tf
    c_mat, y = sky_tf
    i_fg = np.asarray(i_fg, float)
    if i_fg.ndim == 1:
        return a_mat @ i_fg + x + (1.0 - o_fg) * (c_mat @ np.asarray(i_sky) + y)
    fg = np.einsum("nab,nb->na", a_mat, i_fg) + x
    sky = np.einsum("nab,nb->na", c_mat, np.asarray(i_sky)) + y
    return fg + (1.0 - np.asarray(o_fg))[:, None] * sky


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

EPS_SKY = 1e-5


def photometric_loss(rendered: np.ndarray, target: np.ndarray) -> float:
    """Mean over rays of the squared L2 color error."""
    rendered = np.atleast_2d(rendered)
    target = np.atleast_2d(target)
    if rendered.shape != target.shape:
        raise ShapeMismatchError("rendered/target shapes differ")
    return float(np.mean(np.sum((rendered - target) ** 2, axis=-1)))


def sky_loss(o_fg, m_sky) -> float:
    """Binary cross-entropy pushing o_fg to 0 on sky and 1 on foreground.

    Mean over rays when given arrays.
    """
    o = np.clip(np.asarray(o_fg, float), EPS_SKY, 1.0 - EPS_SKY)
    m = np.asarray(m_sky, float)
    return float(np.mean(-m * np.log(1.0 - o) - (1.0 - m) * np.log(o)))


def reg_loss(cc: ColorCorrection, image_id: str) -> float:
    """L1 pull of both affine transforms toward identity."""
    a_mat, x = cc.decode(image_id, "fg")
    c_mat, y = cc.decode(image_id, "sky")
    return float(np.abs(a_mat - np.eye(3)).sum() + np.abs(c_mat - np.eye(3)).sum()
                 + np.abs(x).sum() + np.abs(y).sum())


def total_loss(pho: float, sky: float, reg: float,
               lambda_sky: float = 2e-3, gamma_reg: float = 2e-3) -> float:
    out = pho + lambda_sky * sky + gamma_reg * reg
    if not np.isfinite(out):
        raise NonFiniteLossError(f"loss is not finite: {pho}, {sky}, {reg}")
    return float(out)


# ---------------------------------------------------------------------------
# Full training step gradient
# ---------------------------------------------------------------------------

def loss_and_gradients(field: LayeredRadianceField, cc: ColorCorrection | None,
                       batch: dict, n_samples: int,
                       lambda_sky: float = 2e-3, gamma_reg: float = 2e-3,
                       jitter: np.ndarray | None = None):
    """Forward + reverse pass of the total objective over one ray batch.

    batch holds origins (N,3), dirs (N,3), targets (N,3), m_sky (N,), and
    code_idx (N,) rows into cc (ignored when cc is None: identity correction).
    Returns (loss parts dict, grads dict keyed like the parameter tree).
    """
    origins, dirs = batch["origins"], batch["dirs"]
    targets, m_sky = batch["targets"], batch["m_sky"]
    n = origins.shape[0]
    out, cache = render_rays(field, origins, dirs, n_samples, jitter=jitter)
    i_fg, o_fg, i_sky = out["i_fg"], out["o_fg"], out["i_sky"]

    use_cc = cc is not None
    if use_cc:
        code_idx = batch["code_idx"]
        uniq, inv = np.unique(code_idx, return_inverse=True)
        a_u, x_u, fg_acts = cc.decode_batch(uniq, "fg")
        c_u, y_u, sky_acts = cc.decode_batch(uniq, "sky")
        a_mat, x = a_u[inv], x_u[inv]
        c_mat, y = c_u[inv], y_u[inv]
    else:
        a_mat = np.broadcast_to(np.eye(3), (n, 3, 3))
        x = np.zeros((n, 3))
        c_mat, y = a_mat, x

    sky_term = np.einsum("nab,nb->na", c_mat, i_sky) + y
    rendered = (np.einsum("nab,nb->na", a_mat, i_fg) + x
                + (1.0 - o_fg)[:, None] * sky_term)

    pho = photometric_loss(rendered, targets)
    sky = sky_loss(o_fg, m_sky)
    if use_cc:
        reg_per = (np.abs(a_u - np.eye(3)).sum(axis=(1, 2)) + np.abs(x_u).sum(axis=1)
                   + np.abs(c_u - np.eye(3)).sum(axis=(1, 2)) + np.abs(y_u).sum(axis=1))
        reg = float(reg_per.mean())
    else:
        reg = 0.0
    loss = total_loss(pho, sky, reg, lambda_sky, gamma_reg)

    # Backward.
    g_out = 2.0 * (rendered - targets) / n  # d pho / d rendered
    d_i_fg = np.einsum("nba,nb->na", a_mat, g_out)
    d_o_fg = -np.einsum("na,na->n", sky_term, g_out)
    d_i_sky = (1.0 - o_fg)[:, None] * np.einsum("nba,nb->na", c_mat, g_out)

    o_clip = np.clip(o_fg, EPS_SKY, 1.0 - EPS_SKY)
    in_range = (o_fg > EPS_SKY) & (o_fg < 1.0 - EPS_SKY)
    d_o_fg = d_o_fg + lambda_sky * in_range * (
        m_sky / (1.0 - o_clip) - (1.0 - m_sky) / o_clip) / n

    grads = backward_rays(field, cache, d_i_fg, d_o_fg, d_i_sky)

    if use_cc:
        m = len(uniq)
        one_minus_o = (1.0 - o_fg)[:, None]
        d_a = np.zeros((m, 3, 3))
        d_x = np.zeros((m, 3))
        d_c = np.zeros((m, 3, 3))
        d_y = np.zeros((m, 3))
        np.add.at(d_a, inv, g_out[:, :, None] * i_fg[:, None, :])
        np.add.at(d_x, inv, g_out)
        np.add.at(d_c, inv, (one_minus_o * g_out)[:, :, None] * i_sky[:, None, :])
        np.add.at(d_y, inv, one_minus_o * g_out)
        scale = gamma_reg / m
        d_a += scale * np.sign(a_u - np.eye(3))
        d_x += scale * np.sign(x_u)
        d_c += scale * np.sign(c_u - np.eye(3))
        d_y += scale * np.sign(y_u)

        d_fg_out = np.concatenate([d_a.reshape(m, 9), d_x], axis=1)
        d_sky_out = np.concatenate([d_c.reshape(m, 9), d_y], axis=1)
        fg_w = cc.fg_weights
        sky_w = cc.fg_weights if cc.shared_decoder else cc.sky_weights
        gw_f, gb_f, d_fg_codes = _mlp_backward(fg_w, fg_acts, d_fg_out)
        gw_s, gb_s, d_sky_codes = _mlp_backward(sky_w, sky_acts, d_sky_out)

        grads["fg_codes"] = np.zeros_like(cc.fg_codes)
        grads["sky_codes"] = np.zeros_like(cc.sky_codes)
        grads["fg_codes"][uniq] = d_fg_codes
        grads["sky_codes"][uniq] = d_sky_codes
        for li in range(len(fg_w)):
            if cc.shared_decoder:
                grads[f"fg_dec_w{li}"] = gw_f[li] + gw_s[li]
                grads[f"fg_dec_b{li}"] = gb_f[li] + gb_s[li]
            else:
                grads[f"fg_dec_w{li}"] = gw_f[li]
                grads[f"fg_dec_b{li}"] = gb_f[li]
                grads[f"sky_dec_w{li}"] = gw_s[li]
                grads[f"sky_dec_b{li}"] = gb_s[li]

    parts = {"loss": loss, "pho": pho, "sky": sky, "reg": reg,
             "rendered": rendered, "o_fg": o_fg}
    return parts, grads


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, field: LayeredRadianceField, cc: ColorCorrection | None,
                    config: dict | None = None) -> None:
    arrays = {
        "magic": np.array(CHECKPOINT_MAGIC),
        "version": np.array(CHECKPOINT_VERSION),
        "fg_grid": field.fg_grid, "lo": field.lo, "hi": field.hi,
        "sky_map": field.sky_map,
        "config_json": np.array(json.dumps(config or {}, sort_keys=True)),
    }
    if cc is not None:
        arrays["image_ids"] = np.array(cc.image_ids)
        arrays["fg_codes"] = cc.fg_codes
        arrays["sky_codes"] = cc.sky_codes
        arrays["shared_decoder"] = np.array(cc.shared_decoder)
        for li, (w, b) in enumerate(zip(cc.fg_weights, cc.fg_biases)):
            arrays[f"fg_dec_w{li}"] = w
            arrays[f"fg_dec_b{li}"] = b
        if not cc.shared_decoder:
            for li, (w, b) in enumerate(zip(cc.sky_weights, cc.sky_biases)):
                arrays[f"sky_dec_w{li}"] = w
                arrays[f"sky_dec_b{li}"] = b
    with open(path, "wb") as f:  # keep the exact filename, no .npz appended
        np.savez(f, **arrays)


def load_checkpoint(path):
    """Returns (field, cc or None, config dict)."""
    try:
        data = np.load(path, allow_pickle=False)
    except Exception as exc:
        raise BadCheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "magic" not in data or str(data["magic"]) != CHECKPOINT_MAGIC:
        raise BadCheckpointError(f"{path} is not a checkpoint file")
    if int(data["version"]) != CHECKPOINT_VERSION:
        raise BadCheckpointError(f"unsupported checkpoint version {data['version']}")
    field = LayeredRadianceField(fg_grid=data["fg_grid"], lo=data["lo"],
                                 hi=data["hi"], sky_map=data["sky_map"])
    cc = None
    if "image_ids" in data:
        ids = [str(s) for s in data["image_ids"]]
        shared = bool(data["shared_decoder"])
        n_hidden = sum(1 for k in data.files if k.startswith("fg_dec_w")) - 1
        cc = ColorCorrection(ids, latent_dim=data["fg_codes"].shape[1],
                             hidden=data["fg_dec_w0"].shape[0],
                             n_hidden=n_hidden, shared_decoder=shared)
        cc.fg_codes = data["fg_codes"]
        cc.sky_codes = data["sky_codes"]
        cc.fg_weights = [data[f"fg_dec_w{li}"] for li in range(n_hidden + 1)]
        cc.fg_biases = [data[f"fg_dec_b{li}"] for li in range(n_hidden + 1)]
        if shared:
            cc.sky_weights, cc.sky_biases = cc.fg_weights, cc.fg_biases
        else:
            cc.sky_weights = [data[f"sky_dec_w{li}"] for li in range(n_hidden + 1)]
            cc.sky_biases = [data[f"sky_dec_b{li}"] for li in range(n_hidden + 1)]
    config = json.loads(str(data["config_json"]))
    return field, cc, config
