"""Spatiotemporally constrained pose refinement.

Bundle adjustment over per-timestamp ego poses and per-camera rig offsets,
driven by pixel correspondences across (timestamp, camera) pairs. For an edge
from source view (i, k) to destination view (j, l) with source pixel q at
depth d and destination pixel p, the residual is

    r = p - project_l( (T_j D_l)^-1 T_i D_k unproject_k(q, d) )

Poses update by left-multiplied local increments (axis-angle + translation),
point depths are parameterized as inverse depth and eliminated with a Schur
complement, and a Huber loss downweights outliers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergedError, EmptyGraphError, PointBehindCameraError
from .geometry import Intrinsics, RigState, quat_to_matrix, se3_compose, se3_exp

_MIN_Z = 1e-8


@dataclass
class CorrespondenceEdge:
    src: tuple[int, int]  # (timestamp i, camera k)
    dst: tuple[int, int]  # (timestamp j, camera l)
    q: np.ndarray  # pixel in the source image
    p: np.ndarray  # pixel in the destination image
    depth_q: float  # scene depth of q in the source camera frame
    weight: float = 1.0


@dataclass
class CorrespondenceGraph:
    edges: list[CorrespondenceEdge]
    n_timestamps: int
    n_cameras: int

    def validate(self) -> None:
        for e in self.edges:
            i, k = e.src
            j, l = e.dst
            if not (0 <= i < self.n_timestamps and 0 <= j < self.n_timestamps):
                raise ValueError(f"edge timestamp out of range: {e.src} -> {e.dst}")
            if not (0 <= k < self.n_cameras and 0 <= l < self.n_cameras):
                raise ValueError(f"edge camera out of range: {e.src} -> {e.dst}")
            if e.src == e.dst:
                raise ValueError("edge endpoints must differ")
            if e.depth_q <= 0:
                raise ValueError("edge depth must be positive")


@dataclass
class SolverOptions:
    max_iters: int = 100
    initial_damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 3.0
    damping_ceiling: float = 1e10
    convergence_tol: float = 1e-12  # relative cost decrease
    huber_delta: float = 2.0  # pixels
    optimize_point_depths: bool = True
    # Relative sigma of the prior tying each optimized inverse depth to its
    # initialized value. Point depths enter one edge each, so without this
    # prior a near-collinear trajectory leaves a stretch mode where pose
    # translations and depths rescale together at zero reprojection cost.
    depth_prior_rel_sigma: float = 0.2
    # After the first convergence, edges with residual norm above this many
    # pixels are dropped and the solve continues; 0 disables the refit pass.
    outlier_trim_px: float = 5.0
    fixed_ego_indices: tuple = (0,)
    fixed_delta_indices: tuple = (0,)


@dataclass
class SolveReport:
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    cost_history: list = field(default_factory=list)
    skipped_edges: int = 0
    trimmed_edges: int = 0
    converged: bool = False

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "cost_history": self.cost_history,
            "skipped_edges": self.skipped_edges,
            "trimmed_edges": self.trimmed_edges,
            "converged": self.converged,
        }


# ---------------------------------------------------------------------------
# Vectorized edge evaluation
# ---------------------------------------------------------------------------

def _graph_arrays(graph: CorrespondenceGraph):
    e = graph.edges
    return {
        "i": np.array([x.src[0] for x in e], dtype=np.int64),
        "k": np.array([x.src[1] for x in e], dtype=np.int64),
        "j": np.array([x.dst[0] for x in e], dtype=np.int64),
        "l": np.array([x.dst[1] for x in e], dtype=np.int64),
        "q": np.array([x.q for x in e], dtype=np.float64).reshape(len(e), 2),
        "p": np.array([x.p for x in e], dtype=np.float64).reshape(len(e), 2),
        "depth": np.array([x.depth_q for x in e], dtype=np.float64),
        "weight": np.array([x.weight for x in e], dtype=np.float64),
    }


def _rig_matrices(rig: RigState):
    R_e = np.stack([quat_to_matrix(t.quat) for t in rig.ego_poses])
    t_e = np.stack([t.trans for t in rig.ego_poses])
    R_d = np.stack([quat_to_matrix(t.quat) for t in rig.deltas])
    t_d = np.stack([t.trans for t in rig.deltas])
    return R_e, t_e, R_d, t_d


def _intrinsics_arrays(Ks: list[Intrinsics]):
    return (np.array([K.fx for K in Ks]), np.array([K.fy for K in Ks]),
            np.array([K.cx for K in Ks]), np.array([K.cy for K in Ks]))


def _skew_batch(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _evaluate(ga, rig: RigState, Ks, depths: np.ndarray, want_jacobian: bool):
    """Residuals (and optionally Jacobian blocks) for all edges at once.

    Returns a dict with residuals (E, 2), a validity mask, and when requested
    per-edge 2x6 blocks for the four pose roles (ego i, ego j, delta k,
    delta l) plus a 2-vector for the inverse-depth parameter.
    """
    R_e, t_e, R_d, t_d = _rig_matrices(rig)
    fx, fy, cx, cy = _intrinsics_arrays(Ks)
    i, k, j, l = ga["i"], ga["k"], ga["j"], ga["l"]

    u = np.stack([(ga["q"][:, 0] - cx[k]) / fx[k],
                  (ga["q"][:, 1] - cy[k]) / fy[k],
                  np.ones(len(i))], axis=-1)  # source rays, unit depth
    X_q = depths[:, None] * u  # source camera frame
    Y = np.einsum("eab,eb->ea", R_d[k], X_q) + t_d[k]  # ego frame at i
    X_w = np.einsum("eab,eb->ea", R_e[i], Y) + t_e[i]  # world
    Z = np.einsum("eba,eb->ea", R_e[j], X_w - t_e[j])  # ego frame at j
    X_d = np.einsum("eba,eb->ea", R_d[l], Z - t_d[l])  # destination camera frame

    valid = X_d[:, 2] > _MIN_Z
    z = np.where(valid, X_d[:, 2], 1.0)
    proj = np.stack([fx[l] * X_d[:, 0] / z + cx[l],
                     fy[l] * X_d[:, 1] / z + cy[l]], axis=-1)
    res = ga["p"] - proj
    out = {"res": res, "valid": valid, "X_d": X_d}
    if not want_jacobian:
        return out

    # dres/dX_d = -J_pi
    J_pi = np.zeros((len(i), 2, 3))
    J_pi[:, 0, 0] = fx[l] / z
    J_pi[:, 0, 2] = -fx[l] * X_d[:, 0] / z**2
    J_pi[:, 1, 1] = fy[l] / z
    J_pi[:, 1, 2] = -fy[l] * X_d[:, 1] / z**2

    R_dst_T = np.einsum("eba,ecb->eac", R_d[l], R_e[j])  # (R_e[j] R_d[l])^T
    eye = np.broadcast_to(np.eye(3), (len(i), 3, 3))

    def pack(rot_part, trans_part):
        return np.concatenate([rot_part, trans_part], axis=-1)  # (E, 3, 6)

    dX_ego_i = np.einsum("eab,ebc->eac", R_dst_T, pack(-_skew_batch(X_w), eye))
    dX_ego_j = np.einsum("eab,ebc->eac", R_dst_T, pack(_skew_batch(X_w), -eye))
    RdstT_Ri = np.einsum("eab,ebc->eac", R_dst_T, R_e[i])
    dX_del_k = np.einsum("eab,ebc->eac", RdstT_Ri, pack(-_skew_batch(Y), eye))
    Rl_T = np.swapaxes(R_d[l], -1, -2)
    dX_del_l = np.einsum("eab,ebc->eac", Rl_T, pack(_skew_batch(Z), -eye))

    # Inverse depth: d = 1/rho, dX_d/drho = -d^2 * R_rel u
    R_rel = np.einsum("eab,ebc->eac", RdstT_Ri, R_d[k])
    dX_depth = -(depths**2)[:, None] * np.einsum("eab,eb->ea", R_rel, u)

    def chain(dX):  # -J_pi @ dX
        return -np.einsum("eab,ebc->eac", J_pi, dX)

    out["J_roles"] = np.stack([chain(dX_ego_i), chain(dX_ego_j),
                               chain(dX_del_k), chain(dX_del_l)], axis=1)  # (E,4,2,6)
    out["J_depth"] = -np.einsum("eab,eb->ea", J_pi, dX_depth)  # (E, 2)
    return out


def _huber_cost(norms: np.ndarray, delta: float) -> np.ndarray:
    small = norms <= delta
    return np.where(small, 0.5 * norms**2, delta * (norms - 0.5 * delta))


def _huber_weight(norms: np.ndarray, delta: float) -> np.ndarray:
    return np.where(norms <= delta, 1.0, delta / np.maximum(norms, 1e-300))


def reprojection_residual(edge: CorrespondenceEdge, rig: RigState,
                          Ks: list[Intrinsics]) -> np.ndarray:
    """Residual p - projected(q) for a single edge, in pixels."""
    ga = _graph_arrays(CorrespondenceGraph([edge], rig.n_timestamps, rig.n_cameras))
    out = _evaluate(ga, rig, Ks, ga["depth"], want_jacobian=False)
    if not out["valid"][0]:
        raise PointBehindCameraError("transformed point has non-positive depth")
    return out["res"][0]


def total_cost(graph: CorrespondenceGraph, rig: RigState, Ks: list[Intrinsics],
               huber_delta: float = np.inf) -> float:
    """Sum over edges of weight * huber(||residual||); skipped edges excluded."""
    if not graph.edges:
        raise EmptyGraphError("graph has no edges")
    ga = _graph_arrays(graph)
    out = _evaluate(ga, rig, Ks, ga["depth"], want_jacobian=False)
    norms = np.linalg.norm(out["res"], axis=-1)
    costs = ga["weight"] * _huber_cost(norms, huber_delta)
    return float(np.sum(costs[out["valid"]]))


# ---------------------------------------------------------------------------
# Levenberg-Marquardt with Schur-eliminated point depths
# ---------------------------------------------------------------------------

def _apply_step(rig: RigState, step: np.ndarray, ego_block: np.ndarray,
                delta_block: np.ndarray) -> RigState:
    new = rig.copy()
    for idx in range(rig.n_timestamps):
        b = ego_block[idx]
        if b >= 0:
            xi = step[6 * b:6 * b + 6]
            new.ego_poses[idx] = se3_compose(se3_exp(xi[:3], xi[3:]), rig.ego_poses[idx])
    for idx in range(rig.n_cameras):
        b = delta_block[idx]
        if b >= 0:
            xi = step[6 * b:6 * b + 6]
            new.deltas[idx] = se3_compose(se3_exp(xi[:3], xi[3:]), rig.deltas[idx])
    return new


def solve(graph: CorrespondenceGraph, init: RigState, Ks: list[Intrinsics],
          opts: SolverOptions | None = None):
    """Refine rig poses (and optionally per-edge depths) by LM.

    Returns (refined RigState, per-edge depths, SolveReport). Gauge-fixed
    parameters are returned identical to the input.
    """
    opts = opts or SolverOptions()
    if not graph.edges:
        raise EmptyGraphError("graph has no edges")
    graph.validate()

    ga = _graph_arrays(graph)
    E = len(graph.edges)

    # Block layout: free egos first, then free deltas; -1 marks gauge-fixed.
    ego_block = np.full(init.n_timestamps, -1, dtype=np.int64)
    delta_block = np.full(init.n_cameras, -1, dtype=np.int64)
    nb = 0
    for idx in range(init.n_timestamps):
        if idx not in opts.fixed_ego_indices:
            ego_block[idx] = nb
            nb += 1
    for idx in range(init.n_cameras):
        if idx not in opts.fixed_delta_indices:
            delta_block[idx] = nb
            nb += 1
    n_pose = 6 * nb

    # Per-edge role -> parameter block ids (E, 4); gauge-fixed roles scatter
    # into a sentinel bucket that is dropped after accumulation.
    role_block = np.stack([ego_block[ga["i"]], ego_block[ga["j"]],
                           delta_block[ga["k"]], delta_block[ga["l"]]], axis=1)
    col0 = np.where(role_block >= 0, 6 * role_block, n_pose)  # sentinel -> n_pose
    ar6 = np.arange(6)
    idx1 = np.minimum(col0[:, :, None] + ar6, n_pose)  # (E,4,6) into b
    rows = idx1[:, :, None, :, None]  # (E,4,1,6,1)
    cols = idx1[:, None, :, None, :]  # (E,1,4,1,6)
    idx2 = np.minimum(rows * (n_pose + 1) + cols, (n_pose + 1) ** 2 - 1)
    idx2 = np.broadcast_to(idx2, (E, 4, 4, 6, 6)).ravel()
    idx1 = idx1.ravel()

    def scatter_vec(vals):
        acc = np.bincount(idx1, weights=vals.ravel(), minlength=n_pose + 1)
        return acc[:n_pose]

    def scatter_mat(vals):
        acc = np.bincount(idx2, weights=vals.ravel(),
                          minlength=(n_pose + 1) ** 2)
        return acc.reshape(n_pose + 1, n_pose + 1)[:n_pose, :n_pose]

    rig = init.copy()
    inv_depth = 1.0 / ga["depth"].copy()
    inv_depth0 = inv_depth.copy()
    damping = opts.initial_damping
    report = SolveReport()
    trim = np.ones(E)

    w_prior = np.zeros(E)
    if opts.optimize_point_depths and opts.depth_prior_rel_sigma > 0:
        w_prior = 1.0 / (opts.depth_prior_rel_sigma * inv_depth0) ** 2

    def eval_cost(r, d):
        out = _evaluate(ga, r, Ks, d, want_jacobian=False)
        norms = np.linalg.norm(out["res"], axis=-1)
        c = trim * ga["weight"] * _huber_cost(norms, opts.huber_delta)
        prior = 0.5 * float(np.sum(trim * w_prior * (1.0 / d - inv_depth0) ** 2))
        return float(np.sum(c[out["valid"]])) + prior, int(np.sum(~out["valid"]))

    cost, skipped = eval_cost(rig, 1.0 / inv_depth)
    report.initial_cost = cost
    report.cost_history.append(cost)
    report.skipped_edges = skipped

    it = 0
    trim_passes = 0
    while it < opts.max_iters:
        out = _evaluate(ga, rig, Ks, 1.0 / inv_depth, want_jacobian=True)
        valid = out["valid"]
        res = out["res"]
        norms = np.linalg.norm(res, axis=-1)
        w = trim * ga["weight"] * _huber_weight(norms, opts.huber_delta)
        w = np.where(valid, w, 0.0)

        J = out["J_roles"]  # (E, 4, 2, 6)
        Jd = out["J_depth"]  # (E, 2)

        wres = w[:, None] * res
        G = np.einsum("e,erab,esac->ersbc", w, J, J)  # (E,4,4,6,6)
        g = np.einsum("erab,ea->erb", J, wres)  # (E,4,6)
        H = scatter_mat(G)
        b = scatter_vec(-g)

        if opts.optimize_point_depths:
            Hdd = w * np.einsum("ea,ea->e", Jd, Jd) + trim * w_prior
            bd = (-np.einsum("ea,ea->e", Jd, wres)
                  - trim * w_prior * (inv_depth - inv_depth0))
            C = np.einsum("e,erab,ea->erb", w, J, Jd)  # (E,4,6) coupling

        # Try LM steps until one is accepted or damping explodes.
        accepted = False
        rel_drop = 0.0
        while damping <= opts.damping_ceiling:
            H_aug = H + damping * np.diag(np.maximum(np.diag(H), 1e-12))
            rhs = b.copy()
            if opts.optimize_point_depths:
                Hdd_aug = Hdd * (1.0 + damping) + 1e-12
                # Schur complement onto the pose system.
                CD = C / Hdd_aug[:, None, None]
                H_aug -= scatter_mat(np.einsum("erb,esc->ersbc", CD, C))
                rhs -= scatter_vec(CD * bd[:, None, None])

            try:
                step = np.linalg.solve(H_aug, rhs)
            except np.linalg.LinAlgError:
                damping *= opts.damping_up
                continue

            new_inv_depth = inv_depth
            if opts.optimize_point_depths:
                # Back-substitute per-edge inverse-depth updates.
                step_pad = np.concatenate([step, [0.0]])
                step_roles = np.einsum("erb,erb->e", C,
                                       step_pad[np.minimum(col0[:, :, None] + ar6,
                                                           n_pose)])
                new_inv_depth = np.maximum(
                    inv_depth + (bd - step_roles) / Hdd_aug, 1e-8)

            candidate = _apply_step(rig, step, ego_block, delta_block)
            new_cost, new_skipped = eval_cost(candidate, 1.0 / new_inv_depth)
            if np.isfinite(new_cost) and new_cost <= cost:
                rel_drop = (cost - new_cost) / max(cost, 1e-300)
                rig, inv_depth = candidate, new_inv_depth
                cost = new_cost
                report.skipped_edges = new_skipped
                report.cost_history.append(cost)
                damping = max(damping / opts.damping_down, 1e-14)
                accepted = True
                break
            damping *= opts.damping_up

        it += 1
        report.iterations = it
        stalled = not accepted
        if stalled and damping > opts.damping_ceiling and cost > 1e-20 \
                and report.cost_history[-1] == report.initial_cost and trim_passes == 0:
            raise DivergedError(
                f"no acceptable step below damping ceiling (cost {cost:.3e})")
        # The pre-trim pass only needs to settle far enough to expose
        # outliers; the final pass converges to the configured tolerance.
        tol = max(opts.convergence_tol, 1e-7) \
            if (opts.outlier_trim_px > 0 and trim_passes == 0) else opts.convergence_tol
        if accepted and rel_drop >= tol:
            continue

        # Converged (or stalled at numerical precision): optionally trim
        # outliers once and continue, otherwise stop.
        if opts.outlier_trim_px > 0 and trim_passes == 0:
            out = _evaluate(ga, rig, Ks, 1.0 / inv_depth, want_jacobian=False)
            bad = (np.linalg.norm(out["res"], axis=-1) > opts.outlier_trim_px) \
                | ~out["valid"]
            trim_passes += 1
            if bad.any() and not bad.all():
                trim = np.where(bad, 0.0, trim)
                report.trimmed_edges = int(bad.sum())
                cost, _ = eval_cost(rig, 1.0 / inv_depth)
                report.cost_history.append(cost)
                damping = opts.initial_damping
                continue
        report.converged = True
        break

    report.final_cost = cost
    depths = 1.0 / inv_depth if opts.optimize_point_depths else ga["depth"].copy()
    return rig, depths, report


# ---------------------------------------------------------------------------
# Observability diagnostic
# ---------------------------------------------------------------------------

def observability_report(graph: CorrespondenceGraph, rig: RigState,
                         Ks: list[Intrinsics], norm_threshold: float = 1e-8) -> dict:
    """Per-camera diagnostics for the rig translation blocks.

    For each camera k this reports the norm of the full-residual Jacobian
    columns belonging to the rig-offset translation, the smallest singular
    value of that block's Gauss-Newton sub-matrix, and whether the block is
    unconstrained by the graph (column norm below threshold). No gauge is
    fixed and point depths are held constant.
    """
    if not graph.edges:
        raise EmptyGraphError("graph has no edges")
    ga = _graph_arrays(graph)
    out = _evaluate(ga, rig, Ks, ga["depth"], want_jacobian=True)
    valid = out["valid"]
    J = out["J_roles"]  # roles: ego i, ego j, delta k, delta l

    report = {}
    for cam in range(rig.n_cameras):
        cols = np.zeros((len(graph.edges), 2, 3))
        sel_k = (ga["k"] == cam) & valid
        sel_l = (ga["l"] == cam) & valid
        cols[sel_k] += J[sel_k, 2, :, 3:]  # translation part of delta-k block
        cols[sel_l] += J[sel_l, 3, :, 3:]
        col_norm = float(np.linalg.norm(cols))
        Hk = np.einsum("eab,eac->bc", cols, cols)
        min_sv = float(np.linalg.svd(Hk, compute_uv=False)[-1])
        report[cam] = {
            "column_norm": col_norm,
            "min_singular_value": min_sv,
            "unconstrained": col_norm < norm_threshold,
        }
    return report


# ---------------------------------------------------------------------------
# Graph file format: one JSON record per line, header first
# ---------------------------------------------------------------------------

def save_graph(path, graph: CorrespondenceGraph) -> None:
    with open(path, "w") as f:
        f.write(json.dumps({"n_timestamps": graph.n_timestamps,
                            "n_cameras": graph.n_cameras}) + "\n")
        for e in graph.edges:
            rec = {"i": e.src[0], "k": e.src[1], "j": e.dst[0], "l": e.dst[1],
                   "qx": float(e.q[0]), "qy": float(e.q[1]),
                   "px": float(e.p[0]), "py": float(e.p[1]),
                   "depth_q": float(e.depth_q), "weight": float(e.weight)}
            f.write(json.dumps(rec) + "\n")


def load_graph(path) -> CorrespondenceGraph:
    with open(path) as f:
        header = json.loads(f.readline())
        edges = []
        for line in f:
            line = line.strip()
            if not line:
                continue
            r = json.loads(line)
            edges.append(CorrespondenceEdge(
                src=(r["i"], r["k"]), dst=(r["j"], r["l"]),
                q=np.array([r["qx"], r["qy"]]), p=np.array([r["px"], r["py"]]),
                depth_q=r["depth_q"], weight=r["weight"]))
    graph = CorrespondenceGraph(edges, header["n_timestamps"], header["n_cameras"])
    graph.validate()
    return graph
