"""Fitting a deformed cage so the enclosed model matches a target shape.

The deformed cage is found by direct optimization: sample points from the
source model, tie them to the source cage once via mean value coordinates
(the weight matrix W is independent of the deformed cage, so deformed
sample positions are just W @ C for candidate vertices C), and descend an
alignment-plus-regularization loss with Adam on the vertex offsets.

Nearest-neighbor assignments for the alignment term are refreshed every
iteration; gradients hold the current assignments fixed, the usual
ICP-style treatment of a piecewise-smooth objective.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .cage import CageMesh, build_template_cage, winding_numbers
from .errors import FitDivergedError
from .metrics import TriangleMesh, chamfer_distance, sample_mesh_surface
from .mvc import mvc_weights
from .points import PointSet
from .splats import GaussianCloud, sample_centers


@dataclass
class FitConfig:
    """Knobs for fit_deformed_cage.

    step_size is relative to the source cage diagonal; the barrier weight
    scores source samples that fall outside the source cage; the normal
    weight discourages face flips relative to the source cage.
    """

    iterations: int = 500
    step_size: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    align_weight: float = 1.0
    barrier_weight: float = 0.1
    normal_weight: float = 0.05
    source_sample_count: int = 30000
    convergence_tol: float = 1e-5
    convergence_window: int = 20
    seed: int = 0


@dataclass
class FitReport:
    """Per-iteration record of a cage fit.

    loss_trace columns are total, alignment, barrier, and flip penalty,
    each already multiplied by its weight so the last three sum to the
    first. best_trace is the running minimum of the total.
    """

    loss_trace: np.ndarray          # (K, 4)
    best_trace: np.ndarray          # (K,)
    final_chamfer: float
    iterations_run: int
    converged: bool
    outside_fraction: float = field(default=0.0)


def build_source_cage(source, resolution: int = 2, padding: float = 0.1,
                      shrink: float = 0.0, seed: int = 0) -> CageMesh:
    """Template cage around a source model.

    source may be a GaussianCloud, PointSet, or (N, 3) array. A nonzero
    shrink in (0, 1] pulls each cage vertex that fraction of the way
    toward its nearest source point, tightening loose boxes; the result
    must still be a valid cage or the shrink is rejected.
    """
    points = _source_points(source, count=None, seed=seed)
    cage = build_template_cage(points, resolution=resolution, padding=padding)
    if shrink == 0.0:
        return cage
    if not 0.0 < shrink <= 1.0:
        raise ValueError(f"shrink must be in (0, 1], got {shrink}")
    _, idx = cKDTree(points).query(cage.vertices, k=1)
    pulled = cage.vertices + shrink * (points[idx] - cage.vertices)
    return CageMesh(pulled, cage.triangles.copy())


def alignment_loss(positions: np.ndarray, target_points: np.ndarray):
    """Symmetric chamfer alignment between moved samples and a target.

    Returns (loss, gradient) where the gradient is with respect to the
    sample positions, holding the two nearest-neighbor assignments fixed.
    """
    positions = np.asarray(positions, dtype=np.float64)
    target_points = np.asarray(target_points, dtype=np.float64)
    n_pos = len(positions)
    n_tgt = len(target_points)
    d_pt, j_pt = cKDTree(target_points).query(positions, k=1)
    d_tp, j_tp = cKDTree(positions).query(target_points, k=1)
    loss = float(np.mean(d_pt ** 2) + np.mean(d_tp ** 2))
    grad = (2.0 / n_pos) * (positions - target_points[j_pt])
    np.add.at(grad, j_tp, (2.0 / n_tgt) * (positions[j_tp] - target_points))
    return loss, grad


def _normal_term(vertices: np.ndarray, triangles: np.ndarray,
                 source_normals: np.ndarray):
    """Face-flip penalty sum(1 - n_f . n0_f) and its vertex gradient."""
    v0 = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - v0
    e2 = vertices[triangles[:, 2]] - v0
    c = np.cross(e1, e2)
    cn = np.linalg.norm(c, axis=1)
    ok = cn > 1e-300
    cn_safe = np.where(ok, cn, 1.0)
    n = c / cn_safe[:, None]
    dots = np.einsum("ij,ij->i", n, source_normals)
    loss = float(np.sum(np.where(ok, 1.0 - dots, 0.0)))

    # d(1 - n.n0)/dc = -(I - n n^T) n0 / |c|
    g = -(source_normals - n * dots[:, None]) / cn_safe[:, None]
    g = np.where(ok[:, None], g, 0.0)
    grad = np.zeros_like(vertices)
    np.add.at(grad, triangles[:, 0], np.cross(e1 - e2, g))
    np.add.at(grad, triangles[:, 1], np.cross(e2, g))
    np.add.at(grad, triangles[:, 2], np.cross(g, e1))
    return loss, grad


def _point_array(obj, what: str) -> np.ndarray:
    if isinstance(obj, GaussianCloud):
        pts = obj.centers
    elif isinstance(obj, PointSet):
        pts = obj.points
    else:
        pts = np.asarray(obj, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise ValueError(f"{what} must provide a non-empty (N, 3) point array")
    return pts


def _subsample(points: np.ndarray, count, seed: int) -> np.ndarray:
    if count is None or count >= len(points):
        return points
    rng = np.random.default_rng(seed)
    return points[np.sort(rng.choice(len(points), size=count, replace=False))]


def _source_points(source, count, seed) -> np.ndarray:
    if isinstance(source, GaussianCloud) and count is not None \
            and count < len(source):
        return sample_centers(source, n=count, seed=seed).points
    return _subsample(_point_array(source, "source"), count, seed)


def _target_points(target, count, seed) -> np.ndarray:
    if isinstance(target, TriangleMesh):
        return sample_mesh_surface(target, n=count, seed=seed).points
    return _subsample(_point_array(target, "target"), count, seed)


def fit_deformed_cage(source, target, source_cage: CageMesh,
                      config: FitConfig | None = None):
    """Optimize deformed cage vertices so the source matches the target.

    source: GaussianCloud, PointSet, or (N, 3) array of source geometry.
    target: TriangleMesh (sampled by area), PointSet, or (M, 3) array.

    Returns (deformed_cage, FitReport). The returned cage carries the
    best-loss vertices seen, not necessarily the last iterate. Raises
    FitDivergedError if the loss leaves the realm of finite numbers.
    """
    config = config or FitConfig()
    samples = _source_points(source, config.source_sample_count, config.seed)
    targets = _target_points(target, config.source_sample_count,
                             config.seed + 1)

    outside = winding_numbers(samples, source_cage) < 0.5
    outside_fraction = float(np.mean(outside))
    if outside_fraction > 0.01:
        warnings.warn(
            f"{100 * outside_fraction:.1f}% of source samples lie outside "
            "the source cage; coordinates there are extrapolated and the "
            "fit may be poorly conditioned", stacklevel=2)

    weight_matrix = mvc_weights(samples, source_cage).weights    # (m, V)
    # The coordinates are tied to the source cage, so the negativity
    # barrier does not change during optimization; it scores the setup.
    barrier = config.barrier_weight * float(
        np.sum(np.minimum(weight_matrix, 0.0) ** 2))
    source_normals = source_cage.face_normals()

    n_vert = len(source_cage.vertices)
    delta = np.zeros((n_vert, 3))
    adam_m = np.zeros_like(delta)
    adam_v = np.zeros_like(delta)
    alpha = config.step_size * source_cage.bbox_diagonal()

    best_loss = np.inf
    best_delta = delta.copy()
    trace = []
    best_trace = []
    converged = False

    for it in range(1, config.iterations + 1):
        cage_now = source_cage.vertices + delta
        moved = weight_matrix @ cage_now
        # Positions past ~1e150 overflow squared distances downstream; the
        # comparison is False for NaN too, so this catches every blow-up.
        if not np.all(np.abs(moved) < 1e150):
            raise FitDivergedError(it)
        align, grad_pts = alignment_loss(moved, targets)
        normal, grad_normal = _normal_term(cage_now, source_cage.triangles,
                                           source_normals)
        align = config.align_weight * align
        normal = config.normal_weight * normal
        total = align + barrier + normal
        if not np.isfinite(total):
            raise FitDivergedError(it)
        trace.append((total, align, barrier, normal))
        if total < best_loss:
            best_loss = total
            best_delta = delta.copy()
        best_trace.append(best_loss)

        grad = config.align_weight * (weight_matrix.T @ grad_pts) \
            + config.normal_weight * grad_normal
        adam_m = config.beta1 * adam_m + (1.0 - config.beta1) * grad
        adam_v = config.beta2 * adam_v + (1.0 - config.beta2) * grad * grad
        m_hat = adam_m / (1.0 - config.beta1 ** it)
        v_hat = adam_v / (1.0 - config.beta2 ** it)
        delta = delta - alpha * m_hat / (np.sqrt(v_hat) + config.adam_eps)

        window = config.convergence_window
        if len(best_trace) > window:
            then = best_trace[-window - 1]
            if (then - best_loss) < config.convergence_tol * max(abs(then),
                                                                 1e-300):
                converged = True
                break

    fitted = source_cage.with_vertices(source_cage.vertices + best_delta,
                                       validate=False)
    final_chamfer = chamfer_distance(weight_matrix @ fitted.vertices, targets)
    report = FitReport(
        loss_trace=np.asarray(trace),
        best_trace=np.asarray(best_trace),
        final_chamfer=float(final_chamfer),
        iterations_run=len(trace),
        converged=converged,
        outside_fraction=outside_fraction,
    )
    return fitted, report
