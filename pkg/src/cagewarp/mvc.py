"""Mean value coordinates for closed triangle cages, with analytic gradients.

For a query point x and cage vertices v_i, the weight of vertex i is
assembled triangle by triangle from the projection of each triangle onto
the unit sphere around x. With u_i = (v_i - x) / d_i the projected corner
directions, the vector area of the spherical triangle is

    m = 1/2 * sum_i theta_i N_i

where theta_i is the arc angle opposite corner i and N_i the unit normal
of that arc's great-circle plane. Solving [u_0 u_1 u_2] lambda = m and
accumulating w_i += lambda_i / d_i over all triangles yields weights whose
normalization reproduces linear functions exactly: sum_i w_i (v_i - x) = 0
because the per-triangle vector areas of a closed surface cancel.

Weights are smooth away from the cage surface. On the surface they reduce
to barycentric interpolation (handled by explicit branches); gradients are
refused near the surface instead of returning garbage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cage import CageMesh, surface_distance
from .errors import NearSurfaceError, TopologyMismatchError

# Distance below which a query point is treated as sitting on a cage
# vertex, as a fraction of the cage bbox diagonal.
VERTEX_SNAP = 1e-10
# A spherical triangle whose half-angle-sum is within this of pi contains
# the query point in its supporting triangle: on-surface barycentric case.
# Arc angles come from chords via arcsin, which loses ~sqrt(eps) accuracy
# near pi (on-edge points), so the threshold sits well above that.
ON_FACE_EPS = 1e-7
# |det [u0 u1 u2]| below which a triangle is taken as exactly coplanar
# with the query point (outside it) and contributes nothing.
DET_SKIP = 1e-12
# Pairs with |det| below this are recomputed in extended precision: the
# Cramer solve loses ~eps/|det| digits to cancellation there.
DET_REFINE = 1e-6
# Gradients are refused within this fraction of the diagonal from the cage.
SURFACE_GUARD = 1e-8


@dataclass
class MVCWeights:
    """Normalized mean value coordinates of points with respect to a cage.

    weights[p, i] is the coordinate of query point p for cage vertex i;
    every row sums to one and reproduces the query point against the
    source cage vertices.
    """

    weights: np.ndarray      # (P, V), rows sum to 1
    points: np.ndarray       # (P, 3) the query points
    cage: CageMesh           # source cage the weights were computed against

    def __len__(self) -> int:
        return len(self.points)


def mvc_weights(points: np.ndarray, cage: CageMesh,
                chunk_size: int | None = None) -> MVCWeights:
    """Compute normalized mean value coordinates of points w.r.t. a cage.

    Points may lie anywhere: inside (all weights positive for convex
    cages), on the surface (barycentric limit), or outside (signed
    weights). Evaluation is chunked; `chunk_size` caps points per chunk.
    """
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"points must be (P, 3), got {points.shape}")
    n_tri = len(cage.triangles)
    if chunk_size is None:
        chunk_size = int(np.clip(1_500_000 // max(n_tri, 1), 128, 8192))
    rows = []
    for start in range(0, len(points), chunk_size):
        rows.append(_weights_chunk(points[start:start + chunk_size], cage))
    weights = np.concatenate(rows, axis=0) if rows else \
        np.zeros((0, len(cage.vertices)))
    return MVCWeights(weights=weights, points=points, cage=cage)


def deform_points(weights: MVCWeights, deformed: CageMesh) -> np.ndarray:
    """Map the stored query points through a deformed copy of the cage."""
    if not weights.cage.same_topology(deformed):
        raise TopologyMismatchError(
            "deformed cage does not share the source cage topology")
    return weights.weights @ deformed.vertices


def mvc_gradient(points: np.ndarray, cage: CageMesh,
                 chunk_size: int | None = None) -> np.ndarray:
    """Spatial gradients of the normalized coordinates.

    Returns (P, V, 3) with entry [p, i, :] = d omega_i / dx at point p.
    Rows satisfy sum_i grad omega_i = 0 and sum_i grad omega_i v_i^T = I.
    Raises NearSurfaceError for points closer to the cage surface than
    SURFACE_GUARD times its bbox diagonal, where the derivative blows up.
    """
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"points must be (P, 3), got {points.shape}")
    guard = SURFACE_GUARD * cage.bbox_diagonal()
    dist = surface_distance(points, cage)
    if np.any(dist < guard):
        bad = int(np.argmin(dist))
        raise NearSurfaceError(
            f"point {bad} is {dist[bad]:.3e} from the cage surface "
            f"(< {guard:.3e}); gradients are not defined there")
    n_tri = len(cage.triangles)
    if chunk_size is None:
        chunk_size = int(np.clip(200_000 // max(n_tri, 1), 32, 4096))
    grads = []
    for start in range(0, len(points), chunk_size):
        grads.append(_gradient_chunk(points[start:start + chunk_size], cage))
    return np.concatenate(grads, axis=0) if grads else \
        np.zeros((0, len(cage.vertices), 3))


def _spherical_setup(x: np.ndarray, cage: CageMesh):
    """Shared geometry: unit directions, distances, arcs, crosses, dets.

    Returns a dict of arrays over (P points, T triangles, 3 corners).
    """
    verts = cage.vertices
    tri = cage.triangles
    u = verts[None, :, :] - x[:, None, :]            # (P, V, 3)
    d = np.linalg.norm(u, axis=2)                    # (P, V)
    d_safe = np.maximum(d, 1e-300)
    uh = u / d_safe[:, :, None]

    e = [uh[:, tri[:, k], :] for k in range(3)]      # 3 x (P, T, 3)
    dcorn = [d_safe[:, tri[:, k]] for k in range(3)]  # 3 x (P, T)

    # Arc angle opposite corner k, from the chord length (stable for both
    # tiny and obtuse angles).
    theta = []
    for k in range(3):
        chord = np.linalg.norm(e[(k + 1) % 3] - e[(k + 2) % 3], axis=2)
        theta.append(2.0 * np.arcsin(np.clip(0.5 * chord, 0.0, 1.0)))

    # cr[k] = e_{k+1} x e_{k+2}: arc-plane normals scaled by sin(theta_k),
    # and simultaneously the Cramer adjugate rows of U = [e0 e1 e2].
    cr = [np.cross(e[(k + 1) % 3], e[(k + 2) % 3]) for k in range(3)]
    det = np.einsum("ptx,ptx->pt", e[0], cr[0])
    return {"u": u, "d": d, "d_safe": d_safe, "uh": uh, "e": e,
            "dcorn": dcorn, "theta": theta, "cr": cr, "det": det}


def _vector_area(geo) -> np.ndarray:
    """m = 1/2 sum_k theta_k * cr_k / |cr_k|, guarded against |cr| ~ 0."""
    m = np.zeros_like(geo["cr"][0])
    for k in range(3):
        s = np.linalg.norm(geo["cr"][k], axis=2)
        s_safe = np.where(s < 1e-300, 1.0, s)
        m += 0.5 * (geo["theta"][k] / s_safe)[:, :, None] * geo["cr"][k]
    return m


def _weights_chunk(x: np.ndarray, cage: CageMesh) -> np.ndarray:
    n_pts = len(x)
    n_vert = len(cage.vertices)
    tri = cage.triangles
    diag = cage.bbox_diagonal()

    geo = _spherical_setup(x, cage)
    d, theta, cr, det = geo["d"], geo["theta"], geo["cr"], geo["det"]
    m = _vector_area(geo)

    half_sum = 0.5 * (theta[0] + theta[1] + theta[2])
    on_face = (np.pi - half_sum) < ON_FACE_EPS          # (P, T)
    snap_rows = np.min(d, axis=1) < VERTEX_SNAP * diag  # (P,)

    det_safe = np.where(np.abs(det) < 1e-300, 1.0, det)
    lam = [np.einsum("ptx,ptx->pt", m, cr[k]) / det_safe for k in range(3)]

    # Extended-precision rescue for near-coplanar (point, triangle) pairs,
    # where the float64 Cramer solve cancels catastrophically.
    refine = (np.abs(det) < DET_REFINE) & (np.abs(det) >= DET_SKIP) \
        & ~on_face & ~snap_rows[:, None]
    if np.any(refine):
        p_idx, t_idx = np.nonzero(refine)
        lam_ref = _refine_pairs(x[p_idx], cage.vertices[tri[t_idx]])
        for k in range(3):
            lam[k][p_idx, t_idx] = lam_ref[:, k]

    drop = (np.abs(det) < DET_SKIP) | on_face
    w = np.zeros((n_pts, n_vert))
    flat_p = np.repeat(np.arange(n_pts), len(tri))
    for k in range(3):
        contrib = np.where(drop, 0.0, lam[k] / geo["dcorn"][k])
        flat_v = np.tile(tri[:, k], n_pts)
        w += np.bincount(flat_p * n_vert + flat_v,
                         weights=contrib.ravel(),
                         minlength=n_pts * n_vert).reshape(n_pts, n_vert)

    # On-surface rows: barycentric interpolation inside the first flagged
    # triangle replaces the whole row (the weight field is discontinuous
    # across the surface, with on-surface values interpolating the face).
    face_rows = np.nonzero(on_face.any(axis=1) & ~snap_rows)[0]
    for p in face_rows:
        t = int(np.argmax(on_face[p]))
        row = np.zeros(n_vert)
        for k in range(3):
            # An arc within fp noise of pi means the point sits on the
            # opposite edge; that corner's weight is exactly zero.
            th = theta[k][p, t]
            s_k = 0.0 if np.pi - th < ON_FACE_EPS else np.sin(th)
            row[tri[t, k]] += s_k * geo["dcorn"][(k + 1) % 3][p, t] \
                * geo["dcorn"][(k + 2) % 3][p, t]
        w[p] = row

    for p in np.nonzero(snap_rows)[0]:
        row = np.zeros(n_vert)
        row[int(np.argmin(d[p]))] = 1.0
        w[p] = row

    total = w.sum(axis=1)
    bad = np.abs(total) < 1e-12 * np.abs(w).max(axis=1)
    if np.any(bad):
        raise ValueError(
            f"mean value weights vanish at point index {int(np.nonzero(bad)[0][0])}; "
            "the query point is too far outside the cage")
    return w / total[:, None]


def _refine_pairs(x: np.ndarray, tri_verts: np.ndarray) -> np.ndarray:
    """Recompute lambda for (point, triangle) pairs in long double."""
    xq = x.astype(np.longdouble)
    vq = tri_verts.astype(np.longdouble)          # (K, 3, 3)
    u = vq - xq[:, None, :]
    d = np.sqrt(np.sum(u * u, axis=2))
    uh = u / d[:, :, None]
    e = [uh[:, k, :] for k in range(3)]
    theta, cr = [], []
    for k in range(3):
        diff = e[(k + 1) % 3] - e[(k + 2) % 3]
        chord = np.sqrt(np.sum(diff * diff, axis=1))
        theta.append(2.0 * np.arcsin(np.clip(0.5 * chord, 0.0, 1.0)))
        cr.append(np.cross(e[(k + 1) % 3], e[(k + 2) % 3]))
    det = np.sum(e[0] * cr[0], axis=1)
    m = np.zeros_like(e[0])
    for k in range(3):
        s = np.sqrt(np.sum(cr[k] * cr[k], axis=1))
        s = np.where(s < np.longdouble(1e-300), np.longdouble(1.0), s)
        m += 0.5 * (theta[k] / s)[:, None] * cr[k]
    lam = np.stack([np.sum(m * cr[k], axis=1) / det for k in range(3)], axis=1)
    return lam.astype(np.float64)


def _gradient_chunk(x: np.ndarray, cage: CageMesh) -> np.ndarray:
    n_pts = len(x)
    n_vert = len(cage.vertices)
    tri = cage.triangles
    eye = np.eye(3)

    geo = _spherical_setup(x, cage)
    e, dcorn, theta, cr, det = (geo["e"], geo["dcorn"], geo["theta"],
                                geo["cr"], geo["det"])
    m = _vector_area(geo)
    det_safe = np.where(np.abs(det) < 1e-300, 1.0, det)
    lam = [np.einsum("ptx,ptx->pt", m, cr[k]) / det_safe for k in range(3)]
    drop = np.abs(det) < DET_SKIP

    # d(u_hat)/dx per corner: (u u^T - I) / d,  symmetric.
    Du = [(np.einsum("ptx,pty->ptxy", e[k], e[k]) - eye)
          / dcorn[k][:, :, None, None] for k in range(3)]

    def skew(v):
        K = np.zeros(v.shape[:-1] + (3, 3))
        K[..., 0, 1] = -v[..., 2]
        K[..., 0, 2] = v[..., 1]
        K[..., 1, 0] = v[..., 2]
        K[..., 1, 2] = -v[..., 0]
        K[..., 2, 0] = -v[..., 1]
        K[..., 2, 1] = v[..., 0]
        return K

    # Dm = 1/2 sum_k (N_k grad(theta_k)^T + theta_k DN_k)
    Dm = np.zeros((n_pts, len(tri), 3, 3))
    for k in range(3):
        a, b = e[(k + 1) % 3], e[(k + 2) % 3]
        Da, Db = Du[(k + 1) % 3], Du[(k + 2) % 3]
        Dcr = -skew(b) @ Da + skew(a) @ Db
        s = np.linalg.norm(cr[k], axis=2)
        s_safe = np.where(s < 1e-300, 1.0, s)[:, :, None]
        N = cr[k] / s_safe
        grad_s = np.einsum("ptxy,ptx->pty", Dcr, N)
        # cos(theta) = a . b; Du is symmetric so grad(cos) = Da b + Db a.
        cos_t = np.einsum("ptx,ptx->pt", a, b)
        grad_cos = np.einsum("ptxy,pty->ptx", Da, b) \
            + np.einsum("ptxy,pty->ptx", Db, a)
        grad_theta = cos_t[:, :, None] * grad_s \
            - np.sin(theta[k])[:, :, None] * grad_cos
        DN = (Dcr - np.einsum("ptx,pty->ptxy", N,
                              np.einsum("ptx,ptxy->pty", N, Dcr))) / s_safe[..., None]
        Dm += 0.5 * (np.einsum("ptx,pty->ptxy", N, grad_theta)
                     + theta[k][:, :, None, None] * DN)

    M = sum(lam[k][:, :, None, None] * Du[k] for k in range(3))
    rhs = Dm - M
    grad_w = np.zeros((n_pts, n_vert, 3))
    flat_p3 = np.repeat(np.arange(n_pts), len(tri))
    for k in range(3):
        grad_lam = np.einsum("ptx,ptxy->pty", cr[k], rhs) \
            / det_safe[:, :, None]
        contrib = grad_lam / dcorn[k][:, :, None] \
            + (lam[k] / dcorn[k] ** 2)[:, :, None] * e[k]
        contrib = np.where(drop[:, :, None], 0.0, contrib)
        flat_v = np.tile(tri[:, k], n_pts)
        for c in range(3):
            grad_w[:, :, c] += np.bincount(
                flat_p3 * n_vert + flat_v, weights=contrib[:, :, c].ravel(),
                minlength=n_pts * n_vert).reshape(n_pts, n_vert)

    # Forward weights for the normalization term, reusing lam.
    w = np.zeros((n_pts, n_vert))
    for k in range(3):
        contrib = np.where(drop, 0.0, lam[k] / dcorn[k])
        flat_v = np.tile(tri[:, k], n_pts)
        w += np.bincount(flat_p3 * n_vert + flat_v, weights=contrib.ravel(),
                         minlength=n_pts * n_vert).reshape(n_pts, n_vert)
    total = w.sum(axis=1)
    omega = w / total[:, None]
    grad_total = grad_w.sum(axis=1)                      # (P, 3)
    return (grad_w - omega[:, :, None] * grad_total[:, None, :]) \
        / total[:, None, None]
