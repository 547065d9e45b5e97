"""Target geometry, surface sampling, and shape-agreement metrics.

Targets for cage fitting come in three flavors: a triangle mesh (possibly
open, e.g. a scan or an edited surface), a plain point cloud, or another
splat model whose centers stand in for its shape. All reduce to a PointSet
for fitting and evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cage import read_obj_arrays
from .points import PointSet, inflate_degenerate_axes
from .splats import GaussianCloud, read_gs_ply, _parse_header
from .transport import transform_covariance


@dataclass
class TriangleMesh:
    """A bare triangle mesh used as a deformation target.

    Unlike a cage it may be open, non-manifold, or inconsistently wound;
    only structural sanity is enforced.
    """

    vertices: np.ndarray   # (V, 3)
    triangles: np.ndarray  # (T, 3)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {self.vertices.shape}")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError(f"triangles must be (T, 3), got {self.triangles.shape}")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("mesh vertices contain non-finite values")
        if len(self.triangles) and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")

    def face_areas(self) -> np.ndarray:
        a = self.vertices[self.triangles[:, 0]]
        cross = np.cross(self.vertices[self.triangles[:, 1]] - a,
                         self.vertices[self.triangles[:, 2]] - a)
        return 0.5 * np.linalg.norm(cross, axis=1)


def sample_mesh_surface(mesh: TriangleMesh, n: int = 30000,
                        seed: int = 0) -> PointSet:
    """Sample n points uniformly by area over a mesh surface.

    Faces are chosen with probability proportional to their area, then a
    point is placed uniformly inside each chosen face. Face normals ride
    along on the samples (zero-area faces are never chosen).
    """
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    areas = mesh.face_areas()
    total = areas.sum()
    if len(areas) == 0 or total <= 0.0:
        raise ValueError("mesh has no positive-area faces to sample")

    rng = np.random.default_rng(seed)
    cum = np.cumsum(areas)
    face = np.searchsorted(cum, rng.uniform(0.0, total, size=n),
                           side="right")
    face = np.minimum(face, len(areas) - 1)

    a = mesh.vertices[mesh.triangles[face, 0]]
    b = mesh.vertices[mesh.triangles[face, 1]]
    c = mesh.vertices[mesh.triangles[face, 2]]
    # Uniform barycentric placement via the square-root trick.
    r1 = np.sqrt(rng.uniform(size=(n, 1)))
    r2 = rng.uniform(size=(n, 1))
    points = (1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c

    normals = np.cross(b - a, c - a)
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = normals / np.maximum(norms, 1e-300)
    return PointSet(points=points, normals=normals)


def _as_points(obj) -> np.ndarray:
    if isinstance(obj, PointSet):
        return obj.points
    arr = np.asarray(obj, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"point set must be (N, 3), got {arr.shape}")
    return arr


def chamfer_distance(a, b) -> float:
    """Symmetric chamfer distance between two point sets.

    Sum of the two means of squared nearest-neighbor distances:
    mean_a min_b |a - b|^2 + mean_b min_a |b - a|^2. Units are squared
    length; identical sets score zero.
    """
    pa = _as_points(a)
    pb = _as_points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("chamfer distance of an empty point set")
    d_ab, _ = cKDTree(pb).query(pa, k=1)
    d_ba, _ = cKDTree(pa).query(pb, k=1)
    return float(np.mean(d_ab ** 2) + np.mean(d_ba ** 2))


def baseline_bbox_scale(cloud: GaussianCloud, target_lo, target_hi,
                        update_covariance: bool = True) -> GaussianCloud:
    """Per-axis affine rescale of a cloud onto a target bounding box.

    The reference edit every cage deformation is compared against: map the
    cloud's center bbox onto [target_lo, target_hi] axis by axis. Uniform
    scaling shifts log-scales directly and leaves rotations untouched;
    anisotropic scaling transports covariances like any other Jacobian.
    An identical source and target box returns a bit-exact copy.
    """
    target_lo = np.asarray(target_lo, dtype=np.float64)
    target_hi = np.asarray(target_hi, dtype=np.float64)
    if target_lo.shape != (3,) or target_hi.shape != (3,):
        raise ValueError("target box must be two (3,) corners")
    if np.any(target_hi < target_lo):
        raise ValueError("target box has negative extent")

    src_lo, src_hi = cloud.bbox()
    if np.array_equal(src_lo, target_lo) and np.array_equal(src_hi, target_hi):
        return cloud.copy()

    # Degenerate axes get the same virtual extent the template cage uses,
    # so the baseline and the cage route stay interchangeable.
    src_lo_i, src_hi_i = inflate_degenerate_axes(src_lo, src_hi)
    tgt_lo_i, tgt_hi_i = inflate_degenerate_axes(target_lo, target_hi)
    scale = (tgt_hi_i - tgt_lo_i) / (src_hi_i - src_lo_i)
    src_center = 0.5 * (src_lo_i + src_hi_i)
    tgt_center = 0.5 * (tgt_lo_i + tgt_hi_i)
    centers = tgt_center + (cloud.centers - src_center) * scale

    if not update_covariance or np.all(scale == 1.0):
        log_scales = cloud.log_scales.copy()
        rotations = cloud.rotations.copy()
    elif scale.max() - scale.min() <= 1e-12 * scale.max():
        # Uniform (to rounding) scaling: covariances scale isotropically,
        # so rotations pass through untouched.
        log_scales = cloud.log_scales + np.mean(np.log(scale))
        rotations = cloud.rotations.copy()
    else:
        jac = np.broadcast_to(np.diag(scale), (len(cloud), 3, 3))
        rotations, log_scales = transform_covariance(
            jac, cloud.rotations, cloud.log_scales)

    return GaussianCloud(
        centers=centers,
        log_scales=log_scales,
        rotations=rotations,
        opacity_logits=cloud.opacity_logits.copy(),
        sh_dc=cloud.sh_dc.copy(),
        sh_rest=cloud.sh_rest.copy(),
    )


def load_target(path, kind: str = "auto"):
    """Load target geometry: returns a TriangleMesh or a PointSet.

    kind is one of "auto", "mesh", "pointcloud", or "gsplat". On "auto",
    .obj files load as meshes, .ply files holding a splat model (detected
    by their f_dc_0 property) contribute their centers, and any other PLY
    with x/y/z vertex properties loads as a plain point cloud.
    """
    path = str(path)
    lower = path.lower()
    if kind not in ("auto", "mesh", "pointcloud", "gsplat"):
        raise ValueError(f"unknown target kind {kind!r}")
    if kind == "mesh" or (kind == "auto" and lower.endswith(".obj")):
        vertices, triangles = read_obj_arrays(path)
        return TriangleMesh(vertices=vertices, triangles=triangles)
    if kind == "gsplat":
        return PointSet(points=read_gs_ply(path).centers)
    if lower.endswith(".ply"):
        with open(path, "rb") as stream:
            properties, count, _ = _parse_header(stream, path)
        if kind == "auto" and "f_dc_0" in properties:
            return PointSet(points=read_gs_ply(path).centers)
        return _read_point_ply(path, properties, count)
    raise ValueError(f"{path}: unsupported target format "
                     "(expected .obj or .ply)")


def _read_point_ply(path, properties, count) -> PointSet:
    for name in ("x", "y", "z"):
        if name not in properties:
            raise ValueError(f"{path}: point PLY missing property {name!r}")
    dtype = np.dtype([(name, "<f4") for name in properties])
    with open(path, "rb") as stream:
        _parse_header(stream, path)
        records = np.frombuffer(stream.read(count * dtype.itemsize),
                                dtype=dtype, count=count)
    points = np.stack([records[name].astype(np.float64)
                       for name in ("x", "y", "z")], axis=1)
    if {"nx", "ny", "nz"} <= set(properties):
        normals = np.stack([records[name].astype(np.float64)
                            for name in ("nx", "ny", "nz")], axis=1)
        lengths = np.linalg.norm(normals, axis=1, keepdims=True)
        if np.all(lengths > 1e-6):
            return PointSet(points=points, normals=normals / lengths)
    return PointSet(points=points)


def write_point_ply(points: PointSet, path) -> None:
    """Write a PointSet as a binary little-endian PLY (x, y, z [+ normals])."""
    n = len(points)
    if n == 0:
        raise ValueError("refusing to write an empty point set")
    names = ["x", "y", "z"]
    if points.normals is not None:
        names += ["nx", "ny", "nz"]
    dtype = np.dtype([(name, "<f4") for name in names])
    records = np.zeros(n, dtype=dtype)
    for i, name in enumerate(("x", "y", "z")):
        records[name] = points.points[:, i]
    if points.normals is not None:
        for i, name in enumerate(("nx", "ny", "nz")):
            records[name] = points.normals[:, i]
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")
    with open(path, "wb") as stream:
        stream.write(("\n".join(header) + "\n").encode("ascii"))
        stream.write(records.tobytes())
