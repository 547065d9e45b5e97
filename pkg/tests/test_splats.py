import numpy as np
import pytest

from cagewarp.errors import (
    DegenerateRotationError,
    PlyFormatError,
    PlyReadError,
    UnsupportedLayoutError,
)
from cagewarp.rotations import quat_to_matrix
from cagewarp.splats import (
    GaussianCloud,
    covariance_of,
    covariances_of,
    read_gs_ply,
    sample_centers,
    write_gs_ply,
)

from conftest import random_cloud


class TestCloudValidation:
    def test_shapes_and_degree(self):
        cloud = random_cloud(5, sh_rest_width=24)
        assert len(cloud) == 5
        assert cloud.sh_degree == 2
        assert random_cloud(3, sh_rest_width=0).sh_degree == 0
        assert random_cloud(3, sh_rest_width=45).sh_degree == 3

    def test_bad_sh_width_rejected(self):
        with pytest.raises(UnsupportedLayoutError):
            random_cloud(4, sh_rest_width=7)

    def test_zero_quaternion_rejected(self):
        cloud = random_cloud(4)
        rot = cloud.rotations.copy()
        rot[2] = 0.0
        with pytest.raises(DegenerateRotationError):
            GaussianCloud(cloud.centers, cloud.log_scales, rot,
                          cloud.opacity_logits, cloud.sh_dc, cloud.sh_rest)

    def test_nan_rejected(self):
        cloud = random_cloud(4)
        centers = cloud.centers.copy()
        centers[1, 2] = np.nan
        with pytest.raises(ValueError):
            GaussianCloud(centers, cloud.log_scales, cloud.rotations,
                          cloud.opacity_logits, cloud.sh_dc, cloud.sh_rest)

    def test_splat_view_shares_memory(self):
        cloud = random_cloud(4)
        s = cloud.splat(2)
        assert np.shares_memory(s.center, cloud.centers)
        assert s.opacity_logit == cloud.opacity_logits[2]


class TestCovariance:
    def test_identity_rotation_gives_diagonal(self):
        log_scale = np.array([0.1, -0.3, 0.7])
        cov = covariance_of(np.array([1.0, 0.0, 0.0, 0.0]), log_scale)
        assert np.allclose(cov, np.diag(np.exp(2 * log_scale)), rtol=0, atol=1e-15)

    def test_rotation_preserves_eigenvalues(self):
        rng = np.random.default_rng(3)
        q = rng.normal(size=4)
        log_scale = np.array([-1.0, 0.0, 0.5])
        cov = covariance_of(q, log_scale)
        eig = np.sort(np.linalg.eigvalsh(cov))
        assert np.allclose(eig, np.sort(np.exp(2 * log_scale)), rtol=1e-12)

    def test_scale_invariance_of_quaternion(self):
        # The stored quaternion is unnormalized; covariance must not change
        # when it is scaled.
        rng = np.random.default_rng(4)
        q = rng.normal(size=4)
        ls = rng.normal(size=3)
        assert np.allclose(covariance_of(q, ls), covariance_of(5.0 * q, ls),
                           rtol=1e-12)

    def test_batched_matches_single(self):
        cloud = random_cloud(10, seed=5)
        batch = covariances_of(cloud.rotations, cloud.log_scales)
        for i in range(10):
            single = covariance_of(cloud.rotations[i], cloud.log_scales[i])
            assert np.allclose(batch[i], single, rtol=0, atol=1e-15)

    def test_spd(self):
        cloud = random_cloud(50, seed=6)
        covs = covariances_of(cloud.rotations, cloud.log_scales)
        assert np.allclose(covs, np.transpose(covs, (0, 2, 1)))
        assert np.all(np.linalg.eigvalsh(covs) > 0)

    def test_explicit_construction(self):
        # Compare against a literal R @ S @ S.T @ R.T with materialized
        # diagonal matrices.
        rng = np.random.default_rng(7)
        q = rng.normal(size=4)
        ls = rng.normal(size=3)
        R = quat_to_matrix(q)
        S = np.diag(np.exp(ls))
        assert np.allclose(covariance_of(q, ls), R @ S @ S.T @ R.T, rtol=1e-14)


class TestSampleCenters:
    def test_without_replacement_when_enough(self):
        cloud = random_cloud(100, seed=8)
        ps = sample_centers(cloud, n=60, seed=1)
        assert ps.points.shape == (60, 3)
        # All sampled points are distinct rows of the cloud.
        seen = {tuple(p) for p in ps.points}
        assert len(seen) == 60

    def test_with_replacement_when_oversampled(self):
        cloud = random_cloud(10, seed=9)
        ps = sample_centers(cloud, n=40, seed=1)
        assert ps.points.shape == (40, 3)

    def test_deterministic_for_seed(self):
        cloud = random_cloud(50, seed=10)
        a = sample_centers(cloud, n=20, seed=7)
        b = sample_centers(cloud, n=20, seed=7)
        assert np.array_equal(a.points, b.points)
        c = sample_centers(cloud, n=20, seed=8)
        assert not np.array_equal(a.points, c.points)

    def test_empty_and_bad_count(self):
        cloud = random_cloud(5)
        with pytest.raises(ValueError):
            sample_centers(cloud, n=0)


class TestPlyRoundtrip:
    @pytest.mark.parametrize("width", [0, 9, 24, 45])
    def test_roundtrip_exact_for_f32_values(self, width, tmp_path):
        cloud = random_cloud(17, sh_rest_width=width, seed=11, f32=True)
        path = tmp_path / "cloud.ply"
        write_gs_ply(cloud, path)
        back = read_gs_ply(path)
        assert len(back) == 17
        assert back.sh_degree == cloud.sh_degree
        for name in ("centers", "log_scales", "rotations", "opacity_logits",
                     "sh_dc", "sh_rest"):
            assert np.array_equal(getattr(back, name), getattr(cloud, name)), name

    def test_write_read_write_byte_identical(self, tmp_path):
        cloud = random_cloud(23, seed=12)  # full float64, first write is lossy
        p1 = tmp_path / "a.ply"
        p2 = tmp_path / "b.ply"
        write_gs_ply(cloud, p1)
        write_gs_ply(read_gs_ply(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_row_order_preserved(self, tmp_path):
        cloud = random_cloud(30, seed=13, f32=True)
        path = tmp_path / "c.ply"
        write_gs_ply(cloud, path)
        back = read_gs_ply(path)
        assert np.array_equal(back.centers, cloud.centers)

    def test_header_property_order(self, tmp_path):
        cloud = random_cloud(2, sh_rest_width=9, seed=14)
        path = tmp_path / "d.ply"
        write_gs_ply(cloud, path)
        header = path.read_bytes().split(b"end_header")[0].decode()
        names = [line.split()[-1] for line in header.splitlines()
                 if line.startswith("property")]
        assert names[:9] == ["x", "y", "z", "nx", "ny", "nz",
                             "f_dc_0", "f_dc_1", "f_dc_2"]
        assert names[9:18] == [f"f_rest_{i}" for i in range(9)]
        assert names[18:] == ["opacity", "scale_0", "scale_1", "scale_2",
                              "rot_0", "rot_1", "rot_2", "rot_3"]

    def test_normals_written_as_zero(self, tmp_path):
        cloud = random_cloud(4, seed=15)
        path = tmp_path / "e.ply"
        write_gs_ply(cloud, path)
        raw = path.read_bytes()
        body = raw.split(b"end_header\n", 1)[1]
        rec = np.frombuffer(body, dtype=np.dtype([(f"c{i}", "<f4")
                                                  for i in range(26)]))
        for i in (3, 4, 5):
            assert np.all(rec[f"c{i}"] == 0.0)

    def test_empty_cloud_write_rejected(self, tmp_path):
        cloud = GaussianCloud(
            centers=np.zeros((0, 3)), log_scales=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)), opacity_logits=np.zeros(0),
            sh_dc=np.zeros((0, 3)), sh_rest=np.zeros((0, 9)))
        with pytest.raises(ValueError):
            write_gs_ply(cloud, tmp_path / "f.ply")


class TestPlyErrors:
    def test_missing_property_named(self, tmp_path):
        cloud = random_cloud(3, seed=16)
        path = tmp_path / "g.ply"
        write_gs_ply(cloud, path)
        raw = path.read_bytes().replace(b"property float opacity\n", b"")
        bad = tmp_path / "bad.ply"
        bad.write_bytes(raw)
        with pytest.raises(PlyFormatError, match="opacity"):
            read_gs_ply(bad)

    def test_unsupported_f_rest_count(self, tmp_path):
        cloud = random_cloud(3, sh_rest_width=9, seed=17)
        path = tmp_path / "h.ply"
        write_gs_ply(cloud, path)
        raw = path.read_bytes().replace(b"property float f_rest_8\n", b"")
        bad = tmp_path / "bad.ply"
        bad.write_bytes(raw)
        with pytest.raises(UnsupportedLayoutError):
            read_gs_ply(bad)

    def test_truncated_body_reports_offset(self, tmp_path):
        cloud = random_cloud(5, seed=18)
        path = tmp_path / "i.ply"
        write_gs_ply(cloud, path)
        raw = path.read_bytes()
        bad = tmp_path / "bad.ply"
        bad.write_bytes(raw[:-10])
        with pytest.raises(PlyReadError, match=f"{len(raw) - 10}"):
            read_gs_ply(bad)

    def test_not_a_ply(self, tmp_path):
        bad = tmp_path / "x.ply"
        bad.write_bytes(b"OFF\n3 1 0\n")
        with pytest.raises(PlyFormatError):
            read_gs_ply(bad)

    def test_ascii_format_rejected(self, tmp_path):
        bad = tmp_path / "y.ply"
        bad.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n")
        with pytest.raises(PlyFormatError, match="ascii"):
            read_gs_ply(bad)
