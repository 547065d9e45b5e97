"""End-to-end pipeline tests on small synthetic fixtures."""

import json
from pathlib import Path

import numpy as np
import pytest

from cagewarp.errors import PipelineError
from cagewarp.fitting import FitConfig
from cagewarp.metrics import baseline_bbox_scale, write_point_ply
from cagewarp.pipeline import PipelineConfig, run_pipeline
from cagewarp.points import PointSet, bbox_of
from cagewarp.splats import read_gs_ply, write_gs_ply

from conftest import random_cloud


def _affine(points):
    ang = 0.3
    c, s = np.cos(ang), np.sin(ang)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return points @ (rot @ np.diag([1.3, 0.8, 1.1])).T \
        + np.array([0.4, -0.2, 0.1])


@pytest.fixture()
def fixture_paths(tmp_path):
    cloud = random_cloud(400, seed=5)
    source = tmp_path / "source.ply"
    write_gs_ply(cloud, source)
    target = tmp_path / "target.ply"
    write_point_ply(PointSet(points=_affine(cloud.centers)), target)
    return cloud, source, target


def _config(source, target, out_dir, **kwargs):
    defaults = dict(
        source=str(source), output_dir=str(out_dir),
        target=None if target is None else str(target),
        fit=FitConfig(iterations=50), sample_count=400,
        jacobian_sites=80, lambdas=(1.0,), workers=1)
    defaults.update(kwargs)
    return PipelineConfig(**defaults)


def test_deform_run_writes_all_artifacts(fixture_paths, tmp_path):
    cloud, source, target = fixture_paths
    out = tmp_path / "out"
    cfg = _config(source, target, out, lambdas=(0.0, 0.5, 1.0))
    summary = run_pipeline(cfg)

    expected = {"deformed_lam0.00.ply", "deformed_lam0.50.ply",
                "deformed_lam1.00.ply", "source_cage.obj",
                "deformed_cage.obj", "fit_trace.csv", "metrics.json"}
    assert {p.name for p in out.iterdir()} == expected
    assert summary["mode"] == "deform"
    assert len(summary["outputs"]) == 3

    # stronger deformation gets closer to the target
    by_lam = {o["lambda"]: o["chamfer_sq_normalized"]
              for o in summary["outputs"]}
    assert by_lam[1.0] < by_lam[0.5] < by_lam[0.0]

    # lambda = 0 leaves the model untouched
    unmoved = read_gs_ply(out / "deformed_lam0.00.ply")
    np.testing.assert_array_equal(
        unmoved.centers, read_gs_ply(source).centers)

    saved_metrics = json.loads((out / "metrics.json").read_text())
    assert saved_metrics == summary


def test_two_runs_are_byte_identical(fixture_paths, tmp_path):
    _, source, target = fixture_paths
    dirs = (tmp_path / "a", tmp_path / "b")
    for d in dirs:
        run_pipeline(_config(source, target, d, lambdas=(0.5, 1.0)))
    names = sorted(p.name for p in dirs[0].iterdir())
    assert names == sorted(p.name for p in dirs[1].iterdir())
    for name in names:
        a = (dirs[0] / name).read_bytes()
        b = (dirs[1] / name).read_bytes()
        assert a == b, f"{name} differs between identical runs"


def test_worker_count_does_not_change_results(fixture_paths, tmp_path):
    _, source, target = fixture_paths
    outs = {}
    for workers in (1, 3):
        d = tmp_path / f"w{workers}"
        run_pipeline(_config(source, target, d, workers=workers,
                             center_chunk=128))
        outs[workers] = (d / "deformed_lam1.00.ply").read_bytes()
    assert outs[1] == outs[3]


def test_apply_cage_replays_fit_output(fixture_paths, tmp_path):
    _, source, target = fixture_paths
    first = tmp_path / "fit_run"
    run_pipeline(_config(source, target, first))

    second = tmp_path / "replay"
    cfg = _config(source, None, second,
                  cage_in=(str(first / "source_cage.obj"),
                           str(first / "deformed_cage.obj")))
    summary = run_pipeline(cfg)
    assert summary["mode"] == "apply-cage"
    assert "fit" not in summary
    assert (second / "deformed_lam1.00.ply").read_bytes() \
        == (first / "deformed_lam1.00.ply").read_bytes()


def test_fit_cage_only_writes_no_models(fixture_paths, tmp_path):
    _, source, target = fixture_paths
    out = tmp_path / "cages"
    summary = run_pipeline(_config(source, target, out), cages_only=True)
    names = {p.name for p in out.iterdir()}
    assert names == {"source_cage.obj", "deformed_cage.obj",
                     "fit_trace.csv", "metrics.json"}
    assert summary["mode"] == "fit-cage"
    assert summary["outputs"] == []
    header, first_row = (out / "fit_trace.csv").read_text() \
        .splitlines()[:2]
    assert header.split(",") == ["iteration", "total", "alignment",
                                 "barrier", "flip_penalty", "best"]
    assert first_row.startswith("1,")


def test_baseline_mode_matches_library_call(fixture_paths, tmp_path):
    cloud, source, target = fixture_paths
    out = tmp_path / "bl"
    summary = run_pipeline(_config(source, target, out,
                                   baseline_mode=True))
    assert summary["mode"] == "baseline"
    written = read_gs_ply(out / "baseline.ply")

    # the target file stores float32, so the box must be computed from
    # the values the pipeline actually reads back
    stored = _affine(cloud.centers).astype(np.float32).astype(np.float64)
    lo, hi = bbox_of(stored)
    oracle = baseline_bbox_scale(read_gs_ply(source), lo, hi)
    np.testing.assert_array_equal(written.centers,
                                  oracle.centers.astype(np.float32)
                                  .astype(np.float64))


def test_failed_stage_removes_partial_outputs(fixture_paths, tmp_path):
    _, source, _ = fixture_paths
    out = tmp_path / "broken"
    cfg = _config(source, tmp_path / "missing_target.ply", out)
    with pytest.raises(PipelineError) as excinfo:
        run_pipeline(cfg)
    assert excinfo.value.stage == "load-target"
    assert not any(out.iterdir())


def test_config_validation_failures(fixture_paths, tmp_path):
    _, source, target = fixture_paths
    out = tmp_path / "cfg"
    for kwargs, fragment in (
            (dict(lambdas=(1.5,)), "lambda"),
            (dict(lambdas=()), "lambda"),
            (dict(lambdas=(0.5, 0.5)), "duplicate"),
            (dict(jacobian_method="magic"), "jacobian_method"),
            (dict(target_kind="volume"), "target_kind"),
            (dict(jacobian_sites=0), "jacobian_sites"),
    ):
        with pytest.raises(PipelineError) as excinfo:
            run_pipeline(_config(source, target, out, **kwargs))
        assert excinfo.value.stage == "config"
        assert fragment in str(excinfo.value)

    with pytest.raises(PipelineError, match="distinct"):
        run_pipeline(_config(source, source, out))

    with pytest.raises(PipelineError, match="target is required"):
        run_pipeline(_config(source, None, out))


def test_covariance_ablation_keeps_centers(fixture_paths, tmp_path):
    _, source, target = fixture_paths
    full_dir, abl_dir = tmp_path / "full", tmp_path / "abl"
    run_pipeline(_config(source, target, full_dir))
    run_pipeline(_config(source, target, abl_dir,
                         update_covariance=False))
    full = read_gs_ply(full_dir / "deformed_lam1.00.ply")
    ablated = read_gs_ply(abl_dir / "deformed_lam1.00.ply")
    np.testing.assert_array_equal(full.centers, ablated.centers)
    source_cloud = read_gs_ply(source)
    np.testing.assert_array_equal(ablated.rotations, source_cloud.rotations)
    np.testing.assert_array_equal(ablated.log_scales,
                                  source_cloud.log_scales)
    assert not np.array_equal(full.rotations, source_cloud.rotations)


def test_normalize_off_still_fits(fixture_paths, tmp_path):
    _, source, target = fixture_paths
    out = tmp_path / "raw_frame"
    summary = run_pipeline(_config(source, target, out, normalize=False))
    assert summary["normalize"] is False
    assert (out / "deformed_lam1.00.ply").is_file()
    # the raw-frame fit still lands near the target
    assert summary["outputs"][0]["chamfer_sq_normalized"] < 5e-3


def test_mesh_target_runs(fixture_paths, tmp_path):
    _, source, _ = fixture_paths
    mesh_path = tmp_path / "target.obj"
    mesh_path.write_text(
        "v -1 -1 -0.4\nv 1 -1 -0.4\nv 1 1 -0.4\nv -1 1 -0.4\n"
        "v -1 -1 0.4\nv 1 -1 0.4\nv 1 1 0.4\nv -1 1 0.4\n"
        "f 1 3 2\nf 1 4 3\nf 5 6 7\nf 5 7 8\n"
        "f 1 2 6\nf 1 6 5\nf 2 3 7\nf 2 7 6\n"
        "f 3 4 8\nf 3 8 7\nf 4 1 5\nf 4 5 8\n")
    out = tmp_path / "mesh_out"
    summary = run_pipeline(_config(source, mesh_path, out,
                                   fit=FitConfig(iterations=30)))
    assert (out / "deformed_lam1.00.ply").is_file()
    assert summary["outputs"][0]["chamfer_sq_normalized"] >= 0.0


def test_timings_file_is_optional_diagnostic(fixture_paths, tmp_path):
    _, source, target = fixture_paths
    out = tmp_path / "timed"
    timings = tmp_path / "timings.json"
    run_pipeline(_config(source, target, out), timings_out=timings)
    stages = json.loads(timings.read_text())["stage_seconds"]
    assert "fit-cage" in stages and "verify" in stages
    assert all(v >= 0.0 for v in stages.values())
    assert not (out / "timings.json").exists()
