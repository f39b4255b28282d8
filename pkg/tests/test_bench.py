import dataclasses
import math

import numpy as np
import pytest

from svreg import bench
from svreg.bench import (
    ExperimentReport,
    ExperimentSpec,
    kde_l2_register,
    kde_mixture,
    linear_grid,
    run_convergence_range,
    run_perturbation_sweep,
    success_criteria,
)
from svreg.pointset import RigidTransform, quat_from_axis_angle
from svreg.registration import RegistrationConfig, RegistrationResult, svr
from svreg.synthetic import generate

DEG = math.pi / 180


def identity_registrant(X, Y, config):
    return RegistrationResult(RigidTransform.identity(X.dim), 0.0, converged=True)


def failing_registrant(X, Y, config):
    raise FloatingPointError("boom")


def small_fish():
    return generate("fish", n=120)


def test_identity_registrant_range_is_one_degree():
    grid = [-3 * DEG, -2 * DEG, -DEG, 0.0, DEG, 2 * DEG, 3 * DEG]
    spec = ExperimentSpec("convergence-range", source=small_fish(), grid=grid,
                          registrant=identity_registrant)
    rep = run_convergence_range(spec)
    assert rep.convergence_range() == (-DEG, DEG)


def test_zero_cell_succeeds_on_every_synthetic_set():
    for name in ("fish", "contour", "glyph", "road"):
        spec = ExperimentSpec("convergence-range", source=name, grid=[0.0], n_points=200)
        assert run_convergence_range(spec).records[0].success


def test_failed_cells_do_not_abort_sweep():
    spec = ExperimentSpec("convergence-range", source=small_fish(), grid=[0.0, 0.5],
                          registrant=failing_registrant)
    rep = run_convergence_range(spec)
    assert len(rep.records) == 2
    assert all(not r.success and math.isnan(r.rot_err_rad) for r in rep.records)
    assert rep.failures(0.5) == 1
    assert rep.convergence_range() is None


def test_fraction_zero_identical_sets():
    for kind in ("outlier", "noise", "occlusion"):
        spec = ExperimentSpec(kind, source=small_fish(), grid=[0.0], repetitions=2, rotation=0.0)
        rep = run_perturbation_sweep(spec)
        assert rep.mean_error(0.0) < 1e-3


def test_aggregates_recompute_from_records(tmp_path):
    spec = ExperimentSpec("noise", source=small_fish(), grid=[0.0, 0.05], repetitions=3, seed=4)
    rep = run_perturbation_sweep(spec)
    rep.write(tmp_path / "rec.csv")
    back = ExperimentReport.from_csv((tmp_path / "rec.csv").read_text())
    for p in rep.params():
        errs = [r.rot_err_rad for r in rep.records if r.param == p]
        assert rep.mean_error(p) == float(np.mean(errs))
        assert back.mean_error(p) == rep.mean_error(p)
        assert back.success_fraction(p) == rep.success_fraction(p)
    summary = (tmp_path / "rec_summary.csv").read_text().splitlines()
    assert summary[0] == "experiment,key,param,value"
    assert len(summary) == 1 + 4 * 2


def test_records_csv_round_trip_is_exact():
    recs = [bench.CellRecord("noise", 0.1, 0, 0.1 + 0.2, 1 / 3, True, 1.5),
            bench.CellRecord("noise", 0.1, 1, float("nan"), float("nan"), False, 2.0)]
    rep = ExperimentReport("noise", recs)
    back = ExperimentReport.from_csv(rep.records_csv())
    assert back.records[0] == recs[0]
    assert math.isnan(back.records[1].rot_err_rad)
    assert rep.records_csv().splitlines()[0] == \
        "experiment,param,rep,rot_err_rad,trans_err,success,wall_ms"


def test_convergence_summary_has_range_rows():
    recs = [bench.CellRecord("convergence-range", p, 0, 0.0 if abs(p) < 0.25 else 1.0, 0.0,
                             abs(p) < 0.25, 0.0) for p in linear_grid(-0.4, 0.4, 0.1)]
    rows = ExperimentReport("convergence-range", recs).summary_rows()
    keyed = {k: v for _, k, _, v in rows if k.startswith("range")}
    assert keyed == {"range_lo": -0.2, "range_hi": 0.2}


def test_sweep_is_deterministic():
    spec = ExperimentSpec("outlier", source=small_fish(), grid=[0.1], repetitions=2, seed=9)
    a, b = run_perturbation_sweep(spec), run_perturbation_sweep(spec)
    strip = lambda rep: [dataclasses.replace(r, wall_ms=0.0) for r in rep.records]
    assert strip(a) == strip(b)


def test_parallel_matches_serial():
    spec = ExperimentSpec("occlusion", source="fish", grid=[0.2], repetitions=2, seed=1)
    par = dataclasses.replace(spec, workers=2)
    strip = lambda rep: [dataclasses.replace(r, wall_ms=0.0) for r in rep.records]
    serial = strip(run_perturbation_sweep(spec))
    assert all(r.success for r in serial)
    assert serial == strip(run_perturbation_sweep(par))


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec("sideways")
    with pytest.raises(ValueError):
        ExperimentSpec("noise", grid=[])
    with pytest.raises(ValueError):
        ExperimentSpec("noise", repetitions=0)
    with pytest.raises(ValueError):
        run_perturbation_sweep(ExperimentSpec("convergence-range"))


def test_success_exact_recovery_passes_everything():
    T = RigidTransform(quat_from_axis_angle([0, 1, 1], 0.3), [1.0, 2.0, 3.0])
    for kind in ("quaternion-dot", "inlier", "degree"):
        assert success_criteria(T, T, kind)


def test_success_inlier_is_strict():
    truth = RigidTransform.identity(3)
    est = RigidTransform(quat_from_axis_angle([1, 0, 0], 0.2), np.zeros(3))
    assert not success_criteria(est, truth, "inlier")
    est = RigidTransform(quat_from_axis_angle([1, 0, 0], 0.19), np.zeros(3))
    assert success_criteria(est, truth, "inlier")
    est = RigidTransform([1, 0, 0, 0], [0.5, 0, 0])
    assert not success_criteria(est, truth, "inlier")
    assert success_criteria(est, truth, "inlier", translation_threshold=0.6)


def test_success_quaternion_dot_at_24_degrees():
    truth = RigidTransform.identity(3)
    est = RigidTransform(quat_from_axis_angle([0, 0, 1], 24 * DEG), np.zeros(3))
    assert abs(est.rotation @ truth.rotation) == pytest.approx(math.cos(12 * DEG))
    assert not success_criteria(est, truth, "quaternion-dot")
    est = RigidTransform(quat_from_axis_angle([0, 0, 1], 10 * DEG), np.zeros(3))
    assert success_criteria(est, truth, "quaternion-dot")


def test_success_degree_boundary():
    truth = RigidTransform.identity(2)
    assert success_criteria(RigidTransform(DEG, [0, 0]), truth)
    assert not success_criteria(RigidTransform(1.01 * DEG, [0, 0]), truth)
    with pytest.raises(ValueError):
        success_criteria(truth, None)
    with pytest.raises(ValueError):
        success_criteria(truth, truth, "nope")


def test_kde_component_count_and_weights():
    X = generate("fish", n=150)
    g = kde_mixture(X, 0.3)
    assert len(g) == 150
    assert g.variance == pytest.approx(0.09)
    assert g.total_weight == pytest.approx(1.0)


def test_kde_identity_registration():
    X = generate("fish", n=150)
    res = kde_l2_register(X, X)
    assert abs(res.theta_star.rotation) < 1e-3
    assert len(res.rounds) == 1


def test_kde_and_svr_share_result_format():
    X = generate("fish", n=150)
    cfg = RegistrationConfig(max_rounds=2)
    a, b = svr(X, X, cfg), kde_l2_register(X, X, config=cfg)
    assert type(a) is type(b)
    assert [dataclasses.fields(r) for r in a.rounds] == [dataclasses.fields(r) for r in b.rounds]
    assert b.rounds[0].m == 150


def test_linear_grid():
    g = linear_grid(-3.1, 3.1, 0.1)
    assert len(g) == 63 and g[0] == -3.1 and g[-1] == 3.1 and 0.0 in g


def test_load_source_downsamples_3d(tmp_path):
    from svreg.io import write_points
    pts = np.random.default_rng(0).normal(size=(2500, 3))
    write_points(tmp_path / "cloud.xyz", pts)
    spec = ExperimentSpec("noise", source=str(tmp_path / "cloud.xyz"))
    ps = bench.load_source(spec)
    assert len(ps) == 2000
    assert len({tuple(p) for p in ps.points}) == 2000
