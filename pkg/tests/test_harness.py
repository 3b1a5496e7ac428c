import json
import warnings

import numpy as np
import pytest

from ckgopt import harness as H
from ckgopt.ckg import CkgConfig
from ckgopt.design import OptimizerConfig
from ckgopt.problems import get_problem, opportunity_cost

TINY_CKG = CkgConfig(n_y=3, n_c_per_constraint=2, mc_samples_nc=3, candidate_count=4,
                     top_subset=1, inner=OptimizerConfig(screening_grid_size=40,
                                                         max_evals_per_start=10),
                     outer=OptimizerConfig(max_evals_per_start=5))
TINY_OPT = OptimizerConfig(starts=2, max_evals_per_start=30, screening_grid_size=100)


def small(**kw):
    base = dict(budget_B=2, init_count=5, ckg=TINY_CKG, optimizer=TINY_OPT, fit_starts=2,
                cts_candidates=50, nei_samples=4)
    base.update(kw)
    return H.RunConfig(**base)


# -- config -------------------------------------------------------------------

def test_config_defaults_and_validation():
    c = H.RunConfig()
    assert (c.problem, c.acquisition, c.budget_B, c.init_count) == ("mystery", "cKG", 40, 10)
    with pytest.raises(ValueError):
        H.RunConfig(acquisition="UCB")
    with pytest.raises(ValueError):
        H.RunConfig(budget_B=0)
    with pytest.raises(ValueError):
        H.RunConfig(noise_std=-1.0)


def test_parse_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown"):
        H.parse_config({"problem": "mystery", "budjet_B": 3})


def test_parse_config_matrix_only_in_benchmark():
    data = {"problem": ["mystery", "new-branin"], "acquisition": ["cKG", "cEI"]}
    with pytest.raises(ValueError):
        H.parse_config(data)
    cfgs = H.parse_config(data, allow_lists=True)
    assert [(c.problem, c.acquisition) for c in cfgs] == [
        ("mystery", "cKG"), ("mystery", "cEI"), ("new-branin", "cKG"), ("new-branin", "cEI")]


def test_load_yaml(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text("problem: test-function-2\nbudget_B: 3\nckg:\n  n_y: 5\n")
    (cfg,) = H.load_config(p)
    assert cfg.problem == "test-function-2" and cfg.budget_B == 3 and cfg.ckg.n_y == 5


# -- loop -----------------------------------------------------------------------

@pytest.mark.parametrize("acq", H.ACQUISITIONS)
def test_every_acquisition_runs(acq):
    rec = H.bo_run(small(problem="test-function-2", acquisition=acq), replication=1)
    assert not rec.failed, rec.error
    assert len(rec.iterations) == 2
    assert rec.n_observations == 7
    spec = get_problem("test-function-2")
    for it in rec.iterations:
        assert spec.domain.contains(it.x) and spec.domain.contains(it.x_r)


def test_single_iteration_budget():
    rec = H.bo_run(small(acquisition="random", budget_B=1))
    assert len(rec.iterations) == 1 and rec.n_observations == 6


def test_same_seed_identical_records():
    a = H.bo_run(small(acquisition="cKG"), replication=3)
    b = H.bo_run(small(acquisition="cKG"), replication=3)
    assert H.trace_csv([a]) == H.trace_csv([b])
    assert a.initial_oc == b.initial_oc
    np.testing.assert_array_equal(a.initial_x_r, b.initial_x_r)


def test_different_seeds_differ():
    a = H.bo_run(small(acquisition="random"), replication=0)
    b = H.bo_run(small(acquisition="random"), replication=1)
    assert H.trace_csv([a]) != H.trace_csv([b])


def test_oc_uses_noiseless_truth():
    rec = H.bo_run(small(acquisition="NEI", noise_std=1.0, budget_B=3))
    spec = get_problem("mystery")
    for it in rec.iterations:
        assert it.oc >= 0
        assert it.oc == opportunity_cost(spec, it.x_r)
        # observations are noisy, ground truth is not
        assert it.y != spec.objective_fn(it.x)


def test_cei_warns_when_noisy():
    with pytest.warns(UserWarning, match="cEI"):
        H.bo_run(small(acquisition="cEI", noise_std=1.0, budget_B=1))


def test_failed_replication_is_recorded(monkeypatch):
    def boom(*args, **kwargs):
        raise H.NumericalError("synthetic")

    monkeypatch.setattr(H, "_next_point", boom)
    rec = H.bo_run(small(acquisition="random"))
    assert rec.failed and "synthetic" in rec.error
    assert rec.n_observations == 5


# -- aggregation ----------------------------------------------------------------

def test_aggregate_mean_of_two():
    cfg = small(acquisition="random", replications=2)
    recs = [H.bo_run(cfg, replication=r) for r in range(2)]
    agg = H.aggregate(recs)
    full = [np.r_[r.initial_oc, r.oc_trace] for r in recs]
    np.testing.assert_allclose(agg.mean_oc, (full[0] + full[1]) / 2, rtol=0, atol=1e-15)
    sd = np.std(full, axis=0, ddof=1)
    np.testing.assert_allclose(agg.ci95_halfwidth, 1.96 * sd / np.sqrt(2), atol=1e-15)
    assert agg.n_replications == 2 and len(agg.iterations) == cfg.budget_B + 1


def test_aggregate_single_replication_warns():
    rec = H.bo_run(small(acquisition="random"))
    with pytest.warns(UserWarning):
        agg = H.aggregate([rec])
    assert agg.single_replication
    assert np.all(agg.ci95_halfwidth == 0)


def test_aggregate_identical_records_linear():
    rec = H.bo_run(small(acquisition="random", budget_B=3))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        agg = H.aggregate([rec] * 4)
    np.testing.assert_array_equal(agg.mean_oc, np.r_[rec.initial_oc, rec.oc_trace])


def test_aggregate_excludes_failed():
    ok = H.bo_run(small(acquisition="random"))
    bad = H.ExperimentRecord(ok.config, 1, 1, failed=True, error="x")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        agg = H.aggregate([ok, bad])
    assert agg.n_failed == 1 and agg.n_replications == 1
    np.testing.assert_array_equal(agg.mean_oc, np.r_[ok.initial_oc, ok.oc_trace])


def test_benchmark_parallel_matches_serial():
    cfg = small(acquisition="random", replications=2, budget_B=2)
    serial = H.benchmark([cfg], workers=1)[0][1]
    parallel = H.benchmark([cfg], workers=2)[0][1]
    np.testing.assert_array_equal(serial.mean_oc, parallel.mean_oc)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv(H.WORKERS_ENV, "3")
    assert H.worker_count() == 3
    monkeypatch.delenv(H.WORKERS_ENV)
    assert H.worker_count() >= 1


# -- output ---------------------------------------------------------------------

def test_emit_results(tmp_path):
    cfg = small(acquisition="random", budget_B=3)
    rec = H.bo_run(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        agg = H.aggregate([rec])
    paths = H.emit_results([rec], tmp_path, agg)
    lines = paths["trace"].read_text().splitlines()
    assert len(lines) == cfg.budget_B + 1
    assert lines[0].startswith("replication,seed,iteration,x_0,x_1,y,c_0,xr_0,xr_1,oc")
    back = H.read_aggregate_csv(paths["aggregate"])
    assert list(back) == ["iteration", "mean_oc", "ci95_halfwidth", "n_replications"]
    np.testing.assert_array_equal(back["mean_oc"], agg.mean_oc)
    np.testing.assert_array_equal(back["ci95_halfwidth"], agg.ci95_halfwidth)
    meta = json.loads(paths["metadata"].read_text())
    assert meta["config"]["budget_B"] == 3
    assert meta["replications"][0]["initial_oc"] == rec.initial_oc
    # the metadata config is enough to rebuild the run
    again = H.bo_run(H.RunConfig(**meta["config"]))
    assert H.trace_csv([again]) == H.trace_csv([rec])


def test_fmt_round_trips():
    for v in (0.1, 1 / 3, 1e-300, 123456789.123456789):
        assert float(H.fmt(v)) == v


def test_emit_unwritable_echoes(tmp_path, capsys):
    rec = H.bo_run(small(acquisition="random", budget_B=1))
    blocker = tmp_path / "file"
    blocker.write_text("")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(OSError):
            H.emit_results([rec], blocker / "sub")
    out = capsys.readouterr().out
    assert "_trace.csv" in out and "mean_oc" in out


def test_emit_requires_records(tmp_path):
    with pytest.raises(ValueError):
        H.emit_results([], tmp_path)
