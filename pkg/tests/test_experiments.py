import json

import numpy as np
import pytest

from migcl import DesignConfig, design_params, expected_matrix, risk_measures, run_battery
from migcl.experiments import true_natural


def test_horizon_one_risk_is_closed_form(design3):
    rm = risk_measures(design3, horizons=(1, 3), n_paths=50)
    p1 = expected_matrix(design3)
    assert rm.dp1 == pytest.approx(p1[3:, 2].sum(), abs=1e-12)
    assert rm.pd[1] == pytest.approx(p1[7, 2], abs=1e-12)
    assert [name for name, _ in rm.as_rows()] == ["DP1", "DP2", "PD1", "PD3"]
    with pytest.raises(ValueError):
        risk_measures(design3, origin=8)


def test_risk_increases_with_horizon(design3):
    rm = risk_measures(design3, horizons=(1, 6, 12), n_paths=500)
    assert rm.dp2 > rm.dp1
    assert rm.pd[1] < rm.pd[6] < rm.pd[12]


def test_true_vector_layout(design3):
    assert true_natural(design3, "cl1").size == 19
    assert true_natural(design3, "cl2").size == 27


@pytest.fixture(scope="module")
def small_cfg():
    return DesignConfig(design=1, rho=0.0, n_firms=150, t_len=25, n_replications=4, seed=3)


def test_battery_is_deterministic(small_cfg):
    a = run_battery(small_cfg)
    b = run_battery(small_cfg)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)
    assert a.n_converged == 4 and not a.failures
    assert a.estimates.shape == (4, 19)


def test_battery_independent_of_workers(small_cfg):
    a = run_battery(small_cfg, workers=1)
    b = run_battery(small_cfg, workers=2)
    assert np.array_equal(a.estimates, b.estimates)
    assert np.array_equal(a.mean_abs_bias, b.mean_abs_bias)
    assert a.to_dict() == b.to_dict()


def test_battery_summaries(small_cfg):
    s = run_battery(small_cfg)
    truth = true_natural(design_params(small_cfg), "cl1")
    assert np.allclose(s.mean_abs_bias, np.abs(s.estimates - truth).mean(axis=0))
    assert np.allclose(s.mean_se, np.sqrt((s.se**2).mean(axis=0)))
    assert np.all((s.coverage >= 0) & (s.coverage <= 1))


def test_failed_replications_are_recorded():
    # two dates leave no two-step counts, so every lag-2 fit fails
    cfg = DesignConfig(design=2, n_firms=20, t_len=2, n_replications=2, mode="cl2",
                       risk_paths=0)
    s = run_battery(cfg)
    assert len(s.failures) == 2 and "two-step" in s.failures[0]["error"]
    assert s.estimates.shape == (0, 27)


def test_battery_csv_outputs(tmp_path, small_cfg):
    s = run_battery(small_cfg)
    s.write_summary_csv(tmp_path / "summary.csv")
    s.write_tstats_csv(tmp_path / "tstats.csv")
    s.write_risk_csv(tmp_path / "risk.csv", paper_format=True)
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert lines[0].startswith("parameter,true,mean_abs_bias") and len(lines) == 20
    assert len((tmp_path / "tstats.csv").read_text().splitlines()) == 5
    assert (tmp_path / "risk.csv").read_text().splitlines()[1].startswith("DP1,")
