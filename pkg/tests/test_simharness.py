import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from voxfc.errors import DomainError
from voxfc.simharness import (PRESETS, TABLE_1B_SCENARIOS, ScenarioConfig, aggregate, compute_metrics,
                              preset, render_accuracy_table, render_runtime_table, render_sweep_table,
                              render_univariate_table, run_replicates, run_robustness_sweep, run_scenario)
from voxfc.simulator import SeedSpec


def tiny(**kw):
    base = dict(name="tiny", N=60, n1=3, n2=3, T=20, replicates=3, n_boot=10,
                methods=("proposed", "univariate"), seed=SeedSpec(99))
    base.update(kw)
    return ScenarioConfig(**base)


def test_presets_match_settings_table():
    dims = {name: (PRESETS[name].N, PRESETS[name].n1, PRESETS[name].T) for name in TABLE_1B_SCENARIOS}
    assert dims == {"baseline": (1000, 10, 100), "n500": (500, 10, 100), "n300": (300, 10, 100),
                    "longT": (1000, 10, 200), "morevox": (1000, 30, 100)}
    b = PRESETS["baseline"]
    assert b.beta == (0.5, 0.5) and b.replicates == 500 and b.n_boot == 100
    assert (b.region1.psi, b.region2.psi, b.region1.phi) == (1.0, 5.0, 0.3)
    assert PRESETS["realistic"].p == 4 and PRESETS["realistic"].covariate_design == "realistic"
    assert [PRESETS[f"hetero{k}"].heterogeneity.alpha for k in ("005", "01", "02")] == [0.05, 0.1, 0.2]
    with pytest.raises(DomainError):
        preset("huge")
    assert preset("baseline", N=10).N == 10


def test_config_validation():
    with pytest.raises(DomainError):
        tiny(replicates=0)
    with pytest.raises(DomainError):
        tiny(methods=("bayes",))
    with pytest.raises(DomainError):
        tiny(T=0)


def test_compute_metrics_examples():
    truth = np.array([0.5, -1.0])
    m = compute_metrics(np.tile(truth, (4, 1)), np.ones((4, 2)), truth)
    assert all(r["bias"] == 0 and r["rmse"] == 0 and r["coverage"] == 1 for r in m)
    est = np.array([[1.5], [-0.5], [1.5], [-0.5]])
    m = compute_metrics(est, np.ones((4, 1)), [0.5])[0]
    assert m["bias"] == 0 and m["rmse"] == 1 and m["coverage"] == 1 and m["se"] == 1
    assert m["se_bias"] == pytest.approx(np.std(est, ddof=1) / 2)
    m = compute_metrics(np.array([[0.0], [3.0]]), np.ones((2, 1)), [0.0])[0]
    assert m["coverage"] == 0.5
    with pytest.raises(DomainError):
        compute_metrics(np.zeros((3, 2)), np.zeros((3, 1)), [0, 0])


@given(arrays(float, (7, 2), elements=st.floats(-5, 5)), arrays(float, (7, 2), elements=st.floats(0.01, 3)))
def test_rmse_dominates_bias(est, ses):
    for j, m in enumerate(compute_metrics(est, ses, [0.1, -0.2])):
        assert m["rmse"] ** 2 >= m["bias"] ** 2 - 1e-12
        sd2 = np.var(est[:, j] - [0.1, -0.2][j])
        assert m["rmse"] ** 2 == pytest.approx(m["bias"] ** 2 + sd2, rel=1e-9, abs=1e-12)
        assert 0 <= m["coverage"] <= 1


def test_single_replicate_rows():
    rows = run_scenario(tiny(replicates=1))
    prop = [r for r in rows if r.method == "proposed"]
    assert [r.parameter for r in prop] == ["beta0", "beta1"]
    assert all(r.coverage in (0.0, 1.0) and r.n_replicates == 1 and math.isnan(r.se_bias) for r in prop)
    assert {r.method for r in rows} == {"proposed", "univariate", "univariate_boot"}


def test_run_scenario_is_deterministic_and_schedule_free():
    cfg = tiny()
    a = run_scenario(cfg, threads=1)
    b = run_scenario(cfg, threads=1)
    c = run_scenario(cfg, threads=2)
    key = lambda rows: [(r.method, r.parameter, r.bias, r.se, r.rmse, r.coverage) for r in rows]  # noqa: E731
    assert key(a) == key(b) == key(c)


def test_failures_are_counted():
    cfg = tiny(replicates=2, n1=20, n2=20, T=70, N=5, methods=("full_mle",))
    with pytest.warns(RuntimeWarning):
        records = run_replicates(cfg)
        rows = aggregate(cfg, records)
    assert rows == []
    assert all("SizeError" in rec.outcomes["full_mle"].error for rec in records)


def test_sweep_alpha_zero_matches_plain_run():
    cfg = tiny(replicates=2)
    plain = run_scenario(cfg)
    sweep = run_robustness_sweep([0.0], cfg)
    assert [(r.bias, r.rmse) for r in sweep[0.0]] == [(r.bias, r.rmse) for r in plain]
    with pytest.raises(DomainError):
        run_robustness_sweep([-0.1], cfg)
    het = run_robustness_sweep([0.2], cfg)[0.2]
    assert het[0].alpha == 0.2 and het[0].bias != plain[0].bias


def test_rmse_falls_with_participants_and_step2_is_cheaper():
    rmse, rows_all = [], []
    for N in (60, 120, 240):
        rows = run_scenario(tiny(N=N, replicates=25, n_boot=0, methods=("proposed",)))
        rows_all += rows
        rmse.append(rows[1].rmse)
    assert rmse[0] > rmse[1] > rmse[2]
    assert all(r.mean_runtime_step2 < r.mean_runtime_step1 for r in rows_all)


def test_renderers():
    rows = run_scenario(tiny(replicates=2))
    text = render_accuracy_table(rows, "Accuracy")
    assert text.startswith("Accuracy") and text.count("\ntiny") == 2
    assert render_univariate_table(rows).count("\ntiny") == 2
    assert "tiny" in render_runtime_table({"tiny": (1.0, 0.1)})
    assert render_sweep_table({0.05: rows}).count("beta") == 2
    r = replace(rows[0], coverage=float("nan"))
    assert "NA" in render_accuracy_table([r], "x")
