"""Grid driver: seed derivation, order independence, fits, and envelope checks."""

import json
import math

import numpy as np
import pytest

from covcon import rng
from covcon.bounds import DEFAULT_CONFIG, BoundConfig, main_probability_budget, theorem1_rhs
from covcon.errors import ContractError, RegimeError
from covcon.experiments import (
    CALIBRATION_MASTER_SEED,
    VERIFICATION_MASTER_SEED,
    CellResult,
    CellSummary,
    ExperimentGrid,
    bai_yin_sandwich,
    derive_seed,
    failure_rate,
    remark2_run,
    run_cell,
    run_grid,
    scaling_fit,
    summarize_reports,
)
from covcon.linalg import DeviationReport


def _grid(cells, trials=10, master=VERIFICATION_MASTER_SEED, cfg=DEFAULT_CONFIG):
    return ExperimentGrid(cells=tuple(cells), trials_per_cell=trials, master_seed=master, bound_config=cfg)


def _fake_result(n, N, deviation, trials=10):
    reports = tuple(
        DeviationReport(
            n=n,
            N=N,
            lambda_min=0.0,
            lambda_max=N * (1.0 + deviation),
            deviation=deviation,
            max_col_norm=1.0,
            boundedness_ratio=1.0,
            seed=t,
        )
        for t in range(trials)
    )
    summary = CellSummary(
        mean_deviation=deviation,
        median_deviation=deviation,
        max_deviation=deviation,
        psi_hat=1.0,
        k_hat=1.0,
        exceedance_count=0,
    )
    return CellResult(cell=("gaussian", n, N), reports=reports, summary=summary)


# --- seed derivation ---------------------------------------------------------


def test_derive_seed_matches_mix_oracle():
    assert derive_seed(0, 0, 0) == 0xE220A8397B1DCDAF  # SplitMix64 step of 0
    mask = (1 << 64) - 1
    for master, ci, ti in ((0xDEADBEEF, 3, 17), (mask, mask, mask), (1, 0, 1)):
        mixed = master ^ ((ci * 0x9E3779B97F4A7C15) & mask) ^ ((ti * 0xBF58476D1CE4E5B9) & mask)
        assert derive_seed(master, ci, ti) == rng.splitmix64(mixed)


def test_derive_seed_collision_free_at_scale():
    ci = np.arange(1_000, dtype=np.uint64)
    ti = np.arange(1_000, dtype=np.uint64)
    with np.errstate(over="ignore"):
        spread_c = ci * np.uint64(0x9E3779B97F4A7C15)
        spread_t = ti * np.uint64(0xBF58476D1CE4E5B9)
        mixed = (np.uint64(VERIFICATION_MASTER_SEED) ^ spread_c[:, None]) ^ spread_t[None, :]
    seeds = rng.splitmix64(mixed.ravel())
    assert len(np.unique(seeds)) == 1_000_000


def test_derive_seed_validation():
    with pytest.raises(ContractError):
        derive_seed(-1, 0, 0)
    with pytest.raises(ContractError):
        derive_seed(0, 1 << 64, 0)
    with pytest.raises(ContractError):
        derive_seed(0, 0, -5)


def test_master_seed_namespaces_disjoint():
    assert CALIBRATION_MASTER_SEED != VERIFICATION_MASTER_SEED
    assert derive_seed(CALIBRATION_MASTER_SEED, 0, 0) != derive_seed(VERIFICATION_MASTER_SEED, 0, 0)


# --- grid validation ---------------------------------------------------------


def test_grid_validation():
    with pytest.raises(ContractError):
        _grid([])
    with pytest.raises(ContractError):
        _grid([("gaussian", 2, 4)], trials=0)
    with pytest.raises(ContractError):
        _grid([("gaussian", 2, 4)], master=1 << 64)
    with pytest.raises(ContractError):
        _grid([("cauchy", 2, 4)])
    with pytest.raises(ContractError):
        _grid([("gaussian", 0, 4)])
    g = _grid([["gaussian", 2, 4]])  # lists are coerced to tuples
    assert g.cells == (("gaussian", 2, 4),)


# --- running cells -----------------------------------------------------------


def test_run_cell_is_reproducible():
    grid = _grid([("gaussian", 4, 32), ("euclidean_ball", 4, 32)], trials=12)
    first = run_cell(grid, 1)
    second = run_cell(grid, 1)
    assert first == second
    assert json.dumps(first.to_json_dict(), sort_keys=True) == json.dumps(
        second.to_json_dict(), sort_keys=True
    )
    assert first.cell == ("euclidean_ball", 4, 32)
    assert len(first.reports) == 12
    seeds = {r.seed for r in first.reports}
    assert len(seeds) == 12
    assert first.reports[0].seed == derive_seed(grid.master_seed, 1, 0)
    with pytest.raises(ContractError):
        run_cell(grid, 2)


def test_worker_count_does_not_change_results():
    grid = _grid([("gaussian", 3, 24), ("exponential_product", 3, 24)], trials=8)
    assert run_grid(grid, workers=1) == run_grid(grid, workers=3)


def test_summary_recomputable_from_reports():
    grid = _grid([("gaussian", 6, 96)], trials=15)
    res = run_cell(grid, 0)
    again = summarize_reports(res.cell, res.reports, res.summary.psi_hat, grid.bound_config)
    assert again == res.summary
    devs = sorted(r.deviation for r in res.reports)
    assert res.summary.max_deviation == devs[-1]
    assert res.summary.median_deviation == devs[7]
    assert res.summary.k_hat == max(r.boundedness_ratio for r in res.reports)
    assert res.summary.exceedance_count is not None


def test_wide_cell_summary_skips_exceedance():
    grid = _grid([("gaussian", 8, 4)], trials=10)
    res = run_cell(grid, 0)
    assert res.summary.exceedance_count is None
    assert all(r.deviation >= 1.0 for r in res.reports)


def test_median_deviation_tracks_sqrt_beta():
    grid = _grid([("gaussian", 16, 1024)], trials=50)
    res = run_cell(grid, 0)
    root_beta = math.sqrt(16.0 / 1024.0)
    assert 1.0 * root_beta <= res.summary.median_deviation <= 4.0 * root_beta


# --- scaling fit -------------------------------------------------------------


def test_scaling_fit_recovers_exact_power_law():
    results = [_fake_result(1, N, 2.0 * math.sqrt(1.0 / N)) for N in (4, 16, 64)]
    fit = scaling_fit(results)
    assert math.isclose(fit.exponent, 0.5, abs_tol=1e-12)
    assert math.isclose(fit.log_constant, math.log(2.0), abs_tol=1e-12)
    assert fit.r_squared >= 1.0 - 1e-12
    assert fit.beta_values == (0.25, 0.0625, 1.0 / 64.0)


def test_scaling_fit_flat_response():
    results = [_fake_result(1, N, 0.7) for N in (4, 16, 64)]
    fit = scaling_fit(results)
    assert math.isclose(fit.exponent, 0.0, abs_tol=1e-12)
    assert fit.r_squared == 1.0


def test_scaling_fit_requirements():
    with pytest.raises(ContractError):
        scaling_fit([])
    with pytest.raises(ContractError):
        scaling_fit([_fake_result(1, N, 0.5, trials=9) for N in (4, 16, 64)])
    with pytest.raises(ContractError):
        scaling_fit([_fake_result(1, 4, 0.5), _fake_result(1, 16, 0.4), _fake_result(2, 8, 0.45)])
    bad = [_fake_result(1, 4, 0.5), _fake_result(1, 16, 0.4), _fake_result(1, 64, 0.0)]
    with pytest.raises(ContractError):
        scaling_fit(bad)


# --- envelope checks ---------------------------------------------------------


def _with_cmain(value):
    return BoundConfig(**{**DEFAULT_CONFIG.to_json_dict(), "C_main": value})


def test_failure_rate_extremes_and_monotonicity():
    grid = _grid([("gaussian", 8, 256)], trials=20)
    results = run_grid(grid)
    loose = failure_rate(results, _with_cmain(1e3))[0]
    assert loose.exceedance_fraction == 0.0 and loose.passed is True
    # An envelope this small is beaten by every trial; the budget at n = 8 is
    # below 1, so the check must fail.
    tight = failure_rate(results, _with_cmain(1e-300))[0]
    assert tight.exceedance_fraction == 1.0 and tight.passed is False
    assert tight.budget == main_probability_budget(DEFAULT_CONFIG, 8) < 1.0
    fracs = [
        failure_rate(results, _with_cmain(c))[0].exceedance_fraction for c in (1e-300, 0.1, 1.0, 1e3)
    ]
    assert fracs == sorted(fracs, reverse=True)


def test_failure_rate_skips_wide_cells():
    grid = _grid([("gaussian", 8, 4)], trials=10)
    check = failure_rate(run_grid(grid), DEFAULT_CONFIG)[0]
    assert check.exceedance_fraction is None and check.passed is None
    assert "wide regime" in check.note
    d = check.to_json_dict()
    assert d["passed"] is None and d["note"]


def test_sandwich_is_equivalent_to_deviation_check():
    grid = _grid([("gaussian", 8, 128), ("euclidean_ball", 4, 64)], trials=20)
    results = run_grid(grid)
    checks = bai_yin_sandwich(results, DEFAULT_CONFIG)
    for res, check in zip(results, checks):
        _, n, N = res.cell
        eff = DEFAULT_CONFIG.with_hypothesis(res.summary.psi_hat, res.summary.k_hat)
        rhs = theorem1_rhs(eff, n, N)
        expected = tuple(r.deviation <= rhs for r in res.reports)
        assert check.trial_outcomes == expected
        assert check.fraction_holding == sum(expected) / 20
        assert check.passed == (check.fraction_holding >= 1.0 - check.budget)


def test_remark2_run():
    grid = _grid([("gaussian", 12, 3), ("gaussian", 16, 2)], trials=10)
    checks = remark2_run(grid, DEFAULT_CONFIG)
    for check in checks:
        assert check.dev_bound_exceeds_one
        assert all(check.norm_outcomes)
        assert all(check.dev_outcomes)
        assert check.passed
    # The runner refuses mixed-regime grids outright.
    with pytest.raises(RegimeError):
        remark2_run(_grid([("gaussian", 12, 3), ("gaussian", 4, 8)]), DEFAULT_CONFIG)


def test_remark2_single_column_identity():
    # With N = 1 the Gram matrix is rank one: the operator norm is exactly the
    # single column's length.
    grid = _grid([("gaussian", 5, 1)], trials=10)
    res = run_grid(grid)[0]
    for r in res.reports:
        assert math.isclose(math.sqrt(r.lambda_max), r.max_col_norm, rel_tol=1e-10)
