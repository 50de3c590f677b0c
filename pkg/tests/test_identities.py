"""Identity verification suite: classifications, trends, and reports."""

import json

import numpy as np
import pytest

import polaronlab as pl
from polaronlab import ConfigError
from polaronlab.identities import (
    DEFAULT_THRESHOLDS,
    EXACT,
    ORACLE_LIMITED,
    TRUNCATION_LIMITED,
    _strictly_decreasing,
    norm_identity_value,
    verify_energy_derivatives,
    verify_pullthrough,
)

LEVELS = (2, 3, 4)


@pytest.fixture(scope="module")
def small_suite(small_grid, small_ff):
    reports = pl.run_suite(small_grid, small_ff, LEVELS)
    return {r.identity: r for r in reports}


def test_suite_covers_all_identities(small_suite):
    assert set(small_suite) == set(pl.IDENTITY_IDS)


def test_classifications(small_suite):
    expect = {
        "pullthrough-creator": TRUNCATION_LIMITED,
        "pullthrough-annihilator": TRUNCATION_LIMITED,
        "resolvent-splitting-vacuum": EXACT,
        "resolvent-splitting-one-boson": EXACT,
        "vacuum-schur": EXACT,
        "lambda-oneboson": TRUNCATION_LIMITED,
        "c0-identity": EXACT,
        "rearrangement": EXACT,
        "norm-identity": TRUNCATION_LIMITED,
        "energy-derivatives": ORACLE_LIMITED,
    }
    for name, cls in expect.items():
        assert small_suite[name].classification == cls


def test_everything_passes_on_small_instance(small_suite):
    for report in small_suite.values():
        assert report.passed is True, report.identity


def test_exact_identities_at_machine_precision(small_suite):
    for name in (
        "resolvent-splitting-vacuum",
        "resolvent-splitting-one-boson",
        "vacuum-schur",
        "c0-identity",
        "rearrangement",
    ):
        for value in small_suite[name].summary:
            assert value <= 1e-12, name


def test_truncation_ladders_strictly_decrease(small_suite):
    for name in (
        "pullthrough-creator",
        "pullthrough-annihilator",
        "lambda-oneboson",
        "norm-identity",
    ):
        vals = small_suite[name].summary
        assert all(b < a for a, b in zip(vals, vals[1:])), name


def test_pullthrough_protected_probes(small_suite):
    for name in ("pullthrough-creator", "pullthrough-annihilator"):
        protected = small_suite[name].residuals["protected"]
        # no protected sector exists at the smallest truncation
        assert protected[0] is None
        for value in protected[1:]:
            assert value is not None and value <= 1e-12
        boundary = [v for v in small_suite[name].residuals["boundary"] if v is not None]
        assert all(b < a for a, b in zip(boundary, boundary[1:]))


def test_norm_identity_families(small_suite):
    report = small_suite["norm-identity"]
    for family in (
        "pairing",
        "vector_construction",
        "scalar_pairing",
        "null_vector",
        "construction_paths",
    ):
        assert family in report.residuals
    assert report.residuals["pairing"][-1] <= 1e-2
    phi_norms = report.details["phi_norms"]
    assert all(n is not None and 0.9 < n < 1.0 for n in phi_norms)


def test_report_serializes_to_json(small_suite):
    for report in small_suite.values():
        payload = report.to_json_dict()
        text = json.dumps(payload, allow_nan=False)
        assert json.loads(text)["identity"] == report.identity
        assert payload["nmax_levels"] == list(LEVELS) or payload["nmax_levels"] == [4]


def test_suite_filter_and_unknown_id(small_grid, small_ff):
    reports = pl.run_suite(small_grid, small_ff, LEVELS, only=["vacuum-schur"])
    assert [r.identity for r in reports] == ["vacuum-schur"]
    with pytest.raises(ConfigError):
        pl.run_suite(small_grid, small_ff, LEVELS, only=["vacuum-schur", "bogus-id"])
    with pytest.raises(ConfigError):
        pl.run_suite(small_grid, small_ff, ())


def test_single_level_has_no_trend(small_grid, small_ff):
    reports = pl.run_suite(small_grid, small_ff, (3,))
    for report in reports:
        # one point is not a ladder: nothing can fail on trend alone
        assert report.passed is not False


def test_free_coupling_suite(small_grid):
    ff0 = pl.sample_form_factor(small_grid, "gaussian", 0.0)
    reports = {r.identity: r for r in pl.run_suite(small_grid, ff0, LEVELS)}
    # residuals collapse to the numerical floor; that must count as passing
    for name in ("pullthrough-creator", "lambda-oneboson", "c0-identity"):
        assert reports[name].passed is True
    # the weighted decomposition does not exist without coupling
    assert reports["norm-identity"].passed is None
    assert reports["rearrangement"].passed is None


def test_trend_helper_floor_semantics():
    assert _strictly_decreasing([1e-3, 1e-5, 1e-7]) is True
    assert _strictly_decreasing([1e-3, 1e-5, 1e-5]) is False
    assert _strictly_decreasing([0.0, 0.0, 0.0]) is True  # at the floor
    assert _strictly_decreasing([1e-3]) is None
    assert _strictly_decreasing([None, 1e-3]) is None
    assert _strictly_decreasing([1e-3, None, 1e-4]) is True


def test_pullthrough_probe_validation(small_workspaces):
    ws = small_workspaces[3]
    top = np.zeros(ws.basis.dim)
    top[-1] = 1.0  # lives in the highest sector: local form would be lossy
    with pytest.raises(ConfigError):
        verify_pullthrough({3: ws}, "creator", probes=[top])
    with pytest.raises(ConfigError):
        verify_pullthrough({3: ws}, "sideways")


def test_norm_identity_value_paths(ref_bundles, small_grid):
    value = norm_identity_value(ref_bundles[4])
    assert value == pytest.approx(1.0, abs=1e-2)
    ff0 = pl.sample_form_factor(small_grid, "gaussian", 0.0)
    ws0 = pl.build_workspace(small_grid, ff0, 2)
    assert norm_identity_value(ws0.build_bundle()) is None


def test_energy_derivatives_cross_terms():
    """Two-dimensional grid exercises the off-diagonal momentum algebra."""
    grid = pl.build_grid(2, 1.0, 1.0)
    ff = pl.sample_form_factor(grid, "gaussian", 0.15)
    ws = pl.build_workspace(grid, ff, 2)
    report = verify_energy_derivatives(ws, ws.build_bundle())
    assert report.passed is True
    assert report.residuals["gradient_rel"][0] <= DEFAULT_THRESHOLDS["gradient_rel"]
    assert report.residuals["gradient_at_origin"][0] <= 1e-10
    assert report.residuals["hessian_rel"][0] <= DEFAULT_THRESHOLDS["hessian_rel"]


def test_weighted_resolvent_norm_free_value(ref_grid):
    """At zero coupling the weighted tail resolvent is diagonal and its
    norm is known in closed form: sup (1+|p|)^2 / (p^2+n) = 2, attained by
    a single boson at |p| = 1."""
    ff0 = pl.sample_form_factor(ref_grid, "gaussian", 0.0)
    ws = pl.build_workspace(ref_grid, ff0, 3)
    report = verify_energy_derivatives(ws, ws.build_bundle())
    norms = report.details["weighted_resolvent_norms"]
    for value in norms.values():
        assert value == pytest.approx(2.0, abs=1e-6)


def test_equivalence_report_empty_window(ref_workspaces):
    report = pl.schur_equivalence_report(ref_workspaces[3])
    assert report["consistent"] is True
    # the gap of this instance exceeds the window: nothing to match
    assert report["window_eigenvalues"] == []
    assert report["crossings"] == []
    assert all(row["consistent"] for row in report["grid"])
    assert all(row["predicted_below"] == 1 for row in report["grid"])


def test_equivalence_report_populated_window(shifted_workspace):
    report = pl.schur_equivalence_report(shifted_workspace)
    assert report["consistent"] is True
    assert len(report["window_eigenvalues"]) == 3
    assert len(report["crossings"]) == 3
    for probe in report["spectrum_to_kernel"]:
        assert probe["matched"]
        assert probe["min_abs_eigenvalue"] <= 1e-7
    for crossing in report["crossings"]:
        assert crossing["matched"]
        assert crossing["nearest_fiber_gap"] <= 1e-6
    # bisected offsets and direct offsets describe the same energies
    direct = sorted(p["eps"] for p in report["spectrum_to_kernel"])
    located = sorted(c["eps"] for c in report["crossings"])
    assert np.allclose(direct, located, rtol=0, atol=1e-6)


def test_equivalence_grid_validation(ref_workspaces):
    with pytest.raises(ConfigError):
        pl.schur_equivalence_report(ref_workspaces[2], eps_grid=[0.0, 0.5])
    with pytest.raises(ConfigError):
        pl.schur_equivalence_report(ref_workspaces[2], eps_grid=[])


def test_suite_reuses_prebuilt_workspaces(ref_grid, ref_ff, ref_workspaces, ref_bundles):
    reports = pl.run_suite(
        ref_grid,
        ref_ff,
        LEVELS,
        only=["vacuum-schur", "norm-identity"],
        workspaces=ref_workspaces,
        bundles=ref_bundles,
    )
    by_name = {r.identity: r for r in reports}
    assert by_name["vacuum-schur"].passed is True
    assert by_name["norm-identity"].passed is True
    # frozen reference: the top-level pairing residual of this instance
    assert by_name["norm-identity"].residuals["pairing"][0] == pytest.approx(
        1.950e-4, rel=0.05
    )
