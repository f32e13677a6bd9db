import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phasesep.pipeline import SeparationOptions
from phasesep.separability import (_fill_gaps, independence_stats, recovery_score, recurse,
                                   spearman_matrix, verdict_pipeline)
from phasesep.signal_io import TimeSeries


def _independent(n=100_000, seed=0):
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.standard_normal(n), rng.uniform(-1, 1, n)])


def test_identical_components_are_dependent():
    u1 = np.random.default_rng(1).standard_normal(5000)
    rep = independence_stats(np.column_stack([u1, u1]))
    assert rep.max_stat == pytest.approx(1.0, abs=1e-12)
    assert not rep.verdict


def test_independent_components_pass():
    rep = independence_stats(_independent(), threshold=0.05)
    assert rep.verdict
    assert rep.max_stat < 0.05
    assert rep.fluctuation_scale == pytest.approx(3 / np.sqrt(100_000))


def test_square_dependence_is_caught_by_higher_orders():
    u1 = np.random.default_rng(2).standard_normal(100_000)
    rep = independence_stats(np.column_stack([u1, u1 ** 2]))
    assert abs(rep.position[0, 0]) < 0.02  # Pearson sees nothing
    assert rep.position[1, 0] > 0.9  # corr(u1^2, u2) is the giveaway
    assert not rep.verdict


def test_velocity_dependence_is_caught():
    # positions independent, but velocities share a common jump process
    rng = np.random.default_rng(3)
    n = 50_000
    common = np.cumsum(rng.standard_normal(n) * (rng.uniform(size=n) < 0.01) * 50)
    u = np.column_stack([rng.standard_normal(n) + common, rng.standard_normal(n) + common])
    rep = independence_stats(u)
    assert np.abs(rep.velocity).max() > 0.05


def test_statistics_preconditions():
    with pytest.raises(ValueError, match="at least"):
        independence_stats(np.ones((10, 2)))
    with pytest.raises(ValueError, match="zero-variance"):
        independence_stats(np.column_stack([np.arange(2000.0), np.ones(2000)]))
    with pytest.raises(ValueError):
        independence_stats(np.ones((2000, 3)))


def test_rank_table_is_exactly_invariant_under_monotone_remap():
    u = _independent(20_000, seed=4)
    a = independence_stats(u)
    v = np.column_stack([np.exp(2 * u[:, 0]), np.arctan(u[:, 1]) ** 3])
    b = independence_stats(v)
    np.testing.assert_array_equal(a.rank, b.rank)


@given(st.integers(min_value=0, max_value=2 ** 32 - 1), st.booleans())
@settings(max_examples=20, deadline=None)
def test_verdict_is_symmetric_under_swap(seed, dependent):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((3000, 2))
    if dependent:
        u[:, 1] += 0.3 * u[:, 0] ** 2
    a = independence_stats(u)
    b = independence_stats(u[:, ::-1])
    assert a.verdict == b.verdict
    assert a.max_stat == pytest.approx(b.max_stat, rel=1e-12)
    np.testing.assert_allclose(a.position, b.position.T, rtol=1e-12, atol=1e-15)


def test_report_serializes_every_entry():
    rep = independence_stats(_independent(5000))
    d = rep.as_dict()
    assert d["verdict"] == "separable"
    assert len([k for k in d if k.startswith(("position_", "velocity_"))]) == 18
    assert len([k for k in d if k.startswith("rank_")]) == 4


def test_valid_mask_restricts_samples():
    u = _independent(5000)
    u[100] = [1e9, -1e9]
    valid = np.ones(len(u), dtype=bool)
    valid[100] = False
    rep = independence_stats(u, valid=valid)
    assert rep.n_samples == 4999 and rep.verdict


# -- candidate selection ---------------------------------------------------------------

def test_verdict_needs_candidates(desk_run):
    with pytest.raises(ValueError):
        verdict_pipeline(desk_run.result.x, [])


def test_desk_candidate_passes(desk_run):
    v = verdict_pipeline(desk_run.result.x, desk_run.result.maps, 0.05)
    assert v.separable and v.report.max_stat <= 0.05


def test_coupled_sources_fail(coupled_run):
    res = coupled_run.result
    assert not res.separable
    assert res.report.max_stat > 0.05


def test_best_candidate_is_kept(desk_run):
    res = desk_run.result
    good = res.maps[0]
    bad = good.remap(1, lambda u: u)
    bad.u[:, 1] = good.u[:, 0] + 0.1 * good.u[:, 1]  # u2 now mostly copies u1
    v = verdict_pipeline(res.x, [bad, good])
    assert v.best_map is good and v.separable
    assert v.reports[0].max_stat > v.reports[1].max_stat


# -- recursion ---------------------------------------------------------------------------

def test_one_dimensional_block_is_a_leaf():
    node = recurse(TimeSeries(np.random.default_rng(5).standard_normal((100, 1)), 1.0))
    assert node.is_leaf and node.note == "one-dimensional"


def test_wide_block_is_a_leaf_with_a_note():
    node = recurse(TimeSeries(np.random.default_rng(5).standard_normal((100, 3)), 1.0))
    assert node.is_leaf and "2 dimensions" in node.note


def test_independent_block_splits_into_two_leaves(desk_run):
    node = recurse(desk_run.mixture, SeparationOptions())
    assert not node.is_leaf
    leaves = node.leaves()
    assert len(leaves) == 2 and all(leaf.series.n_channels == 1 for leaf in leaves)
    u = np.column_stack([leaf.series.samples[:, 0] for leaf in leaves])
    sc = recovery_score(u, desk_run.sources)
    assert np.all(sc.matched >= 0.95)


def test_coupled_block_is_a_single_leaf(coupled_run):
    node = recurse(coupled_run.mixture, SeparationOptions())
    assert node.is_leaf and node.report is not None and not node.report.verdict


def test_fill_gaps_holds_previous_value():
    vals = np.array([9.0, 1.0, 2.0, 9.0, 9.0, 5.0])
    ok = np.array([False, True, True, False, False, True])
    np.testing.assert_array_equal(_fill_gaps(vals, ok), [1, 1, 2, 2, 2, 5])


# -- recovery scoring ---------------------------------------------------------------------

def test_spearman_matrix_of_monotone_transforms():
    rng = np.random.default_rng(6)
    s = rng.standard_normal((2000, 2))
    u = np.column_stack([-np.exp(s[:, 1]), s[:, 0] ** 3])
    rho = spearman_matrix(u, s)
    np.testing.assert_allclose(np.abs(rho[[0, 1], [1, 0]]), 1.0, atol=1e-12)
    sc = recovery_score(u, s)
    assert sc.perm.tolist() == [1, 0] and sc.signs.tolist() == [-1.0, 1.0]
    assert sc.cross < 0.1
