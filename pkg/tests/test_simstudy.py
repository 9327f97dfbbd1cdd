import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bppcd.errors import InvalidInputError
from bppcd.simstudy import (
    FactorialSetting,
    aggregate,
    compute_metrics,
    derive_seed,
    fpr_bins,
    full_grid,
    generate_dataset,
    match_changes,
    read_results,
    run_factorial,
)


def test_full_grid_size():
    assert len(full_grid()) == 3 * 3 * 3 * 6 * 4


def test_k1_dataset_has_constant_mean():
    d = generate_dataset(FactorialSetting(k_true=1, delta=0.9, sigma2=0.1), 1)
    assert d.true_change_times == [] and np.all(d.true_path.states == 1)
    assert d.y.shape == (500,)


def test_uniform_grid_is_equally_spaced():
    d = generate_dataset(FactorialSetting("uniform_grid", n_obs=50, k_true=3), 2)
    np.testing.assert_allclose(d.grid.times, np.arange(50) / 50, atol=1e-15)


@pytest.mark.parametrize("dist", ["uniform_grid", "beta_half", "beta_two"])
def test_every_true_segment_is_observed(dist):
    for seed in range(30):
        d = generate_dataset(FactorialSetting(dist, k_true=4, n_obs=60), seed)
        assert set(d.true_path.states.tolist()) == {1, 2, 3, 4}
        assert len(d.true_change_times) == 3
        idx = d.true_path.change_indices()
        np.testing.assert_allclose(d.true_change_times, d.grid.times[idx])


def test_intercepts_alternate():
    s = FactorialSetting("beta_two", sigma2=1e-8, nu=100, delta=0.7, k_true=4, n_obs=200)
    d = generate_dataset(s, 3)
    expected = np.where(d.true_path.states % 2 == 0, 0.7, 0.0)
    np.testing.assert_allclose(d.y, expected, atol=1e-2)


def test_noise_variance_at_nu_100():
    s = FactorialSetting(sigma2=0.2, nu=100, k_true=1, delta=0.0)
    y = np.concatenate([generate_dataset(s, seed).y for seed in range(200)])
    assert y.size == 100_000
    assert abs(y.var() / (0.2 * 100 / 98) - 1) < 0.05


def test_beta_half_times_are_boundary_dense():
    s = FactorialSetting("beta_half", n_obs=500)
    t = np.concatenate([generate_dataset(s, seed).grid.times for seed in range(20)])
    assert np.mean(t < 0.1) > 0.10


def test_dataset_is_reproducible():
    s = FactorialSetting("beta_half", k_true=3)
    a, b = generate_dataset(s, 9), generate_dataset(s, 9)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.grid.times, b.grid.times)


# -- matching ------------------------------------------------------------------

def test_match_examples():
    assert match_changes([0.5], [0.51])[:3] == (1, 0, 0)
    m = match_changes([0.5], [0.49, 0.515])
    assert m[:3] == (1, 1, 0) and m.pairs == [(0.5, 0.49)]
    assert match_changes([], [])[:3] == (0, 0, 0)
    with pytest.raises(InvalidInputError):
        match_changes([0.1], [0.1], window=-1)


times = st.lists(st.floats(0, 0.999, allow_nan=False), max_size=8, unique=True)


@settings(max_examples=300, deadline=None)
@given(truth=times, found=times)
def test_match_count_identities_and_reversal(truth, found):
    m = match_changes(truth, found)
    assert m.TP + m.FN == len(truth) and m.TP + m.FP == len(found)
    r = match_changes([-t for t in truth], [-d for d in found])
    assert r[:3] == m[:3]


def test_metrics_examples():
    perfect = compute_metrics((3, 0, 0), 40)
    assert perfect.F1 == 1 and perfect.commission == 0 and perfect.omission == 0 and perfect.FPR == 0
    assert compute_metrics((1, 1, 1), 40, 1).F1 == 0.5
    empty = compute_metrics((0, 0, 0), 45)
    assert empty.TPR is None and empty.F1 is None and empty.FPR == 0


def test_fpr_bins():
    fp_bins, neg = fpr_bins([0.5], [0.1, 0.11, 0.9])
    assert neg == 44 and fp_bins == 2


def test_seed_derivation_is_injective_over_grid():
    seeds = {derive_seed(0, s.setting_id, r) for s in full_grid() for r in range(100)}
    assert len(seeds) == len(full_grid()) * 100


# -- runner ------------------------------------------------------------------

SMALL = [FactorialSetting("uniform_grid", 0.1, 3, 1.1, 2, n_obs=120)]


def test_single_null_row():
    rows = run_factorial([FactorialSetting(k_true=1, n_obs=100)], 1, ["bpp_robust"], seed=1)
    assert len(rows) == 1
    assert int(rows[0]["TP"]) == 0 and int(rows[0]["FN"]) == 0 and rows[0]["TPR"] == ""


def test_factorial_is_deterministic_and_resumable(tmp_path):
    path = tmp_path / "r.csv"
    a = run_factorial(SMALL, 2, ["bpp_robust", "bpp_gaussian"], seed=3, results_path=path)
    assert len(a) == 4
    b = run_factorial(SMALL, 2, ["bpp_robust", "bpp_gaussian"], seed=3)
    strip = [{k: v for k, v in r.items() if k != "wall_seconds"} for r in a]
    assert strip == [{k: v for k, v in r.items() if k != "wall_seconds"} for r in b]
    # drop a row, as if interrupted, then resume
    rows = read_results(path)
    text = path.read_text().splitlines()
    path.write_text("\n".join(text[:-1]) + "\n")
    c = run_factorial(SMALL, 2, ["bpp_robust", "bpp_gaussian"], seed=3, results_path=path, resume=True)
    assert len(c) == 4 and len(read_results(path)) == 4
    assert [r["F1"] for r in read_results(path)] == [r["F1"] for r in rows]


def test_external_detections_are_scored(tmp_path):
    d = generate_dataset(SMALL[0], derive_seed(5, SMALL[0].setting_id, 0))
    ext = {"oracle": {SMALL[0].dataset_id: list(d.true_change_times)}}
    rows = run_factorial(SMALL, 1, ["oracle"], seed=5, external=ext)
    assert float(rows[0]["F1"]) == 1.0


def test_parallel_matches_serial():
    a = run_factorial(SMALL, 2, ["bpp_robust"], seed=8, jobs=1)
    b = run_factorial(SMALL, 2, ["bpp_robust"], seed=8, jobs=2)
    assert [r["F1"] for r in a] == [r["F1"] for r in b]


def test_aggregate_pools_counts():
    rows = [
        {"setting_id": "a", "model": "m", "TP": 1, "FP": 0, "FN": 1, "FPR": "0.0"},
        {"setting_id": "a", "model": "m", "TP": 1, "FP": 1, "FN": 0, "FPR": "0.5"},
    ]
    (g,) = aggregate(rows)
    assert (g["TP"], g["FP"], g["FN"]) == (2, 1, 1)
    assert g["F1"] == pytest.approx(4 / 6) and g["FPR"] == pytest.approx(0.25)
