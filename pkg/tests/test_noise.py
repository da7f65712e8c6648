import math

import numpy as np
import pytest

from fcpdetect.errors import (
    CapacityError,
    ModelError,
    ParameterError,
    ParseError,
    StructuralError,
    TableLookupError,
)
from fcpdetect.noise import (
    ConfidenceSuperset,
    Filtered,
    GaussianField,
    MaxDistributionTable,
    Msd,
    Negate,
    PoissonField,
    Smooth,
    Sqrt,
    ZScore,
    build_max_distributions,
    build_square_region_maxima,
    child_seed,
    empirical_pvalue,
    load_table,
    max_percentile,
    model_descriptor,
    model_from_dict,
    model_to_dict,
    removal_maxima,
    save_table,
    simulate_noise_image,
    superset_alg1,
    superset_alg2,
)
from fcpdetect.transforms import gaussian_smooth, sqrt_transform


# ---------------------------------------------------------------------------
# models and simulation


def test_same_seed_same_grid():
    model = GaussianField(0.0, 1.0)
    a = simulate_noise_image(model, 16, 16, seed=99)
    b = simulate_noise_image(model, 16, 16, seed=99)
    np.testing.assert_array_equal(a, b)
    c = simulate_noise_image(model, 16, 16, seed=100)
    assert not np.array_equal(a, c)


def test_poisson_rate_zero_gives_zero_grid():
    img = simulate_noise_image(PoissonField(0.0), 10, 12, seed=1)
    assert img.shape == (10, 12)
    assert np.all(img == 0.0)


def test_poisson_sample_mean_within_clt_band():
    img = simulate_noise_image(PoissonField(0.3), 1000, 1000, seed=2)
    assert abs(img.mean() - 0.3) < 3.0 * math.sqrt(0.3 / 1e6)


def test_filtered_model_applies_stages_in_order():
    model = Filtered(PoissonField(0.5), (Smooth(1.0), Sqrt(), Negate()))
    got = simulate_noise_image(model, 20, 20, seed=5)
    base = simulate_noise_image(PoissonField(0.5), 20, 20, seed=5)
    np.testing.assert_array_equal(got, -sqrt_transform(gaussian_smooth(base, 1.0)))


def test_sqrt_stage_needs_nonnegative_input():
    with pytest.raises(ModelError):
        simulate_noise_image(Filtered(GaussianField(0, 1), (Sqrt(),)), 4, 4, seed=0)
    with pytest.raises(ModelError):
        simulate_noise_image(
            Filtered(PoissonField(1.0), (ZScore(0.0, 1.0), Sqrt())), 4, 4, seed=0
        )
    # smoothing keeps counts nonnegative, so this one composes
    simulate_noise_image(Filtered(PoissonField(1.0), (Smooth(1.0), Sqrt())), 4, 4, seed=0)


def test_model_validation_errors():
    with pytest.raises(ModelError):
        simulate_noise_image(PoissonField(-0.1), 4, 4, seed=0)
    with pytest.raises(ModelError):
        simulate_noise_image(GaussianField(0.0, 0.0), 4, 4, seed=0)
    with pytest.raises(ModelError):
        simulate_noise_image(Filtered(PoissonField(1.0), ()), 4, 4, seed=0)
    with pytest.raises(ParameterError):
        simulate_noise_image(GaussianField(0.0, 1.0), 0, 4, seed=0)


def test_model_dict_round_trip():
    model = Filtered(
        PoissonField(0.3),
        (Smooth(1.0), Sqrt(), Msd((1.0, 2.0, 4.0)), Negate()),
    )
    doc = model_to_dict(model)
    assert model_from_dict(doc) == model
    assert model_descriptor(model_from_dict(doc)) == model_descriptor(model)

    z = Filtered(GaussianField(0.0, 1.0), (ZScore(0.25, 0.5),))
    assert model_from_dict(model_to_dict(z)) == z


def test_model_dict_rejects_malformed_documents():
    with pytest.raises(ParseError):
        model_from_dict({"kind": "weibull"})
    with pytest.raises(ParseError):
        model_from_dict({"kind": "poisson"})
    with pytest.raises(ParseError):
        model_from_dict({"kind": "filtered", "base": {"kind": "poisson", "lambda0": 1},
                         "pipeline": [{"stage": "wavelet"}]})
    with pytest.raises(ParseError):
        model_from_dict("poisson")


def test_child_seed_is_deterministic_and_spreads():
    assert child_seed(123, 0) == child_seed(123, 0)
    seeds = {child_seed(123, i) for i in range(100)}
    assert len(seeds) == 100
    assert child_seed(123, 0) != child_seed(124, 0)


# ---------------------------------------------------------------------------
# removal-maxima tables


def test_zero_rate_table_is_all_zero():
    table = build_max_distributions(PoissonField(0.0), 6, 6, B=20, a=10, seed=3)
    assert np.all(table.maxima == 0.0)


def test_table_shape_and_area_layout():
    table = build_max_distributions(GaussianField(0, 1), 8, 8, B=25, a=12, seed=4)
    assert table.B == 25
    assert table.areas == tuple(range(64, 51, -1))
    assert table.maxima.shape == (13, 25)
    assert np.all(np.diff(table.maxima, axis=1) >= 0)  # rows sorted
    assert np.all(np.diff(table.maxima, axis=0) <= 0)  # shrinking areas shrink maxima


def test_default_removal_budget():
    table = build_max_distributions(GaussianField(0, 1), 20, 20, B=5, seed=0)
    assert len(table.areas) - 1 == 40  # min(5000, 400 // 10)


def test_replicate_field_matches_child_seed_simulation():
    model = GaussianField(0, 1)
    table = build_max_distributions(model, 9, 9, B=1, a=0, seed=77)
    field = simulate_noise_image(model, 9, 9, child_seed(77, 0))
    assert table.maxima[0, 0] == field.max()


def test_full_image_maxima_match_brute_force_median():
    table = build_max_distributions(GaussianField(0, 1), 100, 100, B=5000, a=0, seed=8)
    rng = np.random.default_rng(987654321)  # independent stream
    brute = np.median([rng.standard_normal(10_000).max() for _ in range(5000)])
    assert abs(np.median(table.maxima[0]) - brute) < 0.05


def test_table_parameter_errors():
    with pytest.raises(ParameterError):
        build_max_distributions(GaussianField(0, 1), 4, 4, B=10, a=16, seed=0)
    with pytest.raises(ParameterError):
        build_max_distributions(GaussianField(0, 1), 4, 4, B=0, a=2, seed=0)


def test_sparse_removal_maxima_agree_with_dense_table():
    model = GaussianField(0, 1)
    dense = build_max_distributions(model, 8, 8, B=40, a=20, seed=12)
    sparse = removal_maxima(model, 8, 8, B=40, areas=[64, 60, 44], seed=12)
    for area in (64, 60, 44):
        row = dense.maxima[dense.areas.index(area)]
        np.testing.assert_array_equal(sparse[area], row)


def test_table_json_round_trip(tmp_path):
    table = build_max_distributions(PoissonField(0.7), 6, 7, B=15, a=9, seed=21)
    path = tmp_path / "table.json"
    save_table(path, table)
    loaded = load_table(path)
    assert loaded.B == table.B
    assert loaded.areas == table.areas
    assert loaded.model == table.model == model_descriptor(PoissonField(0.7))
    np.testing.assert_array_equal(loaded.maxima, table.maxima)


def test_table_load_rejects_malformed_documents(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_table(path)
    path.write_text('{"B": 2, "areas": [4]}')
    with pytest.raises(ParseError):
        load_table(path)
    path.write_text('{"B": 2, "areas": [4], "maxima": {"4": [2.0, 1.0]}}')
    with pytest.raises(StructuralError):
        load_table(path)


def test_table_type_validates_structure():
    with pytest.raises(StructuralError):
        MaxDistributionTable(B=2, areas=(4, 5), maxima=np.zeros((2, 2)))
    with pytest.raises(StructuralError):
        MaxDistributionTable(B=3, areas=(4,), maxima=np.zeros((1, 2)))


# ---------------------------------------------------------------------------
# p-values


def _toy_table():
    return MaxDistributionTable(B=4, areas=(9,), maxima=np.array([[1.0, 2.0, 3.0, 4.0]]))


def test_pvalue_counts_maxima_at_least_x():
    table = _toy_table()
    assert empirical_pvalue(table, 2.5, 9) == 0.5
    assert empirical_pvalue(table, 0.5, 9) == 1.0
    assert empirical_pvalue(table, 9.9, 9) == 0.0
    assert empirical_pvalue(table, 2.0, 9) == 0.75  # ties count (>= x)


def test_pvalue_unknown_area_is_a_lookup_error():
    with pytest.raises(TableLookupError):
        empirical_pvalue(_toy_table(), 1.0, 8)


def test_pvalue_monotone_in_area_and_x():
    table = build_max_distributions(GaussianField(0, 1), 10, 10, B=60, a=30, seed=31)
    xs = np.linspace(1.0, 4.0, 9)
    for x in xs:
        ps = [empirical_pvalue(table, x, area) for area in table.areas]
        # areas are descending, so p-values must be non-increasing down the list
        assert all(a >= b for a, b in zip(ps, ps[1:]))
    for area in table.areas[::7]:
        ps = [empirical_pvalue(table, x, area) for x in xs]
        assert all(a >= b for a, b in zip(ps, ps[1:]))


# ---------------------------------------------------------------------------
# square regions


def test_square_covering_whole_image_equals_full_maxima():
    model = GaussianField(0, 1)
    squares = build_square_region_maxima(model, 12, 12, B=30, side=12, seed=41)
    table = build_max_distributions(model, 12, 12, B=30, a=0, seed=41)
    np.testing.assert_array_equal(squares, table.maxima[0])


def test_single_pixel_square_mean_is_model_mean():
    maxima = build_square_region_maxima(GaussianField(2.0, 1.0), 30, 30, B=800, side=1, seed=43)
    assert abs(maxima.mean() - 2.0) < 3.0 / math.sqrt(800)


def test_square_of_zero_rate_is_zero():
    maxima = build_square_region_maxima(PoissonField(0.0), 8, 8, B=10, side=3, seed=0)
    assert np.all(maxima == 0.0)


def test_square_side_bounds():
    with pytest.raises(ParameterError):
        build_square_region_maxima(GaussianField(0, 1), 8, 8, B=5, side=9, seed=0)
    with pytest.raises(ParameterError):
        build_square_region_maxima(GaussianField(0, 1), 8, 8, B=5, side=0, seed=0)


# ---------------------------------------------------------------------------
# percentile and supersets


def test_percentile_order_statistic_rule():
    assert max_percentile(np.arange(1.0, 101.0), 0.05) == 95.0
    assert max_percentile(np.zeros(10), 0.05) == 0.0
    assert max_percentile(np.array([7.25]), 0.5) == 7.25
    # float round-up trap: 0.95 * 2000 must select rank 1900, not 1901
    assert max_percentile(np.arange(1.0, 2001.0), 0.05) == 1900.0


def test_percentile_rejects_empty_and_bad_alpha():
    with pytest.raises(ParameterError):
        max_percentile(np.array([]), 0.05)
    with pytest.raises(ParameterError):
        max_percentile(np.array([1.0]), 1.5)


def test_alg2_threshold_masks():
    img = np.array([[0.0, 1.0], [2.0, 3.0]])
    assert superset_alg2(img, 5.0, 0.05).mask.all()
    u = superset_alg2(img, 2.5, 0.05)
    np.testing.assert_array_equal(u.mask, [[True, True], [True, False]])
    assert u.method == "alg2"
    with pytest.raises(ParameterError):
        superset_alg2(img, math.inf, 0.05)


def test_superset_type_validation():
    with pytest.raises(ParameterError):
        ConfidenceSuperset(np.ones((2, 2), dtype=bool), 0.05, "alg3")
    with pytest.raises(ParameterError):
        ConfidenceSuperset(np.ones((2, 2), dtype=bool), 1.5, "alg1")
    with pytest.raises(StructuralError):
        ConfidenceSuperset(np.ones(4, dtype=bool), 0.05, "alg1")


def test_alg1_keeps_everything_when_image_is_unremarkable():
    table = build_max_distributions(GaussianField(0, 1), 8, 8, B=100, a=20, seed=51)
    u = superset_alg1(np.zeros((8, 8)), table, 0.05)
    assert u.mask.all()
    assert u.method == "alg1"


def test_alg1_excludes_exactly_one_enormous_pixel():
    table = build_max_distributions(PoissonField(0.3), 10, 10, B=200, a=30, seed=53)
    img = np.zeros((10, 10))
    img[3, 4] = 1000.0
    u = superset_alg1(img, table, 0.05)
    assert not u.mask[3, 4]
    assert u.mask.sum() == 99


def test_alg1_masks_nest_as_alpha_grows():
    rng = np.random.default_rng(57)
    model = GaussianField(0, 1)
    table = build_max_distributions(model, 12, 12, B=150, a=60, seed=59)
    img = rng.normal(size=(12, 12))
    img[2, 2] += 4.0
    img[7, 9] += 3.0
    loose = superset_alg1(img, table, 0.01).mask
    tight = superset_alg1(img, table, 0.20).mask
    assert np.all(loose | ~tight)  # tight ⊆ loose


def test_alg1_capacity_error_when_table_is_too_short():
    table = build_max_distributions(PoissonField(0.3), 6, 6, B=50, a=2, seed=61)
    img = np.full((6, 6), 500.0)
    with pytest.raises(CapacityError, match="larger a"):
        superset_alg1(img, table, 0.05)


def test_alg1_rejects_mismatched_table_dimensions():
    table = build_max_distributions(GaussianField(0, 1), 6, 6, B=20, a=4, seed=63)
    with pytest.raises(StructuralError):
        superset_alg1(np.zeros((5, 5)), table, 0.05)


def test_both_superset_algorithms_cover_pure_noise():
    model = GaussianField(0, 1)
    runs, covered1, covered2 = 120, 0, 0
    for i in range(runs):
        table = build_max_distributions(model, 12, 12, B=250, a=30, seed=7000 + i)
        img = simulate_noise_image(model, 12, 12, seed=90_000 + i)
        if superset_alg1(img, table, 0.05).mask.all():
            covered1 += 1
        r = max_percentile(table.maxima[0], 0.05)
        if superset_alg2(img, r, 0.05).mask.all():
            covered2 += 1
    # nominal 95% coverage; loose band for this quick check (the acceptance
    # suite runs the full-size version)
    assert covered1 / runs >= 0.88
    assert covered2 / runs >= 0.88
