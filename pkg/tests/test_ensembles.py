import json

import numpy as np
import pytest

from homoglab.lattice import BoxSpec
from homoglab.ensembles import (
    EnsembleError,
    EnsembleSpec,
    SampleId,
    constant,
    sample,
    site_variants,
    spatial_average_observable,
    two_point,
    uniform,
)


class TestValidation:
    def test_alpha_at_or_below_lambda_rejected(self):
        with pytest.raises(EnsembleError):
            two_point(alpha=0.2, beta=0.75, lam=0.2)

    def test_beta_at_or_above_one_rejected(self):
        with pytest.raises(EnsembleError):
            two_point(alpha=0.25, beta=1.0)

    def test_alpha_above_beta_rejected(self):
        with pytest.raises(EnsembleError):
            two_point(alpha=0.7, beta=0.3)

    def test_unknown_kind_rejected(self):
        with pytest.raises(EnsembleError):
            EnsembleSpec("gaussian", {}, 0.2, 0)

    def test_negative_kernel_radius_rejected(self):
        with pytest.raises(EnsembleError):
            EnsembleSpec("correlated-two-point",
                         {"alpha": 0.25, "beta": 0.75, "radius": -1}, 0.2, 0)

    def test_uniform_bounds_validated(self):
        with pytest.raises(EnsembleError):
            uniform(low=0.1, high=0.75, lam=0.2)


class TestSampling:
    def test_constant_kind(self):
        spec = constant(0.5)
        a = sample(spec, BoxSpec(2, 4), SampleId(0))
        assert np.all(a.diag == 0.5)

    def test_deterministic_given_seed_and_index(self):
        spec = two_point(master_seed=123)
        box = BoxSpec(2, 8)
        a1 = sample(spec, box, SampleId(3))
        a2 = sample(spec, box, SampleId(3))
        assert np.array_equal(a1.diag, a2.diag)

    def test_distinct_indices_give_distinct_fields(self):
        spec = two_point(master_seed=123)
        box = BoxSpec(2, 8)
        a1 = sample(spec, box, SampleId(0))
        a2 = sample(spec, box, SampleId(1))
        assert not np.array_equal(a1.diag, a2.diag)

    def test_two_point_mean_matches_law_of_large_numbers(self):
        # one-sample LLN oracle: 10^6 iid sites, mean within 3 standard errors
        spec = two_point(alpha=0.25, beta=0.75, master_seed=7)
        box = BoxSpec(3, 100)
        a = sample(spec, box, SampleId(0))
        m = a.diag[:, 0].mean()
        stderr = 0.25 / np.sqrt(box.n_sites)
        assert abs(m - 0.5) < 3 * stderr

    def test_entries_strictly_inside_bounds(self):
        for spec in (two_point(master_seed=1), uniform(master_seed=1),
                     EnsembleSpec("correlated-two-point",
                                  {"alpha": 0.25, "beta": 0.75, "radius": 1}, 0.2, 1)):
            a = sample(spec, BoxSpec(2, 16), SampleId(0))
            assert a.diag.min() > 0.2 and a.diag.max() < 1.0

    def test_correlated_point_mass_reproduces_iid_bitwise(self):
        box = BoxSpec(2, 16)
        iid = two_point(master_seed=99)
        corr = EnsembleSpec("correlated-two-point",
                            {"alpha": 0.25, "beta": 0.75, "radius": 0}, 0.2, 99)
        a = sample(iid, box, SampleId(5))
        b = sample(corr, box, SampleId(5))
        assert np.array_equal(a.diag, b.diag)

    def test_correlated_smoothing_reduces_marginal_variance(self):
        box = BoxSpec(2, 32)
        corr = EnsembleSpec("correlated-two-point",
                            {"alpha": 0.25, "beta": 0.75, "radius": 1}, 0.2, 4)
        a = sample(corr, box, SampleId(0))
        iid_sd = 0.25
        assert a.diag[:, 0].std() < 0.8 * iid_sd

    def test_periodic_tile_reproduces_unit_cell(self):
        cell_box = BoxSpec(2, 2)
        cell = np.array([[0.3, 0.3], [0.7, 0.7], [0.5, 0.5], [0.4, 0.4]])
        spec = EnsembleSpec("periodic-tile", {"unit_cell": cell.tolist()}, 0.2, 0)
        box = BoxSpec(2, 4)
        a = sample(spec, box, SampleId(0))
        for idx in range(box.n_sites):
            x = box.coordinates_of(idx)
            assert np.array_equal(a.diag[idx], cell[cell_box.index_of((x[0] % 2, x[1] % 2))])


class TestStationarity:
    def test_shift_then_statistics_equals_statistics_then_shift(self):
        # per-site mean over 500 samples compared between a site and its shift
        spec = two_point(master_seed=31)
        box = BoxSpec(2, 6)
        vals_origin, vals_shifted = [], []
        target = box.index_of((2, 3))
        for i in range(500):
            a = sample(spec, box, SampleId(i))
            vals_origin.append(a.diag[0, 0])
            vals_shifted.append(a.diag[target, 0])
        vals_origin, vals_shifted = np.array(vals_origin), np.array(vals_shifted)
        se = np.hypot(vals_origin.std(ddof=1), vals_shifted.std(ddof=1)) / np.sqrt(500)
        assert abs(vals_origin.mean() - vals_shifted.mean()) < 3 * se


class TestSiteVariants:
    def test_variant_count_is_two_to_the_d(self):
        spec = two_point(master_seed=0)
        a = sample(spec, BoxSpec(2, 4), SampleId(0))
        assert len(site_variants(spec, a, 5)) == 4

    def test_variants_differ_only_at_site(self):
        spec = two_point(master_seed=0)
        a = sample(spec, BoxSpec(2, 4), SampleId(0))
        for v in site_variants(spec, a, 5):
            mask = np.ones(a.box.n_sites, dtype=bool)
            mask[5] = False
            assert np.array_equal(v.diag[mask], a.diag[mask])

    def test_observable_range_over_variants(self):
        spec = two_point(alpha=0.25, beta=0.75, master_seed=0)
        a = sample(spec, BoxSpec(2, 4), SampleId(0))
        vals = [v.diag[5, 0] for v in site_variants(spec, a, 5)]
        assert max(vals) - min(vals) == pytest.approx(0.5)

    def test_continuous_law_rejected(self):
        spec = uniform(master_seed=0)
        a = sample(spec, BoxSpec(2, 4), SampleId(0))
        with pytest.raises(EnsembleError):
            site_variants(spec, a, 0)


class TestSpatialAverage:
    def test_constant_field_any_R(self):
        a = sample(constant(0.5), BoxSpec(2, 8), SampleId(0))
        for R in (1, 3, 8):
            assert spatial_average_observable(a, R) == pytest.approx(0.5)

    def test_full_box_equals_global_mean(self):
        spec = two_point(master_seed=2)
        a = sample(spec, BoxSpec(2, 8), SampleId(0))
        assert spatial_average_observable(a, 8) == pytest.approx(a.diag[:, 0].mean())

    def test_R_larger_than_box_rejected(self):
        a = sample(constant(0.5), BoxSpec(2, 8), SampleId(0))
        with pytest.raises(ValueError):
            spatial_average_observable(a, 9)

    def test_clt_rate_of_sub_box_averages(self):
        # CLT oracle: RMS error of R-box averages decays like R^{-d/2}
        spec = two_point(master_seed=17)
        box = BoxSpec(2, 32)
        R_list = [4, 8, 16, 32]
        sq = np.zeros(len(R_list))
        n = 200
        for i in range(n):
            a = sample(spec, box, SampleId(i))
            for k, R in enumerate(R_list):
                sq[k] += (spatial_average_observable(a, R) - 0.5) ** 2
        rms = np.sqrt(sq / n)
        slope = np.polyfit(np.log(R_list), np.log(rms), 1)[0]
        assert abs(slope - (-1.0)) < 0.15


class TestJsonRoundTrip:
    def test_spec_serializes(self, tmp_path):
        spec = two_point(alpha=0.3, beta=0.6, lam=0.25, master_seed=11)
        path = tmp_path / "spec.json"
        spec.save(path)
        loaded = EnsembleSpec.load(path)
        assert loaded == spec

    def test_json_schema_fields(self):
        obj = two_point(master_seed=5).to_json()
        assert set(obj) == {"kind", "params", "lambda", "master_seed"}
        json.dumps(obj)  # serializable
