import csv
import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from wordscores.validation import (
    ConcordanceResult,
    EstimateTable,
    MergeError,
    RescaleError,
    ValidationError,
    benchmark_matrix,
    bootstrap_ccc_ci,
    ccc,
    ccc_ci,
    merge_estimates,
    pearson,
    report_row,
    rescale_unit,
)

DATA = Path(__file__).parent / "data"


def load_reference_concordances():
    with open(DATA / "concordance_reference.csv", newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def synthetic_result(rho_c, pearson_r, c_b, n):
    """ConcordanceResult reconstructed from tabled statistics.

    The bias factor fixes only u^2 + v + 1/v; assuming equal SDs (v = 1)
    gives u^2 = 2 (1 - c_b) / c_b.
    """
    u2 = max(2.0 / c_b - 2.0, 0.0)
    return ConcordanceResult(
        rho_c=rho_c, pearson_r=pearson_r, c_b=c_b, n=n,
        ci_low=rho_c, ci_high=rho_c,
        mean_x=math.sqrt(u2), mean_y=0.0, sd_x=1.0, sd_y=1.0,
    )


class TestPearson:
    def test_identity(self):
        x = [1.0, 2.0, 5.0, 3.5]
        assert pearson(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_perfect_linearity(self):
        assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-12)

    def test_perfect_negative(self):
        assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-12)

    def test_zero_variance_errors(self):
        with pytest.raises(ValidationError):
            pearson([1, 1, 1], [1, 2, 3])

    def test_too_few_pairs(self):
        with pytest.raises(ValidationError):
            pearson([1, 2], [3, 4])

    def test_pairwise_complete_filtering(self):
        x = [1.0, np.nan, 2.0, 3.0]
        y = [2.0, 5.0, 4.0, 6.0]
        assert pearson(x, y) == pytest.approx(1.0, abs=1e-12)


class TestCCC:
    def test_identity(self):
        x = [0.1, 0.4, 0.9, 0.3]
        result = ccc(x, x)
        assert result.rho_c == pytest.approx(1.0, abs=1e-12)
        assert result.c_b == pytest.approx(1.0, abs=1e-12)

    def test_scale_bias_pair(self):
        result = ccc([1, 2, 3], [2, 4, 6])
        assert result.rho_c == pytest.approx(4 / 11, abs=1e-12)
        assert result.pearson_r == pytest.approx(1.0, abs=1e-12)
        assert result.c_b == pytest.approx(4 / 11, abs=1e-12)

    def test_product_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.normal(size=12)
            y = 0.6 * x + rng.normal(scale=0.4, size=12) + 0.3
            result = ccc(x, y)
            assert result.rho_c == pytest.approx(result.pearson_r * result.c_b, abs=1e-9)
            assert result.ci_low <= result.rho_c <= result.ci_high

    def test_rho_c_bounded_by_pearson(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = rng.normal(size=10)
            y = rng.normal(size=10) + rng.uniform(-1, 1)
            result = ccc(x, y)
            assert abs(result.rho_c) <= abs(result.pearson_r) + 1e-12

    def test_equality_iff_matched_moments(self):
        x = np.array([0.0, 1.0, 2.0, 3.0])
        result = ccc(x, x + 0.5)  # same SD, shifted mean
        assert result.rho_c < abs(result.pearson_r)
        result2 = ccc(x, np.array([0.0, 1.0, 2.0, 3.0]))
        assert result2.rho_c == pytest.approx(result2.pearson_r, abs=1e-12)

    def test_symmetry_and_joint_affine_invariance(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=9)
        y = rng.normal(size=9)
        a = ccc(x, y)
        b = ccc(y, x)
        assert a.rho_c == pytest.approx(b.rho_c, abs=1e-12)
        c = ccc(2.0 * x + 1.0, 2.0 * y + 1.0)
        assert c.rho_c == pytest.approx(a.rho_c, abs=1e-9)

    def test_not_invariant_under_one_sided_rescale(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=9)
        y = x + rng.normal(scale=0.2, size=9)
        assert ccc(x, 3.0 * y).rho_c != pytest.approx(ccc(x, y).rho_c, abs=1e-3)

    def test_shifted_copy_below_one(self):
        x = np.arange(6.0)
        assert ccc(x, x + 1.0).rho_c < 1.0

    def test_rational_bruteforce_agreement(self):
        rng = np.random.default_rng(4)
        for _ in range(15):
            n = int(rng.integers(3, 7))
            x = [int(v) for v in rng.integers(-12, 13, size=n)]
            y = [int(v) for v in rng.integers(-12, 13, size=n)]
            if len(set(x)) < 2 or len(set(y)) < 2:
                continue
            expected = oracle.ccc_bruteforce(x, y)
            got = ccc([float(v) for v in x], [float(v) for v in y])
            assert got.rho_c == pytest.approx(float(expected), abs=1e-12)

    def test_zero_variance_errors(self):
        with pytest.raises(ValidationError):
            ccc([1, 1, 1], [1, 2, 3])

    @given(st.lists(st.integers(min_value=-50, max_value=50), min_size=4, max_size=9))
    @settings(max_examples=100, deadline=None)
    def test_symmetric_for_integer_vectors(self, x):
        y = [v + 3 for v in reversed(x)]
        if len(set(x)) < 2 or len(set(y)) < 2:
            return
        a = ccc([float(v) for v in x], [float(v) for v in y])
        b = ccc([float(v) for v in y], [float(v) for v in x])
        assert a.rho_c == pytest.approx(b.rho_c, abs=1e-12)


class TestCCCCI:
    def test_tabled_row_reproduction(self):
        # BL/CHES/LBG/pc on the first fixture table
        result = synthetic_result(rho_c=0.624, pearson_r=0.687, c_b=0.907, n=133)
        lo, hi = ccc_ci(result, 0.95)
        assert lo == pytest.approx(0.527, abs=0.01)
        assert hi == pytest.approx(0.704, abs=0.01)

    def test_level_zero_collapses(self):
        result = synthetic_result(0.5, 0.6, 0.9, 50)
        lo, hi = ccc_ci(result, 0.0)
        assert lo == pytest.approx(0.5, abs=1e-12)
        assert hi == pytest.approx(0.5, abs=1e-12)

    def test_symmetric_at_zero(self):
        result = ConcordanceResult(
            rho_c=0.0, pearson_r=0.5, c_b=0.0, n=500,
            ci_low=0.0, ci_high=0.0, mean_x=1.0, mean_y=0.0, sd_x=1.0, sd_y=1.0,
        )
        lo, hi = ccc_ci(result, 0.95)
        assert lo == pytest.approx(-hi, abs=1e-12)

    def test_degenerate_at_unity(self):
        x = np.arange(5.0)
        result = ccc(x, x)
        assert (result.ci_low, result.ci_high) == (result.rho_c, result.rho_c)

    def test_zero_correlation_uses_fisher_variance(self):
        x = [1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0, 0.0]
        y = [0.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0]
        result = ccc(x, y)
        assert result.pearson_r == 0.0
        assert result.rho_c == 0.0
        assert result.ci_low == pytest.approx(-result.ci_high, abs=1e-12)
        assert result.ci_low < 0 < result.ci_high

    def test_bootstrap_fallback_brackets_point(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=40)
        y = 0.8 * x + rng.normal(scale=0.5, size=40)
        point = ccc(x, y).rho_c
        lo, hi = bootstrap_ccc_ci(x, y, seed=123)
        assert lo < point < hi

    def test_bootstrap_is_seed_deterministic(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=25)
        y = x + rng.normal(scale=0.3, size=25)
        assert bootstrap_ccc_ci(x, y, seed=9) == bootstrap_ccc_ci(x, y, seed=9)


class TestConcordanceFixture:
    def test_product_identity_all_rows(self):
        rows = load_reference_concordances()
        assert len(rows) == 144
        for row in rows:
            reconstructed = float(row["pearson_r"]) * float(row["c_b"])
            assert reconstructed == pytest.approx(float(row["rho_c"]), abs=0.002), row

    def test_example_row(self):
        assert 0.687 * 0.907 == pytest.approx(0.623, abs=5e-4)

    def test_ci_reproduction_sample(self):
        rows = load_reference_concordances()
        matched = 0
        for row in rows:
            result = synthetic_result(
                float(row["rho_c"]), float(row["pearson_r"]), float(row["c_b"]), int(row["n"])
            )
            lo, hi = ccc_ci(result, 0.95)
            if abs(lo - float(row["ci_low"])) <= 0.01 and abs(hi - float(row["ci_high"])) <= 0.01:
                matched += 1
        assert matched >= 140  # the asymptotic formula reproduces the tables


class TestRescaleUnit:
    def make_table(self, values, countries=None, dimension="LR", scales=None):
        n = len(values)
        frame = pd.DataFrame({
            "party_id": [f"p{i}" for i in range(n)],
            "country": countries or ["aa"] * n,
            "dimension": [dimension] * n,
            "est": values,
        })
        return EstimateTable(frame, scales or {})

    def test_overflowing_column_empirically(self):
        table = self.make_table([-2.09, 5.0, 22.45])
        out = rescale_unit(table, "est", "wd")
        assert out.iloc[0] == pytest.approx(0.0, abs=1e-12)
        assert out.iloc[2] == pytest.approx(1.0, abs=1e-12)

    def test_declared_scale(self):
        table = self.make_table([0.0, 5.0, 10.0], scales={"est": (0.0, 10.0)})
        out = rescale_unit(table, "est", "wd")
        assert out.tolist() == pytest.approx([0.0, 0.5, 1.0], abs=1e-12)

    def test_per_country_mode(self):
        table = self.make_table([0.0, 10.0, 5.0, 15.0], countries=["aa", "aa", "bb", "bb"])
        out = rescale_unit(table, "est", "pc")
        assert out.tolist() == pytest.approx([0.0, 1.0, 0.0, 1.0], abs=1e-12)

    def test_whole_dimension_mode_spans_countries(self):
        table = self.make_table([0.0, 10.0, 5.0, 15.0], countries=["aa", "aa", "bb", "bb"])
        out = rescale_unit(table, "est", "wd")
        assert out.tolist() == pytest.approx([0.0, 10 / 15, 5 / 15, 1.0], abs=1e-12)

    def test_constant_group_errors(self):
        table = self.make_table([3.0, 3.0, 3.0])
        with pytest.raises(RescaleError, match="est"):
            rescale_unit(table, "est", "wd")

    def test_min_max_map_exactly(self):
        rng = np.random.default_rng(8)
        values = rng.normal(size=12).tolist()
        table = self.make_table(values)
        out = rescale_unit(table, "est", "wd")
        assert out.min() == 0.0
        assert out.max() == 1.0

    def test_unknown_mode(self):
        table = self.make_table([1.0, 2.0])
        with pytest.raises(ValidationError):
            rescale_unit(table, "est", "zz")


class TestBenchmarkMatrix:
    def build_table(self, cand, b1, b2, b3):
        n = len(cand)
        frame = pd.DataFrame({
            "party_id": [f"p{i}" for i in range(n)],
            "country": ["aa"] * n,
            "dimension": ["LR"] * n,
            "cand": cand, "b1": b1, "b2": b2, "b3": b3,
        })
        return EstimateTable(frame)

    def test_candidate_identical_to_benchmark_passes(self):
        rng = np.random.default_rng(9)
        b1 = rng.normal(size=20)
        b2 = b1 + rng.normal(scale=0.6, size=20)
        b3 = b1 + rng.normal(scale=0.6, size=20)
        table = self.build_table(b1.copy(), b1, b2, b3)
        report = benchmark_matrix(table, "cand", ["b1", "b2", "b3"], "wd")
        pair = next(p for p in report.pairs if p.kind == "candidate" and p.y == "b1")
        assert pair.result.rho_c == pytest.approx(1.0, abs=1e-12)
        assert report.criterion_valid

    def test_noise_candidate_fails(self):
        rng = np.random.default_rng(42)
        base = rng.normal(size=40)
        b1 = base + rng.normal(scale=0.2, size=40)
        b2 = base + rng.normal(scale=0.2, size=40)
        b3 = base + rng.normal(scale=0.2, size=40)
        noise = rng.normal(size=40)  # unrelated to the benchmarks
        table = self.build_table(noise, b1, b2, b3)
        report = benchmark_matrix(table, "cand", ["b1", "b2", "b3"], "wd")
        assert not report.criterion_valid
        assert len(report.thresholds) == 3

    def test_threshold_structure(self):
        rng = np.random.default_rng(10)
        base = rng.normal(size=25)
        table = self.build_table(
            base + rng.normal(scale=0.5, size=25),
            base + rng.normal(scale=0.3, size=25),
            base + rng.normal(scale=0.3, size=25),
            base + rng.normal(scale=0.3, size=25),
        )
        report = benchmark_matrix(table, "cand", ["b1", "b2", "b3"], "pc")
        benchmark_pairs = [p for p in report.pairs if p.kind == "benchmark"]
        candidate_pairs = [p for p in report.pairs if p.kind == "candidate"]
        assert {(p.x, p.y) for p in benchmark_pairs} == {("b1", "b2"), ("b1", "b3"), ("b2", "b3")}
        assert len(candidate_pairs) == 3
        cutoff = max(report.thresholds.values())
        for pair in candidate_pairs:
            assert pair.passes == (pair.result.ci_high > cutoff)

    def test_needs_two_benchmarks(self):
        rng = np.random.default_rng(11)
        table = self.build_table(*(rng.normal(size=10) for _ in range(4)))
        with pytest.raises(ValidationError):
            benchmark_matrix(table, "cand", ["b1"], "wd")

    def test_refuses_to_pool_dimensions(self):
        rng = np.random.default_rng(12)
        table = self.build_table(*(rng.normal(size=10) for _ in range(4)))
        frame = table.frame.copy()
        frame.loc[:4, "dimension"] = "EU"
        mixed = EstimateTable(frame)
        with pytest.raises(ValidationError, match="pooling"):
            benchmark_matrix(mixed, "cand", ["b1", "b2"], "wd")
        report = benchmark_matrix(mixed, "cand", ["b1", "b2"], "wd", dimension="EU")
        assert all(p.result.n == 5 for p in report.pairs)


class TestMergeEstimates:
    def crosswalk(self):
        return pd.DataFrame({
            "doc_id": ["d1", "d2", "d3"],
            "party_id": ["p1", "p2", "p3"],
            "country": ["aa", "aa", "bb"],
        })

    def run_frame(self, values, dimension="LR"):
        return pd.DataFrame({
            "doc_id": ["d1", "d2", "d3"],
            "dimension": [dimension] * 3,
            "raw": values,
            "transformed": [np.nan] * 3,
        })

    def external(self):
        return pd.DataFrame({
            "party_id": ["p1", "p2", "p3"],
            "country": ["aa", "aa", "bb"],
            "dimension": ["LR"] * 3,
            "source": ["CHES"] * 3,
            "score": [1.0, 2.0, 3.0],
        })

    def test_join_arithmetic(self):
        runs = {"runA": self.run_frame([0.1, 0.2, 0.3]), "runB": self.run_frame([0.3, 0.2, 0.1])}
        result = merge_estimates(runs, self.external(), self.crosswalk())
        assert result.n_rows == 3
        assert set(result.table.source_columns()) == {"runA", "runB", "CHES"}

    def test_missing_external_cell_keeps_row(self):
        runs = {"runA": self.run_frame([0.1, 0.2, 0.3])}
        external = self.external().iloc[:2]  # p3 missing from CHES
        result = merge_estimates(runs, external, self.crosswalk())
        assert result.n_rows == 3
        row = result.table.frame.set_index("party_id").loc["p3"]
        assert np.isnan(row["CHES"])
        assert row["runA"] == pytest.approx(0.3)

    def test_duplicate_run_key_errors(self):
        frame = self.run_frame([0.1, 0.2, 0.3])
        dup = pd.concat([frame, frame.iloc[[0]]], ignore_index=True)
        with pytest.raises(MergeError):
            merge_estimates({"runA": dup}, None, self.crosswalk())

    def test_ambiguous_crosswalk_errors(self):
        crosswalk = pd.concat([self.crosswalk(), pd.DataFrame({
            "doc_id": ["d1"], "party_id": ["p9"], "country": ["aa"],
        })], ignore_index=True)
        with pytest.raises(MergeError, match="d1"):
            merge_estimates({"runA": self.run_frame([0.1, 0.2, 0.3])}, None, crosswalk)

    def test_unmatched_documents_reported(self):
        crosswalk = self.crosswalk().iloc[:2]
        result = merge_estimates({"runA": self.run_frame([0.1, 0.2, 0.3])}, None, crosswalk)
        assert result.unmatched_doc_ids == ("d3",)

    def test_transformed_preferred_over_raw(self):
        frame = self.run_frame([0.1, 0.2, 0.3])
        frame["transformed"] = [1.1, np.nan, 3.3]
        result = merge_estimates({"runA": frame}, None, self.crosswalk())
        col = result.table.frame.set_index("party_id")["runA"]
        assert col["p1"] == pytest.approx(1.1)
        assert col["p2"] == pytest.approx(0.2)  # falls back to raw


class TestReportRow:
    def test_round_trip_product_identity(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            x = rng.normal(size=15)
            y = 0.7 * x + rng.normal(scale=0.5, size=15) + rng.uniform(-1, 1)
            cells = report_row(ccc(x, y))
            rho_c = float(cells["rho_c"])
            product = float(cells["pearson_r"]) * float(cells["c_b"])
            assert product == pytest.approx(rho_c, abs=1e-9)

    def test_estimate_table_duplicate_key_rejected(self):
        frame = pd.DataFrame({
            "party_id": ["p1", "p1"], "country": ["aa", "aa"],
            "dimension": ["LR", "LR"], "est": [1.0, 2.0],
        })
        with pytest.raises(ValidationError):
            EstimateTable(frame)
