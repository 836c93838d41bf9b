import numpy as np
import pytest
import scipy.stats
from hypothesis import given
from hypothesis import strategies as st

from maskprivacy.errors import DegenerateSamplesError, EmptyInputError, ZeroMarginError
from maskprivacy.records import PredictionRecord
from maskprivacy.stats import (
    ContingencyTable,
    analyze_task,
    chi2_sf,
    chi_square_independence,
    confusion_matrix,
    contingency_from_records,
    evaluate_records,
    mann_whitney_u,
    mann_whitney_u_exact,
    normal_sf,
    regularized_gamma_q,
    subgroup_accuracy,
)


class TestGammaQ:
    @given(
        s=st.floats(0.25, 30.0),
        x=st.floats(0.0, 80.0),
    )
    def test_matches_scipy(self, s, x):
        assert regularized_gamma_q(s, x) == pytest.approx(
            float(scipy.stats.gamma.sf(x, s)), abs=1e-8
        )

    def test_domain(self):
        with pytest.raises(ValueError):
            regularized_gamma_q(0.0, 1.0)
        with pytest.raises(ValueError):
            regularized_gamma_q(1.0, -0.5)
        assert regularized_gamma_q(2.0, 0.0) == 1.0


class TestChi2Sf:
    def test_reference_values(self):
        assert 0.044 <= chi2_sf(4.019, 1) <= 0.046
        assert chi2_sf(3.841, 1) == pytest.approx(0.050, abs=1e-3)

    @given(stat=st.floats(0.0, 200.0), df=st.integers(1, 30))
    def test_matches_scipy(self, stat, df):
        assert chi2_sf(stat, df) == pytest.approx(
            float(scipy.stats.chi2.sf(stat, df)), abs=1e-8
        )

    def test_domain(self):
        with pytest.raises(ValueError):
            chi2_sf(-1.0, 1)
        with pytest.raises(ValueError):
            chi2_sf(1.0, 0)


class TestNormalSf:
    @given(z=st.floats(-8.0, 8.0))
    def test_matches_scipy(self, z):
        assert normal_sf(z) == pytest.approx(float(scipy.stats.norm.sf(z)), abs=1e-12)


def random_table(rng, max_dim=4, low=1, high=40):
    r = int(rng.integers(2, max_dim + 1))
    c = int(rng.integers(2, max_dim + 1))
    return rng.integers(low, high, size=(r, c))


class TestChiSquare:
    def test_symmetric_2x2(self):
        table = ContingencyTable(np.array([[20, 5], [5, 20]]), ("a", "b"), ("x", "y"))
        result = chi_square_independence(table)
        assert result.statistic == 18.0
        assert result.df == 1
        assert result.tail == "one"

    def test_zero_margin(self):
        table = ContingencyTable(np.array([[0, 0], [5, 20]]), ("a", "b"), ("x", "y"))
        with pytest.raises(ZeroMarginError):
            chi_square_independence(table)

    def test_rejects_negative_counts(self):
        with pytest.raises(ValueError):
            ContingencyTable(np.array([[1, -2], [3, 4]]), ("a", "b"), ("x", "y"))

    def test_needs_2x2(self):
        with pytest.raises(ValueError):
            chi_square_independence(
                ContingencyTable(np.array([[1, 2, 3]]), ("a",), ("x", "y", "z"))
            )

    @given(seed=st.integers(0, 10**6))
    def test_matches_scipy(self, seed):
        rng = np.random.default_rng(seed)
        counts = random_table(rng)
        table = ContingencyTable(
            counts,
            tuple(f"r{i}" for i in range(counts.shape[0])),
            tuple(f"c{i}" for i in range(counts.shape[1])),
        )
        mine = chi_square_independence(table)
        ref = scipy.stats.chi2_contingency(counts, correction=False)
        assert mine.statistic == pytest.approx(ref.statistic, rel=1e-10)
        assert mine.p_value == pytest.approx(ref.pvalue, abs=1e-8)
        assert mine.df == ref.dof


def sample_lists(min_size=1, max_size=8):
    return st.lists(
        st.sampled_from([1.0, 2.0, 3.0]), min_size=min_size, max_size=max_size
    )


class TestMannWhitney:
    def test_spec_example(self):
        # worked example: higher scores concentrated in sample a
        a = [2, 3, 3, 2, 3]
        b = [1, 2, 1, 2, 2]
        normal = mann_whitney_u(a, b)
        exact = mann_whitney_u_exact(a, b)
        assert normal.statistic == 22.0
        assert exact.p_value == pytest.approx(10 / 252)
        assert abs(normal.p_value - exact.p_value) < 0.02

    @given(a=sample_lists(), b=sample_lists())
    def test_u_identity(self, a, b):
        u_a = mann_whitney_u(a, b).statistic
        u_b = mann_whitney_u(b, a).statistic
        assert u_a + u_b == pytest.approx(len(a) * len(b))

    @given(a=sample_lists(), b=sample_lists())
    def test_matches_scipy_asymptotic(self, a, b):
        if all(v == (a + b)[0] for v in a + b):
            return  # degenerate handled separately
        mine = mann_whitney_u(a, b)
        ref = scipy.stats.mannwhitneyu(
            a, b, alternative="greater", method="asymptotic", use_continuity=True
        )
        assert mine.statistic == pytest.approx(ref.statistic)
        assert mine.p_value == pytest.approx(ref.pvalue, abs=1e-10)

    def test_exact_matches_scipy_when_untied(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = rng.permutation(20)[:4].astype(float).tolist()
            b = (rng.permutation(20)[:5] + 100).astype(float).tolist()
            mine = mann_whitney_u_exact(a, b)
            ref = scipy.stats.mannwhitneyu(a, b, alternative="greater", method="exact")
            assert mine.p_value == pytest.approx(ref.pvalue, abs=1e-12)

    def test_degenerate_identical(self):
        result = mann_whitney_u([2, 2], [2, 2, 2])
        assert result.degenerate
        assert result.p_value == 1.0

    def test_empty_sample(self):
        with pytest.raises(DegenerateSamplesError):
            mann_whitney_u([], [1.0])

    def test_exact_size_guard(self):
        with pytest.raises(ValueError):
            mann_whitney_u_exact(list(range(11)), list(range(10)))

    def test_exact_tail_includes_observed(self):
        # maximal U: exact tail must still count the observed assignment
        result = mann_whitney_u_exact([5, 6], [1, 2])
        assert result.statistic == 4.0
        assert result.p_value == pytest.approx(1 / 6)


def make_records(pairs, task="sex_cls", attr=None):
    records = []
    for i, (true, pred) in enumerate(pairs):
        attrs = {"sex": attr[i]} if attr else {}
        records.append(PredictionRecord(
            image_id=f"img{i}", task=task, true_value=true, predicted=pred,
            attributes=attrs,
        ))
    return records


class TestEvaluate:
    def test_accuracy(self):
        recs = make_records([("m", "m"), ("m", "f"), ("f", "f"), ("f", "f")])
        assert evaluate_records(recs) == {"n": 4, "accuracy": 0.75}

    def test_regression_metrics(self):
        recs = make_records([(10.0, 12.0), (20.0, 17.0)], task="age_reg")
        m = evaluate_records(recs)
        assert m["mae"] == pytest.approx(2.5)
        assert m["rmse"] == pytest.approx(np.sqrt((4 + 9) / 2))

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            evaluate_records([])


class TestConfusion:
    def test_counts(self):
        recs = make_records([("m", "m"), ("m", "f"), ("f", "f")])
        mat, names = confusion_matrix(recs, class_names=("m", "f"))
        assert names == ("m", "f")
        assert mat.tolist() == [[1, 1], [0, 1]]

    def test_diagonal_sum_is_correct_count(self):
        recs = make_records([("a", "a"), ("b", "a"), ("b", "b"), ("c", "c")])
        mat, _ = confusion_matrix(recs)
        assert np.trace(mat) == sum(1 for r in recs if r.correct)


class TestSubgroups:
    @given(seed=st.integers(0, 10**6))
    def test_weighted_mean_equals_overall(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 60))
        pairs = [("m", "m") if rng.random() < 0.6 else ("m", "f") for _ in range(n)]
        groups = [str(rng.integers(0, 3)) for _ in range(n)]
        recs = make_records(pairs, attr=groups)
        report = subgroup_accuracy(recs, "sex")["groups"]
        weighted = sum(g["n"] * g["accuracy"] for g in report.values())
        overall = evaluate_records(recs)["accuracy"] * n
        assert weighted == pytest.approx(overall)

    def test_zero_support_listed(self):
        recs = make_records([("m", "m")], attr=["male"])
        report = subgroup_accuracy(recs, "sex", domain=("male", "female"))
        assert report["zero_support"] == ["female"]

    def test_missing_attribute_rejected(self):
        recs = make_records([("m", "m")])
        with pytest.raises(ValueError):
            subgroup_accuracy(recs, "race")


class TestContingencyFromRecords:
    def test_correct_incorrect_columns(self):
        recs = make_records(
            [("m", "m"), ("m", "f"), ("f", "f"), ("f", "f")],
            attr=["male", "male", "female", "female"],
        )
        table = contingency_from_records(recs, "sex", levels=("male", "female"))
        assert table.col_labels == ("correct", "incorrect")
        assert table.counts.tolist() == [[1, 1], [2, 0]]


class TestAnalyzeTask:
    def test_classification_report_shape(self):
        rng = np.random.default_rng(4)
        recs = []
        for i in range(40):
            true = "male" if rng.random() < 0.5 else "female"
            pred = true if rng.random() < 0.7 else ("male" if true == "female" else "female")
            recs.append(PredictionRecord(
                image_id=f"i{i}", task="sex_cls", true_value=true, predicted=pred,
                attributes={"sex": true, "race": "white" if i % 2 else "asian",
                            "age_bin": "young"},
            ))
        report = analyze_task(recs)
        assert set(report) == {"task", "metrics", "confusion", "subgroups", "chi_square"}
        assert "accuracy" in report["metrics"]
        # age_bin has one level only: not testable, must carry a note
        assert "note" in report["chi_square"]["age_bin"]

    def test_regression_report_shape(self):
        recs = [
            PredictionRecord(
                image_id=f"i{k}", task="age_reg", true_value=float(20 + k),
                predicted=float(22 + k),
                attributes={"sex": "male", "race": "white", "age_bin": "young"},
            )
            for k in range(6)
        ]
        report = analyze_task(recs)
        assert "mae" in report["metrics"]
        assert "chi_square" not in report
