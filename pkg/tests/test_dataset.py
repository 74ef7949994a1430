"""IPD loading, schema validation, preprocessing rules and their invariants."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from risknmr.dataset import (
    CovariateSpec,
    IpdFormatError,
    PatientRecord,
    SchemaError,
    StudyDataset,
    TreatmentRegistry,
    expand_patient,
    load_ipd,
    load_schema_document,
    preprocess,
    save_schema_document,
    write_ipd,
)

REGISTRY = TreatmentRegistry(("P", "A", "B", "C"), "P")


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    return str(path)


def simple_schema():
    return [CovariateSpec("age"), CovariateSpec("score")]


HEADER = ["study", "treatment", "outcome", "age", "score"]


class TestLoadIpd:
    def test_three_studies_four_treatments(self, tmp_path):
        rows = [
            ["s1", "P", 0, 40, 1.0],
            ["s1", "A", 1, 50, 2.0],
            ["s2", "P", 0, 60, 0.5],
            ["s2", "B", 1, 55, 1.5],
            ["s3", "C", 0, 45, 2.5],
            ["s3", "P", 1, 35, 3.0],
        ]
        path = write_csv(tmp_path / "ipd.csv", HEADER, rows)
        studies = load_ipd(path, simple_schema(), REGISTRY)
        assert len(studies) == 3
        arms = {t for s in studies for t in s.arms()}
        assert arms == {"P", "A", "B", "C"}

    def test_outcome_error_names_line_17(self, tmp_path):
        rows = [["s1", "P", i % 2, 40 + i, 0.1 * i] for i in range(20)]
        rows[15][2] = 2  # header is line 1, so data row 16 is physical line 17
        path = write_csv(tmp_path / "bad.csv", HEADER, rows)
        with pytest.raises(IpdFormatError) as err:
            load_ipd(path, simple_schema(), REGISTRY)
        assert err.value.line == 17
        assert "line 17" in str(err.value)

    def test_empty_file_with_header(self, tmp_path):
        path = write_csv(tmp_path / "empty.csv", HEADER, [])
        assert load_ipd(path, simple_schema(), REGISTRY) == []

    def test_missing_column_rejected_at_header(self, tmp_path):
        path = write_csv(tmp_path / "m.csv", HEADER[:-1], [])
        with pytest.raises(IpdFormatError) as err:
            load_ipd(path, simple_schema(), REGISTRY)
        assert err.value.line == 1

    def test_unknown_treatment_named_with_line(self, tmp_path):
        rows = [["s1", "P", 0, 40, 1.0], ["s1", "XX", 1, 50, 2.0]]
        path = write_csv(tmp_path / "t.csv", HEADER, rows)
        with pytest.raises(IpdFormatError) as err:
            load_ipd(path, simple_schema(), REGISTRY)
        assert err.value.line == 3
        assert "XX" in str(err.value)

    def test_undeclared_category_rejected(self, tmp_path):
        schema = [CovariateSpec("region", kind="categorical", categories=("EU", "US"))]
        path = write_csv(
            tmp_path / "c.csv",
            ["study", "treatment", "outcome", "region"],
            [["s1", "P", 0, "EU"], ["s1", "A", 1, "MARS"]],
        )
        with pytest.raises(IpdFormatError) as err:
            load_ipd(path, schema, REGISTRY)
        assert "MARS" in str(err.value)

    def test_missing_tokens_parse_as_none(self, tmp_path):
        rows = [["s1", "P", 0, "", 1.0], ["s1", "A", 1, "NA", 2.0]]
        path = write_csv(tmp_path / "na.csv", HEADER, rows)
        studies = load_ipd(path, simple_schema(), REGISTRY)
        assert studies[0].records[0].covariates["age"] is None
        assert studies[0].records[1].covariates["age"] is None

    def test_baseline_is_reference_when_present(self, tmp_path):
        rows = [["s1", "A", 0, 1, 1], ["s1", "P", 1, 2, 2], ["s2", "B", 0, 3, 3], ["s2", "A", 1, 4, 4]]
        path = write_csv(tmp_path / "b.csv", HEADER, rows)
        studies = load_ipd(path, simple_schema(), REGISTRY)
        by_id = {s.study_id: s for s in studies}
        assert by_id["s1"].baseline_treatment == "P"
        # no reference arm: earliest arm in registry order
        assert by_id["s2"].baseline_treatment == "A"

    def test_roundtrip_write_then_load_is_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        records = tuple(
            PatientRecord("s1", "P" if i % 2 else "A", int(i % 2),
                          {"age": float(rng.normal()), "score": float(rng.normal())})
            for i in range(25)
        )
        studies = [StudyDataset("s1", records, "P")]
        path = tmp_path / "rt.csv"
        write_ipd(str(path), studies, simple_schema())
        loaded = load_ipd(str(path), simple_schema(), REGISTRY)
        assert len(loaded[0].records) == 25
        for a, b in zip(studies[0].records, loaded[0].records):
            assert a.covariates == b.covariates  # bit-exact float round-trip
            assert (a.treatment, a.outcome) == (b.treatment, b.outcome)


class TestSchema:
    def test_reference_must_be_declared(self):
        with pytest.raises(SchemaError):
            CovariateSpec("x", kind="categorical", categories=("a", "b"), reference_level="z")

    def test_merge_target_must_be_declared(self):
        with pytest.raises(SchemaError):
            CovariateSpec("x", kind="categorical", categories=("a", "b"), merge_map={"b": "q"})

    def test_reference_cannot_be_merged(self):
        with pytest.raises(SchemaError):
            CovariateSpec(
                "x", kind="categorical", categories=("a", "b"), merge_map={"a": "b"}
            )

    def test_transform_only_on_continuous(self):
        with pytest.raises(SchemaError):
            CovariateSpec("x", kind="categorical", categories=("a", "b"), transform="log1p")

    def test_schema_document_roundtrip(self, tmp_path):
        schema = [
            CovariateSpec("age", transform="log1p"),
            CovariateSpec(
                "region",
                kind="categorical",
                categories=("EU", "US", "OTHER"),
                reference_level="EU",
                merge_map={"OTHER": "US"},
            ),
        ]
        path = tmp_path / "schema.json"
        save_schema_document(str(path), schema, REGISTRY)
        loaded, registry = load_schema_document(str(path))
        assert loaded == schema
        assert registry == REGISTRY


def make_records(values_by_name, treatments=None, outcomes=None):
    names = list(values_by_name)
    n = len(next(iter(values_by_name.values())))
    records = []
    for i in range(n):
        records.append(
            PatientRecord(
                "s1",
                (treatments or ["P", "A"])[i % 2],
                (outcomes or [0, 1])[i % 2],
                {name: values_by_name[name][i] for name in names},
            )
        )
    return [StudyDataset("s1", tuple(records), "P")]


class TestPreprocess:
    def test_missingness_drop(self):
        n = 40
        age = [None if i < 24 else float(i) for i in range(n)]  # 60% missing
        score = [float(i) for i in range(n)]
        studies = make_records({"age": age, "score": score})
        schema = [CovariateSpec("age"), CovariateSpec("score")]
        cleaned, report = preprocess(studies, schema)
        dropped = {d.name: d.reason for d in report.drops}
        assert dropped == {"age": "missingness"}
        assert all("age" not in r.covariates for r in cleaned[0].records)

    def test_correlation_drop_keeps_fewer_missing(self):
        rng = np.random.default_rng(1)
        base = rng.normal(size=60)
        a = list(base)
        b = list(base + rng.normal(scale=0.05, size=60))  # r close to 1
        b[0] = None  # b has more missing -> b loses
        studies = make_records({"a": a, "b": b})
        cleaned, report = preprocess(studies, [CovariateSpec("a"), CovariateSpec("b")])
        assert {d.name for d in report.drops if d.reason == "correlation"} == {"b"}

    def test_correlation_tie_breaks_by_schema_order(self):
        rng = np.random.default_rng(2)
        base = list(rng.normal(size=50))
        studies = make_records({"a": base, "b": base})
        cleaned, report = preprocess(studies, [CovariateSpec("a"), CovariateSpec("b")])
        assert {d.name for d in report.drops} == {"b"}

    def test_keep_over_overrides_missingness_rule(self):
        rng = np.random.default_rng(3)
        base = rng.normal(size=60)
        a = list(base)
        a[0] = None  # a has more missing, would normally lose
        b = list(base + rng.normal(scale=0.01, size=60))
        schema = [CovariateSpec("a", keep_over=("b",)), CovariateSpec("b")]
        cleaned, report = preprocess(make_records({"a": a, "b": b}), schema)
        assert {d.name for d in report.drops if d.reason == "correlation"} == {"b"}

    def test_complete_case_filter(self):
        rng = np.random.default_rng(11)
        age = [float(rng.normal()) if i % 5 else None for i in range(40)]
        score = [float(rng.normal()) for _ in range(40)]
        studies = make_records({"age": age, "score": score})
        cleaned, report = preprocess(studies, simple_schema())
        assert report.n_records_out == sum(1 for v in age if v is not None)
        for r in cleaned[0].records:
            assert all(v is not None for v in r.covariates.values())

    def test_transforms_applied(self):
        vals = [0.0, 1.0, 3.0, 7.0] * 10
        studies = make_records({"x": vals, "y": list(np.random.default_rng(4).normal(size=40))})
        schema = [CovariateSpec("x", transform="log1p"), CovariateSpec("y")]
        cleaned, _ = preprocess(studies, schema)
        got = [r.covariates["x"] for r in cleaned[0].records[:4]]
        assert got == [math.log1p(v) for v in vals[:4]]

    def test_categorical_expansion_reference_omitted(self):
        region = ["EU", "US", "OTHER", "US"] * 10
        studies = make_records({"region": region, "x": [float(i) for i in range(40)]})
        schema = [
            CovariateSpec(
                "region",
                kind="categorical",
                categories=("EU", "US", "OTHER"),
                merge_map={"OTHER": "US"},
            ),
            CovariateSpec("x"),
        ]
        cleaned, report = preprocess(studies, schema)
        cols = set(cleaned[0].records[0].covariates)
        assert cols == {"region=US", "x"}
        # merged OTHER -> US indicator set
        assert cleaned[0].records[2].covariates["region=US"] == 1.0

    def test_zero_variance_drop(self):
        studies = make_records(
            {"const": [2.5] * 40, "x": list(np.random.default_rng(5).normal(size=40))}
        )
        cleaned, report = preprocess(studies, [CovariateSpec("const"), CovariateSpec("x")])
        reasons = {d.name: d.reason for d in report.drops}
        assert reasons["const"] == "zero variance"

    def test_per_study_missingness_flag(self):
        rng = np.random.default_rng(12)
        recs1 = tuple(
            PatientRecord("s1", "P" if i % 2 else "A", i % 2,
                          {"x": None if i < 7 else float(rng.normal()), "y": float(rng.normal())})
            for i in range(10)
        )
        recs2 = tuple(
            PatientRecord("s2", "P" if i % 2 else "A", i % 2,
                          {"x": float(rng.normal()), "y": float(rng.normal())})
            for i in range(30)
        )
        studies = [StudyDataset("s1", recs1, "A"), StudyDataset("s2", recs2, "A")]
        schema = [CovariateSpec("x"), CovariateSpec("y")]
        _, pooled = preprocess(studies, schema)
        assert not any(d.name == "x" for d in pooled.drops)  # 7/40 pooled is fine
        _, per_study = preprocess(studies, schema, per_study_missingness=True)
        assert any(d.name == "x" and d.reason == "missingness" for d in per_study.drops)

    def test_output_invariants_and_idempotence(self):
        rng = np.random.default_rng(6)
        n = 80
        base = rng.normal(size=n)
        data = {
            "a": list(base),
            "b": list(base * 0.9 + rng.normal(scale=0.1, size=n)),
            "c": list(rng.normal(size=n)),
            "d": [None if i % 3 == 0 else float(rng.normal()) for i in range(n)],
        }
        studies = make_records(data)
        schema = [CovariateSpec(k) for k in data]
        cleaned, report = preprocess(studies, schema)

        # no missingness, pairwise |r| <= threshold on the output
        cols = list(cleaned[0].records[0].covariates)
        matrix = np.array([[r.covariates[c] for c in cols] for r in cleaned[0].records])
        assert np.isfinite(matrix).all()
        for i in range(len(cols)):
            for j in range(i + 1, len(cols)):
                r = np.corrcoef(matrix[:, i], matrix[:, j])[0, 1]
                assert abs(r) <= 0.7 + 1e-12

        again, report2 = preprocess(cleaned, list(report.output_schema))
        assert report2.drops == ()
        assert report2.n_records_out == report.n_records_out
        for s1, s2 in zip(cleaned, again):
            for r1, r2 in zip(s1.records, s2.records):
                assert r1.covariates == r2.covariates

    def test_counts_never_increase(self):
        studies = make_records(
            {"x": list(np.random.default_rng(7).normal(size=30)), "y": [None] * 30}
        )
        cleaned, report = preprocess(studies, simple_schema_xy())
        assert report.n_records_out <= report.n_records_in
        assert report.n_covariates_out <= report.n_covariates_in


def simple_schema_xy():
    return [CovariateSpec("x"), CovariateSpec("y")]


class TestExpandPatient:
    SCHEMA = [
        CovariateSpec("age", transform="log1p"),
        CovariateSpec(
            "region",
            kind="categorical",
            categories=("EU", "US", "OTHER"),
            merge_map={"OTHER": "US"},
        ),
    ]

    def test_expansion_matches_preprocessing(self):
        out = expand_patient({"age": 3.0, "region": "OTHER"}, self.SCHEMA)
        assert out == {"age": math.log1p(3.0), "region=US": 1.0}

    def test_missing_field_named(self):
        with pytest.raises(ValueError, match="missing covariate: region"):
            expand_patient({"age": 3.0}, self.SCHEMA)

    def test_mistyped_field_named(self):
        with pytest.raises(ValueError, match="age"):
            expand_patient({"age": "old", "region": "EU"}, self.SCHEMA)

    def test_unknown_category_named(self):
        with pytest.raises(ValueError, match="region"):
            expand_patient({"age": 3.0, "region": "MOON"}, self.SCHEMA)

    def test_indicator_schema_accepts_numeric(self):
        schema = [CovariateSpec("region=US", kind="indicator", source="region")]
        assert expand_patient({"region=US": 1}, schema) == {"region=US": 1.0}
        with pytest.raises(ValueError, match="region=US"):
            expand_patient({"region=US": 0.5}, schema)


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_preprocess_idempotence_property(data):
    rng_seed = data.draw(st.integers(min_value=0, max_value=10_000))
    n = data.draw(st.integers(min_value=12, max_value=60))
    rng = np.random.default_rng(rng_seed)
    cols = {}
    n_cols = data.draw(st.integers(min_value=2, max_value=5))
    for j in range(n_cols):
        vals = rng.normal(size=n)
        mask = rng.random(n) < data.draw(st.floats(min_value=0.0, max_value=0.55))
        cols[f"v{j}"] = [None if m else float(v) for v, m in zip(vals, mask)]
    studies = make_records(cols)
    schema = [CovariateSpec(k) for k in cols]
    try:
        cleaned, report = preprocess(studies, schema)
    except ValueError:
        return  # everything dropped or no complete rows: acceptable degenerate case
    if not cleaned:
        return
    again, report2 = preprocess(cleaned, list(report.output_schema))
    assert report2.drops == ()
    for s1, s2 in zip(cleaned, again):
        assert [r.covariates for r in s1.records] == [r.covariates for r in s2.records]
