"""Individual-participant data: schema, loading, and preprocessing.

Input files are comma-separated with a header row. Three column names are
reserved (``study``, ``treatment``, ``outcome``); every other declared
covariate must appear as its own column. Missing values are written as an
empty field or the token ``NA``.

Preprocessing applies, in order: a missingness screen, the declared
per-covariate transforms and category merges, complete-case filtering,
a pairwise correlation screen among continuous covariates, expansion of
categoricals into reference-omitted indicator columns, and a zero-variance
screen on the resulting columns. The correlation screen runs once on
pairwise-complete observations before filtering and is re-checked on the
complete cases afterwards, so the advertised invariants (no retained
continuous pair beyond the threshold, idempotence of the whole pipeline)
hold on the returned data by construction.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

RESERVED_COLUMNS = ("study", "treatment", "outcome")
MISSING_TOKENS = ("", "NA")

_TRANSFORMS = {
    "none": lambda v: v,
    "log1p": math.log1p,
    "sqrt": math.sqrt,
}


class SchemaError(ValueError):
    """A covariate schema or treatment registry is internally inconsistent."""


class IpdFormatError(ValueError):
    """An input file violates the expected format.

    Carries the 1-based physical line number of the offending row when one
    can be identified (the header is line 1).
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class CovariateSpec:
    """Declaration of one covariate.

    kind is ``continuous``, ``categorical``, or ``indicator`` (the latter is
    produced by preprocessing when categoricals are expanded; ``source``
    then names the originating covariate). ``transform`` applies to
    continuous covariates only. ``merge_map`` sends rare category labels to
    other declared labels before expansion. ``keep_over`` lets the user
    pre-decide correlation-screen conflicts: this covariate wins against any
    covariate named in the tuple.
    """

    name: str
    kind: str = "continuous"
    transform: str = "none"
    categories: tuple[str, ...] = ()
    reference_level: str | None = None
    merge_map: Mapping[str, str] = field(default_factory=dict)
    keep_over: tuple[str, ...] = ()
    source: str | None = None

    def __post_init__(self):
        if not self.name or self.name in RESERVED_COLUMNS:
            raise SchemaError(f"invalid covariate name {self.name!r}")
        if "=" in self.name and self.kind != "indicator":
            raise SchemaError(f"covariate name {self.name!r} must not contain '='")
        if self.kind not in ("continuous", "categorical", "indicator"):
            raise SchemaError(f"{self.name}: unknown kind {self.kind!r}")
        if self.transform not in _TRANSFORMS:
            raise SchemaError(f"{self.name}: unknown transform {self.transform!r}")
        if self.kind != "continuous" and self.transform != "none":
            raise SchemaError(f"{self.name}: transforms apply to continuous covariates only")
        object.__setattr__(self, "categories", tuple(self.categories))
        object.__setattr__(self, "keep_over", tuple(self.keep_over))
        object.__setattr__(self, "merge_map", dict(self.merge_map))
        if self.kind == "categorical":
            if len(self.categories) < 2:
                raise SchemaError(f"{self.name}: categorical needs at least 2 declared categories")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"{self.name}: duplicate categories")
            ref = self.reference_level if self.reference_level is not None else self.categories[0]
            if ref not in self.categories:
                raise SchemaError(f"{self.name}: reference level {ref!r} not among declared categories")
            object.__setattr__(self, "reference_level", ref)
            for src, dst in self.merge_map.items():
                if src not in self.categories or dst not in self.categories:
                    raise SchemaError(f"{self.name}: merge {src!r}->{dst!r} uses undeclared categories")
                if src == ref:
                    raise SchemaError(f"{self.name}: the reference level cannot be merged away")
        else:
            if self.categories or self.reference_level is not None or self.merge_map:
                raise SchemaError(f"{self.name}: category fields apply to categorical covariates only")

    def effective_categories(self) -> tuple[str, ...]:
        """Declared categories that survive the merge map, in declared order."""
        return tuple(c for c in self.categories if c not in self.merge_map)

    def indicator_levels(self) -> tuple[str, ...]:
        """Non-reference surviving categories, i.e. the indicator columns."""
        return tuple(c for c in self.effective_categories() if c != self.reference_level)

    def to_dict(self) -> dict:
        d: dict = {"name": self.name, "kind": self.kind}
        if self.kind == "continuous":
            if self.transform != "none":
                d["transform"] = self.transform
        elif self.kind == "categorical":
            d["categories"] = list(self.categories)
            d["reference_level"] = self.reference_level
            if self.merge_map:
                d["merge_map"] = dict(self.merge_map)
        if self.keep_over:
            d["keep_over"] = list(self.keep_over)
        if self.source is not None:
            d["source"] = self.source
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "CovariateSpec":
        return cls(
            name=d["name"],
            kind=d.get("kind", "continuous"),
            transform=d.get("transform", "none"),
            categories=tuple(d.get("categories", ())),
            reference_level=d.get("reference_level"),
            merge_map=d.get("merge_map", {}),
            keep_over=tuple(d.get("keep_over", ())),
            source=d.get("source"),
        )


@dataclass(frozen=True)
class TreatmentRegistry:
    """Closed set of treatment labels with a designated reference."""

    treatments: tuple[str, ...]
    reference: str

    def __post_init__(self):
        object.__setattr__(self, "treatments", tuple(self.treatments))
        if len(set(self.treatments)) != len(self.treatments):
            raise SchemaError("duplicate treatment labels")
        if not self.treatments:
            raise SchemaError("empty treatment registry")
        if self.reference not in self.treatments:
            raise SchemaError(f"reference {self.reference!r} not among treatments")

    def index(self, treatment: str) -> int:
        try:
            return self.treatments.index(treatment)
        except ValueError:
            raise SchemaError(f"unknown treatment {treatment!r}") from None

    def to_dict(self) -> dict:
        return {"treatments": list(self.treatments), "reference": self.reference}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TreatmentRegistry":
        return cls(tuple(d["treatments"]), d["reference"])


@dataclass(frozen=True)
class PatientRecord:
    """One row of IPD. covariates maps name -> float, category label or None."""

    study_id: str
    treatment: str
    outcome: int
    covariates: Mapping[str, object]
    logit_risk: float | None = None

    def __post_init__(self):
        if self.outcome not in (0, 1):
            raise IpdFormatError(f"outcome must be 0 or 1, got {self.outcome!r}")
        object.__setattr__(self, "covariates", dict(self.covariates))


@dataclass(frozen=True)
class StudyDataset:
    """All records of one study plus its arbitrarily chosen baseline arm."""

    study_id: str
    records: tuple[PatientRecord, ...]
    baseline_treatment: str
    center: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if not self.records:
            raise ValueError(f"study {self.study_id}: no records")
        if self.baseline_treatment not in self.arms():
            raise ValueError(
                f"study {self.study_id}: baseline {self.baseline_treatment!r} has no patients"
            )

    def arms(self) -> tuple[str, ...]:
        seen: list[str] = []
        for r in self.records:
            if r.treatment not in seen:
                seen.append(r.treatment)
        return tuple(seen)


def load_schema_document(path: str) -> tuple[list[CovariateSpec], TreatmentRegistry]:
    """Read a JSON document holding the covariate schema and the registry."""
    with open(path) as fh:
        doc = json.load(fh)
    schema = [CovariateSpec.from_dict(d) for d in doc["covariates"]]
    names = [s.name for s in schema]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate covariate names in schema")
    registry = TreatmentRegistry(tuple(doc["treatments"]), doc["reference"])
    return schema, registry


def save_schema_document(path: str, schema: Sequence[CovariateSpec], registry: TreatmentRegistry):
    doc = {
        "covariates": [s.to_dict() for s in schema],
        "treatments": list(registry.treatments),
        "reference": registry.reference,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _parse_value(token: str, spec: CovariateSpec, line: int):
    if token in MISSING_TOKENS:
        return None
    if spec.kind == "categorical":
        if token not in spec.categories:
            raise IpdFormatError(
                f"covariate {spec.name}: undeclared category {token!r}", line
            )
        return token
    try:
        value = float(token)
    except ValueError:
        raise IpdFormatError(
            f"covariate {spec.name}: expected a number, got {token!r}", line
        ) from None
    if not math.isfinite(value):
        raise IpdFormatError(f"covariate {spec.name}: non-finite value", line)
    return value


def load_ipd(
    path: str,
    schema: Sequence[CovariateSpec],
    registry: TreatmentRegistry,
) -> list[StudyDataset]:
    """Load IPD from a CSV file into per-study datasets.

    Studies appear in order of first appearance. The baseline treatment of
    each study is the registry reference when the study has a reference arm,
    otherwise the study's earliest arm in registry order.
    """
    names = [s.name for s in schema]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate covariate names in schema")
    by_name = {s.name: s for s in schema}

    records_by_study: dict[str, list[PatientRecord]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IpdFormatError("empty file: missing header row", 1) from None
        expected = set(RESERVED_COLUMNS) | set(names)
        missing = expected - set(header)
        if missing:
            raise IpdFormatError(f"missing columns: {sorted(missing)}", 1)
        extra = set(header) - expected
        if extra:
            raise IpdFormatError(f"unexpected columns: {sorted(extra)}", 1)
        if len(set(header)) != len(header):
            raise IpdFormatError("duplicate column names in header", 1)
        col = {name: header.index(name) for name in header}

        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IpdFormatError(
                    f"expected {len(header)} fields, got {len(row)}", line
                )
            study_id = row[col["study"]].strip()
            if not study_id:
                raise IpdFormatError("empty study identifier", line)
            treatment = row[col["treatment"]].strip()
            if treatment not in registry.treatments:
                raise IpdFormatError(f"unknown treatment {treatment!r}", line)
            raw_outcome = row[col["outcome"]].strip()
            if raw_outcome not in ("0", "1"):
                raise IpdFormatError(
                    f"outcome must be 0 or 1, got {raw_outcome!r}", line
                )
            covs = {
                name: _parse_value(row[col[name]].strip(), by_name[name], line)
                for name in names
            }
            rec = PatientRecord(study_id, treatment, int(raw_outcome), covs)
            records_by_study.setdefault(study_id, []).append(rec)

    studies = []
    for study_id, records in records_by_study.items():
        arms = {r.treatment for r in records}
        if registry.reference in arms:
            baseline = registry.reference
        else:
            baseline = min(arms, key=registry.index)
        studies.append(StudyDataset(study_id, tuple(records), baseline))
    return studies


def write_ipd(path: str, studies: Sequence[StudyDataset], schema: Sequence[CovariateSpec]):
    """Write per-study datasets back to the CSV format accepted by load_ipd."""
    names = [s.name for s in schema]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(RESERVED_COLUMNS) + names)
        for study in studies:
            for r in study.records:
                row = [r.study_id, r.treatment, str(r.outcome)]
                for name in names:
                    v = r.covariates.get(name)
                    # float() first: numpy scalars repr as np.float64(...)
                    row.append("" if v is None else (repr(float(v)) if isinstance(v, float) else str(v)))
                writer.writerow(row)


@dataclass(frozen=True)
class DropRecord:
    name: str
    reason: str  # missingness | correlation | zero variance
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "reason": self.reason, "detail": self.detail}


@dataclass(frozen=True)
class PreprocessReport:
    """What preprocessing did: every drop with its reason, plus the schema
    describing the cleaned output (transforms consumed, categoricals expanded).
    """

    drops: tuple[DropRecord, ...]
    n_records_in: int
    n_records_out: int
    n_covariates_in: int
    n_covariates_out: int
    n_columns_out: int
    output_schema: tuple[CovariateSpec, ...]
    missing_threshold: float
    corr_threshold: float
    per_study_missingness: bool

    def to_dict(self) -> dict:
        return {
            "drops": [d.to_dict() for d in self.drops],
            "n_records_in": self.n_records_in,
            "n_records_out": self.n_records_out,
            "n_covariates_in": self.n_covariates_in,
            "n_covariates_out": self.n_covariates_out,
            "n_columns_out": self.n_columns_out,
            "output_schema": [s.to_dict() for s in self.output_schema],
            "missing_threshold": self.missing_threshold,
            "corr_threshold": self.corr_threshold,
            "per_study_missingness": self.per_study_missingness,
        }


def _apply_transform(spec: CovariateSpec, value: float) -> float:
    if spec.transform == "log1p" and value <= -1.0:
        raise SchemaError(f"{spec.name}: log1p transform needs values > -1, got {value}")
    if spec.transform == "sqrt" and value < 0.0:
        raise SchemaError(f"{spec.name}: sqrt transform needs values >= 0, got {value}")
    return _TRANSFORMS[spec.transform](value)


def _pairwise_r(a: list, b: list) -> float | None:
    """Pearson r on indices where both values are present; None if undefined."""
    xs, ys = [], []
    for va, vb in zip(a, b):
        if va is not None and vb is not None:
            xs.append(va)
            ys.append(vb)
    if len(xs) < 3:
        return None
    x = np.asarray(xs)
    y = np.asarray(ys)
    sx = x.std()
    sy = y.std()
    if sx == 0.0 or sy == 0.0:
        return None
    return float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))


def _correlation_drops(
    columns: dict[str, list],
    continuous: list[str],
    missing_counts: dict[str, int],
    schema_order: dict[str, int],
    keep_over: dict[str, tuple[str, ...]],
    threshold: float,
) -> list[DropRecord]:
    """One deterministic round of the pairwise correlation screen.

    Violating pairs are resolved from the strongest correlation down. Within
    a pair the loser is decided by: an unambiguous keep_over override, then
    more missing values, then later schema position.
    """
    pairs = []
    for i, a in enumerate(continuous):
        for b in continuous[i + 1:]:
            r = _pairwise_r(columns[a], columns[b])
            if r is not None and abs(r) > threshold:
                pairs.append((abs(r), schema_order[a], schema_order[b], a, b, r))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))

    dropped: dict[str, DropRecord] = {}
    for _, _, _, a, b, r in pairs:
        if a in dropped or b in dropped:
            continue
        a_wins = b in keep_over.get(a, ())
        b_wins = a in keep_over.get(b, ())
        if a_wins and not b_wins:
            loser = b
        elif b_wins and not a_wins:
            loser = a
        elif missing_counts[a] != missing_counts[b]:
            loser = a if missing_counts[a] > missing_counts[b] else b
        else:
            loser = b if schema_order[a] < schema_order[b] else a
        winner = a if loser == b else b
        dropped[loser] = DropRecord(
            loser, "correlation", f"|r|={abs(r):.3f} with {winner}; kept {winner}"
        )
    return list(dropped.values())


def preprocess(
    studies: Sequence[StudyDataset],
    schema: Sequence[CovariateSpec],
    missing_threshold: float = 0.5,
    corr_threshold: float = 0.7,
    per_study_missingness: bool = False,
) -> tuple[list[StudyDataset], PreprocessReport]:
    """Clean IPD for modelling; see the module docstring for the step order.

    Missingness is judged on the pooled data by default; with
    per_study_missingness a covariate is dropped as soon as any single study
    exceeds the threshold. Returns the cleaned studies plus a report whose
    output_schema makes the operation idempotent:
    preprocess(cleaned, report.output_schema) returns the input unchanged.
    """
    if not 0.0 < missing_threshold <= 1.0:
        raise ValueError("missing_threshold must be in (0, 1]")
    if not 0.0 < corr_threshold <= 1.0:
        raise ValueError("corr_threshold must be in (0, 1]")
    names = [s.name for s in schema]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate covariate names in schema")
    by_name = {s.name: s for s in schema}

    all_records = [(si, r) for si, study in enumerate(studies) for r in study.records]
    n_in = len(all_records)
    drops: list[DropRecord] = []

    # Missingness screen.
    retained: list[str] = []
    missing_counts: dict[str, int] = {}
    for name in names:
        flags = [r.covariates.get(name) is None for _, r in all_records]
        missing_counts[name] = sum(flags)
        frac = missing_counts[name] / n_in if n_in else 0.0
        worst = frac
        if per_study_missingness and studies:
            for study in studies:
                m = sum(1 for r in study.records if r.covariates.get(name) is None)
                worst = max(worst, m / len(study.records))
        if worst > missing_threshold:
            scope = "a single study" if (per_study_missingness and worst != frac) else "pooled"
            drops.append(DropRecord(name, "missingness", f"{worst:.1%} missing ({scope})"))
        else:
            retained.append(name)

    # Transforms and category merges on the retained covariates.
    columns: dict[str, list] = {name: [] for name in retained}
    for _, r in all_records:
        for name in retained:
            spec = by_name[name]
            v = r.covariates.get(name)
            if v is None:
                columns[name].append(None)
            elif spec.kind == "categorical":
                columns[name].append(spec.merge_map.get(v, v))
            else:
                columns[name].append(_apply_transform(spec, float(v)))

    schema_order = {name: i for i, name in enumerate(names)}
    keep_over = {s.name: s.keep_over for s in schema}
    continuous = [n for n in retained if by_name[n].kind == "continuous"]

    # Correlation screen on pairwise-complete observations.
    for d in _correlation_drops(
        columns, continuous, missing_counts, schema_order, keep_over, corr_threshold
    ):
        drops.append(d)
        retained.remove(d.name)
        continuous.remove(d.name)

    # Complete-case filter on what is left.
    keep_rows = [
        i for i in range(n_in) if all(columns[name][i] is not None for name in retained)
    ]
    for name in retained:
        columns[name] = [columns[name][i] for i in keep_rows]

    # Re-check correlations on the complete cases so the output invariant
    # holds exactly; subsetting can nudge a borderline pair past the line.
    for d in _correlation_drops(
        columns, continuous, missing_counts, schema_order, keep_over, corr_threshold
    ):
        drops.append(d)
        retained.remove(d.name)
        continuous.remove(d.name)

    # Expand categoricals into reference-omitted indicators and build the
    # output schema, then screen out constant columns.
    out_specs: list[CovariateSpec] = []
    out_columns: dict[str, list] = {}
    for name in retained:
        spec = by_name[name]
        if spec.kind == "categorical":
            for level in spec.indicator_levels():
                col_name = f"{name}={level}"
                out_specs.append(CovariateSpec(col_name, kind="indicator", source=name))
                out_columns[col_name] = [1.0 if v == level else 0.0 for v in columns[name]]
        else:
            out_specs.append(replace(spec, transform="none"))
            out_columns[name] = columns[name]

    final_specs: list[CovariateSpec] = []
    for spec in out_specs:
        vals = out_columns[spec.name]
        if vals and len(set(vals)) <= 1:
            drops.append(DropRecord(spec.name, "zero variance", "constant after cleaning"))
        else:
            final_specs.append(spec)

    # Materialize the cleaned studies.
    out_order = [s.name for s in final_specs]
    row_of: dict[int, int] = {orig: k for k, orig in enumerate(keep_rows)}
    cleaned: list[StudyDataset] = []
    offset = 0
    for study in studies:
        new_records = []
        for ri, r in enumerate(study.records):
            k = row_of.get(offset + ri)
            if k is None:
                continue
            covs = {name: out_columns[name][k] for name in out_order}
            new_records.append(PatientRecord(r.study_id, r.treatment, r.outcome, covs))
        offset += len(study.records)
        if not new_records:
            continue
        arms = {r.treatment for r in new_records}
        baseline = study.baseline_treatment if study.baseline_treatment in arms else sorted(arms)[0]
        cleaned.append(StudyDataset(study.study_id, tuple(new_records), baseline))

    sources_out = {s.source or s.name for s in final_specs}
    report = PreprocessReport(
        drops=tuple(drops),
        n_records_in=n_in,
        n_records_out=sum(len(s.records) for s in cleaned),
        n_covariates_in=len(names),
        n_covariates_out=len(sources_out),
        n_columns_out=len(final_specs),
        output_schema=tuple(final_specs),
        missing_threshold=missing_threshold,
        corr_threshold=corr_threshold,
        per_study_missingness=per_study_missingness,
    )
    return cleaned, report


def expand_patient(values: Mapping[str, object], schema: Sequence[CovariateSpec]) -> dict[str, float]:
    """Turn one raw covariate map into the numeric columns a model expects.

    Applies category merges, transforms, and reference-omitted indicator
    expansion exactly as preprocessing does for training data. Raises
    ValueError naming the offending field for anything missing, mistyped,
    or outside the declared categories.
    """
    out: dict[str, float] = {}
    for spec in schema:
        if spec.kind == "indicator":
            v = values.get(spec.name)
            if v is None:
                raise ValueError(f"missing covariate: {spec.name}")
            if not isinstance(v, (int, float)) or isinstance(v, bool) or float(v) not in (0.0, 1.0):
                raise ValueError(f"covariate {spec.name}: expected a 0/1 indicator")
            out[spec.name] = float(v)
            continue
        v = values.get(spec.name)
        if v is None:
            raise ValueError(f"missing covariate: {spec.name}")
        if spec.kind == "categorical":
            if not isinstance(v, str):
                raise ValueError(f"covariate {spec.name}: expected a category label")
            level = spec.merge_map.get(v, v)
            if level not in spec.effective_categories():
                raise ValueError(f"covariate {spec.name}: unknown category {v!r}")
            for lv in spec.indicator_levels():
                out[f"{spec.name}={lv}"] = 1.0 if level == lv else 0.0
        else:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ValueError(f"covariate {spec.name}: expected a number")
            value = float(v)
            if not math.isfinite(value):
                raise ValueError(f"covariate {spec.name}: non-finite value")
            out[spec.name] = _apply_transform(spec, value)
    return out
