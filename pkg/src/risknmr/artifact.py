"""One-file bundle of a fitted pipeline: risk model, posterior, anchor.

Bundling everything a prediction needs into a single JSON document means
the serving side can never pair a posterior with the wrong prognostic
model: the posterior and the anchor each carry the fingerprint of the
stage-1 coefficient block they were built on, and the bundle refuses to
assemble (or load) unless all three agree. Floats are written in Python's
shortest round-trip decimal form, so saving and loading preserves every
number bit for bit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

from .dataset import CovariateSpec, expand_patient
from .nmr import NmrPosterior
from .prediction import (
    DEFAULT_CUTOFFS,
    PredictionAnchor,
    PredictionResult,
    predict,
)
from .riskmodel import RiskModel, RiskScore, score

ARTIFACT_VERSION = 1
_KNOWN_VERSIONS = (1,)


def _schema_columns(spec: CovariateSpec) -> set[str]:
    """Design-column names one patient-facing covariate can produce."""
    if spec.kind == "categorical":
        return {f"{spec.name}={lv}" for lv in spec.indicator_levels()}
    return {spec.name}


@dataclass(frozen=True)
class ModelArtifact:
    """Validated bundle of both model stages plus the prediction anchor.

    schema holds the patient-facing covariate specs; expanding a patient
    through it must yield every column the risk model uses. cutoffs are
    the low/high baseline-risk group bounds surfaced to clients.
    """

    stage1: RiskModel
    stage2: NmrPosterior
    anchor: PredictionAnchor
    schema: tuple[CovariateSpec, ...]
    cutoffs: tuple[float, float] = DEFAULT_CUTOFFS
    version: int = ARTIFACT_VERSION

    def __post_init__(self):
        object.__setattr__(self, "schema", tuple(self.schema))
        object.__setattr__(self, "cutoffs", (float(self.cutoffs[0]), float(self.cutoffs[1])))
        if self.version not in _KNOWN_VERSIONS:
            raise ValueError(f"unrecognized artifact version {self.version!r}")
        if not 0.0 < self.cutoffs[0] < self.cutoffs[1] < 1.0:
            raise ValueError("cutoffs must satisfy 0 < low < high < 1")
        fp = self.stage1.fingerprint()
        if self.stage2.stage1_fingerprint != fp:
            raise ValueError(
                "stage-2 posterior is not linked to this stage-1 model "
                "(fingerprint mismatch or missing)"
            )
        if self.anchor.stage1_fingerprint != fp:
            raise ValueError(
                "anchor is not linked to this stage-1 model "
                "(fingerprint mismatch or missing)"
            )
        producible: set[str] = set()
        for spec in self.schema:
            producible |= _schema_columns(spec)
        missing = [c for c in self.stage1.coefficients if c not in producible]
        if missing:
            raise ValueError(
                f"schema cannot produce model columns: {', '.join(sorted(missing))}"
            )

    def expand(self, values: Mapping[str, object]) -> dict[str, float]:
        return expand_patient(values, self.schema)

    def risk_for(self, values: Mapping[str, object]) -> RiskScore:
        """Baseline risk of one raw patient covariate map."""
        return score(self.expand(values), self.stage1)

    def predict_patient(
        self, values: Mapping[str, object], fixed_anchor: bool = False
    ) -> tuple[RiskScore, PredictionResult]:
        """Score a raw patient and predict under every treatment.

        This is the single code path behind both the CLI and the HTTP
        service, so their numbers agree exactly.
        """
        rs = self.risk_for(values)
        result = predict(
            rs.logit_risk,
            self.stage2,
            self.anchor,
            fixed_anchor=fixed_anchor,
            cutoffs=self.cutoffs,
        )
        return rs, result

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "stage1": self.stage1.to_dict(),
            "stage2": self.stage2.to_dict(),
            "anchor": self.anchor.to_dict(),
            "schema": [s.to_dict() for s in self.schema],
            "cutoffs": list(self.cutoffs),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelArtifact":
        version = d.get("version")
        if version not in _KNOWN_VERSIONS:
            raise ValueError(f"unrecognized artifact version {version!r}")
        return cls(
            stage1=RiskModel.from_dict(d["stage1"]),
            stage2=NmrPosterior.from_dict(d["stage2"]),
            anchor=PredictionAnchor.from_dict(d["anchor"]),
            schema=tuple(CovariateSpec.from_dict(s) for s in d["schema"]),
            cutoffs=tuple(d.get("cutoffs", DEFAULT_CUTOFFS)),
            version=version,
        )


def save_artifact(path: str, artifact: ModelArtifact):
    with open(path, "w") as fh:
        json.dump(artifact.to_dict(), fh)
        fh.write("\n")


def load_artifact(path: str) -> ModelArtifact:
    with open(path) as fh:
        return ModelArtifact.from_dict(json.load(fh))
