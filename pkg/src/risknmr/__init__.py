"""Two-stage individualized treatment-effect modelling.

Stage 1 fits a multivariable logistic prognostic model on individual
patient data (LASSO, ridge-penalized or plain maximum likelihood), checks
it against minimum-sample-size criteria and validates it with
optimism-corrected bootstrapping. Stage 2 feeds the centered logit risk
score into a Bayesian network meta-regression whose treatment effects may
vary linearly with baseline risk. Together with an anchor estimated on
external reference-arm data, the two stages yield per-patient outcome
probabilities under every treatment in the network.
"""

from ._optim import ConvergenceError, FitError, SeparationError
from .artifact import ModelArtifact, load_artifact, save_artifact
from .dataset import (
    CovariateSpec,
    DropRecord,
    IpdFormatError,
    PatientRecord,
    PreprocessReport,
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
from .nmr import (
    NmrModel,
    NmrPosterior,
    NmrSpec,
    build_likelihood,
    diagnostics,
    sample,
)
from .prediction import (
    CurveTable,
    NntResult,
    PredictionAnchor,
    PredictionResult,
    TreatmentPrediction,
    emit_curves,
    estimate_anchor,
    nnt,
    predict,
    risk_group_summary,
)
from .riskmodel import (
    DesignMatrix,
    RiskModel,
    RiskScore,
    build_design,
    cv_select_lambda,
    fit_lasso,
    fit_lasso_cv,
    fit_mle,
    fit_penalized_mle,
    score,
    score_studies,
)
from .samplesize import (
    SampleSizeReport,
    epv,
    max_cox_snell_r2,
    min_sample_size,
    nagelkerke_to_cox_snell,
)
from .synth import (
    ArmSpec,
    BiasDemoResult,
    CovariateDist,
    GeneratorSpec,
    StudySpec,
    bias_demo,
    generate,
    oracle_risk_model,
)
from .validation import (
    ValidationReport,
    bootstrap_validate,
    c_statistic,
    calibration_slope,
)

__version__ = "0.1.0"

__all__ = [
    "ArmSpec",
    "BiasDemoResult",
    "ConvergenceError",
    "CovariateDist",
    "CovariateSpec",
    "CurveTable",
    "DesignMatrix",
    "DropRecord",
    "FitError",
    "GeneratorSpec",
    "IpdFormatError",
    "ModelArtifact",
    "NmrModel",
    "NmrPosterior",
    "NmrSpec",
    "NntResult",
    "PatientRecord",
    "PredictionAnchor",
    "PredictionResult",
    "PreprocessReport",
    "RiskModel",
    "RiskScore",
    "SampleSizeReport",
    "SchemaError",
    "SeparationError",
    "StudyDataset",
    "StudySpec",
    "TreatmentPrediction",
    "TreatmentRegistry",
    "ValidationReport",
    "bias_demo",
    "bootstrap_validate",
    "build_design",
    "build_likelihood",
    "c_statistic",
    "calibration_slope",
    "cv_select_lambda",
    "diagnostics",
    "emit_curves",
    "epv",
    "estimate_anchor",
    "expand_patient",
    "fit_lasso",
    "fit_lasso_cv",
    "fit_mle",
    "fit_penalized_mle",
    "generate",
    "load_artifact",
    "load_ipd",
    "load_schema_document",
    "max_cox_snell_r2",
    "min_sample_size",
    "nagelkerke_to_cox_snell",
    "nnt",
    "oracle_risk_model",
    "predict",
    "preprocess",
    "risk_group_summary",
    "sample",
    "save_artifact",
    "save_schema_document",
    "score",
    "score_studies",
    "write_ipd",
]
