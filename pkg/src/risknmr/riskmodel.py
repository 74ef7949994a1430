"""Baseline-risk logistic models: MLE, LASSO, and ridge-penalized MLE.

All fits standardize covariate columns internally (mean 0, sd 1) and report
coefficients back on the original scale, so fitted linear predictors are
invariant to affine rescaling of inputs. Penalties always act on the
standardized scale: the LASSO objective is (1/n) * NLL + lambda * sum|b_k|,
the ridge objective is loglik - (lambda/2) * sum((beta_k * sd_k)^2), with
the intercept unpenalized in both.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from ._optim import (
    ConvergenceError,
    FitError,
    SeparationError,
    bernoulli_loglik,
    irls,
    lasso_path_std,
    observed_information,
)
from .dataset import StudyDataset, PatientRecord
from .validation import ValidationReport, _c_statistic_columns

DEFAULT_RIDGE_GRID = (0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)


@dataclass(frozen=True)
class DesignMatrix:
    """Numeric training data: n x p covariates plus the 0/1 outcome.

    Columns must be complete, finite, and non-constant (preprocessing
    guarantees all three). column_means / column_sds are the population
    statistics used for internal standardization.
    """

    x: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...]
    column_means: np.ndarray
    column_sds: np.ndarray

    @classmethod
    def from_arrays(cls, x, y, columns: Sequence[str] | None = None) -> "DesignMatrix":
        x = np.asarray(x, dtype=float)
        if x.ndim != 2:
            raise ValueError("x must be 2-D")
        y = np.asarray(y, dtype=float)
        if y.shape != (x.shape[0],):
            raise ValueError("y must align with the rows of x")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("outcomes must be 0/1")
        if not np.all(np.isfinite(x)):
            raise ValueError("design contains non-finite values")
        if columns is None:
            columns = tuple(f"x{j}" for j in range(x.shape[1]))
        columns = tuple(columns)
        if len(columns) != x.shape[1]:
            raise ValueError("column names must match the design width")
        means = x.mean(axis=0) if x.shape[1] else np.zeros(0)
        sds = x.std(axis=0) if x.shape[1] else np.zeros(0)
        bad = [columns[j] for j in range(x.shape[1]) if sds[j] == 0.0]
        if bad:
            raise ValueError(f"constant columns cannot be penalized or fitted: {bad}")
        return cls(x=x, y=y, columns=columns, column_means=means, column_sds=sds)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def standardized(self) -> np.ndarray:
        if self.p == 0:
            return self.x
        return (self.x - self.column_means) / self.column_sds

    def take(self, indices) -> "DesignMatrix":
        """Row-resampled copy with freshly computed standardization constants."""
        return DesignMatrix.from_arrays(self.x[indices], self.y[indices], self.columns)


def build_design(
    studies: Sequence[StudyDataset], columns: Sequence[str] | None = None
) -> DesignMatrix:
    """Stack cleaned study records into a design matrix.

    Covariates must already be numeric and complete; run preprocessing
    first. Column order defaults to the covariate order of the first record.
    """
    records = [r for s in studies for r in s.records]
    if not records:
        raise ValueError("no records")
    if columns is None:
        columns = tuple(records[0].covariates.keys())
    rows = np.empty((len(records), len(columns)))
    y = np.empty(len(records))
    for i, r in enumerate(records):
        y[i] = r.outcome
        for j, name in enumerate(columns):
            v = r.covariates.get(name)
            if v is None or isinstance(v, str):
                raise ValueError(
                    f"covariate {name} is not numeric/complete; preprocess the data first"
                )
            rows[i, j] = v
    return DesignMatrix.from_arrays(rows, y, columns)


@dataclass(frozen=True)
class CvCurve:
    """Cross-validated out-of-fold AUC along the penalty grid."""

    lambdas: tuple[float, ...]
    mean_auc: tuple[float, ...]
    se_auc: tuple[float, ...]
    folds: int

    def to_dict(self) -> dict:
        return {
            "lambdas": list(self.lambdas),
            "mean_auc": list(self.mean_auc),
            "se_auc": list(self.se_auc),
            "folds": self.folds,
        }

    @classmethod
    def from_dict(cls, d) -> "CvCurve":
        return cls(
            tuple(d["lambdas"]), tuple(d["mean_auc"]), tuple(d["se_auc"]), d["folds"]
        )


@dataclass(frozen=True)
class RiskScore:
    """A patient's predicted event probability and its logit."""

    risk: float
    logit_risk: float


@dataclass(frozen=True)
class RiskModel:
    """A fitted logistic risk model, serializable and self-describing.

    Coefficients are on the original covariate scale; standardization
    constants are retained so the fit is exactly reproducible. method is
    one of mle / lasso / penalized_mle; lambda_ and cv_curve / effective_df
    are present where the method defines them.
    """

    method: str
    intercept: float
    coefficients: Mapping[str, float]
    column_means: Mapping[str, float]
    column_sds: Mapping[str, float]
    lambda_: float | None = None
    cv_curve: CvCurve | None = None
    effective_df: float | None = None
    validation: ValidationReport | None = None

    def __post_init__(self):
        # plain Python floats everywhere: the fingerprint hashes value reprs,
        # so numpy scalars would not survive a JSON round trip
        object.__setattr__(self, "intercept", float(self.intercept))
        for field_name in ("coefficients", "column_means", "column_sds"):
            mapping = getattr(self, field_name)
            object.__setattr__(
                self, field_name, {k: float(v) for k, v in dict(mapping).items()}
            )
        if self.lambda_ is not None:
            object.__setattr__(self, "lambda_", float(self.lambda_))
        if self.effective_df is not None:
            object.__setattr__(self, "effective_df", float(self.effective_df))

    def linear_predictor(self, x: np.ndarray, columns: Sequence[str]) -> np.ndarray:
        """Intercept + coefficients applied to the named columns of x."""
        lp = np.full(x.shape[0], self.intercept)
        pos = {name: j for j, name in enumerate(columns)}
        for name, beta in self.coefficients.items():
            if name not in pos:
                raise ValueError(f"design lacks model covariate {name}")
            lp += beta * x[:, pos[name]]
        return lp

    def fingerprint(self) -> str:
        """Stable hash of the coefficient block, for artifact consistency checks."""
        block = {
            "method": self.method,
            "intercept": repr(self.intercept),
            "coefficients": {k: repr(v) for k, v in self.coefficients.items()},
            "column_means": {k: repr(v) for k, v in self.column_means.items()},
            "column_sds": {k: repr(v) for k, v in self.column_sds.items()},
        }
        payload = json.dumps(block, sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "intercept": self.intercept,
            "coefficients": dict(self.coefficients),
            "column_means": dict(self.column_means),
            "column_sds": dict(self.column_sds),
            "lambda": self.lambda_,
            "cv_curve": self.cv_curve.to_dict() if self.cv_curve else None,
            "effective_df": self.effective_df,
            "validation": self.validation.to_dict() if self.validation else None,
            "fingerprint": self.fingerprint(),
        }

    @classmethod
    def from_dict(cls, d) -> "RiskModel":
        model = cls(
            method=d["method"],
            intercept=d["intercept"],
            coefficients=d["coefficients"],
            column_means=d["column_means"],
            column_sds=d["column_sds"],
            lambda_=d.get("lambda"),
            cv_curve=CvCurve.from_dict(d["cv_curve"]) if d.get("cv_curve") else None,
            effective_df=d.get("effective_df"),
            validation=ValidationReport.from_dict(d["validation"]) if d.get("validation") else None,
        )
        want = d.get("fingerprint")
        if want is not None and model.fingerprint() != want:
            raise ValueError("risk model fingerprint mismatch: artifact was altered")
        return model


def score(patient: Mapping[str, float], model: RiskModel) -> RiskScore:
    """Score one patient given the model's (expanded, numeric) covariates."""
    lp = model.intercept
    for name, beta in model.coefficients.items():
        if name not in patient:
            raise ValueError(f"missing covariate: {name}")
        v = patient[name]
        if v is None or isinstance(v, str):
            raise ValueError(f"covariate {name}: expected a number")
        lp += beta * float(v)
    risk = float(expit(lp))
    tiny = np.finfo(float).tiny
    risk = min(max(risk, tiny), 1.0 - 1e-16)
    return RiskScore(risk=risk, logit_risk=float(lp))


def score_studies(studies: Sequence[StudyDataset], model: RiskModel) -> list[StudyDataset]:
    """Attach logit-risk scores to every record and each study's mean score."""
    out = []
    for study in studies:
        scored = tuple(
            replace(r, logit_risk=score(r.covariates, model).logit_risk)
            for r in study.records
        )
        center = float(np.mean([r.logit_risk for r in scored]))
        out.append(StudyDataset(study.study_id, scored, study.baseline_treatment, center))
    return out


def _destandardize(beta_std: np.ndarray, means: np.ndarray, sds: np.ndarray):
    """Map (intercept, slopes) from the standardized scale to the original."""
    a = beta_std[0]
    b = beta_std[1:]
    slopes = b / sds if b.size else b
    intercept = a - float(slopes @ means) if b.size else a
    return float(intercept), slopes


def _check_lp_consistency(design: DesignMatrix, beta_std, intercept, slopes):
    xs = design.standardized()
    lp_std = beta_std[0] + (xs @ beta_std[1:] if design.p else 0.0)
    lp_orig = intercept + (design.x @ slopes if design.p else 0.0)
    err = float(np.max(np.abs(lp_std - lp_orig), initial=0.0))
    if err > 1e-8:
        raise FitError(f"linear-predictor reconstruction error {err:.2e}")


def _validate_for_fit(design: DesignMatrix, need_rows_over_cols: bool = True):
    events = design.y.sum()
    if events == 0 or events == design.n:
        raise ValueError("fitting needs both outcome classes present")
    if need_rows_over_cols and design.n <= design.p:
        raise ValueError("fitting needs more rows than columns")


def fit_mle(design: DesignMatrix) -> RiskModel:
    """Unpenalized maximum likelihood via IRLS with step-halving.

    Declares separation (and refuses the fit) if any standardized
    coefficient passes 50 in magnitude.
    """
    _validate_for_fit(design)
    xs = np.column_stack([np.ones(design.n), design.standardized()])
    try:
        beta_std, _ = irls(xs, design.y, separation_bound=50.0)
    except SeparationError:
        raise
    intercept, slopes = _destandardize(beta_std, design.column_means, design.column_sds)
    _check_lp_consistency(design, beta_std, intercept, slopes)
    return RiskModel(
        method="mle",
        intercept=intercept,
        coefficients=dict(zip(design.columns, slopes)),
        column_means=dict(zip(design.columns, design.column_means)),
        column_sds=dict(zip(design.columns, design.column_sds)),
    )


def default_lambda_grid(design: DesignMatrix, size: int = 100, ratio: float = 1e-4) -> np.ndarray:
    """Decreasing grid from lambda_max (null model) down to lambda_max * ratio."""
    lam_max = lambda_max(design)
    return lam_max * np.logspace(0.0, math.log10(ratio), size)


def lambda_max(design: DesignMatrix) -> float:
    """Smallest penalty at which the LASSO solution is the null model."""
    if design.p == 0:
        raise ValueError("lambda_max needs at least one covariate")
    xs = design.standardized()
    ybar = design.y.mean()
    g = xs.T @ (design.y - ybar) / design.n
    return float(np.max(np.abs(g)))


@dataclass(frozen=True)
class LassoPath:
    """Solutions along a decreasing penalty grid, on both scales."""

    lambdas: np.ndarray
    intercepts: np.ndarray
    coefficients: np.ndarray
    std_intercepts: np.ndarray
    std_coefficients: np.ndarray
    columns: tuple[str, ...]

    def model_at(self, index: int, design: DesignMatrix) -> RiskModel:
        return RiskModel(
            method="lasso",
            intercept=float(self.intercepts[index]),
            coefficients=dict(zip(self.columns, self.coefficients[index])),
            column_means=dict(zip(self.columns, design.column_means)),
            column_sds=dict(zip(self.columns, design.column_sds)),
            lambda_=float(self.lambdas[index]),
        )


def fit_lasso(design: DesignMatrix, lambda_grid: np.ndarray | None = None) -> LassoPath:
    """L1-penalized logistic path with exact KKT convergence at every point."""
    _validate_for_fit(design, need_rows_over_cols=False)
    if design.p == 0:
        raise ValueError("the LASSO needs at least one covariate")
    if lambda_grid is None:
        lambda_grid = default_lambda_grid(design)
    lambda_grid = np.asarray(lambda_grid, dtype=float)
    if np.any(lambda_grid < 0):
        raise ValueError("penalties must be non-negative")
    order = np.argsort(-lambda_grid, kind="stable")
    sorted_grid = lambda_grid[order]
    xs = design.standardized()
    b0s, betas = lasso_path_std(xs, design.y, sorted_grid)
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    b0s, betas = b0s[inv], betas[inv]

    intercepts = np.empty_like(b0s)
    coefs = np.empty_like(betas)
    for i in range(b0s.size):
        intercepts[i], coefs[i] = _destandardize(
            np.concatenate([[b0s[i]], betas[i]]), design.column_means, design.column_sds
        )
    return LassoPath(
        lambdas=lambda_grid,
        intercepts=intercepts,
        coefficients=coefs,
        std_intercepts=b0s,
        std_coefficients=betas,
        columns=design.columns,
    )


def _stratified_folds(y: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    assign = np.empty(y.size, dtype=int)
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        assign[idx] = np.arange(idx.size) % folds
    return assign


def cv_select_lambda(
    design: DesignMatrix,
    folds: int = 10,
    rule: str = "one_se",
    seed: int = 0,
    lambda_grid: np.ndarray | None = None,
) -> tuple[float, CvCurve]:
    """Pick the LASSO penalty by outcome-stratified cross-validated AUC.

    rule "max" takes the grid point with the best mean out-of-fold AUC;
    "one_se" (the default) takes the largest penalty whose mean AUC is
    within one standard error of that maximum, preferring sparser models.
    Fold assignment that leaves a fold single-class is reshuffled with a
    fresh derived seed, at most 10 times.
    """
    if rule not in ("max", "one_se"):
        raise ValueError("rule must be 'max' or 'one_se'")
    if folds < 2:
        raise ValueError("need at least 2 folds")
    _validate_for_fit(design, need_rows_over_cols=False)
    if lambda_grid is None:
        lambda_grid = default_lambda_grid(design)
    lambda_grid = np.asarray(lambda_grid, dtype=float)
    desc = np.sort(lambda_grid)[::-1]

    assign = None
    for attempt in range(10):
        rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))
        cand = _stratified_folds(design.y, folds, rng)
        good = True
        for f in range(folds):
            test = cand == f
            for part in (test, ~test):
                ys = design.y[part]
                if ys.size == 0 or ys.min() == ys.max():
                    good = False
        if good:
            assign = cand
            break
    if assign is None:
        raise ValueError("could not build folds with both classes throughout (10 attempts)")

    aucs = np.empty((folds, desc.size))
    for f in range(folds):
        test = assign == f
        train = DesignMatrix.from_arrays(
            design.x[~test], design.y[~test], design.columns
        )
        path = fit_lasso(train, desc)
        etas = path.intercepts[None, :] + design.x[test] @ path.coefficients.T
        aucs[f] = _c_statistic_columns(etas, design.y[test])

    mean = aucs.mean(axis=0)
    se = aucs.std(axis=0, ddof=1) / math.sqrt(folds)
    best = int(np.argmax(mean))
    if rule == "max":
        chosen = best
    else:
        threshold = mean[best] - se[best]
        chosen = int(np.flatnonzero(mean >= threshold)[0])
    curve = CvCurve(
        lambdas=tuple(float(v) for v in desc),
        mean_auc=tuple(float(v) for v in mean),
        se_auc=tuple(float(v) for v in se),
        folds=folds,
    )
    return float(desc[chosen]), curve


def fit_lasso_cv(
    design: DesignMatrix,
    folds: int = 10,
    rule: str = "one_se",
    seed: int = 0,
    lambda_grid: np.ndarray | None = None,
) -> RiskModel:
    """The full LASSO pipeline: select the penalty by CV, refit, return the model."""
    if lambda_grid is None:
        lambda_grid = default_lambda_grid(design)
    lam, curve = cv_select_lambda(design, folds, rule, seed, lambda_grid)
    desc = np.sort(np.asarray(lambda_grid, dtype=float))[::-1]
    path = fit_lasso(design, desc)
    index = int(np.flatnonzero(desc == lam)[0])
    model = path.model_at(index, design)
    return replace(model, cv_curve=curve)


def fit_penalized_mle(
    design: DesignMatrix, penalty_grid: Sequence[float] = DEFAULT_RIDGE_GRID
) -> RiskModel:
    """Ridge-penalized MLE with the penalty chosen by a modified AIC.

    For each grid value the objective loglik - (lambda/2) * sum(b_std^2) is
    maximized; the modified AIC is the likelihood-ratio chi-squared against
    the null model minus twice the effective degrees of freedom
    trace(I (I + P)^-1) - 1, where I is the unpenalized information at the
    penalized optimum and the subtracted 1 removes the intercept's slot.
    The grid value with the largest modified AIC wins.
    """
    _validate_for_fit(design)
    penalty_grid = tuple(float(v) for v in penalty_grid)
    if not penalty_grid or any(v < 0 for v in penalty_grid):
        raise ValueError("penalty grid must be non-empty and non-negative")
    xs = np.column_stack([np.ones(design.n), design.standardized()])
    ybar = design.y.mean()
    ll_null = design.n * (ybar * math.log(ybar) + (1 - ybar) * math.log(1 - ybar))

    best = None
    for lam in penalty_grid:
        pen = np.concatenate([[0.0], np.full(design.p, lam)])
        beta_std, _ = irls(xs, design.y, penalty=pen,
                           separation_bound=50.0 if lam == 0.0 else None)
        ll = bernoulli_loglik(xs @ beta_std, design.y)
        info = observed_information(xs, beta_std)
        edf = float(np.trace(np.linalg.solve(info + np.diag(pen), info))) - 1.0
        maic = 2.0 * (ll - ll_null) - 2.0 * edf
        if best is None or maic > best[0]:
            best = (maic, lam, beta_std, edf)

    _, lam, beta_std, edf = best
    intercept, slopes = _destandardize(beta_std, design.column_means, design.column_sds)
    _check_lp_consistency(design, beta_std, intercept, slopes)
    return RiskModel(
        method="penalized_mle",
        intercept=intercept,
        coefficients=dict(zip(design.columns, slopes)),
        column_means=dict(zip(design.columns, design.column_means)),
        column_sds=dict(zip(design.columns, design.column_sds)),
        lambda_=lam,
        effective_df=edf,
    )


def ridge_effective_df(design: DesignMatrix, lam: float) -> float:
    """Effective degrees of freedom of the ridge fit at penalty lam."""
    xs = np.column_stack([np.ones(design.n), design.standardized()])
    pen = np.concatenate([[0.0], np.full(design.p, lam)])
    beta_std, _ = irls(xs, design.y, penalty=pen)
    info = observed_information(xs, beta_std)
    return float(np.trace(np.linalg.solve(info + np.diag(pen), info))) - 1.0
