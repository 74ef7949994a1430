"""Personalized absolute predictions from the fitted two-stage model.

The network meta-regression identifies relative effects; absolute
predictions additionally need an anchor: the event log-odds of an average-
risk untreated patient, estimated once from external reference-arm data by
regressing outcomes on centered logit risk (the intercept is the anchor,
its slope is a free nuisance). A patient with logit risk l then gets, for
every treatment t and every retained posterior draw,

    logit p_t = a + delta_t + (gamma0 + gamma_t) * (l - mean logit risk),

where a is the anchor, jittered by its standard error across draws unless
fixed_anchor is set. Summaries are posterior means with central 95%
credible intervals; odds ratios are taken against the registry reference
draw by draw.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit, logit

from ._optim import irls, observed_information
from .nmr import NmrPosterior

DEFAULT_CUTOFFS = (0.30, 0.50)


@dataclass(frozen=True)
class PredictionAnchor:
    """Log-odds of the outcome for an average-risk reference-arm patient.

    mean_logit_risk is the centering constant: the mean logit risk of the
    population the anchor was estimated on. alpha_se propagates the
    anchor's estimation uncertainty into predictions.
    """

    alpha: float
    alpha_se: float
    mean_logit_risk: float
    n: int
    source: str = ""
    stage1_fingerprint: str | None = None

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "alpha_se": self.alpha_se,
            "mean_logit_risk": self.mean_logit_risk,
            "n": self.n,
            "source": self.source,
            "stage1_fingerprint": self.stage1_fingerprint,
        }

    @classmethod
    def from_dict(cls, d) -> "PredictionAnchor":
        return cls(
            alpha=d["alpha"],
            alpha_se=d["alpha_se"],
            mean_logit_risk=d["mean_logit_risk"],
            n=d["n"],
            source=d.get("source", ""),
            stage1_fingerprint=d.get("stage1_fingerprint"),
        )


def estimate_anchor(
    logit_risks,
    outcomes,
    source: str = "",
    stage1_fingerprint: str | None = None,
) -> PredictionAnchor:
    """Fit the anchoring logistic regression on external reference-arm data.

    Regresses the 0/1 outcomes on logit risk centered at its own mean; the
    intercept estimate and standard error become the anchor. When all
    scores are equal the model degenerates to the intercept alone, i.e. the
    anchor is the logit of the event fraction.
    """
    lr = np.asarray(logit_risks, dtype=float)
    y = np.asarray(outcomes, dtype=float)
    if lr.ndim != 1 or lr.shape != y.shape or lr.size == 0:
        raise ValueError("need aligned, non-empty scores and outcomes")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("outcomes must be 0/1")
    if y.min() == y.max():
        raise ValueError("anchor estimation needs both outcome classes")
    mean_lr = float(lr.mean())
    centered = lr - mean_lr
    if np.ptp(centered) == 0.0:
        ybar = y.mean()
        alpha = float(logit(ybar))
        se = math.sqrt(1.0 / (y.size * ybar * (1.0 - ybar)))
        return PredictionAnchor(alpha, se, mean_lr, y.size, source, stage1_fingerprint)
    x = np.column_stack([np.ones_like(centered), centered])
    beta, _ = irls(x, y, separation_bound=50.0)
    info = observed_information(x, beta)
    cov = np.linalg.inv(info)
    return PredictionAnchor(
        alpha=float(beta[0]),
        alpha_se=float(math.sqrt(cov[0, 0])),
        mean_logit_risk=mean_lr,
        n=int(y.size),
        source=source,
        stage1_fingerprint=stage1_fingerprint,
    )


@dataclass(frozen=True)
class TreatmentPrediction:
    """Posterior summary of one treatment's absolute and relative effect."""

    treatment: str
    probability: float
    cr_low: float
    cr_high: float
    or_vs_reference: float
    or_low: float
    or_high: float

    def to_dict(self) -> dict:
        return {
            "treatment": self.treatment,
            "probability": self.probability,
            "cr_low": self.cr_low,
            "cr_high": self.cr_high,
            "or_vs_reference": self.or_vs_reference,
            "or_low": self.or_low,
            "or_high": self.or_high,
        }


@dataclass(frozen=True)
class PredictionResult:
    """Per-treatment outcome probabilities for one patient."""

    patient_logit_risk: float
    patient_risk: float
    risk_group: str
    treatments: tuple[TreatmentPrediction, ...]

    def for_treatment(self, name: str) -> TreatmentPrediction:
        for t in self.treatments:
            if t.treatment == name:
                return t
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "patient_logit_risk": self.patient_logit_risk,
            "patient_risk": self.patient_risk,
            "risk_group": self.risk_group,
            "treatments": [t.to_dict() for t in self.treatments],
        }


def risk_group_label(risk: float, cutoffs: tuple[float, float] = DEFAULT_CUTOFFS) -> str:
    low, high = cutoffs
    if not 0.0 < low < high < 1.0:
        raise ValueError("cutoffs must satisfy 0 < low < high < 1")
    if risk < low:
        return "low"
    if risk > high:
        return "high"
    return "mid"


def _posterior_blocks(posterior: NmrPosterior):
    """Per-treatment delta and gamma draw columns; reference columns are 0."""
    n = posterior.n_retained
    zeros = np.zeros(n)
    names = set(posterior.parameter_names)
    if posterior.spec.risk_slope == "independent":
        raise ValueError(
            "predictions need a pooled risk slope; refit with risk_slope "
            "'common' or 'exchangeable'"
        )
    gamma0 = posterior.column("gamma0") if "gamma0" in names else zeros
    deltas, gammas = {}, {}
    for t in posterior.treatments:
        if t == posterior.reference:
            deltas[t] = zeros
            gammas[t] = zeros
            continue
        deltas[t] = posterior.column(f"delta[{t}]")
        gammas[t] = (
            posterior.column(f"gamma[{t}]") if f"gamma[{t}]" in names else zeros
        )
    return gamma0, deltas, gammas


def predict(
    patient_logit_risk: float,
    posterior: NmrPosterior,
    anchor: PredictionAnchor,
    fixed_anchor: bool = False,
    cutoffs: tuple[float, float] = DEFAULT_CUTOFFS,
    seed: int = 0,
) -> PredictionResult:
    """Absolute outcome probabilities under every treatment for one patient.

    Anchor uncertainty enters as normal draws alpha + alpha_se * z, one z
    per retained posterior draw (shared across treatments, so odds ratios
    are unaffected); fixed_anchor disables the jitter. The z stream is
    derived from seed, making results reproducible end to end.
    """
    if (
        anchor.stage1_fingerprint is not None
        and posterior.stage1_fingerprint is not None
        and anchor.stage1_fingerprint != posterior.stage1_fingerprint
    ):
        raise ValueError("anchor and posterior come from different stage-1 models")
    if not math.isfinite(patient_logit_risk):
        raise ValueError("patient logit risk must be finite")

    gamma0, deltas, gammas = _posterior_blocks(posterior)
    x = patient_logit_risk - anchor.mean_logit_risk
    n = posterior.n_retained
    if fixed_anchor or anchor.alpha_se == 0.0:
        a = np.full(n, anchor.alpha)
    else:
        rng = np.random.default_rng(np.random.SeedSequence([seed]))
        a = anchor.alpha + anchor.alpha_se * rng.standard_normal(n)

    out = []
    for t in posterior.treatments:
        eta = a + deltas[t] + (gamma0 + gammas[t]) * x
        probs = expit(eta)
        lo, hi = np.quantile(probs, [0.025, 0.975])
        log_or = deltas[t] + gammas[t] * x
        ors = np.exp(log_or)
        olo, ohi = np.quantile(ors, [0.025, 0.975])
        out.append(
            TreatmentPrediction(
                treatment=t,
                probability=float(probs.mean()),
                cr_low=float(lo),
                cr_high=float(hi),
                or_vs_reference=float(ors.mean()),
                or_low=float(olo),
                or_high=float(ohi),
            )
        )
    risk = float(expit(patient_logit_risk))
    return PredictionResult(
        patient_logit_risk=float(patient_logit_risk),
        patient_risk=risk,
        risk_group=risk_group_label(risk, cutoffs),
        treatments=tuple(out),
    )


@dataclass(frozen=True)
class NntResult:
    """Number needed to treat from an absolute risk difference.

    direction is "benefit" for a positive risk difference (fewer events),
    "harm" for a negative one, and "undefined" at zero (count is None).
    """

    count: int | None
    direction: str

    def to_dict(self) -> dict:
        return {"count": self.count, "direction": self.direction}


def nnt(absolute_risk_difference: float) -> NntResult:
    """Ceiling of the reciprocal absolute risk difference."""
    ard = float(absolute_risk_difference)
    if not -1.0 < ard < 1.0:
        raise ValueError("absolute risk difference must lie in (-1, 1)")
    if ard == 0.0:
        return NntResult(None, "undefined")
    return NntResult(math.ceil(1.0 / abs(ard)), "benefit" if ard > 0 else "harm")


@dataclass(frozen=True)
class GroupRow:
    group: str
    treatment: str
    n: int
    mean_probability: float
    mean_or: float

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "treatment": self.treatment,
            "n": self.n,
            "mean_probability": self.mean_probability,
            "mean_or": self.mean_or,
        }


def risk_group_summary(
    predictions: Sequence[PredictionResult],
    cutoffs: tuple[float, float] = DEFAULT_CUTOFFS,
) -> list[GroupRow]:
    """Average predictions over everyone, the low-risk and the high-risk group.

    Groups are baseline risk < low cutoff and > high cutoff; a group with
    no members simply produces no rows.
    """
    if not predictions:
        raise ValueError("no predictions to summarize")
    low, high = cutoffs
    if not 0.0 < low < high < 1.0:
        raise ValueError("cutoffs must satisfy 0 < low < high < 1")
    groups = {
        "all": list(predictions),
        "low": [p for p in predictions if p.patient_risk < low],
        "high": [p for p in predictions if p.patient_risk > high],
    }
    treatments = [t.treatment for t in predictions[0].treatments]
    rows: list[GroupRow] = []
    for name, members in groups.items():
        if not members:
            continue
        for t in treatments:
            probs = [m.for_treatment(t).probability for m in members]
            ors = [m.for_treatment(t).or_vs_reference for m in members]
            rows.append(
                GroupRow(
                    group=name,
                    treatment=t,
                    n=len(members),
                    mean_probability=float(np.mean(probs)),
                    mean_or=float(np.mean(ors)),
                )
            )
    return rows


@dataclass(frozen=True)
class CurveTable:
    """Predictions on a grid of baseline risks, for risk-response plots."""

    points: tuple[PredictionResult, ...]
    grid: tuple[float, ...]
    observed_low: float | None = None
    observed_high: float | None = None

    def rows(self) -> list[dict]:
        out = []
        for risk, pred in zip(self.grid, self.points):
            for t in pred.treatments:
                out.append({
                    "baseline_risk": risk,
                    "treatment": t.treatment,
                    "probability": t.probability,
                    "cr_low": t.cr_low,
                    "cr_high": t.cr_high,
                    "or_vs_reference": t.or_vs_reference,
                    "or_low": t.or_low,
                    "or_high": t.or_high,
                })
        return out

    def to_csv(self, path: str):
        rows = self.rows()
        fields = list(rows[0].keys())
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in rows:
                writer.writerow({
                    k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()
                })


def emit_curves(
    posterior: NmrPosterior,
    anchor: PredictionAnchor,
    risk_grid: Sequence[float],
    population_logit_risks: Sequence[float] | None = None,
    fixed_anchor: bool = False,
    cutoffs: tuple[float, float] = DEFAULT_CUTOFFS,
    seed: int = 0,
) -> CurveTable:
    """Evaluate predict() along a grid of baseline risks.

    Grid values are probabilities in (0, 1). The optional population scores
    only set the observed-range markers. A one-point grid reproduces
    predict() for that point exactly, draw handling included.
    """
    grid = tuple(float(r) for r in risk_grid)
    if not grid:
        raise ValueError("empty risk grid")
    if any(not 0.0 < r < 1.0 for r in grid):
        raise ValueError("grid risks must lie strictly inside (0, 1)")
    points = tuple(
        predict(float(logit(r)), posterior, anchor,
                fixed_anchor=fixed_anchor, cutoffs=cutoffs, seed=seed)
        for r in grid
    )
    obs_low = obs_high = None
    if population_logit_risks is not None and len(population_logit_risks):
        lr = np.asarray(population_logit_risks, dtype=float)
        obs_low = float(expit(lr.min()))
        obs_high = float(expit(lr.max()))
    return CurveTable(points=points, grid=grid, observed_low=obs_low, observed_high=obs_high)
