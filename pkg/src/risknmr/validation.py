"""Discrimination, calibration, and optimism-corrected validation.

The c-statistic is computed by rank counting (ties get half credit), which
matches the quadratic pairwise definition exactly while staying O(n log n).
Calibration slope is the coefficient of the linear predictor in a logistic
recalibration fit. Bootstrap validation refits the entire modelling
pipeline inside every resample and subtracts the average optimism from the
apparent performance.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np
from scipy.stats import rankdata

from ._optim import FitError, irls

if TYPE_CHECKING:  # pragma: no cover
    from .riskmodel import DesignMatrix, RiskModel


def c_statistic(scores, labels) -> float:
    """Probability that a random event outscores a random non-event.

    Tied scores count 1/2. Any strictly increasing transform of the scores
    leaves the value unchanged. Requires both outcome classes present.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError("scores and labels must be 1-D and aligned")
    n1 = int(np.sum(labels == 1))
    n0 = int(np.sum(labels == 0))
    if n1 + n0 != labels.size:
        raise ValueError("labels must be 0/1")
    if n1 == 0 or n0 == 0:
        raise ValueError("c-statistic needs both outcome classes")
    ranks = rankdata(scores, method="average")
    u = float(ranks[labels == 1].sum()) - n1 * (n1 + 1) / 2.0
    return u / (n1 * n0)


def _c_statistic_columns(score_matrix: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """c_statistic applied to every column of score_matrix at once."""
    n1 = int(np.sum(labels == 1))
    n0 = labels.size - n1
    ranks = rankdata(score_matrix, method="average", axis=0)
    u = ranks[labels == 1].sum(axis=0) - n1 * (n1 + 1) / 2.0
    return u / (n1 * n0)


def calibration_slope(linear_predictor, labels) -> float:
    """Slope of a logistic recalibration of labels on the linear predictor.

    1.0 means predictions spread exactly as the outcomes warrant; below 1
    indicates overfitting. Raises on a constant predictor (the slope is
    undefined) and propagates separation errors from the fit.
    """
    lp = np.asarray(linear_predictor, dtype=float)
    y = np.asarray(labels, dtype=float)
    if lp.ndim != 1 or lp.shape != y.shape:
        raise ValueError("linear predictor and labels must be 1-D and aligned")
    s = lp.std()
    if s == 0.0:
        raise FitError("calibration slope undefined for a constant linear predictor")
    m = lp.mean()
    x = np.column_stack([np.ones_like(lp), (lp - m) / s])
    beta, _ = irls(x, y, separation_bound=50.0)
    return float(beta[1] / s)


@dataclass(frozen=True)
class ValidationReport:
    """Apparent, optimism, and optimism-corrected performance.

    corrected = apparent - mean(per-resample optimism), exactly. With B = 0
    the optimism terms are zero. slope_pairs_used counts resamples that
    contributed to the slope optimism (a resample whose refitted model has a
    constant linear predictor cannot, and is skipped rather than redrawn).
    """

    c_apparent: float
    slope_apparent: float
    optimism_c: float
    optimism_slope: float
    c_corrected: float
    slope_corrected: float
    n_bootstrap: int
    seed: int
    n_redraws: int = 0
    slope_pairs_used: int = 0

    def to_dict(self) -> dict:
        return {
            "c_apparent": self.c_apparent,
            "slope_apparent": self.slope_apparent,
            "optimism_c": self.optimism_c,
            "optimism_slope": self.optimism_slope,
            "c_corrected": self.c_corrected,
            "slope_corrected": self.slope_corrected,
            "n_bootstrap": self.n_bootstrap,
            "seed": self.seed,
            "n_redraws": self.n_redraws,
            "slope_pairs_used": self.slope_pairs_used,
        }

    @classmethod
    def from_dict(cls, d) -> "ValidationReport":
        return cls(**{k: d[k] for k in (
            "c_apparent", "slope_apparent", "optimism_c", "optimism_slope",
            "c_corrected", "slope_corrected", "n_bootstrap", "seed",
            "n_redraws", "slope_pairs_used",
        )})


def _model_performance(model: "RiskModel", design: "DesignMatrix"):
    lp = model.linear_predictor(design.x, design.columns)
    c = c_statistic(lp, design.y)
    try:
        slope = calibration_slope(lp, design.y)
    except FitError:
        slope = np.nan
    return c, slope


def bootstrap_validate(
    design: "DesignMatrix",
    fit_procedure: Callable[["DesignMatrix", int], "RiskModel"],
    n_bootstrap: int = 500,
    seed: int = 0,
    strata: np.ndarray | None = None,
    max_redraws: int = 3,
) -> ValidationReport:
    """Optimism-corrected validation of a full modelling pipeline.

    fit_procedure(design, seed) must rerun every data-driven choice (for
    example penalty selection) from scratch; it is called once on the full
    data for the apparent performance and once per bootstrap resample.
    Patients are resampled with replacement at the patient level; pass
    per-row stratum labels to resample within strata instead. Each resample
    b draws from its own RNG stream derived from (seed, b), so reports are
    reproducible bit for bit. A resample on which the pipeline fails is
    redrawn from the same stream, at most max_redraws times.
    """
    if n_bootstrap < 0:
        raise ValueError("n_bootstrap must be >= 0")
    n = design.x.shape[0]
    if strata is not None:
        strata = np.asarray(strata)
        if strata.shape != (n,):
            raise ValueError("strata must align with the design rows")
        groups = [np.flatnonzero(strata == g) for g in np.unique(strata)]

    apparent_model = fit_procedure(design, seed)
    c_app, slope_app = _model_performance(apparent_model, design)

    opt_c: list[float] = []
    opt_slope: list[float] = []
    n_redraws = 0
    for b in range(n_bootstrap):
        ss = np.random.SeedSequence([seed, b])
        idx_child, fit_child = ss.spawn(2)
        rng = np.random.default_rng(idx_child)
        fit_seed = int(fit_child.generate_state(1)[0])
        model_b = None
        for attempt in range(max_redraws + 1):
            if strata is None:
                idx = rng.integers(0, n, size=n)
            else:
                idx = np.concatenate([g[rng.integers(0, g.size, size=g.size)] for g in groups])
            boot = design.take(idx)
            try:
                model_b = fit_procedure(boot, fit_seed)
                break
            except (FitError, ValueError, np.linalg.LinAlgError):
                if attempt == max_redraws:
                    raise FitError(
                        f"bootstrap resample {b} failed {max_redraws + 1} times"
                    )
                n_redraws += 1
        c_in, slope_in = _model_performance(model_b, boot)
        c_out, slope_out = _model_performance(model_b, design)
        opt_c.append(c_in - c_out)
        if np.isfinite(slope_in) and np.isfinite(slope_out):
            opt_slope.append(slope_in - slope_out)

    mean_opt_c = float(np.mean(opt_c)) if opt_c else 0.0
    mean_opt_slope = float(np.mean(opt_slope)) if opt_slope else 0.0
    return ValidationReport(
        c_apparent=c_app,
        slope_apparent=float(slope_app),
        optimism_c=mean_opt_c,
        optimism_slope=mean_opt_slope,
        c_corrected=c_app - mean_opt_c,
        slope_corrected=float(slope_app) - mean_opt_slope,
        n_bootstrap=n_bootstrap,
        seed=seed,
        n_redraws=n_redraws,
        slope_pairs_used=len(opt_slope),
    )
