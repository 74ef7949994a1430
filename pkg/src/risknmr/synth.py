"""Synthetic IPD generator with known truth, plus the stage-1 training
bias demonstration.

Data are drawn from the same two-stage law the estimators assume: a
logistic risk score over independently drawn covariates, exact per-study
centering of that score, and arm-level logistic outcome models built from
true study intercepts, treatment contrasts and risk-by-treatment
interaction slopes. Because the truth is explicit, recovery tests can
check posterior means against it directly, and the bias demo can show what
happens when the prognostic model is trained on reference arms only
instead of on all arms blinded to treatment.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .dataset import PatientRecord, StudyDataset, TreatmentRegistry
from .nmr import NmrSpec, build_likelihood, sample
from .riskmodel import RiskModel, build_design, fit_mle, score_studies


@dataclass(frozen=True)
class CovariateDist:
    """Sampling law for one generated covariate.

    dist "normal" uses mean/sd; dist "bernoulli" uses p and yields 0/1
    floats.
    """

    name: str
    dist: str
    mean: float = 0.0
    sd: float = 1.0
    p: float = 0.5

    def __post_init__(self):
        if self.dist not in ("normal", "bernoulli"):
            raise ValueError(f"covariate {self.name}: unknown distribution {self.dist!r}")
        if self.dist == "normal" and self.sd <= 0:
            raise ValueError(f"covariate {self.name}: sd must be positive")
        if self.dist == "bernoulli" and not 0.0 < self.p < 1.0:
            raise ValueError(f"covariate {self.name}: p must lie in (0, 1)")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.dist == "normal":
            return rng.normal(self.mean, self.sd, size=n)
        return rng.binomial(1, self.p, size=n).astype(float)

    def to_dict(self) -> dict:
        d = {"name": self.name, "dist": self.dist}
        if self.dist == "normal":
            d.update(mean=self.mean, sd=self.sd)
        else:
            d.update(p=self.p)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "CovariateDist":
        return cls(
            name=d["name"],
            dist=d["dist"],
            mean=d.get("mean", 0.0),
            sd=d.get("sd", 1.0),
            p=d.get("p", 0.5),
        )


@dataclass(frozen=True)
class ArmSpec:
    treatment: str
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"arm {self.treatment}: size must be >= 1")

    def to_dict(self) -> dict:
        return {"treatment": self.treatment, "n": self.n}


@dataclass(frozen=True)
class StudySpec:
    """One trial: its arms, its intercept on the logit scale, its baseline arm."""

    study_id: str
    arms: tuple[ArmSpec, ...]
    intercept: float
    baseline_treatment: str | None = None

    def __post_init__(self):
        object.__setattr__(
            self,
            "arms",
            tuple(a if isinstance(a, ArmSpec) else ArmSpec(**a) for a in self.arms),
        )
        labels = [a.treatment for a in self.arms]
        if len(set(labels)) != len(labels):
            raise ValueError(f"study {self.study_id}: duplicate arm treatments")
        if not self.arms:
            raise ValueError(f"study {self.study_id}: no arms")
        if self.baseline_treatment is not None and self.baseline_treatment not in labels:
            raise ValueError(
                f"study {self.study_id}: baseline {self.baseline_treatment!r} is not an arm"
            )

    def to_dict(self) -> dict:
        return {
            "study_id": self.study_id,
            "arms": [a.to_dict() for a in self.arms],
            "intercept": self.intercept,
            "baseline_treatment": self.baseline_treatment,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "StudySpec":
        return cls(
            study_id=d["study_id"],
            arms=tuple(ArmSpec(**a) for a in d["arms"]),
            intercept=d["intercept"],
            baseline_treatment=d.get("baseline_treatment"),
        )


@dataclass(frozen=True)
class GeneratorSpec:
    """Full description of a synthetic multi-study dataset.

    true_delta / true_gamma map non-reference treatments to their log odds
    ratio and interaction slope against the reference; the reference itself
    is pinned at zero for both and may not be listed with another value.
    """

    studies: tuple[StudySpec, ...]
    covariates: tuple[CovariateDist, ...]
    reference: str
    true_risk_intercept: float
    true_risk_coefficients: Mapping[str, float]
    true_gamma0: float
    true_delta: Mapping[str, float] = field(default_factory=dict)
    true_gamma: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "studies", tuple(self.studies))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "true_risk_coefficients", dict(self.true_risk_coefficients))
        object.__setattr__(self, "true_delta", dict(self.true_delta))
        object.__setattr__(self, "true_gamma", dict(self.true_gamma))
        if not self.studies:
            raise ValueError("no studies in generator spec")
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise ValueError("duplicate covariate names")
        unknown = set(self.true_risk_coefficients) - set(names)
        if unknown:
            raise ValueError(f"risk coefficients for undeclared covariates: {sorted(unknown)}")
        arm_treatments = {a.treatment for s in self.studies for a in s.arms}
        if self.reference not in arm_treatments:
            raise ValueError(f"reference {self.reference!r} appears in no arm")
        for table, label in ((self.true_delta, "true_delta"), (self.true_gamma, "true_gamma")):
            if table.get(self.reference, 0.0) != 0.0:
                raise ValueError(f"{label}: reference treatment must have value 0")
            extra = set(table) - arm_treatments
            if extra:
                raise ValueError(f"{label}: treatments in no arm: {sorted(extra)}")

    @property
    def registry(self) -> TreatmentRegistry:
        seen: list[str] = []
        for s in self.studies:
            for a in s.arms:
                if a.treatment not in seen:
                    seen.append(a.treatment)
        return TreatmentRegistry(tuple(seen), self.reference)

    @property
    def n_total(self) -> int:
        return sum(a.n for s in self.studies for a in s.arms)

    def delta(self, treatment: str) -> float:
        return float(self.true_delta.get(treatment, 0.0))

    def gamma(self, treatment: str) -> float:
        return float(self.true_gamma.get(treatment, 0.0))

    def to_dict(self) -> dict:
        return {
            "studies": [s.to_dict() for s in self.studies],
            "covariates": [c.to_dict() for c in self.covariates],
            "reference": self.reference,
            "true_risk_intercept": self.true_risk_intercept,
            "true_risk_coefficients": dict(self.true_risk_coefficients),
            "true_gamma0": self.true_gamma0,
            "true_delta": dict(self.true_delta),
            "true_gamma": dict(self.true_gamma),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GeneratorSpec":
        return cls(
            studies=tuple(StudySpec.from_dict(s) for s in d["studies"]),
            covariates=tuple(CovariateDist.from_dict(c) for c in d["covariates"]),
            reference=d["reference"],
            true_risk_intercept=d["true_risk_intercept"],
            true_risk_coefficients=d["true_risk_coefficients"],
            true_gamma0=d["true_gamma0"],
            true_delta=d.get("true_delta", {}),
            true_gamma=d.get("true_gamma", {}),
            seed=d.get("seed", 0),
        )


def save_generator_spec(path: str, spec: GeneratorSpec):
    with open(path, "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
        fh.write("\n")


def load_generator_spec(path: str) -> GeneratorSpec:
    with open(path) as fh:
        return GeneratorSpec.from_dict(json.load(fh))


def oracle_risk_model(spec: GeneratorSpec) -> RiskModel:
    """The true prognostic model as a RiskModel, for exact-truth scoring."""
    names = [c.name for c in spec.covariates]
    return RiskModel(
        method="prespecified",
        intercept=float(spec.true_risk_intercept),
        coefficients={n: float(spec.true_risk_coefficients.get(n, 0.0)) for n in names},
        column_means={n: 0.0 for n in names},
        column_sds={n: 1.0 for n in names},
    )


def _study_baseline(study: StudySpec, reference: str) -> str:
    if study.baseline_treatment is not None:
        return study.baseline_treatment
    labels = [a.treatment for a in study.arms]
    return reference if reference in labels else labels[0]


def generate(spec: GeneratorSpec, replicate: int | None = None) -> list[StudyDataset]:
    """Draw one synthetic dataset; same spec and replicate give identical data.

    The true logit risk of every patient is computed through the oracle
    prognostic model, so scoring the generated records with
    oracle_risk_model(spec) reproduces it exactly. Outcomes are Bernoulli
    in the arm-level logistic law with study-exact centering.
    """
    entropy = [spec.seed] if replicate is None else [spec.seed, replicate]
    rng = np.random.default_rng(np.random.SeedSequence(entropy))
    oracle = oracle_risk_model(spec)
    names = [c.name for c in spec.covariates]

    studies: list[StudyDataset] = []
    for study in spec.studies:
        baseline = _study_baseline(study, spec.reference)
        arm_rows: list[tuple[str, np.ndarray]] = []
        for arm in study.arms:
            x = np.column_stack([c.draw(rng, arm.n) for c in spec.covariates])
            arm_rows.append((arm.treatment, x))

        records: list[PatientRecord] = []
        logit_risks: list[np.ndarray] = []
        for treatment, x in arm_rows:
            lr = oracle.linear_predictor(x, names)
            logit_risks.append(lr)
            for i in range(x.shape[0]):
                records.append(
                    PatientRecord(
                        study_id=study.study_id,
                        treatment=treatment,
                        outcome=0,
                        covariates=dict(zip(names, x[i])),
                    )
                )
        center = float(np.concatenate(logit_risks).mean())

        final: list[PatientRecord] = []
        pos = 0
        for (treatment, x), lr in zip(arm_rows, logit_risks):
            c = lr - center
            eta = (
                study.intercept
                + (spec.delta(treatment) - spec.delta(baseline))
                + (spec.true_gamma0 + spec.gamma(treatment) - spec.gamma(baseline)) * c
            )
            y = rng.binomial(1, expit(eta))
            for i in range(x.shape[0]):
                rec = records[pos + i]
                final.append(
                    PatientRecord(rec.study_id, rec.treatment, int(y[i]), rec.covariates)
                )
            pos += x.shape[0]
        studies.append(StudyDataset(study.study_id, tuple(final), baseline))
    return studies


@dataclass(frozen=True)
class BiasDemoResult:
    """Per-replicate interaction-slope posterior means for one training mode."""

    mode: str
    gamma_hats: tuple[dict, ...]
    treatments: tuple[str, ...]

    @property
    def n_replicates(self) -> int:
        return len(self.gamma_hats)

    def mean_gamma(self, treatment: str) -> float:
        return float(np.mean([g[treatment] for g in self.gamma_hats]))

    @property
    def abs_mean_gamma(self) -> float:
        """|mean over replicates|, averaged over treatments."""
        if not self.gamma_hats:
            return float("nan")
        return float(np.mean([abs(self.mean_gamma(t)) for t in self.treatments]))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "treatments": list(self.treatments),
            "gamma_hats": [dict(g) for g in self.gamma_hats],
            "mean_gamma": {t: self.mean_gamma(t) for t in self.treatments}
            if self.gamma_hats
            else {},
            "abs_mean_gamma": self.abs_mean_gamma if self.gamma_hats else None,
        }


BIAS_DEMO_MODES = ("placebo_only", "blinded_full")


def bias_demo(
    spec: GeneratorSpec,
    mode: str,
    replicates: int = 20,
    mcmc: NmrSpec | None = None,
) -> BiasDemoResult:
    """Run the two-stage pipeline repeatedly under one stage-1 training rule.

    mode "placebo_only" trains the prognostic model on reference-arm
    records alone; "blinded_full" trains it on every record with treatment
    ignored. Either way the fitted score is then applied to all arms and
    the network meta-regression is sampled, and the posterior mean of each
    treatment's interaction slope is recorded. Replicate r regenerates
    data from (spec.seed, r), so calls that differ only in mode see
    identical datasets.
    """
    if mode not in BIAS_DEMO_MODES:
        raise ValueError(f"mode must be one of {BIAS_DEMO_MODES}")
    if replicates < 0:
        raise ValueError("replicates must be >= 0")
    for t, value in list(spec.true_delta.items()) + list(spec.true_gamma.items()):
        if value != 0.0:
            raise ValueError(
                "bias demo needs zero-treatment-effect truth "
                f"(treatment {t!r} has a nonzero effect)"
            )
    if mcmc is None:
        mcmc = NmrSpec(chains=2, iterations=3000, burn_in=500, thin=5)
    registry = spec.registry
    names = [c.name for c in spec.covariates]
    active = tuple(t for t in registry.treatments if t != registry.reference)

    hats: list[dict] = []
    for rep in range(replicates):
        studies = generate(spec, replicate=rep)
        if mode == "placebo_only":
            training = [
                StudyDataset(
                    s.study_id,
                    tuple(r for r in s.records if r.treatment == registry.reference),
                    registry.reference,
                )
                for s in studies
                if any(r.treatment == registry.reference for r in s.records)
            ]
        else:
            training = list(studies)
        design = build_design(training, columns=names)
        stage1 = fit_mle(design)
        scored = score_studies(studies, stage1)
        mcmc_seed = int(
            np.random.SeedSequence([spec.seed, rep]).generate_state(3, dtype=np.uint64)[2]
        )
        rep_spec = NmrSpec(
            treatment_effects=mcmc.treatment_effects,
            modifier_effects=mcmc.modifier_effects,
            risk_slope=mcmc.risk_slope,
            prior_variance=mcmc.prior_variance,
            heterogeneity_scale=mcmc.heterogeneity_scale,
            chains=mcmc.chains,
            iterations=mcmc.iterations,
            burn_in=mcmc.burn_in,
            thin=mcmc.thin,
            seed=mcmc_seed,
        )
        model = build_likelihood(scored, rep_spec, registry, stage1.fingerprint())
        posterior = sample(model)
        hats.append({t: posterior.mean(f"gamma[{t}]") for t in active})
    return BiasDemoResult(mode=mode, gamma_hats=tuple(hats), treatments=active)


def default_recovery_spec(seed: int = 0) -> GeneratorSpec:
    """Three-study network used by the posterior-recovery check.

    Truth: gamma0 = 1.26, deltas (-0.89, -0.71, -1.22) and interaction
    slopes (0.25, 0.23, -0.26) for the three active treatments, 20,000
    patients overall, a risk score spread wide enough that the interaction
    slopes are well identified.
    """
    covs = (
        CovariateDist("x1", "normal", mean=0.0, sd=1.0),
        CovariateDist("x2", "normal", mean=0.0, sd=1.0),
        CovariateDist("x3", "normal", mean=0.0, sd=1.0),
        CovariateDist("x4", "bernoulli", p=0.4),
    )
    beta = {"x1": 0.9, "x2": 0.7, "x3": 0.6, "x4": 0.8}
    studies = (
        StudySpec("S1", (ArmSpec("P", 3000), ArmSpec("NAT", 3000)), intercept=-0.35),
        StudySpec(
            "S2",
            (ArmSpec("P", 2500), ArmSpec("DF", 2500), ArmSpec("GA", 2500)),
            intercept=-0.20,
        ),
        StudySpec(
            "S3",
            (ArmSpec("P", 2000), ArmSpec("NAT", 1500), ArmSpec("DF", 1500), ArmSpec("GA", 1500)),
            intercept=-0.50,
        ),
    )
    return GeneratorSpec(
        studies=studies,
        covariates=covs,
        reference="P",
        true_risk_intercept=-0.4,
        true_risk_coefficients=beta,
        true_gamma0=1.26,
        true_delta={"DF": -0.89, "GA": -0.71, "NAT": -1.22},
        true_gamma={"DF": 0.25, "GA": 0.23, "NAT": -0.26},
        seed=seed,
    )


def default_bias_demo_spec(seed: int = 0, n_per_arm: int = 1000, noise_covariates: int = 50) -> GeneratorSpec:
    """Two two-arm studies with zero treatment effects, for the bias demo.

    A handful of real prognostic signals plus many pure-noise covariates
    give the stage-1 fit room to overfit when trained on reference arms
    alone, which is exactly the failure mode the demo measures.
    """
    signal = (
        CovariateDist("s1", "normal"),
        CovariateDist("s2", "normal"),
        CovariateDist("s3", "normal"),
        CovariateDist("s4", "bernoulli", p=0.35),
    )
    noise = tuple(CovariateDist(f"z{i}", "normal") for i in range(1, noise_covariates + 1))
    beta = {"s1": 0.8, "s2": 0.6, "s3": 0.5, "s4": 0.7}
    studies = (
        StudySpec("B1", (ArmSpec("P", n_per_arm), ArmSpec("A", n_per_arm)), intercept=-0.25),
        StudySpec("B2", (ArmSpec("P", n_per_arm), ArmSpec("A", n_per_arm)), intercept=-0.45),
    )
    return GeneratorSpec(
        studies=studies,
        covariates=signal + noise,
        reference="P",
        true_risk_intercept=-0.3,
        true_risk_coefficients=beta,
        true_gamma0=1.0,
        true_delta={"A": 0.0},
        true_gamma={"A": 0.0},
        seed=seed,
    )
