"""Command-line driver for the full two-stage pipeline.

Typical flow: preprocess the raw IPD, check the sample-size criteria, fit
and validate the prognostic model, fit the network meta-regression, anchor
it on external reference-arm data, bundle everything into one artifact,
then predict, plot curves, or serve over HTTP. Every command that makes a
random choice takes --seed, and reruns with the same seed write
byte-identical output files.

Exit status: 0 success, 1 runtime failure (message on stderr), 2 usage.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .artifact import ModelArtifact, load_artifact, save_artifact
from .dataset import (
    CovariateSpec,
    IpdFormatError,
    SchemaError,
    load_ipd,
    load_schema_document,
    preprocess,
    save_schema_document,
    write_ipd,
)
from .nmr import NmrSpec, build_likelihood, sample
from .prediction import emit_curves, estimate_anchor, PredictionAnchor
from .riskmodel import (
    RiskModel,
    build_design,
    fit_lasso_cv,
    fit_mle,
    fit_penalized_mle,
    score_studies,
)
from .samplesize import min_sample_size
from .service import serve
from .synth import (
    bias_demo,
    default_bias_demo_spec,
    generate,
    load_generator_spec,
)
from .validation import bootstrap_validate

FIT_METHODS = ("lasso", "prespecified", "mle", "penalized")


def _write_json(path: str | None, payload: dict):
    text = json.dumps(payload, indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _load_model(path: str) -> RiskModel:
    with open(path) as fh:
        return RiskModel.from_dict(json.load(fh))


def _load_studies(args):
    schema, registry = load_schema_document(args.schema)
    studies = load_ipd(args.ipd, schema, registry)
    return schema, registry, studies


def _surviving_source_schema(schema, report):
    """Source-level covariate specs still feeding at least one output column."""
    source_drops = {
        d.name for d in report.drops if d.reason in ("missingness", "correlation")
    }
    out_columns = {s.name for s in report.output_schema}
    keep = []
    for s in schema:
        if s.name in source_drops:
            continue
        if s.kind == "categorical":
            cols = {f"{s.name}={lv}" for lv in s.indicator_levels()}
        else:
            cols = {s.name}
        if cols & out_columns:
            keep.append(s)
    return keep


def _cmd_preprocess(args) -> int:
    schema, registry, studies = _load_studies(args)
    cleaned, report = preprocess(
        studies,
        schema,
        missing_threshold=args.missing_threshold,
        corr_threshold=args.corr_threshold,
        per_study_missingness=args.per_study_missingness,
    )
    write_ipd(args.out, cleaned, report.output_schema)
    save_schema_document(args.out_schema, report.output_schema, registry)
    if args.patient_schema:
        save_schema_document(
            args.patient_schema, _surviving_source_schema(schema, report), registry
        )
    _write_json(args.report, report.to_dict())
    return 0


def _cmd_samplesize(args) -> int:
    report = min_sample_size(
        args.df,
        args.prevalence,
        r2_cs_adj=args.r2_cs,
        shrinkage=args.shrinkage,
        delta=args.margin,
        n_available=args.n_available,
        events=args.events,
        r2_nagelkerke=args.r2_nagelkerke,
    )
    _write_json(args.out, report.to_dict())
    return 0


def _fit_procedure_for(method: str, args, columns=None):
    if method == "lasso":
        return lambda design, seed: fit_lasso_cv(
            design, folds=args.folds, rule=args.rule, seed=seed
        )
    if method == "mle":
        return lambda design, seed: fit_mle(design)
    if method == "penalized":
        return lambda design, seed: fit_penalized_mle(design)
    if method == "prespecified":
        if not columns:
            raise ValueError("--covariates is required for the prespecified method")

        def fit(design, seed):
            from .riskmodel import DesignMatrix

            idx = [design.columns.index(c) for c in columns]
            sub = DesignMatrix.from_arrays(
                design.x[:, idx], design.y, [design.columns[i] for i in idx]
            )
            return fit_mle(sub)

        return fit
    raise ValueError(f"unknown method {method!r}")


def _cmd_fit_risk(args) -> int:
    _, _, studies = _load_studies(args)
    design = build_design(studies)
    columns = args.covariates.split(",") if args.covariates else None
    if columns:
        missing = [c for c in columns if c not in design.columns]
        if missing:
            raise ValueError(f"covariates not in data: {', '.join(missing)}")
    fit = _fit_procedure_for(args.method, args, columns)
    model = fit(design, args.seed)
    _write_json(args.out, model.to_dict())
    return 0


def _cmd_validate(args) -> int:
    _, _, studies = _load_studies(args)
    design = build_design(studies)
    model = _load_model(args.model)
    method = {
        "lasso": "lasso",
        "mle": "mle",
        "penalized_mle": "penalized",
        "prespecified": "prespecified",
    }.get(model.method)
    if method is None:
        raise ValueError(f"cannot re-run fitting for method {model.method!r}")
    columns = list(model.coefficients) if method == "prespecified" else None
    fit = _fit_procedure_for(method, args, columns)
    report = bootstrap_validate(
        design, fit, n_bootstrap=args.bootstrap, seed=args.seed
    )
    payload = model.to_dict()
    payload["validation"] = report.to_dict()
    _write_json(args.out, payload)
    sys.stderr.write(
        f"c-statistic {report.c_apparent:.4f} apparent, "
        f"{report.c_corrected:.4f} optimism-corrected; "
        f"calibration slope {report.slope_corrected:.4f} corrected\n"
    )
    return 0


def _cmd_fit_nmr(args) -> int:
    _, registry, studies = _load_studies(args)
    model = _load_model(args.model)
    scored = score_studies(studies, model)
    spec = NmrSpec(
        treatment_effects=args.treatment_effects,
        modifier_effects=args.modifier_effects,
        risk_slope=args.risk_slope,
        chains=args.chains,
        iterations=args.iters,
        burn_in=args.burnin,
        thin=args.thin,
        seed=args.seed,
    )
    likelihood = build_likelihood(scored, spec, registry, model.fingerprint())
    posterior = sample(likelihood)
    _write_json(args.out, posterior.to_dict())
    for row in posterior.summary():
        sys.stderr.write(
            f"{row['parameter']:>24s}  mean {row['mean']:+.4f}  "
            f"sd {row['sd']:.4f}  rhat {row['rhat']:.3f}  ess {row['ess']:.0f}\n"
        )
    return 0


def _cmd_anchor(args) -> int:
    from .dataset import StudyDataset

    _, registry, studies = _load_studies(args)
    model = _load_model(args.model)
    records = [
        r
        for s in studies
        for r in s.records
        if r.treatment == registry.reference
    ]
    if not records:
        raise ValueError(f"no {registry.reference!r} records to anchor on")
    scored = score_studies(
        [StudyDataset("pooled", tuple(records), registry.reference)], model
    )[0]
    anchor = estimate_anchor(
        [r.logit_risk for r in scored.records],
        [r.outcome for r in scored.records],
        source=args.ipd,
        stage1_fingerprint=model.fingerprint(),
    )
    _write_json(args.out, anchor.to_dict())
    return 0


def _cmd_bundle(args) -> int:
    from .nmr import NmrPosterior

    model = _load_model(args.model)
    with open(args.posterior) as fh:
        posterior = NmrPosterior.from_dict(json.load(fh))
    with open(args.anchor) as fh:
        anchor = PredictionAnchor.from_dict(json.load(fh))
    schema, _ = load_schema_document(args.schema)
    low, high = (float(v) for v in args.cutoffs.split(","))
    artifact = ModelArtifact(
        stage1=model,
        stage2=posterior,
        anchor=anchor,
        schema=tuple(schema),
        cutoffs=(low, high),
    )
    save_artifact(args.out, artifact)
    return 0


def _cmd_predict(args) -> int:
    artifact = load_artifact(args.artifact)
    with open(args.patient) as fh:
        body = json.load(fh)
    covariates = body.get("covariates", body) if isinstance(body, dict) else body
    if not isinstance(covariates, dict):
        raise ValueError("patient file must hold a JSON object of covariates")
    _, result = artifact.predict_patient(covariates, fixed_anchor=args.fixed_anchor)
    _write_json(args.out, result.to_dict())
    return 0


def _cmd_curves(args) -> int:
    artifact = load_artifact(args.artifact)
    if args.grid < 1:
        raise ValueError("--grid must be >= 1")
    grid = np.linspace(args.min_risk, args.max_risk, args.grid)
    population = None
    if args.ipd and args.schema:
        schema, registry = load_schema_document(args.schema)
        studies = load_ipd(args.ipd, schema, registry)
        scored = score_studies(studies, artifact.stage1)
        population = [r.logit_risk for s in scored for r in s.records]
    table = emit_curves(
        artifact.stage2,
        artifact.anchor,
        grid,
        population_logit_risks=population,
        fixed_anchor=args.fixed_anchor,
        cutoffs=artifact.cutoffs,
    )
    table.to_csv(args.out)
    if table.observed_low is not None:
        sys.stderr.write(
            f"observed risk range {table.observed_low:.4f}..{table.observed_high:.4f}\n"
        )
    return 0


def _cmd_simulate(args) -> int:
    spec = load_generator_spec(args.spec)
    studies = generate(spec, replicate=args.replicate)
    out_schema = [CovariateSpec(c.name, kind="continuous") for c in spec.covariates]
    write_ipd(args.out, studies, out_schema)
    if args.out_schema:
        save_schema_document(args.out_schema, out_schema, spec.registry)
    return 0


def _cmd_bias_demo(args) -> int:
    if args.spec:
        spec = load_generator_spec(args.spec)
    else:
        spec = default_bias_demo_spec(seed=args.seed)
    mcmc = NmrSpec(chains=args.chains, iterations=args.iters, burn_in=args.burnin, thin=args.thin)
    result = bias_demo(spec, args.mode, replicates=args.replicates, mcmc=mcmc)
    _write_json(args.out, result.to_dict())
    return 0


def _cmd_serve(args) -> int:
    serve(args.artifact, port=args.port, host=args.host, static_dir=args.static)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="risknmr",
        description="Two-stage risk-modelling and network meta-regression pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_args(p):
        p.add_argument("--ipd", required=True, help="IPD CSV file")
        p.add_argument("--schema", required=True, help="schema JSON document")

    p = sub.add_parser("preprocess", help="clean raw IPD for modelling")
    add_data_args(p)
    p.add_argument("--out", required=True, help="cleaned IPD CSV")
    p.add_argument("--out-schema", required=True, help="schema of the cleaned columns")
    p.add_argument("--patient-schema", help="schema for raw patient input, post-drop")
    p.add_argument("--report", help="preprocessing report JSON (default: stdout)")
    p.add_argument("--missing-threshold", type=float, default=0.5)
    p.add_argument("--corr-threshold", type=float, default=0.7)
    p.add_argument("--per-study-missingness", action="store_true")
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("samplesize", help="minimum sample size for the risk model")
    p.add_argument("--df", type=int, required=True, help="candidate parameter count")
    p.add_argument("--prevalence", type=float, required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--r2-cs", type=float, help="anticipated Cox-Snell R^2")
    group.add_argument("--r2-nagelkerke", type=float, help="anticipated Nagelkerke R^2")
    p.add_argument("--shrinkage", type=float, default=0.9)
    p.add_argument("--margin", type=float, default=0.05)
    p.add_argument("--n-available", type=int)
    p.add_argument("--events", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_samplesize)

    p = sub.add_parser("fit-risk", help="fit the stage-1 prognostic model")
    add_data_args(p)
    p.add_argument("--method", choices=FIT_METHODS, default="lasso")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--rule", choices=("one_se", "max"), default="one_se")
    p.add_argument("--covariates", help="comma-separated list for --method prespecified")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="fitted model JSON")
    p.set_defaults(func=_cmd_fit_risk)

    p = sub.add_parser("validate", help="optimism-corrected bootstrap validation")
    add_data_args(p)
    p.add_argument("--model", required=True, help="fitted model JSON")
    p.add_argument("--bootstrap", type=int, default=500)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--rule", choices=("one_se", "max"), default="one_se")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model JSON with validation attached")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("fit-nmr", help="fit the network meta-regression")
    add_data_args(p)
    p.add_argument("--model", required=True, help="stage-1 model JSON")
    p.add_argument("--treatment-effects", choices=("common", "random"), default="common")
    p.add_argument(
        "--modifier-effects", choices=("common", "random", "none"), default="common"
    )
    p.add_argument(
        "--risk-slope",
        choices=("common", "exchangeable", "independent", "none"),
        default="common",
    )
    p.add_argument("--chains", type=int, default=2)
    p.add_argument("--iters", type=int, default=10000)
    p.add_argument("--burnin", type=int, default=1000)
    p.add_argument("--thin", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="posterior JSON")
    p.set_defaults(func=_cmd_fit_nmr)

    p = sub.add_parser("anchor", help="estimate the reference-arm anchor")
    add_data_args(p)
    p.add_argument("--model", required=True, help="stage-1 model JSON")
    p.add_argument("--out", required=True, help="anchor JSON")
    p.set_defaults(func=_cmd_anchor)

    p = sub.add_parser("bundle", help="bundle both stages and the anchor")
    p.add_argument("--model", required=True)
    p.add_argument("--posterior", required=True)
    p.add_argument("--anchor", required=True)
    p.add_argument("--schema", required=True, help="patient-facing schema JSON")
    p.add_argument("--cutoffs", default="0.30,0.50", help="low,high risk-group bounds")
    p.add_argument("--out", required=True, help="artifact JSON")
    p.set_defaults(func=_cmd_bundle)

    p = sub.add_parser("predict", help="per-treatment predictions for one patient")
    p.add_argument("--artifact", required=True)
    p.add_argument("--patient", required=True, help="JSON file of covariate values")
    p.add_argument("--fixed-anchor", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("curves", help="risk-response curves over a baseline-risk grid")
    p.add_argument("--artifact", required=True)
    p.add_argument("--grid", type=int, default=50, help="number of grid points")
    p.add_argument("--min-risk", type=float, default=0.05)
    p.add_argument("--max-risk", type=float, default=0.95)
    p.add_argument("--ipd", help="optional IPD for observed-range markers")
    p.add_argument("--schema", help="schema for --ipd")
    p.add_argument("--fixed-anchor", action="store_true")
    p.add_argument("--out", required=True, help="CSV output")
    p.set_defaults(func=_cmd_curves)

    p = sub.add_parser("simulate", help="draw a synthetic dataset with known truth")
    p.add_argument("--spec", required=True, help="generator spec JSON")
    p.add_argument("--replicate", type=int, help="replicate stream index")
    p.add_argument("--out", required=True, help="IPD CSV output")
    p.add_argument("--out-schema", help="schema JSON for the generated columns")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("bias-demo", help="stage-1 training-rule bias comparison")
    p.add_argument("--mode", choices=("placebo_only", "blinded_full"), required=True)
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--spec", help="generator spec JSON (default: built-in scenario)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=2)
    p.add_argument("--iters", type=int, default=3000)
    p.add_argument("--burnin", type=int, default=500)
    p.add_argument("--thin", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_bias_demo)

    p = sub.add_parser("serve", help="serve predictions over HTTP")
    p.add_argument("--artifact", required=True)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument(
        "--static",
        default=None,
        help="directory of web UI assets to serve at the root path",
    )
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        ValueError,
        KeyError,
        OSError,
        SchemaError,
        IpdFormatError,
        RuntimeError,
    ) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
