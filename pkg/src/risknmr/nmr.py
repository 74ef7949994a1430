"""Bayesian logistic network meta-regression on individual patients.

Each patient i of study j on treatment t contributes a Bernoulli outcome
with

    logit p = u_j + d_jht + (g_0j + g_jht) * c_ij,

where h is study j's baseline arm (d_jhh = g_jhh = 0), and c_ij is the
patient's prognostic score (logit baseline risk) centered at the study
mean, so u_j is the baseline-arm log-odds at average study risk.
Consistency holds on both scales: basic parameters delta_t and gamma_t are
defined against the registry reference (delta_ref = gamma_ref = 0, never
sampled) and all contrasts are spanned as delta_t - delta_h. Treatment and
modifier effects can be common across studies or exchangeable around the
basic parameters; the risk slope g_0j can be common, exchangeable,
independent, or fixed to zero.

Priors: locations are N(0, 1000) - variance 1000, i.e. precision 0.001 -
and heterogeneity scales are half-normal(1). Sampling is component-wise
Gaussian random-walk Metropolis; proposal widths adapt toward a 0.44
acceptance rate during burn-in (Robbins-Monro on the log step) and are
frozen afterwards. Chains use independent RNG streams derived from
(seed, chain index), so runs are reproducible and chains could execute
concurrently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from .dataset import StudyDataset, TreatmentRegistry


@dataclass(frozen=True)
class NmrSpec:
    """Structure and sampler settings for the network meta-regression.

    treatment_effects: "common" or "random"; modifier_effects: "common",
    "random", or "none" (gamma fixed at 0); risk_slope: "common",
    "exchangeable", "independent", or "none" (g_0 fixed at 0).
    prior_variance is the variance (not sd) of the normal location priors.
    """

    treatment_effects: str = "common"
    modifier_effects: str = "common"
    risk_slope: str = "common"
    prior_variance: float = 1000.0
    heterogeneity_scale: float = 1.0
    chains: int = 2
    iterations: int = 10000
    burn_in: int = 1000
    thin: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.treatment_effects not in ("common", "random"):
            raise ValueError("treatment_effects must be 'common' or 'random'")
        if self.modifier_effects not in ("common", "random", "none"):
            raise ValueError("modifier_effects must be 'common', 'random' or 'none'")
        if self.risk_slope not in ("common", "exchangeable", "independent", "none"):
            raise ValueError("risk_slope must be 'common', 'exchangeable', 'independent' or 'none'")
        if self.prior_variance <= 0 or self.heterogeneity_scale <= 0:
            raise ValueError("prior scales must be positive")
        if self.chains < 2:
            raise ValueError("need at least 2 chains for convergence diagnostics")
        if self.iterations <= self.burn_in or self.burn_in < 0:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")

    @property
    def retained_per_chain(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        return {
            "treatment_effects": self.treatment_effects,
            "modifier_effects": self.modifier_effects,
            "risk_slope": self.risk_slope,
            "prior_variance": self.prior_variance,
            "heterogeneity_scale": self.heterogeneity_scale,
            "chains": self.chains,
            "iterations": self.iterations,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d) -> "NmrSpec":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True)
class CellData:
    """One study arm: outcomes, centered scores, and how the linear
    predictor's intercept (a) and slope (b) load on the parameter vector."""

    study_id: str
    treatment: str
    is_baseline: bool
    y: np.ndarray
    c: np.ndarray
    a_weights: tuple[tuple[int, float], ...]
    b_weights: tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class ParamDef:
    name: str
    kind: str  # location | scale
    init: float


@dataclass(frozen=True)
class NmrModel:
    """Likelihood description consumed by sample()."""

    parameters: tuple[ParamDef, ...]
    cells: tuple[CellData, ...]
    prior_terms: tuple[tuple, ...]
    treatments: tuple[str, ...]
    reference: str
    study_ids: tuple[str, ...]
    centering: Mapping[str, float]
    spec: NmrSpec
    stage1_fingerprint: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "centering", dict(self.centering))

    def index_of(self, name: str) -> int:
        for i, p in enumerate(self.parameters):
            if p.name == name:
                return i
        raise KeyError(name)

    @property
    def n_parameters(self) -> int:
        return len(self.parameters)


def _connected(studies: Sequence[StudyDataset]) -> bool:
    nodes = {t for s in studies for t in s.arms()}
    if not nodes:
        return False
    adj: dict[str, set] = {t: set() for t in nodes}
    for s in studies:
        arms = s.arms()
        for a in arms:
            for b in arms:
                if a != b:
                    adj[a].add(b)
    seen = set()
    stack = [next(iter(nodes))]
    while stack:
        t = stack.pop()
        if t in seen:
            continue
        seen.add(t)
        stack.extend(adj[t] - seen)
    return seen == nodes


def build_likelihood(
    studies: Sequence[StudyDataset],
    spec: NmrSpec,
    registry: TreatmentRegistry,
    stage1_fingerprint: str | None = None,
) -> NmrModel:
    """Assemble the per-arm likelihood and the prior structure.

    Every record must carry a logit-risk score; each study must have at
    least two arms, and the studies must form a connected treatment network.
    Study centers default to the mean logit risk when not already set.
    """
    if not studies:
        raise ValueError("no studies")
    for s in studies:
        if len(s.arms()) < 2:
            raise ValueError(f"study {s.study_id}: needs at least 2 arms")
        for r in s.records:
            if r.logit_risk is None:
                raise ValueError(f"study {s.study_id}: records are not scored")
            if not math.isfinite(r.logit_risk):
                raise ValueError(f"study {s.study_id}: non-finite logit risk")
        if s.baseline_treatment not in s.arms():
            raise ValueError(f"study {s.study_id}: baseline arm has no patients")
    if not _connected(studies):
        raise ValueError("the treatment network is disconnected")
    present = {t for s in studies for t in s.arms()}
    for t in present:
        registry.index(t)
    ref = registry.reference
    nonref = tuple(t for t in registry.treatments if t in present and t != ref)

    params: list[ParamDef] = []
    index: dict[str, int] = {}

    def add(name: str, kind: str, init: float) -> int:
        index[name] = len(params)
        params.append(ParamDef(name, kind, init))
        return index[name]

    for s in studies:
        add(f"u[{s.study_id}]", "location", 0.0)
    for t in nonref:
        add(f"delta[{t}]", "location", 0.0)
    if spec.treatment_effects == "random":
        for s in studies:
            for t in s.arms():
                if t != s.baseline_treatment:
                    add(f"d[{s.study_id}|{t}]", "location", 0.0)
        add("sigma_delta", "scale", 1.0)
    if spec.risk_slope in ("common", "exchangeable"):
        add("gamma0", "location", 0.0)
    if spec.risk_slope in ("exchangeable", "independent"):
        for s in studies:
            add(f"gamma0[{s.study_id}]", "location", 0.0)
    if spec.risk_slope == "exchangeable":
        add("sigma_gamma0", "scale", 1.0)
    if spec.modifier_effects != "none":
        for t in nonref:
            add(f"gamma[{t}]", "location", 0.0)
    if spec.modifier_effects == "random":
        for s in studies:
            for t in s.arms():
                if t != s.baseline_treatment:
                    add(f"g[{s.study_id}|{t}]", "location", 0.0)
        add("sigma_gamma", "scale", 1.0)

    # Likelihood cells with their parameter loadings.
    cells: list[CellData] = []
    centering: dict[str, float] = {}
    for s in studies:
        scores = np.array([r.logit_risk for r in s.records])
        center = s.center if s.center is not None else float(scores.mean())
        centering[s.study_id] = center
        h = s.baseline_treatment
        for t in s.arms():
            rows = [r for r in s.records if r.treatment == t]
            y = np.ascontiguousarray([float(r.outcome) for r in rows])
            c = np.ascontiguousarray([r.logit_risk - center for r in rows])
            a_w: list[tuple[int, float]] = [(index[f"u[{s.study_id}]"], 1.0)]
            b_w: list[tuple[int, float]] = []
            if t != h:
                if spec.treatment_effects == "common":
                    if t != ref:
                        a_w.append((index[f"delta[{t}]"], 1.0))
                    if h != ref:
                        a_w.append((index[f"delta[{h}]"], -1.0))
                else:
                    a_w.append((index[f"d[{s.study_id}|{t}]"], 1.0))
            if spec.risk_slope == "common":
                b_w.append((index["gamma0"], 1.0))
            elif spec.risk_slope in ("exchangeable", "independent"):
                b_w.append((index[f"gamma0[{s.study_id}]"], 1.0))
            if t != h and spec.modifier_effects == "common":
                if t != ref:
                    b_w.append((index[f"gamma[{t}]"], 1.0))
                if h != ref:
                    b_w.append((index[f"gamma[{h}]"], -1.0))
            elif t != h and spec.modifier_effects == "random":
                b_w.append((index[f"g[{s.study_id}|{t}]"], 1.0))
            cells.append(
                CellData(s.study_id, t, t == h, y, c, tuple(a_w), tuple(b_w))
            )

    # Priors. Location parameters that are not exchangeable locals get the
    # flat-ish normal; locals are tied to their basic contrasts.
    terms: list[tuple] = []

    def plain_normal(name: str):
        terms.append(("normal", index[name], spec.prior_variance))

    for s in studies:
        plain_normal(f"u[{s.study_id}]")
    for t in nonref:
        plain_normal(f"delta[{t}]")
    if spec.treatment_effects == "random":
        for s in studies:
            h = s.baseline_treatment
            for t in s.arms():
                if t == h:
                    continue
                plus = index[f"delta[{t}]"] if t != ref else -1
                minus = index[f"delta[{h}]"] if h != ref else -1
                terms.append(
                    ("hier", index[f"d[{s.study_id}|{t}]"], plus, minus, index["sigma_delta"])
                )
        terms.append(("halfnormal", index["sigma_delta"], spec.heterogeneity_scale))
    if spec.risk_slope in ("common", "exchangeable"):
        plain_normal("gamma0")
    if spec.risk_slope == "independent":
        for s in studies:
            plain_normal(f"gamma0[{s.study_id}]")
    if spec.risk_slope == "exchangeable":
        for s in studies:
            terms.append(
                ("hier", index[f"gamma0[{s.study_id}]"], index["gamma0"], -1, index["sigma_gamma0"])
            )
        terms.append(("halfnormal", index["sigma_gamma0"], spec.heterogeneity_scale))
    if spec.modifier_effects != "none":
        for t in nonref:
            plain_normal(f"gamma[{t}]")
    if spec.modifier_effects == "random":
        for s in studies:
            h = s.baseline_treatment
            for t in s.arms():
                if t == h:
                    continue
                plus = index[f"gamma[{t}]"] if t != ref else -1
                minus = index[f"gamma[{h}]"] if h != ref else -1
                terms.append(
                    ("hier", index[f"g[{s.study_id}|{t}]"], plus, minus, index["sigma_gamma"])
                )
        terms.append(("halfnormal", index["sigma_gamma"], spec.heterogeneity_scale))

    treatments = tuple(t for t in registry.treatments if t in present)
    return NmrModel(
        parameters=tuple(params),
        cells=tuple(cells),
        prior_terms=tuple(terms),
        treatments=treatments,
        reference=ref,
        study_ids=tuple(s.study_id for s in studies),
        centering=centering,
        spec=spec,
        stage1_fingerprint=stage1_fingerprint,
    )


@njit(cache=True, fastmath=True)
def _shift_loglik(eta, c, y, a_shift, b_shift, out_eta):
    """Bernoulli loglik at eta + a_shift + b_shift * c, written into out_eta."""
    s = 0.0
    for i in range(eta.shape[0]):
        e = eta[i] + a_shift + b_shift * c[i]
        out_eta[i] = e
        if e > 0.0:
            s += y[i] * e - e - np.log1p(np.exp(-e))
        else:
            s += y[i] * e - np.log1p(np.exp(e))
    return s


def _prior_value(term: tuple, theta: np.ndarray) -> float:
    kind = term[0]
    if kind == "normal":
        _, idx, var = term
        return -0.5 * theta[idx] ** 2 / var
    if kind == "halfnormal":
        _, idx, scale = term
        v = theta[idx]
        if v <= 0.0:
            return -np.inf
        return -0.5 * v**2 / scale**2
    # hier: local ~ N(theta[plus] - theta[minus], sigma^2)
    _, local, plus, minus, sig = term
    mean = (theta[plus] if plus >= 0 else 0.0) - (theta[minus] if minus >= 0 else 0.0)
    s = theta[sig]
    if s <= 0.0:
        return -np.inf
    return -0.5 * ((theta[local] - mean) / s) ** 2 - math.log(s)


@dataclass(frozen=True)
class NmrPosterior:
    """Retained draws with convergence diagnostics.

    draws_by_chain has shape (chains, retained per chain, parameters); the
    flattened view is available as .draws. Basic parameters of the registry
    reference are identically zero and never appear as columns.
    """

    parameter_names: tuple[str, ...]
    draws_by_chain: np.ndarray
    spec: NmrSpec
    treatments: tuple[str, ...]
    reference: str
    centering: Mapping[str, float]
    rhat: np.ndarray
    ess: np.ndarray
    acceptance: np.ndarray
    stage1_fingerprint: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "centering", dict(self.centering))
        kept = self.spec.retained_per_chain
        if self.draws_by_chain.shape != (self.spec.chains, kept, len(self.parameter_names)):
            raise ValueError("draw array does not match the sampler settings")

    @property
    def draws(self) -> np.ndarray:
        chains, kept, p = self.draws_by_chain.shape
        return self.draws_by_chain.reshape(chains * kept, p)

    @property
    def n_retained(self) -> int:
        return self.draws.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.parameter_names.index(name)
        except ValueError:
            raise KeyError(name) from None
        return self.draws[:, j]

    def mean(self, name: str) -> float:
        return float(self.column(name).mean())

    def summary(self) -> list[dict]:
        rows = []
        for j, name in enumerate(self.parameter_names):
            col = self.draws[:, j]
            lo, hi = np.quantile(col, [0.025, 0.975])
            rows.append({
                "parameter": name,
                "mean": float(col.mean()),
                "sd": float(col.std(ddof=1)),
                "q2.5": float(lo),
                "q97.5": float(hi),
                "rhat": float(self.rhat[j]),
                "ess": float(self.ess[j]),
            })
        return rows

    def to_dict(self) -> dict:
        return {
            "parameter_names": list(self.parameter_names),
            "draws_by_chain": [chain.tolist() for chain in self.draws_by_chain],
            "spec": self.spec.to_dict(),
            "treatments": list(self.treatments),
            "reference": self.reference,
            "centering": dict(self.centering),
            "rhat": self.rhat.tolist(),
            "ess": self.ess.tolist(),
            "acceptance": self.acceptance.tolist(),
            "stage1_fingerprint": self.stage1_fingerprint,
        }

    @classmethod
    def from_dict(cls, d) -> "NmrPosterior":
        return cls(
            parameter_names=tuple(d["parameter_names"]),
            draws_by_chain=np.array(d["draws_by_chain"], dtype=float),
            spec=NmrSpec.from_dict(d["spec"]),
            treatments=tuple(d["treatments"]),
            reference=d["reference"],
            centering=d["centering"],
            rhat=np.array(d["rhat"], dtype=float),
            ess=np.array(d["ess"], dtype=float),
            acceptance=np.array(d["acceptance"], dtype=float),
            stage1_fingerprint=d.get("stage1_fingerprint"),
        )


def sample(model: NmrModel, spec: NmrSpec | None = None, initial_step: float = 0.25) -> NmrPosterior:
    """Component-wise adaptive random-walk Metropolis over the model.

    Runs spec.chains chains of spec.iterations sweeps each; a sweep updates
    every parameter once. Draws after burn-in are kept every thin-th sweep.
    Raises if any parameter's post-burn-in acceptance rate falls below 1%.
    """
    if spec is None:
        spec = model.spec
    n_params = model.n_parameters
    kept = spec.retained_per_chain
    if kept < 1:
        raise ValueError("sampler settings retain no draws")

    affected_cells: list[list[tuple[int, float, float]]] = [[] for _ in range(n_params)]
    for ci, cell in enumerate(model.cells):
        loads: dict[int, list[float]] = {}
        for k, w in cell.a_weights:
            loads.setdefault(k, [0.0, 0.0])[0] += w
        for k, w in cell.b_weights:
            loads.setdefault(k, [0.0, 0.0])[1] += w
        for k, (da, db) in loads.items():
            affected_cells[k].append((ci, da, db))
    affected_terms: list[list[int]] = [[] for _ in range(n_params)]
    for ti, term in enumerate(model.prior_terms):
        if term[0] == "hier":
            involved = [v for v in term[1:] if v >= 0]
        else:
            involved = [term[1]]
        for k in involved:
            affected_terms[k].append(ti)

    cells_y = [cell.y for cell in model.cells]
    cells_c = [cell.c for cell in model.cells]
    n_cells = len(model.cells)

    all_draws = np.empty((spec.chains, kept, n_params))
    acc_all = np.empty((spec.chains, n_params))
    for chain in range(spec.chains):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, chain]))
        theta = np.array([p.init for p in model.parameters])
        log_step = np.full(n_params, math.log(initial_step))

        etas = [np.empty_like(c) for c in cells_c]
        scratch = [np.empty_like(c) for c in cells_c]
        lls = np.empty(n_cells)
        for ci in range(n_cells):
            a0 = sum(w * theta[k] for k, w in model.cells[ci].a_weights)
            b0 = sum(w * theta[k] for k, w in model.cells[ci].b_weights)
            zero = np.zeros_like(cells_c[ci])
            lls[ci] = _shift_loglik(zero, cells_c[ci], cells_y[ci], a0, b0, etas[ci])
        term_vals = np.array([_prior_value(t, theta) for t in model.prior_terms])
        if not np.isfinite(lls.sum() + term_vals.sum()):
            raise ValueError("log posterior is not finite at the initial point")

        accepts = np.zeros(n_params)
        tries = np.zeros(n_params)
        adapt_count = np.zeros(n_params)
        kept_i = 0
        for it in range(1, spec.iterations + 1):
            adapting = it <= spec.burn_in
            for k in range(n_params):
                dv = math.exp(log_step[k]) * rng.standard_normal()
                new_val = theta[k] + dv
                old_val = theta[k]

                dlp = 0.0
                theta[k] = new_val
                bad = False
                for ti in affected_terms[k]:
                    nv = _prior_value(model.prior_terms[ti], theta)
                    if nv == -np.inf:
                        bad = True
                        break
                    dlp += nv - term_vals[ti]
                if bad:
                    theta[k] = old_val
                    alpha = 0.0
                else:
                    dll = 0.0
                    touched = affected_cells[k]
                    ll_news = []
                    for ci, da, db in touched:
                        ll_new = _shift_loglik(
                            etas[ci], cells_c[ci], cells_y[ci], da * dv, db * dv, scratch[ci]
                        )
                        ll_news.append(ll_new)
                        dll += ll_new - lls[ci]
                    log_alpha = dll + dlp
                    alpha = 1.0 if log_alpha >= 0 else math.exp(log_alpha)
                    if rng.random() < alpha:
                        for (ci, _, _), ll_new in zip(touched, ll_news):
                            etas[ci], scratch[ci] = scratch[ci], etas[ci]
                            lls[ci] = ll_new
                        for ti in affected_terms[k]:
                            term_vals[ti] = _prior_value(model.prior_terms[ti], theta)
                        if not adapting:
                            accepts[k] += 1
                    else:
                        theta[k] = old_val
                if not adapting:
                    tries[k] += 1
                else:
                    adapt_count[k] += 1
                    gain = adapt_count[k] ** -0.6
                    log_step[k] += gain * (alpha - 0.44)

            if it > spec.burn_in and (it - spec.burn_in) % spec.thin == 0:
                all_draws[chain, kept_i] = theta
                kept_i += 1

        rates = accepts / np.maximum(tries, 1.0)
        acc_all[chain] = rates
        low = np.flatnonzero(rates < 0.01)
        if low.size:
            names = [model.parameters[int(j)].name for j in low]
            raise RuntimeError(
                f"chain {chain}: acceptance below 1% for {names}; the sampler is stuck"
            )

    rhat, ess = diagnostics(all_draws)
    return NmrPosterior(
        parameter_names=tuple(p.name for p in model.parameters),
        draws_by_chain=all_draws,
        spec=spec,
        treatments=model.treatments,
        reference=model.reference,
        centering=model.centering,
        rhat=rhat,
        ess=ess,
        acceptance=acc_all.mean(axis=0),
        stage1_fingerprint=model.stage1_fingerprint,
    )


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    d = x - x.mean()
    return np.correlate(d, d, mode="full")[n - 1:] / n


def diagnostics(draws_by_chain: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split-chain R-hat and autocorrelation-based effective sample size.

    draws_by_chain has shape (chains, n, parameters) with chains >= 2 and at
    least 4 draws per split half. Chains that are constant and identical get
    R-hat 1.0 by convention; constant chains at different values get inf.
    """
    draws_by_chain = np.asarray(draws_by_chain, dtype=float)
    if draws_by_chain.ndim != 3:
        raise ValueError("expected draws of shape (chains, n, parameters)")
    chains, n, n_params = draws_by_chain.shape
    if chains < 2:
        raise ValueError("need at least 2 chains")
    half = n // 2
    if half < 4:
        raise ValueError("need at least 4 retained draws per split half")
    seqs = np.concatenate(
        [draws_by_chain[:, :half, :], draws_by_chain[:, half: 2 * half, :]], axis=0
    )
    m = seqs.shape[0]

    rhat = np.empty(n_params)
    ess = np.empty(n_params)
    for j in range(n_params):
        s = seqs[:, :, j]
        # detect degenerate sequences by value, not by computed variance,
        # which carries rounding dust for non-dyadic constants
        chain_constant = np.all(s == s[:, :1], axis=1)
        if chain_constant.all():
            rhat[j] = 1.0 if np.all(s == s.flat[0]) else math.inf
            ess[j] = float(m * half)
            continue
        w = s.var(axis=1, ddof=1).mean()
        b_over_n = s.mean(axis=1).var(ddof=1)
        var_plus = (half - 1) / half * w + b_over_n
        rhat[j] = math.sqrt(var_plus / w) if w > 0 else math.inf
        acov = np.mean([_autocov(s[i]) for i in range(m)], axis=0)
        rho = 1.0 - (w - acov) / var_plus
        # Geyer initial positive monotone sequence on paired sums.
        tau = 0.0
        prev = math.inf
        t = 0
        while t + 1 < rho.size:
            pair = rho[t] + rho[t + 1]
            if pair <= 0.0:
                break
            pair = min(pair, prev)
            tau += pair
            prev = pair
            t += 2
        tau = max(2.0 * tau - 1.0, 1.0)
        ess[j] = min(float(m * half) / tau, float(m * half))
    return rhat, ess
