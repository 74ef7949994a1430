"""Network meta-regression: likelihood assembly, sampler, diagnostics."""
import numpy as np
import pytest
from scipy.special import expit

from risknmr.dataset import PatientRecord, StudyDataset, TreatmentRegistry
from risknmr.nmr import NmrPosterior, NmrSpec, build_likelihood, diagnostics, sample

from oracles import log_odds_ratio_2x2


def scored_study(
    study_id,
    arm_sizes,
    rng,
    intercept=-0.3,
    delta=None,
    gamma0=0.0,
    gamma=None,
    baseline=None,
    reference="P",
):
    """Simulate one study with per-study-centered risk interactions."""
    delta = delta or {}
    gamma = gamma or {}
    arms = list(arm_sizes)
    if baseline is None:
        baseline = reference if reference in arms else arms[0]
    lrs = {t: rng.normal(size=n) for t, n in arm_sizes.items()}
    center = float(np.concatenate(list(lrs.values())).mean())
    records = []
    for t, n in arm_sizes.items():
        c = lrs[t] - center
        d = delta.get(t, 0.0) - delta.get(baseline, 0.0)
        g = gamma.get(t, 0.0) - gamma.get(baseline, 0.0)
        eta = intercept + d + (gamma0 + g) * c
        y = rng.binomial(1, expit(eta))
        for i in range(n):
            records.append(
                PatientRecord(study_id, t, int(y[i]), {}, logit_risk=float(lrs[t][i]))
            )
    return StudyDataset(study_id, tuple(records), baseline)


def quick_spec(**kw):
    base = dict(chains=2, iterations=3000, burn_in=800, thin=5, seed=0)
    base.update(kw)
    return NmrSpec(**base)


class TestSpecValidation:
    def test_enumerations(self):
        with pytest.raises(ValueError, match="treatment_effects"):
            NmrSpec(treatment_effects="fixed")
        with pytest.raises(ValueError, match="modifier_effects"):
            NmrSpec(modifier_effects="pooled")
        with pytest.raises(ValueError, match="risk_slope"):
            NmrSpec(risk_slope="shared")

    def test_sampler_settings(self):
        with pytest.raises(ValueError, match="chains"):
            NmrSpec(chains=1)
        with pytest.raises(ValueError, match="burn_in"):
            NmrSpec(iterations=100, burn_in=100)
        with pytest.raises(ValueError, match="thin"):
            NmrSpec(thin=0)
        with pytest.raises(ValueError, match="prior scales"):
            NmrSpec(prior_variance=0.0)

    def test_default_retained_count(self):
        s = NmrSpec()
        assert s.retained_per_chain == 900
        assert s.chains * s.retained_per_chain == 1800

    def test_roundtrip(self):
        s = quick_spec(risk_slope="exchangeable")
        assert NmrSpec.from_dict(s.to_dict()) == s


class TestBuildLikelihood:
    def registry(self, reference="P"):
        return TreatmentRegistry(("P", "A", "B"), reference)

    def two_studies(self, seed=0):
        rng = np.random.default_rng(seed)
        s1 = scored_study("S1", {"P": 40, "A": 40}, rng)
        s2 = scored_study("S2", {"A": 40, "B": 40}, rng, baseline="A")
        return [s1, s2]

    def test_parameter_layout_common(self):
        model = build_likelihood(self.two_studies(), quick_spec(), self.registry())
        names = [p.name for p in model.parameters]
        assert names == ["u[S1]", "u[S2]", "delta[A]", "delta[B]", "gamma0",
                         "gamma[A]", "gamma[B]"]
        assert model.reference == "P"
        assert model.treatments == ("P", "A", "B")

    def test_baseline_cells_carry_only_study_intercept(self):
        model = build_likelihood(self.two_studies(), quick_spec(), self.registry())
        by_key = {(c.study_id, c.treatment): c for c in model.cells}
        s1p = by_key[("S1", "P")]
        assert s1p.is_baseline
        assert s1p.a_weights == ((model.index_of("u[S1]"), 1.0),)
        assert s1p.b_weights == ((model.index_of("gamma0"), 1.0),)

    def test_nonreference_baseline_contrast_weights(self):
        model = build_likelihood(self.two_studies(), quick_spec(), self.registry())
        by_key = {(c.study_id, c.treatment): c for c in model.cells}
        s2b = by_key[("S2", "B")]
        a = dict(s2b.a_weights)
        assert a[model.index_of("delta[B]")] == 1.0
        assert a[model.index_of("delta[A]")] == -1.0
        b = dict(s2b.b_weights)
        assert b[model.index_of("gamma0")] == 1.0
        assert b[model.index_of("gamma[B]")] == 1.0
        assert b[model.index_of("gamma[A]")] == -1.0

    def test_reference_arm_has_no_effect_parameters_anywhere(self):
        model = build_likelihood(self.two_studies(), quick_spec(), self.registry())
        names = [p.name for p in model.parameters]
        assert "delta[P]" not in names and "gamma[P]" not in names

    def test_per_study_centered_scores_average_zero(self):
        studies = self.two_studies()
        model = build_likelihood(studies, quick_spec(), self.registry())
        for sid in model.study_ids:
            c_all = np.concatenate([c.c for c in model.cells if c.study_id == sid])
            assert abs(c_all.mean()) < 1e-12

    def test_centering_shift_invariance(self):
        studies = self.two_studies()
        shifted = []
        for s in studies:
            recs = tuple(
                PatientRecord(r.study_id, r.treatment, r.outcome, r.covariates,
                              logit_risk=r.logit_risk + 3.0)
                for r in s.records
            )
            shifted.append(StudyDataset(s.study_id, recs, s.baseline_treatment))
        m1 = build_likelihood(studies, quick_spec(), self.registry())
        m2 = build_likelihood(shifted, quick_spec(), self.registry())
        for c1, c2 in zip(m1.cells, m2.cells):
            np.testing.assert_allclose(c1.c, c2.c, atol=1e-12)

    def test_modifier_none_removes_gamma(self):
        model = build_likelihood(
            self.two_studies(), quick_spec(modifier_effects="none", risk_slope="none"),
            self.registry(),
        )
        names = [p.name for p in model.parameters]
        assert names == ["u[S1]", "u[S2]", "delta[A]", "delta[B]"]
        assert all(c.b_weights == () for c in model.cells)

    def test_random_effects_layout(self):
        model = build_likelihood(
            self.two_studies(),
            quick_spec(treatment_effects="random", modifier_effects="random"),
            self.registry(),
        )
        names = [p.name for p in model.parameters]
        for expected in ("d[S1|A]", "d[S2|B]", "sigma_delta",
                         "g[S1|A]", "g[S2|B]", "sigma_gamma"):
            assert expected in names

    def test_unscored_records_rejected(self):
        rng = np.random.default_rng(1)
        s = scored_study("S1", {"P": 10, "A": 10}, rng)
        bare = StudyDataset(
            "S1",
            tuple(PatientRecord(r.study_id, r.treatment, r.outcome, {})
                  for r in s.records),
            "P",
        )
        with pytest.raises(ValueError, match="not scored"):
            build_likelihood([bare], quick_spec(), self.registry())

    def test_single_arm_study_rejected(self):
        rng = np.random.default_rng(2)
        recs = tuple(
            PatientRecord("S1", "P", int(i % 2), {}, logit_risk=float(i))
            for i in range(6)
        )
        with pytest.raises(ValueError, match="at least 2 arms"):
            build_likelihood([StudyDataset("S1", recs, "P")], quick_spec(),
                             self.registry())

    def test_disconnected_network_rejected(self):
        rng = np.random.default_rng(3)
        s1 = scored_study("S1", {"P": 10, "A": 10}, rng)
        s2 = scored_study("S2", {"B": 10, "C": 10}, rng, baseline="B")
        reg = TreatmentRegistry(("P", "A", "B", "C"), "P")
        with pytest.raises(ValueError, match="disconnected"):
            build_likelihood([s1, s2], quick_spec(), reg)

    def test_fingerprint_carried_through(self):
        model = build_likelihood(self.two_studies(), quick_spec(), self.registry(),
                                 stage1_fingerprint="abc123")
        assert model.stage1_fingerprint == "abc123"


class TestSampler:
    def test_two_arm_study_matches_two_by_two_oracle(self):
        rng = np.random.default_rng(10)
        true_d = -0.6
        s = scored_study("S1", {"P": 2000, "A": 2000}, rng,
                         intercept=-0.2, delta={"A": true_d})
        reg = TreatmentRegistry(("P", "A"), "P")
        spec = quick_spec(modifier_effects="none", risk_slope="none")
        model = build_likelihood([s], spec, reg)
        post = sample(model)
        y_act = np.array([r.outcome for r in s.records if r.treatment == "A"])
        y_ref = np.array([r.outcome for r in s.records if r.treatment == "P"])
        oracle = log_odds_ratio_2x2(y_act, y_ref)
        assert post.mean("delta[A]") == pytest.approx(oracle, abs=0.05)

    def test_same_seed_identical_draws(self):
        rng = np.random.default_rng(11)
        s = scored_study("S1", {"P": 150, "A": 150}, rng)
        reg = TreatmentRegistry(("P", "A"), "P")
        spec = quick_spec(iterations=600, burn_in=100, thin=2, seed=42)
        model = build_likelihood([s], spec, reg)
        a, b = sample(model), sample(model)
        np.testing.assert_array_equal(a.draws_by_chain, b.draws_by_chain)

    def test_different_seed_different_draws(self):
        rng = np.random.default_rng(12)
        s = scored_study("S1", {"P": 150, "A": 150}, rng)
        reg = TreatmentRegistry(("P", "A"), "P")
        model = build_likelihood([s], quick_spec(iterations=600, burn_in=100,
                                                 thin=2, seed=0), reg)
        a = sample(model)
        b = sample(model, quick_spec(iterations=600, burn_in=100, thin=2, seed=1))
        assert not np.array_equal(a.draws_by_chain, b.draws_by_chain)

    def test_posterior_matches_interaction_mle(self):
        rng = np.random.default_rng(13)
        s = scored_study(
            "S1", {"P": 2500, "A": 2500}, rng,
            intercept=-0.4, delta={"A": -0.8}, gamma0=1.1, gamma={"A": 0.3},
        )
        reg = TreatmentRegistry(("P", "A"), "P")
        spec = quick_spec(iterations=5000, burn_in=1000, thin=4, seed=3)
        model = build_likelihood([s], spec, reg)
        post = sample(model)

        # oracle: unpenalized interaction logistic on the same centered scores
        from risknmr._optim import irls

        lrs = np.array([r.logit_risk for r in s.records])
        c = lrs - lrs.mean()
        act = np.array([1.0 if r.treatment == "A" else 0.0 for r in s.records])
        y = np.array([float(r.outcome) for r in s.records])
        x = np.column_stack([np.ones_like(c), act, c, act * c])
        beta, _ = irls(x, y, separation_bound=50.0)
        for name, ref_val in zip(("u[S1]", "delta[A]", "gamma0", "gamma[A]"), beta):
            col = post.column(name)
            j = post.parameter_names.index(name)
            mcse = col.std(ddof=1) / np.sqrt(max(post.ess[j], 1.0))
            assert abs(post.mean(name) - ref_val) < 3 * mcse + 0.02

    def test_reference_relabeling_leaves_contrasts_invariant(self):
        rng = np.random.default_rng(14)
        truth = dict(delta={"A": -0.5, "B": -0.9}, gamma={"A": 0.2, "B": -0.15})
        studies = [
            scored_study("S1", {"P": 1200, "A": 1200}, rng, gamma0=1.0, **truth),
            scored_study("S2", {"P": 1200, "B": 1200}, rng, gamma0=1.0, **truth),
            scored_study("S3", {"A": 1200, "B": 1200}, rng, gamma0=1.0,
                         baseline="A", **truth),
        ]
        spec = quick_spec(iterations=4000, burn_in=1000, thin=5, seed=5)
        post_p = sample(build_likelihood(
            studies, spec, TreatmentRegistry(("P", "A", "B"), "P")))
        post_a = sample(build_likelihood(
            studies, spec, TreatmentRegistry(("P", "A", "B"), "A")))

        def contrast(post, plus, minus):
            col = post.column(plus) if plus else 0.0
            if minus:
                col = col - post.column(minus)
            mean = float(np.mean(col))
            sd = float(np.std(col, ddof=1))
            ess = min(
                post.ess[post.parameter_names.index(n)]
                for n in (plus, minus) if n
            )
            return mean, sd / np.sqrt(max(ess, 1.0))

    # delta_B - delta_A and gamma_B - gamma_A, under each parameterization
        d_p, se_dp = contrast(post_p, "delta[B]", "delta[A]")
        d_a, se_da = contrast(post_a, "delta[B]", None)
        assert abs(d_p - d_a) < 3 * (se_dp + se_da) + 0.02
        g_p, se_gp = contrast(post_p, "gamma[B]", "gamma[A]")
        g_a, se_ga = contrast(post_a, "gamma[B]", None)
        assert abs(g_p - g_a) < 3 * (se_gp + se_ga) + 0.02

    def test_stuck_sampler_reports_parameter(self):
        rng = np.random.default_rng(15)
        s = scored_study("S1", {"P": 300, "A": 300}, rng)
        reg = TreatmentRegistry(("P", "A"), "P")
        spec = quick_spec(iterations=200, burn_in=0, thin=2, seed=0)
        model = build_likelihood([s], spec, reg)
        with pytest.raises(RuntimeError, match="acceptance below 1%"):
            sample(model, initial_step=1e8)

    def test_no_retained_draws_rejected(self):
        rng = np.random.default_rng(16)
        s = scored_study("S1", {"P": 50, "A": 50}, rng)
        reg = TreatmentRegistry(("P", "A"), "P")
        spec = quick_spec(iterations=5, burn_in=0, thin=10)
        model = build_likelihood([s], spec, reg)
        with pytest.raises(ValueError, match="retain no draws"):
            sample(model)

    def test_posterior_roundtrip_and_accessors(self):
        rng = np.random.default_rng(17)
        s = scored_study("S1", {"P": 120, "A": 120}, rng)
        reg = TreatmentRegistry(("P", "A"), "P")
        spec = quick_spec(iterations=500, burn_in=100, thin=2, seed=9)
        post = sample(build_likelihood([s], spec, reg, stage1_fingerprint="fp"))
        assert post.n_retained == 2 * spec.retained_per_chain
        back = NmrPosterior.from_dict(post.to_dict())
        np.testing.assert_array_equal(back.draws_by_chain, post.draws_by_chain)
        assert back.parameter_names == post.parameter_names
        assert back.stage1_fingerprint == "fp"
        with pytest.raises(KeyError):
            post.column("delta[Z]")
        rows = post.summary()
        assert {r["parameter"] for r in rows} == set(post.parameter_names)
        for r in rows:
            assert r["q2.5"] <= r["mean"] <= r["q97.5"]


class TestDiagnostics:
    def test_iid_chains_rhat_near_one(self):
        rng = np.random.default_rng(20)
        draws = rng.standard_normal((2, 1000, 3))
        rhat, ess = diagnostics(draws)
        assert np.all(np.abs(rhat - 1.0) < 0.05)
        assert np.all(ess > 1000)
        assert np.all(ess <= 2000)

    def test_separated_chains_flagged(self):
        rng = np.random.default_rng(21)
        draws = np.stack([
            rng.standard_normal((500, 1)),
            rng.standard_normal((500, 1)) + 5.0,
        ])
        rhat, _ = diagnostics(draws)
        assert rhat[0] > 1.5

    def test_constant_identical_chains(self):
        draws = np.full((2, 100, 2), 3.14)
        rhat, ess = diagnostics(draws)
        assert np.all(rhat == 1.0)
        assert np.all(ess == 4 * 50)

    def test_constant_divergent_chains(self):
        draws = np.concatenate([np.zeros((1, 100, 1)), np.ones((1, 100, 1))])
        rhat, _ = diagnostics(draws)
        assert np.isinf(rhat[0])

    def test_autocorrelated_chain_low_ess(self):
        rng = np.random.default_rng(22)
        n = 2000
        chains = []
        for _ in range(2):
            e = rng.standard_normal(n)
            x = np.empty(n)
            x[0] = e[0]
            for i in range(1, n):
                x[i] = 0.95 * x[i - 1] + np.sqrt(1 - 0.95**2) * e[i]
            chains.append(x[:, None])
        _, ess = diagnostics(np.stack(chains))
        assert ess[0] < 0.2 * 2 * n

    def test_shape_and_size_validation(self):
        with pytest.raises(ValueError, match="shape"):
            diagnostics(np.zeros((2, 10)))
        with pytest.raises(ValueError, match="2 chains"):
            diagnostics(np.zeros((1, 100, 1)))
        with pytest.raises(ValueError, match="4 retained draws"):
            diagnostics(np.zeros((2, 7, 1)))
