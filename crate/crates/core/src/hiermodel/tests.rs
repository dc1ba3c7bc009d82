use super::*;
use crate::validation::quadrature::{quadrature_oracle, QuadratureGrid, Tau2Conditioning};

fn golden() -> Vec<IndicationData> {
    vec![
        IndicationData::stage2(12.0, 20, 13.0, 20).with_stage1(8.4, 14),
        IndicationData::stage2(8.4, 20, 14.6, 20).with_stage1(6.0, 14),
        IndicationData::stage2(14.2, 20, 6.0, 20).with_stage1(11.2, 14),
    ]
}

fn oracle(model: HierModel, d: &IndicationData) -> crate::validation::quadrature::OracleMeans {
    quadrature_oracle(model, d, &HierHyperparams::default(), Tau2Conditioning::Marginal, &QuadratureGrid::default())
}

fn single(d: IndicationData) -> QuasiData {
    QuasiData::new(vec![d])
}

#[test]
fn conjugate_examples() {
    assert_eq!(fit_conjugate(0.0, 0, 0.1, 0.1).unwrap().mean(), 0.5);
    assert!((fit_conjugate(5.6, 10, 0.1, 0.1).unwrap().mean() - 5.7 / 10.2).abs() < 1e-15);
    let top = fit_conjugate(20.0, 20, 0.1, 0.1).unwrap();
    assert!(top.mean() < 1.0 && (top.mean() - 20.1 / 20.2).abs() < 1e-15);
    assert!(fit_conjugate(21.0, 20, 0.1, 0.1).is_err());
}

#[test]
fn k1_posteriors_match_quadrature() {
    let hyper = HierHyperparams::default();
    let mcmc = McmcConfig { n_iter: 22_000, n_burn: 2000, ..Default::default() };
    for d in golden() {
        for (model, tol) in [(HierModel::Clustered, 0.01), (HierModel::Unclustered, 0.01), (HierModel::Drift, 0.015)] {
            let (fit, _) = fit(model, &single(d), &hyper, &mcmc, FitOptions::default()).unwrap();
            let p = &fit.indications[0];
            let o = oracle(model, &d);
            assert!(
                (p.q_high.mean - o.q_high).abs() < tol && (p.q_low.mean - o.q_low).abs() < tol,
                "{model:?} {d:?}: mcmc ({:.4}, {:.4}) oracle ({:.4}, {:.4})",
                p.q_high.mean,
                p.q_low.mean,
                o.q_high,
                o.q_low
            );
        }
    }
}

#[test]
fn symmetric_data_gives_equal_means() {
    let hyper = HierHyperparams::default();
    let mcmc = McmcConfig::default();
    let data = QuasiData::new(vec![
        IndicationData::stage2(11.0, 20, 11.0, 20),
        IndicationData::stage2(7.5, 20, 7.5, 20),
        IndicationData::stage2(14.0, 20, 14.0, 20),
    ]);
    for model in [HierModel::Clustered, HierModel::Unclustered] {
        let (fit, _) = fit(model, &data, &hyper, &mcmc, FitOptions::default()).unwrap();
        for p in &fit.indications {
            let se = (p.q_high.mcse.powi(2) + p.q_low.mcse.powi(2)).sqrt();
            assert!((p.q_high.mean - p.q_low.mean).abs() <= 3.0 * se, "{model:?} {p:?}");
        }
    }
}

#[test]
fn weak_data_lands_between_prior_and_mle() {
    let d = IndicationData::stage2(0.5, 1, 0.5, 1);
    let (fit, _) = fit(
        HierModel::Clustered,
        &single(d),
        &HierHyperparams::default(),
        &McmcConfig::default(),
        FitOptions::default(),
    )
    .unwrap();
    let o = oracle(HierModel::Clustered, &d);
    // prior mean and MLE are both 0.5 here, so the envelope collapses
    for (mcmc, exact) in [(fit.indications[0].q_high.mean, o.q_high), (fit.indications[0].q_low.mean, o.q_low)] {
        assert!((mcmc - exact).abs() < 0.01, "{mcmc} vs {exact}");
        assert!((exact - 0.5).abs() < 1e-3);
    }
}

#[test]
fn unclustered_pulls_minority_toward_majority() {
    // one indication favours the high dose, two the low dose
    let hyper = HierHyperparams::default();
    let mcmc = McmcConfig::default();
    let high_better = IndicationData::stage2(33.6, 60, 31.2, 60);
    let low_better = IndicationData::stage2(32.4, 60, 34.8, 60);
    let data = QuasiData::new(vec![high_better, low_better, low_better]);
    let minority = |m| fit(m, &data, &hyper, &mcmc, FitOptions::default()).unwrap().0.indications[0].theta.mean;
    let (nc, v1) = (minority(HierModel::Unclustered), minority(HierModel::Clustered));
    assert!(nc > v1, "unclustered {nc} vs clustered {v1}");
}

#[test]
fn drift_without_stage1_matches_clustered() {
    let hyper = HierHyperparams::default();
    let mcmc = McmcConfig::default();
    let data =
        QuasiData::new(vec![IndicationData::stage2(12.0, 20, 13.0, 20), IndicationData::stage2(7.0, 20, 12.0, 20)]);
    let (a, _) = fit(HierModel::Clustered, &data, &hyper, &mcmc, FitOptions::default()).unwrap();
    let (b, _) = fit(HierModel::Drift, &data, &hyper, &mcmc.with_seed(9), FitOptions::default()).unwrap();
    for (p, q) in a.indications.iter().zip(&b.indications) {
        for (x, y) in [(p.q_high, q.q_high), (p.q_low, q.q_low)] {
            let se = (x.mcse.powi(2) + y.mcse.powi(2)).sqrt();
            assert!((x.mean - y.mean).abs() <= 3.0 * se, "{x:?} vs {y:?}");
        }
    }
}

#[test]
fn matching_stages_favor_spike() {
    let hyper = HierHyperparams::default();
    // same quasi-response rate in both stages, large samples
    let data = QuasiData::new(vec![IndicationData::stage2(300.0, 500, 280.0, 500).with_stage1(300.0, 500)]);
    let (f, _) = fit(HierModel::Drift, &data, &hyper, &McmcConfig::default(), FitOptions::default()).unwrap();
    let p = &f.indications[0];
    assert!(p.spike_prob.unwrap() > 0.6, "{p:?}");
    assert!(p.drift.unwrap().mean.abs() < 0.1, "{p:?}");
}

#[test]
fn prior_only_reproduces_prior_moments() {
    // proper inverse-gamma so tau^2 has finite moments
    let hyper =
        HierHyperparams { tau2_prior: Tau2Prior::InverseGamma { shape: 3.0, scale: 2.0 }, ..Default::default() };
    let data = QuasiData::new(vec![IndicationData::stage2(5.0, 10, 5.0, 10); 3]);
    let mcmc = McmcConfig { n_iter: 42_000, n_burn: 2000, ..Default::default() };
    let opts = FitOptions { prior_only: true, record_trace: false };
    let (f, _) = fit(HierModel::Drift, &data, &hyper, &mcmc, opts).unwrap();
    let g = &f.global;
    let within = |e: &Estimate, mean: f64| (e.mean - mean).abs() <= 3.0 * e.mcse;
    assert!(within(&g.mu0, hyper.mu0_mean), "{:?}", g.mu0);
    assert!(within(g.mu1.as_ref().unwrap(), hyper.mu1_mean), "{:?}", g.mu1);
    assert!(within(g.cluster_weight.as_ref().unwrap(), 0.5), "{:?}", g.cluster_weight);
    assert!(within(g.omega.as_ref().unwrap(), 0.5), "{:?}", g.omega);
    // IG(3, 2): mean 1
    assert!(within(&g.tau2, 1.0), "{:?}", g.tau2);
    // prior sd of each cluster mean
    assert!((g.mu0.sd / hyper.mu0_sd - 1.0).abs() < 0.05, "{:?}", g.mu0);
    for p in &f.indications {
        assert!(within(&p.q_high, 0.5), "{p:?}");
    }
}

#[test]
fn diagnostics_at_default_config() {
    let hyper = HierHyperparams::default();
    let data = QuasiData::new(vec![
        IndicationData::stage2(12.4, 20, 13.0, 20).with_stage1(9.0, 14),
        IndicationData::stage2(9.6, 20, 12.8, 20).with_stage1(6.4, 14),
        IndicationData::stage2(13.6, 20, 8.4, 20).with_stage1(10.0, 14),
    ]);
    for model in [HierModel::Clustered, HierModel::Unclustered, HierModel::Drift] {
        let (f, _) = fit(model, &data, &hyper, &McmcConfig::default(), FitOptions::default()).unwrap();
        for (name, rate) in &f.diagnostics.acceptance {
            assert!((0.15..=0.6).contains(rate), "{model:?} {name} acceptance {rate}");
        }
        let ess = SamplerDiagnostics::min_ess(&f);
        assert!(ess >= 200.0, "{model:?} ess {ess}");
    }
}

#[test]
fn seeded_fits_are_reproducible() {
    let data = QuasiData::new(golden());
    let hyper = HierHyperparams::default();
    let mcmc = McmcConfig { n_iter: 1500, n_burn: 500, seed: 77, ..Default::default() };
    let a = fit_v2(&data, &hyper, &mcmc).unwrap();
    let b = fit_v2(&data, &hyper, &mcmc).unwrap();
    assert_eq!(a, b);
    let c = fit_v2(&data, &hyper, &mcmc.with_seed(78)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn inactive_indications_are_skipped() {
    let mut data = QuasiData::new(golden());
    data.indications[1].active = false;
    data.indications[1].n_l2 = 0;
    data.indications[1].z_l2 = 0.0;
    let f = fit_v1(&data, &HierHyperparams::default(), &McmcConfig { n_iter: 600, n_burn: 200, ..Default::default() })
        .unwrap();
    assert_eq!(f.indications.iter().map(|p| p.index).collect::<Vec<_>>(), vec![0, 2]);
}

#[test]
fn degenerate_and_invalid_inputs() {
    let hyper = HierHyperparams::default();
    let mcmc = McmcConfig::default();
    let empty_low = QuasiData::new(vec![IndicationData::stage2(3.0, 10, 0.0, 0)]);
    assert!(matches!(fit_v1(&empty_low, &hyper, &mcmc), Err(Error::DegenerateData { indication: 0, dose: "low" })));
    let too_many = QuasiData::new(vec![IndicationData::stage2(11.0, 10, 0.0, 10)]);
    assert!(matches!(fit_v1(&too_many, &hyper, &mcmc), Err(Error::InvalidInput(_))));
    let bad_hyper = HierHyperparams { spike_var: 1.0, slab_var: 0.5, ..hyper };
    assert!(fit_v2(&QuasiData::new(golden()), &bad_hyper, &mcmc).is_err());
}

#[test]
fn trace_has_one_row_per_kept_draw() {
    let mcmc = McmcConfig { n_iter: 1000, n_burn: 400, thin: 3, ..Default::default() };
    let opts = FitOptions { prior_only: false, record_trace: true };
    let (_, trace) =
        fit(HierModel::Drift, &QuasiData::new(golden()), &HierHyperparams::default(), &mcmc, opts).unwrap();
    let trace = trace.unwrap();
    assert_eq!(trace.len(), mcmc.kept_draws());
    assert!(trace.column("drift[2]").is_some() && trace.column("tau2").is_some());
}
