use escalate_core::criteria::*;
use escalate_core::models::{calibrate_skeleton, logistic2_prob, logit, power_prob};
use escalate_core::posterior::{self, build_grid, post_expect, post_mean_tox, update, update_batch};
use escalate_core::sim::{accuracy_index, run_study, simulate_trial, substream, summarize};
use escalate_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
}

fn everolimus(criterion: CriterionSpec) -> Design {
    let mut target = TargetConfig::new(0.3);
    if matches!(criterion, CriterionSpec::Cibp {}) {
        target = target.with_asymmetry(0.3);
    }
    let spec = DesignSpec::new(Skeleton::new(vec![0.2, 0.3, 0.4], 2).unwrap(), target, criterion, 33);
    Design::new(spec).unwrap()
}

// Monte Carlo mean with its standard error.
fn mc_mean(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1.0;
        s += v;
        s2 += v * v;
    }
    let mean = s / n;
    (mean, ((s2 / n - mean * mean) / n).sqrt())
}

#[test]
fn power_prob_examples() {
    close(power_prob(0.30, 0.0).unwrap(), 0.30, 1e-15);
    close(power_prob(0.25, 2f64.ln()).unwrap(), 0.0625, 1e-15);
    close(power_prob(0.20, 0.5).unwrap(), (0.5f64.exp() * 0.2f64.ln()).exp(), 1e-15);
    assert!(power_prob(0.0, 0.0).is_err());
    assert!(power_prob(1.0, 0.0).is_err());
}

#[test]
fn logistic_examples() {
    assert_eq!(logistic2_prob(0.0, 0.0, 1.0), 0.5);
    assert_eq!(logistic2_prob(1.0, 0.0, 0.0), 0.5);
    close(logistic2_prob(0.3, -1.0, 2.0), 1.0 / (1.0 + 0.4f64.exp()), 1e-15);
    let hi = logistic2_prob(1.0, 700.0, 0.0);
    let lo = logistic2_prob(1.0, -700.0, 0.0);
    assert!(hi.is_finite() && hi <= 1.0 && hi > 0.999);
    assert!(lo.is_finite() && (0.0..1e-300).contains(&lo));
}

fn recursion_oracle(m: usize, k: usize, gamma: f64, delta: f64) -> Vec<f64> {
    let mut v = vec![0.0; m];
    v[k - 1] = gamma;
    for i in k..m {
        v[i] = (gamma + delta).powf(v[i - 1].ln() / (gamma - delta).ln());
    }
    for i in (0..k - 1).rev() {
        v[i] = (gamma - delta).powf(v[i + 1].ln() / (gamma + delta).ln());
    }
    v
}

#[test]
fn skeleton_calibration_matches_recursion() {
    for (m, k) in [(6, 2), (6, 3), (6, 4), (3, 2)] {
        let s = calibrate_skeleton(m, k, 0.25, 0.05).unwrap();
        assert_eq!(s.values()[k - 1], 0.25);
        for (a, b) in s.values().iter().zip(recursion_oracle(m, k, 0.25, 0.05)) {
            close(*a, b, 1e-14);
        }
    }
    let s = calibrate_skeleton(3, 2, 0.25, 1e-9).unwrap();
    assert_eq!(s.values()[1], 0.25);
    assert!(calibrate_skeleton(6, 2, 0.25, 0.25).is_err());
    assert!(calibrate_skeleton(6, 7, 0.25, 0.05).is_err());
}

#[test]
fn skeleton_calibration_is_increasing_on_a_grid() {
    for m in 2..=20 {
        for gamma in [0.1, 0.2, 0.3, 0.4] {
            for frac in [0.05, 0.25, 0.5] {
                for k in [1, m / 2 + 1, m] {
                    let oracle = recursion_oracle(m, k, gamma, gamma * frac);
                    let Ok(s) = calibrate_skeleton(m, k, gamma, gamma * frac) else {
                        // the recursion leaves the representable range
                        assert!(oracle.iter().any(|&v| v <= 0.0 || v >= 1.0), "{m} {k} {gamma} {frac}");
                        continue;
                    };
                    assert_eq!(s.values()[k - 1], gamma);
                    assert!(s.values().windows(2).all(|w| w[0] < w[1]));
                    assert!(s.values().iter().all(|&v| v > 0.0 && v < 1.0));
                }
            }
        }
    }
}

#[test]
fn power_prob_monotone_on_grid() {
    for i in 1..50 {
        let d = i as f64 / 50.0;
        for j in -20..20 {
            let b = j as f64 / 5.0;
            assert!(power_prob(d + 0.01, b).unwrap() > power_prob(d, b).unwrap());
            assert!(power_prob(d, b + 0.2).unwrap() < power_prob(d, b).unwrap());
        }
    }
}

#[test]
fn distance_examples() {
    close(sq_distance(0.2, 0.3), 0.01, 1e-15);
    assert_eq!(sq_distance(0.3, 0.3), 0.0);
    close(sq_distance(0.4, 0.3), sq_distance(0.2, 0.3), 1e-15);
    assert_eq!(aitchison_distance(0.3, 0.3).unwrap(), 0.0);
    close(aitchison_distance(0.2, 0.3).unwrap(), ((0.3f64 / 0.7).ln() - 0.25f64.ln()).abs(), 1e-14);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let (p, g) = (rng.random_range(0.01..0.99), rng.random_range(0.01..0.99));
        close(aitchison_distance(p, g).unwrap(), aitchison_distance(g, p).unwrap(), 1e-14);
    }
    assert!(aitchison_distance(0.0, 0.3).is_err());
}

#[test]
fn cibp_examples() {
    close(cibp(0.2, 0.3, 1.0).unwrap(), 1.0 / 16.0, 1e-15);
    close(cibp(0.4, 0.3, 1.0).unwrap(), 1.0 / 24.0, 1e-15);
    let lo = cibp(0.2, 0.3, 0.5).unwrap();
    let hi = cibp(0.4, 0.3, 0.5).unwrap();
    close(lo, 0.01 / (0.2f64.sqrt() * 0.8f64.powf(1.5)), 1e-15);
    close(hi, 0.01 / (0.4f64.sqrt() * 0.6f64.powf(1.5)), 1e-15);
    assert!(lo < hi);
    assert!(cibp(0.0, 0.3, 1.0).is_err());
    assert!(cibp(1.0, 0.3, 1.0).is_err());
}

#[test]
fn asymmetry_calibration_examples() {
    close(calibrate_asymmetry(0.25, 0.20).unwrap(), 0.40, 0.005);
    let a = calibrate_asymmetry(0.25, 0.24).unwrap();
    let (l, u) = (cibp(0.01, 0.25, a).unwrap(), cibp(0.49, 0.25, a).unwrap());
    assert!((l - u).abs() <= 1e-10 * l.max(u));
    assert!(calibrate_asymmetry(0.25, 0.25).is_err());
    for gamma in [0.20, 0.25, 0.30, 0.33] {
        let mut prev = f64::INFINITY;
        for k in 1..100 {
            let a = calibrate_asymmetry(gamma, gamma * k as f64 / 100.0).unwrap();
            assert!(a < prev);
            prev = a;
        }
        close(calibrate_asymmetry(gamma, 1e-6).unwrap(), 2.0 * gamma, 1e-4);
    }
}

#[test]
fn small_asymmetry_penalizes_overdose() {
    // the upper point costs more exactly when a is below the calibrated value
    for gamma in [0.2, 0.25, 0.3] {
        for a in [0.1, 0.25, 2.0 * gamma - 0.01] {
            for k in 1..50 {
                let theta = gamma * k as f64 / 50.0;
                let upper = cibp(gamma + theta, gamma, a).unwrap();
                let lower = cibp(gamma - theta, gamma, a).unwrap();
                let calibrated = calibrate_asymmetry(gamma, theta).unwrap();
                if (a - calibrated).abs() > 1e-9 {
                    assert_eq!(upper > lower, a < calibrated, "gamma {gamma} a {a} theta {theta}");
                }
            }
        }
    }
}

#[test]
fn ewoc_examples() {
    for alpha in [0.1, 0.25, 0.5] {
        assert_eq!(ewoc_loss_point(0.3, 0.3, alpha), 0.0);
    }
    close(ewoc_loss_point(0.1, 0.3, 0.5), 0.1, 1e-15);
    close(ewoc_loss_point(0.5, 0.3, 0.5), 0.1, 1e-15);
    for k in 1..30 {
        let theta = k as f64 / 100.0;
        let up = ewoc_loss_point(0.3 + theta, 0.3, 0.25);
        let down = ewoc_loss_point(0.3 - theta, 0.3, 0.25);
        close(up, 3.0 * down, 1e-14);
        assert!(ewoc_loss_point(0.3 + theta, 0.3, 0.4) > ewoc_loss_point(0.3 - theta, 0.3, 0.4));
    }
}

#[test]
fn feasibility_schedules() {
    let tr = TrSchedule::default();
    close(tr_alpha(1, &tr), 0.25, 0.0);
    close(tr_alpha(5, &tr), 0.25, 0.0);
    close(tr_alpha(10, &tr), 0.30, 1e-12);
    close(tr_alpha(20, &tr), 0.50, 1e-12);
    close(tdfb_alpha(0.25, 38.0 / 3.0, 1, 0), 0.25, 0.0);
    close(tdfb_alpha(0.25, 38.0 / 3.0, 39, 0), 0.50, 1e-12);
    let mut prev = 0.0;
    for n in 1..60 {
        let a = tdfb_alpha(0.25, 38.0 / 3.0, n, 0);
        assert!(a >= prev && (0.25..=0.5).contains(&a));
        prev = a;
    }
}

#[test]
fn blrm_examples() {
    let table = LossTable::default_blrm();
    assert_eq!(blrm_loss_point(0.33, &table), 0.0);
    assert_eq!(blrm_loss_point(0.10, &table), 1.0);
    assert_eq!(blrm_loss_point(0.70, &table), 2.0);
    let gapped: serde_json::Result<LossTable> = serde_json::from_str(
        r#"[{"lower": 0, "upper": 0.3, "loss": 1}, {"lower": 0.4, "upper": 1, "loss": 0}]"#,
    );
    assert!(gapped.unwrap_err().to_string().contains("gap"));
    let whole: LossTable = serde_json::from_str(r#"[{"lower": 0, "upper": 1, "loss": 0}]"#).unwrap();
    assert_eq!(blrm_loss_point(1.0, &whole), 0.0);
}

#[test]
fn prior_grid_examples() {
    let model = ModelSpec::default();
    let prior = build_grid(&model, &GridSpec::default()).unwrap();
    assert_eq!(prior.node_count(), 201);
    close(prior.weights().iter().sum::<f64>(), 1.0, 1e-10);
    close(prior.mean_parameter(), 0.0, 1e-6);
    assert!(build_grid(&model, &GridSpec::with_nodes(31)).is_err());

    // prior E[psi(d, beta)] against 1e7 draws of N(0, 1.34)
    let normal = Normal::new(0.0, 1.34f64.sqrt()).unwrap();
    for (k, d) in [0.2f64, 0.3, 0.4].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + k as u64);
        let (mean, se) = mc_mean((0..10_000_000).map(|_| d.powf(normal.sample(&mut rng).exp())));
        let quad = post_mean_tox(&prior, &model, d).unwrap();
        assert!((quad - mean).abs() <= 3.0 * se, "d {d}: quad {quad} mc {mean} se {se}");
    }
}

#[test]
fn ewoc_expectation_matches_importance_sampling() {
    let model = ModelSpec::default();
    let data = [(0.2, false), (0.2, false), (0.3, true), (0.3, false), (0.4, true)];
    let post = update_batch(&build_grid(&model, &GridSpec::default()).unwrap(), &model, &data).unwrap();
    let normal = Normal::new(0.0, 1.34f64.sqrt()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut sw, mut swf, mut swf2, mut sw2) = (0.0, 0.0, 0.0, 0.0);
    let mut samples = Vec::with_capacity(1_000_000);
    for _ in 0..1_000_000 {
        let b: f64 = normal.sample(&mut rng);
        let w: f64 = data
            .iter()
            .map(|&(d, y)| {
                let p = d.powf(b.exp());
                if y { p } else { 1.0 - p }
            })
            .product();
        let f = ewoc_loss_point(0.3f64.powf(b.exp()), 0.25, 0.25);
        samples.push((w, f));
        sw += w;
        swf += w * f;
    }
    let mean = swf / sw;
    for (w, f) in samples {
        swf2 += (w * (f - mean)).powi(2);
        sw2 += w;
    }
    let se = swf2.sqrt() / sw2;
    let quad = post_expect(&post, &model, 0.3, |p| ewoc_loss_point(p, 0.25, 0.25)).unwrap();
    assert!((quad - mean).abs() <= 3.0 * se, "quad {quad} mc {mean} se {se}");
}

#[test]
fn update_examples() {
    let model = ModelSpec::default();
    let prior = build_grid(&model, &GridSpec::default()).unwrap();
    assert!(update_batch(&prior, &model, &[]).unwrap().same_weights(&prior));
    let a = update(&update(&prior, &model, 0.3, true).unwrap(), &model, 0.3, false).unwrap();
    let b = update(&update(&prior, &model, 0.3, false).unwrap(), &model, 0.3, true).unwrap();
    assert!(a.same_weights(&b));

    let identity = post_expect(&a, &model, 0.3, |p| p).unwrap();
    close(identity, post_mean_tox(&a, &model, 0.3).unwrap(), 1e-12);

    let point = posterior::PosteriorRep::point_mass(&model, [0.7, 0.0]).unwrap();
    assert_eq!(post_mean_tox(&point, &model, 0.3).unwrap(), power_prob(0.3, 0.7).unwrap());
    let means: Vec<f64> = [0.1, 0.2, 0.3, 0.4]
        .iter()
        .map(|&d| post_mean_tox(&a, &model, d).unwrap())
        .collect();
    assert!(means.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn everolimus_first_cohort_rows() {
    let crm = everolimus(CriterionSpec::SqDistance {});
    let cibp = everolimus(CriterionSpec::Cibp {});
    for design in [&crm, &cibp] {
        let s = design.start();
        assert_eq!(design.next_dose(&s).unwrap(), 1);
        let s = design.record_cohort(&s, 1, &[false; 3], false).unwrap();
        assert_eq!(design.next_dose(&s).unwrap(), 2);
        assert_eq!(s.patients_treated(), 3);
        assert_eq!(s.history(), vec![(1, false); 3]);
    }
}

#[test]
fn select_mtd_matches_brute_force() {
    let design = everolimus(CriterionSpec::SqDistance {});
    let model = design.spec().model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let mut state = design.start();
        let n = rng.random_range(1..=10);
        for _ in 0..n {
            let dose = design.next_dose(&state).unwrap();
            let y: Vec<bool> = (0..3).map(|_| rng.random::<f64>() < 0.35).collect();
            design.apply_cohort(&mut state, dose, &y, false).unwrap();
        }
        let history: Vec<(f64, bool)> = state
            .history()
            .iter()
            .map(|&(i, y)| (design.doses()[i - 1], y))
            .collect();
        let post = update_batch(&build_grid(&model, &GridSpec::default()).unwrap(), &model, &history).unwrap();
        let mut best = (0, f64::INFINITY);
        for (i, &d) in design.doses().iter().enumerate() {
            let v = (post_mean_tox(&post, &model, d).unwrap() - 0.3).powi(2);
            if v < best.1 {
                best = (i + 1, v);
            }
        }
        assert_eq!(design.select_mtd(&state).unwrap(), best.0);
    }
}

#[test]
fn termination_semantics() {
    let design = everolimus(CriterionSpec::Cibp {});
    let mut state = design.start();
    assert!(!design.is_complete(&state));
    assert!(matches!(design.select_mtd(&state), Err(Error::NoData)));
    design.apply_cohort(&mut state, 1, &[false, false, true], false).unwrap();
    design.terminate(&mut state, Some("safety".into()));
    assert!(design.is_complete(&state));
    assert!(matches!(design.next_dose(&state), Err(Error::TrialComplete)));
    assert!(design.select_mtd(&state).is_ok());

    let mut full = design.start();
    for _ in 0..11 {
        let dose = design.next_dose(&full).unwrap();
        design.apply_cohort(&mut full, dose, &[false; 3], false).unwrap();
    }
    assert_eq!(full.patients_treated(), 33);
    assert!(design.is_complete(&full));
}

#[test]
fn record_rejects_over_capacity() {
    let design = everolimus(CriterionSpec::SqDistance {});
    let mut state = design.start();
    for _ in 0..10 {
        let dose = design.next_dose(&state).unwrap();
        design.apply_cohort(&mut state, dose, &[false; 3], false).unwrap();
    }
    let dose = design.next_dose(&state).unwrap();
    assert!(matches!(
        design.record_cohort(&state, dose, &[false; 4], false),
        Err(Error::CapacityExceeded { .. })
    ));
}

fn all_criteria() -> Vec<CriterionSpec> {
    vec![
        CriterionSpec::SqDistance {},
        CriterionSpec::Cibp {},
        CriterionSpec::Aitchison {},
        CriterionSpec::EwocFixed { alpha: 0.25 },
        CriterionSpec::tr(TrSchedule::default()),
        CriterionSpec::EwocTdfb { alpha_min: 0.25, s: 38.0 / 3.0, cap: 0.5 },
        CriterionSpec::BlrmLoss { table: LossTable::default_blrm() },
    ]
}

#[test]
fn extreme_scenarios() {
    let skeleton = calibrate_skeleton(6, 2, 0.25, 0.05).unwrap();
    let safe = ScenarioSpec::new("safe", vec![1e-9; 6]);
    let toxic = ScenarioSpec::new("toxic", vec![1.0 - 1e-9; 6]);
    for criterion in all_criteria() {
        let label = criterion.label();
        let spec = DesignSpec::new(skeleton.clone(), TargetConfig::new(0.25), criterion, 30).with_cohort_size(1);
        let design = Design::new(spec).unwrap();
        let out = simulate_trial(&toxic, &design, &mut substream(1, 0, 0)).unwrap();
        assert_eq!(out.dlt_count, 30);
        assert!(out.cohorts.iter().all(|c| c.dose <= 2), "{label}");
        let out = simulate_trial(&safe, &design, &mut substream(1, 0, 0)).unwrap();
        assert_eq!(out.dlt_count, 0);
        if label == "crm" {
            let doses: Vec<usize> = out.cohorts.iter().map(|c| c.dose).collect();
            assert_eq!(&doses[..6], &[1, 2, 3, 4, 5, 6]);
        }
    }
}

#[test]
fn study_examples() {
    let skeleton = calibrate_skeleton(6, 2, 0.25, 0.05).unwrap();
    let design = Design::new(
        DesignSpec::new(skeleton, TargetConfig::new(0.25).with_asymmetry(0.3), CriterionSpec::Cibp {}, 30)
            .with_cohort_size(1),
    )
    .unwrap();
    let scenario = ScenarioSpec::new("s2", vec![0.15, 0.25, 0.35, 0.40, 0.45, 0.50]);
    let one = run_study(std::slice::from_ref(&scenario), std::slice::from_ref(&design), 1, 4, Some(1)).unwrap();
    let trial = simulate_trial(&scenario, &design, &mut substream(4, 0, 0)).unwrap();
    let cell = &one.cells[0];
    assert_eq!(cell.selection_pct[trial.selected - 1], 100.0);
    close(cell.mean_dlt_count, trial.dlt_count as f64, 0.0);

    let report = run_study(&[scenario], &[design], 300, 4, None).unwrap();
    close(report.cells[0].selection_pct.iter().sum::<f64>(), 100.0, 0.01);
    assert!((0.0..=100.0).contains(&report.cells[0].pcs));
    assert!(report.cells[0].accuracy <= 1.0);
}

#[test]
fn accuracy_examples() {
    let tox = [0.25, 0.35, 0.375, 0.40, 0.45, 0.50];
    assert_eq!(accuracy_index(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &tox, 0.25).unwrap(), 1.0);
    close(accuracy_index(&[1.0 / 6.0; 6], &tox, 0.25).unwrap(), 0.0, 1e-12);
    let worst = accuracy_index(&[0.0, 0.0, 0.0, 0.0, 0.0, 1.0], &tox, 0.25).unwrap();
    let sq: Vec<f64> = tox.iter().map(|p| (p - 0.25) * (p - 0.25)).collect();
    close(worst, 1.0 - 6.0 * sq[5] / sq.iter().sum::<f64>(), 1e-12);
    assert!(worst < 0.0);
    assert!(accuracy_index(&[0.5, 0.5], &[0.25, 0.25], 0.25).is_err());
}

fn cell(design: &str, accuracy: f64) -> CellResult {
    CellResult {
        design: design.into(),
        scenario: format!("s{accuracy}"),
        true_mtd: 1,
        selection_pct: vec![100.0],
        allocation_pct: vec![100.0],
        pcs: 100.0,
        dlt_pct: 20.0,
        mean_dlt_count: 6.0,
        mean_patients: 30.0,
        accuracy,
    }
}

#[test]
fn summary_examples() {
    let s = summarize("x", &[cell("x", 0.87)]);
    assert_eq!(s.mean_accuracy, 0.87);
    close(s.geometric_mean_accuracy.unwrap(), 0.87, 1e-15);
    let s = summarize("x", &[cell("x", 0.6), cell("x", 0.6)]);
    close(s.geometric_mean_accuracy.unwrap(), s.mean_accuracy, 1e-15);
    let values = [0.87, 0.65, 0.92, 0.41];
    let cells: Vec<CellResult> = values.iter().map(|&a| cell("x", a)).collect();
    let oracle = values.iter().map(|a: &f64| a.log10()).sum::<f64>() / 4.0;
    close(summarize("x", &cells).geometric_mean_accuracy.unwrap(), 10f64.powf(oracle), 1e-14);
    let cells = vec![cell("x", 0.5), cell("x", -0.1)];
    assert!(summarize("x", &cells).geometric_mean_accuracy.is_none());
}

#[test]
fn logit_dose_scores() {
    let model = ModelSpec::logistic([0.0, 1.0], [[1.0, 0.0], [0.0, 0.25]]);
    let skeleton = Skeleton::new(vec![0.1, 0.2, 0.3], 2).unwrap();
    let doses = model.dose_levels(&skeleton).unwrap();
    for (d, p) in doses.iter().zip(skeleton.values()) {
        close(*d, logit(*p), 1e-15);
    }
}
