use wcpvol::harness::export::*;
use wcpvol::harness::*;
use wcpvol::synth::{SnrDistribution, Split};

fn small_config() -> ExperimentConfig {
    ExperimentConfig::from_json_str(
        r#"{
            "seed": 7,
            "trials": 4,
            "folds": 5,
            "latent": {"dim": 8, "kernel_size": 3},
            "generation": {"grid_dim": 20, "radius_range": [3.0, 7.0],
                           "n_train": 40, "n_calib": 80, "n_id_test": 80, "n_shift_test": 80}
        }"#,
    )
    .unwrap()
}

#[test]
fn experiment_is_deterministic() {
    let cfg = small_config();
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    assert_eq!(a.trials.len(), 4 * 3 * 2);
    assert_eq!(a.aggregate.rows.len(), 6);
    assert_eq!(a.n_samples, 280);
    assert_eq!(a.ordering_violations, 0);

    let other = run_experiment(&ExperimentConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a.trials, other.trials);
}

#[test]
fn single_trial_has_zero_spread() {
    let cfg = ExperimentConfig {
        trials: 1,
        ..small_config()
    };
    let out = run_experiment(&cfg).unwrap();
    for row in &out.aggregate.rows {
        assert_eq!(row.coverage.std, 0.0);
        assert_eq!(row.dice.std, 0.0);
        if let Some(w) = row.width {
            assert_eq!(w.std, 0.0);
        }
        if let Some(a) = row.accuracy {
            assert_eq!(a.std, 0.0);
        }
    }
}

#[test]
fn unit_weights_reproduce_standard_trial() {
    let cfg = small_config();
    let data = prepare(&cfg).unwrap();
    for trial in 0..3 {
        let (calib, id_test) = trial_split(&data, cfg.trial_seed(trial));
        let standard = calibrate_and_evaluate(&calib, &id_test, None, cfg.alpha).unwrap();
        let ones = ImportanceWeights {
            calib: vec![1.0; calib.len()],
            test: vec![1.0; id_test.len()],
        };
        let weighted = calibrate_and_evaluate(&calib, &id_test, Some(&ones), cfg.alpha).unwrap();
        assert_eq!(standard, weighted);

        let r = run_trial(&cfg, trial, &data, Setting::Id, Variant::Standard)
            .unwrap()
            .result;
        assert_eq!(r.coverage, standard.coverage);
        assert_eq!(r.mean_width, standard.mean_width);
    }
}

#[test]
fn trial_split_reshuffles_the_id_pool() {
    let cfg = small_config();
    let data = prepare(&cfg).unwrap();
    let (c0, t0) = trial_split(&data, cfg.trial_seed(0));
    let (c1, _) = trial_split(&data, cfg.trial_seed(1));
    assert_eq!(c0.len(), 80);
    assert_eq!(t0.len(), 80);
    let mut ids: Vec<u64> = c0.iter().chain(&t0).map(|r| r.id).collect();
    ids.sort_unstable();
    let mut pool: Vec<u64> = data
        .calib
        .iter()
        .chain(&data.id_test)
        .map(|r| r.id)
        .collect();
    pool.sort_unstable();
    assert_eq!(ids, pool);
    assert_ne!(
        c0.iter().map(|r| r.id).collect::<Vec<_>>(),
        c1.iter().map(|r| r.id).collect::<Vec<_>>()
    );
}

#[test]
fn fitted_state_ignores_calibration_and_test_data() {
    let cfg = small_config();
    let mut shifted = cfg.clone();
    shifted.generation.shift_snr = SnrDistribution::Uniform {
        low: 0.6,
        high: 0.9,
    };
    shifted.generation.n_id_test = 30;
    let a = prepare(&cfg).unwrap();
    let b = prepare(&shifted).unwrap();
    assert_eq!(a.thresholds, b.thresholds);
    assert_eq!(a.bank, b.bank);
    assert_eq!(a.train, b.train);
    assert!(a.train.iter().all(|r| r.latent.is_empty()));
    assert!(a.split(Split::Calib).iter().all(|r| r.latent.len() == 8));
}

#[test]
fn exports_round_trip() {
    let cfg = small_config();
    let out = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_results(&out, dir.path()).unwrap();

    let back = read_results_json(&dir.path().join(RESULTS_JSON)).unwrap();
    for (a, b) in out.trials.iter().zip(&back.trials) {
        assert!((a.coverage - b.coverage).abs() <= 1e-12);
        assert!(a.mean_width == b.mean_width || (a.mean_width - b.mean_width).abs() <= 1e-12);
    }
    assert_eq!(back, out);

    let mut rdr = csv::Reader::from_path(dir.path().join(RESULTS_CSV)).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>().join(","),
        "variant,setting,coverage_mean,coverage_std,width_mean,width_std,accuracy_mean,accuracy_std,dice_mean,dice_std"
    );
    assert_eq!(rdr.records().count(), 3 * 2);

    let wpath = dir.path().join(WEIGHTS_CSV);
    export_weight_profile(&out.weight_profile, &wpath).unwrap();
    let weights = read_weight_profile(&wpath).unwrap();
    assert_eq!(weights, out.weight_profile);
    for variant in [Variant::WOracle, Variant::WLatent] {
        for setting in Setting::ALL {
            let n = weights
                .iter()
                .filter(|w| w.variant == variant && w.setting == setting)
                .count();
            assert_eq!(n, cfg.generation.n_calib);
        }
    }
}

#[test]
fn weight_export_needs_a_weighted_variant() {
    let cfg = ExperimentConfig {
        variants: vec![Variant::Standard],
        ..small_config()
    };
    let data = prepare(&cfg).unwrap();
    assert!(weight_profile(&cfg, &data).is_err());
    let dir = tempfile::tempdir().unwrap();
    assert!(export_weight_profile(&[], &dir.path().join("w.csv")).is_err());
    let out = run_prepared(&cfg, &data).unwrap();
    assert!(out.weight_profile.is_empty());
    assert_eq!(out.aggregate.rows.len(), 2);
}

#[test]
fn infinite_widths_survive_json_and_aggregation() {
    let mk = |trial: usize, w: f64| TrialResult {
        variant: Variant::WOracle,
        setting: Setting::Shift,
        trial,
        trial_seed: trial as u64,
        coverage: 0.95,
        mean_width: w,
        bounded_width_mean: Some(100.0),
        unbounded_fraction: if w.is_finite() { 0.0 } else { 0.01 },
        classifier_accuracy: Some(0.7),
        dice_mean: 0.8,
    };
    let trials = vec![mk(0, 120.0), mk(1, f64::INFINITY), mk(2, 140.0)];
    let json = serde_json::to_string(&trials).unwrap();
    assert!(json.contains("\"inf\""));
    let back: Vec<TrialResult> = serde_json::from_str(&json).unwrap();
    assert_eq!(back, trials);

    let agg = aggregate(0.05, &trials).unwrap();
    let row = agg.row(Variant::WOracle, Setting::Shift).unwrap();
    assert_eq!(row.infinite_width_trials, 1);
    assert_eq!(row.width.unwrap().mean, 130.0);
    assert_eq!(row.width.unwrap().std, 10.0);
    assert_eq!(row.coverage.n, 3);
}
