//! Repeated-trial comparison of standard and weighted conformal calibration.
//!
//! Per trial, the in-distribution calibration and test pools are merged and
//! re-split by the trial seed while the shifted test pool stays fixed. Scores
//! come from the calibration half; Standard CP applies one global correction,
//! the weighted variants recompute it for each test point from density-ratio
//! weights fitted on calibration-vs-test features (the measured SNR for
//! W-Oracle, latent descriptors for W-Latent).

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, ExperimentConfig, Setting, Variant};
use super::serde_inf;
use crate::conformal::{
    calibrated_interval, coverage, mean_width, standard_quantile, PredictiveInterval, ScoreSet,
    WeightedCalibration,
};
use crate::density_ratio::{classifier_accuracy, cross_fit_probabilities, weights_from_probs};
use crate::error::{Error, Result};
use crate::latent::{extract, FilterBank};
use crate::synth::{generate_dataset_sample, snr_of, Sample, Split};
use crate::trimask::{predict, volumes, ThresholdFitter, TriThresholds, VolumeTriple};
use crate::volume::{dice, volume};

/// Everything a trial needs to know about one generated sample; the image
/// itself is discarded after this is computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: u64,
    pub split: Split,
    /// SNR the sample was generated with.
    pub snr: f64,
    /// SNR measured on the image (the oracle covariate).
    pub snr_measured: f64,
    pub truth_volume: f64,
    pub triple: VolumeTriple,
    /// Dice of the balanced (mean) mask against the truth.
    pub dice_mean: f64,
    /// Empty for training samples.
    pub latent: Vec<f64>,
}

impl SampleRecord {
    fn features(&self, variant: Variant) -> Vec<f64> {
        match variant {
            Variant::WLatent => self.latent.clone(),
            _ => vec![self.snr_measured],
        }
    }
}

/// Fitted estimator, descriptor bank and per-sample records for all splits.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub thresholds: TriThresholds,
    pub bank: FilterBank,
    pub train: Vec<SampleRecord>,
    pub calib: Vec<SampleRecord>,
    pub id_test: Vec<SampleRecord>,
    pub shift_test: Vec<SampleRecord>,
}

impl PreparedData {
    pub fn records(&self) -> impl Iterator<Item = &SampleRecord> {
        self.train
            .iter()
            .chain(&self.calib)
            .chain(&self.id_test)
            .chain(&self.shift_test)
    }

    pub fn split(&self, split: Split) -> &[SampleRecord] {
        match split {
            Split::Train => &self.train,
            Split::Calib => &self.calib,
            Split::IdTest => &self.id_test,
            Split::ShiftTest => &self.shift_test,
        }
    }
}

pub fn make_record(
    sample: &Sample,
    split: Split,
    thresholds: &TriThresholds,
    bank: Option<&FilterBank>,
    config: &ExperimentConfig,
) -> Result<SampleRecord> {
    let masks = predict(&sample.image, thresholds);
    let latent = match bank {
        Some(b) => extract(&sample.image, b, config.latent.mode)?,
        None => Vec::new(),
    };
    Ok(SampleRecord {
        id: sample.id,
        split,
        snr: sample.spec.snr,
        snr_measured: snr_of(&sample.image, &sample.truth)?,
        truth_volume: volume(&sample.truth, sample.image.voxel_volume()),
        triple: volumes(&masks, sample.image.voxel_volume()),
        dice_mean: dice(&masks.mean, &sample.truth)?,
        latent,
    })
}

/// Fits the thresholds on the training split, builds the filter bank and
/// summarizes every sample. Nothing fitted here sees calibration or test data.
pub fn prepare(config: &ExperimentConfig) -> Result<PreparedData> {
    config.validate()?;
    let gen = &config.generation;
    let seed = config.seed;

    info!("fitting thresholds on {} training images", gen.n_train);
    let mut fitter = ThresholdFitter::new(config.gamma)?;
    for id in gen.ids(Split::Train) {
        let s = generate_dataset_sample(seed, gen, id)?;
        fitter.add(&s.image, &s.truth)?;
    }
    let thresholds = fitter.fit()?;
    drop(fitter);
    info!("thresholds: {thresholds:?}");

    let bank = FilterBank::random(
        config.filter_seed(),
        config.latent.dim,
        config.latent.kernel_size,
    )?;

    let records = |split: Split| -> Result<Vec<SampleRecord>> {
        info!("summarizing split {}", split.name());
        let with_latent = (split != Split::Train).then_some(&bank);
        // per-sample work is pure in (seed, id); collect keeps id order
        gen.ids(split)
            .into_par_iter()
            .map(|id| {
                let s = generate_dataset_sample(seed, gen, id)?;
                make_record(&s, split, &thresholds, with_latent, config)
            })
            .collect()
    };
    let train = records(Split::Train)?;
    let calib = records(Split::Calib)?;
    let id_test = records(Split::IdTest)?;
    let shift_test = records(Split::ShiftTest)?;
    Ok(PreparedData {
        thresholds,
        bank,
        train,
        calib,
        id_test,
        shift_test,
    })
}

/// Raw importance weights for the calibration and test samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceWeights {
    pub calib: Vec<f64>,
    pub test: Vec<f64>,
}

/// Intervals and metrics of one calibration/test evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub intervals: Vec<PredictiveInterval>,
    pub coverage: f64,
    pub mean_width: f64,
    pub bounded_width_mean: Option<f64>,
    pub unbounded_fraction: f64,
}

/// Calibrates on `calib` and evaluates intervals on `test`. Without weights
/// this is standard split conformal; with weights each test point gets its
/// own reweighted quantile.
pub fn calibrate_and_evaluate(
    calib: &[&SampleRecord],
    test: &[&SampleRecord],
    weights: Option<&ImportanceWeights>,
    alpha: f64,
) -> Result<Evaluation> {
    let triples: Vec<VolumeTriple> = calib.iter().map(|r| r.triple).collect();
    let truths: Vec<f64> = calib.iter().map(|r| r.truth_volume).collect();
    let scores = ScoreSet::from_triples(&triples, &truths)?;

    let intervals: Vec<PredictiveInterval> = match weights {
        None => {
            let q = standard_quantile(&scores, alpha)?;
            test.iter()
                .map(|r| calibrated_interval(&r.triple, &q))
                .collect()
        }
        Some(w) => {
            if w.test.len() != test.len() {
                return Err(Error::LengthMismatch {
                    expected: test.len(),
                    actual: w.test.len(),
                });
            }
            let cal = WeightedCalibration::new(&scores, &w.calib)?;
            test.iter()
                .zip(&w.test)
                .map(|(r, &wt)| Ok(calibrated_interval(&r.triple, &cal.quantile(wt, alpha)?)))
                .collect::<Result<_>>()?
        }
    };
    let test_truths: Vec<f64> = test.iter().map(|r| r.truth_volume).collect();
    let bounded: Vec<f64> = intervals
        .iter()
        .filter(|pi| pi.hi.is_finite())
        .map(PredictiveInterval::width)
        .collect();
    Ok(Evaluation {
        coverage: coverage(&intervals, &test_truths)?,
        mean_width: mean_width(&intervals)?,
        bounded_width_mean: (!bounded.is_empty())
            .then(|| bounded.iter().sum::<f64>() / bounded.len() as f64),
        unbounded_fraction: 1.0 - bounded.len() as f64 / intervals.len() as f64,
        intervals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub variant: Variant,
    pub setting: Setting,
    pub trial: usize,
    pub trial_seed: u64,
    pub coverage: f64,
    /// `+inf` when at least one interval is unbounded.
    #[serde(with = "serde_inf")]
    pub mean_width: f64,
    /// Mean width over the bounded intervals only.
    pub bounded_width_mean: Option<f64>,
    pub unbounded_fraction: f64,
    /// Out-of-fold accuracy of the calibration-vs-test classifier.
    pub classifier_accuracy: Option<f64>,
    pub dice_mean: f64,
}

/// Per-calibration-sample weight of one weighted trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub variant: Variant,
    pub setting: Setting,
    pub sample_id: u64,
    pub covariate_value: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutput {
    pub result: TrialResult,
    /// Calibration weights, for weighted variants.
    pub weights: Option<Vec<WeightRecord>>,
}

/// The trial's calibration and ID-test halves: the pooled ID samples shuffled
/// by `trial_seed`, split back into the original sizes.
pub fn trial_split(
    data: &PreparedData,
    trial_seed: u64,
) -> (Vec<&SampleRecord>, Vec<&SampleRecord>) {
    let mut pool: Vec<&SampleRecord> = data.calib.iter().chain(&data.id_test).collect();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(trial_seed));
    let test = pool.split_off(data.calib.len());
    (pool, test)
}

pub fn run_trial(
    config: &ExperimentConfig,
    trial: usize,
    data: &PreparedData,
    setting: Setting,
    variant: Variant,
) -> Result<TrialOutput> {
    let trial_seed = config.trial_seed(trial);
    let (calib, id_test) = trial_split(data, trial_seed);
    let test: Vec<&SampleRecord> = match setting {
        Setting::Id => id_test,
        Setting::Shift => data.shift_test.iter().collect(),
    };

    let (weights, accuracy) = if variant.is_weighted() {
        let fc: Vec<Vec<f64>> = calib.iter().map(|r| r.features(variant)).collect();
        let ft: Vec<Vec<f64>> = test.iter().map(|r| r.features(variant)).collect();
        let salt = match (setting, variant) {
            (Setting::Id, Variant::WOracle) => 1,
            (Setting::Id, _) => 2,
            (Setting::Shift, Variant::WOracle) => 3,
            (Setting::Shift, _) => 4,
        };
        let fit = cross_fit_probabilities(
            &fc,
            &ft,
            config.folds,
            derive_seed(trial_seed, salt),
            &config.logistic,
        )?;
        let probs: Vec<f64> = fit
            .calib_probs
            .iter()
            .chain(&fit.test_probs)
            .copied()
            .collect();
        let labels: Vec<u8> = std::iter::repeat_n(0, calib.len())
            .chain(std::iter::repeat_n(1, test.len()))
            .collect();
        let accuracy = classifier_accuracy(&probs, &labels)?;
        let w = ImportanceWeights {
            calib: weights_from_probs(&fit.calib_probs)?
                .iter()
                .map(|e| e.weight)
                .collect(),
            test: weights_from_probs(&fit.test_probs)?
                .iter()
                .map(|e| e.weight)
                .collect(),
        };
        (Some(w), Some(accuracy))
    } else {
        (None, None)
    };

    let eval = calibrate_and_evaluate(&calib, &test, weights.as_ref(), config.alpha)?;
    let dice_mean = test.iter().map(|r| r.dice_mean).sum::<f64>() / test.len() as f64;
    let weight_records = weights.map(|w| {
        calib
            .iter()
            .zip(&w.calib)
            .map(|(r, &weight)| WeightRecord {
                variant,
                setting,
                sample_id: r.id,
                covariate_value: r.snr,
                weight,
            })
            .collect()
    });
    Ok(TrialOutput {
        result: TrialResult {
            variant,
            setting,
            trial,
            trial_seed,
            coverage: eval.coverage,
            mean_width: eval.mean_width,
            bounded_width_mean: eval.bounded_width_mean,
            unbounded_fraction: eval.unbounded_fraction,
            classifier_accuracy: accuracy,
            dice_mean,
        },
        weights: weight_records,
    })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    #[serde(with = "serde_inf")]
    pub mean: f64,
    #[serde(with = "serde_inf")]
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: Variant,
    pub setting: Setting,
    pub trials: usize,
    pub coverage: Stat,
    /// Over trials whose intervals were all bounded.
    pub width: Option<Stat>,
    pub infinite_width_trials: usize,
    /// Over trials, of the mean width of bounded intervals.
    pub bounded_width: Option<Stat>,
    pub unbounded_fraction_mean: f64,
    pub accuracy: Option<Stat>,
    pub dice: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub alpha: f64,
    pub rows: Vec<AggregateRow>,
}

impl AggregateResult {
    pub fn row(&self, variant: Variant, setting: Setting) -> Option<&AggregateRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.setting == setting)
    }
}

/// Reduces trial results in trial order, one row per (variant, setting).
pub fn aggregate(alpha: f64, results: &[TrialResult]) -> Result<AggregateResult> {
    let mut keys: Vec<(Variant, Setting)> =
        results.iter().map(|r| (r.variant, r.setting)).collect();
    keys.sort();
    keys.dedup();
    let rows = keys
        .into_iter()
        .map(|(variant, setting)| {
            let mut rs: Vec<&TrialResult> = results
                .iter()
                .filter(|r| r.variant == variant && r.setting == setting)
                .collect();
            rs.sort_by_key(|r| r.trial);
            let collect = |f: &dyn Fn(&TrialResult) -> Option<f64>| -> Vec<f64> {
                rs.iter().filter_map(|r| f(r)).collect()
            };
            let coverage = collect(&|r| Some(r.coverage));
            let finite_widths = collect(&|r| Some(r.mean_width).filter(|w| w.is_finite()));
            let unbounded = collect(&|r| Some(r.unbounded_fraction));
            AggregateRow {
                variant,
                setting,
                trials: rs.len(),
                coverage: Stat::of(&coverage).expect("at least one trial"),
                infinite_width_trials: rs.len() - finite_widths.len(),
                width: Stat::of(&finite_widths),
                bounded_width: Stat::of(&collect(&|r| r.bounded_width_mean)),
                unbounded_fraction_mean: unbounded.iter().sum::<f64>() / unbounded.len() as f64,
                accuracy: Stat::of(&collect(&|r| r.classifier_accuracy)),
                dice: Stat::of(&collect(&|r| Some(r.dice_mean))).expect("at least one trial"),
            }
        })
        .collect();
    Ok(AggregateResult { alpha, rows })
}

/// Full experiment output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub thresholds: TriThresholds,
    pub aggregate: AggregateResult,
    pub trials: Vec<TrialResult>,
    /// Calibration weights of trial 0 for every weighted variant and setting.
    pub weight_profile: Vec<WeightRecord>,
    /// Samples (all splits) whose volume triple violates `lo <= mid <= hi`.
    pub ordering_violations: usize,
    pub n_samples: usize,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let data = prepare(config)?;
    run_prepared(config, &data)
}

/// Runs all trials on already prepared data.
pub fn run_prepared(config: &ExperimentConfig, data: &PreparedData) -> Result<ExperimentOutput> {
    let variants = config.variant_list();
    let mut trials = Vec::with_capacity(config.trials * variants.len() * 2);
    let mut weight_profile = Vec::new();
    for trial in 0..config.trials {
        if trial % 25 == 0 {
            info!("trial {trial}/{}", config.trials);
        }
        for setting in Setting::ALL {
            for &variant in &variants {
                let out = run_trial(config, trial, data, setting, variant)?;
                if trial == 0 {
                    weight_profile.extend(out.weights.into_iter().flatten());
                }
                trials.push(out.result);
            }
        }
    }
    let ordering_violations = data
        .records()
        .filter(|r| !(r.triple.lo <= r.triple.mid && r.triple.mid <= r.triple.hi))
        .count();
    Ok(ExperimentOutput {
        config: config.clone(),
        thresholds: data.thresholds,
        aggregate: aggregate(config.alpha, &trials)?,
        trials,
        weight_profile,
        ordering_violations,
        n_samples: data.records().count(),
    })
}

/// Weights of one representative trial (trial 0) for the weighted variants.
pub fn weight_profile(config: &ExperimentConfig, data: &PreparedData) -> Result<Vec<WeightRecord>> {
    let weighted: Vec<Variant> = config
        .variant_list()
        .into_iter()
        .filter(Variant::is_weighted)
        .collect();
    if weighted.is_empty() {
        return Err(Error::Config(
            "weight export needs a weighted CP variant".into(),
        ));
    }
    let mut out = Vec::new();
    for setting in Setting::ALL {
        for &variant in &weighted {
            out.extend(
                run_trial(config, 0, data, setting, variant)?
                    .weights
                    .into_iter()
                    .flatten(),
            );
        }
    }
    Ok(out)
}
