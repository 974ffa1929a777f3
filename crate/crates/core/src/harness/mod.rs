//! Experiment harness: configuration, the repeated-trial runner, dataset
//! dumps and result export.

mod config;
pub mod dataset;
mod experiment;
pub mod export;

pub use config::{derive_seed, ExperimentConfig, LatentConfig, Setting, Variant};
pub use experiment::{
    aggregate, calibrate_and_evaluate, make_record, prepare, run_experiment, run_prepared,
    run_trial, trial_split, weight_profile, AggregateResult, AggregateRow, Evaluation,
    ExperimentOutput, ImportanceWeights, PreparedData, SampleRecord, Stat, TrialOutput,
    TrialResult, WeightRecord,
};

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"` and `"nan"`
/// since JSON has no literal for them.
pub(crate) mod serde_inf {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!(
                    "expected a number, got `{other}`"
                ))),
            },
        }
    }
}

/// CSV/text rendering of a float, with `inf` for infinities.
pub(crate) fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}
