use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use wcpvol::harness::{
    dataset, export, prepare, run_prepared, weight_profile, ExperimentConfig, Variant,
};
use wcpvol::Error;

/// Standard and weighted conformal volume intervals on synthetic phantoms.
#[derive(Debug, Parser)]
#[command(name = "wcpvol", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the four dataset splits to disk.
    Generate(Common),
    /// Fit the thresholds and build the filter bank.
    Fit(Common),
    /// Run the full experiment and export results.
    Run(Common),
    /// Export calibration weights of one representative trial.
    ExportWeights(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config file; omitted fields take their defaults.
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Generate(c) => {
            let cfg = c.load()?;
            let meta = dataset::write_dataset(cfg.seed, &cfg.generation, &cfg.output_dir)?;
            println!(
                "wrote {} samples to {}",
                meta.samples.len(),
                cfg.output_dir.display()
            );
        }
        Command::Fit(c) => {
            let cfg = c.load()?;
            let data = prepare(&cfg)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            write_json(&cfg.output_dir.join("thresholds.json"), &data.thresholds)?;
            write_json(&cfg.output_dir.join("filter_bank.json"), &data.bank)?;
            let th = &data.thresholds;
            println!(
                "thresholds lower={} mean={} upper={}",
                th.t_lower, th.t_mean, th.t_upper
            );
        }
        Command::Run(c) => {
            let cfg = c.load()?;
            let data = prepare(&cfg)?;
            let out = run_prepared(&cfg, &data)?;
            export::export_results(&out, &cfg.output_dir)?;
            if !out.weight_profile.is_empty() {
                export::export_weight_profile(
                    &out.weight_profile,
                    &cfg.output_dir.join(export::WEIGHTS_CSV),
                )?;
            }
            for row in &out.aggregate.rows {
                let width = row
                    .width
                    .map_or_else(|| "inf".to_string(), |w| format!("{:.1}", w.mean));
                println!(
                    "{:<9} {:<6} coverage {:.4} +- {:.4}  width {} ({} inf)  accuracy {}",
                    row.variant.name(),
                    row.setting.name(),
                    row.coverage.mean,
                    row.coverage.std,
                    width,
                    row.infinite_width_trials,
                    row.accuracy
                        .map_or("-".to_string(), |a| format!("{:.3}", a.mean)),
                );
            }
            info!("results written to {}", cfg.output_dir.display());
        }
        Command::ExportWeights(c) => {
            let cfg = c.load()?;
            if !cfg.variant_list().iter().any(Variant::is_weighted) {
                return Err(Error::Config(
                    "weight export needs a weighted CP variant".into(),
                ));
            }
            let data = prepare(&cfg)?;
            let weights = weight_profile(&cfg, &data)?;
            let path = cfg.output_dir.join(export::WEIGHTS_CSV);
            export::export_weight_profile(&weights, &path)?;
            println!("wrote {} weights to {}", weights.len(), path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("config error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
