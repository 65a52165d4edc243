use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Serialize;

use ppbr_core::io::{write_dataset_csv, write_json, DatasetManifest};
use ppbr_core::simulation::{gen_scenario, ScenarioKind, ScenarioSpec};

use crate::output::prepare_dir;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Scenario {
    /// Additive single-index truth with sparse directions.
    Correct,
    /// Bilinear low-rank truth outside the model class.
    Misspec,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long, value_enum, default_value = "correct")]
    scenario: Scenario,
    /// Predictor dimension.
    #[arg(long)]
    p: usize,
    /// Number of additive components (correctly specified scenario).
    #[arg(long = "K", default_value_t = 2)]
    k: usize,
    /// Rank of the bilinear truth (misspecified scenario).
    #[arg(long, default_value_t = 2)]
    r: usize,
    #[arg(long, default_value_t = 400)]
    n_train: usize,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    n_test: u64,
    /// Noise variance.
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Serialize)]
struct SpecFile {
    scenario: ScenarioSpec,
    train: DatasetManifest,
    test: DatasetManifest,
}

pub fn run(args: Args) -> Result<()> {
    let kind = match args.scenario {
        Scenario::Correct => ScenarioKind::CorrectlySpecified { p: args.p, k: args.k },
        Scenario::Misspec => ScenarioKind::Misspecified { p: args.p, r: args.r },
    };
    let spec = ScenarioSpec {
        kind,
        n_train: args.n_train,
        n_test: args.n_test as usize,
        sigma2: args.sigma2,
        seed: args.seed,
    };
    spec.validate()?;
    prepare_dir(&args.out, args.force)?;
    let scenario = gen_scenario(&spec).context("generating scenario")?;
    let test = scenario.test()?;

    write_dataset_csv(&args.out.join("train.csv"), &scenario.train)?;
    write_dataset_csv(&args.out.join("test.csv"), &test)?;
    write_json(&args.out.join("truth.json"), &scenario.truth)?;
    let manifest = |split: &str, n: usize| DatasetManifest {
        p: args.p,
        n,
        provenance: serde_json::json!({
            "generator": "ppbr simulate",
            "split": split,
            "seed": args.seed,
        }),
    };
    let file = SpecFile {
        scenario: spec,
        train: manifest("train", scenario.train.len()),
        test: manifest("test", test.len()),
    };
    write_json(&args.out.join("spec.json"), &file)?;
    Ok(())
}
