mod config;
mod evaluate;
mod fit;
mod output;
mod predict;
mod simulate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ppbr", version, about = "Projection-pursuit Bayesian regression for matrix predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test split with known truth.
    Simulate(simulate::Args),
    /// Run MCMC over a hyperparameter grid and select a grid point by WAIC.
    Fit(fit::Args),
    /// Posterior-mean predictions for new predictor matrices.
    Predict(predict::Args),
    /// Prediction error, WAIC, direction recovery and ridge-function bands.
    Evaluate(evaluate::Args),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Fit(a) => fit::run(a),
        Command::Predict(a) => predict::run(a),
        Command::Evaluate(a) => evaluate::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let causes: Vec<String> = err.chain().map(ToString::to_string).collect();
            let report = serde_json::json!({
                "error": format!("{err:#}"),
                "causes": causes,
            });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
