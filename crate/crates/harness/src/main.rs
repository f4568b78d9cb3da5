use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rru_core::check::{run_suite_case, suite_cases};
use rru_core::RruVariant;
use rru_harness::config::default_dropout_rates;
use rru_harness::sweep::{ABLATION_FILE, GRID_EPOCHS_FILE, GRID_LOSS_FILE, SWEEP_FILE};
use rru_harness::trial::{evaluate_checkpoint, CHECKPOINT_FILE};
use rru_harness::{
    build_model_config, run_ablation_suite, run_dropout_sweep, run_grid, run_trial, CellKind, ExperimentConfig,
    HarnessError, Overrides, Result, RunOptions, SweepOptions, TrialData,
};

#[derive(Parser)]
#[command(name = "rru", version, about = "Train and sweep RRU and baseline recurrent models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write trial.json, epochs.csv and best.ckpt.
    Train(Common),
    /// Evaluate a saved checkpoint on the validation and test splits.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out-dir>/best.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Learning rate × parameter budget grid from the config's "grid" section.
    Grid(Common),
    /// One trial per dropout rate (the config's "dropout_rates", default 0.0..0.9).
    DropoutSweep(Common),
    /// Standard RRU against its five variants.
    Ablation(Common),
    /// Finite-difference check of every cell on random small shapes.
    Gradcheck {
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Hidden size that meets a parameter budget.
    ParamSolve(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shipped preset to use instead of --config (e.g. adding, jsb, sotu_char).
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["rru", "gru", "lstm", "mogrifier"])]
    cell: Option<String>,
    /// RRU variant: standard, no_norm, scalar_rezero, relu_output, s_fixed_one, s_const_init.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    target_params: Option<usize>,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    /// Concurrent trials in sweeps.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut exp = match (&self.config, &self.dataset) {
            (Some(path), None) => ExperimentConfig::load(path)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (Some(_), Some(_)) => return Err(HarnessError::Config("give --config or --dataset, not both".into())),
            (None, None) => {
                return Err(HarnessError::Config(
                    "give --config <file> or --dataset <preset>".into(),
                ))
            }
        };
        let overrides = Overrides {
            seed: self.seed,
            cell: self.cell.as_deref().map(str::parse::<CellKind>).transpose()?,
            variant: self
                .variant
                .as_deref()
                .map(str::parse::<RruVariant>)
                .transpose()
                .map_err(|e| HarnessError::Config(e.to_string()))?,
            learning_rate: self.lr,
            dropout_rate: self.dropout,
            target_params: self.target_params,
        };
        overrides.apply(&mut exp.trial)?;
        Ok(exp)
    }

    fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            out_dir: self.out_dir.clone(),
            jobs: self.jobs,
            progress: !self.quiet,
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(common) => {
            let exp = common.experiment()?;
            let opts = RunOptions {
                out_dir: Some(common.out_dir.clone()),
                progress: !common.quiet,
            };
            let record = run_trial(&exp.trial, &opts)?;
            print_json(&record);
            if let Some(reason) = &record.failure {
                eprintln!("training failed: {reason}");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Eval { common, checkpoint } => {
            let exp = common.experiment()?;
            let ckpt = checkpoint.unwrap_or_else(|| common.out_dir.join(CHECKPOINT_FILE));
            let (valid, test) = evaluate_checkpoint(&exp.trial, &ckpt)?;
            print_json(&serde_json::json!({
                "valid": valid.loss,
                "valid_accuracy": valid.accuracy,
                "test": test.loss,
                "test_accuracy": test.accuracy,
            }));
        }
        Command::Grid(common) => {
            let exp = common.experiment()?;
            let axes = exp
                .grid
                .ok_or_else(|| HarnessError::Config("config has no \"grid\" section".into()))?;
            let out = run_grid(&exp.trial, &axes, &common.sweep_options())?;
            eprintln!(
                "{} trials trained, {} reused; wrote {GRID_LOSS_FILE} and {GRID_EPOCHS_FILE}",
                out.sweep.trained, out.sweep.reused
            );
        }
        Command::DropoutSweep(common) => {
            let exp = common.experiment()?;
            let rates = exp.dropout_rates.unwrap_or_else(default_dropout_rates);
            let out = run_dropout_sweep(&exp.trial, &rates, &common.sweep_options())?;
            eprintln!(
                "{} trials trained, {} reused; wrote {SWEEP_FILE}",
                out.trained, out.reused
            );
        }
        Command::Ablation(common) => {
            let exp = common.experiment()?;
            let out = run_ablation_suite(&exp.trial, &common.sweep_options())?;
            eprintln!(
                "{} trials trained, {} reused; wrote {ABLATION_FILE}",
                out.trained, out.reused
            );
        }
        Command::Gradcheck { seed, seeds } => {
            let mut failed = 0;
            for s in seed..seed + seeds {
                for case in suite_cases(s) {
                    let report = run_suite_case(&case, s)?;
                    let verdict = if report.passed() { "PASS" } else { "FAIL" };
                    println!(
                        "{verdict} {:<14} seed {s:<3} max rel {:.2e}",
                        case.label,
                        report.max_rel_error()
                    );
                    if !report.passed() {
                        failed += 1;
                        println!("{report}");
                    }
                }
            }
            if failed > 0 {
                eprintln!("{failed} checks failed");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::ParamSolve(common) => {
            let exp = common.experiment()?;
            let cfg = &exp.trial;
            let data = TrialData::load(cfg)?;
            let (model, n) = build_model_config(cfg, &data.shape())?;
            print_json(&serde_json::json!({
                "hidden_size": n,
                "params": model.count_params(),
                "target_params": cfg.target_params,
            }));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
