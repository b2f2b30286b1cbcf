use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use scvae::data::{synth_dataset, write_split_idx};
use scvae::eval::export_latents;
use scvae::fisher::{recurrence_check, to_csv};
use scvae::harness::{
    evaluate, load_dataset, load_model, ols_slope, parse_config, probe, probe_inputs, run_depth_sweep, run_table1,
    spearman, train, DatasetSpec, RunConfig,
};
use scvae::{Error, Result};

#[derive(Parser)]
#[command(name = "scvae", version, about = "Train and probe (skip-connected) VAEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its checkpoint, logs and metrics.
    Train { config: PathBuf },
    /// Test NLL and latent classification accuracy of a checkpoint.
    Eval { checkpoint: PathBuf, config: PathBuf },
    /// Per-layer Fisher Information of a checkpoint on the probe batch (CSV on stdout).
    Fisher { checkpoint: PathBuf, config: PathBuf },
    /// Train every (depth, skip mode) pair and write sweep.csv.
    Sweep { config: PathBuf },
    /// Train every preset for every seed and write the comparison table.
    Table1 { config: PathBuf },
    /// Write test-set posterior means and log variances as CSV.
    ExportLatents {
        checkpoint: PathBuf,
        config: PathBuf,
        out: PathBuf,
    },
    /// Write the configured synthetic dataset as IDX files.
    Synth { config: PathBuf, out_dir: PathBuf },
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config } => {
            let cfg = read_config(&config)?;
            let log = train(&cfg)?;
            let last = log.records.last();
            println!("run {}", log.run_id);
            if let Some(r) = last {
                println!("epoch {}: train elbo {:.4}, val elbo {:.4}", r.epoch, r.train_elbo, r.val_elbo);
            }
            println!("best epoch {}", log.best_epoch);
            println!("nll {:.4} (± {:.4})", log.metrics.nll, log.nll_std_err);
            println!("accuracy {:.4}", log.metrics.accuracy);
            println!("fisher overall {:.6e}", log.final_report().overall_mean);
            println!("artifacts in {}", cfg.output_dir.display());
        }
        Command::Eval { checkpoint, config } => {
            let cfg = read_config(&config)?;
            let split = load_dataset(&cfg.dataset)?;
            let (params, wiring) = load_model(&cfg, &checkpoint)?;
            let (m, se) = evaluate(&cfg, &params, &wiring, &split)?;
            println!("nll {:.4} (± {:.4}, S = {})", m.nll, se, m.n_importance_samples);
            println!("accuracy {:.4}", m.accuracy);
        }
        Command::Fisher { checkpoint, config } => {
            let cfg = read_config(&config)?;
            let split = load_dataset(&cfg.dataset)?;
            let (params, wiring) = load_model(&cfg, &checkpoint)?;
            let report = probe(&cfg, &params, &wiring, &probe_inputs(&cfg, &split)?, cfg.epochs)?;
            print!("{}", to_csv(std::slice::from_ref(&report)));
            let diag = recurrence_check(&report);
            eprintln!(
                "encoder mean {:.6e}, decoder mean {:.6e}, overall {:.6e}, decay rate {:.3}",
                report.encoder_mean, report.decoder_mean, report.overall_mean, diag.decay_rate
            );
        }
        Command::Sweep { config } => {
            let cfg = read_config(&config)?;
            let sweep = run_depth_sweep(&cfg, &cfg.sweep_depths, &cfg.sweep_skip_modes)?;
            print!("{}", fs::read_to_string(&sweep.csv)?);
            for &mode in &cfg.sweep_skip_modes {
                let curve = sweep.curve(mode);
                if curve.len() > 1 {
                    println!(
                        "# {mode}: spearman(depth, FI) = {:.3}, slope = {:.3e}",
                        spearman(&curve),
                        ols_slope(&curve)
                    );
                }
            }
        }
        Command::Table1 { config } => {
            let cfg = read_config(&config)?;
            let table = run_table1(&cfg, &cfg.table1_presets, &cfg.table1_seeds)?;
            print!("{}", fs::read_to_string(&table.text)?);
        }
        Command::ExportLatents { checkpoint, config, out } => {
            let cfg = read_config(&config)?;
            let split = load_dataset(&cfg.dataset)?;
            let (params, wiring) = load_model(&cfg, &checkpoint)?;
            export_latents(&params, &wiring, &split.test, &out)?;
            println!("wrote {} rows to {}", split.test.len(), out.display());
        }
        Command::Synth { config, out_dir } => {
            let cfg = read_config(&config)?;
            let DatasetSpec::Synth(p) = cfg.dataset else {
                return Err(Error::Config("synth needs 'dataset = synth'".into()));
            };
            for f in write_split_idx(&synth_dataset(p)?, &out_dir)? {
                println!("{}", f.display());
            }
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
