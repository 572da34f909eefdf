//! `dtec`: simulate data, train, evaluate, run the ablation and export figures.
//!
//! Exit codes: 0 on success, 2 on a configuration error, 3 when training
//! aborts on a non-finite loss, 1 for anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use candle_core::Device;
use clap::{Args, Parser, Subcommand};
use dtec_core::ablate::run_ablation;
use dtec_core::data::{load_held_out, load_pools, split_dataset, HeldOut, UnpairedPools};
use dtec_core::eval::{evaluate, summary_csv, summary_table};
use dtec_core::figures::export_figures;
use dtec_core::train::{train, Model};
use dtec_core::{Error, TrainConfig};
use dtec_ctsim::dataset::{simulate_dataset, write_dataset};

#[derive(Parser)]
#[command(name = "dtec", version, about = "Unsupervised metal artifact reduction on simulated CT")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `sim.seed` for `simulate`, `train.seed` otherwise.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct DataArg {
    /// Dataset written by `simulate`; simulated in memory from `sim.*` when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate phantoms, corrupt them and write a dataset directory.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train on the unpaired pools, then score the held-out split.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Score input, LI and a checkpoint on the held-out split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and score the five ablation variants under one seed.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Write comparison panels for held-out cases.
    ExportFigures {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of held-out cases to draw (all when absent).
        #[arg(long)]
        cases: Option<usize>,
        /// Pixel upscaling factor.
        #[arg(long, default_value_t = 3)]
        scale: usize,
    },
}

fn load_config(common: &Common) -> Result<TrainConfig, Error> {
    match &common.config {
        Some(path) => TrainConfig::from_file(path),
        None => Ok(TrainConfig::default()),
    }
}

fn finish(cfg: &mut TrainConfig, f: impl FnOnce(&mut TrainConfig)) -> Result<(), Error> {
    f(cfg);
    cfg.validate()
}

/// Held-out cases and the training view, from disk or simulated.
fn dataset(cfg: &TrainConfig, data: &DataArg) -> Result<(UnpairedPools, HeldOut, usize), Error> {
    match data.data.as_ref().or(cfg.data_dir.as_ref()) {
        Some(dir) => {
            let pools = load_pools(dir)?;
            let (held, n_angles) = load_held_out(dir)?;
            Ok((pools, held, n_angles))
        }
        None => {
            log::info!("simulating {} cases in memory", cfg.sim.count);
            let (pools, held) = split_dataset(simulate_dataset(&cfg.sim)?)?;
            Ok((pools, held, cfg.sim.n_angles))
        }
    }
}

fn held_out(cfg: &TrainConfig, data: &DataArg) -> Result<(HeldOut, usize), Error> {
    match data.data.as_ref().or(cfg.data_dir.as_ref()) {
        Some(dir) => load_held_out(dir),
        None => {
            let cases = simulate_dataset(&cfg.sim)?;
            Ok((HeldOut::from_cases(cases), cfg.sim.n_angles))
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn report(out: &Path, model: Option<&Model>, held: &HeldOut, n_angles: usize, include_metal: bool) -> Result<(), Error> {
    let rep = evaluate(model, held, n_angles, include_metal)?;
    let summary = rep.summary();
    write(&out.join("eval.csv"), &summary_csv(&summary))?;
    write(&out.join("eval_cases.csv"), &rep.cases_csv())?;
    let table = summary_table(&summary);
    write(&out.join("eval.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let device = Device::Cpu;
    match cli.command {
        Command::Simulate { common, size, count } => {
            let mut cfg = load_config(&common)?;
            finish(&mut cfg, |c| {
                if let Some(s) = common.seed {
                    c.sim.seed = s;
                }
                if let Some(s) = size {
                    c.sim.size = s;
                }
                if let Some(n) = count {
                    c.sim.count = n;
                    c.sim.test_count = c.sim.test_count.min(n);
                }
            })?;
            let cases = simulate_dataset(&cfg.sim)?;
            write_dataset(&common.out, &cfg.sim, &cases)?;
            write(&common.out.join("config.txt"), &cfg.to_text())?;
            println!("{} cases written to {}", cases.len(), common.out.display());
        }
        Command::Train { common, data, iterations } => {
            let mut cfg = load_config(&common)?;
            finish(&mut cfg, |c| {
                if let Some(s) = common.seed {
                    c.seed = s;
                }
                if let Some(n) = iterations {
                    c.iterations = n;
                }
            })?;
            std::fs::create_dir_all(&common.out)?;
            write(&common.out.join("config.txt"), &cfg.to_text())?;
            let (pools, held, n_angles) = dataset(&cfg, &data)?;
            let outcome = train(&cfg, &pools, Some(&common.out), &device)?;
            report(&common.out, Some(&outcome.model), &held, n_angles, cfg.include_metal)?;
        }
        Command::Eval { common, data, checkpoint } => {
            let cfg = load_config(&common)?;
            std::fs::create_dir_all(&common.out)?;
            let model = Model::load(&checkpoint, &device)?;
            let (held, n_angles) = held_out(&cfg, &data)?;
            report(&common.out, Some(&model), &held, n_angles, cfg.include_metal)?;
        }
        Command::Ablate { common, data, iterations } => {
            let mut cfg = load_config(&common)?;
            finish(&mut cfg, |c| {
                if let Some(s) = common.seed {
                    c.seed = s;
                }
                if let Some(n) = iterations {
                    c.iterations = n;
                }
            })?;
            std::fs::create_dir_all(&common.out)?;
            let (pools, held, n_angles) = dataset(&cfg, &data)?;
            let rep = run_ablation(&cfg, &pools, &held, n_angles, &device, |row| {
                log::info!("{}: PSNR {:.2} SSIM {:.4} MSE {:.3}", row.model, row.psnr, row.ssim, row.mse);
            })?;
            write(&common.out.join("ablation.csv"), &rep.to_csv())?;
            write(&common.out.join("ablation.txt"), &rep.to_table())?;
            print!("{}", rep.to_table());
        }
        Command::ExportFigures { common, data, checkpoint, cases, scale } => {
            let cfg = load_config(&common)?;
            if scale == 0 {
                return Err(Error::Config("--scale must be >= 1".into()));
            }
            let model = Model::load(&checkpoint, &device)?;
            let (mut held, n_angles) = held_out(&cfg, &data)?;
            if let Some(n) = cases {
                held.cases.truncate(n);
            }
            let paths = export_figures(&model, &held, n_angles, &common.out, scale)?;
            println!("{} figures written to {}", paths.len(), common.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Numerical(_) => 3,
                _ => 1,
            })
        }
    }
}
