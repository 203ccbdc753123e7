use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use mstl_core::data::{generate_synthetic, write_dense_csv, DomainDataset, SyntheticConfig};
use mstl_core::harness::{
    prepare_trial, run_active_experiment, run_transfer_experiment, sweep_mu, DatasetSpec,
    ExperimentConfig,
};
use mstl_core::report::{write_active, write_mu_sweep, write_transfer};

#[derive(Debug, Parser)]
#[command(
    name = "mstl",
    version,
    about = "Multi-source transfer and active learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory; created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Overrides `master_seed` from the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads for trials; 1 runs sequentially.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Only log errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// Write one synthetic draw (trial 0) as CSV domains.
    Synth,
    /// Compare transfer methods over repeated trials.
    Transfer,
    /// Compare active-learning strategies over repeated trials.
    Active,
    /// Evaluate the ensemble over the config's `mu_grid`.
    SweepMu,
    /// Solve the matching weights for trial 0 and dump them.
    KmmAudit,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Transfer => "transfer",
            Command::Active => "active",
            Command::SweepMu => "sweep-mu",
            Command::KmmAudit => "kmm-audit",
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read config {path}: {source}")]
    ReadConfig {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    BadConfig { path: PathBuf, message: String },
    #[error("cannot write to output directory {path}: {source}")]
    OutputDir {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Run(#[from] mstl_core::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Run(_) | CliError::Io(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Serialize)]
struct RunMeta<'a> {
    subcommand: &'a str,
    tool_version: &'a str,
    master_seed: u64,
    trial_seeds: Vec<u64>,
    config: &'a ExperimentConfig,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet {
        "error"
    } else {
        "info"
    }))
    .format_timestamp(None)
    .init();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Usage("--config PATH is required".into()))?;
    let mut cfg = load_config(config_path)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    cfg.validate().map_err(|e| CliError::BadConfig {
        path: config_path.to_path_buf(),
        message: e.to_string(),
    })?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    }

    let out = cli.out.as_path();
    fs::create_dir_all(out).map_err(|source| CliError::OutputDir {
        path: out.to_path_buf(),
        source,
    })?;
    write_meta(cli.command, &cfg, out)?;

    match cli.command {
        Command::Synth => synth(&cfg, out)?,
        Command::Transfer => {
            let report = run_transfer_experiment(&cfg)?;
            write_transfer(&report, out)?;
            if !cli.quiet {
                for m in &report.summary.methods {
                    println!("{:<10} {:.4} ± {:.4}", m.method, m.mean, m.std);
                }
            }
        }
        Command::Active => {
            let report = run_active_experiment(&cfg)?;
            write_active(&report, out)?;
            if !cli.quiet {
                for row in &report.aulc {
                    println!("{:<15} AULC {:.4}", row.strategy.to_string(), row.aulc);
                }
            }
        }
        Command::SweepMu => {
            let report = sweep_mu(&cfg, &cfg.mu_grid)?;
            write_mu_sweep(&report, out)?;
            if !cli.quiet {
                for p in &report.points {
                    println!("mu {:.2}  {:.4} ± {:.4}", p.mu, p.mean, p.std);
                }
            }
        }
        Command::KmmAudit => kmm_audit(&cfg, out)?,
    }
    log::info!(
        "{} finished; outputs in {}",
        cli.command.name(),
        out.display()
    );
    Ok(())
}

/// Parses the config and resolves relative CSV paths against the config's
/// directory.
fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::ReadConfig {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::BadConfig {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    if let DatasetSpec::Csv(csv) = &mut cfg.dataset {
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        csv.sources.iter_mut().for_each(resolve);
        resolve(&mut csv.target);
        if let Some(t) = csv.target_test.as_mut() {
            resolve(t);
        }
    }
    Ok(cfg)
}

fn write_meta(command: Command, cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let meta = RunMeta {
        subcommand: command.name(),
        tool_version: env!("CARGO_PKG_VERSION"),
        master_seed: cfg.master_seed,
        trial_seeds: (0..cfg.trials).map(|t| cfg.trial_seed(t)).collect(),
        config: cfg,
    };
    let path = out.join("run_meta.json");
    let output_err = |source| CliError::OutputDir {
        path: out.to_path_buf(),
        source,
    };
    let mut file = BufWriter::new(File::create(&path).map_err(output_err)?);
    serde_json::to_writer_pretty(&mut file, &meta).map_err(|e| CliError::Io(e.into()))?;
    writeln!(file)?;
    file.flush()?;
    Ok(())
}

fn write_domain(
    domain: &DomainDataset,
    path: PathBuf,
    include_hidden: bool,
) -> Result<(), CliError> {
    let mut file = BufWriter::new(File::create(path)?);
    write_dense_csv(domain, &mut file, include_hidden)?;
    file.flush()?;
    Ok(())
}

fn synth(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let DatasetSpec::Synthetic(synthetic) = &cfg.dataset else {
        return Err(CliError::Usage(
            "synth needs a synthetic dataset config".into(),
        ));
    };
    let generated = generate_synthetic(&SyntheticConfig {
        seed: cfg.trial_seed(0),
        ..synthetic.clone()
    })?;
    for (k, source) in generated.sources.iter().enumerate() {
        write_domain(source, out.join(format!("source{k}.csv")), true)?;
    }
    let target = &generated.target;
    let test = DomainDataset::new("target_test", target.labeled.clone(), Vec::new(), None)?;
    let pool = DomainDataset::new("target_pool", Vec::new(), target.unlabeled.clone(), None)?;
    write_domain(&test, out.join("target_test.csv"), false)?;
    write_domain(&pool, out.join("target_pool.csv"), false)?;
    Ok(())
}

fn kmm_audit(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let data = prepare_trial(cfg, 0)?;
    let mut summary = BufWriter::new(File::create(out.join("kmm_summary.csv"))?);
    writeln!(
        summary,
        "source,fraction,n_labeled,n_total,mmd,weighted_mmd,objective,iterations,converged,kkt_residual,bandwidth"
    )?;
    for (k, (source, solution)) in data.sources.iter().zip(&data.alphas).enumerate() {
        let mut file = BufWriter::new(File::create(out.join(format!("alpha_source{k}.csv")))?);
        solution.write_csv(&mut file, source.labeled.len())?;
        file.flush()?;
        writeln!(
            summary,
            "{},{:.6},{},{},{:.9},{:.9},{:.9},{},{},{:.3e},{:.6}",
            k,
            data.fractions[k],
            source.labeled.len(),
            source.len(),
            data.mmd[k],
            solution.weighted_mmd,
            solution.objective,
            solution.iterations,
            solution.converged,
            solution.kkt_residual,
            data.kernel.bandwidth,
        )?;
    }
    summary.flush()?;
    Ok(())
}
