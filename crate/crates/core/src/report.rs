//! CSV writers for experiment outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::active::write_query_log;
use crate::error::Result;
use crate::harness::{ActiveReport, MuSweepReport, TransferReport};

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn fmt_p(p: Option<f64>) -> String {
    match p {
        Some(v) if v.is_finite() => format!("{v:.6e}"),
        _ => String::new(),
    }
}

/// `transfer_summary.csv` and `transfer_trials.csv`.
pub fn write_transfer(report: &TransferReport, dir: &Path) -> Result<()> {
    let mut out = create(dir, "transfer_summary.csv")?;
    writeln!(out, "method,mean,std")?;
    for m in &report.summary.methods {
        writeln!(out, "{},{:.6},{:.6}", m.method, m.mean, m.std)?;
    }
    out.flush()?;

    let mut out = create(dir, "transfer_trials.csv")?;
    writeln!(out, "trial,method,accuracy")?;
    for t in &report.trials {
        for (method, acc) in &t.accuracies {
            writeln!(out, "{},{},{:.6}", t.trial, method, acc)?;
        }
    }
    out.flush()?;

    let mut out = create(dir, "transfer_pvalues.csv")?;
    writeln!(out, "method_a,method_b,p_value")?;
    for p in &report.summary.p_values {
        writeln!(out, "{},{},{}", p.a, p.b, fmt_p(Some(p.p_value)))?;
    }
    out.flush()?;
    Ok(())
}

/// `mu_sweep.csv`.
pub fn write_mu_sweep(report: &MuSweepReport, dir: &Path) -> Result<()> {
    let mut out = create(dir, "mu_sweep.csv")?;
    writeln!(out, "mu,mean,std")?;
    for p in &report.points {
        writeln!(out, "{:.6},{:.6},{:.6}", p.mu, p.mean, p.std)?;
    }
    out.flush()?;
    Ok(())
}

/// `active_curves.csv`, `aulc.csv` and `query_log.csv`.
pub fn write_active(report: &ActiveReport, dir: &Path) -> Result<()> {
    let mut out = create(dir, "active_curves.csv")?;
    writeln!(out, "strategy,t,mean_accuracy,std")?;
    for (strategy, points) in &report.curves {
        for p in points {
            writeln!(out, "{},{},{:.6},{:.6}", strategy, p.t, p.mean, p.std)?;
        }
    }
    out.flush()?;

    let mut out = create(dir, "aulc.csv")?;
    writeln!(out, "strategy,aulc,p_vs_random")?;
    for row in &report.aulc {
        writeln!(
            out,
            "{},{:.6},{}",
            row.strategy,
            row.aulc,
            fmt_p(row.p_vs_random)
        )?;
    }
    out.flush()?;

    let mut out = create(dir, "query_log.csv")?;
    writeln!(out, "trial,strategy,t,k,index,P,label")?;
    for trial in &report.trials {
        for (strategy, log) in &trial.query_logs {
            let mut buf = Vec::new();
            write_query_log(log, &mut buf)?;
            let text = String::from_utf8(buf).expect("ascii");
            for line in text.lines().skip(1) {
                writeln!(out, "{},{},{}", trial.trial, strategy, line)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
