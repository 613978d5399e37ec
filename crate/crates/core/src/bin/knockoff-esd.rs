use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use knockoff_esd::esd::{esd_ci_tree, esd_equi, esd_knockoff_generic, esd_lasso, EsdReport};
use knockoff_esd::gaussian::build_cov;
use knockoff_esd::knockoff::{ci_exists, KnockoffSpec, Mechanism};
use knockoff_esd::sim::{self, format_sig, parse_config};
use knockoff_esd::Error;

#[derive(Parser)]
#[command(
    name = "knockoff-esd",
    version,
    about = "Knockoff filter simulations and ESD diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo experiment and write one CSV row per trial and mechanism.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (defaults to the number of CPUs).
        #[arg(long)]
        workers: Option<usize>,
        /// Print a per-mechanism summary to stderr.
        #[arg(long)]
        summary: bool,
    },
    /// Write the ESD report of every procedure for the configured covariance.
    Esd {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scale: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the knockoff s-vector and feasibility margins for one mechanism.
    Check {
        #[arg(long)]
        mechanism: Mechanism,
        #[arg(long)]
        config: PathBuf,
        /// Also write s, one value per line.
        #[arg(long)]
        s_out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            out,
            workers,
            summary,
        } => simulate(config, out, workers, summary),
        Command::Esd { config, scale, out } => esd(config, scale, out),
        Command::Check {
            mechanism,
            config,
            s_out,
        } => check(mechanism, config, s_out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else if e.is_io() {
                ExitCode::from(1)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn simulate(config: PathBuf, out: PathBuf, workers: Option<usize>, summary: bool) -> Result<(), Error> {
    let cfg = parse_config(&config)?;
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let output = sim::run_experiment(&cfg, workers)?;
    sim::write_csv(&output.records, &out)?;
    if summary {
        eprintln!("mechanism,trials,mean_fdp,se_fdp,median_fdp,mean_tpp,median_tpp,q1_tpp,q3_tpp");
        for s in &output.summary {
            eprintln!(
                "{},{},{},{},{},{},{},{},{}",
                s.mechanism,
                s.fdp.count,
                format_sig(s.fdp.mean),
                format_sig(s.fdp.se),
                format_sig(s.fdp.median),
                format_sig(s.tpp.mean),
                format_sig(s.tpp.median),
                format_sig(s.tpp.q1),
                format_sig(s.tpp.q3)
            );
        }
    }
    Ok(())
}

fn esd(config: PathBuf, scale: f64, out: PathBuf) -> Result<(), Error> {
    let cfg = parse_config(&config)?;
    let cov = build_cov(&cfg.cov_model()?)?;
    let p = cov.dim();
    let mut reports: Vec<EsdReport> = vec![esd_lasso(&cov, scale)?];
    for &mechanism in &cfg.mechanisms {
        let spec = KnockoffSpec::for_mechanism(&cov, mechanism)?;
        reports.push(esd_knockoff_generic(&spec, scale)?);
    }
    reports.push(esd_equi(&cov)?);
    match esd_ci_tree(&cov, scale) {
        Ok(r) => reports.push(r),
        Err(Error::NotForest(reason)) => eprintln!("skipping ci_tree: {reason}"),
        Err(e) => return Err(e),
    }

    let mut text = String::from("procedure,p,scale,lp,min_value,median_value,max_value\n");
    for r in &reports {
        writeln!(
            text,
            "{},{},{},{},{},{},{}",
            r.procedure,
            p,
            format_sig(r.scale),
            format_sig(r.lp),
            format_sig(r.min_value()),
            format_sig(r.median_value()),
            format_sig(r.max_value())
        )
        .expect("writing to a String");
    }
    std::fs::write(out, text)?;
    Ok(())
}

fn check(mechanism: Mechanism, config: PathBuf, s_out: Option<PathBuf>) -> Result<(), Error> {
    let cfg = parse_config(&config)?;
    let cov = build_cov(&cfg.cov_model()?)?;
    let mut out = String::new();
    writeln!(out, "mechanism: {mechanism}").unwrap();
    writeln!(out, "p: {}", cov.dim()).unwrap();
    writeln!(out, "lambda_min(Sigma): {}", format_sig(cov.min_eigenvalue())).unwrap();

    if mechanism == Mechanism::Ci {
        let e = ci_exists(&cov)?;
        writeln!(out, "ci_exists: {}", if e.exists { "yes" } else { "no" }).unwrap();
        writeln!(out, "ci_witness_pivot: {}", format_sig(e.witness_pivot)).unwrap();
        if let Some(j) = e.failing_index {
            writeln!(out, "ci_failing_index: {j}").unwrap();
        }
        writeln!(out, "tree_pattern: {}", e.tree_pattern).unwrap();
        writeln!(out, "diagonally_dominant: {}", e.diagonally_dominant).unwrap();
    }

    let spec = match KnockoffSpec::for_mechanism(&cov, mechanism) {
        Ok(spec) => spec,
        Err(e @ Error::Infeasible { .. }) => {
            writeln!(out, "feasible: no").unwrap();
            emit(&out);
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    writeln!(out, "feasible: yes").unwrap();
    writeln!(out, "shrink: {}", format_sig(spec.shrink())).unwrap();
    writeln!(out, "min_pivot(2Sigma - diag(s)): {}", format_sig(spec.gap_min_pivot())).unwrap();
    writeln!(
        out,
        "lambda_min(2Sigma - diag(s)): {}",
        format_sig(spec.gap_min_eigenvalue())
    )
    .unwrap();
    let s: Vec<String> = spec.s().iter().map(|&v| format_sig(v)).collect();
    writeln!(out, "s: {}", s.join(",")).unwrap();
    emit(&out);
    if let Some(path) = s_out {
        let mut text = s.join("\n");
        text.push('\n');
        std::fs::write(path, text)?;
    }
    Ok(())
}

/// Writes to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("error: writing to stdout: {e}");
        }
    }
}
