use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use conformal_rigidity::config::{BasisFile, RunConfig};
use conformal_rigidity::pipeline::GridSpec;
use conformal_rigidity::suites::{suite, SuiteReport};
use conformal_rigidity::Error;

#[derive(Parser)]
#[command(name = "confrig", version, about = "Verification suites for conformal Baumslag-Solitar actions on spheres")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify exactness of the deformation complex on random or given bases.
    Exactness(Opts),
    /// Closed-loop recovery of perturbed actions.
    Simulate(Opts),
    /// Decide whether --basis and --against give conjugate actions.
    Classify(Opts),
    /// Jet identities and closed-form jets against finite differences.
    Jets(Opts),
    /// Defining relations of the standard and perturbed actions.
    Relations(Opts),
}

#[derive(Args)]
struct Opts {
    /// Sphere dimension; taken from --basis when omitted, 2 otherwise.
    #[arg(long)]
    n: Option<usize>,
    /// Dilation factor of the generator a.
    #[arg(long, default_value_t = 2)]
    k: u32,
    /// Basis as inline JSON or a file: {"n": 2, "columns": [[..], [..]]}.
    #[arg(long)]
    basis: Option<String>,
    /// Second basis for classify, same format as --basis.
    #[arg(long)]
    against: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Main tolerance: rank cutoff for exactness, conformality cutoff for
    /// simulate and classify, residual threshold for jets and relations.
    #[arg(long)]
    tol: Option<f64>,
    /// Base step of the finite-difference jets.
    #[arg(long)]
    fd_step: Option<f64>,
    /// Conjugacy test grid as POINTS:HALF_WIDTH.
    #[arg(long)]
    grid: Option<GridSpec>,
    /// Perturbation size, at most 0.1.
    #[arg(long)]
    eps: Option<f64>,
    /// Perturbation family: none, conformal, bump or mixed.
    #[arg(long)]
    perturbation: Option<String>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<String>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn build_config(name: &str, o: &Opts) -> Result<RunConfig, Error> {
    let basis = o.basis.as_deref().map(BasisFile::load).transpose()?;
    let against = o.against.as_deref().map(BasisFile::load).transpose()?;
    let n = o.n.or(basis.as_ref().map(|b| b.n)).or(against.as_ref().map(|b| b.n)).unwrap_or(2);
    let mut c = RunConfig::new(name, n);
    c.k = o.k;
    c.basis = basis.map(|b| b.columns);
    c.against = against.map(|b| b.columns);
    c.seed = o.seed;
    c.trials = o.trials;
    if let Some(t) = o.tol {
        match name {
            "exactness" => c.rank_tol = t,
            "simulate" | "classify" => c.classify_tol = t,
            _ => c.residual_tol = t,
        }
    }
    if let Some(h) = o.fd_step {
        c.fd_step = h;
    }
    if let Some(g) = o.grid {
        c.grid = g;
    }
    if let Some(e) = o.eps {
        c.eps = e;
    }
    if let Some(p) = &o.perturbation {
        c.perturbation = p.clone();
    }
    c.validate()?;
    Ok(c)
}

fn summary(report: &SuiteReport) -> String {
    let mut s = format!(
        "{}: {} ({} trial{}, max residual {:.3e})",
        report.command,
        if report.aggregate.pass { "pass" } else { "FAIL" },
        report.trials.len(),
        if report.trials.len() == 1 { "" } else { "s" },
        report.aggregate.max_residual
    );
    if report.command == "classify" {
        let v = &report.trials[0]["verdict"];
        s.push_str(&format!(
            "\nconjugate: {}\nc: {}\nT: {}\nresidual: {:.3e}",
            v["conjugate"], v["c"], v["t"], v["residual"].as_f64().unwrap_or(f64::NAN)
        ));
    }
    s
}

fn run(name: &str, opts: &Opts) -> Result<bool, Failure> {
    let config = build_config(name, opts).map_err(|e| Failure::Usage(e.to_string()))?;
    let start = Instant::now();
    let report = suite(name)
        .and_then(|s| s.run(&config))
        .map_err(|e| match e {
            Error::Parameter(_) | Error::Singular(_) | Error::DimensionMismatch { .. } => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        })?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match &opts.out {
        Some(path) => {
            fs::write(path, json).map_err(|e| Failure::Usage(format!("cannot write '{path}': {e}")))?;
            println!("{}", summary(&report));
        }
        None => {
            print!("{json}");
            eprintln!("{}", summary(&report));
        }
    }
    eprintln!("elapsed: {:.2} s", start.elapsed().as_secs_f64());
    Ok(report.aggregate.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, opts) = match &cli.command {
        Command::Exactness(o) => ("exactness", o),
        Command::Simulate(o) => ("simulate", o),
        Command::Classify(o) => ("classify", o),
        Command::Jets(o) => ("jets", o),
        Command::Relations(o) => ("relations", o),
    };
    match run(name, opts) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
