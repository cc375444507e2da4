use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stripres::config::{parse_spacings, ExperimentConfig};
use stripres::output::{resonance_rows, write_run};
use stripres::pipeline::{self, RunOutput};
use stripres::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "stripres", version, about = "Resonances of distant multi-well perturbations on a Dirichlet strip")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured sweep and write all artifacts.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run with an explicit spacing list and print the consolidated table.
    Sweep {
        config: PathBuf,
        /// Entries separated by ';', e.g. "2,2;4,4;6,6" or "2,2,3,3;4,4,5,5" for one pair per connector.
        #[arg(long)]
        spacings: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Output directory (overrides output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of transverse modes (overrides cross_section.modes).
    #[arg(long)]
    modes: Option<usize>,
    /// Samples per background period (overrides grid.cell_points).
    #[arg(long)]
    grid: Option<usize>,
    /// Seed of the gauge-invariance shuffle.
    #[arg(long)]
    seed: Option<u64>,
    /// Run the invariant checks only; write nothing.
    #[arg(long)]
    check: bool,
    /// Parallel sweep entries.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn load(path: &Path, common: &Common, spacings: Option<&str>) -> stripres::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(m) = common.modes {
        cfg.cross_section.modes = m;
    }
    if let Some(g) = common.grid {
        cfg.grid.cell_points = g;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(dir) = &common.out {
        cfg.output_dir = dir.display().to_string();
    }
    if let Some(text) = spacings {
        cfg.sweep = parse_spacings(text)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn check_only(cfg: &ExperimentConfig) -> stripres::Result<bool> {
    let p = pipeline::prepare(cfg)?;
    for c in &p.checks {
        println!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(p.checks.iter().all(|c| c.passed))
}

fn print_run(out: &RunOutput) {
    let p = &out.prepared;
    println!("lambda0 = {:.12}  N = {}", p.lambda0, p.size());
    for r in &out.results {
        let roots: Vec<String> = r.resonance.located.iter().map(|x| format!("{:.12e}{:+.3e}i", x.value.re, x.value.im)).collect();
        println!("spacings {}: eta = {:.3e}, roots [{}]", r.label, r.interaction.scales.eta, roots.join(", "));
    }
    println!("{}", out.verdict());
}

fn print_table(out: &RunOutput) {
    println!(
        "{:<12} {:>12} {:>22} {:>12} {:>22} {:>11} {:>11}",
        "spacings", "spacing_min", "re_lambda", "im_lambda", "predicted_re", "residual", "eta"
    );
    for r in resonance_rows(&out.results) {
        println!(
            "{:<12} {:>12.6} {:>22.15e} {:>12.4e} {:>22.15e} {:>11.3e} {:>11.3e}",
            r.spacings, r.spacing_min, r.re_lambda, r.im_lambda, r.predicted_re, r.residual, r.eta
        );
    }
    if out.results.len() >= 3 {
        match (&out.rate_fit, &out.rate_fit_note) {
            (Some(f), _) => {
                let mhat = out.prepared.decay.as_ref().map(|d| d.mhat).unwrap_or(f64::NAN);
                println!("rate fit: slope = {:.6} (-mhat = {:.6}), exponent = {:.4}, points = {}", f.slope, -mhat, f.exponent, f.points);
            }
            (None, Some(note)) => println!("rate fit: {note}"),
            (None, None) => {}
        }
    }
}

fn execute(cli: Cli) -> stripres::Result<ExitCode> {
    let (config, common, spacings, table) = match &cli.command {
        Command::Run { config, common } => (config, common, None, false),
        Command::Sweep { config, spacings, common } => (config, common, Some(spacings.as_str()), true),
    };
    let cfg = load(config, common, spacings)?;
    if common.check {
        return Ok(if check_only(&cfg)? { ExitCode::SUCCESS } else { ExitCode::from(4) });
    }
    let out = pipeline::run(&cfg, common.jobs)?;
    let dir = PathBuf::from(&cfg.output_dir);
    write_run(&out, &dir)?;
    if table {
        print_table(&out);
    } else {
        print_run(&out);
    }
    log::info!("artifacts written to {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn diagnostic(e: &Error) -> String {
    let kind = match e.kind() {
        ErrorKind::Config => "config",
        ErrorKind::Assumption => "assumption",
        ErrorKind::Numerical => "numerical",
    };
    let message = e.to_string().replace('"', "'");
    format!(
        "error kind={kind} code={} background={} message=\"{message}\"",
        e.code(),
        e.background().unwrap_or("-")
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", diagnostic(&e));
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Assumption => 3,
                ErrorKind::Numerical => 4,
            })
        }
    }
}
