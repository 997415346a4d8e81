//! `hetnet`: batch front end for the outage engines and the planner.
//!
//! Exit status is 0 on success, 1 when any result row carries an error and 2
//! when the configuration or the command line is invalid.

mod campaign;
mod config;
mod report;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hetnet_core::model::join_violations;
use hetnet_core::montecarlo::estimate_relative_gap;
use hetnet_core::planner::{build_tradeoff, max_mu2_given_mu1, solve};
use hetnet_core::quadrature::QuadratureSpec;

use campaign::{evaluate, Campaign, Engine, Row};
use config::{Engines, Loaded};

#[derive(Parser, Debug)]
#[command(name = "hetnet", version, about = "Uplink outage analysis and small-cell planning for two-tier networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Network configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for CSV tables and plot scripts; tables go to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<u64>,
    #[arg(long, global = true, value_enum)]
    engine: Option<Engines>,
    /// SIR threshold; repeat for several. Defaults to the campaign thresholds or 0.1.
    #[arg(long = "threshold", global = true)]
    thresholds: Vec<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and check a configuration.
    Validate,
    /// Analytic outage of every UE type and class.
    Analyze,
    /// Simulated outage of every UE type and class.
    Simulate,
    /// Both engines side by side, reporting whether each analytic value lies in the simulated CI.
    Compare,
    /// Run the `[campaign]` sweep and emit CSV plus plot scripts.
    Sweep,
    /// Build the intensity tradeoff from `[plan]` and maximise income.
    Plan,
    /// Income gap under location correlation, from `[plan]` and `[gap]`.
    Gap,
}

/// Failure classes that map onto exit codes.
enum Failure {
    Invalid(anyhow::Error),
    Rows(usize),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Invalid(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Rows(n)) => {
            eprintln!("{n} row(s) reported errors");
            ExitCode::from(1)
        }
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(common: &Common) -> Result<Loaded> {
    let path = common.config.as_ref().context("--config is required")?;
    let loaded = config::load(path)?;
    if let Err(v) = loaded.network.validate() {
        bail!("invalid configuration: {}", join_violations(&v));
    }
    Ok(loaded)
}

fn quadrature() -> Result<QuadratureSpec> {
    QuadratureSpec::from_env().context("HETNET_QUADRATURE")
}

fn thresholds(common: &Common, loaded: &Loaded) -> Vec<f64> {
    if !common.thresholds.is_empty() {
        common.thresholds.clone()
    } else if let Some(c) = &loaded.file.campaign {
        c.thresholds.clone()
    } else {
        vec![0.1]
    }
}

fn sink(out: &Option<PathBuf>, name: &str) -> Result<Box<dyn Write>> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            let p = dir.join(name);
            Ok(Box::new(std::fs::File::create(&p).with_context(|| format!("cannot write {}", p.display()))?))
        }
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn error_count(rows: &[Row]) -> usize {
    rows.iter().filter(|r| r.error.is_some()).count()
}

fn finish_rows(rows: &[Row]) -> Result<(), Failure> {
    match error_count(rows) {
        0 => Ok(()),
        n => Err(Failure::Rows(n)),
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let common = &cli.common;
    match cli.command {
        Command::Validate => {
            let loaded = load(common)?;
            println!("ok {} (UE types: {}, BS types: {})", loaded.hash, loaded.network.tier1.len(), loaded.network.tier2.len());
            Ok(())
        }
        Command::Analyze | Command::Simulate | Command::Compare => {
            let loaded = load(common)?;
            let spec = quadrature()?;
            let (engines, name) = match cli.command {
                Command::Analyze => (Engines::Analytic, "analyze"),
                Command::Simulate => (Engines::Sim, "simulate"),
                _ => (Engines::Both, "compare"),
            };
            let ts = thresholds(common, &loaded);
            if let Some(t) = ts.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
                return Err(anyhow::anyhow!("threshold must be positive and finite, got {t}").into());
            }
            let trials = common.trials.unwrap_or(10_000);
            if engines.sim() && trials < 100 {
                return Err(anyhow::anyhow!("simulation needs at least 100 trials, got {trials}").into());
            }
            let seed = common.seed.unwrap_or(0);
            let rows = evaluate(&loaded.network, None, &ts, engines, trials, seed, &spec, None);
            report::write_results(sink(&common.out, &format!("{name}.csv"))?, &loaded.hash, "none", &rows)?;
            if let Some(dir) = &common.out {
                report::write_timings(sink(&Some(dir.clone()), &format!("{name}.timings.csv"))?, &rows)?;
            }
            if engines == Engines::Both {
                summarize_comparison(&rows);
            }
            finish_rows(&rows)
        }
        Command::Sweep => {
            let loaded = load(common)?;
            let spec = quadrature()?;
            let file = loaded.file.campaign.as_ref().context("configuration has no [campaign] table")?;
            let mut c = Campaign::from_file(file);
            if let Some(e) = common.engine {
                c.engines = e;
            }
            if let Some(t) = common.trials {
                c.trials = t;
            }
            if let Some(s) = common.seed {
                c.seed = s;
            }
            if !common.thresholds.is_empty() {
                c.thresholds = common.thresholds.clone();
            }
            c.check(&loaded.network)?;
            let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let rows = campaign::run(&loaded.network, &c, &spec);
            let files = report::emit_sweep(&dir, &c.name, &loaded.hash, &file.axis.name(), &rows)?;
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            finish_rows(&rows)
        }
        Command::Plan => {
            let loaded = load(common)?;
            let spec = quadrature()?;
            let (targets, utilities) = loaded.file.planning_targets()?;
            let sys = build_tradeoff(&loaded.network, &targets, &spec).map_err(anyhow::Error::from)?;
            report::write_tradeoff(sink(&common.out, "tradeoff.csv")?, &loaded.hash, &sys)?;
            let sol = solve(&sys, &utilities).map_err(anyhow::Error::from)?;
            let text = report::plan_report(&sys, &sol);
            match &common.out {
                Some(dir) => {
                    report::write_plan(sink(&common.out, "plan.csv")?, &loaded.hash, &sys, &sol)?;
                    std::fs::write(dir.join("plan.txt"), &text).context("writing plan.txt")?;
                    print!("{text}");
                }
                None => {
                    report::write_plan(sink(&None, "")?, &loaded.hash, &sys, &sol)?;
                    eprint!("{text}");
                }
            }
            let grid = &loaded.file.plan.as_ref().map(|p| p.frontier_mu1.clone()).unwrap_or_default();
            if !grid.is_empty() {
                let mu2 = max_mu2_given_mu1(&sys, grid).map_err(anyhow::Error::from)?;
                report::write_frontier(sink(&common.out, "frontier.csv")?, &loaded.hash, grid, &mu2)?;
            }
            Ok(())
        }
        Command::Gap => {
            let loaded = load(common)?;
            let spec = quadrature()?;
            let (targets, utilities) = loaded.file.planning_targets()?;
            let gap = loaded.file.gap.as_ref().context("configuration has no [gap] table")?;
            let trials = common.trials.unwrap_or(gap.trials);
            let seed = common.seed.unwrap_or(gap.seed);
            let result = estimate_relative_gap(
                &loaded.network,
                &targets,
                &utilities,
                gap.target.into(),
                &gap.alphas,
                trials,
                seed,
                &spec,
            )
            .map_err(anyhow::Error::from)?;
            let labels: Vec<String> = build_labels(&targets);
            report::write_gap(sink(&common.out, "gap.csv")?, &loaded.hash, &result, &labels)?;
            Ok(())
        }
    }
}

fn build_labels(t: &hetnet_core::planner::PlanningTargets) -> Vec<String> {
    let mut out = Vec::new();
    for (j, cap) in t.tier1.iter().enumerate() {
        if cap.is_some() {
            out.push(format!("tier1.{}", j + 1));
        }
    }
    for (l, row) in t.tier2.iter().enumerate() {
        for (k, cap) in row.iter().enumerate() {
            if cap.is_some() {
                out.push(format!("tier2.{}.{}", l + 1, k + 1));
            }
        }
    }
    out
}

/// Prints, per query and threshold, whether the analytic value lies in the CI.
fn summarize_comparison(rows: &[Row]) {
    let mut inside = 0;
    let mut total = 0;
    for pair in rows.chunks(2) {
        if let [a, s] = pair {
            if a.engine == Engine::Analytic && s.engine == Engine::Sim {
                if let (Some(p), Some(q), Some(ci)) = (a.outage, s.outage, s.ci95) {
                    total += 1;
                    let ok = (p - q).abs() <= ci;
                    inside += ok as usize;
                    eprintln!(
                        "{:<10} T={:<6} analytic {p:.4}  sim {q:.4} ± {ci:.4}  {}",
                        campaign::query_label(a.query),
                        a.threshold,
                        if ok { "inside" } else { "outside" }
                    );
                }
            }
        }
    }
    eprintln!("{inside}/{total} analytic values inside the simulated 95% CI");
}

