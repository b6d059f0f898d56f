use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use serde_json::{json, Value};

use loopbif::io::{self, exit, ExitReport, RunConfig};
use loopbif::Error;

#[derive(Parser)]
#[command(name = "loopbif", version, about = "Bifurcation diagrams of regularized concave-convex problems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML).
    config: PathBuf,
    /// Output directory, overriding [output] dir.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Multi-start seed, overriding the config value.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Treat warnings as anomalies.
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the structural hypotheses on weights and nonlinearity.
    Validate(Common),
    /// Principal eigenvalues over the eps schedule.
    Eigen(Common),
    /// Trace both branches at the coarsest eps.
    Trace(Common),
    /// Full pipeline with the Whyburn limit over the eps schedule.
    Loop(Common),
    /// Positivity scan over q for the purely concave problem.
    Qscan(Common),
    /// A priori parameter bound, small-solution floor and supersolution.
    Bounds(Common),
}

fn load(c: &Common) -> Result<RunConfig, Error> {
    let mut cfg = io::load_config(&c.config)?;
    if let Some(dir) = &c.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn print(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("json")
}

/// Exit status for a single-stage command with the given warnings.
fn stage_status(warnings: &[String], strict: bool) -> i32 {
    for w in warnings {
        log::warn!("{w}");
    }
    if strict && !warnings.is_empty() {
        exit::ANOMALY
    } else {
        exit::OK
    }
}

fn report_status(r: &ExitReport) -> i32 {
    for a in &r.anomalies {
        log::warn!("anomaly: {a}");
    }
    for p in &r.written {
        eprintln!("wrote {}", p.display());
    }
    r.code
}

fn run(cmd: Cmd) -> Result<i32, Error> {
    match cmd {
        Cmd::Validate(c) => {
            let cfg = load(&c)?;
            let r = io::validate_stage(&cfg)?;
            print(&json!({ "ok": r.ok(), "errors": r.errors, "warnings": r.warnings, "checks": to_value(&r.hypotheses.checks) }));
            if !r.ok() {
                for e in &r.errors {
                    error!("{e}");
                }
                return Ok(exit::CONFIG);
            }
            Ok(stage_status(&r.warnings, c.strict))
        }
        Cmd::Eigen(c) => {
            let cfg = load(&c)?;
            let r = io::eigen_stage(&cfg)?;
            print(&to_value(&r));
            let w: Vec<String> = r.transversality.flagged.then(|| "small principal eigenvalue gap".to_string()).into_iter().collect();
            Ok(stage_status(&w, c.strict))
        }
        Cmd::Trace(c) => {
            let cfg = load(&c)?;
            let r = io::run_trace(&cfg, c.strict)?;
            Ok(report_status(&r))
        }
        Cmd::Loop(c) => {
            let cfg = load(&c)?;
            let r = io::run_scenario_with(&cfg, c.strict)?;
            if let Some(d) = &r.diagram {
                print(&json!({ "loop_report": to_value(&d.loop_report), "hausdorff_sequence": d.hausdorff_sequence, "anomalies": r.anomalies }));
            }
            Ok(report_status(&r))
        }
        Cmd::Qscan(c) => {
            let cfg = load(&c)?;
            let r = io::qscan_stage(&cfg)?;
            print(&to_value(&r));
            Ok(stage_status(&r.warnings, c.strict))
        }
        Cmd::Bounds(c) => {
            let cfg = load(&c)?;
            let r = io::bounds_stage(&cfg)?;
            let mut sup = to_value(&r.supersolution);
            if let Some(m) = sup.as_object_mut() {
                for k in ["w0", "w_bar", "d_b"] {
                    m.remove(k);
                }
            }
            print(&json!({ "apriori": to_value(&r.apriori), "floor": to_value(&r.floor), "supersolution": sup, "nonexistence": to_value(&r.nonexistence) }));
            let positive: usize = r.nonexistence.iter().map(|n| n.positive).sum();
            if positive > 0 {
                log::warn!("anomaly: positive solution found beyond the a priori bound");
                return Ok(exit::ANOMALY);
            }
            let w: Vec<String> = (!r.supersolution.ok).then(|| "supersolution check failed".to_string()).into_iter().collect();
            Ok(stage_status(&w, c.strict))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(exit::CONFIG as u8),
            };
        }
    };
    match run(cli.cmd) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(io::exit_code(&e) as u8)
        }
    }
}
