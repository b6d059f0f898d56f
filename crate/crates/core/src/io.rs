//! Scenario files, the end-to-end pipeline and the output writers.
//!
//! A scenario is a TOML file with the sections `[domain]`, `[weights]`,
//! `[nonlinearity]`, `[continuation]`, `[analysis]` and `[output]`, plus an
//! optional top-level `seed`. Only `[weights]` is mandatory.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    build_supersolution, classify_positivity, compute_apriori, compute_small_solution_floor, estimate_q_threshold,
    hopf_margin, AprioriBounds, FloorReport, QScan, QScanOptions, Supersolution,
};
use crate::continuation::{hausdorff, trace, whyburn_with, Branch, ContOptions, Diagram, LevelSummary, LoopReport, WhyburnOptions};
use crate::eigen::{reduced_principal, transversality_margin, ReducedPair, Side, TransversalityReport};
use crate::error::{Error, Result};
use crate::mesh::{build_grid, Bc};
use crate::nonlin::{validate_hypotheses, HypothesisReport, NonlinSpec, Verdict};
use crate::nsolve::{deflated_solve, standard_seeds, Ctx, SolveOptions};
use crate::weights::{check_H_b, check_H_psi, check_ab_posi, sample_weights, ComponentReport, HbData, HbReport, PosBalls, PosiReport, Which};

pub const DEFAULT_SEED: u64 = 0x5EED;

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_nonlinearity() -> NonlinSpec {
    NonlinSpec::prototype(0.5, 2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub domain: DomainConfig,
    pub weights: WeightsConfig,
    #[serde(default = "default_nonlinearity")]
    pub nonlinearity: NonlinSpec,
    #[serde(default)]
    pub continuation: ContinuationConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    pub dim: usize,
    pub n: usize,
    /// One `[lo, hi]` pair per axis; `[0, 1]` on every axis when omitted.
    pub extent: Option<Vec<[f64; 2]>>,
    pub bc: Bc,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self { dim: 1, n: 200, extent: None, bc: Bc::Dirichlet }
    }
}

impl DomainConfig {
    pub fn extent(&self) -> Vec<(f64, f64)> {
        match &self.extent {
            Some(e) => e.iter().map(|p| (p[0], p[1])).collect(),
            None => vec![(0.0, 1.0); self.dim],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    pub a: String,
    pub b: String,
    #[serde(default)]
    pub pos_balls: Option<PosBalls>,
    #[serde(default)]
    pub hb: Option<HbData>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationConfig {
    pub eps_schedule: Vec<f64>,
    pub ds0: f64,
    pub ds_max: f64,
    pub max_steps: usize,
    /// Relative residual tolerance of every corrector.
    pub tol_res: f64,
    pub hausdorff_tol: f64,
    pub chord_tol: f64,
    pub side: Side,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            eps_schedule: vec![1e-1, 1e-2, 1e-3, 1e-4],
            ds0: 1e-2,
            ds_max: 0.5,
            max_steps: 20_000,
            tol_res: 1e-10,
            hausdorff_tol: 1e-3,
            chord_tol: 1e-4,
            side: Side::Plus,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Floor threshold `Lambda`; `0.25 * lambda_bar` when absent.
    #[serde(alias = "Lambda")]
    pub lambda_cap: Option<f64>,
    pub q_grid: Option<Vec<f64>>,
    #[serde(alias = "C1")]
    pub c1: Option<f64>,
    /// `|lam|` threshold of the loop report; `0.1 * lambda_bar` when absent.
    pub delta: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    BranchesCsv,
    DiagramJson,
    ReportJson,
    Plotdata,
}

impl Emit {
    pub fn file_name(self) -> &'static str {
        match self {
            Emit::BranchesCsv => "branches.csv",
            Emit::DiagramJson => "diagram.json",
            Emit::ReportJson => "report.json",
            Emit::Plotdata => "plotdata.txt",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub emit: Vec<Emit>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), emit: vec![Emit::BranchesCsv, Emit::DiagramJson, Emit::ReportJson, Emit::Plotdata] }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Name of the `[section]` governing `line` (1-based), if any.
fn section_at(text: &str, line: usize) -> Option<String> {
    text.lines()
        .take(line)
        .filter_map(|l| {
            let t = l.trim();
            (t.starts_with('[') && !t.starts_with("[[")).then(|| t.trim_matches(|c| c == '[' || c == ']').trim().to_string())
        })
        .last()
}

/// Line of `key = ...` inside `[section]` (or at top level for `""`).
fn key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, l) in text.lines().enumerate() {
        let t = l.trim();
        if t.starts_with('[') {
            current = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        let Some((k, _)) = t.split_once('=') else { continue };
        if current == section && k.trim() == key {
            return Some(i + 1);
        }
    }
    None
}

fn translate_toml_error(text: &str, e: toml::de::Error) -> Error {
    let line = e.span().map(|s| line_of(text, s.start));
    let msg = e.message().to_string();
    let msg = match msg.strip_prefix("unknown field `").and_then(|r| r.split_once('`')) {
        Some((key, _)) => match line.and_then(|l| section_at(text, l)) {
            Some(sec) => format!("unknown key {key} in [{sec}]"),
            None => format!("unknown key {key} at top level"),
        },
        None => msg.trim_end().to_string(),
    };
    Error::Config { line, msg }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| translate_toml_error(text, e))?;
    cfg.validate().map_err(|e| match e {
        Error::Config { line: None, msg } => {
            let line = msg
                .split_once(' ')
                .and_then(|(path, _)| path.rsplit_once('.').map(|(s, k)| (s.to_string(), k.to_string())))
                .and_then(|(s, k)| key_line(text, &s, &k));
            Error::Config { line, msg }
        }
        e => e,
    })?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
    parse_config(&text)
}

fn range(ok: bool, key: &str, what: impl std::fmt::Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(format!("{key} {what}")))
    }
}

impl RunConfig {
    /// Range checks; every message starts with the offending `section.key`.
    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        range((1..=3).contains(&d.dim), "domain.dim", format!("= {} must be 1, 2 or 3", d.dim))?;
        range((3..=100_000).contains(&d.n), "domain.n", format!("= {} must lie in [3, 100000]", d.n))?;
        if let Some(e) = &d.extent {
            range(e.len() == d.dim, "domain.extent", format!("has {} axes, expected {}", e.len(), d.dim))?;
            range(e.iter().all(|p| p[0].is_finite() && p[1].is_finite() && p[1] > p[0]), "domain.extent", "needs lo < hi on every axis")?;
        }
        let w = &self.weights;
        range(!w.a.trim().is_empty(), "weights.a", "is empty")?;
        range(!w.b.trim().is_empty(), "weights.b", "is empty")?;
        if let Some(hb) = &w.hb {
            range(hb.gamma >= 0.0, "weights.hb.gamma", "must be >= 0")?;
            range(hb.tube_width > 0.0, "weights.hb.tube_width", "must be positive")?;
        }
        self.nonlinearity.check_params().map_err(|e| Error::config(format!("nonlinearity.f {e}")))?;
        let c = &self.continuation;
        let eps = &c.eps_schedule;
        range(!eps.is_empty(), "continuation.eps_schedule", "is empty")?;
        range(eps.iter().all(|&e| e > 0.0 && e < 1.0), "continuation.eps_schedule", "entries must lie in (0, 1)")?;
        range(eps.windows(2).all(|w| w[1] < w[0]), "continuation.eps_schedule", "must be strictly decreasing")?;
        range(c.ds0 > 0.0 && c.ds0.is_finite(), "continuation.ds0", "must be positive")?;
        range(c.ds_max >= c.ds0 && c.ds_max.is_finite(), "continuation.ds_max", "must be finite and >= ds0")?;
        range(c.max_steps >= 1, "continuation.max_steps", "must be >= 1")?;
        range(c.tol_res > 0.0 && c.tol_res <= 1e-4, "continuation.tol_res", "must lie in (0, 1e-4]")?;
        range(c.hausdorff_tol > 0.0, "continuation.hausdorff_tol", "must be positive")?;
        range(c.chord_tol > 0.0, "continuation.chord_tol", "must be positive")?;
        let a = &self.analysis;
        range(a.lambda_cap.is_none_or(|l| l > 0.0), "analysis.lambda_cap", "must be positive")?;
        range(a.c1.is_none_or(|v| v > 0.0), "analysis.c1", "must be positive")?;
        range(a.delta.is_none_or(|v| v >= 0.0), "analysis.delta", "must be >= 0")?;
        if let Some(q) = &a.q_grid {
            range(!q.is_empty() && q.iter().all(|&v| v > 0.0 && v < 1.0), "analysis.q_grid", "entries must lie in (0, 1)")?;
        }
        range(!self.output.emit.is_empty(), "output.emit", "is empty")?;
        Ok(())
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions { tol_rel: self.continuation.tol_res, ..SolveOptions::default() }
    }

    pub fn cont_options(&self) -> ContOptions {
        let c = &self.continuation;
        ContOptions {
            ds0: c.ds0,
            ds_max: c.ds_max,
            max_steps: c.max_steps,
            chord_tol: c.chord_tol,
            solve: self.solve_options(),
            ..ContOptions::default()
        }
    }
}

/// Exit status classes shared with the command line front end.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 1;
    pub const SOLVER: i32 = 2;
    pub const ANOMALY: i32 = 3;
}

pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config { .. } | Error::Parse { .. } | Error::InvalidGrid(_) | Error::Io(_) | Error::EvalDomain { .. } => exit::CONFIG,
        _ => exit::SOLVER,
    }
}

pub fn build_context(cfg: &RunConfig) -> Result<Ctx> {
    let d = &cfg.domain;
    if d.dim == 3 {
        return Err(Error::config("domain.dim = 3 is accepted for hypothesis validation only"));
    }
    let grid = build_grid(d.dim, d.n, &d.extent(), d.bc).map_err(|e| e.context("mesh"))?;
    let mut field = sample_weights(&cfg.weights.a, &cfg.weights.b, &grid).map_err(|e| e.context("weights"))?;
    if let Some(p) = &cfg.weights.pos_balls {
        field = field.with_pos_balls(p.clone());
    }
    if let Some(hb) = &cfg.weights.hb {
        field = field.with_hb(hb.clone());
    }
    Ok(Ctx::new(grid, field, cfg.nonlinearity.clone()))
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub hypotheses: HypothesisReport,
    pub a_components: Option<ComponentReport>,
    pub neg_a_components: Option<ComponentReport>,
    pub b_components: Option<ComponentReport>,
    pub posi: Option<PosiReport>,
    pub hb: Option<HbReport>,
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.errors.is_empty()
    }
}

pub fn validate_stage(cfg: &RunConfig) -> Result<ValidationReport> {
    let spec = &cfg.nonlinearity;
    let hypotheses = validate_hypotheses(spec, cfg.domain.dim);
    let mut errors: Vec<String> = hypotheses.failed().iter().map(|n| format!("hypothesis {n} fails")).collect();
    let mut warnings: Vec<String> = hypotheses
        .checks
        .iter()
        .filter(|c| c.verdict == Verdict::Inconclusive)
        .map(|c| format!("hypothesis {} inconclusive: {}", c.name, c.detail))
        .collect();
    let mut report = ValidationReport {
        hypotheses,
        a_components: None,
        neg_a_components: None,
        b_components: None,
        posi: None,
        hb: None,
        errors: Vec::new(),
        warnings: Vec::new(),
    };
    if cfg.domain.dim == 3 {
        if let Some(hb) = &cfg.weights.hb {
            let n: f64 = 3.0;
            let bound = ((n + 2.0) / (n - 2.0)).min((n + 1.0 + hb.gamma) / (n - 1.0));
            let p = spec.p();
            if !(p > 1.0 && p < bound) {
                errors.push(format!("exponent p = {p} outside (1, {bound})"));
            }
        }
        warnings.push("dim = 3: grid-based checks skipped".into());
        report.errors = errors;
        report.warnings = warnings;
        return Ok(report);
    }
    let ctx = build_context(cfg)?;
    let field = &ctx.field;
    let grid = &ctx.grid;
    for (which, slot, label) in [
        (Which::A, &mut report.a_components, "{a > 0}"),
        (Which::NegA, &mut report.neg_a_components, "{a < 0}"),
        (Which::B, &mut report.b_components, "{b > 0}"),
    ] {
        match check_H_psi(field, which) {
            Ok(r) => {
                if !r.under_resolved.is_empty() {
                    warnings.push(format!("{} component(s) of {label} under-resolved", r.under_resolved.len()));
                }
                *slot = Some(r);
            }
            Err(e) => errors.push(format!("{label}: {e}")),
        }
    }
    let posi = check_ab_posi(field, grid);
    if !posi.ok {
        errors.push(format!("positivity balls: {}", posi.violation.clone().unwrap_or_default()));
    }
    report.posi = Some(posi);
    if cfg.weights.hb.is_some() {
        let hb = check_H_b(field, grid, spec.p())?;
        if !hb.ok {
            errors.push(format!("growth of b: {}", hb.failing_clause.clone().unwrap_or_default()));
        }
        report.hb = Some(hb);
    }
    report.errors = errors;
    report.warnings = warnings;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct EpsEigen {
    pub eps: f64,
    pub lam_plus: f64,
    pub lam_minus: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EigenReport {
    pub mu_plus: f64,
    pub mu_minus: f64,
    pub levels: Vec<EpsEigen>,
    pub transversality: TransversalityReport,
}

pub fn eigen_report(ctx: &Ctx, reduced: &ReducedPair, eps_schedule: &[f64]) -> Result<EigenReport> {
    let levels = eps_schedule
        .iter()
        .map(|&eps| {
            let p = reduced.at_eps(&ctx.spec, eps);
            EpsEigen { eps, lam_plus: p.lam_plus, lam_minus: p.lam_minus, scale: p.scale }
        })
        .collect();
    let transversality = transversality_margin(&reduced.at_eps(&ctx.spec, eps_schedule[0]), &ctx.lap, &ctx.field)?;
    Ok(EigenReport { mu_plus: reduced.mu_plus, mu_minus: reduced.mu_minus, levels, transversality })
}

pub fn eigen_stage(cfg: &RunConfig) -> Result<EigenReport> {
    let ctx = build_context(cfg)?;
    let reduced = reduced_principal(&ctx.lap, &ctx.field.a_vals).map_err(|e| e.context("eigen"))?;
    eigen_report(&ctx, &reduced, &cfg.continuation.eps_schedule)
}

#[derive(Clone, Debug, Serialize)]
pub struct NonexistenceCheck {
    pub lam: f64,
    pub converged_nontrivial: usize,
    pub positive: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundsReport {
    pub apriori: AprioriBounds,
    pub floor: FloorReport,
    pub supersolution: Supersolution,
    pub nonexistence: Vec<NonexistenceCheck>,
}

fn positive_count(ctx: &Ctx, lam: f64, eps: f64, seed: u64, opts: &SolveOptions, phi: Option<&[f64]>) -> NonexistenceCheck {
    let seeds = standard_seeds(ctx.n(), phi, seed);
    let found = deflated_solve(&[vec![0.0; ctx.n()]], lam, eps, ctx, &seeds, opts);
    let positive = found.iter().filter(|s| s.u.iter().all(|&v| v >= 0.0) && s.u.iter().any(|&v| v > 0.0)).count();
    NonexistenceCheck { lam, converged_nontrivial: found.len(), positive }
}

pub fn bounds_stage(cfg: &RunConfig) -> Result<BoundsReport> {
    let ctx = build_context(cfg)?;
    let apriori = compute_apriori(&ctx.field, &ctx.grid, &ctx.spec).map_err(|e| e.context("a priori bound"))?;
    let cap = cfg.analysis.lambda_cap.unwrap_or(0.25 * apriori.lambda_bar);
    let floor = compute_small_solution_floor(&apriori.plus, &ctx.spec, cap).map_err(|e| e.context("small-solution floor"))?;
    let supersolution = build_supersolution(&ctx, cap, cfg.analysis.c1.unwrap_or(1.0)).map_err(|e| e.context("supersolution"))?;
    let eps = cfg.continuation.eps_schedule[0];
    let opts = cfg.solve_options();
    let phi = reduced_principal(&ctx.lap, &ctx.field.a_vals).ok();
    let nonexistence = vec![
        positive_count(&ctx, 1.1 * apriori.lambda_bar, eps, cfg.seed, &opts, phi.as_ref().map(|r| r.phi_plus.as_slice())),
        positive_count(&ctx, -1.1 * apriori.lambda_bar_neg, eps, cfg.seed, &opts, phi.as_ref().map(|r| r.phi_minus.as_slice())),
    ];
    Ok(BoundsReport { apriori, floor, supersolution, nonexistence })
}

pub fn qscan_stage(cfg: &RunConfig) -> Result<QScan> {
    let ctx = build_context(cfg)?;
    let grid = cfg.analysis.q_grid.clone().unwrap_or_else(|| (1..=9).map(|k| k as f64 / 10.0).collect());
    let opts = QScanOptions { seed: cfg.seed, solve: cfg.solve_options(), ..QScanOptions::default() };
    estimate_q_threshold(&ctx, &grid, &opts)
}

/// Both branches at the coarsest `eps`, traced independently.
#[derive(Clone, Debug)]
pub struct TraceResult {
    pub eps: f64,
    pub branches: Vec<Branch>,
    /// Hausdorff distance between the two projected branches.
    pub mushroom_distance: f64,
}

pub fn trace_stage(cfg: &RunConfig) -> Result<TraceResult> {
    let ctx = build_context(cfg)?;
    let eps = cfg.continuation.eps_schedule[0];
    let reduced = reduced_principal(&ctx.lap, &ctx.field.a_vals).map_err(|e| e.context("eigen"))?;
    let pair = reduced.at_eps(&ctx.spec, eps);
    let mut opts = cfg.cont_options();
    if let Ok(ap) = compute_apriori(&ctx.field, &ctx.grid, &ctx.spec) {
        opts.lam_box = Some(1.5 * ap.min_bar());
    }
    let (a, b) = rayon::join(|| trace(&pair, Side::Plus, &ctx, &opts), || trace(&pair, Side::Minus, &ctx, &opts));
    let branches = vec![a.map_err(|e| e.context("continuation from lam+"))?, b.map_err(|e| e.context("continuation from lam-"))?];
    let mushroom_distance = hausdorff(&branches[0].projection(), &branches[1].projection());
    Ok(TraceResult { eps, branches, mushroom_distance })
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub const CSV_HEADER: [&str; 12] = [
    "branch_id",
    "eps",
    "step",
    "s_arc",
    "lambda",
    "norm_inf",
    "norm_h1",
    "min_u",
    "hopf_margin",
    "positivity_class",
    "turning",
    "residual_inf",
];

pub fn write_branches_csv<W: Write>(out: W, branches: &[Branch], ctx: &Ctx) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for (id, b) in branches.iter().enumerate() {
        for (step, p) in b.points.iter().enumerate() {
            let verdict = classify_positivity(&p.u, &ctx.grid);
            w.write_record([
                id.to_string(),
                fmt_f64(p.eps),
                step.to_string(),
                fmt_f64(p.s_arc),
                fmt_f64(p.lam),
                fmt_f64(p.norm_inf),
                fmt_f64(p.norm_h1),
                fmt_f64(p.min_u),
                fmt_f64(hopf_margin(&p.u, &ctx.grid)),
                verdict.class.as_str().to_string(),
                p.turning.to_string(),
                fmt_f64(p.residual_inf),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `lambda norm_inf` pairs, one block per branch, blocks separated by a blank line.
pub fn write_plotdata<W: Write>(mut out: W, branches: &[Branch]) -> Result<()> {
    for (i, b) in branches.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        writeln!(out, "# branch {i} eps {}", fmt_f64(b.eps))?;
        for p in &b.points {
            writeln!(out, "{} {}", fmt_f64(p.lam), fmt_f64(p.norm_inf))?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagramJson<'a> {
    pub eps_levels: &'a [f64],
    pub per_level: Vec<LevelSummary>,
    pub loop_report: &'a LoopReport,
    pub hausdorff_sequence: &'a [f64],
    pub anomalies: &'a [String],
}

pub fn diagram_json(d: &Diagram) -> serde_json::Value {
    let j = DiagramJson {
        eps_levels: &d.eps_schedule,
        per_level: d.levels(),
        loop_report: &d.loop_report,
        hausdorff_sequence: &d.hausdorff_sequence,
        anomalies: &d.anomalies,
    };
    serde_json::to_value(j).expect("diagram serializes")
}

/// Everything a run produced, kept for the report and the caller.
#[derive(Clone, Debug, Serialize)]
pub struct ExitReport {
    pub code: i32,
    pub anomalies: Vec<String>,
    pub warnings: Vec<String>,
    pub written: Vec<PathBuf>,
    #[serde(skip)]
    pub diagram: Option<Diagram>,
}

/// Writes the requested outputs of a finished run into `dir`.
fn write_outputs(
    cfg: &RunConfig,
    ctx: &Ctx,
    branches: &[Branch],
    diagram: Option<&Diagram>,
    sections: &BTreeMap<&str, serde_json::Value>,
    report: &mut ExitReport,
) -> Result<()> {
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir).map_err(|e| Error::from(e).context(format!("creating {}", dir.display())))?;
    let mut emit = cfg.output.emit.clone();
    emit.sort();
    emit.dedup();
    for e in emit {
        let path = dir.join(e.file_name());
        let file = fs::File::create(&path).map_err(|err| Error::from(err).context(format!("creating {}", path.display())))?;
        let mut out = std::io::BufWriter::new(file);
        match e {
            Emit::BranchesCsv => write_branches_csv(&mut out, branches, ctx)?,
            Emit::Plotdata => write_plotdata(&mut out, branches)?,
            Emit::DiagramJson => match diagram {
                Some(d) => serde_json::to_writer_pretty(&mut out, &diagram_json(d)).map_err(|e| Error::Io(e.into()))?,
                None => continue,
            },
            Emit::ReportJson => {
                let mut all = serde_json::Map::new();
                all.insert("config".into(), serde_json::to_value(cfg).expect("config serializes"));
                for (k, v) in sections {
                    all.insert((*k).into(), v.clone());
                }
                all.insert("anomalies".into(), serde_json::to_value(&report.anomalies).unwrap());
                all.insert("warnings".into(), serde_json::to_value(&report.warnings).unwrap());
                all.insert("exit_code".into(), report.code.into());
                serde_json::to_writer_pretty(&mut out, &all).map_err(|e| Error::Io(e.into()))?;
            }
        }
        out.flush()?;
        report.written.push(path);
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("report serializes")
}

fn finish(mut report: ExitReport, strict: bool) -> ExitReport {
    if strict && !report.warnings.is_empty() {
        report.anomalies.extend(report.warnings.iter().map(|w| format!("strict: {w}")));
    }
    report.code = if report.anomalies.is_empty() { exit::OK } else { exit::ANOMALY };
    report
}

/// Single-level trace from both bifurcation points, written like a full run.
pub fn run_trace(cfg: &RunConfig, strict: bool) -> Result<ExitReport> {
    let ctx = build_context(cfg)?;
    let t = trace_stage(cfg)?;
    let mut report = ExitReport { code: 0, anomalies: Vec::new(), warnings: Vec::new(), written: Vec::new(), diagram: None };
    for b in &t.branches {
        report.anomalies.extend(b.anomalies.iter().cloned());
    }
    if !t.branches.iter().all(|b| b.closed_mushroom) {
        report.warnings.push("a branch did not close onto the other bifurcation point".into());
    }
    let mut sections = BTreeMap::new();
    sections.insert(
        "trace",
        serde_json::json!({
            "eps": t.eps,
            "mushroom_distance": t.mushroom_distance,
            "branches": t.branches.iter().map(|b| serde_json::json!({
                "start_bif": b.start_bif, "end_bif": b.end_bif, "closed_mushroom": b.closed_mushroom,
                "stop": b.stop, "n_points": b.points.len(), "lambda_range": b.lambda_range(), "max_norm": b.max_norm(),
            })).collect::<Vec<_>>(),
        }),
    );
    report = finish(report, strict);
    write_outputs(cfg, &ctx, &t.branches, None, &sections, &mut report)?;
    Ok(report)
}

/// The full pipeline: validate, eigen, continuation over the eps schedule,
/// Whyburn limit and the a priori analysis. Outputs are written even when
/// anomalies are flagged.
pub fn run_scenario(cfg: &RunConfig) -> Result<ExitReport> {
    run_scenario_with(cfg, false)
}

pub fn run_scenario_with(cfg: &RunConfig, strict: bool) -> Result<ExitReport> {
    let mut sections: BTreeMap<&str, serde_json::Value> = BTreeMap::new();
    let mut report = ExitReport { code: 0, anomalies: Vec::new(), warnings: Vec::new(), written: Vec::new(), diagram: None };

    let validation = validate_stage(cfg).map_err(|e| e.context("validate"))?;
    sections.insert("validation", to_json(&validation));
    if !validation.ok() {
        return Err(Error::config(format!("validation failed: {}", validation.errors.join("; "))));
    }
    report.warnings.extend(validation.warnings.iter().cloned());

    let ctx = build_context(cfg)?;
    let reduced = reduced_principal(&ctx.lap, &ctx.field.a_vals).map_err(|e| e.context("eigen"))?;
    let eig = eigen_report(&ctx, &reduced, &cfg.continuation.eps_schedule).map_err(|e| e.context("eigen"))?;
    if eig.transversality.flagged {
        report.warnings.push("principal eigenvalue gap below the transversality flag".into());
    }
    sections.insert("eigen", to_json(&eig));
    info!("mu+ = {:e}, mu- = {:e}", eig.mu_plus, eig.mu_minus);

    let apriori = match compute_apriori(&ctx.field, &ctx.grid, &ctx.spec) {
        Ok(a) => Some(a),
        Err(e) => {
            warn!("a priori bound unavailable: {e}");
            report.warnings.push(format!("a priori bound unavailable: {e}"));
            None
        }
    };
    let mut cont = cfg.cont_options();
    cont.lam_box = apriori.as_ref().map(|a| 1.5 * a.min_bar());
    let delta = cfg.analysis.delta.or(apriori.as_ref().map(|a| 0.1 * a.min_bar())).unwrap_or(0.0);
    let wopts = WhyburnOptions { cont, hausdorff_tol: cfg.continuation.hausdorff_tol, delta, side: cfg.continuation.side };

    let schedule = &cfg.continuation.eps_schedule;
    let diagram = if schedule.len() >= 3 {
        whyburn_with(&ctx, &reduced, schedule, &wopts).map_err(|e| e.context("continuation"))?
    } else {
        return Err(Error::config("continuation.eps_schedule needs at least 3 levels for the loop pipeline"));
    };
    report.anomalies.extend(diagram.anomalies.iter().cloned());
    // only a non-monotone sequence is an anomaly; a monotone one that has
    // not yet reached the tolerance is reported as a warning
    if !diagram.stabilized {
        report.warnings.push(format!(
            "Hausdorff sequence {:?} did not stabilize below {:e}",
            diagram.hausdorff_sequence, cfg.continuation.hausdorff_tol
        ));
    }
    if let Some(ap) = &apriori {
        let bar = ap.min_bar();
        if diagram.branches.iter().flat_map(|b| &b.points).any(|p| p.lam.abs() >= bar) {
            report.anomalies.push(format!("branch left the a priori box |lam| < {bar:e}"));
        }
        let cap = cfg.analysis.lambda_cap.unwrap_or(0.25 * ap.lambda_bar);
        match compute_small_solution_floor(&ap.plus, &ctx.spec, cap) {
            Ok(f) => {
                sections.insert("floor", to_json(&f));
            }
            Err(e) => report.warnings.push(format!("small-solution floor: {e}")),
        }
        sections.insert("apriori", to_json(ap));
    }
    sections.insert("diagram", diagram_json(&diagram));

    report = finish(report, strict);
    write_outputs(cfg, &ctx, &diagram.branches, Some(&diagram), &sections, &mut report)?;
    report.diagram = Some(diagram);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[weights]\na = \"sin(3*3.141592653589793*x)\"\nb = \"1\"\n";

    #[test]
    fn minimal_file_fills_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.domain, DomainConfig::default());
        assert_eq!(cfg.continuation, ContinuationConfig::default());
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.nonlinearity, NonlinSpec::prototype(0.5, 2.0));
        assert_eq!(cfg.output.emit.len(), 4);
    }

    #[test]
    fn unknown_key_names_section_and_line() {
        let text = format!("{MINIMAL}\n[continuation]\nds0 = 0.01\nepz0 = 0.1\n");
        let err = parse_config(&text).unwrap_err();
        match err {
            Error::Config { line, msg } => {
                assert_eq!(msg, "unknown key epz0 in [continuation]");
                assert_eq!(line, Some(7));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn increasing_schedule_is_a_range_error() {
        let text = format!("{MINIMAL}[continuation]\neps_schedule = [1e-2, 1e-1]\n");
        let err = parse_config(&text).unwrap_err();
        let s = err.to_string();
        assert!(s.contains("eps_schedule"), "{s}");
        assert!(matches!(err, Error::Config { line: Some(5), .. }), "{err:?}");
    }

    #[test]
    fn nested_families_parse() {
        let text = format!(
            "{MINIMAL}[nonlinearity.f]\nfamily = \"power_times_h\"\nq = 0.4\nh = {{ kind = \"inv_one_plus_sr\", r = 1.0 }}\n\
             [nonlinearity.g]\nfamily = \"pure_power\"\np = 3.0\n"
        );
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.nonlinearity.q(), 0.4);
        assert_eq!(cfg.nonlinearity.p(), 3.0);
    }

    #[test]
    fn shortest_round_trip_floats() {
        for x in [0.1, 1e-10, 33909.9, -0.0, 1.0 / 3.0, 6.02e23] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(fmt_f64(0.1), "0.1");
    }

    #[test]
    fn dim_three_is_validation_only() {
        let text = format!("{MINIMAL}[domain]\ndim = 3\nn = 10\n");
        let cfg = parse_config(&text).unwrap();
        assert!(build_context(&cfg).is_err());
        assert!(validate_stage(&cfg).is_ok());
    }
}
