//! Command-line front end. Every command reads one JSON payload and writes
//! one report; `run` takes a whole job (command, payload, options) instead.
//!
//! Exit codes: 0 success, 1 a `verify` suite found failures, 2 malformed or
//! invalid input, 3 valid input outside the calculus, 4 numeric
//! non-convergence.

use std::fmt::Write as _;
use std::io::Read;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::{
    prop21_decompose, prop31_decompose, thm_msub, thm_subfin, thm_subinf, thm_univ, DecompError,
    DecompositionReport, LambdaChoice, PairInput, Prop21Input, Prop31Input, SubfactorPairReport,
};
use crate::ir::{fmt_scale_list, validity_check, AlgebraExpr, FreeProductForm};
use crate::lattice::{
    pf_weights, square_from_inclusion, BipartiteGraph, IngestedSquare, LatticeError, WeightVector,
    DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::rewrite::{normalize_top, replay, DerivationTrace, RewriteError};
use crate::testkit::{run_suite, SuiteReport, VerifyJob};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    NonConvergence(String),
    #[error("{failed} of {cases} cases failed")]
    ChecksFailed { failed: usize, cases: usize, report: Box<Output> },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ChecksFailed { .. } => 1,
            CliError::Schema(_) => 2,
            CliError::Domain(_) => 3,
            CliError::NonConvergence(_) => 4,
        }
    }
}

impl From<DecompError> for CliError {
    fn from(e: DecompError) -> Self {
        match e {
            DecompError::Rewrite(r) => r.into(),
            e if e.is_schema() => CliError::Schema(e.to_string()),
            e => CliError::Domain(e.to_string()),
        }
    }
}

impl From<RewriteError> for CliError {
    fn from(e: RewriteError) -> Self {
        match e {
            RewriteError::Ir(_) | RewriteError::Replay { .. } => CliError::Schema(e.to_string()),
            RewriteError::StepLimit(_) => CliError::NonConvergence(e.to_string()),
            e => CliError::Domain(e.to_string()),
        }
    }
}

impl From<LatticeError> for CliError {
    fn from(e: LatticeError) -> Self {
        match e {
            LatticeError::NonConvergence { .. } => CliError::NonConvergence(e.to_string()),
            LatticeError::Invalid(_) | LatticeError::Disconnected(_) => CliError::Schema(e.to_string()),
            LatticeError::Degenerate(_) | LatticeError::Inconsistent { .. } => CliError::Domain(e.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Json,
    Text,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    Normalize,
    DecomposeProp21,
    DecomposeProp31,
    SubfactorSubfin,
    SubfactorSubinf,
    SubfactorMsub,
    SubfactorUniv,
    PfWeights,
    Verify,
    Replay,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobOptions {
    #[serde(default)]
    pub trace: bool,
    #[serde(default)]
    pub format: Format,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<LambdaChoice>,
    /// `subfactor-univ` only: include the base factor `M_0`.
    #[serde(default)]
    pub msub: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub command: CommandName,
    pub payload: serde_json::Value,
    #[serde(default)]
    pub options: JobOptions,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeReport {
    pub input: AlgebraExpr,
    pub form: FreeProductForm,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<DerivationTrace>,
}

/// A trace to re-run against its input; normalize reports qualify as is.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayInput {
    pub input: AlgebraExpr,
    pub trace: DerivationTrace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form: Option<FreeProductForm>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub steps: usize,
    pub form: FreeProductForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matches_recorded: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PfInput {
    pub graph: BipartiteGraph,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: u64,
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_max_iter() -> u64 {
    DEFAULT_MAX_ITER
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PfReport {
    pub weights: WeightVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub square: Option<IngestedSquare>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub square_error: Option<String>,
}

/// A finished command: the JSON report and its text rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct Output {
    pub json: serde_json::Value,
    pub text: String,
}

impl Output {
    fn new<T: Serialize>(report: &T, text: String) -> Self {
        Output { json: serde_json::to_value(report).expect("reports serialize"), text }
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&self.json).expect("values serialize");
                s.push('\n');
                s
            }
            Format::Text => self.text.clone(),
        }
    }
}

fn parse<T: DeserializeOwned>(payload: &serde_json::Value) -> Result<T, CliError> {
    T::deserialize(payload).map_err(|e| CliError::Schema(format!("invalid payload: {e}")))
}

fn check_top(form: &FreeProductForm) -> Result<(), CliError> {
    validity_check(form).map_err(|v| CliError::Domain(format!("{v} in {form}")))
}

pub fn run_job(job: &JobSpec) -> Result<Output, CliError> {
    let opts = &job.options;
    let lambda = opts.lambda.clone().unwrap_or_default();
    match job.command {
        CommandName::Normalize => {
            let expr: AlgebraExpr = parse(&job.payload)?;
            let n = normalize_top(&expr)?;
            let text = format!("{}\n", n.form);
            let warnings = n.trace.warnings.clone();
            let report = NormalizeReport { input: expr, form: n.form, warnings, trace: opts.trace.then_some(n.trace) };
            Ok(Output::new(&report, text))
        }
        CommandName::Replay => {
            let input: ReplayInput = parse(&job.payload)?;
            let form = replay(&input.input, &input.trace)?;
            let matches_recorded = input.form.as_ref().map(|f| *f == form);
            if matches_recorded == Some(false) {
                return Err(CliError::Domain(format!("replay gives {form}, trace records {}", input.form.unwrap())));
            }
            let text = format!("{form}\n");
            Ok(Output::new(&ReplayReport { steps: input.trace.steps.len(), form, matches_recorded }, text))
        }
        CommandName::DecomposeProp21 => {
            let input: Prop21Input = parse(&job.payload)?;
            decomposition_output(prop21_decompose(&input)?, opts.trace)
        }
        CommandName::DecomposeProp31 => {
            let input: Prop31Input = parse(&job.payload)?;
            decomposition_output(prop31_decompose(&input)?, opts.trace)
        }
        CommandName::SubfactorSubfin => pair_output(thm_subfin(&parse::<PairInput>(&job.payload)?, &lambda)?, opts.trace),
        CommandName::SubfactorSubinf => pair_output(thm_subinf(&parse::<PairInput>(&job.payload)?, &lambda)?, opts.trace),
        CommandName::SubfactorMsub => pair_output(thm_msub(&parse::<PairInput>(&job.payload)?, &lambda)?, opts.trace),
        CommandName::SubfactorUniv => {
            pair_output(thm_univ(&parse::<PairInput>(&job.payload)?, &lambda, opts.msub)?, opts.trace)
        }
        CommandName::PfWeights => {
            let input: PfInput = match parse(&job.payload) {
                Ok(i) => i,
                Err(_) => PfInput { graph: parse(&job.payload)?, tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER },
            };
            let weights = pf_weights(&input.graph, input.tol, input.max_iter)?;
            let (square, square_error) = match square_from_inclusion(&input.graph, &weights) {
                Ok(s) => (Some(s), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let report = PfReport { weights, square, square_error };
            let text = pf_text(&report);
            Ok(Output::new(&report, text))
        }
        CommandName::Verify => {
            let input: VerifyJob = parse(&job.payload)?;
            let report = run_suite(&input);
            let out = Output::new(&report, suite_text(&report));
            if report.all_passed() {
                Ok(out)
            } else {
                Err(CliError::ChecksFailed {
                    failed: report.failures.len(),
                    cases: report.cases,
                    report: Box::new(out),
                })
            }
        }
    }
}

fn decomposition_output(mut report: DecompositionReport, trace: bool) -> Result<Output, CliError> {
    check_top(report.result())?;
    if !trace {
        report.strip_traces();
    }
    let text = decomposition_text(&report);
    Ok(Output::new(&report, text))
}

fn pair_output(mut report: SubfactorPairReport, trace: bool) -> Result<Output, CliError> {
    check_top(&report.p0)?;
    check_top(&report.p_m1)?;
    if !trace {
        report.strip_traces();
    }
    let text = pair_text(&report);
    Ok(Output::new(&report, text))
}

/// First line is the factor itself; details follow.
pub fn decomposition_text(r: &DecompositionReport) -> String {
    let mut s = format!("{}\n", r.result());
    if r.amplified.is_some() {
        let _ = writeln!(s, "corner: {}", r.corner);
    }
    if let Some(a) = &r.amplification {
        let _ = writeln!(s, "amplification: {a}");
    }
    if let Some(p) = &r.r {
        let _ = writeln!(s, "r: {p}");
    }
    if let Some(c) = &r.closed_form {
        let _ = writeln!(s, "closed form t = {} ({})", c.t, if c.agrees { "agrees" } else { "DIFFERS" });
    }
    for c in &r.conditions {
        let _ = writeln!(s, "condition {}: {}", c.condition, c.holds);
    }
    for n in &r.notes {
        let _ = writeln!(s, "note: {n}");
    }
    s
}

pub fn pair_text(r: &SubfactorPairReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "P0 = {}", r.p0);
    let _ = writeln!(s, "P-1 = {}", r.p_m1);
    let how = match r.lambda_choice {
        LambdaChoice::Value(_) => String::new(),
        ref c => format!(" ({c})"),
    };
    let _ = writeln!(s, "lambda = {}{how}, lambda^2 = {}", r.lambda, square_text(&r.lambda));
    let _ = writeln!(s, "Tr(q) = {}", r.trace_q);
    for (name, p) in [("s", &r.params0), ("t", &r.params_m1)] {
        let _ = writeln!(s, "{name} = {}, excess {}", fmt_scale_list(&p.scales), p.excess);
        if !p.repeated_scales.is_empty() {
            let _ = writeln!(s, "  repeated infinitely: {}", fmt_scale_list(&p.repeated_scales));
        }
    }
    s
}

fn square_text(x: &crate::scalar::Scalar) -> String {
    match x.square() {
        Ok(q) => crate::scalar::fmt_rational(&q),
        Err(_) => "inf".into(),
    }
}

fn pf_text(r: &PfReport) -> String {
    let w = &r.weights;
    let mut s = format!("|Gamma|^2 = {:.12} ({})\n", w.eigenvalue, if w.exact { "exact" } else { "inexact" });
    let _ = writeln!(s, "even weights: {:?}", w.even);
    let _ = writeln!(s, "odd weights: {:?}", w.odd);
    if let Some(e) = &r.square_error {
        let _ = writeln!(s, "no square: {e}");
    }
    s
}

fn suite_text(r: &SuiteReport) -> String {
    let mut s = format!("{:?}: {}/{} passed (seed {})\n", r.suite, r.passed, r.cases, r.seed);
    for f in &r.failures {
        let _ = writeln!(s, "case {}: {}", f.case, f.detail);
    }
    s
}

#[derive(Debug, Parser)]
#[command(name = "freeprod", version, about = "Free product normal forms and subfactor decompositions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct CommonArgs {
    /// JSON payload file; standard input when absent or `-`.
    pub input: Option<PathBuf>,
    /// Include derivation traces in the report.
    #[arg(long)]
    pub trace: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// A positive scalar, `zero-a` or `zero-b`.
    #[arg(long)]
    pub lambda: Option<LambdaChoice>,
    /// `subfactor-univ`: include the base factor.
    #[arg(long)]
    pub msub: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    Normalize(CommonArgs),
    DecomposeProp21(CommonArgs),
    DecomposeProp31(CommonArgs),
    SubfactorSubfin(CommonArgs),
    SubfactorSubinf(CommonArgs),
    SubfactorMsub(CommonArgs),
    SubfactorUniv(CommonArgs),
    PfWeights(CommonArgs),
    Verify(CommonArgs),
    /// Re-run a recorded trace against its input.
    Replay(CommonArgs),
    /// Run a job file `{"command", "payload", "options"}`.
    Run {
        job: Option<PathBuf>,
        /// Overrides the job's format.
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
}

fn read_input(path: Option<&PathBuf>) -> Result<serde_json::Value, CliError> {
    let text = match path {
        Some(p) if p.as_os_str() != "-" => std::fs::read_to_string(p)
            .map_err(|e| CliError::Schema(format!("cannot read {}: {e}", p.display())))?,
        _ => {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| CliError::Schema(format!("cannot read standard input: {e}")))?;
            s
        }
    };
    serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("malformed JSON: {e}")))
}

impl Cli {
    /// The job and output format this invocation describes.
    pub fn job(&self) -> Result<(JobSpec, Format), CliError> {
        use Command as C;
        let (name, args) = match &self.command {
            C::Normalize(a) => (CommandName::Normalize, a),
            C::DecomposeProp21(a) => (CommandName::DecomposeProp21, a),
            C::DecomposeProp31(a) => (CommandName::DecomposeProp31, a),
            C::SubfactorSubfin(a) => (CommandName::SubfactorSubfin, a),
            C::SubfactorSubinf(a) => (CommandName::SubfactorSubinf, a),
            C::SubfactorMsub(a) => (CommandName::SubfactorMsub, a),
            C::SubfactorUniv(a) => (CommandName::SubfactorUniv, a),
            C::PfWeights(a) => (CommandName::PfWeights, a),
            C::Verify(a) => (CommandName::Verify, a),
            C::Replay(a) => (CommandName::Replay, a),
            C::Run { job, format } => {
                let spec: JobSpec = parse(&read_input(job.as_ref())?)?;
                let f = format.unwrap_or(spec.options.format);
                return Ok((spec, f));
            }
        };
        let options = JobOptions { trace: args.trace, format: args.format, lambda: args.lambda.clone(), msub: args.msub };
        let spec = JobSpec { command: name, payload: read_input(args.input.as_ref())?, options };
        Ok((spec, args.format))
    }
}

/// Runs the parsed command line, printing the report or the error. Returns
/// the exit code.
pub fn main_with(cli: &Cli) -> i32 {
    let result = cli.job().and_then(|(job, format)| run_job(&job).map(|out| (out, format)));
    match result {
        Ok((out, format)) => {
            print!("{}", out.render(format));
            0
        }
        Err(e) => {
            if let CliError::ChecksFailed { report, .. } = &e {
                let format = cli.job().map(|(_, f)| f).unwrap_or_default();
                print!("{}", report.render(format));
            }
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
