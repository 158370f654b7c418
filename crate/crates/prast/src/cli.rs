//! Command-line front end: `prast check|infer|simulate|report`.
//!
//! Exit codes: 0 success; 1 parse, type, or inference failure; 2 usage
//! error (bad flags, unreadable file, unknown or non-closed entry); 3
//! runtime invariant violation (a progress or preservation failure).
//!
//! Numbers render the same way in text and JSON: the exact fraction plus a
//! decimal, which carries a `≈` prefix when six digits cannot represent the
//! value exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::ast::{Pot, Signature};
use crate::diag::{Diagnostic, SourceFile};
use crate::parser::parse_program;
use crate::potential::{infer_potential, instrument, strip_work, CostModel};
use crate::pretty::{pretty_print, type_string};
use crate::rational::Rational;
use crate::runtime::{
    expected_work, finished_mass, first_label_distribution, RunOptions, RunOutcome, Runtime,
    RuntimeErrorKind, Scheduler,
};
use crate::typecheck::{check, Checked};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DIAGNOSTICS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

// ---------------------------------------------------------------------------
// Argument grammar
// ---------------------------------------------------------------------------

#[derive(Parser, Debug)]
#[command(
    name = "prast",
    version,
    about = "Probabilistic resource-aware session types: check, infer, simulate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonOpts {
    /// Cost model to instrument before checking: none, flips, send, explicit.
    #[arg(long, default_value = "none", value_name = "MODEL")]
    cost_model: String,
    /// Remove all work statements before processing.
    #[arg(long)]
    strip_work: bool,
    /// Write the constraint systems of each solver pass to this file.
    #[arg(long, value_name = "PATH")]
    dump_lp: Option<PathBuf>,
    /// Output format: text or json.
    #[arg(long, default_value = "text", value_name = "FORMAT")]
    format: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and type-check programs, solving starred annotations.
    Check {
        #[command(flatten)]
        common: CommonOpts,
        /// Program files to check.
        #[arg(required = true, value_name = "FILE")]
        files: Vec<PathBuf>,
    },
    /// Infer expected-cost potentials under a cost model.
    Infer {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(required = true, value_name = "FILE")]
        files: Vec<PathBuf>,
    },
    /// Execute a closed process and report its outcome distribution.
    Simulate {
        #[command(flatten)]
        common: CommonOpts,
        /// Program file holding the entry process.
        #[arg(value_name = "FILE")]
        file: PathBuf,
        /// Name of a declared process with an empty channel context.
        #[arg(value_name = "ENTRY")]
        entry: String,
        /// Seed for the randomized scheduler (default: the PRAST_SEED
        /// environment variable; unset means the deterministic leftmost
        /// scheduler).
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        /// Maximum number of steps.
        #[arg(long, default_value_t = 1000, value_name = "N")]
        budget: usize,
        /// Freeze branches whose probability falls below this floor
        /// (a fraction like 1/4096, a decimal, or 2^-N; default 2^-64).
        #[arg(long, value_name = "R")]
        mass_floor: Option<String>,
        /// Write a step-by-step trace to this file.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
        /// Skip re-typing the configuration after every step.
        #[arg(long)]
        no_check_steps: bool,
    },
    /// Print the fully annotated program with every solved value.
    Report {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(required = true, value_name = "FILE")]
        files: Vec<PathBuf>,
    },
}

// ---------------------------------------------------------------------------
// Number rendering (shared by text and JSON output)
// ---------------------------------------------------------------------------

/// The decimal form of a rational: exact within six digits, or approximate
/// with a `≈` prefix.
fn decimal_string(r: &Rational) -> String {
    match r.to_exact_decimal(6) {
        Some(d) => d,
        None => format!("≈{}", r.approx_decimal(6)),
    }
}

/// Text form: `7/5 (1.4)`, `1/3 (≈0.333333)`; integers print bare.
pub fn display_rational(r: &Rational) -> String {
    if r.is_integer() {
        return r.to_string();
    }
    format!("{} ({})", r, decimal_string(r))
}

fn json_rational(r: &Rational) -> Value {
    json!({ "fraction": r.to_string(), "decimal": decimal_string(r) })
}

// ---------------------------------------------------------------------------
// Outcome plumbing
// ---------------------------------------------------------------------------

/// Everything a command produced, separated so tests can assert on it.
pub struct Outcome {
    pub stdout: String,
    pub stderr: String,
    pub code: i32,
}

impl Outcome {
    fn ok(stdout: String) -> Outcome {
        Outcome { stdout, stderr: String::new(), code: EXIT_OK }
    }

    fn usage(message: impl Into<String>) -> Outcome {
        Outcome { stdout: String::new(), stderr: format!("error: {}\n", message.into()), code: EXIT_USAGE }
    }
}

struct FileFailure {
    rendered: Vec<String>,
    diags: Vec<Diagnostic>,
    source: Option<SourceFile>,
}

fn render_diags(source: &SourceFile, diags: &[Diagnostic]) -> Vec<String> {
    diags.iter().map(|d| source.render(d)).collect()
}

fn diag_json(source: Option<&SourceFile>, d: &Diagnostic) -> Value {
    let mut v = serde_json::Map::new();
    v.insert("message".into(), Value::String(d.message.clone()));
    if let Some(rule) = d.rule {
        v.insert("rule".into(), Value::String(rule.to_string()));
    }
    if let (Some(src), Some(span)) = (source, d.span) {
        let (line, col) = src.line_col(span.start);
        v.insert("line".into(), json!(line));
        v.insert("column".into(), json!(col));
    }
    Value::Object(v)
}

// ---------------------------------------------------------------------------
// Shared pipeline
// ---------------------------------------------------------------------------

struct Prepared {
    /// The signature as fed to the checker (after optional stripping and
    /// instrumentation), kept to tell solved annotations from written ones.
    input: Signature,
    /// The checked program with every annotation concrete.
    checked: Checked,
}

/// Render a session type with annotations as exact fractions (the pretty
/// printer prefers short decimals; solved values read better exactly).
fn type_fractions(t: &crate::ast::SessionType) -> String {
    use crate::ast::{Pot, Prob, SessionType as S};
    fn prob(p: &Prob) -> String {
        match p.as_const() {
            Some(r) => r.to_string(),
            None => p.to_string(),
        }
    }
    fn pot(p: &Pot) -> String {
        match p.as_const() {
            Some(r) => r.to_string(),
            None => p.to_string(),
        }
    }
    match t {
        S::One => "1".into(),
        S::Name(n) => n.clone(),
        S::IChoice(bs) => {
            let inner: Vec<String> =
                bs.iter().map(|(l, a)| format!("{l} : {}", type_fractions(a))).collect();
            format!("+{{ {} }}", inner.join(", "))
        }
        S::EChoice(bs) => {
            let inner: Vec<String> =
                bs.iter().map(|(l, a)| format!("{l} : {}", type_fractions(a))).collect();
            format!("&{{ {} }}", inner.join(", "))
        }
        S::PIChoice(bs) => {
            let inner: Vec<String> = bs
                .iter()
                .map(|(l, p, a)| format!("{l}^{} : {}", prob(p), type_fractions(a)))
                .collect();
            format!("+{{ {} }}", inner.join(", "))
        }
        S::PEChoice(bs) => {
            let inner: Vec<String> = bs
                .iter()
                .map(|(l, p, a)| format!("{l}^{} : {}", prob(p), type_fractions(a)))
                .collect();
            format!("&{{ {} }}", inner.join(", "))
        }
        S::Tensor(a, b) => format!("({}) * ({})", type_fractions(a), type_fractions(b)),
        S::Lolli(a, b) => format!("({}) -o ({})", type_fractions(a), type_fractions(b)),
        S::Pay(r, a) => format!("|>{{{}}} {}", pot(r), type_fractions(a)),
        S::Get(r, a) => format!("<|{{{}}} {}", pot(r), type_fractions(a)),
    }
}

/// One line per annotation the checker had to solve: types whose rendering
/// changed and declaration potentials that were unknown in the source.
fn solved_lines(input: &Signature, checked: &Checked) -> Vec<String> {
    let mut out = Vec::new();
    for (name, def) in &checked.sig.types {
        if let Some(old) = input.types.get(name) {
            if type_string(&def.body) != type_string(&old.body) {
                out.push(format!("type {name} = {}", type_fractions(&def.body)));
            }
        }
    }
    for (name, def) in &checked.sig.procs {
        let was_known = matches!(
            input.procs.get(name).map(|d| &d.potential),
            Some(Pot::Const(_))
        );
        if let (false, Pot::Const(q)) = (was_known, &def.potential) {
            out.push(format!("{name} : potential {}", display_rational(q)));
        }
    }
    out
}

enum PrepareError {
    Io(String),
    Diags(FileFailure),
}

fn parse_cost_model(name: &str) -> Result<CostModel, String> {
    CostModel::parse(name)
        .ok_or_else(|| format!("unknown cost model `{name}` (expected none, flips, send, or explicit)"))
}

fn parse_mass_floor(s: &str) -> Result<Rational, String> {
    let r = if let Some(exp) = s.strip_prefix("2^") {
        let e: i32 = exp.parse().map_err(|_| format!("bad exponent in mass floor `{s}`"))?;
        Rational::pow2(e)
    } else {
        Rational::parse_literal(s).ok_or_else(|| format!("cannot parse mass floor `{s}`"))?
    };
    if !r.is_positive() || r >= Rational::one() {
        return Err(format!("mass floor must lie strictly between 0 and 1, got {r}"));
    }
    Ok(r)
}

fn prepare(path: &Path, model: CostModel, strip: bool) -> Result<Prepared, PrepareError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PrepareError::Io(format!("cannot read {}: {e}", path.display())))?;
    let source = SourceFile::new(path.display().to_string(), text);
    let parsed = match parse_program(&source.text) {
        Ok(sig) => sig,
        Err(diags) => {
            let rendered = render_diags(&source, &diags);
            return Err(PrepareError::Diags(FileFailure { rendered, diags, source: Some(source) }));
        }
    };
    let stripped = if strip { strip_work(&parsed) } else { parsed };
    let instrumented = instrument(&stripped, model);
    match check(&instrumented) {
        Ok(checked) => Ok(Prepared { input: instrumented, checked }),
        Err(diags) => {
            let rendered = render_diags(&source, &diags);
            Err(PrepareError::Diags(FileFailure { rendered, diags, source: Some(source) }))
        }
    }
}

fn write_lp_dump(path: &Path, file: &Path, checked: &Checked) -> Result<(), String> {
    let mut out = String::new();
    let _ = writeln!(out, "; constraint systems for {}", file.display());
    for pass in &checked.passes {
        let _ = writeln!(
            out,
            "\n== pass {} ({} variables, {} constraints, objective {})",
            pass.name,
            pass.variables,
            pass.constraints,
            display_rational(&pass.objective)
        );
        out.push_str(&pass.dump);
    }
    std::fs::write(path, out).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

fn cmd_check(common: &CommonOpts, files: &[PathBuf]) -> Outcome {
    let model = match parse_cost_model(&common.cost_model) {
        Ok(m) => m,
        Err(e) => return Outcome::usage(e),
    };
    let json_mode = common.format == "json";
    let mut stdout = String::new();
    let mut stderr = String::new();
    let mut code = EXIT_OK;
    let mut json_files = Vec::new();

    for path in files {
        match prepare(path, model, common.strip_work) {
            Ok(prep) => {
                if let Some(dump) = &common.dump_lp {
                    if let Err(e) = write_lp_dump(dump, path, &prep.checked) {
                        return Outcome::usage(e);
                    }
                }
                let sig = &prep.checked.sig;
                let solved = solved_lines(&prep.input, &prep.checked);
                if json_mode {
                    json_files.push(json!({
                        "path": path.display().to_string(),
                        "ok": true,
                        "types": sig.types.len(),
                        "processes": sig.procs.len(),
                        "solved": solved,
                        "diagnostics": [],
                    }));
                } else {
                    let _ = writeln!(
                        stdout,
                        "{}: ok ({} type{}, {} process{})",
                        path.display(),
                        sig.types.len(),
                        if sig.types.len() == 1 { "" } else { "s" },
                        sig.procs.len(),
                        if sig.procs.len() == 1 { "" } else { "es" },
                    );
                    if !solved.is_empty() {
                        let _ = writeln!(stdout, "solved:");
                        for line in &solved {
                            let _ = writeln!(stdout, "  {line}");
                        }
                    }
                }
            }
            Err(e) => {
                let (file_code, entry) = render_failure(path, e, &mut stderr, json_mode);
                if code == EXIT_OK {
                    code = file_code;
                }
                if let Some(entry) = entry {
                    json_files.push(entry);
                }
            }
        }
    }

    if json_mode {
        stdout = render_json(json!({
            "command": "check",
            "ok": code == EXIT_OK,
            "files": json_files,
        }));
    }
    Outcome { stdout, stderr, code }
}

fn render_failure(
    path: &Path,
    e: PrepareError,
    stderr: &mut String,
    json_mode: bool,
) -> (i32, Option<Value>) {
    match e {
        PrepareError::Io(msg) => {
            let _ = writeln!(stderr, "error: {msg}");
            (EXIT_USAGE, None)
        }
        PrepareError::Diags(fail) => {
            for line in &fail.rendered {
                let _ = writeln!(stderr, "{line}");
            }
            let entry = json_mode.then(|| {
                json!({
                    "path": path.display().to_string(),
                    "ok": false,
                    "diagnostics": fail
                        .diags
                        .iter()
                        .map(|d| diag_json(fail.source.as_ref(), d))
                        .collect::<Vec<_>>(),
                })
            });
            (EXIT_DIAGNOSTICS, entry)
        }
    }
}

fn render_json(v: Value) -> String {
    let mut s = serde_json::to_string_pretty(&v).expect("serializable");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

fn cmd_infer(common: &CommonOpts, files: &[PathBuf]) -> Outcome {
    let model = match parse_cost_model(&common.cost_model) {
        Ok(m) => m,
        Err(e) => return Outcome::usage(e),
    };
    let json_mode = common.format == "json";
    let mut stdout = String::new();
    let mut stderr = String::new();
    let mut code = EXIT_OK;
    let mut json_files = Vec::new();

    for path in files {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return Outcome::usage(format!("cannot read {}: {e}", path.display())),
        };
        let source = SourceFile::new(path.display().to_string(), text);
        let parsed = match parse_program(&source.text) {
            Ok(sig) => sig,
            Err(diags) => {
                for line in render_diags(&source, &diags) {
                    let _ = writeln!(stderr, "{line}");
                }
                if code == EXIT_OK {
                    code = EXIT_DIAGNOSTICS;
                }
                if json_mode {
                    json_files.push(json!({
                        "path": path.display().to_string(),
                        "ok": false,
                        "diagnostics": diags.iter().map(|d| diag_json(Some(&source), d)).collect::<Vec<_>>(),
                    }));
                }
                continue;
            }
        };
        let base = if common.strip_work { strip_work(&parsed) } else { parsed };
        match infer_potential(&base, model) {
            Ok(report) => {
                if let Some(dump) = &common.dump_lp {
                    if let Err(e) = write_lp_dump(dump, path, &report.checked) {
                        return Outcome::usage(e);
                    }
                }
                let program = pretty_print(&report.checked.sig);
                if json_mode {
                    json_files.push(json!({
                        "path": path.display().to_string(),
                        "ok": true,
                        "cost_model": model.name(),
                        "program": program,
                        "potentials": report
                            .decls
                            .iter()
                            .map(|(name, q)| json!({ "process": name, "potential": json_rational(q) }))
                            .collect::<Vec<_>>(),
                        "objective": json_rational(&report.objective),
                    }));
                } else {
                    let _ = writeln!(stdout, "% {} annotated under the {} cost model", path.display(), model.name());
                    stdout.push_str(&program);
                    let _ = writeln!(stdout, "potentials:");
                    for (name, q) in &report.decls {
                        let _ = writeln!(stdout, "  {} : {}", name, display_rational(q));
                    }
                    let _ = writeln!(stdout, "  total: {}", display_rational(&report.objective));
                }
            }
            Err(diags) => {
                for line in render_diags(&source, &diags) {
                    let _ = writeln!(stderr, "{line}");
                }
                if code == EXIT_OK {
                    code = EXIT_DIAGNOSTICS;
                }
                if json_mode {
                    json_files.push(json!({
                        "path": path.display().to_string(),
                        "ok": false,
                        "diagnostics": diags.iter().map(|d| diag_json(Some(&source), d)).collect::<Vec<_>>(),
                    }));
                }
            }
        }
    }

    if json_mode {
        stdout = render_json(json!({
            "command": "infer",
            "ok": code == EXIT_OK,
            "files": json_files,
        }));
    }
    Outcome { stdout, stderr, code }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    common: &CommonOpts,
    file: &Path,
    entry: &str,
    seed: Option<u64>,
    budget: usize,
    mass_floor: Option<&str>,
    trace: Option<&Path>,
    no_check_steps: bool,
) -> Outcome {
    let model = match parse_cost_model(&common.cost_model) {
        Ok(m) => m,
        Err(e) => return Outcome::usage(e),
    };
    if budget == 0 {
        return Outcome::usage("budget must be positive");
    }
    let floor = match mass_floor {
        Some(s) => match parse_mass_floor(s) {
            Ok(r) => r,
            Err(e) => return Outcome::usage(e),
        },
        None => Rational::pow2(-64),
    };
    let seed = seed.or_else(|| {
        std::env::var("PRAST_SEED").ok().and_then(|s| s.parse::<u64>().ok())
    });
    let scheduler = match seed {
        Some(s) => Scheduler::Seeded(s),
        None => Scheduler::Deterministic,
    };

    let prep = match prepare(file, model, common.strip_work) {
        Ok(p) => p,
        Err(e) => {
            let mut stderr = String::new();
            let (code, _) = render_failure(file, e, &mut stderr, false);
            return Outcome { stdout: String::new(), stderr, code };
        }
    };
    if let Some(dump) = &common.dump_lp {
        if let Err(e) = write_lp_dump(dump, file, &prep.checked) {
            return Outcome::usage(e);
        }
    }
    let sig = &prep.checked.sig;
    let opts = RunOptions { scheduler, budget, mass_floor: floor.clone(), check_steps: !no_check_steps };
    let mut rt = match Runtime::new(sig, entry, opts) {
        Ok(rt) => rt,
        Err(msg) => return Outcome::usage(msg),
    };
    let run = rt.run();

    if let Some(path) = trace {
        let mut out = String::new();
        for step in &rt.trace {
            let works: Vec<String> = step.works.iter().map(|w| w.to_string()).collect();
            let _ = writeln!(out, "{} {} {} [{}]", step.index, step.rule, step.subject, works.join(", "));
        }
        if let Err(e) = std::fs::write(path, out) {
            return Outcome::usage(format!("cannot write {}: {e}", path.display()));
        }
    }

    let report = match run {
        Ok(r) => r,
        Err(e) => {
            let code = match e.kind {
                RuntimeErrorKind::Stuck | RuntimeErrorKind::Preservation | RuntimeErrorKind::Internal => {
                    EXIT_RUNTIME
                }
            };
            return Outcome {
                stdout: String::new(),
                stderr: format!("error: {e}\n"),
                code,
            };
        }
    };

    let labels = first_label_distribution(&rt.cfg, &rt.root);
    let work = expected_work(&rt.cfg);
    let finished = finished_mass(sig, &rt.cfg);
    let truncated = Rational::one() - &finished;
    let bound_holds = work <= rt.q0;

    let scheduler_desc = match scheduler {
        Scheduler::Deterministic => "deterministic".to_string(),
        Scheduler::Seeded(s) => format!("seeded {s}"),
    };

    if common.format == "json" {
        let mut determined = labels.labels.iter().map(|(_, p)| p.clone()).sum::<Rational>();
        determined += labels.closed.clone();
        let label_entries: Vec<Value> = labels
            .labels
            .iter()
            .map(|(l, p)| {
                let mut obj = serde_json::Map::new();
                obj.insert("label".into(), Value::String(l.clone()));
                obj.insert("mass".into(), json_rational(p));
                if labels.undetermined.is_positive() && determined.is_positive() {
                    obj.insert("share_of_determined".into(), json_rational(&(p / &determined)));
                }
                Value::Object(obj)
            })
            .collect();
        let v = json!({
            "command": "simulate",
            "path": file.display().to_string(),
            "entry": entry,
            "scheduler": scheduler_desc,
            "budget": budget,
            "mass_floor": json_rational(&floor),
            "outcome": match report.outcome {
                RunOutcome::Poised => "poised",
                RunOutcome::BudgetExhausted => "budget exhausted",
                RunOutcome::Truncated => "truncated",
            },
            "steps": report.steps,
            "root": rt.root,
            "labels": label_entries,
            "closed_mass": json_rational(&labels.closed),
            "truncated_mass": json_rational(&truncated),
            "expected_work": json_rational(&work),
            "potential": json_rational(&rt.q0),
            "work_bounded_by_potential": bound_holds,
        });
        return Outcome { stdout: render_json(v), stderr: String::new(), code: EXIT_OK };
    }

    let mut out = String::new();
    let _ = writeln!(
        out,
        "{}: simulate {} ({} scheduler, budget {})",
        file.display(),
        entry,
        scheduler_desc,
        budget
    );
    let _ = writeln!(out, "outcome: {} after {} step{}", report.outcome, report.steps, if report.steps == 1 { "" } else { "s" });
    let mut determined = labels.labels.iter().map(|(_, p)| p.clone()).sum::<Rational>();
    determined += labels.closed.clone();
    if !labels.labels.is_empty() {
        let _ = writeln!(out, "first label on {}:", rt.root);
        for (l, p) in &labels.labels {
            if labels.undetermined.is_positive() && determined.is_positive() {
                let share = p / &determined;
                let _ = writeln!(
                    out,
                    "  {l}: {} of all runs, {} of determined runs",
                    display_rational(p),
                    display_rational(&share)
                );
            } else {
                let _ = writeln!(out, "  {l}: {}", display_rational(p));
            }
        }
    }
    if labels.closed.is_positive() {
        let _ = writeln!(out, "closed without a label: {}", display_rational(&labels.closed));
    }
    if truncated.is_positive() {
        let _ = writeln!(out, "truncated mass: {}", display_rational(&truncated));
    }
    let _ = writeln!(
        out,
        "expected work: {} {} potential {}",
        display_rational(&work),
        if bound_holds { "<=" } else { "EXCEEDS" },
        display_rational(&rt.q0)
    );
    Outcome::ok(out)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn cmd_report(common: &CommonOpts, files: &[PathBuf]) -> Outcome {
    let model = match parse_cost_model(&common.cost_model) {
        Ok(m) => m,
        Err(e) => return Outcome::usage(e),
    };
    let json_mode = common.format == "json";
    let mut stdout = String::new();
    let mut stderr = String::new();
    let mut code = EXIT_OK;
    let mut json_files = Vec::new();

    for path in files {
        match prepare(path, model, common.strip_work) {
            Ok(prep) => {
                if let Some(dump) = &common.dump_lp {
                    if let Err(e) = write_lp_dump(dump, path, &prep.checked) {
                        return Outcome::usage(e);
                    }
                }
                let program = pretty_print(&prep.checked.sig);
                if json_mode {
                    json_files.push(json!({
                        "path": path.display().to_string(),
                        "ok": true,
                        "program": program,
                    }));
                } else {
                    let _ = writeln!(stdout, "% {} with all annotations solved", path.display());
                    stdout.push_str(&program);
                }
            }
            Err(e) => {
                let (file_code, entry) = render_failure(path, e, &mut stderr, json_mode);
                if code == EXIT_OK {
                    code = file_code;
                }
                if let Some(entry) = entry {
                    json_files.push(entry);
                }
            }
        }
    }

    if json_mode {
        stdout = render_json(json!({
            "command": "report",
            "ok": code == EXIT_OK,
            "files": json_files,
        }));
    }
    Outcome { stdout, stderr, code }
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Parse arguments (not including the binary name) and execute, returning
/// the outputs instead of printing them.
pub fn execute<I, S>(args: I) -> Outcome
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let mut argv: Vec<std::ffi::OsString> = vec!["prast".into()];
    argv.extend(args.into_iter().map(|a| a.into()));
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let rendered = e.render().to_string();
            return if code == EXIT_OK {
                Outcome { stdout: rendered, stderr: String::new(), code }
            } else {
                Outcome { stdout: String::new(), stderr: rendered, code }
            };
        }
    };
    match &cli.command {
        Command::Check { common, files } => cmd_check(common, files),
        Command::Infer { common, files } => cmd_infer(common, files),
        Command::Simulate { common, file, entry, seed, budget, mass_floor, trace, no_check_steps } => {
            cmd_simulate(
                common,
                file,
                entry,
                *seed,
                *budget,
                mass_floor.as_deref(),
                trace.as_deref(),
                *no_check_steps,
            )
        }
        Command::Report { common, files } => cmd_report(common, files),
    }
}

/// Execute and print, returning the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let outcome = execute(args);
    print!("{}", outcome.stdout);
    eprint!("{}", outcome.stderr);
    outcome.code
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(name: &str, text: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("prast-cli-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        std::fs::write(&path, text).unwrap();
        path
    }

    const TF: &str = "type sbool = +{ true^* : 1, false^* : 1 }\n\
        decl TF : . |{*}- (b : sbool)\n\
        proc b <- TF = flip 3/5 ( H => work {1} ; b..true ; close b\n\
                                | T => work {2} ; b..false ; close b )\n";

    fn args(list: &[&str]) -> Vec<std::ffi::OsString> {
        list.iter().map(|s| s.into()).collect()
    }

    #[test]
    fn check_solves_the_starred_coin() {
        let path = write_tmp("tf_check.prast", TF);
        let out = execute(args(&["check", path.to_str().unwrap()]));
        assert_eq!(out.code, EXIT_OK, "stderr: {}", out.stderr);
        assert!(out.stdout.contains("sbool"), "{}", out.stdout);
        assert!(out.stdout.contains("3/5"), "{}", out.stdout);
        assert!(out.stdout.contains("2/5"), "{}", out.stdout);
        assert!(out.stdout.contains("7/5"), "{}", out.stdout);
    }

    #[test]
    fn empty_file_checks_clean() {
        let path = write_tmp("empty.prast", "");
        let out = execute(args(&["check", path.to_str().unwrap()]));
        assert_eq!(out.code, EXIT_OK);
        assert!(out.stdout.contains("0 types"), "{}", out.stdout);
    }

    #[test]
    fn rejection_exits_one_and_names_the_constraint() {
        let src = "type B = +{ true : +{ H^1/2 : 1, T^1/2 : 1 }, false : +{ H^1/2 : 1, T^1/2 : 1 } }\n\
            decl bad : . |- (b : B)\n\
            proc b <- bad = flip 1/2 ( H => b.true ; b..H ; close b\n\
                                     | T => b.false ; b..T ; close b )\n";
        let path = write_tmp("bad.prast", src);
        let out = execute(args(&["check", path.to_str().unwrap()]));
        assert_eq!(out.code, EXIT_DIAGNOSTICS);
        assert!(out.stderr.contains("1/2 = 1"), "{}", out.stderr);
    }

    #[test]
    fn unknown_flags_and_files_are_usage_errors() {
        let out = execute(args(&["check", "/nonexistent/x.prast"]));
        assert_eq!(out.code, EXIT_USAGE);
        let out = execute(args(&["bogus-subcommand"]));
        assert_eq!(out.code, EXIT_USAGE);
        let out = execute(args(&["check", "--cost-model", "bogus", "x.prast"]));
        assert_eq!(out.code, EXIT_USAGE);
    }

    #[test]
    fn simulate_reports_the_distribution_and_work_bound() {
        let path = write_tmp("tf_sim.prast", TF);
        let out = execute(args(&["simulate", path.to_str().unwrap(), "TF"]));
        assert_eq!(out.code, EXIT_OK, "stderr: {}", out.stderr);
        assert!(out.stdout.contains("true: 3/5"), "{}", out.stdout);
        assert!(out.stdout.contains("false: 2/5"), "{}", out.stdout);
        assert!(out.stdout.contains("expected work: 7/5 (1.4) <= potential 7/5 (1.4)"), "{}", out.stdout);
    }

    #[test]
    fn simulate_rejects_non_closed_entries() {
        let src = "type pbool = +{ true^3/5 : 1, false^2/5 : 1 }\n\
            type npbool = +{ true^2/5 : 1, false^3/5 : 1 }\n\
            decl neg : (b : pbool) |- (c : npbool)\n\
            proc c <- neg b = pcase b ( true => c..false ; wait b ; close c\n\
                                      | false => c..true ; wait b ; close c )\n";
        let path = write_tmp("neg_open.prast", src);
        let out = execute(args(&["simulate", path.to_str().unwrap(), "neg"]));
        assert_eq!(out.code, EXIT_USAGE, "stdout: {}", out.stdout);
        assert!(out.stderr.contains("closed"), "{}", out.stderr);
    }

    #[test]
    fn text_and_json_carry_identical_numbers() {
        let path = write_tmp("tf_json.prast", TF);
        let text = execute(args(&["simulate", path.to_str().unwrap(), "TF"]));
        let json = execute(args(&["simulate", path.to_str().unwrap(), "TF", "--format", "json"]));
        assert_eq!(json.code, EXIT_OK);
        let v: serde_json::Value = serde_json::from_str(&json.stdout).unwrap();
        for (label, frac, dec) in
            [("true", "3/5", "0.6"), ("false", "2/5", "0.4")]
        {
            let entry = v["labels"]
                .as_array()
                .unwrap()
                .iter()
                .find(|e| e["label"] == label)
                .unwrap();
            assert_eq!(entry["mass"]["fraction"], frac);
            assert_eq!(entry["mass"]["decimal"], dec);
            assert!(text.stdout.contains(&format!("{label}: {frac} ({dec})")), "{}", text.stdout);
        }
        assert_eq!(v["expected_work"]["fraction"], "7/5");
        assert_eq!(v["potential"]["fraction"], "7/5");
    }

    #[test]
    fn seeded_and_deterministic_schedulers_agree_on_the_coin() {
        let path = write_tmp("tf_seed.prast", TF);
        for seed in ["1", "2", "99"] {
            let out = execute(args(&["simulate", path.to_str().unwrap(), "TF", "--seed", seed]));
            assert_eq!(out.code, EXIT_OK);
            assert!(out.stdout.contains("true: 3/5"), "{}", out.stdout);
        }
    }

    #[test]
    fn infer_renders_the_annotated_program() {
        let path = write_tmp("tf_infer.prast", TF);
        let out = execute(args(&[
            "infer",
            path.to_str().unwrap(),
            "--cost-model",
            "explicit",
        ]));
        assert_eq!(out.code, EXIT_OK, "stderr: {}", out.stderr);
        assert!(out.stdout.contains("decl TF"), "{}", out.stdout);
        assert!(out.stdout.contains("TF : 7/5 (1.4)"), "{}", out.stdout);
    }

    #[test]
    fn mass_floor_parses_fractions_decimals_and_powers() {
        assert_eq!(parse_mass_floor("1/4096").unwrap(), Rational::pow2(-12));
        assert_eq!(parse_mass_floor("0.5").unwrap(), Rational::new(1, 2));
        assert_eq!(parse_mass_floor("2^-20").unwrap(), Rational::pow2(-20));
        assert!(parse_mass_floor("0").is_err());
        assert!(parse_mass_floor("1").is_err());
        assert!(parse_mass_floor("3/2").is_err());
        assert!(parse_mass_floor("junk").is_err());
    }

    #[test]
    fn report_prints_a_reparseable_program() {
        let path = write_tmp("tf_report.prast", TF);
        let out = execute(args(&["report", path.to_str().unwrap()]));
        assert_eq!(out.code, EXIT_OK);
        let sig = crate::parser::parse_program(&out.stdout).expect("report output reparses");
        assert_eq!(sig.procs.len(), 1);
    }
}
