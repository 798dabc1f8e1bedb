//! The `cblpipe` command line.
//!
//! Exit codes: 0 success, 1 pipeline or check failure, 2 configuration or
//! usage error, 3 internal error. Everything written to stdout and stderr
//! passes through the secret store first.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cblpipe_core::expander::{expand, FixedFormatSource, DEFAULT_MAX_DEPTH};
use cblpipe_core::platform::{detect_backend, emit_workflow, SecretBinding, WorkflowSpec};
use cblpipe_core::recipe::{generate_recipe, lint_recipe, RecipeText};
use cblpipe_core::stats::BenchMode;
use cblpipe_core::ExpandError;

use crate::bench::{run_bench_with, BenchConfig, BenchSummary, SimulatedInstall};
use crate::config::load_config;
use crate::copybooks::DirectoryStore;
use crate::engine::{Engine, Stage};
use crate::exit;
use crate::image::{load_deps, verify_tools};
use crate::platform::{effective_environment, BackendKind, EnvMap, Reporter};
use crate::shell::{self, shared_secrets, Executor, SharedSecrets};

/// Environment variable naming a stage (1-4) that should hit an internal
/// fault. Used to exercise the exit-code contract.
pub const FAULT_ENV: &str = "CBLPIPE_INJECT_FAULT";

#[derive(Debug, Parser)]
#[command(
    name = "cblpipe",
    version,
    about = "Portable CI/CD pipeline for COBOL: copybook expansion, unit tests, mainframe hand-off",
    after_help = "Exit codes: 0 success, 1 pipeline failure, 2 configuration or usage error, 3 internal error."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run checkout, expand, unit-test and report in order.
    Run(RunArgs),
    /// Expand the COPY directives of one COBOL source file.
    Expand(ExpandArgs),
    /// Run each dependency's version command and check its output.
    VerifyImage(VerifyImageArgs),
    /// Check a Containerfile against the image minimization rules.
    LintRecipe(LintRecipeArgs),
    /// Write a pinned Containerfile for a dependency list.
    GenRecipe(GenRecipeArgs),
    /// Write a GitHub Actions workflow for a pipeline config.
    GenWorkflow(GenWorkflowArgs),
    /// Time repeated pipeline runs with and without tool installation.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    /// Detect from the environment.
    Auto,
    Local,
    Github,
    EnvFile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Pipeline configuration file.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// CI backend supplying build metadata.
    #[arg(long, value_enum, default_value_t = BackendArg::Auto)]
    backend: BackendArg,
    /// Scratch directory [default: <config dir>/.cblpipe].
    #[arg(long, value_name = "DIR")]
    scratch: Option<PathBuf>,
    /// Also write the pipeline report as JSON.
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExpandArgs {
    /// COBOL source file.
    file: PathBuf,
    /// Directory holding the copybooks.
    #[arg(long, value_name = "DIR")]
    copybook_dir: PathBuf,
    /// Output file [default: <file stem>.expanded.cbl beside the source].
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Maximum copybook nesting depth.
    #[arg(long, value_name = "N", default_value_t = DEFAULT_MAX_DEPTH)]
    max_depth: usize,
}

#[derive(Debug, Args)]
struct VerifyImageArgs {
    /// YAML list of dependencies.
    #[arg(long, value_name = "FILE")]
    deps: PathBuf,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Args)]
struct LintRecipeArgs {
    /// Containerfile to check.
    file: PathBuf,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Args)]
struct GenRecipeArgs {
    /// YAML list of dependencies.
    #[arg(long, value_name = "FILE")]
    deps: PathBuf,
    /// Pinned minimal base image.
    #[arg(long, value_name = "IMAGE", default_value = "alpine:3.20.3")]
    base: String,
    /// Output file [default: stdout].
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenWorkflowArgs {
    /// Pipeline configuration file.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Output file [default: stdout].
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchModeArg {
    Prebuilt,
    RuntimeInstall,
    /// Both modes, then the reduction.
    Compare,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Pipeline configuration file.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Which mode to time.
    #[arg(long, value_enum, default_value_t = BenchModeArg::Compare)]
    mode: BenchModeArg,
    /// Runs per mode.
    #[arg(long, value_name = "N", default_value_t = 5)]
    iterations: usize,
    /// Simulated install of NAME taking MS milliseconds (repeatable).
    #[arg(long = "install-delay", value_name = "NAME=MS", value_parser = SimulatedInstall::parse)]
    install_delay: Vec<SimulatedInstall>,
    /// CI backend supplying build metadata.
    #[arg(long, value_enum, default_value_t = BackendArg::Auto)]
    backend: BackendArg,
    /// Also write the results as JSON.
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
}

/// A writer several reporters can share.
#[derive(Clone)]
struct SharedWriter(Arc<Mutex<Box<dyn Write + Send>>>);

impl SharedWriter {
    fn new(w: impl Write + Send + 'static) -> Self {
        Self(Arc::new(Mutex::new(Box::new(w))))
    }
}

impl Write for SharedWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).flush()
    }
}

struct Ctx {
    env: EnvMap,
    secrets: SharedSecrets,
    out: SharedWriter,
    err: SharedWriter,
}

impl Ctx {
    fn reporter(&self) -> Reporter {
        Reporter::new(self.out.clone(), self.err.clone(), self.secrets.clone())
    }
}

/// An error together with the exit code it maps to.
struct Failure {
    code: i32,
    error: anyhow::Error,
}

trait Classify<T> {
    fn or_exit(self, code: i32) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn or_exit(self, code: i32) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

type Outcome = Result<i32, Failure>;

/// Parses `args` (without the program name) and runs the subcommand.
pub fn dispatch<I, S>(
    args: I,
    env: &EnvMap,
    stdout: impl Write + Send + 'static,
    stderr: impl Write + Send + 'static,
) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv = std::iter::once("cblpipe".to_string()).chain(args.into_iter().map(Into::into));
    let ctx = Ctx {
        env: env.clone(),
        secrets: shared_secrets(),
        out: SharedWriter::new(stdout),
        err: SharedWriter::new(stderr),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let mut r = ctx.reporter();
            if e.use_stderr() {
                r.eprint(&text);
                return exit::CONFIG_ERROR;
            }
            r.print(&text);
            return exit::SUCCESS;
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => run(&ctx, a),
        Command::Expand(a) => expand_file(&ctx, a),
        Command::VerifyImage(a) => verify_image(&ctx, a),
        Command::LintRecipe(a) => lint(&ctx, a),
        Command::GenRecipe(a) => gen_recipe(&ctx, a),
        Command::GenWorkflow(a) => gen_workflow(&ctx, a),
        Command::Bench(a) => bench(&ctx, a),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            ctx.reporter().eprint(&format!("error: {:#}", f.error));
            f.code
        }
    }
}

fn backend(arg: BackendArg, env: &EnvMap) -> BackendKind {
    match arg {
        BackendArg::Auto => detect_backend(env),
        BackendArg::Local => BackendKind::Local,
        BackendArg::Github => BackendKind::GithubActions,
        BackendArg::EnvFile => BackendKind::EnvFile,
    }
}

fn injected_fault(env: &EnvMap) -> Result<Option<Stage>, Failure> {
    let Some(v) = env.get(FAULT_ENV) else {
        return Ok(None);
    };
    v.trim()
        .parse()
        .ok()
        .and_then(Stage::from_number)
        .map(Some)
        .ok_or_else(|| anyhow!("{FAULT_ENV} must be a stage number from 1 to 4, got {v:?}"))
        .or_exit(exit::CONFIG_ERROR)
}

fn write_output(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .or_exit(exit::INTERNAL_ERROR)
}

fn run(ctx: &Ctx, a: RunArgs) -> Outcome {
    let kind = backend(a.backend, &ctx.env);
    let env = effective_environment(kind, &ctx.env).or_exit(exit::CONFIG_ERROR)?;
    let fault = injected_fault(&env)?;
    let cfg = load_config(&a.config).or_exit(exit::CONFIG_ERROR)?;
    let mut engine = Engine::new(cfg, kind, env, ctx.reporter());
    if let Some(dir) = a.scratch {
        engine = engine.with_scratch(dir);
    }
    if let Some(stage) = fault {
        engine = engine.with_fault(stage);
    }
    let report = match engine.run_pipeline() {
        Ok(r) => r,
        Err(e) => {
            let code = e.exit_code();
            return Err(anyhow::Error::new(e)).or_exit(code);
        }
    };
    let r = engine.reporter();
    r.print(&format!("{:<10} {:<9} {:>9}", "stage", "status", "ms"));
    for s in &report.stages {
        let status = serde_json::to_value(s.status).ok();
        let status = status.as_ref().and_then(|v| v.as_str()).unwrap_or("?");
        r.print(&format!(
            "{:<10} {:<9} {:>9}",
            s.stage_name, status, s.duration_ms
        ));
    }
    if let Some(path) = a.json {
        let json = serde_json::to_string_pretty(&report).or_exit(exit::INTERNAL_ERROR)?;
        write_output(&path, &shell::redact(&ctx.secrets, &json))?;
    }
    Ok(if report.passed() {
        exit::SUCCESS
    } else {
        exit::PIPELINE_FAILURE
    })
}

fn expand_file(ctx: &Ctx, a: ExpandArgs) -> Outcome {
    let text = std::fs::read_to_string(&a.file)
        .with_context(|| format!("cannot read {}", a.file.display()))
        .or_exit(exit::CONFIG_ERROR)?;
    let store = DirectoryStore::new(&a.copybook_dir).or_exit(exit::CONFIG_ERROR)?;
    let origin = a
        .file
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| a.file.display().to_string());
    let expanded = FixedFormatSource::parse(origin, &text)
        .and_then(|src| expand(&src, &store, a.max_depth))
        .map_err(|e: ExpandError| anyhow::Error::new(e))
        .or_exit(exit::PIPELINE_FAILURE)?;
    let out = a.out.unwrap_or_else(|| {
        let stem = a.file.file_stem().unwrap_or_default().to_string_lossy();
        a.file.with_file_name(format!("{stem}.expanded.cbl"))
    });
    write_output(&out, &expanded.to_text())?;
    let books: Vec<&str> = expanded.copybooks_used.iter().map(String::as_str).collect();
    ctx.reporter().print(&format!(
        "expanded {} -> {} ({} lines; copybooks: {})",
        a.file.display(),
        out.display(),
        expanded.lines.len(),
        if books.is_empty() {
            "none".into()
        } else {
            books.join(", ")
        }
    ));
    Ok(exit::SUCCESS)
}

fn verify_image(ctx: &Ctx, a: VerifyImageArgs) -> Outcome {
    let deps = load_deps(&a.deps).or_exit(exit::CONFIG_ERROR)?;
    let workdir = std::env::current_dir().or_exit(exit::INTERNAL_ERROR)?;
    let report = verify_tools(&deps, &Executor::new(), &workdir);
    let mut r = ctx.reporter();
    match a.format {
        Format::Text => r.print(&report.render_text()),
        Format::Json => r.print(&report.to_json()),
    }
    Ok(if report.passed {
        exit::SUCCESS
    } else {
        exit::PIPELINE_FAILURE
    })
}

fn lint(ctx: &Ctx, a: LintRecipeArgs) -> Outcome {
    let text = std::fs::read_to_string(&a.file)
        .with_context(|| format!("cannot read {}", a.file.display()))
        .or_exit(exit::CONFIG_ERROR)?;
    let recipe = RecipeText::parse(&text).or_exit(exit::CONFIG_ERROR)?;
    let findings = lint_recipe(&recipe).or_exit(exit::CONFIG_ERROR)?;
    let mut r = ctx.reporter();
    match a.format {
        Format::Json => {
            let records: Vec<serde_json::Value> = findings
                .iter()
                .map(|f| {
                    serde_json::json!({
                        "line": f.line,
                        "rule_id": f.rule_id.to_string(),
                        "message": f.message,
                        "step": f.reduction_step,
                    })
                })
                .collect();
            r.print(&serde_json::to_string_pretty(&records).or_exit(exit::INTERNAL_ERROR)?);
        }
        Format::Text => {
            for f in &findings {
                r.print(&format!("{}: {f}", a.file.display()));
            }
            r.print(&format!("{} finding(s)", findings.len()));
        }
    }
    Ok(if findings.is_empty() {
        exit::SUCCESS
    } else {
        exit::PIPELINE_FAILURE
    })
}

fn gen_recipe(ctx: &Ctx, a: GenRecipeArgs) -> Outcome {
    let deps = load_deps(&a.deps).or_exit(exit::CONFIG_ERROR)?;
    let recipe = generate_recipe(&deps, &a.base).or_exit(exit::CONFIG_ERROR)?;
    let text = recipe.render();
    match a.out {
        Some(path) => write_output(&path, &text)?,
        None => ctx.reporter().print(&text),
    }
    Ok(exit::SUCCESS)
}

/// The config path as it should appear in the workflow: relative to the
/// current directory when possible.
fn workflow_config_path(path: &Path) -> String {
    let rel = std::env::current_dir()
        .ok()
        .and_then(|cwd| path.strip_prefix(cwd).ok().map(Path::to_path_buf))
        .unwrap_or_else(|| path.to_path_buf());
    rel.to_string_lossy().into_owned()
}

fn gen_workflow(ctx: &Ctx, a: GenWorkflowArgs) -> Outcome {
    let cfg = load_config(&a.config).or_exit(exit::CONFIG_ERROR)?;
    let mut spec = WorkflowSpec::new(cfg.container_image.clone(), workflow_config_path(&a.config));
    spec.checkout_ref = cfg.checkout_ref().to_string();
    spec.secrets = cfg.secrets.clone();
    if let Some(mf) = cfg
        .mainframe
        .as_ref()
        .filter(|mf| !spec.secrets.iter().any(|b| b.env == mf.password_env))
    {
        spec.secrets.push(SecretBinding {
            placeholder: mf.password_env.clone(),
            env: mf.password_env.clone(),
        });
    }
    let doc = emit_workflow(&spec).or_exit(exit::CONFIG_ERROR)?;
    match a.out {
        Some(path) => write_output(&path, &doc)?,
        None => ctx.reporter().print(&doc),
    }
    Ok(exit::SUCCESS)
}

fn bench(ctx: &Ctx, a: BenchArgs) -> Outcome {
    let kind = backend(a.backend, &ctx.env);
    let env = effective_environment(kind, &ctx.env).or_exit(exit::CONFIG_ERROR)?;
    let cfg = load_config(&a.config).or_exit(exit::CONFIG_ERROR)?;
    let modes = match a.mode {
        BenchModeArg::Prebuilt => vec![BenchMode::Prebuilt],
        BenchModeArg::RuntimeInstall => vec![BenchMode::RuntimeInstall],
        BenchModeArg::Compare => vec![BenchMode::RuntimeInstall, BenchMode::Prebuilt],
    };
    let mut r = ctx.reporter();
    if modes.contains(&BenchMode::RuntimeInstall) && a.install_delay.is_empty() {
        r.unstable("runtime-install mode without --install-delay measures no install cost");
    }
    let mut reports = Vec::new();
    for mode in modes {
        let bench_cfg = BenchConfig {
            mode,
            iterations: a.iterations,
            simulated_install: a.install_delay.clone(),
            pipeline: cfg.clone(),
            backend: kind,
            env: env.clone(),
            scratch: None,
        };
        let report = run_bench_with(&bench_cfg, |i, ms| {
            r.info(format!(
                "{mode} iteration {i}/{}: {:.3} s",
                a.iterations,
                ms / 1000.0
            ));
        })
        .map_err(|e| {
            let code = e.exit_code();
            Failure {
                code,
                error: e.into(),
            }
        })?;
        reports.push(report);
    }
    let summary = BenchSummary::new(reports).or_exit(exit::INTERNAL_ERROR)?;
    r.print(&summary.render_table());
    if let Some(path) = a.json {
        write_output(&path, &summary.to_json())?;
    }
    Ok(exit::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platform::MemorySink;

    fn call(args: &[&str]) -> (i32, String, String) {
        let out = MemorySink::new();
        let err = MemorySink::new();
        let code = dispatch(
            args.iter().copied(),
            &EnvMap::new(),
            out.clone(),
            err.clone(),
        );
        (code, out.contents(), err.contents())
    }

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        let (code, out, err) = call(&["frobnicate"]);
        assert_eq!(code, 2);
        assert!(out.is_empty());
        assert!(err.contains("Usage"), "{err}");
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(call(&["run", "--config", "x", "--bogus"]).0, 2);
        assert_eq!(call(&[]).0, 2);
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = call(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("gen-workflow"));
    }

    #[test]
    fn missing_config_is_a_config_error() {
        let (code, _, err) = call(&["run", "--config", "/no/such/pipeline.yaml"]);
        assert_eq!(code, 2);
        assert!(err.starts_with("error: cannot read"), "{err}");
    }

    #[test]
    fn bad_fault_hook_value() {
        let env = EnvMap::from([(FAULT_ENV.to_string(), "9".to_string())]);
        assert!(injected_fault(&env).is_err());
        let env = EnvMap::from([(FAULT_ENV.to_string(), "3".to_string())]);
        assert_eq!(injected_fault(&env).ok().flatten(), Some(Stage::UnitTest));
    }

    #[test]
    fn install_delay_values_are_validated() {
        assert_eq!(
            call(&["bench", "--config", "c.yaml", "--install-delay", "x"]).0,
            2
        );
    }
}
