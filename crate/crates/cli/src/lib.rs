//! The `compass` command line.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use compass_core::deps::{build_defuse, relevant_change_states, DependencyRelation};
use compass_core::engine::{
    parse_scenario, run, trace_from_json, trace_to_json, EngineError, Model, RunState,
};
use compass_core::fixtures;
use compass_core::lts::{self, LtsError, DEFAULT_STATE_CAP};
use compass_core::monitor::{load_monitors, MonitorError};
use compass_core::oracle::oracle_check;
use compass_core::planner::{plan_for_run, PlanError, PlanOptions};
use compass_core::report::{render_table, rows_for_run, ReportError};
use compass_core::workflow::{parse_workflow, WorkflowError};
use serde_json::json;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PIPELINE: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    #[value(alias = "machine-readable")]
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Emit {
    Summary,
    Dot,
}

#[derive(Debug, Parser)]
#[command(
    name = "compass",
    version,
    about = "Monitor workflow runs and plan compensation-based recovery"
)]
pub struct Cli {
    /// Seed for randomized commands.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Refuse to build transition systems larger than this.
    #[arg(long, global = true, default_value_t = DEFAULT_STATE_CAP)]
    pub max_states: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

/// Workflow and property sources; the bundled travel booking system when
/// omitted.
#[derive(Debug, clap::Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub workflow: Option<PathBuf>,
    #[arg(long)]
    pub properties: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct PlanArgs {
    /// Plan length bound.
    #[arg(short, long, default_value_t = 30)]
    pub k: usize,
    /// Only consider change states relevant to the run.
    #[arg(long)]
    pub relevant: bool,
    /// Drop plans that would violate a safety property.
    #[arg(long)]
    pub filter: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Translate a workflow into its transition system.
    Compile {
        workflow: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Emit::Summary)]
        emit: Emit,
    },
    /// Compile properties into colored monitors.
    Monitors {
        properties: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Emit::Summary)]
        emit: Emit,
    },
    /// Run a scenario until completion, violation or an unanswered choice.
    Run {
        /// Scenario file, or `t1` / `t2` for the bundled ones.
        scenario: String,
        #[command(flatten)]
        model: ModelArgs,
        /// Save the run as a trace file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Change states a run visited and which of them are relevant.
    Analyze {
        scenario: String,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        relevant: bool,
    },
    /// Ranked recovery plans for the violation a run stopped at.
    Plan {
        /// Scenario name or file; ignored with --trace.
        scenario: Option<String>,
        #[command(flatten)]
        model: ModelArgs,
        /// Plan against a saved trace file instead of running a scenario.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        plan: PlanArgs,
        /// Execute the plan with this rank (1-based) and report the outcome.
        #[arg(long)]
        execute: Option<usize>,
    },
    /// Plan counts and encoding sizes over a range of bounds.
    Table {
        /// Scenarios to report on.
        #[arg(required = true)]
        scenarios: Vec<String>,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 5)]
        k_from: usize,
        #[arg(long, default_value_t = 30)]
        k_to: usize,
        #[arg(long, default_value_t = 5)]
        k_step: usize,
        #[arg(long)]
        relevant: bool,
        #[arg(long)]
        filter: bool,
    },
    /// Cross-check SAT plan enumeration against depth-first search.
    OracleCheck {
        #[arg(long, default_value_t = 20)]
        cases: usize,
        /// Break blocking clauses on purpose, to see the check fail.
        #[arg(long, hide = true)]
        corrupt_blocking: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory of extra *.wf, *.props and *.scn fixtures.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Lts(#[from] LtsError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("the run did not stop at a violation")]
    NoViolation,
    #[error("no plan with rank {0}")]
    NoSuchPlan(usize),
    #[error("{0}")]
    Usage(String),
    #[error("output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_PIPELINE,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn source_or(path: &Option<PathBuf>, bundled: &str) -> Result<String, CliError> {
    match path {
        Some(p) => read(p),
        None => Ok(bundled.to_string()),
    }
}

fn scenario_text(name: &str) -> Result<String, CliError> {
    match name {
        "t1" => Ok(fixtures::T1_SCENARIO.to_string()),
        "t2" => Ok(fixtures::T2_SCENARIO.to_string()),
        path => read(Path::new(path)),
    }
}

fn load_model(args: &ModelArgs, max_states: usize) -> Result<Arc<Model>, CliError> {
    let wf = source_or(&args.workflow, fixtures::TBS_WORKFLOW)?;
    let props = source_or(&args.properties, fixtures::TBS_PROPERTIES)?;
    // check the size bound before the engine builds its own copy
    lts::compile_with_cap(&parse_workflow(&wf)?, max_states)?;
    Ok(Arc::new(Model::load(&wf, &props)?))
}

fn run_scenario(model: Arc<Model>, name: &str) -> Result<RunState, CliError> {
    Ok(run(model, parse_scenario(&scenario_text(name)?)?)?)
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with(
    args: impl IntoIterator<Item = String>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match execute(&cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let json_out = cli.format == Format::Json;
    match &cli.command {
        Command::Compile { workflow, emit } => {
            let def = parse_workflow(&source_or(workflow, fixtures::TBS_WORKFLOW)?)?;
            let lts = lts::compile_with_cap(&def, cli.max_states)?;
            if *emit == Emit::Dot {
                write!(out, "{}", lts.to_dot())?;
            } else if json_out {
                let v = json!({
                    "stats": lts.stats(),
                    "changeInducingActivities": def.change_inducing_count(),
                });
                writeln!(out, "{v}")?;
            } else {
                let s = lts.stats();
                writeln!(out, "workflow {}", def.name)?;
                writeln!(out, "states {}", s.states)?;
                writeln!(out, "forward transitions {}", s.forward_transitions)?;
                writeln!(out, "all transitions {}", s.transitions)?;
                writeln!(out, "change states {}", s.change_states)?;
                writeln!(
                    out,
                    "change-inducing activities {}",
                    def.change_inducing_count()
                )?;
            }
        }
        Command::Monitors { properties, emit } => {
            let monitors = load_monitors(&source_or(properties, fixtures::TBS_PROPERTIES)?)?;
            for m in &monitors {
                match (emit, json_out) {
                    (Emit::Dot, _) => write!(out, "{}", m.to_dot())?,
                    (Emit::Summary, true) => writeln!(
                        out,
                        "{}",
                        json!({"name": m.name, "kind": m.kind, "states": m.num_states, "colors": m.colors})
                    )?,
                    (Emit::Summary, false) => {
                        let colors: Vec<String> = m
                            .states()
                            .map(|q| format!("{}:{:?}", q.number(), m.color_of(q)).to_lowercase())
                            .collect();
                        writeln!(out, "{} {} {}", m.name, m.kind, colors.join(" "))?;
                    }
                }
            }
        }
        Command::Run {
            scenario,
            model,
            trace,
        } => {
            let r = run_scenario(load_model(model, cli.max_states)?, scenario)?;
            if let Some(path) = trace {
                std::fs::write(path, trace_to_json(&r)).map_err(|source| CliError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            }
            if json_out {
                let labels: Vec<&str> = r.history().iter().map(|h| h.label.as_str()).collect();
                writeln!(out, "{}", json!({"status": r.status(), "events": labels}))?;
            } else {
                for (i, h) in r.history().iter().enumerate() {
                    writeln!(out, "{:>3} {}", i + 1, h.label)?;
                }
                writeln!(
                    out,
                    "status: {}",
                    serde_json::to_value(r.status()).unwrap()["status"]
                        .as_str()
                        .unwrap()
                )?;
                if let Some(v) = r.violation() {
                    writeln!(
                        out,
                        "violation: {} before `{}`",
                        v.property, v.pending_event
                    )?;
                }
            }
        }
        Command::Analyze {
            scenario,
            model,
            relevant,
        } => {
            let model = load_model(model, cli.max_states)?;
            let r = run_scenario(model.clone(), scenario)?;
            let trace = r.trace();
            let table = build_defuse(&model.lts, &model.workflow);
            let rel = DependencyRelation::build(&model.lts, &table);
            let result = relevant_change_states(&model.lts, &model.workflow, &table, &rel, &trace);
            let shown: Vec<_> = result
                .visited
                .iter()
                .filter(|(s, _)| !relevant || result.relevant.contains(s))
                .collect();
            if json_out {
                let rows: Vec<_> = shown
                    .iter()
                    .map(|(s, p)| json!({"state": s.0, "provenance": p.to_string(), "relevant": result.relevant.contains(s)}))
                    .collect();
                writeln!(out, "{}", json!({"changeStates": rows}))?;
            } else {
                for (s, p) in &shown {
                    let mark = if result.relevant.contains(s) {
                        "relevant"
                    } else {
                        "-"
                    };
                    writeln!(out, "s{:<4} {:<40} {mark}", s.0, p.to_string())?;
                }
                writeln!(
                    out,
                    "{} visited, {} relevant",
                    result.visited.len(),
                    result.relevant.len()
                )?;
            }
        }
        Command::Plan {
            scenario,
            model,
            trace,
            plan,
            execute: rank,
        } => {
            let mut r = match (trace, scenario) {
                (Some(path), _) => trace_from_json(&read(path)?)?,
                (None, Some(name)) => run_scenario(load_model(model, cli.max_states)?, name)?,
                (None, None) => return Err(CliError::Usage("give a scenario or --trace".into())),
            };
            if r.violation().is_none() {
                return Err(CliError::NoViolation);
            }
            let report = plan_for_run(
                &r,
                &PlanOptions {
                    k: plan.k,
                    max_plans: None,
                    relevant_only: plan.relevant,
                    filter_forbidden: plan.filter,
                },
            )?;
            let lts = &r.model().lts;
            if json_out {
                let plans: Vec<_> = report
                    .plans
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        json!({
                            "rank": i + 1,
                            "changeState": p.change_state.0,
                            "undo": p.undo.iter().map(|u| u.label(lts)).collect::<Vec<_>>(),
                            "redo": p.redo_labels(lts),
                            "metrics": p.metrics,
                        })
                    })
                    .collect();
                writeln!(
                    out,
                    "{}",
                    json!({"kind": report.kind, "generated": report.generated, "vars": report.vars, "clauses": report.clauses, "plans": plans})
                )?;
            } else {
                for (i, p) in report.plans.iter().enumerate() {
                    writeln!(out, "{:>3}. {}", i + 1, p.display(lts))?;
                }
                writeln!(
                    out,
                    "{} plans ({} before filtering)",
                    report.plans.len(),
                    report.generated
                )?;
            }
            if let Some(rank) = rank {
                let chosen = report
                    .plans
                    .get(rank.wrapping_sub(1))
                    .cloned()
                    .ok_or(CliError::NoSuchPlan(*rank))?;
                r.execute_plan(&chosen)?;
                let status = serde_json::to_value(r.status()).unwrap();
                writeln!(
                    err,
                    "executed plan {rank}: {}",
                    status["status"].as_str().unwrap()
                )?;
            }
        }
        Command::Table {
            scenarios,
            model,
            k_from,
            k_to,
            k_step,
            relevant,
            filter,
        } => {
            if *k_step == 0 {
                return Err(CliError::Usage("--k-step must be positive".into()));
            }
            let model = load_model(model, cli.max_states)?;
            let ks: Vec<usize> = (*k_from..=*k_to)
                .step_by(*k_step)
                .filter(|k| *k > 0)
                .collect();
            let mut rows = Vec::new();
            for name in scenarios {
                if ks.is_empty() {
                    break;
                }
                let r = run_scenario(model.clone(), name)?;
                if r.violation().is_none() {
                    return Err(CliError::NoViolation);
                }
                let opts = PlanOptions {
                    k: 0,
                    max_plans: None,
                    relevant_only: *relevant,
                    filter_forbidden: *filter,
                };
                rows.extend(rows_for_run(name, &r, &ks, opts)?);
            }
            if json_out {
                writeln!(out, "{}", serde_json::to_string(&rows).unwrap())?;
            } else {
                write!(out, "{}", render_table(&rows))?;
            }
        }
        Command::OracleCheck {
            cases,
            corrupt_blocking,
        } => {
            let summary = oracle_check(cli.seed, *cases, *corrupt_blocking);
            if json_out {
                writeln!(
                    out,
                    "{}",
                    json!({"cases": summary.cases, "plans": summary.plans_compared, "mismatches": summary.mismatches.len(), "passed": summary.passed()})
                )?;
            } else {
                writeln!(
                    out,
                    "{} cases, {} plans compared, {} mismatches",
                    summary.cases,
                    summary.plans_compared,
                    summary.mismatches.len()
                )?;
            }
            if let Some(m) = summary.mismatches.first() {
                writeln!(err, "first mismatch (case {}):", m.case_index)?;
                writeln!(err, "{}", serde_json::to_string(m).unwrap())?;
                return Ok(EXIT_MISMATCH);
            }
        }
        Command::Serve {
            port,
            host,
            fixtures,
        } => {
            let set = match fixtures {
                Some(dir) => {
                    compass_service::FixtureSet::with_dir(dir).map_err(|source| CliError::Io {
                        path: dir.display().to_string(),
                        source,
                    })?
                }
                None => compass_service::FixtureSet::builtin(),
            };
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|_| CliError::Usage(format!("bad address {host}:{port}")))?;
            let state = compass_service::AppState::new(set, Default::default());
            writeln!(err, "listening on http://{addr}")?;
            tokio::runtime::Runtime::new()?.block_on(compass_service::serve(addr, state))?;
        }
    }
    Ok(EXIT_OK)
}
