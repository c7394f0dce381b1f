//! Batch front end: exploit campaigns, strategy comparisons, callsite
//! analysis and overlap audits, each writing one machine-readable report.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pagespray::analyzer::{run_analysis, AnalysisReport, CallGraphDoc, RootConfig};
use pagespray::content_digest;
use pagespray::exploit::{run_campaign, run_campaign_logged, run_compare, CampaignReport, Scenario, TOOL_VERSION};
use pagespray::mitigation::{overlap_audit, MitigationMode, OverlapReport, TaggedEvent};

#[derive(Parser)]
#[command(name = "pagespray", version, about = "Page-spray exploit simulator and callsite analyzer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an exploit campaign described by a scenario file.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        campaign: CampaignArgs,
        /// Also write every trial's allocator events as JSON lines.
        #[arg(long)]
        events: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run all three strategies under idle and busy noise with shared seeds.
    Compare {
        scenario: PathBuf,
        #[command(flatten)]
        campaign: CampaignArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Search a callgraph document for page-spraying callsites.
    Analyze {
        callgraph: PathBuf,
        /// Root configuration; defaults to the document's own, then the built-in set.
        #[arg(long)]
        roots: Option<PathBuf>,
        /// Recorded in the report; the analysis itself is not randomized.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Count slab-to-buffer page overlaps in an event log, or in a campaign
    /// report re-run from its scenario.
    Audit {
        input: PathBuf,
        /// Scenario that produced the campaign report given as input.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Args)]
struct CampaignArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u32>,
    /// none | gfp | slab-virtual | object
    #[arg(long)]
    mitigation: Option<MitigationMode>,
}

#[derive(Args)]
struct OutputArgs {
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

enum Failure {
    /// Bad or missing input; exit code 2.
    Input(String),
    /// Everything else; exit code 1.
    Runtime(String),
}

type CmdResult<T = ()> = Result<T, Failure>;

fn input<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Input(format!("{context}: {e}"))
}

fn runtime<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Runtime(format!("{context}: {e}"))
}

fn read(path: &Path) -> CmdResult<String> {
    fs::read_to_string(path).map_err(input(path.display()))
}

fn load_scenario(path: &Path, args: &CampaignArgs) -> CmdResult<Scenario> {
    let mut s = Scenario::from_json(&read(path)?).map_err(input(path.display()))?;
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(trials) = args.trials {
        s.trials = trials;
    }
    if let Some(m) = args.mitigation {
        s.mitigation = m;
    }
    s.validate().map_err(input(path.display()))?;
    if s.trials == 0 {
        return Err(Failure::Input(format!("{}: trials must be at least 1", path.display())));
    }
    Ok(s)
}

fn emit(out: &OutputArgs, body: String) -> CmdResult {
    match &out.out {
        Some(path) => fs::write(path, body).map_err(runtime(path.display())),
        None => std::io::stdout().write_all(body.as_bytes()).map_err(runtime("stdout")),
    }
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn csv_rows<T: Serialize>(rows: &[T]) -> CmdResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(runtime("csv"))?;
    }
    let bytes = w.into_inner().map_err(runtime("csv"))?;
    String::from_utf8(bytes).map_err(runtime("csv"))
}

fn write_events(path: &Path, events: &[TaggedEvent]) -> CmdResult {
    let mut body = String::new();
    for e in events {
        body.push_str(&serde_json::to_string(e).expect("event serializes"));
        body.push('\n');
    }
    fs::write(path, body).map_err(runtime(path.display()))
}

fn cmd_run(scenario: &Path, campaign: &CampaignArgs, events: Option<&Path>, out: &OutputArgs) -> CmdResult {
    let s = load_scenario(scenario, campaign)?;
    let report = match events {
        Some(path) => {
            let (report, log) = run_campaign_logged(&s).map_err(input(scenario.display()))?;
            write_events(path, &log)?;
            report
        }
        None => run_campaign(&s).map_err(input(scenario.display()))?,
    };
    let summary = format!("{}\n{}\n", CampaignReport::csv_header(), report.csv_row());
    eprint!("{summary}");
    emit(
        out,
        match out.format {
            Format::Json => json(&report),
            Format::Csv => summary,
        },
    )
}

#[derive(Serialize)]
struct CompareCsv<'a> {
    scenario: &'a str,
    noise: &'static str,
    single_thread: f64,
    multi_process: f64,
    page_spray: f64,
    seed: u64,
    trials: u32,
    digest: &'a str,
    tool_version: &'a str,
}

fn cmd_compare(scenario: &Path, campaign: &CampaignArgs, out: &OutputArgs) -> CmdResult {
    let raw: serde_json::Value = serde_json::from_str(&read(scenario)?).map_err(input(scenario.display()))?;
    if raw.get("strategy").is_some() {
        eprintln!("note: compare runs every strategy; the scenario's `strategy` is ignored");
    }
    let s = load_scenario(scenario, campaign)?;
    let report = run_compare(&s).map_err(input(scenario.display()))?;
    let body = match out.format {
        Format::Json => json(&report),
        Format::Csv => {
            let rows: Vec<CompareCsv> = report
                .rows
                .iter()
                .map(|r| CompareCsv {
                    scenario: &report.scenario,
                    noise: match r.noise {
                        pagespray::noise::NoisePreset::Idle => "idle",
                        pagespray::noise::NoisePreset::Busy => "busy",
                    },
                    single_thread: r.single_thread,
                    multi_process: r.multi_process,
                    page_spray: r.page_spray,
                    seed: report.seed,
                    trials: report.trials,
                    digest: &report.scenario_digest,
                    tool_version: &report.tool_version,
                })
                .collect();
            csv_rows(&rows)?
        }
    };
    emit(out, body)
}

#[derive(Serialize)]
struct AnalyzeOutput<'a> {
    tool_version: &'a str,
    seed: u64,
    input_digest: String,
    root_config: &'a RootConfig,
    #[serde(flatten)]
    report: &'a AnalysisReport,
}

#[derive(Serialize)]
struct CandidateCsv<'a> {
    function: &'a str,
    kind: &'static str,
    subsystem: &'a str,
    syscall: &'a str,
    input_digest: &'a str,
}

fn cmd_analyze(callgraph: &Path, roots: Option<&Path>, seed: u64, out: &OutputArgs) -> CmdResult {
    let doc = CallGraphDoc::from_json(&read(callgraph)?).map_err(input(callgraph.display()))?;
    let cfg = match roots {
        Some(path) => serde_json::from_str::<RootConfig>(&read(path)?).map_err(input(path.display()))?,
        None => doc.root_config.clone().unwrap_or_default(),
    };
    let report = run_analysis(&doc, &cfg).map_err(input(callgraph.display()))?;
    let digest = doc.digest();
    let body = match out.format {
        Format::Json => json(&AnalyzeOutput {
            tool_version: TOOL_VERSION,
            seed,
            input_digest: digest,
            root_config: &cfg,
            report: &report,
        }),
        Format::Csv => {
            let rows: Vec<CandidateCsv> = report
                .candidates
                .iter()
                .map(|c| CandidateCsv {
                    function: &c.function,
                    kind: match c.kind {
                        pagespray::analyzer::CandidateKind::CopyWrite => "copy_write",
                        pagespray::analyzer::CandidateKind::Remapping => "remapping",
                    },
                    subsystem: &c.subsystem,
                    syscall: c.syscall.as_deref().unwrap_or(""),
                    input_digest: &digest,
                })
                .collect();
            if rows.is_empty() {
                "function,kind,subsystem,syscall,input_digest\n".to_string()
            } else {
                csv_rows(&rows)?
            }
        }
    };
    emit(out, body)
}

#[derive(Serialize)]
struct AuditOutput<'a> {
    tool_version: &'a str,
    source: &'static str,
    /// Campaign seed when auditing a report; event logs carry per-trial seeds.
    seed: Option<u64>,
    input_digest: String,
    #[serde(flatten)]
    report: &'a OverlapReport,
}

#[derive(Serialize)]
struct AuditCsv<'a> {
    source: &'a str,
    seed: Option<u64>,
    overlap_count: usize,
    logged_overlaps: usize,
    events_scanned: usize,
    input_digest: &'a str,
    tool_version: &'a str,
}

fn parse_events(text: &str, path: &Path) -> CmdResult<Vec<TaggedEvent>> {
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(text).map_err(input(path.display()));
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(input(format!("{}:{}", path.display(), i + 1))))
        .collect()
}

fn audit_report(report: &CampaignReport, scenario: Option<&Path>) -> CmdResult<OverlapReport> {
    let path = scenario.ok_or_else(|| {
        Failure::Input("auditing a campaign report needs --scenario with the scenario that produced it".into())
    })?;
    let mut s = Scenario::from_json(&read(path)?).map_err(input(path.display()))?;
    s.seed = report.seed;
    s.trials = report.trials;
    s.mitigation = report.mitigation;
    s.strategy = report.strategy;
    s.noise = report.noise;
    if s.digest() != report.scenario_digest {
        return Err(Failure::Input(format!(
            "{} does not match the report's scenario digest {}",
            path.display(),
            report.scenario_digest
        )));
    }
    let (rerun, events) = run_campaign_logged(&s).map_err(input(path.display()))?;
    if rerun != *report {
        return Err(Failure::Runtime("re-run campaign differs from the report".into()));
    }
    Ok(overlap_audit(&events))
}

fn cmd_audit(path: &Path, scenario: Option<&Path>, out: &OutputArgs) -> CmdResult {
    let text = read(path)?;
    let digest = content_digest(text.as_bytes());
    let (source, seed, report) = match serde_json::from_str::<CampaignReport>(&text) {
        Ok(campaign) => ("campaign_report", Some(campaign.seed), audit_report(&campaign, scenario)?),
        Err(_) => ("event_log", None, overlap_audit(&parse_events(&text, path)?)),
    };
    let body = match out.format {
        Format::Json => json(&AuditOutput {
            tool_version: TOOL_VERSION,
            source,
            seed,
            input_digest: digest,
            report: &report,
        }),
        Format::Csv => csv_rows(&[AuditCsv {
            source,
            seed,
            overlap_count: report.overlap_count,
            logged_overlaps: report.logged_overlaps,
            events_scanned: report.events_scanned,
            input_digest: &digest,
            tool_version: TOOL_VERSION,
        }])?,
    };
    emit(out, body)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            scenario,
            campaign,
            events,
            output,
        } => cmd_run(scenario, campaign, events.as_deref(), output),
        Command::Compare {
            scenario,
            campaign,
            output,
        } => cmd_compare(scenario, campaign, output),
        Command::Analyze {
            callgraph,
            roots,
            seed,
            output,
        } => cmd_analyze(callgraph, roots.as_deref(), *seed, output),
        Command::Audit {
            input,
            scenario,
            output,
        } => cmd_audit(input, scenario.as_deref(), output),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
