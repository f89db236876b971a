//! The `cdra` command line.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use cdra_core::cdr::{filter_window, normalize_records};
use cdra_core::geo::{export_geojson, reconstruct_path};
use cdra_core::graph::{build_graph, export_graph};
use cdra_core::sim::{run_scenario, ScenarioScript};
use cdra_core::{CdrRecord, DateOrder, ExportFormat, Subscriber, TestEvent, TimeWindow};

use crate::config::Config;
use crate::ingest::{parse_cdr_file, write_canonical_csv, write_diagnostics, CsvDialect, ParsedCdr};
use crate::service::{self, case_path_geojson, now};
use crate::store::Store;

#[derive(Debug, Parser)]
#[command(name = "cdra", version, about = "Call-data-record contact tracing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a CDR file and print it in canonical, sorted form.
    Ingest {
        file: PathBuf,
        /// Write the canonical CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write row diagnostics here instead of stderr.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        #[command(flatten)]
        dialect: DialectArgs,
    },
    /// Contact graph of one subscriber's CDR.
    Graph {
        file: PathBuf,
        #[arg(long)]
        focal: Subscriber,
        /// START..END, dates or date-times.
        #[arg(long)]
        window: Option<TimeWindow>,
        #[arg(long, value_enum, default_value = "dot")]
        format: Format,
        #[command(flatten)]
        dialect: DialectArgs,
    },
    /// Movement path of a subscriber as GeoJSON.
    Path {
        file: PathBuf,
        /// Whose path; defaults to the file's only A party.
        #[arg(long)]
        focal: Option<Subscriber>,
        #[arg(long)]
        window: Option<TimeWindow>,
        #[command(flatten)]
        dialect: DialectArgs,
    },
    /// Work on investigations in a local store or a running service.
    Case(CaseArgs),
    /// Run an exposure-notification scenario and print its report.
    EnsSim { scenario: PathBuf },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, Args)]
pub struct DialectArgs {
    /// Dates are DD/MM/YYYY rather than MM/DD/YYYY.
    #[arg(long)]
    day_first: bool,
}

impl DialectArgs {
    fn dialect(self) -> CsvDialect {
        CsvDialect {
            dates: if self.day_first {
                DateOrder::DayFirst
            } else {
                DateOrder::MonthFirst
            },
            ..CsvDialect::default()
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Dot,
    Json,
}

impl From<Format> for ExportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Dot => ExportFormat::Dot,
            Format::Json => ExportFormat::GraphJson,
        }
    }
}

#[derive(Debug, Args)]
pub struct CaseArgs {
    /// Local store directory.
    #[arg(long, conflicts_with = "remote", required_unless_present = "remote")]
    store: Option<PathBuf>,
    /// Base URL of a running service.
    #[arg(long)]
    remote: Option<String>,
    /// API token for --remote.
    #[arg(long, env = "CDRA_API_TOKEN")]
    token: Option<String>,
    #[command(subcommand)]
    action: CaseAction,
}

#[derive(Debug, Subcommand)]
pub enum CaseAction {
    /// Open a case for a confirmed patient from their CDR.
    Open {
        #[arg(long)]
        case: String,
        #[arg(long)]
        index: Subscriber,
        #[arg(long)]
        window: TimeWindow,
        file: PathBuf,
        #[command(flatten)]
        dialect: DialectArgs,
    },
    /// Mark the contacts a patient confirms meeting (labels or numbers).
    Confirm {
        #[arg(long)]
        case: String,
        #[arg(long)]
        patient: String,
        contacts: Vec<String>,
    },
    /// Record a test result.
    Test {
        #[arg(long)]
        case: String,
        subscriber: String,
        #[arg(value_enum)]
        result: Outcome,
    },
    /// Add the CDR of a newly positive patient.
    Attach {
        #[arg(long)]
        case: String,
        #[arg(long)]
        patient: String,
        #[arg(long)]
        window: TimeWindow,
        file: PathBuf,
        #[command(flatten)]
        dialect: DialectArgs,
    },
    /// Print the case state.
    Show {
        #[arg(long)]
        case: String,
    },
    /// Export the case's contact web.
    Graph {
        #[arg(long)]
        case: String,
        #[arg(long, value_enum, default_value = "dot")]
        format: Format,
    },
    /// Export a subscriber's path within the case.
    Path {
        #[arg(long)]
        case: String,
        subscriber: String,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Outcome {
    Positive,
    Negative,
}

impl From<Outcome> for cdra_core::TestResult {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Positive => cdra_core::TestResult::Positive,
            Outcome::Negative => cdra_core::TestResult::Negative,
        }
    }
}

type Failure = Box<dyn std::error::Error>;

/// Parses `args` and runs the command, returning the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return e.exit_code();
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "cdra: {e}");
            1
        }
    }
}

fn read_cdr(path: &Path, dialect: DialectArgs, err: &mut dyn Write) -> Result<ParsedCdr, Failure> {
    let parsed = parse_cdr_file(path, &dialect.dialect())?;
    err.write_all(write_diagnostics(&parsed.diagnostics).as_bytes())?;
    Ok(parsed)
}

fn prepare(records: &[CdrRecord], window: Option<&TimeWindow>) -> Vec<CdrRecord> {
    match window {
        Some(w) => normalize_records(&filter_window(records, w)),
        None => normalize_records(records),
    }
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Ingest {
            file,
            out: target,
            diagnostics,
            dialect,
        } => {
            let parsed = parse_cdr_file(&file, &dialect.dialect())?;
            let csv = write_canonical_csv(&normalize_records(&parsed.records), dialect.dialect().dates);
            let diags = write_diagnostics(&parsed.diagnostics);
            match target {
                Some(p) => std::fs::write(p, csv)?,
                None => out.write_all(csv.as_bytes())?,
            }
            match diagnostics {
                Some(p) => std::fs::write(p, diags)?,
                None => err.write_all(diags.as_bytes())?,
            }
        }
        Command::Graph {
            file,
            focal,
            window,
            format,
            dialect,
        } => {
            let parsed = read_cdr(&file, dialect, err)?;
            let graph = build_graph(&focal, &prepare(&parsed.records, window.as_ref()))?;
            out.write_all(export_graph(&graph, format.into()).as_bytes())?;
        }
        Command::Path {
            file,
            focal,
            window,
            dialect,
        } => {
            let parsed = read_cdr(&file, dialect, err)?;
            let parties: BTreeSet<&Subscriber> = parsed.records.iter().map(|r| &r.a_party).collect();
            let focal = match focal {
                Some(f) => f,
                None if parties.len() == 1 => parties.into_iter().next().cloned().expect("one party"),
                None => return Err("the file has several A parties; pick one with --focal".into()),
            };
            let mine: Vec<CdrRecord> = prepare(&parsed.records, window.as_ref())
                .into_iter()
                .filter(|r| r.a_party == focal)
                .collect();
            out.write_all(export_geojson(&reconstruct_path(&mine).waypoints).as_bytes())?;
        }
        Command::Case(args) => case_command(args, out, err)?,
        Command::EnsSim { scenario } => {
            let text = std::fs::read_to_string(&scenario)
                .map_err(|e| format!("cannot read {}: {e}", scenario.display()))?;
            let script = ScenarioScript::parse(&text)?;
            out.write_all(run_scenario(&script)?.to_json().as_bytes())?;
        }
        Command::Serve { port, store, config } => {
            let mut cfg = Config::load(config.as_deref())?;
            if let Some(p) = port {
                cfg.port = p;
            }
            if let Some(s) = store {
                cfg.store = s;
            }
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(service::serve(cfg))?;
        }
    }
    Ok(())
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json");
    s.push('\n');
    s
}

fn case_command(args: CaseArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    if let Some(base) = &args.remote {
        let remote = Remote::new(base, args.token.clone());
        let text = remote.run(args.action, err)?;
        out.write_all(text.as_bytes())?;
        return Ok(());
    }
    let store = Store::open(args.store.as_ref().expect("clap requires --store or --remote"))?;
    let resolve = |case: &cdra_core::InvestigationCase, name: &str| {
        case.web
            .resolve(name)
            .cloned()
            .or_else(|| Subscriber::parse(name).ok())
            .ok_or_else(|| cdra_core::CaseError::UnknownSubscriber(name.to_string()))
    };
    let text = match args.action {
        CaseAction::Open {
            case,
            index,
            window,
            file,
            dialect,
        } => {
            let parsed = read_cdr(&file, dialect, err)?;
            pretty(&*store.open_case(&case, &index, &parsed.records, window, now())?)
        }
        CaseAction::Confirm {
            case,
            patient,
            contacts,
        } => pretty(&*store.update_case(&case, |c| {
            let patient = resolve(c, &patient)?;
            let set = contacts
                .iter()
                .map(|n| resolve(c, n))
                .collect::<Result<BTreeSet<_>, _>>()?;
            c.confirm_contacts(&patient, &set, now())
        })?),
        CaseAction::Test {
            case,
            subscriber,
            result,
        } => pretty(&*store.update_case(&case, |c| {
            c.record_test_result(&TestEvent {
                subscriber: resolve(c, &subscriber)?,
                result: result.into(),
                reported_at: now(),
            })
        })?),
        CaseAction::Attach {
            case,
            patient,
            window,
            file,
            dialect,
        } => {
            let parsed = read_cdr(&file, dialect, err)?;
            pretty(&*store.update_case(&case, |c| {
                let patient = resolve(c, &patient)?;
                c.attach_cdra(&patient, &parsed.records, window, now())
            })?)
        }
        CaseAction::Show { case } => pretty(&*store.case(&case).ok_or(format!("no case {case:?}"))?),
        CaseAction::Graph { case, format } => {
            let c = store.case(&case).ok_or(format!("no case {case:?}"))?;
            export_graph(&c.web, format.into())
        }
        CaseAction::Path { case, subscriber } => {
            let c = store.case(&case).ok_or(format!("no case {case:?}"))?;
            case_path_geojson(&c, &resolve(&c, &subscriber)?)
        }
    };
    out.write_all(text.as_bytes())?;
    Ok(())
}

/// The same case actions against a running service.
struct Remote {
    base: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl Remote {
    fn new(base: &str, token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Remote {
            base: base.trim_end_matches('/').to_string(),
            token,
            agent,
        }
    }

    fn finish(&self, response: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<String, Failure> {
        let mut response = response?;
        let status = response.status();
        let body = response.body_mut().read_to_string()?;
        if !status.is_success() {
            return Err(format!("{status}: {}", body.trim()).into());
        }
        Ok(body)
    }

    fn get(&self, path: &str) -> Result<String, Failure> {
        let mut req = self.agent.get(format!("{}{path}", self.base));
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        self.finish(req.call())
    }

    fn post_json(&self, path: &str, body: &serde_json::Value) -> Result<String, Failure> {
        let mut req = self.agent.post(format!("{}{path}", self.base));
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        self.finish(req.send_json(body))
    }

    /// Pretty-prints the `case` member of a response, or the whole body.
    fn case_of(body: &str) -> Result<String, Failure> {
        let v: serde_json::Value = serde_json::from_str(body)?;
        Ok(pretty(v.get("case").unwrap_or(&v)))
    }

    fn run(&self, action: CaseAction, err: &mut dyn Write) -> Result<String, Failure> {
        use serde_json::json;
        let csv_of = |file: &Path, dialect: DialectArgs, err: &mut dyn Write| -> Result<String, Failure> {
            // Validate locally so diagnostics show up here as well.
            read_cdr(file, dialect, err)?;
            Ok(std::fs::read_to_string(file)?)
        };
        match action {
            CaseAction::Open {
                case,
                index,
                window,
                file,
                dialect,
            } => {
                let csv = csv_of(&file, dialect, err)?;
                let body = json!({ "case_id": case, "index": index, "window": window,
                                   "csv": csv, "day_first": dialect.day_first });
                Self::case_of(&self.post_json("/cases", &body)?)
            }
            CaseAction::Confirm {
                case,
                patient,
                contacts,
            } => Self::case_of(&self.post_json(
                &format!("/cases/{case}/confirm"),
                &json!({ "patient": patient, "contacts": contacts }),
            )?),
            CaseAction::Test {
                case,
                subscriber,
                result,
            } => {
                let result: cdra_core::TestResult = result.into();
                Self::case_of(&self.post_json(
                    &format!("/cases/{case}/tests"),
                    &json!({ "subscriber": subscriber, "result": result }),
                )?)
            }
            CaseAction::Attach {
                case,
                patient,
                window,
                file,
                dialect,
            } => {
                let csv = csv_of(&file, dialect, err)?;
                let body = json!({ "patient": patient, "window": window, "csv": csv,
                                   "day_first": dialect.day_first });
                Self::case_of(&self.post_json(&format!("/cases/{case}/cdra"), &body)?)
            }
            CaseAction::Show { case } => Self::case_of(&self.get(&format!("/cases/{case}"))?),
            CaseAction::Graph { case, format } => {
                let f = match format {
                    Format::Dot => "dot",
                    Format::Json => "json",
                };
                self.get(&format!("/cases/{case}/graph?format={f}"))
            }
            CaseAction::Path { case, subscriber } => self.get(&format!("/cases/{case}/paths/{subscriber}")),
        }
    }
}
