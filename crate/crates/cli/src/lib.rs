//! `gridgate` command-line client.
//!
//! Exit codes: 0 success, 1 request error, 2 usage error. Output is
//! line-oriented so it can be consumed from shell scripts and cron.

pub mod batch;
pub mod client;
pub mod local;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Parser, Subcommand};
use gridgate_core::credential::{default_proxy_dir, load_credential};
use gridgate_core::model::{JobRecord, JobsetSpec};
use gridgate_core::monitor::{DatasetSummary, JobStatus};
use gridgate_core::registry::AvailabilityReport;
use serde_json::{json, Value};

use crate::batch::{round_spec, BatchPolicy};
use crate::client::{PortalClient, RequestError};

pub const DEFAULT_PORTAL: &str = "http://127.0.0.1:8080";

pub const EXIT_OK: i32 = 0;
pub const EXIT_REQUEST: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "gridgate",
    version,
    about = "Client for the gridgate job portal"
)]
pub struct Cli {
    /// Portal base URL.
    #[arg(long, global = true, env = "GRIDGATE_PORTAL", default_value = DEFAULT_PORTAL)]
    pub portal: String,
    /// Directory holding proxy.json (default: $GRIDGATE_PROXY_DIR or ~/.gridgate).
    #[arg(long, global = true)]
    pub proxy_dir: Option<PathBuf>,
    /// Print raw JSON responses instead of text lines.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Submit a jobset spec; prints its id.
    Submit { spec: PathBuf },
    /// One line per job of a jobset, ordered by job index.
    Status {
        #[arg(long)]
        jobset: String,
    },
    /// Cancel jobs by id, or every job of a jobset.
    #[command(group(ArgGroup::new("target").required(true).args(["jobs", "jobset"])))]
    Cancel {
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        jobs: Vec<String>,
        #[arg(long)]
        jobset: Option<String>,
    },
    /// Test whether a registered site is reachable.
    Probe { site: String },
    /// Merged histogram of a jobset's finished jobs.
    Summary {
        #[arg(long)]
        jobset: String,
    },
    /// Replay an archived jobset; prints the new id.
    Resubmit { jobset: String },
    /// Submit a template periodically according to a policy file.
    Batch { policy: PathBuf },
    /// Run a portal in this process.
    Serve { config: Option<PathBuf> },
    /// Run the simulated sites described in a fabric file.
    Fabric { config: PathBuf },
    /// Run the 15-site reference testbed and a portal that knows it.
    Testbed {
        #[arg(long, default_value = "gridgate-testbed")]
        dir: PathBuf,
        #[arg(long, default_value = gridgate_core::portal::config::DEFAULT_LISTEN)]
        listen: String,
        #[arg(long, default_value_t = 0.001)]
        seconds_per_event: f64,
        #[arg(long, default_value_t = 0.0)]
        failure_rate: f64,
    },
}

/// Why a command stopped early.
enum Failure {
    Usage(String),
    Request(String),
}

impl From<RequestError> for Failure {
    fn from(e: RequestError) -> Self {
        Failure::Request(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
pub async fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    let result = dispatch(&cli, out).await;
    let _ = out.flush();
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "usage error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Request(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_REQUEST
        }
    }
}

async fn dispatch(cli: &Cli, out: &mut (dyn Write + Send)) -> Outcome {
    match &cli.command {
        Command::Serve { config } => {
            local::run_serve(config.as_deref(), cli.proxy_dir.as_deref(), out)
                .await
                .map_err(Failure::Request)
        }
        Command::Fabric { config } => local::run_fabric(config, out)
            .await
            .map_err(Failure::Request),
        Command::Testbed {
            dir,
            listen,
            seconds_per_event,
            failure_rate,
        } => {
            let opts = local::TestbedOptions {
                dir: dir.clone(),
                listen: listen.clone(),
                seconds_per_event: *seconds_per_event,
                failure_rate: *failure_rate,
            };
            local::run_testbed(opts, out)
                .await
                .map_err(Failure::Request)
        }
        remote => {
            let client = connect(cli)?;
            run_remote(&client, remote, cli.json, out).await
        }
    }
}

fn connect(cli: &Cli) -> Result<PortalClient, Failure> {
    let dir = cli.proxy_dir.clone().unwrap_or_else(default_proxy_dir);
    let cred = load_credential(&dir).map_err(|e| Failure::Request(e.to_string()))?;
    Ok(PortalClient::new(&cli.portal, cred.token))
}

fn read_spec(path: &Path) -> Result<JobsetSpec, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn print_json(out: &mut (dyn Write + Send), value: &impl serde::Serialize) {
    let _ = writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(value).unwrap_or_default()
    );
}

fn job_line(status: &JobStatus) -> String {
    match (&status.state, &status.error) {
        (_, Some(e)) => format!("job {} ERROR {e}", status.job_id),
        (Some(s), None) if status.stale => format!("job {} {s} (stale)", status.job_id),
        (Some(s), None) => format!("job {} {s}", status.job_id),
        (None, None) => format!("job {} UNKNOWN", status.job_id),
    }
}

async fn submit(client: &PortalClient, spec: &JobsetSpec) -> Result<String, Failure> {
    let created: Value = client.post("/jobsets", &json!(spec)).await?;
    created["jobset_id"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Failure::Request("response lacks jobset_id".into()))
}

async fn run_remote(
    client: &PortalClient,
    command: &Command,
    as_json: bool,
    out: &mut (dyn Write + Send),
) -> Outcome {
    match command {
        Command::Submit { spec } => {
            let id = submit(client, &read_spec(spec)?).await?;
            let _ = writeln!(out, "{id}");
        }
        Command::Status { jobset } => {
            let mut jobs: Vec<JobRecord> = client.get(&format!("/jobs?jobset={jobset}")).await?;
            jobs.sort_by_key(|j| j.job_index);
            if as_json {
                print_json(out, &jobs);
            } else {
                for j in &jobs {
                    let _ = writeln!(out, "job {} {}", j.job_id, j.state);
                }
            }
        }
        Command::Cancel { jobs, jobset } => {
            let body = match jobset {
                Some(set) => json!({ "jobset": set }),
                None => json!({ "job_ids": jobs }),
            };
            let statuses: Vec<JobStatus> = client.post("/jobs/cancel", &body).await?;
            if as_json {
                print_json(out, &statuses);
            } else {
                for s in &statuses {
                    let _ = writeln!(out, "{}", job_line(s));
                }
            }
            if let Some(bad) = statuses.iter().find(|s| s.error.is_some()) {
                return Err(Failure::Request(format!("could not cancel {}", bad.job_id)));
            }
        }
        Command::Probe { site } => {
            let report: AvailabilityReport = match client
                .post(&format!("/resources/{site}/probe"), &json!({}))
                .await
            {
                Ok(r) => r,
                // 503 still carries the report.
                Err(RequestError { body: Some(b), .. }) if b.get("site_id").is_some() => {
                    serde_json::from_value(b).map_err(|e| Failure::Request(e.to_string()))?
                }
                Err(e) => return Err(e.into()),
            };
            let word = |ok: bool| if ok { "ok" } else { "down" };
            if as_json {
                print_json(out, &report);
            } else {
                let _ = writeln!(
                    out,
                    "site {} auth {} jobmanager {} fileserver {}",
                    report.site_id,
                    word(report.auth_ok),
                    word(report.jobmanager_ok),
                    word(report.fileserver_ok)
                );
            }
            if !(report.jobmanager_ok || report.fileserver_ok) {
                return Err(Failure::Request(format!("site {site} is unreachable")));
            }
        }
        Command::Summary { jobset } => {
            let summary: DatasetSummary = client.get(&format!("/jobsets/{jobset}/summary")).await?;
            if as_json {
                print_json(out, &summary);
            } else {
                let _ = writeln!(
                    out,
                    "jobset {} done {}/{}",
                    summary.jobset_id, summary.jobs_done, summary.jobs_total
                );
                for (bin, count) in &summary.histogram {
                    let _ = writeln!(out, "bin {bin} {count}");
                }
                for missing in &summary.missing_results {
                    let _ = writeln!(out, "missing {missing}");
                }
            }
        }
        Command::Resubmit { jobset } => {
            let created: Value = client
                .post(&format!("/jobsets/{jobset}/resubmit"), &json!({}))
                .await?;
            let _ = writeln!(out, "{}", created["jobset_id"].as_str().unwrap_or_default());
        }
        Command::Batch { policy } => {
            let policy = BatchPolicy::load(policy).map_err(Failure::Usage)?;
            for round in policy.rounds() {
                if round > 0 {
                    tokio::time::sleep(policy.interval()).await;
                }
                let template = read_spec(&policy.jobset_template)?;
                let id = submit(client, &round_spec(&template, round)).await?;
                let _ = writeln!(out, "{id}");
                let _ = out.flush();
            }
        }
        Command::Serve { .. } | Command::Fabric { .. } | Command::Testbed { .. } => {
            unreachable!("local commands are handled before connecting")
        }
    }
    Ok(())
}
