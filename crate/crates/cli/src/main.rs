use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use epcmig_core::container::blob::MetadataBlob;
use epcmig_core::container::{image_bytes, restore};
use epcmig_core::fabric::HostId;
use epcmig_core::profile::{list_profiles, load_profile, load_profile_file, CalibrationProfile, PROFILE_PATH_ENV};
use epcmig_core::report::{check_all, parse_expected, run_batch, BatchOutcome};
use epcmig_core::scenario::{parse_scenarios, Scenario, Virtualization};
use epcmig_core::vnf::AppState;

const DEFAULT_PROFILE: &str = "openroadm";

#[derive(Parser)]
#[command(name = "epcmig", version, about = "Simulate live migration of EPC components")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scenario in a file and emit one CSV row per scenario.
    Run {
        scenarios: PathBuf,
        /// Profile name or path to a `.profile` file.
        #[arg(long)]
        profile: Option<String>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Append wire and event traces after the CSV.
        #[arg(long)]
        trace: bool,
    },
    /// Run scenarios and compare them against an expected-values file.
    Check {
        scenarios: PathBuf,
        #[arg(long)]
        expected: PathBuf,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Describe a checkpoint image.
    InspectBlob { file: PathBuf },
    /// Write the checkpoint image of the first container scenario in a file.
    DumpBlob {
        scenarios: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        profile: Option<String>,
    },
    /// List bundled profiles and those found on the search path.
    ListProfiles,
}

fn resolve_profile(name: &str) -> Result<CalibrationProfile> {
    let p = Path::new(name);
    if name.ends_with(".profile") && p.is_file() {
        return load_profile_file(p).with_context(|| format!("loading {name}"));
    }
    load_profile(name).with_context(|| format!("loading profile `{name}`"))
}

fn read_scenarios(path: &Path) -> Result<Vec<Scenario>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_scenarios(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Runs each scenario under the flag's profile, else its own, else the default.
fn run_all(scenarios: &[Scenario], flag: Option<&str>) -> Result<BatchOutcome> {
    let mut groups: BTreeMap<String, Vec<Scenario>> = BTreeMap::new();
    for sc in scenarios {
        let name = flag.or(sc.profile.as_deref()).unwrap_or(DEFAULT_PROFILE);
        groups.entry(name.to_string()).or_default().push(sc.clone());
    }
    let mut all = BatchOutcome {
        reports: Vec::new(),
        failures: Vec::new(),
    };
    for (name, group) in groups {
        let profile = resolve_profile(&name)?;
        let out = run_batch(&group, &profile);
        all.reports.extend(out.reports);
        all.failures.extend(out.failures);
    }
    all.reports.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    all.failures.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(all)
}

fn emit_csv(out: &BatchOutcome, csv: Option<&Path>) -> Result<()> {
    match csv {
        Some(p) => fs::write(p, out.csv()).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{}", out.csv());
            Ok(())
        }
    }
}

fn report_failures(out: &BatchOutcome) {
    for (id, e) in &out.failures {
        eprintln!("error: {id}: {e}");
    }
}

fn cmd_run(scenarios: &Path, profile: Option<&str>, csv: Option<&Path>, trace: bool) -> Result<ExitCode> {
    let out = run_all(&read_scenarios(scenarios)?, profile)?;
    emit_csv(&out, csv)?;
    if trace {
        let mut stdout = std::io::stdout().lock();
        for r in &out.reports {
            writeln!(stdout, "# wire {}", r.scenario_id)?;
            stdout.write_all(r.wire_trace().as_bytes())?;
            writeln!(stdout, "# events {}", r.scenario_id)?;
            stdout.write_all(r.event_trace().as_bytes())?;
        }
    }
    report_failures(&out);
    Ok(if out.is_success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_check(scenarios: &Path, expected: &Path, profile: Option<&str>, csv: Option<&Path>) -> Result<ExitCode> {
    let text = fs::read_to_string(expected).with_context(|| format!("reading {}", expected.display()))?;
    let records = parse_expected(&text).with_context(|| format!("parsing {}", expected.display()))?;
    let out = run_all(&read_scenarios(scenarios)?, profile)?;
    if let Some(p) = csv {
        emit_csv(&out, Some(p))?;
    }
    report_failures(&out);
    let results = check_all(&out.reports, &records);
    let failed = results.iter().filter(|r| !r.passed()).count();
    for r in &results {
        println!("{r}");
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_inspect(file: &Path) -> Result<()> {
    let bytes = fs::read(file).with_context(|| format!("reading {}", file.display()))?;
    let blob = MetadataBlob::decode(&bytes).with_context(|| format!("decoding {}", file.display()))?;
    println!(
        "{} sections, {} bytes encoded, {} bytes as moved",
        blob.sections().len(),
        bytes.len(),
        image_bytes(&blob)
    );
    for s in blob.sections() {
        let code = s.tag.code();
        println!(
            "  {}  {:<8} {:>8} B  crc {:#010x}",
            String::from_utf8_lossy(&code),
            s.tag.name(),
            s.payload.len(),
            s.crc()
        );
    }
    match restore(&blob, HostId(0)) {
        Ok(r) => {
            let v = &r.vnf;
            println!(
                "process {} ({} {}), addr {}, {} pages resident",
                v.pid, v.kind, v.flavor, v.addr, v.memory.total_pages
            );
            println!(
                "sockets: {} tcp, {} sctp, {} udp",
                v.sockets.tcp.len(),
                v.sockets.sctp.len(),
                v.sockets.udp_ports.len()
            );
            match &v.app {
                AppState::Hss { subscribers } => println!("subscribers: {}", subscribers.len()),
                AppState::Mme { contexts } => println!("ue contexts: {}", contexts.len()),
                AppState::Spgw(s) => println!(
                    "sessions: {}, tunnels: {}, gtp0: {}",
                    s.sessions.len(),
                    s.tunnels.len(),
                    if r.gtp_restored { "restored" } else { "absent" }
                ),
            }
        }
        Err(e) => println!("not restorable: {e}"),
    }
    Ok(())
}

fn cmd_dump(scenarios: &Path, out: &Path, profile: Option<&str>) -> Result<()> {
    let all = read_scenarios(scenarios)?;
    let Some(sc) = all.iter().find(|s| s.virtualization == Virtualization::Container) else {
        bail!("{} has no container scenario", scenarios.display());
    };
    let result = run_all(std::slice::from_ref(sc), profile)?;
    if let Some((id, e)) = result.failures.first() {
        bail!("{id}: {e}");
    }
    let blob = result
        .reports
        .first()
        .and_then(|r| r.checkpoint.as_ref())
        .context("run produced no checkpoint")?;
    fs::write(out, blob.encode()).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("{}: wrote {}", sc.id, out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenarios,
            profile,
            csv,
            trace,
        } => cmd_run(&scenarios, profile.as_deref(), csv.as_deref(), trace),
        Command::Check {
            scenarios,
            expected,
            profile,
            csv,
        } => cmd_check(&scenarios, &expected, profile.as_deref(), csv.as_deref()),
        Command::InspectBlob { file } => cmd_inspect(&file).map(|()| ExitCode::SUCCESS),
        Command::DumpBlob {
            scenarios,
            out,
            profile,
        } => cmd_dump(&scenarios, &out, profile.as_deref()).map(|()| ExitCode::SUCCESS),
        Command::ListProfiles => {
            for name in list_profiles() {
                println!("{name}");
            }
            if std::env::var_os(PROFILE_PATH_ENV).is_none() {
                eprintln!("({PROFILE_PATH_ENV} not set; bundled profiles only)");
            }
            Ok(ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
