use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use wavesched::analysis::{compare_to_paper, deviation_csv, MeasuredTargets, SimReport, TABLE_COLUMNS};
use wavesched::calibrate::calibrate;
use wavesched::config::{load_platform, load_scenario, write_atomic, Scenario};
use wavesched::engine::{run_sweep, simulate, SweepKey};
use wavesched::grid::GridDims;
use wavesched::policy::PolicyKind;
use wavesched::workload::WorkloadKind;

pub const CONFIG_ENV: &str = "WAVESCHED_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "wavesched", version, about = "Simulate WPP HEVC decoding on a big.LITTLE machine")]
struct Cli {
    /// Scenario file (`key = value` lines). Defaults to $WAVESCHED_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one configuration.
    Run {
        #[arg(long)]
        policy: Option<PolicyKind>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, value_parser = parse_switch)]
        simd: Option<bool>,
        #[command(flatten)]
        common: Common,
        /// Output format [default: json]
        #[arg(long)]
        format: Option<Format>,
    },
    /// Simulate every combination of policies, thread counts and SIMD settings.
    Sweep {
        /// Thread counts: `N`, `A..B` (inclusive) or a comma list.
        #[arg(long, default_value = "1..8")]
        threads: String,
        #[arg(long, value_delimiter = ',', default_value = "big-os,static,affinity")]
        policies: Vec<PolicyKind>,
        #[arg(long, value_delimiter = ',', value_parser = parse_switch, default_value = "off")]
        simd: Vec<bool>,
        #[command(flatten)]
        common: Common,
        /// Output format [default: csv]
        #[arg(long)]
        format: Option<Format>,
    },
    /// Fit speeds, mean CTU work and power to the reference measurements.
    /// Writes the calibrated scenario file.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// `json` prints the full fit instead of the scenario file.
        #[arg(long)]
        format: Option<Format>,
    },
    /// Reproduce the FPS/EPF tables and their deviation from the measurements.
    PaperRepro {
        #[command(flatten)]
        common: Common,
        /// Output format [default: csv]
        #[arg(long)]
        format: Option<Format>,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    frames: Option<usize>,
    /// Grid as RxC, e.g. 17x30.
    #[arg(long)]
    grid: Option<GridDims>,
    /// uniform | lognormal | trace:PATH
    #[arg(long)]
    workload: Option<WorkloadKind>,
    #[arg(long)]
    mean_wu: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Column lead of the upper-row reconstruction dependency.
    #[arg(long)]
    wpp_lead: Option<usize>,
    /// Delay charged to a migrating thread, in seconds.
    #[arg(long)]
    migration_overhead: Option<f64>,
    /// Platform file; its keys override the scenario's platform.
    #[arg(long)]
    platform: Option<PathBuf>,
    /// Output file (written atomically). Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn parse_switch(s: &str) -> Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected on|off, got {other:?}")),
    }
}

fn parse_threads(s: &str) -> anyhow::Result<Vec<usize>> {
    let s = s.trim();
    let list: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().with_context(|| format!("bad range start in {s:?}"))?;
        let b: usize = b.trim().parse().with_context(|| format!("bad range end in {s:?}"))?;
        if a > b {
            bail!("empty thread range {s:?}");
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse::<usize>().with_context(|| format!("bad thread count {t:?}")))
            .collect::<Result<_, _>>()?
    };
    if list.is_empty() || list.contains(&0) {
        bail!("thread counts must be positive: {s:?}");
    }
    Ok(list)
}

/// Error class, mapped to the process exit code.
#[derive(Debug)]
enum Failure {
    Config(anyhow::Error),
    Simulation(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Simulation(_) => 2,
        }
    }
}

trait ConfigContext<T> {
    fn config(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ConfigContext<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
}

fn sim<T, E: Into<anyhow::Error>>(r: Result<T, E>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Simulation(e.into()))
}

pub fn main_with(args: impl IntoIterator<Item = OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(e) | Failure::Simulation(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}

fn base_scenario(config: Option<PathBuf>, common: &Common) -> Result<Scenario, Failure> {
    let path = config.or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
    let mut s = match &path {
        Some(p) => load_scenario(p, &Scenario::default()).config()?,
        None => Scenario::default(),
    };
    if let Some(p) = &common.platform {
        s.platform = load_platform(p).config()?;
    }
    let w = &mut s.workload;
    if let Some(v) = common.frames {
        s.frames = v;
    }
    if let Some(v) = common.grid {
        s.dims = v;
    }
    if let Some(v) = &common.workload {
        w.kind = v.clone();
    }
    if let Some(v) = common.mean_wu {
        w.mean_wu = v;
    }
    if let Some(v) = common.sigma {
        w.sigma = v;
    }
    if let Some(v) = common.seed {
        w.seed = v;
    }
    if let Some(v) = common.wpp_lead {
        s.wpp_lead = v;
    }
    if let Some(v) = common.migration_overhead {
        s.policy.migration_overhead_s = v;
    }
    if s.policy.migration_overhead_s < 0.0 || !s.policy.migration_overhead_s.is_finite() {
        return Err(Failure::Config(anyhow!("migration overhead must be non-negative")));
    }
    Ok(s)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display())).config(),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Failure::Simulation(e.into()))?;
    s.push('\n');
    Ok(s)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { policy, threads, simd, common, format } => {
            let mut s = base_scenario(cli.config, &common)?;
            if let Some(p) = policy {
                s.policy.kind = p;
            }
            if let Some(n) = threads {
                s.policy.threads = n;
            }
            if let Some(v) = simd {
                s.simd = v;
            }
            let cfg = s.build().config()?;
            let (_, report) = sim(simulate(&cfg))?;
            let text = match format.unwrap_or(Format::Json) {
                Format::Json => json(&report)?,
                Format::Csv => format!("{}\n{}\n", SimReport::CSV_HEADER, report.csv_row()),
            };
            emit(common.out.as_deref(), &text)
        }
        Command::Sweep { threads, policies, simd, common, format } => {
            let s = base_scenario(cli.config, &common)?;
            let threads = parse_threads(&threads).config()?;
            if policies.is_empty() || simd.is_empty() {
                return Err(Failure::Config(anyhow!("policy and SIMD lists must be non-empty")));
            }
            let cfg = s.build().config()?;
            let cells = sim(run_sweep(&cfg, &threads, &policies, &simd))?;
            let failed: Vec<String> = cells
                .iter()
                .filter_map(|c| c.result.as_ref().err().map(|e| format!("{:?}: {e}", c.key)))
                .collect();
            let text = match format.unwrap_or(Format::Csv) {
                Format::Csv => {
                    let mut out = format!("{},status\n", SimReport::CSV_HEADER);
                    for c in &cells {
                        match &c.result {
                            Ok(r) => {
                                let _ = writeln!(out, "{},ok", r.csv_row());
                            }
                            Err(e) => {
                                let k = c.key;
                                let blanks = ",".repeat(SimReport::CSV_HEADER.matches(',').count() - 2);
                                let msg = e.to_string().replace([',', '\n'], ";");
                                let simd = if k.simd { "on" } else { "off" };
                                let _ = writeln!(out, "{},{},{simd}{blanks},failed: {msg}", k.policy, k.threads);
                            }
                        }
                    }
                    out
                }
                Format::Json => {
                    let rows: Vec<serde_json::Value> = cells
                        .iter()
                        .map(|c| match &c.result {
                            Ok(r) => serde_json::json!({ "key": c.key, "report": r }),
                            Err(e) => serde_json::json!({ "key": c.key, "error": e.to_string() }),
                        })
                        .collect();
                    json(&rows)?
                }
            };
            emit(common.out.as_deref(), &text)?;
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Failure::Simulation(anyhow!("{} sweep cell(s) failed: {}", failed.len(), failed.join("; "))))
            }
        }
        Command::Calibrate { common, format } => {
            let s = base_scenario(cli.config, &common)?;
            let cal = calibrate(&s, &MeasuredTargets::embedded()).map_err(|e| match e {
                wavesched::calibrate::CalibrateError::Config(_) => Failure::Config(e.into()),
                other => Failure::Simulation(other.into()),
            })?;
            for row in &cal.fit {
                eprintln!("{:32} target {:>9.4} fitted {:>9.4} ({:+.2}%)", row.name, row.target, row.fitted, 100.0 * row.rel_error());
            }
            let text = match format {
                Some(Format::Json) => json(&cal)?,
                Some(Format::Csv) => {
                    let mut out = String::from("name,target,fitted,rel_error\n");
                    for r in &cal.fit {
                        let _ = writeln!(out, "{},{},{},{}", r.name, r.target, r.fitted, r.rel_error());
                    }
                    out
                }
                None => cal.scenario.to_text().config()?,
            };
            emit(common.out.as_deref(), &text)
        }
        Command::PaperRepro { common, format } => {
            let s = base_scenario(cli.config, &common)?;
            let cfg = s.build().config()?;
            let mut reports: BTreeMap<SweepKey, SimReport> = BTreeMap::new();
            for col in &TABLE_COLUMNS {
                let threads: Vec<usize> = (1..=8).collect();
                for cell in sim(run_sweep(&cfg, &threads, &[col.policy], &[col.simd]))? {
                    reports.insert(cell.key, sim(cell.result)?);
                }
            }
            let little = sim(run_sweep(&cfg, &[4], &[PolicyKind::LittleOnly], &[false]))?;
            for cell in little {
                reports.insert(cell.key, sim(cell.result)?);
            }
            let rows = compare_to_paper(&reports, &MeasuredTargets::embedded()).map_err(|e| Failure::Simulation(e.into()))?;
            let text = match format.unwrap_or(Format::Csv) {
                Format::Csv => deviation_csv(&rows),
                Format::Json => {
                    let reports: Vec<&SimReport> = reports.values().collect();
                    json(&serde_json::json!({ "scenario": s, "reports": reports, "deviations": rows }))?
                }
            };
            emit(common.out.as_deref(), &text)
        }
    }
}
