//! `wsan`: run, sweep and validate key-management scenarios.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use tempfile::NamedTempFile;

use wsan_core::config::{ConfigError, ScenarioConfig, TopologyMode};
use wsan_core::cost::{expected_storage, LeapBaseline};
use wsan_core::netsim::{run, RunOutput, SimError};

const EXIT_OK: u8 = 0;
const EXIT_FAILED: u8 = 1;
const EXIT_INVALID: u8 = 2;

#[derive(Parser)]
#[command(name = "wsan", version, about = "Two-layer sensor/actor key management simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file.
    #[arg(long)]
    config: PathBuf,
    /// Replaces the scenario seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Replaces the topology mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifacts.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run the scenario once per parameter value and write a curve table.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, value_enum)]
        param: Param,
        /// `2,4,8`, `2..20` or `2..20:2` (inclusive); empty for no runs.
        #[arg(long, default_value = "", allow_hyphen_values = true)]
        values: String,
    },
    /// Parse and check a scenario without running it.
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    ExactRegular,
    Geometric,
}

impl From<Mode> for TopologyMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::ExactRegular => TopologyMode::ExactRegular,
            Mode::Geometric => TopologyMode::Geometric,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Param {
    /// Target connection degree.
    #[value(name = "d")]
    Degree,
    /// Storage degree; drives the same knob as `d`.
    #[value(name = "D")]
    StorageDegree,
    /// Number of sensors.
    #[value(name = "N")]
    Sensors,
}

impl Param {
    fn label(self) -> &'static str {
        match self {
            Param::Degree => "d",
            Param::StorageDegree => "D",
            Param::Sensors => "N",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Validate { common } => validate(common),
        Command::Run { common, out_dir } => run_one(common, out_dir),
        Command::Sweep { common, out_dir, param, values } => sweep(common, out_dir, *param, values),
    };
    match code {
        Ok(c) => ExitCode::from(c),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}

fn print_config_errors(path: &Path, errors: &[ConfigError]) {
    for e in errors {
        eprintln!("{}: {e}", path.display());
    }
}

/// Reads, applies overrides and validates. `Err` holds the exit code.
fn load(common: &Common) -> Result<ScenarioConfig, u8> {
    let text = match fs::read_to_string(&common.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", common.config.display());
            return Err(EXIT_INVALID);
        }
    };
    let mut cfg = ScenarioConfig::parse(&text).map_err(|errs| {
        print_config_errors(&common.config, &errs);
        EXIT_INVALID
    })?;
    if let Some(seed) = common.seed_override {
        cfg.seed = seed;
    }
    if let Some(mode) = common.mode {
        cfg.topology.mode = mode.into();
    }
    let errs = cfg.validate();
    if !errs.is_empty() {
        print_config_errors(&common.config, &errs);
        return Err(EXIT_INVALID);
    }
    Ok(cfg)
}

fn validate(common: &Common) -> Result<u8> {
    match load(common) {
        Ok(cfg) => {
            println!("ok {} (config-hash {})", common.config.display(), cfg.hash());
            Ok(EXIT_OK)
        }
        Err(code) => Ok(code),
    }
}

/// Writes `body` to `path` through a temporary file in the same directory.
fn write_atomic(path: &Path, body: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(body.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_artifacts(out: &RunOutput, dir: &Path) -> Result<()> {
    for (name, body) in &out.artifacts {
        write_atomic(&dir.join(name), body)?;
    }
    Ok(())
}

fn exit_for(out: &RunOutput) -> u8 {
    if out.report.pass {
        EXIT_OK
    } else {
        EXIT_FAILED
    }
}

fn summarize(out: &RunOutput) -> String {
    let r = &out.report;
    let mut s = format!(
        "{}: {} (t={}, computations={}, messages={}, forged={})",
        r.name,
        if r.pass { "pass" } else { "FAIL" },
        r.final_time,
        r.totals.computations,
        r.totals.messages_sent,
        r.security.forged_acceptances,
    );
    if let Some(t) = &r.setup_totals {
        s.push_str(&format!("\n  setup: computations={}, messages={}", t.computations, t.messages_sent));
    }
    if let Some(h) = &r.halted {
        s.push_str(&format!("\n  halted: {h}"));
    }
    for (name, inv) in &r.invariants {
        if let Some(v) = &inv.first_violation {
            s.push_str(&format!("\n  {name}: {v}"));
        }
    }
    if r.reconciliation.pass == Some(false) {
        if let Some(rec) = &out.reconciliation {
            for m in &rec.mismatches {
                let node = m.node.map(|n| n.to_string()).unwrap_or_else(|| "network".into());
                s.push_str(&format!("\n  reconciliation: {node} {} expected {} got {}", m.counter, m.expected, m.actual));
            }
        }
    }
    s
}

fn sim_error_code(e: &SimError) -> u8 {
    match e {
        SimError::Config(_) | SimError::Topology(_) => EXIT_INVALID,
        SimError::Crypto(_) => EXIT_FAILED,
    }
}

fn run_one(common: &Common, out_dir: &Path) -> Result<u8> {
    let cfg = match load(common) {
        Ok(c) => c,
        Err(code) => return Ok(code),
    };
    let out = match run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{}: {e}", common.config.display());
            return Ok(sim_error_code(&e));
        }
    };
    write_artifacts(&out, out_dir)?;
    println!("{}", summarize(&out));
    Ok(exit_for(&out))
}

/// Parses `2,4,8`, `2..20` or `2..20:2`; ranges are inclusive.
fn parse_values(spec: &str) -> Result<Vec<u64>> {
    let spec = spec.trim();
    if spec.is_empty() {
        return Ok(Vec::new());
    }
    if let Some((lo, rest)) = spec.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (hi, step.trim().parse::<u64>().context("range step")?),
            None => (rest, 1),
        };
        let lo: u64 = lo.trim().parse().context("range start")?;
        let hi: u64 = hi.trim().parse().context("range end")?;
        if step == 0 {
            bail!("range step must be positive");
        }
        return Ok((lo..=hi).step_by(step as usize).collect());
    }
    spec.split(',').map(|v| v.trim().parse::<u64>().with_context(|| format!("value `{v}`"))).collect()
}

struct SweepRow {
    value: u64,
    n: u64,
    d: u64,
    code: u8,
    computations: Option<u64>,
    messages: Option<u64>,
    mean_storage: Option<f64>,
}

fn sweep(common: &Common, out_dir: &Path, param: Param, values: &str) -> Result<u8> {
    let values = match parse_values(values) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("--values: {e:#}");
            return Ok(EXIT_INVALID);
        }
    };
    if values.is_empty() {
        println!("sweep: no values, nothing to run");
        return Ok(EXIT_OK);
    }
    let base = match load(common) {
        Ok(c) => c,
        Err(code) => return Ok(code),
    };
    let label = param.label();
    let mut rows: Vec<SweepRow> = values
        .par_iter()
        .map(|&v| {
            let mut cfg = base.clone();
            match param {
                Param::Degree | Param::StorageDegree => cfg.topology.degree = v as usize,
                Param::Sensors => cfg.topology.n_sensors = v as usize,
            }
            cfg.name = format!("{}-{label}{v}", base.name);
            let mut row = SweepRow {
                value: v,
                n: cfg.topology.n_sensors as u64,
                d: cfg.topology.degree as u64,
                code: EXIT_OK,
                computations: None,
                messages: None,
                mean_storage: None,
            };
            let errs = cfg.validate();
            if !errs.is_empty() {
                for e in &errs {
                    eprintln!("{label}={v}: {e}");
                }
                row.code = EXIT_INVALID;
                return Ok(row);
            }
            let out = match run(&cfg) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("{label}={v}: {e}");
                    row.code = sim_error_code(&e);
                    return Ok(row);
                }
            };
            write_artifacts(&out, &out_dir.join(format!("{label}={v}")))?;
            println!("{}", summarize(&out));
            let setup = out.report.setup_totals.unwrap_or(out.report.totals);
            row.computations = Some(setup.computations);
            row.messages = Some(setup.messages_sent);
            let st = &out.report.storage;
            if !st.is_empty() {
                row.mean_storage = Some(st.iter().map(|s| s.stored_keys as f64).sum::<f64>() / st.len() as f64);
            }
            row.code = exit_for(&out);
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| r.value);
    write_atomic(&out_dir.join(format!("sweep_{label}.csv")), &sweep_csv(&base, label, &rows))?;
    Ok(rows.iter().map(|r| r.code).max().unwrap_or(EXIT_OK))
}

fn sweep_csv(base: &ScenarioConfig, label: &str, rows: &[SweepRow]) -> String {
    let leap = LeapBaseline::default();
    let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = format!("# config-hash: {}\n# sweep: {label}\n", base.hash());
    s.push_str(
        "d,N,ours_computation,leap_computation,ours_storage,leap_storage,\
         leap_over_ours_computation,ours_over_leap_storage,\
         simulated_computation,simulated_messages,simulated_mean_storage,exit\n",
    );
    for r in rows {
        let ours = wsan_core::cost::expected_computation(r.n, r.d);
        let theirs = leap.computation(r.n, r.d);
        let (os, ls) = (expected_storage(r.d), leap.storage(r.d));
        let ratio = if ours == 0 { String::new() } else { format!("{:.6}", theirs as f64 / ours as f64) };
        s.push_str(&format!(
            "{},{},{ours},{theirs},{os},{ls},{ratio},{:.6},{},{},{},{}\n",
            r.d,
            r.n,
            os as f64 / ls as f64,
            opt(r.computations),
            opt(r.messages),
            r.mean_storage.map(|m| format!("{m:.3}")).unwrap_or_default(),
            r.code,
        ));
    }
    s
}
