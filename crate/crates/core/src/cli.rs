//! Command-line front end.
//!
//! Exit codes: 0 success or expected outcome, 1 assertion or diagnostic
//! failure, 2 usage or configuration error. Failures print one line to
//! stderr: `error[<kind>]: <message>`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::{assemble, to_asm, validate_cfi, CfiMode, Severity};
use crate::config::{CacheConfig, Defense, FenceKind, PipelineConfig};
use crate::harness::bench::{benchmark, perf_table, PerfTable, BENCHMARKS};
use crate::harness::scenarios::{run_attack_with, AttackOptions, Placement, Scenario};
use crate::harness::tables::{fences_dat, normalized_ipc_dat, security_matrix, MatrixRow, SecurityMatrix, MATRIX_DEFENSES};
use crate::image::{load_image, Pid};
use crate::instrument::{generate_corpus, instrument_with, scan_smother_gadgets, transform_retpoline, CorpusSpec, ScanConfig};
use crate::isa::Program;
use crate::pipeline::{SimOptions, Simulator};

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "SPECCFI_CONFIG";

/// Data memory given to programs started by `run`.
pub const RUN_DATA_SIZE: usize = 0x10000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    /// A check the user asked for did not hold.
    #[error("{0}")]
    Assertion(String),
    #[error("{0}")]
    Failed(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Assertion(_) => "assertion",
            CliError::Failed(_) => "failed",
            CliError::Io { .. } => "io",
        }
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string().replace('\n', " "))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// File configuration. Every key is optional; unknown keys are rejected.
/// Command-line flags override file values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub defense: Defense,
    pub fence_kind: FenceKind,
    pub pipeline: PipelineConfig,
    /// Overrides `pipeline.cache` when present.
    pub cache: Option<CacheConfig>,
    pub scenario: Option<String>,
    pub trials: usize,
    pub seed: u64,
    pub trace: bool,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            defense: Defense::Baseline,
            fence_kind: FenceKind::Strict,
            pipeline: PipelineConfig::default(),
            cache: None,
            scenario: None,
            trials: 10,
            seed: 0,
            trace: false,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string().replace('\n', " ")))?;
        cfg.pipeline_config().validate().map_err(CliError::Config)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    /// Pipeline settings with the cache override and defense applied.
    pub fn pipeline_config(&self) -> PipelineConfig {
        let mut p = self.pipeline.clone();
        if let Some(c) = self.cache {
            p.cache = c;
        }
        p.with_defense(self.defense, self.fence_kind)
    }
}

#[derive(Debug, Parser)]
#[command(name = "speccfi", version, about = "Speculative core simulator and CFI toolchain")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InstrumentKind {
    None,
    Speccfi,
    Retpoline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Coarse,
    Fine,
}

impl From<Mode> for CfiMode {
    fn from(m: Mode) -> CfiMode {
        match m {
            Mode::Coarse => CfiMode::Coarse,
            Mode::Fine => CfiMode::Fine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Expect {
    Leaked,
    Blocked,
}

#[derive(Debug, clap::Args)]
pub struct Overrides {
    #[arg(long, value_parser = parse_defense)]
    pub defense: Option<Defense>,
    #[arg(long, value_parser = parse_fence)]
    pub fence: Option<FenceKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file (stdout when absent).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

fn parse_defense(s: &str) -> Result<Defense, String> {
    s.parse()
}

fn parse_fence(s: &str) -> Result<FenceKind, String> {
    s.parse()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assemble, optionally instrument, and print the program.
    Asm {
        input: PathBuf,
        /// Label discipline the source is written in.
        #[arg(long, value_enum, default_value = "coarse")]
        mode: Mode,
        #[arg(long, value_enum, default_value = "none")]
        instrument: InstrumentKind,
        /// Labeling policy used by `--instrument speccfi`.
        #[arg(long, value_enum, default_value = "fine")]
        policy: Mode,
        #[arg(long, value_parser = parse_fence, default_value = "strict")]
        fence: FenceKind,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run one program on hardware thread 0 and print its statistics as CSV.
    Run {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "coarse")]
        mode: Mode,
        #[arg(long, value_enum, default_value = "none")]
        instrument: InstrumentKind,
        #[arg(long, value_enum, default_value = "fine")]
        policy: Mode,
        #[arg(long)]
        max_cycles: Option<u64>,
        /// Write the retire/annul trace CSV here.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Run an attack scenario and report whether it leaked.
    Attack {
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, value_enum)]
        placement: Option<PlacementArg>,
        #[arg(long)]
        trials: Option<usize>,
        /// Exit 0 only if the outcome matches.
        #[arg(long, value_enum)]
        expect: Option<Expect>,
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Run benchmark kernels and print the performance table as CSV.
    Bench {
        /// Kernel names (all when absent).
        #[arg(long = "bench")]
        benches: Vec<String>,
        /// Defenses (all when absent).
        #[arg(long = "defense", value_parser = parse_defense)]
        defenses: Vec<Defense>,
        /// Fence kinds for fencing defenses (both when absent).
        #[arg(long = "fence", value_parser = parse_fence)]
        fences: Vec<FenceKind>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Scan a program (or a generated corpus) for port-contention gadgets.
    Scan {
        input: Option<PathBuf>,
        /// Generate a corpus with this many functions instead of reading input.
        #[arg(long)]
        corpus: Option<usize>,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, value_enum, default_value = "fine")]
        policy: Mode,
        #[arg(long, default_value_t = 70)]
        window: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Build the security matrix and performance table and write them, with
    /// gnuplot data files, into a directory.
    Report {
        #[arg(long, default_value = "report")]
        out: PathBuf,
        /// Reuse an existing matrix CSV instead of running attacks.
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Reuse an existing performance CSV instead of running kernels.
        #[arg(long)]
        perf: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlacementArg {
    InPlace,
    OutOfPlace,
}

/// Parses `args` and runs the command, writing normal output to `out`.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code() as u8;
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match execute(cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {}", e.kind(), e);
            e.exit_code()
        }
    }
}

/// Entry point of the `speccfi` binary.
pub fn main() -> ExitCode {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let code = run_cli(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock());
    ExitCode::from(code)
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Writes via a temporary sibling and a rename so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn emit(out: &mut dyn Write, path: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_atomic(p, contents),
        None => out.write_all(contents.as_bytes()).map_err(io_err(Path::new("<stdout>"))),
    }
}

fn build_program(src: &str, mode: Mode, instrument: InstrumentKind, policy: Mode, fence: FenceKind) -> Result<Program, CliError> {
    let p = assemble(src, mode.into()).map_err(failed)?;
    Ok(match instrument {
        InstrumentKind::None => p,
        InstrumentKind::Speccfi => instrument_with(&p, policy.into(), None).map_err(failed)?.0,
        InstrumentKind::Retpoline => transform_retpoline(&p, fence),
    })
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<u8, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let apply = |o: &Overrides, cfg: &mut RunConfig| {
        if let Some(d) = o.defense {
            cfg.defense = d;
        }
        if let Some(f) = o.fence {
            cfg.fence_kind = f;
        }
        if let Some(s) = o.seed {
            cfg.seed = s;
        }
        if o.output.is_some() {
            cfg.output = o.output.clone();
        }
    };
    match cli.command {
        Command::Asm {
            input,
            mode,
            instrument,
            policy,
            fence,
            output,
        } => {
            let src = read(&input)?;
            let p = build_program(&src, mode, instrument, policy, fence)?;
            if instrument == InstrumentKind::Speccfi {
                let diags = validate_cfi(&p, policy.into());
                for d in &diags {
                    let _ = writeln!(err, "{:?} at {}: {}", d.severity, d.index, d.message);
                }
                if let Some(d) = diags.iter().find(|d| d.severity == Severity::Error) {
                    return Err(CliError::Assertion(format!("index {}: {}", d.index, d.message)));
                }
            }
            emit(out, output.as_deref(), &to_asm(&p))?;
            Ok(0)
        }
        Command::Run {
            input,
            mode,
            instrument,
            policy,
            max_cycles,
            trace_out,
            o,
        } => {
            apply(&o, &mut cfg);
            let src = read(&input)?;
            let p = build_program(&src, mode, instrument, policy, cfg.fence_kind)?;
            let opts = SimOptions {
                trace: cfg.trace || trace_out.is_some(),
                max_cycles,
                ..SimOptions::default()
            };
            let mut pipe = cfg.pipeline_config();
            pipe.seed = cfg.seed;
            let mut sim = Simulator::new(pipe, opts).map_err(|e| CliError::Config(e.to_string()))?;
            let img = load_image(p, Pid(1), 0, RUN_DATA_SIZE, None).map_err(failed)?;
            let pid = sim.add_image(img);
            let stats = sim.run(&[(0, pid)]).map_err(failed)?;
            if let Some(t) = &trace_out {
                write_atomic(t, &sim.trace_csv())?;
            }
            emit(out, cfg.output.as_deref(), &stats.to_csv())?;
            Ok(0)
        }
        Command::Attack {
            scenario,
            placement,
            trials,
            expect,
            trace_out,
            o,
        } => {
            apply(&o, &mut cfg);
            let name = scenario
                .or(cfg.scenario.clone())
                .ok_or_else(|| CliError::Usage("attack needs --scenario".into()))?;
            let mut sc: Scenario = name.parse().map_err(|e| CliError::Usage(format!("{e}")))?;
            match placement {
                Some(PlacementArg::InPlace) => sc.placement = Placement::InPlace,
                Some(PlacementArg::OutOfPlace) => sc.placement = Placement::OutOfPlace,
                None => {}
            }
            let opts = AttackOptions {
                trials: trials.unwrap_or(cfg.trials),
                seed: cfg.seed,
                config: cfg.pipeline_config(),
                trace: cfg.trace || trace_out.is_some(),
            };
            let (r, sim) = run_attack_with(sc, cfg.defense, cfg.fence_kind, &opts).map_err(|e| match e {
                crate::harness::AttackError::ScenarioInvalid(m) => CliError::Usage(m),
                e => failed(e),
            })?;
            if let Some(t) = &trace_out {
                write_atomic(t, &sim.trace_csv())?;
            }
            let _ = writeln!(
                err,
                "{} vs {} ({}): {} {}/{} recovered={:?} secret={:?}",
                r.scenario,
                r.defense,
                r.fence_kind,
                r.outcome(),
                r.successes,
                r.trials.len(),
                r.recovered(),
                r.ground_truth()
            );
            let m = SecurityMatrix {
                rows: vec![MatrixRow::from(&r)],
            };
            emit(out, cfg.output.as_deref(), &m.to_csv())?;
            match expect {
                None => Ok(0),
                Some(Expect::Leaked) if r.success => Ok(0),
                Some(Expect::Blocked) if r.blocked => Ok(0),
                Some(x) => Err(CliError::Assertion(format!(
                    "expected {:?} but outcome was {}",
                    x,
                    r.outcome()
                ))),
            }
        }
        Command::Bench {
            benches,
            defenses,
            fences,
            output,
        } => {
            let list = if benches.is_empty() {
                BENCHMARKS.to_vec()
            } else {
                benches
                    .iter()
                    .map(|b| benchmark(b).map_err(|e| CliError::Usage(e.to_string())))
                    .collect::<Result<_, _>>()?
            };
            let defenses = if defenses.is_empty() { Defense::ALL.to_vec() } else { defenses };
            let fences = if fences.is_empty() {
                vec![FenceKind::Strict, FenceKind::Relaxed]
            } else {
                fences
            };
            let t = perf_table(&list, &defenses, &fences, &cfg.pipeline_config()).map_err(failed)?;
            emit(out, output.as_deref().or(cfg.output.as_deref()), &t.to_csv())?;
            Ok(0)
        }
        Command::Scan {
            input,
            corpus,
            classes,
            seed,
            policy,
            window,
            output,
        } => {
            let src = match (input, corpus) {
                (Some(p), None) => read(&p)?,
                (None, Some(n)) => {
                    if classes == 0 || classes > 6 {
                        return Err(CliError::Usage("--classes must be between 1 and 6".into()));
                    }
                    generate_corpus(&CorpusSpec {
                        functions: n,
                        classes,
                        seed,
                        ..CorpusSpec::default()
                    })
                }
                _ => return Err(CliError::Usage("scan needs exactly one of INPUT or --corpus".into())),
            };
            let p = assemble(&src, CfiMode::Coarse).map_err(failed)?;
            let (q, map) = instrument_with(&p, policy.into(), None).map_err(failed)?;
            let scan = ScanConfig {
                window,
                ..ScanConfig::default()
            };
            let report = scan_smother_gadgets(&q, &map, &scan);
            let mut buf = Vec::new();
            report.write_csv(0, &mut buf).map_err(failed)?;
            let _ = writeln!(err, "gadgets: {} ({} before reachability)", report.total(), report.total_unfiltered());
            emit(out, output.as_deref(), &String::from_utf8(buf).map_err(failed)?)?;
            Ok(0)
        }
        Command::Report {
            out: dir,
            matrix,
            perf,
            trials,
            seed,
        } => {
            let pipe = cfg.pipeline_config();
            let m = match matrix {
                Some(p) => SecurityMatrix::from_csv(&read(&p)?).map_err(failed)?,
                None => {
                    security_matrix(
                        &Scenario::all(),
                        &MATRIX_DEFENSES,
                        FenceKind::Strict,
                        trials.unwrap_or(cfg.trials),
                        seed.unwrap_or(cfg.seed),
                        &pipe,
                    )
                    .map_err(failed)?
                    .0
                }
            };
            let t = match perf {
                Some(p) => PerfTable::from_csv(&read(&p)?).map_err(failed)?,
                None => perf_table(&BENCHMARKS, &Defense::ALL, &[FenceKind::Strict, FenceKind::Relaxed], &pipe)
                    .map_err(failed)?,
            };
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let files = [
                ("matrix.csv", m.to_csv()),
                ("matrix.txt", m.render()),
                ("perf.csv", t.to_csv()),
                ("perf.txt", t.render()),
                ("normalized_ipc.dat", normalized_ipc_dat(&t)),
                ("fences.dat", fences_dat(&t)),
            ];
            for (name, body) in &files {
                write_atomic(&dir.join(name), body)?;
            }
            let _ = write!(out, "{}\n{}", m.render(), t.render());
            Ok(0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> (u8, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut full = vec!["speccfi"];
        full.extend_from_slice(args);
        let code = run_cli(full, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    fn src_file(dir: &tempfile::TempDir, name: &str, text: &str) -> String {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p.display().to_string()
    }

    const PROG: &str = ".func f int(int)\nmain:\n  li r1, f\n  call *r1\n  halt\nf:\n  ret\n";

    #[test]
    fn config_rejects_unknown_keys_and_defaults_match() {
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::from_toml("[pipeline]\nrob = 3"), Err(CliError::Config(_))));
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.pipeline_config(), PipelineConfig::default());
        let c = RunConfig::from_toml("defense = \"speccfi-base\"\nfence_kind = \"relaxed\"\n[cache]\nmiss_latency = 80\n").unwrap();
        assert_eq!(c.pipeline_config().cache.miss_latency, 80);
        assert_eq!(c.pipeline_config().defense, Defense::SpecCfiBase);
    }

    #[test]
    fn asm_instruments_and_reports_missing_labels() {
        let d = tempfile::tempdir().unwrap();
        let f = src_file(&d, "p.s", PROG);
        let (code, out, _) = cli(&["asm", &f, "--instrument", "speccfi"]);
        assert_eq!(code, 0);
        assert!(out.contains("cfi_lbl L1"));
        let (code, out, _) = cli(&["asm", &f, "--instrument", "retpoline"]);
        assert_eq!(code, 0);
        assert!(!out.lines().any(|l| l.trim() == "ret"));
        let (code, _, err) = cli(&["asm", &f, "--mode", "fine"]);
        assert_eq!(code, 1);
        assert!(err.contains("line 4"), "{err}");
        assert!(err.starts_with("error["));
        assert_eq!(err.lines().count(), 1);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(cli(&["nonsense"]).0, 2);
        assert_eq!(cli(&["attack"]).0, 2);
        assert_eq!(cli(&["attack", "--scenario", "nope"]).0, 2);
        assert_eq!(cli(&["run", "x.s", "--defense", "nope"]).0, 2);
        assert_eq!(cli(&["--help"]).0, 0);
    }

    #[test]
    fn run_prints_stats_csv() {
        let d = tempfile::tempdir().unwrap();
        let f = src_file(&d, "p.s", PROG);
        let t = d.path().join("trace.csv");
        let (code, out, _) = cli(&["run", &f, "--defense", "speccfi-base", "--instrument", "speccfi", "--trace-out", t.to_str().unwrap()]);
        assert_eq!(code, 0);
        assert!(out.starts_with("cycles,"));
        assert!(fs::read_to_string(t).unwrap().starts_with("cycle,thread,pc,kind,event"));
    }

    #[test]
    fn attack_expectation_sets_exit_code() {
        let base = ["attack", "--scenario", "spectre-btb-cross", "--trials", "3"];
        let mut a = base.to_vec();
        a.extend(["--defense", "speccfi-base", "--expect", "blocked"]);
        assert_eq!(cli(&a).0, 0);
        let mut b = base.to_vec();
        b.extend(["--defense", "baseline", "--expect", "blocked"]);
        let (code, _, err) = cli(&b);
        assert_eq!(code, 1);
        assert!(err.contains("error[assertion]"));
    }

    #[test]
    fn config_file_from_flag() {
        let d = tempfile::tempdir().unwrap();
        let c = src_file(&d, "c.toml", "defense = \"speccfi-base\"\ntrials = 2\nscenario = \"spectre-btb-cross\"\n");
        assert_eq!(cli(&["--config", &c, "attack", "--expect", "blocked"]).0, 0);
        let bad = src_file(&d, "bad.toml", "colour = 1\n");
        let (code, _, err) = cli(&["--config", &bad, "attack"]);
        assert_eq!(code, 2);
        assert!(err.starts_with("error[config]"));
    }

    #[test]
    fn scan_corpus_emits_csv() {
        let (code, out, err) = cli(&["scan", "--corpus", "40", "--policy", "coarse"]);
        assert_eq!(code, 0);
        assert!(out.starts_with("marker_addr,label,gadget_offset"));
        assert!(err.starts_with("gadgets: "));
    }

    #[test]
    fn report_from_csvs_writes_all_files() {
        let d = tempfile::tempdir().unwrap();
        let m = "attack,space,placement,defense,fence_kind,successes,trials,outcome\nspectre-btb,cross,in-place,baseline,strict,10,10,leaked\n";
        let p = "bench,defense,fence_kind,cycles,committed_instructions,ipc,normalized_ipc,fences_inserted,fences_executed,fences_retired,mispredictions\narith,baseline,strict,10,15,1.5,1.0,0,0,0,1\n";
        let mf = src_file(&d, "m.csv", m);
        let pf = src_file(&d, "p.csv", p);
        let outdir = d.path().join("rep");
        let (code, out, _) = cli(&["report", "--out", outdir.to_str().unwrap(), "--matrix", &mf, "--perf", &pf]);
        assert_eq!(code, 0);
        assert!(out.contains("leaked"));
        for f in ["matrix.csv", "matrix.txt", "perf.csv", "perf.txt", "normalized_ipc.dat", "fences.dat"] {
            assert!(outdir.join(f).exists(), "{f}");
        }
        assert_eq!(fs::read_to_string(outdir.join("matrix.csv")).unwrap(), m);
        assert_eq!(fs::read_to_string(outdir.join("perf.csv")).unwrap(), p);
    }
}
