//! `mmdsel`: sparse variable selection and MMD two-sample tests from the
//! command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mmdsel::bench::{
    run_power_experiment, run_recovery_experiment, synth_block_gaussian, PowerConfig, PowerSummary, RecoveryConfig,
    RecoverySummary, SynthMode, SynthSpec,
};
use mmdsel::data::write_table;
use mmdsel::gauss::write_trajectory;
use mmdsel::testing::{permutation_test, Diagnostics, KernelChoice, KernelFamily, Selector, SelectorKind, TestConfig};
use mmdsel::{load_two_sample, RandomSource, SelectionVector};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "mmdsel", version, about = "Sparse variable selection for kernel two-sample tests")]
struct Cli {
    /// Worker threads for parallel sections. Results do not depend on it.
    #[arg(long, global = true, env = "MMDSEL_WORKERS")]
    workers: Option<usize>,
    /// Record wall-clock time in the `runtime_ms` field.
    #[arg(long, global = true)]
    runtime: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Choose a sparse direction on the full data.
    Select(SelectArgs),
    /// Split, select on the training part and run the permutation test.
    Test(TestArgs),
    /// Write block-Gaussian synthetic data.
    Synth(SynthArgs),
    /// Rejection rates of selectors over repeated synthetic trials.
    BenchPower(PowerArgs),
    /// FDP and NDP of selectors over repeated synthetic trials.
    BenchRecovery(RecoveryArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum KernelArg {
    Linear,
    Quadratic,
    Gaussian,
}

impl KernelArg {
    fn family(self) -> KernelFamily {
        match self {
            KernelArg::Linear => KernelFamily::Linear,
            KernelArg::Quadratic => KernelFamily::Quadratic,
            KernelArg::Gaussian => KernelFamily::Gaussian,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SolverArg {
    Linear,
    QuadGreedy,
    QuadLocal,
    QuadExact,
    QuadRelax,
    GaussCcp,
}

impl SolverArg {
    fn kind(self) -> SelectorKind {
        match self {
            SolverArg::Linear => SelectorKind::Linear,
            SolverArg::QuadGreedy => SelectorKind::QuadGreedy,
            SolverArg::QuadLocal => SelectorKind::QuadLocal,
            SolverArg::QuadExact => SelectorKind::QuadExact,
            SolverArg::QuadRelax => SelectorKind::QuadRelax,
            SolverArg::GaussCcp => SelectorKind::GaussCcp,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    Alternative,
    CovarianceOnly,
    Null,
}

impl ModeArg {
    fn mode(self) -> SynthMode {
        match self {
            ModeArg::Alternative => SynthMode::Alternative,
            ModeArg::CovarianceOnly => SynthMode::CovarianceOnly,
            ModeArg::Null => SynthMode::Null,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct SolverOpts {
    #[arg(long, value_enum)]
    solver: SolverArg,
    /// Number of features to keep.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    d: u64,
    /// Greedy pre-screen size before the relaxation.
    #[arg(long)]
    prescreen: Option<usize>,
    /// Penalty weight for gauss-ccp.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Choose the penalty from this comma-separated grid instead.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    t_out: Option<usize>,
    #[arg(long)]
    t_in: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Write the gauss-ccp outer-iteration log (JSON lines) here.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

impl SolverOpts {
    fn selector(&self) -> Selector {
        let mut s = Selector::new(self.solver.kind(), self.d as usize);
        s.prescreen = self.prescreen;
        s.gauss.lambda = self.lambda;
        s.gauss.lambda_grid = self.lambda_grid.clone();
        if let Some(t) = self.t_out {
            s.gauss.t_out = t;
        }
        if let Some(t) = self.t_in {
            s.gauss.t_in = t;
        }
        if let Some(b) = self.batch {
            s.gauss.batch = b;
        }
        s
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct DataOpts {
    #[arg(long, value_enum)]
    kernel: KernelArg,
    /// Quadratic offset `c` or Gaussian bandwidth `γ`; defaults from data.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output document; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl DataOpts {
    fn kernel_choice(&self) -> KernelChoice {
        match self.kernel {
            KernelArg::Linear => KernelChoice::Linear,
            KernelArg::Quadratic => KernelChoice::Quadratic(self.bandwidth),
            KernelArg::Gaussian => KernelChoice::Gaussian(self.bandwidth),
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct SelectArgs {
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    solver: SolverOpts,
}

#[derive(Args, Debug, Clone, Serialize)]
struct TestArgs {
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    solver: SolverOpts,
    /// Number of permutations.
    #[arg(long = "np", default_value_t = 200)]
    n_perm: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    train_fraction: f64,
    /// Use the add-one p-value.
    #[arg(long)]
    corrected_pvalue: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SynthOpts {
    /// Number of 3-feature blocks.
    #[arg(long, default_value_t = 20)]
    blocks: usize,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    m: usize,
    #[arg(long, default_value_t = 3)]
    wishart_df: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Alternative)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SynthOpts {
    fn spec(&self) -> SynthSpec {
        SynthSpec {
            wishart_df: self.wishart_df,
            ..SynthSpec::new(self.blocks, self.n, self.m, self.mode.mode(), self.seed)
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct SynthArgs {
    #[command(flatten)]
    synth: SynthOpts,
    /// Directory receiving x.csv and y.csv.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct BenchOpts {
    #[command(flatten)]
    synth: SynthOpts,
    /// Comma-separated solver names.
    #[arg(long, value_enum, value_delimiter = ',', num_args = 1.., required = true)]
    selectors: Vec<SolverArg>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    d: u64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the summary as tab-separated text.
    #[arg(long)]
    table: Option<PathBuf>,
}

impl BenchOpts {
    fn selectors(&self) -> Vec<Selector> {
        self.selectors.iter().map(|s| Selector::new(s.kind(), self.d as usize)).collect()
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct PowerArgs {
    #[command(flatten)]
    bench: BenchOpts,
    #[arg(long = "np", default_value_t = 200)]
    n_perm: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    train_fraction: f64,
    #[arg(long)]
    corrected_pvalue: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
struct RecoveryArgs {
    #[command(flatten)]
    bench: BenchOpts,
}

#[derive(Serialize)]
struct SelectionDoc {
    /// 1-based feature indices.
    support: Vec<usize>,
    z: Vec<f64>,
    objective: f64,
}

impl SelectionDoc {
    fn new(sel: &SelectionVector, objective: f64) -> Self {
        Self {
            support: sel.support().iter().map(|k| k + 1).collect(),
            z: sel.z().to_vec(),
            objective,
        }
    }
}

#[derive(Serialize)]
struct TestDoc {
    statistic: f64,
    p_value: f64,
    n_permutations: usize,
    alpha: f64,
    reject: bool,
    corrected: bool,
}

#[derive(Serialize)]
struct DiagnosticsDoc {
    method: String,
    kernel: mmdsel::KernelSpec,
    upper_bound: Option<f64>,
    node_count: Option<u64>,
    bound_certified: Option<bool>,
    lambda: Option<f64>,
    no_signal: bool,
    trajectory_path: Option<PathBuf>,
}

impl DiagnosticsDoc {
    fn new(d: &Diagnostics, kernel: mmdsel::KernelSpec, trajectory_path: Option<PathBuf>) -> Self {
        Self {
            method: d.method.clone(),
            kernel,
            upper_bound: d.upper_bound,
            node_count: d.node_count,
            bound_certified: d.bound_certified,
            lambda: d.lambda,
            no_signal: d.no_signal,
            trajectory_path,
        }
    }
}

#[derive(Serialize)]
struct SynthDoc {
    x_path: PathBuf,
    y_path: PathBuf,
    dim: usize,
    /// 1-based indices of the features that differ.
    true_support: Vec<usize>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum BenchDoc {
    Power(PowerSummary),
    Recovery(RecoverySummary),
}

#[derive(Serialize)]
struct Document<C: Serialize> {
    schema_version: u32,
    command: &'static str,
    config: C,
    selection: Option<SelectionDoc>,
    test: Option<TestDoc>,
    diagnostics: Option<DiagnosticsDoc>,
    synth: Option<SynthDoc>,
    summary: Option<BenchDoc>,
    runtime_ms: Option<f64>,
}

impl<C: Serialize> Document<C> {
    fn new(command: &'static str, config: C) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command,
            config,
            selection: None,
            test: None,
            diagnostics: None,
            synth: None,
            summary: None,
            runtime_ms: None,
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<mmdsel::Error> for Failure {
    fn from(e: mmdsel::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn check_pair(kernel: KernelArg, solver: &SolverOpts) -> std::result::Result<(), Failure> {
    let want = solver.solver.kind().family();
    if kernel.family() != want {
        return Err(Failure::Usage(format!(
            "solver {} is incompatible with the {} kernel (needs {})",
            solver.solver.kind().name(),
            kernel.family().name(),
            want.name()
        )));
    }
    if solver.trajectory.is_some() && solver.solver != SolverArg::GaussCcp {
        return Err(Failure::Usage("--trajectory is only available for gauss-ccp".into()));
    }
    Ok(())
}

fn emit<C: Serialize>(doc: &Document<C>, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(doc)?;
    match out {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("cannot write {}", p.display()))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(())
}

fn write_traj(path: &Option<PathBuf>, d: &Diagnostics) -> Result<Option<PathBuf>> {
    match (path, &d.trajectory) {
        (Some(p), Some(t)) => {
            write_trajectory(p, t)?;
            Ok(Some(p.clone()))
        }
        _ => Ok(None),
    }
}

fn run_select(a: &SelectArgs, start: Option<Instant>) -> std::result::Result<(), Failure> {
    check_pair(a.data.kernel, &a.solver)?;
    let data = load_two_sample(&a.data.x, &a.data.y)?;
    let kernel = a.data.kernel_choice().resolve(&data)?;
    let rng = RandomSource::new(a.data.seed);
    let trained = a.solver.selector().train(&kernel, &data, &rng)?;
    let traj = write_traj(&a.solver.trajectory, &trained.diagnostics)?;
    let mut doc = Document::new("select", a);
    doc.selection = Some(SelectionDoc::new(&trained.selection, trained.objective));
    doc.diagnostics = Some(DiagnosticsDoc::new(&trained.diagnostics, kernel, traj));
    doc.runtime_ms = start.map(elapsed_ms);
    emit(&doc, a.data.out.as_deref())?;
    Ok(())
}

fn run_test(a: &TestArgs, start: Option<Instant>) -> std::result::Result<(), Failure> {
    check_pair(a.data.kernel, &a.solver)?;
    let cfg = TestConfig {
        n_perm: a.n_perm,
        alpha: a.alpha,
        train_fraction: a.train_fraction,
        corrected: a.corrected_pvalue,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let data = load_two_sample(&a.data.x, &a.data.y)?;
    let rng = RandomSource::new(a.data.seed);
    let r = permutation_test(&data, &a.data.kernel_choice(), &a.solver.selector(), &cfg, &rng)?;
    let traj = write_traj(&a.solver.trajectory, &r.diagnostics)?;
    let mut doc = Document::new("test", a);
    doc.selection = Some(SelectionDoc::new(&r.selection, r.training_objective));
    doc.test = Some(TestDoc {
        statistic: r.statistic,
        p_value: r.p_value,
        n_permutations: r.permuted.len(),
        alpha: r.alpha,
        reject: r.reject,
        corrected: r.corrected,
    });
    doc.diagnostics = Some(DiagnosticsDoc::new(&r.diagnostics, r.kernel, traj));
    doc.runtime_ms = start.map(elapsed_ms);
    emit(&doc, a.data.out.as_deref())?;
    Ok(())
}

fn run_synth(a: &SynthArgs, start: Option<Instant>) -> std::result::Result<(), Failure> {
    let spec = a.synth.spec();
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let (data, truth) = synth_block_gaussian(&spec)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    let header: Vec<String> = (1..=data.dim()).map(|k| format!("v{k}")).collect();
    let x_path = a.out_dir.join("x.csv");
    let y_path = a.out_dir.join("y.csv");
    write_table(&x_path, data.x(), Some(&header))?;
    write_table(&y_path, data.y(), Some(&header))?;
    let mut doc = Document::new("synth", a);
    doc.synth = Some(SynthDoc {
        x_path,
        y_path,
        dim: data.dim(),
        true_support: truth.iter().map(|k| k + 1).collect(),
    });
    doc.runtime_ms = start.map(elapsed_ms);
    emit(&doc, a.out.as_deref())?;
    Ok(())
}

fn write_table_text(path: &Option<PathBuf>, text: &str) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, text).with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(())
}

fn run_power(a: &PowerArgs, start: Option<Instant>) -> std::result::Result<(), Failure> {
    let b = &a.bench;
    let test = TestConfig {
        n_perm: a.n_perm,
        alpha: a.alpha,
        train_fraction: a.train_fraction,
        corrected: a.corrected_pvalue,
    };
    test.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let cfg = PowerConfig {
        synth: b.synth.spec(),
        selectors: b.selectors(),
        trials: b.trials,
        test,
        seed: b.synth.seed,
    };
    let summary = run_power_experiment(&cfg)?;
    write_table_text(&b.table, &summary.to_tsv())?;
    let mut doc = Document::new("bench-power", a);
    doc.summary = Some(BenchDoc::Power(summary));
    doc.runtime_ms = start.map(elapsed_ms);
    emit(&doc, b.out.as_deref())?;
    Ok(())
}

fn run_recovery(a: &RecoveryArgs, start: Option<Instant>) -> std::result::Result<(), Failure> {
    let b = &a.bench;
    if b.synth.mode == ModeArg::Null {
        return Err(Failure::Usage("bench-recovery needs a non-null mode".into()));
    }
    let cfg = RecoveryConfig {
        synth: b.synth.spec(),
        selectors: b.selectors(),
        trials: b.trials,
        seed: b.synth.seed,
    };
    let summary = run_recovery_experiment(&cfg)?;
    write_table_text(&b.table, &summary.to_tsv())?;
    let mut doc = Document::new("bench-recovery", a);
    doc.summary = Some(BenchDoc::Recovery(summary));
    doc.runtime_ms = start.map(elapsed_ms);
    emit(&doc, b.out.as_deref())?;
    Ok(())
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn dispatch(cli: &Cli) -> std::result::Result<(), Failure> {
    let start = cli.runtime.then(Instant::now);
    match &cli.command {
        Command::Select(a) => run_select(a, start),
        Command::Test(a) => run_test(a, start),
        Command::Synth(a) => run_synth(a, start),
        Command::BenchPower(a) => run_power(a, start),
        Command::BenchRecovery(a) => run_recovery(a, start),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
