//! `weakiv`: IV estimates, first-stage F-statistics and weak-instrument tests
//! from CSV data, plus Monte Carlo runs over grouped designs.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

mod report;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use weakiv::data::{load_csv, partial_out, CsvSchema, PartialledData};
use weakiv::estimators::{
    estimate_sigma_v, estimate_w, estimate_with_omega, ols, omega_matrix, WOptions, WeightSpec,
};
use weakiv::fstats::{all_fstats, f_effective, f_robust};
use weakiv::grouped::{run_sim, sweep_scale, GroupedDesign, SimConfig, SimSummary};
use weakiv::weak_test::{weak_iv_test_parts, BenchmarkChoice, McOptions, TestMethod, WeakIvConfig};
use weakiv::Error;

use report::{Cell, Format, Report};

#[derive(Parser, Debug)]
#[command(name = "weakiv", version, about = "Weak-instrument diagnostics for linear IV with one endogenous regressor")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads for simulations (default: all cores).
    #[arg(long, global = true, env = "WEAKIV_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// OLS, 2SLS and GMMf estimates with the F-statistics that calibrate them.
    Estimate(EstimateArgs),
    /// Weak-instrument tests based on the effective and/or robust F-statistic.
    Weakivtest(TestArgs),
    /// Monte Carlo summary for a grouped design.
    Simulate(SimulateArgs),
    /// Monte Carlo summaries over a grid of first-stage scales.
    Curves(CurvesArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Outcome column.
    #[arg(long)]
    y: String,
    /// Endogenous regressor column.
    #[arg(long)]
    x: String,
    /// Instrument column (repeat for several).
    #[arg(long, required = true, num_args = 1..)]
    z: Vec<String>,
    /// Exogenous control column (repeat for several).
    #[arg(long, num_args = 1..)]
    controls: Vec<String>,
    /// Add an intercept to the controls.
    #[arg(long)]
    intercept: bool,
    /// Cluster label column; switches the covariance kernel to clustered.
    #[arg(long)]
    cluster: Option<String>,
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args, Debug)]
struct TestOptions {
    /// Worst-case relative bias tolerated under the null of weak instruments.
    #[arg(long, default_value_t = 0.10)]
    tau: f64,
    /// Test size.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "ls")]
    benchmark: Benchmark,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Benchmark {
    Ls,
    Mop,
}

impl From<Benchmark> for BenchmarkChoice {
    fn from(b: Benchmark) -> Self {
        match b {
            Benchmark::Ls => BenchmarkChoice::Ls,
            Benchmark::Mop => BenchmarkChoice::Mop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Patnaik,
    Mc,
    /// `B = 1`; MOP benchmark only.
    Conservative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stat {
    Eff,
    Robust,
    Both,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    test: TestOptions,
    #[arg(long, value_enum, default_value = "patnaik")]
    method: Method,
    #[arg(long, value_enum, default_value = "both")]
    stat: Stat,
    /// Seed for Monte Carlo critical values and random search starts.
    #[arg(long, default_value_t = 20_240_601)]
    seed: u64,
    /// Draws per Monte Carlo critical value.
    #[arg(long, default_value_t = 100_000)]
    mc_draws: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct SimArgs {
    /// Design file, or `builtin:<name>`.
    #[arg(long)]
    design: String,
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    #[arg(long, default_value_t = 20_240_601)]
    seed: u64,
    /// Override the design's sample size.
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    test: TestOptions,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Report per-group means of F_g and the estimator weights instead.
    #[arg(long)]
    per_group: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct CurvesArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// First-stage scales, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    e_grid: Vec<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug)]
enum Failure {
    Lib(Error),
    Io(io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot start {t} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let (report, output) = match run(&cli.command) {
        Ok(r) => r,
        Err(f) => return fail(f),
    };
    match emit(&report, output) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(Failure::Io(e)),
    }
}

fn fail(f: Failure) -> ExitCode {
    match f {
        Failure::Lib(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
        Failure::Io(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn emit(report: &Report, output: &OutputArgs) -> io::Result<()> {
    match &output.out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            report.write(output.format, &mut w)?;
            w.flush()
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            report.write(output.format, &mut lock)?;
            lock.flush()
        }
    }
}

fn run(cmd: &Command) -> Result<(Report, &OutputArgs), Failure> {
    Ok(match cmd {
        Command::Estimate(a) => (cmd_estimate(a)?, &a.output),
        Command::Weakivtest(a) => (cmd_weakivtest(a)?, &a.output),
        Command::Simulate(a) => (cmd_simulate(a)?, &a.output),
        Command::Curves(a) => (cmd_curves(a)?, &a.output),
    })
}

fn load(a: &DataArgs) -> Result<PartialledData, Error> {
    let schema = CsvSchema {
        y: a.y.clone(),
        x: a.x.clone(),
        z: a.z.clone(),
        controls: a.controls.clone(),
        intercept: a.intercept,
        cluster: a.cluster.clone(),
    };
    partial_out(&load_csv(&a.data, &schema)?)
}

fn data_meta(r: &mut Report, a: &DataArgs, pd: &PartialledData) {
    r.meta("data", a.data.display().to_string())
        .meta("n", pd.n())
        .meta("kz", pd.kz())
        .meta("controls", pd.n_controls())
        .meta("covariance", if pd.clusters().is_some() { "cluster" } else { "hc0" });
    if let Some(c) = pd.clusters() {
        r.meta("clusters", c.count());
    }
}

fn cmd_estimate(a: &EstimateArgs) -> Result<Report, Error> {
    let pd = load(&a.data)?;
    let opts = WOptions::for_data(&pd);
    let w = estimate_w(&pd, &opts)?;
    let fs = all_fstats(&pd, &w)?;
    let mut r = Report::new(&["quantity", "value", "se_robust", "se_nonrobust"]);
    data_meta(&mut r, &a.data, &pd);
    r.row(vec!["beta_ols".into(), ols(&pd)?.into(), Cell::Null, Cell::Null]);
    for spec in [WeightSpec::TwoSls, WeightSpec::Gmmf] {
        let omega = omega_matrix(&pd, &spec, w.w2())?;
        let label = format!("beta_{}", spec.label());
        let e = estimate_with_omega(&pd, spec, omega, &opts)?;
        r.row(vec![label.into(), e.beta_hat.into(), e.se_robust.into(), e.se_nonrobust.into()]);
    }
    for (name, v) in [("F", fs.f), ("F_eff", fs.f_eff), ("F_r", fs.f_r)] {
        r.row(vec![name.into(), v.into(), Cell::Null, Cell::Null]);
    }
    Ok(r)
}

fn cmd_weakivtest(a: &TestArgs) -> Result<Report, Error> {
    let pd = load(&a.data)?;
    let method = match a.method {
        Method::Patnaik => TestMethod::Patnaik,
        Method::Mc => TestMethod::MonteCarlo(McOptions {
            draws: a.mc_draws,
            seed: a.seed,
            ..McOptions::default()
        }),
        Method::Conservative => TestMethod::ConservativeSimplified,
    };
    let base = WeakIvConfig {
        benchmark: a.test.benchmark.into(),
        tau: a.test.tau,
        alpha: a.test.alpha,
        method,
        ..WeakIvConfig::default()
    };
    base.validate()?;
    let mut sup = base.sup;
    sup.seed = a.seed;
    let w = estimate_w(&pd, &WOptions::for_data(&pd))?;
    let sigma_v = match base.benchmark {
        BenchmarkChoice::Ls => Some(estimate_sigma_v(&pd)?),
        BenchmarkChoice::Mop => None,
    };
    let specs: &[WeightSpec] = match a.stat {
        Stat::Eff => &[WeightSpec::TwoSls],
        Stat::Robust => &[WeightSpec::Gmmf],
        Stat::Both => &[WeightSpec::TwoSls, WeightSpec::Gmmf],
    };
    let mut r = Report::new(&[
        "statistic", "estimator", "value", "b", "keff", "cv", "mc_se", "reject", "converged",
    ]);
    data_meta(&mut r, &a.data, &pd);
    r.meta("tau", a.test.tau)
        .meta("alpha", a.test.alpha)
        .meta("benchmark", benchmark_label(base.benchmark))
        .meta("method", method.label())
        .meta("seed", a.seed);
    for spec in specs {
        let statistic = match spec {
            WeightSpec::TwoSls => f_effective(&pd, w.w2())?,
            _ => f_robust(&pd, w.w2())?,
        };
        let omega = omega_matrix(&pd, spec, w.w2())?;
        let cfg = WeakIvConfig {
            weights: spec.clone(),
            sup,
            ..base.clone()
        };
        let t = weak_iv_test_parts(statistic, &w, &omega, sigma_v, &cfg)?;
        r.row(vec![
            t.statistic.kind.label().into(),
            spec.label().into(),
            t.statistic.value.into(),
            t.b.into(),
            t.keff.into(),
            t.cv.into(),
            t.mc_std_error.into(),
            t.reject.into(),
            t.converged.into(),
        ]);
    }
    Ok(r)
}

fn benchmark_label(b: BenchmarkChoice) -> &'static str {
    match b {
        BenchmarkChoice::Ls => "ls",
        BenchmarkChoice::Mop => "mop",
    }
}

fn sim_setup(a: &SimArgs) -> Result<(GroupedDesign, SimConfig), Error> {
    let mut design = GroupedDesign::resolve(&a.design)?;
    if let Some(n) = a.n {
        design = design.with_n(n);
    }
    let cfg = SimConfig {
        reps: a.reps,
        seed: a.seed,
        tau: a.test.tau,
        alpha: a.test.alpha,
        benchmark: a.test.benchmark.into(),
        ..SimConfig::default()
    };
    WeakIvConfig {
        tau: cfg.tau,
        alpha: cfg.alpha,
        ..WeakIvConfig::default()
    }
    .validate()?;
    Ok((design, cfg))
}

fn sim_meta(r: &mut Report, s: &SimSummary) {
    r.meta("design", s.design.clone())
        .meta("n", s.n)
        .meta("scale", s.scale)
        .meta("beta", s.beta)
        .meta("reps", s.reps)
        .meta("failures", s.failures)
        .meta("seed", s.seed)
        .meta("tau", s.tau)
        .meta("alpha", s.alpha)
        .meta("benchmark", s.benchmark.clone())
        .meta("mean_F", s.f.mean);
    if let Some(e) = &s.first_failure {
        r.meta("first_failure", e.clone());
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<Report, Error> {
    let (design, cfg) = sim_setup(&a.sim)?;
    let s = run_sim(&design, &cfg)?;
    if a.per_group {
        let mut r = Report::new(&["group", "mean_F_g", "mean_w_2sls", "mean_w_gmmf"]);
        sim_meta(&mut r, &s);
        for g in 0..s.f_g.len() {
            r.row(vec![(g + 1).into(), s.f_g[g].into(), s.w_2sls[g].into(), s.w_gmmf[g].into()]);
        }
        return Ok(r);
    }
    let mut r = Report::new(&[
        "estimator", "f_stat", "f_mean", "f_sd", "b_mean", "cv_mean", "cv_sd", "rf_weak", "beta_mean", "beta_sd",
        "bias", "rf_wald",
    ]);
    sim_meta(&mut r, &s);
    let st = s.structural.as_ref();
    if let Some(st) = st {
        r.row(vec![
            "ols".into(),
            Cell::Null,
            Cell::Null,
            Cell::Null,
            Cell::Null,
            Cell::Null,
            Cell::Null,
            Cell::Null,
            st.beta_ols.mean.into(),
            st.beta_ols.sd.into(),
            st.bias_ols.into(),
            Cell::Null,
        ]);
    }
    let rows = [
        ("2sls", "F_eff", s.f_eff, st.map(|t| (t.b_eff, t.cv_eff, t.rf_eff, t.beta_2sls, t.bias_2sls, t.rf_wald_2sls))),
        ("gmmf", "F_r", s.f_r, st.map(|t| (t.b_r, t.cv_r, t.rf_r, t.beta_gmmf, t.bias_gmmf, t.rf_wald_gmmf))),
    ];
    for (est, stat, f, tail) in rows {
        let mut cells: Vec<Cell> = vec![est.into(), stat.into(), f.mean.into(), f.sd.into()];
        match tail {
            Some((b, cv, rf, beta, bias, wald)) => cells.extend([
                b.mean.into(),
                cv.mean.into(),
                cv.sd.into(),
                rf.into(),
                beta.mean.into(),
                beta.sd.into(),
                bias.into(),
                wald.into(),
            ]),
            None => cells.extend(std::iter::repeat_n(Cell::Null, 8)),
        }
        r.row(cells);
    }
    Ok(r)
}

fn cmd_curves(a: &CurvesArgs) -> Result<Report, Error> {
    let (design, cfg) = sim_setup(&a.sim)?;
    let rows = sweep_scale(&design, &a.e_grid, &cfg)?;
    let mut r = Report::new(&[
        "e", "mean_F", "mean_F_eff", "mean_F_r", "rel_bias_2sls", "rel_bias_gmmf", "rf_eff", "rf_r", "rf_wald_2sls",
        "rf_wald_gmmf", "failures",
    ]);
    r.meta("design", design.name.clone())
        .meta("n", design.n)
        .meta("beta", design.beta)
        .meta("reps", cfg.reps)
        .meta("seed", cfg.seed)
        .meta("tau", cfg.tau)
        .meta("alpha", cfg.alpha)
        .meta("benchmark", benchmark_label(cfg.benchmark));
    for c in rows {
        r.row(vec![
            c.e.into(),
            c.mean_f.into(),
            c.mean_f_eff.into(),
            c.mean_f_r.into(),
            c.rel_bias_2sls.into(),
            c.rel_bias_gmmf.into(),
            c.rf_eff.into(),
            c.rf_r.into(),
            c.rf_wald_2sls.into(),
            c.rf_wald_gmmf.into(),
            c.failures.into(),
        ]);
    }
    Ok(r)
}
