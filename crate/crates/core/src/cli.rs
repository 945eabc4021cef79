//! Command-line interface of the `homoghj` binary.
//!
//! Subcommands map onto the experiment drivers: `vanish`, `homog`, `effham`
//! and `sharpness` run the sweep suites and write CSV/metadata/plot files;
//! `solve` runs a single viscous problem and dumps the profile; `exact`
//! evaluates the closed-form references. Explicit flags override values
//! from a `--config` JSON file (a flat object whose keys equal the long
//! flag names), which overrides the built-in defaults.
//!
//! Exit codes: 0 on success, 2 for configuration errors (the message names
//! the offending flag), 1 for numerical failures (the message names the
//! failing stage).

use std::path::{Path, PathBuf};

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Deserialize;

use crate::closed_form::QuadratureConfig;
use crate::experiments::{
    self, EffHamOptions, ExampleId, ExperimentReport, ExperimentsError, RateSeries, SuiteKind,
};
use crate::fd_solver::{self, FDConfig, FdError, Grid1D};
use crate::fem_effham::{self, FemError};

const DEFAULT_DX: f64 = 0.001953125; // 2^-9
const DEFAULT_C_CFL: f64 = 0.9;
const OUT_ENV: &str = "HOMOGHJ_OUT";

#[derive(Debug)]
enum CliError {
    /// Rejected before any computation; `flag` is the long option at fault.
    Config { flag: &'static str, message: String },
    /// A solver or quadrature stage failed after configuration was accepted.
    Numerical { stage: &'static str, message: String },
}

impl CliError {
    fn config(flag: &'static str, message: impl Into<String>) -> Self {
        CliError::Config {
            flag,
            message: message.into(),
        }
    }
}

/// Fold library errors into the two exit classes, naming flag or stage.
fn classify(stage: &'static str, err: ExperimentsError) -> CliError {
    match err {
        ExperimentsError::UnknownExample { .. } | ExperimentsError::WrongSuite { .. } => {
            CliError::config("example", err.to_string())
        }
        ExperimentsError::Fd(FdError::InvalidConfig { name, reason }) => CliError::Config {
            flag: match name {
                "t_final" => "t",
                "c_cfl" => "c-cfl",
                other => other,
            },
            message: reason,
        },
        ExperimentsError::Fem(FemError::InvalidParameter { name, reason }) => CliError::Config {
            flag: name,
            message: reason,
        },
        other => CliError::Numerical {
            stage,
            message: other.to_string(),
        },
    }
}

/// Flat JSON configuration; keys equal the long flag names and unknown keys
/// are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonConfig {
    example: Option<String>,
    dx: Option<f64>,
    #[serde(rename = "c-cfl")]
    c_cfl: Option<f64>,
    t: Option<f64>,
    domain: Option<[f64; 2]>,
    window: Option<[f64; 2]>,
    eps: Option<f64>,
    p: Option<[f64; 2]>,
    sigma: Option<f64>,
    n: Option<usize>,
    halvings: Option<usize>,
    out: Option<PathBuf>,
    threads: Option<usize>,
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected two comma-separated numbers, got {s:?}"));
    }
    let a = parts[0]
        .trim()
        .parse::<f64>()
        .map_err(|e| format!("{:?}: {e}", parts[0]))?;
    let b = parts[1]
        .trim()
        .parse::<f64>()
        .map_err(|e| format!("{:?}: {e}", parts[1]))?;
    Ok([a, b])
}

#[derive(Debug, Args)]
struct CommonOpts {
    /// Flat JSON config file; explicit flags override its entries.
    #[arg(long, value_name = "PATH", global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $HOMOGHJ_OUT, then ./out).
    #[arg(long, value_name = "DIR", global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 picks the machine default. Results are identical
    /// for every thread count.
    #[arg(long, value_name = "N", global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct GridOpts {
    /// Example id (see the catalog at the bottom of `--help`).
    #[arg(long, value_name = "ID")]
    example: Option<String>,
    /// Grid spacing [default: 2^-9 = 0.001953125].
    #[arg(long, value_name = "DX", allow_negative_numbers = true)]
    dx: Option<f64>,
    /// Time-step safety factor in (0, 1] [default: 0.9].
    #[arg(long = "c-cfl", value_name = "C", allow_negative_numbers = true)]
    c_cfl: Option<f64>,
}

#[derive(Debug, Parser)]
#[command(
    name = "homoghj",
    version,
    about = "Vanishing-viscosity and homogenization rate experiments for viscous \
             Hamilton-Jacobi equations, plus effective-Hamiltonian approximation \
             on the 2-torus"
)]
struct Cli {
    #[command(flatten)]
    common: CommonOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Error-vs-eps series against the exact limit (examples 5.1-5.5).
    Vanish(GridOpts),
    /// Cauchy-difference series |u_eps - u_{eps/2}| (examples 5.6-5.11).
    Homog(GridOpts),
    /// Effective-Hamiltonian sweeps on the 2-torus (examples 6.1-6.2).
    Effham {
        /// Example id: 6.1 or 6.2.
        #[arg(long, value_name = "ID")]
        example: Option<String>,
        /// Evaluation point p, e.g. `3,1` [default: 3,1 for 6.1; -1,-1 for 6.2].
        #[arg(long, value_name = "P1,P2", value_parser = parse_pair, allow_hyphen_values = true)]
        p: Option<[f64; 2]>,
        /// Mesh subdivisions per side, a power of two
        /// [default: 1024 for 6.1; 64 for 6.2].
        #[arg(long, value_name = "N")]
        n: Option<usize>,
        /// Surface-sweep discount for 6.2 [default: 2^-4].
        #[arg(long, value_name = "SIGMA", allow_negative_numbers = true)]
        sigma: Option<f64>,
        /// Cauchy pairs in the 6.2 sigma-series [default: 4].
        #[arg(long, value_name = "K")]
        halvings: Option<usize>,
    },
    /// Closed-form sharpness checks over eps = 2^-4, ..., 2^-12.
    Sharpness,
    /// One viscous solve of a catalog example; writes the final profile.
    Solve {
        #[command(flatten)]
        grid: GridOpts,
        /// Viscosity, at least the monotonicity floor for the grid.
        #[arg(long, value_name = "EPS", allow_negative_numbers = true)]
        eps: Option<f64>,
        /// Final time [default: the example's catalog time].
        #[arg(long, value_name = "T", allow_negative_numbers = true)]
        t: Option<f64>,
        /// Computational interval, e.g. `-6,6` [default: the catalog domain].
        #[arg(long, value_name = "A,B", value_parser = parse_pair, allow_hyphen_values = true)]
        domain: Option<[f64; 2]>,
        /// Restrict the written profile to this interval [default: everything].
        #[arg(long, value_name = "A,B", value_parser = parse_pair, allow_hyphen_values = true)]
        window: Option<[f64; 2]>,
    },
    /// Evaluate a closed-form reference (examples 5.1-5.5 profiles, 6.1 value).
    Exact {
        #[command(flatten)]
        grid: GridOpts,
        /// Evaluation time [default: the example's catalog time].
        #[arg(long, value_name = "T", allow_negative_numbers = true)]
        t: Option<f64>,
        /// Evaluation interval [default: the example's measurement window].
        #[arg(long, value_name = "A,B", value_parser = parse_pair, allow_hyphen_values = true)]
        window: Option<[f64; 2]>,
    },
}

/// Entry point used by `main`; returns the process exit code.
pub fn run() -> i32 {
    let catalog = catalog_text();
    let cmd = Cli::command().after_help(catalog.clone()).after_long_help(catalog);
    let matches = match cmd.try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            // clap exits 0 for --help/--version and 2 for usage errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    match execute(cli, &matches) {
        Ok(()) => 0,
        Err(CliError::Config { flag, message }) => {
            eprintln!("error: invalid --{flag}: {message}");
            2
        }
        Err(CliError::Numerical { stage, message }) => {
            eprintln!("error: {stage} failed: {message}");
            1
        }
    }
}

fn catalog_text() -> String {
    let mut s = String::from("Example catalog:\n");
    for id in ExampleId::ALL {
        s.push_str(&format!("  {:<5} {}\n", id.id(), id.describe()));
    }
    s.push_str(
        "\nDefaults: dx = 2^-9, c-cfl = 0.9, out = $HOMOGHJ_OUT or ./out; domains, \
         windows and final times come from the catalog.",
    );
    s
}

fn load_json(path: Option<&Path>) -> Result<JsonConfig, CliError> {
    let Some(path) = path else {
        return Ok(JsonConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::config("config", format!("cannot read {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))
}

fn configure_threads(threads: usize) -> Result<(), CliError> {
    if threads == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::config("threads", e.to_string()))
}

fn parse_example(s: &str) -> Result<ExampleId, CliError> {
    s.parse::<ExampleId>()
        .map_err(|e| CliError::config("example", e.to_string()))
}

struct Merged {
    json: JsonConfig,
    out: PathBuf,
}

impl Merged {
    fn example(&self, flag: Option<&String>) -> Result<ExampleId, CliError> {
        let s = flag
            .cloned()
            .or_else(|| self.json.example.clone())
            .ok_or_else(|| CliError::config("example", "required (see the catalog in --help)"))?;
        parse_example(&s)
    }

    fn dx(&self, flag: Option<f64>) -> Result<f64, CliError> {
        let dx = flag.or(self.json.dx).unwrap_or(DEFAULT_DX);
        if dx.is_finite() && dx > 0.0 && dx < 1.0 {
            Ok(dx)
        } else {
            Err(CliError::config("dx", format!("need 0 < dx < 1, got {dx}")))
        }
    }

    fn c_cfl(&self, flag: Option<f64>) -> Result<f64, CliError> {
        let c = flag.or(self.json.c_cfl).unwrap_or(DEFAULT_C_CFL);
        if c > 0.0 && c <= 1.0 {
            Ok(c)
        } else {
            Err(CliError::config("c-cfl", format!("need 0 < c <= 1, got {c}")))
        }
    }
}

fn merge(common: &CommonOpts) -> Result<Merged, CliError> {
    let json = load_json(common.config.as_deref())?;
    configure_threads(common.threads.or(json.threads).unwrap_or(0))?;
    let out = common
        .out
        .clone()
        .or_else(|| json.out.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Merged { json, out })
}

fn execute(cli: Cli, _matches: &ArgMatches) -> Result<(), CliError> {
    let merged = merge(&cli.common)?;
    match cli.command {
        Command::Vanish(grid) => {
            let id = merged.example(grid.example.as_ref())?;
            let dx = merged.dx(grid.dx)?;
            let c_cfl = merged.c_cfl(grid.c_cfl)?;
            let series = experiments::run_vanishing_suite(id, dx, c_cfl)
                .map_err(|e| classify("vanishing-viscosity sweep", e))?;
            finish_series(series, &merged.out)
        }
        Command::Homog(grid) => {
            let id = merged.example(grid.example.as_ref())?;
            let dx = merged.dx(grid.dx)?;
            let c_cfl = merged.c_cfl(grid.c_cfl)?;
            let series = experiments::run_homogenization_suite(id, dx, c_cfl)
                .map_err(|e| classify("homogenization sweep", e))?;
            finish_series(series, &merged.out)
        }
        Command::Effham {
            example,
            p,
            n,
            sigma,
            halvings,
        } => {
            let id = merged.example(example.as_ref())?;
            let mut opts = EffHamOptions::for_example(id);
            if let Some(p) = p.or(merged.json.p) {
                opts.p = p;
            }
            if let Some(n) = n.or(merged.json.n) {
                if !(n >= 2 && n.is_power_of_two()) {
                    return Err(CliError::config(
                        "n",
                        format!("mesh resolution must be a power of two >= 2, got {n}"),
                    ));
                }
                opts.n = n;
            }
            if let Some(s) = sigma.or(merged.json.sigma) {
                if !(s.is_finite() && s > 0.0) {
                    return Err(CliError::config("sigma", format!("need sigma > 0, got {s}")));
                }
                opts.surface_sigma = s;
            }
            if let Some(k) = halvings.or(merged.json.halvings) {
                if k < 3 {
                    return Err(CliError::config(
                        "halvings",
                        format!("need at least 3 Cauchy pairs to fit a rate, got {k}"),
                    ));
                }
                opts.halvings = k;
            }
            let report = experiments::run_effham_suite(id, &opts)
                .map_err(|e| classify("effective-Hamiltonian sweep", e))?;
            finish_report(report, &merged.out)
        }
        Command::Sharpness => {
            let report = experiments::run_sharpness_suite();
            let failed = report.assertions.iter().filter(|a| !a.passed).count();
            for a in &report.assertions {
                println!(
                    "{} {}: {}",
                    if a.passed { "PASS" } else { "FAIL" },
                    a.name,
                    a.detail
                );
            }
            finish_report(report, &merged.out)?;
            if failed > 0 {
                return Err(CliError::Numerical {
                    stage: "sharpness checks",
                    message: format!("{failed} of 4 assertions failed"),
                });
            }
            Ok(())
        }
        Command::Solve {
            grid,
            eps,
            t,
            domain,
            window,
        } => {
            let id = merged.example(grid.example.as_ref())?;
            let dx = merged.dx(grid.dx)?;
            let c_cfl = merged.c_cfl(grid.c_cfl)?;
            let eps = eps.or(merged.json.eps).ok_or_else(|| {
                CliError::config("eps", "required for single solves (try 0.01)")
            })?;
            let solve = SolveOpts {
                eps,
                t: t.or(merged.json.t),
                domain: domain.or(merged.json.domain),
                window: window.or(merged.json.window),
            };
            run_single_solve(id, dx, c_cfl, &solve, &merged.out)
        }
        Command::Exact { grid, t, window } => {
            let id = merged.example(grid.example.as_ref())?;
            let dx = merged.dx(grid.dx)?;
            run_exact(
                id,
                dx,
                t.or(merged.json.t),
                window.or(merged.json.window),
                &merged.out,
            )
        }
    }
}

fn print_series_summaries(series: &[RateSeries], out: &Path) {
    for s in series {
        println!(
            "{}: slope {:.4} (fit residual {:.3}), {} points -> {}",
            s.name,
            s.fitted_slope,
            s.fit_residual,
            s.points.len(),
            out.join(format!("{}.csv", s.name)).display(),
        );
    }
}

fn finish_series(series: Vec<RateSeries>, out: &Path) -> Result<(), CliError> {
    finish_report(ExperimentReport::from_series(series), out)
}

fn finish_report(mut report: ExperimentReport, out: &Path) -> Result<(), CliError> {
    let paths = experiments::write_outputs(&report, out)
        .map_err(|e| classify("writing outputs", e))?;
    report.csv_paths = paths;
    print_series_summaries(&report.series, out);
    if let Some(surface) = &report.surface {
        println!(
            "{}: {} grid points at sigma = {}, h = {} -> {}",
            surface.name,
            surface.points.len(),
            surface.sigma,
            surface.h,
            out.join(format!("{}.csv", surface.name)).display(),
        );
    }
    Ok(())
}

/// The catalog problem behind `id`, for single solves and reference dumps.
fn catalog_problem(id: ExampleId) -> Result<Vec<(String, experiments::CauchyProblem)>, CliError> {
    match id.suite() {
        SuiteKind::Vanishing => Ok(experiments::vanishing_catalog(id)
            .expect("vanishing id")
            .into_iter()
            .map(|(name, problem, _)| (name, problem))
            .collect()),
        SuiteKind::Homogenization => {
            let p = experiments::homogenization_catalog(id).expect("homogenization id");
            Ok(vec![(format!("homog_{id}"), p)])
        }
        SuiteKind::EffectiveHamiltonian => Err(CliError::config(
            "example",
            format!("{id} is a torus problem; use the effham subcommand"),
        )),
    }
}

fn write_profile(
    path: &Path,
    rows: impl Iterator<Item = (f64, f64)>,
) -> Result<(), CliError> {
    let mut text = String::from("x,u\n");
    for (x, u) in rows {
        text.push_str(&format!("{x:.16e},{u:.16e}\n"));
    }
    std::fs::write(path, text).map_err(|e| CliError::Numerical {
        stage: "writing outputs",
        message: format!("{}: {e}", path.display()),
    })
}

struct SolveOpts {
    eps: f64,
    t: Option<f64>,
    domain: Option<[f64; 2]>,
    window: Option<[f64; 2]>,
}

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Numerical {
        stage: "writing outputs",
        message: format!("{}: {e}", out.display()),
    })
}

fn run_single_solve(
    id: ExampleId,
    dx: f64,
    c_cfl: f64,
    opts: &SolveOpts,
    out: &Path,
) -> Result<(), CliError> {
    ensure_out_dir(out)?;
    let eps = opts.eps;
    for (name, mut problem) in catalog_problem(id)? {
        if let Some([a, b]) = opts.domain {
            problem.domain = (a, b);
        }
        let t_final = opts.t.unwrap_or(problem.t_final);
        let grid = Grid1D::with_spacing(problem.domain.0, problem.domain.1, dx)
            .map_err(|e| classify("grid construction", e.into()))?;
        let cfg = FDConfig::new(eps, t_final, grid.dx(), problem.flux, problem.gradient_radius)
            .and_then(|c| c.with_cfl_factor(c_cfl))
            .map_err(|e| classify("finite-difference setup", e.into()))?;
        let datum = problem.datum;
        let initial = grid.nodes().map(|x| datum.eval(x)).collect();
        let u = fd_solver::solve_from_values_tapered(
            grid,
            initial,
            problem.flux,
            problem.potential,
            problem.taper,
            &cfg,
        )
        .map_err(|e| classify("finite-difference solve", e.into()))?;
        let [w0, w1] = opts
            .window
            .unwrap_or([problem.domain.0, problem.domain.1]);
        let path = out.join(format!("solve_{name}_eps{eps:e}.csv"));
        let rows = u
            .grid
            .nodes()
            .zip(u.values.iter().copied())
            .filter(|&(x, _)| (w0 - 1e-14..=w1 + 1e-14).contains(&x));
        write_profile(&path, rows)?;
        println!(
            "{name}: eps = {eps:e}, t = {t_final}, {} nodes -> {}",
            u.values.len(),
            path.display()
        );
    }
    Ok(())
}

fn run_exact(
    id: ExampleId,
    dx: f64,
    t: Option<f64>,
    window: Option<[f64; 2]>,
    out: &Path,
) -> Result<(), CliError> {
    ensure_out_dir(out)?;
    if id == ExampleId::Ex61 {
        let value = fem_effham::exact_linear_effham([3.0, 1.0], &QuadratureConfig::default())
            .map_err(|e| classify("quadrature reference", e.into()))?;
        let path = out.join("exact_6.1.csv");
        std::fs::write(&path, format!("value\n{value:.16e}\n")).map_err(|e| {
            CliError::Numerical {
                stage: "writing outputs",
                message: format!("{}: {e}", path.display()),
            }
        })?;
        println!("exact_6.1: {value:.16e} -> {}", path.display());
        return Ok(());
    }
    if id.suite() != SuiteKind::Vanishing {
        return Err(CliError::config(
            "example",
            format!("{id} has no closed-form reference; available: 5.1-5.5 and 6.1"),
        ));
    }
    let quad = QuadratureConfig::default();
    for (name, problem, reference) in experiments::vanishing_catalog(id).expect("vanishing id") {
        let t_final = t.unwrap_or(problem.t_final);
        let (lo, hi) = window.map_or(problem.window, |[a, b]| (a, b));
        let grid = Grid1D::with_spacing(lo, hi, dx)
            .map_err(|e| classify("grid construction", e.into()))?;
        let mut rows = Vec::with_capacity(grid.n_nodes());
        for x in grid.nodes() {
            let value = reference
                .evaluate(&problem, x, t_final, &quad)
                .map_err(|e| classify("quadrature reference", e))?;
            rows.push((x, value));
        }
        let path = out.join(format!("exact_{name}.csv"));
        write_profile(&path, rows.into_iter())?;
        println!("exact_{name}: t = {t_final} -> {}", path.display());
    }
    Ok(())
}
