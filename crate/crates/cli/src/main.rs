//! Command-line front end: certify a convergence rate for a configured
//! Lur'e loop, sweep the slope bound, reproduce the benchmark table, or
//! run the linear-analysis bounds and the time-domain verifier standalone.

mod config;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use zfrate_core::lti::{self, NyquistValue};
use zfrate_core::multiplier::MultiplierForm;
use zfrate_core::search::{certify, sweep_k, sweep_to_csv, CertifyOutcome, Query};
use zfrate_core::sdp::SolveOptions;
use zfrate_core::verify::{simulate, simulation_battery, Nonlinearity};

const EXIT_HELP: &str = "\
Exit codes (stable contract):
  0  success / certified and verified
  1  error (parse failure, unstable plant, invalid combination)
  2  no certificate exists for the requested class
  3  reproduction table finished with tolerance failures

Solver tolerance precedence: --tol flag > ZFRATE_SOLVER_TOL env > 1e-9.";

#[derive(Parser)]
#[command(
    name = "zfrate",
    about = "Convergence-rate certificates for discrete-time Lur'e systems \
             via FIR Zames-Falb multiplier search",
    after_help = EXIT_HELP,
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Worker threads for sweeps and batteries (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// SDP solver tolerance (overrides ZFRATE_SOLVER_TOL).
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Frequency grid for certificate oracles.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Write CSV output (sweep rows or verification trajectory) here.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Certify a rate for the configured plant, class and scheme.
    Certify {
        #[arg(long)]
        config: PathBuf,
    },
    /// Certify across a range of slope bounds K; emits CSV rows.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        k_min: f64,
        #[arg(long)]
        k_max: f64,
        #[arg(long)]
        steps: usize,
    },
    /// Reproduce the benchmark table over a corpus directory of configs.
    Table2 {
        /// Corpus directory holding *.cfg files.
        #[arg(long, default_value = "corpus")]
        config: PathBuf,
        /// Run the published multiplier steps instead of the reduced cap.
        #[arg(long)]
        full_scale: bool,
    },
    /// Print the linear-analysis quantities (spectral radius, Nyquist
    /// value, theoretical rate lower bound).
    LowerBound {
        #[arg(long)]
        config: PathBuf,
    },
    /// Certify and run the full time-domain verification battery.
    Verify {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let solver = SolveOptions {
        max_iter: 200,
        tol: resolve_solver_tol(cli.tol),
    };
    let code = match &cli.cmd {
        Cmd::Certify { config } => cmd_certify(config, solver, cli.grid, false, cli.csv.as_deref()),
        Cmd::Verify { config } => cmd_certify(config, solver, cli.grid, true, cli.csv.as_deref()),
        Cmd::Sweep {
            config,
            k_min,
            k_max,
            steps,
        } => cmd_sweep(config, solver, cli.grid, *k_min, *k_max, *steps, cli.csv.as_deref()),
        Cmd::Table2 { config, full_scale } => cmd_table2(config, *full_scale, solver),
        Cmd::LowerBound { config } => cmd_lower_bound(config),
    };
    match code {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn resolve_solver_tol(flag: Option<f64>) -> f64 {
    flag.or_else(|| {
        std::env::var("ZFRATE_SOLVER_TOL")
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .unwrap_or(1e-9)
}

type CmdResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn build_query(cfg: &config::RunConfig, solver: SolveOptions, grid: Option<usize>) -> CmdResult2 {
    let plant = cfg.plant()?;
    let q = Query {
        causality: cfg.class,
        framework: cfg.framework,
        odd: cfg.odd,
        n_b: cfg.n_b,
        n_f: cfg.n_f,
        scheme: cfg.effective_scheme(),
        bisect_tol: cfg.bisect_tol,
        solver,
        variant: None,
        oracle_grid: grid.unwrap_or(cfg.grid_n),
        ..Query::new(plant, cfg.k)
    };
    Ok(q)
}

type CmdResult2 = Result<Query, Box<dyn std::error::Error>>;

fn print_plant_summary(q: &Query) -> Result<(f64, NyquistValue), Box<dyn std::error::Error>> {
    let sys = lti::realize(&q.plant)?;
    let sr = lti::spectral_radius(&sys);
    println!(
        "plant: order {}, spectral radius {:.6}{}",
        sys.order(),
        sr,
        if sr < 1.0 { ", stable" } else { ", UNSTABLE" }
    );
    if !lti::is_minimal(&sys, 1e-8) {
        println!("warning: realization is not minimal; rate semantics need a minimal plant");
    }
    let kn = lti::nyquist_value(&sys, lti::DEFAULT_TAU_GRID)?;
    let lower = lti::linear_lower_bound(&sys, q.k, lti::DEFAULT_TAU_GRID)?;
    match kn {
        NyquistValue::Finite(v) => println!("K = {:.6}, Nyquist value K_N = {v:.6}", q.k),
        NyquistValue::Infinite => println!("K = {:.6}, Nyquist value K_N = infinite", q.k),
    }
    println!("linear lower bound rho = {lower:.6}");
    if !kn.exceeds(q.k) {
        println!("warning: K >= K_N, the lower bound is not meaningful here");
    }
    Ok((lower, kn))
}

fn cmd_certify(
    path: &std::path::Path,
    solver: SolveOptions,
    grid: Option<usize>,
    full_battery: bool,
    csv: Option<&std::path::Path>,
) -> CmdResult {
    let cfg = config::load(path)?;
    let q = build_query(&cfg, solver, grid)?;
    println!("config: {} ({})", cfg.name, path.display());
    print_plant_summary(&q)?;
    println!(
        "search: {} multiplier, {} framework, scheme {}, n_b = {}, n_f = {}, {}",
        q.causality,
        q.framework,
        q.scheme,
        q.n_b,
        q.n_f,
        if q.odd { "odd" } else { "non-odd" }
    );
    match certify(&q)? {
        CertifyOutcome::NoCertificate { rho_probed } => {
            println!(
                "no certificate: the {} class is insufficient at K = {:.6} (probed up to rho = {rho_probed:.6})",
                q.causality, q.k
            );
            Ok(ExitCode::from(2))
        }
        CertifyOutcome::Certified(cert) => {
            println!("certified rho = {:.6}", cert.rho_upper);
            let m = &cert.multiplier;
            for (i, h) in m.h_causal().iter().enumerate() {
                println!("  h[-{}] = {h:.6}", i + 1);
            }
            for (i, h) in m.h_anticausal().iter().enumerate() {
                println!("  h[+{}] = {h:.6}", i + 1);
            }
            if let MultiplierForm::Rho(r) = m.form() {
                println!("  (rho-form taps at rho = {r:.6})");
            }
            println!(
                "margins: LMI t = {:.3e}, l1 = {:.6}",
                cert.margin, cert.oracle.l1_margin
            );
            println!(
                "oracles: fdi max = {:.3e}, matrix fdi max = {:.3e}, grid {} -> {}",
                cert.oracle.fdi_max,
                cert.oracle.matrix_fdi_max,
                cert.oracle.grid_used,
                if cert.oracle.fdi_pass { "PASS" } else { "FAIL" }
            );
            if !cert.oracle.resolved_feasible || cert.oracle.infeasible_below == Some(false) {
                println!("warning: bisection bracket checks did not confirm cleanly");
            }
            if !cert.oracle.controllable {
                println!("warning: augmented pair failed the numerical controllability test");
            }

            let sys = lti::realize(&q.plant)?;
            let battery = simulation_battery(&sys, q.k, cert.rho_upper, 400)?;
            let passed = battery.cases.iter().filter(|c| c.ok).count();
            println!(
                "simulation battery: {passed}/{} decay checks -> {}",
                battery.cases.len(),
                if battery.all_ok { "PASS" } else { "FAIL" }
            );
            if full_battery {
                for case in &battery.cases {
                    println!(
                        "  {:<22} fitted rate {:.6} {}",
                        case.label,
                        case.fitted_rate,
                        if case.ok { "ok" } else { "FAIL" }
                    );
                }
            }
            if let Some(csv_path) = csv {
                let x0 = nalgebra_x0(sys.order());
                let traj = simulate(
                    &sys,
                    &Nonlinearity::Saturation {
                        slope: q.k,
                        level: 0.5,
                    },
                    &x0,
                    400,
                )?;
                std::fs::write(csv_path, traj.to_csv())?;
                println!("trajectory written to {}", csv_path.display());
            }
            println!("lower bound {:.6} <= certified {:.6}", cert.lower_bound, cert.rho_upper);
            if cert.oracle.fdi_pass && battery.all_ok {
                println!("result: certified and verified");
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("error: certificate failed verification oracles");
                Ok(ExitCode::from(1))
            }
        }
    }
}

fn nalgebra_x0(n: usize) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_fn(n, |i, _| 2.0 + i as f64)
}

fn cmd_sweep(
    path: &std::path::Path,
    solver: SolveOptions,
    grid: Option<usize>,
    k_min: f64,
    k_max: f64,
    steps: usize,
    csv: Option<&std::path::Path>,
) -> CmdResult {
    let cfg = config::load(path)?;
    let q = build_query(&cfg, solver, grid)?;
    let rows = sweep_k(&q, k_min, k_max, steps)?;
    for r in rows.iter().filter(|r| r.past_nyquist) {
        eprintln!(
            "warning: K = {:.6} exceeds the Nyquist value; rho_lower is not meaningful",
            r.k
        );
    }
    let out = sweep_to_csv(&rows);
    match csv {
        Some(p) => {
            std::fs::write(p, &out)?;
            println!("sweep written to {}", p.display());
        }
        None => print!("{out}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_table2(dir: &std::path::Path, full_scale: bool, solver: SolveOptions) -> CmdResult {
    let report = table::run(dir, full_scale, solver)?;
    print!("{}", table::render(&report));
    if report.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(3))
    }
}

fn cmd_lower_bound(path: &std::path::Path) -> CmdResult {
    let cfg = config::load(path)?;
    let q = build_query(&cfg, SolveOptions::default(), None)?;
    println!("config: {}", cfg.name);
    print_plant_summary(&q)?;
    Ok(ExitCode::SUCCESS)
}
