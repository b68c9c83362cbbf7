//! Command-line driver: run simulations from a config file, execute the
//! standalone verification suites, or compare a run's contact time against
//! the a priori bound from its initial data.

use clap::Parser;
use fsibeam::assembly::PhysicalParams;
use fsibeam::basis::BasisSet;
use fsibeam::diagnostics::{
    compatibility_residuals, contact_assessment, ledger_rows_resumable, norm_budget,
    LedgerTracker,
};
use fsibeam::error::{IntegratorError, IoError};
use fsibeam::integrator::{run, StateVector, Trajectory};
use fsibeam::io::{
    apply_override, build_problem, exit_code_for, initial_state, load_config, read_checkpoint,
    write_checkpoint, write_snapshot, write_timeseries, SimConfig, EXIT_CONFIG, EXIT_OK,
    EXIT_PICARD, TIMESERIES_HEADER,
};
use fsibeam::quadrature::QuadratureGrid;
use fsibeam::verify::{run_suite, SUITE_NAMES};
use std::fmt::Write as _;
use std::process::ExitCode;

const CONFIG_KEY_HELP: &str = "\
Config keys (JSON document; every key is also a --set target):
  length        channel period L                     rho_f   fluid density
  rho_s         interface linear density             mu      dynamic viscosity
  beta          interface tension coefficient        alpha   flexural rigidity
  n_pairs       velocity basis pairs N               n_x,n_z quadrature nodes (0 = auto)
  oversampling  multiplier on automatic quadrature resolutions
  dt, t_end     step size and final time
  picard_tol, picard_max_iter   fixed-point controls per step
  h_floor       numerical validity floor for the height
  contact_floor physical stopping height (0 disables)
  adaptive_dt   retry failed steps at half the step size
  initial       {\"kind\": flat|cosine|descending|random_modes|state_file, ...}
  output_dt     ledger cadence; multiple of dt, divides t_end
  timeseries_path, snapshot_path, checkpoint_path    output files (optional)
  snapshot_n_x, snapshot_n_z    uniform export grid cells

Exit codes: 0 success, 1 verification failure or violated contact bound,
2 contact-terminated run, 3 fixed-point divergence, 4 configuration error.";

#[derive(Parser, Debug)]
#[command(
    name = "fsibeam",
    about = "Spectral simulator for an elastic interface coupled to incompressible channel flow",
    after_long_help = CONFIG_KEY_HELP
)]
struct Cli {
    /// Path to the JSON configuration.
    #[arg(long)]
    config: Option<String>,

    /// Override one config key, e.g. --set dt=5e-4 or --set initial.mode=2.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Run a verification suite instead of a simulation
    /// (geometry, basis, assembly, divergence, energy, or all).
    #[arg(long, value_name = "SUITE")]
    verify: Option<String>,

    /// Compare the run's first contact time against the bound implied by
    /// its initial data.
    #[arg(long)]
    contact_study: bool,

    /// Resume from a checkpoint written by an earlier run of this config.
    #[arg(long, value_name = "CHECKPOINT")]
    resume: Option<String>,

    /// Suppress everything except errors.
    #[arg(long)]
    quiet: bool,

    /// Worker threads for operator assembly (0 = library default).
    #[arg(long, default_value_t = 0)]
    threads: usize,

    /// Flip one sign inside each verification suite's reference computation
    /// (self-test that the suites can fail).
    #[arg(long, hide = true)]
    inject_sign_flip: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) =
            rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()
        {
            eprintln!("fsibeam: could not size the thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    let code = if let Some(suite) = cli.verify.as_deref() {
        cmd_verify(suite, cli.inject_sign_flip, cli.quiet)
    } else {
        match load_and_override(&cli) {
            Err(e) => {
                eprintln!("fsibeam: {e}");
                EXIT_CONFIG
            }
            Ok(config) => {
                if cli.contact_study {
                    cmd_contact_study(&config, cli.quiet)
                } else {
                    cmd_run(&config, cli.resume.as_deref(), cli.quiet)
                }
            }
        }
    };
    ExitCode::from(code as u8)
}

fn load_and_override(cli: &Cli) -> Result<SimConfig, IoError> {
    let path = cli.config.as_deref().ok_or_else(|| {
        IoError::SchemaError("--config is required for runs and contact studies".to_string())
    })?;
    let mut config = load_config(path)?;
    for setting in &cli.set {
        apply_override(&mut config, setting)?;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_verify(suite: &str, mutate: bool, quiet: bool) -> i32 {
    let names: Vec<&str> =
        if suite == "all" { SUITE_NAMES.to_vec() } else { vec![suite] };
    let mut all_passed = true;
    for name in names {
        match run_suite(name, mutate) {
            Err(e) => {
                eprintln!("fsibeam: {e}");
                return EXIT_CONFIG;
            }
            Ok(report) => {
                all_passed &= report.passed;
                if !quiet || !report.passed {
                    print!("{}", report.render());
                }
            }
        }
    }
    if all_passed {
        EXIT_OK
    } else {
        1
    }
}

struct Prepared {
    basis: BasisSet,
    grid: QuadratureGrid,
    params: PhysicalParams,
    state: StateVector,
    tracker: LedgerTracker,
    resumed: bool,
}

fn prepare(config: &SimConfig, resume: Option<&str>) -> Result<Prepared, IoError> {
    let (basis, grid) = build_problem(config)?;
    let params = config.params();
    let (state, tracker, resumed) = match resume {
        Some(path) => {
            let (state, tracker) = read_checkpoint(path, config)?;
            (state, tracker, true)
        }
        None => (initial_state(config, &basis)?, LedgerTracker::new(), false),
    };
    Ok(Prepared { basis, grid, params, state, tracker, resumed })
}

fn integrator_exit(e: &IntegratorError) -> i32 {
    match e {
        IntegratorError::PicardDivergence { .. } => EXIT_PICARD,
        IntegratorError::ContactReached { .. } => fsibeam::io::EXIT_CONTACT,
        _ => EXIT_CONFIG,
    }
}

fn cmd_run(config: &SimConfig, resume: Option<&str>, quiet: bool) -> i32 {
    let mut prep = match prepare(config, resume) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("fsibeam: {e}");
            return EXIT_CONFIG;
        }
    };
    if prep.state.t >= config.t_end {
        if !quiet {
            println!("nothing to do: checkpoint already at t = {}", prep.state.t);
        }
        return EXIT_OK;
    }
    let trajectory =
        match run(&prep.basis, &prep.grid, &prep.params, &config.run_config(), prep.state) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("fsibeam: {e}");
                return integrator_exit(&e);
            }
        };
    let rows = ledger_rows_resumable(
        &prep.basis,
        &prep.grid,
        &prep.params,
        &trajectory,
        &mut prep.tracker,
    );

    if let Some(path) = &config.timeseries_path {
        let result = if prep.resumed && std::path::Path::new(path).exists() {
            append_timeseries(path, &rows[1..])
        } else {
            write_timeseries(path, &rows)
        };
        if let Err(e) = result {
            eprintln!("fsibeam: writing {path}: {e}");
            return EXIT_CONFIG;
        }
    }
    let last = trajectory.snapshots.last().expect("trajectory has snapshots");
    if let Some(path) = &config.snapshot_path {
        if let Err(e) =
            write_snapshot(path, &prep.basis, last, config.snapshot_n_x, config.snapshot_n_z)
        {
            eprintln!("fsibeam: writing {path}: {e}");
            return EXIT_CONFIG;
        }
    }
    if let Some(path) = &config.checkpoint_path {
        if let Err(e) = write_checkpoint(path, config, last, &prep.tracker) {
            eprintln!("fsibeam: writing {path}: {e}");
            return EXIT_CONFIG;
        }
    }
    if !quiet {
        print!("{}", run_summary(config, &prep.basis, &prep.grid, &trajectory, &rows));
    }
    exit_code_for(&trajectory.termination)
}

fn run_summary(
    config: &SimConfig,
    basis: &BasisSet,
    grid: &QuadratureGrid,
    trajectory: &Trajectory,
    rows: &[fsibeam::diagnostics::EnergyLedger],
) -> String {
    let mut out = String::new();
    let last = rows.last().expect("rows");
    let _ = writeln!(
        out,
        "termination: {:?} after {} steps, t = {}",
        trajectory.termination,
        trajectory.reports.len(),
        trajectory.snapshots.last().map(|s| s.t).unwrap_or(0.0)
    );
    let _ = writeln!(
        out,
        "energy: total {:.6e}, dissipated {:.6e}, balance residual {:.3e}",
        last.total_energy(),
        last.dissipation_cum,
        rows.iter().map(|r| r.balance_residual.abs()).fold(0.0f64, f64::max)
    );
    let worst_compat = trajectory
        .snapshots
        .iter()
        .map(|s| compatibility_residuals(basis, grid, s))
        .fold((0.0f64, 0.0f64, 0.0f64, 0.0f64), |acc, r| {
            (
                acc.0.max(r.mean_dt_g),
                acc.1.max(r.kinematic),
                acc.2.max(r.divergence),
                acc.3.max(r.no_slip),
            )
        });
    let _ = writeln!(
        out,
        "compatibility: volume {:.2e}, kinematic {:.2e}, divergence {:.2e}, no-slip {:.2e}",
        worst_compat.0, worst_compat.1, worst_compat.2, worst_compat.3
    );
    let budget = norm_budget(basis, grid, trajectory, 1e12);
    let _ = writeln!(
        out,
        "norms: rate {:.3e}, rate gradient {:.3e}, interface accel {:.3e}, min height {:.4}{}",
        budget.dt_u_linf_l2,
        budget.grad_dt_u_l2l2,
        budget.dtt_g_linf_l2,
        budget.min_height,
        if budget.blown_up { " [BLOWN UP]" } else { "" }
    );
    for name in &budget.unmonitored {
        let _ = writeln!(out, "not monitored: {name}");
    }
    let _ = writeln!(out, "config hash: {}", config.config_hash());
    out
}

fn append_timeseries(
    path: &str,
    rows: &[fsibeam::diagnostics::EnergyLedger],
) -> Result<(), IoError> {
    let mut text = std::fs::read_to_string(path)?;
    if !text.starts_with(TIMESERIES_HEADER) {
        return Err(IoError::SchemaError(format!(
            "{path}: existing file is not a ledger timeseries"
        )));
    }
    if !text.ends_with('\n') {
        text.push('\n');
    }
    for r in rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            r.t, r.e_kinetic_fluid, r.e_kinetic_beam, r.e_elastic, r.dissipation_cum,
            r.balance_residual
        );
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_contact_study(config: &SimConfig, quiet: bool) -> i32 {
    let prep = match prepare(config, None) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("fsibeam: {e}");
            return EXIT_CONFIG;
        }
    };
    let floor = if config.contact_floor > 0.0 { config.contact_floor } else { config.h_floor };
    let trajectory =
        match run(&prep.basis, &prep.grid, &prep.params, &config.run_config(), prep.state) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("fsibeam: {e}");
                return integrator_exit(&e);
            }
        };
    let assess = contact_assessment(&prep.basis, &prep.grid, &trajectory, floor, 0.05);
    if !quiet {
        println!("initial gap delta = {:.6}", assess.delta);
        println!("initial data size = {:.6}", assess.c0);
        println!("contact-time lower bound = {:.6}", assess.bound);
        match assess.crossing {
            Some((t, h)) => println!("first crossing of {floor:.4}: t = {t:.6} (height {h:.6})"),
            None => println!("no contact within t_end = {}", config.t_end),
        }
        println!("bound {}", if assess.honored { "honored" } else { "VIOLATED" });
    }
    if assess.honored {
        EXIT_OK
    } else {
        1
    }
}
