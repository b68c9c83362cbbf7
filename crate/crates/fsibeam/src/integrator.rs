//! Time integration of the coupled semi-discrete system.
//!
//! One step of the implicit midpoint rule solves the nonlinear midpoint
//! equations by fixed-point sweeps: geometry, operators, and convection are
//! frozen at the current midpoint iterate, the linear system for the end
//! state is solved with the beam stiffness kept implicit, and the sweep
//! repeats until the full nonlinear residual is below tolerance.

use crate::assembly::{
    assemble_differentiated_tensors, assemble_first_order, assemble_mass, beam_row,
    beam_velocity, convection_apply, differentiated_convection_apply, geometry_from_state,
    transport_tables, GalerkinOperators, PhysicalParams, TransportLevel,
};
use crate::basis::BasisSet;
use crate::error::{AssemblyError, IntegratorError};
use crate::quadrature::QuadratureGrid;
use nalgebra::{DMatrix, DVector, LU};
use serde::{Deserialize, Serialize};

/// Coupled state at one instant: velocity/deformation-rate coefficients and
/// the interface deformation. The deformation velocity coefficients are the
/// odd-pair entries of `alpha` by construction; `g_mean` never changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub t: f64,
    pub alpha: Vec<f64>,
    pub g_mean: f64,
    pub g_coeffs: Vec<f64>,
}

impl StateVector {
    pub fn beam_velocity(&self, basis: &BasisSet) -> Vec<f64> {
        beam_velocity(basis, &self.alpha)
    }
}

/// Per-step record of solver effort and conservation quality.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepReport {
    pub dt: f64,
    /// Linear solves performed by the fixed-point iteration.
    pub picard_iterations: usize,
    /// Converged nonlinear residual (scaled sup norm).
    pub picard_residual: f64,
    /// Minimum interface height at the end state.
    pub min_height: f64,
    /// Viscous dissipation of this step: dt times the midpoint gradient form.
    pub dissipation: f64,
    /// Energy balance increment of this step:
    /// E(end) - E(start) + dissipation.
    pub energy_residual: f64,
}

/// Time-stepping scheme. The midpoint rule is the only member; the enum keeps
/// the signature stable if splitting variants are added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Scheme {
    #[default]
    ImplicitMidpoint,
}

/// Step controls shared by `step` and `run`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepControls {
    pub scheme: Scheme,
    /// Numerical validity floor for the height (assembly guard).
    pub h_floor: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
}

impl Default for StepControls {
    fn default() -> Self {
        Self {
            scheme: Scheme::ImplicitMidpoint,
            h_floor: crate::geometry::DEFAULT_H_FLOOR,
            picard_tol: 1e-10,
            picard_max_iter: 25,
        }
    }
}

/// Full run schedule on top of the step controls.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RunConfig {
    pub dt: f64,
    pub t_end: f64,
    pub controls: StepControls,
    /// Physical contact threshold: the run stops and reports when the
    /// minimum height reaches it. Non-positive disables the check.
    pub contact_floor: f64,
    /// Keep a state snapshot every this many steps (the initial state is
    /// always kept; the final state is appended regardless of cadence).
    pub snapshot_every: usize,
    /// Retry a failed step at half the step size, repeatedly, down to
    /// `dt_floor`. The report carries the step size actually used.
    pub allow_dt_halving: bool,
    pub dt_floor: f64,
}

impl RunConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            controls: StepControls::default(),
            contact_floor: 0.0,
            snapshot_every: 1,
            allow_dt_halving: false,
            dt_floor: 0.0,
        }
    }
}

/// Why the run loop returned.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum Termination {
    Completed,
    /// First step whose end state (or midpoint geometry) reached the
    /// contact threshold; the trajectory ends at that state.
    Contact { step: usize, t: f64, min_height: f64 },
    /// Fixed-point failure that halving (if enabled) could not rescue;
    /// the trajectory ends at the last good state.
    PicardFailure { step: usize, t: f64, residual: f64 },
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<StateVector>,
    pub reports: Vec<StepReport>,
    pub termination: Termination,
}

struct SweepWorkspace {
    ops: GalerkinOperators,
    residual: f64,
    conv_mid: Vec<f64>,
    alpha_mid: DVector<f64>,
}

fn total_energy(mass: &DMatrix<f64>, elastic: &DMatrix<f64>, alpha: &DVector<f64>, g: &[f64]) -> f64 {
    let gv = DVector::from_column_slice(g);
    0.5 * alpha.dot(&(mass * alpha)) + 0.5 * gv.dot(&(elastic * &gv))
}

/// Lifted elastic-times-velocity-projection matrix: row 2*bk, column 2*bj
/// carries elastic[(bk, bj)]. Scaled by dt/4 it is the implicit part of the
/// interface update inside the midpoint solve.
fn lifted_elastic(elastic: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let nb = elastic.nrows();
    let mut out = DMatrix::zeros(n, n);
    for bk in 0..nb {
        for bj in 0..nb {
            out[(beam_row(bk), beam_row(bj))] = elastic[(bk, bj)];
        }
    }
    out
}

fn sweep(
    basis: &BasisSet,
    grid: &QuadratureGrid,
    params: &PhysicalParams,
    controls: &StepControls,
    dt: f64,
    state: &StateVector,
    candidate: &DVector<f64>,
    alpha_n: &DVector<f64>,
) -> Result<SweepWorkspace, AssemblyError> {
    let alpha_mid = (alpha_n + candidate) * 0.5;
    let v_mid = beam_velocity(basis, alpha_mid.as_slice());
    let g_mid: Vec<f64> = state
        .g_coeffs
        .iter()
        .zip(&v_mid)
        .map(|(&gi, &vi)| gi + 0.5 * dt * vi)
        .collect();
    let geom = geometry_from_state(basis, grid, state.g_mean, &g_mid, &v_mid, None);
    let trans = transport_tables(basis, grid, &geom, TransportLevel::Evolution);
    let ops = assemble_first_order(basis, grid, &geom, &trans, params, controls.h_floor, false)?;
    let conv_mid = convection_apply(grid, &geom, &trans, alpha_mid.as_slice(), params);

    // Nonlinear midpoint residual of the candidate end state.
    let mut r = &ops.mass * ((candidate - alpha_n) / dt) + ops.linear() * &alpha_mid
        + ops.lift_elastic(&g_mid);
    for (k, c) in conv_mid.iter().enumerate() {
        r[k] += c;
    }
    let denom = (&ops.mass * ((candidate - alpha_n) / dt))
        .amax()
        .max(conv_mid.iter().fold(0.0f64, |m, c| m.max(c.abs())))
        .max(ops.lift_elastic(&g_mid).amax())
        .max(1.0);
    let residual = r.amax() / denom;
    Ok(SweepWorkspace { ops, residual, conv_mid, alpha_mid })
}

/// One implicit midpoint step. On success the returned state satisfies the
/// nonlinear midpoint equations to the configured tolerance.
pub fn step(
    basis: &BasisSet,
    grid: &QuadratureGrid,
    params: &PhysicalParams,
    controls: &StepControls,
    state: &StateVector,
    dt: f64,
) -> Result<(StateVector, StepReport), IntegratorError> {
    let Scheme::ImplicitMidpoint = controls.scheme;
    let n = basis.n_pairs;
    let alpha_n = DVector::from_column_slice(&state.alpha);
    let mut candidate = alpha_n.clone();
    let mut iterations = 0usize;
    let mut residual;

    // Start-state energy from the step's own endpoint mass.
    let v_n = state.beam_velocity(basis);
    let geom_n = geometry_from_state(basis, grid, state.g_mean, &state.g_coeffs, &v_n, None);
    let mass_n = assemble_mass(basis, grid, &geom_n, params, controls.h_floor)
        .map_err(|e| promote_contact(e, state.t, controls.h_floor))?;

    let mut ws = sweep(basis, grid, params, controls, dt, state, &candidate, &alpha_n)
        .map_err(|e| promote_contact(e, state.t, controls.h_floor))?;
    residual = ws.residual;
    loop {
        if residual.is_finite() && residual <= controls.picard_tol {
            break;
        }
        if iterations >= controls.picard_max_iter || !residual.is_finite() {
            return Err(IntegratorError::PicardDivergence {
                t: state.t,
                residual,
                iters: iterations,
            });
        }
        // Frozen-coefficient midpoint solve with the beam stiffness implicit.
        let e_hat = lifted_elastic(&ws.ops.elastic, n);
        let linear = ws.ops.linear();
        let lhs = &ws.ops.mass / dt + &linear * 0.5 + &e_hat * (dt / 4.0);
        let mut rhs = (&ws.ops.mass / dt - &linear * 0.5 - &e_hat * (dt / 4.0)) * &alpha_n
            - ws.ops.lift_elastic(&state.g_coeffs);
        for (k, c) in ws.conv_mid.iter().enumerate() {
            rhs[k] -= c;
        }
        let lu = LU::new(lhs);
        candidate = lu.solve(&rhs).ok_or(AssemblyError::SingularMass)?;
        iterations += 1;
        ws = sweep(basis, grid, params, controls, dt, state, &candidate, &alpha_n)
            .map_err(|e| promote_contact(e, state.t, controls.h_floor))?;
        residual = ws.residual;
    }

    // Commit: the interface advances with the converged midpoint velocity.
    let v_mid = beam_velocity(basis, ws.alpha_mid.as_slice());
    let g_next: Vec<f64> = state
        .g_coeffs
        .iter()
        .zip(&v_mid)
        .map(|(&gi, &vi)| gi + dt * vi)
        .collect();
    let next = StateVector {
        t: state.t + dt,
        alpha: candidate.as_slice().to_vec(),
        g_mean: state.g_mean,
        g_coeffs: g_next,
    };

    let v_next = next.beam_velocity(basis);
    let geom_next = geometry_from_state(basis, grid, next.g_mean, &next.g_coeffs, &v_next, None);
    let mass_next = assemble_mass(basis, grid, &geom_next, params, controls.h_floor)
        .map_err(|e| promote_contact(e, next.t, controls.h_floor))?;
    let alpha_next = DVector::from_column_slice(&next.alpha);
    let e_start = total_energy(&mass_n, &ws.ops.elastic, &alpha_n, &state.g_coeffs);
    let e_end = total_energy(&mass_next, &ws.ops.elastic, &alpha_next, &next.g_coeffs);
    let dissipation = dt * ws.alpha_mid.dot(&(&ws.ops.visc * &ws.alpha_mid));
    let report = StepReport {
        dt,
        picard_iterations: iterations,
        picard_residual: residual,
        min_height: geom_next.min_h,
        dissipation,
        energy_residual: e_end - e_start + dissipation,
    };
    Ok((next, report))
}

/// A height underflow during a step is contact, not a quadrature defect.
fn promote_contact(e: AssemblyError, t: f64, floor: f64) -> IntegratorError {
    match e {
        AssemblyError::QuadratureUnderflow { min_h } => {
            IntegratorError::ContactReached { t, min_h, floor }
        }
        other => IntegratorError::Assembly(other),
    }
}

/// Marches the state to `t_end`, collecting snapshots and per-step reports.
/// Contact and unrecoverable fixed-point failures end the run early with the
/// matching termination and the trajectory up to the last good state.
pub fn run(
    basis: &BasisSet,
    grid: &QuadratureGrid,
    params: &PhysicalParams,
    config: &RunConfig,
    initial: StateVector,
) -> Result<Trajectory, IntegratorError> {
    if !(config.dt > 0.0) || !(config.t_end > initial.t) {
        return Err(IntegratorError::Assembly(AssemblyError::InvalidResolution(format!(
            "invalid schedule: dt={}, t_end={}, t0={}",
            config.dt, config.t_end, initial.t
        ))));
    }
    let mut snapshots = vec![initial.clone()];
    let mut reports = Vec::new();
    let mut state = initial;
    let mut dt = config.dt;
    let cadence = config.snapshot_every.max(1);
    let mut step_index = 0usize;
    let eps = 1e-12 * config.t_end.abs().max(1.0);

    while state.t < config.t_end - eps {
        let dt_step = dt.min(config.t_end - state.t);
        match step(basis, grid, params, &config.controls, &state, dt_step) {
            Ok((next, report)) => {
                state = next;
                step_index += 1;
                reports.push(report);
                if step_index % cadence == 0 {
                    snapshots.push(state.clone());
                }
                if config.contact_floor > 0.0 && report.min_height <= config.contact_floor {
                    if step_index % cadence != 0 {
                        snapshots.push(state.clone());
                    }
                    return Ok(Trajectory {
                        snapshots,
                        reports,
                        termination: Termination::Contact {
                            step: step_index,
                            t: state.t,
                            min_height: report.min_height,
                        },
                    });
                }
            }
            Err(IntegratorError::ContactReached { t, min_h, .. }) => {
                if snapshots.last().map(|s| s.t) != Some(state.t) {
                    snapshots.push(state.clone());
                }
                return Ok(Trajectory {
                    snapshots,
                    reports,
                    termination: Termination::Contact {
                        step: step_index + 1,
                        t,
                        min_height: min_h,
                    },
                });
            }
            Err(IntegratorError::PicardDivergence { residual, .. }) => {
                if config.allow_dt_halving && dt * 0.5 >= config.dt_floor && dt * 0.5 > 0.0 {
                    dt *= 0.5;
                    continue;
                }
                if snapshots.last().map(|s| s.t) != Some(state.t) {
                    snapshots.push(state.clone());
                }
                return Ok(Trajectory {
                    snapshots,
                    reports,
                    termination: Termination::PicardFailure {
                        step: step_index + 1,
                        t: state.t,
                        residual,
                    },
                });
            }
            Err(other) => return Err(other),
        }
    }
    if snapshots.last().map(|s| s.t) != Some(state.t) {
        snapshots.push(state.clone());
    }
    Ok(Trajectory { snapshots, reports, termination: Termination::Completed })
}

/// Residual of the time-differentiated system over a window of at least
/// three consecutive snapshots at uniform spacing: time derivatives of the
/// coefficients come from central differences, geometry derivatives from the
/// state itself. Returns one scaled sup-norm residual per interior snapshot.
pub fn differentiated_residual(
    basis: &BasisSet,
    grid: &QuadratureGrid,
    params: &PhysicalParams,
    h_floor: f64,
    window: &[StateVector],
) -> Result<Vec<f64>, IntegratorError> {
    if window.len() < 3 {
        return Err(IntegratorError::InsufficientWindow { needed: 3, have: window.len() });
    }
    let dt0 = window[1].t - window[0].t;
    for pair in window.windows(2) {
        let d = pair[1].t - pair[0].t;
        if !(d > 0.0) || (d - dt0).abs() > 1e-9 * dt0.abs() {
            return Err(IntegratorError::InsufficientWindow { needed: 3, have: window.len() });
        }
    }

    let n = basis.n_pairs;
    let mut out = Vec::with_capacity(window.len() - 2);
    for w in window.windows(3) {
        let (prev, mid, next) = (&w[0], &w[1], &w[2]);
        let alpha_dot: Vec<f64> = (0..n)
            .map(|j| (next.alpha[j] - prev.alpha[j]) / (2.0 * dt0))
            .collect();
        let alpha_ddot: Vec<f64> = (0..n)
            .map(|j| (next.alpha[j] - 2.0 * mid.alpha[j] + prev.alpha[j]) / (dt0 * dt0))
            .collect();
        let v = mid.beam_velocity(basis);
        let a = beam_velocity(basis, &alpha_dot);
        let geom =
            geometry_from_state(basis, grid, mid.g_mean, &mid.g_coeffs, &v, Some(&a));
        let trans = transport_tables(basis, grid, &geom, TransportLevel::Differentiated);
        let tensors = assemble_differentiated_tensors(
            basis, grid, &geom, &trans, params, h_floor, false,
        )?;
        let av = DVector::from_column_slice(&mid.alpha);
        let adv = DVector::from_column_slice(&alpha_dot);
        let addv = DVector::from_column_slice(&alpha_ddot);
        let quad =
            differentiated_convection_apply(grid, &geom, &trans, &mid.alpha, &alpha_dot, params);
        let term_a = &tensors.a_mat * &addv;
        let term_b = &tensors.b_mat * &adv;
        let term_c = &tensors.c_mat * &av;
        let mut r = &term_a + &term_b + &term_c;
        for (k, q) in quad.iter().enumerate() {
            r[k] += q;
        }
        let scale = term_a
            .amax()
            .max(term_b.amax())
            .max(term_c.amax())
            .max(quad.iter().fold(0.0f64, |m, q| m.max(q.abs())));
        let norm = r.amax();
        out.push(if norm == 0.0 { 0.0 } else { norm / scale.max(f64::MIN_POSITIVE) });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::suggested_n_z;

    fn setup(n_pairs: usize) -> (BasisSet, QuadratureGrid) {
        let length = 1.0;
        let k_beam = n_pairs.div_ceil(2);
        let m_max = k_beam.div_ceil(2).max(2);
        let kappa_max = 2.0 * std::f64::consts::PI * m_max as f64 / length;
        let grid =
            QuadratureGrid::build(length, (8 * m_max).max(24), suggested_n_z(kappa_max)).unwrap();
        let set = BasisSet::build(length, n_pairs, &grid).unwrap();
        (set, grid)
    }

    fn flat_state(basis: &BasisSet) -> StateVector {
        StateVector {
            t: 0.0,
            alpha: vec![0.0; basis.n_pairs],
            g_mean: 1.0,
            g_coeffs: vec![0.0; basis.n_beam()],
        }
    }

    fn bent_state(basis: &BasisSet, amp: f64) -> StateVector {
        let mut g = vec![0.0; basis.n_beam()];
        g[1] = amp; // cos(2 pi x) deformation, zero initial velocity
        StateVector { t: 0.0, alpha: vec![0.0; basis.n_pairs], g_mean: 1.0, g_coeffs: g }
    }

    #[test]
    fn equilibrium_is_preserved_bitwise() {
        let (basis, grid) = setup(6);
        let params = PhysicalParams::default();
        let controls = StepControls::default();
        let mut state = flat_state(&basis);
        for _ in 0..100 {
            let (next, report) = step(&basis, &grid, &params, &controls, &state, 1e-2).unwrap();
            assert_eq!(report.picard_iterations, 0);
            assert_eq!(report.picard_residual, 0.0);
            assert_eq!(report.energy_residual, 0.0);
            assert!(next.alpha.iter().all(|&a| a == 0.0));
            assert!(next.g_coeffs.iter().all(|&g| g == 0.0));
            assert_eq!(next.g_mean, 1.0);
            state = next;
        }
    }

    /// Self-convergence at second order: errors against a fine-step
    /// reference shrink by about four per halving.
    #[test]
    fn midpoint_converges_at_second_order() {
        let (basis, grid) = setup(4);
        let params = PhysicalParams::default();
        let t_end = 0.05;
        let solve = |dt: f64| {
            let config = RunConfig { snapshot_every: usize::MAX - 1, ..RunConfig::new(dt, t_end) };
            let traj = run(&basis, &grid, &params, &config, bent_state(&basis, 0.1)).unwrap();
            assert_eq!(traj.termination, Termination::Completed);
            traj.snapshots.last().unwrap().clone()
        };
        let reference = solve(3.125e-4);
        let err = |dt: f64| {
            let got = solve(dt);
            got.alpha
                .iter()
                .zip(&reference.alpha)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        };
        let e1 = err(5e-3);
        let e2 = err(2.5e-3);
        let e3 = err(1.25e-3);
        let order12 = (e1 / e2).log2();
        let order23 = (e2 / e3).log2();
        assert!(
            order12 > 1.8 && order23 > 1.8,
            "orders {order12:.2}, {order23:.2} (errors {e1:.3e}, {e2:.3e}, {e3:.3e})"
        );
    }

    #[test]
    fn energy_residual_shrinks_quadratically() {
        let (basis, grid) = setup(4);
        let params = PhysicalParams::default();
        let t_end = 0.05;
        let worst = |dt: f64| {
            let config = RunConfig::new(dt, t_end);
            let traj = run(&basis, &grid, &params, &config, bent_state(&basis, 0.1)).unwrap();
            // Cumulative balance against the initial energy.
            let mut cum = 0.0f64;
            let mut worst = 0.0f64;
            for r in &traj.reports {
                cum += r.energy_residual;
                worst = worst.max(cum.abs());
            }
            worst
        };
        let b1 = worst(4e-3);
        let b2 = worst(2e-3);
        let b3 = worst(1e-3);
        assert!(b2 < b1 && b3 < b2, "balances {b1:.3e}, {b2:.3e}, {b3:.3e} must decrease");
        let order = (b1 / b3).log2() / 2.0;
        assert!(order > 1.7, "observed balance order {order:.2}");
    }

    #[test]
    fn contact_run_stops_at_threshold() {
        let (basis, grid) = setup(4);
        // Light damping and stiffness so the dip actually reaches the floor
        // before viscosity and the elastic restoring force eat the motion.
        let params =
            PhysicalParams { rho_f: 1.0, rho_s: 1.0, mu: 0.01, beta: 0.01, alpha: 1e-3 };
        let mut state = bent_state(&basis, -0.2);
        state.alpha[2] = -3.0; // strong downward cos-mode velocity
        let mut config = RunConfig::new(1e-3, 2.0);
        config.contact_floor = 0.35;
        let traj = run(&basis, &grid, &params, &config, state).unwrap();
        match traj.termination {
            Termination::Contact { t, min_height, .. } => {
                assert!(min_height <= 0.35);
                assert!(t > 0.0 && t < 2.0);
            }
            other => panic!("expected contact, got {other:?}"),
        }
        // Trajectory ends at the reported state.
        let last = traj.snapshots.last().unwrap();
        let expected_t = traj.reports.len() as f64 * 1e-3;
        assert!((last.t - expected_t).abs() <= 1e-12);
    }

    #[test]
    fn unreachable_tolerance_reports_picard_failure() {
        let (basis, grid) = setup(4);
        let params = PhysicalParams::default();
        let mut config = RunConfig::new(1e-3, 0.01);
        config.controls.picard_tol = 1e-30;
        config.controls.picard_max_iter = 3;
        config.allow_dt_halving = true;
        config.dt_floor = 5e-4;
        let traj = run(&basis, &grid, &params, &config, bent_state(&basis, 0.1)).unwrap();
        match traj.termination {
            Termination::PicardFailure { step, residual, .. } => {
                assert_eq!(step, 1);
                assert!(residual.is_finite());
            }
            other => panic!("expected fixed-point failure, got {other:?}"),
        }
        assert_eq!(traj.snapshots.len(), 1, "only the initial state is good");
    }

    #[test]
    fn differentiated_residual_window_contract() {
        let (basis, grid) = setup(4);
        let params = PhysicalParams::default();
        let h_floor = crate::geometry::DEFAULT_H_FLOOR;

        // Too-short window.
        let s = flat_state(&basis);
        let err = differentiated_residual(&basis, &grid, &params, h_floor, &[s.clone(), s.clone()]);
        assert!(matches!(err, Err(IntegratorError::InsufficientWindow { .. })));

        // Equilibrium: exactly zero.
        let mut w = Vec::new();
        for i in 0..3 {
            let mut si = flat_state(&basis);
            si.t = i as f64 * 1e-3;
            w.push(si);
        }
        let res = differentiated_residual(&basis, &grid, &params, h_floor, &w).unwrap();
        assert_eq!(res, vec![0.0]);

        // A genuine trajectory: the residual at a fixed physical time
        // shrinks under step refinement.
        let residual_at = |dt: f64| {
            let config = RunConfig::new(dt, 0.04);
            let traj =
                run(&basis, &grid, &params, &config, bent_state(&basis, 0.1)).unwrap();
            let tail = &traj.snapshots[traj.snapshots.len() - 3..];
            differentiated_residual(&basis, &grid, &params, h_floor, tail).unwrap()[0]
        };
        let r1 = residual_at(2e-3);
        let r2 = residual_at(1e-3);
        assert!(r2 < r1, "residuals {r1:.3e} -> {r2:.3e} must shrink");

        // Corrupting the middle snapshot inflates the residual.
        let config = RunConfig::new(1e-3, 0.04);
        let traj = run(&basis, &grid, &params, &config, bent_state(&basis, 0.1)).unwrap();
        let mut w: Vec<StateVector> = traj.snapshots[traj.snapshots.len() - 3..].to_vec();
        let clean = differentiated_residual(&basis, &grid, &params, h_floor, &w).unwrap()[0];
        for a in w[1].alpha.iter_mut() {
            *a += 1e-4;
        }
        let dirty = differentiated_residual(&basis, &grid, &params, h_floor, &w).unwrap()[0];
        assert!(
            dirty >= 10.0 * clean.max(f64::MIN_POSITIVE),
            "corruption must inflate the residual: {clean:.3e} -> {dirty:.3e}"
        );
    }
}
