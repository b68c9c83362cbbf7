//! Acceptance gate: eleven numbered checks covering the geometry algebra,
//! the basis, operator assembly, conservation, contact, and consistency of
//! the differentiated system. Each check prints one pass/fail line; all
//! tolerances are pinned inline.

use fsibeam::assembly::{
    assemble_differentiated_tensors, assemble_first_order, beam_row, beam_velocity,
    differentiated_residual_at, geometry_from_state, initial_acceleration, transport_tables,
    PhysicalParams, TransportLevel,
};
use fsibeam::basis::{suggested_n_z, BasisSet};
use fsibeam::diagnostics::{compatibility_residuals, contact_assessment, ledger_rows};
use fsibeam::geometry::{transform_matrices, GeometrySample};
use fsibeam::integrator::{run, RunConfig, StateVector, Termination, Trajectory};
use fsibeam::io::{build_problem, initial_state, load_config, SimConfig};
use fsibeam::quadrature::QuadratureGrid;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

fn conclude(label: &str, body: impl FnOnce()) {
    let start = Instant::now();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(()) => println!("{label}: PASS ({:.1}s)", start.elapsed().as_secs_f64()),
        Err(e) => {
            println!("{label}: FAIL");
            resume_unwind(e);
        }
    }
}

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn load_bundled(name: &str) -> SimConfig {
    load_config(bundled(name)).unwrap_or_else(|e| panic!("loading {name}: {e}"))
}

fn run_bundled(config: &SimConfig) -> (BasisSet, QuadratureGrid, Trajectory) {
    let (basis, grid) = build_problem(config).expect("problem sizes");
    let state = initial_state(config, &basis).expect("initial data");
    let traj = run(&basis, &grid, &config.params(), &config.run_config(), state)
        .expect("run should terminate gracefully");
    (basis, grid, traj)
}

/// Shared refinement study on the bundled sine-perturbation configuration:
/// three step sizes with per-step snapshots, an 8x-finer reference, and a
/// doubled-resolution companion run.
struct Study {
    basis: BasisSet,
    grid: QuadratureGrid,
    params: PhysicalParams,
    /// (dt, trajectory) at dt = 4e-3, 2e-3, 1e-3, every step kept.
    runs: Vec<(f64, Trajectory)>,
    reference: Trajectory,
    final_dense: StateVector,
    dense_n_beam: usize,
    three_run_secs: f64,
}

static STUDY: OnceLock<Study> = OnceLock::new();

fn study() -> &'static Study {
    STUDY.get_or_init(|| {
        let config = load_bundled("sine.json");
        let (basis, grid) = build_problem(&config).expect("problem sizes");
        let params = config.params();
        let controls = config.run_config().controls;
        let sim = |dt: f64, snapshot_every: usize| {
            let rc = RunConfig {
                dt,
                t_end: config.t_end,
                controls: controls.clone(),
                contact_floor: 0.0,
                snapshot_every,
                allow_dt_halving: false,
                dt_floor: 0.0,
            };
            let state = initial_state(&config, &basis).expect("initial data");
            run(&basis, &grid, &params, &rc, state).expect("sine run")
        };
        let start = Instant::now();
        let runs: Vec<(f64, Trajectory)> =
            [4e-3, 2e-3, 1e-3].iter().map(|&dt| (dt, sim(dt, 1))).collect();
        let three_run_secs = start.elapsed().as_secs_f64();
        let reference = sim(1.25e-4, 64);

        let mut dense = config.clone();
        dense.n_pairs = 32;
        dense.n_x = 0;
        dense.n_z = 0;
        let (basis32, grid32) = build_problem(&dense).expect("doubled sizes");
        let state32 = initial_state(&dense, &basis32).expect("initial data");
        let traj32 = run(&basis32, &grid32, &dense.params(), &dense.run_config(), state32)
            .expect("doubled run");
        let final_dense = traj32.snapshots.last().expect("snapshots").clone();

        Study {
            dense_n_beam: basis32.n_beam(),
            basis,
            grid,
            params,
            runs,
            reference,
            final_dense,
            three_run_secs,
        }
    })
}

// ---------------------------------------------------------------------------
// 1. Pointwise transformation algebra plus the spectral volume-rate identity.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_geometry_identities() {
    conclude("criterion 01 (geometry identity suite)", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0x01);
        let eps = f64::EPSILON;
        for _ in 0..10_000 {
            let s = GeometrySample {
                h: rng.gen_range(0.2..3.0),
                dx_h: rng.gen_range(-2.0..2.0),
                dxx_h: rng.gen_range(-4.0..4.0),
                dt_h: rng.gen_range(-2.0..2.0),
                dtdx_h: rng.gen_range(-3.0..3.0),
                z: rng.gen_range(0.0..1.0),
            };
            let m = transform_matrices(&s, 1e-9).expect("valid height");
            let (b, bi, db, dbi, a) = (m.b, m.b_inv_t, m.dt_b, m.dt_b_inv_t, m.a);

            // det B = h.
            let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
            let det_scale = b[0][0].abs() * b[1][1].abs() + b[0][1].abs() * b[1][0].abs();
            assert!(
                (det - s.h).abs() <= 8.0 * eps * det_scale.max(1.0),
                "det B mismatch: {det} vs {}",
                s.h
            );

            // A = B^T B / h, B (B^{-T})^T = I, B^{-T} dt(B^T) = -dt(B^{-T}) B^T.
            for r in 0..2 {
                for c in 0..2 {
                    let btb =
                        (b[0][r] * b[0][c] + b[1][r] * b[1][c]) / s.h;
                    let scale =
                        (b[0][r].abs() * b[0][c].abs() + b[1][r].abs() * b[1][c].abs()) / s.h;
                    assert!(
                        (a[r][c] - btb).abs() <= 8.0 * eps * scale.max(1.0),
                        "metric entry ({r},{c}): {} vs {btb}",
                        a[r][c]
                    );

                    // (B^{-T})^T = B^{-1}, so this product is B B^{-1}.
                    let prod = b[r][0] * bi[c][0] + b[r][1] * bi[c][1];
                    let target = if r == c { 1.0 } else { 0.0 };
                    let scale = b[r][0].abs() * bi[c][0].abs() + b[r][1].abs() * bi[c][1].abs();
                    assert!(
                        (prod - target).abs() <= 8.0 * eps * scale.max(1.0),
                        "inverse product entry ({r},{c}): {prod}"
                    );

                    // Rows of B^{-T} times columns of dt(B^T): dt(B^T)[i][j]
                    // = db[j][i].
                    let lhs = bi[r][0] * db[c][0] + bi[r][1] * db[c][1];
                    let rhs = -(dbi[r][0] * b[c][0] + dbi[r][1] * b[c][1]);
                    let scale = bi[r][0].abs() * db[c][0].abs()
                        + bi[r][1].abs() * db[c][1].abs()
                        + dbi[r][0].abs() * b[c][0].abs()
                        + dbi[r][1].abs() * b[c][1].abs();
                    assert!(
                        (lhs - rhs).abs() <= 8.0 * eps * scale.max(1.0),
                        "inverse-rate identity entry ({r},{c}): {lhs} vs {rhs}"
                    );
                }
            }
        }

        // Spectral identity: dt h = div(B^T dt_chi) on a manufactured
        // geometry, differentiated with the grid's own matrices.
        let grid = QuadratureGrid::build(1.0, 48, 24).expect("grid");
        let tau = std::f64::consts::TAU;
        let nz = grid.n_z;
        let mut f1 = vec![0.0; grid.n_nodes()];
        let mut f2 = vec![0.0; grid.n_nodes()];
        let mut dth_x = vec![0.0; grid.n_x];
        for (ix, &x) in grid.xs.iter().enumerate() {
            let h = 1.2 + 0.3 * (tau * x + 0.4).cos() + 0.1 * (2.0 * tau * x).sin();
            let dxh = -0.3 * tau * (tau * x + 0.4).sin() + 0.2 * tau * (2.0 * tau * x).cos();
            let dth = 0.5 * (2.0 * tau * x + 0.2).sin() - 0.2 * (tau * x).cos();
            dth_x[ix] = dth;
            for (iz, &z) in grid.zs.iter().enumerate() {
                let s = GeometrySample { h, dx_h: dxh, dxx_h: 0.0, dt_h: dth, dtdx_h: 0.0, z };
                let m = transform_matrices(&s, 1e-9).expect("valid height");
                // B^T columns against the domain velocity.
                f1[ix * nz + iz] = m.b[0][0] * m.chi_dt[0] + m.b[1][0] * m.chi_dt[1];
                f2[ix * nz + iz] = m.b[0][1] * m.chi_dt[0] + m.b[1][1] * m.chi_dt[1];
            }
        }
        let dx = grid.fourier_diff_matrix();
        let dz = grid.z_diff_matrix();
        let mut worst = 0.0f64;
        for ix in 0..grid.n_x {
            for iz in 0..nz {
                let mut div = 0.0;
                for jx in 0..grid.n_x {
                    div += dx[ix][jx] * f1[jx * nz + iz];
                }
                for jz in 0..nz {
                    div += dz[iz][jz] * f2[ix * nz + jz];
                }
                worst = worst.max((div - dth_x[ix]).abs() / dth_x[ix].abs().max(1.0));
            }
        }
        assert!(worst <= 1e-8, "volume-rate identity residual {worst}");

        let secs = start.elapsed().as_secs_f64();
        assert!(secs < 5.0, "geometry identity suite took {secs:.2}s, limit 5s");
    });
}

// ---------------------------------------------------------------------------
// 2. The divergence identity behind the pressure-elimination argument.
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_divergence_identity() {
    conclude("criterion 02 (divergence identity on manufactured fields)", || {
        let start = Instant::now();
        let report = fsibeam::verify::run_suite("divergence", false).expect("suite");
        assert!(report.passed, "{}", report.render());
        for check in &report.checks {
            assert!(
                check.residual <= 1e-8,
                "{}: residual {} above 1e-8",
                check.label,
                check.residual
            );
        }
        assert_eq!(report.cases, 20, "expected 20 manufactured pairs");
        let secs = start.elapsed().as_secs_f64();
        assert!(secs < 10.0, "divergence identity suite took {secs:.2}s, limit 10s");
    });
}

// ---------------------------------------------------------------------------
// 3. Basis structure at 64 pairs: traces, solenoidality, orthonormality.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_basis_suite() {
    conclude("criterion 03 (basis suite up to 64 pairs)", || {
        let start = Instant::now();
        let length = 1.0;
        let n_pairs = 64;
        let kappa_max = 2.0 * std::f64::consts::PI * 16.0 / length;
        let grid = QuadratureGrid::build(length, 128, suggested_n_z(kappa_max) + 14)
            .expect("grid");
        let set = BasisSet::build(length, n_pairs, &grid).expect("basis");

        // Boundary traces at the walls and the interface, evaluated off the
        // quadrature nodes.
        let mut worst_wall = 0.0f64;
        let mut worst_interface = 0.0f64;
        for (j, pair) in set.pairs.iter().enumerate() {
            for &x in grid.xs.iter().step_by(4) {
                let bottom = pair.fluid.eval(x, 0.0);
                worst_wall = worst_wall.max(bottom.v1.abs()).max(bottom.v2.abs());
                let top = pair.fluid.eval(x, 1.0);
                match pair.beam {
                    None => {
                        worst_interface =
                            worst_interface.max(top.v1.abs()).max(top.v2.abs());
                    }
                    Some(b) => {
                        let psi = set.beam.modes[b].eval(x);
                        worst_interface = worst_interface
                            .max(top.v1.abs())
                            .max((top.v2 - psi).abs());
                        assert_eq!(beam_row(b), j, "lifted pair placement");
                    }
                }
            }
        }
        assert!(worst_wall <= 1e-10, "wall trace residual {worst_wall}");
        assert!(worst_interface <= 1e-10, "interface trace residual {worst_interface}");

        // Pointwise solenoidality from the cached closed-form derivatives.
        let mut worst_div = 0.0f64;
        for table in &set.tables {
            for i in 0..grid.n_nodes() {
                worst_div = worst_div.max((table.d1x[i] + table.d2z[i]).abs());
            }
        }
        assert!(worst_div <= 1e-10, "solenoidality residual {worst_div}");

        // Interface-basis orthonormality in the mean-square sense.
        let nb = set.n_beam();
        let mut worst_beam = 0.0f64;
        for bj in 0..nb {
            for bk in 0..nb {
                let entry = grid
                    .integrate_x(|ix| set.beam.vals[bj][ix] * set.beam.vals[bk][ix]);
                let target = if bj == bk { 1.0 } else { 0.0 };
                worst_beam = worst_beam.max((entry - target).abs());
            }
        }
        assert!(worst_beam <= 1e-10, "interface orthonormality residual {worst_beam}");

        // Gradient-inner-product structure: interior block orthonormal,
        // lifted columns orthogonal to every interior mode.
        let mut worst_interior = 0.0f64;
        let mut worst_cross = 0.0f64;
        for (j, pj) in set.pairs.iter().enumerate() {
            for (k, pk) in set.pairs.iter().enumerate() {
                let entry = set.gram_v1[(k, j)];
                match (pj.beam, pk.beam) {
                    (None, None) => {
                        let target = if j == k { 1.0 } else { 0.0 };
                        worst_interior = worst_interior.max((entry - target).abs());
                    }
                    (Some(_), None) | (None, Some(_)) => {
                        worst_cross = worst_cross.max(entry.abs());
                    }
                    _ => {}
                }
            }
        }
        assert!(
            worst_interior <= 1e-10,
            "interior gradient-orthonormality residual {worst_interior}"
        );
        assert!(worst_cross <= 1e-10, "lifted-interior cross residual {worst_cross}");

        let secs = start.elapsed().as_secs_f64();
        assert!(secs < 30.0, "basis suite took {secs:.2}s, limit 30s");
    });
}

// ---------------------------------------------------------------------------
// 4. Every assembled operator against an independent direct-quadrature
//    oracle built from the transformation matrices and spectral gradients.
// ---------------------------------------------------------------------------

struct OracleFields {
    /// Per mode: transported values, their time rates, and second rates.
    u1: Vec<Vec<f64>>,
    u2: Vec<Vec<f64>>,
    t1: Vec<Vec<f64>>,
    t2: Vec<Vec<f64>>,
    s1: Vec<Vec<f64>>,
    s2: Vec<Vec<f64>>,
    /// Spectral gradients of the transported values and rates.
    u1x: Vec<Vec<f64>>,
    u1z: Vec<Vec<f64>>,
    u2x: Vec<Vec<f64>>,
    u2z: Vec<Vec<f64>>,
    t1x: Vec<Vec<f64>>,
    t1z: Vec<Vec<f64>>,
    t2x: Vec<Vec<f64>>,
    t2z: Vec<Vec<f64>>,
}

fn spectral_gradients(grid: &QuadratureGrid, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dx = grid.fourier_diff_matrix();
    let dz = grid.z_diff_matrix();
    let nz = grid.n_z;
    let mut fx = vec![0.0; f.len()];
    let mut fz = vec![0.0; f.len()];
    for ix in 0..grid.n_x {
        for iz in 0..nz {
            let i = ix * nz + iz;
            for jx in 0..grid.n_x {
                fx[i] += dx[ix][jx] * f[jx * nz + iz];
            }
            for jz in 0..nz {
                fz[i] += dz[iz][jz] * f[ix * nz + jz];
            }
        }
    }
    (fx, fz)
}

fn rel_gap(lib: &DMatrix<f64>, oracle: &DMatrix<f64>) -> f64 {
    let scale = lib.amax().max(oracle.amax()).max(1e-300);
    (lib - oracle).amax() / scale
}

#[test]
fn criterion_04_assembly_vs_oracle() {
    conclude("criterion 04 (assembly vs direct-quadrature oracle)", || {
        let start = Instant::now();
        let length = 1.0;
        let n = 6;
        let grid = QuadratureGrid::build(length, 48, 37).expect("grid");
        let set = BasisSet::build(length, n, &grid).expect("basis");
        let params = PhysicalParams { rho_f: 1.3, rho_s: 0.7, mu: 0.9, beta: 1.1, alpha: 0.6 };
        let nb = set.n_beam();

        let mut rng = ChaCha8Rng::seed_from_u64(0x04);
        let alpha: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let g: Vec<f64> = (0..nb).map(|_| rng.gen_range(-0.025..0.025)).collect();
        let accel: Vec<f64> = (0..nb).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let v = beam_velocity(&set, &alpha);
        let geom = geometry_from_state(&set, &grid, 1.0, &g, &v, Some(&accel));

        // Library route: fused analytic transport tables.
        let trans = transport_tables(&set, &grid, &geom, TransportLevel::Differentiated);
        let ops = assemble_first_order(&set, &grid, &geom, &trans, &params, 1e-9, true)
            .expect("first-order assembly");
        let tensors =
            assemble_differentiated_tensors(&set, &grid, &geom, &trans, &params, 1e-9, true)
                .expect("differentiated assembly");

        // Oracle route: matrix algebra per node, spectral differentiation,
        // and literal quadrature of each inner product.
        let nz = grid.n_z;
        let n_nodes = grid.n_nodes();
        let mut of = OracleFields {
            u1: vec![vec![0.0; n_nodes]; n],
            u2: vec![vec![0.0; n_nodes]; n],
            t1: vec![vec![0.0; n_nodes]; n],
            t2: vec![vec![0.0; n_nodes]; n],
            s1: vec![vec![0.0; n_nodes]; n],
            s2: vec![vec![0.0; n_nodes]; n],
            u1x: Vec::new(),
            u1z: Vec::new(),
            u2x: Vec::new(),
            u2z: Vec::new(),
            t1x: Vec::new(),
            t1z: Vec::new(),
            t2x: Vec::new(),
            t2z: Vec::new(),
        };
        // Metric entries and their time rates per node.
        let mut a11 = vec![0.0; n_nodes];
        let mut a12 = vec![0.0; n_nodes];
        let mut a22 = vec![0.0; n_nodes];
        let mut a11t = vec![0.0; n_nodes];
        let mut a12t = vec![0.0; n_nodes];
        let mut a22t = vec![0.0; n_nodes];
        for ix in 0..grid.n_x {
            let h = geom.h[ix];
            let dxh = geom.dx_h[ix];
            let dth = geom.dt_h[ix];
            let dtdxh = geom.dtdx_h[ix];
            let dtth = geom.dtt_h[ix];
            let dttdxh = geom.dttdx_h[ix];
            for iz in 0..nz {
                let i = ix * nz + iz;
                let z = grid.zs[iz];
                let sample = GeometrySample {
                    h,
                    dx_h: dxh,
                    dxx_h: geom.dxx_h[ix],
                    dt_h: dth,
                    dtdx_h: dtdxh,
                    z,
                };
                let m = transform_matrices(&sample, 1e-9).expect("height");
                let zdx = z * dxh;
                a11[i] = m.a[0][0];
                a12[i] = m.a[0][1];
                a22[i] = m.a[1][1];
                a11t[i] = dth;
                a12t[i] = -z * dtdxh;
                a22t[i] =
                    (2.0 * z * z * dxh * dtdxh * h - (1.0 + zdx * zdx) * dth) / (h * h);

                // Second time derivative of the inverse-transpose map: only
                // the first column is time-dependent.
                let s11 = (2.0 * dth * dth - dtth * h) / (h * h * h);
                let s21 = z
                    * ((dttdxh * h - dxh * dtth) * h
                        - 2.0 * dth * (dtdxh * h - dxh * dth))
                    / (h * h * h);
                for j in 0..n {
                    let p = [set.tables[j].v1[i], set.tables[j].v2[i]];
                    of.u1[j][i] = m.b_inv_t[0][0] * p[0] + m.b_inv_t[0][1] * p[1];
                    of.u2[j][i] = m.b_inv_t[1][0] * p[0] + m.b_inv_t[1][1] * p[1];
                    of.t1[j][i] = m.dt_b_inv_t[0][0] * p[0] + m.dt_b_inv_t[0][1] * p[1];
                    of.t2[j][i] = m.dt_b_inv_t[1][0] * p[0] + m.dt_b_inv_t[1][1] * p[1];
                    of.s1[j][i] = s11 * p[0];
                    of.s2[j][i] = s21 * p[0];
                }
            }
        }
        for j in 0..n {
            let (fx, fz) = spectral_gradients(&grid, &of.u1[j]);
            of.u1x.push(fx);
            of.u1z.push(fz);
            let (fx, fz) = spectral_gradients(&grid, &of.u2[j]);
            of.u2x.push(fx);
            of.u2z.push(fz);
            let (fx, fz) = spectral_gradients(&grid, &of.t1[j]);
            of.t1x.push(fx);
            of.t1z.push(fz);
            let (fx, fz) = spectral_gradients(&grid, &of.t2[j]);
            of.t2x.push(fx);
            of.t2z.push(fz);
        }

        let frob = |x11: &[f64],
                    x12: &[f64],
                    x22: &[f64],
                    jx1: f64,
                    jz1: f64,
                    jx2: f64,
                    jz2: f64,
                    kx1: f64,
                    kz1: f64,
                    kx2: f64,
                    kz2: f64,
                    i: usize| {
            x11[i] * (jx1 * kx1 + jx2 * kx2)
                + x12[i] * (jz1 * kx1 + jx1 * kz1 + jz2 * kx2 + jx2 * kz2)
                + x22[i] * (jz1 * kz1 + jz2 * kz2)
        };

        let mut m_o = DMatrix::zeros(n, n);
        let mut s_o = DMatrix::zeros(n, n);
        let mut b_o = DMatrix::zeros(n, n);
        let mut c_o = DMatrix::zeros(n, n);
        for k in 0..n {
            for j in 0..n {
                m_o[(k, j)] = params.rho_f
                    * grid.integrate(|ix, iz| {
                        let i = ix * nz + iz;
                        geom.h[ix] * (of.u1[j][i] * of.u1[k][i] + of.u2[j][i] * of.u2[k][i])
                    });
                s_o[(k, j)] = params.mu
                    * grid.integrate(|ix, iz| {
                        let i = ix * nz + iz;
                        frob(
                            &a11, &a12, &a22, of.u1x[j][i], of.u1z[j][i], of.u2x[j][i],
                            of.u2z[j][i], of.u1x[k][i], of.u1z[k][i], of.u2x[k][i],
                            of.u2z[k][i], i,
                        )
                    });

                // Coefficient of the velocity rate: the viscous form, the
                // geometry-motion kernels, and the mass-rate terms.
                let k_geo = params.rho_f
                    * grid.integrate(|ix, iz| {
                        let i = ix * nz + iz;
                        geom.h[ix] * (of.t1[j][i] * of.u1[k][i] + of.t2[j][i] * of.u2[k][i])
                    });
                let f_geo = -params.rho_f
                    * grid.integrate(|ix, iz| {
                        let i = ix * nz + iz;
                        geom.dt_h[ix]
                            * grid.zs[iz]
                            * (of.u1z[j][i] * of.u1[k][i] + of.u2z[j][i] * of.u2[k][i])
                    });
                let mass_rate = params.rho_f
                    * grid.integrate(|ix, iz| {
                        let i = ix * nz + iz;
                        geom.dt_h[ix]
                            * (of.u1[j][i] * of.u1[k][i] + of.u2[j][i] * of.u2[k][i])
                            + geom.h[ix]
                                * (of.t1[j][i] * of.u1[k][i] + of.t2[j][i] * of.u2[k][i])
                            + geom.h[ix]
                                * (of.u1[j][i] * of.t1[k][i] + of.u2[j][i] * of.t2[k][i])
                    });
                b_o[(k, j)] = s_o[(k, j)] + k_geo + f_geo + mass_rate;

                // Coefficient of the coefficients themselves: rate of every
                // kernel above by the product rule.
                let inertia = params.rho_f
                    * grid.integrate(|ix, iz| {
                        let i = ix * nz + iz;
                        geom.dt_h[ix]
                            * (of.t1[j][i] * of.u1[k][i] + of.t2[j][i] * of.u2[k][i])
                            + geom.h[ix]
                                * (of.s1[j][i] * of.u1[k][i] + of.s2[j][i] * of.u2[k][i])
                            + geom.h[ix]
                                * (of.t1[j][i] * of.t1[k][i] + of.t2[j][i] * of.t2[k][i])
                    });
                let visc_rate = params.mu
                    * grid.integrate(|ix, iz| {
                        let i = ix * nz + iz;
                        frob(
                            &a11t, &a12t, &a22t, of.u1x[j][i], of.u1z[j][i], of.u2x[j][i],
                            of.u2z[j][i], of.u1x[k][i], of.u1z[k][i], of.u2x[k][i],
                            of.u2z[k][i], i,
                        ) + frob(
                            &a11, &a12, &a22, of.t1x[j][i], of.t1z[j][i], of.t2x[j][i],
                            of.t2z[j][i], of.u1x[k][i], of.u1z[k][i], of.u2x[k][i],
                            of.u2z[k][i], i,
                        ) + frob(
                            &a11, &a12, &a22, of.u1x[j][i], of.u1z[j][i], of.u2x[j][i],
                            of.u2z[j][i], of.t1x[k][i], of.t1z[k][i], of.t2x[k][i],
                            of.t2z[k][i], i,
                        )
                    });
                let drift_rate = -params.rho_f
                    * grid.integrate(|ix, iz| {
                        let i = ix * nz + iz;
                        let z = grid.zs[iz];
                        geom.dtt_h[ix]
                            * z
                            * (of.u1z[j][i] * of.u1[k][i] + of.u2z[j][i] * of.u2[k][i])
                            + geom.dt_h[ix]
                                * z
                                * (of.t1z[j][i] * of.u1[k][i] + of.t2z[j][i] * of.u2[k][i])
                            + geom.dt_h[ix]
                                * z
                                * (of.u1z[j][i] * of.t1[k][i] + of.u2z[j][i] * of.t2[k][i])
                    });
                c_o[(k, j)] = inertia + visc_rate + drift_rate;
            }
        }
        // Interface blocks by x-only quadrature.
        for bj in 0..nb {
            for bk in 0..nb {
                let gram = grid
                    .integrate_x(|ix| set.beam.vals[bj][ix] * set.beam.vals[bk][ix]);
                m_o[(beam_row(bk), beam_row(bj))] += params.rho_s * gram;
                b_o[(beam_row(bk), beam_row(bj))] += 0.5
                    * params.rho_f
                    * grid.integrate_x(|ix| {
                        geom.dt_h[ix] * set.beam.vals[bj][ix] * set.beam.vals[bk][ix]
                    });
                let stiff = params.beta
                    * grid.integrate_x(|ix| set.beam.dx[bj][ix] * set.beam.dx[bk][ix])
                    + params.alpha
                        * grid.integrate_x(|ix| set.beam.dxx[bj][ix] * set.beam.dxx[bk][ix]);
                c_o[(beam_row(bk), beam_row(bj))] += stiff
                    + 0.5
                        * params.rho_f
                        * grid.integrate_x(|ix| {
                            geom.dtt_h[ix] * set.beam.vals[bj][ix] * set.beam.vals[bk][ix]
                        });
            }
        }

        assert!(rel_gap(&ops.mass, &m_o) <= 1e-10, "mass gap {}", rel_gap(&ops.mass, &m_o));
        assert!(rel_gap(&ops.visc, &s_o) <= 1e-10, "viscous gap {}", rel_gap(&ops.visc, &s_o));
        assert!(
            rel_gap(&tensors.a_mat, &m_o) <= 1e-10,
            "acceleration-coefficient gap {}",
            rel_gap(&tensors.a_mat, &m_o)
        );
        assert!(
            rel_gap(&tensors.b_mat, &b_o) <= 1e-10,
            "rate-coefficient gap {}",
            rel_gap(&tensors.b_mat, &b_o)
        );
        assert!(
            rel_gap(&tensors.c_mat, &c_o) <= 1e-10,
            "state-coefficient gap {}",
            rel_gap(&tensors.c_mat, &c_o)
        );

        // Quadratic tensors, slice by slice.
        let advect = |a1: f64, a2: f64, ix: usize, iz: usize| {
            (geom.h[ix] * a1, -grid.zs[iz] * geom.dx_h[ix] * a1 + a2)
        };
        let c3 = ops.c3.as_ref().expect("convection tensor");
        let d = tensors.d_tensor.as_ref().expect("rate-state tensor");
        let e = tensors.e_tensor.as_ref().expect("state-state tensor");
        for l in 0..n {
            let mut c3_o = DMatrix::zeros(n, n);
            let mut d_o = DMatrix::zeros(n, n);
            let mut e_o = DMatrix::zeros(n, n);
            for k in 0..n {
                for j in 0..n {
                    c3_o[(k, j)] = 0.5
                        * params.rho_f
                        * grid.integrate(|ix, iz| {
                            let i = ix * nz + iz;
                            let (w1, w2) = advect(of.u1[l][i], of.u2[l][i], ix, iz);
                            let pos = (w1 * of.u1x[j][i] + w2 * of.u1z[j][i]) * of.u1[k][i]
                                + (w1 * of.u2x[j][i] + w2 * of.u2z[j][i]) * of.u2[k][i];
                            let neg = (w1 * of.u1x[k][i] + w2 * of.u1z[k][i]) * of.u1[j][i]
                                + (w1 * of.u2x[k][i] + w2 * of.u2z[k][i]) * of.u2[j][i];
                            pos - neg
                        });
                    d_o[(k, j)] = 0.5
                        * params.rho_f
                        * grid.integrate(|ix, iz| {
                            let i = ix * nz + iz;
                            let (wj1, wj2) = advect(of.u1[j][i], of.u2[j][i], ix, iz);
                            let (wl1, wl2) = advect(of.u1[l][i], of.u2[l][i], ix, iz);
                            (wj1 * of.u1x[l][i] + wj2 * of.u1z[l][i]) * of.u1[k][i]
                                + (wj1 * of.u2x[l][i] + wj2 * of.u2z[l][i]) * of.u2[k][i]
                                + (wl1 * of.u1x[j][i] + wl2 * of.u1z[j][i]) * of.u1[k][i]
                                + (wl1 * of.u2x[j][i] + wl2 * of.u2z[j][i]) * of.u2[k][i]
                                - ((wj1 * of.u1x[k][i] + wj2 * of.u1z[k][i]) * of.u1[l][i]
                                    + (wj1 * of.u2x[k][i] + wj2 * of.u2z[k][i])
                                        * of.u2[l][i])
                                - ((wl1 * of.u1x[k][i] + wl2 * of.u1z[k][i]) * of.u1[j][i]
                                    + (wl1 * of.u2x[k][i] + wl2 * of.u2z[k][i])
                                        * of.u2[j][i])
                        });
                    e_o[(k, j)] = 0.5
                        * params.rho_f
                        * grid.integrate(|ix, iz| {
                            let i = ix * nz + iz;
                            let z = grid.zs[iz];
                            let (wl1, wl2) = advect(of.u1[l][i], of.u2[l][i], ix, iz);
                            let (wt1, wt2) = advect(of.t1[l][i], of.t2[l][i], ix, iz);
                            let bdt1 = wt1 + of.u1[l][i] * geom.dt_h[ix];
                            let bdt2 = wt2 - of.u1[l][i] * z * geom.dtdx_h[ix];
                            let pos = (bdt1 * of.u1x[j][i] + bdt2 * of.u1z[j][i])
                                * of.u1[k][i]
                                + (bdt1 * of.u2x[j][i] + bdt2 * of.u2z[j][i]) * of.u2[k][i]
                                + (wl1 * of.t1x[j][i] + wl2 * of.t1z[j][i]) * of.u1[k][i]
                                + (wl1 * of.t2x[j][i] + wl2 * of.t2z[j][i]) * of.u2[k][i]
                                + (wl1 * of.u1x[j][i] + wl2 * of.u1z[j][i]) * of.t1[k][i]
                                + (wl1 * of.u2x[j][i] + wl2 * of.u2z[j][i]) * of.t2[k][i];
                            let neg = (bdt1 * of.u1x[k][i] + bdt2 * of.u1z[k][i])
                                * of.u1[j][i]
                                + (bdt1 * of.u2x[k][i] + bdt2 * of.u2z[k][i]) * of.u2[j][i]
                                + (wl1 * of.t1x[k][i] + wl2 * of.t1z[k][i]) * of.u1[j][i]
                                + (wl1 * of.t2x[k][i] + wl2 * of.t2z[k][i]) * of.u2[j][i]
                                + (wl1 * of.u1x[k][i] + wl2 * of.u1z[k][i]) * of.t1[j][i]
                                + (wl1 * of.u2x[k][i] + wl2 * of.u2z[k][i]) * of.t2[j][i];
                            pos - neg
                        });
                }
            }
            assert!(
                rel_gap(&c3[l], &c3_o) <= 1e-10,
                "convection slice {l} gap {}",
                rel_gap(&c3[l], &c3_o)
            );
            assert!(
                rel_gap(&d[l], &d_o) <= 1e-10,
                "rate-state slice {l} gap {}",
                rel_gap(&d[l], &d_o)
            );
            assert!(
                rel_gap(&e[l], &e_o) <= 1e-10,
                "state-state slice {l} gap {}",
                rel_gap(&e[l], &e_o)
            );
        }

        let secs = start.elapsed().as_secs_f64();
        assert!(secs < 60.0, "assembly oracle took {secs:.2}s, limit 60s");
    });
}

// ---------------------------------------------------------------------------
// 5. Discrete energy balance on the bundled sine run, with refinement order.
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_energy_balance() {
    conclude("criterion 05 (discrete energy balance and refinement order)", || {
        let st = study();
        let mut worsts = Vec::new();
        for (dt, traj) in &st.runs {
            let rows = ledger_rows(&st.basis, &st.grid, &st.params, traj);
            let worst =
                rows.iter().map(|r| r.balance_residual.abs()).fold(0.0f64, f64::max);
            for pair in rows.windows(2) {
                assert!(
                    pair[1].dissipation_cum >= pair[0].dissipation_cum,
                    "dissipation not monotone at dt={dt}"
                );
            }
            worsts.push(worst);
        }
        assert!(
            worsts[2] <= 1e-6,
            "balance residual {} at dt=1e-3 above 1e-6",
            worsts[2]
        );
        let order = (worsts[0] / worsts[2]).log2() / 2.0;
        assert!(order >= 1.95, "balance refinement order {order:.3} below 2");
        assert!(
            st.three_run_secs < 120.0,
            "three refinement runs took {:.1}s, limit 120s",
            st.three_run_secs
        );
    });
}

// ---------------------------------------------------------------------------
// 6. A flat interface stays bitwise at rest over ten thousand steps.
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_equilibrium_preservation() {
    conclude("criterion 06 (flat equilibrium over 1e4 steps)", || {
        let start = Instant::now();
        let mut config = load_bundled("flat.json");
        config.t_end = 10.0;
        config.output_dt = 0.1;
        config.validate().expect("valid config");
        let (basis, grid, traj) = run_bundled(&config);
        assert_eq!(traj.reports.len(), 10_000);
        assert!(matches!(traj.termination, Termination::Completed));
        for snap in &traj.snapshots {
            let worst = snap
                .alpha
                .iter()
                .chain(snap.g_coeffs.iter())
                .chain(std::iter::once(&(snap.g_mean - 1.0)))
                .fold(0.0f64, |m, &v| m.max(v.abs()));
            assert!(worst <= 1e-12, "state norm {worst} at t={}", snap.t);
        }
        let _ = (basis, grid);
        let secs = start.elapsed().as_secs_f64();
        assert!(secs < 30.0, "equilibrium run took {secs:.2}s, limit 30s");
    });
}

// ---------------------------------------------------------------------------
// 7. Compatibility invariants at every output time of every bundled run.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_compatibility_invariants() {
    conclude("criterion 07 (compatibility invariants along every run)", || {
        for name in [
            "flat.json",
            "sine.json",
            "contact-a.json",
            "contact-b.json",
            "contact-c.json",
            "picard-blowup.json",
        ] {
            let config = load_bundled(name);
            let (basis, grid, traj) = run_bundled(&config);
            for snap in &traj.snapshots {
                let r = compatibility_residuals(&basis, &grid, snap);
                let at = format!("{name} at t={}", snap.t);
                assert!(r.mean_dt_g <= 1e-12, "volume rate {} in {at}", r.mean_dt_g);
                assert!(r.kinematic <= 1e-10, "kinematic {} in {at}", r.kinematic);
                assert!(
                    r.interface_slip <= 1e-10,
                    "interface slip {} in {at}",
                    r.interface_slip
                );
                assert!(r.divergence <= 1e-8, "divergence {} in {at}", r.divergence);
                assert!(r.no_slip <= 1e-12, "no-slip {} in {at}", r.no_slip);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// 8. The a priori contact-time bound on the three descending runs.
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_contact_time_bound() {
    conclude("criterion 08 (contact-time lower bound)", || {
        let start = Instant::now();
        for name in ["contact-a.json", "contact-b.json", "contact-c.json"] {
            let config = load_bundled(name);
            let (basis, grid, traj) = run_bundled(&config);
            let assess =
                contact_assessment(&basis, &grid, &traj, config.contact_floor, 0.05);
            let (t_cross, _) = assess
                .crossing
                .unwrap_or_else(|| panic!("{name}: interface never reached its floor"));
            assert!(
                t_cross >= assess.bound * 0.95,
                "{name}: crossing at {t_cross} before bound {} * 0.95",
                assess.bound
            );
            assert!(assess.honored, "{name}: bound not honored");
        }
        let secs = start.elapsed().as_secs_f64();
        assert!(secs < 180.0, "contact runs took {secs:.2}s, limit 180s");
    });
}

// ---------------------------------------------------------------------------
// 9. Self-convergence: resolution doubling and temporal refinement.
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_self_convergence() {
    conclude("criterion 09 (spatial and temporal self-convergence)", || {
        let st = study();
        let fine = st.runs[2].1.snapshots.last().expect("snapshots");
        let dense = &st.final_dense;

        // Shared interface coefficients between the two resolutions.
        let nb = st.basis.n_beam();
        assert!(st.dense_n_beam >= nb);
        let mut gap = 0.0f64;
        let mut scale = 0.0f64;
        for b in 0..nb {
            gap += (fine.g_coeffs[b] - dense.g_coeffs[b]).powi(2);
            scale += fine.g_coeffs[b].powi(2);
        }
        // Coefficients the coarse basis cannot represent count as error.
        for b in nb..st.dense_n_beam {
            gap += dense.g_coeffs[b].powi(2);
        }
        let rel = (gap / scale.max(1e-300)).sqrt();
        assert!(rel <= 1e-3, "resolution-doubling relative gap {rel}");

        // Temporal order against the 8x-finer reference.
        let reference = st.reference.snapshots.last().expect("snapshots");
        let err = |traj: &Trajectory| {
            let s = traj.snapshots.last().expect("snapshots");
            let mut e = 0.0f64;
            for b in 0..nb {
                e += (s.g_coeffs[b] - reference.g_coeffs[b]).powi(2);
            }
            e.sqrt()
        };
        let errs: Vec<f64> = st.runs.iter().map(|(_, t)| err(t)).collect();
        let order_a = (errs[0] / errs[1]).log2();
        let order_b = (errs[1] / errs[2]).log2();
        assert!(
            order_a >= 1.9 && order_b >= 1.9,
            "temporal orders {order_a:.3}, {order_b:.3} below 2 (errors {errs:?})"
        );
    });
}

// ---------------------------------------------------------------------------
// 10. The integrated trajectory satisfies the differentiated system.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_differentiated_consistency() {
    conclude("criterion 10 (differentiated-system residual order)", || {
        let st = study();
        let mut residuals = Vec::new();
        for (dt, traj) in &st.runs {
            let snaps = &traj.snapshots;
            let mut worst = 0.0f64;
            for frac in [4, 2] {
                let i = snaps.len() / frac;
                let (prev, here, next) = (&snaps[i - 1], &snaps[i], &snaps[i + 1]);
                let n = here.alpha.len();
                let alpha_dot: Vec<f64> = (0..n)
                    .map(|j| (next.alpha[j] - prev.alpha[j]) / (2.0 * dt))
                    .collect();
                let alpha_ddot: Vec<f64> = (0..n)
                    .map(|j| (next.alpha[j] - 2.0 * here.alpha[j] + prev.alpha[j]) / (dt * dt))
                    .collect();
                // Interface height satisfies g' = lifted alpha, so its second
                // rate comes from the lifted rows of the first derivative.
                let v = here.beam_velocity(&st.basis);
                let accel: Vec<f64> =
                    (0..st.basis.n_beam()).map(|b| alpha_dot[beam_row(b)]).collect();
                let geom = geometry_from_state(
                    &st.basis,
                    &st.grid,
                    here.g_mean,
                    &here.g_coeffs,
                    &v,
                    Some(&accel),
                );
                let trans = transport_tables(
                    &st.basis,
                    &st.grid,
                    &geom,
                    TransportLevel::Differentiated,
                );
                let r = differentiated_residual_at(
                    &st.basis,
                    &st.grid,
                    &geom,
                    &trans,
                    &st.params,
                    1e-9,
                    &here.alpha,
                    &alpha_dot,
                    &alpha_ddot,
                )
                .expect("residual evaluation");
                worst = worst.max(r.amax());
            }
            residuals.push(worst);
        }
        let order_a = (residuals[0] / residuals[1]).log2();
        let order_b = (residuals[1] / residuals[2]).log2();
        assert!(
            order_a >= 1.0 && order_b >= 1.0,
            "residual orders {order_a:.3}, {order_b:.3} below 1 (residuals {residuals:?})"
        );
    });
}

// ---------------------------------------------------------------------------
// 11. The initial-acceleration solve: exact rest, small residuals, finite
//     seed norms on every bundled configuration.
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_initial_acceleration() {
    conclude("criterion 11 (initial-acceleration solve)", || {
        let flat = load_bundled("flat.json");
        let (basis, grid) = build_problem(&flat).expect("problem sizes");
        let state = initial_state(&flat, &basis).expect("initial data");
        let v = state.beam_velocity(&basis);
        let geom = geometry_from_state(&basis, &grid, state.g_mean, &state.g_coeffs, &v, None);
        let sol = initial_acceleration(
            &basis,
            &grid,
            &geom,
            &flat.params(),
            flat.h_floor,
            &state.alpha,
            &state.g_coeffs,
        )
        .expect("rest solve");
        assert!(
            sol.alpha_dot.amax() <= 1e-12,
            "rest acceleration {}",
            sol.alpha_dot.amax()
        );

        for name in [
            "flat.json",
            "sine.json",
            "contact-a.json",
            "contact-b.json",
            "contact-c.json",
            "picard-blowup.json",
        ] {
            let config = load_bundled(name);
            let (basis, grid) = build_problem(&config).expect("problem sizes");
            let state = initial_state(&config, &basis).expect("initial data");
            let v = state.beam_velocity(&basis);
            let geom =
                geometry_from_state(&basis, &grid, state.g_mean, &state.g_coeffs, &v, None);
            let sol = initial_acceleration(
                &basis,
                &grid,
                &geom,
                &config.params(),
                config.h_floor,
                &state.alpha,
                &state.g_coeffs,
            )
            .unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(
                sol.residual <= 1e-10,
                "{name}: solve residual {} above 1e-10",
                sol.residual
            );
            assert!(
                sol.seed_norm_u.is_finite() && sol.seed_norm_h.is_finite(),
                "{name}: seed norms not finite"
            );
        }
    });
}
