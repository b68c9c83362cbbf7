//! Coupled Galerkin basis: beam deformation modes on [0, L] and
//! divergence-free velocity modes on the reference strip.
//!
//! Pairs follow a strict enumeration. Odd global indices carry a
//! wall-to-interface mode whose vertical trace at z = 1 equals a beam mode
//! times e2; even indices carry an interior mode vanishing on both walls and
//! pair with the zero beam function. Every velocity mode derives from a
//! streamfunction, so solenoidality is exact by construction.

use crate::error::BasisError;
use crate::quadrature::QuadratureGrid;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Sin,
    Cos,
}

/// One L-periodic, zero-mean beam mode: amplitude * sin/cos(2 pi m x / L).
/// The family is L2-orthonormal with amplitude sqrt(2/L).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamMode {
    /// 1-based position in the beam basis.
    pub index: usize,
    /// Integer wavenumber; kappa = 2 pi m / L.
    pub m: usize,
    pub wavenumber: f64,
    pub parity: Parity,
    pub amplitude: f64,
}

impl BeamMode {
    pub fn new(index: usize, length: f64) -> Self {
        let m = index.div_ceil(2);
        Self {
            index,
            m,
            wavenumber: 2.0 * std::f64::consts::PI * m as f64 / length,
            parity: if index % 2 == 1 { Parity::Sin } else { Parity::Cos },
            amplitude: (2.0 / length).sqrt(),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let t = self.wavenumber * x;
        self.amplitude
            * match self.parity {
                Parity::Sin => t.sin(),
                Parity::Cos => t.cos(),
            }
    }

    pub fn dx(&self, x: f64) -> f64 {
        let t = self.wavenumber * x;
        self.amplitude
            * self.wavenumber
            * match self.parity {
                Parity::Sin => t.cos(),
                Parity::Cos => -t.sin(),
            }
    }

    pub fn dxx(&self, x: f64) -> f64 {
        -self.wavenumber * self.wavenumber * self.eval(x)
    }
}

/// Beam basis with nodal tables on the x grid.
#[derive(Debug, Clone)]
pub struct BeamBasis {
    pub length: f64,
    pub modes: Vec<BeamMode>,
    /// vals[k][ix], dx[k][ix], dxx[k][ix] at the grid x nodes.
    pub vals: Vec<Vec<f64>>,
    pub dx: Vec<Vec<f64>>,
    pub dxx: Vec<Vec<f64>>,
}

pub fn build_beam_basis(length: f64, count: usize, grid: &QuadratureGrid) -> BeamBasis {
    let modes: Vec<BeamMode> = (1..=count).map(|k| BeamMode::new(k, length)).collect();
    let vals = modes.iter().map(|m| grid.xs.iter().map(|&x| m.eval(x)).collect()).collect();
    let dx = modes.iter().map(|m| grid.xs.iter().map(|&x| m.dx(x)).collect()).collect();
    let dxx = modes.iter().map(|m| grid.xs.iter().map(|&x| m.dxx(x)).collect()).collect();
    BeamBasis { length, modes, vals, dx, dxx }
}

/// Vertical streamfunction profile of a velocity mode.
///
/// `Lifted` solves the fourth-order interface problem in the stabilized
/// hyperbolic basis; `Clamped` is z^2 (1-z)^2 times an inner polynomial, so
/// wall values and slopes vanish exactly in floating point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ZProfile {
    Lifted { kappa: f64, a: f64, b: f64 },
    Clamped { inner: Vec<f64> },
}

/// Scaled hyperbolic ratios, safe for large kappa (all exponents <= 0).
fn sinh_over_cosh_k(kappa: f64, z: f64) -> f64 {
    ((kappa * (z - 1.0)).exp() - (-kappa * (z + 1.0)).exp()) / (1.0 + (-2.0 * kappa).exp())
}
fn cosh_over_cosh_k(kappa: f64, z: f64) -> f64 {
    ((kappa * (z - 1.0)).exp() + (-kappa * (z + 1.0)).exp()) / (1.0 + (-2.0 * kappa).exp())
}
fn sinh_over_sinh_k(kappa: f64, z: f64) -> f64 {
    ((kappa * (z - 1.0)).exp() - (-kappa * (z + 1.0)).exp()) / (1.0 - (-2.0 * kappa).exp())
}
fn cosh_over_sinh_k(kappa: f64, z: f64) -> f64 {
    ((kappa * (z - 1.0)).exp() + (-kappa * (z + 1.0)).exp()) / (1.0 - (-2.0 * kappa).exp())
}

fn horner(coeffs: &[f64], z: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * z + c)
}

fn poly_derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs.iter().enumerate().skip(1).map(|(i, &c)| i as f64 * c).collect()
}

impl ZProfile {
    /// Profile value and first two derivatives at z.
    pub fn eval(&self, z: f64) -> (f64, f64, f64) {
        match self {
            ZProfile::Lifted { kappa, a, b } => {
                let k = *kappa;
                let szc = sinh_over_cosh_k(k, z);
                let czc = cosh_over_cosh_k(k, z);
                let szs = sinh_over_sinh_k(k, z);
                let czs = cosh_over_sinh_k(k, z);
                // p = (sinh(kz) - kz cosh(kz)) / (k cosh k), q = z sinh(kz)/sinh k.
                let p = (szc - k * z * czc) / k;
                let dp = -k * z * szc;
                let ddp = -k * szc - k * k * z * czc;
                let q = z * szs;
                let dq = szs + k * z * czs;
                let ddq = 2.0 * k * czs + k * k * z * szs;
                (a * p + b * q, a * dp + b * dq, a * ddp + b * ddq)
            }
            ZProfile::Clamped { inner } => {
                let c = z * z * (1.0 - z) * (1.0 - z);
                let dc = 2.0 * z * (1.0 - z) * (1.0 - 2.0 * z);
                let ddc = 2.0 * (1.0 - 6.0 * z + 6.0 * z * z);
                let d1 = poly_derivative(inner);
                let d2 = poly_derivative(&d1);
                let p = horner(inner, z);
                let dp = horner(&d1, z);
                let ddp = horner(&d2, z);
                (c * p, dc * p + c * dp, ddc * p + 2.0 * dc * dp + c * ddp)
            }
        }
    }

    /// self += scale * other; only meaningful within the Clamped family.
    fn axpy(&mut self, scale: f64, other: &ZProfile) {
        match (self, other) {
            (ZProfile::Clamped { inner }, ZProfile::Clamped { inner: oi }) => {
                if inner.len() < oi.len() {
                    inner.resize(oi.len(), 0.0);
                }
                for (i, &c) in oi.iter().enumerate() {
                    inner[i] += scale * c;
                }
            }
            _ => panic!("profile combination outside the polynomial family"),
        }
    }

    fn scale(&mut self, s: f64) {
        match self {
            ZProfile::Clamped { inner } => inner.iter_mut().for_each(|c| *c *= s),
            ZProfile::Lifted { a, b, .. } => {
                *a *= s;
                *b *= s;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FluidModeKind {
    /// Trace psi_k e2 on z = 1, zero on z = 0; exterior to the interior space
    /// in the gradient inner product by construction.
    Lifted,
    /// Vanishes on both walls.
    Interior,
}

/// Divergence-free velocity mode Psi = (d_z s, -d_x s) with streamfunction
/// s(x, z) = trig(kappa x) * profile(z).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FluidMode {
    pub kind: FluidModeKind,
    /// Integer x wavenumber (0 allowed for interior modes).
    pub m: usize,
    /// Parity of the streamfunction trig factor (of the trace for lifted).
    pub sf_parity: Parity,
    pub profile: ZProfile,
    pub length: f64,
}

/// Mode value and gradient at a point.
#[derive(Debug, Clone, Copy, Default)]
pub struct ModePoint {
    pub v1: f64,
    pub v2: f64,
    pub d1x: f64,
    pub d1z: f64,
    pub d2x: f64,
    pub d2z: f64,
}

impl FluidMode {
    pub fn kappa(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.m as f64 / self.length
    }

    /// Evaluates Psi and grad Psi. The divergence d_x Psi1 + d_z Psi2 cancels
    /// identically: both are the mixed partial of the streamfunction.
    pub fn eval(&self, x: f64, z: f64) -> ModePoint {
        let kappa = self.kappa();
        let (t, dt) = if self.m == 0 {
            (1.0, 0.0)
        } else {
            let arg = kappa * x;
            match self.sf_parity {
                Parity::Sin => (arg.sin(), kappa * arg.cos()),
                Parity::Cos => (arg.cos(), -kappa * arg.sin()),
            }
        };
        let ddt = -kappa * kappa * t;
        let (w, dw, ddw) = self.profile.eval(z);
        ModePoint {
            v1: t * dw,
            v2: -dt * w,
            d1x: dt * dw,
            d1z: t * ddw,
            d2x: -ddt * w,
            d2z: -dt * dw,
        }
    }

    /// Samples the mode on the whole grid (x-major node order).
    pub fn sample(&self, grid: &QuadratureGrid) -> ModeTable {
        let n = grid.n_nodes();
        let mut table = ModeTable {
            v1: vec![0.0; n],
            v2: vec![0.0; n],
            d1x: vec![0.0; n],
            d1z: vec![0.0; n],
            d2x: vec![0.0; n],
            d2z: vec![0.0; n],
        };
        for (ix, &x) in grid.xs.iter().enumerate() {
            for (iz, &z) in grid.zs.iter().enumerate() {
                let p = self.eval(x, z);
                let idx = ix * grid.n_z + iz;
                table.v1[idx] = p.v1;
                table.v2[idx] = p.v2;
                table.d1x[idx] = p.d1x;
                table.d1z[idx] = p.d1z;
                table.d2x[idx] = p.d2x;
                table.d2z[idx] = p.d2z;
            }
        }
        table
    }
}

/// Nodal values of one mode over the grid.
#[derive(Debug, Clone)]
pub struct ModeTable {
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub d1x: Vec<f64>,
    pub d1z: Vec<f64>,
    pub d2x: Vec<f64>,
    pub d2z: Vec<f64>,
}

/// Builds the wall-to-interface mode paired with a beam mode: the vertical
/// profile solves (D^2 - kappa^2)^2 s = 0 with clamped bottom, zero interface
/// slope, and interface value matching the beam trace.
pub fn build_lifted_mode(beam: &BeamMode, length: f64) -> Result<FluidMode, BasisError> {
    let kappa = beam.wavenumber;
    // Trace requirement: Psi2(x, 1) = -dt(x) * s(1) must equal beam.eval(x).
    // For a Sin beam mode the streamfunction trig is Cos (and vice versa).
    let (sf_parity, target) = match beam.parity {
        Parity::Sin => (Parity::Cos, beam.amplitude / kappa),
        Parity::Cos => (Parity::Sin, -beam.amplitude / kappa),
    };
    let th = kappa.tanh();
    // Interface rows of the 2x2 system in the (p, q) profile basis.
    let p1 = th / kappa - 1.0;
    let q1 = 1.0;
    let dp1 = -kappa * th;
    let dq1 = 1.0 + kappa / th;
    let det = p1 * dq1 - q1 * dp1;
    if !(det.abs() > 1e-14) {
        return Err(BasisError::SingularLift { index: beam.index, det });
    }
    let a = target * dq1 / det;
    let b = -target * dp1 / det;
    Ok(FluidMode {
        kind: FluidModeKind::Lifted,
        m: beam.m,
        sf_parity,
        profile: ZProfile::Lifted { kappa, a, b },
        length,
    })
}

/// Raw interior candidates for one (m, parity) family: clamped profiles with
/// shifted-Legendre inner polynomials of degree 0..n_profiles.
fn raw_interior_family(
    length: f64,
    m: usize,
    sf_parity: Parity,
    n_profiles: usize,
) -> Vec<FluidMode> {
    (0..n_profiles)
        .map(|n| FluidMode {
            kind: FluidModeKind::Interior,
            m,
            sf_parity,
            profile: ZProfile::Clamped { inner: shifted_legendre(n) },
            length,
        })
        .collect()
}

/// Monomial coefficients of the shifted Legendre polynomial P_n(2z - 1).
fn shifted_legendre(n: usize) -> Vec<f64> {
    // Recurrence on coefficient vectors in the shifted variable.
    let mut p0 = vec![1.0];
    if n == 0 {
        return p0;
    }
    let mut p1 = vec![-1.0, 2.0];
    for k in 2..=n {
        let kf = k as f64;
        // P_k = ((2k-1)(2z-1) P_{k-1} - (k-1) P_{k-2}) / k
        let mut next = vec![0.0; p1.len() + 1];
        for (i, &c) in p1.iter().enumerate() {
            next[i + 1] += (2.0 * kf - 1.0) * 2.0 * c / kf;
            next[i] -= (2.0 * kf - 1.0) * c / kf;
        }
        for (i, &c) in p0.iter().enumerate() {
            next[i] -= (kf - 1.0) * c / kf;
        }
        p0 = p1;
        p1 = next;
    }
    p1
}

/// Gradient (V1) inner product of two sampled modes.
pub fn v1_inner(grid: &QuadratureGrid, a: &ModeTable, b: &ModeTable) -> f64 {
    let mut acc = 0.0;
    for ix in 0..grid.n_x {
        for iz in 0..grid.n_z {
            let i = ix * grid.n_z + iz;
            acc += grid.weight(iz)
                * (a.d1x[i] * b.d1x[i] + a.d1z[i] * b.d1z[i] + a.d2x[i] * b.d2x[i]
                    + a.d2z[i] * b.d2z[i]);
        }
    }
    acc
}

/// L2 inner product of two sampled modes.
pub fn l2_inner(grid: &QuadratureGrid, a: &ModeTable, b: &ModeTable) -> f64 {
    let mut acc = 0.0;
    for ix in 0..grid.n_x {
        for iz in 0..grid.n_z {
            let i = ix * grid.n_z + iz;
            acc += grid.weight(iz) * (a.v1[i] * b.v1[i] + a.v2[i] * b.v2[i]);
        }
    }
    acc
}

/// Builds the full interior block for wavenumbers 0..=m_max with `n_profiles`
/// vertical candidates per family, orthonormalized family-by-family in the
/// gradient inner product. Families with distinct (m, parity) are orthogonal
/// by trigonometric integration, verified downstream.
pub fn build_interior_basis(
    length: f64,
    m_max: usize,
    n_profiles: usize,
    grid: &QuadratureGrid,
) -> Result<Vec<FluidMode>, BasisError> {
    let mut out = Vec::new();
    for m in 0..=m_max {
        let parities: &[Parity] =
            if m == 0 { &[Parity::Cos] } else { &[Parity::Sin, Parity::Cos] };
        for &p in parities {
            let family = raw_interior_family(length, m, p, n_profiles);
            out.extend(gram_schmidt_family(family, grid)?);
        }
    }
    Ok(out)
}

/// Gram-Schmidt with a second orthogonalization pass, in the gradient inner
/// product, inside one trig family (profiles combine polynomially).
fn gram_schmidt_family(
    raw: Vec<FluidMode>,
    grid: &QuadratureGrid,
) -> Result<Vec<FluidMode>, BasisError> {
    let mut done: Vec<(FluidMode, ModeTable)> = Vec::new();
    for (i, mut mode) in raw.into_iter().enumerate() {
        let mut table = mode.sample(grid);
        let initial = v1_inner(grid, &table, &table);
        for _pass in 0..2 {
            for (prev_mode, prev_table) in &done {
                let coeff = v1_inner(grid, &table, prev_table);
                mode.profile.axpy(-coeff, &prev_mode.profile);
            }
            table = mode.sample(grid);
        }
        let norm2 = v1_inner(grid, &table, &table);
        if !(norm2 > 1e-24 * initial.max(1.0)) || !norm2.is_finite() {
            return Err(BasisError::RankDeficiency { index: i, norm: norm2.sqrt() });
        }
        mode.profile.scale(1.0 / norm2.sqrt());
        table = mode.sample(grid);
        done.push((mode, table));
    }
    Ok(done.into_iter().map(|(m, _)| m).collect())
}

/// One coupled pair: a velocity mode and (for odd indices) its beam partner.
#[derive(Debug, Clone)]
pub struct BasisPair {
    pub fluid: FluidMode,
    /// 0-based index into the beam basis; None for interior pairs.
    pub beam: Option<usize>,
}

/// The assembled coupled basis with nodal caches and Gram matrices.
#[derive(Debug)]
pub struct BasisSet {
    pub length: f64,
    pub n_pairs: usize,
    pub beam: BeamBasis,
    pub pairs: Vec<BasisPair>,
    pub tables: Vec<ModeTable>,
    pub gram_l2: DMatrix<f64>,
    pub gram_v1: DMatrix<f64>,
    /// Largest integer x wavenumber present (beam or fluid).
    pub m_max: usize,
}

/// Interior enumeration stream: shells of constant m + n, m ascending,
/// Sin before Cos, single entry for m = 0. Deterministic and balanced.
pub fn interior_enumeration(count: usize) -> Vec<(usize, Parity, usize)> {
    let mut out = Vec::with_capacity(count);
    let mut shell = 0;
    while out.len() < count {
        for m in 0..=shell {
            let n = shell - m;
            if m == 0 {
                out.push((0, Parity::Cos, n));
            } else {
                out.push((m, Parity::Sin, n));
                out.push((m, Parity::Cos, n));
            }
        }
        shell += 1;
    }
    out.truncate(count);
    out
}

impl BasisSet {
    pub fn build(length: f64, n_pairs: usize, grid: &QuadratureGrid) -> Result<Self, BasisError> {
        assert!(n_pairs >= 1, "need at least one pair");
        let n_lifted = n_pairs.div_ceil(2);
        let n_interior = n_pairs / 2;
        let beam = build_beam_basis(length, n_lifted, grid);

        // Interior modes in shell order, orthonormalized per family in the
        // order the stream presents them.
        let plan = interior_enumeration(n_interior);
        let mut families: Vec<((usize, Parity), Vec<usize>)> = Vec::new();
        for (slot, &(m, p, _n)) in plan.iter().enumerate() {
            match families.iter_mut().find(|((fm, fp), _)| *fm == m && *fp == p) {
                Some((_, slots)) => slots.push(slot),
                None => families.push(((m, p), vec![slot])),
            }
        }
        let mut interior: Vec<Option<FluidMode>> = vec![None; n_interior];
        for ((m, p), slots) in families {
            let raw = raw_interior_family(length, m, p, slots.len());
            let ortho = gram_schmidt_family(raw, grid)?;
            for (mode, slot) in ortho.into_iter().zip(slots) {
                interior[slot] = Some(mode);
            }
        }

        let mut pairs = Vec::with_capacity(n_pairs);
        let mut interior_iter = interior.into_iter().map(|m| m.expect("filled"));
        for k in 1..=n_pairs {
            if k % 2 == 1 {
                let bidx = (k + 1) / 2 - 1;
                let fluid = build_lifted_mode(&beam.modes[bidx], length)?;
                pairs.push(BasisPair { fluid, beam: Some(bidx) });
            } else {
                pairs.push(BasisPair { fluid: interior_iter.next().expect("enough"), beam: None });
            }
        }

        let tables: Vec<ModeTable> = pairs.iter().map(|p| p.fluid.sample(grid)).collect();
        let n = n_pairs;
        let mut gram_l2 = DMatrix::zeros(n, n);
        let mut gram_v1 = DMatrix::zeros(n, n);
        for j in 0..n {
            for k in j..n {
                let l2 = l2_inner(grid, &tables[j], &tables[k]);
                let v1 = v1_inner(grid, &tables[j], &tables[k]);
                gram_l2[(j, k)] = l2;
                gram_l2[(k, j)] = l2;
                gram_v1[(j, k)] = v1;
                gram_v1[(k, j)] = v1;
            }
        }
        let m_max = pairs
            .iter()
            .map(|p| p.fluid.m)
            .chain(beam.modes.iter().map(|b| b.m))
            .max()
            .unwrap_or(1);
        Ok(Self { length, n_pairs, beam, pairs, tables, gram_l2, gram_v1, m_max })
    }

    /// Number of beam modes (odd pairs).
    pub fn n_beam(&self) -> usize {
        self.beam.modes.len()
    }

    /// Beam partner values at x nodes for global pair k (zero for interior).
    pub fn beam_trace(&self, k: usize) -> Option<&[f64]> {
        self.pairs[k].beam.map(|b| self.beam.vals[b].as_slice())
    }
}

/// Beam projection flavor. `L2` is a true orthogonal projection; `H2Pairing`
/// scales coefficients by 1 + kappa^2 + kappa^4 (pairing against an
/// L2-orthonormal family; not idempotent, kept for comparison runs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BeamProjection {
    L2,
    H2Pairing,
}

/// Projects interface data onto the beam basis: returns (mean, coefficients).
pub fn project_initial_beam(
    basis: &BeamBasis,
    grid: &QuadratureGrid,
    h0_at_x: &[f64],
    flavor: BeamProjection,
) -> (f64, Vec<f64>) {
    assert_eq!(h0_at_x.len(), grid.n_x);
    let mean = grid.integrate_x(|ix| h0_at_x[ix]) / grid.length;
    let coeffs = basis
        .modes
        .iter()
        .enumerate()
        .map(|(kb, mode)| {
            let c = grid.integrate_x(|ix| (h0_at_x[ix] - mean) * basis.vals[kb][ix]);
            match flavor {
                BeamProjection::L2 => c,
                BeamProjection::H2Pairing => {
                    let k2 = mode.wavenumber * mode.wavenumber;
                    c * (1.0 + k2 + k2 * k2)
                }
            }
        })
        .collect();
    (mean, coeffs)
}

/// Initial velocity data sampled on the grid, with the interface trace.
pub struct InitialVelocity<'a> {
    /// Components at the grid nodes (x-major).
    pub u1: &'a [f64],
    pub u2: &'a [f64],
    /// Interface velocity h1 at the x nodes (vertical trace of u at z = 1).
    pub h1_at_x: &'a [f64],
}

/// Tolerances for initial-data admissibility.
#[derive(Debug, Clone, Copy)]
pub struct CompatibilityTolerances {
    pub divergence: f64,
    pub trace: f64,
    pub mean: f64,
}

impl Default for CompatibilityTolerances {
    fn default() -> Self {
        Self { divergence: 1e-8, trace: 1e-8, mean: 1e-10 }
    }
}

/// Projects initial velocity data onto the coupled basis.
///
/// Odd coefficients are the beam projection of the interface velocity (so the
/// coupling trace is matched exactly by construction); even coefficients are
/// gradient-inner-product pairings with the orthonormal interior modes of the
/// transported field v0 = b^T u0.
///
/// Checks first: zero-mean interface velocity, wall trace, interface trace,
/// and weak solenoidality of v0 (spectral differentiation on the grid).
pub fn project_initial_fluid(
    basis: &BasisSet,
    grid: &QuadratureGrid,
    data: &InitialVelocity,
    h0_at_x: &[f64],
    dx_h0_at_x: &[f64],
    tol: &CompatibilityTolerances,
    flavor: BeamProjection,
) -> Result<Vec<f64>, BasisError> {
    let n = basis.n_pairs;
    let nz = grid.n_z;
    assert_eq!(data.u1.len(), grid.n_nodes());
    assert_eq!(data.u2.len(), grid.n_nodes());

    let mean_h1 = grid.integrate_x(|ix| data.h1_at_x[ix]) / grid.length;
    if mean_h1.abs() > tol.mean {
        return Err(BasisError::CompatibilityViolation(format!(
            "interface velocity has nonzero mean {mean_h1}"
        )));
    }

    // Transported field v0 = b^T u0 on the nodes.
    let mut v1 = vec![0.0; grid.n_nodes()];
    let mut v2 = vec![0.0; grid.n_nodes()];
    for ix in 0..grid.n_x {
        for iz in 0..nz {
            let i = ix * nz + iz;
            let z = grid.zs[iz];
            // b^T = [[h, 0], [-z dx_h, 1]]
            v1[i] = h0_at_x[ix] * data.u1[i];
            v2[i] = -z * dx_h0_at_x[ix] * data.u1[i] + data.u2[i];
        }
    }

    // Weak solenoidality of v0 via spectral differentiation. The residual is
    // compared against the gradient magnitude: divergence is a combination of
    // gradient entries, and differentiation roundoff scales the same way.
    let dx_mat = grid.fourier_diff_matrix();
    let dz_mat = grid.z_diff_matrix();
    let mut max_div: f64 = 0.0;
    let mut scale: f64 = 1e-30;
    let mut grad_scale: f64 = 1e-30;
    for ix in 0..grid.n_x {
        for iz in 0..nz {
            let mut d1x = 0.0;
            for jx in 0..grid.n_x {
                d1x += dx_mat[ix][jx] * v1[jx * nz + iz];
            }
            let mut d2z = 0.0;
            for jz in 0..nz {
                d2z += dz_mat[iz][jz] * v2[ix * nz + jz];
            }
            max_div = max_div.max((d1x + d2z).abs());
            grad_scale = grad_scale.max(d1x.abs()).max(d2z.abs());
            scale = scale.max(v1[ix * nz + iz].abs()).max(v2[ix * nz + iz].abs());
        }
    }
    if max_div > tol.divergence * grad_scale.max(1.0) {
        return Err(BasisError::CompatibilityViolation(format!(
            "transported initial velocity is not solenoidal: max divergence {max_div:.3e}"
        )));
    }

    // Wall and interface traces via vertical barycentric interpolation.
    let bw = crate::quadrature::barycentric_weights(&grid.zs);
    for ix in 0..grid.n_x {
        let col1 = &data.u1[ix * nz..(ix + 1) * nz];
        let col2 = &data.u2[ix * nz..(ix + 1) * nz];
        let bottom1 = crate::quadrature::barycentric_eval(&grid.zs, &bw, col1, 0.0);
        let bottom2 = crate::quadrature::barycentric_eval(&grid.zs, &bw, col2, 0.0);
        let top1 = crate::quadrature::barycentric_eval(&grid.zs, &bw, col1, 1.0);
        let top2 = crate::quadrature::barycentric_eval(&grid.zs, &bw, col2, 1.0);
        let s = scale.max(1.0);
        if bottom1.abs() > tol.trace * s || bottom2.abs() > tol.trace * s {
            return Err(BasisError::CompatibilityViolation(format!(
                "initial velocity does not vanish on the bottom wall at x index {ix}"
            )));
        }
        if top1.abs() > tol.trace * s || (top2 - data.h1_at_x[ix]).abs() > tol.trace * s {
            return Err(BasisError::CompatibilityViolation(format!(
                "initial velocity trace at the interface does not match the interface velocity at x index {ix}"
            )));
        }
    }

    // Odd coefficients: beam projection of the interface velocity.
    let (_, h1_coeffs) = project_initial_beam(&basis.beam, grid, data.h1_at_x, flavor);

    let mut alpha = vec![0.0; n];
    for (k, pair) in basis.pairs.iter().enumerate() {
        match pair.beam {
            Some(b) => alpha[k] = h1_coeffs[b],
            None => {
                // Gradient pairing with the orthonormal interior mode; needs
                // grad v0, again by spectral differentiation.
                let t = &basis.tables[k];
                let mut acc = 0.0;
                for ix in 0..grid.n_x {
                    for iz in 0..nz {
                        let i = ix * nz + iz;
                        let mut d1x = 0.0;
                        let mut d2x = 0.0;
                        for jx in 0..grid.n_x {
                            d1x += dx_mat[ix][jx] * v1[jx * nz + iz];
                            d2x += dx_mat[ix][jx] * v2[jx * nz + iz];
                        }
                        let mut d1z = 0.0;
                        let mut d2z = 0.0;
                        for jz in 0..nz {
                            d1z += dz_mat[iz][jz] * v1[ix * nz + jz];
                            d2z += dz_mat[iz][jz] * v2[ix * nz + jz];
                        }
                        acc += grid.weight(iz)
                            * (t.d1x[i] * d1x + t.d1z[i] * d1z + t.d2x[i] * d2x + t.d2z[i] * d2z);
                    }
                }
                alpha[k] = acc;
            }
        }
    }
    Ok(alpha)
}

/// Versioned on-disk cache of the constructive basis data. Node tables and
/// Gram matrices are recomputed on load (deterministic from the descriptors).
pub const BASIS_CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
pub struct BasisCache {
    pub version: u32,
    pub length: f64,
    pub n_pairs: usize,
    pub n_x: usize,
    pub n_z: usize,
    pub fluid_modes: Vec<FluidMode>,
    pub beam_count: usize,
}

impl BasisCache {
    pub fn capture(set: &BasisSet, grid: &QuadratureGrid) -> Self {
        Self {
            version: BASIS_CACHE_VERSION,
            length: set.length,
            n_pairs: set.n_pairs,
            n_x: grid.n_x,
            n_z: grid.n_z,
            fluid_modes: set.pairs.iter().map(|p| p.fluid.clone()).collect(),
            beam_count: set.n_beam(),
        }
    }

    /// Rebuilds a basis set from cached descriptors, validating the key.
    pub fn restore(
        &self,
        length: f64,
        n_pairs: usize,
        grid: &QuadratureGrid,
    ) -> Result<BasisSet, BasisError> {
        if self.version != BASIS_CACHE_VERSION {
            return Err(BasisError::CacheMismatch(format!(
                "cache version {} != {}",
                self.version, BASIS_CACHE_VERSION
            )));
        }
        if self.length != length
            || self.n_pairs != n_pairs
            || self.n_x != grid.n_x
            || self.n_z != grid.n_z
        {
            return Err(BasisError::CacheMismatch(
                "cache key (L, N, n_x, n_z) does not match the request".into(),
            ));
        }
        let beam = build_beam_basis(length, self.beam_count, grid);
        let mut pairs = Vec::with_capacity(n_pairs);
        for (k, fluid) in self.fluid_modes.iter().cloned().enumerate() {
            let beam_idx = if (k + 1) % 2 == 1 { Some((k + 1).div_ceil(2) - 1) } else { None };
            pairs.push(BasisPair { fluid, beam: beam_idx });
        }
        let tables: Vec<ModeTable> = pairs.iter().map(|p| p.fluid.sample(grid)).collect();
        let n = n_pairs;
        let mut gram_l2 = DMatrix::zeros(n, n);
        let mut gram_v1 = DMatrix::zeros(n, n);
        for j in 0..n {
            for k in j..n {
                let l2 = l2_inner(grid, &tables[j], &tables[k]);
                let v1 = v1_inner(grid, &tables[j], &tables[k]);
                gram_l2[(j, k)] = l2;
                gram_l2[(k, j)] = l2;
                gram_v1[(j, k)] = v1;
                gram_v1[(k, j)] = v1;
            }
        }
        let m_max = pairs
            .iter()
            .map(|p| p.fluid.m)
            .chain(beam.modes.iter().map(|b| b.m))
            .max()
            .unwrap_or(1);
        Ok(BasisSet { length, n_pairs, beam, pairs, tables, gram_l2, gram_v1, m_max })
    }
}

/// Suggested vertical resolution for a basis whose stiffest wall layer has
/// width 1/kappa_max. Gauss quadrature of mode products saturates near
/// 0.5 kappa + 12 nodes; spectral differentiation of the layer (used by the
/// admissibility checks) needs the fuller rule pinned here.
pub fn suggested_n_z(kappa_max: f64) -> usize {
    (16.0_f64).max((0.65 * kappa_max).ceil() + 16.0) as usize
}
