//! Coordinate change between the moving fluid domain under the interface
//! y = h(t,x) and the fixed reference strip [0,L] x [0,1].
//!
//! A field f on the moving domain corresponds to f_hat(t,x,z) = f(t,x,h(t,x)z)
//! on the strip. The matrices below carry the metric of that map:
//! `b` transports gradients, `a = b^T b / h` weights the viscous form, and
//! det(b) = h is the volume factor.

use crate::error::GeometryError;
use crate::quadrature::{barycentric_eval, barycentric_weights, QuadratureGrid};

pub type Mat2 = [[f64; 2]; 2];
pub type Vec2 = [f64; 2];

/// Default floor below which the transformation is treated as singular.
pub const DEFAULT_H_FLOOR: f64 = 1e-6;

/// Pointwise geometry data at a single (x, z) location.
///
/// All x-derivatives refer to the interface height h(t, x); `z` is the
/// reference vertical coordinate in [0, 1].
#[derive(Debug, Clone, Copy)]
pub struct GeometrySample {
    pub h: f64,
    pub dx_h: f64,
    pub dxx_h: f64,
    pub dt_h: f64,
    pub dtdx_h: f64,
    pub z: f64,
}

impl GeometrySample {
    pub fn flat(h: f64, z: f64) -> Self {
        Self { h, dx_h: 0.0, dxx_h: 0.0, dt_h: 0.0, dtdx_h: 0.0, z }
    }
}

/// Transformation matrices at one point of the strip.
#[derive(Debug, Clone, Copy)]
pub struct TransformMatrices {
    /// Viscous metric a = b^T b / h; symmetric positive definite for h > 0.
    pub a: Mat2,
    /// Gradient transport matrix; det(b) = h.
    pub b: Mat2,
    /// Inverse transpose of b.
    pub b_inv_t: Mat2,
    /// Time derivative of b.
    pub dt_b: Mat2,
    /// Time derivative of b_inv_t.
    pub dt_b_inv_t: Mat2,
    /// Domain velocity (0, z * dt_h): the rate of the map at fixed (x, z).
    pub chi_dt: Vec2,
}

/// Velocity correction making (dt g, dt u_hat + G) an admissible coupled test
/// pair: G = b^{-T} dt(b^T) u_hat. Depends on the horizontal component only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionField {
    pub u1: f64,
    pub u2: f64,
}

/// Interface forcing field phi = b^{-T} dt(b^T) (dt u_hat + G) in closed form.
/// Vanishes on z = 1 whenever the horizontal velocity does.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressureTestField {
    pub u1: f64,
    pub u2: f64,
}

pub fn transform_matrices(
    s: &GeometrySample,
    h_floor: f64,
) -> Result<TransformMatrices, GeometryError> {
    if !(s.h > h_floor) {
        return Err(GeometryError::NonPositiveHeight { h: s.h, x: f64::NAN, floor: h_floor });
    }
    let zdx = s.z * s.dx_h;
    let a = [[s.h, -zdx], [-zdx, (1.0 + zdx * zdx) / s.h]];
    let b = [[s.h, -zdx], [0.0, 1.0]];
    let b_inv_t = [[1.0 / s.h, 0.0], [zdx / s.h, 1.0]];
    let dt_b = [[s.dt_h, -s.z * s.dtdx_h], [0.0, 0.0]];
    let h2 = s.h * s.h;
    let dt_b_inv_t = [
        [-s.dt_h / h2, 0.0],
        [s.z * (s.dtdx_h * s.h - s.dx_h * s.dt_h) / h2, 0.0],
    ];
    let chi_dt = [0.0, s.dt_h * s.z];
    Ok(TransformMatrices { a, b, b_inv_t, dt_b, dt_b_inv_t, chi_dt })
}

pub fn correction_field(s: &GeometrySample, u1: f64) -> CorrectionField {
    // Closed form of b^{-T} dt(b^T) (u1, u2): the second column of dt(b^T)
    // vanishes, so only u1 enters.
    CorrectionField {
        u1: s.dt_h / s.h * u1,
        u2: s.z / s.h * s.dt_h * s.dx_h * u1 - s.z * s.dtdx_h * u1,
    }
}

pub fn pressure_test_field(s: &GeometrySample, u1: f64, dt_u1: f64) -> PressureTestField {
    let dt2 = s.dt_h * s.dt_h;
    PressureTestField {
        u1: s.dt_h / s.h * dt_u1 + dt2 / (s.h * s.h) * u1,
        u2: s.z / s.h * s.dt_h * s.dx_h * dt_u1 + s.z / (s.h * s.h) * dt2 * s.dx_h * u1
            - s.z * s.dtdx_h * dt_u1
            - s.z / s.h * s.dt_h * s.dtdx_h * u1,
    }
}

/// A priori bound on the first possible contact time for an interface that
/// starts at distance `delta` from the bottom with initial-data size `c0`.
pub fn contact_bound(delta: f64, c0: f64) -> f64 {
    (delta / c0.sqrt()).powf(1.5)
}

/// Largest observed Hoelder quotient sup |h(t1,x) - h(t2,y)| / (3 sqrt(c0) r)
/// over pairs with periodic |x - y| < r/2 and 0 < t2 - t1 <= r^(3/2).
///
/// `heights[i]` holds h(times[i], x) at the nodes `xs` of an L-periodic grid.
/// A value <= 1 means the trajectory respects the continuity envelope.
pub fn hoelder_check(
    times: &[f64],
    heights: &[Vec<f64>],
    xs: &[f64],
    length: f64,
    c0: f64,
    r: f64,
) -> f64 {
    assert_eq!(times.len(), heights.len());
    let denom = 3.0 * c0.sqrt() * r;
    let t_window = r.powf(1.5);
    let mut worst: f64 = 0.0;
    for (i1, t1) in times.iter().enumerate() {
        for (i2, t2) in times.iter().enumerate().skip(i1 + 1) {
            let dt = t2 - t1;
            if dt <= 0.0 || dt > t_window {
                continue;
            }
            for (j1, x) in xs.iter().enumerate() {
                for (j2, y) in xs.iter().enumerate() {
                    let mut d = (x - y).abs() % length;
                    d = d.min(length - d);
                    if d < 0.5 * r {
                        let diff = (heights[i1][j1] - heights[i2][j2]).abs();
                        worst = worst.max(diff / denom);
                    }
                }
            }
        }
    }
    worst
}

/// Samples a physical-domain function onto the reference strip:
/// values[ix * n_z + iz] = f(x_ix, h(x_ix) * z_iz).
pub fn pullback(
    grid: &QuadratureGrid,
    h_at_x: &[f64],
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    assert_eq!(h_at_x.len(), grid.n_x);
    let mut vals = vec![0.0; grid.n_nodes()];
    for ix in 0..grid.n_x {
        for iz in 0..grid.n_z {
            vals[ix * grid.n_z + iz] = f(grid.xs[ix], h_at_x[ix] * grid.zs[iz]);
        }
    }
    vals
}

/// Evaluates a strip-sampled field at physical height y over column ix via
/// barycentric interpolation in the vertical quadrature nodes.
pub struct Pushforward<'a> {
    grid: &'a QuadratureGrid,
    h_at_x: &'a [f64],
    values: &'a [f64],
    bary: Vec<f64>,
}

impl<'a> Pushforward<'a> {
    pub fn new(grid: &'a QuadratureGrid, h_at_x: &'a [f64], values: &'a [f64]) -> Self {
        assert_eq!(values.len(), grid.n_nodes());
        assert_eq!(h_at_x.len(), grid.n_x);
        Self { grid, h_at_x, values, bary: barycentric_weights(&grid.zs) }
    }

    pub fn eval(&self, ix: usize, y: f64) -> f64 {
        let z = y / self.h_at_x[ix];
        let col = &self.values[ix * self.grid.n_z..(ix + 1) * self.grid.n_z];
        barycentric_eval(&self.grid.zs, &self.bary, col, z)
    }
}
