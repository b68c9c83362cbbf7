//! Tensor-product quadrature on the reference strip [0,L] x [0,1].
//!
//! x direction: equispaced nodes with the periodic trapezoid rule, which is
//! exact for trigonometric polynomials below the Nyquist wavenumber.
//! z direction: Gauss-Legendre, exact for polynomials of degree <= 2 n_z - 1
//! and superalgebraically convergent for the analytic wall-layer profiles.

use crate::error::AssemblyError;

/// Quadrature nodes and weights for the reference strip.
///
/// Node storage is x-major: flat index `ix * n_z + iz`.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub length: f64,
    pub n_x: usize,
    pub n_z: usize,
    pub xs: Vec<f64>,
    pub zs: Vec<f64>,
    /// Uniform x weight L / n_x.
    pub wx: f64,
    /// Gauss-Legendre z weights on [0,1].
    pub wz: Vec<f64>,
}

impl QuadratureGrid {
    pub fn build(length: f64, n_x: usize, n_z: usize) -> Result<Self, AssemblyError> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(AssemblyError::InvalidResolution(format!(
                "domain length must be positive and finite, got {length}"
            )));
        }
        if n_x < 4 || n_x % 2 != 0 {
            return Err(AssemblyError::InvalidResolution(format!(
                "n_x must be even and >= 4, got {n_x}"
            )));
        }
        if n_z < 2 {
            return Err(AssemblyError::InvalidResolution(format!(
                "n_z must be >= 2, got {n_z}"
            )));
        }
        let xs = (0..n_x).map(|i| length * i as f64 / n_x as f64).collect();
        let (zs, wz) = gauss_legendre_unit(n_z);
        Ok(Self { length, n_x, n_z, xs, zs, wx: length / n_x as f64, wz })
    }

    /// Checks that the grid resolves products of modes up to `m_max` in x
    /// (cubic nonlinearity => factor 4 headroom) and the stated z degree.
    pub fn validate_for_modes(&self, m_max: usize, z_degree: usize) -> Result<(), AssemblyError> {
        if self.n_x < 4 * m_max.max(1) {
            return Err(AssemblyError::InvalidResolution(format!(
                "n_x = {} cannot resolve mode products up to wavenumber index {m_max}; need >= {}",
                self.n_x,
                4 * m_max.max(1)
            )));
        }
        if 2 * self.n_z < 2 * z_degree + 2 {
            return Err(AssemblyError::InvalidResolution(format!(
                "n_z = {} insufficient for z-degree {z_degree}",
                self.n_z
            )));
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_x * self.n_z
    }

    /// Combined weight of flat node `ix * n_z + iz`.
    #[inline]
    pub fn weight(&self, iz: usize) -> f64 {
        self.wx * self.wz[iz]
    }

    /// Integrates a nodal sampling over the strip.
    pub fn integrate(&self, f: impl Fn(usize, usize) -> f64) -> f64 {
        let mut acc = 0.0;
        for ix in 0..self.n_x {
            for iz in 0..self.n_z {
                acc += self.wx * self.wz[iz] * f(ix, iz);
            }
        }
        acc
    }

    /// Integrates a function of x alone over [0, L].
    pub fn integrate_x(&self, f: impl Fn(usize) -> f64) -> f64 {
        (0..self.n_x).map(|ix| self.wx * f(ix)).sum()
    }

    /// Spectral x-derivative matrix for the periodic equispaced nodes
    /// (dense n_x x n_x; applied to nodal values of an L-periodic function).
    pub fn fourier_diff_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.n_x;
        let scale = 2.0 * std::f64::consts::PI / self.length;
        let mut d = vec![vec![0.0; n]; n];
        // Even-n periodic differentiation matrix (Trefethen, Spectral Methods
        // in MATLAB, eq. 3.7), rescaled from period 2*pi to period L.
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let k = i as isize - j as isize;
                    let angle = std::f64::consts::PI * k as f64 / n as f64;
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    d[i][j] = scale * 0.5 * sign / angle.tan();
                }
            }
        }
        d
    }

    /// Barycentric differentiation matrix on the z nodes.
    pub fn z_diff_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.n_z;
        let w = barycentric_weights(&self.zs);
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..n {
                if i != j {
                    d[i][j] = (w[j] / w[i]) / (self.zs[i] - self.zs[j]);
                    row_sum += d[i][j];
                }
            }
            d[i][i] = -row_sum;
        }
        d
    }
}

/// Barycentric interpolation weights for a node set.
pub fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![1.0; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                w[i] /= nodes[i] - nodes[j];
            }
        }
    }
    w
}

/// Evaluates the barycentric interpolant of `values` (on `nodes`) at `t`.
pub fn barycentric_eval(nodes: &[f64], weights: &[f64], values: &[f64], t: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..nodes.len() {
        let diff = t - nodes[i];
        if diff == 0.0 {
            return values[i];
        }
        let c = weights[i] / diff;
        num += c * values[i];
        den += c;
    }
    num / den
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    (
        x.iter().map(|v| 0.5 * (v + 1.0)).collect(),
        w.iter().map(|v| 0.5 * v).collect(),
    )
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on the
/// Legendre recurrence. Nodes are ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi-style initial guess, then Newton.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                let (p2, d2) = legendre_and_derivative(n, x);
                dp = d2;
                x -= p2 / d2;
                break;
            }
        }
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        let (_, d) = legendre_and_derivative(n, 0.0);
        nodes[n / 2] = 0.0;
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
