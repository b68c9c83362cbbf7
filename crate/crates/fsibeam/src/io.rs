//! Configuration, trajectory serialization, snapshot export, and
//! checkpointing. Everything numeric is written with the shortest decimal
//! that round-trips, so files reproduce the in-memory doubles bit for bit.

use crate::basis::{suggested_n_z, BasisSet, Parity};
use crate::diagnostics::{EnergyLedger, LedgerTracker};
use crate::error::IoError;
use crate::geometry::DEFAULT_H_FLOOR;
use crate::integrator::{RunConfig, StateVector, StepControls, Termination};
use crate::assembly::PhysicalParams;
use crate::quadrature::QuadratureGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Process exit codes shared by the command-line driver and the C ABI.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONTACT: i32 = 2;
pub const EXIT_PICARD: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

pub fn exit_code_for(termination: &Termination) -> i32 {
    match termination {
        Termination::Completed => EXIT_OK,
        Termination::Contact { .. } => EXIT_CONTACT,
        Termination::PicardFailure { .. } => EXIT_PICARD,
    }
}

/// Closed-form initial data registry, or a sampled state file. Heights are
/// given in physical units: `cosine` means h0 = mean + amplitude cos(2 pi
/// mode x / L) with the fluid at rest, `descending` additionally launches the
/// interface downward with rate -speed cos(2 pi mode x / L).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Flat { mean: f64 },
    Cosine { mean: f64, amplitude: f64, mode: usize },
    Descending { mean: f64, bend: f64, speed: f64, mode: usize },
    /// Seeded coefficients on every basis function; bit-reproducible for a
    /// fixed seed.
    RandomModes { amplitude_u: f64, amplitude_g: f64, seed: u64 },
    /// JSON file holding a full state vector matching the configured sizes.
    StateFile { path: String },
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Flat { mean: 1.0 }
    }
}

/// Complete description of one simulation. Field names double as the
/// override keys accepted by `apply_override`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Period of the channel (L).
    pub length: f64,
    /// Fluid density (rho_f).
    pub rho_f: f64,
    /// Beam linear density (rho_s).
    pub rho_s: f64,
    /// Dynamic viscosity (mu).
    pub mu: f64,
    /// Beam tension coefficient (beta).
    pub beta: f64,
    /// Beam flexural rigidity (alpha).
    pub alpha: f64,
    /// Number of velocity basis pairs (N).
    pub n_pairs: usize,
    /// Quadrature nodes in x; 0 picks a resolution matched to N.
    pub n_x: usize,
    /// Quadrature nodes in z; 0 picks a resolution matched to N.
    pub n_z: usize,
    /// Multiplier on the automatic quadrature resolutions.
    pub oversampling: f64,
    pub dt: f64,
    pub t_end: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    /// Numerical validity floor for the height inside assembly.
    pub h_floor: f64,
    /// Physical contact threshold ending the run; 0 disables.
    pub contact_floor: f64,
    /// Retry failed steps at half the step size instead of stopping.
    pub adaptive_dt: bool,
    pub initial: InitialData,
    /// Ledger output cadence; must divide t_end and be a multiple of dt.
    pub output_dt: f64,
    pub timeseries_path: Option<String>,
    pub snapshot_path: Option<String>,
    pub checkpoint_path: Option<String>,
    /// Uniform export grid for snapshots (cells; nodes are +1).
    pub snapshot_n_x: usize,
    pub snapshot_n_z: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            length: 1.0,
            rho_f: 1.0,
            rho_s: 1.0,
            mu: 1.0,
            beta: 1.0,
            alpha: 1.0,
            n_pairs: 8,
            n_x: 0,
            n_z: 0,
            oversampling: 1.0,
            dt: 1e-3,
            t_end: 0.1,
            picard_tol: 1e-10,
            picard_max_iter: 25,
            h_floor: DEFAULT_H_FLOOR,
            contact_floor: 0.0,
            adaptive_dt: false,
            initial: InitialData::default(),
            output_dt: 1e-2,
            timeseries_path: None,
            snapshot_path: None,
            checkpoint_path: None,
            snapshot_n_x: 64,
            snapshot_n_z: 32,
        }
    }
}

fn require(ok: bool, field: &str, msg: String) -> Result<(), IoError> {
    if ok {
        Ok(())
    } else {
        Err(IoError::SchemaError(format!("{field}: {msg}")))
    }
}

/// Ratio of two positive durations when it is an integer (within roundoff).
fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    let ratio = num / den;
    let rounded = ratio.round();
    if rounded >= 1.0 && (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0) {
        Some(rounded as usize)
    } else {
        None
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), IoError> {
        require(self.length > 0.0, "length", format!("must be > 0, got {}", self.length))?;
        require(self.rho_f > 0.0, "rho_f", format!("must be > 0, got {}", self.rho_f))?;
        require(self.rho_s > 0.0, "rho_s", format!("must be > 0, got {}", self.rho_s))?;
        require(self.mu > 0.0, "mu", format!("must be > 0, got {}", self.mu))?;
        require(self.beta > 0.0, "beta", format!("must be > 0, got {}", self.beta))?;
        require(self.alpha > 0.0, "alpha", format!("must be > 0, got {}", self.alpha))?;
        require(self.n_pairs >= 2, "n_pairs", format!("must be >= 2, got {}", self.n_pairs))?;
        require(
            self.oversampling > 0.0,
            "oversampling",
            format!("must be > 0, got {}", self.oversampling),
        )?;
        require(self.dt > 0.0, "dt", format!("must be > 0, got {}", self.dt))?;
        require(self.t_end > 0.0, "t_end", format!("must be > 0, got {}", self.t_end))?;
        require(self.picard_tol > 0.0, "picard_tol", "must be > 0".to_string())?;
        require(self.picard_max_iter >= 1, "picard_max_iter", "must be >= 1".to_string())?;
        require(self.h_floor > 0.0, "h_floor", format!("must be > 0, got {}", self.h_floor))?;
        require(self.output_dt > 0.0, "output_dt", "must be > 0".to_string())?;
        require(
            integer_ratio(self.output_dt, self.dt).is_some(),
            "output_dt",
            format!("must be an integer multiple of dt, got {}/{}", self.output_dt, self.dt),
        )?;
        require(
            integer_ratio(self.t_end, self.output_dt).is_some(),
            "t_end",
            format!(
                "must be an integer multiple of output_dt, got {}/{}",
                self.t_end, self.output_dt
            ),
        )?;
        require(
            self.snapshot_n_x >= 1 && self.snapshot_n_z >= 1,
            "snapshot_n_x",
            "export grid needs at least one cell per direction".to_string(),
        )?;
        match &self.initial {
            InitialData::Flat { mean } => {
                require(*mean > 0.0, "initial.mean", format!("must be > 0, got {mean}"))?;
            }
            InitialData::Cosine { mean, amplitude, mode } => {
                require(*mean > 0.0, "initial.mean", format!("must be > 0, got {mean}"))?;
                require(
                    amplitude.abs() < *mean,
                    "initial.amplitude",
                    "must keep the height positive".to_string(),
                )?;
                require(*mode >= 1, "initial.mode", "must be >= 1".to_string())?;
            }
            InitialData::Descending { mean, bend, speed, mode } => {
                require(*mean > 0.0, "initial.mean", format!("must be > 0, got {mean}"))?;
                require(
                    bend.abs() < *mean,
                    "initial.bend",
                    "must keep the height positive".to_string(),
                )?;
                require(speed.is_finite(), "initial.speed", "must be finite".to_string())?;
                require(*mode >= 1, "initial.mode", "must be >= 1".to_string())?;
            }
            InitialData::RandomModes { amplitude_u, amplitude_g, .. } => {
                require(
                    amplitude_u.is_finite() && amplitude_g.is_finite(),
                    "initial.amplitude_u",
                    "must be finite".to_string(),
                )?;
            }
            InitialData::StateFile { path } => {
                require(!path.is_empty(), "initial.path", "must not be empty".to_string())?;
            }
        }
        Ok(())
    }

    /// Quadrature resolution: explicit values win, zeros are filled from the
    /// basis size, and `oversampling` scales the automatic choice.
    pub fn resolution(&self) -> (usize, usize) {
        let k_beam = self.n_pairs.div_ceil(2);
        let m_max = k_beam.div_ceil(2).max(2);
        let kappa_max = 2.0 * std::f64::consts::PI * m_max as f64 / self.length;
        let auto_x = (8 * m_max).max(24);
        let auto_z = suggested_n_z(kappa_max);
        let scale = |n: usize| ((n as f64 * self.oversampling).ceil() as usize).max(4);
        let n_x = if self.n_x > 0 { self.n_x } else { scale(auto_x) };
        let n_z = if self.n_z > 0 { self.n_z } else { scale(auto_z) };
        (n_x, n_z)
    }

    pub fn params(&self) -> PhysicalParams {
        PhysicalParams {
            rho_f: self.rho_f,
            rho_s: self.rho_s,
            mu: self.mu,
            beta: self.beta,
            alpha: self.alpha,
        }
    }

    /// Steps between kept snapshots (output_dt / dt).
    pub fn snapshot_every(&self) -> usize {
        integer_ratio(self.output_dt, self.dt).unwrap_or(1)
    }

    pub fn run_config(&self) -> RunConfig {
        let mut rc = RunConfig::new(self.dt, self.t_end);
        rc.controls = StepControls {
            h_floor: self.h_floor,
            picard_tol: self.picard_tol,
            picard_max_iter: self.picard_max_iter,
            ..StepControls::default()
        };
        rc.contact_floor = self.contact_floor;
        rc.snapshot_every = self.snapshot_every();
        rc.allow_dt_halving = self.adaptive_dt;
        rc
    }

    /// Stable content hash of the fields that define the problem being
    /// integrated (hex SHA-256 of their canonical JSON), stored in
    /// checkpoints to refuse mismatched resumes. Schedule and output
    /// settings are deliberately excluded so a run can be extended or
    /// re-sampled from a checkpoint.
    pub fn config_hash(&self) -> String {
        let identity = serde_json::json!({
            "length": self.length,
            "rho_f": self.rho_f,
            "rho_s": self.rho_s,
            "mu": self.mu,
            "beta": self.beta,
            "alpha": self.alpha,
            "n_pairs": self.n_pairs,
            "n_x": self.n_x,
            "n_z": self.n_z,
            "oversampling": self.oversampling,
            "h_floor": self.h_floor,
            "initial": self.initial,
        });
        let json = serde_json::to_string(&identity).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            let _ = write!(out, "{byte:02x}");
        }
        out
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<SimConfig, IoError> {
    let text = std::fs::read_to_string(path)?;
    let config: SimConfig =
        serde_json::from_str(&text).map_err(|e| IoError::SchemaError(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn write_config(path: impl AsRef<Path>, config: &SimConfig) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(config)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Applies one `key=value` override. Keys are config field names, with dots
/// for nested fields (`initial.amplitude`). Values are parsed as JSON, or
/// taken as strings when that fails (so paths need no extra quoting).
pub fn apply_override(config: &mut SimConfig, setting: &str) -> Result<(), IoError> {
    let (key, raw) = setting
        .split_once('=')
        .ok_or_else(|| IoError::SchemaError(format!("override '{setting}' is not key=value")))?;
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut tree = serde_json::to_value(&*config)?;
    let mut node = &mut tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| IoError::SchemaError(format!("{key}: not a settable key")))?;
        if depth + 1 == parts.len() {
            if !map.contains_key(*part) && *part != "kind" {
                return Err(IoError::SchemaError(format!("{key}: no such config key")));
            }
            map.insert((*part).to_string(), value);
            break;
        }
        node = map
            .get_mut(*part)
            .ok_or_else(|| IoError::SchemaError(format!("{key}: no such config key")))?;
    }
    *config = serde_json::from_value(tree).map_err(|e| IoError::SchemaError(e.to_string()))?;
    Ok(())
}

/// Builds the quadrature grid and basis for a validated configuration.
pub fn build_problem(config: &SimConfig) -> Result<(BasisSet, QuadratureGrid), IoError> {
    let (n_x, n_z) = config.resolution();
    let grid = QuadratureGrid::build(config.length, n_x, n_z)
        .map_err(|e| IoError::SchemaError(format!("n_x/n_z: {e}")))?;
    let basis = BasisSet::build(config.length, config.n_pairs, &grid)
        .map_err(|e| IoError::SchemaError(format!("n_pairs: {e}")))?;
    Ok((basis, grid))
}

fn cos_coefficient_index(basis: &BasisSet, mode: usize) -> Result<usize, IoError> {
    basis
        .beam
        .modes
        .iter()
        .position(|md| md.m == mode && md.parity == Parity::Cos)
        .ok_or_else(|| {
            IoError::SchemaError(format!(
                "initial.mode: cosine mode {mode} needs n_pairs >= {}",
                4 * mode
            ))
        })
}

/// Realizes the configured initial data on a basis.
pub fn initial_state(config: &SimConfig, basis: &BasisSet) -> Result<StateVector, IoError> {
    let n = basis.n_pairs;
    let n_beam = basis.n_beam();
    let state = match &config.initial {
        InitialData::Flat { mean } => StateVector {
            t: 0.0,
            alpha: vec![0.0; n],
            g_mean: *mean,
            g_coeffs: vec![0.0; n_beam],
        },
        InitialData::Cosine { mean, amplitude, mode } => {
            let b = cos_coefficient_index(basis, *mode)?;
            let mut g = vec![0.0; n_beam];
            // Physical amplitude over the orthonormal mode amplitude.
            g[b] = amplitude / basis.beam.modes[b].amplitude;
            StateVector { t: 0.0, alpha: vec![0.0; n], g_mean: *mean, g_coeffs: g }
        }
        InitialData::Descending { mean, bend, speed, mode } => {
            let b = cos_coefficient_index(basis, *mode)?;
            let scale = basis.beam.modes[b].amplitude;
            let mut g = vec![0.0; n_beam];
            g[b] = -bend / scale;
            let mut alpha = vec![0.0; n];
            alpha[2 * b] = -speed / scale;
            StateVector { t: 0.0, alpha, g_mean: *mean, g_coeffs: g }
        }
        InitialData::RandomModes { amplitude_u, amplitude_g, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            StateVector {
                t: 0.0,
                alpha: (0..n).map(|_| amplitude_u * (rng.gen::<f64>() - 0.5)).collect(),
                g_mean: 1.0,
                g_coeffs: (0..n_beam)
                    .map(|_| amplitude_g * (rng.gen::<f64>() - 0.5))
                    .collect(),
            }
        }
        InitialData::StateFile { path } => {
            let text = std::fs::read_to_string(path)?;
            let state: StateVector =
                serde_json::from_str(&text).map_err(|e| IoError::SchemaError(e.to_string()))?;
            require(
                state.alpha.len() == n,
                "initial.path",
                format!("state has {} coefficients, config needs {}", state.alpha.len(), n),
            )?;
            require(
                state.g_coeffs.len() == n_beam,
                "initial.path",
                format!(
                    "state has {} interface coefficients, config needs {}",
                    state.g_coeffs.len(),
                    n_beam
                ),
            )?;
            state
        }
    };
    Ok(state)
}

/// Fixed ledger CSV column order.
pub const TIMESERIES_HEADER: &str =
    "t,e_kinetic_fluid,e_kinetic_beam,e_elastic,dissipation_cum,balance_residual";

pub fn write_timeseries(path: impl AsRef<Path>, rows: &[EnergyLedger]) -> Result<(), IoError> {
    let mut out = String::from(TIMESERIES_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.t,
            r.e_kinetic_fluid,
            r.e_kinetic_beam,
            r.e_elastic,
            r.dissipation_cum,
            r.balance_residual
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_timeseries(path: impl AsRef<Path>) -> Result<Vec<EnergyLedger>, IoError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != TIMESERIES_HEADER {
        return Err(IoError::SchemaError(format!("timeseries header: got '{header}'")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(IoError::SchemaError(format!(
                "timeseries row {}: expected 6 fields, got {}",
                i + 1,
                fields.len()
            )));
        }
        let parse = |s: &str, name: &str| {
            s.parse::<f64>().map_err(|_| {
                IoError::SchemaError(format!("timeseries row {}: bad {name} '{s}'", i + 1))
            })
        };
        rows.push(EnergyLedger {
            t: parse(fields[0], "t")?,
            e_kinetic_fluid: parse(fields[1], "e_kinetic_fluid")?,
            e_kinetic_beam: parse(fields[2], "e_kinetic_beam")?,
            e_elastic: parse(fields[3], "e_elastic")?,
            dissipation_cum: parse(fields[4], "dissipation_cum")?,
            balance_residual: parse(fields[5], "balance_residual")?,
        });
    }
    Ok(rows)
}

/// Fixed snapshot CSV column order: reference coordinates, the physical
/// height of the node (y = h z), transported velocity components, and the
/// interface height and rate above the node's x.
pub const SNAPSHOT_HEADER: &str = "x,z,y,u1,u2,h,dt_h";

/// Writes the state on a uniform (snapshot_n_x+1) x (snapshot_n_z+1) export
/// grid including both walls, with every field evaluated in closed form.
pub fn write_snapshot(
    path: impl AsRef<Path>,
    basis: &BasisSet,
    state: &StateVector,
    n_x: usize,
    n_z: usize,
) -> Result<(), IoError> {
    let v = state.beam_velocity(basis);
    let mut out = String::from(SNAPSHOT_HEADER);
    out.push('\n');
    for i in 0..=n_x {
        let x = basis.length * i as f64 / n_x as f64;
        let mut h = state.g_mean;
        let mut dxh = 0.0;
        let mut dth = 0.0;
        for (b, md) in basis.beam.modes.iter().enumerate() {
            h += state.g_coeffs[b] * md.eval(x);
            dxh += state.g_coeffs[b] * md.dx(x);
            dth += v[b] * md.eval(x);
        }
        for j in 0..=n_z {
            let z = j as f64 / n_z as f64;
            let mut p1 = 0.0;
            let mut p2 = 0.0;
            for (k, pair) in basis.pairs.iter().enumerate() {
                let a = state.alpha[k];
                if a == 0.0 {
                    continue;
                }
                let pt = pair.fluid.eval(x, z);
                p1 += a * pt.v1;
                p2 += a * pt.v2;
            }
            let u1 = p1 / h;
            let u2 = z * dxh / h * p1 + p2;
            let _ = writeln!(out, "{},{},{},{},{},{},{}", x, z, h * z, u1, u2, h, dth);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Versioned resume point: the configuration hash guards against resuming
/// under different parameters, the tracker carries the energy accumulation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub state: StateVector,
    pub ledger: LedgerTracker,
}

pub fn write_checkpoint(
    path: impl AsRef<Path>,
    config: &SimConfig,
    state: &StateVector,
    ledger: &LedgerTracker,
) -> Result<(), IoError> {
    let cp = Checkpoint {
        version: CHECKPOINT_VERSION,
        config_hash: config.config_hash(),
        state: state.clone(),
        ledger: ledger.clone(),
    };
    let text = serde_json::to_string(&cp)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_checkpoint(
    path: impl AsRef<Path>,
    config: &SimConfig,
) -> Result<(StateVector, LedgerTracker), IoError> {
    let text = std::fs::read_to_string(path)?;
    let cp: Checkpoint = serde_json::from_str(&text)?;
    if cp.version != CHECKPOINT_VERSION {
        return Err(IoError::VersionMismatch {
            found: cp.version.to_string(),
            expected: CHECKPOINT_VERSION.to_string(),
        });
    }
    if cp.config_hash != config.config_hash() {
        return Err(IoError::ConfigHashMismatch);
    }
    Ok((cp.state, cp.ledger))
}
