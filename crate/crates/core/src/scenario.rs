//! Scenario files: arm, camera, landmarks, scripted instruments, noise,
//! seeds and controller tuning, in TOML.

use std::path::Path;

use nalgebra::{Matrix2, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::controller::VpcConfig;
use crate::error::{Error, Result};
use crate::gpr::{GpHyperparams, INPUT_DIM};
use crate::kinematics::{JointState, RobotModel, DOF};
use crate::safety::{CbfParams, ChanceParams, FovDisc, NoiseParams};
use crate::vision::{CameraIntrinsics, ImageFeature};

/// A square matrix written either as its diagonal or in full (row major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn diagonal(values: &[f64]) -> Self {
        Self::Diagonal(values.to_vec())
    }

    fn entries(&self, n: usize, name: &str) -> Result<Vec<f64>> {
        let bad = || Error::Config(format!("{name}: expected {n} diagonal entries or a {n}x{n} matrix"));
        match self {
            Self::Diagonal(d) if d.len() == n => {
                let mut m = vec![0.0; n * n];
                for i in 0..n {
                    m[i * n + i] = d[i];
                }
                Ok(m)
            }
            Self::Full(rows) if rows.len() == n && rows.iter().all(|r| r.len() == n) => Ok(rows.concat()),
            _ => Err(bad()),
        }
    }

    pub fn to_matrix2(&self, name: &str) -> Result<Matrix2<f64>> {
        Ok(Matrix2::from_row_slice(&self.entries(2, name)?))
    }

    pub fn to_matrix6(&self, name: &str) -> Result<Matrix6<f64>> {
        Ok(Matrix6::from_row_slice(&self.entries(6, name)?))
    }
}

/// Named 3D point in the base frame (m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub label: String,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub position: [f64; 3],
}

/// Piecewise-linear path of one instrument tip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentScript {
    pub label: String,
    pub waypoints: Vec<Waypoint>,
}

impl InstrumentScript {
    /// Tip position at time `t`, held constant outside the scripted interval.
    pub fn position(&self, t: f64) -> Vector3<f64> {
        let w = &self.waypoints;
        let idx = w.partition_point(|p| p.t <= t);
        if idx == 0 {
            return Vector3::from(w[0].position);
        }
        if idx == w.len() {
            return Vector3::from(w[w.len() - 1].position);
        }
        let (a, b) = (&w[idx - 1], &w[idx]);
        let s = (t - a.t) / (b.t - a.t);
        Vector3::from(a.position) * (1.0 - s) + Vector3::from(b.position) * s
    }
}

/// From time `t` on, `label` is the surgical target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub t: f64,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// Center the current landmark.
    Target,
    /// Center a proximity-weighted blend of instruments and landmark.
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualTargetConfig {
    pub mode: TargetMode,
    #[serde(default = "default_d_near")]
    pub d_near: f64,
    #[serde(default = "default_d_far")]
    pub d_far: f64,
}

fn default_d_near() -> f64 {
    0.02
}

fn default_d_far() -> f64 {
    0.08
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Standard deviation of the 3D measurement noise on instrument tips (m).
    pub sigma_process_m: f64,
    /// Process-noise variance assumed by the controller (pixels^2).
    pub sigma_w2: f64,
    #[serde(default = "identity2")]
    pub b_d: MatrixSpec,
}

fn identity2() -> MatrixSpec {
    MatrixSpec::diagonal(&[1.0, 1.0])
}

/// Per-purpose base seeds; a run seed `n` offsets each of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub dh: u64,
    pub noise: u64,
    pub excitation: u64,
}

impl Seeds {
    pub fn for_run(&self, run: u64) -> Seeds {
        let mix = |base: u64| base.wrapping_add(run.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Seeds { dh: mix(self.dh), noise: mix(self.noise), excitation: mix(self.excitation) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub np: usize,
    pub nc: usize,
    pub q: MatrixSpec,
    pub r: MatrixSpec,
    pub alpha: f64,
    pub beta: f64,
    pub p_s: f64,
    pub p_u: f64,
    #[serde(default)]
    pub input_center: [f64; DOF],
    pub input_radius: f64,
    pub input_cov: MatrixSpec,
    /// Defaults to `1e6 * max(Q)`.
    #[serde(default)]
    pub slack_weight: Option<f64>,
    #[serde(default = "default_tracking_gain")]
    pub tracking_gain: f64,
}

fn default_tracking_gain() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub signal_variance: f64,
    pub length_scales: [f64; INPUT_DIM],
    pub noise_variance: f64,
    #[serde(default = "default_offline")]
    pub offline_samples: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    /// Peak joint speed of the excitation episode (rad/s).
    #[serde(default = "default_excitation_speed")]
    pub excitation_speed: f64,
}

fn default_offline() -> usize {
    50
}

fn default_window() -> usize {
    30
}

fn default_excitation_speed() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    #[serde(default = "identity6")]
    pub mac_reference: MatrixSpec,
    /// FoVSR (percent) below which MAE/RMSE are reported as absent.
    #[serde(default = "default_sustained")]
    pub sustained_threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { mac_reference: identity6(), sustained_threshold: default_sustained() }
    }
}

fn identity6() -> MatrixSpec {
    MatrixSpec::diagonal(&[1.0; DOF])
}

fn default_sustained() -> f64 {
    90.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FovConfig {
    pub center: [f64; 2],
    pub radius: f64,
}

/// A complete simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub dt: f64,
    pub duration: f64,
    pub dh_perturb_fraction: f64,
    pub q0: [f64; DOF],
    /// Index of the instrument whose pixel must stay in view.
    #[serde(default)]
    pub active_instrument: usize,
    pub robot: RobotModel,
    pub camera: CameraIntrinsics,
    pub fov: FovConfig,
    pub targets: Vec<Landmark>,
    pub instruments: Vec<InstrumentScript>,
    pub target_schedule: Vec<ScheduleEntry>,
    pub virtual_target: VirtualTargetConfig,
    pub noise: NoiseConfig,
    pub seeds: Seeds,
    pub controller: ControllerConfig,
    pub gp: GpConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl Scenario {
    /// Parses TOML text. Syntax and type errors carry line and column.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::MissingData(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(cfg_err("dt must be positive"));
        }
        if !(self.duration >= self.dt) {
            return Err(cfg_err("duration must cover at least one sample"));
        }
        if !(0.0..1.0).contains(&self.dh_perturb_fraction) {
            return Err(cfg_err("dh_perturb_fraction must lie in [0, 1)"));
        }
        self.robot.validate().map_err(|e| cfg_err(format!("robot: {e}")))?;
        self.camera.validate().map_err(|e| cfg_err(format!("camera: {e}")))?;
        self.fov_disc()?;
        if self.targets.is_empty() {
            return Err(cfg_err("targets must not be empty"));
        }
        if self.instruments.is_empty() {
            return Err(cfg_err("at least one instrument is required"));
        }
        if self.active_instrument >= self.instruments.len() {
            return Err(cfg_err("active_instrument out of range"));
        }
        for ins in &self.instruments {
            if ins.waypoints.is_empty() {
                return Err(cfg_err(format!("instrument '{}' has no waypoints", ins.label)));
            }
            if ins.waypoints.windows(2).any(|w| !(w[1].t > w[0].t)) {
                return Err(cfg_err(format!("instrument '{}': waypoint times must increase strictly", ins.label)));
            }
        }
        if self.target_schedule.is_empty() {
            return Err(cfg_err("target_schedule must not be empty"));
        }
        if self.target_schedule.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(cfg_err("target_schedule times must increase strictly"));
        }
        for e in &self.target_schedule {
            self.landmark(&e.label)?;
        }
        let vt = &self.virtual_target;
        if !(vt.d_near > 0.0 && vt.d_near < vt.d_far) {
            return Err(cfg_err("virtual_target: need 0 < d_near < d_far"));
        }
        if !(self.noise.sigma_process_m >= 0.0) {
            return Err(cfg_err("noise.sigma_process_m must be nonnegative"));
        }
        self.noise_params()?;
        self.vpc_config()?;
        self.gp_hyperparams()?;
        if self.gp.window == 0 {
            return Err(cfg_err("gp.window must be at least 1"));
        }
        self.mac_reference()?;
        Ok(())
    }

    pub fn landmark(&self, label: &str) -> Result<Vector3<f64>> {
        self.targets
            .iter()
            .find(|l| l.label == label)
            .map(|l| Vector3::from(l.position))
            .ok_or_else(|| cfg_err(format!("unknown landmark '{label}'")))
    }

    /// Landmark that is the surgical target at time `t`.
    pub fn target_at(&self, t: f64) -> Result<Vector3<f64>> {
        let idx = self.target_schedule.partition_point(|e| e.t <= t).max(1) - 1;
        self.landmark(&self.target_schedule[idx].label)
    }

    /// Number of control samples in an episode.
    pub fn num_steps(&self) -> usize {
        (self.duration / self.dt + 1e-9).floor() as usize
    }

    pub fn initial_state(&self) -> JointState {
        JointState::from(self.q0)
    }

    pub fn fov_disc(&self) -> Result<FovDisc> {
        FovDisc::new(ImageFeature::new(self.fov.center[0], self.fov.center[1]), self.fov.radius)
            .map_err(|e| cfg_err(format!("fov: {e}")))
    }

    pub fn noise_params(&self) -> Result<NoiseParams> {
        NoiseParams::new(self.noise.sigma_w2, self.noise.b_d.to_matrix2("noise.b_d")?).map_err(|e| cfg_err(format!("noise: {e}")))
    }

    pub fn vpc_config(&self) -> Result<VpcConfig> {
        let c = &self.controller;
        let q = c.q.to_matrix2("controller.q")?;
        let cfg = VpcConfig {
            np: c.np,
            nc: c.nc,
            q,
            r: c.r.to_matrix6("controller.r")?,
            dt: self.dt,
            cbf: CbfParams { alpha: c.alpha, beta: c.beta },
            chance: ChanceParams {
                p_s: c.p_s,
                p_u: c.p_u,
                input_center: Vector6::from(c.input_center),
                input_radius: c.input_radius,
                input_cov: c.input_cov.to_matrix6("controller.input_cov")?,
            },
            slack_weight: c.slack_weight.unwrap_or_else(|| VpcConfig::default_slack_weight(&q)),
            tracking_gain: c.tracking_gain,
        };
        cfg.validate().map_err(|e| cfg_err(format!("controller: {e}")))?;
        Ok(cfg)
    }

    pub fn gp_hyperparams(&self) -> Result<GpHyperparams> {
        let h = GpHyperparams {
            signal_variance: self.gp.signal_variance,
            length_scales: self.gp.length_scales,
            noise_variance: self.gp.noise_variance,
        };
        h.validate().map_err(|e| cfg_err(format!("gp: {e}")))?;
        Ok(h)
    }

    pub fn mac_reference(&self) -> Result<Matrix6<f64>> {
        let m = self.metrics.mac_reference.to_matrix6("metrics.mac_reference")?;
        let eig = nalgebra::SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues;
        if eig.iter().any(|&l| !(l >= -1e-12)) {
            return Err(cfg_err("metrics.mac_reference must be positive semidefinite"));
        }
        Ok(m)
    }
}
