//! Ground-truth plant with a perturbed arm and noisy measurements, virtual
//! target computation, and episode execution.
//!
//! The true arm is registered so that its camera pose coincides with the
//! nominal one at the initial configuration; away from it the two drift
//! apart, which is the disturbance the controllers have to cope with.

use std::io::{Read, Write};

use nalgebra::{Matrix2x6, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::controller::{gp_features, Controller, ControllerVariant, Observation, SolveStatus, VpcConfig};
use crate::error::{invalid, Error, Result};
use crate::gpr::{residual_target, GpDataset, GpModel};
use crate::kinematics::{forward_kinematics, geometric_jacobian, perturb_dh, JointState, Pose, RobotModel, DOF};
use crate::safety::{self, FovDisc};
use crate::scenario::{Scenario, TargetMode};
use crate::vision::{
    base_to_camera_twist, image_jacobian, interaction_matrix, project, projection_jacobian, to_camera_frame, CameraIntrinsics,
    FeatureDepth, ImageFeature,
};

/// Convex weights of the two instrument tips and the landmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualTargetWeights {
    pub w_n1: f64,
    pub w_n2: f64,
    pub w_l: f64,
}

impl VirtualTargetWeights {
    pub const LANDMARK: Self = Self { w_n1: 0.0, w_n2: 0.0, w_l: 1.0 };

    pub fn new(w_n1: f64, w_n2: f64, w_l: f64) -> Result<Self> {
        let w = Self { w_n1, w_n2, w_l };
        if [w_n1, w_n2, w_l].iter().any(|&x| !(x >= 0.0)) || ((w_n1 + w_n2 + w_l) - 1.0).abs() > 1e-12 {
            return Err(invalid("virtual-target weights must be nonnegative and sum to 1"));
        }
        Ok(w)
    }
}

/// `p_v = w_n1 p_n1 + w_n2 p_n2 + w_l p_l`.
pub fn virtual_target(p_n1: &Vector3<f64>, p_n2: &Vector3<f64>, p_l: &Vector3<f64>, w: &VirtualTargetWeights) -> Vector3<f64> {
    p_n1 * w.w_n1 + p_n2 * w.w_n2 + p_l * w.w_l
}

/// Proximity schedule: the landmark weight falls linearly from 0.5 (active
/// instrument within `d_near` of the target) to 0.2 (beyond `d_far`); the rest
/// is split between the instruments in proportion to their inverse distance
/// to the target.
pub fn weight_update(dist_n1: f64, dist_n2: f64, d_near: f64, d_far: f64) -> Result<VirtualTargetWeights> {
    if !(d_near > 0.0 && d_near < d_far) {
        return Err(invalid("need 0 < d_near < d_far"));
    }
    if !(dist_n1 >= 0.0 && dist_n2 >= 0.0) {
        return Err(invalid("distances must be nonnegative"));
    }
    let rho = ((dist_n1 - d_near) / (d_far - d_near)).clamp(0.0, 1.0);
    let w_l = 0.5 * (1.0 - rho) + 0.2 * rho;
    let inv1 = 1.0 / dist_n1.max(1e-9);
    let inv2 = 1.0 / dist_n2.max(1e-9);
    let rest = 1.0 - w_l;
    let w_n1 = rest * inv1 / (inv1 + inv2);
    let w_n2 = rest * inv2 / (inv1 + inv2);
    let sum = w_n1 + w_n2 + w_l;
    Ok(VirtualTargetWeights { w_n1: w_n1 / sum, w_n2: w_n2 / sum, w_l: w_l / sum })
}

/// The disturbed ground truth.
#[derive(Debug, Clone)]
pub struct PlantState {
    /// Perturbed arm.
    pub model: RobotModel,
    /// Pose of the true arm base in the nominal base frame.
    pub base: Pose,
    pub camera: CameraIntrinsics,
    pub q: JointState,
    /// Instrument tips (base frame).
    pub instruments: Vec<Vector3<f64>>,
    /// Index of the instrument that is measured.
    pub tracked: usize,
    /// Standard deviation of the 3D measurement noise (m).
    pub sigma_m: f64,
    rng: ChaCha8Rng,
}

/// Result of advancing the plant by one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantOutput {
    /// Noise-free pixel of the tracked instrument.
    pub s_true: ImageFeature,
    /// Pixel as measured (with noise).
    pub s_meas: ImageFeature,
    /// Whether a joint limit was hit and the state clamped.
    pub clamped: bool,
}

impl PlantState {
    pub fn new(
        model: RobotModel,
        base: Pose,
        camera: CameraIntrinsics,
        q: JointState,
        instruments: Vec<Vector3<f64>>,
        tracked: usize,
        sigma_m: f64,
        noise_seed: u64,
    ) -> Result<Self> {
        if tracked >= instruments.len() {
            return Err(invalid("tracked instrument index out of range"));
        }
        if !(sigma_m >= 0.0) {
            return Err(invalid("noise standard deviation must be nonnegative"));
        }
        Ok(Self { model, base, camera, q, instruments, tracked, sigma_m, rng: ChaCha8Rng::seed_from_u64(noise_seed) })
    }

    /// Plant whose camera pose matches the nominal model at `q0`.
    #[allow(clippy::too_many_arguments)]
    pub fn registered(
        nominal: &RobotModel,
        model: RobotModel,
        camera: CameraIntrinsics,
        q0: JointState,
        instruments: Vec<Vector3<f64>>,
        tracked: usize,
        sigma_m: f64,
        noise_seed: u64,
    ) -> Result<Self> {
        let base = forward_kinematics(nominal, &q0)?.compose(&forward_kinematics(&model, &q0)?.inverse());
        Self::new(model, base, camera, q0, instruments, tracked, sigma_m, noise_seed)
    }

    pub fn camera_pose(&self) -> Result<Pose> {
        Ok(self.base.compose(&forward_kinematics(&self.model, &self.q)?))
    }

    /// Point in the true camera frame.
    pub fn in_camera(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        Ok(to_camera_frame(&self.camera_pose()?, p))
    }

    /// Noise-free pixel of a base-frame point.
    pub fn pixel(&self, p: &Vector3<f64>) -> Result<ImageFeature> {
        project(&self.camera, &self.in_camera(p)?)
    }

    /// Noise-free pixel of the tracked instrument.
    pub fn true_feature(&self) -> Result<ImageFeature> {
        self.pixel(&self.instruments[self.tracked])
    }

    /// True depth of the tracked instrument.
    pub fn depth(&self) -> Result<FeatureDepth> {
        Ok(FeatureDepth(self.in_camera(&self.instruments[self.tracked])?.z))
    }

    /// Measured pixel: isotropic 3D noise mapped through the projection Jacobian.
    pub fn measure(&mut self) -> Result<ImageFeature> {
        let p_cam = self.in_camera(&self.instruments[self.tracked])?;
        let s = project(&self.camera, &p_cam)?;
        if self.sigma_m == 0.0 {
            return Ok(s);
        }
        let normal = Normal::new(0.0, self.sigma_m).map_err(|e| invalid(e.to_string()))?;
        let n = Vector3::new(normal.sample(&mut self.rng), normal.sample(&mut self.rng), normal.sample(&mut self.rng));
        Ok(ImageFeature::from(s.to_vector() + projection_jacobian(&self.camera, &p_cam)? * n))
    }
}

/// Integrates the commanded joint velocity, moves the instruments to their
/// next positions and measures the tracked one.
pub fn plant_step(state: &mut PlantState, qdot: &Vector6<f64>, dt: f64, instruments: &[Vector3<f64>]) -> Result<PlantOutput> {
    if !(dt > 0.0) {
        return Err(invalid("dt must be positive"));
    }
    if instruments.len() != state.instruments.len() {
        return Err(Error::Dimension("instrument count changed".into()));
    }
    let mut q = state.q.q + qdot * dt;
    let clamped = state.model.clamp_to_limits(&mut q);
    state.q = JointState::new(q);
    state.instruments = instruments.to_vec();
    let s_true = state.true_feature()?;
    let s_meas = state.measure()?;
    Ok(PlantOutput { s_true, s_meas, clamped })
}

/// Image Jacobian of a pixel at joint state `q` as the controller models it:
/// nominal kinematics, true depth.
pub fn nominal_image_jacobian(
    nominal: &RobotModel,
    camera: &CameraIntrinsics,
    q: &JointState,
    s: &ImageFeature,
    depth: FeatureDepth,
) -> Result<Matrix2x6<f64>> {
    let pose = forward_kinematics(nominal, q)?;
    let jr = geometric_jacobian(nominal, q)?;
    let ls = interaction_matrix(camera, s, depth)?;
    Ok(image_jacobian(&ls, &jr, &base_to_camera_twist(&pose)))
}

/// Randomness-dependent parts of one run.
#[derive(Debug, Clone)]
pub struct EpisodeSetup {
    pub nominal: RobotModel,
    pub true_model: RobotModel,
    pub noise_seed: u64,
    pub excitation_seed: u64,
}

impl EpisodeSetup {
    pub fn new(scenario: &Scenario, run_seed: u64) -> Result<Self> {
        let seeds = scenario.seeds.for_run(run_seed);
        Ok(Self {
            nominal: scenario.robot.clone(),
            true_model: perturb_dh(&scenario.robot, scenario.dh_perturb_fraction, seeds.dh)?,
            noise_seed: seeds.noise,
            excitation_seed: seeds.excitation,
        })
    }
}

fn instrument_positions(scenario: &Scenario, t: f64) -> Vec<Vector3<f64>> {
    scenario.instruments.iter().map(|i| i.position(t)).collect()
}

/// 3D point the camera should center at time `t`.
pub fn scenario_virtual_target(scenario: &Scenario, t: f64, instruments: &[Vector3<f64>]) -> Result<Vector3<f64>> {
    let p_l = scenario.target_at(t)?;
    match scenario.virtual_target.mode {
        TargetMode::Target => Ok(p_l),
        TargetMode::Weighted => {
            let p1 = instruments[scenario.active_instrument];
            let p2 = instruments.iter().enumerate().find(|(i, _)| *i != scenario.active_instrument).map_or(p1, |(_, p)| *p);
            let vt = &scenario.virtual_target;
            let w = weight_update((p1 - p_l).norm(), (p2 - p_l).norm(), vt.d_near, vt.d_far)?;
            Ok(virtual_target(&p1, &p2, &p_l, &w))
        }
    }
}

/// One logged control sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    pub q: Vector6<f64>,
    pub qdot: Vector6<f64>,
    /// Noise-free instrument pixel.
    pub s_true: ImageFeature,
    /// Same commands applied to the undisturbed nominal plant.
    pub s_nominal: ImageFeature,
    /// One-step prediction made at this sample.
    pub s_bar: ImageFeature,
    pub sigma_s: f64,
    /// Barrier of the true pixel.
    pub h: f64,
    pub h_sigma: f64,
    pub cbc: f64,
    pub slack: f64,
    pub status: SolveStatus,
    /// Joint limits were hit while applying this command.
    pub clamped: bool,
}

/// Per-sample record of an episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryLog {
    pub records: Vec<LogRecord>,
}

/// CSV header of a trajectory log.
pub const LOG_COLUMNS: [&str; 25] = [
    "t", "q1", "q2", "q3", "q4", "q5", "q6", "qd1", "qd2", "qd3", "qd4", "qd5", "qd6", "su_true", "sv_true", "su_nom", "sv_nom",
    "su_bar", "sv_bar", "sigma_s", "h", "h_sigma", "cbc", "slack", "status",
];

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes one header row and one row per record. Floats use the shortest
    /// representation that round-trips exactly.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(LOG_COLUMNS)?;
        for r in &self.records {
            let mut row: Vec<String> = Vec::with_capacity(25);
            row.push(r.t.to_string());
            row.extend(r.q.iter().map(f64::to_string));
            row.extend(r.qdot.iter().map(f64::to_string));
            for s in [r.s_true, r.s_nominal, r.s_bar] {
                row.push(s.u.to_string());
                row.push(s.v.to_string());
            }
            for x in [r.sigma_s, r.h, r.h_sigma, r.cbc, r.slack] {
                row.push(x.to_string());
            }
            let status = if r.clamped { format!("{}+clamped", r.status.as_str()) } else { r.status.as_str().to_string() };
            row.push(status);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(reader);
        let hdr = rd.headers()?.clone();
        if hdr.iter().collect::<Vec<_>>() != LOG_COLUMNS {
            return Err(Error::MissingData("trajectory log header does not match the expected columns".into()));
        }
        let mut records = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|e| Error::MissingData(format!("row {}: column {}: {e}", line + 2, LOG_COLUMNS[i])))
            };
            let vec6 = |start: usize| -> Result<Vector6<f64>> {
                let mut v = Vector6::zeros();
                for k in 0..DOF {
                    v[k] = num(start + k)?;
                }
                Ok(v)
            };
            let (status, clamped) = match rec[24].strip_suffix("+clamped") {
                Some(s) => (s, true),
                None => (&rec[24], false),
            };
            records.push(LogRecord {
                t: num(0)?,
                q: vec6(1)?,
                qdot: vec6(7)?,
                s_true: ImageFeature::new(num(13)?, num(14)?),
                s_nominal: ImageFeature::new(num(15)?, num(16)?),
                s_bar: ImageFeature::new(num(17)?, num(18)?),
                sigma_s: num(19)?,
                h: num(20)?,
                h_sigma: num(21)?,
                cbc: num(22)?,
                slack: num(23)?,
                status: status.parse()?,
                clamped,
            });
        }
        Ok(Self { records })
    }
}

/// Runs one closed-loop episode. `gp` is the offline-trained model handed to
/// the enhanced variant; other variants ignore it.
pub fn run_episode(
    scenario: &Scenario,
    variant: ControllerVariant,
    cfg: &VpcConfig,
    setup: &EpisodeSetup,
    gp: Option<GpModel>,
) -> Result<TrajectoryLog> {
    let fov = scenario.fov_disc()?;
    let noise = scenario.noise_params()?;
    let dt = cfg.dt;
    let mut plant = PlantState::registered(
        &setup.nominal,
        setup.true_model.clone(),
        scenario.camera,
        scenario.initial_state(),
        instrument_positions(scenario, 0.0),
        scenario.active_instrument,
        scenario.noise.sigma_process_m,
        setup.noise_seed,
    )?;
    let mut nominal_plant = PlantState::new(
        setup.nominal.clone(),
        Pose::identity(),
        scenario.camera,
        scenario.initial_state(),
        instrument_positions(scenario, 0.0),
        scenario.active_instrument,
        0.0,
        0,
    )?;
    let gp = if variant.is_enhanced() { gp } else { None };
    let mut controller = Controller::new(variant, cfg.clone(), setup.nominal.clone(), fov, noise, gp, scenario.gp.window)?;

    let mut s_meas = plant.measure()?;
    let mut s_true = plant.true_feature()?;
    let mut s_nominal = nominal_plant.true_feature()?;
    let steps = scenario.num_steps();
    let mut log = TrajectoryLog { records: Vec::with_capacity(steps) };
    for k in 0..steps {
        let t = k as f64 * dt;
        let target3 = scenario_virtual_target(scenario, t, &plant.instruments)?;
        let depth = plant.depth()?;
        let js = nominal_image_jacobian(&setup.nominal, &scenario.camera, &plant.q, &s_meas, depth)?;
        let obs = Observation { s_meas, q: plant.q, js, depth, target: plant.pixel(&target3)? };
        let q_now = plant.q.q;
        let (cmd, diag) = match controller.step(&obs) {
            Ok((cmd, d)) => (cmd, Some(d)),
            Err(_) => (Vector6::zeros(), None),
        };
        let next_instruments = instrument_positions(scenario, t + dt);
        let out = plant_step(&mut plant, &cmd, dt, &next_instruments)?;
        let nominal_out = plant_step(&mut nominal_plant, &cmd, dt, &next_instruments)?;
        let s_bar = diag.as_ref().map_or(s_meas, |d| d.s_bar);
        log.records.push(LogRecord {
            t,
            q: q_now,
            qdot: cmd,
            s_true,
            s_nominal,
            s_bar,
            sigma_s: diag.as_ref().map_or(0.0, |d| d.sigma_s),
            h: safety::h(&s_true, &fov),
            h_sigma: diag.as_ref().map_or(f64::NAN, |d| d.h_sigma),
            cbc: diag.as_ref().map_or(f64::NAN, |d| d.cbc),
            slack: diag.as_ref().map_or(0.0, |d| d.slack),
            status: diag.as_ref().map_or(SolveStatus::InfeasibleFallback, |d| d.status),
            clamped: out.clamped,
        });
        s_nominal = nominal_out.s_true;
        s_true = out.s_true;
        s_meas = out.s_meas;
    }
    Ok(log)
}

/// Offline GP data from an excitation episode: the instruments stay at their
/// initial positions while the arm follows smooth random joint velocities
/// around `q0`. Inputs and targets are normalized as the controller expects.
pub fn collect_excitation_data(scenario: &Scenario, setup: &EpisodeSetup, samples: usize) -> Result<GpDataset> {
    let fov: FovDisc = scenario.fov_disc()?;
    let noise = scenario.noise_params()?;
    let dt = scenario.dt;
    let q0 = scenario.initial_state().q;
    let mut plant = PlantState::registered(
        &setup.nominal,
        setup.true_model.clone(),
        scenario.camera,
        scenario.initial_state(),
        instrument_positions(scenario, 0.0),
        scenario.active_instrument,
        scenario.noise.sigma_process_m,
        setup.excitation_seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(setup.excitation_seed ^ 0x5DEE_CE66_D1CE_4E5B);
    let speed = scenario.gp.excitation_speed;
    let (vmin, vmax) = (setup.nominal.qdot_min(), setup.nominal.qdot_max());
    let mut drive = Vector6::zeros();
    let mut data = GpDataset::new();
    let mut s = plant.measure()?;
    let instruments = plant.instruments.clone();
    while data.len() < samples {
        for k in 0..DOF {
            drive[k] = 0.8 * drive[k] + 0.6 * speed * rng.random_range(-1.0..=1.0);
        }
        let mut qdot = (q0 - plant.q.q) * 0.5 + drive;
        for k in 0..DOF {
            qdot[k] = qdot[k].clamp(vmin[k], vmax[k]);
        }
        let js = nominal_image_jacobian(&setup.nominal, &scenario.camera, &plant.q, &s, plant.depth()?)?;
        let out = plant_step(&mut plant, &qdot, dt, &instruments)?;
        let y = residual_target(&s, &out.s_meas, &qdot, &js, dt, &noise.b_d)?;
        data.push(gp_features(&fov, &s, &qdot), y / fov.radius);
        s = out.s_meas;
    }
    Ok(data)
}
