//! Receding-horizon visual predictive control.
//!
//! Each sample the controller stacks the input sequence `U = [u_0; ..; u_{Nc-1}]`
//! (plus slack where needed), predicts the feature with the frozen image
//! Jacobian
//!
//! ```text
//!     s_{i+1} = s_i + dt J_s u_i + B_d mu_i,      u_i = 0 for i >= Nc
//! ```
//!
//! and solves one convex QP. Barrier and chance constraints are linearized
//! about the previous solution shifted by one sample.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x6, Matrix6, SymmetricEigen, Vector2, Vector6};

use crate::error::{invalid, Error, Result};
use crate::gpr::{residual_target, GpInput, GpModel};
use crate::kinematics::{JointState, RobotModel, DOF};
use crate::qp::QuadraticProgram;
use crate::safety::{self, BeliefState, CbfParams, ChanceParams, FovDisc, NoiseParams};
use crate::vision::{FeatureDepth, ImageFeature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ControllerVariant {
    /// Tracking cost and joint limits only.
    Classical,
    /// Adds the deterministic discrete barrier on the field of view.
    VisionSafe,
    /// Learned disturbance compensation, uncertainty-adaptive barrier and
    /// chance constraints.
    VisionSafeEnhanced,
    /// Keeps the instrument itself centered with a stiffer tracking weight.
    FullyTracking,
}

impl ControllerVariant {
    /// All variants in report order.
    pub const ALL: [ControllerVariant; 4] = [
        ControllerVariant::Classical,
        ControllerVariant::VisionSafe,
        ControllerVariant::VisionSafeEnhanced,
        ControllerVariant::FullyTracking,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Classical => "Classical",
            Self::VisionSafe => "VisionSafe",
            Self::VisionSafeEnhanced => "VisionSafeEnhanced",
            Self::FullyTracking => "FullyTracking",
        }
    }

    pub fn has_barrier(self) -> bool {
        matches!(self, Self::VisionSafe | Self::VisionSafeEnhanced)
    }

    pub fn is_enhanced(self) -> bool {
        self == Self::VisionSafeEnhanced
    }
}

impl fmt::Display for ControllerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|v| v.name().to_ascii_lowercase() == key)
            .ok_or_else(|| invalid(format!("unknown controller variant '{s}'")))
    }
}

/// Tuning of the predictive controller.
#[derive(Debug, Clone, PartialEq)]
pub struct VpcConfig {
    /// Prediction horizon (samples).
    pub np: usize,
    /// Control horizon (samples), `1 <= nc <= np`.
    pub nc: usize,
    /// Image-error weight (pixels^-2).
    pub q: Matrix2<f64>,
    /// Joint-velocity weight.
    pub r: Matrix6<f64>,
    pub dt: f64,
    pub cbf: CbfParams,
    pub chance: ChanceParams,
    /// Quadratic penalty on barrier slack.
    pub slack_weight: f64,
    /// Multiplier on `q` for the fully tracking variant.
    pub tracking_gain: f64,
}

impl Default for VpcConfig {
    fn default() -> Self {
        let q = Matrix2::identity();
        Self {
            np: 10,
            nc: 5,
            q,
            r: Matrix6::identity() * 0.1,
            dt: 0.1,
            cbf: CbfParams { alpha: 0.5, beta: 1.0 },
            chance: ChanceParams {
                p_s: 0.95,
                p_u: 0.95,
                input_center: Vector6::zeros(),
                input_radius: 1.0,
                input_cov: Matrix6::zeros(),
            },
            slack_weight: Self::default_slack_weight(&q),
            tracking_gain: 10.0,
        }
    }
}

impl VpcConfig {
    /// `1e6 * max(Q)`.
    pub fn default_slack_weight(q: &Matrix2<f64>) -> f64 {
        1e6 * q.max()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nc >= 1 && self.np >= self.nc) {
            return Err(invalid(format!("horizons must satisfy np >= nc >= 1 (np={}, nc={})", self.np, self.nc)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt must be positive"));
        }
        let q_eig = SymmetricEigen::new((self.q + self.q.transpose()) * 0.5).eigenvalues;
        if q_eig.iter().any(|&l| !(l >= -1e-12)) {
            return Err(invalid("Q must be positive semidefinite"));
        }
        let r_eig = SymmetricEigen::new((self.r + self.r.transpose()) * 0.5).eigenvalues;
        if r_eig.iter().any(|&l| !(l > 0.0)) {
            return Err(invalid("R must be positive definite"));
        }
        if !(self.slack_weight > 0.0) || !(self.tracking_gain > 0.0) {
            return Err(invalid("slack weight and tracking gain must be positive"));
        }
        self.cbf.validate()?;
        self.chance.validate()
    }
}

/// Everything the problem needs besides the belief, joint state and target.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub js: Matrix2x6<f64>,
    pub fov: FovDisc,
    pub noise: NoiseParams,
    pub q_min: Vector6<f64>,
    pub q_max: Vector6<f64>,
    pub qdot_min: Vector6<f64>,
    pub qdot_max: Vector6<f64>,
    /// Learned disturbance mean per horizon step (pixels), length `np`.
    pub mu: Vec<Vector2<f64>>,
    /// Learned disturbance covariance per horizon step (pixels^2), length `np`.
    pub sigma_d: Vec<Matrix2<f64>>,
    /// Linearization points `s_0..s_np`, length `np + 1`.
    pub lin_means: Vec<ImageFeature>,
    /// Linearization inputs, length `nc`.
    pub lin_inputs: Vec<Vector6<f64>>,
}

impl ModelBundle {
    /// Bundle with no learned disturbance, linearized about a zero-input rollout.
    pub fn nominal(
        robot: &RobotModel,
        js: Matrix2x6<f64>,
        fov: FovDisc,
        noise: NoiseParams,
        s0: ImageFeature,
        np: usize,
        nc: usize,
    ) -> Self {
        Self {
            js,
            fov,
            noise,
            q_min: robot.q_min(),
            q_max: robot.q_max(),
            qdot_min: robot.qdot_min(),
            qdot_max: robot.qdot_max(),
            mu: vec![Vector2::zeros(); np],
            sigma_d: vec![Matrix2::zeros(); np],
            lin_means: vec![s0; np + 1],
            lin_inputs: vec![Vector6::zeros(); nc],
        }
    }
}

/// Which constraint families may be violated at a quadratic price.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemOptions {
    pub soft_barrier: bool,
    pub soft_chance: bool,
}

impl Default for ProblemOptions {
    fn default() -> Self {
        Self { soft_barrier: true, soft_chance: false }
    }
}

/// Row blocks of the assembled constraint matrix, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowLayout {
    pub velocity: Range<usize>,
    pub position: Range<usize>,
    pub barrier: Range<usize>,
    pub slack_nonneg: Range<usize>,
    pub state_chance: Range<usize>,
    pub input_chance: Range<usize>,
    /// Number of input variables (`6 nc`).
    pub num_inputs: usize,
    /// Slack columns attached to barrier rows.
    pub barrier_slack: Range<usize>,
    /// Slack columns attached to chance rows.
    pub chance_slack: Range<usize>,
}

/// An assembled problem plus what is needed to read its solution back.
#[derive(Debug, Clone)]
pub struct VpcProblem {
    pub qp: QuadraticProgram,
    pub layout: RowLayout,
    pub variant: ControllerVariant,
    /// Predicted covariances `Sigma_1..Sigma_np`.
    pub predicted_covs: Vec<Matrix2<f64>>,
    /// `sigma_s` for steps `0..=np` as used by the constraints.
    pub sigmas: Vec<f64>,
    s0: ImageFeature,
    js: Matrix2x6<f64>,
    drift: Vec<Vector2<f64>>,
    dt: f64,
    np: usize,
    nc: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    SlackActive,
    InfeasibleFallback,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Optimal => "optimal",
            Self::SlackActive => "slack-active",
            Self::InfeasibleFallback => "infeasible-fallback",
        }
    }
}

impl FromStr for SolveStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimal" => Ok(Self::Optimal),
            "slack-active" => Ok(Self::SlackActive),
            "infeasible-fallback" => Ok(Self::InfeasibleFallback),
            other => Err(invalid(format!("unknown solver status '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSolution {
    pub qdot_sequence: Vec<Vector6<f64>>,
    /// Means `s_1..s_np`.
    pub predicted_means: Vec<ImageFeature>,
    /// Covariances `Sigma_1..Sigma_np`.
    pub predicted_covs: Vec<Matrix2<f64>>,
    /// Barrier slack per horizon step.
    pub slack: Vec<f64>,
    pub status: SolveStatus,
    pub objective: f64,
    pub active_set: Vec<usize>,
    pub iterations: usize,
}

/// Slack below this is reported as inactive.
const SLACK_TOL: f64 = 1e-7;

/// `dt J_s` placed in input blocks `j < min(i, nc)`: maps `U` to the nominal
/// displacement of the feature after `i` samples.
fn lifted_map(js: &Matrix2x6<f64>, dt: f64, i: usize, nc: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2, DOF * nc);
    for j in 0..i.min(nc) {
        m.view_mut((0, DOF * j), (2, DOF)).copy_from(&(js * dt));
    }
    m
}

fn check_len(name: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!("{name} has length {got}, expected {want}")));
    }
    Ok(())
}

/// Assembles the QP with the default options (slack on barrier rows only).
pub fn build_problem(
    belief: &BeliefState,
    q: &JointState,
    target: &ImageFeature,
    bundle: &ModelBundle,
    cfg: &VpcConfig,
    variant: ControllerVariant,
) -> Result<VpcProblem> {
    build_problem_with(belief, q, target, bundle, cfg, variant, ProblemOptions::default())
}

/// Assembles the QP. `target` is the desired feature position `s_d`.
pub fn build_problem_with(
    belief: &BeliefState,
    q: &JointState,
    target: &ImageFeature,
    bundle: &ModelBundle,
    cfg: &VpcConfig,
    variant: ControllerVariant,
    opts: ProblemOptions,
) -> Result<VpcProblem> {
    cfg.validate()?;
    let (np, nc, dt) = (cfg.np, cfg.nc, cfg.dt);
    check_len("mu", bundle.mu.len(), np)?;
    check_len("sigma_d", bundle.sigma_d.len(), np)?;
    check_len("lin_means", bundle.lin_means.len(), np + 1)?;
    check_len("lin_inputs", bundle.lin_inputs.len(), nc)?;
    if !belief.mean.is_finite() || !target.is_finite() || bundle.js.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite belief, target or image Jacobian"));
    }

    let enhanced = variant.is_enhanced();
    let barrier = variant.has_barrier();
    let fov = &bundle.fov;
    let center = fov.center.to_vector();
    let b_d = bundle.noise.b_d;
    let beta = if enhanced { cfg.cbf.beta } else { 0.0 };
    let alpha = cfg.cbf.alpha;

    // Drift and covariance along the horizon.
    let drift: Vec<Vector2<f64>> =
        if enhanced { bundle.mu.iter().map(|m| b_d * m).collect() } else { vec![Vector2::zeros(); np] };
    let mut covs = Vec::with_capacity(np);
    let mut sigmas = Vec::with_capacity(np + 1);
    if enhanced {
        let mut cov = belief.cov;
        sigmas.push(safety::sigma_s(&cov)?);
        for sd in &bundle.sigma_d {
            cov = safety::cov_propagate(&cov, sd, &bundle.noise);
            sigmas.push(safety::sigma_s(&cov)?);
            covs.push(cov);
        }
    } else {
        sigmas.resize(np + 1, 0.0);
        covs.resize(np, Matrix2::zeros());
    }

    // Offsets c_i = s_0 + sum_{j<i} B_d mu_j and lifted maps M_i, i = 0..=np.
    let s0 = belief.mean.to_vector();
    let mut offsets = Vec::with_capacity(np + 1);
    offsets.push(s0);
    for i in 0..np {
        offsets.push(offsets[i] + drift[i]);
    }
    let maps: Vec<DMatrix<f64>> = (0..=np).map(|i| lifted_map(&bundle.js, dt, i, nc)).collect();

    let nu = DOF * nc;
    let n_bslack = if barrier && opts.soft_barrier { np } else { 0 };
    let n_cslack = if enhanced && opts.soft_chance { np + nc } else { 0 };
    let n = nu + n_bslack + n_cslack;

    // Cost.
    let qw = if variant == ControllerVariant::FullyTracking { cfg.q * cfg.tracking_gain } else { cfg.q };
    let qd = DMatrix::from_fn(2, 2, |i, j| qw[(i, j)]);
    let sd = target.to_vector();
    let mut hess = DMatrix::zeros(n, n);
    let mut grad = DVector::zeros(n);
    for i in 1..=np {
        let m = &maps[i];
        let mq = m.transpose() * &qd;
        let mut hb = hess.view_mut((0, 0), (nu, nu));
        hb += &mq * m * 2.0;
        let e = offsets[i] - sd;
        let mut gb = grad.rows_mut(0, nu);
        gb += &mq * DVector::from_column_slice(e.as_slice()) * 2.0;
    }
    for j in 0..nc {
        let mut blk = hess.view_mut((DOF * j, DOF * j), (DOF, DOF));
        blk += cfg.r * 2.0;
    }
    for k in nu..n {
        hess[(k, k)] = 2.0 * cfg.slack_weight;
    }

    // Constraint rows.
    let n_vel = 2 * DOF * nc;
    let n_pos = 2 * DOF * np;
    let n_bar = if barrier { np } else { 0 };
    let n_nonneg = n_bslack + n_cslack;
    let n_sch = if enhanced { np } else { 0 };
    let n_ich = if enhanced { nc } else { 0 };
    let rows = n_vel + n_pos + n_bar + n_nonneg + n_sch + n_ich;
    let mut a = DMatrix::zeros(rows, n);
    let mut b = DVector::zeros(rows);

    let velocity = 0..n_vel;
    for k in 0..nu {
        let joint = k % DOF;
        a[(k, k)] = 1.0;
        b[k] = bundle.qdot_max[joint];
        a[(nu + k, k)] = -1.0;
        b[nu + k] = -bundle.qdot_min[joint];
    }

    let position = velocity.end..velocity.end + n_pos;
    let q_now = q.q;
    for i in 1..=np {
        for jnt in 0..DOF {
            let up = position.start + (i - 1) * DOF + jnt;
            let lo = up + DOF * np;
            for j in 0..i.min(nc) {
                a[(up, DOF * j + jnt)] = dt;
                a[(lo, DOF * j + jnt)] = -dt;
            }
            b[up] = bundle.q_max[jnt] - q_now[jnt];
            b[lo] = q_now[jnt] - bundle.q_min[jnt];
        }
    }

    // Linearization residuals e_i = s_hat_i - s_c, with s_hat_0 = s_0 exactly.
    let lin: Vec<Vector2<f64>> =
        (0..=np).map(|i| if i == 0 { s0 - center } else { bundle.lin_means[i].to_vector() - center }).collect();
    let rho = |i: usize| safety::effective_radius(sigmas[i], fov, &CbfParams { alpha, beta });

    let barrier_rows = position.end..position.end + n_bar;
    for i in 0..n_bar {
        let row = barrier_rows.start + i;
        let (e1, e0) = (lin[i + 1], lin[i]);
        let coef = (maps[i + 1].transpose() * DVector::from_column_slice(e1.as_slice())) * 2.0
            - (maps[i].transpose() * DVector::from_column_slice(e0.as_slice())) * (2.0 * (1.0 - alpha));
        a.view_mut((row, 0), (1, nu)).copy_from(&coef.transpose());
        let next = rho(i + 1).powi(2) + e1.norm_squared() - 2.0 * e1.dot(&(offsets[i + 1] - center));
        let now = rho(i).powi(2) + e0.norm_squared() - 2.0 * e0.dot(&(offsets[i] - center));
        b[row] = next - (1.0 - alpha) * now;
        if n_bslack > 0 {
            a[(row, nu + i)] = -1.0;
        }
    }

    let slack_nonneg = barrier_rows.end..barrier_rows.end + n_nonneg;
    for k in 0..n_nonneg {
        a[(slack_nonneg.start + k, nu + k)] = -1.0;
    }

    let state_chance = slack_nonneg.end..slack_nonneg.end + n_sch;
    let kappa_s = cfg.chance.kappa_s();
    for i in 1..=n_sch {
        let row = state_chance.start + i - 1;
        // Same tangent form as the barrier rows, on the tightened radius.
        let e = lin[i];
        let radius = (fov.radius - kappa_s * sigmas[i]).max(0.0);
        let coef = (maps[i].transpose() * DVector::from_column_slice(e.as_slice())) * 2.0;
        a.view_mut((row, 0), (1, nu)).copy_from(&coef.transpose());
        b[row] = radius * radius + e.norm_squared() - 2.0 * e.dot(&(offsets[i] - center));
        if n_cslack > 0 {
            a[(row, nu + n_bslack + i - 1)] = -1.0;
        }
    }

    let input_chance = state_chance.end..state_chance.end + n_ich;
    let u_c = cfg.chance.input_center;
    let tightened = cfg.chance.input_radius - cfg.chance.kappa_u() * cfg.chance.sigma_u();
    for j in 0..n_ich {
        let row = input_chance.start + j;
        let e = bundle.lin_inputs[j] - u_c;
        let norm = e.norm();
        let g = if norm > 1e-9 { e / norm } else { Vector6::zeros() };
        for jnt in 0..DOF {
            a[(row, DOF * j + jnt)] = g[jnt];
        }
        b[row] = tightened + g.dot(&u_c);
        if n_cslack > 0 {
            a[(row, nu + n_bslack + np + j)] = -1.0;
        }
    }

    let layout = RowLayout {
        velocity,
        position,
        barrier: barrier_rows,
        slack_nonneg,
        state_chance,
        input_chance,
        num_inputs: nu,
        barrier_slack: nu..nu + n_bslack,
        chance_slack: nu + n_bslack..n,
    };
    Ok(VpcProblem {
        qp: QuadraticProgram::new(hess, grad, a, b)?,
        layout,
        variant,
        predicted_covs: covs,
        sigmas,
        s0: belief.mean,
        js: bundle.js,
        drift,
        dt,
        np,
        nc,
    })
}

impl VpcProblem {
    /// Input sequence stored in the first `6 nc` entries of `x`.
    pub fn inputs(&self, x: &DVector<f64>) -> Vec<Vector6<f64>> {
        (0..self.nc).map(|j| Vector6::from_iterator(x.rows(DOF * j, DOF).iter().copied())).collect()
    }

    /// Mean rollout `s_1..s_np` under an input sequence.
    pub fn predict_means(&self, inputs: &[Vector6<f64>]) -> Vec<ImageFeature> {
        let mut s = self.s0.to_vector();
        (0..self.np)
            .map(|i| {
                let u = inputs.get(i).copied().unwrap_or_else(Vector6::zeros);
                s += self.dt * self.js * u + self.drift[i];
                ImageFeature::from(s)
            })
            .collect()
    }

    /// Solution that holds the arm still.
    pub fn fallback(&self) -> ControlSolution {
        let zeros = vec![Vector6::zeros(); self.nc];
        ControlSolution {
            predicted_means: self.predict_means(&zeros),
            qdot_sequence: zeros,
            predicted_covs: self.predicted_covs.clone(),
            slack: vec![0.0; self.np],
            status: SolveStatus::InfeasibleFallback,
            objective: f64::NAN,
            active_set: Vec::new(),
            iterations: 0,
        }
    }

    /// Solves, falling back to a zero command when the QP has no solution.
    pub fn solve(&self) -> ControlSolution {
        self.solve_with_hint(&[])
    }

    pub fn solve_with_hint(&self, hint: &[usize]) -> ControlSolution {
        self.try_solve(hint).unwrap_or_else(|_| self.fallback())
    }

    /// Solves, reporting infeasibility as an error.
    pub fn try_solve(&self, hint: &[usize]) -> Result<ControlSolution> {
        let sol = self.qp.solve_with_hint(hint)?;
        let qdot_sequence = self.inputs(&sol.x);
        let mut slack = vec![0.0; self.np];
        for (k, col) in self.layout.barrier_slack.clone().enumerate() {
            slack[k] = sol.x[col].max(0.0);
        }
        let any_slack = self.layout.barrier_slack.start..self.layout.chance_slack.end;
        let status =
            if any_slack.into_iter().any(|c| sol.x[c] > SLACK_TOL) { SolveStatus::SlackActive } else { SolveStatus::Optimal };
        Ok(ControlSolution {
            predicted_means: self.predict_means(&qdot_sequence),
            qdot_sequence,
            predicted_covs: self.predicted_covs.clone(),
            slack,
            status,
            objective: sol.objective,
            active_set: sol.active_set,
            iterations: sol.iterations,
        })
    }
}

/// Solves an assembled problem (zero command if infeasible).
pub fn solve(problem: &VpcProblem) -> ControlSolution {
    problem.solve()
}

/// Normalized GP input `[(s - s_c) / r; qdot]`.
pub fn gp_features(fov: &FovDisc, s: &ImageFeature, qdot: &Vector6<f64>) -> GpInput {
    GpInput::from_parts(&((s.to_vector() - fov.center.to_vector()) / fov.radius), qdot)
}

/// What the controller sees each sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Measured pixel of the tracked instrument.
    pub s_meas: ImageFeature,
    pub q: JointState,
    /// Image Jacobian of the instrument pixel at the current state.
    pub js: Matrix2x6<f64>,
    pub depth: FeatureDepth,
    /// Pixel that should be brought to the image center.
    pub target: ImageFeature,
}

/// Per-sample record of what the controller decided and why.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub solution: ControlSolution,
    /// Desired instrument pixel used in the cost.
    pub desired: ImageFeature,
    /// One-step predicted mean.
    pub s_bar: ImageFeature,
    /// `sigma_s` of the one-step prediction.
    pub sigma_s: f64,
    /// Uncertainty-adaptive barrier at the one-step prediction.
    pub h_sigma: f64,
    /// Predicted barrier condition for the first step.
    pub cbc: f64,
    pub slack: f64,
    pub status: SolveStatus,
    /// Learned disturbance mean used for the first step (pixels).
    pub mu: Vector2<f64>,
    pub gp_points: usize,
}

/// Stateful receding-horizon controller.
#[derive(Debug, Clone)]
pub struct Controller {
    variant: ControllerVariant,
    cfg: VpcConfig,
    robot: RobotModel,
    fov: FovDisc,
    noise: NoiseParams,
    gp: Option<GpModel>,
    gp_window: usize,
    prev: Option<ControlSolution>,
    last_command: Vector6<f64>,
    last_obs: Option<(ImageFeature, Matrix2x6<f64>)>,
    hint: Vec<usize>,
}

impl Controller {
    /// `robot` is the nominal model (used for limits); `gp` is only consulted
    /// by the enhanced variant and works in normalized units (see [`gp_features`]).
    pub fn new(
        variant: ControllerVariant,
        cfg: VpcConfig,
        robot: RobotModel,
        fov: FovDisc,
        noise: NoiseParams,
        gp: Option<GpModel>,
        gp_window: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        if gp_window == 0 {
            return Err(invalid("GP window must be at least 1"));
        }
        Ok(Self {
            variant,
            cfg,
            robot,
            fov,
            noise,
            gp,
            gp_window,
            prev: None,
            last_command: Vector6::zeros(),
            last_obs: None,
            hint: Vec::new(),
        })
    }

    pub fn variant(&self) -> ControllerVariant {
        self.variant
    }

    pub fn config(&self) -> &VpcConfig {
        &self.cfg
    }

    pub fn gp(&self) -> Option<&GpModel> {
        self.gp.as_ref()
    }

    pub fn last_command(&self) -> Vector6<f64> {
        self.last_command
    }

    /// Desired instrument pixel: shifts the instrument by the offset that
    /// would center the target, or centers the instrument itself.
    pub fn desired_feature(&self, obs: &Observation) -> ImageFeature {
        match self.variant {
            ControllerVariant::FullyTracking => self.fov.center,
            _ => ImageFeature::from(obs.s_meas.to_vector() + self.fov.center.to_vector() - obs.target.to_vector()),
        }
    }

    fn learn(&mut self, obs: &Observation) {
        let (Some(gp), Some((s_prev, js_prev))) = (&self.gp, self.last_obs) else { return };
        let Ok(y) = residual_target(&s_prev, &obs.s_meas, &self.last_command, &js_prev, self.cfg.dt, &self.noise.b_d) else {
            return;
        };
        let z = gp_features(&self.fov, &s_prev, &self.last_command);
        if let Ok(updated) = gp.window_update(z, y / self.fov.radius, self.gp_window) {
            self.gp = Some(updated);
        }
    }

    /// Disturbance mean (pixels) and covariance (pixels^2) at a raw query.
    fn disturbance(&self, s: &ImageFeature, qdot: &Vector6<f64>) -> (Vector2<f64>, Matrix2<f64>) {
        match (&self.gp, self.variant.is_enhanced()) {
            (Some(gp), true) => {
                let p = gp.predict(&gp_features(&self.fov, s, qdot));
                let r = self.fov.radius;
                (p.mean * r, p.cov * (r * r))
            }
            _ => (Vector2::zeros(), Matrix2::zeros()),
        }
    }

    /// Builds the model bundle for the current observation: shifts the
    /// previous solution and rolls it out to get linearization points and
    /// the learned disturbance along the horizon.
    pub fn bundle(&self, obs: &Observation) -> ModelBundle {
        let (np, nc, dt) = (self.cfg.np, self.cfg.nc, self.cfg.dt);
        let lin_inputs: Vec<Vector6<f64>> = match &self.prev {
            Some(p) => (0..nc).map(|j| p.qdot_sequence[(j + 1).min(nc - 1)]).collect(),
            None => vec![Vector6::zeros(); nc],
        };
        let mut b = ModelBundle::nominal(&self.robot, obs.js, self.fov, self.noise, obs.s_meas, np, nc);
        let mut s = obs.s_meas;
        for i in 0..np {
            let u = if i < nc { lin_inputs[i] } else { Vector6::zeros() };
            let (mu, cov) = self.disturbance(&s, &u);
            b.mu[i] = mu;
            b.sigma_d[i] = cov;
            s = ImageFeature::from(s.to_vector() + dt * obs.js * u + self.noise.b_d * mu);
            b.lin_means[i + 1] = s;
        }
        b.lin_inputs = lin_inputs;
        b
    }

    /// One receding-horizon step: learn from the last transition, solve, and
    /// return the first joint-velocity command.
    pub fn step(&mut self, obs: &Observation) -> Result<(Vector6<f64>, StepDiagnostics)> {
        if !obs.s_meas.is_finite() || !obs.target.is_finite() || obs.q.q.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite observation"));
        }
        if !(obs.depth.0 > 0.0) {
            return Err(invalid("observation depth must be positive"));
        }
        if self.variant.is_enhanced() {
            self.learn(obs);
        }
        let desired = self.desired_feature(obs);
        let bundle = self.bundle(obs);
        let belief = BeliefState::certain(obs.s_meas);

        let mut attempts = vec![ProblemOptions { soft_barrier: false, soft_chance: false }];
        if self.variant.has_barrier() {
            attempts.push(ProblemOptions { soft_barrier: true, soft_chance: false });
        }
        if self.variant.is_enhanced() {
            attempts.push(ProblemOptions { soft_barrier: true, soft_chance: true });
        }
        let mut solution = None;
        let mut last_problem = None;
        for opts in attempts {
            let problem = build_problem_with(&belief, &obs.q, &desired, &bundle, &self.cfg, self.variant, opts)?;
            let rows = problem.qp.num_constraints();
            let hint: Vec<usize> = self.hint.iter().copied().filter(|&r| r < rows).collect();
            if let Ok(mut sol) = problem.try_solve(&hint) {
                if opts.soft_barrier {
                    sol.status = SolveStatus::SlackActive;
                }
                solution = Some(sol);
                last_problem = Some(problem);
                break;
            }
            last_problem = Some(problem);
        }
        let problem = last_problem.expect("at least one attempt");
        let solution = solution.unwrap_or_else(|| problem.fallback());

        let command = solution.qdot_sequence[0];
        let s_bar = solution.predicted_means[0];
        let sigma = problem.sigmas.get(1).copied().unwrap_or(0.0);
        let beta = if self.variant.is_enhanced() { self.cfg.cbf.beta } else { 0.0 };
        let cbf = CbfParams { alpha: self.cfg.cbf.alpha, beta };
        let h_next = safety::h_sigma(&s_bar, sigma, &self.fov, &cbf);
        let h_now = safety::h_sigma(&obs.s_meas, problem.sigmas[0], &self.fov, &cbf);
        let diag = StepDiagnostics {
            desired,
            s_bar,
            sigma_s: sigma,
            h_sigma: h_next,
            cbc: safety::cbc(h_next, h_now, &cbf),
            slack: solution.slack.first().copied().unwrap_or(0.0),
            status: solution.status,
            mu: bundle.mu[0],
            gp_points: self.gp.as_ref().map_or(0, GpModel::len),
            solution: solution.clone(),
        };

        self.hint = solution.active_set.clone();
        self.prev = if solution.status == SolveStatus::InfeasibleFallback { None } else { Some(solution) };
        self.last_command = command;
        self.last_obs = Some((obs.s_meas, obs.js));
        Ok((command, diag))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::DhRow;

    fn robot() -> RobotModel {
        RobotModel::new(vec![DhRow::new(0.0, 0.0, 0.0, 0.0); 6], [-3.0; 6], [3.0; 6], [-1.0; 6], [1.0; 6]).unwrap()
    }

    fn setup(np: usize, nc: usize) -> (VpcConfig, ModelBundle) {
        let cfg = VpcConfig { np, nc, ..VpcConfig::default() };
        let js = Matrix2x6::new(300.0, 0.0, 20.0, -5.0, 0.0, 1.0, 0.0, 250.0, 0.0, 10.0, 30.0, 0.0);
        let fov = FovDisc::new(ImageFeature::new(640.0, 480.0), 200.0).unwrap();
        let noise = NoiseParams::new(0.0, Matrix2::identity()).unwrap();
        let b = ModelBundle::nominal(&robot(), js, fov, noise, ImageFeature::new(700.0, 500.0), np, nc);
        (cfg, b)
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ControllerVariant::ALL {
            assert_eq!(v.name().parse::<ControllerVariant>().unwrap(), v);
        }
        assert_eq!("vision-safe-enhanced".parse::<ControllerVariant>().unwrap(), ControllerVariant::VisionSafeEnhanced);
        assert!("robust".parse::<ControllerVariant>().is_err());
    }

    #[test]
    fn classical_has_only_boxes() {
        let (cfg, b) = setup(10, 5);
        let belief = BeliefState::certain(ImageFeature::new(700.0, 500.0));
        let p = build_problem(
            &belief,
            &JointState::zeros(),
            &ImageFeature::new(640.0, 480.0),
            &b,
            &cfg,
            ControllerVariant::Classical,
        )
        .unwrap();
        assert_eq!(p.qp.num_constraints(), 2 * 6 * 5 + 2 * 6 * 10);
        assert_eq!(p.qp.num_vars(), 30);
    }

    #[test]
    fn enhanced_layout() {
        let (cfg, b) = setup(4, 2);
        let belief = BeliefState::certain(ImageFeature::new(700.0, 500.0));
        let p = build_problem(
            &belief,
            &JointState::zeros(),
            &ImageFeature::new(640.0, 480.0),
            &b,
            &cfg,
            ControllerVariant::VisionSafeEnhanced,
        )
        .unwrap();
        let l = &p.layout;
        assert_eq!(l.barrier.len(), 4);
        assert_eq!(l.slack_nonneg.len(), 4);
        assert_eq!(l.state_chance.len(), 4);
        assert_eq!(l.input_chance.len(), 2);
        assert_eq!(p.qp.num_vars(), 12 + 4);
    }

    #[test]
    fn rejects_bad_bundle() {
        let (cfg, mut b) = setup(4, 2);
        b.mu.pop();
        let belief = BeliefState::certain(ImageFeature::new(700.0, 500.0));
        assert!(build_problem(
            &belief,
            &JointState::zeros(),
            &ImageFeature::new(0.0, 0.0),
            &b,
            &cfg,
            ControllerVariant::Classical
        )
        .is_err());
    }

    #[test]
    fn at_target_commands_zero() {
        let (cfg, b) = setup(10, 5);
        let s = ImageFeature::new(700.0, 500.0);
        let p =
            build_problem(&BeliefState::certain(s), &JointState::zeros(), &s, &b, &cfg, ControllerVariant::VisionSafe).unwrap();
        let sol = p.solve();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.qdot_sequence.iter().all(|u| u.norm() < 1e-9));
    }
}
