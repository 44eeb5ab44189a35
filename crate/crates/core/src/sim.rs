//! Planar (sagittal) biped.
//!
//! Generalized coordinates `q = [root_x, root_z, pitch, l_hip, l_knee, l_ankle,
//! r_hip, r_knee, r_ankle]`. Link angles compose clockwise from the downward
//! vertical, so a positive pitch leans the torso forward and a positive knee
//! angle flexes the shank backward.
//!
//! Dynamics use a diagonal effective inertia per coordinate. Gravity and contact
//! generalized forces are obtained from the forward kinematics by central finite
//! differences, and the state is advanced with semi-implicit Euler.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NQ: usize = 9;
pub const NJ: usize = 6;
pub const OBS_FRAME_DIM: usize = 22;
pub const HISTORY_LEN: usize = 4;
pub const OBS_DIM: usize = OBS_FRAME_DIM * HISTORY_LEN;
/// Number of ground-contact points returned by [`BodyPoints::contact_points`].
pub const N_CONTACTS: usize = 8;

const GRAVITY_FD_STEP: f64 = 1e-6;
const JACOBIAN_FD_STEP: f64 = 1e-6;

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BipedModel {
    pub torso_len: f64,
    pub thigh_len: f64,
    pub shank_len: f64,
    /// Height of the ankle joint above the sole.
    pub ankle_height: f64,
    /// Sole extent behind / in front of the ankle.
    pub heel_len: f64,
    pub toe_len: f64,
    pub torso_mass: f64,
    pub thigh_mass: f64,
    pub shank_mass: f64,
    pub foot_mass: f64,
    /// Effective inertia per generalized coordinate.
    pub inertia: [f64; NQ],
    pub joint_lower: [f64; NJ],
    pub joint_upper: [f64; NJ],
    pub default_joints: [f64; NJ],
    pub kp: [f64; NJ],
    pub kd: [f64; NJ],
    pub torque_limit: f64,
    pub gravity: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub friction_coeff: f64,
    /// Viscous gain of the tangential contact force before the Coulomb cap.
    pub friction_damping: f64,
    pub dt_phys: f64,
    pub substeps: usize,
    /// Joint-target offset in radians per unit action.
    pub action_scale: f64,
    pub contacts_enabled: bool,
}

impl Default for BipedModel {
    fn default() -> Self {
        let leg = [-0.3, 0.6, -0.3];
        BipedModel {
            torso_len: 0.5,
            thigh_len: 0.25,
            shank_len: 0.25,
            ankle_height: 0.05,
            heel_len: 0.05,
            toe_len: 0.10,
            torso_mass: 6.0,
            thigh_mass: 1.5,
            shank_mass: 1.0,
            foot_mass: 0.5,
            inertia: [12.0, 12.0, 1.5, 0.3, 0.2, 0.1, 0.3, 0.2, 0.1],
            joint_lower: [-2.2, 0.0, -0.9, -2.2, 0.0, -0.9],
            joint_upper: [0.8, 2.4, 0.9, 0.8, 2.4, 0.9],
            default_joints: [leg[0], leg[1], leg[2], leg[0], leg[1], leg[2]],
            kp: [80.0, 80.0, 80.0, 80.0, 80.0, 80.0],
            kd: [2.0, 2.0, 1.5, 2.0, 2.0, 1.5],
            torque_limit: 40.0,
            gravity: 9.81,
            contact_stiffness: 2e4,
            contact_damping: 150.0,
            friction_coeff: 1.0,
            friction_damping: 200.0,
            dt_phys: 0.002,
            substeps: 10,
            action_scale: 0.5,
            contacts_enabled: true,
        }
    }
}

/// World-frame positions of the kinematic chain. Index 0 is the left leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyPoints {
    pub torso_top: Point,
    /// Torso bottom; coincides with the root.
    pub hip: Point,
    pub knee: [Point; 2],
    pub ankle: [Point; 2],
    pub heel: [Point; 2],
    pub toe: [Point; 2],
}

impl BodyPoints {
    /// Points tested against the ground, in a fixed order:
    /// torso top, hip, left/right knee, left/right heel, left/right toe.
    pub fn contact_points(&self) -> [Point; N_CONTACTS] {
        [
            self.torso_top,
            self.hip,
            self.knee[0],
            self.knee[1],
            self.heel[0],
            self.heel[1],
            self.toe[0],
            self.toe[1],
        ]
    }

    /// Lowest sole point per foot.
    pub fn foot_heights(&self) -> [f64; 2] {
        [
            self.heel[0][1].min(self.toe[0][1]),
            self.heel[1][1].min(self.toe[1][1]),
        ]
    }
}

/// Direction of a link hanging from its parent at absolute angle `theta`.
#[inline]
fn down(theta: f64) -> Point {
    [-theta.sin(), -theta.cos()]
}

#[inline]
fn add(p: Point, s: f64, d: Point) -> Point {
    [p[0] + s * d[0], p[1] + s * d[1]]
}

impl BipedModel {
    pub fn dt_ctrl(&self) -> f64 {
        self.dt_phys * self.substeps as f64
    }

    pub fn total_mass(&self) -> f64 {
        self.torso_mass + 2.0 * (self.thigh_mass + self.shank_mass + self.foot_mass)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("torso_len", self.torso_len),
            ("thigh_len", self.thigh_len),
            ("shank_len", self.shank_len),
            ("ankle_height", self.ankle_height),
            ("heel_len", self.heel_len),
            ("toe_len", self.toe_len),
            ("torso_mass", self.torso_mass),
            ("thigh_mass", self.thigh_mass),
            ("shank_mass", self.shank_mass),
            ("foot_mass", self.foot_mass),
            ("torque_limit", self.torque_limit),
            ("gravity", self.gravity),
            ("contact_stiffness", self.contact_stiffness),
            ("contact_damping", self.contact_damping),
            ("friction_coeff", self.friction_coeff),
            ("friction_damping", self.friction_damping),
            ("dt_phys", self.dt_phys),
            ("action_scale", self.action_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("model.{name} must be positive, got {v}")));
            }
        }
        if self.substeps == 0 {
            return Err(Error::Config("model.substeps must be at least 1".into()));
        }
        if self.inertia.iter().any(|&m| !(m.is_finite() && m > 0.0)) {
            return Err(Error::Config("model.inertia entries must be positive".into()));
        }
        for j in 0..NJ {
            if !(self.joint_lower[j] < self.joint_upper[j]) {
                return Err(Error::Config(format!("model joint {j}: lower limit must be below upper")));
            }
            if self.default_joints[j] < self.joint_lower[j] || self.default_joints[j] > self.joint_upper[j] {
                return Err(Error::Config(format!("model joint {j}: default outside limits")));
            }
            if self.kp[j] < 0.0 || self.kd[j] < 0.0 {
                return Err(Error::Config(format!("model joint {j}: gains must be non-negative")));
            }
        }
        Ok(())
    }

    /// Standing pose: default joints, zero pitch, root height chosen so both
    /// soles rest exactly on the ground.
    pub fn q_default(&self) -> [f64; NQ] {
        let mut q = [0.0; NQ];
        q[3..].copy_from_slice(&self.default_joints);
        let pts = fk(self, &q);
        let lowest = pts.foot_heights()[0].min(pts.foot_heights()[1]);
        q[1] = -lowest;
        q
    }

    pub fn standing_height(&self) -> f64 {
        self.q_default()[1]
    }

    /// Gravitational potential of the lumped link masses.
    pub fn potential_energy(&self, q: &[f64; NQ]) -> f64 {
        let p = fk(self, q);
        let mut mz = self.torso_mass * 0.5 * (p.hip[1] + p.torso_top[1]);
        for leg in 0..2 {
            mz += self.thigh_mass * 0.5 * (p.hip[1] + p.knee[leg][1]);
            mz += self.shank_mass * 0.5 * (p.knee[leg][1] + p.ankle[leg][1]);
            mz += self.foot_mass * (p.ankle[leg][1] - self.ankle_height_along(q, leg));
        }
        self.gravity * mz
    }

    // Vertical drop from ankle to sole centre for the given leg.
    fn ankle_height_along(&self, q: &[f64; NQ], leg: usize) -> f64 {
        let j = 3 + 3 * leg;
        let theta = q[2] + q[j] + q[j + 1] + q[j + 2];
        self.ankle_height * theta.cos()
    }

    /// `-dU/dq` by central differences.
    pub fn gravity_force(&self, q: &[f64; NQ]) -> [f64; NQ] {
        let mut out = [0.0; NQ];
        let mut qp = *q;
        for i in 0..NQ {
            let orig = qp[i];
            qp[i] = orig + GRAVITY_FD_STEP;
            let up = self.potential_energy(&qp);
            qp[i] = orig - GRAVITY_FD_STEP;
            let um = self.potential_energy(&qp);
            qp[i] = orig;
            out[i] = -(up - um) / (2.0 * GRAVITY_FD_STEP);
        }
        out
    }

    /// Jacobians of all contact points, `jac[i][k] = d contact_k / d q_i`.
    pub fn contact_jacobian(&self, q: &[f64; NQ]) -> [[Point; N_CONTACTS]; NQ] {
        let mut jac = [[[0.0; 2]; N_CONTACTS]; NQ];
        let mut qp = *q;
        for (i, col) in jac.iter_mut().enumerate() {
            let orig = qp[i];
            qp[i] = orig + JACOBIAN_FD_STEP;
            let up = fk(self, &qp).contact_points();
            qp[i] = orig - JACOBIAN_FD_STEP;
            let dn = fk(self, &qp).contact_points();
            qp[i] = orig;
            for k in 0..N_CONTACTS {
                col[k] = [
                    (up[k][0] - dn[k][0]) / (2.0 * JACOBIAN_FD_STEP),
                    (up[k][1] - dn[k][1]) / (2.0 * JACOBIAN_FD_STEP),
                ];
            }
        }
        jac
    }

    /// Normal force of a single contact point; never negative.
    pub fn normal_force(&self, penetration: f64, normal_velocity: f64) -> f64 {
        if penetration <= 0.0 {
            return 0.0;
        }
        (self.contact_stiffness * penetration - self.contact_damping * normal_velocity).max(0.0)
    }

    /// Tangential force opposing sliding, capped at `mu * normal`.
    pub fn friction_force(&self, normal: f64, tangential_velocity: f64) -> f64 {
        let cap = self.friction_coeff * normal;
        (-self.friction_damping * tangential_velocity).clamp(-cap, cap)
    }
}

/// Planar forward kinematics.
pub fn fk(model: &BipedModel, q: &[f64; NQ]) -> BodyPoints {
    let hip = [q[0], q[1]];
    let pitch = q[2];
    let torso_top = [hip[0] + model.torso_len * pitch.sin(), hip[1] + model.torso_len * pitch.cos()];
    let mut knee = [[0.0; 2]; 2];
    let mut ankle = [[0.0; 2]; 2];
    let mut heel = [[0.0; 2]; 2];
    let mut toe = [[0.0; 2]; 2];
    for leg in 0..2 {
        let j = 3 + 3 * leg;
        let th_thigh = pitch + q[j];
        let th_shank = th_thigh + q[j + 1];
        let th_foot = th_shank + q[j + 2];
        knee[leg] = add(hip, model.thigh_len, down(th_thigh));
        ankle[leg] = add(knee[leg], model.shank_len, down(th_shank));
        let sole = add(ankle[leg], model.ankle_height, down(th_foot));
        let forward = [th_foot.cos(), -th_foot.sin()];
        heel[leg] = add(sole, -model.heel_len, forward);
        toe[leg] = add(sole, model.toe_len, forward);
    }
    BodyPoints {
        torso_top,
        hip,
        knee,
        ankle,
        heel,
        toe,
    }
}

/// Gravity direction in the body frame: `(sin pitch, -cos pitch)`.
pub fn projected_gravity(pitch: f64) -> (f64, f64) {
    (pitch.sin(), -pitch.cos())
}

pub fn pd_torque(model: &BipedModel, target: &[f64; NJ], q: &[f64; NQ], qd: &[f64; NQ]) -> [f64; NJ] {
    let mut tau = [0.0; NJ];
    for j in 0..NJ {
        let raw = model.kp[j] * (target[j] - q[3 + j]) - model.kd[j] * qd[3 + j];
        tau[j] = raw.clamp(-model.torque_limit, model.torque_limit);
    }
    tau
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub q: [f64; NQ],
    pub qd: [f64; NQ],
    pub time: f64,
    pub prev_action: [f64; NJ],
    pub prev_prev_action: [f64; NJ],
    pub command: f64,
    pub foot_contact: [bool; 2],
}

impl SimState {
    pub fn pitch(&self) -> f64 {
        self.q[2]
    }

    pub fn gravity_z(&self) -> f64 {
        projected_gravity(self.q[2]).1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Torques applied during the last substep.
    pub torques: [f64; NJ],
    pub foot_contact: [bool; 2],
}

/// Clips the action to `[-1, 1]` and maps it to absolute joint targets.
pub fn action_to_target(model: &BipedModel, action: &[f64; NJ]) -> [f64; NJ] {
    let mut target = [0.0; NJ];
    for j in 0..NJ {
        target[j] = model.default_joints[j] + model.action_scale * action[j].clamp(-1.0, 1.0);
    }
    target
}

/// Accelerations-producing generalized forces from ground contact.
fn contact_generalized_force(model: &BipedModel, q: &[f64; NQ], qd: &[f64; NQ], out: &mut [f64; NQ]) -> [bool; 2] {
    let pts = fk(model, q).contact_points();
    if pts.iter().all(|p| p[1] >= 0.0) {
        return [false; 2];
    }
    let jac = model.contact_jacobian(q);
    let mut feet = [false; 2];
    for (k, p) in pts.iter().enumerate() {
        if p[1] >= 0.0 {
            continue;
        }
        let mut vel = [0.0; 2];
        for i in 0..NQ {
            vel[0] += jac[i][k][0] * qd[i];
            vel[1] += jac[i][k][1] * qd[i];
        }
        let fz = model.normal_force(-p[1], vel[1]);
        let fx = model.friction_force(fz, vel[0]);
        for i in 0..NQ {
            out[i] += jac[i][k][0] * fx + jac[i][k][1] * fz;
        }
        // heel/toe occupy indices 4..8, alternating left/right
        if k >= 4 {
            feet[k % 2] = true;
        }
    }
    feet
}

/// Advances one control period.
pub fn step(model: &BipedModel, state: &SimState, action: &[f64; NJ]) -> Result<(SimState, StepInfo)> {
    let clipped = action.map(|a| a.clamp(-1.0, 1.0));
    let target = action_to_target(model, &clipped);
    let mut q = state.q;
    let mut qd = state.qd;
    let mut torques = [0.0; NJ];
    let mut feet = [false; 2];
    let dt = model.dt_phys;
    for _ in 0..model.substeps {
        torques = pd_torque(model, &target, &q, &qd);
        let mut force = model.gravity_force(&q);
        for j in 0..NJ {
            force[3 + j] += torques[j];
        }
        feet = if model.contacts_enabled {
            contact_generalized_force(model, &q, &qd, &mut force)
        } else {
            [false; 2]
        };
        for i in 0..NQ {
            qd[i] += dt * force[i] / model.inertia[i];
            q[i] += dt * qd[i];
        }
        for j in 0..NJ {
            let i = 3 + j;
            if q[i] < model.joint_lower[j] {
                q[i] = model.joint_lower[j];
                qd[i] = 0.0;
            } else if q[i] > model.joint_upper[j] {
                q[i] = model.joint_upper[j];
                qd[i] = 0.0;
            }
        }
    }
    for (i, v) in q.iter().chain(qd.iter()).enumerate() {
        if !v.is_finite() {
            return Err(Error::IntegrationBlowup {
                coordinate: i % NQ,
                value: *v,
            });
        }
    }
    let next = SimState {
        q,
        qd,
        time: state.time + model.dt_ctrl(),
        prev_action: clipped,
        prev_prev_action: state.prev_action,
        command: state.command,
        foot_contact: feet,
    };
    Ok((next, StepInfo { torques, foot_contact: feet }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Upright,
    Prone,
    Supine,
}

pub const LYING_PITCH: f64 = 1.45;
pub const LYING_ROOT_Z: f64 = 0.15;

pub fn reset<R: Rng + ?Sized>(model: &BipedModel, mode: InitMode, v_cmd: f64, rng: &mut R) -> SimState {
    let mut q = model.q_default();
    match mode {
        InitMode::Upright => {
            for j in 0..NJ {
                q[3 + j] = (q[3 + j] + rng.random_range(-0.05..=0.05))
                    .clamp(model.joint_lower[j], model.joint_upper[j]);
            }
            q[2] = rng.random_range(-0.1..=0.1);
        }
        InitMode::Prone | InitMode::Supine => {
            let sign = if mode == InitMode::Prone { 1.0 } else { -1.0 };
            q[2] = sign * LYING_PITCH + rng.random_range(-0.1..=0.1);
            q[1] = LYING_ROOT_Z;
        }
    }
    SimState {
        q,
        qd: [0.0; NQ],
        time: 0.0,
        prev_action: [0.0; NJ],
        prev_prev_action: [0.0; NJ],
        command: v_cmd,
        foot_contact: [false; 2],
    }
}

pub type ObsFrame = [f64; OBS_FRAME_DIM];

/// Observation frame: pitch rate, projected gravity (2), command, joint
/// positions relative to default (6), joint velocities (6), previous action (6).
pub fn make_obs_frame(model: &BipedModel, state: &SimState) -> ObsFrame {
    let mut f = [0.0; OBS_FRAME_DIM];
    let (gx, gz) = projected_gravity(state.q[2]);
    f[0] = state.qd[2];
    f[1] = gx;
    f[2] = gz;
    f[3] = state.command;
    for j in 0..NJ {
        f[4 + j] = state.q[3 + j] - model.default_joints[j];
        f[10 + j] = state.qd[3 + j];
        f[16 + j] = state.prev_action[j];
    }
    f
}

/// Concatenates frames, oldest first.
pub fn assemble_observation(history: &[ObsFrame]) -> Result<Vec<f64>> {
    if history.len() != HISTORY_LEN {
        return Err(Error::DimensionMismatch {
            context: "observation history frames",
            expected: HISTORY_LEN,
            actual: history.len(),
        });
    }
    Ok(history.iter().flat_map(|f| f.iter().copied()).collect())
}

/// Rolling frame history, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsHistory {
    frames: [ObsFrame; HISTORY_LEN],
}

impl ObsHistory {
    pub fn filled(frame: ObsFrame) -> Self {
        ObsHistory {
            frames: [frame; HISTORY_LEN],
        }
    }

    pub fn push(&mut self, frame: ObsFrame) {
        self.frames.rotate_left(1);
        self.frames[HISTORY_LEN - 1] = frame;
    }

    pub fn frames(&self) -> &[ObsFrame] {
        &self.frames
    }

    pub fn observation(&self) -> Vec<f64> {
        assemble_observation(&self.frames).expect("history has fixed length")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standing_pose_feet_on_ground() {
        let m = BipedModel::default();
        let p = fk(&m, &m.q_default());
        for leg in 0..2 {
            assert!(p.heel[leg][1].abs() < 1e-9);
            assert!(p.toe[leg][1].abs() < 1e-9);
        }
        assert!(m.standing_height() > 0.4);
    }

    #[test]
    fn fk_translates_rigidly() {
        let m = BipedModel::default();
        let q = m.q_default();
        let mut q2 = q;
        q2[0] += 1.0;
        let a = fk(&m, &q).contact_points();
        let b = fk(&m, &q2).contact_points();
        for (pa, pb) in a.iter().zip(&b) {
            assert!((pb[0] - pa[0] - 1.0).abs() < 1e-12);
            assert_eq!(pa[1], pb[1]);
        }
    }

    #[test]
    fn inverted_torso_points_down() {
        let m = BipedModel::default();
        let mut q = m.q_default();
        q[2] = std::f64::consts::PI;
        let p = fk(&m, &q);
        assert!(p.torso_top[1] < p.hip[1]);
    }

    #[test]
    fn projected_gravity_anchors() {
        let (x, z) = projected_gravity(0.0);
        assert_eq!((x, z), (0.0, -1.0));
        let (x, z) = projected_gravity(std::f64::consts::FRAC_PI_2);
        assert!((x - 1.0).abs() < 1e-15 && z.abs() < 1e-15);
        let (x, z) = projected_gravity(std::f64::consts::PI);
        assert!(x.abs() < 1e-15 && (z - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pd_torque_cases() {
        let mut m = BipedModel::default();
        let q = m.q_default();
        let target: [f64; NJ] = q[3..].try_into().unwrap();
        assert_eq!(pd_torque(&m, &target, &q, &[0.0; NQ]), [0.0; NJ]);

        m.kp = [50.0; NJ];
        let mut t = target;
        t[0] += 0.1;
        let tau = pd_torque(&m, &t, &q, &[0.0; NQ]);
        assert!((tau[0] - 5.0).abs() < 1e-12);

        t[1] += 100.0;
        t[2] -= 100.0;
        let tau = pd_torque(&m, &t, &q, &[0.0; NQ]);
        assert_eq!(tau[1], m.torque_limit);
        assert_eq!(tau[2], -m.torque_limit);
    }

    #[test]
    fn normal_force_static_penetration() {
        let m = BipedModel::default();
        assert!((m.normal_force(0.01, 0.0) - 200.0).abs() < 1e-9);
        assert_eq!(m.normal_force(0.01, 100.0), 0.0);
        assert_eq!(m.normal_force(-0.01, -1.0), 0.0);
    }

    #[test]
    fn friction_is_capped() {
        let m = BipedModel::default();
        assert_eq!(m.friction_force(10.0, 5.0), -10.0);
        assert_eq!(m.friction_force(10.0, -5.0), 10.0);
        assert!((m.friction_force(100.0, 0.01) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn reset_modes() {
        let m = BipedModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let s = reset(&m, InitMode::Upright, 0.5, &mut rng);
            assert!(s.q[2].abs() <= 0.1);
            assert_eq!(s.command, 0.5);
            let p = reset(&m, InitMode::Prone, 0.0, &mut rng);
            assert!((p.q[2] - 1.45).abs() <= 0.1 + 1e-12);
            assert_eq!(p.q[1], 0.15);
            let s = reset(&m, InitMode::Supine, 0.0, &mut rng);
            assert!(s.q[2] < 0.0);
            assert!(s.qd.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn obs_frame_layout() {
        let m = BipedModel::default();
        let mut s = SimState {
            q: m.q_default(),
            qd: [0.0; NQ],
            time: 0.0,
            prev_action: [0.0; NJ],
            prev_prev_action: [0.0; NJ],
            command: 0.0,
            foot_contact: [true; 2],
        };
        let f = make_obs_frame(&m, &s);
        for (i, v) in f.iter().enumerate() {
            let expected = if i == 2 { -1.0 } else { 0.0 };
            assert_eq!(*v, expected, "slot {i}");
        }
        s.command = 1.0;
        s.qd[2] = 2.0;
        let f = make_obs_frame(&m, &s);
        assert_eq!(f[3], 1.0);
        assert_eq!(f[0], 2.0);
    }

    #[test]
    fn observation_assembly() {
        let f: ObsFrame = std::array::from_fn(|i| i as f64);
        let obs = assemble_observation(&[f; 4]).unwrap();
        assert_eq!(obs.len(), OBS_DIM);
        for k in 0..4 {
            assert_eq!(&obs[k * 22..(k + 1) * 22], &f[..]);
        }
        assert!(assemble_observation(&[f; 3]).is_err());

        let mut h = ObsHistory::filled(f);
        let prev = h.observation();
        h.push([9.0; OBS_FRAME_DIM]);
        let next = h.observation();
        assert_eq!(&next[44..66], &prev[66..88]);
        assert_eq!(&next[66..88], &[9.0; 22][..]);
    }

    #[test]
    fn step_is_deterministic() {
        let m = BipedModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = reset(&m, InitMode::Upright, 0.3, &mut rng);
        let a = [0.3, -0.2, 0.1, 0.5, -1.5, 0.0];
        let (s1, _) = step(&m, &s, &a).unwrap();
        let (s2, _) = step(&m, &s, &a).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.prev_action[4], -1.0);
        assert_eq!(s1.prev_prev_action, s.prev_action);
    }

    #[test]
    fn blowup_is_reported() {
        let m = BipedModel::default();
        let mut s = reset(&m, InitMode::Upright, 0.0, &mut ChaCha8Rng::seed_from_u64(0));
        s.qd[1] = f64::INFINITY;
        match step(&m, &s, &[0.0; NJ]) {
            Err(Error::IntegrationBlowup { .. }) => {}
            other => panic!("expected blowup, got {other:?}"),
        }
    }
}
