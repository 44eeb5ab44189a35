//! Reference motion clips: procedural generation, file I/O, style features and
//! transition sampling.
//!
//! Clips store poses only. Velocities entering the style features are forward
//! differences over `1 / fps`.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{fk, projected_gravity, BipedModel, SimState, NJ, NQ};

pub const FEATURE_DIM: usize = 20;
pub const FRAME_WIDTH: usize = 9;
/// Largest joint displacement allowed between consecutive frames, in radians.
pub const CONTINUITY_BOUND: f64 = 0.5;

/// Per-frame style features: projected gravity (2), root height, root linear
/// velocity (2), pitch rate, joint positions (6), joint velocities (6), foot
/// heights (2).
pub type FeatureVec = [f64; FEATURE_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipFrame {
    pub root_x: f64,
    pub root_z: f64,
    pub pitch: f64,
    /// Left hip, knee, ankle, then right hip, knee, ankle.
    pub joint_pos: [f64; NJ],
}

impl ClipFrame {
    pub fn q(&self) -> [f64; NQ] {
        let mut q = [0.0; NQ];
        q[0] = self.root_x;
        q[1] = self.root_z;
        q[2] = self.pitch;
        q[3..].copy_from_slice(&self.joint_pos);
        q
    }

    pub fn from_q(q: &[f64; NQ]) -> Self {
        ClipFrame {
            root_x: q[0],
            root_z: q[1],
            pitch: q[2],
            joint_pos: q[3..].try_into().unwrap(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorTag {
    Walk,
    Run,
    GetupProne,
    GetupSupine,
}

impl BehaviorTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorTag::Walk => "walk",
            BehaviorTag::Run => "run",
            BehaviorTag::GetupProne => "getup_prone",
            BehaviorTag::GetupSupine => "getup_supine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "walk" => BehaviorTag::Walk,
            "run" => BehaviorTag::Run,
            "getup_prone" => BehaviorTag::GetupProne,
            "getup_supine" => BehaviorTag::GetupSupine,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub name: String,
    pub fps: f64,
    pub frames: Vec<ClipFrame>,
    pub behavior_tag: BehaviorTag,
}

impl MotionClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    /// Checks frame count, fps, finiteness, joint limits, root height and the
    /// inter-frame continuity bound.
    pub fn validate(&self, model: &BipedModel) -> Result<()> {
        let fail = |frame: usize, message: String| Error::ClipValidation {
            clip: self.name.clone(),
            frame,
            message,
        };
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(fail(0, format!("fps must be positive, got {}", self.fps)));
        }
        if self.frames.len() < 2 {
            return Err(fail(0, format!("need at least 2 frames, got {}", self.frames.len())));
        }
        const TOL: f64 = 1e-12;
        for (i, f) in self.frames.iter().enumerate() {
            if !f.q().iter().all(|v| v.is_finite()) {
                return Err(fail(i, "non-finite value".into()));
            }
            if f.root_z < 0.0 {
                return Err(fail(i, format!("root_z {} below ground", f.root_z)));
            }
            for j in 0..NJ {
                let v = f.joint_pos[j];
                if v < model.joint_lower[j] - TOL || v > model.joint_upper[j] + TOL {
                    return Err(fail(
                        i,
                        format!(
                            "joint {j} = {v} outside [{}, {}]",
                            model.joint_lower[j], model.joint_upper[j]
                        ),
                    ));
                }
            }
            if i > 0 {
                let prev = &self.frames[i - 1];
                for j in 0..NJ {
                    let d = (f.joint_pos[j] - prev.joint_pos[j]).abs();
                    if d > CONTINUITY_BOUND {
                        return Err(fail(i, format!("joint {j} jumps {d:.4} rad (bound {CONTINUITY_BOUND})")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitParams {
    /// Requested gait frequency in Hz; snapped so a period spans a whole number of frames.
    pub frequency: f64,
    pub hip_amplitude: f64,
    pub knee_amplitude: f64,
    pub ankle_amplitude: f64,
    /// Constant root lowering relative to standing height.
    pub crouch: f64,
    /// Peak vertical bounce of the root.
    pub bob: f64,
    /// Constant forward pitch.
    pub lean: f64,
    pub duration: f64,
}

impl GaitParams {
    pub fn walk() -> Self {
        GaitParams {
            frequency: 1.4,
            hip_amplitude: 0.35,
            knee_amplitude: 0.5,
            ankle_amplitude: 0.2,
            crouch: 0.0,
            bob: 0.01,
            lean: 0.0,
            duration: 4.0,
        }
    }

    pub fn run() -> Self {
        GaitParams {
            frequency: 2.6,
            hip_amplitude: 0.6,
            knee_amplitude: 0.9,
            ankle_amplitude: 0.3,
            crouch: 0.05,
            bob: 0.03,
            lean: 0.1,
            duration: 4.0,
        }
    }
}

impl Default for GaitParams {
    fn default() -> Self {
        Self::walk()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipConfig {
    pub fps: f64,
    pub walk: GaitParams,
    pub run: GaitParams,
    /// Seconds between consecutive get-up keyframes.
    pub getup_segment: f64,
    /// Standing hold appended after the last get-up keyframe.
    pub getup_hold: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig {
            fps: 50.0,
            walk: GaitParams::walk(),
            run: GaitParams::run(),
            getup_segment: 1.0,
            getup_hold: 0.6,
        }
    }
}

fn check_timing(fps: f64, duration: f64) -> Result<()> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::Config(format!("clip fps must be positive, got {fps}")));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::Config(format!("clip duration must be positive, got {duration}")));
    }
    Ok(())
}

/// Frames per gait period after snapping the frequency.
pub fn period_frames(fps: f64, frequency: f64) -> usize {
    ((fps / frequency).round() as usize).max(2)
}

/// Frequency actually used by the generator.
pub fn effective_frequency(fps: f64, frequency: f64) -> f64 {
    fps / period_frames(fps, frequency) as f64
}

/// Forward speed the gait generator advances the root at.
pub fn nominal_speed(model: &BipedModel, fps: f64, gait: &GaitParams) -> f64 {
    let leg = model.thigh_len + model.shank_len;
    4.0 * effective_frequency(fps, gait.frequency) * leg * gait.hip_amplitude.sin()
}

fn generate_gait(model: &BipedModel, fps: f64, gait: &GaitParams, name: &str, tag: BehaviorTag) -> Result<MotionClip> {
    check_timing(fps, gait.duration)?;
    if !(gait.frequency.is_finite() && gait.frequency > 0.0) {
        return Err(Error::Config(format!("gait frequency must be positive, got {}", gait.frequency)));
    }
    let n = (gait.duration * fps).round() as usize;
    let period = period_frames(fps, gait.frequency);
    let speed = nominal_speed(model, fps, gait);
    let stand = model.standing_height();
    let d = model.default_joints;
    let run_like = tag == BehaviorTag::Run;
    let frames = (0..n)
        .map(|i| {
            let t = i as f64 / fps;
            let phi = 2.0 * std::f64::consts::PI * (i % period) as f64 / period as f64;
            let mut joints = [0.0; NJ];
            for leg in 0..2 {
                let p = phi + leg as f64 * std::f64::consts::PI;
                let swing = p.cos().max(0.0);
                joints[3 * leg] = d[3 * leg] - gait.hip_amplitude * p.sin();
                joints[3 * leg + 1] = d[3 * leg + 1] + gait.knee_amplitude * swing * swing;
                joints[3 * leg + 2] = d[3 * leg + 2] + gait.ankle_amplitude * p.sin();
            }
            for (j, q) in joints.iter_mut().enumerate() {
                *q = q.clamp(model.joint_lower[j], model.joint_upper[j]);
            }
            let bounce = if run_like {
                gait.bob * phi.sin().abs()
            } else {
                gait.bob * 0.5 * (1.0 - (2.0 * phi).cos())
            };
            ClipFrame {
                root_x: speed * t,
                root_z: stand - gait.crouch - bounce,
                pitch: gait.lean,
                joint_pos: joints,
            }
        })
        .collect();
    Ok(MotionClip {
        name: name.to_string(),
        fps,
        frames,
        behavior_tag: tag,
    })
}

pub fn generate_walk_clip(model: &BipedModel, cfg: &ClipConfig) -> Result<MotionClip> {
    generate_gait(model, cfg.fps, &cfg.walk, "walk", BehaviorTag::Walk)
}

pub fn generate_run_clip(model: &BipedModel, cfg: &ClipConfig) -> Result<MotionClip> {
    generate_gait(model, cfg.fps, &cfg.run, "run", BehaviorTag::Run)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LyingStart {
    Prone,
    Supine,
}

impl std::str::FromStr for LyingStart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prone" => Ok(LyingStart::Prone),
            "supine" => Ok(LyingStart::Supine),
            other => Err(Error::Config(format!("invalid get-up start '{other}' (expected prone|supine)"))),
        }
    }
}

/// (pitch, root_z, hip, knee, ankle); legs are symmetric.
type Keyframe = (f64, f64, f64, f64, f64);

fn getup_keyframes(model: &BipedModel, start: LyingStart) -> [Keyframe; 4] {
    let d = model.default_joints;
    let stand = (0.0, model.standing_height(), d[0], d[1], d[2]);
    match start {
        LyingStart::Prone => [
            (1.45, 0.15, 0.0, 0.2, 0.0),
            (1.0, 0.22, -1.2, 1.8, -0.3),
            (0.5, 0.32, -1.6, 2.2, -0.6),
            stand,
        ],
        LyingStart::Supine => [
            (-1.45, 0.15, 0.0, 0.2, 0.0),
            (-0.6, 0.18, -1.5, 2.0, -0.2),
            (0.4, 0.30, -1.8, 2.3, -0.6),
            stand,
        ],
    }
}

/// Cubic Hermite blend with zero end slopes.
fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

pub fn generate_getup_clip(model: &BipedModel, start: LyingStart, cfg: &ClipConfig) -> Result<MotionClip> {
    check_timing(cfg.fps, cfg.getup_segment)?;
    if !(cfg.getup_hold.is_finite() && cfg.getup_hold >= 0.0) {
        return Err(Error::Config("getup_hold must be non-negative".into()));
    }
    let keys = getup_keyframes(model, start);
    let motion_time = cfg.getup_segment * (keys.len() - 1) as f64;
    let n = ((motion_time + cfg.getup_hold) * cfg.fps).round() as usize + 1;
    let frames = (0..n)
        .map(|i| {
            let t = i as f64 / cfg.fps;
            let seg = ((t / cfg.getup_segment).floor() as usize).min(keys.len() - 2);
            let s = smoothstep((t - seg as f64 * cfg.getup_segment) / cfg.getup_segment);
            let (a, b) = (keys[seg], keys[seg + 1]);
            let lerp = |x: f64, y: f64| x + (y - x) * s;
            let (hip, knee, ankle) = (lerp(a.2, b.2), lerp(a.3, b.3), lerp(a.4, b.4));
            let mut joints = [hip, knee, ankle, hip, knee, ankle];
            for (j, q) in joints.iter_mut().enumerate() {
                *q = q.clamp(model.joint_lower[j], model.joint_upper[j]);
            }
            ClipFrame {
                root_x: 0.0,
                root_z: lerp(a.1, b.1),
                pitch: lerp(a.0, b.0),
                joint_pos: joints,
            }
        })
        .collect();
    let (name, tag) = match start {
        LyingStart::Prone => ("getup_prone", BehaviorTag::GetupProne),
        LyingStart::Supine => ("getup_supine", BehaviorTag::GetupSupine),
    };
    Ok(MotionClip {
        name: name.to_string(),
        fps: cfg.fps,
        frames,
        behavior_tag: tag,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClip {
    name: String,
    fps: f64,
    behavior_tag: String,
    frames: Vec<Vec<f64>>,
}

fn fmt_num(out: &mut String, v: f64) {
    // 17 significant digits; parsed back exactly with serde_json's float_roundtrip.
    write!(out, "{v:.16e}").unwrap();
}

/// Serializes a clip as a JSON document (one frame per line).
pub fn clip_to_string(clip: &MotionClip) -> String {
    let mut out = String::new();
    out.push_str("{\n  \"name\": ");
    out.push_str(&serde_json::to_string(&clip.name).unwrap());
    out.push_str(",\n  \"fps\": ");
    fmt_num(&mut out, clip.fps);
    out.push_str(",\n  \"behavior_tag\": \"");
    out.push_str(clip.behavior_tag.as_str());
    out.push_str("\",\n  \"frames\": [\n");
    for (i, f) in clip.frames.iter().enumerate() {
        out.push_str("    [");
        for (k, v) in f.q().iter().enumerate() {
            if k > 0 {
                out.push_str(", ");
            }
            fmt_num(&mut out, *v);
        }
        out.push(']');
        if i + 1 < clip.frames.len() {
            out.push(',');
        }
        out.push('\n');
    }
    out.push_str("  ]\n}\n");
    out
}

/// Parses and validates a clip document. `origin` labels error locations.
pub fn clip_from_str(text: &str, origin: &str, model: &BipedModel) -> Result<MotionClip> {
    let raw: RawClip = serde_json::from_str(text).map_err(|e| Error::ClipParse {
        location: format!("{origin}:{}:{}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let tag = BehaviorTag::parse(&raw.behavior_tag).ok_or_else(|| Error::ClipParse {
        location: format!("{origin}: field behavior_tag"),
        message: format!("unknown behavior tag '{}'", raw.behavior_tag),
    })?;
    let mut frames = Vec::with_capacity(raw.frames.len());
    for (i, row) in raw.frames.iter().enumerate() {
        let q: [f64; NQ] = row.as_slice().try_into().map_err(|_| Error::ClipParse {
            location: format!("{origin}: frames[{i}]"),
            message: format!("expected {FRAME_WIDTH} numbers, got {}", row.len()),
        })?;
        frames.push(ClipFrame::from_q(&q));
    }
    let clip = MotionClip {
        name: raw.name,
        fps: raw.fps,
        frames,
        behavior_tag: tag,
    };
    clip.validate(model)?;
    Ok(clip)
}

pub fn save_clip(clip: &MotionClip, path: &Path) -> Result<()> {
    std::fs::write(path, clip_to_string(clip)).map_err(|e| Error::io(path, e))
}

pub fn load_clip(path: &Path, model: &BipedModel) -> Result<MotionClip> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    clip_from_str(&text, &path.display().to_string(), model)
}

/// Features from a pose and generalized velocity.
pub fn pose_feature(model: &BipedModel, q: &[f64; NQ], qd: &[f64; NQ]) -> FeatureVec {
    let mut f = [0.0; FEATURE_DIM];
    let (gx, gz) = projected_gravity(q[2]);
    f[0] = gx;
    f[1] = gz;
    f[2] = q[1];
    f[3] = qd[0];
    f[4] = qd[1];
    f[5] = qd[2];
    f[6..12].copy_from_slice(&q[3..]);
    f[12..18].copy_from_slice(&qd[3..]);
    let feet = fk(model, q).foot_heights();
    f[18] = feet[0];
    f[19] = feet[1];
    f
}

pub fn state_feature(model: &BipedModel, state: &SimState) -> FeatureVec {
    pose_feature(model, &state.q, &state.qd)
}

/// Features of frame `index`; velocities are forward differences to `index + 1`.
pub fn clip_feature(model: &BipedModel, clip: &MotionClip, index: usize) -> Result<FeatureVec> {
    if index + 1 >= clip.frames.len() {
        return Err(Error::IndexOutOfRange {
            index,
            len: clip.frames.len().saturating_sub(1),
        });
    }
    let q = clip.frames[index].q();
    let q1 = clip.frames[index + 1].q();
    let qd: [f64; NQ] = std::array::from_fn(|i| (q1[i] - q[i]) * clip.fps);
    Ok(pose_feature(model, &q, &qd))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub feat_t: FeatureVec,
    pub feat_t1: FeatureVec,
    /// Normalized command; present only for locomotion-discriminator samples.
    pub condition: Option<f64>,
}

impl Transition {
    /// `[feat_t, feat_t1]`, 40 values.
    pub fn concat(&self) -> [f64; 2 * FEATURE_DIM] {
        let mut out = [0.0; 2 * FEATURE_DIM];
        out[..FEATURE_DIM].copy_from_slice(&self.feat_t);
        out[FEATURE_DIM..].copy_from_slice(&self.feat_t1);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.feat_t.iter().chain(&self.feat_t1).all(|v| v.is_finite())
            && self.condition.is_none_or(f64::is_finite)
    }
}

/// Clip with its per-frame features precomputed.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub clip: MotionClip,
    features: Vec<FeatureVec>,
}

impl FeatureTable {
    pub fn new(model: &BipedModel, clip: MotionClip) -> Result<Self> {
        if clip.frames.len() < 3 {
            return Err(Error::ClipTooShort {
                clip: clip.name.clone(),
                frames: clip.frames.len(),
                required: 3,
            });
        }
        let features = (0..clip.frames.len() - 1)
            .map(|i| clip_feature(model, &clip, i))
            .collect::<Result<_>>()?;
        Ok(FeatureTable { clip, features })
    }

    /// Number of distinct sampleable transitions.
    pub fn num_transitions(&self) -> usize {
        self.clip.frames.len() - 2
    }

    pub fn transition(&self, i: usize) -> Transition {
        Transition {
            feat_t: self.features[i],
            feat_t1: self.features[i + 1],
            condition: None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Transition {
        self.transition(rng.random_range(0..self.num_transitions()))
    }
}

/// Uniform transition `(i, i + 1)` with `i` in `[0, len - 2)`.
pub fn sample_transition<R: Rng + ?Sized>(model: &BipedModel, clip: &MotionClip, rng: &mut R) -> Result<Transition> {
    if clip.frames.len() < 3 {
        return Err(Error::ClipTooShort {
            clip: clip.name.clone(),
            frames: clip.frames.len(),
            required: 3,
        });
    }
    let i = rng.random_range(0..clip.frames.len() - 2);
    Ok(Transition {
        feat_t: clip_feature(model, clip, i)?,
        feat_t1: clip_feature(model, clip, i + 1)?,
        condition: None,
    })
}

fn check_condition(v_hat: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v_hat) {
        return Err(Error::ConditionOutOfRange(v_hat));
    }
    Ok(())
}

/// Draws from the run clip with probability `v_hat`, else from the walk clip,
/// and tags the sample with `v_hat`. Also reports which clip was used.
pub fn sample_reference_loco_tagged<R: Rng + ?Sized>(
    walk: &FeatureTable,
    run: &FeatureTable,
    v_hat: f64,
    rng: &mut R,
) -> Result<(Transition, BehaviorTag)> {
    check_condition(v_hat)?;
    let use_run = rng.random::<f64>() < v_hat;
    let (table, tag) = if use_run {
        (run, BehaviorTag::Run)
    } else {
        (walk, BehaviorTag::Walk)
    };
    let mut t = table.sample(rng);
    t.condition = Some(v_hat);
    Ok((t, tag))
}

pub fn sample_reference_loco<R: Rng + ?Sized>(
    walk: &FeatureTable,
    run: &FeatureTable,
    v_hat: f64,
    rng: &mut R,
) -> Result<Transition> {
    sample_reference_loco_tagged(walk, run, v_hat, rng).map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> BipedModel {
        BipedModel::default()
    }

    #[test]
    fn walk_frame_count_and_limits() {
        let m = model();
        let c = generate_walk_clip(&m, &ClipConfig::default()).unwrap();
        assert_eq!(c.len(), 200);
        c.validate(&m).unwrap();
        for f in &c.frames {
            for j in 0..NJ {
                assert!(f.joint_pos[j] >= m.joint_lower[j] && f.joint_pos[j] <= m.joint_upper[j]);
            }
            assert_eq!(f.pitch, 0.0);
        }
    }

    #[test]
    fn gait_periodicity() {
        let m = model();
        let cfg = ClipConfig::default();
        for (clip, gait) in [
            (generate_walk_clip(&m, &cfg).unwrap(), &cfg.walk),
            (generate_run_clip(&m, &cfg).unwrap(), &cfg.run),
        ] {
            let p = period_frames(cfg.fps, gait.frequency);
            for j in 0..NJ {
                assert!((clip.frames[0].joint_pos[j] - clip.frames[p].joint_pos[j]).abs() < 1e-6);
            }
            assert!((clip.frames[0].root_z - clip.frames[p].root_z).abs() < 1e-6);
        }
    }

    #[test]
    fn run_is_faster_and_lower() {
        let m = model();
        let cfg = ClipConfig::default();
        let vw = nominal_speed(&m, cfg.fps, &cfg.walk);
        let vr = nominal_speed(&m, cfg.fps, &cfg.run);
        assert!(vr / vw >= 2.0, "{vr} / {vw}");
        let mean_z = |c: &MotionClip| c.frames.iter().map(|f| f.root_z).sum::<f64>() / c.len() as f64;
        let w = generate_walk_clip(&m, &cfg).unwrap();
        let r = generate_run_clip(&m, &cfg).unwrap();
        assert!(mean_z(&r) < mean_z(&w));
        r.validate(&m).unwrap();
    }

    #[test]
    fn getup_endpoints_and_rise() {
        let m = model();
        let cfg = ClipConfig::default();
        let prone = generate_getup_clip(&m, LyingStart::Prone, &cfg).unwrap();
        let supine = generate_getup_clip(&m, LyingStart::Supine, &cfg).unwrap();
        for c in [&prone, &supine] {
            c.validate(&m).unwrap();
            assert!(c.frames[0].root_z < 0.2);
            let last = c.frames.last().unwrap();
            assert!(last.pitch.abs() < 0.1);
            assert!((last.root_z - m.standing_height()).abs() <= 0.05 * m.standing_height());
            for w in c.frames.windows(2) {
                assert!(w[1].root_z - w[0].root_z >= -0.05);
            }
        }
        assert!(prone.frames[0].pitch > 0.0 && supine.frames[0].pitch < 0.0);
    }

    #[test]
    fn invalid_timing_rejected() {
        let m = model();
        let mut cfg = ClipConfig::default();
        cfg.fps = 0.0;
        assert!(matches!(generate_walk_clip(&m, &cfg), Err(Error::Config(_))));
        let mut cfg = ClipConfig::default();
        cfg.run.duration = -1.0;
        assert!(matches!(generate_run_clip(&m, &cfg), Err(Error::Config(_))));
        assert!("sideways".parse::<LyingStart>().is_err());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = model();
        let c = generate_run_clip(&m, &ClipConfig::default()).unwrap();
        let back = clip_from_str(&clip_to_string(&c), "mem", &m).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn wrong_joint_count_is_parse_error() {
        let m = model();
        let text = r#"{"name":"x","fps":50,"behavior_tag":"walk","frames":[[0,0.5,0,0,0,0,0,0,0],[0,0.5,0,0,0,0,0,0]]}"#;
        match clip_from_str(text, "bad", &m) {
            Err(Error::ClipParse { location, message }) => {
                assert!(location.contains("frames[1]"), "{location}");
                assert!(message.contains("got 8"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let m = model();
        let text = "{\n  \"name\": \"x\",\n  \"fps\": oops\n}";
        match clip_from_str(text, "f.json", &m) {
            Err(Error::ClipParse { location, .. }) => assert!(location.starts_with("f.json:3:"), "{location}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_frames_is_validation_error() {
        let m = model();
        let text = r#"{"name":"x","fps":50,"behavior_tag":"walk","frames":[]}"#;
        assert!(matches!(clip_from_str(text, "e", &m), Err(Error::ClipValidation { .. })));
    }

    #[test]
    fn continuity_violation_rejected() {
        let m = model();
        let mut c = generate_walk_clip(&m, &ClipConfig::default()).unwrap();
        c.frames[10].joint_pos[1] = (c.frames[9].joint_pos[1] + 0.6).min(m.joint_upper[1]);
        c.frames[10].joint_pos[4] = c.frames[9].joint_pos[4] + 0.51;
        match c.validate(&m) {
            Err(Error::ClipValidation { frame, .. }) => assert_eq!(frame, 10),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn upright_gravity_feature() {
        let m = model();
        let f = pose_feature(&m, &m.q_default(), &[0.0; NQ]);
        assert_eq!((f[0], f[1]), (0.0, -1.0));
        assert!(f[18].abs() < 1e-9 && f[19].abs() < 1e-9);
    }

    #[test]
    fn static_clip_has_zero_velocity() {
        let m = model();
        let frame = ClipFrame::from_q(&m.q_default());
        let c = MotionClip {
            name: "still".into(),
            fps: 50.0,
            frames: vec![frame; 5],
            behavior_tag: BehaviorTag::Walk,
        };
        let f = clip_feature(&m, &c, 2).unwrap();
        for i in [3, 4, 5].into_iter().chain(12..18) {
            assert_eq!(f[i], 0.0);
        }
        assert!(clip_feature(&m, &c, 4).is_err());
    }

    #[test]
    fn walk_feature_speed_matches_nominal() {
        let m = model();
        let cfg = ClipConfig::default();
        let c = generate_walk_clip(&m, &cfg).unwrap();
        let v = nominal_speed(&m, cfg.fps, &cfg.walk);
        for i in [0, 17, 100, 198] {
            let f = clip_feature(&m, &c, i).unwrap();
            assert!((f[3] - v).abs() <= 0.1 * v);
        }
    }

    #[test]
    fn three_frame_clip_samples_index_zero() {
        let m = model();
        let mut c = generate_walk_clip(&m, &ClipConfig::default()).unwrap();
        c.frames.truncate(3);
        let expected = Transition {
            feat_t: clip_feature(&m, &c, 0).unwrap(),
            feat_t1: clip_feature(&m, &c, 1).unwrap(),
            condition: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let t = sample_transition(&m, &c, &mut rng).unwrap();
            assert_eq!(t, expected);
            assert!(t.is_finite());
        }
        c.frames.truncate(2);
        assert!(matches!(sample_transition(&m, &c, &mut rng), Err(Error::ClipTooShort { .. })));
    }

    #[test]
    fn loco_condition_out_of_range() {
        let m = model();
        let cfg = ClipConfig::default();
        let w = FeatureTable::new(&m, generate_walk_clip(&m, &cfg).unwrap()).unwrap();
        let r = FeatureTable::new(&m, generate_run_clip(&m, &cfg).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_reference_loco(&w, &r, 1.2, &mut rng).is_err());
        assert!(sample_reference_loco(&w, &r, -0.1, &mut rng).is_err());
        assert!(sample_reference_loco(&w, &r, f64::NAN, &mut rng).is_err());
        for _ in 0..100 {
            let (t, tag) = sample_reference_loco_tagged(&w, &r, 0.0, &mut rng).unwrap();
            assert_eq!(tag, BehaviorTag::Walk);
            assert_eq!(t.condition, Some(0.0));
            let (_, tag) = sample_reference_loco_tagged(&w, &r, 1.0, &mut rng).unwrap();
            assert_eq!(tag, BehaviorTag::Run);
        }
    }
}
