//! Frozen inference policy and its binary format.
//!
//! Layout (little-endian): magic `GAMP`, `u32` version, `u32` layer count L,
//! L+1 `u32` layer dims, L `u32` activation ids, then per layer the row-major
//! `f32` weights followed by the `f32` biases, then observation mean and
//! variance (`f32` each, one per input), `f32` observation clip, `f32` action
//! scale and `f32` action clamp bounds (low, high).
//!
//! Inference runs entirely in 32-bit arithmetic.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nets::Activation;
use crate::ppo::Agent;
use crate::sim::{BipedModel, NJ, OBS_DIM};

pub const MAGIC: [u8; 4] = *b"GAMP";
pub const FORMAT_VERSION: u32 = 1;
const VAR_EPS: f32 = 1e-8;
const MAX_LAYERS: u32 = 64;
const MAX_WIDTH: u32 = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenPolicy {
    pub layer_dims: Vec<u32>,
    pub activations: Vec<Activation>,
    pub weights: Vec<Vec<f32>>,
    pub biases: Vec<Vec<f32>>,
    pub obs_mean: Vec<f32>,
    pub obs_var: Vec<f32>,
    pub obs_clip: f32,
    pub action_scale: f32,
    pub action_low: f32,
    pub action_high: f32,
}

fn f32_apply(act: Activation, z: f32) -> f32 {
    match act {
        Activation::Identity => z,
        Activation::Tanh => z.tanh(),
        Activation::Relu => z.max(0.0),
        Activation::Elu => {
            if z > 0.0 {
                z
            } else {
                z.exp_m1()
            }
        }
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
    }
}

impl FrozenPolicy {
    /// Quantizes the policy mean network and observation statistics.
    pub fn from_agent(agent: &Agent, model: &BipedModel) -> Self {
        let mean = &agent.policy.mean;
        let n = mean.num_layers();
        let activations = (0..n)
            .map(|l| if l + 1 == n { mean.output_activation } else { mean.hidden_activation })
            .collect();
        let q = |v: &Vec<f64>| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        FrozenPolicy {
            layer_dims: mean.layer_dims.iter().map(|&d| d as u32).collect(),
            activations,
            weights: mean.weights.iter().map(q).collect(),
            biases: mean.biases.iter().map(q).collect(),
            obs_mean: q(&agent.obs_norm.mean),
            obs_var: q(&agent.obs_norm.var),
            obs_clip: agent.obs_norm.clip as f32,
            action_scale: model.action_scale as f32,
            action_low: -1.0,
            action_high: 1.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0] as usize
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("at least one layer") as usize
    }

    /// Normalized observation followed by the network, clamped to the
    /// action bounds.
    pub fn forward(&self, observation: &[f32]) -> Result<Vec<f32>> {
        if observation.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "frozen policy observation",
                expected: self.input_dim(),
                actual: observation.len(),
            });
        }
        let mut a: Vec<f32> = observation
            .iter()
            .zip(self.obs_mean.iter().zip(&self.obs_var))
            .map(|(x, (m, v))| ((x - m) / (v + VAR_EPS).sqrt()).clamp(-self.obs_clip, self.obs_clip))
            .collect();
        for (l, act) in self.activations.iter().enumerate() {
            let n_in = self.layer_dims[l] as usize;
            a = self.weights[l]
                .chunks_exact(n_in)
                .zip(&self.biases[l])
                .map(|(row, b)| f32_apply(*act, row.iter().zip(&a).map(|(w, x)| w * x).sum::<f32>() + b))
                .collect();
        }
        Ok(a.into_iter().map(|v| v.clamp(self.action_low, self.action_high)).collect())
    }

    /// Deterministic action for a 64-bit observation.
    pub fn act(&self, observation: &[f64]) -> Result<[f64; NJ]> {
        let x: Vec<f32> = observation.iter().map(|&v| v as f32).collect();
        let y = self.forward(&x)?;
        if y.len() != NJ {
            return Err(Error::DimensionMismatch {
                context: "frozen policy action",
                expected: NJ,
                actual: y.len(),
            });
        }
        let mut out = [0.0; NJ];
        for (o, v) in out.iter_mut().zip(&y) {
            if !v.is_finite() {
                return Err(Error::NonFiniteOutput("frozen policy"));
            }
            *o = *v as f64;
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.activations.len() as u32).to_le_bytes());
        for d in &self.layer_dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for a in &self.activations {
            out.extend_from_slice(&a.id().to_le_bytes());
        }
        let mut put = |v: &[f32]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        for (w, b) in self.weights.iter().zip(&self.biases) {
            put(w);
            put(b);
        }
        put(&self.obs_mean);
        put(&self.obs_var);
        put(&[self.obs_clip, self.action_scale, self.action_low, self.action_high]);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("four bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let n_layers = r.u32("layer count")?;
        if n_layers == 0 || n_layers > MAX_LAYERS {
            return Err(Error::InvalidHeader(format!("layer count {n_layers}")));
        }
        let mut layer_dims = Vec::with_capacity(n_layers as usize + 1);
        for _ in 0..=n_layers {
            let d = r.u32("layer dims")?;
            if d == 0 || d > MAX_WIDTH {
                return Err(Error::InvalidHeader(format!("layer width {d}")));
            }
            layer_dims.push(d);
        }
        let mut activations = Vec::with_capacity(n_layers as usize);
        for _ in 0..n_layers {
            let id = r.u32("activation ids")?;
            activations.push(Activation::from_id(id).ok_or_else(|| Error::InvalidHeader(format!("activation id {id}")))?);
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..n_layers as usize {
            let (i, o) = (layer_dims[l] as usize, layer_dims[l + 1] as usize);
            weights.push(r.f32s(i * o, "weights")?);
            biases.push(r.f32s(o, "biases")?);
        }
        let d_in = layer_dims[0] as usize;
        let obs_mean = r.f32s(d_in, "observation mean")?;
        let obs_var = r.f32s(d_in, "observation variance")?;
        let tail = r.f32s(4, "action bounds")?;
        if r.pos != bytes.len() {
            return Err(Error::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(FrozenPolicy {
            layer_dims,
            activations,
            weights,
            biases,
            obs_mean,
            obs_var,
            obs_clip: tail[0],
            action_scale: tail[1],
            action_low: tail[2],
            action_high: tail[3],
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated { field })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("four bytes")))
    }

    fn f32s(&mut self, n: usize, field: &'static str) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or(Error::Truncated { field })?, field)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes"))).collect())
    }
}

pub fn export_policy(agent: &Agent, model: &BipedModel, path: &Path) -> Result<FrozenPolicy> {
    let frozen = FrozenPolicy::from_agent(agent, model);
    std::fs::write(path, frozen.to_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(frozen)
}

pub fn load_frozen(path: &Path) -> Result<FrozenPolicy> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let frozen = FrozenPolicy::from_bytes(&bytes)?;
    if frozen.input_dim() != OBS_DIM || frozen.output_dim() != NJ {
        return Err(Error::InvalidHeader(format!(
            "policy maps {} -> {}, expected {OBS_DIM} -> {NJ}",
            frozen.input_dim(),
            frozen.output_dim()
        )));
    }
    Ok(frozen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::PpoConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_agent() -> Agent {
        let cfg = PpoConfig {
            policy_hidden: vec![8, 8],
            value_hidden: vec![4],
            ..PpoConfig::default()
        };
        Agent::new(&cfg, &mut ChaCha8Rng::seed_from_u64(1))
    }

    #[test]
    fn byte_round_trip() {
        let f = FrozenPolicy::from_agent(&small_agent(), &BipedModel::default());
        let g = FrozenPolicy::from_bytes(&f.to_bytes()).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn header_errors_are_named() {
        let bytes = FrozenPolicy::from_agent(&small_agent(), &BipedModel::default()).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(FrozenPolicy::from_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(FrozenPolicy::from_bytes(&bad), Err(Error::UnsupportedVersion { found: 2, .. })));
        assert!(matches!(FrozenPolicy::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        assert!(matches!(FrozenPolicy::from_bytes(&bytes[..2]), Err(Error::Truncated { field: "magic" })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(FrozenPolicy::from_bytes(&long), Err(Error::TrailingBytes(1))));
    }

    #[test]
    fn header_sizes_are_bounded() {
        let mut b = Vec::new();
        b.extend_from_slice(&MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(FrozenPolicy::from_bytes(&b), Err(Error::InvalidHeader(_))));
    }
}
