//! Running mean/variance with batched (Chan et al.) merges.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Normalized values are clipped to `[-clip, clip]`.
    pub clip: f64,
}

const VAR_EPS: f64 = 1e-8;

impl RunningStats {
    pub fn new(dim: usize, clip: f64) -> Self {
        RunningStats {
            count: 0.0,
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            clip,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merges a batch of rows, each of length `dim`.
    pub fn update<'a, I>(&mut self, rows: I)
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let dim = self.dim();
        let mut n = 0.0;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        for r in &rows {
            debug_assert_eq!(r.len(), dim);
            n += 1.0;
            sum.iter_mut().zip(r.iter()).for_each(|(s, x)| *s += x);
        }
        if n == 0.0 {
            return;
        }
        let batch_mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        for r in &rows {
            for i in 0..dim {
                let d = r[i] - batch_mean[i];
                sq[i] += d * d;
            }
        }
        let total = self.count + n;
        for i in 0..dim {
            let batch_var = sq[i] / n;
            let delta = batch_mean[i] - self.mean[i];
            if self.count == 0.0 {
                self.mean[i] = batch_mean[i];
                self.var[i] = batch_var;
            } else {
                let m_a = self.var[i] * self.count;
                let m_b = batch_var * n;
                self.mean[i] += delta * n / total;
                self.var[i] = (m_a + m_b + delta * delta * self.count * n / total) / total;
            }
        }
        self.count = total;
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.dim() {
            let z = (x[i] - self.mean[i]) / (self.var[i] + VAR_EPS).sqrt();
            out[i] = z.clamp(-self.clip, self.clip);
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.normalize_into(x, &mut out);
        out
    }
}
