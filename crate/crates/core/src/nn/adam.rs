use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::checkpoint::Checkpoint;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam optimiser state for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[Tensor], cfg: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| Array2::zeros(p.dim())).collect();
        Self {
            cfg,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected Adam step.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch("Adam parameter count".into()));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.dim() != m.dim() || g.dim() != m.dim() {
                return Err(Error::ShapeMismatch("Adam parameter shape".into()));
            }
        }
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut params[i])
                .and(&grads[i])
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }

    pub fn save(&self, ck: &mut Checkpoint, prefix: &str) {
        ck.put_u64(&format!("{prefix}.t"), self.t);
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            ck.put_tensor(&format!("{prefix}.m{i}"), m.clone());
            ck.put_tensor(&format!("{prefix}.v{i}"), v.clone());
        }
    }

    pub fn load(&mut self, ck: &Checkpoint, prefix: &str) -> Result<()> {
        let t = ck.u64(&format!("{prefix}.t"))?;
        let mut m = Vec::with_capacity(self.m.len());
        let mut v = Vec::with_capacity(self.v.len());
        for i in 0..self.m.len() {
            let mi = ck.tensor(&format!("{prefix}.m{i}"))?;
            let vi = ck.tensor(&format!("{prefix}.v{i}"))?;
            if mi.dim() != self.m[i].dim() || vi.dim() != self.v[i].dim() {
                return Err(Error::Checkpoint(format!(
                    "{prefix}: moment {i} has the wrong shape"
                )));
            }
            m.push(mi.clone());
            v.push(vi.clone());
        }
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }
}
