use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{relu, tanh, Gradients, Tape, Var};
use super::Tensor;
use crate::checkpoint::Checkpoint;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

/// Layer widths `[input, hidden.., output]` and one activation per hidden
/// layer. The output layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(widths: &[usize], activation: Activation) -> Self {
        let hidden = widths.len().saturating_sub(2);
        Self {
            widths: widths.to_vec(),
            activations: vec![activation; hidden],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::InvalidConfig(
                "an MLP needs at least one layer".into(),
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidConfig("MLP widths must be positive".into()));
        }
        if self.activations.len() != self.widths.len() - 2 {
            return Err(Error::InvalidConfig(format!(
                "{} hidden layers but {} activations",
                self.widths.len() - 2,
                self.activations.len()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated spec")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[in x out]`
    pub w: Tensor,
    /// `[1 x out]`
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    /// `[w0, b0, w1, b1, ..]`
    params: Vec<Tensor>,
}

/// Tape handles of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub out: Var,
    pub params: Vec<Var>,
}

impl MlpVars {
    /// Parameter gradients in the order of [`Mlp::params`].
    pub fn grads(&self, g: &Gradients, mlp: &Mlp) -> Vec<Tensor> {
        self.params
            .iter()
            .zip(mlp.params())
            .map(|(&v, p)| g.get_or_zeros(v, p.dim()))
            .collect()
    }
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let params = spec
            .widths
            .windows(2)
            .flat_map(|w| [Array2::zeros((w[0], w[1])), Array2::zeros((1, w[1]))])
            .collect();
        Ok(Self { spec, params })
    }

    /// Uniform fan-in initialisation, `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        let mut mlp = Self::zeros(spec)?;
        for (i, p) in mlp.params.iter_mut().enumerate() {
            let fan_in = mlp.spec.widths[i / 2] as f64;
            let bound = 1.0 / fan_in.sqrt();
            p.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        Ok(mlp)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn n_layers(&self) -> usize {
        self.params.len() / 2
    }

    pub fn layer(&self, i: usize) -> Linear {
        Linear {
            w: self.params[2 * i].clone(),
            b: self.params[2 * i + 1].clone(),
        }
    }

    /// Replaces every parameter; shapes must match.
    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len()
            || params
                .iter()
                .zip(&self.params)
                .any(|(a, b)| a.dim() != b.dim())
        {
            return Err(Error::ShapeMismatch(
                "parameter set does not fit this MLP".into(),
            ));
        }
        self.params = params;
        Ok(())
    }

    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.spec.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "MLP expects {} inputs, got {cols}",
                self.spec.input_dim()
            )));
        }
        Ok(())
    }

    /// Tape-free forward pass; same arithmetic as [`Mlp::record`].
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.ncols())?;
        let mut h = x.clone();
        for i in 0..self.n_layers() {
            h = h.dot(&self.params[2 * i]) + &self.params[2 * i + 1];
            if let Some(act) = self.spec.activations.get(i) {
                h = match act {
                    Activation::Tanh => tanh(&h),
                    Activation::Relu => relu(&h),
                };
            }
        }
        Ok(h)
    }

    /// Records the forward pass on `tape`, with parameters as fresh leaves.
    pub fn record(&self, tape: &mut Tape, x: Var) -> Result<MlpVars> {
        self.check_input(tape.shape(x).1)?;
        let params: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let mut h = x;
        for i in 0..self.n_layers() {
            let z = tape.matmul(h, params[2 * i]);
            h = tape.add_row(z, params[2 * i + 1]);
            if let Some(act) = self.spec.activations.get(i) {
                h = match act {
                    Activation::Tanh => tape.tanh(h),
                    Activation::Relu => tape.relu(h),
                };
            }
        }
        Ok(MlpVars { out: h, params })
    }

    /// Forward pass on a fresh tape: `(output, tape, handles)`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tape, MlpVars)> {
        let mut tape = Tape::new();
        let input = tape.leaf(x.clone());
        let vars = self.record(&mut tape, input)?;
        Ok((tape.value(vars.out).clone(), tape, vars))
    }

    /// Parameter gradients of `sum(out_grad * output)` for a recorded pass.
    pub fn backward(&self, tape: &Tape, vars: &MlpVars, out_grad: Tensor) -> Vec<Tensor> {
        let g = tape.backward(vars.out, out_grad);
        vars.grads(&g, self)
    }

    pub fn save(&self, ck: &mut Checkpoint, prefix: &str) {
        for (i, p) in self.params.iter().enumerate() {
            let kind = if i % 2 == 0 { "w" } else { "b" };
            ck.put_tensor(&format!("{prefix}.{}.{kind}", i / 2), p.clone());
        }
    }

    pub fn load(&mut self, ck: &Checkpoint, prefix: &str) -> Result<()> {
        let mut params = Vec::with_capacity(self.params.len());
        for i in 0..self.params.len() {
            let kind = if i % 2 == 0 { "w" } else { "b" };
            params.push(ck.tensor(&format!("{prefix}.{}.{kind}", i / 2))?.clone());
        }
        self.set_params(params)
    }
}
