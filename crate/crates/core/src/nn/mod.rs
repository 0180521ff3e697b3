//! Tensors, reverse-mode autodiff, MLPs, Adam and the squashed Gaussian
//! policy distribution.

mod adam;
mod gaussian;
mod mlp;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use gaussian::{squashed_gaussian, LOG_STD_MAX, LOG_STD_MIN};
pub use mlp::{Activation, Linear, Mlp, MlpSpec, MlpVars};
pub use tape::{relu, softplus_scalar, tanh, Gradients, Tape, Var};

use ndarray::Array2;

/// Row-major `[rows x cols]` matrix; batches are rows.
pub type Tensor = Array2<f64>;

/// `dst += k * src` for every tensor pair.
pub fn axpy(dst: &mut [Tensor], k: f64, src: &[Tensor]) {
    for (d, s) in dst.iter_mut().zip(src) {
        d.scaled_add(k, s);
    }
}

/// `dst += tau * (src - dst)`; `tau = 1` copies exactly and equal inputs
/// stay bit-identical.
pub fn polyak(dst: &mut [Tensor], src: &[Tensor], tau: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        if tau == 0.0 {
            continue;
        } else if tau == 1.0 {
            d.assign(s);
        } else {
            d.zip_mut_with(s, |a, &b| *a += tau * (b - *a));
        }
    }
}

pub fn all_finite(ts: &[Tensor]) -> bool {
    ts.iter().all(|t| t.iter().all(|v| v.is_finite()))
}

pub fn zeros_like(ts: &[Tensor]) -> Vec<Tensor> {
    ts.iter().map(|t| Array2::zeros(t.dim())).collect()
}
