use std::f64::consts::{LN_2, PI};

use super::tape::{Tape, Var};
use super::Tensor;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Tanh-squashed diagonal Gaussian, reparameterised with explicit `noise`.
///
/// Returns `(action [b x d], log_prob [b x 1])`. With `noise = None` the
/// action is `tanh(mean)` and the log-density is evaluated at that point.
/// The squashing correction uses `ln(1 - tanh(u)^2) = 2(ln 2 - u - softplus(-2u))`.
pub fn squashed_gaussian(
    tape: &mut Tape,
    mean: Var,
    log_std: Var,
    noise: Option<&Tensor>,
) -> (Var, Var) {
    let shape = tape.shape(mean);
    let eps = noise.cloned().unwrap_or_else(|| Tensor::zeros(shape));
    assert_eq!(eps.dim(), shape, "noise shape must match the mean");
    let log_std = tape.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX);
    let std = tape.exp(log_std);
    let konst = eps.mapv(|e| -0.5 * e * e - 0.5 * (2.0 * PI).ln() - 2.0 * LN_2);
    let eps = tape.leaf(eps);
    let spread = tape.mul(std, eps);
    let u = tape.add(mean, spread);
    let action = tape.tanh(u);

    let neg2u = tape.scale(u, -2.0);
    let sp = tape.softplus(neg2u);
    let u_plus_sp = tape.add(u, sp);
    let corr = tape.scale(u_plus_sp, 2.0);
    let konst = tape.leaf(konst);
    let base = tape.sub(konst, log_std);
    let per_dim = tape.add(base, corr);
    let log_prob = tape.sum_cols(per_dim);
    (action, log_prob)
}
