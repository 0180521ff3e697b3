//! Scaled unscented transform and the constant-velocity UKF built on it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UkfConfig {
    pub alpha_ut: f64,
    pub beta_ut: f64,
    pub kappa_ut: f64,
    pub dt: f64,
}

impl Default for UkfConfig {
    fn default() -> Self {
        Self {
            alpha_ut: 0.5,
            beta_ut: 2.0,
            kappa_ut: 0.0,
            dt: 0.1,
        }
    }
}

impl UkfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_ut > 0.0 && self.alpha_ut <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha_ut must lie in (0, 1], got {}",
                self.alpha_ut
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        Ok(())
    }
}

/// Sigma points and their mean/covariance weights.
#[derive(Debug, Clone)]
pub struct SigmaPoints {
    pub points: Vec<DVector<f64>>,
    pub wm: Vec<f64>,
    pub wc: Vec<f64>,
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn cholesky_lower(cov: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(symmetrize(cov))
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{what}: {cov:.6}")))
}

pub fn sigma_points(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    cfg: &UkfConfig,
) -> Result<SigmaPoints> {
    let n = mean.len();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "mean has {n} entries but covariance is {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let nf = n as f64;
    let lambda = cfg.alpha_ut * cfg.alpha_ut * (nf + cfg.kappa_ut) - nf;
    let c = nf + lambda;
    if !(c > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "n + lambda = {c} must be positive"
        )));
    }
    let l = cholesky_lower(&(cov * c), "sigma-point covariance")?;
    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(mean.clone());
    for i in 0..n {
        points.push(mean + l.column(i));
    }
    for i in 0..n {
        points.push(mean - l.column(i));
    }
    let w = 1.0 / (2.0 * c);
    let mut wm = vec![w; 2 * n + 1];
    let mut wc = vec![w; 2 * n + 1];
    wm[0] = lambda / c;
    wc[0] = lambda / c + (1.0 - cfg.alpha_ut * cfg.alpha_ut + cfg.beta_ut);
    Ok(SigmaPoints { points, wm, wc })
}

/// Propagated moments plus the input/output cross-covariance.
#[derive(Debug, Clone)]
pub struct Transformed {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub cross: DMatrix<f64>,
}

pub fn transform_with_cross<F>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    f: F,
    cfg: &UkfConfig,
) -> Result<Transformed>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let sp = sigma_points(mean, cov, cfg)?;
    let ys: Vec<DVector<f64>> = sp.points.iter().map(&f).collect();
    let m = ys[0].len();
    let mut y_mean = DVector::zeros(m);
    for (y, w) in ys.iter().zip(&sp.wm) {
        y_mean += y * *w;
    }
    let mut y_cov = DMatrix::zeros(m, m);
    let mut cross = DMatrix::zeros(mean.len(), m);
    for ((x, y), w) in sp.points.iter().zip(&ys).zip(&sp.wc) {
        let dy = y - &y_mean;
        let dx = x - mean;
        y_cov += &dy * dy.transpose() * *w;
        cross += dx * dy.transpose() * *w;
    }
    Ok(Transformed {
        mean: y_mean,
        cov: symmetrize(&y_cov),
        cross,
    })
}

/// Pushes `N(mean, cov)` through `f` with 2n+1 scaled sigma points.
pub fn unscented_transform<F>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    f: F,
    cfg: &UkfConfig,
) -> Result<(DVector<f64>, DMatrix<f64>)>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let t = transform_with_cross(mean, cov, f, cfg)?;
    Ok((t.mean, t.cov))
}

/// Base noise levels scaled by the agent's action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// White-acceleration spectral density of the motion model, m^2/s^3.
    pub accel_density: f64,
    /// Range measurement standard deviation, metres.
    pub sigma_range: f64,
    /// Angle measurement standard deviation, degrees.
    pub sigma_angle: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            accel_density: 1.0,
            sigma_range: 0.1,
            sigma_angle: 2.0,
        }
    }
}

impl NoiseModel {
    /// Discretised continuous white-acceleration noise for `[x, y, vx, vy]`.
    pub fn process(&self, dt: f64) -> DMatrix<f64> {
        let a = self.accel_density;
        let p = a * dt.powi(3) / 3.0;
        let c = a * dt.powi(2) / 2.0;
        let v = a * dt;
        DMatrix::from_row_slice(
            4,
            4,
            &[
                p, 0.0, c, 0.0, //
                0.0, p, 0.0, c, //
                c, 0.0, v, 0.0, //
                0.0, c, 0.0, v,
            ],
        )
    }

    pub fn measurement(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![
            self.sigma_range * self.sigma_range,
            self.sigma_angle * self.sigma_angle,
        ]))
    }
}

/// Range and angle (degrees, `atan2(x, y)`) of a `[x, y, ...]` state.
pub fn measure(state: &DVector<f64>) -> DVector<f64> {
    let (x, y) = (state[0], state[1]);
    DVector::from_vec(vec![x.hypot(y), x.atan2(y).to_degrees()])
}

pub fn constant_velocity(state: &DVector<f64>, dt: f64) -> DVector<f64> {
    DVector::from_vec(vec![
        state[0] + state[2] * dt,
        state[1] + state[3] * dt,
        state[2],
        state[3],
    ])
}

/// Gaussian filter state `[x, y, vx, vy]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Estimate {
    pub fn position(&self) -> [f64; 2] {
        [self.mean[0], self.mean[1]]
    }

    pub fn position_cov(&self) -> [[f64; 2]; 2] {
        [
            [self.cov[(0, 0)], self.cov[(0, 1)]],
            [self.cov[(1, 0)], self.cov[(1, 1)]],
        ]
    }
}

pub fn predict(est: &Estimate, q: f64, noise: &NoiseModel, cfg: &UkfConfig) -> Result<Estimate> {
    let dt = cfg.dt;
    let (mean, cov) = unscented_transform(&est.mean, &est.cov, |s| constant_velocity(s, dt), cfg)?;
    let cov = if q > 0.0 {
        cov + noise.process(dt) * q
    } else {
        cov
    };
    let cov = symmetrize(&cov);
    cholesky_lower(&cov, "predicted covariance")?;
    Ok(Estimate { mean, cov })
}

/// Predicted measurement statistics of a track.
#[derive(Debug, Clone)]
pub struct Innovation {
    pub z_pred: DVector<f64>,
    /// Innovation covariance including the scaled measurement noise.
    pub s: DMatrix<f64>,
    pub s_inv: DMatrix<f64>,
    pub cross: DMatrix<f64>,
}

impl Innovation {
    pub fn from_parts(z_pred: DVector<f64>, s: DMatrix<f64>, cross: DMatrix<f64>) -> Result<Self> {
        let s = symmetrize(&s);
        let chol = nalgebra::Cholesky::new(s.clone()).ok_or_else(|| {
            Error::Numerical(format!(
                "singular innovation covariance {s:.6} at predicted measurement {z_pred:.4}"
            ))
        })?;
        let s_inv = chol.inverse();
        Ok(Self {
            z_pred,
            s,
            s_inv,
            cross,
        })
    }

    /// Squared Mahalanobis distance of a measurement.
    pub fn distance2(&self, z: &DVector<f64>) -> f64 {
        let d = z - &self.z_pred;
        (d.transpose() * &self.s_inv * &d)[(0, 0)]
    }
}

pub fn innovation<H>(
    est: &Estimate,
    h: H,
    meas_cov: &DMatrix<f64>,
    cfg: &UkfConfig,
) -> Result<Innovation>
where
    H: Fn(&DVector<f64>) -> DVector<f64>,
{
    let t = transform_with_cross(&est.mean, &est.cov, h, cfg)?;
    Innovation::from_parts(t.mean, t.cov + meas_cov, t.cross)
}

/// Kalman update given precomputed innovation statistics.
pub fn update_with(est: &Estimate, innov: &Innovation, z: &DVector<f64>) -> Result<Estimate> {
    let gain = &innov.cross * &innov.s_inv;
    let mean = &est.mean + &gain * (z - &innov.z_pred);
    let cov = symmetrize(&(&est.cov - &gain * &innov.s * gain.transpose()));
    cholesky_lower(&cov, "posterior covariance")?;
    Ok(Estimate { mean, cov })
}

/// UKF update with the polar measurement model and noise `r * R0`.
pub fn update(
    est: &Estimate,
    z: &DVector<f64>,
    r: f64,
    noise: &NoiseModel,
    cfg: &UkfConfig,
) -> Result<Estimate> {
    let innov = innovation(est, measure, &(noise.measurement() * r), cfg)?;
    update_with(est, &innov, z)
}
