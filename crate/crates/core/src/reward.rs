//! Per-frame tracking reward.
//!
//! `-R = rho(N_hat, N) + (1/M) * sum_k (1 - p_k)` where `rho` is the
//! relative count error, `M = min(N_hat, N)` and `p_k` is the clipped
//! Gaussian density of the k-th matched truth under its track estimate.
//! Tracks and truths are matched by minimum total Mahalanobis distance.

use serde::{Deserialize, Serialize};

use crate::assignment::hungarian;
use crate::sim::GroundTruth;
use crate::tracker::TrackReport;
use crate::{Error, Result};

/// Upper clip of the position likelihood.
pub const DENSITY_CLIP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Multiplier applied to training targets only.
    pub scale_factor: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { scale_factor: 1.0 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale_factor > 0.0 && self.scale_factor.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "reward scale must be positive, got {}",
                self.scale_factor
            )))
        }
    }
}

/// Track estimate as seen by the reward: position mean and 2x2 covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionEstimate {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl From<&TrackReport> for PositionEstimate {
    fn from(t: &TrackReport) -> Self {
        Self {
            mean: t.position,
            cov: t.position_cov,
        }
    }
}

pub fn count_penalty(n_hat: usize, n: usize) -> f64 {
    (n_hat as f64 - n as f64).abs() / n.max(1) as f64
}

struct Gaussian2 {
    inv: [[f64; 2]; 2],
    norm: f64,
}

impl Gaussian2 {
    fn new(cov: &[[f64; 2]; 2]) -> Result<Self> {
        let [[a, b], [c, d]] = *cov;
        let sym = 0.5 * (b + c);
        let det = a * d - sym * sym;
        if !(a > 0.0 && det > 0.0 && det.is_finite())
            || (b - c).abs() > 1e-9 * (a.abs() + d.abs()).max(1.0)
        {
            return Err(Error::NotPositiveDefinite(format!(
                "position covariance {cov:?}"
            )));
        }
        Ok(Self {
            inv: [[d / det, -sym / det], [-sym / det, a / det]],
            norm: 1.0 / (2.0 * std::f64::consts::PI * det.sqrt()),
        })
    }

    fn mahalanobis2(&self, mean: [f64; 2], p: [f64; 2]) -> f64 {
        let (dx, dy) = (p[0] - mean[0], p[1] - mean[1]);
        dx * (self.inv[0][0] * dx + self.inv[0][1] * dy)
            + dy * (self.inv[1][0] * dx + self.inv[1][1] * dy)
    }
}

/// `min(1, N(p; mean, cov))` for a 2-D Gaussian.
pub fn position_likelihood(mean: [f64; 2], cov: [[f64; 2]; 2], p: [f64; 2]) -> Result<f64> {
    let g = Gaussian2::new(&cov)?;
    Ok((g.norm * (-0.5 * g.mahalanobis2(mean, p)).exp()).min(DENSITY_CLIP))
}

/// Reward of one frame, always `<= 0`.
pub fn reward(tracks: &[PositionEstimate], truth: &GroundTruth) -> Result<f64> {
    let n_hat = tracks.len();
    let n = truth.count();
    if n_hat == 0 && n == 0 {
        return Ok(0.0);
    }
    let rho = count_penalty(n_hat, n);
    let m = n_hat.min(n);
    if m == 0 {
        // nothing predicted against occupied truth scores as a full miss
        let miss = if n > 0 { 1.0 } else { 0.0 };
        return Ok(-(rho + miss));
    }
    let gaussians = tracks
        .iter()
        .map(|t| Gaussian2::new(&t.cov))
        .collect::<Result<Vec<_>>>()?;
    let cost: Vec<Vec<f64>> = tracks
        .iter()
        .zip(&gaussians)
        .map(|(t, g)| {
            truth
                .positions
                .iter()
                .map(|&p| g.mahalanobis2(t.mean, p))
                .collect()
        })
        .collect();
    let pairs = hungarian(&cost);
    let mut miss = 0.0;
    for &(k, j) in &pairs {
        let p = (gaussians[k].norm * (-0.5 * cost[k][j]).exp()).min(DENSITY_CLIP);
        miss += 1.0 - p;
    }
    Ok(-(rho + miss / m as f64))
}

pub fn reward_from_reports(tracks: &[TrackReport], truth: &GroundTruth) -> Result<f64> {
    let est: Vec<PositionEstimate> = tracks.iter().map(PositionEstimate::from).collect();
    reward(&est, truth)
}

/// Training-target scaling. Evaluation always reports the unscaled reward.
pub fn scaled_reward(r: f64, scale_factor: f64) -> f64 {
    r * scale_factor
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const I: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];
    const TIGHT: [[f64; 2]; 2] = [[0.01, 0.0], [0.0, 0.01]];

    fn est(mean: [f64; 2], cov: [[f64; 2]; 2]) -> PositionEstimate {
        PositionEstimate { mean, cov }
    }

    #[test]
    fn count_penalty_examples() {
        assert_eq!(count_penalty(2, 2), 0.0);
        assert_eq!(count_penalty(0, 4), 1.0);
        assert_eq!(count_penalty(3, 2), 0.5);
        assert_eq!(count_penalty(2, 0), 2.0);
    }

    #[test]
    fn likelihood_examples() {
        let p = [1.0, 2.0];
        assert_eq!(position_likelihood(p, TIGHT, p).unwrap(), 1.0);
        let c = position_likelihood(p, I, p).unwrap();
        assert!((c - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-12);
        let off = position_likelihood(p, I, [2.0, 2.0]).unwrap();
        assert!((off - (-0.5f64).exp() / (2.0 * std::f64::consts::PI)).abs() < 1e-12);
        assert!((off - 0.09653).abs() < 1e-5);
        assert!(position_likelihood(p, [[1.0, 2.0], [2.0, 1.0]], p).is_err());
        assert!(position_likelihood(p, [[0.0, 0.0], [0.0, 0.0]], p).is_err());
    }

    #[test]
    fn reward_examples() {
        let truth = GroundTruth {
            positions: vec![[0.5, 2.0]],
        };
        assert_eq!(reward(&[est([0.5, 2.0], TIGHT)], &truth).unwrap(), 0.0);
        let r = reward(&[est([0.5, 2.0], I)], &truth).unwrap();
        assert!((r + (1.0 - 1.0 / (2.0 * std::f64::consts::PI))).abs() < 1e-9);
        assert!((r + 0.84085).abs() < 1e-5);

        let truth2 = GroundTruth {
            positions: vec![[0.0, 2.0], [1.0, 3.0]],
        };
        let tracks = [
            est([1.0, 3.0], TIGHT),
            est([-1.5, 4.0], TIGHT),
            est([0.0, 2.0], TIGHT),
        ];
        assert!((reward(&tracks, &truth2).unwrap() + 0.5).abs() < 1e-9);
    }

    #[test]
    fn empty_cases() {
        let empty = GroundTruth { positions: vec![] };
        assert_eq!(reward(&[], &empty).unwrap(), 0.0);
        let occupied = GroundTruth {
            positions: vec![[0.0, 2.0], [1.0, 2.0]],
        };
        assert_eq!(reward(&[], &occupied).unwrap(), -2.0);
        assert_eq!(reward(&[est([0.0, 1.0], TIGHT)], &empty).unwrap(), -1.0);
    }

    #[test]
    fn scaling() {
        assert_eq!(scaled_reward(-0.5, 2.0), -1.0);
        assert_eq!(scaled_reward(-0.5, 1.0), -0.5);
        for f in [1.0, 2.0, 5.0, 10.0] {
            assert!(RewardConfig { scale_factor: f }.validate().is_ok());
        }
        assert!(RewardConfig { scale_factor: 0.0 }.validate().is_err());
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<PositionEstimate>, GroundTruth) {
        let n_hat = rng.random_range(0..5);
        let n = rng.random_range(0..5);
        let tracks = (0..n_hat)
            .map(|_| {
                let sx: f64 = rng.random_range(0.02..0.6);
                let sy: f64 = rng.random_range(0.02..0.6);
                let rho: f64 = rng.random_range(-0.8..0.8);
                let cxy = rho * (sx * sy).sqrt();
                est(
                    [rng.random_range(-2.0..2.0), rng.random_range(0.5..4.5)],
                    [[sx, cxy], [cxy, sy]],
                )
            })
            .collect();
        let truth = GroundTruth {
            positions: (0..n)
                .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(0.5..4.5)])
                .collect(),
        };
        (tracks, truth)
    }

    /// All injective maps from `0..a` into `0..b`.
    fn injections(a: usize, b: usize) -> Vec<Vec<usize>> {
        if a == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for prefix in injections(a - 1, b) {
            for v in 0..b {
                if !prefix.contains(&v) {
                    let mut p = prefix.clone();
                    p.push(v);
                    out.push(p);
                }
            }
        }
        out
    }

    /// Reward computed with exhaustive matching.
    fn brute_force_reward(tracks: &[PositionEstimate], truth: &GroundTruth) -> f64 {
        let (n_hat, n) = (tracks.len(), truth.count());
        if n_hat == 0 && n == 0 {
            return 0.0;
        }
        let rho = count_penalty(n_hat, n);
        let m = n_hat.min(n);
        if m == 0 {
            return -(rho + if n > 0 { 1.0 } else { 0.0 });
        }
        let maha = |k: usize, j: usize| {
            Gaussian2::new(&tracks[k].cov)
                .unwrap()
                .mahalanobis2(tracks[k].mean, truth.positions[j])
        };
        let matchings: Vec<Vec<(usize, usize)>> = if n_hat <= n {
            injections(n_hat, n)
                .into_iter()
                .map(|f| f.into_iter().enumerate().collect())
                .collect()
        } else {
            injections(n, n_hat)
                .into_iter()
                .map(|f| f.into_iter().enumerate().map(|(j, k)| (k, j)).collect())
                .collect()
        };
        let best = matchings
            .iter()
            .min_by(|a, b| {
                let ca: f64 = a.iter().map(|&(k, j)| maha(k, j)).sum();
                let cb: f64 = b.iter().map(|&(k, j)| maha(k, j)).sum();
                ca.total_cmp(&cb)
            })
            .unwrap();
        let miss: f64 = best
            .iter()
            .map(|&(k, j)| {
                1.0 - position_likelihood(tracks[k].mean, tracks[k].cov, truth.positions[j])
                    .unwrap()
            })
            .sum();
        -(rho + miss / m as f64)
    }

    #[test]
    fn permutation_invariant_and_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let (mut tracks, mut truth) = random_instance(&mut rng);
            let r = reward(&tracks, &truth).unwrap();
            assert!(r <= 0.0);
            let oracle = brute_force_reward(&tracks, &truth);
            assert!((r - oracle).abs() < 1e-9, "{r} vs {oracle}");
            tracks.shuffle(&mut rng);
            truth.positions.shuffle(&mut rng);
            let shuffled = reward(&tracks, &truth).unwrap();
            assert!((r - shuffled).abs() < 1e-9);
        }
    }

    #[test]
    fn moving_a_track_away_never_helps() {
        let truth = GroundTruth {
            positions: vec![[0.0, 2.0]],
        };
        let cov = [[0.2, 0.05], [0.05, 0.3]];
        let mut last = 0.0;
        for k in 0..30 {
            let d = 0.05 * k as f64;
            let r = reward(&[est([d, 2.0 + 0.5 * d], cov)], &truth).unwrap();
            if k > 0 {
                assert!(r <= last + 1e-15);
            }
            last = r;
        }
    }
}
