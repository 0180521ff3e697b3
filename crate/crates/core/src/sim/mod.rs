//! Synthetic multi-room radar world.
//!
//! Range-Angle Images are synthesised directly as Gaussian blobs on a
//! non-negative noise floor. The sensor sits at the origin on the room wall
//! `y = 0`; `y` points down-range and `x` is cross-range. Angles follow the
//! tracker convention `atan2(x, y)` in degrees.

mod export;
mod room;
mod scene;

pub use export::{read_frame_dump, write_episode_dump, write_frame_dump};
pub use room::{
    default_suite, spawn_task, ClutterSpec, Disturbance, MotionSpec, Reflector, RoomSpec, RoomTask,
    Split, TargetInit, TaskSuite, WalkBounds,
};
pub use scene::{rai_stats, step_scene, Episode, GroundTruth, RaiFrame, Scene, SceneConfig};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// FMCW front-end and RAI grid description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadarConfig {
    pub n_chirps: usize,
    pub n_samples: usize,
    pub n_rx: usize,
    /// Sweep bandwidth in Hz.
    pub bandwidth: f64,
    /// Active chirp time in seconds.
    pub chirp_time: f64,
    /// ADC sampling frequency in Hz.
    pub sample_rate: f64,
    pub c0: f64,
    pub frame_rate: f64,
    pub fov_half_angle: f64,
    pub grid_ranges: usize,
    pub grid_angles: usize,
    /// Operating range in metres. When set it replaces the beat-frequency
    /// limit returned by [`max_range`].
    pub max_range_override: Option<f64>,
}

impl Default for RadarConfig {
    fn default() -> Self {
        Self {
            n_chirps: 64,
            n_samples: 128,
            n_rx: 3,
            bandwidth: 1.0e9,
            chirp_time: 399.0e-6,
            sample_rate: 2.0e6,
            c0: 2.998e8,
            frame_rate: 10.0,
            fov_half_angle: 60.0,
            grid_ranges: 64,
            grid_angles: 64,
            max_range_override: Some(5.0),
        }
    }
}

impl RadarConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bandwidth", self.bandwidth),
            ("chirp_time", self.chirp_time),
            ("sample_rate", self.sample_rate),
            ("c0", self.c0),
            ("frame_rate", self.frame_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.n_chirps == 0 || self.n_samples == 0 || self.n_rx == 0 {
            return Err(Error::InvalidConfig(
                "chirp, sample and antenna counts must be positive".into(),
            ));
        }
        if self.grid_ranges < 8 || self.grid_angles < 8 {
            return Err(Error::InvalidConfig(
                "RAI grid dimensions must be at least 8".into(),
            ));
        }
        if !(self.fov_half_angle > 0.0 && self.fov_half_angle < 90.0) {
            return Err(Error::InvalidConfig(format!(
                "fov_half_angle must lie in (0, 90), got {}",
                self.fov_half_angle
            )));
        }
        if let Some(r) = self.max_range_override {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "max_range_override must be positive, got {r}"
                )));
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.frame_rate
    }

    /// Range bin spacing of the RAI grid.
    pub fn range_step(&self) -> Result<f64> {
        Ok(max_range(self)? / (self.grid_ranges - 1) as f64)
    }

    pub fn angle_step(&self) -> f64 {
        2.0 * self.fov_half_angle / (self.grid_angles - 1) as f64
    }
}

/// Maximum unambiguous range `(f_s / 2) * (c0 * T_c / B)`, or the override
/// when one is configured.
pub fn max_range(cfg: &RadarConfig) -> Result<f64> {
    cfg.validate()?;
    if let Some(r) = cfg.max_range_override {
        return Ok(r);
    }
    Ok(beat_frequency_range(
        cfg.sample_rate,
        cfg.chirp_time,
        cfg.bandwidth,
        cfg.c0,
    ))
}

/// The beat-frequency range limit without any override.
pub fn beat_frequency_range(sample_rate: f64, chirp_time: f64, bandwidth: f64, c0: f64) -> f64 {
    (sample_rate / 2.0) * (c0 * chirp_time / bandwidth)
}
