use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::room::{RoomTask, WalkBounds};
use super::{max_range, RadarConfig};
use crate::{Error, Result};

/// `2 sqrt(2 ln 2)`
const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Renderer settings shared by all rooms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Blob full width at half maximum along range, in cells.
    pub blob_width_range: f64,
    /// Blob full width at half maximum along angle, in cells.
    pub blob_width_angle: f64,
    /// Peak return of a unit-reflectivity target at zero range.
    pub base_amplitude: f64,
    /// Log-normal sigma of the per-frame amplitude fluctuation.
    pub fluctuation: f64,
    pub occlusion_margin_deg: f64,
    pub occlusion_factor: f64,
    /// Log-normal sigma of moving-disturbance returns.
    pub disturbance_fluctuation: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            blob_width_range: 2.0,
            blob_width_angle: 3.0,
            base_amplitude: 4.0,
            fluctuation: 0.25,
            occlusion_margin_deg: 5.0,
            occlusion_factor: 0.3,
            disturbance_fluctuation: 0.6,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.blob_width_range > 0.0
            && self.blob_width_angle > 0.0
            && self.base_amplitude > 0.0
            && self.fluctuation >= 0.0
            && self.occlusion_margin_deg >= 0.0
            && (0.0..=1.0).contains(&self.occlusion_factor)
            && self.disturbance_fluctuation >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "scene renderer parameters out of range".into(),
            ))
        }
    }
}

/// A range x angle grid of linear power.
#[derive(Debug, Clone, PartialEq)]
pub struct RaiFrame {
    /// Indexed `[range_bin, angle_bin]`.
    pub intensity: Array2<f64>,
    /// Bin centres in metres, uniform on `[0, R_max]`.
    pub range_axis: Vec<f64>,
    /// Bin centres in degrees, uniform on `[-fov, fov]`.
    pub angle_axis: Vec<f64>,
    pub timestamp: usize,
}

impl RaiFrame {
    pub fn zeros(radar: &RadarConfig, timestamp: usize) -> Result<Self> {
        let r_max = max_range(radar)?;
        let nr = radar.grid_ranges;
        let na = radar.grid_angles;
        let fov = radar.fov_half_angle;
        Ok(Self {
            intensity: Array2::zeros((nr, na)),
            range_axis: (0..nr)
                .map(|i| r_max * i as f64 / (nr - 1) as f64)
                .collect(),
            angle_axis: (0..na)
                .map(|j| -fov + 2.0 * fov * j as f64 / (na - 1) as f64)
                .collect(),
            timestamp,
        })
    }

    pub fn n_ranges(&self) -> usize {
        self.range_axis.len()
    }

    pub fn n_angles(&self) -> usize {
        self.angle_axis.len()
    }

    pub fn range_step(&self) -> f64 {
        self.range_axis[1] - self.range_axis[0]
    }

    pub fn angle_step(&self) -> f64 {
        self.angle_axis[1] - self.angle_axis[0]
    }

    pub fn max_range(&self) -> f64 {
        *self.range_axis.last().unwrap()
    }

    pub fn fov(&self) -> f64 {
        *self.angle_axis.last().unwrap()
    }

    /// Cell containing a polar point, if it lies on the grid.
    pub fn cell_of(&self, range: f64, angle: f64) -> Option<(usize, usize)> {
        let i = (range / self.range_step()).round();
        let j = ((angle - self.angle_axis[0]) / self.angle_step()).round();
        if i < 0.0 || j < 0.0 || i as usize >= self.n_ranges() || j as usize >= self.n_angles() {
            None
        } else {
            Some((i as usize, j as usize))
        }
    }

    /// Average-pools the grid into `out_r x out_a` blocks, row-major.
    pub fn pooled(&self, out_r: usize, out_a: usize) -> Vec<f64> {
        self.pool_with(out_r, out_a, false)
    }

    /// Block maxima over the same blocks as [`RaiFrame::pooled`].
    pub fn max_pooled(&self, out_r: usize, out_a: usize) -> Vec<f64> {
        self.pool_with(out_r, out_a, true)
    }

    fn pool_with(&self, out_r: usize, out_a: usize, max: bool) -> Vec<f64> {
        let nr = self.n_ranges();
        let na = self.n_angles();
        let mut out = vec![0.0f64; out_r * out_a];
        let mut counts = vec![0usize; out_r * out_a];
        for i in 0..nr {
            let bi = i * out_r / nr;
            for j in 0..na {
                let bj = j * out_a / na;
                let k = bi * out_a + bj;
                let v = self.intensity[[i, j]];
                out[k] = if max { out[k].max(v) } else { out[k] + v };
                counts[k] += 1;
            }
        }
        if !max {
            for (v, c) in out.iter_mut().zip(counts) {
                *v /= c.max(1) as f64;
            }
        }
        out
    }
}

/// Mean and population standard deviation of all grid intensities.
pub fn rai_stats(frame: &RaiFrame) -> (f64, f64) {
    let n = frame.intensity.len() as f64;
    let mean = frame.intensity.sum() / n;
    let var = frame
        .intensity
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    (mean, var.max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub positions: Vec<[f64; 2]>,
}

impl GroundTruth {
    pub fn count(&self) -> usize {
        self.positions.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Walker {
    position: [f64; 2],
    speed: f64,
    heading: f64,
}

/// Incremental simulator for one [`RoomTask`].
#[derive(Debug, Clone)]
pub struct Scene {
    task: RoomTask,
    radar: RadarConfig,
    cfg: SceneConfig,
    walkers: Vec<Walker>,
    motion_rng: ChaCha8Rng,
    t: usize,
}

impl Scene {
    pub fn new(task: &RoomTask, radar: &RadarConfig, cfg: &SceneConfig) -> Result<Self> {
        radar.validate()?;
        cfg.validate()?;
        let mut motion_rng = ChaCha8Rng::seed_from_u64(task.rng_seed);
        motion_rng.set_stream(1);
        Ok(Self {
            task: task.clone(),
            radar: radar.clone(),
            cfg: cfg.clone(),
            walkers: task
                .targets
                .iter()
                .map(|t| Walker {
                    position: t.position,
                    speed: t.speed,
                    heading: t.heading,
                })
                .collect(),
            motion_rng,
            t: 0,
        })
    }

    pub fn task(&self) -> &RoomTask {
        &self.task
    }

    /// Index of the frame the next call to [`Scene::next_frame`] renders.
    pub fn frame_index(&self) -> usize {
        self.t
    }

    pub fn truth(&self) -> GroundTruth {
        GroundTruth {
            positions: self.walkers.iter().map(|w| w.position).collect(),
        }
    }

    /// Renders the current frame and advances the targets by one step.
    pub fn next_frame(&mut self) -> Result<(GroundTruth, RaiFrame)> {
        let truth = self.truth();
        let frame = self.render()?;
        self.advance();
        self.t += 1;
        Ok((truth, frame))
    }

    fn advance(&mut self) {
        let dt = self.radar.dt();
        let sigma = self.task.room.motion.turn_rate * dt.sqrt();
        let bounds = self.task.bounds;
        for w in &mut self.walkers {
            if sigma > 0.0 {
                let n: f64 = self.motion_rng.sample(rand_distr::StandardNormal);
                w.heading += sigma * n;
            }
            let mut x = w.position[0] + w.speed * w.heading.cos() * dt;
            let mut y = w.position[1] + w.speed * w.heading.sin() * dt;
            let (mut vx, mut vy) = (w.heading.cos(), w.heading.sin());
            reflect(&mut x, &mut vx, bounds.x_min, bounds.x_max);
            reflect(&mut y, &mut vy, bounds.y_min, bounds.y_max);
            w.position = [x, y];
            w.heading = vy.atan2(vx);
        }
    }

    fn render(&self) -> Result<RaiFrame> {
        let mut frame = RaiFrame::zeros(&self.radar, self.t)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.task.rng_seed);
        rng.set_stream(2 + self.t as u64);

        let amp0 = self.cfg.base_amplitude;
        let room = &self.task.room;
        let polar: Vec<(f64, f64)> = self.walkers.iter().map(|w| to_polar(w.position)).collect();
        let fluct = lognormal(self.cfg.fluctuation);
        for (k, &(r, a)) in polar.iter().enumerate() {
            let occluded = polar.iter().enumerate().any(|(m, &(rm, am))| {
                m != k && rm < r && (am - a).abs() <= self.cfg.occlusion_margin_deg
            });
            let mut amp = amp0 * room.reflectivity / (1.0 + r) * fluct.sample(&mut rng);
            if occluded {
                amp *= self.cfg.occlusion_factor;
            }
            self.add_blob(&mut frame, r, a, amp);
        }
        for refl in &room.clutter.static_reflectors {
            let (r, a) = to_polar([refl.x, refl.y]);
            self.add_blob(&mut frame, r, a, amp0 * refl.amplitude / (1.0 + r));
        }
        let dist = lognormal(self.cfg.disturbance_fluctuation);
        for d in &room.clutter.disturbances {
            let (r, a) = to_polar([d.x, d.y]);
            let amp = amp0 * d.amplitude / (1.0 + r) * dist.sample(&mut rng);
            self.add_blob(&mut frame, r, a, amp);
        }
        let noise_mean = room.noise_scale * amp0;
        if noise_mean > 0.0 {
            let exp = Exp::new(1.0 / noise_mean).map_err(|e| Error::Numerical(e.to_string()))?;
            for v in frame.intensity.iter_mut() {
                *v += exp.sample(&mut rng);
            }
        }
        Ok(frame)
    }

    fn add_blob(&self, frame: &mut RaiFrame, range: f64, angle: f64, amp: f64) {
        let ci = range / frame.range_step();
        let cj = (angle - frame.angle_axis[0]) / frame.angle_step();
        let wr = self.cfg.blob_width_range / FWHM_PER_SIGMA;
        let wa = self.cfg.blob_width_angle / FWHM_PER_SIGMA;
        // contributions beyond 4 sigma are below 3.4e-4 of the peak
        let i0 = (ci - 4.0 * wr).floor().max(0.0) as usize;
        let i1 = ((ci + 4.0 * wr).ceil() as usize).min(frame.n_ranges() - 1);
        let j0 = (cj - 4.0 * wa).floor().max(0.0) as usize;
        let j1 = ((cj + 4.0 * wa).ceil().max(0.0) as usize).min(frame.n_angles() - 1);
        for i in i0..=i1 {
            let di = (i as f64 - ci) / wr;
            for j in j0..=j1 {
                let dj = (j as f64 - cj) / wa;
                frame.intensity[[i, j]] += amp * (-0.5 * (di * di + dj * dj)).exp();
            }
        }
    }
}

fn lognormal(sigma: f64) -> LogNormalOrOne {
    LogNormalOrOne(if sigma > 0.0 {
        Normal::new(0.0, sigma).ok()
    } else {
        None
    })
}

struct LogNormalOrOne(Option<Normal<f64>>);

impl LogNormalOrOne {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match &self.0 {
            Some(n) => n.sample(rng).exp(),
            None => 1.0,
        }
    }
}

fn reflect(p: &mut f64, v: &mut f64, lo: f64, hi: f64) {
    if *p < lo {
        *p = (2.0 * lo - *p).min(hi);
        *v = v.abs();
    } else if *p > hi {
        *p = (2.0 * hi - *p).max(lo);
        *v = -v.abs();
    }
}

/// Sensor-frame Cartesian point to (range m, angle deg).
pub(crate) fn to_polar(p: [f64; 2]) -> (f64, f64) {
    (p[0].hypot(p[1]), p[0].atan2(p[1]).to_degrees())
}

/// Frame `t` of a task, replayed from the start.
pub fn step_scene(
    task: &RoomTask,
    t: usize,
    radar: &RadarConfig,
    cfg: &SceneConfig,
) -> Result<(GroundTruth, RaiFrame)> {
    let mut scene = Scene::new(task, radar, cfg)?;
    for _ in 0..t {
        scene.advance();
        scene.t += 1;
    }
    scene.next_frame()
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub task_id: String,
    pub n_targets: usize,
    pub frames: Vec<(RaiFrame, GroundTruth)>,
}

impl Episode {
    pub fn generate(
        task: &RoomTask,
        length: usize,
        radar: &RadarConfig,
        cfg: &SceneConfig,
    ) -> Result<Self> {
        if length == 0 {
            return Err(Error::InvalidConfig(
                "episode length must be positive".into(),
            ));
        }
        let mut scene = Scene::new(task, radar, cfg)?;
        let mut frames = Vec::with_capacity(length);
        for _ in 0..length {
            let (truth, frame) = scene.next_frame()?;
            frames.push((frame, truth));
        }
        Ok(Self {
            task_id: task.task_id.clone(),
            n_targets: task.n_targets,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

impl WalkBounds {
    pub fn polar_limits_ok(&self, r_max: f64, fov: f64) -> bool {
        let corners = [
            [self.x_min, self.y_min],
            [self.x_max, self.y_min],
            [self.x_min, self.y_max],
            [self.x_max, self.y_max],
        ];
        corners.iter().all(|&c| {
            let (r, a) = to_polar(c);
            r <= r_max && a.abs() <= fov
        })
    }
}
