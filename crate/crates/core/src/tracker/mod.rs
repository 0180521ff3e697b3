//! Detection-to-track pipeline: CA-CFAR, DBSCAN clustering, gated greedy
//! association, M-of-N track management and a polar-measurement UKF.

mod assoc;
mod cfar;
mod cluster;
pub mod ukf;

pub use assoc::{associate, Assignment};
pub use cfar::{ca_cfar, Detection};
pub use cluster::{cluster, dbscan};
pub use ukf::{unscented_transform, Estimate, Innovation, NoiseModel, UkfConfig};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::sim::RaiFrame;
use crate::{Error, Result};

pub const ACTION_DIM: usize = 4;

/// Hyperparameters chosen by the agent each frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerParams {
    /// Squared-Mahalanobis gate.
    pub gate: f64,
    /// Multiplier on the white-acceleration process noise.
    pub process_noise: f64,
    /// Multiplier on the measurement noise.
    pub meas_noise: f64,
    pub cfar_scale: f64,
}

/// Physical `[lo, hi]` range of each action component, in action order.
pub const PARAM_RANGES: [[f64; 2]; ACTION_DIM] =
    [[1.0, 100.0], [1e-3, 10.0], [1e-2, 10.0], [2.0, 20.0]];

impl TrackerParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.gate,
            self.process_noise,
            self.meas_noise,
            self.cfar_scale,
        ];
        if all.iter().all(|v| *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "tracker parameters must be positive: {self:?}"
            )))
        }
    }

    pub fn as_array(&self) -> [f64; ACTION_DIM] {
        [
            self.gate,
            self.process_noise,
            self.meas_noise,
            self.cfar_scale,
        ]
    }

    /// Inverse of [`map_action`] for values inside the physical ranges.
    pub fn to_action(&self) -> [f64; ACTION_DIM] {
        let v = self.as_array();
        std::array::from_fn(|k| {
            let [lo, hi] = PARAM_RANGES[k];
            2.0 * (v[k] / lo).ln() / (hi / lo).ln() - 1.0
        })
    }
}

/// Mapped parameters plus whether any input component had to be clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappedAction {
    pub params: TrackerParams,
    pub clamped: bool,
}

/// Log-linear map from `[-1, 1]^4` onto [`PARAM_RANGES`].
pub fn map_action(raw: &[f64]) -> MappedAction {
    let mut clamped = raw.len() != ACTION_DIM;
    let v: [f64; ACTION_DIM] = std::array::from_fn(|k| {
        let x = raw.get(k).copied().unwrap_or(0.0);
        let c = if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
        if c != x {
            clamped = true;
        }
        let [lo, hi] = PARAM_RANGES[k];
        lo * (hi / lo).powf(0.5 * (c + 1.0))
    });
    MappedAction {
        params: TrackerParams {
            gate: v[0],
            process_noise: v[1],
            meas_noise: v[2],
            cfar_scale: v[3],
        },
        clamped,
    }
}

/// Fixed pipeline settings not exposed to the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub cfar_guard: usize,
    pub cfar_train: usize,
    /// DBSCAN neighbourhood radius in metres.
    pub cluster_eps: f64,
    pub cluster_min_pts: usize,
    pub confirm_hits: u32,
    pub confirm_window: u32,
    pub max_misses: u32,
    /// Velocity standard deviation of a newborn track, m/s.
    pub init_velocity_std: f64,
    pub noise: NoiseModel,
    pub ukf: UkfConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            cfar_guard: 1,
            cfar_train: 4,
            cluster_eps: 0.3,
            cluster_min_pts: 2,
            confirm_hits: 3,
            confirm_window: 5,
            max_misses: 5,
            init_velocity_std: 1.0,
            noise: NoiseModel::default(),
            ukf: UkfConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.ukf.validate()?;
        if self.cfar_guard == 0 || self.cfar_train == 0 {
            return Err(Error::InvalidConfig(
                "CFAR guard and training widths must be at least 1".into(),
            ));
        }
        if !(self.cluster_eps > 0.0) {
            return Err(Error::InvalidConfig("cluster_eps must be positive".into()));
        }
        if self.confirm_window == 0
            || self.confirm_window > 32
            || self.confirm_hits > self.confirm_window
        {
            return Err(Error::InvalidConfig(
                "confirmation needs 0 < M <= N <= 32".into(),
            ));
        }
        if self.max_misses == 0 {
            return Err(Error::InvalidConfig("max_misses must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Dead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub estimate: Estimate,
    pub hits: u32,
    /// Consecutive misses.
    pub misses: u32,
    pub age: u32,
    /// Bit `k` set when the track was hit `k` frames ago.
    pub history: u32,
    pub status: TrackStatus,
}

impl Track {
    pub fn position(&self) -> [f64; 2] {
        self.estimate.position()
    }
}

/// Predicts a track with process noise `q * Q0`.
pub fn ukf_predict(track: &Track, q: f64, noise: &NoiseModel, cfg: &UkfConfig) -> Result<Track> {
    Ok(Track {
        estimate: ukf::predict(&track.estimate, q, noise, cfg)?,
        ..track.clone()
    })
}

/// Updates a track with a polar measurement `(range m, angle deg)` and
/// measurement noise `r * R0`.
pub fn ukf_update(
    track: &Track,
    z: [f64; 2],
    r: f64,
    noise: &NoiseModel,
    cfg: &UkfConfig,
) -> Result<Track> {
    let z = DVector::from_row_slice(&z);
    Ok(Track {
        estimate: ukf::update(&track.estimate, &z, r, noise, cfg)?,
        ..track.clone()
    })
}

/// True iff the squared Mahalanobis distance of `z` is within `g`.
pub fn gate(innov: &Innovation, z: [f64; 2], g: f64) -> bool {
    innov.distance2(&DVector::from_row_slice(&z)) <= g
}

/// Confirmed track summary exposed to the reward and exporters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub id: u64,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub position_cov: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackerOutput {
    pub confirmed: Vec<TrackReport>,
    pub n_detections: usize,
    pub n_clusters: usize,
}

impl TrackerOutput {
    pub fn n_hat(&self) -> usize {
        self.confirmed.len()
    }
}

/// Episode-local tracker state.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracker {
    pub cfg: TrackerConfig,
    pub tracks: Vec<Track>,
    pub next_id: u64,
    pub frames: u64,
}

fn to_polar(p: [f64; 2]) -> [f64; 2] {
    [p[0].hypot(p[1]), p[0].atan2(p[1]).to_degrees()]
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            tracks: Vec::new(),
            next_id: 0,
            frames: 0,
        })
    }

    pub fn reset(&mut self) {
        self.tracks.clear();
        self.next_id = 0;
        self.frames = 0;
    }

    pub fn step(&mut self, frame: &RaiFrame, params: &TrackerParams) -> Result<TrackerOutput> {
        params.validate()?;
        let cfg = self.cfg.clone();
        let dets = ca_cfar(frame, cfg.cfar_guard, cfg.cfar_train, params.cfar_scale);
        let clusters = cluster(&dets, cfg.cluster_eps, cfg.cluster_min_pts);
        let polar: Vec<[f64; 2]> = clusters.iter().map(|&c| to_polar(c)).collect();

        for t in &mut self.tracks {
            t.estimate = ukf::predict(&t.estimate, params.process_noise, &cfg.noise, &cfg.ukf)?;
        }
        let meas_cov = cfg.noise.measurement() * params.meas_noise;
        let innovations = self
            .tracks
            .iter()
            .map(|t| ukf::innovation(&t.estimate, ukf::measure, &meas_cov, &cfg.ukf))
            .collect::<Result<Vec<_>>>()?;
        let cost: Vec<Vec<f64>> = innovations
            .iter()
            .map(|inn| {
                polar
                    .iter()
                    .map(|z| inn.distance2(&DVector::from_row_slice(z)))
                    .collect()
            })
            .collect();
        let assignment = associate(&cost, clusters.len(), params.gate);

        let window_mask = if cfg.confirm_window >= 32 {
            u32::MAX
        } else {
            (1u32 << cfg.confirm_window) - 1
        };
        for t in &mut self.tracks {
            t.history = (t.history << 1) & window_mask;
            t.age += 1;
        }
        for &(ti, ci) in &assignment.pairs {
            let z = DVector::from_row_slice(&polar[ci]);
            let t = &mut self.tracks[ti];
            t.estimate = ukf::update_with(&t.estimate, &innovations[ti], &z)?;
            t.hits += 1;
            t.misses = 0;
            t.history |= 1;
        }
        for &ti in &assignment.unassigned_tracks {
            self.tracks[ti].misses += 1;
        }
        for t in &mut self.tracks {
            match t.status {
                TrackStatus::Tentative => {
                    if t.history.count_ones() >= cfg.confirm_hits {
                        t.status = TrackStatus::Confirmed;
                    } else if t.misses >= cfg.max_misses
                        || (t.age >= cfg.confirm_window
                            && t.history.count_ones() < cfg.confirm_hits)
                    {
                        t.status = TrackStatus::Dead;
                    }
                }
                TrackStatus::Confirmed => {
                    if t.misses >= cfg.max_misses {
                        t.status = TrackStatus::Dead;
                    }
                }
                TrackStatus::Dead => {}
            }
        }
        self.tracks.retain(|t| t.status != TrackStatus::Dead);

        for &ci in &assignment.unassigned_clusters {
            let estimate = self.birth(polar[ci], params.meas_noise)?;
            self.tracks.push(Track {
                id: self.next_id,
                estimate,
                hits: 1,
                misses: 0,
                age: 1,
                history: 1,
                status: if cfg.confirm_hits <= 1 {
                    TrackStatus::Confirmed
                } else {
                    TrackStatus::Tentative
                },
            });
            self.next_id += 1;
        }
        self.frames += 1;

        Ok(TrackerOutput {
            confirmed: self
                .tracks
                .iter()
                .filter(|t| t.status == TrackStatus::Confirmed)
                .map(|t| TrackReport {
                    id: t.id,
                    position: t.position(),
                    velocity: [t.estimate.mean[2], t.estimate.mean[3]],
                    position_cov: t.estimate.position_cov(),
                })
                .collect(),
            n_detections: dets.len(),
            n_clusters: clusters.len(),
        })
    }

    /// New track at a polar measurement, position covariance from the
    /// linearised measurement noise.
    fn birth(&self, z: [f64; 2], r: f64) -> Result<Estimate> {
        let (rho, theta) = (z[0], z[1].to_radians());
        let (s, c) = theta.sin_cos();
        let sigma_r2 = r * self.cfg.noise.sigma_range.powi(2);
        let sigma_t2 = r * self.cfg.noise.sigma_angle.to_radians().powi(2);
        // d(x, y)/d(rho, theta) for x = rho sin(theta), y = rho cos(theta)
        let j = DMatrix::from_row_slice(2, 2, &[s, rho * c, c, -rho * s]);
        let rc = DMatrix::from_diagonal(&DVector::from_vec(vec![sigma_r2, sigma_t2]));
        let pos = &j * rc * j.transpose();
        let v2 = self.cfg.init_velocity_std.powi(2);
        let mut cov = DMatrix::zeros(4, 4);
        cov.view_mut((0, 0), (2, 2)).copy_from(&pos);
        cov[(0, 0)] += 1e-6;
        cov[(1, 1)] += 1e-6;
        cov[(2, 2)] = v2;
        cov[(3, 3)] = v2;
        ukf::cholesky_lower(&cov, "birth covariance")?;
        Ok(Estimate {
            mean: DVector::from_vec(vec![rho * s, rho * c, 0.0, 0.0]),
            cov,
        })
    }
}

/// CSV rows `frame,track_id,x,y,cov_xx,cov_xy,cov_yy` for a track history.
pub fn track_history_csv(history: &[(usize, TrackerOutput)]) -> String {
    let mut out = String::from("frame,track_id,x,y,cov_xx,cov_xy,cov_yy\n");
    for (frame, o) in history {
        for t in &o.confirmed {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                frame,
                t.id,
                t.position[0],
                t.position[1],
                t.position_cov[0][0],
                t.position_cov[0][1],
                t.position_cov[1][1]
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{
        spawn_task, ClutterSpec, MotionSpec, RadarConfig, RoomSpec, Scene, SceneConfig, Split,
        TargetInit,
    };

    #[test]
    fn action_midpoints_and_bounds() {
        let mid = map_action(&[0.0; 4]);
        assert!(!mid.clamped);
        let p = mid.params;
        assert!((p.gate - 10.0).abs() < 1e-12);
        assert!((p.process_noise - 0.1).abs() < 1e-12);
        assert!((p.meas_noise - 10f64.sqrt() / 10.0).abs() < 1e-12);
        assert!((p.cfar_scale - 40f64.sqrt()).abs() < 1e-12);
        assert_eq!(
            map_action(&[1.0; 4]).params.as_array(),
            [100.0, 10.0, 10.0, 20.0]
        );
        let lo = map_action(&[-1.0; 4]).params.as_array();
        for (v, r) in lo.iter().zip(PARAM_RANGES) {
            assert!((v - r[0]).abs() < 1e-12);
        }
        let c = map_action(&[2.0, -3.0, 0.0, 0.0]);
        assert!(c.clamped);
        assert_eq!(c.params.gate, 100.0);
        let back = mid.params.to_action();
        assert!(back.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gate_examples() {
        let s = DMatrix::identity(2, 2);
        let inn =
            Innovation::from_parts(DVector::from_vec(vec![1.0, 2.0]), s, DMatrix::zeros(4, 2))
                .unwrap();
        assert!(gate(&inn, [1.0, 2.0], 1e-9));
        assert!(!gate(&inn, [4.0, 6.0], 9.0));
        assert!(gate(&inn, [4.0, 6.0], f64::INFINITY));
        assert!(gate(&inn, [4.0, 6.0], 25.0));
    }

    fn quiet_room() -> RoomSpec {
        RoomSpec {
            id: "static".into(),
            split: Split::Train,
            width: 4.0,
            depth: 4.0,
            motion: MotionSpec {
                speed_min: 0.0,
                speed_max: 0.0,
                turn_rate: 0.0,
            },
            clutter: ClutterSpec::default(),
            reflectivity: 1.0,
            noise_scale: 0.01,
            seed: 1,
        }
    }

    #[test]
    fn empty_stream_has_no_tracks() {
        let radar = RadarConfig::default();
        let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
        let frame = RaiFrame::zeros(&radar, 0).unwrap();
        let params = map_action(&[0.0; 4]).params;
        for _ in 0..20 {
            assert_eq!(tracker.step(&frame, &params).unwrap().n_hat(), 0);
        }
    }

    #[test]
    fn static_target_confirmed_quickly() {
        let radar = RadarConfig::default();
        let mut task = spawn_task(&quiet_room(), 1, 4, &radar).unwrap();
        task.targets[0] = TargetInit {
            position: [0.8, 2.6],
            speed: 0.0,
            heading: 0.0,
        };
        let mut scene = Scene::new(&task, &radar, &SceneConfig::default()).unwrap();
        let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
        let params = map_action(&[0.0; 4]).params;
        let mut first_confirmed = None;
        let cell = radar.range_step().unwrap();
        for t in 0..50 {
            let (truth, frame) = scene.next_frame().unwrap();
            let out = tracker.step(&frame, &params).unwrap();
            if out.n_hat() > 0 && first_confirmed.is_none() {
                first_confirmed = Some(t);
            }
            if t >= 10 {
                assert_eq!(out.n_hat(), 1, "frame {t}");
                let p = out.confirmed[0].position;
                let err = (p[0] - truth.positions[0][0]).hypot(p[1] - truth.positions[0][1]);
                let (rho, _) = (p[0].hypot(p[1]), 0.0);
                let angle_cell = rho * radar.angle_step().to_radians();
                assert!(err < 2.0 * cell.max(angle_cell), "frame {t}: error {err}");
            }
        }
        assert!(first_confirmed.unwrap() < 10);
    }

    #[test]
    fn tracker_is_deterministic() {
        let suite = crate::sim::default_suite();
        let task = suite.spawn_episode(&suite.rooms[1], 4).unwrap();
        let run = || {
            let mut scene = Scene::new(&task, &suite.radar, &suite.scene).unwrap();
            let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
            let params = map_action(&[0.1, -0.2, 0.3, 0.0]).params;
            (0..60)
                .map(|_| {
                    tracker
                        .step(&scene.next_frame().unwrap().1, &params)
                        .unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn covariances_stay_spd_under_random_params() {
        use rand::{Rng, SeedableRng};
        let suite = crate::sim::default_suite();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for ep in 0..6 {
            let task = suite
                .spawn_episode(&suite.rooms[ep % 5], ep as u64)
                .unwrap();
            let mut scene = Scene::new(&task, &suite.radar, &suite.scene).unwrap();
            let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
            for _ in 0..80 {
                let raw: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let params = map_action(&raw).params;
                tracker
                    .step(&scene.next_frame().unwrap().1, &params)
                    .unwrap();
                for t in &tracker.tracks {
                    let c = &t.estimate.cov;
                    assert!((c - c.transpose()).amax() < 1e-9);
                    assert!(ukf::cholesky_lower(c, "test").is_ok());
                }
            }
        }
    }

    #[test]
    fn ukf_with_linear_measurement_matches_kalman_filter() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let cfg = UkfConfig::default();
        let noise = NoiseModel::default();
        let h = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let r = DMatrix::from_diagonal(&DVector::from_vec(vec![0.04, 0.09]));
        let f = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0,
            ],
        );
        let q = noise.process(cfg.dt) * 0.5;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut ukf_est = Estimate {
            mean: DVector::from_vec(vec![0.0, 2.0, 0.5, 0.1]),
            cov: DMatrix::identity(4, 4),
        };
        let mut kf = ukf_est.clone();
        for step in 0..100 {
            ukf_est = ukf::predict(&ukf_est, 0.5, &noise, &cfg).unwrap();
            kf = Estimate {
                mean: &f * &kf.mean,
                cov: &f * &kf.cov * f.transpose() + &q,
            };
            let z = &h * &kf.mean
                + DVector::from_fn(2, |_, _| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    0.2 * e
                });
            let inn = ukf::innovation(&ukf_est, |s| &h * s, &r, &cfg).unwrap();
            ukf_est = ukf::update_with(&ukf_est, &inn, &z).unwrap();
            let s = &h * &kf.cov * h.transpose() + &r;
            let k = &kf.cov * h.transpose() * s.try_inverse().unwrap();
            kf = Estimate {
                mean: &kf.mean + &k * (&z - &h * &kf.mean),
                cov: (DMatrix::identity(4, 4) - &k * &h) * &kf.cov,
            };
            assert!((&ukf_est.mean - &kf.mean).amax() <= 1e-6, "step {step}");
            assert!((&ukf_est.cov - &kf.cov).amax() <= 1e-6, "step {step}");
        }
    }
}
