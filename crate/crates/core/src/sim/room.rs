use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::SceneConfig;
use super::{max_range, RadarConfig};
use crate::{Error, Result};

/// Margin kept between walking targets and the walls, in metres.
const WALL_MARGIN: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSpec {
    /// Walking speed range in m/s.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Heading diffusion in rad/sqrt(s).
    pub turn_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reflector {
    pub x: f64,
    pub y: f64,
    pub amplitude: f64,
}

/// A moving disturbance (curtain, fan) at a fixed spot whose return
/// fluctuates from frame to frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub x: f64,
    pub y: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClutterSpec {
    pub static_reflectors: Vec<Reflector>,
    pub disturbances: Vec<Disturbance>,
}

/// A room. Episodes recorded in it differ in target count and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    pub id: String,
    pub split: Split,
    /// Extent along the sensor wall, centred on the sensor.
    pub width: f64,
    /// Extent away from the sensor wall.
    pub depth: f64,
    pub motion: MotionSpec,
    #[serde(default)]
    pub clutter: ClutterSpec,
    /// Multiplier on the target return amplitude.
    #[serde(default = "one")]
    pub reflectivity: f64,
    /// Noise floor mean as a fraction of the reference blob amplitude.
    #[serde(default = "default_noise")]
    pub noise_scale: f64,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn default_noise() -> f64 {
    0.02
}

/// Axis-aligned walkable region in sensor coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl WalkBounds {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetInit {
    pub position: [f64; 2],
    pub speed: f64,
    /// Heading in radians, measured from +x.
    pub heading: f64,
}

/// One concrete recording setup: a room, a target count and a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomTask {
    pub task_id: String,
    pub room: RoomSpec,
    pub n_targets: usize,
    pub targets: Vec<TargetInit>,
    pub bounds: WalkBounds,
    pub rng_seed: u64,
}

/// Full world definition: front end, renderer settings and rooms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSuite {
    #[serde(default)]
    pub radar: RadarConfig,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default = "default_episode_length")]
    pub episode_length: usize,
    /// Inclusive target-count range drawn per episode.
    #[serde(default = "default_counts")]
    pub target_counts: [usize; 2],
    pub rooms: Vec<RoomSpec>,
}

fn default_episode_length() -> usize {
    350
}

fn default_counts() -> [usize; 2] {
    [0, 5]
}

pub const MAX_TARGETS: usize = 5;

impl TaskSuite {
    pub fn validate(&self) -> Result<()> {
        self.radar.validate()?;
        self.scene.validate()?;
        if self.episode_length == 0 {
            return Err(Error::InvalidConfig(
                "episode_length must be positive".into(),
            ));
        }
        let [lo, hi] = self.target_counts;
        if lo > hi || hi > MAX_TARGETS {
            return Err(Error::InvalidConfig(format!(
                "target_counts must satisfy lo <= hi <= {MAX_TARGETS}, got [{lo}, {hi}]"
            )));
        }
        if self.rooms.is_empty() {
            return Err(Error::InvalidConfig("suite has no rooms".into()));
        }
        let mut ids: Vec<&str> = self.rooms.iter().map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("room ids must be unique".into()));
        }
        for room in &self.rooms {
            walk_bounds(room, &self.radar)?;
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let suite: TaskSuite =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("task suite: {e}")))?;
        suite.validate()?;
        Ok(suite)
    }

    pub fn rooms_in(&self, split: Split) -> impl Iterator<Item = &RoomSpec> {
        self.rooms.iter().filter(move |r| r.split == split)
    }

    pub fn room(&self, id: &str) -> Option<&RoomSpec> {
        self.rooms.iter().find(|r| r.id == id)
    }

    /// Target count of episode `index` in `room`, cycling through the
    /// configured range so that counts are evenly represented.
    pub fn episode_count(&self, room: &RoomSpec, index: u64) -> usize {
        let [lo, hi] = self.target_counts;
        let span = (hi - lo + 1) as u64;
        let offset = room.seed % span;
        lo + ((index + offset) % span) as usize
    }

    /// Seed of episode `index` in `room`.
    pub fn episode_seed(&self, room: &RoomSpec, index: u64) -> u64 {
        splitmix(room.seed ^ splitmix(index.wrapping_add(0x5851_f42d)))
    }

    pub fn spawn_episode(&self, room: &RoomSpec, index: u64) -> Result<RoomTask> {
        let n = self.episode_count(room, index);
        spawn_task(room, n, self.episode_seed(room, index), &self.radar)
    }
}

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Walkable region of a room: inside the walls, within range and within
/// the field of view.
pub fn walk_bounds(room: &RoomSpec, radar: &RadarConfig) -> Result<WalkBounds> {
    if !(room.width > 0.0 && room.depth > 0.0) {
        return Err(Error::InfeasibleTask(format!(
            "room {} has non-positive size",
            room.id
        )));
    }
    let m = &room.motion;
    if !(m.speed_min >= 0.0 && m.speed_max >= m.speed_min && m.turn_rate >= 0.0) {
        return Err(Error::InfeasibleTask(format!(
            "room {} has invalid motion range",
            room.id
        )));
    }
    if !(room.reflectivity > 0.0 && room.noise_scale >= 0.0) {
        return Err(Error::InfeasibleTask(format!(
            "room {} has invalid amplitudes",
            room.id
        )));
    }
    let r_max = max_range(radar)?;
    let corner = (0.25 * room.width * room.width + room.depth * room.depth).sqrt();
    if corner > r_max {
        return Err(Error::InfeasibleTask(format!(
            "room {} corner at {corner:.2} m exceeds the detection range {r_max:.2} m",
            room.id
        )));
    }
    let half = 0.5 * room.width - WALL_MARGIN;
    // keep one degree inside the field of view at the near corners
    let fov = (radar.fov_half_angle - 1.0).to_radians();
    let y_min = (half / fov.tan()).max(WALL_MARGIN);
    let y_max = room.depth - WALL_MARGIN;
    if half <= 0.0 || y_max <= y_min {
        return Err(Error::InfeasibleTask(format!(
            "room {} leaves no walkable area inside the field of view",
            room.id
        )));
    }
    Ok(WalkBounds {
        x_min: -half,
        x_max: half,
        y_min,
        y_max,
    })
}

/// Draws initial target states uniformly inside the walkable area.
pub fn spawn_task(
    room: &RoomSpec,
    n_targets: usize,
    seed: u64,
    radar: &RadarConfig,
) -> Result<RoomTask> {
    if n_targets > MAX_TARGETS {
        return Err(Error::InfeasibleTask(format!(
            "{n_targets} targets exceeds the maximum of {MAX_TARGETS}"
        )));
    }
    let bounds = walk_bounds(room, radar)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets = (0..n_targets)
        .map(|_| {
            let x = rng.random_range(bounds.x_min..=bounds.x_max);
            let y = rng.random_range(bounds.y_min..=bounds.y_max);
            let speed = if room.motion.speed_max > room.motion.speed_min {
                rng.random_range(room.motion.speed_min..room.motion.speed_max)
            } else {
                room.motion.speed_min
            };
            let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            TargetInit {
                position: [x, y],
                speed,
                heading,
            }
        })
        .collect();
    Ok(RoomTask {
        task_id: room.id.clone(),
        room: room.clone(),
        n_targets,
        targets,
        bounds,
        rng_seed: seed,
    })
}

fn room(id: &str, split: Split, width: f64, depth: f64, speed: [f64; 2], seed: u64) -> RoomSpec {
    RoomSpec {
        id: id.into(),
        split,
        width,
        depth,
        motion: MotionSpec {
            speed_min: speed[0],
            speed_max: speed[1],
            turn_rate: 0.6,
        },
        clutter: ClutterSpec::default(),
        reflectivity: 1.0,
        noise_scale: 0.02,
        seed,
    }
}

/// Five rooms of differing size, noise and clutter: three for training and
/// two held out.
pub fn default_suite() -> TaskSuite {
    let mut office = room("office", Split::Train, 4.0, 4.0, [0.2, 0.8], 11);
    office.clutter.static_reflectors.push(Reflector {
        x: -1.4,
        y: 3.2,
        amplitude: 0.15,
    });

    let mut lab = room("lab", Split::Train, 5.0, 4.2, [0.3, 1.0], 23);
    lab.noise_scale = 0.035;
    lab.reflectivity = 0.9;
    lab.clutter.disturbances.push(Disturbance {
        x: 1.8,
        y: 2.5,
        amplitude: 0.25,
    });

    let mut corridor = room("corridor", Split::Train, 3.0, 4.6, [0.5, 1.3], 37);
    corridor.noise_scale = 0.015;
    corridor.reflectivity = 1.2;

    let mut meeting = room("meeting", Split::Test, 4.6, 4.0, [0.2, 0.9], 41);
    meeting.noise_scale = 0.03;
    meeting.reflectivity = 0.9;
    meeting.clutter.disturbances.push(Disturbance {
        x: -1.5,
        y: 3.0,
        amplitude: 0.2,
    });

    let mut kitchen = room("kitchen", Split::Test, 3.6, 4.4, [0.3, 1.1], 53);
    kitchen.noise_scale = 0.025;
    kitchen.reflectivity = 1.1;
    kitchen.clutter.static_reflectors.push(Reflector {
        x: 1.0,
        y: 3.8,
        amplitude: 0.15,
    });

    TaskSuite {
        radar: RadarConfig::default(),
        scene: SceneConfig::default(),
        episode_length: default_episode_length(),
        target_counts: default_counts(),
        rooms: vec![office, lab, corridor, meeting, kitchen],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spawn_is_deterministic() {
        let suite = default_suite();
        let room = &suite.rooms[0];
        let a = spawn_task(room, 3, 99, &suite.radar).unwrap();
        let b = spawn_task(room, 3, 99, &suite.radar).unwrap();
        assert_eq!(a, b);
        let c = spawn_task(room, 3, 100, &suite.radar).unwrap();
        assert_ne!(a.targets, c.targets);
    }

    #[test]
    fn empty_task() {
        let suite = default_suite();
        let t = spawn_task(&suite.rooms[1], 0, 1, &suite.radar).unwrap();
        assert!(t.targets.is_empty());
        assert_eq!(t.n_targets, 0);
    }

    #[test]
    fn default_suite_split() {
        let suite = default_suite();
        suite.validate().unwrap();
        assert_eq!(suite.rooms.len(), 5);
        let mut ids: Vec<_> = suite.rooms.iter().map(|r| r.id.clone()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 5);
        assert_eq!(suite.rooms_in(Split::Train).count(), 3);
        assert_eq!(suite.rooms_in(Split::Test).count(), 2);
    }

    #[test]
    fn oversized_room_is_infeasible() {
        let suite = default_suite();
        let mut big = suite.rooms[0].clone();
        big.depth = 6.0;
        assert!(matches!(
            spawn_task(&big, 1, 0, &suite.radar),
            Err(Error::InfeasibleTask(_))
        ));
        assert!(spawn_task(&suite.rooms[0], 6, 0, &suite.radar).is_err());
    }

    #[test]
    fn spawned_targets_inside_bounds() {
        let suite = default_suite();
        for room in &suite.rooms {
            let t = spawn_task(room, 5, 7, &suite.radar).unwrap();
            for target in &t.targets {
                assert!(t.bounds.contains(target.position));
                assert!(
                    target.speed >= room.motion.speed_min && target.speed <= room.motion.speed_max
                );
            }
        }
    }

    #[test]
    fn episode_counts_cycle_evenly() {
        let suite = default_suite();
        let room = &suite.rooms[0];
        let mut hist = [0usize; 6];
        for i in 0..60 {
            hist[suite.episode_count(room, i)] += 1;
        }
        assert!(hist.iter().all(|&h| h == 10), "{hist:?}");
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let suite = default_suite();
        let text = toml::to_string(&suite).unwrap();
        let back = TaskSuite::from_toml_str(&text).unwrap();
        assert_eq!(back, suite);
        let bad = format!("{text}\nbogus = 1\n");
        assert!(TaskSuite::from_toml_str(&bad).is_err());
    }
}
