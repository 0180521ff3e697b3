use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, ObsConfig, Observation};
use crate::assignment::hungarian;
use crate::reward::reward_from_reports;
use crate::sim::{GroundTruth, RaiFrame, RoomSpec, Scene, TaskSuite};
use crate::tracker::{
    map_action, Tracker, TrackerConfig, TrackerOutput, TrackerParams, ACTION_DIM,
};
use crate::{Error, Result};

/// Episode indices at or above this value are reserved for evaluation.
pub const EVAL_EPISODE_BASE: u64 = 1 << 40;
/// Episode indices reserved for baseline tuning.
pub const TUNE_EPISODE_BASE: u64 = 1 << 41;

/// Maps an observation to tracker parameters.
pub trait Policy {
    fn params(&self, obs: &Observation) -> Result<TrackerParams>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPolicy(pub TrackerParams);

impl Policy for FixedPolicy {
    fn params(&self, _obs: &Observation) -> Result<TrackerParams> {
        Ok(self.0)
    }
}

/// Deterministic actor output.
impl Policy for Agent {
    fn params(&self, obs: &Observation) -> Result<TrackerParams> {
        // deterministic actions draw no random numbers
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let a = self.act(obs, true, &mut rng)?;
        Ok(map_action(&a).params)
    }
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct Step {
    pub reward: f64,
    pub next: Observation,
    pub truth: GroundTruth,
    pub output: TrackerOutput,
    /// The episode ended and the environment moved on to the next one.
    pub episode_end: bool,
}

/// A room driving the simulator and tracker frame by frame. Episodes follow
/// each other in index order; the tracker resets between them.
#[derive(Debug, Clone)]
pub struct TaskEnv {
    suite: TaskSuite,
    room: RoomSpec,
    obs_cfg: ObsConfig,
    tracker_cfg: TrackerConfig,
    episode_base: u64,
    episode: u64,
    episode_length: usize,
    scene: Scene,
    tracker: Tracker,
    current: (GroundTruth, RaiFrame),
    obs: Observation,
    /// Parameters applied so far in the current episode.
    history: Vec<TrackerParams>,
}

impl TaskEnv {
    pub fn new(
        suite: &TaskSuite,
        room: &RoomSpec,
        obs_cfg: ObsConfig,
        tracker_cfg: TrackerConfig,
        episode_base: u64,
        episode_length: usize,
    ) -> Result<Self> {
        if episode_length == 0 {
            return Err(Error::InvalidConfig(
                "episode length must be positive".into(),
            ));
        }
        let (scene, current, obs) = Self::open(suite, room, &obs_cfg, episode_base)?;
        Ok(Self {
            suite: suite.clone(),
            room: room.clone(),
            obs_cfg,
            tracker: Tracker::new(tracker_cfg.clone())?,
            tracker_cfg,
            episode_base,
            episode: 0,
            episode_length,
            scene,
            current,
            obs,
            history: Vec::new(),
        })
    }

    fn open(
        suite: &TaskSuite,
        room: &RoomSpec,
        obs_cfg: &ObsConfig,
        index: u64,
    ) -> Result<(Scene, (GroundTruth, RaiFrame), Observation)> {
        let task = suite.spawn_episode(room, index)?;
        let mut scene = Scene::new(&task, &suite.radar, &suite.scene)?;
        let current = scene.next_frame()?;
        let obs = Observation::from_frame(&current.1, obs_cfg);
        Ok((scene, current, obs))
    }

    pub fn room(&self) -> &RoomSpec {
        &self.room
    }

    pub fn observation(&self) -> &Observation {
        &self.obs
    }

    /// Episodes completed so far.
    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn frame_in_episode(&self) -> usize {
        self.history.len()
    }

    pub fn n_targets(&self) -> usize {
        self.scene.task().n_targets
    }

    pub fn history(&self) -> &[TrackerParams] {
        &self.history
    }

    /// Applies `params` to the current frame, scores the tracker output and
    /// advances to the next frame.
    pub fn step(&mut self, params: &TrackerParams) -> Result<Step> {
        let output = self.tracker.step(&self.current.1, params)?;
        let truth = self.current.0.clone();
        let reward = reward_from_reports(&output.confirmed, &truth)?;
        self.history.push(*params);
        let next = self.scene.next_frame()?;
        let next_obs = Observation::from_frame(&next.1, &self.obs_cfg);
        let episode_end = self.history.len() >= self.episode_length;
        if episode_end {
            self.episode += 1;
            let (scene, current, obs) = Self::open(
                &self.suite,
                &self.room,
                &self.obs_cfg,
                self.episode_base + self.episode,
            )?;
            self.scene = scene;
            self.current = current;
            self.obs = obs;
            self.tracker.reset();
            self.history.clear();
        } else {
            self.current = next;
            self.obs = next_obs.clone();
        }
        Ok(Step {
            reward,
            next: next_obs,
            truth,
            output,
            episode_end,
        })
    }

    /// Rebuilds the environment at `episode` after replaying `history`.
    pub fn restore(&mut self, episode: u64, history: &[TrackerParams]) -> Result<()> {
        let (scene, current, obs) = Self::open(
            &self.suite,
            &self.room,
            &self.obs_cfg,
            self.episode_base + episode,
        )?;
        self.scene = scene;
        self.current = current;
        self.obs = obs;
        self.episode = episode;
        self.tracker = Tracker::new(self.tracker_cfg.clone())?;
        self.history.clear();
        for p in history {
            self.step(p)?;
        }
        Ok(())
    }
}

/// Stochastic-policy rollout step used during training: returns the raw
/// action alongside the step.
pub fn act_and_step<R: Rng + ?Sized>(
    agent: &Agent,
    env: &mut TaskEnv,
    rng: &mut R,
) -> Result<([f64; ACTION_DIM], Observation, Step)> {
    let obs = env.observation().clone();
    let a = agent.act(&obs, false, rng)?;
    let step = env.step(&map_action(&a).params)?;
    Ok((a, obs, step))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Episodes per room; target counts cycle across them.
    pub episodes: usize,
    pub frames: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 6,
            frames: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `(room id, mean per-frame reward)`.
    pub per_task: Vec<(String, f64)>,
    pub average: f64,
}

impl EvalReport {
    pub fn from_task_means(per_task: Vec<(String, f64)>) -> Self {
        let average = per_task.iter().map(|(_, r)| r).sum::<f64>() / per_task.len().max(1) as f64;
        Self { per_task, average }
    }
}

/// Mean unscaled reward of `policy` over a fixed set of episodes in each
/// room. No learning happens here.
pub fn evaluate_on<P: Policy + ?Sized>(
    policy: &P,
    suite: &TaskSuite,
    rooms: &[&RoomSpec],
    cfg: &EvalConfig,
    obs_cfg: &ObsConfig,
    tracker_cfg: &TrackerConfig,
    episode_base: u64,
) -> Result<EvalReport> {
    let mut per_task = Vec::with_capacity(rooms.len());
    for room in rooms {
        let mut env = TaskEnv::new(
            suite,
            room,
            *obs_cfg,
            tracker_cfg.clone(),
            episode_base,
            cfg.frames,
        )?;
        let mut total = 0.0;
        let mut n = 0usize;
        for _ in 0..cfg.episodes {
            for _ in 0..cfg.frames {
                let params = policy.params(env.observation())?;
                total += env.step(&params)?.reward;
                n += 1;
            }
        }
        per_task.push((room.id.clone(), total / n.max(1) as f64));
    }
    Ok(EvalReport::from_task_means(per_task))
}

/// Cross-range error and count accuracy of a policy on one room.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    /// Root mean square x error over matched pairs, absent without matches.
    pub rmse_x: Option<f64>,
    pub matched: usize,
    /// Fraction of frames with exactly the right number of confirmed tracks.
    pub count_accuracy: f64,
}

/// Accumulates matched x-errors frame by frame.
#[derive(Debug, Clone, Default)]
pub struct RmseAccumulator {
    sq: f64,
    matched: usize,
    frames: usize,
    exact: usize,
}

impl RmseAccumulator {
    pub fn add_frame(&mut self, tracks: &[[f64; 2]], truth: &[[f64; 2]]) {
        self.frames += 1;
        if tracks.len() == truth.len() {
            self.exact += 1;
        }
        if tracks.is_empty() || truth.is_empty() {
            return;
        }
        let cost: Vec<Vec<f64>> = tracks
            .iter()
            .map(|t| {
                truth
                    .iter()
                    .map(|g| (t[0] - g[0]).hypot(t[1] - g[1]))
                    .collect()
            })
            .collect();
        for (i, j) in hungarian(&cost) {
            self.sq += (tracks[i][0] - truth[j][0]).powi(2);
            self.matched += 1;
        }
    }

    pub fn report(&self) -> RmseReport {
        RmseReport {
            rmse_x: (self.matched > 0).then(|| (self.sq / self.matched as f64).sqrt()),
            matched: self.matched,
            count_accuracy: self.exact as f64 / self.frames.max(1) as f64,
        }
    }
}

pub fn rmse_eval<P: Policy + ?Sized>(
    policy: &P,
    suite: &TaskSuite,
    room: &RoomSpec,
    cfg: &EvalConfig,
    obs_cfg: &ObsConfig,
    tracker_cfg: &TrackerConfig,
) -> Result<RmseReport> {
    let mut env = TaskEnv::new(
        suite,
        room,
        *obs_cfg,
        tracker_cfg.clone(),
        EVAL_EPISODE_BASE,
        cfg.frames,
    )?;
    let mut acc = RmseAccumulator::default();
    for _ in 0..cfg.episodes * cfg.frames {
        let params = policy.params(env.observation())?;
        let step = env.step(&params)?;
        let tracks: Vec<[f64; 2]> = step.output.confirmed.iter().map(|t| t.position).collect();
        acc.add_frame(&tracks, &step.truth.positions);
    }
    Ok(acc.report())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::default_suite;

    fn params() -> TrackerParams {
        TrackerParams {
            gate: 9.0,
            process_noise: 0.1,
            meas_noise: 0.1,
            cfar_scale: 5.0,
        }
    }

    #[test]
    fn rmse_of_perfect_and_offset_tracks() {
        let truth = vec![[0.0, 2.0], [1.0, 3.0]];
        let mut acc = RmseAccumulator::default();
        acc.add_frame(&truth, &truth);
        assert_eq!(acc.report().rmse_x, Some(0.0));
        assert_eq!(acc.report().count_accuracy, 1.0);
        let mut acc = RmseAccumulator::default();
        let shifted: Vec<[f64; 2]> = truth.iter().map(|p| [p[0] + 1.0, p[1]]).collect();
        acc.add_frame(&shifted, &truth);
        acc.add_frame(&shifted[..1], &truth);
        let r = acc.report();
        assert!((r.rmse_x.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.count_accuracy, 0.5);
    }

    #[test]
    fn rmse_without_matches_is_absent() {
        let mut acc = RmseAccumulator::default();
        acc.add_frame(&[], &[[0.0, 2.0]]);
        assert_eq!(acc.report().rmse_x, None);
    }

    #[test]
    fn evaluation_is_deterministic_and_averages_tasks() {
        let suite = default_suite();
        let rooms: Vec<&RoomSpec> = suite.rooms.iter().skip(3).collect();
        let cfg = EvalConfig {
            episodes: 2,
            frames: 20,
        };
        let p = FixedPolicy(params());
        let run = || {
            evaluate_on(
                &p,
                &suite,
                &rooms,
                &cfg,
                &ObsConfig::default(),
                &TrackerConfig::default(),
                EVAL_EPISODE_BASE,
            )
            .unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        let mean = (a.per_task[0].1 + a.per_task[1].1) / 2.0;
        assert_eq!(a.average, mean);
        let r = EvalReport::from_task_means(vec![("a".into(), -0.4), ("b".into(), -0.6)]);
        assert!((r.average + 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_rooms_with_a_silent_tracker_score_zero() {
        let mut suite = default_suite();
        suite.target_counts = [0, 0];
        let rooms: Vec<&RoomSpec> = suite.rooms.iter().take(1).collect();
        // a threshold no noise cell reaches never confirms a track
        let silent = FixedPolicy(TrackerParams {
            cfar_scale: 20.0,
            ..params()
        });
        let r = evaluate_on(
            &silent,
            &suite,
            &rooms,
            &EvalConfig {
                episodes: 1,
                frames: 30,
            },
            &ObsConfig::default(),
            &TrackerConfig::default(),
            EVAL_EPISODE_BASE,
        )
        .unwrap();
        assert_eq!(r.average, 0.0);
    }

    #[test]
    fn restore_replays_to_identical_state() {
        let suite = default_suite();
        let room = &suite.rooms[0];
        let mut env = TaskEnv::new(
            &suite,
            room,
            ObsConfig::default(),
            TrackerConfig::default(),
            0,
            15,
        )
        .unwrap();
        for k in 0..22 {
            let p = TrackerParams {
                cfar_scale: 4.0 + (k % 3) as f64,
                ..params()
            };
            env.step(&p).unwrap();
        }
        let mut copy = TaskEnv::new(
            &suite,
            room,
            ObsConfig::default(),
            TrackerConfig::default(),
            0,
            15,
        )
        .unwrap();
        copy.restore(env.episode(), &env.history().to_vec())
            .unwrap();
        assert_eq!(copy.observation(), env.observation());
        for _ in 0..10 {
            let a = env.step(&params()).unwrap();
            let b = copy.step(&params()).unwrap();
            assert_eq!(a.reward, b.reward);
            assert_eq!(a.next, b.next);
        }
    }
}
