//! Meta-training over rooms, comparator meta-learners, the fixed baseline
//! and the reward-scale ablation.

mod env;

pub use env::*;

use std::fmt::Write as _;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{
    draw_mask, Agent, AgentConfig, AgentGrads, Batch, ReplayBuffer, Transition, DEFAULT_CAPACITY,
};
use crate::checkpoint::Checkpoint;
use crate::nn;
use crate::sim::{RoomSpec, Split, TaskSuite};
use crate::tracker::{TrackerConfig, TrackerParams};
use crate::{Error, Result};

/// Rooms used for learning and rooms held out for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    pub train: Vec<RoomSpec>,
    pub test: Vec<RoomSpec>,
}

impl TaskSet {
    pub fn new(train: Vec<RoomSpec>, test: Vec<RoomSpec>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one train task is required".into(),
            ));
        }
        if train.iter().any(|a| test.iter().any(|b| a.id == b.id)) {
            return Err(Error::InvalidConfig(
                "train and test task ids must be disjoint".into(),
            ));
        }
        Ok(Self { train, test })
    }

    pub fn from_suite(suite: &TaskSuite) -> Result<Self> {
        Self::new(
            suite.rooms_in(Split::Train).cloned().collect(),
            suite.rooms_in(Split::Test).cloned().collect(),
        )
    }

    pub fn is_train(&self, id: &str) -> bool {
        self.train.iter().any(|r| r.id == id)
    }

    pub fn test_refs(&self) -> Vec<&RoomSpec> {
        self.test.iter().collect()
    }

    pub fn train_refs(&self) -> Vec<&RoomSpec> {
        self.train.iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ContextPrior,
    Reptile,
    Fomaml,
    FixedBaseline,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::ContextPrior => "context_prior",
            Method::Reptile => "reptile",
            Method::Fomaml => "fomaml",
            Method::FixedBaseline => "fixed_baseline",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "context_prior" => Ok(Method::ContextPrior),
            "reptile" => Ok(Method::Reptile),
            "fomaml" => Ok(Method::Fomaml),
            "fixed_baseline" => Ok(Method::FixedBaseline),
            _ => Err(Error::InvalidConfig(format!("unknown method '{s}'"))),
        }
    }
}

/// Settings of the comparator meta-learners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparatorSpec {
    pub inner_lr: f64,
    pub inner_steps: usize,
    /// Reptile interpolation step.
    pub reptile_step: f64,
    /// First-order MAML outer learning rate.
    pub outer_lr: f64,
}

impl Default for ComparatorSpec {
    fn default() -> Self {
        Self {
            inner_lr: 3e-4,
            inner_steps: 5,
            reptile_step: 0.5,
            outer_lr: 3e-4,
        }
    }
}

impl ComparatorSpec {
    pub fn validate(&self, method: Method) -> Result<()> {
        let ok = match method {
            Method::Reptile => {
                self.inner_lr > 0.0
                    && self.inner_steps > 0
                    && (0.0..=1.0).contains(&self.reptile_step)
            }
            Method::Fomaml => self.inner_lr > 0.0 && self.outer_lr >= 0.0,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid comparator settings for {}",
                method.name()
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    pub meta_iterations: usize,
    /// Frames rolled out per train task per iteration.
    pub rollout_frames: usize,
    pub eval_every: usize,
    /// Multiplier on training rewards; evaluation is always unscaled.
    pub reward_scale: f64,
    pub seeds: Vec<u64>,
    pub eval: EvalConfig,
    pub buffer_capacity: usize,
    /// Learning-rate multiplier reached on the last iteration, annealed linearly from 1.
    pub final_lr_fraction: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            meta_iterations: 200,
            rollout_frames: 350,
            eval_every: 10,
            reward_scale: 1.0,
            seeds: vec![0, 1, 2],
            eval: EvalConfig::default(),
            buffer_capacity: DEFAULT_CAPACITY,
            final_lr_fraction: 1.0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.meta_iterations > 0
            && self.rollout_frames > 0
            && self.eval_every > 0
            && self.buffer_capacity > 0
            && self.eval.episodes > 0
            && self.eval.frames > 0;
        if !positive {
            return Err(Error::InvalidConfig("meta counts must be positive".into()));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(Error::InvalidConfig("reward_scale must be positive".into()));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::InvalidConfig(
                "final_lr_fraction must lie in (0, 1]".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        Ok(())
    }
}

/// One update of the meta-parameters from the summed per-task gradients,
/// all under a single head mask drawn from `mask_rng`.
pub fn meta_update<R: Rng + ?Sized, S: Rng>(
    agent: &mut Agent,
    batches: &[Batch],
    tasks: &TaskSet,
    mask_rng: &mut R,
    task_rngs: &mut [S],
) -> Result<AgentGrads> {
    let mask = draw_mask(agent.n_heads(), agent.cfg.sac.mask_p, mask_rng);
    let grads = summed_grads(agent, batches, tasks, &mask, task_rngs)?;
    agent.apply_grads(&grads)?;
    Ok(grads)
}

/// Per-task gradients, each drawn from its own task stream, summed in task
/// order.
pub fn summed_grads<S: Rng>(
    agent: &Agent,
    batches: &[Batch],
    tasks: &TaskSet,
    mask: &[bool],
    task_rngs: &mut [S],
) -> Result<AgentGrads> {
    if batches.len() != task_rngs.len() {
        return Err(Error::InvalidConfig(
            "one random stream per task batch is required".into(),
        ));
    }
    let mut total: Option<AgentGrads> = None;
    for (b, rng) in batches.iter().zip(task_rngs.iter_mut()) {
        if !tasks.is_train(&b.task_id) {
            return Err(Error::InvalidConfig(format!(
                "batch from '{}' is not a train task",
                b.task_id
            )));
        }
        let g = agent.compute_grads(b, mask, rng)?;
        match total.as_mut() {
            Some(t) => t.add(&g),
            None => total = Some(g),
        }
    }
    total.ok_or_else(|| Error::InvalidConfig("no batches".into()))
}

/// Evaluation rewards over the course of training.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearningCurve {
    pub tasks: Vec<String>,
    pub rows: Vec<CurveRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub iteration: usize,
    pub per_task: Vec<f64>,
    pub average: f64,
}

impl LearningCurve {
    pub fn new(tasks: Vec<String>) -> Self {
        Self {
            tasks,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, iteration: usize, report: &EvalReport) {
        self.rows.push(CurveRow {
            iteration,
            per_task: report.per_task.iter().map(|(_, r)| *r).collect(),
            average: report.average,
        });
    }

    pub fn peak(&self) -> Option<f64> {
        self.rows.iter().map(|r| r.average).reduce(f64::max)
    }

    pub fn last(&self) -> Option<f64> {
        self.rows.last().map(|r| r.average)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration");
        for t in &self.tasks {
            let _ = write!(s, ",{t}");
        }
        s.push_str(",average\n");
        for r in &self.rows {
            let _ = write!(s, "{}", r.iteration);
            for v in &r.per_task {
                let _ = write!(s, ",{v}");
            }
            let _ = writeln!(s, ",{}", r.average);
        }
        s
    }

    fn save(&self, ck: &mut Checkpoint, prefix: &str) {
        let w = self.tasks.len() + 2;
        let t = Array2::from_shape_fn((self.rows.len(), w), |(i, j)| {
            let r = &self.rows[i];
            match j {
                0 => r.iteration as f64,
                j if j == w - 1 => r.average,
                j => r.per_task[j - 1],
            }
        });
        ck.put_tensor(&format!("{prefix}.rows"), t);
        ck.put_bytes(
            &format!("{prefix}.tasks"),
            self.tasks.join("\n").into_bytes(),
        );
    }

    fn load(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let names = String::from_utf8(ck.bytes(&format!("{prefix}.tasks"))?.to_vec())
            .map_err(|_| Error::Checkpoint("curve task names are not utf-8".into()))?;
        let tasks: Vec<String> = if names.is_empty() {
            Vec::new()
        } else {
            names.split('\n').map(String::from).collect()
        };
        let t = ck.tensor(&format!("{prefix}.rows"))?;
        let w = tasks.len() + 2;
        if t.nrows() > 0 && t.ncols() != w {
            return Err(Error::Checkpoint(
                "curve width does not match task count".into(),
            ));
        }
        let rows = t
            .rows()
            .into_iter()
            .map(|r| CurveRow {
                iteration: r[0] as usize,
                per_task: r.iter().skip(1).take(w - 2).copied().collect(),
                average: r[w - 1],
            })
            .collect();
        Ok(Self { tasks, rows })
    }
}

/// Everything needed to build a trainer.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub suite: TaskSuite,
    pub tasks: TaskSet,
    pub agent: AgentConfig,
    pub tracker: TrackerConfig,
    pub meta: MetaConfig,
    pub method: Method,
    pub comparator: ComparatorSpec,
    /// Parameters used by the fixed baseline.
    pub baseline: TrackerParams,
    pub seed: u64,
}

/// Stateful training loop; one call to [`MetaTrainer::step_iteration`] is
/// one meta-iteration.
#[derive(Debug, Clone)]
pub struct MetaTrainer {
    pub setup: TrainSetup,
    pub agent: Agent,
    envs: Vec<TaskEnv>,
    buffers: Vec<ReplayBuffer>,
    rollout_rngs: Vec<ChaCha8Rng>,
    rng: ChaCha8Rng,
    pub iteration: usize,
    pub curve: LearningCurve,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

impl MetaTrainer {
    pub fn new(setup: TrainSetup) -> Result<Self> {
        setup.meta.validate()?;
        setup.agent.validate()?;
        setup.comparator.validate(setup.method)?;
        setup.baseline.validate()?;
        let mut init = stream_rng(setup.seed, 0);
        let agent = Agent::new(setup.agent.clone(), &mut init)?;
        let mut envs = Vec::new();
        let mut buffers = Vec::new();
        let mut rollout_rngs = Vec::new();
        for (i, room) in setup.tasks.train.iter().enumerate() {
            envs.push(TaskEnv::new(
                &setup.suite,
                room,
                setup.agent.obs,
                setup.tracker.clone(),
                0,
                setup.suite.episode_length,
            )?);
            buffers.push(ReplayBuffer::new(
                room.id.clone(),
                setup.meta.buffer_capacity,
            ));
            rollout_rngs.push(stream_rng(setup.seed, 2 + i as u64));
        }
        let curve = LearningCurve::new(setup.tasks.test.iter().map(|r| r.id.clone()).collect());
        Ok(Self {
            rng: stream_rng(setup.seed, 1),
            agent,
            envs,
            buffers,
            rollout_rngs,
            iteration: 0,
            curve,
            setup,
        })
    }

    pub fn buffers(&self) -> &[ReplayBuffer] {
        &self.buffers
    }

    pub fn finished(&self) -> bool {
        self.iteration >= self.setup.meta.meta_iterations
    }

    /// Held-out evaluation of the current policy.
    pub fn evaluate(&self) -> Result<EvalReport> {
        let s = &self.setup;
        let rooms = s.tasks.test_refs();
        match s.method {
            Method::FixedBaseline => evaluate_on(
                &FixedPolicy(s.baseline),
                &s.suite,
                &rooms,
                &s.meta.eval,
                &s.agent.obs,
                &s.tracker,
                EVAL_EPISODE_BASE,
            ),
            _ => evaluate_on(
                &self.agent,
                &s.suite,
                &rooms,
                &s.meta.eval,
                &s.agent.obs,
                &s.tracker,
                EVAL_EPISODE_BASE,
            ),
        }
    }

    fn rollout(&mut self, task: usize, agent: &Agent) -> Result<()> {
        for _ in 0..self.setup.meta.rollout_frames {
            let (a, s, step) =
                act_and_step(agent, &mut self.envs[task], &mut self.rollout_rngs[task])?;
            self.buffers[task].push(Transition {
                s,
                a,
                r: step.reward,
                s2: step.next,
                done: false,
            })?;
        }
        Ok(())
    }

    fn sample(&mut self, task: usize) -> Result<Option<Batch>> {
        let b = self.setup.agent.sac.batch;
        if self.buffers[task].len() < b {
            return Ok(None);
        }
        Ok(Some(
            self.buffers[task]
                .sample(b, &mut self.rng)?
                .with_reward_scale(self.setup.meta.reward_scale),
        ))
    }

    /// Runs one meta-iteration and, on schedule, appends an evaluation row.
    pub fn step_iteration(&mut self) -> Result<()> {
        match self.setup.method {
            Method::ContextPrior => self.joint_iteration()?,
            Method::Reptile => self.reptile_iteration()?,
            Method::Fomaml => self.fomaml_iteration()?,
            Method::FixedBaseline => {}
        }
        self.iteration += 1;
        if self.iteration % self.setup.meta.eval_every == 0 || self.finished() {
            let report = self.evaluate()?;
            self.curve.push(self.iteration, &report);
        }
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<&LearningCurve> {
        while !self.finished() {
            self.step_iteration()?;
        }
        Ok(&self.curve)
    }

    fn joint_iteration(&mut self) -> Result<()> {
        let agent = self.agent.clone();
        let mut batches = Vec::new();
        for t in 0..self.envs.len() {
            self.rollout(t, &agent)?;
            if let Some(b) = self.sample(t)? {
                batches.push(b);
            }
        }
        if batches.len() == self.envs.len() {
            let f = self.lr_factor();
            if f == 1.0 {
                meta_update(
                    &mut self.agent,
                    &batches,
                    &self.setup.tasks,
                    &mut self.rng,
                    &mut self.rollout_rngs,
                )?;
            } else {
                let mask = draw_mask(
                    self.agent.n_heads(),
                    self.agent.cfg.sac.mask_p,
                    &mut self.rng,
                );
                let g = summed_grads(
                    &self.agent,
                    &batches,
                    &self.setup.tasks,
                    &mask,
                    &mut self.rollout_rngs,
                )?;
                let (lc, la) = (self.agent.cfg.sac.lr_critic, self.agent.cfg.sac.lr_actor);
                self.agent.apply_grads_with(&g, lc * f, la * f)?;
            }
        }
        Ok(())
    }

    fn lr_factor(&self) -> f64 {
        let cfg = &self.setup.meta;
        let progress = self.iteration as f64 / cfg.meta_iterations.max(2).saturating_sub(1) as f64;
        1.0 - (1.0 - cfg.final_lr_fraction) * progress.min(1.0)
    }

    /// Copies the meta-agent and takes `inner_steps` updates on one task.
    fn adapt(&mut self, task: usize) -> Result<Option<Agent>> {
        let spec = self.setup.comparator;
        let mut inner = self.agent.clone();
        for _ in 0..spec.inner_steps {
            let Some(b) = self.sample(task)? else {
                return Ok(None);
            };
            let mask = draw_mask(inner.n_heads(), inner.cfg.sac.mask_p, &mut self.rng);
            let g = inner.compute_grads(&b, &mask, &mut self.rng)?;
            inner.apply_grads_with(&g, spec.inner_lr, spec.inner_lr)?;
        }
        Ok(Some(inner))
    }

    fn reptile_iteration(&mut self) -> Result<()> {
        let agent = self.agent.clone();
        let meta = agent.flat_params();
        let mut delta = nn::zeros_like(&meta);
        let n = self.envs.len();
        for t in 0..n {
            self.rollout(t, &agent)?;
            let Some(adapted) = self.adapt(t)? else {
                return Ok(());
            };
            for ((d, a), m) in delta.iter_mut().zip(adapted.flat_params()).zip(&meta) {
                *d += &(&a - m);
            }
        }
        let eps = self.setup.comparator.reptile_step;
        if eps == 0.0 {
            return Ok(());
        }
        let mut params = meta;
        for (p, d) in params.iter_mut().zip(&delta) {
            p.scaled_add(eps / n as f64, d);
        }
        if !nn::all_finite(&params) {
            return Err(Error::Numerical(
                "reptile step produced non-finite parameters".into(),
            ));
        }
        self.agent.set_flat_params(params)
    }

    fn fomaml_iteration(&mut self) -> Result<()> {
        let agent = self.agent.clone();
        let mask = draw_mask(agent.n_heads(), agent.cfg.sac.mask_p, &mut self.rng);
        let mut total: Option<AgentGrads> = None;
        for t in 0..self.envs.len() {
            self.rollout(t, &agent)?;
            let Some(adapted) = self.adapt(t)? else {
                return Ok(());
            };
            let Some(b) = self.sample(t)? else {
                return Ok(());
            };
            let g = adapted.compute_grads(&b, &mask, &mut self.rng)?;
            match total.as_mut() {
                Some(acc) => acc.add(&g),
                None => total = Some(g),
            }
        }
        let grads = total.ok_or_else(|| Error::InvalidConfig("no train tasks".into()))?;
        if !grads.is_finite() {
            return Err(Error::Numerical("non-finite outer gradient".into()));
        }
        let lr = self.setup.comparator.outer_lr;
        if lr == 0.0 {
            return Ok(());
        }
        self.agent.apply_grads_with(&grads, lr, lr)
    }

    /// Complete trainer state, enough to continue bit-identically.
    pub fn save(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.put_u64("trainer.iteration", self.iteration as u64);
        ck.put_u64("trainer.seed", self.setup.seed);
        self.agent.save(&mut ck, "agent");
        ck.put_rng("trainer.rng", &self.rng);
        for (i, env) in self.envs.iter().enumerate() {
            ck.put_u64(&format!("env{i}.episode"), env.episode());
            let h = env.history();
            ck.put_tensor(
                &format!("env{i}.history"),
                Array2::from_shape_fn((h.len(), 4), |(r, c)| h[r].as_array()[c]),
            );
            ck.put_rng(&format!("env{i}.rng"), &self.rollout_rngs[i]);
            self.buffers[i].save(&mut ck, &format!("buffer{i}"));
        }
        self.curve.save(&mut ck, "curve");
        ck
    }

    /// Rebuilds a trainer from `setup` and restores the saved state.
    pub fn load(setup: TrainSetup, ck: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(setup)?;
        if ck.u64("trainer.seed")? != t.setup.seed {
            return Err(Error::Checkpoint(
                "checkpoint was written with a different seed".into(),
            ));
        }
        t.iteration = ck.u64("trainer.iteration")? as usize;
        t.agent.load(ck, "agent")?;
        t.rng = ck.rng("trainer.rng")?;
        for i in 0..t.envs.len() {
            let h = ck.tensor(&format!("env{i}.history"))?;
            if h.nrows() > 0 && h.ncols() != 4 {
                return Err(Error::Checkpoint("bad history width".into()));
            }
            let history: Vec<TrackerParams> = h
                .rows()
                .into_iter()
                .map(|r| TrackerParams {
                    gate: r[0],
                    process_noise: r[1],
                    meas_noise: r[2],
                    cfar_scale: r[3],
                })
                .collect();
            t.envs[i].restore(ck.u64(&format!("env{i}.episode"))?, &history)?;
            t.rollout_rngs[i] = ck.rng(&format!("env{i}.rng"))?;
            let buf = ReplayBuffer::load(ck, &format!("buffer{i}"))?;
            if buf.task_id() != t.setup.tasks.train[i].id {
                return Err(Error::Checkpoint(
                    "buffer task does not match the configured train task".into(),
                ));
            }
            t.buffers[i] = buf;
        }
        t.curve = LearningCurve::load(ck, "curve")?;
        Ok(t)
    }
}

/// Candidate values of each tracker parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineGrid {
    pub gate: Vec<f64>,
    pub process_noise: Vec<f64>,
    pub meas_noise: Vec<f64>,
    pub cfar_scale: Vec<f64>,
}

impl Default for BaselineGrid {
    fn default() -> Self {
        Self {
            gate: vec![3.0, 9.0, 25.0],
            process_noise: vec![0.1, 1.0],
            meas_noise: vec![0.1, 1.0],
            cfar_scale: vec![4.0, 5.0, 6.0, 8.0],
        }
    }
}

impl BaselineGrid {
    pub fn points(&self) -> Vec<TrackerParams> {
        let mut out = Vec::new();
        for &gate in &self.gate {
            for &process_noise in &self.process_noise {
                for &meas_noise in &self.meas_noise {
                    for &cfar_scale in &self.cfar_scale {
                        out.push(TrackerParams {
                            gate,
                            process_noise,
                            meas_noise,
                            cfar_scale,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Exhaustive search for the highest-scoring point; ties go to the smaller
/// gate, then the smaller process noise.
pub fn tune_baseline<F>(grid: &BaselineGrid, mut score: F) -> Result<(TrackerParams, f64)>
where
    F: FnMut(&TrackerParams) -> Result<f64>,
{
    let mut best: Option<(TrackerParams, f64)> = None;
    for p in grid.points() {
        p.validate()?;
        let s = score(&p)?;
        let better = match &best {
            None => true,
            Some((b, bs)) => {
                s > *bs || (s == *bs && (p.gate, p.process_noise) < (b.gate, b.process_noise))
            }
        };
        if better {
            best = Some((p, s));
        }
    }
    best.ok_or_else(|| Error::InvalidConfig("baseline grid is empty".into()))
}

/// Grid search scored by mean unscaled reward on the train rooms.
pub fn tune_baseline_on(
    grid: &BaselineGrid,
    suite: &TaskSuite,
    tasks: &TaskSet,
    eval: &EvalConfig,
    obs: &crate::agent::ObsConfig,
    tracker: &TrackerConfig,
) -> Result<(TrackerParams, f64)> {
    let rooms = tasks.train_refs();
    tune_baseline(grid, |p| {
        Ok(evaluate_on(
            &FixedPolicy(*p),
            suite,
            &rooms,
            eval,
            obs,
            tracker,
            TUNE_EPISODE_BASE,
        )?
        .average)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub reward_scale: f64,
    pub best_reward: f64,
}

/// Peak evaluation reward per reward-scale factor.
pub fn ablate_reward_scale<F>(factors: &[f64], mut run: F) -> Result<Vec<AblationRow>>
where
    F: FnMut(f64) -> Result<LearningCurve>,
{
    if factors.is_empty() {
        return Err(Error::InvalidConfig("no reward-scale factors".into()));
    }
    factors
        .iter()
        .map(|&k| {
            let curve = run(k)?;
            let best_reward = curve
                .peak()
                .ok_or_else(|| Error::InvalidConfig("run produced no evaluation".into()))?;
            Ok(AblationRow {
                reward_scale: k,
                best_reward,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("reward_scale,best_reward\n");
    for r in rows {
        let _ = writeln!(s, "{},{}", r.reward_scale, r.best_reward);
    }
    s
}

#[cfg(test)]
mod tests;
