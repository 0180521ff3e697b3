//! Soft actor-critic with a bootstrapped multi-head critic and a Gaussian
//! context prior built from RAI intensity statistics.
//!
//! Both networks split into a base producing a `d`-wide embedding `x` and
//! heads reading `x + z`, where `z ~ N(mu_rai, sigma_rai)` componentwise.

mod replay;

pub use replay::{Batch, ReplayBuffer, Transition, DEFAULT_CAPACITY};

use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::nn::{
    self, squashed_gaussian, Activation, Adam, AdamConfig, Mlp, MlpSpec, MlpVars, Tape, Tensor, Var,
};
use crate::sim::{rai_stats, RaiFrame};
use crate::tracker::ACTION_DIM;
use crate::{Error, Result};

/// Per-frame RAI statistics parameterising the context prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextPrior {
    pub mu: f64,
    pub sigma: f64,
}

impl ContextPrior {
    /// Statistics of the union of equally sized frames.
    pub fn pooled(priors: &[ContextPrior]) -> ContextPrior {
        if priors.is_empty() {
            return ContextPrior {
                mu: 0.0,
                sigma: 0.0,
            };
        }
        let n = priors.len() as f64;
        let mu = priors.iter().map(|p| p.mu).sum::<f64>() / n;
        let second = priors
            .iter()
            .map(|p| p.sigma * p.sigma + p.mu * p.mu)
            .sum::<f64>()
            / n;
        ContextPrior {
            mu,
            sigma: (second - mu * mu).max(0.0).sqrt(),
        }
    }
}

pub fn compute_context_prior(frame: &RaiFrame) -> ContextPrior {
    let (mu, sigma) = rai_stats(frame);
    ContextPrior { mu, sigma }
}

/// `d` i.i.d. draws from `N(mu, sigma)`; exactly `mu` when `sigma = 0`.
pub fn sample_context<R: Rng + ?Sized>(prior: &ContextPrior, d: usize, rng: &mut R) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            prior.mu + prior.sigma * e
        })
        .collect()
}

fn context_tensor<R: Rng + ?Sized>(
    priors: &Tensor,
    d: usize,
    deterministic: bool,
    rng: &mut R,
) -> Tensor {
    let mut z = Array2::zeros((priors.nrows(), d));
    for (i, mut row) in z.rows_mut().into_iter().enumerate() {
        let prior = ContextPrior {
            mu: priors[[i, 0]],
            sigma: priors[[i, 1]],
        };
        if deterministic {
            row.fill(prior.mu);
        } else {
            for (dst, v) in row.iter_mut().zip(sample_context(&prior, d, rng)) {
                *dst = v;
            }
        }
    }
    z
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObsConfig {
    /// Side of the pooled RAI grid fed to the networks.
    pub pool: usize,
    pub pooling: Pooling,
    /// Standardize pooled values with the frame mean and std.
    pub standardize: bool,
    /// Multiplier applied to the pooled features.
    pub feature_scale: f64,
}

impl Default for ObsConfig {
    fn default() -> Self {
        Self {
            pool: 16,
            pooling: Pooling::Max,
            standardize: true,
            feature_scale: 1.0,
        }
    }
}

/// Network input: pooled RAI plus its raw statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<f64>,
    pub prior: ContextPrior,
}

impl Observation {
    pub fn from_frame(frame: &RaiFrame, cfg: &ObsConfig) -> Self {
        let pooled = match cfg.pooling {
            Pooling::Mean => frame.pooled(cfg.pool, cfg.pool),
            Pooling::Max => frame.max_pooled(cfg.pool, cfg.pool),
        };
        let prior = compute_context_prior(frame);
        let (shift, div) = if cfg.standardize && prior.sigma > 0.0 {
            (prior.mu, prior.sigma)
        } else {
            (0.0, 1.0)
        };
        let features = pooled
            .into_iter()
            .map(|v| (v - shift) / div * cfg.feature_scale)
            .collect();
        Self { features, prior }
    }

    pub fn is_finite(&self) -> bool {
        self.features.iter().all(|v| v.is_finite())
            && self.prior.mu.is_finite()
            && self.prior.sigma.is_finite()
    }

    fn row(&self) -> Tensor {
        Array2::from_shape_vec((1, self.features.len()), self.features.clone()).expect("row shape")
    }

    fn prior_row(&self) -> Tensor {
        Array2::from_shape_vec((1, 2), vec![self.prior.mu, self.prior.sigma]).expect("prior shape")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Hidden widths of both base networks.
    pub base_hidden: Vec<usize>,
    /// Embedding width `d`.
    pub embed: usize,
    /// Hidden widths of every head.
    pub head_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            base_hidden: vec![128],
            embed: 64,
            head_hidden: vec![32],
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub entropy_temp: f64,
    pub heads: usize,
    pub mask_p: f64,
    pub batch: usize,
    pub lr_critic: f64,
    pub lr_actor: f64,
    /// Add context samples to the embeddings; off gives plain SAC.
    pub context_prior: bool,
    /// Use one prior per batch instead of one per sample.
    pub context_per_batch: bool,
    pub adam: AdamConfig,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            entropy_temp: 0.2,
            heads: 10,
            mask_p: 0.5,
            batch: 256,
            lr_critic: 3e-4,
            lr_actor: 3e-4,
            context_prior: true,
            context_per_batch: false,
            adam: AdamConfig::default(),
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.heads < 2 {
            return bad("at least two critic heads are required");
        }
        if !(self.mask_p > 0.0 && self.mask_p <= 1.0) {
            return bad("mask_p must lie in (0, 1]");
        }
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if !(self.entropy_temp >= 0.0 && self.lr_critic >= 0.0 && self.lr_actor >= 0.0) {
            return bad("temperature and learning rates must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub obs: ObsConfig,
    pub net: NetConfig,
    pub sac: SacConfig,
}

impl AgentConfig {
    pub fn obs_dim(&self) -> usize {
        self.obs.pool * self.obs.pool
    }

    pub fn validate(&self) -> Result<()> {
        self.sac.validate()?;
        if self.obs.pool == 0 || self.net.embed == 0 {
            return Err(Error::InvalidConfig(
                "pool and embedding widths must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Q-values of one critic pass: a `[b x 1]` column per active head.
#[derive(Debug, Clone)]
pub struct CriticOutput {
    pub q: Vec<Option<Tensor>>,
    pub mask: Vec<bool>,
}

/// Bernoulli head mask, redrawn until at least one head is active.
pub fn draw_mask<R: Rng + ?Sized>(k: usize, p: f64, rng: &mut R) -> Vec<bool> {
    let dist = Bernoulli::new(p.clamp(0.0, 1.0)).expect("probability in range");
    loop {
        let m: Vec<bool> = (0..k).map(|_| dist.sample(rng)).collect();
        if m.iter().any(|&b| b) {
            return m;
        }
    }
}

/// Gradients of one task's losses.
#[derive(Debug, Clone)]
pub struct AgentGrads {
    /// Critic base gradient averaged over active heads.
    pub critic_base: Vec<Tensor>,
    pub heads: Vec<Option<Vec<Tensor>>>,
    /// Actor base parameters followed by actor head parameters.
    pub actor: Vec<Tensor>,
    pub critic_losses: Vec<Option<f64>>,
    pub actor_loss: f64,
}

impl AgentGrads {
    /// Accumulates `other` into `self` (task sum).
    pub fn add(&mut self, other: &AgentGrads) {
        nn::axpy(&mut self.critic_base, 1.0, &other.critic_base);
        for (a, b) in self.heads.iter_mut().zip(&other.heads) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => nn::axpy(a, 1.0, b),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
        nn::axpy(&mut self.actor, 1.0, &other.actor);
        for (a, b) in self.critic_losses.iter_mut().zip(&other.critic_losses) {
            if let Some(b) = b {
                *a = Some(a.unwrap_or(0.0) + b);
            }
        }
        self.actor_loss += other.actor_loss;
    }

    pub fn is_finite(&self) -> bool {
        nn::all_finite(&self.critic_base)
            && nn::all_finite(&self.actor)
            && self.heads.iter().flatten().all(|h| nn::all_finite(h))
            && self.actor_loss.is_finite()
    }

    pub fn mean_critic_loss(&self) -> f64 {
        let active: Vec<f64> = self.critic_losses.iter().flatten().copied().collect();
        active.iter().sum::<f64>() / active.len().max(1) as f64
    }
}

/// Raw critic-loss gradients: the base gradient is the plain sum over
/// active heads.
#[derive(Debug, Clone)]
pub struct CriticGrads {
    pub base_sum: Vec<Tensor>,
    pub heads: Vec<Option<Vec<Tensor>>>,
    pub losses: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub active_heads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Critic {
    Online,
    Target,
}

struct ActorVars {
    action: Var,
    log_prob: Var,
    base: MlpVars,
    head: MlpVars,
}

struct CriticVars {
    q: Vec<Option<Var>>,
    base: MlpVars,
    heads: Vec<Option<MlpVars>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub cfg: AgentConfig,
    actor_base: Mlp,
    actor_head: Mlp,
    critic_base: Mlp,
    heads: Vec<Mlp>,
    target_base: Mlp,
    target_heads: Vec<Mlp>,
    opt_actor: Adam,
    opt_base: Adam,
    opt_heads: Vec<Adam>,
    pub updates: u64,
    pub head_updates: Vec<u64>,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(cfg: AgentConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let net = &cfg.net;
        let d = net.embed;
        let obs_dim = cfg.obs_dim();
        let widths = |input: usize, hidden: &[usize], out: usize| {
            let mut w = vec![input];
            w.extend_from_slice(hidden);
            w.push(out);
            MlpSpec::new(&w, net.activation)
        };
        let actor_base = Mlp::new(widths(obs_dim, &net.base_hidden, d), rng)?;
        let actor_head = Mlp::new(widths(d, &net.head_hidden, 2 * ACTION_DIM), rng)?;
        let critic_base = Mlp::new(widths(obs_dim + ACTION_DIM, &net.base_hidden, d), rng)?;
        let heads = (0..cfg.sac.heads)
            .map(|_| Mlp::new(widths(d, &net.head_hidden, 1), rng))
            .collect::<Result<Vec<_>>>()?;
        let mut actor_params = actor_base.params().to_vec();
        actor_params.extend_from_slice(actor_head.params());
        let adam = cfg.sac.adam;
        Ok(Self {
            opt_actor: Adam::new(&actor_params, adam),
            opt_base: Adam::new(critic_base.params(), adam),
            opt_heads: heads.iter().map(|h| Adam::new(h.params(), adam)).collect(),
            target_base: critic_base.clone(),
            target_heads: heads.clone(),
            head_updates: vec![0; heads.len()],
            actor_base,
            actor_head,
            critic_base,
            heads,
            updates: 0,
            cfg,
        })
    }

    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn embed(&self) -> usize {
        self.cfg.net.embed
    }

    pub fn actor_nets(&self) -> [&Mlp; 2] {
        [&self.actor_base, &self.actor_head]
    }

    pub fn critic_base(&self) -> &Mlp {
        &self.critic_base
    }

    pub fn head(&self, i: usize) -> &Mlp {
        &self.heads[i]
    }

    pub fn target_head(&self, i: usize) -> &Mlp {
        &self.target_heads[i]
    }

    pub fn target_base(&self) -> &Mlp {
        &self.target_base
    }

    /// Every network in a fixed order: actor base, actor head, critic base,
    /// critic heads, target base, target heads.
    pub fn nets(&self) -> Vec<&Mlp> {
        let mut v = vec![&self.actor_base, &self.actor_head, &self.critic_base];
        v.extend(self.heads.iter());
        v.push(&self.target_base);
        v.extend(self.target_heads.iter());
        v
    }

    pub fn nets_mut(&mut self) -> Vec<&mut Mlp> {
        let mut v = vec![
            &mut self.actor_base,
            &mut self.actor_head,
            &mut self.critic_base,
        ];
        v.extend(self.heads.iter_mut());
        v.push(&mut self.target_base);
        v.extend(self.target_heads.iter_mut());
        v
    }

    /// Flattened copy of every parameter, in [`Agent::nets`] order.
    pub fn flat_params(&self) -> Vec<Tensor> {
        self.nets()
            .into_iter()
            .flat_map(|n| n.params().to_vec())
            .collect()
    }

    pub fn set_flat_params(&mut self, mut params: Vec<Tensor>) -> Result<()> {
        for net in self.nets_mut() {
            let rest = params.split_off(net.params().len().min(params.len()));
            net.set_params(params)?;
            params = rest;
        }
        if params.is_empty() {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("too many parameter tensors".into()))
        }
    }

    fn batch_priors(&self, priors: &Tensor) -> Tensor {
        if !self.cfg.sac.context_per_batch {
            return priors.clone();
        }
        let list: Vec<ContextPrior> = priors
            .rows()
            .into_iter()
            .map(|r| ContextPrior {
                mu: r[0],
                sigma: r[1],
            })
            .collect();
        let p = ContextPrior::pooled(&list);
        Array2::from_shape_fn(priors.dim(), |(_, j)| if j == 0 { p.mu } else { p.sigma })
    }

    fn context<R: Rng + ?Sized>(
        &self,
        priors: &Tensor,
        deterministic: bool,
        rng: &mut R,
    ) -> Tensor {
        if self.cfg.sac.context_prior {
            context_tensor(priors, self.embed(), deterministic, rng)
        } else {
            Array2::zeros((priors.nrows(), self.embed()))
        }
    }

    fn record_actor<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        s: Var,
        priors: &Tensor,
        deterministic: bool,
        rng: &mut R,
    ) -> Result<ActorVars> {
        let base = self.actor_base.record(tape, s)?;
        let z = tape.leaf(self.context(priors, deterministic, rng));
        let h = tape.add(base.out, z);
        let head = self.actor_head.record(tape, h)?;
        let mean = tape.slice(head.out, 0, ACTION_DIM);
        let log_std = tape.slice(head.out, ACTION_DIM, 2 * ACTION_DIM);
        let (action, log_prob) = if deterministic {
            squashed_gaussian(tape, mean, log_std, None)
        } else {
            let rows = tape.shape(mean).0;
            let noise =
                Array2::from_shape_simple_fn((rows, ACTION_DIM), || StandardNormal.sample(rng));
            squashed_gaussian(tape, mean, log_std, Some(&noise))
        };
        Ok(ActorVars {
            action,
            log_prob,
            base,
            head,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn record_critic<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        which: Critic,
        s: Var,
        a: Var,
        priors: &Tensor,
        mask: &[bool],
        rng: &mut R,
    ) -> Result<CriticVars> {
        let (base_net, head_nets) = match which {
            Critic::Online => (&self.critic_base, &self.heads),
            Critic::Target => (&self.target_base, &self.target_heads),
        };
        let sa = tape.concat(&[s, a]);
        let base = base_net.record(tape, sa)?;
        let mut q = Vec::with_capacity(head_nets.len());
        let mut heads = Vec::with_capacity(head_nets.len());
        for (net, &active) in head_nets.iter().zip(mask) {
            if !active {
                q.push(None);
                heads.push(None);
                continue;
            }
            let z = tape.leaf(self.context(priors, false, rng));
            let h = tape.add(base.out, z);
            let vars = net.record(tape, h)?;
            q.push(Some(vars.out));
            heads.push(Some(vars));
        }
        Ok(CriticVars { q, base, heads })
    }

    fn check_mask(&self, mask: &[bool]) -> Result<()> {
        if mask.len() != self.n_heads() || !mask.iter().any(|&m| m) {
            return Err(Error::InvalidConfig(format!(
                "mask must have {} entries with one active",
                self.n_heads()
            )));
        }
        Ok(())
    }

    /// Actions `[b x 4]` and log-probabilities `[b x 1]`.
    pub fn actor_forward<R: Rng + ?Sized>(
        &self,
        s: &Tensor,
        priors: &Tensor,
        deterministic: bool,
        rng: &mut R,
    ) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let sv = tape.leaf(s.clone());
        let priors = self.batch_priors(priors);
        let v = self.record_actor(&mut tape, sv, &priors, deterministic, rng)?;
        Ok((tape.value(v.action).clone(), tape.value(v.log_prob).clone()))
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        deterministic: bool,
        rng: &mut R,
    ) -> Result<[f64; ACTION_DIM]> {
        let (a, _) = self.actor_forward(&obs.row(), &obs.prior_row(), deterministic, rng)?;
        let mut out = [0.0; ACTION_DIM];
        for (o, v) in out.iter_mut().zip(a.iter()) {
            *o = *v;
        }
        Ok(out)
    }

    pub fn critic_forward<R: Rng + ?Sized>(
        &self,
        s: &Tensor,
        a: &Tensor,
        priors: &Tensor,
        mask: &[bool],
        rng: &mut R,
    ) -> Result<CriticOutput> {
        self.check_mask(mask)?;
        let mut tape = Tape::new();
        let sv = tape.leaf(s.clone());
        let av = tape.leaf(a.clone());
        let priors = self.batch_priors(priors);
        let v = self.record_critic(&mut tape, Critic::Online, sv, av, &priors, mask, rng)?;
        Ok(CriticOutput {
            q: v.q
                .iter()
                .map(|q| q.map(|q| tape.value(q).clone()))
                .collect(),
            mask: mask.to_vec(),
        })
    }

    /// Every head's value at the deterministic action, `draws` fresh
    /// context samples per head.
    pub fn head_values<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        draws: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let a = self.act(obs, true, rng)?;
        let s = obs.row();
        let a = Array2::from_shape_vec((1, ACTION_DIM), a.to_vec()).expect("action row");
        let x = self
            .critic_base
            .predict(&concatenate(Axis(1), &[s.view(), a.view()]).expect("row concat"))?;
        let mut out = Vec::with_capacity(self.n_heads() * draws);
        for head in &self.heads {
            for _ in 0..draws.max(1) {
                let h = &x + &self.context(&obs.prior_row(), false, rng);
                out.push(head.predict(&h)?[[0, 0]]);
            }
        }
        Ok(out)
    }

    /// Per-head TD targets `r + gamma (1 - done) (Qbar_i(s', a') - alpha log pi(a'|s'))`.
    pub fn critic_targets<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        mask: &[bool],
        rng: &mut R,
    ) -> Result<Vec<Option<Tensor>>> {
        self.check_mask(mask)?;
        let sac = &self.cfg.sac;
        let priors2 = self.batch_priors(&batch.prior2);
        let mut tape = Tape::new();
        let s2 = tape.leaf(batch.s2.clone());
        let actor = self.record_actor(&mut tape, s2, &priors2, false, rng)?;
        let critic = self.record_critic(
            &mut tape,
            Critic::Target,
            s2,
            actor.action,
            &priors2,
            mask,
            rng,
        )?;
        let log_prob = tape.value(actor.log_prob);
        let cont = batch.done.mapv(|d| sac.gamma * (1.0 - d));
        Ok(critic
            .q
            .iter()
            .map(|q| {
                q.map(|q| {
                    let soft = tape.value(q) - &(log_prob * sac.entropy_temp);
                    &batch.r + &(&cont * &soft)
                })
            })
            .collect())
    }

    /// Mean squared TD error per active head and its raw gradients.
    pub fn critic_loss<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        targets: &[Option<Tensor>],
        mask: &[bool],
        rng: &mut R,
    ) -> Result<CriticGrads> {
        self.check_mask(mask)?;
        let priors = self.batch_priors(&batch.prior);
        let mut tape = Tape::new();
        let s = tape.leaf(batch.s.clone());
        let a = tape.leaf(batch.a.clone());
        let critic = self.record_critic(&mut tape, Critic::Online, s, a, &priors, mask, rng)?;
        let mut losses = vec![None; self.n_heads()];
        let mut total: Option<Var> = None;
        for (i, q) in critic.q.iter().enumerate() {
            let Some(q) = *q else { continue };
            let y = targets
                .get(i)
                .and_then(|t| t.clone())
                .ok_or_else(|| Error::InvalidConfig(format!("no target for active head {i}")))?;
            let y = tape.leaf(y);
            let diff = tape.sub(q, y);
            let sq = tape.square(diff);
            let j = tape.mean_all(sq);
            losses[i] = Some(tape.scalar(j));
            total = Some(match total {
                Some(t) => tape.add(t, j),
                None => j,
            });
        }
        let total = total.expect("mask has an active head");
        let g = tape.backward(total, Array2::ones((1, 1)));
        Ok(CriticGrads {
            base_sum: critic.base.grads(&g, &self.critic_base),
            heads: critic
                .heads
                .iter()
                .zip(&self.heads)
                .map(|(v, net)| v.as_ref().map(|v| v.grads(&g, net)))
                .collect(),
            losses,
        })
    }

    /// Reparameterised actor loss `mean(alpha log pi(a|s) - Qhat(s, a))`
    /// with `Qhat` the mean over active heads; returns the loss and the
    /// actor parameter gradients.
    pub fn actor_loss<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        mask: &[bool],
        rng: &mut R,
    ) -> Result<(f64, Vec<Tensor>)> {
        self.check_mask(mask)?;
        let priors = self.batch_priors(&batch.prior);
        let mut tape = Tape::new();
        let s = tape.leaf(batch.s.clone());
        let actor = self.record_actor(&mut tape, s, &priors, false, rng)?;
        let critic = self.record_critic(
            &mut tape,
            Critic::Online,
            s,
            actor.action,
            &priors,
            mask,
            rng,
        )?;
        let active: Vec<Var> = critic.q.iter().flatten().copied().collect();
        let mut qsum = active[0];
        for &q in &active[1..] {
            qsum = tape.add(qsum, q);
        }
        let qhat = tape.scale(qsum, 1.0 / active.len() as f64);
        let ent = tape.scale(actor.log_prob, self.cfg.sac.entropy_temp);
        let diff = tape.sub(ent, qhat);
        let loss = tape.mean_all(diff);
        let g = tape.backward(loss, Array2::ones((1, 1)));
        let mut grads = actor.base.grads(&g, &self.actor_base);
        grads.extend(actor.head.grads(&g, &self.actor_head));
        Ok((tape.scalar(loss), grads))
    }

    /// Critic and actor gradients of one batch under `mask`, all taken at
    /// the current parameters.
    pub fn compute_grads<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        mask: &[bool],
        rng: &mut R,
    ) -> Result<AgentGrads> {
        let targets = self.critic_targets(batch, mask, rng)?;
        let critic = self.critic_loss(batch, &targets, mask, rng)?;
        let (actor_loss, actor) = self.actor_loss(batch, mask, rng)?;
        let n_active = mask.iter().filter(|&&m| m).count() as f64;
        let mut base = critic.base_sum;
        for t in &mut base {
            *t /= n_active;
        }
        Ok(AgentGrads {
            critic_base: base,
            heads: critic.heads,
            actor,
            critic_losses: critic.losses,
            actor_loss,
        })
    }

    /// Applies gradients with the configured learning rates, then moves the
    /// target networks.
    pub fn apply_grads(&mut self, grads: &AgentGrads) -> Result<()> {
        let (lc, la) = (self.cfg.sac.lr_critic, self.cfg.sac.lr_actor);
        self.apply_grads_with(grads, lc, la)
    }

    pub fn apply_grads_with(
        &mut self,
        grads: &AgentGrads,
        lr_critic: f64,
        lr_actor: f64,
    ) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        self.opt_base
            .step(self.critic_base.params_mut(), &grads.critic_base, lr_critic)?;
        for (i, g) in grads.heads.iter().enumerate() {
            if let Some(g) = g {
                self.opt_heads[i].step(self.heads[i].params_mut(), g, lr_critic)?;
                self.head_updates[i] += 1;
            }
        }
        let n_base = self.actor_base.params().len();
        let mut actor_params = self.actor_base.params().to_vec();
        actor_params.extend_from_slice(self.actor_head.params());
        self.opt_actor
            .step(&mut actor_params, &grads.actor, lr_actor)?;
        let head_params = actor_params.split_off(n_base);
        self.actor_base.set_params(actor_params)?;
        self.actor_head.set_params(head_params)?;

        let tau = self.cfg.sac.tau;
        nn::polyak(
            self.target_base.params_mut(),
            self.critic_base.params(),
            tau,
        );
        for (t, h) in self.target_heads.iter_mut().zip(&self.heads) {
            nn::polyak(t.params_mut(), h.params(), tau);
        }
        self.updates += 1;
        if !self.nets().iter().all(|n| nn::all_finite(n.params())) {
            return Err(Error::Numerical(
                "update produced non-finite parameters".into(),
            ));
        }
        Ok(())
    }

    /// One SAC update: draw a head mask, compute losses, step optimisers and
    /// targets.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Err(Error::NotReady {
                have: 0,
                need: self.cfg.sac.batch,
            });
        }
        let mask = draw_mask(self.n_heads(), self.cfg.sac.mask_p, rng);
        let grads = self.compute_grads(batch, &mask, rng)?;
        self.apply_grads(&grads)?;
        Ok(UpdateStats {
            critic_loss: grads.mean_critic_loss(),
            actor_loss: grads.actor_loss,
            active_heads: mask.iter().filter(|&&m| m).count(),
        })
    }

    pub fn save(&self, ck: &mut Checkpoint, prefix: &str) {
        self.actor_base.save(ck, &format!("{prefix}.actor_base"));
        self.actor_head.save(ck, &format!("{prefix}.actor_head"));
        self.critic_base.save(ck, &format!("{prefix}.critic_base"));
        self.target_base.save(ck, &format!("{prefix}.target_base"));
        for i in 0..self.n_heads() {
            self.heads[i].save(ck, &format!("{prefix}.head{i}"));
            self.target_heads[i].save(ck, &format!("{prefix}.target_head{i}"));
            self.opt_heads[i].save(ck, &format!("{prefix}.opt_head{i}"));
            ck.put_u64(&format!("{prefix}.head_updates{i}"), self.head_updates[i]);
        }
        self.opt_actor.save(ck, &format!("{prefix}.opt_actor"));
        self.opt_base.save(ck, &format!("{prefix}.opt_base"));
        ck.put_u64(&format!("{prefix}.updates"), self.updates);
    }

    /// Restores state saved by [`Agent::save`] into an agent built with the
    /// same configuration.
    pub fn load(&mut self, ck: &Checkpoint, prefix: &str) -> Result<()> {
        self.actor_base.load(ck, &format!("{prefix}.actor_base"))?;
        self.actor_head.load(ck, &format!("{prefix}.actor_head"))?;
        self.critic_base
            .load(ck, &format!("{prefix}.critic_base"))?;
        self.target_base
            .load(ck, &format!("{prefix}.target_base"))?;
        for i in 0..self.n_heads() {
            self.heads[i].load(ck, &format!("{prefix}.head{i}"))?;
            self.target_heads[i].load(ck, &format!("{prefix}.target_head{i}"))?;
            self.opt_heads[i].load(ck, &format!("{prefix}.opt_head{i}"))?;
            self.head_updates[i] = ck.u64(&format!("{prefix}.head_updates{i}"))?;
        }
        self.opt_actor.load(ck, &format!("{prefix}.opt_actor"))?;
        self.opt_base.load(ck, &format!("{prefix}.opt_base"))?;
        self.updates = ck.u64(&format!("{prefix}.updates"))?;
        Ok(())
    }
}


/// One-step environment with constant state and reward `-(a_1 - target)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSanity {
    pub target: f64,
    pub tolerance: f64,
    pub max_updates: usize,
    pub check_every: usize,
    /// Consecutive in-tolerance checks required.
    pub hold: usize,
}

impl Default for QuadraticSanity {
    fn default() -> Self {
        Self {
            target: 0.5,
            tolerance: 0.05,
            max_updates: 20_000,
            check_every: 100,
            hold: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SanityOutcome {
    /// Updates until the action settled, if it did.
    pub converged_at: Option<usize>,
    pub final_action: f64,
}

impl QuadraticSanity {
    pub fn run<R: Rng + ?Sized>(&self, agent: &mut Agent, rng: &mut R) -> Result<SanityOutcome> {
        let obs = Observation {
            features: vec![0.5; agent.cfg.obs_dim()],
            prior: ContextPrior {
                mu: 0.1,
                sigma: 0.05,
            },
        };
        let mut buffer = ReplayBuffer::new("sanity", DEFAULT_CAPACITY);
        let batch = agent.cfg.sac.batch;
        let mut streak = 0;
        let mut first_hold = None;
        let mut action = agent.act(&obs, true, rng)?[0];
        for step in 1..=self.max_updates + batch {
            let a = agent.act(&obs, false, rng)?;
            let r = -(a[0] - self.target).powi(2);
            buffer.push(Transition {
                s: obs.clone(),
                a,
                r,
                s2: obs.clone(),
                done: true,
            })?;
            if buffer.len() < batch {
                continue;
            }
            let b = buffer.sample(batch, rng)?;
            agent.update(&b, rng)?;
            let updates = step + 1 - batch;
            if updates % self.check_every == 0 {
                action = agent.act(&obs, true, rng)?[0];
                if (action - self.target).abs() <= self.tolerance {
                    streak += 1;
                    if streak == 1 {
                        first_hold = Some(updates);
                    }
                    if streak >= self.hold {
                        return Ok(SanityOutcome {
                            converged_at: first_hold,
                            final_action: action,
                        });
                    }
                } else {
                    streak = 0;
                }
            }
        }
        Ok(SanityOutcome {
            converged_at: None,
            final_action: action,
        })
    }
}

/// Small networks suited to [`QuadraticSanity`].
pub fn sanity_config() -> AgentConfig {
    AgentConfig {
        obs: ObsConfig {
            pool: 4,
            ..ObsConfig::default()
        },
        net: NetConfig {
            base_hidden: vec![32],
            embed: 16,
            head_hidden: vec![16],
            activation: Activation::Tanh,
        },
        sac: SacConfig {
            batch: 64,
            ..SacConfig::default()
        },
    }
}
