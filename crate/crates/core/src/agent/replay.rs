use ndarray::Array2;
use rand::seq::index;
use rand::Rng;

use super::{ContextPrior, Observation};
use crate::checkpoint::Checkpoint;
use crate::nn::Tensor;
use crate::tracker::ACTION_DIM;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Observation,
    /// Raw action in `[-1, 1]^4`.
    pub a: [f64; ACTION_DIM],
    pub r: f64,
    pub s2: Observation,
    pub done: bool,
}

impl Transition {
    pub fn validate(&self) -> Result<()> {
        let finite = self.r.is_finite()
            && self.a.iter().all(|v| v.is_finite() && v.abs() <= 1.0)
            && self.s.is_finite()
            && self.s2.is_finite();
        if finite {
            Ok(())
        } else {
            Err(Error::Numerical(
                "transition has non-finite entries or an out-of-range action".into(),
            ))
        }
    }
}

/// Fixed-capacity ring of transitions tagged with the task that produced
/// them.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    task_id: String,
    capacity: usize,
    data: Vec<Transition>,
    next: usize,
}

pub const DEFAULT_CAPACITY: usize = 50_000;

impl ReplayBuffer {
    pub fn new(task_id: impl Into<String>, capacity: usize) -> Self {
        Self {
            task_id: task_id.into(),
            capacity: capacity.max(1),
            data: Vec::new(),
            next: 0,
        }
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        t.validate()?;
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.data.get(i)
    }

    pub fn save(&self, ck: &mut Checkpoint, prefix: &str) {
        let items: Vec<&Transition> = self.data.iter().collect();
        let b = Batch::from_transitions(&items, &self.task_id);
        ck.put_bytes(
            &format!("{prefix}.task_id"),
            self.task_id.as_bytes().to_vec(),
        );
        ck.put_u64(&format!("{prefix}.capacity"), self.capacity as u64);
        ck.put_u64(&format!("{prefix}.next"), self.next as u64);
        ck.put_u64(
            &format!("{prefix}.obs_dim"),
            items.first().map_or(0, |t| t.s.features.len()) as u64,
        );
        for (name, t) in [
            ("s", b.s),
            ("prior", b.prior),
            ("a", b.a),
            ("r", b.r),
            ("s2", b.s2),
            ("prior2", b.prior2),
            ("done", b.done),
        ] {
            ck.put_tensor(&format!("{prefix}.{name}"), t);
        }
    }

    pub fn load(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let task_id = String::from_utf8(ck.bytes(&format!("{prefix}.task_id"))?.to_vec())
            .map_err(|_| Error::Checkpoint("task id is not utf-8".into()))?;
        let capacity = ck.u64(&format!("{prefix}.capacity"))? as usize;
        let next = ck.u64(&format!("{prefix}.next"))? as usize;
        let get = |name: &str| ck.tensor(&format!("{prefix}.{name}"));
        let (s, prior, a, r, s2, prior2, done) = (
            get("s")?,
            get("prior")?,
            get("a")?,
            get("r")?,
            get("s2")?,
            get("prior2")?,
            get("done")?,
        );
        let n = r.nrows();
        if [
            s.nrows(),
            prior.nrows(),
            a.nrows(),
            s2.nrows(),
            prior2.nrows(),
            done.nrows(),
        ]
        .iter()
        .any(|&k| k != n)
            || n > capacity
            || next >= capacity.max(1)
        {
            return Err(Error::Checkpoint(format!(
                "inconsistent replay buffer '{prefix}'"
            )));
        }
        let obs = |f: &Tensor, p: &Tensor, i: usize| Observation {
            features: f.row(i).to_vec(),
            prior: ContextPrior {
                mu: p[[i, 0]],
                sigma: p[[i, 1]],
            },
        };
        let data = (0..n)
            .map(|i| Transition {
                s: obs(s, prior, i),
                a: std::array::from_fn(|j| a[[i, j]]),
                r: r[[i, 0]],
                s2: obs(s2, prior2, i),
                done: done[[i, 0]] != 0.0,
            })
            .collect();
        Ok(Self {
            task_id,
            capacity,
            data,
            next,
        })
    }

    /// Uniform batch without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch> {
        if batch == 0 || self.data.len() < batch {
            return Err(Error::NotReady {
                have: self.data.len(),
                need: batch.max(1),
            });
        }
        let idx = index::sample(rng, self.data.len(), batch);
        let items: Vec<&Transition> = idx.iter().map(|i| &self.data[i]).collect();
        Ok(Batch::from_transitions(&items, &self.task_id))
    }
}

/// Column-stacked transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Provenance of every row.
    pub task_id: String,
    pub s: Tensor,
    /// `[b x 2]`: per-row `(mu_rai, sigma_rai)`.
    pub prior: Tensor,
    pub a: Tensor,
    pub r: Tensor,
    pub s2: Tensor,
    pub prior2: Tensor,
    pub done: Tensor,
}

fn stack_features(obs: &[&Observation]) -> Tensor {
    let d = obs.first().map_or(0, |o| o.features.len());
    Array2::from_shape_fn((obs.len(), d), |(i, j)| obs[i].features[j])
}

fn stack_priors(obs: &[&Observation]) -> Tensor {
    Array2::from_shape_fn((obs.len(), 2), |(i, j)| {
        if j == 0 {
            obs[i].prior.mu
        } else {
            obs[i].prior.sigma
        }
    })
}

impl Batch {
    pub fn from_transitions(items: &[&Transition], task_id: &str) -> Self {
        let s: Vec<&Observation> = items.iter().map(|t| &t.s).collect();
        let s2: Vec<&Observation> = items.iter().map(|t| &t.s2).collect();
        let n = items.len();
        Self {
            task_id: task_id.to_string(),
            s: stack_features(&s),
            prior: stack_priors(&s),
            a: Array2::from_shape_fn((n, ACTION_DIM), |(i, j)| items[i].a[j]),
            r: Array2::from_shape_fn((n, 1), |(i, _)| items[i].r),
            s2: stack_features(&s2),
            prior2: stack_priors(&s2),
            done: Array2::from_shape_fn((n, 1), |(i, _)| if items[i].done { 1.0 } else { 0.0 }),
        }
    }

    pub fn len(&self) -> usize {
        self.r.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rewards multiplied by `k`.
    pub fn with_reward_scale(mut self, k: f64) -> Self {
        self.r *= k;
        self
    }

    pub fn priors(&self) -> Vec<ContextPrior> {
        self.prior
            .rows()
            .into_iter()
            .map(|r| ContextPrior {
                mu: r[0],
                sigma: r[1],
            })
            .collect()
    }
}
