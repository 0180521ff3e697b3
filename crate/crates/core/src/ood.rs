//! Ensemble-dispersion out-of-distribution scoring.
//!
//! Each scene is scored by `c = mu_head + alpha * sigma_head`, the mean and
//! population standard deviation of the critic heads' values at the
//! deterministic action. A scene is flagged when `c` falls below a cutoff
//! calibrated as a lower quantile of in-distribution scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, ObsConfig, Observation};
use crate::sim::{RoomSpec, Scene, TaskSuite};
use crate::{Error, Result};

/// Scenes with more targets than this are out of distribution.
pub const CAPACITY: usize = 3;
pub const MIN_CALIBRATION: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OodConfig {
    pub alpha: f64,
    pub quantile: f64,
    /// Context samples per head.
    pub context_draws: usize,
}

impl Default for OodConfig {
    fn default() -> Self {
        Self {
            alpha: 0.17,
            quantile: 0.05,
            context_draws: 1,
        }
    }
}

impl OodConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "quantile must lie in (0, 1), got {}",
                self.quantile
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if self.context_draws == 0 {
            return Err(Error::InvalidConfig(
                "context_draws must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadStats {
    pub mu: f64,
    pub sigma: f64,
}

impl HeadStats {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mu = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        Self {
            mu,
            sigma: var.sqrt(),
        }
    }

    pub fn score(&self, alpha: f64) -> f64 {
        ood_score(self.mu, self.sigma, alpha)
    }
}

pub fn head_stats<R: Rng + ?Sized>(
    agent: &Agent,
    obs: &Observation,
    cfg: &OodConfig,
    rng: &mut R,
) -> Result<HeadStats> {
    Ok(HeadStats::of(&agent.head_values(
        obs,
        cfg.context_draws,
        rng,
    )?))
}

pub fn ood_score(mu_head: f64, sigma_head: f64, alpha: f64) -> f64 {
    mu_head + alpha * sigma_head
}

/// Lower `q`-quantile of in-distribution scores, linearly interpolated.
pub fn calibrate(id_scores: &[f64], q: f64) -> Result<f64> {
    if id_scores.len() < MIN_CALIBRATION {
        return Err(Error::InvalidConfig(format!(
            "calibration needs at least {MIN_CALIBRATION} scores, got {}",
            id_scores.len()
        )));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidConfig(format!(
            "quantile must lie in [0, 1], got {q}"
        )));
    }
    let mut s = id_scores.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(s[lo] + (pos - lo as f64) * (s[hi] - s[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    InDistribution,
    Ood,
}

impl Flag {
    pub fn is_ood(self) -> bool {
        self == Flag::Ood
    }

    pub fn name(self) -> &'static str {
        match self {
            Flag::InDistribution => "id",
            Flag::Ood => "ood",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OodResult {
    pub score: f64,
    pub cutoff: f64,
    pub flag: Flag,
}

pub fn classify(c: f64, cutoff: f64) -> Flag {
    if c < cutoff {
        Flag::Ood
    } else {
        Flag::InDistribution
    }
}

pub fn judge(stats: &HeadStats, alpha: f64, cutoff: f64) -> OodResult {
    let score = stats.score(alpha);
    OodResult {
        score,
        cutoff,
        flag: classify(score, cutoff),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Positive means out of distribution. Precision is 0 when nothing is
/// predicted positive.
pub fn f1(preds: &[bool], labels: &[bool]) -> Result<F1Report> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidConfig(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(F1Report {
        precision,
        recall,
        f1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub best_alpha: f64,
    pub best: F1Report,
    pub curve: Vec<(f64, F1Report)>,
}

/// For every `alpha`, recalibrates the cutoff on `calibration` scenes,
/// classifies `scenes` and scores against `labels`. Ties go to the earlier
/// grid point.
pub fn sweep_alpha(
    calibration: &[HeadStats],
    scenes: &[HeadStats],
    labels: &[bool],
    alphas: &[f64],
    q: f64,
) -> Result<SweepResult> {
    if alphas.is_empty() {
        return Err(Error::InvalidConfig("alpha grid is empty".into()));
    }
    if !labels.iter().any(|&l| l) {
        return Err(Error::InvalidConfig(
            "at least one out-of-distribution label is required".into(),
        ));
    }
    let mut curve = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let ids: Vec<f64> = calibration.iter().map(|s| s.score(alpha)).collect();
        let cutoff = calibrate(&ids, q)?;
        let preds: Vec<bool> = scenes
            .iter()
            .map(|s| classify(s.score(alpha), cutoff).is_ood())
            .collect();
        curve.push((alpha, f1(&preds, labels)?));
    }
    let (best_alpha, best) =
        curve.iter().fold(
            curve[0],
            |acc, &(a, r)| if r.f1 > acc.1.f1 { (a, r) } else { acc },
        );
    Ok(SweepResult {
        best_alpha,
        best,
        curve,
    })
}

/// One scored frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredScene {
    pub room: String,
    pub n_targets: usize,
    pub stats: HeadStats,
}

impl ScoredScene {
    pub fn is_ood(&self) -> bool {
        self.n_targets > CAPACITY
    }
}

/// Scores `frames` consecutive frames per target count in each room, taken
/// from the room's episodes with that count starting at `episode_base`.
#[allow(clippy::too_many_arguments)]
pub fn score_scenes<R: Rng + ?Sized>(
    agent: &Agent,
    suite: &TaskSuite,
    rooms: &[&RoomSpec],
    counts: &[usize],
    frames: usize,
    episode_base: u64,
    obs_cfg: &ObsConfig,
    cfg: &OodConfig,
    rng: &mut R,
) -> Result<Vec<ScoredScene>> {
    cfg.validate()?;
    let [lo, hi] = suite.target_counts;
    let mut out = Vec::new();
    for room in rooms {
        for &n in counts {
            if n < lo || n > hi {
                return Err(Error::InvalidConfig(format!(
                    "target count {n} is outside the suite range {lo}..={hi}"
                )));
            }
            let mut taken = 0;
            let mut index = episode_base;
            while taken < frames {
                if suite.episode_count(room, index) == n {
                    let task = suite.spawn_episode(room, index)?;
                    let mut scene = Scene::new(&task, &suite.radar, &suite.scene)?;
                    for _ in 0..suite.episode_length.min(frames - taken) {
                        let (_, frame) = scene.next_frame()?;
                        let obs = Observation::from_frame(&frame, obs_cfg);
                        out.push(ScoredScene {
                            room: room.id.clone(),
                            n_targets: n,
                            stats: head_stats(agent, &obs, cfg, rng)?,
                        });
                        taken += 1;
                    }
                }
                index += 1;
            }
        }
    }
    Ok(out)
}

/// Mean head dispersion per target count.
pub fn mean_sigma_by_count(scenes: &[ScoredScene]) -> BTreeMap<usize, f64> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for s in scenes {
        let e = acc.entry(s.n_targets).or_default();
        e.0 += s.stats.sigma;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(n, (sum, k))| (n, sum / k as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OodEvalReport {
    pub alpha: f64,
    pub cutoff: f64,
    pub report: F1Report,
    /// Shared bin edges of the score histograms.
    pub edges: Vec<f64>,
    pub histograms: BTreeMap<usize, Vec<usize>>,
}

/// Calibrates on `calibration` at `alpha`, classifies `scenes` and bins their
/// scores per target count.
pub fn evaluate_ood(
    calibration: &[ScoredScene],
    scenes: &[ScoredScene],
    alpha: f64,
    q: f64,
    bins: usize,
) -> Result<OodEvalReport> {
    if bins == 0 {
        return Err(Error::InvalidConfig(
            "histograms need at least one bin".into(),
        ));
    }
    let ids: Vec<f64> = calibration
        .iter()
        .filter(|s| !s.is_ood())
        .map(|s| s.stats.score(alpha))
        .collect();
    let cutoff = calibrate(&ids, q)?;
    let scores: Vec<f64> = scenes.iter().map(|s| s.stats.score(alpha)).collect();
    let preds: Vec<bool> = scores
        .iter()
        .map(|&c| classify(c, cutoff).is_ood())
        .collect();
    let labels: Vec<bool> = scenes.iter().map(ScoredScene::is_ood).collect();
    let report = f1(&preds, &labels)?;
    let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut histograms: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (s, &c) in scenes.iter().zip(&scores) {
        let bin = (((c - lo) / width) as usize).min(bins - 1);
        histograms
            .entry(s.n_targets)
            .or_insert_with(|| vec![0; bins])[bin] += 1;
    }
    Ok(OodEvalReport {
        alpha,
        cutoff,
        report,
        edges,
        histograms,
    })
}

/// Per-scene dump with columns `frame,n_targets,mu_head,sigma_head,c,flag`.
pub fn score_csv(scenes: &[ScoredScene], alpha: f64, cutoff: f64) -> String {
    let mut out = String::from("frame,n_targets,mu_head,sigma_head,c,flag\n");
    for (i, s) in scenes.iter().enumerate() {
        let r = judge(&s.stats, alpha, cutoff);
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{}",
            s.n_targets,
            s.stats.mu,
            s.stats.sigma,
            r.score,
            r.flag.name()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn head_stats_of_three_values() {
        let s = HeadStats::of(&[1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(s.mu, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.sigma, (2.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_eq!(HeadStats::of(&[4.0; 5]).sigma, 0.0);
    }

    #[test]
    fn score_examples() {
        assert_abs_diff_eq!(ood_score(-2.0, 0.5, 0.17), -1.915, epsilon = 1e-12);
        assert_eq!(ood_score(-1.3, 0.8, 0.0), -1.3);
        assert_eq!(ood_score(-1.3, 0.0, 4.0), -1.3);
    }

    #[test]
    fn calibration_quantiles() {
        let hundred: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(calibrate(&hundred, 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(calibrate(&hundred, 1e-9).unwrap(), 1.0, epsilon = 1e-6);
        assert_eq!(calibrate(&[-0.7; 20], 0.05).unwrap(), -0.7);
        let mut four: Vec<f64> = Vec::new();
        for _ in 0..5 {
            four.extend([1.0, 2.0, 3.0, 4.0]);
        }
        assert_abs_diff_eq!(calibrate(&four, 0.5).unwrap(), 2.5, epsilon = 1e-12);
        assert!(calibrate(&[1.0; 19], 0.05).is_err());
    }

    #[test]
    fn classification_boundary_is_strict() {
        assert_eq!(classify(-1.0, -1.0), Flag::InDistribution);
        assert_eq!(classify(-2.0, -1.0), Flag::Ood);
        assert_eq!(classify(0.0, -1.0), Flag::InDistribution);
    }

    #[test]
    fn f1_examples() {
        let r = f1(
            &[true, true, true, false, false],
            &[true, true, false, true, false],
        )
        .unwrap();
        assert_abs_diff_eq!(r.precision, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.recall, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.f1, 2.0 / 3.0, epsilon = 1e-12);
        let all = f1(&[true, false], &[true, false]).unwrap();
        assert_eq!((all.precision, all.recall, all.f1), (1.0, 1.0, 1.0));
        let none = f1(&[false, false], &[true, false]).unwrap();
        assert_eq!((none.precision, none.f1), (0.0, 0.0));
        assert!(f1(&[true], &[true, false]).is_err());
    }

    fn stats(mu: f64) -> HeadStats {
        HeadStats { mu, sigma: 0.1 }
    }

    #[test]
    fn sweep_single_alpha_and_separable_case() {
        let calib: Vec<HeadStats> = (0..30).map(|i| stats(-1.0 + 0.01 * i as f64)).collect();
        let mut scenes: Vec<HeadStats> = (0..10).map(|i| stats(-0.9 + 0.01 * i as f64)).collect();
        scenes.extend((0..5).map(|i| stats(-3.0 - i as f64)));
        let labels: Vec<bool> = (0..15).map(|i| i >= 10).collect();
        let one = sweep_alpha(&calib, &scenes, &labels, &[0.4], 0.05).unwrap();
        assert_eq!(one.best_alpha, 0.4);
        assert_eq!(one.curve.len(), 1);
        let r = sweep_alpha(&calib, &scenes, &labels, &[0.0, 0.17, 1.0], 0.05).unwrap();
        assert_eq!(r.best.f1, 1.0);
        assert!(sweep_alpha(&calib, &scenes, &[false; 15], &[0.0], 0.05).is_err());
    }

    #[test]
    fn csv_layout_and_histograms() {
        let mk = |n, mu| ScoredScene {
            room: "r".into(),
            n_targets: n,
            stats: stats(mu),
        };
        let calib: Vec<ScoredScene> = (0..25).map(|i| mk(i % 4, -1.0 + 0.01 * i as f64)).collect();
        let scenes = vec![mk(1, -0.9), mk(5, -4.0), mk(4, -3.5)];
        let rep = evaluate_ood(&calib, &scenes, 0.17, 0.05, 4).unwrap();
        assert_eq!(rep.report.f1, 1.0);
        assert_eq!(
            rep.histograms
                .values()
                .map(|h| h.iter().sum::<usize>())
                .sum::<usize>(),
            3
        );
        assert_eq!(rep.edges.len(), 5);
        let csv = score_csv(&scenes, 0.17, rep.cutoff);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "frame,n_targets,mu_head,sigma_head,c,flag");
        assert!(lines[1].ends_with(",id") && lines[2].ends_with(",ood"));
        assert_eq!(mean_sigma_by_count(&scenes)[&5], 0.1);
    }

    proptest! {
        #[test]
        fn score_is_monotone(mu in -10.0..0.0f64, sigma in 0.0..5.0f64, alpha in 0.0..2.0f64, d in 0.001..1.0f64) {
            prop_assert!(ood_score(mu + d, sigma, alpha) > ood_score(mu, sigma, alpha));
            if alpha > 0.0 {
                prop_assert!(ood_score(mu, sigma + d, alpha) > ood_score(mu, sigma, alpha));
            }
        }

        #[test]
        fn lowering_score_never_clears_a_flag(c in -10.0..10.0f64, t in -10.0..10.0f64, d in 0.0..5.0f64) {
            if classify(c, t).is_ood() {
                prop_assert!(classify(c - d, t).is_ood());
            }
        }

        #[test]
        fn cutoff_lies_within_scores(xs in prop::collection::vec(-5.0..5.0f64, 20..60), q in 0.0..1.0f64) {
            let t = calibrate(&xs, q).unwrap();
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(t >= lo && t <= hi);
        }

        #[test]
        fn f1_is_harmonic_mean(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..50)) {
            let (p, l): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
            let r = f1(&p, &l).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.f1));
            if r.precision + r.recall > 0.0 {
                prop_assert!((r.f1 - 2.0 * r.precision * r.recall / (r.precision + r.recall)).abs() < 1e-12);
            }
        }
    }
}
