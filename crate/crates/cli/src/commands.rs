//! Subcommand implementations. Each writes into a run directory holding a
//! manifest, the resolved configuration and its outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use metatrack_core::agent::Agent;
use metatrack_core::checkpoint::Checkpoint;
use metatrack_core::meta::{
    ablate_reward_scale, ablation_csv, evaluate_on, rmse_eval, tune_baseline_on, AblationRow,
    EvalReport, FixedPolicy, LearningCurve, MetaTrainer, Method, Policy, TaskSet,
    EVAL_EPISODE_BASE, TUNE_EPISODE_BASE,
};
use metatrack_core::ood::{
    calibrate, evaluate_ood, f1, mean_sigma_by_count, score_csv, score_scenes, OodEvalReport,
    ScoredScene,
};
use metatrack_core::sim::{write_episode_dump, Episode};
use metatrack_core::tracker::{map_action, TrackerParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::manifest::{Run, RunManifest};
use crate::plot::{line_chart, Series};
use crate::CliError;

pub const CHECKPOINT: &str = "checkpoint.bin";
const OOD_STREAM: u64 = 1 << 32;

fn runtime(e: metatrack_core::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Writes frames, ground truth and RAI statistics for every room.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<RunManifest, CliError> {
    cfg.validate()?;
    let suite = cfg.task_suite()?;
    let mut run = Run::start(out, "simulate", cfg)?;
    for room in &suite.rooms {
        for k in 0..cfg.simulate.episodes as u64 {
            let index = cfg.seed.wrapping_mul(1 << 20).wrapping_add(k);
            let task = suite.spawn_episode(room, index).map_err(runtime)?;
            let ep = Episode::generate(&task, cfg.simulate.frames, &suite.radar, &suite.scene)
                .map_err(runtime)?;
            let rel = format!("{}/episode{k}", room.id);
            write_episode_dump(&out.join(&rel), &ep).map_err(runtime)?;
            for f in ["frames.bin", "truth.csv", "stats.csv"] {
                run.manifest.outputs.push(format!("{rel}/{f}"));
            }
        }
    }
    run.finish()
}

/// The baseline's parameters: fixed in the configuration, or the best grid
/// point on the train rooms.
pub fn resolve_baseline(cfg: &RunConfig) -> Result<TrackerParams, CliError> {
    if let Some(p) = cfg.baseline.params {
        return Ok(p);
    }
    let suite = cfg.task_suite()?;
    let tasks = TaskSet::from_suite(&suite).map_err(|e| CliError::Config(e.to_string()))?;
    let (p, _) = tune_baseline_on(
        &cfg.baseline.grid,
        &suite,
        &tasks,
        &cfg.baseline.eval,
        &cfg.agent.obs,
        &cfg.tracker,
    )
    .map_err(runtime)?;
    Ok(p)
}

/// Only the fixed baseline acts with these parameters; other methods get
/// the centre of the action range as a placeholder.
fn baseline_for(cfg: &RunConfig) -> Result<TrackerParams, CliError> {
    match cfg.method {
        Method::FixedBaseline => resolve_baseline(cfg),
        _ => Ok(map_action(&[0.0; 4]).params),
    }
}

fn curve_series(name: &str, curve: &LearningCurve) -> Series {
    Series {
        name: name.to_string(),
        points: curve
            .rows
            .iter()
            .map(|r| (r.iteration as f64, r.average))
            .collect(),
    }
}

fn curve_svg(title: &str, series: &[Series]) -> String {
    line_chart(title, "meta-iteration", "average evaluation reward", series)
}

/// Runs the configured method, resuming from `checkpoint` when the file
/// exists. A checkpoint is written to the run directory on every evaluation.
pub fn train(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: Option<&Path>,
) -> Result<LearningCurve, CliError> {
    cfg.validate()?;
    let setup = cfg.train_setup(baseline_for(cfg)?)?;
    let mut trainer = match checkpoint.filter(|p| p.exists()) {
        Some(p) => {
            MetaTrainer::load(setup, &Checkpoint::load(p).map_err(runtime)?).map_err(runtime)?
        }
        None => MetaTrainer::new(setup).map_err(runtime)?,
    };
    let mut run = Run::start(out, "train", cfg)?;
    let mut rows = trainer.curve.rows.len();
    while !trainer.finished() {
        trainer.step_iteration().map_err(runtime)?;
        if trainer.curve.rows.len() > rows {
            rows = trainer.curve.rows.len();
            run.output("curve.csv", trainer.curve.to_csv().as_bytes())?;
            run.metric(trainer.iteration, "curve.csv");
            trainer
                .save()
                .save(&out.join(CHECKPOINT))
                .map_err(runtime)?;
            run.flush()?;
        }
    }
    run.output("curve.csv", trainer.curve.to_csv().as_bytes())?;
    let svg = curve_svg(
        &format!("{} seed {}", cfg.method.name(), cfg.seed),
        &[curve_series(cfg.method.name(), &trainer.curve)],
    );
    run.output("curve.svg", svg.as_bytes())?;
    trainer
        .save()
        .save(&out.join(CHECKPOINT))
        .map_err(runtime)?;
    run.manifest.outputs.push(CHECKPOINT.into());
    run.finish()?;
    Ok(trainer.curve)
}

/// Trains each configuration into its own subdirectory and overlays the
/// curves in `curves.svg`.
pub fn train_many(cfgs: &[RunConfig], out: &Path) -> Result<Vec<LearningCurve>, CliError> {
    let mut series = Vec::new();
    let mut curves = Vec::new();
    for (i, cfg) in cfgs.iter().enumerate() {
        let name = format!("{i}_{}", cfg.method.name());
        let curve = train(cfg, &out.join(&name), None)?;
        series.push(curve_series(&name, &curve));
        curves.push(curve);
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(e.to_string()))?;
    crate::manifest::write_atomic(
        &out.join("curves.svg"),
        curve_svg("learning curves", &series).as_bytes(),
    )?;
    Ok(curves)
}

fn load_agent(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Agent, CliError> {
    let path = checkpoint.ok_or_else(|| {
        CliError::Config("a trained checkpoint is required (--checkpoint)".into())
    })?;
    if !path.exists() {
        return Err(CliError::Runtime(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    let ck = Checkpoint::load(path).map_err(runtime)?;
    let mut agent =
        Agent::new(cfg.agent.clone(), &mut ChaCha8Rng::seed_from_u64(cfg.seed)).map_err(runtime)?;
    agent.load(&ck, "agent").map_err(runtime)?;
    Ok(agent)
}

/// Held-out reward and tracking accuracy per test room.
pub fn eval(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: Option<&Path>,
) -> Result<EvalReport, CliError> {
    cfg.validate()?;
    let policy: Box<dyn Policy> = match cfg.method {
        Method::FixedBaseline => Box::new(FixedPolicy(resolve_baseline(cfg)?)),
        _ => Box::new(load_agent(cfg, checkpoint)?),
    };
    let suite = cfg.task_suite()?;
    let tasks = TaskSet::from_suite(&suite).map_err(|e| CliError::Config(e.to_string()))?;
    let mut run = Run::start(out, "eval", cfg)?;
    let rooms = tasks.test_refs();
    let e = &cfg.meta.eval;
    let report = evaluate_on(
        policy.as_ref(),
        &suite,
        &rooms,
        e,
        &cfg.agent.obs,
        &cfg.tracker,
        EVAL_EPISODE_BASE,
    )
    .map_err(runtime)?;
    let mut csv = String::from("room,reward,rmse_x,matched,count_accuracy\n");
    for (room, (id, reward)) in rooms.iter().zip(&report.per_task) {
        let r = rmse_eval(
            policy.as_ref(),
            &suite,
            room,
            e,
            &cfg.agent.obs,
            &cfg.tracker,
        )
        .map_err(runtime)?;
        let rmse = r.rmse_x.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{id},{reward},{rmse},{},{}",
            r.matched, r.count_accuracy
        );
    }
    let _ = writeln!(csv, "average,{},,,", report.average);
    run.output("eval.csv", csv.as_bytes())?;
    run.finish()?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct OodOutcome {
    pub calibration: Vec<ScoredScene>,
    pub scenes: Vec<ScoredScene>,
    /// `(alpha, cutoff, precision, recall, f1)` per grid point.
    pub sweep: Vec<(f64, f64, f64, f64, f64)>,
    pub report: OodEvalReport,
    pub sigma_by_count: BTreeMap<usize, f64>,
}

impl OodOutcome {
    pub fn best_f1(&self) -> Option<(f64, f64)> {
        self.sweep
            .iter()
            .fold(None, |acc: Option<(f64, f64)>, r| match acc {
                Some((_, f)) if f >= r.4 => acc,
                _ => Some((r.0, r.4)),
            })
    }
}

/// Calibrates on in-distribution scenes of the train rooms, then scores the
/// test rooms across all configured counts.
pub fn ood_with_agent(cfg: &RunConfig, agent: &Agent, out: &Path) -> Result<OodOutcome, CliError> {
    cfg.validate()?;
    let o = &cfg.ood;
    if o.ood_counts.is_empty() {
        return Err(CliError::Config(
            "the out-of-distribution set is empty; list target counts in ood.ood_counts".into(),
        ));
    }
    if o.id_counts.is_empty() {
        return Err(CliError::Config(
            "the in-distribution set is empty; list target counts in ood.id_counts".into(),
        ));
    }
    if o.id_counts.iter().any(|n| o.ood_counts.contains(n)) {
        return Err(CliError::Config(
            "ood.id_counts and ood.ood_counts overlap".into(),
        ));
    }
    let suite = cfg.task_suite()?;
    let tasks = TaskSet::from_suite(&suite).map_err(|e| CliError::Config(e.to_string()))?;
    let mut run = Run::start(out, "ood", cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(OOD_STREAM);
    let oc = o.config();
    let obs = &cfg.agent.obs;
    let frames = o.frames_per_count;
    let calibration = score_scenes(
        agent,
        &suite,
        &tasks.train_refs(),
        &o.id_counts,
        frames,
        TUNE_EPISODE_BASE,
        obs,
        &oc,
        &mut rng,
    )
    .map_err(runtime)?;
    let mut counts: Vec<usize> = o.id_counts.iter().chain(&o.ood_counts).copied().collect();
    counts.sort_unstable();
    let scenes = score_scenes(
        agent,
        &suite,
        &tasks.test_refs(),
        &counts,
        frames,
        EVAL_EPISODE_BASE,
        obs,
        &oc,
        &mut rng,
    )
    .map_err(runtime)?;
    let labels: Vec<bool> = scenes
        .iter()
        .map(|s| o.ood_counts.contains(&s.n_targets))
        .collect();

    let mut sweep = Vec::new();
    let mut sweep_csv = String::from("alpha,cutoff,precision,recall,f1\n");
    for &alpha in &o.alpha_grid {
        let ids: Vec<f64> = calibration.iter().map(|s| s.stats.score(alpha)).collect();
        let cutoff = calibrate(&ids, o.quantile).map_err(runtime)?;
        let preds: Vec<bool> = scenes
            .iter()
            .map(|s| s.stats.score(alpha) < cutoff)
            .collect();
        let r = f1(&preds, &labels).map_err(runtime)?;
        let _ = writeln!(
            sweep_csv,
            "{alpha},{cutoff},{},{},{}",
            r.precision, r.recall, r.f1
        );
        sweep.push((alpha, cutoff, r.precision, r.recall, r.f1));
    }
    let report = evaluate_ood(&calibration, &scenes, o.alpha, o.quantile, o.histogram_bins)
        .map_err(runtime)?;
    let sigma_by_count = mean_sigma_by_count(&scenes);

    let mut by_count =
        String::from("n_targets,frames,mean_mu_head,mean_sigma_head,flagged_fraction\n");
    for &n in &counts {
        let sel: Vec<&ScoredScene> = scenes.iter().filter(|s| s.n_targets == n).collect();
        let k = sel.len().max(1) as f64;
        let mu = sel.iter().map(|s| s.stats.mu).sum::<f64>() / k;
        let flagged = sel
            .iter()
            .filter(|s| s.stats.score(o.alpha) < report.cutoff)
            .count() as f64
            / k;
        let _ = writeln!(
            by_count,
            "{n},{},{mu},{},{flagged}",
            sel.len(),
            sigma_by_count.get(&n).copied().unwrap_or(0.0)
        );
    }
    let r = report.report;
    let summary = format!(
        "alpha,cutoff,precision,recall,f1\n{},{},{},{},{}\n",
        o.alpha, report.cutoff, r.precision, r.recall, r.f1
    );

    run.output(
        "scores.csv",
        score_csv(&scenes, o.alpha, report.cutoff).as_bytes(),
    )?;
    run.output("sweep.csv", sweep_csv.as_bytes())?;
    run.output("report.csv", summary.as_bytes())?;
    run.output("counts.csv", by_count.as_bytes())?;
    let centers: Vec<f64> = report
        .edges
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .collect();
    let hist: Vec<Series> = report
        .histograms
        .iter()
        .map(|(n, h)| Series {
            name: format!("{n} targets"),
            points: centers
                .iter()
                .zip(h)
                .map(|(&c, &k)| (c, k as f64))
                .collect(),
        })
        .collect();
    run.output(
        "scores.svg",
        line_chart("score histograms", "c", "frames", &hist).as_bytes(),
    )?;
    let f1_curve = Series {
        name: "F1".into(),
        points: sweep.iter().map(|r| (r.0, r.4)).collect(),
    };
    run.output(
        "sweep.svg",
        line_chart("alpha sweep", "alpha", "F1", &[f1_curve]).as_bytes(),
    )?;
    run.finish()?;
    Ok(OodOutcome {
        calibration,
        scenes,
        sweep,
        report,
        sigma_by_count,
    })
}

pub fn ood(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<OodOutcome, CliError> {
    if cfg.ood.ood_counts.is_empty() {
        return Err(CliError::Config(
            "the out-of-distribution set is empty; list target counts in ood.ood_counts".into(),
        ));
    }
    let agent = load_agent(cfg, checkpoint)?;
    ood_with_agent(cfg, &agent, out)
}

/// One training run per reward-scale factor; reports the peak unscaled
/// evaluation reward of each.
pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<Vec<AblationRow>, CliError> {
    cfg.validate()?;
    if cfg.ablation.factors.is_empty() {
        return Err(CliError::Config("ablation.factors is empty".into()));
    }
    let baseline = baseline_for(cfg)?;
    let mut run = Run::start(out, "ablate", cfg)?;
    let mut series = Vec::new();
    let mut curves = Vec::new();
    let rows = ablate_reward_scale(&cfg.ablation.factors, |k| {
        let mut c = cfg.clone();
        c.meta.reward_scale = k;
        let setup = c
            .train_setup(baseline)
            .map_err(|e| metatrack_core::Error::InvalidConfig(e.to_string()))?;
        let mut t = MetaTrainer::new(setup)?;
        let curve = t.run_to_end()?.clone();
        series.push(curve_series(&format!("scale {k}"), &curve));
        curves.push((k, curve.clone()));
        Ok(curve)
    })
    .map_err(runtime)?;
    for (k, curve) in &curves {
        run.output(&format!("curves/scale_{k}.csv"), curve.to_csv().as_bytes())?;
    }
    run.output("ablation.csv", ablation_csv(&rows).as_bytes())?;
    run.output(
        "ablation.svg",
        curve_svg("reward-scale ablation", &series).as_bytes(),
    )?;
    run.finish()?;
    Ok(rows)
}
