use super::*;
use crate::agent::{NetConfig, ObsConfig, SacConfig};
use crate::nn::Activation;
use crate::sim::default_suite;

fn tiny_agent() -> AgentConfig {
    AgentConfig {
        obs: ObsConfig {
            pool: 4,
            ..ObsConfig::default()
        },
        net: NetConfig {
            base_hidden: vec![12],
            embed: 6,
            head_hidden: vec![6],
            activation: Activation::Tanh,
        },
        sac: SacConfig {
            heads: 3,
            batch: 8,
            ..SacConfig::default()
        },
    }
}

fn setup(method: Method) -> TrainSetup {
    let suite = default_suite();
    TrainSetup {
        tasks: TaskSet::from_suite(&suite).unwrap(),
        suite,
        agent: tiny_agent(),
        tracker: TrackerConfig::default(),
        meta: MetaConfig {
            meta_iterations: 4,
            rollout_frames: 6,
            eval_every: 2,
            eval: EvalConfig {
                episodes: 1,
                frames: 8,
            },
            ..MetaConfig::default()
        },
        method,
        comparator: ComparatorSpec {
            inner_steps: 2,
            ..ComparatorSpec::default()
        },
        baseline: TrackerParams {
            gate: 9.0,
            process_noise: 0.1,
            meas_noise: 0.1,
            cfar_scale: 5.0,
        },
        seed: 3,
    }
}

/// A trainer whose buffers hold enough data for updates.
fn warmed(method: Method) -> MetaTrainer {
    let mut t = MetaTrainer::new(setup(method)).unwrap();
    let agent = t.agent.clone();
    for i in 0..t.envs.len() {
        t.rollout(i, &agent).unwrap();
        t.rollout(i, &agent).unwrap();
    }
    t
}

#[test]
fn task_set_rejects_overlap_and_empty_train() {
    let suite = default_suite();
    let a = suite.rooms[0].clone();
    assert!(TaskSet::new(vec![], vec![a.clone()]).is_err());
    assert!(TaskSet::new(vec![a.clone()], vec![a]).is_err());
    let ts = TaskSet::from_suite(&suite).unwrap();
    assert_eq!((ts.train.len(), ts.test.len()), (3, 2));
    assert!(ts.test.iter().all(|r| !ts.is_train(&r.id)));
}

#[test]
fn single_task_meta_update_is_a_sac_update() {
    let mut t = warmed(Method::ContextPrior);
    let batch = t.buffers[0]
        .sample(8, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    let mut plain = t.agent.clone();
    plain
        .update(&batch, &mut ChaCha8Rng::seed_from_u64(9))
        .unwrap();

    let mut mask_rng = ChaCha8Rng::seed_from_u64(9);
    let mut task_rng = mask_rng.clone();
    draw_mask(t.agent.n_heads(), t.agent.cfg.sac.mask_p, &mut task_rng);
    meta_update(
        &mut t.agent,
        &[batch],
        &t.setup.tasks,
        &mut mask_rng,
        &mut [task_rng],
    )
    .unwrap();
    assert_eq!(t.agent, plain);
}

#[test]
fn identical_tasks_double_the_gradient() {
    let t = warmed(Method::ContextPrior);
    let batch = t.buffers[0]
        .sample(8, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    let mask = vec![true, false, true];
    let rng = ChaCha8Rng::seed_from_u64(5);
    let one = summed_grads(
        &t.agent,
        &[batch.clone()],
        &t.setup.tasks,
        &mask,
        &mut [rng.clone()],
    )
    .unwrap();
    let two = summed_grads(
        &t.agent,
        &[batch.clone(), batch],
        &t.setup.tasks,
        &mask,
        &mut [rng.clone(), rng],
    )
    .unwrap();
    let doubled = |a: &[crate::nn::Tensor], b: &[crate::nn::Tensor]| {
        a.iter().zip(b).all(|(x, y)| (x * 2.0) == *y)
    };
    assert!(doubled(&one.critic_base, &two.critic_base));
    assert!(doubled(&one.actor, &two.actor));
    for (a, b) in one.heads.iter().zip(&two.heads) {
        match (a, b) {
            (Some(a), Some(b)) => assert!(doubled(a, b)),
            (None, None) => {}
            _ => panic!("head activity differs"),
        }
    }
    assert_eq!(two.actor_loss, 2.0 * one.actor_loss);
}

#[test]
fn test_task_batches_are_refused() {
    let t = warmed(Method::ContextPrior);
    let mut batch = t.buffers[0]
        .sample(8, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    batch.task_id = t.setup.tasks.test[0].id.clone();
    let mut agent = t.agent.clone();
    let r = meta_update(
        &mut agent,
        &[batch],
        &t.setup.tasks,
        &mut ChaCha8Rng::seed_from_u64(0),
        &mut [ChaCha8Rng::seed_from_u64(0)],
    );
    assert!(r.is_err());
    assert_eq!(agent, t.agent);
}

#[test]
fn buffers_only_hold_train_tasks() {
    let mut t = MetaTrainer::new(setup(Method::ContextPrior)).unwrap();
    t.run_to_end().unwrap();
    assert_eq!(t.buffers().len(), t.setup.tasks.train.len());
    assert!(t
        .buffers()
        .iter()
        .all(|b| t.setup.tasks.is_train(b.task_id()) && b.len() == 24));
    assert!(t.agent.updates > 0);
}

#[test]
fn zero_reptile_step_leaves_parameters_bit_identical() {
    let mut s = setup(Method::Reptile);
    s.comparator.reptile_step = 0.0;
    let mut t = MetaTrainer::new(s).unwrap();
    let before = t.agent.flat_params();
    t.run_to_end().unwrap();
    assert_eq!(t.agent.flat_params(), before);
}

#[test]
fn full_reptile_step_on_one_task_equals_adapted_parameters() {
    let mut s = setup(Method::Reptile);
    s.comparator.reptile_step = 1.0;
    s.tasks.train.truncate(1);
    let mut t = warmed_from(s);
    let mut probe = t.clone();
    let agent = probe.agent.clone();
    probe.rollout(0, &agent).unwrap();
    let adapted = probe.adapt(0).unwrap().unwrap();
    t.reptile_iteration().unwrap();
    for (a, b) in t.agent.flat_params().iter().zip(adapted.flat_params()) {
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + y.abs())));
    }
}

fn warmed_from(s: TrainSetup) -> MetaTrainer {
    let mut t = MetaTrainer::new(s).unwrap();
    let agent = t.agent.clone();
    for i in 0..t.envs.len() {
        t.rollout(i, &agent).unwrap();
        t.rollout(i, &agent).unwrap();
    }
    t
}

#[test]
fn zero_outer_lr_leaves_parameters_bit_identical() {
    let mut s = setup(Method::Fomaml);
    s.comparator.outer_lr = 0.0;
    s.tasks.train.truncate(1);
    let mut t = MetaTrainer::new(s).unwrap();
    let before = t.agent.flat_params();
    t.run_to_end().unwrap();
    assert_eq!(t.agent.flat_params(), before);
}

#[test]
fn fomaml_without_inner_steps_is_joint_training() {
    let mut s = setup(Method::Fomaml);
    s.comparator.inner_steps = 0;
    s.comparator.outer_lr = s.agent.sac.lr_critic;
    let mut fo = warmed_from(s);
    let mut probe = fo.clone();
    fo.fomaml_iteration().unwrap();
    // same rollouts, mask and batches as one joint update
    let agent = probe.agent.clone();
    let mask = draw_mask(agent.n_heads(), agent.cfg.sac.mask_p, &mut probe.rng);
    let mut total: Option<AgentGrads> = None;
    for i in 0..probe.envs.len() {
        probe.rollout(i, &agent).unwrap();
        let b = probe.sample(i).unwrap().unwrap();
        let g = agent.compute_grads(&b, &mask, &mut probe.rng).unwrap();
        match total.as_mut() {
            Some(t) => t.add(&g),
            None => total = Some(g),
        }
    }
    probe.agent.apply_grads(&total.unwrap()).unwrap();
    assert_eq!(fo.agent, probe.agent);
}

#[test]
fn fixed_baseline_curve_is_flat() {
    let mut t = MetaTrainer::new(setup(Method::FixedBaseline)).unwrap();
    let curve = t.run_to_end().unwrap().clone();
    assert_eq!(curve.rows.len(), 2);
    assert_eq!(curve.rows[0].average, curve.rows[1].average);
    assert_eq!(t.agent.updates, 0);
}

#[test]
fn curves_are_reproducible_and_resume_bit_exactly() {
    let run = || {
        let mut t = MetaTrainer::new(setup(Method::ContextPrior)).unwrap();
        t.run_to_end().unwrap();
        t
    };
    let a = run();
    assert_eq!(a.curve.to_csv(), run().curve.to_csv());

    let mut half = MetaTrainer::new(setup(Method::ContextPrior)).unwrap();
    for _ in 0..3 {
        half.step_iteration().unwrap();
    }
    let bytes = half.save().to_bytes();
    let mut resumed = MetaTrainer::load(
        setup(Method::ContextPrior),
        &Checkpoint::from_bytes(&bytes).unwrap(),
    )
    .unwrap();
    resumed.run_to_end().unwrap();
    assert_eq!(resumed.curve.to_csv(), a.curve.to_csv());
    assert_eq!(resumed.agent, a.agent);
    assert_eq!(resumed.save().to_bytes(), a.save().to_bytes());
}

#[test]
fn curve_csv_layout() {
    let mut c = LearningCurve::new(vec!["meeting".into(), "kitchen".into()]);
    c.push(
        10,
        &EvalReport::from_task_means(vec![("meeting".into(), -0.4), ("kitchen".into(), -0.6)]),
    );
    assert_eq!(
        c.to_csv(),
        "iteration,meeting,kitchen,average\n10,-0.4,-0.6,-0.5\n"
    );
    assert_eq!(c.peak(), Some(-0.5));
}

#[test]
fn baseline_tuning_finds_planted_optimum_and_breaks_ties() {
    let grid = BaselineGrid {
        gate: vec![3.0, 9.0, 25.0],
        process_noise: vec![0.1, 1.0],
        meas_noise: vec![0.1],
        cfar_scale: vec![4.0, 6.0],
    };
    let planted = |p: &TrackerParams| {
        Ok(
            if p.gate == 9.0 && p.cfar_scale == 6.0 && p.process_noise == 1.0 {
                0.0
            } else {
                -1.0
            },
        )
    };
    let (best, score) = tune_baseline(&grid, planted).unwrap();
    assert_eq!(
        (best.gate, best.process_noise, best.cfar_scale, score),
        (9.0, 1.0, 6.0, 0.0)
    );
    let (tie, _) = tune_baseline(&grid, |_| Ok(-1.0)).unwrap();
    assert_eq!((tie.gate, tie.process_noise), (3.0, 0.1));
    let single = BaselineGrid {
        gate: vec![9.0],
        process_noise: vec![0.5],
        meas_noise: vec![0.5],
        cfar_scale: vec![5.0],
    };
    assert_eq!(tune_baseline(&single, |_| Ok(-3.0)).unwrap().0.gate, 9.0);
    let empty = BaselineGrid {
        gate: vec![],
        ..single
    };
    assert!(tune_baseline(&empty, |_| Ok(0.0)).is_err());
}

#[test]
fn ablation_table_has_one_row_per_factor() {
    let rows = ablate_reward_scale(&[1.0, 2.0, 5.0, 10.0], |k| {
        let mut c = LearningCurve::new(vec!["a".into()]);
        c.push(
            1,
            &EvalReport::from_task_means(vec![("a".into(), -1.0 / k)]),
        );
        c.push(2, &EvalReport::from_task_means(vec![("a".into(), -2.0)]));
        Ok(c)
    })
    .unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(
        rows[3],
        AblationRow {
            reward_scale: 10.0,
            best_reward: -0.1
        }
    );
    assert!(ablation_csv(&rows).starts_with("reward_scale,best_reward\n1,-1\n"));
    assert!(ablate_reward_scale(&[], |_| Ok(LearningCurve::default())).is_err());
}

#[test]
fn evaluation_ignores_reward_scale() {
    let mut s = setup(Method::ContextPrior);
    s.meta.reward_scale = 2.0;
    let t = MetaTrainer::new(s).unwrap();
    let rooms = t.setup.tasks.test_refs();
    let plain = evaluate_on(
        &t.agent,
        &t.setup.suite,
        &rooms,
        &t.setup.meta.eval,
        &t.setup.agent.obs,
        &t.setup.tracker,
        EVAL_EPISODE_BASE,
    )
    .unwrap();
    assert_eq!(t.evaluate().unwrap(), plain);
}
