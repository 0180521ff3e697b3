use metatrack_core::agent::{Agent, AgentConfig, NetConfig, ObsConfig, SacConfig};
use metatrack_core::meta::{TaskSet, EVAL_EPISODE_BASE};
use metatrack_core::nn::Activation;
use metatrack_core::ood::*;
use metatrack_core::sim::default_suite;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn agent() -> Agent {
    let cfg = AgentConfig {
        obs: ObsConfig {
            pool: 4,
            ..ObsConfig::default()
        },
        net: NetConfig {
            base_hidden: vec![12],
            embed: 6,
            head_hidden: vec![6],
            activation: Activation::Relu,
        },
        sac: SacConfig {
            heads: 4,
            ..SacConfig::default()
        },
    };
    Agent::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
}

#[test]
fn scoring_covers_every_count_and_is_reproducible() {
    let suite = default_suite();
    let tasks = TaskSet::from_suite(&suite).unwrap();
    let a = agent();
    let cfg = OodConfig {
        context_draws: 2,
        ..OodConfig::default()
    };
    let run = |seed| {
        score_scenes(
            &a,
            &suite,
            &tasks.test_refs(),
            &[1, 4],
            5,
            EVAL_EPISODE_BASE,
            &a.cfg.obs,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    };
    let s = run(7);
    assert_eq!(s.len(), 2 * 2 * 5);
    assert_eq!(s, run(7));
    assert!(s
        .iter()
        .all(|x| x.stats.sigma >= 0.0 && x.stats.mu.is_finite()));
    assert_eq!(s.iter().filter(|x| x.is_ood()).count(), 10);
    let by = mean_sigma_by_count(&s);
    assert_eq!(by.keys().copied().collect::<Vec<_>>(), vec![1, 4]);
}

#[test]
fn counts_outside_the_suite_are_rejected() {
    let suite = default_suite();
    let a = agent();
    let rooms = [&suite.rooms[0]];
    let r = score_scenes(
        &a,
        &suite,
        &rooms,
        &[9],
        1,
        0,
        &a.cfg.obs,
        &OodConfig::default(),
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    assert!(r.is_err());
}
