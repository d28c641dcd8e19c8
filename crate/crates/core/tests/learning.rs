//! Learner behaviour over real environment episodes.

use fleetsim::env::{AgentMode, Env};
use fleetsim::sac::Learner;
use fleetsim::scenario::{generate_scenario, ScenarioConfig};

fn small() -> fleetsim::scenario::Scenario {
    let mut cfg = ScenarioConfig::desk();
    cfg.tasks = 10;
    cfg.sim.horizon_steps = 40;
    cfg.learn.warmup_transitions = 8;
    cfg.learn.batch_size = 8;
    generate_scenario(&cfg, 5).unwrap()
}

#[test]
fn zero_learning_rate_leaves_critics_and_actor_unchanged() {
    let mut sc = small();
    sc.learn.actor_lr = 0.0;
    sc.learn.critic_lr = 0.0;
    let mut env = Env::new(&sc, AgentMode::Distributed).unwrap();
    let mut learner = Learner::new(&env, &sc.learn, 1).unwrap();
    let before: Vec<_> = learner.agents.iter().map(|a| (a.actor.clone(), a.critic1.clone(), a.critic2.clone())).collect();
    let mut updates = 0;
    for ep in 0..2 {
        env.reset(ep);
        updates += learner.train_episode(&mut env).unwrap().updates;
    }
    assert!(updates > 0);
    for (agent, (actor, c1, c2)) in learner.agents.iter().zip(before) {
        assert_eq!(agent.actor, actor);
        assert_eq!(agent.critic1, c1);
        assert_eq!(agent.critic2, c2);
    }
}

#[test]
fn nonzero_learning_rate_moves_parameters() {
    let sc = small();
    let mut env = Env::new(&sc, AgentMode::Distributed).unwrap();
    let mut learner = Learner::new(&env, &sc.learn, 1).unwrap();
    let before = learner.agents[0].critic1.clone();
    env.reset(0);
    learner.train_episode(&mut env).unwrap();
    assert_ne!(learner.agents[0].critic1, before);
    assert!(learner.agents.iter().all(|a| a.is_finite()));
}

#[test]
fn checkpoint_round_trip_reproduces_actions() {
    let sc = small();
    let mut env = Env::new(&sc, AgentMode::Centralized).unwrap();
    let mut learner = Learner::new(&env, &sc.learn, 3).unwrap();
    env.reset(0);
    learner.train_episode(&mut env).unwrap();
    let dir = tempfile::tempdir().unwrap();
    learner.save(&env, dir.path()).unwrap();
    let mut restored = Learner::load(&env, dir.path()).unwrap();
    env.reset(1);
    for agent in 0..env.n_agents() {
        let obs = env.observe(agent).unwrap();
        let mask = env.action_mask(agent).unwrap();
        assert_eq!(
            learner.agents[agent].policy_distribution(&obs, &mask).unwrap(),
            restored.agents[agent].policy_distribution(&obs, &mask).unwrap()
        );
    }
    assert_eq!(learner.act(&env, false).unwrap(), restored.act(&env, false).unwrap());
}
