use dsmo_core::algorithms::{
    dsmo_round, run_dbsa, run_dsgd, run_dsmo, AgentState, AlgoError, BRule, DbsaOptions, DsgdOptions, DsmoState,
    RoundContext, RunOptions, StepSchedule, Steps, Streams,
};
use dsmo_core::network::{build_topology, GossipMatrix, MixingScheme, TopologyKind};
use dsmo_core::problems::{
    MultiLevelProblem, PolicyEvalConfig, PolicyEvalProblem, SyntheticConfig, SyntheticQuadratic,
};
use nalgebra::DVector;

fn quiet(dims: Vec<usize>, agents: usize, heterogeneity: f64) -> SyntheticQuadratic<f64> {
    SyntheticQuadratic::generate(&SyntheticConfig {
        dims,
        agents,
        heterogeneity,
        noise: 0.0,
        cross_noise: 0.0,
        hessian_noise: 0.0,
        seed: 3,
        ..Default::default()
    })
    .unwrap()
}

fn ring(k: usize) -> GossipMatrix<f64> {
    let t = build_topology(TopologyKind::Ring, k, 0.0, 0).unwrap();
    GossipMatrix::new(&t, MixingScheme::UniformRing).unwrap()
}

fn complete(k: usize) -> GossipMatrix<f64> {
    let t = build_topology(TopologyKind::Complete, k, 0.0, 0).unwrap();
    GossipMatrix::new(&t, MixingScheme::MeanMatrix).unwrap()
}

fn context(p: &SyntheticQuadratic<f64>, depth: usize, seed: u64) -> (RoundContext<f64>, DsmoState<f64>) {
    let meta = p.meta();
    let levels = p.dims().num_levels();
    let ctx = RoundContext {
        l_g: meta.levels.iter().map(|l| l.l_g).collect(),
        depths: vec![depth; levels],
        streams: Streams::new(seed, p.dims().agents()),
        independent_outer_draws: false,
    };
    let mu: Vec<f64> = meta.levels.iter().map(|l| l.mu_g).collect();
    let state = DsmoState::new(p.dims(), &mu, &ctx.depths);
    (ctx, state)
}

/// Outer direction rebuilt from materialized Neumann matrices.
fn direction_oracle(a: &AgentState<f64>, l_g: &[f64], first_round: bool) -> DVector<f64> {
    if first_round {
        return a.s.clone();
    }
    let mut w = a.h.clone();
    for m in (0..a.levels.len()).rev() {
        w = &a.levels[m].u * (a.q(m, l_g[m]) * w);
    }
    if a.levels.len() % 2 == 1 {
        w = -w;
    }
    &a.s + w
}

#[test]
fn zero_horizon_gives_one_record_at_the_origin() {
    let p = SyntheticQuadratic::<f64>::generate(&SyntheticConfig::default()).unwrap();
    let sched = StepSchedule::diminishing(50.0, 1.0, BRule::Fixed(4));
    let recs = run_dsmo(&p, &ring(5), &sched, &RunOptions { horizon: 0, ..Default::default() }).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].t, 0);
    assert_eq!(recs[0].samples_total, 0);
    let x_star = &p.optimum().unwrap().x;
    assert!((recs[0].mse_to_opt - x_star.norm_squared()).abs() < 1e-12);
    assert_eq!(recs[0].consensus_x, 0.0);
}

#[test]
fn sample_count_matches_the_per_round_formula() {
    let p = SyntheticQuadratic::<f64>::generate(&SyntheticConfig::default()).unwrap();
    let b = 7u64;
    let sched = StepSchedule::diminishing(50.0, 1.0, BRule::Fixed(b as usize));
    let opts = RunOptions { horizon: 30, eval_every: Some(3), ..Default::default() };
    let recs = run_dsmo(&p, &ring(5), &sched, &opts).unwrap();
    let per_agent = 2 + 2 * (2 + b);
    for r in &recs {
        assert_eq!(r.samples_total, 5 * per_agent * r.t);
    }
    assert_eq!(recs.last().unwrap().t, 30);
}

#[test]
fn network_average_moves_along_the_mean_direction() {
    let p = SyntheticQuadratic::<f64>::generate(&SyntheticConfig { agents: 6, ..Default::default() }).unwrap();
    let w = ring(6);
    let (ctx, mut state) = context(&p, 5, 1);
    let sched = StepSchedule::diminishing(50.0, 1.0, BRule::Fixed(5));
    for t in 0..40 {
        let steps = sched.at(t, 6).unwrap();
        let dirs: Vec<DVector<f64>> = state.agents.iter().map(|a| direction_oracle(a, &ctx.l_g, t == 0)).collect();
        let z_bar = dirs.iter().fold(DVector::zeros(dirs[0].len()), |acc, d| acc + d) / 6.0;
        let expected = state.x_bar() - z_bar * steps.alpha;
        let (next, out) = dsmo_round(&state, &p, &w, steps, &ctx);
        assert!((next.x_bar() - &expected).norm() < 1e-10, "round {t}");
        assert!((out.x_bar - expected).norm() < 1e-10);
        for (n, d) in out.direction_norms.iter().zip(&dirs) {
            assert!((n - d.norm()).abs() < 1e-10 * (1.0 + d.norm()));
        }
        state = next;
    }
}

#[test]
fn first_round_direction_is_the_outer_tracker() {
    let p = quiet(vec![3, 2], 1, 0.0);
    let w = complete(1);
    let (ctx, mut state) = context(&p, 3, 0);
    state.agents[0].s = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    state.agents[0].x = DVector::from_vec(vec![0.3, 0.1, -0.2]);
    let steps = Steps { alpha: 0.1, beta: 0.5, gamma: 0.5 };
    let (next, _) = dsmo_round(&state, &p, &w, steps, &ctx);
    let expected = &state.agents[0].x - &state.agents[0].s * 0.1;
    assert!((next.agents[0].x.clone() - expected).norm() < 1e-15);
}

#[test]
fn frozen_outer_variable_lets_inner_levels_reach_best_responses() {
    let p = quiet(vec![4, 3, 2], 5, 0.05);
    let w = ring(5);
    let (ctx, mut state) = context(&p, 3, 2);
    let x0 = DVector::from_vec(vec![0.7, -1.2, 0.4, 2.0]);
    for a in &mut state.agents {
        a.x = x0.clone();
    }
    let target = p.best_response(&x0).unwrap();
    let mut dist = Vec::new();
    for t in 0..3000 {
        let gamma = 50.0 / (50.0 + t as f64);
        let (next, _) = dsmo_round(&state, &p, &w, Steps { alpha: 0.0, beta: gamma, gamma }, &ctx);
        state = next;
        for a in &state.agents {
            assert_eq!(a.x, x0);
        }
        let y_bar: Vec<DVector<f64>> = (0..2)
            .map(|m| state.agents.iter().fold(DVector::zeros(target[m].len()), |acc, a| acc + &a.levels[m].y) / 5.0)
            .collect();
        dist.push((0..2).map(|m| (&y_bar[m] - &target[m]).norm()).sum::<f64>());
    }
    let last = *dist.last().unwrap();
    assert!(last < 1e-2 * dist[0], "{} -> {last}", dist[0]);
    assert!(dist[2000..].windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn unit_tracking_weight_copies_the_fresh_gradient() {
    let p = quiet(vec![3, 2, 2], 4, 0.0);
    let w = ring(4);
    let (ctx, mut state) = context(&p, 2, 5);
    for (k, a) in state.agents.iter_mut().enumerate() {
        a.x = DVector::from_vec(vec![0.5, -1.0, k as f64]);
        a.levels[1].y = DVector::from_vec(vec![1.0, 2.0 - k as f64]);
    }
    let (next, _) = dsmo_round(&state, &p, &w, Steps { alpha: 0.05, beta: 1.0, gamma: 0.5 }, &ctx);
    for (a, b) in state.agents.iter().zip(&next.agents) {
        let exact = p.exact_outer(&a.x, &a.levels[1].y);
        assert!((&b.s - exact.grad_x).norm() < 1e-12);
        assert!((&b.h - exact.grad_y).norm() < 1e-12);
    }
}

#[test]
fn outer_tracker_error_shrinks_by_one_minus_beta() {
    let p = quiet(vec![3, 2], 4, 0.3);
    let w = complete(4);
    let (ctx, mut state) = context(&p, 2, 5);
    for (k, a) in state.agents.iter_mut().enumerate() {
        a.x = DVector::from_vec(vec![1.0, -0.5 * k as f64, 0.25]);
    }
    let g_bar = state
        .agents
        .iter()
        .fold(DVector::zeros(3), |acc, a| acc + p.exact_outer(&a.x, &a.levels[0].y).grad_x)
        / 4.0;
    let beta = 0.3;
    let mean_s = |s: &DsmoState<f64>| s.agents.iter().fold(DVector::zeros(3), |acc, a| acc + &a.s) / 4.0;
    let e0 = (mean_s(&state) - &g_bar).norm();
    for t in 1..=20 {
        let (next, _) = dsmo_round(&state, &p, &w, Steps { alpha: 0.0, beta, gamma: 0.0 }, &ctx);
        state = next;
        let e = (mean_s(&state) - &g_bar).norm();
        let predicted = (1.0 - beta).powi(t) * e0;
        assert!((e - predicted).abs() <= 1e-12 * e0, "t={t}: {e} vs {predicted}");
    }
}

#[test]
fn single_agent_noise_free_run_approaches_the_optimum() {
    let p = quiet(vec![3, 3], 1, 0.0);
    let sched = StepSchedule::diminishing(50.0, p.pl_constant().unwrap(), BRule::Theory);
    let opts = RunOptions { horizon: 3000, eval_every: Some(10), ..Default::default() };
    let recs = run_dsmo(&p, &complete(1), &sched, &opts).unwrap();
    let first = recs[0].mse_to_opt;
    let tail = &recs[recs.len() / 2..];
    assert!(tail.last().unwrap().mse_to_opt < 1e-4 * first);
    assert!(tail.windows(2).all(|w| w[1].mse_to_opt <= w[0].mse_to_opt * (1.0 + 1e-9)));
    assert!(recs.iter().all(|r| r.consensus_x == 0.0));
}

#[test]
fn records_do_not_depend_on_the_thread_count() {
    let p = SyntheticQuadratic::<f64>::generate(&SyntheticConfig { agents: 7, ..Default::default() }).unwrap();
    let sched = StepSchedule::diminishing(50.0, 1.0, BRule::Theory);
    let opts = RunOptions { horizon: 200, seed: 42, ..Default::default() };
    let w = ring(7);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_dsmo(&p, &w, &sched, &opts).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(8));
    assert_eq!(one, run(3));
    let other = run_dsmo(&p, &w, &sched, &RunOptions { seed: 43, ..opts.clone() }).unwrap();
    assert_ne!(one, other);
}

#[test]
fn single_precision_runs() {
    let p = SyntheticQuadratic::<f32>::generate(&SyntheticConfig::default()).unwrap();
    let t = build_topology(TopologyKind::Ring, 5, 0.0, 0).unwrap();
    let w = GossipMatrix::<f32>::new(&t, MixingScheme::UniformRing).unwrap();
    let sched = StepSchedule::diminishing(50.0, 1.0, BRule::Fixed(5));
    let recs = run_dsmo(&p, &w, &sched, &RunOptions { horizon: 500, ..Default::default() }).unwrap();
    assert!(recs.last().unwrap().mse_to_opt < 0.2 * recs[0].mse_to_opt);
}

#[test]
fn baselines_reject_unsupported_problems() {
    let p = SyntheticQuadratic::<f64>::generate(&SyntheticConfig::default()).unwrap();
    let sched = StepSchedule::diminishing(50.0, 1.0, BRule::Fixed(2));
    let opts = RunOptions { horizon: 3, ..Default::default() };
    assert!(matches!(
        run_dbsa(&p, &ring(5), &sched, &DbsaOptions::default(), &opts),
        Err(AlgoError::NotBilevel { levels: 2 })
    ));
    assert!(matches!(
        run_dsgd(&p, &ring(5), &sched, &DsgdOptions::default(), &opts),
        Err(AlgoError::NotCompositional(_))
    ));
}

#[test]
fn baseline_sample_counts_grow_quadratically() {
    let p = PolicyEvalProblem::<f64>::new(&PolicyEvalConfig { num_states: 10, ..Default::default() }).unwrap();
    let sched = StepSchedule::diminishing(50.0, p.pl_constant().unwrap(), BRule::Fixed(3));
    let opts = RunOptions { horizon: 12, eval_every: Some(1), ..Default::default() };
    let dbsa = run_dbsa(&p, &ring(5), &sched, &DbsaOptions::default(), &opts).unwrap();
    let dsgd = run_dsgd(&p, &ring(5), &sched, &DsgdOptions::default(), &opts).unwrap();
    // Round t spends t inner draws plus the outer ones.
    let expect = |t: u64, outer: u64| 5 * (t * (t - 1) / 2 + outer * t);
    for (a, b) in dbsa.iter().zip(&dsgd).skip(1) {
        assert_eq!(a.samples_total, expect(a.t, 3 + 3));
        assert_eq!(b.samples_total, expect(b.t, 3));
    }
    assert!(dbsa.last().unwrap().mse_to_opt < dbsa[0].mse_to_opt);
    assert!(dsgd.last().unwrap().mse_to_opt < dsgd[0].mse_to_opt);
}
