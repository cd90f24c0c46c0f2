use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::neumann::apply_unchecked;
use super::schedule::{neumann_depth, StepSchedule, Steps};
use super::streams::{Slot, Streams};
use super::{AlgoError, RunOptions};
use crate::linalg::Mixable;
use crate::metrics::{Recorder, RunLabel, RunRecord};
use crate::network::GossipMatrix;
use crate::problems::{MultiLevelProblem, ProblemDims};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LevelState<T: Scalar> {
    pub y: DVector<T>,
    /// Tracks `∇₁₂²g_m`, shape `d_{m−1} × d_m`.
    pub u: DMatrix<T>,
    /// Tracks the `b_m` Hessian samples feeding the Neumann operator.
    pub v: Vec<DMatrix<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState<T: Scalar> {
    pub x: DVector<T>,
    /// Tracks `∇₁f`.
    pub s: DVector<T>,
    /// Tracks `∇₂f`.
    pub h: DVector<T>,
    pub levels: Vec<LevelState<T>>,
}

impl<T: Scalar> AgentState<T> {
    /// Zero iterates and trackers, Hessian trackers at `μ_g I`.
    pub fn new(dims: &ProblemDims, mu_g: &[T], depths: &[usize]) -> Self {
        let levels = (0..dims.num_levels())
            .map(|m| {
                let d = dims.level_dim(m);
                LevelState {
                    y: DVector::zeros(d),
                    u: DMatrix::zeros(dims.upstream_dim(m), d),
                    v: vec![DMatrix::identity(d, d) * mu_g[m]; depths[m]],
                }
            })
            .collect();
        let d_last = dims.level_dim(dims.num_levels() - 1);
        AgentState { x: DVector::zeros(dims.dx()), s: DVector::zeros(dims.dx()), h: DVector::zeros(d_last), levels }
    }

    /// Materialized `q_m = (1/L) Q_b` for this agent.
    pub fn q(&self, level: usize, l_g: T) -> DMatrix<T> {
        let lv = &self.levels[level];
        super::neumann_matrix(&lv.v, l_g, lv.y.len())
    }

    /// `s + (−1)^M u₁q₁ ⋯ u_M q_M h`, with `q ≡ 0` before the first update.
    fn direction(&self, l_g: &[T], q_ready: bool) -> DVector<T> {
        if !q_ready {
            return self.s.clone();
        }
        let mut w = self.h.clone();
        for (m, lv) in self.levels.iter().enumerate().rev() {
            w = &lv.u * apply_unchecked(&lv.v, l_g[m], &w);
        }
        if self.levels.len() % 2 == 1 {
            w.neg_mut();
        }
        w + &self.s
    }
}

/// Network state: one [`AgentState`] per agent plus the round counter.
#[derive(Debug, Clone, PartialEq)]
pub struct DsmoState<T: Scalar> {
    pub agents: Vec<AgentState<T>>,
    pub round: usize,
}

impl<T: Scalar> DsmoState<T> {
    pub fn new(dims: &ProblemDims, mu_g: &[T], depths: &[usize]) -> Self {
        DsmoState { agents: vec![AgentState::new(dims, mu_g, depths); dims.agents()], round: 0 }
    }

    pub fn x_bar(&self) -> DVector<T> {
        crate::linalg::mean_of(&self.agents.iter().map(|a| a.x.clone()).collect::<Vec<_>>())
    }
}

/// Per-run constants of the DSMO recursion.
#[derive(Debug, Clone)]
pub struct RoundContext<T: Scalar> {
    pub l_g: Vec<T>,
    pub depths: Vec<usize>,
    pub streams: Streams,
    pub independent_outer_draws: bool,
}

impl<T: Scalar> RoundContext<T> {
    pub fn samples_per_agent(&self) -> u64 {
        2 + self.depths.iter().map(|&b| 2 + b as u64).sum::<u64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput<T: Scalar> {
    /// `x̄_{t+1}`.
    pub x_bar: DVector<T>,
    /// `‖z_t^k‖` per agent.
    pub direction_norms: Vec<T>,
    /// Oracle queries consumed this round by all agents.
    pub samples: u64,
    /// `‖x̄_{t+1} − (x̄_t − α z̄_t)‖`; zero up to round-off for doubly
    /// stochastic mixing.
    pub average_residual: T,
}

fn mix<'a, T: Scalar, V: Mixable<T> + 'a>(row: &[(usize, T)], get: impl Fn(usize) -> &'a V) -> V {
    let mut acc = get(row[0].0).zeros_like();
    for &(j, wkj) in row {
        acc.add_scaled(wkj, get(j));
    }
    acc
}

/// `(1 − β) · mixed + β · sample`, in place on `mixed`.
fn track<T: Scalar, V: Mixable<T>>(mut mixed: V, beta: T, sample: &V) -> V {
    mixed.scale_mut(T::one() - beta);
    mixed.add_scaled(beta, sample);
    mixed
}

/// One synchronous DSMO round. Reads only `state` (time `t`) and returns the
/// time-`t+1` state.
pub fn dsmo_round<T: Scalar, P: MultiLevelProblem<T> + ?Sized>(
    state: &DsmoState<T>,
    problem: &P,
    w: &GossipMatrix<T>,
    steps: Steps,
    ctx: &RoundContext<T>,
) -> (DsmoState<T>, RoundOutput<T>) {
    let t = state.round;
    let (alpha, beta, gamma) = (T::of(steps.alpha), T::of(steps.beta), T::of(steps.gamma));
    let agents = &state.agents;
    let num_levels = ctx.depths.len();
    let q_ready = t > 0;

    let updated: Vec<(AgentState<T>, DVector<T>)> = (0..agents.len())
        .into_par_iter()
        .map(|k| {
            let me = &agents[k];
            let row = w.row(k);
            let y_last = &me.levels[num_levels - 1].y;
            let mut rng = ctx.streams.draw(k, t, Slot::Outer(0));
            let outer = problem.sample_outer(k, &me.x, y_last, &mut rng);
            let grad_y = if ctx.independent_outer_draws {
                let mut rng = ctx.streams.draw(k, t, Slot::Outer(1));
                problem.sample_outer(k, &me.x, y_last, &mut rng).grad_y
            } else {
                outer.grad_y
            };

            let z = me.direction(&ctx.l_g, q_ready);
            let mut x = mix(row, |j| &agents[j].x);
            x.axpy(-alpha, &z, T::one());
            let s = track(mix(row, |j| &agents[j].s), beta, &outer.grad_x);
            let h = track(mix(row, |j| &agents[j].h), beta, &grad_y);

            let levels = (0..num_levels)
                .map(|m| {
                    let lv = &me.levels[m];
                    let y_prev = if m == 0 { &me.x } else { &me.levels[m - 1].y };
                    let mut rng = ctx.streams.draw(k, t, Slot::Level { level: m as u32, index: 0 });
                    let sample = problem.sample_level(k, m, y_prev, &lv.y, &mut rng);
                    let mut y = mix(row, |j| &agents[j].levels[m].y);
                    y.axpy(-gamma, &sample.grad_y, T::one());
                    let u = track(mix(row, |j| &agents[j].levels[m].u), beta, &sample.cross);
                    let v = (0..lv.v.len())
                        .map(|i| {
                            let slot = Slot::Level { level: m as u32, index: 1 + i as u32 };
                            let mut rng = ctx.streams.draw(k, t, slot);
                            let hess = problem.sample_hessian(k, m, y_prev, &lv.y, &mut rng);
                            track(mix(row, |j| &agents[j].levels[m].v[i]), beta, &hess)
                        })
                        .collect();
                    LevelState { y, u, v }
                })
                .collect();
            (AgentState { x, s, h, levels }, z)
        })
        .collect();

    let x_bar_prev = state.x_bar();
    let (next, directions): (Vec<_>, Vec<_>) = updated.into_iter().unzip();
    let next = DsmoState { agents: next, round: t + 1 };
    let x_bar = next.x_bar();
    let z_bar = crate::linalg::mean_of(&directions);
    let average_residual = (&x_bar - (x_bar_prev - z_bar * alpha)).norm();
    let output = RoundOutput {
        x_bar,
        direction_norms: directions.iter().map(|z| z.norm()).collect(),
        samples: ctx.samples_per_agent() * agents.len() as u64,
        average_residual,
    };
    (next, output)
}

/// Tolerance for the gossip-average identity: `1e-10` in double precision,
/// scaled by machine epsilon otherwise.
pub(crate) fn average_tolerance<T: Scalar>() -> f64 {
    (1e3 * T::default_epsilon().as_f64()).max(1e-10)
}

pub(crate) fn check_network<T: Scalar>(dims: &ProblemDims, w: &GossipMatrix<T>) -> Result<(), AlgoError> {
    if w.num_agents() != dims.agents() {
        return Err(AlgoError::DimensionMismatch(format!(
            "gossip matrix has {} agents, problem has {}",
            w.num_agents(),
            dims.agents()
        )));
    }
    Ok(())
}

pub(crate) fn label<T: Scalar, P: MultiLevelProblem<T> + ?Sized>(
    problem: &P,
    w: &GossipMatrix<T>,
    algo: &str,
    opts: &RunOptions,
) -> RunLabel {
    RunLabel {
        run_id: opts.run_id.clone(),
        algo: algo.to_string(),
        problem: problem.tag().to_string(),
        k: w.num_agents(),
        rho: w.rho().as_f64(),
    }
}

/// Runs `T` DSMO rounds from the zero initialization and returns the
/// evaluated records (one at `t = 0`, then every `eval_every` rounds and at
/// `T`).
pub fn run_dsmo<T: Scalar, P: MultiLevelProblem<T> + ?Sized>(
    problem: &P,
    w: &GossipMatrix<T>,
    schedule: &StepSchedule,
    opts: &RunOptions,
) -> Result<Vec<RunRecord>, AlgoError> {
    let dims = problem.dims();
    check_network(dims, w)?;
    schedule.validate(dims.agents())?;
    let meta = problem.meta();
    let depths = meta
        .levels
        .iter()
        .map(|lv| neumann_depth(schedule.b_rule, lv.kappa_g.as_f64(), opts.horizon))
        .collect::<Result<Vec<_>, _>>()?;
    let ctx = RoundContext {
        l_g: meta.levels.iter().map(|lv| lv.l_g).collect(),
        depths,
        streams: Streams::new(opts.seed, dims.agents()),
        independent_outer_draws: opts.independent_outer_draws,
    };
    let mu: Vec<T> = meta.levels.iter().map(|lv| lv.mu_g).collect();
    let mut state = DsmoState::new(dims, &mu, &ctx.depths);
    let mut recorder = Recorder::new(problem, label(problem, w, "dsmo", opts), opts.record_wall_ms, Instant::now());
    let mut samples = 0u64;
    let snapshot = |state: &DsmoState<T>, recorder: &mut Recorder<'_, T, P>, samples: u64| {
        let xs: Vec<&DVector<T>> = state.agents.iter().map(|a| &a.x).collect();
        let ys: Vec<Vec<&DVector<T>>> =
            (0..ctx.depths.len()).map(|m| state.agents.iter().map(|a| &a.levels[m].y).collect()).collect();
        recorder.record(state.round, samples, &xs, &ys);
    };
    snapshot(&state, &mut recorder, samples);
    for t in 0..opts.horizon {
        let steps = schedule.at(t, dims.agents())?;
        let (next, out) = dsmo_round(&state, problem, w, steps, &ctx);
        debug_assert!(
            out.average_residual.as_f64() <= average_tolerance::<T>() * (1.0 + out.x_bar.norm().as_f64()),
            "gossip-average identity violated: {}",
            out.average_residual
        );
        state = next;
        samples += out.samples;
        if opts.due(t + 1) {
            snapshot(&state, &mut recorder, samples);
        }
    }
    Ok(recorder.finish())
}
