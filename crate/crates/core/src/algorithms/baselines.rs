use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use super::dsmo::{check_network, label};
use super::neumann::apply_unchecked;
use super::schedule::{neumann_depth, StepSchedule};
use super::streams::{Slot, Streams};
use super::{AlgoError, RunOptions};
use crate::metrics::{Recorder, RunRecord};
use crate::network::GossipMatrix;
use crate::problems::MultiLevelProblem;
use crate::scalar::Scalar;

/// Options of the double-loop bilevel baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbsaOptions {
    /// Inner step `η_{t,i} = min(c / (μ_g (i + 1)), 1 / L_g)`.
    pub inner_scale: f64,
}

impl Default for DbsaOptions {
    fn default() -> Self {
        DbsaOptions { inner_scale: 1.0 }
    }
}

/// Averaging weights of the compositional baseline's inner loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerWeights {
    /// `η_{t,i} = 1 / (i + 1)`: running mean of the inner samples.
    Harmonic,
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsgdOptions {
    pub weights: InnerWeights,
}

impl Default for DsgdOptions {
    fn default() -> Self {
        DsgdOptions { weights: InnerWeights::Harmonic }
    }
}

impl InnerWeights {
    fn at(self, i: usize) -> f64 {
        match self {
            InnerWeights::Harmonic => 1.0 / (i as f64 + 1.0),
            InnerWeights::Constant(eta) => eta,
        }
    }
}

fn mix_vectors<T: Scalar>(w: &GossipMatrix<T>, values: &[DVector<T>], k: usize) -> DVector<T> {
    w.mix_at(values, k)
}

fn record_state<T: Scalar, P: MultiLevelProblem<T> + ?Sized>(
    recorder: &mut Recorder<'_, T, P>,
    t: usize,
    samples: u64,
    xs: &[DVector<T>],
    ys: &[DVector<T>],
) {
    let xr: Vec<&DVector<T>> = xs.iter().collect();
    let yr: Vec<Vec<&DVector<T>>> = vec![ys.iter().collect()];
    recorder.record(t, samples, &xr, &yr);
}

/// Double-loop decentralized bilevel stochastic approximation.
///
/// Round `t` restarts the inner variable at zero and runs `t` gossip-SGD steps
/// on the inner level at the current `x_t^k`; the outer step then follows a
/// stochastic hypergradient estimate built from one outer draw, one cross
/// derivative draw and `b` Hessian draws at `(x_t^k, ỹ_{t,t}^k)`.
pub fn run_dbsa<T: Scalar, P: MultiLevelProblem<T> + ?Sized>(
    problem: &P,
    w: &GossipMatrix<T>,
    schedule: &StepSchedule,
    inner: &DbsaOptions,
    opts: &RunOptions,
) -> Result<Vec<RunRecord>, AlgoError> {
    let dims = problem.dims();
    if dims.num_levels() != 1 {
        return Err(AlgoError::NotBilevel { levels: dims.num_levels() });
    }
    check_network(dims, w)?;
    schedule.validate(dims.agents())?;
    if !(inner.inner_scale > 0.0) {
        return Err(AlgoError::InvalidParam(format!("inner step scale must be positive, got {}", inner.inner_scale)));
    }
    let lv = problem.meta().levels[0];
    let depth = neumann_depth(schedule.b_rule, lv.kappa_g.as_f64(), opts.horizon)?;
    let (mu_g, l_g) = (lv.mu_g.as_f64(), lv.l_g.as_f64());
    let k_agents = dims.agents();
    let streams = Streams::new(opts.seed, k_agents);
    let mut xs = vec![DVector::<T>::zeros(dims.dx()); k_agents];
    let mut ys = vec![DVector::<T>::zeros(dims.level_dim(0)); k_agents];
    let mut recorder = Recorder::new(problem, label(problem, w, "dbsa", opts), opts.record_wall_ms, Instant::now());
    let mut samples = 0u64;
    record_state(&mut recorder, 0, samples, &xs, &ys);

    for t in 0..opts.horizon {
        let alpha = T::of(schedule.at(t, k_agents)?.alpha);
        let mut y_inner = vec![DVector::<T>::zeros(dims.level_dim(0)); k_agents];
        for i in 0..t {
            let eta = T::of((inner.inner_scale / (mu_g * (i as f64 + 1.0))).min(1.0 / l_g));
            y_inner = (0..k_agents)
                .into_par_iter()
                .map(|k| {
                    let mut rng = streams.draw(k, t, Slot::Inner(i as u32));
                    let g = problem.sample_level(k, 0, &xs[k], &y_inner[k], &mut rng).grad_y;
                    let mut y = mix_vectors(w, &y_inner, k);
                    y.axpy(-eta, &g, T::one());
                    y
                })
                .collect();
        }
        xs = (0..k_agents)
            .into_par_iter()
            .map(|k| {
                let y = &y_inner[k];
                let mut rng = streams.draw(k, t, Slot::Outer(0));
                let outer = problem.sample_outer(k, &xs[k], y, &mut rng);
                let mut rng = streams.draw(k, t, Slot::Level { level: 0, index: 0 });
                let cross = problem.sample_level(k, 0, &xs[k], y, &mut rng).cross;
                let hess: Vec<_> = (0..depth)
                    .map(|i| {
                        let mut rng = streams.draw(k, t, Slot::Level { level: 0, index: 1 + i as u32 });
                        problem.sample_hessian(k, 0, &xs[k], y, &mut rng)
                    })
                    .collect();
                let correction = cross * apply_unchecked(&hess, lv.l_g, &outer.grad_y);
                let mut x = mix_vectors(w, &xs, k);
                x.axpy(-alpha, &(outer.grad_x - correction), T::one());
                x
            })
            .collect();
        ys = y_inner;
        samples += k_agents as u64 * (t as u64 + 3 + depth as u64);
        if opts.due(t + 1) {
            record_state(&mut recorder, t + 1, samples, &xs, &ys);
        }
    }
    Ok(recorder.finish())
}

/// Double-loop decentralized compositional SGD.
///
/// Round `t` rebuilds an estimate of the inner value map at `x_t^k` by `t`
/// gossip-averaging steps `ỹ ← (1 − η)·mix(ỹ) + η·sample`, then takes the
/// chain-rule step `x ← mix(x) − α (∇₁f + J ∇₂f)` with a sampled Jacobian `J`.
pub fn run_dsgd<T: Scalar, P: MultiLevelProblem<T> + ?Sized>(
    problem: &P,
    w: &GossipMatrix<T>,
    schedule: &StepSchedule,
    inner: &DsgdOptions,
    opts: &RunOptions,
) -> Result<Vec<RunRecord>, AlgoError> {
    let dims = problem.dims();
    let comp = problem.compositional().ok_or_else(|| AlgoError::NotCompositional(problem.tag().to_string()))?;
    if dims.num_levels() != 1 {
        return Err(AlgoError::NotBilevel { levels: dims.num_levels() });
    }
    check_network(dims, w)?;
    schedule.validate(dims.agents())?;
    if let InnerWeights::Constant(eta) = inner.weights {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(AlgoError::InvalidParam(format!("inner weight must lie in (0, 1], got {eta}")));
        }
    }
    let k_agents = dims.agents();
    let streams = Streams::new(opts.seed, k_agents);
    let mut xs = vec![DVector::<T>::zeros(dims.dx()); k_agents];
    let mut ys = vec![DVector::<T>::zeros(dims.level_dim(0)); k_agents];
    let mut recorder = Recorder::new(problem, label(problem, w, "dsgd", opts), opts.record_wall_ms, Instant::now());
    let mut samples = 0u64;
    record_state(&mut recorder, 0, samples, &xs, &ys);

    for t in 0..opts.horizon {
        let alpha = T::of(schedule.at(t, k_agents)?.alpha);
        let mut y_inner = vec![DVector::<T>::zeros(dims.level_dim(0)); k_agents];
        for i in 0..t {
            let eta = T::of(inner.weights.at(i));
            y_inner = (0..k_agents)
                .into_par_iter()
                .map(|k| {
                    let mut rng = streams.draw(k, t, Slot::Inner(i as u32));
                    let value = comp.sample_inner_value(k, &xs[k], &mut rng);
                    let mut y = mix_vectors(w, &y_inner, k) * (T::one() - eta);
                    y.axpy(eta, &value, T::one());
                    y
                })
                .collect();
        }
        xs = (0..k_agents)
            .into_par_iter()
            .map(|k| {
                let y = &y_inner[k];
                let mut rng = streams.draw(k, t, Slot::Level { level: 0, index: 0 });
                let jac = comp.sample_inner_jacobian(k, &xs[k], &mut rng);
                let mut rng = streams.draw(k, t, Slot::Outer(0));
                let outer = problem.sample_outer(k, &xs[k], y, &mut rng);
                let mut x = mix_vectors(w, &xs, k);
                x.axpy(-alpha, &(outer.grad_x + jac * outer.grad_y), T::one());
                x
            })
            .collect();
        ys = y_inner;
        samples += k_agents as u64 * (t as u64 + 3);
        if opts.due(t + 1) {
            record_state(&mut recorder, t + 1, samples, &xs, &ys);
        }
    }
    Ok(recorder.finish())
}
