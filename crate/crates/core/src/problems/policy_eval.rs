//! Regularized Bellman residual minimization for linear policy evaluation.
//!
//! For state `s` the inner target is
//! `target_s(x) = φ_sᵀx − E_{s'}[r(s,s') + γ φ_{s'}ᵀx]`, the inner level is
//! `g(x, y) = ½ Σ_s (target_s(x) − y_s)²` and the outer level is
//! `f(x, y) = ‖y‖² / (2|S|) + (λ/2)‖x‖²`. Agents differ only in their reward means.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    CompositionalProblem, LevelSample, LevelSmoothness, MultiLevelProblem, Optimum, OuterSample, ProblemDims,
    ProblemError, SmoothnessMeta,
};
use crate::linalg::{solve_spd, sym_eigenvalues};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvalConfig {
    pub num_states: usize,
    pub feat_dim: usize,
    /// Discount factor in [0, 1).
    pub gamma: f64,
    pub lambda: f64,
    pub agents: usize,
    pub seed: u64,
    /// Reward means are drawn from `Unif[0, reward_scale]`.
    pub reward_scale: f64,
    /// Standard deviation of rewards around their mean.
    pub reward_noise: f64,
}

impl Default for PolicyEvalConfig {
    fn default() -> Self {
        PolicyEvalConfig {
            num_states: 100,
            feat_dim: 5,
            gamma: 0.9,
            lambda: 1.0,
            agents: 5,
            seed: 0,
            reward_scale: 1.0,
            reward_noise: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolicyEvalProblem<T: Scalar> {
    dims: ProblemDims,
    meta: SmoothnessMeta<T>,
    gamma: T,
    lambda: T,
    reward_noise: f64,
    /// `|S| × d`, row `s` is `φ_sᵀ`.
    phi: DMatrix<T>,
    /// Cumulative transition rows for inverse-CDF sampling.
    cdf: Vec<Vec<f64>>,
    /// Per-agent reward means, `|S| × |S|`.
    reward_mean: Vec<DMatrix<f64>>,
    /// `Φ − γ P Φ`.
    bellman: DMatrix<T>,
    /// Agent-averaged expected one-step reward per state.
    expected_reward: DVector<T>,
    optimum: Optimum<T>,
    pl: T,
}

impl<T: Scalar> PolicyEvalProblem<T> {
    pub fn new(cfg: &PolicyEvalConfig) -> Result<Self, ProblemError> {
        if !(0.0..1.0).contains(&cfg.gamma) {
            return Err(ProblemError::InvalidParam(format!("gamma must lie in [0, 1), got {}", cfg.gamma)));
        }
        if !(cfg.lambda > 0.0) {
            return Err(ProblemError::InvalidParam(format!("lambda must be positive, got {}", cfg.lambda)));
        }
        if cfg.reward_scale < 0.0 || cfg.reward_noise < 0.0 {
            return Err(ProblemError::InvalidParam("reward scale and noise must be nonnegative".into()));
        }
        let n = cfg.num_states;
        let d = cfg.feat_dim;
        let dims = ProblemDims::new(vec![d, n], cfg.agents)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

        let phi = DMatrix::from_fn(n, d, |_, _| T::of(rng.random::<f64>()));
        let mut p = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random::<f64>());
        for mut row in p.row_iter_mut() {
            let s: f64 = row.sum();
            row /= s;
        }
        let reward_mean: Vec<DMatrix<f64>> = (0..cfg.agents)
            .map(|_| DMatrix::from_fn(n, n, |_, _| cfg.reward_scale * rng.random::<f64>()))
            .collect();

        let cdf = p
            .row_iter()
            .map(|row| {
                let mut acc = 0.0;
                let mut c: Vec<f64> = row.iter().map(|v| {
                    acc += v;
                    acc
                }).collect();
                *c.last_mut().expect("nonempty row") = 1.0;
                c
            })
            .collect();
        let p_t = p.map(T::of);
        let bellman = &phi - (&p_t * &phi) * T::of(cfg.gamma);
        let mean_r = reward_mean.iter().fold(DMatrix::<f64>::zeros(n, n), |a, r| a + r) / cfg.agents as f64;
        let expected_reward = DVector::from_fn(n, |s, _| T::of(p.row(s).dot(&mean_r.row(s))));

        let ns = T::of_usize(n);
        let lambda = T::of(cfg.lambda);
        let normal = bellman.transpose() * &bellman / ns + DMatrix::identity(d, d) * lambda;
        let rhs = bellman.transpose() * &expected_reward / ns;
        let x_star = solve_spd(&normal, &rhs).ok_or(ProblemError::NotStronglyConvex)?;
        let pl = sym_eigenvalues(&normal)[0];

        let mut level = LevelSmoothness::from_spectrum(T::one(), T::one());
        level.sigma_g = T::of(cfg.reward_noise * (n as f64).sqrt());
        let meta = SmoothnessMeta { levels: vec![level], c_f: T::of(f64::INFINITY), sigma_f: T::zero() };
        meta.validate()?;

        let mut problem = PolicyEvalProblem {
            dims,
            meta,
            gamma: T::of(cfg.gamma),
            lambda,
            reward_noise: cfg.reward_noise,
            phi,
            cdf,
            reward_mean,
            bellman,
            expected_reward,
            optimum: Optimum { x: x_star.clone(), value: T::zero() },
            pl,
        };
        problem.optimum.value = problem.closed_form_value(&x_star);
        Ok(problem)
    }

    pub fn num_states(&self) -> usize {
        self.phi.nrows()
    }

    /// `F(x) = ‖(Φ − γPΦ)x − r̄‖² / (2|S|) + (λ/2)‖x‖²`.
    pub fn closed_form_value(&self, x: &DVector<T>) -> T {
        let r = self.exact_target(x);
        r.norm_squared() / (T::of(2.0) * T::of_usize(self.num_states())) + T::of(0.5) * self.lambda * x.norm_squared()
    }

    pub fn closed_form_gradient(&self, x: &DVector<T>) -> DVector<T> {
        self.bellman.transpose() * self.exact_target(x) / T::of_usize(self.num_states()) + x * self.lambda
    }

    fn exact_target(&self, x: &DVector<T>) -> DVector<T> {
        &self.bellman * x - &self.expected_reward
    }

    /// One sampled transition per state: `(target sample, Jacobian column per state)`.
    fn sample_transitions(&self, agent: usize, x: &DVector<T>, rng: &mut dyn RngCore) -> (DVector<T>, DMatrix<T>) {
        let n = self.num_states();
        let d = x.len();
        let phi_x = &self.phi * x;
        let mut target = DVector::zeros(n);
        let mut jac = DMatrix::zeros(d, n);
        for s in 0..n {
            let u: f64 = rng.random();
            let next = self.cdf[s].partition_point(|&c| c < u).min(n - 1);
            let mut r = self.reward_mean[agent][(s, next)];
            if self.reward_noise > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                r += self.reward_noise * z;
            }
            target[s] = phi_x[s] - T::of(r) - self.gamma * phi_x[next];
            for i in 0..d {
                jac[(i, s)] = self.phi[(s, i)] - self.gamma * self.phi[(next, i)];
            }
        }
        (target, jac)
    }
}

impl<T: Scalar> MultiLevelProblem<T> for PolicyEvalProblem<T> {
    fn tag(&self) -> &str {
        "policy_eval"
    }

    fn dims(&self) -> &ProblemDims {
        &self.dims
    }

    fn meta(&self) -> &SmoothnessMeta<T> {
        &self.meta
    }

    fn sample_outer(&self, _agent: usize, x: &DVector<T>, y: &DVector<T>, _rng: &mut dyn RngCore) -> OuterSample<T> {
        self.exact_outer(x, y)
    }

    fn sample_level(
        &self,
        agent: usize,
        _level: usize,
        x: &DVector<T>,
        y: &DVector<T>,
        rng: &mut dyn RngCore,
    ) -> LevelSample<T> {
        let (target, jac) = self.sample_transitions(agent, x, rng);
        LevelSample { grad_y: y - target, cross: -jac }
    }

    fn sample_hessian(
        &self,
        _agent: usize,
        _level: usize,
        _x: &DVector<T>,
        y: &DVector<T>,
        _rng: &mut dyn RngCore,
    ) -> DMatrix<T> {
        DMatrix::identity(y.len(), y.len())
    }

    fn exact_outer(&self, x: &DVector<T>, y: &DVector<T>) -> OuterSample<T> {
        OuterSample { grad_x: x * self.lambda, grad_y: y / T::of_usize(self.num_states()) }
    }

    fn exact_level(&self, _level: usize, x: &DVector<T>, y: &DVector<T>) -> LevelSample<T> {
        LevelSample { grad_y: y - self.exact_target(x), cross: -self.bellman.transpose() }
    }

    fn exact_hessian(&self, _level: usize, _x: &DVector<T>, y: &DVector<T>) -> DMatrix<T> {
        DMatrix::identity(y.len(), y.len())
    }

    fn outer_value(&self, x: &DVector<T>, y: &DVector<T>) -> T {
        y.norm_squared() / (T::of(2.0) * T::of_usize(self.num_states())) + T::of(0.5) * self.lambda * x.norm_squared()
    }

    fn best_response(&self, x: &DVector<T>) -> Result<Vec<DVector<T>>, ProblemError> {
        Ok(vec![self.exact_target(x)])
    }

    fn optimum(&self) -> Option<&Optimum<T>> {
        Some(&self.optimum)
    }

    fn pl_constant(&self) -> Option<T> {
        Some(self.pl)
    }

    fn compositional(&self) -> Option<&dyn CompositionalProblem<T>> {
        Some(self)
    }
}

impl<T: Scalar> CompositionalProblem<T> for PolicyEvalProblem<T> {
    fn sample_inner_value(&self, agent: usize, x: &DVector<T>, rng: &mut dyn RngCore) -> DVector<T> {
        self.sample_transitions(agent, x, rng).0
    }

    fn sample_inner_jacobian(&self, agent: usize, x: &DVector<T>, rng: &mut dyn RngCore) -> DMatrix<T> {
        self.sample_transitions(agent, x, rng).1
    }

    fn exact_inner_value(&self, x: &DVector<T>) -> DVector<T> {
        self.exact_target(x)
    }
}
