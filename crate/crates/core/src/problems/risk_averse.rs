//! Mean–upper-semideviation risk-averse least squares, written as a strictly
//! nested two-level problem.
//!
//! With utility `U_i(x) = −(b_i − xᵀw_i)²` the objective (negated for
//! minimization) is
//! `F(x) = −U(x) + κ · D(x)^{1/p} + (λ/2)‖x‖²`,
//! `U(x) = E[U_i(x)]`, `D(x) = E[(U(x) − U_i(x))₊^p]`.
//!
//! Levels carry earlier variables forward through unit quadratic terms:
//! * level 1 decides `(a, x̃)` with `g₁ = E ½(a − U_i(x))² + ½‖x̃ − x‖²`;
//! * level 2 decides `(v, a', x̂)` with
//!   `g₂ = E ½(v − (a − U_i(x̃))₊^p)² + ½(a' − a)² + ½‖x̂ − x̃‖²`;
//! * the outer level is `f(x, y₂) = −a' + κ·φ(v) + (λ/2)‖x‖²`,
//!   `φ(v) = max(v, floor)^{1/p}`.
//!
//! Every inner Hessian is the identity.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    round_robin_split, LevelSample, LevelSmoothness, MultiLevelProblem, Optimum, OuterSample, ProblemDims,
    ProblemError, SmoothnessMeta,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct RiskAverseConfig {
    pub feat_dim: usize,
    pub agents: usize,
    /// Risk aversion in [0, 1].
    pub kappa: f64,
    pub lambda: f64,
    /// Even order of the semideviation, at least 2.
    pub p: u32,
    pub n_data: usize,
    /// Variance of the label noise.
    pub noise_var: f64,
    /// Lower clamp on the deviation moment inside `φ`.
    pub moment_floor: f64,
    pub seed: u64,
}

impl Default for RiskAverseConfig {
    fn default() -> Self {
        RiskAverseConfig {
            feat_dim: 5,
            agents: 5,
            kappa: 0.5,
            lambda: 1.0,
            p: 2,
            n_data: 10_000,
            noise_var: 0.2,
            moment_floor: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RiskAverseProblem<T: Scalar> {
    dims: ProblemDims,
    meta: SmoothnessMeta<T>,
    kappa: T,
    lambda: T,
    p: i32,
    floor: T,
    /// `(features, label)` per agent.
    shards: Vec<Vec<(DVector<T>, T)>>,
    optimum: Optimum<T>,
}

impl<T: Scalar> RiskAverseProblem<T> {
    pub fn new(cfg: &RiskAverseConfig) -> Result<Self, ProblemError> {
        if !(0.0..=1.0).contains(&cfg.kappa) {
            return Err(ProblemError::InvalidParam(format!("kappa must lie in [0, 1], got {}", cfg.kappa)));
        }
        if !(cfg.lambda > 0.0) {
            return Err(ProblemError::InvalidParam(format!("lambda must be positive, got {}", cfg.lambda)));
        }
        if cfg.p < 2 || !cfg.p.is_multiple_of(2) {
            return Err(ProblemError::InvalidParam(format!("p must be an even integer >= 2, got {}", cfg.p)));
        }
        if !(cfg.moment_floor > 0.0) || cfg.noise_var < 0.0 {
            return Err(ProblemError::InvalidParam("moment_floor must be positive and noise_var nonnegative".into()));
        }
        let d = cfg.feat_dim;
        let dims = ProblemDims::new(vec![d, 1 + d, 2 + d], cfg.agents)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let truth: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let sd = cfg.noise_var.sqrt();
        let data: Vec<(DVector<T>, T)> = (0..cfg.n_data)
            .map(|_| {
                let w: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                let eps: f64 = StandardNormal.sample(&mut rng);
                let b = w.iter().zip(&truth).map(|(a, c)| a * c).sum::<f64>() + sd * eps;
                (DVector::from_iterator(d, w.into_iter().map(T::of)), T::of(b))
            })
            .collect();
        let split = round_robin_split(cfg.n_data, cfg.agents, cfg.seed.wrapping_add(1));
        if let Some(agent) = split.iter().position(Vec::is_empty) {
            return Err(ProblemError::EmptyShard { agent });
        }
        let shards = split.iter().map(|idx| idx.iter().map(|&i| data[i].clone()).collect()).collect();
        let identity = |_| LevelSmoothness::from_spectrum(T::one(), T::one());
        let meta = SmoothnessMeta { levels: (0..2).map(identity).collect(), c_f: T::of(f64::INFINITY), sigma_f: T::zero() };
        let mut problem = RiskAverseProblem {
            dims,
            meta,
            kappa: T::of(cfg.kappa),
            lambda: T::of(cfg.lambda),
            p: cfg.p as i32,
            floor: T::of(cfg.moment_floor),
            shards,
            optimum: Optimum { x: DVector::zeros(d), value: T::zero() },
        };
        problem.optimum = problem.solve_batch();
        Ok(problem)
    }

    pub fn kappa(&self) -> T {
        self.kappa
    }

    fn utility(w: &DVector<T>, b: T, x: &DVector<T>) -> T {
        let r = b - w.dot(x);
        -r * r
    }

    fn utility_grad(w: &DVector<T>, b: T, x: &DVector<T>) -> DVector<T> {
        w * (T::of(2.0) * (b - w.dot(x)))
    }

    /// Agent-averaged mean of `h` over each agent's shard.
    fn data_mean<V>(&self, zero: V, mut h: impl FnMut(&DVector<T>, T) -> V) -> V
    where
        V: std::ops::AddAssign + std::ops::Div<T, Output = V> + Clone,
    {
        let k = T::of_usize(self.shards.len());
        let mut acc = zero.clone();
        for shard in &self.shards {
            let mut s = zero.clone();
            for (w, b) in shard {
                s += h(w, *b);
            }
            acc += s / (T::of_usize(shard.len()) * k);
        }
        acc
    }

    pub fn mean_utility(&self, x: &DVector<T>) -> T {
        self.data_mean(T::zero(), |w, b| Self::utility(w, b, x))
    }

    /// `E[(a − U_i(x))₊^p]`.
    pub fn deviation_moment(&self, a: T, x: &DVector<T>) -> T {
        let p = self.p;
        self.data_mean(T::zero(), |w, b| (a - Self::utility(w, b, x)).max(T::zero()).powi(p))
    }

    fn phi(&self, v: T) -> T {
        v.max(self.floor).powf(T::one() / T::of(self.p as f64))
    }

    fn phi_prime(&self, v: T) -> T {
        if v > self.floor {
            let inv_p = T::one() / T::of(self.p as f64);
            inv_p * v.powf(inv_p - T::one())
        } else {
            T::zero()
        }
    }

    /// Full-batch objective evaluated directly.
    pub fn batch_objective(&self, x: &DVector<T>) -> T {
        let u = self.mean_utility(x);
        -u + self.kappa * self.phi(self.deviation_moment(u, x)) + T::of(0.5) * self.lambda * x.norm_squared()
    }

    /// Gradient of [`Self::batch_objective`] by direct differentiation.
    pub fn batch_gradient(&self, x: &DVector<T>) -> DVector<T> {
        let d = x.len();
        let u = self.mean_utility(x);
        let grad_u = self.data_mean(DVector::zeros(d), |w, b| Self::utility_grad(w, b, x));
        let dmom = self.deviation_moment(u, x);
        let p = self.p;
        let grad_d = self.data_mean(DVector::zeros(d), |w, b| {
            let e = (u - Self::utility(w, b, x)).max(T::zero());
            (&grad_u - Self::utility_grad(w, b, x)) * (T::of(p as f64) * e.powi(p - 1))
        });
        -grad_u + grad_d * (self.kappa * self.phi_prime(dmom)) + x * self.lambda
    }

    /// Gradient descent with Armijo backtracking on the full-batch objective.
    fn solve_batch(&self) -> Optimum<T> {
        let d = self.dims.dx();
        let mut x = DVector::zeros(d);
        let mut step = T::one();
        let mut fx = self.batch_objective(&x);
        for _ in 0..20_000 {
            let g = self.batch_gradient(&x);
            let gn = g.norm_squared();
            if gn <= T::of(1e-26) {
                break;
            }
            step *= T::of(2.0);
            loop {
                let cand = &x - &g * step;
                let fc = self.batch_objective(&cand);
                if fc <= fx - T::of(0.5) * step * gn || step < T::of(1e-14) {
                    x = cand;
                    fx = fc;
                    break;
                }
                step *= T::of(0.5);
            }
        }
        Optimum { value: fx, x }
    }

    fn split_first(&self, y: &DVector<T>) -> (T, DVector<T>) {
        (y[0], y.rows(1, y.len() - 1).into_owned())
    }

    fn level1_terms(&self, w: &DVector<T>, b: T, x: &DVector<T>, y: &DVector<T>) -> LevelSample<T> {
        let d = x.len();
        let (a, x_copy) = self.split_first(y);
        let mut grad = DVector::zeros(1 + d);
        grad[0] = a - Self::utility(w, b, x);
        grad.rows_mut(1, d).copy_from(&(x_copy - x));
        let mut cross = DMatrix::zeros(d, 1 + d);
        cross.column_mut(0).copy_from(&(-Self::utility_grad(w, b, x)));
        for i in 0..d {
            cross[(i, 1 + i)] = -T::one();
        }
        LevelSample { grad_y: grad, cross }
    }

    fn level2_terms(&self, w: &DVector<T>, b: T, y1: &DVector<T>, y2: &DVector<T>) -> LevelSample<T> {
        let d = y1.len() - 1;
        let (a, x_copy) = self.split_first(y1);
        let v = y2[0];
        let a_copy = y2[1];
        let x_hat = y2.rows(2, d);
        let e = (a - Self::utility(w, b, &x_copy)).max(T::zero());
        let p = T::of(self.p as f64);
        let slope = p * e.powi(self.p - 1);
        let mut grad = DVector::zeros(2 + d);
        grad[0] = v - e.powi(self.p);
        grad[1] = a_copy - a;
        grad.rows_mut(2, d).copy_from(&(x_hat - &x_copy));
        let mut cross = DMatrix::zeros(1 + d, 2 + d);
        cross[(0, 0)] = -slope;
        cross[(0, 1)] = -T::one();
        let gu = Self::utility_grad(w, b, &x_copy);
        for i in 0..d {
            cross[(1 + i, 0)] = slope * gu[i];
            cross[(1 + i, 2 + i)] = -T::one();
        }
        LevelSample { grad_y: grad, cross }
    }

    fn level_terms(&self, level: usize, w: &DVector<T>, b: T, y_prev: &DVector<T>, y: &DVector<T>) -> LevelSample<T> {
        match level {
            0 => self.level1_terms(w, b, y_prev, y),
            _ => self.level2_terms(w, b, y_prev, y),
        }
    }
}

impl<T: Scalar> MultiLevelProblem<T> for RiskAverseProblem<T> {
    fn tag(&self) -> &str {
        "risk_averse"
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
        level: usize,
        y_prev: &DVector<T>,
        y: &DVector<T>,
        rng: &mut dyn RngCore,
    ) -> LevelSample<T> {
        let shard = &self.shards[agent];
        let (w, b) = &shard[rng.random_range(0..shard.len())];
        self.level_terms(level, w, *b, y_prev, y)
    }

    fn sample_hessian(
        &self,
        _agent: usize,
        _level: usize,
        _y_prev: &DVector<T>,
        y: &DVector<T>,
        _rng: &mut dyn RngCore,
    ) -> DMatrix<T> {
        DMatrix::identity(y.len(), y.len())
    }

    fn exact_outer(&self, x: &DVector<T>, y: &DVector<T>) -> OuterSample<T> {
        let mut grad_y = DVector::zeros(y.len());
        grad_y[0] = self.kappa * self.phi_prime(y[0]);
        grad_y[1] = -T::one();
        OuterSample { grad_x: x * self.lambda, grad_y }
    }

    fn exact_level(&self, level: usize, y_prev: &DVector<T>, y: &DVector<T>) -> LevelSample<T> {
        let zero = LevelSample { grad_y: DVector::zeros(y.len()), cross: DMatrix::zeros(y_prev.len(), y.len()) };
        self.data_mean(zero, |w, b| self.level_terms(level, w, b, y_prev, y))
    }

    fn exact_hessian(&self, _level: usize, _y_prev: &DVector<T>, y: &DVector<T>) -> DMatrix<T> {
        DMatrix::identity(y.len(), y.len())
    }

    fn outer_value(&self, x: &DVector<T>, y: &DVector<T>) -> T {
        -y[1] + self.kappa * self.phi(y[0]) + T::of(0.5) * self.lambda * x.norm_squared()
    }

    fn best_response(&self, x: &DVector<T>) -> Result<Vec<DVector<T>>, ProblemError> {
        let d = x.len();
        let u = self.mean_utility(x);
        let mut y1 = DVector::zeros(1 + d);
        y1[0] = u;
        y1.rows_mut(1, d).copy_from(x);
        let mut y2 = DVector::zeros(2 + d);
        y2[0] = self.deviation_moment(u, x);
        y2[1] = u;
        y2.rows_mut(2, d).copy_from(x);
        Ok(vec![y1, y2])
    }

    fn optimum(&self) -> Option<&Optimum<T>> {
        Some(&self.optimum)
    }

    fn pl_constant(&self) -> Option<T> {
        Some(self.lambda)
    }
}

impl<T: Scalar> std::ops::AddAssign for LevelSample<T> {
    fn add_assign(&mut self, rhs: Self) {
        self.grad_y += rhs.grad_y;
        self.cross += rhs.cross;
    }
}

impl<T: Scalar> std::ops::Div<T> for LevelSample<T> {
    type Output = Self;
    fn div(self, rhs: T) -> Self {
        LevelSample { grad_y: self.grad_y / rhs, cross: self.cross / rhs }
    }
}
