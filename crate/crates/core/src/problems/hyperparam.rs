//! Bilevel hyperparameter tuning with a sigmoid loss.
//!
//! Inner: `g^k(x, y) = mean_{j ∈ train_k} ℓ_j(y) + Σ_i (x_i/2) y_i² + (ρ₀/2)‖y‖²`.
//! Outer: `f^k(y) = mean_{i ∈ val_k} ℓ_i(y)`, with
//! `ℓ_j(y) = 1 / (1 + exp(z_j w_jᵀ y))` and `z_j ∈ {−1, +1}`.
//!
//! The sigmoid loss is not convex; `ρ₀` defaults to its curvature bound plus
//! a margin so the inner problem is strongly convex whenever `x ≥ 0`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use super::{
    round_robin_split, Dataset, LevelSample, LevelSmoothness, MultiLevelProblem, OuterSample, ProblemDims,
    ProblemError, SmoothnessMeta,
};
use crate::linalg::solve_spd;
use crate::scalar::Scalar;

/// `max_m |d²/dm² σ(−m)| = 1/(6√3)`.
const SIGMOID_CURVATURE: f64 = 0.096_225_044_864_937_6;

#[derive(Debug, Clone, PartialEq)]
pub struct HyperparamConfig {
    pub agents: usize,
    pub seed: u64,
    /// Extra ridge `ρ₀`; `None` picks the sigmoid curvature bound plus 0.1.
    pub base_ridge: Option<f64>,
    /// Upper end of the hyperparameter box used for the declared `L_g`.
    pub x_cap: f64,
}

impl Default for HyperparamConfig {
    fn default() -> Self {
        HyperparamConfig { agents: 5, seed: 0, base_ridge: None, x_cap: 10.0 }
    }
}

#[derive(Debug, Clone)]
struct Shard<T: Scalar> {
    features: Vec<DVector<T>>,
    signs: Vec<T>,
}

impl<T: Scalar> Shard<T> {
    fn from_dataset(data: &Dataset, idx: &[usize]) -> Self {
        Shard {
            features: idx.iter().map(|&i| DVector::from_iterator(data.n_features, data.features[i].iter().map(|&v| T::of(v)))).collect(),
            signs: idx.iter().map(|&i| if data.labels[i] == 1 { T::one() } else { -T::one() }).collect(),
        }
    }

    fn len(&self) -> usize {
        self.signs.len()
    }
}

fn sigmoid<T: Scalar>(u: T) -> T {
    T::one() / (T::one() + (-u).exp())
}

/// Loss, first and second derivative of `m ↦ σ(−m)`.
fn loss_terms<T: Scalar>(margin: T) -> (T, T, T) {
    let s = sigmoid(margin);
    let one = T::one();
    (one - s, -s * (one - s), -s * (one - s) * (one - s - s))
}

#[derive(Debug, Clone)]
pub struct HyperparamProblem<T: Scalar> {
    dims: ProblemDims,
    meta: SmoothnessMeta<T>,
    train: Vec<Shard<T>>,
    val: Vec<Shard<T>>,
    ridge: T,
}

impl<T: Scalar> HyperparamProblem<T> {
    pub fn new(train: &Dataset, val: &Dataset, cfg: &HyperparamConfig) -> Result<Self, ProblemError> {
        let k = cfg.agents;
        if train.n_features != val.n_features {
            return Err(ProblemError::DimensionMismatch(format!(
                "train has {} features, validation has {}",
                train.n_features, val.n_features
            )));
        }
        let d = train.n_features;
        let dims = ProblemDims::new(vec![d, d], k)?;
        let split = |data: &Dataset, seed: u64| -> Result<Vec<Shard<T>>, ProblemError> {
            let shards = round_robin_split(data.len(), k, seed);
            if let Some(agent) = shards.iter().position(Vec::is_empty) {
                return Err(ProblemError::EmptyShard { agent });
            }
            Ok(shards.iter().map(|idx| Shard::from_dataset(data, idx)).collect())
        };
        let train_shards = split(train, cfg.seed)?;
        let val_shards = split(val, cfg.seed.wrapping_add(1))?;
        let max_sq = train
            .features
            .iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        let curvature = SIGMOID_CURVATURE * max_sq;
        let ridge = cfg.base_ridge.unwrap_or(curvature + 0.1);
        if ridge <= curvature {
            return Err(ProblemError::InvalidParam(format!(
                "base_ridge {ridge} must exceed the loss curvature bound {curvature}"
            )));
        }
        let mut lv = LevelSmoothness::from_spectrum(T::of(ridge - curvature), T::of(ridge + cfg.x_cap + curvature));
        lv.c_g = T::of(f64::INFINITY);
        let meta = SmoothnessMeta { levels: vec![lv], c_f: T::of(max_sq.sqrt() * 0.25), sigma_f: T::of(max_sq.sqrt() * 0.25) };
        meta.validate()?;
        Ok(HyperparamProblem { dims, meta, train: train_shards, val: val_shards, ridge: T::of(ridge) })
    }

    pub fn ridge(&self) -> T {
        self.ridge
    }

    pub fn train_shard_sizes(&self) -> Vec<usize> {
        self.train.iter().map(Shard::len).collect()
    }

    /// Agent-averaged mean training loss (without the regularizer).
    pub fn train_loss(&self, y: &DVector<T>) -> T {
        mean_loss(&self.train, y)
    }

    /// Agent-averaged mean validation loss.
    pub fn validation_loss(&self, y: &DVector<T>) -> T {
        mean_loss(&self.val, y)
    }

    fn diag_reg(&self, x: &DVector<T>) -> DVector<T> {
        x.map(|xi| xi + self.ridge)
    }

    fn point_grad(&self, shard: &Shard<T>, j: usize, y: &DVector<T>) -> DVector<T> {
        let w = &shard.features[j];
        let z = shard.signs[j];
        let (_, d1, _) = loss_terms(z * w.dot(y));
        w * (d1 * z)
    }

    fn point_hessian(&self, shard: &Shard<T>, j: usize, y: &DVector<T>) -> DMatrix<T> {
        let w = &shard.features[j];
        let (_, _, d2) = loss_terms(shard.signs[j] * w.dot(y));
        w * w.transpose() * d2
    }

    fn inner_grad(&self, x: &DVector<T>, y: &DVector<T>) -> DVector<T> {
        let mut g = self.diag_reg(x).component_mul(y);
        let k = T::of_usize(self.train.len());
        for shard in &self.train {
            let n = T::of_usize(shard.len());
            for j in 0..shard.len() {
                g += self.point_grad(shard, j, y) / (n * k);
            }
        }
        g
    }

    fn inner_hessian(&self, x: &DVector<T>, y: &DVector<T>) -> DMatrix<T> {
        let mut h = DMatrix::from_diagonal(&self.diag_reg(x));
        let k = T::of_usize(self.train.len());
        for shard in &self.train {
            let n = T::of_usize(shard.len());
            for j in 0..shard.len() {
                h += self.point_hessian(shard, j, y) / (n * k);
            }
        }
        h
    }
}

fn mean_loss<T: Scalar>(shards: &[Shard<T>], y: &DVector<T>) -> T {
    let k = T::of_usize(shards.len());
    shards.iter().fold(T::zero(), |acc, s| {
        let n = T::of_usize(s.len());
        let sum = (0..s.len()).fold(T::zero(), |a, j| a + loss_terms(s.signs[j] * s.features[j].dot(y)).0);
        acc + sum / (n * k)
    })
}

impl<T: Scalar> MultiLevelProblem<T> for HyperparamProblem<T> {
    fn tag(&self) -> &str {
        "hyperparam"
    }

    fn dims(&self) -> &ProblemDims {
        &self.dims
    }

    fn meta(&self) -> &SmoothnessMeta<T> {
        &self.meta
    }

    fn sample_outer(&self, agent: usize, x: &DVector<T>, y: &DVector<T>, rng: &mut dyn RngCore) -> OuterSample<T> {
        let shard = &self.val[agent];
        let i = rng.random_range(0..shard.len());
        OuterSample { grad_x: DVector::zeros(x.len()), grad_y: self.point_grad(shard, i, y) }
    }

    fn sample_level(
        &self,
        agent: usize,
        _level: usize,
        x: &DVector<T>,
        y: &DVector<T>,
        rng: &mut dyn RngCore,
    ) -> LevelSample<T> {
        let shard = &self.train[agent];
        let j = rng.random_range(0..shard.len());
        LevelSample {
            grad_y: self.point_grad(shard, j, y) + self.diag_reg(x).component_mul(y),
            cross: DMatrix::from_diagonal(y),
        }
    }

    fn sample_hessian(
        &self,
        agent: usize,
        _level: usize,
        x: &DVector<T>,
        y: &DVector<T>,
        rng: &mut dyn RngCore,
    ) -> DMatrix<T> {
        let shard = &self.train[agent];
        let j = rng.random_range(0..shard.len());
        self.point_hessian(shard, j, y) + DMatrix::from_diagonal(&self.diag_reg(x))
    }

    fn exact_outer(&self, x: &DVector<T>, y: &DVector<T>) -> OuterSample<T> {
        let k = T::of_usize(self.val.len());
        let mut g = DVector::zeros(y.len());
        for shard in &self.val {
            let n = T::of_usize(shard.len());
            for i in 0..shard.len() {
                g += self.point_grad(shard, i, y) / (n * k);
            }
        }
        OuterSample { grad_x: DVector::zeros(x.len()), grad_y: g }
    }

    fn exact_level(&self, _level: usize, x: &DVector<T>, y: &DVector<T>) -> LevelSample<T> {
        LevelSample { grad_y: self.inner_grad(x, y), cross: DMatrix::from_diagonal(y) }
    }

    fn exact_hessian(&self, _level: usize, x: &DVector<T>, y: &DVector<T>) -> DMatrix<T> {
        self.inner_hessian(x, y)
    }

    fn outer_value(&self, _x: &DVector<T>, y: &DVector<T>) -> T {
        self.validation_loss(y)
    }

    /// Damped Newton on the agent-averaged inner objective. A full step is
    /// taken whenever it shrinks the gradient, which keeps the final digits
    /// converging once objective differences drown in rounding.
    fn best_response(&self, x: &DVector<T>) -> Result<Vec<DVector<T>>, ProblemError> {
        let mut y = DVector::zeros(x.len());
        let inner_value = |y: &DVector<T>| {
            self.train_loss(y) + T::of(0.5) * self.diag_reg(x).component_mul(y).dot(y)
        };
        let mut g = self.inner_grad(x, &y);
        for _ in 0..100 {
            if g.norm() == T::zero() {
                break;
            }
            let h = self.inner_hessian(x, &y);
            if h.clone().cholesky().is_none() {
                return Err(ProblemError::NotStronglyConvex);
            }
            let step = solve_spd(&h, &g).ok_or(ProblemError::NotStronglyConvex)?;
            let full = &y - &step;
            let g_full = self.inner_grad(x, &full);
            if g_full.norm() < g.norm() {
                y = full;
                g = g_full;
                continue;
            }
            let f0 = inner_value(&y);
            let mut t = T::of(0.5);
            let mut moved = false;
            while t >= T::of(1e-12) {
                let cand = &y - &step * t;
                if inner_value(&cand) < f0 - T::of(1e-4) * t * g.dot(&step) {
                    y = cand;
                    moved = true;
                    break;
                }
                t *= T::of(0.5);
            }
            if !moved {
                break;
            }
            g = self.inner_grad(x, &y);
        }
        Ok(vec![y])
    }
}
